use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// One of the three labeling tasks. The derived order (seg < ne < slot) is
/// the order in which tasks are stacked in the hierarchical topologies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskId {
    Seg,
    Ne,
    Slot,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::Seg, TaskId::Ne, TaskId::Slot];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Seg => "seg",
            TaskId::Ne => "ne",
            TaskId::Slot => "slot",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "seg" => Ok(TaskId::Seg),
            "ne" => Ok(TaskId::Ne),
            "slot" => Ok(TaskId::Slot),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}
