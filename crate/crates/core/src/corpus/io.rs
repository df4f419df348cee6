//! Plain-text file formats.
//!
//! * dictionary: `term<TAB>slot_type` per line
//! * type map: `slot_type<TAB>ne_type` per line
//! * corpus: `token<TAB>slot<TAB>ne<TAB>seg` per token, a blank line after
//!   each utterance; `_` in the ne column when a corpus has no entity labels
//!
//! Blank lines and lines starting with `#` are skipped in dictionary and
//! type map files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{DictEntry, Dictionary, LabeledExample, Tokenization};
use crate::error::{Error, Result};

pub const ABSENT: &str = "_";

fn format_err(file: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn two_columns<'a>(file: &str, no: usize, line: &'a str) -> Result<(&'a str, &'a str)> {
    let cols: Vec<&str> = line.split('\t').collect();
    match cols.as_slice() {
        [a, b] if !a.trim().is_empty() && !b.trim().is_empty() => Ok((a.trim(), b.trim())),
        [_, _] => Err(format_err(file, no, "empty column")),
        _ => Err(format_err(
            file,
            no,
            format!("expected 2 tab-separated columns, found {}", cols.len()),
        )),
    }
}

pub fn parse_dictionary(
    text: &str,
    file: &str,
    tokenization: Tokenization,
) -> Result<Vec<DictEntry>> {
    data_lines(text)
        .map(|(no, line)| {
            let (term, slot) = two_columns(file, no, line)?;
            Ok(DictEntry::new(tokenization.tokenize(term), slot))
        })
        .collect()
}

pub fn parse_type_map(text: &str, file: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, line) in data_lines(text) {
        let (slot, ne) = two_columns(file, no, line)?;
        if let Some(prev) = map.insert(slot.to_string(), ne.to_string()) {
            if prev != ne {
                return Err(format_err(
                    file,
                    no,
                    format!("`{slot}` already mapped to `{prev}`"),
                ));
            }
        }
    }
    Ok(map)
}

pub fn format_dictionary(dict: &Dictionary, tokenization: Tokenization) -> String {
    dict.entries()
        .iter()
        .map(|e| format!("{}\t{}\n", tokenization.join(&e.term), e.slot_type))
        .collect()
}

pub fn format_type_map(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(s, n)| format!("{s}\t{n}\n")).collect()
}

pub fn load_dictionary(
    dictionary: &Path,
    type_map: &Path,
    tokenization: Tokenization,
) -> Result<Dictionary> {
    let entries = parse_dictionary(
        &read(dictionary)?,
        &dictionary.display().to_string(),
        tokenization,
    )?;
    let map = parse_type_map(&read(type_map)?, &type_map.display().to_string())?;
    Dictionary::new(entries, map)
}

pub fn write_dictionary(path: &Path, dict: &Dictionary, tokenization: Tokenization) -> Result<()> {
    write(path, &format_dictionary(dict, tokenization))
}

pub fn write_type_map(path: &Path, map: &BTreeMap<String, String>) -> Result<()> {
    write(path, &format_type_map(map))
}

pub fn parse_corpus(text: &str, file: &str) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    let mut rows: Vec<[String; 4]> = Vec::new();
    let mut first_line = 1;
    let lines = text.lines().map(|l| l.trim_end_matches('\r'));
    for (i, line) in lines.chain(std::iter::once("")).enumerate() {
        let no = i + 1;
        if line.trim().is_empty() {
            if !rows.is_empty() {
                out.push(example_from_rows(
                    std::mem::take(&mut rows),
                    file,
                    first_line,
                )?);
            }
            first_line = no + 1;
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(format_err(
                file,
                no,
                format!(
                    "expected 4 tab-separated columns (token, slot, ne, seg), found {}",
                    cols.len()
                ),
            ));
        }
        if cols.iter().any(|c| c.is_empty()) {
            return Err(format_err(file, no, "empty column"));
        }
        rows.push([cols[0], cols[1], cols[2], cols[3]].map(String::from));
    }
    Ok(out)
}

fn example_from_rows(
    rows: Vec<[String; 4]>,
    file: &str,
    first_line: usize,
) -> Result<LabeledExample> {
    let absent = rows.iter().filter(|r| r[2] == ABSENT).count();
    if absent != 0 && absent != rows.len() {
        return Err(format_err(
            file,
            first_line,
            "ne column mixes labels and `_` within one utterance",
        ));
    }
    let mut tokens = Vec::with_capacity(rows.len());
    let mut slot = Vec::with_capacity(rows.len());
    let mut ne = Vec::with_capacity(rows.len());
    let mut seg = Vec::with_capacity(rows.len());
    for [t, s, n, g] in rows {
        tokens.push(t);
        slot.push(s);
        ne.push(n);
        seg.push(g);
    }
    let ne = (absent == 0).then_some(ne);
    LabeledExample::new(tokens, slot, ne, seg)
        .map_err(|e| format_err(file, first_line, e.to_string()))
}

pub fn format_corpus(examples: &[LabeledExample]) -> String {
    let mut out = String::new();
    for e in examples {
        for i in 0..e.len() {
            let ne = e.ne.as_ref().map_or(ABSENT, |v| v[i].as_str());
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.tokens[i], e.slot[i], ne, e.seg[i]
            ));
        }
        out.push('\n');
    }
    out
}

pub fn read_corpus(path: &Path) -> Result<Vec<LabeledExample>> {
    parse_corpus(&read(path)?, &path.display().to_string())
}

pub fn write_corpus(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    write(path, &format_corpus(examples))
}
