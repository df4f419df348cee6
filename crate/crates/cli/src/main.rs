//! `dcmtl`: generate distantly supervised corpora, train taggers, evaluate
//! and tag text.

mod config;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dcmtl_core::corpus::io::{
    load_dictionary, read_corpus, write_corpus, write_dictionary, write_type_map, ABSENT,
};
use dcmtl_core::corpus::synth::{
    default_templates, generate, generate_splits, oov_stats, parse_templates, route_utterances,
    synthetic_dictionary, GenerationStats,
};
use dcmtl_core::corpus::{
    annotate, split_dictionary, Dictionary, LabeledExample, Rejection, Tokenization,
};
use dcmtl_core::model::{
    CascadeTopology, Predictor, TaggingModel, Topology, TraceRecord, TrainObserver, TrainedModel,
};
use dcmtl_core::TaskId;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "dcmtl",
    version,
    about = "Slot filling with deep cascade multi-task sequence taggers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build train/test corpora from a term dictionary.
    GenData(GenDataArgs),
    /// Train a tagger on a corpus file.
    Train(TrainArgs),
    /// Score a trained model on a labeled corpus.
    Eval(EvalArgs),
    /// Tag utterances, one per line, from standard input.
    Tag(TagArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Dictionary file: `term<TAB>slot_type` per line.
    #[arg(long, requires = "type_map")]
    dictionary: Option<PathBuf>,
    /// Type map file: `slot_type<TAB>ne_type` per line.
    #[arg(long)]
    type_map: Option<PathBuf>,
    /// Generate a built-in e-commerce dictionary with this many terms per
    /// slot type (at most 10) instead of reading one.
    #[arg(long, conflicts_with = "dictionary")]
    synthetic_terms: Option<usize>,
    /// Template file, one template per line with `{SlotType}` placeholders.
    /// Built-in templates are used when neither this nor --utterances is given.
    #[arg(long, conflicts_with = "utterances")]
    templates: Option<PathBuf>,
    /// Raw utterances, one per line, annotated by dictionary matching.
    #[arg(long)]
    utterances: Option<PathBuf>,
    /// Use the whole dictionary for every output instead of a three-way split.
    #[arg(long)]
    no_split: bool,
    #[arg(long, default_value = "char")]
    tokenization: Tokenization,
    /// Training utterances to generate (template mode).
    #[arg(long, default_value_t = 2000)]
    train_size: usize,
    /// Utterances per test corpus (template mode).
    #[arg(long, default_value_t = 300)]
    test_size: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training corpus (4-column CoNLL).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Development corpus scored after every epoch.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Where to write the trained model.
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Where to write the per-step loss trace (JSON lines).
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// How `tag` splits raw input into tokens [default: char].
    #[arg(long)]
    tokenization: Option<Tokenization>,
    /// basic | vanilla | hierarchy | dcmtl [default: dcmtl].
    #[arg(long)]
    topology: Option<Topology>,
    /// SLOT+SEG | SLOT+NE | SLOT+NE+SEG [default: SLOT+NE+SEG].
    #[arg(long)]
    cascade_topology: Option<CascadeTopology>,
    /// Disable cascade connections (dcmtl).
    #[arg(long)]
    no_cascade: bool,
    /// Disable residual connections (dcmtl).
    #[arg(long)]
    no_residual: bool,
    /// Train seg and slot only on a 2-layer stack, for corpora without
    /// entity labels.
    #[arg(long)]
    without_ne: bool,
    /// BiLSTM layers [default: 3].
    #[arg(long)]
    layers: Option<usize>,
    /// LSTM hidden size per direction [default: 100].
    #[arg(long)]
    hidden: Option<usize>,
    /// Embedding size [default: 200].
    #[arg(long)]
    emb_dim: Option<usize>,
    /// Sentences per batch [default: 32].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training epochs [default: 10].
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    lr: Option<f64>,
    /// Global gradient-norm clip [default: 5].
    #[arg(long)]
    clip: Option<f64>,
    /// Vanilla seg loss weight [default: 1/3].
    #[arg(long)]
    alpha: Option<f64>,
    /// Vanilla ne loss weight [default: 1/3].
    #[arg(long)]
    beta: Option<f64>,
    /// Random seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Labeled corpus (4-column CoNLL).
    #[arg(long)]
    corpus: PathBuf,
    /// Also write the reports as JSON lines, one per task.
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct TagArgs {
    #[arg(long)]
    model: PathBuf,
    /// Read utterances from this file instead of standard input.
    #[arg(long)]
    input: Option<PathBuf>,
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Tag(a) => tag(a),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn describe(name: &str, s: &GenerationStats) {
    println!(
        "{name}: {} of {} utterances ({} attempts, {} ambiguous, {} relabeled, {} excluded as seen)",
        s.generated, s.requested, s.attempts, s.ambiguous, s.relabeled, s.excluded
    );
    if s.generated < s.requested {
        eprintln!("warning: {name} is short of the requested size; the dictionary part may lack terms for every template");
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    eprintln!("seed: {}", a.seed);
    let dict = match (&a.dictionary, &a.type_map, a.synthetic_terms) {
        (Some(d), Some(m), _) => load_dictionary(d, m, a.tokenization)?,
        (None, _, Some(n)) => synthetic_dictionary(n, a.seed)?,
        _ => bail!("give --dictionary with --type-map, or --synthetic-terms"),
    };
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    write_dictionary(&a.out_dir.join("dictionary.tsv"), &dict, a.tokenization)?;
    write_type_map(&a.out_dir.join("type_map.tsv"), dict.type_map())?;
    let mut stats = serde_json::Map::new();
    stats.insert("seed".into(), json!(a.seed));
    stats.insert("dictionary_entries".into(), json!(dict.len()));

    let parts = if a.no_split {
        None
    } else {
        let parts = split_dictionary(&dict, a.seed)?;
        for (i, p) in parts.iter().enumerate() {
            write_dictionary(
                &a.out_dir.join(format!("dict_part{}.tsv", i + 1)),
                p,
                a.tokenization,
            )?;
        }
        let sizes: Vec<usize> = parts.iter().map(Dictionary::len).collect();
        println!(
            "dictionary: {} entries, split {}/{}/{} (parts 1+2 train, part 3 held out)",
            dict.len(),
            sizes[0],
            sizes[1],
            sizes[2]
        );
        stats.insert("split".into(), json!(sizes));
        Some(parts)
    };

    let mut outputs: Vec<(&str, Vec<LabeledExample>)> = Vec::new();
    if let Some(path) = &a.utterances {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let utts: Vec<Vec<String>> = text
            .lines()
            .map(|l| a.tokenization.tokenize(l))
            .filter(|t| !t.is_empty())
            .collect();
        match &parts {
            Some(parts) => {
                let known = dict.subset([parts[0].entries(), parts[1].entries()].concat())?;
                let (train, test, s) = route_utterances(&utts, &dict, &known, &parts[2]);
                println!(
                    "utterances: {} read, {} train, {} held-out test, {} mixed, {} ambiguous, {} unmatched",
                    s.utterances, s.train, s.test, s.mixed, s.ambiguous, s.no_content
                );
                stats.insert("routing".into(), serde_json::to_value(&s)?);
                outputs.push(("train", train));
                outputs.push(("test_oov", test));
            }
            None => {
                let (mut accepted, mut ambiguous, mut unmatched) = (Vec::new(), 0, 0);
                for u in &utts {
                    match annotate(u, &dict) {
                        Ok(ex) => accepted.push(ex),
                        Err(Rejection::Ambiguous { .. }) => ambiguous += 1,
                        Err(Rejection::NoContent) => unmatched += 1,
                    }
                }
                println!(
                    "utterances: {} read, {} accepted, {ambiguous} ambiguous, {unmatched} unmatched",
                    utts.len(),
                    accepted.len()
                );
                stats.insert(
                    "annotation".into(),
                    json!({"utterances": utts.len(), "accepted": accepted.len(), "ambiguous": ambiguous, "unmatched": unmatched}),
                );
                outputs.push(("train", accepted));
            }
        }
    } else {
        let templates = match &a.templates {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                parse_templates(&text, a.tokenization)?
            }
            None if a.tokenization == Tokenization::Char => default_templates(),
            None => bail!(
                "built-in templates use character tokens; give --templates for word tokenization"
            ),
        };
        let mut gen_stats: BTreeMap<String, GenerationStats> = BTreeMap::new();
        if parts.is_some() {
            let splits =
                generate_splits(dict.clone(), &templates, a.train_size, a.test_size, a.seed)?;
            gen_stats = splits.stats;
            outputs.push(("train", splits.train));
            outputs.push(("test_iv", splits.test_iv));
            outputs.push(("test_oov", splits.test_oov));
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let (train, s) = generate(
                &templates,
                &dict,
                &dict,
                a.train_size,
                &HashSet::new(),
                &mut rng,
            )?;
            gen_stats.insert("train".into(), s);
            let seen = train.iter().map(|e| e.tokens.clone()).collect();
            let (test, s) = generate(&templates, &dict, &dict, a.test_size, &seen, &mut rng)?;
            gen_stats.insert("test_iv".into(), s);
            outputs.push(("train", train));
            outputs.push(("test_iv", test));
        }
        for (name, s) in &gen_stats {
            describe(name, s);
        }
        stats.insert("generation".into(), serde_json::to_value(&gen_stats)?);
    }

    let train = &outputs[0].1;
    let mut oov = serde_json::Map::new();
    for (name, examples) in &outputs[1..] {
        let o = oov_stats(train, examples);
        println!(
            "{name} vs train: term OOV {:.1}%, token OOV {:.1}%",
            100.0 * o.term_rate,
            100.0 * o.token_rate
        );
        oov.insert(name.to_string(), serde_json::to_value(&o)?);
    }
    stats.insert("oov".into(), serde_json::Value::Object(oov));
    for (name, examples) in &outputs {
        let path = a.out_dir.join(format!("{name}.conll"));
        write_corpus(&path, examples)?;
        println!("wrote {} ({} utterances)", path.display(), examples.len());
    }
    write_file(
        &a.out_dir.join("stats.json"),
        &(serde_json::to_string_pretty(&stats)? + "\n"),
    )?;
    Ok(())
}

fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut rc = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let m = &mut rc.model;
    if a.without_ne {
        m.layers = 2;
        m.layer_assignment = [(TaskId::Seg, 1), (TaskId::Slot, 2)].into_iter().collect();
        m.cascade_topology = CascadeTopology::SlotSeg;
    }
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = a.$field.clone() {
                m.$field = v;
            }
        )*};
    }
    set!(
        topology,
        cascade_topology,
        layers,
        hidden,
        emb_dim,
        batch_size,
        epochs,
        lr,
        clip,
        alpha,
        beta,
        seed
    );
    if a.no_cascade {
        m.cascade = false;
    }
    if a.no_residual {
        m.residual = false;
    }
    if let Some(t) = a.tokenization {
        rc.tokenization = t;
    }
    for (slot, flag) in [
        (&mut rc.train, &a.train),
        (&mut rc.dev, &a.dev),
        (&mut rc.model_out, &a.model_out),
        (&mut rc.trace_out, &a.trace_out),
    ] {
        if flag.is_some() {
            *slot = flag.clone();
        }
    }
    rc.model.validate()?;
    Ok(rc)
}

struct Progress<'a> {
    trace: Vec<TraceRecord>,
    epoch_losses: Vec<f64>,
    dev: Option<&'a [LabeledExample]>,
    vocab: dcmtl_core::corpus::Vocab,
    tagsets: BTreeMap<TaskId, dcmtl_core::corpus::TagSet>,
}

impl TrainObserver for Progress<'_> {
    fn step(&mut self, record: &TraceRecord) {
        self.epoch_losses.push(record.loss);
        self.trace.push(record.clone());
    }

    fn epoch_end(&mut self, epoch: usize, model: &TaggingModel) -> dcmtl_core::Result<()> {
        let mean = self.epoch_losses.iter().sum::<f64>() / self.epoch_losses.len().max(1) as f64;
        self.epoch_losses.clear();
        let mut line = format!("epoch {epoch}: mean loss {mean:.4}");
        if let Some(dev) = self.dev {
            let reports = Predictor::new(model, &self.vocab, &self.tagsets).evaluate(dev)?;
            for (task, r) in reports {
                line.push_str(&format!(", dev {task} F1 {:.4}", r.f1));
            }
        }
        println!("{line}");
        Ok(())
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let rc = resolve_train_config(&a)?;
    eprintln!("seed: {}", rc.model.seed);
    let train_path = rc
        .train
        .clone()
        .context("no training corpus: give --train or `train` in the config")?;
    let model_out = rc
        .model_out
        .clone()
        .context("no model path: give --model-out or `model_out` in the config")?;
    let train_set = read_corpus(&train_path)?;
    let dev_set = rc.dev.as_deref().map(read_corpus).transpose()?;
    let m = &rc.model;
    println!(
        "training {} ({} layers, hidden {}, embeddings {}) on {} utterances for {} epochs",
        m.topology,
        m.layers,
        m.hidden,
        m.emb_dim,
        train_set.len(),
        m.epochs
    );
    let mut model = TrainedModel::untrained(rc.model.clone(), &train_set, rc.tokenization)?;
    let mut progress = Progress {
        trace: Vec::new(),
        epoch_losses: Vec::new(),
        dev: dev_set.as_deref(),
        vocab: model.vocab().clone(),
        tagsets: model.tagsets().clone(),
    };
    model.train(&train_set, &mut progress)?;
    model.save(&model_out)?;
    println!("wrote {}", model_out.display());
    if let Some(path) = &rc.trace_out {
        let mut text = String::new();
        for r in &progress.trace {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        write_file(path, &text)?;
        println!("wrote {} ({} steps)", path.display(), progress.trace.len());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = TrainedModel::load(&a.model)?;
    eprintln!("seed: {}", model.config().seed);
    let corpus = read_corpus(&a.corpus)?;
    let reports = model
        .evaluate(&corpus)
        .with_context(|| format!("evaluating {}", a.corpus.display()))?;
    let mut lines = String::new();
    for (task, report) in &reports {
        println!("== {task} ==\n{report}\n");
        let mut v = serde_json::to_value(report)?;
        v.as_object_mut()
            .unwrap()
            .insert("task".into(), json!(task));
        lines.push_str(&serde_json::to_string(&v)?);
        lines.push('\n');
    }
    if let Some(path) = &a.report_out {
        write_file(path, &lines)?;
    }
    Ok(())
}

fn tag(a: TagArgs) -> Result<()> {
    let model = TrainedModel::load(&a.model)?;
    eprintln!("seed: {}", model.config().seed);
    let reader: Box<dyn BufRead> = match &a.input {
        Some(path) => Box::new(io::BufReader::new(
            fs::File::open(path).with_context(|| format!("reading {}", path.display()))?,
        )),
        None => Box::new(io::stdin().lock()),
    };
    let stdout = io::stdout();
    let mut out = io::BufWriter::new(stdout.lock());
    for line in reader.lines() {
        let tokens = model.tokenization().tokenize(&line?);
        if tokens.is_empty() {
            writeln!(out)?;
            continue;
        }
        let p = model.predict(&tokens)?;
        let column = |task: TaskId, i: usize| p.task(task).map_or(ABSENT, |l| l[i].as_str());
        for (i, tok) in tokens.iter().enumerate() {
            writeln!(
                out,
                "{tok}\t{}\t{}\t{}",
                column(TaskId::Slot, i),
                column(TaskId::Ne, i),
                column(TaskId::Seg, i)
            )?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
