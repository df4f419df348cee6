//! Template-driven utterance generation and dictionary-based corpus splits.
//!
//! A template is literal filler text with `{SlotType}` placeholders, e.g.
//! `我想买{Brand}的{CG}`. Filling the placeholders with dictionary terms
//! yields an utterance whose slot labels are known by construction; an
//! utterance is kept only if annotating it with the full dictionary gives
//! back exactly those labels.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{annotate, DictEntry, Dictionary, LabeledExample, Rejection, Tokenization};
use crate::error::{Error, Result};
use crate::eval::extract_chunks;

#[derive(Clone, Debug, PartialEq, Eq)]
enum Piece {
    Text(Vec<String>),
    Slot(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pieces: Vec<Piece>,
}

impl Template {
    pub fn parse(text: &str, tokenization: Tokenization) -> Result<Self> {
        let mut pieces = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            match rest.find('{') {
                Some(open) => {
                    if rest[..open].contains('}') {
                        return Err(Error::Config(format!("stray `}}` in template `{text}`")));
                    }
                    push_text(&mut pieces, &rest[..open], tokenization);
                    let close = rest[open..].find('}').ok_or_else(|| {
                        Error::Config(format!("unclosed `{{` in template `{text}`"))
                    })? + open;
                    let name = rest[open + 1..close].trim();
                    if name.is_empty() || name.contains('{') {
                        return Err(Error::Config(format!(
                            "bad placeholder in template `{text}`"
                        )));
                    }
                    pieces.push(Piece::Slot(name.to_string()));
                    rest = &rest[close + 1..];
                }
                None => {
                    if rest.contains('}') {
                        return Err(Error::Config(format!("stray `}}` in template `{text}`")));
                    }
                    push_text(&mut pieces, rest, tokenization);
                    rest = "";
                }
            }
        }
        if !pieces.iter().any(|p| matches!(p, Piece::Slot(_))) {
            return Err(Error::Config(format!(
                "template `{text}` has no placeholder"
            )));
        }
        Ok(Self { pieces })
    }

    pub fn slot_types(&self) -> impl Iterator<Item = &str> {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot(s) => Some(s.as_str()),
            Piece::Text(_) => None,
        })
    }

    /// Fills every placeholder with a random term of its type; `None` if
    /// some type has no terms.
    fn fill<R: Rng>(
        &self,
        terms: &BTreeMap<&str, Vec<&[String]>>,
        rng: &mut R,
    ) -> Option<(Vec<String>, Vec<String>)> {
        let mut tokens = Vec::new();
        let mut slot = Vec::new();
        for p in &self.pieces {
            match p {
                Piece::Text(t) => {
                    tokens.extend(t.iter().cloned());
                    slot.extend(std::iter::repeat_n("O".to_string(), t.len()));
                }
                Piece::Slot(ty) => {
                    let term = terms.get(ty.as_str())?.choose(rng)?;
                    tokens.extend(term.iter().cloned());
                    slot.push(format!("B-{ty}"));
                    slot.extend(std::iter::repeat_n(format!("I-{ty}"), term.len() - 1));
                }
            }
        }
        Some((tokens, slot))
    }
}

fn push_text(pieces: &mut Vec<Piece>, text: &str, tokenization: Tokenization) {
    let toks = tokenization.tokenize(text);
    if !toks.is_empty() {
        pieces.push(Piece::Text(toks));
    }
}

/// One template per non-blank line; `#` starts a comment line.
pub fn parse_templates(text: &str, tokenization: Tokenization) -> Result<Vec<Template>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| Template::parse(l, tokenization))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct GenerationStats {
    pub requested: usize,
    pub generated: usize,
    pub attempts: usize,
    pub ambiguous: usize,
    pub relabeled: usize,
    pub excluded: usize,
}

/// Generates up to `count` utterances from templates filled with terms of
/// `part`. Candidates whose full-dictionary annotation is ambiguous or
/// differs from the constructed labels are rejected, as are utterances in
/// `exclude`. Gives up after `50 * count` attempts, or at once when no
/// template can be filled from `part`.
pub fn generate<R: Rng>(
    templates: &[Template],
    part: &Dictionary,
    full: &Dictionary,
    count: usize,
    exclude: &HashSet<Vec<String>>,
    rng: &mut R,
) -> Result<(Vec<LabeledExample>, GenerationStats)> {
    let mut terms: BTreeMap<&str, Vec<&[String]>> = BTreeMap::new();
    for e in part.entries() {
        terms.entry(e.slot_type.as_str()).or_default().push(&e.term);
    }
    let usable: Vec<&Template> = templates
        .iter()
        .filter(|t| t.slot_types().all(|s| terms.contains_key(s)))
        .collect();
    let mut stats = GenerationStats {
        requested: count,
        ..Default::default()
    };
    let mut out = Vec::with_capacity(count);
    // A part too small to fill any template yields an empty corpus; the
    // shortfall shows up in the stats.
    while !usable.is_empty() && out.len() < count && stats.attempts < 50 * count.max(1) {
        stats.attempts += 1;
        let template = usable[rng.gen_range(0..usable.len())];
        let Some((tokens, slot)) = template.fill(&terms, rng) else {
            continue;
        };
        if exclude.contains(&tokens) {
            stats.excluded += 1;
            continue;
        }
        match annotate(&tokens, full) {
            Ok(ex) if ex.slot == slot => out.push(ex),
            Ok(_) | Err(Rejection::NoContent) => stats.relabeled += 1,
            Err(Rejection::Ambiguous { .. }) => stats.ambiguous += 1,
        }
    }
    stats.generated = out.len();
    Ok((out, stats))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RoutingStats {
    pub utterances: usize,
    pub train: usize,
    pub test: usize,
    pub mixed: usize,
    pub ambiguous: usize,
    pub no_content: usize,
}

/// Annotates raw utterances with the full dictionary and routes each one by
/// the provenance of its matched terms: all from `train_part` → train, all
/// from `test_part` → test, otherwise discarded.
pub fn route_utterances(
    utterances: &[Vec<String>],
    full: &Dictionary,
    train_part: &Dictionary,
    test_part: &Dictionary,
) -> (Vec<LabeledExample>, Vec<LabeledExample>, RoutingStats) {
    let mut stats = RoutingStats {
        utterances: utterances.len(),
        ..Default::default()
    };
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for u in utterances {
        let ex = match annotate(u, full) {
            Ok(ex) => ex,
            Err(Rejection::Ambiguous { .. }) => {
                stats.ambiguous += 1;
                continue;
            }
            Err(Rejection::NoContent) => {
                stats.no_content += 1;
                continue;
            }
        };
        let chunks = extract_chunks(&ex.slot);
        let terms: Vec<&[String]> = chunks.iter().map(|c| &ex.tokens[c.start..=c.end]).collect();
        if terms.iter().all(|t| train_part.contains(t)) {
            stats.train += 1;
            train.push(ex);
        } else if terms.iter().all(|t| test_part.contains(t)) {
            stats.test += 1;
            test.push(ex);
        } else {
            stats.mixed += 1;
        }
    }
    (train, test, stats)
}

/// Out-of-vocabulary rates of a test corpus against a training corpus.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OovStats {
    /// Fraction of test slot chunks whose surface term never occurs as a
    /// chunk in training.
    pub term_rate: f64,
    /// Fraction of test tokens never seen in training.
    pub token_rate: f64,
}

pub fn oov_stats(train: &[LabeledExample], test: &[LabeledExample]) -> OovStats {
    let chunk_terms = |ex: &LabeledExample| -> Vec<Vec<String>> {
        extract_chunks(&ex.slot)
            .into_iter()
            .map(|c| ex.tokens[c.start..=c.end].to_vec())
            .collect()
    };
    let seen_terms: HashSet<Vec<String>> = train.iter().flat_map(chunk_terms).collect();
    let seen_tokens: HashSet<&String> = train.iter().flat_map(|e| &e.tokens).collect();
    let test_terms: Vec<Vec<String>> = test.iter().flat_map(chunk_terms).collect();
    let test_tokens: Vec<&String> = test.iter().flat_map(|e| &e.tokens).collect();
    let rate = |unseen: usize, total: usize| {
        if total == 0 {
            0.0
        } else {
            unseen as f64 / total as f64
        }
    };
    OovStats {
        term_rate: rate(
            test_terms
                .iter()
                .filter(|t| !seen_terms.contains(*t))
                .count(),
            test_terms.len(),
        ),
        token_rate: rate(
            test_tokens
                .iter()
                .filter(|t| !seen_tokens.contains(*t))
                .count(),
            test_tokens.len(),
        ),
    }
}

const BRAND_CHARS: &str = "耐克迪斯彪李宁踏特步匡威库森杰邦鸿星尔乔丹";
const COLOR_CHARS: &str = "红橙黄绿青蓝紫黑白灰粉棕金银米褐藏墨";
const MATERIAL_CHARS: &str = "棉麻丝毛绒皮革涤纶锦羊驼貂缎纱亚";
const STYLE_CHARS: &str = "韩修身宽松复古休闲街头简约学院潮欧美";
const PROPERTY_KEYS: [&str; 10] = [
    "品牌", "颜色", "材质", "风格", "款式", "尺码", "面料", "图案", "版型", "领型",
];
const CATEGORIES: [&str; 10] = [
    "连衣裙",
    "运动鞋",
    "衬衫",
    "牛仔裤",
    "外套",
    "卫衣",
    "背包",
    "帽子",
    "手表",
    "围巾",
];

const TEMPLATES: &str = "\
我想买{Brand}的{CG}
有没有{Color}的{CG}
{Style}{CG}推荐一下
找一件{Material}{CG}
{Brand}{PK}的{Color}{CG}
{CG}有{Color}的吗
我要{Style}{Material}的{CG}
看看{Brand}{CG}
{PK}是{Color}的{CG}
来一双{Brand}{CG}
推荐{Color}{Style}{CG}
{Brand}的{Material}{CG}多少钱
想找{PK}{Brand}的{CG}
给我看下{CG}
{Color}{Material}{Style}{CG}
";

/// Built-in e-commerce style templates (character tokenization).
pub fn default_templates() -> Vec<Template> {
    parse_templates(TEMPLATES, Tokenization::Char).expect("built-in templates parse")
}

pub fn default_type_map() -> BTreeMap<String, String> {
    [
        ("Brand", "PV"),
        ("Color", "PV"),
        ("Material", "PV"),
        ("Style", "PV"),
        ("PK", "PK"),
        ("CG", "CG"),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect()
}

/// A dictionary of `per_type` terms for each of six slot types. Property
/// keys and categories come from fixed word lists (at most ten each); the
/// four property-value types get random 2–3 character terms drawn from
/// disjoint per-type character pools.
pub fn synthetic_dictionary(per_type: usize, seed: u64) -> Result<Dictionary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chars = |s: &str| -> Vec<String> { s.chars().map(String::from).collect() };
    let mut entries = Vec::new();
    for (ty, pool) in [
        ("Brand", BRAND_CHARS),
        ("Color", COLOR_CHARS),
        ("Material", MATERIAL_CHARS),
        ("Style", STYLE_CHARS),
    ] {
        let pool = chars(pool);
        let mut seen = BTreeSet::new();
        while seen.len() < per_type {
            let len = rng.gen_range(2..=3);
            let term: Vec<String> = pool.choose_multiple(&mut rng, len).cloned().collect();
            if seen.insert(term.clone()) {
                entries.push(DictEntry::new(term, ty));
            }
        }
    }
    for (ty, list) in [("PK", PROPERTY_KEYS), ("CG", CATEGORIES)] {
        if per_type > list.len() {
            return Err(Error::Config(format!(
                "at most {} `{ty}` terms available, asked for {per_type}",
                list.len()
            )));
        }
        entries.extend(
            list[..per_type]
                .iter()
                .map(|t| DictEntry::new(chars(t), ty)),
        );
    }
    Dictionary::new(entries, default_type_map())
}

/// Train, in-dictionary test and held-out-dictionary test corpora.
#[derive(Clone, Debug)]
pub struct SyntheticSplits {
    pub dictionary: Dictionary,
    pub parts: [Dictionary; 3],
    pub train: Vec<LabeledExample>,
    pub test_iv: Vec<LabeledExample>,
    pub test_oov: Vec<LabeledExample>,
    pub stats: BTreeMap<String, GenerationStats>,
}

/// Splits the dictionary three ways, generates training and in-dictionary
/// test utterances from the first two parts and held-out test utterances
/// from the third. In-dictionary test utterances never repeat a training
/// utterance.
pub fn generate_splits(
    dictionary: Dictionary,
    templates: &[Template],
    train_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<SyntheticSplits> {
    let parts = super::split_dictionary(&dictionary, seed)?;
    let known = dictionary.subset([parts[0].entries(), parts[1].entries()].concat())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_da7a);
    let mut stats = BTreeMap::new();
    let (train, s) = generate(
        templates,
        &known,
        &dictionary,
        train_size,
        &HashSet::new(),
        &mut rng,
    )?;
    stats.insert("train".to_string(), s);
    let seen: HashSet<Vec<String>> = train.iter().map(|e| e.tokens.clone()).collect();
    let (test_iv, s) = generate(templates, &known, &dictionary, test_size, &seen, &mut rng)?;
    stats.insert("test_iv".to_string(), s);
    let (test_oov, s) = generate(
        templates,
        &parts[2],
        &dictionary,
        test_size,
        &HashSet::new(),
        &mut rng,
    )?;
    stats.insert("test_oov".to_string(), s);
    Ok(SyntheticSplits {
        dictionary,
        parts,
        train,
        test_iv,
        test_oov,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_parsing() {
        let t = Template::parse("我想买{Brand}的{CG}", Tokenization::Char).unwrap();
        assert_eq!(t.slot_types().collect::<Vec<_>>(), vec!["Brand", "CG"]);
        assert_eq!(t.pieces.len(), 4);
        let w = Template::parse("flights to {city} please", Tokenization::Word).unwrap();
        assert_eq!(
            w.pieces[0],
            Piece::Text(vec!["flights".into(), "to".into()])
        );
        assert!(Template::parse("no slots", Tokenization::Char).is_err());
        assert!(Template::parse("{open", Tokenization::Char).is_err());
        assert!(Template::parse("a}b{X}", Tokenization::Char).is_err());
        assert!(Template::parse("{}", Tokenization::Char).is_err());
    }

    #[test]
    fn character_pools_are_disjoint() {
        let mut seen = BTreeSet::new();
        let fixed: String = PROPERTY_KEYS.concat() + &CATEGORIES.concat();
        let filler: String = TEMPLATES
            .lines()
            .map(|l| l.split(['{', '}']).step_by(2).collect::<String>())
            .collect();
        let fixed_chars: BTreeSet<char> = fixed.chars().collect();
        let filler_chars: BTreeSet<char> = filler.chars().collect();
        for pool in [BRAND_CHARS, COLOR_CHARS, MATERIAL_CHARS, STYLE_CHARS] {
            for c in pool.chars() {
                assert!(seen.insert(c), "`{c}` appears in two pools");
                assert!(
                    !fixed_chars.contains(&c) && !filler_chars.contains(&c),
                    "`{c}`"
                );
            }
        }
        assert!(fixed_chars.is_disjoint(&filler_chars));
    }

    #[test]
    fn synthetic_dictionary_shape() {
        let d = synthetic_dictionary(10, 1).unwrap();
        assert_eq!(d.len(), 60);
        for ty in default_type_map().keys() {
            assert_eq!(d.terms_of(ty).len(), 10);
        }
        assert_eq!(synthetic_dictionary(10, 1).unwrap(), d);
        assert!(synthetic_dictionary(11, 1).is_err());
    }

    #[test]
    fn generated_examples_match_their_construction() {
        let splits = generate_splits(
            synthetic_dictionary(10, 3).unwrap(),
            &default_templates(),
            200,
            50,
            3,
        )
        .unwrap();
        assert_eq!(splits.train.len(), 200);
        assert_eq!(splits.test_iv.len(), 50);
        assert_eq!(splits.test_oov.len(), 50);
        let train_set: HashSet<_> = splits.train.iter().map(|e| e.tokens.clone()).collect();
        assert!(splits
            .test_iv
            .iter()
            .all(|e| !train_set.contains(&e.tokens)));
        for ex in splits
            .train
            .iter()
            .chain(&splits.test_iv)
            .chain(&splits.test_oov)
        {
            assert_eq!(annotate(&ex.tokens, &splits.dictionary).as_ref(), Ok(ex));
        }
        let oov = oov_stats(&splits.train, &splits.test_oov);
        assert_eq!(oov.term_rate, 1.0);
        assert!(oov.token_rate < 1.0);
        let iv = oov_stats(&splits.train, &splits.test_iv);
        assert_eq!(iv.term_rate, 0.0);
    }

    #[test]
    fn routing_by_term_provenance() {
        let tok = |s: &str| Tokenization::Char.tokenize(s);
        let map = default_type_map();
        let full = Dictionary::new(
            vec![
                DictEntry::new(tok("红色"), "Color"),
                DictEntry::new(tok("衬衫"), "CG"),
                DictEntry::new(tok("外套"), "CG"),
            ],
            map.clone(),
        )
        .unwrap();
        let a = full
            .subset(vec![
                DictEntry::new(tok("红色"), "Color"),
                DictEntry::new(tok("衬衫"), "CG"),
            ])
            .unwrap();
        let c = full
            .subset(vec![DictEntry::new(tok("外套"), "CG")])
            .unwrap();
        let utts: Vec<_> = ["红色衬衫", "要外套", "红色外套", "你好"]
            .iter()
            .map(|s| tok(s))
            .collect();
        let (train, test, stats) = route_utterances(&utts, &full, &a, &c);
        assert_eq!((train.len(), test.len()), (1, 1));
        assert_eq!((stats.mixed, stats.no_content), (1, 1));
    }

    #[test]
    fn unfillable_part_gives_an_empty_corpus() {
        let tok = |s: &str| Tokenization::Char.tokenize(s);
        let full = Dictionary::new(
            vec![
                DictEntry::new(tok("红色"), "Color"),
                DictEntry::new(tok("衬衫"), "CG"),
            ],
            default_type_map(),
        )
        .unwrap();
        let part = full
            .subset(vec![DictEntry::new(tok("红色"), "Color")])
            .unwrap();
        let templates = vec![Template::parse("要{Color}的{CG}", Tokenization::Char).unwrap()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, stats) =
            generate(&templates, &part, &full, 5, &HashSet::new(), &mut rng).unwrap();
        assert!(out.is_empty());
        assert_eq!(
            (stats.requested, stats.generated, stats.attempts),
            (5, 0, 0)
        );
    }
}
