use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotations::TranscriptOp;
use crate::error::{Error, Result};

const BUNDLED_LEXICON: &str = include_str!("../../data/lexicon.json");

/// Word valences plus an antonym map. The sentiment of a transcript is the
/// sum of its tokens' valences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentimentLexicon {
    pub valence: BTreeMap<String, f64>,
    pub antonyms: BTreeMap<String, BTreeSet<String>>,
}

impl SentimentLexicon {
    pub fn new(
        valence: BTreeMap<String, f64>,
        antonyms: BTreeMap<String, BTreeSet<String>>,
    ) -> Result<Self> {
        for (word, set) in &antonyms {
            for a in set {
                if !valence.contains_key(a) {
                    return Err(Error::Invalid(format!(
                        "antonym {a:?} of {word:?} has no valence entry"
                    )));
                }
            }
        }
        if let Some((w, v)) = valence.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Invalid(format!("valence of {w:?} is {v}")));
        }
        Ok(Self { valence, antonyms })
    }

    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: SentimentLexicon = serde_json::from_str(text)?;
        Self::new(raw.valence, raw.antonyms)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn valence(&self, word: &str) -> f64 {
        self.valence.get(word).copied().unwrap_or(0.0)
    }

    pub fn antonyms_of(&self, word: &str) -> impl Iterator<Item = &str> {
        self.antonyms.get(word).into_iter().flatten().map(String::as_str)
    }

    /// Words that have at least one antonym of different valence, i.e. whose
    /// substitution always moves the sentiment score.
    pub fn flippable_words(&self) -> Vec<&str> {
        self.antonyms
            .iter()
            .filter(|(w, set)| set.iter().any(|a| self.valence(a) != self.valence(w)))
            .map(|(w, _)| w.as_str())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub word: String,
    pub start: f64,
    pub end: f64,
}

/// Time-aligned words, sorted and non-overlapping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Token>", into = "Vec<Token>")]
pub struct Transcript {
    tokens: Vec<Token>,
}

impl TryFrom<Vec<Token>> for Transcript {
    type Error = Error;

    fn try_from(tokens: Vec<Token>) -> Result<Self> {
        Self::new(tokens)
    }
}

impl From<Transcript> for Vec<Token> {
    fn from(t: Transcript) -> Self {
        t.tokens
    }
}

impl Transcript {
    pub fn new(tokens: Vec<Token>) -> Result<Self> {
        for t in &tokens {
            if !(t.end > t.start) || t.start < 0.0 {
                return Err(Error::Invalid(format!(
                    "token {:?} has interval [{}, {}]",
                    t.word, t.start, t.end
                )));
            }
        }
        if let Some(w) = tokens.windows(2).find(|w| w[1].start < w[0].end) {
            return Err(Error::Invalid(format!(
                "tokens {:?} and {:?} overlap or are unsorted",
                w[0].word, w[1].word
            )));
        }
        Ok(Self { tokens })
    }

    /// Tokens without timing, spaced one second apart.
    pub fn from_words(words: &[&str]) -> Self {
        let tokens = words
            .iter()
            .enumerate()
            .map(|(i, w)| Token {
                word: (*w).to_string(),
                start: i as f64,
                end: i as f64 + 0.5,
            })
            .collect();
        Self { tokens }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        let words: Vec<&str> = self.tokens.iter().map(|t| t.word.as_str()).collect();
        words.join(" ")
    }

    /// Copy with the plan's substitutions applied; timings are kept.
    pub fn apply(&self, plan: &ReplacementPlan) -> Transcript {
        let mut out = self.clone();
        for r in &plan.replacements {
            out.tokens[r.index].word = r.replacement.clone();
        }
        out
    }
}

/// Sum of valences over the transcript's tokens.
pub fn sentiment_score(transcript: &Transcript, lexicon: &SentimentLexicon) -> f64 {
    transcript.tokens.iter().map(|t| lexicon.valence(&t.word)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replacement {
    pub index: usize,
    pub original: String,
    pub replacement: String,
    /// `S(D') - S(D)` for this substitution alone.
    pub delta: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplacementPlan {
    /// Sorted by token index.
    pub replacements: Vec<Replacement>,
}

impl ReplacementPlan {
    pub fn is_empty(&self) -> bool {
        self.replacements.is_empty()
    }

    pub fn total_delta(&self) -> f64 {
        self.replacements.iter().map(|r| r.delta).sum()
    }

    pub fn ops(&self) -> Vec<TranscriptOp> {
        self.replacements
            .iter()
            .map(|r| TranscriptOp {
                index: r.index,
                original: r.original.clone(),
                replacement: r.replacement.clone(),
            })
            .collect()
    }
}

/// Every single substitution, in token order then antonym order.
fn candidates(transcript: &Transcript, lexicon: &SentimentLexicon) -> Vec<Replacement> {
    let base = sentiment_score(transcript, lexicon);
    let mut out = Vec::new();
    for (index, token) in transcript.tokens.iter().enumerate() {
        for ant in lexicon.antonyms_of(&token.word) {
            let mut swapped = transcript.clone();
            swapped.tokens[index].word = ant.to_string();
            out.push(Replacement {
                index,
                original: token.word.clone(),
                replacement: ant.to_string(),
                delta: sentiment_score(&swapped, lexicon) - base,
            });
        }
    }
    out
}

/// The substitution with the largest `|ΔS|`, or `None` when nothing moves
/// the score. Ties go to the earliest token, then the first antonym.
pub fn best_single_replacement(
    transcript: &Transcript,
    lexicon: &SentimentLexicon,
) -> Option<Replacement> {
    let mut best: Option<Replacement> = None;
    for c in candidates(transcript, lexicon) {
        if best.as_ref().map_or(true, |b| c.delta.abs() > b.delta.abs()) {
            best = Some(c);
        }
    }
    best.filter(|b| b.delta != 0.0)
}

fn plan_order(a: &[&Replacement], b: &[&Replacement]) -> Ordering {
    a.len()
        .cmp(&b.len())
        .then_with(|| a.iter().map(|r| r.index).cmp(b.iter().map(|r| r.index)))
        .then_with(|| {
            a.iter()
                .map(|r| r.replacement.as_str())
                .cmp(b.iter().map(|r| r.replacement.as_str()))
        })
}

/// Up to `max` substitutions at distinct tokens maximising `|Σ ΔS|`, found by
/// exhaustive enumeration. Ties prefer fewer substitutions, then the lowest
/// token indices, then lexicographically smaller antonyms. Returns an empty
/// plan when the best achievable change is zero.
pub fn select_replacements(
    transcript: &Transcript,
    lexicon: &SentimentLexicon,
    max: usize,
) -> Result<ReplacementPlan> {
    if max == 0 {
        return Err(Error::Invalid("replacement budget must be at least 1".into()));
    }
    let cands = candidates(transcript, lexicon);
    let mut best: Option<(f64, Vec<&Replacement>)> = None;
    let mut chosen: Vec<&Replacement> = Vec::with_capacity(max);
    enumerate(&cands, 0, max, &mut chosen, &mut best);
    Ok(match best {
        Some((value, set)) if value != 0.0 => ReplacementPlan {
            replacements: set.into_iter().cloned().collect(),
        },
        _ => ReplacementPlan::default(),
    })
}

fn enumerate<'a>(
    cands: &'a [Replacement],
    from: usize,
    max: usize,
    chosen: &mut Vec<&'a Replacement>,
    best: &mut Option<(f64, Vec<&'a Replacement>)>,
) {
    if !chosen.is_empty() {
        let value = chosen.iter().map(|r| r.delta).sum::<f64>().abs();
        let better = match best {
            None => true,
            Some((v, set)) => value > *v || (value == *v && plan_order(chosen, set).is_lt()),
        };
        if better {
            *best = Some((value, chosen.clone()));
        }
    }
    if chosen.len() == max {
        return;
    }
    for k in from..cands.len() {
        // candidates are grouped by token, so one antonym per token
        if chosen.last().is_some_and(|r| r.index == cands[k].index) {
            continue;
        }
        chosen.push(&cands[k]);
        enumerate(cands, k + 1, max, chosen, best);
        chosen.pop();
    }
}

/// At most one substitution for clips shorter than ten seconds, else two.
pub fn replacement_budget(duration: f64) -> Result<usize> {
    if !(duration > 0.0) {
        return Err(Error::Invalid(format!("duration must be positive, got {duration}")));
    }
    Ok(if duration < 10.0 { 1 } else { 2 })
}
