//! Majority-tag and memorization baselines.
//!
//! `Major` predicts the most frequent training tag for every token. `Memo`
//! remembers the most frequent tag of each (lowercased) training word and
//! falls back to the majority tag for unseen words. Ties break toward the
//! lexicographically smallest tag.

use std::collections::{BTreeMap, HashMap};

use crate::corpus::TaggedSentence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MajorModel {
    pub majority_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoModel {
    /// Most frequent tag per lowercased word.
    pub word_tags: BTreeMap<String, String>,
    pub fallback: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Baseline {
    Major(MajorModel),
    Memo(MemoModel),
}

/// Most frequent value by count, ties toward the smallest key.
fn argmax_count<'a>(counts: impl Iterator<Item = (&'a str, u64)>) -> Option<String> {
    let mut best: Option<(&str, u64)> = None;
    for (key, count) in counts {
        best = match best {
            None => Some((key, count)),
            Some((bk, bc)) => {
                if count > bc || (count == bc && key < bk) {
                    Some((key, count))
                } else {
                    Some((bk, bc))
                }
            }
        };
    }
    best.map(|(k, _)| k.to_string())
}

pub fn fit_major(train: &[TaggedSentence]) -> Result<MajorModel> {
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for s in train {
        for tag in s.gold()? {
            *counts.entry(tag.clone()).or_insert(0) += 1;
        }
    }
    let majority_tag = argmax_count(counts.iter().map(|(k, &v)| (k.as_str(), v)))
        .ok_or_else(|| Error::InvalidInput("no tags in training set".into()))?;
    Ok(MajorModel { majority_tag })
}

pub fn fit_memo(train: &[TaggedSentence]) -> Result<MemoModel> {
    let fallback = fit_major(train)?.majority_tag;
    let mut counts: HashMap<String, BTreeMap<String, u64>> = HashMap::new();
    for s in train {
        for (tok, tag) in s.tokens.iter().zip(s.gold()?) {
            *counts
                .entry(tok.to_lowercase())
                .or_default()
                .entry(tag.clone())
                .or_insert(0) += 1;
        }
    }
    let mut word_tags = BTreeMap::new();
    for (word, tag_counts) in counts {
        let tag = argmax_count(tag_counts.iter().map(|(k, &v)| (k.as_str(), v))).unwrap();
        word_tags.insert(word, tag);
    }
    Ok(MemoModel {
        word_tags,
        fallback,
    })
}

impl Baseline {
    pub fn predict(&self, tokens: &[String]) -> Vec<String> {
        match self {
            Baseline::Major(m) => tokens.iter().map(|_| m.majority_tag.clone()).collect(),
            Baseline::Memo(m) => tokens
                .iter()
                .map(|tok| {
                    m.word_tags
                        .get(&tok.to_lowercase())
                        .unwrap_or(&m.fallback)
                        .clone()
                })
                .collect(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Baseline::Major(_) => "major",
            Baseline::Memo(_) => "memo",
        }
    }

    /// Plain-text model format: a `MAJOR <tag>` line, or a `MEMO <fallback>`
    /// header followed by `word<TAB>tag` lines.
    pub fn to_text(&self) -> String {
        match self {
            Baseline::Major(m) => format!("MAJOR {}\n", m.majority_tag),
            Baseline::Memo(m) => {
                let mut out = format!("MEMO {}\n", m.fallback);
                for (word, tag) in &m.word_tags {
                    out.push_str(word);
                    out.push('\t');
                    out.push_str(tag);
                    out.push('\n');
                }
                out
            }
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Format("empty baseline model file".into()))?;
        let mut parts = header.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some("MAJOR"), Some(tag), None) => Ok(Baseline::Major(MajorModel {
                majority_tag: tag.to_string(),
            })),
            (Some("MEMO"), Some(fallback), None) => {
                let mut word_tags = BTreeMap::new();
                for (i, line) in lines {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let mut fields = line.split('\t');
                    match (fields.next(), fields.next(), fields.next()) {
                        (Some(w), Some(t), None) => {
                            word_tags.insert(w.to_string(), t.to_string());
                        }
                        _ => {
                            return Err(Error::Parse {
                                line: i + 1,
                                msg: format!("expected `word<TAB>tag`, got {line:?}"),
                            })
                        }
                    }
                }
                Ok(Baseline::Memo(MemoModel {
                    word_tags,
                    fallback: fallback.to_string(),
                }))
            }
            _ => Err(Error::Format(format!(
                "bad baseline model header {header:?}"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(tokens: &[&str], tags: &[&str]) -> TaggedSentence {
        TaggedSentence::new(
            tokens.iter().map(|s| s.to_string()).collect(),
            tags.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn major_picks_most_frequent() {
        let train = vec![sent(&["a", "b", "c", "d"], &["NN", "NN", "NN", "VB"])];
        assert_eq!(fit_major(&train).unwrap().majority_tag, "NN");
    }

    #[test]
    fn major_tie_is_lexicographic() {
        let train = vec![sent(&["a", "b", "c", "d"], &["VB", "NN", "VB", "NN"])];
        assert_eq!(fit_major(&train).unwrap().majority_tag, "NN");
        assert!(fit_major(&[]).is_err());
    }

    #[test]
    fn memo_majority_per_word_with_fallback() {
        let train = vec![
            sent(&["bank", "bank", "bank"], &["NN", "NN", "VB"]),
            sent(&["makan"], &["VBT"]),
        ];
        let memo = fit_memo(&train).unwrap();
        assert_eq!(memo.word_tags.get("bank").unwrap(), "NN");
        assert_eq!(memo.fallback, "NN");
        let model = Baseline::Memo(memo);
        let pred = model.predict(&["Bank".into(), "zzz".into()]);
        assert_eq!(pred, vec!["NN", "NN"]);
    }

    #[test]
    fn major_output_is_input_independent() {
        let train = vec![sent(&["a"], &["SC"])];
        let model = Baseline::Major(fit_major(&train).unwrap());
        assert_eq!(model.predict(&["x".into(), "y".into(), "z".into()]), vec!["SC"; 3]);
        assert_eq!(model.predict(&["q".into()]), vec!["SC"]);
    }

    #[test]
    fn memo_is_exact_on_unambiguous_train() {
        // Every word has exactly one tag, so Memo reproduces gold on train.
        let train = vec![
            sent(&["saya", "makan", "nasi"], &["PRP", "VBT", "NN"]),
            sent(&["dia", "makan"], &["PRP", "VBT"]),
        ];
        let model = Baseline::Memo(fit_memo(&train).unwrap());
        for s in &train {
            assert_eq!(&model.predict(&s.tokens), s.tags.as_ref().unwrap());
        }
    }

    #[test]
    fn text_round_trip() {
        let train = vec![sent(&["bank", "kata"], &["NN", "VB"])];
        for model in [
            Baseline::Major(fit_major(&train).unwrap()),
            Baseline::Memo(fit_memo(&train).unwrap()),
        ] {
            let text = model.to_text();
            let loaded = Baseline::from_text(&text).unwrap();
            assert_eq!(model, loaded);
        }
        assert!(Baseline::from_text("BOGUS x\n").is_err());
        assert!(Baseline::from_text("").is_err());
    }
}
