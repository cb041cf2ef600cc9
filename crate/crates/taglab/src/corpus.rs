//! Corpus ingestion and encoding.
//!
//! The on-disk corpus format is vertical: one `token<TAB>tag` pair per line,
//! sentences separated by blank lines. Multi-word expressions are expected to
//! arrive underscore-joined, i.e. as single tokens. From a training split this
//! module builds the symbol tables (words, the four affix kinds, characters,
//! tags) with the frequency-threshold UNK policy, and produces deterministic
//! k-fold cross-validation splits.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved id for unknown symbols in word/affix/char tables.
pub const UNK_ID: u32 = 0;
/// Reserved id for the padding symbol in word/affix/char tables.
pub const PAD_ID: u32 = 1;
/// Literal padding token, also used verbatim in CRF feature strings.
pub const PAD_SYM: &str = "<pad>";
/// Literal unknown token.
pub const UNK_SYM: &str = "<unk>";

/// One sentence: surface tokens plus (for labeled data) gold tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub tags: Option<Vec<String>>,
}

impl TaggedSentence {
    pub fn new(tokens: Vec<String>, tags: Vec<String>) -> Result<Self> {
        Self::build(tokens, Some(tags))
    }

    pub fn unlabeled(tokens: Vec<String>) -> Result<Self> {
        Self::build(tokens, None)
    }

    fn build(tokens: Vec<String>, tags: Option<Vec<String>>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("sentence has no tokens".into()));
        }
        if let Some(ts) = &tags {
            if ts.len() != tokens.len() {
                return Err(Error::InvalidInput(format!(
                    "{} tokens but {} tags",
                    tokens.len(),
                    ts.len()
                )));
            }
        }
        for tok in &tokens {
            if tok.is_empty() || tok.chars().any(|c| c.is_whitespace()) {
                return Err(Error::InvalidInput(format!(
                    "token {tok:?} is empty or contains whitespace"
                )));
            }
        }
        Ok(TaggedSentence { tokens, tags })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Gold tags, or an error for unlabeled sentences.
    pub fn gold(&self) -> Result<&[String]> {
        self.tags
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("sentence has no gold tags".into()))
    }
}

/// Parse a vertical `token<TAB>tag` corpus. Blank lines end sentences; a
/// final sentence without a trailing blank line is kept.
pub fn parse_vertical_corpus(text: &str) -> Result<Vec<TaggedSentence>> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<String> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if !tokens.is_empty() {
                sentences.push(TaggedSentence::new(
                    std::mem::take(&mut tokens),
                    std::mem::take(&mut tags),
                )?);
            }
            continue;
        }
        let mut fields = line.split('\t');
        let (tok, tag) = match (fields.next(), fields.next(), fields.next()) {
            (Some(tok), Some(tag), None) if !tok.is_empty() && !tag.is_empty() => (tok, tag),
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected `token<TAB>tag`, got {line:?}"),
                })
            }
        };
        if tok.chars().any(|c| c.is_whitespace()) {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("token {tok:?} contains whitespace"),
            });
        }
        tokens.push(tok.to_string());
        tags.push(tag.to_string());
    }
    if !tokens.is_empty() {
        sentences.push(TaggedSentence::new(tokens, tags)?);
    }
    Ok(sentences)
}

/// Parse unlabeled input for tagging: one token per line, blank lines end
/// sentences. Lines that carry a tab keep only the first field, so already
/// tagged files can be re-tagged.
pub fn parse_token_lines(text: &str) -> Result<Vec<TaggedSentence>> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if !tokens.is_empty() {
                sentences.push(TaggedSentence::unlabeled(std::mem::take(&mut tokens))?);
            }
            continue;
        }
        let tok = line.split('\t').next().unwrap_or("");
        if tok.is_empty() || tok.chars().any(|c| c.is_whitespace()) {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("bad token {tok:?}"),
            });
        }
        tokens.push(tok.to_string());
    }
    if !tokens.is_empty() {
        sentences.push(TaggedSentence::unlabeled(tokens)?);
    }
    Ok(sentences)
}

/// Serialize sentences back to the vertical format. Unlabeled sentences get
/// their predictions passed in by the caller instead; this writer requires
/// gold tags.
pub fn write_vertical(sentences: &[TaggedSentence]) -> Result<String> {
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (tok, tag) in s.tokens.iter().zip(s.gold()?) {
            let _ = writeln!(out, "{tok}\t{tag}");
        }
    }
    Ok(out)
}

/// Lowercase a surface form (Unicode-aware) unless `keep_case` is set.
pub fn normalize(word: &str, keep_case: bool) -> String {
    if keep_case {
        word.to_string()
    } else {
        word.to_lowercase()
    }
}

/// Which surfaces get lowercased before lookup.
///
/// `WordsOnly` is the default reading: word and affix lookups always see
/// lowercase while character sequences keep their original case. `All`
/// lowercases characters too; `None` keeps case everywhere (the alternative
/// reading when character features are in play).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LowercaseMode {
    #[default]
    WordsOnly,
    All,
    None,
}

impl LowercaseMode {
    pub fn word_form(&self, surface: &str) -> String {
        match self {
            LowercaseMode::WordsOnly | LowercaseMode::All => normalize(surface, false),
            LowercaseMode::None => surface.to_string(),
        }
    }

    pub fn char_form(&self, surface: &str) -> String {
        match self {
            LowercaseMode::All => normalize(surface, false),
            _ => surface.to_string(),
        }
    }
}

impl std::str::FromStr for LowercaseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "words" => Ok(LowercaseMode::WordsOnly),
            "all" => Ok(LowercaseMode::All),
            "none" => Ok(LowercaseMode::None),
            other => Err(Error::InvalidInput(format!(
                "unknown lowercase mode {other:?} (expected words|all|none)"
            ))),
        }
    }
}

/// The four two/three-character affixes of a word. Words shorter than three
/// characters use the word itself for all four.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffixSet {
    pub p2: String,
    pub p3: String,
    pub s2: String,
    pub s3: String,
}

/// Character-based (not byte-based) affix extraction.
pub fn affixes(word: &str) -> Result<AffixSet> {
    if word.is_empty() {
        return Err(Error::InvalidInput("cannot take affixes of empty word".into()));
    }
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    if n < 3 {
        return Ok(AffixSet {
            p2: word.to_string(),
            p3: word.to_string(),
            s2: word.to_string(),
            s3: word.to_string(),
        });
    }
    let take = |range: std::ops::Range<usize>| chars[range].iter().collect::<String>();
    Ok(AffixSet {
        p2: take(0..2),
        p3: take(0..3),
        s2: take(n - 2..n),
        s3: take(n - 3..n),
    })
}

/// Affix table slots, in the fixed order used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffixKind {
    P2 = 0,
    P3 = 1,
    S2 = 2,
    S3 = 3,
}

pub const AFFIX_KINDS: [AffixKind; 4] = [AffixKind::P2, AffixKind::P3, AffixKind::S2, AffixKind::S3];

impl AffixKind {
    pub fn label(&self) -> &'static str {
        match self {
            AffixKind::P2 => "p2",
            AffixKind::P3 => "p3",
            AffixKind::S2 => "s2",
            AffixKind::S3 => "s3",
        }
    }

    pub fn of<'a>(&self, set: &'a AffixSet) -> &'a str {
        match self {
            AffixKind::P2 => &set.p2,
            AffixKind::P3 => &set.p3,
            AffixKind::S2 => &set.s2,
            AffixKind::S3 => &set.s3,
        }
    }
}

/// String symbol table with reserved `<unk>`=0 and `<pad>`=1 entries.
#[derive(Debug, Clone, PartialEq)]
struct SymbolTable {
    syms: Vec<String>,
    index: HashMap<String, u32>,
}

impl SymbolTable {
    /// Build from the sorted list of kept symbols (reserved entries prepended).
    fn from_kept(kept: Vec<String>) -> Self {
        let mut syms = vec![UNK_SYM.to_string(), PAD_SYM.to_string()];
        syms.extend(kept);
        let index = syms
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        SymbolTable { syms, index }
    }

    fn from_syms(syms: Vec<String>) -> Self {
        let index = syms
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        SymbolTable { syms, index }
    }

    fn id(&self, sym: &str) -> u32 {
        self.index.get(sym).copied().unwrap_or(UNK_ID)
    }

    fn contains(&self, sym: &str) -> bool {
        self.index.contains_key(sym)
    }

    fn len(&self) -> usize {
        self.syms.len()
    }
}

/// Options controlling vocabulary construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabOptions {
    /// Words with training count below this map to UNK (2 drops singletons).
    pub word_min: u32,
    /// Affixes with training count below this map to UNK.
    pub affix_min: u32,
    pub mode: LowercaseMode,
}

impl Default for VocabOptions {
    fn default() -> Self {
        VocabOptions {
            word_min: 2,
            affix_min: 5,
            mode: LowercaseMode::WordsOnly,
        }
    }
}

/// Symbol tables for words, affixes, characters, and tags, frozen after build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "VocabData", try_from = "VocabData")]
pub struct Vocabulary {
    options: VocabOptions,
    words: SymbolTable,
    affix: [SymbolTable; 4],
    chars: Vec<String>,
    char_index: HashMap<char, u32>,
    tags: Vec<String>,
    tag_index: HashMap<String, u32>,
    word_counts: BTreeMap<String, u32>,
    affix_counts: [BTreeMap<String, u32>; 4],
}

/// Serialized mirror of [`Vocabulary`]; lookup maps are rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VocabData {
    options: VocabOptions,
    words: Vec<String>,
    affix: [Vec<String>; 4],
    chars: Vec<String>,
    tags: Vec<String>,
    word_counts: BTreeMap<String, u32>,
    affix_counts: [BTreeMap<String, u32>; 4],
}

impl From<Vocabulary> for VocabData {
    fn from(v: Vocabulary) -> Self {
        VocabData {
            options: v.options,
            words: v.words.syms,
            affix: v.affix.map(|t| t.syms),
            chars: v.chars,
            tags: v.tags,
            word_counts: v.word_counts,
            affix_counts: v.affix_counts,
        }
    }
}

impl TryFrom<VocabData> for Vocabulary {
    type Error = Error;
    fn try_from(d: VocabData) -> Result<Self> {
        let char_index = build_char_index(&d.chars)?;
        let tag_index = d
            .tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            options: d.options,
            words: SymbolTable::from_syms(d.words),
            affix: d.affix.map(SymbolTable::from_syms),
            chars: d.chars,
            char_index,
            tags: d.tags,
            tag_index,
            word_counts: d.word_counts,
            affix_counts: d.affix_counts,
        })
    }
}

fn build_char_index(syms: &[String]) -> Result<HashMap<char, u32>> {
    let mut index = HashMap::new();
    for (i, s) in syms.iter().enumerate() {
        if i as u32 == UNK_ID || i as u32 == PAD_ID {
            continue;
        }
        let mut cs = s.chars();
        match (cs.next(), cs.next()) {
            (Some(c), None) => {
                index.insert(c, i as u32);
            }
            _ => {
                return Err(Error::Format(format!(
                    "character table entry {s:?} is not a single character"
                )))
            }
        }
    }
    Ok(index)
}

impl Vocabulary {
    /// Count symbols over the training split and freeze the tables.
    pub fn build(train: &[TaggedSentence], options: &VocabOptions) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidInput(
                "cannot build a vocabulary from an empty training set".into(),
            ));
        }
        let mut word_counts: BTreeMap<String, u32> = BTreeMap::new();
        let mut affix_counts: [BTreeMap<String, u32>; 4] = Default::default();
        let mut char_set: BTreeMap<char, ()> = BTreeMap::new();
        let mut tag_set: BTreeMap<String, ()> = BTreeMap::new();
        for s in train {
            for tok in &s.tokens {
                let w = options.mode.word_form(tok);
                let afx = affixes(&w)?;
                for kind in AFFIX_KINDS {
                    *affix_counts[kind as usize]
                        .entry(kind.of(&afx).to_string())
                        .or_insert(0) += 1;
                }
                *word_counts.entry(w).or_insert(0) += 1;
                for c in options.mode.char_form(tok).chars() {
                    char_set.insert(c, ());
                }
            }
            for tag in s.gold()? {
                tag_set.insert(tag.clone(), ());
            }
        }

        let kept_words = word_counts
            .iter()
            .filter(|(_, &c)| c >= options.word_min)
            .map(|(w, _)| w.clone())
            .collect();
        let affix = AFFIX_KINDS.map(|kind| {
            let kept = affix_counts[kind as usize]
                .iter()
                .filter(|(_, &c)| c >= options.affix_min)
                .map(|(a, _)| a.clone())
                .collect();
            SymbolTable::from_kept(kept)
        });

        let mut chars = vec![UNK_SYM.to_string(), PAD_SYM.to_string()];
        chars.extend(char_set.keys().map(|c| c.to_string()));
        let char_index = build_char_index(&chars)?;

        let tags: Vec<String> = tag_set.into_keys().collect();
        let tag_index = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();

        Ok(Vocabulary {
            options: options.clone(),
            words: SymbolTable::from_kept(kept_words),
            affix,
            chars,
            char_index,
            tags,
            tag_index,
            word_counts,
            affix_counts,
        })
    }

    pub fn options(&self) -> &VocabOptions {
        &self.options
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_affixes(&self, kind: AffixKind) -> usize {
        self.affix[kind as usize].len()
    }

    pub fn n_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn n_tags(&self) -> usize {
        self.tags.len()
    }

    /// Lookup id of a surface form after case folding; OOV maps to UNK.
    pub fn word_id(&self, surface: &str) -> u32 {
        self.words.id(&self.options.mode.word_form(surface))
    }

    pub fn has_word(&self, surface: &str) -> bool {
        self.words.contains(&self.options.mode.word_form(surface))
    }

    pub fn decode_word(&self, id: u32) -> &str {
        &self.words.syms[id as usize]
    }

    pub fn affix_id(&self, kind: AffixKind, affix: &str) -> u32 {
        self.affix[kind as usize].id(affix)
    }

    pub fn char_id(&self, c: char) -> u32 {
        self.char_index.get(&c).copied().unwrap_or(UNK_ID)
    }

    pub fn tag_id(&self, tag: &str) -> Option<u32> {
        self.tag_index.get(tag).copied()
    }

    pub fn tag_name(&self, id: u32) -> &str {
        &self.tags[id as usize]
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn word_count(&self, word: &str) -> u32 {
        self.word_counts.get(word).copied().unwrap_or(0)
    }

    /// Map a sentence onto ids; OOV symbols become UNK, unknown gold tags are
    /// an error.
    pub fn encode(&self, s: &TaggedSentence, flags: FeatureFlags) -> Result<EncodedSentence> {
        let n = s.len();
        let mut enc = EncodedSentence {
            word_ids: Vec::with_capacity(n),
            affix_ids: Default::default(),
            char_ids: Vec::new(),
            tag_ids: None,
        };
        for tok in &s.tokens {
            let w = self.options.mode.word_form(tok);
            enc.word_ids.push(self.words.id(&w));
            if flags.prefix || flags.suffix {
                let afx = affixes(&w)?;
                for kind in AFFIX_KINDS {
                    if flags.has_affix(kind) {
                        enc.affix_ids[kind as usize]
                            .push(self.affix[kind as usize].id(kind.of(&afx)));
                    }
                }
            }
            if flags.chars {
                enc.char_ids
                    .push(self.options.mode.char_form(tok).chars().map(|c| self.char_id(c)).collect());
            }
        }
        if let Some(tags) = &s.tags {
            let mut ids = Vec::with_capacity(n);
            for tag in tags {
                let id = self.tag_id(tag).ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "tag {tag:?} does not occur in the training tagset"
                    ))
                })?;
                ids.push(id);
            }
            enc.tag_ids = Some(ids);
        }
        Ok(enc)
    }

    /// Encoding of the padding pseudo-token used at window boundaries.
    pub fn pad_token(&self, flags: FeatureFlags) -> PadToken {
        PadToken {
            word_id: PAD_ID,
            affix_ids: [PAD_ID; 4],
            char_ids: if flags.chars { vec![PAD_ID] } else { Vec::new() },
        }
    }
}

/// Which embedding features are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFlags {
    pub prefix: bool,
    pub suffix: bool,
    pub chars: bool,
}

impl FeatureFlags {
    pub const WORDS_ONLY: FeatureFlags = FeatureFlags {
        prefix: false,
        suffix: false,
        chars: false,
    };
    pub const ALL: FeatureFlags = FeatureFlags {
        prefix: true,
        suffix: true,
        chars: true,
    };

    fn has_affix(&self, kind: AffixKind) -> bool {
        match kind {
            AffixKind::P2 | AffixKind::P3 => self.prefix,
            AffixKind::S2 | AffixKind::S3 => self.suffix,
        }
    }
}

/// Sentence mapped onto vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSentence {
    pub word_ids: Vec<u32>,
    /// Indexed by [`AffixKind`]; empty when the kind's feature is disabled.
    pub affix_ids: [Vec<u32>; 4],
    /// Per-token character ids; empty when character features are disabled.
    pub char_ids: Vec<Vec<u32>>,
    pub tag_ids: Option<Vec<u32>>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }

    pub fn gold(&self) -> Result<&[u32]> {
        self.tag_ids
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("encoded sentence has no gold tags".into()))
    }
}

/// Boundary pseudo-token for context windows.
#[derive(Debug, Clone)]
pub struct PadToken {
    pub word_id: u32,
    pub affix_ids: [u32; 4],
    pub char_ids: Vec<u32>,
}

/// One cross-validation fold: disjoint train/dev/test sentence-id lists whose
/// union is the whole corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train_ids: Vec<usize>,
    pub dev_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

impl FoldSplit {
    pub fn validate(&self, n_sentences: usize) -> Result<()> {
        let mut seen = vec![false; n_sentences];
        for &id in self
            .train_ids
            .iter()
            .chain(&self.dev_ids)
            .chain(&self.test_ids)
        {
            if id >= n_sentences {
                return Err(Error::InvalidInput(format!(
                    "fold {}: sentence id {id} out of range (corpus has {n_sentences})",
                    self.fold_id
                )));
            }
            if seen[id] {
                return Err(Error::InvalidInput(format!(
                    "fold {}: sentence id {id} assigned twice",
                    self.fold_id
                )));
            }
            seen[id] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidInput(format!(
                "fold {}: some sentence ids are unassigned",
                self.fold_id
            )));
        }
        Ok(())
    }
}

/// Deterministic k-fold split: seeded shuffle, contiguous fold assignment
/// (sizes differ by at most one), test = fold i, dev = fold (i+1) mod k,
/// train = the rest. Id lists are sorted ascending.
pub fn make_folds(n_sentences: usize, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("need k >= 2 folds, got {k}")));
    }
    if n_sentences < k {
        return Err(Error::InvalidInput(format!(
            "cannot split {n_sentences} sentences into {k} folds"
        )));
    }
    let mut ids: Vec<usize> = (0..n_sentences).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let base = n_sentences / k;
    let extra = n_sentences % k;
    let mut fold_members: Vec<Vec<usize>> = Vec::with_capacity(k);
    let mut cursor = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut members: Vec<usize> = ids[cursor..cursor + size].to_vec();
        members.sort_unstable();
        fold_members.push(members);
        cursor += size;
    }

    let mut splits = Vec::with_capacity(k);
    for f in 0..k {
        let test_ids = fold_members[f].clone();
        let dev_ids = fold_members[(f + 1) % k].clone();
        let mut train_ids: Vec<usize> = (0..k)
            .filter(|&g| g != f && g != (f + 1) % k)
            .flat_map(|g| fold_members[g].iter().copied())
            .collect();
        train_ids.sort_unstable();
        splits.push(FoldSplit {
            fold_id: f,
            train_ids,
            dev_ids,
            test_ids,
        });
    }
    Ok(splits)
}

/// Render splits in the `<fold_id><TAB><role><TAB><sentence_index>` format.
pub fn write_split_file(splits: &[FoldSplit]) -> String {
    let mut out = String::new();
    for split in splits {
        for (role, ids) in [
            ("train", &split.train_ids),
            ("dev", &split.dev_ids),
            ("test", &split.test_ids),
        ] {
            for id in ids {
                let _ = writeln!(out, "{}\t{role}\t{id}", split.fold_id);
            }
        }
    }
    out
}

/// Load a split file (e.g. a published benchmark split) and validate the
/// partition invariants for every fold.
pub fn parse_split_file(text: &str, n_sentences: usize) -> Result<Vec<FoldSplit>> {
    let mut by_fold: BTreeMap<usize, FoldSplit> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        if fields.len() != 3 {
            return Err(err(format!(
                "expected `fold<TAB>role<TAB>index`, got {line:?}"
            )));
        }
        let fold_id: usize = fields[0]
            .parse()
            .map_err(|_| err(format!("bad fold id {:?}", fields[0])))?;
        let idx: usize = fields[2]
            .parse()
            .map_err(|_| err(format!("bad sentence index {:?}", fields[2])))?;
        let split = by_fold.entry(fold_id).or_insert_with(|| FoldSplit {
            fold_id,
            train_ids: Vec::new(),
            dev_ids: Vec::new(),
            test_ids: Vec::new(),
        });
        match fields[1] {
            "train" => split.train_ids.push(idx),
            "dev" => split.dev_ids.push(idx),
            "test" => split.test_ids.push(idx),
            other => return Err(err(format!("unknown role {other:?}"))),
        }
    }
    let mut splits: Vec<FoldSplit> = by_fold.into_values().collect();
    if splits.is_empty() {
        return Err(Error::InvalidInput("split file defines no folds".into()));
    }
    for (i, split) in splits.iter_mut().enumerate() {
        if split.fold_id != i {
            return Err(Error::InvalidInput(format!(
                "fold ids are not contiguous: expected {i}, found {}",
                split.fold_id
            )));
        }
        split.train_ids.sort_unstable();
        split.dev_ids.sort_unstable();
        split.test_ids.sort_unstable();
        split.validate(n_sentences)?;
    }
    Ok(splits)
}

/// Select sentences by id.
pub fn select<'a>(sentences: &'a [TaggedSentence], ids: &[usize]) -> Vec<&'a TaggedSentence> {
    ids.iter().map(|&i| &sentences[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sent(tokens: &[&str], tags: &[&str]) -> TaggedSentence {
        TaggedSentence::new(
            tokens.iter().map(|s| s.to_string()).collect(),
            tags.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn parse_basic() {
        let got = parse_vertical_corpus("saya\tPRP\nmakan\tVBT\n\n").unwrap();
        assert_eq!(got, vec![sent(&["saya", "makan"], &["PRP", "VBT"])]);
    }

    #[test]
    fn parse_empty_is_empty_list() {
        assert_eq!(parse_vertical_corpus("").unwrap(), vec![]);
    }

    #[test]
    fn parse_final_sentence_without_blank_line() {
        let got = parse_vertical_corpus("a\tNN\n\nb\tNN\nc\tVB\n").unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].len(), 1);
        assert_eq!(got[1].len(), 2);
    }

    #[test]
    fn parse_rejects_bad_field_count() {
        let err = parse_vertical_corpus("a\tNN\nbroken line\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse_vertical_corpus("a\tNN\textra\n").is_err());
    }

    #[test]
    fn token_lines_accept_tagged_and_plain() {
        let got = parse_token_lines("saya\nmakan\tVBT\n\nnasi\n").unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].tokens, vec!["saya", "makan"]);
        assert!(got[0].tags.is_none());
    }

    #[test]
    fn affixes_examples() {
        let a = affixes("makan").unwrap();
        assert_eq!((a.p2.as_str(), a.p3.as_str()), ("ma", "mak"));
        assert_eq!((a.s2.as_str(), a.s3.as_str()), ("an", "kan"));

        let d = affixes("di").unwrap();
        assert!([&d.p2, &d.p3, &d.s2, &d.s3].iter().all(|s| *s == "di"));

        let b = affixes("abc").unwrap();
        assert_eq!((b.p2.as_str(), b.p3.as_str()), ("ab", "abc"));
        assert_eq!((b.s2.as_str(), b.s3.as_str()), ("bc", "abc"));

        assert!(affixes("").is_err());
    }

    #[test]
    fn affixes_are_character_based() {
        let a = affixes("čaša").unwrap();
        assert_eq!(a.p2, "ča");
        assert_eq!(a.s3, "aša");
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("Jakarta", false), "jakarta");
        assert_eq!(normalize("Jakarta", true), "Jakarta");
        assert_eq!(normalize("NASA", false), "nasa");
    }

    fn tiny_train() -> Vec<TaggedSentence> {
        vec![
            sent(&["b", "b", "Kapal"], &["NN", "NN", "NNP"]),
            sent(&["a", "kapal"], &["VB", "NNP"]),
        ]
    }

    #[test]
    fn vocabulary_applies_word_threshold() {
        let vocab = Vocabulary::build(&tiny_train(), &VocabOptions::default()).unwrap();
        // "a" is a singleton, "b" occurs twice, "kapal" twice after folding.
        assert_eq!(vocab.word_id("a"), UNK_ID);
        assert_ne!(vocab.word_id("b"), UNK_ID);
        assert_ne!(vocab.word_id("kapal"), UNK_ID);
        assert_eq!(vocab.word_id("Kapal"), vocab.word_id("kapal"));
    }

    #[test]
    fn vocabulary_applies_affix_threshold() {
        let mut train = Vec::new();
        for _ in 0..4 {
            train.push(sent(&["kaki"], &["NN"]));
        }
        let vocab = Vocabulary::build(&train, &VocabOptions::default()).unwrap();
        // "ka" occurs 4 times as a p2 affix: below the threshold of 5.
        assert_eq!(vocab.affix_id(AffixKind::P2, "ka"), UNK_ID);
        train.push(sent(&["kaki"], &["NN"]));
        let vocab = Vocabulary::build(&train, &VocabOptions::default()).unwrap();
        assert_ne!(vocab.affix_id(AffixKind::P2, "ka"), UNK_ID);
    }

    #[test]
    fn vocabulary_keeps_all_tags_and_chars() {
        let vocab = Vocabulary::build(&tiny_train(), &VocabOptions::default()).unwrap();
        for tag in ["NN", "NNP", "VB"] {
            assert!(vocab.tag_id(tag).is_some());
        }
        // Characters keep original case under the default mode.
        assert_ne!(vocab.char_id('K'), UNK_ID);
        assert_ne!(vocab.char_id('k'), UNK_ID);
        assert_eq!(vocab.char_id('z'), UNK_ID);
    }

    #[test]
    fn vocabulary_rejects_empty_train() {
        assert!(Vocabulary::build(&[], &VocabOptions::default()).is_err());
    }

    #[test]
    fn unk_monotonicity() {
        let train = tiny_train();
        let low = Vocabulary::build(
            &train,
            &VocabOptions {
                word_min: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let high = Vocabulary::build(
            &train,
            &VocabOptions {
                word_min: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(high.n_words() <= low.n_words());
        for w in ["a", "b", "kapal"] {
            if high.has_word(w) {
                assert!(low.has_word(w));
            }
        }
    }

    #[test]
    fn encode_maps_oov_to_unk() {
        let vocab = Vocabulary::build(&tiny_train(), &VocabOptions::default()).unwrap();
        let s = sent(&["b", "zzz"], &["NN", "VB"]);
        let enc = vocab.encode(&s, FeatureFlags::ALL).unwrap();
        assert_ne!(enc.word_ids[0], UNK_ID);
        assert_eq!(enc.word_ids[1], UNK_ID);
        // Round-trip of a seen word gives the lowercased surface.
        assert_eq!(vocab.decode_word(vocab.word_id("Kapal")), "kapal");
        // Unseen character maps to the char UNK.
        assert_eq!(enc.char_ids[1][0], UNK_ID);
    }

    #[test]
    fn encode_rejects_unknown_gold_tag() {
        let vocab = Vocabulary::build(&tiny_train(), &VocabOptions::default()).unwrap();
        let s = sent(&["b"], &["XX"]);
        assert!(vocab.encode(&s, FeatureFlags::WORDS_ONLY).is_err());
    }

    #[test]
    fn folds_ten_by_five() {
        let splits = make_folds(10, 5, 0).unwrap();
        assert_eq!(splits.len(), 5);
        for s in &splits {
            assert_eq!(s.test_ids.len(), 2);
            assert_eq!(s.dev_ids.len(), 2);
            assert_eq!(s.train_ids.len(), 6);
            s.validate(10).unwrap();
        }
        // Determinism.
        assert_eq!(splits, make_folds(10, 5, 0).unwrap());
        assert_ne!(splits, make_folds(10, 5, 1).unwrap());
    }

    #[test]
    fn folds_eleven_by_five_sizes() {
        let splits = make_folds(11, 5, 7).unwrap();
        let mut sizes: Vec<usize> = splits.iter().map(|s| s.test_ids.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
    }

    #[test]
    fn folds_reject_too_few_sentences() {
        assert!(make_folds(4, 5, 0).is_err());
        assert!(make_folds(5, 1, 0).is_err());
    }

    #[test]
    fn split_file_round_trip() {
        let splits = make_folds(13, 5, 3).unwrap();
        let text = write_split_file(&splits);
        let loaded = parse_split_file(&text, 13).unwrap();
        assert_eq!(splits, loaded);
    }

    #[test]
    fn split_file_rejects_garbage() {
        assert!(parse_split_file("0\ttrain\n", 5).is_err());
        assert!(parse_split_file("0\tvalidation\t1\n", 5).is_err());
        // Incomplete partition.
        assert!(parse_split_file("0\ttrain\t0\n", 2).is_err());
    }

    proptest! {
        #[test]
        fn fold_partition_property(n in 5usize..60, k in 2usize..6, seed in 0u64..50) {
            prop_assume!(n >= k);
            let splits = make_folds(n, k, seed).unwrap();
            prop_assert_eq!(splits.len(), k);
            for s in &splits {
                s.validate(n).unwrap();
            }
        }

        #[test]
        fn affix_prefix_suffix_property(word in "[a-zA-Z]{3,12}") {
            let a = affixes(&word).unwrap();
            prop_assert!(a.p3.starts_with(&a.p2));
            prop_assert!(a.s3.ends_with(&a.s2));
            prop_assert_eq!(a.p2.chars().count(), 2);
            prop_assert_eq!(a.s3.chars().count(), 3);
        }

        #[test]
        fn parse_serialize_round_trip(
            sents in proptest::collection::vec(
                (proptest::collection::vec("[a-z]{1,6}", 1..5),
                 proptest::collection::vec("(NN|VB|PRP|SC)", 1..5)),
                0..6,
            )
        ) {
            let corpus: Vec<TaggedSentence> = sents
                .into_iter()
                .map(|(toks, mut tags)| {
                    tags.resize(toks.len(), "NN".to_string());
                    TaggedSentence::new(toks, tags).unwrap()
                })
                .collect();
            let text = write_vertical(&corpus).unwrap();
            let parsed = parse_vertical_corpus(&text).unwrap();
            prop_assert_eq!(parsed, corpus);
        }
    }
}
