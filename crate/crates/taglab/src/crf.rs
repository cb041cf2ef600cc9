//! Feature-template linear-chain CRF.
//!
//! For every position and every offset in a context window of size `d`, the
//! model fires five string features: the lowercased word and its two/three
//! character prefixes and suffixes (`w[-1]=saya`, `p2[0]=ma`, `s3[+1]=asi`,
//! ...). Sentence boundaries are padded with a literal `<pad>` token whose
//! affixes are `<pad>` itself. State scores are sums of per-tag feature
//! weights; transition, start, and end scores are learned alongside them.
//! Training minimizes the L2-regularized negative log-likelihood
//!
//! ```text
//! sum_s (logZ_s - score_s(gold)) + (c/2) ||w||^2
//! ```
//!
//! whose gradient is expected minus empirical feature counts, straight from
//! the forward-backward marginals. The objective is convex, so the shared
//! mini-batch optimizer reaches the same optimum as any batch method.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{affixes, normalize, TaggedSentence, PAD_SYM};
use crate::error::{Error, Result};
use crate::lattice::{self, Lattice, TagPath};
use crate::tensor::{ParamId, ParamStore, Tensor};
use crate::training::{self, EpochRecord, TrainConfig, Trainable};

fn fmt_offset(o: i64) -> String {
    match o.cmp(&0) {
        std::cmp::Ordering::Less => format!("{o}"),
        std::cmp::Ordering::Equal => "0".to_string(),
        std::cmp::Ordering::Greater => format!("+{o}"),
    }
}

/// The five feature strings of one (position, offset) pair.
fn push_token_features(out: &mut Vec<String>, word: &str, offset: i64) {
    let off = fmt_offset(offset);
    if word == PAD_SYM {
        out.push(format!("w[{off}]={PAD_SYM}"));
        for kind in ["p2", "p3", "s2", "s3"] {
            out.push(format!("{kind}[{off}]={PAD_SYM}"));
        }
        return;
    }
    let afx = affixes(word).expect("non-empty token");
    out.push(format!("w[{off}]={word}"));
    out.push(format!("p2[{off}]={}", afx.p2));
    out.push(format!("p3[{off}]={}", afx.p3));
    out.push(format!("s2[{off}]={}", afx.s2));
    out.push(format!("s3[{off}]={}", afx.s3));
}

/// Feature strings for position `t` under window size `d`: exactly
/// `5 * (2d + 1)` of them, in offset order.
pub fn extract_features(tokens: &[String], t: usize, d: usize) -> Vec<String> {
    let n = tokens.len() as i64;
    let mut out = Vec::with_capacity(5 * (2 * d + 1));
    for o in -(d as i64)..=(d as i64) {
        let pos = t as i64 + o;
        if pos < 0 || pos >= n {
            push_token_features(&mut out, PAD_SYM, o);
        } else {
            let w = normalize(&tokens[pos as usize], false);
            push_token_features(&mut out, &w, o);
        }
    }
    out
}

/// Dense feature-string index built from training data only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureIndex {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl FeatureIndex {
    pub fn from_names(names: Vec<String>) -> Self {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        FeatureIndex { names, index }
    }

    pub fn id(&self, feature: &str) -> Option<u32> {
        self.index.get(feature).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Index every feature occurring at least `cutoff` times in `train`.
/// Unseen test-time features are simply ignored at scoring time.
pub fn build_feature_index(train: &[TaggedSentence], d: usize, cutoff: u32) -> FeatureIndex {
    let mut counts: HashMap<String, u32> = HashMap::new();
    for s in train {
        for t in 0..s.len() {
            for f in extract_features(&s.tokens, t, d) {
                *counts.entry(f).or_insert(0) += 1;
            }
        }
    }
    let mut names: Vec<String> = counts
        .into_iter()
        .filter(|(_, c)| *c >= cutoff)
        .map(|(f, _)| f)
        .collect();
    names.sort_unstable();
    FeatureIndex::from_names(names)
}

/// Hyperparameters of one CRF run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrfConfig {
    /// Context window size `d`.
    pub window: usize,
    /// L2 coefficient `c`.
    pub l2: f64,
    /// Minimum training count for a feature to be indexed.
    pub feature_cutoff: u32,
    pub train: TrainConfig,
}

impl Default for CrfConfig {
    fn default() -> Self {
        CrfConfig {
            window: 1,
            l2: 1e-3,
            feature_cutoff: 1,
            train: TrainConfig::default(),
        }
    }
}

/// Sentence pre-mapped to active feature ids per position.
#[derive(Debug, Clone)]
pub struct PreparedSentence {
    /// Per position: ids of active (indexed) features.
    pub feats: Vec<Vec<u32>>,
    pub gold: Vec<u32>,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CrfModel {
    pub window: usize,
    pub l2: f64,
    feature_index: FeatureIndex,
    tags: Vec<String>,
    tag_index: HashMap<String, u32>,
    params: ParamStore,
    state_w: ParamId,
    trans: ParamId,
    start: ParamId,
    end: ParamId,
}

impl CrfModel {
    /// Tagset and feature index from training data; weights start at zero
    /// (the objective is convex, so the start point only affects the path).
    pub fn from_train(train: &[TaggedSentence], cfg: &CrfConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidInput("empty training set".into()));
        }
        let mut tags: Vec<String> = Vec::new();
        for s in train {
            for tag in s.gold()? {
                if !tags.contains(tag) {
                    tags.push(tag.clone());
                }
            }
        }
        tags.sort_unstable();
        let feature_index = build_feature_index(train, cfg.window, cfg.feature_cutoff);
        Self::new(cfg.window, cfg.l2, feature_index, tags)
    }

    pub fn new(
        window: usize,
        l2: f64,
        feature_index: FeatureIndex,
        tags: Vec<String>,
    ) -> Result<Self> {
        if tags.is_empty() {
            return Err(Error::InvalidInput("empty tagset".into()));
        }
        let k = tags.len();
        let f = feature_index.len();
        let mut params = ParamStore::new();
        let state_w = params.add("state_w", Tensor::zeros(&[f, k]))?;
        let trans = params.add("trans", Tensor::zeros(&[k, k]))?;
        let start = params.add("start", Tensor::zeros(&[k]))?;
        let end = params.add("end", Tensor::zeros(&[k]))?;
        let tag_index = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(CrfModel {
            window,
            l2,
            feature_index,
            tags,
            tag_index,
            params,
            state_w,
            trans,
            start,
            end,
        })
    }

    /// Randomize weights; useful to check that optimization is
    /// init-independent.
    pub fn randomize(&mut self, scale: f64, seed: u64) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for id in self.params.ids() {
            let shape = self.params.get(id).shape().to_vec();
            *self.params.get_mut(id) = Tensor::uniform(&shape, scale, &mut rng);
        }
    }

    pub fn k(&self) -> usize {
        self.tags.len()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn feature_index(&self) -> &FeatureIndex {
        &self.feature_index
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Map a sentence onto active feature ids; unknown features drop out,
    /// unknown gold tags are an error.
    pub fn prepare(&self, s: &TaggedSentence) -> Result<PreparedSentence> {
        let mut feats = Vec::with_capacity(s.len());
        for t in 0..s.len() {
            let active: Vec<u32> = extract_features(&s.tokens, t, self.window)
                .iter()
                .filter_map(|f| self.feature_index.id(f))
                .collect();
            feats.push(active);
        }
        let gold = match &s.tags {
            Some(tags) => {
                let mut ids = Vec::with_capacity(tags.len());
                for tag in tags {
                    ids.push(*self.tag_index.get(tag).ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "tag {tag:?} does not occur in the training tagset"
                        ))
                    })?);
                }
                ids
            }
            None => Vec::new(),
        };
        Ok(PreparedSentence {
            feats,
            gold,
            tokens: s.tokens.clone(),
        })
    }

    /// State scores are sums of active feature weights per tag;
    /// transition/start/end copied from the parameters.
    pub fn build_lattice(&self, prepared: &PreparedSentence) -> Result<Lattice> {
        let n = prepared.feats.len();
        let k = self.k();
        if n == 0 {
            return Err(Error::InvalidInput("empty sentence".into()));
        }
        let w = self.params.get(self.state_w).data();
        let mut state = vec![0.0; n * k];
        for (t, active) in prepared.feats.iter().enumerate() {
            let row = &mut state[t * k..(t + 1) * k];
            for &f in active {
                let wf = &w[f as usize * k..(f as usize + 1) * k];
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot += wf[j];
                }
            }
        }
        Lattice::from_parts(
            n,
            k,
            state,
            self.params.get(self.trans).data().to_vec(),
            self.params.get(self.start).data().to_vec(),
            self.params.get(self.end).data().to_vec(),
        )
    }

    /// Viterbi decoding over the feature lattice.
    pub fn predict(&self, prepared: &PreparedSentence) -> Result<TagPath> {
        let lat = self.build_lattice(prepared)?;
        Ok(lattice::viterbi(&lat).0)
    }

    /// Predict tag symbols for raw tokens.
    pub fn tag(&self, tokens: &[String]) -> Result<Vec<String>> {
        let s = TaggedSentence::unlabeled(tokens.to_vec())?;
        let path = self.predict(&self.prepare(&s)?)?;
        Ok(path.tags.iter().map(|&j| self.tags[j].clone()).collect())
    }

    /// Negative log-likelihood and gradient over a batch: the data term sums
    /// `logZ - score(gold)` per sentence, plus the full `(c/2)||w||^2`
    /// regularizer (all weight groups included). Gradients accumulate into
    /// the parameter store, replacing whatever was there.
    pub fn nll_grad(&mut self, batch: &[&PreparedSentence]) -> Result<f64> {
        self.params.zero_grads();
        self.accumulate_nll(batch, 1.0)
    }

    /// Data term over the batch plus `l2_scale` of the global regularizer.
    fn accumulate_nll(&mut self, batch: &[&PreparedSentence], l2_scale: f64) -> Result<f64> {
        let k = self.k();
        let mut loss = 0.0;
        for s in batch {
            if s.gold.len() != s.feats.len() {
                return Err(Error::InvalidInput(
                    "cannot train on a sentence without gold tags".into(),
                ));
            }
            let lat = self.build_lattice(s)?;
            let marg = lattice::marginals(&lat);
            let gold_path = TagPath::new(s.gold.iter().map(|&g| g as usize).collect());
            loss += marg.log_z - lattice::path_score(&lat, &gold_path)?;

            {
                let wg = self.params.get_mut(self.state_w).grad_mut();
                for (t, active) in s.feats.iter().enumerate() {
                    let node = marg.node_row(t);
                    let gold_t = s.gold[t] as usize;
                    for &f in active {
                        let row = &mut wg[f as usize * k..(f as usize + 1) * k];
                        for (j, slot) in row.iter_mut().enumerate() {
                            *slot += node[j];
                        }
                        row[gold_t] -= 1.0;
                    }
                }
            }
            {
                let tg = self.params.get_mut(self.trans).grad_mut();
                let n = s.feats.len();
                for t in 0..n.saturating_sub(1) {
                    for i in 0..k {
                        for j in 0..k {
                            tg[i * k + j] += marg.edge(t, i, j);
                        }
                    }
                    tg[s.gold[t] as usize * k + s.gold[t + 1] as usize] -= 1.0;
                }
            }
            {
                let sg = self.params.get_mut(self.start).grad_mut();
                for (j, slot) in sg.iter_mut().enumerate() {
                    *slot += marg.node(0, j);
                }
                sg[s.gold[0] as usize] -= 1.0;
            }
            {
                let n = s.feats.len();
                let eg = self.params.get_mut(self.end).grad_mut();
                for (j, slot) in eg.iter_mut().enumerate() {
                    *slot += marg.node(n - 1, j);
                }
                eg[s.gold[n - 1] as usize] -= 1.0;
            }
        }

        if self.l2 > 0.0 && l2_scale > 0.0 {
            let c = self.l2 * l2_scale;
            let mut sq = 0.0;
            for id in self.params.ids() {
                let (data, grad) = self.params.get_mut(id).data_and_grad_mut();
                for (v, g) in data.iter().zip(grad.iter_mut()) {
                    sq += v * v;
                    *g += c * v;
                }
            }
            loss += 0.5 * c * sq;
        }
        Ok(loss)
    }
}

impl Trainable for CrfModel {
    type Sent = PreparedSentence;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn batch_backward(
        &mut self,
        batch: &[&PreparedSentence],
        data_frac: f64,
        _rng: &mut ChaCha20Rng,
    ) -> Result<f64> {
        self.params.zero_grads();
        let loss = self.accumulate_nll(batch, data_frac)?;
        let inv = 1.0 / batch.len() as f64;
        self.params.scale_grads(inv);
        Ok(loss * inv)
    }

    fn predict_ids(&self, sent: &PreparedSentence) -> Result<Vec<u32>> {
        Ok(self.predict(sent)?.tags.iter().map(|&j| j as u32).collect())
    }

    fn gold_ids<'a>(&self, sent: &'a PreparedSentence) -> Result<&'a [u32]> {
        if sent.gold.len() != sent.feats.len() {
            return Err(Error::InvalidInput("sentence has no gold tags".into()));
        }
        Ok(&sent.gold)
    }

    fn tag_names(&self) -> &[String] {
        &self.tags
    }
}

/// Build a model from the training split and run the shared loop.
pub fn train_crf(
    cfg: &CrfConfig,
    train: &[TaggedSentence],
    dev: &[TaggedSentence],
) -> Result<(CrfModel, Vec<EpochRecord>)> {
    let mut model = CrfModel::from_train(train, cfg)?;
    let prepared_train: Vec<PreparedSentence> = train
        .iter()
        .map(|s| model.prepare(s))
        .collect::<Result<_>>()?;
    let prepared_dev: Vec<PreparedSentence> = dev
        .iter()
        .map(|s| model.prepare(s))
        .collect::<Result<_>>()?;
    let history = training::train_loop(&mut model, &cfg.train, &prepared_train, &prepared_dev)?;
    Ok((model, history))
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

    fn toks(tokens: &[&str]) -> Vec<String> {
        tokens.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn features_window_one() {
        let feats = extract_features(&toks(&["saya", "makan", "nasi"]), 1, 1);
        assert_eq!(feats.len(), 15);
        assert!(feats.contains(&"w[-1]=saya".to_string()));
        assert!(feats.contains(&"p3[0]=mak".to_string()));
        assert!(feats.contains(&"s3[+1]=asi".to_string()));
        assert!(feats.contains(&"s2[0]=an".to_string()));
    }

    #[test]
    fn features_pad_boundaries() {
        let feats = extract_features(&toks(&["saya"]), 0, 1);
        assert_eq!(feats.len(), 15);
        assert!(feats.contains(&"w[-1]=<pad>".to_string()));
        assert!(feats.contains(&"w[+1]=<pad>".to_string()));
        assert!(feats.contains(&"p2[-1]=<pad>".to_string()));
        assert!(feats.contains(&"s3[+1]=<pad>".to_string()));
    }

    #[test]
    fn features_window_zero() {
        let feats = extract_features(&toks(&["Makan"]), 0, 0);
        assert_eq!(
            feats,
            vec![
                "w[0]=makan",
                "p2[0]=ma",
                "p3[0]=mak",
                "s2[0]=an",
                "s3[0]=kan"
            ]
        );
    }

    #[test]
    fn feature_count_formula() {
        let tokens = toks(&["a", "bb", "ccc", "dddd"]);
        for d in 0..4 {
            for t in 0..tokens.len() {
                assert_eq!(extract_features(&tokens, t, d).len(), 5 * (2 * d + 1));
            }
        }
    }

    #[test]
    fn feature_index_covers_train_only() {
        let train = vec![sent(&["makan", "nasi"], &["VBT", "NN"])];
        let idx = build_feature_index(&train, 1, 1);
        assert!(idx.id("w[0]=makan").is_some());
        assert!(idx.id("w[0]=tidur").is_none());
        // Monotone in corpus size.
        let bigger = vec![
            sent(&["makan", "nasi"], &["VBT", "NN"]),
            sent(&["tidur"], &["VBI"]),
        ];
        assert!(build_feature_index(&bigger, 1, 1).len() >= idx.len());
    }

    #[test]
    fn feature_cutoff_filters() {
        let train = vec![sent(&["a", "a", "b"], &["X", "X", "Y"])];
        let all = build_feature_index(&train, 0, 1);
        let cut = build_feature_index(&train, 0, 2);
        assert!(all.id("w[0]=b").is_some());
        assert!(cut.id("w[0]=b").is_none());
        assert!(cut.id("w[0]=a").is_some());
    }

    #[test]
    fn zero_weight_lattice_is_zero() {
        let train = vec![sent(&["makan", "nasi"], &["VBT", "NN"])];
        let model = CrfModel::from_train(&train, &CrfConfig::default()).unwrap();
        let prep = model.prepare(&train[0]).unwrap();
        let lat = model.build_lattice(&prep).unwrap();
        for t in 0..2 {
            for j in 0..model.k() {
                assert_eq!(lat.state(t, j), 0.0);
            }
        }
    }

    #[test]
    fn single_feature_weight_flows_to_state() {
        let train = vec![sent(&["x"], &["A", ])];
        let cfg = CrfConfig {
            window: 0,
            ..Default::default()
        };
        let mut model = CrfModel::from_train(&train, &cfg).unwrap();
        let fid = model.feature_index().id("w[0]=x").unwrap() as usize;
        let k = model.k();
        let sw = model.params.id("state_w").unwrap();
        model.params.get_mut(sw).data_mut()[fid * k] = 2.0;
        let prep = model.prepare(&train[0]).unwrap();
        let lat = model.build_lattice(&prep).unwrap();
        assert_eq!(lat.state(0, 0), 2.0);
        // Additivity: the other four features each contribute another 0.5.
        for f in ["p2[0]=x", "p3[0]=x", "s2[0]=x", "s3[0]=x"] {
            let fid = model.feature_index().id(f).unwrap() as usize;
            model.params.get_mut(sw).data_mut()[fid * k] = 0.5;
        }
        let lat = model.build_lattice(&prep).unwrap();
        assert_eq!(lat.state(0, 0), 4.0);
    }

    #[test]
    fn zero_weight_loss_is_log_k() {
        let train = vec![sent(&["a"], &["NN"]), sent(&["b"], &["VB"])];
        let mut model = CrfModel::from_train(&train, &CrfConfig {
            l2: 0.0,
            ..Default::default()
        })
        .unwrap();
        let prep = model.prepare(&train[0]).unwrap();
        let loss = model.nll_grad(&[&prep]).unwrap();
        assert!((loss - (model.k() as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn prediction_on_zero_model_is_tag_zero() {
        let train = vec![sent(&["a", "b"], &["NN", "VB"])];
        let model = CrfModel::from_train(&train, &CrfConfig::default()).unwrap();
        let prep = model.prepare(&train[0]).unwrap();
        let path = model.predict(&prep).unwrap();
        assert_eq!(path.tags, vec![0, 0]);
        // One feature favoring tag 1 flips a single position.
        let mut model = model;
        let fid = model.feature_index().id("w[0]=b").unwrap() as usize;
        let k = model.k();
        let sw = model.params.id("state_w").unwrap();
        model.params.get_mut(sw).data_mut()[fid * k + 1] = 3.0;
        let path = model.predict(&prep).unwrap();
        assert_eq!(path.tags, vec![0, 1]);
    }

    #[test]
    fn unknown_test_features_are_ignored() {
        let train = vec![sent(&["makan"], &["VBT"])];
        let cfg = CrfConfig {
            window: 0,
            ..Default::default()
        };
        let model = CrfModel::from_train(&train, &cfg).unwrap();
        let test = TaggedSentence::unlabeled(toks(&["zzzzz"])).unwrap();
        let prep = model.prepare(&test).unwrap();
        // All features unseen: no active ids, score 0 contribution.
        assert!(prep.feats[0].is_empty());
        assert!(model.predict(&prep).is_ok());
    }

    #[test]
    fn unknown_gold_tag_is_an_error() {
        let train = vec![sent(&["makan"], &["VBT"])];
        let model = CrfModel::from_train(&train, &CrfConfig::default()).unwrap();
        assert!(model.prepare(&sent(&["makan"], &["XX"])).is_err());
    }

    #[test]
    fn optimum_of_single_sentence_has_vanishing_gradient() {
        // With c=0 and one training sentence, NLL approaches 0 and the
        // gradient norm shrinks toward 0 as training converges.
        let train = vec![sent(&["makan", "nasi"], &["VBT", "NN"])];
        let cfg = CrfConfig {
            window: 0,
            l2: 0.0,
            train: TrainConfig {
                initial_lr: 0.5,
                max_epochs: 150,
                seed: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let (mut model, _) = train_crf(&cfg, &train, &train).unwrap();
        let prep = model.prepare(&train[0]).unwrap();
        let loss = model.nll_grad(&[&prep]).unwrap();
        assert!(loss < 1e-2, "loss {loss}");
        let norm = model.params().grad_norm().unwrap();
        assert!(norm < 5e-2, "gradient norm {norm}");
    }
}
