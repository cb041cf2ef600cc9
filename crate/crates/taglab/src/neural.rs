//! Neural taggers: embed, encode, predict.
//!
//! Every architecture is the same three-step pipeline. The embedding step
//! concatenates a word vector with optional prefix/suffix vectors and a
//! max-pooled character-CNN vector. The encoding step turns embeddings into
//! per-tag scores `o_t`, either with a feedforward network over a
//! `2d+1`-token window
//!
//! ```text
//! z_t = x_{t-d} ++ ... ++ x_{t+d}
//! o_t = W2 (tanh(W1 z_t + b1) * r_t) + b2
//! ```
//!
//! or with a biLSTM whose per-position forward/backward states are
//! concatenated and passed through the same feedforward head. The prediction
//! step is either per-position softmax with greedy decoding or a CRF layer
//! that treats `o_t` as state scores and decodes with Viterbi. Dropout
//! (inverted scaling, one rate everywhere) applies to embedding outputs, to
//! the biLSTM input, and as the `r_t` hidden mask; evaluation never samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AffixKind, EncodedSentence, FeatureFlags, Vocabulary, AFFIX_KINDS, PAD_ID};
use crate::error::{Error, Result};
use crate::graph::{softmax, Graph, NodeId};
use crate::lattice::{self, Lattice, TagPath};
use crate::tensor::{ParamId, ParamStore, Tensor};
use crate::training::{self, EpochRecord, TrainConfig, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Ff,
    Bilstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Softmax,
    Crf,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ff" => Ok(EncoderKind::Ff),
            "bilstm" => Ok(EncoderKind::Bilstm),
            other => Err(Error::InvalidInput(format!(
                "unknown encoder {other:?} (expected ff|bilstm)"
            ))),
        }
    }
}

impl std::str::FromStr for PredictorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(PredictorKind::Softmax),
            "crf" => Ok(PredictorKind::Crf),
            other => Err(Error::InvalidInput(format!(
                "unknown predictor {other:?} (expected softmax|crf)"
            ))),
        }
    }
}

/// Architecture and dimension choices for one neural tagger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralConfig {
    pub features: FeatureFlags,
    pub encoder: EncoderKind,
    pub predictor: PredictorKind,
    /// Context window `d` of the feedforward encoder.
    pub window: usize,
    pub dropout: f64,
    pub char_filter_widths: Vec<usize>,
    pub word_dim: usize,
    pub affix_dim: usize,
    pub char_dim: usize,
    /// Filters per CNN width.
    pub char_filters: usize,
    /// Hidden units of the feedforward head and of each LSTM direction.
    pub hidden: usize,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        NeuralConfig {
            features: FeatureFlags::ALL,
            encoder: EncoderKind::Bilstm,
            predictor: PredictorKind::Crf,
            window: 2,
            dropout: 0.5,
            char_filter_widths: vec![3],
            word_dim: 100,
            affix_dim: 20,
            char_dim: 30,
            char_filters: 30,
            hidden: 100,
        }
    }
}

impl NeuralConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidInput(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.features.chars
            && (self.char_filter_widths.is_empty()
                || self.char_filter_widths.iter().any(|&w| w == 0))
        {
            return Err(Error::InvalidInput(
                "character features need at least one nonzero filter width".into(),
            ));
        }
        if self.word_dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidInput("zero-sized layer".into()));
        }
        Ok(())
    }

    /// Length of one token embedding `x_t` under the feature flags.
    pub fn embedding_dim(&self) -> usize {
        let mut dim = self.word_dim;
        if self.features.prefix {
            dim += 2 * self.affix_dim;
        }
        if self.features.suffix {
            dim += 2 * self.affix_dim;
        }
        if self.features.chars {
            dim += self.char_filters * self.char_filter_widths.len();
        }
        dim
    }
}

/// Dropout context for one forward pass.
pub enum ForwardMode<'a> {
    Eval,
    Train { rng: &'a mut ChaCha20Rng },
}

impl ForwardMode<'_> {
    /// Inverted-dropout mask, or None in eval mode / at rate zero.
    fn sample_mask(&mut self, len: usize, p: f64) -> Option<Vec<f64>> {
        match self {
            ForwardMode::Eval => None,
            ForwardMode::Train { rng } => {
                if p <= 0.0 {
                    return None;
                }
                let keep = 1.0 - p;
                Some(
                    (0..len)
                        .map(|_| {
                            if rng.random::<f64>() < p {
                                0.0
                            } else {
                                1.0 / keep
                            }
                        })
                        .collect(),
                )
            }
        }
    }
}

/// Resolved parameter handles; layout depends on the config.
#[derive(Debug, Clone)]
struct ParamIds {
    word_emb: ParamId,
    affix_emb: [Option<ParamId>; 4],
    char_emb: Option<ParamId>,
    cnn: Vec<(ParamId, ParamId)>,
    lstm: Option<LstmIds>,
    enc_w1: ParamId,
    enc_b1: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    crf: Option<(ParamId, ParamId, ParamId)>,
}

#[derive(Debug, Clone, Copy)]
struct LstmIds {
    fw_wx: ParamId,
    fw_wh: ParamId,
    fw_b: ParamId,
    bw_wx: ParamId,
    bw_wh: ParamId,
    bw_b: ParamId,
}

/// A complete neural tagger: config, parameters, and the vocabulary that
/// fixes every table size.
#[derive(Debug, Clone)]
pub struct TaggerModel {
    pub config: NeuralConfig,
    pub vocab: Vocabulary,
    params: ParamStore,
    ids: ParamIds,
}

fn emb_init(dim: usize) -> f64 {
    (3.0 / dim as f64).sqrt()
}

fn dense_init(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl TaggerModel {
    /// Fresh model with seeded initialization: embeddings uniform
    /// +-sqrt(3/dim), dense layers uniform +-sqrt(6/(fan_in+fan_out)), LSTM
    /// forget-gate bias 1, CRF scores 0.
    pub fn new(config: NeuralConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let k = vocab.n_tags();
        if k == 0 {
            return Err(Error::InvalidInput("vocabulary has no tags".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();

        let word_emb = params.add(
            "word_emb",
            Tensor::uniform(&[vocab.n_words(), config.word_dim], emb_init(config.word_dim), &mut rng),
        )?;
        let mut affix_emb = [None; 4];
        for kind in AFFIX_KINDS {
            let wanted = match kind {
                AffixKind::P2 | AffixKind::P3 => config.features.prefix,
                AffixKind::S2 | AffixKind::S3 => config.features.suffix,
            };
            if wanted {
                let name = format!("{}_emb", kind.label());
                affix_emb[kind as usize] = Some(params.add(
                    &name,
                    Tensor::uniform(
                        &[vocab.n_affixes(kind), config.affix_dim],
                        emb_init(config.affix_dim),
                        &mut rng,
                    ),
                )?);
            }
        }
        let mut char_emb = None;
        let mut cnn = Vec::new();
        if config.features.chars {
            char_emb = Some(params.add(
                "char_emb",
                Tensor::uniform(
                    &[vocab.n_chars(), config.char_dim],
                    emb_init(config.char_dim),
                    &mut rng,
                ),
            )?);
            for &w in &config.char_filter_widths {
                let fan_in = w * config.char_dim;
                let filters = params.add(
                    &format!("cnn{w}_filters"),
                    Tensor::uniform(
                        &[config.char_filters, fan_in],
                        dense_init(fan_in, config.char_filters),
                        &mut rng,
                    ),
                )?;
                let bias = params.add(&format!("cnn{w}_bias"), Tensor::zeros(&[config.char_filters]))?;
                cnn.push((filters, bias));
            }
        }

        let emb_dim = config.embedding_dim();
        let lstm = match config.encoder {
            EncoderKind::Ff => None,
            EncoderKind::Bilstm => {
                let h = config.hidden;
                let mut dir = |prefix: &str| -> Result<(ParamId, ParamId, ParamId)> {
                    let wx = params.add(
                        &format!("{prefix}_wx"),
                        Tensor::uniform(&[4 * h, emb_dim], dense_init(emb_dim, h), &mut rng),
                    )?;
                    let wh = params.add(
                        &format!("{prefix}_wh"),
                        Tensor::uniform(&[4 * h, h], dense_init(h, h), &mut rng),
                    )?;
                    let mut b = Tensor::zeros(&[4 * h]);
                    // Gate layout [input, forget, output, candidate]:
                    // forget-gate bias starts at 1.
                    for v in &mut b.data_mut()[h..2 * h] {
                        *v = 1.0;
                    }
                    let b = params.add(&format!("{prefix}_b"), b)?;
                    Ok((wx, wh, b))
                };
                let (fw_wx, fw_wh, fw_b) = dir("lstm_fw")?;
                let (bw_wx, bw_wh, bw_b) = dir("lstm_bw")?;
                Some(LstmIds {
                    fw_wx,
                    fw_wh,
                    fw_b,
                    bw_wx,
                    bw_wh,
                    bw_b,
                })
            }
        };

        let head_in = match config.encoder {
            EncoderKind::Ff => (2 * config.window + 1) * emb_dim,
            EncoderKind::Bilstm => 2 * config.hidden,
        };
        let enc_w1 = params.add(
            "enc_w1",
            Tensor::uniform(&[config.hidden, head_in], dense_init(head_in, config.hidden), &mut rng),
        )?;
        let enc_b1 = params.add("enc_b1", Tensor::zeros(&[config.hidden]))?;
        let out_w = params.add(
            "out_w",
            Tensor::uniform(&[k, config.hidden], dense_init(config.hidden, k), &mut rng),
        )?;
        let out_b = params.add("out_b", Tensor::zeros(&[k]))?;

        let crf = match config.predictor {
            PredictorKind::Softmax => None,
            PredictorKind::Crf => Some((
                params.add("crf_trans", Tensor::zeros(&[k, k]))?,
                params.add("crf_start", Tensor::zeros(&[k]))?,
                params.add("crf_end", Tensor::zeros(&[k]))?,
            )),
        };

        Ok(TaggerModel {
            config,
            vocab,
            params,
            ids: ParamIds {
                word_emb,
                affix_emb,
                char_emb,
                cnn,
                lstm,
                enc_w1,
                enc_b1,
                out_w,
                out_b,
                crf,
            },
        })
    }

    /// Rebuild a model around an existing parameter store (deserialization).
    pub fn from_parts(config: NeuralConfig, vocab: Vocabulary, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let mut affix_emb = [None; 4];
        for kind in AFFIX_KINDS {
            let name = format!("{}_emb", kind.label());
            if params.id(&name).is_ok() {
                affix_emb[kind as usize] = Some(params.id(&name)?);
            }
        }
        let char_emb = params.id("char_emb").ok();
        let mut cnn = Vec::new();
        if config.features.chars {
            for &w in &config.char_filter_widths {
                cnn.push((
                    params.id(&format!("cnn{w}_filters"))?,
                    params.id(&format!("cnn{w}_bias"))?,
                ));
            }
        }
        let lstm = match config.encoder {
            EncoderKind::Ff => None,
            EncoderKind::Bilstm => Some(LstmIds {
                fw_wx: params.id("lstm_fw_wx")?,
                fw_wh: params.id("lstm_fw_wh")?,
                fw_b: params.id("lstm_fw_b")?,
                bw_wx: params.id("lstm_bw_wx")?,
                bw_wh: params.id("lstm_bw_wh")?,
                bw_b: params.id("lstm_bw_b")?,
            }),
        };
        let crf = match config.predictor {
            PredictorKind::Softmax => None,
            PredictorKind::Crf => Some((
                params.id("crf_trans")?,
                params.id("crf_start")?,
                params.id("crf_end")?,
            )),
        };
        let ids = ParamIds {
            word_emb: params.id("word_emb")?,
            affix_emb,
            char_emb,
            cnn,
            lstm,
            enc_w1: params.id("enc_w1")?,
            enc_b1: params.id("enc_b1")?,
            out_w: params.id("out_w")?,
            out_b: params.id("out_b")?,
            crf,
        };
        Ok(TaggerModel {
            config,
            vocab,
            params,
            ids,
        })
    }

    pub fn k(&self) -> usize {
        self.vocab.n_tags()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Max-pooled character CNN over one token's character ids; sequences
    /// shorter than the widest filter are padded with the char PAD id.
    fn char_cnn(&self, g: &mut Graph, char_ids: &[u32]) -> NodeId {
        let widest = self.config.char_filter_widths.iter().copied().max().unwrap_or(1);
        let mut ids: Vec<u32> = char_ids.to_vec();
        while ids.len() < widest {
            ids.push(PAD_ID);
        }
        let char_emb = self.ids.char_emb.expect("char features enabled");
        let chars: Vec<NodeId> = ids
            .iter()
            .map(|&c| g.lookup(&self.params, char_emb, c as usize))
            .collect();
        let mut outs = Vec::with_capacity(self.config.char_filter_widths.len());
        for (wi, &w) in self.config.char_filter_widths.iter().enumerate() {
            let (filters, bias) = self.ids.cnn[wi];
            let mut convs = Vec::with_capacity(chars.len() - w + 1);
            for j in 0..=chars.len() - w {
                let window = g.concat(&chars[j..j + w]);
                let a = g.affine(&self.params, filters, bias, window);
                convs.push(g.relu(a));
            }
            outs.push(g.max_pool(&convs));
        }
        if outs.len() == 1 {
            outs[0]
        } else {
            g.concat(&outs)
        }
    }

    /// Public entry for checking the CNN in isolation.
    pub fn char_cnn_values(&self, char_ids: &[u32]) -> Result<Vec<f64>> {
        if char_ids.is_empty() {
            return Err(Error::InvalidInput("empty character sequence".into()));
        }
        let mut g = Graph::new();
        let out = self.char_cnn(&mut g, char_ids);
        Ok(g.value(out).to_vec())
    }

    /// Embedding of one token position (or of the boundary padding token when
    /// `token` is None). Feature order: word, p2, p3, s2, s3, chars.
    fn embed_one(
        &self,
        g: &mut Graph,
        sent: &EncodedSentence,
        token: Option<usize>,
        mode: &mut ForwardMode,
    ) -> NodeId {
        let pad = self.vocab.pad_token(self.config.features);
        let word_id = match token {
            Some(t) => sent.word_ids[t],
            None => pad.word_id,
        };
        let mut parts = vec![g.lookup(&self.params, self.ids.word_emb, word_id as usize)];
        for kind in AFFIX_KINDS {
            if let Some(table) = self.ids.affix_emb[kind as usize] {
                let id = match token {
                    Some(t) => sent.affix_ids[kind as usize][t],
                    None => pad.affix_ids[kind as usize],
                };
                parts.push(g.lookup(&self.params, table, id as usize));
            }
        }
        if self.config.features.chars {
            let ids: &[u32] = match token {
                Some(t) => &sent.char_ids[t],
                None => &pad.char_ids,
            };
            parts.push(self.char_cnn(g, ids));
        }
        let x = g.concat(&parts);
        match mode.sample_mask(self.config.embedding_dim(), self.config.dropout) {
            Some(mask) => g.mul_mask(x, mask),
            None => x,
        }
    }

    /// Embedding sequence `x_1 .. x_n` with embedding-output dropout.
    fn embed_tokens(
        &self,
        g: &mut Graph,
        sent: &EncodedSentence,
        mode: &mut ForwardMode,
    ) -> Vec<NodeId> {
        (0..sent.len())
            .map(|t| self.embed_one(g, sent, Some(t), mode))
            .collect()
    }

    /// Feedforward head shared by both encoders:
    /// `W2 (tanh(W1 x + b1) * r) + b2`.
    fn ff_head(&self, g: &mut Graph, x: NodeId, mode: &mut ForwardMode) -> NodeId {
        let a = g.affine(&self.params, self.ids.enc_w1, self.ids.enc_b1, x);
        let h = g.tanh(a);
        let h = match mode.sample_mask(self.config.hidden, self.config.dropout) {
            Some(mask) => g.mul_mask(h, mask),
            None => h,
        };
        g.affine(&self.params, self.ids.out_w, self.ids.out_b, h)
    }

    fn encode_ff(
        &self,
        g: &mut Graph,
        sent: &EncodedSentence,
        xs: &[NodeId],
        mode: &mut ForwardMode,
    ) -> Vec<NodeId> {
        let d = self.config.window as i64;
        let n = xs.len() as i64;
        // One shared boundary embedding; its gradient accumulates once per use.
        let pad_x = if d > 0 {
            Some(self.embed_one(g, sent, None, mode))
        } else {
            None
        };
        (0..n)
            .map(|t| {
                let window: Vec<NodeId> = (-d..=d)
                    .map(|o| {
                        let pos = t + o;
                        if pos < 0 || pos >= n {
                            pad_x.expect("pad embedding exists when d > 0")
                        } else {
                            xs[pos as usize]
                        }
                    })
                    .collect();
                let z = if window.len() == 1 {
                    window[0]
                } else {
                    g.concat(&window)
                };
                self.ff_head(g, z, mode)
            })
            .collect()
    }

    fn lstm_direction(
        &self,
        g: &mut Graph,
        xs: &[NodeId],
        wx: ParamId,
        wh: ParamId,
        b: ParamId,
        reverse: bool,
    ) -> Vec<NodeId> {
        let h = self.config.hidden;
        let n = xs.len();
        let mut h_prev = g.input(vec![0.0; h]);
        let mut c_prev = g.input(vec![0.0; h]);
        let mut states = vec![h_prev; n];
        let order: Vec<usize> = if reverse {
            (0..n).rev().collect()
        } else {
            (0..n).collect()
        };
        for t in order {
            let gx = g.matvec(&self.params, wx, xs[t]);
            let gh = g.matvec(&self.params, wh, h_prev);
            let sum = g.add(gx, gh);
            let gates = g.add_bias(&self.params, sum, b);
            let i_raw = g.slice(gates, 0, h);
            let f_raw = g.slice(gates, h, h);
            let o_raw = g.slice(gates, 2 * h, h);
            let c_raw = g.slice(gates, 3 * h, h);
            let i = g.sigmoid(i_raw);
            let f = g.sigmoid(f_raw);
            let o = g.sigmoid(o_raw);
            let cand = g.tanh(c_raw);
            let keep = g.hadamard(f, c_prev);
            let write = g.hadamard(i, cand);
            let c = g.add(keep, write);
            let c_act = g.tanh(c);
            let h_t = g.hadamard(o, c_act);
            states[t] = h_t;
            h_prev = h_t;
            c_prev = c;
        }
        states
    }

    fn encode_bilstm(
        &self,
        g: &mut Graph,
        xs: &[NodeId],
        mode: &mut ForwardMode,
    ) -> Vec<NodeId> {
        let lstm = self.ids.lstm.as_ref().expect("bilstm encoder");
        // Input dropout before the recurrence, one mask per position.
        let inputs: Vec<NodeId> = xs
            .iter()
            .map(|&x| {
                match mode.sample_mask(self.config.embedding_dim(), self.config.dropout) {
                    Some(mask) => g.mul_mask(x, mask),
                    None => x,
                }
            })
            .collect();
        let fw = self.lstm_direction(g, &inputs, lstm.fw_wx, lstm.fw_wh, lstm.fw_b, false);
        let bw = self.lstm_direction(g, &inputs, lstm.bw_wx, lstm.bw_wh, lstm.bw_b, true);
        (0..xs.len())
            .map(|t| {
                let h = g.concat(&[fw[t], bw[t]]);
                self.ff_head(g, h, mode)
            })
            .collect()
    }

    /// Per-position output scores `o_t` (length K each).
    fn forward(
        &self,
        g: &mut Graph,
        sent: &EncodedSentence,
        mode: &mut ForwardMode,
    ) -> Result<Vec<NodeId>> {
        if sent.is_empty() {
            return Err(Error::InvalidInput("empty sentence".into()));
        }
        let xs = self.embed_tokens(g, sent, mode);
        Ok(match self.config.encoder {
            EncoderKind::Ff => self.encode_ff(g, sent, &xs, mode),
            EncoderKind::Bilstm => self.encode_bilstm(g, &xs, mode),
        })
    }

    /// Eval-mode output scores, for inspection and decoding.
    pub fn scores(&self, sent: &EncodedSentence) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let outs = self.forward(&mut g, sent, &mut ForwardMode::Eval)?;
        Ok(outs.iter().map(|&o| g.value(o).to_vec()).collect())
    }

    fn loss_node(
        &self,
        g: &mut Graph,
        outs: &[NodeId],
        gold: &[u32],
    ) -> Result<NodeId> {
        match self.config.predictor {
            PredictorKind::Softmax => {
                let per_pos: Vec<NodeId> = outs
                    .iter()
                    .zip(gold)
                    .map(|(&o, &y)| g.softmax_ce(o, y as usize))
                    .collect();
                Ok(g.sum_scalars(&per_pos))
            }
            PredictorKind::Crf => {
                let (trans, start, end) = self.ids.crf.expect("crf predictor");
                let gold: Vec<usize> = gold.iter().map(|&y| y as usize).collect();
                g.crf_nll(&self.params, outs, trans, start, end, &gold)
            }
        }
    }

    /// Training loss node for one sentence (requires gold tags).
    fn sentence_loss(
        &self,
        g: &mut Graph,
        sent: &EncodedSentence,
        mode: &mut ForwardMode,
    ) -> Result<NodeId> {
        let outs = self.forward(g, sent, mode)?;
        let gold = sent.gold()?;
        if gold.len() != outs.len() {
            return Err(Error::InvalidInput("gold length mismatch".into()));
        }
        self.loss_node(g, &outs, gold)
    }

    fn decode_from_scores(&self, scores: &[Vec<f64>]) -> Result<TagPath> {
        let k = self.k();
        match self.config.predictor {
            PredictorKind::Softmax => {
                // Greedy per-position argmax; ties prefer the lower index.
                let tags = scores
                    .iter()
                    .map(|row| {
                        let mut best = 0;
                        for j in 1..k {
                            if row[j] > row[best] {
                                best = j;
                            }
                        }
                        best
                    })
                    .collect();
                Ok(TagPath::new(tags))
            }
            PredictorKind::Crf => {
                let (trans, start, end) = self.ids.crf.expect("crf predictor");
                let mut state = Vec::with_capacity(scores.len() * k);
                for row in scores {
                    state.extend_from_slice(row);
                }
                let lat = Lattice::from_parts(
                    scores.len(),
                    k,
                    state,
                    self.params.get(trans).data().to_vec(),
                    self.params.get(start).data().to_vec(),
                    self.params.get(end).data().to_vec(),
                )?;
                Ok(lattice::viterbi(&lat).0)
            }
        }
    }

    /// Eval-mode prediction.
    pub fn decode(&self, sent: &EncodedSentence) -> Result<TagPath> {
        self.decode_from_scores(&self.scores(sent)?)
    }

    /// Eval-mode loss (when gold tags are present) plus the decoded path.
    pub fn loss_and_decode(&self, sent: &EncodedSentence) -> Result<(Option<f64>, TagPath)> {
        let mut g = Graph::new();
        let outs = self.forward(&mut g, sent, &mut ForwardMode::Eval)?;
        let scores: Vec<Vec<f64>> = outs.iter().map(|&o| g.value(o).to_vec()).collect();
        let loss = match &sent.tag_ids {
            Some(gold) => Some({
                let node = self.loss_node(&mut g, &outs, gold)?;
                g.scalar(node)
            }),
            None => None,
        };
        Ok((loss, self.decode_from_scores(&scores)?))
    }

    /// Predict tag symbols for one raw token sequence.
    pub fn tag(&self, tokens: &[String]) -> Result<Vec<String>> {
        let s = crate::corpus::TaggedSentence::unlabeled(tokens.to_vec())?;
        let enc = self.vocab.encode(&s, self.config.features)?;
        let path = self.decode(&enc)?;
        Ok(path
            .tags
            .iter()
            .map(|&j| self.vocab.tag_name(j as u32).to_string())
            .collect())
    }

    /// Per-position softmax distributions in eval mode.
    pub fn probabilities(&self, sent: &EncodedSentence) -> Result<Vec<Vec<f64>>> {
        Ok(self.scores(sent)?.iter().map(|row| softmax(row)).collect())
    }
}

impl Trainable for TaggerModel {
    type Sent = EncodedSentence;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn batch_backward(
        &mut self,
        batch: &[&EncodedSentence],
        _data_frac: f64,
        rng: &mut ChaCha20Rng,
    ) -> Result<f64> {
        self.params.zero_grads();
        let mut total = 0.0;
        for sent in batch {
            let mut g = Graph::new();
            let loss = {
                let mut mode = ForwardMode::Train { rng: &mut *rng };
                self.sentence_loss(&mut g, sent, &mut mode)?
            };
            total += g.scalar(loss);
            g.backward(&mut self.params, loss)?;
        }
        let inv = 1.0 / batch.len() as f64;
        self.params.scale_grads(inv);
        Ok(total * inv)
    }

    fn predict_ids(&self, sent: &EncodedSentence) -> Result<Vec<u32>> {
        Ok(self
            .decode(sent)?
            .tags
            .iter()
            .map(|&j| j as u32)
            .collect())
    }

    fn gold_ids<'a>(&self, sent: &'a EncodedSentence) -> Result<&'a [u32]> {
        sent.gold()
    }

    fn tag_names(&self) -> &[String] {
        self.vocab.tags()
    }
}

/// Initialize from the vocabulary and run the shared training loop.
pub fn train_neural(
    ncfg: &NeuralConfig,
    tcfg: &TrainConfig,
    vocab: Vocabulary,
    train: &[EncodedSentence],
    dev: &[EncodedSentence],
) -> Result<(TaggerModel, Vec<EpochRecord>)> {
    let mut model = TaggerModel::new(ncfg.clone(), vocab, tcfg.seed)?;
    let history = training::train_loop(&mut model, tcfg, train, dev)?;
    Ok((model, history))
}

/// Central-difference gradient check over every parameter coordinate.
///
/// The total loss over `sents` is differentiated analytically (one backward
/// pass per sentence) and numerically (two forward passes per coordinate).
/// Returns the worst guarded relative error
/// `|a - n| / max(|a| + |n|, 1e-3)`. Deterministic only when dropout is off;
/// with dropout on, resampled masks make the numeric estimate meaningless,
/// which is itself a useful negative control.
pub fn grad_check(model: &mut TaggerModel, sents: &[EncodedSentence], eps: f64) -> Result<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(0x9e3779b9);
    let total_loss = |model: &TaggerModel, rng: &mut ChaCha20Rng| -> Result<f64> {
        let mut sum = 0.0;
        for s in sents {
            let mut g = Graph::new();
            let loss = if model.config.dropout > 0.0 {
                let mut mode = ForwardMode::Train { rng: &mut *rng };
                model.sentence_loss(&mut g, s, &mut mode)?
            } else {
                model.sentence_loss(&mut g, s, &mut ForwardMode::Eval)?
            };
            sum += g.scalar(loss);
        }
        Ok(sum)
    };

    model.params.zero_grads();
    for s in sents {
        let mut g = Graph::new();
        let loss = if model.config.dropout > 0.0 {
            let mut mode = ForwardMode::Train { rng: &mut rng };
            model.sentence_loss(&mut g, s, &mut mode)?
        } else {
            model.sentence_loss(&mut g, s, &mut ForwardMode::Eval)?
        };
        g.backward(&mut model.params, loss)?;
    }
    let analytic = model.params.grad_snapshot();

    let mut worst = 0.0f64;
    for (pi, id) in model.params.ids().into_iter().enumerate() {
        for k in 0..model.params.get(id).len() {
            let orig = model.params.get(id).data()[k];
            model.params.get_mut(id).data_mut()[k] = orig + eps;
            let plus = total_loss(model, &mut rng)?;
            model.params.get_mut(id).data_mut()[k] = orig - eps;
            let minus = total_loss(model, &mut rng)?;
            model.params.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][k];
            let rel = (numeric - a).abs() / (numeric.abs() + a.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{TaggedSentence, VocabOptions};

    fn sent(tokens: &[&str], tags: &[&str]) -> TaggedSentence {
        TaggedSentence::new(
            tokens.iter().map(|s| s.to_string()).collect(),
            tags.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    fn tiny_vocab() -> Vocabulary {
        let train = vec![
            sent(&["saya", "makan", "nasi"], &["PRP", "VBT", "NN"]),
            sent(&["saya", "makan"], &["PRP", "VBT"]),
            sent(&["nasi", "nasi"], &["NN", "NN"]),
        ];
        Vocabulary::build(
            &train,
            &VocabOptions {
                word_min: 1,
                affix_min: 1,
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn tiny_config(encoder: EncoderKind, predictor: PredictorKind) -> NeuralConfig {
        NeuralConfig {
            features: FeatureFlags::ALL,
            encoder,
            predictor,
            window: 1,
            dropout: 0.0,
            char_filter_widths: vec![2],
            word_dim: 4,
            affix_dim: 3,
            char_dim: 3,
            char_filters: 2,
            hidden: 4,
        }
    }

    #[test]
    fn embedding_dim_arithmetic() {
        let mut cfg = NeuralConfig::default();
        assert_eq!(cfg.embedding_dim(), 100 + 4 * 20 + 30);
        cfg.features = FeatureFlags::WORDS_ONLY;
        assert_eq!(cfg.embedding_dim(), 100);
        cfg.features = FeatureFlags {
            prefix: true,
            suffix: false,
            chars: false,
        };
        assert_eq!(cfg.embedding_dim(), 140);
        cfg.features = FeatureFlags::ALL;
        cfg.char_filter_widths = vec![2, 3, 4];
        assert_eq!(cfg.embedding_dim(), 100 + 80 + 90);
    }

    #[test]
    fn ff_window_shapes() {
        let vocab = tiny_vocab();
        let cfg = NeuralConfig {
            window: 2,
            ..tiny_config(EncoderKind::Ff, PredictorKind::Softmax)
        };
        let e = cfg.embedding_dim();
        let model = TaggerModel::new(cfg, vocab, 0).unwrap();
        assert_eq!(model.params().by_name("enc_w1").unwrap().shape(), &[4, 5 * e]);
        let s = sent(&["saya", "makan"], &["PRP", "VBT"]);
        let enc = model.vocab.encode(&s, model.config.features).unwrap();
        let scores = model.scores(&enc).unwrap();
        assert_eq!(scores.len(), 2);
        assert_eq!(scores[0].len(), model.k());
    }

    #[test]
    fn char_cnn_output_length_and_zero_filters() {
        let vocab = tiny_vocab();
        let mut model = TaggerModel::new(
            NeuralConfig {
                char_filter_widths: vec![3],
                char_filters: 30,
                ..tiny_config(EncoderKind::Ff, PredictorKind::Softmax)
            },
            vocab,
            1,
        )
        .unwrap();
        let ids: Vec<u32> = (0..5).map(|i| (i % 3) + 2).collect();
        let out = model.char_cnn_values(&ids).unwrap();
        assert_eq!(out.len(), 30);

        // All-zero filters and biases give the zero vector.
        for name in ["cnn3_filters", "cnn3_bias"] {
            let id = model.params.id(name).unwrap();
            model.params.get_mut(id).data_mut().fill(0.0);
        }
        let out = model.char_cnn_values(&ids).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));

        // Words shorter than the filter are padded with the char PAD id.
        assert_eq!(model.char_cnn_values(&[2]).unwrap().len(), 30);
        assert!(model.char_cnn_values(&[]).is_err());
    }

    #[test]
    fn zero_weights_output_is_out_bias() {
        let vocab = tiny_vocab();
        let mut model = TaggerModel::new(
            tiny_config(EncoderKind::Ff, PredictorKind::Softmax),
            vocab,
            2,
        )
        .unwrap();
        for id in model.params.ids() {
            model.params.get_mut(id).data_mut().fill(0.0);
        }
        let out_b = model.params.id("out_b").unwrap();
        model.params.get_mut(out_b).data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let s = sent(&["saya"], &["PRP"]);
        let enc = model.vocab.encode(&s, model.config.features).unwrap();
        let scores = model.scores(&enc).unwrap();
        assert_eq!(scores[0], vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn bilstm_zero_weights_zero_hidden() {
        let vocab = tiny_vocab();
        let mut model = TaggerModel::new(
            tiny_config(EncoderKind::Bilstm, PredictorKind::Softmax),
            vocab,
            3,
        )
        .unwrap();
        for id in model.params.ids() {
            model.params.get_mut(id).data_mut().fill(0.0);
        }
        // With all-zero weights and biases: gates at 1/2, candidate 0, so
        // h_t = 0 and the head output is the (zero) output bias.
        let s = sent(&["saya", "makan"], &["PRP", "VBT"]);
        let enc = model.vocab.encode(&s, model.config.features).unwrap();
        let scores = model.scores(&enc).unwrap();
        for row in scores {
            assert!(row.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn eval_mode_is_bitwise_deterministic() {
        let vocab = tiny_vocab();
        for dropout in [0.0, 0.5] {
            let model = TaggerModel::new(
                NeuralConfig {
                    dropout,
                    ..tiny_config(EncoderKind::Bilstm, PredictorKind::Crf)
                },
                vocab.clone(),
                4,
            )
            .unwrap();
            let s = sent(&["saya", "makan", "nasi"], &["PRP", "VBT", "NN"]);
            let enc = model.vocab.encode(&s, model.config.features).unwrap();
            let a = model.scores(&enc).unwrap();
            let b = model.scores(&enc).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let vocab = tiny_vocab();
        let model = TaggerModel::new(
            tiny_config(EncoderKind::Bilstm, PredictorKind::Softmax),
            vocab,
            5,
        )
        .unwrap();
        let s = sent(&["saya", "makan", "nasi"], &["PRP", "VBT", "NN"]);
        let enc = model.vocab.encode(&s, model.config.features).unwrap();
        for row in model.probabilities(&enc).unwrap() {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_scores_loss_is_log_k_and_tag_zero() {
        let vocab = tiny_vocab();
        let mut model = TaggerModel::new(
            tiny_config(EncoderKind::Ff, PredictorKind::Softmax),
            vocab,
            6,
        )
        .unwrap();
        for id in model.params.ids() {
            model.params.get_mut(id).data_mut().fill(0.0);
        }
        let s = sent(&["saya", "makan"], &["PRP", "VBT"]);
        let enc = model.vocab.encode(&s, model.config.features).unwrap();
        let (loss, path) = model.loss_and_decode(&enc).unwrap();
        let k = model.k() as f64;
        assert!((loss.unwrap() - 2.0 * k.ln()).abs() < 1e-12);
        assert_eq!(path.tags, vec![0, 0]);
    }

    #[test]
    fn crf_with_zero_transitions_matches_softmax_sum() {
        // With transition/start/end at zero the chain factorizes: the CRF
        // loss equals the sum of per-position softmax losses and Viterbi
        // equals the greedy argmax.
        let vocab = tiny_vocab();
        let crf_model = TaggerModel::new(
            tiny_config(EncoderKind::Ff, PredictorKind::Crf),
            vocab.clone(),
            7,
        )
        .unwrap();
        let softmax_model = {
            let mut m = TaggerModel::new(
                tiny_config(EncoderKind::Ff, PredictorKind::Softmax),
                vocab,
                7,
            )
            .unwrap();
            // Same seed, same creation order up to the missing CRF tensors,
            // so shared parameters are identical.
            for (name, t) in crf_model.params.iter() {
                if let Ok(id) = m.params.id(name) {
                    m.params
                        .get_mut(id)
                        .data_mut()
                        .copy_from_slice(t.data());
                }
            }
            m
        };
        let s = sent(&["saya", "makan", "nasi"], &["PRP", "VBT", "NN"]);
        let enc = crf_model.vocab.encode(&s, crf_model.config.features).unwrap();
        let (crf_loss, crf_path) = crf_model.loss_and_decode(&enc).unwrap();
        let (sm_loss, sm_path) = softmax_model.loss_and_decode(&enc).unwrap();
        assert!((crf_loss.unwrap() - sm_loss.unwrap()).abs() < 1e-10);
        assert_eq!(crf_path.tags, sm_path.tags);
    }

    #[test]
    fn unk_word_uses_unk_row() {
        let vocab = tiny_vocab();
        let model = TaggerModel::new(
            NeuralConfig {
                features: FeatureFlags::WORDS_ONLY,
                ..tiny_config(EncoderKind::Ff, PredictorKind::Softmax)
            },
            vocab,
            8,
        )
        .unwrap();
        let a = sent(&["zzz"], &["NN"]);
        let b = sent(&["qqq"], &["NN"]);
        let ea = model.vocab.encode(&a, model.config.features).unwrap();
        let eb = model.vocab.encode(&b, model.config.features).unwrap();
        assert_eq!(ea.word_ids[0], crate::corpus::UNK_ID);
        assert_eq!(model.scores(&ea).unwrap(), model.scores(&eb).unwrap());
    }

    #[test]
    fn backward_twice_rejected_via_batch() {
        let vocab = tiny_vocab();
        let mut model = TaggerModel::new(
            tiny_config(EncoderKind::Ff, PredictorKind::Softmax),
            vocab,
            9,
        )
        .unwrap();
        let s = sent(&["saya"], &["PRP"]);
        let enc = model.vocab.encode(&s, model.config.features).unwrap();
        let mut g = Graph::new();
        let loss = model
            .sentence_loss(&mut g, &enc, &mut ForwardMode::Eval)
            .unwrap();
        g.backward(&mut model.params, loss).unwrap();
        assert!(g.backward(&mut model.params, loss).is_err());
    }
}
