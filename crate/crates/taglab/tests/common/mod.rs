//! Shared test oracles, independent of the implementation paths they check:
//! exhaustive path enumeration for chain inference, central finite
//! differences for gradients, and synthetic corpus generators.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use taglab::corpus::TaggedSentence;
use taglab::crf::{CrfModel, PreparedSentence};
use taglab::lattice::Lattice;

/// Exhaustive results over all K^n paths of a lattice.
pub struct BruteForce {
    pub log_z: f64,
    /// node[t][j] = P(y_t = j)
    pub node: Vec<Vec<f64>>,
    /// edge[t][i][j] = P(y_t = i, y_{t+1} = j)
    pub edge: Vec<Vec<Vec<f64>>>,
    pub best_path: Vec<usize>,
    pub best_score: f64,
}

fn enumerate_paths(n: usize, k: usize) -> Vec<Vec<usize>> {
    let total = k.pow(n as u32);
    let mut paths = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut path = vec![0usize; n];
        for slot in path.iter_mut().rev() {
            *slot = idx % k;
            idx /= k;
        }
        paths.push(path);
    }
    paths
}

fn raw_path_score(lat: &Lattice, path: &[usize]) -> f64 {
    let n = lat.n();
    let mut score = lat.start(path[0]) + lat.end(path[n - 1]);
    for (t, &y) in path.iter().enumerate() {
        score += lat.state(t, y);
    }
    for t in 0..n - 1 {
        score += lat.trans(path[t], path[t + 1]);
    }
    score
}

/// The decoder resolves ties by choosing the lowest tag index at the final
/// position first, then at each backtracking step; that ordering is
/// right-to-left lexicographic preference among maximum-score paths.
fn reverse_lex_less(a: &[usize], b: &[usize]) -> bool {
    for (x, y) in a.iter().rev().zip(b.iter().rev()) {
        match x.cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// Enumerate every path: partition function, exact marginals, and the argmax
/// under the decoder's tie-break.
pub fn brute_force(lat: &Lattice) -> BruteForce {
    let (n, k) = (lat.n(), lat.k());
    let paths = enumerate_paths(n, k);
    let scores: Vec<f64> = paths.iter().map(|p| raw_path_score(lat, p)).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = scores.iter().map(|&s| (s - max).exp()).sum();
    let log_z = max + sum_exp.ln();

    let mut node = vec![vec![0.0; k]; n];
    let mut edge = vec![vec![vec![0.0; k]; k]; n.saturating_sub(1)];
    for (path, &score) in paths.iter().zip(&scores) {
        let p = (score - log_z).exp();
        for (t, &y) in path.iter().enumerate() {
            node[t][y] += p;
        }
        for t in 0..n - 1 {
            edge[t][path[t]][path[t + 1]] += p;
        }
    }

    let mut best_idx = 0;
    for i in 1..paths.len() {
        if scores[i] > scores[best_idx]
            || (scores[i] == scores[best_idx] && reverse_lex_less(&paths[i], &paths[best_idx]))
        {
            best_idx = i;
        }
    }
    BruteForce {
        log_z,
        node,
        edge,
        best_path: paths[best_idx].clone(),
        best_score: scores[best_idx],
    }
}

/// Seeded lattice with all scores uniform in [lo, hi].
pub fn random_lattice(n: usize, k: usize, lo: f64, hi: f64, rng: &mut ChaCha20Rng) -> Lattice {
    let mut gen = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(lo..hi)).collect() };
    Lattice::from_parts(n, k, gen(n * k), gen(k * k), gen(k), gen(k)).unwrap()
}

/// Guarded relative error: tiny gradients compare absolutely at 1e-3 scale.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-3)
}

/// Central-difference check of the CRF objective over every parameter
/// coordinate; returns the worst guarded relative error.
pub fn crf_fd_check(model: &mut CrfModel, batch: &[&PreparedSentence], eps: f64) -> f64 {
    model.nll_grad(batch).unwrap();
    let analytic = model.params().grad_snapshot();
    let ids = model.params().ids();
    let mut worst = 0.0f64;
    for (pi, &id) in ids.iter().enumerate() {
        for c in 0..model.params().get(id).len() {
            let orig = model.params().get(id).data()[c];
            model.params_mut().get_mut(id).data_mut()[c] = orig + eps;
            let plus = model.nll_grad(batch).unwrap();
            model.params_mut().get_mut(id).data_mut()[c] = orig - eps;
            let minus = model.nll_grad(batch).unwrap();
            model.params_mut().get_mut(id).data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[pi][c], numeric));
        }
    }
    worst
}

fn sent(tokens: Vec<String>, tags: Vec<String>) -> TaggedSentence {
    TaggedSentence::new(tokens, tags).unwrap()
}

pub const SUFFIXES: [&str; 8] = ["an", "ku", "mu", "ya", "ah", "is", "os", "un"];

/// Synthetic corpus whose tag is a deterministic function of the word's
/// two-character suffix: 8 tags, 200 word types, Zipf-ish long tail so dev
/// splits contain OOV words.
pub fn suffix_corpus(n_sentences: usize, seed: u64) -> Vec<TaggedSentence> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n_words = 200;
    let common = 120; // high-frequency tier; the remaining 80 form the tail
    let mut words = Vec::with_capacity(n_words);
    let mut seen = std::collections::HashSet::new();
    while words.len() < n_words {
        let stem_len = rng.random_range(2..=5);
        let stem: String = (0..stem_len)
            .map(|_| (b'a' + rng.random_range(0..26u8)) as char)
            .collect();
        let suffix = SUFFIXES[words.len() % SUFFIXES.len()];
        let word = format!("{stem}{suffix}");
        if seen.insert(word.clone()) {
            words.push((word, format!("T{}", words.len() % SUFFIXES.len())));
        }
    }

    // Integer weights: common words 10, tail words 1.
    let total_weight = common * 10 + (n_words - common);
    let mut corpus = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences {
        let len = rng.random_range(4..=9);
        let mut tokens = Vec::with_capacity(len);
        let mut tags = Vec::with_capacity(len);
        for _ in 0..len {
            let u = rng.random_range(0..total_weight);
            let idx = if u < common * 10 {
                u / 10
            } else {
                common + (u - common * 10)
            };
            tokens.push(words[idx].0.clone());
            tags.push(words[idx].1.clone());
        }
        corpus.push(sent(tokens, tags));
    }
    corpus
}

/// Fixed ten-sentence corpus with a consistent token-to-tag mapping; every
/// architecture should be able to fit it perfectly.
pub fn overfit_corpus() -> Vec<TaggedSentence> {
    let data: [(&str, &str); 10] = [
        ("saya makan nasi goreng", "PRP VBT NN JJ"),
        ("dia minum kopi panas", "PRP VBT NN JJ"),
        ("kami baca buku baru", "PRP VBT NN JJ"),
        ("anjing besar itu tidur", "NN JJ DT VBI"),
        ("kucing kecil itu lari", "NN JJ DT VBI"),
        ("saya suka kopi manis", "PRP VBT NN JJ"),
        ("mereka tulis surat panjang", "PRP VBT NN JJ"),
        ("burung merah itu terbang", "NN JJ DT VBI"),
        ("dia jual ikan segar", "PRP VBT NN JJ"),
        ("kuda cepat itu lompat", "NN JJ DT VBI"),
    ];
    data.iter()
        .map(|(toks, tags)| {
            sent(
                toks.split(' ').map(str::to_string).collect(),
                tags.split(' ').map(str::to_string).collect(),
            )
        })
        .collect()
}

/// Weighted F1 of string predictions against gold.
pub fn weighted_f1(gold: &[Vec<String>], pred: &[Vec<String>]) -> f64 {
    let cm = taglab::evaluation::confusion(gold, pred).unwrap();
    taglab::evaluation::tag_report(&cm).unwrap().weighted_f1
}
