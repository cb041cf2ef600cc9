//! Linear-chain inference shared by the feature CRF and the neural CRF layer.
//!
//! A [`Lattice`] holds unnormalized log-domain scores: per-position state
//! scores, tag-to-tag transition scores, and explicit start/end boundary
//! scores. A path `y` scores
//!
//! ```text
//! start[y_1] + sum_t state[t][y_t] + sum_t trans[y_t][y_{t+1}] + end[y_n]
//! ```
//!
//! All accumulation is in f64 with log-sum-exp, so partition functions stay
//! finite for per-score magnitudes up to ~50.

use crate::error::{Error, Result};

/// Chain scores for one sentence: `n` positions over `k` tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    n: usize,
    k: usize,
    /// Row-major `n x k` state scores.
    state: Vec<f64>,
    /// Row-major `k x k` transition scores, from-tag by to-tag.
    trans: Vec<f64>,
    start: Vec<f64>,
    end: Vec<f64>,
}

impl Lattice {
    /// All-zero lattice.
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::InvalidInput(format!(
                "lattice needs n >= 1 and k >= 1, got n={n}, k={k}"
            )));
        }
        Ok(Lattice {
            n,
            k,
            state: vec![0.0; n * k],
            trans: vec![0.0; k * k],
            start: vec![0.0; k],
            end: vec![0.0; k],
        })
    }

    pub fn from_parts(
        n: usize,
        k: usize,
        state: Vec<f64>,
        trans: Vec<f64>,
        start: Vec<f64>,
        end: Vec<f64>,
    ) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::InvalidInput("empty lattice".into()));
        }
        if state.len() != n * k || trans.len() != k * k || start.len() != k || end.len() != k {
            return Err(Error::InvalidInput("lattice dimension mismatch".into()));
        }
        let all = state.iter().chain(&trans).chain(&start).chain(&end);
        for &v in all {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite lattice score {v}")));
            }
        }
        Ok(Lattice {
            n,
            k,
            state,
            trans,
            start,
            end,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn state(&self, t: usize, j: usize) -> f64 {
        self.state[t * self.k + j]
    }

    pub fn state_row(&self, t: usize) -> &[f64] {
        &self.state[t * self.k..(t + 1) * self.k]
    }

    pub fn set_state(&mut self, t: usize, j: usize, v: f64) {
        self.state[t * self.k + j] = v;
    }

    pub fn add_state(&mut self, t: usize, j: usize, v: f64) {
        self.state[t * self.k + j] += v;
    }

    pub fn trans(&self, from: usize, to: usize) -> f64 {
        self.trans[from * self.k + to]
    }

    pub fn set_trans(&mut self, from: usize, to: usize, v: f64) {
        self.trans[from * self.k + to] = v;
    }

    pub fn start(&self, j: usize) -> f64 {
        self.start[j]
    }

    pub fn set_start(&mut self, j: usize, v: f64) {
        self.start[j] = v;
    }

    pub fn end(&self, j: usize) -> f64 {
        self.end[j]
    }

    pub fn set_end(&mut self, j: usize, v: f64) {
        self.end[j] = v;
    }
}

/// A tag index sequence, one per position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagPath {
    pub tags: Vec<usize>,
}

impl TagPath {
    pub fn new(tags: Vec<usize>) -> Self {
        TagPath { tags }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|&s| (s - max).exp()).sum();
    max + sum.ln()
}

/// Log-partition via the forward recursion: log of the sum of exp(path score)
/// over all `k^n` paths.
pub fn log_partition(lat: &Lattice) -> f64 {
    let k = lat.k;
    let mut alpha: Vec<f64> = (0..k).map(|j| lat.start(j) + lat.state(0, j)).collect();
    let mut scratch = vec![0.0; k];
    for t in 1..lat.n {
        let mut next = vec![0.0; k];
        for (j, slot) in next.iter_mut().enumerate() {
            for i in 0..k {
                scratch[i] = alpha[i] + lat.trans(i, j);
            }
            *slot = lat.state(t, j) + log_sum_exp(&scratch);
        }
        alpha = next;
    }
    for (j, a) in alpha.iter_mut().enumerate() {
        *a += lat.end(j);
    }
    log_sum_exp(&alpha)
}

/// Score of one complete path.
pub fn path_score(lat: &Lattice, path: &TagPath) -> Result<f64> {
    if path.len() != lat.n {
        return Err(Error::InvalidInput(format!(
            "path length {} does not match lattice length {}",
            path.len(),
            lat.n
        )));
    }
    for &y in &path.tags {
        if y >= lat.k {
            return Err(Error::InvalidInput(format!(
                "tag index {y} out of range for k={}",
                lat.k
            )));
        }
    }
    let mut score = lat.start(path.tags[0]) + lat.end(path.tags[lat.n - 1]);
    for (t, &y) in path.tags.iter().enumerate() {
        score += lat.state(t, y);
    }
    for t in 0..lat.n - 1 {
        score += lat.trans(path.tags[t], path.tags[t + 1]);
    }
    Ok(score)
}

/// Node and edge posterior probabilities from forward-backward.
#[derive(Debug, Clone)]
pub struct Marginals {
    n: usize,
    k: usize,
    /// `n x k`: P(y_t = j).
    node: Vec<f64>,
    /// `(n-1) x k x k`: P(y_t = i, y_{t+1} = j).
    edge: Vec<f64>,
    pub log_z: f64,
}

impl Marginals {
    pub fn node(&self, t: usize, j: usize) -> f64 {
        self.node[t * self.k + j]
    }

    pub fn node_row(&self, t: usize) -> &[f64] {
        &self.node[t * self.k..(t + 1) * self.k]
    }

    pub fn edge(&self, t: usize, i: usize, j: usize) -> f64 {
        self.edge[(t * self.k + i) * self.k + j]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Forward-backward in log space.
pub fn marginals(lat: &Lattice) -> Marginals {
    let (n, k) = (lat.n, lat.k);
    // alpha[t][j]: log-sum over prefixes ending in tag j at t (incl. state t).
    let mut alpha = vec![0.0; n * k];
    for j in 0..k {
        alpha[j] = lat.start(j) + lat.state(0, j);
    }
    let mut scratch = vec![0.0; k];
    for t in 1..n {
        for j in 0..k {
            for i in 0..k {
                scratch[i] = alpha[(t - 1) * k + i] + lat.trans(i, j);
            }
            alpha[t * k + j] = lat.state(t, j) + log_sum_exp(&scratch);
        }
    }
    // beta[t][i]: log-sum over suffixes starting after t, given tag i at t
    // (incl. the end score, excl. state t).
    let mut beta = vec![0.0; n * k];
    for i in 0..k {
        beta[(n - 1) * k + i] = lat.end(i);
    }
    for t in (0..n - 1).rev() {
        for i in 0..k {
            for j in 0..k {
                scratch[j] = lat.trans(i, j) + lat.state(t + 1, j) + beta[(t + 1) * k + j];
            }
            beta[t * k + i] = log_sum_exp(&scratch);
        }
    }
    let log_z = log_sum_exp(
        &(0..k)
            .map(|j| alpha[(n - 1) * k + j] + lat.end(j))
            .collect::<Vec<_>>(),
    );

    let mut node = vec![0.0; n * k];
    for t in 0..n {
        for j in 0..k {
            node[t * k + j] = (alpha[t * k + j] + beta[t * k + j] - log_z).exp();
        }
    }
    let mut edge = vec![0.0; n.saturating_sub(1) * k * k];
    for t in 0..n.saturating_sub(1) {
        for i in 0..k {
            for j in 0..k {
                let lp = alpha[t * k + i]
                    + lat.trans(i, j)
                    + lat.state(t + 1, j)
                    + beta[(t + 1) * k + j]
                    - log_z;
                edge[(t * k + i) * k + j] = lp.exp();
            }
        }
    }
    Marginals {
        n,
        k,
        node,
        edge,
        log_z,
    }
}

/// Max-score decoding. Ties prefer the lower tag index, both at the final
/// position and at every backtracking step.
pub fn viterbi(lat: &Lattice) -> (TagPath, f64) {
    let (n, k) = (lat.n, lat.k);
    let mut delta: Vec<f64> = (0..k).map(|j| lat.start(j) + lat.state(0, j)).collect();
    let mut backptr = vec![0usize; n * k];
    for t in 1..n {
        let mut next = vec![f64::NEG_INFINITY; k];
        for (j, slot) in next.iter_mut().enumerate() {
            let mut best_i = 0;
            let mut best = delta[0] + lat.trans(0, j);
            for i in 1..k {
                let cand = delta[i] + lat.trans(i, j);
                if cand > best {
                    best = cand;
                    best_i = i;
                }
            }
            *slot = best + lat.state(t, j);
            backptr[t * k + j] = best_i;
        }
        delta = next;
    }
    let mut best_j = 0;
    let mut best = delta[0] + lat.end(0);
    for j in 1..k {
        let cand = delta[j] + lat.end(j);
        if cand > best {
            best = cand;
            best_j = j;
        }
    }
    let mut tags = vec![0usize; n];
    tags[n - 1] = best_j;
    for t in (0..n - 1).rev() {
        tags[t] = backptr[(t + 1) * k + tags[t + 1]];
    }
    (TagPath::new(tags), best)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-9;

    #[test]
    fn log_partition_uniform_paths() {
        // n=2, K=2, all scores zero: four equal paths.
        let lat = Lattice::new(2, 2).unwrap();
        assert!((log_partition(&lat) - 4.0f64.ln()).abs() < TOL);
        assert!((log_partition(&lat) - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn log_partition_single_position() {
        let lat = Lattice::from_parts(1, 2, vec![1.0, 2.0], vec![0.0; 4], vec![0.0; 2], vec![0.0; 2])
            .unwrap();
        let expect = (1f64.exp() + 2f64.exp()).ln();
        assert!((log_partition(&lat) - expect).abs() < TOL);
        assert!((log_partition(&lat) - 2.313262).abs() < 1e-6);
    }

    #[test]
    fn path_score_examples() {
        let lat = Lattice::new(3, 2).unwrap();
        assert_eq!(path_score(&lat, &TagPath::new(vec![0, 1, 0])).unwrap(), 0.0);

        let lat = Lattice::from_parts(1, 2, vec![1.0, 2.0], vec![0.0; 4], vec![0.0; 2], vec![0.0; 2])
            .unwrap();
        assert_eq!(path_score(&lat, &TagPath::new(vec![1])).unwrap(), 2.0);

        assert!(path_score(&lat, &TagPath::new(vec![0, 0])).is_err());
        assert!(path_score(&lat, &TagPath::new(vec![5])).is_err());
    }

    #[test]
    fn marginals_uniform() {
        let lat = Lattice::new(3, 4).unwrap();
        let m = marginals(&lat);
        for t in 0..3 {
            for j in 0..4 {
                assert!((m.node(t, j) - 0.25).abs() < TOL);
            }
        }
    }

    #[test]
    fn marginals_single_position_softmax() {
        let lat = Lattice::from_parts(
            1,
            2,
            vec![0.0, 3f64.ln()],
            vec![0.0; 4],
            vec![0.0; 2],
            vec![0.0; 2],
        )
        .unwrap();
        let m = marginals(&lat);
        assert!((m.node(0, 0) - 0.25).abs() < TOL);
        assert!((m.node(0, 1) - 0.75).abs() < TOL);
    }

    #[test]
    fn marginal_consistency_identities() {
        let lat = random_lattice(4, 3, 42);
        let m = marginals(&lat);
        for t in 0..4 {
            let row: f64 = (0..3).map(|j| m.node(t, j)).sum();
            assert!((row - 1.0).abs() < 1e-10);
        }
        for t in 0..3 {
            for i in 0..3 {
                let s: f64 = (0..3).map(|j| m.edge(t, i, j)).sum();
                assert!((s - m.node(t, i)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn viterbi_tie_break_all_zero() {
        let lat = Lattice::new(4, 3).unwrap();
        let (path, score) = viterbi(&lat);
        assert_eq!(path.tags, vec![0, 0, 0, 0]);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn viterbi_prefers_high_state_scores() {
        let lat = Lattice::from_parts(
            2,
            2,
            vec![0.0, 1.0, 0.0, 1.0],
            vec![0.0; 4],
            vec![0.0; 2],
            vec![0.0; 2],
        )
        .unwrap();
        let (path, score) = viterbi(&lat);
        assert_eq!(path.tags, vec![1, 1]);
        assert!((score - 2.0).abs() < TOL);
    }

    #[test]
    fn log_partition_dominates_path_scores() {
        for seed in 0..20 {
            let lat = random_lattice(5, 3, seed);
            let logz = log_partition(&lat);
            let (best, max_score) = viterbi(&lat);
            assert!(logz >= max_score - 1e-12);
            assert!((path_score(&lat, &best).unwrap() - max_score).abs() < 1e-9);
        }
    }

    #[test]
    fn shift_invariance() {
        let lat = random_lattice(4, 3, 7);
        let logz = log_partition(&lat);
        let (path, score) = viterbi(&lat);
        let mut shifted = lat.clone();
        let c = 1.75;
        for j in 0..3 {
            let v = shifted.state(2, j);
            shifted.set_state(2, j, v + c);
        }
        assert!((log_partition(&shifted) - (logz + c)).abs() < 1e-10);
        let (path2, score2) = viterbi(&shifted);
        assert_eq!(path.tags, path2.tags);
        assert!((score2 - (score + c)).abs() < 1e-10);
        let y = TagPath::new(vec![2, 0, 1, 1]);
        assert!(
            (path_score(&shifted, &y).unwrap() - (path_score(&lat, &y).unwrap() + c)).abs() < 1e-12
        );
    }

    #[test]
    fn single_tag_lattice_is_exact() {
        // Dyadic scores: every partial sum is exactly representable, so the
        // two accumulation orders must agree bit for bit.
        let lat = Lattice::from_parts(
            3,
            1,
            vec![0.5, -1.25, 2.0],
            vec![0.75],
            vec![0.125],
            vec![-0.375],
        )
        .unwrap();
        let only = TagPath::new(vec![0, 0, 0]);
        assert_eq!(log_partition(&lat), path_score(&lat, &only).unwrap());
        // Arbitrary scores agree to within rounding.
        let lat = random_lattice(5, 1, 9);
        let only = TagPath::new(vec![0; 5]);
        assert!((log_partition(&lat) - path_score(&lat, &only).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_finite_scores() {
        assert!(Lattice::from_parts(1, 1, vec![f64::NAN], vec![0.0], vec![0.0], vec![0.0]).is_err());
    }

    /// Small deterministic lattice with scores in [-2, 2].
    fn random_lattice(n: usize, k: usize, seed: u64) -> Lattice {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let mut gen = |len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.random_range(-2.0..2.0)).collect()
        };
        Lattice::from_parts(n, k, gen(n * k), gen(k * k), gen(k), gen(k)).unwrap()
    }
}
