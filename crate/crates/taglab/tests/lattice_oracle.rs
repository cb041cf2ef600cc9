//! Chain inference against exhaustive path enumeration.

mod common;

use common::{brute_force, random_lattice};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use taglab::lattice::{log_partition, marginals, path_score, viterbi, Lattice, TagPath};

#[test]
fn log_partition_matches_enumeration() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for trial in 0..50 {
        let n = 1 + trial % 4;
        let k = 2 + trial % 3;
        let lat = random_lattice(n + 1, k, -2.0, 2.0, &mut rng);
        let oracle = brute_force(&lat);
        let got = log_partition(&lat);
        assert!(
            (got - oracle.log_z).abs() < 1e-10,
            "trial {trial}: {got} vs {}",
            oracle.log_z
        );
    }
}

#[test]
fn gold_probabilities_normalize() {
    // exp(path_score - logZ) sums to 1 over all paths.
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let lat = random_lattice(4, 3, -2.0, 2.0, &mut rng);
    let log_z = log_partition(&lat);
    let mut total = 0.0;
    for idx in 0..81 {
        let mut path = vec![0usize; 4];
        let mut v = idx;
        for slot in path.iter_mut() {
            *slot = v % 3;
            v /= 3;
        }
        total += (path_score(&lat, &TagPath::new(path)).unwrap() - log_z).exp();
    }
    assert!((total - 1.0).abs() < 1e-10);
}

#[test]
fn marginals_match_enumeration() {
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    for trial in 0..30 {
        let lat = random_lattice(3, 3, -2.0, 2.0, &mut rng);
        let oracle = brute_force(&lat);
        let m = marginals(&lat);
        for t in 0..3 {
            for j in 0..3 {
                assert!(
                    (m.node(t, j) - oracle.node[t][j]).abs() < 1e-10,
                    "trial {trial}: node[{t}][{j}]"
                );
            }
        }
        for t in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    assert!(
                        (m.edge(t, i, j) - oracle.edge[t][i][j]).abs() < 1e-10,
                        "trial {trial}: edge[{t}][{i}][{j}]"
                    );
                }
            }
        }
    }
}

#[test]
fn viterbi_matches_enumeration_argmax() {
    let mut rng = ChaCha20Rng::seed_from_u64(19);
    for trial in 0..60 {
        let lat = random_lattice(5, 4, -2.0, 2.0, &mut rng);
        let oracle = brute_force(&lat);
        let (path, score) = viterbi(&lat);
        assert_eq!(path.tags, oracle.best_path, "trial {trial}");
        assert!((score - oracle.best_score).abs() < 1e-10);
    }
}

#[test]
fn viterbi_tie_break_matches_enumeration_on_tied_lattices() {
    // Integer-valued scores force exact ties; both sides must resolve them
    // identically (lowest tag index at each backtracking step).
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    use rand::Rng;
    for trial in 0..40 {
        let n = 2 + trial % 3;
        let k = 2 + trial % 2;
        let quantize = |len: usize, rng: &mut ChaCha20Rng| -> Vec<f64> {
            (0..len).map(|_| rng.random_range(0..2) as f64).collect()
        };
        let lat = Lattice::from_parts(
            n,
            k,
            quantize(n * k, &mut rng),
            quantize(k * k, &mut rng),
            quantize(k, &mut rng),
            quantize(k, &mut rng),
        )
        .unwrap();
        let oracle = brute_force(&lat);
        let (path, _) = viterbi(&lat);
        assert_eq!(path.tags, oracle.best_path, "trial {trial}");
    }
}
