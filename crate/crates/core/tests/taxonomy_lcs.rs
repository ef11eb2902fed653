//! Least common subsumer and Lin similarity against exhaustive enumeration
//! on random DAGs.

mod common;

use common::{build, ic, lcs_oracle, random_dag};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sugartc::graph::lin_similarity;

#[test]
fn lcs_matches_exhaustive_enumeration_on_50_dags() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    for _ in 0..50 {
        let dag = random_dag(&mut rng);
        let (tax, counts, total) = build(&dag);
        let root = tax.root();
        for a in 0..dag.n {
            for b in 0..dag.n {
                let best = lcs_oracle(&dag, &counts, total, root, a, b);
                assert_eq!(tax.least_common_subsumer(a, b), best.0, "dag {:?}, pair ({a},{b})", dag.edges);

                let (ca, cb) = (ic(counts[a], total), ic(counts[b], total));
                if ca.is_finite() && cb.is_finite() && ca + cb > 0.0 {
                    let expect = (2.0 * best.1 / (ca + cb)).min(1.0);
                    assert!((lin_similarity(&tax, a, b) - expect).abs() < 1e-12);
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 500, "only {checked} Lin values compared");
}

#[test]
fn lin_self_similarity_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let dag = random_dag(&mut rng);
        let (tax, counts, total) = build(&dag);
        for t in 0..dag.n {
            if ic(counts[t], total).is_finite() {
                assert!((lin_similarity(&tax, t, t) - 1.0).abs() < 1e-12);
            }
        }
    }
}
