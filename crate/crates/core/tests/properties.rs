use graphsan::detect::divergence::{pairwise_kl, proximity_metrics};
use graphsan::graph::EdgeSet;
use graphsan::metrics::{cr, esr, f1};
use graphsan::sbm::erdos_renyi;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dist(n: usize, c: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut s = Array2::from_shape_fn((n, c), |_| rng.random::<f64>() + 1e-3);
    for mut row in s.rows_mut() {
        let t = row.sum();
        row /= t;
    }
    s
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
}

#[test]
fn proximity_matches_double_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let n = rng.random_range(2..=25);
        let c = rng.random_range(2..=5);
        let s = random_dist(n, c, &mut rng);
        let a = erdos_renyi(n, rng.random_range(0.05..0.6), &mut rng);
        let rows: Vec<Vec<f64>> = s.rows().into_iter().map(|r| r.to_vec()).collect();
        let k = pairwise_kl(&s);
        let (p1, p2) = proximity_metrics(&s, &a);
        for i in 0..n {
            let nbrs: Vec<usize> = (0..n).filter(|&j| a[[i, j]] != 0.0).collect();
            let d = nbrs.len() as f64;
            let mut want1 = 0.0;
            let mut want2 = 0.0;
            for &j in &nbrs {
                want1 += kl(&rows[i], &rows[j]);
                for &l in &nbrs {
                    if l != j {
                        want2 += kl(&rows[j], &rows[l]);
                    }
                }
            }
            let want1 = if d > 0.0 { want1 / d } else { 0.0 };
            let want2 = if d > 1.0 { want2 / (d * (d - 1.0)) } else { 0.0 };
            assert!((p1[i] - want1).abs() < 1e-10);
            assert!((p2[i] - want2).abs() < 1e-10);
            for j in 0..n {
                assert!((k[[i, j]] - kl(&rows[i], &rows[j])).abs() < 1e-10);
            }
        }
    }
}

fn edge_set() -> impl Strategy<Value = EdgeSet> {
    prop::collection::vec((0usize..15, 0usize..15), 0..30)
        .prop_map(|v| v.into_iter().filter(|(u, w)| u != w).collect())
}

proptest! {
    #[test]
    fn jaccard_dice_identity(atk in edge_set(), san in edge_set()) {
        prop_assume!(!atk.is_empty());
        let j = esr(&atk, &san).unwrap();
        let f = f1(&atk, &san).unwrap();
        let c = cr(&atk, &san).unwrap();
        prop_assert!((f - 2.0 * j / (1.0 + j)).abs() < 1e-12);
        prop_assert!(c >= j);
        prop_assert!(c >= f / 2.0);
        for v in [j, f, c] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(j == 1.0, atk == san);
    }
}
