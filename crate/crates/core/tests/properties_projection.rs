use gridflex::projection::{project_cluster_bank, project_ellipsoid, project_l1_ball, SmoothnessMetric};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const D: usize = 24;

fn point(scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, D)
}

fn metric(lambda: f64) -> SmoothnessMetric<f64> {
    SmoothnessMetric::new(D, lambda).unwrap()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ellipsoid_projection_is_idempotent_and_feasible(z in point(3.0), lambda in 0.0f64..20.0) {
        let m = metric(lambda);
        let p = project_ellipsoid(&z, &m).unwrap();
        prop_assert!(m.dual_norm_sq(&p) <= 1.0 + 1e-8);
        let pp = project_ellipsoid(&p, &m).unwrap();
        prop_assert!(dist(&p, &pp) <= 1e-10, "{}", dist(&p, &pp));
    }

    #[test]
    fn l1_projection_is_idempotent_and_feasible(z in point(3.0), r in 0.01f64..10.0) {
        let p = project_l1_ball(&z, r);
        prop_assert!(p.iter().map(|v| v.abs()).sum::<f64>() <= r + 1e-8);
        let pp = project_l1_ball(&p, r);
        prop_assert!(dist(&p, &pp) <= 1e-10);
    }

    #[test]
    fn projections_are_non_expansive(x in point(3.0), y in point(3.0), lambda in 0.0f64..20.0, r in 0.01f64..10.0) {
        let m = metric(lambda);
        let px = project_ellipsoid(&x, &m).unwrap();
        let py = project_ellipsoid(&y, &m).unwrap();
        // Euclidean projection onto {xᵀK⁻¹x ≤ 1} is non-expansive.
        prop_assert!(dist(&px, &py) <= dist(&x, &y) + 1e-9);
        let lx = project_l1_ball(&x, r);
        let ly = project_l1_ball(&y, r);
        prop_assert!(dist(&lx, &ly) <= dist(&x, &y) + 1e-9);
    }

    #[test]
    fn feasible_columns_make_every_mixture_admissible(
        bank in prop::collection::vec(point(5.0), 1..7), lambda in 0.0f64..20.0, seed in any::<u64>(),
    ) {
        let m = metric(lambda);
        let cols = project_cluster_bank(&bank, &m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let v = simplex(&mut rng, cols.len());
            let mix: Vec<f64> = (0..D).map(|t| cols.iter().zip(&v).map(|(c, w)| w * c[t]).sum()).collect();
            prop_assert!(m.dual_norm_sq(&mix) <= 1.0 + 1e-6);
        }
    }
}
