use gridflex::metrics::{
    amps_percent, energy_reduction_pct, grid_cost, load_factor, max_hourly_variation, mps_percent, pds_percent,
    quadratic_variation,
};
use proptest::prelude::*;

fn profile() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1f64..50.0, 24)
}

fn scaled(d: &[f64], c: f64) -> Vec<f64> {
    d.iter().map(|v| v * c).collect()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn metrics_are_scale_consistent(d in profile(), d0 in profile(), e in profile(), e0 in profile(), c in 0.01f64..100.0) {
        let (ds, d0s) = (scaled(&d, c), scaled(&d0, c));
        prop_assert!(close(pds_percent(&ds, &d0s), pds_percent(&d, &d0), 1e-10));
        prop_assert!(close(load_factor(&ds), load_factor(&d), 1e-12));
        prop_assert!(close(energy_reduction_pct(&ds, &d0s), energy_reduction_pct(&d, &d0), 1e-10));
        let days = vec![d.clone(), e.clone()];
        let days0 = vec![d0.clone(), e0.clone()];
        let days_s: Vec<Vec<f64>> = days.iter().map(|x| scaled(x, c)).collect();
        let days0_s: Vec<Vec<f64>> = days0.iter().map(|x| scaled(x, c)).collect();
        prop_assert!(close(mps_percent(&days_s, &days0_s), mps_percent(&days, &days0), 1e-10));
        prop_assert!(close(amps_percent(&days_s, &days0_s), amps_percent(&days, &days0), 1e-10));
        prop_assert!(close(max_hourly_variation(&ds), c * max_hourly_variation(&d), 1e-12));
        prop_assert!(close(quadratic_variation(&ds), c * c * quadratic_variation(&d), 1e-12));
    }

    #[test]
    fn grid_cost_has_positive_curvature(d in profile(), v in prop::collection::vec(-1.0f64..1.0, 24), h in 1e-3f64..1.0) {
        let nv: f64 = v.iter().map(|x| x * x).sum();
        prop_assume!(nv > 1e-6);
        let at = |s: f64| grid_cost(&d.iter().zip(&v).map(|(a, b)| a + s * b).collect::<Vec<_>>(), 0.9);
        let second = (at(h) - 2.0 * at(0.0) + at(-h)) / (h * h);
        // The quadratic form is bounded below by 2(1-ε)‖v‖².
        prop_assert!(second >= 0.2 * nv * (1.0 - 1e-6) - 1e-9 * at(0.0).abs() / (h * h), "{second} vs {}", 0.2 * nv);
    }
}
