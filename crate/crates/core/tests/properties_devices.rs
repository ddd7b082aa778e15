use std::collections::BTreeSet;

use gridflex::devices::{
    check_feasible, device_cost, hvac_indoor_temperature, soc_trajectory, BatterySpec, DeviceEnv, DeviceSpec,
    FlexLoadSpec, HvacSpec, PvSpec,
};
use proptest::prelude::*;

const H: usize = 12;

fn vec_in(lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, H)
}

fn hvac() -> impl Strategy<Value = HvacSpec<f64>> {
    (0.01f64..0.9, 0.1f64..1.5, 0.5f64..10.0).prop_map(|(z1, z2, gain)| {
        let mut s = HvacSpec::with_defaults(H, 1.0);
        s.zeta1 = z1;
        s.zeta2 = z2;
        s.power_gain = gain;
        s
    })
}

fn env(t0: Vec<f64>, pv: Vec<f64>) -> DeviceEnv<f64> {
    DeviceEnv { slot_hours: 1.0, t0, pv_available: pv }
}

fn specs() -> Vec<DeviceSpec<f64>> {
    let flex = FlexLoadSpec::from_profile((0..H).map(|t| 1.0 + 0.1 * t as f64).collect(), 0.3, 0.1, &[5, 6], 0.7, 1.0);
    vec![
        DeviceSpec::Hvac(HvacSpec::with_defaults(H, 1.3)),
        DeviceSpec::FlexLoad(flex),
        DeviceSpec::Battery(BatterySpec::with_defaults(H, 2.0)),
        DeviceSpec::Pv(PvSpec::with_defaults(0.5)),
    ]
}

fn lerp(a: &[f64], b: &[f64], th: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| th * x + (1.0 - th) * y).collect()
}

fn keys(v: &[gridflex::devices::Violation<f64>]) -> BTreeSet<(String, Option<usize>)> {
    v.iter().map(|x| (format!("{:?}", x.kind), x.slot)).collect()
}

proptest! {
    #[test]
    fn indoor_temperature_is_affine_in_power(
        s in hvac(), t0 in vec_in(60.0, 100.0), p1 in vec_in(0.0, 3.0), p2 in vec_in(0.0, 3.0), c in -2.0f64..2.0,
    ) {
        let base = hvac_indoor_temperature(&s, &t0, &vec![0.0; H]);
        let a = hvac_indoor_temperature(&s, &t0, &p1);
        let b = hvac_indoor_temperature(&s, &t0, &p2);
        let mix: Vec<f64> = p1.iter().zip(&p2).map(|(x, y)| x + c * y).collect();
        let m = hvac_indoor_temperature(&s, &t0, &mix);
        for t in 0..H {
            let expect = base[t] + (a[t] - base[t]) + c * (b[t] - base[t]);
            prop_assert!((m[t] - expect).abs() <= 1e-10 * (1.0 + expect.abs()), "slot {t}: {} vs {}", m[t], expect);
        }
    }

    #[test]
    fn device_costs_are_convex(
        t0 in vec_in(60.0, 100.0), pv in vec_in(-5.0, 0.0),
        x in vec_in(-5.0, 5.0), y in vec_in(-5.0, 5.0), th in 0.0f64..=1.0,
    ) {
        let e = env(t0, pv);
        for spec in specs() {
            let lhs = device_cost(&spec, &lerp(&x, &y, th), &e);
            let rhs = th * device_cost(&spec, &x, &e) + (1.0 - th) * device_cost(&spec, &y, &e);
            prop_assert!(lhs <= rhs + 1e-9 * (1.0 + rhs.abs()), "{:?}: {lhs} > {rhs}", spec.kind());
        }
    }

    #[test]
    fn violations_shrink_as_tolerance_grows(
        t0 in vec_in(60.0, 100.0), pv in vec_in(-5.0, 0.0), x in vec_in(-6.0, 6.0),
        tau1 in 0.0f64..1.0, extra in 0.0f64..1.0,
    ) {
        let e = env(t0, pv);
        let tau2 = tau1 + extra;
        for spec in specs() {
            let loose = keys(&check_feasible(&spec, &x, &e, tau2));
            let tight = keys(&check_feasible(&spec, &x, &e, tau1));
            prop_assert!(loose.is_subset(&tight), "{:?}", spec.kind());
        }
    }

    #[test]
    fn soc_prefix_is_unchanged_by_an_appended_idle_slot(p in prop::collection::vec(-5.0f64..5.0, 1..30)) {
        let s = BatterySpec::with_defaults(p.len(), 1.0);
        let a = soc_trajectory(&s, &p, 1.0);
        let mut longer = p.clone();
        longer.push(0.0);
        let b = soc_trajectory(&s, &longer, 1.0);
        prop_assert_eq!(&b[..a.len()], &a[..]);
        prop_assert_eq!(b[a.len()], a[a.len() - 1]);
    }
}
