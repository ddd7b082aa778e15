use gridflex::devices::{
    device_cost, hvac_natural_temperature, pv_availability, BatterySpec, DeviceEnv, DeviceKind, DeviceSpec, FlexLoadSpec,
    HvacSpec, PvSpec,
};
use gridflex::hems::{solve_household, DeviceControl, HouseholdPlan, HouseholdProblem, SolveOptions, WeatherContext};
use gridflex::scenario::Household;
use proptest::prelude::*;

const H: usize = 24;

fn weather(h: usize, hot: f64) -> WeatherContext<f64> {
    WeatherContext {
        slot_hours: 1.0,
        t_out: (0..h).map(|t| hot + 10.0 * ((t as f64 - 15.0) / 24.0 * std::f64::consts::TAU).cos()).collect(),
        irradiance: (0..h).map(|t| if (6..20).contains(&t) { 900.0 * ((t as f64 - 6.0) / 14.0 * std::f64::consts::PI).sin() } else { 0.0 }).collect(),
        t_in_0: 75.0,
        soc_init: None,
    }
}

fn flex(pref: Vec<f64>, gamma: f64) -> FlexLoadSpec<f64> {
    FlexLoadSpec::from_profile(pref, 0.3, 0.1, &[], gamma, 1.0)
}

fn full_house(participating: bool, pref: Vec<f64>) -> Household {
    let h = pref.len();
    Household {
        id: 0,
        devices: vec![
            DeviceSpec::Hvac(HvacSpec::with_defaults(h, 0.3)),
            DeviceSpec::FlexLoad(flex(pref, 0.5)),
            DeviceSpec::Battery(BatterySpec::with_defaults(h, 2.0)),
            DeviceSpec::Pv(PvSpec::with_defaults(0.2)),
        ],
        participating,
        node_label: String::new(),
    }
}

fn only(dev: DeviceSpec<f64>) -> Household {
    Household { id: 0, devices: vec![dev], participating: true, node_label: String::new() }
}

fn solve(hh: &Household, prices: Option<&[f64]>, w: WeatherContext<f64>, scale: f64, no_sell: bool, tol: f64) -> HouseholdPlan<f64> {
    let p = HouseholdProblem { household: hh, prices, weather: w, no_sell, gamma_scale: scale, control: DeviceControl::default() };
    solve_household(&p, &SolveOptions { max_iter: 5000, tol }).expect("household solve")
}

fn prices(h: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.3f64..0.3, h)
}

fn prefs(h: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.5f64..3.0, h)
}

/// Objective of an arbitrary candidate plan, matching the solver's definition.
fn objective(hh: &Household, w: &WeatherContext<f64>, powers: &[Vec<f64>], alpha: &[f64], scale: f64) -> f64 {
    let mut total = 0.0;
    for (spec, p) in hh.devices.iter().zip(powers) {
        let mut env = DeviceEnv { slot_hours: w.slot_hours, t0: Vec::new(), pv_available: Vec::new() };
        match spec {
            DeviceSpec::Hvac(s) => env.t0 = hvac_natural_temperature(s, w.t_in_0, &w.t_out),
            DeviceSpec::Pv(s) => env.pv_available = pv_availability(s, &w.irradiance),
            _ => {}
        }
        total += scale * device_cost(spec, p, &env) + p.iter().zip(alpha).map(|(a, b)| a * b).sum::<f64>();
    }
    total
}

/// Golden-section minimum of a convex function on `[a, b]`.
fn golden(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    if b - a < 1e-14 {
        return (a, f(a));
    }
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..120 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

fn flex_cost(s: &FlexLoadSpec<f64>, alpha: &[f64], p: &[f64]) -> f64 {
    s.gamma * p.iter().zip(&s.p_prefer).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
        + p.iter().zip(alpha).map(|(a, b)| a * b).sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn raising_a_slot_price_never_raises_that_slot(pref in prefs(H), alpha in prices(H), slot in 0..H, bump in 0.01f64..0.5) {
        let hh = only(DeviceSpec::FlexLoad(flex(pref, 1.0)));
        let before = solve(&hh, Some(&alpha), weather(H, 80.0), 1.0, false, 1e-8);
        let mut raised = alpha.clone();
        raised[slot] += bump;
        let after = solve(&hh, Some(&raised), weather(H, 80.0), 1.0, false, 1e-8);
        prop_assert!(after.net_power_kw[slot] <= before.net_power_kw[slot] + 1e-6,
            "{} > {}", after.net_power_kw[slot], before.net_power_kw[slot]);
    }

    #[test]
    fn stiff_preferences_pin_participants_to_their_benchmark(pref in prefs(H), alpha in prices(H), hot in 70.0f64..90.0) {
        let part = full_house(true, pref.clone());
        let bench = full_house(false, pref);
        // Battery cost is on SOC, so its curvature per kW carries a 1/capacity² factor and
        // needs two more decades of scale than the other devices.
        for (scale, with_battery) in [(1e4, false), (1e6, true)] {
            let a = solve(&part, Some(&alpha), weather(H, hot), scale, true, 1e-6);
            let b = solve(&bench, None, weather(H, hot), scale, true, 1e-6);
            for ((kind, x), (_, y)) in a.device_plans.iter().zip(&b.device_plans) {
                if *kind == DeviceKind::Battery && !with_battery {
                    continue;
                }
                for t in 0..H {
                    prop_assert!((x.power_kw[t] - y.power_kw[t]).abs() <= 1e-3, "scale {scale} {kind:?} slot {t}: {} vs {}", x.power_kw[t], y.power_kw[t]);
                }
            }
            if with_battery {
                for t in 0..H {
                    prop_assert!((a.net_power_kw[t] - b.net_power_kw[t]).abs() <= 1e-3, "scale {scale} net slot {t}");
                }
            }
        }
    }

    #[test]
    fn no_feasible_direction_improves_the_plan(
        pref in prefs(H), alpha in prices(H), others in prop::collection::vec(prices(H), 3),
        mix in prop::collection::vec(0.0f64..1.0, 3), hot in 70.0f64..90.0,
    ) {
        let hh = full_house(true, pref);
        let w = weather(H, hot);
        let plan = solve(&hh, Some(&alpha), w.clone(), 1.0, true, 1e-9);
        let powers = |p: &HouseholdPlan<f64>| p.device_plans.iter().map(|(_, d)| d.power_kw.clone()).collect::<Vec<_>>();
        let x = powers(&plan);
        let f0 = objective(&hh, &w, &x, &alpha, 1.0);
        prop_assert!((f0 - plan.objective_value).abs() <= 1e-9 * (1.0 + f0.abs()));
        // Convex combinations of other optimal plans are feasible targets.
        let targets: Vec<Vec<Vec<f64>>> = others.iter().map(|a| powers(&solve(&hh, Some(a), w.clone(), 1.0, true, 1e-9))).collect();
        let s: f64 = mix.iter().sum::<f64>().max(1e-9);
        for step in [1e-4, 1e-3, 1e-2] {
            let moved: Vec<Vec<f64>> = (0..x.len())
                .map(|d| (0..H).map(|t| {
                    let q: f64 = targets.iter().zip(&mix).map(|(tg, m)| m / s * tg[d][t]).sum();
                    x[d][t] + step * (q - x[d][t])
                }).collect())
                .collect();
            let f1 = objective(&hh, &w, &moved, &alpha, 1.0);
            prop_assert!(f1 >= f0 - 1e-8, "step {step}: {f1} < {f0}");
        }
    }

    #[test]
    fn two_slot_flex_matches_line_search(pref in prefs(2), alpha in prices(2), gamma in 0.05f64..5.0) {
        let s = flex(pref, gamma);
        let hh = only(DeviceSpec::FlexLoad(s.clone()));
        let plan = solve(&hh, Some(&alpha), weather(2, 80.0), 1.0, false, 1e-10);
        let e = s.total_energy;
        let lo = s.p_lower[0].max(e - s.p_upper[1]);
        let hi = s.p_upper[0].min(e - s.p_lower[1]);
        let (x0, best) = golden(&|p0| flex_cost(&s, &alpha, &[p0, e - p0]), lo, hi);
        prop_assert!((plan.net_power_kw[0] - x0).abs() <= 1e-5, "{} vs {x0}", plan.net_power_kw[0]);
        prop_assert!((plan.objective_value - best).abs() <= 1e-8 * (1.0 + best.abs()));
    }

    #[test]
    fn three_slot_flex_matches_nested_search(pref in prefs(3), alpha in prices(3), gamma in 0.05f64..5.0) {
        let s = flex(pref, gamma);
        let hh = only(DeviceSpec::FlexLoad(s.clone()));
        let plan = solve(&hh, Some(&alpha), weather(3, 80.0), 1.0, false, 1e-10);
        let e = s.total_energy;
        let (l, u) = (&s.p_lower, &s.p_upper);
        let inner = |p0: f64| {
            let rest = e - p0;
            let lo = l[1].max(rest - u[2]);
            let hi = u[1].min(rest - l[2]);
            golden(&|p1| flex_cost(&s, &alpha, &[p0, p1, rest - p1]), lo, hi).1
        };
        let lo0 = l[0].max(e - u[1] - u[2]);
        let hi0 = u[0].min(e - l[1] - l[2]);
        let (x0, best) = golden(&inner, lo0, hi0);
        prop_assert!((plan.net_power_kw[0] - x0).abs() <= 1e-4, "{} vs {x0}", plan.net_power_kw[0]);
        prop_assert!((plan.objective_value - best).abs() <= 1e-7 * (1.0 + best.abs()), "{} vs {best}", plan.objective_value);
    }

    #[test]
    fn two_slot_battery_matches_nested_search(
        alpha in prop::collection::vec(-2.0f64..2.0, 2), prefer in prop::collection::vec(0.2f64..0.8, 2), gamma in 0.05f64..5.0,
    ) {
        let mut b = BatterySpec::with_defaults(2, gamma);
        b.soc_prefer = prefer;
        let hh = only(DeviceSpec::Battery(b.clone()));
        let plan = solve(&hh, Some(&alpha), weather(2, 80.0), 1.0, false, 1e-10);
        let c = b.capacity_kwh;
        let cost = |p0: f64, p1: f64| {
            let s1 = b.soc_init + p0 / c;
            let s2 = s1 + p1 / c;
            gamma * ((s1 - b.soc_prefer[0]).powi(2) + (s2 - b.soc_prefer[1]).powi(2)) + alpha[0] * p0 + alpha[1] * p1
        };
        let inner = |p0: f64| {
            let s1 = b.soc_init + p0 / c;
            let lo = (-b.p_discharge_max).max((b.soc_lower - s1) * c);
            let hi = b.p_charge_max.min((b.soc_upper - s1) * c);
            golden(&|p1| cost(p0, p1), lo, hi).1
        };
        let lo0 = (-b.p_discharge_max).max((b.soc_lower - b.soc_init) * c);
        let hi0 = b.p_charge_max.min((b.soc_upper - b.soc_init) * c);
        let (x0, best) = golden(&inner, lo0, hi0);
        prop_assert!((plan.net_power_kw[0] - x0).abs() <= 1e-4, "{} vs {x0}", plan.net_power_kw[0]);
        prop_assert!((plan.objective_value - best).abs() <= 1e-7 * (1.0 + best.abs()), "{} vs {best}", plan.objective_value);
    }
}
