use gridflex::devices::DeviceSpec;
use gridflex::scenario::{assign_participation, generate_population, round_count, PopulationParams, TimeGrid};
use proptest::prelude::*;

fn within(v: f64, avg: f64, j: f64) -> bool {
    v >= avg * (1.0 - j) - 1e-12 && v <= avg * (1.0 + j) + 1e-12
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn population_is_pure_and_within_jitter(n in 1usize..80, pen in 0.0f64..=1.0, j in 0.0f64..0.5, seed in any::<u64>()) {
        let params = PopulationParams { n_households: n, pv_battery_penetration: pen, jitter_fraction: j, seed, ..Default::default() };
        let grid = TimeGrid::default();
        let a = generate_population(&params, &grid).unwrap();
        prop_assert_eq!(&a, &generate_population(&params, &grid).unwrap());
        prop_assert_eq!(a.len(), n);
        let der = a.iter().filter(|h| h.devices.len() == 4).count();
        prop_assert_eq!(der, round_count(pen, n));
        let avg = &params.device_averages;
        for h in &a {
            for d in &h.devices {
                match d {
                    DeviceSpec::Hvac(s) => {
                        prop_assert!(within(s.p_max[0], avg.hvac_p_max_kw, j));
                        prop_assert!(within(s.gamma, avg.hvac_gamma, j));
                        prop_assert!(within(s.power_gain, avg.hvac_power_gain, j));
                    }
                    DeviceSpec::FlexLoad(s) => {
                        for (p, a) in s.p_prefer.iter().zip(&avg.flex_profile_kw) {
                            prop_assert!(within(*p, *a, j));
                        }
                    }
                    DeviceSpec::Battery(s) => prop_assert!(within(s.p_charge_max, avg.battery_power_kw, j)),
                    DeviceSpec::Pv(s) => prop_assert!(within(s.panel_rating_kw, avg.pv_rating_kw, j)),
                }
                prop_assert!(d.validate(grid.slot_duration_hours).is_ok());
            }
        }
    }

    #[test]
    fn participation_partitions_the_population(n in 1usize..200, rate in 0.0f64..=1.0, seed in any::<u64>()) {
        let grid = TimeGrid::default();
        let pop = generate_population(&PopulationParams { n_households: n, ..Default::default() }, &grid).unwrap();
        let pop = assign_participation(pop, rate, seed).unwrap();
        let inside = pop.iter().filter(|h| h.participating).count();
        let outside = pop.iter().filter(|h| !h.participating).count();
        prop_assert_eq!(inside + outside, n);
        prop_assert_eq!(inside, round_count(rate, n));
    }
}
