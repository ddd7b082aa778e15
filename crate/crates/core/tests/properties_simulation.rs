use gridflex::commands::{build_population, obtain_classifier, simulation_weather};
use gridflex::config::ScenarioConfig;
use gridflex::io::write_trace;
use gridflex::pricing::PriceSignal;
use gridflex::projection::project_ellipsoid;
use gridflex::scenario::{Household, WeatherDay};
use gridflex::simulation::{
    initial_states, run_day, run_horizon, DayInputs, HouseholdState, ModeVariant, RunInputs, SimSettings,
    SimulationMode, SimulationTrace,
};
use proptest::prelude::*;

fn config(n: usize, days: usize, weather_seed: u64) -> ScenarioConfig {
    let text = format!(
        "[weather]\nsource = \"synthetic\"\narchetype = \"phoenix\"\ndays = {days}\nburn_in_days = 1\nhistory_days = 30\n\
         [population]\nn_households = {n}\n[seeds]\nweather = {weather_seed}\n"
    );
    ScenarioConfig::from_toml_str(&text, std::path::Path::new(".")).unwrap()
}

fn run(cfg: &ScenarioConfig, mode: ModeVariant, weather: &[WeatherDay]) -> SimulationTrace {
    let pop = build_population(cfg).unwrap();
    let classifier = obtain_classifier(cfg).unwrap();
    let settings = cfg.sim_settings();
    let inputs = RunInputs { households: &pop, settings: &settings, classifier: classifier.as_ref(), config_fingerprint: cfg.fingerprint() };
    run_horizon(&inputs, &SimulationMode::simple(mode), weather).unwrap()
}

fn admissible(raw: &[f64], settings: &SimSettings) -> PriceSignal {
    let values = project_ellipsoid(raw, &settings.metric().unwrap()).unwrap();
    PriceSignal { values, day_index: 0 }
}

fn day_setup(n: usize, seed: u64) -> (Vec<Household>, SimSettings, DayInputs, Vec<HouseholdState>) {
    let cfg = config(n, 2, seed);
    let pop = build_population(&cfg).unwrap();
    let settings = cfg.sim_settings();
    let weather = simulation_weather(&cfg).unwrap();
    let inputs = DayInputs::for_day(&weather, 1, &settings.grid, &settings.forecast);
    let states = initial_states(&pop, &settings);
    (pop, settings, inputs, states)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn future_weather_never_reaches_earlier_prices(cut in 1usize..6, seed in 0u64..1000) {
        let cfg = config(10, 6, seed);
        let weather = simulation_weather(&cfg).unwrap();
        let mut altered = weather.clone();
        for d in &mut altered[cut..] {
            d.temperature_f.iter_mut().for_each(|v| *v = 0.0);
            d.irradiance_w_m2.iter_mut().for_each(|v| *v = 0.0);
        }
        for mode in [ModeVariant::DynamicContextAgnostic, ModeVariant::DynamicClustered] {
            let a = run(&cfg, mode, &weather);
            let b = run(&cfg, mode, &altered);
            for d in 0..cut {
                prop_assert_eq!(&a.days[d].prices, &b.days[d].prices, "{:?} day {}", mode, d);
            }
            if mode == ModeVariant::DynamicContextAgnostic {
                prop_assert_eq!(&a.days[cut].prices, &b.days[cut].prices);
            }
        }
    }

    #[test]
    fn aggregate_is_additive_and_order_free(
        seed in 0u64..1000, split in 1usize..11, raw in prop::collection::vec(-0.5f64..0.5, 24), shift in 1usize..11,
    ) {
        let (pop, settings, inputs, states) = day_setup(12, seed);
        let alpha = admissible(&raw, &settings);
        let whole = run_day(&pop, Some(&alpha), &inputs, &states, &settings).unwrap();
        let a = run_day(&pop[..split], Some(&alpha), &inputs, &states[..split], &settings).unwrap();
        let b = run_day(&pop[split..], Some(&alpha), &inputs, &states[split..], &settings).unwrap();
        for t in 0..whole.aggregate_kw.len() {
            let sum = a.aggregate_kw[t] + b.aggregate_kw[t];
            prop_assert!((whole.aggregate_kw[t] - sum).abs() <= 1e-9 * (1.0 + sum.abs()));
        }
        let mut rot_pop = pop.clone();
        rot_pop.rotate_left(shift);
        let mut rot_states = states.clone();
        rot_states.rotate_left(shift);
        let rotated = run_day(&rot_pop, Some(&alpha), &inputs, &rot_states, &settings).unwrap();
        for t in 0..whole.aggregate_kw.len() {
            prop_assert!((whole.aggregate_kw[t] - rotated.aggregate_kw[t]).abs() <= 1e-9 * (1.0 + whole.aggregate_kw[t].abs()));
        }
        for (i, plan) in rotated.plans.iter().enumerate() {
            prop_assert_eq!(plan, &whole.plans[(i + shift) % pop.len()]);
        }
    }

    #[test]
    fn non_participants_ignore_prices(
        seed in 0u64..1000, x in prop::collection::vec(-0.5f64..0.5, 24), y in prop::collection::vec(-0.5f64..0.5, 24),
    ) {
        let (pop, settings, inputs, states) = day_setup(12, seed);
        let a = run_day(&pop, Some(&admissible(&x, &settings)), &inputs, &states, &settings).unwrap();
        let b = run_day(&pop, Some(&admissible(&y, &settings)), &inputs, &states, &settings).unwrap();
        let mut checked = 0;
        for (i, hh) in pop.iter().enumerate() {
            if !hh.participating {
                prop_assert_eq!(&a.plans[i], &b.plans[i]);
                checked += 1;
            }
        }
        prop_assert!(checked > 0);
    }
}

#[test]
fn equal_inputs_give_byte_equal_traces() {
    let cfg = config(10, 5, 3);
    let weather = simulation_weather(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for mode in [ModeVariant::DynamicClustered, ModeVariant::TwoWay, ModeVariant::Tou] {
        let paths = [dir.path().join("a.jsonl"), dir.path().join("b.jsonl")];
        for p in &paths {
            write_trace(p, &run(&cfg, mode, &weather)).unwrap();
        }
        let a = std::fs::read(&paths[0]).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, std::fs::read(&paths[1]).unwrap(), "{mode:?}");
    }
}
