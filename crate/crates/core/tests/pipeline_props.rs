use gridshield::grid::{parse_case, GridCase, ObservationMatrix, IEEE14_CASE};
use gridshield::pipeline::{
    assign_loads, dirichlet_weights, generate_dataset, load_series, make_windows, rescale_profiles, save_series,
    synth_regional_profiles, MinMaxScaler, PipelineConfig, PipelineError,
};
use gridshield::{seed, stats};
use ndarray::Array2;
use proptest::prelude::*;

fn ieee14() -> (GridCase, ObservationMatrix) {
    let case = parse_case(IEEE14_CASE).unwrap();
    let h = ObservationMatrix::build(&case).unwrap();
    (case, h)
}

fn small_config() -> PipelineConfig {
    PipelineConfig { train_days: 3, test_days: 1, ..PipelineConfig::default() }
}

#[test]
fn daily_lag_dominates_half_day_lag() {
    let p = synth_regional_profiles(4, 14, 288, 21);
    for row in p.rows() {
        let v = row.to_vec();
        assert!(stats::autocorrelation(&v, 288) > stats::autocorrelation(&v, 144));
    }
}

#[test]
fn dirichlet_concentration_limits() {
    let mut rng = seed::rng(1, "dirichlet-test", 0);
    for _ in 0..200 {
        let w = dirichlet_weights(&mut rng, 4, 1e6);
        assert!(w.iter().all(|x| (x - 0.25).abs() < 0.01));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let n = 4000;
    let mean_max: f64 = (0..n)
        .map(|_| dirichlet_weights(&mut rng, 4, 0.2).into_iter().fold(0.0, f64::max))
        .sum::<f64>()
        / n as f64;
    assert!(mean_max > 0.7, "mean max weight {mean_max}");
}

#[test]
fn load_weights_sum_to_one() {
    let raw = synth_regional_profiles(4, 1, 288, 2);
    let regional = rescale_profiles(&raw, (0.25, 2.75), 2).unwrap();
    let buses: Vec<usize> = (1..=11).collect();
    let loads = assign_loads(&regional, &buses, 0.2, 0.02, 288, 2).unwrap();
    for row in loads.weights.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
    assert!(loads.loads.iter().all(|v| *v >= 0.0));
    assert!(assign_loads(&regional, &buses[..3], 0.2, 0.02, 288, 2).is_err());
}

#[test]
fn noiseless_columns_obey_dc_power_flow() {
    let (case, h) = ieee14();
    let cfg = PipelineConfig { noise_ratio: 0.0, ..small_config() };
    let data = generate_dataset(&case, &h, &cfg, 9).unwrap();
    let series = &data.train;
    assert_eq!(series.noise_sigma, 0.0);
    // Independent flow computation from the branch list.
    let angle = |t: usize, bus: usize| -> f64 {
        if bus == h.reference_bus() {
            0.0
        } else {
            series.states[[h.column_of(bus).unwrap(), t]]
        }
    };
    for t in (0..series.len()).step_by(7) {
        let mut inj = vec![0.0; case.n_buses()];
        for (row, (_, br)) in case.in_service_branches().enumerate() {
            let flow = br.b * (angle(t, br.from) - angle(t, br.to));
            assert!((series.raw[[case.n_buses() + row, t]] - flow).abs() < 1e-8);
            inj[case.bus_index(br.from).unwrap()] += flow;
            inj[case.bus_index(br.to).unwrap()] -= flow;
        }
        for (i, v) in inj.iter().enumerate() {
            assert!((series.raw[[i, t]] - v).abs() < 1e-8);
        }
        let balance: f64 = (0..case.n_buses()).map(|i| series.raw[[i, t]]).sum();
        assert!(balance.abs() < 1e-8);
    }
}

#[test]
fn dataset_is_deterministic_and_shaped() {
    let (case, h) = ieee14();
    let cfg = small_config();
    let a = generate_dataset(&case, &h, &cfg, 3).unwrap();
    let b = generate_dataset(&case, &h, &cfg, 3).unwrap();
    assert_eq!(a.train.raw, b.train.raw);
    assert_eq!(a.train_windows, b.train_windows);
    assert_eq!(a.train.raw.dim(), (34, 3 * 288));
    assert_eq!(a.test.raw.dim(), (34, 288));
    assert_eq!(a.test.start_step, 3 * 288);
    assert_eq!(a.train_windows.len() + a.val_windows.len(), 3 * 288 - 5);
    assert!(a.train_scaled.iter().all(|v| (0.0..=1.0).contains(v)));
    let c = generate_dataset(&case, &h, &cfg, 4).unwrap();
    assert_ne!(a.train.raw, c.train.raw);
}

#[test]
fn windows_overlap_by_t_minus_one() {
    let z = Array2::from_shape_fn((3, 20), |(r, c)| (r * 100 + c) as f64);
    let w = make_windows(z.clone(), 6).unwrap();
    assert_eq!(w.len(), 15);
    for i in 0..w.len() - 1 {
        let (a, b) = (w.window(i), w.window(i + 1));
        for j in 0..5 {
            assert_eq!(a.column(j + 1), b.column(j));
        }
        for j in 0..6 {
            assert_eq!(a.column(j), z.column(i + j));
        }
    }
}

#[test]
fn series_round_trip_is_bitwise() {
    let (case, h) = ieee14();
    let data = generate_dataset(&case, &h, &small_config(), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.bin");
    save_series(&path, &data.train, Some(&data.scaler), 5, "abc").unwrap();
    let (header, back) = load_series(&path).unwrap();
    assert_eq!(back, data.train);
    assert_eq!(header.scaler.as_ref(), Some(&data.scaler));
    assert_eq!(header.config_hash, "abc");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(load_series(&path), Err(PipelineError::Artifact(_))));
}

proptest! {
    #[test]
    fn scaler_round_trip(values in proptest::collection::vec(-50.0f64..50.0, 40)) {
        let z = Array2::from_shape_vec((4, 10), values).unwrap();
        let s = MinMaxScaler::fit(&z).unwrap();
        let back = s.invert(&s.apply(&z));
        for (a, b) in back.iter().zip(z.iter()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
