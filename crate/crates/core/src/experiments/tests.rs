use super::*;
use crate::channel::SystemConfig;

fn small_cfg() -> SystemConfig {
    let mut cfg = SystemConfig::default();
    cfg.n_x = 2;
    cfg.n_y = 2;
    cfg.outer_max_iters = 5;
    cfg.rcg_max_iters = 50;
    cfg
}

#[test]
fn complexity_table_values() {
    let rcg = |n| complexity_estimate(ComplexityMethod::RcgJo, 1, 4, n).unwrap();
    let sdr = |n| complexity_estimate(ComplexityMethod::Sdr, 1, 4, n).unwrap();
    assert_eq!(rcg(4), 145.0);
    assert_eq!(rcg(16), 5137.0);
    assert_eq!(sdr(4), 8256.0);
    assert!(complexity_estimate(ComplexityMethod::Sdr, 0, 4, 4).is_err());
}

#[test]
fn names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    for v in SweepVariable::ALL {
        assert_eq!(v.name().parse::<SweepVariable>().unwrap(), v);
    }
    assert!("rcg".parse::<Method>().is_err());
    assert!("n".parse::<SweepVariable>().is_err());
}

#[test]
fn sweep_values_checked_against_domain() {
    let base = SystemConfig::default();
    assert!(SweepVariable::NElements.apply(&base, 0.3, 16.0).is_ok());
    assert!(SweepVariable::NElements.apply(&base, 0.3, 15.5).is_err());
    assert!(SweepVariable::NElements.apply(&base, 0.3, 0.0).is_err());
    assert!(SweepVariable::KDevices.apply(&base, 0.3, 2.5).is_err());
    assert!(SweepVariable::SampleFraction.apply(&base, 0.3, 1.5).is_err());
    assert!(SweepVariable::NoisePower.apply(&base, 0.3, -1.0).is_err());
    let (_, f) = SweepVariable::SampleFraction.apply(&base, 0.3, 0.5).unwrap();
    assert_eq!(f, 0.5);
}

#[test]
fn single_run_sweep_has_one_record() {
    let spec = SweepSpec {
        variable: SweepVariable::RateMin,
        values: vec![0.3],
        realizations: 1,
        methods: vec![Method::RandomPhaseMrt],
        base: small_cfg(),
        sample_fraction: 0.5,
        jobs: 1,
    };
    let res = run_sweep(&spec).unwrap();
    assert_eq!(res.records.len(), 1);
    assert_eq!(res.summary.len(), 1);
    assert_eq!(res.summary[0].runs, 1);
}

#[test]
fn invalid_spec_is_config_error() {
    let mut spec = SweepSpec {
        variable: SweepVariable::RateMin,
        values: vec![],
        realizations: 1,
        methods: vec![Method::NoRis],
        base: small_cfg(),
        sample_fraction: 0.5,
        jobs: 1,
    };
    assert!(matches!(run_sweep(&spec), Err(Error::Config(_))));
    spec.values = vec![0.3];
    spec.realizations = 0;
    assert!(matches!(run_sweep(&spec), Err(Error::Config(_))));
}

#[test]
fn methods_share_the_channel_draw() {
    let spec = SweepSpec {
        variable: SweepVariable::RateMin,
        values: vec![0.3],
        realizations: 3,
        methods: vec![Method::RcgJo, Method::RandomPhaseMrt, Method::NoRis],
        base: small_cfg(),
        sample_fraction: 0.5,
        jobs: 2,
    };
    let res = run_sweep(&spec).unwrap();
    for r in 0..3 {
        let hashes: Vec<u64> = res
            .records
            .iter()
            .filter(|x| x.realization == r)
            .map(|x| x.channel_hash)
            .collect();
        assert_eq!(hashes.len(), 3);
        assert!(hashes.iter().all(|&h| h == hashes[0] && h != 0));
    }
    let distinct: std::collections::HashSet<u64> = res.records.iter().map(|x| x.channel_hash).collect();
    assert_eq!(distinct.len(), 3);
}

#[test]
fn no_ris_single_device_closed_form() {
    let mut cfg = small_cfg();
    cfg.k_devices = 1;
    let ch = realization_channels(&cfg, 3).unwrap();
    let qos = Qos::from_config(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = BeamMatrix::random(cfg.m_antennas, 1, &mut rng);
    let gain = (w.as_matrix().column(0).adjoint() * &ch.direct[0])[(0, 0)].norm_sqr();
    let report = no_ris_with_beams(&ch, w, &qos, 0).unwrap();
    let expected = qos.sinr_target() * qos.noise_power / gain;
    if expected <= qos.p_max {
        assert!((report.total_power - expected).abs() <= 1e-12 * expected);
    } else {
        assert!(!report.feasible);
    }
}

#[test]
fn baselines_are_seed_deterministic() {
    let cfg = small_cfg();
    let ch = realization_channels(&cfg, 5).unwrap();
    let qos = Qos::from_config(&cfg);
    let a = baseline_random_phase_mrt(&ch, &qos, 11).unwrap();
    let b = baseline_random_phase_mrt(&ch, &qos, 11).unwrap();
    assert_eq!(a.total_power, b.total_power);
    let a = baseline_no_ris(&ch, &qos, 11).unwrap();
    let b = baseline_no_ris(&ch, &qos, 11).unwrap();
    assert_eq!(a.total_power, b.total_power);
}

#[test]
fn summary_uses_feasible_runs_only() {
    let rec = |p: f64, feasible| RunRecord {
        method: Method::NoRis,
        variable: SweepVariable::RateMin,
        value: 0.3,
        realization: 0,
        seed: 0,
        channel_hash: 1,
        total_power_w: p,
        required_power_w: p,
        feasible,
        outer_iters: 0,
        inner_iters: 0,
        error: None,
    };
    let rows = summarize(&[rec(1.0, true), rec(3.0, true), rec(1.0, false)]);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].feasible_runs, 2);
    assert!((rows[0].feasibility_rate - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(rows[0].mean_total_power_w, 2.0);
    assert_eq!(rows[0].std_error_w, 1.0);
}

#[test]
fn cdf_jumps_at_common_count() {
    let t = convergence_from_counts(&[(5, 7); 4]).unwrap();
    assert_eq!(t.outer, vec![(5, 1.0)]);
    assert_eq!(t.fraction_outer_within(4), 0.0);
    assert_eq!(t.fraction_outer_within(5), 1.0);
    assert!(convergence_from_counts(&[]).is_err());
    assert!(convergence_stats(&[]).is_err());
}

#[test]
fn cdf_is_monotone_and_ends_at_one() {
    let counts: Vec<(usize, usize)> = (0..37).map(|i| (i * 7 % 11, i * 13 % 17)).collect();
    let t = convergence_from_counts(&counts).unwrap();
    for cdf in [&t.outer, &t.inner] {
        assert!(cdf.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
        assert_eq!(cdf.last().unwrap().1, 1.0);
    }
    assert_eq!(ConvergenceTable::joint_fraction(&counts, 100, 100), 1.0);
}

#[test]
fn config_round_trip_and_unknown_keys() {
    let cfg = parse_config("n_x = 4\nn_y = 4\nrate_min = 0.5\nvariable = \"rate_min\"\nvalues = [0.3, 0.5]\nmethods = [\"no_ris\"]\n").unwrap();
    assert_eq!(cfg.system.n_elements(), 16);
    assert_eq!(cfg.system.rate_min, 0.5);
    assert_eq!(cfg.variable, SweepVariable::RateMin);
    assert_eq!(cfg.values, vec![0.3, 0.5]);
    assert_eq!(cfg.methods, vec![Method::NoRis]);
    assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
    assert_eq!(parse_config("").unwrap(), ExperimentConfig::default());

    for text in ["n_xx = 4", "k_devices = 0", "variable = \"q\"", "realizations = 0", "[a]\nb = 1", "rate_min = \"x\"", "n_x = ", "sample_fraction = 0", "values = []"] {
        assert!(matches!(parse_config(text), Err(Error::Config(_))), "{text}");
    }
}
