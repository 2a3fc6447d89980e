use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ris_uplink::channel::{circular_gaussian, SystemConfig};
use ris_uplink::estimation::{make_mask, unvectorize, vectorize, SampledMatrix};
use ris_uplink::experiments::{convergence_from_counts, parse_config, summarize, Method, RunRecord, SweepVariable};
use ris_uplink::manifold::{
    inner_product, project_tangent, retract, tangency_residuals, AmbientPair, BeamMatrix, PhaseVector,
    ProductPoint,
};
use ris_uplink::power::{constraint_values, min_power_from_gains, Qos};

fn point_and_ambient(n: usize, m: usize, k: usize, seed: u64) -> (ProductPoint, AmbientPair, AmbientPair) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = ProductPoint::new(PhaseVector::random(n, &mut rng), BeamMatrix::random(m, k, &mut rng));
    let mut amb = || AmbientPair {
        theta: DVector::from_fn(n, |_, _| circular_gaussian(&mut rng)),
        w: DMatrix::from_fn(m, k, |_, _| circular_gaussian(&mut rng)),
    };
    let (a, b) = (amb(), amb());
    (x, a, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projection_is_idempotent_and_orthogonal(n in 1usize..20, m in 1usize..6, k in 1usize..4, seed: u64) {
        let (x, u, other) = point_and_ambient(n, m, k, seed);
        let v = project_tangent(&x, &u).unwrap();
        let again = project_tangent(&x, &v.to_ambient()).unwrap();
        let diff = (again.d_theta() - v.d_theta()).norm() + (again.d_w() - v.d_w()).norm();
        prop_assert!(diff <= 1e-12 * (1.0 + v.norm()));
        let (rt, rw) = tangency_residuals(&x, &v);
        prop_assert!(rt < 1e-10 && rw < 1e-10);

        // The residual u - P(u) is orthogonal to every tangent vector.
        let t = project_tangent(&x, &other).unwrap();
        let residual = AmbientPair { theta: &u.theta - v.d_theta(), w: &u.w - v.d_w() };
        let dot = t.to_ambient().inner(&residual);
        prop_assert!(dot.abs() <= 1e-10 * (1.0 + t.norm() * u.norm_squared().sqrt()));
    }

    #[test]
    fn retraction_stays_on_manifold(n in 1usize..20, m in 1usize..6, k in 1usize..4, step in -10.0f64..10.0, seed: u64) {
        let (x, u, _) = point_and_ambient(n, m, k, seed);
        let v = project_tangent(&x, &u).unwrap();
        let y = retract(&x, &v, step).unwrap();
        for z in y.theta.as_vector().iter() {
            prop_assert!((z.norm() - 1.0).abs() < 1e-12);
        }
        for c in y.w.as_matrix().column_iter() {
            prop_assert!((c.norm() - 1.0).abs() < 1e-12);
        }
        prop_assert_eq!(retract(&x, &v, 0.0).unwrap(), x);
    }

    #[test]
    fn inner_product_is_symmetric(n in 1usize..10, m in 1usize..5, k in 1usize..3, seed: u64) {
        let (x, a, b) = point_and_ambient(n, m, k, seed);
        let (u, v) = (project_tangent(&x, &a).unwrap(), project_tangent(&x, &b).unwrap());
        let uv = inner_product(&u, &v).unwrap();
        let vu = inner_product(&v, &u).unwrap();
        prop_assert!((uv - vu).abs() <= 1e-12 * (1.0 + uv.abs()));
        prop_assert!(inner_product(&u, &u).unwrap() >= 0.0);
    }

    #[test]
    fn mask_has_requested_size(nx in 1usize..12, ny in 1usize..12, fraction in 0.01f64..=1.0, seed: u64) {
        let n = nx * ny;
        let want = (fraction * n as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match make_mask(nx, ny, fraction, &mut rng) {
            Ok(mask) => {
                prop_assert_eq!(mask.len(), want);
                let mut again = ChaCha8Rng::seed_from_u64(seed);
                prop_assert_eq!(make_mask(nx, ny, fraction, &mut again).unwrap(), mask);
            }
            Err(_) => prop_assert_eq!(want, 0),
        }
    }

    #[test]
    fn sampling_is_idempotent(nx in 1usize..8, ny in 1usize..8, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let full = DMatrix::from_fn(nx, ny, |_, _| circular_gaussian(&mut rng));
        let mask = make_mask(nx, ny, 0.5f64.max(1.0 / (nx * ny) as f64), &mut rng).unwrap();
        let once = SampledMatrix::sample(&full, &mask).unwrap();
        let twice = SampledMatrix::sample(once.values(), &mask).unwrap();
        prop_assert_eq!(once.values(), twice.values());
    }

    #[test]
    fn vectorize_round_trips(nx in 1usize..8, ny in 1usize..8, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(nx, ny, |_, _| circular_gaussian(&mut rng));
        let v = vectorize(&x);
        prop_assert_eq!(v[(nx - 1) * ny], x[(nx - 1, 0)]);
        prop_assert_eq!(unvectorize(&v, nx, ny).unwrap(), x);
    }

    #[test]
    fn min_power_meets_every_target_with_equality(k in 1usize..5, seed: u64, rate in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(k, k, |r, c| {
            let z: Complex64 = circular_gaussian(&mut rng);
            if r == c { 1e-8 * (1.0 + z.norm()) } else { 1e-10 * z.norm() }
        });
        let qos = Qos { rate_min: rate, noise_power: 1e-9, p_max: 1e3 };
        if let Ok(p) = min_power_from_gains(&a, &qos) {
            let g = constraint_values(&a, p.as_vector(), &qos);
            for gk in g.iter() {
                prop_assert!(gk.abs() <= 1e-9 * qos.noise_power);
            }
            prop_assert!(p.as_vector().iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn summary_means_match_records(powers in prop::collection::vec((0.0f64..2.0, any::<bool>()), 1..40)) {
        let records: Vec<RunRecord> = powers
            .iter()
            .enumerate()
            .map(|(i, &(p, feasible))| RunRecord {
                method: Method::RcgJo,
                variable: SweepVariable::NElements,
                value: 64.0,
                realization: i,
                seed: i as u64,
                channel_hash: 0,
                total_power_w: p,
                required_power_w: p,
                feasible,
                outer_iters: i % 7,
                inner_iters: i % 11,
                error: None,
            })
            .collect();
        let row = &summarize(&records)[0];
        let feasible: Vec<f64> = powers.iter().filter(|x| x.1).map(|x| x.0).collect();
        prop_assert_eq!(row.feasible_runs, feasible.len());
        prop_assert!((0.0..=1.0).contains(&row.feasibility_rate));
        if feasible.is_empty() {
            prop_assert!(row.mean_total_power_w.is_nan());
        } else {
            let mean = feasible.iter().sum::<f64>() / feasible.len() as f64;
            prop_assert!((row.mean_total_power_w - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn cdfs_are_monotone_and_end_at_one(counts in prop::collection::vec((0usize..50, 0usize..500), 1..100)) {
        let t = convergence_from_counts(&counts).unwrap();
        for cdf in [&t.outer, &t.inner] {
            prop_assert!(cdf.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
            prop_assert_eq!(cdf.last().unwrap().1, 1.0);
        }
        let max_outer = counts.iter().map(|c| c.0).max().unwrap();
        prop_assert_eq!(t.fraction_outer_within(max_outer), 1.0);
    }

    #[test]
    fn config_text_round_trips(k in 1usize..6, m in 1usize..8, nx in 1usize..9, rate in 0.01f64..3.0, seed: u32) {
        let text = format!("k_devices = {k}\nm_antennas = {m}\nn_x = {nx}\nrate_min = {rate:?}\nrng_seed = {seed}\n");
        let cfg = parse_config(&text).unwrap();
        prop_assert_eq!(cfg.system.k_devices, k);
        prop_assert_eq!(cfg.system.rate_min, rate);
        prop_assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg.clone());
        let defaults = SystemConfig::default();
        prop_assert_eq!(cfg.system.noise_power, defaults.noise_power);
    }
}
