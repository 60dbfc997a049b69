use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, RngCore};

use dperm::erm::{epsilon_prime, objective_gradient, objective_value, solve_erm, train_objective_perturbation};
use dperm::intervals::{ci_output, estimate_pieces, CiSpec};
use dperm::losses::LossModel;
use dperm::mechanisms::{priv_spd_mat, project_spd, RngStream};
use dperm::preprocess::{prepare, ColumnSchema, RawTable, Schema};
use dperm::synthetic::{generate, LabelModel, SynthSpec};
use dperm::types::validate_dataset;
use dperm::{
    train_output_perturbation, Dataset, IntervalMethod, IntervalSet, ParamVector, PrivacyBudget, Record,
    TrainConfig,
};

fn loss_strategy() -> impl Strategy<Value = LossModel> {
    prop_oneof![Just(LossModel::Logistic), (0.2f64..2.0).prop_map(|h| LossModel::huber(h).unwrap())]
}

/// Records with norm at most one and both labels present.
fn dataset_strategy(max_n: usize, max_dim: usize) -> impl Strategy<Value = Dataset> {
    (1..=max_dim).prop_flat_map(move |dim| {
        prop::collection::vec((prop::collection::vec(-1.0f64..1.0, dim), any::<bool>()), 2..=max_n).prop_map(
            |rows| {
                let records = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (x, pos))| {
                        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
                        let y = if i == 0 { 1 } else if i == 1 { -1 } else if pos { 1 } else { -1 };
                        Record::new(x.iter().map(|v| v / norm).collect::<Vec<_>>(), y)
                    })
                    .collect();
                Dataset::new(records).unwrap()
            },
        )
    })
}

fn symmetric_strategy(max_dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_dim).prop_flat_map(|dim| {
        prop::collection::vec(-5.0f64..5.0, dim * dim).prop_map(move |v| {
            let a = DMatrix::from_vec(dim, dim, v);
            (&a + a.transpose()) * 0.5
        })
    })
}

#[test]
fn loss_derivatives_are_bounded() {
    let mut rng = RngStream::new(1, 0);
    for m in [LossModel::Logistic, LossModel::huber(1.0).unwrap(), LossModel::huber(0.3).unwrap()] {
        let t = m.curvature_bound();
        for _ in 0..1_000_000 {
            let z = rng.random_range(-40.0..40.0);
            assert!(m.derivative(z).abs() <= 1.0);
            assert!(m.second_derivative(z).abs() <= t);
        }
    }
}

#[test]
fn identical_streams_give_identical_bits() {
    let mut a = RngStream::new(12, 7);
    let mut b = RngStream::new(12, 7);
    let mut c = RngStream::new(12, 8);
    let xa: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
    let xb: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
    let xc: Vec<u64> = (0..64).map(|_| c.next_u64()).collect();
    assert_eq!(xa, xb);
    assert_ne!(xa, xc);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inverted_intervals_are_rejected(
        lo in prop::collection::vec(-10.0f64..10.0, 1..6),
        j in 0usize..6,
        gap in 1e-9f64..5.0,
    ) {
        let j = j % lo.len();
        let mut hi: Vec<f64> = lo.iter().map(|v| v + 1.0).collect();
        prop_assert!(IntervalSet::new(lo.clone(), hi.clone(), 0.05, IntervalMethod::MonteCarloDP).is_ok());
        hi[j] = lo[j] - gap;
        prop_assert!(IntervalSet::new(lo, hi, 0.05, IntervalMethod::MonteCarloDP).is_err());
    }

    #[test]
    fn validation_is_idempotent(d in dataset_strategy(20, 4)) {
        let once = validate_dataset(d.clone()).unwrap();
        prop_assert_eq!(validate_dataset(once.clone()).unwrap(), once);
    }

    #[test]
    fn projection_is_idempotent(m in symmetric_strategy(6), floor in 1e-4f64..1.0) {
        let p = project_spd(&m, floor).unwrap();
        let q = project_spd(p.entries(), floor).unwrap();
        prop_assert!((q.entries() - p.entries()).amax() <= 1e-9);
        prop_assert!(p.min_eigenvalue() >= floor - 1e-9);
    }

    #[test]
    fn private_release_is_invertible_and_conditioned(
        m in symmetric_strategy(5),
        c in 1e-4f64..0.1,
        eps in 0.05f64..2.0,
        zcdp in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let phi = if zcdp { PrivacyBudget::zcdp(eps).unwrap() } else { PrivacyBudget::pure_dp(eps).unwrap() };
        let out = priv_spd_mat(&m, 0.01, phi, c, &mut RngStream::new(seed, 0)).unwrap();
        let e = out.entries();
        prop_assert!((e - e.transpose()).amax() == 0.0);
        prop_assert!(out.min_eigenvalue() >= 2.0 * c - 1e-9);
        let lmax = out.eigenvalues().max();
        prop_assert!(out.condition_number() <= lmax / (2.0 * c) * (1.0 + 1e-9));
        let inv = e.clone().try_inverse();
        prop_assert!(inv.is_some());
    }

    #[test]
    fn solver_reaches_stationarity(
        d in dataset_strategy(40, 4),
        m in loss_strategy(),
        c in 1e-3f64..0.5,
        beta_scale in 0.0f64..20.0,
        seed in any::<u64>(),
    ) {
        let cfg = TrainConfig::with_c(c);
        let mut rng = RngStream::new(seed, 0);
        let beta = DVector::from_fn(d.dim(), |_, _| rng.random_range(-1.0..1.0) * beta_scale);
        let theta = solve_erm(&d, &m, &cfg, Some(&beta)).unwrap();
        let g = objective_gradient(&d, &m, &cfg, &theta, Some(&beta)).unwrap();
        prop_assert!(g.norm() <= cfg.tol);
        for j in 0..d.dim() {
            for delta in [-0.01, 0.01] {
                let mut moved = theta.to_vec();
                moved[j] += delta;
                let moved = ParamVector::from_slice(&moved).unwrap();
                prop_assert!(
                    objective_value(&d, &m, &cfg, &moved, Some(&beta)).unwrap()
                        > objective_value(&d, &m, &cfg, &theta, Some(&beta)).unwrap()
                );
            }
        }
    }

    #[test]
    fn objective_perturbation_is_deterministic(d in dataset_strategy(30, 3), seed in any::<u64>()) {
        let cfg = TrainConfig::with_c(0.05);
        let eps = PrivacyBudget::pure_dp(2.0).unwrap();
        let a = train_objective_perturbation(&d, &LossModel::Logistic, &cfg, eps, &mut RngStream::new(seed, 1));
        let b = train_objective_perturbation(&d, &LossModel::Logistic, &cfg, eps, &mut RngStream::new(seed, 1));
        match (a, b) {
            (Ok(a), Ok(b)) => {
                let bits = |f: &dperm::PrivateFit| f.theta_tilde.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                prop_assert_eq!(bits(&a), bits(&b));
            }
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            _ => prop_assert!(false, "runs disagree"),
        }
    }

    #[test]
    fn remaining_budget_is_below_epsilon(eps in 0.01f64..5.0, t in 0.05f64..1.0, n in 1usize..100_000, c in 1e-6f64..10.0) {
        let e1 = epsilon_prime(eps, t, n, c);
        prop_assert!(e1 < eps);
        prop_assert!(epsilon_prime(eps, t, n, c * 2.0) >= e1);
        prop_assert!(epsilon_prime(eps, t, n * 2, c) >= e1);
    }

    #[test]
    fn closed_form_interval_is_centred_on_the_fit(seed in any::<u64>(), rho in 0.01f64..2.0, m in loss_strategy()) {
        let d = generate(&SynthSpec {
            n: 300,
            d: 2,
            theta_star: ParamVector::from_slice(&[1.0, -1.0, 0.3]).unwrap(),
            model: LabelModel::LogisticGen,
            seed,
        }).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let phi = PrivacyBudget::zcdp(rho).unwrap();
        let fit = train_output_perturbation(&d, &m, &TrainConfig::with_c(0.01), phi, &mut rng).unwrap();
        let pieces = estimate_pieces(&d, &m, &fit, phi, phi, &mut rng).unwrap();
        let spec = CiSpec::new(0.05, 0, IntervalMethod::ClosedFormZCDP).unwrap();
        let ci = ci_output(&fit, &pieces, &spec, &mut rng).unwrap();
        for j in 0..ci.len() {
            let t = fit.theta_tilde[j];
            prop_assert!(ci.contains(j, t));
            let (below, above) = (t - ci.lo()[j], ci.hi()[j] - t);
            prop_assert!((below - above).abs() <= 1e-12 * below.abs().max(1.0));
        }
    }

    #[test]
    fn generated_datasets_are_valid(
        n in 1usize..200,
        theta in prop::collection::vec(-3.0f64..3.0, 2..7),
        margin in any::<bool>(),
        seed in any::<u64>(),
    ) {
        prop_assume!(theta.iter().any(|v| *v != 0.0));
        let spec = SynthSpec {
            n,
            d: theta.len() - 1,
            theta_star: ParamVector::from_slice(&theta).unwrap(),
            model: if margin { LabelModel::MarginGen } else { LabelModel::LogisticGen },
            seed,
        };
        let d = generate(&spec).unwrap();
        prop_assert_eq!(d.len(), n);
        prop_assert!(validate_dataset(d).is_ok());
    }

    #[test]
    fn pipeline_output_is_valid(
        rows in prop::collection::vec((-1e4f64..1e4, 0usize..3, -5.0f64..5.0, any::<bool>()), 2..40),
    ) {
        let schema = Schema::new(vec![
            ColumnSchema::numeric("a"),
            ColumnSchema::categorical("k", &["x", "y", "z"]),
            ColumnSchema::numeric("b"),
            ColumnSchema::target("t"),
        ]).unwrap();
        let cats = ["x", "y", "z"];
        let mut cells: Vec<Vec<String>> = rows
            .iter()
            .map(|(a, k, b, pos)| vec![a.to_string(), cats[*k].to_string(), b.to_string(), if *pos { "yes" } else { "no" }.to_string()])
            .collect();
        cells[0][3] = "yes".into();
        cells[1][3] = "no".into();
        let table = RawTable { headers: vec!["a".into(), "k".into(), "b".into(), "t".into()], rows: cells };
        let p = prepare(&table, &schema, None).unwrap();
        prop_assert_eq!(p.dataset.dim(), 6);
        prop_assert!(validate_dataset(p.dataset).is_ok());
    }
}
