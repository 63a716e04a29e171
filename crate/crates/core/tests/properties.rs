use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, RngCore};

use mixprobit::basis::{BasisConfig, BasisExpansion, Dataset};
use mixprobit::inference::summarize_values;
use mixprobit::metrics::{askld, mann_whitney_auc, roc};
use mixprobit::model::{gating_weights, observed_loglik, ComponentParams, FitData, MixtureParams, PriorConfig};
use mixprobit::rjmcmc::{flatten, theta_dim, unflatten};
use mixprobit::rng::RngStream;
use mixprobit::sampler::{within_sweep, ChainState, SamplerSettings};
use mixprobit::simgen::{Benchmark, BenchmarkFunction};

fn dataset(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = RngStream::new(seed);
    let mut x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 10.0 - 3.0);
    // Pin the ends so no covariate is constant.
    for k in 0..p {
        x[(0, k)] = -3.0;
        x[(n - 1, k)] = 7.0;
    }
    let w = (0..n).map(|_| rng.random::<bool>()).collect();
    Dataset::new(x, w).unwrap()
}

fn random_params(r: usize, q: usize, l: usize, rng: &mut RngStream) -> MixtureParams {
    let mut tau = 50.0;
    let components = (0..r)
        .map(|_| {
            tau *= rng.random_range(0.1..0.9);
            ComponentParams {
                alpha: (0..q).map(|_| rng.random_range(-2.0..2.0)).collect(),
                beta: (0..l).map(|_| rng.random_range(-1.0..1.0)).collect(),
                tau,
            }
        })
        .collect();
    let delta = (1..r).map(|_| (0..q).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    MixtureParams { components, delta }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn basis_invariants(n in 8usize..60, p in 1usize..3, eps in 0.05f64..0.6, l_max in 1usize..30, seed in any::<u64>()) {
        let data = dataset(n, p, seed);
        let b = BasisExpansion::build(&data, &BasisConfig { epsilon: eps, l_max }).unwrap();
        prop_assert!(b.knots.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!(b.singular_values.iter().all(|&s| s >= 0.0));
        prop_assert!(b.singular_values.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(b.rank() <= l_max.min(b.knot_count()).min(n));
        prop_assert!((0.0..=1.0).contains(&b.energy_ratio));
        let gram = b.design.transpose() * &b.design;
        for a in 0..gram.nrows() {
            for c in 0..a {
                prop_assert!(gram[(a, c)].abs() <= 1e-8 * (gram[(a, a)] * gram[(c, c)]).sqrt() + 1e-300);
            }
        }
        for i in [0, n / 2, n - 1] {
            let row = b.basis_row(&data.row(i));
            for (k, v) in row.iter().enumerate() {
                prop_assert!((v - b.design[(i, k)]).abs() < 1e-8 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn gating_weights_form_a_simplex(
        rows in prop::collection::vec(prop::collection::vec(-800.0f64..800.0, 3), 0..4),
        x in prop::collection::vec(0.0f64..1.0, 2),
    ) {
        let z = [1.0, x[0], x[1]];
        let w = gating_weights(&rows, &z);
        prop_assert_eq!(w.len(), rows.len() + 1);
        prop_assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flatten_inverts(r in 1usize..4, q in 1usize..4, l in 0usize..6, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let p = random_params(r, q, l, &mut rng);
        let flat = flatten(&p);
        prop_assert_eq!(flat.len(), theta_dim(r, q, l));
        prop_assert_eq!(unflatten(&flat, q, l, &p.taus()), p);
    }

    #[test]
    fn sweep_keeps_state_valid(r in 1usize..4, seed in any::<u64>()) {
        let data = dataset(40, 1, seed);
        let basis = BasisExpansion::build(&data, &BasisConfig { epsilon: 0.1, l_max: 6 }).unwrap();
        let fd = FitData::new(&data, &basis).unwrap();
        let prior = PriorConfig::for_data(40, 3);
        let mut rng = RngStream::new(seed ^ 0x5eed);
        let mut state = ChainState::new(random_params(r, fd.q(), fd.l(), &mut rng), fd.n());
        for _ in 0..5 {
            within_sweep(&mut state, &fd, &prior, &SamplerSettings::default(), &mut rng).unwrap();
            prop_assert!(state.latent.signs_consistent(&fd.w));
            prop_assert!(state.params.tau_ordered(prior.c_tau));
            prop_assert_eq!(state.params.delta.len(), r - 1);
            prop_assert!(observed_loglik(&state.params, &fd) <= 0.0);
        }
    }

    #[test]
    fn roc_curve_is_monotone(labels in prop::collection::vec(any::<bool>(), 2..80), seed in any::<u64>()) {
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let mut rng = RngStream::new(seed);
        let scores: Vec<f64> = labels.iter().map(|_| (rng.random::<f64>() * 8.0).round()).collect();
        let c = roc(&labels, &scores).unwrap();
        prop_assert!(c.tpr.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(c.fpr.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!((c.fpr[0], c.tpr[0]), (0.0, 0.0));
        prop_assert_eq!((*c.fpr.last().unwrap(), *c.tpr.last().unwrap()), (1.0, 1.0));
        prop_assert!((0.0..=1.0).contains(&c.auc));
        prop_assert!((c.auc - mann_whitney_auc(&labels, &scores)).abs() < 1e-12);
    }

    #[test]
    fn askld_is_a_symmetric_divergence(
        a in prop::collection::vec(0.0f64..=1.0, 1..40),
        seed in any::<u64>(),
    ) {
        let mut rng = RngStream::new(seed);
        let b: Vec<f64> = a.iter().map(|_| rng.random::<f64>()).collect();
        let ab = askld(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - askld(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(askld(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn benchmark_probabilities_in_unit_interval(x in 0.0f64..=1.0, y in 0.0f64..=1.0, negated in any::<bool>()) {
        for f in [BenchmarkFunction::ASin, BenchmarkFunction::BPeak, BenchmarkFunction::CStep, BenchmarkFunction::DCylinder] {
            let bench = if negated { Benchmark::negated(f) } else { Benchmark::new(f) };
            let point: Vec<f64> = [x, y][..f.dimension()].to_vec();
            let p = bench.true_probability(&point).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn interval_contains_mean(values in prop::collection::vec(0.0f64..=1.0, 1..60), level in 0.05f64..0.99) {
        let mut v = values.clone();
        let (mean, low, high) = summarize_values(&mut v, level);
        prop_assert!(low <= mean && mean <= high);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(low >= min - 1e-12 && high <= max + 1e-12);
    }

    #[test]
    fn streams_repeat_and_substreams_differ(seed in any::<u64>()) {
        let (mut a, mut b) = (RngStream::new(seed), RngStream::new(seed));
        prop_assert_eq!(a.next_u64(), b.next_u64());
        let (mut s1, mut s2) = (RngStream::substream(seed, 1), RngStream::substream(seed, 2));
        prop_assert_ne!(s1.next_u64(), s2.next_u64());
    }
}
