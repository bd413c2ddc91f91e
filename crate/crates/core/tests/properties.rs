use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use scorekit::solver::{Counted, OracleDenoiser};
use scorekit::train::{
    batch_loss, loss_and_grad, prepare_batch, Conditioning, Mlp, MlpSpec, Objective,
};
use scorekit::{
    rng_from_seed, Component, Condition, Frame, GridKind, LossWeighting, OracleGmm, Sampler,
    StepGrid, TrainNoise,
};
use statrs::distribution::{Continuous, Normal};

fn samplers() -> Vec<Sampler> {
    vec![
        Sampler::Euler,
        Sampler::Heun,
        Sampler::DpmPP { order: 1 },
        Sampler::DpmPP { order: 2 },
        Sampler::DpmPP { order: 3 },
        Sampler::UniPc { order: 2 },
        Sampler::UniPc { order: 3 },
        Sampler::UniPc { order: 4 },
    ]
}

fn grid_kind() -> impl Strategy<Value = GridKind> {
    prop::sample::select(GridKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dirac_endpoint_is_exact(
        point in prop::collection::vec(-3.0f64..3.0, 2),
        x_t in prop::collection::vec(-200.0f64..200.0, 2),
        steps in 1usize..24,
        kind in grid_kind(),
    ) {
        let d = OracleDenoiser::new(OracleGmm::dirac(point.clone()).unwrap());
        let grid = StepGrid::build(kind, steps, 0.002, 80.0, 7.0).unwrap();
        for s in samplers() {
            let x = s.solve(&d, &grid, &x_t, None).unwrap().x;
            for (a, b) in x.iter().zip(&point) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()) * 10.0, "{s}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn reported_nfe_matches_counter(steps in 1usize..40, seed in any::<u64>()) {
        let d = Counted::new(OracleDenoiser::new(OracleGmm::benchmark()));
        let grid = StepGrid::edm_default(steps).unwrap();
        let mut rng = rng_from_seed(seed);
        let x_t: Vec<f64> = (0..2).map(|_| 80.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        for s in samplers() {
            d.reset();
            let sol = s.solve(&d, &grid, &x_t, None).unwrap();
            prop_assert_eq!(sol.nfe, d.count());
            let expect = if s == Sampler::Heun { 2 * steps as u64 - 1 } else { steps as u64 };
            prop_assert_eq!(sol.nfe, expect);
        }
    }

    #[test]
    fn grids_are_strictly_decreasing(steps in 1usize..200, kind in grid_kind(), rho in 1.0f64..12.0) {
        let g = StepGrid::build(kind, steps, 0.002, 80.0, rho).unwrap();
        let s = g.sigmas();
        prop_assert_eq!(s.len(), steps + 1);
        prop_assert!((s[0] - 80.0).abs() < 1e-9 && (s[steps - 1] - 0.002).abs() < 1e-12 || steps == 1);
        prop_assert_eq!(s[steps], 0.0);
        prop_assert!(s.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn frame_round_trip(t in 0.0f64..0.999, x in -10.0f64..10.0) {
        for f in Frame::ALL {
            let (xe, sigma) = f.rescale_to_edm(&[x], t).unwrap();
            let (xf, t2) = f.from_edm(&xe, sigma).unwrap();
            prop_assert!((t2 - t).abs() < 1e-10, "{f}");
            prop_assert!((xf[0] - x).abs() < 1e-10 * (1.0 + x.abs()), "{f}");
        }
    }
}

/// 1-D mixture log density against statrs normal densities.
#[test]
fn log_density_matches_reference_normals() {
    let comps = vec![
        Component::new(0.2, vec![-1.5], 0.3),
        Component::new(0.5, vec![0.2], 0.6),
        Component::new(0.3, vec![2.0], 0.1),
    ];
    let gmm = OracleGmm::new(1, comps.clone()).unwrap();
    for sigma in [1e-3, 0.05, 0.7, 4.0, 80.0] {
        for i in 0..41 {
            let x = -4.0 + 0.2 * i as f64;
            let p: f64 = comps
                .iter()
                .map(|c| c.weight * Normal::new(c.mean[0], c.std.hypot(sigma)).unwrap().pdf(x))
                .sum();
            if p < 1e-250 {
                continue;
            }
            let got = gmm.log_density(&[x], sigma).unwrap();
            assert!(
                (got - p.ln()).abs() < 1e-9 * (1.0 + p.ln().abs()),
                "σ={sigma} x={x}: {got} vs {}",
                p.ln()
            );
        }
    }
}

/// Central differences of the batch loss against reverse-mode gradients for
/// every parameter tensor of a 2-16-16-2 network.
#[test]
fn gradients_match_finite_differences() {
    for (objective, conditioning) in [
        (
            Objective::EdmDenoise,
            Conditioning::Adaln {
                labels: 2,
                embed_dim: 4,
            },
        ),
        (Objective::RectifiedFlow, Conditioning::None),
        (Objective::VPred, Conditioning::Concat { obs_dim: 2 }),
        (Objective::Epsilon, Conditioning::None),
    ] {
        let spec = MlpSpec::new(2, vec![16, 16], conditioning).unwrap();
        let mut rng = rng_from_seed(17);
        let init = Mlp::new(spec.clone(), &mut rng);
        let params = init
            .params()
            .iter()
            .map(|p| p.mapv(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let mut mlp = Mlp::from_params(spec, params).unwrap();
        let gmm = OracleGmm::two_component();
        let x0 = gmm.sample(&mut rng, 12);
        let conds: Vec<Option<Condition>> = (0..12)
            .map(|i| match conditioning {
                Conditioning::Adaln { .. } => (i % 3 != 0).then_some(Condition::Label(i % 2)),
                Conditioning::Concat { .. } => {
                    Some(Condition::Observation(vec![0.1 * i as f64, -0.3]))
                }
                Conditioning::None => None,
            })
            .collect();
        let batch = prepare_batch(
            objective,
            &x0,
            conds,
            &TrainNoise::LogNormal {
                p_mean: -1.2,
                p_std: 1.2,
            },
            &LossWeighting::Edm { sigma_data: 0.5 },
            0.5,
            &mut rng,
        )
        .unwrap();
        let (loss, grads) = loss_and_grad(&mlp, &batch).unwrap();
        assert!((loss - batch_loss(&mlp, &batch).unwrap()).abs() < 1e-10 * loss.abs().max(1.0));
        for (g, grad) in grads.iter().enumerate() {
            for _ in 0..20 {
                let idx = rng.random_range(0..mlp.params()[g].len());
                let orig = mlp.params()[g].as_slice().unwrap()[idx];
                let h = 1e-6;
                mlp.params_mut()[g].as_slice_mut().unwrap()[idx] = orig + h;
                let lp = batch_loss(&mlp, &batch).unwrap();
                mlp.params_mut()[g].as_slice_mut().unwrap()[idx] = orig - h;
                let lm = batch_loss(&mlp, &batch).unwrap();
                mlp.params_mut()[g].as_slice_mut().unwrap()[idx] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = grad.as_slice().unwrap()[idx];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7);
                assert!(rel < 1e-3, "{objective} tensor {g}[{idx}]: fd {fd} vs {an}");
            }
        }
    }
}
