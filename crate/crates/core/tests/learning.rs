use dsr::feature_maps::{multiscale_blocks, BlockSet, FeatureMap};
use dsr::learning::*;
use dsr::sparse_solver::{solve_batch, CodeMatrix, SolverOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vectors(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> FeatureMap<f64> {
    FeatureMap::from_fn(w, h, c, |_, _, _| rng.gen_range(0.0..1.0)).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn loss_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-4;
    let mut worst = 0.0f64;
    for instance in 0..20 {
        let d = rng.gen_range(2..6);
        let n = rng.gen_range(1..5);
        let m = rng.gen_range(1..6);
        let xv = random_vectors(&mut rng, n, d);
        let yv = random_vectors(&mut rng, m, d);
        let wv: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        if rng.gen_bool(0.6) {
                            rng.gen_range(-1.0..1.0)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let label = if instance % 2 == 0 {
            PairLabel::Genuine
        } else {
            PairLabel::Impostor
        };
        let beta = 0.4;
        let w = CodeMatrix::from_dense_columns(m, wv).unwrap();
        let loss = |xv: &Vec<Vec<f64>>, yv: &Vec<Vec<f64>>| {
            let x = BlockSet::from_vectors(d, xv.clone()).unwrap();
            let y = BlockSet::from_vectors(d, yv.clone()).unwrap();
            verification_loss(&x, &y, &w, label, beta).unwrap()
        };
        let x = BlockSet::from_vectors(d, xv.clone()).unwrap();
        let y = BlockSet::from_vectors(d, yv.clone()).unwrap();
        let (dx, dy) = loss_gradients(&x, &y, &w, label).unwrap();
        for i in 0..n {
            for k in 0..d {
                let (mut p, mut q) = (xv.clone(), xv.clone());
                p[i][k] += h;
                q[i][k] -= h;
                let fd = (loss(&p, &yv) - loss(&q, &yv)) / (2.0 * h);
                worst = worst.max(rel_err(dx[i][k], fd));
            }
        }
        for j in 0..m {
            for k in 0..d {
                let (mut p, mut q) = (yv.clone(), yv.clone());
                p[j][k] += h;
                q[j][k] -= h;
                let fd = (loss(&xv, &p) - loss(&xv, &q)) / (2.0 * h);
                worst = worst.max(rel_err(dy[j][k], fd));
            }
        }
    }
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}

fn pair_loss(
    config: &FcnConfig,
    params: &FcnParams<f64>,
    pair: &VerificationPair<f64>,
    w: &CodeMatrix<f64>,
) -> f64 {
    let x = multiscale_blocks(&fcn_forward(config, params, &pair.probe).unwrap(), &[1]).unwrap();
    let y = multiscale_blocks(&fcn_forward(config, params, &pair.gallery).unwrap(), &[1]).unwrap();
    verification_loss(&x, &y, w, pair.label, 0.4).unwrap()
}

#[test]
fn end_to_end_parameter_gradient() {
    let config: FcnConfig = "c4,p,c6".parse().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = FcnParams::he_init(&config, 11);
    for label in [PairLabel::Genuine, PairLabel::Impostor] {
        let pair = VerificationPair {
            probe: random_map(&mut rng, 6, 4, 3),
            gallery: random_map(&mut rng, 6, 6, 3),
            label,
        };
        let (xm, xt) = fcn_forward_traced(&config, &params, &pair.probe).unwrap();
        let (ym, yt) = fcn_forward_traced(&config, &params, &pair.gallery).unwrap();
        let xb = multiscale_blocks(&xm, &[1]).unwrap();
        let yb = multiscale_blocks(&ym, &[1]).unwrap();
        let w = solve_batch(&yb, &xb, 0.4, &SolverOptions::default()).unwrap();
        let (dx, dy) = loss_gradients(&xb, &yb, &w, label).unwrap();
        let gx =
            dsr::feature_maps::scatter_block_gradients(xm.width(), xm.height(), &xb, &dx).unwrap();
        let gy =
            dsr::feature_maps::scatter_block_gradients(ym.width(), ym.height(), &yb, &dy).unwrap();
        let (mut grads, _) = fcn_backward(&config, &params, &xt, &gx).unwrap();
        grads.add_scaled(&fcn_backward(&config, &params, &yt, &gy).unwrap().0, 1.0);

        let h = 1e-6;
        let mut checked = 0;
        for layer in 0..params.convs.len() {
            for idx in (0..params.convs[layer].weight.len()).step_by(7) {
                let analytic = grads.convs[layer].weight[idx];
                if analytic.abs() < 1e-6 {
                    continue;
                }
                let mut p = params.clone();
                p.convs[layer].weight[idx] += h;
                let mut q = params.clone();
                q.convs[layer].weight[idx] -= h;
                let fd = (pair_loss(&config, &p, &pair, &w) - pair_loss(&config, &q, &pair, &w))
                    / (2.0 * h);
                assert!(
                    rel_err(analytic, fd) <= 1e-3,
                    "layer {layer} idx {idx}: {analytic} vs {fd}"
                );
                checked += 1;
            }
            let analytic = grads.convs[layer].bias[0];
            let mut p = params.clone();
            p.convs[layer].bias[0] += h;
            let mut q = params.clone();
            q.convs[layer].bias[0] -= h;
            let fd =
                (pair_loss(&config, &p, &pair, &w) - pair_loss(&config, &q, &pair, &w)) / (2.0 * h);
            assert!((analytic - fd).abs() <= 1e-3 * analytic.abs().max(1e-3));
        }
        assert!(checked > 5);
    }
}

#[test]
fn zero_learning_rate_keeps_params_and_records_loss() {
    let config = FcnConfig::desk(3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pair = VerificationPair {
        probe: random_map(&mut rng, 8, 8, 3),
        gallery: random_map(&mut rng, 8, 12, 3),
        label: PairLabel::Genuine,
    };
    let init = FcnParams::he_init(&config, 1);
    let mut state = TrainState::new(init.clone(), 0.0);
    alternating_train_step(&config, &pair, &mut state, &FineTuneOptions::default()).unwrap();
    assert_eq!(state.params, init);
    assert_eq!(state.step, 1);
    assert_eq!(state.loss_history.len(), 1);
    assert!(state.loss_history[0].is_finite());
}

#[test]
fn genuine_pair_loss_does_not_increase() {
    let config = FcnConfig::desk(3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let image = random_map(&mut rng, 8, 8, 3);
    let pair = VerificationPair {
        probe: image.clone(),
        gallery: image,
        label: PairLabel::Genuine,
    };
    let mut state = TrainState::new(FcnParams::he_init(&config, 2), 1e-3);
    let opts = FineTuneOptions::default();
    for _ in 0..50 {
        alternating_train_step(&config, &pair, &mut state, &opts).unwrap();
    }
    for w in state.loss_history.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{:?}", state.loss_history);
    }
    assert!(state.loss_history.last().unwrap() < state.loss_history.first().unwrap());
}

#[test]
fn impostor_beyond_margin_is_clipped() {
    let config = FcnConfig::desk(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pair = VerificationPair {
        probe: random_map(&mut rng, 8, 8, 3),
        gallery: random_map(&mut rng, 8, 8, 3),
        label: PairLabel::Impostor,
    };
    let init = FcnParams::he_init(&config, 3);
    let mut state = TrainState::new(init.clone(), 0.1);
    let opts = FineTuneOptions {
        margin: Some(0.0),
        ..FineTuneOptions::default()
    };
    let report = alternating_train_step(&config, &pair, &mut state, &opts).unwrap();
    assert!(report.clipped);
    assert_eq!(state.params, init);
}

fn two_class_set(rng: &mut ChaCha8Rng, n: usize) -> Vec<LabeledImage<f64>> {
    (0..n)
        .map(|i| {
            let label = i % 2;
            let image = FeatureMap::from_fn(8, 8, 3, |_, row, ch| {
                let lit = (row < 4) == (label == 0);
                let base = if lit { 0.9 } else { 0.1 };
                base + 0.05 * ch as f64 + rng.gen_range(-0.1..0.1)
            })
            .unwrap();
            LabeledImage { image, label }
        })
        .collect()
}

#[test]
fn pretraining_starts_at_uniform_loss() {
    let config = FcnConfig::desk(3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut data = two_class_set(&mut rng, 6);
    data[5].label = 2;
    let opts = PretrainOptions {
        epochs: 1,
        learning_rate: 0.0,
        batch_size: data.len(),
        seed: 0,
    };
    let init = FcnParams::he_init(&config, 1);
    let (params, report) = pretrain_identification(&config, init.clone(), &data, &opts).unwrap();
    assert!((report.epoch_loss[0] - 3f64.ln()).abs() < 1e-12);
    assert_eq!(params, init);
}

#[test]
fn pretraining_separates_two_classes() {
    let config = FcnConfig::desk(3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = two_class_set(&mut rng, 40);
    let opts = PretrainOptions {
        epochs: 10,
        learning_rate: 0.05,
        batch_size: 4,
        seed: 3,
    };
    let (_, report) =
        pretrain_identification(&config, FcnParams::he_init(&config, 5), &data, &opts).unwrap();
    assert!(report.train_accuracy >= 0.95, "{report:?}");
    for w in report.epoch_loss.windows(2) {
        assert!(w[1] < w[0], "{:?}", report.epoch_loss);
    }
}

#[test]
fn pretraining_rejects_bad_inputs() {
    let config = FcnConfig::desk(3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut data = two_class_set(&mut rng, 4);
    let opts = PretrainOptions::default();
    let init = FcnParams::he_init(&config, 5);
    let one_class: Vec<_> = data.iter().filter(|d| d.label == 0).cloned().collect();
    assert!(pretrain_identification(&config, init.clone(), &one_class, &opts).is_err());
    assert!(pretrain_identification(&config, init.clone(), &[], &opts).is_err());
    data[0].image = random_map(&mut rng, 8, 12, 3);
    assert!(pretrain_identification(&config, init, &data, &opts).is_err());
}
