use chrono::NaiveDate;
use ndarray::{array, s, Array2};

use super::*;
use crate::autodiff::Tape;
use crate::data::PriceFrame;
use crate::nn::{LayerSpec, Mode, NetDims, Role};

fn toy_frame(days: usize, phase: f64) -> PriceFrame {
    let prices = Array2::from_shape_fn((2, days), |(a, t)| {
        let t = t as f64;
        let base = if a == 0 { 50.0 } else { 80.0 };
        base + 0.05 * t + 3.0 * (t / (4.0 + a as f64) + phase).sin()
    });
    let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let dates = (0..days).map(|k| d0 + chrono::Days::new(k as u64)).collect();
    PriceFrame::new(vec!["AAA".into(), "BBB".into()], dates, prices).unwrap()
}

fn toy_config(kind: ModelKind) -> TrainConfig {
    TrainConfig {
        model_kind: kind,
        hist_len: 8,
        future_len: 4,
        latent_dim: 6,
        epochs: 2,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn defaults_follow_the_protocol() {
    let c = TrainConfig::default();
    assert_eq!((c.hist_len, c.future_len, c.window(), c.latent_dim), (40, 20, 60, 100));
    assert_eq!(c.epochs, 1000);
    assert_eq!((c.lambda1, c.lambda2), (10.0, 3.0));
    assert_eq!((c.adam.lr, c.adam.beta1, c.adam.beta2), (2e-5, 0.5, 0.999));
    assert_eq!((c.critic_steps_per_gen, c.batch_size), (1, 1));
}

#[test]
fn config_text_round_trip() {
    let mut c = toy_config(ModelKind::HybridAcgan);
    c.proposer_lr = Some(1e-3);
    c.lambda1 = 0.1 + 0.2;
    let back = TrainConfig::from_text(&c.to_text()).unwrap();
    assert_eq!(back, c);
    assert!(TrainConfig::from_text("bogus = 1\n").is_err());
    assert!(TrainConfig::from_text("epochs = ten\n").is_err());
    assert_eq!(TrainConfig::from_text("# only a comment\n\n").unwrap(), TrainConfig::default());
}

#[test]
fn config_validation() {
    let mut c = toy_config(ModelKind::Cgan);
    c.lambda1 = -1.0;
    assert!(c.validate().is_err());
    let mut c = toy_config(ModelKind::Cgan);
    c.epochs = 0;
    assert!(c.validate().is_err());
    let mut c = toy_config(ModelKind::Cgan);
    c.eavesdrop = true;
    assert!(matches!(c.validate(), Err(Error::ForwardBias)));
    c.allow_forward_bias = true;
    assert!(c.validate().is_ok());
    assert_eq!(c.regime(), NormRegime::Eavesdrop);
    c.model_kind = ModelKind::HybridCgan;
    assert!(c.validate().is_err());
    assert_eq!("hybrid_acgan".parse::<ModelKind>().unwrap(), ModelKind::HybridAcgan);
    assert!("wgan".parse::<ModelKind>().is_err());
}

fn linear_critic(d: usize, weight: f64, bias: f64) -> MlpNetwork {
    linear_critic_with(
        NetDims {
            assets: 1,
            hist_len: d - 1,
            future_len: 1,
            latent_dim: 1,
        },
        weight,
        bias,
    )
}

fn linear_critic_with(dims: NetDims, weight: f64, bias: f64) -> MlpNetwork {
    let d = dims.assets * dims.window();
    let mut net = MlpNetwork::from_layers(Role::Discriminator, dims, vec![LayerSpec::Affine { in_dim: d, out_dim: 1 }]).unwrap();
    net.param_mut(0).fill(weight);
    net.param_mut(1).fill(bias);
    net
}

#[test]
fn penalty_of_a_sum_critic() {
    for d in [1usize, 4, 12, 60] {
        let net = linear_critic(d, 1.0, 0.0);
        let tape = Tape::new();
        let bound = net.bind(&tape, true);
        let real = Array2::from_shape_fn((3, d), |(i, j)| (i * d + j) as f64 * 0.3 - 2.0);
        let fake = real.mapv(|v| v.sin());
        let p = gradient_penalty(&tape, &net, &bound, &real, &fake, &[0.1, 0.5, 0.9], &mut Mode::Infer).unwrap();
        let expected = ((d as f64).sqrt() - 1.0).powi(2);
        assert!((p.item() - expected).abs() < 1e-12, "d={d}");
    }
}

#[test]
fn penalty_of_a_constant_critic_is_one() {
    let net = linear_critic(5, 0.0, 2.5);
    let tape = Tape::new();
    let bound = net.bind(&tape, true);
    let x = Array2::from_elem((2, 5), 0.7);
    let p = gradient_penalty(&tape, &net, &bound, &x, &(-&x), &[0.3, 0.6], &mut Mode::Infer).unwrap();
    assert_eq!(p.item(), 1.0);
    assert!(gradient_penalty(&tape, &net, &bound, &x, &x, &[0.3], &mut Mode::Infer).is_err());
}

#[test]
fn critic_step_touches_only_the_critic() {
    let frame = toy_frame(30, 0.0);
    let mut t = Trainer::new(toy_config(ModelKind::Acgan), &frame, None).unwrap();
    let before = t.nets().clone();
    let batch = t.batch(&[0]).unwrap();
    let z = t.sample_latent(1);
    let c = t.critic_step(&batch, &z, &[0.4]).unwrap();
    assert!(c.objective.is_finite() && c.penalty >= 0.0);
    let after = t.nets();
    assert_eq!(after.conditioner, before.conditioner);
    assert_eq!(after.simulator, before.simulator);
    assert_eq!(after.decoder, before.decoder);
    assert_ne!(after.discriminator, before.discriminator);
}

#[test]
fn generator_step_leaves_the_critic_alone() {
    let frame = toy_frame(30, 0.0);
    let mut t = Trainer::new(toy_config(ModelKind::Acgan), &frame, None).unwrap();
    let before = t.nets().clone();
    let batch = t.batch(&[2]).unwrap();
    let z = t.sample_latent(1);
    let g = t.generator_step(&batch, &z).unwrap();
    assert!(g.ap > 0.0);
    assert!((g.total - (g.adversarial + 3.0 * g.ap)).abs() < 1e-12);
    let after = t.nets();
    assert_eq!(after.discriminator, before.discriminator);
    assert_ne!(after.conditioner, before.conditioner);
    assert_ne!(after.simulator, before.simulator);
    assert_ne!(after.decoder, before.decoder);
}

#[test]
fn identical_real_and_fake_cancel_without_penalty() {
    // a critic that ignores dropout noise: a single linear layer
    let frame = toy_frame(30, 0.0);
    let t = Trainer::new(toy_config(ModelKind::Cgan), &frame, None).unwrap();
    let mut nets = t.nets().clone();
    nets.discriminator = linear_critic_with(nets.conditioner.dims(), 0.3, 0.1);
    // zero simulator output head so the fake future is tanh(0) = 0
    let last = nets.simulator.params().len() - 2;
    nets.simulator.param_mut(last).fill(0.0);
    let hist = t.batch(&[0]).unwrap().hist;
    let batch = Batch {
        future: Array2::zeros((1, 8)),
        hist,
    };
    let tape = Tape::new();
    let bound = nets.bind(&tape, false, true);
    let z = Array2::zeros((1, 6));
    let mut rngs = DropoutRngs::new(0);
    let (obj, parts) = critic_losses(&tape, &nets, &bound, &batch, &z, &[0.5], 0.0, &mut rngs).unwrap();
    assert_eq!(parts.wasserstein, 0.0);
    let grads = tape.gradient(obj, &bound.discriminator, false).unwrap();
    assert!(grads.iter().all(|g| g.value().iter().all(|&v| v == 0.0)));
}

#[test]
fn perfect_autoencoder_adds_nothing() {
    // N*h = 16 equals the code width, so identity maps can stand in for
    // the encoder and decoder
    let dims = NetDims {
        assets: 2,
        hist_len: 8,
        future_len: 4,
        latent_dim: 6,
    };
    let identity = |role| {
        let mut n = MlpNetwork::from_layers(role, dims, vec![LayerSpec::Affine { in_dim: 16, out_dim: 16 }]).unwrap();
        n.param_mut(0).assign(&Array2::eye(16));
        n
    };
    let base = Trainer::new(toy_config(ModelKind::Acgan), &toy_frame(30, 0.0), None).unwrap();
    let mut nets = base.nets().clone();
    nets.conditioner = identity(Role::Conditioner);
    nets.decoder = Some(identity(Role::Decoder));
    let batch = base.batch(&[1]).unwrap();
    let z = Array2::from_elem((1, 6), 0.2);
    let tape = Tape::new();
    let bound = nets.bind(&tape, true, false);
    let (_, parts) = generator_losses(&tape, &nets, &bound, &batch, &z, 3.0, &mut DropoutRngs::new(1)).unwrap();
    assert_eq!(parts.ap, 0.0);
    assert_eq!(parts.total, parts.adversarial);

    let tape = Tape::new();
    let bound = nets.bind(&tape, true, false);
    let (loss, _) = generator_losses(&tape, &nets, &bound, &batch, &z, 3.0, &mut DropoutRngs::new(1)).unwrap();
    let dec = bound.decoder.as_ref().unwrap();
    for g in tape.gradient(loss, dec, false).unwrap() {
        assert!(g.value().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn one_window_one_epoch_accounting() {
    let frame = toy_frame(12, 0.0);
    for k in [1usize, 3] {
        let mut cfg = toy_config(ModelKind::Cgan);
        cfg.critic_steps_per_gen = k;
        let mut t = Trainer::new(cfg, &frame, None).unwrap();
        assert_eq!(t.windows().len(), 1);
        t.run_epoch().unwrap();
        assert_eq!(t.step_counts(), (1, k as u64));
        assert_eq!(t.log().len(), 1);
    }
}

#[test]
fn training_is_deterministic() {
    let frame = toy_frame(24, 0.3);
    let cfg = toy_config(ModelKind::HybridAcgan);
    let a = train(&frame, &cfg).unwrap();
    let b = train(&frame, &cfg).unwrap();
    assert_eq!(a, b);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(train(&frame, &other).unwrap().simulator(), a.simulator());
}

#[test]
fn acgan_without_penalty_matches_cgan() {
    let frame = toy_frame(24, 0.0);
    let cgan = train(&frame, &toy_config(ModelKind::Cgan)).unwrap();
    let mut cfg = toy_config(ModelKind::Acgan);
    cfg.lambda2 = 0.0;
    let acgan = train(&frame, &cfg).unwrap();
    assert_eq!(acgan.conditioner(), cgan.conditioner());
    assert_eq!(acgan.simulator(), cgan.simulator());
    assert_eq!(acgan.discriminator(), cgan.discriminator());
    for (x, y) in acgan.training_log().iter().zip(cgan.training_log()) {
        assert_eq!((x.critic_loss, x.generator_loss), (y.critic_loss, y.generator_loss));
    }
}

#[test]
fn copy_mean_hybrid_matches_standard() {
    let frame = toy_frame(24, 0.0);
    for (plain, hybrid) in [(ModelKind::Cgan, ModelKind::HybridCgan), (ModelKind::Acgan, ModelKind::HybridAcgan)] {
        let reference = train(&frame, &toy_config(plain)).unwrap();
        let mut cfg = toy_config(hybrid);
        cfg.hybrid_output_scale = 1.0;
        let h = train_with_proposer(&frame, &cfg, Some(MeanProposer::CopyHistoricalMean)).unwrap();
        assert_eq!(h.conditioner(), reference.conditioner());
        assert_eq!(h.simulator().params(), reference.simulator().params());
        assert_eq!(h.discriminator(), reference.discriminator());
        assert_eq!(h.decoder(), reference.decoder());
    }
}

#[test]
fn bundle_archive_round_trip() {
    let frame = toy_frame(20, 0.0);
    for kind in ModelKind::ALL {
        let mut cfg = toy_config(kind);
        cfg.epochs = 1;
        let bundle = train(&frame, &cfg).unwrap();
        let mut bytes = Vec::new();
        write_bundle(&mut bytes, &bundle).unwrap();
        let back = read_bundle(&mut bytes.as_slice()).unwrap();
        // NaN proposer_mse defeats PartialEq on the log; compare the bytes
        let mut again = Vec::new();
        write_bundle(&mut again, &back).unwrap();
        assert_eq!(bytes, again);
        assert_eq!(back.nets(), bundle.nets());
        assert_eq!(back.proposer(), bundle.proposer());
        assert_eq!(back.config(), bundle.config());
    }
    assert!(read_bundle(&mut &b"HGBUNDLX"[..]).is_err());
}

#[test]
fn proposer_gating_and_zero_output() {
    let frame = toy_frame(30, 0.0);
    assert!(train_proposer(&frame, &toy_config(ModelKind::Acgan)).is_err());
    let dims = toy_config(ModelKind::HybridCgan).net_dims(2);
    let zero = MeanProposer::Network(MlpNetwork::build(Role::Proposer, dims).unwrap());
    let hist = frame.prices().slice(s![.., 0..8]);
    // a zero shift leaves the historical mean in place
    assert_eq!(propose_mean(&zero, hist, &[50.0, 80.0]).unwrap(), vec![50.0, 80.0]);
    assert_eq!(
        propose_mean(&MeanProposer::CopyHistoricalMean, hist, &[1.0, 2.0]).unwrap(),
        vec![1.0, 2.0]
    );
}

#[test]
fn proposer_fits_constant_prices() {
    let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let dates = (0..40).map(|k| d0 + chrono::Days::new(k)).collect();
    let frame = PriceFrame::new(vec!["A".into(), "B".into()], dates, array![[4.0; 40], [2.0; 40]].into_shape_with_order((2, 40)).unwrap()).unwrap();
    let mut cfg = toy_config(ModelKind::HybridCgan);
    cfg.proposer_epochs = Some(60);
    cfg.proposer_lr = Some(1e-3);
    let fit = train_proposer(&frame, &cfg).unwrap();
    assert!(fit.validation_mse < 1e-2, "mse {}", fit.validation_mse);
    let hist = frame.prices().slice(s![.., 0..8]);
    let mu = propose_mean(&MeanProposer::Network(fit.network.clone()), hist, &[4.0, 2.0]).unwrap();
    assert!((mu[0] - 4.0).abs() < 0.2 && (mu[1] - 2.0).abs() < 0.2, "{mu:?}");
    assert_eq!(
        propose_mean(&MeanProposer::Network(fit.network.clone()), hist, &[4.0, 2.0]).unwrap(),
        mu
    );
}

#[test]
fn simulation_copies_prefix_and_conditions_on_real_history() {
    let frame = toy_frame(30, 0.0);
    let bundle = train(&frame, &toy_config(ModelKind::Cgan)).unwrap();
    let test = toy_frame(24, 1.0);
    let sim = simulate(&bundle, &test, 3, 5).unwrap();
    assert_eq!(sim.block_starts, vec![8, 12, 16, 20]);
    for p in &sim.paths {
        assert_eq!(p.slice(s![.., ..8]), test.prices().slice(s![.., ..8]));
    }
    assert!(sim.normalized.iter().all(|n| n.iter().all(|v| v.abs() < 1.0)));
    assert_ne!(sim.paths[0], sim.paths[1]);
    let other = simulate_paths(&bundle, &test, 3, 6).unwrap();
    assert_ne!(other[0].slice(s![.., 8..]), sim.paths[0].slice(s![.., 8..]));
    assert_eq!(simulate_paths(&bundle, &test, 3, 5).unwrap(), sim.paths);

    // perturb everything from column 16 on: blocks at 8 and 12 must not move
    let mut prices = test.prices().clone();
    prices.slice_mut(s![.., 16..]).mapv_inplace(|v| v * 1.5 + 3.0);
    let perturbed = PriceFrame::new(test.tickers().to_vec(), test.dates().to_vec(), prices).unwrap();
    let again = simulate_paths(&bundle, &perturbed, 3, 5).unwrap();
    for (a, b) in again.iter().zip(&sim.paths) {
        assert_eq!(a.slice(s![.., ..16]), b.slice(s![.., ..16]));
        assert_ne!(a.slice(s![.., 20..]), b.slice(s![.., 20..]));
    }
}

#[test]
fn simulation_errors() {
    let frame = toy_frame(30, 0.0);
    let bundle = train(&frame, &toy_config(ModelKind::Cgan)).unwrap();
    assert!(simulate_paths(&bundle, &toy_frame(23, 0.0), 2, 0).is_err());
    assert!(simulate_paths(&bundle, &frame.truncate_days(24).unwrap(), 0, 0).is_err());
    let untrained = ModelBundle::from_parts(bundle.config().clone(), bundle.nets().clone(), None, vec![]).unwrap();
    assert!(simulate_paths(&untrained, &toy_frame(24, 0.0), 1, 0).is_err());
}

#[test]
fn training_log_csv() {
    let log = [EpochLog {
        epoch: 0,
        critic_loss: 0.5,
        generator_loss: -0.25,
        ap_loss: 0.0,
        proposer_mse: f64::NAN,
    }];
    let mut out = Vec::new();
    write_training_log(&mut out, &log).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text, "epoch,critic_loss,generator_loss,ap_loss,proposer_mse\n0,0.5,-0.25,0,NaN\n");
}

#[test]
fn proposer_learns_linear_drift() {
    let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let dates = (0..80).map(|k| d0 + chrono::Days::new(k)).collect();
    let prices = Array2::from_shape_fn((2, 80), |(a, t)| 10.0 * (a + 1) as f64 + 0.5 * t as f64);
    let frame = PriceFrame::new(vec!["A".into(), "B".into()], dates, prices).unwrap();
    let mut cfg = toy_config(ModelKind::HybridCgan);
    cfg.proposer_epochs = Some(40);
    cfg.proposer_lr = Some(1e-3);
    let fit = train_proposer(&frame, &cfg).unwrap();
    // copying the historical mean misses by half the future length times the slope
    let baseline = (0.5 * 0.5 * cfg.future_len as f64).powi(2);
    assert!(fit.validation_mse < 0.25 * baseline, "mse {} baseline {baseline}", fit.validation_mse);
}
