use proptest::prelude::*;
use seqedit_core::dataset::{quantize8, render_sample, SynthConfig};
use seqedit_core::metrics::LabeledImage;
use seqedit_core::model::{load_checkpoint, save_checkpoint, FaithModel, ModelConfig};
use seqedit_core::trainer::{
    epoch_order, lr_at, sam_step, train, BaseOptimizer, SamOptimizer, TrainConfig, Trainer, BEST_CHECKPOINT,
    LAST_CHECKPOINT, LOG_FILE,
};
use seqedit_core::{Error, Tensor};

/// Loss ½‖w‖² and its gradient w.
fn quadratic(ws: &[Tensor]) -> seqedit_core::Result<(f64, Vec<Tensor>)> {
    Ok((0.5 * ws.iter().map(Tensor::norm_sq).sum::<f64>(), ws.to_vec()))
}

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        image_size: 16,
        backbone_channels: vec![8, 16],
        d_model: 16,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        mlp_hidden: 32,
        freq_channels: 4,
        ..ModelConfig::default()
    }
}

fn tiny_data(count: usize, seed: u64) -> Vec<LabeledImage> {
    let cfg = SynthConfig { count, seed, size: 16, strength: 2.0, ..SynthConfig::default() };
    (0..count)
        .map(|i| {
            let s = render_sample(&cfg, i);
            LabeledImage { id: format!("{i}"), image: quantize8(&s.image), gt: s.sequence }
        })
        .collect()
}

#[test]
fn sam_quadratic_closed_form() {
    let mut w = vec![Tensor::scalar(1.0)];
    let info = sam_step(&mut w, &[0.1], 0.05, quadratic).unwrap();
    assert!((w[0].item().unwrap() - 0.895).abs() <= 1e-12);
    assert_eq!(info.loss, 0.5);
    assert_eq!(info.grad_norm, 1.0);
}

#[test]
fn sam_converges_on_quadratic() {
    let mut w = vec![Tensor::vector(&[0.6, -0.8])];
    for _ in 0..100 {
        sam_step(&mut w, &[0.1], 0.05, quadratic).unwrap();
    }
    assert!(w[0].norm_sq().sqrt() < 1e-2);
}

#[test]
fn zero_rho_is_plain_gradient_descent() {
    let start = vec![Tensor::vector(&[0.3, -1.2, 2.5]), Tensor::scalar(-0.7)];
    let lrs = [0.1, 0.02];
    let mut sam = start.clone();
    sam_step(&mut sam, &lrs, 0.0, quadratic).unwrap();
    for ((s, w0), lr) in sam.iter().zip(&start).zip(lrs) {
        let sgd = w0.map(|v| v - lr * v);
        assert!(s.max_abs_diff(&sgd) <= f64::EPSILON);
    }
}

#[test]
fn constant_loss_leaves_weights_alone() {
    let start = vec![Tensor::vector(&[1.0, 2.0])];
    let mut w = start.clone();
    for _ in 0..3 {
        sam_step(&mut w, &[0.5], 0.05, |ws| Ok((4.0, vec![Tensor::zeros(ws[0].shape())]))).unwrap();
    }
    assert_eq!(w, start);
}

#[test]
fn sam_rejects_bad_inputs() {
    let mut w = vec![Tensor::scalar(1.0)];
    assert!(sam_step(&mut w, &[0.1], -1.0, quadratic).is_err());
    assert!(sam_step(&mut w, &[0.1, 0.2], 0.05, quadratic).is_err());
    let inf = sam_step(&mut w, &[0.1], 0.05, |_| Ok((1.0, vec![Tensor::scalar(f64::INFINITY)])));
    assert!(matches!(inf, Err(Error::NonFinite(_))));
}

#[test]
fn adam_based_sam_descends() {
    let mut w = vec![Tensor::vector(&[0.6, -0.8])];
    let mut opt = SamOptimizer::new(0.05, BaseOptimizer::adam());
    for _ in 0..400 {
        opt.step(&mut w, &[0.01], quadratic).unwrap();
    }
    assert_eq!(opt.steps_taken(), 400);
    assert_eq!(opt.state().len(), 2);
    assert!(w[0].norm_sq().sqrt() < 0.05);
}

proptest! {
    #[test]
    fn schedule_rises_then_falls(
        epochs in 2usize..200,
        warm_frac in 0.0f64..0.9,
        interval in 1usize..60,
        factor in 0.01f64..1.0,
    ) {
        let warmup = ((epochs as f64) * warm_frac) as usize;
        let cfg = TrainConfig {
            epochs,
            warmup_epochs: warmup.min(epochs - 1),
            decay_interval: interval,
            decay_factor: factor,
            ..TrainConfig::default()
        };
        let lrs: Vec<(f64, f64)> = (0..epochs).map(|e| lr_at(&cfg, e).unwrap()).collect();
        for e in 1..epochs {
            if e < cfg.warmup_epochs {
                prop_assert!(lrs[e].0 >= lrs[e - 1].0 && lrs[e].1 >= lrs[e - 1].1);
            } else if e > cfg.warmup_epochs {
                prop_assert!(lrs[e].0 <= lrs[e - 1].0 && lrs[e].1 <= lrs[e - 1].1);
            }
        }
        if cfg.warmup_epochs < epochs {
            prop_assert_eq!(lrs[cfg.warmup_epochs], (cfg.lr_transformer, cfg.lr_backbone));
        }
    }
}

#[test]
fn epoch_order_interleaves_lengths() {
    let data = tiny_data(53, 3);
    let order = epoch_order(&data, 9, 0);
    let mut sorted = order.clone();
    sorted.sort();
    assert_eq!(sorted, (0..data.len()).collect::<Vec<_>>());
    assert_eq!(order, epoch_order(&data, 9, 0));
    assert_ne!(order, epoch_order(&data, 9, 1));

    // while every bucket still has samples, each run of five covers all lengths
    let mut counts = [0usize; 5];
    data.iter().for_each(|s| counts[s.gt.len()] += 1);
    let full_rounds = *counts.iter().min().unwrap();
    for round in order.chunks(5).take(full_rounds) {
        let mut lens: Vec<usize> = round.iter().map(|&i| data[i].gt.len()).collect();
        lens.sort();
        assert_eq!(lens, vec![0, 1, 2, 3, 4]);
    }
}

fn overfit_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        warmup_epochs: 0,
        decay_interval: 1000,
        lr_transformer: 3e-3,
        lr_backbone: 3e-3,
        batch_size: 20,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn overfits_twenty_samples() {
    let data = tiny_data(20, 11);
    let model = FaithModel::new(tiny_model_config(), 0).unwrap();
    // one batch per epoch, so 200 epochs are 200 SAM steps
    let mut trainer = Trainer::new(model, overfit_config(200, 0)).unwrap();
    let mut last = f64::INFINITY;
    while !trainer.is_done() {
        last = trainer.run_epoch(&data, &[]).unwrap().0.train_loss;
    }
    let (final_loss, _) = seqedit_core::trainer::batch_loss_grad(
        trainer.model(),
        &trainer.model().params().tensors(),
        &data.iter().collect::<Vec<_>>(),
    )
    .unwrap();
    assert!(final_loss < 0.05, "final loss {final_loss}, last logged {last}");
}

#[test]
fn same_seed_same_first_epoch() {
    let data = tiny_data(30, 12);
    let run = || {
        let model = FaithModel::new(tiny_model_config(), 5).unwrap();
        let cfg = TrainConfig { batch_size: 8, ..overfit_config(2, 77) };
        Trainer::new(model, cfg).unwrap().run_epoch(&data, &data[..10]).unwrap().0
    };
    assert_eq!(run(), run());
}

#[test]
fn resume_is_bitwise_identical() {
    let data = tiny_data(30, 13);
    let val = tiny_data(10, 14);
    let cfg = TrainConfig { batch_size: 8, warmup_epochs: 1, ..overfit_config(3, 4) };
    let model = FaithModel::new(tiny_model_config(), 6).unwrap();

    let mut straight = Trainer::new(model.clone(), cfg.clone()).unwrap();
    let mut logs = Vec::new();
    while !straight.is_done() {
        logs.push(straight.run_epoch(&data, &val).unwrap().0);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.ckpt");
    let mut first = Trainer::new(model, cfg).unwrap();
    assert_eq!(first.run_epoch(&data, &val).unwrap().0, logs[0]);
    save_checkpoint(&path, &first.checkpoint()).unwrap();
    drop(first);

    let mut resumed = Trainer::resume(load_checkpoint(&path).unwrap()).unwrap();
    assert_eq!(resumed.epoch(), 1);
    for expected in &logs[1..] {
        assert_eq!(&resumed.run_epoch(&data, &val).unwrap().0, expected);
    }
    assert_eq!(resumed.model().params(), straight.model().params());
    assert_eq!(resumed.best_val_full_acc(), straight.best_val_full_acc());
}

#[test]
fn train_writes_log_and_checkpoints() {
    let data = tiny_data(15, 15);
    let dir = tempfile::tempdir().unwrap();
    let model = FaithModel::new(tiny_model_config(), 7).unwrap();
    let cfg = TrainConfig { batch_size: 5, ..overfit_config(2, 1) };
    let outcome = train(Trainer::new(model, cfg).unwrap(), &data, &data[..5], Some(dir.path())).unwrap();
    assert_eq!(outcome.log.len(), 2);
    let text = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().next().unwrap().contains("\"train_loss\""));
    let last = load_checkpoint(&dir.path().join(LAST_CHECKPOINT)).unwrap();
    assert_eq!(last.model.params(), outcome.model.params());
    assert_eq!(last.training.unwrap().epoch, 2);
    let best = load_checkpoint(&dir.path().join(BEST_CHECKPOINT)).unwrap();
    assert_eq!(best.model.params(), outcome.best.params());
}

#[test]
fn empty_and_finished_runs_are_errors() {
    let data = tiny_data(5, 16);
    let model = FaithModel::new(tiny_model_config(), 8).unwrap();
    let mut t = Trainer::new(model, overfit_config(1, 0)).unwrap();
    assert!(t.run_epoch(&[], &[]).is_err());
    t.run_epoch(&data, &[]).unwrap();
    assert!(t.is_done());
    assert!(t.run_epoch(&data, &[]).is_err());
}
