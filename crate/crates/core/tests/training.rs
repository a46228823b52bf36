mod common;

use common::tiny_config;
use mugan_core::data::Dataset;
use mugan_core::dsp::{spline_upsample, Waveform};
use mugan_core::tensor::{Shape, Tensor};
use mugan_core::train::{
    autoencoder_from, generator_from, infer, load_checkpoint, save_checkpoint, train_autoencoder,
    train_gan, AeTrainer, Checkpoint, GanTrainer, Hooks, TrainError,
};

fn ae_for(cfg: &mugan_core::config::Config, ds: &Dataset) -> mugan_core::models::Autoencoder<f32> {
    autoencoder_from(&train_autoencoder(cfg, ds, None, Hooks::default()).unwrap()).unwrap()
}

#[test]
fn autoencoder_overfits_one_batch() {
    let cfg = tiny_config("");
    let ds = Dataset::prepare(&cfg.dataset).unwrap();
    let (_, x_h) = ds.batch(&[0, 1, 2, 3]);
    let mut t = AeTrainer::new(&cfg).unwrap();
    let first = t.train_step(&x_h).unwrap();
    let mut last = first;
    for _ in 1..500 {
        last = t.train_step(&x_h).unwrap();
    }
    assert!(last < 0.1 * first, "loss {first:e} -> {last:e}");
}

#[test]
fn zero_epochs_return_the_initialization() {
    let cfg = tiny_config("epochs=0;ae_epochs=0;mode=l2");
    let ds = Dataset::prepare(&cfg.dataset).unwrap();
    let c = train_gan(&cfg, &ds, None, None, Hooks::default()).unwrap();
    assert_eq!(c.step, 0);
    let fresh = GanTrainer::new(&cfg).unwrap();
    assert_eq!(c.param_store("g.").tensors(), fresh.g.params().tensors());
    assert_eq!(c.param_store("d.").tensors(), fresh.d.params().tensors());
    let a = train_autoencoder(&cfg, &ds, None, Hooks::default()).unwrap();
    assert_eq!(
        a.param_store("a.").tensors(),
        AeTrainer::new(&cfg).unwrap().model.params().tensors()
    );
}

#[test]
fn fresh_generator_reproduces_the_spline() {
    let cfg = tiny_config("");
    let g = GanTrainer::new(&cfg).unwrap().g;
    let lr = Waveform::new((0..100).map(|n| (n as f64 * 0.3).sin()).collect(), 8000.0).unwrap();
    let out = infer(&g, &lr, 2).unwrap();
    assert_eq!(out, spline_upsample(&lr, 2).unwrap());
}

#[test]
fn stitching_is_exact_where_one_window_covers() {
    let cfg = tiny_config("");
    let mut t = GanTrainer::new(&cfg).unwrap();
    t.g.randomize_output(&mut common::rng(3));
    let lr = Waveform::new((0..90).map(|n| (n as f64 * 0.21).cos()).collect(), 8000.0).unwrap();
    let out = infer(&t.g, &lr, 2).unwrap();
    let up = spline_upsample(&lr, 2).unwrap();
    assert_eq!(out.len(), 180);
    let patch = 64;
    let x = Tensor::from_fn(Shape::new(1, 1, patch), |_, _, i| up.samples[i] as f32);
    let y = t.g.infer(&x).unwrap();
    for i in 0..patch / 2 {
        let want = up.samples[i] + (y.at(0, 0, i) as f64 - x.at(0, 0, i) as f64);
        assert!((out.samples[i] - want).abs() < 1e-12);
    }
    // Constant input stays constant when the model leaves it alone.
    let flat = Waveform::new(vec![0.25; 70], 8000.0).unwrap();
    let fresh = GanTrainer::new(&cfg).unwrap().g;
    assert!(infer(&fresh, &flat, 2)
        .unwrap()
        .samples
        .iter()
        .all(|v| (v - 0.25).abs() < 1e-12));
    assert!(infer(&fresh, &Waveform::new(vec![0.0; 31], 8000.0).unwrap(), 2).is_err());
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let cfg = tiny_config("mode=l2+f+adv;max_steps=6;ae_max_steps=6");
    let run = || {
        let ds = Dataset::prepare(&cfg.dataset).unwrap();
        let ae = ae_for(&cfg, &ds);
        train_gan(&cfg, &ds, Some(&ae), None, Hooks::default())
            .unwrap()
            .to_bytes()
    };
    let a = run();
    assert_eq!(a, run());
    let other = tiny_config("mode=l2+f+adv;max_steps=6;ae_max_steps=6;seed=8");
    let ds = Dataset::prepare(&other.dataset).unwrap();
    let ae = ae_for(&other, &ds);
    assert_ne!(
        a,
        train_gan(&other, &ds, Some(&ae), None, Hooks::default())
            .unwrap()
            .to_bytes()
    );
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    // 4 steps per epoch, so the break falls inside the second epoch.
    let full = tiny_config("mode=l2+f+adv;epochs=5;max_steps=10");
    let ds = Dataset::prepare(&full.dataset).unwrap();
    let ae = ae_for(&full, &ds);
    let whole = train_gan(&full, &ds, Some(&ae), None, Hooks::default()).unwrap();

    let half = tiny_config("mode=l2+f+adv;epochs=5;max_steps=5");
    let first = train_gan(&half, &ds, Some(&ae), None, Hooks::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    save_checkpoint(&path, &first).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let resumed = train_gan(&full, &ds, Some(&ae), Some(&loaded), Hooks::default()).unwrap();
    assert_eq!(resumed.step, 10);
    assert_eq!(resumed.to_bytes(), whole.to_bytes());

    // Periodic snapshots agree with a run stopped at the same step.
    let periodic = tiny_config("mode=l2+f+adv;epochs=5;max_steps=10;checkpoint_every=5");
    let mut seen = Vec::new();
    let mut keep = |c: &Checkpoint| {
        seen.push(c.to_bytes());
        Ok(())
    };
    train_gan(
        &periodic,
        &ds,
        Some(&ae),
        None,
        Hooks {
            log: None,
            on_checkpoint: Some(&mut keep),
        },
    )
    .unwrap();
    assert_eq!(seen, vec![first.to_bytes(), whole.to_bytes()]);
}

#[test]
fn resume_rejects_a_different_model() {
    let cfg = tiny_config("mode=l2;max_steps=2");
    let ds = Dataset::prepare(&cfg.dataset).unwrap();
    let c = train_gan(&cfg, &ds, None, None, Hooks::default()).unwrap();
    let wider = tiny_config("mode=l2;max_steps=4;g.base_channels=8");
    assert!(train_gan(&wider, &ds, None, Some(&c), Hooks::default()).is_err());
    let longer = tiny_config("mode=l2;max_steps=4");
    assert_eq!(
        train_gan(&longer, &ds, None, Some(&c), Hooks::default())
            .unwrap()
            .step,
        4
    );
    assert!(matches!(
        generator_from(&train_autoencoder(&cfg, &ds, None, Hooks::default()).unwrap()),
        Err(TrainError::Checkpoint(_))
    ));
}

#[test]
fn checkpoint_files_round_trip_byte_for_byte() {
    let cfg = tiny_config("mode=l2+f+adv;max_steps=3;ae_max_steps=3");
    let ds = Dataset::prepare(&cfg.dataset).unwrap();
    let ae = ae_for(&cfg, &ds);
    let c = train_gan(&cfg, &ds, Some(&ae), None, Hooks::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&p1, &c).unwrap();
    let back = load_checkpoint(&p1).unwrap();
    save_checkpoint(&p2, &back).unwrap();
    let bytes = std::fs::read(&p1).unwrap();
    assert_eq!(bytes, std::fs::read(&p2).unwrap());
    assert_eq!(back, c);
    assert!(!dir.path().join("a.ckpt.tmp").exists());

    std::fs::write(&p2, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_checkpoint(&p2).is_err());
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 1;
    assert!(Checkpoint::from_bytes(&flipped).is_err());
    assert!(load_checkpoint(dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn feature_modes_need_the_autoencoder() {
    let cfg = tiny_config("mode=l2+f;max_steps=2");
    let ds = Dataset::prepare(&cfg.dataset).unwrap();
    assert!(matches!(
        train_gan(&cfg, &ds, None, None, Hooks::default()),
        Err(TrainError::MissingAutoencoder)
    ));
    let (x_up, x_h) = ds.batch(&[0, 1]);
    let mut t = GanTrainer::new(&cfg).unwrap();
    assert!(matches!(
        t.train_step(&x_up, &x_h, None),
        Err(TrainError::MissingAutoencoder)
    ));
}

#[test]
fn non_finite_data_aborts_with_a_diagnostic() {
    let cfg = tiny_config("mode=l2+f+adv;max_steps=8;ae_max_steps=2");
    let mut ds = Dataset::prepare(&cfg.dataset).unwrap();
    let ae = ae_for(&cfg, &ds);
    for p in &mut ds.pairs {
        p.x_up.samples[3] = f64::NAN;
    }
    let mut log = Vec::new();
    let err = train_gan(
        &cfg,
        &ds,
        Some(&ae),
        None,
        Hooks {
            log: Some(&mut log),
            on_checkpoint: None,
        },
    )
    .unwrap_err();
    assert!(matches!(err, TrainError::Diverged { step: 0, .. }), "{err}");
    assert!(err.to_string().contains("step 0"));
}

#[test]
fn updates_touch_only_their_own_network() {
    let cfg = tiny_config("mode=l2+f+adv");
    let ds = Dataset::prepare(&cfg.dataset).unwrap();
    let ae = AeTrainer::new(&cfg).unwrap().model;
    let ae_before = ae.params().clone();
    let (x_up, x_h) = ds.batch(&[0, 1, 2, 3]);
    let mut t = GanTrainer::new(&cfg).unwrap();
    t.g.randomize_output(&mut common::rng(1));
    let (g0, d0) = (t.g.params().clone(), t.d.params().clone());
    t.discriminator_update(&x_h, &x_up).unwrap();
    assert_eq!(t.g.params(), &g0);
    assert_ne!(t.d.params(), &d0);
    let d1 = t.d.params().clone();
    t.generator_update(&x_up, &x_h, Some(&ae)).unwrap();
    assert_eq!(t.d.params(), &d1);
    assert_ne!(t.g.params(), &g0);
    assert_eq!(ae.params(), &ae_before);
}

#[test]
fn training_log_has_one_line_per_step() {
    let cfg = tiny_config("mode=l2+f+adv;max_steps=3;ae_max_steps=2");
    let ds = Dataset::prepare(&cfg.dataset).unwrap();
    let ae = ae_for(&cfg, &ds);
    let mut log = Vec::new();
    train_gan(
        &cfg,
        &ds,
        Some(&ae),
        None,
        Hooks {
            log: Some(&mut log),
            on_checkpoint: None,
        },
    )
    .unwrap();
    let text = String::from_utf8(log).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    for key in [
        "step=3", "loss_g=", "l2=", "feature=", "adv=", "loss_d=", "wall=",
    ] {
        assert!(lines[2].contains(key), "{key} missing from {}", lines[2]);
    }
}
