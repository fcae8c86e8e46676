//! Acceptance suite. Each test checks one release criterion end to end and
//! prints one PASS line (run with `--nocapture` to see them); a failing
//! criterion fails its test.

mod support;

use std::process::Command;

use han_core::attention::{attention_weights, AttentionParams};
use han_core::data::{read_sequence, write_sequence, Sample};
use han_core::gradcheck::run_gradient_check;
use han_core::model::{HanModel, Mode, ModelConfig};
use han_core::numerics::{Matrix, Rng};
use han_core::synth::{generate_in_memory, RegionPolicy, SyntheticSpec};
use han_core::train::{
    adadelta_step, evaluate, nll_grad_logits, AdadeltaState, TrainConfig, Trainer,
};
use han_core::Error;
use support::*;

fn tmp_dir(name: &str) -> std::path::PathBuf {
    static COUNTER: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
    let dir =
        std::env::temp_dir().join(format!("han_acc_{}_{}_{}", std::process::id(), n, name));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Gradient correctness: analytic BPTT versus central finite differences on
/// every parameter block of the reference configuration, within 1e-4
/// relative error and under 60 seconds.
#[test]
fn criterion_1_gradient_correctness() {
    let config = ModelConfig {
        regions_per_side: 2,
        feature_dim: 4,
        hidden: 5,
        layers: 2,
        skip: 2,
        frames: 6,
        classes: 3,
    };
    let report = run_gradient_check(&config, 8, 1e-4, 1e-4, None).unwrap();
    assert_eq!(report.blocks.len(), 4 * 12 + 3);
    assert!(
        report.passed(),
        "worst block: {:?}",
        report.worst()
    );
    assert!(report.seconds < 60.0, "took {}s", report.seconds);
    println!(
        "ACCEPTANCE PASS: gradient correctness (51 blocks <= 1e-4, worst {:.3e}, {:.2}s)",
        report.worst().unwrap().max_rel_error,
        report.seconds
    );
}

/// First-frame attention: zero initial states give exactly uniform weights.
#[test]
fn criterion_2_first_frame_attention_exactness() {
    for k in [1usize, 2, 7, 14] {
        let n = k * k;
        let hidden = 3;
        let mut rng = Rng::new(k as u64 + 100);
        let params = AttentionParams::init(n, 2 * hidden, &mut rng);
        let l = attention_weights(&params, &vec![0.0; hidden], &vec![0.0; hidden]).unwrap();
        let expected = 1.0 / n as f64;
        for (i, &w) in l.as_slice().iter().enumerate() {
            assert!(
                w == expected,
                "K={k}: weight {i} is {w:e}, expected exactly {expected:e}"
            );
        }
    }
    println!("ACCEPTANCE PASS: first-frame attention exactly uniform for K in {{1,2,7,14}}");
}

/// Skip stride 1 equivalence with an independently written stacked LSTM:
/// forward within 1e-10, gradients within 1e-4, on 10 random instances.
#[test]
fn criterion_3_k1_oracle_equivalence() {
    let mut worst_forward = 0.0f64;
    let mut worst_grad = 0.0f64;
    for seed in 0..10u64 {
        let mut cfg_rng = Rng::new(seed);
        let config = ModelConfig {
            regions_per_side: 1 + cfg_rng.index(2),
            feature_dim: 2 + cfg_rng.index(3),
            hidden: 2 + cfg_rng.index(4),
            layers: 2,
            skip: 1,
            frames: 2 + cfg_rng.index(5),
            classes: 2 + cfg_rng.index(3),
        };
        let mut rng = Rng::derive(seed, &[50]);
        let model = HanModel::init(config, &mut rng).unwrap();
        let cubes_p = random_cubes(&config, config.frames, &mut rng);
        let cubes_q = random_cubes(&config, config.frames, &mut rng);
        let label = rng.index(config.classes);

        let out = model.forward(&cubes_p, &cubes_q, Mode::Eval).unwrap();
        let grads = model
            .backward(&out.trace, &nll_grad_logits(&out.probs, label).unwrap())
            .unwrap();

        let oracle = to_oracle_model(&model);
        let frames_p = to_oracle_frames(&cubes_p);
        let frames_q = to_oracle_frames(&cubes_q);
        let trace = han_oracle::forward(&oracle, &frames_p, &frames_q);
        let oracle_grads = han_oracle::backward(
            &oracle,
            &trace,
            &frames_p,
            &frames_q,
            &han_oracle::nll_grad_logits(&trace.probs, label),
        );

        worst_forward = worst_forward.max(max_abs_diff(&out.encoding.h_f, trace.h_f()));
        worst_grad = worst_grad.max(max_rel(&grads.flatten(), &oracle_grads.flatten()));
    }
    assert!(worst_forward <= 1e-10, "h_f diff {worst_forward:e}");
    assert!(worst_grad <= 1e-4, "gradient rel diff {worst_grad:e}");
    println!(
        "ACCEPTANCE PASS: k=1 oracle equivalence (h_f diff {worst_forward:.3e}, grad rel {worst_grad:.3e})"
    );
}

/// Hierarchy ablation on order-confusable data: the full model reaches 90%
/// held-out accuracy within 200 epochs while an order-blind mean-pool
/// baseline stays at 60% or below.
#[test]
fn criterion_4_hierarchy_ablation() {
    let spec = SyntheticSpec {
        regions_per_side: 2,
        feature_dim: 8,
        frames: 16,
        classes: 4,
        samples_per_class: 50,
        policy: RegionPolicy::Fixed,
        sub_action_length: 4,
        noise_sigma: 0.1,
        seed: 2024,
    };
    let generated = generate_in_memory(&spec).unwrap();
    let (train, eval) = split_dataset(&generated.dataset, 10, spec.classes);
    assert_eq!(train.len(), 160);
    assert_eq!(eval.len(), 40);

    let baseline = mean_pool_baseline_accuracy(&train, &eval, spec.classes);
    assert!(
        baseline <= 0.60,
        "order-blind baseline reached {baseline}, data is not order-confusable"
    );

    let mc = ModelConfig {
        regions_per_side: 2,
        feature_dim: 8,
        hidden: 20,
        layers: 2,
        skip: 4,
        frames: 16,
        classes: 4,
    };
    let tc = TrainConfig {
        dropout: 0.2,
        batch_size: 16,
        epochs: 200,
        seed: 1,
        threads: 2,
        ..TrainConfig::default()
    };
    let mut rng = Rng::derive(tc.seed, &[0]);
    let mut model = HanModel::init(mc, &mut rng).unwrap();
    let mut trainer = Trainer::new(&mut model, &train, Some(&eval), tc).unwrap();
    let mut best = 0.0f64;
    let mut reached_at = None;
    for epoch in 0..200 {
        let metrics = trainer.run_epoch().unwrap();
        let acc = metrics.eval_accuracy.unwrap();
        best = best.max(acc);
        if acc >= 0.90 {
            reached_at = Some(epoch);
            break;
        }
    }
    assert!(
        reached_at.is_some(),
        "held-out accuracy peaked at {best} after 200 epochs"
    );
    println!(
        "ACCEPTANCE PASS: hierarchy ablation (HAN >= 90% at epoch {}, mean-pool baseline {:.3})",
        reached_at.unwrap(),
        baseline
    );
}

/// Attention localization on fixed-policy data, averaged over 3 seeds: mean
/// weight on the true region at least twice uniform, and the full model's
/// held-out accuracy at least the uniform-attention ablation's.
#[test]
fn criterion_5_attention_localization() {
    let mut att_sum = 0.0;
    let mut full_sum = 0.0;
    let mut ablated_sum = 0.0;
    for seed in 0..3u64 {
        let spec = SyntheticSpec {
            regions_per_side: 3,
            feature_dim: 8,
            frames: 12,
            classes: 2,
            samples_per_class: 40,
            policy: RegionPolicy::Fixed,
            sub_action_length: 4,
            noise_sigma: 0.2,
            seed: 3000 + seed,
        };
        let generated = generate_in_memory(&spec).unwrap();
        let (train, eval) = split_dataset(&generated.dataset, 8, spec.classes);
        let mc = ModelConfig {
            regions_per_side: 3,
            feature_dim: 8,
            hidden: 16,
            layers: 2,
            skip: 4,
            frames: 12,
            classes: 2,
        };
        let tc = TrainConfig {
            dropout: 0.1,
            batch_size: 8,
            epochs: 80,
            seed,
            threads: 2,
            ..TrainConfig::default()
        };

        let mut rng = Rng::derive(seed, &[0]);
        let mut model = HanModel::init(mc, &mut rng).unwrap();
        let mut trainer = Trainer::new(&mut model, &train, None, tc.clone()).unwrap();
        for _ in 0..tc.epochs {
            trainer.run_epoch().unwrap();
        }
        att_sum += mean_attention_on_truth(&model, &generated, &eval);
        full_sum += evaluate(&model, &eval).unwrap().accuracy;

        let mut rng = Rng::derive(seed, &[0]);
        let mut ablated = HanModel::init(mc, &mut rng).unwrap();
        ablated.uniform_attention = true;
        let mut trainer = Trainer::new(&mut ablated, &train, None, tc.clone()).unwrap();
        for _ in 0..tc.epochs {
            trainer.run_epoch().unwrap();
        }
        ablated_sum += evaluate(&ablated, &eval).unwrap().accuracy;
    }

    let mean_att = att_sum / 3.0;
    let mean_full = full_sum / 3.0;
    let mean_ablated = ablated_sum / 3.0;
    let threshold = 2.0 / 9.0; // twice uniform for K = 3
    assert!(
        mean_att >= threshold,
        "mean attention on true region {mean_att} < {threshold}"
    );
    assert!(
        mean_full >= mean_ablated,
        "full model {mean_full} below uniform-attention ablation {mean_ablated}"
    );
    println!(
        "ACCEPTANCE PASS: attention localization (mean weight on truth {:.3} >= {:.3}; full {:.3} >= ablated {:.3})",
        mean_att, threshold, mean_full, mean_ablated
    );
}

/// Adadelta first-step value for a unit gradient.
#[test]
fn criterion_6_adadelta_unit_value() {
    let mut params = vec![0.0];
    let mut state = AdadeltaState::new(1);
    adadelta_step(&mut params, &[1.0], &mut state, 0.95, 1e-6).unwrap();
    let diff = (params[0] - (-0.0044721)).abs();
    assert!(diff <= 1e-6, "first step {} differs by {diff:e}", params[0]);
    println!(
        "ACCEPTANCE PASS: adadelta first-step update {} within 1e-6 of -0.0044721",
        params[0]
    );
}

/// Two identical CLI training runs produce byte-identical metrics CSVs and
/// checkpoints.
#[test]
fn criterion_7_cmd_train_determinism() {
    let bin = env!("CARGO_BIN_EXE_han");
    let dir = tmp_dir("determinism");
    let data = dir.join("data");
    let status = Command::new(bin)
        .args([
            "gen-data",
            "--model.regions_per_side", "2",
            "--model.feature_dim", "5",
            "--model.frames", "8",
            "--model.classes", "2",
            "--gen.samples_per_class", "8",
            "--gen.sub_action_length", "4",
            "--gen.noise_sigma", "0.15",
            "--gen.seed", "21",
            "--gen.out_dir", data.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());

    let train = |out: &std::path::Path| {
        let status = Command::new(bin)
            .args([
                "train",
                "--model.regions_per_side", "2",
                "--model.feature_dim", "5",
                "--model.hidden", "10",
                "--model.skip", "2",
                "--model.frames", "8",
                "--model.classes", "2",
                "--train.epochs", "5",
                "--train.seed", "77",
                "--train.batch_size", "4",
                "--train.threads", "2",
                "--train.manifest", data.join("manifest.tsv").to_str().unwrap(),
                "--train.checkpoint_out", out.join("model.han").to_str().unwrap(),
                "--train.metrics_out", out.join("metrics.csv").to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    };

    let run_a = dir.join("a");
    let run_b = dir.join("b");
    std::fs::create_dir_all(&run_a).unwrap();
    std::fs::create_dir_all(&run_b).unwrap();
    train(&run_a);
    train(&run_b);

    let metrics_a = std::fs::read(run_a.join("metrics.csv")).unwrap();
    let metrics_b = std::fs::read(run_b.join("metrics.csv")).unwrap();
    assert_eq!(metrics_a, metrics_b, "metrics CSVs differ between runs");
    let ckpt_a = std::fs::read(run_a.join("model.han")).unwrap();
    let ckpt_b = std::fs::read(run_b.join("model.han")).unwrap();
    assert_eq!(ckpt_a, ckpt_b, "checkpoints differ between runs");
    std::fs::remove_dir_all(&dir).unwrap();
    println!("ACCEPTANCE PASS: cmd_train determinism (byte-identical metrics and checkpoint)");
}

/// HFC1 robustness: 50 bit-exact round trips and 10 corruption modes, each
/// rejected with its designated error.
#[test]
fn criterion_8_format_robustness() {
    let dir = tmp_dir("format");
    let mut rng = Rng::new(7);
    let make_cubes = |d: usize, k: usize, frames: usize, rng: &mut Rng| {
        (0..frames)
            .map(|t| {
                let mut m = Matrix::zeros(d, k * k);
                for v in m.as_mut_slice() {
                    *v = rng.uniform(-5.0, 5.0);
                }
                han_core::attention::FeatureCube::new(m, t)
            })
            .collect::<Vec<_>>()
    };

    for trial in 0..50 {
        let d = 1 + rng.index(6);
        let k = 1 + rng.index(3);
        let frames = 1 + rng.index(7);
        let p = make_cubes(d, k, frames, &mut rng);
        let q = make_cubes(d, k, frames, &mut rng);
        let path = dir.join(format!("rt{trial}.hfc"));
        write_sequence(&path, &p, &q).unwrap();
        let (p2, q2) = read_sequence(&path).unwrap();
        assert_eq!(p, p2);
        assert_eq!(q, q2);
    }

    // Reference file to corrupt.
    let p = make_cubes(3, 2, 4, &mut rng);
    let q = make_cubes(3, 2, 4, &mut rng);
    let reference = dir.join("ref.hfc");
    write_sequence(&reference, &p, &q).unwrap();
    let bytes = std::fs::read(&reference).unwrap();

    type Corruption<'a> = (&'a str, Box<dyn Fn(&mut Vec<u8>)>, fn(&Error) -> bool);
    let corruptions: Vec<Corruption> = vec![
        (
            "payload truncated by 1 byte",
            Box::new(|b: &mut Vec<u8>| {
                b.pop();
            }),
            |e| matches!(e, Error::Truncated { .. }),
        ),
        (
            "file shorter than header",
            Box::new(|b: &mut Vec<u8>| b.truncate(10)),
            |e| matches!(e, Error::Truncated { .. }),
        ),
        (
            "bad magic",
            Box::new(|b: &mut Vec<u8>| b[0] = b'Z'),
            |e| matches!(e, Error::BadMagic { .. }),
        ),
        (
            "unsupported version",
            Box::new(|b: &mut Vec<u8>| b[4..8].copy_from_slice(&7u32.to_le_bytes())),
            |e| matches!(e, Error::UnsupportedVersion { expected: 1, got: 7 }),
        ),
        (
            "trailing bytes",
            Box::new(|b: &mut Vec<u8>| b.extend_from_slice(&[1, 2, 3])),
            |e| matches!(e, Error::LengthMismatch { .. }),
        ),
        (
            "zero frames",
            Box::new(|b: &mut Vec<u8>| b[8..12].copy_from_slice(&0u32.to_le_bytes())),
            |e| matches!(e, Error::EmptySequence),
        ),
        (
            "zero regions per side",
            Box::new(|b: &mut Vec<u8>| b[12..16].copy_from_slice(&0u32.to_le_bytes())),
            |e| matches!(e, Error::InvalidHeader { field: "regions_per_side", .. }),
        ),
        (
            "zero feature dim",
            Box::new(|b: &mut Vec<u8>| b[16..20].copy_from_slice(&0u32.to_le_bytes())),
            |e| matches!(e, Error::InvalidHeader { field: "feature_dim", .. }),
        ),
        (
            "three streams",
            Box::new(|b: &mut Vec<u8>| b[20..24].copy_from_slice(&3u32.to_le_bytes())),
            |e| matches!(e, Error::InvalidHeader { field: "n_streams", value: 3 }),
        ),
        (
            "unknown dtype",
            Box::new(|b: &mut Vec<u8>| b[24..28].copy_from_slice(&2u32.to_le_bytes())),
            |e| matches!(e, Error::InvalidHeader { field: "dtype", value: 2 }),
        ),
    ];
    assert_eq!(corruptions.len(), 10);
    for (name, corrupt, matches_designated) in &corruptions {
        let mut copy = bytes.clone();
        corrupt(&mut copy);
        let path = dir.join("corrupt.hfc");
        std::fs::write(&path, &copy).unwrap();
        let err = read_sequence(&path).unwrap_err();
        assert!(
            matches_designated(&err),
            "{name}: got unexpected error {err:?}"
        );
    }
    std::fs::remove_dir_all(&dir).unwrap();
    println!("ACCEPTANCE PASS: HFC1 round trips bit-exact and 10 corruption modes rejected");
}

/// Single-sample overfit within 500 epochs guards against silent gradient
/// bugs.
#[test]
fn criterion_9_single_sample_overfit() {
    let config = ModelConfig {
        regions_per_side: 2,
        feature_dim: 3,
        hidden: 8,
        layers: 2,
        skip: 2,
        frames: 4,
        classes: 2,
    };
    let mut rng = Rng::derive(5, &[7]);
    let sample = Sample {
        id: "overfit".to_string(),
        label: 1,
        cubes_p: random_cubes(&config, config.frames, &mut rng),
        cubes_q: random_cubes(&config, config.frames, &mut rng),
    };
    let tc = TrainConfig {
        dropout: 0.0,
        batch_size: 1,
        epochs: 500,
        seed: 5,
        ..TrainConfig::default()
    };
    let mut model_rng = Rng::derive(tc.seed, &[0]);
    let mut model = HanModel::init(config, &mut model_rng).unwrap();
    let samples = vec![sample];
    let mut trainer = Trainer::new(&mut model, &samples, None, tc).unwrap();
    let mut loss = f64::MAX;
    let mut epochs_used = 0;
    for epoch in 0..500 {
        loss = trainer.run_epoch().unwrap().mean_loss;
        epochs_used = epoch + 1;
        if loss < 0.05 {
            break;
        }
    }
    assert!(loss < 0.05, "loss still {loss} after 500 epochs");
    println!(
        "ACCEPTANCE PASS: single-sample overfit (loss {loss:.4} after {epochs_used} epochs)"
    );
}
