//! The five subcommands. Each returns the process exit code on success and
//! maps failures through the crate-wide error-to-exit-code rule in `main`.

use std::io::Write;
use std::path::PathBuf;

use han_core::checkpoint::{load_checkpoint, save_checkpoint};
use han_core::data::{load_dataset, subsample_sample, Dataset};
use han_core::gradcheck::{run_gradient_check, DEFAULT_STEP};
use han_core::model::{HanModel, Mode, ModelConfig};
use han_core::numerics::Rng;
use han_core::synth::{generate_synthetic, RegionPolicy, SyntheticSpec};
use han_core::train::{evaluate, TrainConfig, Trainer};
use han_core::{Error, Result};

use crate::config::RunConfig;

fn model_config(config: &RunConfig) -> Result<ModelConfig> {
    let mc = ModelConfig {
        regions_per_side: config.require_usize("model.regions_per_side")?,
        feature_dim: config.require_usize("model.feature_dim")?,
        hidden: config.require_usize("model.hidden")?,
        layers: config.usize_or("model.layers", 2)?,
        skip: config.require_usize("model.skip")?,
        frames: config.require_usize("model.frames")?,
        classes: config.require_usize("model.classes")?,
    };
    mc.validate()?;
    Ok(mc)
}

fn train_config(config: &RunConfig) -> Result<TrainConfig> {
    let tc = TrainConfig {
        rho: config.f64_or("train.rho", 0.95)?,
        epsilon: config.f64_or("train.epsilon", 1e-6)?,
        dropout: config.f64_or("train.dropout", 0.5)?,
        clip_norm: config.clip_norm()?,
        batch_size: config.usize_or("train.batch_size", 16)?,
        epochs: config.require_usize("train.epochs")?,
        seed: config.u64_or("train.seed", 42)?,
        threads: config.usize_or("train.threads", 1)?,
    };
    tc.validate()?;
    Ok(tc)
}

/// Labels file defaults to `labels.tsv` next to the manifest.
fn labels_path(config: &RunConfig, labels_key: &str, manifest: &std::path::Path) -> PathBuf {
    config.path(labels_key).unwrap_or_else(|| {
        manifest
            .parent()
            .unwrap_or(std::path::Path::new("."))
            .join("labels.tsv")
    })
}

fn load_named_dataset(
    config: &RunConfig,
    manifest_key: &str,
    labels_key: &str,
) -> Result<Dataset> {
    let manifest = config.require_path(manifest_key)?;
    let labels = labels_path(config, labels_key, &manifest);
    load_dataset(&manifest, &labels)
}

fn check_dataset_shape(dataset: &Dataset, mc: &ModelConfig) -> Result<()> {
    for sample in &dataset.samples {
        if sample.cubes_p.len() != mc.frames {
            return Err(Error::Config(format!(
                "sample `{}` has {} frames but the model expects {}",
                sample.id,
                sample.cubes_p.len(),
                mc.frames
            )));
        }
    }
    if dataset.labels.len() != mc.classes {
        return Err(Error::ConfigMismatch {
            field: "classes",
            expected: mc.classes as u64,
            got: dataset.labels.len() as u64,
        });
    }
    Ok(())
}

pub fn cmd_gen_data(config: &RunConfig) -> Result<i32> {
    let spec = SyntheticSpec {
        regions_per_side: config.require_usize("model.regions_per_side")?,
        feature_dim: config.require_usize("model.feature_dim")?,
        frames: config.require_usize("model.frames")?,
        classes: config.require_usize("model.classes")?,
        samples_per_class: config.require_usize("gen.samples_per_class")?,
        policy: config
            .get("gen.policy")
            .unwrap_or("fixed")
            .parse::<RegionPolicy>()?,
        sub_action_length: config.require_usize("gen.sub_action_length")?,
        noise_sigma: config.f64_or("gen.noise_sigma", 0.1)?,
        seed: config.u64_or("gen.seed", 42)?,
    };
    let out_dir = config.require_path("gen.out_dir")?;
    let files = generate_synthetic(&spec, &out_dir)?;
    println!(
        "generated {} samples ({} classes x {}) in {}",
        files.sample_files,
        spec.classes,
        spec.samples_per_class,
        out_dir.display()
    );
    println!("manifest: {}", files.manifest.display());
    println!("labels: {}", files.label_map.display());
    println!("attention sidecar: {}", files.sidecar.display());
    Ok(0)
}

fn format_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

pub fn cmd_train(config: &RunConfig) -> Result<i32> {
    let mc = model_config(config)?;
    let tc = train_config(config)?;
    let dataset = load_named_dataset(config, "train.manifest", "train.labels")?;
    check_dataset_shape(&dataset, &mc)?;
    let eval_dataset = match config.get("train.eval_manifest") {
        Some(_) => {
            let ds = load_named_dataset(config, "train.eval_manifest", "train.eval_labels")?;
            check_dataset_shape(&ds, &mc)?;
            Some(ds)
        }
        None => None,
    };

    let checkpoint_out = config.require_path("train.checkpoint_out")?;
    let metrics_out = config.require_path("train.metrics_out")?;

    let mut init_rng = Rng::derive(tc.seed, &[0]);
    let mut model = HanModel::init(mc, &mut init_rng)?;
    model.uniform_attention = config.bool_or("model.uniform_attention", false)?;

    let epochs = tc.epochs;
    let mut trainer = Trainer::new(
        &mut model,
        &dataset.samples,
        eval_dataset.as_ref().map(|d| d.samples.as_slice()),
        tc,
    )?;

    let mut csv = String::from("epoch,mean_loss,train_accuracy,eval_accuracy\n");
    let mut last_line = String::new();
    for _ in 0..epochs {
        let m = trainer.run_epoch()?;
        last_line = format!(
            "epoch {} loss {} train_acc {} eval_acc {}",
            m.epoch,
            m.mean_loss,
            m.train_accuracy,
            format_opt(m.eval_accuracy)
        );
        eprintln!("{last_line}");
        csv.push_str(&format!(
            "{},{},{},{}\n",
            m.epoch,
            m.mean_loss,
            m.train_accuracy,
            format_opt(m.eval_accuracy)
        ));
    }

    std::fs::write(&metrics_out, csv)?;
    save_checkpoint(trainer.model(), &checkpoint_out)?;
    println!("{last_line}");
    println!("checkpoint: {}", checkpoint_out.display());
    println!("metrics: {}", metrics_out.display());
    Ok(0)
}

/// Loads a checkpoint and, when the run supplies model keys, cross-checks
/// them against the stored configuration.
fn load_checked_model(config: &RunConfig, checkpoint_key: &str) -> Result<HanModel> {
    let path = config.require_path(checkpoint_key)?;
    let mut model = load_checkpoint(&path)?;
    let stored = *model.config();
    let model_keys_present = [
        "model.regions_per_side",
        "model.feature_dim",
        "model.hidden",
        "model.layers",
        "model.skip",
        "model.frames",
        "model.classes",
    ]
    .iter()
    .any(|k| config.get(k).is_some());
    if model_keys_present {
        let expected = ModelConfig {
            regions_per_side: config
                .usize_or("model.regions_per_side", stored.regions_per_side)?,
            feature_dim: config.usize_or("model.feature_dim", stored.feature_dim)?,
            hidden: config.usize_or("model.hidden", stored.hidden)?,
            layers: config.usize_or("model.layers", stored.layers)?,
            skip: config.usize_or("model.skip", stored.skip)?,
            frames: config.usize_or("model.frames", stored.frames)?,
            classes: config.usize_or("model.classes", stored.classes)?,
        };
        expected.ensure_matches(&stored)?;
    }
    model.uniform_attention = config.bool_or("model.uniform_attention", false)?;
    Ok(model)
}

pub fn cmd_eval(config: &RunConfig) -> Result<i32> {
    let model = load_checked_model(config, "eval.checkpoint")?;
    let mut dataset = load_named_dataset(config, "eval.manifest", "eval.labels")?;
    if dataset.labels.len() != model.config().classes {
        return Err(Error::ConfigMismatch {
            field: "classes",
            expected: model.config().classes as u64,
            got: dataset.labels.len() as u64,
        });
    }
    if let Some(frames) = config.get("eval.frames") {
        let n: usize = frames
            .parse()
            .map_err(|_| Error::Config(format!("eval.frames: `{frames}` is not a number")))?;
        dataset.samples = dataset
            .samples
            .iter()
            .map(|s| subsample_sample(s, n))
            .collect::<Result<Vec<_>>>()?;
    }

    let report = evaluate(&model, &dataset.samples)?;
    let mut csv = String::from("class_index,label,samples,correct,accuracy\n");
    for (index, (n, correct)) in report.per_class.iter().enumerate() {
        let acc = if *n > 0 {
            *correct as f64 / *n as f64
        } else {
            0.0
        };
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            index, dataset.labels[index], n, correct, acc
        ));
    }
    csv.push_str(&format!(
        "overall,,{},{},{}\n",
        dataset.samples.len(),
        (report.accuracy * dataset.samples.len() as f64).round() as usize,
        report.accuracy
    ));

    match config.path("eval.out") {
        Some(path) => {
            std::fs::write(&path, csv)?;
            println!("accuracy {}", report.accuracy);
            println!("per-class csv: {}", path.display());
        }
        None => {
            print!("{csv}");
        }
    }
    Ok(0)
}

pub fn cmd_attention_dump(config: &RunConfig) -> Result<i32> {
    let model = load_checked_model(config, "dump.checkpoint")?;
    let dataset = load_named_dataset(config, "dump.manifest", "dump.labels")?;
    let sample_id = config
        .get("dump.sample")
        .ok_or_else(|| Error::Config("missing required key `dump.sample`".to_string()))?;
    let sample = dataset
        .samples
        .iter()
        .find(|s| s.id == sample_id)
        .ok_or_else(|| {
            Error::Config(format!("sample `{sample_id}` not found in manifest"))
        })?;

    let out = model.forward(&sample.cubes_p, &sample.cubes_q, Mode::Eval)?;
    let mut csv = String::from("sample_id,t,region_index,weight\n");
    for (t, weights) in out.trace.attn.iter().enumerate() {
        for (region, &w) in weights.as_slice().iter().enumerate() {
            csv.push_str(&format!("{},{},{},{}\n", sample.id, t + 1, region, w));
        }
    }

    match config.path("dump.out") {
        Some(path) => {
            std::fs::write(&path, csv)?;
            println!("attention csv: {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(0)
}

pub fn cmd_gradcheck(config: &RunConfig) -> Result<i32> {
    // Stand-alone defaults: a small reference configuration that runs in
    // well under a minute.
    let mc = ModelConfig {
        regions_per_side: config.usize_or("model.regions_per_side", 2)?,
        feature_dim: config.usize_or("model.feature_dim", 4)?,
        hidden: config.usize_or("model.hidden", 5)?,
        layers: config.usize_or("model.layers", 2)?,
        skip: config.usize_or("model.skip", 2)?,
        frames: config.usize_or("model.frames", 6)?,
        classes: config.usize_or("model.classes", 3)?,
    };
    mc.validate()?;
    let seed = config.u64_or("gradcheck.seed", 8)?;
    let step = config.f64_or("gradcheck.step", DEFAULT_STEP)?;
    let tolerance = config.f64_or("gradcheck.tolerance", 1e-4)?;
    let corrupt = config.get("gradcheck.corrupt");

    let report = run_gradient_check(&mc, seed, step, tolerance, corrupt)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for block in &report.blocks {
        let verdict = if block.max_rel_error <= tolerance {
            "PASS"
        } else {
            "FAIL"
        };
        writeln!(out, "{verdict} {} {:e}", block.name, block.max_rel_error)?;
    }
    eprintln!("gradient check took {:.2}s", report.seconds);
    if report.passed() {
        writeln!(out, "gradcheck PASS ({} blocks <= {:e})", report.blocks.len(), tolerance)?;
        Ok(0)
    } else {
        let worst = report.worst().unwrap();
        writeln!(
            out,
            "gradcheck FAIL: block {} max relative error {:e} > {:e}",
            worst.name, worst.max_rel_error, tolerance
        )?;
        Ok(1)
    }
}
