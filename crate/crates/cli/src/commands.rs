use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use seqedit_core::dataset::{
    balanced_partition, load_image_pairs, load_manifest, load_samples, manifest_root, quality_filter,
    read_image_raw, read_mask, synth_generate, Split, SplitAssignment, SynthConfig, MANIFEST_NAME,
};
use seqedit_core::frequency::FrequencyMethod;
use seqedit_core::metrics::{evaluate, LabeledImage, MetricsReport};
use seqedit_core::model::{load_checkpoint, FaithModel, ModelConfig, Positional};
use seqedit_core::robustness::{robustness_sweep, Perturbation};
use seqedit_core::trainer::{train, BaseOptimizer, TrainConfig, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT, LOG_FILE};
use seqedit_core::{EditSequence, Tensor};

use crate::args::{EvalArgs, GenerateArgs, PartitionArgs, PerturbArgs, TrainArgs, ValidateArgs};
use crate::UsageError;

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| UsageError(format!("--{flag} is required (flag or config key)")).into())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("{}", path.display()))
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let out = required(&a.out, "out")?;
    let d = SynthConfig::default();
    let length_weights = match a.length_weights {
        Some(w) => w
            .try_into()
            .map_err(|w: Vec<f64>| UsageError(format!("--length-weights needs 5 values, got {}", w.len())))?,
        None => d.length_weights,
    };
    let cfg = SynthConfig {
        count: a.count.unwrap_or(d.count),
        length_weights,
        seed: a.seed.unwrap_or(d.seed),
        size: a.size.unwrap_or(d.size),
        strength: a.strength.unwrap_or(d.strength),
        smoothing: a.smoothing.unwrap_or(d.smoothing),
        whitelist: None,
    };
    let records = synth_generate(&cfg, &out)?;
    let mut counts = [0usize; 5];
    records.iter().for_each(|r| counts[r.len()] += 1);
    println!(
        "wrote {} samples to {} (by length {:?})",
        records.len(),
        out.join(MANIFEST_NAME).display(),
        counts
    );
    Ok(())
}

fn parse_ratios(s: &str) -> Result<(u32, u32, u32)> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || UsageError(format!("--ratios `{s}` is not of the form a:b:c"));
    if parts.len() != 3 {
        return Err(bad().into());
    }
    let n: Vec<u32> = parts.iter().map(|p| p.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
    Ok((n[0], n[1], n[2]))
}

pub fn partition(a: PartitionArgs) -> Result<()> {
    let manifest = required(&a.manifest, "manifest")?;
    let out = required(&a.out, "out")?;
    let ratios = parse_ratios(a.ratios.as_deref().unwrap_or("8:1:1"))?;
    let mut records = load_manifest(&manifest)?;
    let before = records.len();
    if let Some(t) = a.min_ssim {
        let pairs = load_image_pairs(&manifest, &records)?;
        records = quality_filter(&records, &pairs, t)?;
    }
    let splits = balanced_partition(&records, required(&a.per_length, "per-length")?, ratios, a.seed.unwrap_or(0))?;
    write(&out, &splits.to_json())?;
    println!(
        "kept {}/{} records; train {} val {} test {} -> {}",
        records.len(),
        before,
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        out.display()
    );
    Ok(())
}

fn parse_split(s: Option<&str>) -> Result<Split> {
    match s.unwrap_or("test") {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(UsageError(format!("--split must be train, val or test, not `{other}`")).into()),
    }
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

fn load_split(manifest: &Path, splits: &Path, split: Split) -> Result<Vec<LabeledImage>> {
    let records = load_manifest(manifest)?;
    let text = fs::read_to_string(splits).with_context(|| format!("{}", splits.display()))?;
    let assignment = SplitAssignment::from_json(&text)?;
    Ok(load_samples(manifest, &records, assignment.ids(split))?)
}

fn model_config(a: &TrainArgs, image_size: usize) -> Result<ModelConfig> {
    let d = ModelConfig::default();
    let frequency = match a.frequency.as_deref().unwrap_or("dwt") {
        "dwt" => Some(FrequencyMethod::Dwt),
        "dct" => Some(match a.dct_block {
            Some(block) => FrequencyMethod::Dct { block },
            None => FrequencyMethod::default_dct(image_size),
        }),
        "fft" => Some(FrequencyMethod::Fft { radius: a.fft_radius.unwrap_or(0.25) }),
        "none" => None,
        other => return Err(UsageError(format!("--frequency must be dwt, dct, fft or none, not `{other}`")).into()),
    };
    let positional = match a.positional.as_deref().unwrap_or("sinusoidal") {
        "sinusoidal" => Positional::Sinusoidal,
        "learned" => Positional::Learned,
        other => return Err(UsageError(format!("--positional must be sinusoidal or learned, not `{other}`")).into()),
    };
    Ok(ModelConfig {
        image_size,
        backbone_channels: a.backbone_channels.clone().unwrap_or(d.backbone_channels),
        d_model: a.d_model.unwrap_or(d.d_model),
        heads: a.heads.unwrap_or(d.heads),
        encoder_layers: a.encoder_layers.unwrap_or(d.encoder_layers),
        decoder_layers: a.decoder_layers.unwrap_or(d.decoder_layers),
        mlp_hidden: a.mlp_hidden.unwrap_or(d.mlp_hidden),
        frequency,
        freq_channels: a.freq_channels.unwrap_or(d.freq_channels),
        positional,
        pre_norm: a.pre_norm.unwrap_or(d.pre_norm),
        cross_key_pos: a.cross_key_pos.unwrap_or(d.cross_key_pos),
    })
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let optimizer = match a.optimizer.as_deref() {
        None => d.optimizer,
        Some("adam") => BaseOptimizer::adam(),
        Some("sgd") => BaseOptimizer::Sgd,
        Some(other) => return Err(UsageError(format!("--optimizer must be sgd or adam, not `{other}`")).into()),
    };
    Ok(TrainConfig {
        epochs: a.epochs.unwrap_or(d.epochs),
        warmup_epochs: a.warmup_epochs.unwrap_or(d.warmup_epochs),
        decay_interval: a.decay_interval.unwrap_or(d.decay_interval),
        decay_factor: a.decay_factor.unwrap_or(d.decay_factor),
        lr_transformer: a.lr_transformer.unwrap_or(d.lr_transformer),
        lr_backbone: a.lr_backbone.unwrap_or(d.lr_backbone),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        rho: a.rho.unwrap_or(d.rho),
        optimizer,
        seed: a.seed.unwrap_or(d.seed),
    })
}

pub fn train_cmd(a: TrainArgs) -> Result<()> {
    let manifest = required(&a.manifest, "manifest")?;
    let splits = required(&a.splits, "splits")?;
    let out = required(&a.out, "out")?;
    let train_set = load_split(&manifest, &splits, Split::Train)?;
    let val_set = load_split(&manifest, &splits, Split::Val)?;
    let Some(first) = train_set.first() else {
        bail!("train split of {} is empty", splits.display());
    };

    let trainer = match &a.resume {
        Some(ckpt) => Trainer::resume(load_checkpoint(ckpt)?)?,
        None => {
            // a fresh run appending to an old log would interleave two runs
            let log = out.join(LOG_FILE);
            if log.exists() {
                bail!("{} already exists; pass --resume or pick another --out", log.display());
            }
            let size = a.image_size.unwrap_or(first.image.shape()[1]);
            let model = FaithModel::new(model_config(&a, size)?, a.seed.unwrap_or(0))?;
            Trainer::new(model, train_config(&a)?)?
        }
    };
    println!(
        "training {} params on {} samples ({} val) for epochs {}..{}",
        trainer.model().param_count(),
        train_set.len(),
        val_set.len(),
        trainer.epoch(),
        trainer.config().epochs
    );
    let outcome = train(trainer, &train_set, &val_set, Some(&out))?;
    for e in &outcome.log {
        match e.val_full_acc {
            Some(v) => println!("epoch {} loss {:.4} val full {:.3}", e.epoch, e.train_loss, v),
            None => println!("epoch {} loss {:.4}", e.epoch, e.train_loss),
        }
    }
    println!(
        "wrote {}, {} and {}",
        out.join(LOG_FILE).display(),
        out.join(LAST_CHECKPOINT).display(),
        out.join(BEST_CHECKPOINT).display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<FaithModel> {
    Ok(load_checkpoint(path)?.model)
}

fn predictor(model: &FaithModel) -> impl Fn(&Tensor) -> seqedit_core::Result<EditSequence> + Sync + '_ {
    move |img: &Tensor| model.predict_sequence(img)
}

fn save_report(dir: &Path, stem: &str, report: &MetricsReport) -> Result<(PathBuf, PathBuf)> {
    let txt = dir.join(format!("{stem}.txt"));
    let json = dir.join(format!("{stem}.json"));
    write(&txt, &report.to_string())?;
    write(&json, &report.to_json())?;
    Ok((txt, json))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = required(&a.checkpoint, "checkpoint")?;
    let manifest = required(&a.manifest, "manifest")?;
    let splits = required(&a.splits, "splits")?;
    let out = required(&a.out, "out")?;
    let split = parse_split(a.split.as_deref())?;
    let model = load_model(&ckpt)?;
    let samples = load_split(&manifest, &splits, split)?;
    let report = evaluate(&predictor(&model), &samples, split_name(split))?;
    fs::create_dir_all(&out).with_context(|| format!("{}", out.display()))?;
    let (txt, _) = save_report(&out, &format!("{}-clean", split_name(split)), &report)?;
    let avg = &report.average;
    println!(
        "{}: {} samples, fixed {:.3} adaptive {:.3} full {:.3} -> {}",
        split_name(split),
        avg.count,
        avg.fixed_acc,
        avg.adaptive_acc,
        avg.full_acc,
        txt.display()
    );
    Ok(())
}

fn parse_perturbation(s: &str, seed: u64) -> Result<Perturbation> {
    let bad = || UsageError(format!("perturbation `{s}` is not clean, jpeg-<ratio> or noise-<intensity>"));
    if s == "clean" {
        return Ok(Perturbation::Identity);
    }
    let (kind, amount) = s.split_once('-').ok_or_else(bad)?;
    let amount: f64 = amount.parse().map_err(|_| bad())?;
    let p = match kind {
        "jpeg" => Perturbation::JpegLike { ratio: amount },
        "noise" => Perturbation::GaussianNoise { intensity: amount, seed },
        _ => return Err(bad().into()),
    };
    p.validate().map_err(|e| UsageError(format!("perturbation `{s}`: {e}")))?;
    Ok(p)
}

fn robustness_table(split: &str, reports: &[MetricsReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "split {split}, {} samples", reports[0].average.count);
    let _ = writeln!(s, "{:<12} {:>9} {:>12} {:>9}", "Perturb", "Fixed-Acc", "Adaptive-Acc", "Full-Acc");
    for r in reports {
        let a = &r.average;
        let _ = writeln!(s, "{:<12} {:>9.4} {:>12.4} {:>9.4}", r.label, a.fixed_acc, a.adaptive_acc, a.full_acc);
    }
    s
}

pub fn perturb_eval(a: PerturbArgs) -> Result<()> {
    let ckpt = required(&a.checkpoint, "checkpoint")?;
    let manifest = required(&a.manifest, "manifest")?;
    let splits = required(&a.splits, "splits")?;
    let out = required(&a.out, "out")?;
    let split = parse_split(a.split.as_deref())?;
    let seed = a.seed.unwrap_or(0);
    let mut set = vec![Perturbation::Identity];
    match &a.perturbations {
        Some(list) => {
            for p in list {
                let p = parse_perturbation(p.trim(), seed)?;
                if p != Perturbation::Identity {
                    set.push(p);
                }
            }
        }
        None => set.extend(Perturbation::standard_set(seed)),
    }
    let model = load_model(&ckpt)?;
    let samples = load_split(&manifest, &splits, split)?;
    let reports = robustness_sweep(&predictor(&model), &samples, &set)?;
    fs::create_dir_all(&out).with_context(|| format!("{}", out.display()))?;
    let name = split_name(split);
    for r in &reports {
        save_report(&out, &format!("{name}-{}", r.label), r)?;
    }
    let table = robustness_table(name, &reports);
    write(&out.join(format!("{name}-robustness.txt")), &table)?;
    let json: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| serde_json::from_str(&r.to_json()).expect("report json parses"))
        .collect();
    write(
        &out.join(format!("{name}-robustness.json")),
        &(serde_json::to_string_pretty(&json).expect("reports serialize") + "\n"),
    )?;
    print!("{table}");
    Ok(())
}

pub fn validate(a: ValidateArgs) -> Result<()> {
    let manifest = required(&a.manifest, "manifest")?;
    let records = load_manifest(&manifest)?;
    if a.check_files.unwrap_or(false) {
        let root = manifest_root(&manifest);
        for r in &records {
            let check = |rel: &str, mask: bool| -> Result<()> {
                let p = root.join(rel);
                if mask {
                    read_mask(&p)?;
                } else {
                    read_image_raw(&p)?;
                }
                Ok(())
            };
            check(&r.image, false).with_context(|| format!("record {}", r.id))?;
            if let Some(b) = &r.base {
                check(b, false).with_context(|| format!("record {}", r.id))?;
            }
            for s in &r.steps {
                if let Some(m) = &s.mask {
                    check(m, true).with_context(|| format!("record {}", r.id))?;
                }
            }
        }
    }
    let mut counts = [0usize; 5];
    records.iter().for_each(|r| counts[r.len()] += 1);
    println!("ok: {} records (by length {:?})", records.len(), counts);
    Ok(())
}
