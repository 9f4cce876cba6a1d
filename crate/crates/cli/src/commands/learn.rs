use std::collections::HashMap;

use anyhow::{bail, Context, Result};
use iaa_core::dataset::{FileCheck, Fold, ImageRecord};
use iaa_core::io::{iaa_by_id, read_iaa_json, read_split_csv};
use iaa_core::IaaScore;
use iaa_learn::data::{examples_from_manifest, Example, FoldData};
use iaa_learn::metrics::{evaluate, report_from_predictions, EvalReport};
use iaa_learn::synth::{generate, SynthConfig};
use iaa_learn::train::{train_with, write_epoch_log, ModelKind, ModelSelection, Trainer, WeightDecay};
use iaa_learn::{Checkpoint, Network, NetworkConfig, TrainConfig};
use serde::Serialize;

use crate::cli::{DataArgs, DecayArg, EvalArgs, FoldArg, ModelArg, SelectionArg, SynthArgs, TrainArgs};
use crate::context::{create, open, write_json, Ctx};

fn fold_of(arg: FoldArg) -> Fold {
    match arg {
        FoldArg::Train => Fold::Train,
        FoldArg::Valid => Fold::Valid,
        FoldArg::Test => Fold::Test,
    }
}

/// Manifest records in the split, the split itself, and agreement targets if available.
fn load_inputs(ctx: &mut Ctx, data: &DataArgs, check: FileCheck) -> Result<(Vec<ImageRecord>, HashMap<String, Fold>, HashMap<String, IaaScore>)> {
    let manifest = ctx.manifest(check)?;
    let split_path = ctx.input(&data.split, "split.csv");
    let split = read_split_csv(open(&split_path)?).with_context(|| format!("reading {}", split_path.display()))?;
    let iaa_path = ctx.input(&data.iaa, "iaa.json");
    let scores = if data.iaa.is_some() || iaa_path.exists() {
        iaa_by_id(&read_iaa_json(open(&iaa_path)?)?)
    } else {
        ctx.warn(format!("no {}; agreement targets unavailable", iaa_path.display()));
        HashMap::new()
    };
    let records: Vec<ImageRecord> = manifest
        .images
        .into_iter()
        .filter(|r| split.contains_key(&r.image_id))
        .collect();
    Ok((records, split, scores))
}

pub fn train(ctx: &mut Ctx, args: &TrainArgs) -> Result<()> {
    let seed = ctx.seed("train")?;
    let kind = match args.model {
        ModelArg::M1 => ModelKind::M1,
        ModelArg::M2 => ModelKind::M2,
        ModelArg::Mt => ModelKind::MT,
    };
    let init = match &args.init {
        Some(p) => Some(Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let net_config = match &init {
        Some(ck) => ck.network.config.clone(),
        None => kind.network_config(NetworkConfig {
            input_side: args.input_side,
            widths: args.widths.clone(),
            head_hidden: args.head_hidden,
            ..NetworkConfig::default()
        }),
    };
    let (records, split, scores) = load_inputs(ctx, &args.data, FileCheck::Strict)?;
    let examples = examples_from_manifest(&records, &scores, net_config.input_side)?;
    let data = FoldData::from_split(examples, &split);
    println!(
        "examples: train {}, valid {}, test {}",
        data.train.len(),
        data.valid.len(),
        data.test.len()
    );

    let mut alphas = args.alpha.clone();
    if kind != ModelKind::MT && alphas.len() > 1 {
        ctx.warn(format!("--alpha sweep ignored for {kind:?}"));
        alphas.truncate(1);
    }
    for alpha in alphas {
        let config = TrainConfig {
            alpha,
            epochs: args.epochs,
            batch_size: args.batch_size,
            learning_rate: args.learning_rate,
            momentum: args.momentum,
            weight_decay: args.weight_decay,
            weight_decay_mode: match args.weight_decay_mode {
                DecayArg::Decoupled => WeightDecay::Decoupled,
                DecayArg::Coupled => WeightDecay::Coupled,
            },
            lr_decay_factor: args.lr_decay_factor,
            lr_decay_every: args.lr_decay_every,
            seed,
            model_selection: args.selection.map(|s| match s {
                SelectionArg::MinValMae => ModelSelection::MinValMae,
                SelectionArg::MaxValBalancedAccuracy => ModelSelection::MaxValBalancedAccuracy,
            }),
            frozen_regression_head: args.frozen_regression_head,
            gamma: args.gamma,
            beta: args.beta,
        };
        let trainer = match &init {
            Some(ck) => Trainer::from_network(kind, ck.network.clone(), config)?,
            None => Trainer::new(kind, net_config.clone(), config)?,
        };
        let tag = match kind {
            ModelKind::MT => format!("mt_a{alpha}"),
            _ => format!("{kind:?}").to_lowercase(),
        };
        let out = train_with(trainer, &data).with_context(|| format!("training {tag}"))?;
        if out.trainer.clamped > 0 {
            ctx.warn(format!("{tag}: {} batch(es) had a clamped class probability", out.trainer.clamped));
        }
        for w in &out.best_report.warnings {
            ctx.warn(format!("{tag}: {w}"));
        }
        let log_path = ctx.out_file(&format!("epochs_{tag}.csv"))?;
        write_epoch_log(create(&log_path)?, &out.log)?;
        let ck_path = ctx.out_file(&format!("checkpoint_{tag}.json"))?;
        Checkpoint::new(kind, out.best, out.best_epoch, Some(out.trainer)).save(&ck_path)?;
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{tag}: best epoch {}, val MAE {}, val balanced accuracy {}, val AUROC {}",
            out.best_epoch,
            fmt(out.best_report.mae()),
            fmt(out.best_report.balanced_accuracy),
            fmt(out.best_report.auroc)
        );
        println!("wrote {} and {}", ck_path.display(), log_path.display());
    }
    Ok(())
}

fn label_only(records: &[ImageRecord], scores: &HashMap<String, IaaScore>) -> Vec<Example> {
    records
        .iter()
        .map(|r| Example {
            id: r.image_id.clone(),
            image: Vec::new(),
            label: usize::from(r.malignant),
            iaa: scores.get(&r.image_id).map(|s| s.value),
        })
        .collect()
}

/// Reads `image_id,z_hat,p_malignant` rows.
fn read_predictions(path: &std::path::Path) -> Result<HashMap<String, (Option<f64>, Option<f64>)>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        let num = |i: usize| -> Result<Option<f64>> {
            match rec.get(i).unwrap_or("").trim() {
                "" => Ok(None),
                s => Ok(Some(s.parse().with_context(|| format!("bad number {s:?} in {}", path.display()))?)),
            }
        };
        out.insert(rec.get(0).unwrap_or("").to_string(), (num(1)?, num(2)?));
    }
    Ok(out)
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    fold: &'static str,
    source: String,
    #[serde(flatten)]
    report: &'a EvalReport,
}

pub fn eval(ctx: &mut Ctx, args: &EvalArgs) -> Result<()> {
    let fold = fold_of(args.fold);
    let (report, source, stem) = if let Some(ck_path) = &args.checkpoint {
        let ck = Checkpoint::load(ck_path).with_context(|| format!("loading {}", ck_path.display()))?;
        let (records, split, scores) = load_inputs(ctx, &args.data, FileCheck::Strict)?;
        let examples = examples_from_manifest(&records, &scores, ck.network.config.input_side)?;
        let data = FoldData::from_split(examples, &split);
        let net: &Network = &ck.network;
        let stem = ck_path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
        (evaluate(net, data.fold(fold))?, ck_path.display().to_string(), stem)
    } else {
        let pred_path = args.predictions.as_ref().expect("clap requires one source");
        let preds = read_predictions(pred_path)?;
        let (records, split, scores) = load_inputs(ctx, &args.data, FileCheck::Skip)?;
        let data = FoldData::from_split(label_only(&records, &scores), &split);
        let examples = data.fold(fold);
        let mut z = Vec::with_capacity(examples.len());
        let mut probs = Vec::with_capacity(2 * examples.len());
        for e in examples {
            let Some(&(zh, p)) = preds.get(&e.id) else {
                bail!("no prediction for {}", e.id);
            };
            z.push(zh);
            if let Some(p) = p {
                probs.extend([1.0 - p, p]);
            }
        }
        let z: Option<Vec<f64>> = z.into_iter().collect();
        let probs = (probs.len() == 2 * examples.len()).then_some(probs);
        let stem = pred_path.file_stem().map_or("predictions".into(), |s| s.to_string_lossy().into_owned());
        let report = report_from_predictions(examples, z.as_deref(), probs.as_deref(), 2)?;
        (report, pred_path.display().to_string(), stem)
    };
    for w in &report.warnings {
        ctx.warn(w);
    }
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    println!(
        "{} ({} images): MAE {} (benign {}, malignant {}), MSE {}, balanced accuracy {}, AUROC {}",
        fold.as_str(),
        report.n,
        fmt(report.overall.mae),
        fmt(report.benign.mae),
        fmt(report.malignant.mae),
        fmt(report.overall.mse),
        fmt(report.balanced_accuracy),
        fmt(report.auroc)
    );
    let path = ctx.out_file(&format!("eval_{stem}_{}.json", fold.as_str()))?;
    write_json(
        &path,
        &EvalOutput {
            fold: fold.as_str(),
            source,
            report: &report,
        },
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct Latent<'a> {
    image_id: &'a str,
    malignant: bool,
    fuzziness: f64,
    iaa: f64,
}

pub fn synth(ctx: &mut Ctx, args: &SynthArgs) -> Result<()> {
    let seed = ctx.seed("synth")?;
    let config = SynthConfig {
        n: args.n,
        seed,
        side: args.side,
        ..SynthConfig::new(args.n, seed)
    };
    let data = generate(&config)?;
    let dir = ctx.out_file("")?;
    let records = data.write_to_dir(&dir)?;
    let latent: Vec<Latent> = data
        .images
        .iter()
        .map(|s| Latent {
            image_id: &s.id,
            malignant: s.malignant,
            fuzziness: s.fuzziness,
            iaa: s.iaa.value,
        })
        .collect();
    write_json(&dir.join("synth_latent.json"), &latent)?;
    let masks: usize = records.iter().map(|r| r.masks.len()).sum();
    println!(
        "generated {} images ({} malignant), {} masks; wrote {}",
        records.len(),
        records.iter().filter(|r| r.malignant).count(),
        masks,
        dir.join("manifest.json").display()
    );
    Ok(())
}
