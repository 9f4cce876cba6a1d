use std::collections::HashMap;

use anyhow::{bail, Result};
use iaa_core::dataset::{FileCheck, ImageRecord};
use iaa_core::io::read_iaa_json;
use iaa_core::stats::{cohens_d, fosd_test, mann_whitney, Alternative, EffectSize, Sample};
use serde::Serialize;

use crate::cli::{GroupBy, StatsArgs};
use crate::context::{open, write_json, Ctx};

#[derive(Serialize)]
struct GroupSummary {
    label: String,
    n: usize,
    mean: f64,
    std_dev: f64,
}

#[derive(Serialize)]
struct TestReport {
    test: &'static str,
    hypothesis: String,
    statistic: f64,
    p_value: f64,
    n_a: usize,
    n_b: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<String>,
    degenerate: bool,
    verdict: &'static str,
}

#[derive(Serialize)]
struct StatsReport {
    grouping: String,
    alpha_level: f64,
    groups: Vec<GroupSummary>,
    mann_whitney: TestReport,
    cohens_d: Option<EffectSize>,
    fosd: Vec<TestReport>,
}

fn verdict(p: f64, alpha: f64) -> &'static str {
    if p < alpha {
        "reject"
    } else {
        "fail to reject"
    }
}

fn group_of(args: &StatsArgs, rec: &ImageRecord) -> Option<usize> {
    match args.group_by {
        GroupBy::Malignant => Some(usize::from(rec.malignant)),
        GroupBy::Diagnosis => args.groups.iter().position(|g| *g == rec.diagnosis),
    }
}

pub fn run(ctx: &mut Ctx, args: &StatsArgs) -> Result<()> {
    let seed = ctx.seed("stats")?;
    let labels: [String; 2] = match args.group_by {
        GroupBy::Malignant => ["benign".into(), "malignant".into()],
        GroupBy::Diagnosis => match args.groups.as_slice() {
            [a, b] => [a.clone(), b.clone()],
            _ => bail!("--group-by diagnosis needs exactly two --groups values"),
        },
    };
    let manifest = ctx.manifest(FileCheck::Skip)?;
    let iaa_path = ctx.input(&args.iaa, "iaa.json");
    let entries = read_iaa_json(open(&iaa_path)?)?;
    let by_id: HashMap<&str, &ImageRecord> = manifest.images.iter().map(|r| (r.image_id.as_str(), r)).collect();

    let mut values: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for e in &entries {
        match by_id.get(e.score.image_id.as_str()) {
            Some(rec) => {
                if let Some(g) = group_of(args, rec) {
                    values[g].push(e.score.value);
                }
            }
            None => ctx.warn(format!("{}: not in manifest; ignored", e.score.image_id)),
        }
    }
    for (label, v) in labels.iter().zip(&values) {
        if v.len() < 2 {
            bail!("group {label:?} has {} member(s); at least 2 required", v.len());
        }
    }
    let [va, vb] = values;
    let a = Sample::new(labels[0].clone(), va)?;
    let b = Sample::new(labels[1].clone(), vb)?;
    let alpha = ctx.global.alpha_level;
    let iterations = ctx.global.iterations;

    let mw = mann_whitney(&a, &b, Alternative::TwoSided);
    if mw.degenerate {
        ctx.warn("Mann-Whitney: all values tied");
    }
    let effect = match cohens_d(&a, &b) {
        Ok(e) => Some(e),
        Err(e) => {
            ctx.warn(format!("Cohen's d: {e}"));
            None
        }
    };
    let mut fosd = Vec::new();
    for (x, y) in [(&a, &b), (&b, &a)] {
        let r = fosd_test(x, y, iterations, seed)?;
        if r.degenerate {
            ctx.warn(format!("FOSD {} vs {}: degenerate input", x.label(), y.label()));
        }
        fosd.push(TestReport {
            test: "fosd",
            hypothesis: format!("{} >=1 {}", x.label(), y.label()),
            statistic: r.statistic,
            p_value: r.p_value,
            n_a: r.n_a,
            n_b: r.n_b,
            iterations: Some(r.bootstrap_iterations),
            seed: Some(r.seed),
            method: None,
            degenerate: r.degenerate,
            verdict: verdict(r.p_value, alpha),
        });
    }
    let report = StatsReport {
        grouping: format!("{:?}", args.group_by).to_lowercase(),
        alpha_level: alpha,
        groups: [&a, &b]
            .iter()
            .map(|s| GroupSummary {
                label: s.label().to_string(),
                n: s.len(),
                mean: s.mean(),
                std_dev: s.std_dev(),
            })
            .collect(),
        mann_whitney: TestReport {
            test: "mann-whitney",
            hypothesis: format!("{} = {} (two-sided)", a.label(), b.label()),
            statistic: mw.u_statistic,
            p_value: mw.p_value,
            n_a: mw.n_a,
            n_b: mw.n_b,
            iterations: None,
            seed: None,
            method: Some(format!("{:?}", mw.method)),
            degenerate: mw.degenerate,
            verdict: verdict(mw.p_value, alpha),
        },
        cohens_d: effect,
        fosd,
    };

    for g in &report.groups {
        println!("{}: n = {}, mean = {:.4}, sd = {:.4}", g.label, g.n, g.mean, g.std_dev);
    }
    let line = |t: &TestReport| {
        println!(
            "{} [{}]: statistic = {:.4}, p = {:.4} -> {} at alpha = {}",
            t.test, t.hypothesis, t.statistic, t.p_value, t.verdict, alpha
        )
    };
    line(&report.mann_whitney);
    if let Some(e) = &report.cohens_d {
        println!("cohen's d = {:.4} (pooled sd {:.4})", e.cohens_d, e.pooled_sd);
    }
    report.fosd.iter().for_each(line);
    let path = ctx.out_file("stats.json")?;
    write_json(&path, &report)?;
    println!("wrote {}", path.display());
    Ok(())
}
