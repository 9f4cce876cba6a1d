use std::collections::BTreeMap;

use anyhow::{bail, Result};
use iaa_core::dataset::{stratified_split, FileCheck, Fold, SplitRatios};
use iaa_core::io::{iaa_by_id, read_iaa_json, write_split_csv};

use crate::cli::SplitArgs;
use crate::context::{create, open, Ctx};

pub fn run(ctx: &mut Ctx, args: &SplitArgs) -> Result<()> {
    let seed = ctx.seed("split")?;
    let ratios = match args.ratios.as_slice() {
        &[a, b, c] => SplitRatios([a, b, c]),
        _ => bail!("--ratios needs three values"),
    };
    let manifest = ctx.manifest(FileCheck::Skip)?;
    let scores = iaa_by_id(&read_iaa_json(open(&ctx.input(&args.iaa, "iaa.json"))?)?);
    let mut records = Vec::with_capacity(manifest.images.len());
    for r in manifest.images {
        if scores.contains_key(&r.image_id) {
            records.push(r);
        } else {
            ctx.warn(format!("{}: no agreement score; left out of the split", r.image_id));
        }
    }
    let split = stratified_split(&records, &scores, ratios, seed)?;

    let mut counts: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    for a in &split {
        let idx = Fold::ALL.iter().position(|f| *f == a.fold).expect("known fold");
        counts.entry(a.stratum.to_string()).or_default()[idx] += 1;
    }
    println!("{:<24} {:>6} {:>6} {:>6}", "stratum", "train", "valid", "test");
    let mut total = [0usize; 3];
    for (stratum, c) in &counts {
        println!("{stratum:<24} {:>6} {:>6} {:>6}", c[0], c[1], c[2]);
        for i in 0..3 {
            total[i] += c[i];
        }
    }
    println!("{:<24} {:>6} {:>6} {:>6}", "total", total[0], total[1], total[2]);
    let path = ctx.out_file("split.csv")?;
    write_split_csv(create(&path)?, &split)?;
    println!("wrote {}", path.display());
    Ok(())
}
