use anyhow::Result;
use iaa_core::dataset::{factor_table, FileCheck};
use iaa_core::io::{read_pair_csv, write_factor_csv};

use crate::cli::TableArgs;
use crate::context::{create, open, write_json, Ctx};

pub fn run(ctx: &mut Ctx, args: &TableArgs) -> Result<()> {
    let manifest = ctx.manifest(FileCheck::Skip)?;
    let pairs = read_pair_csv(open(&ctx.input(&args.pairs, "pairs.csv"))?)?;
    let table = factor_table(&manifest.images, &pairs);
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    println!(
        "{:<10} {:<10} {:<10} {:>7} {:>8} {:>8} {:>8} {:>8}",
        "factor", "relation", "class", "pairs", "mean", "sd", "p", "d"
    );
    for r in &table.rows {
        println!(
            "{:<10} {:<10} {:<10} {:>7} {:>8} {:>8} {:>8} {:>8}",
            format!("{:?}", r.factor).to_lowercase(),
            format!("{:?}", r.relation).to_lowercase(),
            format!("{:?}", r.malignancy).to_lowercase(),
            r.n_pairs,
            fmt(r.mean_dice),
            fmt(r.std_dice),
            fmt(r.mann_whitney_p),
            fmt(r.cohens_d)
        );
    }
    let csv_path = ctx.out_file("factor_table.csv")?;
    write_factor_csv(create(&csv_path)?, &table)?;
    let json_path = ctx.out_file("factor_table.json")?;
    write_json(&json_path, &table)?;
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}
