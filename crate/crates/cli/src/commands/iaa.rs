use anyhow::{Context, Result};
use iaa_core::dataset::FileCheck;
use iaa_core::io::{write_pair_csv, ImageIaa, PairRow};
use iaa_core::{aggregate_hausdorff, aggregate_iaa, image_agreements};
use rayon::prelude::*;

use super::quantile;
use crate::context::{create, write_json, Ctx};

pub fn run(ctx: &mut Ctx) -> Result<()> {
    let grid = ctx.grid()?;
    let manifest = ctx.manifest(FileCheck::Strict)?;
    let mut usable = Vec::new();
    for img in &manifest.images {
        if img.masks.len() < 2 {
            ctx.warn(format!("{}: {} mask(s), need at least 2; skipped", img.image_id, img.masks.len()));
        } else {
            usable.push(img);
        }
    }
    let results: Vec<_> = usable
        .par_iter()
        .map(|img| image_agreements(img, grid).with_context(|| format!("image {}", img.image_id)))
        .collect();

    let mut rows = Vec::new();
    let mut entries = Vec::with_capacity(usable.len());
    for (img, records) in usable.iter().zip(results) {
        let records = records?;
        let score = aggregate_iaa(&img.image_id, &records)?;
        let (hausdorff_mean, hausdorff_excluded) = match aggregate_hausdorff(&records) {
            Ok(h) => (Some(h.mean), h.excluded),
            Err(_) => (None, records.len()),
        };
        if hausdorff_excluded > 0 {
            ctx.warn(format!(
                "{}: Hausdorff undefined for {hausdorff_excluded} pair(s) with an empty mask",
                img.image_id
            ));
        }
        rows.extend(records.into_iter().map(|record| PairRow {
            image_id: img.image_id.clone(),
            record,
        }));
        entries.push(ImageIaa {
            score,
            hausdorff_mean,
            hausdorff_excluded,
        });
    }

    let pairs_path = ctx.out_file("pairs.csv")?;
    write_pair_csv(create(&pairs_path)?, &rows)?;
    let iaa_path = ctx.out_file("iaa.json")?;
    write_json(&iaa_path, &entries)?;

    let masks: usize = usable.iter().map(|i| i.masks.len()).sum();
    println!(
        "images: {} ({} masks, {} pairs, {} skipped)",
        entries.len(),
        masks,
        rows.len(),
        manifest.images.len() - usable.len()
    );
    if !entries.is_empty() {
        let mut values: Vec<f64> = entries.iter().map(|e| e.score.value).collect();
        values.sort_by(f64::total_cmp);
        let q = |p| quantile(&values, p);
        println!(
            "IAA quantiles: min {:.4}  q25 {:.4}  median {:.4}  q75 {:.4}  max {:.4}",
            q(0.0),
            q(0.25),
            q(0.5),
            q(0.75),
            q(1.0)
        );
        let above = |t: f64| values.iter().filter(|&&v| v > t).count();
        println!("IAA above 0.90: {}  above 0.95: {}", above(0.90), above(0.95));
    }
    println!("wrote {} and {}", pairs_path.display(), iaa_path.display());
    Ok(())
}
