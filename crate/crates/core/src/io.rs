//! On-disk report formats shared by the command-line stages.
//!
//! CSV files carry a header row and a fixed column order, with floats at six
//! decimals. JSON keeps full precision.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::agreement::{AgreementRecord, IaaScore};
use crate::dataset::{FactorTable, Fold, SplitAssignment};
use crate::error::{Error, Result};

pub const PAIR_CSV_HEADER: [&str; 6] = ["image_id", "idx_a", "idx_b", "dice", "hausdorff", "flags"];
pub const SPLIT_CSV_HEADER: [&str; 3] = ["image_id", "fold", "stratum"];
pub const FACTOR_CSV_HEADER: [&str; 8] = [
    "factor",
    "relation",
    "malignancy",
    "n_pairs",
    "mean_dice",
    "std_dice",
    "mann_whitney_p",
    "cohens_d",
];

const HAUSDORFF_UNDEFINED: &str = "hausdorff_undefined";

pub fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt6).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Manifest(format!("csv: {e}"))
}

/// One row of the per-pair agreement CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct PairRow {
    pub image_id: String,
    pub record: AgreementRecord,
}

pub fn write_pair_csv<W: Write>(out: W, rows: &[PairRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PAIR_CSV_HEADER).map_err(csv_err)?;
    for row in rows {
        let r = &row.record;
        w.write_record([
            row.image_id.clone(),
            r.mask_index_a.to_string(),
            r.mask_index_b.to_string(),
            fmt6(r.dice),
            fmt_opt(r.hausdorff),
            if r.hausdorff.is_none() {
                HAUSDORFF_UNDEFINED.to_string()
            } else {
                String::new()
            },
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<pair csv>".into(),
        source,
    })
}

/// Reads a pair CSV back into per-image record lists, preserving row order.
pub fn read_pair_csv<R: Read>(input: R) -> Result<HashMap<String, Vec<AgreementRecord>>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out: HashMap<String, Vec<AgreementRecord>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let parse_err = |what: &str| Error::Manifest(format!("bad {what} in pair csv row {:?}", rec));
        let idx_a = field(1).parse().map_err(|_| parse_err("idx_a"))?;
        let idx_b = field(2).parse().map_err(|_| parse_err("idx_b"))?;
        let dice = field(3).parse().map_err(|_| parse_err("dice"))?;
        let hausdorff = match field(4) {
            "" => None,
            s => Some(s.parse().map_err(|_| parse_err("hausdorff"))?),
        };
        out.entry(field(0).to_string()).or_default().push(AgreementRecord {
            mask_index_a: idx_a,
            mask_index_b: idx_b,
            dice,
            hausdorff,
        });
    }
    Ok(out)
}

/// Per-image entry of the IAA JSON report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageIaa {
    #[serde(flatten)]
    pub score: IaaScore,
    pub hausdorff_mean: Option<f64>,
    pub hausdorff_excluded: usize,
}

pub fn read_iaa_json<R: Read>(input: R) -> Result<Vec<ImageIaa>> {
    serde_json::from_reader(input).map_err(|e| Error::Manifest(format!("iaa json: {e}")))
}

pub fn iaa_by_id(entries: &[ImageIaa]) -> HashMap<String, IaaScore> {
    entries
        .iter()
        .map(|e| (e.score.image_id.clone(), e.score.clone()))
        .collect()
}

pub fn write_split_csv<W: Write>(out: W, rows: &[SplitAssignment]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SPLIT_CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.image_id.as_str(), r.fold.as_str(), &r.stratum.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<split csv>".into(),
        source,
    })
}

/// Reads `image_id -> fold` from a split CSV.
pub fn read_split_csv<R: Read>(input: R) -> Result<HashMap<String, Fold>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let id = rec.get(0).unwrap_or("").to_string();
        let fold: Fold = rec.get(1).unwrap_or("").parse()?;
        out.insert(id, fold);
    }
    Ok(out)
}

fn lower<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn write_factor_csv<W: Write>(out: W, table: &FactorTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FACTOR_CSV_HEADER).map_err(csv_err)?;
    for r in &table.rows {
        w.write_record([
            lower(&r.factor),
            lower(&r.relation),
            lower(&r.malignancy),
            r.n_pairs.to_string(),
            fmt_opt(r.mean_dice),
            fmt_opt(r.std_dice),
            fmt_opt(r.mann_whitney_p),
            fmt_opt(r.cohens_d),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<factor csv>".into(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DiceBin, Stratum};

    #[test]
    fn pair_csv_layout() {
        let rows = vec![
            PairRow {
                image_id: "img1".into(),
                record: AgreementRecord {
                    mask_index_a: 0,
                    mask_index_b: 1,
                    dice: 2.0 / 3.0,
                    hausdorff: Some(5.0),
                },
            },
            PairRow {
                image_id: "img1".into(),
                record: AgreementRecord {
                    mask_index_a: 0,
                    mask_index_b: 2,
                    dice: 0.0,
                    hausdorff: None,
                },
            },
        ];
        let mut buf = Vec::new();
        write_pair_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "image_id,idx_a,idx_b,dice,hausdorff,flags\n\
             img1,0,1,0.666667,5.000000,\n\
             img1,0,2,0.000000,,hausdorff_undefined\n"
        );
        let back = read_pair_csv(buf.as_slice()).unwrap();
        assert_eq!(back["img1"].len(), 2);
        assert_eq!(back["img1"][1].hausdorff, None);
    }

    #[test]
    fn split_csv_round_trip() {
        let rows = vec![SplitAssignment {
            image_id: "a".into(),
            fold: Fold::Valid,
            stratum: Stratum {
                malignant: true,
                mask_count: 3,
                dice_bin: DiceBin::High,
            },
        }];
        let mut buf = Vec::new();
        write_split_csv(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "image_id,fold,stratum\na,valid,malignant/k3/high\n"
        );
        assert_eq!(read_split_csv(buf.as_slice()).unwrap()["a"], Fold::Valid);
    }

    #[test]
    fn iaa_json_flattens_score() {
        let e = ImageIaa {
            score: IaaScore {
                image_id: "x".into(),
                value: 0.5,
                pair_count: 1,
            },
            hausdorff_mean: None,
            hausdorff_excluded: 1,
        };
        let json = serde_json::to_string(&[e.clone()]).unwrap();
        assert!(json.contains("\"image_id\":\"x\""));
        assert_eq!(read_iaa_json(json.as_bytes()).unwrap(), vec![e]);
    }
}
