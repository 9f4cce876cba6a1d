//! Multi-annotator dataset model: manifests, stratified splits and
//! factor-conditioned agreement tables.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agreement::{AgreementRecord, IaaScore};
use crate::error::{Error, Result};
use crate::stats::{cohens_d, mann_whitney, Alternative, Sample};

/// How a mask was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tool {
    /// Manual polygon tracing.
    T1,
    /// Semi-automated flood fill.
    T2,
    /// Automated segmentation, reviewed and accepted.
    T3,
}

/// Skill level of the reviewing annotator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Skill {
    /// Expert.
    S1,
    /// Novice.
    S2,
}

impl std::str::FromStr for Tool {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "T1" => Ok(Tool::T1),
            "T2" => Ok(Tool::T2),
            "T3" => Ok(Tool::T3),
            _ => Err(()),
        }
    }
}

impl std::str::FromStr for Skill {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "S1" => Ok(Skill::S1),
            "S2" => Ok(Skill::S2),
            _ => Err(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub mask_path: PathBuf,
    pub annotator_id: String,
    pub tool: Tool,
    pub skill: Skill,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub image_path: PathBuf,
    pub diagnosis: String,
    pub malignant: bool,
    pub masks: Vec<MaskRecord>,
}

// Raw manifest rows, validated into the typed records above.
#[derive(Deserialize)]
struct RawMask {
    mask_path: PathBuf,
    annotator_id: String,
    tool: String,
    skill: String,
}

#[derive(Deserialize)]
struct RawImage {
    image_id: String,
    image_path: PathBuf,
    diagnosis: String,
    malignant: bool,
    masks: Vec<RawMask>,
}

/// What to do about manifest entries that point at missing files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileCheck {
    /// Missing files are errors.
    Strict,
    /// Missing files are reported as warnings.
    Lazy,
    /// Paths are not checked.
    Skip,
}

#[derive(Clone, Debug, Default)]
pub struct Manifest {
    pub images: Vec<ImageRecord>,
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn mask_count(&self) -> usize {
        self.images.iter().map(|i| i.masks.len()).sum()
    }
}

/// Reads a JSON manifest. Relative paths resolve against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>, check: FileCheck) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base, check)
}

pub fn parse_manifest(text: &str, base_dir: &Path, check: FileCheck) -> Result<Manifest> {
    let raw: Vec<RawImage> =
        serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
    let mut seen = HashSet::new();
    let mut manifest = Manifest::default();
    for img in raw {
        if !seen.insert(img.image_id.clone()) {
            return Err(Error::DuplicateId(img.image_id));
        }
        let mut masks = Vec::with_capacity(img.masks.len());
        for m in img.masks {
            let tool = m.tool.parse().map_err(|_| Error::UnknownCode {
                field: "tool",
                code: m.tool.clone(),
                image_id: img.image_id.clone(),
            })?;
            let skill = m.skill.parse().map_err(|_| Error::UnknownCode {
                field: "skill",
                code: m.skill.clone(),
                image_id: img.image_id.clone(),
            })?;
            masks.push(MaskRecord {
                mask_path: base_dir.join(m.mask_path),
                annotator_id: m.annotator_id,
                tool,
                skill,
            });
        }
        let record = ImageRecord {
            image_path: base_dir.join(img.image_path),
            image_id: img.image_id,
            diagnosis: img.diagnosis,
            malignant: img.malignant,
            masks,
        };
        if check != FileCheck::Skip {
            let paths = std::iter::once(&record.image_path).chain(record.masks.iter().map(|m| &m.mask_path));
            for p in paths {
                if !p.exists() {
                    match check {
                        FileCheck::Strict => return Err(Error::MissingFile(p.clone())),
                        _ => manifest
                            .warnings
                            .push(format!("{}: missing file {}", record.image_id, p.display())),
                    }
                }
            }
        }
        manifest.images.push(record);
    }
    Ok(manifest)
}

/// Writes records as a manifest, with paths relative to `base_dir` where possible.
pub fn manifest_to_json(images: &[ImageRecord], base_dir: &Path) -> Result<String> {
    let rel = |p: &Path| p.strip_prefix(base_dir).unwrap_or(p).to_path_buf();
    let out: Vec<ImageRecord> = images
        .iter()
        .map(|img| ImageRecord {
            image_path: rel(&img.image_path),
            masks: img
                .masks
                .iter()
                .map(|m| MaskRecord {
                    mask_path: rel(&m.mask_path),
                    ..m.clone()
                })
                .collect(),
            ..img.clone()
        })
        .collect();
    serde_json::to_string_pretty(&out).map_err(|e| Error::Manifest(e.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiceBin {
    Low,
    Medium,
    High,
}

impl fmt::Display for DiceBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiceBin::Low => "low",
            DiceBin::Medium => "medium",
            DiceBin::High => "high",
        })
    }
}

/// Low below 0.5, high above 0.8, medium on the closed interval between.
pub fn dice_bin(value: f64) -> DiceBin {
    if value < 0.5 {
        DiceBin::Low
    } else if value > 0.8 {
        DiceBin::High
    } else {
        DiceBin::Medium
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fold {
    Train,
    Valid,
    Test,
}

impl Fold {
    pub const ALL: [Fold; 3] = [Fold::Train, Fold::Valid, Fold::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Fold::Train => "train",
            Fold::Valid => "valid",
            Fold::Test => "test",
        }
    }
}

impl fmt::Display for Fold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Fold {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Fold::Train),
            "valid" => Ok(Fold::Valid),
            "test" => Ok(Fold::Test),
            other => Err(Error::Manifest(format!("unknown fold {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Stratum {
    pub malignant: bool,
    pub mask_count: usize,
    pub dice_bin: DiceBin,
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let class = if self.malignant { "malignant" } else { "benign" };
        write!(f, "{class}/k{}/{}", self.mask_count, self.dice_bin)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub image_id: String,
    pub fold: Fold,
    pub stratum: Stratum,
}

/// Train/valid/test proportions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios(pub [f64; 3]);

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios([0.70, 0.15, 0.15])
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidRatios(format!("{:?}", self.0)));
        }
        if (self.0.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidRatios(format!("{:?} does not sum to 1", self.0)));
        }
        Ok(())
    }
}

const FRACTION_EPS: f64 = 1e-9;

/// Fold sizes for one stratum of `n` items.
///
/// Each fold gets `floor(n * ratio)` or one more, so no fold deviates from its
/// exact share by a whole item. Leftover items go to folds with a fractional
/// share, preferring the fold furthest behind its running global target, then
/// the larger fractional part, then train before valid before test.
fn stratum_counts(n: usize, ratios: &SplitRatios, target: &mut [f64; 3], assigned: &mut [usize; 3]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    let mut frac = [0f64; 3];
    for k in 0..3 {
        let exact = n as f64 * ratios.0[k];
        let floor = (exact + FRACTION_EPS).floor();
        counts[k] = floor as usize;
        frac[k] = if exact - floor > FRACTION_EPS { exact - floor } else { 0.0 };
        target[k] += exact;
    }
    let remainder = n - counts.iter().sum::<usize>();
    let mut candidates: Vec<usize> = (0..3).filter(|&k| frac[k] > 0.0).collect();
    candidates.sort_by(|&i, &j| {
        let deficit = |k: usize| target[k] - (assigned[k] + counts[k]) as f64;
        deficit(j)
            .total_cmp(&deficit(i))
            .then(frac[j].total_cmp(&frac[i]))
            .then(i.cmp(&j))
    });
    for &k in candidates.iter().take(remainder) {
        counts[k] += 1;
    }
    for k in 0..3 {
        assigned[k] += counts[k];
    }
    counts
}

/// Stratified train/valid/test assignment.
///
/// Images are grouped by (malignancy, mask count, Dice bin). Strata are visited
/// in sorted order; each is sorted by id, shuffled with a generator seeded once
/// from `seed`, then cut into consecutive train, valid and test runs.
pub fn stratified_split(
    records: &[ImageRecord],
    iaa: &HashMap<String, IaaScore>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Vec<SplitAssignment>> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    ratios.validate()?;
    let mut strata: BTreeMap<Stratum, Vec<&str>> = BTreeMap::new();
    for r in records {
        let score = iaa
            .get(&r.image_id)
            .ok_or_else(|| Error::MissingScore(r.image_id.clone()))?;
        let stratum = Stratum {
            malignant: r.malignant,
            mask_count: r.masks.len(),
            dice_bin: dice_bin(score.value),
        };
        strata.entry(stratum).or_default().push(&r.image_id);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut target = [0f64; 3];
    let mut assigned = [0usize; 3];
    let mut out = Vec::with_capacity(records.len());
    for (stratum, mut ids) in strata {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let counts = stratum_counts(ids.len(), &ratios, &mut target, &mut assigned);
        let mut it = ids.into_iter();
        for (fold, count) in Fold::ALL.into_iter().zip(counts) {
            for id in it.by_ref().take(count) {
                out.push(SplitAssignment {
                    image_id: id.to_string(),
                    fold,
                    stratum,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Factor {
    Annotator,
    Tool,
    Skill,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Same,
    Different,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Malignancy {
    All,
    Benign,
    Malignant,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::Annotator, Factor::Tool, Factor::Skill];

    fn relation(&self, a: &MaskRecord, b: &MaskRecord) -> Relation {
        let same = match self {
            Factor::Annotator => a.annotator_id == b.annotator_id,
            Factor::Tool => a.tool == b.tool,
            Factor::Skill => a.skill == b.skill,
        };
        if same {
            Relation::Same
        } else {
            Relation::Different
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorRow {
    pub factor: Factor,
    pub relation: Relation,
    pub malignancy: Malignancy,
    pub n_pairs: usize,
    /// `None` for an empty cell.
    pub mean_dice: Option<f64>,
    pub std_dice: Option<f64>,
    /// Same-vs-different two-sided Mann-Whitney p; shared by both relation rows.
    pub mann_whitney_p: Option<f64>,
    /// Cohen's d of same minus different.
    pub cohens_d: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FactorTable {
    pub rows: Vec<FactorRow>,
}

impl FactorTable {
    pub fn row(&self, factor: Factor, relation: Relation, malignancy: Malignancy) -> Option<&FactorRow> {
        self.rows
            .iter()
            .find(|r| r.factor == factor && r.relation == relation && r.malignancy == malignancy)
    }
}

/// Intra- versus inter-factor agreement, overall and per malignancy class.
///
/// Images without an entry in `agreements` are ignored. Pairs whose indices do
/// not map to masks in the record are skipped.
pub fn factor_table(
    records: &[ImageRecord],
    agreements: &HashMap<String, Vec<AgreementRecord>>,
) -> FactorTable {
    let mut cells: BTreeMap<(Factor, Malignancy, Relation), Vec<f64>> = BTreeMap::new();
    let mut sorted: Vec<&ImageRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    for img in sorted {
        let Some(pairs) = agreements.get(&img.image_id) else {
            continue;
        };
        let class = if img.malignant {
            Malignancy::Malignant
        } else {
            Malignancy::Benign
        };
        for pair in pairs {
            let (Some(a), Some(b)) = (img.masks.get(pair.mask_index_a), img.masks.get(pair.mask_index_b)) else {
                continue;
            };
            for factor in Factor::ALL {
                let rel = factor.relation(a, b);
                for m in [Malignancy::All, class] {
                    cells.entry((factor, m, rel)).or_default().push(pair.dice);
                }
            }
        }
    }

    let mut rows = Vec::new();
    for factor in Factor::ALL {
        for malignancy in [Malignancy::All, Malignancy::Benign, Malignancy::Malignant] {
            let get = |rel| cells.get(&(factor, malignancy, rel)).cloned().unwrap_or_default();
            let same = get(Relation::Same);
            let diff = get(Relation::Different);
            let (p, d) = match (Sample::new("same", same.clone()), Sample::new("different", diff.clone())) {
                (Ok(s), Ok(t)) => (
                    Some(mann_whitney(&s, &t, Alternative::TwoSided).p_value),
                    cohens_d(&s, &t).ok().map(|e| e.cohens_d),
                ),
                _ => (None, None),
            };
            for (relation, values) in [(Relation::Same, &same), (Relation::Different, &diff)] {
                let (mean, std) = match Sample::new("cell", values.clone()) {
                    Ok(s) => (Some(s.mean()), Some(s.std_dev())),
                    Err(_) => (None, None),
                };
                rows.push(FactorRow {
                    factor,
                    relation,
                    malignancy,
                    n_pairs: values.len(),
                    mean_dice: mean,
                    std_dice: std,
                    mann_whitney_p: p,
                    cohens_d: d,
                });
            }
        }
    }
    FactorTable { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(annotator: &str, tool: Tool, skill: Skill) -> MaskRecord {
        MaskRecord {
            mask_path: PathBuf::from(format!("{annotator}.png")),
            annotator_id: annotator.into(),
            tool,
            skill,
        }
    }

    fn image(id: &str, malignant: bool, k: usize) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            image_path: PathBuf::from(format!("{id}.png")),
            diagnosis: if malignant { "melanoma" } else { "nevus" }.into(),
            malignant,
            masks: (0..k).map(|i| mask(&format!("a{i}"), Tool::T1, Skill::S1)).collect(),
        }
    }

    fn score(id: &str, value: f64) -> (String, IaaScore) {
        (
            id.to_string(),
            IaaScore {
                image_id: id.into(),
                value,
                pair_count: 1,
            },
        )
    }

    fn fold_counts(assign: &[SplitAssignment]) -> [usize; 3] {
        let mut c = [0; 3];
        for a in assign {
            c[a.fold as usize] += 1;
        }
        c
    }

    #[test]
    fn manifest_single_image() {
        let json = r#"[{"image_id":"i1","image_path":"i1.png","diagnosis":"nevus","malignant":false,
            "masks":[{"mask_path":"m1.png","annotator_id":"a","tool":"T1","skill":"S1"},
                     {"mask_path":"m2.png","annotator_id":"b","tool":"T3","skill":"S2"}]}]"#;
        let m = parse_manifest(json, Path::new("/data"), FileCheck::Skip).unwrap();
        assert_eq!(m.images.len(), 1);
        assert_eq!(m.images[0].masks.len(), 2);
        assert_eq!(m.images[0].masks[1].tool, Tool::T3);
        assert_eq!(m.images[0].masks[0].mask_path, PathBuf::from("/data/m1.png"));
    }

    #[test]
    fn manifest_errors() {
        let dup = r#"[{"image_id":"x","image_path":"a","diagnosis":"d","malignant":true,"masks":[]},
                      {"image_id":"x","image_path":"b","diagnosis":"d","malignant":true,"masks":[]}]"#;
        assert!(matches!(
            parse_manifest(dup, Path::new("."), FileCheck::Skip),
            Err(Error::DuplicateId(id)) if id == "x"
        ));
        let bad_tool = r#"[{"image_id":"x","image_path":"a","diagnosis":"d","malignant":true,
            "masks":[{"mask_path":"m","annotator_id":"a","tool":"T9","skill":"S1"}]}]"#;
        assert!(matches!(
            parse_manifest(bad_tool, Path::new("."), FileCheck::Skip),
            Err(Error::UnknownCode { field: "tool", .. })
        ));
        assert!(matches!(
            parse_manifest("{", Path::new("."), FileCheck::Skip),
            Err(Error::Manifest(_))
        ));
    }

    #[test]
    fn manifest_missing_files() {
        let json = r#"[{"image_id":"x","image_path":"nope.png","diagnosis":"d","malignant":true,"masks":[]}]"#;
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            parse_manifest(json, dir.path(), FileCheck::Strict),
            Err(Error::MissingFile(_))
        ));
        let lazy = parse_manifest(json, dir.path(), FileCheck::Lazy).unwrap();
        assert_eq!(lazy.warnings.len(), 1);
    }

    #[test]
    fn manifest_json_round_trip() {
        let images = vec![image("a", true, 2), image("b", false, 3)];
        let base = Path::new("/base");
        let moved: Vec<ImageRecord> = images
            .iter()
            .map(|i| ImageRecord {
                image_path: base.join(&i.image_path),
                masks: i
                    .masks
                    .iter()
                    .map(|m| MaskRecord {
                        mask_path: base.join(&m.mask_path),
                        ..m.clone()
                    })
                    .collect(),
                ..i.clone()
            })
            .collect();
        let json = manifest_to_json(&moved, base).unwrap();
        assert!(!json.contains("/base"));
        assert_eq!(parse_manifest(&json, base, FileCheck::Skip).unwrap().images, moved);
    }

    #[test]
    fn dice_bins() {
        assert_eq!(dice_bin(0.49), DiceBin::Low);
        assert_eq!(dice_bin(0.5), DiceBin::Medium);
        assert_eq!(dice_bin(0.8), DiceBin::Medium);
        assert_eq!(dice_bin(0.81), DiceBin::High);
    }

    #[test]
    fn split_single_stratum_sizes() {
        for (n, expected) in [(20, [14, 3, 3]), (10, [7, 2, 1]), (1, [1, 0, 0])] {
            let recs: Vec<_> = (0..n).map(|i| image(&format!("i{i:03}"), false, 2)).collect();
            let iaa: HashMap<_, _> = recs.iter().map(|r| score(&r.image_id, 0.9)).collect();
            let split = stratified_split(&recs, &iaa, SplitRatios::default(), 1).unwrap();
            assert_eq!(fold_counts(&split), expected, "n = {n}");
        }
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            stratified_split(&[], &HashMap::new(), SplitRatios::default(), 0),
            Err(Error::EmptyInput)
        ));
        let recs = vec![image("a", false, 2)];
        assert!(matches!(
            stratified_split(&recs, &HashMap::new(), SplitRatios::default(), 0),
            Err(Error::MissingScore(_))
        ));
        let iaa: HashMap<_, _> = [score("a", 1.0)].into();
        assert!(stratified_split(&recs, &iaa, SplitRatios([0.5, 0.5, 0.5]), 0).is_err());
    }

    #[test]
    fn factor_same_annotator_pair() {
        let mut img = image("x", false, 2);
        img.masks[1].annotator_id = "a0".into();
        let agreements: HashMap<_, _> = [(
            "x".to_string(),
            vec![AgreementRecord {
                mask_index_a: 0,
                mask_index_b: 1,
                dice: 0.9,
                hausdorff: Some(1.0),
            }],
        )]
        .into();
        let t = factor_table(&[img], &agreements);
        let same = t.row(Factor::Annotator, Relation::Same, Malignancy::All).unwrap();
        assert_eq!((same.n_pairs, same.mean_dice), (1, Some(0.9)));
        let diff = t.row(Factor::Annotator, Relation::Different, Malignancy::All).unwrap();
        assert_eq!(diff.n_pairs, 0);
        assert_eq!(diff.mean_dice, None);
        assert_eq!(diff.mann_whitney_p, None);
        assert_eq!(
            t.row(Factor::Annotator, Relation::Same, Malignancy::Malignant).unwrap().n_pairs,
            0
        );
    }

    #[test]
    fn factor_three_masks_relations() {
        let mut img = image("x", true, 3);
        img.masks[0].annotator_id = "a".into();
        img.masks[1].annotator_id = "a".into();
        img.masks[2].annotator_id = "b".into();
        let pairs = crate::agreement::canonical_pairs(3)
            .into_iter()
            .zip([0.9, 0.4, 0.5])
            .map(|((i, j), dice)| AgreementRecord {
                mask_index_a: i,
                mask_index_b: j,
                dice,
                hausdorff: None,
            })
            .collect();
        let t = factor_table(&[img], &[("x".to_string(), pairs)].into());
        let same = t.row(Factor::Annotator, Relation::Same, Malignancy::Malignant).unwrap();
        let diff = t.row(Factor::Annotator, Relation::Different, Malignancy::Malignant).unwrap();
        assert_eq!((same.n_pairs, diff.n_pairs), (1, 2));
        assert!((diff.mean_dice.unwrap() - 0.45).abs() < 1e-12);
        assert!(diff.mann_whitney_p.is_some());
        // one same pair: Cohen's d needs two per group
        assert_eq!(diff.cohens_d, None);
    }

    #[test]
    fn factor_all_distinct_annotators() {
        let img = image("x", false, 3);
        let pairs = crate::agreement::canonical_pairs(3)
            .into_iter()
            .map(|(i, j)| AgreementRecord {
                mask_index_a: i,
                mask_index_b: j,
                dice: 0.7,
                hausdorff: None,
            })
            .collect();
        let t = factor_table(&[img], &[("x".to_string(), pairs)].into());
        let same = t.row(Factor::Annotator, Relation::Same, Malignancy::All).unwrap();
        assert_eq!(same.n_pairs, 0);
        assert_eq!(same.mann_whitney_p, None);
        // every mask used T1, so tool "different" is the empty cell
        assert_eq!(t.row(Factor::Tool, Relation::Same, Malignancy::All).unwrap().n_pairs, 3);
    }

    fn arb_dataset() -> impl Strategy<Value = (Vec<ImageRecord>, HashMap<String, IaaScore>)> {
        proptest::collection::vec((any::<bool>(), 2usize..6, 0.0f64..=1.0), 1..300).prop_map(|rows| {
            let mut recs = Vec::new();
            let mut iaa = HashMap::new();
            for (i, (mal, k, v)) in rows.into_iter().enumerate() {
                let id = format!("img{i:04}");
                iaa.insert(id.clone(), score(&id, v).1);
                recs.push(image(&id, mal, k));
            }
            (recs, iaa)
        })
    }

    proptest! {
        #[test]
        fn split_is_stratified_partition((recs, iaa) in arb_dataset(), seed: u64) {
            let ratios = SplitRatios::default();
            let split = stratified_split(&recs, &iaa, ratios, seed).unwrap();
            let ids: HashSet<_> = split.iter().map(|s| s.image_id.clone()).collect();
            prop_assert_eq!(ids.len(), recs.len());
            prop_assert_eq!(split.len(), recs.len());

            let mut per: BTreeMap<Stratum, [usize; 3]> = BTreeMap::new();
            for a in &split {
                per.entry(a.stratum).or_default()[a.fold as usize] += 1;
            }
            for counts in per.values() {
                let n: usize = counts.iter().sum();
                for k in 0..3 {
                    prop_assert!((counts[k] as f64 - n as f64 * ratios.0[k]).abs() < 1.0);
                }
            }
            if recs.len() >= 50 {
                let total = fold_counts(&split);
                for k in 0..3 {
                    let share = total[k] as f64 / recs.len() as f64;
                    prop_assert!((share - ratios.0[k]).abs() <= 0.02, "{:?}", total);
                }
            }
            prop_assert_eq!(&stratified_split(&recs, &iaa, ratios, seed).unwrap(), &split);
        }

        #[test]
        fn dice_bins_partition(v in 0.0f64..=1.0) {
            let bins = [v < 0.5, (0.5..=0.8).contains(&v), v > 0.8];
            prop_assert_eq!(bins.iter().filter(|&&b| b).count(), 1);
            let expected = if bins[0] { DiceBin::Low } else if bins[1] { DiceBin::Medium } else { DiceBin::High };
            prop_assert_eq!(dice_bin(v), expected);
        }
    }
}
