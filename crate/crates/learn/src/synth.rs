//! Synthetic lesions with simulated multi-annotator masks.
//!
//! Each image gets a latent boundary fuzziness `f`, drawn from `Beta(2, 5)` for
//! benign and `Beta(5, 2)` for malignant lesions. Fuzziness widens the rendered
//! boundary and scales how far each simulated annotator's contour strays from
//! the true one, so malignant agreement is stochastically lower by construction.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::path::Path;

use iaa_core::dataset::{stratified_split, Fold, ImageRecord, MaskRecord, Skill, SplitRatios, Tool};
use iaa_core::{aggregate_iaa, pairwise_agreements, BinaryMask, IaaScore};
use rand::distr::weighted::WeightedIndex;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};

use crate::data::{Example, FoldData};
use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 20;
/// Relative frequency of images with 2, 3, 4 and 5 masks.
pub const MASK_COUNT_WEIGHTS: [u32; 4] = [2130, 209, 51, 4];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub side: usize,
    pub annotator_pool: usize,
}

impl SynthConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            side: 32,
            annotator_pool: 15,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub mask: BinaryMask,
    pub annotator_id: String,
    pub tool: Tool,
    pub skill: Skill,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthImage {
    pub id: String,
    pub malignant: bool,
    pub fuzziness: f64,
    pub image: Vec<f64>,
    pub annotations: Vec<Annotation>,
    pub iaa: IaaScore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub side: usize,
    pub images: Vec<SynthImage>,
}

/// Contour radius as a function of angle.
struct Contour {
    base: f64,
    terms: Vec<(f64, f64, f64)>,
}

impl Contour {
    fn radius(&self, theta: f64) -> f64 {
        self.base
            + self
                .terms
                .iter()
                .map(|&(k, amp, phase)| amp * (k * theta + phase).cos())
                .sum::<f64>()
    }
}

fn polar(side: usize, cx: f64, cy: f64) -> impl Iterator<Item = (f64, f64)> {
    (0..side * side).map(move |i| {
        let dx = (i % side) as f64 + 0.5 - cx;
        let dy = (i / side) as f64 + 0.5 - cy;
        (dx.hypot(dy), dy.atan2(dx))
    })
}

fn sample_image(config: &SynthConfig, i: usize) -> Result<SynthImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(i as u64 + 1);
    let side = config.side as f64;
    let malignant = i % 2 == 1;
    let shape = if malignant { (5.0, 2.0) } else { (2.0, 5.0) };
    let f: f64 = Beta::new(shape.0, shape.1).expect("valid shape").sample(&mut rng);

    let cx = side / 2.0 + rng.random_range(-0.06..0.06) * side;
    let cy = side / 2.0 + rng.random_range(-0.06..0.06) * side;
    let base = rng.random_range(0.2..0.3) * side;
    let irregularity = if malignant { 0.12 } else { 0.03 };
    let truth = Contour {
        base,
        terms: (2..=5)
            .map(|k| {
                let amp = base * irregularity * rng.random_range(0.5..1.0) / (k as f64).sqrt();
                (k as f64, amp, rng.random_range(0.0..TAU))
            })
            .collect(),
    };

    let width = 0.3 + 0.08 * side * f;
    let skin = 0.75 + rng.random_range(-0.05..0.05);
    let noise = Normal::new(0.0, 0.02).expect("valid sd");
    let image: Vec<f64> = polar(config.side, cx, cy)
        .map(|(rho, theta)| {
            let inside = 1.0 / (1.0 + ((rho - truth.radius(theta)) / width).exp());
            (skin - 0.45 * inside + noise.sample(&mut rng)).clamp(0.0, 1.0)
        })
        .collect();

    let k = 2 + WeightedIndex::new(MASK_COUNT_WEIGHTS)
        .expect("positive weights")
        .sample(&mut rng);
    let pool = config.annotator_pool.max(k);
    let annotators = index::sample(&mut rng, pool, k).into_vec();
    let scale = side * (0.01 + 0.1 * f);
    let mut annotations = Vec::with_capacity(k);
    for a in annotators {
        let terms: Vec<(f64, f64, f64)> = (1..=6)
            .map(|kk| (kk as f64, 0.5 * scale, rng.random_range(0.0..TAU)))
            .collect();
        let bits: Vec<bool> = polar(config.side, cx, cy)
            .map(|(rho, theta)| {
                let wobble: f64 = terms.iter().map(|&(kk, amp, ph)| amp * (kk * theta + ph).cos()).sum();
                rho <= (truth.radius(theta) + wobble).max(1.0)
            })
            .collect();
        let tool = [Tool::T1, Tool::T2, Tool::T3][rng.random_range(0..3)];
        let skill = if rng.random_bool(0.5) { Skill::S1 } else { Skill::S2 };
        annotations.push(Annotation {
            mask: BinaryMask::from_bits(config.side, config.side, bits)?,
            annotator_id: format!("annotator_{a:02}"),
            tool,
            skill,
        });
    }
    let id = format!("synth_{i:05}");
    let masks: Vec<BinaryMask> = annotations.iter().map(|a| a.mask.clone()).collect();
    let iaa = aggregate_iaa(&id, &pairwise_agreements(&masks)?)?;
    Ok(SynthImage {
        id,
        malignant,
        fuzziness: f,
        image,
        annotations,
        iaa,
    })
}

/// Generates `config.n` images; classes alternate benign, malignant.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    if config.n < MIN_SAMPLES {
        return Err(Error::TooFewSamples(config.n));
    }
    if config.side < 8 {
        return Err(Error::Config("synthetic images need a side of at least 8".into()));
    }
    let images = (0..config.n)
        .map(|i| sample_image(config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthDataset {
        side: config.side,
        images,
    })
}

pub fn synth_generate(n: usize, seed: u64) -> Result<SynthDataset> {
    generate(&SynthConfig::new(n, seed))
}

impl SynthDataset {
    pub fn examples(&self) -> Vec<Example> {
        self.images
            .iter()
            .map(|s| Example {
                id: s.id.clone(),
                image: s.image.clone(),
                label: usize::from(s.malignant),
                iaa: Some(s.iaa.value),
            })
            .collect()
    }

    pub fn iaa_scores(&self) -> HashMap<String, IaaScore> {
        self.images.iter().map(|s| (s.id.clone(), s.iaa.clone())).collect()
    }

    /// Agreement values split into `(benign, malignant)`.
    pub fn iaa_by_class(&self) -> (Vec<f64>, Vec<f64>) {
        let mut out = (Vec::new(), Vec::new());
        for s in &self.images {
            if s.malignant { &mut out.1 } else { &mut out.0 }.push(s.iaa.value);
        }
        out
    }

    /// Manifest records for the layout written by [`SynthDataset::write_to_dir`].
    pub fn records(&self, dir: &Path) -> Vec<ImageRecord> {
        self.images
            .iter()
            .map(|s| ImageRecord {
                image_id: s.id.clone(),
                image_path: dir.join("images").join(format!("{}.png", s.id)),
                diagnosis: if s.malignant { "melanoma" } else { "nevus" }.to_string(),
                malignant: s.malignant,
                masks: s
                    .annotations
                    .iter()
                    .enumerate()
                    .map(|(j, a)| MaskRecord {
                        mask_path: dir.join("masks").join(format!("{}_{j}.png", s.id)),
                        annotator_id: a.annotator_id.clone(),
                        tool: a.tool,
                        skill: a.skill,
                    })
                    .collect(),
            })
            .collect()
    }

    /// Stratified train/valid/test examples.
    pub fn fold_data(&self, ratios: SplitRatios, seed: u64) -> Result<FoldData> {
        let split = stratified_split(&self.records(Path::new("")), &self.iaa_scores(), ratios, seed)?;
        let folds: HashMap<String, Fold> = split.into_iter().map(|a| (a.image_id, a.fold)).collect();
        Ok(FoldData::from_split(self.examples(), &folds))
    }

    /// Writes images, masks and a `manifest.json` under `dir`, returning the records.
    pub fn write_to_dir(&self, dir: &Path) -> Result<Vec<ImageRecord>> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| Error::Io { path, source }
        };
        for sub in ["images", "masks"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(io(&p))?;
        }
        let records = self.records(dir);
        for (s, rec) in self.images.iter().zip(&records) {
            let pixels: Vec<u8> = s.image.iter().map(|v| (v * 255.0).round() as u8).collect();
            image::GrayImage::from_raw(self.side as u32, self.side as u32, pixels)
                .expect("buffer matches dimensions")
                .save(&rec.image_path)
                .map_err(|source| Error::Image {
                    path: rec.image_path.clone(),
                    source,
                })?;
            for (a, m) in s.annotations.iter().zip(&rec.masks) {
                a.mask.save(&m.mask_path)?;
            }
        }
        let manifest = dir.join("manifest.json");
        let json = iaa_core::dataset::manifest_to_json(&records, dir)?;
        std::fs::write(&manifest, json).map_err(io(&manifest))?;
        Ok(records)
    }
}
