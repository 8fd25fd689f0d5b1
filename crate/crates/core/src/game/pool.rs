use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use super::ppm::{self, box_downsample};
use super::{GameError, Result};

pub const IMAGE_SIDE: usize = 32;
pub const MAX_SYNTHETIC: usize = 32;

pub const ATTRIBUTE_NAMES: [&str; 5] = ["green_background", "blond_hair", "glasses", "hat", "light_face"];

/// Which part of a pool an episode may draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
    All,
}

/// Ordered set of distinct square RGB images with ids `0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePool {
    side: usize,
    images: Vec<Vec<f32>>,
    names: Vec<String>,
    attributes: Option<Vec<[bool; 5]>>,
    train_mask: Option<Vec<bool>>,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub id: usize,
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attributes: Option<[bool; 5]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub side: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attribute_names: Option<Vec<String>>,
    pub images: Vec<ManifestEntry>,
}

impl ImagePool {
    /// Builds a pool from raw `side x side x 3` images in `[0, 1]`.
    pub fn from_images(side: usize, images: Vec<Vec<f32>>) -> Result<Self> {
        if images.is_empty() {
            return Err(GameError::Invalid("empty image pool".into()));
        }
        if let Some(bad) = images.iter().position(|im| im.len() != side * side * 3) {
            return Err(GameError::Invalid(format!("image {bad} is not {side}x{side} RGB")));
        }
        let names = (0..images.len()).map(|i| format!("{i:02}")).collect();
        Ok(Self {
            side,
            images,
            names,
            attributes: None,
            train_mask: None,
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Values per image (`side * side * 3`).
    pub fn pixels(&self) -> usize {
        self.side * self.side * 3
    }

    pub fn image(&self, id: usize) -> &[f32] {
        &self.images[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn attributes(&self, id: usize) -> Option<[bool; 5]> {
        self.attributes.as_ref().map(|a| a[id])
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn is_train(&self, id: usize) -> Option<bool> {
        self.train_mask.as_ref().map(|m| m[id])
    }

    /// Marks a seed-deterministic `round(fraction * len)` of the ids as train-only.
    pub fn with_split(mut self, fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(GameError::Invalid(format!("split fraction {fraction} outside [0, 1]")));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut SplitMix64::seed_from_u64(seed));
        let n_train = (fraction * self.len() as f64).round() as usize;
        let mut mask = vec![false; self.len()];
        for &id in &order[..n_train] {
            mask[id] = true;
        }
        self.train_mask = Some(mask);
        Ok(self)
    }

    pub fn eligible(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&id| match (split, &self.train_mask) {
                (Split::All, _) | (_, None) => true,
                (Split::Train, Some(m)) => m[id],
                (Split::Eval, Some(m)) => !m[id],
            })
            .collect()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            side: self.side,
            attribute_names: self
                .attributes
                .as_ref()
                .map(|_| ATTRIBUTE_NAMES.iter().map(|s| s.to_string()).collect()),
            images: (0..self.len())
                .map(|id| ManifestEntry {
                    id,
                    name: self.names[id].clone(),
                    attributes: self.attributes(id),
                    train: self.is_train(id),
                })
                .collect(),
        }
    }

    /// Writes `NN.ppm` per image plus `manifest.json`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for id in 0..self.len() {
            ppm::write(&dir.join(format!("{}.ppm", self.names[id])), self.side, self.side, &self.images[id])?;
        }
        let json = serde_json::to_string_pretty(&self.manifest())
            .map_err(|e| GameError::Invalid(e.to_string()))?;
        std::fs::write(dir.join("manifest.json"), json + "\n")?;
        Ok(())
    }
}

type Rgb = [f32; 3];

const SKY: Rgb = [0.55, 0.75, 0.95];
const MEADOW: Rgb = [0.60, 0.90, 0.55];
const HAT: Rgb = [0.85, 0.10, 0.10];
const BLOND: Rgb = [0.95, 0.85, 0.35];
const BLACK_HAIR: Rgb = [0.10, 0.08, 0.05];
const LIGHT_SKIN: Rgb = [0.98, 0.85, 0.75];
const DARK_SKIN: Rgb = [0.55, 0.38, 0.25];
const FRAME: Rgb = [0.20, 0.20, 0.20];
const EYE: Rgb = [0.05, 0.05, 0.05];
const MOUTH: Rgb = [0.60, 0.15, 0.15];
const SHIRT: Rgb = [0.30, 0.30, 0.65];

fn fill(img: &mut [f32], rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>, c: Rgb) {
    for y in rows {
        for x in cols.clone() {
            img[(y * IMAGE_SIDE + x) * 3..(y * IMAGE_SIDE + x) * 3 + 3].copy_from_slice(&c);
        }
    }
}

/// Renders one 32x32 character. Every attribute owns a pixel region that
/// no other attribute paints, so distinct vectors give distinct images.
fn render(a: [bool; 5]) -> Vec<f32> {
    let [green_bg, blond, glasses, hat, light_face] = a;
    let mut img = vec![0.0f32; IMAGE_SIDE * IMAGE_SIDE * 3];
    fill(&mut img, 0..=31, 0..=31, if green_bg { MEADOW } else { SKY });
    if hat {
        fill(&mut img, 1..=4, 8..=23, HAT);
    }
    fill(&mut img, 5..=9, 8..=23, if blond { BLOND } else { BLACK_HAIR });
    fill(&mut img, 10..=27, 9..=22, if light_face { LIGHT_SKIN } else { DARK_SKIN });
    fill(&mut img, 14..=15, 12..=13, EYE);
    fill(&mut img, 14..=15, 18..=19, EYE);
    fill(&mut img, 23..=23, 13..=18, MOUTH);
    if glasses {
        for (x0, x1) in [(11, 14), (17, 20)] {
            fill(&mut img, 13..=13, x0..=x1, FRAME);
            fill(&mut img, 16..=16, x0..=x1, FRAME);
            fill(&mut img, 14..=15, x0..=x0, FRAME);
            fill(&mut img, 14..=15, x1..=x1, FRAME);
        }
        fill(&mut img, 14..=14, 15..=16, FRAME);
    }
    fill(&mut img, 28..=31, 6..=25, SHIRT);
    img
}

fn attribute_vector(bits: usize) -> [bool; 5] {
    std::array::from_fn(|i| bits >> i & 1 == 1)
}

/// Deterministic stand-in for the game's artwork: the first `count` of the
/// 32 attribute vectors, in an order shuffled by `seed`.
pub fn generate_synthetic_pool(count: usize, seed: u64) -> Result<ImagePool> {
    if count > MAX_SYNTHETIC {
        return Err(GameError::AttributeSpaceExhausted(count));
    }
    let mut order: Vec<usize> = (0..MAX_SYNTHETIC).collect();
    order.shuffle(&mut SplitMix64::seed_from_u64(seed));
    let attrs: Vec<[bool; 5]> = order[..count].iter().map(|&b| attribute_vector(b)).collect();
    let images = attrs.iter().map(|&a| render(a)).collect();
    let mut pool = ImagePool::from_images(IMAGE_SIDE, images)?;
    pool.attributes = Some(attrs);
    Ok(pool)
}

/// Loads every `*.ppm` in `dir` (sorted by file name), box-downsampled to 32x32.
/// Duplicate images after downsampling are kept and reported in `warnings`.
pub fn load_image_pool(dir: &Path, split_fraction: Option<f64>, seed: u64) -> Result<ImagePool> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| GameError::Image {
            path: dir.display().to_string(),
            reason: e.to_string(),
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")))
        .collect();
    files.sort();
    if files.len() < 2 {
        return Err(GameError::Image {
            path: dir.display().to_string(),
            reason: format!("need at least 2 PPM images, found {}", files.len()),
        });
    }
    let mut images = Vec::with_capacity(files.len());
    let mut names = Vec::with_capacity(files.len());
    for f in &files {
        let img = ppm::read(f)?;
        let small = box_downsample(&img, IMAGE_SIDE).map_err(|e| GameError::Image {
            path: f.display().to_string(),
            reason: e.to_string(),
        })?;
        images.push(small);
        names.push(
            f.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
    }
    let mut warnings = Vec::new();
    for i in 0..images.len() {
        for j in 0..i {
            if images[i] == images[j] {
                warnings.push(format!("{} duplicates {} after downsampling", names[i], names[j]));
            }
        }
    }
    let mut pool = ImagePool::from_images(IMAGE_SIDE, images)?;
    pool.names = names;
    pool.warnings = warnings;
    match split_fraction {
        Some(f) => pool.with_split(f, seed),
        None => Ok(pool),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_pool_is_deterministic_and_distinct() {
        let a = generate_synthetic_pool(24, 7).unwrap();
        let b = generate_synthetic_pool(24, 7).unwrap();
        assert_eq!(a, b);
        for i in 0..a.len() {
            for j in 0..i {
                assert_ne!(a.image(i), a.image(j));
                assert_ne!(a.attributes(i), a.attributes(j));
            }
        }
        assert!(a.image(0).iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a, generate_synthetic_pool(24, 8).unwrap());
    }

    #[test]
    fn each_attribute_changes_pixels() {
        let base = render([false; 5]);
        for bit in 0..5 {
            let mut a = [false; 5];
            a[bit] = true;
            assert_ne!(render(a), base, "attribute {bit}");
        }
    }

    #[test]
    fn synthetic_limit() {
        assert!(generate_synthetic_pool(32, 1).is_ok());
        assert!(matches!(
            generate_synthetic_pool(33, 1),
            Err(GameError::AttributeSpaceExhausted(33))
        ));
    }

    #[test]
    fn split_counts_and_determinism() {
        let images: Vec<Vec<f32>> = (0..100).map(|i| vec![i as f32 / 100.0; 3]).collect();
        let pool = ImagePool::from_images(1, images).unwrap();
        let a = pool.clone().with_split(0.9, 3).unwrap();
        let b = pool.with_split(0.9, 3).unwrap();
        assert_eq!(a.eligible(Split::Train).len(), 90);
        assert_eq!(a.eligible(Split::Eval).len(), 10);
        assert_eq!(a.eligible(Split::All).len(), 100);
        assert_eq!(a.eligible(Split::Train), b.eligible(Split::Train));
    }

    #[test]
    fn loads_directory_of_solid_images() {
        let dir = tempfile::tempdir().unwrap();
        let red: Vec<f32> = [1.0, 0.0, 0.0].repeat(64 * 64);
        let teal: Vec<f32> = [0.0, 0.4, 0.4].repeat(64 * 64);
        ppm::write(&dir.path().join("b.ppm"), 64, 64, &teal).unwrap();
        ppm::write(&dir.path().join("a.ppm"), 64, 64, &red).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let pool = load_image_pool(dir.path(), None, 0).unwrap();
        assert_eq!(pool.len(), 2);
        assert_eq!(pool.name(0), "a");
        assert!(pool.image(0).chunks(3).all(|p| p == [1.0, 0.0, 0.0]));
        let teal_byte = (0.4f32 * 255.0).round() / 255.0;
        assert!(pool.image(1).chunks(3).all(|p| p == [0.0, teal_byte, teal_byte]));
        assert!(pool.warnings().is_empty());
    }

    #[test]
    fn loader_errors_and_duplicate_warnings() {
        let dir = tempfile::tempdir().unwrap();
        let grey = vec![0.5; 32 * 32 * 3];
        ppm::write(&dir.path().join("x.ppm"), 32, 32, &grey).unwrap();
        assert!(load_image_pool(dir.path(), None, 0).is_err());
        ppm::write(&dir.path().join("y.ppm"), 32, 32, &grey).unwrap();
        let pool = load_image_pool(dir.path(), None, 0).unwrap();
        assert_eq!(pool.warnings().len(), 1);
        std::fs::write(dir.path().join("z.ppm"), b"garbage").unwrap();
        let err = load_image_pool(dir.path(), None, 0).unwrap_err().to_string();
        assert!(err.contains("z.ppm"), "{err}");
    }

    #[test]
    fn export_writes_images_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let pool = generate_synthetic_pool(3, 1).unwrap();
        pool.export(dir.path()).unwrap();
        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest.images.len(), 3);
        assert_eq!(manifest.images[1].attributes, pool.attributes(1));
        let back = load_image_pool(dir.path(), None, 0).unwrap();
        for id in 0..3 {
            for (a, b) in back.image(id).iter().zip(pool.image(id)) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }
}
