//! Generated datasets and their on-disk layout.
//!
//! A dataset directory holds `train.tsv` and `dev.tsv` manifests with lines
//! `filename<TAB>label`, and the referenced PGM images under `images/`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pgm;
use super::render::{render_textline, Jitter};
use crate::error::{Result, ScanError};
use crate::vocab::Vocabulary;
use crate::windowing::RawImage;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: RawImage,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub charset: String,
    pub count: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
    /// Held-out size; `None` means a tenth of `count`.
    pub dev_count: Option<usize>,
    pub jitter: Jitter,
}

impl DatasetSpec {
    pub fn new(charset: &str, count: usize, min_len: usize, max_len: usize, seed: u64) -> Self {
        DatasetSpec {
            charset: charset.to_string(),
            count,
            min_len,
            max_len,
            seed,
            dev_count: None,
            jitter: Jitter::default(),
        }
    }

    pub fn dev_size(&self) -> usize {
        self.dev_count.unwrap_or(self.count / 10)
    }

    fn validate(&self) -> Result<()> {
        let vocab = Vocabulary::new(&self.charset)?;
        if let Some(c) = vocab.charset().chars().find(|&c| !super::font::supported(c)) {
            return Err(ScanError::InvalidArgument(format!("no glyph for {c:?}")));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(ScanError::InvalidArgument(format!(
                "label lengths {}..={}",
                self.min_len, self.max_len
            )));
        }
        if self.count < 2 || self.dev_size() == 0 || self.dev_size() >= self.count {
            return Err(ScanError::InvalidArgument(format!(
                "{} samples with {} held out",
                self.count,
                self.dev_size()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Random labels rendered with jitter, then split by a seeded shuffle.
pub fn gen_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let symbols: Vec<char> = spec.charset.chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let label: String = (0..len).map(|_| symbols[rng.random_range(0..symbols.len())]).collect();
        let image = render_textline(&label, rng.random(), &spec.jitter)?;
        samples.push(Sample { image, label });
    }
    samples.shuffle(&mut rng);
    let train = samples.split_off(spec.dev_size());
    Ok(Dataset { train, dev: samples })
}

fn write_split(dir: &Path, name: &str, samples: &[Sample]) -> Result<()> {
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let file = format!("images/{name}_{i:06}.pgm");
        pgm::save_image(&s.image, &dir.join(&file))?;
        manifest.push_str(&format!("{file}\t{}\n", s.label));
    }
    fs::write(dir.join(format!("{name}.tsv")), manifest)?;
    Ok(())
}

pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    write_split(dir, "train", &data.train)?;
    write_split(dir, "dev", &data.dev)
}

/// Read one split's manifest; labels are uppercased.
pub fn load_split(dir: &Path, name: &str) -> Result<Vec<Sample>> {
    let manifest = fs::read_to_string(dir.join(format!("{name}.tsv")))?;
    let mut out = Vec::new();
    for (n, line) in manifest.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (file, label) = line
            .split_once('\t')
            .ok_or_else(|| ScanError::format("manifest", format!("{name}.tsv line {}: no tab", n + 1)))?;
        if label.is_empty() {
            return Err(ScanError::format("manifest", format!("{name}.tsv line {}: empty label", n + 1)));
        }
        out.push(Sample {
            image: pgm::load_image(&dir.join(file))?,
            label: label.to_uppercase(),
        });
    }
    if out.is_empty() {
        return Err(ScanError::Empty("manifest"));
    }
    Ok(out)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    Ok(Dataset {
        train: load_split(dir, "train")?,
        dev: load_split(dir, "dev")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{ALPHANUMERIC, DIGITS};

    #[test]
    fn split_sizes_and_lengths() {
        let spec = DatasetSpec::new(DIGITS, 200, 2, 5, 1);
        let d = gen_dataset(&spec).unwrap();
        assert_eq!((d.train.len(), d.dev.len()), (180, 20));
        let all: Vec<&Sample> = d.train.iter().chain(&d.dev).collect();
        assert!(all.iter().all(|s| (2..=5).contains(&s.label.len())));
        assert!(all.iter().all(|s| s.label.chars().all(|c| DIGITS.contains(c))));
        assert_eq!(gen_dataset(&spec).unwrap(), d);
        let lens: std::collections::HashSet<usize> = all.iter().map(|s| s.label.len()).collect();
        assert_eq!(lens.len(), 4);
    }

    #[test]
    fn explicit_dev_count() {
        let mut spec = DatasetSpec::new(ALPHANUMERIC, 30, 1, 3, 2);
        spec.dev_count = Some(5);
        let d = gen_dataset(&spec).unwrap();
        assert_eq!((d.train.len(), d.dev.len()), (25, 5));
        spec.dev_count = Some(30);
        assert!(gen_dataset(&spec).is_err());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(gen_dataset(&DatasetSpec::new(DIGITS, 20, 0, 3, 0)).is_err());
        assert!(gen_dataset(&DatasetSpec::new(DIGITS, 20, 4, 3, 0)).is_err());
        assert!(gen_dataset(&DatasetSpec::new("ab", 20, 1, 3, 0)).is_err());
    }
}
