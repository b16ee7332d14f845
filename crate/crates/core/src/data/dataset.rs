//! Synthetic dataset generation and loading.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::prior::{crop_partial, random_direction, simulate_prior, PriorBias};
use super::shapes::{gen_shape, ShapeFamily, ShapeSpec};
use crate::error::{Error, Result};
use crate::geom::io::{read_csv, write_csv};
use crate::geom::PointCloud;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// One training or evaluation instance.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTriple {
    pub id: String,
    pub family: ShapeFamily,
    pub partial: PointCloud,
    pub prior: PointCloud,
    pub gt: PointCloud,
    pub crop_direction: [f64; 3],
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub families: Vec<ShapeFamily>,
    pub master_seed: u64,
    pub bias: PriorBias,
    /// Partial point count `M`.
    pub m: usize,
    /// Ground-truth point count `N`.
    pub n: usize,
    /// Prior point count `N_g`.
    pub n_g: usize,
    pub keep_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_samples: 200,
            families: ShapeFamily::ALL.to_vec(),
            master_seed: 0,
            bias: PriorBias::default_profile(),
            m: 256,
            n: 256,
            n_g: 256,
            keep_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub partial: String,
    pub prior: String,
    pub gt: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub family: ShapeFamily,
    pub files: SampleFiles,
    pub crop_direction: [f64; 3],
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub master_seed: u64,
    pub samples: Vec<SampleEntry>,
}

/// SplitMix64 finalizer; decorrelates per-sample seeds from the master seed.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_id(family: ShapeFamily, index: usize) -> String {
    format!("{}-{index:05}", family.name())
}

fn id_hash(id: &str) -> [u8; 32] {
    Sha256::digest(id.as_bytes()).into()
}

/// Ranks ids by SHA-256 and sends the lowest 10% (rounded) to validation,
/// so the split is a pure function of the ids and the sizes are exact.
pub fn assign_splits(ids: &[String]) -> Vec<Split> {
    let n_val = (ids.len() as f64 * 0.1).round() as usize;
    let mut ranked: Vec<(usize, [u8; 32])> = ids.iter().map(|id| id_hash(id)).enumerate().collect();
    ranked.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut out = vec![Split::Train; ids.len()];
    for &(i, _) in ranked.iter().take(n_val) {
        out[i] = Split::Val;
    }
    out
}

/// Generates sample `index` of a dataset; a pure function of the config.
pub fn gen_sample(cfg: &DatasetConfig, index: usize, split: Split) -> Result<SampleTriple> {
    if cfg.families.is_empty() {
        return Err(Error::invalid("dataset needs at least one shape family"));
    }
    let family = cfg.families[index % cfg.families.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.master_seed ^ mix(index as u64)));
    let spec = ShapeSpec::random(family, &mut rng);
    let gt = gen_shape(&spec, cfg.n, &mut rng)?;
    let crop_direction = random_direction(&mut rng);
    let partial = crop_partial(&gt, crop_direction, cfg.keep_fraction, cfg.m, &mut rng)?;
    let prior_seed: u64 = rng.random();
    let prior = simulate_prior(&gt, &cfg.bias, cfg.n_g, &mut ChaCha8Rng::seed_from_u64(prior_seed))?;
    Ok(SampleTriple {
        id: sample_id(family, index),
        family,
        partial,
        prior,
        gt,
        crop_direction,
        split,
    })
}

pub fn generate(cfg: &DatasetConfig) -> Result<Vec<SampleTriple>> {
    if cfg.n_samples == 0 {
        return Err(Error::invalid("dataset needs at least one sample"));
    }
    if cfg.families.is_empty() {
        return Err(Error::invalid("dataset needs at least one shape family"));
    }
    let ids: Vec<String> = (0..cfg.n_samples)
        .map(|i| sample_id(cfg.families[i % cfg.families.len()], i))
        .collect();
    let splits = assign_splits(&ids);
    (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| gen_sample(cfg, i, splits[i]))
        .collect()
}

/// Writes one CSV per cloud under `clouds/` and the manifest last.
pub fn build_dataset(cfg: &DatasetConfig, out: &Path) -> Result<Manifest> {
    let samples = generate(cfg)?;
    let clouds = out.join("clouds");
    fs::create_dir_all(&clouds).map_err(|e| Error::io(&clouds, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in &samples {
        let files = SampleFiles {
            partial: format!("clouds/{}_partial.csv", s.id),
            prior: format!("clouds/{}_prior.csv", s.id),
            gt: format!("clouds/{}_gt.csv", s.id),
        };
        write_csv(&s.partial, &out.join(&files.partial))?;
        write_csv(&s.prior, &out.join(&files.prior))?;
        write_csv(&s.gt, &out.join(&files.gt))?;
        entries.push(SampleEntry {
            id: s.id.clone(),
            family: s.family,
            files,
            crop_direction: s.crop_direction,
            split: s.split,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        master_seed: cfg.master_seed,
        samples: entries,
    };
    let path = out.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::format(
            &path,
            format!("unsupported manifest version {}", m.version),
        ));
    }
    Ok(m)
}

/// A loaded dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub samples: Vec<SampleTriple>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        let samples = manifest
            .samples
            .iter()
            .map(|e| {
                Ok(SampleTriple {
                    id: e.id.clone(),
                    family: e.family,
                    partial: read_csv(&dir.join(&e.files.partial))?,
                    prior: read_csv(&dir.join(&e.files.prior))?,
                    gt: read_csv(&dir.join(&e.files.gt))?,
                    crop_direction: e.crop_direction,
                    split: e.split,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            root: dir.to_path_buf(),
            manifest,
            samples,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&SampleTriple> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }
}
