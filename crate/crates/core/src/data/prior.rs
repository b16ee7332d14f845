//! Partial crops and the simulated generative prior.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PointCloud;

/// Perturbations applied to a complete shape to imitate an image-to-3D
/// prior: misaligned pose and scale, noisy surface, hallucinated blobs and
/// missing points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorBias {
    /// Maximum rotation angle in radians about a random axis.
    pub max_rotation: f64,
    /// Per-axis scale drawn from `[lo, hi]`.
    pub scale: [f64; 2],
    /// Maximum translation length.
    pub max_translation: f64,
    pub jitter_sigma: f64,
    pub blob_prob: f64,
    /// Blob size as a fraction of the point count.
    pub blob_fraction: f64,
    pub blob_sigma: f64,
    pub dropout: f64,
}

impl PriorBias {
    pub fn default_profile() -> Self {
        Self {
            max_rotation: 15f64.to_radians(),
            scale: [0.9, 1.1],
            max_translation: 0.05,
            jitter_sigma: 0.01,
            blob_prob: 0.2,
            blob_fraction: 0.05,
            blob_sigma: 0.03,
            dropout: 0.1,
        }
    }

    pub fn zero() -> Self {
        Self {
            max_rotation: 0.0,
            scale: [1.0, 1.0],
            max_translation: 0.0,
            jitter_sigma: 0.0,
            blob_prob: 0.0,
            blob_fraction: 0.0,
            blob_sigma: 0.0,
            dropout: 0.0,
        }
    }

    /// Twice the default misalignment and noise.
    pub fn strong() -> Self {
        Self {
            max_rotation: 30f64.to_radians(),
            scale: [0.8, 1.2],
            max_translation: 0.1,
            jitter_sigma: 0.02,
            blob_prob: 0.4,
            blob_fraction: 0.08,
            blob_sigma: 0.04,
            dropout: 0.2,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default_profile()),
            "zero" => Ok(Self::zero()),
            "strong" => Ok(Self::strong()),
            _ => Err(Error::invalid(format!(
                "unknown bias profile `{name}` (expected default, zero or strong)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mags = [
            self.max_rotation,
            self.scale[0],
            self.max_translation,
            self.jitter_sigma,
            self.blob_prob,
            self.blob_fraction,
            self.blob_sigma,
            self.dropout,
        ];
        if mags.iter().any(|v| !v.is_finite() || *v < 0.0) || self.scale[1] < self.scale[0] {
            return Err(Error::invalid("prior bias magnitudes must be non-negative"));
        }
        if self.blob_prob > 1.0 || self.dropout >= 1.0 {
            return Err(Error::invalid("prior bias probabilities must be below 1"));
        }
        Ok(())
    }
}

/// Brings `pts` to exactly `m` points: a random subset when there are enough,
/// otherwise every point once plus uniform draws with replacement.
pub fn resample<R: Rng>(pts: &[[f64; 3]], m: usize, rng: &mut R) -> Result<PointCloud> {
    if pts.is_empty() {
        return Err(Error::invalid("resample: empty input"));
    }
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    idx.shuffle(rng);
    let mut out: Vec<[f64; 3]> = idx.iter().take(m).map(|&i| pts[i]).collect();
    while out.len() < m {
        out.push(pts[rng.random_range(0..pts.len())]);
    }
    PointCloud::new(out)
}

/// Keeps the `keep_fraction` of points lying lowest along `direction`
/// (ties to the lower index), then resamples to `m` points.
pub fn crop_partial<R: Rng>(
    gt: &PointCloud,
    direction: [f64; 3],
    keep_fraction: f64,
    m: usize,
    rng: &mut R,
) -> Result<PointCloud> {
    let n = (direction[0].powi(2) + direction[1].powi(2) + direction[2].powi(2)).sqrt();
    if n.is_nan() || n <= 1e-12 || !n.is_finite() {
        return Err(Error::invalid("crop_partial: direction has zero length"));
    }
    if !(keep_fraction > 0.0 && keep_fraction < 1.0) {
        return Err(Error::invalid("crop_partial: keep_fraction must be in (0, 1)"));
    }
    let dot = |p: &[f64; 3]| p[0] * direction[0] + p[1] * direction[1] + p[2] * direction[2];
    let mut order: Vec<(f64, usize)> = gt.points().iter().enumerate().map(|(i, p)| (dot(p), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let keep = ((keep_fraction * gt.len() as f64).round() as usize).clamp(1, gt.len());
    let kept: Vec<[f64; 3]> = order[..keep].iter().map(|&(_, i)| gt.get(i)).collect();
    resample(&kept, m, rng)
}

pub fn random_direction<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [0; 3].map(|_| StandardNormal.sample(rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return v.map(|c| c / n);
        }
    }
}

fn rotation(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let [x, y, z] = axis;
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Perturbs `gt` in this order: rotation, per-axis scale, translation,
/// Gaussian jitter, optional hallucinated blob, dropout, resampling to `n_g`.
pub fn simulate_prior<R: Rng>(gt: &PointCloud, bias: &PriorBias, n_g: usize, rng: &mut R) -> Result<PointCloud> {
    bias.validate()?;
    let rot = rotation(random_direction(rng), rng.random_range(0.0..=bias.max_rotation));
    let scale: [f64; 3] = [0; 3].map(|_| rng.random_range(bias.scale[0]..=bias.scale[1]));
    let t_len = rng.random_range(0.0..=bias.max_translation);
    let t = random_direction(rng).map(|c| c * t_len);
    let jitter = Normal::new(0.0, bias.jitter_sigma).map_err(|e| Error::invalid(e.to_string()))?;

    let mut pts: Vec<[f64; 3]> = gt
        .points()
        .iter()
        .map(|p| {
            let r = [0, 1, 2].map(|i| rot[i][0] * p[0] + rot[i][1] * p[1] + rot[i][2] * p[2]);
            [0, 1, 2].map(|i| r[i] * scale[i] + t[i] + jitter.sample(rng))
        })
        .collect();

    if rng.random::<f64>() < bias.blob_prob {
        let count = ((bias.blob_fraction * gt.len() as f64).round() as usize).max(1);
        let anchor = pts[rng.random_range(0..pts.len())];
        let offset = random_direction(rng).map(|c| c * 0.1);
        let spread = Normal::new(0.0, bias.blob_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for _ in 0..count {
            pts.push([0, 1, 2].map(|i| anchor[i] + offset[i] + spread.sample(rng)));
        }
    }

    let kept: Vec<[f64; 3]> = pts
        .into_iter()
        .filter(|_| rng.random::<f64>() >= bias.dropout)
        .collect();
    if kept.is_empty() {
        return Err(Error::invalid("simulate_prior: dropout removed every point"));
    }
    resample(&kept, n_g, rng)
}
