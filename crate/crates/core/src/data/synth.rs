//! Synthetic embeddings with planted authenticity, pattern and content
//! signals along orthonormal directions.
//!
//! A fake from generator `g` with content `c` is
//! `a·u_auth + p·u_pattern[g] + c·u_content[c] + σ·ε`; a real from camera
//! source `r` is `−a·u_auth + p·u_camera[r] + c·u_content[c] + σ·ε`. The
//! camera directions are disjoint from the generator directions, so "has a
//! pattern" says nothing about authenticity; only the pattern identity leaks
//! the source.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{MaflError, Result};
use crate::numerics::rng::{streams, RngStream};
use crate::numerics::Matrix;

use super::bundle::{EmbeddingBundle, SampleLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub dim: usize,
    /// Samples per (source, content) cell.
    pub n_per_cell: usize,
    pub k_pattern: usize,
    pub k_content: usize,
    /// Number of real "camera" sources.
    pub k_real_sources: usize,
    pub auth_strength: f64,
    pub pattern_strength: f64,
    pub content_strength: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            n_per_cell: 200,
            k_pattern: 4,
            k_content: 5,
            k_real_sources: 4,
            auth_strength: 2.0,
            pattern_strength: 3.0,
            content_strength: 1.0,
            noise_sigma: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn directions_needed(&self) -> usize {
        1 + self.k_pattern + self.k_content + self.k_real_sources
    }

    pub fn cells(&self) -> usize {
        (self.k_pattern + self.k_real_sources) * self.k_content
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < self.directions_needed() {
            return Err(MaflError::Config(format!(
                "dim must be >= 1 + k_pattern + k_content + k_real_sources = {}, got {}",
                self.directions_needed(),
                self.dim
            )));
        }
        if self.k_pattern < 1 || self.k_content < 1 || self.k_real_sources < 1 {
            return Err(MaflError::Config(
                "k_pattern, k_content and k_real_sources must be >= 1".into(),
            ));
        }
        if self.n_per_cell == 0 {
            return Err(MaflError::Config("n_per_cell must be >= 1".into()));
        }
        let strengths = [
            ("auth_strength", self.auth_strength),
            ("pattern_strength", self.pattern_strength),
            ("content_strength", self.content_strength),
            ("noise_sigma", self.noise_sigma),
        ];
        for (name, v) in strengths {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(MaflError::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Row `k` of the orthonormal DCT-II basis of `R^dim`.
pub fn dct_direction(dim: usize, k: usize) -> Vec<f64> {
    let scale = if k == 0 {
        (1.0 / dim as f64).sqrt()
    } else {
        (2.0 / dim as f64).sqrt()
    };
    (0..dim)
        .map(|i| scale * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / dim as f64).cos())
        .collect()
}

/// The planted directions of a configuration.
#[derive(Debug, Clone)]
pub struct PlantedDirections {
    pub auth: Vec<f64>,
    pub pattern: Vec<Vec<f64>>,
    pub content: Vec<Vec<f64>>,
    pub camera: Vec<Vec<f64>>,
}

impl PlantedDirections {
    pub fn new(cfg: &SynthConfig) -> Self {
        let mut k = 0;
        let mut next = || {
            let d = dct_direction(cfg.dim, k);
            k += 1;
            d
        };
        let auth = next();
        let pattern = (0..cfg.k_pattern).map(|_| next()).collect();
        let content = (0..cfg.k_content).map(|_| next()).collect();
        let camera = (0..cfg.k_real_sources).map(|_| next()).collect();
        Self {
            auth,
            pattern,
            content,
            camera,
        }
    }
}

/// Generates `(k_pattern + k_real_sources) · k_content · n_per_cell` samples:
/// generator sources first, then real sources, each cycling through contents.
pub fn synth_generate(cfg: &SynthConfig) -> Result<EmbeddingBundle> {
    cfg.validate()?;
    let dirs = PlantedDirections::new(cfg);
    let mut rng = RngStream::new(cfg.seed).derive(streams::SYNTH);
    let n = cfg.cells() * cfg.n_per_cell;
    let mut data = Vec::with_capacity(n * cfg.dim);
    let mut labels = Vec::with_capacity(n);
    for src in 0..cfg.k_pattern + cfg.k_real_sources {
        let fake = src < cfg.k_pattern;
        let (sign, source_dir, generator_id, source_name) = if fake {
            (1.0, &dirs.pattern[src], src as i32, format!("gen{src}"))
        } else {
            let r = src - cfg.k_pattern;
            (-1.0, &dirs.camera[r], -1, format!("real{r}"))
        };
        for content in 0..cfg.k_content {
            let mean: Vec<f64> = (0..cfg.dim)
                .map(|i| {
                    sign * cfg.auth_strength * dirs.auth[i]
                        + cfg.pattern_strength * source_dir[i]
                        + cfg.content_strength * dirs.content[content][i]
                })
                .collect();
            for _ in 0..cfg.n_per_cell {
                data.extend(mean.iter().map(|&m| (m + cfg.noise_sigma * rng.normal()) as f32));
                labels.push(SampleLabel {
                    index: labels.len(),
                    authenticity: fake as u8,
                    generator_id,
                    content_id: content as u32,
                    source_name: source_name.clone(),
                });
            }
        }
    }
    EmbeddingBundle::new(Matrix::new(n, cfg.dim, data)?, labels)
}

/// Accuracy of thresholding the projection on the authenticity direction at
/// zero: `Φ(a/σ)`.
pub fn auth_projection_accuracy(cfg: &SynthConfig) -> f64 {
    if cfg.noise_sigma == 0.0 {
        return if cfg.auth_strength > 0.0 { 1.0 } else { 0.5 };
    }
    std_normal().cdf(cfg.auth_strength / cfg.noise_sigma)
}

/// Bayes accuracy of recovering a fake's generator among `k_pattern` equally
/// likely ones: `∫ φ(z) Φ(z + p/σ)^(K−1) dz`, by composite Simpson quadrature.
pub fn bayes_pattern_accuracy(cfg: &SynthConfig) -> f64 {
    let k = cfg.k_pattern as i32;
    if cfg.noise_sigma == 0.0 {
        return if cfg.pattern_strength > 0.0 { 1.0 } else { 1.0 / k as f64 };
    }
    let d = cfg.pattern_strength / cfg.noise_sigma;
    let n = std_normal();
    let f = |z: f64| n.pdf(z) * n.cdf(z + d).powi(k - 1);
    let (lo, hi, steps) = (-12.0, 12.0, 4800);
    let h = (hi - lo) / steps as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}
