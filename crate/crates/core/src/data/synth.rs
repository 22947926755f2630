use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::record::{ComponentRecord, Label};
use crate::error::{Error, Result};

/// Parameters of the synthetic component generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub components_per_subject: usize,
    pub grid: [usize; 3],
    pub timecourse_len: usize,
    pub artifact_fraction: f64,
    /// Standard deviation of the additive Gaussian noise, relative to the
    /// unit-scale clean pattern.
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 394,
            components_per_subject: 20,
            grid: [45, 54, 45],
            timecourse_len: 1200,
            artifact_fraction: 0.7,
            noise_level: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.components_per_subject == 0 {
            return Err(Error::Config(
                "subject and component counts must be positive".into(),
            ));
        }
        if self.grid.iter().any(|&e| e < 4) {
            return Err(Error::Config(format!(
                "grid {:?} needs at least 4 voxels per axis",
                self.grid
            )));
        }
        if self.timecourse_len < 16 {
            return Err(Error::Config(
                "timecourse length must be at least 16".into(),
            ));
        }
        if !(self.artifact_fraction > 0.0 && self.artifact_fraction < 1.0) {
            return Err(Error::Config(format!(
                "artifact fraction {} must lie in (0, 1)",
                self.artifact_fraction
            )));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::Config(
                "noise level must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactMap {
    /// Activation hugging the mask boundary.
    Rim,
    /// Isolated voxels scattered through the mask.
    Speckle,
    /// One or two adjacent slices lit across the mask.
    SliceBand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactSeries {
    Spikes,
    HighFrequency,
    Sawtooth,
}

const ARTIFACT_MAPS: [ArtifactMap; 3] = [
    ArtifactMap::Rim,
    ArtifactMap::Speckle,
    ArtifactMap::SliceBand,
];
const ARTIFACT_SERIES: [ArtifactSeries; 3] = [
    ArtifactSeries::Spikes,
    ArtifactSeries::HighFrequency,
    ArtifactSeries::Sawtooth,
];

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Normalized ellipsoidal radius per voxel (≤ 1 inside the brain mask).
pub fn brain_mask(grid: [usize; 3]) -> Vec<f64> {
    let [nx, ny, nz] = grid;
    let radius = |i: usize, n: usize| (i as f64 + 0.5 - n as f64 / 2.0) / (0.45 * n as f64);
    let mut out = Vec::with_capacity(nx * ny * nz);
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                out.push(
                    (radius(x, nx).powi(2) + radius(y, ny).powi(2) + radius(z, nz).powi(2)).sqrt(),
                );
            }
        }
    }
    out
}

fn add_noise<R: Rng + ?Sized>(map: &mut [f64], mask: &[f64], level: f64, rng: &mut R) {
    for (v, &r) in map.iter_mut().zip(mask) {
        if r <= 1.0 {
            *v += level * normal(rng);
        }
    }
}

/// One to three Gaussian blobs inside the mask.
pub fn signal_map<R: Rng + ?Sized>(
    grid: [usize; 3],
    mask: &[f64],
    noise: f64,
    rng: &mut R,
) -> Vec<f64> {
    let [nx, ny, nz] = grid;
    let smallest = nx.min(ny).min(nz) as f64;
    let blobs: Vec<([f64; 3], f64, f64)> = (0..rng.gen_range(1..=3))
        .map(|_| {
            // rejection-sample a centre well inside the ellipsoid
            let centre = loop {
                let u = [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0f64),
                ];
                if u.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                    break [
                        nx as f64 / 2.0 + 0.3 * nx as f64 * u[0],
                        ny as f64 / 2.0 + 0.3 * ny as f64 * u[1],
                        nz as f64 / 2.0 + 0.3 * nz as f64 * u[2],
                    ];
                }
            };
            (
                centre,
                rng.gen_range(0.06..0.12) * smallest,
                rng.gen_range(0.6..1.0),
            )
        })
        .collect();
    let mut map = Vec::with_capacity(mask.len());
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let p = [x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5];
                let v: f64 = blobs
                    .iter()
                    .map(|(c, s, a)| {
                        let d2: f64 = (0..3).map(|k| (p[k] - c[k]).powi(2)).sum();
                        a * (-d2 / (2.0 * s * s)).exp()
                    })
                    .sum();
                map.push(v);
            }
        }
    }
    add_noise(&mut map, mask, noise, rng);
    map
}

pub fn artifact_map<R: Rng + ?Sized>(
    kind: ArtifactMap,
    grid: [usize; 3],
    mask: &[f64],
    noise: f64,
    rng: &mut R,
) -> Vec<f64> {
    let [nx, ny, nz] = grid;
    let mut map = vec![0.0; mask.len()];
    match kind {
        ArtifactMap::Rim => {
            let (fx, fy, phase) = (
                rng.gen_range(1.0..3.0),
                rng.gen_range(1.0..3.0),
                rng.gen_range(0.0..2.0 * PI),
            );
            let inner = rng.gen_range(0.8..0.88);
            let mut i = 0;
            for x in 0..nx {
                for y in 0..ny {
                    for _ in 0..nz {
                        let r = mask[i];
                        if r <= 1.0 && r >= inner {
                            let ax = x as f64 / nx as f64;
                            let ay = y as f64 / ny as f64;
                            map[i] = 0.6 + 0.4 * (2.0 * PI * (fx * ax + fy * ay) + phase).sin();
                        }
                        i += 1;
                    }
                }
            }
        }
        ArtifactMap::Speckle => {
            let density = rng.gen_range(0.02..0.06);
            for (v, &r) in map.iter_mut().zip(mask) {
                if r <= 1.0 && rng.gen_bool(density) {
                    *v = 2.0 * normal(rng);
                }
            }
        }
        ArtifactMap::SliceBand => {
            let axis = rng.gen_range(0..3);
            let n = grid[axis];
            let start = rng.gen_range(n / 5..(4 * n / 5).max(n / 5 + 1));
            let thickness = rng.gen_range(1..=2);
            let mut i = 0;
            for x in 0..nx {
                for y in 0..ny {
                    for z in 0..nz {
                        let c = [x, y, z][axis];
                        if mask[i] <= 1.0 && c >= start && c < start + thickness {
                            map[i] = 1.0;
                        }
                        i += 1;
                    }
                }
            }
        }
    }
    add_noise(&mut map, mask, noise, rng);
    map
}

fn unit_scale(mut x: Vec<f64>) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(1e-12);
    x.iter_mut().for_each(|v| *v = (*v - mean) / std);
    x
}

fn with_noise<R: Rng + ?Sized>(x: Vec<f64>, noise: f64, rng: &mut R) -> Vec<f64> {
    unit_scale(x)
        .into_iter()
        .map(|v| v + noise * normal(rng))
        .collect()
}

/// Sum of three to six sinusoids between 0.01 and 0.1 cycles per sample.
pub fn signal_timecourse<R: Rng + ?Sized>(len: usize, noise: f64, rng: &mut R) -> Vec<f64> {
    let tones: Vec<(f64, f64, f64)> = (0..rng.gen_range(3..=6))
        .map(|_| {
            (
                rng.gen_range(0.01..0.1),
                rng.gen_range(0.5..1.0),
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let x = (0..len)
        .map(|t| {
            tones
                .iter()
                .map(|(f, a, p)| a * (2.0 * PI * f * t as f64 + p).sin())
                .sum()
        })
        .collect();
    with_noise(x, noise, rng)
}

pub fn artifact_timecourse<R: Rng + ?Sized>(
    kind: ArtifactSeries,
    len: usize,
    noise: f64,
    rng: &mut R,
) -> Vec<f64> {
    let x: Vec<f64> = match kind {
        ArtifactSeries::Spikes => {
            let mut x = vec![0.0; len];
            let count = rng.gen_range(3..=10).min(len);
            for _ in 0..count {
                let at = rng.gen_range(0..len);
                let amp = rng.gen_range(4.0..8.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                for (k, v) in x[at..].iter_mut().take(4).enumerate() {
                    *v += amp * (-(k as f64)).exp();
                }
            }
            x
        }
        ArtifactSeries::HighFrequency => {
            let (f, p) = (rng.gen_range(0.2..0.45), rng.gen_range(0.0..2.0 * PI));
            let (f2, p2) = (rng.gen_range(0.2..0.45), rng.gen_range(0.0..2.0 * PI));
            (0..len)
                .map(|t| {
                    (2.0 * PI * f * t as f64 + p).sin()
                        + 0.5 * (2.0 * PI * f2 * t as f64 + p2).sin()
                })
                .collect()
        }
        ArtifactSeries::Sawtooth => {
            let period = rng.gen_range(80.0..300.0);
            let offset = rng.gen_range(0.0..period);
            let slope = rng.gen_range(-1.0..1.0) / len as f64;
            (0..len)
                .map(|t| {
                    let phase = ((t as f64 + offset) / period).fract();
                    2.0 * phase - 1.0 + slope * t as f64
                })
                .collect()
        }
    };
    with_noise(x, noise, rng)
}

/// Synthetic labelled components, one independent random stream per subject.
/// Subjects are named `sub-0001`, `sub-0002`, and so on.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<ComponentRecord>> {
    config.validate()?;
    let mask = brain_mask(config.grid);
    let per_subject: Vec<Vec<ComponentRecord>> = (0..config.n_subjects)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(s as u64 + 1);
            (0..config.components_per_subject)
                .map(|c| {
                    let label = if rng.gen_bool(config.artifact_fraction) {
                        Label::Artifact
                    } else {
                        Label::Signal
                    };
                    let (map, series) = match label {
                        Label::Signal => (
                            signal_map(config.grid, &mask, config.noise_level, &mut rng),
                            signal_timecourse(config.timecourse_len, config.noise_level, &mut rng),
                        ),
                        Label::Artifact => {
                            let m = *ARTIFACT_MAPS.choose(&mut rng).expect("non-empty");
                            let t = *ARTIFACT_SERIES.choose(&mut rng).expect("non-empty");
                            (
                                artifact_map(m, config.grid, &mask, config.noise_level, &mut rng),
                                artifact_timecourse(
                                    t,
                                    config.timecourse_len,
                                    config.noise_level,
                                    &mut rng,
                                ),
                            )
                        }
                    };
                    ComponentRecord::new(
                        format!("sub-{:04}", s + 1),
                        c as u32,
                        label,
                        &map,
                        &series,
                    )
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_subject.into_iter().flatten().collect())
}
