use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Class of a component; artifact is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Signal = 0,
    Artifact = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Signal),
            1 => Ok(Label::Artifact),
            other => Err(Error::Label(other as f64)),
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn is_artifact(self) -> bool {
        self == Label::Artifact
    }
}

/// One ICA component. The spatial map is stored standardized and flattened
/// in x-major order; the power spectrum is derived from the timecourse.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentRecord {
    pub subject_id: String,
    pub component_id: u32,
    pub label: Label,
    pub spatial_map: Vec<f32>,
    pub timecourse: Vec<f32>,
    pub power_spectrum: Vec<f32>,
}

impl ComponentRecord {
    /// Standardizes `spatial_map` and derives the power spectrum.
    pub fn new(
        subject_id: String,
        component_id: u32,
        label: Label,
        spatial_map: &[f64],
        timecourse: &[f64],
    ) -> Result<Self> {
        let map = standardize(spatial_map)?;
        let spectrum = power_spectrum(timecourse)?;
        Ok(Self {
            subject_id,
            component_id,
            label,
            spatial_map: map.iter().map(|&v| v as f32).collect(),
            timecourse: timecourse.iter().map(|&v| v as f32).collect(),
            power_spectrum: spectrum.iter().map(|&v| v as f32).collect(),
        })
    }
}

/// `(x - mean) / std` with the population standard deviation, computed in
/// double precision.
pub fn standardize<T: Scalar>(x: &[T]) -> Result<Vec<T>> {
    if x.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "cannot standardize {} value(s)",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mean = x.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
    let var = x
        .iter()
        .map(|v| (v.to_f64_lossy() - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if !(std > 1e-12 * (1.0 + mean.abs())) {
        return Err(Error::DegenerateInput(
            "constant input has no spread".into(),
        ));
    }
    Ok(x.iter()
        .map(|v| T::from_f64_lossy((v.to_f64_lossy() - mean) / std))
        .collect())
}

/// Periodogram of the standardized series: `|X_k|² / T` for `k = 1..=T/2`.
pub fn power_spectrum<T: Scalar>(timecourse: &[T]) -> Result<Vec<T>> {
    let t = timecourse.len();
    if t < 4 {
        return Err(Error::DegenerateInput(format!(
            "timecourse of length {t} is too short"
        )));
    }
    let z = standardize(timecourse)?;
    let mut buf: Vec<Complex<f64>> = z
        .iter()
        .map(|v| Complex::new(v.to_f64_lossy(), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(t).process(&mut buf);
    Ok(buf[1..=t / 2]
        .iter()
        .map(|c| T::from_f64_lossy(c.norm_sqr() / t as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardize_example() {
        let z = standardize(&[1.0f64, 2.0, 3.0]).unwrap();
        for (a, b) in z.iter().zip([-1.224744871391589, 0.0, 1.224744871391589]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_and_short_inputs_are_degenerate() {
        assert!(matches!(
            standardize(&[4.0f64; 5]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            standardize(&[4.0f64]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            power_spectrum(&[1.0f64; 16]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            power_spectrum(&[1.0f64, 2.0, 3.0]),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn labels_round_trip() {
        assert_eq!(Label::from_u8(1).unwrap(), Label::Artifact);
        assert_eq!(Label::Signal.as_u8(), 0);
        assert!(Label::from_u8(2).is_err());
    }
}
