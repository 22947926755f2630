use rayon::prelude::*;

use super::io::Dataset;
use super::record::{standardize, Label};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::zoo::{Domain, InputDims, ModelInput};

/// Network inputs for every record of a dataset, laid out contiguously:
/// the standardized spatial map, the standardized timecourse, and the
/// standardized `ln(1 + periodogram)`.
#[derive(Debug, Clone)]
pub struct Features {
    pub dims: InputDims,
    pub subject_ids: Vec<String>,
    pub component_ids: Vec<u32>,
    pub labels: Vec<Label>,
    spatial: Vec<f32>,
    temporal: Vec<f32>,
    frequency: Vec<f32>,
}

impl Features {
    /// Consumes the dataset; the records' arrays are freed as they are copied.
    pub fn from_dataset(dataset: Dataset) -> Result<Self> {
        let h = &dataset.header;
        let dims = InputDims {
            spatial: h.grid,
            temporal: h.timecourse_len,
            frequency: h.timecourse_len / 2,
        };
        let n = dataset.records.len();
        let derived: Vec<(Vec<f32>, Vec<f32>)> = dataset
            .records
            .par_iter()
            .map(|r| {
                let temporal = standardize(&r.timecourse)?;
                let logged: Vec<f32> = r.power_spectrum.iter().map(|&p| p.ln_1p()).collect();
                Ok((temporal, standardize(&logged)?))
            })
            .collect::<Result<_>>()?;
        let mut out = Features {
            dims,
            subject_ids: Vec::with_capacity(n),
            component_ids: Vec::with_capacity(n),
            labels: Vec::with_capacity(n),
            spatial: Vec::with_capacity(n * h.grid.iter().product::<usize>()),
            temporal: Vec::with_capacity(n * dims.temporal),
            frequency: Vec::with_capacity(n * dims.frequency),
        };
        for (r, (t, f)) in dataset.records.into_iter().zip(derived) {
            out.subject_ids.push(r.subject_id);
            out.component_ids.push(r.component_id);
            out.labels.push(r.label);
            out.spatial.extend_from_slice(&r.spatial_map);
            out.temporal.extend_from_slice(&t);
            out.frequency.extend_from_slice(&f);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn rows(&self, domain: Domain) -> (&[f32], usize) {
        match domain {
            Domain::Spatial => (&self.spatial, self.dims.spatial.iter().product()),
            Domain::Temporal => (&self.temporal, self.dims.temporal),
            Domain::Frequency => (&self.frequency, self.dims.frequency),
        }
    }

    /// Input of record `i` for one domain.
    pub fn row(&self, domain: Domain, i: usize) -> &[f32] {
        let (data, width) = self.rows(domain);
        &data[i * width..(i + 1) * width]
    }

    /// Batch of the given records for the listed domains.
    pub fn batch<T: Scalar>(&self, records: &[usize], domains: &[Domain]) -> ModelInput<T> {
        let mut input = ModelInput::default();
        for &d in domains {
            let (data, width) = self.rows(d);
            let mut values = Vec::with_capacity(records.len() * width);
            for &i in records {
                values.extend(
                    data[i * width..(i + 1) * width]
                        .iter()
                        .map(|&v| T::from_f64_lossy(v as f64)),
                );
            }
            let mut shape = vec![records.len(), 1];
            shape.extend(self.dims.extents(d));
            input.set(
                d,
                Tensor::new(shape, values).expect("extents match the stored rows"),
            );
        }
        input
    }

    /// Labels as 0/1 targets.
    pub fn targets<T: Scalar>(&self, records: &[usize]) -> Vec<T> {
        records
            .iter()
            .map(|&i| T::from_f64_lossy(self.labels[i].as_u8() as f64))
            .collect()
    }
}
