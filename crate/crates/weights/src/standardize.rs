use crate::error::{Result, WeightsError};
use crate::record::WeightRecord;

pub const STD_FLOOR: f64 = 1e-8;

/// Per-coordinate mean and (population) standard deviation over a record
/// collection.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    mean: Vec<f32>,
    std: Vec<f32>,
}

impl Standardizer {
    pub fn fit(records: &[WeightRecord]) -> Result<Self> {
        let first = records.first().ok_or_else(|| WeightsError::Layout("no records to standardize".into()))?;
        let shapes = first.shapes();
        for r in &records[1..] {
            r.check_shapes(&shapes)?;
        }
        let flats: Vec<Vec<f32>> = records.iter().map(|r| r.flatten()).collect();
        Ok(Self::fit_vectors(&flats))
    }

    /// Statistics of equal-length vectors; panics on an empty slice.
    pub fn fit_vectors(vectors: &[Vec<f32>]) -> Self {
        let d = vectors[0].len();
        let n = vectors.len() as f64;
        let mut mean = vec![0.0f32; d];
        let mut std = vec![0.0f32; d];
        for j in 0..d {
            let m = vectors.iter().map(|v| v[j] as f64).sum::<f64>() / n;
            let var = vectors.iter().map(|v| (v[j] as f64 - m).powi(2)).sum::<f64>() / n;
            mean[j] = m as f32;
            std[j] = var.sqrt().max(STD_FLOOR) as f32;
        }
        Self { mean, std }
    }

    pub fn from_parts(mean: Vec<f32>, std: Vec<f32>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(WeightsError::Layout(format!("mean has {} entries, std {}", mean.len(), std.len())));
        }
        if let Some(i) = std.iter().position(|&s| !((s as f64) >= STD_FLOOR * 0.999)) {
            return Err(WeightsError::Layout(format!("std[{i}] = {} is below the floor", std[i])));
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn std(&self) -> &[f32] {
        &self.std
    }

    fn check(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(WeightsError::Layout(format!("vector of length {}, standardizer dimension {}", x.len(), self.dim())));
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f32]) -> Result<Vec<f32>> {
        self.check(x)?;
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| ((v as f64 - m as f64) / s as f64) as f32)
            .collect())
    }

    pub fn invert(&self, z: &[f32]) -> Result<Vec<f32>> {
        self.check(z)?;
        Ok(z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| (v as f64 * s as f64 + m as f64) as f32)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_vector_standardizes_to_zero() {
        let s = Standardizer::fit_vectors(&[vec![1.0, -2.0, 3.5]]);
        assert_eq!(s.apply(&[1.0, -2.0, 3.5]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn symmetric_pair() {
        let v = vec![0.5, -3.0, 2.0];
        let neg: Vec<f32> = v.iter().map(|x| -x).collect();
        let s = Standardizer::fit_vectors(&[v.clone(), neg]);
        assert!(s.mean().iter().all(|&m| m == 0.0));
        assert!(s.apply(&v).unwrap().iter().all(|&z| (z - 1.0).abs() < 1e-6 || (z + 1.0).abs() < 1e-6));
    }
}
