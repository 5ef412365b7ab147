//! Set-to-set metrics over precomputed distance matrices.
//!
//! Every argmin scans candidates in a fixed order and keeps the first
//! strict minimum, so ties go to the lowest index. For 1-NNA the candidate
//! order is the generated set followed by the reference set.

use serde::{Deserialize, Serialize};

use crate::error::{MetricsError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Negated PSNR, so smaller is closer.
    NegPsnr,
    PerceptualProxy,
}

/// Row-major `rows × cols` distances, `D(row_i, col_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(MetricsError::Empty(format!("{rows}×{cols} distance matrix")));
        }
        if data.len() != rows * cols {
            return Err(MetricsError::Shape(format!("{} entries for {rows}×{cols}", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite { row: i / cols, col: i % cols });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self::new(rows, cols, data)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn transpose(&self) -> Self {
        let data = (0..self.rows * self.cols).map(|i| self.get(i % self.rows, i / self.rows)).collect();
        Self { rows: self.cols, cols: self.rows, data }
    }
}

fn argmin(values: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best
}

/// Mean over references (columns) of the distance to the closest generated
/// element (rows).
pub fn mmd(cross: &DistanceMatrix) -> f64 {
    let total: f64 = (0..cross.cols).map(|j| (0..cross.rows).map(|i| cross.get(i, j)).fold(f64::INFINITY, f64::min)).sum();
    total / cross.cols as f64
}

/// Percentage of references that are the nearest match of at least one
/// generated element.
pub fn cov(cross: &DistanceMatrix) -> f64 {
    let mut hit = vec![false; cross.cols];
    for i in 0..cross.rows {
        let (j, _) = argmin((0..cross.cols).map(|j| cross.get(i, j))).expect("non-empty row");
        hit[j] = true;
    }
    100.0 * hit.iter().filter(|&&h| h).count() as f64 / cross.cols as f64
}

/// 1-nearest-neighbour accuracy (percent) of the two-sample classifier.
///
/// The neighbour of `X` is searched over the union with `X` removed. A
/// candidate whose distance to `X` does not exceed `X`'s self-distance is the
/// same element as `X` and is removed with it, so an element present in both
/// sets appears once per set in the scan and the generated copy wins the tie.
pub fn one_nna(cross: &DistanceMatrix, within_g: &DistanceMatrix, within_r: &DistanceMatrix) -> Result<f64> {
    let (g, r) = (cross.rows, cross.cols);
    if within_g.rows != g || within_g.cols != g || within_r.rows != r || within_r.cols != r {
        return Err(MetricsError::Shape(format!(
            "cross {g}×{r}, within-generated {}×{}, within-reference {}×{}",
            within_g.rows, within_g.cols, within_r.rows, within_r.cols
        )));
    }
    let nearest_is_generated = |self_d: f64, cands: Vec<(f64, bool)>| -> Option<bool> {
        let mut best: Option<(f64, bool)> = None;
        for (d, is_g) in cands {
            if d <= self_d {
                continue;
            }
            if best.is_none_or(|(b, _)| d < b) {
                best = Some((d, is_g));
            }
        }
        best.map(|(_, is_g)| is_g)
    };
    let mut correct = 0usize;
    for i in 0..g {
        let cands = (0..g)
            .filter(|&j| j != i)
            .map(|j| (within_g.get(i, j), true))
            .chain((0..r).map(|j| (cross.get(i, j), false)))
            .collect();
        match nearest_is_generated(within_g.get(i, i), cands) {
            Some(true) => correct += 1,
            Some(false) => {}
            None => return Err(MetricsError::Empty(format!("generated element {i} has no distinct neighbour"))),
        }
    }
    for i in 0..r {
        let cands = (0..g)
            .map(|j| (cross.get(j, i), true))
            .chain((0..r).filter(|&j| j != i).map(|j| (within_r.get(i, j), false)))
            .collect();
        match nearest_is_generated(within_r.get(i, i), cands) {
            Some(false) => correct += 1,
            Some(true) => {}
            None => return Err(MetricsError::Empty(format!("reference element {i} has no distinct neighbour"))),
        }
    }
    Ok(100.0 * correct as f64 / (g + r) as f64)
}
