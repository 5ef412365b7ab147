//! Whole-set evaluation of generated avatars against references.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wsd_weights::{load_record, WeightRecord};

use crate::error::{MetricsError, Result};
use crate::probe::{ProbeRenders, ProbeSet};
use crate::sets::{cov, mmd, one_nna, DistanceMatrix, Metric};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Reported with the sign flipped back, so higher is better.
    pub mmd_psnr: f64,
    pub mmd_proxy: f64,
    pub cov_percent: f64,
    pub one_nna_percent: f64,
    pub n_generated: usize,
    pub n_reference: usize,
    pub probe_hash: String,
    pub seed: u64,
}

impl MetricReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("plain data");
        std::fs::write(path, text).map_err(|e| MetricsError::Io { path: path.to_owned(), message: e.to_string() })
    }
}

/// `*.wsdw` files of a directory in name order; unreadable records are
/// skipped with a warning.
pub fn load_records(dir: &Path) -> Result<Vec<(PathBuf, WeightRecord)>> {
    let io = |e: std::io::Error| MetricsError::Io { path: dir.to_owned(), message: e.to_string() };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wsdw"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        match load_record(&p) {
            Ok(r) => out.push((p, r)),
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    Ok(out)
}

fn matrix(a: &[ProbeRenders], b: &[ProbeRenders], probes: &ProbeSet, metric: Metric) -> Result<DistanceMatrix> {
    let mut data = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            data.push(probes.distance(x, y, metric)?);
        }
    }
    DistanceMatrix::new(a.len(), b.len(), data)
}

/// Metrics of generated records against reference records. Records that
/// fail to render are skipped with a warning.
pub fn evaluate_records(generated: &[WeightRecord], reference: &[WeightRecord], probes: &ProbeSet) -> Result<MetricReport> {
    let render_all = |set: &[WeightRecord], name: &str| -> Result<Vec<ProbeRenders>> {
        let mut out = Vec::new();
        for (i, r) in set.iter().enumerate() {
            match probes.render(r) {
                Ok(x) => out.push(x),
                Err(e) => log::warn!("skipping {name} record {i}: {e}"),
            }
        }
        if out.len() < 2 {
            return Err(MetricsError::Empty(format!("{} usable {name} records, need at least 2", out.len())));
        }
        Ok(out)
    };
    let g = render_all(generated, "generated")?;
    let r = render_all(reference, "reference")?;
    let cross = matrix(&g, &r, probes, Metric::NegPsnr)?;
    let within_g = matrix(&g, &g, probes, Metric::NegPsnr)?;
    let within_r = matrix(&r, &r, probes, Metric::NegPsnr)?;
    let proxy = matrix(&g, &r, probes, Metric::PerceptualProxy)?;
    Ok(MetricReport {
        mmd_psnr: -mmd(&cross),
        mmd_proxy: mmd(&proxy),
        cov_percent: cov(&cross),
        one_nna_percent: one_nna(&cross, &within_g, &within_r)?,
        n_generated: g.len(),
        n_reference: r.len(),
        probe_hash: probes.hash(),
        seed: probes.config.seed,
    })
}

pub fn evaluate(generated_dir: &Path, reference_dir: &Path, probes: &ProbeSet) -> Result<MetricReport> {
    let strip = |v: Vec<(PathBuf, WeightRecord)>| v.into_iter().map(|(_, r)| r).collect::<Vec<_>>();
    let g = strip(load_records(generated_dir)?);
    let r = strip(load_records(reference_dir)?);
    evaluate_records(&g, &r, probes)
}
