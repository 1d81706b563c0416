use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, Sample};

/// Per-column z-score parameters for the continuous dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreParams {
    pub means: Vec<f64>,
    /// Sample standard deviations (n−1); constant columns store 1.
    pub stds: Vec<f64>,
}

impl ZScoreParams {
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a Sample>, dims: usize) -> Self {
        let rows: Vec<&Sample> = samples.into_iter().collect();
        let n = rows.len() as f64;
        let mut means = vec![0.0; dims];
        for s in &rows {
            for (m, v) in means.iter_mut().zip(&s.continuous) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut stds = vec![0.0; dims];
        for s in &rows {
            for ((acc, v), m) in stds.iter_mut().zip(&s.continuous).zip(&means) {
                *acc += (v - m) * (v - m);
            }
        }
        for sd in stds.iter_mut() {
            *sd = if rows.len() > 1 { (*sd / (n - 1.0)).sqrt() } else { 0.0 };
            if *sd == 0.0 || !sd.is_finite() {
                *sd = 1.0;
            }
        }
        ZScoreParams { means, stds }
    }

    pub fn apply(&self, sample: &mut Sample) {
        for ((v, m), sd) in sample.continuous.iter_mut().zip(&self.means).zip(&self.stds) {
            *v = (*v - m) / sd;
        }
    }
}

/// Standardizes every continuous dimension over the whole dataset.
///
/// Categorical blocks are left untouched. The fitted parameters are kept in
/// the provenance so that raw data can be mapped identically later.
pub fn zscore_normalize(d: &Dataset) -> Result<Dataset, DatasetError> {
    if d.provenance.normalized {
        return Err(DatasetError::AlreadyNormalized);
    }
    let params = ZScoreParams::fit(&d.samples, d.layout().n_continuous);
    let mut out = apply_zscore(d, &params);
    out.provenance.normalized = true;
    out.provenance.zscore = Some(params);
    Ok(out)
}

/// Applies previously fitted parameters without touching provenance flags.
pub fn apply_zscore(d: &Dataset, params: &ZScoreParams) -> Dataset {
    let mut out = d.clone();
    for s in &mut out.samples {
        params.apply(s);
    }
    out
}
