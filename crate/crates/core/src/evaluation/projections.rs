use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FeatureMap;
use crate::rationale::RationaleBranch;

/// Number of projections kept by the high-variance subset mode.
pub const HIGH_VARIANCE_TOP: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionVarianceReport {
    /// Population variance of `w_k . phi` over all locations of all images.
    pub variance: Vec<f64>,
    /// Projection indices (0-based) by descending variance, ties to the lower index.
    pub ranking: Vec<usize>,
}

impl ProjectionVarianceReport {
    pub fn top(&self, n: usize) -> Vec<usize> {
        self.ranking.iter().take(n).copied().collect()
    }
}

pub fn projection_variance(
    branch: &RationaleBranch,
    maps: &[FeatureMap],
) -> Result<ProjectionVarianceReport> {
    if maps.is_empty() {
        return Err(Error::Data("projection variance needs at least one image".into()));
    }
    let k = branch.projections();
    let mut sum = vec![0.0; k];
    let mut sq = vec![0.0; k];
    let mut count = 0usize;
    for phi in maps {
        let responses = branch.responses(phi)?;
        for (kk, r) in responses.iter().enumerate() {
            sum[kk] += r.iter().sum::<f64>();
            sq[kk] += r.iter().map(|v| v * v).sum::<f64>();
        }
        count += phi.locations();
    }
    let n = count as f64;
    let variance: Vec<f64> = sum
        .iter()
        .zip(&sq)
        .map(|(s, q)| (q / n - (s / n) * (s / n)).max(0.0))
        .collect();
    let mut ranking: Vec<usize> = (0..k).collect();
    ranking.sort_by(|&a, &b| variance[b].total_cmp(&variance[a]).then(a.cmp(&b)));
    Ok(ProjectionVarianceReport { variance, ranking })
}
