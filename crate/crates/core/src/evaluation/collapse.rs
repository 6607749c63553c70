use serde::{Deserialize, Serialize};

use super::features::FeatureMatrix;
use super::retrieval::{retrieval_eval, Similarity};
use crate::error::{Error, Result};
use crate::tensor::l2_norm;

pub const MIN_EMBEDDINGS: usize = 50;
/// Mean per-dimension std below this counts as collapsed.
pub const STD_THRESHOLD: f64 = 0.01;
/// Rank-1 at or below this multiple of chance counts as collapsed.
pub const CHANCE_FACTOR: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub collapsed: bool,
    pub mean_std: f64,
    pub min_std: f64,
    pub max_std: f64,
    /// Leave-one-out rank-1 (percent) and chance level, when labels are given.
    pub rank1: Option<f64>,
    pub chance: Option<f64>,
}

/// Collapse test on L2-normalised embeddings. Without labels only the
/// spread rule applies.
pub fn collapse_check(embeddings: &FeatureMatrix, labels: Option<&[usize]>) -> Result<CollapseReport> {
    if embeddings.rows < MIN_EMBEDDINGS {
        return Err(Error::Data(format!(
            "collapse check needs >= {MIN_EMBEDDINGS} embeddings, got {}",
            embeddings.rows
        )));
    }
    let d = embeddings.dim;
    let n = embeddings.rows as f64;
    let unit: Vec<Vec<f64>> = embeddings
        .iter_rows()
        .map(|r| {
            let norm = l2_norm(r);
            if norm > 0.0 {
                r.iter().map(|v| v / norm).collect()
            } else {
                r.to_vec()
            }
        })
        .collect();
    let mut stds = Vec::with_capacity(d);
    for j in 0..d {
        let mean = unit.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = unit.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        stds.push(var.sqrt());
    }
    let mean_std = stds.iter().sum::<f64>() / d.max(1) as f64;
    let (min_std, max_std) = stds
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), s| (lo.min(*s), hi.max(*s)));
    let mut collapsed = mean_std < STD_THRESHOLD;
    let (mut rank1, mut chance) = (None, None);
    if let Some(labels) = labels {
        let classes = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
        let r = retrieval_eval(embeddings, labels, Similarity::Cosine)?;
        let c = 100.0 / classes.max(1) as f64;
        collapsed |= r.rank1 <= CHANCE_FACTOR * c;
        rank1 = Some(r.rank1);
        chance = Some(c);
    }
    Ok(CollapseReport {
        collapsed,
        mean_std,
        min_std,
        max_std,
        rank1,
        chance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_embeddings_collapse() {
        let m = FeatureMatrix::from_rows(vec![vec![0.3, 0.4, 0.5]; 60]).unwrap();
        let r = collapse_check(&m, None).unwrap();
        assert!(r.collapsed);
        assert!(r.mean_std < 1e-12);
    }

    #[test]
    fn too_few_embeddings_is_a_data_error() {
        let m = FeatureMatrix::from_rows(vec![vec![1.0]; 10]).unwrap();
        assert!(matches!(collapse_check(&m, None), Err(Error::Data(_))));
    }
}
