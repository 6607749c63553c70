use serde::{Deserialize, Serialize};

use super::features::{similarity, FeatureMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Similarity {
    #[default]
    Cosine,
    /// Negative squared Euclidean distance.
    L2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    /// Percentages in [0, 100].
    pub rank1: f64,
    pub rank5: f64,
    pub map: f64,
    pub rank1_hits: usize,
    pub rank5_hits: usize,
    pub queries: usize,
    /// Queries skipped because their class has no other member.
    pub excluded: usize,
    pub gallery_size: usize,
    pub metric: Similarity,
}

/// Gallery order for `query`: every other item by descending similarity,
/// ties broken by the lower index.
pub fn ranked_gallery(features: &FeatureMatrix, query: usize, metric: Similarity) -> Vec<usize> {
    let q = features.row(query);
    let mut scored: Vec<(f64, usize)> = (0..features.rows)
        .filter(|&j| j != query)
        // + 0.0 folds -0 into 0 so orthogonal items tie
        .map(|j| (similarity(metric, q, features.row(j)) + 0.0, j))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, j)| j).collect()
}

/// Average precision of a relevance sequence over the full ranking.
pub fn average_precision(relevant: impl IntoIterator<Item = bool>) -> f64 {
    let (mut hits, mut sum) = (0usize, 0.0);
    for (rank, rel) in relevant.into_iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// Leave-one-out retrieval over the whole set.
pub fn retrieval_eval(
    features: &FeatureMatrix,
    labels: &[usize],
    metric: Similarity,
) -> Result<RetrievalReport> {
    let n = features.rows;
    if n < 2 || labels.len() != n {
        return Err(Error::Argument(format!(
            "need >= 2 items with one label each, got {n} items and {} labels",
            labels.len()
        )));
    }
    let mut counts = std::collections::BTreeMap::new();
    labels.iter().for_each(|l| *counts.entry(*l).or_insert(0usize) += 1);
    let (mut r1, mut r5, mut ap_sum, mut queries, mut excluded) = (0, 0, 0.0, 0, 0);
    for q in 0..n {
        if counts[&labels[q]] < 2 {
            excluded += 1;
            continue;
        }
        let ranked = ranked_gallery(features, q, metric);
        let rel: Vec<bool> = ranked.iter().map(|&j| labels[j] == labels[q]).collect();
        r1 += usize::from(rel[0]);
        r5 += usize::from(rel.iter().take(5).any(|&r| r));
        ap_sum += average_precision(rel);
        queries += 1;
    }
    if excluded > 0 {
        log::warn!("{excluded} retrieval queries excluded: their class has a single item");
    }
    if queries == 0 {
        return Err(Error::Data("no query has a same-class gallery item".into()));
    }
    let pct = |v: f64| 100.0 * v / queries as f64;
    Ok(RetrievalReport {
        rank1: pct(r1 as f64),
        rank5: pct(r5 as f64),
        map: pct(ap_sum),
        rank1_hits: r1,
        rank5_hits: r5,
        queries,
        excluded,
        gallery_size: n - 1,
        metric,
    })
}
