//! Spatial fold partitioning by k-means clustering of site locations.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SiteSeries;
use crate::error::{Error, Result};

const RESTARTS: usize = 10;
const MAX_LLOYD_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_count: usize,
    pub site_to_fold: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, site_id: &str) -> Option<usize> {
        self.site_to_fold.get(site_id).copied()
    }

    /// Site ids held out in `fold`, sorted.
    pub fn test_sites(&self, fold: usize) -> Vec<&str> {
        self.site_to_fold
            .iter()
            .filter(|(_, f)| **f == fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.fold_count];
        for f in self.site_to_fold.values() {
            sizes[*f] += 1;
        }
        sizes
    }

    /// Checks that `sites` are covered exactly once and every fold is used.
    pub fn validate_for(&self, sites: &[SiteSeries]) -> Result<()> {
        if sites.len() != self.site_to_fold.len() {
            return Err(Error::InvalidArgument(format!(
                "fold assignment covers {} sites, dataset has {}",
                self.site_to_fold.len(),
                sites.len()
            )));
        }
        for s in sites {
            match self.fold_of(&s.site_id) {
                Some(f) if f < self.fold_count => {}
                _ => return Err(Error::InvalidArgument(format!("site {} has no valid fold", s.site_id))),
            }
        }
        if self.fold_sizes().contains(&0) {
            return Err(Error::InvalidArgument("empty fold".into()));
        }
        Ok(())
    }
}

/// Clusters sites on their planar location into `k` folds.
///
/// Best of several seeded k-means++ restarts by inertia. Folds are numbered
/// by the position of their first site in `sites`, so labels are stable.
pub fn assign_spatial_folds(sites: &[SiteSeries], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("fold count must be >= 2, got {k}")));
    }
    if sites.len() < k {
        return Err(Error::TooFewSites {
            sites: sites.len(),
            folds: k,
        });
    }
    let points: Vec<[f64; 2]> = sites.iter().map(|s| [s.x, s.y]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..RESTARTS {
        let labels = lloyd(&points, k, &mut rng);
        let inertia = inertia(&points, &labels, k);
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    let (_, labels) = best.expect("at least one restart");

    let mut relabel = vec![usize::MAX; k];
    let mut next = 0;
    for &l in &labels {
        if relabel[l] == usize::MAX {
            relabel[l] = next;
            next += 1;
        }
    }
    let site_to_fold = sites
        .iter()
        .zip(&labels)
        .map(|(s, &l)| (s.site_id.clone(), relabel[l]))
        .collect();
    let folds = FoldAssignment {
        fold_count: k,
        site_to_fold,
    };
    folds.validate_for(sites)?;
    Ok(folds)
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: &[f64; 2], centroids: &[[f64; 2]]) -> usize {
    let mut best = 0;
    for (j, c) in centroids.iter().enumerate().skip(1) {
        if dist2(p, c) < dist2(p, &centroids[best]) {
            best = j;
        }
    }
    best
}

pub(crate) fn centroids_of(points: &[[f64; 2]], labels: &[usize], k: usize) -> Vec<[f64; 2]> {
    let mut sums = vec![[0.0, 0.0]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        sums[l][0] += p[0];
        sums[l][1] += p[1];
        counts[l] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| [s[0] / c.max(1) as f64, s[1] / c.max(1) as f64])
        .collect()
}

fn inertia(points: &[[f64; 2]], labels: &[usize], k: usize) -> f64 {
    let c = centroids_of(points, labels, k);
    points.iter().zip(labels).map(|(p, &l)| dist2(p, &c[l])).sum()
}

fn kmeans_pp(points: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    while centroids.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut idx = d.len() - 1;
            for (i, w) in d.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick]);
    }
    centroids
}

fn lloyd(points: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut centroids = kmeans_pp(points, k, rng);
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..MAX_LLOYD_ITERS {
        fill_empty_clusters(points, &mut labels, &centroids, k);
        centroids = centroids_of(points, &labels, k);
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    fill_empty_clusters(points, &mut labels, &centroids, k);
    labels
}

/// Moves the point farthest from its centroid into any empty cluster.
fn fill_empty_clusters(points: &[[f64; 2]], labels: &mut [usize], centroids: &[[f64; 2]], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let far = (0..points.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&i, &j| {
                dist2(&points[i], &centroids[labels[i]]).total_cmp(&dist2(&points[j], &centroids[labels[j]]))
            })
            .expect("k <= number of points");
        labels[far] = empty;
    }
}
