use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{dist, Point};

/// Flat clustering obtained by cutting an average-linkage dendrogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Cluster id per point, dense from 0 in order of first appearance.
    pub labels: Vec<usize>,
    pub cluster_distance: f64,
}

impl ClusterAssignment {
    pub fn cluster_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(i, _)| i)
    }
}

/// Average-linkage agglomerative clustering on Euclidean distance.
///
/// Clusters keep merging while the closest pair is strictly nearer than
/// `distance_threshold`. Ties go to the pair with the lowest indices, where
/// a cluster is indexed by its smallest member.
pub fn cluster(points: &[Point], distance_threshold: f64) -> ClusterAssignment {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = dist(points[i], points[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }

    // Slot i holds the cluster whose smallest member is i.
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut parent: Vec<usize> = (0..n).collect();

    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            for j in (i + 1..n).filter(|&j| active[j]) {
                if best.is_none_or(|(_, _, b)| d[i][j] < b) {
                    best = Some((i, j, d[i][j]));
                }
            }
        }
        let Some((i, j, dij)) = best else { break };
        if dij >= distance_threshold {
            break;
        }
        // Lance-Williams update for average linkage; j folds into i.
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for k in (0..n).filter(|&k| active[k] && k != i && k != j) {
            let v = (si * d[i][k] + sj * d[j][k]) / (si + sj);
            d[i][k] = v;
            d[k][i] = v;
        }
        size[i] += size[j];
        active[j] = false;
        parent[j] = i;
    }

    let root = |mut x: usize| {
        while parent[x] != x {
            x = parent[x];
        }
        x
    };
    let mut slot_label = vec![usize::MAX; n];
    let mut next = 0;
    let labels = (0..n)
        .map(|p| {
            let r = root(p);
            if slot_label[r] == usize::MAX {
                slot_label[r] = next;
                next += 1;
            }
            slot_label[r]
        })
        .collect();
    ClusterAssignment {
        labels,
        cluster_distance: distance_threshold,
    }
}
