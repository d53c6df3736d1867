//! Proposal-cluster centers from an IoU graph.
//!
//! Candidates are vertices; two candidates are joined when their IoU is
//! strictly above the edge threshold. Centers are picked greedily: take the
//! vertex of highest remaining degree (ties: higher score, then lower index),
//! then delete it together with its neighbours, and repeat until no vertex is
//! left. Proposals are then assigned to the center of maximal IoU, or to the
//! background cluster when that IoU is below the assignment threshold.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::BBox;
use crate::scalar::{fmt6, Scalar};

pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.4;
pub const DEFAULT_ASSIGN_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusterError {
    #[error("threshold {0} outside (0, 1)")]
    Threshold(String),
    #[error("candidate index {0} used twice")]
    DuplicateIndex(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredProposal<T = f64> {
    pub bbox: BBox<T>,
    pub score: T,
    /// Position in the candidate list; unique within a set.
    pub index: usize,
}

impl<T: Scalar> ScoredProposal<T> {
    /// Number the boxes in list order.
    pub fn enumerate(items: impl IntoIterator<Item = (BBox<T>, T)>) -> Vec<Self> {
        items
            .into_iter()
            .enumerate()
            .map(|(index, (bbox, score))| Self { bbox, score, index })
            .collect()
    }
}

/// Undirected graph over candidate positions `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProposalGraph {
    adjacency: Vec<BTreeSet<usize>>,
}

impl ProposalGraph {
    pub fn from_edges(vertices: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adjacency = vec![BTreeSet::new(); vertices];
        for (u, v) in edges {
            if u != v {
                adjacency[u].insert(v);
                adjacency[v].insert(u);
            }
        }
        Self { adjacency }
    }

    pub fn vertex_count(&self) -> usize {
        self.adjacency.len()
    }

    /// Edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, ns)| ns.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
            .collect()
    }

    pub fn neighbors(&self, v: usize) -> &BTreeSet<usize> {
        &self.adjacency[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].contains(&v)
    }
}

fn check_threshold<T: Scalar>(t: T) -> Result<(), ClusterError> {
    if t > T::zero() && t < T::one() {
        Ok(())
    } else {
        Err(ClusterError::Threshold(t.to_string()))
    }
}

fn check_unique<T>(cands: &[ScoredProposal<T>]) -> Result<(), ClusterError> {
    let mut seen = BTreeSet::new();
    for c in cands {
        if !seen.insert(c.index) {
            return Err(ClusterError::DuplicateIndex(c.index));
        }
    }
    Ok(())
}

/// Vertex `i` of the graph is `cands[i]`.
pub fn build_graph<T: Scalar>(cands: &[ScoredProposal<T>], edge_threshold: T) -> Result<ProposalGraph, ClusterError> {
    check_threshold(edge_threshold)?;
    check_unique(cands)?;
    let n = cands.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if cands[u].bbox.iou(&cands[v].bbox) > edge_threshold {
                edges.push((u, v));
            }
        }
    }
    Ok(ProposalGraph::from_edges(n, edges))
}

/// Greedy max-degree selection. Centers are returned in pick order.
pub fn select_centers<T: Scalar>(g: &ProposalGraph, cands: &[ScoredProposal<T>]) -> Vec<ScoredProposal<T>> {
    assert_eq!(g.vertex_count(), cands.len(), "graph and candidate list disagree");
    let mut alive = vec![true; cands.len()];
    let mut degree: Vec<usize> = (0..cands.len()).map(|v| g.neighbors(v).len()).collect();
    let mut remaining = cands.len();
    let mut centers = Vec::new();
    while remaining > 0 {
        let pick = (0..cands.len())
            .filter(|&v| alive[v])
            .reduce(|best, v| {
                let better = degree[v] > degree[best]
                    || (degree[v] == degree[best]
                        && (cands[v].score > cands[best].score
                            || (cands[v].score == cands[best].score && cands[v].index < cands[best].index)));
                if better {
                    v
                } else {
                    best
                }
            })
            .expect("a vertex remains");
        centers.push(cands[pick].clone());

        let mut removed: Vec<usize> = g.neighbors(pick).iter().copied().filter(|&n| alive[n]).collect();
        removed.push(pick);
        for &r in &removed {
            alive[r] = false;
            remaining -= 1;
        }
        for &r in &removed {
            for &n in g.neighbors(r) {
                if alive[n] {
                    degree[n] -= 1;
                }
            }
        }
    }
    centers
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cluster<T = f64> {
    /// Position in the center list, and the IoU with that center.
    Center { center: usize, iou: T },
    Background { best_iou: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment<T = f64> {
    pub centers: Vec<ScoredProposal<T>>,
    /// One entry per proposal, in proposal order.
    pub assignments: Vec<Cluster<T>>,
}

impl<T: Scalar> ClusterAssignment<T> {
    pub fn background_count(&self) -> usize {
        self.assignments
            .iter()
            .filter(|a| matches!(a, Cluster::Background { .. }))
            .count()
    }
}

/// Assign every proposal to the center of maximal IoU (earlier center on
/// ties) when that IoU is `>= assign_threshold`. A proposal that is itself a
/// center (same index) always joins its own cluster.
pub fn assign_clusters<T: Scalar>(
    proposals: &[ScoredProposal<T>],
    centers: &[ScoredProposal<T>],
    assign_threshold: T,
) -> Result<ClusterAssignment<T>, ClusterError> {
    check_threshold(assign_threshold)?;
    let assignments = proposals
        .iter()
        .map(|p| {
            if let Some(c) = centers.iter().position(|c| c.index == p.index && c.bbox == p.bbox) {
                return Cluster::Center {
                    center: c,
                    iou: T::one(),
                };
            }
            let mut best: Option<(usize, T)> = None;
            for (c, center) in centers.iter().enumerate() {
                let v = p.bbox.iou(&center.bbox);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((c, v));
                }
            }
            match best {
                Some((center, iou)) if iou >= assign_threshold => Cluster::Center { center, iou },
                Some((_, iou)) => Cluster::Background { best_iou: iou },
                None => Cluster::Background { best_iou: T::zero() },
            }
        })
        .collect();
    Ok(ClusterAssignment {
        centers: centers.to_vec(),
        assignments,
    })
}

/// `index,center_index|background,iou`. The center column holds the
/// candidate index of the center, or `background`.
pub fn assignment_csv<T: Scalar>(proposals: &[ScoredProposal<T>], a: &ClusterAssignment<T>) -> String {
    let mut out = String::from("index,center_index,iou\n");
    for (p, cl) in proposals.iter().zip(&a.assignments) {
        match cl {
            Cluster::Center { center, iou } => {
                let _ = writeln!(out, "{},{},{}", p.index, a.centers[*center].index, fmt6(*iou));
            }
            Cluster::Background { best_iou } => {
                let _ = writeln!(out, "{},background,{}", p.index, fmt6(*best_iou));
            }
        }
    }
    out
}
