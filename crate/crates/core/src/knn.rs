//! kd-tree k-nearest-neighbour search and patch extraction.
//!
//! Queries match brute-force distance sorting exactly, including tie order:
//! candidates compare by (squared distance, point index), so equidistant
//! points resolve to the lowest index. The query point counts as its own
//! nearest neighbour (distance 0).

use std::collections::BinaryHeap;

use nalgebra::Vector3;

use crate::cloud::PointCloud;
use crate::{Error, Result};

const LEAF_SIZE: usize = 16;

/// f64 wrapper ordered by total_cmp; distances here are always finite.
#[derive(PartialEq, PartialOrd)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug)]
enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    /// Left child is the next node in the vec; right child is at `right`.
    Split {
        axis: u8,
        value: f64,
        right: u32,
    },
}

/// Immutable spatial index over one cloud's points; safe for concurrent
/// queries.
#[derive(Debug)]
pub struct SpatialIndex {
    points: Vec<Vector3<f64>>,
    perm: Vec<u32>,
    nodes: Vec<Node>,
}

/// The k nearest neighbours of a query point, mean-centered.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    /// Index of the query point in the source cloud.
    pub center_index: usize,
    /// Neighbour indices sorted by ascending distance to the query point;
    /// includes the query point itself.
    pub neighbor_indices: Vec<usize>,
    /// Neighbour coordinates after subtracting the patch mean, same order.
    pub centered: Vec<Vector3<f64>>,
    /// The subtracted mean.
    pub centroid: Vector3<f64>,
}

impl Patch {
    pub fn k(&self) -> usize {
        self.neighbor_indices.len()
    }
}

pub fn build_index(cloud: &PointCloud) -> Result<SpatialIndex> {
    SpatialIndex::build(cloud)
}

impl SpatialIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let points = cloud.points().to_vec();
        let mut perm: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        build_node(&points, &mut perm, 0, &mut nodes);
        Ok(SpatialIndex {
            points,
            perm,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of the k nearest points to `query`, ascending by
    /// (squared distance, index). Panics if k is 0 or exceeds the point count;
    /// callers validate through `extract_patch`.
    pub fn k_nearest(&self, query: &Vector3<f64>, k: usize) -> Vec<usize> {
        assert!(k >= 1 && k <= self.points.len(), "k out of range");
        // Max-heap keeps the current worst candidate on top.
        let mut heap: BinaryHeap<(OrdF64, u32)> = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        let mut out: Vec<(OrdF64, u32)> = heap.into_vec();
        out.sort_unstable_by(|a, b| (a.0 .0, a.1).partial_cmp(&(b.0 .0, b.1)).unwrap());
        out.into_iter().map(|(_, i)| i as usize).collect()
    }

    /// Index of the single nearest point (lowest index on ties).
    pub fn nearest_one(&self, query: &Vector3<f64>) -> usize {
        self.k_nearest(query, 1)[0]
    }

    fn search(
        &self,
        node: usize,
        query: &Vector3<f64>,
        k: usize,
        heap: &mut BinaryHeap<(OrdF64, u32)>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &idx in &self.perm[start as usize..end as usize] {
                    let d2 = (self.points[idx as usize] - query).norm_squared();
                    let cand = (OrdF64(d2), idx);
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split { axis, value, right } => {
                let diff = query[axis as usize] - value;
                let (near, far) = if diff < 0.0 {
                    (node + 1, right as usize)
                } else {
                    (right as usize, node + 1)
                };
                self.search(near, query, k, heap);
                // <= so an equidistant lower-index point across the plane can
                // still displace the current worst candidate.
                let visit_far = heap.len() < k || diff * diff <= heap.peek().unwrap().0 .0;
                if visit_far {
                    self.search(far, query, k, heap);
                }
            }
        }
    }
}

/// Builds the subtree over perm[start..end]; returns its node index.
fn build_node(
    points: &[Vector3<f64>],
    perm: &mut [u32],
    start: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let len = perm.len();
    let id = nodes.len();
    if len <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: start as u32,
            end: (start + len) as u32,
        });
        return id;
    }
    // Split on the widest axis at the median; (coordinate, index) comparison
    // makes the partition deterministic under duplicate coordinates.
    let axis = widest_axis(points, perm);
    let mid = len / 2;
    perm.select_nth_unstable_by(mid, |&a, &b| {
        (points[a as usize][axis], a)
            .partial_cmp(&(points[b as usize][axis], b))
            .unwrap()
    });
    let value = points[perm[mid] as usize][axis];
    nodes.push(Node::Split {
        axis: axis as u8,
        value,
        right: 0,
    });
    let (left_perm, right_perm) = perm.split_at_mut(mid);
    build_node(points, left_perm, start, nodes);
    let right = build_node(points, right_perm, start + mid, nodes);
    if let Node::Split { right: r, .. } = &mut nodes[id] {
        *r = right as u32;
    }
    id
}

fn widest_axis(points: &[Vector3<f64>], perm: &[u32]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in perm {
        let p = &points[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let mut best = 0;
    for a in 1..3 {
        if hi[a] - lo[a] > hi[best] - lo[best] {
            best = a;
        }
    }
    best
}

/// Extracts the k-NN patch around point `a` and centers it on its mean.
pub fn extract_patch(
    cloud: &PointCloud,
    index: &SpatialIndex,
    a: usize,
    k: usize,
) -> Result<Patch> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > cloud.len() {
        return Err(Error::KExceedsCloudSize {
            k,
            n: cloud.len(),
        });
    }
    assert!(a < cloud.len(), "point index out of range");
    let neighbor_indices = index.k_nearest(&cloud.points()[a], k);
    let sum: Vector3<f64> = neighbor_indices.iter().map(|&i| cloud.points()[i]).sum();
    let centroid = sum / k as f64;
    let centered = neighbor_indices
        .iter()
        .map(|&i| cloud.points()[i] - centroid)
        .collect();
    Ok(Patch {
        center_index: a,
        neighbor_indices,
        centered,
        centroid,
    })
}
