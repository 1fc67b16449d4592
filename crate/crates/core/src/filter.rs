//! Exact k-d tree and the nearest-neighbor filter that keeps generated latent
//! samples close to the training points.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{param, Error, Result};
use crate::linalg::sq_dist_slice;

pub const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// Balanced k-d tree over the rows of a matrix.
#[derive(Debug, Clone)]
pub struct KdTree {
    data: Vec<f64>,
    dim: usize,
    perm: Vec<usize>,
    nodes: Vec<Node>,
    leaf_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub sq_dist: f64,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sq_dist
            .total_cmp(&other.sq_dist)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    pub fn build(points: ArrayView2<f64>, leaf_size: usize) -> Result<Self> {
        let (m, dim) = points.dim();
        if m == 0 {
            return param("cannot index an empty point set");
        }
        if dim == 0 || leaf_size == 0 {
            return param("points need at least one coordinate and leaf size must be positive");
        }
        if points.iter().any(|v| !v.is_finite()) {
            return param("indexed points must be finite");
        }
        let mut tree = Self {
            data: points.iter().copied().collect(),
            dim,
            perm: (0..m).collect(),
            nodes: Vec::new(),
            leaf_size,
        };
        tree.build_node(0, m);
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= self.leaf_size {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut best = (0, f64::NEG_INFINITY);
        for d in 0..self.dim {
            let (lo, hi) = self.perm[start..end].iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), &i| {
                    let v = self.data[i * self.dim + d];
                    (lo.min(v), hi.max(v))
                },
            );
            if hi - lo > best.1 {
                best = (d, hi - lo);
            }
        }
        let dim = best.0;
        let mid = start + (end - start) / 2;
        {
            let data = &self.data;
            let stride = self.dim;
            self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                data[a * stride + dim]
                    .total_cmp(&data[b * stride + dim])
                    .then(a.cmp(&b))
            });
        }
        let value = self.data[self.perm[mid] * self.dim + dim];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    /// The `n` nearest points, ascending by distance with ties broken by lower index.
    pub fn knn(&self, query: &[f64], n: usize) -> Vec<Neighbor> {
        assert_eq!(query.len(), self.dim, "query dimension mismatch");
        let n = n.min(self.len());
        if n == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(n + 1);
        self.search(0, query, n, &mut heap);
        let mut out = heap.into_vec();
        out.sort();
        out
    }

    fn search(&self, node: usize, q: &[f64], n: usize, heap: &mut BinaryHeap<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    let cand = Neighbor {
                        index: i,
                        sq_dist: sq_dist_slice(self.point(i), q),
                    };
                    if heap.len() < n {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("full heap") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, n, heap);
                let bound = diff * diff;
                if heap.len() < n || bound <= heap.peek().expect("non-empty heap").sq_dist {
                    self.search(far, q, n, heap);
                }
            }
        }
    }
}

pub fn build_index(points: ArrayView2<f64>) -> Result<KdTree> {
    KdTree::build(points, DEFAULT_LEAF_SIZE)
}

/// Indices into the generated set: the `n` nearest generated points of each
/// training point in turn, so the result has `n * N` entries unless `dedup` is set.
pub fn select_neighbor_indices(
    index: &KdTree,
    train_latent: ArrayView2<f64>,
    n: usize,
    dedup: bool,
) -> Result<Vec<usize>> {
    if n == 0 {
        return param("neighbor count must be at least 1");
    }
    if index.len() < n {
        return param(format!(
            "need at least {n} generated points, got {}",
            index.len()
        ));
    }
    if train_latent.ncols() != index.dim() {
        return Err(Error::Shape {
            expected: format!("{} latent columns", index.dim()),
            got: train_latent.ncols().to_string(),
        });
    }
    let mut out = Vec::with_capacity(n * train_latent.nrows());
    let mut q = vec![0.0; index.dim()];
    for row in train_latent.outer_iter() {
        q.iter_mut().zip(row.iter()).for_each(|(a, &b)| *a = b);
        out.extend(index.knn(&q, n).into_iter().map(|nb| nb.index));
    }
    if dedup {
        let mut seen = vec![false; index.len()];
        out.retain(|&i| !std::mem::replace(&mut seen[i], true));
    }
    Ok(out)
}

/// Generated rows selected by [`select_neighbor_indices`].
pub fn select_neighbors(
    generated: ArrayView2<f64>,
    index: &KdTree,
    train_latent: ArrayView2<f64>,
    n: usize,
    dedup: bool,
) -> Result<Array2<f64>> {
    if generated.nrows() != index.len() {
        return Err(Error::Shape {
            expected: format!("{} generated rows", index.len()),
            got: generated.nrows().to_string(),
        });
    }
    let idx = select_neighbor_indices(index, train_latent, n, dedup)?;
    Ok(generated.select(Axis(0), &idx))
}

/// Mean Euclidean distance from each row of `points` to its nearest row in `reference`.
pub fn mean_nearest_distance(points: ArrayView2<f64>, reference: &KdTree) -> f64 {
    if points.nrows() == 0 {
        return 0.0;
    }
    let mut q = vec![0.0; reference.dim()];
    let total: f64 = points
        .outer_iter()
        .map(|r| {
            q.iter_mut().zip(r.iter()).for_each(|(a, &b)| *a = b);
            reference.knn(&q, 1)[0].sq_dist.sqrt()
        })
        .sum();
    total / points.nrows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from, standard_normal_matrix};
    use ndarray::array;

    fn brute(points: ArrayView2<f64>, q: &[f64], n: usize) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = points
            .outer_iter()
            .enumerate()
            .map(|(i, r)| Neighbor {
                index: i,
                sq_dist: sq_dist_slice(r.as_slice().unwrap(), q),
            })
            .collect();
        all.sort();
        all.truncate(n);
        all
    }

    #[test]
    fn single_point_index() {
        let t = build_index(array![[1.0, 2.0]].view()).unwrap();
        assert_eq!(t.knn(&[5.0, -3.0], 1)[0].index, 0);
        assert!(build_index(Array2::<f64>::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn matches_brute_force_1nn() {
        let mut rng = rng_from(21);
        let pts = standard_normal_matrix(1000, 3, &mut rng);
        let queries = standard_normal_matrix(200, 3, &mut rng);
        let t = build_index(pts.view()).unwrap();
        for q in queries.outer_iter() {
            let q = q.as_slice().unwrap();
            assert_eq!(t.knn(q, 1), brute(pts.view(), q, 1));
        }
    }

    #[test]
    fn duplicates_break_ties_by_index() {
        let pts = array![[0.0, 0.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0]];
        let t = KdTree::build(pts.view(), 1).unwrap();
        let r = t.knn(&[0.1, 0.0], 2);
        assert_eq!((r[0].index, r[1].index), (0, 2));
        let r = t.knn(&[1.0, 1.0], 1);
        assert_eq!(r[0].index, 1);
    }

    #[test]
    fn select_counts_and_self_match() {
        let mut rng = rng_from(2);
        let train = standard_normal_matrix(50, 2, &mut rng);
        let t = build_index(train.view()).unwrap();
        let sel = select_neighbors(train.view(), &t, train.view(), 1, false).unwrap();
        assert_eq!(sel, train);
        let gen = standard_normal_matrix(300, 2, &mut rng);
        let tg = build_index(gen.view()).unwrap();
        let sel = select_neighbors(gen.view(), &tg, train.view(), 10, false).unwrap();
        assert_eq!(sel.nrows(), 500);
        let dd = select_neighbors(gen.view(), &tg, train.view(), 10, true).unwrap();
        assert!(dd.nrows() <= 500);
        assert!(select_neighbors(gen.view(), &tg, train.view(), 301, false).is_err());
    }

    #[test]
    fn selection_matches_brute_force() {
        let mut rng = rng_from(5);
        let gen = standard_normal_matrix(500, 2, &mut rng);
        let train = standard_normal_matrix(40, 2, &mut rng);
        let t = build_index(gen.view()).unwrap();
        let idx = select_neighbor_indices(&t, train.view(), 7, false).unwrap();
        for (i, row) in train.outer_iter().enumerate() {
            let b: Vec<usize> = brute(gen.view(), row.as_slice().unwrap(), 7)
                .into_iter()
                .map(|n| n.index)
                .collect();
            assert_eq!(&idx[i * 7..(i + 1) * 7], b.as_slice());
        }
    }

    #[test]
    fn selection_contracts_toward_data() {
        let mut rng = rng_from(6);
        let train = standard_normal_matrix(100, 2, &mut rng);
        let gen = standard_normal_matrix(2000, 2, &mut rng) * 2.0;
        let tg = build_index(gen.view()).unwrap();
        let sel = select_neighbors(gen.view(), &tg, train.view(), 5, false).unwrap();
        let tt = build_index(train.view()).unwrap();
        assert!(mean_nearest_distance(sel.view(), &tt) <= mean_nearest_distance(gen.view(), &tt));
    }
}
