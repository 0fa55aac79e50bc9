use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::{HierFactors, NodeBlocks};
use crate::kernels::KernelSpec;
use crate::linalg::SpdFactor;
use crate::partition::PartitionTree;
use crate::{Error, PointSet, Result};

/// Precomputed state for `wᵀ k_h(X, x)` at arbitrary points `x`.
///
/// Holds everything needed after training: the tree, the training points,
/// the landmark Gram factors, the transfers and, per weight vector, one
/// vector `c_q` for every node below the root. Evaluating a point touches
/// only the nodes on its root-to-leaf path.
#[derive(Clone, Debug, PartialEq)]
pub struct OosState {
    tree: PartitionTree,
    spec: KernelSpec,
    points: PointSet,
    grams: Vec<Option<SpdFactor>>,
    transfers: Vec<Option<DMatrix<f64>>>,
    weights: Vec<Vec<f64>>,
    coeffs: Vec<Vec<Option<DVector<f64>>>>,
    leaf_of_index: Vec<usize>,
}

impl OosState {
    /// Precomputes the state for each weight vector in `weights`.
    pub fn prepare(
        h: &HierFactors,
        tree: &PartitionTree,
        points: &PointSet,
        spec: &KernelSpec,
        weights: &[Vec<f64>],
    ) -> Result<Self> {
        let n = h.n();
        if tree.num_points() != n || points.len() != n || tree.len() != h.shape.len() {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: points.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| w.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: w.len(),
            });
        }
        let count = h.shape.len();
        let mut grams = alloc::vec![None; count];
        let mut transfers = alloc::vec![None; count];
        for (id, b) in h.blocks.iter().enumerate() {
            if let NodeBlocks::Inner { transfer, gram, .. } = b {
                if gram.is_none() {
                    return Err(Error::InvalidParameter(
                        "out-of-sample state needs the assembled factors, not an inverse".into(),
                    ));
                }
                grams[id] = gram.clone();
                transfers[id] = transfer.clone();
            }
        }
        let coeffs = weights.iter().map(|w| node_coefficients(h, w)).collect();
        Ok(Self {
            tree: tree.clone(),
            spec: *spec,
            points: points.clone(),
            grams,
            transfers,
            weights: weights.to_vec(),
            coeffs,
            leaf_of_index: tree.leaf_assignment(),
        })
    }

    /// Rebuilds a state from stored parts, checking shapes.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        tree: PartitionTree,
        spec: KernelSpec,
        points: PointSet,
        grams: Vec<Option<SpdFactor>>,
        transfers: Vec<Option<DMatrix<f64>>>,
        weights: Vec<Vec<f64>>,
        coeffs: Vec<Vec<Option<DVector<f64>>>>,
    ) -> Result<Self> {
        let bad = |msg: &str| Err(Error::InvalidParameter(alloc::format!("malformed state: {msg}")));
        let n = tree.num_points();
        let count = tree.len();
        if points.len() != n || points.dim() != tree.dim() {
            return bad("points");
        }
        if grams.len() != count || transfers.len() != count {
            return bad("node count");
        }
        if weights.len() != coeffs.len() || weights.iter().any(|w| w.len() != n) {
            return bad("weights");
        }
        let rank = |id: usize| tree.node(id).landmarks.len();
        for node in tree.nodes() {
            let id = node.id;
            let inner = !node.is_leaf();
            match &grams[id] {
                Some(g) if inner && g.dim() == rank(id) => {}
                None if !inner => {}
                _ => return bad("gram"),
            }
            match (&transfers[id], inner, node.parent) {
                (Some(w), true, Some(p)) if w.shape() == (rank(id), rank(p)) => {}
                (None, true, None) | (None, false, _) => {}
                _ => return bad("transfer"),
            }
            for c in &coeffs {
                if c.len() != count {
                    return bad("coefficient count");
                }
                match (&c[id], node.parent) {
                    (Some(v), Some(p)) if v.len() == rank(p) => {}
                    (None, None) => {}
                    _ => return bad("coefficient shape"),
                }
            }
        }
        let leaf_of_index = tree.leaf_assignment();
        Ok(Self {
            tree,
            spec,
            points,
            grams,
            transfers,
            weights,
            coeffs,
            leaf_of_index,
        })
    }

    /// `wᵀ k_h(X, x)` for each stored weight vector. `x` is treated as a new
    /// point: no jitter enters.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let leaf = self.tree.leaf_of(x)?;
        Ok(self.eval_at(x, leaf, None))
    }

    /// `wᵀ k'_h(X, x_k)` for training point `k`, with the jitter applied to
    /// its own identity and the path taken from its training leaf. This is
    /// row `k` of `A w`.
    pub fn eval_training(&self, k: usize) -> Result<Vec<f64>> {
        let n = self.points.len();
        if k >= n {
            return Err(Error::DimensionMismatch { expected: n, found: k });
        }
        Ok(self.eval_at(self.points.row(k), self.leaf_of_index[k], Some(k)))
    }

    fn eval_at(&self, x: &[f64], leaf: usize, identity: Option<usize>) -> Vec<f64> {
        let spec = &self.spec;
        let value = |i: usize| spec.jittered(self.points.row(i), x, identity == Some(i));
        let own = self.tree.indices(leaf);
        let kx: Vec<f64> = own.iter().map(|&i| value(i)).collect();
        let mut z: Vec<f64> = self
            .weights
            .iter()
            .map(|w| own.iter().zip(&kx).map(|(&i, k)| w[i] * k).sum())
            .collect();

        let Some(p) = self.tree.node(leaf).parent else {
            return z;
        };
        let lm = &self.tree.node(p).landmarks;
        let mut d = DVector::from_iterator(lm.len(), lm.iter().map(|&i| value(i)));
        self.grams[p]
            .as_ref()
            .expect("inner node has a gram")
            .solve_vec_mut(&mut d);
        self.accumulate(&mut z, leaf, &d);

        let mut node = p;
        while let Some(g) = self.tree.node(node).parent {
            d = self.transfers[node].as_ref().expect("transfer below root").tr_mul(&d);
            self.accumulate(&mut z, node, &d);
            node = g;
        }
        z
    }

    fn accumulate(&self, z: &mut [f64], node: usize, d: &DVector<f64>) {
        for (zo, c) in z.iter_mut().zip(&self.coeffs) {
            *zo += c[node].as_ref().expect("coefficient below root").dot(d);
        }
    }

    pub fn tree(&self) -> &PartitionTree {
        &self.tree
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn grams(&self) -> &[Option<SpdFactor>] {
        &self.grams
    }

    pub fn transfers(&self) -> &[Option<DMatrix<f64>>] {
        &self.transfers
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn coeffs(&self) -> &[Vec<Option<DVector<f64>>>] {
        &self.coeffs
    }

    pub fn outputs(&self) -> usize {
        self.weights.len()
    }

    /// Reals held by the state, excluding the training points.
    pub fn floats_stored(&self) -> usize {
        let g: usize = self.grams.iter().flatten().map(|g| g.lower().len()).sum();
        let w: usize = self.transfers.iter().flatten().map(|w| w.len()).sum();
        let c: usize = self.coeffs.iter().flatten().flatten().map(|v| v.len()).sum();
        g + w + c + self.weights.iter().map(Vec::len).sum::<usize>()
    }
}

/// Single-output convenience wrapper around [`OosState::prepare`].
pub fn oos_prepare(
    h: &HierFactors,
    tree: &PartitionTree,
    points: &PointSet,
    spec: &KernelSpec,
    w: &[f64],
) -> Result<OosState> {
    OosState::prepare(h, tree, points, spec, &[w.to_vec()])
}

/// `e` upward, then `c_q = Σ_p e_sibling` for every node below the root.
fn node_coefficients(h: &HierFactors, w: &[f64]) -> Vec<Option<DVector<f64>>> {
    let count = h.shape.len();
    let mut e: Vec<Option<DVector<f64>>> = alloc::vec![None; count];
    for id in (1..count).rev() {
        let s = &h.shape[id];
        e[id] = match &h.blocks[id] {
            NodeBlocks::Leaf { basis, .. } => basis.as_ref().map(|u| {
                let wl = DVector::from_iterator(s.size(), h.perm[s.lo..s.hi].iter().map(|&i| w[i]));
                u.tr_mul(&wl)
            }),
            NodeBlocks::Inner { transfer, .. } => {
                let [l, r] = s.children.expect("inner node has children");
                let sum = e[l].as_ref().expect("child") + e[r].as_ref().expect("child");
                transfer.as_ref().map(|t| t.tr_mul(&sum))
            }
        };
    }
    let mut c = alloc::vec![None; count];
    for (id, s) in h.shape.iter().enumerate() {
        if let (NodeBlocks::Inner { middle, .. }, Some([l, r])) = (&h.blocks[id], s.children) {
            c[l] = Some(middle * e[r].as_ref().expect("child"));
            c[r] = Some(middle * e[l].as_ref().expect("child"));
        }
    }
    c
}
