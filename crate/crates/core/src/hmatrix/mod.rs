//! Recursively low-rank compressed kernel matrices.
//!
//! The Gram matrix of the hierarchical kernel over a partitioning tree is
//! held as per-node factors:
//!
//! * leaf `i`: the exact block `A_ii = K'(X_i, X_i)` and the basis
//!   `U_i = K'(X_i, L_p) K'(L_p, L_p)⁻¹` onto the parent's landmarks `L_p`;
//! * nonleaf `p`: the middle factor `Σ_p = K'(L_p, L_p)` and, below the root,
//!   the transfer `W_p = K'(L_p, L_g) K'(L_g, L_g)⁻¹` to the grandparent level.
//!
//! The block coupling two sibling subtrees `a` and `b` of `p` is
//! `V_a Σ_p V_bᵀ`, where `V` is `U` for a leaf and the stacked children's
//! `V` times `W` for a nonleaf. The inverse of a shifted matrix has exactly
//! the same skeleton, so [`HierFactors`] represents both.
//!
//! Vectors passed in and out use training-index order; the tree permutation
//! is applied internally.

mod invert;
mod matvec;
mod oos;

pub use oos::{oos_prepare, OosState};

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::kernels::{kernel_block, kernel_gram, KernelSpec};
use crate::linalg::SpdFactor;
use crate::partition::PartitionTree;
use crate::{Error, PointSet, Result, DENSE_CAP};

/// Tree topology copied out of the [`PartitionTree`].
#[derive(Clone, Debug, PartialEq)]
pub struct NodeShape {
    pub parent: Option<usize>,
    pub children: Option<[usize; 2]>,
    pub lo: usize,
    pub hi: usize,
}

impl NodeShape {
    #[inline]
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.hi - self.lo
    }
}

/// Factor blocks of one node.
#[derive(Clone, Debug, PartialEq)]
pub enum NodeBlocks {
    Leaf {
        diag: DMatrix<f64>,
        /// Absent only for a tree that is a single leaf.
        basis: Option<DMatrix<f64>>,
    },
    Inner {
        middle: DMatrix<f64>,
        /// Absent at the root.
        transfer: Option<DMatrix<f64>>,
        /// Cholesky factor of the landmark Gram; kept for assembled matrices,
        /// dropped for inverses.
        gram: Option<SpdFactor>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierFactors {
    shape: Vec<NodeShape>,
    perm: Vec<usize>,
    blocks: Vec<NodeBlocks>,
}

impl HierFactors {
    /// Builds the factors of `K'` over `tree`, whose node order must be a
    /// pre-order (parents before children).
    pub fn assemble(tree: &PartitionTree, points: &PointSet, spec: &KernelSpec) -> Result<Self> {
        if tree.num_points() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: tree.num_points(),
                found: points.len(),
            });
        }
        if tree.dim() != points.dim() {
            return Err(Error::DimensionMismatch {
                expected: tree.dim(),
                found: points.dim(),
            });
        }
        let shape: Vec<NodeShape> = tree
            .nodes()
            .iter()
            .map(|n| NodeShape {
                parent: n.parent,
                children: n.children,
                lo: n.lo,
                hi: n.hi,
            })
            .collect();

        let mut grams: Vec<Option<SpdFactor>> = alloc::vec![None; shape.len()];
        let mut blocks: Vec<NodeBlocks> = Vec::with_capacity(shape.len());
        for node in tree.nodes() {
            let id = node.id;
            if node.is_leaf() {
                let own = tree.indices(id);
                let diag = kernel_gram(spec, points, own);
                let basis = node.parent.map(|p| {
                    let lm = &tree.node(p).landmarks;
                    let mut t = kernel_block(spec, points, lm, own);
                    grams[p].as_ref().expect("parent precedes child").solve_mut(&mut t);
                    t.transpose()
                });
                blocks.push(NodeBlocks::Leaf { diag, basis });
            } else {
                let lm = &node.landmarks;
                let middle = kernel_gram(spec, points, lm);
                let factor = SpdFactor::new(middle.clone()).ok_or(Error::Factorization {
                    node: id,
                    stage: "landmark gram",
                })?;
                let transfer = node.parent.map(|g| {
                    let up = &tree.node(g).landmarks;
                    let mut t = kernel_block(spec, points, up, lm);
                    grams[g].as_ref().expect("parent precedes child").solve_mut(&mut t);
                    t.transpose()
                });
                grams[id] = Some(factor);
                blocks.push(NodeBlocks::Inner {
                    middle,
                    transfer,
                    gram: None,
                });
            }
        }
        for (b, g) in blocks.iter_mut().zip(grams) {
            if let NodeBlocks::Inner { gram, .. } = b {
                *gram = g;
            }
        }
        Ok(Self {
            shape,
            perm: tree.perm().to_vec(),
            blocks,
        })
    }

    /// Reassembles factors from stored parts after validating shapes.
    pub fn from_parts(shape: Vec<NodeShape>, perm: Vec<usize>, blocks: Vec<NodeBlocks>) -> Result<Self> {
        let h = Self { shape, perm, blocks };
        h.validate()?;
        Ok(h)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(alloc::format!("malformed factors: {msg}")));
        if self.shape.is_empty() || self.shape.len() != self.blocks.len() {
            return bad("node count");
        }
        let n = self.perm.len();
        if self.shape[0].lo != 0 || self.shape[0].hi != n || self.shape[0].parent.is_some() {
            return bad("root");
        }
        for (id, (s, b)) in self.shape.iter().zip(&self.blocks).enumerate() {
            if s.lo > s.hi || s.hi > n || (id > 0 && s.parent.is_none_or(|p| p >= id)) {
                return bad("node range");
            }
            let parent_rank = s.parent.and_then(|p| self.rank_of(p));
            match (b, s.children) {
                (NodeBlocks::Leaf { diag, basis }, None) => {
                    if diag.shape() != (s.size(), s.size()) {
                        return bad("leaf block");
                    }
                    match (basis, parent_rank) {
                        (Some(u), Some(r)) if u.shape() == (s.size(), r) => {}
                        (None, None) => {}
                        _ => return bad("leaf basis"),
                    }
                }
                (NodeBlocks::Inner { middle, transfer, gram }, Some([l, r])) => {
                    if l >= self.shape.len() || r >= self.shape.len() || l <= id || r <= id {
                        return bad("children");
                    }
                    let m = middle.nrows();
                    if middle.ncols() != m || gram.as_ref().is_some_and(|g| g.dim() != m) {
                        return bad("middle factor");
                    }
                    match (transfer, parent_rank) {
                        (Some(w), Some(pr)) if w.shape() == (m, pr) => {}
                        (None, None) => {}
                        _ => return bad("transfer"),
                    }
                }
                _ => return bad("block kind"),
            }
        }
        Ok(())
    }

    fn rank_of(&self, id: usize) -> Option<usize> {
        match &self.blocks[id] {
            NodeBlocks::Inner { middle, .. } => Some(middle.nrows()),
            NodeBlocks::Leaf { .. } => None,
        }
    }

    /// Number of rows (training points).
    pub fn n(&self) -> usize {
        self.perm.len()
    }

    pub fn shape(&self) -> &[NodeShape] {
        &self.shape
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn blocks(&self) -> &[NodeBlocks] {
        &self.blocks
    }

    pub fn block(&self, id: usize) -> &NodeBlocks {
        &self.blocks[id]
    }

    pub fn is_single_leaf(&self) -> bool {
        self.shape.len() == 1
    }

    /// Total number of reals held in factor blocks, Cholesky factors included.
    pub fn floats_stored(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| match b {
                NodeBlocks::Leaf { diag, basis } => diag.len() + basis.as_ref().map_or(0, |u| u.len()),
                NodeBlocks::Inner { middle, transfer, gram } => {
                    middle.len()
                        + transfer.as_ref().map_or(0, |w| w.len())
                        + gram.as_ref().map_or(0, |g| g.lower().len())
                }
            })
            .sum()
    }

    /// The represented matrix as a dense `n × n` array in training-index
    /// order. Fails for `n` above [`DENSE_CAP`].
    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        self.materialize_with_cap(DENSE_CAP)
    }

    pub fn materialize_with_cap(&self, cap: usize) -> Result<DMatrix<f64>> {
        let n = self.n();
        if n > cap {
            return Err(Error::CapExceeded { n, cap });
        }
        // Dense in tree order first, permuted at the end.
        let mut m = DMatrix::zeros(n, n);
        // Nested bases, filled children first.
        let mut nested: Vec<Option<DMatrix<f64>>> = alloc::vec![None; self.shape.len()];
        for id in (0..self.shape.len()).rev() {
            let s = &self.shape[id];
            match &self.blocks[id] {
                NodeBlocks::Leaf { diag, basis } => {
                    m.view_mut((s.lo, s.lo), (s.size(), s.size())).copy_from(diag);
                    nested[id] = basis.clone();
                }
                NodeBlocks::Inner { middle, transfer, .. } => {
                    let [a, b] = s.children.expect("inner node has children");
                    let va = nested[a].take().expect("child basis");
                    let vb = nested[b].take().expect("child basis");
                    let sa = &self.shape[a];
                    let sb = &self.shape[b];
                    let off = &va * middle * vb.transpose();
                    m.view_mut((sa.lo, sb.lo), (sa.size(), sb.size())).copy_from(&off);
                    m.view_mut((sb.lo, sa.lo), (sb.size(), sa.size()))
                        .copy_from(&off.transpose());
                    if let Some(w) = transfer {
                        let mut v = DMatrix::zeros(s.size(), w.ncols());
                        v.view_mut((0, 0), (sa.size(), w.ncols())).copy_from(&(&va * w));
                        v.view_mut((sa.size(), 0), (sb.size(), w.ncols())).copy_from(&(&vb * w));
                        nested[id] = Some(v);
                    }
                }
            }
        }
        let mut out = DMatrix::zeros(n, n);
        for (b, &j) in self.perm.iter().enumerate() {
            for (a, &i) in self.perm.iter().enumerate() {
                out[(i, j)] = m[(a, b)];
            }
        }
        Ok(out)
    }
}
