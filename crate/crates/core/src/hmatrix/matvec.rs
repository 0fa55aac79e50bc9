use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::{HierFactors, NodeBlocks};
use crate::{Error, Result};

impl HierFactors {
    /// `y = A b` in `O(n r)` time using one upward and one downward pass.
    pub fn matvec(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: b.len(),
            });
        }
        let bt = DVector::from_iterator(n, self.perm.iter().map(|&i| b[i]));
        let yt = self.matvec_tree_order(&bt);
        let mut y = alloc::vec![0.0; n];
        for (a, &i) in self.perm.iter().enumerate() {
            y[i] = yt[a];
        }
        Ok(y)
    }

    /// `A B` for several right-hand sides (columns of `b`, training order).
    pub fn matmul(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for (k, col) in b.column_iter().enumerate() {
            let y = self.matvec(col.as_slice())?;
            out.column_mut(k).copy_from_slice(&y);
        }
        Ok(out)
    }

    pub(crate) fn matvec_tree_order(&self, b: &DVector<f64>) -> DVector<f64> {
        let count = self.shape.len();
        let mut y = DVector::zeros(b.len());

        // Upward: c_i = U_iᵀ b_i at leaves, W_iᵀ (Σ_children c) above.
        let mut c: Vec<Option<DVector<f64>>> = alloc::vec![None; count];
        for id in (0..count).rev() {
            let s = &self.shape[id];
            if s.parent.is_none() {
                continue;
            }
            c[id] = match &self.blocks[id] {
                NodeBlocks::Leaf { basis, .. } => basis.as_ref().map(|u| u.tr_mul(&b.rows(s.lo, s.size()))),
                NodeBlocks::Inner { transfer, .. } => {
                    let [l, r] = s.children.expect("inner node has children");
                    let sum = c[l].as_ref().expect("child") + c[r].as_ref().expect("child");
                    transfer.as_ref().map(|w| w.tr_mul(&sum))
                }
            };
        }

        // Downward: d_j = Σ_p c_sibling + W_p d_p.
        let mut d: Vec<Option<DVector<f64>>> = alloc::vec![None; count];
        for id in 0..count {
            let s = &self.shape[id];
            match &self.blocks[id] {
                NodeBlocks::Inner { middle, transfer, .. } => {
                    let [l, r] = s.children.expect("inner node has children");
                    let inherited = match (transfer, &d[id]) {
                        (Some(w), Some(dp)) => Some(w * dp),
                        _ => None,
                    };
                    for (child, sib) in [(l, r), (r, l)] {
                        let mut v = middle * c[sib].as_ref().expect("sibling");
                        if let Some(h) = &inherited {
                            v += h;
                        }
                        d[child] = Some(v);
                    }
                }
                NodeBlocks::Leaf { diag, basis } => {
                    let mut out = diag * b.rows(s.lo, s.size());
                    if let (Some(u), Some(dl)) = (basis, &d[id]) {
                        out.gemv(1.0, u, dl, 1.0);
                    }
                    y.rows_mut(s.lo, s.size()).copy_from(&out);
                }
            }
            c[id] = None;
        }
        y
    }
}
