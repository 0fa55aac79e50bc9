use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::{HierFactors, NodeBlocks};
use crate::linalg::{symmetrize, SpdFactor};
use crate::{Error, Result};

/// Upward-pass results kept for the downward pass.
enum Up {
    Leaf {
        inv: DMatrix<f64>,
        basis: Option<DMatrix<f64>>,
    },
    Inner {
        sigma: DMatrix<f64>,
        transfer: Option<DMatrix<f64>>,
    },
}

impl HierFactors {
    /// Factors of `(A + shift·I)⁻¹`, with the same tree skeleton as `self`.
    ///
    /// Each subtree `i` is written as `B_i + V_i Σ_p V_iᵀ`, where `B_i` is
    /// what remains after removing the part carried by the parent's basis.
    /// `B_i⁻¹` follows from its children's by the Woodbury identity, in the
    /// form `-(I + Λ Ξ)⁻¹ Λ` that never inverts `Λ`, and the corrections
    /// from all ancestors are folded into the middle factors on the way
    /// down.
    ///
    /// For a multi-node tree `shift` must be positive: a leaf containing
    /// landmarks of its parent has a singular remainder `B_i` otherwise.
    pub fn invert(&self, shift: f64) -> Result<HierFactors> {
        if !(shift.is_finite() && shift >= 0.0) {
            return Err(Error::InvalidParameter(alloc::format!(
                "shift must be finite and nonnegative, got {shift}"
            )));
        }
        if self.is_single_leaf() {
            let NodeBlocks::Leaf { diag, .. } = &self.blocks[0] else {
                unreachable!("single node is a leaf")
            };
            let mut a = diag.clone();
            add_diag(&mut a, shift);
            let f = SpdFactor::new(a).ok_or(Error::Factorization {
                node: 0,
                stage: "dense block",
            })?;
            let mut out = self.clone();
            out.blocks[0] = NodeBlocks::Leaf {
                diag: f.inverse(),
                basis: None,
            };
            return Ok(out);
        }

        let count = self.shape.len();
        let mut theta: Vec<Option<DMatrix<f64>>> = alloc::vec![None; count];
        let mut up: Vec<Option<Up>> = (0..count).map(|_| None).collect();

        for id in (0..count).rev() {
            let s = &self.shape[id];
            match &self.blocks[id] {
                NodeBlocks::Leaf { diag, basis } => {
                    let u = basis.as_ref().expect("leaf below root has a basis");
                    let NodeBlocks::Inner { middle: sp, .. } = &self.blocks[s.parent.expect("parent")] else {
                        unreachable!("parent is inner")
                    };
                    let mut r = diag - u * sp * u.transpose();
                    add_diag(&mut r, shift);
                    symmetrize(&mut r);
                    let f = SpdFactor::new(r).ok_or(Error::Factorization {
                        node: id,
                        stage: "leaf remainder, upward pass",
                    })?;
                    let inv = f.inverse();
                    let ut = &inv * u;
                    theta[id] = Some(u.tr_mul(&ut));
                    up[id] = Some(Up::Leaf { inv, basis: Some(ut) });
                }
                NodeBlocks::Inner { middle, transfer, .. } => {
                    let [l, r] = s.children.expect("inner node has children");
                    let mut xi = theta[l].take().expect("child") + theta[r].take().expect("child");
                    symmetrize(&mut xi);
                    let lambda = match (transfer, s.parent) {
                        (Some(w), Some(p)) => {
                            let NodeBlocks::Inner { middle: sp, .. } = &self.blocks[p] else {
                                unreachable!("parent is inner")
                            };
                            let mut l = middle - w * sp * w.transpose();
                            symmetrize(&mut l);
                            l
                        }
                        _ => middle.clone(),
                    };
                    let k = lambda.nrows();
                    let system = DMatrix::identity(k, k) + &lambda * &xi;
                    let mut sigma = system.lu().solve(&lambda).ok_or(Error::Factorization {
                        node: id,
                        stage: "interior system, upward pass",
                    })?;
                    sigma.neg_mut();
                    symmetrize(&mut sigma);
                    let new_transfer = transfer.as_ref().map(|w| {
                        let wt = w + &sigma * (&xi * w);
                        theta[id] = Some(w.tr_mul(&(&xi * &wt)));
                        wt
                    });
                    if let Some(t) = theta[id].as_mut() {
                        symmetrize(t);
                    }
                    up[id] = Some(Up::Inner {
                        sigma,
                        transfer: new_transfer,
                    });
                }
            }
        }

        let mut blocks: Vec<NodeBlocks> = Vec::with_capacity(count);
        for (s, slot) in self.shape.iter().zip(up.iter_mut()) {
            let block = match slot.take().expect("upward result") {
                Up::Inner { mut sigma, transfer } => {
                    if let (Some(w), Some(p)) = (&transfer, s.parent) {
                        let NodeBlocks::Inner { middle: hp, .. } = &blocks[p] else {
                            unreachable!("parent is inner")
                        };
                        sigma += w * hp * w.transpose();
                        symmetrize(&mut sigma);
                    }
                    NodeBlocks::Inner {
                        middle: sigma,
                        transfer,
                        gram: None,
                    }
                }
                Up::Leaf { mut inv, basis } => {
                    let p = s.parent.expect("parent");
                    let NodeBlocks::Inner { middle: hp, .. } = &blocks[p] else {
                        unreachable!("parent is inner")
                    };
                    let ut = basis.as_ref().expect("basis");
                    inv += ut * hp * ut.transpose();
                    symmetrize(&mut inv);
                    NodeBlocks::Leaf { diag: inv, basis }
                }
            };
            blocks.push(block);
        }

        Ok(HierFactors {
            shape: self.shape.clone(),
            perm: self.perm.clone(),
            blocks,
        })
    }
}

fn add_diag(m: &mut DMatrix<f64>, v: f64) {
    if v != 0.0 {
        for i in 0..m.nrows() {
            m[(i, i)] += v;
        }
    }
}
