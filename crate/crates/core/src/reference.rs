//! Dense oracles for the hierarchical kernel.
//!
//! Everything here is `O(n²)` or worse and evaluates the kernel definition
//! directly, with fresh LU solves at every node. Nothing is shared with the
//! structured code in [`crate::hmatrix`] beyond pointwise kernel values, so
//! the two can be checked against each other.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::kernels::KernelSpec;
use crate::partition::PartitionTree;
use crate::{Error, PointSet, Result, DENSE_CAP};

fn check_cap(n: usize) -> Result<()> {
    if n > DENSE_CAP {
        return Err(Error::CapExceeded { n, cap: DENSE_CAP });
    }
    Ok(())
}

fn lu_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, node: usize) -> Result<DMatrix<f64>> {
    a.clone().lu().solve(b).ok_or(Error::Factorization {
        node,
        stage: "dense oracle solve",
    })
}

fn block(spec: &KernelSpec, points: &PointSet, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), cols.len());
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            m[(a, b)] = spec.jittered(points.row(i), points.row(j), i == j);
        }
    }
    m
}

/// `ψ⁽ⁱ⁾(X̱_i, X_i)` for every nonleaf node `i`: landmarks by the node's own
/// points (tree order), built from the leaves upward.
fn psi_matrices(tree: &PartitionTree, points: &PointSet, spec: &KernelSpec) -> Result<Vec<Option<DMatrix<f64>>>> {
    let mut psi: Vec<Option<DMatrix<f64>>> = alloc::vec![None; tree.len()];
    for node in tree.nodes().iter().rev() {
        let Some(children) = node.children else {
            continue;
        };
        let lm = &node.landmarks;
        let mut m = DMatrix::zeros(lm.len(), node.size());
        for c in children {
            let child = tree.node(c);
            let part = if child.is_leaf() {
                block(spec, points, lm, tree.indices(c))
            } else {
                let kc = block(spec, points, &child.landmarks, &child.landmarks);
                let inner = lu_solve(&kc, psi[c].as_ref().expect("child first"), c)?;
                block(spec, points, lm, &child.landmarks) * inner
            };
            m.view_mut((0, child.lo - node.lo), (lm.len(), child.size()))
                .copy_from(&part);
        }
        psi[node.id] = Some(m);
    }
    Ok(psi)
}

/// Scatters a tree-order block into a training-order matrix.
fn scatter(out: &mut DMatrix<f64>, rows: &[usize], cols: &[usize], m: &DMatrix<f64>) {
    for (b, &j) in cols.iter().enumerate() {
        for (a, &i) in rows.iter().enumerate() {
            out[(i, j)] = m[(a, b)];
        }
    }
}

/// The hierarchical kernel Gram matrix `K'_h(X, X)` in training order.
pub fn dense_hier(tree: &PartitionTree, points: &PointSet, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    let n = points.len();
    check_cap(n)?;
    let psi = psi_matrices(tree, points, spec)?;
    let mut out = DMatrix::zeros(n, n);
    for node in tree.nodes() {
        let own = tree.indices(node.id);
        match node.children {
            None => {
                let k = block(spec, points, own, own);
                scatter(&mut out, own, own, &k);
            }
            Some([a, b]) => {
                let p = psi[node.id].as_ref().expect("inner psi");
                let k = block(spec, points, &node.landmarks, &node.landmarks);
                let solved = lu_solve(&k, p, node.id)?;
                let (na, nb) = (tree.node(a), tree.node(b));
                let pa = p.columns(na.lo - node.lo, na.size());
                let sb = solved.columns(nb.lo - node.lo, nb.size());
                let cross = pa.tr_mul(&sb);
                scatter(&mut out, tree.indices(a), tree.indices(b), &cross);
                scatter(&mut out, tree.indices(b), tree.indices(a), &cross.transpose());
            }
        }
    }
    Ok(out)
}

/// `k'_h(x, x')` for two points in different leaves, by expanding the
/// product along both paths up to their lowest common ancestor.
///
/// `ix` and `iy` optionally name training indices for `x` and `x'`; the
/// jitter is then applied wherever a landmark is the same training point,
/// and that point follows the path of its training leaf.
pub fn dense_path_cov(
    tree: &PartitionTree,
    points: &PointSet,
    spec: &KernelSpec,
    x: &[f64],
    y: &[f64],
    ix: Option<usize>,
    iy: Option<usize>,
) -> Result<f64> {
    let leaf_for = |p: &[f64], id: Option<usize>| -> Result<usize> {
        match id {
            Some(k) => Ok(tree.leaf_assignment()[k]),
            None => tree.leaf_of(p),
        }
    };
    let lx = leaf_for(x, ix)?;
    let ly = leaf_for(y, iy)?;
    if lx == ly {
        return Err(Error::SameLeaf(lx));
    }
    let ancestors = |mut v: usize| {
        let mut path = alloc::vec![v];
        while let Some(p) = tree.node(v).parent {
            path.push(p);
            v = p;
        }
        path
    };
    let px = ancestors(lx);
    let py = ancestors(ly);
    let lca = *px.iter().find(|v| py.contains(v)).expect("common root");

    let climb = |path: &[usize], p: &[f64], id: Option<usize>| -> Result<DVector<f64>> {
        // ψ at the first nonleaf above the leaf, then lifted node by node.
        let first = path[1];
        let lm = &tree.node(first).landmarks;
        let mut v = DVector::from_fn(lm.len(), |a, _| spec.jittered(points.row(lm[a]), p, id == Some(lm[a])));
        for w in path[1..].windows(2) {
            if w[0] == lca {
                break;
            }
            let (lo, hi) = (&tree.node(w[0]).landmarks, &tree.node(w[1]).landmarks);
            let k = block(spec, points, lo, lo);
            let s = lu_solve(&k, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()), w[0])?;
            v = block(spec, points, hi, lo) * s.column(0);
        }
        Ok(v)
    };
    let vx = climb(&px, x, ix)?;
    let vy = climb(&py, y, iy)?;
    let lm = &tree.node(lca).landmarks;
    let k = block(spec, points, lm, lm);
    let s = lu_solve(&k, &DMatrix::from_column_slice(vy.len(), 1, vy.as_slice()), lca)?;
    Ok(vx.dot(&s.column(0)))
}

/// One positive semi-definite term per node, zero-padded to `n × n` in
/// training order, whose sum is [`dense_hier`].
///
/// A leaf contributes its Schur complement against the parent's landmarks
/// (or `K'` itself if it is the root); a nonleaf node `i` with parent `p`
/// contributes `Ψᵢᵀ K_i⁻¹ (K_i − K_ip K_p⁻¹ K_pi) K_i⁻¹ Ψᵢ`, and the root
/// contributes `Ψᵀ K⁻¹ Ψ`.
pub fn xi_decomposition(tree: &PartitionTree, points: &PointSet, spec: &KernelSpec) -> Result<Vec<DMatrix<f64>>> {
    let n = points.len();
    check_cap(n)?;
    let psi = psi_matrices(tree, points, spec)?;
    let mut terms = Vec::with_capacity(tree.len());
    for node in tree.nodes() {
        let own = tree.indices(node.id);
        let local = match (node.children, node.parent) {
            (None, None) => block(spec, points, own, own),
            (None, Some(p)) => {
                let lm = &tree.node(p).landmarks;
                let kp = block(spec, points, lm, lm);
                let kpx = block(spec, points, lm, own);
                let s = lu_solve(&kp, &kpx, p)?;
                block(spec, points, own, own) - kpx.tr_mul(&s)
            }
            (Some(_), parent) => {
                let lm = &node.landmarks;
                let ki = block(spec, points, lm, lm);
                let s = lu_solve(&ki, psi[node.id].as_ref().expect("inner psi"), node.id)?;
                let mid = match parent {
                    None => ki,
                    Some(p) => {
                        let up = &tree.node(p).landmarks;
                        let kp = block(spec, points, up, up);
                        let kpi = block(spec, points, up, lm);
                        let t = lu_solve(&kp, &kpi, p)?;
                        &ki - kpi.tr_mul(&t)
                    }
                };
                s.tr_mul(&(mid * &s))
            }
        };
        let mut full = DMatrix::zeros(n, n);
        scatter(&mut full, own, own, &local);
        terms.push(full);
    }
    Ok(terms)
}

/// The one-level compositional kernel: exact within each cell, and
/// `K'(x, L) K'(L, L)⁻¹ K'(L, x')` across cells.
pub fn dense_compositional(
    points: &PointSet,
    spec: &KernelSpec,
    cells: &[Vec<usize>],
    landmarks: &[usize],
) -> Result<DMatrix<f64>> {
    let n = points.len();
    check_cap(n)?;
    let all: Vec<usize> = (0..n).collect();
    let kl = block(spec, points, landmarks, landmarks);
    let klx = block(spec, points, landmarks, &all);
    let s = lu_solve(&kl, &klx, 0)?;
    let mut out = klx.tr_mul(&s);
    for cell in cells {
        let k = block(spec, points, cell, cell);
        scatter(&mut out, cell, cell, &k);
    }
    Ok(out)
}

/// The exact Gram `K'(X, X)`.
pub fn dense_gram(points: &PointSet, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    let n = points.len();
    check_cap(n)?;
    let all: Vec<usize> = (0..n).collect();
    Ok(block(spec, points, &all, &all))
}

/// The Nyström Gram `K'(X, L) K'(L, L)⁻¹ K'(L, X)`.
pub fn dense_nystrom(points: &PointSet, spec: &KernelSpec, landmarks: &[usize]) -> Result<DMatrix<f64>> {
    dense_compositional(points, spec, &[], landmarks)
}
