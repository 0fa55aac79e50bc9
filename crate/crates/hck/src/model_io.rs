//! Model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HCKM"  u32 version  u64 header_len  header (TOML, UTF-8)
//! then sections: [u8; 4] tag  u64 len  payload
//! ```
//!
//! Matrices are written as `u64 rows, u64 cols` followed by the entries in
//! row-major order as 8-byte reals. Every read is bounds-checked, so a
//! truncated file is reported rather than misread.

use std::path::Path;

use hck_core::baselines::{NystromMap, RffMap};
use hck_core::hmatrix::OosState;
use hck_core::kernels::{KernelFamily, KernelSpec};
use hck_core::learner::{FeatureScaling, Predictor};
use hck_core::linalg::SpdFactor;
use hck_core::partition::{Split, TreeNode};
use hck_core::{Method, Model, PartitionTree, PointSet, Task};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 4] = b"HCKM";
pub const VERSION: u32 = 1;
pub const SUPPORTED_VERSIONS: &[u32] = &[1];

#[derive(Debug, thiserror::Error)]
pub enum ModelIoError {
    #[error("not a model file")]
    NotAModel,
    #[error("unsupported model format version {found} (supported: {supported:?})")]
    Version { found: u32, supported: &'static [u32] },
    #[error("truncated model file ({0})")]
    Truncated(&'static str),
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] hck_core::Error),
}

type Result<T> = std::result::Result<T, ModelIoError>;

fn malformed(msg: impl Into<String>) -> ModelIoError {
    ModelIoError::Malformed(msg.into())
}

/// Human-readable summary stored in front of the binary payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub method: String,
    pub kernel: String,
    pub sigma: f64,
    pub lambda: f64,
    pub jitter: f64,
    pub task: String,
    pub classes: Vec<f64>,
    pub leaf_size: usize,
    pub rank: usize,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub floats_stored: usize,
}

impl Header {
    fn of(model: &Model) -> Self {
        Self {
            method: model.method.name().into(),
            kernel: model.spec.family().name().into(),
            sigma: model.spec.sigma(),
            lambda: model.lambda,
            jitter: model.spec.jitter(),
            task: model.task.name().into(),
            classes: model.classes.clone(),
            leaf_size: model.leaf_size,
            rank: model.rank,
            seed: model.seed,
            n: model.n_train,
            d: model.dim,
            floats_stored: model.floats_stored,
        }
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn indices(&mut self, v: &[usize]) {
        self.usize(v.len());
        v.iter().for_each(|&i| self.usize(i));
    }

    fn reals(&mut self, v: &[f64]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }

    fn matrix(&mut self, m: &DMatrix<f64>) {
        self.usize(m.nrows());
        self.usize(m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)]);
            }
        }
    }

    fn opt_matrix(&mut self, m: Option<&DMatrix<f64>>) {
        match m {
            Some(m) => {
                self.u8(1);
                self.matrix(m);
            }
            None => self.u8(0),
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(ModelIoError::Truncated(self.what))?;
        let s = self.buf.get(self.pos..end).ok_or(ModelIoError::Truncated(self.what))?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| malformed("size overflow"))
    }

    /// A length that must fit in the remaining bytes at `unit` bytes each.
    fn len(&mut self, unit: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.checked_mul(unit).is_none_or(|b| b > self.buf.len() - self.pos) {
            return Err(ModelIoError::Truncated(self.what));
        }
        Ok(n)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn indices(&mut self) -> Result<Vec<usize>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.usize()).collect()
    }

    fn reals(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| malformed("matrix size overflow"))?;
        if count.checked_mul(8).is_none_or(|b| b > self.buf.len() - self.pos) {
            return Err(ModelIoError::Truncated(self.what));
        }
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = self.f64()?;
            }
        }
        Ok(m)
    }

    fn opt_matrix(&mut self) -> Result<Option<DMatrix<f64>>> {
        match self.u8()? {
            0 => Ok(None),
            1 => self.matrix().map(Some),
            _ => Err(malformed("bad presence flag")),
        }
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(malformed(format!("trailing bytes in {}", self.what)));
        }
        Ok(())
    }
}

fn write_tree(w: &mut Writer, t: &PartitionTree) {
    w.usize(t.dim());
    w.usize(t.leaf_capacity());
    w.usize(t.rank());
    w.u64(t.seed());
    w.indices(t.perm());
    w.usize(t.len());
    for node in t.nodes() {
        w.usize(node.parent.map_or(0, |p| p + 1));
        w.usize(node.lo);
        w.usize(node.hi);
        match (node.children, &node.split) {
            (Some([l, r]), Some(s)) => {
                w.u8(1);
                w.usize(l);
                w.usize(r);
                w.f64(s.threshold);
                w.reals(&s.direction);
            }
            _ => w.u8(0),
        }
        w.indices(&node.landmarks);
    }
}

fn read_tree(r: &mut Reader) -> Result<PartitionTree> {
    let dim = r.usize()?;
    let leaf_capacity = r.usize()?;
    let rank = r.usize()?;
    let seed = r.u64()?;
    let perm = r.indices()?;
    let count = r.len(8 * 3 + 1)?;
    let mut nodes = Vec::with_capacity(count);
    for id in 0..count {
        let parent = r.usize()?.checked_sub(1);
        let lo = r.usize()?;
        let hi = r.usize()?;
        let (children, split) = match r.u8()? {
            0 => (None, None),
            1 => {
                let l = r.usize()?;
                let rr = r.usize()?;
                let threshold = r.f64()?;
                let direction = r.reals()?;
                (Some([l, rr]), Some(Split { direction, threshold }))
            }
            _ => return Err(malformed("bad node kind")),
        };
        let landmarks = r.indices()?;
        nodes.push(TreeNode {
            id,
            parent,
            children,
            lo,
            hi,
            split,
            landmarks,
        });
    }
    Ok(PartitionTree::from_parts(nodes, perm, leaf_capacity, rank, seed, dim)?)
}

fn write_points(w: &mut Writer, p: &PointSet) {
    w.usize(p.len());
    w.usize(p.dim());
    p.as_slice().iter().for_each(|&v| w.f64(v));
}

fn read_points(r: &mut Reader) -> Result<PointSet> {
    let n = r.usize()?;
    let d = r.usize()?;
    let count = n.checked_mul(d).ok_or_else(|| malformed("point count overflow"))?;
    if count.checked_mul(8).is_none_or(|b| b > r.buf.len() - r.pos) {
        return Err(ModelIoError::Truncated(r.what));
    }
    let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    Ok(PointSet::new(d, data)?)
}

fn write_weights(w: &mut Writer, ws: &[Vec<f64>]) {
    w.usize(ws.len());
    ws.iter().for_each(|v| w.reals(v));
}

fn read_weights(r: &mut Reader) -> Result<Vec<Vec<f64>>> {
    let k = r.len(8)?;
    (0..k).map(|_| r.reals()).collect()
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], body: Writer) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(body.buf.len() as u64).to_le_bytes());
    out.extend_from_slice(&body.buf);
}

/// Serializes `model`.
pub fn to_bytes(model: &Model) -> Vec<u8> {
    let header = toml::to_string(&Header::of(model)).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());

    if let Some(s) = &model.scaling {
        let mut w = Writer::default();
        w.reals(&s.mins);
        w.reals(&s.maxs);
        section(&mut out, b"SCAL", w);
    }
    match &model.predictor {
        Predictor::Hierarchical(state) => {
            let mut w = Writer::default();
            write_tree(&mut w, state.tree());
            section(&mut out, b"TREE", w);
            let mut w = Writer::default();
            write_points(&mut w, state.points());
            section(&mut out, b"PNTS", w);
            let mut w = Writer::default();
            for (g, t) in state.grams().iter().zip(state.transfers()) {
                w.opt_matrix(g.as_ref().map(|g| g.lower()));
                w.opt_matrix(t.as_ref());
            }
            section(&mut out, b"FACT", w);
            let mut w = Writer::default();
            write_weights(&mut w, state.weights());
            for per_output in state.coeffs() {
                for c in per_output {
                    match c {
                        Some(v) => {
                            w.u8(1);
                            w.reals(v.as_slice());
                        }
                        None => w.u8(0),
                    }
                }
            }
            section(&mut out, b"WGHT", w);
        }
        Predictor::Nystrom { map, coef } => {
            let mut w = Writer::default();
            write_points(&mut w, map.landmarks());
            w.indices(map.indices());
            w.matrix(map.factor().lower());
            w.matrix(coef);
            section(&mut out, b"NYST", w);
        }
        Predictor::Fourier { map, coef } => {
            let mut w = Writer::default();
            w.matrix(map.omegas());
            w.reals(map.phases().as_slice());
            w.matrix(coef);
            section(&mut out, b"RFFM", w);
        }
        Predictor::Independent {
            tree, points, weights, ..
        } => {
            let mut w = Writer::default();
            write_tree(&mut w, tree);
            section(&mut out, b"TREE", w);
            let mut w = Writer::default();
            write_points(&mut w, points);
            section(&mut out, b"PNTS", w);
            let mut w = Writer::default();
            write_weights(&mut w, weights);
            section(&mut out, b"WGHT", w);
        }
    }
    out
}

/// Deserializes a model written by [`to_bytes`].
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(ModelIoError::NotAModel);
    }
    let mut r = Reader::new(&bytes[4..], "preamble");
    let version = r.u32()?;
    if !SUPPORTED_VERSIONS.contains(&version) {
        return Err(ModelIoError::Version {
            found: version,
            supported: SUPPORTED_VERSIONS,
        });
    }
    let hlen = r.len(1)?;
    let text = std::str::from_utf8(r.take(hlen)?).map_err(|_| malformed("header is not UTF-8"))?;
    let header: Header = toml::from_str(text).map_err(|e| malformed(format!("header: {e}")))?;

    let mut sections: Vec<([u8; 4], &[u8])> = Vec::new();
    while r.pos < r.buf.len() {
        let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
        let len = r.len(1)?;
        sections.push((tag, r.take(len)?));
    }
    let find = |tag: &[u8; 4]| sections.iter().find(|(t, _)| t == tag).map(|(_, b)| *b);
    let need = |tag: &'static [u8; 4], what: &'static str| -> Result<Reader> {
        find(tag)
            .map(|b| Reader::new(b, what))
            .ok_or_else(|| malformed(format!("missing {what} section")))
    };

    let method = Method::from_name(&header.method).ok_or_else(|| malformed("unknown method"))?;
    let family = KernelFamily::from_name(&header.kernel).ok_or_else(|| malformed("unknown kernel"))?;
    let task = Task::from_name(&header.task).ok_or_else(|| malformed("unknown task"))?;
    let spec = KernelSpec::new(family, header.sigma, header.jitter)?;

    let scaling = match find(b"SCAL") {
        Some(b) => {
            let mut s = Reader::new(b, "scaling");
            let mins = s.reals()?;
            let maxs = s.reals()?;
            s.finish()?;
            if mins.len() != header.d || maxs.len() != header.d {
                return Err(malformed("scaling dimension"));
            }
            Some(FeatureScaling { mins, maxs })
        }
        None => None,
    };

    let outputs = if task == Task::Multiclass {
        header.classes.len()
    } else {
        1
    };
    let predictor = match method {
        Method::Hierarchical => {
            let mut t = need(b"TREE", "tree")?;
            let tree = read_tree(&mut t)?;
            t.finish()?;
            let mut p = need(b"PNTS", "points")?;
            let points = read_points(&mut p)?;
            p.finish()?;
            let mut f = need(b"FACT", "factors")?;
            let mut grams = Vec::with_capacity(tree.len());
            let mut transfers = Vec::with_capacity(tree.len());
            for _ in 0..tree.len() {
                grams.push(match f.opt_matrix()? {
                    Some(l) => Some(SpdFactor::from_lower(l).ok_or_else(|| malformed("gram factor"))?),
                    None => None,
                });
                transfers.push(f.opt_matrix()?);
            }
            f.finish()?;
            let mut w = need(b"WGHT", "weights")?;
            let weights = read_weights(&mut w)?;
            let mut coeffs = Vec::with_capacity(weights.len());
            for _ in 0..weights.len() {
                let mut per = Vec::with_capacity(tree.len());
                for _ in 0..tree.len() {
                    per.push(match w.u8()? {
                        0 => None,
                        1 => Some(DVector::from_vec(w.reals()?)),
                        _ => return Err(malformed("bad presence flag")),
                    });
                }
                coeffs.push(per);
            }
            w.finish()?;
            Predictor::Hierarchical(OosState::from_parts(
                tree, spec, points, grams, transfers, weights, coeffs,
            )?)
        }
        Method::Nystrom => {
            let mut s = need(b"NYST", "Nystrom")?;
            let landmarks = read_points(&mut s)?;
            let indices = s.indices()?;
            let lower = SpdFactor::from_lower(s.matrix()?).ok_or_else(|| malformed("Nystrom factor"))?;
            let coef = s.matrix()?;
            s.finish()?;
            let map = NystromMap::from_parts(spec, landmarks, indices, lower)?;
            if coef.nrows() != map.rank() {
                return Err(malformed("Nystrom coefficients"));
            }
            Predictor::Nystrom { map, coef }
        }
        Method::Fourier => {
            let mut s = need(b"RFFM", "Fourier")?;
            let omegas = s.matrix()?;
            let phases = DVector::from_vec(s.reals()?);
            let coef = s.matrix()?;
            s.finish()?;
            let map = RffMap::from_parts(omegas, phases)?;
            if coef.nrows() != map.rank() || map.dim() != header.d {
                return Err(malformed("Fourier coefficients"));
            }
            Predictor::Fourier { map, coef }
        }
        Method::Independent => {
            let mut t = need(b"TREE", "tree")?;
            let tree = read_tree(&mut t)?;
            t.finish()?;
            let mut p = need(b"PNTS", "points")?;
            let points = read_points(&mut p)?;
            p.finish()?;
            let mut w = need(b"WGHT", "weights")?;
            let weights = read_weights(&mut w)?;
            w.finish()?;
            if points.len() != tree.num_points() || weights.iter().any(|v| v.len() != points.len()) {
                return Err(malformed("independent weights"));
            }
            Predictor::Independent {
                tree,
                points,
                spec,
                weights,
            }
        }
    };

    let stored_outputs = match &predictor {
        Predictor::Hierarchical(s) => s.outputs(),
        Predictor::Nystrom { coef, .. } | Predictor::Fourier { coef, .. } => coef.ncols(),
        Predictor::Independent { weights, .. } => weights.len(),
    };
    if stored_outputs != outputs {
        return Err(malformed("output count does not match the task"));
    }

    Ok(Model {
        method,
        spec,
        lambda: header.lambda,
        task,
        classes: header.classes,
        seed: header.seed,
        leaf_size: header.leaf_size,
        rank: header.rank,
        n_train: header.n,
        dim: header.d,
        floats_stored: header.floats_stored,
        scaling,
        predictor,
    })
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    from_bytes(&std::fs::read(path)?)
}
