//! Random projection partitioning tree.
//!
//! Each node whose point count exceeds the leaf capacity `n0` is split by a
//! hyperplane with a random normal direction placed at the median of the
//! projected coordinates, so the two children differ in size by at most one.
//! Every nonleaf node also carries up to `r` landmark points drawn uniformly
//! without replacement from its own points.
//!
//! Randomness comes from ChaCha8 with one stream per node. The stream is the
//! node's heap index (root 1, children `2h` and `2h + 1`), so the tree is a
//! pure function of `(points, n0, r, seed)` regardless of build order.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, PointSet, Result};

/// Leaf capacity and landmark count for a balanced tree with `levels` levels
/// below the root: `n0 = ⌈n / 2ʲ⌉`, `r = ⌊n / 2ʲ⌋`.
pub fn levels_to_sizes(n: usize, levels: u32) -> Result<(usize, usize)> {
    if n == 0 {
        return Err(Error::Empty);
    }
    let max = usize::BITS - 1 - n.leading_zeros();
    if levels > max {
        return Err(Error::LevelsOutOfRange { n, levels, max });
    }
    let p = 1usize << levels;
    Ok((n.div_ceil(p), n / p))
}

/// Splitting hyperplane of a nonleaf node.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    /// Unit normal.
    pub direction: Vec<f64>,
    /// Points whose projection is `<= threshold` belong to the left child.
    pub threshold: f64,
}

impl Split {
    #[inline]
    pub fn project(&self, x: &[f64]) -> f64 {
        project(&self.direction, x)
    }

    #[inline]
    pub fn goes_left(&self, x: &[f64]) -> bool {
        self.project(x) <= self.threshold
    }
}

#[inline]
fn project(direction: &[f64], x: &[f64]) -> f64 {
    direction.iter().zip(x).map(|(a, b)| a * b).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    /// `[left, right]` for nonleaf nodes.
    pub children: Option<[usize; 2]>,
    /// Half-open range into [`PartitionTree::perm`].
    pub lo: usize,
    pub hi: usize,
    pub split: Option<Split>,
    /// Training indices of the landmark points (nonleaf nodes only).
    pub landmarks: Vec<usize>,
}

impl TreeNode {
    #[inline]
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    #[inline]
    pub fn is_root(&self) -> bool {
        self.parent.is_none()
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.hi - self.lo
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionTree {
    nodes: Vec<TreeNode>,
    perm: Vec<usize>,
    leaf_capacity: usize,
    rank: usize,
    seed: u64,
    dim: usize,
}

impl PartitionTree {
    /// Builds the tree over all rows of `points`.
    pub fn build(points: &PointSet, leaf_capacity: usize, rank: usize, seed: u64) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::Empty);
        }
        if leaf_capacity == 0 {
            return Err(Error::InvalidParameter("leaf capacity must be at least 1".into()));
        }
        if rank == 0 {
            return Err(Error::InvalidParameter("rank must be at least 1".into()));
        }
        if rank > leaf_capacity {
            return Err(Error::RankExceedsLeaf {
                rank,
                leaf_size: leaf_capacity,
            });
        }
        let mut tree = PartitionTree {
            nodes: Vec::new(),
            perm: (0..n).collect(),
            leaf_capacity,
            rank,
            seed,
            dim: points.dim(),
        };
        let mut keys: Vec<(f64, usize)> = Vec::with_capacity(n);
        tree.build_node(points, None, 0, n, 1, &mut keys);
        Ok(tree)
    }

    fn build_node(
        &mut self,
        points: &PointSet,
        parent: Option<usize>,
        lo: usize,
        hi: usize,
        heap: u64,
        keys: &mut Vec<(f64, usize)>,
    ) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            id,
            parent,
            children: None,
            lo,
            hi,
            split: None,
            landmarks: Vec::new(),
        });
        let m = hi - lo;
        if m <= self.leaf_capacity {
            return id;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(heap);
        let direction = random_direction(&mut rng, self.dim);

        keys.clear();
        keys.extend(
            self.perm[lo..hi]
                .iter()
                .map(|&i| (project(&direction, points.row(i)), i)),
        );
        keys.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (slot, &(_, i)) in self.perm[lo..hi].iter_mut().zip(keys.iter()) {
            *slot = i;
        }
        let left = m.div_ceil(2);
        let threshold = keys[left - 1].0;

        let take = self.rank.min(m);
        let landmarks = rand::seq::index::sample(&mut rng, m, take)
            .into_iter()
            .map(|pos| self.perm[lo + pos])
            .collect();

        let node = &mut self.nodes[id];
        node.split = Some(Split { direction, threshold });
        node.landmarks = landmarks;

        let mid = lo + left;
        let l = self.build_node(points, Some(id), lo, mid, 2 * heap, keys);
        let r = self.build_node(points, Some(id), mid, hi, 2 * heap + 1, keys);
        self.nodes[id].children = Some([l, r]);
        id
    }

    /// Reassembles a tree from stored parts, checking structural invariants.
    pub fn from_parts(
        nodes: Vec<TreeNode>,
        perm: Vec<usize>,
        leaf_capacity: usize,
        rank: usize,
        seed: u64,
        dim: usize,
    ) -> Result<Self> {
        let bad = |msg: &str| Err(Error::InvalidParameter(alloc::format!("malformed tree: {msg}")));
        if nodes.is_empty() || dim == 0 {
            return bad("no nodes");
        }
        let n = perm.len();
        let mut seen = alloc::vec![false; n];
        for &p in &perm {
            if p >= n || seen[p] {
                return bad("permutation");
            }
            seen[p] = true;
        }
        for (k, node) in nodes.iter().enumerate() {
            if node.id != k || node.lo > node.hi || node.hi > n {
                return bad("node range");
            }
            if node.parent.is_none_or(|p| p >= k) != (k == 0) {
                return bad("parent order");
            }
            match (node.children, &node.split) {
                (Some([l, r]), Some(s)) => {
                    if l <= k || r <= k || l >= nodes.len() || r >= nodes.len() {
                        return bad("child index");
                    }
                    if nodes[l].parent != Some(k) || nodes[r].parent != Some(k) {
                        return bad("child parent link");
                    }
                    if nodes[l].lo != node.lo || nodes[l].hi != nodes[r].lo || nodes[r].hi != node.hi {
                        return bad("child ranges");
                    }
                    if s.direction.len() != dim {
                        return bad("split direction");
                    }
                    if node.landmarks.iter().any(|&i| i >= n) {
                        return bad("landmark index");
                    }
                }
                (None, None) => {}
                _ => return bad("split without children"),
            }
        }
        if nodes[0].lo != 0 || nodes[0].hi != n {
            return bad("root range");
        }
        Ok(Self {
            nodes,
            perm,
            leaf_capacity,
            rank,
            seed,
            dim,
        })
    }

    /// Node ids from the root to the leaf whose cell contains `x`.
    pub fn locate_leaf(&self, x: &[f64]) -> Result<Vec<usize>> {
        self.check_dim(x)?;
        let mut path = Vec::with_capacity(8);
        let mut id = 0;
        loop {
            path.push(id);
            let node = &self.nodes[id];
            match (&node.split, node.children) {
                (Some(s), Some([l, r])) => id = if s.goes_left(x) { l } else { r },
                _ => return Ok(path),
            }
        }
    }

    /// Leaf id for `x` without recording the path.
    pub fn leaf_of(&self, x: &[f64]) -> Result<usize> {
        self.check_dim(x)?;
        let mut id = 0;
        while let (Some(s), Some([l, r])) = (&self.nodes[id].split, self.nodes[id].children) {
            id = if s.goes_left(x) { l } else { r };
        }
        Ok(id)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Training indices of the points in node `id`.
    pub fn indices(&self, id: usize) -> &[usize] {
        let n = &self.nodes[id];
        &self.perm[n.lo..n.hi]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of training points.
    pub fn num_points(&self) -> usize {
        self.perm.len()
    }

    pub fn leaf_capacity(&self) -> usize {
        self.leaf_capacity
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        let mut depth = alloc::vec![0usize; self.nodes.len()];
        for n in &self.nodes[1..] {
            depth[n.id] = depth[n.parent.unwrap()] + 1;
        }
        depth.into_iter().max().unwrap_or(0)
    }

    /// Leaf id for every training index.
    pub fn leaf_assignment(&self) -> Vec<usize> {
        let mut out = alloc::vec![0; self.perm.len()];
        for leaf in self.leaves() {
            for &i in &self.perm[leaf.lo..leaf.hi] {
                out[i] = leaf.id;
            }
        }
        out
    }

    /// Sibling of a nonroot node.
    pub fn sibling(&self, id: usize) -> Option<usize> {
        let p = self.nodes[id].parent?;
        let [l, r] = self.nodes[p].children?;
        Some(if l == id { r } else { l })
    }
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = num_traits::Float::sqrt(v.iter().map(|a| a * a).sum::<f64>());
        if norm > 1e-300 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn grid_points(n: usize, d: usize) -> PointSet {
        let data = (0..n * d)
            .map(|k| {
                let x = (k as f64 * 0.618_033_988_75).fract();
                2.0 * x - 1.0
            })
            .collect();
        PointSet::new(d, data).unwrap()
    }

    #[test]
    fn sizes_from_levels() {
        assert_eq!(levels_to_sizes(16512, 9).unwrap(), (33, 32));
        assert_eq!(levels_to_sizes(16512, 7).unwrap(), (129, 129));
        assert_eq!(levels_to_sizes(16512, 5).unwrap(), (516, 516));
        assert_eq!(levels_to_sizes(8, 0).unwrap(), (8, 8));
        assert_eq!(levels_to_sizes(8, 3).unwrap(), (1, 1));
        assert!(matches!(
            levels_to_sizes(8, 4),
            Err(Error::LevelsOutOfRange { max: 3, .. })
        ));
    }

    #[test]
    fn eight_points_four_leaves() {
        let p = grid_points(8, 2);
        let t = PartitionTree::build(&p, 2, 2, 3).unwrap();
        assert_eq!(t.depth(), 2);
        let leaves: Vec<usize> = t.leaves().map(|l| l.size()).collect();
        assert_eq!(leaves, vec![2, 2, 2, 2]);
        assert_eq!(t.len(), 7);
    }

    #[test]
    fn nine_points_leaf_sizes() {
        let p = grid_points(9, 3);
        let t = PartitionTree::build(&p, 2, 2, 11).unwrap();
        let mut sizes: Vec<usize> = t.leaves().map(|l| l.size()).collect();
        // 9 -> 5 + 4 -> (3 + 2) + (2 + 2); a 3-point leaf exceeds n0 = 2 and splits again.
        assert_eq!(sizes.iter().sum::<usize>(), 9);
        sizes.sort();
        assert!(sizes.iter().all(|&s| (1..=2).contains(&s)));
    }

    #[test]
    fn single_leaf_tree() {
        let p = grid_points(5, 2);
        let t = PartitionTree::build(&p, 8, 4, 0).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.root().is_leaf());
        assert!(t.root().landmarks.is_empty());
        assert_eq!(t.locate_leaf(p.row(2)).unwrap(), vec![0]);
    }

    #[test]
    fn rank_above_capacity_rejected() {
        let p = grid_points(10, 2);
        assert!(matches!(
            PartitionTree::build(&p, 2, 3, 0),
            Err(Error::RankExceedsLeaf { rank: 3, leaf_size: 2 })
        ));
    }

    #[test]
    fn tie_goes_left() {
        let p = grid_points(16, 2);
        let t = PartitionTree::build(&p, 4, 2, 5).unwrap();
        let s = t.root().split.as_ref().unwrap();
        // A point whose projection equals the threshold exactly.
        let dir = &s.direction;
        let x = [dir[0] * s.threshold, dir[1] * s.threshold];
        if s.project(&x) == s.threshold {
            assert_eq!(t.locate_leaf(&x).unwrap()[1], t.root().children.unwrap()[0]);
        }
        let exact = Split {
            direction: vec![1.0, 0.0],
            threshold: 0.25,
        };
        assert!(exact.goes_left(&[0.25, 7.0]));
        assert!(!exact.goes_left(&[0.2500001, 7.0]));
    }

    #[test]
    fn landmarks_belong_to_node() {
        let p = grid_points(100, 3);
        let t = PartitionTree::build(&p, 10, 6, 9).unwrap();
        for node in t.nodes() {
            if node.is_leaf() {
                assert!(node.landmarks.is_empty());
                continue;
            }
            assert_eq!(node.landmarks.len(), 6);
            let idx = t.indices(node.id);
            let mut lm = node.landmarks.clone();
            lm.sort();
            lm.dedup();
            assert_eq!(lm.len(), 6);
            assert!(lm.iter().all(|i| idx.contains(i)));
            let norm: f64 = node.split.as_ref().unwrap().direction.iter().map(|a| a * a).sum();
            assert!((norm.sqrt() - 1.0).abs() <= 1e-12);
        }
    }
}
