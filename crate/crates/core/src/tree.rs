//! Random split trees built by sequential ball insertion, plus per-tree
//! statistics: internal path length, Wiener index and root subtree sizes.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splitter::{Family, SplitSampler, SplitterSpec};

const NONE: u32 = u32::MAX;

/// The (b, s, s0, s1) split tree model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitTreeParams {
    pub b: usize,
    pub s: usize,
    pub s0: usize,
    pub s1: usize,
}

impl SplitTreeParams {
    pub fn new(b: usize, s: usize, s0: usize, s1: usize) -> Result<Self> {
        let p = SplitTreeParams { b, s, s0, s1 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let SplitTreeParams { b, s, s0, s1 } = *self;
        if b < 2 {
            return Err(Error::InvalidParams(format!("branching factor b = {b} must be >= 2")));
        }
        if s == 0 {
            return Err(Error::InvalidParams("vertex capacity s must be > 0".into()));
        }
        if s0 > s {
            return Err(Error::InvalidParams(format!(
                "violates 0 ≤ s0 ≤ s (s0 = {s0}, s = {s})"
            )));
        }
        if b * s1 > s + 1 - s0 {
            return Err(Error::InvalidParams(format!(
                "violates 0 ≤ b·s1 ≤ s + 1 − s0 (b·s1 = {}, s + 1 − s0 = {})",
                b * s1,
                s + 1 - s0
            )));
        }
        Ok(())
    }

    /// Checks that the tree and the splitter agree on the branching factor.
    pub fn check_splitter(&self, spec: &SplitterSpec) -> Result<()> {
        if spec.b() != self.b {
            return Err(Error::InvalidParams(format!(
                "tree branching factor b = {} differs from splitter b = {}",
                self.b,
                spec.b()
            )));
        }
        Ok(())
    }

    /// The standard parameters for a family (binary and m-ary search trees,
    /// median-of-(2k+1) trees); other families get (b, 1, 1, 0).
    pub fn default_for(family: &Family) -> Self {
        match family {
            Family::BinarySearchTree => SplitTreeParams { b: 2, s: 1, s0: 1, s1: 0 },
            Family::BarySearchTree { b } => SplitTreeParams { b: *b, s: b - 1, s0: b - 1, s1: 0 },
            Family::MedianOf { k } => SplitTreeParams { b: 2, s: 2 * *k, s0: 1, s1: *k },
            other => SplitTreeParams { b: other.branching(), s: 1, s0: 1, s1: 0 },
        }
    }

    /// eta_n = n - s0 - b s1, the number of balls routed by the split vector
    /// when a node of subtree size n has split.
    pub fn eta(&self, n: usize) -> Option<usize> {
        if n <= self.s {
            return None;
        }
        Some(n - self.s0 - self.b * self.s1)
    }
}

#[derive(Clone, Debug)]
struct Node {
    parent: u32,
    first_child: u32,
    depth: u32,
    /// N(u)
    total: u64,
    /// balls held here; C(u) = balls.len()
    balls: Vec<u32>,
    /// offset of the split vector in `SplitTree::splits`
    split: u32,
}

impl Node {
    fn new(parent: u32, depth: u32) -> Self {
        Node { parent, first_child: NONE, depth, total: 0, balls: Vec::new(), split: NONE }
    }
}

/// A realized split tree.
#[derive(Clone, Debug)]
pub struct SplitTree {
    params: SplitTreeParams,
    nodes: Vec<Node>,
    splits: Vec<f64>,
    ball_depths: Vec<u32>,
}

/// Per-node record for the debugging dump.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: u32,
    pub parent: Option<u32>,
    pub c: u32,
    pub n: u64,
    pub depth: u32,
}

/// Path length, Wiener index and root subtree sizes of one tree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeStats {
    pub path_length: u64,
    pub wiener: u128,
    pub root_subtree_sizes: Option<Vec<u64>>,
}

struct Builder<'a, R: Rng + ?Sized> {
    p: SplitTreeParams,
    sampler: &'a SplitSampler,
    rng: &'a mut R,
    nodes: Vec<Node>,
    splits: Vec<f64>,
    pending: Vec<(u32, u32)>,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn choose_child(&mut self, u: usize) -> u32 {
        let off = self.nodes[u].split as usize;
        let v = &self.splits[off..off + self.p.b];
        let x: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut pick = self.p.b - 1;
        for (i, &vi) in v.iter().enumerate() {
            acc += vi;
            if x < acc {
                pick = i;
                break;
            }
        }
        self.nodes[u].first_child + pick as u32
    }

    /// Adds `ball` to the subtree rooted at `start`, following the three
    /// insertion rules. Overflow may queue further insertions.
    fn insert(&mut self, ball: u32, start: u32) {
        self.pending.push((ball, start));
        while let Some((ball, mut u)) = self.pending.pop() {
            loop {
                let ui = u as usize;
                if self.nodes[ui].first_child != NONE {
                    self.nodes[ui].total += 1;
                    u = self.choose_child(ui);
                    continue;
                }
                if self.nodes[ui].balls.len() < self.p.s {
                    self.nodes[ui].balls.push(ball);
                    self.nodes[ui].total += 1;
                    break;
                }
                self.overflow(ui, ball);
                break;
            }
        }
    }

    fn overflow(&mut self, u: usize, ball: u32) {
        let SplitTreeParams { b, s, s0, s1 } = self.p;
        let mut balls = std::mem::take(&mut self.nodes[u].balls);
        balls.push(ball);
        balls.shuffle(self.rng);
        debug_assert_eq!(balls.len(), s + 1);

        let off = self.splits.len();
        self.splits.resize(off + b, 0.0);
        self.sampler.sample_into(self.rng, &mut self.splits[off..off + b]);

        let first = self.nodes.len() as u32;
        let depth = self.nodes[u].depth + 1;
        for i in 0..b {
            let mut child = Node::new(u as u32, depth);
            let lo = s0 + i * s1;
            child.balls.extend_from_slice(&balls[lo..lo + s1]);
            child.total = s1 as u64;
            self.nodes.push(child);
        }
        let node = &mut self.nodes[u];
        node.first_child = first;
        node.split = off as u32;
        node.total = (s + 1) as u64;
        node.balls = balls[..s0].to_vec();
        for &rest in balls[s0 + b * s1..].iter().rev() {
            let child = self.choose_child(u);
            self.pending.push((rest, child));
        }
    }
}

/// Builds a random split tree holding `n` balls.
pub fn build_tree<R: Rng + ?Sized>(
    params: &SplitTreeParams,
    spec: &SplitterSpec,
    n: usize,
    rng: &mut R,
) -> Result<SplitTree> {
    params.validate()?;
    params.check_splitter(spec)?;
    let sampler = spec.sampler();
    Ok(build_tree_with(params, &sampler, n, rng))
}

/// As [`build_tree`] with a prepared sampler and already validated params.
pub fn build_tree_with<R: Rng + ?Sized>(
    params: &SplitTreeParams,
    sampler: &SplitSampler,
    n: usize,
    rng: &mut R,
) -> SplitTree {
    let mut builder = Builder {
        p: *params,
        sampler,
        rng,
        nodes: vec![Node::new(NONE, 0)],
        splits: Vec::new(),
        pending: Vec::new(),
    };
    for ball in 0..n as u32 {
        builder.insert(ball, 0);
    }
    let Builder { nodes, splits, .. } = builder;
    let mut ball_depths = vec![0u32; n];
    for node in &nodes {
        for &ball in &node.balls {
            ball_depths[ball as usize] = node.depth;
        }
    }
    SplitTree { params: *params, nodes, splits, ball_depths }
}

impl SplitTree {
    pub fn params(&self) -> &SplitTreeParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.ball_depths.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn ball_depths(&self) -> &[u32] {
        &self.ball_depths
    }

    pub fn root_has_split(&self) -> bool {
        self.nodes[0].first_child != NONE
    }

    /// The split vector drawn at the root, if it has split.
    pub fn root_split_vector(&self) -> Option<&[f64]> {
        let off = self.nodes[0].split;
        (off != NONE).then(|| &self.splits[off as usize..off as usize + self.params.b])
    }

    fn children(&self, u: usize) -> std::ops::Range<usize> {
        let first = self.nodes[u].first_child;
        if first == NONE {
            0..0
        } else {
            first as usize..first as usize + self.params.b
        }
    }

    pub fn path_length(&self) -> u64 {
        self.ball_depths.iter().map(|&d| u64::from(d)).sum()
    }

    /// Path length recomputed from node depths and ball counts.
    pub fn path_length_from_nodes(&self) -> u64 {
        self.nodes
            .iter()
            .map(|nd| u64::from(nd.depth) * nd.balls.len() as u64)
            .sum()
    }

    /// Wiener index by one post-order pass of the subtree recursion
    /// W(u) = sum_v [W(v) + (N(u) - N(v)) (P(v) + N(v))].
    pub fn wiener_index(&self) -> u128 {
        let m = self.nodes.len();
        let mut sub_p = vec![0u128; m];
        let mut sub_w = vec![0u128; m];
        // Children always sit after their parent in the arena.
        for u in (0..m).rev() {
            let nu = u128::from(self.nodes[u].total);
            let (mut p, mut w) = (0u128, 0u128);
            for v in self.children(u) {
                let nv = u128::from(self.nodes[v].total);
                let pv = sub_p[v] + nv;
                p += pv;
                w += sub_w[v] + (nu - nv) * pv;
            }
            sub_p[u] = p;
            sub_w[u] = w;
        }
        sub_w[0]
    }

    /// Wiener index summed over ball pairs with LCA depth arithmetic:
    /// d(a, b) = depth(a) + depth(b) - 2 depth(lca(a, b)).
    pub fn wiener_bruteforce(&self) -> Result<u128> {
        const GUARD: usize = 5000;
        if self.n() > GUARD {
            return Err(Error::TooLarge(format!("n = {} exceeds {GUARD}", self.n())));
        }
        // Root paths: node ids from the root down, so the LCA depth is the
        // length of the common prefix minus one.
        let mut root_path: Vec<Vec<u32>> = Vec::with_capacity(self.nodes.len());
        for (u, nd) in self.nodes.iter().enumerate() {
            let mut path = if nd.parent == NONE { Vec::new() } else { root_path[nd.parent as usize].clone() };
            path.push(u as u32);
            root_path.push(path);
        }
        let host: Vec<u32> = {
            let mut h = vec![0u32; self.n()];
            for (u, nd) in self.nodes.iter().enumerate() {
                for &ball in &nd.balls {
                    h[ball as usize] = u as u32;
                }
            }
            h
        };
        let mut total: u128 = 0;
        for a in 0..host.len() {
            let pa = &root_path[host[a] as usize];
            for &hb in &host[a + 1..] {
                let pb = &root_path[hb as usize];
                let common = pa.iter().zip(pb.iter()).take_while(|(x, y)| x == y).count();
                let lca_depth = common - 1;
                total += (pa.len() - 1 + pb.len() - 1 - 2 * lca_depth) as u128;
            }
        }
        Ok(total)
    }

    /// (I_{n,1}, ..., I_{n,b}).
    pub fn root_subtree_sizes(&self) -> Result<Vec<u64>> {
        if !self.root_has_split() {
            return Err(Error::RootNotSplit { n: self.n(), s: self.params.s });
        }
        Ok(self.children(0).map(|v| self.nodes[v].total).collect())
    }

    pub fn stats(&self) -> TreeStats {
        TreeStats {
            path_length: self.path_length(),
            wiener: self.wiener_index(),
            root_subtree_sizes: self.root_subtree_sizes().ok(),
        }
    }

    /// Checks C(u) <= s, N(u) = C(u) + sum_v N(v) and sum_u C(u) = n.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut balls = 0usize;
        for (u, nd) in self.nodes.iter().enumerate() {
            if nd.balls.len() > self.params.s {
                return Err(format!("node {u} holds {} > s balls", nd.balls.len()));
            }
            let below: u64 = self.children(u).map(|v| self.nodes[v].total).sum();
            if nd.total != below + nd.balls.len() as u64 {
                return Err(format!("node {u}: N = {} but C + sum N(v) = {}", nd.total, below + nd.balls.len() as u64));
            }
            balls += nd.balls.len();
        }
        if balls != self.n() {
            return Err(format!("{balls} balls placed, expected {}", self.n()));
        }
        Ok(())
    }

    pub fn dump(&self) -> Vec<NodeRecord> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(u, nd)| NodeRecord {
                id: u as u32,
                parent: (nd.parent != NONE).then_some(nd.parent),
                c: nd.balls.len() as u32,
                n: nd.total,
                depth: nd.depth,
            })
            .collect()
    }
}

/// Draws (P_n, W_n) without materializing the tree, by recursing on the
/// subtree sizes: given the root split vector, the sizes are multinomial and
/// the subtrees are independent split trees of those sizes.
pub struct StatsSampler<'a> {
    params: SplitTreeParams,
    sampler: &'a SplitSampler,
}

impl<'a> StatsSampler<'a> {
    pub fn new(params: SplitTreeParams, sampler: &'a SplitSampler) -> Self {
        StatsSampler { params, sampler }
    }

    /// Returns (P_n, W_n).
    pub fn sample<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> (u64, u128) {
        let mut scratch = vec![0.0; self.params.b * 64];
        self.recurse(n, rng, &mut scratch, 0)
    }

    fn recurse<R: Rng + ?Sized>(&self, n: u64, rng: &mut R, scratch: &mut Vec<f64>, level: usize) -> (u64, u128) {
        let SplitTreeParams { b, s, s0, s1 } = self.params;
        if n <= s as u64 {
            return (0, 0);
        }
        if scratch.len() < (level + 1) * b {
            scratch.resize((level + 1) * 2 * b, 0.0);
        }
        let off = level * b;
        self.sampler.sample_into(rng, &mut scratch[off..off + b]);
        let eta = n - (s0 + b * s1) as u64;
        let mut sizes = [0u64; 16];
        let mut sizes_vec;
        let sizes: &mut [u64] = if b <= 16 {
            &mut sizes[..b]
        } else {
            sizes_vec = vec![0u64; b];
            &mut sizes_vec
        };
        multinomial_into(eta, &scratch[off..off + b], rng, sizes);
        let (mut p, mut w) = (0u64, 0u128);
        for &c in sizes.iter().take(b) {
            let size = c + s1 as u64;
            let (pc, wc) = self.recurse(size, rng, scratch, level + 1);
            let pv = pc + size;
            p += pv;
            w += wc + u128::from(n - size) * u128::from(pv);
        }
        (p, w)
    }
}

/// (P_n, W_n) for `reps` independent trees from the recursive sampler, one
/// random stream per replicate.
pub fn simulate_stats(
    params: &SplitTreeParams,
    spec: &SplitterSpec,
    n: u64,
    reps: usize,
    seed: u64,
) -> Result<Vec<(u64, u128)>> {
    params.validate()?;
    params.check_splitter(spec)?;
    let sampler = spec.sampler();
    let fast = StatsSampler::new(*params, &sampler);
    Ok(crate::rng::par_replicates(seed, "simulate", reps, |rng, _| fast.sample(n, rng)))
}

/// Multinomial(n; probs) by sequential conditional binomials.
pub fn multinomial_into<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R, out: &mut [u64]) {
    let mut left = n;
    let mut mass = 1.0f64;
    let last = probs.len() - 1;
    for i in 0..last {
        if left == 0 {
            out[i] = 0;
            continue;
        }
        let p = if mass > 0.0 { (probs[i] / mass).clamp(0.0, 1.0) } else { 1.0 };
        let x = binomial(left, p, rng);
        out[i] = x;
        left -= x;
        mass -= probs[i];
    }
    out[last] = left;
}

/// Binomial draw; small counts use direct Bernoulli trials.
#[inline]
pub fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    if n <= 24 {
        let mut c = 0;
        for _ in 0..n {
            if rng.random::<f64>() < p {
                c += 1;
            }
        }
        return c;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bst() -> (SplitTreeParams, SplitterSpec) {
        (SplitTreeParams::new(2, 1, 1, 0).unwrap(), SplitterSpec::bst())
    }

    #[test]
    fn empty_tree() {
        let (p, spec) = bst();
        let t = build_tree(&p, &spec, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(t.path_length(), 0);
        assert_eq!(t.wiener_index(), 0);
        assert_eq!(t.wiener_bruteforce().unwrap(), 0);
    }

    #[test]
    fn single_ball_sits_at_root() {
        let (p, spec) = bst();
        for seed in 0..10 {
            let t = build_tree(&p, &spec, 1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(t.ball_depths(), &[0]);
            assert_eq!(t.wiener_index(), 0);
            assert!(matches!(t.root_subtree_sizes(), Err(Error::RootNotSplit { n: 1, s: 1 })));
        }
    }

    #[test]
    fn two_balls_have_forced_shape() {
        let (p, spec) = bst();
        for seed in 0..20 {
            let t = build_tree(&p, &spec, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(t.path_length(), 1);
            assert_eq!(t.wiener_index(), 1);
            assert_eq!(t.wiener_bruteforce().unwrap(), 1);
        }
    }

    #[test]
    fn mean_path_length_of_three_balls() {
        // E[P_n] = n - 1 + (2/n) sum_{k<n} E[P_k]: E[P_2] = 1, E[P_3] = 2 + 2/3.
        let (p, spec) = bst();
        let sampler = spec.sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let reps = 1_000_000;
        let total: u64 = (0..reps)
            .map(|_| build_tree_with(&p, &sampler, 3, &mut rng).path_length())
            .sum();
        let m = total as f64 / reps as f64;
        assert!((m - 8.0 / 3.0).abs() < 0.01, "{m}");
    }

    #[test]
    fn chain_of_three_hand_count() {
        // Shape with balls at depths 0, 1, 2 on one path: W = 1 + 2 + 1.
        let (p, spec) = bst();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut found = false;
        for _ in 0..200 {
            let t = build_tree(&p, &spec, 3, &mut rng).unwrap();
            let mut d = t.ball_depths().to_vec();
            d.sort();
            if d == [0, 1, 2] {
                assert_eq!(t.wiener_index(), 4);
                assert_eq!(t.wiener_bruteforce().unwrap(), 4);
                found = true;
            } else {
                assert_eq!(d, [0, 1, 1]);
                assert_eq!(t.wiener_index(), 4);
            }
        }
        assert!(found);
    }

    #[test]
    fn co_located_balls_have_distance_zero() {
        // s = 3: three balls share the root.
        let p = SplitTreeParams::new(2, 3, 1, 1).unwrap();
        let t = build_tree(&p, &SplitterSpec::bst(), 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(t.node_count(), 1);
        assert_eq!(t.wiener_bruteforce().unwrap(), 0);
        assert_eq!(t.wiener_index(), 0);
    }

    #[test]
    fn invariants_and_wiener_routes_agree_across_catalogue() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for spec in SplitterSpec::builtin_catalogue() {
            let p = SplitTreeParams::default_for(spec.family());
            for n in [0usize, 1, 2, 5, 17, 64, 150] {
                let t = build_tree(&p, &spec, n, &mut rng).unwrap();
                t.check_invariants().unwrap();
                assert_eq!(t.path_length(), t.path_length_from_nodes());
                assert_eq!(t.wiener_index(), t.wiener_bruteforce().unwrap());
                if let Ok(sizes) = t.root_subtree_sizes() {
                    assert_eq!(sizes.iter().sum::<u64>() as usize, n - p.s0);
                }
            }
        }
    }

    #[test]
    fn overflow_rule_with_s1_hands_balls_to_children() {
        // median-of-3: s = 2, s0 = 1, s1 = 1 -> first overflow leaves 1 ball
        // at the root and one in each child.
        let p = SplitTreeParams::new(2, 2, 1, 1).unwrap();
        let t = build_tree(&p, &SplitterSpec::median_of(1), 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(t.root_subtree_sizes().unwrap(), vec![1, 1]);
        assert_eq!(t.path_length(), 2);
        assert_eq!(t.wiener_index(), 1 + 1 + 2);
    }

    #[test]
    fn determinism() {
        let (p, spec) = bst();
        let a = build_tree(&p, &spec, 500, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = build_tree(&p, &spec, 500, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a.ball_depths(), b.ball_depths());
        assert_eq!(a.dump(), b.dump());
    }

    #[test]
    fn params_validation_messages() {
        let err = SplitTreeParams::new(2, 1, 2, 0).unwrap_err();
        assert!(err.to_string().contains("0 ≤ s0 ≤ s"), "{err}");
        assert!(SplitTreeParams::new(2, 2, 1, 2).is_err());
        assert!(SplitTreeParams::new(1, 2, 1, 0).is_err());
    }

    #[test]
    fn multinomial_conserves_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut out = [0u64; 3];
        for n in [0u64, 1, 10, 1000] {
            multinomial_into(n, &[0.2, 0.3, 0.5], &mut rng, &mut out);
            assert_eq!(out.iter().sum::<u64>(), n);
        }
    }
}
