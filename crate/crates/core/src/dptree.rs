//! Binary tree aggregation with bottom-up variance-reduced prefix sums.
//!
//! Nodes use heap order: the root is node 1 and node `k` has children `2k`
//! and `2k + 1`. A tree of height `h` has `2^h` leaves and `2^(h+1) - 1`
//! nodes; leaf `i` (1-based) is node `2^h + i - 1`.
//!
//! Node noise is a pure function of the tree seed and the node id, so trees
//! are reproducible from `(height, sigma, seed)` plus their inputs.

use serde::{Deserialize, Serialize};

use crate::accountant::tree_height;
use crate::error::{Error, Result};
use crate::noise::node_noise;

const TAG_DENSE: u8 = 1;
const TAG_SPARSE: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeState {
    height: u32,
    sigma: f64,
    seed: u64,
    next_leaf: u64,
    /// Node `k` lives at index `k - 1`.
    nodes: Vec<f64>,
}

/// A noisy prefix sum and its variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefixEstimate {
    pub value: f64,
    pub variance: f64,
    pub step: u64,
}

/// One node of a prefix decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecompNode {
    pub id: u64,
    /// Number of levels in the node's subtree (1 for a leaf).
    pub kappa: u32,
}

fn initial_node(sigma: f64, seed: u64, id: u64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        sigma * node_noise(seed, id)
    }
}

/// Weights `c_0..c_{κ-1}` with `c_j ∝ 2^-j`, normalized to sum to one.
pub fn honaker_weights(kappa: u32) -> Vec<f64> {
    assert!(kappa >= 1, "kappa must be at least 1");
    let raw: Vec<f64> = (0..kappa).map(|j| 0.5f64.powi(j as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Variance of the bottom-up estimate of a node whose subtree has `kappa`
/// levels, each node carrying independent noise of variance `sigma²`.
pub fn honaker_node_variance(sigma: f64, kappa: u32) -> f64 {
    sigma * sigma / (2.0 * (1.0 - 0.5f64.powi(kappa as i32)))
}

/// Nodes covering leaves `1..=i` of a height-`height` tree, following the
/// binary representation of `i` from the most significant bit.
pub fn decompose(i: u64, height: u32) -> Vec<DecompNode> {
    let mut out = Vec::with_capacity(height as usize + 1);
    let mut start = 0u64;
    for level in (0..=height).rev() {
        let size = 1u64 << level;
        if i & size != 0 {
            let depth = height - level;
            out.push(DecompNode {
                id: (1u64 << depth) + start / size,
                kappa: level + 1,
            });
            start += size;
        }
    }
    out
}

impl TreeState {
    /// A tree for `t` triggers with all nodes pre-noised and no inputs.
    pub fn new(t: u64, sigma: f64, seed: u64) -> Result<Self> {
        if t < 1 {
            return Err(Error::invalid("tree needs at least one leaf"));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        let height = tree_height(t);
        let count = (1u64 << (height + 1)) - 1;
        let nodes = (1..=count).map(|id| initial_node(sigma, seed, id)).collect();
        Ok(TreeState {
            height,
            sigma,
            seed,
            next_leaf: 1,
            nodes,
        })
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn leaf_count(&self) -> u64 {
        1u64 << self.height
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_leaf(&self) -> u64 {
        self.next_leaf
    }

    pub fn node_values(&self) -> &[f64] {
        &self.nodes
    }

    /// Value of node `id` (heap order, root = 1).
    pub fn node(&self, id: u64) -> f64 {
        self.nodes[(id - 1) as usize]
    }

    /// Adds `value` as leaf `i`, which must be the next unfilled leaf.
    pub fn add(&mut self, i: u64, value: f64) -> Result<()> {
        if i > self.leaf_count() {
            return Err(Error::Capacity {
                leaf: i,
                capacity: self.leaf_count(),
            });
        }
        if i != self.next_leaf {
            return Err(Error::OutOfOrder {
                expected: self.next_leaf,
                got: i,
            });
        }
        if value != 0.0 {
            let mut id = self.leaf_count() + i - 1;
            while id >= 1 {
                self.nodes[(id - 1) as usize] += value;
                id >>= 1;
            }
        }
        self.next_leaf += 1;
        Ok(())
    }

    /// Fills zero leaves so that the next leaf is `next`. Zero inputs do not
    /// change any node, so only the cursor moves.
    pub fn skip_to(&mut self, next: u64) -> Result<()> {
        if next < self.next_leaf {
            return Err(Error::OutOfOrder {
                expected: self.next_leaf,
                got: next,
            });
        }
        if next > self.leaf_count() + 1 {
            return Err(Error::Capacity {
                leaf: next - 1,
                capacity: self.leaf_count(),
            });
        }
        self.next_leaf = next;
        Ok(())
    }

    fn check_step(&self, i: u64, max: u64) -> Result<()> {
        if i < 1 || i > max {
            return Err(Error::InvalidStep { step: i, max });
        }
        Ok(())
    }

    /// Sums of node values at each depth below `id`, starting with `id`
    /// itself. Children are combined pairwise so every caller sees the same
    /// floating-point result.
    fn level_sums(&self, id: u64) -> Vec<f64> {
        let first_leaf = self.leaf_count();
        if id >= first_leaf {
            return vec![self.node(id)];
        }
        let left = self.level_sums(2 * id);
        let right = self.level_sums(2 * id + 1);
        let mut out = Vec::with_capacity(left.len() + 1);
        out.push(self.node(id));
        out.extend(left.iter().zip(&right).map(|(l, r)| l + r));
        out
    }

    /// Without noise every level sum is exact, so the node value is used
    /// as is and noiseless trees reproduce plain sums bit for bit.
    fn combine(&self, sums: &[f64]) -> f64 {
        if self.sigma == 0.0 {
            return sums[0];
        }
        honaker_weights(sums.len() as u32)
            .iter()
            .zip(sums)
            .map(|(c, s)| c * s)
            .sum()
    }

    /// Bottom-up estimate of node `id`.
    pub fn node_estimate(&self, id: u64) -> f64 {
        self.combine(&self.level_sums(id))
    }

    /// Bottom-up estimates for every node, in one pass. Entry `k - 1` is
    /// bit-identical to `node_estimate(k)`.
    pub fn all_node_estimates(&self) -> Vec<f64> {
        let n = self.nodes.len();
        let first_leaf = self.leaf_count() as usize;
        let mut sums: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
        for id in (1..=n).rev() {
            if id >= first_leaf {
                sums[id] = vec![self.nodes[id - 1]];
            } else {
                let (l, r) = (&sums[2 * id], &sums[2 * id + 1]);
                let mut out = Vec::with_capacity(l.len() + 1);
                out.push(self.nodes[id - 1]);
                out.extend(l.iter().zip(r).map(|(a, b)| a + b));
                sums[id] = out;
            }
        }
        (1..=n).map(|id| self.combine(&sums[id])).collect()
    }

    /// Prefix estimate for step `i` without the "already inserted" check.
    /// Unfilled leaves are zeros, so this is also the estimate the tree would
    /// give after zero inputs up to `i`.
    pub fn estimate_at(&self, i: u64) -> Result<PrefixEstimate> {
        self.check_step(i, self.leaf_count())?;
        let parts = decompose(i, self.height);
        let value = parts.iter().fold(0.0, |acc, d| acc + self.node_estimate(d.id));
        let variance = parts
            .iter()
            .map(|d| honaker_node_variance(self.sigma, d.kappa))
            .sum();
        Ok(PrefixEstimate {
            value,
            variance,
            step: i,
        })
    }

    /// Noisy sum of leaves `1..=i`; `i` must already be inserted.
    pub fn total_sum(&self, i: u64) -> Result<PrefixEstimate> {
        self.check_step(i, self.next_leaf - 1)?;
        self.estimate_at(i)
    }

    /// Variance of the prefix estimate at step `i`.
    pub fn prefix_variance(&self, i: u64) -> Result<f64> {
        self.check_step(i, self.leaf_count())?;
        Ok(prefix_variance_for(self.height, self.sigma, i))
    }

    /// Encodes the tree compactly, choosing the sparse layout when fewer
    /// nodes carry inputs than are regenerable from the seed.
    pub fn to_compact_bytes(&self) -> Vec<u8> {
        let touched = self.touched_node_ids();
        let sparse = touched.len() * 2 < self.nodes.len();
        let mut out = Vec::with_capacity(29 + 8 * if sparse { touched.len() } else { self.nodes.len() });
        out.push(if sparse { TAG_SPARSE } else { TAG_DENSE });
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.sigma.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.next_leaf.to_le_bytes());
        if sparse {
            for id in touched {
                out.extend_from_slice(&self.node(id).to_le_bytes());
            }
        } else {
            for v in &self.nodes {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_compact_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Serialization(format!("tree codec: {m}"));
        if bytes.len() < 29 {
            return Err(bad("truncated header"));
        }
        let tag = bytes[0];
        let height = u32::from_le_bytes(bytes[1..5].try_into().unwrap());
        let sigma = f64::from_le_bytes(bytes[5..13].try_into().unwrap());
        let seed = u64::from_le_bytes(bytes[13..21].try_into().unwrap());
        let next_leaf = u64::from_le_bytes(bytes[21..29].try_into().unwrap());
        if height > 40 {
            return Err(bad("height out of range"));
        }
        let count = ((1u64 << (height + 1)) - 1) as usize;
        if next_leaf < 1 || next_leaf > (1u64 << height) + 1 {
            return Err(bad("leaf cursor out of range"));
        }
        let body = &bytes[29..];
        if body.len() % 8 != 0 {
            return Err(bad("ragged node array"));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut tree = TreeState {
            height,
            sigma,
            seed,
            next_leaf,
            nodes: Vec::new(),
        };
        match tag {
            TAG_DENSE => {
                if values.len() != count {
                    return Err(bad("dense node count mismatch"));
                }
                tree.nodes = values;
            }
            TAG_SPARSE => {
                let touched = tree.touched_node_ids();
                if values.len() != touched.len() {
                    return Err(bad("sparse node count mismatch"));
                }
                tree.nodes = (1..=count as u64).map(|id| initial_node(sigma, seed, id)).collect();
                for (id, v) in touched.into_iter().zip(values) {
                    tree.nodes[(id - 1) as usize] = v;
                }
            }
            other => return Err(bad(&format!("unknown tag {other}"))),
        }
        Ok(tree)
    }

    /// Nodes whose subtree contains at least one filled leaf, level by level.
    fn touched_node_ids(&self) -> Vec<u64> {
        let filled = self.next_leaf - 1;
        let mut ids = Vec::new();
        for depth in 0..=self.height {
            let span = 1u64 << (self.height - depth);
            let n = filled.div_ceil(span);
            let first = 1u64 << depth;
            ids.extend(first..first + n);
        }
        ids
    }
}

/// Prefix value for step `i` from precomputed node estimates (as returned by
/// [`TreeState::all_node_estimates`]). Bit-identical to
/// [`TreeState::estimate_at`] on the same tree.
pub fn prefix_value_from(estimates: &[f64], height: u32, i: u64) -> f64 {
    decompose(i, height)
        .iter()
        .fold(0.0, |acc, d| acc + estimates[(d.id - 1) as usize])
}

/// Prefix variance for step `i` of a height-`height` tree with node noise
/// `sigma`, without needing a tree instance.
pub fn prefix_variance_for(height: u32, sigma: f64, i: u64) -> f64 {
    decompose(i, height)
        .iter()
        .map(|d| honaker_node_variance(sigma, d.kappa))
        .sum()
}

/// Serde adapter storing a [`TreeState`] in its compact binary form.
pub mod compact {
    use serde::{de::Error as _, Deserializer, Serializer};

    use super::TreeState;

    pub fn serialize<S: Serializer>(tree: &TreeState, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_bytes(&tree.to_compact_bytes())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TreeState, D::Error> {
        let bytes: Vec<u8> = serde_bytes_vec(d)?;
        TreeState::from_compact_bytes(&bytes).map_err(D::Error::custom)
    }

    fn serde_bytes_vec<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        struct V;
        impl<'de> serde::de::Visitor<'de> for V {
            type Value = Vec<u8>;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("tree bytes")
            }
            fn visit_bytes<E: serde::de::Error>(self, v: &[u8]) -> Result<Vec<u8>, E> {
                Ok(v.to_vec())
            }
            fn visit_byte_buf<E: serde::de::Error>(self, v: Vec<u8>) -> Result<Vec<u8>, E> {
                Ok(v)
            }
            fn visit_seq<A: serde::de::SeqAccess<'de>>(self, mut seq: A) -> Result<Vec<u8>, A::Error> {
                let mut out = Vec::new();
                while let Some(b) = seq.next_element::<u8>()? {
                    out.push(b);
                }
                Ok(out)
            }
        }
        d.deserialize_byte_buf(V)
    }

    /// Same adapter for optional trees.
    pub mod option {
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        use super::TreeState;

        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "super")] TreeState);

        pub fn serialize<S: Serializer>(tree: &Option<TreeState>, s: S) -> Result<S::Ok, S::Error> {
            match tree {
                Some(t) => s.serialize_some(&WrapRef(t)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<TreeState>, D::Error> {
            Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
        }

        struct WrapRef<'a>(&'a TreeState);

        impl Serialize for WrapRef<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                super::serialize(self.0, s)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;

    fn noiseless(t: u64) -> TreeState {
        TreeState::new(t, 0.0, 0).unwrap()
    }

    #[test]
    fn initialize_examples() {
        let one = noiseless(1);
        assert_eq!(one.leaf_count(), 1);
        assert_eq!(one.node_values(), &[0.0]);
        let five = noiseless(5);
        assert_eq!(five.leaf_count(), 8);
        assert_eq!(five.node_count(), 15);
        assert_eq!(five.next_leaf(), 1);
        let a = TreeState::new(100, 2.5, 42).unwrap();
        let b = TreeState::new(100, 2.5, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, TreeState::new(100, 2.5, 43).unwrap());
    }

    #[test]
    fn add_examples() {
        let mut t = TreeState::new(8, 1.0, 9).unwrap();
        let before = t.node_values().to_vec();
        t.add(1, 0.0).unwrap();
        assert_eq!(t.node_values(), &before[..]);

        let mut t = noiseless(2);
        t.add(1, 1.0).unwrap();
        assert_eq!(t.node(1), 1.0);
        assert_eq!(t.node(2), 1.0);
        assert_eq!(t.node(3), 0.0);

        let mut t = TreeState::new(16, 1.0, 3).unwrap();
        let before = t.node_values().to_vec();
        t.add(1, 2.0).unwrap();
        t.add(2, 5.0).unwrap();
        let changed = t
            .node_values()
            .iter()
            .zip(&before)
            .filter(|(a, b)| a != b)
            .count();
        // Leaves 1 and 2 share every ancestor: 2 leaves + 4 shared ancestors.
        assert_eq!(changed, 2 + 4);
        let mut fresh = TreeState::new(16, 1.0, 3).unwrap();
        let base = fresh.node_values().to_vec();
        fresh.add(1, 2.0).unwrap();
        let path = fresh
            .node_values()
            .iter()
            .zip(&base)
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(path, fresh.height() as usize + 1);
    }

    #[test]
    fn add_errors() {
        let mut t = noiseless(4);
        assert!(matches!(t.add(2, 1.0), Err(Error::OutOfOrder { expected: 1, got: 2 })));
        for i in 1..=4 {
            t.add(i, 1.0).unwrap();
        }
        assert!(matches!(t.add(5, 1.0), Err(Error::Capacity { .. })));
    }

    #[test]
    fn total_sum_examples() {
        let mut t = noiseless(3);
        for (i, x) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            t.add(i as u64 + 1, x).unwrap();
        }
        let e = t.total_sum(3).unwrap();
        assert_eq!(e.value, 6.0);
        assert_eq!(e.variance, 0.0);
        assert!(matches!(t.total_sum(4), Err(Error::InvalidStep { .. })));
        assert!(matches!(t.total_sum(0), Err(Error::InvalidStep { .. })));

        assert_eq!(honaker_node_variance(1.0, 1), 1.0);
        assert_relative_eq!(honaker_node_variance(1.0, 2), 2.0 / 3.0);
    }

    #[test]
    fn weight_examples() {
        assert_eq!(honaker_weights(1), vec![1.0]);
        let w = honaker_weights(2);
        assert_relative_eq!(w[0], 2.0 / 3.0);
        assert_relative_eq!(w[1], 1.0 / 3.0);
        let w = honaker_weights(3);
        for (a, b) in w.iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
            assert_relative_eq!(*a, b);
        }
    }

    #[test]
    fn prefix_variance_examples() {
        let t = noiseless(8);
        for i in 1..=8 {
            assert_eq!(t.prefix_variance(i).unwrap(), 0.0);
        }
        let sigma = 1.7;
        let t = TreeState::new(2, sigma, 1).unwrap();
        assert_relative_eq!(t.prefix_variance(1).unwrap(), sigma * sigma);
        let t = TreeState::new(4, sigma, 1).unwrap();
        assert_relative_eq!(t.prefix_variance(3).unwrap(), sigma * sigma * 5.0 / 3.0);
        assert!(t.prefix_variance(5).is_err());
    }

    #[test]
    fn decomposition_follows_binary_representation() {
        assert_eq!(decompose(3, 2), vec![DecompNode { id: 2, kappa: 2 }, DecompNode { id: 6, kappa: 1 }]);
        assert_eq!(decompose(4, 2), vec![DecompNode { id: 1, kappa: 3 }]);
        assert_eq!(decompose(1, 0), vec![DecompNode { id: 1, kappa: 1 }]);
        assert_eq!(
            decompose(5, 3),
            vec![DecompNode { id: 2, kappa: 3 }, DecompNode { id: 12, kappa: 1 }]
        );
    }

    #[test]
    fn all_node_estimates_match_single_node_path() {
        let mut t = TreeState::new(37, 1.3, 77).unwrap();
        for i in 1..=20 {
            t.add(i, (i % 5) as f64).unwrap();
        }
        let all = t.all_node_estimates();
        for id in 1..=t.node_count() as u64 {
            assert_eq!(all[(id - 1) as usize].to_bits(), t.node_estimate(id).to_bits());
        }
        for i in 1..=t.leaf_count() {
            let direct = t.estimate_at(i).unwrap().value;
            assert_eq!(prefix_value_from(&all, t.height(), i).to_bits(), direct.to_bits());
        }
    }

    #[test]
    fn honaker_dominance() {
        for kappa in 2..30 {
            assert!(honaker_node_variance(1.0, kappa) < 1.0);
        }
    }

    #[test]
    fn compact_codec_round_trips() {
        for (t, filled) in [(1u64, 0u64), (1, 1), (64, 0), (64, 3), (64, 64), (100, 37)] {
            let mut tree = TreeState::new(t, 0.9, t * 31 + filled).unwrap();
            for i in 1..=filled {
                tree.add(i, i as f64 * 0.5).unwrap();
            }
            let bytes = tree.to_compact_bytes();
            let back = TreeState::from_compact_bytes(&bytes).unwrap();
            assert_eq!(back, tree);
            for (a, b) in back.node_values().iter().zip(tree.node_values()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        let tree = TreeState::new(64, 0.9, 1).unwrap();
        assert_eq!(tree.to_compact_bytes()[0], TAG_SPARSE);
        assert!(TreeState::from_compact_bytes(&[9; 29]).is_err());
        assert!(TreeState::from_compact_bytes(&[1, 2]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut tree = TreeState::new(10, 0.4, 5).unwrap();
        tree.add(1, 3.0).unwrap();
        let s = serde_json::to_string(&tree).unwrap();
        let back: TreeState = serde_json::from_str(&s).unwrap();
        assert_eq!(back, tree);
    }

    #[test]
    fn skip_to_matches_explicit_zeros() {
        let mut a = TreeState::new(16, 1.0, 8).unwrap();
        let mut b = a.clone();
        a.skip_to(5).unwrap();
        for i in 1..5 {
            b.add(i, 0.0).unwrap();
        }
        assert_eq!(a, b);
        assert!(a.skip_to(3).is_err());
        assert!(a.skip_to(18).is_err());
    }

    #[test]
    fn unbiased_with_matching_variance() {
        let inputs = [3.0, -1.0, 4.0, 1.0, -5.0, 9.0, 2.0];
        let trials = 100_000u64;
        let sigma = 2.0;
        let steps = [1u64, 3, 4, 7];
        let mut sums = [0.0f64; 4];
        let mut sq = [0.0f64; 4];
        for trial in 0..trials {
            let mut t = TreeState::new(8, sigma, trial).unwrap();
            for (i, x) in inputs.iter().enumerate() {
                t.add(i as u64 + 1, *x).unwrap();
            }
            for (k, &s) in steps.iter().enumerate() {
                let truth: f64 = inputs[..s as usize].iter().sum();
                let err = t.total_sum(s).unwrap().value - truth;
                sums[k] += err;
                sq[k] += err * err;
            }
        }
        let t = TreeState::new(8, sigma, 0).unwrap();
        for (k, &s) in steps.iter().enumerate() {
            let lambda2 = t.prefix_variance(s).unwrap();
            let mean = sums[k] / trials as f64;
            let var = sq[k] / trials as f64 - mean * mean;
            assert!(mean.abs() < 4.0 * lambda2.sqrt() / (trials as f64).sqrt(), "step {s}: mean {mean}");
            assert!((var - lambda2).abs() / lambda2 < 0.05, "step {s}: var {var} vs {lambda2}");
        }
    }

    proptest! {
        #[test]
        fn noiseless_prefix_sums_exact(inputs in proptest::collection::vec(-1000i32..1000, 1..70), extra in 0u64..40) {
            let t_cap = inputs.len() as u64 + extra;
            let mut t = TreeState::new(t_cap, 0.0, 1).unwrap();
            let mut running = 0.0;
            for (i, x) in inputs.iter().enumerate() {
                t.add(i as u64 + 1, *x as f64).unwrap();
                running += *x as f64;
                prop_assert_eq!(t.total_sum(i as u64 + 1).unwrap().value, running);
            }
            // With sigma = 0 every internal node is the sum of its children.
            let first_leaf = t.leaf_count();
            for id in 1..first_leaf {
                prop_assert_eq!(t.node(id), t.node(2 * id) + t.node(2 * id + 1));
            }
        }

        #[test]
        fn prefix_variance_is_sum_of_node_variances(h in 0u32..12, sigma in 0.0f64..10.0, frac in 0.0f64..1.0) {
            let leaves = 1u64 << h;
            let i = 1 + ((leaves - 1) as f64 * frac) as u64;
            let expected: f64 = decompose(i, h).iter().map(|d| honaker_node_variance(sigma, d.kappa)).sum();
            prop_assert_eq!(prefix_variance_for(h, sigma, i), expected);
            prop_assert!(decompose(i, h).len() as u32 == i.count_ones());
        }
    }
}
