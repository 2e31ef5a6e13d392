//! k-trees: a shape, leaf top masses and one interval partition per internal edge.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::partition::{Builder, Dust, IntervalPartition};
use crate::shape::{swap_and_reduce_shape, swap_image, Edge, TreeShape};

/// A block of a k-tree: a top mass or one block of an edge partition.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockRef {
    Leaf(u32),
    Internal { edge: Edge, index: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeJson", into = "TreeJson")]
pub struct KTree {
    shape: TreeShape,
    tops: BTreeMap<u32, f64>,
    partitions: BTreeMap<Edge, IntervalPartition>,
}

fn phi_insert(e: &[u32], f: &[u32], j: u32) -> Edge {
    if e.len() > f.len() && f.iter().all(|x| e.binary_search(x).is_ok()) {
        let mut out = e.to_vec();
        let pos = out.binary_search(&j).unwrap_err();
        out.insert(pos, j);
        out
    } else {
        e.to_vec()
    }
}

impl KTree {
    /// Build and validate a tree. Missing partitions default to empty.
    pub fn new(
        shape: TreeShape,
        tops: BTreeMap<u32, f64>,
        mut partitions: BTreeMap<Edge, IntervalPartition>,
    ) -> Result<Self> {
        let labels: Vec<u32> = tops.keys().copied().collect();
        ensure(labels == shape.labels(), || {
            format!("top labels {labels:?} do not match shape {shape}")
        })?;
        for (&i, &x) in &tops {
            ensure(x >= 0.0 && x.is_finite(), || {
                format!("top mass x_{i} = {x}")
            })?;
        }
        for e in partitions.keys() {
            if !shape.edges().contains(e) {
                return Err(Error::Lookup(format!(
                    "partition on {e:?}, which is not an edge of {shape}"
                )));
            }
        }
        for e in shape.edges() {
            partitions.entry(e.clone()).or_default();
        }
        let t = Self {
            shape,
            tops,
            partitions,
        };
        t.validate()?;
        Ok(t)
    }

    /// The 1-tree carrying `mass` on leaf `label`.
    pub fn single(label: u32, mass: f64) -> Result<Self> {
        ensure(mass >= 0.0 && mass.is_finite(), || format!("mass {mass}"))?;
        Ok(Self {
            shape: TreeShape::single(label),
            tops: [(label, mass)].into(),
            partitions: BTreeMap::new(),
        })
    }

    /// The tree of zero mass on the empty label set.
    pub fn zero() -> Self {
        Self {
            shape: TreeShape::from_parts_unchecked(vec![], Default::default()),
            tops: BTreeMap::new(),
            partitions: BTreeMap::new(),
        }
    }

    pub(crate) fn from_parts_unchecked(
        shape: TreeShape,
        tops: BTreeMap<u32, f64>,
        partitions: BTreeMap<Edge, IntervalPartition>,
    ) -> Self {
        Self {
            shape,
            tops,
            partitions,
        }
    }

    /// Checks `x_i + x_j > 0` on type-2 edges and that at most one label is degenerate.
    pub fn validate(&self) -> Result<()> {
        for e in self.shape.edges() {
            if e.len() == 2 {
                ensure(self.tops[&e[0]] + self.tops[&e[1]] > 0.0, || {
                    format!("type-2 edge {e:?} has two zero tops")
                })?;
            }
        }
        self.degenerate_label().map(|_| ())
    }

    pub fn shape(&self) -> &TreeShape {
        &self.shape
    }

    pub fn labels(&self) -> &[u32] {
        self.shape.labels()
    }

    pub fn k(&self) -> usize {
        self.shape.k()
    }

    pub fn tops(&self) -> &BTreeMap<u32, f64> {
        &self.tops
    }

    pub fn top(&self, i: u32) -> Option<f64> {
        self.tops.get(&i).copied()
    }

    pub fn partitions(&self) -> &BTreeMap<Edge, IntervalPartition> {
        &self.partitions
    }

    pub fn partition(&self, e: &[u32]) -> Option<&IntervalPartition> {
        self.partitions.get(e)
    }

    /// `‖T‖`: tops plus partition masses.
    pub fn mass(&self) -> f64 {
        // start from +0 so the empty tree does not report -0
        self.tops.values().fold(0.0, |a, x| a + x)
            + self.partitions.values().fold(0.0, |a, p| a + p.mass())
    }

    pub fn is_zero(&self) -> bool {
        self.mass() == 0.0
    }

    /// Multiply every mass by `c`.
    pub fn scale(&self, c: f64) -> Result<Self> {
        ensure(c > 0.0 && c.is_finite(), || format!("scale factor {c}"))?;
        Ok(Self {
            shape: self.shape.clone(),
            tops: self.tops.iter().map(|(&i, &x)| (i, x * c)).collect(),
            partitions: self
                .partitions
                .iter()
                .map(|(e, p)| Ok((e.clone(), p.scale(c)?)))
                .collect::<Result<_>>()?,
        })
    }

    /// `I(T)`: the unique label with `x_i + ‖β_parent({i})‖ = 0`, if any.
    pub fn degenerate_label(&self) -> Result<Option<u32>> {
        if self.k() < 2 {
            return Ok(self.tops.iter().find(|(_, &x)| x == 0.0).map(|(&i, _)| i));
        }
        let mut found = None;
        for (&i, &x) in &self.tops {
            if x > 0.0 {
                continue;
            }
            let parent = self.shape.parent_edge(&[i])?;
            if self.partitions[&parent].mass() == 0.0 {
                if let Some(prev) = found {
                    return Err(Error::Invariant(format!(
                        "labels {prev} and {i} are both degenerate"
                    )));
                }
                found = Some(i);
            }
        }
        Ok(found)
    }

    /// Every block with its mass: tops first, then partition blocks edge by edge.
    pub fn blocks(&self) -> Vec<(BlockRef, f64)> {
        let mut out: Vec<(BlockRef, f64)> = self
            .tops
            .iter()
            .filter(|(_, &x)| x > 0.0)
            .map(|(&i, &x)| (BlockRef::Leaf(i), x))
            .collect();
        for (e, p) in &self.partitions {
            out.extend(p.blocks().iter().enumerate().map(|(index, &w)| {
                (
                    BlockRef::Internal {
                        edge: e.clone(),
                        index,
                    },
                    w,
                )
            }));
        }
        out
    }

    pub fn block_mass(&self, b: &BlockRef) -> Result<f64> {
        match b {
            BlockRef::Leaf(i) => self
                .top(*i)
                .ok_or_else(|| Error::Lookup(format!("leaf {i}"))),
            BlockRef::Internal { edge, index } => self
                .partitions
                .get(edge)
                .and_then(|p| p.blocks().get(*index).copied())
                .ok_or_else(|| Error::Lookup(format!("block {index} of edge {edge:?}"))),
        }
    }
}

/// `ϱ(T)`: swap the degenerate label `I` with `J = J(t, I)`, drop `J` and its
/// zero-mass compound. Returns the reduced tree with `(I, J)`.
pub fn swap_and_reduce_tree(t: &KTree) -> Result<(KTree, u32, u32)> {
    let i = t
        .degenerate_label()?
        .ok_or_else(|| Error::State("swap-and-reduce needs a degenerate label".into()))?;
    if t.k() == 1 {
        return Ok((KTree::zero(), i, i));
    }
    let (shape, j) = swap_and_reduce_shape(&t.shape, i)?;
    let parent = t.shape.parent_edge(&[i])?;
    let mut tops = BTreeMap::new();
    for (&a, &x) in &t.tops {
        if a == i {
            continue;
        }
        tops.insert(if a == j { i } else { a }, x);
    }
    let partitions = t
        .partitions
        .iter()
        .filter(|(e, _)| **e != parent)
        .map(|(e, p)| (swap_image(e, i, j), p.clone()))
        .collect();
    Ok((
        KTree {
            shape,
            tops,
            partitions,
        },
        i,
        j,
    ))
}

/// `T ⊕ (ℓ, j, U)`. `u` is a unit-mass 2-tree on labels {1, 2} and is only
/// used when `ℓ` is a top.
pub fn insert_label(t: &KTree, block: &BlockRef, j: u32, u: Option<&KTree>) -> Result<KTree> {
    if t.shape.contains_label(j) {
        return Err(Error::Parameter(format!("label {j} already present")));
    }
    let f: Edge = match block {
        BlockRef::Leaf(i) => vec![*i],
        BlockRef::Internal { edge, .. } => edge.clone(),
    };
    t.block_mass(block)?;
    let shape = t.shape.insert(&f, j)?;
    let mut tops = t.tops.clone();
    let mut partitions: BTreeMap<Edge, IntervalPartition> = t
        .partitions
        .iter()
        .map(|(e, p)| (phi_insert(e, &f, j), p.clone()))
        .collect();
    match block {
        BlockRef::Leaf(i) => {
            let u = u.ok_or_else(|| Error::Parameter("leaf insertion needs a 2-tree".into()))?;
            ensure(u.labels() == [1, 2], || {
                "the inserted 2-tree must carry labels {1, 2}".into()
            })?;
            ensure((u.mass() - 1.0).abs() < 1e-9, || {
                format!("inserted 2-tree has mass {}", u.mass())
            })?;
            let x = tops[i];
            tops.insert(*i, x * u.tops[&1]);
            tops.insert(j, x * u.tops[&2]);
            let gamma = &u.partitions[&vec![1, 2]];
            let mut e = vec![*i, j];
            e.sort_unstable();
            partitions.insert(
                e,
                if x > 0.0 {
                    gamma.scale(x)?
                } else {
                    IntervalPartition::empty()
                },
            );
        }
        BlockRef::Internal { edge, index } => {
            let (left, w, right) = t.partitions[edge].split_at_block(*index)?;
            tops.insert(j, w);
            partitions.insert(edge.clone(), left);
            let mut upper = edge.clone();
            upper.insert(upper.binary_search(&j).unwrap_err(), j);
            partitions.insert(upper, right);
        }
    }
    Ok(KTree {
        shape,
        tops,
        partitions,
    })
}

/// `π_{-j}`: remove label `j`. The identity when `j` is absent.
pub fn project_minus(t: &KTree, j: u32) -> Result<KTree> {
    if !t.shape.contains_label(j) {
        return Ok(t.clone());
    }
    if t.k() == 1 {
        return Err(Error::Parameter(format!(
            "cannot remove the last label {j}"
        )));
    }
    let parent = t.shape.parent_edge(&[j])?;
    let sibling = t.shape.sibling(&[j])?;
    let xj = t.tops[&j];
    let drop = |e: &[u32]| -> Edge { e.iter().copied().filter(|&x| x != j).collect() };
    let mut tops: BTreeMap<u32, f64> = t
        .tops
        .iter()
        .filter(|(&a, _)| a != j)
        .map(|(&a, &x)| (a, x))
        .collect();
    let mut partitions = BTreeMap::new();
    for (e, p) in &t.partitions {
        if *e == parent {
            continue;
        }
        partitions.insert(drop(e), p.clone());
    }
    let beta_parent = &t.partitions[&parent];
    if sibling.len() == 1 {
        // type-2 parent {a, j}
        let a = sibling[0];
        *tops.get_mut(&a).unwrap() += xj + beta_parent.mass();
    } else {
        // type-1 parent: β_{E\{j}} ★ (0, x_j) ★ β_E
        let mut b = Builder::default();
        b.append(&t.partitions[&sibling]);
        b.block(xj);
        b.append(beta_parent);
        partitions.insert(sibling.clone(), b.finish());
    }
    let labels: Vec<u32> = tops.keys().copied().collect();
    let edges = t
        .shape
        .edges()
        .iter()
        .filter(|e| **e != parent)
        .map(|e| drop(e))
        .collect();
    Ok(KTree {
        shape: TreeShape::from_parts_unchecked(labels, edges),
        tops,
        partitions,
    })
}

/// `π_k`: remove every label above `k`, largest first.
pub fn project_to(t: &KTree, k: u32) -> Result<KTree> {
    if !t.labels().iter().any(|&a| a <= k) {
        return Err(Error::Parameter(format!(
            "no labels of {:?} are at most {k}",
            t.labels()
        )));
    }
    let mut out = t.clone();
    for &j in t.labels().iter().rev().filter(|&&a| a > k) {
        out = project_minus(&out, j)?;
    }
    Ok(out)
}

/// `d(T, 0) = Σ x_i + Σ_E max(‖β_E‖, 𝒟_{β_E}(∞))`.
pub fn distance_to_zero(t: &KTree) -> f64 {
    t.tops.values().sum::<f64>()
        + t.partitions
            .values()
            .map(|p| p.mass().max(p.total_diversity()))
            .sum::<f64>()
}

/// Serialized form of a k-tree.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeJson {
    pub labels: Vec<u32>,
    pub shape: Vec<Edge>,
    pub tops: BTreeMap<u32, f64>,
    pub edges: Vec<EdgeJson>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeJson {
    pub labels: Edge,
    pub blocks: Vec<f64>,
    /// Total unresolved mass.
    pub dust: f64,
    /// Positions of the unresolved mass, as `(before block index, mass)`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dust_at: Vec<(usize, f64)>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub resolution: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl From<KTree> for TreeJson {
    fn from(t: KTree) -> Self {
        let shape: Vec<Edge> = t.shape.edges().iter().cloned().collect();
        let edges = t
            .partitions
            .iter()
            .map(|(e, p)| {
                let at_end = p.dust().len() == 1 && p.dust()[0].before == p.len();
                EdgeJson {
                    labels: e.clone(),
                    blocks: p.blocks().to_vec(),
                    dust: p.dust_mass(),
                    dust_at: if p.dust().is_empty() || at_end {
                        vec![]
                    } else {
                        p.dust().iter().map(|d| (d.before, d.mass)).collect()
                    },
                    resolution: p.resolution(),
                }
            })
            .collect();
        Self {
            labels: t.shape.labels().to_vec(),
            shape,
            tops: t.tops,
            edges,
        }
    }
}

impl TryFrom<TreeJson> for KTree {
    type Error = Error;

    fn try_from(j: TreeJson) -> Result<Self> {
        if j.labels.is_empty() {
            return Ok(KTree::zero());
        }
        let shape = TreeShape::new(j.labels, j.shape)?;
        let mut partitions = BTreeMap::new();
        for e in j.edges {
            let p = if e.dust_at.is_empty() {
                IntervalPartition::with_dust(e.blocks, e.dust, e.resolution)?
            } else {
                let mut b = Builder::default();
                let mut dust: Vec<Dust> = e
                    .dust_at
                    .iter()
                    .map(|&(before, mass)| Dust { before, mass })
                    .collect();
                dust.sort_by_key(|d| d.before);
                let mut di = 0;
                for i in 0..=e.blocks.len() {
                    while di < dust.len() && dust[di].before == i {
                        ensure(dust[di].mass >= 0.0, || "negative dust".into())?;
                        b.dust(dust[di].mass, e.resolution.max(f64::MIN_POSITIVE));
                        di += 1;
                    }
                    if let Some(&w) = e.blocks.get(i) {
                        ensure(w > 0.0 && w.is_finite(), || format!("block mass {w}"))?;
                        b.block(w);
                    }
                }
                ensure(di == dust.len(), || {
                    "dust position past the last block".into()
                })?;
                b.finish()
            };
            partitions.insert(e.labels, p);
        }
        KTree::new(shape, j.tops, partitions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_tree(x1: f64, x2: f64, beta: Vec<f64>) -> KTree {
        KTree::new(
            TreeShape::from_edges(vec![vec![1, 2]]).unwrap(),
            [(1, x1), (2, x2)].into(),
            [(vec![1, 2], IntervalPartition::new(beta).unwrap())].into(),
        )
        .unwrap()
    }

    /// Shape {[3], {2,3}}: leaf 1 hangs off the root edge, a type-1 edge.
    fn three_tree() -> KTree {
        KTree::new(
            TreeShape::from_edges(vec![vec![1, 2, 3], vec![2, 3]]).unwrap(),
            [(1, 0.5), (2, 0.25), (3, 0.125)].into(),
            [
                (
                    vec![1, 2, 3],
                    IntervalPartition::new(vec![0.05, 0.02]).unwrap(),
                ),
                (
                    vec![2, 3],
                    IntervalPartition::new(vec![0.03, 0.01, 0.015]).unwrap(),
                ),
            ]
            .into(),
        )
        .unwrap()
    }

    #[test]
    fn degenerate_two_tree_reduces_to_the_other_top() {
        let t = two_tree(0.0, 0.7, vec![]);
        assert_eq!(t.degenerate_label().unwrap(), Some(1));
        let (r, i, j) = swap_and_reduce_tree(&t).unwrap();
        assert_eq!((i, j), (1, 2));
        assert_eq!(r, KTree::single(1, 0.7).unwrap());
    }

    #[test]
    fn two_degenerate_labels_are_rejected() {
        let shape = TreeShape::from_edges(vec![vec![1, 2, 3], vec![2, 3]]).unwrap();
        let bad = KTree::new(
            shape,
            [(1, 0.0), (2, 0.0), (3, 1.0)].into(),
            [(vec![2, 3], IntervalPartition::empty())].into(),
        );
        assert!(matches!(bad, Err(Error::Invariant(_))));
        assert!(swap_and_reduce_tree(&three_tree()).is_err());
    }

    #[test]
    fn leaf_insertion_scales_the_two_tree() {
        let t = KTree::single(1, 3.0).unwrap();
        let u = two_tree(0.5, 0.5, vec![]);
        let out = insert_label(&t, &BlockRef::Leaf(1), 2, Some(&u)).unwrap();
        assert_eq!(out, two_tree(1.5, 1.5, vec![]));
    }

    #[test]
    fn internal_insertion_round_trips() {
        let t = three_tree();
        let block = BlockRef::Internal {
            edge: vec![2, 3],
            index: 1,
        };
        let out = insert_label(&t, &block, 4, None).unwrap();
        assert_eq!(out.top(4), Some(0.01));
        assert_eq!(out.partition(&[2, 3]).unwrap().blocks(), &[0.03]);
        assert_eq!(out.partition(&[2, 3, 4]).unwrap().blocks(), &[0.015]);
        assert!((out.mass() - t.mass()).abs() < 1e-15);
        assert_eq!(project_minus(&out, 4).unwrap(), t);
    }

    #[test]
    fn type1_projection_puts_the_sibling_partition_first() {
        // dropping 1 from {[3], {2,3}}: parent [3] is type-1 with sibling {2,3}
        let t = three_tree();
        let out = project_minus(&t, 1).unwrap();
        assert_eq!(out.labels(), &[2, 3]);
        assert_eq!(
            out.partition(&[2, 3]).unwrap().blocks(),
            &[0.03, 0.01, 0.015, 0.5, 0.05, 0.02]
        );
    }

    #[test]
    fn type2_projection_adds_into_the_sibling_top() {
        let t = two_tree(0.25, 0.5, vec![0.125]);
        let out = project_minus(&t, 2).unwrap();
        assert_eq!(out, KTree::single(1, 0.875).unwrap());
        assert!(project_minus(&out, 1).is_err());
        assert_eq!(project_minus(&t, 9).unwrap(), t);
    }

    #[test]
    fn projections_commute() {
        let t = three_tree();
        let a = project_minus(&project_minus(&t, 2).unwrap(), 3).unwrap();
        let b = project_minus(&project_minus(&t, 3).unwrap(), 2).unwrap();
        assert_eq!(a.labels(), b.labels());
        assert!((a.mass() - b.mass()).abs() < 1e-15);
        assert_eq!(project_to(&t, 5).unwrap(), t);
    }

    #[test]
    fn distance_to_zero_of_simple_trees() {
        assert_eq!(distance_to_zero(&KTree::zero()), 0.0);
        assert_eq!(distance_to_zero(&KTree::single(1, 2.0).unwrap()), 2.0);
    }

    #[test]
    fn json_round_trip() {
        let t = three_tree();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<KTree>(&s).unwrap(), t);
        let single = serde_json::to_string(&KTree::single(1, 2.5).unwrap()).unwrap();
        assert_eq!(
            single,
            r#"{"labels":[1],"shape":[],"tops":{"1":2.5},"edges":[]}"#
        );
    }
}
