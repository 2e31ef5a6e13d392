//! Tree shapes as sets of edge label-sets.
//!
//! An edge is the set of leaf labels below it, stored sorted. Leaf edges `{i}`
//! are implicit; `edges` holds only the internal ones, including the root edge.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomSource;

pub type Edge = Vec<u32>;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TreeShape {
    labels: Vec<u32>,
    edges: BTreeSet<Edge>,
}

/// Reasons a set of edges fails to be a binary tree shape.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ShapeViolation {
    #[error("duplicate label {0}")]
    DuplicateLabel(u32),
    #[error("edge {0:?} is not a sorted set of at least two labels")]
    MalformedEdge(Edge),
    #[error("edge {0:?} uses labels outside the label set")]
    ForeignLabel(Edge),
    #[error("missing root edge")]
    MissingRoot,
    #[error("expected {expected} internal edges, found {found}")]
    EdgeCount { expected: usize, found: usize },
    #[error("edge {edge:?} has {children} children")]
    NonBinary { edge: Edge, children: usize },
    #[error("children of edge {0:?} do not partition it")]
    NotPartitioned(Edge),
}

fn is_subset(a: &[u32], b: &[u32]) -> bool {
    a.iter().all(|x| b.binary_search(x).is_ok())
}

fn without(e: &[u32], j: u32) -> Edge {
    e.iter().copied().filter(|&x| x != j).collect()
}

fn with(e: &[u32], j: u32) -> Edge {
    let mut out = e.to_vec();
    if let Err(pos) = out.binary_search(&j) {
        out.insert(pos, j);
    }
    out
}

fn replace(e: &[u32], from: u32, to: u32) -> Edge {
    if e.binary_search(&from).is_err() {
        return e.to_vec();
    }
    with(&without(e, from), to)
}

impl TreeShape {
    /// Shape on `labels` with internal `edges`, validated.
    pub fn new(
        labels: impl IntoIterator<Item = u32>,
        edges: impl IntoIterator<Item = Edge>,
    ) -> Result<Self> {
        let mut labels: Vec<u32> = labels.into_iter().collect();
        labels.sort_unstable();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Invariant(
                ShapeViolation::DuplicateLabel(w[0]).to_string(),
            ));
        }
        let edges = edges
            .into_iter()
            .map(|mut e| {
                e.sort_unstable();
                e
            })
            .collect();
        let t = Self { labels, edges };
        validate_shape(&t).map_err(|v| Error::Invariant(v.to_string()))?;
        Ok(t)
    }

    /// Shape whose label set is its largest edge (at least two labels).
    pub fn from_edges(edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let edges: Vec<Edge> = edges.into_iter().collect();
        let labels = edges
            .iter()
            .max_by_key(|e| e.len())
            .cloned()
            .unwrap_or_default();
        Self::new(labels, edges)
    }

    /// The one-leaf shape.
    pub fn single(label: u32) -> Self {
        Self {
            labels: vec![label],
            edges: BTreeSet::new(),
        }
    }

    pub(crate) fn from_parts_unchecked(labels: Vec<u32>, edges: BTreeSet<Edge>) -> Self {
        Self { labels, edges }
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn contains_label(&self, i: u32) -> bool {
        self.labels.binary_search(&i).is_ok()
    }

    pub fn root_edge(&self) -> Option<&Edge> {
        self.edges.iter().find(|e| e.len() == self.labels.len())
    }

    /// Children of `e`: maximal proper subsets among internal and leaf edges.
    pub fn children(&self, e: &[u32]) -> Vec<Edge> {
        let mut inner: Vec<&Edge> = self
            .edges
            .iter()
            .filter(|f| f.len() < e.len() && is_subset(f, e))
            .collect();
        inner.sort_by_key(|f| std::cmp::Reverse(f.len()));
        let mut out: Vec<Edge> = Vec::new();
        for f in inner {
            if !out.iter().any(|g| is_subset(f, g)) {
                out.push(f.clone());
            }
        }
        for &i in e {
            if !out.iter().any(|g| g.binary_search(&i).is_ok()) {
                out.push(vec![i]);
            }
        }
        out.sort();
        out
    }

    fn require_edge(&self, e: &[u32]) -> Result<()> {
        if self.edges.contains(e) {
            Ok(())
        } else {
            Err(Error::Lookup(format!("edge {e:?} not in shape {self}")))
        }
    }

    /// Number of leaf children of `e` (0, 1 or 2).
    pub fn edge_type(&self, e: &[u32]) -> Result<u8> {
        self.require_edge(e)?;
        Ok(self.children(e).iter().filter(|c| c.len() == 1).count() as u8)
    }

    /// Smallest internal edge strictly containing `e` (an edge or a singleton).
    pub fn parent_edge(&self, e: &[u32]) -> Result<Edge> {
        self.edges
            .iter()
            .filter(|f| f.len() > e.len() && is_subset(e, f))
            .min_by_key(|f| f.len())
            .cloned()
            .ok_or_else(|| Error::Lookup(format!("{e:?} has no parent in {self}")))
    }

    /// The other child of `parent(e)`.
    pub fn sibling(&self, e: &[u32]) -> Result<Edge> {
        let p = self.parent_edge(e)?;
        Ok(self
            .children(&p)
            .into_iter()
            .find(|c| c.as_slice() != e)
            .expect("binary shape"))
    }

    /// Sibling of the parent, or `None` when the parent is the root edge.
    pub fn uncle(&self, e: &[u32]) -> Result<Option<Edge>> {
        let p = self.parent_edge(e)?;
        if p.len() == self.labels.len() {
            return Ok(None);
        }
        self.sibling(&p).map(Some)
    }

    /// `J(t, i) = max{i, a, b}` with `a`, `b` the least labels of sibling and uncle of `{i}`.
    pub fn dropped_label(&self, i: u32) -> Result<u32> {
        if !self.contains_label(i) || self.k() < 2 {
            return Err(Error::Parameter(format!("label {i} in shape {self}")));
        }
        let a = self.sibling(&[i])?[0];
        let b = self.uncle(&[i])?.map_or(0, |u| u[0]);
        Ok(i.max(a).max(b))
    }

    /// `t ⊕ (F, j)`: subdivide edge `f` (internal or leaf) and hang the new leaf `j` there.
    pub fn insert(&self, f: &[u32], j: u32) -> Result<TreeShape> {
        if self.contains_label(j) {
            return Err(Error::Parameter(format!(
                "label {j} already in shape {self}"
            )));
        }
        let valid = if f.len() == 1 {
            self.contains_label(f[0])
        } else {
            self.edges.contains(f)
        };
        if !valid {
            return Err(Error::Lookup(format!("edge {f:?} not in shape {self}")));
        }
        let mut edges: BTreeSet<Edge> = self
            .edges
            .iter()
            .map(|e| {
                if e.len() > f.len() && is_subset(f, e) {
                    with(e, j)
                } else {
                    e.clone()
                }
            })
            .collect();
        edges.insert(with(f, j));
        Ok(Self {
            labels: with(&self.labels, j),
            edges,
        })
    }

    /// All leaf and internal edges, leaves first.
    pub fn all_edges(&self) -> Vec<Edge> {
        self.labels
            .iter()
            .map(|&i| vec![i])
            .chain(self.edges.iter().cloned())
            .collect()
    }
}

impl fmt::Display for TreeShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut edges: Vec<&Edge> = self.edges.iter().collect();
        edges.sort();
        write!(f, "[")?;
        for (n, e) in edges.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "[")?;
            for (m, x) in e.iter().enumerate() {
                if m > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{x}")?;
            }
            write!(f, "]")?;
        }
        write!(f, "]")
    }
}

/// Check every shape invariant.
pub fn validate_shape(t: &TreeShape) -> std::result::Result<(), ShapeViolation> {
    let k = t.labels.len();
    for e in &t.edges {
        if e.len() < 2 || e.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ShapeViolation::MalformedEdge(e.clone()));
        }
        if !is_subset(e, &t.labels) {
            return Err(ShapeViolation::ForeignLabel(e.clone()));
        }
    }
    if k >= 2 && !t.edges.contains(&t.labels) {
        return Err(ShapeViolation::MissingRoot);
    }
    let expected = k.saturating_sub(1);
    if t.edges.len() != expected {
        return Err(ShapeViolation::EdgeCount {
            expected,
            found: t.edges.len(),
        });
    }
    for e in &t.edges {
        let children = t.children(e);
        if children.len() != 2 {
            return Err(ShapeViolation::NonBinary {
                edge: e.clone(),
                children: children.len(),
            });
        }
        let (c0, c1) = (&children[0], &children[1]);
        if c0.len() + c1.len() != e.len() || c0.iter().any(|x| c1.binary_search(x).is_ok()) {
            return Err(ShapeViolation::NotPartitioned(e.clone()));
        }
    }
    Ok(())
}

/// Every shape on `labels`, built by inserting labels in increasing order.
pub fn enumerate_shapes(labels: &[u32]) -> Vec<TreeShape> {
    let mut labels = labels.to_vec();
    labels.sort_unstable();
    let Some((&first, rest)) = labels.split_first() else {
        return Vec::new();
    };
    let mut shapes = vec![TreeShape::single(first)];
    for &j in rest {
        shapes = shapes
            .iter()
            .flat_map(|t| {
                t.all_edges()
                    .into_iter()
                    .map(move |f| t.insert(&f, j).expect("fresh label on a valid edge"))
            })
            .collect();
    }
    shapes
}

/// Uniform shape on `labels`: each insertion picks one of the `2m - 3` edges uniformly.
pub fn sample_uniform_shape(labels: &[u32], rng: &mut RandomSource) -> Result<TreeShape> {
    let mut labels = labels.to_vec();
    labels.sort_unstable();
    let Some((&first, rest)) = labels.split_first() else {
        return Err(Error::Parameter("empty label set".into()));
    };
    let mut t = TreeShape::single(first);
    for &j in rest {
        let edges = t.all_edges();
        let f = &edges[rng.random_range(0..edges.len())];
        t = t.insert(f, j)?;
    }
    Ok(t)
}

/// `ϱ̃(t, i)`: swap `i` with `j = J(t, i)`, drop leaf `j` and contract its branch point.
/// Returns the reduced shape on `A \ {j}` and `j`.
pub fn swap_and_reduce_shape(t: &TreeShape, i: u32) -> Result<(TreeShape, u32)> {
    let j = t.dropped_label(i)?;
    let parent = t.parent_edge(&[i])?;
    let mut edges = BTreeSet::new();
    for e in t.edges.iter().filter(|e| **e != parent) {
        let image = swap_image(e, i, j);
        if image.len() >= 2 && !edges.insert(image.clone()) {
            return Err(Error::Invariant(format!(
                "edge collision at {image:?} reducing {t} at {i}"
            )));
        }
    }
    let labels = swap_image(&t.labels, i, j);
    Ok((TreeShape::from_parts_unchecked(labels, edges), j))
}

/// `φ_{t,i}`: delete `i`, then rename `j` to `i`.
pub(crate) fn swap_image(e: &[u32], i: u32, j: u32) -> Edge {
    replace(&without(e, i), j, i)
}
