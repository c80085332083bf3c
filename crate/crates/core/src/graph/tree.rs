use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Forest, GraphError};
use crate::numerics::unit_normalize;

/// One post or reply. `parent_id` is `None` exactly for the root post.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub id: String,
    pub parent_id: Option<String>,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<i64>,
}

impl Comment {
    pub fn new(id: impl Into<String>, parent_id: Option<&str>, features: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            parent_id: parent_id.map(str::to_string),
            features,
            author_id: None,
            timestamp: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    DuplicateId { id: String },
    MissingParent { id: String, parent_id: String },
    MultipleRoots { id: String },
    NoRoot,
    Cycle { id: String },
    DimensionMismatch { id: String, expected: usize, found: usize },
    NonFiniteFeature { id: String },
    ZeroFeatures { id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { id } => write!(f, "duplicate id {id:?}"),
            Violation::MissingParent { id, parent_id } => {
                write!(f, "comment {id:?} replies to missing parent {parent_id:?}")
            }
            Violation::MultipleRoots { id } => write!(f, "multiple roots: {id:?} has no parent"),
            Violation::NoRoot => write!(f, "no root comment"),
            Violation::Cycle { id } => write!(f, "cycle through comment {id:?}"),
            Violation::DimensionMismatch { id, expected, found } => {
                write!(f, "comment {id:?} has {found} features, expected {expected}")
            }
            Violation::NonFiniteFeature { id } => write!(f, "comment {id:?} has a non-finite feature"),
            Violation::ZeroFeatures { id } => write!(f, "comment {id:?} has an all-zero feature vector"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
#[error("discussion {discussion_id:?} is invalid: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ValidationError {
    pub discussion_id: String,
    pub violations: Vec<Violation>,
}

/// A validated discussion: one root plus replies, stored parents-first.
#[derive(Clone, Debug)]
pub struct DiscussionTree {
    pub discussion_id: String,
    pub community_id: String,
    comments: Vec<Comment>,
    forest: Forest,
    index: HashMap<String, usize>,
}

impl PartialEq for DiscussionTree {
    fn eq(&self, other: &Self) -> bool {
        self.discussion_id == other.discussion_id
            && self.community_id == other.community_id
            && self.comments == other.comments
    }
}

/// Validates raw comments into a tree.
///
/// Comments are reordered parents-first when needed (stable by input
/// position) and features are scaled to unit L2 norm. Every violation found
/// is reported, each with the offending comment id.
pub fn validate_tree(
    discussion_id: &str,
    community_id: &str,
    comments: Vec<Comment>,
    d_feat: Option<usize>,
) -> Result<DiscussionTree, ValidationError> {
    let mut violations = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::with_capacity(comments.len());
    for (i, c) in comments.iter().enumerate() {
        if index.insert(c.id.clone(), i).is_some() {
            violations.push(Violation::DuplicateId { id: c.id.clone() });
            // keep the first occurrence as the resolution target
            index.insert(c.id.clone(), comments.iter().position(|o| o.id == c.id).unwrap());
        }
    }

    let mut roots = comments.iter().filter(|c| c.parent_id.is_none());
    match roots.next() {
        None => violations.push(Violation::NoRoot),
        Some(_) => {
            for extra in roots {
                violations.push(Violation::MultipleRoots { id: extra.id.clone() });
            }
        }
    }

    let expected = d_feat.or_else(|| comments.first().map(|c| c.features.len()));
    let mut parent_idx = Vec::with_capacity(comments.len());
    for c in &comments {
        match &c.parent_id {
            None => parent_idx.push(None),
            Some(p) if *p == c.id => {
                violations.push(Violation::Cycle { id: c.id.clone() });
                parent_idx.push(None);
            }
            Some(p) => match index.get(p) {
                Some(&j) => parent_idx.push(Some(j)),
                None => {
                    violations.push(Violation::MissingParent {
                        id: c.id.clone(),
                        parent_id: p.clone(),
                    });
                    parent_idx.push(None);
                }
            },
        }
        if let Some(d) = expected {
            if c.features.len() != d || d == 0 {
                violations.push(Violation::DimensionMismatch {
                    id: c.id.clone(),
                    expected: d,
                    found: c.features.len(),
                });
            }
        }
        if c.features.iter().any(|x| !x.is_finite()) {
            violations.push(Violation::NonFiniteFeature { id: c.id.clone() });
        } else if c.features.iter().all(|&x| x == 0.0) {
            violations.push(Violation::ZeroFeatures { id: c.id.clone() });
        }
    }

    if violations.is_empty() {
        if let Err(GraphError::Cycle(i)) = Forest::new(parent_idx.clone()) {
            violations.push(Violation::Cycle {
                id: comments[i].id.clone(),
            });
        }
    }
    if !violations.is_empty() {
        return Err(ValidationError {
            discussion_id: discussion_id.to_string(),
            violations,
        });
    }

    let order = topological_order(&parent_idx);
    let mut comments: Vec<Option<Comment>> = comments.into_iter().map(Some).collect();
    let mut ordered: Vec<Comment> = order.iter().map(|&i| comments[i].take().unwrap()).collect();
    for c in &mut ordered {
        unit_normalize(&mut c.features);
    }
    Ok(DiscussionTree::from_ordered(discussion_id, community_id, ordered))
}

/// Parents-first order, taking the smallest available input position first.
fn topological_order(parent: &[Option<usize>]) -> Vec<usize> {
    if parent.iter().enumerate().all(|(i, p)| p.is_none_or(|p| p < i)) {
        return (0..parent.len()).collect();
    }
    let mut children = vec![Vec::new(); parent.len()];
    let mut heap = BinaryHeap::new();
    for (i, p) in parent.iter().enumerate() {
        match p {
            Some(p) => children[*p].push(i),
            None => heap.push(Reverse(i)),
        }
    }
    let mut out = Vec::with_capacity(parent.len());
    while let Some(Reverse(i)) = heap.pop() {
        out.push(i);
        for &c in &children[i] {
            heap.push(Reverse(c));
        }
    }
    out
}

impl DiscussionTree {
    /// Builds from comments already known to be valid and parents-first.
    fn from_ordered(discussion_id: &str, community_id: &str, comments: Vec<Comment>) -> Self {
        let index: HashMap<String, usize> = comments.iter().enumerate().map(|(i, c)| (c.id.clone(), i)).collect();
        let parents = comments
            .iter()
            .map(|c| c.parent_id.as_ref().map(|p| index[p]))
            .collect();
        let forest = Forest::new(parents).expect("validated tree is acyclic");
        Self {
            discussion_id: discussion_id.to_string(),
            community_id: community_id.to_string(),
            comments,
            forest,
            index,
        }
    }

    pub fn comments(&self) -> &[Comment] {
        &self.comments
    }

    pub fn len(&self) -> usize {
        self.comments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comments.is_empty()
    }

    pub fn d_feat(&self) -> usize {
        self.comments[0].features.len()
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    pub fn index_of(&self, id: &str) -> Result<usize, GraphError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownId(id.to_string()))
    }

    pub fn parent_of(&self, i: usize) -> Option<usize> {
        self.forest.parent(i)
    }

    /// Reply edges as `(parent, child)` index pairs, in child order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.len())
            .filter_map(|c| self.forest.parent(c).map(|p| (p, c)))
            .collect()
    }

    pub fn depth_of(&self, id: &str) -> Result<usize, GraphError> {
        Ok(self.forest.depth(self.index_of(id)?))
    }

    pub fn tree_distance(&self, u: &str, v: &str) -> Result<usize, GraphError> {
        let (a, b) = (self.index_of(u)?, self.index_of(v)?);
        self.forest
            .distance(a, b)
            .ok_or_else(|| GraphError::Disconnected(u.to_string(), v.to_string()))
    }

    /// Direct children of the root, in storage order.
    pub fn root_children(&self) -> &[usize] {
        self.forest.children(0)
    }

    /// Node indices of each subtree hanging off the root, one list per
    /// depth-1 child, each in preorder.
    pub fn branches(&self) -> Vec<Vec<usize>> {
        self.root_children().iter().map(|&c| self.forest.subtree(c)).collect()
    }

    /// [`Self::branches`] as comment-id sets.
    pub fn branch_ids(&self) -> Vec<BTreeSet<String>> {
        self.branches()
            .into_iter()
            .map(|b| b.into_iter().map(|i| self.comments[i].id.clone()).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(id: &str, parent: Option<&str>) -> Comment {
        Comment::new(id, parent, vec![1.0, 0.0])
    }

    fn tree(comments: Vec<Comment>) -> DiscussionTree {
        validate_tree("d", "comm", comments, Some(2)).unwrap()
    }

    #[test]
    fn single_root() {
        let t = tree(vec![c("r", None)]);
        assert_eq!(t.len(), 1);
        assert_eq!(t.depth_of("r").unwrap(), 0);
        assert!(t.branches().is_empty());
    }

    #[test]
    fn multiple_roots_reported() {
        let err = validate_tree("d", "x", vec![c("a", None), c("b", None)], Some(2)).unwrap_err();
        assert_eq!(err.violations, vec![Violation::MultipleRoots { id: "b".into() }]);
    }

    #[test]
    fn self_parent_is_cycle() {
        let err = validate_tree("d", "x", vec![c("r", None), c("a", Some("a"))], Some(2)).unwrap_err();
        assert_eq!(err.violations, vec![Violation::Cycle { id: "a".into() }]);
    }

    #[test]
    fn every_violation_listed() {
        let mut bad = c("b", Some("zz"));
        bad.features = vec![1.0];
        let err = validate_tree(
            "d",
            "x",
            vec![c("r", None), c("a", Some("r")), c("a", Some("r")), bad],
            Some(2),
        )
        .unwrap_err();
        assert!(err.violations.contains(&Violation::DuplicateId { id: "a".into() }));
        assert!(err.violations.contains(&Violation::MissingParent {
            id: "b".into(),
            parent_id: "zz".into()
        }));
        assert!(err.violations.contains(&Violation::DimensionMismatch {
            id: "b".into(),
            expected: 2,
            found: 1
        }));
    }

    #[test]
    fn longer_cycle_detected() {
        let err = validate_tree(
            "d",
            "x",
            vec![c("r", None), c("a", Some("b")), c("b", Some("a"))],
            Some(2),
        )
        .unwrap_err();
        assert!(matches!(err.violations[0], Violation::Cycle { .. }));
    }

    #[test]
    fn chain_depths_and_distances() {
        let t = tree(vec![
            c("r", None),
            c("a", Some("r")),
            c("b", Some("a")),
            c("s", Some("r")),
        ]);
        assert_eq!(t.depth_of("b").unwrap(), 2);
        assert_eq!(t.tree_distance("b", "b").unwrap(), 0);
        assert_eq!(t.tree_distance("a", "s").unwrap(), 2);
        assert_eq!(t.tree_distance("b", "s").unwrap(), 3);
        assert_eq!(t.depth_of("nope"), Err(GraphError::UnknownId("nope".into())));
    }

    #[test]
    fn out_of_order_input_is_reordered() {
        let t = tree(vec![c("b", Some("a")), c("r", None), c("a", Some("r"))]);
        let ids: Vec<&str> = t.comments().iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["r", "a", "b"]);
    }

    #[test]
    fn features_normalized() {
        let mut x = c("r", None);
        x.features = vec![3.0, 4.0];
        let t = tree(vec![x]);
        assert_eq!(t.comments()[0].features, vec![0.6, 0.8]);
    }

    #[test]
    fn star_branches_are_singletons() {
        let t = tree(vec![
            c("r", None),
            c("a", Some("r")),
            c("b", Some("r")),
            c("c", Some("r")),
        ]);
        assert_eq!(t.branches(), vec![vec![1], vec![2], vec![3]]);
    }
}
