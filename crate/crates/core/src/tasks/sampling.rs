use std::collections::{BTreeMap, HashSet};

use crate::encoder::TreeView;
use crate::graph::{Corpus, DiscussionTree};
use crate::numerics::RngStream;

use super::TaskError;

/// Why a tree was passed over by a sampler.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Skip {
    TooFewEdges,
    TooFewNodes,
    TooFewBranches,
}

/// A node of one view in a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeRef {
    pub view: usize,
    pub node: usize,
}

/// Ordered candidate reply pair: does `child` reply to `parent`?
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgePair {
    pub parent: NodeRef,
    pub child: NodeRef,
    pub label: bool,
}

/// Corrupted views plus labelled candidate pairs.
#[derive(Clone, Debug, Default)]
pub struct EdgeBatch {
    pub views: Vec<TreeView>,
    pub pairs: Vec<EdgePair>,
}

/// One tree's contribution to an [`EdgeBatch`], node indices local to `view`.
#[derive(Clone, Debug)]
pub struct EdgeSample {
    pub view: TreeView,
    pub removed: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

fn masked_count(ratio: f64, total: usize) -> usize {
    ((ratio * total as f64).round() as usize).max(1)
}

/// Removes `max(1, round(mask_ratio · edges))` reply edges; the removed
/// `(parent, child)` pairs are positives, and `neg_per_pos` negatives per
/// positive are drawn without replacement from ordered same-tree pairs that
/// are neither self-pairs nor reply edges in either direction.
pub fn sample_edge_task(
    tree: &DiscussionTree,
    mask_ratio: f64,
    neg_per_pos: usize,
    rng: &mut RngStream,
) -> Result<EdgeSample, Skip> {
    let edges = tree.edges();
    if edges.len() < 2 {
        return Err(Skip::TooFewEdges);
    }
    let k = masked_count(mask_ratio, edges.len()).min(edges.len());
    let mut removed: Vec<(usize, usize)> = rng
        .sample_indices(edges.len(), k)
        .into_iter()
        .map(|i| edges[i])
        .collect();
    removed.sort_unstable();

    let adjacent: HashSet<(usize, usize)> = edges.iter().flat_map(|&(p, c)| [(p, c), (c, p)]).collect();
    let n = tree.len();
    let candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (0..n).map(move |v| (u, v)))
        .filter(|&(u, v)| u != v && !adjacent.contains(&(u, v)))
        .collect();
    let negatives = rng
        .sample_indices(candidates.len(), k * neg_per_pos)
        .into_iter()
        .map(|i| candidates[i])
        .collect();

    let cut: Vec<usize> = removed.iter().map(|&(_, c)| c).collect();
    Ok(EdgeSample {
        view: TreeView::with_removed_edges(tree, &cut),
        removed,
        negatives,
    })
}

impl EdgeBatch {
    pub fn push(&mut self, sample: EdgeSample) {
        let view = self.views.len();
        let at = |node| NodeRef { view, node };
        self.pairs.extend(sample.removed.iter().map(|&(p, c)| EdgePair {
            parent: at(p),
            child: at(c),
            label: true,
        }));
        self.pairs.extend(sample.negatives.iter().map(|&(p, c)| EdgePair {
            parent: at(p),
            child: at(c),
            label: false,
        }));
        self.views.push(sample.view);
    }

    /// Adds `count` negatives pairing nodes of two different views.
    pub fn add_cross_tree_negatives(&mut self, count: usize, rng: &mut RngStream) {
        if self.views.len() < 2 {
            return;
        }
        for _ in 0..count {
            let a = rng.below(self.views.len());
            let mut b = rng.below(self.views.len() - 1);
            if b >= a {
                b += 1;
            }
            let parent = NodeRef {
                view: a,
                node: rng.below(self.views[a].len()),
            };
            let child = NodeRef {
                view: b,
                node: rng.below(self.views[b].len()),
            };
            self.pairs.push(EdgePair {
                parent,
                child,
                label: false,
            });
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Views with masked nodes plus the original features as targets.
#[derive(Clone, Debug)]
pub struct NodeSample {
    pub view: TreeView,
    pub masked: Vec<usize>,
    pub targets: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default)]
pub struct NodeBatch {
    pub samples: Vec<NodeSample>,
}

impl NodeBatch {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Masks `max(1, round(mask_ratio · n))` non-root nodes (at most `n - 1`).
/// Edges are left intact.
pub fn sample_node_task(tree: &DiscussionTree, mask_ratio: f64, rng: &mut RngStream) -> Result<NodeSample, Skip> {
    let n = tree.len();
    if n < 2 {
        return Err(Skip::TooFewNodes);
    }
    let k = masked_count(mask_ratio, n).min(n - 1);
    let mut masked: Vec<usize> = rng.sample_indices(n - 1, k).into_iter().map(|i| i + 1).collect();
    masked.sort_unstable();
    let targets = masked.iter().map(|&v| tree.comments()[v].features.clone()).collect();
    Ok(NodeSample {
        view: TreeView::full(tree).with_mask(&masked),
        masked,
        targets,
    })
}

/// Index-aligned anchor/positive views for a contrastive objective.
#[derive(Clone, Debug, Default)]
pub struct ContrastiveBatch {
    pub anchors: Vec<TreeView>,
    pub positives: Vec<TreeView>,
    /// `(anchor discussion_id, group_id)` per pair.
    pub provenance: Vec<(String, String)>,
    /// Discussion of each positive (equal to the anchor's for branch pairs).
    pub positive_ids: Vec<String>,
}

impl ContrastiveBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn groups(&self) -> Vec<&str> {
        self.provenance.iter().map(|(_, g)| g.as_str()).collect()
    }
}

/// Two distinct branches of one discussion, chosen uniformly. Each view is
/// the branch subtree plus the root post, with the root masked.
pub fn sample_branch_pair(tree: &DiscussionTree, rng: &mut RngStream) -> Result<(TreeView, TreeView), Skip> {
    let branches = tree.branches();
    if branches.len() < 2 {
        return Err(Skip::TooFewBranches);
    }
    let pick = rng.sample_indices(branches.len(), 2);
    let view = |b: &Vec<usize>| {
        let mut nodes = Vec::with_capacity(b.len() + 1);
        nodes.push(0);
        nodes.extend_from_slice(b);
        TreeView::induced(tree, &nodes).with_mask(&[0])
    };
    Ok((view(&branches[pick[0]]), view(&branches[pick[1]])))
}

/// Largest batch size [`sample_community_indices`] can serve from `corpus`
/// (0 when the corpus has fewer than 2 groups of at least 2 discussions).
pub fn community_capacity(corpus: &Corpus) -> usize {
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &corpus.trees {
        *sizes.entry(corpus.group_of(t)).or_default() += 1;
    }
    let sizes: Vec<usize> = sizes.into_values().collect();
    let g = sizes.len();
    if g < 2 || sizes.iter().any(|&s| s < 2) {
        return 0;
    }
    let fits = |b: usize| (0..g).all(|i| 2 * (b / g + usize::from(i < b % g)) <= sizes[i]);
    let mut b = g;
    while fits(b + 1) {
        b += 1;
    }
    b
}

/// `(anchor, positive)` tree indices, anchors drawn round-robin over groups
/// in id order; each positive is a different discussion of the anchor's
/// group and all `2 · batch_size` discussions are distinct.
pub fn sample_community_indices(
    corpus: &Corpus,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<Vec<(usize, usize)>, TaskError> {
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in corpus.trees.iter().enumerate() {
        by_group.entry(corpus.group_of(t)).or_default().push(i);
    }
    if by_group.len() < 2 || by_group.values().any(|v| v.len() < 2) {
        return Err(TaskError::Config(
            "community task needs at least 2 groups with at least 2 discussions each".into(),
        ));
    }
    if batch_size == 0 {
        return Err(TaskError::Config("batch_size must be positive".into()));
    }
    let groups: Vec<&Vec<usize>> = by_group.values().collect();
    let g = groups.len();
    let mut draws = Vec::with_capacity(g);
    for (gi, members) in groups.iter().enumerate() {
        let anchors = batch_size / g + usize::from(gi < batch_size % g);
        if 2 * anchors > members.len() {
            return Err(TaskError::Config(format!(
                "group needs {} discussions for batch size {batch_size}, has {}",
                2 * anchors,
                members.len()
            )));
        }
        let picked: Vec<usize> = rng
            .sample_indices(members.len(), 2 * anchors)
            .into_iter()
            .map(|k| members[k])
            .collect();
        draws.push((picked, anchors));
    }
    let mut next = vec![0; g];
    let mut out = Vec::with_capacity(batch_size);
    for i in 0..batch_size {
        let gi = i % g;
        let (picked, anchors) = &draws[gi];
        let j = next[gi];
        out.push((picked[j], picked[anchors + j]));
        next[gi] += 1;
    }
    Ok(out)
}

/// [`sample_community_indices`] materialized as full (uncorrupted) views.
pub fn sample_community_batch(
    corpus: &Corpus,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<ContrastiveBatch, TaskError> {
    let pairs = sample_community_indices(corpus, batch_size, rng)?;
    let mut batch = ContrastiveBatch::default();
    for (a, p) in pairs {
        let (ta, tp) = (&corpus.trees[a], &corpus.trees[p]);
        batch.anchors.push(TreeView::full(ta));
        batch.positives.push(TreeView::full(tp));
        batch
            .provenance
            .push((ta.discussion_id.clone(), corpus.group_of(ta).to_string()));
        batch.positive_ids.push(tp.discussion_id.clone());
    }
    Ok(batch)
}
