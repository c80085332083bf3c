use crate::graph::{DiscussionTree, Forest};

use super::{EncoderConfig, EncoderError};

/// The encoder's input: node features plus the *active* reply edges.
///
/// Depth, sibling index, and pairwise distance are derived from the active
/// edges only, per connected component. Removing an edge turns the child into
/// the root of its own component.
#[derive(Clone, Debug)]
pub struct TreeView {
    d_feat: usize,
    features: Vec<f64>,
    masked: Vec<bool>,
    order_key: Vec<u64>,
    source: Vec<usize>,
    forest: Forest,
    sibling: Vec<usize>,
}

impl TreeView {
    /// `order_key` ranks siblings (reply order); `source` maps each node to
    /// its index in the originating tree, where index 0 is the root post.
    pub fn new(
        features: Vec<Vec<f64>>,
        parent: Vec<Option<usize>>,
        masked: Vec<bool>,
        order_key: Vec<u64>,
        source: Vec<usize>,
    ) -> Result<Self, EncoderError> {
        let n = features.len();
        if n == 0 {
            return Err(EncoderError::View("empty view".into()));
        }
        if [parent.len(), masked.len(), order_key.len(), source.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(EncoderError::View("per-node field lengths differ".into()));
        }
        let d_feat = features[0].len();
        if features.iter().any(|f| f.len() != d_feat) {
            return Err(EncoderError::View("ragged feature rows".into()));
        }
        let forest = Forest::new(parent).map_err(|e| EncoderError::View(e.to_string()))?;
        let mut sibling = vec![0; n];
        for v in 0..n {
            let mut kids: Vec<usize> = forest.children(v).to_vec();
            kids.sort_by_key(|&c| (order_key[c], source[c]));
            for (rank, c) in kids.into_iter().enumerate() {
                sibling[c] = rank;
            }
        }
        Ok(Self {
            d_feat,
            features: features.concat(),
            masked,
            order_key,
            source,
            forest,
            sibling,
        })
    }

    /// The uncorrupted view of a whole tree.
    pub fn full(tree: &DiscussionTree) -> Self {
        Self::with_removed_edges(tree, &[])
    }

    /// The whole tree with the reply edges into `removed_children` cut.
    pub fn with_removed_edges(tree: &DiscussionTree, removed_children: &[usize]) -> Self {
        let mut parent: Vec<Option<usize>> = tree.forest().parents().to_vec();
        for &c in removed_children {
            parent[c] = None;
        }
        let n = tree.len();
        Self::new(
            tree.comments().iter().map(|c| c.features.clone()).collect(),
            parent,
            vec![false; n],
            (0..n as u64).collect(),
            (0..n).collect(),
        )
        .expect("tree-derived view is consistent")
    }

    /// The sub-forest induced by `nodes` (tree indices). A node whose parent
    /// is not selected becomes a component root.
    pub fn induced(tree: &DiscussionTree, nodes: &[usize]) -> Self {
        let mut local = vec![usize::MAX; tree.len()];
        for (k, &v) in nodes.iter().enumerate() {
            local[v] = k;
        }
        let parent = nodes
            .iter()
            .map(|&v| tree.parent_of(v).map(|p| local[p]).filter(|&p| p != usize::MAX))
            .collect();
        Self::new(
            nodes.iter().map(|&v| tree.comments()[v].features.clone()).collect(),
            parent,
            vec![false; nodes.len()],
            nodes.iter().map(|&v| v as u64).collect(),
            nodes.to_vec(),
        )
        .expect("induced view is consistent")
    }

    pub fn with_mask(mut self, nodes: &[usize]) -> Self {
        for &v in nodes {
            self.masked[v] = true;
        }
        self
    }

    /// Node `k` of the result is node `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (k, &old) in perm.iter().enumerate() {
            inverse[old] = k;
        }
        Self::new(
            perm.iter().map(|&o| self.feature_row(o).to_vec()).collect(),
            perm.iter()
                .map(|&o| self.forest.parent(o).map(|p| inverse[p]))
                .collect(),
            perm.iter().map(|&o| self.masked[o]).collect(),
            perm.iter().map(|&o| self.order_key[o]).collect(),
            perm.iter().map(|&o| self.source[o]).collect(),
        )
        .expect("permutation preserves consistency")
    }

    pub fn len(&self) -> usize {
        self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    pub fn d_feat(&self) -> usize {
        self.d_feat
    }

    pub fn feature_row(&self, v: usize) -> &[f64] {
        &self.features[v * self.d_feat..(v + 1) * self.d_feat]
    }

    pub fn is_masked(&self, v: usize) -> bool {
        self.masked[v]
    }

    pub fn masked_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| self.masked[v]).collect()
    }

    pub fn source(&self, v: usize) -> usize {
        self.source[v]
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.forest.parent(v)
    }

    pub fn depth(&self, v: usize) -> usize {
        self.forest.depth(v)
    }

    pub fn sibling_index(&self, v: usize) -> usize {
        self.sibling[v]
    }

    /// Active-edge distance, `None` across components.
    pub fn distance(&self, u: usize, v: usize) -> Option<usize> {
        self.forest.distance(u, v)
    }

    /// Attention-bias bucket: exact distance below `max_dist_bucket`, the
    /// "beyond" bucket `max_dist_bucket` at or above it, and the
    /// "disconnected" bucket `max_dist_bucket + 1` across components.
    pub fn bucket(&self, u: usize, v: usize, config: &EncoderConfig) -> usize {
        match self.distance(u, v) {
            None => config.disconnected_bucket(),
            Some(d) => d.min(config.max_dist_bucket),
        }
    }

    /// Nodes averaged into the discussion embedding: every node other than
    /// the root post, or the root alone when it is the only node.
    pub fn readout_nodes(&self) -> Vec<usize> {
        let nodes: Vec<usize> = (0..self.len()).filter(|&v| self.source[v] != 0).collect();
        if nodes.is_empty() {
            (0..self.len()).collect()
        } else {
            nodes
        }
    }
}
