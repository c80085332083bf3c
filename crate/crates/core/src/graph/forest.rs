use super::GraphError;

/// Rooted forest over node indices `0..n`, given by parent pointers in any
/// order. Answers depth, component, LCA, and distance queries.
#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
    root: Vec<usize>,
    children: Vec<Vec<usize>>,
    // up[k][v] is the 2^k-th ancestor of v (roots map to themselves)
    up: Vec<Vec<usize>>,
}

impl Forest {
    /// Fails with the index of a node on a cycle, or of a node whose parent is
    /// out of range.
    pub fn new(parent: Vec<Option<usize>>) -> Result<Self, GraphError> {
        let n = parent.len();
        if let Some(bad) = (0..n).find(|&i| parent[i].is_some_and(|p| p >= n)) {
            return Err(GraphError::BadParentIndex(bad));
        }
        const UNSEEN: u8 = 0;
        const ACTIVE: u8 = 1;
        const DONE: u8 = 2;
        let mut state = vec![UNSEEN; n];
        let mut depth = vec![0usize; n];
        let mut root = vec![0usize; n];
        let mut path = Vec::new();
        for start in 0..n {
            if state[start] == DONE {
                continue;
            }
            path.clear();
            let mut cur = start;
            loop {
                match state[cur] {
                    DONE => break,
                    ACTIVE => return Err(GraphError::Cycle(cur)),
                    _ => {}
                }
                state[cur] = ACTIVE;
                path.push(cur);
                match parent[cur] {
                    Some(p) => cur = p,
                    None => break,
                }
            }
            // `cur` is either a finished node or the top of `path` (a root)
            let (mut d, r) = if state[cur] == DONE {
                (depth[cur] + 1, root[cur])
            } else {
                (0, cur)
            };
            for &v in path.iter().rev() {
                if parent[v].is_none() {
                    depth[v] = 0;
                    d = 1;
                } else {
                    depth[v] = d;
                    d += 1;
                }
                root[v] = r;
                state[v] = DONE;
            }
        }

        let mut children = vec![Vec::new(); n];
        for (v, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(v);
            }
        }
        let levels = usize::BITS as usize - n.max(1).leading_zeros() as usize;
        let mut up = Vec::with_capacity(levels.max(1));
        up.push((0..n).map(|v| parent[v].unwrap_or(v)).collect::<Vec<_>>());
        for k in 1..levels.max(1) {
            let prev = &up[k - 1];
            let next = (0..n).map(|v| prev[prev[v]]).collect();
            up.push(next);
        }
        Ok(Self {
            parent,
            depth,
            root,
            children,
            up,
        })
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn depth(&self, v: usize) -> usize {
        self.depth[v]
    }

    pub fn component_root(&self, v: usize) -> usize {
        self.root[v]
    }

    /// Children of `v` in index order.
    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    fn ancestor(&self, mut v: usize, mut steps: usize) -> usize {
        let mut k = 0;
        while steps > 0 {
            if steps & 1 == 1 {
                v = self.up[k][v];
            }
            steps >>= 1;
            k += 1;
        }
        v
    }

    /// Lowest common ancestor; `None` when `u` and `v` lie in different components.
    pub fn lca(&self, u: usize, v: usize) -> Option<usize> {
        if self.root[u] != self.root[v] {
            return None;
        }
        let (mut a, mut b) = (u, v);
        if self.depth[a] < self.depth[b] {
            std::mem::swap(&mut a, &mut b);
        }
        a = self.ancestor(a, self.depth[a] - self.depth[b]);
        if a == b {
            return Some(a);
        }
        for k in (0..self.up.len()).rev() {
            if self.up[k][a] != self.up[k][b] {
                a = self.up[k][a];
                b = self.up[k][b];
            }
        }
        Some(self.up[0][a])
    }

    /// Path length between `u` and `v`; `None` when disconnected.
    pub fn distance(&self, u: usize, v: usize) -> Option<usize> {
        self.lca(u, v)
            .map(|w| self.depth[u] + self.depth[v] - 2 * self.depth[w])
    }

    /// All nodes in the subtree rooted at `v`, in preorder.
    pub fn subtree(&self, v: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![v];
        while let Some(x) = stack.pop() {
            out.push(x);
            stack.extend(self.children[x].iter().rev());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn bfs_distances(parent: &[Option<usize>], src: usize) -> Vec<Option<usize>> {
        let n = parent.len();
        let mut adj = vec![Vec::new(); n];
        for (v, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                adj[v].push(*p);
                adj[*p].push(v);
            }
        }
        let mut dist = vec![None; n];
        dist[src] = Some(0);
        let mut q = VecDeque::from([src]);
        while let Some(x) = q.pop_front() {
            for &y in &adj[x] {
                if dist[y].is_none() {
                    dist[y] = Some(dist[x].unwrap() + 1);
                    q.push_back(y);
                }
            }
        }
        dist
    }

    #[test]
    fn unordered_parents_and_forest_distances_match_bfs() {
        // 0 <- 3 <- 1, 0 <- 4, 2 is a separate root with child 5
        let parent = vec![None, Some(3), None, Some(0), Some(0), Some(2)];
        let f = Forest::new(parent.clone()).unwrap();
        assert_eq!(f.depth(1), 2);
        assert_eq!(f.component_root(5), 2);
        for u in 0..parent.len() {
            let bfs = bfs_distances(&parent, u);
            for v in 0..parent.len() {
                assert_eq!(f.distance(u, v), bfs[v], "{u} {v}");
            }
        }
    }

    #[test]
    fn detects_cycles_and_bad_indices() {
        assert_eq!(Forest::new(vec![Some(0)]), Err(GraphError::Cycle(0)));
        assert!(matches!(
            Forest::new(vec![None, Some(2), Some(1)]),
            Err(GraphError::Cycle(_))
        ));
        assert_eq!(Forest::new(vec![Some(5)]), Err(GraphError::BadParentIndex(0)));
    }
}
