/// Attention neighborhoods in compressed row form: for node `i`, itself
/// followed by its in-neighbors in ascending index order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhoods {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Neighborhoods {
    /// Build from directed edges `(src, dst)`. Information flows along edge
    /// direction, so `src` joins the neighborhood of `dst`. Self-loops and
    /// duplicate edges in the input are ignored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(src, dst) in edges {
            assert!(src < n && dst < n, "edge ({src}, {dst}) out of range for {n} nodes");
            if src != dst {
                incoming[dst].push(src);
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(n + edges.len());
        offsets.push(0);
        for (i, mut inc) in incoming.into_iter().enumerate() {
            inc.sort_unstable();
            inc.dedup();
            indices.push(i);
            indices.extend(inc);
            offsets.push(indices.len());
        }
        Neighborhoods { offsets, indices }
    }

    /// Block-diagonal union: node ids of each part are shifted past the
    /// previous parts and no edges cross parts.
    pub fn disjoint_union<'a>(parts: impl IntoIterator<Item = &'a Neighborhoods>) -> Self {
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        let mut base = 0;
        for part in parts {
            for i in 0..part.len() {
                indices.extend(part.of(i).iter().map(|j| j + base));
                offsets.push(indices.len());
            }
            base += part.len();
        }
        Neighborhoods { offsets, indices }
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Neighborhood of node `i`, starting with `i` itself.
    pub fn of(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Flat entry range of node `i`, for per-entry caches.
    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Total entries over all neighborhoods (self entries included).
    pub fn entries(&self) -> usize {
        self.indices.len()
    }
}
