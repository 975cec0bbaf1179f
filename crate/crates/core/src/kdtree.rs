//! Static 2D k-d tree for bounded nearest-neighbor queries.

#[derive(Debug, Clone, Copy)]
struct Node {
    point: [f64; 2],
    /// Position of the point in the input slice.
    index: usize,
}

/// Balanced tree stored implicitly: the median of each slice is its root.
#[derive(Debug, Clone, Default)]
pub struct KdTree2 {
    nodes: Vec<Node>,
}

impl KdTree2 {
    pub fn build(points: &[[f64; 2]]) -> Self {
        let mut nodes: Vec<Node> = points
            .iter()
            .enumerate()
            .map(|(index, &point)| Node { point, index })
            .collect();
        build_rec(&mut nodes, 0);
        Self { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the nearest point with squared distance ≤ `bound²`.
    /// Equal distances resolve to the smallest input index.
    pub fn nearest_within(&self, query: [f64; 2], bound: f64) -> Option<(usize, f64)> {
        if self.nodes.is_empty() || !(bound >= 0.0) {
            return None;
        }
        let mut best = Best {
            dist_sq: bound * bound,
            index: usize::MAX,
        };
        search(&self.nodes, 0, query, &mut best);
        (best.index != usize::MAX).then(|| (best.index, best.dist_sq.sqrt()))
    }
}

struct Best {
    dist_sq: f64,
    index: usize,
}

fn build_rec(nodes: &mut [Node], depth: usize) {
    if nodes.len() <= 1 {
        return;
    }
    let axis = depth % 2;
    let mid = nodes.len() / 2;
    nodes.select_nth_unstable_by(mid, |a, b| {
        a.point[axis]
            .total_cmp(&b.point[axis])
            .then(a.index.cmp(&b.index))
    });
    let (left, rest) = nodes.split_at_mut(mid);
    build_rec(left, depth + 1);
    build_rec(&mut rest[1..], depth + 1);
}

fn search(nodes: &[Node], depth: usize, q: [f64; 2], best: &mut Best) {
    if nodes.is_empty() {
        return;
    }
    let mid = nodes.len() / 2;
    let node = nodes[mid];
    let dx = node.point[0] - q[0];
    let dy = node.point[1] - q[1];
    let d2 = dx * dx + dy * dy;
    if d2 < best.dist_sq || (d2 == best.dist_sq && node.index < best.index) {
        best.dist_sq = d2;
        best.index = node.index;
    }
    let axis = depth % 2;
    let diff = q[axis] - node.point[axis];
    let (near, far) = if diff < 0.0 {
        (&nodes[..mid], &nodes[mid + 1..])
    } else {
        (&nodes[mid + 1..], &nodes[..mid])
    };
    search(near, depth + 1, q, best);
    // ties on the splitting plane may hide a smaller index on the far side
    if diff * diff <= best.dist_sq {
        search(far, depth + 1, q, best);
    }
}
