//! Exact nearest-neighbour queries with a bucketed KD-tree.

use crate::Vec3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

/// KD-tree over a fixed point set. Queries are exact; ties on distance are
/// broken towards the lowest point index.
#[derive(Debug, Clone)]
pub struct NearestNeighborIndex {
    points: Vec<Vec3>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

impl NearestNeighborIndex {
    pub fn new(points: &[Vec3]) -> Self {
        let mut index = NearestNeighborIndex {
            points: points.to_vec(),
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            index.build(0, points.len());
        }
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start: start as u32, end: end as u32 });
            return id;
        }
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i as usize]);
            hi = hi.sup(&self.points[i as usize]);
        }
        let axis = (hi - lo).imax();
        let mid = (start + end) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a as usize][axis]
                .total_cmp(&points[b as usize][axis])
                .then(a.cmp(&b))
        });
        let value = self.points[self.order[mid] as usize][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id as usize] = Node::Split { axis: axis as u8, value, left, right };
        id
    }

    /// Index and squared distance of the nearest point, `None` when empty.
    pub fn nearest(&self, query: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (u32::MAX, f64::INFINITY);
        self.search(0, query, &mut best);
        Some((best.0 as usize, best.1))
    }

    fn search(&self, node: u32, q: &Vec3, best: &mut (u32, f64)) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    let d2 = (self.points[i as usize] - q).norm_squared();
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        *best = (i, d2);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // `<=` keeps equal-distance candidates reachable for the tie rule.
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

/// O(n) reference search with the same tie rule.
pub fn brute_force_nearest(points: &[Vec3], query: &Vec3) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d2 = (p - query).norm_squared();
        if best.map_or(true, |(_, b)| d2 < b) {
            best = Some((i, d2));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn matches_brute_force_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..200 {
            let n = rng.gen_range(1..=500);
            // Coarse lattice coordinates produce many exact ties.
            let lattice = trial % 2 == 0;
            let pt = |rng: &mut ChaCha8Rng| {
                if lattice {
                    Vec3::from_fn(|_, _| rng.gen_range(-3..=3) as f64 * 0.25)
                } else {
                    Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0))
                }
            };
            let pts: Vec<Vec3> = (0..n).map(|_| pt(&mut rng)).collect();
            let index = NearestNeighborIndex::new(&pts);
            for _ in 0..20 {
                let q = pt(&mut rng);
                assert_eq!(index.nearest(&q), brute_force_nearest(&pts, &q));
            }
        }
    }

    #[test]
    fn empty_index() {
        assert!(NearestNeighborIndex::new(&[]).nearest(&Vec3::zeros()).is_none());
    }
}
