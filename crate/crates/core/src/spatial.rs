//! k-nearest-neighbour index over 3D points: a static kd-tree split at the
//! median of the widest axis, with points stored in leaf order.

const LEAF_SIZE: usize = 12;

pub struct PointIndex {
    /// Points permuted into tree order.
    points: Vec<[f64; 3]>,
    /// Original index of each permuted point.
    ids: Vec<u32>,
    /// Split axis and value per inner node, in heap numbering.
    splits: Vec<(u8, f64)>,
}

impl PointIndex {
    pub fn new(points: &[[f64; 3]]) -> Self {
        assert!(points.len() < u32::MAX as usize, "too many points for the index");
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut splits = Vec::new();
        build(points, &mut order, 0, &mut splits);
        PointIndex {
            points: order.iter().map(|&i| points[i as usize]).collect(),
            ids: order,
            splits,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest points as `(index, distance)`, nearest first; equal
    /// distances are ordered by index.
    pub fn knn(&self, query: &[f64; 3], k: usize) -> Vec<(usize, f64)> {
        let mut heap = Vec::with_capacity(k + 1);
        self.knn_squared(query, k, &mut heap);
        heap.into_iter().map(|(d2, i)| (i as usize, d2.sqrt())).collect()
    }

    /// Like [`knn`](Self::knn) into a reusable buffer of
    /// `(squared distance, index)`.
    pub fn knn_squared(&self, query: &[f64; 3], k: usize, out: &mut Vec<(f64, u32)>) {
        out.clear();
        if k == 0 || self.points.is_empty() {
            return;
        }
        self.search(0, 0, self.points.len(), query, k, out);
    }

    fn search(&self, node: usize, lo: usize, hi: usize, q: &[f64; 3], k: usize, out: &mut Vec<(f64, u32)>) {
        if hi - lo <= LEAF_SIZE {
            for i in lo..hi {
                let p = &self.points[i];
                let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                let cand = (d2, self.ids[i]);
                if out.len() == k {
                    let worst = out[k - 1];
                    if (cand.0, cand.1) >= (worst.0, worst.1) {
                        continue;
                    }
                    out.pop();
                }
                let pos = out.partition_point(|e| (e.0, e.1) < (cand.0, cand.1));
                out.insert(pos, cand);
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let (axis, value) = self.splits[node];
        let diff = q[axis as usize] - value;
        let (near, far) = if diff < 0.0 {
            ((2 * node + 1, lo, mid), (2 * node + 2, mid, hi))
        } else {
            ((2 * node + 2, mid, hi), (2 * node + 1, lo, mid))
        };
        self.search(near.0, near.1, near.2, q, k, out);
        // Points on the far side are at least |diff| away; equality is
        // still visited so index tie-breaking stays exact.
        if out.len() < k || diff * diff <= out[k - 1].0 {
            self.search(far.0, far.1, far.2, q, k, out);
        }
    }
}

fn build(points: &[[f64; 3]], order: &mut [u32], node: usize, splits: &mut Vec<(u8, f64)>) {
    if order.len() <= LEAF_SIZE {
        return;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        let p = &points[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    let value = points[order[mid] as usize][axis];
    if splits.len() <= node {
        splits.resize(node + 1, (0, 0.0));
    }
    splits[node] = (axis as u8, value);
    let (left, right) = order.split_at_mut(mid);
    build(points, left, 2 * node + 1, splits);
    build(points, right, 2 * node + 2, splits);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(pts: &[[f64; 3]], q: &[f64; 3], k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(f64, usize)> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }

    #[test]
    fn knn_matches_brute_force() {
        let pts: Vec<[f64; 3]> = (0..500)
            .map(|i| {
                let f = i as f64;
                [(f * 0.37).sin() * 10.0, (f * 0.11).cos() * 7.0, (f * 0.053).sin()]
            })
            .collect();
        let idx = PointIndex::new(&pts);
        let q = [1.0, -2.0, 0.3];
        assert_eq!(idx.knn(&q, 7), brute(&pts, &q, 7));
    }

    #[test]
    fn duplicates_are_ordered_by_index() {
        let pts = vec![[1.0, 0.0, 0.0]; 40];
        let idx = PointIndex::new(&pts);
        let got: Vec<usize> = idx.knn(&[0.0; 3], 5).iter().map(|e| e.0).collect();
        assert_eq!(got, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn k_larger_than_cloud() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(PointIndex::new(&pts).knn(&[0.9, 0.0, 0.0], 5).len(), 2);
        assert!(PointIndex::new(&[]).knn(&[0.0; 3], 3).is_empty());
    }

    proptest! {
        #[test]
        fn knn_equals_brute_force(
            // Coarse coordinates produce many exact distance ties.
            pts in prop::collection::vec(prop::array::uniform3(-20i32..20), 1..400),
            q in prop::array::uniform3(-25i32..25),
            k in 1usize..20,
        ) {
            let pts: Vec<[f64; 3]> = pts.iter().map(|p| p.map(|v| v as f64 * 0.5)).collect();
            let q = q.map(|v| v as f64 * 0.5);
            prop_assert_eq!(PointIndex::new(&pts).knn(&q, k), brute(&pts, &q, k));
        }
    }
}
