use std::cmp::Ordering;

use super::cloud::{euclid, euclid_rows, PointCloud};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// `k` nearest reference rows for every query, sorted ascending by distance.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSet {
    pub k: usize,
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl NeighborSet {
    pub fn queries(&self) -> usize {
        self.indices.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn row(&self, q: usize) -> &[usize] {
        &self.indices[q * self.k..(q + 1) * self.k]
    }

    pub fn row_distances(&self, q: usize) -> &[f64] {
        &self.distances[q * self.k..(q + 1) * self.k]
    }
}

fn by_dist_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn select_k(buf: &mut Vec<(f64, usize)>, k: usize, out: &mut NeighborSet) {
    if k < buf.len() {
        buf.select_nth_unstable_by(k - 1, by_dist_then_index);
        buf.truncate(k);
    }
    buf.sort_unstable_by(by_dist_then_index);
    for &(d, i) in buf.iter() {
        out.indices.push(i);
        out.distances.push(d);
    }
}

/// Exact Euclidean k-nearest neighbours of each query point; ties go to the
/// lower reference index.
pub fn knn(query: &PointCloud, reference: &PointCloud, k: usize) -> Result<NeighborSet> {
    check_k(k, reference.len())?;
    let mut out = NeighborSet {
        k,
        indices: Vec::with_capacity(query.len() * k),
        distances: Vec::with_capacity(query.len() * k),
    };
    let mut buf = Vec::with_capacity(reference.len());
    for q in query.points() {
        buf.clear();
        buf.extend(reference.points().iter().enumerate().map(|(i, r)| (euclid(q, r), i)));
        select_k(&mut buf, k, &mut out);
    }
    Ok(out)
}

/// k-nearest neighbours between rows of two matrices of equal width.
pub fn knn_rows(query: &Tensor, reference: &Tensor, k: usize) -> Result<NeighborSet> {
    if query.cols() != reference.cols() {
        return Err(Error::shape("knn_rows", query.shape(), reference.shape()));
    }
    check_k(k, reference.rows())?;
    let mut out = NeighborSet {
        k,
        indices: Vec::with_capacity(query.rows() * k),
        distances: Vec::with_capacity(query.rows() * k),
    };
    let mut buf = Vec::with_capacity(reference.rows());
    for q in 0..query.rows() {
        let qr = query.row(q);
        buf.clear();
        buf.extend((0..reference.rows()).map(|i| (euclid_rows(qr, reference.row(i)), i)));
        select_k(&mut buf, k, &mut out);
    }
    Ok(out)
}

fn check_k(k: usize, n_ref: usize) -> Result<()> {
    if n_ref == 0 {
        return Err(Error::invalid("knn: empty reference set"));
    }
    if k == 0 || k > n_ref {
        return Err(Error::invalid(format!("knn: k = {k} must be in 1..={n_ref}")));
    }
    Ok(())
}

/// Greedy farthest point sampling starting at `seed_index`. Each step picks
/// the point whose distance to the chosen set is largest, lowest index on ties.
pub fn farthest_point_sample(pc: &PointCloud, m: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = pc.len();
    if m == 0 || m > n {
        return Err(Error::invalid(format!("fps: m = {m} must be in 1..={n}")));
    }
    if seed_index >= n {
        return Err(Error::Index {
            op: "farthest_point_sample",
            index: seed_index,
            len: n,
        });
    }
    let pts = pc.points();
    let mut chosen = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut cur = seed_index;
    for _ in 0..m {
        chosen.push(cur);
        taken[cur] = true;
        let c = pts[cur];
        let mut best = usize::MAX;
        let mut bd = f64::NEG_INFINITY;
        for i in 0..n {
            let d = euclid(&pts[i], &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !taken[i] && min_d[i] > bd {
                bd = min_d[i];
                best = i;
            }
        }
        cur = best;
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|i| [i as f64, 0.0, 0.0]).collect()).unwrap()
    }

    #[test]
    fn fps_collinear_picks_far_endpoint() {
        assert_eq!(farthest_point_sample(&line(10), 2, 0).unwrap(), vec![0, 9]);
    }

    #[test]
    fn fps_full_count_is_permutation() {
        let mut idx = farthest_point_sample(&line(10), 10, 4).unwrap();
        assert_eq!(idx[0], 4);
        idx.sort_unstable();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn fps_rejects_oversized_request() {
        assert!(farthest_point_sample(&line(3), 4, 0).is_err());
        assert!(farthest_point_sample(&line(3), 0, 0).is_err());
    }

    #[test]
    fn fps_duplicates_fall_back_to_lowest_index() {
        let pc = PointCloud::new(vec![[0.0; 3]; 4]).unwrap();
        assert_eq!(farthest_point_sample(&pc, 4, 2).unwrap(), vec![2, 0, 1, 3]);
    }

    #[test]
    fn knn_coincident_point_first() {
        let r = line(5);
        let q = PointCloud::new(vec![[3.0, 0.0, 0.0]]).unwrap();
        let nn = knn(&q, &r, 2).unwrap();
        assert_eq!(nn.row(0)[0], 3);
        assert_eq!(nn.row_distances(0)[0], 0.0);
        // 2 and 4 are equidistant; lower index wins.
        assert_eq!(nn.row(0)[1], 2);
    }

    #[test]
    fn knn_full_k_sorts_everything() {
        let r = line(5);
        let q = PointCloud::new(vec![[10.0, 0.0, 0.0]]).unwrap();
        let nn = knn(&q, &r, 5).unwrap();
        assert_eq!(nn.row(0), &[4, 3, 2, 1, 0]);
    }

    #[test]
    fn knn_rejects_large_k() {
        assert!(knn(&line(3), &line(3), 4).is_err());
    }

    proptest! {
        #[test]
        fn fps_ignores_order_of_other_points(
            pts in proptest::collection::vec(proptest::array::uniform3(-1.0f64..1.0), 4..24),
            rot in 0usize..24,
        ) {
            let pc = PointCloud::new(pts.clone()).unwrap();
            let m = pts.len() / 2;
            let base = farthest_point_sample(&pc, m, 0).unwrap();
            // keep the seed first, rotate the rest
            let mut rest: Vec<[f64; 3]> = pts[1..].to_vec();
            let len = rest.len();
            rest.rotate_left(rot % len);
            let mut perm = vec![pts[0]];
            perm.extend(rest);
            let pc2 = PointCloud::new(perm).unwrap();
            let other = farthest_point_sample(&pc2, m, 0).unwrap();
            let a: Vec<_> = base.iter().map(|&i| pc.get(i)).collect();
            let b: Vec<_> = other.iter().map(|&i| pc2.get(i)).collect();
            prop_assert_eq!(a, b);
        }
    }
}
