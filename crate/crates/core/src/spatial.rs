//! Uniform hash grid for radius and k-nearest-neighbor queries.

use std::collections::HashMap;

use crate::geometry::Vec3;

type Cell = (i64, i64, i64);

pub struct PointGrid<'a> {
    points: &'a [Vec3],
    cell: f64,
    cells: HashMap<Cell, Vec<u32>>,
    lo: Cell,
    hi: Cell,
}

impl<'a> PointGrid<'a> {
    /// `cell` should be on the order of the query radius.
    pub fn new(points: &'a [Vec3], cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell size must be positive");
        let mut cells: HashMap<Cell, Vec<u32>> = HashMap::new();
        let mut lo = (i64::MAX, i64::MAX, i64::MAX);
        let mut hi = (i64::MIN, i64::MIN, i64::MIN);
        for (i, p) in points.iter().enumerate() {
            let c = cell_of(p, cell);
            lo = (lo.0.min(c.0), lo.1.min(c.1), lo.2.min(c.2));
            hi = (hi.0.max(c.0), hi.1.max(c.1), hi.2.max(c.2));
            cells.entry(c).or_default().push(i as u32);
        }
        Self {
            points,
            cell,
            cells,
            lo,
            hi,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of points within `radius` of `q` (inclusive), optionally
    /// excluding one index.
    pub fn count_within(&self, q: &Vec3, radius: f64, exclude: Option<usize>) -> usize {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i64;
        let c = cell_of(q, self.cell);
        let mut n = 0;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(ids) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                        n += ids
                            .iter()
                            .filter(|&&i| {
                                Some(i as usize) != exclude && (self.points[i as usize] - q).norm_squared() <= r2
                            })
                            .count();
                    }
                }
            }
        }
        n
    }

    /// Distances to the `k` nearest points, ascending, excluding `exclude`.
    pub fn knn_distances(&self, q: &Vec3, k: usize, exclude: Option<usize>) -> Vec<f64> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let c = cell_of(q, self.cell);
        let max_ring = [
            (c.0 - self.lo.0).abs(),
            (self.hi.0 - c.0).abs(),
            (c.1 - self.lo.1).abs(),
            (self.hi.1 - c.1).abs(),
            (c.2 - self.lo.2).abs(),
            (self.hi.2 - c.2).abs(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);
        let mut best: Vec<f64> = Vec::with_capacity(k + 1);
        for ring in 0..=max_ring {
            self.visit_ring(c, ring, |i| {
                if Some(i) == exclude {
                    return;
                }
                let d = (self.points[i] - q).norm();
                if best.len() < k || d < best[best.len() - 1] {
                    let pos = best.partition_point(|&b| b <= d);
                    best.insert(pos, d);
                    best.truncate(k);
                }
            });
            // Anything in ring+1 or beyond is at least ring*cell away.
            if best.len() == k && best[k - 1] <= ring as f64 * self.cell {
                break;
            }
        }
        best
    }

    /// Distance to the closest point, `None` for an empty grid.
    pub fn nearest_distance(&self, q: &Vec3) -> Option<f64> {
        self.knn_distances(q, 1, None).first().copied()
    }

    fn visit_ring(&self, c: Cell, ring: i64, mut f: impl FnMut(usize)) {
        for dx in -ring..=ring {
            for dy in -ring..=ring {
                for dz in -ring..=ring {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                        continue;
                    }
                    if let Some(ids) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                        ids.iter().for_each(|&i| f(i as usize));
                    }
                }
            }
        }
    }
}

fn cell_of(p: &Vec3, cell: f64) -> Cell {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

/// Integer voxel key of a point at the given voxel size.
pub fn voxel_key(p: &Vec3, voxel: f64) -> (i64, i64, i64) {
    cell_of(p, voxel)
}

/// Exact minimum distance between two point sets, `None` if either is empty.
///
/// Both sets are bucketed into small cells with tight boxes; bucket pairs are
/// scanned in increasing box distance until the box bound exceeds the best
/// point distance found.
pub fn min_distance(a: &[Vec3], b: &[Vec3]) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let ba = Buckets::new(a);
    let bb = Buckets::new(b);
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(ba.boxes.len() * bb.boxes.len());
    for (i, x) in ba.boxes.iter().enumerate() {
        for (j, y) in bb.boxes.iter().enumerate() {
            pairs.push((box_gap(x, y), i, j));
        }
    }
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut best = f64::INFINITY;
    for (bound, i, j) in pairs {
        if bound >= best {
            break;
        }
        for &p in &ba.members[i] {
            for &q in &bb.members[j] {
                best = best.min((a[p as usize] - b[q as usize]).norm());
            }
        }
    }
    Some(best)
}

struct Buckets {
    boxes: Vec<(Vec3, Vec3)>,
    members: Vec<Vec<u32>>,
}

impl Buckets {
    fn new(points: &[Vec3]) -> Self {
        let (mut lo, mut hi) = (points[0], points[0]);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        // About 64 points per bucket for surface-like sets.
        let extent = (hi - lo).max().max(1e-9);
        let cell = extent * (64.0 / points.len() as f64).sqrt().min(1.0);
        let mut map: HashMap<Cell, usize> = HashMap::new();
        let mut out = Buckets {
            boxes: Vec::new(),
            members: Vec::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let slot = *map.entry(cell_of(&(p - lo), cell)).or_insert_with(|| {
                out.boxes.push((*p, *p));
                out.members.push(Vec::new());
                out.boxes.len() - 1
            });
            let bx = &mut out.boxes[slot];
            bx.0 = bx.0.inf(p);
            bx.1 = bx.1.sup(p);
            out.members[slot].push(i as u32);
        }
        out
    }
}

fn box_gap(a: &(Vec3, Vec3), b: &(Vec3, Vec3)) -> f64 {
    let gap = (b.0 - a.1).sup(&(a.0 - b.1)).sup(&Vec3::zeros());
    gap.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_knn(points: &[Vec3], q: &Vec3, k: usize, exclude: Option<usize>) -> Vec<f64> {
        let mut d: Vec<f64> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(_, p)| (p - q).norm())
            .collect();
        d.sort_by(f64::total_cmp);
        d.truncate(k);
        d
    }

    proptest! {
        #[test]
        fn knn_matches_brute_force(
            pts in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, -1.0..1.0f64), 1..80),
            k in 1usize..6,
            cell in 0.05..2.0f64,
        ) {
            let points: Vec<Vec3> = pts.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let grid = PointGrid::new(&points, cell);
            for (i, q) in points.iter().enumerate() {
                let got = grid.knn_distances(q, k, Some(i));
                let want = brute_knn(&points, q, k, Some(i));
                prop_assert_eq!(got.len(), want.len());
                for (a, b) in got.iter().zip(&want) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn radius_count_matches_brute_force(
            pts in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64), 1..60),
            r in 0.05..1.5f64,
        ) {
            let points: Vec<Vec3> = pts.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let grid = PointGrid::new(&points, r);
            for (i, q) in points.iter().enumerate() {
                let want = points.iter().enumerate().filter(|(j, p)| *j != i && (*p - q).norm_squared() <= r * r).count();
                prop_assert_eq!(grid.count_within(q, r, Some(i)), want);
            }
        }
    }

    #[test]
    fn many_points_on_one_plane() {
        let points: Vec<Vec3> = (0..400).map(|i| Vec3::new((i % 20) as f64 * 0.1, (i / 20) as f64 * 0.1, 0.0)).collect();
        let grid = PointGrid::new(&points, 0.1);
        let d = grid.knn_distances(&points[210], 4, Some(210));
        assert_eq!(d.len(), 4);
        assert!(d.iter().all(|&x| (x - 0.1).abs() < 1e-9));
    }

    #[test]
    fn min_distance_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let n = rng.random_range(1..400);
            let m = rng.random_range(1..400);
            let shift = trial as f64 * 0.1;
            let a: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect();
            let b: Vec<Vec3> = (0..m).map(|_| Vec3::new(shift + rng.random_range(0.0..1.0), rng.random_range(0.0..2.0), rng.random_range(0.0..0.5))).collect();
            let brute = a
                .iter()
                .flat_map(|p| b.iter().map(move |q| (p - q).norm()))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(min_distance(&a, &b), Some(brute));
        }
        assert_eq!(min_distance(&[], &[Vec3::zeros()]), None);
    }
}
