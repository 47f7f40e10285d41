//! Uniform hash-grid spatial index with exact radius and bounded
//! nearest-neighbor queries.
//!
//! Queries enumerate every cell intersecting the search ball and check true
//! distances, so results are exact (no approximate search). Queries are
//! cheapest when the grid cell equals the query radius.

use std::collections::HashMap;

use nalgebra::Vector3;

pub struct SpatialGrid {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
    points: Vec<Vector3<f64>>,
}

impl SpatialGrid {
    pub fn build(points: &[Vector3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell must be positive");
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        Self {
            cell,
            cells,
            points: points.to_vec(),
        }
    }

    fn key(p: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of all points within `radius` of `q`, appended to `out`.
    pub fn radius_indices_into(&self, q: &Vector3<f64>, radius: f64, out: &mut Vec<usize>) {
        let r2 = radius * radius;
        self.for_each_cell_in_aabb(q, radius, |idx| {
            let p = &self.points[idx];
            if (p - q).norm_squared() <= r2 {
                out.push(idx);
            }
        });
    }

    pub fn radius_indices(&self, q: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_indices_into(q, radius, &mut out);
        out
    }

    /// Nearest point within `max_dist` of `q`, if any: `(index, distance)`.
    ///
    /// Searches cell shells of growing Chebyshev radius and stops once no
    /// farther shell can beat the best candidate, so typical queries touch
    /// only the innermost shells even when `max_dist` spans many cells.
    pub fn nearest_within(&self, q: &Vector3<f64>, max_dist: f64) -> Option<(usize, f64)> {
        let center = Self::key(q, self.cell);
        let max_shell = (max_dist / self.cell).ceil() as i64 + 1;
        let max2 = max_dist * max_dist;
        let mut best: Option<(usize, f64)> = None;
        for shell in 0..=max_shell {
            // points in shells > `shell` are at least (shell - 1) cells away
            if let Some((_, d2)) = best {
                let safe = (shell - 1).max(0) as f64 * self.cell;
                if d2.sqrt() <= safe {
                    break;
                }
            }
            self.for_each_cell_in_shell(center, shell, |idx| {
                let d2 = (self.points[idx] - q).norm_squared();
                if d2 <= max2 && best.map_or(true, |(_, b)| d2 < b) {
                    best = Some((idx, d2));
                }
            });
        }
        best.map(|(i, d2)| (i, d2.sqrt()))
    }

    fn for_each_cell_in_shell(&self, center: (i64, i64, i64), shell: i64, mut f: impl FnMut(usize)) {
        let visit = |key: (i64, i64, i64), f: &mut dyn FnMut(usize)| {
            if let Some(indices) = self.cells.get(&key) {
                for &i in indices {
                    f(i as usize);
                }
            }
        };
        if shell == 0 {
            visit(center, &mut f);
            return;
        }
        for dx in -shell..=shell {
            for dy in -shell..=shell {
                if dx.abs() == shell || dy.abs() == shell {
                    for dz in -shell..=shell {
                        visit((center.0 + dx, center.1 + dy, center.2 + dz), &mut f);
                    }
                } else {
                    for dz in [-shell, shell] {
                        visit((center.0 + dx, center.1 + dy, center.2 + dz), &mut f);
                    }
                }
            }
        }
    }

    fn for_each_cell_in_aabb(&self, q: &Vector3<f64>, radius: f64, mut f: impl FnMut(usize)) {
        let lo = Self::key(&(q - Vector3::repeat(radius)), self.cell);
        let hi = Self::key(&(q + Vector3::repeat(radius)), self.cell);
        for x in lo.0..=hi.0 {
            for y in lo.1..=hi.1 {
                for z in lo.2..=hi.2 {
                    if let Some(indices) = self.cells.get(&(x, y, z)) {
                        for &i in indices {
                            f(i as usize);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..500)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let grid = SpatialGrid::build(&pts, 0.25);
        for _ in 0..50 {
            let q = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let mut got = grid.radius_indices(&q, 0.25);
            got.sort_unstable();
            let mut want: Vec<usize> = (0..pts.len())
                .filter(|&i| (pts[i] - q).norm() <= 0.25)
                .collect();
            want.sort_unstable();
            assert_eq!(got, want);

            let nn = grid.nearest_within(&q, 0.4);
            let brute = (0..pts.len())
                .map(|i| (i, (pts[i] - q).norm()))
                .filter(|(_, d)| *d <= 0.4)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match (nn, brute) {
                (None, None) => {}
                (Some((_, d)), Some((_, bd))) => assert!((d - bd).abs() < 1e-12),
                other => panic!("mismatch: {other:?}"),
            }
        }
    }
}
