//! Joint refinement of per-brick yaw + translation against the scan, with
//! pairwise rigidity terms keeping touching bricks near their initial
//! relative poses.
//!
//! The scan objective is a point-to-plane ICP cost with separate
//! correspondences per brick, each brick's residuals weighted by one over
//! its correspondence count. Correspondences run scan point -> nearest
//! model point, so rendered ground points absorb scan returns near the
//! ground instead of letting them drag the lowest brick layer.

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{PointCloud, Pose3, SpatialGrid};
use crate::register::{CorrespondenceParams, SolverConfig};
use crate::world::{bricks_touch, BrickInstance};

/// One brick's rendered model cloud and its pose at initialization, both in
/// the scan frame.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BrickModel {
    pub id: u32,
    pub cloud: PointCloud,
    pub initial_pose: Pose3,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiBrickProblem {
    /// Refined target pose from rough alignment; echoed into the result.
    pub target_pose: Pose3,
    pub bricks: Vec<BrickModel>,
    /// Rendered ground points (may be empty).
    pub ground: PointCloud,
    /// Scan with normals.
    pub scan: PointCloud,
    /// Touching brick pairs (indices into `bricks`, i < j).
    pub contact_pairs: Vec<(usize, usize)>,
    /// Pairwise rotation weight (lambda_r).
    pub rotation_weight: f64,
    /// Pairwise translation weight (lambda_t).
    pub translation_weight: f64,
    pub correspondence: CorrespondenceParams,
}

impl MultiBrickProblem {
    pub fn validate(&self) -> Result<()> {
        if self.scan.normals.is_none() {
            return Err(Error::Degenerate("scan has no normals"));
        }
        for b in &self.bricks {
            if b.cloud.is_empty() {
                return Err(Error::Degenerate("empty brick model cloud"));
            }
            if b.cloud.normals.is_none() {
                return Err(Error::Degenerate("brick model cloud has no normals"));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in &self.contact_pairs {
            if i >= j || j >= self.bricks.len() {
                return Err(Error::Degenerate("contact pair indices must satisfy i < j"));
            }
            if !seen.insert((i, j)) {
                return Err(Error::Degenerate("duplicate contact pair"));
            }
        }
        Ok(())
    }
}

/// Contact pairs between bricks whose boxes, expanded by `eps`, intersect.
/// Instances must be ordered like the problem's brick list.
pub fn contact_pairs_from_instances(bricks: &[BrickInstance], eps: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..bricks.len() {
        for j in (i + 1)..bricks.len() {
            if bricks_touch(&bricks[i], &bricks[j], eps) {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Estimated correction for one brick: the pose update is
/// `T(yaw, translation) ∘ initial_pose` (left multiply in the scan frame).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BrickCorrection {
    pub id: u32,
    pub yaw: f64,
    pub translation: Vector3<f64>,
    /// Found correspondences over expected visible model points, in [0, 1].
    pub confidence: f64,
    pub correspondences: usize,
    /// No scan support: the brick was held only by its pairwise terms.
    pub excluded: bool,
}

impl BrickCorrection {
    pub fn corrected_pose(&self, initial: &Pose3) -> Pose3 {
        let dq = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.yaw);
        Pose3::new(
            dq * initial.rotation,
            dq * initial.translation + self.translation,
            initial.from,
            initial.to,
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub target_pose: Pose3,
    pub bricks: Vec<BrickCorrection>,
    pub final_cost: f64,
    pub iterations: usize,
}

struct Correspondence {
    brick: usize,
    local: usize,
    scan: usize,
}

struct PairConstants {
    i: usize,
    j: usize,
    /// R_i R_j^T of the initial rotations.
    p_mat: Matrix3<f64>,
    /// Initial translations.
    trans_i: Vector3<f64>,
    trans_j: Vector3<f64>,
    /// Translation of old_j ∘ old_i^{-1}.
    t_l: Vector3<f64>,
}

struct Engine<'a> {
    problem: &'a MultiBrickProblem,
    pairs: Vec<PairConstants>,
    scan_normals: &'a [Vector3<f64>],
}

const Z_GEN: Matrix3<f64> = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);

fn rot_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

impl<'a> Engine<'a> {
    fn new(problem: &'a MultiBrickProblem) -> Result<Engine<'a>> {
        problem.validate()?;
        let pairs = problem
            .contact_pairs
            .iter()
            .map(|&(i, j)| {
                let ri = problem.bricks[i].initial_pose.rotation.to_rotation_matrix();
                let rj = problem.bricks[j].initial_pose.rotation.to_rotation_matrix();
                let pi = problem.bricks[i].initial_pose.translation;
                let pj = problem.bricks[j].initial_pose.translation;
                PairConstants {
                    i,
                    j,
                    p_mat: ri.matrix() * rj.matrix().transpose(),
                    trans_i: pi,
                    trans_j: pj,
                    t_l: pj - rj.matrix() * ri.matrix().transpose() * pi,
                }
            })
            .collect();
        Ok(Engine {
            problem,
            pairs,
            scan_normals: problem.scan.normals.as_ref().unwrap(),
        })
    }

    fn brick_count(&self) -> usize {
        self.problem.bricks.len()
    }

    /// Scan point -> nearest transformed model point, gated by distance and
    /// normal agreement; matches into the ground cloud are absorbed.
    fn find_correspondences(&self, params: &DVector<f64>) -> (Vec<Correspondence>, Vec<usize>) {
        let n = self.brick_count();
        let mut flat_points = Vec::new();
        let mut flat_normals = Vec::new();
        // (brick, local); ground entries use brick == usize::MAX
        let mut owner: Vec<(usize, usize)> = Vec::new();
        for (j, brick) in self.problem.bricks.iter().enumerate() {
            let rot = rot_z(params[4 * j]);
            let t = Vector3::new(params[4 * j + 1], params[4 * j + 2], params[4 * j + 3]);
            let normals = brick.cloud.normals.as_ref().unwrap();
            for (k, p) in brick.cloud.points.iter().enumerate() {
                flat_points.push(rot * p + t);
                flat_normals.push(rot * normals[k]);
                owner.push((j, k));
            }
        }
        for (k, p) in self.problem.ground.points.iter().enumerate() {
            flat_points.push(*p);
            flat_normals.push(
                self.problem
                    .ground
                    .normals
                    .as_ref()
                    .map_or(Vector3::z(), |ns| ns[k]),
            );
            owner.push((usize::MAX, k));
        }

        let max_dist = self.problem.correspondence.max_dist;
        let min_dot = self.problem.correspondence.min_normal_dot;
        let grid = SpatialGrid::build(&flat_points, max_dist.clamp(0.02, 0.1));
        let mut corrs = Vec::new();
        let mut counts = vec![0usize; n];
        for (scan_idx, q) in self.problem.scan.points.iter().enumerate() {
            let Some((flat_idx, _)) = grid.nearest_within(q, max_dist) else {
                continue;
            };
            let (brick, local) = owner[flat_idx];
            if brick == usize::MAX {
                continue; // ground absorbs the return
            }
            if flat_normals[flat_idx].dot(&self.scan_normals[scan_idx]) < min_dot {
                continue;
            }
            corrs.push(Correspondence {
                brick,
                local,
                scan: scan_idx,
            });
            counts[brick] += 1;
        }
        (corrs, counts)
    }

    fn weights(&self, counts: &[usize]) -> Vec<f64> {
        counts
            .iter()
            .map(|&m| if m == 0 { 0.0 } else { (1.0 / m as f64).sqrt() })
            .collect()
    }

    fn cost(&self, corrs: &[Correspondence], weights: &[f64], params: &DVector<f64>) -> f64 {
        let mut cost = 0.0;
        self.for_each_row(corrs, weights, params, false, |r, _| cost += r * r);
        cost
    }

    /// Visit every residual row; `grad` carries (column, value) entries when
    /// requested. Row order: scan correspondences, then per contact pair the
    /// 9 rotation entries and 3 translation entries.
    fn for_each_row(
        &self,
        corrs: &[Correspondence],
        weights: &[f64],
        params: &DVector<f64>,
        with_grad: bool,
        mut f: impl FnMut(f64, &[(usize, f64)]),
    ) {
        let mut grad: Vec<(usize, f64)> = Vec::with_capacity(8);
        let n = self.brick_count();
        let mut rots = Vec::with_capacity(n);
        let mut trans = Vec::with_capacity(n);
        for j in 0..n {
            rots.push(rot_z(params[4 * j]));
            trans.push(Vector3::new(
                params[4 * j + 1],
                params[4 * j + 2],
                params[4 * j + 3],
            ));
        }

        for c in corrs {
            let w = weights[c.brick];
            let p = self.problem.bricks[c.brick].cloud.points[c.local];
            let q = self.problem.scan.points[c.scan];
            let nq = self.scan_normals[c.scan];
            let u = rots[c.brick] * p;
            let r = w * (u + trans[c.brick] - q).dot(&nq);
            grad.clear();
            if with_grad {
                // d(Rz(theta) p)/dtheta = e_z x u
                let dtheta = w * (-u.y * nq.x + u.x * nq.y);
                let base = 4 * c.brick;
                grad.extend([
                    (base, dtheta),
                    (base + 1, w * nq.x),
                    (base + 2, w * nq.y),
                    (base + 3, w * nq.z),
                ]);
            }
            f(r, &grad);
        }

        let wr = self.problem.rotation_weight.sqrt();
        let wt = self.problem.translation_weight.sqrt();
        for pc in &self.pairs {
            let (i, j) = (pc.i, pc.j);
            let (ai, aj) = (&rots[i], &rots[j]);
            let (t_i, t_j) = (&trans[i], &trans[j]);

            // rotation block: Rot = A_i P A_j^T P^T
            let g_mat = ai * pc.p_mat * aj.transpose();
            let rot = g_mat * pc.p_mat.transpose();
            let d_rot_i = Z_GEN * rot;
            let d_rot_j = -(g_mat * Z_GEN * pc.p_mat.transpose());
            for row in 0..3 {
                for col in 0..3 {
                    let delta = if row == col { 1.0 } else { 0.0 };
                    let r = wr * (rot[(row, col)] - delta);
                    grad.clear();
                    if with_grad {
                        grad.extend([
                            (4 * i, wr * d_rot_i[(row, col)]),
                            (4 * j, wr * d_rot_j[(row, col)]),
                        ]);
                    }
                    f(r, &grad);
                }
            }

            // translation block: t_M = G w + A_i p_i + a_i
            let w_vec = pc.t_l - aj * pc.trans_j - t_j;
            let t_m = g_mat * w_vec + ai * pc.trans_i + t_i;
            let d_i = Z_GEN * (t_m - t_i);
            let d_j = -(g_mat * (Z_GEN * (pc.t_l - t_j)));
            for row in 0..3 {
                let r = wt * t_m[row];
                grad.clear();
                if with_grad {
                    grad.extend([
                        (4 * i, wt * d_i[row]),
                        (4 * j, wt * d_j[row]),
                        (4 * i + 1 + row, wt),
                    ]);
                    for col in 0..3 {
                        grad.push((4 * j + 1 + col, -wt * g_mat[(row, col)]));
                    }
                }
                f(r, &grad);
            }
        }
    }

    fn normal_equations(
        &self,
        corrs: &[Correspondence],
        weights: &[f64],
        params: &DVector<f64>,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let dim = 4 * self.brick_count();
        let mut jtj = DMatrix::zeros(dim, dim);
        let mut jtr = DVector::zeros(dim);
        self.for_each_row(corrs, weights, params, true, |r, grad| {
            for &(ci, vi) in grad {
                jtr[ci] += vi * r;
                for &(cj, vj) in grad {
                    jtj[(ci, cj)] += vi * vj;
                }
            }
        });
        (jtj, jtr)
    }

    fn dense_jacobian(
        &self,
        corrs: &[Correspondence],
        weights: &[f64],
        params: &DVector<f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let dim = 4 * self.brick_count();
        let mut rows = Vec::new();
        self.for_each_row(corrs, weights, params, true, |r, grad| {
            rows.push((r, grad.to_vec()));
        });
        let mut res = DVector::zeros(rows.len());
        let mut jac = DMatrix::zeros(rows.len(), dim);
        for (ridx, (r, grad)) in rows.into_iter().enumerate() {
            res[ridx] = r;
            for (c, v) in grad {
                jac[(ridx, c)] += v;
            }
        }
        (res, jac)
    }

    fn residuals_at(
        &self,
        corrs: &[Correspondence],
        weights: &[f64],
        params: &DVector<f64>,
    ) -> DVector<f64> {
        let mut vals = Vec::new();
        self.for_each_row(corrs, weights, params, false, |r, _| vals.push(r));
        DVector::from_vec(vals)
    }
}

/// Minimize the multi-brick objective over per-brick yaw and translation.
///
/// Each iteration re-finds correspondences, then takes one accepted damped
/// Gauss-Newton step; stops on the pose-change or cost-change tolerance or
/// after `max_iterations`. Bricks without scan support are excluded from the
/// scan objective (confidence 0, flagged) but still held by pairwise terms.
pub fn solve_multi_brick(
    problem: &MultiBrickProblem,
    cfg: &SolverConfig,
) -> Result<AlignmentResult> {
    let engine = Engine::new(problem)?;
    let dim = 4 * engine.brick_count();
    let mut params = DVector::zeros(dim);
    let mut damping = cfg.damping_init;
    let mut iterations = 0;
    let mut final_cost = 0.0;

    for _ in 0..cfg.max_iterations {
        iterations += 1;
        let (corrs, counts) = engine.find_correspondences(&params);
        let weights = engine.weights(&counts);
        let cost = engine.cost(&corrs, &weights, &params);
        let (jtj, jtr) = engine.normal_equations(&corrs, &weights, &params);

        let mut accepted = None;
        for _ in 0..12 {
            let mut damped = jtj.clone();
            for d in 0..dim {
                damped[(d, d)] += damping;
            }
            let Some(chol) = damped.cholesky() else {
                damping *= cfg.damping_increase;
                continue;
            };
            let step = -chol.solve(&jtr);
            let candidate = &params + &step;
            let new_cost = engine.cost(&corrs, &weights, &candidate);
            if new_cost < cost {
                damping = (damping / cfg.damping_decrease).max(1e-15);
                accepted = Some((candidate, new_cost, step.norm()));
                break;
            }
            damping *= cfg.damping_increase;
        }
        let Some((new_params, new_cost, step_norm)) = accepted else {
            final_cost = cost;
            break;
        };
        params = new_params;
        final_cost = new_cost;
        if step_norm < cfg.pose_change_tol
            || (cost - new_cost).abs() <= cfg.cost_change_tol * cost.max(1e-300)
        {
            break;
        }
    }

    // confidences from a final correspondence pass at the solution
    let (_, counts) = engine.find_correspondences(&params);
    let bricks = problem
        .bricks
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let m = counts[j];
            BrickCorrection {
                id: b.id,
                yaw: params[4 * j],
                translation: Vector3::new(params[4 * j + 1], params[4 * j + 2], params[4 * j + 3]),
                confidence: if m == 0 {
                    0.0
                } else {
                    (m as f64 / b.cloud.len() as f64).min(1.0)
                },
                correspondences: m,
                excluded: m == 0,
            }
        })
        .collect();
    Ok(AlignmentResult {
        target_pose: problem.target_pose,
        bricks,
        final_cost,
        iterations,
    })
}

/// Compare the analytic Jacobian of all residuals against central finite
/// differences (h = 1e-6) at `params`, with correspondences frozen there.
/// Returns the maximum relative error.
pub fn jacobian_check(problem: &MultiBrickProblem, params: &[f64]) -> Result<f64> {
    let engine = Engine::new(problem)?;
    let dim = 4 * engine.brick_count();
    assert_eq!(params.len(), dim, "expected 4 parameters per brick");
    let params = DVector::from_column_slice(params);
    let (corrs, counts) = engine.find_correspondences(&params);
    let weights = engine.weights(&counts);
    let (_, analytic) = engine.dense_jacobian(&corrs, &weights, &params);

    let h = 1e-6;
    let mut max_rel: f64 = 0.0;
    for c in 0..dim {
        let mut plus = params.clone();
        plus[c] += h;
        let mut minus = params.clone();
        minus[c] -= h;
        let rp = engine.residuals_at(&corrs, &weights, &plus);
        let rm = engine.residuals_at(&corrs, &weights, &minus);
        for row in 0..analytic.nrows() {
            let fd = (rp[row] - rm[row]) / (2.0 * h);
            let a = analytic[(row, c)];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
