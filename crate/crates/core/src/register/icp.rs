//! Two-stage rough alignment: point-to-plane ICP with a wide correspondence
//! gate, then point-to-point ICP with a tight gate, both optionally pulled
//! toward the detected marker direction.

use nalgebra::{Matrix6, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{PointCloud, Pose3, SpatialGrid};
use crate::register::SolverConfig;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RoughAlignConfig {
    /// Correspondence distance of the point-to-plane stage.
    pub stage1_dist: f64,
    /// Correspondence distance of the point-to-point stage.
    pub stage2_dist: f64,
    /// Weight of the marker-direction cost term.
    pub direction_weight: f64,
    pub min_correspondences: usize,
    pub max_iterations: usize,
    pub solver: SolverConfig,
}

impl Default for RoughAlignConfig {
    fn default() -> Self {
        RoughAlignConfig {
            stage1_dist: 0.5,
            stage2_dist: 0.1,
            direction_weight: 1.0,
            min_correspondences: 10,
            max_iterations: 50,
            solver: SolverConfig {
                max_iterations: 50,
                ..SolverConfig::default()
            },
        }
    }
}

#[derive(Clone, Copy)]
enum Metric {
    PointToPlane,
    PointToPoint,
}

#[derive(Clone, Copy)]
struct Delta {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Delta {
    fn identity() -> Self {
        Delta {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Left-multiply by the increment `(omega, v)`.
    fn perturbed(&self, step: &Vector6<f64>) -> Delta {
        let omega = Vector3::new(step[0], step[1], step[2]);
        let v = Vector3::new(step[3], step[4], step[5]);
        let dq = UnitQuaternion::from_scaled_axis(omega);
        Delta {
            rotation: dq * self.rotation,
            translation: dq * self.translation + v,
        }
    }
}

/// Refine `init` so the model cloud (rendered at `init`, in the scan frame)
/// matches the scan. Returns the full 6-DoF pose `delta ∘ init`.
///
/// If `marker_dir` is given, the cost `(1 − (R·e_x)ᵀ l)²` on the refined
/// rotation keeps the target x-axis aligned with the marker's front-line
/// direction in both stages.
pub fn rough_align(
    model: &PointCloud,
    scan: &PointCloud,
    init: &Pose3,
    marker_dir: Option<Vector2<f64>>,
    cfg: &RoughAlignConfig,
) -> Result<Pose3> {
    if model.is_empty() || scan.is_empty() {
        return Err(Error::TooFewPoints {
            needed: cfg.min_correspondences,
            got: 0,
        });
    }
    let scan_normals = scan
        .normals
        .as_ref()
        .ok_or(Error::Degenerate("scan has no normals"))?;
    let grid = SpatialGrid::build(&scan.points, 0.05);
    let dir3 = marker_dir.map(|d| {
        let d = d.normalize();
        Vector3::new(d.x, d.y, 0.0)
    });

    let mut delta = Delta::identity();
    for (metric, dist) in [
        (Metric::PointToPlane, cfg.stage1_dist),
        (Metric::PointToPoint, cfg.stage2_dist),
    ] {
        delta = icp_stage(
            StageInputs {
                model,
                scan,
                scan_normals,
                grid: &grid,
                init,
                marker_dir: dir3,
                cfg,
            },
            delta,
            metric,
            dist,
        )?;
    }

    Ok(Pose3::new(
        delta.rotation * init.rotation,
        delta.rotation * init.translation + delta.translation,
        init.from,
        init.to,
    ))
}

struct StageInputs<'a> {
    model: &'a PointCloud,
    scan: &'a PointCloud,
    scan_normals: &'a [Vector3<f64>],
    grid: &'a SpatialGrid,
    init: &'a Pose3,
    marker_dir: Option<Vector3<f64>>,
    cfg: &'a RoughAlignConfig,
}

fn icp_stage(
    inputs: StageInputs<'_>,
    mut delta: Delta,
    metric: Metric,
    max_dist: f64,
) -> Result<Delta> {
    let StageInputs {
        model,
        scan,
        scan_normals,
        grid,
        init,
        marker_dir,
        cfg,
    } = inputs;
    let solver = &cfg.solver;
    let mut damping = solver.damping_init;
    let mut prev_cost: Option<f64> = None;

    for iteration in 0..cfg.max_iterations {
        // correspondences at the current estimate: transformed model point to
        // nearest scan point
        let mut pairs: Vec<(Vector3<f64>, usize)> = Vec::new();
        for p in &model.points {
            let pw = delta.apply(p);
            if let Some((scan_idx, _)) = grid.nearest_within(&pw, max_dist) {
                pairs.push((*p, scan_idx));
            }
        }
        if pairs.len() < cfg.min_correspondences {
            return Err(Error::Diverged {
                iteration,
                correspondences: pairs.len(),
            });
        }

        let cost_at = |d: &Delta| stage_cost(d, &pairs, scan, scan_normals, metric, init, marker_dir, cfg);
        let cost = cost_at(&delta);
        let (jtj, jtr) = normal_equations(&delta, &pairs, scan, scan_normals, metric, init, marker_dir, cfg);

        // damped Gauss-Newton step with multiplicative damping
        let mut accepted: Option<(Delta, f64, Vector6<f64>)> = None;
        for _ in 0..12 {
            let damped = jtj + Matrix6::identity() * damping;
            let Some(chol) = damped.cholesky() else {
                damping *= solver.damping_increase;
                continue;
            };
            let step = -chol.solve(&jtr);
            let candidate = delta.perturbed(&step);
            let new_cost = cost_at(&candidate);
            if new_cost < cost {
                damping = (damping / solver.damping_decrease).max(1e-15);
                accepted = Some((candidate, new_cost, step));
                break;
            }
            damping *= solver.damping_increase;
        }
        let Some((new_delta, new_cost, step)) = accepted else {
            break; // no descent direction left: converged
        };
        delta = new_delta;

        if step.norm() < solver.pose_change_tol {
            break;
        }
        if let Some(prev) = prev_cost {
            if (prev - new_cost).abs() <= solver.cost_change_tol * prev.max(1e-300) {
                break;
            }
        }
        prev_cost = Some(new_cost);
    }
    Ok(delta)
}

#[allow(clippy::too_many_arguments)]
fn stage_cost(
    delta: &Delta,
    pairs: &[(Vector3<f64>, usize)],
    scan: &PointCloud,
    scan_normals: &[Vector3<f64>],
    metric: Metric,
    init: &Pose3,
    marker_dir: Option<Vector3<f64>>,
    cfg: &RoughAlignConfig,
) -> f64 {
    let mut cost = 0.0;
    for (p, scan_idx) in pairs {
        let e = delta.apply(p) - scan.points[*scan_idx];
        match metric {
            Metric::PointToPlane => {
                let r = e.dot(&scan_normals[*scan_idx]);
                cost += r * r;
            }
            Metric::PointToPoint => cost += e.norm_squared(),
        }
    }
    if let Some(l) = marker_dir {
        let u = (delta.rotation * init.rotation) * Vector3::x();
        let r = 1.0 - u.dot(&l);
        cost += cfg.direction_weight * r * r;
    }
    cost
}

#[allow(clippy::too_many_arguments)]
fn normal_equations(
    delta: &Delta,
    pairs: &[(Vector3<f64>, usize)],
    scan: &PointCloud,
    scan_normals: &[Vector3<f64>],
    metric: Metric,
    init: &Pose3,
    marker_dir: Option<Vector3<f64>>,
    cfg: &RoughAlignConfig,
) -> (Matrix6<f64>, Vector6<f64>) {
    let mut jtj = Matrix6::zeros();
    let mut jtr = Vector6::zeros();
    let mut add_row = |grad: &Vector6<f64>, r: f64| {
        jtj += grad * grad.transpose();
        jtr += grad * r;
    };
    for (p, scan_idx) in pairs {
        let pw = delta.apply(p);
        let e = pw - scan.points[*scan_idx];
        match metric {
            Metric::PointToPlane => {
                let n = scan_normals[*scan_idx];
                let r = e.dot(&n);
                let rot_grad = pw.cross(&n);
                let grad = Vector6::new(rot_grad.x, rot_grad.y, rot_grad.z, n.x, n.y, n.z);
                add_row(&grad, r);
            }
            Metric::PointToPoint => {
                // three residual rows: d(exp(w)p + v)/dw = -[pw]x, d/dv = I
                let px = skew(&pw);
                for k in 0..3 {
                    let grad = Vector6::new(-px[(k, 0)], -px[(k, 1)], -px[(k, 2)], unit(k).x, unit(k).y, unit(k).z);
                    add_row(&grad, e[k]);
                }
            }
        }
    }
    if let Some(l) = marker_dir {
        let w = cfg.direction_weight.sqrt();
        let u = (delta.rotation * init.rotation) * Vector3::x();
        let r = w * (1.0 - u.dot(&l));
        let g = -w * u.cross(&l);
        let grad = Vector6::new(g.x, g.y, g.z, 0.0, 0.0, 0.0);
        add_row(&grad, r);
    }
    (jtj, jtr)
}

fn skew(v: &Vector3<f64>) -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn unit(k: usize) -> Vector3<f64> {
    let mut v = Vector3::zeros();
    v[k] = 1.0;
    v
}
