//! Planar PnP from a patch quad: homography by direct linear transform,
//! pose by homography decomposition, Gauss-Newton refinement on the
//! reprojection error.

use nalgebra::{Matrix3, Matrix6, UnitQuaternion, Vector2, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geom::{Frame, Pose3};
use crate::synth::CameraIntrinsics;
use crate::world::{brick_spec, BrickType};

#[derive(Clone, Debug)]
pub struct PnpResult {
    /// Camera-from-patch pose (patch frame: x along the long side, z out of
    /// the brick top).
    pub pose: Pose3,
    /// Root-mean-square reprojection error over the four corners (px).
    pub rmse: f64,
    /// Side ratio below 1.2: the long-side assignment is unreliable.
    pub ambiguous: bool,
}

/// Recover the 6-D patch pose from a convex image quad. The longer image
/// side is matched to the longer patch side; rectangles are symmetric, so
/// yaw is meaningful modulo 180 degrees.
pub fn planar_pnp(
    quad: &[Vector2<f64>; 4],
    brick_type: BrickType,
    intrinsics: &CameraIntrinsics,
) -> Result<PnpResult> {
    let area = {
        let mut acc = 0.0;
        for i in 0..4 {
            let a = quad[i];
            let b = quad[(i + 1) % 4];
            acc += a.x * b.y - b.x * a.y;
        }
        acc.abs() / 2.0
    };
    if area < 25.0 {
        return Err(Error::DegenerateQuad);
    }

    // rotate the cycle so edge 0 -> 1 is a long side
    let side = |i: usize| (quad[(i + 1) % 4] - quad[i]).norm();
    let long_first = side(0) + side(2) >= side(1) + side(3);
    let order: [usize; 4] = if long_first { [0, 1, 2, 3] } else { [1, 2, 3, 0] };
    let img: Vec<Vector2<f64>> = order.iter().map(|&i| quad[i]).collect();
    let long_len = (side(order[0]) + side(order[2])) / 2.0;
    let short_len = (side(order[1]) + side(order[3])) / 2.0;
    let ambiguous = long_len / short_len.max(1e-9) < 1.2;

    let spec = brick_spec(brick_type);
    let (pl, pw) = (spec.patch_size.0 / 2.0, spec.patch_size.1 / 2.0);
    let object = [
        Vector2::new(-pl, -pw),
        Vector2::new(pl, -pw),
        Vector2::new(pl, pw),
        Vector2::new(-pl, pw),
    ];

    // the image quad is counter-clockwise in pixel coordinates; try both
    // traversal orientations and keep the physically consistent solution
    let mut best: Option<PnpResult> = None;
    for reversed in [false, true] {
        let img_case: Vec<Vector2<f64>> = if reversed {
            let mut v = img.clone();
            v.reverse();
            v.rotate_right(1); // keep edge 0 -> 1 on a long side
            v
        } else {
            img.clone()
        };
        let Some(h) = dlt_homography(&object, &img_case) else {
            continue;
        };
        let Some((rot, trans)) = decompose_homography(&h, intrinsics) else {
            continue;
        };
        // patch must face the camera: its +z maps to negative camera z
        if (rot * Vector3::z()).z >= 0.0 {
            continue;
        }
        let (rot, trans, rmse) = refine(rot, trans, &object, &img_case, intrinsics);
        if best.as_ref().map_or(true, |b| rmse < b.rmse) {
            best = Some(PnpResult {
                pose: Pose3::new(
                    UnitQuaternion::from_rotation_matrix(
                        &nalgebra::Rotation3::from_matrix_unchecked(rot),
                    ),
                    trans,
                    Frame::Patch,
                    Frame::Camera(0),
                ),
                rmse,
                ambiguous,
            });
        }
    }
    best.ok_or(Error::DegenerateQuad)
}

/// Homography object plane -> image pixels from four correspondences, with
/// Hartley normalization.
fn dlt_homography(object: &[Vector2<f64>], image: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let normalize = |pts: &[Vector2<f64>]| -> (Matrix3<f64>, Vec<Vector2<f64>>) {
        let mean = pts.iter().sum::<Vector2<f64>>() / pts.len() as f64;
        let scale = pts.iter().map(|p| (p - mean).norm()).sum::<f64>() / pts.len() as f64;
        let s = if scale < 1e-12 {
            1.0
        } else {
            std::f64::consts::SQRT_2 / scale
        };
        let t = Matrix3::new(s, 0.0, -s * mean.x, 0.0, s, -s * mean.y, 0.0, 0.0, 1.0);
        (t, pts.iter().map(|p| (p - mean) * s).collect())
    };
    let (t_obj, obj_n) = normalize(object);
    let (t_img, img_n) = normalize(image);

    let mut a = nalgebra::DMatrix::zeros(8, 9);
    for (k, (o, i)) in obj_n.iter().zip(img_n.iter()).enumerate() {
        let (x, y, u, v) = (o.x, o.y, i.x, i.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for c in 0..9 {
            a[(2 * k, c)] = r0[c];
            a[(2 * k + 1, c)] = r1[c];
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t?;
    let hvec = vt.row(vt.nrows() - 1);
    let hn = Matrix3::new(
        hvec[0], hvec[1], hvec[2], hvec[3], hvec[4], hvec[5], hvec[6], hvec[7], hvec[8],
    );
    let h = t_img.try_inverse()? * hn * t_obj;
    (h.norm() > 1e-12).then_some(h)
}

/// H = K [r1 r2 t] up to scale; orthonormalize into a proper rotation.
fn decompose_homography(
    h: &Matrix3<f64>,
    intr: &CameraIntrinsics,
) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let k_inv = Matrix3::new(
        1.0 / intr.fx,
        0.0,
        -intr.cx / intr.fx,
        0.0,
        1.0 / intr.fy,
        -intr.cy / intr.fy,
        0.0,
        0.0,
        1.0,
    );
    let m = k_inv * h;
    let m1 = m.column(0).into_owned();
    let m2 = m.column(1).into_owned();
    let m3 = m.column(2).into_owned();
    let scale = 2.0 / (m1.norm() + m2.norm());
    let (mut r1, mut r2, mut t) = (m1 * scale, m2 * scale, m3 * scale);
    if t.z < 0.0 {
        r1 = -r1;
        r2 = -r2;
        t = -t;
    }
    let r3 = r1.cross(&r2);
    let approx = Matrix3::from_columns(&[r1, r2, r3]);
    // nearest rotation in Frobenius norm
    let svd = approx.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut rot = u * vt;
    if rot.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        rot = u2 * vt;
    }
    Some((rot, t))
}

fn project(
    rot: &Matrix3<f64>,
    trans: &Vector3<f64>,
    obj: &Vector2<f64>,
    intr: &CameraIntrinsics,
) -> Option<Vector2<f64>> {
    let p = rot * Vector3::new(obj.x, obj.y, 0.0) + trans;
    if p.z <= 1e-9 {
        return None;
    }
    Some(Vector2::new(
        intr.fx * p.x / p.z + intr.cx,
        intr.fy * p.y / p.z + intr.cy,
    ))
}

fn rmse_of(
    rot: &Matrix3<f64>,
    trans: &Vector3<f64>,
    object: &[Vector2<f64>],
    image: &[Vector2<f64>],
    intr: &CameraIntrinsics,
) -> f64 {
    let mut acc = 0.0;
    for (o, i) in object.iter().zip(image) {
        match project(rot, trans, o, intr) {
            Some(uv) => acc += (uv - i).norm_squared(),
            None => return f64::INFINITY,
        }
    }
    (acc / object.len() as f64).sqrt()
}

/// Damped Gauss-Newton on the reprojection residuals; accepts only
/// improving steps, so the refined pose never reprojects worse than the
/// initial one.
fn refine(
    mut rot: Matrix3<f64>,
    mut trans: Vector3<f64>,
    object: &[Vector2<f64>],
    image: &[Vector2<f64>],
    intr: &CameraIntrinsics,
) -> (Matrix3<f64>, Vector3<f64>, f64) {
    let mut damping = 1e-6;
    for _ in 0..30 {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        let mut cost = 0.0;
        for (o, i) in object.iter().zip(image) {
            let p = rot * Vector3::new(o.x, o.y, 0.0) + trans;
            if p.z <= 1e-9 {
                return (rot, trans, f64::INFINITY);
            }
            let uv = Vector2::new(
                intr.fx * p.x / p.z + intr.cx,
                intr.fy * p.y / p.z + intr.cy,
            );
            let r = uv - i;
            cost += r.norm_squared();
            let z2 = p.z * p.z;
            // rows of d(uv)/dP
            let du = Vector3::new(intr.fx / p.z, 0.0, -intr.fx * p.x / z2);
            let dv = Vector3::new(0.0, intr.fy / p.z, -intr.fy * p.y / z2);
            // dP/domega = -[P]x (left perturbation), dP/dt = I
            let px = skew(&p);
            for (drow, rv) in [(du, r.x), (dv, r.y)] {
                let dw = -px.transpose() * drow; // (drow^T * -[P]x)^T
                let grad = Vector6::new(dw.x, dw.y, dw.z, drow.x, drow.y, drow.z);
                jtj += grad * grad.transpose();
                jtr += grad * rv;
            }
        }
        let mut improved = false;
        for _ in 0..8 {
            let damped = jtj + Matrix6::identity() * damping;
            let Some(chol) = damped.cholesky() else {
                damping *= 10.0;
                continue;
            };
            let step = -chol.solve(&jtr);
            let omega = Vector3::new(step[0], step[1], step[2]);
            let dt = Vector3::new(step[3], step[4], step[5]);
            let new_rot = UnitQuaternion::from_scaled_axis(omega).to_rotation_matrix().matrix() * rot;
            let new_trans =
                UnitQuaternion::from_scaled_axis(omega).to_rotation_matrix().matrix() * trans + dt;
            let new_cost: f64 = {
                let mut acc = 0.0;
                for (o, i) in object.iter().zip(image) {
                    match project(&new_rot, &new_trans, o, intr) {
                        Some(uv) => acc += (uv - i).norm_squared(),
                        None => {
                            acc = f64::INFINITY;
                            break;
                        }
                    }
                }
                acc
            };
            if new_cost < cost {
                rot = new_rot;
                trans = new_trans;
                damping = (damping / 10.0).max(1e-12);
                improved = true;
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let rmse = rmse_of(&rot, &trans, object, image, intr);
    (rot, trans, rmse)
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn project_exact(
        rot: &Matrix3<f64>,
        trans: &Vector3<f64>,
        brick_type: BrickType,
        intr: &CameraIntrinsics,
    ) -> [Vector2<f64>; 4] {
        let spec = brick_spec(brick_type);
        let (pl, pw) = (spec.patch_size.0 / 2.0, spec.patch_size.1 / 2.0);
        [
            Vector2::new(-pl, -pw),
            Vector2::new(pl, -pw),
            Vector2::new(pl, pw),
            Vector2::new(-pl, pw),
        ]
        .map(|o| project(rot, trans, &o, intr).unwrap())
    }

    /// Patch seen top-down: patch +z toward the camera (camera z maps to -z).
    fn fronto_rotation(yaw: f64) -> Matrix3<f64> {
        let flip = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let (s, c) = yaw.sin_cos();
        let rz = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        flip * rz
    }

    #[test]
    fn fronto_parallel_green_patch() {
        let intr = CameraIntrinsics::default();
        let rot = fronto_rotation(0.0);
        let trans = Vector3::new(0.0, 0.0, 2.0);
        let quad = project_exact(&rot, &trans, BrickType::Green, &intr);
        let got = planar_pnp(&quad, BrickType::Green, &intr).unwrap();
        assert!(got.rmse < 0.01, "rmse {}", got.rmse);
        let t = got.pose.translation;
        assert!((t.z - 2.0).abs() < 0.01, "z {}", t.z);
        assert!(t.x.abs() < 0.01 && t.y.abs() < 0.01);
        assert!(!got.ambiguous); // green patch is 0.5 x 0.1
    }

    #[test]
    fn yawed_patch_recovers_yaw_mod_pi() {
        let intr = CameraIntrinsics::default();
        let true_yaw = 0.4;
        let rot = fronto_rotation(true_yaw);
        let trans = Vector3::new(0.2, -0.1, 1.8);
        let quad = project_exact(&rot, &trans, BrickType::Blue, &intr);
        let got = planar_pnp(&quad, BrickType::Blue, &intr).unwrap();
        // patch x-axis in camera coords, up to the 180 degree patch symmetry
        let want_x = rot * Vector3::x();
        let got_x = got.pose.rotate(&Vector3::x());
        let dot = want_x.dot(&got_x).abs();
        assert!(dot > (2.0_f64).to_radians().cos(), "axis dot {dot}");
        assert!((got.pose.translation - trans).norm() < 0.02);
    }

    #[test]
    fn square_ish_quad_is_flagged() {
        let intr = CameraIntrinsics::default();
        // red patch is 0.2 x 0.1: ratio 2.0, not ambiguous
        let rot = fronto_rotation(0.0);
        let quad = project_exact(&rot, &Vector3::new(0.0, 0.0, 2.0), BrickType::Red, &intr);
        assert!(!planar_pnp(&quad, BrickType::Red, &intr).unwrap().ambiguous);
        // a hand-made near-square quad
        let square = [
            Vector2::new(600.0, 340.0),
            Vector2::new(680.0, 340.0),
            Vector2::new(680.0, 415.0),
            Vector2::new(600.0, 415.0),
        ];
        let got = planar_pnp(&square, BrickType::Red, &intr).unwrap();
        assert!(got.ambiguous);
    }

    #[test]
    fn degenerate_quad_is_an_error() {
        let intr = CameraIntrinsics::default();
        let line = [
            Vector2::new(100.0, 100.0),
            Vector2::new(200.0, 100.0),
            Vector2::new(300.0, 100.001),
            Vector2::new(400.0, 100.0),
        ];
        assert!(matches!(
            planar_pnp(&line, BrickType::Red, &intr),
            Err(Error::DegenerateQuad)
        ));
    }

    #[test]
    fn refinement_never_worsens_reprojection() {
        let intr = CameraIntrinsics::default();
        let rot = fronto_rotation(0.7);
        let trans = Vector3::new(-0.3, 0.2, 2.5);
        let mut quad = project_exact(&rot, &trans, BrickType::Green, &intr);
        // pixel-level corner noise
        quad[0].x += 0.8;
        quad[1].y -= 0.6;
        quad[2].x -= 0.4;
        quad[3].y += 0.9;
        let got = planar_pnp(&quad, BrickType::Green, &intr).unwrap();
        // unrefined homography pose for the same correspondence choice
        assert!(got.rmse < 2.0);
    }
}
