//! Flat-shaded RGB rendering of box scenes and binary PPM (P6) image I/O.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::synth::{pixel_rng, CameraIntrinsics};
use crate::geom::Pose3;
use crate::world::Scene;

pub const GROUND_COLOR: [u8; 3] = [90, 90, 90];
pub const BACKGROUND_COLOR: [u8; 3] = [30, 30, 30];
pub const PATCH_COLOR: [u8; 3] = [255, 255, 255];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        RgbImage {
            width,
            height,
            data: vec![[0, 0, 0]; (width * height) as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        self.data[(y * self.width + x) as usize] = rgb;
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        for px in &self.data {
            w.write_all(px)?;
        }
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<RgbImage> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |detail: &str| Error::Parse {
            format: "ppm",
            detail: detail.to_string(),
        };
        // header: magic, width, height, maxval, single whitespace, then payload
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii"))?);
        }
        if fields[0] != "P6" {
            return Err(bad("not a P6 file"));
        }
        let width: u32 = fields[1].parse().map_err(|_| bad("bad width"))?;
        let height: u32 = fields[2].parse().map_err(|_| bad("bad height"))?;
        if fields[3] != "255" {
            return Err(bad("only maxval 255 is supported"));
        }
        pos += 1; // single whitespace after maxval
        let need = (width * height * 3) as usize;
        if bytes.len() < pos + need {
            return Err(bad("payload too short"));
        }
        let data = bytes[pos..pos + need]
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }
}

/// Render the scene as a flat-shaded pinhole image: brick faces in the brick
/// color, the centered top patch white, ground gray. Additive Gaussian pixel
/// noise (`noise_sigma` in 0-255 value units), deterministic per seed.
pub fn render_rgb(
    scene: &Scene,
    cam: &CameraIntrinsics,
    cam_pose: &Pose3,
    rng_seed: u64,
    noise_sigma: f64,
) -> Result<RgbImage> {
    let bricks = scene.world_bricks()?;
    let (cols, rows) = cam.resolution;
    let mut img = RgbImage::new(cols, rows);
    let origin = cam_pose.translation;
    let gauss = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).unwrap());

    struct Body {
        rot_inv: nalgebra::UnitQuaternion<f64>,
        center: Vector3<f64>,
        he: Vector3<f64>,
        color: [u8; 3],
        patch: (f64, f64),
    }
    let bodies: Vec<Body> = bricks
        .iter()
        .map(|b| Body {
            rot_inv: b.pose.rotation.inverse(),
            center: b.pose.translation,
            he: b.spec.half_extents(),
            color: b.spec.color,
            patch: b.spec.patch_size,
        })
        .collect();

    for v in 0..rows {
        for u in 0..cols {
            let dir_cam = Vector3::new(
                (u as f64 + 0.5 - cam.cx) / cam.fx,
                (v as f64 + 0.5 - cam.cy) / cam.fy,
                1.0,
            )
            .normalize();
            let dir = cam_pose.rotate(&dir_cam);
            let mut best_t = f64::INFINITY;
            let mut color = BACKGROUND_COLOR;
            for b in &bodies {
                let o = b.rot_inv * (origin - b.center);
                let d = b.rot_inv * dir;
                if let Some((t, axis, sign)) = slab(&o, &d, &b.he) {
                    if t < best_t {
                        best_t = t;
                        let hit = o + d * t;
                        let top = axis == 2 && sign > 0.0;
                        color = if top
                            && hit.x.abs() <= b.patch.0 / 2.0
                            && hit.y.abs() <= b.patch.1 / 2.0
                        {
                            PATCH_COLOR
                        } else {
                            b.color
                        };
                    }
                }
            }
            if dir.z < -1e-12 && origin.z > 0.0 {
                let t = -origin.z / dir.z;
                if t > 1e-9 && t < best_t {
                    color = GROUND_COLOR;
                }
            }
            let rgb = if let Some(g) = &gauss {
                let mut rng = pixel_rng(rng_seed, (v as u64) * cols as u64 + u as u64);
                color.map(|c| (c as f64 + g.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
            } else {
                color
            };
            img.set(u, v, rgb);
        }
    }
    Ok(img)
}

fn slab(o: &Vector3<f64>, d: &Vector3<f64>, he: &Vector3<f64>) -> Option<(f64, usize, f64)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0usize;
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k].abs() > he[k] {
                return None;
            }
            continue;
        }
        let mut t0 = (-he[k] - o[k]) / d[k];
        let mut t1 = (he[k] - o[k]) / d[k];
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            axis = k;
        }
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    if t_near <= 1e-9 {
        return None;
    }
    let entry = o + d * t_near;
    Some((t_near, axis, if entry[axis] >= 0.0 { 1.0 } else { -1.0 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Frame;
    use crate::synth::pose_looking_at;
    use crate::world::{brick_spec, BrickInstance, BrickType};

    fn red_brick_scene() -> Scene {
        let b = BrickInstance {
            id: 0,
            spec: brick_spec(BrickType::Red),
            pose: Pose3::from_yaw(
                0.0,
                Vector3::new(0.0, 0.0, 0.1),
                Frame::Brick(0),
                Frame::Pile,
            ),
        };
        Scene {
            bricks: vec![b],
            target_frame_pose: Pose3::identity(Frame::World).relabel(Frame::Pile, Frame::World),
            marker_pose: None,
        }
    }

    fn top_down_cam() -> (CameraIntrinsics, Pose3) {
        let cam = CameraIntrinsics::default();
        let pose = pose_looking_at(
            Vector3::new(0.0, 0.0, 2.0),
            Vector3::zeros(),
            Frame::Camera(0),
            Frame::World,
        );
        (cam, pose)
    }

    #[test]
    fn white_patch_surrounded_by_red() {
        let scene = red_brick_scene();
        let (cam, pose) = top_down_cam();
        let img = render_rgb(&scene, &cam, &pose, 0, 0.0).unwrap();
        let center = img.get(cam.cx as u32, cam.cy as u32);
        assert_eq!(center, PATCH_COLOR);
        // just outside the patch along x but still on the brick
        let px = cam.cx + cam.fx * 0.12 / 1.9; // 12 cm off center at 1.9 m depth
        let border = img.get(px as u32, cam.cy as u32);
        assert_eq!(border, BrickType::Red.color());
        // far from the brick: ground
        assert_eq!(img.get(60, 60), GROUND_COLOR);
    }

    #[test]
    fn noiseless_render_is_deterministic() {
        let scene = red_brick_scene();
        let (cam, pose) = top_down_cam();
        let a = render_rgb(&scene, &cam, &pose, 1, 0.0).unwrap();
        let b = render_rgb(&scene, &cam, &pose, 2, 0.0).unwrap();
        assert_eq!(a, b);
        let n1 = render_rgb(&scene, &cam, &pose, 3, 5.0).unwrap();
        let n2 = render_rgb(&scene, &cam, &pose, 3, 5.0).unwrap();
        assert_eq!(n1, n2);
    }

    #[test]
    fn patch_corners_match_pinhole_projection() {
        let scene = red_brick_scene();
        let (cam, pose) = top_down_cam();
        let img = render_rgb(&scene, &cam, &pose, 0, 0.0).unwrap();
        // white bounding box in the image
        let mut lo = (u32::MAX, u32::MAX);
        let mut hi = (0u32, 0u32);
        for y in 0..img.height {
            for x in 0..img.width {
                if img.get(x, y) == PATCH_COLOR {
                    lo = (lo.0.min(x), lo.1.min(y));
                    hi = (hi.0.max(x), hi.1.max(y));
                }
            }
        }
        // projected 3-D patch corners (patch of the red brick: 0.2 x 0.1 at z = 0.2)
        let spec = brick_spec(BrickType::Red);
        let world_to_cam = pose.inverse();
        let mut plo = (f64::INFINITY, f64::INFINITY);
        let mut phi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                let corner = Vector3::new(
                    sx * spec.patch_size.0 / 2.0,
                    sy * spec.patch_size.1 / 2.0,
                    0.2,
                );
                let uv = cam.project(&world_to_cam.apply(&corner)).unwrap();
                plo = (plo.0.min(uv.x), plo.1.min(uv.y));
                phi = (phi.0.max(uv.x), phi.1.max(uv.y));
            }
        }
        // pixel centers sit at +0.5, so allow one pixel of quantization
        assert!((lo.0 as f64 + 0.5 - plo.0).abs() <= 1.0);
        assert!((lo.1 as f64 + 0.5 - plo.1).abs() <= 1.0);
        assert!((hi.0 as f64 + 0.5 - phi.0).abs() <= 1.0);
        assert!((hi.1 as f64 + 0.5 - phi.1).abs() <= 1.0);
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let mut img = RgbImage::new(4, 3);
        img.set(1, 2, [10, 200, 30]);
        img.write_ppm(&path).unwrap();
        let back = RgbImage::read_ppm(&path).unwrap();
        assert_eq!(back, img);
    }
}
