//! Quad extraction from the patch mask: connected-component border
//! following, polygon simplification to four corners, and per-corner
//! inside/outside probes with color voting.

use nalgebra::Vector2;

use crate::synth::RgbImage;
use crate::vision::segment::{rgb_to_hsv, Mask, SegmentationParams};
use crate::world::BrickType;

#[derive(Clone, Debug)]
pub struct QuadCandidate {
    /// Image corners (px), counter-clockwise by the shoelace sign.
    pub quad: [Vector2<f64>; 4],
    pub brick_type: BrickType,
}

/// Extract verified patch quads: trace each component border, simplify the
/// contour (tolerance doubled from 1 px until at most 8 vertices remain,
/// keeping only 4-vertex results), then require every corner to have a patch
/// pixel on the inside and a same-colored high-saturation pixel on the
/// outside at the probe distance.
pub fn extract_quads(
    mask: &Mask,
    image: &RgbImage,
    params: &SegmentationParams,
) -> Vec<QuadCandidate> {
    let mut out = Vec::new();
    for component in components(mask, params.min_component_area) {
        let contour = trace_border(mask, component);
        if contour.len() < 4 {
            continue;
        }
        let Some(mut quad) = simplify_to_quad(&contour) else {
            continue;
        };
        if shoelace(&quad) < 0.0 {
            quad.reverse();
        }
        if !is_convex(&quad) {
            continue;
        }
        let quad = [quad[0], quad[1], quad[2], quad[3]];
        if let Some(brick_type) = probe_corners(&quad, mask, image, params) {
            out.push(QuadCandidate { quad, brick_type });
        }
    }
    out
}

/// First pixel (raster order) of each sufficiently large 4-connected
/// component.
fn components(mask: &Mask, min_area: usize) -> Vec<(u32, u32)> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; (w * h) as usize];
    let mut seeds = Vec::new();
    let mut queue = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let idx = (y * w + x) as usize;
            if !mask.data[idx] || seen[idx] {
                continue;
            }
            let mut area = 0usize;
            queue.clear();
            queue.push((x, y));
            seen[idx] = true;
            let mut cursor = 0;
            while cursor < queue.len() {
                let (cx, cy) = queue[cursor];
                cursor += 1;
                area += 1;
                let mut push = |nx: u32, ny: u32| {
                    let nidx = (ny * w + nx) as usize;
                    if mask.data[nidx] && !seen[nidx] {
                        seen[nidx] = true;
                        queue.push((nx, ny));
                    }
                };
                if cx > 0 {
                    push(cx - 1, cy);
                }
                if cx + 1 < w {
                    push(cx + 1, cy);
                }
                if cy > 0 {
                    push(cx, cy - 1);
                }
                if cy + 1 < h {
                    push(cx, cy + 1);
                }
            }
            if area >= min_area {
                seeds.push((x, y));
            }
        }
    }
    seeds
}

/// Moore-neighbor border following from the component's raster-first pixel.
fn trace_border(mask: &Mask, start: (u32, u32)) -> Vec<Vector2<f64>> {
    // clockwise 8-neighborhood starting west
    const DIRS: [(i64, i64); 8] = [
        (-1, 0),
        (-1, -1),
        (0, -1),
        (1, -1),
        (1, 0),
        (1, 1),
        (0, 1),
        (-1, 1),
    ];
    let at = |x: i64, y: i64| -> bool {
        x >= 0 && y >= 0 && x < mask.width as i64 && y < mask.height as i64
            && mask.get(x as u32, y as u32)
    };
    let start = (start.0 as i64, start.1 as i64);
    let mut contour = vec![Vector2::new(start.0 as f64, start.1 as f64)];
    let mut current = start;
    // the pixel west of the raster-first pixel is background
    let mut backtrack_dir = 0usize;
    let limit = 4 * (mask.width as usize + mask.height as usize) * 4;
    for _ in 0..limit {
        let mut found = None;
        for step in 1..=8 {
            let dir = (backtrack_dir + step) % 8;
            let (dx, dy) = DIRS[dir];
            if at(current.0 + dx, current.1 + dy) {
                found = Some(dir);
                break;
            }
        }
        let Some(dir) = found else {
            break; // isolated pixel
        };
        let (dx, dy) = DIRS[dir];
        current = (current.0 + dx, current.1 + dy);
        if current == start {
            break;
        }
        contour.push(Vector2::new(current.0 as f64, current.1 as f64));
        // next scan starts just past the cell we came from
        backtrack_dir = (dir + 5) % 8;
    }
    contour
}

fn shoelace(poly: &[Vector2<f64>]) -> f64 {
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

fn is_convex(poly: &[Vector2<f64>]) -> bool {
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        let cross = (b - a).x * (c - b).y - (b - a).y * (c - b).x;
        if cross <= 1e-9 {
            return false;
        }
    }
    true
}

/// Simplify a closed contour by Douglas-Peucker with the tolerance doubled
/// from 1 px until at most 8 vertices remain; `Some` only for exactly 4.
fn simplify_to_quad(contour: &[Vector2<f64>]) -> Option<Vec<Vector2<f64>>> {
    let mut tolerance = 1.0;
    for _ in 0..12 {
        let poly = simplify_closed(contour, tolerance);
        if poly.len() <= 8 {
            return (poly.len() == 4).then_some(poly);
        }
        tolerance *= 2.0;
    }
    None
}

fn simplify_closed(contour: &[Vector2<f64>], tolerance: f64) -> Vec<Vector2<f64>> {
    // split at the two mutually farthest-ish anchor points, then simplify
    // the two open chains
    let mut far = 0;
    let mut best = 0.0;
    for (i, p) in contour.iter().enumerate() {
        let d = (p - contour[0]).norm_squared();
        if d > best {
            best = d;
            far = i;
        }
    }
    if far == 0 {
        return vec![contour[0]];
    }
    let chain_a: Vec<Vector2<f64>> = contour[..=far].to_vec();
    let chain_b: Vec<Vector2<f64>> = contour[far..]
        .iter()
        .chain(std::iter::once(&contour[0]))
        .copied()
        .collect();
    let mut out = douglas_peucker(&chain_a, tolerance);
    let tail = douglas_peucker(&chain_b, tolerance);
    out.pop(); // the anchor is shared
    out.extend_from_slice(&tail[..tail.len() - 1]);
    out
}

fn douglas_peucker(chain: &[Vector2<f64>], tolerance: f64) -> Vec<Vector2<f64>> {
    if chain.len() <= 2 {
        return chain.to_vec();
    }
    let (first, last) = (chain[0], chain[chain.len() - 1]);
    let axis = last - first;
    let len = axis.norm();
    let mut worst = 0usize;
    let mut worst_d = 0.0;
    for (i, p) in chain.iter().enumerate().skip(1).take(chain.len() - 2) {
        let d = if len < 1e-12 {
            (p - first).norm()
        } else {
            ((p - first).x * axis.y - (p - first).y * axis.x).abs() / len
        };
        if d > worst_d {
            worst_d = d;
            worst = i;
        }
    }
    if worst_d <= tolerance {
        return vec![first, last];
    }
    let mut left = douglas_peucker(&chain[..=worst], tolerance);
    let right = douglas_peucker(&chain[worst..], tolerance);
    left.pop();
    left.extend(right);
    left
}

fn probe_corners(
    quad: &[Vector2<f64>; 4],
    mask: &Mask,
    image: &RgbImage,
    params: &SegmentationParams,
) -> Option<BrickType> {
    let centroid = (quad[0] + quad[1] + quad[2] + quad[3]) / 4.0;
    let sample = |p: Vector2<f64>| -> Option<(u32, u32)> {
        let x = p.x.round();
        let y = p.y.round();
        (x >= 0.0 && y >= 0.0 && x < image.width as f64 && y < image.height as f64)
            .then_some((x as u32, y as u32))
    };
    let mut vote: Option<BrickType> = None;
    for corner in quad {
        let toward = (centroid - corner).normalize();
        let inside = sample(corner + toward * params.probe_dist)?;
        if !mask.get(inside.0, inside.1) {
            return None;
        }
        let outside = sample(corner - toward * params.probe_dist)?;
        let (h, s, _) = rgb_to_hsv(image.get(outside.0, outside.1));
        if s < params.min_probe_saturation {
            return None;
        }
        let t = params.hue_windows.classify(h)?;
        match vote {
            None => vote = Some(t),
            Some(prev) if prev != t => return None,
            _ => {}
        }
    }
    vote
}
