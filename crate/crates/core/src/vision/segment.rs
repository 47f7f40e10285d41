//! White-patch segmentation by local contrast: a pixel is patch when its
//! saturation sits below and its value above box-filtered local means, both
//! computed on the half-resolution image.

use serde::{Deserialize, Serialize};

use crate::synth::RgbImage;
use crate::world::BrickType;

/// HSV with H in [0, 360) and S, V in [0, 255].
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let r = rgb[0] as f64;
    let g = rgb[1] as f64;
    let b = rgb[2] as f64;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max <= 0.0 { 0.0 } else { delta / max * 255.0 };
    (h.rem_euclid(360.0), s, max)
}

/// Hue classification windows, degrees, `[lo, hi)` with wraparound.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct HueWindows {
    pub red: (f64, f64),
    pub green: (f64, f64),
    pub blue: (f64, f64),
    pub orange: (f64, f64),
}

impl Default for HueWindows {
    fn default() -> Self {
        HueWindows {
            red: (345.0, 15.0),
            green: (75.0, 165.0),
            blue: (195.0, 285.0),
            orange: (15.0, 45.0),
        }
    }
}

impl HueWindows {
    pub fn classify(&self, hue: f64) -> Option<BrickType> {
        let inside = |(lo, hi): (f64, f64)| {
            if lo <= hi {
                hue >= lo && hue < hi
            } else {
                hue >= lo || hue < hi
            }
        };
        if inside(self.red) {
            Some(BrickType::Red)
        } else if inside(self.orange) {
            Some(BrickType::Orange)
        } else if inside(self.green) {
            Some(BrickType::Green)
        } else if inside(self.blue) {
            Some(BrickType::Blue)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationParams {
    /// Box-filter kernel size on the half-resolution image (px). The
    /// effective window is `2·(box_kernel/2) + 1`, so always odd.
    pub box_kernel: usize,
    /// Saturation margin below the local mean (lambda_S).
    pub sat_margin: f64,
    /// Value margin above the local mean (lambda_V).
    pub val_margin: f64,
    /// Corner probe distance (px) for the inside/outside checks.
    pub probe_dist: f64,
    /// Minimum saturation for an outside probe to count as brick color.
    pub min_probe_saturation: f64,
    /// Components smaller than this (px) are not traced.
    pub min_component_area: usize,
    pub hue_windows: HueWindows,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        SegmentationParams {
            box_kernel: 290,
            sat_margin: 40.0,
            val_margin: 30.0,
            probe_dist: 4.0,
            min_probe_saturation: 128.0,
            min_component_area: 60,
            hue_windows: HueWindows::default(),
        }
    }
}

/// Binary image aligned with an `RgbImage`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Mask {
        Mask {
            width,
            height,
            data: vec![false; (width * height) as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }
}

struct Integral {
    width: usize,
    height: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(values: &[f64], width: usize, height: usize) -> Integral {
        let mut sums = vec![0.0; (width + 1) * (height + 1)];
        for y in 0..height {
            let mut row = 0.0;
            for x in 0..width {
                row += values[y * width + x];
                sums[(y + 1) * (width + 1) + (x + 1)] = sums[y * (width + 1) + (x + 1)] + row;
            }
        }
        Integral {
            width,
            height,
            sums,
        }
    }

    /// Mean over the window of radius `r` around (x, y), clamped to the
    /// image borders (the window shrinks at the edges).
    fn clamped_mean(&self, x: usize, y: usize, r: usize) -> f64 {
        let x0 = x.saturating_sub(r);
        let y0 = y.saturating_sub(r);
        let x1 = (x + r + 1).min(self.width);
        let y1 = (y + r + 1).min(self.height);
        let w = self.width + 1;
        let sum = self.sums[y1 * w + x1] - self.sums[y0 * w + x1] - self.sums[y1 * w + x0]
            + self.sums[y0 * w + x0];
        sum / ((x1 - x0) * (y1 - y0)) as f64
    }
}

/// Classify patch pixels: `S(p) < S̄(p) − λ_S ∧ V(p) > V̄(p) + λ_V`, with the
/// local means box-filtered on the half-resolution image. Pixels under the
/// exclusion mask are forced off.
pub fn segment_patches(
    image: &RgbImage,
    params: &SegmentationParams,
    exclusion: Option<&Mask>,
) -> Mask {
    let (w, h) = (image.width as usize, image.height as usize);
    if let Some(ex) = exclusion {
        assert_eq!((ex.width, ex.height), (image.width, image.height));
    }

    // half-resolution S and V (2x2 RGB block means)
    let hw = w.div_ceil(2);
    let hh = h.div_ceil(2);
    let mut s_half = vec![0.0; hw * hh];
    let mut v_half = vec![0.0; hw * hh];
    for hy in 0..hh {
        for hx in 0..hw {
            let mut acc = [0.0f64; 3];
            let mut n = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    let (x, y) = (2 * hx + dx, 2 * hy + dy);
                    if x < w && y < h {
                        let px = image.get(x as u32, y as u32);
                        for c in 0..3 {
                            acc[c] += px[c] as f64;
                        }
                        n += 1.0;
                    }
                }
            }
            let rgb = [
                (acc[0] / n).round() as u8,
                (acc[1] / n).round() as u8,
                (acc[2] / n).round() as u8,
            ];
            let (_, s, v) = rgb_to_hsv(rgb);
            s_half[hy * hw + hx] = s;
            v_half[hy * hw + hx] = v;
        }
    }
    let s_int = Integral::new(&s_half, hw, hh);
    let v_int = Integral::new(&v_half, hw, hh);
    let r = params.box_kernel / 2;

    let mut mask = Mask::new(image.width, image.height);
    for y in 0..h {
        for x in 0..w {
            if exclusion.is_some_and(|ex| ex.get(x as u32, y as u32)) {
                continue;
            }
            let (_, s, v) = rgb_to_hsv(image.get(x as u32, y as u32));
            let s_mean = s_int.clamped_mean(x / 2, y / 2, r);
            let v_mean = v_int.clamped_mean(x / 2, y / 2, r);
            if s < s_mean - params.sat_margin && v > v_mean + params.val_margin {
                mask.set(x as u32, y as u32, true);
            }
        }
    }
    mask
}
