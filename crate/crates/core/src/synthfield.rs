//! Seeded synthetic field scenes with per-pixel ground truth.
//!
//! A scene starts as bare background (soil). Each other class then paints
//! disk-shaped patches, in class-list order, so later classes cover earlier
//! ones. Pixel colors are drawn from the class's hue intervals and
//! saturation/value ranges; a value-channel speckle adds texture. A share of
//! background pixels become shadow: they take their hue from the background
//! intervals at or above 180 degrees and are darkened, which yields the
//! two-lobed soil spectrum. Optional Gaussian noise and a box blur run after
//! the labels are fixed.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{hsv_to_rgb, rgb_to_hsv, CoverMask, HueRangeSet, RgbImage};
use crate::tiling::TileSpec;

/// Hue at or above which a background interval counts as shadow.
pub const SHADOW_HUE: u16 = 180;
const SHADOW_DARKEN: f64 = 0.6;
const MIN_SV: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub hues: HueRangeSet,
    /// Relative weight per interval; empty means proportional to width.
    #[serde(default)]
    pub hue_weights: Vec<f64>,
    pub sat_mean: f64,
    pub sat_spread: f64,
    pub val_mean: f64,
    pub val_spread: f64,
    #[serde(default)]
    pub patch_count: usize,
    /// Amplitude of per-pixel value jitter.
    #[serde(default)]
    pub speckle: f64,
    /// Patches gather around this many seeded centers; 0 scatters them uniformly.
    #[serde(default)]
    pub clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub classes: Vec<ClassSpec>,
    /// Name of the class that fills everything not covered by a patch.
    pub background: String,
    pub patch_radius_mean: f64,
    pub patch_radius_spread: f64,
    /// Standard deviation of patch offsets around a cluster center.
    #[serde(default)]
    pub cluster_spread: f64,
    pub shadow_fraction: f64,
    pub noise_sigma: f64,
    pub blur_radius: u32,
    pub seed: u64,
}

impl SceneSpec {
    /// Four-class field: bare soil with a shadow lobe, sugar beet, fat hen and
    /// wild mustard with its yellow flowers.
    pub fn field(width: u32, height: u32, seed: u64) -> Self {
        let radius = 0.05 * f64::from(width.min(height).max(64));
        let area = f64::from(width) * f64::from(height);
        let patches = |share: f64| (share * area / (std::f64::consts::PI * radius * radius)).round() as usize;
        let class = |name: &str, hues: &[[u16; 2]], weights: &[f64], sat: (f64, f64), val: (f64, f64), share, speckle| ClassSpec {
            name: name.to_string(),
            hues: HueRangeSet::new(hues.to_vec()).expect("preset hue ranges are valid"),
            hue_weights: weights.to_vec(),
            sat_mean: sat.0,
            sat_spread: sat.1,
            val_mean: val.0,
            val_spread: val.1,
            patch_count: patches(share),
            speckle,
            clusters: ((area / 6e5).round() as usize).max(2),
        };
        Self {
            width,
            height,
            classes: vec![
                class("soil", &[[25, 55], [210, 235]], &[1.0, 1.0], (0.35, 0.1), (0.6, 0.12), 0.0, 0.06),
                class("beta_vulgaris", &[[85, 115]], &[], (0.65, 0.1), (0.45, 0.08), 0.45, 0.04),
                class("chenopodium_album", &[[65, 95]], &[], (0.3, 0.06), (0.7, 0.08), 0.4, 0.16),
                class("sinapis_arvensis", &[[55, 64], [95, 130]], &[0.4, 0.6], (0.75, 0.1), (0.6, 0.12), 0.35, 0.26),
            ],
            background: "soil".to_string(),
            patch_radius_mean: radius,
            patch_radius_spread: 0.4 * radius,
            cluster_spread: 1.5 * radius,
            shadow_fraction: 0.3,
            noise_sigma: 0.0,
            blur_radius: 0,
            seed,
        }
    }

    pub fn class_list(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn background_index(&self) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c.name == self.background)
            .ok_or_else(|| Error::invalid(format!("background class `{}` is not declared", self.background)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("scene dimensions must be positive"));
        }
        if self.classes.is_empty() || self.classes.len() > 255 {
            return Err(Error::invalid("a scene needs between 1 and 255 classes"));
        }
        let mut names = self.class_list();
        names.sort();
        names.dedup();
        if names.len() != self.classes.len() {
            return Err(Error::invalid("class names must be unique"));
        }
        self.background_index()?;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.shadow_fraction) {
            return Err(Error::invalid("shadow_fraction must be in [0, 1]"));
        }
        if !(self.noise_sigma >= 0.0) || !(self.patch_radius_spread >= 0.0) || !(self.cluster_spread >= 0.0) {
            return Err(Error::invalid("noise, radius spread and cluster spread must be non-negative"));
        }
        let max_r = self.patch_radius_mean + self.patch_radius_spread;
        if !(self.patch_radius_mean > 0.0) || max_r > f64::from(self.width.min(self.height)) / 2.0 {
            return Err(Error::invalid(format!(
                "patch radius up to {max_r} does not fit a {}x{} scene",
                self.width, self.height
            )));
        }
        for c in &self.classes {
            if c.hues.is_empty() {
                return Err(Error::invalid(format!("class `{}` has no hue intervals", c.name)));
            }
            if !c.hue_weights.is_empty()
                && (c.hue_weights.len() != c.hues.intervals().len() || c.hue_weights.iter().any(|w| !(*w >= 0.0)))
            {
                return Err(Error::invalid(format!("class `{}` needs one non-negative weight per interval", c.name)));
            }
            if ![c.sat_mean, c.val_mean].into_iter().all(unit) || c.sat_spread < 0.0 || c.val_spread < 0.0 || c.speckle < 0.0 {
                return Err(Error::invalid(format!("class `{}` has out-of-range color parameters", c.name)));
            }
        }
        Ok(())
    }
}

/// Class index per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub width: u32,
    pub height: u32,
    pub class_list: Vec<String>,
    pub labels: Vec<u8>,
}

impl GroundTruth {
    pub fn label(&self, x: u32, y: u32) -> usize {
        usize::from(self.labels[(y * self.width + x) as usize])
    }

    pub fn class_mask(&self, class: usize) -> Result<CoverMask> {
        let name = self
            .class_list
            .get(class)
            .ok_or_else(|| Error::invalid(format!("class index {class} outside class list")))?;
        let bits = self.labels.iter().map(|&l| usize::from(l) == class).collect();
        CoverMask::new(self.width, self.height, name.clone(), bits)
    }

    /// Pixel share per class.
    pub fn fractions(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.class_list.len()];
        for &l in &self.labels {
            counts[usize::from(l)] += 1;
        }
        counts.iter().map(|&c| c as f64 / self.labels.len() as f64).collect()
    }

    /// Single-channel PNG whose gray value is the class index.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let img = image::GrayImage::from_raw(self.width, self.height, self.labels.clone()).expect("label buffer matches dimensions");
        let mut buf = std::io::Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn decode_png(bytes: &[u8], class_list: Vec<String>) -> Result<Self> {
        let img = image::load_from_memory(bytes)?.into_luma8();
        let (width, height) = img.dimensions();
        let labels = img.into_raw();
        if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= class_list.len()) {
            return Err(Error::invalid(format!("label {bad} outside class list of {}", class_list.len())));
        }
        Ok(Self {
            width,
            height,
            class_list,
            labels,
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::imaging::write_file(path.as_ref(), &self.encode_png()?)
    }
}

fn uniform_pm1(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-1.0..=1.0)
}

fn pick_interval(rng: &mut ChaCha8Rng, candidates: &[(usize, f64)]) -> usize {
    let total: f64 = candidates.iter().map(|c| c.1).sum();
    let mut u = rng.random_range(0.0..total);
    for &(i, w) in candidates {
        if u < w {
            return i;
        }
        u -= w;
    }
    candidates[candidates.len() - 1].0
}

/// Draws a color whose 8-bit hue bin lies in interval `iv` of `hues`.
fn sample_color(rng: &mut ChaCha8Rng, hues: &HueRangeSet, iv: usize, s: f64, v: f64) -> [u8; 3] {
    let [lo, hi] = hues.intervals()[iv];
    let (lo, hi) = (f64::from(lo), f64::from(hi) + 1.0);
    for _ in 0..16 {
        let h = rng.random_range(lo..hi);
        let rgb = hsv_to_rgb(h, s, v);
        let back = rgb_to_hsv(rgb);
        if back.hue_defined && hues.intervals()[iv][0] as usize <= back.hue_bin() && back.hue_bin() <= hues.intervals()[iv][1] as usize {
            return rgb;
        }
    }
    // saturated mid-interval colors quantize to well within the bin
    hsv_to_rgb((lo + hi) / 2.0, 1.0, v.max(0.5))
}

fn box_blur(img: &mut RgbImage, r: u32) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let r = r as usize;
    let pass = |src: &[[u8; 3]], len: usize, stride: usize, lines: usize, line_stride: usize, dst: &mut [[u8; 3]]| {
        for line in 0..lines {
            let at = |i: usize| line * line_stride + i * stride;
            for i in 0..len {
                let (a, b) = (i.saturating_sub(r), (i + r).min(len - 1));
                let mut acc = [0u32; 3];
                for j in a..=b {
                    for c in 0..3 {
                        acc[c] += u32::from(src[at(j)][c]);
                    }
                }
                let n = (b - a + 1) as u32;
                dst[at(i)] = [0, 1, 2].map(|c| ((acc[c] + n / 2) / n) as u8);
            }
        }
    };
    let src = img.pixels().to_vec();
    let mut tmp = src.clone();
    pass(&src, w, 1, h, w, &mut tmp);
    pass(&tmp, h, w, w, 1, img.pixels_mut());
}

/// Renders the scene. Identical specs give identical images and labels.
pub fn generate_scene(spec: &SceneSpec) -> Result<(RgbImage, GroundTruth)> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let bg = spec.background_index()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels = vec![bg as u8; (w * h) as usize];

    for (ci, class) in spec.classes.iter().enumerate() {
        if ci == bg || class.patch_count == 0 {
            continue;
        }
        let centers: Vec<(f64, f64)> = (0..class.clusters)
            .map(|_| (rng.random_range(0.0..f64::from(w)), rng.random_range(0.0..f64::from(h))))
            .collect();
        let offset = Normal::new(0.0, spec.cluster_spread.max(f64::MIN_POSITIVE)).expect("finite spread");
        for _ in 0..class.patch_count {
            let (cx, cy) = if centers.is_empty() {
                (rng.random_range(0.0..f64::from(w)), rng.random_range(0.0..f64::from(h)))
            } else {
                let (x0, y0) = centers[rng.random_range(0..centers.len())];
                (
                    (x0 + offset.sample(&mut rng)).clamp(0.0, f64::from(w) - 1.0),
                    (y0 + offset.sample(&mut rng)).clamp(0.0, f64::from(h) - 1.0),
                )
            };
            let r = (spec.patch_radius_mean + spec.patch_radius_spread * uniform_pm1(&mut rng)).max(1.0);
            let (x0, x1) = ((cx - r).floor().max(0.0) as u32, ((cx + r).ceil() as u32).min(w - 1));
            let (y0, y1) = ((cy - r).floor().max(0.0) as u32, ((cy + r).ceil() as u32).min(h - 1));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let (dx, dy) = (f64::from(x) + 0.5 - cx, f64::from(y) + 0.5 - cy);
                    if dx * dx + dy * dy <= r * r {
                        labels[(y * w + x) as usize] = ci as u8;
                    }
                }
            }
        }
    }

    // per-class interval weights, split into lit and shadow groups for the background
    let groups: Vec<(Vec<(usize, f64)>, Vec<(usize, f64)>)> = spec
        .classes
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let weighted: Vec<(usize, f64)> = c
                .hues
                .intervals()
                .iter()
                .enumerate()
                .map(|(i, iv)| (i, c.hue_weights.get(i).copied().unwrap_or(f64::from(iv[1] - iv[0] + 1))))
                .filter(|&(_, wt)| wt > 0.0)
                .collect();
            if ci != bg {
                return (weighted, Vec::new());
            }
            let (shadow, lit): (Vec<_>, Vec<_>) = weighted.into_iter().partition(|&(i, _)| c.hues.intervals()[i][0] >= SHADOW_HUE);
            (lit, shadow)
        })
        .collect();

    let mut pixels = Vec::with_capacity(labels.len());
    for &l in &labels {
        let ci = usize::from(l);
        let c = &spec.classes[ci];
        let (lit, shadow) = &groups[ci];
        let is_shadow = ci == bg && spec.shadow_fraction > 0.0 && rng.random::<f64>() < spec.shadow_fraction;
        let pool = if (is_shadow && !shadow.is_empty()) || lit.is_empty() { shadow } else { lit };
        let iv = pick_interval(&mut rng, pool);
        let s = (c.sat_mean + c.sat_spread * uniform_pm1(&mut rng)).clamp(MIN_SV, 1.0);
        let mut v = c.val_mean + c.val_spread * uniform_pm1(&mut rng) + c.speckle * uniform_pm1(&mut rng);
        if is_shadow {
            v *= SHADOW_DARKEN;
        }
        pixels.push(sample_color(&mut rng, &c.hues, iv, s, v.clamp(MIN_SV, 1.0)));
    }

    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).expect("finite sigma");
        for p in pixels.iter_mut() {
            for ch in p.iter_mut() {
                *ch = (f64::from(*ch) + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    let mut img = RgbImage::new(w, h, pixels)?;
    if spec.blur_radius > 0 {
        box_blur(&mut img, spec.blur_radius);
    }
    let gt = GroundTruth {
        width: w,
        height: h,
        class_list: spec.class_list(),
        labels,
    };
    Ok((img, gt))
}

/// Most frequent pixel label inside the tile; ties go to the earlier class.
pub fn majority_label(gt: &GroundTruth, tile: &TileSpec) -> Result<usize> {
    tile.check_bounds(gt.width, gt.height)?;
    let mut counts = vec![0usize; gt.class_list.len()];
    for y in tile.y..tile.y + tile.size {
        for x in tile.x..tile.x + tile.size {
            counts[gt.label(x, y)] += 1;
        }
    }
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    Ok(best)
}
