//! Hexcone RGB <-> HSV conversion on 8-bit triples.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsvPixel {
    /// Hue in degrees, `[0, 360)`. Zero when `hue_defined` is false.
    pub h: f64,
    pub s: f64,
    pub v: f64,
    pub hue_defined: bool,
}

/// Converts an 8-bit RGB triple with the standard hexcone formulas.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> HsvPixel {
    let r = f64::from(rgb[0]);
    let g = f64::from(rgb[1]);
    let b = f64::from(rgb[2]);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;

    let v = max / 255.0;
    let s = if max == 0.0 { 0.0 } else { delta / max };
    if delta == 0.0 {
        return HsvPixel {
            h: 0.0,
            s,
            v,
            hue_defined: false,
        };
    }

    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = 60.0 * sector;
    if h >= 360.0 {
        h -= 360.0;
    }
    HsvPixel {
        h,
        s,
        v,
        hue_defined: true,
    }
}

/// Inverse hexcone conversion, rounding each channel to the nearest 8-bit value.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let s = s.clamp(0.0, 1.0);
    let v = v.clamp(0.0, 1.0);
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to_u8 = |f: f64| ((f + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [to_u8(r1), to_u8(g1), to_u8(b1)]
}

impl HsvPixel {
    pub fn to_rgb(&self) -> [u8; 3] {
        hsv_to_rgb(self.h, self.s, self.v)
    }

    /// Integer hue bin `[0, 359]`; bin `i` covers `[i, i + 1)`.
    pub fn hue_bin(&self) -> usize {
        (self.h.floor() as usize).min(359)
    }
}
