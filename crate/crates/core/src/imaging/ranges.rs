//! Hue interval sets: derivation from a spectrum and mask refinement.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::color::rgb_to_hsv;
use super::raster::{ensure_same_dims, CoverMask, RgbImage};
use super::spectrum::{HueSpectrum, HUE_BINS};
use crate::error::{Error, Result};

const MASS_TOLERANCE: f64 = 1e-9;

/// Sorted, pairwise-disjoint inclusive hue intervals in whole degrees.
///
/// Serializes as a JSON array of `[lo, hi]` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<[u16; 2]>", into = "Vec<[u16; 2]>")]
pub struct HueRangeSet {
    intervals: Vec<[u16; 2]>,
}

impl HueRangeSet {
    /// Sorts the intervals by lower bound and rejects bad bounds or overlaps.
    pub fn new(mut intervals: Vec<[u16; 2]>) -> Result<Self> {
        for &[lo, hi] in &intervals {
            if lo > hi || hi as usize >= HUE_BINS {
                return Err(Error::invalid(format!("hue interval [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 359")));
            }
        }
        intervals.sort_unstable();
        for pair in intervals.windows(2) {
            if pair[1][0] <= pair[0][1] {
                return Err(Error::invalid(format!(
                    "hue intervals [{}, {}] and [{}, {}] overlap",
                    pair[0][0], pair[0][1], pair[1][0], pair[1][1]
                )));
            }
        }
        Ok(Self { intervals })
    }

    pub fn single(lo: u16, hi: u16) -> Result<Self> {
        Self::new(vec![[lo, hi]])
    }

    pub fn intervals(&self) -> &[[u16; 2]] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains_bin(&self, bin: usize) -> bool {
        self.intervals
            .iter()
            .any(|&[lo, hi]| (lo as usize..=hi as usize).contains(&bin))
    }

    /// True when the integer bin of `hue` (its floor) lies in an interval.
    pub fn contains(&self, hue: f64) -> bool {
        if !(0.0..360.0).contains(&hue) {
            return false;
        }
        self.contains_bin(hue.floor() as usize)
    }

    pub fn total_width(&self) -> usize {
        self.intervals.iter().map(|&[lo, hi]| (hi - lo + 1) as usize).sum()
    }

    pub fn mass(&self, spectrum: &HueSpectrum) -> f64 {
        self.intervals.iter().map(|&[lo, hi]| spectrum.mass_between(lo, hi)).sum()
    }
}

impl TryFrom<Vec<[u16; 2]>> for HueRangeSet {
    type Error = Error;

    fn try_from(v: Vec<[u16; 2]>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<HueRangeSet> for Vec<[u16; 2]> {
    fn from(r: HueRangeSet) -> Self {
        r.intervals
    }
}

impl fmt::Display for HueRangeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.intervals.iter().map(|[lo, hi]| format!("{lo}-{hi}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// Parses `"55-125"` or `"25-55,210-235"`.
impl FromStr for HueRangeSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut intervals = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (lo, hi) = part
                .split_once('-')
                .ok_or_else(|| Error::invalid(format!("hue range `{part}` is not of the form lo-hi")))?;
            let lo: u16 = lo.trim().parse().map_err(|_| Error::invalid(format!("bad hue bound in `{part}`")))?;
            let hi: u16 = hi.trim().parse().map_err(|_| Error::invalid(format!("bad hue bound in `{part}`")))?;
            intervals.push([lo, hi]);
        }
        Self::new(intervals)
    }
}

/// Finds at most `max_intervals` disjoint intervals holding at least `mass` of
/// the spectrum with the smallest total width in bins.
pub fn derive_hue_ranges(spectrum: &HueSpectrum, mass: f64, max_intervals: usize) -> Result<HueRangeSet> {
    if spectrum.is_empty() {
        return Err(Error::EmptySpectrum);
    }
    if !(mass > 0.0 && mass <= 1.0) {
        return Err(Error::invalid(format!("mass must lie in (0, 1], got {mass}")));
    }
    if max_intervals == 0 {
        return Err(Error::invalid("max_intervals must be at least 1"));
    }
    let bins = &spectrum.bins;
    if bins.len() != HUE_BINS {
        return Err(Error::invalid("spectrum must have 360 bins"));
    }

    if mass >= 1.0 - 1e-12 {
        return Ok(cover_all(bins, max_intervals));
    }
    if let Some(set) = greedy_if_feasible(bins, mass, max_intervals) {
        return Ok(set);
    }
    Ok(min_width_dp(bins, mass, max_intervals))
}

/// Covers every non-zero bin: the hull minus the `k - 1` widest interior gaps.
fn cover_all(bins: &[f64], max_intervals: usize) -> HueRangeSet {
    let runs = runs_of(&bins.iter().map(|&b| b > 0.0).collect::<Vec<_>>());
    if runs.len() <= max_intervals {
        return HueRangeSet { intervals: runs };
    }
    // gap i sits between runs[i] and runs[i + 1]
    let mut gaps: Vec<(usize, usize)> = runs
        .windows(2)
        .enumerate()
        .map(|(i, w)| ((w[1][0] - w[0][1] - 1) as usize, i))
        .collect();
    gaps.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut cut: Vec<usize> = gaps[..max_intervals - 1].iter().map(|g| g.1).collect();
    cut.sort_unstable();
    let mut intervals = Vec::with_capacity(max_intervals);
    let mut start = runs[0][0];
    for &g in &cut {
        intervals.push([start, runs[g][1]]);
        start = runs[g + 1][0];
    }
    intervals.push([start, runs[runs.len() - 1][1]]);
    HueRangeSet { intervals }
}

/// The fewest bins reaching `mass` are the heaviest ones; when those bins
/// already form few enough runs no narrower cover exists.
fn greedy_if_feasible(bins: &[f64], mass: f64, max_intervals: usize) -> Option<HueRangeSet> {
    let mut order: Vec<usize> = (0..bins.len()).filter(|&i| bins[i] > 0.0).collect();
    order.sort_by(|&a, &b| bins[b].total_cmp(&bins[a]).then(a.cmp(&b)));
    let mut chosen = vec![false; bins.len()];
    let mut acc = 0.0;
    for &i in &order {
        if acc >= mass - MASS_TOLERANCE {
            break;
        }
        chosen[i] = true;
        acc += bins[i];
    }
    let runs = runs_of(&chosen);
    (runs.len() <= max_intervals).then_some(HueRangeSet { intervals: runs })
}

fn runs_of(flags: &[bool]) -> Vec<[u16; 2]> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &on) in flags.iter().enumerate() {
        match (on, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push([s as u16, (i - 1) as u16]);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push([s as u16, (flags.len() - 1) as u16]);
    }
    runs
}

/// Exact search: for every (intervals used, covered width, inside-interval)
/// state, track the largest reachable mass bin by bin, then backtrack from the
/// narrowest width meeting the target.
fn min_width_dp(bins: &[f64], mass: f64, max_intervals: usize) -> HueRangeSet {
    let n = bins.len();
    let nonzero = bins.iter().filter(|&&b| b > 0.0).count();
    let k = max_intervals.min(nonzero.max(1));
    let widths = n + 1;
    let idx = |j: usize, w: usize, s: usize| (j * widths + w) * 2 + s;
    let states = (k + 1) * widths * 2;

    const OUT: usize = 0;
    const IN: usize = 1;
    let mut cur = vec![f64::NEG_INFINITY; states];
    cur[idx(0, 0, OUT)] = 0.0;
    // back[i][state] = predecessor inside-flag (0/1) for the transition into bin i
    let mut back = vec![0u8; n * states];

    for (i, &b) in bins.iter().enumerate() {
        let mut next = vec![f64::NEG_INFINITY; states];
        let bp = &mut back[i * states..(i + 1) * states];
        for j in 0..=k {
            for w in 0..=i.min(n) {
                // skip bin i: stay out, or close an open interval
                let (from_out, from_in) = (cur[idx(j, w, OUT)], cur[idx(j, w, IN)]);
                let t = idx(j, w, OUT);
                if from_out >= from_in {
                    next[t] = from_out;
                    bp[t] = OUT as u8;
                } else {
                    next[t] = from_in;
                    bp[t] = IN as u8;
                }
                // cover bin i: extend the open interval, or open a new one
                let t = idx(j, w + 1, IN);
                let extend = from_in + b;
                let open = if j > 0 { cur[idx(j - 1, w, OUT)] + b } else { f64::NEG_INFINITY };
                if extend >= open {
                    next[t] = extend;
                    bp[t] = IN as u8;
                } else {
                    next[t] = open;
                    bp[t] = OUT as u8;
                }
            }
        }
        cur = next;
    }

    let mut best: Option<(usize, usize, usize)> = None;
    'width: for w in 1..=n {
        let mut best_mass = f64::NEG_INFINITY;
        for j in 1..=k {
            for s in [OUT, IN] {
                let m = cur[idx(j, w, s)];
                if m >= mass - MASS_TOLERANCE && m > best_mass {
                    best_mass = m;
                    best = Some((j, w, s));
                }
            }
        }
        if best.is_some() {
            break 'width;
        }
    }
    let (mut j, mut w, mut s) = best.expect("covering every bin always reaches the target");

    let mut covered = vec![false; n];
    for i in (0..n).rev() {
        let prev = back[i * states + idx(j, w, s)] as usize;
        if s == IN {
            covered[i] = true;
            w -= 1;
            if prev == OUT {
                j -= 1;
            }
        }
        s = prev;
    }
    HueRangeSet {
        intervals: runs_of(&covered),
    }
}

/// Options for [`refine_mask`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    pub sat_min: f64,
    /// Keep masked pixels that have no usable hue (undefined or below
    /// `sat_min`). Intended for the bare-soil class, whose shadows and bright
    /// albedo patches are close to gray.
    pub keep_achromatic: bool,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            sat_min: super::spectrum::DEFAULT_SAT_MIN,
            keep_achromatic: false,
        }
    }
}

/// Keeps only mask pixels whose hue falls inside `ranges`.
pub fn refine_mask(mask: &CoverMask, img: &RgbImage, ranges: &HueRangeSet, opts: RefineOptions) -> Result<CoverMask> {
    ensure_same_dims(img, mask)?;
    if ranges.is_empty() {
        return Err(Error::invalid("hue range set must be non-empty for filtering"));
    }
    let bits = img
        .pixels()
        .iter()
        .zip(mask.bits())
        .map(|(&px, &on)| on && pixel_passes(px, ranges, opts))
        .collect();
    CoverMask::new(mask.width(), mask.height(), mask.class_name(), bits)
}

pub(crate) fn pixel_passes(px: [u8; 3], ranges: &HueRangeSet, opts: RefineOptions) -> bool {
    let hsv = rgb_to_hsv(px);
    let chromatic = hsv.hue_defined && hsv.s >= opts.sat_min;
    if chromatic {
        ranges.contains_bin(hsv.hue_bin())
    } else {
        opts.keep_achromatic
    }
}
