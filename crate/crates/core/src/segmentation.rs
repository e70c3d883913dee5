//! Boundary map → planar segments.
//!
//! The boundary map is split with Otsu's threshold on a linearly binned
//! histogram; pixels below it are planar and are grouped into 4-connected
//! components. Columns `0` and `width − 1` are adjacent when wrapping.

use serde::{Deserialize, Serialize};

use crate::geom::{EquirectGrid, FloatMap};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub bins: usize,
    /// Components with fewer pixels are relabelled 0.
    pub min_size: usize,
    pub wrap: bool,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            bins: 256,
            min_size: 100,
            wrap: true,
        }
    }
}

/// Per-pixel segment labels: 0 for boundary/unassigned, `1..=count` otherwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    grid: EquirectGrid,
    labels: Vec<u32>,
    count: u32,
}

impl LabelMap {
    pub fn new(grid: EquirectGrid, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::ShapeMismatch("label map size".into()));
        }
        let count = labels.iter().copied().max().unwrap_or(0);
        Ok(Self { grid, labels, count })
    }

    pub fn grid(&self) -> &EquirectGrid {
        &self.grid
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Number of segments `K`.
    pub fn count(&self) -> u32 {
        self.count
    }

    /// Pixel indices of every segment, in raster order; entry `k − 1` holds
    /// label `k`.
    pub fn segments(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count as usize];
        for (i, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                out[l as usize - 1].push(i);
            }
        }
        out
    }
}

/// Result of Otsu thresholding on a linearly binned histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtsuSplit {
    pub min: f64,
    pub max: f64,
    pub bins: usize,
    /// Last bin of the lower class.
    pub cut: usize,
    /// Upper edge of bin `cut`.
    pub threshold: f64,
}

impl OtsuSplit {
    pub fn bin_of(&self, v: f64) -> usize {
        bin_index(v, self.min, self.max, self.bins)
    }

    /// Whether `v` falls in the lower class.
    pub fn is_below(&self, v: f64) -> bool {
        self.bin_of(v) <= self.cut
    }
}

fn bin_index(v: f64, min: f64, max: f64, bins: usize) -> usize {
    let t = (v - min) / (max - min) * bins as f64;
    if t <= 0.0 {
        0
    } else {
        (t.floor() as usize).min(bins - 1)
    }
}

/// Histogram of `values` over `[min, max]` with `bins` equal bins.
pub fn histogram(values: &[f64], min: f64, max: f64, bins: usize) -> Vec<u64> {
    let mut hist = vec![0u64; bins];
    for &v in values {
        hist[bin_index(v, min, max, bins)] += 1;
    }
    hist
}

/// Cut bin maximising the between-class variance, using bin indices as
/// values. Ties go to the lower bin. `None` if fewer than two bins are
/// occupied.
pub fn otsu_cut(hist: &[u64]) -> Option<usize> {
    let total: f64 = hist.iter().map(|&h| h as f64).sum();
    let sum_total: f64 = hist.iter().enumerate().map(|(b, &h)| b as f64 * h as f64).sum();
    let mut n0 = 0.0;
    let mut s0 = 0.0;
    let mut best: Option<(usize, f64)> = None;
    for (t, &h) in hist.iter().enumerate().take(hist.len().saturating_sub(1)) {
        n0 += h as f64;
        s0 += t as f64 * h as f64;
        let n1 = total - n0;
        if n0 == 0.0 || n1 == 0.0 {
            continue;
        }
        let diff = s0 / n0 - (sum_total - s0) / n1;
        let var = n0 * n1 * diff * diff;
        if best.is_none_or(|(_, b)| var > b) {
            best = Some((t, var));
        }
    }
    best.map(|(t, _)| t)
}

/// Otsu split of the valid values of a boundary map.
pub fn otsu_threshold(boundary: &FloatMap, bins: usize) -> Result<OtsuSplit> {
    if bins < 2 {
        return Err(Error::InvalidConfig(format!("Otsu needs at least 2 bins, got {bins}")));
    }
    let values: Vec<f64> = boundary
        .values()
        .iter()
        .zip(boundary.mask())
        .filter(|(v, &m)| m && v.is_finite())
        .map(|(&v, _)| v)
        .collect();
    if values.is_empty() {
        return Err(Error::EmptyMask("Otsu threshold"));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Err(Error::Degenerate(format!(
            "boundary map is constant ({min}); no separation"
        )));
    }
    let hist = histogram(&values, min, max, bins);
    let cut = otsu_cut(&hist).ok_or_else(|| Error::Degenerate("histogram has a single occupied bin".into()))?;
    Ok(OtsuSplit {
        min,
        max,
        bins,
        cut,
        threshold: min + (cut + 1) as f64 * (max - min) / bins as f64,
    })
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    let mut root = x;
    while parent[root] != root {
        root = parent[root];
    }
    while parent[x] != root {
        let next = parent[x];
        parent[x] = root;
        x = next;
    }
    root
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let ra = find(parent, a);
    let rb = find(parent, b);
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// 4-connected components of `planar`, labelled in order of their first
/// pixel in raster order. Components smaller than `min_size` become 0.
pub fn connected_components(planar: &[bool], grid: &EquirectGrid, wrap: bool, min_size: usize) -> Result<LabelMap> {
    if planar.len() != grid.len() {
        return Err(Error::ShapeMismatch("planar mask size".into()));
    }
    let (w, h) = (grid.width(), grid.height());
    let mut parent: Vec<usize> = (0..grid.len()).collect();
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            if !planar[i] {
                continue;
            }
            if col + 1 < w && planar[i + 1] {
                union(&mut parent, i, i + 1);
            }
            if row + 1 < h && planar[i + w] {
                union(&mut parent, i, i + w);
            }
        }
        if wrap && w > 1 && planar[row * w] && planar[row * w + w - 1] {
            union(&mut parent, row * w, row * w + w - 1);
        }
    }

    let mut root_label = vec![0u32; grid.len()];
    let mut sizes: Vec<usize> = Vec::new();
    let mut provisional = vec![0u32; grid.len()];
    for i in 0..grid.len() {
        if !planar[i] {
            continue;
        }
        let r = find(&mut parent, i);
        if root_label[r] == 0 {
            sizes.push(0);
            root_label[r] = sizes.len() as u32;
        }
        let l = root_label[r];
        sizes[l as usize - 1] += 1;
        provisional[i] = l;
    }

    let mut remap = vec![0u32; sizes.len() + 1];
    let mut next = 0u32;
    for (k, &s) in sizes.iter().enumerate() {
        if s >= min_size {
            next += 1;
            remap[k + 1] = next;
        }
    }
    let labels = provisional.into_iter().map(|l| remap[l as usize]).collect();
    Ok(LabelMap {
        grid: *grid,
        labels,
        count: next,
    })
}

/// Otsu split of the boundary map followed by connected components.
///
/// A boundary map without contrast (constant over its valid pixels) is
/// treated as a single planar region rather than an error.
pub fn segment_planes(boundary: &FloatMap, cfg: &SegmentConfig) -> Result<LabelMap> {
    let planar: Vec<bool> = match otsu_threshold(boundary, cfg.bins) {
        Ok(split) => boundary
            .values()
            .iter()
            .zip(boundary.mask())
            .map(|(&v, &m)| m && v.is_finite() && split.is_below(v))
            .collect(),
        Err(Error::Degenerate(reason)) => {
            log::info!("single plane scene: {reason}");
            boundary.mask().to_vec()
        }
        Err(e) => return Err(e),
    };
    connected_components(&planar, boundary.grid(), cfg.wrap, cfg.min_size)
}
