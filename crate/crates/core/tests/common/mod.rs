#![allow(dead_code)]

use panoplane::segmentation::LabelMap;

/// Pixels whose neighbourhood of angular radius `radius` pixel heights
/// carries a single label. Columns are widened by `1 / cos φ` so the
/// neighbourhood stays roughly round on the sphere.
pub fn off_edge(labels: &LabelMap, radius: usize) -> Vec<bool> {
    let g = labels.grid();
    let (w, h) = (g.width(), g.height());
    let l = labels.labels();
    (0..g.len())
        .map(|i| {
            let (row, col) = g.row_col(i);
            let lo = row.saturating_sub(radius);
            let hi = (row + radius).min(h - 1);
            (lo..=hi).all(|r| {
                let cos = g.latitude(r).cos().max(1e-6);
                let span = ((radius as f64 / cos).ceil() as usize).min(w / 2);
                (0..=2 * span).all(|k| {
                    let c = (col + w + k - span) % w;
                    l[r * w + c] == l[i]
                })
            })
        })
        .collect()
}

/// Breadth-first 4-connected flood fill labelling in raster order of first
/// pixel, with optional longitude wrap.
pub fn flood_fill(mask: &[bool], w: usize, h: usize, wrap: bool) -> Vec<u32> {
    let mut labels = vec![0u32; mask.len()];
    let mut next = 0;
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            let mut nb = Vec::with_capacity(4);
            if r > 0 {
                nb.push(i - w);
            }
            if r + 1 < h {
                nb.push(i + w);
            }
            if c > 0 {
                nb.push(i - 1);
            } else if wrap {
                nb.push(i + w - 1);
            }
            if c + 1 < w {
                nb.push(i + 1);
            } else if wrap {
                nb.push(i + 1 - w);
            }
            for j in nb {
                if mask[j] && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    labels
}

/// Intersection over union of two pixel sets given as label predicates.
pub fn jaccard(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(&x, &y)| x && y).count();
    let union = a.iter().zip(b).filter(|(&x, &y)| x || y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Best Jaccard index of every true label against any predicted segment.
pub fn best_jaccards(truth: &LabelMap, pred: &LabelMap) -> Vec<f64> {
    (1..=truth.count())
        .map(|t| {
            let a: Vec<bool> = truth.labels().iter().map(|&l| l == t).collect();
            (1..=pred.count())
                .map(|p| {
                    let b: Vec<bool> = pred.labels().iter().map(|&l| l == p).collect();
                    jaccard(&a, &b)
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

pub fn rms(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (s / a.len() as f64).sqrt()
}

pub fn angle_deg(a: &panoplane::Vec3, b: &panoplane::Vec3) -> f64 {
    a.normalize().dot(&b.normalize()).clamp(-1.0, 1.0).acos().to_degrees()
}
