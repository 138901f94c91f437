//! Histograms and mode detection for delay distributions.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// Left edge of the first bin.
    pub lo: f64,
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Bins aligned to multiples of `bin_width`; `ceil(range / bin_width)`
    /// bins cover the data, plus one when the maximum sits on an edge.
    pub fn new(values: &[f64], bin_width: f64) -> Option<Self> {
        assert!(bin_width > 0.0, "bin width must be positive");
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !min.is_finite() || !max.is_finite() {
            return None;
        }
        let lo = (min / bin_width).floor() * bin_width;
        let mut n = ((max - lo) / bin_width).ceil() as usize;
        if lo + n as f64 * bin_width <= max {
            n += 1;
        }
        let mut counts = vec![0; n.max(1)];
        for &v in values {
            let k = (((v - lo) / bin_width).floor() as usize).min(counts.len() - 1);
            counts[k] += 1;
        }
        Some(Self { lo, bin_width, counts })
    }

    pub fn center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.bin_width
    }

    /// Bin with the highest raw count; lowest index on ties.
    pub fn argmax(&self) -> usize {
        let max = *self.counts.iter().max().unwrap_or(&0);
        self.counts.iter().position(|&c| c == max).unwrap_or(0)
    }
}

/// Smooth with the (1, 2, 3, 2, 1) / 9 kernel, treating the outside as zero.
pub fn smooth(counts: &[usize]) -> Vec<f64> {
    const K: [f64; 5] = [1.0, 2.0, 3.0, 2.0, 1.0];
    let n = counts.len() as isize;
    (0..n)
        .map(|i| {
            K.iter()
                .enumerate()
                .filter_map(|(j, w)| {
                    let k = i + j as isize - 2;
                    (0..n).contains(&k).then(|| w * counts[k as usize] as f64)
                })
                .sum::<f64>()
                / 9.0
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mode {
    pub index: usize,
    pub height: f64,
    pub prominence: f64,
}

/// Lowest point walking away from a peak of height `h` until a higher
/// sample; the outside of the array counts as zero.
fn side_base<'a>(walk: impl Iterator<Item = &'a f64>, h: f64) -> f64 {
    let mut min = h;
    for &y in walk {
        if y > h {
            return min;
        }
        min = min.min(y);
    }
    min.min(0.0)
}

/// Local maxima of `ys` with their topographic prominence.
pub fn peaks(ys: &[f64]) -> Vec<Mode> {
    let n = ys.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        // Plateaus count once, at their left end.
        let mut j = i;
        while j + 1 < n && ys[j + 1] == ys[i] {
            j += 1;
        }
        let h = ys[i];
        let is_peak = (i == 0 || ys[i - 1] < h) && (j + 1 == n || ys[j + 1] < h) && h > 0.0;
        if is_peak {
            let left = side_base(ys[..i].iter().rev(), h);
            let right = side_base(ys[j + 1..].iter(), h);
            out.push(Mode {
                index: i,
                height: h,
                prominence: h - left.max(right),
            });
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeReport {
    pub histogram: Histogram,
    pub smoothed: Vec<f64>,
    pub modes: Vec<Mode>,
}

impl ModeReport {
    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// Center of the highest smoothed mode.
    pub fn main_mode(&self) -> Option<f64> {
        self.modes
            .iter()
            .max_by(|a, b| a.height.total_cmp(&b.height).then(b.index.cmp(&a.index)))
            .map(|m| self.histogram.center(m.index))
    }
}

/// Modes of a sample: smoothed histogram peaks whose prominence is at least
/// `rel_prominence` times the highest smoothed peak.
pub fn detect_modes(values: &[f64], bin_width: f64, rel_prominence: f64) -> Option<ModeReport> {
    let histogram = Histogram::new(values, bin_width)?;
    let smoothed = smooth(&histogram.counts);
    let all = peaks(&smoothed);
    let top = all.iter().map(|m| m.height).fold(0.0, f64::max);
    let modes = all
        .into_iter()
        .filter(|m| m.prominence >= rel_prominence * top)
        .collect();
    Some(ModeReport {
        histogram,
        smoothed,
        modes,
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
