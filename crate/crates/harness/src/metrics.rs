//! Curve post-processing and reaction-speed scoring.

/// Running median with a centred window of `window` samples that shrinks
/// at the ends, so the output has the input's length.
pub fn median_filter(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let before = (window - 1) / 2;
    let after = window - 1 - before;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after + 1).min(values.len());
            median(&values[lo..hi])
        })
        .collect()
}

/// Least-squares slope of `y` against `x`; zero when `x` has no spread.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let sxy: f64 = (0..n).map(|i| (x[i] - mx) * (y[i] - my)).sum();
    let sxx: f64 = (0..n).map(|i| (x[i] - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryCriterion {
    /// Frames before the event averaged for the steady value.
    pub steady_window: usize,
    /// Relative band around the steady value.
    pub tolerance: f64,
    /// Consecutive in-band frames required.
    pub hold_frames: usize,
    pub censor_at: usize,
}

impl Default for RecoveryCriterion {
    fn default() -> Self {
        Self { steady_window: 10, tolerance: 0.15, hold_frames: 3, censor_at: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recovery {
    /// Frames from the event to the start of the first in-band run.
    pub frames: usize,
    /// No recovery within `censor_at` frames; `frames` then equals it.
    pub censored: bool,
}

impl Recovery {
    pub fn label(&self) -> String {
        if self.censored {
            format!("{}+", self.frames)
        } else {
            self.frames.to_string()
        }
    }
}

/// Frames needed after `event` for the mean intensity to return within
/// the tolerance band of its pre-event steady value and stay there for
/// `hold_frames` frames.
pub fn recovery_frames(intensity: &[f64], event: usize, c: &RecoveryCriterion) -> Recovery {
    let censored = Recovery { frames: c.censor_at, censored: true };
    if event == 0 || event > intensity.len() {
        return censored;
    }
    let lo = event.saturating_sub(c.steady_window.max(1));
    let steady = intensity[lo..event].iter().sum::<f64>() / (event - lo) as f64;
    let band = c.tolerance * steady;
    let ok = |v: f64| (v - steady).abs() <= band;
    let mut run = 0;
    for (k, &v) in intensity[event..].iter().enumerate() {
        if k >= c.censor_at + c.hold_frames {
            break;
        }
        run = if ok(v) { run + 1 } else { 0 };
        if run == c.hold_frames.max(1) {
            let start = k + 1 - run;
            return if start < c.censor_at { Recovery { frames: start, censored: false } } else { censored };
        }
    }
    censored
}
