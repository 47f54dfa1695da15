//! Small statistics helpers.

/// Mean and batch-means standard error with `batches` contiguous batches.
pub fn batch_means(values: &[f64], batches: usize) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let b = batches.clamp(1, n);
    if b < 2 {
        return (mean, 0.0);
    }
    let size = n / b;
    let means: Vec<f64> = (0..b)
        .map(|k| {
            let lo = k * size;
            let hi = if k + 1 == b { n } else { lo + size };
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let mm = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|x| (x - mm).powi(2)).sum::<f64>() / (b - 1) as f64;
    (mean, (var / b as f64).sqrt())
}

/// Default number of batches.
pub const BATCHES: usize = 32;

pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2).zip(ys.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

/// Least-squares trend of a time series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrendFit {
    pub slope: f64,
    /// Newey-West (Bartlett kernel) standard error of the slope.
    pub stderr: f64,
    /// Plain least-squares standard error, ignoring autocorrelation.
    pub ols_stderr: f64,
    pub lags: usize,
}

/// Fits `y_t = a + b t` and returns `b` with an autocorrelation-robust
/// standard error.
pub fn trend(ys: &[f64]) -> TrendFit {
    let n = ys.len();
    assert!(n >= 3, "trend needs at least three points");
    let nf = n as f64;
    let tbar = (nf - 1.0) / 2.0;
    let ybar = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = (0..n).map(|t| (t as f64 - tbar).powi(2)).sum();
    let sxy: f64 = ys.iter().enumerate().map(|(t, y)| (t as f64 - tbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let resid: Vec<f64> = ys.iter().enumerate().map(|(t, y)| y - ybar - slope * (t as f64 - tbar)).collect();
    let s2 = resid.iter().map(|e| e * e).sum::<f64>() / (nf - 2.0);
    let ols_stderr = (s2 / sxx).sqrt();
    let lags = (4.0 * (nf / 100.0).powf(2.0 / 9.0)).floor().max(1.0) as usize;
    let lags = lags.max((nf.powf(1.0 / 3.0)).ceil() as usize).min(n - 1);
    let u: Vec<f64> = (0..n).map(|t| (t as f64 - tbar) * resid[t]).collect();
    let mut s = u.iter().map(|x| x * x).sum::<f64>();
    for l in 1..=lags {
        let w = 1.0 - l as f64 / (lags as f64 + 1.0);
        let g: f64 = (l..n).map(|t| u[t] * u[t - l]).sum();
        s += 2.0 * w * g;
    }
    let stderr = (s.max(0.0) * nf / (nf - 2.0)).sqrt() / sxx;
    TrendFit { slope, stderr, ols_stderr, lags }
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
