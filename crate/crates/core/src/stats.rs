//! Statistical plumbing: batch-means errors for correlated MCMC streams,
//! weighted least squares with confidence intervals, and a Kolmogorov-
//! Smirnov distance for distributional sanity checks.
//!
//! All MCMC standard errors in this crate come from batch means with a
//! fixed target of 30 batches per chain; replicas contribute their batches
//! to a common pool, and point estimates always use every retained sample.

pub const TARGET_BATCHES: usize = 30;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    InsufficientSamples { need: usize, got: usize },
    #[error("need at least {need} usable points for a fit, got {got}")]
    InsufficientPoints { need: usize, got: usize },
}

#[derive(Debug, Clone, Copy, Default)]
struct BiSums {
    n: u64,
    sx: f64,
    sy: f64,
    sxy: f64,
}

impl BiSums {
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        self.sx += x;
        self.sy += y;
        self.sxy += x * y;
    }
}

/// Streaming covariance estimator for a pair series (x_t, y_t) with
/// batch-means error bars. `batch_size` must be fixed up front so replicas
/// pool compatible batches.
#[derive(Debug, Clone)]
pub struct BatchCov {
    batch_size: u64,
    done: Vec<BiSums>,
    cur: BiSums,
}

impl BatchCov {
    pub fn new(batch_size: u64) -> Self {
        assert!(batch_size >= 1);
        BatchCov {
            batch_size,
            done: Vec::new(),
            cur: BiSums::default(),
        }
    }

    /// Batch size putting ~TARGET_BATCHES batches into `planned` samples.
    pub fn size_for(planned: u64) -> u64 {
        (planned / TARGET_BATCHES as u64).max(1)
    }

    pub fn push(&mut self, x: f64, y: f64) {
        self.cur.push(x, y);
        if self.cur.n == self.batch_size {
            self.done.push(self.cur);
            self.cur = BiSums::default();
        }
    }

    pub fn merge(&mut self, other: BatchCov) {
        assert_eq!(self.batch_size, other.batch_size, "incompatible batch sizes");
        self.done.extend(other.done);
        // a partial trailing batch never crosses replicas
        if other.cur.n > 0 {
            self.done.push(other.cur);
        }
    }

    /// Point estimate Cov(x, y) from all samples and a batch-means SE.
    pub fn finalize(&self) -> Result<CovStats, StatsError> {
        let mut all = self.done.clone();
        if self.cur.n > 0 {
            all.push(self.cur);
        }
        let total: BiSums = all.iter().fold(BiSums::default(), |mut acc, b| {
            acc.n += b.n;
            acc.sx += b.sx;
            acc.sy += b.sy;
            acc.sxy += b.sxy;
            acc
        });
        if total.n < 2 || all.len() < 2 {
            return Err(StatsError::InsufficientSamples {
                need: 2,
                got: total.n as usize,
            });
        }
        let n = total.n as f64;
        let mx = total.sx / n;
        let my = total.sy / n;
        let cov = total.sxy / n - mx * my;
        // batch-level covariance estimates around the global means
        let batch_vals: Vec<f64> = all
            .iter()
            .filter(|b| b.n == self.batch_size.min(total.n))
            .map(|b| {
                let bn = b.n as f64;
                b.sxy / bn - mx * (b.sy / bn) - my * (b.sx / bn) + mx * my
            })
            .collect();
        let k = batch_vals.len() as f64;
        let bmean = batch_vals.iter().sum::<f64>() / k;
        let var_b = batch_vals.iter().map(|v| (v - bmean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
        let se = (var_b / k).sqrt();
        Ok(CovStats {
            cov,
            se,
            n: total.n,
            batches: batch_vals.len(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CovStats {
    pub cov: f64,
    pub se: f64,
    pub n: u64,
    pub batches: usize,
}

/// Streaming mean with batch-means SE (a degenerate BatchCov with y = x
/// would waste work; means come up everywhere, so keep a scalar version).
#[derive(Debug, Clone)]
pub struct BatchMean {
    inner: BatchCov,
}

impl BatchMean {
    pub fn new(batch_size: u64) -> Self {
        BatchMean {
            inner: BatchCov::new(batch_size),
        }
    }

    pub fn push(&mut self, x: f64) {
        self.inner.push(x, 0.0);
    }

    pub fn merge(&mut self, other: BatchMean) {
        self.inner.merge(other.inner);
    }

    pub fn finalize(&self) -> Result<MeanStats, StatsError> {
        let mut all = self.inner.done.clone();
        if self.inner.cur.n > 0 {
            all.push(self.inner.cur);
        }
        let (n, sx) = all.iter().fold((0u64, 0.0), |(n, s), b| (n + b.n, s + b.sx));
        if n < 2 || all.len() < 2 {
            return Err(StatsError::InsufficientSamples {
                need: 2,
                got: n as usize,
            });
        }
        let mean = sx / n as f64;
        let bm: Vec<f64> = all
            .iter()
            .filter(|b| b.n == self.inner.batch_size.min(n))
            .map(|b| b.sx / b.n as f64)
            .collect();
        let k = bm.len() as f64;
        let bmean = bm.iter().sum::<f64>() / k;
        let var_b = bm.iter().map(|v| (v - bmean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
        Ok(MeanStats {
            mean,
            se: (var_b / k).sqrt(),
            n,
            batches: bm.len(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MeanStats {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
    pub batches: usize,
}

/// Plain mean/SE for independent replicates (no batching).
pub fn iid_mean_se(xs: &[f64]) -> Result<MeanStats, StatsError> {
    if xs.len() < 2 {
        return Err(StatsError::InsufficientSamples {
            need: 2,
            got: xs.len(),
        });
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MeanStats {
        mean,
        se: (var / n).sqrt(),
        n: xs.len() as u64,
        batches: xs.len(),
    })
}

/// Weighted least-squares line fit y ~ intercept + slope x.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub se_slope: f64,
    /// 95% normal confidence interval on the slope.
    pub ci95: (f64, f64),
    pub r2: f64,
    pub n_used: usize,
}

/// Fit with per-point weights (typically 1/variance). Needs >= 3 points.
/// The slope variance is scaled by reduced chi-square, so weights only need
/// to be proportional to inverse variances.
pub fn wls_fit(points: &[(f64, f64, f64)]) -> Result<LineFit, StatsError> {
    let pts: Vec<_> = points
        .iter()
        .filter(|&&(x, y, w)| x.is_finite() && y.is_finite() && w > 0.0 && w.is_finite())
        .copied()
        .collect();
    if pts.len() < 3 {
        return Err(StatsError::InsufficientPoints {
            need: 3,
            got: pts.len(),
        });
    }
    let (mut sw, mut swx, mut swy, mut swxx, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y, w) in &pts {
        sw += w;
        swx += w * x;
        swy += w * y;
        swxx += w * x * x;
        swxy += w * x * y;
    }
    let det = sw * swxx - swx * swx;
    let slope = (sw * swxy - swx * swy) / det;
    let intercept = (swy - slope * swx) / sw;
    let mut chi2 = 0.0;
    let mut ss_tot = 0.0;
    let ybar = swy / sw;
    for &(x, y, w) in &pts {
        let r = y - intercept - slope * x;
        chi2 += w * r * r;
        ss_tot += w * (y - ybar) * (y - ybar);
    }
    let dof = (pts.len() - 2) as f64;
    let chi2_red = chi2 / dof;
    let se_slope = (chi2_red * sw / det).max(0.0).sqrt();
    let r2 = if ss_tot > 0.0 { 1.0 - chi2 / ss_tot } else { 1.0 };
    Ok(LineFit {
        slope,
        intercept,
        se_slope,
        ci95: (slope - 1.96 * se_slope, slope + 1.96 * se_slope),
        r2,
        n_used: pts.len(),
    })
}

/// Unweighted slope/intercept (exact inputs, no error model).
pub fn ols_line(points: &[(f64, f64)]) -> Result<(f64, f64), StatsError> {
    let pts: Vec<_> = points.iter().map(|&(x, y)| (x, y, 1.0)).collect();
    wls_fit(&pts).map(|f| (f.slope, f.intercept))
}

/// Kolmogorov-Smirnov distance between samples and a reference CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((((i + 1) as f64) / n - f).abs());
        d = d.max((f - (i as f64) / n).abs());
    }
    d
}

/// DKW-style rejection threshold: P(D_n > eps) <= 2 exp(-2 n eps^2), so this
/// is a level-alpha critical value (slightly conservative).
pub fn ks_threshold(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

/// Standard normal CDF via the Abramowitz-Stegun 7.1.26 erf approximation
/// (absolute error < 1.5e-7, ample for KS-style checks).
pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / (sd * std::f64::consts::SQRT_2);
    0.5 * (1.0 + erf(z))
}

fn erf(x: f64) -> f64 {
    let s = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    s * (1.0 - poly * (-x * x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};

    #[test]
    fn batch_cov_matches_direct_computation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..900).map(|_| rng.random::<f64>()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + rng.random::<f64>()).collect();
        let mut acc = BatchCov::new(30);
        for (&x, &y) in xs.iter().zip(&ys) {
            acc.push(x, y);
        }
        let st = acc.finalize().unwrap();
        let mx = xs.iter().sum::<f64>() / 900.0;
        let my = ys.iter().sum::<f64>() / 900.0;
        let direct = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / 900.0;
        assert!((st.cov - direct).abs() < 1e-12);
        assert_eq!(st.batches, 30);
        assert!(st.se > 0.0);
    }

    #[test]
    fn batch_se_shrinks_like_sqrt_n() {
        // iid stream: SE(9n) should be ~ SE(n)/3
        let gen = |len: u64, seed: u64| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut acc = BatchMean::new(BatchCov::size_for(len));
            for _ in 0..len {
                acc.push(rng.random::<f64>());
            }
            acc.finalize().unwrap().se
        };
        let se_small = gen(3_000, 7);
        let se_big = gen(27_000, 8);
        let ratio = se_small / se_big;
        assert!(ratio > 1.8 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn replica_merge_pools_batches() {
        let mut a = BatchMean::new(10);
        let mut b = BatchMean::new(10);
        for i in 0..100 {
            a.push(i as f64);
            b.push((i * 2) as f64);
        }
        let mut merged = a.clone();
        merged.merge(b);
        let st = merged.finalize().unwrap();
        assert_eq!(st.n, 200);
        assert_eq!(st.batches, 20);
        let expect = (0..100).map(|i| (i + 2 * i) as f64).sum::<f64>() / 200.0;
        assert!((st.mean - expect).abs() < 1e-12);
    }

    #[test]
    fn wls_recovers_exact_line() {
        let pts: Vec<_> = (0..10)
            .map(|i| (i as f64, 3.0 - 0.5 * i as f64, 1.0))
            .collect();
        let fit = wls_fit(&pts).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 3.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!(fit.se_slope < 1e-9);
    }

    #[test]
    fn wls_weights_matter() {
        // two clusters; the heavy-weight cluster dictates the line
        let pts = vec![
            (0.0, 0.0, 1e6),
            (1.0, 1.0, 1e6),
            (2.0, 2.0, 1e6),
            (3.0, 10.0, 1e-6),
        ];
        let fit = wls_fit(&pts).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-3);
    }

    #[test]
    fn wls_needs_three_points() {
        assert_eq!(
            wls_fit(&[(0.0, 0.0, 1.0), (1.0, 1.0, 1.0)]).unwrap_err(),
            StatsError::InsufficientPoints { need: 3, got: 2 }
        );
    }

    #[test]
    fn ks_accepts_uniform_rejects_shifted() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut xs: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let d = ks_distance(&mut xs, |x| x.clamp(0.0, 1.0));
        assert!(d < ks_threshold(5000, 1e-3), "d = {d}");
        let mut ys: Vec<f64> = xs.iter().map(|x| x * 0.8).collect();
        let d2 = ks_distance(&mut ys, |x| x.clamp(0.0, 1.0));
        assert!(d2 > ks_threshold(5000, 1e-3));
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert!((normal_cdf(0.0, 0.0, 1.0) - 0.5).abs() < 1e-7);
        assert!((normal_cdf(1.96, 0.0, 1.0) - 0.975_002_1).abs() < 1e-6);
        assert!((normal_cdf(-1.0, 0.0, 1.0) - 0.158_655_25).abs() < 1e-6);
        assert!((normal_cdf(3.0, 1.0, 2.0) - normal_cdf(1.0, 0.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn normal_cdf_matches_statrs() {
        use statrs::distribution::ContinuousCDF;
        let n = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
        for i in -40..=40 {
            let x = i as f64 * 0.1;
            assert!(
                (normal_cdf(x, 0.0, 1.0) - n.cdf(x)).abs() < 1.5e-7,
                "x = {x}"
            );
        }
    }
}
