//! Statistics over sample streams: covariance curves with batch-means
//! error bars, exponential-decay (mass) fits, and variance-growth scans
//! across box sizes.

use crate::gibbs::{run_chain, run_replicas, FieldConfig, GibbsError, Pinning, SamplerParams};
use crate::lattice::{LatticeError, Norm, Region, Site};
use crate::oracle::{GreenMatrix, OracleError};
use crate::potentials::CertifiedPotential;
use crate::stats::{wls_fit, BatchCov, StatsError};
use std::collections::BTreeSet;

/// Fewest retained samples for a covariance estimate with a usable error
/// bar.
pub const MIN_SAMPLES: u64 = 30;

#[derive(Debug, thiserror::Error)]
pub enum EstimatorError {
    #[error("need at least {need} retained samples, got {got}")]
    TooFewSamples { got: u64, need: u64 },
    #[error(
        "decay fit needs at least 3 usable points: {usable} usable of {in_range} in range \
         ({excluded} excluded as nonpositive or noise-floor)"
    )]
    TooFewPoints {
        usable: usize,
        in_range: usize,
        excluded: usize,
    },
    #[error("empty fit range [{lo}, {hi}]")]
    BadRange { lo: f64, hi: f64 },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Gibbs(#[from] GibbsError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Debug, Clone)]
pub struct CovPoint {
    pub i: Site,
    pub j: Site,
    /// exact norm distance between the pair, not a rounded shell
    pub distance: f64,
    pub cov: f64,
    pub se: f64,
    pub n: u64,
}

#[derive(Debug, Clone)]
pub struct CovCurve {
    pub norm: Norm,
    pub points: Vec<CovPoint>,
}

/// Pairs (origin, origin + d*direction) along the four axis and four
/// diagonal directions for every step d in 1..=max_step, keeping endpoints
/// at least `margin` sites away from the box boundary (margin defaults to
/// n/2). Deterministic order: by step, axes before
/// diagonals.
pub fn origin_pairs(
    n: i32,
    max_step: i32,
    margin: Option<i32>,
) -> Result<Vec<(Site, Site)>, EstimatorError> {
    if n < 1 {
        return Err(EstimatorError::Lattice(LatticeError::BadBoxRadius(n)));
    }
    let margin = margin.unwrap_or(n / 2);
    let keep = |s: Site| s.x.abs().max(s.y.abs()) <= n - margin;
    let origin = Site::new(0, 0);
    let mut pairs = Vec::new();
    for d in 1..=max_step {
        for (ux, uy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let j = Site::new(d * ux, d * uy);
            if keep(j) {
                pairs.push((origin, j));
            }
        }
        for (ux, uy) in [(1, 1), (-1, 1), (1, -1), (-1, -1)] {
            let j = Site::new(d * ux, d * uy);
            if keep(j) {
                pairs.push((origin, j));
            }
        }
    }
    Ok(pairs)
}

/// Streaming covariance estimator for a fixed list of site pairs, one
/// batch-means accumulator per pair. Replica accumulators merge batchwise.
#[derive(Debug, Clone)]
pub struct CovAccumulator {
    norm: Norm,
    pairs: Vec<(Site, Site)>,
    acc: Vec<BatchCov>,
    pushed: u64,
}

impl CovAccumulator {
    pub fn new(pairs: Vec<(Site, Site)>, norm: Norm, batch_size: u64) -> Self {
        let acc = vec![BatchCov::new(batch_size); pairs.len()];
        CovAccumulator {
            norm,
            pairs,
            acc,
            pushed: 0,
        }
    }

    pub fn pairs(&self) -> &[(Site, Site)] {
        &self.pairs
    }

    /// Record one sample, reading heights through an arbitrary accessor.
    pub fn push_with(&mut self, height: impl Fn(Site) -> f64) {
        for (pos, &(i, j)) in self.pairs.iter().enumerate() {
            self.acc[pos].push(height(i), height(j));
        }
        self.pushed += 1;
    }

    /// Record one field snapshot (sites outside the region read as zero).
    pub fn push(&mut self, cfg: &FieldConfig) {
        self.push_with(|s| cfg.height(s));
    }

    pub fn merge(&mut self, other: CovAccumulator) {
        assert_eq!(self.pairs, other.pairs, "accumulators track different pairs");
        for (mine, theirs) in self.acc.iter_mut().zip(other.acc) {
            mine.merge(theirs);
        }
        self.pushed += other.pushed;
    }

    pub fn samples(&self) -> u64 {
        self.pushed
    }

    pub fn finalize(self) -> Result<CovCurve, EstimatorError> {
        if self.pushed < MIN_SAMPLES {
            return Err(EstimatorError::TooFewSamples {
                got: self.pushed,
                need: MIN_SAMPLES,
            });
        }
        let mut points = Vec::with_capacity(self.pairs.len());
        for (pos, &(i, j)) in self.pairs.iter().enumerate() {
            let stats = self.acc[pos].finalize()?;
            points.push(CovPoint {
                i,
                j,
                distance: self.norm.dist(i, j),
                cov: stats.cov,
                se: stats.se,
                n: stats.n,
            });
        }
        Ok(CovCurve {
            norm: self.norm,
            points,
        })
    }
}

/// Covariance curve from parallel replica chains: every replica runs its
/// own chain and accumulator; batches merge in replica order.
#[allow(clippy::too_many_arguments)]
pub fn covariance_experiment(
    region: &Region,
    pot: &CertifiedPotential,
    pinning: Pinning,
    params: &SamplerParams,
    pairs: &[(Site, Site)],
    norm: Norm,
) -> Result<CovCurve, EstimatorError> {
    let batch = BatchCov::size_for(params.snapshots_per_replica());
    let accs = run_replicas(params, |rep| {
        let mut acc = CovAccumulator::new(pairs.to_vec(), norm, batch);
        run_chain(region, pot, pinning, &BTreeSet::new(), params, rep, |_, cfg| {
            acc.push(cfg);
        })?;
        Ok(acc)
    })?;
    let mut merged: Option<CovAccumulator> = None;
    for acc in accs {
        match merged.as_mut() {
            None => merged = Some(acc),
            Some(m) => m.merge(acc),
        }
    }
    merged.expect("at least one replica").finalize()
}

#[derive(Debug, Clone)]
pub struct MassFit {
    /// fitted decay rate of -log(cov) per unit distance
    pub mass: f64,
    pub intercept: f64,
    pub se: f64,
    /// 95% normal confidence interval on the rate
    pub ci95: (f64, f64),
    pub r2: f64,
    pub n_used: usize,
    /// in-range points dropped because their estimate was not positive or
    /// did not clear the noise floor (see [`SNR_FLOOR`])
    pub n_excluded: usize,
    /// a zero or negative rate means the curve does not decay
    pub decaying: bool,
}

/// Minimum signal-to-noise ratio (estimate / SE) a sampled point needs to
/// enter the log fit. A positive estimate that is statistically consistent
/// with zero carries no information about the decay rate: conditioned on
/// having survived the positivity cut, its log sits at the noise floor
/// -ln(se) instead of on the true line, which flattens the fitted slope
/// and wrecks R². Requiring cov > 2·se keeps only points whose sign is
/// established. Exact inputs (se = 0) are never censored.
pub const SNR_FLOOR: f64 = 2.0;

/// Weighted least squares of -log(estimate) against distance over
/// [d_min, d_max]. Nonpositive estimates cannot enter the log, and sampled
/// estimates below the noise floor (cov ≤ [`SNR_FLOOR`]·se) would bias the
/// slope; both are excluded but counted. Weights are inverse variances of
/// log(cov); exact inputs (se = 0) get unit weight.
pub fn fit_mass(curve: &CovCurve, d_min: f64, d_max: f64) -> Result<MassFit, EstimatorError> {
    if !(d_min <= d_max) {
        return Err(EstimatorError::BadRange { lo: d_min, hi: d_max });
    }
    let in_range: Vec<&CovPoint> = curve
        .points
        .iter()
        .filter(|p| p.distance >= d_min && p.distance <= d_max)
        .collect();
    let n_in_range = in_range.len();
    let (usable, excluded): (Vec<&CovPoint>, Vec<&CovPoint>) = in_range
        .into_iter()
        .partition(|p| p.cov > 0.0 && p.cov.is_finite() && (p.se == 0.0 || p.cov > SNR_FLOOR * p.se));
    if usable.len() < 3 {
        return Err(EstimatorError::TooFewPoints {
            usable: usable.len(),
            in_range: n_in_range,
            excluded: excluded.len(),
        });
    }
    let pts: Vec<(f64, f64, f64)> = usable
        .iter()
        .map(|p| {
            let w = if p.se > 0.0 {
                (p.cov / p.se).powi(2) // d(log cov) has sd se/cov
            } else {
                1.0
            };
            (p.distance, -p.cov.ln(), w)
        })
        .collect();
    let fit = wls_fit(&pts)?;
    Ok(MassFit {
        mass: fit.slope,
        intercept: fit.intercept,
        se: fit.se_slope,
        ci95: fit.ci95,
        r2: fit.r2,
        n_used: fit.n_used,
        n_excluded: excluded.len(),
        decaying: fit.slope > 0.0,
    })
}

#[derive(Debug, Clone)]
pub struct VarPoint {
    pub n: i32,
    pub var: f64,
    pub se: f64,
    pub n_samples: u64,
    /// true when the value came from the Green-function solver instead of
    /// sampling
    pub exact: bool,
}

/// Variance of the height at the origin across box sizes. Without pinning
/// a quadratic potential is solvable exactly, so those points come from
/// the Green function with zero error; everything else is sampled.
pub fn variance_growth(
    n_list: &[i32],
    pot: &CertifiedPotential,
    pinning: Pinning,
    params: &SamplerParams,
) -> Result<Vec<VarPoint>, EstimatorError> {
    let origin = Site::new(0, 0);
    let mut out = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let region = Region::lambda(n)?;
        let exact_kappa = match (pinning, pot.quadratic_kappa()) {
            (Pinning::Off, Some(kappa)) => Some(kappa),
            _ => None,
        };
        if let Some(kappa) = exact_kappa {
            let mut green = GreenMatrix::new(&region, &BTreeSet::new(), kappa)?;
            out.push(VarPoint {
                n,
                var: green.get(origin, origin),
                se: 0.0,
                n_samples: 0,
                exact: true,
            });
            continue;
        }
        let batch = BatchCov::size_for(params.snapshots_per_replica());
        let accs = run_replicas(params, |rep| {
            let mut acc = BatchCov::new(batch);
            run_chain(
                &region,
                pot,
                pinning,
                &BTreeSet::new(),
                params,
                rep,
                |_, cfg| {
                    let h = cfg.height(origin);
                    acc.push(h, h);
                },
            )?;
            Ok(acc)
        })?;
        let mut merged: Option<BatchCov> = None;
        for acc in accs {
            match merged.as_mut() {
                None => merged = Some(acc),
                Some(m) => m.merge(acc),
            }
        }
        let stats = merged.expect("at least one replica").finalize()?;
        out.push(VarPoint {
            n,
            var: stats.cov,
            se: stats.se,
            n_samples: stats.n,
            exact: false,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{enumerate_rho, exact_covariance};
    use crate::potentials::Potential;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    #[test]
    fn origin_pair_layout() {
        let pairs = origin_pairs(32, 16, None).unwrap();
        // margin 16 keeps endpoints with max coordinate 16: all 8
        // directions survive at every step
        assert_eq!(pairs.len(), 16 * 8);
        assert!(pairs.iter().all(|&(i, _)| i == Site::new(0, 0)));
        // margin kills steps beyond n - margin
        let pairs = origin_pairs(8, 8, Some(4)).unwrap();
        assert!(pairs
            .iter()
            .all(|&(_, j)| j.x.abs().max(j.y.abs()) <= 4));
        assert_eq!(pairs.len(), 4 * 8);
        assert!(origin_pairs(0, 3, None).is_err());
    }

    #[test]
    fn recovers_synthetic_two_by_two_covariance() {
        // x = z1, y = 0.6 x + 0.8 z2: cov(x,y) = 0.6, var(x) = 1,
        // var(y) = 0.36 + 0.64 = 1
        let a = Site::new(0, 0);
        let b = Site::new(1, 0);
        let pairs = vec![(a, b), (a, a), (b, b)];
        let mut acc = CovAccumulator::new(pairs, Norm::L2, 500);
        let mut rng = ChaCha8Rng::seed_from_u64(901);
        for _ in 0..20_000 {
            let z1 = normal(&mut rng);
            let z2 = normal(&mut rng);
            let y = 0.6 * z1 + 0.8 * z2;
            acc.push_with(|s| if s == a { z1 } else { y });
        }
        let curve = acc.finalize().unwrap();
        for (point, truth) in curve.points.iter().zip([0.6, 1.0, 1.0]) {
            assert!(point.se > 0.0);
            assert!(
                (point.cov - truth).abs() < 3.0 * point.se,
                "pair ({:?},{:?}): {} vs {truth} (se {})",
                point.i,
                point.j,
                point.cov,
                point.se
            );
        }
        // same-site covariance is a variance: nonnegative up to noise
        assert!(curve.points[1].cov > -3.0 * curve.points[1].se);
    }

    #[test]
    fn independent_coordinates_give_zero_covariance() {
        let a = Site::new(0, 0);
        let b = Site::new(3, 0);
        let mut acc = CovAccumulator::new(vec![(a, b)], Norm::L2, 400);
        let mut rng = ChaCha8Rng::seed_from_u64(902);
        for _ in 0..12_000 {
            let x = normal(&mut rng);
            let y = normal(&mut rng);
            acc.push_with(|s| if s == a { x } else { y });
        }
        let curve = acc.finalize().unwrap();
        let p = &curve.points[0];
        assert!(p.cov.abs() < 3.0 * p.se, "{} vs se {}", p.cov, p.se);
    }

    #[test]
    fn estimate_symmetric_under_pair_swap() {
        let a = Site::new(0, 0);
        let b = Site::new(2, 1);
        let mut acc = CovAccumulator::new(vec![(a, b), (b, a)], Norm::L2, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(903);
        for _ in 0..1000 {
            let x = normal(&mut rng);
            let y = 0.3 * x + normal(&mut rng);
            acc.push_with(|s| if s == a { x } else { y });
        }
        let curve = acc.finalize().unwrap();
        assert_eq!(curve.points[0].cov, curve.points[1].cov);
        assert_eq!(curve.points[0].se, curve.points[1].se);
        assert_eq!(curve.points[0].distance, curve.points[1].distance);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let a = Site::new(0, 0);
        let mut acc = CovAccumulator::new(vec![(a, a)], Norm::L2, 5);
        for _ in 0..10 {
            acc.push_with(|_| 1.0);
        }
        assert!(matches!(
            acc.finalize(),
            Err(EstimatorError::TooFewSamples { got: 10, need: 30 })
        ));
    }

    fn synthetic_curve(rate: f64, scale: f64, rel_se: f64) -> CovCurve {
        let points = (1..=8)
            .map(|d| {
                let cov = scale * (-rate * d as f64).exp();
                CovPoint {
                    i: Site::new(0, 0),
                    j: Site::new(d, 0),
                    distance: d as f64,
                    cov,
                    se: rel_se * cov,
                    n: 1000,
                }
            })
            .collect();
        CovCurve {
            norm: Norm::L2,
            points,
        }
    }

    #[test]
    fn exact_exponential_recovers_rate() {
        let curve = synthetic_curve(0.5, 1.0, 1e-4);
        let fit = fit_mass(&curve, 1.0, 8.0).unwrap();
        assert!((fit.mass - 0.5).abs() < 1e-12, "{}", fit.mass);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!(fit.decaying);
        assert_eq!(fit.n_used, 8);
        assert_eq!(fit.n_excluded, 0);
        assert!(fit.ci95.0 <= 0.5 && 0.5 <= fit.ci95.1);
    }

    #[test]
    fn constant_curve_is_flagged_non_decaying() {
        let curve = synthetic_curve(0.0, 2.0, 1e-3);
        let fit = fit_mass(&curve, 1.0, 8.0).unwrap();
        assert!(fit.mass.abs() < 1e-12);
        assert!(!fit.decaying);
    }

    #[test]
    fn nonpositive_points_are_excluded_and_counted() {
        let mut curve = synthetic_curve(1.0, 1.0, 1e-3);
        curve.points[6].cov = -1e-9;
        curve.points[7].cov = 0.0;
        let fit = fit_mass(&curve, 1.0, 8.0).unwrap();
        assert_eq!(fit.n_used, 6);
        assert_eq!(fit.n_excluded, 2);
        assert!((fit.mass - 1.0).abs() < 1e-10);
        // range filtering happens before exclusion counting
        let fit = fit_mass(&curve, 1.0, 4.0).unwrap();
        assert_eq!(fit.n_used, 4);
        assert_eq!(fit.n_excluded, 0);
        // all-nonpositive leaves nothing to fit
        for p in &mut curve.points {
            p.cov = -p.cov.abs();
        }
        assert!(matches!(
            fit_mass(&curve, 1.0, 8.0),
            Err(EstimatorError::TooFewPoints { usable: 0, .. })
        ));
        assert!(matches!(
            fit_mass(&curve, 5.0, 1.0),
            Err(EstimatorError::BadRange { .. })
        ));
    }

    #[test]
    fn noise_floor_points_are_censored() {
        // Tail points whose estimates are consistent with zero would pin
        // -log(cov) at the noise floor and drag the slope down; they must
        // be dropped even though they are positive.
        let mut curve = synthetic_curve(1.0, 1.0, 1e-3);
        for p in &mut curve.points[5..] {
            p.cov = 1e-6; // far below the true curve
            p.se = 1e-6; // SNR 1, below the floor of 2
        }
        let fit = fit_mass(&curve, 1.0, 8.0).unwrap();
        assert_eq!(fit.n_used, 5);
        assert_eq!(fit.n_excluded, 3);
        assert!((fit.mass - 1.0).abs() < 1e-10, "{}", fit.mass);
        // exact points (se = 0) are never censored, however small
        let mut exact = synthetic_curve(1.0, 1.0, 0.0);
        for p in &mut exact.points {
            p.se = 0.0;
        }
        let fit = fit_mass(&exact, 1.0, 8.0).unwrap();
        assert_eq!(fit.n_used, 8);
        assert_eq!(fit.n_excluded, 0);
    }

    #[test]
    fn fit_invariant_under_curve_rescaling() {
        let base = synthetic_curve(0.73, 1.0, 1e-3);
        let scaled = synthetic_curve(0.73, 7.3, 1e-3);
        let f1 = fit_mass(&base, 1.0, 8.0).unwrap();
        let f2 = fit_mass(&scaled, 1.0, 8.0).unwrap();
        assert!((f1.mass - f2.mass).abs() < 1e-12);
        assert!((f2.intercept - f1.intercept + 7.3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn batch_se_shrinks_with_sample_count() {
        let se_of = |samples: u64, seed: u64| {
            let a = Site::new(0, 0);
            let mut acc = CovAccumulator::new(vec![(a, a)], Norm::L2, samples / 30);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..samples {
                let x = normal(&mut rng);
                acc.push_with(|_| x);
            }
            acc.finalize().unwrap().points[0].se
        };
        // quadrupling the sample count should halve the error bar; average
        // a few seeds to tame the fluctuation of the SE estimate itself
        let mut ratios = 0.0;
        for seed in 0..4 {
            ratios += se_of(10_000, 904 + seed) / se_of(40_000, 914 + seed);
        }
        let mean_ratio = ratios / 4.0;
        assert!(
            (mean_ratio - 2.0).abs() < 0.4,
            "se ratio {mean_ratio} not ~2"
        );
    }

    #[test]
    fn variance_growth_exact_gaussian_points() {
        let pot = Potential::Gaussian { kappa: 1.0 }.certify().unwrap();
        let params = SamplerParams {
            sweeps: 10,
            burn_in: 1,
            thin: 1,
            seed: 0,
            replicas: 1,
        };
        let table = variance_growth(&[0, 1, 2, 4, 8], &pot, Pinning::Off, &params).unwrap();
        // single free site: conditional variance 1/(4 kappa)
        assert!((table[0].var - 0.25).abs() < 1e-12);
        assert!(table.iter().all(|p| p.exact && p.se == 0.0));
        // delocalization: variance grows with the box
        for w in table.windows(2) {
            assert!(w[1].var > w[0].var, "{} !> {}", w[1].var, w[0].var);
        }
    }

    #[test]
    fn variance_growth_sampled_matches_enumeration_with_pinning() {
        // 3x3 box with pinning at J = 0: the exact variance at the origin
        // comes from enumerating all 2^9 dry sets
        let pot = Potential::Gaussian { kappa: 1.0 }.certify().unwrap();
        let region = Region::lambda(1).unwrap();
        let table = enumerate_rho(&region, 0.0, 1.0, 16).unwrap();
        let origin = Site::new(0, 0);
        let truth = exact_covariance(&table, origin, origin).unwrap();
        let params = SamplerParams {
            sweeps: 6_500,
            burn_in: 500,
            thin: 2,
            seed: 42,
            replicas: 4,
        };
        let got = variance_growth(&[1], &pot, Pinning::Delta(0.0), &params).unwrap();
        let p = &got[0];
        assert!(!p.exact);
        assert_eq!(p.n_samples, 4 * 3000);
        assert!(
            (p.var - truth).abs() < 4.0 * p.se,
            "sampled {} vs exact {truth} (se {})",
            p.var,
            p.se
        );
    }

    #[test]
    fn covariance_experiment_matches_green_function_without_pinning() {
        let pot = Potential::Gaussian { kappa: 1.0 }.certify().unwrap();
        let region = Region::lambda(3).unwrap();
        let pairs = origin_pairs(3, 2, Some(1)).unwrap();
        let params = SamplerParams {
            sweeps: 5_500,
            burn_in: 500,
            thin: 1,
            seed: 7,
            replicas: 4,
        };
        let curve =
            covariance_experiment(&region, &pot, Pinning::Off, &params, &pairs, Norm::L2)
                .unwrap();
        let mut green = GreenMatrix::new(&region, &BTreeSet::new(), 1.0).unwrap();
        for p in &curve.points {
            let truth = green.get(p.i, p.j);
            assert!(p.se > 0.0);
            assert!(
                (p.cov - truth).abs() < 4.0 * p.se,
                "({:?},{:?}): {} vs {truth} (se {})",
                p.i,
                p.j,
                p.cov,
                p.se
            );
        }
    }
}
