//! Single-site heat-bath MCMC for the pinned interface measure.
//!
//! Each site of the box carries a height, and the reference measure at each
//! site is Lebesgue plus a point mass e^J at zero. The full conditional of
//! one site given its four neighbours is therefore a mixture: with
//! probability `pin_probability` the site pins to exactly zero, otherwise
//! its height is drawn from the continuous density proportional to
//! exp(-sum_j V(t - phi_j)). A sweep visits every free site in raster
//! order; replicas are independent chains seeded from a documented mix of
//! the base seed and the replica index.
//!
//! Pinned sites are tracked by an explicit indicator, never by testing
//! `height == 0.0`: under the continuous part that event has probability
//! zero and float equality would be meaningless.

use crate::lattice::{LatticeError, Region, Site};
use crate::numerics::{adaptive_simpson, minimize_convex, NumericsError};
use crate::potentials::CertifiedPotential;
use crate::seed::{derive_seed, tag};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::collections::BTreeSet;

/// Relative truncation error of the single-site quadrature window: the
/// integrand is sub-Gaussian by strong convexity, so a half-width of
/// sqrt(2 c_V TAIL_EXPONENT / 4) discards less than e^-TAIL_EXPONENT.
const TAIL_EXPONENT: f64 = 40.0;
const QUAD_TOL: f64 = 1e-11;
const MAX_REJECTION_ATTEMPTS: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum GibbsError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("rejection sampler failed to accept after {attempts} proposals")]
    RejectionOverrun { attempts: usize },
    #[error("invalid sampler parameters: {0}")]
    BadParams(String),
    #[error("frozen site {0} is outside the region")]
    FrozenOutsideRegion(Site),
}

/// Site-wise reference measure: pure Lebesgue, or Lebesgue plus an atom of
/// weight e^J at height zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pinning {
    Off,
    Delta(f64),
}

/// Heights over a region with zero boundary conditions outside it.
///
/// `frozen` marks sites conditioned to stay dry forever (they are pinned and
/// never updated); `pinned` marks the current dry set of the chain.
#[derive(Debug, Clone)]
pub struct FieldConfig {
    region: Region,
    heights: Vec<f64>,
    pinned: Vec<bool>,
    frozen: Vec<bool>,
}

impl FieldConfig {
    /// Flat start: all heights zero, nothing pinned.
    pub fn zeros(region: &Region) -> Self {
        let n = region.len();
        FieldConfig {
            region: region.clone(),
            heights: vec![0.0; n],
            pinned: vec![false; n],
            frozen: vec![false; n],
        }
    }

    /// Flat start with the sites of `dry` conditioned to height zero.
    pub fn with_frozen(region: &Region, dry: &BTreeSet<Site>) -> Result<Self, GibbsError> {
        let mut cfg = FieldConfig::zeros(region);
        for &s in dry {
            let Some(i) = region.index_of(s) else {
                return Err(GibbsError::FrozenOutsideRegion(s));
            };
            cfg.frozen[i] = true;
            cfg.pinned[i] = true;
        }
        Ok(cfg)
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn len(&self) -> usize {
        self.heights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heights.is_empty()
    }

    /// Height at a site; zero on pinned sites and everywhere outside the
    /// region (zero boundary condition).
    pub fn height(&self, s: Site) -> f64 {
        match self.region.index_of(s) {
            Some(i) => self.heights[i],
            None => 0.0,
        }
    }

    pub fn height_at(&self, idx: usize) -> f64 {
        self.heights[idx]
    }

    pub fn is_pinned(&self, s: Site) -> bool {
        self.region.index_of(s).map_or(false, |i| self.pinned[i])
    }

    pub fn is_pinned_at(&self, idx: usize) -> bool {
        self.pinned[idx]
    }

    pub fn is_frozen_at(&self, idx: usize) -> bool {
        self.frozen[idx]
    }

    pub fn pinned_count(&self) -> usize {
        self.pinned.iter().filter(|&&p| p).count()
    }

    /// The current dry set.
    pub fn dry_set(&self) -> BTreeSet<Site> {
        (0..self.len())
            .filter(|&i| self.pinned[i])
            .map(|i| self.region.site(i))
            .collect()
    }

    /// Heights of the four lattice neighbours, zero outside the region.
    pub fn neighbor_heights(&self, s: Site) -> [f64; 4] {
        let nb = s.neighbors();
        [
            self.height(nb[0]),
            self.height(nb[1]),
            self.height(nb[2]),
            self.height(nb[3]),
        ]
    }

    fn set_height(&mut self, idx: usize, h: f64) {
        debug_assert!(!self.frozen[idx]);
        self.heights[idx] = h;
        self.pinned[idx] = false;
    }

    /// Overwrite the height of a non-frozen site (diffusion updates).
    pub(crate) fn set_free_height(&mut self, idx: usize, h: f64) {
        self.set_height(idx, h);
    }

    fn pin(&mut self, idx: usize) {
        debug_assert!(!self.frozen[idx]);
        self.heights[idx] = 0.0;
        self.pinned[idx] = true;
    }
}

/// Single-site energy U(t) = sum_j V(t - h_j) and its first two derivatives.
struct SiteEnergy<'a> {
    pot: &'a CertifiedPotential,
    neighbors: [f64; 4],
}

impl SiteEnergy<'_> {
    fn u(&self, t: f64) -> f64 {
        self.neighbors.iter().map(|&h| self.pot.v(t - h)).sum()
    }

    fn du(&self, t: f64) -> f64 {
        self.neighbors.iter().map(|&h| self.pot.dv(t - h)).sum()
    }

    fn ddu(&self, t: f64) -> f64 {
        self.neighbors.iter().map(|&h| self.pot.ddv(t - h)).sum()
    }

    /// argmin of U. V' is strictly increasing with V'(0) = 0, so the
    /// minimizer lies between the smallest and largest neighbour height.
    fn minimum(&self) -> Result<f64, NumericsError> {
        let lo = self.neighbors.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
        let hi = self.neighbors.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
        minimize_convex(|t| self.du(t), |t| self.ddu(t), lo, hi)
    }

    /// log of W-hat = integral of exp(-(U(t) - U(t*))) dt, by adaptive
    /// quadrature on the strong-convexity window around t*.
    fn log_weight_integral(&self, t_star: f64) -> Result<f64, NumericsError> {
        let u_star = self.u(t_star);
        let half_width = (2.0 * self.pot.c_v() * TAIL_EXPONENT / 4.0).sqrt();
        let w = adaptive_simpson(
            &|t| (-(self.u(t) - u_star)).exp(),
            t_star - half_width,
            t_star + half_width,
            QUAD_TOL,
        )?;
        Ok(w.ln())
    }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Probability that a site pins to zero given its neighbour heights:
/// p = e^J w(0) / (e^J w(0) + W) with w(t) = exp(-sum_j V(t - h_j)) and
/// W the full integral of w, evaluated in the log domain. The quadratic
/// family short-circuits to the closed form; other families integrate.
pub fn pin_probability(
    neighbors: [f64; 4],
    j: f64,
    pot: &CertifiedPotential,
) -> Result<f64, GibbsError> {
    if let Some(kappa) = pot.quadratic_kappa() {
        // U(t) = 2 kappa (t - m)^2 + const with m the neighbour mean, so
        // U(0) - U(t*) = 2 kappa m^2 and W-hat = sqrt(pi / (2 kappa)).
        let m = neighbors.iter().sum::<f64>() / 4.0;
        let s = j - 2.0 * kappa * m * m - 0.5 * (std::f64::consts::PI / (2.0 * kappa)).ln();
        return Ok(sigmoid(s));
    }
    let energy = SiteEnergy { pot, neighbors };
    let t_star = energy.minimum()?;
    let log_w_hat = energy.log_weight_integral(t_star)?;
    // log W = log W-hat - U(t*); p = sigmoid(J - U(0) - log W)
    let s = j - (energy.u(0.0) - energy.u(t_star)) - log_w_hat;
    Ok(sigmoid(s))
}

/// Draw from the continuous single-site conditional, density proportional
/// to exp(-sum_j V(t - h_j)).
///
/// Strong convexity U'' >= 4/c_V makes the Gaussian centered at the
/// minimizer with variance c_V/4 a valid rejection envelope with acceptance
/// rate at least 1/c_V. The quadratic family uses its exact conditional
/// N(mean of neighbours, 1/(4 kappa)) directly.
pub fn sample_continuous<R: Rng + ?Sized>(
    neighbors: [f64; 4],
    pot: &CertifiedPotential,
    rng: &mut R,
) -> Result<f64, GibbsError> {
    let normal = StandardNormal;
    if let Some(kappa) = pot.quadratic_kappa() {
        let m = neighbors.iter().sum::<f64>() / 4.0;
        let z: f64 = normal.sample(rng);
        return Ok(m + z / (4.0 * kappa).sqrt());
    }
    let energy = SiteEnergy { pot, neighbors };
    let t_star = energy.minimum()?;
    let u_star = energy.u(t_star);
    let sigma = (pot.c_v() / 4.0).sqrt();
    for _ in 0..MAX_REJECTION_ATTEMPTS {
        let z: f64 = normal.sample(rng);
        let y = t_star + sigma * z;
        // log target/envelope ratio; <= 0 by U(y) - U(t*) >= 2 (y-t*)^2 / c_V
        let log_accept = -(energy.u(y) - u_star) + 2.0 * (y - t_star) * (y - t_star) / pot.c_v();
        let u: f64 = rng.random();
        if u.ln() < log_accept {
            return Ok(y);
        }
    }
    Err(GibbsError::RejectionOverrun {
        attempts: MAX_REJECTION_ATTEMPTS,
    })
}

/// One systematic-scan sweep: every non-frozen site is resampled from its
/// full conditional, in the region's raster order.
pub fn sweep<R: Rng + ?Sized>(
    cfg: &mut FieldConfig,
    pinning: Pinning,
    pot: &CertifiedPotential,
    rng: &mut R,
) -> Result<(), GibbsError> {
    for idx in 0..cfg.len() {
        if cfg.frozen[idx] {
            continue;
        }
        let nb = cfg.neighbor_heights(cfg.region.site(idx));
        match pinning {
            Pinning::Off => {
                let h = sample_continuous(nb, pot, rng)?;
                cfg.set_height(idx, h);
            }
            Pinning::Delta(j) => {
                let p = pin_probability(nb, j, pot)?;
                let u: f64 = rng.random();
                if u < p {
                    cfg.pin(idx);
                } else {
                    let h = sample_continuous(nb, pot, rng)?;
                    cfg.set_height(idx, h);
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerParams {
    pub sweeps: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub seed: u64,
    pub replicas: u32,
}

impl SamplerParams {
    pub fn validate(&self) -> Result<(), GibbsError> {
        if self.sweeps <= self.burn_in {
            return Err(GibbsError::BadParams(format!(
                "sweeps ({}) must exceed burn_in ({})",
                self.sweeps, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(GibbsError::BadParams("thin must be >= 1".into()));
        }
        if self.replicas == 0 {
            return Err(GibbsError::BadParams("replicas must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of snapshots one replica emits.
    pub fn snapshots_per_replica(&self) -> u64 {
        (self.sweeps - self.burn_in).div_ceil(self.thin)
    }
}

/// The RNG stream of one replica chain: a documented mix of the base seed,
/// the sampler tag, and the replica index.
pub fn replica_rng(base_seed: u64, replica: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base_seed, &[tag::GIBBS, replica as u64]))
}

/// Run one replica chain from a flat start, invoking `visit` with the sweep
/// index (1-based) for every retained snapshot: sweeps burn_in + 1,
/// burn_in + 1 + thin, ... up to `sweeps`.
pub fn run_chain<F>(
    region: &Region,
    pot: &CertifiedPotential,
    pinning: Pinning,
    frozen: &BTreeSet<Site>,
    params: &SamplerParams,
    replica: u32,
    mut visit: F,
) -> Result<(), GibbsError>
where
    F: FnMut(u64, &FieldConfig),
{
    params.validate()?;
    let mut rng = replica_rng(params.seed, replica);
    let mut cfg = FieldConfig::with_frozen(region, frozen)?;
    for s in 1..=params.sweeps {
        sweep(&mut cfg, pinning, pot, &mut rng)?;
        if s > params.burn_in && (s - params.burn_in - 1) % params.thin == 0 {
            visit(s, &cfg);
        }
    }
    Ok(())
}

/// Run every replica in parallel and return the per-replica results in
/// replica order. `per_replica` receives the replica index and must do its
/// own chain run (typically via `run_chain`) so that each replica's
/// randomness stays private to it.
pub fn run_replicas<T, F>(params: &SamplerParams, per_replica: F) -> Result<Vec<T>, GibbsError>
where
    T: Send,
    F: Fn(u32) -> Result<T, GibbsError> + Sync + Send,
{
    params.validate()?;
    (0..params.replicas)
        .into_par_iter()
        .map(per_replica)
        .collect()
}
