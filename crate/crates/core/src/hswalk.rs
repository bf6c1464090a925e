//! Random-walk representation of interface covariances.
//!
//! The covariance of the field killed on a dry set A equals the expected
//! occupation time of a continuous-time nearest-neighbour walk whose jump
//! rate across an edge at time t is the potential's curvature evaluated on
//! the current height gradient, with the walk killed on hitting A or the
//! region's exterior. For the quadratic family the rates are constant and
//! the identity reduces to the Green function exactly; for other families
//! the rate field is driven by a diffusion of the heights.
//!
//! Walks are generated by uniformization: a Poisson clock of rate 4 c_V
//! dominates every exit rate, and at each tick the walk jumps along edge e
//! with probability rate(e)/(4 c_V), else stays. The field diffusion is a
//! Metropolis-adjusted Langevin chain (exact invariance for the killed
//! measure) advanced on a fixed step dt; rates are read piecewise-constant
//! between steps.

use crate::gibbs::{self, FieldConfig, GibbsError, Pinning};
use crate::lattice::{block_of, LatticeError, Region, Site};
use crate::potentials::CertifiedPotential;
use crate::seed::{derive_seed, tag};
use crate::stats::iid_mean_se;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use std::collections::BTreeSet;

pub const DEFAULT_HORIZON: f64 = 1e4;
pub const DEFAULT_DT: f64 = 0.01;
/// Censored-mass fraction above which an estimate is flagged.
pub const CENSOR_WARN_FRACTION: f64 = 0.10;

#[derive(Debug, thiserror::Error)]
pub enum HsError {
    #[error("rate {rate} outside the certified band [{lo}, {hi}]")]
    RateOutOfBounds { rate: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Gibbs(#[from] GibbsError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("invalid walk parameters: {0}")]
    BadParams(String),
    #[error("start site {0} is killed or outside the region")]
    DeadStart(Site),
}

/// Time-dependent jump rates a(i, j; t). Implementations advance their
/// internal clock with `advance_to` (monotone calls) and report rates at
/// the current clock; every rate must stay within [1/c_V, c_V].
pub trait RateField {
    fn c_v(&self) -> f64;
    /// Jump rate along the directed edge i -> j at the current clock time.
    fn rate(&self, i: Site, j: Site) -> f64;
    /// Advance the environment clock to absolute time `t`.
    fn advance_to(&mut self, _t: f64) {}
}

/// Constant rates — the quadratic family, where curvature does not depend
/// on the field at all.
#[derive(Debug, Clone, Copy)]
pub struct ConstantRates {
    rate: f64,
    c_v: f64,
}

impl ConstantRates {
    pub fn new(rate: f64, c_v: f64) -> Self {
        ConstantRates { rate, c_v }
    }
}

impl RateField for ConstantRates {
    fn c_v(&self) -> f64 {
        self.c_v
    }

    fn rate(&self, _i: Site, _j: Site) -> f64 {
        self.rate
    }
}

/// Frozen random rates, one value per undirected edge, uniform on
/// [1/c_V, c_V]. Rates are hashed from the edge coordinates, so the field
/// is deterministic in the seed and independent of query order.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticRates {
    seed: u64,
    c_v: f64,
}

impl SyntheticRates {
    pub fn new(seed: u64, c_v: f64) -> Self {
        assert!(c_v >= 1.0 && c_v.is_finite());
        SyntheticRates { seed, c_v }
    }
}

impl RateField for SyntheticRates {
    fn c_v(&self) -> f64 {
        self.c_v
    }

    fn rate(&self, i: Site, j: Site) -> f64 {
        let (p, q) = if i <= j { (i, j) } else { (j, i) };
        let h = derive_seed(
            self.seed,
            &[
                tag::SYNTHETIC_RATES,
                p.x as i64 as u64,
                p.y as i64 as u64,
                q.x as i64 as u64,
                q.y as i64 as u64,
            ],
        );
        let u = (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let lo = 1.0 / self.c_v;
        lo + u * (self.c_v - lo)
    }
}

/// Rates read off a single frozen field snapshot.
#[derive(Debug, Clone)]
pub struct FrozenFieldRates {
    field: FieldConfig,
    pot: CertifiedPotential,
}

impl FrozenFieldRates {
    pub fn new(field: FieldConfig, pot: CertifiedPotential) -> Self {
        FrozenFieldRates { field, pot }
    }
}

impl RateField for FrozenFieldRates {
    fn c_v(&self) -> f64 {
        self.pot.c_v()
    }

    fn rate(&self, i: Site, j: Site) -> f64 {
        self.pot.ddv(self.field.height(i) - self.field.height(j))
    }
}

/// Rates driven by a live height diffusion with the killed measure
/// invariant. Non-quadratic families use Metropolis-adjusted Langevin
/// steps; the quadratic family gets an exact heat-bath sweep instead.
pub struct LiveDiffusion {
    field: FieldConfig,
    pot: CertifiedPotential,
    dt: f64,
    clock: f64,
    rng: ChaCha8Rng,
    proposed: u64,
    accepted: u64,
    heatbath: bool,
    // scratch buffers for the Langevin proposal
    grad: Vec<f64>,
    proposal: Vec<f64>,
    grad_prop: Vec<f64>,
    noise: Vec<f64>,
}

impl LiveDiffusion {
    pub fn new(field: FieldConfig, pot: CertifiedPotential, dt: f64, seed: u64) -> Self {
        assert!(dt > 0.0);
        let n = field.len();
        let heatbath = pot.quadratic_kappa().is_some();
        LiveDiffusion {
            field,
            pot,
            dt,
            clock: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            proposed: 0,
            accepted: 0,
            heatbath,
            grad: vec![0.0; n],
            proposal: vec![0.0; n],
            grad_prop: vec![0.0; n],
            noise: vec![0.0; n],
        }
    }

    pub fn field(&self) -> &FieldConfig {
        &self.field
    }

    /// Fraction of Langevin proposals accepted so far (1.0 when the exact
    /// heat-bath path is in use).
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            1.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Total energy of heights `h` indexed like the region, counting every
    /// edge with at least one endpoint inside once.
    fn energy(&self, h: &[f64]) -> f64 {
        let region = self.field.region();
        let mut total = 0.0;
        for idx in 0..region.len() {
            let s = region.site(idx);
            for nb in s.neighbors() {
                match region.index_of(nb) {
                    Some(jdx) if jdx < idx => {}
                    Some(jdx) => total += self.pot.v(h[idx] - h[jdx]),
                    None => total += self.pot.v(h[idx]),
                }
            }
        }
        total
    }

    fn gradient(&self, h: &[f64], out: &mut [f64]) {
        let region = self.field.region();
        for idx in 0..region.len() {
            if self.field.is_frozen_at(idx) {
                out[idx] = 0.0;
                continue;
            }
            let s = region.site(idx);
            let mut g = 0.0;
            for nb in s.neighbors() {
                let hn = region.index_of(nb).map_or(0.0, |j| h[j]);
                g += self.pot.dv(h[idx] - hn);
            }
            out[idx] = g;
        }
    }

    /// One diffusion update.
    pub fn step(&mut self) -> Result<(), HsError> {
        if self.heatbath {
            gibbs::sweep(&mut self.field, Pinning::Off, &self.pot, &mut self.rng)?;
            return Ok(());
        }
        let n = self.field.len();
        let h: Vec<f64> = (0..n).map(|i| self.field.height_at(i)).collect();
        let mut grad = std::mem::take(&mut self.grad);
        let mut proposal = std::mem::take(&mut self.proposal);
        let mut grad_prop = std::mem::take(&mut self.grad_prop);
        let mut noise = std::mem::take(&mut self.noise);

        self.gradient(&h, &mut grad);
        let normal = StandardNormal;
        let mut noise_sq = 0.0;
        for i in 0..n {
            if self.field.is_frozen_at(i) {
                proposal[i] = 0.0;
                noise[i] = 0.0;
                continue;
            }
            let xi: f64 = normal.sample(&mut self.rng);
            noise[i] = xi;
            noise_sq += xi * xi;
            proposal[i] = h[i] - self.dt * grad[i] + (2.0 * self.dt).sqrt() * xi;
        }
        self.gradient(&proposal, &mut grad_prop);
        // reverse-move residual: || h - proposal + dt grad(proposal) ||^2
        let mut rev_sq = 0.0;
        for i in 0..n {
            if self.field.is_frozen_at(i) {
                continue;
            }
            let r = h[i] - proposal[i] + self.dt * grad_prop[i];
            rev_sq += r * r;
        }
        let delta_h = self.energy(&proposal) - self.energy(&h);
        let log_alpha = -delta_h + (2.0 * self.dt * noise_sq - rev_sq) / (4.0 * self.dt);
        self.proposed += 1;
        let u: f64 = self.rng.random();
        if u.ln() < log_alpha {
            self.accepted += 1;
            for i in 0..n {
                if !self.field.is_frozen_at(i) {
                    self.field.set_free_height(i, proposal[i]);
                }
            }
        }
        self.grad = grad;
        self.proposal = proposal;
        self.grad_prop = grad_prop;
        self.noise = noise;
        Ok(())
    }

    fn try_advance(&mut self, t: f64) -> Result<(), HsError> {
        while self.clock + self.dt <= t {
            self.step()?;
            self.clock += self.dt;
        }
        Ok(())
    }
}

impl RateField for LiveDiffusion {
    fn c_v(&self) -> f64 {
        self.pot.c_v()
    }

    fn rate(&self, i: Site, j: Site) -> f64 {
        self.pot.ddv(self.field.height(i) - self.field.height(j))
    }

    fn advance_to(&mut self, t: f64) {
        // the certified curvature band keeps the walk driver's rate checks
        // authoritative; diffusion steps themselves cannot fail off the
        // heat-bath path, and the heat-bath path is quadratic (no rejection)
        self.try_advance(t).expect("diffusion step failed");
    }
}

/// A realized walk: the visited sites with their entry times, and how the
/// path ended.
#[derive(Debug, Clone)]
pub struct WalkTrajectory {
    /// (entry time, site), starting with (0, start)
    pub jumps: Vec<(f64, Site)>,
    /// killing time, or the censor horizon
    pub death_time: f64,
    /// true if the walk was killed (last visited site is in the killed set),
    /// false if censored at the horizon
    pub killed: bool,
}

impl WalkTrajectory {
    /// Total time the walk spent at `site`.
    pub fn occupation_of(&self, site: Site) -> f64 {
        let mut total = 0.0;
        for (k, &(t, s)) in self.jumps.iter().enumerate() {
            if s != site {
                continue;
            }
            let end = self
                .jumps
                .get(k + 1)
                .map_or(self.death_time, |&(t_next, _)| t_next);
            total += end - t;
        }
        total
    }
}

fn checked_rate<R: RateField>(rates: &R, i: Site, j: Site) -> Result<f64, HsError> {
    let c_v = rates.c_v();
    let r = rates.rate(i, j);
    let (lo, hi) = (1.0 / c_v, c_v);
    if r < lo - 1e-12 || r > hi + 1e-12 || !r.is_finite() {
        return Err(HsError::RateOutOfBounds { rate: r, lo, hi });
    }
    Ok(r)
}

/// Run one killed walk from `start` until it enters the killed set or the
/// horizon elapses. `killed` must be true outside the region of interest.
pub fn run_walk<R, K>(
    start: Site,
    killed: &K,
    rates: &mut R,
    horizon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<WalkTrajectory, HsError>
where
    R: RateField,
    K: Fn(Site) -> bool + ?Sized,
{
    if killed(start) {
        return Err(HsError::DeadStart(start));
    }
    if !(horizon > 0.0) {
        return Err(HsError::BadParams(format!("horizon must be > 0, got {horizon}")));
    }
    let big_rate = 4.0 * rates.c_v();
    let clock = Exp::new(big_rate).expect("positive rate");
    let mut t = 0.0;
    let mut x = start;
    let mut jumps = vec![(0.0, start)];
    loop {
        t += clock.sample(rng);
        if t >= horizon {
            return Ok(WalkTrajectory {
                jumps,
                death_time: horizon,
                killed: false,
            });
        }
        rates.advance_to(t);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut target = None;
        for nb in x.neighbors() {
            acc += checked_rate(rates, x, nb)? / big_rate;
            if u < acc {
                target = Some(nb);
                break;
            }
        }
        let Some(nb) = target else {
            continue; // phantom tick: stay put
        };
        jumps.push((t, nb));
        if killed(nb) {
            return Ok(WalkTrajectory {
                jumps,
                death_time: t,
                killed: true,
            });
        }
        x = nb;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OccupationParams {
    pub replicas: u32,
    pub seed: u64,
    pub horizon: f64,
    /// heat-bath pre-run length used to start the diffusion near
    /// stationarity (ignored by the constant-rate fast path)
    pub pre_sweeps: u64,
    pub dt: f64,
    /// keep the first this-many replica trajectories in the output
    pub keep_trajectories: usize,
}

impl Default for OccupationParams {
    fn default() -> Self {
        OccupationParams {
            replicas: 10_000,
            seed: 0,
            horizon: DEFAULT_HORIZON,
            pre_sweeps: 100,
            dt: DEFAULT_DT,
            keep_trajectories: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OccupationEstimate {
    pub mean: f64,
    pub se: f64,
    pub replicas: u32,
    pub censored_fraction: f64,
    /// set when more than CENSOR_WARN_FRACTION of the replicas hit the horizon
    pub censor_warning: bool,
    /// pre-run length actually used (0 on the constant-rate path)
    pub pre_sweeps: u64,
    pub trajectories: Vec<(u32, WalkTrajectory)>,
}

/// Estimate the expected occupation time of `j` by a walk started at `i`
/// and killed on `a` or outside the region — the walk representation of
/// the covariance of heights at i and j under the measure killed on `a`.
///
/// Each replica is independent: the height field starts from a heat-bath
/// pre-run of the killed measure (pinning disabled off `a`), then the walk
/// runs against the live diffusion. The quadratic family has constant
/// rates, so both the pre-run and the diffusion are skipped there.
pub fn occupation_time(
    region: &Region,
    a: &BTreeSet<Site>,
    i: Site,
    j: Site,
    pot: &CertifiedPotential,
    params: &OccupationParams,
) -> Result<OccupationEstimate, HsError> {
    if params.replicas == 0 {
        return Err(HsError::BadParams("replicas must be >= 1".into()));
    }
    let killed = |s: Site| !region.contains(s) || a.contains(&s);
    if killed(i) {
        return Err(HsError::DeadStart(i));
    }
    if killed(j) {
        return Err(HsError::DeadStart(j));
    }
    let quadratic = pot.quadratic_kappa();
    let pre_sweeps = if quadratic.is_some() { 0 } else { params.pre_sweeps };

    struct ReplicaOut {
        occupation: f64,
        censored: bool,
        trajectory: Option<WalkTrajectory>,
    }

    let runs: Vec<ReplicaOut> = (0..params.replicas)
        .into_par_iter()
        .map(|rep| -> Result<ReplicaOut, HsError> {
            let mut walk_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(params.seed, &[tag::HS_WALK, rep as u64]));
            let traj = if let Some(kappa) = quadratic {
                let mut rates = ConstantRates::new(kappa, pot.c_v());
                run_walk(i, &killed, &mut rates, params.horizon, &mut walk_rng)?
            } else {
                let mut field = FieldConfig::with_frozen(region, a)?;
                let mut pre_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    params.seed,
                    &[tag::GIBBS, rep as u64],
                ));
                for _ in 0..params.pre_sweeps {
                    gibbs::sweep(&mut field, Pinning::Off, pot, &mut pre_rng)?;
                }
                let diff_seed = derive_seed(params.seed, &[tag::DIFFUSION_INIT, rep as u64]);
                let mut rates = LiveDiffusion::new(field, pot.clone(), params.dt, diff_seed);
                run_walk(i, &killed, &mut rates, params.horizon, &mut walk_rng)?
            };
            let occupation = traj.occupation_of(j);
            let censored = !traj.killed;
            let trajectory = ((rep as usize) < params.keep_trajectories).then_some(traj);
            Ok(ReplicaOut {
                occupation,
                censored,
                trajectory,
            })
        })
        .collect::<Result<_, _>>()?;

    let occupations: Vec<f64> = runs.iter().map(|r| r.occupation).collect();
    let stats = iid_mean_se(&occupations).map_err(|e| HsError::BadParams(e.to_string()))?;
    let censored = runs.iter().filter(|r| r.censored).count();
    let censored_fraction = censored as f64 / params.replicas as f64;
    let trajectories = runs
        .into_iter()
        .enumerate()
        .filter_map(|(rep, r)| r.trajectory.map(|t| (rep as u32, t)))
        .collect();
    Ok(OccupationEstimate {
        mean: stats.mean,
        se: stats.se,
        replicas: params.replicas,
        censored_fraction,
        censor_warning: censored_fraction > CENSOR_WARN_FRACTION,
        pre_sweeps,
        trajectories,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct HittingEstimate {
    pub p_hat: f64,
    pub se: f64,
    pub bound: f64,
    pub l1_distance: u64,
    /// p_hat + 3 se >= bound, the acceptance form of the per-step lower bound
    pub consistent_with_bound: bool,
}

/// Per-step lower bound (1/(3 c_V^2 + 1))^{l1 distance} on the
/// probability that the walk hits `k` before leaving the box of radius l.
pub fn step_bound(c_v: f64, l1_distance: u64) -> f64 {
    (1.0 / (3.0 * c_v * c_v + 1.0)).powi(l1_distance as i32)
}

/// Estimate P(walk from i hits k before exiting the l-box) under a frozen
/// rate field and compare with the per-step bound.
pub fn hitting_probability<R>(
    i: Site,
    k: Site,
    l: i32,
    rates: &R,
    replicas: u32,
    seed: u64,
) -> Result<HittingEstimate, HsError>
where
    R: RateField + Clone + Sync,
{
    if l < 1 {
        return Err(HsError::BadParams(format!("box radius must be >= 1, got {l}")));
    }
    let inside = |s: Site| s.x.abs() <= l && s.y.abs() <= l;
    if !inside(i) || !inside(k) {
        return Err(HsError::BadParams(format!(
            "start {i} and target {k} must lie in the box of radius {l}"
        )));
    }
    if replicas == 0 {
        return Err(HsError::BadParams("replicas must be >= 1".into()));
    }
    let d1 = ((i.x - k.x).abs() + (i.y - k.y).abs()) as u64;
    let bound = step_bound(rates.c_v(), d1);
    if i == k {
        return Ok(HittingEstimate {
            p_hat: 1.0,
            se: 0.0,
            bound,
            l1_distance: 0,
            consistent_with_bound: true,
        });
    }
    // generous horizon: the rate floor 1/c_V gives diffusive exits well
    // before this for any desk-scale box
    let horizon = 1e6;
    let hits: u64 = (0..replicas)
        .into_par_iter()
        .map(|rep| -> Result<u64, HsError> {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tag::HIT_BOUND, rep as u64]));
            let killed = |s: Site| !inside(s) || s == k;
            let mut local = rates.clone();
            let traj = run_walk(i, &killed, &mut local, horizon, &mut rng)?;
            let hit = traj.killed && traj.jumps.last().map(|&(_, s)| s) == Some(k);
            Ok(hit as u64)
        })
        .sum::<Result<u64, _>>()?;
    let p_hat = hits as f64 / replicas as f64;
    let se = (p_hat * (1.0 - p_hat) / replicas as f64).sqrt();
    Ok(HittingEstimate {
        p_hat,
        se,
        bound,
        l1_distance: d1,
        consistent_with_bound: p_hat + 3.0 * se >= bound,
    })
}

/// Alternating entry/exit times of dirty blocks along a trajectory.
///
/// T_n is the n-th time the walk enters some block meeting the dry set,
/// and S_n the first time it leaves that particular block (or dies /
/// censors inside it, closing the interval at the death time).
pub fn dirty_stopping_times(
    traj: &WalkTrajectory,
    a: &BTreeSet<Site>,
    l: i32,
) -> Result<Vec<(f64, f64)>, LatticeError> {
    let mut dirty_centers = BTreeSet::new();
    for &s in a {
        dirty_centers.insert(block_of(s, l)?);
    }
    let mut out = Vec::new();
    let mut current: Option<(Site, f64)> = None; // (dirty block center, entry time)
    for &(t, s) in &traj.jumps {
        let center = block_of(s, l)?;
        match current {
            Some((c, entry)) if c != center => {
                out.push((entry, t));
                current = dirty_centers.contains(&center).then_some((center, t));
            }
            Some(_) => {}
            None => {
                if dirty_centers.contains(&center) {
                    current = Some((center, t));
                }
            }
        }
    }
    if let Some((_, entry)) = current {
        out.push((entry, traj.death_time));
    }
    Ok(out)
}
