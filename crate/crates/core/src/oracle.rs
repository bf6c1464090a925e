//! Exact Gaussian reference computations on small regions.
//!
//! For the quadratic potential V(t) = kappa t^2/2 the field conditioned on a
//! dry set A (heights frozen at zero on A and outside the region) is Gaussian
//! with precision matrix kappa (4 I - adjacency) over the free sites. This
//! module computes partition functions, Green functions, exact dry-set
//! weights rho(A) by full enumeration, and the two determinant-ratio
//! functionals used to probe the weight of configurations avoiding a block.
//!
//! Enumeration walks all 2^n dry sets of an n-site region and is capped
//! (default 16 sites, hard limit 25); the caps document the combinatorial
//! wall rather than hide it. Dry sets are encoded as bitmasks over the
//! region's raster-order site indexing (bit i = site i pinned).

use crate::lattice::{connected_components, dist_to_set, Norm, Region, Site};
use crate::numerics::log_sum_exp;
use crate::stats::{ols_line, StatsError};
use rayon::prelude::*;
use std::collections::{BTreeSet, HashMap};

pub const DEFAULT_ENUM_CAP: usize = 16;
pub const HARD_ENUM_CAP: usize = 25;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error("region has {sites} sites, above the enumeration cap {cap} (hard limit {HARD_ENUM_CAP})")]
    EnumerationTooLarge { sites: usize, cap: usize },
    #[error("site {0} is not in the region")]
    SiteOutsideRegion(Site),
    #[error("dry set must be nonempty for this operation")]
    EmptyDrySet,
    #[error("site {0} is already dry")]
    SiteAlreadyDry(Site),
    #[error("quadratic form is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { pivot: f64, index: usize },
    #[error("kappa must be positive and finite, got {0}")]
    BadKappa(f64),
    #[error("nested family invalid: {0}")]
    BadFamily(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Symmetric positive-definite matrix in lower-band storage, factored in
/// place by Cholesky. Under raster ordering of free sites the killed
/// lattice Laplacian has bandwidth ~ one row of the region, which keeps
/// full boxes up to N = 32 and beyond cheap.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // l[i * (bw+1) + d] = L[i][i-d], d in 0..=bw
    l: Vec<f64>,
    log_det: f64,
}

impl BandedCholesky {
    /// Factor a symmetric band matrix given in the same lower-band layout.
    pub fn factor(n: usize, bw: usize, a: Vec<f64>) -> Result<Self, OracleError> {
        assert_eq!(a.len(), n * (bw + 1));
        let w = bw + 1;
        let mut l = a;
        let mut log_det = 0.0;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut sum = l[i * w + (i - j)];
                let kmin = lo.max(j.saturating_sub(bw));
                for k in kmin..j {
                    sum -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if j < i {
                    l[i * w + (i - j)] = sum / l[j * w];
                } else {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(OracleError::NotPositiveDefinite { pivot: sum, index: i });
                    }
                    let d = sum.sqrt();
                    l[i * w] = d;
                    log_det += 2.0 * d.ln();
                }
            }
        }
        Ok(BandedCholesky { n, bw, l, log_det })
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Solve A x = rhs in place.
    pub fn solve(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        let w = self.bw + 1;
        // forward: L y = rhs
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let mut s = x[i];
            for k in lo..i {
                s -= self.l[i * w + (i - k)] * x[k];
            }
            x[i] = s / self.l[i * w];
        }
        // backward: L^T x = y
        for i in (0..self.n).rev() {
            let hi = (i + self.bw).min(self.n - 1);
            let mut s = x[i];
            for k in (i + 1)..=hi {
                s -= self.l[k * w + (k - i)] * x[k];
            }
            x[i] = s / self.l[i * w];
        }
    }
}

/// Precision matrix of the free sites of `region` with the dry set (and
/// everything outside the region) killed: diagonal 4 kappa, off-diagonal
/// -kappa on free-free nearest-neighbour pairs.
struct KilledForm {
    /// region indices of free sites, raster order
    free: Vec<usize>,
    bw: usize,
    band: Vec<f64>,
}

fn killed_form(region: &Region, is_dry: &dyn Fn(usize) -> bool, kappa: f64) -> KilledForm {
    let free: Vec<usize> = (0..region.len()).filter(|&i| !is_dry(i)).collect();
    let pos: HashMap<usize, usize> = free.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    let mut bw = 0;
    for (p, &i) in free.iter().enumerate() {
        for nb in region.site(i).neighbors() {
            if let Some(&j) = region.index_of(nb).and_then(|j| pos.get(&j)) {
                if j < p {
                    bw = bw.max(p - j);
                }
            }
        }
    }
    let w = bw + 1;
    let mut band = vec![0.0; free.len() * w];
    for (p, &i) in free.iter().enumerate() {
        band[p * w] = 4.0 * kappa;
        for nb in region.site(i).neighbors() {
            if let Some(&q) = region.index_of(nb).and_then(|j| pos.get(&j)) {
                if q < p {
                    band[p * w + (p - q)] = -kappa;
                }
            }
        }
    }
    KilledForm { free, bw, band }
}

fn check_kappa(kappa: f64) -> Result<(), OracleError> {
    if kappa > 0.0 && kappa.is_finite() {
        Ok(())
    } else {
        Err(OracleError::BadKappa(kappa))
    }
}

fn check_subset(region: &Region, a: &BTreeSet<Site>) -> Result<(), OracleError> {
    match a.iter().find(|&&s| !region.contains(s)) {
        Some(&s) => Err(OracleError::SiteOutsideRegion(s)),
        None => Ok(()),
    }
}

fn dry_mask_fn<'a>(region: &'a Region, a: &'a BTreeSet<Site>) -> impl Fn(usize) -> bool + 'a {
    move |i| a.contains(&region.site(i))
}

/// log Z(A) = (n_free/2) log(2 pi) - (1/2) log det M_A; log Z = 0 when
/// everything is pinned.
pub fn log_partition(region: &Region, a: &BTreeSet<Site>, kappa: f64) -> Result<f64, OracleError> {
    check_kappa(kappa)?;
    check_subset(region, a)?;
    let form = killed_form(region, &dry_mask_fn(region, a), kappa);
    log_partition_form(form)
}

fn log_partition_form(form: KilledForm) -> Result<f64, OracleError> {
    let n = form.free.len();
    if n == 0 {
        return Ok(0.0);
    }
    let chol = BandedCholesky::factor(n, form.bw, form.band)?;
    Ok(0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * chol.log_det())
}

/// Green function (covariance) of the field killed on A and outside the
/// region. Columns are solved lazily and cached.
pub struct GreenMatrix {
    free_sites: Vec<Site>,
    pos: HashMap<Site, usize>,
    chol: Option<BandedCholesky>,
    cols: HashMap<usize, Vec<f64>>,
}

impl GreenMatrix {
    pub fn new(region: &Region, a: &BTreeSet<Site>, kappa: f64) -> Result<Self, OracleError> {
        check_kappa(kappa)?;
        check_subset(region, a)?;
        let form = killed_form(region, &dry_mask_fn(region, a), kappa);
        let free_sites: Vec<Site> = form.free.iter().map(|&i| region.site(i)).collect();
        let pos: HashMap<Site, usize> = free_sites.iter().enumerate().map(|(p, &s)| (s, p)).collect();
        let chol = if free_sites.is_empty() {
            None
        } else {
            Some(BandedCholesky::factor(free_sites.len(), form.bw, form.band)?)
        };
        Ok(GreenMatrix {
            free_sites,
            pos,
            chol,
            cols: HashMap::new(),
        })
    }

    pub fn free_sites(&self) -> &[Site] {
        &self.free_sites
    }

    /// G(i, j); zero whenever either site is killed or outside the region.
    pub fn get(&mut self, i: Site, j: Site) -> f64 {
        let (Some(&pi), Some(&pj)) = (self.pos.get(&i), self.pos.get(&j)) else {
            return 0.0;
        };
        let col = self.column(pj);
        col[pi]
    }

    pub fn variance(&mut self, i: Site) -> f64 {
        self.get(i, i)
    }

    fn column(&mut self, pj: usize) -> &Vec<f64> {
        if !self.cols.contains_key(&pj) {
            let chol = self.chol.as_ref().expect("nonempty free set");
            let mut e = vec![0.0; self.free_sites.len()];
            e[pj] = 1.0;
            chol.solve(&mut e);
            self.cols.insert(pj, e);
        }
        &self.cols[&pj]
    }
}

/// Exact dry-set distribution of an enumerable region: for every A,
/// rho(A) proportional to exp(J |A|) Z(A), normalized in the log domain.
#[derive(Debug, Clone)]
pub struct DryWeightTable {
    region: Region,
    j: f64,
    kappa: f64,
    log_z: Vec<f64>,
    rho: Vec<f64>,
    log_zhat: f64,
}

impl DryWeightTable {
    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn j(&self) -> f64 {
        self.j
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn num_masks(&self) -> usize {
        self.rho.len()
    }

    pub fn rho(&self, mask: usize) -> f64 {
        self.rho[mask]
    }

    pub fn log_z(&self, mask: usize) -> f64 {
        self.log_z[mask]
    }

    /// log of the pinned partition function Zhat = sum_A e^{J|A|} Z(A).
    pub fn log_zhat(&self) -> f64 {
        self.log_zhat
    }

    pub fn mask_of(&self, a: &BTreeSet<Site>) -> Result<usize, OracleError> {
        check_subset(&self.region, a)?;
        let mut m = 0usize;
        for &s in a {
            m |= 1 << self.region.index_of(s).unwrap();
        }
        Ok(m)
    }

    pub fn sites_of(&self, mask: usize) -> BTreeSet<Site> {
        (0..self.region.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| self.region.site(i))
            .collect()
    }

    /// E|A| under rho.
    pub fn expected_dry_size(&self) -> f64 {
        self.rho
            .iter()
            .enumerate()
            .map(|(m, &r)| r * m.count_ones() as f64)
            .sum()
    }

    /// P(A cap B = empty): total weight of dry sets avoiding B.
    pub fn avoid_probability(&self, b: &BTreeSet<Site>) -> Result<f64, OracleError> {
        let bm = self.mask_of(b)?;
        Ok(self
            .rho
            .iter()
            .enumerate()
            .filter(|&(m, _)| m & bm == 0)
            .map(|(_, &r)| r)
            .sum())
    }
}

/// Enumerate every dry set of the region. `cap` bounds the region size and
/// may not exceed the hard limit.
pub fn enumerate_rho(
    region: &Region,
    j: f64,
    kappa: f64,
    cap: usize,
) -> Result<DryWeightTable, OracleError> {
    check_kappa(kappa)?;
    let n = region.len();
    let cap = cap.min(HARD_ENUM_CAP);
    if n > cap {
        return Err(OracleError::EnumerationTooLarge { sites: n, cap });
    }
    let masks = 1usize << n;
    let log_z: Vec<f64> = (0..masks)
        .into_par_iter()
        .map(|mask| {
            let form = killed_form(region, &|i| mask >> i & 1 == 1, kappa);
            log_partition_form(form).expect("killed form is positive definite")
        })
        .collect();
    let log_w: Vec<f64> = log_z
        .iter()
        .enumerate()
        .map(|(mask, &lz)| j * mask.count_ones() as f64 + lz)
        .collect();
    let log_zhat = log_sum_exp(&log_w);
    let rho: Vec<f64> = log_w.iter().map(|&lw| (lw - log_zhat).exp()).collect();
    Ok(DryWeightTable {
        region: region.clone(),
        j,
        kappa,
        log_z,
        rho,
        log_zhat,
    })
}

/// Exact covariance under the pinned measure: sum_A rho(A) G_A(i, j).
pub fn exact_covariance(table: &DryWeightTable, i: Site, j: Site) -> Result<f64, OracleError> {
    let region = &table.region;
    if !region.contains(i) {
        return Err(OracleError::SiteOutsideRegion(i));
    }
    if !region.contains(j) {
        return Err(OracleError::SiteOutsideRegion(j));
    }
    let kappa = table.kappa;
    let total: f64 = (0..table.num_masks())
        .into_par_iter()
        .map(|mask| {
            let r = table.rho(mask);
            if r == 0.0 {
                return 0.0;
            }
            let a = table.sites_of(mask);
            let mut g = GreenMatrix::new(region, &a, kappa).expect("valid mask");
            r * g.get(i, j)
        })
        .sum();
    Ok(total)
}

/// The subset-sum functional sum_{C subseteq B} e^{J|C|} Z(A cup C)/Z(A),
/// returned with its logarithm (the value grows exponentially in |B|).
#[derive(Debug, Clone, Copy)]
pub struct EnlargementGain {
    pub log_value: f64,
    pub value: f64,
}

pub fn dry_neighbour_functional(
    region: &Region,
    a: &BTreeSet<Site>,
    b: &BTreeSet<Site>,
    j: f64,
    kappa: f64,
    cap: usize,
) -> Result<EnlargementGain, OracleError> {
    check_kappa(kappa)?;
    check_subset(region, a)?;
    check_subset(region, b)?;
    let cap = cap.min(HARD_ENUM_CAP);
    if b.len() > cap {
        return Err(OracleError::EnumerationTooLarge { sites: b.len(), cap });
    }
    if let Some(&s) = b.iter().find(|s| a.contains(s)) {
        return Err(OracleError::SiteAlreadyDry(s));
    }
    let log_z_a = log_partition(region, a, kappa)?;
    let b_sites: Vec<Site> = b.iter().copied().collect();
    let terms: Vec<f64> = (0..(1usize << b_sites.len()))
        .into_par_iter()
        .map(|cmask| {
            let mut ac = a.clone();
            for (i, &s) in b_sites.iter().enumerate() {
                if cmask >> i & 1 == 1 {
                    ac.insert(s);
                }
            }
            let lz = log_partition(region, &ac, kappa).expect("valid subset");
            j * cmask.count_ones() as f64 + lz - log_z_a
        })
        .collect();
    let log_value = log_sum_exp(&terms);
    Ok(EnlargementGain {
        log_value,
        value: log_value.exp(),
    })
}

/// Partition-function cost of pinning one extra site.
#[derive(Debug, Clone, Copy)]
pub struct PinRatio {
    /// Z(A + i) / Z(A)
    pub ratio: f64,
    /// distance from i to A in the requested norm
    pub dist: f64,
    /// ratio * sqrt(d(i, A)), the scale-invariant report
    pub scaled: f64,
}

pub fn pin_ratio(
    region: &Region,
    a: &BTreeSet<Site>,
    i: Site,
    kappa: f64,
    norm: Norm,
) -> Result<PinRatio, OracleError> {
    check_kappa(kappa)?;
    check_subset(region, a)?;
    if a.is_empty() {
        return Err(OracleError::EmptyDrySet);
    }
    if !region.contains(i) {
        return Err(OracleError::SiteOutsideRegion(i));
    }
    if a.contains(&i) {
        return Err(OracleError::SiteAlreadyDry(i));
    }
    let mut ai = a.clone();
    ai.insert(i);
    let lr = log_partition(region, &ai, kappa)? - log_partition(region, a, kappa)?;
    let dist = dist_to_set(i, a, norm).expect("nonempty");
    let ratio = lr.exp();
    Ok(PinRatio {
        ratio,
        dist,
        scaled: ratio * dist.sqrt(),
    })
}

/// One row of the block-avoidance scan.
#[derive(Debug, Clone, Copy)]
pub struct AvoidanceRow {
    pub b_size: usize,
    pub avoid_prob: f64,
    pub neg_log: f64,
}

#[derive(Debug, Clone)]
pub struct AvoidanceScan {
    pub rows: Vec<AvoidanceRow>,
    /// least-squares slope of -log P(A cap B = empty) against |B|
    pub rate: f64,
    pub intercept: f64,
}

/// Evaluate P(A cap B = empty) along a nested family of connected blocks
/// and fit the exponential decay rate in |B|.
pub fn avoidance_scan(
    table: &DryWeightTable,
    family: &[BTreeSet<Site>],
) -> Result<AvoidanceScan, OracleError> {
    if family.len() < 3 {
        return Err(OracleError::BadFamily(format!(
            "need >= 3 nested blocks, got {}",
            family.len()
        )));
    }
    for (k, b) in family.iter().enumerate() {
        if b.is_empty() {
            return Err(OracleError::BadFamily(format!("block {k} is empty")));
        }
        check_subset(&table.region, b)?;
        if connected_components(b).len() != 1 {
            return Err(OracleError::BadFamily(format!("block {k} is disconnected")));
        }
        if k > 0 && !b.is_superset(&family[k - 1]) {
            return Err(OracleError::BadFamily(format!(
                "block {k} does not contain block {}",
                k - 1
            )));
        }
    }
    let mut rows = Vec::with_capacity(family.len());
    for b in family {
        let p = table.avoid_probability(b)?;
        rows.push(AvoidanceRow {
            b_size: b.len(),
            avoid_prob: p,
            neg_log: -p.ln(),
        });
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.b_size as f64, r.neg_log)).collect();
    let (rate, intercept) = ols_line(&pts)?;
    Ok(AvoidanceScan {
        rows,
        rate,
        intercept,
    })
}

/// Prefixes of a boustrophedon (snake) walk over the region's rows: a nested
/// family of connected blocks growing one site at a time.
pub fn snake_family(region: &Region) -> Vec<BTreeSet<Site>> {
    let mut rows: HashMap<i32, Vec<Site>> = HashMap::new();
    for &s in region.sites() {
        rows.entry(s.y).or_default().push(s);
    }
    let mut ys: Vec<i32> = rows.keys().copied().collect();
    ys.sort();
    let mut order = Vec::with_capacity(region.len());
    for (k, y) in ys.iter().enumerate() {
        let mut row = rows.remove(y).unwrap();
        row.sort();
        if k % 2 == 1 {
            row.reverse();
        }
        order.extend(row);
    }
    let mut fam = Vec::with_capacity(order.len());
    let mut cur = BTreeSet::new();
    for s in order {
        cur.insert(s);
        fam.push(cur.clone());
    }
    fam
}
