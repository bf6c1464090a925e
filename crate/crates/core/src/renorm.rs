//! Multiscale (block) analysis of dry sets.
//!
//! The lattice is tiled by (2l+1)x(2l+1) blocks centered on the sublattice
//! (2l+1)Z^2. A block is dirty when it meets the dry set. A dry set is
//! (r, eps)-clean when some nearest-neighbour path of blocks from the
//! origin block to the first ring outside the radius-r window visits fewer
//! than eps*r distinct dirty blocks; the minimum dirt over paths is found
//! by 0/1-weighted breadth-first search. The module also builds the
//! component-wise enlargement tuples used to organize the event
//! {A does not meet B} by how far A keeps away from each component of B.
//!
//! Enlargements here always use lattice (graph) distance, so a
//! k-enlargement of a connected set stays connected and grows through
//! nearest-neighbour shells.

use crate::lattice::{
    block_of, connected_components, dist_to_set, enlargement, exterior_boundary, LatticeError,
    Norm, Site,
};
use crate::stats::{wls_fit, BatchMean, LineFit, StatsError};
use std::collections::{BTreeSet, VecDeque};

#[derive(Debug, thiserror::Error)]
pub enum RenormError {
    #[error("epsilon must lie strictly between 0 and 1, got {0}")]
    BadEpsilon(f64),
    #[error("renormalized radius must be >= 1, got {0}")]
    BadRadius(i32),
    #[error("{0}")]
    EmptyInput(String),
    #[error("sets must be disjoint but share site {0}")]
    Overlap(Site),
    #[error("enlargement search exceeded the cap {cap}; the dry set does not confine component {component}")]
    EnlargementCap { cap: u32, component: usize },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// A dry set viewed on the renormalized lattice: which blocks of scale l
/// inside the radius-r window (plus its exit ring) meet the dry set.
#[derive(Debug, Clone)]
pub struct RenormScene {
    l: i32,
    r: i32,
    /// block centers (multiples of 2l+1) of dirty blocks in the window
    dirty: BTreeSet<Site>,
}

impl RenormScene {
    /// Label the blocks of scale `l` touched by the dry set, keeping those
    /// within the radius-r window and its exit ring.
    pub fn classify(a: &BTreeSet<Site>, l: i32, r: i32) -> Result<Self, RenormError> {
        if r < 1 {
            return Err(RenormError::BadRadius(r));
        }
        let side = 2 * l + 1;
        let mut dirty = BTreeSet::new();
        for &s in a {
            let c = block_of(s, l)?;
            let z = (c.x / side).abs().max((c.y / side).abs());
            if z <= r + 1 {
                dirty.insert(c);
            }
        }
        Ok(RenormScene { l, r, dirty })
    }

    pub fn l(&self) -> i32 {
        self.l
    }

    pub fn r(&self) -> i32 {
        self.r
    }

    pub fn dirty_blocks(&self) -> &BTreeSet<Site> {
        &self.dirty
    }

    /// Every window block center with its dirty flag, raster order — the
    /// scene dump format.
    pub fn window_blocks(&self) -> Vec<(Site, bool)> {
        let side = 2 * self.l + 1;
        let mut out = Vec::new();
        for zy in -(self.r + 1)..=(self.r + 1) {
            for zx in -(self.r + 1)..=(self.r + 1) {
                let c = Site::new(zx * side, zy * side);
                out.push((c, self.dirty.contains(&c)));
            }
        }
        out
    }

    /// Minimum number of distinct dirty blocks over nearest-neighbour block
    /// paths from the origin block to the first ring outside the radius-r
    /// window. Dirt on the exit ring itself does not count (the path has
    /// already escaped). 0/1-BFS on block nodes, node weight 1 when dirty.
    pub fn min_dirty_path(&self) -> u32 {
        let r = self.r;
        let side = 2 * self.l + 1;
        let span = 2 * (r + 1) + 1; // renormalized coordinates in [-(r+1), r+1]
        let idx = |zx: i32, zy: i32| ((zy + r + 1) * span + (zx + r + 1)) as usize;
        let weight = |zx: i32, zy: i32| -> u32 {
            if zx.abs().max(zy.abs()) <= r
                && self.dirty.contains(&Site::new(zx * side, zy * side))
            {
                1
            } else {
                0
            }
        };
        let mut dist = vec![u32::MAX; (span * span) as usize];
        let mut deque = VecDeque::new();
        dist[idx(0, 0)] = weight(0, 0);
        deque.push_back((0i32, 0i32));
        let mut best = u32::MAX;
        while let Some((zx, zy)) = deque.pop_front() {
            let d = dist[idx(zx, zy)];
            if zx.abs().max(zy.abs()) == r + 1 {
                best = best.min(d);
                continue;
            }
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let (nx, ny) = (zx + dx, zy + dy);
                if nx.abs().max(ny.abs()) > r + 1 {
                    continue;
                }
                let w = weight(nx, ny);
                let nd = d + w;
                if nd < dist[idx(nx, ny)] {
                    dist[idx(nx, ny)] = nd;
                    if w == 0 {
                        deque.push_front((nx, ny));
                    } else {
                        deque.push_back((nx, ny));
                    }
                }
            }
        }
        best
    }

    /// The strict clean test: fewer than eps*r distinct dirty blocks on the
    /// best escape path.
    pub fn is_clean(&self, epsilon: f64) -> Result<bool, RenormError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(RenormError::BadEpsilon(epsilon));
        }
        Ok((self.min_dirty_path() as f64) < epsilon * self.r as f64)
    }
}

/// Component-wise enlargement radii for a target set B, greedily maximal
/// against the dry set A: the first component grows until it would touch A,
/// each later component grows until it would touch A or an earlier enlarged
/// component (radius 0 when it cannot grow at all).
#[derive(Debug, Clone)]
pub struct AdmissibleTuple {
    pub components: Vec<BTreeSet<Site>>,
    pub k: Vec<u32>,
    pub enlarged: Vec<BTreeSet<Site>>,
}

impl AdmissibleTuple {
    pub fn union_enlarged(&self) -> BTreeSet<Site> {
        let mut u = BTreeSet::new();
        for e in &self.enlarged {
            u.extend(e.iter().copied());
        }
        u
    }

    /// |union of enlargements| >= |B| + sum of radii.
    pub fn size_property_holds(&self) -> bool {
        let b_size: usize = self.components.iter().map(|c| c.len()).sum();
        let k_sum: u32 = self.k.iter().sum();
        self.union_enlarged().len() >= b_size + k_sum as usize
    }

    /// The defining bullets: no constraint on the first radius; each later
    /// radius is zero or its enlargement avoids all earlier ones.
    pub fn is_admissible(&self) -> bool {
        tuple_is_admissible(&self.components, &self.k)
    }

    /// True when `a` certifies every radius as maximal: `a` avoids the
    /// whole enlarged union, and for each part the obstacle set at its
    /// construction step (a plus the earlier enlargements) touches the
    /// part's boundary, so no radius could grow further. Exactly one
    /// admissible tuple is certified by any given dry set — the one the
    /// greedy construction returns — which makes these classes a partition
    /// of the dry sets avoiding B.
    pub fn certified_by(&self, a: &BTreeSet<Site>) -> bool {
        let union = self.union_enlarged();
        if a.iter().any(|s| union.contains(s)) {
            return false;
        }
        let mut obstacles: BTreeSet<Site> = a.clone();
        for e in &self.enlarged {
            if !exterior_boundary(e).iter().any(|s| obstacles.contains(s)) {
                return false;
            }
            obstacles.extend(e.iter().copied());
        }
        true
    }
}

fn tuple_is_admissible(components: &[BTreeSet<Site>], k: &[u32]) -> bool {
    let mut earlier: BTreeSet<Site> = BTreeSet::new();
    for (m, comp) in components.iter().enumerate() {
        let e = enlargement(comp, k[m], Norm::L1).expect("nonempty component");
        if m > 0 && k[m] > 0 && e.iter().any(|s| earlier.contains(s)) {
            return false;
        }
        earlier.extend(e);
    }
    true
}

/// A is a dry neighbour of B: disjoint from it, but touching the exterior
/// boundary of every connected component.
pub fn is_dry_neighbour(a: &BTreeSet<Site>, b: &BTreeSet<Site>) -> bool {
    if a.iter().any(|s| b.contains(s)) {
        return false;
    }
    connected_components(b)
        .iter()
        .all(|comp| exterior_boundary(comp).iter().any(|s| a.contains(s)))
}

/// Graph distance from a nonempty set to a nonempty set.
fn set_distance(from: &BTreeSet<Site>, to: &BTreeSet<Site>) -> u32 {
    let mut best = f64::INFINITY;
    for &s in from {
        let d = dist_to_set(s, to, Norm::L1).expect("nonempty target");
        best = best.min(d);
    }
    best as u32
}

/// Construct the greedy maximal tuple for components of `b` against `a`.
///
/// `cap` bounds the first-component search: when A does not confine the
/// component within distance `cap`, the radius would be unbounded and an
/// error names the offending component.
pub fn admissible_tuple(
    a: &BTreeSet<Site>,
    b: &BTreeSet<Site>,
    cap: u32,
) -> Result<AdmissibleTuple, RenormError> {
    if b.is_empty() {
        return Err(RenormError::EmptyInput("target set B is empty".into()));
    }
    if let Some(&s) = b.iter().find(|s| a.contains(s)) {
        return Err(RenormError::Overlap(s));
    }
    let components = connected_components(b);
    let mut k = Vec::with_capacity(components.len());
    let mut enlarged: Vec<BTreeSet<Site>> = Vec::with_capacity(components.len());
    let mut obstacles: BTreeSet<Site> = a.clone();
    for (m, comp) in components.iter().enumerate() {
        if obstacles.is_empty() {
            return Err(RenormError::EmptyInput(
                "dry set A is empty: the first enlargement radius is unbounded".into(),
            ));
        }
        // d(comp, obstacles) = k + 1 for the maximal non-touching radius k
        let d = set_distance(comp, &obstacles);
        let km = if m == 0 {
            let km = d - 1; // d >= 1 because A and B are disjoint
            if km > cap {
                return Err(RenormError::EnlargementCap { cap, component: m });
            }
            km
        } else if d <= 1 {
            0 // no positive radius avoids the obstacles
        } else {
            d - 1
        };
        let e = enlargement(comp, km, Norm::L1)?;
        obstacles.extend(e.iter().copied());
        enlarged.push(e);
        k.push(km);
    }
    Ok(AdmissibleTuple {
        components,
        k,
        enlarged,
    })
}

fn enumerate_tuples(
    a: &BTreeSet<Site>,
    b: &BTreeSet<Site>,
    keep: impl Fn(&AdmissibleTuple) -> bool,
) -> Result<Vec<Vec<u32>>, RenormError> {
    if a.is_empty() || b.is_empty() {
        return Err(RenormError::EmptyInput(
            "both sets must be nonempty for tuple enumeration".into(),
        ));
    }
    if let Some(&s) = b.iter().find(|s| a.contains(s)) {
        return Err(RenormError::Overlap(s));
    }
    let components = connected_components(b);
    // a dry set disjoint from the union can never sit closer than this
    let bounds: Vec<u32> = components.iter().map(|c| set_distance(c, a) - 1).collect();
    let mut found = Vec::new();
    let mut k = vec![0u32; components.len()];
    loop {
        if tuple_is_admissible(&components, &k) {
            let mut enlarged = Vec::with_capacity(components.len());
            for (comp, &km) in components.iter().zip(&k) {
                enlarged.push(enlargement(comp, km, Norm::L1)?);
            }
            let t = AdmissibleTuple {
                components: components.clone(),
                k: k.clone(),
                enlarged,
            };
            if keep(&t) {
                found.push(k.clone());
            }
        }
        // odometer increment over the box prod [0, bounds[m]]
        let mut pos = 0;
        loop {
            if pos == k.len() {
                return Ok(found);
            }
            if k[pos] < bounds[pos] {
                k[pos] += 1;
                break;
            }
            k[pos] = 0;
            pos += 1;
        }
    }
}

/// Every admissible tuple whose enlargement has `a` as a dry neighbour,
/// searched exhaustively up to the natural per-component bound. Always
/// contains the greedy tuple; occasionally contains more (a later
/// component sitting just outside an earlier enlargement can bridge an
/// escape to the same certifying site), so dry-neighbour membership alone
/// does not pin the tuple down.
pub fn dry_neighbour_tuples(
    a: &BTreeSet<Site>,
    b: &BTreeSet<Site>,
) -> Result<Vec<Vec<u32>>, RenormError> {
    enumerate_tuples(a, b, |t| is_dry_neighbour(a, &t.union_enlarged()))
}

/// Every admissible tuple certified by `a` in the sense of
/// [`AdmissibleTuple::certified_by`]. Exhaustive search; exactly one match
/// exists, the greedy tuple.
pub fn certified_tuples(
    a: &BTreeSet<Site>,
    b: &BTreeSet<Site>,
) -> Result<Vec<Vec<u32>>, RenormError> {
    enumerate_tuples(a, b, |t| t.certified_by(a))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degeneracy {
    None,
    /// every sample was clean: nothing to fit
    AllClean,
    /// every sample was dirty: the curve sits at zero
    AllDirty,
}

#[derive(Debug, Clone)]
pub struct CleanPoint {
    pub r: i32,
    pub p_clean: f64,
    pub se: f64,
    pub n: u64,
    pub degeneracy: Degeneracy,
}

#[derive(Debug, Clone)]
pub struct CleanCurve {
    pub l: i32,
    pub epsilon: f64,
    pub points: Vec<CleanPoint>,
    /// weighted fit of log P(clean) against r over the non-degenerate
    /// points; None when fewer than three points admit a log
    pub decay_fit: Option<LineFit>,
    pub degenerate: bool,
    /// true when some window block sticks out of the sampled box, where
    /// blocks are clean by construction (the dry set cannot reach them)
    pub window_truncated: bool,
}

/// Streaming estimator of P((r, eps)-clean) over an MCMC dry-set stream,
/// one batch-means accumulator per requested radius.
#[derive(Debug, Clone)]
pub struct CleanProbAccumulator {
    l: i32,
    epsilon: f64,
    r_list: Vec<i32>,
    acc: Vec<BatchMean>,
    window_truncated: bool,
}

impl CleanProbAccumulator {
    /// `box_radius` is the radius of the sampled box when known; a window
    /// poking outside it is allowed but flagged in the finalized curve.
    pub fn new(
        l: i32,
        epsilon: f64,
        r_list: &[i32],
        batch_size: u64,
        box_radius: Option<i32>,
    ) -> Result<Self, RenormError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(RenormError::BadEpsilon(epsilon));
        }
        if l < 1 {
            return Err(RenormError::Lattice(LatticeError::BadBlockRadius(l)));
        }
        if r_list.is_empty() {
            return Err(RenormError::EmptyInput("radius list is empty".into()));
        }
        for &r in r_list {
            if r < 1 {
                return Err(RenormError::BadRadius(r));
            }
        }
        let window_truncated = box_radius.is_some_and(|n| {
            let r_max = *r_list.iter().max().unwrap();
            (r_max + 1) * (2 * l + 1) + l > n
        });
        Ok(CleanProbAccumulator {
            l,
            epsilon,
            r_list: r_list.to_vec(),
            acc: vec![BatchMean::new(batch_size); r_list.len()],
            window_truncated,
        })
    }

    pub fn push(&mut self, dry: &BTreeSet<Site>) -> Result<(), RenormError> {
        for (pos, &r) in self.r_list.iter().enumerate() {
            let scene = RenormScene::classify(dry, self.l, r)?;
            let clean = scene.is_clean(self.epsilon)?;
            self.acc[pos].push(clean as u8 as f64);
        }
        Ok(())
    }

    /// Pool batches from a replica accumulator (same geometry required).
    pub fn merge(&mut self, other: CleanProbAccumulator) {
        assert_eq!(self.r_list, other.r_list);
        assert_eq!(self.l, other.l);
        for (mine, theirs) in self.acc.iter_mut().zip(other.acc) {
            mine.merge(theirs);
        }
    }

    pub fn finalize(self) -> Result<CleanCurve, RenormError> {
        let mut points = Vec::with_capacity(self.r_list.len());
        for (pos, &r) in self.r_list.iter().enumerate() {
            let stats = self.acc[pos].finalize()?;
            let degeneracy = if stats.mean <= 0.0 {
                Degeneracy::AllDirty
            } else if stats.mean >= 1.0 {
                Degeneracy::AllClean
            } else {
                Degeneracy::None
            };
            points.push(CleanPoint {
                r,
                p_clean: stats.mean,
                se: stats.se,
                n: stats.n,
                degeneracy,
            });
        }
        let degenerate = points.iter().any(|p| p.degeneracy != Degeneracy::None);
        let fit_pts: Vec<(f64, f64, f64)> = points
            .iter()
            .filter(|p| p.degeneracy == Degeneracy::None && p.se > 0.0)
            .map(|p| {
                let w = (p.p_clean / p.se).powi(2); // se of log p is se/p
                (p.r as f64, p.p_clean.ln(), w)
            })
            .collect();
        let decay_fit = wls_fit(&fit_pts).ok();
        Ok(CleanCurve {
            l: self.l,
            epsilon: self.epsilon,
            points,
            decay_fit,
            degenerate,
            window_truncated: self.window_truncated,
        })
    }
}

/// Exhaustive reference for the path minimum: the smallest c such that the
/// exit ring is reachable through clean blocks plus some c-subset of the
/// window's dirty blocks. Exponential in the dirty count — test scales only.
pub fn min_dirty_path_by_subsets(scene: &RenormScene) -> u32 {
    let r = scene.r;
    let side = 2 * scene.l + 1;
    let window_dirty: Vec<Site> = scene
        .dirty
        .iter()
        .copied()
        .filter(|c| (c.x / side).abs().max((c.y / side).abs()) <= r)
        .collect();
    let reachable = |allowed: &dyn Fn(Site) -> bool| -> bool {
        let origin = Site::new(0, 0);
        if !allowed(origin) {
            return false;
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([(0i32, 0i32)]);
        seen.insert((0, 0));
        while let Some((zx, zy)) = queue.pop_front() {
            if zx.abs().max(zy.abs()) == r + 1 {
                return true;
            }
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let (nx, ny) = (zx + dx, zy + dy);
                if nx.abs().max(ny.abs()) > r + 1 || seen.contains(&(nx, ny)) {
                    continue;
                }
                // exit-ring blocks are free regardless of dirt
                if nx.abs().max(ny.abs()) <= r && !allowed(Site::new(nx * side, ny * side)) {
                    continue;
                }
                seen.insert((nx, ny));
                queue.push_back((nx, ny));
            }
        }
        false
    };
    for c in 0..=window_dirty.len() {
        let mut chooser = SubsetChooser::new(window_dirty.len(), c);
        while let Some(subset) = chooser.next_subset() {
            let allowed_set: BTreeSet<Site> =
                subset.iter().map(|&i| window_dirty[i]).collect();
            let allowed = |s: Site| !scene.dirty.contains(&s) || allowed_set.contains(&s);
            if reachable(&allowed) {
                return c as u32;
            }
        }
    }
    unreachable!("the full dirty set always admits a path");
}

/// Plain lexicographic k-subset iterator over 0..n.
struct SubsetChooser {
    n: usize,
    k: usize,
    current: Option<Vec<usize>>,
}

impl SubsetChooser {
    fn new(n: usize, k: usize) -> Self {
        let current = (k <= n).then(|| (0..k).collect());
        SubsetChooser { n, k, current }
    }

    fn next_subset(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        // advance
        let cur = self.current.as_mut().unwrap();
        let mut i = self.k;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if cur[i] < self.n - (self.k - i) {
                cur[i] += 1;
                for j in i + 1..self.k {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(v: &[(i32, i32)]) -> BTreeSet<Site> {
        v.iter().map(|&(x, y)| Site::new(x, y)).collect()
    }

    fn all_dirty_scene(l: i32, r: i32) -> RenormScene {
        let side = 2 * l + 1;
        let mut a = BTreeSet::new();
        for zx in -(r + 1)..=(r + 1) {
            for zy in -(r + 1)..=(r + 1) {
                a.insert(Site::new(zx * side, zy * side));
            }
        }
        RenormScene::classify(&a, l, r).unwrap()
    }

    #[test]
    fn classify_basics() {
        let scene = RenormScene::classify(&BTreeSet::new(), 2, 3).unwrap();
        assert!(scene.dirty_blocks().is_empty());
        // one site lands in exactly one block
        let scene = RenormScene::classify(&set(&[(3, 0)]), 2, 3).unwrap();
        assert_eq!(scene.dirty_blocks().len(), 1);
        assert!(scene.dirty_blocks().contains(&Site::new(5, 0)));
        // far-away dryness is outside the window and dropped
        let scene = RenormScene::classify(&set(&[(100, 100)]), 2, 3).unwrap();
        assert!(scene.dirty_blocks().is_empty());
        assert!(RenormScene::classify(&BTreeSet::new(), 2, 0).is_err());
    }

    #[test]
    fn min_path_frozen_cases() {
        // no dirt: free escape
        let scene = RenormScene::classify(&BTreeSet::new(), 1, 5).unwrap();
        assert_eq!(scene.min_dirty_path(), 0);
        // only the origin block dirty: every path starts there
        let scene = RenormScene::classify(&set(&[(0, 0)]), 1, 5).unwrap();
        assert_eq!(scene.min_dirty_path(), 1);
        // everything dirty: a shortest escape crosses r+1 blocks
        for (l, r) in [(1, 3), (2, 5), (1, 10)] {
            assert_eq!(all_dirty_scene(l, r).min_dirty_path(), (r + 1) as u32);
        }
    }

    #[test]
    fn min_path_goes_around_walls() {
        // a dirty column at block x = 1, y in [-2, 2] with r = 2: paths
        // escape upward without touching it except... the wall is finite,
        // so going around through y = 3 ring is free
        let side = 3;
        let mut a = BTreeSet::new();
        for zy in -2..=2 {
            a.insert(Site::new(side, zy * side));
        }
        let scene = RenormScene::classify(&a, 1, 2).unwrap();
        assert_eq!(scene.min_dirty_path(), 0);
        // close the box around the origin: one block must be crossed
        let mut ring = BTreeSet::new();
        for zx in -1..=1 {
            for zy in -1..=1 {
                if (zx, zy) != (0, 0) {
                    ring.insert(Site::new(zx * side, zy * side));
                }
            }
        }
        let scene = RenormScene::classify(&ring, 1, 2).unwrap();
        assert_eq!(scene.min_dirty_path(), 1);
    }

    #[test]
    fn clean_threshold_is_strict() {
        let scene = all_dirty_scene(1, 10);
        assert_eq!(scene.min_dirty_path(), 11);
        assert!(!scene.is_clean(0.5).unwrap()); // 11 >= 5
        let empty = RenormScene::classify(&BTreeSet::new(), 1, 10).unwrap();
        for eps in [0.01, 0.5, 0.99] {
            assert!(empty.is_clean(eps).unwrap());
        }
        // min = 2 at r = 4: eps = 0.5 gives the boundary 2 < 2, strictly false
        let scene = RenormScene::classify(&set(&[(0, 0), (3, 0), (-3, 0), (0, 3), (0, -3)]), 1, 4)
            .unwrap();
        assert_eq!(scene.min_dirty_path(), 2);
        assert!(!scene.is_clean(0.5).unwrap());
        assert!(scene.is_clean(0.51).unwrap());
        assert!(scene.is_clean(1.0).is_err());
        assert!(scene.is_clean(0.0).is_err());
    }

    #[test]
    fn growing_the_dry_set_never_cleans_a_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..60 {
            let l = 1 + (rng.random::<u32>() % 2) as i32;
            let r = 2 + (rng.random::<u32>() % 2) as i32;
            let reach = ((r + 1) * (2 * l + 1)) as i32;
            let mut a = BTreeSet::new();
            for _ in 0..(rng.random::<u32>() % 12) {
                let x = (rng.random::<u32>() % (2 * reach as u32 + 1)) as i32 - reach;
                let y = (rng.random::<u32>() % (2 * reach as u32 + 1)) as i32 - reach;
                a.insert(Site::new(x, y));
            }
            let before = RenormScene::classify(&a, l, r).unwrap().min_dirty_path();
            let x = (rng.random::<u32>() % (2 * reach as u32 + 1)) as i32 - reach;
            let y = (rng.random::<u32>() % (2 * reach as u32 + 1)) as i32 - reach;
            a.insert(Site::new(x, y));
            let after = RenormScene::classify(&a, l, r).unwrap().min_dirty_path();
            assert!(after >= before, "adding dirt reduced the path count");
        }
    }

    #[test]
    fn bfs_agrees_with_subset_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..40 {
            let l = 1;
            let r = 1 + (case % 2) as i32;
            let reach = ((r + 1) * (2 * l + 1)) as i32;
            let mut a = BTreeSet::new();
            let fill = rng.random::<u32>() % 10;
            for _ in 0..fill {
                let x = (rng.random::<u32>() % (2 * reach as u32 + 1)) as i32 - reach;
                let y = (rng.random::<u32>() % (2 * reach as u32 + 1)) as i32 - reach;
                a.insert(Site::new(x, y));
            }
            let scene = RenormScene::classify(&a, l, r).unwrap();
            assert_eq!(
                scene.min_dirty_path(),
                min_dirty_path_by_subsets(&scene),
                "scene {case}: dirty {:?}",
                scene.dirty_blocks()
            );
        }
        // and the dense extreme, where the subset oracle must walk up to
        // the full count
        let scene = all_dirty_scene(1, 1);
        assert_eq!(min_dirty_path_by_subsets(&scene), 2);
        assert_eq!(scene.min_dirty_path(), 2);
    }

    #[test]
    fn single_component_tuple() {
        let b = set(&[(0, 0)]);
        let a = set(&[(3, 0)]);
        let t = admissible_tuple(&a, &b, 100).unwrap();
        assert_eq!(t.k, vec![2]);
        // the radius-2 graph-distance ball has 13 sites
        assert_eq!(t.enlarged[0].len(), 13);
        assert!(t.size_property_holds()); // 13 >= 1 + 2
        assert!(t.is_admissible());
        assert!(is_dry_neighbour(&a, &t.union_enlarged()));
    }

    #[test]
    fn two_component_tuple_with_diagonal_gap() {
        // the shape that forces shell-by-shell enlargements: component
        // boundaries must stay reachable by A after both components grow
        let b = set(&[(0, 0), (3, 3)]);
        let a = set(&[(0, 2)]);
        let t = admissible_tuple(&a, &b, 100).unwrap();
        assert_eq!(t.components.len(), 2);
        assert_eq!(t.k, vec![1, 3]);
        assert!(t.is_admissible());
        assert!(t.size_property_holds());
        assert!(is_dry_neighbour(&a, &t.union_enlarged()));
        assert!(t.certified_by(&a));
        // the greedy tuple is the unique admissible one matching A
        let matches = dry_neighbour_tuples(&a, &b).unwrap();
        assert_eq!(matches, vec![vec![1, 3]]);
        assert_eq!(certified_tuples(&a, &b).unwrap(), vec![vec![1, 3]]);
    }

    #[test]
    fn dry_neighbour_membership_alone_does_not_pin_the_tuple() {
        // a satellite component of B resting one step outside a shrunken
        // first enlargement reconnects it to the same certifying site, so
        // two tuples pass the dry-neighbour test; only the greedy one is
        // certified
        let b = set(&[(1, -6), (1, 3), (2, -5), (5, -6)]);
        let a = set(&[(-4, -3), (-2, 1), (-2, 4), (1, 5), (6, -6)]);
        let t = admissible_tuple(&a, &b, 100).unwrap();
        assert_eq!(t.k, vec![4, 1, 0, 0]);
        let matches = dry_neighbour_tuples(&a, &b).unwrap();
        assert_eq!(matches, vec![vec![3, 1, 0, 0], vec![4, 1, 0, 0]]);
        assert_eq!(certified_tuples(&a, &b).unwrap(), vec![t.k]);
    }

    #[test]
    fn swallowed_component_gets_radius_zero() {
        // B2 sits right next to B1's enlargement: no positive radius fits
        let b = set(&[(0, 0), (2, 0)]);
        let a = set(&[(5, 0)]);
        let t = admissible_tuple(&a, &b, 100).unwrap();
        assert_eq!(t.components.len(), 2);
        assert_eq!(t.k[1], 0, "tuple {:?}", t.k);
        assert!(t.is_admissible());
        assert!(t.size_property_holds());
        assert!(is_dry_neighbour(&a, &t.union_enlarged()));
    }

    #[test]
    fn tuple_preconditions() {
        let b = set(&[(0, 0)]);
        assert!(matches!(
            admissible_tuple(&BTreeSet::new(), &b, 100),
            Err(RenormError::EmptyInput(_))
        ));
        assert!(matches!(
            admissible_tuple(&set(&[(0, 0)]), &b, 100),
            Err(RenormError::Overlap(_))
        ));
        assert!(matches!(
            admissible_tuple(&set(&[(50, 0)]), &b, 10),
            Err(RenormError::EnlargementCap { cap: 10, component: 0 })
        ));
        assert!(matches!(
            admissible_tuple(&set(&[(3, 0)]), &BTreeSet::new(), 100),
            Err(RenormError::EmptyInput(_))
        ));
    }

    #[test]
    fn random_tuples_satisfy_both_properties_and_uniqueness() {
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let mut done = 0;
        while done < 80 {
            let mut b = BTreeSet::new();
            for _ in 0..(1 + rng.random::<u32>() % 5) {
                let x = (rng.random::<u32>() % 13) as i32 - 6;
                let y = (rng.random::<u32>() % 13) as i32 - 6;
                b.insert(Site::new(x, y));
            }
            let mut a = BTreeSet::new();
            for _ in 0..(1 + rng.random::<u32>() % 6) {
                let x = (rng.random::<u32>() % 13) as i32 - 6;
                let y = (rng.random::<u32>() % 13) as i32 - 6;
                if !b.contains(&Site::new(x, y)) {
                    a.insert(Site::new(x, y));
                }
            }
            if a.is_empty() {
                continue;
            }
            done += 1;
            let t = admissible_tuple(&a, &b, 1000).unwrap();
            assert!(t.is_admissible());
            assert!(t.size_property_holds(), "B {b:?} A {a:?} k {:?}", t.k);
            assert!(
                is_dry_neighbour(&a, &t.union_enlarged()),
                "B {b:?} A {a:?} k {:?}",
                t.k
            );
            // the greedy tuple always passes the dry-neighbour test and is
            // the unique certified tuple
            let matches = dry_neighbour_tuples(&a, &b).unwrap();
            assert!(matches.contains(&t.k), "B {b:?} A {a:?} k {:?}", t.k);
            let certified = certified_tuples(&a, &b).unwrap();
            assert_eq!(certified, vec![t.k.clone()], "B {b:?} A {a:?}");
        }
    }

    #[test]
    fn clean_curve_degenerate_streams_flagged() {
        // all-empty dry sets: certainly clean at every radius
        let mut acc = CleanProbAccumulator::new(1, 0.5, &[2, 3], 5, None).unwrap();
        let empty = BTreeSet::new();
        for _ in 0..40 {
            acc.push(&empty).unwrap();
        }
        let curve = acc.finalize().unwrap();
        assert!(curve.degenerate);
        for p in &curve.points {
            assert_eq!(p.p_clean, 1.0);
            assert_eq!(p.degeneracy, Degeneracy::AllClean);
        }
        // fully dirty window: never clean
        let side = 3;
        let mut full = BTreeSet::new();
        for zx in -4..=4 {
            for zy in -4..=4 {
                full.insert(Site::new(zx * side, zy * side));
            }
        }
        let mut acc = CleanProbAccumulator::new(1, 0.5, &[2, 3], 5, None).unwrap();
        for _ in 0..40 {
            acc.push(&full).unwrap();
        }
        let curve = acc.finalize().unwrap();
        assert!(curve.degenerate);
        for p in &curve.points {
            assert_eq!(p.p_clean, 0.0);
            assert_eq!(p.degeneracy, Degeneracy::AllDirty);
        }
        assert!(curve.decay_fit.is_none());
    }

    #[test]
    fn clean_curve_mixed_stream_and_merge() {
        // alternate whole batches of clean and dirty samples: p = 1/2 with
        // maximal between-batch spread, so the standard error is positive
        let side = 3;
        let mut full = BTreeSet::new();
        for zx in -3..=3 {
            for zy in -3..=3 {
                full.insert(Site::new(zx * side, zy * side));
            }
        }
        let empty = BTreeSet::new();
        let mut a = CleanProbAccumulator::new(1, 0.5, &[2], 10, None).unwrap();
        let mut b = CleanProbAccumulator::new(1, 0.5, &[2], 10, None).unwrap();
        for i in 0..100 {
            a.push(if (i / 10) % 2 == 0 { &empty } else { &full }).unwrap();
            b.push(if (i / 10) % 2 == 0 { &full } else { &empty }).unwrap();
        }
        a.merge(b);
        let curve = a.finalize().unwrap();
        let p = &curve.points[0];
        assert_eq!(p.n, 200);
        assert!((p.p_clean - 0.5).abs() < 1e-12);
        assert!(p.se > 0.0);
        assert_eq!(p.degeneracy, Degeneracy::None);
    }

    #[test]
    fn window_truncation_flagged_against_small_box() {
        // window needs (r+1)(2l+1)+l = 47 sites of reach but the box radius
        // is 32: flagged, not an error
        let acc = CleanProbAccumulator::new(2, 0.5, &[8], 10, Some(32)).unwrap();
        assert!(acc.window_truncated);
        let acc = CleanProbAccumulator::new(2, 0.5, &[4], 10, Some(32)).unwrap();
        assert!(!acc.window_truncated);
    }

    #[test]
    fn subset_chooser_enumerates_binomials() {
        let mut c = SubsetChooser::new(5, 2);
        let mut n = 0;
        let mut seen = BTreeSet::new();
        while let Some(s) = c.next_subset() {
            assert_eq!(s.len(), 2);
            seen.insert(s);
            n += 1;
        }
        assert_eq!(n, 10);
        assert_eq!(seen.len(), 10);
        let mut c = SubsetChooser::new(3, 0);
        assert_eq!(c.next_subset(), Some(vec![]));
        assert_eq!(c.next_subset(), None);
    }
}
