//! Square-lattice geometry: sites, finite boxes, renormalized blocks,
//! set enlargements and distances.
//!
//! Conventions used throughout the crate:
//! * boxes and blocks are l-infinity balls; block centers live on the
//!   sublattice (2l+1)Z^2 so blocks of radius l tile the plane exactly;
//! * connectivity (components, walk steps, exterior boundaries) is always
//!   nearest-neighbour, i.e. l1;
//! * raster order means rows of increasing y, increasing x within a row.

use std::collections::{BTreeSet, HashMap, VecDeque};

/// A point of Z^2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Site {
    pub x: i32,
    pub y: i32,
}

impl Site {
    pub const fn new(x: i32, y: i32) -> Self {
        Site { x, y }
    }

    /// The four nearest neighbours in fixed order E, W, N, S.
    pub fn neighbors(self) -> [Site; 4] {
        [
            Site::new(self.x + 1, self.y),
            Site::new(self.x - 1, self.y),
            Site::new(self.x, self.y + 1),
            Site::new(self.x, self.y - 1),
        ]
    }
}

impl std::fmt::Display for Site {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Distance convention for set operations and fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Norm {
    L1,
    L2,
    #[default]
    Linf,
}

impl Norm {
    pub fn dist(self, a: Site, b: Site) -> f64 {
        let dx = (a.x - b.x).abs() as i64;
        let dy = (a.y - b.y).abs() as i64;
        match self {
            Norm::L1 => (dx + dy) as f64,
            Norm::L2 => ((dx * dx + dy * dy) as f64).sqrt(),
            Norm::Linf => dx.max(dy) as f64,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LatticeError {
    #[error("operation requires a nonempty site set")]
    EmptySet,
    #[error("block radius must be >= 1, got {0}")]
    BadBlockRadius(i32),
    #[error("box radius must be >= 0, got {0}")]
    BadBoxRadius(i32),
    #[error("duplicate site {0} in region definition")]
    DuplicateSite(Site),
}

/// The centered box Lambda_N = [-N, N]^2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticeBox {
    n: i32,
}

impl LatticeBox {
    pub fn new(n: i32) -> Result<Self, LatticeError> {
        if n < 0 {
            return Err(LatticeError::BadBoxRadius(n));
        }
        Ok(LatticeBox { n })
    }

    pub fn radius(&self) -> i32 {
        self.n
    }

    pub fn side(&self) -> i32 {
        2 * self.n + 1
    }

    pub fn num_sites(&self) -> usize {
        (self.side() as usize).pow(2)
    }

    pub fn contains(&self, s: Site) -> bool {
        s.x.abs() <= self.n && s.y.abs() <= self.n
    }

    /// All sites in raster order.
    pub fn sites(&self) -> Vec<Site> {
        let mut v = Vec::with_capacity(self.num_sites());
        for y in -self.n..=self.n {
            for x in -self.n..=self.n {
                v.push(Site::new(x, y));
            }
        }
        v
    }

    /// Exterior boundary: sites outside the box with a nearest neighbour inside.
    pub fn boundary(&self) -> Vec<Site> {
        let mut out = BTreeSet::new();
        for s in self.sites() {
            for nb in s.neighbors() {
                if !self.contains(nb) {
                    out.insert(nb);
                }
            }
        }
        out.into_iter().collect()
    }
}

/// A finite set of sites with a fixed raster-order indexing. Everything
/// outside a region is held at height zero (pinned boundary condition).
#[derive(Debug, Clone)]
pub struct Region {
    sites: Vec<Site>,
    index: HashMap<Site, usize>,
}

impl Region {
    pub fn from_sites(sites: Vec<Site>) -> Result<Self, LatticeError> {
        let mut index = HashMap::with_capacity(sites.len());
        for (i, &s) in sites.iter().enumerate() {
            if index.insert(s, i).is_some() {
                return Err(LatticeError::DuplicateSite(s));
            }
        }
        Ok(Region { sites, index })
    }

    /// The box Lambda_N in raster order.
    pub fn lambda(n: i32) -> Result<Self, LatticeError> {
        Ok(Self::from_sites(LatticeBox::new(n)?.sites()).expect("box sites are distinct"))
    }

    /// A w x h rectangle anchored at the origin, raster order.
    pub fn rect(w: i32, h: i32) -> Result<Self, LatticeError> {
        if w < 1 || h < 1 {
            return Err(LatticeError::BadBoxRadius(w.min(h)));
        }
        let mut v = Vec::with_capacity((w * h) as usize);
        for y in 0..h {
            for x in 0..w {
                v.push(Site::new(x, y));
            }
        }
        Ok(Self::from_sites(v).expect("rect sites are distinct"))
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site(&self, i: usize) -> Site {
        self.sites[i]
    }

    pub fn contains(&self, s: Site) -> bool {
        self.index.contains_key(&s)
    }

    pub fn index_of(&self, s: Site) -> Option<usize> {
        self.index.get(&s).copied()
    }
}

/// Center of the unique radius-l block containing `i`; centers lie on (2l+1)Z^2.
pub fn block_of(i: Site, l: i32) -> Result<Site, LatticeError> {
    if l < 1 {
        return Err(LatticeError::BadBlockRadius(l));
    }
    let m = 2 * l + 1;
    let c = |v: i32| (v + l).div_euclid(m) * m;
    Ok(Site::new(c(i.x), c(i.y)))
}

/// All sites of the radius-l block centered at `c` (a (2l+1)^2 square).
pub fn block_sites(c: Site, l: i32) -> Vec<Site> {
    let mut v = Vec::with_capacity(((2 * l + 1) * (2 * l + 1)) as usize);
    for y in (c.y - l)..=(c.y + l) {
        for x in (c.x - l)..=(c.x + l) {
            v.push(Site::new(x, y));
        }
    }
    v
}

/// k-enlargement D^(k) = { i : d(i, D) <= k } in the given norm.
pub fn enlargement(d: &BTreeSet<Site>, k: u32, norm: Norm) -> Result<BTreeSet<Site>, LatticeError> {
    if d.is_empty() {
        return Err(LatticeError::EmptySet);
    }
    let k = k as i32;
    let mut out = BTreeSet::new();
    for &s in d {
        for dy in -k..=k {
            for dx in -k..=k {
                let keep = match norm {
                    Norm::Linf => true,
                    Norm::L1 => dx.abs() + dy.abs() <= k,
                    Norm::L2 => dx * dx + dy * dy <= k * k,
                };
                if keep {
                    out.insert(Site::new(s.x + dx, s.y + dy));
                }
            }
        }
    }
    Ok(out)
}

/// Exterior boundary of a set: sites outside with a nearest neighbour inside.
pub fn exterior_boundary(d: &BTreeSet<Site>) -> BTreeSet<Site> {
    let mut out = BTreeSet::new();
    for &s in d {
        for nb in s.neighbors() {
            if !d.contains(&nb) {
                out.insert(nb);
            }
        }
    }
    out
}

/// Maximal nearest-neighbour connected components, ordered by their
/// lexicographically smallest site.
pub fn connected_components(b: &BTreeSet<Site>) -> Vec<BTreeSet<Site>> {
    let mut seen: BTreeSet<Site> = BTreeSet::new();
    let mut comps = Vec::new();
    // iterating the BTreeSet visits sites in Ord order, so components come out
    // sorted by their minimum without an extra sort
    for &start in b {
        if seen.contains(&start) {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        comp.insert(start);
        while let Some(s) = queue.pop_front() {
            for nb in s.neighbors() {
                if b.contains(&nb) && seen.insert(nb) {
                    comp.insert(nb);
                    queue.push_back(nb);
                }
            }
        }
        comps.push(comp);
    }
    comps
}

/// Distance from a site to a nonempty set in the given norm.
pub fn dist_to_set(i: Site, s: &BTreeSet<Site>, norm: Norm) -> Result<f64, LatticeError> {
    if s.is_empty() {
        return Err(LatticeError::EmptySet);
    }
    Ok(s.iter()
        .map(|&t| norm.dist(i, t))
        .fold(f64::INFINITY, f64::min))
}
