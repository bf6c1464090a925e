//! The experiment subcommands. Each one samples or enumerates through the
//! core library and writes plot-ready artifacts into the run directory.

use crate::config::ExperimentConfig;
use crate::output::RunDir;
use anyhow::Context;
use deltapin::estimators::{
    covariance_experiment, fit_mass, origin_pairs, variance_growth, CovCurve,
};
use deltapin::gibbs::{run_chain, run_replicas, Pinning};
use deltapin::hswalk::{hitting_probability, occupation_time, OccupationParams, SyntheticRates};
use deltapin::lattice::{dist_to_set, Norm, Region, Site};
use deltapin::oracle::{enumerate_rho, snake_family, GreenMatrix};
use deltapin::renorm::{
    admissible_tuple, certified_tuples, dry_neighbour_tuples, is_dry_neighbour,
    CleanProbAccumulator,
};
use deltapin::seed::{derive_seed, tag};
use deltapin::stats::{BatchCov, BatchMean};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeSet;

fn csv_f(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x}")
    }
}

#[derive(Serialize)]
struct MomentReport {
    mean: f64,
    se: f64,
}

#[derive(Serialize)]
struct SampleSummary {
    replicas: u32,
    snapshots: u64,
    origin_height: MomentReport,
    origin_height_variance: MomentReport,
    dry_density: MomentReport,
}

/// Run the Gibbs chains and summarize the stream.
pub fn sample(cfg: &ExperimentConfig, run: &mut RunDir, seed: u64) -> anyhow::Result<()> {
    let region = Region::lambda(cfg.lattice.n)?;
    let pot = cfg.potential()?;
    let pinning = cfg.pinning();
    let params = cfg.sampler_params(Some(seed));
    let origin = Site::new(0, 0);
    let batch = BatchCov::size_for(params.snapshots_per_replica());
    let accs = run_replicas(&params, |rep| {
        let mut height = BatchMean::new(batch);
        let mut height_sq = BatchCov::new(batch);
        let mut density = BatchMean::new(batch);
        run_chain(&region, &pot, pinning, &BTreeSet::new(), &params, rep, |_, f| {
            let h = f.height(origin);
            height.push(h);
            height_sq.push(h, h);
            density.push(f.pinned_count() as f64 / f.len() as f64);
        })?;
        Ok((height, height_sq, density))
    })?;
    let (mut height, mut height_sq, mut density) = (None, None, None);
    for (h, hs, d) in accs {
        merge_into(&mut height, h, BatchMean::merge);
        merge_into(&mut height_sq, hs, BatchCov::merge);
        merge_into(&mut density, d, BatchMean::merge);
    }
    let height = height.unwrap().finalize()?;
    let height_sq = height_sq.unwrap().finalize()?;
    let density = density.unwrap().finalize()?;
    run.write_json(
        "summary.json",
        &SampleSummary {
            replicas: params.replicas,
            snapshots: height.n,
            origin_height: MomentReport {
                mean: height.mean,
                se: height.se,
            },
            origin_height_variance: MomentReport {
                mean: height_sq.cov,
                se: height_sq.se,
            },
            dry_density: MomentReport {
                mean: density.mean,
                se: density.se,
            },
        },
    )?;
    if matches!(pinning, Pinning::Off) {
        run.warn("pinning disabled: dry density is identically zero");
    }
    Ok(())
}

fn merge_into<T>(slot: &mut Option<T>, next: T, merge: impl Fn(&mut T, T)) {
    match slot.as_mut() {
        None => *slot = Some(next),
        Some(cur) => merge(cur, next),
    }
}

fn run_covariance(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<CovCurve> {
    let region = Region::lambda(cfg.lattice.n)?;
    let pot = cfg.potential()?;
    let params = cfg.sampler_params(Some(seed));
    let pairs = origin_pairs(cfg.lattice.n, cfg.fit.max_step, cfg.fit.margin)?;
    if pairs.is_empty() {
        anyhow::bail!(
            "no usable pairs: fit.max_step {} exceeds the boundary margin on a box of radius {}",
            cfg.fit.max_step,
            cfg.lattice.n
        );
    }
    Ok(covariance_experiment(
        &region,
        &pot,
        cfg.pinning(),
        &params,
        &pairs,
        Norm::L2,
    )?)
}

fn write_curve(run: &mut RunDir, curve: &CovCurve) -> anyhow::Result<()> {
    run.write_csv(
        "covariance.csv",
        "dx,dy,distance,cov,se",
        curve.points.iter().map(|p| {
            format!(
                "{},{},{},{},{}",
                p.j.x - p.i.x,
                p.j.y - p.i.y,
                csv_f(p.distance),
                csv_f(p.cov),
                csv_f(p.se)
            )
        }),
    )?;
    Ok(())
}

/// Estimate the covariance curve from the origin.
pub fn covariance(cfg: &ExperimentConfig, run: &mut RunDir, seed: u64) -> anyhow::Result<()> {
    let curve = run_covariance(cfg, seed)?;
    write_curve(run, &curve)?;
    Ok(())
}

#[derive(Serialize)]
struct MassReport {
    j: Option<f64>,
    mass: f64,
    ci_lo: f64,
    ci_hi: f64,
    r2: f64,
    n_points_used: usize,
    n_excluded: usize,
    decaying: bool,
}

/// Covariance curve plus the exponential-decay fit.
pub fn mass(cfg: &ExperimentConfig, run: &mut RunDir, seed: u64) -> anyhow::Result<()> {
    let curve = run_covariance(cfg, seed)?;
    write_curve(run, &curve)?;
    let fit = fit_mass(&curve, cfg.fit.d_min, cfg.fit.d_max)?;
    if fit.n_excluded > 0 {
        run.warn(format!(
            "{} in-range points were nonpositive or below the noise floor and were excluded from the log fit",
            fit.n_excluded
        ));
    }
    if !fit.decaying {
        run.warn("fitted decay rate is not positive");
    }
    run.write_json(
        "mass.json",
        &MassReport {
            j: match cfg.pinning() {
                Pinning::Delta(j) => Some(j),
                Pinning::Off => None,
            },
            mass: fit.mass,
            ci_lo: fit.ci95.0,
            ci_hi: fit.ci95.1,
            r2: fit.r2,
            n_points_used: fit.n_used,
            n_excluded: fit.n_excluded,
            decaying: fit.decaying,
        },
    )?;
    Ok(())
}

/// Decay-rate fit across the configured pinning strengths.
pub fn mass_scan(cfg: &ExperimentConfig, run: &mut RunDir, seed: u64) -> anyhow::Result<()> {
    if !cfg.pinning.enabled {
        anyhow::bail!("mass-scan varies pinning.j and needs pinning enabled");
    }
    let region = Region::lambda(cfg.lattice.n)?;
    let pot = cfg.potential()?;
    let pairs = origin_pairs(cfg.lattice.n, cfg.fit.max_step, cfg.fit.margin)?;
    let mut rows = Vec::new();
    for (idx, &j) in cfg.scan.j_list.iter().enumerate() {
        // every scan point gets its own decorrelated chain seed
        let mut params = cfg.sampler_params(Some(seed));
        params.seed = derive_seed(seed, &[idx as u64]);
        let curve =
            covariance_experiment(&region, &pot, Pinning::Delta(j), &params, &pairs, Norm::L2)?;
        match fit_mass(&curve, cfg.fit.d_min, cfg.fit.d_max) {
            Ok(fit) => rows.push(format!(
                "{},{},{},{},{},{},{}",
                csv_f(j),
                csv_f(fit.mass),
                csv_f(fit.ci95.0),
                csv_f(fit.ci95.1),
                csv_f(fit.r2),
                fit.n_used,
                fit.n_excluded
            )),
            Err(e) => run.warn(format!("J = {j}: fit skipped ({e})")),
        }
    }
    run.write_csv("mass.csv", "J,m,ci_lo,ci_hi,r2,n_points_used,n_excluded", rows)?;
    Ok(())
}

#[derive(Serialize)]
struct DecayReport {
    slope: f64,
    intercept: f64,
    r2: f64,
}

#[derive(Serialize)]
struct DrysetReport {
    l: i32,
    epsilon: f64,
    dry_density: MomentReport,
    decay_fit: Option<DecayReport>,
    degenerate: bool,
    window_truncated: bool,
}

/// Dry-set statistics over the chain: density, clean probabilities per
/// radius, and the decay fit of log P(clean).
pub fn dryset_stats(cfg: &ExperimentConfig, run: &mut RunDir, seed: u64) -> anyhow::Result<()> {
    if !cfg.pinning.enabled {
        run.warn("pinning disabled: the dry set is empty and every sample is clean");
    }
    let region = Region::lambda(cfg.lattice.n)?;
    let pot = cfg.potential()?;
    let pinning = cfg.pinning();
    let params = cfg.sampler_params(Some(seed));
    let batch = BatchCov::size_for(params.snapshots_per_replica());
    let results = run_replicas(&params, |rep| {
        let mut acc = CleanProbAccumulator::new(
            cfg.renorm.l,
            cfg.renorm.epsilon,
            &cfg.renorm.r_list,
            batch,
            Some(cfg.lattice.n),
        )
        .map_err(|e| deltapin::gibbs::GibbsError::BadParams(e.to_string()))?;
        let mut density = BatchMean::new(batch);
        run_chain(&region, &pot, pinning, &BTreeSet::new(), &params, rep, |_, f| {
            acc.push(&f.dry_set()).expect("validated radii");
            density.push(f.pinned_count() as f64 / f.len() as f64);
        })?;
        Ok((acc, density))
    })?;
    let (mut acc, mut density) = (None, None);
    for (a, d) in results {
        merge_into(&mut acc, a, CleanProbAccumulator::merge);
        merge_into(&mut density, d, BatchMean::merge);
    }
    let curve = acc.unwrap().finalize()?;
    let density = density.unwrap().finalize()?;
    run.write_csv(
        "cleanprob.csv",
        "r,p_clean,se,n_samples",
        curve.points.iter().map(|p| {
            format!("{},{},{},{}", p.r, csv_f(p.p_clean), csv_f(p.se), p.n)
        }),
    )?;
    if curve.degenerate {
        run.warn("degenerate clean-probability stream: some radius saw only clean or only dirty samples");
    }
    if curve.window_truncated {
        run.warn(format!(
            "renormalized window exceeds the sampled box at the largest radius; \
             blocks outside the box of radius {} are clean by construction",
            cfg.lattice.n
        ));
    }
    if curve.decay_fit.is_none() {
        run.warn("no decay fit: fewer than three non-degenerate radii");
    }
    run.write_json(
        "dryset.json",
        &DrysetReport {
            l: curve.l,
            epsilon: curve.epsilon,
            dry_density: MomentReport {
                mean: density.mean,
                se: density.se,
            },
            decay_fit: curve.decay_fit.as_ref().map(|f| DecayReport {
                slope: f.slope,
                intercept: f.intercept,
                r2: f.r2,
            }),
            degenerate: curve.degenerate,
            window_truncated: curve.window_truncated,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct PairCheck {
    i: [i32; 2],
    j: [i32; 2],
    occupation: f64,
    occupation_se: f64,
    covariance: f64,
    covariance_se: f64,
    exact_covariance: bool,
    combined_se: f64,
    consistent: bool,
}

#[derive(Serialize)]
struct HsVerifyReport {
    replicas: u32,
    pre_sweeps: u64,
    dt: f64,
    pairs: Vec<PairCheck>,
    all_consistent: bool,
}

#[derive(Serialize)]
struct TrajRow {
    replica: u32,
    t: f64,
    x: i32,
    y: i32,
}

/// Check the walk representation: occupation times against covariances of
/// the unpinned field, pair by pair.
pub fn hs_verify(
    cfg: &ExperimentConfig,
    run: &mut RunDir,
    seed: u64,
    dump_trajectories: bool,
) -> anyhow::Result<()> {
    let region = Region::lambda(cfg.lattice.n)?;
    let pot = cfg.potential()?;
    if cfg.pinning.enabled {
        run.warn("hs-verify compares against the unpinned field; pinning.j is ignored here");
    }
    let pairs: Vec<(Site, Site)> = cfg
        .hswalk
        .pairs
        .iter()
        .map(|&[ix, iy, jx, jy]| (Site::new(ix, iy), Site::new(jx, jy)))
        .collect();
    for &(i, j) in &pairs {
        if !region.contains(i) || !region.contains(j) {
            anyhow::bail!("hswalk.pairs site outside the box of radius {}", cfg.lattice.n);
        }
    }
    // covariance reference: exact Green function in the quadratic case,
    // sampled otherwise
    let exact = pot.quadratic_kappa();
    let cov_curve = if exact.is_none() {
        let params = cfg.sampler_params(Some(seed));
        Some(covariance_experiment(
            &region,
            &pot,
            Pinning::Off,
            &params,
            &pairs,
            Norm::L2,
        )?)
    } else {
        None
    };
    let mut green = match exact {
        Some(kappa) => Some(GreenMatrix::new(&region, &BTreeSet::new(), kappa)?),
        None => None,
    };
    let mut checks = Vec::new();
    let mut dumped = Vec::new();
    for (idx, &(i, j)) in pairs.iter().enumerate() {
        let params = OccupationParams {
            replicas: cfg.hswalk.replicas,
            seed: derive_seed(seed, &[tag::HS_WALK, idx as u64]),
            horizon: cfg.hswalk.horizon,
            pre_sweeps: cfg.hswalk.pre_sweeps,
            dt: cfg.hswalk.dt,
            keep_trajectories: if dump_trajectories && idx == 0 { 20 } else { 0 },
        };
        let occ = occupation_time(&region, &BTreeSet::new(), i, j, &pot, &params)?;
        if occ.censor_warning {
            run.warn(format!(
                "pair {idx}: {:.1}% of walks were censored at the horizon",
                occ.censored_fraction * 100.0
            ));
        }
        if idx == 0 {
            for (rep, traj) in &occ.trajectories {
                for &(t, s) in &traj.jumps {
                    dumped.push(TrajRow {
                        replica: *rep,
                        t,
                        x: s.x,
                        y: s.y,
                    });
                }
            }
        }
        let (cov, cov_se) = match (&mut green, &cov_curve) {
            (Some(g), _) => (g.get(i, j), 0.0),
            (None, Some(curve)) => {
                let p = &curve.points[idx];
                (p.cov, p.se)
            }
            (None, None) => unreachable!("one covariance route is always chosen"),
        };
        let combined_se = (occ.se * occ.se + cov_se * cov_se).sqrt();
        let consistent = (occ.mean - cov).abs() <= 3.0 * combined_se;
        if !consistent {
            run.warn(format!(
                "pair {idx}: occupation {} vs covariance {cov} differ by more than 3 SE",
                occ.mean
            ));
        }
        checks.push(PairCheck {
            i: [i.x, i.y],
            j: [j.x, j.y],
            occupation: occ.mean,
            occupation_se: occ.se,
            covariance: cov,
            covariance_se: cov_se,
            exact_covariance: exact.is_some(),
            combined_se,
            consistent,
        });
    }
    if dump_trajectories {
        run.write_jsonl("trajectories.jsonl", dumped)?;
    }
    let all_consistent = checks.iter().all(|c| c.consistent);
    run.write_json(
        "hsverify.json",
        &HsVerifyReport {
            replicas: cfg.hswalk.replicas,
            pre_sweeps: cfg.hswalk.pre_sweeps,
            dt: cfg.hswalk.dt,
            pairs: checks,
            all_consistent,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct HitRow {
    field: u32,
    distance: u64,
    p_hat: f64,
    se: f64,
    bound: f64,
    consistent: bool,
}

#[derive(Serialize)]
struct HitBoundReport {
    c_v: f64,
    per_step_factor: f64,
    box_radius: i32,
    replicas_per_estimate: u32,
    rows: Vec<HitRow>,
    violations: usize,
}

/// Estimate walk hitting probabilities under random bounded-rate fields
/// and compare each against the per-step lower bound.
pub fn hit_bound(cfg: &ExperimentConfig, run: &mut RunDir, seed: u64) -> anyhow::Result<()> {
    let pot = cfg.potential()?;
    let c_v = pot.c_v();
    let origin = Site::new(0, 0);
    let mut rows = Vec::new();
    for field in 0..cfg.hit_bound.fields {
        let rates = SyntheticRates::new(
            derive_seed(seed, &[tag::SYNTHETIC_RATES, field as u64]),
            c_v,
        );
        for &d in &cfg.hit_bound.distances {
            // split the l1 distance across both axes to vary direction
            let target = Site::new((d - d / 2) as i32, (d / 2) as i32);
            let est = hitting_probability(
                origin,
                target,
                cfg.hit_bound.box_radius,
                &rates,
                cfg.hit_bound.replicas,
                derive_seed(seed, &[tag::HIT_BOUND, field as u64, d as u64]),
            )?;
            rows.push(HitRow {
                field,
                distance: est.l1_distance,
                p_hat: est.p_hat,
                se: est.se,
                bound: est.bound,
                consistent: est.consistent_with_bound,
            });
        }
    }
    let violations = rows.iter().filter(|r| !r.consistent).count();
    if violations > 0 {
        run.warn(format!(
            "{violations} estimates fell more than 3 SE below the per-step bound"
        ));
    }
    run.write_json(
        "hitbound.json",
        &HitBoundReport {
            c_v,
            per_step_factor: 1.0 / (3.0 * c_v * c_v + 1.0),
            box_radius: cfg.hit_bound.box_radius,
            replicas_per_estimate: cfg.hit_bound.replicas,
            rows,
            violations,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct AvoidanceReport {
    expected_dry_size: f64,
    log_zhat: f64,
    rows: Vec<AvoidanceJsonRow>,
    rate: f64,
    intercept: f64,
}

#[derive(Serialize)]
struct AvoidanceJsonRow {
    b_size: usize,
    avoid_prob: f64,
    neg_log: f64,
}

/// Exact enumeration of the pinned measure on a small box, plus the
/// avoidance-probability scan along a nested block family.
pub fn enumerate(cfg: &ExperimentConfig, run: &mut RunDir, _seed: u64) -> anyhow::Result<()> {
    let pot = cfg.potential()?;
    let kappa = pot
        .quadratic_kappa()
        .ok_or_else(|| anyhow::anyhow!("enumerate requires the gaussian family"))?;
    let j = match cfg.pinning() {
        Pinning::Delta(j) => j,
        Pinning::Off => anyhow::bail!("enumerate requires pinning enabled"),
    };
    let region = Region::lambda(cfg.lattice.n)?;
    let table = enumerate_rho(&region, j, kappa, deltapin::oracle::DEFAULT_ENUM_CAP)
        .context("enumeration refused")?;
    run.write_csv(
        "enumerate.csv",
        "mask,size,logZ,rho",
        (0..table.num_masks()).map(|mask| {
            format!(
                "{},{},{},{}",
                mask,
                (mask as u64).count_ones(),
                csv_f(table.log_z(mask)),
                csv_f(table.rho(mask))
            )
        }),
    )?;
    let family = snake_family(&region);
    let scan = deltapin::oracle::avoidance_scan(&table, &family)?;
    run.write_json(
        "avoidance.json",
        &AvoidanceReport {
            expected_dry_size: table.expected_dry_size(),
            log_zhat: table.log_zhat(),
            rows: scan
                .rows
                .iter()
                .map(|r| AvoidanceJsonRow {
                    b_size: r.b_size,
                    avoid_prob: r.avoid_prob,
                    neg_log: r.neg_log,
                })
                .collect(),
            rate: scan.rate,
            intercept: scan.intercept,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct TupleCheckReport {
    instances: u32,
    property_failures: u32,
    maximality_failures: u32,
    exhaustive_checked: u32,
    exhaustive_failures: u32,
    max_components: usize,
}

/// Random-instance audit of the enlargement-tuple construction.
pub fn tuple_check(cfg: &ExperimentConfig, run: &mut RunDir, seed: u64) -> anyhow::Result<()> {
    let n = cfg.tuple_check.n;
    let side = (2 * n + 1) as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tag::TUPLE_CHECK]));
    let site = |rng: &mut ChaCha8Rng| {
        Site::new(
            (rng.random::<u32>() % side) as i32 - n,
            (rng.random::<u32>() % side) as i32 - n,
        )
    };
    let mut property_failures = 0u32;
    let mut maximality_failures = 0u32;
    let mut exhaustive_checked = 0u32;
    let mut exhaustive_failures = 0u32;
    let mut max_components = 0usize;
    let mut done = 0u32;
    while done < cfg.tuple_check.instances {
        let mut b = BTreeSet::new();
        for _ in 0..(1 + rng.random::<u32>() % 5) {
            b.insert(site(&mut rng));
        }
        let mut a = BTreeSet::new();
        for _ in 0..(1 + rng.random::<u32>() % 6) {
            let s = site(&mut rng);
            if !b.contains(&s) {
                a.insert(s);
            }
        }
        if a.is_empty() {
            continue;
        }
        done += 1;
        let t = admissible_tuple(&a, &b, 10_000)?;
        max_components = max_components.max(t.components.len());
        if !(t.is_admissible()
            && t.size_property_holds()
            && is_dry_neighbour(&a, &t.union_enlarged()))
        {
            property_failures += 1;
            continue;
        }
        if !t.certified_by(&a) {
            maximality_failures += 1;
            continue;
        }
        // exhaustive uniqueness check where the tuple space is small
        let space: u64 = t
            .components
            .iter()
            .map(|c| {
                c.iter()
                    .map(|&s| dist_to_set(s, &a, Norm::L1).expect("a nonempty") as u64)
                    .min()
                    .unwrap()
            })
            .product();
        if space <= 20_000 {
            exhaustive_checked += 1;
            let certified = certified_tuples(&a, &b)?;
            let dry = dry_neighbour_tuples(&a, &b)?;
            if certified != vec![t.k.clone()] || !dry.contains(&t.k) {
                exhaustive_failures += 1;
            }
        }
    }
    let report = TupleCheckReport {
        instances: cfg.tuple_check.instances,
        property_failures,
        maximality_failures,
        exhaustive_checked,
        exhaustive_failures,
        max_components,
    };
    if property_failures + maximality_failures + exhaustive_failures > 0 {
        run.warn("tuple construction violated a property; see tuplecheck.json");
    }
    run.write_json("tuplecheck.json", &report)?;
    Ok(())
}

/// Variance of the origin height across box sizes.
pub fn deloc_scan(cfg: &ExperimentConfig, run: &mut RunDir, seed: u64) -> anyhow::Result<()> {
    let pot = cfg.potential()?;
    let params = cfg.sampler_params(Some(seed));
    let table = variance_growth(&cfg.scan.n_list, &pot, cfg.pinning(), &params)?;
    run.write_csv(
        "deloc.csv",
        "n,var,se,n_samples,exact",
        table.iter().map(|p| {
            format!(
                "{},{},{},{},{}",
                p.n,
                csv_f(p.var),
                csv_f(p.se),
                p.n_samples,
                p.exact
            )
        }),
    )?;
    Ok(())
}
