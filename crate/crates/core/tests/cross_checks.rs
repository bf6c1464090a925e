//! Cross-route consistency: every quantity that can be computed two
//! independent ways (exact enumeration, Gaussian linear algebra, Gibbs
//! sampling, killed walks) must agree within Monte Carlo error.

use std::collections::BTreeSet;

use deltapin::estimators::{covariance_experiment, variance_growth};
use deltapin::gibbs::{run_chain, run_replicas, Pinning, SamplerParams};
use deltapin::hswalk::{occupation_time, OccupationParams};
use deltapin::lattice::{Norm, Region, Site};
use deltapin::oracle::{enumerate_rho, exact_covariance, GreenMatrix, DEFAULT_ENUM_CAP};
use deltapin::potentials::{CertifiedPotential, Potential};
use deltapin::stats::{BatchCov, BatchMean};

fn gaussian(kappa: f64) -> CertifiedPotential {
    Potential::Gaussian { kappa }.certify().unwrap()
}

fn cosine(beta: f64) -> CertifiedPotential {
    Potential::CosinePerturbed { beta }.certify().unwrap()
}

/// Batch-means estimate of a per-snapshot scalar over all replicas.
fn sampled_mean<F>(
    region: &Region,
    pot: &CertifiedPotential,
    pinning: Pinning,
    frozen: &BTreeSet<Site>,
    params: &SamplerParams,
    f: F,
) -> deltapin::stats::MeanStats
where
    F: Fn(&deltapin::gibbs::FieldConfig) -> f64 + Sync + Send,
{
    let batch = BatchCov::size_for(params.snapshots_per_replica());
    let parts = run_replicas(params, |replica| {
        let mut acc = BatchMean::new(batch);
        run_chain(region, pot, pinning, frozen, params, replica, |_, cfg| {
            acc.push(f(cfg));
        })?;
        Ok(acc)
    })
    .unwrap();
    let mut merged: Option<BatchMean> = None;
    for part in parts {
        match merged.as_mut() {
            Some(m) => m.merge(part),
            None => merged = Some(part),
        }
    }
    merged.unwrap().finalize().unwrap()
}

#[test]
fn sampled_dry_set_size_matches_enumeration_on_a_3x3_region() {
    let region = Region::rect(3, 3).unwrap();
    let j = 0.4;
    let pot = gaussian(1.0);
    let table = enumerate_rho(&region, j, 1.0, DEFAULT_ENUM_CAP).unwrap();
    let exact = table.expected_dry_size();

    let params = SamplerParams {
        sweeps: 6000,
        burn_in: 500,
        thin: 2,
        seed: 01_17,
        replicas: 4,
    };
    let stats = sampled_mean(
        &region,
        &pot,
        Pinning::Delta(j),
        &BTreeSet::new(),
        &params,
        |cfg| cfg.pinned_count() as f64,
    );

    assert!(stats.se > 0.0 && stats.se < 0.05, "se = {}", stats.se);
    assert!(
        (stats.mean - exact).abs() <= 4.0 * stats.se,
        "sampled E|A| = {} +- {}, enumeration gives {}",
        stats.mean,
        stats.se,
        exact
    );
}

#[test]
fn pinned_covariance_matches_the_dry_mask_mixture_on_lambda_1() {
    let region = Region::lambda(1).unwrap();
    let j = 0.7;
    let pot = gaussian(1.0);
    let table = enumerate_rho(&region, j, 1.0, DEFAULT_ENUM_CAP).unwrap();
    let i = Site::new(0, 0);
    let k = Site::new(1, 0);
    let exact = exact_covariance(&table, i, k).unwrap();

    let params = SamplerParams {
        sweeps: 20_000,
        burn_in: 1000,
        thin: 2,
        seed: 02_17,
        replicas: 4,
    };
    let batch = BatchCov::size_for(params.snapshots_per_replica());
    let parts = run_replicas(&params, |replica| {
        let mut acc = BatchCov::new(batch);
        run_chain(
            &region,
            &pot,
            Pinning::Delta(j),
            &BTreeSet::new(),
            &params,
            replica,
            |_, cfg| acc.push(cfg.height(i), cfg.height(k)),
        )?;
        Ok(acc)
    })
    .unwrap();
    let mut merged: Option<BatchCov> = None;
    for part in parts {
        match merged.as_mut() {
            Some(m) => m.merge(part),
            None => merged = Some(part),
        }
    }
    let stats = merged.unwrap().finalize().unwrap();

    assert!(stats.se > 0.0);
    assert!(
        (stats.cov - exact).abs() <= 4.0 * stats.se,
        "sampled cov = {} +- {}, mask mixture gives {}",
        stats.cov,
        stats.se,
        exact
    );
}

#[test]
fn unpinned_variance_matches_the_green_function_on_lambda_4() {
    let region = Region::lambda(4).unwrap();
    let kappa = 1.3;
    let pot = gaussian(kappa);
    let origin = Site::new(0, 0);
    let mut green = GreenMatrix::new(&region, &BTreeSet::new(), kappa).unwrap();
    let exact = green.variance(origin);

    let params = SamplerParams {
        sweeps: 8000,
        burn_in: 800,
        thin: 2,
        seed: 03_17,
        replicas: 4,
    };
    let batch = BatchCov::size_for(params.snapshots_per_replica());
    let parts = run_replicas(&params, |replica| {
        let mut acc = BatchCov::new(batch);
        run_chain(
            &region,
            &pot,
            Pinning::Off,
            &BTreeSet::new(),
            &params,
            replica,
            |_, cfg| {
                let h = cfg.height(origin);
                acc.push(h, h);
            },
        )?;
        Ok(acc)
    })
    .unwrap();
    let mut merged: Option<BatchCov> = None;
    for part in parts {
        match merged.as_mut() {
            Some(m) => m.merge(part),
            None => merged = Some(part),
        }
    }
    let stats = merged.unwrap().finalize().unwrap();

    assert!(
        (stats.cov - exact).abs() <= 4.0 * stats.se,
        "sampled var = {} +- {}, Green function gives {}",
        stats.cov,
        stats.se,
        exact
    );
}

#[test]
fn walk_occupation_matches_field_covariance_with_a_frozen_dry_site() {
    let region = Region::lambda(2).unwrap();
    let pot = cosine(0.5);
    let a: BTreeSet<Site> = [Site::new(1, 1)].into_iter().collect();
    let i = Site::new(0, 0);
    let k = Site::new(0, 1);

    let walk_params = OccupationParams {
        replicas: 30_000,
        seed: 04_17,
        ..OccupationParams::default()
    };
    let occ = occupation_time(&region, &a, i, k, &pot, &walk_params).unwrap();
    assert!(!occ.censor_warning, "walk horizon too short");

    let params = SamplerParams {
        sweeps: 20_000,
        burn_in: 1000,
        thin: 2,
        seed: 05_17,
        replicas: 4,
    };
    let batch = BatchCov::size_for(params.snapshots_per_replica());
    let parts = run_replicas(&params, |replica| {
        let mut acc = BatchCov::new(batch);
        run_chain(&region, &pot, Pinning::Off, &a, &params, replica, |_, cfg| {
            acc.push(cfg.height(i), cfg.height(k));
        })?;
        Ok(acc)
    })
    .unwrap();
    let mut merged: Option<BatchCov> = None;
    for part in parts {
        match merged.as_mut() {
            Some(m) => m.merge(part),
            None => merged = Some(part),
        }
    }
    let field = merged.unwrap().finalize().unwrap();

    let combined = (occ.se * occ.se + field.se * field.se).sqrt();
    assert!(combined > 0.0);
    assert!(
        (occ.mean - field.cov).abs() <= 4.0 * combined,
        "walk gives {} +- {}, field gives {} +- {}",
        occ.mean,
        occ.se,
        field.cov,
        field.se
    );
}

#[test]
fn variance_growth_exact_and_sampled_routes_agree() {
    // CosinePerturbed with beta = 0 is the unit Gaussian, but the family
    // label forces the sampled route; the Gaussian label takes the exact one.
    let params = SamplerParams {
        sweeps: 6000,
        burn_in: 500,
        thin: 2,
        seed: 06_17,
        replicas: 4,
    };
    let exact = variance_growth(&[2], &gaussian(1.0), Pinning::Off, &params).unwrap();
    let sampled = variance_growth(&[2], &cosine(0.0), Pinning::Off, &params).unwrap();

    assert!(exact[0].exact && exact[0].se == 0.0);
    assert!(!sampled[0].exact && sampled[0].se > 0.0);
    assert!(
        (sampled[0].var - exact[0].var).abs() <= 4.0 * sampled[0].se,
        "sampled {} +- {}, exact {}",
        sampled[0].var,
        sampled[0].se,
        exact[0].var
    );
}

#[test]
fn covariance_experiment_agrees_with_green_function_off_origin() {
    let region = Region::lambda(3).unwrap();
    let kappa = 1.0;
    let pot = gaussian(kappa);
    let pairs = vec![
        (Site::new(0, 0), Site::new(1, 0)),
        (Site::new(0, 0), Site::new(1, 1)),
        (Site::new(0, 0), Site::new(2, 0)),
    ];
    let params = SamplerParams {
        sweeps: 12_000,
        burn_in: 1000,
        thin: 2,
        seed: 07_17,
        replicas: 4,
    };
    let curve = covariance_experiment(
        &region,
        &pot,
        Pinning::Off,
        &params,
        &pairs,
        Norm::L2,
    )
    .unwrap();

    let mut green = GreenMatrix::new(&region, &BTreeSet::new(), kappa).unwrap();
    for point in &curve.points {
        let exact = green.get(point.i, point.j);
        assert!(
            (point.cov - exact).abs() <= 4.0 * point.se,
            "pair {:?}-{:?}: sampled {} +- {}, exact {}",
            point.i,
            point.j,
            point.cov,
            point.se,
            exact
        );
    }
}
