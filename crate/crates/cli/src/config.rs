//! Experiment configuration: one TOML file drives every subcommand.
//! Unknown keys are rejected with the offending key named, and every
//! numeric precondition is checked here before any sampling starts.

use deltapin::gibbs::{Pinning, SamplerParams};
use deltapin::potentials::{CertifiedPotential, Potential};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub lattice: LatticeSection,
    #[serde(default)]
    pub pinning: PinningSection,
    pub mcmc: McmcSection,
    #[serde(default)]
    pub renorm: RenormSection,
    #[serde(default)]
    pub hswalk: HswalkSection,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub scan: ScanSection,
    #[serde(default)]
    pub hit_bound: HitBoundSection,
    #[serde(default)]
    pub tuple_check: TupleCheckSection,
    #[serde(default)]
    pub outputs: OutputsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// "gaussian", "cosine", or "logcosh"
    pub family: String,
    pub kappa: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    /// optional declared convexity constant; must dominate the certified
    /// tight value (recorded in the manifest, engines use the tight one)
    pub c_v: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    /// box radius: sites with max(|x|,|y|) <= n
    pub n: i32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct PinningSection {
    pub enabled: bool,
    pub j: f64,
}

impl Default for PinningSection {
    fn default() -> Self {
        PinningSection {
            enabled: true,
            j: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSection {
    pub sweeps: u64,
    pub burn_in: u64,
    #[serde(default = "one")]
    pub thin: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_u32")]
    pub replicas: u32,
}

fn one() -> u64 {
    1
}

fn one_u32() -> u32 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct RenormSection {
    pub l: i32,
    pub epsilon: f64,
    pub r_list: Vec<i32>,
}

impl Default for RenormSection {
    fn default() -> Self {
        RenormSection {
            l: 2,
            epsilon: 0.5,
            r_list: vec![2, 4, 6, 8],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct HswalkSection {
    pub dt: f64,
    pub horizon: f64,
    pub replicas: u32,
    pub pre_sweeps: u64,
    /// site pairs checked by hs-verify, each [ix, iy, jx, jy]
    pub pairs: Vec<[i32; 4]>,
}

impl Default for HswalkSection {
    fn default() -> Self {
        HswalkSection {
            dt: deltapin::hswalk::DEFAULT_DT,
            horizon: deltapin::hswalk::DEFAULT_HORIZON,
            replicas: 10_000,
            pre_sweeps: 100,
            pairs: vec![[0, 0, 1, 0], [0, 0, 0, 1], [0, 0, 1, 1]],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct FitSection {
    /// largest axis/diagonal step from the origin entering the curve
    pub max_step: i32,
    /// boundary margin; sites closer than this to the box edge are skipped
    /// (defaults to n/2 when absent)
    pub margin: Option<i32>,
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            max_step: 8,
            margin: None,
            d_min: 2.0,
            d_max: 8.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct ScanSection {
    /// pinning strengths for mass-scan
    pub j_list: Vec<f64>,
    /// box radii for deloc-scan
    pub n_list: Vec<i32>,
}

impl Default for ScanSection {
    fn default() -> Self {
        ScanSection {
            j_list: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            n_list: vec![4, 8, 16, 32],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct HitBoundSection {
    /// independent synthetic rate fields to test
    pub fields: u32,
    pub replicas: u32,
    /// walk box radius
    pub box_radius: i32,
    /// tested l1 distances from start to target
    pub distances: Vec<u32>,
}

impl Default for HitBoundSection {
    fn default() -> Self {
        HitBoundSection {
            fields: 20,
            replicas: 4000,
            box_radius: 6,
            distances: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct TupleCheckSection {
    pub instances: u32,
    /// instance box radius for random A, B draws
    pub n: i32,
}

impl Default for TupleCheckSection {
    fn default() -> Self {
        TupleCheckSection {
            instances: 1000,
            n: 6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct OutputsSection {
    pub directory: String,
}

impl Default for OutputsSection {
    fn default() -> Self {
        OutputsSection {
            directory: "out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), ConfigError> {
        let bytes = std::fs::read(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let text = String::from_utf8_lossy(&bytes);
        let cfg: ExperimentConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok((cfg, bytes))
    }

    /// Build and certify the potential named by the model section.
    pub fn potential(&self) -> Result<CertifiedPotential, ConfigError> {
        let m = &self.model;
        let reject_params = |allowed: &str| -> Result<(), ConfigError> {
            let stray = [
                ("kappa", m.kappa.is_some() && allowed != "kappa"),
                ("beta", m.beta.is_some() && allowed != "beta"),
                ("lambda", m.lambda.is_some() && allowed != "lambda"),
            ];
            for (name, bad) in stray {
                if bad {
                    return Err(invalid(format!(
                        "model.{name} does not apply to family \"{}\"",
                        m.family
                    )));
                }
            }
            Ok(())
        };
        let pot = match m.family.as_str() {
            "gaussian" => {
                reject_params("kappa")?;
                Potential::Gaussian {
                    kappa: m.kappa.unwrap_or(1.0),
                }
            }
            "cosine" => {
                reject_params("beta")?;
                Potential::CosinePerturbed {
                    beta: m
                        .beta
                        .ok_or_else(|| invalid("model.beta is required for family \"cosine\""))?,
                }
            }
            "logcosh" => {
                reject_params("lambda")?;
                Potential::LogCosh {
                    lambda: m.lambda.ok_or_else(|| {
                        invalid("model.lambda is required for family \"logcosh\"")
                    })?,
                }
            }
            other => {
                return Err(invalid(format!(
                    "unknown model.family \"{other}\" (expected gaussian, cosine, or logcosh)"
                )))
            }
        };
        let certified = pot
            .certify()
            .map_err(|e| invalid(format!("model does not certify: {e}")))?;
        if let Some(declared) = m.c_v {
            if declared + 1e-9 < certified.c_v() {
                return Err(invalid(format!(
                    "model.c_v = {declared} is below the certified convexity constant {}",
                    certified.c_v()
                )));
            }
        }
        Ok(certified)
    }

    pub fn pinning(&self) -> Pinning {
        if self.pinning.enabled {
            Pinning::Delta(self.pinning.j)
        } else {
            Pinning::Off
        }
    }

    pub fn sampler_params(&self, seed_override: Option<u64>) -> SamplerParams {
        SamplerParams {
            sweeps: self.mcmc.sweeps,
            burn_in: self.mcmc.burn_in,
            thin: self.mcmc.thin,
            seed: seed_override.unwrap_or(self.mcmc.seed),
            replicas: self.mcmc.replicas,
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.potential()?;
        if self.lattice.n < 1 {
            return Err(invalid(format!(
                "lattice.n must be >= 1, got {}",
                self.lattice.n
            )));
        }
        self.sampler_params(None)
            .validate()
            .map_err(|e| invalid(format!("mcmc: {e}")))?;
        if self.renorm.l < 1 {
            return Err(invalid(format!(
                "renorm.l must be >= 1, got {}",
                self.renorm.l
            )));
        }
        if !(self.renorm.epsilon > 0.0 && self.renorm.epsilon < 1.0) {
            return Err(invalid(format!(
                "renorm.epsilon must lie strictly between 0 and 1, got {}",
                self.renorm.epsilon
            )));
        }
        if self.renorm.r_list.is_empty() || self.renorm.r_list.iter().any(|&r| r < 1) {
            return Err(invalid("renorm.r_list must be nonempty with radii >= 1"));
        }
        if !(self.hswalk.dt > 0.0) || !(self.hswalk.horizon > 0.0) {
            return Err(invalid("hswalk.dt and hswalk.horizon must be positive"));
        }
        if self.hswalk.replicas == 0 {
            return Err(invalid("hswalk.replicas must be >= 1"));
        }
        if self.hswalk.pairs.is_empty() {
            return Err(invalid("hswalk.pairs must list at least one site pair"));
        }
        if self.fit.max_step < 1 {
            return Err(invalid("fit.max_step must be >= 1"));
        }
        if !(self.fit.d_min <= self.fit.d_max) {
            return Err(invalid(format!(
                "fit range [{}, {}] is empty",
                self.fit.d_min, self.fit.d_max
            )));
        }
        if self.scan.j_list.is_empty() || self.scan.n_list.is_empty() {
            return Err(invalid("scan lists must be nonempty"));
        }
        if self.scan.n_list.iter().any(|&n| n < 1) {
            return Err(invalid("scan.n_list radii must be >= 1"));
        }
        if self.hit_bound.fields == 0 || self.hit_bound.replicas == 0 {
            return Err(invalid("hit_bound.fields and hit_bound.replicas must be >= 1"));
        }
        if self.hit_bound.box_radius < 1 {
            return Err(invalid("hit_bound.box_radius must be >= 1"));
        }
        if self.hit_bound.distances.is_empty()
            || self
                .hit_bound
                .distances
                .iter()
                .any(|&d| d == 0 || d as i32 > self.hit_bound.box_radius)
        {
            return Err(invalid(
                "hit_bound.distances must be >= 1 and fit inside hit_bound.box_radius",
            ));
        }
        if self.tuple_check.instances == 0 || self.tuple_check.n < 1 {
            return Err(invalid(
                "tuple_check.instances must be >= 1 and tuple_check.n >= 1",
            ));
        }
        if self.outputs.directory.is_empty() {
            return Err(invalid("outputs.directory must not be empty"));
        }
        Ok(())
    }
}
