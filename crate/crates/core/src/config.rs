//! Run configuration, readable from TOML with every field optional.

use serde::{Deserialize, Serialize};

use crate::basis::BasisConfig;
use crate::error::{Error, Result};
use crate::inference::DEFAULT_LEVEL;
use crate::model::PriorConfig;
use crate::rjmcmc::ChainConfig;
use crate::simgen::{Benchmark, BenchmarkFunction, Design};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSettings {
    pub c_alpha: f64,
    pub c_tau: f64,
    /// Defaults to the sample size.
    pub c_delta: Option<f64>,
    pub max_components: usize,
    /// Defaults to uniform over `1..=max_components`.
    pub model_prior: Option<Vec<f64>>,
}

impl Default for PriorSettings {
    fn default() -> Self {
        PriorSettings {
            c_alpha: 1e4,
            c_tau: 1e3,
            c_delta: None,
            max_components: 3,
            model_prior: None,
        }
    }
}

impl PriorSettings {
    /// Resolve the data-dependent defaults.
    pub fn resolve(&self, n: usize) -> Result<PriorConfig> {
        if self.max_components == 0 {
            return Err(Error::usage("max_components must be at least 1"));
        }
        let mut prior = PriorConfig::for_data(n, self.max_components);
        prior.c_alpha = self.c_alpha;
        prior.c_tau = self.c_tau;
        if let Some(c) = self.c_delta {
            prior.c_delta = c;
        }
        if let Some(p) = &self.model_prior {
            if p.len() != self.max_components {
                return Err(Error::usage(format!(
                    "model_prior has {} entries but max_components is {}",
                    p.len(),
                    self.max_components
                )));
            }
            prior.model_prior = p.clone();
        }
        prior.validate()?;
        Ok(prior)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSettings {
    pub function: BenchmarkFunction,
    pub n: usize,
    pub replications: usize,
    pub b_negated_exponents: bool,
    pub design: Design,
    /// Draw covariates once and reuse them in every study replication.
    pub fixed_design: bool,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            function: BenchmarkFunction::ASin,
            n: 1000,
            replications: 50,
            b_negated_exponents: false,
            design: Design::Uniform,
            fixed_design: true,
        }
    }
}

impl SimulationSettings {
    pub fn benchmark(&self) -> Benchmark {
        Benchmark {
            function: self.function,
            b_negated_exponents: self.b_negated_exponents,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub prior: PriorSettings,
    pub basis: BasisConfig,
    pub chain: ChainConfig,
    pub seed: u64,
    pub level: f64,
    pub simulation: SimulationSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            prior: PriorSettings::default(),
            basis: BasisConfig::default(),
            chain: ChainConfig::default(),
            seed: 1,
            level: DEFAULT_LEVEL,
            simulation: SimulationSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.chain.validate()?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::usage(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if !(self.basis.epsilon > 0.0 && self.basis.epsilon <= 1.0) {
            return Err(Error::usage(format!("epsilon must lie in (0, 1], got {}", self.basis.epsilon)));
        }
        if self.simulation.n == 0 || self.simulation.replications == 0 {
            return Err(Error::usage("simulation n and replications must be positive"));
        }
        if self.prior.max_components == 0 {
            return Err(Error::usage("max_components must be at least 1"));
        }
        Ok(())
    }

    #[cfg(feature = "cli")]
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[cfg(feature = "cli")]
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let prior = cfg.prior.resolve(250).unwrap();
        assert_eq!(prior.c_delta, 250.0);
        assert_eq!(prior.model_prior, vec![1.0 / 3.0; 3]);
        assert_eq!(cfg.chain.warmup, 5000);
        assert_eq!(cfg.basis.l_max, 25);
    }

    #[test]
    fn mismatched_model_prior_rejected() {
        let s = PriorSettings {
            model_prior: Some(vec![0.5, 0.5]),
            ..Default::default()
        };
        assert!(s.resolve(10).is_err());
    }

    #[cfg(feature = "cli")]
    #[test]
    fn toml_partial_and_round_trip() {
        let cfg = RunConfig::from_toml("seed = 9\n[chain]\nwarmup = 10\n[simulation]\nfunction = \"c_step\"\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.chain.warmup, 10);
        assert_eq!(cfg.chain.sampling, 5000);
        assert_eq!(cfg.simulation.function, BenchmarkFunction::CStep);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(RunConfig::from_toml("level = 1.5").is_err());
        let short = RunConfig::from_toml("[simulation]\nfunction = \"d\"\n").unwrap();
        assert_eq!(short.simulation.function, BenchmarkFunction::DCylinder);
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }
}
