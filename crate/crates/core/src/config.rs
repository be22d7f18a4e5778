//! JSON experiment descriptions.
//!
//! Quantities whose exact value matters (rates, times, tolerances) are stored
//! as decimal strings and parsed on use, so a config survives any number of
//! parse/serialize round trips unchanged.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::Tolerances;
use crate::moment_solver::Variant;
use crate::montecarlo::Caps;
use crate::spectral::{beta_critical, lambda0};
use crate::walk_kernel::{build_kernel, KernelSpec, TailScale};
use crate::{Error, OffspringLaw, Result, WalkKernel};

pub const SCHEMA: &str = "brwlab/1";

/// A real number written as a decimal string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Decimal(String);

impl Decimal {
    pub fn value(&self) -> f64 {
        self.0.parse().expect("validated on construction")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Decimal {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        match s.trim().parse::<f64>() {
            Ok(v) if v.is_finite() && s.trim() == s => Ok(Decimal(s)),
            _ => Err(format!("{s:?} is not a finite decimal number")),
        }
    }
}

impl From<Decimal> for String {
    fn from(d: Decimal) -> String {
        d.0
    }
}

impl FromStr for Decimal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Decimal::try_from(s.to_string()).map_err(Error::InvalidConfig)
    }
}

impl From<f64> for Decimal {
    fn from(v: f64) -> Self {
        Decimal(format!("{v:?}"))
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn dec(s: &str) -> Decimal {
    s.parse().expect("literal decimal")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    /// `a(±e_i) = q / (2d)`.
    NearestNeighbour { total_rate: Decimal },
    FiniteSupport { jumps: Vec<Jump> },
    /// Exactly one of `total_rate` and `coefficient` fixes the prefactor.
    HeavyTail {
        alpha: Decimal,
        #[serde(default)]
        total_rate: Option<Decimal>,
        #[serde(default)]
        coefficient: Option<Decimal>,
        #[serde(default = "default_cutoff")]
        cutoff: usize,
    },
}

fn default_cutoff() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jump {
    pub z: Vec<i64>,
    pub rate: Decimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branching {
    pub n: usize,
    pub rate: Decimal,
}

/// How `b_0` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Death {
    Rate(Decimal),
    /// `b_0 = lambda_0`.
    Critical,
    /// `b_0 = lambda_0 + offset`.
    Lambda0Offset(Decimal),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawConfig {
    #[serde(default)]
    pub branching: Vec<Branching>,
    pub death: Death,
    /// Rescales the branching rates so that `beta* = factor * beta_c`.
    #[serde(default)]
    pub beta_star_over_beta_c: Option<Decimal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Local,
    Total,
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(VariantKind::Local),
            "total" => Ok(VariantKind::Total),
            _ => Err(Error::InvalidConfig(format!("variant must be local or total, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    pub max_order: usize,
    pub variant: VariantKind,
    /// Target site of the local variant; the origin when absent.
    #[serde(default)]
    pub site: Option<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    /// Fixed box radius; chosen by repeated doubling when absent.
    #[serde(default)]
    pub radius: Option<usize>,
    #[serde(default = "default_start_radius")]
    pub start_radius: usize,
    #[serde(default = "default_max_radius")]
    pub max_radius: usize,
}

fn default_start_radius() -> usize {
    8
}

fn default_max_radius() -> usize {
    4096
}

impl Default for TruncationConfig {
    fn default() -> Self {
        TruncationConfig {
            radius: None,
            start_radius: default_start_radius(),
            max_radius: default_max_radius(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub replicas: usize,
    pub seed: u64,
    #[serde(default = "default_max_population")]
    pub max_population: usize,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
}

fn default_max_population() -> usize {
    Caps::default().max_population
}

fn default_max_events() -> u64 {
    Caps::default().max_events
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    #[serde(default = "default_rtol")]
    pub rtol: Decimal,
    #[serde(default = "default_atol")]
    pub atol: Decimal,
    /// Largest admissible boundary leak of the truncated box.
    #[serde(default = "default_leak")]
    pub leak: Decimal,
    /// Relative change accepted by the doubling test.
    #[serde(default = "default_doubling")]
    pub doubling: Decimal,
    #[serde(default = "default_rho_rtol")]
    pub rho_rtol: Decimal,
    #[serde(default = "default_rho_atol")]
    pub rho_atol: Decimal,
    #[serde(default = "default_kappa_atol")]
    pub kappa_atol: Decimal,
    #[serde(default = "default_eta_atol")]
    pub eta_atol: Decimal,
    /// Monte Carlo agreement band in standard errors.
    #[serde(default = "default_sigmas")]
    pub sigmas: Decimal,
}

fn default_rtol() -> Decimal {
    dec("1e-8")
}
fn default_atol() -> Decimal {
    dec("1e-12")
}
fn default_leak() -> Decimal {
    dec("1e-6")
}
fn default_doubling() -> Decimal {
    dec("1e-6")
}
fn default_rho_rtol() -> Decimal {
    dec("0.05")
}
fn default_rho_atol() -> Decimal {
    dec("1e-3")
}
fn default_kappa_atol() -> Decimal {
    dec("0.2")
}
fn default_eta_atol() -> Decimal {
    dec("0.5")
}
fn default_sigmas() -> Decimal {
    dec("3")
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            rtol: default_rtol(),
            atol: default_atol(),
            leak: default_leak(),
            doubling: default_doubling(),
            rho_rtol: default_rho_rtol(),
            rho_atol: default_rho_atol(),
            kappa_atol: default_kappa_atol(),
            eta_atol: default_eta_atol(),
            sigmas: default_sigmas(),
        }
    }
}

impl ToleranceConfig {
    pub fn fit(&self) -> Tolerances {
        Tolerances {
            rho_rtol: self.rho_rtol.value(),
            rho_atol: self.rho_atol.value(),
            kappa_atol: self.kappa_atol.value(),
            eta_atol: self.eta_atol.value(),
        }
    }
}

/// Complete description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub schema: String,
    #[serde(default)]
    pub name: String,
    pub dimension: usize,
    pub kernel: KernelConfig,
    pub law: LawConfig,
    pub horizon: Decimal,
    pub moments: MomentsConfig,
    #[serde(default)]
    pub truncation: TruncationConfig,
    /// Monte Carlo comparison times.
    #[serde(default)]
    pub checkpoints: Vec<Decimal>,
    #[serde(default)]
    pub montecarlo: Option<MonteCarloConfig>,
    /// Fit window of the regime validation; the last decade when absent.
    #[serde(default)]
    pub window: Option<(Decimal, Decimal)>,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    /// Output root; not part of the config hash.
    #[serde(default)]
    pub output: Option<String>,
}

/// Kernel and law described by a config, with `b_0` resolved.
#[derive(Debug, Clone)]
pub struct Model {
    pub kernel: WalkKernel,
    pub law: OffspringLaw,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ModelConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Compact JSON with sorted keys and without the output root.
    pub fn canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output");
        }
        value.to_string()
    }

    /// Hex SHA-256 of [`ModelConfig::canonical_json`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        hex::encode(digest)
    }

    /// Static checks that need no numerics.
    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.schema != SCHEMA {
            return bad(format!("unsupported schema {:?}, expected {SCHEMA:?}", self.schema));
        }
        if self.dimension == 0 {
            return bad("dimension must be positive".into());
        }
        if let KernelConfig::FiniteSupport { jumps } = &self.kernel {
            if let Some(j) = jumps.iter().find(|j| j.z.len() != self.dimension) {
                return bad(format!("jump {:?} does not have {} coordinates", j.z, self.dimension));
            }
        }
        if let KernelConfig::HeavyTail { total_rate, coefficient, .. } = &self.kernel {
            if total_rate.is_some() == coefficient.is_some() {
                return bad("heavy_tail needs exactly one of total_rate and coefficient".into());
            }
        }
        if !(self.horizon.value() > 0.0) {
            return bad(format!("horizon {} must be positive", self.horizon));
        }
        if self.moments.max_order == 0 {
            return bad("moments.max_order must be at least 1".into());
        }
        if let Some(site) = &self.moments.site {
            if site.len() != self.dimension {
                return bad(format!("site {site:?} does not have {} coordinates", self.dimension));
            }
        }
        let times: Vec<f64> = self.checkpoints.iter().map(Decimal::value).collect();
        if times.iter().any(|&t| !(t > 0.0) || t > self.horizon.value())
            || times.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("checkpoints must increase strictly inside (0, horizon]".into());
        }
        if let Some((lo, hi)) = &self.window {
            if !(lo.value() > 0.0 && hi.value() > lo.value()) {
                return bad(format!("window [{lo}, {hi}] is empty"));
            }
        }
        if let Some(mc) = &self.montecarlo {
            if mc.replicas < 2 {
                return bad("montecarlo.replicas must be at least 2".into());
            }
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("rtol", &t.rtol),
            ("atol", &t.atol),
            ("leak", &t.leak),
            ("doubling", &t.doubling),
            ("sigmas", &t.sigmas),
        ] {
            if !(v.value() > 0.0) {
                return bad(format!("tolerances.{name} must be positive"));
            }
        }
        Ok(())
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        let dimension = self.dimension;
        match &self.kernel {
            KernelConfig::NearestNeighbour { total_rate } => {
                KernelSpec::simple_symmetric(dimension, total_rate.value())
            }
            KernelConfig::FiniteSupport { jumps } => KernelSpec::FiniteSupport {
                dimension,
                jumps: jumps.iter().map(|j| (j.z.clone(), j.rate.value())).collect(),
            },
            KernelConfig::HeavyTail { alpha, total_rate, coefficient, cutoff } => KernelSpec::HeavyTail {
                dimension,
                alpha: alpha.value(),
                scale: match (total_rate, coefficient) {
                    (Some(q), _) => TailScale::TotalRate(q.value()),
                    (None, Some(c)) => TailScale::Coefficient(c.value()),
                    (None, None) => TailScale::TotalRate(1.0),
                },
                cutoff: *cutoff,
            },
        }
    }

    /// Builds the kernel and resolves the law, which may need `beta_c` or
    /// `lambda_0`.
    pub fn build(&self) -> Result<Model> {
        self.check()?;
        let kernel = build_kernel(&self.kernel_spec())?;
        let branching: Vec<(usize, f64)> =
            self.law.branching.iter().map(|b| (b.n, b.rate.value())).collect();
        let mut law = OffspringLaw::new(0.0, &branching)?;
        if let Some(factor) = &self.law.beta_star_over_beta_c {
            let beta_c = beta_critical(&kernel)?;
            if beta_c == 0.0 {
                return Err(Error::InvalidConfig(
                    "beta_star_over_beta_c needs a transient walk".into(),
                ));
            }
            law = law.with_beta_star(factor.value() * beta_c)?;
        }
        let root = || -> Result<f64> {
            lambda0(&kernel, law.beta_star())?.ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "death rate is tied to lambda_0 but beta* = {} has no isolated eigenvalue",
                    law.beta_star()
                ))
            })
        };
        let death_rate = match &self.law.death {
            Death::Rate(b0) => b0.value(),
            Death::Critical => root()?,
            Death::Lambda0Offset(offset) => root()? + offset.value(),
        };
        let law = law.with_death_rate(death_rate)?;
        Ok(Model { kernel, law })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon.value()
    }

    pub fn site(&self) -> Vec<i64> {
        self.moments.site.clone().unwrap_or_else(|| vec![0; self.dimension])
    }

    pub fn variant(&self) -> Variant {
        match self.moments.variant {
            VariantKind::Local => Variant::Local { site: self.site() },
            VariantKind::Total => Variant::Total,
        }
    }

    pub fn checkpoint_times(&self) -> Vec<f64> {
        self.checkpoints.iter().map(Decimal::value).collect()
    }

    pub fn window(&self) -> Option<(f64, f64)> {
        self.window.as_ref().map(|(lo, hi)| (lo.value(), hi.value()))
    }

    pub fn caps(&self) -> Caps {
        self.montecarlo.as_ref().map_or_else(Caps::default, |mc| Caps {
            max_population: mc.max_population,
            max_events: mc.max_events,
        })
    }
}

/// Parses `"x;y;..."` into a site.
pub fn parse_site(text: &str) -> Result<Vec<i64>> {
    text.split(';')
        .map(|c| {
            c.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad site coordinate {c:?} in {text:?}")))
        })
        .collect()
}
