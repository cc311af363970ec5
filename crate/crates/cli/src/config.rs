//! Run configuration: a TOML file with a `[model]` section, optional
//! `[numerics]`, and one section per command. Unknown keys are rejected.

use std::path::Path;

use fluidhopf::model::{FourierTerm, PolynomialTerm};
use fluidhopf::{FamilyKind, FluidModel, GeneratorFamily, Sign, StateSpace};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Span of `s` sampled by model validation when no horizon is configured.
pub const DEFAULT_VALIDATION_HORIZON: f64 = 50.0;
pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factorize: Option<FactorizeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage: Option<PassageSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub rates: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    /// Required for time-varying families; constant ones default to the
    /// largest entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_k: Option<f64>,
    pub generator: GeneratorSpec,
}

/// Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Constant {
        matrix: Vec<Vec<f64>>,
    },
    PiecewiseConstant {
        starts: Vec<f64>,
        matrices: Vec<Vec<Vec<f64>>>,
    },
    /// `base + Σ sin(frequency·s + phase)·coefficient + Σ s^degree·coefficient`.
    FourierPolynomial {
        base: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        fourier: Vec<FourierSpec>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        polynomial: Vec<PolynomialSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierSpec {
    pub coefficient: Vec<Vec<f64>>,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialSpec {
    pub coefficient: Vec<Vec<f64>>,
    pub degree: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    #[serde(default = "default_step")]
    pub ds: f64,
    #[serde(default = "default_step")]
    pub da: f64,
    /// Support end of truncated boundary data; defaults to `20/c`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Monte Carlo censoring horizon and model-validation span.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// At most `i64::MAX`, the largest TOML integer.
    #[serde(default)]
    pub seed: u64,
    /// Homogeneous cross-check tolerance; defaults to `10·(ds + da)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default = "default_step")]
    pub check_resolution: f64,
}

fn default_step() -> f64 {
    DEFAULT_STEP
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            ds: DEFAULT_STEP,
            da: DEFAULT_STEP,
            eta: None,
            horizon: None,
            seed: 0,
            tolerance: None,
            check_resolution: DEFAULT_STEP,
        }
    }
}

/// A state named by label or by 0-based index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateRef {
    Index(usize),
    Label(String),
}

impl StateRef {
    pub fn resolve(&self, states: &StateSpace) -> Result<usize, CliError> {
        match self {
            StateRef::Label(l) => states
                .index_of(l)
                .ok_or_else(|| CliError::Config(format!("unknown state '{l}'"))),
            StateRef::Index(i) if *i < states.len() => Ok(*i),
            StateRef::Index(i) => Err(CliError::Config(format!(
                "state index {i} out of range for {} states",
                states.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignSpec {
    Plus,
    Minus,
}

impl From<SignSpec> for Sign {
    fn from(s: SignSpec) -> Sign {
        match s {
            SignSpec::Plus => Sign::Plus,
            SignSpec::Minus => Sign::Minus,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorizeSection {
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    /// `e^{−cs} 1{i = target}` with the smooth cutoff at `η`.
    ExpIndicator { c: f64, target: StateRef },
    /// Per-state samples at times `s`, linearly interpolated; one row of
    /// `values` per state.
    Table { s: Vec<f64>, values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassageSection {
    pub level: f64,
    pub sign: SignSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundarySpec>,
    /// Discount for Laplace tables; falls back to the boundary's `c`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default)]
    pub laplace: bool,
    /// Keep every `s_stride`-th `s`-node in the tables.
    #[serde(default = "default_s_stride")]
    pub s_stride: usize,
    /// `(s, a)` strides of the full-field CSV.
    #[serde(default = "default_field_stride")]
    pub field_stride: [usize; 2],
}

fn default_s_stride() -> usize {
    10
}

fn default_field_stride() -> [usize; 2] {
    [100, 100]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffSpec {
    /// `e^{−cτ}`, restricted to `X_τ = target` when given.
    Discounted {
        c: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<StateRef>,
    },
    /// Indicator of a passage before the horizon.
    Hit,
    /// The truncated boundary data the PDE solver uses.
    ExpIndicator { c: f64, target: StateRef },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default)]
    pub s0: f64,
    pub start: StateRef,
    pub level: f64,
    pub sign: SignSpec,
    pub n: usize,
    pub payoff: PayoffSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_generators: Option<usize>,
}

fn parse_override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value` overrides to a parsed document. Values are
/// read as TOML, falling back to a bare string.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<(), CliError> {
    for o in overrides {
        let (path, raw) = o
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override '{o}' is not of the form key=value")))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(CliError::Config(format!("bad override key '{path}'")));
        }
        let mut table = &mut *doc;
        for k in &keys[..keys.len() - 1] {
            let entry = table
                .entry(k.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| CliError::Config(format!("override '{path}': '{k}' is not a table")))?;
        }
        table.insert(keys[keys.len() - 1].to_string(), parse_override_value(raw.trim()));
    }
    Ok(())
}

impl Config {
    pub fn parse(text: &str, overrides: &[String]) -> Result<Config, CliError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        apply_overrides(&mut doc, overrides)?;
        let cfg: Config = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn check(&self) -> Result<(), CliError> {
        let n = &self.numerics;
        for (name, x) in [("ds", n.ds), ("da", n.da), ("check_resolution", n.check_resolution)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(CliError::Config(format!("numerics.{name} must be positive, got {x}")));
            }
        }
        for (name, x) in [("eta", n.eta), ("horizon", n.horizon), ("tolerance", n.tolerance)] {
            if let Some(x) = x {
                if !(x > 0.0 && x.is_finite()) {
                    return Err(CliError::Config(format!("numerics.{name} must be positive, got {x}")));
                }
            }
        }
        if n.seed > i64::MAX as u64 {
            return Err(CliError::Config(format!("numerics.seed must be at most {}", i64::MAX)));
        }
        if let Some(p) = &self.passage {
            if p.s_stride == 0 || p.field_stride.contains(&0) {
                return Err(CliError::Config("passage strides must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn validation_horizon(&self) -> f64 {
        self.numerics.horizon.unwrap_or(DEFAULT_VALIDATION_HORIZON)
    }

    /// Builds the model and validates the family over the configured span.
    pub fn build_model(&self) -> Result<FluidModel, CliError> {
        let spec = &self.model;
        let m = spec.rates.len();
        let labels = spec
            .labels
            .clone()
            .unwrap_or_else(|| (0..m).map(|i| i.to_string()).collect());
        let states = StateSpace::new(labels, spec.rates.clone()).map_err(config_err)?;
        let family = match &spec.generator {
            GeneratorSpec::Constant { matrix } => {
                let mat = to_matrix(matrix, m, "generator.matrix")?;
                match spec.bound_k {
                    Some(k) => GeneratorFamily::constant(mat, k),
                    None => GeneratorFamily::constant_auto(mat),
                }
                .map_err(config_err)?
            }
            GeneratorSpec::PiecewiseConstant { starts, matrices } => {
                let mats = matrices
                    .iter()
                    .enumerate()
                    .map(|(k, x)| to_matrix(x, m, &format!("generator.matrices[{k}]")))
                    .collect::<Result<Vec<_>, _>>()?;
                GeneratorFamily::new(
                    FamilyKind::PiecewiseConstant {
                        starts: starts.clone(),
                        matrices: mats,
                    },
                    self.required_bound()?,
                )
                .map_err(config_err)?
            }
            GeneratorSpec::FourierPolynomial {
                base,
                fourier,
                polynomial,
            } => {
                let fourier = fourier
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        Ok(FourierTerm {
                            coefficient: to_matrix(&t.coefficient, m, &format!("generator.fourier[{k}]"))?,
                            frequency: t.frequency,
                            phase: t.phase,
                        })
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                let polynomial = polynomial
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        Ok(PolynomialTerm {
                            coefficient: to_matrix(&t.coefficient, m, &format!("generator.polynomial[{k}]"))?,
                            degree: t.degree,
                        })
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                GeneratorFamily::new(
                    FamilyKind::FourierPolynomial {
                        base: to_matrix(base, m, "generator.base")?,
                        fourier,
                        polynomial,
                    },
                    self.required_bound()?,
                )
                .map_err(config_err)?
            }
        };
        FluidModel::validated(states, family, self.validation_horizon(), self.numerics.check_resolution)
            .map_err(config_err)
    }

    fn required_bound(&self) -> Result<f64, CliError> {
        self.model
            .bound_k
            .ok_or_else(|| CliError::Config("model.bound_k is required for time-varying generators".into()))
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn to_matrix(rows: &[Vec<f64>], m: usize, what: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        return Err(CliError::Config(format!("{what} must be a {m}x{m} matrix")));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
[model]
rates = [1.0, -1.0]
labels = ["up", "down"]

[model.generator]
kind = "constant"
matrix = [[-1.0, 1.0], [1.0, -1.0]]

[factorize]
c = 1.0
"#;

    #[test]
    fn parses_and_defaults() {
        let c = Config::parse(BASIC, &[]).unwrap();
        assert_eq!(c.numerics.ds, DEFAULT_STEP);
        assert_eq!(c.factorize, Some(FactorizeSection { c: 1.0 }));
        let m = c.build_model().unwrap();
        assert_eq!(m.states().index_of("down"), Some(1));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = BASIC.replace("c = 1.0", "c = 1.0\nkill = 2");
        assert!(matches!(Config::parse(&bad, &[]), Err(CliError::Config(_))));
        let bad = BASIC.replace("kind = \"constant\"", "kind = \"constant\"\nextra = 1");
        assert!(Config::parse(&bad, &[]).is_err());
    }

    #[test]
    fn round_trip() {
        let c = Config::parse(BASIC, &[]).unwrap();
        assert_eq!(Config::parse(&c.to_toml(), &[]).unwrap(), c);
    }

    #[test]
    fn overrides_replace_values() {
        let c = Config::parse(BASIC, &["numerics.seed=7".into(), "factorize.c=2.5".into()]).unwrap();
        assert_eq!(c.numerics.seed, 7);
        assert_eq!(c.factorize.unwrap().c, 2.5);
        assert!(Config::parse(BASIC, &["numerics.seed".into()]).is_err());
        assert!(Config::parse(BASIC, &["model.rates.x=1".into()]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config::parse(BASIC, &[]).unwrap();
        let b = Config::parse(BASIC, &["numerics.seed=1".into()]).unwrap();
        assert_eq!(a.hash(), Config::parse(BASIC, &[]).unwrap().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn state_refs() {
        let m = Config::parse(BASIC, &[]).unwrap().build_model().unwrap();
        assert_eq!(StateRef::Label("up".into()).resolve(m.states()).unwrap(), 0);
        assert_eq!(StateRef::Index(1).resolve(m.states()).unwrap(), 1);
        assert!(StateRef::Index(2).resolve(m.states()).is_err());
        assert!(StateRef::Label("sideways".into()).resolve(m.states()).is_err());
    }

    #[test]
    fn time_varying_needs_bound() {
        let text = r#"
[model]
rates = [1.0, -1.0]
[model.generator]
kind = "fourier_polynomial"
base = [[-1.0, 1.0], [1.0, -1.0]]
fourier = [{ coefficient = [[-0.5, 0.5], [0.5, -0.5]], frequency = 1.0 }]
"#;
        let c = Config::parse(text, &[]).unwrap();
        assert!(c.build_model().is_err());
        let c = Config::parse(text, &["model.bound_k=1.5".into()]).unwrap();
        assert!(!c.build_model().unwrap().generator().is_constant());
    }

    #[test]
    fn invalid_generator_is_a_config_error() {
        let bad = BASIC.replace("[[-1.0, 1.0], [1.0, -1.0]]", "[[-1.0, 1.0], [1.0, -2.0]]");
        assert!(matches!(Config::parse(&bad, &[]).unwrap().build_model(), Err(CliError::Config(_))));
    }
}
