//! Scenario configuration files.
//!
//! Configs are TOML. Every section rejects unknown keys. Dimensional
//! values accept a bare number in SI units or a string with a unit suffix,
//! e.g. `"10 kPa"`, `"100 kN"`, `"0.25 m"`; suffixes are converted at parse
//! time and values serialize back as plain SI numbers.

use std::fmt;
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::constitutive::{ElasticParams, J2Params, Material, NorSandParams};
use crate::jacobian::JacobianStrategy;
use crate::shape::ShapeFunctionKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid override `{0}` (expected key=value)")]
    Override(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Physical dimension of a [`Quantity`], with its accepted unit suffixes.
pub trait Dimension {
    const NAME: &'static str;
    const UNITS: &'static [(&'static str, f64)];
}

macro_rules! dimension {
    ($t:ident, $name:literal, [$(($u:literal, $f:expr)),* $(,)?]) => {
        #[derive(Debug, Clone, Copy, PartialEq)]
        pub struct $t;
        impl Dimension for $t {
            const NAME: &'static str = $name;
            const UNITS: &'static [(&'static str, f64)] = &[$(($u, $f)),*];
        }
    };
}

dimension!(Length, "length", [("m", 1.0), ("cm", 1e-2), ("mm", 1e-3), ("km", 1e3)]);
dimension!(Pressure, "pressure", [("Pa", 1.0), ("kPa", 1e3), ("MPa", 1e6), ("GPa", 1e9)]);
dimension!(Force, "force", [("N", 1.0), ("kN", 1e3), ("MN", 1e6)]);
dimension!(Time, "time", [("s", 1.0), ("min", 60.0), ("h", 3600.0), ("d", 86400.0)]);
dimension!(Density, "density", [("kg/m^3", 1.0), ("kg/m3", 1.0), ("t/m^3", 1e3), ("t/m3", 1e3)]);
dimension!(Acceleration, "acceleration", [("m/s^2", 1.0), ("m/s2", 1.0)]);
dimension!(Area, "area", [("m^2", 1.0), ("m2", 1.0)]);
dimension!(Viscosity, "viscosity", [("Pa s", 1.0), ("Pa*s", 1.0), ("mPa s", 1e-3), ("mPa*s", 1e-3)]);
dimension!(Diffusivity, "diffusivity", [("m^2/s", 1.0), ("m2/s", 1.0)]);

/// SI value of a dimensional parameter.
#[derive(Clone, Copy, PartialEq)]
pub struct Quantity<D> {
    pub si: f64,
    _d: PhantomData<D>,
}

impl<D> Quantity<D> {
    pub const fn new(si: f64) -> Self {
        Self { si, _d: PhantomData }
    }
}

impl<D> fmt::Debug for Quantity<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.si)
    }
}

impl<D: Dimension> Quantity<D> {
    pub fn parse(text: &str) -> Result<Self, String> {
        let t = text.trim();
        let split = t
            .char_indices()
            .find(|&(i, c)| {
                c.is_ascii_alphabetic()
                    && !(matches!(c, 'e' | 'E')
                        && t[i + 1..].starts_with(|n: char| n.is_ascii_digit() || n == '-' || n == '+'))
            })
            .map(|(i, _)| i)
            .unwrap_or(t.len());
        let (num, unit) = t.split_at(split);
        let value: f64 = num.trim().parse().map_err(|_| format!("`{text}` is not a {} value", D::NAME))?;
        let unit = unit.trim();
        if unit.is_empty() {
            return Ok(Self::new(value));
        }
        D::UNITS.iter().find(|(u, _)| *u == unit).map(|(_, f)| Self::new(value * f)).ok_or_else(|| {
            let known: Vec<&str> = D::UNITS.iter().map(|(u, _)| *u).collect();
            format!("unknown {} unit `{unit}` in `{text}` (known: {})", D::NAME, known.join(", "))
        })
    }
}

impl<D> Serialize for Quantity<D> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.si)
    }
}

impl<'de, D: Dimension> Deserialize<'de> for Quantity<D> {
    fn deserialize<De: Deserializer<'de>>(d: De) -> Result<Self, De::Error> {
        struct V<D>(PhantomData<D>);
        impl<D: Dimension> Visitor<'_> for V<D> {
            type Value = Quantity<D>;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "a {} as a number (SI) or a string with a unit", D::NAME)
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Self::Value, E> {
                Ok(Quantity::new(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Self::Value, E> {
                Ok(Quantity::new(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Self::Value, E> {
                Ok(Quantity::new(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
                Quantity::parse(v).map_err(E::custom)
            }
        }
        d.deserialize_any(V(PhantomData))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Triaxial,
    Bar,
    Cantilever,
    Consolidation,
    Inverse,
    JacobianBench,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Triaxial => "triaxial",
            ScenarioKind::Bar => "bar",
            ScenarioKind::Cantilever => "cantilever",
            ScenarioKind::Consolidation => "consolidation",
            ScenarioKind::Inverse => "inverse",
            ScenarioKind::JacobianBench => "jacobian-bench",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<MaterialConfig>,
    #[serde(default)]
    pub loading: LoadingConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub porous: Option<PorousConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse: Option<InverseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triaxial: Option<TriaxialConfig>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Body extents per axis (height for columns, length and depth for
    /// beams, width and height for blocks).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub size: Vec<Quantity<Length>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_size: Option<Quantity<Length>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles_per_cell: Option<usize>,
    #[serde(default)]
    pub shape: ShapeFunctionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NorSandPreset {
    Loose,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub youngs_modulus: Option<Quantity<Pressure>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poisson_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lame_lambda: Option<Quantity<Pressure>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lame_mu: Option<Quantity<Pressure>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yield_strength: Option<Quantity<Pressure>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Quantity<Density>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<NorSandPreset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norsand: Option<NorSandOverrides>,
}

/// Optional Nor-Sand parameter overrides on top of a preset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NorSandOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_mod: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_tilde: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_c0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_i0: Option<Quantity<Pressure>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<Quantity<Pressure>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shear_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<f64>,
}

impl MaterialConfig {
    fn elastic(&self) -> Result<ElasticParams, ConfigError> {
        match (self.youngs_modulus, self.poisson_ratio, self.lame_lambda, self.lame_mu) {
            (Some(e), Some(nu), None, None) => Ok(ElasticParams::new(e.si, nu)),
            (None, None, Some(l), Some(m)) => Ok(ElasticParams::from_lame(l.si, m.si)),
            _ => Err(ConfigError::Invalid(format!(
                "material `{}` needs either youngs_modulus and poisson_ratio or lame_lambda and lame_mu",
                self.model
            ))),
        }
    }

    pub fn norsand_params(&self) -> Result<NorSandParams, ConfigError> {
        let mut p = match self.preset {
            Some(NorSandPreset::Dense) => NorSandParams::dense_brasted(),
            Some(NorSandPreset::Loose) | None => NorSandParams::loose_brasted(),
        };
        if let Some(o) = &self.norsand {
            macro_rules! set {
                ($($f:ident),*) => { $( if let Some(v) = o.$f { p.$f = v; } )* };
            }
            set!(m, n, h_mod, lambda_tilde, v_c0, v0, k0, shear_ratio, chi);
            if let Some(v) = o.p_i0 {
                p.p_i0 = v.si;
            }
            if let Some(v) = o.p0 {
                p.p0 = v.si;
            }
        }
        Ok(p)
    }

    pub fn to_material(&self) -> Result<Material, ConfigError> {
        let m = match self.model.as_str() {
            "hencky" => Material::Hencky(self.elastic()?),
            "neo-hookean" => Material::NeoHookean(self.elastic()?),
            "linear-elastic" => Material::LinearElastic(self.elastic()?),
            "hencky-j2" => {
                let kappa =
                    self.yield_strength.ok_or_else(|| ConfigError::Invalid("hencky-j2 needs yield_strength".into()))?;
                Material::HenckyJ2(J2Params { elastic: self.elastic()?, kappa: kappa.si })
            }
            "nor-sand" => Material::NorSand(self.norsand_params()?),
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown material model `{other}` (hencky, hencky-j2, neo-hookean, linear-elastic, nor-sand)"
                )))
            }
        };
        m.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadingConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravity: Option<Quantity<Acceleration>>,
    /// Point load (per unit thickness in 2D).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force: Option<Quantity<Force>>,
    /// Surface load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure: Option<Quantity<Pressure>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<Quantity<Time>>,
    /// Steps after which particle snapshots are written.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshots: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub jacobian: JacobianStrategy,
}

fn default_tol() -> f64 {
    1e-11
}

fn default_max_iters() -> usize {
    20
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: default_tol(), max_iters: default_max_iters(), jacobian: JacobianStrategy::Sparse }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; relative paths resolve against the working
    /// directory. No files are written when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

/// Refinement studies attached to a scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// Cell sizes of a refinement study, coarse to fine.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cell_sizes: Vec<Quantity<Length>>,
    /// Load steps actually run per level in timing studies (defaults to
    /// the full schedule).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_level: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PorousConfig {
    pub permeability: Quantity<Area>,
    /// Pore-fluid viscosity; alternatively give `consolidation_coefficient`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viscosity: Option<Quantity<Viscosity>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consolidation_coefficient: Option<Quantity<Diffusivity>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fluid_density: Option<Quantity<Density>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub report_tv: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_tv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_growth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseConfig {
    /// Modulus used to generate the reference response.
    pub true_modulus: Quantity<Pressure>,
    /// Initial guess as a fraction of the true modulus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    /// Reference response CSV (`displacement,force`); generated at
    /// `true_modulus` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriaxialConfig {
    /// Total axial compression (positive).
    pub axial_strain: f64,
    pub increments: usize,
    /// Presets to run; a custom `[material]` block runs alone when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub presets: Vec<NorSandPreset>,
}

impl ScenarioConfig {
    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_str_with(text, &[])
    }

    /// Parses `text` after applying `key=value` overrides with dotted keys.
    pub fn from_str_with(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: ScenarioConfig = ScenarioConfig::deserialize(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_str_with(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        for (i, s) in self.geometry.size.iter().enumerate() {
            if !(s.si > 0.0) {
                return bad(format!("geometry.size[{i}] must be positive"));
            }
        }
        if let Some(h) = self.geometry.cell_size {
            if !(h.si > 0.0) {
                return bad("geometry.cell_size must be positive".into());
            }
        }
        if self.geometry.particles_per_cell == Some(0) {
            return bad("geometry.particles_per_cell must be at least 1".into());
        }
        if let Some(m) = &self.material {
            m.to_material()?;
            if let Some(d) = m.density {
                if !(d.si > 0.0) {
                    return bad("material.density must be positive".into());
                }
            }
        }
        if self.schedule.steps == Some(0) {
            return bad("schedule.steps must be positive".into());
        }
        if let Some(dt) = self.schedule.dt {
            if !(dt.si > 0.0) {
                return bad("schedule.dt must be positive".into());
            }
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iters == 0 {
            return bad("solver.tol and solver.max_iters must be positive".into());
        }
        if self.study.cell_sizes.iter().any(|h| !(h.si > 0.0)) {
            return bad("study.cell_sizes must be positive".into());
        }
        if let Some(p) = &self.porous {
            if !(p.permeability.si > 0.0) {
                return bad("porous.permeability must be positive".into());
            }
            match (p.viscosity, p.consolidation_coefficient) {
                (Some(v), None) if v.si > 0.0 => {}
                (None, Some(c)) if c.si > 0.0 => {}
                _ => return bad("porous needs exactly one positive viscosity or consolidation_coefficient".into()),
            }
        }
        if let Some(inv) = &self.inverse {
            if !(inv.true_modulus.si > 0.0) {
                return bad("inverse.true_modulus must be positive".into());
            }
            if inv.learning_rate.is_some_and(|v| !(v > 0.0)) || inv.initial_factor.is_some_and(|v| !(v > 0.0)) {
                return bad("inverse.learning_rate and inverse.initial_factor must be positive".into());
            }
        }
        if let Some(t) = &self.triaxial {
            if !(t.axial_strain > 0.0 && t.axial_strain < 1.0) || t.increments == 0 {
                return bad("triaxial.axial_strain must lie in (0, 1) and increments be positive".into());
            }
        }
        let needs = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                bad(format!("{} scenario needs {what}", self.scenario.name()))
            }
        };
        match self.scenario {
            ScenarioKind::Triaxial => needs(self.triaxial.is_some(), "a [triaxial] section")?,
            ScenarioKind::Consolidation => {
                needs(self.porous.is_some() && self.material.is_some(), "[porous] and [material] sections")?
            }
            ScenarioKind::Inverse => needs(self.inverse.is_some(), "an [inverse] section")?,
            ScenarioKind::Bar | ScenarioKind::Cantilever => needs(self.material.is_some(), "a [material] section")?,
            ScenarioKind::JacobianBench => needs(
                self.material.is_some() && !self.study.cell_sizes.is_empty(),
                "a [material] section and study.cell_sizes",
            )?,
        }
        Ok(())
    }
}

fn apply_override(table: &mut toml::Table, text: &str) -> Result<(), ConfigError> {
    let (key, raw) = text.split_once('=').ok_or_else(|| ConfigError::Override(text.into()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(text.into()));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur =
            entry.as_table_mut().ok_or_else(|| ConfigError::Override(format!("{text}: `{part}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
