//! Scenario configuration: TOML parsing, presets, validation.
//!
//! A config file selects a scenario (`circle`, `square`, `channel` or
//! `custom`) and overrides any subset of the preset values. Keys are merged
//! section-wise over the preset, unknown keys are rejected. The full
//! grammar is documented in the repository README; a resolved config can be
//! written back out and reloads to an identical value.

use acre_core::chemistry::ModelParams;
use acre_core::coupling::{Approach, SolverConfig};
use acre_core::mesh::{BoundaryCondition, FieldBc};
use acre_core::ReactionRate;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("missing `scenario` key (circle | square | channel | custom)")]
    MissingScenario,
    #[error("unknown scenario `{0}` (expected circle | square | channel | custom)")]
    UnknownScenario(String),
    #[error("field `{field}`: {problem}")]
    Invalid { field: String, problem: String },
}

/// Named scenario preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Circle,
    Square,
    Channel,
    Custom,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioKind::Circle => "circle",
            ScenarioKind::Square => "square",
            ScenarioKind::Channel => "channel",
            ScenarioKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "circle" => Ok(ScenarioKind::Circle),
            "square" => Ok(ScenarioKind::Square),
            "channel" => Ok(ScenarioKind::Channel),
            "custom" => Ok(ScenarioKind::Custom),
            other => Err(ConfigError::UnknownScenario(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub interface_width: f64,
    pub interface_diffusion: f64,
    pub rate_constant: f64,
    pub activation_temperature: f64,
    pub equilibrium_concentration: f64,
    pub mineral_molar_density: f64,
    pub solute_diffusivity: f64,
    pub fluid_heat_capacity: f64,
    pub mineral_heat_capacity: f64,
    pub fluid_conductivity: f64,
    pub mineral_conductivity: f64,
}

impl ParamsSection {
    pub fn to_model_params(self) -> ModelParams {
        ModelParams {
            interface_width: self.interface_width,
            interface_diffusion: self.interface_diffusion,
            rate_constant: self.rate_constant,
            activation_temperature: self.activation_temperature,
            equilibrium_concentration: self.equilibrium_concentration,
            mineral_molar_density: self.mineral_molar_density,
            solute_diffusivity: self.solute_diffusivity,
            fluid_heat_capacity: self.fluid_heat_capacity,
            mineral_heat_capacity: self.mineral_heat_capacity,
            fluid_conductivity: self.fluid_conductivity,
            mineral_conductivity: self.mineral_conductivity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReactionKind {
    Constant,
    Arrhenius,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionSection {
    pub kind: ReactionKind,
    /// Rate value for `kind = "constant"`.
    pub value: f64,
    /// Admissible temperature range used to bound the Arrhenius rate.
    pub t_range: [f64; 2],
    /// Admissible concentration range used to bound the Arrhenius rate.
    pub c_range: [f64; 2],
}

impl ReactionSection {
    pub fn to_rate(self) -> ReactionRate {
        match self.kind {
            ReactionKind::Constant => ReactionRate::Constant(self.value),
            ReactionKind::Arrhenius => ReactionRate::Arrhenius,
        }
    }
}

/// Stabilization parameter: an explicit number or a fraction of the
/// nonlinearity bound (`"MG"`, `"MG/2"`, `"MG/4"`, ...).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stabilization {
    Value(f64),
    BoundFraction(f64),
}

impl Stabilization {
    pub fn resolve(&self, bound: f64) -> f64 {
        match self {
            Stabilization::Value(v) => *v,
            Stabilization::BoundFraction(divisor) => bound / divisor,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Stabilization::Value(v) => format!("{v}"),
            Stabilization::BoundFraction(d) if *d == 1.0 => "MG".to_string(),
            Stabilization::BoundFraction(d) => format!("MG/{d}"),
        }
    }
}

impl std::str::FromStr for Stabilization {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let trimmed = s.trim();
        if trimmed.eq_ignore_ascii_case("mg") {
            return Ok(Stabilization::BoundFraction(1.0));
        }
        if let Some(rest) = trimmed.strip_prefix("MG/").or_else(|| trimmed.strip_prefix("mg/")) {
            let divisor: f64 = rest
                .parse()
                .map_err(|_| format!("invalid stabilization divisor `{rest}`"))?;
            if !(divisor > 0.0) {
                return Err(format!("stabilization divisor must be positive, got {divisor}"));
            }
            return Ok(Stabilization::BoundFraction(divisor));
        }
        trimmed
            .parse::<f64>()
            .map(Stabilization::Value)
            .map_err(|_| format!("expected a number or MG[/k], got `{trimmed}`"))
    }
}

impl Serialize for Stabilization {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Stabilization::Value(v) => serializer.serialize_f64(*v),
            other => serializer.serialize_str(&other.label()),
        }
    }
}

impl<'de> Deserialize<'de> for Stabilization {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct Visitor;
        impl serde::de::Visitor<'_> for Visitor {
            type Value = Stabilization;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a string like \"MG\" or \"MG/4\"")
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> Result<Stabilization, E> {
                Ok(Stabilization::Value(v))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<Stabilization, E> {
                Ok(Stabilization::Value(v as f64))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Stabilization, E> {
                v.parse().map_err(E::custom)
            }
        }
        deserializer.deserialize_any(Visitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub dt: f64,
    pub t_end: f64,
    /// `"i"` (Newton, original equation), `"ii"` (Newton, conservative),
    /// `"iii"` (split L-scheme).
    pub approach: ApproachLabel,
    pub coupled: bool,
    pub stabilization: Stabilization,
    pub coupling_stabilization: f64,
    pub lscheme_tolerance: f64,
    pub max_lscheme_iters: usize,
    pub coupling_tolerance: f64,
    pub max_coupling_iters: usize,
    pub newton_tolerance: f64,
    pub max_newton_iters: usize,
    pub linear_rel_tol: f64,
    pub phase_floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApproachLabel {
    I,
    Ii,
    Iii,
}

impl ApproachLabel {
    pub fn to_approach(self) -> Approach {
        match self {
            ApproachLabel::I => Approach::NewtonOriginal,
            ApproachLabel::Ii => Approach::NewtonConservative,
            ApproachLabel::Iii => Approach::LScheme,
        }
    }
}

impl fmt::Display for ApproachLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApproachLabel::I => "i",
            ApproachLabel::Ii => "ii",
            ApproachLabel::Iii => "iii",
        })
    }
}

impl std::str::FromStr for ApproachLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "i" => Ok(ApproachLabel::I),
            "ii" => Ok(ApproachLabel::Ii),
            "iii" => Ok(ApproachLabel::Iii),
            other => Err(format!("expected i | ii | iii, got `{other}`")),
        }
    }
}

impl Serialize for ApproachLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ApproachLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    Circle,
    Square,
    Layer,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub kind: InitialKind,
    pub circle_center: [f64; 2],
    pub circle_radius: f64,
    pub square_side: f64,
    /// Height of the initial mineral layer for the channel scenario.
    pub layer_height: f64,
    pub temperature: f64,
    pub concentration: f64,
}

/// One side of the boundary: `"neumann"` or `"dirichlet <value>"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideSpec(pub BoundaryCondition);

impl fmt::Display for SideSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            BoundaryCondition::HomogeneousNeumann => f.write_str("neumann"),
            BoundaryCondition::Dirichlet(v) => write!(f, "dirichlet {v}"),
        }
    }
}

impl std::str::FromStr for SideSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("neumann") {
            return Ok(SideSpec(BoundaryCondition::HomogeneousNeumann));
        }
        if let Some(rest) = t.strip_prefix("dirichlet") {
            let v: f64 = rest
                .trim()
                .parse()
                .map_err(|_| format!("invalid dirichlet value `{}`", rest.trim()))?;
            return Ok(SideSpec(BoundaryCondition::Dirichlet(v)));
        }
        Err(format!("expected `neumann` or `dirichlet <value>`, got `{t}`"))
    }
}

impl Serialize for SideSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SideSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideSet {
    pub left: SideSpec,
    pub right: SideSpec,
    pub bottom: SideSpec,
    pub top: SideSpec,
}

impl SideSet {
    pub fn all_neumann() -> Self {
        let n = SideSpec(BoundaryCondition::HomogeneousNeumann);
        Self { left: n, right: n, bottom: n, top: n }
    }

    pub fn to_field_bc(self) -> FieldBc {
        FieldBc {
            left: self.left.0,
            right: self.right.0,
            bottom: self.bottom.0,
            top: self.top.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcSection {
    pub phi: SideSet,
    pub concentration: SideSet,
    pub temperature: SideSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    /// Write a field snapshot every this many steps (0 disables periodic
    /// snapshots).
    pub snapshot_every: usize,
    /// Additional times at which snapshots are written.
    pub snapshot_times: Vec<f64>,
}

/// Fully resolved scenario configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub mesh: MeshSection,
    pub params: ParamsSection,
    pub reaction: ReactionSection,
    pub solver: SolverSection,
    pub initial: InitialSection,
    pub bc: BcSection,
    pub output: OutputSection,
}

impl ScenarioConfig {
    /// Preset values for a named scenario.
    pub fn preset(kind: ScenarioKind) -> Self {
        match kind {
            ScenarioKind::Circle | ScenarioKind::Square | ScenarioKind::Custom => {
                let initial_kind = if kind == ScenarioKind::Square {
                    InitialKind::Square
                } else {
                    InitialKind::Circle
                };
                ScenarioConfig {
                    scenario: kind,
                    mesh: MeshSection { nx: 100, ny: 100, lx: 1.0, ly: 1.0 },
                    params: ParamsSection {
                        interface_width: 0.05,
                        interface_diffusion: 1.0,
                        rate_constant: 1.0,
                        activation_temperature: 1.0,
                        equilibrium_concentration: 0.5,
                        mineral_molar_density: 1.0,
                        solute_diffusivity: 1.0,
                        fluid_heat_capacity: 1.0,
                        mineral_heat_capacity: 1.0,
                        fluid_conductivity: 1.0,
                        mineral_conductivity: 2.0,
                    },
                    reaction: ReactionSection {
                        kind: ReactionKind::Constant,
                        value: 0.0,
                        t_range: [0.9, 1.0],
                        c_range: [0.25, 0.5],
                    },
                    solver: SolverSection {
                        dt: 1e-4,
                        t_end: 1.0,
                        approach: ApproachLabel::Iii,
                        coupled: false,
                        stabilization: Stabilization::BoundFraction(1.0),
                        coupling_stabilization: 0.0,
                        // Tolerances are measured in the measure-weighted
                        // L2 norm (sqrt(sum |K| u^2)).
                        lscheme_tolerance: 1e-13,
                        max_lscheme_iters: 200,
                        coupling_tolerance: 1e-6,
                        max_coupling_iters: 50,
                        newton_tolerance: 1e-13,
                        max_newton_iters: 50,
                        linear_rel_tol: 1e-12,
                        phase_floor: 0.0,
                    },
                    initial: InitialSection {
                        kind: initial_kind,
                        circle_center: [0.5, 0.5],
                        circle_radius: 0.3,
                        square_side: 0.5,
                        layer_height: 0.25,
                        temperature: 1.0,
                        concentration: 0.5,
                    },
                    bc: BcSection {
                        phi: SideSet::all_neumann(),
                        concentration: SideSet::all_neumann(),
                        temperature: SideSet::all_neumann(),
                    },
                    output: OutputSection {
                        dir: "out".to_string(),
                        snapshot_every: 100,
                        snapshot_times: vec![0.5, 1.0],
                    },
                }
            }
            ScenarioKind::Channel => ScenarioConfig {
                scenario: kind,
                mesh: MeshSection { nx: 100, ny: 100, lx: 1.0, ly: 1.0 },
                params: ParamsSection {
                    interface_width: 0.05,
                    interface_diffusion: 0.01,
                    rate_constant: 1.0,
                    activation_temperature: 1.0,
                    equilibrium_concentration: 0.5,
                    mineral_molar_density: 1.0,
                    solute_diffusivity: 1.0,
                    fluid_heat_capacity: 1.0,
                    mineral_heat_capacity: 1.0,
                    fluid_conductivity: 1.0,
                    mineral_conductivity: 2.0,
                },
                reaction: ReactionSection {
                    kind: ReactionKind::Arrhenius,
                    value: 0.0,
                    t_range: [0.9, 1.0],
                    c_range: [0.25, 0.5],
                },
                solver: SolverSection {
                    dt: 1e-3,
                    t_end: 1.0,
                    approach: ApproachLabel::Iii,
                    coupled: true,
                    stabilization: Stabilization::BoundFraction(1.0),
                    coupling_stabilization: 1e-4,
                    lscheme_tolerance: 1e-8,
                    max_lscheme_iters: 200,
                    coupling_tolerance: 1e-6,
                    max_coupling_iters: 50,
                    newton_tolerance: 1e-8,
                    max_newton_iters: 50,
                    linear_rel_tol: 1e-12,
                    phase_floor: 0.0,
                },
                initial: InitialSection {
                    kind: InitialKind::Layer,
                    circle_center: [0.5, 0.5],
                    circle_radius: 0.3,
                    square_side: 0.5,
                    layer_height: 0.25,
                    temperature: 1.0,
                    concentration: 0.5,
                },
                bc: BcSection {
                    phi: SideSet::all_neumann(),
                    concentration: SideSet {
                        left: SideSpec(BoundaryCondition::Dirichlet(0.25)),
                        right: SideSpec(BoundaryCondition::HomogeneousNeumann),
                        bottom: SideSpec(BoundaryCondition::HomogeneousNeumann),
                        top: SideSpec(BoundaryCondition::HomogeneousNeumann),
                    },
                    temperature: SideSet {
                        left: SideSpec(BoundaryCondition::Dirichlet(0.9)),
                        right: SideSpec(BoundaryCondition::HomogeneousNeumann),
                        bottom: SideSpec(BoundaryCondition::HomogeneousNeumann),
                        top: SideSpec(BoundaryCondition::HomogeneousNeumann),
                    },
                },
                output: OutputSection {
                    dir: "out".to_string(),
                    snapshot_every: 100,
                    snapshot_times: vec![0.5, 1.0],
                },
            },
        }
    }

    pub fn model_params(&self) -> ModelParams {
        self.params.to_model_params()
    }

    pub fn rate(&self) -> ReactionRate {
        self.reaction.to_rate()
    }

    /// Bound on the phase-field nonlinearity derivative for this
    /// configuration (the default stabilization).
    pub fn stabilization_bound(&self) -> Result<f64, ConfigError> {
        let params = self.model_params();
        let f_max = self
            .rate()
            .max_abs(
                &params,
                (self.reaction.t_range[0], self.reaction.t_range[1]),
                (self.reaction.c_range[0], self.reaction.c_range[1]),
            )
            .map_err(|e| ConfigError::Invalid {
                field: "reaction.t_range".into(),
                problem: e.to_string(),
            })?;
        Ok(acre_core::chemistry::stabilization_bound(&params, f_max))
    }

    /// Resolves the solver section into the core configuration.
    pub fn solver_config(&self) -> Result<SolverConfig, ConfigError> {
        let bound = self.stabilization_bound()?;
        Ok(SolverConfig {
            dt: self.solver.dt,
            t_end: self.solver.t_end,
            approach: self.solver.approach.to_approach(),
            coupled: self.solver.coupled,
            stabilization: self.solver.stabilization.resolve(bound),
            coupling_stabilization: self.solver.coupling_stabilization,
            lscheme_tolerance: self.solver.lscheme_tolerance,
            max_lscheme_iters: self.solver.max_lscheme_iters,
            coupling_tolerance: self.solver.coupling_tolerance,
            max_coupling_iters: self.solver.max_coupling_iters,
            newton_tolerance: self.solver.newton_tolerance,
            max_newton_iters: self.solver.max_newton_iters,
            linear_rel_tol: self.solver.linear_rel_tol,
            phase_floor: self.solver.phase_floor,
        })
    }

    /// Validates ranges and geometry. Returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>, ConfigError> {
        let mut warnings = Vec::new();
        let invalid = |field: &str, problem: String| ConfigError::Invalid {
            field: field.to_string(),
            problem,
        };
        if self.mesh.nx == 0 || self.mesh.ny == 0 {
            return Err(invalid("mesh.nx", "cell counts must be at least 1".into()));
        }
        if !(self.mesh.lx > 0.0) || !(self.mesh.ly > 0.0) {
            return Err(invalid("mesh.lx", "domain extents must be positive".into()));
        }
        let checks = [
            ("params.interface_width", self.params.interface_width),
            ("params.interface_diffusion", self.params.interface_diffusion),
            ("params.rate_constant", self.params.rate_constant),
            ("params.activation_temperature", self.params.activation_temperature),
            ("params.equilibrium_concentration", self.params.equilibrium_concentration),
            ("params.mineral_molar_density", self.params.mineral_molar_density),
            ("params.solute_diffusivity", self.params.solute_diffusivity),
            ("params.fluid_heat_capacity", self.params.fluid_heat_capacity),
            ("params.mineral_heat_capacity", self.params.mineral_heat_capacity),
            ("params.fluid_conductivity", self.params.fluid_conductivity),
            ("params.mineral_conductivity", self.params.mineral_conductivity),
        ];
        for (field, value) in checks {
            if !(value > 0.0) || !value.is_finite() {
                return Err(invalid(field, format!("must be strictly positive, got {value}")));
            }
        }
        if !(self.solver.dt > 0.0) {
            return Err(invalid("solver.dt", format!("must be positive, got {}", self.solver.dt)));
        }
        if self.solver.t_end < 0.0 {
            return Err(invalid("solver.t_end", "must be nonnegative".into()));
        }
        if !(self.solver.lscheme_tolerance > 0.0) {
            return Err(invalid("solver.lscheme_tolerance", "must be positive".into()));
        }
        if !(self.solver.coupling_tolerance > 0.0) {
            return Err(invalid("solver.coupling_tolerance", "must be positive".into()));
        }
        if self.reaction.t_range[0] > self.reaction.t_range[1] || self.reaction.t_range[0] <= 0.0 {
            return Err(invalid(
                "reaction.t_range",
                "must be an increasing pair of positive temperatures".into(),
            ));
        }
        if self.reaction.c_range[0] > self.reaction.c_range[1] {
            return Err(invalid("reaction.c_range", "must be an increasing pair".into()));
        }

        // Geometry must lie inside the domain.
        match self.initial.kind {
            InitialKind::Circle => {
                let [cx, cy] = self.initial.circle_center;
                let r = self.initial.circle_radius;
                if !(r > 0.0)
                    || cx - r < 0.0
                    || cx + r > self.mesh.lx
                    || cy - r < 0.0
                    || cy + r > self.mesh.ly
                {
                    return Err(invalid(
                        "initial.circle_radius",
                        "circle must lie inside the domain".into(),
                    ));
                }
            }
            InitialKind::Square => {
                let side = self.initial.square_side;
                if !(side > 0.0) || side > self.mesh.lx || side > self.mesh.ly {
                    return Err(invalid(
                        "initial.square_side",
                        "square must lie inside the domain".into(),
                    ));
                }
            }
            InitialKind::Layer => {
                let h = self.initial.layer_height;
                if !(h > 0.0) || h >= self.mesh.ly {
                    return Err(invalid(
                        "initial.layer_height",
                        "layer must lie inside the domain".into(),
                    ));
                }
            }
            InitialKind::Uniform => {}
        }

        // Non-fatal checks.
        let params = self.model_params();
        if !params.gamma_constraint_satisfied() {
            let lhs = 4.0 * params.interface_diffusion;
            let rhs = params.interface_width * params.rate_constant / params.mineral_molar_density;
            warnings.push(format!(
                "gamma constraint violated: 4*interface_diffusion = {lhs} > interface_width*rate_constant/mineral_molar_density = {rhs}; the solute maximum principle of the coupled model is not guaranteed"
            ));
        }
        let h = (self.mesh.lx / self.mesh.nx as f64).max(self.mesh.ly / self.mesh.ny as f64);
        if params.interface_width < 2.0 * h {
            warnings.push(format!(
                "interface_width = {} is below twice the cell size {h}; the diffuse interface is under-resolved",
                params.interface_width
            ));
        }
        if self.solver.coupled && self.solver.approach != ApproachLabel::Iii {
            return Err(invalid(
                "solver.approach",
                "coupled runs require approach iii (the split L-scheme)".into(),
            ));
        }
        Ok(warnings)
    }
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(base_sub)), toml::Value::Table(overlay_sub)) => {
                merge_tables(base_sub, overlay_sub);
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Parses a config string: the named scenario's preset with the file's
/// keys merged on top. Unknown keys anywhere are rejected.
pub fn parse_config(text: &str, origin: &str) -> Result<ScenarioConfig, ConfigError> {
    let user: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let kind = match user.get("scenario") {
        Some(toml::Value::String(s)) => s.parse::<ScenarioKind>()?,
        Some(other) => {
            return Err(ConfigError::Parse {
                path: origin.to_string(),
                message: format!("`scenario` must be a string, got {other}"),
            })
        }
        None => return Err(ConfigError::MissingScenario),
    };
    let preset = ScenarioConfig::preset(kind);
    let mut merged = toml::Table::try_from(&preset).expect("preset serializes");
    merge_tables(&mut merged, user);
    merged.try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })
}

/// Loads and resolves a config file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, &path.display().to_string())
}

/// Serializes a resolved config; reloading the output reproduces it.
pub fn config_to_toml(cfg: &ScenarioConfig) -> String {
    toml::to_string_pretty(cfg).expect("config serializes")
}

pub fn write_config(cfg: &ScenarioConfig, path: &Path) -> Result<(), ConfigError> {
    std::fs::write(path, config_to_toml(cfg)).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}
