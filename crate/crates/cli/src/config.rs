//! Scenario files: a versioned TOML schema describing an operator, an
//! optional network and the analyses to run on them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sgnet_core::gainop::{self, GainOperator, DEFAULT_KLEENE_EPS, DEFAULT_KLEENE_MAX_DEPTH};
use sgnet_core::kfunc::ScalarFn;
use sgnet_core::network::{self, Network};

use crate::CliError;

/// The only schema version this build reads.
pub const SCHEMA_VERSION: u32 = 1;

/// A named function from `[functions]` or an inline tagged record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FnRef {
    Named(String),
    Inline(ScalarFn),
}

impl From<ScalarFn> for FnRef {
    fn from(f: ScalarFn) -> Self {
        FnRef::Inline(f)
    }
}

impl FnRef {
    pub fn resolve(&self, functions: &BTreeMap<String, ScalarFn>) -> Result<ScalarFn, String> {
        match self {
            FnRef::Inline(f) => Ok(f.clone()),
            FnRef::Named(name) => functions.get(name).cloned().ok_or_else(|| {
                let known: Vec<&str> = functions.keys().map(String::as_str).collect();
                format!("unknown function `{name}` (defined: {})", known.join(", "))
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub functions: BTreeMap<String, ScalarFn>,
    pub operator: OperatorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
    #[serde(default)]
    pub analyses: Vec<AnalysisSpec>,
    /// Relative paths are taken from the directory of the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Re-run condition checks on generated operators at twice the window.
    #[serde(default = "default_true")]
    pub drift: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Example55 {
        window: usize,
    },
    Cascade {
        window: usize,
        #[serde(default = "default_cascade_slope")]
        slope: f64,
    },
    Twonode {
        #[serde(default = "default_twonode_a")]
        a: f64,
        #[serde(default = "default_twonode_b")]
        b: f64,
    },
    Explicit {
        window: usize,
        #[serde(default)]
        entries: Vec<EntrySpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntrySpec {
    pub i: usize,
    pub j: usize,
    pub gain: FnRef,
}

impl OperatorSpec {
    pub fn window(&self) -> usize {
        match self {
            OperatorSpec::Example55 { window } | OperatorSpec::Cascade { window, .. } => *window,
            OperatorSpec::Explicit { window, .. } => *window,
            OperatorSpec::Twonode { .. } => 2,
        }
    }

    pub fn build(&self, functions: &BTreeMap<String, ScalarFn>) -> Result<GainOperator, CliError> {
        let g = match self {
            OperatorSpec::Example55 { window } => gainop::example55(*window),
            OperatorSpec::Cascade { window, slope } => gainop::cascade(*window, *slope),
            OperatorSpec::Twonode { a, b } => gainop::twonode(*a, *b),
            OperatorSpec::Explicit { window, entries } => {
                let mut resolved = Vec::with_capacity(entries.len());
                for (k, e) in entries.iter().enumerate() {
                    let f = e
                        .gain
                        .resolve(functions)
                        .map_err(|m| CliError::config(format!("operator.entries[{k}].gain"), m))?;
                    resolved.push((e.i, e.j, f));
                }
                GainOperator::explicit(*window, resolved)
            }
        };
        g.map_err(|e| CliError::config("operator", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    /// `ẋ_i = −x_i + coupling·x_{i−1} + u_i`.
    Cascade {
        n: usize,
        #[serde(default = "default_coupling")]
        coupling: f64,
    },
    Twonode {
        #[serde(default = "default_twonode_a")]
        a: f64,
        #[serde(default = "default_twonode_b")]
        b: f64,
    },
    /// `ẋ_i = −diag_i·x_i + Σ b_ij x_j + u_i` with couplings `(i, j, b_ij)`.
    Affine {
        diag: Vec<f64>,
        #[serde(default)]
        couplings: Vec<(usize, usize, f64)>,
    },
}

impl NetworkSpec {
    pub fn window(&self) -> usize {
        match self {
            NetworkSpec::Cascade { n, .. } => *n,
            NetworkSpec::Twonode { .. } => 2,
            NetworkSpec::Affine { diag, .. } => diag.len(),
        }
    }

    pub fn build(&self, name: &str) -> Result<Network, CliError> {
        let net = match self {
            NetworkSpec::Cascade { n, coupling } => network::linear_cascade(*n, *coupling),
            NetworkSpec::Twonode { a, b } => network::twonode_network(*a, *b),
            NetworkSpec::Affine { diag, couplings } => network::affine(name, diag, couplings),
        };
        net.map_err(|e| CliError::config("network", e.to_string()))
    }
}

/// Input applied to every subsystem.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InputSpec {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    Step {
        t0: f64,
        value: f64,
    },
    /// Per trajectory: a step at a uniform time in `[0, horizon/2]` with a
    /// uniform magnitude in `[0, max_magnitude]`.
    RandomStep {
        max_magnitude: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_per_decade")]
    pub per_decade: usize,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        sgnet_core::kfunc::log_grid(self.lo, self.hi, self.per_decade)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AnalysisSpec {
    /// `Γ(s) ≱ s` on sampled sequences.
    Sgc {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default)]
        seed: u64,
    },
    StrongSgc {
        #[serde(default)]
        label: Option<String>,
        rho: FnRef,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default)]
        seed: u64,
    },
    MaxRobustSgc {
        #[serde(default)]
        label: Option<String>,
        omega: FnRef,
        #[serde(default = "default_ij_bound")]
        ij_bound: usize,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default)]
        seed: u64,
    },
    SgcCycles {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        r_grid: Option<GridSpec>,
    },
    Ugs {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "default_radii")]
        radii: Vec<f64>,
        #[serde(default = "default_k_max")]
        k_max: usize,
    },
    Ugas {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "default_radii")]
        radii: Vec<f64>,
        #[serde(default = "default_k_max")]
        k_max: usize,
        #[serde(default = "default_decay_target")]
        decay_target: f64,
    },
    Chain {
        #[serde(default)]
        label: Option<String>,
        eta: FnRef,
        #[serde(default = "default_one")]
        r: f64,
        #[serde(default = "default_n_max")]
        n_max: usize,
        /// Defaults to the operator window.
        #[serde(default)]
        index_bound: Option<usize>,
    },
    /// Components of `Γ^k(r𝟙)` for the listed depths and indices.
    Iterate {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "default_one")]
        r: f64,
        steps: Vec<usize>,
        indices: Vec<usize>,
    },
    /// `Q(r𝟙)` for each radius.
    Star {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "default_star_radii")]
        radii: Vec<f64>,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_m_max")]
        m_max: usize,
    },
    VirtualReduction {
        #[serde(default)]
        label: Option<String>,
        classes: usize,
        /// Explicit `(index, class)` assignments; other indices go to `default`.
        #[serde(default)]
        assign: Vec<(usize, usize)>,
        default: usize,
        /// `gains[a][b]` is the virtual gain from class `b+1` into class `a+1`.
        gains: Vec<Vec<FnRef>>,
    },
    Path {
        #[serde(default)]
        label: Option<String>,
        theta: FnRef,
        #[serde(default = "default_path_grid")]
        r_grid: GridSpec,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_m_max")]
        m_max: usize,
        #[serde(default)]
        omega: Option<FnRef>,
        #[serde(default)]
        k_max: Option<usize>,
    },
    /// Simulates the network and checks the composite Lyapunov decay built
    /// from the most recent path. Requires `[network]` and a `path` analysis.
    Simulate {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "default_trajectories")]
        trajectories: usize,
        #[serde(default = "default_horizon")]
        horizon: f64,
        #[serde(default = "default_dt")]
        dt: f64,
        #[serde(default)]
        seed: u64,
        /// Initial states are uniform in `[-x0_radius, x0_radius]^n`.
        #[serde(default = "default_one")]
        x0_radius: f64,
        #[serde(default)]
        input: InputSpec,
        #[serde(default = "default_alpha_hat")]
        alpha_hat: FnRef,
        /// Forward-difference stride of the decay check.
        #[serde(default = "default_stride")]
        stride: f64,
        #[serde(default = "default_tol")]
        tol: f64,
        /// Fit an ISS envelope on the first half of the trajectories and
        /// check it on the second half.
        #[serde(default)]
        iss: bool,
        /// Every `table_stride`-th sample goes into the trajectory table.
        #[serde(default = "default_table_stride")]
        table_stride: usize,
    },
}

/// Execution order: condition checks, closures, paths, simulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Conditions,
    Closure,
    Path,
    Simulation,
}

impl AnalysisSpec {
    pub fn check_name(&self) -> &'static str {
        match self {
            AnalysisSpec::Sgc { .. } => "sgc",
            AnalysisSpec::StrongSgc { .. } => "strong-sgc",
            AnalysisSpec::MaxRobustSgc { .. } => "max-robust-sgc",
            AnalysisSpec::SgcCycles { .. } => "sgc-cycles",
            AnalysisSpec::Ugs { .. } => "ugs",
            AnalysisSpec::Ugas { .. } => "ugas",
            AnalysisSpec::Chain { .. } => "chain",
            AnalysisSpec::Iterate { .. } => "iterate",
            AnalysisSpec::Star { .. } => "star",
            AnalysisSpec::VirtualReduction { .. } => "virtual-reduction",
            AnalysisSpec::Path { .. } => "path",
            AnalysisSpec::Simulate { .. } => "simulate",
        }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            AnalysisSpec::Sgc { label, .. }
            | AnalysisSpec::StrongSgc { label, .. }
            | AnalysisSpec::MaxRobustSgc { label, .. }
            | AnalysisSpec::SgcCycles { label, .. }
            | AnalysisSpec::Ugs { label, .. }
            | AnalysisSpec::Ugas { label, .. }
            | AnalysisSpec::Chain { label, .. }
            | AnalysisSpec::Iterate { label, .. }
            | AnalysisSpec::Star { label, .. }
            | AnalysisSpec::VirtualReduction { label, .. }
            | AnalysisSpec::Path { label, .. }
            | AnalysisSpec::Simulate { label, .. } => label.as_deref(),
        }
    }

    pub fn stage(&self) -> Stage {
        match self {
            AnalysisSpec::Star { .. } => Stage::Closure,
            AnalysisSpec::Path { .. } => Stage::Path,
            AnalysisSpec::Simulate { .. } => Stage::Simulation,
            _ => Stage::Conditions,
        }
    }

    fn fn_refs(&self) -> Vec<(String, &FnRef)> {
        match self {
            AnalysisSpec::StrongSgc { rho, .. } => vec![("rho".into(), rho)],
            AnalysisSpec::MaxRobustSgc { omega, .. } => vec![("omega".into(), omega)],
            AnalysisSpec::Chain { eta, .. } => vec![("eta".into(), eta)],
            AnalysisSpec::VirtualReduction { gains, .. } => gains
                .iter()
                .enumerate()
                .flat_map(|(a, row)| row.iter().enumerate().map(move |(b, f)| (format!("gains[{a}][{b}]"), f)))
                .collect(),
            AnalysisSpec::Path { theta, omega, .. } => {
                std::iter::once(("theta".to_string(), theta)).chain(omega.iter().map(|o| ("omega".into(), o))).collect()
            }
            AnalysisSpec::Simulate { alpha_hat, .. } => vec![("alpha_hat".into(), alpha_hat)],
            _ => Vec::new(),
        }
    }
}

impl Scenario {
    /// Checks everything the schema cannot express: version, function
    /// names and parameters, and window agreement.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(
                "schema_version",
                format!("unsupported version {} (this build reads {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        for (name, f) in &self.functions {
            f.validate().map_err(|e| CliError::config(format!("functions.{name}"), e.to_string()))?;
        }
        if let OperatorSpec::Explicit { entries, .. } = &self.operator {
            for (k, e) in entries.iter().enumerate() {
                e.gain
                    .resolve(&self.functions)
                    .map_err(|m| CliError::config(format!("operator.entries[{k}].gain"), m))?;
            }
        }
        for (k, a) in self.analyses.iter().enumerate() {
            for (field, f) in a.fn_refs() {
                let f =
                    f.resolve(&self.functions).map_err(|m| CliError::config(format!("analyses[{k}].{field}"), m))?;
                f.validate().map_err(|e| CliError::config(format!("analyses[{k}].{field}"), e.to_string()))?;
            }
        }
        if let Some(net) = &self.network {
            if net.window() != self.operator.window() {
                return Err(CliError::config(
                    "network",
                    format!(
                        "network has {} subsystems but the operator window is {}",
                        net.window(),
                        self.operator.window()
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Parses and validates a scenario; schema errors name the offending key.
pub fn parse_scenario(text: &str) -> Result<Scenario, CliError> {
    let de = toml::Deserializer::new(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.into_inner().message().trim().to_string();
        CliError::config(if path == "." { "<root>".into() } else { path }, message)
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_scenario(&text)
}

fn default_true() -> bool {
    true
}
fn default_cascade_slope() -> f64 {
    0.5
}
fn default_twonode_a() -> f64 {
    2.0
}
fn default_twonode_b() -> f64 {
    0.2
}
fn default_coupling() -> f64 {
    0.25
}
fn default_per_decade() -> usize {
    sgnet_core::path::DEFAULT_PATH_PER_DECADE
}
fn default_samples() -> usize {
    200
}
fn default_ij_bound() -> usize {
    16
}
fn default_radii() -> Vec<f64> {
    vec![0.1, 1.0, 10.0]
}
fn default_star_radii() -> Vec<f64> {
    vec![1.0]
}
fn default_k_max() -> usize {
    64
}
fn default_decay_target() -> f64 {
    sgnet_core::sgc::DEFAULT_DECAY_TARGET
}
fn default_one() -> f64 {
    1.0
}
fn default_n_max() -> usize {
    32
}
fn default_eps() -> f64 {
    DEFAULT_KLEENE_EPS
}
fn default_m_max() -> usize {
    DEFAULT_KLEENE_MAX_DEPTH
}
fn default_path_grid() -> GridSpec {
    GridSpec { lo: 1e-3, hi: 10.0, per_decade: default_per_decade() }
}
fn default_trajectories() -> usize {
    10
}
fn default_horizon() -> f64 {
    4.0
}
fn default_dt() -> f64 {
    1e-3
}
fn default_alpha_hat() -> FnRef {
    FnRef::Inline(ScalarFn::linear(0.1))
}
fn default_stride() -> f64 {
    5e-3
}
fn default_tol() -> f64 {
    1e-6
}
fn default_table_stride() -> usize {
    10
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
name = "tiny"

[functions]
half = { kind = "linear", slope = 0.5 }

[operator]
preset = "explicit"
window = 2
entries = [{ i = 1, j = 2, gain = "half" }, { i = 2, j = 1, gain = { kind = "linear", slope = 0.2 } }]

[[analyses]]
check = "sgc-cycles"
"#;

    #[test]
    fn parses_minimal_scenario() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.name, "tiny");
        assert!(s.drift);
        assert_eq!(s.analyses.len(), 1);
        let g = s.operator.build(&s.functions).unwrap();
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn unknown_function_names_its_key() {
        let text = MINIMAL.replace("gain = \"half\"", "gain = \"third\"");
        let err = parse_scenario(&text).unwrap_err();
        assert!(matches!(&err, CliError::Config { key, .. } if key == "operator.entries[0].gain"), "{err}");
    }

    #[test]
    fn schema_errors_carry_the_key_path() {
        let text = MINIMAL.replace("check = \"sgc-cycles\"", "check = \"sgc-cycles\"\nbogus = 1");
        let err = parse_scenario(&text).unwrap_err();
        let CliError::Config { key, message } = err else { panic!("expected a config error") };
        assert!(key.starts_with("analyses"), "{key}");
        assert!(message.contains("bogus"), "{message}");
    }

    #[test]
    fn unknown_preset_lists_the_alternatives() {
        let text = MINIMAL.replace("preset = \"explicit\"", "preset = \"ring\"");
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.contains("example55") && err.contains("cascade") && err.contains("twonode"), "{err}");
    }

    #[test]
    fn version_and_window_checks() {
        assert!(parse_scenario(&MINIMAL.replace("schema_version = 1", "schema_version = 2")).is_err());
        let text = format!("{MINIMAL}\n[network]\npreset = \"cascade\"\nn = 3\n");
        let err = parse_scenario(&text).unwrap_err();
        assert!(matches!(err, CliError::Config { ref key, .. } if key == "network"));
    }
}
