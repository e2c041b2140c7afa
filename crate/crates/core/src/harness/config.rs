use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::SolverConfig;
use crate::error::{Error, Result};
use crate::forcing::NoiseOperator;
use crate::rng::StreamRng;
use crate::spectral::{make_grid, SpectralField, TorusGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Skeleton,
    Ergodic,
    Action,
    LdpSweep,
    Decompose,
    Lipschitz,
    Tail,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Skeleton => "skeleton",
            ExperimentKind::Ergodic => "ergodic",
            ExperimentKind::Action => "action",
            ExperimentKind::LdpSweep => "ldp-sweep",
            ExperimentKind::Decompose => "decompose",
            ExperimentKind::Lipschitz => "lipschitz",
            ExperimentKind::Tail => "tail",
        }
    }
}

/// Whole experiment description; one TOML file per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub grid: GridSection,
    #[serde(default)]
    pub physics: PhysicsSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub samples: SamplesSection,
    #[serde(default)]
    pub checkpoint: CheckpointSection,
    #[serde(default)]
    pub initial: InitialCondition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<SkeletonSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ergodic: Option<ErgodicSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ldp: Option<LdpSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decompose: Option<DecomposeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<LipschitzSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsSection {
    pub alpha: f64,
    pub beta: f64,
    pub nonlinear: bool,
    /// Restrict the noise to these modes (and their conjugates).
    pub noise_modes: Option<Vec<[i32; 3]>>,
    pub epsilon: Vec<f64>,
    /// Orders `s` of the extra `||u||^2_{H^s}` records.
    pub sobolev_orders: Vec<f64>,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        Self {
            alpha: 1.25,
            beta: 2.0,
            nonlinear: true,
            noise_modes: None,
            epsilon: vec![0.0],
            sobolev_orders: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSection {
    pub dt: f64,
    pub t_end: f64,
    pub record_stride: usize,
    pub horizons: Vec<f64>,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 1.0,
            record_stride: 1,
            horizons: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplesSection {
    pub ensemble: usize,
    pub per_epsilon: u64,
    /// Samples per RNG stream in Monte Carlo sweeps.
    pub chunk: u64,
}

impl Default for SamplesSection {
    fn default() -> Self {
        Self {
            ensemble: 1,
            per_epsilon: 10_000,
            chunk: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointSection {
    /// Steps between checkpoints; 0 writes only the final one.
    pub every: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    Zero,
    /// `amplitude sqrt(2) cos(k.x) e_1(k)`.
    Mode { k: [i32; 3], amplitude: f64 },
    /// Random field with spectrum `exp(-|k|^2 / k0^2)`, rescaled to the
    /// given `H` norm.
    Random { norm: f64, k0: f64, seed: u64 },
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Zero
    }
}

impl InitialCondition {
    pub fn build(&self, grid: &Arc<TorusGrid>) -> Result<SpectralField> {
        match *self {
            InitialCondition::Zero => Ok(SpectralField::zeros(grid)),
            InitialCondition::Mode { k, amplitude } => SpectralField::single_dof(grid, k, amplitude),
            InitialCondition::Random { norm, k0, seed } => Ok(smooth_field(grid, norm, k0, seed)),
        }
    }
}

/// Random divergence-free field with a Gaussian spectrum and `||u||_H = norm`.
pub fn smooth_field(grid: &Arc<TorusGrid>, norm: f64, k0: f64, seed: u64) -> SpectralField {
    let mut rng = StreamRng::new(seed, u64::MAX);
    let f = SpectralField::random_transverse(grid, &mut rng, |i| (-grid.k2(i) / (k0 * k0)).exp());
    let n = f.norm_h();
    if n > 0.0 {
        f.scaled(norm / n)
    } else {
        f
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeAmplitude {
    pub k: [i32; 3],
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkeletonSection {
    /// Control held constant in time; empty is the free equation.
    pub control: Vec<ModeAmplitude>,
    /// Time window for the log-energy slope.
    pub fit_window: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErgodicSection {
    pub burn_in: f64,
    pub batches: usize,
    /// Distance of the perturbed copy in the coupled-gap check; 0 skips it.
    pub gap_perturbation: f64,
    /// Constant in the exponential moment bound.
    pub moment_constant: f64,
}

impl Default for ErgodicSection {
    fn default() -> Self {
        Self {
            burn_in: 0.0,
            batches: 20,
            gap_perturbation: 0.1,
            moment_constant: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSection {
    /// Target as a sum of single-mode components.
    pub target: Vec<ModeAmplitude>,
    #[serde(default = "default_target_id")]
    pub target_id: String,
    #[serde(default)]
    pub penalties: Option<Vec<f64>>,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_target_id() -> String {
    "target".into()
}

fn default_grad_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    5000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum LdpEvent {
    Always,
    /// `v(T)` along `sqrt(2) cos(k.x) e_1(k)` at least `threshold` (absolute)
    /// or `threshold_std` stationary standard deviations of the `eps = 1`
    /// process.
    Threshold {
        k: [i32; 3],
        threshold: Option<f64>,
        threshold_std: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdpSection {
    #[serde(flatten)]
    pub event: LdpEvent,
    pub horizon: f64,
    /// Steps of the exact transition per sample path.
    #[serde(default = "one")]
    pub steps: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecomposeSection {
    /// Also run at dt/2, dt/4, ... on the same Brownian path.
    pub refinements: usize,
}

impl Default for DecomposeSection {
    fn default() -> Self {
        Self { refinements: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LipschitzSection {
    pub radii: Vec<f64>,
    pub pairs: usize,
    /// Relative size of `v1 - v2` against `R`.
    pub scales: Vec<f64>,
    /// Nodes of the piecewise-linear random paths.
    pub nodes: usize,
}

impl Default for LipschitzSection {
    fn default() -> Self {
        Self {
            radii: vec![0.5, 1.0, 2.0],
            pairs: 4,
            scales: vec![0.1],
            nodes: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailSection {
    pub radii: Vec<f64>,
    pub burn_in: f64,
    pub batches: usize,
}

impl Default for TailSection {
    fn default() -> Self {
        Self {
            radii: vec![0.0, 0.25, 0.5],
            burn_in: 5.0,
            batches: 20,
        }
    }
}

fn positive(what: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be positive, got {x}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        // A manifest embeds the config it was produced from.
        let table = match value.get("config") {
            Some(toml::Value::Table(t)) if value.contains_key("config_hash") => t.clone(),
            _ => value,
        };
        let cfg: Self = table.try_into().map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.n < 4 || self.grid.n % 2 != 0 {
            return Err(Error::Config(format!("grid.n must be even and >= 4, got {}", self.grid.n)));
        }
        positive("physics.alpha", self.physics.alpha)?;
        positive("physics.beta", self.physics.beta)?;
        positive("time.dt", self.time.dt)?;
        if !(self.time.t_end >= 0.0) {
            return Err(Error::Config("time.t_end must be non-negative".into()));
        }
        if self.time.record_stride == 0 {
            return Err(Error::Config("time.record_stride must be at least 1".into()));
        }
        for &h in &self.time.horizons {
            positive("time.horizons", h)?;
        }
        if self.physics.epsilon.is_empty() {
            return Err(Error::Config("physics.epsilon must not be empty".into()));
        }
        if self.physics.epsilon.iter().any(|&e| !(e >= 0.0) || !e.is_finite()) {
            return Err(Error::Config("physics.epsilon entries must be non-negative".into()));
        }
        if self.samples.ensemble == 0 || self.samples.chunk == 0 {
            return Err(Error::Config("samples.ensemble and samples.chunk must be positive".into()));
        }
        match self.kind {
            ExperimentKind::LdpSweep => {
                let eps = &self.physics.epsilon;
                if eps.iter().any(|&e| e <= 0.0) || eps.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(Error::Config(
                        "ldp-sweep needs a strictly decreasing list of positive epsilons".into(),
                    ));
                }
                let ldp = self.ldp.as_ref().ok_or_else(|| Error::Config("missing [ldp] section".into()))?;
                positive("ldp.horizon", ldp.horizon)?;
                if ldp.steps == 0 {
                    return Err(Error::Config("ldp.steps must be at least 1".into()));
                }
                if let LdpEvent::Threshold {
                    threshold,
                    threshold_std,
                    ..
                } = &ldp.event
                {
                    if threshold.is_some() == threshold_std.is_some() {
                        return Err(Error::Config(
                            "give exactly one of ldp.threshold and ldp.threshold_std".into(),
                        ));
                    }
                }
                if self.samples.per_epsilon == 0 {
                    return Err(Error::Config("samples.per_epsilon must be positive".into()));
                }
            }
            ExperimentKind::Action => {
                let a = self
                    .action
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing [action] section".into()))?;
                if a.target.is_empty() {
                    return Err(Error::Config("action.target must not be empty".into()));
                }
                if self.time.horizons.is_empty() {
                    return Err(Error::Config("action needs time.horizons".into()));
                }
            }
            ExperimentKind::Tail => {
                let t = self.tail.clone().unwrap_or_default();
                if t.radii.iter().any(|&r| !(r >= 0.0)) {
                    return Err(Error::Config("tail.radii must be non-negative".into()));
                }
                if !(t.burn_in >= 0.0) || t.burn_in >= self.time.t_end {
                    return Err(Error::Config("tail.burn_in must lie in [0, t_end)".into()));
                }
            }
            ExperimentKind::Lipschitz => {
                let l = self.lipschitz.clone().unwrap_or_default();
                if l.pairs == 0 || l.nodes < 2 || l.radii.is_empty() || l.scales.is_empty() {
                    return Err(Error::Config("lipschitz needs pairs, >= 2 nodes, radii and scales".into()));
                }
                for &r in l.radii.iter().chain(&l.scales) {
                    positive("lipschitz radii/scales", r)?;
                }
            }
            ExperimentKind::Ergodic => {
                let e = self.ergodic.clone().unwrap_or_default();
                if !(e.burn_in >= 0.0) || e.burn_in >= self.time.t_end {
                    return Err(Error::Config("ergodic.burn_in must lie in [0, t_end)".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Arc<TorusGrid>> {
        make_grid(self.grid.n)
    }

    pub fn noise(&self, grid: &Arc<TorusGrid>) -> Result<NoiseOperator> {
        let g = NoiseOperator::new(grid, self.physics.beta)?;
        match &self.physics.noise_modes {
            Some(modes) => g.restricted_to(modes),
            None => Ok(g),
        }
    }

    pub fn solver(&self, epsilon: f64) -> SolverConfig {
        SolverConfig {
            dt: self.time.dt,
            t_end: self.time.t_end,
            epsilon,
            alpha: self.physics.alpha,
            record_stride: self.time.record_stride,
            seed: self.seed,
            nonlinear: self.physics.nonlinear,
            sobolev_orders: self.physics.sobolev_orders.clone(),
            snapshot_every: 0,
        }
    }

    pub fn initial_state(&self, grid: &Arc<TorusGrid>) -> Result<SpectralField> {
        self.initial.build(grid)
    }
}

/// Sum of single-mode components.
pub fn field_from_modes(grid: &Arc<TorusGrid>, modes: &[ModeAmplitude]) -> Result<SpectralField> {
    let mut f = SpectralField::zeros(grid);
    for m in modes {
        f.axpy(1.0, &SpectralField::single_dof(grid, m.k, m.amplitude)?);
    }
    Ok(f)
}
