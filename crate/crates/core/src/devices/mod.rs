//! The four hyperparallel devices: configuration, circuits, closed-form
//! targets and end-to-end runs.
//!
//! Every device is described once as a [`Protocol`] ([`circuits`]), run
//! by the generic step interpreter in [`protocol`], and scored against the
//! expected output state from [`targets`].

pub mod circuits;
pub mod protocol;
pub mod targets;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::coeffs::{scattering_coefficients, vbs_transmission, CavityParams, ScatteringCoefficients};
use crate::error::{Error, Result};
use crate::registry::SinkKind;
use crate::state::{HeraldedOutcome, HyperState, C64, SPEC_TOLERANCE};

pub use circuits::build_protocol;
pub use protocol::{
    feed_forward_parity, Failure, FeedForward, Outcome, OutcomePolicy, ParityCorrection, Path, Protocol, RunOptions,
    RunRecord, StageProbability, DEFAULT_RETRY_CAP,
};
pub use targets::target_state;

/// Cap on `N` unless `HYPERQD_MAX_N` says otherwise.
pub const DEFAULT_MAX_N: usize = 8;

/// Largest `N` accepted by [`DeviceConfig::validate`].
pub fn max_n() -> usize {
    std::env::var("HYPERQD_MAX_N")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_MAX_N)
}

/// Two complex amplitudes `a|0⟩ + b|1⟩`; the basis depends on context
/// (R/L, a/b, c/d or ↑/↓).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Qubit {
    pub a: C64,
    pub b: C64,
}

impl Qubit {
    pub fn new(a: C64, b: C64) -> Self {
        Qubit { a, b }
    }

    pub fn real(a: f64, b: f64) -> Self {
        Qubit::new(C64::new(a, 0.0), C64::new(b, 0.0))
    }

    /// `(|0⟩ + |1⟩)/√2`.
    pub fn plus() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Qubit::real(h, h)
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        let norm = self.a.norm_sqr() + self.b.norm_sqr();
        if (norm - 1.0).abs() > SPEC_TOLERANCE || !norm.is_finite() {
            return Err(Error::NotNormalized {
                what: what.to_string(),
                norm,
            });
        }
        Ok(())
    }
}

/// How a QD-cavity is specified: by physical rates or directly by its
/// scattering coefficients (e.g. the ideal limit).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cavity {
    Params(CavityParams),
    Coefficients(ScatteringCoefficients),
}

impl Cavity {
    pub fn coefficients(&self) -> Result<ScatteringCoefficients> {
        match self {
            Cavity::Params(p) => scattering_coefficients(p),
            Cavity::Coefficients(c) => {
                c.check()?;
                Ok(*c)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DeviceKind {
    PTransistor,
    STransistor,
    HyperRouter,
    HyperDram,
}

impl DeviceKind {
    pub const ALL: [DeviceKind; 4] = [
        DeviceKind::PTransistor,
        DeviceKind::STransistor,
        DeviceKind::HyperRouter,
        DeviceKind::HyperDram,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeviceKind::PTransistor => "p-transistor",
            DeviceKind::STransistor => "s-transistor",
            DeviceKind::HyperRouter => "router",
            DeviceKind::HyperDram => "dram",
        }
    }

    /// Number of QD-cavity systems in the circuit.
    pub fn qd_count(self) -> usize {
        if self == DeviceKind::HyperDram {
            2
        } else {
            1
        }
    }

    /// Smallest meaningful `N`.
    pub fn min_n(self) -> usize {
        match self {
            DeviceKind::PTransistor | DeviceKind::STransistor => 1,
            DeviceKind::HyperRouter | DeviceKind::HyperDram => 0,
        }
    }
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DeviceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "p-transistor" | "p" => Ok(DeviceKind::PTransistor),
            "s-transistor" | "s" => Ok(DeviceKind::STransistor),
            "router" | "hyper-router" => Ok(DeviceKind::HyperRouter),
            "dram" | "hyper-dram" => Ok(DeviceKind::HyperDram),
            other => Err(Error::InvalidConfig(format!("unknown device `{other}`"))),
        }
    }
}

/// Input amplitudes per device.
#[derive(Debug, Clone, PartialEq)]
pub enum DeviceInputs {
    /// Gate photon polarization (α, β); one (ζ_i, ξ_i) rail pair per
    /// source photon.
    PTransistor { polarization: Qubit, sources: Vec<Qubit> },
    /// Gate photon (α, β) ⊗ (γ, δ); one (α_i, β_i) polarization per
    /// source photon.
    STransistor {
        polarization: Qubit,
        spatial: Qubit,
        sources: Vec<Qubit>,
    },
    /// Signal (α, β) ⊗ (δ₁, δ₂) and control spin (γ, η).
    HyperRouter {
        polarization: Qubit,
        spatial: Qubit,
        control: Qubit,
    },
    /// Photon (α, β) ⊗ (δ₁, δ₂) and the two QD spins.
    HyperDram {
        polarization: Qubit,
        spatial: Qubit,
        spin1: Qubit,
        spin2: Qubit,
    },
}

impl DeviceInputs {
    /// Equal superpositions everywhere.
    pub fn default_for(kind: DeviceKind, n: usize) -> Self {
        let p = Qubit::plus();
        match kind {
            DeviceKind::PTransistor => DeviceInputs::PTransistor {
                polarization: p,
                sources: vec![p; n],
            },
            DeviceKind::STransistor => DeviceInputs::STransistor {
                polarization: p,
                spatial: p,
                sources: vec![p; n],
            },
            DeviceKind::HyperRouter => DeviceInputs::HyperRouter {
                polarization: p,
                spatial: p,
                control: p,
            },
            DeviceKind::HyperDram => DeviceInputs::HyperDram {
                polarization: p,
                spatial: p,
                spin1: p,
                spin2: p,
            },
        }
    }

    pub fn kind(&self) -> DeviceKind {
        match self {
            DeviceInputs::PTransistor { .. } => DeviceKind::PTransistor,
            DeviceInputs::STransistor { .. } => DeviceKind::STransistor,
            DeviceInputs::HyperRouter { .. } => DeviceKind::HyperRouter,
            DeviceInputs::HyperDram { .. } => DeviceKind::HyperDram,
        }
    }

    /// Every named amplitude pair, for validation and reporting.
    pub fn qubits(&self) -> Vec<(String, Qubit)> {
        let mut out = Vec::new();
        match self {
            DeviceInputs::PTransistor { polarization, sources } => {
                out.push(("polarization".into(), *polarization));
                out.extend(sources.iter().enumerate().map(|(i, q)| (format!("source {}", i + 1), *q)));
            }
            DeviceInputs::STransistor {
                polarization,
                spatial,
                sources,
            } => {
                out.push(("polarization".into(), *polarization));
                out.push(("spatial".into(), *spatial));
                out.extend(sources.iter().enumerate().map(|(i, q)| (format!("source {}", i + 1), *q)));
            }
            DeviceInputs::HyperRouter {
                polarization,
                spatial,
                control,
            } => {
                out.push(("polarization".into(), *polarization));
                out.push(("spatial".into(), *spatial));
                out.push(("control".into(), *control));
            }
            DeviceInputs::HyperDram {
                polarization,
                spatial,
                spin1,
                spin2,
            } => {
                out.push(("polarization".into(), *polarization));
                out.push(("spatial".into(), *spatial));
                out.push(("spin1".into(), *spin1));
                out.push(("spin2".into(), *spin2));
            }
        }
        out
    }

    /// Mutable access to the source list of a transistor.
    pub fn sources_mut(&mut self) -> Option<&mut Vec<Qubit>> {
        match self {
            DeviceInputs::PTransistor { sources, .. } | DeviceInputs::STransistor { sources, .. } => Some(sources),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceConfig {
    pub inputs: DeviceInputs,
    /// Source photons (transistors) or storage rounds (DRAM). Ignored by
    /// the router.
    pub n: usize,
    /// One entry per QD; a single entry is shared by both DRAM QDs.
    pub cavities: Vec<Cavity>,
    pub policy: OutcomePolicy,
    /// Replaces the computed VBS transmission `t − t0`.
    pub vbs_override: Option<f64>,
    pub retry_cap: usize,
}

impl DeviceConfig {
    /// Default inputs, ideal cavities, all outcomes enumerated.
    pub fn new(kind: DeviceKind, n: usize) -> Self {
        DeviceConfig {
            inputs: DeviceInputs::default_for(kind, n),
            n,
            cavities: vec![Cavity::Coefficients(crate::coeffs::ideal_coefficients())],
            policy: OutcomePolicy::Enumerate,
            vbs_override: None,
            retry_cap: DEFAULT_RETRY_CAP,
        }
    }

    pub fn with_cavity(mut self, cavity: Cavity) -> Self {
        self.cavities = vec![cavity];
        self
    }

    pub fn with_params(self, params: CavityParams) -> Self {
        self.with_cavity(Cavity::Params(params))
    }

    pub fn with_policy(mut self, policy: OutcomePolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Changes `N`, padding or truncating transistor sources with `|+⟩`.
    pub fn set_n(&mut self, n: usize) {
        self.n = n;
        if let Some(s) = self.inputs.sources_mut() {
            s.resize(n, Qubit::plus());
        }
    }

    pub fn kind(&self) -> DeviceKind {
        self.inputs.kind()
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind();
        if self.n < kind.min_n() {
            return Err(Error::InvalidConfig(format!("{kind} needs N ≥ {}", kind.min_n())));
        }
        let cap = max_n();
        if self.n > cap {
            return Err(Error::InvalidConfig(format!(
                "N = {} exceeds the cap {cap} (set HYPERQD_MAX_N to raise it)",
                self.n
            )));
        }
        if let DeviceInputs::PTransistor { sources, .. } | DeviceInputs::STransistor { sources, .. } = &self.inputs {
            if sources.len() != self.n {
                return Err(Error::InvalidConfig(format!(
                    "{} source amplitudes given for N = {}",
                    sources.len(),
                    self.n
                )));
            }
        }
        for (what, q) in self.inputs.qubits() {
            q.validate(&what)?;
        }
        let want = kind.qd_count();
        if self.cavities.is_empty() || (self.cavities.len() != 1 && self.cavities.len() != want) {
            return Err(Error::InvalidConfig(format!(
                "{kind} takes 1 or {want} cavities, got {}",
                self.cavities.len()
            )));
        }
        if let Some(t) = self.vbs_override {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidTransmission(t));
            }
        }
        Ok(())
    }

    /// Coefficients of QD `i`.
    pub fn coefficients(&self, i: usize) -> Result<ScatteringCoefficients> {
        let cavity = self
            .cavities
            .get(i)
            .or_else(|| (self.cavities.len() == 1).then(|| &self.cavities[0]))
            .ok_or(Error::BadQdIndex(i))?;
        cavity.coefficients()
    }

    /// VBS transmission for a QD with `coeffs`. The resonance check runs
    /// even when the value is overridden.
    pub fn transmission(&self, coeffs: &ScatteringCoefficients) -> Result<f64> {
        let t = vbs_transmission(coeffs)?;
        Ok(self.vbs_override.unwrap_or(t))
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            policy: self.policy.clone(),
            retry_cap: self.retry_cap,
        }
    }
}

/// One successful measurement branch.
#[derive(Debug, Clone)]
pub struct BranchResult {
    pub outcomes: Vec<(String, Outcome)>,
    /// Absolute probability of this branch.
    pub probability: f64,
    /// Normalized output state.
    pub state: HyperState,
    pub target: HyperState,
    pub fidelity: f64,
    pub feed_forward: Vec<FeedForward>,
    pub snapshots: BTreeMap<String, HyperState>,
}

impl BranchResult {
    pub fn outcome(&self, label: &str) -> Option<Outcome> {
        self.outcomes.iter().find(|(l, _)| l == label).map(|(_, o)| *o)
    }
}

#[derive(Debug, Clone)]
pub struct DeviceResult {
    pub kind: DeviceKind,
    /// The most probable successful branch, with the absolute ledger of
    /// the whole run.
    pub outcome: HeraldedOutcome,
    pub target: Option<HyperState>,
    /// Worst fidelity over all successful branches (0 if none).
    pub fidelity: f64,
    pub feed_forward: Vec<FeedForward>,
    pub trace: Vec<StageProbability>,
    pub branches: Vec<BranchResult>,
    pub failure: Option<Failure>,
    pub retries: usize,
    /// Kind of every sink appearing in `outcome.sinks`.
    pub sink_kinds: BTreeMap<String, SinkKind>,
}

impl DeviceResult {
    pub fn success_probability(&self) -> f64 {
        self.outcome.success_probability
    }

    /// Probability absorbed by sinks of one kind.
    pub fn sink_share(&self, kind: SinkKind) -> f64 {
        self.outcome
            .sinks
            .iter()
            .filter(|(name, _)| self.sink_kinds.get(*name) == Some(&kind))
            .map(|(_, p)| p)
            .sum()
    }

    pub fn branch(&self, outcomes: &[(&str, Outcome)]) -> Option<&BranchResult> {
        self.branches.iter().find(|b| {
            outcomes
                .iter()
                .all(|(l, o)| b.outcomes.iter().any(|(bl, bo)| bl == l && bo == o))
        })
    }
}

/// Turns a raw run into a scored [`DeviceResult`]. Shared by the sparse
/// runner and the dense oracle.
pub fn assemble(cfg: &DeviceConfig, protocol: &Protocol, record: RunRecord) -> Result<DeviceResult> {
    let mut branches = Vec::with_capacity(record.branches.len());
    for b in &record.branches {
        let target = target_state(cfg, protocol, b)?.normalized()?;
        let probability = b.probability();
        let state = b.state.normalized()?;
        let fidelity = state.fidelity(&target)?.clamp(0.0, 1.0);
        branches.push(BranchResult {
            outcomes: b.outcomes.clone(),
            probability,
            state,
            target,
            fidelity,
            feed_forward: b.feed_forward.clone(),
            snapshots: b.snapshots.clone(),
        });
    }
    let success = record.success_probability();
    let best = branches
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.probability.total_cmp(&y.1.probability))
        .map(|(i, _)| i);
    let fidelity = if branches.is_empty() {
        0.0
    } else {
        branches.iter().map(|b| b.fidelity).fold(1.0, f64::min)
    };
    let registry = &protocol.registry;
    let sink_kinds = registry
        .sinks()
        .map(|(_, name, kind)| (name.to_string(), kind))
        .collect();
    let mut sinks = record.sinks.clone();
    for (_, name, kind) in registry.sinks() {
        if kind.is_failure() && kind != SinkKind::CavityLoss {
            sinks.entry(name.to_string()).or_insert(0.0);
        }
    }
    Ok(DeviceResult {
        kind: cfg.kind(),
        outcome: HeraldedOutcome {
            state: best.map(|i| branches[i].state.clone()),
            success_probability: success,
            sinks,
            unaccounted_loss: record.unaccounted_loss,
        },
        target: best.map(|i| branches[i].target.clone()),
        fidelity,
        feed_forward: best.map(|i| branches[i].feed_forward.clone()).unwrap_or_default(),
        trace: record.trace,
        branches,
        failure: record.failure,
        retries: record.retries,
        sink_kinds,
    })
}

/// Builds, runs and scores any device.
pub fn run_device(cfg: &DeviceConfig) -> Result<DeviceResult> {
    let protocol = build_protocol(cfg)?;
    let record = protocol::run(&protocol, &cfg.run_options())?;
    assemble(cfg, &protocol, record)
}

fn expect(cfg: &DeviceConfig, kind: DeviceKind) -> Result<()> {
    if cfg.kind() != kind {
        return Err(Error::InvalidConfig(format!("expected a {kind} config, got {}", cfg.kind())));
    }
    Ok(())
}

pub fn run_p_transistor(cfg: &DeviceConfig) -> Result<DeviceResult> {
    expect(cfg, DeviceKind::PTransistor)?;
    run_device(cfg)
}

pub fn run_s_transistor(cfg: &DeviceConfig) -> Result<DeviceResult> {
    expect(cfg, DeviceKind::STransistor)?;
    run_device(cfg)
}

pub fn run_hyper_router(cfg: &DeviceConfig) -> Result<DeviceResult> {
    expect(cfg, DeviceKind::HyperRouter)?;
    run_device(cfg)
}

pub fn run_hyper_dram(cfg: &DeviceConfig) -> Result<DeviceResult> {
    expect(cfg, DeviceKind::HyperDram)?;
    run_device(cfg)
}
