//! Step-by-step protocols and the runner that executes them.
//!
//! A protocol is a list of stages. Each stage is a list of steps: photon
//! injection, element application, heralding, measurement and classically
//! conditioned corrections. The same protocol value is executed by the
//! sparse runner here and by the dense oracle in `analysis`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coeffs::ScatteringCoefficients;
use crate::elements::{loss_sink_name, Element, HwpAngle, ZTarget};
use crate::error::{Error, Result};
use crate::registry::{Registry, RegistryBuilder, SinkId, SinkKind};
use crate::state::{HyperState, PhotonSlot, PhotonSpec, Sign, SpinSpec};

/// Default number of restarts allowed after a source-photon failure.
pub const DEFAULT_RETRY_CAP: usize = 16;

/// Which spatial mode a path measurement found the photon in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Path {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Sign(Sign),
    Path(Path),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Sign(s) => write!(f, "{s}"),
            Outcome::Path(Path::First) => f.write_str("first"),
            Outcome::Path(Path::Second) => f.write_str("second"),
        }
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "+" | "plus" => Ok(Outcome::Sign(Sign::Plus)),
            "-" | "\u{2212}" | "minus" => Ok(Outcome::Sign(Sign::Minus)),
            "first" => Ok(Outcome::Path(Path::First)),
            "second" => Ok(Outcome::Path(Path::Second)),
            _ => Err(Error::Protocol(format!("unknown outcome `{s}`"))),
        }
    }
}

/// Correction chosen by the parity rule after the final spin measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParityCorrection {
    Identity,
    PauliZ,
}

/// `σ_z` is needed after `+` when `n` is odd and after `−` when `n` is even.
pub fn feed_forward_parity(outcome: Sign, n: usize) -> ParityCorrection {
    let odd = n % 2 == 1;
    match (outcome, odd) {
        (Sign::Plus, true) | (Sign::Minus, false) => ParityCorrection::PauliZ,
        _ => ParityCorrection::Identity,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    /// Generic stage; a heralding failure ends the run.
    Main,
    /// Gate-photon stage; a failure ends the run.
    Gate,
    /// Source-photon stage; a failure may be retried.
    Source,
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageKind::Main => "main",
            StageKind::Gate => "gate",
            StageKind::Source => "source",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Inject {
        photon: String,
        spec: PhotonSpec,
    },
    Apply(Element),
    /// Post-select on silence of `silent`. Cavity losses are drained too.
    Herald {
        silent: Vec<String>,
    },
    Freeze {
        photon: usize,
    },
    MeasurePhoton {
        mode: String,
        plus: String,
        minus: String,
        label: String,
        fixed: Option<Sign>,
    },
    MeasurePath {
        first: String,
        second: String,
        label: String,
        fixed: Option<Path>,
    },
    MeasureSpin {
        qd: usize,
        label: String,
        fixed: Option<Sign>,
    },
    Conditional {
        label: String,
        outcome: Outcome,
        element: Element,
    },
    Parity {
        label: String,
        n: usize,
        target: ZTarget,
    },
    Snapshot {
        label: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub name: String,
    pub kind: StageKind,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone)]
pub struct Protocol {
    pub registry: Arc<Registry>,
    pub photon_names: Vec<String>,
    pub initial: Vec<PhotonSpec>,
    pub spins: Vec<SpinSpec>,
    pub stages: Vec<Stage>,
    pub coefficients: Vec<ScatteringCoefficients>,
}

impl Protocol {
    /// Index of a photon by the name it was injected under.
    pub fn photon(&self, name: &str) -> Option<usize> {
        self.photon_names.iter().position(|n| n == name)
    }

    /// Number of steps over all stages.
    pub fn step_count(&self) -> usize {
        self.stages.iter().map(|s| s.steps.len()).sum()
    }

    /// Sinks whose absorption fails a run.
    pub(crate) fn failure_sinks(&self) -> BTreeSet<SinkId> {
        self.registry
            .sinks()
            .filter(|(_, _, k)| k.is_failure())
            .map(|(id, _, _)| id)
            .collect()
    }

    /// Ids for a herald step: the listed sinks plus every loss sink.
    pub(crate) fn herald_sinks(&self, silent: &[String]) -> Result<BTreeSet<SinkId>> {
        let mut ids: BTreeSet<SinkId> = self.registry.sinks_of_kind(SinkKind::CavityLoss).into_iter().collect();
        for s in silent {
            ids.insert(self.registry.sink(s)?);
        }
        Ok(ids)
    }
}

/// Accumulates modes, sinks and steps, then freezes them into a
/// [`Protocol`].
#[derive(Debug, Clone, Default)]
pub struct CircuitBuilder {
    registry: RegistryBuilder,
    coefficients: Vec<ScatteringCoefficients>,
    photon_names: Vec<String>,
    initial: Vec<PhotonSpec>,
    spins: Vec<Option<SpinSpec>>,
    stages: Vec<Stage>,
}

impl CircuitBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a QD and its coefficients; returns its index.
    pub fn qd(&mut self, name: &str, coeffs: ScatteringCoefficients) -> Result<usize> {
        if self.registry.qd_index(name).is_some() {
            return Err(Error::InvalidConfig(format!("QD `{name}` declared twice")));
        }
        coeffs.check()?;
        let i = self.registry.qd(name);
        self.registry.sink(&loss_sink_name(name), SinkKind::CavityLoss)?;
        self.coefficients.push(coeffs);
        self.spins.push(None);
        Ok(i)
    }

    pub fn qd_index(&self, name: &str) -> Result<usize> {
        self.registry
            .qd_index(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown QD `{name}`")))
    }

    pub fn coefficients(&self, qd: usize) -> Result<ScatteringCoefficients> {
        self.coefficients.get(qd).copied().ok_or(Error::BadQdIndex(qd))
    }

    pub fn mode(&mut self, name: &str) -> &mut Self {
        self.registry.mode(name);
        self
    }

    pub fn has_mode(&self, name: &str) -> bool {
        self.registry.has_mode(name)
    }

    pub fn has_sink(&self, name: &str) -> bool {
        self.registry.sink_kind(name).is_some()
    }

    pub fn sink(&mut self, name: &str, kind: SinkKind) -> Result<&mut Self> {
        self.registry.sink(name, kind)?;
        Ok(self)
    }

    pub fn photon(&self, name: &str) -> Result<usize> {
        self.photon_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown photon `{name}`")))
    }

    fn register_photon(&mut self, name: &str, spec: &PhotonSpec) -> Result<usize> {
        if self.photon_names.iter().any(|n| n == name) {
            return Err(Error::InvalidConfig(format!("photon `{name}` declared twice")));
        }
        for (m, _) in &spec.modes {
            self.registry.mode(m);
        }
        self.photon_names.push(name.to_string());
        Ok(self.photon_names.len() - 1)
    }

    /// A photon present from the start.
    pub fn input_photon(&mut self, name: &str, spec: PhotonSpec) -> Result<usize> {
        if !self.stages.is_empty() {
            return Err(Error::InvalidConfig("input photons must precede all stages".into()));
        }
        let i = self.register_photon(name, &spec)?;
        self.initial.push(spec);
        Ok(i)
    }

    pub fn input_spin(&mut self, qd: usize, spec: SpinSpec) -> Result<()> {
        let slot = self.spins.get_mut(qd).ok_or(Error::BadQdIndex(qd))?;
        *slot = Some(spec);
        Ok(())
    }

    pub fn stage(&mut self, name: &str, kind: StageKind) -> &mut Self {
        self.stages.push(Stage {
            name: name.to_string(),
            kind,
            steps: Vec::new(),
        });
        self
    }

    fn push(&mut self, step: Step) {
        if self.stages.is_empty() {
            self.stage("main", StageKind::Main);
        }
        self.stages.last_mut().expect("stage exists").steps.push(step);
    }

    /// Injects a photon mid-protocol; returns its index.
    pub fn inject(&mut self, name: &str, spec: PhotonSpec) -> Result<usize> {
        let i = self.register_photon(name, &spec)?;
        self.push(Step::Inject {
            photon: name.to_string(),
            spec,
        });
        Ok(i)
    }

    pub fn element(&mut self, e: Element) -> Result<()> {
        e.check_outputs()?;
        for m in e.inputs().into_iter().chain(e.outputs()) {
            self.registry.mode(m);
        }
        for (s, k) in e.sinks() {
            self.registry.sink(s, k)?;
        }
        if let Element::QdScatter { qd, .. } | Element::SpinFlip { qd } | Element::PauliZ(ZTarget::Spin { qd }) = &e {
            if *qd >= self.coefficients.len() {
                return Err(Error::BadQdIndex(*qd));
            }
        }
        self.push(Step::Apply(e));
        Ok(())
    }

    pub fn pbs(&mut self, in1: &str, in2: &str, transmit: &str, reflect: &str) -> Result<()> {
        self.element(Element::Pbs {
            in1: in1.into(),
            in2: in2.into(),
            transmit: transmit.into(),
            reflect: reflect.into(),
        })
    }

    pub fn bs(&mut self, m1: &str, m2: &str, o1: &str, o2: &str, rotated: bool) -> Result<()> {
        self.element(Element::Bs {
            m1: m1.into(),
            m2: m2.into(),
            o1: o1.into(),
            o2: o2.into(),
            rotated,
        })
    }

    pub fn hwp(&mut self, mode: &str, angle: HwpAngle) -> Result<()> {
        self.element(Element::Hwp {
            mode: mode.into(),
            angle,
        })
    }

    pub fn vbs(&mut self, input: &str, transmit: &str, sink: &str, transmission: f64) -> Result<()> {
        self.element(Element::Vbs {
            input: input.into(),
            transmit: transmit.into(),
            sink: sink.into(),
            transmission,
        })
    }

    pub fn qdscatter(&mut self, qd: usize, top: &str, bottom: &str) -> Result<()> {
        let coeffs = self.coefficients(qd)?;
        self.element(Element::QdScatter {
            qd,
            top: top.into(),
            bottom: bottom.into(),
            coeffs,
        })
    }

    pub fn mirror(&mut self, input: &str, output: &str) -> Result<()> {
        self.element(Element::Mirror {
            input: input.into(),
            output: output.into(),
        })
    }

    pub fn detector(&mut self, mode: &str, sink: &str) -> Result<()> {
        self.element(Element::Detector {
            mode: mode.into(),
            sink: sink.into(),
        })
    }

    pub fn spinflip(&mut self, qd: usize) -> Result<()> {
        self.element(Element::SpinFlip { qd })
    }

    /// The BS / HWP / QD / HWP / BS interferometer around one QD.
    ///
    /// An `R` photon entering `input` returns `(r + t0)|R⟩` to `ret` and
    /// sends `±(t − t0)|L⟩` to `out`, the sign following the spin. An `L`
    /// photon comes back as `−|L⟩` in `ret` whatever the spin, or in `out`
    /// when the return splitter is rotated.
    pub fn phase_block(
        &mut self,
        qd: usize,
        input: &str,
        ret: &str,
        out: &str,
        prefix: &str,
        rotated: bool,
    ) -> Result<()> {
        let x = format!("{prefix}.x");
        let y = format!("{prefix}.y");
        let vac = format!("{prefix}.vac");
        self.bs(input, &vac, &x, &y, false)?;
        self.hwp(&x, HwpAngle::Hadamard)?;
        self.hwp(&y, HwpAngle::Hadamard)?;
        self.qdscatter(qd, &y, &x)?;
        self.hwp(&x, HwpAngle::Hadamard)?;
        self.hwp(&y, HwpAngle::Hadamard)?;
        self.bs(&x, &y, ret, out, rotated)
    }

    pub fn herald(&mut self, silent: &[&str]) -> Result<()> {
        for s in silent {
            if !self.has_sink(s) {
                return Err(Error::UnknownSink(s.to_string()));
            }
        }
        self.push(Step::Herald {
            silent: silent.iter().map(|s| s.to_string()).collect(),
        });
        Ok(())
    }

    pub fn freeze(&mut self, photon: usize) -> Result<()> {
        if photon >= self.photon_names.len() {
            return Err(Error::BadPhotonIndex(photon));
        }
        self.push(Step::Freeze { photon });
        Ok(())
    }

    pub fn snapshot(&mut self, label: &str) {
        self.push(Step::Snapshot {
            label: label.to_string(),
        });
    }

    pub fn measure_photon(
        &mut self,
        mode: &str,
        plus: &str,
        minus: &str,
        label: &str,
        fixed: Option<Sign>,
    ) -> Result<()> {
        self.registry.mode(mode);
        self.registry.sink(plus, SinkKind::Measurement)?;
        self.registry.sink(minus, SinkKind::Measurement)?;
        self.push(Step::MeasurePhoton {
            mode: mode.into(),
            plus: plus.into(),
            minus: minus.into(),
            label: label.into(),
            fixed,
        });
        Ok(())
    }

    pub fn measure_path(&mut self, first: &str, second: &str, label: &str, fixed: Option<Path>) -> Result<()> {
        if first == second {
            return Err(Error::DuplicateModeWrite(first.to_string()));
        }
        self.registry.mode(first).mode(second);
        self.push(Step::MeasurePath {
            first: first.into(),
            second: second.into(),
            label: label.into(),
            fixed,
        });
        Ok(())
    }

    pub fn measure_spin(&mut self, qd: usize, label: &str, fixed: Option<Sign>) -> Result<()> {
        if qd >= self.coefficients.len() {
            return Err(Error::BadQdIndex(qd));
        }
        self.push(Step::MeasureSpin {
            qd,
            label: label.into(),
            fixed,
        });
        Ok(())
    }

    pub fn conditional(&mut self, label: &str, outcome: Outcome, element: Element) -> Result<()> {
        element.check_outputs()?;
        for m in element.inputs().into_iter().chain(element.outputs()) {
            self.registry.mode(m);
        }
        for (s, k) in element.sinks() {
            self.registry.sink(s, k)?;
        }
        self.push(Step::Conditional {
            label: label.into(),
            outcome,
            element,
        });
        Ok(())
    }

    pub fn parity(&mut self, label: &str, n: usize, target: ZTarget) -> Result<()> {
        if let ZTarget::Spatial { second, .. } = &target {
            self.registry.mode(second);
        }
        self.push(Step::Parity {
            label: label.into(),
            n,
            target,
        });
        Ok(())
    }

    pub fn build(self) -> Result<Protocol> {
        let spins = self
            .spins
            .iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::InvalidConfig(format!("QD {i} has no initial spin"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Protocol {
            registry: self.registry.build(),
            photon_names: self.photon_names,
            initial: self.initial,
            spins,
            stages: self.stages,
            coefficients: self.coefficients,
        })
    }
}

/// Token of a fixed outcome script.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FixedToken {
    Outcome(Outcome),
    /// Select heralding failure at the next herald step, optionally in a
    /// particular sink.
    Click(Option<String>),
}

impl FromStr for FixedToken {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "click" {
            return Ok(FixedToken::Click(None));
        }
        if let Some(sink) = s.strip_prefix("click:") {
            return Ok(FixedToken::Click(Some(sink.to_string())));
        }
        s.parse().map(FixedToken::Outcome)
    }
}

/// How measurement outcomes and heralding results are chosen.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum OutcomePolicy {
    /// Follow every measurement outcome; failures go to the ledger.
    #[default]
    Enumerate,
    /// Consume the listed tokens in order.
    Fixed(Vec<FixedToken>),
    /// Draw outcomes from a seeded generator.
    Sampled { seed: u64 },
}

impl FromStr for OutcomePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "enumerate" {
            return Ok(OutcomePolicy::Enumerate);
        }
        if let Some(rest) = s.strip_prefix("fixed:") {
            let tokens = rest
                .split(',')
                .filter(|t| !t.is_empty())
                .map(str::parse)
                .collect::<Result<Vec<_>>>()?;
            return Ok(OutcomePolicy::Fixed(tokens));
        }
        if let Some(seed) = s.strip_prefix("sample:") {
            let seed = seed
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad seed `{seed}`")))?;
            return Ok(OutcomePolicy::Sampled { seed });
        }
        Err(Error::InvalidConfig(format!("unknown outcome policy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub policy: OutcomePolicy,
    pub retry_cap: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            policy: OutcomePolicy::Enumerate,
            retry_cap: DEFAULT_RETRY_CAP,
        }
    }
}

/// A classically controlled operation that was applied (or skipped).
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub label: String,
    pub outcome: Outcome,
    pub applied: Option<Element>,
}

/// One measurement history and its unnormalized final state.
#[derive(Debug, Clone)]
pub struct Branch {
    pub outcomes: Vec<(String, Outcome)>,
    pub feed_forward: Vec<FeedForward>,
    pub snapshots: BTreeMap<String, HyperState>,
    pub state: HyperState,
}

impl Branch {
    pub fn outcome(&self, label: &str) -> Option<Outcome> {
        self.outcomes.iter().find(|(l, _)| l == label).map(|(_, o)| *o)
    }

    pub fn probability(&self) -> f64 {
        self.state.norm_sqr()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageProbability {
    pub stage: String,
    pub probability: f64,
}

/// A heralding failure that ended a trajectory.
#[derive(Debug, Clone)]
pub struct Failure {
    pub stage: String,
    pub sink: String,
    pub state: HyperState,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub branches: Vec<Branch>,
    /// Absolute probability absorbed per failure sink (loss sinks
    /// excluded).
    pub sinks: BTreeMap<String, f64>,
    pub unaccounted_loss: f64,
    pub trace: Vec<StageProbability>,
    pub failure: Option<Failure>,
    pub retries: usize,
}

impl RunRecord {
    pub fn success_probability(&self) -> f64 {
        self.branches.iter().map(Branch::probability).sum()
    }

    fn absorb(&mut self, registry: &Registry, drained: BTreeMap<SinkId, f64>) {
        for (id, p) in drained {
            if registry.sink_kind(id) == SinkKind::CavityLoss {
                self.unaccounted_loss += p;
            } else {
                *self.sinks.entry(registry.sink_name(id).to_string()).or_default() += p;
            }
        }
    }
}

enum Chooser {
    Enumerate,
    Fixed { tokens: Vec<FixedToken>, next: usize },
    Sampled(ChaCha8Rng),
}

impl Chooser {
    fn new(policy: &OutcomePolicy) -> Self {
        match policy {
            OutcomePolicy::Enumerate => Chooser::Enumerate,
            OutcomePolicy::Fixed(t) => Chooser::Fixed {
                tokens: t.clone(),
                next: 0,
            },
            OutcomePolicy::Sampled { seed } => Chooser::Sampled(ChaCha8Rng::seed_from_u64(*seed)),
        }
    }

    /// Picks one of `options` (label, weight). `None` means keep all.
    fn pick_outcome(&mut self, options: &[(Outcome, f64)]) -> Result<Option<usize>> {
        match self {
            Chooser::Enumerate => Ok(None),
            Chooser::Fixed { tokens, next } => {
                let tok = tokens
                    .get(*next)
                    .ok_or_else(|| Error::InvalidConfig("fixed outcome script exhausted".into()))?;
                *next += 1;
                let FixedToken::Outcome(o) = tok else {
                    return Err(Error::InvalidConfig("`click` given where a measurement outcome is due".into()));
                };
                options
                    .iter()
                    .position(|(x, _)| x == o)
                    .map(Some)
                    .ok_or_else(|| Error::InvalidConfig(format!("outcome `{o}` does not fit this measurement")))
            }
            Chooser::Sampled(rng) => Ok(Some(sample(rng, options.iter().map(|(_, w)| *w))?)),
        }
    }
}

fn sample(rng: &mut ChaCha8Rng, weights: impl Iterator<Item = f64> + Clone) -> Result<usize> {
    let total: f64 = weights.clone().sum();
    if total <= 0.0 {
        return Err(Error::ZeroProbability);
    }
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
            if u < w {
                return Ok(i);
            }
            u -= w;
        }
    }
    Ok(last)
}


impl Chooser {
    /// Consumes a pending `click` token, if that is what comes next.
    fn take_click(&mut self) -> Option<Option<String>> {
        if let Chooser::Fixed { tokens, next } = self {
            if let Some(FixedToken::Click(sink)) = tokens.get(*next) {
                *next += 1;
                return Some(sink.clone());
            }
        }
        None
    }
}

enum Flow {
    Continue,
    Retry(Vec<Branch>),
    Stop,
}

struct Runner<'a> {
    protocol: &'a Protocol,
    chooser: Chooser,
    record: RunRecord,
    retry_cap: usize,
}

/// Executes `protocol` under the given options.
pub fn run(protocol: &Protocol, options: &RunOptions) -> Result<RunRecord> {
    let state = HyperState::make_state(protocol.registry.clone(), &protocol.initial, &protocol.spins)?;
    let mut runner = Runner {
        protocol,
        chooser: Chooser::new(&options.policy),
        record: RunRecord {
            branches: Vec::new(),
            sinks: BTreeMap::new(),
            unaccounted_loss: 0.0,
            trace: Vec::new(),
            failure: None,
            retries: 0,
        },
        retry_cap: options.retry_cap,
    };
    let mut branches = vec![Branch {
        outcomes: Vec::new(),
        feed_forward: Vec::new(),
        snapshots: BTreeMap::new(),
        state,
    }];
    for stage in &protocol.stages {
        match runner.run_stage(stage, branches)? {
            Some(b) => branches = b,
            None => return Ok(runner.record),
        }
    }
    // Anything still sitting in a failure sink was never heralded on;
    // it cannot be part of a successful outcome.
    let failure = protocol.failure_sinks();
    for b in &mut branches {
        let drained = b.state.drain(&failure);
        runner.record.absorb(&protocol.registry, drained);
    }
    runner.record.branches = branches;
    Ok(runner.record)
}

impl Runner<'_> {
    /// Runs one stage; `None` means the trajectory failed for good.
    fn run_stage(&mut self, stage: &Stage, start: Vec<Branch>) -> Result<Option<Vec<Branch>>> {
        let mut branches = start;
        'attempt: loop {
            for step in &stage.steps {
                match self.step(stage, step, &mut branches)? {
                    Flow::Continue => {}
                    Flow::Stop => return Ok(None),
                    Flow::Retry(restart) => {
                        branches = restart;
                        continue 'attempt;
                    }
                }
            }
            return Ok(Some(branches));
        }
    }

    fn step(&mut self, stage: &Stage, step: &Step, branches: &mut Vec<Branch>) -> Result<Flow> {
        match step {
            Step::Inject { spec, .. } => {
                for b in branches.iter_mut() {
                    b.state.inject(spec)?;
                }
            }
            Step::Apply(e) => {
                for b in branches.iter_mut() {
                    e.apply(&mut b.state)?;
                }
            }
            Step::Freeze { photon } => {
                for b in branches.iter_mut() {
                    b.state.freeze(*photon)?;
                }
            }
            Step::Snapshot { label } => {
                for b in branches.iter_mut() {
                    b.snapshots.insert(label.clone(), b.state.clone());
                }
            }
            Step::Herald { silent } => return self.herald(stage, silent, branches),
            Step::MeasureSpin { qd, label, fixed } => {
                let options = sign_options(*fixed);
                let qd = *qd;
                self.measure(branches, label, &options, |s, o| {
                    let Outcome::Sign(sign) = o else { unreachable!() };
                    s.project_spin(qd, sign)?;
                    Ok(0.0)
                })?;
            }
            Step::MeasurePhoton {
                mode,
                plus,
                minus,
                label,
                fixed,
            } => {
                let reg = &self.protocol.registry;
                let m = reg.mode(mode)?;
                let (kp, km) = (reg.sink(plus)?, reg.sink(minus)?);
                let options = sign_options(*fixed);
                self.measure(branches, label, &options, |s, o| {
                    let Outcome::Sign(sign) = o else { unreachable!() };
                    s.project_photon(m, sign, if sign == Sign::Plus { kp } else { km })
                })?;
            }
            Step::MeasurePath {
                first,
                second,
                label,
                fixed,
            } => {
                let reg = &self.protocol.registry;
                let (a, b) = (reg.mode(first)?, reg.mode(second)?);
                let options: Vec<Outcome> = match fixed {
                    Some(p) => vec![Outcome::Path(*p)],
                    None => vec![Outcome::Path(Path::First), Outcome::Path(Path::Second)],
                };
                self.measure(branches, label, &options, |s, o| {
                    let keep = if o == Outcome::Path(Path::First) { a } else { b };
                    s.project_path(a, b, keep)
                })?;
            }
            Step::Conditional {
                label,
                outcome,
                element,
            } => {
                for b in branches.iter_mut() {
                    let got = b
                        .outcome(label)
                        .ok_or_else(|| Error::Protocol(format!("no outcome recorded for `{label}`")))?;
                    let applied = if got == *outcome {
                        element.apply(&mut b.state)?;
                        Some(element.clone())
                    } else {
                        None
                    };
                    b.feed_forward.push(FeedForward {
                        label: label.clone(),
                        outcome: got,
                        applied,
                    });
                }
            }
            Step::Parity { label, n, target } => {
                for b in branches.iter_mut() {
                    let got = b
                        .outcome(label)
                        .ok_or_else(|| Error::Protocol(format!("no outcome recorded for `{label}`")))?;
                    let Outcome::Sign(sign) = got else {
                        return Err(Error::Protocol(format!("`{label}` is not a ± outcome")));
                    };
                    let applied = match feed_forward_parity(sign, *n) {
                        ParityCorrection::PauliZ => {
                            let e = Element::PauliZ(target.clone());
                            e.apply(&mut b.state)?;
                            Some(e)
                        }
                        ParityCorrection::Identity => None,
                    };
                    b.feed_forward.push(FeedForward {
                        label: label.clone(),
                        outcome: got,
                        applied,
                    });
                }
            }
        }
        Ok(Flow::Continue)
    }

    fn measure<F>(&mut self, branches: &mut Vec<Branch>, label: &str, options: &[Outcome], project: F) -> Result<()>
    where
        F: Fn(&mut HyperState, Outcome) -> Result<f64>,
    {
        let mut next = Vec::new();
        for b in branches.drain(..) {
            let mut candidates = Vec::with_capacity(options.len());
            let mut missed = 0.0;
            for &o in options {
                let mut s = b.state.clone();
                missed = project(&mut s, o)?;
                candidates.push((o, s));
            }
            self.record.unaccounted_loss += missed;
            let chosen = if candidates.len() == 1 {
                None
            } else {
                let weights: Vec<(Outcome, f64)> = candidates.iter().map(|(o, s)| (*o, s.norm_sqr())).collect();
                self.chooser.pick_outcome(&weights)?
            };
            let keep: Vec<(Outcome, HyperState)> = match chosen {
                None => candidates.into_iter().filter(|(_, s)| !s.is_empty()).collect(),
                Some(i) => {
                    let c = candidates.swap_remove(i);
                    if c.1.is_empty() {
                        return Err(Error::ZeroProbability);
                    }
                    vec![c]
                }
            };
            for (o, s) in keep {
                let mut nb = b.clone();
                nb.outcomes.push((label.to_string(), o));
                nb.state = s;
                next.push(nb);
            }
        }
        *branches = next;
        Ok(())
    }

    fn herald(&mut self, stage: &Stage, silent: &[String], branches: &mut Vec<Branch>) -> Result<Flow> {
        let ids = self.protocol.herald_sinks(silent)?;
        let registry = self.protocol.registry.clone();
        if !matches!(self.chooser, Chooser::Enumerate) && branches.len() == 1 {
            if let Some((photon, slot)) = self.choose_failure(&ids, &branches[0])? {
                return self.fail(stage, photon, slot, branches.remove(0));
            }
        }
        for b in branches.iter_mut() {
            let drained = b.state.drain(&ids);
            self.record.absorb(&registry, drained);
        }
        branches.retain(|b| !b.state.is_empty());
        self.record.trace.push(StageProbability {
            stage: stage.name.clone(),
            probability: branches.iter().map(Branch::probability).sum(),
        });
        Ok(Flow::Continue)
    }

    /// Decides whether a trajectory run takes a failure at this herald.
    fn choose_failure(&mut self, ids: &BTreeSet<SinkId>, b: &Branch) -> Result<Option<(usize, PhotonSlot)>> {
        let groups = b.state.terminal_groups(ids);
        let total = b.state.norm_sqr();
        let failed: f64 = groups.values().sum();
        let registry = &self.protocol.registry;
        match &mut self.chooser {
            Chooser::Enumerate => Ok(None),
            Chooser::Fixed { .. } => {
                let Some(sink) = self.chooser.take_click() else {
                    return Ok(None);
                };
                let best = groups
                    .iter()
                    .filter(|((_, slot), _)| {
                        sink.as_deref()
                            .is_none_or(|name| slot.sink().is_some_and(|k| registry.sink_name(k) == name))
                    })
                    .filter(|(_, p)| **p > 0.0)
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| *k);
                best.map(Some).ok_or(Error::ZeroProbability)
            }
            Chooser::Sampled(rng) => {
                let success = (total - failed).max(0.0);
                let weights: Vec<f64> = std::iter::once(success).chain(groups.values().copied()).collect();
                let i = sample(rng, weights.iter().copied())?;
                Ok(if i == 0 {
                    None
                } else {
                    groups.keys().nth(i - 1).copied()
                })
            }
        }
    }

    fn fail(&mut self, stage: &Stage, photon: usize, slot: PhotonSlot, mut b: Branch) -> Result<Flow> {
        b.state.collapse_onto(photon, slot)?;
        let sink = slot
            .sink()
            .map(|k| self.protocol.registry.sink_name(k).to_string())
            .unwrap_or_default();
        let last = photon + 1 == b.state.photon_count();
        if stage.kind == StageKind::Source && last && self.record.retries < self.retry_cap {
            b.state.discard_photon(photon)?;
            self.record.retries += 1;
            return Ok(Flow::Retry(vec![b]));
        }
        self.record.failure = Some(Failure {
            stage: stage.name.clone(),
            sink,
            state: b.state,
        });
        Ok(Flow::Stop)
    }
}

fn sign_options(fixed: Option<Sign>) -> Vec<Outcome> {
    match fixed {
        Some(s) => vec![Outcome::Sign(s)],
        None => vec![Outcome::Sign(Sign::Plus), Outcome::Sign(Sign::Minus)],
    }
}
