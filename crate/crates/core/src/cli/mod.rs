//! Command-line front end: `coeffs`, `run`, `sweep`, `verify`, `netlist`.
//!
//! [`cli_main`] takes the argument list and output streams explicitly so
//! that it can be driven from tests; the binary is a one-line wrapper.

pub mod netlist;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    efficiency_report, max_branch_deviation, oracle_run, preset, random_config, run_sweep, Quantity, SweepAxis,
    SweepSpec, PRESETS,
};
use crate::coeffs::{scattering_coefficients, vbs_transmission, CavityParams};
use crate::devices::protocol::run as run_protocol;
use crate::devices::{run_device, Cavity, DeviceConfig, DeviceInputs, DeviceKind, DeviceResult, OutcomePolicy, Qubit, RunOptions};
use crate::error::{Error, Result};
use crate::state::C64;

pub use netlist::{parse_netlist, Netlist, ParseErrors};

/// Deviation above which `verify` fails.
pub const VERIFY_TOLERANCE: f64 = 1e-12;

/// Exit status for usage and configuration errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for failed checks (verification, netlist errors).
pub const EXIT_CHECK: i32 = 1;

#[derive(Parser, Debug)]
#[command(name = "hyperqd", version, about = "QD-cavity hyperparallel photonic device simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the reflection and transmission coefficients of a cavity.
    Coeffs(CavityArgs),
    /// Simulate a device or a netlist once.
    Run(RunArgs),
    /// Grid sweep over cavity parameters, written as CSV.
    Sweep(SweepArgs),
    /// Compare the sparse simulator with the dense reference on random inputs.
    Verify(VerifyArgs),
    /// Parse and check a netlist file.
    Netlist(NetlistArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct CavityArgs {
    /// Coupling strength g (units of κ).
    #[arg(long)]
    g: Option<f64>,
    /// Side leakage rate κ_s.
    #[arg(long)]
    kappa_s: Option<f64>,
    /// Dipole decay rate γ.
    #[arg(long)]
    gamma: Option<f64>,
    /// Common detuning of cavity and dipole from the photon.
    #[arg(long)]
    detuning: Option<f64>,
    /// Named parameter set: micropillar-2008, micropillar-2007 or ideal.
    #[arg(long)]
    preset: Option<String>,
}

impl CavityArgs {
    fn given(&self) -> bool {
        self.g.is_some() || self.kappa_s.is_some() || self.gamma.is_some() || self.detuning.is_some()
    }

    /// Preset (or `fallback`) with explicit flags layered on top.
    fn resolve(&self, fallback: &str) -> Result<Cavity> {
        let base = preset(self.preset.as_deref().unwrap_or(fallback))?;
        if !self.given() {
            return Ok(base);
        }
        let mut p = match base {
            Cavity::Params(p) => p,
            // An explicit ideal preset overrides any coupling flags.
            Cavity::Coefficients(_) if self.preset.is_some() => return Ok(base),
            Cavity::Coefficients(_) => match preset("micropillar-2008")? {
                Cavity::Params(p) => p,
                Cavity::Coefficients(_) => unreachable!("micropillar preset has parameters"),
            },
        };
        if let Some(g) = self.g {
            p.g = g;
        }
        if let Some(k) = self.kappa_s {
            p.kappa_s = k;
        }
        if let Some(x) = self.gamma {
            p.gamma = x;
        }
        if let Some(d) = self.detuning {
            p = CavityParams::detuned(p.g, p.kappa_s, p.gamma, d);
        }
        p.validate()?;
        Ok(Cavity::Params(p))
    }

    fn params(&self, fallback: &str) -> Result<CavityParams> {
        match self.resolve(fallback)? {
            Cavity::Params(p) => Ok(p),
            Cavity::Coefficients(_) => Err(Error::InvalidConfig("this command needs physical parameters".into())),
        }
    }
}

fn parse_amp(s: &str) -> std::result::Result<C64, String> {
    let num = |x: &str| x.trim().parse::<f64>().map_err(|_| format!("`{s}` is not `re` or `re,im`"));
    match s.split_once(',') {
        Some((re, im)) => Ok(C64::new(num(re)?, num(im)?)),
        None => Ok(C64::new(num(s)?, 0.0)),
    }
}

/// Input amplitudes; each pair defaults to an equal superposition and a
/// lone amplitude `a` is completed with the real `√(1 − |a|²)`.
#[derive(Args, Debug, Clone, Default)]
struct InputArgs {
    /// Polarization amplitude of R (re or re,im).
    #[arg(long, value_parser = parse_amp, allow_hyphen_values = true)]
    alpha: Option<C64>,
    /// Polarization amplitude of L.
    #[arg(long, value_parser = parse_amp, allow_hyphen_values = true)]
    beta: Option<C64>,
    /// Spatial amplitude of the first mode.
    #[arg(long = "gamma-amp", value_parser = parse_amp, allow_hyphen_values = true)]
    gamma_amp: Option<C64>,
    /// Spatial amplitude of the second mode.
    #[arg(long, value_parser = parse_amp, allow_hyphen_values = true)]
    delta: Option<C64>,
    /// First amplitude of every source photon.
    #[arg(long, value_parser = parse_amp, allow_hyphen_values = true)]
    zeta: Option<C64>,
    /// Second amplitude of every source photon.
    #[arg(long, value_parser = parse_amp, allow_hyphen_values = true)]
    xi: Option<C64>,
    /// Spin-up amplitude of the router control (or the first DRAM QD).
    #[arg(long, value_parser = parse_amp, allow_hyphen_values = true)]
    spin_up: Option<C64>,
    #[arg(long, value_parser = parse_amp, allow_hyphen_values = true)]
    spin_down: Option<C64>,
    /// Spin of the second DRAM QD.
    #[arg(long, value_parser = parse_amp, allow_hyphen_values = true)]
    spin2_up: Option<C64>,
    #[arg(long, value_parser = parse_amp, allow_hyphen_values = true)]
    spin2_down: Option<C64>,
}

fn pair(what: &str, a: Option<C64>, b: Option<C64>) -> Result<Qubit> {
    let complete = |x: C64| {
        let rest = 1.0 - x.norm_sqr();
        if rest < -1e-9 {
            Err(Error::NotNormalized {
                what: what.to_string(),
                norm: x.norm_sqr(),
            })
        } else {
            Ok(C64::new(rest.max(0.0).sqrt(), 0.0))
        }
    };
    let q = match (a, b) {
        (None, None) => Qubit::plus(),
        (Some(a), None) => Qubit::new(a, complete(a)?),
        (None, Some(b)) => Qubit::new(complete(b)?, b),
        (Some(a), Some(b)) => Qubit::new(a, b),
    };
    q.validate(what)?;
    Ok(q)
}

impl InputArgs {
    fn inputs(&self, kind: DeviceKind, n: usize) -> Result<DeviceInputs> {
        let pol = pair("polarization", self.alpha, self.beta)?;
        let spatial = pair("spatial amplitudes", self.gamma_amp, self.delta)?;
        let source = pair("source amplitudes", self.zeta, self.xi)?;
        let spin = pair("spin", self.spin_up, self.spin_down)?;
        let spin2 = pair("second spin", self.spin2_up, self.spin2_down)?;
        Ok(match kind {
            DeviceKind::PTransistor => DeviceInputs::PTransistor {
                polarization: pol,
                sources: vec![source; n],
            },
            DeviceKind::STransistor => DeviceInputs::STransistor {
                polarization: pol,
                spatial,
                sources: vec![source; n],
            },
            DeviceKind::HyperRouter => DeviceInputs::HyperRouter {
                polarization: pol,
                spatial,
                control: spin,
            },
            DeviceKind::HyperDram => DeviceInputs::HyperDram {
                polarization: pol,
                spatial,
                spin1: spin,
                spin2,
            },
        })
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    /// p-transistor, s-transistor, router or dram.
    #[arg(long, required_unless_present = "netlist", conflicts_with = "netlist")]
    device: Option<DeviceKind>,
    /// Number of source photons (transistors) or stored photons (DRAM).
    #[arg(long)]
    n: Option<usize>,
    /// Run a netlist file instead of a built-in device.
    #[arg(long)]
    netlist: Option<PathBuf>,
    #[command(flatten)]
    cavity: CavityArgs,
    #[command(flatten)]
    inputs: InputArgs,
    /// enumerate, sample:<seed> or fixed:<token>,... (tokens +, -, first,
    /// second, click, click:<sink>).
    #[arg(long, default_value = "enumerate")]
    outcomes: String,
    /// Override the VBS transmission.
    #[arg(long)]
    vbs: Option<f64>,
    /// Write the per-stage success trace as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    device: DeviceKind,
    #[arg(long)]
    n: Option<usize>,
    /// `name=start:stop:steps` with name g, kappa_s, gamma or detuning.
    #[arg(long = "axis", required = true)]
    axes: Vec<SweepAxis>,
    /// fidelity, success, amplitude or sinks; defaults to the first three.
    #[arg(long = "quantity")]
    quantities: Vec<Quantity>,
    /// Draw fresh random inputs at every point from this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    cavity: CavityArgs,
    #[command(flatten)]
    inputs: InputArgs,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Check every device.
    #[arg(long, conflicts_with = "device")]
    all: bool,
    #[arg(long, required_unless_present = "all")]
    device: Option<DeviceKind>,
    /// Check only this N (default: every N up to 3).
    #[arg(long)]
    n: Option<usize>,
    /// Random configurations per device and N.
    #[arg(long, default_value_t = 25)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct NetlistArgs {
    file: PathBuf,
    /// Print the expanded canonical form.
    #[arg(long)]
    print: bool,
}

/// Runs the command line; returns the process exit status.
pub fn cli_main<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Coeffs(a) => coeffs(&a, out),
        Command::Run(a) => run(&a, out),
        Command::Sweep(a) => sweep(&a, out),
        Command::Verify(a) => verify(&a, out),
        Command::Netlist(a) => check_netlist(&a, out, err),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Netlist { .. } => EXIT_CHECK,
                _ => EXIT_USAGE,
            }
        }
    }
}

fn io(e: std::io::Error) -> Error {
    Error::InvalidConfig(format!("I/O error: {e}"))
}

fn cplx(z: C64) -> String {
    format!("{:.12} {} {:.12}i", z.re, if z.im < 0.0 { '-' } else { '+' }, z.im.abs())
}

fn coeffs(a: &CavityArgs, out: &mut dyn Write) -> Result<i32> {
    let c = match a.resolve("micropillar-2008")? {
        Cavity::Params(p) => {
            writeln!(out, "g = {}  kappa_s = {}  gamma = {}  (units of kappa)", p.g, p.kappa_s, p.gamma).map_err(io)?;
            scattering_coefficients(&p)?
        }
        Cavity::Coefficients(c) => c,
    };
    let d = c.success_amplitude();
    let lines = [
        ("r ", cplx(c.r)),
        ("t ", cplx(c.t)),
        ("r0", cplx(c.r0)),
        ("t0", cplx(c.t0)),
        ("t - t0", cplx(d)),
        ("|t - t0|^2", format!("{:.12}", d.norm_sqr())),
        (
            "VBS T",
            match vbs_transmission(&c) {
                Ok(t) => format!("{t:.12}"),
                Err(e) => format!("n/a ({e})"),
            },
        ),
    ];
    for (k, v) in lines {
        writeln!(out, "{k:<10} = {v}").map_err(io)?;
    }
    Ok(0)
}

fn default_n(kind: DeviceKind) -> usize {
    kind.min_n().max(1)
}

fn device_config(kind: DeviceKind, n: Option<usize>, cavity: &CavityArgs, inputs: &InputArgs, fallback: &str) -> Result<DeviceConfig> {
    let n = n.unwrap_or_else(|| default_n(kind));
    let mut cfg = DeviceConfig::new(kind, n).with_cavity(cavity.resolve(fallback)?);
    cfg.inputs = inputs.inputs(kind, n)?;
    Ok(cfg)
}

fn write_trace(path: &PathBuf, rows: &[(String, f64)]) -> Result<()> {
    let mut csv = String::from("stage,success_probability\n");
    for (s, p) in rows {
        csv.push_str(&format!("{s},{p:.16e}\n"));
    }
    std::fs::write(path, csv).map_err(io)
}

fn report(r: &DeviceResult, out: &mut dyn Write) -> Result<()> {
    let e = efficiency_report(r);
    let mut w = |s: String| writeln!(out, "{s}").map_err(io);
    w(format!("success_probability = {:.12}", e.success))?;
    w(format!("fidelity            = {:.12}", r.fidelity))?;
    w(format!("branches            = {}", r.branches.len()))?;
    if r.retries > 0 {
        w(format!("retries             = {}", r.retries))?;
    }
    if let Some(f) = &r.failure {
        w(format!("failure             = click in {} during stage {}", f.sink, f.stage))?;
    }
    w(format!(
        "ledger: detector = {:.3e}, vbs_reflection = {:.3e}, cavity_loss = {:.3e}, total = {:.12}",
        e.detector,
        e.vbs_reflection,
        e.cavity_loss,
        e.total()
    ))?;
    for b in &r.branches {
        let labels: Vec<String> = b.outcomes.iter().map(|(l, o)| format!("{l}={o}")).collect();
        w(format!(
            "  [{}] p = {:.6e}, F = {:.12}",
            labels.join(" "),
            b.probability,
            b.fidelity
        ))?;
    }
    Ok(())
}

fn run(a: &RunArgs, out: &mut dyn Write) -> Result<i32> {
    let policy: OutcomePolicy = a.outcomes.parse()?;
    if let Some(v) = a.vbs {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidTransmission(v));
        }
    }
    if let Some(path) = &a.netlist {
        let text = std::fs::read_to_string(path).map_err(io)?;
        let net = parse_netlist(&text)?;
        let cavity = if a.cavity.given() || a.cavity.preset.is_some() {
            Some(a.cavity.resolve("ideal")?)
        } else {
            None
        };
        let protocol = net.to_protocol(cavity.as_ref(), a.vbs)?;
        let record = run_protocol(
            &protocol,
            &RunOptions {
                policy,
                ..RunOptions::default()
            },
        )?;
        writeln!(out, "netlist             = {}", path.display()).map_err(io)?;
        writeln!(out, "success_probability = {:.12}", record.success_probability()).map_err(io)?;
        writeln!(out, "fidelity            = n/a").map_err(io)?;
        writeln!(out, "branches            = {}", record.branches.len()).map_err(io)?;
        for (s, p) in &record.sinks {
            writeln!(out, "  {s:<16} {p:.6e}").map_err(io)?;
        }
        writeln!(out, "  {:<16} {:.6e}", "unaccounted", record.unaccounted_loss).map_err(io)?;
        if let Some(p) = &a.out {
            let rows: Vec<_> = record.trace.iter().map(|t| (t.stage.clone(), t.probability)).collect();
            write_trace(p, &rows)?;
        }
        return Ok(0);
    }
    let kind = a.device.expect("clap enforces --device without --netlist");
    let mut cfg = device_config(kind, a.n, &a.cavity, &a.inputs, "ideal")?;
    cfg.policy = policy;
    cfg.vbs_override = a.vbs;
    let r = run_device(&cfg)?;
    if kind == DeviceKind::HyperRouter {
        writeln!(out, "device              = {kind}").map_err(io)?;
    } else {
        writeln!(out, "device              = {kind}  N = {}", cfg.n).map_err(io)?;
    }
    report(&r, out)?;
    if let Some(p) = &a.out {
        let rows: Vec<_> = r.trace.iter().map(|t| (t.stage.clone(), t.probability)).collect();
        write_trace(p, &rows)?;
    }
    Ok(0)
}

fn sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = device_config(a.device, a.n, &CavityArgs::default(), &a.inputs, "ideal")?;
    let base = a.cavity.params("micropillar-2008")?;
    let mut spec = SweepSpec::new(cfg, base, a.axes.clone());
    if !a.quantities.is_empty() {
        spec.quantities = a.quantities.clone();
    }
    spec.seed = a.seed;
    let csv = run_sweep(&spec)?.to_csv();
    match &a.out {
        Some(p) => std::fs::write(p, csv).map_err(io)?,
        None => out.write_all(csv.as_bytes()).map_err(io)?,
    }
    Ok(0)
}

/// Largest sparse-vs-dense deviation over random configurations.
pub fn verify_device(kind: DeviceKind, n: usize, draws: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind as u64) << 8) | n as u64);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let cfg = random_config(kind, n, &mut rng);
        let sparse = run_device(&cfg)?;
        let dense = oracle_run(&cfg)?;
        worst = worst.max(max_branch_deviation(&sparse, &dense));
    }
    Ok(worst)
}

fn verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<i32> {
    let kinds: Vec<DeviceKind> = match a.device {
        Some(k) => vec![k],
        None => DeviceKind::ALL.to_vec(),
    };
    let mut worst: f64 = 0.0;
    for kind in kinds {
        let ns: Vec<usize> = match a.n {
            Some(n) => vec![n],
            None => (kind.min_n()..=3).collect(),
        };
        for n in ns {
            let d = verify_device(kind, n, a.draws, a.seed)?;
            worst = worst.max(d);
            let verdict = if d <= VERIFY_TOLERANCE { "ok" } else { "FAIL" };
            writeln!(out, "{kind:<13} N={n}  draws={}  max deviation = {d:.3e}  {verdict}", a.draws).map_err(io)?;
        }
    }
    writeln!(out, "max deviation = {worst:.3e} (tolerance {VERIFY_TOLERANCE:e})").map_err(io)?;
    Ok(if worst <= VERIFY_TOLERANCE { 0 } else { EXIT_CHECK })
}

fn check_netlist(a: &NetlistArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let text = std::fs::read_to_string(&a.file).map_err(io)?;
    match parse_netlist(&text) {
        Ok(net) => {
            if a.print {
                write!(out, "{net}").map_err(io)?;
            } else {
                let protocol = net.to_protocol(None, None)?;
                writeln!(
                    out,
                    "{}: ok ({} statements, {} photons, {} stages)",
                    a.file.display(),
                    net.statements.len(),
                    protocol.photon_names.len(),
                    protocol.stages.len()
                )
                .map_err(io)?;
            }
            Ok(0)
        }
        Err(errors) => {
            for e in &errors.0 {
                writeln!(err, "{}: {e}", a.file.display()).map_err(io)?;
            }
            Ok(EXIT_CHECK)
        }
    }
}

/// Names accepted by `--preset`.
pub fn preset_names() -> &'static [&'static str] {
    &PRESETS
}
