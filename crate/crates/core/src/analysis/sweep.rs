//! Grid sweeps over cavity parameters with CSV output.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{efficiency_report, random_inputs};
use crate::coeffs::{scattering_coefficients, CavityParams};
use crate::devices::{build_protocol, run_device, Cavity, DeviceConfig, OutcomePolicy};
use crate::error::{Error, Result};
use crate::registry::SinkKind;

/// A swept cavity parameter, in units of κ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    G,
    KappaS,
    Gamma,
    Detuning,
}

impl Param {
    pub fn name(self) -> &'static str {
        match self {
            Param::G => "g",
            Param::KappaS => "kappa_s",
            Param::Gamma => "gamma",
            Param::Detuning => "detuning",
        }
    }

    fn set(self, p: &mut CavityParams, v: f64) {
        match self {
            Param::G => p.g = v,
            Param::KappaS => p.kappa_s = v,
            Param::Gamma => p.gamma = v,
            Param::Detuning => p.photon_freq = p.cavity_freq + v,
        }
    }

    fn in_bounds(self, v: f64) -> bool {
        v.is_finite()
            && match self {
                Param::G | Param::KappaS => v >= 0.0,
                Param::Gamma => v > 0.0,
                Param::Detuning => true,
            }
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "g" => Ok(Param::G),
            "kappa_s" | "kappa-s" | "ks" => Ok(Param::KappaS),
            "gamma" => Ok(Param::Gamma),
            "detuning" => Ok(Param::Detuning),
            _ => Err(Error::InvalidConfig(format!("unknown sweep parameter `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepAxis {
    pub param: Param,
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
}

impl SweepAxis {
    pub fn new(param: Param, start: f64, stop: f64, steps: usize) -> Self {
        SweepAxis {
            param,
            start,
            stop,
            steps,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.start];
        }
        let h = (self.stop - self.start) / (self.steps - 1) as f64;
        (0..self.steps)
            .map(|i| if i + 1 == self.steps { self.stop } else { self.start + h * i as f64 })
            .collect()
    }
}

/// `param=start:stop:steps`.
impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("axis `{s}` is not name=start:stop:steps"));
        let (name, range) = s.split_once('=').ok_or_else(bad)?;
        let parts: Vec<&str> = range.split(':').collect();
        let [a, b, n] = parts.as_slice() else { return Err(bad()) };
        Ok(SweepAxis::new(
            name.trim().parse()?,
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
            n.trim().parse().map_err(|_| bad())?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Fidelity,
    SuccessProbability,
    /// `|t − t0|` of the first QD.
    SuccessAmplitude,
    /// One column per failure sink plus the cavity loss.
    Sinks,
}

impl FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fidelity" => Ok(Quantity::Fidelity),
            "success" | "success_probability" => Ok(Quantity::SuccessProbability),
            "amplitude" | "t-t0" | "|t-t0|" => Ok(Quantity::SuccessAmplitude),
            "sinks" => Ok(Quantity::Sinks),
            _ => Err(Error::InvalidConfig(format!("unknown quantity `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Device, N and inputs. Its cavity list is replaced at every point.
    pub config: DeviceConfig,
    /// Unswept parameters.
    pub base: CavityParams,
    pub axes: Vec<SweepAxis>,
    pub quantities: Vec<Quantity>,
    /// When set, each point draws fresh random inputs from a stream keyed
    /// by this seed and the grid index.
    pub seed: Option<u64>,
}

impl SweepSpec {
    pub fn new(config: DeviceConfig, base: CavityParams, axes: Vec<SweepAxis>) -> Self {
        SweepSpec {
            config,
            base,
            axes,
            quantities: vec![Quantity::Fidelity, Quantity::SuccessProbability, Quantity::SuccessAmplitude],
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.axes.is_empty() {
            return Err(Error::InvalidConfig("a sweep needs at least one axis".into()));
        }
        for a in &self.axes {
            // A single point is allowed as a degenerate grid.
            if a.steps == 0 || (a.steps == 1 && a.start != a.stop) {
                return Err(Error::InvalidConfig(format!(
                    "axis {} needs at least 2 steps over a non-empty range",
                    a.param.name()
                )));
            }
            if !a.param.in_bounds(a.start) || !a.param.in_bounds(a.stop) {
                return Err(Error::InvalidConfig(format!("axis {} leaves the physical range", a.param.name())));
            }
            if self.axes.iter().filter(|b| b.param == a.param).count() > 1 {
                return Err(Error::InvalidConfig(format!("axis {} given twice", a.param.name())));
            }
        }
        if self.config.policy != OutcomePolicy::Enumerate {
            return Err(Error::InvalidConfig("sweeps enumerate all outcomes".into()));
        }
        Ok(())
    }

    fn points(&self) -> Vec<Vec<f64>> {
        let mut grid = vec![Vec::new()];
        for a in &self.axes {
            let vals = a.values();
            grid = grid
                .into_iter()
                .flat_map(|p| {
                    vals.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        grid
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub params: Vec<f64>,
    /// One value per column; `None` where the run failed.
    pub values: Vec<Option<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub device: String,
    pub n: usize,
    pub seed: Option<u64>,
    pub version: &'static str,
    pub inputs: String,
    pub axes: Vec<String>,
    pub columns: Vec<String>,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.points.iter().map(|p| p.values[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# device={}", self.device);
        let _ = writeln!(s, "# n={}", self.n);
        match self.seed {
            Some(seed) => {
                let _ = writeln!(s, "# seed={seed}");
            }
            None => {
                let _ = writeln!(s, "# seed=none");
            }
        }
        let _ = writeln!(s, "# inputs={}", self.inputs);
        let _ = writeln!(s, "# version={}", self.version);
        let header: Vec<&str> = self
            .axes
            .iter()
            .chain(&self.columns)
            .map(String::as_str)
            .chain(["error"])
            .collect();
        let _ = writeln!(s, "{}", header.join(","));
        for p in &self.points {
            let mut cells: Vec<String> = p.params.iter().map(|v| format!("{v:.16e}")).collect();
            cells.extend(p.values.iter().map(|v| v.map(|x| format!("{x:.16e}")).unwrap_or_default()));
            cells.push(p.error.as_deref().map(csv_text).unwrap_or_default());
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

impl fmt::Display for SweepResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_csv())
    }
}

fn csv_text(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn describe_inputs(cfg: &DeviceConfig) -> String {
    cfg.inputs
        .qubits()
        .iter()
        .map(|(n, q)| format!("{n}=({}{:+}i;{}{:+}i)", q.a.re, q.a.im, q.b.re, q.b.im))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Evaluates every grid point with a full device run, in parallel, and
/// returns the points in grid order. Failing points are recorded.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    // The circuit, and so the set of sinks, does not depend on the point.
    let probe = build_protocol(&spec.config.clone().with_cavity(Cavity::Coefficients(crate::coeffs::ideal_coefficients())))?;
    let sink_names: Vec<String> = probe
        .registry
        .sinks()
        .filter(|(_, _, k)| k.is_failure() && *k != SinkKind::CavityLoss)
        .map(|(_, n, _)| n.to_string())
        .collect();
    let mut columns = Vec::new();
    for q in &spec.quantities {
        match q {
            Quantity::Fidelity => columns.push("fidelity".to_string()),
            Quantity::SuccessProbability => columns.push("success_probability".to_string()),
            Quantity::SuccessAmplitude => columns.push("abs_t_minus_t0".to_string()),
            Quantity::Sinks => {
                columns.extend(sink_names.iter().map(|n| format!("p_{n}")));
                columns.push("p_loss".to_string());
            }
        }
    }
    let grid = spec.points();
    let points: Vec<SweepPoint> = grid
        .into_par_iter()
        .enumerate()
        .map(|(index, params)| evaluate(spec, &sink_names, index, params))
        .collect();
    Ok(SweepResult {
        device: spec.config.kind().to_string(),
        n: spec.config.n,
        seed: spec.seed,
        version: env!("CARGO_PKG_VERSION"),
        inputs: if spec.seed.is_some() {
            "random".into()
        } else {
            describe_inputs(&spec.config)
        },
        axes: spec.axes.iter().map(|a| a.param.name().to_string()).collect(),
        columns,
        points,
    })
}

fn evaluate(spec: &SweepSpec, sinks: &[String], index: usize, params: Vec<f64>) -> SweepPoint {
    let mut p = spec.base;
    for (a, v) in spec.axes.iter().zip(&params) {
        a.param.set(&mut p, *v);
    }
    let mut cfg = spec.config.clone().with_params(p);
    if let Some(seed) = spec.seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        cfg.inputs = random_inputs(cfg.kind(), cfg.n, &mut rng);
    }
    let run = scattering_coefficients(&p).and_then(|c| Ok((c, run_device(&cfg)?)));
    let (coeffs, result) = match run {
        Ok(x) => x,
        Err(e) => {
            let width = spec
                .quantities
                .iter()
                .map(|q| if *q == Quantity::Sinks { sinks.len() + 1 } else { 1 })
                .sum();
            return SweepPoint {
                index,
                params,
                values: vec![None; width],
                error: Some(e.to_string()),
            };
        }
    };
    let report = efficiency_report(&result);
    let mut values = Vec::new();
    for q in &spec.quantities {
        match q {
            Quantity::Fidelity => values.push(Some(result.fidelity)),
            Quantity::SuccessProbability => values.push(Some(result.success_probability())),
            Quantity::SuccessAmplitude => values.push(Some(coeffs.success_amplitude().norm())),
            Quantity::Sinks => {
                values.extend(sinks.iter().map(|n| Some(result.outcome.sinks.get(n).copied().unwrap_or(0.0))));
                values.push(Some(report.cavity_loss));
            }
        }
    }
    SweepPoint {
        index,
        params,
        values,
        error: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::DeviceKind;

    fn grid() -> SweepSpec {
        SweepSpec::new(
            DeviceConfig::new(DeviceKind::PTransistor, 1),
            CavityParams::resonant(1.0, 0.0, 0.1),
            vec![
                SweepAxis::new(Param::G, 0.5, 2.5, 5),
                SweepAxis::new(Param::KappaS, 0.0, 1.0, 5),
            ],
        )
    }

    #[test]
    fn success_is_monotone_on_the_grid() {
        let r = run_sweep(&grid()).unwrap();
        let s: Vec<f64> = r.column("success_probability").unwrap().into_iter().map(Option::unwrap).collect();
        // Rows iterate κ_s fastest.
        for gi in 0..5 {
            for ki in 0..5 {
                let v = s[gi * 5 + ki];
                if ki + 1 < 5 {
                    assert!(s[gi * 5 + ki + 1] < v);
                }
                if gi + 1 < 5 {
                    assert!(s[(gi + 1) * 5 + ki] > v);
                }
            }
        }
        assert!(r.column("fidelity").unwrap().iter().all(|f| f.unwrap() > 1.0 - 1e-9));
    }

    #[test]
    fn csv_is_reproducible() {
        let mut spec = grid();
        spec.seed = Some(11);
        spec.quantities.push(Quantity::Sinks);
        let a = run_sweep(&spec).unwrap().to_csv();
        let b = run_sweep(&spec).unwrap().to_csv();
        assert_eq!(a, b);
        assert!(a.lines().any(|l| l.starts_with("g,kappa_s,fidelity")));
    }

    #[test]
    fn failed_points_are_recorded() {
        let spec = SweepSpec::new(
            DeviceConfig::new(DeviceKind::HyperRouter, 0),
            CavityParams::resonant(2.0, 0.1, 0.1),
            vec![SweepAxis::new(Param::Detuning, 0.0, 0.5, 2)],
        );
        let r = run_sweep(&spec).unwrap();
        assert!(r.points[0].error.is_none());
        assert!(r.points[1].error.as_deref().unwrap().contains("resonance"));
    }

    #[test]
    fn axis_parsing() {
        let a: SweepAxis = "g=0.5:2.5:5".parse().unwrap();
        assert_eq!(a, SweepAxis::new(Param::G, 0.5, 2.5, 5));
        assert!("g=1:2".parse::<SweepAxis>().is_err());
    }
}
