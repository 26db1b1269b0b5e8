//! Efficiency bookkeeping, parameter presets, random draws, sweeps and
//! the dense reference oracle.

pub mod oracle;
pub mod sweep;

use rand::Rng;

use crate::coeffs::{ideal_coefficients, CavityParams};
use crate::devices::{Cavity, DeviceConfig, DeviceInputs, DeviceKind, DeviceResult, Qubit};
use crate::error::{Error, Result};
use crate::registry::SinkKind;
use crate::state::C64;

pub use oracle::{max_branch_deviation, oracle_run};
pub use sweep::{run_sweep, Param, Quantity, SweepAxis, SweepPoint, SweepResult, SweepSpec};

/// Where the probability that did not herald success went.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyReport {
    pub success: f64,
    pub detector: f64,
    pub vbs_reflection: f64,
    /// Side leakage and dipole decay; also any weight that a measurement
    /// found outside its modes.
    pub cavity_loss: f64,
}

impl EfficiencyReport {
    /// `success` plus every share; 1 for a closed ledger.
    pub fn total(&self) -> f64 {
        self.success + self.detector + self.vbs_reflection + self.cavity_loss
    }

    pub fn failure(&self) -> f64 {
        self.detector + self.vbs_reflection + self.cavity_loss
    }
}

pub fn efficiency_report(result: &DeviceResult) -> EfficiencyReport {
    EfficiencyReport {
        success: result.success_probability(),
        detector: result.sink_share(SinkKind::Detector),
        vbs_reflection: result.sink_share(SinkKind::VbsReflection),
        cavity_loss: result.outcome.unaccounted_loss + result.sink_share(SinkKind::CavityLoss),
    }
}

/// Named parameter points.
pub const PRESETS: [&str; 3] = ["micropillar-2008", "micropillar-2007", "ideal"];

/// Resolves a preset name. Rates are in units of κ; the quoted coupling
/// ratios are `g/(κ + κ_s)`.
pub fn preset(name: &str) -> Result<Cavity> {
    let pillar = |ratio: f64, kappa_s: f64, gamma: f64| {
        Cavity::Params(CavityParams::resonant(ratio * (1.0 + kappa_s), kappa_s, gamma))
    };
    match name {
        "micropillar-2008" => Ok(pillar(2.4, 0.05, 0.1)),
        "micropillar-2007" => Ok(pillar(1.0, 0.7, 0.1)),
        "ideal" => Ok(Cavity::Coefficients(ideal_coefficients())),
        other => Err(Error::InvalidConfig(format!(
            "unknown preset `{other}` (known: {})",
            PRESETS.join(", ")
        ))),
    }
}

/// Random normalized qubit with complex amplitudes.
pub fn random_qubit<R: Rng + ?Sized>(rng: &mut R) -> Qubit {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return Qubit::new(C64::new(v[0] / n, v[1] / n), C64::new(v[2] / n, v[3] / n));
        }
    }
}

/// Resonant cavity with g/κ ∈ [0.2, 3], κ_s/κ ∈ [0, 1], γ/κ ∈ [0.01, 0.5].
pub fn random_params<R: Rng + ?Sized>(rng: &mut R) -> CavityParams {
    CavityParams::resonant(
        rng.gen_range(0.2..=3.0),
        rng.gen_range(0.0..=1.0),
        rng.gen_range(0.01..=0.5),
    )
}

pub fn random_inputs<R: Rng + ?Sized>(kind: DeviceKind, n: usize, rng: &mut R) -> DeviceInputs {
    let mut q = || random_qubit(rng);
    match kind {
        DeviceKind::PTransistor => DeviceInputs::PTransistor {
            polarization: q(),
            sources: (0..n).map(|_| q()).collect(),
        },
        DeviceKind::STransistor => DeviceInputs::STransistor {
            polarization: q(),
            spatial: q(),
            sources: (0..n).map(|_| q()).collect(),
        },
        DeviceKind::HyperRouter => DeviceInputs::HyperRouter {
            polarization: q(),
            spatial: q(),
            control: q(),
        },
        DeviceKind::HyperDram => DeviceInputs::HyperDram {
            polarization: q(),
            spatial: q(),
            spin1: q(),
            spin2: q(),
        },
    }
}

/// A random physical configuration; the DRAM gets two distinct cavities.
pub fn random_config<R: Rng + ?Sized>(kind: DeviceKind, n: usize, rng: &mut R) -> DeviceConfig {
    let mut cfg = DeviceConfig::new(kind, n);
    cfg.inputs = random_inputs(kind, n, rng);
    cfg.cavities = (0..kind.qd_count()).map(|_| Cavity::Params(random_params(rng))).collect();
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::run_device;

    #[test]
    fn preset_ratios() {
        let Cavity::Params(p) = preset("micropillar-2008").unwrap() else { panic!() };
        assert!((p.g / (p.kappa + p.kappa_s) - 2.4).abs() < 1e-12);
        let Cavity::Params(p) = preset("micropillar-2007").unwrap() else { panic!() };
        assert!((p.g - 1.7).abs() < 1e-12);
        assert!(preset("nope").is_err());
    }

    #[test]
    fn ideal_report_has_no_losses() {
        let r = run_device(&DeviceConfig::new(DeviceKind::PTransistor, 1)).unwrap();
        let e = efficiency_report(&r);
        assert_eq!(e.failure(), 0.0);
        assert!((e.success - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ledger_closes_for_lossy_transistor() {
        let cfg = DeviceConfig::new(DeviceKind::PTransistor, 1).with_cavity(preset("micropillar-2008").unwrap());
        let e = efficiency_report(&run_device(&cfg).unwrap());
        assert!((e.total() - 1.0).abs() < 1e-10);
        assert!(e.detector > 0.0 && e.vbs_reflection > 0.0 && e.cavity_loss > 0.0);
    }

    #[test]
    fn near_lossless_cavity_loses_almost_nothing() {
        let cfg = DeviceConfig::new(DeviceKind::PTransistor, 1).with_params(CavityParams::resonant(2.4, 0.0, 1e-6));
        let e = efficiency_report(&run_device(&cfg).unwrap());
        assert!(e.cavity_loss <= 1e-5, "{}", e.cavity_loss);
    }
}
