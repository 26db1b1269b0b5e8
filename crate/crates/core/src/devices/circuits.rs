//! Protocols for the four devices.
//!
//! Mode names are part of the interface: the shipped netlists use the
//! same names, so a netlist run and a built-in run produce identical
//! labels.

use crate::elements::{HwpAngle, ZTarget};
use crate::error::Result;
use crate::state::{PhotonSpec, SpinSpec, C64};

use super::protocol::{CircuitBuilder, Outcome, Path, Protocol, StageKind};
use super::{DeviceConfig, DeviceInputs};
use crate::elements::Element;
use crate::state::Sign;

use HwpAngle::{Flip, Hadamard};

pub fn build_protocol(cfg: &DeviceConfig) -> Result<Protocol> {
    cfg.validate()?;
    match &cfg.inputs {
        DeviceInputs::PTransistor { .. } => p_transistor(cfg),
        DeviceInputs::STransistor { .. } => s_transistor(cfg),
        DeviceInputs::HyperRouter { .. } => hyper_router(cfg),
        DeviceInputs::HyperDram { .. } => hyper_dram(cfg),
    }
}

fn one() -> C64 {
    C64::new(1.0, 0.0)
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

/// Polarization splitter feeding a QD phase block on the `R` arm and a
/// balancing VBS on the `L` arm, recombined into `output`.
///
/// An input `a|R⟩ + b|L⟩` leaves as `(t − t0)(±a|R⟩ + b|L⟩)` with the sign
/// set by the spin. The returned photon lands on `ret_sink`, the VBS
/// reflection on `vbs_sink`.
#[allow(clippy::too_many_arguments)]
fn spin_parity_block(
    b: &mut CircuitBuilder,
    qd: usize,
    input: &str,
    output: &str,
    prefix: &str,
    ret_sink: &str,
    vbs_sink: &str,
    transmission: f64,
) -> Result<()> {
    let arm_r = format!("{prefix}.1");
    let arm_l = format!("{prefix}.2");
    let out_r = format!("{prefix}.3");
    let out_l = format!("{prefix}.6");
    b.pbs(input, &format!("{prefix}.vac"), &arm_r, &arm_l)?;
    b.phase_block(qd, &arm_r, &arm_r, &out_r, &format!("{prefix}.pb"), false)?;
    b.detector(&arm_r, ret_sink)?;
    b.hwp(&out_r, Flip)?;
    b.vbs(&arm_l, &out_l, vbs_sink, transmission)?;
    b.pbs(&out_r, &out_l, output, &format!("{prefix}.dump"))
}

fn p_transistor(cfg: &DeviceConfig) -> Result<Protocol> {
    let DeviceInputs::PTransistor { polarization, sources } = &cfg.inputs else {
        unreachable!()
    };
    let mut b = CircuitBuilder::new();
    let coeffs = cfg.coefficients(0)?;
    let t = cfg.transmission(&coeffs)?;
    let q = b.qd("q", coeffs)?;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    b.input_spin(q, SpinSpec::new(C64::new(h, 0.0), C64::new(-h, 0.0)))?;
    b.input_photon("gate", PhotonSpec::new(polarization.a, polarization.b, &[("g", one())]))?;

    b.stage("gate", StageKind::Gate);
    b.hwp("g", Hadamard)?;
    spin_parity_block(&mut b, q, "g", "g.7", "g", "ret1", "vbs1", t)?;
    b.herald(&["ret1", "vbs1"])?;
    b.measure_photon("g.7", "D1", "D2", "gate", None)?;
    b.conditional("gate", Outcome::Sign(Sign::Minus), Element::SpinFlip { qd: q })?;

    for (i, src) in sources.iter().enumerate() {
        let k = i + 1;
        let (c, d) = (format!("c{k}"), format!("d{k}"));
        b.stage(&format!("source{k}"), StageKind::Source);
        let photon = b.inject(
            &format!("s{k}"),
            PhotonSpec::new(one(), zero(), &[(&c, src.a), (&d, src.b)]),
        )?;
        for rail in [&c, &d] {
            b.hwp(rail, Hadamard)?;
            spin_parity_block(&mut b, q, rail, rail, rail, "D3", "D4", t)?;
            b.hwp(rail, Hadamard)?;
        }
        b.herald(&["D3", "D4"])?;
        b.freeze(photon)?;
    }

    b.stage("readout", StageKind::Main);
    b.measure_spin(q, "spin", None)?;
    b.parity("spin", cfg.n, ZTarget::Polarization { photon: 1 })?;
    b.build()
}

/// Spatial-qubit block: BS, a QD arm acting on both polarizations, a VBS
/// bypass arm, and a recombining BS. Maps `in1` to `(t − t0)` times
/// `out1` for spin up and `−out2` for spin down.
#[allow(clippy::too_many_arguments)]
fn spatial_block(
    b: &mut CircuitBuilder,
    qd: usize,
    in1: &str,
    in2: &str,
    out1: &str,
    out2: &str,
    p: &str,
    transmission: f64,
) -> Result<()> {
    let u = format!("{p}.u");
    let v = format!("{p}.v");
    let arm_r = format!("{p}.R");
    let arm_l = format!("{p}.L");
    let out_r = format!("{p}.Rout");
    let out_l = format!("{p}.Lout");
    let w = format!("{p}.w");
    let v2 = format!("{p}.v2");
    b.bs(in1, in2, &u, &v, false)?;
    b.pbs(&u, &format!("{p}.vac"), &arm_r, &arm_l)?;
    b.phase_block(qd, &arm_r, &arm_r, &out_r, &format!("{p}.rb"), false)?;
    b.detector(&arm_r, "D1")?;
    b.hwp(&out_r, Flip)?;
    b.hwp(&arm_l, Flip)?;
    b.phase_block(qd, &arm_l, &arm_l, &out_l, &format!("{p}.lb"), false)?;
    b.detector(&arm_l, "D2")?;
    b.pbs(&out_r, &out_l, &w, &format!("{p}.dump"))?;
    b.vbs(&v, &v2, "D3", transmission)?;
    b.bs(&w, &v2, out1, out2, false)
}

fn s_transistor(cfg: &DeviceConfig) -> Result<Protocol> {
    let DeviceInputs::STransistor {
        polarization,
        spatial,
        sources,
    } = &cfg.inputs
    else {
        unreachable!()
    };
    let mut b = CircuitBuilder::new();
    let coeffs = cfg.coefficients(0)?;
    let t = cfg.transmission(&coeffs)?;
    let q = b.qd("q", coeffs)?;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    b.input_spin(q, SpinSpec::new(C64::new(h, 0.0), C64::new(-h, 0.0)))?;
    let gate = b.input_photon(
        "gate",
        PhotonSpec::new(polarization.a, polarization.b, &[("a", spatial.a), ("b", spatial.b)]),
    )?;

    b.stage("gate", StageKind::Gate);
    spatial_block(&mut b, q, "a", "b", "a", "b", "g", t)?;
    b.herald(&["D1", "D2", "D3"])?;
    b.measure_path("a", "b", "gate", None)?;
    b.conditional("gate", Outcome::Path(Path::Second), Element::SpinFlip { qd: q })?;
    b.freeze(gate)?;

    for (i, src) in sources.iter().enumerate() {
        let k = i + 1;
        let (c, d) = (format!("c{k}"), format!("d{k}"));
        b.stage(&format!("source{k}"), StageKind::Source);
        let photon = b.inject(&format!("s{k}"), PhotonSpec::new(src.a, src.b, &[(&c, one())]))?;
        spatial_block(&mut b, q, &c, &d, &c, &d, &format!("s{k}"), t)?;
        b.herald(&["D1", "D2", "D3"])?;
        b.freeze(photon)?;
    }

    b.stage("readout", StageKind::Main);
    b.measure_spin(q, "spin", None)?;
    b.parity(
        "spin",
        cfg.n,
        ZTarget::Spatial {
            photon: 1,
            second: "d1".into(),
        },
    )?;
    b.build()
}

fn hyper_router(cfg: &DeviceConfig) -> Result<Protocol> {
    let DeviceInputs::HyperRouter {
        polarization,
        spatial,
        control,
    } = &cfg.inputs
    else {
        unreachable!()
    };
    let mut b = CircuitBuilder::new();
    let coeffs = cfg.coefficients(0)?;
    let t = cfg.transmission(&coeffs)?;
    let q = b.qd("q", coeffs)?;
    b.input_spin(q, SpinSpec::new(control.a, control.b))?;
    b.input_photon(
        "signal",
        PhotonSpec::new(polarization.a, polarization.b, &[("a", spatial.a), ("b", spatial.b)]),
    )?;

    b.stage("route", StageKind::Main);
    for x in ["a", "b"] {
        let r = format!("{x}.r");
        let l = format!("{x}.l");
        b.pbs(x, &format!("{x}.vac"), &r, &l)?;
        b.hwp(&r, Hadamard)?;
        b.hwp(&l, Hadamard)?;
        spin_parity_block(&mut b, q, &l, &format!("{x}.l2"), &l, "D1", "D3", t)?;
        spin_parity_block(&mut b, q, &r, &format!("{x}.r2"), &r, "D2", "D4", t)?;
        b.hwp(&format!("{x}.l2"), Hadamard)?;
        b.hwp(&format!("{x}.r2"), Hadamard)?;
        b.pbs(&format!("{x}.r2"), &format!("{x}.l2"), &format!("{x}.left"), &format!("{x}.right"))?;
        b.hwp(&format!("{x}.right"), Flip)?;
    }
    b.herald(&["D1", "D2", "D3", "D4"])?;
    b.build()
}

fn hyper_dram(cfg: &DeviceConfig) -> Result<Protocol> {
    let DeviceInputs::HyperDram {
        polarization,
        spatial,
        spin1,
        spin2,
    } = &cfg.inputs
    else {
        unreachable!()
    };
    let mut b = CircuitBuilder::new();
    let c1 = cfg.coefficients(0)?;
    let c2 = cfg.coefficients(1)?;
    // The loop has no VBS, but the circuit is only defined at resonance.
    cfg.transmission(&c1)?;
    cfg.transmission(&c2)?;
    let q1 = b.qd("q1", c1)?;
    let q2 = b.qd("q2", c2)?;
    b.input_spin(q1, SpinSpec::new(spin1.a, spin1.b))?;
    b.input_spin(q2, SpinSpec::new(spin2.a, spin2.b))?;
    b.input_photon(
        "signal",
        PhotonSpec::new(polarization.a, polarization.b, &[("a", spatial.a), ("b", spatial.b)]),
    )?;

    let rails = ["a", "b"];
    b.stage("load", StageKind::Main);
    for x in rails {
        b.pbs(x, &format!("{x}.vac"), &format!("{x}.l"), &format!("{x}.r"))?;
        b.hwp(&format!("{x}.l"), Flip)?;
    }
    b.snapshot("loaded");

    b.stage("store", StageKind::Main);
    for k in 0..=cfg.n {
        if k == cfg.n {
            b.snapshot("stored");
            b.stage("readout", StageKind::Main);
        }
        let rotated = k == cfg.n;
        for x in rails {
            let (l, r) = (format!("{x}.l"), format!("{x}.r"));
            b.phase_block(q1, &r, &r, &format!("{x}.r2"), &format!("{x}.r.pb"), rotated)?;
            b.phase_block(q2, &l, &l, &format!("{x}.l2"), &format!("{x}.l.pb"), rotated)?;
            if !rotated {
                let (m, m2) = (format!("{x}.m"), format!("{x}.m2"));
                b.hwp(&l, Flip)?;
                b.pbs(&l, &r, &m, &format!("{x}.dump"))?;
                b.mirror(&m, &m2)?;
                b.pbs(&m2, &format!("{x}.vac"), &l, &r)?;
                b.hwp(&l, Flip)?;
            }
        }
    }
    for x in rails {
        let l2 = format!("{x}.l2");
        b.hwp(&l2, Flip)?;
        b.pbs(&l2, &format!("{x}.r2"), &format!("{x}.out"), &format!("{x}.dump"))?;
    }
    b.herald(&[])?;
    b.build()
}
