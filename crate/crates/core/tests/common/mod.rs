//! Shared fixtures: the shipped netlists and the device configurations
//! they encode.
#![allow(dead_code)]

use std::path::PathBuf;

use hyperqd::cli::parse_netlist;
use hyperqd::coeffs::CavityParams;
use hyperqd::devices::protocol::run;
use hyperqd::devices::{assemble, Cavity, DeviceConfig, DeviceInputs, DeviceKind, DeviceResult, Qubit, RunOptions};
use hyperqd::state::C64;

pub const NETLISTS: [(&str, DeviceKind); 4] = [
    ("fig2_p_transistor.net", DeviceKind::PTransistor),
    ("fig3_s_transistor.net", DeviceKind::STransistor),
    ("fig4_hyper_router.net", DeviceKind::HyperRouter),
    ("fig5_hyper_dram.net", DeviceKind::HyperDram),
];

pub fn netlist_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../netlists").join(name)
}

fn q(a: (f64, f64), b: (f64, f64)) -> Qubit {
    Qubit::new(C64::new(a.0, a.1), C64::new(b.0, b.1))
}

/// The configuration written out in each shipped netlist.
pub fn netlist_config(kind: DeviceKind) -> DeviceConfig {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let pillar = Cavity::Params(CavityParams::resonant(2.52, 0.05, 0.1));
    let mut cfg = DeviceConfig::new(kind, 2).with_cavity(pillar);
    cfg.inputs = match kind {
        DeviceKind::PTransistor => DeviceInputs::PTransistor {
            polarization: q((0.6, 0.0), (0.8, 0.0)),
            sources: vec![q((0.8, 0.0), (0.6, 0.0)), q((0.6, 0.0), (0.0, 0.8))],
        },
        DeviceKind::STransistor => DeviceInputs::STransistor {
            polarization: q((0.6, 0.0), (0.8, 0.0)),
            spatial: q((0.28, 0.0), (0.96, 0.0)),
            sources: vec![q((0.8, 0.0), (0.6, 0.0)), q((0.0, 0.6), (0.8, 0.0))],
        },
        DeviceKind::HyperRouter => DeviceInputs::HyperRouter {
            polarization: q((0.6, 0.0), (0.0, 0.8)),
            spatial: q((0.8, 0.0), (0.6, 0.0)),
            control: q((0.6, 0.0), (0.8, 0.0)),
        },
        DeviceKind::HyperDram => {
            cfg.cavities.push(Cavity::Params(CavityParams::resonant(1.7, 0.7, 0.1)));
            DeviceInputs::HyperDram {
                polarization: q((0.6, 0.0), (0.8, 0.0)),
                spatial: q((0.28, 0.0), (0.0, 0.96)),
                spin1: q((0.6, 0.0), (0.8, 0.0)),
                spin2: q((h, 0.0), (0.0, h)),
            }
        }
    };
    cfg
}

/// Runs a shipped netlist and scores it like the built-in device.
pub fn run_netlist(name: &str, kind: DeviceKind) -> DeviceResult {
    let text = std::fs::read_to_string(netlist_path(name)).unwrap();
    let net = parse_netlist(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    let protocol = net.to_protocol(None, None).unwrap();
    let record = run(&protocol, &RunOptions::default()).unwrap();
    assemble(&netlist_config(kind), &protocol, record).unwrap()
}
