//! DRAM: a photon is stored for N rounds and read out, with the storage
//! sign flipping every round.

use hyperqd::coeffs::CavityParams;
use hyperqd::devices::{run_hyper_dram, Cavity, DeviceConfig, DeviceKind};

fn main() -> hyperqd::Result<()> {
    for n in 0..=4 {
        let cfg = DeviceConfig::new(DeviceKind::HyperDram, n);
        let r = run_hyper_dram(&cfg)?;
        let b = &r.branches[0];
        let (label, loaded) = b.snapshots["loaded"].terms().next().map(|(l, a)| (l.clone(), *a)).unwrap();
        let stored = b.snapshots["stored"].amplitude(&label);
        println!("N={n}: stored/loaded = {:+.3}", (stored / loaded).re);
    }

    // The loop only ever sends L photons into the phase blocks, where r - t
    // and r0 - t0 are both 1: storage is lossless even in lossy cavities.
    let mut cfg = DeviceConfig::new(DeviceKind::HyperDram, 3);
    cfg.cavities = vec![
        Cavity::Params(CavityParams::resonant(2.52, 0.05, 0.1)),
        Cavity::Params(CavityParams::resonant(1.7, 0.7, 0.1)),
    ];
    let r = run_hyper_dram(&cfg)?;
    println!(
        "two micropillars, N=3: photon survives with probability {:.6}, fidelity {:.12}",
        r.success_probability(),
        r.fidelity
    );
    Ok(())
}
