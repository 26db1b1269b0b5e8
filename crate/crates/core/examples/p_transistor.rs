//! Polarization transistor: one gate photon fanned out to N source photons.

use hyperqd::analysis::{efficiency_report, preset};
use hyperqd::devices::{run_p_transistor, DeviceConfig, DeviceInputs, DeviceKind, Qubit};

fn main() -> hyperqd::Result<()> {
    for n in 1..=4 {
        let mut cfg = DeviceConfig::new(DeviceKind::PTransistor, n).with_cavity(preset("micropillar-2008")?);
        cfg.inputs = DeviceInputs::PTransistor {
            polarization: Qubit::real(0.6, 0.8),
            sources: vec![Qubit::plus(); n],
        };
        let r = run_p_transistor(&cfg)?;
        let e = efficiency_report(&r);
        println!(
            "N={n}: success {:.6}  fidelity {:.12}  branches {}  lost to detectors {:.2e}, VBS {:.2e}, cavity {:.2e}",
            e.success,
            r.fidelity,
            r.branches.len(),
            e.detector,
            e.vbs_reflection,
            e.cavity_loss
        );
    }

    let cfg = DeviceConfig::new(DeviceKind::PTransistor, 2);
    let r = run_p_transistor(&cfg)?;
    let b = &r.branches[0];
    println!("\nideal N=2, outcomes {:?}:", b.outcomes);
    print!("{}", b.state.serialize());
    Ok(())
}
