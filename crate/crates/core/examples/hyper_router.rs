//! Router: the control spin sends the signal photon left or right without
//! touching its polarization or spatial qubit.

use hyperqd::analysis::preset;
use hyperqd::devices::{run_hyper_router, DeviceConfig, DeviceInputs, DeviceKind, Qubit};

fn main() -> hyperqd::Result<()> {
    for (up, down) in [(1.0, 0.0), (0.0, 1.0), (0.6, 0.8)] {
        let mut cfg = DeviceConfig::new(DeviceKind::HyperRouter, 0).with_cavity(preset("micropillar-2008")?);
        cfg.inputs = DeviceInputs::HyperRouter {
            polarization: Qubit::real(0.8, 0.6),
            spatial: Qubit::plus(),
            control: Qubit::real(up, down),
        };
        let r = run_hyper_router(&cfg)?;
        let state = r.outcome.state.as_ref().expect("router heralds success");
        let mut left = 0.0;
        let mut right = 0.0;
        for (name, amp) in state.amplitudes_by_name() {
            if name.contains(".left") {
                left += amp.norm_sqr();
            } else if name.contains(".right") {
                right += amp.norm_sqr();
            }
        }
        println!(
            "control ({up}, {down}): left {left:.4}, right {right:.4}, success {:.6}, fidelity {:.12}",
            r.success_probability(),
            r.fidelity
        );
    }
    Ok(())
}
