//! Spatial transistor, including a single heralded trajectory chosen by a
//! fixed outcome script.

use hyperqd::analysis::preset;
use hyperqd::devices::{run_s_transistor, DeviceConfig, DeviceInputs, DeviceKind, Qubit};
use hyperqd::state::C64;

fn main() -> hyperqd::Result<()> {
    let mut cfg = DeviceConfig::new(DeviceKind::STransistor, 2).with_cavity(preset("micropillar-2007")?);
    cfg.inputs = DeviceInputs::STransistor {
        polarization: Qubit::plus(),
        spatial: Qubit::new(C64::new(0.28, 0.0), C64::new(0.0, 0.96)),
        sources: vec![Qubit::real(0.8, 0.6); 2],
    };
    let r = run_s_transistor(&cfg)?;
    println!("all outcomes: success {:.6}, fidelity {:.12}", r.success_probability(), r.fidelity);
    for b in &r.branches {
        println!("  {:?}  p = {:.6}", b.outcomes, b.probability);
    }

    let one = cfg.clone().with_policy("fixed:second,-".parse()?);
    let r = run_s_transistor(&one)?;
    println!("scripted path=second, spin=-: {} branch, fidelity {:.12}", r.branches.len(), r.fidelity);
    for f in &r.feed_forward {
        println!("  feed-forward after {} = {}: {:?}", f.label, f.outcome, f.applied);
    }

    let fail = cfg.with_policy("fixed:click:D1".parse()?);
    let r = run_s_transistor(&fail)?;
    if let Some(f) = &r.failure {
        println!("forced click in {} during {}: the run restarts", f.sink, f.stage);
    }
    Ok(())
}
