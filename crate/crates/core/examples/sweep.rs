//! Success probability of the p-transistor over a (g, κ_s) grid, as CSV.

use hyperqd::analysis::{run_sweep, Param, Quantity, SweepAxis, SweepSpec};
use hyperqd::coeffs::CavityParams;
use hyperqd::devices::{DeviceConfig, DeviceKind};

fn main() -> hyperqd::Result<()> {
    let mut spec = SweepSpec::new(
        DeviceConfig::new(DeviceKind::PTransistor, 2),
        CavityParams::resonant(2.4, 0.05, 0.1),
        vec![SweepAxis::new(Param::G, 0.5, 3.0, 6), SweepAxis::new(Param::KappaS, 0.0, 0.6, 4)],
    );
    spec.quantities = vec![Quantity::SuccessProbability, Quantity::Sinks];
    spec.seed = Some(11);
    let result = run_sweep(&spec)?;
    print!("{}", result.to_csv());
    Ok(())
}
