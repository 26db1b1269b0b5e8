//! Reflection and transmission coefficients across the coupling strength,
//! and the VBS setting that balances each point.

use hyperqd::coeffs::{scattering_coefficients, vbs_transmission, CavityParams};

fn main() -> hyperqd::Result<()> {
    println!("{:>6} {:>12} {:>12} {:>12} {:>12}", "g", "t", "t0", "t - t0", "VBS T");
    for i in 0..=12 {
        let g = 0.25 * i as f64;
        let c = scattering_coefficients(&CavityParams::resonant(g, 0.05, 0.1))?;
        println!(
            "{g:>6.2} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            c.t.re,
            c.t0.re,
            c.success_amplitude().re,
            vbs_transmission(&c)?
        );
    }
    // Off resonance t - t0 picks up an imaginary part and no real VBS fits.
    let c = scattering_coefficients(&CavityParams::detuned(2.4, 0.05, 0.1, 0.5))?;
    println!("detuned: t - t0 = {}, VBS: {:?}", c.success_amplitude(), vbs_transmission(&c).err());
    Ok(())
}
