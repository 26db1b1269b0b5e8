//! Steady-state reflection and transmission of a singly charged QD in a
//! double-sided microcavity.
//!
//! The hot cavity (photon couples to the X⁻ transition) is described by the
//! pair `(r, t)`, the cold cavity (decoupled, `g = 0`) by `(r0, t0)`. All
//! rates are in the same units; only ratios matter.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest imaginary part of `t - t0` accepted as "real" by the VBS tuning.
pub const RESONANCE_TOLERANCE: f64 = 1e-9;

/// Tolerance on the `r = 1 + t` identity when coefficients are supplied
/// externally.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

/// Physical parameters of one QD-cavity emitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityParams {
    /// Photon angular frequency ω.
    pub photon_freq: f64,
    /// Cavity mode frequency ω_c.
    pub cavity_freq: f64,
    /// X⁻ dipole transition frequency.
    pub dipole_freq: f64,
    /// Cavity field decay rate κ.
    pub kappa: f64,
    /// Side leakage rate κ_s.
    pub kappa_s: f64,
    /// Dipole decay rate γ.
    pub gamma: f64,
    /// Cavity-dipole coupling strength g.
    pub g: f64,
}

impl CavityParams {
    /// Resonant emitter with κ = 1 and the remaining rates given as ratios
    /// to κ.
    pub fn resonant(g: f64, kappa_s: f64, gamma: f64) -> Self {
        Self {
            photon_freq: 0.0,
            cavity_freq: 0.0,
            dipole_freq: 0.0,
            kappa: 1.0,
            kappa_s,
            gamma,
            g,
        }
    }

    /// Same as [`resonant`](Self::resonant) but with the photon detuned by
    /// `detuning` (in units of κ) from both the cavity and the dipole.
    pub fn detuned(g: f64, kappa_s: f64, gamma: f64, detuning: f64) -> Self {
        Self {
            photon_freq: detuning,
            ..Self::resonant(g, kappa_s, gamma)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.photon_freq,
            self.cavity_freq,
            self.dipole_freq,
            self.kappa,
            self.kappa_s,
            self.gamma,
            self.g,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        if self.kappa <= 0.0 {
            return Err(Error::InvalidParams(format!("kappa = {} must be > 0", self.kappa)));
        }
        if self.gamma <= 0.0 {
            return Err(Error::InvalidParams(format!("gamma = {} must be > 0", self.gamma)));
        }
        if self.kappa_s < 0.0 {
            return Err(Error::InvalidParams(format!(
                "kappa_s = {} must be >= 0",
                self.kappa_s
            )));
        }
        if self.g < 0.0 {
            return Err(Error::InvalidParams(format!("g = {} must be >= 0", self.g)));
        }
        Ok(())
    }

    /// Whether ω = ω_c = ω_X.
    pub fn is_resonant(&self) -> bool {
        self.photon_freq == self.cavity_freq && self.photon_freq == self.dipole_freq
    }
}

/// The hot/cold coefficient quadruple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteringCoefficients {
    pub r: Complex64,
    pub t: Complex64,
    pub r0: Complex64,
    pub t0: Complex64,
}

impl ScatteringCoefficients {
    /// Largest deviation from `r = 1 + t`, `r0 = 1 + t0`.
    pub fn identity_error(&self) -> f64 {
        let one = Complex64::new(1.0, 0.0);
        (self.r - one - self.t)
            .norm()
            .max((self.r0 - one - self.t0).norm())
    }

    /// Rejects quadruples that do not satisfy the `r = 1 + t` identities.
    pub fn check(&self) -> Result<()> {
        let err = self.identity_error();
        if err > IDENTITY_TOLERANCE || !err.is_finite() {
            return Err(Error::InconsistentCoefficients(err));
        }
        Ok(())
    }

    /// Amplitude carried by a successful pass through a QD block.
    pub fn success_amplitude(&self) -> Complex64 {
        self.t - self.t0
    }

    /// Amplitude sent back towards the source by a QD block.
    pub fn failure_amplitude(&self) -> Complex64 {
        self.r + self.t0
    }
}

fn transmission(params: &CavityParams, g: f64) -> Complex64 {
    let dipole = Complex64::new(params.gamma / 2.0, params.dipole_freq - params.photon_freq);
    let cavity = Complex64::new(
        params.kappa + params.kappa_s / 2.0,
        params.cavity_freq - params.photon_freq,
    );
    -params.kappa * dipole / (dipole * cavity + g * g)
}

/// Hot- and cold-cavity coefficients for the given emitter.
pub fn scattering_coefficients(params: &CavityParams) -> Result<ScatteringCoefficients> {
    params.validate()?;
    let one = Complex64::new(1.0, 0.0);
    let t = transmission(params, params.g);
    let t0 = transmission(params, 0.0);
    Ok(ScatteringCoefficients {
        r: one + t,
        t,
        r0: one + t0,
        t0,
    })
}

/// The strong-coupling, leakage-free limit `(r, t, r0, t0) = (1, 0, 0, -1)`.
pub fn ideal_coefficients() -> ScatteringCoefficients {
    ScatteringCoefficients {
        r: Complex64::new(1.0, 0.0),
        t: Complex64::new(0.0, 0.0),
        r0: Complex64::new(0.0, 0.0),
        t0: Complex64::new(-1.0, 0.0),
    }
}

/// Transmission of the variable beam splitter that balances the bypass arm
/// against a QD block: the real value `t - t0`, clamped to `[0, 1]`.
pub fn vbs_transmission(coeffs: &ScatteringCoefficients) -> Result<f64> {
    let diff = coeffs.success_amplitude();
    if diff.im.abs() > RESONANCE_TOLERANCE || !diff.re.is_finite() {
        return Err(Error::OffResonance(diff.im));
    }
    Ok(diff.re.clamp(0.0, 1.0))
}

/// Reflection amplitude paired with a VBS transmission `t`.
pub fn vbs_reflection(transmission: f64) -> f64 {
    (1.0 - transmission * transmission).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn micropillar() -> CavityParams {
        CavityParams::resonant(2.4, 0.05, 0.1)
    }

    #[test]
    fn zero_coupling_makes_hot_and_cold_coincide() {
        let c = scattering_coefficients(&CavityParams::detuned(0.0, 0.3, 0.2, 0.7)).unwrap();
        assert_eq!(c.t, c.t0);
        assert_eq!(c.r, c.r0);
    }

    #[test]
    fn cold_cavity_at_resonance_is_fully_transmitting() {
        for gamma in [0.01, 0.1, 0.5, 1.0] {
            let c = scattering_coefficients(&CavityParams::resonant(1.3, 0.0, gamma)).unwrap();
            assert_eq!(c.t0, Complex64::new(-1.0, 0.0));
            assert_eq!(c.r0, Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn strong_coupling_approaches_ideal_limit() {
        let c = scattering_coefficients(&CavityParams::resonant(1e4, 0.0, 0.1)).unwrap();
        assert!(c.t.norm() < 1e-9);
        assert!((c.r - 1.0).norm() < 1e-9);
        assert_eq!(c.t0, Complex64::new(-1.0, 0.0));
    }

    // Frozen from a 40-digit evaluation of the same closed form.
    #[test]
    fn micropillar_values_match_high_precision_reference() {
        let c = scattering_coefficients(&micropillar()).unwrap();
        assert!((c.t.re - -0.008_604_000_860_400_086).abs() < 1e-15);
        assert!((c.t0.re - -0.975_609_756_097_560_98).abs() < 1e-15);
        assert!(c.t.im.abs() < 1e-18 && c.t0.im.abs() < 1e-18);
        let vbs = vbs_transmission(&c).unwrap();
        assert!((vbs - 0.967_005_755_237_160_9).abs() < 1e-15);
    }

    #[test]
    fn detuned_values_match_high_precision_reference() {
        // ω_c - ω = -0.4, ω_X - ω = 0.25, κ_s = 0.3, γ = 0.2, g = 1.5.
        let p = CavityParams {
            photon_freq: 0.4,
            cavity_freq: 0.0,
            dipole_freq: 0.65,
            kappa: 1.0,
            kappa_s: 0.3,
            gamma: 0.2,
            g: 1.5,
        };
        let c = scattering_coefficients(&p).unwrap();
        assert!((c.t - Complex64::new(-0.050_244_552_681_932_837, -0.096_375_039_842_280_577)).norm() < 1e-15);
        assert!((c.t0 - Complex64::new(-0.775_716_694_772_344_01, -0.269_814_502_529_510_96)).norm() < 1e-15);

        // Same point with every rate doubled.
        let scaled = CavityParams {
            photon_freq: 0.8,
            cavity_freq: 0.0,
            dipole_freq: 1.3,
            kappa: 2.0,
            kappa_s: 0.6,
            gamma: 0.4,
            g: 3.0,
        };
        let s = scattering_coefficients(&scaled).unwrap();
        assert!((s.t - c.t).norm() < 1e-15 && (s.t0 - c.t0).norm() < 1e-15);
        assert!(matches!(vbs_transmission(&c), Err(Error::OffResonance(_))));
    }

    #[test]
    fn ideal_fixture() {
        let c = ideal_coefficients();
        assert_eq!(c.identity_error(), 0.0);
        assert_eq!(vbs_transmission(&c).unwrap(), 1.0);
        assert_eq!(vbs_reflection(1.0), 0.0);
        assert_eq!(c.failure_amplitude(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn vbs_is_closed_without_coupling() {
        let c = scattering_coefficients(&CavityParams::resonant(0.0, 0.2, 0.1)).unwrap();
        assert_eq!(vbs_transmission(&c).unwrap(), 0.0);
    }

    #[test]
    fn rejects_unphysical_params() {
        let base = micropillar();
        for bad in [
            CavityParams { kappa: 0.0, ..base },
            CavityParams { gamma: -0.1, ..base },
            CavityParams { gamma: 0.0, ..base },
            CavityParams { kappa_s: -1e-3, ..base },
            CavityParams { g: -1.0, ..base },
            CavityParams { g: f64::NAN, ..base },
        ] {
            assert!(matches!(scattering_coefficients(&bad), Err(Error::InvalidParams(_))));
        }
    }

    #[test]
    fn mismatched_quadruple_is_rejected() {
        let mut c = ideal_coefficients();
        c.r = Complex64::new(0.9, 0.0);
        assert!(matches!(c.check(), Err(Error::InconsistentCoefficients(_))));
    }

    #[test]
    fn transmission_falls_monotonically_with_coupling() {
        let ts: Vec<f64> = [0.5, 1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|&g| scattering_coefficients(&CavityParams::resonant(g, 0.0, 0.1)).unwrap().t.norm())
            .collect();
        assert!(ts.windows(2).all(|w| w[1] < w[0]), "{ts:?}");
    }

    #[test]
    fn near_lossless_cavity_conserves_probability() {
        let c = scattering_coefficients(&CavityParams::resonant(1.0, 0.0, 1e-6)).unwrap();
        let deficit = 1.0 - (c.r.norm_sqr() + c.t.norm_sqr());
        assert!((0.0..=1e-5).contains(&deficit), "{deficit}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn identities_and_bounds_hold(
            dc in -5.0f64..5.0,
            dx in -5.0f64..5.0,
            gamma in 0.01f64..1.0,
            g in 0.0f64..5.0,
            kappa_s in 0.0f64..2.0,
        ) {
            let p = CavityParams {
                photon_freq: 0.0,
                cavity_freq: dc,
                dipole_freq: dx,
                kappa: 1.0,
                kappa_s,
                gamma,
                g,
            };
            let c = scattering_coefficients(&p).unwrap();
            prop_assert!(c.identity_error() <= 1e-14);
            prop_assert!(c.t.norm() <= 1.0 && c.t0.norm() <= 1.0);
            prop_assert!(c.r.norm_sqr() + c.t.norm_sqr() <= 1.0 + 1e-12);
            prop_assert!(c.r0.norm_sqr() + c.t0.norm_sqr() <= 1.0 + 1e-12);
        }
    }
}
