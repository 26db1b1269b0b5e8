//! Closed-form output states of the four devices, built on the registry
//! of the protocol that produced a branch.

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::state::{BasisLabel, Channel, HyperState, PhotonSlot, Polarization, Sign, Spin, C64};

use super::protocol::{Branch, Outcome, Path, Protocol};
use super::{DeviceConfig, DeviceInputs, Qubit};

fn live(reg: &Registry, pol: Polarization, mode: &str) -> Result<PhotonSlot> {
    Ok(PhotonSlot::Live {
        pol,
        mode: reg.mode(mode)?,
    })
}

fn pols(q: &Qubit) -> [(Polarization, C64); 2] {
    [(Polarization::R, q.a), (Polarization::L, q.b)]
}

fn outcome(branch: &Branch, label: &str) -> Result<Outcome> {
    branch
        .outcome(label)
        .ok_or_else(|| Error::Protocol(format!("branch has no `{label}` outcome")))
}

/// Target state for one successful branch (unnormalized).
pub fn target_state(cfg: &DeviceConfig, protocol: &Protocol, branch: &Branch) -> Result<HyperState> {
    let reg = protocol.registry.clone();
    let photons = protocol.photon_names.len();
    let mut terms: Vec<(BasisLabel, C64)> = Vec::new();
    match &cfg.inputs {
        DeviceInputs::PTransistor { polarization, sources } => {
            // α|R…R⟩ + β|L…L⟩ on the source photons, product in space.
            let Outcome::Sign(sign) = outcome(branch, "gate")? else {
                return Err(Error::Protocol("gate outcome is not ±".into()));
            };
            let sink = reg.sink(if sign == Sign::Plus { "D1" } else { "D2" })?;
            let gate = PhotonSlot::Terminal {
                sink,
                channel: Channel::Outcome(sign),
            };
            let n = sources.len();
            for (pol, pa) in pols(polarization) {
                for mask in 0..(1usize << n) {
                    let mut slots = vec![gate];
                    let mut amp = pa;
                    for (i, src) in sources.iter().enumerate() {
                        let k = i + 1;
                        let (mode, a) = if mask >> i & 1 == 0 {
                            (format!("c{k}"), src.a)
                        } else {
                            (format!("d{k}"), src.b)
                        };
                        slots.push(live(&reg, pol, &mode)?);
                        amp *= a;
                    }
                    terms.push((
                        BasisLabel {
                            photons: slots,
                            spins: vec![None],
                        },
                        amp,
                    ));
                }
            }
        }
        DeviceInputs::STransistor {
            polarization,
            spatial,
            sources,
        } => {
            // γ|c…c⟩ + δ|d…d⟩ on the source photons, product in
            // polarization. The gate photon stays where it was found.
            let gate_mode = match outcome(branch, "gate")? {
                Outcome::Path(Path::First) => "a",
                Outcome::Path(Path::Second) => "b",
                Outcome::Sign(_) => return Err(Error::Protocol("gate outcome is not a path".into())),
            };
            let n = sources.len();
            for (gpol, ga) in pols(polarization) {
                for (rail, ra) in [("c", spatial.a), ("d", spatial.b)] {
                    for mask in 0..(1usize << n) {
                        let mut slots = vec![live(&reg, gpol, gate_mode)?];
                        let mut amp = ga * ra;
                        for (i, src) in sources.iter().enumerate() {
                            let (pol, a) = if mask >> i & 1 == 0 {
                                (Polarization::R, src.a)
                            } else {
                                (Polarization::L, src.b)
                            };
                            slots.push(live(&reg, pol, &format!("{rail}{}", i + 1))?);
                            amp *= a;
                        }
                        terms.push((
                            BasisLabel {
                                photons: slots,
                                spins: vec![None],
                            },
                            amp,
                        ));
                    }
                }
            }
        }
        DeviceInputs::HyperRouter {
            polarization,
            spatial,
            control,
        } => {
            // γ-branch leaves on the left with spin up, η-branch on the
            // right with spin down and a relative minus sign.
            for (port, spin, sa) in [("left", Spin::Up, control.a), ("right", Spin::Down, -control.b)] {
                for (pol, pa) in pols(polarization) {
                    for (x, xa) in [("a", spatial.a), ("b", spatial.b)] {
                        terms.push((
                            BasisLabel {
                                photons: vec![live(&reg, pol, &format!("{x}.{port}"))?],
                                spins: vec![Some(spin)],
                            },
                            sa * pa * xa,
                        ));
                    }
                }
            }
        }
        DeviceInputs::HyperDram {
            polarization,
            spatial,
            spin1,
            spin2,
        } => {
            let phase = if cfg.n.is_multiple_of(2) { -1.0 } else { 1.0 };
            for (pol, pa) in pols(polarization) {
                for (x, xa) in [("a", spatial.a), ("b", spatial.b)] {
                    for (s1, a1) in [(Spin::Up, spin1.a), (Spin::Down, spin1.b)] {
                        for (s2, a2) in [(Spin::Up, spin2.a), (Spin::Down, spin2.b)] {
                            terms.push((
                                BasisLabel {
                                    photons: vec![live(&reg, pol, &format!("{x}.out"))?],
                                    spins: vec![Some(s1), Some(s2)],
                                },
                                pa * xa * a1 * a2 * phase,
                            ));
                        }
                    }
                }
            }
        }
    }
    HyperState::from_terms(reg, photons, terms)
}
