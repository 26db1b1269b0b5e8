//! Sparse amplitude map over photons, QD spins and terminal sinks.
//!
//! States are kept unnormalized on purpose: the squared norm of the live
//! part is the probability of the history that produced it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::registry::{ModeId, Registry, SinkId, SinkKind};

pub type C64 = Complex64;

/// Amplitudes smaller than this are dropped after every operation.
pub const PRUNE_THRESHOLD: f64 = 1e-15;

/// Tolerance on the normalization of input specs.
pub const SPEC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarization {
    R,
    L,
}

impl Polarization {
    pub fn flip(self) -> Self {
        match self {
            Polarization::R => Polarization::L,
            Polarization::L => Polarization::R,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    pub fn flip(self) -> Self {
        match self {
            Spin::Up => Spin::Down,
            Spin::Down => Spin::Up,
        }
    }
}

/// Outcome of a measurement in the `(|0⟩ ± |1⟩)/√2` basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    /// Overlap `⟨±|1⟩` up to the common `1/√2`.
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        })
    }
}

/// How a photon ended up in a sink. Distinct channels are orthogonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    /// Absorbed from a live mode with the given polarization.
    Absorbed { pol: Polarization, mode: ModeId },
    /// Consumed by a ± measurement.
    Outcome(Sign),
    /// Leaked out of a cavity during the `pass`-th scatter at `port`.
    Leak { port: ModeId, hot: bool, pass: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PhotonSlot {
    Live { pol: Polarization, mode: ModeId },
    Terminal { sink: SinkId, channel: Channel },
}

impl PhotonSlot {
    pub fn live(&self) -> Option<(Polarization, ModeId)> {
        match *self {
            PhotonSlot::Live { pol, mode } => Some((pol, mode)),
            PhotonSlot::Terminal { .. } => None,
        }
    }

    pub fn sink(&self) -> Option<SinkId> {
        match *self {
            PhotonSlot::Terminal { sink, .. } => Some(sink),
            PhotonSlot::Live { .. } => None,
        }
    }
}

/// One basis vector. `None` marks a QD whose spin has been measured out.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BasisLabel {
    pub photons: Vec<PhotonSlot>,
    pub spins: Vec<Option<Spin>>,
}

/// Single-photon input: polarization amplitudes `(R, L)` times a spatial
/// superposition.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonSpec {
    pub polarization: (C64, C64),
    pub modes: Vec<(String, C64)>,
}

impl PhotonSpec {
    pub fn new(r: C64, l: C64, modes: &[(&str, C64)]) -> Self {
        Self {
            polarization: (r, l),
            modes: modes.iter().map(|(m, a)| (m.to_string(), *a)).collect(),
        }
    }

    /// `|R⟩` in a single mode.
    pub fn r(mode: &str) -> Self {
        Self::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0), &[(mode, C64::new(1.0, 0.0))])
    }

    fn validate(&self) -> Result<()> {
        let (r, l) = self.polarization;
        check_norm("photon polarization", r.norm_sqr() + l.norm_sqr())?;
        check_norm(
            "photon spatial amplitudes",
            self.modes.iter().map(|(_, a)| a.norm_sqr()).sum(),
        )?;
        let mut seen = BTreeSet::new();
        for (m, _) in &self.modes {
            if !seen.insert(m.as_str()) {
                return Err(Error::DuplicateModeWrite(m.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinSpec {
    pub up: C64,
    pub down: C64,
}

impl SpinSpec {
    pub fn new(up: C64, down: C64) -> Self {
        Self { up, down }
    }

    pub fn up() -> Self {
        Self::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0))
    }
}

fn check_norm(what: &str, norm: f64) -> Result<()> {
    if (norm - 1.0).abs() > SPEC_TOLERANCE || !norm.is_finite() {
        return Err(Error::NotNormalized {
            what: what.to_string(),
            norm,
        });
    }
    Ok(())
}

/// Post-selected result of a heralding step.
#[derive(Debug, Clone)]
pub struct HeraldedOutcome {
    /// Normalized surviving state, absent when nothing survives.
    pub state: Option<HyperState>,
    pub success_probability: f64,
    /// Probability absorbed by each heralding sink, keyed by sink name.
    pub sinks: BTreeMap<String, f64>,
    /// Probability lost to side leakage and dipole decay.
    pub unaccounted_loss: f64,
}

impl HeraldedOutcome {
    pub fn is_success(&self) -> bool {
        self.state.is_some()
    }

    /// `success + Σ sinks + loss`, which should be 1.
    pub fn total(&self) -> f64 {
        self.success_probability + self.sinks.values().sum::<f64>() + self.unaccounted_loss
    }
}

#[derive(Debug, Clone)]
pub struct HyperState {
    registry: Arc<Registry>,
    terms: BTreeMap<BasisLabel, C64>,
    frozen: Vec<bool>,
    passes: BTreeMap<ModeId, u32>,
}

impl HyperState {
    /// Photon-free state holding only the QD spins.
    pub fn vacuum(registry: Arc<Registry>, spins: &[SpinSpec]) -> Result<Self> {
        if spins.len() != registry.qd_count() {
            return Err(Error::MismatchedSpace(format!(
                "{} spin specs for {} quantum dots",
                spins.len(),
                registry.qd_count()
            )));
        }
        let mut terms = BTreeMap::new();
        terms.insert(
            BasisLabel {
                photons: Vec::new(),
                spins: Vec::new(),
            },
            C64::new(1.0, 0.0),
        );
        for spin in spins {
            check_norm("spin", spin.up.norm_sqr() + spin.down.norm_sqr())?;
            let mut next = BTreeMap::new();
            for (label, amp) in terms {
                for (s, a) in [(Spin::Up, spin.up), (Spin::Down, spin.down)] {
                    let mut l = label.clone();
                    l.spins.push(Some(s));
                    next.insert(l, amp * a);
                }
            }
            terms = next;
        }
        let mut state = Self {
            registry,
            terms,
            frozen: Vec::new(),
            passes: BTreeMap::new(),
        };
        state.prune();
        Ok(state)
    }

    /// Product state of the given photons and spins.
    pub fn make_state(
        registry: Arc<Registry>,
        photons: &[PhotonSpec],
        spins: &[SpinSpec],
    ) -> Result<Self> {
        let mut state = Self::vacuum(registry, spins)?;
        for p in photons {
            state.inject(p)?;
        }
        Ok(state)
    }

    /// Builds a state from explicit terms. Used for closed-form targets.
    pub fn from_terms(
        registry: Arc<Registry>,
        photon_count: usize,
        terms: impl IntoIterator<Item = (BasisLabel, C64)>,
    ) -> Result<Self> {
        let mut map: BTreeMap<BasisLabel, C64> = BTreeMap::new();
        for (label, amp) in terms {
            if label.photons.len() != photon_count || label.spins.len() != registry.qd_count() {
                return Err(Error::MismatchedSpace("label shape".into()));
            }
            *map.entry(label).or_default() += amp;
        }
        let mut state = Self {
            registry,
            terms: map,
            frozen: vec![false; photon_count],
            passes: BTreeMap::new(),
        };
        state.prune();
        Ok(state)
    }

    /// Adds one photon in product with the current state; returns its index.
    pub fn inject(&mut self, spec: &PhotonSpec) -> Result<usize> {
        spec.validate()?;
        let mut slots = Vec::new();
        for (mode, a) in &spec.modes {
            let id = self.registry.mode(mode)?;
            for (pol, p) in [(Polarization::R, spec.polarization.0), (Polarization::L, spec.polarization.1)] {
                slots.push((PhotonSlot::Live { pol, mode: id }, p * a));
            }
        }
        let mut next = BTreeMap::new();
        for (label, amp) in std::mem::take(&mut self.terms) {
            for (slot, a) in &slots {
                let mut l = label.clone();
                l.photons.push(*slot);
                next.insert(l, amp * a);
            }
        }
        self.terms = next;
        self.frozen.push(false);
        self.prune();
        Ok(self.frozen.len() - 1)
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn terms(&self) -> impl Iterator<Item = (&BasisLabel, &C64)> {
        self.terms.iter()
    }

    pub fn amplitude(&self, label: &BasisLabel) -> C64 {
        self.terms.get(label).copied().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn photon_count(&self) -> usize {
        self.frozen.len()
    }

    pub fn qd_count(&self) -> usize {
        self.registry.qd_count()
    }

    pub fn is_frozen(&self, photon: usize) -> bool {
        self.frozen.get(photon).copied().unwrap_or(false)
    }

    /// Marks a photon as retained: no element may act on it afterwards.
    pub fn freeze(&mut self, photon: usize) -> Result<()> {
        let f = self
            .frozen
            .get_mut(photon)
            .ok_or(Error::BadPhotonIndex(photon))?;
        *f = true;
        Ok(())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.terms.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn scale(&mut self, factor: C64) {
        for a in self.terms.values_mut() {
            *a *= factor;
        }
        self.prune();
    }

    /// Copy rescaled to unit norm.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sqr();
        if n <= 0.0 {
            return Err(Error::ZeroProbability);
        }
        let mut s = self.clone();
        let k = 1.0 / n.sqrt();
        for a in s.terms.values_mut() {
            *a *= k;
        }
        Ok(s)
    }

    pub fn prune(&mut self) {
        self.terms.retain(|_, a| a.norm() >= PRUNE_THRESHOLD);
    }

    fn check_space(&self, other: &Self) -> Result<()> {
        if !Arc::ptr_eq(&self.registry, &other.registry) && *self.registry != *other.registry {
            return Err(Error::MismatchedSpace("different registries".into()));
        }
        if self.photon_count() != other.photon_count() {
            return Err(Error::MismatchedSpace(format!(
                "{} vs {} photons",
                self.photon_count(),
                other.photon_count()
            )));
        }
        Ok(())
    }

    /// `⟨self|other⟩`.
    pub fn inner_product(&self, other: &Self) -> Result<C64> {
        self.check_space(other)?;
        let (small, large, conj_small) = if self.terms.len() <= other.terms.len() {
            (self, other, true)
        } else {
            (other, self, false)
        };
        let mut acc = C64::new(0.0, 0.0);
        for (label, a) in &small.terms {
            if let Some(b) = large.terms.get(label) {
                acc += if conj_small { a.conj() * b } else { b.conj() * a };
            }
        }
        Ok(acc)
    }

    /// `|⟨target|self⟩|²` after normalizing both sides.
    pub fn fidelity(&self, target: &Self) -> Result<f64> {
        let overlap = target.inner_product(self)?;
        let norms = self.norm_sqr() * target.norm_sqr();
        if norms <= 0.0 {
            return Err(Error::ZeroProbability);
        }
        Ok((overlap.norm_sqr() / norms).clamp(0.0, 1.0))
    }

    /// Rebuilds the term map through `f`, which pushes the images of one
    /// basis term. Images of different terms are summed.
    pub fn transform<F>(&mut self, mut f: F) -> Result<()>
    where
        F: FnMut(&BasisLabel, C64, &mut Vec<(BasisLabel, C64)>) -> Result<()>,
    {
        let mut next: BTreeMap<BasisLabel, C64> = BTreeMap::new();
        let mut buf = Vec::new();
        for (label, amp) in &self.terms {
            buf.clear();
            f(label, *amp, &mut buf)?;
            for (l, a) in buf.drain(..) {
                *next.entry(l).or_default() += a;
            }
        }
        self.terms = next;
        self.prune();
        Ok(())
    }

    /// Applies a single-photon map to whichever photon is live in one of
    /// `inputs`. `f` receives the photon's polarization and mode and the
    /// spin of `qd` (if given) and returns the output slots. Terms with no
    /// photon in `inputs` pass through untouched.
    pub fn map_photon<F>(&mut self, inputs: &[ModeId], qd: Option<usize>, mut f: F) -> Result<()>
    where
        F: FnMut(Polarization, ModeId, Option<Spin>) -> Result<Vec<(PhotonSlot, C64)>>,
    {
        if let Some(q) = qd {
            if q >= self.qd_count() {
                return Err(Error::BadQdIndex(q));
            }
        }
        let registry = self.registry.clone();
        let frozen = self.frozen.clone();
        self.transform(|label, amp, out| {
            let mut hit = None;
            for (i, slot) in label.photons.iter().enumerate() {
                if let PhotonSlot::Live { mode, .. } = slot {
                    if inputs.contains(mode) {
                        if hit.is_some() {
                            return Err(Error::AmbiguousPhoton(registry.mode_name(*mode).into()));
                        }
                        hit = Some(i);
                    }
                }
            }
            let Some(i) = hit else {
                out.push((label.clone(), amp));
                return Ok(());
            };
            let PhotonSlot::Live { pol, mode } = label.photons[i] else {
                unreachable!()
            };
            if frozen[i] {
                return Err(Error::Protocol(format!(
                    "element acts on frozen photon {i} in mode `{}`",
                    registry.mode_name(mode)
                )));
            }
            let spin = qd.and_then(|q| label.spins[q]);
            for (slot, a) in f(pol, mode, spin)? {
                let mut l = label.clone();
                l.photons[i] = slot;
                out.push((l, amp * a));
            }
            Ok(())
        })
    }

    /// Applies a map that only touches spins.
    pub fn map_spins<F>(&mut self, qd: usize, mut f: F) -> Result<()>
    where
        F: FnMut(Spin) -> (Spin, C64),
    {
        if qd >= self.qd_count() {
            return Err(Error::BadQdIndex(qd));
        }
        self.transform(|label, amp, out| {
            let Some(s) = label.spins[qd] else {
                return Err(Error::Protocol(format!("spin of QD {qd} already measured")));
            };
            let (s2, a) = f(s);
            let mut l = label.clone();
            l.spins[qd] = Some(s2);
            out.push((l, amp * a));
            Ok(())
        })
    }

    /// Next scatter counter for a QD port; makes leaks from different
    /// passes orthogonal.
    pub fn next_pass(&mut self, port: ModeId) -> u32 {
        let p = self.passes.entry(port).or_insert(0);
        *p += 1;
        *p
    }

    /// Index of the photon occupying `mode` in any term, if any.
    pub fn locate_photon(&self, mode: ModeId) -> Result<Option<usize>> {
        let mut found = None;
        for label in self.terms.keys() {
            for (i, slot) in label.photons.iter().enumerate() {
                if slot.live().map(|(_, m)| m) == Some(mode) {
                    match found {
                        None => found = Some(i),
                        Some(j) if j != i => {
                            return Err(Error::AmbiguousPhoton(self.registry.mode_name(mode).into()))
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(found)
    }

    /// Removes every term with a photon absorbed in one of `sinks` and
    /// returns the probability collected per sink.
    pub fn drain(&mut self, sinks: &BTreeSet<SinkId>) -> BTreeMap<SinkId, f64> {
        let mut ledger = BTreeMap::new();
        self.terms.retain(|label, amp| {
            let hit = label
                .photons
                .iter()
                .find_map(|s| s.sink().filter(|k| sinks.contains(k)));
            match hit {
                Some(k) => {
                    *ledger.entry(k).or_insert(0.0) += amp.norm_sqr();
                    false
                }
                None => true,
            }
        });
        ledger
    }

    /// Probability of each distinct terminal slot inside `sinks`, grouped
    /// by photon. Ordered canonically.
    pub fn terminal_groups(&self, sinks: &BTreeSet<SinkId>) -> BTreeMap<(usize, PhotonSlot), f64> {
        let mut groups = BTreeMap::new();
        for (label, amp) in &self.terms {
            for (i, slot) in label.photons.iter().enumerate() {
                if slot.sink().is_some_and(|k| sinks.contains(&k)) {
                    *groups.entry((i, *slot)).or_insert(0.0) += amp.norm_sqr();
                    break;
                }
            }
        }
        groups
    }

    /// Keeps only the terms whose photon `photon` sits in `slot`.
    pub fn collapse_onto(&mut self, photon: usize, slot: PhotonSlot) -> Result<()> {
        if photon >= self.photon_count() {
            return Err(Error::BadPhotonIndex(photon));
        }
        self.terms.retain(|l, _| l.photons[photon] == slot);
        Ok(())
    }

    /// Drops the most recently injected photon. All remaining terms must
    /// agree on its slot (for instance after a collapse).
    pub fn discard_photon(&mut self, photon: usize) -> Result<()> {
        if photon + 1 != self.photon_count() {
            return Err(Error::BadPhotonIndex(photon));
        }
        let mut slots = self.terms.keys().map(|l| l.photons[photon]);
        if let Some(first) = slots.next() {
            if slots.any(|s| s != first) {
                return Err(Error::Protocol(
                    "cannot discard a photon that is still in superposition".into(),
                ));
            }
        }
        self.transform(|label, amp, out| {
            let mut l = label.clone();
            l.photons.pop();
            out.push((l, amp));
            Ok(())
        })?;
        self.frozen.pop();
        Ok(())
    }

    /// Projects QD `qd` onto `|±⟩` without renormalizing and removes it
    /// from the register.
    pub fn project_spin(&mut self, qd: usize, sign: Sign) -> Result<()> {
        if qd >= self.qd_count() {
            return Err(Error::BadQdIndex(qd));
        }
        let k = std::f64::consts::FRAC_1_SQRT_2;
        self.transform(|label, amp, out| {
            let f = match label.spins[qd] {
                Some(Spin::Up) => k,
                Some(Spin::Down) => k * sign.factor(),
                None => return Err(Error::Protocol(format!("spin of QD {qd} already measured"))),
            };
            let mut l = label.clone();
            l.spins[qd] = None;
            out.push((l, amp * f));
            Ok(())
        })
    }

    /// Projects the photon in `mode` onto `(|R⟩ ± |L⟩)/√2`, moving it into
    /// `sink`. Terms where that photon is elsewhere are removed; their
    /// probability is returned.
    pub fn project_photon(&mut self, mode: ModeId, sign: Sign, sink: SinkId) -> Result<f64> {
        let photon = self
            .locate_photon(mode)?
            .ok_or_else(|| Error::NoPhotonInMode(self.registry.mode_name(mode).into()))?;
        let k = std::f64::consts::FRAC_1_SQRT_2;
        let mut missed = 0.0;
        self.transform(|label, amp, out| {
            match label.photons[photon] {
                PhotonSlot::Live { pol, mode: m } if m == mode => {
                    let f = match pol {
                        Polarization::R => k,
                        Polarization::L => k * sign.factor(),
                    };
                    let mut l = label.clone();
                    l.photons[photon] = PhotonSlot::Terminal {
                        sink,
                        channel: Channel::Outcome(sign),
                    };
                    out.push((l, amp * f));
                }
                _ => missed += amp.norm_sqr(),
            }
            Ok(())
        })?;
        Ok(missed)
    }

    /// Keeps the terms where the photon found in `first`/`second` occupies
    /// `keep`. Returns the probability of terms where it is in neither.
    pub fn project_path(&mut self, first: ModeId, second: ModeId, keep: ModeId) -> Result<f64> {
        let photon = match self.locate_photon(first)? {
            Some(p) => p,
            None => self
                .locate_photon(second)?
                .ok_or_else(|| Error::NoPhotonInMode(self.registry.mode_name(first).into()))?,
        };
        let mut missed = 0.0;
        self.terms.retain(|label, amp| match label.photons.get(photon).and_then(|s| s.live()) {
            Some((_, m)) if m == keep => true,
            Some((_, m)) if m == first || m == second => false,
            _ => {
                missed += amp.norm_sqr();
                false
            }
        });
        Ok(missed)
    }

    /// Heralds on silence of `no_click` sinks. Cavity-loss sinks are
    /// drained into `unaccounted_loss` at the same time.
    pub fn herald(&self, no_click: &[&str]) -> Result<HeraldedOutcome> {
        let mut ids = BTreeSet::new();
        for name in no_click {
            ids.insert(self.registry.sink(name)?);
        }
        let loss: BTreeSet<SinkId> = self.registry.sinks_of_kind(SinkKind::CavityLoss).into_iter().collect();
        let mut s = self.clone();
        let lost: f64 = s.drain(&loss).values().sum();
        let ledger = s.drain(&ids);
        let mut sinks: BTreeMap<String, f64> = ids
            .iter()
            .filter(|id| !loss.contains(id))
            .map(|id| (self.registry.sink_name(*id).to_string(), 0.0))
            .collect();
        for (id, p) in ledger {
            *sinks.entry(self.registry.sink_name(id).to_string()).or_default() += p;
        }
        let success = s.norm_sqr();
        let state = if success > 0.0 { Some(s.normalized()?) } else { None };
        Ok(HeraldedOutcome {
            state,
            success_probability: success,
            sinks,
            unaccounted_loss: lost,
        })
    }

    pub fn label_string(&self, label: &BasisLabel) -> String {
        let reg = &self.registry;
        let mut s = String::new();
        for (i, slot) in label.photons.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            match *slot {
                PhotonSlot::Live { pol, mode } => {
                    let _ = write!(s, "{pol:?}@{}", reg.mode_name(mode));
                }
                PhotonSlot::Terminal { sink, channel } => {
                    let _ = write!(s, "{}(", reg.sink_name(sink));
                    match channel {
                        Channel::Absorbed { pol, mode } => {
                            let _ = write!(s, "{pol:?}@{}", reg.mode_name(mode));
                        }
                        Channel::Outcome(sign) => {
                            let _ = write!(s, "{sign}");
                        }
                        Channel::Leak { port, hot, pass } => {
                            let heat = if hot { "hot" } else { "cold" };
                            let _ = write!(s, "{heat}:{}:{pass}", reg.mode_name(port));
                        }
                    }
                    s.push(')');
                }
            }
        }
        s.push('|');
        for (q, spin) in label.spins.iter().enumerate() {
            if q > 0 {
                s.push(',');
            }
            let _ = write!(
                s,
                "{}={}",
                reg.qd_name(q).unwrap_or("?"),
                match spin {
                    Some(Spin::Up) => "up",
                    Some(Spin::Down) => "down",
                    None => "x",
                }
            );
        }
        s
    }

    /// One line per term, `<label> <re> <im>`, in canonical order.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (label, amp) in &self.terms {
            let _ = writeln!(out, "{} {:.16e} {:.16e}", self.label_string(label), amp.re, amp.im);
        }
        out
    }

    /// Amplitudes keyed by their printable label.
    pub fn amplitudes_by_name(&self) -> BTreeMap<String, C64> {
        self.terms
            .iter()
            .map(|(l, a)| (self.label_string(l), *a))
            .collect()
    }

    /// Largest absolute amplitude difference, matching terms by label
    /// text. Works across states built from different registries.
    pub fn max_amplitude_deviation(&self, other: &Self) -> f64 {
        let a = self.amplitudes_by_name();
        let b = other.amplitudes_by_name();
        let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
        keys.into_iter()
            .map(|k| {
                let x = a.get(k).copied().unwrap_or_default();
                let y = b.get(k).copied().unwrap_or_default();
                (x - y).norm()
            })
            .fold(0.0, f64::max)
    }
}

/// `⟨x|y⟩`.
pub fn inner_product(x: &HyperState, y: &HyperState) -> Result<C64> {
    x.inner_product(y)
}

/// `|⟨target|out⟩|²`.
pub fn fidelity(out: &HyperState, target: &HyperState) -> Result<f64> {
    out.fidelity(target)
}

/// Free-function form of [`HyperState::make_state`].
pub fn make_state(
    registry: Arc<Registry>,
    photons: &[PhotonSpec],
    spins: &[SpinSpec],
) -> Result<HyperState> {
    HyperState::make_state(registry, photons, spins)
}

/// Free-function form of [`HyperState::herald`].
pub fn herald(s: &HyperState, no_click: &[&str]) -> Result<HeraldedOutcome> {
    s.herald(no_click)
}
