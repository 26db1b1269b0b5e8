//! Brute-force reference implementation.
//!
//! The state is a dense tensor with one axis per photon and one per QD
//! spin. A photon axis carries every single-photon level the circuit has
//! reached so far, sink channels included, so lossy scattering is an
//! isometry into a larger space. Each element is written out as an
//! explicit matrix over the affected axes and applied by matrix-vector
//! products to every photon; nothing is frozen and nothing is pruned
//! except levels that are exactly empty.
//!
//! Only the circuit description and the basis-label vocabulary are shared
//! with the sparse path. The element physics, including the QD scattering
//! table, is written independently here.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

use crate::coeffs::ScatteringCoefficients;
use crate::devices::protocol::{Branch, Outcome, Path, Protocol, RunRecord, StageProbability, Step};
use crate::devices::{assemble, build_protocol, feed_forward_parity, DeviceConfig, DeviceResult, OutcomePolicy};
use crate::devices::{FeedForward, ParityCorrection};
use crate::elements::{loss_sink_name, Element, HwpAngle, ZTarget};
use crate::error::{Error, Result};
use crate::registry::{ModeId, Registry, SinkId, SinkKind};
use crate::state::{BasisLabel, Channel, HyperState, PhotonSlot, Polarization, Sign, Spin, C64};

/// Largest tensor the oracle will build.
pub const MAX_DIMENSION: usize = 1 << 16;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, PartialEq)]
enum Axis {
    Photon(Vec<PhotonSlot>),
    /// `true` once measured: the axis then has a single, unlabeled level.
    Spin(bool),
}

impl Axis {
    fn dim(&self) -> usize {
        match self {
            Axis::Photon(levels) => levels.len(),
            Axis::Spin(false) => 2,
            Axis::Spin(true) => 1,
        }
    }
}

/// Dense tensor; axis 0..qd are spins, the rest photons in order.
#[derive(Debug, Clone)]
struct Dense {
    registry: Arc<Registry>,
    qds: usize,
    axes: Vec<Axis>,
    data: Vec<C64>,
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

fn check_dim(d: usize) -> Result<usize> {
    if d > MAX_DIMENSION {
        Err(Error::DimensionOverflow(d))
    } else {
        Ok(d)
    }
}

/// Decomposes a flat index into per-axis indices.
fn unravel(mut i: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for k in (0..dims.len()).rev() {
        idx[k] = i % dims[k];
        i /= dims[k];
    }
    idx
}

impl Dense {
    fn new(registry: Arc<Registry>, spins: &[(C64, C64)]) -> Self {
        let mut data = vec![C64::new(1.0, 0.0)];
        for &(up, down) in spins {
            data = data.iter().flat_map(|a| [a * up, a * down]).collect();
        }
        Dense {
            registry,
            qds: spins.len(),
            axes: vec![Axis::Spin(false); spins.len()],
            data,
        }
    }

    fn dims(&self) -> Vec<usize> {
        self.axes.iter().map(Axis::dim).collect()
    }

    fn photon_axis(&self, photon: usize) -> usize {
        self.qds + photon
    }

    fn photon_count(&self) -> usize {
        self.axes.len() - self.qds
    }

    fn levels(&self, photon: usize) -> &[PhotonSlot] {
        match &self.axes[self.photon_axis(photon)] {
            Axis::Photon(l) => l,
            Axis::Spin(_) => unreachable!(),
        }
    }

    fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Applies `m` (row-major, `new_dims` product by old product) to the
    /// listed axes, which then take the dimensions `new_dims`.
    fn apply(&mut self, targets: &[usize], new_axes: Vec<Axis>, m: &[C64]) -> Result<()> {
        let dims = self.dims();
        let old_sub: usize = targets.iter().map(|&a| dims[a]).product();
        let new_sub: usize = new_axes.iter().map(Axis::dim).product();
        debug_assert_eq!(m.len(), old_sub * new_sub);
        let mut out_axes = self.axes.clone();
        for (&a, ax) in targets.iter().zip(new_axes) {
            out_axes[a] = ax;
        }
        let out_dims: Vec<usize> = out_axes.iter().map(Axis::dim).collect();
        let total = check_dim(out_dims.iter().product())?;
        let (in_st, out_st) = (strides(&dims), strides(&out_dims));
        let rest: Vec<usize> = (0..dims.len()).filter(|a| !targets.contains(a)).collect();
        let rest_dims: Vec<usize> = rest.iter().map(|&a| dims[a]).collect();
        let rest_total: usize = rest_dims.iter().product();
        let target_dims: Vec<usize> = targets.iter().map(|&a| dims[a]).collect();
        let target_out_dims: Vec<usize> = targets.iter().map(|&a| out_dims[a]).collect();
        // Offsets of every sub-index inside the full tensors.
        let in_off: Vec<usize> = (0..old_sub)
            .map(|j| {
                let idx = unravel(j, &target_dims);
                targets.iter().zip(idx).map(|(&a, i)| i * in_st[a]).sum()
            })
            .collect();
        let out_off: Vec<usize> = (0..new_sub)
            .map(|j| {
                let idx = unravel(j, &target_out_dims);
                targets.iter().zip(idx).map(|(&a, i)| i * out_st[a]).sum()
            })
            .collect();
        let mut data = vec![ZERO; total];
        let mut v = vec![ZERO; old_sub];
        for r in 0..rest_total {
            let idx = unravel(r, &rest_dims);
            let (base_in, base_out): (usize, usize) = rest
                .iter()
                .zip(&idx)
                .fold((0, 0), |(bi, bo), (&a, &i)| (bi + i * in_st[a], bo + i * out_st[a]));
            for j in 0..old_sub {
                v[j] = self.data[base_in + in_off[j]];
            }
            for (row, &off) in out_off.iter().enumerate() {
                let mut acc = ZERO;
                for (j, x) in v.iter().enumerate() {
                    acc += m[row * old_sub + j] * x;
                }
                data[base_out + off] = acc;
            }
        }
        self.axes = out_axes;
        self.data = data;
        Ok(())
    }

    /// Drops photon levels whose whole slice is exactly zero.
    fn compress(&mut self) -> Result<()> {
        for p in 0..self.photon_count() {
            let a = self.photon_axis(p);
            let dims = self.dims();
            let st = strides(&dims);
            let mut used = vec![false; dims[a]];
            for (i, x) in self.data.iter().enumerate() {
                if *x != ZERO {
                    used[(i / st[a]) % dims[a]] = true;
                }
            }
            if used.iter().all(|&u| u) {
                continue;
            }
            let levels = self.levels(p).to_vec();
            let keep: Vec<PhotonSlot> = levels.iter().zip(&used).filter(|(_, u)| **u).map(|(l, _)| *l).collect();
            let mut m = vec![ZERO; keep.len() * levels.len()];
            let mut row = 0;
            for (j, u) in used.iter().enumerate() {
                if *u {
                    m[row * levels.len() + j] = C64::new(1.0, 0.0);
                    row += 1;
                }
            }
            self.apply(&[a], vec![Axis::Photon(keep)], &m)?;
        }
        Ok(())
    }

    fn inject(&mut self, r: C64, l: C64, modes: &[(ModeId, C64)]) -> Result<()> {
        let mut levels = Vec::new();
        let mut amps = Vec::new();
        for &(m, a) in modes {
            for (pol, pa) in [(Polarization::R, r), (Polarization::L, l)] {
                levels.push(PhotonSlot::Live { pol, mode: m });
                amps.push(pa * a);
            }
        }
        let order = sort_levels(&levels);
        let levels: Vec<PhotonSlot> = order.iter().map(|&i| levels[i]).collect();
        let amps: Vec<C64> = order.iter().map(|&i| amps[i]).collect();
        check_dim(self.data.len() * levels.len())?;
        self.data = self.data.iter().flat_map(|x| amps.iter().map(move |a| x * a)).collect();
        self.axes.push(Axis::Photon(levels));
        self.compress()
    }

    /// Applies a single-photon map to photon `p`. Levels not in the
    /// domain of `f` are left alone.
    fn map_photon<F>(&mut self, p: usize, f: F) -> Result<()>
    where
        F: Fn(PhotonSlot) -> Option<Vec<(PhotonSlot, C64)>>,
    {
        let old = self.levels(p).to_vec();
        let images: Vec<Vec<(PhotonSlot, C64)>> = old
            .iter()
            .map(|&l| f(l).unwrap_or_else(|| vec![(l, C64::new(1.0, 0.0))]))
            .collect();
        let new = union_levels(images.iter().flatten().map(|(l, _)| *l));
        let pos: BTreeMap<PhotonSlot, usize> = new.iter().enumerate().map(|(i, l)| (*l, i)).collect();
        let mut m = vec![ZERO; new.len() * old.len()];
        for (j, img) in images.iter().enumerate() {
            for (l, a) in img {
                m[pos[l] * old.len() + j] += a;
            }
        }
        let a = self.photon_axis(p);
        self.apply(&[a], vec![Axis::Photon(new)], &m)?;
        self.compress()
    }

    /// Applies a joint photon-spin map; `f` gets the level and the spin.
    fn map_photon_spin<F>(&mut self, p: usize, qd: usize, f: F) -> Result<()>
    where
        F: Fn(PhotonSlot, Spin) -> Option<Vec<(PhotonSlot, Spin, C64)>>,
    {
        if self.axes[qd] != Axis::Spin(false) {
            if self.levels(p).iter().any(|l| f(*l, Spin::Up).is_some()) {
                return Err(Error::Protocol(format!("spin of QD {qd} already measured")));
            }
            return Ok(());
        }
        let old = self.levels(p).to_vec();
        let spins = [Spin::Up, Spin::Down];
        let mut images = Vec::new();
        for &s in &spins {
            for &l in &old {
                images.push(f(l, s).unwrap_or_else(|| vec![(l, s, C64::new(1.0, 0.0))]));
            }
        }
        let new = union_levels(images.iter().flatten().map(|(l, _, _)| *l));
        let pos: BTreeMap<PhotonSlot, usize> = new.iter().enumerate().map(|(i, l)| (*l, i)).collect();
        let (n_old, n_new) = (old.len(), new.len());
        let mut m = vec![ZERO; 2 * n_new * 2 * n_old];
        for (j, img) in images.iter().enumerate() {
            for (l, s, a) in img {
                let row = spin_index(*s) * n_new + pos[l];
                m[row * 2 * n_old + j] += a;
            }
        }
        let a = self.photon_axis(p);
        self.apply(&[qd, a], vec![Axis::Spin(false), Axis::Photon(new)], &m)?;
        self.compress()
    }

    fn map_spin(&mut self, qd: usize, m: [[C64; 2]; 2]) -> Result<()> {
        if self.axes[qd] != Axis::Spin(false) {
            return Err(Error::Protocol(format!("spin of QD {qd} already measured")));
        }
        let flat = [m[0][0], m[0][1], m[1][0], m[1][1]];
        self.apply(&[qd], vec![Axis::Spin(false)], &flat)
    }

    /// Photon whose levels include a live level in `mode`.
    fn photon_in(&self, mode: ModeId) -> Option<usize> {
        (0..self.photon_count()).find(|&p| self.levels(p).iter().any(|l| l.live().map(|(_, m)| m) == Some(mode)))
    }

    /// Removes all levels absorbed in `sinks`, returning the weight per sink.
    fn drain(&mut self, sinks: &BTreeSet<SinkId>) -> Result<BTreeMap<SinkId, f64>> {
        let mut ledger = BTreeMap::new();
        let dims = self.dims();
        for (i, x) in self.data.iter_mut().enumerate() {
            if *x == ZERO {
                continue;
            }
            let idx = unravel(i, &dims);
            let hit = (0..dims.len() - self.qds).find_map(|p| {
                let Axis::Photon(levels) = &self.axes[self.qds + p] else { unreachable!() };
                levels[idx[self.qds + p]].sink().filter(|k| sinks.contains(k))
            });
            if let Some(k) = hit {
                *ledger.entry(k).or_insert(0.0) += x.norm_sqr();
                *x = ZERO;
            }
        }
        self.compress()?;
        Ok(ledger)
    }

    fn to_state(&self) -> Result<HyperState> {
        let dims = self.dims();
        let mut terms = Vec::new();
        for (i, x) in self.data.iter().enumerate() {
            if *x == ZERO {
                continue;
            }
            let idx = unravel(i, &dims);
            let spins = (0..self.qds)
                .map(|q| match self.axes[q] {
                    Axis::Spin(false) => Some(if idx[q] == 0 { Spin::Up } else { Spin::Down }),
                    _ => None,
                })
                .collect();
            let photons = (0..self.photon_count())
                .map(|p| self.levels(p)[idx[self.qds + p]])
                .collect();
            terms.push((BasisLabel { photons, spins }, *x));
        }
        HyperState::from_terms(self.registry.clone(), self.photon_count(), terms)
    }
}

fn spin_index(s: Spin) -> usize {
    match s {
        Spin::Up => 0,
        Spin::Down => 1,
    }
}

fn sort_levels(levels: &[PhotonSlot]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&a, &b| levels[a].cmp(&levels[b]));
    order
}

fn union_levels(it: impl Iterator<Item = PhotonSlot>) -> Vec<PhotonSlot> {
    it.collect::<BTreeSet<_>>().into_iter().collect()
}

fn mode(reg: &Registry, name: &str) -> Result<ModeId> {
    reg.mode(name)
}

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// How the dot scatters one input: which coefficient pair applies.
/// Rows are (spin, polarization, entering from the top port).
fn coupled(spin: Spin, pol: Polarization, from_top: bool) -> bool {
    use Polarization::{L, R};
    match (spin, pol, from_top) {
        (Spin::Up, R, true) => true,
        (Spin::Up, L, true) => false,
        (Spin::Up, R, false) => false,
        (Spin::Up, L, false) => true,
        (Spin::Down, R, true) => false,
        (Spin::Down, L, true) => true,
        (Spin::Down, R, false) => true,
        (Spin::Down, L, false) => false,
    }
}

struct Ctx {
    passes: BTreeMap<ModeId, u32>,
}

fn apply_element(d: &mut Dense, ctx: &mut Ctx, e: &Element) -> Result<()> {
    let reg = d.registry.clone();
    let live = |pol, mode| PhotonSlot::Live { pol, mode };
    let k = FRAC_1_SQRT_2;
    match e {
        Element::Pbs {
            in1,
            in2,
            transmit,
            reflect,
        } => {
            let (i1, i2, t, r) = (mode(&reg, in1)?, mode(&reg, in2)?, mode(&reg, transmit)?, mode(&reg, reflect)?);
            for p in 0..d.photon_count() {
                d.map_photon(p, |l| match l {
                    PhotonSlot::Live { pol, mode } if mode == i1 || mode == i2 => {
                        let transmitted = (pol == Polarization::R) == (mode == i1);
                        Some(vec![(live(pol, if transmitted { t } else { r }), c(1.0))])
                    }
                    _ => None,
                })?;
            }
        }
        Element::Bs {
            m1,
            m2,
            o1,
            o2,
            rotated,
        } => {
            let (i1, i2, p1, p2) = (mode(&reg, m1)?, mode(&reg, m2)?, mode(&reg, o1)?, mode(&reg, o2)?);
            // Columns are the two inputs, rows the two outputs.
            let u = if *rotated { [[-k, k], [k, k]] } else { [[k, k], [k, -k]] };
            for p in 0..d.photon_count() {
                d.map_photon(p, |l| match l {
                    PhotonSlot::Live { pol, mode } if mode == i1 || mode == i2 => {
                        let col = usize::from(mode == i2);
                        Some(vec![(live(pol, p1), c(u[col][0])), (live(pol, p2), c(u[col][1]))])
                    }
                    _ => None,
                })?;
            }
        }
        Element::Hwp { mode: m, angle } => {
            let m = mode(&reg, m)?;
            let u = match angle {
                HwpAngle::Hadamard => [[k, k], [k, -k]],
                HwpAngle::Flip => [[0.0, 1.0], [1.0, 0.0]],
            };
            for p in 0..d.photon_count() {
                d.map_photon(p, |l| match l {
                    PhotonSlot::Live { pol, mode } if mode == m => {
                        let row = u[usize::from(pol == Polarization::L)];
                        Some(vec![
                            (live(Polarization::R, m), c(row[0])),
                            (live(Polarization::L, m), c(row[1])),
                        ])
                    }
                    _ => None,
                })?;
            }
        }
        Element::Vbs {
            input,
            transmit,
            sink,
            transmission,
        } => {
            if !(0.0..=1.0).contains(transmission) {
                return Err(Error::InvalidTransmission(*transmission));
            }
            let (i, t, s) = (mode(&reg, input)?, mode(&reg, transmit)?, reg.sink(sink)?);
            let refl = (1.0 - transmission * transmission).sqrt();
            for p in 0..d.photon_count() {
                d.map_photon(p, |l| match l {
                    PhotonSlot::Live { pol, mode } if mode == i => Some(vec![
                        (live(pol, t), c(*transmission)),
                        (
                            PhotonSlot::Terminal {
                                sink: s,
                                channel: Channel::Absorbed { pol, mode },
                            },
                            c(refl),
                        ),
                    ]),
                    _ => None,
                })?;
            }
        }
        Element::QdScatter { qd, top, bottom, coeffs } => {
            scatter(d, ctx, *qd, top, bottom, coeffs)?;
        }
        Element::Mirror { input, output } => {
            let (i, o) = (mode(&reg, input)?, mode(&reg, output)?);
            for p in 0..d.photon_count() {
                d.map_photon(p, |l| match l {
                    PhotonSlot::Live { pol, mode } if mode == i => Some(vec![(live(pol, o), c(1.0))]),
                    _ => None,
                })?;
            }
        }
        Element::Detector { mode: m, sink } => {
            let (m, s) = (mode(&reg, m)?, reg.sink(sink)?);
            for p in 0..d.photon_count() {
                d.map_photon(p, |l| match l {
                    PhotonSlot::Live { pol, mode } if mode == m => Some(vec![(
                        PhotonSlot::Terminal {
                            sink: s,
                            channel: Channel::Absorbed { pol, mode },
                        },
                        c(1.0),
                    )]),
                    _ => None,
                })?;
            }
        }
        Element::SpinFlip { qd } => {
            check_qd(d, *qd)?;
            d.map_spin(*qd, [[ZERO, c(1.0)], [c(1.0), ZERO]])?;
        }
        Element::PauliZ(target) => match target {
            ZTarget::Spin { qd } => {
                check_qd(d, *qd)?;
                d.map_spin(*qd, [[c(1.0), ZERO], [ZERO, c(-1.0)]])?;
            }
            ZTarget::Polarization { photon } => {
                check_photon(d, *photon)?;
                d.map_photon(*photon, |l| match l {
                    PhotonSlot::Live {
                        pol: Polarization::L, ..
                    } => Some(vec![(l, c(-1.0))]),
                    _ => None,
                })?;
            }
            ZTarget::Spatial { photon, second } => {
                check_photon(d, *photon)?;
                let m = mode(&reg, second)?;
                d.map_photon(*photon, |l| match l.live() {
                    Some((_, mode)) if mode == m => Some(vec![(l, c(-1.0))]),
                    _ => None,
                })?;
            }
        },
    }
    Ok(())
}

fn check_qd(d: &Dense, qd: usize) -> Result<()> {
    if qd >= d.qds {
        return Err(Error::BadQdIndex(qd));
    }
    Ok(())
}

fn check_photon(d: &Dense, p: usize) -> Result<()> {
    if p >= d.photon_count() {
        return Err(Error::BadPhotonIndex(p));
    }
    Ok(())
}

fn scatter(
    d: &mut Dense,
    ctx: &mut Ctx,
    qd: usize,
    top: &str,
    bottom: &str,
    coeffs: &ScatteringCoefficients,
) -> Result<()> {
    check_qd(d, qd)?;
    let reg = d.registry.clone();
    let (t, b) = (mode(&reg, top)?, mode(&reg, bottom)?);
    let loss = reg.sink(&loss_sink_name(reg.qd_name(qd)?))?;
    let pass = {
        let p = ctx.passes.entry(t).or_insert(0);
        *p += 1;
        *p
    };
    for p in 0..d.photon_count() {
        d.map_photon_spin(p, qd, |l, spin| {
            let PhotonSlot::Live { pol, mode } = l else { return None };
            if mode != t && mode != b {
                return None;
            }
            let from_top = mode == t;
            let hot = coupled(spin, pol, from_top);
            let (refl, trans) = if hot { (coeffs.r, coeffs.t) } else { (coeffs.r0, coeffs.t0) };
            let flipped = match pol {
                Polarization::R => Polarization::L,
                Polarization::L => Polarization::R,
            };
            let other = if from_top { b } else { t };
            let mut out = vec![
                (PhotonSlot::Live { pol: flipped, mode }, spin, refl),
                (PhotonSlot::Live { pol, mode: other }, spin, trans),
            ];
            // The two inputs sharing a coefficient pair leak into one
            // common level with equal weight.
            let deficit = 1.0 - (refl + trans).norm_sqr();
            if deficit > 0.0 {
                out.push((
                    PhotonSlot::Terminal {
                        sink: loss,
                        channel: Channel::Leak { port: t, hot, pass },
                    },
                    spin,
                    c((deficit / 2.0).sqrt()),
                ));
            }
            Some(out)
        })?;
    }
    Ok(())
}

struct OBranch {
    dense: Dense,
    outcomes: Vec<(String, Outcome)>,
    feed_forward: Vec<FeedForward>,
    snapshots: BTreeMap<String, HyperState>,
    ctx: Ctx,
}

impl Clone for OBranch {
    fn clone(&self) -> Self {
        OBranch {
            dense: self.dense.clone(),
            outcomes: self.outcomes.clone(),
            feed_forward: self.feed_forward.clone(),
            snapshots: self.snapshots.clone(),
            ctx: Ctx {
                passes: self.ctx.passes.clone(),
            },
        }
    }
}

fn absorb(record: &mut RunRecord, reg: &Registry, drained: BTreeMap<SinkId, f64>) {
    for (id, p) in drained {
        if reg.sink_kind(id) == SinkKind::CavityLoss {
            record.unaccounted_loss += p;
        } else {
            *record.sinks.entry(reg.sink_name(id).to_string()).or_default() += p;
        }
    }
}

/// Runs `protocol` densely, enumerating every measurement outcome.
pub fn oracle_protocol(protocol: &Protocol) -> Result<RunRecord> {
    let reg = protocol.registry.clone();
    let spins: Vec<(C64, C64)> = protocol.spins.iter().map(|s| (s.up, s.down)).collect();
    let mut start = Dense::new(reg.clone(), &spins);
    for spec in &protocol.initial {
        inject(&mut start, spec)?;
    }
    let mut branches = vec![OBranch {
        dense: start,
        outcomes: Vec::new(),
        feed_forward: Vec::new(),
        snapshots: BTreeMap::new(),
        ctx: Ctx { passes: BTreeMap::new() },
    }];
    let mut record = RunRecord {
        branches: Vec::new(),
        sinks: BTreeMap::new(),
        unaccounted_loss: 0.0,
        trace: Vec::new(),
        failure: None,
        retries: 0,
    };
    for stage in &protocol.stages {
        for step in &stage.steps {
            branches = oracle_step(protocol, &mut record, &stage.name, step, branches)?;
        }
    }
    let failure: BTreeSet<SinkId> = reg.sinks().filter(|(_, _, k)| k.is_failure()).map(|(id, _, _)| id).collect();
    for b in &mut branches {
        let drained = b.dense.drain(&failure)?;
        absorb(&mut record, &reg, drained);
        record.branches.push(Branch {
            outcomes: b.outcomes.clone(),
            feed_forward: b.feed_forward.clone(),
            snapshots: b.snapshots.clone(),
            state: b.dense.to_state()?,
        });
    }
    Ok(record)
}

fn inject(d: &mut Dense, spec: &crate::state::PhotonSpec) -> Result<()> {
    let norm = |x: f64| (x - 1.0).abs() <= crate::state::SPEC_TOLERANCE;
    let (r, l) = spec.polarization;
    let spatial: f64 = spec.modes.iter().map(|(_, a)| a.norm_sqr()).sum();
    if !norm(r.norm_sqr() + l.norm_sqr()) || !norm(spatial) {
        return Err(Error::NotNormalized {
            what: "injected photon".into(),
            norm: (r.norm_sqr() + l.norm_sqr()) * spatial,
        });
    }
    let modes = spec
        .modes
        .iter()
        .map(|(m, a)| Ok((d.registry.mode(m)?, *a)))
        .collect::<Result<Vec<_>>>()?;
    d.inject(r, l, &modes)
}

fn oracle_step(
    protocol: &Protocol,
    record: &mut RunRecord,
    stage: &str,
    step: &Step,
    mut branches: Vec<OBranch>,
) -> Result<Vec<OBranch>> {
    let reg = protocol.registry.clone();
    let k = FRAC_1_SQRT_2;
    match step {
        Step::Inject { spec, .. } => {
            for b in &mut branches {
                inject(&mut b.dense, spec)?;
            }
        }
        Step::Apply(e) => {
            for b in &mut branches {
                apply_element(&mut b.dense, &mut b.ctx, e)?;
            }
        }
        Step::Freeze { .. } => {}
        Step::Snapshot { label } => {
            for b in &mut branches {
                let s = b.dense.to_state()?;
                b.snapshots.insert(label.clone(), s);
            }
        }
        Step::Herald { silent } => {
            let mut ids: BTreeSet<SinkId> = reg.sinks_of_kind(SinkKind::CavityLoss).into_iter().collect();
            for s in silent {
                ids.insert(reg.sink(s)?);
            }
            for b in &mut branches {
                let drained = b.dense.drain(&ids)?;
                absorb(record, &reg, drained);
            }
            branches.retain(|b| b.dense.norm_sqr() > 0.0);
            record.trace.push(StageProbability {
                stage: stage.to_string(),
                probability: branches.iter().map(|b| b.dense.norm_sqr()).sum(),
            });
        }
        Step::MeasureSpin { qd, label, fixed } => {
            let qd = *qd;
            let mut next = Vec::new();
            for b in branches {
                for sign in signs(*fixed) {
                    let mut nb = b.clone();
                    check_qd(&nb.dense, qd)?;
                    if nb.dense.axes[qd] != Axis::Spin(false) {
                        return Err(Error::Protocol(format!("spin of QD {qd} already measured")));
                    }
                    let row = [c(k), c(k * sign.factor())];
                    nb.dense.apply(&[qd], vec![Axis::Spin(true)], &row)?;
                    nb.dense.compress()?;
                    keep(&mut next, nb, label, Outcome::Sign(sign));
                }
            }
            branches = next;
        }
        Step::MeasurePhoton {
            mode: m,
            plus,
            minus,
            label,
            fixed,
        } => {
            let m = reg.mode(m)?;
            let (kp, km) = (reg.sink(plus)?, reg.sink(minus)?);
            let mut next = Vec::new();
            for b in branches {
                let p = b
                    .dense
                    .photon_in(m)
                    .ok_or_else(|| Error::NoPhotonInMode(reg.mode_name(m).into()))?;
                let mut missed = 0.0;
                for sign in signs(*fixed) {
                    let mut nb = b.clone();
                    let sink = if sign == Sign::Plus { kp } else { km };
                    let old = nb.dense.levels(p).to_vec();
                    let slot = PhotonSlot::Terminal {
                        sink,
                        channel: Channel::Outcome(sign),
                    };
                    let row: Vec<C64> = old
                        .iter()
                        .map(|l| match *l {
                            PhotonSlot::Live {
                                pol: Polarization::R,
                                mode,
                            } if mode == m => c(k),
                            PhotonSlot::Live {
                                pol: Polarization::L,
                                mode,
                            } if mode == m => c(k * sign.factor()),
                            _ => ZERO,
                        })
                        .collect();
                    missed = weight_outside(&nb.dense, p, |l| l.live().map(|(_, x)| x) == Some(m));
                    let a = nb.dense.photon_axis(p);
                    nb.dense.apply(&[a], vec![Axis::Photon(vec![slot])], &row)?;
                    nb.dense.compress()?;
                    keep(&mut next, nb, label, Outcome::Sign(sign));
                }
                record.unaccounted_loss += missed;
            }
            branches = next;
        }
        Step::MeasurePath {
            first,
            second,
            label,
            fixed,
        } => {
            let (f, s) = (reg.mode(first)?, reg.mode(second)?);
            let options = match fixed {
                Some(p) => vec![*p],
                None => vec![Path::First, Path::Second],
            };
            let mut next = Vec::new();
            for b in branches {
                let p = b
                    .dense
                    .photon_in(f)
                    .or_else(|| b.dense.photon_in(s))
                    .ok_or_else(|| Error::NoPhotonInMode(reg.mode_name(f).into()))?;
                let mut missed = 0.0;
                for path in options.iter().copied() {
                    let mut nb = b.clone();
                    let keep_mode = if path == Path::First { f } else { s };
                    let old = nb.dense.levels(p).to_vec();
                    let kept: Vec<PhotonSlot> = old
                        .iter()
                        .copied()
                        .filter(|l| l.live().map(|(_, x)| x) == Some(keep_mode))
                        .collect();
                    missed = weight_outside(&nb.dense, p, |l| {
                        matches!(l.live(), Some((_, x)) if x == f || x == s)
                    });
                    let mut m = vec![ZERO; kept.len() * old.len()];
                    for (row, l) in kept.iter().enumerate() {
                        let j = old.iter().position(|o| o == l).unwrap();
                        m[row * old.len() + j] = c(1.0);
                    }
                    if kept.is_empty() {
                        continue;
                    }
                    let a = nb.dense.photon_axis(p);
                    nb.dense.apply(&[a], vec![Axis::Photon(kept)], &m)?;
                    nb.dense.compress()?;
                    keep(&mut next, nb, label, Outcome::Path(path));
                }
                record.unaccounted_loss += missed;
            }
            branches = next;
        }
        Step::Conditional {
            label,
            outcome,
            element,
        } => {
            for b in &mut branches {
                let got = recorded(&b.outcomes, label)?;
                let applied = if got == *outcome {
                    apply_element(&mut b.dense, &mut b.ctx, element)?;
                    Some(element.clone())
                } else {
                    None
                };
                b.feed_forward.push(FeedForward {
                    label: label.clone(),
                    outcome: got,
                    applied,
                });
            }
        }
        Step::Parity { label, n, target } => {
            for b in &mut branches {
                let got = recorded(&b.outcomes, label)?;
                let Outcome::Sign(sign) = got else {
                    return Err(Error::Protocol(format!("`{label}` is not a ± outcome")));
                };
                let applied = match feed_forward_parity(sign, *n) {
                    ParityCorrection::PauliZ => {
                        let e = Element::PauliZ(target.clone());
                        apply_element(&mut b.dense, &mut b.ctx, &e)?;
                        Some(e)
                    }
                    ParityCorrection::Identity => None,
                };
                b.feed_forward.push(FeedForward {
                    label: label.clone(),
                    outcome: got,
                    applied,
                });
            }
        }
    }
    Ok(branches)
}

fn signs(fixed: Option<Sign>) -> Vec<Sign> {
    match fixed {
        Some(s) => vec![s],
        None => vec![Sign::Plus, Sign::Minus],
    }
}

fn recorded(outcomes: &[(String, Outcome)], label: &str) -> Result<Outcome> {
    outcomes
        .iter()
        .find(|(l, _)| l == label)
        .map(|(_, o)| *o)
        .ok_or_else(|| Error::Protocol(format!("no outcome recorded for `{label}`")))
}

fn keep(next: &mut Vec<OBranch>, mut b: OBranch, label: &str, o: Outcome) {
    if b.dense.norm_sqr() > 0.0 {
        b.outcomes.push((label.to_string(), o));
        next.push(b);
    }
}

/// Weight of the tensor where photon `p` is in a level failing `inside`.
fn weight_outside(d: &Dense, p: usize, inside: impl Fn(&PhotonSlot) -> bool) -> f64 {
    let dims = d.dims();
    let a = d.photon_axis(p);
    let st = strides(&dims);
    let levels = d.levels(p);
    d.data
        .iter()
        .enumerate()
        .filter(|(i, _)| !inside(&levels[(i / st[a]) % dims[a]]))
        .map(|(_, x)| x.norm_sqr())
        .sum()
}

/// Dense-oracle counterpart of [`crate::devices::run_device`]. Only the
/// enumerate-all policy is supported.
pub fn oracle_run(cfg: &DeviceConfig) -> Result<DeviceResult> {
    if cfg.policy != OutcomePolicy::Enumerate {
        return Err(Error::InvalidConfig("the oracle only enumerates outcomes".into()));
    }
    let protocol = build_protocol(cfg)?;
    let record = oracle_protocol(&protocol)?;
    assemble(cfg, &protocol, record)
}

/// Largest amplitude difference between matching branches of two runs.
/// Branches are paired by their outcome record; a branch present in only
/// one run counts with its full amplitudes.
pub fn max_branch_deviation(a: &DeviceResult, b: &DeviceResult) -> f64 {
    let raw = |r: &DeviceResult| -> BTreeMap<String, BTreeMap<String, C64>> {
        r.branches
            .iter()
            .map(|br| {
                let key = br.outcomes.iter().map(|(l, o)| format!("{l}={o}")).collect::<Vec<_>>().join(",");
                let amps = br
                    .state
                    .amplitudes_by_name()
                    .into_iter()
                    .map(|(n, x)| (n, x * br.probability.sqrt()))
                    .collect();
                (key, amps)
            })
            .collect()
    };
    let (x, y) = (raw(a), raw(b));
    let keys: BTreeSet<&String> = x.keys().chain(y.keys()).collect();
    let empty = BTreeMap::new();
    let mut worst: f64 = 0.0;
    for key in keys {
        let (u, v) = (x.get(key).unwrap_or(&empty), y.get(key).unwrap_or(&empty));
        let names: BTreeSet<&String> = u.keys().chain(v.keys()).collect();
        for n in names {
            let d = u.get(n).copied().unwrap_or(ZERO) - v.get(n).copied().unwrap_or(ZERO);
            worst = worst.max(d.norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{ideal_coefficients, scattering_coefficients, CavityParams};
    use crate::devices::{run_device, Cavity, DeviceKind};

    #[test]
    fn scattering_table_matches_selection_rules() {
        // Spin up couples R from the top and L from the bottom; spin down
        // the mirror image.
        assert!(coupled(Spin::Up, Polarization::R, true));
        assert!(coupled(Spin::Up, Polarization::L, false));
        assert!(coupled(Spin::Down, Polarization::L, true));
        assert!(coupled(Spin::Down, Polarization::R, false));
        assert!(!coupled(Spin::Up, Polarization::L, true));
        assert!(!coupled(Spin::Down, Polarization::R, true));
    }

    #[test]
    fn tensor_apply_matches_hand_product() {
        let reg = crate::registry::RegistryBuilder::new().build();
        let mut d = Dense::new(reg, &[(c(0.6), c(0.8)), (c(1.0), ZERO)]);
        d.map_spin(0, [[ZERO, c(1.0)], [c(1.0), ZERO]]).unwrap();
        assert_eq!(d.data, vec![c(0.8), ZERO, c(0.6), ZERO]);
    }

    #[test]
    fn ideal_oracle_succeeds_with_certainty() {
        for kind in DeviceKind::ALL {
            let cfg = DeviceConfig::new(kind, 1).with_cavity(Cavity::Coefficients(ideal_coefficients()));
            let r = oracle_run(&cfg).unwrap();
            assert!((r.success_probability() - 1.0).abs() < 1e-12, "{kind}");
        }
    }

    #[test]
    fn p_transistor_success_is_the_stage_product() {
        let params = CavityParams::resonant(2.4 * 1.05, 0.05, 0.1);
        let s = scattering_coefficients(&params).unwrap().success_amplitude().re;
        let cfg = DeviceConfig::new(DeviceKind::PTransistor, 1).with_params(params);
        let r = oracle_run(&cfg).unwrap();
        // Gate stage (t − t0)², one source stage (t − t0)².
        assert!((r.success_probability() - s.powi(4)).abs() < 1e-12);
        let sparse = run_device(&cfg).unwrap();
        assert!(max_branch_deviation(&r, &sparse) < 1e-12);
    }
}
