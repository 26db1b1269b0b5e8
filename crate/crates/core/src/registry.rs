//! Name tables for spatial modes, sinks and quantum dots.
//!
//! Ids are handed out in lexicographic name order once the registry is
//! built, so the derived `Ord` on ids matches the canonical label order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModeId(pub(crate) u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SinkId(pub(crate) u32);

/// What absorbing a photon in a sink means for the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SinkKind {
    /// A heralding detector; a click marks failure.
    Detector,
    /// The reflected port of a variable beam splitter.
    VbsReflection,
    /// Side leakage and dipole decay of a cavity.
    CavityLoss,
    /// A measurement detector; absorption records an outcome.
    Measurement,
}

impl SinkKind {
    /// Whether probability ending in this sink counts against success.
    pub fn is_failure(self) -> bool {
        !matches!(self, SinkKind::Measurement)
    }
}

impl fmt::Display for SinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SinkKind::Detector => "detector",
            SinkKind::VbsReflection => "vbs",
            SinkKind::CavityLoss => "loss",
            SinkKind::Measurement => "measurement",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    modes: Vec<String>,
    mode_ids: BTreeMap<String, ModeId>,
    sinks: Vec<(String, SinkKind)>,
    sink_ids: BTreeMap<String, SinkId>,
    qds: Vec<String>,
}

impl Registry {
    pub fn mode(&self, name: &str) -> Result<ModeId> {
        self.mode_ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownMode(name.to_string()))
    }

    pub fn sink(&self, name: &str) -> Result<SinkId> {
        self.sink_ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownSink(name.to_string()))
    }

    pub fn qd(&self, name: &str) -> Option<usize> {
        self.qds.iter().position(|q| q == name)
    }

    pub fn mode_name(&self, id: ModeId) -> &str {
        &self.modes[id.0 as usize]
    }

    pub fn sink_name(&self, id: SinkId) -> &str {
        &self.sinks[id.0 as usize].0
    }

    pub fn sink_kind(&self, id: SinkId) -> SinkKind {
        self.sinks[id.0 as usize].1
    }

    pub fn qd_name(&self, index: usize) -> Result<&str> {
        self.qds
            .get(index)
            .map(String::as_str)
            .ok_or(Error::BadQdIndex(index))
    }

    pub fn qd_count(&self) -> usize {
        self.qds.len()
    }

    pub fn mode_names(&self) -> impl Iterator<Item = &str> {
        self.modes.iter().map(String::as_str)
    }

    pub fn sinks(&self) -> impl Iterator<Item = (SinkId, &str, SinkKind)> {
        self.sinks
            .iter()
            .enumerate()
            .map(|(i, (n, k))| (SinkId(i as u32), n.as_str(), *k))
    }

    /// Ids of every sink of the given kind.
    pub fn sinks_of_kind(&self, kind: SinkKind) -> Vec<SinkId> {
        self.sinks()
            .filter(|(_, _, k)| *k == kind)
            .map(|(id, _, _)| id)
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RegistryBuilder {
    modes: BTreeSet<String>,
    sinks: BTreeMap<String, SinkKind>,
    qds: Vec<String>,
}

impl RegistryBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mode(&mut self, name: &str) -> &mut Self {
        self.modes.insert(name.to_string());
        self
    }

    pub fn has_mode(&self, name: &str) -> bool {
        self.modes.contains(name)
    }

    pub fn sink(&mut self, name: &str, kind: SinkKind) -> Result<&mut Self> {
        match self.sinks.get(name) {
            Some(k) if *k != kind => {
                return Err(Error::SinkKindConflict {
                    name: name.to_string(),
                })
            }
            Some(_) => {}
            None => {
                self.sinks.insert(name.to_string(), kind);
            }
        }
        Ok(self)
    }

    pub fn sink_kind(&self, name: &str) -> Option<SinkKind> {
        self.sinks.get(name).copied()
    }

    /// Registers a QD and returns its index (declaration order).
    pub fn qd(&mut self, name: &str) -> usize {
        match self.qds.iter().position(|q| q == name) {
            Some(i) => i,
            None => {
                self.qds.push(name.to_string());
                self.qds.len() - 1
            }
        }
    }

    pub fn qd_index(&self, name: &str) -> Option<usize> {
        self.qds.iter().position(|q| q == name)
    }

    pub fn build(&self) -> Arc<Registry> {
        let modes: Vec<String> = self.modes.iter().cloned().collect();
        let mode_ids = modes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), ModeId(i as u32)))
            .collect();
        let sinks: Vec<(String, SinkKind)> =
            self.sinks.iter().map(|(n, k)| (n.clone(), *k)).collect();
        let sink_ids = sinks
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), SinkId(i as u32)))
            .collect();
        Arc::new(Registry {
            modes,
            mode_ids,
            sinks,
            sink_ids,
            qds: self.qds.clone(),
        })
    }
}
