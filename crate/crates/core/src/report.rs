//! Per-phase sort reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::device::{AccessKind, Phase, TrafficLedger};

pub const SCHEMA: &str = "phase-report/v1";

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRow {
    pub phase: Phase,
    /// Host wall time; not reproducible across machines.
    pub wall_ns: u64,
    pub injected_delay_ns: u64,
    pub bytes: BTreeMap<AccessKind, u64>,
}

impl PhaseRow {
    pub fn total_bytes(&self) -> u64 {
        self.bytes.values().sum()
    }
}

/// One row per phase that saw traffic or wall time. A OnePass sort has no
/// MERGE rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    pub rows: Vec<PhaseRow>,
}

impl PhaseReport {
    pub fn new(ledger: &TrafficLedger, wall: &BTreeMap<Phase, u64>) -> Self {
        let rows = Phase::ALL
            .into_iter()
            .filter(|p| ledger.phase(*p).bytes > 0 || wall.get(p).is_some_and(|w| *w > 0))
            .map(|phase| PhaseRow {
                phase,
                wall_ns: wall.get(&phase).copied().unwrap_or(0),
                injected_delay_ns: ledger.phase(phase).injected_delay_ns,
                bytes: AccessKind::ALL
                    .into_iter()
                    .map(|k| (k, ledger.get(phase, k).bytes))
                    .collect(),
            })
            .collect();
        PhaseReport { rows }
    }

    pub fn row(&self, phase: Phase) -> Option<&PhaseRow> {
        self.rows.iter().find(|r| r.phase == phase)
    }

    pub fn total_bytes(&self) -> u64 {
        self.rows.iter().map(|r| r.total_bytes()).sum()
    }

    pub fn header() -> String {
        let mut h = String::from("schema,phase,wall_ns_host_dependent,injected_delay_ns");
        for k in AccessKind::ALL {
            let _ = write!(h, ",{}_{}_bytes", k.direction.as_str(), k.pattern.as_str());
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut s = Self::header();
        s.push('\n');
        for r in &self.rows {
            let _ = write!(
                s,
                "{SCHEMA},{},{},{}",
                r.phase.label(),
                r.wall_ns,
                r.injected_delay_ns
            );
            for k in AccessKind::ALL {
                let _ = write!(s, ",{}", r.bytes.get(&k).copied().unwrap_or(0));
            }
            s.push('\n');
        }
        s
    }
}
