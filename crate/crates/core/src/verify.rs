//! Chain verification and replay.
//!
//! A chain is verified from genesis: the permanent hash links, each stored
//! interval's removable hash chain, and then every stateful rule by replaying
//! the blocks into a fresh [`Ledger`]. An interval that is missing although
//! its header declares blocks is acceptable only if a later permanent block
//! confirms a Delete for it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::block::{derive_p_list, tx_root, PermanentBlock, RemovableBlock};
use crate::crypto::{Hash32, NULL_HASH};
use crate::ledger::{ChainError, IntervalStatus, Ledger, LedgerConfig, MinerJudge};
use crate::tx::Payload;

/// Raw chain contents as held by a store or served by a peer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChainData {
    pub permanent: Vec<PermanentBlock>,
    pub removable: BTreeMap<u32, Vec<RemovableBlock>>,
}

impl ChainData {
    pub fn from_ledger(ledger: &Ledger) -> Self {
        Self {
            permanent: ledger.permanent_blocks().to_vec(),
            removable: ledger.present_intervals().clone(),
        }
    }

    /// Intervals targeted by a Delete confirmed above them.
    pub fn delete_evidence(&self) -> BTreeSet<u32> {
        self.permanent
            .iter()
            .flat_map(|b| {
                b.transactions.iter().filter_map(move |tx| match tx.payload {
                    Payload::Delete { interval } if interval < b.height() => Some(interval),
                    _ => None,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("block {height}: {error}")]
    Chain { height: u32, error: ChainError },
    #[error("interval {interval} is missing and no delete confirms its removal")]
    MissingDeleteEvidence { interval: u32 },
    #[error("blocks stored for interval {interval}, which has no permanent block")]
    UnexpectedInterval { interval: u32 },
}

impl Ledger {
    /// Rebuilds a ledger from chain contents. Missing intervals backed by
    /// delete evidence are replayed as gaps; pruning runs after every block
    /// just as it does on a live node.
    pub fn replay(data: &ChainData, config: LedgerConfig, judge: MinerJudge) -> Result<Ledger, ReplayError> {
        let mut ledger = Ledger::new(config).with_judge(judge);
        let tip = data.permanent.len() as u32;
        if let Some(&interval) = data.removable.keys().find(|&&i| i == 0 || i >= tip) {
            return Err(ReplayError::UnexpectedInterval { interval });
        }
        let evidence = data.delete_evidence();
        for block in &data.permanent {
            let h = block.height();
            let chain = |error| ReplayError::Chain { height: h, error };
            match data.removable.get(&h) {
                Some(blocks) => ledger.apply_interval_and_block(blocks, block).map_err(chain)?,
                None if block.header.interval_len > 0 => {
                    if !evidence.contains(&h) {
                        return Err(ReplayError::MissingDeleteEvidence { interval: h });
                    }
                    ledger.unavailable.insert(h);
                    ledger.apply_permanent_gap(block).map_err(chain)?;
                }
                None => ledger.apply_permanent(block).map_err(chain)?,
            }
            ledger.prune_deletable();
        }
        // a gap whose delete never reached the chain was caught above; one
        // whose delete is confirmed but not applied means the delete was invalid
        if let Some(&interval) = ledger
            .unavailable
            .iter()
            .find(|i| !ledger.interval_status(**i).is_some_and(|s| s.is_deleted()))
        {
            return Err(ReplayError::MissingDeleteEvidence { interval });
        }
        Ok(ledger)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum Violation {
    HeightMismatch { height: u32, found: u32 },
    BrokenPermanentLink { height: u32 },
    TxRootMismatch { height: u32 },
    IntervalLenMismatch { interval: u32, declared: u8, found: usize },
    BrokenRemovableLink { interval: u32, position: u16 },
    PrevRemovableMismatch { interval: u32 },
    PListMismatch { interval: u32 },
    MissingDeleteEvidence { interval: u32 },
    UnexpectedInterval { interval: u32 },
    StatefulRule { height: u32, error: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::HeightMismatch { height, found } => {
                write!(f, "B_{height}: header height {found}")
            }
            Violation::BrokenPermanentLink { height } => write!(f, "B_{height}: broken permanent link"),
            Violation::TxRootMismatch { height } => write!(f, "B_{height}: tx root mismatch"),
            Violation::IntervalLenMismatch {
                interval,
                declared,
                found,
            } => write!(f, "I_{interval}: header declares {declared} blocks, {found} stored"),
            Violation::BrokenRemovableLink { interval, position } => {
                write!(f, "B_{interval}.{position}: broken removable link")
            }
            Violation::PrevRemovableMismatch { interval } => {
                write!(f, "B_{interval}: prev_removable does not match I_{interval}")
            }
            Violation::PListMismatch { interval } => write!(f, "B_{interval}: P-list mismatch"),
            Violation::MissingDeleteEvidence { interval } => {
                write!(f, "I_{interval}: missing without delete evidence")
            }
            Violation::UnexpectedInterval { interval } => {
                write!(f, "I_{interval}: stored without a permanent block")
            }
            Violation::StatefulRule { height, error } => write!(f, "B_{height}: {error}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub tip_height: Option<u32>,
    pub tip_hash: Hash32,
    pub present_intervals: Vec<u32>,
    pub deleted_intervals: Vec<u32>,
    pub violations: Vec<Violation>,
}

impl VerificationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn structural_violations(data: &ChainData, out: &mut Vec<Violation>) {
    let evidence = data.delete_evidence();
    let mut prev = NULL_HASH;
    for (idx, block) in data.permanent.iter().enumerate() {
        let h = idx as u32;
        let header = &block.header;
        if header.height != h {
            out.push(Violation::HeightMismatch {
                height: h,
                found: header.height,
            });
        }
        if header.prev_permanent != prev {
            out.push(Violation::BrokenPermanentLink { height: h });
        }
        if header.tx_root != tx_root(&block.transactions) {
            out.push(Violation::TxRootMismatch { height: h });
        }
        match data.removable.get(&h) {
            Some(blocks) => {
                if blocks.len() != header.interval_len as usize {
                    out.push(Violation::IntervalLenMismatch {
                        interval: h,
                        declared: header.interval_len,
                        found: blocks.len(),
                    });
                }
                let mut link = prev;
                for (j, b) in blocks.iter().enumerate() {
                    let position = j as u16 + 1;
                    if b.header.prev != link || b.header.interval != h || b.header.position != position {
                        out.push(Violation::BrokenRemovableLink { interval: h, position });
                    }
                    link = b.hash();
                }
                if header.prev_removable != link {
                    out.push(Violation::PrevRemovableMismatch { interval: h });
                }
                if derive_p_list(blocks) != header.p_list {
                    out.push(Violation::PListMismatch { interval: h });
                }
            }
            None if header.interval_len > 0 => {
                if !evidence.contains(&h) {
                    out.push(Violation::MissingDeleteEvidence { interval: h });
                }
            }
            None => {
                if !header.prev_removable.is_null() {
                    out.push(Violation::PrevRemovableMismatch { interval: h });
                }
                if !header.p_list.is_empty() {
                    out.push(Violation::PListMismatch { interval: h });
                }
            }
        }
        prev = block.hash();
    }
    let tip = data.permanent.len() as u32;
    for &i in data.removable.keys().filter(|&&i| i == 0 || i >= tip) {
        out.push(Violation::UnexpectedInterval { interval: i });
    }
}

/// Verifies chain contents from genesis and lists every violation found.
pub fn verify_chain(data: &ChainData, config: LedgerConfig, judge: MinerJudge) -> VerificationReport {
    let mut violations = Vec::new();
    structural_violations(data, &mut violations);
    let replayed = Ledger::replay(data, config, judge);
    let (present, deleted) = match &replayed {
        Ok(ledger) => {
            let statuses = ledger.interval_statuses();
            let present = statuses
                .iter()
                .filter(|(_, s)| **s == IntervalStatus::Present)
                .map(|(i, _)| *i)
                .collect();
            let deleted = statuses
                .iter()
                .filter(|(_, s)| s.is_deleted())
                .map(|(i, _)| *i)
                .collect();
            (present, deleted)
        }
        Err(_) => (Vec::new(), Vec::new()),
    };
    if let Err(ReplayError::Chain { height, error }) = replayed {
        // structural findings at this height already explain the failure
        let explained = violations.iter().any(|v| match v {
            Violation::HeightMismatch { height: h, .. }
            | Violation::BrokenPermanentLink { height: h }
            | Violation::TxRootMismatch { height: h } => *h == height,
            Violation::IntervalLenMismatch { interval, .. }
            | Violation::BrokenRemovableLink { interval, .. }
            | Violation::PrevRemovableMismatch { interval }
            | Violation::PListMismatch { interval } => *interval == height,
            _ => false,
        });
        if !explained {
            violations.push(Violation::StatefulRule {
                height,
                error: error.to_string(),
            });
        }
    }
    VerificationReport {
        tip_height: data.permanent.last().map(PermanentBlock::height),
        tip_hash: data.permanent.last().map_or(NULL_HASH, PermanentBlock::hash),
        present_intervals: present,
        deleted_intervals: deleted,
        violations,
    }
}
