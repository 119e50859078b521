//! Pending transactions and block-candidate assembly.
//!
//! Removable transactions are placed into the next interval in a fixed
//! order: the re-inclusion queue first, then submission order. Submitting a
//! Prepare for interval `x` queues byte-identical copies of every removable
//! transaction in `I_x` signed by someone else, so they survive the
//! deletion of `I_x`.

use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{build_removable_block, PermanentBlock, RemovableBlock};
use crate::ledger::{ChainError, DeleteError, Ledger, PrepareError};
use crate::tx::{validate_stateless, OutPoint, Payload, Transaction, TxError, TxId, TxKind};

/// Target number of removable blocks per interval, by height.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntervalSchedule {
    Constant(u8),
    /// Repeats the list: height `h` uses `list[h % len]`.
    Cycle(Vec<u8>),
    Scripted { by_height: BTreeMap<u32, u8>, default: u8 },
}

impl IntervalSchedule {
    pub fn target(&self, height: u32) -> u8 {
        if height == 0 {
            return 0;
        }
        match self {
            IntervalSchedule::Constant(n) => *n,
            IntervalSchedule::Cycle(list) if list.is_empty() => 0,
            IntervalSchedule::Cycle(list) => list[height as usize % list.len()],
            IntervalSchedule::Scripted { by_height, default } => {
                by_height.get(&height).copied().unwrap_or(*default)
            }
        }
    }
}

impl Default for IntervalSchedule {
    fn default() -> Self {
        IntervalSchedule::Constant(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MempoolConfig {
    /// Transactions per removable block.
    pub block_tx_capacity: usize,
    /// Transactions per permanent block.
    pub permanent_tx_capacity: usize,
    pub schedule: IntervalSchedule,
}

impl Default for MempoolConfig {
    fn default() -> Self {
        Self {
            block_tx_capacity: 8,
            permanent_tx_capacity: 256,
            schedule: IntervalSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("stateless validation failed: {0}")]
    StatelessInvalid(TxError),
    #[error("transaction already pending")]
    AlreadyPending,
    #[error("transaction already confirmed")]
    AlreadyConfirmed,
    #[error("signer is not registered")]
    UnknownSigner,
    #[error("prepare not admissible: {0}")]
    IneligiblePrepare(PrepareError),
    #[error("another prepare for interval {0} is already pending")]
    PrepareConflict(u32),
    #[error("delete has neither the fast path nor a prepare: {0}")]
    PrematureDelete(DeleteError),
    #[error("invalid delete: {0}")]
    InvalidDelete(DeleteError),
    #[error("{0}")]
    Inadmissible(ChainError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReinclusionEntry {
    pub tx: Transaction,
    pub origin_interval: u32,
    pub prepare: TxId,
}

#[derive(Debug, Clone, Default)]
pub struct Mempool {
    config: MempoolConfig,
    pending: IndexMap<TxId, Transaction>,
    reinclusion: Vec<ReinclusionEntry>,
}

impl Mempool {
    pub fn new(config: MempoolConfig) -> Self {
        Self {
            config,
            pending: IndexMap::new(),
            reinclusion: Vec::new(),
        }
    }

    pub fn config(&self) -> &MempoolConfig {
        &self.config
    }

    pub fn set_schedule(&mut self, schedule: IntervalSchedule) {
        self.config.schedule = schedule;
    }

    pub fn pending(&self) -> impl Iterator<Item = &Transaction> {
        self.pending.values()
    }

    pub fn contains(&self, txid: &TxId) -> bool {
        self.pending.contains_key(txid)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty() && self.reinclusion.is_empty()
    }

    pub fn reinclusion_queue(&self) -> &[ReinclusionEntry] {
        &self.reinclusion
    }

    fn register_pending(&self, key: &crate::crypto::PubKey) -> Option<TxId> {
        self.pending
            .iter()
            .find(|(_, t)| t.kind() == TxKind::Register && t.signer == *key)
            .map(|(id, _)| *id)
    }

    pub fn submit_transaction(&mut self, ledger: &Ledger, tx: Transaction) -> Result<TxId, Rejection> {
        validate_stateless(&tx).map_err(Rejection::StatelessInvalid)?;
        let txid = tx.id();
        if self.pending.contains_key(&txid) {
            return Err(Rejection::AlreadyPending);
        }
        if ledger.is_confirmed_permanent(&txid) || ledger.occurrences(&txid).is_some() {
            return Err(Rejection::AlreadyConfirmed);
        }
        let register = ledger
            .register_of(&tx.signer)
            .or_else(|| self.register_pending(&tx.signer));
        match &tx.payload {
            Payload::Register => {
                if ledger.register_of(&tx.signer).is_some() {
                    return Err(Rejection::Inadmissible(ChainError::DuplicateRegistration(
                        tx.signer,
                    )));
                }
            }
            Payload::Removable { .. } | Payload::Info(_) => {
                let register = register.ok_or(Rejection::UnknownSigner)?;
                if tx.inputs[0] != OutPoint::first(register) {
                    return Err(Rejection::Inadmissible(ChainError::UnknownRegisterRef(tx.inputs[0])));
                }
            }
            Payload::Prepare { interval } => {
                let register = ledger.register_of(&tx.signer).ok_or(Rejection::UnknownSigner)?;
                if tx.inputs[0] != OutPoint::first(register) {
                    return Err(Rejection::Inadmissible(ChainError::UnknownRegisterRef(tx.inputs[0])));
                }
                match ledger.validate_prepare(&tx, ledger.next_height()) {
                    Ok(()) | Err(PrepareError::MissingDuplicates(_)) => {}
                    Err(e) => return Err(Rejection::IneligiblePrepare(e)),
                }
                if self
                    .pending
                    .values()
                    .any(|t| t.kind() == TxKind::Prepare && t.target_interval() == Some(*interval))
                {
                    return Err(Rejection::PrepareConflict(*interval));
                }
                self.enqueue_reinclusion(ledger, &tx, *interval);
            }
            Payload::Delete { interval } => {
                ledger.register_of(&tx.signer).ok_or(Rejection::UnknownSigner)?;
                match ledger.validate_delete(&tx) {
                    Ok(()) => {}
                    Err(DeleteError::UnknownPrepare(_) | DeleteError::PrepareNotConfirmed)
                        if self.co_pending_prepare(&tx, *interval) => {}
                    Err(
                        e @ (DeleteError::NotSoleOwnerAndNoPrepare
                        | DeleteError::UnknownPrepare(_)
                        | DeleteError::PrepareNotConfirmed),
                    ) => return Err(Rejection::PrematureDelete(e)),
                    Err(e) => return Err(Rejection::InvalidDelete(e)),
                }
            }
            Payload::Consent { .. } => {
                let register = register.ok_or(Rejection::UnknownSigner)?;
                let input = tx.inputs[0];
                if input != OutPoint::first(register)
                    && ledger.is_confirmed_permanent(&input.txid)
                    && !ledger.consent_utxos().contains_key(&input)
                {
                    return Err(Rejection::Inadmissible(ChainError::ConsentInputSpent(input)));
                }
            }
        }
        self.pending.insert(txid, tx);
        Ok(txid)
    }

    /// True if the delete's input is a pending Prepare by the same signer
    /// for the same interval.
    fn co_pending_prepare(&self, del: &Transaction, interval: u32) -> bool {
        let Some(input) = del.inputs.first().filter(|op| op.index == 0) else {
            return false;
        };
        self.pending.get(&input.txid).is_some_and(|p| {
            p.kind() == TxKind::Prepare && p.signer == del.signer && p.target_interval() == Some(interval)
        })
    }

    fn enqueue_reinclusion(&mut self, ledger: &Ledger, prep: &Transaction, x: u32) {
        let prep_id = prep.id();
        let Some(blocks) = ledger.interval_blocks(x) else {
            return;
        };
        let queued: BTreeSet<TxId> = self.reinclusion.iter().map(|e| e.tx.id()).collect();
        for tx in blocks.iter().flat_map(|b| &b.transactions) {
            if tx.signer != prep.signer && !queued.contains(&tx.id()) {
                self.reinclusion.push(ReinclusionEntry {
                    tx: tx.clone(),
                    origin_interval: x,
                    prepare: prep_id,
                });
            }
        }
    }

    /// Assembles the next interval and the permanent block closing it. The
    /// result applies cleanly to `ledger`; anything unplaceable stays queued.
    pub fn build_block_candidate(&self, ledger: &Ledger) -> (Vec<RemovableBlock>, PermanentBlock) {
        let h = ledger.next_height();
        let cap = self.config.block_tx_capacity.max(1);
        let max_txs = self.config.schedule.target(h) as usize * cap;
        let p_cap = ledger.config().p_list_capacity;

        let mut placed: Vec<Transaction> = Vec::new();
        let mut seen = BTreeSet::new();
        let mut signers = BTreeSet::new();
        let candidates = self
            .reinclusion
            .iter()
            .map(|e| &e.tx)
            .chain(self.pending.values().filter(|t| t.kind().is_removable()));
        for tx in candidates {
            if placed.len() >= max_txs {
                break;
            }
            if !signers.contains(&tx.signer) && signers.len() >= p_cap {
                continue;
            }
            if ledger.check_removable_tx(tx, &seen).is_err() {
                continue;
            }
            seen.insert(tx.id());
            signers.insert(tx.signer);
            placed.push(tx.clone());
        }

        let mut interval = Vec::new();
        let mut prev = ledger.tip_hash();
        for (j, chunk) in placed.chunks(cap).enumerate() {
            let block = build_removable_block(prev, h, j as u16 + 1, chunk.to_vec())
                .expect("placed transactions are removable and valid");
            prev = block.hash();
            interval.push(block);
        }

        let mut builder = ledger
            .begin_candidate(interval)
            .expect("interval respects the chain and P-list capacity");
        let mut remaining: Vec<&Transaction> =
            self.pending.values().filter(|t| !t.kind().is_removable()).collect();
        // repeat so a transaction queued before its dependency still lands
        loop {
            let before = remaining.len();
            remaining.retain(|tx| {
                builder.len() >= self.config.permanent_tx_capacity || builder.try_push(tx).is_err()
            });
            if remaining.len() == before || builder.len() >= self.config.permanent_tx_capacity {
                break;
            }
        }
        builder.finish().expect("candidate built from validated parts")
    }

    /// Drops what the ledger now confirms or makes impossible.
    pub fn on_block_applied(&mut self, ledger: &Ledger) {
        self.pending.retain(|id, tx| {
            if ledger.is_confirmed_permanent(id) || ledger.occurrences(id).is_some() {
                return false;
            }
            match &tx.payload {
                Payload::Register => ledger.register_of(&tx.signer).is_none(),
                Payload::Prepare { interval } => {
                    !ledger.is_delete_targeted(*interval)
                        && ledger.prepare_for(*interval, &tx.signer).is_none()
                }
                Payload::Delete { interval } => !ledger.is_delete_targeted(*interval),
                _ => true,
            }
        });
        let pending = &self.pending;
        self.reinclusion.retain(|e| {
            let duplicated = ledger
                .occurrences(&e.tx.id())
                .is_some_and(|js| js.range(e.origin_interval + 1..).next().is_some());
            let prepare_alive =
                pending.contains_key(&e.prepare) || ledger.prepare_record(&e.prepare).is_some();
            !duplicated && prepare_alive && !ledger.is_delete_targeted(e.origin_interval)
        });
    }
}
