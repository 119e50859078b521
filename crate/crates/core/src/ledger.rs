//! Validated chain state.
//!
//! The ledger applies removable blocks into a pending buffer and commits them
//! atomically with the permanent block that closes their interval. Every
//! stateful transaction rule lives here, including the authorization rules
//! for Prepare and Delete.
//!
//! Deletion happens in two stages. A confirmed Delete marks its interval as
//! targeted; [`Ledger::prune_deletable`] drops the interval's blocks once the
//! Delete has `confirm_depth` confirmations and the interval is at least
//! `delete_lock` blocks older than the Delete. Permanent headers are never
//! touched, so `prev_removable` of a pruned interval keeps pointing at a
//! block that no longer exists; the confirmed Delete is the evidence for
//! the gap.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{
    derive_p_list, tx_root, PermanentBlock, PermanentBlockHeader, RemovableBlock, P_LIST_CAPACITY,
};
use crate::codec::{CodecError, Encode, Writer};
use crate::crypto::{digest, Hash32, PubKey, NULL_HASH};
use crate::tx::{validate_stateless, InfoPayload, OutPoint, Payload, Transaction, TxError, TxId, TxKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemovalPolicy {
    /// Only keys in the interval's P-list may delete it.
    #[default]
    Authorized,
    /// Anyone may delete; miners decide through a [`MinerJudge`].
    Unauthorized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerConfig {
    /// Permanent blocks that must extend past a Delete before pruning.
    pub confirm_depth: u32,
    /// Minimum distance between an interval and the Delete that prunes it.
    pub delete_lock: u32,
    pub p_list_capacity: usize,
    pub policy: RemovalPolicy,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self {
            confirm_depth: 2,
            delete_lock: 1,
            p_list_capacity: P_LIST_CAPACITY,
            policy: RemovalPolicy::Authorized,
        }
    }
}

/// Predicate deciding whether miners accept a Delete under the unauthorized
/// policy.
#[derive(Clone)]
pub struct MinerJudge(Arc<dyn Fn(&Transaction, &Ledger) -> bool + Send + Sync>);

impl MinerJudge {
    pub fn new(f: impl Fn(&Transaction, &Ledger) -> bool + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn accept_all() -> Self {
        Self::new(|_, _| true)
    }

    pub fn reject_all() -> Self {
        Self::new(|_, _| false)
    }

    pub fn judge(&self, del: &Transaction, ledger: &Ledger) -> bool {
        (self.0)(del, ledger)
    }
}

impl Default for MinerJudge {
    fn default() -> Self {
        Self::accept_all()
    }
}

impl fmt::Debug for MinerJudge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MinerJudge(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum IntervalStatus {
    Present,
    Empty,
    Deleted {
        del_txid: TxId,
        deleted_at_height: u32,
    },
}

impl IntervalStatus {
    pub fn is_deleted(&self) -> bool {
        matches!(self, IntervalStatus::Deleted { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfoRecord {
    pub txid: TxId,
    pub controller: PubKey,
    pub payload: InfoPayload,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsentRecord {
    pub txid: TxId,
    pub subject: PubKey,
    pub info: TxId,
    pub value: u64,
    pub input: OutPoint,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsentUtxo {
    pub subject: PubKey,
    pub info: TxId,
    pub value: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrepareRecord {
    pub txid: TxId,
    pub interval: u32,
    pub signer: PubKey,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeleteRecord {
    pub txid: TxId,
    pub interval: u32,
    pub signer: PubKey,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrepareError {
    #[error("signer {signer} is not in the P-list of interval {interval}")]
    NotEligible { signer: PubKey, interval: u32 },
    #[error("{} removable transactions of other signers are not duplicated", .0.len())]
    MissingDuplicates(Vec<TxId>),
    #[error("interval {0} is already deleted or targeted by a confirmed delete")]
    IntervalAlreadyDeleted(u32),
    #[error("interval {0} is not a confirmed interval")]
    UnknownInterval(u32),
    #[error("signer already has a confirmed prepare for interval {0}")]
    AlreadyPrepared(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeleteError {
    #[error("signer is not the sole P-list key and the delete references no prepare")]
    NotSoleOwnerAndNoPrepare,
    #[error("referenced prepare was signed by a different key")]
    PrepareSignerMismatch,
    #[error("referenced prepare targets interval {prepared}, delete targets {target}")]
    PrepareTargetMismatch { prepared: u32, target: u32 },
    #[error("input {0:?} is not a confirmed prepare")]
    UnknownPrepare(OutPoint),
    #[error("referenced prepare is not confirmed in an earlier block")]
    PrepareNotConfirmed,
    #[error("interval {0} is already deleted or targeted by a confirmed delete")]
    IntervalAlreadyDeleted(u32),
    #[error("interval {0} is not a confirmed, non-empty interval")]
    UnknownInterval(u32),
    #[error("miners rejected the delete")]
    RejectedByMiners,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("unknown parent: expected {expected}, found {found}")]
    UnknownParent { expected: Hash32, found: Hash32 },
    #[error("expected height {expected}, found {found}")]
    HeightMismatch { expected: u32, found: u32 },
    #[error("removable block for interval {found}, expected interval {expected}")]
    IntervalMismatch { expected: u32, found: u32 },
    #[error("removable block at position {found}, expected {expected}")]
    PositionMismatch { expected: u16, found: u16 },
    #[error("header declares interval length {declared}, {buffered} removable blocks buffered")]
    IntervalLenMismatch { declared: u8, buffered: usize },
    #[error("interval longer than 255 blocks")]
    IntervalTooLong,
    #[error("prev_removable does not match the interval: expected {expected}, found {found}")]
    PrevRemovableMismatch { expected: Hash32, found: Hash32 },
    #[error("P-list of block {height} does not match its interval")]
    PListMismatch { height: u32 },
    #[error("{count} distinct signers exceed the P-list capacity of {capacity}")]
    PListOverflow { count: usize, capacity: usize },
    #[error("tx root of block {height} does not match its body")]
    TxRootMismatch { height: u32 },
    #[error("interval blocks do not form a hash chain at position {position}")]
    BrokenIntervalChain { position: u16 },
    #[error("{kind:?} transaction {txid:?} is not allowed in this block type")]
    BlockShape { txid: TxId, kind: TxKind },
    #[error("transaction {txid:?} failed stateless validation: {error}")]
    InvalidTransaction { txid: TxId, error: TxError },
    #[error("transaction {0:?} is already confirmed")]
    DuplicateTransaction(TxId),
    #[error("key {0} is already registered")]
    DuplicateRegistration(PubKey),
    #[error("signer {0} is not registered")]
    UnknownSigner(PubKey),
    #[error("input {0:?} is not the signer's register output")]
    UnknownRegisterRef(OutPoint),
    #[error("input {0:?} references removable state")]
    RemovableTxDependsOnDeletedState(OutPoint),
    #[error("consent input {0:?} is already spent")]
    ConsentInputSpent(OutPoint),
    #[error("consent input {0:?} is not a register or consent output")]
    UnknownConsentInput(OutPoint),
    #[error("consent input {0:?} belongs to another subject")]
    ConsentInputNotOwned(OutPoint),
    #[error("consent input {0:?} belongs to a different info")]
    ConsentInfoMismatch(OutPoint),
    #[error("subject {subject} already has a live consent chain for info {info:?}")]
    ConsentChainExists { subject: PubKey, info: TxId },
    #[error("consent value {value:#x} exceeds the {purposes} declared purposes")]
    ConsentValueOutOfRange { value: u64, purposes: usize },
    #[error("unknown info transaction {0:?}")]
    UnknownInfo(TxId),
    #[error("invalid prepare: {0}")]
    InvalidPrepare(#[from] PrepareError),
    #[error("invalid delete: {0}")]
    InvalidDelete(#[from] DeleteError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Indices derived from applied blocks. Cloned to stage a permanent block
/// so its application is all-or-nothing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct LedgerState {
    intervals: BTreeMap<u32, IntervalStatus>,
    registered: BTreeMap<PubKey, TxId>,
    register_owner: BTreeMap<TxId, PubKey>,
    infos: BTreeMap<TxId, InfoRecord>,
    consent_txs: BTreeMap<TxId, ConsentRecord>,
    consent_utxos: BTreeMap<OutPoint, ConsentUtxo>,
    live_consent: BTreeMap<(PubKey, TxId), OutPoint>,
    prepares: BTreeMap<(u32, PubKey), TxId>,
    prepare_records: BTreeMap<TxId, PrepareRecord>,
    deletes: BTreeMap<u32, DeleteRecord>,
    /// Removable tx id -> intervals currently holding a copy.
    occurrences: BTreeMap<TxId, BTreeSet<u32>>,
    permanent_txs: BTreeMap<TxId, u32>,
}

#[derive(Debug, Clone)]
pub struct Ledger {
    config: LedgerConfig,
    judge: MinerJudge,
    permanent: Vec<PermanentBlock>,
    removable: BTreeMap<u32, Vec<RemovableBlock>>,
    pending: Vec<RemovableBlock>,
    state: LedgerState,
    /// Intervals whose blocks were never available during a replay.
    pub(crate) unavailable: BTreeSet<u32>,
}

impl Ledger {
    pub fn new(config: LedgerConfig) -> Self {
        Self {
            config,
            judge: MinerJudge::default(),
            permanent: Vec::new(),
            removable: BTreeMap::new(),
            pending: Vec::new(),
            state: LedgerState::default(),
            unavailable: BTreeSet::new(),
        }
    }

    pub fn with_judge(mut self, judge: MinerJudge) -> Self {
        self.judge = judge;
        self
    }

    pub fn set_judge(&mut self, judge: MinerJudge) {
        self.judge = judge;
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    // --- read side ---------------------------------------------------------

    pub fn tip_height(&self) -> Option<u32> {
        self.permanent.last().map(PermanentBlock::height)
    }

    /// Hash of the tip permanent block, `NULL_HASH` before genesis.
    pub fn tip_hash(&self) -> Hash32 {
        self.permanent.last().map_or(NULL_HASH, PermanentBlock::hash)
    }

    pub fn next_height(&self) -> u32 {
        self.tip_height().map_or(0, |h| h + 1)
    }

    pub fn permanent_blocks(&self) -> &[PermanentBlock] {
        &self.permanent
    }

    pub fn permanent_block(&self, height: u32) -> Option<&PermanentBlock> {
        self.permanent.get(height as usize)
    }

    pub fn interval_blocks(&self, interval: u32) -> Option<&[RemovableBlock]> {
        self.removable.get(&interval).map(Vec::as_slice)
    }

    pub fn present_intervals(&self) -> &BTreeMap<u32, Vec<RemovableBlock>> {
        &self.removable
    }

    pub fn pending_blocks(&self) -> &[RemovableBlock] {
        &self.pending
    }

    pub fn interval_status(&self, interval: u32) -> Option<IntervalStatus> {
        self.state.intervals.get(&interval).copied()
    }

    pub fn interval_statuses(&self) -> &BTreeMap<u32, IntervalStatus> {
        &self.state.intervals
    }

    pub fn p_list(&self, interval: u32) -> Option<&[PubKey]> {
        self.permanent_block(interval).map(|b| b.header.p_list.as_slice())
    }

    pub fn register_of(&self, key: &PubKey) -> Option<TxId> {
        self.state.registered.get(key).copied()
    }

    pub fn registered_keys(&self) -> impl Iterator<Item = (&PubKey, &TxId)> {
        self.state.registered.iter()
    }

    pub fn is_confirmed_permanent(&self, txid: &TxId) -> bool {
        self.state.permanent_txs.contains_key(txid)
    }

    pub fn occurrences(&self, txid: &TxId) -> Option<&BTreeSet<u32>> {
        self.state.occurrences.get(txid)
    }

    pub fn prepare_record(&self, txid: &TxId) -> Option<&PrepareRecord> {
        self.state.prepare_records.get(txid)
    }

    pub fn prepare_for(&self, interval: u32, signer: &PubKey) -> Option<TxId> {
        self.state.prepares.get(&(interval, *signer)).copied()
    }

    pub fn delete_record(&self, interval: u32) -> Option<&DeleteRecord> {
        self.state.deletes.get(&interval)
    }

    pub fn delete_records(&self) -> impl Iterator<Item = &DeleteRecord> {
        self.state.deletes.values()
    }

    /// True once a confirmed Delete targets the interval, pruned or not.
    pub fn is_delete_targeted(&self, interval: u32) -> bool {
        self.state.deletes.contains_key(&interval)
            || self.interval_status(interval).is_some_and(|s| s.is_deleted())
    }

    pub fn info(&self, txid: &TxId) -> Option<&InfoRecord> {
        self.state.infos.get(txid)
    }

    pub fn infos(&self) -> impl Iterator<Item = &InfoRecord> {
        self.state.infos.values()
    }

    pub fn consent_record(&self, txid: &TxId) -> Option<&ConsentRecord> {
        self.state.consent_txs.get(txid)
    }

    pub fn consent_records(&self) -> impl Iterator<Item = &ConsentRecord> {
        self.state.consent_txs.values()
    }

    pub fn consent_utxos(&self) -> &BTreeMap<OutPoint, ConsentUtxo> {
        &self.state.consent_utxos
    }

    pub fn live_consent(&self, subject: &PubKey, info: &TxId) -> Option<OutPoint> {
        self.state.live_consent.get(&(*subject, *info)).copied()
    }

    /// Digest over the full validated state: tip, present blocks, interval
    /// registry and every index. Two ledgers with equal digests agree on
    /// everything a validator can observe.
    pub fn state_digest(&self) -> Hash32 {
        let mut w = Writer::new();
        let st = &self.state;
        w.u32(self.next_height());
        self.tip_hash().encode(&mut w).expect("fixed width");
        w.u32(self.removable.len() as u32);
        for (i, blocks) in &self.removable {
            w.u32(*i);
            w.u32(blocks.len() as u32);
            for b in blocks {
                b.hash().encode(&mut w).expect("fixed width");
            }
        }
        w.u32(self.pending.len() as u32);
        for b in &self.pending {
            b.hash().encode(&mut w).expect("fixed width");
        }
        w.u32(st.intervals.len() as u32);
        for (i, s) in &st.intervals {
            w.u32(*i);
            match s {
                IntervalStatus::Present => w.u8(0),
                IntervalStatus::Empty => w.u8(1),
                IntervalStatus::Deleted {
                    del_txid,
                    deleted_at_height,
                } => {
                    w.u8(2);
                    w.raw(del_txid.0.as_bytes());
                    w.u32(*deleted_at_height);
                }
            }
        }
        w.u32(st.registered.len() as u32);
        for (k, id) in &st.registered {
            w.raw(k.as_bytes());
            w.raw(id.0.as_bytes());
        }
        w.u32(st.infos.len() as u32);
        for id in st.infos.keys() {
            w.raw(id.0.as_bytes());
        }
        w.u32(st.consent_txs.len() as u32);
        for id in st.consent_txs.keys() {
            w.raw(id.0.as_bytes());
        }
        w.u32(st.consent_utxos.len() as u32);
        for (op, u) in &st.consent_utxos {
            op.encode(&mut w).expect("fixed width");
            w.raw(u.subject.as_bytes());
            w.raw(u.info.0.as_bytes());
            w.u64(u.value);
        }
        w.u32(st.live_consent.len() as u32);
        for ((k, info), op) in &st.live_consent {
            w.raw(k.as_bytes());
            w.raw(info.0.as_bytes());
            op.encode(&mut w).expect("fixed width");
        }
        w.u32(st.prepare_records.len() as u32);
        for r in st.prepare_records.values() {
            w.raw(r.txid.0.as_bytes());
            w.u32(r.interval);
            w.u32(r.height);
        }
        w.u32(st.deletes.len() as u32);
        for r in st.deletes.values() {
            w.raw(r.txid.0.as_bytes());
            w.u32(r.interval);
            w.u32(r.height);
        }
        w.u32(st.occurrences.len() as u32);
        for (id, set) in &st.occurrences {
            w.raw(id.0.as_bytes());
            w.u32(set.len() as u32);
            set.iter().for_each(|i| w.u32(*i));
        }
        w.u32(st.permanent_txs.len() as u32);
        for (id, h) in &st.permanent_txs {
            w.raw(id.0.as_bytes());
            w.u32(*h);
        }
        digest(&w.into_bytes())
    }

    // --- write side --------------------------------------------------------

    pub fn apply_block(&mut self, block: &crate::block::Block) -> Result<(), ChainError> {
        match block {
            crate::block::Block::Removable(b) => self.apply_removable(b),
            crate::block::Block::Permanent(b) => self.apply_permanent(b),
        }
    }

    /// Buffers a removable block of the interval being built on the tip.
    pub fn apply_removable(&mut self, block: &RemovableBlock) -> Result<(), ChainError> {
        let Some(tip) = self.tip_height() else {
            return Err(ChainError::UnknownParent {
                expected: NULL_HASH,
                found: block.header.prev,
            });
        };
        let expected_interval = tip + 1;
        if block.header.interval != expected_interval {
            return Err(ChainError::IntervalMismatch {
                expected: expected_interval,
                found: block.header.interval,
            });
        }
        if self.pending.len() >= u8::MAX as usize {
            return Err(ChainError::IntervalTooLong);
        }
        let expected_pos = self.pending.len() as u16 + 1;
        if block.header.position != expected_pos {
            return Err(ChainError::PositionMismatch {
                expected: expected_pos,
                found: block.header.position,
            });
        }
        let expected_prev = self.pending.last().map_or(self.tip_hash(), RemovableBlock::hash);
        if block.header.prev != expected_prev {
            return Err(ChainError::UnknownParent {
                expected: expected_prev,
                found: block.header.prev,
            });
        }
        let mut seen: BTreeSet<TxId> = self
            .pending
            .iter()
            .flat_map(|b| b.transactions.iter().map(Transaction::id))
            .collect();
        for tx in &block.transactions {
            self.check_removable_tx(tx, &seen)?;
            seen.insert(tx.id());
        }
        self.pending.push(block.clone());
        Ok(())
    }

    /// Drops buffered removable blocks, e.g. after their permanent block was
    /// rejected.
    pub fn discard_pending(&mut self) {
        self.pending.clear();
    }

    pub fn apply_permanent(&mut self, block: &PermanentBlock) -> Result<(), ChainError> {
        self.apply_permanent_inner(block, false)
    }

    /// Applies an interval and its closing permanent block, or nothing.
    pub fn apply_interval_and_block(
        &mut self,
        interval: &[RemovableBlock],
        block: &PermanentBlock,
    ) -> Result<(), ChainError> {
        let saved = std::mem::take(&mut self.pending);
        let result = interval
            .iter()
            .try_for_each(|b| self.apply_removable(b))
            .and_then(|()| self.apply_permanent(block));
        if result.is_err() {
            self.pending = saved;
        }
        result
    }

    /// Stateful admission rules for a removable transaction placed in the
    /// interval on top of the tip. `interval_txids` holds the ids already
    /// placed in that interval.
    pub fn check_removable_tx(
        &self,
        tx: &Transaction,
        interval_txids: &BTreeSet<TxId>,
    ) -> Result<(), ChainError> {
        let txid = tx.id();
        if !tx.kind().is_removable() {
            return Err(ChainError::BlockShape {
                txid,
                kind: tx.kind(),
            });
        }
        validate_stateless(tx).map_err(|error| ChainError::InvalidTransaction { txid, error })?;
        if interval_txids.contains(&txid) {
            return Err(ChainError::DuplicateTransaction(txid));
        }
        let register = self
            .state
            .registered
            .get(&tx.signer)
            .ok_or(ChainError::UnknownSigner(tx.signer))?;
        let input = tx.inputs[0];
        if input != OutPoint::first(*register) {
            if self.state.occurrences.contains_key(&input.txid) {
                return Err(ChainError::RemovableTxDependsOnDeletedState(input));
            }
            return Err(ChainError::UnknownRegisterRef(input));
        }
        Ok(())
    }

    pub(crate) fn apply_permanent_gap(&mut self, block: &PermanentBlock) -> Result<(), ChainError> {
        self.apply_permanent_inner(block, true)
    }

    fn apply_permanent_inner(&mut self, block: &PermanentBlock, gap: bool) -> Result<(), ChainError> {
        let h = self.next_height();
        let header = &block.header;
        if header.height != h {
            return Err(ChainError::HeightMismatch {
                expected: h,
                found: header.height,
            });
        }
        if header.prev_permanent != self.tip_hash() {
            return Err(ChainError::UnknownParent {
                expected: self.tip_hash(),
                found: header.prev_permanent,
            });
        }
        if header.tx_root != tx_root(&block.transactions) {
            return Err(ChainError::TxRootMismatch { height: h });
        }
        if header.p_list.len() > self.config.p_list_capacity {
            return Err(ChainError::PListOverflow {
                count: header.p_list.len(),
                capacity: self.config.p_list_capacity,
            });
        }
        if gap {
            if !self.pending.is_empty() || header.interval_len == 0 || h == 0 {
                return Err(ChainError::IntervalLenMismatch {
                    declared: header.interval_len,
                    buffered: self.pending.len(),
                });
            }
            if header.prev_removable.is_null() {
                return Err(ChainError::PrevRemovableMismatch {
                    expected: header.prev_removable,
                    found: NULL_HASH,
                });
            }
            let sorted = header.p_list.windows(2).all(|w| w[0] < w[1]);
            if header.p_list.is_empty() || !sorted {
                return Err(ChainError::PListMismatch { height: h });
            }
        } else {
            self.check_interval_header(header, &self.pending)?;
        }
        self.check_body(block)?;

        let mut staged = self.state.clone();
        let interval = std::mem::take(&mut self.pending);
        self.stage_interval(&mut staged, h, &interval, gap);
        for tx in &block.transactions {
            if let Err(e) = self.apply_tx(&mut staged, tx, h) {
                self.pending = interval;
                return Err(e);
            }
        }
        self.state = staged;
        self.permanent.push(block.clone());
        if !interval.is_empty() {
            self.removable.insert(h, interval);
        }
        Ok(())
    }

    fn check_interval_header(
        &self,
        header: &PermanentBlockHeader,
        interval: &[RemovableBlock],
    ) -> Result<(), ChainError> {
        if header.interval_len as usize != interval.len() {
            return Err(ChainError::IntervalLenMismatch {
                declared: header.interval_len,
                buffered: interval.len(),
            });
        }
        let expected_prev = interval.last().map_or(NULL_HASH, RemovableBlock::hash);
        if header.prev_removable != expected_prev {
            return Err(ChainError::PrevRemovableMismatch {
                expected: expected_prev,
                found: header.prev_removable,
            });
        }
        let derived = derive_p_list(interval);
        if derived.len() > self.config.p_list_capacity {
            return Err(ChainError::PListOverflow {
                count: derived.len(),
                capacity: self.config.p_list_capacity,
            });
        }
        if header.p_list != derived {
            return Err(ChainError::PListMismatch {
                height: header.height,
            });
        }
        Ok(())
    }

    fn check_body(&self, block: &PermanentBlock) -> Result<(), ChainError> {
        let mut seen = BTreeSet::new();
        for tx in &block.transactions {
            let txid = tx.id();
            if tx.kind().is_removable() {
                return Err(ChainError::BlockShape {
                    txid,
                    kind: tx.kind(),
                });
            }
            validate_stateless(tx).map_err(|error| ChainError::InvalidTransaction { txid, error })?;
            if !seen.insert(txid) || self.state.permanent_txs.contains_key(&txid) {
                return Err(ChainError::DuplicateTransaction(txid));
            }
        }
        Ok(())
    }

    fn stage_interval(&self, st: &mut LedgerState, h: u32, interval: &[RemovableBlock], gap: bool) {
        let status = if gap || !interval.is_empty() {
            IntervalStatus::Present
        } else {
            IntervalStatus::Empty
        };
        st.intervals.insert(h, status);
        for tx in interval.iter().flat_map(|b| &b.transactions) {
            st.occurrences.entry(tx.id()).or_default().insert(h);
        }
    }

    fn require_register_input(&self, st: &LedgerState, tx: &Transaction) -> Result<TxId, ChainError> {
        let register = st
            .registered
            .get(&tx.signer)
            .copied()
            .ok_or(ChainError::UnknownSigner(tx.signer))?;
        let input = tx.inputs[0];
        if input != OutPoint::first(register) {
            return Err(ChainError::UnknownRegisterRef(input));
        }
        Ok(register)
    }

    /// Applies one permanent-block transaction at height `h`. All checks run
    /// before any mutation, so a failed call leaves `st` untouched.
    fn apply_tx(&self, st: &mut LedgerState, tx: &Transaction, h: u32) -> Result<(), ChainError> {
        let txid = tx.id();
        if st.permanent_txs.contains_key(&txid) {
            return Err(ChainError::DuplicateTransaction(txid));
        }
        match &tx.payload {
            Payload::Register => {
                if st.registered.contains_key(&tx.signer) {
                    return Err(ChainError::DuplicateRegistration(tx.signer));
                }
                st.registered.insert(tx.signer, txid);
                st.register_owner.insert(txid, tx.signer);
            }
            Payload::Removable { .. } => {
                return Err(ChainError::BlockShape {
                    txid,
                    kind: TxKind::Removable,
                })
            }
            Payload::Prepare { interval } => {
                self.require_register_input(st, tx)?;
                self.check_prepare(st, tx, h)?;
                st.prepares.insert((*interval, tx.signer), txid);
                st.prepare_records.insert(
                    txid,
                    PrepareRecord {
                        txid,
                        interval: *interval,
                        signer: tx.signer,
                        height: h,
                    },
                );
            }
            Payload::Delete { interval } => {
                if !st.registered.contains_key(&tx.signer) {
                    return Err(ChainError::UnknownSigner(tx.signer));
                }
                self.check_delete(st, tx, h)?;
                st.deletes.insert(
                    *interval,
                    DeleteRecord {
                        txid,
                        interval: *interval,
                        signer: tx.signer,
                        height: h,
                    },
                );
                if self.unavailable.contains(interval) {
                    st.intervals.insert(
                        *interval,
                        IntervalStatus::Deleted {
                            del_txid: txid,
                            deleted_at_height: h,
                        },
                    );
                }
            }
            Payload::Info(info) => {
                self.require_register_input(st, tx)?;
                st.infos.insert(
                    txid,
                    InfoRecord {
                        txid,
                        controller: tx.signer,
                        payload: info.clone(),
                        height: h,
                    },
                );
            }
            Payload::Consent { info } => {
                let register = st
                    .registered
                    .get(&tx.signer)
                    .copied()
                    .ok_or(ChainError::UnknownSigner(tx.signer))?;
                let schema = st.infos.get(info).ok_or(ChainError::UnknownInfo(*info))?;
                let purposes = schema.payload.purposes.len();
                if purposes < 64 && tx.value >> purposes != 0 {
                    return Err(ChainError::ConsentValueOutOfRange {
                        value: tx.value,
                        purposes,
                    });
                }
                let input = tx.inputs[0];
                let live = st.live_consent.get(&(tx.signer, *info)).copied();
                // retired: revoked tip replaced by a fresh chain
                let mut retired = None;
                if input == OutPoint::first(register) {
                    if let Some(tip) = live {
                        let tip_value = st.consent_utxos.get(&tip).map_or(0, |u| u.value);
                        if tip_value != 0 {
                            return Err(ChainError::ConsentChainExists {
                                subject: tx.signer,
                                info: *info,
                            });
                        }
                        retired = Some(tip);
                    }
                } else if let Some(utxo) = st.consent_utxos.get(&input) {
                    if utxo.subject != tx.signer {
                        return Err(ChainError::ConsentInputNotOwned(input));
                    }
                    if utxo.info != *info {
                        return Err(ChainError::ConsentInfoMismatch(input));
                    }
                    retired = Some(input);
                } else if st.consent_txs.contains_key(&input.txid) && input.index == 0 {
                    return Err(ChainError::ConsentInputSpent(input));
                } else {
                    return Err(ChainError::UnknownConsentInput(input));
                }
                if let Some(op) = retired {
                    st.consent_utxos.remove(&op);
                }
                let out = OutPoint::first(txid);
                st.consent_utxos.insert(
                    out,
                    ConsentUtxo {
                        subject: tx.signer,
                        info: *info,
                        value: tx.value,
                    },
                );
                st.live_consent.insert((tx.signer, *info), out);
                st.consent_txs.insert(
                    txid,
                    ConsentRecord {
                        txid,
                        subject: tx.signer,
                        info: *info,
                        value: tx.value,
                        input,
                        height: h,
                    },
                );
            }
        }
        st.permanent_txs.insert(txid, h);
        Ok(())
    }

    /// Checks a Prepare confirmed by the permanent block at height
    /// `confirming_height`.
    pub fn validate_prepare(&self, prep: &Transaction, confirming_height: u32) -> Result<(), PrepareError> {
        self.check_prepare(&self.state, prep, confirming_height)
    }

    fn check_prepare(&self, st: &LedgerState, prep: &Transaction, k: u32) -> Result<(), PrepareError> {
        let Some(x) = prep.target_interval().filter(|_| prep.kind() == TxKind::Prepare) else {
            return Err(PrepareError::UnknownInterval(u32::MAX));
        };
        let Some(header) = self.permanent_block(x).filter(|_| x < k).map(|b| &b.header) else {
            return Err(PrepareError::UnknownInterval(x));
        };
        if st.deletes.contains_key(&x) || st.intervals.get(&x).is_some_and(|s| s.is_deleted()) {
            return Err(PrepareError::IntervalAlreadyDeleted(x));
        }
        if !header.p_list.contains(&prep.signer) {
            return Err(PrepareError::NotEligible {
                signer: prep.signer,
                interval: x,
            });
        }
        if st.prepares.contains_key(&(x, prep.signer)) {
            return Err(PrepareError::AlreadyPrepared(x));
        }
        let Some(blocks) = self.removable.get(&x) else {
            // contents were never available to this replay
            return Ok(());
        };
        let missing: Vec<TxId> = blocks
            .iter()
            .flat_map(|b| &b.transactions)
            .filter(|tx| tx.signer != prep.signer)
            .map(Transaction::id)
            .filter(|id| {
                !st.occurrences
                    .get(id)
                    .is_some_and(|js| js.range(x + 1..=k).next().is_some())
            })
            .collect();
        if missing.is_empty() || self.unavailable.range(x + 1..=k).next().is_some() {
            return Ok(());
        }
        Err(PrepareError::MissingDuplicates(missing))
    }

    /// Checks a Delete as if confirmed by the next permanent block.
    pub fn validate_delete(&self, del: &Transaction) -> Result<(), DeleteError> {
        self.check_delete(&self.state, del, self.next_height())
    }

    fn check_delete(&self, st: &LedgerState, del: &Transaction, k: u32) -> Result<(), DeleteError> {
        let Some(x) = del.target_interval().filter(|_| del.kind() == TxKind::Delete) else {
            return Err(DeleteError::UnknownInterval(u32::MAX));
        };
        let Some(header) = self.permanent_block(x).filter(|_| x < k).map(|b| &b.header) else {
            return Err(DeleteError::UnknownInterval(x));
        };
        if st.deletes.contains_key(&x) || st.intervals.get(&x).is_some_and(|s| s.is_deleted()) {
            return Err(DeleteError::IntervalAlreadyDeleted(x));
        }
        match self.config.policy {
            RemovalPolicy::Unauthorized => {
                if header.interval_len == 0 {
                    return Err(DeleteError::UnknownInterval(x));
                }
                if self.judge.judge(del, self) {
                    Ok(())
                } else {
                    Err(DeleteError::RejectedByMiners)
                }
            }
            RemovalPolicy::Authorized => match del.inputs.first() {
                Some(input) => {
                    let rec = st
                        .prepare_records
                        .get(&input.txid)
                        .filter(|_| input.index == 0)
                        .ok_or(DeleteError::UnknownPrepare(*input))?;
                    if rec.height >= k {
                        return Err(DeleteError::PrepareNotConfirmed);
                    }
                    if rec.interval != x {
                        return Err(DeleteError::PrepareTargetMismatch {
                            prepared: rec.interval,
                            target: x,
                        });
                    }
                    if rec.signer != del.signer {
                        return Err(DeleteError::PrepareSignerMismatch);
                    }
                    Ok(())
                }
                None if header.p_list.as_slice() == [del.signer] => Ok(()),
                None => Err(DeleteError::NotSoleOwnerAndNoPrepare),
            },
        }
    }

    /// Intervals whose confirmed Delete has matured but whose blocks are
    /// still stored.
    pub fn deletable_intervals(&self) -> Vec<u32> {
        let Some(tip) = self.tip_height() else {
            return Vec::new();
        };
        self.state
            .deletes
            .values()
            .filter(|d| self.state.intervals.get(&d.interval) == Some(&IntervalStatus::Present))
            .filter(|d| tip - d.height >= self.config.confirm_depth)
            .filter(|d| d.height - d.interval >= self.config.delete_lock)
            .map(|d| d.interval)
            .collect()
    }

    /// Drops the blocks of every matured deleted interval. Idempotent.
    pub fn prune_deletable(&mut self) -> Vec<u32> {
        let ready = self.deletable_intervals();
        for &x in &ready {
            let rec = self.state.deletes[&x];
            self.removable.remove(&x);
            self.state.intervals.insert(
                x,
                IntervalStatus::Deleted {
                    del_txid: rec.txid,
                    deleted_at_height: rec.height,
                },
            );
            self.state.occurrences.retain(|_, js| {
                js.remove(&x);
                !js.is_empty()
            });
        }
        ready
    }

    /// Stages a block candidate on top of the tip.
    pub fn begin_candidate(&self, interval: Vec<RemovableBlock>) -> Result<CandidateBuilder<'_>, ChainError> {
        let h = self.next_height();
        check_interval_chain(self, &interval)?;
        let derived = derive_p_list(&interval);
        if derived.len() > self.config.p_list_capacity {
            return Err(ChainError::PListOverflow {
                count: derived.len(),
                capacity: self.config.p_list_capacity,
            });
        }
        let mut state = self.state.clone();
        self.stage_interval(&mut state, h, &interval, false);
        Ok(CandidateBuilder {
            ledger: self,
            state,
            height: h,
            interval,
            txs: Vec::new(),
        })
    }
}

/// Scratch state for assembling a permanent block: transactions are
/// admitted one by one against the state they would see in the block.
#[derive(Debug)]
pub struct CandidateBuilder<'a> {
    ledger: &'a Ledger,
    state: LedgerState,
    height: u32,
    interval: Vec<RemovableBlock>,
    txs: Vec<Transaction>,
}

impl CandidateBuilder<'_> {
    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    /// Admits `tx` if it would apply cleanly after the ones already admitted.
    pub fn try_push(&mut self, tx: &Transaction) -> Result<(), ChainError> {
        let txid = tx.id();
        if tx.kind().is_removable() {
            return Err(ChainError::BlockShape {
                txid,
                kind: tx.kind(),
            });
        }
        validate_stateless(tx).map_err(|error| ChainError::InvalidTransaction { txid, error })?;
        self.ledger.apply_tx(&mut self.state, tx, self.height)?;
        self.txs.push(tx.clone());
        Ok(())
    }

    pub fn finish(self) -> Result<(Vec<RemovableBlock>, PermanentBlock), ChainError> {
        let block = build_permanent_block(self.ledger, &self.interval, self.txs)?;
        Ok((self.interval, block))
    }
}

fn check_interval_chain(ledger: &Ledger, interval: &[RemovableBlock]) -> Result<(), ChainError> {
    let h = ledger.next_height();
    if interval.len() > u8::MAX as usize {
        return Err(ChainError::IntervalTooLong);
    }
    let mut prev = ledger.tip_hash();
    for (j, b) in interval.iter().enumerate() {
        let position = j as u16 + 1;
        if h == 0 || b.header.interval != h || b.header.position != position || b.header.prev != prev {
            return Err(ChainError::BrokenIntervalChain { position });
        }
        prev = b.hash();
    }
    Ok(())
}

/// Assembles the permanent block closing `interval_blocks` on the ledger tip.
pub fn build_permanent_block(
    ledger: &Ledger,
    interval_blocks: &[RemovableBlock],
    txs: Vec<Transaction>,
) -> Result<PermanentBlock, ChainError> {
    check_interval_chain(ledger, interval_blocks)?;
    let p_list = derive_p_list(interval_blocks);
    if p_list.len() > ledger.config.p_list_capacity {
        return Err(ChainError::PListOverflow {
            count: p_list.len(),
            capacity: ledger.config.p_list_capacity,
        });
    }
    for tx in &txs {
        let txid = tx.id();
        if tx.kind().is_removable() {
            return Err(ChainError::BlockShape {
                txid,
                kind: tx.kind(),
            });
        }
        validate_stateless(tx).map_err(|error| ChainError::InvalidTransaction { txid, error })?;
    }
    let block = PermanentBlock {
        header: PermanentBlockHeader {
            height: ledger.next_height(),
            prev_permanent: ledger.tip_hash(),
            prev_removable: interval_blocks.last().map_or(NULL_HASH, RemovableBlock::hash),
            interval_len: interval_blocks.len() as u8,
            p_list,
            tx_root: tx_root(&txs),
        },
        transactions: txs,
    };
    crate::codec::canonical_encode(&block)?;
    Ok(block)
}
