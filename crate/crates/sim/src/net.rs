//! Deterministic multi-node network.
//!
//! One global FIFO queue carries every message, so delivery order per
//! sender/receiver pair is FIFO and the whole run is a function of the
//! configuration and the submitted actions. Each step drains the queue, lets
//! the scheduled proposer build and announce a block, then drains again.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use mutachain_core::mempool::{Mempool, MempoolConfig, Rejection};
use mutachain_core::verify::{ChainData, ReplayError};
use mutachain_core::{
    build_permanent_block, digest, keypair_from_seed, Hash32, KeyPair, Ledger, LedgerConfig,
    MinerJudge, Payload, PermanentBlock, RemovableBlock, Transaction, TxId,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub type NodeId = usize;

/// Deterministic key for a named entity.
pub fn entity_key(name: &str) -> KeyPair {
    let seed = digest(format!("mutachain-entity:{name}").as_bytes());
    keypair_from_seed(seed.as_bytes()).expect("digest is 32 bytes")
}

pub fn node_key(id: NodeId) -> KeyPair {
    entity_key(&format!("node{id}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Announces blocks whose P-list does not match their interval.
    WrongPList,
    /// Slips a Delete for someone else's interval into its blocks.
    UnauthorizedDelete,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub nodes: usize,
    /// Round-robin proposer order; empty means every node in id order.
    pub proposers: Vec<NodeId>,
    /// A block is proposed every `propose_every` steps.
    pub propose_every: u32,
    pub ledger: LedgerConfig,
    pub mempool: MempoolConfig,
    pub seed: u64,
    pub faults: BTreeMap<NodeId, Fault>,
    /// Nodes whose messages are dropped in both directions.
    pub partitioned: BTreeSet<NodeId>,
    /// Nodes that start offline with only genesis and join through sync.
    pub late: BTreeSet<NodeId>,
    pub message_loss: f64,
    pub genesis: Vec<Transaction>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            nodes: 1,
            proposers: Vec::new(),
            propose_every: 1,
            ledger: LedgerConfig::default(),
            mempool: MempoolConfig::default(),
            seed: 0,
            faults: BTreeMap::new(),
            partitioned: BTreeSet::new(),
            late: BTreeSet::new(),
            message_loss: 0.0,
            genesis: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("sync of node {node} failed: {reason}")]
    Sync { node: NodeId, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FillItem {
    Blocks(Vec<RemovableBlock>),
    /// The peer pruned the interval; the Delete at this height is the proof.
    DeleteEvidence { delete_height: u32, del_txid: TxId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimMessage {
    TxBroadcast(Transaction),
    BlockAnnounce {
        interval: Vec<RemovableBlock>,
        block: PermanentBlock,
    },
    SyncRequest {
        from_height: u32,
    },
    SyncPermanentResponse {
        blocks: Vec<PermanentBlock>,
    },
    SyncFillRequest {
        intervals: Vec<u32>,
    },
    SyncFillResponse {
        items: Vec<(u32, FillItem)>,
    },
}

#[derive(Debug, Clone)]
struct Envelope {
    from: NodeId,
    to: NodeId,
    msg: SimMessage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeStatus {
    Online,
    Offline,
    Syncing,
}

#[derive(Debug, Clone, Default)]
struct SyncSession {
    peer: NodeId,
    base: Vec<PermanentBlock>,
    received: Vec<PermanentBlock>,
    requested: Vec<u32>,
    skipped: Vec<u32>,
    outcome: Option<Result<SyncReport, String>>,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub key: KeyPair,
    pub ledger: Ledger,
    pub mempool: Mempool,
    pub fault: Option<Fault>,
    pub status: NodeStatus,
    sync: Option<SyncSession>,
}

impl Node {
    pub fn is_honest(&self) -> bool {
        self.fault.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Proposed {
        node: NodeId,
        height: u32,
        interval_len: u8,
        txs: usize,
        removable_txs: usize,
    },
    FaultInjected {
        node: NodeId,
        fault: Fault,
        height: u32,
    },
    BlockRejected {
        node: NodeId,
        from: NodeId,
        height: u32,
        error: String,
    },
    Pruned {
        node: NodeId,
        intervals: Vec<u32>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StepReport {
    pub step: u32,
    pub delivered: usize,
    pub dropped: usize,
    pub events: Vec<Event>,
}

impl StepReport {
    pub fn is_idle(&self) -> bool {
        self.delivered == 0 && self.events.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SyncReport {
    pub node: NodeId,
    pub peer: NodeId,
    pub permanent_blocks: usize,
    /// Intervals whose removable blocks were requested and received.
    pub fetched_intervals: Vec<u32>,
    /// Intervals skipped because a matured Delete already proves the gap.
    pub skipped_intervals: Vec<u32>,
    /// Requested intervals the peer answered with delete evidence.
    pub evidence_intervals: Vec<u32>,
    pub digest: Hash32,
    pub peer_digest: Hash32,
}

impl SyncReport {
    pub fn matches_peer(&self) -> bool {
        self.digest == self.peer_digest
    }
}

#[derive(Debug, Clone)]
pub struct SimNetwork {
    cfg: SimConfig,
    nodes: Vec<Node>,
    queue: VecDeque<Envelope>,
    rng: ChaCha8Rng,
    step: u32,
    round: u32,
    archive: Vec<(Vec<RemovableBlock>, PermanentBlock)>,
}

pub fn create_network(cfg: SimConfig) -> Result<SimNetwork, SimError> {
    let invalid = |m: String| Err(SimError::InvalidConfig(m));
    if cfg.nodes == 0 {
        return invalid("at least one node is required".into());
    }
    if cfg.ledger.confirm_depth < 1 {
        return invalid("confirm_depth must be at least 1".into());
    }
    if cfg.propose_every == 0 {
        return invalid("propose_every must be at least 1".into());
    }
    if !(0.0..1.0).contains(&cfg.message_loss) {
        return invalid(format!("message loss {} outside [0, 1)", cfg.message_loss));
    }
    let max_id = cfg.nodes - 1;
    let ids = cfg
        .proposers
        .iter()
        .chain(cfg.faults.keys())
        .chain(&cfg.partitioned)
        .chain(&cfg.late);
    if let Some(bad) = ids.copied().find(|&i| i > max_id) {
        return invalid(format!("node {bad} does not exist"));
    }
    if cfg.late.len() == cfg.nodes {
        return invalid("at least one node must start online".into());
    }

    let mut genesis_txs = cfg.genesis.clone();
    for &id in cfg.faults.keys() {
        let reg = Transaction::register(&node_key(id));
        if !genesis_txs.contains(&reg) {
            genesis_txs.push(reg);
        }
    }
    let mut base = Ledger::new(cfg.ledger);
    let genesis = build_permanent_block(&base, &[], genesis_txs)
        .map_err(|e| SimError::InvalidConfig(format!("genesis: {e}")))?;
    base.apply_permanent(&genesis)
        .map_err(|e| SimError::InvalidConfig(format!("genesis: {e}")))?;

    let nodes = (0..cfg.nodes)
        .map(|id| Node {
            id,
            key: node_key(id),
            ledger: base.clone().with_judge(MinerJudge::accept_all()),
            mempool: Mempool::new(cfg.mempool.clone()),
            fault: cfg.faults.get(&id).copied(),
            status: if cfg.late.contains(&id) {
                NodeStatus::Offline
            } else {
                NodeStatus::Online
            },
            sync: None,
        })
        .collect();
    Ok(SimNetwork {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        cfg,
        nodes,
        queue: VecDeque::new(),
        step: 0,
        round: 0,
        archive: vec![(Vec::new(), genesis)],
    })
}

impl SimNetwork {
    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, SimError> {
        self.nodes.get(id).ok_or(SimError::UnknownNode(id))
    }

    pub fn current_step(&self) -> u32 {
        self.step
    }

    /// Every block an honest proposer produced and applied, genesis first.
    pub fn archive(&self) -> &[(Vec<RemovableBlock>, PermanentBlock)] {
        &self.archive
    }

    pub fn honest_online(&self) -> impl Iterator<Item = &Node> {
        self.nodes
            .iter()
            .filter(|n| n.is_honest() && n.status == NodeStatus::Online && !self.cfg.partitioned.contains(&n.id))
    }

    /// Ledger digests of all honest online nodes, by node id.
    pub fn digests(&self) -> BTreeMap<NodeId, Hash32> {
        self.honest_online().map(|n| (n.id, n.ledger.state_digest())).collect()
    }

    pub fn in_agreement(&self) -> bool {
        let digests = self.digests();
        digests.values().collect::<BTreeSet<_>>().len() <= 1
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    fn broadcast(&mut self, from: NodeId, msg: SimMessage) {
        for to in 0..self.nodes.len() {
            if to != from {
                self.queue.push_back(Envelope {
                    from,
                    to,
                    msg: msg.clone(),
                });
            }
        }
    }

    /// Admits a client transaction at `node` and gossips it on success.
    pub fn submit_client_action(&mut self, node: NodeId, tx: Transaction) -> Result<Result<TxId, Rejection>, SimError> {
        let n = self.nodes.get_mut(node).ok_or(SimError::UnknownNode(node))?;
        if n.status != NodeStatus::Online {
            return Err(SimError::UnknownNode(node));
        }
        let result = n.mempool.submit_transaction(&n.ledger, tx.clone());
        if result.is_ok() {
            self.broadcast(node, SimMessage::TxBroadcast(tx));
        }
        Ok(result)
    }

    pub fn step(&mut self) -> StepReport {
        self.step += 1;
        let mut report = StepReport {
            step: self.step,
            ..StepReport::default()
        };
        self.deliver_all(&mut report);
        if (self.step - 1) % self.cfg.propose_every == 0 {
            let order: Vec<NodeId> = if self.cfg.proposers.is_empty() {
                (0..self.nodes.len()).collect()
            } else {
                self.cfg.proposers.clone()
            };
            let eligible: Vec<NodeId> = order
                .into_iter()
                .filter(|&id| self.nodes[id].status == NodeStatus::Online)
                .collect();
            if !eligible.is_empty() {
                let proposer = eligible[self.round as usize % eligible.len()];
                self.round += 1;
                self.propose(proposer, &mut report);
            }
        }
        self.deliver_all(&mut report);
        report
    }

    fn propose(&mut self, id: NodeId, report: &mut StepReport) {
        let node = &self.nodes[id];
        let (interval, mut block) = node.mempool.build_block_candidate(&node.ledger);
        let height = block.height();
        match node.fault {
            None => {
                let node = &mut self.nodes[id];
                node.ledger
                    .apply_interval_and_block(&interval, &block)
                    .expect("own candidate applies");
                report.events.push(Event::Proposed {
                    node: id,
                    height,
                    interval_len: block.header.interval_len,
                    txs: block.transactions.len(),
                    removable_txs: interval.iter().map(|b| b.transactions.len()).sum(),
                });
                let pruned = node.ledger.prune_deletable();
                node.mempool.on_block_applied(&node.ledger);
                if !pruned.is_empty() {
                    report.events.push(Event::Pruned {
                        node: id,
                        intervals: pruned,
                    });
                }
                self.archive.push((interval.clone(), block.clone()));
            }
            Some(fault) => {
                match fault {
                    Fault::WrongPList => {
                        let me = vec![node.key.pubkey()];
                        block.header.p_list = if block.header.p_list == me { Vec::new() } else { me };
                    }
                    Fault::UnauthorizedDelete => {
                        let me = node.key.pubkey();
                        let target = node
                            .ledger
                            .present_intervals()
                            .keys()
                            .rev()
                            .copied()
                            .find(|&x| {
                                !node.ledger.p_list(x).unwrap_or_default().contains(&me)
                                    && !node.ledger.is_delete_targeted(x)
                            });
                        if let Some(x) = target {
                            let mut txs = block.transactions.clone();
                            txs.push(Transaction::delete(&node.key, x, None));
                            block = build_permanent_block(&node.ledger, &interval, txs)
                                .expect("forged block is well formed");
                        }
                    }
                }
                report.events.push(Event::FaultInjected {
                    node: id,
                    fault,
                    height,
                });
            }
        }
        self.broadcast(id, SimMessage::BlockAnnounce { interval, block });
    }

    /// Delivers queued messages until the queue is empty.
    pub fn deliver_all(&mut self, report: &mut StepReport) {
        while let Some(env) = self.queue.pop_front() {
            let cut = self.cfg.partitioned.contains(&env.from) || self.cfg.partitioned.contains(&env.to);
            let lost = self.cfg.message_loss > 0.0 && self.rng.gen_bool(self.cfg.message_loss);
            let receiver = self.nodes[env.to].status;
            let is_sync = matches!(
                env.msg,
                SimMessage::SyncRequest { .. }
                    | SimMessage::SyncPermanentResponse { .. }
                    | SimMessage::SyncFillRequest { .. }
                    | SimMessage::SyncFillResponse { .. }
            );
            let reachable = receiver == NodeStatus::Online || (is_sync && receiver == NodeStatus::Syncing);
            if cut || lost || !reachable {
                report.dropped += 1;
                continue;
            }
            report.delivered += 1;
            self.handle(env, report);
        }
    }

    fn handle(&mut self, env: Envelope, report: &mut StepReport) {
        let Envelope { from, to, msg } = env;
        match msg {
            SimMessage::TxBroadcast(tx) => {
                let node = &mut self.nodes[to];
                let _ = node.mempool.submit_transaction(&node.ledger, tx);
            }
            SimMessage::BlockAnnounce { interval, block } => {
                let node = &mut self.nodes[to];
                match node.ledger.apply_interval_and_block(&interval, &block) {
                    Ok(()) => {
                        let pruned = node.ledger.prune_deletable();
                        node.mempool.on_block_applied(&node.ledger);
                        if !pruned.is_empty() {
                            report.events.push(Event::Pruned {
                                node: to,
                                intervals: pruned,
                            });
                        }
                    }
                    Err(e) => report.events.push(Event::BlockRejected {
                        node: to,
                        from,
                        height: block.height(),
                        error: e.to_string(),
                    }),
                }
            }
            SimMessage::SyncRequest { from_height } => {
                let blocks = self.nodes[to]
                    .ledger
                    .permanent_blocks()
                    .iter()
                    .skip(from_height as usize)
                    .cloned()
                    .collect();
                self.queue.push_back(Envelope {
                    from: to,
                    to: from,
                    msg: SimMessage::SyncPermanentResponse { blocks },
                });
            }
            SimMessage::SyncPermanentResponse { blocks } => self.on_permanent_response(to, from, blocks),
            SimMessage::SyncFillRequest { intervals } => {
                let peer = &self.nodes[to].ledger;
                let items = intervals
                    .into_iter()
                    .filter_map(|x| match peer.interval_blocks(x) {
                        Some(blocks) => Some((x, FillItem::Blocks(blocks.to_vec()))),
                        None => peer.delete_record(x).map(|d| {
                            (
                                x,
                                FillItem::DeleteEvidence {
                                    delete_height: d.height,
                                    del_txid: d.txid,
                                },
                            )
                        }),
                    })
                    .collect();
                self.queue.push_back(Envelope {
                    from: to,
                    to: from,
                    msg: SimMessage::SyncFillResponse { items },
                });
            }
            SimMessage::SyncFillResponse { items } => self.on_fill_response(to, items),
        }
    }

    fn on_permanent_response(&mut self, id: NodeId, peer: NodeId, blocks: Vec<PermanentBlock>) {
        let cfg = self.cfg.ledger;
        let Some(session) = self.nodes[id].sync.as_mut().filter(|s| s.peer == peer) else {
            return;
        };
        session.received = blocks;
        let all: Vec<&PermanentBlock> = session.base.iter().chain(&session.received).collect();
        let Some(tip) = all.last().map(|b| b.height()) else {
            session.outcome = Some(Err("peer served no blocks".into()));
            return;
        };
        // first Delete targeting each interval, as seen in the headers
        let mut deletes: BTreeMap<u32, u32> = BTreeMap::new();
        for b in &all {
            for tx in &b.transactions {
                if let Payload::Delete { interval } = tx.payload {
                    if interval < b.height() {
                        deletes.entry(interval).or_insert(b.height());
                    }
                }
            }
        }
        let (mut requested, mut skipped) = (Vec::new(), Vec::new());
        for b in &all {
            let x = b.height();
            if b.header.interval_len == 0 {
                continue;
            }
            let matured = deletes
                .get(&x)
                .is_some_and(|&hd| tip - hd >= cfg.confirm_depth && hd - x >= cfg.delete_lock);
            if matured {
                skipped.push(x);
            } else {
                requested.push(x);
            }
        }
        session.requested = requested.clone();
        session.skipped = skipped;
        self.queue.push_back(Envelope {
            from: id,
            to: peer,
            msg: SimMessage::SyncFillRequest { intervals: requested },
        });
    }

    fn on_fill_response(&mut self, id: NodeId, items: Vec<(u32, FillItem)>) {
        let cfg = self.cfg.ledger;
        let peer_digest = |net: &SimNetwork, peer: NodeId| net.nodes[peer].ledger.state_digest();
        let Some(session) = self.nodes[id].sync.take() else {
            return;
        };
        let mut data = ChainData {
            permanent: session.base.iter().chain(&session.received).cloned().collect(),
            removable: BTreeMap::new(),
        };
        let mut fetched = Vec::new();
        let mut evidence = Vec::new();
        let mut failure = None;
        for (x, item) in items {
            if !session.requested.contains(&x) {
                failure = Some(format!("peer sent unrequested interval {x}"));
                break;
            }
            match item {
                FillItem::Blocks(blocks) => {
                    fetched.push(x);
                    data.removable.insert(x, blocks);
                }
                FillItem::DeleteEvidence {
                    delete_height,
                    del_txid,
                } => {
                    let proven = data.permanent.get(delete_height as usize).is_some_and(|b| {
                        b.transactions.iter().any(|t| {
                            t.id() == del_txid && matches!(t.payload, Payload::Delete { interval } if interval == x)
                        })
                    });
                    if !proven {
                        failure = Some(format!("delete evidence for interval {x} does not check out"));
                        break;
                    }
                    evidence.push(x);
                }
            }
        }
        let outcome = match failure {
            Some(reason) => Err(reason),
            None => match Ledger::replay(&data, cfg, MinerJudge::accept_all()) {
                Ok(ledger) => {
                    let node = &mut self.nodes[id];
                    node.ledger = ledger;
                    node.status = NodeStatus::Online;
                    node.mempool = Mempool::new(self.cfg.mempool.clone());
                    Ok(SyncReport {
                        node: id,
                        peer: session.peer,
                        permanent_blocks: session.received.len(),
                        fetched_intervals: fetched,
                        skipped_intervals: session.skipped.clone(),
                        evidence_intervals: evidence,
                        digest: self.nodes[id].ledger.state_digest(),
                        peer_digest: peer_digest(self, session.peer),
                    })
                }
                Err(e @ (ReplayError::Chain { .. }
                | ReplayError::MissingDeleteEvidence { .. }
                | ReplayError::UnexpectedInterval { .. })) => Err(e.to_string()),
            },
        };
        self.nodes[id].sync = Some(SyncSession {
            outcome: Some(outcome),
            ..SyncSession::default()
        });
    }

    /// Brings an offline node up to date: permanent blocks first, then the
    /// removable blocks of every interval not already proven deleted.
    pub fn sync_node(&mut self, late: NodeId) -> Result<SyncReport, SimError> {
        let node = self.nodes.get(late).ok_or(SimError::UnknownNode(late))?;
        let peer = self
            .honest_online()
            .map(|n| n.id)
            .find(|&p| p != late)
            .ok_or_else(|| SimError::Sync {
                node: late,
                reason: "no honest online peer".into(),
            })?;
        let from_height = node.ledger.next_height();
        let base = node.ledger.permanent_blocks().to_vec();
        let node = &mut self.nodes[late];
        node.status = NodeStatus::Syncing;
        node.sync = Some(SyncSession {
            peer,
            base,
            ..SyncSession::default()
        });
        self.queue.push_back(Envelope {
            from: late,
            to: peer,
            msg: SimMessage::SyncRequest { from_height },
        });
        let mut scratch = StepReport::default();
        self.deliver_all(&mut scratch);
        let node = &mut self.nodes[late];
        let outcome = node.sync.take().and_then(|s| s.outcome);
        match outcome {
            Some(Ok(report)) => Ok(report),
            other => {
                node.status = NodeStatus::Offline;
                Err(SimError::Sync {
                    node: late,
                    reason: match other {
                        Some(Err(reason)) => reason,
                        _ => "sync did not complete".into(),
                    },
                })
            }
        }
    }
}
