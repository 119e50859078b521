//! Drives a [`SimNetwork`] from a parsed [`Scenario`].

use std::collections::BTreeMap;

use mutachain_core::consent::{audit_trail, decode_consent_value, encode_consent_value, PurposeSchema};
use mutachain_core::mempool::MempoolConfig;
use mutachain_core::verify::{verify_chain, ChainData};
use mutachain_core::{
    digest, header_overhead, KeyPair, Ledger, LedgerConfig, MinerJudge, OutPoint, PubKey,
    RemovalPolicy, Transaction, TxId,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::net::{
    create_network, entity_key, Event, Fault, NodeId, NodeStatus, SimConfig, SimError, SimNetwork,
    SyncReport,
};
use crate::outline::{render_outline, Names};
use crate::scenario::{
    ActionKind, ConsentSpec, DataSpec, DeletePath, IntervalRef, RandomSpec, Scenario, Verb,
};

/// Command-line overrides applied on top of the script's `config` line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub steps: Option<u32>,
    pub policy: Option<RemovalPolicy>,
    pub confirm_depth: Option<u32>,
    pub delete_lock: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] SimError),
    #[error("line {line}: {message}")]
    Action { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Outcome {
    Accepted { txid: TxId },
    Rejected { reason: String },
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActionRecord {
    /// Script line, absent for generated traffic.
    pub line: Option<usize>,
    pub node: NodeId,
    pub entity: String,
    pub action: String,
    #[serde(flatten)]
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepLog {
    pub step: u32,
    pub actions: Vec<ActionRecord>,
    pub delivered: usize,
    pub dropped: usize,
    pub events: Vec<Event>,
    pub syncs: Vec<SyncOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum SyncOutcome {
    Synced(SyncReport),
    Failed { node: NodeId, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Snapshot {
    pub label: String,
    pub step: u32,
    pub node: NodeId,
    pub outline: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeSummary {
    pub id: NodeId,
    pub status: NodeStatus,
    pub fault: Option<Fault>,
    pub tip_height: Option<u32>,
    pub tip_hash: String,
    pub digest: String,
    pub present_intervals: Vec<u32>,
    pub deleted_intervals: Vec<u32>,
    pub valid: bool,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadStats {
    pub blocks: usize,
    /// Second link plus interval length, per block.
    pub fixed_bytes: usize,
    pub p_list_keys: usize,
    pub total_bytes: usize,
    pub max_block_bytes: usize,
    pub mean_block_bytes: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubjectConsent {
    pub subject: String,
    pub history: Vec<u64>,
    pub current: u64,
    pub granted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InfoSummary {
    pub info: TxId,
    pub controller: String,
    pub purposes: Vec<String>,
    pub subjects: Vec<SubjectConsent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub nodes: usize,
    pub seed: u64,
    pub steps: u32,
    pub confirm_depth: u32,
    pub delete_lock: u32,
    pub policy: RemovalPolicy,
    pub mempool: MempoolConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: ConfigEcho,
    pub entities: BTreeMap<String, PubKey>,
    pub steps: Vec<StepLog>,
    pub snapshots: Vec<Snapshot>,
    pub nodes: Vec<NodeSummary>,
    pub agreement: bool,
    pub overhead: OverheadStats,
    pub consents: Vec<InfoSummary>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub net: SimNetwork,
    pub names: Names,
    /// Every removable payload submitted, by entity.
    pub payloads: BTreeMap<String, Vec<(TxId, Vec<u8>)>>,
}

impl RunOutcome {
    /// The first honest online node, used as the reference ledger.
    pub fn reference(&self) -> &Ledger {
        &self
            .net
            .honest_online()
            .next()
            .expect("at least one honest online node")
            .ledger
    }
}

#[derive(Debug, Clone, Default)]
struct Wallet {
    prepares: BTreeMap<u32, TxId>,
    /// Spendable consent output per info.
    consent_tip: BTreeMap<TxId, (OutPoint, u64)>,
    infos: Vec<TxId>,
}

struct Runner {
    net: SimNetwork,
    seed: u64,
    names: Names,
    keys: BTreeMap<String, KeyPair>,
    wallets: BTreeMap<String, Wallet>,
    markers: u64,
    payloads: BTreeMap<String, Vec<(TxId, Vec<u8>)>>,
    traffic: ChaCha8Rng,
}

impl Runner {
    fn key(&mut self, name: &str) -> KeyPair {
        if let Some(k) = self.keys.get(name) {
            return k.clone();
        }
        let k = entity_key(name);
        self.names.insert(k.pubkey(), name);
        self.keys.insert(name.to_string(), k.clone());
        k
    }

    fn marker(&mut self) -> Vec<u8> {
        self.markers += 1;
        let d = digest(format!("marker:{}:{}", self.seed, self.markers).as_bytes());
        d.as_bytes()[..16].to_vec()
    }

    fn ledger(&self, node: NodeId) -> &Ledger {
        &self.net.nodes()[node].ledger
    }

    fn auto_prepare_interval(&self, node: NodeId, pk: &PubKey, wallet: &Wallet) -> Option<u32> {
        let ledger = self.ledger(node);
        ledger
            .present_intervals()
            .keys()
            .rev()
            .copied()
            .find(|&x| {
                let p = ledger.p_list(x).unwrap_or_default();
                p.contains(pk)
                    && p.len() > 1
                    && !wallet.prepares.contains_key(&x)
                    && !ledger.is_delete_targeted(x)
            })
    }

    fn auto_delete_interval(&self, node: NodeId, pk: &PubKey, wallet: &Wallet) -> Option<u32> {
        let ledger = self.ledger(node);
        let live = |x: &u32| ledger.interval_blocks(*x).is_some() && !ledger.is_delete_targeted(*x);
        wallet
            .prepares
            .keys()
            .rev()
            .copied()
            .find(|x| live(x) && ledger.prepare_for(*x, pk).is_some())
            .or_else(|| {
                ledger
                    .present_intervals()
                    .keys()
                    .rev()
                    .copied()
                    .find(|x| live(x) && ledger.p_list(*x) == Some(std::slice::from_ref(pk)))
            })
    }

    /// Builds the transaction for a client verb, or explains why none exists.
    fn build(&mut self, node: NodeId, entity: &str, verb: &Verb) -> Result<(Transaction, String), String> {
        let kp = self.key(entity);
        let pk = kp.pubkey();
        let reg = Transaction::register(&kp).id();
        let wallet = self.wallets.get(entity).cloned().unwrap_or_default();
        Ok(match verb {
            Verb::Register => (Transaction::register(&kp), "register".into()),
            Verb::Rem(data) => {
                let bytes = match data {
                    DataSpec::Bytes(b) => b.clone(),
                    DataSpec::Marker => self.marker(),
                };
                let label = format!("rem {}", crate::outline::data_label(&bytes));
                (Transaction::removable(&kp, reg, bytes), label)
            }
            Verb::Prepare(iv) => {
                let x = match iv {
                    IntervalRef::Fixed(x) => *x,
                    IntervalRef::Auto => self
                        .auto_prepare_interval(node, &pk, &wallet)
                        .ok_or("no interval to prepare")?,
                };
                (Transaction::prepare(&kp, reg, x), format!("prepare {x}"))
            }
            Verb::Delete(iv, path) => {
                let x = match iv {
                    IntervalRef::Fixed(x) => *x,
                    IntervalRef::Auto => self
                        .auto_delete_interval(node, &pk, &wallet)
                        .ok_or("no interval to delete")?,
                };
                let prep = match path {
                    DeletePath::Fast => None,
                    DeletePath::Prepare => Some(*wallet.prepares.get(&x).ok_or("no prepare in wallet")?),
                    DeletePath::Auto => wallet.prepares.get(&x).copied(),
                };
                let via = if prep.is_some() { "prepare" } else { "fast" };
                (Transaction::delete(&kp, x, prep), format!("delete {x} via {via}"))
            }
            Verb::Info { controller, purposes } => {
                let tx = Transaction::info(&kp, reg, controller.as_bytes().to_vec(), purposes.clone())
                    .map_err(|e| e.to_string())?;
                (tx, format!("info {}", purposes.join(",")))
            }
            Verb::Consent { info_of, spec } => {
                let info = *self
                    .wallets
                    .get(info_of)
                    .and_then(|w| w.infos.last())
                    .ok_or_else(|| format!("{info_of} has published no info"))?;
                let value = match spec {
                    ConsentSpec::Value(v) => *v,
                    ConsentSpec::Grant(labels) => {
                        let schema = PurposeSchema::from_ledger(self.ledger(node), &info).map_err(|e| e.to_string())?;
                        encode_consent_value(&schema, labels).map_err(|e| e.to_string())?
                    }
                };
                let input = match wallet.consent_tip.get(&info) {
                    Some((op, v)) if *v != 0 => *op,
                    _ => OutPoint::first(reg),
                };
                (Transaction::consent(&kp, input, info, value), format!("consent {info_of} {value}"))
            }
        })
    }

    fn record_accepted(&mut self, entity: &str, tx: &Transaction) {
        let w = self.wallets.entry(entity.to_string()).or_default();
        let id = tx.id();
        match &tx.payload {
            mutachain_core::Payload::Prepare { interval } => {
                w.prepares.insert(*interval, id);
            }
            mutachain_core::Payload::Info(_) => w.infos.push(id),
            mutachain_core::Payload::Consent { info } => {
                w.consent_tip.insert(*info, (OutPoint::first(id), tx.value));
            }
            mutachain_core::Payload::Removable { data } => {
                self.payloads
                    .entry(entity.to_string())
                    .or_default()
                    .push((id, data.clone()));
            }
            _ => {}
        }
    }

    fn client(&mut self, line: Option<usize>, node: NodeId, entity: &str, verb: &Verb) -> Result<ActionRecord, RunError> {
        if node >= self.net.nodes().len() {
            return Err(RunError::Action {
                line: line.unwrap_or(0),
                message: format!("unknown node {node}"),
            });
        }
        let mut record = ActionRecord {
            line,
            node,
            entity: entity.to_string(),
            action: String::new(),
            outcome: Outcome::Skipped { reason: String::new() },
        };
        if self.net.nodes()[node].status != NodeStatus::Online {
            record.action = format!("{verb:?}");
            record.outcome = Outcome::Skipped {
                reason: format!("node {node} is offline"),
            };
            return Ok(record);
        }
        match self.build(node, entity, verb) {
            Err(reason) => {
                record.action = verb_name(verb).into();
                record.outcome = Outcome::Skipped { reason };
            }
            Ok((tx, label)) => {
                record.action = label;
                record.outcome = match self.net.submit_client_action(node, tx.clone())? {
                    Ok(txid) => {
                        self.record_accepted(entity, &tx);
                        Outcome::Accepted { txid }
                    }
                    Err(r) => Outcome::Rejected { reason: r.to_string() },
                };
            }
        }
        Ok(record)
    }

    fn random_traffic(&mut self, spec: &RandomSpec, step: u32) -> Result<Vec<ActionRecord>, RunError> {
        let online: Vec<NodeId> = self
            .net
            .nodes()
            .iter()
            .filter(|n| n.status == NodeStatus::Online)
            .map(|n| n.id)
            .collect();
        let mut records = Vec::new();
        if online.is_empty() {
            return Ok(records);
        }
        if spec.consent > 0.0 && step == 1 {
            let verb = Verb::Info {
                controller: "E0".into(),
                purposes: vec!["necessary".into(), "functional".into(), "performance".into()],
            };
            records.push(self.client(None, online[0], "E0", &verb)?);
        }
        for e in 0..spec.entities {
            let entity = format!("E{e}");
            let mut verbs = Vec::new();
            if self.traffic.gen_bool(spec.rem) {
                verbs.push(Verb::Rem(DataSpec::Marker));
            }
            if self.traffic.gen_bool(spec.prepare) {
                verbs.push(Verb::Prepare(IntervalRef::Auto));
            }
            if self.traffic.gen_bool(spec.delete) {
                verbs.push(Verb::Delete(IntervalRef::Auto, DeletePath::Auto));
            }
            if spec.consent > 0.0 && step > 1 && e > 0 && self.traffic.gen_bool(spec.consent) {
                verbs.push(Verb::Consent {
                    info_of: "E0".into(),
                    spec: ConsentSpec::Value(self.traffic.gen_range(0..8)),
                });
            }
            for verb in verbs {
                let node = online[self.traffic.gen_range(0..online.len())];
                let rec = self.client(None, node, &entity, &verb)?;
                if !matches!(rec.outcome, Outcome::Skipped { .. }) {
                    records.push(rec);
                }
            }
        }
        Ok(records)
    }
}

fn verb_name(verb: &Verb) -> &'static str {
    match verb {
        Verb::Register => "register",
        Verb::Rem(_) => "rem",
        Verb::Prepare(_) => "prepare",
        Verb::Delete(..) => "delete",
        Verb::Info { .. } => "info",
        Verb::Consent { .. } => "consent",
    }
}

fn overhead_stats(ledger: &Ledger) -> OverheadStats {
    let per_block: Vec<_> = ledger
        .permanent_blocks()
        .iter()
        .map(|b| header_overhead(&b.header))
        .collect();
    let total: usize = per_block.iter().map(|o| o.total).sum();
    OverheadStats {
        blocks: per_block.len(),
        fixed_bytes: per_block.first().map_or(0, |o| o.fixed()),
        p_list_keys: ledger.permanent_blocks().iter().map(|b| b.header.p_list.len()).sum(),
        total_bytes: total,
        max_block_bytes: per_block.iter().map(|o| o.total).max().unwrap_or(0),
        mean_block_bytes: if per_block.is_empty() {
            0.0
        } else {
            total as f64 / per_block.len() as f64
        },
    }
}

pub fn consent_summaries(ledger: &Ledger, names: &Names) -> Vec<InfoSummary> {
    ledger
        .infos()
        .map(|info| {
            let schema = PurposeSchema::from_ledger(ledger, &info.txid).expect("info is on chain");
            let subjects = audit_trail(ledger, &info.txid)
                .expect("info is on chain")
                .into_iter()
                .map(|e| SubjectConsent {
                    subject: names.get(&e.subject),
                    history: e.history.iter().map(|(_, v)| *v).collect(),
                    current: e.current,
                    granted: decode_consent_value(&schema, e.current).unwrap_or_default(),
                })
                .collect();
            InfoSummary {
                info: info.txid,
                controller: names.get(&info.controller),
                purposes: schema.purposes,
                subjects,
            }
        })
        .collect()
}

pub fn node_summaries(net: &SimNetwork) -> Vec<NodeSummary> {
    let cfg = net.config().ledger;
    net.nodes()
        .iter()
        .map(|n| {
            let report = verify_chain(&ChainData::from_ledger(&n.ledger), cfg, MinerJudge::accept_all());
            NodeSummary {
                id: n.id,
                status: n.status,
                fault: n.fault,
                tip_height: n.ledger.tip_height(),
                tip_hash: n.ledger.tip_hash().to_hex(),
                digest: n.ledger.state_digest().to_hex(),
                present_intervals: report.present_intervals.clone(),
                deleted_intervals: report.deleted_intervals.clone(),
                valid: report.is_valid(),
                violations: report.violations.iter().map(ToString::to_string).collect(),
            }
        })
        .collect()
}

pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let c = &sc.config;
    let seed = opts.seed.unwrap_or(c.seed);
    let steps = opts.steps.unwrap_or(sc.steps);
    let ledger = LedgerConfig {
        confirm_depth: opts.confirm_depth.unwrap_or(c.confirm_depth),
        delete_lock: opts.delete_lock.unwrap_or(c.delete_lock),
        policy: opts.policy.unwrap_or(c.policy),
        ..LedgerConfig::default()
    };
    let mempool = MempoolConfig {
        block_tx_capacity: c.block_capacity,
        schedule: c.schedule.clone(),
        ..MempoolConfig::default()
    };

    let mut names = Names::default();
    let mut keys = BTreeMap::new();
    let mut genesis_names = sc.genesis.clone();
    if let Some(spec) = &sc.random {
        genesis_names.extend((0..spec.entities).map(|e| format!("E{e}")));
    }
    let mut genesis = Vec::new();
    for name in &genesis_names {
        let k = entity_key(name);
        let reg = Transaction::register(&k);
        if !genesis.contains(&reg) {
            genesis.push(reg);
        }
        names.insert(k.pubkey(), name.clone());
        keys.insert(name.clone(), k);
    }
    for id in 0..c.nodes {
        names.insert(crate::net::node_key(id).pubkey(), format!("node{id}"));
    }

    let net = create_network(SimConfig {
        nodes: c.nodes,
        proposers: c.proposers.clone(),
        propose_every: c.propose_every,
        ledger,
        mempool: mempool.clone(),
        seed,
        faults: c.faults.clone(),
        partitioned: c.partitioned.clone(),
        late: c.late.clone(),
        message_loss: c.message_loss,
        genesis,
    })?;
    let mut r = Runner {
        net,
        seed,
        names,
        keys,
        wallets: BTreeMap::new(),
        markers: 0,
        payloads: BTreeMap::new(),
        traffic: ChaCha8Rng::seed_from_u64(seed ^ 0x7472_6166_6669_6321),
    };

    let mut logs = Vec::new();
    let mut snapshots = Vec::new();
    for step in 1..=steps {
        let mut actions = Vec::new();
        for a in sc.actions_at(step) {
            if let ActionKind::Client { node, entity, verb } = &a.kind {
                actions.push(r.client(Some(a.line), *node, entity, verb)?);
            }
        }
        if let Some(spec) = &sc.random {
            actions.extend(r.random_traffic(spec, step)?);
        }
        let report = r.net.step();
        let mut syncs = Vec::new();
        for a in sc.actions_at(step) {
            match &a.kind {
                ActionKind::Sync(node) => {
                    if *node >= r.net.nodes().len() {
                        return Err(RunError::Action {
                            line: a.line,
                            message: format!("unknown node {node}"),
                        });
                    }
                    syncs.push(match r.net.sync_node(*node) {
                        Ok(rep) => SyncOutcome::Synced(rep),
                        Err(e) => SyncOutcome::Failed {
                            node: *node,
                            reason: e.to_string(),
                        },
                    });
                }
                ActionKind::Snapshot(label) => {
                    let node = r.net.honest_online().next().map(|n| n.id).unwrap_or(0);
                    snapshots.push(Snapshot {
                        label: label.clone(),
                        step,
                        node,
                        outline: render_outline(r.ledger(node), &r.names),
                    });
                }
                ActionKind::Client { .. } => {}
            }
        }
        logs.push(StepLog {
            step,
            actions,
            delivered: report.delivered,
            dropped: report.dropped,
            events: report.events,
            syncs,
        });
    }

    let reference = r
        .net
        .honest_online()
        .next()
        .map(|n| n.id)
        .unwrap_or(0);
    let ref_ledger = r.ledger(reference);
    let report = RunReport {
        config: ConfigEcho {
            nodes: c.nodes,
            seed,
            steps,
            confirm_depth: ledger.confirm_depth,
            delete_lock: ledger.delete_lock,
            policy: ledger.policy,
            mempool,
        },
        entities: r.keys.iter().map(|(n, k)| (n.clone(), k.pubkey())).collect(),
        steps: logs,
        snapshots,
        nodes: node_summaries(&r.net),
        agreement: r.net.in_agreement(),
        overhead: overhead_stats(ref_ledger),
        consents: consent_summaries(ref_ledger, &r.names),
    };
    Ok(RunOutcome {
        report,
        net: r.net,
        names: r.names,
        payloads: r.payloads,
    })
}
