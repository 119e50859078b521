//! Line-oriented scenario scripts.
//!
//! ```text
//! # two entities, one deletion
//! config nodes=3 confirm_depth=1 lock=0 schedule=1
//! genesis register A B
//! at 1 node 0 rem A data="m"
//! at 2 node 0 prepare A interval=1
//! at 2 node 0 delete A interval=1 via=prepare
//! at 2 snapshot "State 1"
//! run 4
//! ```
//!
//! Within a step, client actions are submitted first, then the network steps,
//! then syncs run and snapshots are taken, each in script order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use mutachain_core::mempool::IntervalSchedule;
use mutachain_core::RemovalPolicy;
use thiserror::Error;

use crate::net::{Fault, NodeId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSpec {
    Bytes(Vec<u8>),
    /// A fresh 16-byte marker, unique within the run.
    Marker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalRef {
    Fixed(u32),
    /// The newest live interval the entity signed into.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeletePath {
    Prepare,
    Fast,
    /// Prepare path if the wallet holds a prepare for the interval.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsentSpec {
    Grant(Vec<String>),
    Value(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verb {
    Register,
    Rem(DataSpec),
    Prepare(IntervalRef),
    Delete(IntervalRef, DeletePath),
    Info {
        controller: String,
        purposes: Vec<String>,
    },
    Consent {
        /// Entity whose latest Info is consented to.
        info_of: String,
        spec: ConsentSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionKind {
    Client {
        node: NodeId,
        entity: String,
        verb: Verb,
    },
    Snapshot(String),
    Sync(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledAction {
    pub at_step: u32,
    pub line: usize,
    pub kind: ActionKind,
}

/// Per-step probabilities for generated client traffic.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSpec {
    pub entities: usize,
    pub rem: f64,
    pub prepare: f64,
    pub delete: f64,
    pub consent: f64,
}

impl Default for RandomSpec {
    fn default() -> Self {
        Self {
            entities: 4,
            rem: 0.6,
            prepare: 0.15,
            delete: 0.2,
            consent: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub nodes: usize,
    pub proposers: Vec<NodeId>,
    pub propose_every: u32,
    pub schedule: IntervalSchedule,
    pub block_capacity: usize,
    pub confirm_depth: u32,
    pub delete_lock: u32,
    pub policy: RemovalPolicy,
    pub seed: u64,
    pub late: BTreeSet<NodeId>,
    pub faults: BTreeMap<NodeId, Fault>,
    pub partitioned: BTreeSet<NodeId>,
    pub message_loss: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            nodes: 1,
            proposers: Vec::new(),
            propose_every: 1,
            schedule: IntervalSchedule::Constant(1),
            block_capacity: 8,
            confirm_depth: 2,
            delete_lock: 1,
            policy: RemovalPolicy::Authorized,
            seed: 0,
            late: BTreeSet::new(),
            faults: BTreeMap::new(),
            partitioned: BTreeSet::new(),
            message_loss: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub genesis: Vec<String>,
    pub actions: Vec<ScheduledAction>,
    pub random: Option<RandomSpec>,
    pub steps: u32,
}

impl Scenario {
    pub fn actions_at(&self, step: u32) -> impl Iterator<Item = &ScheduledAction> {
        self.actions.iter().filter(move |a| a.at_step == step)
    }
}

/// Splits a line into whitespace-separated tokens, honouring double quotes.
/// `key="a b"` yields the single token `key=a b`.
fn tokenize(line: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut in_token = false;
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        match c {
            '"' => {
                in_token = true;
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some(e) => cur.push(e),
                            None => return Err("unterminated escape".into()),
                        },
                        Some(ch) => cur.push(ch),
                        None => return Err("unterminated quote".into()),
                    }
                }
            }
            '#' if !in_token => break,
            c if c.is_whitespace() => {
                if in_token {
                    tokens.push(std::mem::take(&mut cur));
                    in_token = false;
                }
            }
            c => {
                in_token = true;
                cur.push(c);
            }
        }
    }
    if in_token {
        tokens.push(cur);
    }
    Ok(tokens)
}

struct Params(BTreeMap<String, String>);

impl Params {
    fn parse(tokens: &[String]) -> Result<Self, String> {
        let mut map = BTreeMap::new();
        for t in tokens {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, found {t:?}"))?;
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(format!("duplicate parameter {k:?}"));
            }
        }
        Ok(Self(map))
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, String> {
        self.take(key)
            .map(|v| v.parse().map_err(|_| format!("bad value {v:?} for {key}")))
            .transpose()
    }

    fn finish(self) -> Result<(), String> {
        match self.0.keys().next() {
            Some(k) => Err(format!("unknown parameter {k:?}")),
            None => Ok(()),
        }
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("bad {what} {s:?}"))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| parse_num(p.trim(), what)).collect()
}

pub fn parse_schedule(s: &str) -> Result<IntervalSchedule, String> {
    match s.strip_prefix("cycle:") {
        Some(rest) => {
            let lens: Vec<u8> = parse_list(rest, "interval length")?;
            if lens.is_empty() {
                return Err("empty cycle".into());
            }
            Ok(IntervalSchedule::Cycle(lens))
        }
        None => Ok(IntervalSchedule::Constant(parse_num(s, "interval length")?)),
    }
}

pub fn parse_policy(s: &str) -> Result<RemovalPolicy, String> {
    match s {
        "authorized" => Ok(RemovalPolicy::Authorized),
        "unauthorized" => Ok(RemovalPolicy::Unauthorized),
        _ => Err(format!("unknown policy {s:?}")),
    }
}

fn parse_fault(s: &str) -> Result<(NodeId, Fault), String> {
    let (node, kind) = s.split_once(':').ok_or_else(|| format!("expected node:fault, found {s:?}"))?;
    let fault = match kind {
        "wrong-p-list" => Fault::WrongPList,
        "unauthorized-delete" => Fault::UnauthorizedDelete,
        _ => return Err(format!("unknown fault {kind:?}")),
    };
    Ok((parse_num(node, "node")?, fault))
}

fn parse_data(v: &str) -> Result<DataSpec, String> {
    if v == "marker" {
        return Ok(DataSpec::Marker);
    }
    match v.strip_prefix("hex:") {
        Some(h) => hex::decode(h).map(DataSpec::Bytes).map_err(|e| format!("bad hex data: {e}")),
        None => Ok(DataSpec::Bytes(v.as_bytes().to_vec())),
    }
}

fn parse_interval(v: Option<String>) -> Result<IntervalRef, String> {
    match v.as_deref() {
        None | Some("auto") => Ok(IntervalRef::Auto),
        Some(n) => Ok(IntervalRef::Fixed(parse_num(n, "interval")?)),
    }
}

fn parse_config(cfg: &mut ScenarioConfig, tokens: &[String]) -> Result<(), String> {
    let mut p = Params::parse(tokens)?;
    if let Some(v) = p.take_parsed("nodes")? {
        cfg.nodes = v;
    }
    if let Some(v) = p.take("proposers") {
        cfg.proposers = parse_list(&v, "node")?;
    }
    if let Some(v) = p.take_parsed("every")? {
        cfg.propose_every = v;
    }
    if let Some(v) = p.take("schedule") {
        cfg.schedule = parse_schedule(&v)?;
    }
    if let Some(v) = p.take_parsed("capacity")? {
        cfg.block_capacity = v;
    }
    if let Some(v) = p.take_parsed("confirm_depth")? {
        cfg.confirm_depth = v;
    }
    if let Some(v) = p.take_parsed("lock")? {
        cfg.delete_lock = v;
    }
    if let Some(v) = p.take("policy") {
        cfg.policy = parse_policy(&v)?;
    }
    if let Some(v) = p.take_parsed("seed")? {
        cfg.seed = v;
    }
    if let Some(v) = p.take("late") {
        cfg.late = parse_list(&v, "node")?.into_iter().collect();
    }
    if let Some(v) = p.take("partition") {
        cfg.partitioned = parse_list(&v, "node")?.into_iter().collect();
    }
    if let Some(v) = p.take_parsed("loss")? {
        cfg.message_loss = v;
    }
    if let Some(v) = p.take("fault") {
        for f in v.split(',') {
            let (node, fault) = parse_fault(f)?;
            cfg.faults.insert(node, fault);
        }
    }
    p.finish()
}

fn parse_random(tokens: &[String]) -> Result<RandomSpec, String> {
    let mut p = Params::parse(tokens)?;
    let mut spec = RandomSpec::default();
    if let Some(v) = p.take_parsed("entities")? {
        spec.entities = v;
    }
    for (key, slot) in [
        ("rem", &mut spec.rem),
        ("prepare", &mut spec.prepare),
        ("delete", &mut spec.delete),
        ("consent", &mut spec.consent),
    ] {
        if let Some(v) = p.take_parsed::<f64>(key)? {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{key} probability {v} outside [0, 1]"));
            }
            *slot = v;
        }
    }
    if spec.entities == 0 {
        return Err("random traffic needs at least one entity".into());
    }
    p.finish()?;
    Ok(spec)
}

fn parse_verb(verb: &str, rest: &[String]) -> Result<Verb, String> {
    let mut p = Params::parse(rest)?;
    let v = match verb {
        "register" => Verb::Register,
        "rem" => Verb::Rem(parse_data(&p.take("data").unwrap_or_else(|| "marker".into()))?),
        "prepare" => Verb::Prepare(parse_interval(p.take("interval"))?),
        "delete" => {
            let interval = parse_interval(p.take("interval"))?;
            let path = match p.take("via").as_deref() {
                None | Some("auto") => DeletePath::Auto,
                Some("prepare") => DeletePath::Prepare,
                Some("fast") => DeletePath::Fast,
                Some(o) => return Err(format!("unknown delete path {o:?}")),
            };
            Verb::Delete(interval, path)
        }
        "info" => {
            let purposes: Vec<String> = p
                .take("purposes")
                .ok_or("info needs purposes=")?
                .split(',')
                .map(str::to_string)
                .collect();
            Verb::Info {
                controller: p.take("controller").unwrap_or_default(),
                purposes,
            }
        }
        "consent" => {
            let info_of = p.take("info").ok_or("consent needs info=<entity>")?;
            let spec = match (p.take("grant"), p.take_parsed::<u64>("value")?) {
                (Some(g), None) => ConsentSpec::Grant(
                    g.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect(),
                ),
                (None, Some(v)) => ConsentSpec::Value(v),
                _ => return Err("consent needs exactly one of grant= or value=".into()),
            };
            Verb::Consent { info_of, spec }
        }
        other => return Err(format!("unknown action {other:?}")),
    };
    p.finish()?;
    Ok(v)
}

fn parse_at(tokens: &[String]) -> Result<(u32, ActionKind), String> {
    let step: u32 = parse_num(tokens.first().ok_or("missing step")?, "step")?;
    if step == 0 {
        return Err("steps are numbered from 1".into());
    }
    let kind = match tokens.get(1).map(String::as_str) {
        Some("snapshot") => match &tokens[2..] {
            [label] => ActionKind::Snapshot(label.clone()),
            _ => return Err("snapshot takes one label".into()),
        },
        Some("sync") => match &tokens[2..] {
            [node] => ActionKind::Sync(parse_num(node, "node")?),
            _ => return Err("sync takes one node".into()),
        },
        Some("node") => {
            let node = parse_num(tokens.get(2).ok_or("missing node id")?, "node")?;
            let verb = tokens.get(3).ok_or("missing action")?;
            let entity = tokens.get(4).ok_or("missing entity")?.clone();
            ActionKind::Client {
                node,
                entity,
                verb: parse_verb(verb, &tokens[5..])?,
            }
        }
        _ => return Err("expected `node`, `snapshot` or `sync` after the step".into()),
    };
    Ok((step, kind))
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ParseError> {
    let mut sc = Scenario::default();
    let mut run_seen = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| ParseError { line, message };
        let tokens = tokenize(raw).map_err(err)?;
        let Some((head, rest)) = tokens.split_first() else {
            continue;
        };
        match head.as_str() {
            "config" => parse_config(&mut sc.config, rest).map_err(err)?,
            "genesis" => match rest.split_first() {
                Some((r, names)) if r == "register" && !names.is_empty() => {
                    sc.genesis.extend(names.iter().cloned());
                }
                _ => return Err(err("expected `genesis register <entity>...`".into())),
            },
            "at" => {
                let (at_step, kind) = parse_at(rest).map_err(err)?;
                sc.actions.push(ScheduledAction { at_step, line, kind });
            }
            "random" => sc.random = Some(parse_random(rest).map_err(err)?),
            "run" => match rest {
                [n] => {
                    sc.steps = parse_num(n, "step count").map_err(err)?;
                    run_seen = true;
                }
                _ => return Err(err("expected `run <steps>`".into())),
            },
            other => return Err(err(format!("unknown directive {other:?}"))),
        }
    }
    if !run_seen {
        return Err(ParseError {
            line: text.lines().count(),
            message: "missing `run <steps>`".into(),
        });
    }
    Ok(sc)
}

impl fmt::Display for IntervalRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntervalRef::Fixed(x) => write!(f, "{x}"),
            IntervalRef::Auto => f.write_str("auto"),
        }
    }
}
