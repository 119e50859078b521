//! Command-line driver for mutachain: scenario runs, block stores, and
//! store inspection.

pub mod report;
pub mod store;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use mutachain_core::consent::{audit_trail, current_consent, decode_consent_value, PurposeSchema};
use mutachain_core::verify::verify_chain;
use mutachain_core::{digest, keypair_from_seed, IntervalStatus, MinerJudge, PubKey, RemovalPolicy, TxId};
use mutachain_sim::{parse_scenario, render_outline, run_scenario, Names, RunOptions};
use thiserror::Error;

use report::{render_text, CliReport};
use store::{load_store, prune_store, save_store, store_digest, BlockStore, StoreError};

#[derive(Debug, Parser)]
#[command(name = "mutachain", version, about = "Blockchain with removable block intervals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Authorized,
    Unauthorized,
}

impl From<PolicyArg> for RemovalPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Authorized => RemovalPolicy::Authorized,
            PolicyArg::Unauthorized => RemovalPolicy::Unauthorized,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derive a key pair from a seed (64 hex digits, or any text to hash).
    Keygen {
        #[arg(long)]
        seed: String,
    },
    /// Run a scenario script and write one store per node.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u32>,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        #[arg(long)]
        confirm_depth: Option<u32>,
        #[arg(long)]
        lock: Option<u32>,
        /// Directory receiving `node<i>` stores.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the machine-readable report here (`-` for stdout).
        #[arg(long)]
        json_report: Option<PathBuf>,
    },
    /// Verify a store's chain.
    Verify { store: PathBuf },
    /// Query consent state recorded in a store.
    Consent {
        #[command(subcommand)]
        query: ConsentQuery,
    },
    /// Erase intervals whose deletes have matured.
    Prune { store: PathBuf },
    /// Show the chain outline, one permanent block, or one interval.
    Inspect {
        store: PathBuf,
        #[arg(long, conflicts_with = "interval")]
        height: Option<u32>,
        #[arg(long)]
        interval: Option<u32>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConsentQuery {
    /// Current consent per subject.
    Status {
        store: PathBuf,
        #[arg(long)]
        info: String,
        #[arg(long)]
        subject: Option<String>,
    },
    /// Full consent history per subject.
    Audit {
        store: PathBuf,
        #[arg(long)]
        info: String,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    Script {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Run(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_txid(s: &str) -> Result<TxId, CliError> {
    TxId::from_hex(s).map_err(|e| CliError::Usage(format!("bad txid {s:?}: {e}")))
}

fn parse_pubkey(s: &str) -> Result<PubKey, CliError> {
    PubKey::from_hex(s).map_err(|e| CliError::Usage(format!("bad public key {s:?}: {e}")))
}

/// Runs a scenario file and writes stores under `out`, returning the report.
pub fn run_scenario_file(path: &Path, opts: &RunOptions, out: Option<&Path>) -> Result<CliReport, CliError> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    let script = parse_scenario(&text).map_err(|e| CliError::Script {
        path: path.to_path_buf(),
        line: e.line,
        message: e.message,
    })?;
    let outcome = run_scenario(&script, opts).map_err(|e| match e {
        mutachain_sim::RunError::Action { line, message } => CliError::Script {
            path: path.to_path_buf(),
            line,
            message,
        },
        other => CliError::Run(other.to_string()),
    })?;
    let mut stores = std::collections::BTreeMap::new();
    if let Some(out) = out {
        for node in outcome.net.nodes() {
            let dir = out.join(format!("node{}", node.id));
            if dir.join("manifest").exists() {
                fs::remove_dir_all(&dir).map_err(io_at(&dir))?;
            }
            let store = BlockStore::open(&dir)?;
            save_store(&node.ledger, &store)?;
            let mut ledger = node.ledger.clone();
            prune_store(&mut ledger, &store)?;
            drop(store);
            stores.insert(node.id, store_digest(&dir)?.to_hex());
        }
    }
    Ok(CliReport {
        run: outcome.report,
        stores,
    })
}

fn healthy(report: &CliReport) -> bool {
    report.run.agreement
        && report
            .run
            .nodes
            .iter()
            .filter(|n| n.fault.is_none())
            .all(|n| n.valid)
}

/// Executes one command, writing its output to `out`. Returns the exit code.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let w = |out: &mut dyn Write, s: String| out.write_all(s.as_bytes()).map_err(io_at(Path::new("<stdout>")));
    match cli.command {
        Command::Keygen { seed } => {
            let bytes = match hex::decode(&seed) {
                Ok(b) if b.len() == 32 => b,
                _ => digest(seed.as_bytes()).as_bytes().to_vec(),
            };
            let kp = keypair_from_seed(&bytes).expect("32-byte seed");
            w(out, format!("seed {}\npublic {}\n", hex::encode(kp.seed()), kp.pubkey()))?;
            Ok(0)
        }
        Command::Run {
            scenario,
            seed,
            steps,
            policy,
            confirm_depth,
            lock,
            out: dir,
            json_report,
        } => {
            let opts = RunOptions {
                seed,
                steps,
                policy: policy.map(Into::into),
                confirm_depth,
                delete_lock: lock,
            };
            let report = run_scenario_file(&scenario, &opts, dir.as_deref())?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
            match json_report.as_deref() {
                Some(p) if p == Path::new("-") => w(out, json)?,
                Some(p) => {
                    fs::write(p, json).map_err(io_at(p))?;
                    w(out, render_text(&report))?;
                }
                None => w(out, render_text(&report))?,
            }
            Ok(if healthy(&report) { 0 } else { 1 })
        }
        Command::Verify { store } => {
            let s = BlockStore::open(&store)?;
            let manifest = s.read_manifest()?;
            let data = s.read_chain()?;
            let report = verify_chain(&data, manifest.config, MinerJudge::accept_all());
            let tip = report.tip_height.map_or("-".into(), |h| h.to_string());
            let mut text = format!(
                "tip {tip} {}\npresent intervals [{}]\ndeleted intervals [{}]\n",
                report.tip_hash,
                report.present_intervals.iter().map(u32::to_string).collect::<Vec<_>>().join(","),
                report.deleted_intervals.iter().map(u32::to_string).collect::<Vec<_>>().join(","),
            );
            for v in &report.violations {
                text.push_str(&format!("violation: {v}\n"));
            }
            text.push_str(if report.is_valid() { "valid\n" } else { "INVALID\n" });
            w(out, text)?;
            Ok(if report.is_valid() { 0 } else { 1 })
        }
        Command::Consent { query } => {
            let (path, info) = match &query {
                ConsentQuery::Status { store, info, .. } | ConsentQuery::Audit { store, info } => (store, info),
            };
            let info = parse_txid(info)?;
            let s = BlockStore::open(path)?;
            let ledger = load_store(&s)?;
            let schema = PurposeSchema::from_ledger(&ledger, &info).map_err(|e| CliError::Usage(e.to_string()))?;
            let mut text = format!("info {} purposes {}\n", info, schema.purposes.join(","));
            let labels = |v: u64| {
                decode_consent_value(&schema, v)
                    .map(|l| if l.is_empty() { "nothing".to_string() } else { l.join(",") })
                    .unwrap_or_else(|e| e.to_string())
            };
            match query {
                ConsentQuery::Status { subject, .. } => {
                    let subjects: Vec<PubKey> = match subject {
                        Some(s) => vec![parse_pubkey(&s)?],
                        None => audit_trail(&ledger, &info)
                            .map_err(|e| CliError::Usage(e.to_string()))?
                            .into_iter()
                            .map(|e| e.subject)
                            .collect(),
                    };
                    for sub in subjects {
                        match current_consent(&ledger, &sub, &info).map_err(|e| CliError::Usage(e.to_string()))? {
                            Some(st) => text.push_str(&format!(
                                "{sub} value {} ({}) tip {}\n",
                                st.value,
                                labels(st.value),
                                st.tip.txid
                            )),
                            None => text.push_str(&format!("{sub} no consent\n")),
                        }
                    }
                }
                ConsentQuery::Audit { .. } => {
                    for e in audit_trail(&ledger, &info).map_err(|e| CliError::Usage(e.to_string()))? {
                        text.push_str(&format!("{} current {} ({})\n", e.subject, e.current, labels(e.current)));
                        for (txid, v) in e.history {
                            text.push_str(&format!("  {txid} {v}\n"));
                        }
                    }
                }
            }
            w(out, text)?;
            Ok(0)
        }
        Command::Prune { store } => {
            let s = BlockStore::open(&store)?;
            let mut ledger = load_store(&s)?;
            let pruned = prune_store(&mut ledger, &s)?;
            let list = pruned.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
            w(out, format!("pruned [{list}]\n"))?;
            Ok(0)
        }
        Command::Inspect {
            store,
            height,
            interval,
        } => {
            let s = BlockStore::open(&store)?;
            let ledger = load_store(&s)?;
            let names = Names::default();
            let text = if let Some(h) = height {
                let b = ledger
                    .permanent_block(h)
                    .ok_or_else(|| CliError::Usage(format!("no block at height {h}")))?;
                let hd = &b.header;
                let mut t = format!(
                    "B_{h} {}\nprev_permanent {}\nprev_removable {}\ninterval_len {}\np_list [{}]\ntx_root {}\n",
                    b.hash(),
                    hd.prev_permanent,
                    hd.prev_removable,
                    hd.interval_len,
                    hd.p_list.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "),
                    hd.tx_root
                );
                for tx in &b.transactions {
                    t.push_str(&format!("tx {} {:?}\n", tx.id(), tx.kind()));
                }
                t
            } else if let Some(i) = interval {
                match ledger.interval_status(i) {
                    None => return Err(CliError::Usage(format!("no interval {i}"))),
                    Some(IntervalStatus::Deleted {
                        del_txid,
                        deleted_at_height,
                    }) => format!("I_{i} deleted by {del_txid} in B_{deleted_at_height}\n"),
                    Some(_) => {
                        let mut t = String::new();
                        for rb in ledger.interval_blocks(i).unwrap_or_default() {
                            t.push_str(&format!("B_{i}.{} {}\n", rb.position(), rb.hash()));
                            for tx in &rb.transactions {
                                t.push_str(&format!("  tx {} {:?}\n", tx.id(), tx.kind()));
                            }
                        }
                        if t.is_empty() {
                            t = format!("I_{i} is empty\n");
                        }
                        t
                    }
                }
            } else {
                render_outline(&ledger, &names).join("\n") + "\n"
            };
            w(out, text)?;
            Ok(0)
        }
    }
}
