//! Text and JSON renderings of a scenario run.

use std::collections::BTreeMap;
use std::fmt::Write;

use mutachain_sim::runner::{Outcome, SyncOutcome};
use mutachain_sim::{Event, NodeId, RunReport};
use serde::Serialize;

/// Run report plus the digest of every node's store on disk.
#[derive(Debug, Clone, Serialize)]
pub struct CliReport {
    #[serde(flatten)]
    pub run: RunReport,
    pub stores: BTreeMap<NodeId, String>,
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn event_line(e: &Event) -> String {
    match e {
        Event::Proposed {
            node,
            height,
            interval_len,
            txs,
            removable_txs,
        } => format!(
            "node {node} proposed B_{height} |I_{height}|={interval_len} ({txs} permanent txs, {removable_txs} removable txs)"
        ),
        Event::FaultInjected { node, fault, height } => {
            format!("node {node} injected fault {fault:?} into B_{height}")
        }
        Event::BlockRejected {
            node,
            from,
            height,
            error,
        } => format!("node {node} rejected B_{height} from node {from}: {error}"),
        Event::Pruned { node, intervals } => {
            let list = intervals.iter().map(|i| format!("I_{i}")).collect::<Vec<_>>().join(", ");
            format!("node {node} pruned {list}")
        }
    }
}

pub fn render_text(report: &CliReport) -> String {
    let r = &report.run;
    let c = &r.config;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "run: nodes={} seed={} steps={} confirm_depth={} lock={} policy={:?}",
        c.nodes, c.seed, c.steps, c.confirm_depth, c.delete_lock, c.policy
    );
    for (name, pk) in &r.entities {
        let _ = writeln!(s, "entity {name} pk={}", &pk.to_hex()[..16]);
    }
    let mut snapshots = r.snapshots.iter().peekable();
    for step in &r.steps {
        let _ = writeln!(s, "\nstep {}", step.step);
        for a in &step.actions {
            let outcome = match &a.outcome {
                Outcome::Accepted { txid } => format!("accepted {}", txid.short()),
                Outcome::Rejected { reason } => format!("rejected: {reason}"),
                Outcome::Skipped { reason } => format!("skipped: {reason}"),
            };
            let _ = writeln!(s, "  node {} {} {}: {outcome}", a.node, a.entity, a.action);
        }
        for e in &step.events {
            let _ = writeln!(s, "  {}", event_line(e));
        }
        for sync in &step.syncs {
            match sync {
                SyncOutcome::Synced(rep) => {
                    let _ = writeln!(
                        s,
                        "  node {} synced from node {}: {} permanent blocks, fetched [{}], skipped [{}], evidence [{}], digest {}",
                        rep.node,
                        rep.peer,
                        rep.permanent_blocks,
                        join(&rep.fetched_intervals),
                        join(&rep.skipped_intervals),
                        join(&rep.evidence_intervals),
                        if rep.matches_peer() { "matches peer" } else { "DIFFERS from peer" }
                    );
                }
                SyncOutcome::Failed { node, reason } => {
                    let _ = writeln!(s, "  node {node} sync failed: {reason}");
                }
            }
        }
        while let Some(snap) = snapshots.next_if(|x| x.step == step.step) {
            let _ = writeln!(s, "  snapshot \"{}\" (node {})", snap.label, snap.node);
            for line in &snap.outline {
                let _ = writeln!(s, "    {line}");
            }
        }
    }

    let _ = writeln!(s, "\nnodes");
    for n in &r.nodes {
        let fault = n.fault.map(|f| format!(" fault={f:?}")).unwrap_or_default();
        let tip = n.tip_height.map_or("-".to_string(), |h| h.to_string());
        let verdict = if n.valid {
            "valid".to_string()
        } else {
            format!("INVALID: {}", n.violations.join("; "))
        };
        let _ = writeln!(
            s,
            "  node {} {:?}{fault} tip={tip} digest={} present=[{}] deleted=[{}] {verdict}",
            n.id,
            n.status,
            &n.digest[..16],
            join(&n.present_intervals),
            join(&n.deleted_intervals),
        );
    }
    let _ = writeln!(s, "agreement: {}", if r.agreement { "yes" } else { "no" });

    let o = &r.overhead;
    let _ = writeln!(
        s,
        "overhead: {} permanent blocks, {} B fixed per block, {} P-list keys, {} B total, {:.1} B mean, {} B max",
        o.blocks, o.fixed_bytes, o.p_list_keys, o.total_bytes, o.mean_block_bytes, o.max_block_bytes
    );

    if !r.consents.is_empty() {
        let _ = writeln!(s, "consents");
        for info in &r.consents {
            let _ = writeln!(
                s,
                "  info {} by {}: {}",
                info.info.short(),
                info.controller,
                info.purposes.join(",")
            );
            for sub in &info.subjects {
                let trail = sub.history.iter().map(u64::to_string).collect::<Vec<_>>().join(" -> ");
                let granted = if sub.granted.is_empty() {
                    "nothing".to_string()
                } else {
                    sub.granted.join(",")
                };
                let _ = writeln!(s, "    {}: {trail} (current {}: {granted})", sub.subject, sub.current);
            }
        }
    }

    if !report.stores.is_empty() {
        let _ = writeln!(s, "stores");
        for (node, d) in &report.stores {
            let _ = writeln!(s, "  node {node} {}", &d[..16]);
        }
    }
    s
}
