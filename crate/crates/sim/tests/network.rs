use std::collections::BTreeSet;

use mutachain_core::mempool::{MempoolConfig, IntervalSchedule};
use mutachain_core::verify::{verify_chain, ChainData};
use mutachain_core::{LedgerConfig, MinerJudge, Transaction};
use mutachain_sim::{
    create_network, entity_key, Event, Fault, NodeStatus, SimConfig, SimError, SimNetwork,
};

fn config(nodes: usize, names: &[&str]) -> SimConfig {
    SimConfig {
        nodes,
        ledger: LedgerConfig {
            confirm_depth: 1,
            delete_lock: 0,
            ..LedgerConfig::default()
        },
        genesis: names.iter().map(|n| Transaction::register(&entity_key(n))).collect(),
        ..SimConfig::default()
    }
}

fn rem(name: &str, data: &str) -> Transaction {
    let k = entity_key(name);
    Transaction::removable(&k, Transaction::register(&k).id(), data)
}

fn submit(net: &mut SimNetwork, node: usize, tx: Transaction) {
    net.submit_client_action(node, tx).unwrap().unwrap();
}

#[test]
fn single_node_network_drives_a_ledger() {
    let mut net = create_network(config(1, &["A"])).unwrap();
    submit(&mut net, 0, rem("A", "m"));
    let report = net.step();
    assert!(matches!(report.events[..], [Event::Proposed { height: 1, removable_txs: 1, .. }]));
    assert_eq!(net.nodes()[0].ledger.tip_height(), Some(1));
}

#[test]
fn same_config_gives_same_initial_digests() {
    let a = create_network(config(3, &["A", "B"])).unwrap();
    let b = create_network(config(3, &["A", "B"])).unwrap();
    assert_eq!(a.digests(), b.digests());
    assert_eq!(a.digests().values().collect::<BTreeSet<_>>().len(), 1);
}

#[test]
fn faulty_node_is_marked() {
    let mut cfg = config(3, &["A"]);
    cfg.faults.insert(2, Fault::WrongPList);
    let net = create_network(cfg).unwrap();
    assert_eq!(net.nodes()[2].fault, Some(Fault::WrongPList));
    assert!(!net.nodes()[2].is_honest());
    assert!(net.nodes()[..2].iter().all(|n| n.is_honest()));
}

#[test]
fn invalid_configs_rejected() {
    let bad = |f: fn(&mut SimConfig)| {
        let mut cfg = config(2, &[]);
        f(&mut cfg);
        matches!(create_network(cfg), Err(SimError::InvalidConfig(_)))
    };
    assert!(bad(|c| c.nodes = 0));
    assert!(bad(|c| c.ledger.confirm_depth = 0));
    assert!(bad(|c| c.proposers = vec![5]));
    assert!(bad(|c| c.message_loss = 1.0));
    assert!(bad(|c| c.late = [0, 1].into()));
}

#[test]
fn gossip_reaches_every_mempool() {
    let mut net = create_network(config(3, &["A"])).unwrap();
    let k = entity_key("C");
    let reg = Transaction::register(&k);
    submit(&mut net, 0, reg.clone());
    let mut scratch = Default::default();
    net.deliver_all(&mut scratch);
    assert!(net.nodes().iter().all(|n| n.mempool.contains(&reg.id())));
}

#[test]
fn invalid_transaction_not_gossiped() {
    let mut net = create_network(config(3, &["A"])).unwrap();
    let mut tx = rem("A", "m");
    tx.value = 7;
    assert!(net.submit_client_action(0, tx).unwrap().is_err());
    assert_eq!(net.queue_len(), 0);
    assert_eq!(
        net.submit_client_action(9, rem("A", "m")),
        Err(SimError::UnknownNode(9))
    );
}

#[test]
fn prepare_fills_reinclusion_queue_everywhere() {
    let mut net = create_network(config(3, &["A", "B"])).unwrap();
    submit(&mut net, 0, rem("A", "m"));
    submit(&mut net, 1, rem("B", "n"));
    net.step();
    let a = entity_key("A");
    submit(&mut net, 2, Transaction::prepare(&a, Transaction::register(&a).id(), 1));
    let mut scratch = Default::default();
    net.deliver_all(&mut scratch);
    for n in net.nodes() {
        let queued: Vec<_> = n.mempool.reinclusion_queue().iter().map(|e| e.tx.clone()).collect();
        assert_eq!(queued, vec![rem("B", "n")], "node {}", n.id);
    }
}

#[test]
fn step_without_proposal_is_idle() {
    let mut cfg = config(2, &["A"]);
    cfg.propose_every = 2;
    let mut net = create_network(cfg).unwrap();
    assert!(!net.step().is_idle());
    assert!(net.step().is_idle());
}

#[test]
fn wrong_p_list_block_rejected_by_honest_nodes() {
    let mut cfg = config(3, &["A"]);
    cfg.faults.insert(1, Fault::WrongPList);
    let mut net = create_network(cfg).unwrap();
    net.step();
    let before = net.digests();
    submit(&mut net, 0, rem("A", "m"));
    let report = net.step();
    assert!(report.events.contains(&Event::FaultInjected {
        node: 1,
        fault: Fault::WrongPList,
        height: 2
    }));
    let rejections: Vec<_> = report
        .events
        .iter()
        .filter_map(|e| match e {
            Event::BlockRejected { node, error, .. } => Some((*node, error.clone())),
            _ => None,
        })
        .collect();
    assert_eq!(rejections.len(), 2);
    assert!(rejections.iter().all(|(_, e)| e.contains("P-list")), "{rejections:?}");
    assert_eq!(net.digests(), before);
    // the transaction stays pending and lands with the next honest proposer
    net.step();
    assert_eq!(net.nodes()[0].ledger.tip_height(), Some(2));
    assert!(net.in_agreement());
}

#[test]
fn unauthorized_delete_rejected() {
    let mut cfg = config(2, &["A"]);
    cfg.faults.insert(1, Fault::UnauthorizedDelete);
    let mut net = create_network(cfg).unwrap();
    submit(&mut net, 0, rem("A", "m"));
    net.step();
    let report = net.step();
    assert!(report
        .events
        .iter()
        .any(|e| matches!(e, Event::BlockRejected { node: 0, error, .. } if error.contains("delete"))));
    assert!(!net.nodes()[0].ledger.is_delete_targeted(1));
}

fn fig2_network(late: bool) -> SimNetwork {
    let mut cfg = config(3, &["A", "B"]);
    if late {
        cfg.late.insert(2);
    }
    let mut net = create_network(cfg).unwrap();
    let a = entity_key("A");
    let reg_a = Transaction::register(&a).id();
    submit(&mut net, 0, rem("A", "m"));
    submit(&mut net, 1, rem("B", "n"));
    net.step();
    let prep = Transaction::prepare(&a, reg_a, 1);
    submit(&mut net, 0, prep.clone());
    submit(&mut net, 0, Transaction::delete(&a, 1, Some(prep.id())));
    net.step();
    submit(&mut net, 1, rem("A", "o"));
    net.step();
    net.step();
    net
}

#[test]
fn fig2_ends_with_interval_one_pruned_everywhere() {
    let net = fig2_network(false);
    assert!(net.in_agreement());
    for n in net.nodes() {
        assert!(n.ledger.interval_status(1).unwrap().is_deleted());
        assert!(n.ledger.interval_blocks(1).is_none());
        assert_eq!(n.ledger.delete_record(1).unwrap().height, 3);
    }
}

#[test]
fn late_node_syncs_without_deleted_interval() {
    let mut net = fig2_network(true);
    assert_eq!(net.nodes()[2].status, NodeStatus::Offline);
    let report = net.sync_node(2).unwrap();
    assert!(report.matches_peer());
    assert_eq!(report.skipped_intervals, vec![1]);
    assert!(!report.fetched_intervals.contains(&1));
    assert_eq!(net.nodes()[2].status, NodeStatus::Online);
    let cfg = net.config().ledger;
    let verdict = |id: usize| verify_chain(&ChainData::from_ledger(&net.nodes()[id].ledger), cfg, MinerJudge::accept_all());
    assert!(verdict(2).is_valid());
    assert_eq!(verdict(2), verdict(0));
}

#[test]
fn sync_of_permanent_only_chain_has_empty_fill_phase() {
    let mut cfg = config(2, &["A"]);
    cfg.late.insert(1);
    cfg.mempool = MempoolConfig {
        schedule: IntervalSchedule::Constant(0),
        ..MempoolConfig::default()
    };
    let mut net = create_network(cfg).unwrap();
    for _ in 0..5 {
        net.step();
    }
    let report = net.sync_node(1).unwrap();
    assert_eq!(report.permanent_blocks, 5);
    assert!(report.fetched_intervals.is_empty() && report.skipped_intervals.is_empty());
    assert!(report.matches_peer());
}

#[test]
fn partitioned_node_falls_behind() {
    let mut cfg = config(3, &["A"]);
    cfg.partitioned.insert(2);
    cfg.proposers = vec![0, 1];
    let mut net = create_network(cfg).unwrap();
    submit(&mut net, 0, rem("A", "m"));
    net.step();
    net.step();
    assert_eq!(net.nodes()[2].ledger.tip_height(), Some(0));
    assert!(net.in_agreement());
}
