mod common;

use common::*;
use mutachain_core::mempool::{IntervalSchedule, Mempool, MempoolConfig, Rejection};
use mutachain_core::{DeleteError, Ledger, LedgerConfig, Transaction};

fn apply(ledger: &mut Ledger, pool: &mut Mempool) -> (usize, usize) {
    let (iv, pb) = pool.build_block_candidate(ledger);
    ledger.apply_interval_and_block(&iv, &pb).expect("candidate applies");
    ledger.prune_deletable();
    pool.on_block_applied(ledger);
    (iv.len(), pb.transactions.len())
}

/// Ledger after `I_1 = {Rem(m) by A, Rem(n) by B}`.
fn after_first_interval() -> (Ledger, Mempool, Transaction) {
    let (a, b) = (key("A"), key("B"));
    let mut ledger = genesis(fig2_config(), &[&a, &b]);
    let mut pool = Mempool::new(MempoolConfig::default());
    pool.submit_transaction(&ledger, Transaction::removable(&a, reg_id(&a), "m"))
        .unwrap();
    let n = Transaction::removable(&b, reg_id(&b), "n");
    pool.submit_transaction(&ledger, n.clone()).unwrap();
    apply(&mut ledger, &mut pool);
    assert!(pool.is_empty());
    (ledger, pool, n)
}

#[test]
fn prepare_queues_other_signers_transactions() {
    let (ledger, mut pool, n) = after_first_interval();
    let a = key("A");
    pool.submit_transaction(&ledger, Transaction::prepare(&a, reg_id(&a), 1))
        .unwrap();
    let queued: Vec<_> = pool.reinclusion_queue().iter().map(|e| e.tx.clone()).collect();
    assert_eq!(queued, vec![n]);
}

#[test]
fn delete_without_prepare_is_premature() {
    let (ledger, mut pool, _) = after_first_interval();
    let a = key("A");
    assert_eq!(
        pool.submit_transaction(&ledger, Transaction::delete(&a, 1, None)),
        Err(Rejection::PrematureDelete(DeleteError::NotSoleOwnerAndNoPrepare))
    );
}

#[test]
fn candidate_places_duplicate_and_prepare_together() {
    let (mut ledger, mut pool, n) = after_first_interval();
    let a = key("A");
    let prep = Transaction::prepare(&a, reg_id(&a), 1);
    pool.submit_transaction(&ledger, prep.clone()).unwrap();
    let del = Transaction::delete(&a, 1, Some(prep.id()));
    pool.submit_transaction(&ledger, del.clone()).unwrap();

    let (iv, pb) = pool.build_block_candidate(&ledger);
    assert_eq!(iv.len(), 1);
    assert_eq!(iv[0].transactions, vec![n.clone()]);
    assert_eq!(pb.transactions, vec![prep.clone()]);
    assert_eq!(pb.header.p_list, vec![key("B").pubkey()]);

    ledger.apply_interval_and_block(&iv, &pb).unwrap();
    pool.on_block_applied(&ledger);
    assert!(pool.reinclusion_queue().is_empty());
    assert!(!pool.contains(&prep.id()));
    assert!(pool.contains(&del.id()));

    let (_, pb3) = pool.build_block_candidate(&ledger);
    assert_eq!(pb3.transactions, vec![del]);
}

#[test]
fn stale_delete_dropped_after_prune() {
    let (mut ledger, mut pool, _) = after_first_interval();
    let a = key("A");
    let prep = Transaction::prepare(&a, reg_id(&a), 1);
    pool.submit_transaction(&ledger, prep.clone()).unwrap();
    apply(&mut ledger, &mut pool);
    let del = Transaction::delete(&a, 1, Some(prep.id()));
    pool.submit_transaction(&ledger, del).unwrap();
    apply(&mut ledger, &mut pool);
    apply(&mut ledger, &mut pool);
    assert!(ledger.interval_status(1).unwrap().is_deleted());
    // a second, different delete for the same interval is no longer admissible
    let b = key("B");
    assert!(pool
        .submit_transaction(&ledger, Transaction::delete(&b, 1, None))
        .is_err());
}

#[test]
fn second_prepare_for_same_interval_conflicts() {
    let (ledger, mut pool, _) = after_first_interval();
    let (a, b) = (key("A"), key("B"));
    pool.submit_transaction(&ledger, Transaction::prepare(&a, reg_id(&a), 1))
        .unwrap();
    assert_eq!(
        pool.submit_transaction(&ledger, Transaction::prepare(&b, reg_id(&b), 1)),
        Err(Rejection::PrepareConflict(1))
    );
}

#[test]
fn unregistered_signer_rejected() {
    let a = key("A");
    let ledger = genesis(LedgerConfig::default(), &[&a]);
    let mut pool = Mempool::default();
    let c = key("C");
    assert_eq!(
        pool.submit_transaction(&ledger, Transaction::removable(&c, reg_id(&c), "x")),
        Err(Rejection::UnknownSigner)
    );
}

#[test]
fn empty_pool_gives_empty_candidate() {
    let a = key("A");
    let ledger = genesis(LedgerConfig::default(), &[&a]);
    let pool = Mempool::new(MempoolConfig {
        schedule: IntervalSchedule::Constant(0),
        ..MempoolConfig::default()
    });
    let (iv, pb) = pool.build_block_candidate(&ledger);
    assert!(iv.is_empty());
    assert!(pb.transactions.is_empty());
    assert_eq!(pb.header.interval_len, 0);
    assert!(pb.header.prev_removable.is_null());
}

#[test]
fn fifth_signer_waits_for_next_interval() {
    let keys: Vec<_> = (0..5).map(|i| key(&format!("K{i}"))).collect();
    let refs: Vec<_> = keys.iter().collect();
    let mut ledger = genesis(LedgerConfig::default(), &refs);
    let mut pool = Mempool::default();
    for k in &keys {
        pool.submit_transaction(&ledger, Transaction::removable(k, reg_id(k), "d"))
            .unwrap();
    }
    let (iv, pb) = pool.build_block_candidate(&ledger);
    assert_eq!(pb.header.p_list.len(), 4);
    assert!(!pb.header.p_list.contains(&keys[4].pubkey()));
    ledger.apply_interval_and_block(&iv, &pb).unwrap();
    pool.on_block_applied(&ledger);
    assert_eq!(pool.len(), 1);
    assert_eq!(pool.pending().next().unwrap().signer, keys[4].pubkey());
}

#[test]
fn zero_schedule_still_confirms_deletes() {
    let (mut ledger, mut pool, _) = after_first_interval();
    let a = key("A");
    let prep = Transaction::prepare(&a, reg_id(&a), 1);
    pool.submit_transaction(&ledger, prep.clone()).unwrap();
    apply(&mut ledger, &mut pool);
    // no further intervals are scheduled; deletes ride in permanent blocks
    let mut pool = Mempool::new(MempoolConfig {
        schedule: IntervalSchedule::Constant(0),
        ..MempoolConfig::default()
    });
    pool.submit_transaction(&ledger, Transaction::delete(&a, 1, Some(prep.id())))
        .unwrap();
    let (removable_blocks, txs) = apply(&mut ledger, &mut pool);
    assert_eq!((removable_blocks, txs), (0, 1));
    assert!(ledger.is_delete_targeted(1));
    apply(&mut ledger, &mut pool);
    assert!(ledger.interval_status(1).unwrap().is_deleted());
}

#[test]
fn scripted_and_cycle_schedules() {
    let s = IntervalSchedule::Cycle(vec![0, 2]);
    assert_eq!((s.target(0), s.target(1), s.target(2)), (0, 2, 0));
    let s = IntervalSchedule::Scripted {
        by_height: [(3, 5)].into_iter().collect(),
        default: 1,
    };
    assert_eq!((s.target(2), s.target(3)), (1, 5));
}
