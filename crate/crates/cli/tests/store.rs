use std::fs;
use std::path::Path;

use mutachain_cli::store::{
    load_store, prune_store, save_store, store_digest, BlockStore, PrunePhase, StoreError,
};
use mutachain_core::{build_permanent_block, Ledger, LedgerConfig, Transaction};
use mutachain_sim::{entity_key, parse_scenario, run_scenario, RunOptions};
use proptest::prelude::*;

const FIG2: &str = include_str!("../scenarios/fig2.scn");

fn fig2_ledger(steps: u32) -> Ledger {
    let opts = RunOptions {
        steps: Some(steps),
        ..RunOptions::default()
    };
    let out = run_scenario(&parse_scenario(FIG2).unwrap(), &opts).unwrap();
    out.reference().clone()
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    hay.windows(needle.len()).any(|w| w == needle)
}

fn scan(dir: &Path, needle: &[u8]) -> bool {
    fs::read_dir(dir).unwrap().any(|e| {
        let p = e.unwrap().path();
        if p.is_dir() {
            scan(&p, needle)
        } else {
            contains(&fs::read(&p).unwrap(), needle)
        }
    })
}

#[test]
fn fig2_state_two_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = fig2_ledger(4);
    let store = BlockStore::open(dir.path()).unwrap();
    save_store(&ledger, &store).unwrap();
    assert!(!dir.path().join("interval_1").exists());
    assert!(dir.path().join("interval_2/1.blk").exists());
    let loaded = load_store(&store).unwrap();
    assert_eq!(loaded.state_digest(), ledger.state_digest());
}

#[test]
fn genesis_only_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut ledger = Ledger::new(LedgerConfig::default());
    let g = build_permanent_block(&ledger, &[], vec![Transaction::register(&entity_key("A"))]).unwrap();
    ledger.apply_permanent(&g).unwrap();
    let store = BlockStore::open(dir.path()).unwrap();
    save_store(&ledger, &store).unwrap();
    assert_eq!(load_store(&store).unwrap().state_digest(), ledger.state_digest());
}

#[test]
fn removed_directory_without_delete_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let store = BlockStore::open(dir.path()).unwrap();
    save_store(&fig2_ledger(2), &store).unwrap();
    fs::remove_dir_all(dir.path().join("interval_1")).unwrap();
    assert!(matches!(
        load_store(&store),
        Err(StoreError::MissingDeleteEvidence { interval: 1 })
    ));
}

/// The fig2 scenario after `B_4` is applied but before anything is pruned.
fn matured_unpruned() -> Ledger {
    let mut ledger = fig2_ledger(3);
    let b4 = build_permanent_block(&ledger, &[], vec![]).unwrap();
    ledger.apply_permanent(&b4).unwrap();
    assert_eq!(ledger.deletable_intervals(), vec![1]);
    ledger
}

#[test]
fn prune_erases_interval_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let mut ledger = matured_unpruned();
    let store = BlockStore::open(dir.path()).unwrap();
    save_store(&ledger, &store).unwrap();
    let m = b"m";
    let marker_tx = &ledger.interval_blocks(1).unwrap()[0].transactions[0];
    assert_eq!(marker_tx.removable_data(), Some(&m[..]));
    let encoded = mutachain_core::canonical_encode(marker_tx).unwrap();
    assert!(scan(dir.path(), &encoded));

    assert_eq!(prune_store(&mut ledger, &store).unwrap(), vec![1]);
    assert!(!dir.path().join("interval_1").exists());
    assert!(!scan(dir.path(), &encoded));
    assert!(store.read_manifest().unwrap().intervals[&1].is_deleted());
    assert!(prune_store(&mut ledger, &store).unwrap().is_empty());
    assert_eq!(load_store(&store).unwrap().state_digest(), ledger.state_digest());
}

#[test]
fn failed_manifest_rename_leaves_store_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let mut ledger = matured_unpruned();
    let before = ledger.state_digest();
    let mut store = BlockStore::open(dir.path()).unwrap();
    save_store(&ledger, &store).unwrap();
    let digest = store_digest(dir.path()).unwrap();
    store.inject_failure(PrunePhase::ManifestRename);
    assert!(matches!(
        prune_store(&mut ledger, &store),
        Err(StoreError::Injected(PrunePhase::ManifestRename))
    ));
    assert_eq!(store_digest(dir.path()).unwrap(), digest);
    assert!(dir.path().join("interval_1").exists());
    assert_eq!(ledger.state_digest(), before);
    load_store(&store).unwrap();
}

#[test]
fn crash_before_directory_removal_is_recovered() {
    let dir = tempfile::tempdir().unwrap();
    let mut ledger = matured_unpruned();
    {
        let mut store = BlockStore::open(dir.path()).unwrap();
        save_store(&ledger, &store).unwrap();
        store.inject_failure(PrunePhase::DirectoryRemoval);
        assert!(prune_store(&mut ledger, &store).is_err());
    }
    assert!(dir.path().join("interval_1").exists());
    let store = BlockStore::open(dir.path()).unwrap();
    let mut reloaded = load_store(&store).unwrap();
    assert_eq!(prune_store(&mut reloaded, &store).unwrap(), vec![1]);
    assert!(!dir.path().join("interval_1").exists());
}

#[test]
fn store_is_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    let first = BlockStore::open(dir.path()).unwrap();
    assert!(matches!(BlockStore::open(dir.path()), Err(StoreError::Locked(_))));
    drop(first);
    BlockStore::open(dir.path()).unwrap();
}

#[test]
fn corrupt_log_detected() {
    let dir = tempfile::tempdir().unwrap();
    let store = BlockStore::open(dir.path()).unwrap();
    save_store(&fig2_ledger(2), &store).unwrap();
    let log = dir.path().join("permanent.log");
    let mut bytes = fs::read(&log).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&log, bytes).unwrap();
    assert!(matches!(load_store(&store), Err(StoreError::Corrupt { .. })));
}

#[test]
fn saving_a_different_chain_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let store = BlockStore::open(dir.path()).unwrap();
    save_store(&fig2_ledger(3), &store).unwrap();
    let other = run_scenario(
        &parse_scenario("config nodes=1\ngenesis register Z\nat 1 node 0 rem Z\nrun 3\n").unwrap(),
        &RunOptions::default(),
    )
    .unwrap();
    assert!(matches!(save_store(other.reference(), &store), Err(StoreError::Diverged)));
}

#[test]
fn saving_incrementally_appends() {
    let dir = tempfile::tempdir().unwrap();
    let store = BlockStore::open(dir.path()).unwrap();
    save_store(&fig2_ledger(2), &store).unwrap();
    let full = fig2_ledger(4);
    save_store(&full, &store).unwrap();
    assert_eq!(load_store(&store).unwrap().state_digest(), full.state_digest());
    assert!(!dir.path().join("interval_1").exists());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_ledgers_round_trip(seed in any::<u64>()) {
        let script = format!(
            "config nodes=1 seed={seed} schedule=cycle:1,2,0 capacity=2 confirm_depth=1 lock=1\n\
             random entities=3 rem=0.7 prepare=0.2 delete=0.3 consent=0.2\nrun 20\n"
        );
        let out = run_scenario(&parse_scenario(&script).unwrap(), &RunOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let store = BlockStore::open(dir.path()).unwrap();
        let ledger = out.reference();
        save_store(ledger, &store).unwrap();
        prop_assert_eq!(load_store(&store).unwrap().state_digest(), ledger.state_digest());
        for (x, s) in ledger.interval_statuses() {
            prop_assert_eq!(store.interval_dir(*x).exists(), ledger.interval_blocks(*x).is_some());
            if s.is_deleted() {
                for (_, data) in out.payloads.values().flatten() {
                    let live = ledger.present_intervals().values().flatten()
                        .flat_map(|b| &b.transactions)
                        .any(|t| t.removable_data() == Some(&data[..]));
                    if !live {
                        prop_assert!(!scan(dir.path(), data));
                    }
                }
            }
        }
    }
}
