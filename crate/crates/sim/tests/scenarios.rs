use mutachain_sim::runner::{Outcome, SyncOutcome};
use mutachain_sim::{parse_scenario, run_scenario, RunOptions, RunOutcome};
use proptest::prelude::*;

const FIG2: &str = include_str!("../../cli/scenarios/fig2.scn");
const CONSENT: &str = include_str!("../../cli/scenarios/consent.scn");

fn run(src: &str, opts: &RunOptions) -> RunOutcome {
    run_scenario(&parse_scenario(src).unwrap(), opts).unwrap()
}

#[test]
fn fig2_snapshots() {
    let out = run(FIG2, &RunOptions::default());
    let [s1, s2] = &out.report.snapshots[..] else {
        panic!("expected two snapshots");
    };
    assert_eq!(s1.label, "State 1");
    assert!(s1.outline.contains(&"B_1.1: sk_A(Rem(m)), sk_B(Rem(n))".to_string()));
    assert!(s1.outline.contains(&"B_2.1: sk_B(Rem(n))".to_string()));
    assert!(s1.outline.contains(&"B_2 |I_2|=1 P_2={pk_B}: sk_A(Prep(1))".to_string()));
    assert!(!s2.outline.iter().any(|l| l.starts_with("B_1.1")));
    assert!(s2.outline.contains(&"I_1 deleted by sk_A(Del(1)) in B_3".to_string()));
    assert!(s2.outline.contains(&"B_3 |I_3|=1 P_3={pk_A}: sk_A(Del(1))".to_string()));
    assert!(out.report.agreement);
    assert!(out.report.nodes.iter().all(|n| n.valid && n.deleted_intervals == vec![1]));
}

#[test]
fn consent_trail() {
    let out = run(CONSENT, &RunOptions::default());
    let [info] = &out.report.consents[..] else {
        panic!("one info expected");
    };
    assert_eq!(info.controller, "Alice");
    let bob = &info.subjects[0];
    assert_eq!((bob.subject.as_str(), bob.history.clone(), bob.current), ("Bob", vec![1, 3, 0], 0));
}

#[test]
fn script_errors_report_the_line() {
    let sc = parse_scenario("config nodes=2\nat 1 node 7 rem A\nrun 1\n").unwrap();
    let err = run_scenario(&sc, &RunOptions::default()).unwrap_err();
    assert!(err.to_string().starts_with("line 2:"), "{err}");
}

#[test]
fn overrides_replace_script_config() {
    let opts = RunOptions {
        confirm_depth: Some(3),
        steps: Some(6),
        ..RunOptions::default()
    };
    let out = run(FIG2, &opts);
    assert_eq!(out.report.config.confirm_depth, 3);
    // depth 3 needs the Delete at height 3 buried under three blocks
    assert_eq!(out.report.nodes[0].deleted_intervals, vec![1]);
    let out = run(FIG2, &RunOptions { confirm_depth: Some(4), ..RunOptions::default() });
    assert!(out.report.nodes[0].deleted_intervals.is_empty());
}

fn fuzz_script(seed: u64) -> String {
    format!(
        "config nodes=3 late=2 seed={seed} schedule=cycle:1,2,0 capacity=3 confirm_depth=2 lock=1\n\
         random entities=4 rem=0.6 prepare=0.2 delete=0.25\n\
         at 25 sync 2\n\
         run 25\n"
    )
}

#[test]
fn same_seed_same_report() {
    let a = run(&fuzz_script(11), &RunOptions::default());
    let b = run(&fuzz_script(11), &RunOptions::default());
    assert_eq!(
        serde_json::to_string(&a.report).unwrap(),
        serde_json::to_string(&b.report).unwrap()
    );
    let c = run(&fuzz_script(12), &RunOptions::default());
    assert_ne!(a.report.nodes[0].digest, c.report.nodes[0].digest);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Honest nodes agree, chains verify, the late joiner matches, and no
    /// node keeps blocks of an interval it records as deleted.
    #[test]
    fn random_runs_agree_and_erase(seed in any::<u64>()) {
        let out = run(&fuzz_script(seed), &RunOptions::default());
        prop_assert!(out.report.agreement);
        prop_assert!(out.report.nodes.iter().all(|n| n.valid));
        let last = out.report.steps.last().unwrap();
        let [SyncOutcome::Synced(sync)] = &last.syncs[..] else {
            panic!("sync failed: {:?}", last.syncs);
        };
        prop_assert!(sync.matches_peer());
        for n in out.net.nodes() {
            for (x, s) in n.ledger.interval_statuses() {
                if s.is_deleted() {
                    prop_assert!(n.ledger.interval_blocks(*x).is_none());
                    prop_assert!(!sync.fetched_intervals.contains(x));
                }
            }
        }
        let accepted = out.report.steps.iter().flat_map(|s| &s.actions).filter(|a| matches!(a.outcome, Outcome::Accepted { .. })).count();
        prop_assert!(accepted > 0);
    }
}
