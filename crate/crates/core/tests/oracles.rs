use ncft::cli::{run_scenario, Scenario};
use ncft::metrics::{ProcessOutcome, Variant};
use ncft::sim::{EventKind, FaultPlan, WorldRank};
use ncft::topology::{parent, AlgRank, TreeShape};

fn dead_sets(max: u32) -> impl Iterator<Item = (u32, Vec<u32>)> {
    (1..=max).flat_map(|s| {
        (0u32..(1 << s) - 1).map(move |m| (s, (0..s).filter(|r| m >> r & 1 == 1).collect()))
    })
}

#[test]
fn guarded_calls_never_deadlock_and_agree() {
    for variant in [
        Variant::GuardedCreateGroup,
        Variant::GuardedCreateFromGroup,
        Variant::NcShrink,
        Variant::NcAgree,
    ] {
        for (s, dead) in dead_sets(8) {
            let mut sc = Scenario::new(s, variant);
            sc.faults = FaultPlan::before_start(dead.iter().copied());
            let (r, row) = run_scenario(&sc).unwrap();
            assert!(!row.deadlocked, "{variant} s={s} F={dead:?}");
            assert_eq!(row.agreed, Some(true), "{variant} s={s} F={dead:?}");
            let alive: Vec<WorldRank> = (0..s)
                .filter(|x| !dead.contains(x))
                .map(WorldRank)
                .collect();
            for o in r.outcomes.values() {
                match (variant, o) {
                    (Variant::GuardedCreateGroup, ProcessOutcome::ProcFailed) => {
                        assert!(!dead.is_empty())
                    }
                    (Variant::GuardedCreateGroup, ProcessOutcome::Returned { .. }) => {
                        assert!(dead.is_empty())
                    }
                    (_, ProcessOutcome::Returned { members, .. }) => assert_eq!(members, &alive),
                    (_, other) => panic!("{variant} s={s} F={dead:?}: {other:?}"),
                }
            }
        }
    }
}

/// Dead ranks plus tree edges touching a dead position.
fn probe_budget(s: u32, dead: &[u32]) -> usize {
    let shape = TreeShape::new(s);
    let edges = (1..s)
        .filter(|&r| {
            let p = parent(AlgRank(r), shape).unwrap().0;
            dead.contains(&r) || dead.contains(&p)
        })
        .count();
    dead.len() + edges
}

/// Failed-operation detections plus probe/ack exchanges stay within the
/// budget. Re-routed data messages to a substitute holder are not probes.
#[test]
fn probe_and_detection_count_is_bounded() {
    for (s, dead) in dead_sets(8) {
        let mut sc = Scenario::new(s, Variant::Adaptive);
        sc.faults = FaultPlan::before_start(dead.iter().copied());
        let (r, row) = run_scenario(&sc).unwrap();
        let exchanges = r
            .trace
            .events()
            .iter()
            .filter(|e| e.kind == EventKind::Probe)
            .count();
        let used = row.failed_detections + exchanges;
        let budget = probe_budget(s, &dead);
        assert!(used <= budget, "s={s} F={dead:?}: {used} > {budget}");
    }
}

#[test]
fn naive_oracle_finds_a_partition() {
    let bad = dead_sets(6).find(|(s, dead)| {
        let mut sc = Scenario::new(*s, Variant::Naive);
        sc.faults = FaultPlan::before_start(dead.iter().copied());
        run_scenario(&sc).unwrap().1.agreed == Some(false)
    });
    assert!(bad.is_some());
}
