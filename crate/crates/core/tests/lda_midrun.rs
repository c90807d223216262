use ncft::lda::{adaptive_lda, GroupSpec};
use ncft::sim::{FailAt, FaultPlan, RunOutcome, World, WorldConfig, WorldRank};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sweep(detect_on_send: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bad = 0;
    for case in 0..3000 {
        let s: u32 = rng.gen_range(1..=64);
        let horizon = 2 * u64::from(ncft::topology::TreeShape::new(s).bits()) + 2;
        let mut plan = FaultPlan::new();
        let nf = rng.gen_range(0..=s);
        for _ in 0..nf {
            let r = rng.gen_range(0..s);
            let at = if rng.gen_bool(0.3) {
                FailAt::BeforeStart
            } else {
                FailAt::At(rng.gen_range(0..=horizon))
            };
            plan.insert(WorldRank(r), at);
        }
        let flags: Vec<bool> = (0..s).map(|_| rng.gen_bool(0.9)).collect();
        let mut cfg = WorldConfig::new(s, plan.clone(), case);
        cfg.detect_on_send = detect_on_send;
        let mut w = World::new(cfg).unwrap();
        let res = adaptive_lda(&mut w, &GroupSpec::prefix(s), Some(&flags));
        let outs: Vec<_> = res.completed().collect();
        let agreed = outs
            .windows(2)
            .all(|p| p[0].1.survivors == p[1].1.survivors && p[0].1.flag == p[1].1.flag);
        let self_in = outs.iter().all(|(r, o)| o.survivors.contains(r));
        if res.run != RunOutcome::Completed || !agreed || !self_in {
            bad += 1;
            if bad < 5 {
                eprintln!(
                    "case {case} s={s} plan={:?} run={:?} agreed={agreed} self_in={self_in}",
                    plan.iter().collect::<Vec<_>>(),
                    res.run.is_deadlock()
                );
            }
        }
    }
    assert_eq!(bad, 0);
}

#[test]
fn midrun_faults_keep_agreement() {
    sweep(true);
}

#[test]
fn midrun_faults_keep_agreement_without_send_detection() {
    sweep(false);
}
