use crate::error::ConfigError;
use crate::lda::{run_lda, GroupSpec, LdaVariant};
use crate::metrics::{
    agreement_outcomes, comm_outcomes, create_outcomes, lda_outcomes, summarize, MetricsRow,
    RunReport, Variant,
};
use crate::ncops::{self, CommState, OpReport, WORLD_CONTEXT};
use crate::sim::{World, WorldConfig};

use super::scenario::Scenario;

fn world<T: 'static>(sc: &Scenario) -> Result<World<T>, ConfigError> {
    let mut cfg = WorldConfig::new(sc.world_size, sc.faults.clone(), sc.seed);
    cfg.detect_on_send = sc.detect_on_send;
    let mut w = World::new(cfg)?;
    if sc.revoked {
        w.revoke(WORLD_CONTEXT, 0);
    }
    Ok(w)
}

/// Run one scenario and summarize it.
pub fn run_scenario(sc: &Scenario) -> Result<(RunReport, MetricsRow), ConfigError> {
    sc.validate()?;
    let group = GroupSpec::new(sc.group.clone())?;
    let comm = CommState::new(GroupSpec::new(sc.comm.clone())?, WORLD_CONTEXT);
    let as_comm = CommState::new(group.clone(), WORLD_CONTEXT);
    let flags = sc.flags();

    macro_rules! op {
        ($call:expr, $outcomes:path) => {{
            let mut w = world(sc)?;
            let r: OpReport<_> = $call(&mut w);
            ($outcomes(&r), r.run, r.participants, w.trace())
        }};
    }

    let (outcomes, run, participants, trace) = match sc.variant {
        Variant::Naive | Variant::Adaptive => {
            let mut w = world(sc)?;
            let v = if sc.variant == Variant::Naive {
                LdaVariant::Naive
            } else {
                LdaVariant::Adaptive
            };
            let r = run_lda(&mut w, &group, v, sc.contributions.as_deref());
            (lda_outcomes(&group, &r), r.run, r.participants, w.trace())
        }
        Variant::BaselineCreateGroup => op!(
            |w: &mut _| ncops::baseline_create_group(w, &comm, &group),
            create_outcomes
        ),
        Variant::BaselineCreateFromGroup => op!(
            |w: &mut _| ncops::baseline_create_from_group(w, &group),
            create_outcomes
        ),
        Variant::GuardedCreateGroup => op!(
            |w: &mut _| ncops::guarded_create_group(w, &comm, &group),
            create_outcomes
        ),
        Variant::GuardedCreateFromGroup => op!(
            |w: &mut _| ncops::guarded_create_from_group(w, &group),
            create_outcomes
        ),
        Variant::NcShrink => op!(|w: &mut _| ncops::nc_shrink(w, &as_comm), comm_outcomes),
        Variant::CollectiveShrink => op!(
            |w: &mut _| ncops::collective_shrink_baseline(w, &as_comm),
            comm_outcomes
        ),
        Variant::NcAgree => op!(
            |w: &mut _| ncops::nc_agree(w, &group, &flags),
            agreement_outcomes
        ),
        Variant::CollectiveAgree => op!(
            |w: &mut _| ncops::collective_agree_baseline(w, &group, &flags),
            agreement_outcomes
        ),
    };

    let report = RunReport {
        scenario_id: sc.id.clone(),
        variant: sc.variant,
        group,
        plan: sc.faults.clone(),
        outcomes,
        run,
        participants,
        trace,
    };
    let row = summarize(&report);
    Ok((report, row))
}
