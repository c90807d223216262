//! Scenario files: line-oriented `key = value` with `#` comments.
//!
//! | key              | value                                   | default        |
//! |------------------|-----------------------------------------|----------------|
//! | `world_size`     | integer ≥ 1                             | required       |
//! | `group`          | rank list, e.g. `0..6` or `0,2,5`        | whole world    |
//! | `comm`           | rank list, parent of `group`             | whole world    |
//! | `variant`        | operation name                          | `adaptive`     |
//! | `fault`          | `r@start` or `r@t<int>`, repeatable     | none           |
//! | `seed`           | integer                                 | 0              |
//! | `detect_on_send` | `true` or `false`                       | `true`         |
//! | `contributions`  | bits, one per group member, e.g. `1,0,1` | all ones       |
//! | `revoked`        | `true` or `false`                       | `false`        |
//! | `id`             | scenario label for CSV output            | `scenario`     |

use std::fmt::Write as _;

use crate::error::{ConfigError, ScenarioError};
use crate::metrics::Variant;
use crate::sim::{FailAt, FaultPlan, WorldRank};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub id: String,
    pub world_size: u32,
    pub group: Vec<WorldRank>,
    pub comm: Vec<WorldRank>,
    pub variant: Variant,
    pub faults: FaultPlan,
    pub seed: u64,
    pub detect_on_send: bool,
    pub contributions: Option<Vec<bool>>,
    pub revoked: bool,
}

impl Scenario {
    /// Whole-world group with no faults.
    pub fn new(world_size: u32, variant: Variant) -> Self {
        let all: Vec<WorldRank> = (0..world_size).map(WorldRank).collect();
        Scenario {
            id: "scenario".into(),
            world_size,
            group: all.clone(),
            comm: all,
            variant,
            faults: FaultPlan::new(),
            seed: 0,
            detect_on_send: true,
            contributions: None,
            revoked: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.world_size == 0 {
            return Err(ConfigError::EmptyWorld);
        }
        let in_world = |r: WorldRank| {
            if r.0 < self.world_size {
                Ok(())
            } else {
                Err(ConfigError::RankOutOfRange {
                    rank: r.0,
                    world_size: self.world_size,
                })
            }
        };
        for list in [&self.group, &self.comm] {
            if list.is_empty() {
                return Err(ConfigError::EmptyGroup);
            }
            let mut seen = std::collections::BTreeSet::new();
            for &r in list.iter() {
                in_world(r)?;
                if !seen.insert(r) {
                    return Err(ConfigError::DuplicateMember(r.0));
                }
            }
        }
        for (r, _) in self.faults.iter() {
            in_world(r)?;
        }
        if self.variant.uses_comm() {
            if let Some(r) = self.group.iter().find(|r| !self.comm.contains(r)) {
                return Err(ConfigError::NotInCommunicator(r.0));
            }
        }
        if let Some(c) = &self.contributions {
            if c.len() != self.group.len() {
                return Err(ConfigError::Invalid(format!(
                    "{} contributions for a group of {}",
                    c.len(),
                    self.group.len()
                )));
            }
        }
        Ok(())
    }

    /// Contribution bits, all ones when none were given.
    pub fn flags(&self) -> Vec<bool> {
        self.contributions
            .clone()
            .unwrap_or_else(|| vec![true; self.group.len()])
    }

    /// Render in the file syntax accepted by [`parse_scenario`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "id={}", self.id);
        let _ = writeln!(out, "world_size={}", self.world_size);
        let _ = writeln!(out, "group={}", render_ranks(&self.group));
        if self.variant.uses_comm() {
            let _ = writeln!(out, "comm={}", render_ranks(&self.comm));
        }
        let _ = writeln!(out, "variant={}", self.variant);
        for (r, at) in self.faults.iter() {
            let _ = writeln!(out, "fault={}@{}", r.0, at);
        }
        let _ = writeln!(out, "seed={}", self.seed);
        if !self.detect_on_send {
            let _ = writeln!(out, "detect_on_send=false");
        }
        if let Some(c) = &self.contributions {
            let bits: Vec<&str> = c.iter().map(|&b| if b { "1" } else { "0" }).collect();
            let _ = writeln!(out, "contributions={}", bits.join(","));
        }
        if self.revoked {
            let _ = writeln!(out, "revoked=true");
        }
        out
    }
}

fn render_ranks(ranks: &[WorldRank]) -> String {
    let n = ranks.len() as u32;
    if n > 0 && ranks.iter().enumerate().all(|(i, r)| r.0 == i as u32) {
        return format!("0..{n}");
    }
    let parts: Vec<String> = ranks.iter().map(|r| r.0.to_string()).collect();
    parts.join(",")
}

fn parse_u64(v: &str) -> Result<u64, String> {
    v.parse()
        .map_err(|_| format!("`{v}` is not a non-negative integer"))
}

fn parse_u32(v: &str) -> Result<u32, String> {
    v.parse()
        .map_err(|_| format!("`{v}` is not a non-negative integer"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

/// Comma-separated ranks and half-open `a..b` ranges.
pub fn parse_ranks(v: &str) -> Result<Vec<WorldRank>, String> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b) = (parse_u32(a.trim())?, parse_u32(b.trim())?);
                if a >= b {
                    return Err(format!("empty range `{part}`"));
                }
                out.extend((a..b).map(WorldRank));
            }
            None => out.push(WorldRank(parse_u32(part)?)),
        }
    }
    if out.is_empty() {
        return Err("empty rank list".into());
    }
    Ok(out)
}

fn parse_fault(v: &str) -> Result<(WorldRank, FailAt), String> {
    let (r, at) = v
        .split_once('@')
        .ok_or_else(|| format!("fault `{v}` is not of the form rank@start or rank@t<int>"))?;
    let rank = WorldRank(parse_u32(r.trim())?);
    let at = match at.trim() {
        "start" => FailAt::BeforeStart,
        t => match t.strip_prefix('t') {
            Some(n) => FailAt::At(parse_u64(n)?),
            None => return Err(format!("fault time `{t}` is neither `start` nor t<int>")),
        },
    };
    Ok((rank, at))
}

fn parse_bits(v: &str) -> Result<Vec<bool>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|b| match b {
            "1" => Ok(true),
            "0" => Ok(false),
            _ => Err(format!("contribution `{b}` is not 0 or 1")),
        })
        .collect()
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut world_size = None;
    let mut group = None;
    let mut comm = None;
    let mut sc = Scenario::new(1, Variant::Adaptive);
    let mut faulted = std::collections::BTreeSet::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| ScenarioError::Line { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, found `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "world_size" => world_size = Some(parse_u32(value).map_err(err)?),
            "group" => group = Some(parse_ranks(value).map_err(err)?),
            "comm" => comm = Some(parse_ranks(value).map_err(err)?),
            "variant" => sc.variant = value.parse().map_err(err)?,
            "fault" => {
                let (r, at) = parse_fault(value).map_err(err)?;
                if !faulted.insert(r) {
                    return Err(err(format!("rank {} has two faults", r.0)));
                }
                sc.faults.insert(r, at);
            }
            "seed" => sc.seed = parse_u64(value).map_err(err)?,
            "detect_on_send" => sc.detect_on_send = parse_bool(value).map_err(err)?,
            "contributions" => sc.contributions = Some(parse_bits(value).map_err(err)?),
            "revoked" => sc.revoked = parse_bool(value).map_err(err)?,
            "id" => {
                if value.is_empty() || value.contains(',') {
                    return Err(err("id must be non-empty and free of commas".into()));
                }
                sc.id = value.to_string();
            }
            other => return Err(err(format!("unknown key `{other}`"))),
        }
    }

    sc.world_size = world_size.ok_or(ScenarioError::Missing("world_size"))?;
    let all: Vec<WorldRank> = (0..sc.world_size).map(WorldRank).collect();
    sc.group = group.unwrap_or_else(|| all.clone());
    sc.comm = comm.unwrap_or(all);
    sc.validate()?;
    Ok(sc)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BYPASS: &str =
        "world_size=6\ngroup=0..6\nvariant=adaptive\nfault=2@start\nfault=5@start\nseed=1\n";

    #[test]
    fn parses_the_bypass_example() {
        let sc = parse_scenario(BYPASS).unwrap();
        assert_eq!(sc.world_size, 6);
        assert_eq!(sc.group.len(), 6);
        assert_eq!(sc.faults.prestart_count(), 2);
        assert_eq!(sc.seed, 1);
        assert_eq!(sc.variant, Variant::Adaptive);
    }

    #[test]
    fn seed_defaults_to_zero() {
        let sc = parse_scenario("world_size=4 # tiny\n\n# comment\n").unwrap();
        assert_eq!(sc.seed, 0);
        assert_eq!(sc.group, (0..4).map(WorldRank).collect::<Vec<_>>());
    }

    #[test]
    fn out_of_range_fault_is_rejected() {
        let e = parse_scenario("world_size=6\nfault=9@start\n").unwrap_err();
        assert_eq!(
            e,
            ScenarioError::Config(ConfigError::RankOutOfRange {
                rank: 9,
                world_size: 6
            })
        );
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_scenario("world_size=6\n\ncolour=blue\n").unwrap_err();
        assert!(matches!(e, ScenarioError::Line { line: 3, .. }), "{e}");
        let e = parse_scenario("world_size=6\nfault=1@soon\n").unwrap_err();
        assert!(matches!(e, ScenarioError::Line { line: 2, .. }), "{e}");
        assert_eq!(
            parse_scenario("seed=1\n"),
            Err(ScenarioError::Missing("world_size"))
        );
    }

    #[test]
    fn mixed_rank_lists() {
        assert_eq!(
            parse_ranks("0..3, 7").unwrap(),
            [0, 1, 2, 7].map(WorldRank).to_vec()
        );
        assert!(parse_ranks("3..3").is_err());
    }

    #[test]
    fn group_must_sit_inside_comm() {
        let e =
            parse_scenario("world_size=8\ncomm=0..4\ngroup=2,6\nvariant=guarded_create_group\n")
                .unwrap_err();
        assert_eq!(e, ScenarioError::Config(ConfigError::NotInCommunicator(6)));
    }

    #[test]
    fn text_round_trips() {
        let mut sc = parse_scenario(BYPASS).unwrap();
        sc.faults.insert(WorldRank(1), FailAt::At(3));
        sc.contributions = Some(vec![true, false, true, true, true, true]);
        sc.detect_on_send = false;
        sc.revoked = true;
        assert_eq!(parse_scenario(&sc.to_text()).unwrap(), sc);
    }
}
