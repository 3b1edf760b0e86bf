//! Bounded exhaustive exploration of step interleavings.
//!
//! Breadth-first over schedules, deduplicating states by fingerprint, so
//! the first witness found for a violation is a shortest one. Each layer
//! is expanded in parallel and merged in schedule order, which keeps the
//! report identical from run to run.

use std::collections::{BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::machine::{Sim, Violation};
use crate::monitor::Phase;
use crate::sched::{Actor, Replay};
use crate::trace::Trace;

pub const BUDGET_ENV: &str = "REZONE_SIM_BUDGET";
const DEFAULT_BUDGET: usize = 5_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreConfig {
    pub depth: usize,
    /// Maximum number of distinct states before giving up.
    pub budget: usize,
    /// Stop at the first layer that yields a violation.
    pub stop_on_violation: bool,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        let budget = std::env::var(BUDGET_ENV).ok().and_then(|v| v.parse().ok()).unwrap_or(DEFAULT_BUDGET);
        ExploreConfig { depth: 40, budget, stop_on_violation: false }
    }
}

impl ExploreConfig {
    pub fn depth(depth: usize) -> Self {
        ExploreConfig { depth, ..Default::default() }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExploreError {
    #[error("state budget of {budget} exceeded at depth {depth}")]
    BudgetExceeded { budget: usize, depth: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub violation: Violation,
    pub schedule: Vec<Actor>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationReport {
    pub states_visited: usize,
    pub transitions: usize,
    pub depth_reached: usize,
    /// Every schedule terminated before the depth bound.
    pub exhausted: bool,
    /// States in which every core had stopped.
    pub terminal_states: usize,
    /// One shortest witness per distinct violation.
    pub violations: Vec<Witness>,
    pub phase_coverage: BTreeSet<Phase>,
}

impl ExplorationReport {
    pub fn is_safe(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn find(&self, pred: impl Fn(&Violation) -> bool) -> Option<&Witness> {
        self.violations.iter().find(|w| pred(&w.violation))
    }
}

enum Succ {
    Next(Box<Sim>, Vec<Actor>),
    Violated(Vec<Violation>, Vec<Actor>),
    Terminal,
}

fn expand(sim: &Sim, schedule: &[Actor]) -> Vec<Succ> {
    let enabled = sim.enabled_actors();
    if enabled.is_empty() {
        let mut s = sim.clone();
        if s.check_deadlock() {
            return vec![Succ::Violated(s.violations().to_vec(), schedule.to_vec())];
        }
        return vec![Succ::Terminal];
    }
    enabled
        .into_iter()
        .map(|actor| {
            let mut s = sim.clone();
            let mut sched = schedule.to_vec();
            sched.push(actor);
            s.step(actor).expect("explored simulators are booted");
            if s.violations().is_empty() {
                Succ::Next(Box::new(s), sched)
            } else {
                Succ::Violated(s.violations().to_vec(), sched)
            }
        })
        .collect()
}

/// Explores every interleaving of `initial` up to `cfg.depth` steps.
pub fn explore(initial: &Sim, cfg: &ExploreConfig) -> Result<ExplorationReport, ExploreError> {
    let mut root = initial.clone();
    root.set_trace(Trace::disabled());
    let mut report = ExplorationReport::default();
    let mut seen_kinds: BTreeSet<(crate::machine::Property, &'static str)> = BTreeSet::new();
    let mut visited: HashSet<u64> = HashSet::new();
    visited.insert(root.fingerprint());
    report.states_visited = 1;
    let mut frontier: Vec<(Sim, Vec<Actor>)> = vec![(root, Vec::new())];
    let mut depth = 0;
    while !frontier.is_empty() && depth < cfg.depth {
        for (sim, _) in &frontier {
            report.phase_coverage.extend(sim.state.cluster.cores.iter().map(|c| c.phase));
        }
        let layers: Vec<Vec<Succ>> = frontier.par_iter().map(|(sim, sched)| expand(sim, sched)).collect();
        depth += 1;
        report.depth_reached = depth;
        let mut next = Vec::new();
        let mut found = false;
        for succ in layers.into_iter().flatten() {
            match succ {
                Succ::Terminal => report.terminal_states += 1,
                Succ::Violated(vs, schedule) => {
                    report.transitions += 1;
                    for v in vs {
                        if seen_kinds.insert((v.property, v.kind.label())) {
                            report.violations.push(Witness { violation: v, schedule: schedule.clone() });
                        }
                    }
                    found = true;
                }
                Succ::Next(sim, schedule) => {
                    report.transitions += 1;
                    if visited.insert(sim.fingerprint()) {
                        report.states_visited += 1;
                        if report.states_visited > cfg.budget {
                            return Err(ExploreError::BudgetExceeded { budget: cfg.budget, depth });
                        }
                        next.push((*sim, schedule));
                    }
                }
            }
        }
        frontier = next;
        if found && cfg.stop_on_violation {
            return Ok(report);
        }
    }
    for (sim, _) in &frontier {
        report.phase_coverage.extend(sim.state.cluster.cores.iter().map(|c| c.phase));
    }
    // leftover frontier states that can still move mean the bound cut schedules short
    report.exhausted = frontier.iter().all(|(s, _)| s.enabled_actors().is_empty());
    if report.exhausted {
        for (sim, sched) in frontier {
            for succ in expand(&sim, &sched) {
                match succ {
                    Succ::Terminal => report.terminal_states += 1,
                    Succ::Violated(vs, schedule) => {
                        for v in vs {
                            if seen_kinds.insert((v.property, v.kind.label())) {
                                report.violations.push(Witness { violation: v, schedule: schedule.clone() });
                            }
                        }
                    }
                    Succ::Next(..) => {}
                }
            }
        }
    }
    Ok(report)
}

/// Re-runs a schedule from `initial` with tracing on.
pub fn replay(initial: &Sim, schedule: &[Actor]) -> Sim {
    let mut sim = initial.clone();
    sim.set_trace(Trace::recording());
    let mut sched = Replay::new(schedule.to_vec());
    for _ in 0..schedule.len() {
        let enabled = sim.enabled_actors();
        if enabled.is_empty() {
            sim.check_deadlock();
            break;
        }
        let actor = crate::sched::Scheduler::pick(&mut sched, &enabled);
        sim.step(actor).expect("replayed simulators are booted");
    }
    sim.check_deadlock();
    sim
}
