//! Actors, steps and schedulers. A step is one program op of one core or
//! one served mailbox request on the ACU.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::CoreStatus;
use crate::machine::{Property, Sim, SimError, ViolationKind};
use crate::trace::TraceEvent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Core(usize),
    Acu,
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Core(i) => write!(f, "c{i}"),
            Actor::Acu => f.write_str("acu"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// Every program ran to completion.
    Completed,
    /// A property was violated; the run stopped there.
    Violated,
    Deadlocked,
    StepLimit,
}

impl Sim {
    /// Actors that can make progress, cores first in index order.
    pub fn enabled_actors(&self) -> Vec<Actor> {
        if !self.state.booted || !self.state.violations.is_empty() {
            return Vec::new();
        }
        let mut out: Vec<Actor> =
            (0..self.state.cluster.cores.len()).filter(|&i| self.core_enabled(i)).map(Actor::Core).collect();
        if self.state.mailbox.a_to_b.is_some() {
            out.push(Actor::Acu);
        }
        out
    }

    pub fn step(&mut self, actor: Actor) -> Result<(), SimError> {
        if !self.state.booted {
            return Err(SimError::NotBooted);
        }
        match actor {
            Actor::Core(i) => {
                if i >= self.state.cluster.cores.len() {
                    return Err(SimError::NoSuchCore(i));
                }
                if self.core_enabled(i) {
                    self.step_core(i);
                }
            }
            Actor::Acu => self.step_acu(),
        }
        self.check_invariants();
        Ok(())
    }

    /// True when every core stopped, for whatever reason.
    pub fn all_stopped(&self) -> bool {
        self.state.cluster.cores.iter().all(|c| !c.is_live())
    }

    pub fn all_finished(&self) -> bool {
        self.state.cluster.cores.iter().all(|c| c.status == CoreStatus::Finished)
    }

    /// Records a deadlock if no actor is enabled while some core still has
    /// work. Returns whether one was found.
    pub fn check_deadlock(&mut self) -> bool {
        if !self.state.violations.is_empty() || !self.enabled_actors().is_empty() || self.all_stopped() {
            return false;
        }
        self.trace.push(TraceEvent::Deadlock);
        self.report(Property::Liveness, ViolationKind::Deadlock, None);
        true
    }

    pub fn status(&mut self) -> Option<RunStatus> {
        if self.state.violations.iter().any(|v| v.kind == ViolationKind::Deadlock) {
            return Some(RunStatus::Deadlocked);
        }
        if !self.state.violations.is_empty() {
            return Some(RunStatus::Violated);
        }
        if self.all_stopped() {
            return Some(RunStatus::Completed);
        }
        if self.check_deadlock() {
            return Some(RunStatus::Deadlocked);
        }
        None
    }

    /// Runs until completion, a violation, a deadlock or `max_steps`.
    pub fn run(&mut self, scheduler: &mut dyn Scheduler, max_steps: usize) -> Result<RunStatus, SimError> {
        for _ in 0..max_steps {
            if let Some(s) = self.status() {
                return Ok(s);
            }
            let enabled = self.enabled_actors();
            let actor = scheduler.pick(&enabled);
            self.step(actor)?;
        }
        Ok(self.status().unwrap_or(RunStatus::StepLimit))
    }
}

pub trait Scheduler {
    /// Picks one of `enabled`, which is never empty.
    fn pick(&mut self, enabled: &[Actor]) -> Actor;
}

/// Lowest-numbered enabled core first; the ACU only when no core can move.
#[derive(Clone, Debug, Default)]
pub struct InOrder;

impl<S: Scheduler + ?Sized> Scheduler for Box<S> {
    fn pick(&mut self, enabled: &[Actor]) -> Actor {
        (**self).pick(enabled)
    }
}

impl Scheduler for InOrder {
    fn pick(&mut self, enabled: &[Actor]) -> Actor {
        // serve the mailbox as soon as something is waiting on it
        if enabled.contains(&Actor::Acu) {
            return Actor::Acu;
        }
        enabled[0]
    }
}

#[derive(Clone, Debug, Default)]
pub struct RoundRobin {
    last: Option<Actor>,
}

impl Scheduler for RoundRobin {
    fn pick(&mut self, enabled: &[Actor]) -> Actor {
        let next = match self.last {
            Some(last) => enabled.iter().copied().find(|a| *a > last).unwrap_or(enabled[0]),
            None => enabled[0],
        };
        self.last = Some(next);
        next
    }
}

#[derive(Clone, Debug)]
pub struct RandomScheduler {
    rng: ChaCha8Rng,
}

impl RandomScheduler {
    pub fn new(seed: u64) -> Self {
        RandomScheduler { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Scheduler for RandomScheduler {
    fn pick(&mut self, enabled: &[Actor]) -> Actor {
        *enabled.choose(&mut self.rng).expect("scheduler called with no enabled actor")
    }
}

/// Replays a recorded schedule, then falls back to [`InOrder`].
#[derive(Clone, Debug)]
pub struct Replay {
    schedule: Vec<Actor>,
    pos: usize,
}

impl Replay {
    pub fn new(schedule: Vec<Actor>) -> Self {
        Replay { schedule, pos: 0 }
    }
}

impl Scheduler for Replay {
    fn pick(&mut self, enabled: &[Actor]) -> Actor {
        while let Some(a) = self.schedule.get(self.pos).copied() {
            self.pos += 1;
            if enabled.contains(&a) {
                return a;
            }
        }
        InOrder.pick(enabled)
    }
}
