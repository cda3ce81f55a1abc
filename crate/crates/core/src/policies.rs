//! Budget-exact policies for the N-armed system.
//!
//! Every step returns exactly `alpha N` active arms. Randomness is drawn in a
//! fixed order: set update, ideal actions (arm order), tie-breaks.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::lp::LpSolution;
use crate::lyapunov::LyapunovKit;
use crate::mdp::{Kernel, RbInstance};
use crate::setupdate::choose;
use crate::{setopt, setupdate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    SetExpansion,
    SetExpansionLpIndex,
    Id,
    SetOptimization,
    LpPriority,
    Ftva,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::SetExpansion,
        PolicyKind::SetExpansionLpIndex,
        PolicyKind::Id,
        PolicyKind::SetOptimization,
        PolicyKind::LpPriority,
        PolicyKind::Ftva,
        PolicyKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::SetExpansion => "set-expansion",
            PolicyKind::SetExpansionLpIndex => "set-expansion:lp-index",
            PolicyKind::Id => "id",
            PolicyKind::SetOptimization => "set-optimization",
            PolicyKind::LpPriority => "lp-priority",
            PolicyKind::Ftva => "ftva",
            PolicyKind::Random => "random",
        }
    }

    /// Policies that keep an explicit focus set.
    pub fn has_focus_set(self) -> bool {
        matches!(
            self,
            PolicyKind::SetExpansion
                | PolicyKind::SetExpansionLpIndex
                | PolicyKind::SetOptimization
        )
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        PolicyKind::ALL
            .into_iter()
            .find(|k| {
                k.name() == key
                    || (key == "set-expansion-lp-index" && *k == PolicyKind::SetExpansionLpIndex)
            })
            .ok_or_else(|| Error::Input(format!("unknown policy {s:?}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyStep {
    pub actions: Vec<u8>,
    pub ideal: Option<Vec<u8>>,
    pub focus: Option<Vec<bool>>,
    /// Focus-set members whose action equals the ideal action.
    pub conformity: Option<Vec<bool>>,
    /// `N^{pibar*}_t` of the ID policy.
    pub n_follow: Option<usize>,
}

impl PolicyStep {
    pub fn active(&self) -> usize {
        self.actions.iter().map(|&a| a as usize).sum()
    }
}

/// Draws `A_hat(i) ~ pibar*(.|S(i))` in arm order. Deterministic rows
/// consume no randomness.
pub fn sample_ideal_actions<R: Rng>(c_pibs: &[f64], states: &[usize], rng: &mut R) -> Vec<u8> {
    states
        .iter()
        .map(|&s| {
            let c = c_pibs[s];
            if c >= 1.0 {
                1
            } else if c <= 0.0 {
                0
            } else {
                (rng.random::<f64>() < c) as u8
            }
        })
        .collect()
}

/// Prefix rule: follow ideal actions on the longest budget-compatible
/// prefix, then fill the tail with a constant action.
pub fn rectify_id(ideal: &[u8], budget: usize) -> (Vec<u8>, usize) {
    let n = ideal.len();
    let ones: usize = ideal.iter().map(|&a| a as usize).sum();
    let (fill, target, count_of) = if ones >= budget {
        (0u8, budget, 1u8)
    } else {
        (1u8, n - budget, 0u8)
    };
    let mut seen = 0;
    let mut n_follow = n;
    for (i, &a) in ideal.iter().enumerate() {
        if a == count_of {
            seen += 1;
            if seen > target {
                n_follow = i;
                break;
            }
        }
    }
    let actions = (0..n)
        .map(|i| if i < n_follow { ideal[i] } else { fill })
        .collect();
    (actions, n_follow)
}

/// Three-branch rectification with uniform tie-breaking.
pub fn rectify_random<R: Rng>(ideal: &[u8], focus: &[bool], budget: usize, rng: &mut R) -> Vec<u8> {
    let n = ideal.len();
    let (mut d1, mut d0, mut o1, mut o0) = (vec![], vec![], vec![], vec![]);
    for i in 0..n {
        match (focus[i], ideal[i]) {
            (true, 1) => d1.push(i),
            (true, _) => d0.push(i),
            (false, 1) => o1.push(i),
            (false, _) => o0.push(i),
        }
    }
    let outside = o1.len() + o0.len();
    let mut actions = vec![0u8; n];
    if d1.len() >= budget {
        for i in choose(&d1, budget, rng) {
            actions[i] = 1;
        }
    } else if d1.len() + outside <= budget {
        actions.iter_mut().for_each(|a| *a = 1);
        for i in choose(&d0, n - budget, rng) {
            actions[i] = 0;
        }
    } else {
        d1.iter().for_each(|&i| actions[i] = 1);
        let need = budget - d1.len();
        if o1.len() >= need {
            for i in choose(&o1, need, rng) {
                actions[i] = 1;
            }
        } else {
            o1.iter().for_each(|&i| actions[i] = 1);
            for i in choose(&o0, need - o1.len(), rng) {
                actions[i] = 1;
            }
        }
    }
    actions
}

/// `pool` ordered by `key` descending, uniformly random among equal keys.
fn ranked<R: Rng>(pool: &mut Vec<usize>, key: impl Fn(usize) -> usize, rng: &mut R) {
    pool.shuffle(rng);
    pool.sort_by_key(|&i| std::cmp::Reverse(key(i)));
}

/// Activates `budget` arms of `pool` by descending state rank, lowest arm
/// index first within a state.
fn priority_fill(
    pool: &[usize],
    states: &[usize],
    rank: &[usize],
    budget: usize,
    actions: &mut [u8],
) {
    let mut pool = pool.to_vec();
    pool.sort_by_key(|&i| (std::cmp::Reverse(rank[states[i]]), i));
    pool.iter().take(budget).for_each(|&i| actions[i] = 1);
}

/// Rectification that breaks ties by LP rank and runs the priority policy
/// outside the focus set.
pub fn rectify_lp_index<R: Rng>(
    ideal: &[u8],
    focus: &[bool],
    states: &[usize],
    rank: &[usize],
    budget: usize,
    rng: &mut R,
) -> Vec<u8> {
    let n = ideal.len();
    let (mut d1, mut d0, mut rest) = (vec![], vec![], vec![]);
    for i in 0..n {
        match (focus[i], ideal[i]) {
            (true, 1) => d1.push(i),
            (true, _) => d0.push(i),
            (false, _) => rest.push(i),
        }
    }
    let mut actions = vec![0u8; n];
    if d1.len() >= budget {
        ranked(&mut d1, |i| rank[states[i]], rng);
        d1.iter().take(budget).for_each(|&i| actions[i] = 1);
    } else if d1.len() + rest.len() <= budget {
        actions.iter_mut().for_each(|a| *a = 1);
        // Smaller rank first.
        ranked(&mut d0, |i| usize::MAX - rank[states[i]], rng);
        d0.iter().take(n - budget).for_each(|&i| actions[i] = 0);
    } else {
        d1.iter().for_each(|&i| actions[i] = 1);
        priority_fill(&rest, states, rank, budget - d1.len(), &mut actions);
    }
    actions
}

/// Priority policy over the whole population.
pub fn lp_priority(states: &[usize], rank: &[usize], budget: usize) -> Vec<u8> {
    let mut actions = vec![0u8; states.len()];
    let all: Vec<usize> = (0..states.len()).collect();
    priority_fill(&all, states, rank, budget, &mut actions);
    actions
}

/// Real actions follow virtual ones where the budget allows. Arms whose
/// real state equals their virtual state are served first, uniformly at
/// random within each group.
pub fn rectify_ftva<R: Rng>(ideal: &[u8], good: &[bool], budget: usize, rng: &mut R) -> Vec<u8> {
    let n = ideal.len();
    let ones: Vec<usize> = (0..n).filter(|&i| ideal[i] == 1).collect();
    let mut actions = vec![0u8; n];
    if ones.len() >= budget {
        let (g, b): (Vec<usize>, Vec<usize>) = ones.iter().partition(|&&i| good[i]);
        let take_g = g.len().min(budget);
        for i in choose(&g, take_g, rng)
            .into_iter()
            .chain(choose(&b, budget - take_g, rng))
        {
            actions[i] = 1;
        }
    } else {
        ones.iter().for_each(|&i| actions[i] = 1);
        let zeros: Vec<usize> = (0..n).filter(|&i| ideal[i] == 0).collect();
        let (g, b): (Vec<usize>, Vec<usize>) = zeros.iter().partition(|&&i| good[i]);
        let need = budget - ones.len();
        let take_b = b.len().min(need);
        for i in choose(&b, take_b, rng)
            .into_iter()
            .chain(choose(&g, need - take_b, rng))
        {
            actions[i] = 1;
        }
    }
    actions
}

/// Per-replication mutable policy state.
#[derive(Debug, Clone, Default)]
pub struct PolicyState {
    pub focus: Vec<bool>,
    pub virtual_states: Vec<usize>,
    /// FTVA arms whose real and virtual copies share state and action this
    /// step; they share the next state too.
    pub coupled: Vec<bool>,
}

/// Everything a policy needs that does not change during a run.
#[derive(Debug, Clone)]
pub struct Policy {
    pub kind: PolicyKind,
    pub budget: usize,
    pub n_states: usize,
    pub beta: f64,
    pub c_pibs: Vec<f64>,
    pub mu_star: Vec<f64>,
    /// Priority rank per state; higher means activated first.
    pub rank: Vec<usize>,
    pub kit: Option<LyapunovKit>,
    kernel: Kernel,
}

impl Policy {
    pub fn new(
        kind: PolicyKind,
        inst: &RbInstance,
        sol: &LpSolution,
        budget: usize,
    ) -> Result<Self> {
        let n = inst.n_states;
        let rank = match kind {
            PolicyKind::LpPriority | PolicyKind::SetExpansionLpIndex => {
                let order = sol.priority_order()?;
                let mut rank = vec![0; n];
                order
                    .iter()
                    .enumerate()
                    .for_each(|(pos, &s)| rank[s] = n - pos);
                rank
            }
            _ => vec![0; n],
        };
        let kit = match kind {
            PolicyKind::SetOptimization => Some(LyapunovKit::build_or_discounted(sol)?),
            _ => None,
        };
        Ok(Policy {
            kind,
            budget,
            n_states: n,
            beta: inst.beta(),
            c_pibs: sol.c_pibs.clone(),
            mu_star: sol.mu_star.clone(),
            rank,
            kit,
            kernel: Kernel::new(inst),
        })
    }

    pub fn init_state(&self, states: &[usize]) -> PolicyState {
        PolicyState {
            focus: vec![false; states.len()],
            virtual_states: if self.kind == PolicyKind::Ftva {
                states.to_vec()
            } else {
                Vec::new()
            },
            coupled: Vec::new(),
        }
    }

    pub fn step<R: Rng>(&self, st: &mut PolicyState, states: &[usize], rng: &mut R) -> PolicyStep {
        let n = states.len();
        let budget = self.budget;
        match self.kind {
            PolicyKind::SetExpansion
            | PolicyKind::SetExpansionLpIndex
            | PolicyKind::SetOptimization => {
                let focus = if self.kind == PolicyKind::SetOptimization {
                    let kit = self.kit.as_ref().expect("kit built for set-optimization");
                    let mut all = vec![0; self.n_states];
                    states.iter().for_each(|&s| all[s] += 1);
                    let r = setopt::solve(kit, &all);
                    setopt::realize(states, &r.counts, rng)
                } else {
                    setupdate::update(
                        states,
                        &st.focus,
                        self.n_states,
                        &self.mu_star,
                        self.beta,
                        rng,
                    )
                };
                let ideal = sample_ideal_actions(&self.c_pibs, states, rng);
                let actions = if self.kind == PolicyKind::SetExpansionLpIndex {
                    rectify_lp_index(&ideal, &focus, states, &self.rank, budget, rng)
                } else {
                    rectify_random(&ideal, &focus, budget, rng)
                };
                let conformity = (0..n).map(|i| focus[i] && actions[i] == ideal[i]).collect();
                st.focus.clone_from(&focus);
                PolicyStep {
                    actions,
                    ideal: Some(ideal),
                    focus: Some(focus),
                    conformity: Some(conformity),
                    n_follow: None,
                }
            }
            PolicyKind::Id => {
                let ideal = sample_ideal_actions(&self.c_pibs, states, rng);
                let (actions, n_follow) = rectify_id(&ideal, budget);
                PolicyStep {
                    actions,
                    ideal: Some(ideal),
                    n_follow: Some(n_follow),
                    ..Default::default()
                }
            }
            PolicyKind::LpPriority => PolicyStep {
                actions: lp_priority(states, &self.rank, budget),
                ..Default::default()
            },
            PolicyKind::Ftva => {
                let ideal = sample_ideal_actions(&self.c_pibs, &st.virtual_states, rng);
                let good: Vec<bool> = (0..n).map(|i| st.virtual_states[i] == states[i]).collect();
                let actions = rectify_ftva(&ideal, &good, budget, rng);
                st.coupled = (0..n).map(|i| good[i] && actions[i] == ideal[i]).collect();
                PolicyStep {
                    actions,
                    ideal: Some(ideal),
                    ..Default::default()
                }
            }
            PolicyKind::Random => {
                let all: Vec<usize> = (0..n).collect();
                let mut actions = vec![0u8; n];
                for i in choose(&all, budget, rng) {
                    actions[i] = 1;
                }
                PolicyStep {
                    actions,
                    ..Default::default()
                }
            }
        }
    }

    /// Post-transition bookkeeping for FTVA, given the new real states.
    /// Coupled virtual arms copy the real move; the others draw their own
    /// transition under the virtual action, in arm order.
    pub fn advance<R: Rng>(
        &self,
        st: &mut PolicyState,
        step: &PolicyStep,
        next_states: &[usize],
        rng: &mut R,
    ) {
        if self.kind == PolicyKind::Ftva {
            let ideal = step.ideal.as_ref().expect("ftva records virtual actions");
            for i in 0..next_states.len() {
                st.virtual_states[i] = if st.coupled[i] {
                    next_states[i]
                } else {
                    self.kernel.sample(st.virtual_states[i], ideal[i], rng)
                };
            }
        }
    }
}
