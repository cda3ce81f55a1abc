//! Single-armed MDP data and N-armed budget configuration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-9;

/// Single-armed MDP `(P, r)` with budget fraction `alpha`.
///
/// `p0[s][s']` is the probability of moving from `s` to `s'` under the
/// passive action, `p1` under the active one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbInstance {
    pub name: String,
    pub n_states: usize,
    pub p0: Vec<Vec<f64>>,
    pub p1: Vec<Vec<f64>>,
    pub r0: Vec<f64>,
    pub r1: Vec<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl RbInstance {
    pub fn from_json(text: &str) -> Result<Self> {
        let inst: RbInstance =
            serde_json::from_str(text).map_err(|e| Error::Input(format!("instance JSON: {e}")))?;
        Ok(inst)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    /// Every violated invariant, in a fixed order. Never mutates.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let n = self.n_states;
        if n == 0 {
            v.push("n_states must be positive".to_string());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            v.push(format!("alpha out of range: {}", self.alpha));
        }
        for (label, p) in [("p0", &self.p0), ("p1", &self.p1)] {
            if p.len() != n {
                v.push(format!("{label} has {} rows, expected {n}", p.len()));
                continue;
            }
            for (s, row) in p.iter().enumerate() {
                if row.len() != n {
                    v.push(format!(
                        "{label} row {s} has {} entries, expected {n}",
                        row.len()
                    ));
                    continue;
                }
                if row.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    v.push(format!(
                        "{label} row {s} has a negative or non-finite entry"
                    ));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_TOL {
                    v.push(format!("{label} row {s} not stochastic (sums to {sum})"));
                }
            }
        }
        for (label, r) in [("r0", &self.r0), ("r1", &self.r1)] {
            if r.len() != n {
                v.push(format!("{label} has {} entries, expected {n}", r.len()));
            } else if r.iter().any(|x| !x.is_finite()) {
                v.push(format!("{label} has a non-finite entry"));
            }
        }
        ValidationReport { violations: v }
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::Input(format!(
                "instance '{}': {}",
                self.name,
                report.violations.join("; ")
            )))
        }
    }

    /// Rescales every transition row to sum to one. Opt-in only.
    pub fn renormalize(&mut self) {
        for row in self.p0.iter_mut().chain(self.p1.iter_mut()) {
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|x| *x /= sum);
            }
        }
    }

    #[inline]
    pub fn p(&self, s: usize, a: u8, t: usize) -> f64 {
        if a == 0 {
            self.p0[s][t]
        } else {
            self.p1[s][t]
        }
    }

    pub fn row(&self, s: usize, a: u8) -> &[f64] {
        if a == 0 {
            &self.p0[s]
        } else {
            &self.p1[s]
        }
    }

    pub fn reward(&self, s: usize, a: u8) -> Result<f64> {
        if s >= self.n_states || a > 1 {
            return Err(Error::Input(format!(
                "state/action ({s}, {a}) out of range for {} states",
                self.n_states
            )));
        }
        Ok(self.r(s, a))
    }

    #[inline]
    pub fn r(&self, s: usize, a: u8) -> f64 {
        if a == 0 {
            self.r0[s]
        } else {
            self.r1[s]
        }
    }

    pub fn r_max(&self) -> f64 {
        self.r0
            .iter()
            .chain(self.r1.iter())
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// `min(alpha, 1 - alpha)`.
    pub fn beta(&self) -> f64 {
        self.alpha.min(1.0 - self.alpha)
    }
}

/// How arms are placed at time zero.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialStates {
    UniformRandom,
    AllState(usize),
    Explicit(Vec<usize>),
}

impl std::str::FromStr for InitialStates {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "uniform-random" {
            return Ok(InitialStates::UniformRandom);
        }
        if let Some(k) = s.strip_prefix("all-state-") {
            return k
                .parse()
                .map(InitialStates::AllState)
                .map_err(|_| Error::Input(format!("bad initial-state rule '{s}'")));
        }
        let states: std::result::Result<Vec<usize>, _> =
            s.split(',').map(|x| x.trim().parse()).collect();
        states
            .map(InitialStates::Explicit)
            .map_err(|_| Error::Input(format!("bad initial-state rule '{s}'")))
    }
}

/// Number of arms, integral budget and initial placement.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmConfig {
    pub n_arms: usize,
    pub budget: usize,
    pub initial: InitialStates,
}

impl ArmConfig {
    /// Rejects any `n_arms` for which `alpha * n_arms` is not an integer.
    pub fn new(instance: &RbInstance, n_arms: usize, initial: InitialStates) -> Result<Self> {
        if n_arms == 0 {
            return Err(Error::Input("n_arms must be positive".into()));
        }
        let exact = instance.alpha * n_arms as f64;
        let budget = exact.round();
        if (exact - budget).abs() >= 1e-9 {
            return Err(Error::Input(format!(
                "alpha * N = {exact} is not an integer (alpha = {}, N = {n_arms})",
                instance.alpha
            )));
        }
        match &initial {
            InitialStates::AllState(k) if *k >= instance.n_states => {
                return Err(Error::Input(format!("initial state {k} out of range")));
            }
            InitialStates::Explicit(v) => {
                if v.len() != n_arms {
                    return Err(Error::Input(format!(
                        "explicit initial states have length {}, expected {n_arms}",
                        v.len()
                    )));
                }
                if v.iter().any(|&s| s >= instance.n_states) {
                    return Err(Error::Input("explicit initial state out of range".into()));
                }
            }
            _ => {}
        }
        Ok(ArmConfig {
            n_arms,
            budget: budget as usize,
            initial,
        })
    }

    pub fn initial_states<R: Rng>(&self, n_states: usize, rng: &mut R) -> Vec<usize> {
        match &self.initial {
            InitialStates::UniformRandom => (0..self.n_arms)
                .map(|_| rng.random_range(0..n_states))
                .collect(),
            InitialStates::AllState(k) => vec![*k; self.n_arms],
            InitialStates::Explicit(v) => v.clone(),
        }
    }
}

/// Cumulative transition rows for sampling. Rows with a single successor
/// are resolved without consuming randomness.
#[derive(Debug, Clone)]
pub struct Kernel {
    cum: Vec<[Vec<f64>; 2]>,
    only: Vec<[Option<usize>; 2]>,
}

impl Kernel {
    pub fn new(inst: &RbInstance) -> Self {
        let n = inst.n_states;
        let mut cum = Vec::with_capacity(n);
        let mut only = Vec::with_capacity(n);
        for s in 0..n {
            let mk = |row: &[f64]| {
                let mut acc = 0.0;
                row.iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect::<Vec<f64>>()
            };
            let single = |row: &[f64]| {
                let support: Vec<usize> = (0..n).filter(|&t| row[t] > 0.0).collect();
                (support.len() == 1).then(|| support[0])
            };
            cum.push([mk(&inst.p0[s]), mk(&inst.p1[s])]);
            only.push([single(&inst.p0[s]), single(&inst.p1[s])]);
        }
        Kernel { cum, only }
    }

    #[inline]
    pub fn sample<R: Rng>(&self, s: usize, a: u8, rng: &mut R) -> usize {
        if let Some(t) = self.only[s][a as usize] {
            return t;
        }
        let cum = &self.cum[s][a as usize];
        let u: f64 = rng.random::<f64>() * cum[cum.len() - 1];
        let t = cum.partition_point(|&c| c <= u);
        t.min(cum.len() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::builtin;

    #[test]
    fn periodic_instance_is_valid() {
        assert!(builtin("periodic-two-state").unwrap().validate().is_valid());
    }

    #[test]
    fn short_row_is_reported() {
        let mut inst = builtin("two-state-cycle").unwrap();
        inst.p0[0] = vec![0.5, 0.4];
        let rep = inst.validate();
        assert_eq!(rep.violations.len(), 1);
        assert!(rep.violations[0].contains("not stochastic"));
    }

    #[test]
    fn alpha_one_is_reported() {
        let mut inst = builtin("two-state-cycle").unwrap();
        inst.alpha = 1.0;
        assert!(inst.validate().violations[0].contains("alpha out of range"));
    }

    #[test]
    fn validate_is_pure() {
        let mut inst = builtin("three-state-nongap").unwrap();
        inst.p1[2][0] = 0.9;
        let before = inst.clone();
        let a = inst.validate();
        let b = inst.validate();
        assert_eq!(a, b);
        assert_eq!(inst, before);
    }

    #[test]
    fn eight_state_rewards() {
        let inst = builtin("eight-state-nongap").unwrap();
        assert_eq!(inst.reward(7, 0).unwrap(), 0.1);
        assert_eq!(inst.reward(0, 1).unwrap(), 1.0 / 300.0);
        assert_eq!(inst.reward(3, 0).unwrap(), 0.0);
        assert!(inst.reward(8, 0).is_err());
    }

    #[test]
    fn renormalize_fixes_rounding() {
        let mut inst = builtin("three-state-nongap").unwrap();
        inst.p0[0][0] += 1e-6;
        assert!(!inst.validate().is_valid());
        inst.renormalize();
        assert!(inst.validate().is_valid());
    }

    #[test]
    fn budget_must_be_integral() {
        let inst = builtin("three-state-nongap").unwrap();
        assert!(ArmConfig::new(&inst, 3, InitialStates::UniformRandom).is_err());
        let cfg = ArmConfig::new(&inst, 10, InitialStates::UniformRandom).unwrap();
        assert_eq!(cfg.budget, 4);
    }

    #[test]
    fn json_round_trip() {
        let inst = builtin("eight-state-nongap").unwrap();
        let back = RbInstance::from_json(&inst.to_json()).unwrap();
        assert_eq!(inst, back);
        assert!(RbInstance::from_json("{\"name\": 1}").is_err());
    }

    #[test]
    fn initial_state_rules_parse() {
        assert_eq!(
            "uniform-random".parse::<InitialStates>().unwrap(),
            InitialStates::UniformRandom
        );
        assert_eq!(
            "all-state-3".parse::<InitialStates>().unwrap(),
            InitialStates::AllState(3)
        );
        assert_eq!(
            "0,1,1".parse::<InitialStates>().unwrap(),
            InitialStates::Explicit(vec![0, 1, 1])
        );
        assert!("bogus".parse::<InitialStates>().is_err());
    }

    #[test]
    fn kernel_frequencies_within_four_sigma() {
        let inst = crate::instances::builtin("three-state-nongap").unwrap();
        let k = Kernel::new(&inst);
        let mut rng = crate::rng::stream(11, 0);
        let draws = 100_000;
        for s in 0..3 {
            for a in 0..2u8 {
                let mut hits = [0usize; 3];
                for _ in 0..draws {
                    hits[k.sample(s, a, &mut rng)] += 1;
                }
                for t in 0..3 {
                    let p = inst.p(s, a, t);
                    let sd = (p * (1.0 - p) / draws as f64).sqrt();
                    let f = hits[t] as f64 / draws as f64;
                    assert!(
                        (f - p).abs() <= 4.0 * sd + 1e-12,
                        "({s},{a},{t}): {f} vs {p}"
                    );
                }
            }
        }
    }
}
