//! Reward-free simulation of one edge domain's four resource pools.
//!
//! States and actions are percentages of each pool. An episode starts from a
//! random partial allocation, every step adds a bounded assignment to each pool,
//! and the episode ends either when a pool reaches the cap or when the
//! allocation's shape matches one of the sixteen binary patterns.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Canonical resource order used by every vector, table, and file.
pub const RESOURCE_NAMES: [&str; 4] = ["power", "bandwidth", "memory", "compute"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("cannot step a terminal state (terminated by {0} after {1} steps)")]
    SteppedTerminal(TerminalKind, usize),
    #[error("non-finite action component {index}: {value}")]
    NonFiniteAction { index: usize, value: f64 },
}

/// Percentages of the power, bandwidth, memory, and compute pools.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceVector<T>(pub [T; 4]);

impl<T: Scalar> ResourceVector<T> {
    pub fn new(power: T, bandwidth: T, memory: T, compute: T) -> Self {
        Self([power, bandwidth, memory, compute])
    }

    pub fn splat(value: T) -> Self {
        Self([value; 4])
    }

    pub fn zeros() -> Self {
        Self::splat(T::zero())
    }

    pub fn power(&self) -> T {
        self.0[0]
    }

    pub fn bandwidth(&self) -> T {
        self.0[1]
    }

    pub fn memory(&self) -> T {
        self.0[2]
    }

    pub fn compute(&self) -> T {
        self.0[3]
    }

    pub fn as_array(&self) -> &[T; 4] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = T> + '_ {
        self.0.iter().copied()
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self(self.0.map(&mut f))
    }

    pub fn zip_with(&self, other: &Self, mut f: impl FnMut(T, T) -> T) -> Self {
        Self(std::array::from_fn(|i| f(self.0[i], other.0[i])))
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    /// Component-wise `self <= other`.
    pub fn le(&self, other: &Self) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(a, b)| a <= b)
    }

    pub fn min_component(&self) -> T {
        self.iter().fold(T::infinity(), T::min)
    }

    pub fn max_component(&self) -> T {
        self.iter().fold(T::neg_infinity(), T::max)
    }

    pub fn l1_distance(&self, other: &Self) -> T {
        self.iter().zip(other.iter()).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn is_finite_nonnegative(&self) -> bool {
        self.iter().all(|v| v.is_finite() && v >= T::zero())
    }
}

impl<T> Index<usize> for ResourceVector<T> {
    type Output = T;

    fn index(&self, index: usize) -> &T {
        &self.0[index]
    }
}

impl<T> IndexMut<usize> for ResourceVector<T> {
    fn index_mut(&mut self, index: usize) -> &mut T {
        &mut self.0[index]
    }
}

impl<T> From<[T; 4]> for ResourceVector<T> {
    fn from(values: [T; 4]) -> Self {
        Self(values)
    }
}

/// Bounds and tolerances of the simulated domain. All bounds are percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig<T> {
    pub init_low: T,
    pub init_high: T,
    pub action_low: T,
    pub action_high: T,
    pub cap: T,
    pub rel_tol: T,
    pub abs_tol: T,
    pub degenerate_eps: T,
}

impl<T: Scalar> Default for EnvConfig<T> {
    fn default() -> Self {
        Self {
            init_low: T::of(2.0),
            init_high: T::of(10.0),
            action_low: T::of(1.0),
            action_high: T::of(5.0),
            cap: T::of(20.0),
            rel_tol: T::of(1e-1),
            abs_tol: T::of(1e-2),
            degenerate_eps: T::of(1e-9),
        }
    }
}

impl<T: Scalar> EnvConfig<T> {
    pub fn validate(&self) -> Result<(), EnvError> {
        let all = [
            self.init_low,
            self.init_high,
            self.action_low,
            self.action_high,
            self.cap,
            self.rel_tol,
            self.abs_tol,
            self.degenerate_eps,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::InvalidConfig("all values must be finite".into()));
        }
        let zero = T::zero();
        if !(zero < self.init_low && self.init_low <= self.init_high && self.init_high < self.cap)
        {
            return Err(EnvError::InvalidConfig(format!(
                "need 0 < init_low <= init_high < cap, got {} / {} / {}",
                self.init_low, self.init_high, self.cap
            )));
        }
        if !(zero < self.action_low && self.action_low <= self.action_high) {
            return Err(EnvError::InvalidConfig(format!(
                "need 0 < action_low <= action_high, got {} / {}",
                self.action_low, self.action_high
            )));
        }
        if !(self.rel_tol > zero && self.abs_tol > zero && self.degenerate_eps > zero) {
            return Err(EnvError::InvalidConfig(
                "rel_tol, abs_tol and degenerate_eps must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Upper bound on episode length: the cap rule alone forces termination
    /// after this many steps.
    pub fn max_episode_steps(&self) -> usize {
        ((self.cap - self.init_low) / self.action_low)
            .ceil()
            .to_usize()
            .unwrap_or(usize::MAX)
    }

    /// Centre of the action interval.
    pub fn action_midpoint(&self) -> T {
        (self.action_low + self.action_high) / T::of(2.0)
    }

    pub fn action_half_range(&self) -> T {
        (self.action_high - self.action_low) / T::of(2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalKind {
    #[default]
    None,
    /// Some pool reached the cap. Wins over `Pattern` on the same step.
    Cap,
    /// The normalized allocation matched a binary pattern.
    Pattern,
}

impl TerminalKind {
    pub fn is_terminal(self) -> bool {
        self != TerminalKind::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TerminalKind::None => "none",
            TerminalKind::Cap => "cap",
            TerminalKind::Pattern => "pattern",
        }
    }
}

impl fmt::Display for TerminalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TerminalKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(TerminalKind::None),
            "cap" => Ok(TerminalKind::Cap),
            "pattern" => Ok(TerminalKind::Pattern),
            other => Err(format!("unknown terminal kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainState<T> {
    /// Cumulative assigned percentage per pool.
    pub allocation: ResourceVector<T>,
    pub step_count: usize,
    /// How the state was reached; `None` while the episode is running.
    pub terminal: TerminalKind,
}

impl<T: Scalar> DomainState<T> {
    /// A non-terminal state at step zero, e.g. a fixed evaluation start.
    pub fn from_allocation(allocation: ResourceVector<T>) -> Self {
        Self {
            allocation,
            step_count: 0,
            terminal: TerminalKind::None,
        }
    }
}

/// All sixteen binary 4-vectors in lexicographic order.
pub fn binary_patterns<T: Scalar>() -> [ResourceVector<T>; 16] {
    std::array::from_fn(|code| {
        ResourceVector(std::array::from_fn(|bit| {
            if code & (0b1000 >> bit) != 0 {
                T::one()
            } else {
                T::zero()
            }
        }))
    })
}

/// Min-max normalization across the four components, or `None` when the
/// vector is degenerate (spread below `eps`).
pub fn min_max_normalize<T: Scalar>(v: &ResourceVector<T>, eps: T) -> Option<ResourceVector<T>> {
    let lo = v.min_component();
    let hi = v.max_component();
    let spread = hi - lo;
    if spread < eps {
        return None;
    }
    Some(v.map(|x| (x - lo) / spread))
}

/// A validated environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Environment<T> {
    config: EnvConfig<T>,
}

impl<T: Scalar> Environment<T> {
    pub fn new(config: EnvConfig<T>) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EnvConfig<T> {
        &self.config
    }

    /// Draws each pool's starting allocation uniformly from `[init_low, init_high]`.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> DomainState<T> {
        let lo = self.config.init_low.as_f64();
        let hi = self.config.init_high.as_f64();
        let allocation = ResourceVector(std::array::from_fn(|_| T::of(rng.random_range(lo..=hi))));
        DomainState::from_allocation(allocation)
    }

    /// Clamps each component into the action interval.
    pub fn clamp_action(&self, action: &ResourceVector<T>) -> ResourceVector<T> {
        action.map(|a| a.max(self.config.action_low).min(self.config.action_high))
    }

    pub fn step(
        &self,
        state: &DomainState<T>,
        action: &ResourceVector<T>,
    ) -> Result<(DomainState<T>, TerminalKind), EnvError> {
        if state.terminal.is_terminal() {
            return Err(EnvError::SteppedTerminal(state.terminal, state.step_count));
        }
        if let Some(index) = action.iter().position(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction {
                index,
                value: action[index].as_f64(),
            });
        }
        let cap = self.config.cap;
        let raw = state.allocation.add(&self.clamp_action(action));
        let hit_cap = raw.iter().any(|v| v >= cap);
        let allocation = raw.map(|v| v.min(cap));
        let kind = if hit_cap {
            TerminalKind::Cap
        } else if self.is_pattern_terminal(&allocation) {
            TerminalKind::Pattern
        } else {
            TerminalKind::None
        };
        let next = DomainState {
            allocation,
            step_count: state.step_count + 1,
            terminal: kind,
        };
        Ok((next, kind))
    }

    /// True when the min-max normalized allocation is element-wise close to a
    /// binary pattern. An all-equal allocation counts as the all-ones pattern.
    pub fn is_pattern_terminal(&self, allocation: &ResourceVector<T>) -> bool {
        let Some(normalized) = min_max_normalize(allocation, self.config.degenerate_eps) else {
            return true;
        };
        // A close pattern exists iff each component is close to 0 or to 1
        // independently, so the 16-way search collapses to a per-component test.
        let abs_tol = self.config.abs_tol;
        let near_one = abs_tol + self.config.rel_tol;
        normalized
            .0
            .iter()
            .all(|&n| n.abs() <= abs_tol || (n - T::one()).abs() <= near_one)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env() -> Environment<f64> {
        Environment::new(EnvConfig::default()).unwrap()
    }

    fn state(v: [f64; 4]) -> DomainState<f64> {
        DomainState::from_allocation(ResourceVector(v))
    }

    /// Direct enumeration of every pattern with the closeness formula.
    fn brute_force(v: &ResourceVector<f64>, cfg: &EnvConfig<f64>) -> bool {
        let lo = v.min_component();
        let hi = v.max_component();
        if hi - lo < cfg.degenerate_eps {
            return true;
        }
        binary_patterns::<f64>().iter().any(|b| {
            (0..4).all(|i| {
                let n = (v[i] - lo) / (hi - lo);
                (n - b[i]).abs() <= cfg.abs_tol + cfg.rel_tol * b[i].abs()
            })
        })
    }

    #[test]
    fn reset_is_within_init_bounds() {
        let env = env();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let s = env.reset(&mut rng);
            assert!(s.allocation.iter().all(|v| (2.0..=10.0).contains(&v)));
            assert_eq!(s.step_count, 0);
            assert_eq!(s.terminal, TerminalKind::None);
        }
    }

    #[test]
    fn reset_with_degenerate_interval() {
        let cfg = EnvConfig {
            init_low: 5.0,
            init_high: 5.0,
            ..EnvConfig::default()
        };
        let env = Environment::new(cfg).unwrap();
        let s = env.reset(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(s.allocation, ResourceVector([5.0; 4]));
    }

    #[test]
    fn reset_depends_on_seed_only() {
        let env = env();
        let a = env.reset(&mut ChaCha8Rng::seed_from_u64(1));
        let b = env.reset(&mut ChaCha8Rng::seed_from_u64(2));
        let a2 = env.reset(&mut ChaCha8Rng::seed_from_u64(1));
        assert_ne!(a.allocation, b.allocation);
        assert_eq!(a.allocation, a2.allocation);
    }

    #[test]
    fn step_hits_cap() {
        let (next, kind) = env()
            .step(&state([19.5, 5.0, 5.0, 5.0]), &ResourceVector([1.0; 4]))
            .unwrap();
        assert_eq!(next.allocation, ResourceVector([20.0, 6.0, 6.0, 6.0]));
        assert_eq!(kind, TerminalKind::Cap);
        assert_eq!(next.step_count, 1);
    }

    #[test]
    fn step_all_equal_matches_all_ones() {
        let s = ResourceVector([3.0; 4]);
        assert!(brute_force(&s, &EnvConfig::default()));
        let (next, kind) = env()
            .step(&state([2.0; 4]), &ResourceVector([1.0; 4]))
            .unwrap();
        assert_eq!(next.allocation, s);
        assert_eq!(kind, TerminalKind::Pattern);
    }

    #[test]
    fn step_without_termination() {
        let target = ResourceVector([6.0, 7.0, 8.0, 9.0]);
        assert!(!brute_force(&target, &EnvConfig::default()));
        let (next, kind) = env()
            .step(&state([5.0, 6.0, 7.0, 8.0]), &ResourceVector([1.0; 4]))
            .unwrap();
        assert_eq!(next.allocation, target);
        assert_eq!(kind, TerminalKind::None);
    }

    #[test]
    fn cap_takes_precedence_over_pattern() {
        // [20, 20, 20, 20] is also all-equal, i.e. a pattern state.
        let (_, kind) = env()
            .step(&state([18.0; 4]), &ResourceVector([3.0; 4]))
            .unwrap();
        assert_eq!(kind, TerminalKind::Cap);
    }

    #[test]
    fn out_of_range_actions_are_clamped() {
        let (next, _) = env()
            .step(&state([5.0, 6.0, 7.0, 8.0]), &ResourceVector([0.0, -3.0, 9.0, 2.0]))
            .unwrap();
        assert_eq!(next.allocation, ResourceVector([6.0, 7.0, 12.0, 10.0]));
    }

    #[test]
    fn stepping_terminal_state_is_an_error() {
        let env = env();
        let (next, _) = env
            .step(&state([19.5, 5.0, 5.0, 5.0]), &ResourceVector([1.0; 4]))
            .unwrap();
        assert!(matches!(
            env.step(&next, &ResourceVector([1.0; 4])),
            Err(EnvError::SteppedTerminal(TerminalKind::Cap, 1))
        ));
    }

    #[test]
    fn non_finite_action_is_an_error() {
        let err = env()
            .step(&state([5.0; 4]), &ResourceVector([1.0, f64::NAN, 1.0, 1.0]))
            .unwrap_err();
        assert!(matches!(err, EnvError::NonFiniteAction { index: 1, .. }));
    }

    #[test]
    fn pattern_examples() {
        let env = env();
        let cfg = EnvConfig::default();
        for (v, expected) in [
            ([2.0, 10.0, 10.0, 10.0], true),
            ([4.0, 4.0, 4.0, 12.0], true),
            ([5.0, 6.0, 7.0, 8.0], false),
        ] {
            let v = ResourceVector(v);
            assert_eq!(brute_force(&v, &cfg), expected);
            assert_eq!(env.is_pattern_terminal(&v), expected, "{v:?}");
        }
    }

    #[test]
    fn binary_patterns_are_lexicographic() {
        let p = binary_patterns::<f64>();
        assert_eq!(p.len(), 16);
        assert_eq!(p[0], ResourceVector([0.0; 4]));
        assert_eq!(p[1], ResourceVector([0.0, 0.0, 0.0, 1.0]));
        assert_eq!(p[6], ResourceVector([0.0, 1.0, 1.0, 0.0]));
        assert_eq!(p[15], ResourceVector([1.0; 4]));
        for w in p.windows(2) {
            assert!(w[0].0 < w[1].0);
        }
    }

    #[test]
    fn max_episode_steps_under_defaults() {
        assert_eq!(EnvConfig::<f64>::default().max_episode_steps(), 18);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            EnvConfig { init_low: 0.0, ..Default::default() },
            EnvConfig { init_high: 1.0, ..Default::default() },
            EnvConfig { init_high: 20.0, ..Default::default() },
            EnvConfig { action_low: 6.0, ..Default::default() },
            EnvConfig { rel_tol: 0.0, ..Default::default() },
            EnvConfig { cap: f64::NAN, ..Default::default() },
        ];
        for cfg in bad {
            assert!(Environment::<f64>::new(cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn works_in_single_precision() {
        let env = Environment::<f32>::new(EnvConfig::default()).unwrap();
        let (next, kind) = env
            .step(&DomainState::from_allocation(ResourceVector([19.5, 5.0, 5.0, 5.0])), &ResourceVector([1.0; 4]))
            .unwrap();
        assert_eq!(next.allocation, ResourceVector([20.0f32, 6.0, 6.0, 6.0]));
        assert_eq!(kind, TerminalKind::Cap);
        assert!(env.is_pattern_terminal(&ResourceVector([2.0, 10.0, 10.0, 10.0])));
    }

    #[test]
    fn terminal_kind_round_trips_through_text() {
        for k in [TerminalKind::None, TerminalKind::Cap, TerminalKind::Pattern] {
            assert_eq!(k.as_str().parse::<TerminalKind>().unwrap(), k);
        }
    }
}
