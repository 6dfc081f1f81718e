//! Exact analysis of policy-gradient dynamics in the 2×2 stag-hunt game.
//!
//! Each player holds a single parameter θ, the probability of playing Stag.
//! Utilities and their own-parameter gradients are closed-form bilinear
//! expressions, so the learning dynamics can be integrated exactly and the
//! two convergence bounds (plain self-play vs. reward randomization) can be
//! checked by Monte Carlo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row/column payoffs of the symmetric stag-hunt game.
///
/// | row \ col | Stag  | Hare  |
/// |-----------|-------|-------|
/// | Stag      | a, a  | c, b  |
/// | Hare      | b, c  | d, d  |
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffMatrix {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl PayoffMatrix {
    /// A stag hunt proper: `a > b ≥ d > c`.
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        if !(a > b && b >= d && d > c) {
            return Err(Error::InvalidPayoff(format!(
                "stag hunt requires a > b >= d > c, got a={a} b={b} c={c} d={d}"
            )));
        }
        Ok(Self { a, b, c, d })
    }

    /// Any 2×2 symmetric game; used for randomly perturbed payoffs.
    pub fn unordered(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub fn is_stag_hunt(&self) -> bool {
        self.a > self.b && self.b >= self.d && self.d > self.c
    }

    /// `a + d - b - c`, the coupling coefficient of the gradient field.
    pub fn coupling(&self) -> f64 {
        self.a + self.d - self.b - self.c
    }

    /// ε in `a - b = ε (d - c)`.
    pub fn epsilon(&self) -> Result<f64> {
        let denom = self.d - self.c;
        if denom <= 0.0 {
            return Err(Error::Domain(format!("d - c must be positive, got {denom}")));
        }
        Ok((self.a - self.b) / denom)
    }

    /// Payoffs as the reward-weight vector `[a, b, c, d]`.
    pub fn as_weights(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }
}

/// Probabilities of playing Stag for both players.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedProfile {
    pub theta1: f64,
    pub theta2: f64,
}

impl MixedProfile {
    pub fn new(theta1: f64, theta2: f64) -> Result<Self> {
        let ok = |t: f64| (0.0..=1.0).contains(&t);
        if !ok(theta1) || !ok(theta2) {
            return Err(Error::Domain(format!("profile ({theta1}, {theta2}) outside [0,1]^2")));
        }
        Ok(Self { theta1, theta2 })
    }

    fn clamped(theta1: f64, theta2: f64) -> Self {
        Self {
            theta1: theta1.clamp(0.0, 1.0),
            theta2: theta2.clamp(0.0, 1.0),
        }
    }

    fn own_and_other(&self, player: Player) -> (f64, f64) {
        match player {
            Player::First => (self.theta1, self.theta2),
            Player::Second => (self.theta2, self.theta1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Player {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    pub convergence_tol: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_steps: 100_000,
            convergence_tol: 1e-3,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.max_steps < 1 {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::Config("convergence_tol must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EquilibriumLabel {
    StagNE,
    HareNE,
    NonConverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsOutcome {
    pub profile: MixedProfile,
    pub label: EquilibriumLabel,
    pub steps: usize,
}

/// Whether an empirical rate is checked against an upper or a lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem: u8,
    pub kind: BoundKind,
    pub epsilon: Option<f64>,
    pub population_size: Option<usize>,
    pub theoretical_bound: f64,
    pub empirical_rate: f64,
    pub trials: usize,
    pub ci_halfwidth: f64,
    pub non_converged: usize,
}

impl BoundReport {
    fn new(theorem: u8, kind: BoundKind, theoretical_bound: f64, successes: usize, trials: usize) -> Self {
        let p = successes as f64 / trials as f64;
        Self {
            theorem,
            kind,
            epsilon: None,
            population_size: None,
            theoretical_bound,
            empirical_rate: p,
            trials,
            ci_halfwidth: ci_halfwidth(p, trials),
            non_converged: 0,
        }
    }

    pub fn passes(&self) -> bool {
        match self.kind {
            BoundKind::Upper => self.empirical_rate <= self.theoretical_bound + self.ci_halfwidth,
            BoundKind::Lower => self.empirical_rate >= self.theoretical_bound - self.ci_halfwidth,
        }
    }
}

/// 95% normal-approximation half-width, `1.96 sqrt(p(1-p)/n)`.
pub fn ci_halfwidth(p: f64, trials: usize) -> f64 {
    if trials == 0 {
        return f64::INFINITY;
    }
    1.96 * (p * (1.0 - p) / trials as f64).sqrt()
}

/// Expected payoff of `player` under independent mixed strategies.
pub fn utility(profile: &MixedProfile, payoff: &PayoffMatrix, player: Player) -> f64 {
    let (own, other) = profile.own_and_other(player);
    let PayoffMatrix { a, b, c, d } = *payoff;
    a * own * other + c * own * (1.0 - other) + b * (1.0 - own) * other + d * (1.0 - own) * (1.0 - other)
}

/// Partial derivative of `player`'s utility with respect to its own θ.
pub fn exact_gradient(profile: &MixedProfile, payoff: &PayoffMatrix, player: Player) -> f64 {
    let (_, other) = profile.own_and_other(player);
    payoff.coupling() * other + payoff.c - payoff.d
}

/// θ* = (d-c)/(a+d-b-c): an agent's gradient is positive iff the opponent's θ exceeds it.
pub fn critical_threshold(payoff: &PayoffMatrix) -> Result<f64> {
    let k = payoff.coupling();
    if k <= 0.0 {
        return Err(Error::DegenerateDenominator(k));
    }
    Ok((payoff.d - payoff.c) / k)
}

fn label_of(profile: &MixedProfile, tol: f64) -> Option<EquilibriumLabel> {
    if profile.theta1 >= 1.0 - tol && profile.theta2 >= 1.0 - tol {
        Some(EquilibriumLabel::StagNE)
    } else if profile.theta1 <= tol && profile.theta2 <= tol {
        Some(EquilibriumLabel::HareNE)
    } else {
        None
    }
}

/// Simultaneous projected gradient ascent with exact gradients.
///
/// Stops once both parameters sit in a convergence band, or once the
/// projected step leaves the profile unchanged (a fixed point of the map).
pub fn run_dynamics(init: MixedProfile, payoff: &PayoffMatrix, cfg: &DynamicsConfig) -> DynamicsOutcome {
    run_dynamics_with(init, payoff, cfg, |_| {})
}

/// [`run_dynamics`] with a callback observing every intermediate profile.
pub fn run_dynamics_with(
    init: MixedProfile,
    payoff: &PayoffMatrix,
    cfg: &DynamicsConfig,
    mut observe: impl FnMut(&MixedProfile),
) -> DynamicsOutcome {
    let mut profile = init;
    observe(&profile);
    for step in 0..cfg.max_steps {
        if let Some(label) = label_of(&profile, cfg.convergence_tol) {
            return DynamicsOutcome {
                profile,
                label,
                steps: step,
            };
        }
        let g1 = exact_gradient(&profile, payoff, Player::First);
        let g2 = exact_gradient(&profile, payoff, Player::Second);
        let next = MixedProfile::clamped(
            profile.theta1 + cfg.learning_rate * g1,
            profile.theta2 + cfg.learning_rate * g2,
        );
        observe(&next);
        if next == profile {
            let label = label_of(&profile, cfg.convergence_tol).unwrap_or(EquilibriumLabel::NonConverged);
            return DynamicsOutcome {
                profile,
                label,
                steps: step + 1,
            };
        }
        profile = next;
    }
    let label = label_of(&profile, cfg.convergence_tol).unwrap_or(EquilibriumLabel::NonConverged);
    DynamicsOutcome {
        profile,
        label,
        steps: cfg.max_steps,
    }
}

/// `(2ε+ε²)/(1+2ε+ε²)`, i.e. `1 - (1/(1+ε))²`.
pub fn theorem1_bound(epsilon: f64) -> Result<f64> {
    // ε = 1 is admitted so the boundary value can be inspected.
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0,1), got {epsilon}")));
    }
    let e = epsilon;
    Ok((2.0 * e + e * e) / (1.0 + 2.0 * e + e * e))
}

/// `1 - 0.6^N`.
pub fn theorem2_bound(population_size: usize) -> f64 {
    1.0 - 0.6f64.powi(population_size as i32)
}

/// Private deterministic stream for Monte Carlo trial `trial`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

fn uniform_profile(rng: &mut impl Rng) -> MixedProfile {
    MixedProfile {
        theta1: rng.gen::<f64>(),
        theta2: rng.gen::<f64>(),
    }
}

/// Monte Carlo frequency of reaching the Stag NE from uniform initializations.
pub fn verify_theorem1(payoff: &PayoffMatrix, trials: usize, cfg: &DynamicsConfig, seed: u64) -> Result<BoundReport> {
    if trials == 0 {
        return Err(Error::InsufficientTrials);
    }
    cfg.validate()?;
    critical_threshold(payoff)?;
    if !payoff.is_stag_hunt() {
        return Err(Error::InvalidPayoff("theorem 1 needs a stag hunt".into()));
    }
    let epsilon = payoff.epsilon()?;
    let bound = theorem1_bound(epsilon)?;
    let labels: Vec<EquilibriumLabel> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            run_dynamics(uniform_profile(&mut rng), payoff, cfg).label
        })
        .collect();
    // NonConverged counts as failure.
    let stag = labels.iter().filter(|l| **l == EquilibriumLabel::StagNE).count();
    let mut report = BoundReport::new(1, BoundKind::Upper, bound, stag, trials);
    report.epsilon = Some(epsilon);
    report.non_converged = labels.iter().filter(|l| **l == EquilibriumLabel::NonConverged).count();
    Ok(report)
}

/// Outcome of one reward-randomization round of the matrix game.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbedRun {
    pub payoff: PayoffMatrix,
    pub outcome: DynamicsOutcome,
}

impl PerturbedRun {
    /// The converged strategy, replayed in the original game, is mutual Stag.
    pub fn found_stag(&self, tol: f64) -> bool {
        label_of(&self.outcome.profile, tol) == Some(EquilibriumLabel::StagNE)
    }
}

/// Draw a payoff with entries `Unif[-1,1]` and a uniform init, then run dynamics.
pub fn perturbed_run(rng: &mut impl Rng, cfg: &DynamicsConfig) -> PerturbedRun {
    let mut draw = || rng.gen_range(-1.0..=1.0);
    let payoff = PayoffMatrix::unordered(draw(), draw(), draw(), draw());
    let init = uniform_profile(rng);
    PerturbedRun {
        payoff,
        outcome: run_dynamics(init, &payoff, cfg),
    }
}

/// Monte Carlo success rate of reward randomization with `population_size` rounds.
///
/// A trial succeeds when at least one of its perturbed runs converges to a
/// profile that plays mutual Stag in the original game.
pub fn verify_theorem2(population_size: usize, trials: usize, cfg: &DynamicsConfig, seed: u64) -> Result<BoundReport> {
    if population_size == 0 {
        return Err(Error::EmptyPopulationSize);
    }
    if trials == 0 {
        return Err(Error::InsufficientTrials);
    }
    cfg.validate()?;
    let results: Vec<(bool, usize)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let mut success = false;
            let mut stalled = 0;
            for _ in 0..population_size {
                let run = perturbed_run(&mut rng, cfg);
                success |= run.found_stag(cfg.convergence_tol);
                if run.outcome.label == EquilibriumLabel::NonConverged {
                    stalled += 1;
                }
            }
            (success, stalled)
        })
        .collect();
    let successes = results.iter().filter(|(s, _)| *s).count();
    let mut report = BoundReport::new(2, BoundKind::Lower, theorem2_bound(population_size), successes, trials);
    report.population_size = Some(population_size);
    report.non_converged = results.iter().map(|(_, n)| n).sum();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> PayoffMatrix {
        PayoffMatrix::new(4.0, 3.0, -10.0, 1.0).unwrap()
    }

    #[test]
    fn utility_at_pure_and_uniform_profiles() {
        let p = example();
        let u = |t1, t2| utility(&MixedProfile::new(t1, t2).unwrap(), &p, Player::First);
        assert_eq!(u(1.0, 1.0), 4.0);
        assert_eq!(u(0.0, 0.0), 1.0);
        // 0.25 * (4 + (-10) + 3 + 1)
        let enumerated = 0.25 * (4.0 - 10.0 + 3.0 + 1.0);
        assert!((u(0.5, 0.5) - enumerated).abs() < 1e-15);
        assert!((u(0.5, 0.5) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn gradient_endpoints() {
        let p = example();
        let g = |t2| exact_gradient(&MixedProfile::new(0.3, t2).unwrap(), &p, Player::First);
        assert_eq!(g(1.0), 1.0);
        assert_eq!(g(0.0), -11.0);
    }

    #[test]
    fn thresholds() {
        let t = critical_threshold(&PayoffMatrix::new(4.0, 3.0, -5.0, 1.0).unwrap()).unwrap();
        assert!((t - 6.0 / 7.0).abs() < 1e-12);
        let t = critical_threshold(&example()).unwrap();
        assert!((t - 11.0 / 12.0).abs() < 1e-12);
        // a-b = d-c
        let t = critical_threshold(&PayoffMatrix::new(5.0, 3.0, -1.0, 1.0).unwrap()).unwrap();
        assert!((t - 0.5).abs() < 1e-12);
        let bad = PayoffMatrix::unordered(0.0, 1.0, 1.0, 0.0);
        assert!(matches!(critical_threshold(&bad), Err(Error::DegenerateDenominator(_))));
    }

    #[test]
    fn ordering_enforced_unless_unordered() {
        assert!(PayoffMatrix::new(1.0, 2.0, 3.0, 4.0).is_err());
        assert!(!PayoffMatrix::unordered(1.0, 2.0, 3.0, 4.0).is_stag_hunt());
    }

    #[test]
    fn dynamics_from_corners() {
        let p = example();
        let cfg = DynamicsConfig::default();
        let hi = run_dynamics(MixedProfile::new(0.99, 0.99).unwrap(), &p, &cfg);
        assert_eq!(hi.label, EquilibriumLabel::StagNE);
        let lo = run_dynamics(MixedProfile::new(0.01, 0.01).unwrap(), &p, &cfg);
        assert_eq!(lo.label, EquilibriumLabel::HareNE);
    }

    #[test]
    fn bound_values() {
        assert!((theorem1_bound(1.0).unwrap() - 0.75).abs() < 1e-15);
        assert!((theorem1_bound(1.0 / 6.0).unwrap() - 13.0 / 49.0).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for k in 1..30 {
            let b = theorem1_bound(0.5f64.powi(k)).unwrap();
            assert!(b < prev);
            prev = b;
        }
        assert!(prev < 1e-8);
        assert!(theorem1_bound(0.0).is_err());
        assert!(theorem1_bound(1.5).is_err());
    }

    #[test]
    fn degenerate_monte_carlo_inputs() {
        let cfg = DynamicsConfig::default();
        let p = PayoffMatrix::new(4.0, 3.0, -5.0, 1.0).unwrap();
        assert!(matches!(
            verify_theorem1(&p, 0, &cfg, 0),
            Err(Error::InsufficientTrials)
        ));
        let e = verify_theorem2(0, 10, &cfg, 0).unwrap_err();
        assert_eq!(e.to_string(), "population size must be ≥ 1");
    }

    #[test]
    fn trial_streams_are_order_independent() {
        let cfg = DynamicsConfig::default();
        let p = PayoffMatrix::new(4.0, 3.0, -5.0, 1.0).unwrap();
        let a = verify_theorem1(&p, 200, &cfg, 9).unwrap();
        let b = verify_theorem1(&p, 200, &cfg, 9).unwrap();
        assert_eq!(a, b);
        let first: Vec<f64> = (0..5).map(|t| trial_rng(9, t).gen()).collect();
        let again: Vec<f64> = (0..5).rev().map(|t| trial_rng(9, t).gen()).collect();
        assert_eq!(first, again.into_iter().rev().collect::<Vec<_>>());
    }
}
