//! Multi-armed bandit policies over incrementally maintained reward statistics,
//! and the two ways of composing them over (destroy heuristic, neighborhood
//! size) pairs: a bi-level scheme and a flat joint arm space.
//!
//! Every arm keeps the sum of rewards `w`, the selection count `T` and the sum
//! of squared rewards `q`; means and variances are derived from those, so an
//! update is constant time. Each bank pulls every arm once in index order before
//! its policy takes over.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::destroy::HeuristicKind;

/// Reward statistics of one arm.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ArmStats {
    /// Sum of rewards.
    pub w: f64,
    /// Selection count.
    pub t: u64,
    /// Sum of squared rewards.
    pub q: f64,
}

impl ArmStats {
    pub fn update(&mut self, reward: f64) {
        debug_assert!(reward >= 0.0, "negative reward {reward}");
        self.w += reward;
        self.t += 1;
        self.q += reward * reward;
    }

    /// Average reward, 0 for an unvisited arm.
    pub fn mean(&self) -> f64 {
        if self.t == 0 {
            0.0
        } else {
            self.w / self.t as f64
        }
    }

    /// Population variance `q/T - mean^2`, clamped at 0 against rounding.
    pub fn variance(&self) -> f64 {
        if self.t == 0 {
            return 0.0;
        }
        let mean = self.mean();
        (self.q / self.t as f64 - mean * mean).max(0.0)
    }
}

/// Normal-Gamma prior over an arm's mean reward and precision, with the Gamma
/// in (shape, rate) form so that `E[tau] = alpha / beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalGamma {
    pub mu: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NormalGamma {
    pub const fn new(mu: f64, lambda: f64, alpha: f64, beta: f64) -> Self {
        Self { mu, lambda, alpha, beta }
    }

    /// Checks `lambda > 0`, `alpha >= 1`, `beta >= 0`.
    pub fn is_valid(&self) -> bool {
        self.mu.is_finite() && self.lambda > 0.0 && self.alpha >= 1.0 && self.beta >= 0.0 && self.beta.is_finite()
    }
}

impl Default for NormalGamma {
    fn default() -> Self {
        Self::new(0.0, 0.01, 1.0, 100.0)
    }
}

pub const DEFAULT_UCB_EXPLORATION: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    Roulette,
    Ucb1 { exploration: f64 },
    Thompson(NormalGamma),
    UniformRandom,
}

impl Policy {
    pub fn ucb1() -> Self {
        Policy::Ucb1 { exploration: DEFAULT_UCB_EXPLORATION }
    }

    pub fn thompson() -> Self {
        Policy::Thompson(NormalGamma::default())
    }

    pub fn is_valid(&self) -> bool {
        match self {
            Policy::Ucb1 { exploration } => *exploration > 0.0 && exploration.is_finite(),
            Policy::Thompson(prior) => prior.is_valid(),
            Policy::Roulette | Policy::UniformRandom => true,
        }
    }
}

/// Uniform choice among the indices whose score equals the maximum.
fn argmax_random_tie<R: Rng + ?Sized>(scores: &[f64], rng: &mut R) -> usize {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties = scores.iter().filter(|&&s| s == best).count();
    if ties <= 1 {
        return scores.iter().position(|&s| s == best).unwrap_or(0);
    }
    let pick = rng.random_range(0..ties);
    scores.iter().enumerate().filter(|&(_, &s)| s == best).nth(pick).map_or(0, |(i, _)| i)
}

/// Arm `k` with probability `w_k / sum(w)`; uniform when all weights are zero.
pub fn select_roulette<R: Rng + ?Sized>(arms: &[ArmStats], rng: &mut R) -> usize {
    let total: f64 = arms.iter().map(|a| a.w).sum();
    if total <= 0.0 {
        return rng.random_range(0..arms.len());
    }
    let mut ticket = rng.random::<f64>() * total;
    for (k, arm) in arms.iter().enumerate() {
        if ticket < arm.w {
            return k;
        }
        ticket -= arm.w;
    }
    // rounding left the ticket at the very end of the wheel
    arms.iter().rposition(|a| a.w > 0.0).unwrap_or(arms.len() - 1)
}

/// UCB1 score `mean + exploration * sqrt(ln(T) / T_k)`.
pub fn ucb1_score(arm: &ArmStats, total: u64, exploration: f64) -> f64 {
    if arm.t == 0 {
        return f64::INFINITY;
    }
    arm.mean() + exploration * ((total as f64).ln() / arm.t as f64).sqrt()
}

pub fn select_ucb1<R: Rng + ?Sized>(arms: &[ArmStats], exploration: f64, rng: &mut R) -> usize {
    let total = arms.iter().map(|a| a.t).sum();
    let scores: Vec<f64> = arms.iter().map(|a| ucb1_score(a, total, exploration)).collect();
    argmax_random_tie(&scores, rng)
}

/// Conjugate Normal-Gamma update of `prior` with the arm's observations.
pub fn posterior(arm: &ArmStats, prior: &NormalGamma) -> NormalGamma {
    if arm.t == 0 {
        return *prior;
    }
    let n = arm.t as f64;
    let mean = arm.mean();
    let var = arm.variance();
    let lambda = prior.lambda + n;
    NormalGamma {
        mu: (prior.lambda * prior.mu + n * mean) / lambda,
        lambda,
        alpha: prior.alpha + n / 2.0,
        beta: prior.beta + 0.5 * (n * var + prior.lambda * n * (mean - prior.mu).powi(2) / lambda),
    }
}

/// Draws a plausible mean reward from the arm's posterior: `tau ~ Gamma(alpha,
/// rate beta)`, then `mu ~ Normal(mu_1, 1 / (lambda_1 tau))`.
pub fn sample_mean<R: Rng + ?Sized>(post: &NormalGamma, rng: &mut R) -> f64 {
    if post.beta <= 0.0 {
        // all mass on infinite precision
        return post.mu;
    }
    let tau: f64 = Gamma::new(post.alpha, 1.0 / post.beta).expect("valid gamma parameters").sample(rng);
    let tau = tau.max(f64::MIN_POSITIVE);
    let sd = (1.0 / (post.lambda * tau)).sqrt();
    if !sd.is_finite() {
        return post.mu;
    }
    Normal::new(post.mu, sd).expect("finite normal parameters").sample(rng)
}

pub fn select_thompson<R: Rng + ?Sized>(arms: &[ArmStats], prior: &NormalGamma, rng: &mut R) -> usize {
    if arms.len() == 1 {
        return 0;
    }
    let samples: Vec<f64> = arms.iter().map(|a| sample_mean(&posterior(a, prior), rng)).collect();
    argmax_random_tie(&samples, rng)
}

/// A set of arms driven by one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmBank {
    policy: Policy,
    arms: Vec<ArmStats>,
}

impl ArmBank {
    pub fn new(policy: Policy, arms: usize) -> Self {
        assert!(arms > 0, "a bandit needs at least one arm");
        Self { policy, arms: vec![ArmStats::default(); arms] }
    }

    pub fn arms(&self) -> &[ArmStats] {
        &self.arms
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn total_selections(&self) -> u64 {
        self.arms.iter().map(|a| a.t).sum()
    }

    /// First arm never pulled, if any.
    pub fn warmup_arm(&self) -> Option<usize> {
        self.arms.iter().position(|a| a.t == 0)
    }

    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if let Some(k) = self.warmup_arm() {
            return k;
        }
        match self.policy {
            Policy::Roulette => select_roulette(&self.arms, rng),
            Policy::Ucb1 { exploration } => select_ucb1(&self.arms, exploration, rng),
            Policy::Thompson(prior) => select_thompson(&self.arms, &prior, rng),
            Policy::UniformRandom => rng.random_range(0..self.arms.len()),
        }
    }

    pub fn update(&mut self, arm: usize, reward: f64) {
        self.arms[arm].update(reward);
    }
}

/// Neighborhood size `2^exponent` for exponent in `1..=E`.
pub fn neighborhood_size(exponent: u32) -> usize {
    1usize << exponent
}

/// A (heuristic, size exponent) pair as chosen by a bandit scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Choice {
    pub heuristic: HeuristicKind,
    /// In `1..=E`.
    pub exponent: u32,
}

impl Choice {
    pub fn size(&self) -> usize {
        neighborhood_size(self.exponent)
    }
}

/// One bandit over heuristics, and per heuristic one bandit over size exponents.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLevelBandit {
    heuristics: ArmBank,
    sizes: Vec<ArmBank>,
}

impl BiLevelBandit {
    pub fn new(policy: Policy, exponents: u32) -> Self {
        assert!(exponents >= 1);
        let h = HeuristicKind::ALL.len();
        Self {
            heuristics: ArmBank::new(policy, h),
            sizes: (0..h).map(|_| ArmBank::new(policy, exponents as usize)).collect(),
        }
    }

    pub fn exponents(&self) -> u32 {
        self.sizes[0].arms().len() as u32
    }

    pub fn heuristic_bank(&self) -> &ArmBank {
        &self.heuristics
    }

    pub fn size_bank(&self, heuristic: HeuristicKind) -> &ArmBank {
        &self.sizes[heuristic.index()]
    }

    /// Until every pair has been tried once, pairs are enumerated heuristic-major;
    /// afterwards the heuristic bandit picks `H` and `H`'s size bandit picks `e`.
    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> Choice {
        for (h, bank) in self.sizes.iter().enumerate() {
            if let Some(e) = bank.warmup_arm() {
                return Choice { heuristic: HeuristicKind::ALL[h], exponent: e as u32 + 1 };
            }
        }
        let h = self.heuristics.select(rng);
        let e = self.sizes[h].select(rng);
        Choice { heuristic: HeuristicKind::ALL[h], exponent: e as u32 + 1 }
    }

    pub fn update(&mut self, choice: Choice, reward: f64) {
        let h = choice.heuristic.index();
        self.heuristics.update(h, reward);
        self.sizes[h].update(choice.exponent as usize - 1, reward);
    }
}

/// A single bandit over all `|H| * E` pairs, heuristic-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JointBandit {
    bank: ArmBank,
    exponents: u32,
}

impl JointBandit {
    pub fn new(policy: Policy, exponents: u32) -> Self {
        assert!(exponents >= 1);
        Self { bank: ArmBank::new(policy, HeuristicKind::ALL.len() * exponents as usize), exponents }
    }

    pub fn bank(&self) -> &ArmBank {
        &self.bank
    }

    pub fn arm_of(&self, choice: Choice) -> usize {
        choice.heuristic.index() * self.exponents as usize + (choice.exponent as usize - 1)
    }

    pub fn choice_of(&self, arm: usize) -> Choice {
        let e = self.exponents as usize;
        Choice { heuristic: HeuristicKind::ALL[arm / e], exponent: (arm % e) as u32 + 1 }
    }

    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> Choice {
        self.choice_of(self.bank.select(rng))
    }

    pub fn update(&mut self, choice: Choice, reward: f64) {
        let arm = self.arm_of(choice);
        self.bank.update(arm, reward);
    }
}
