//! Dissipative sandpile engine driven by idiosyncratic shocks, network
//! propagation and Hall-like loading.
//!
//! One period of [`Engine::step`]:
//!
//! 1. realise the field `B_t = max(0, B̄ + σ_B·z)`;
//! 2. compute effective Hall stress with redundancy rescaled by `σ_D`;
//! 3. draw half-normal shocks `x_i = σ_x·|z_i|`;
//! 4. update `s_i ← (1−δ)s_i + α·x_i + β·Σ_j A_ji·s_j + γ·H_i`, floored at 0;
//! 5. relax: every node with `s_i ≥ θ_i` topples simultaneously, resets to
//!    the reset level and passes `fraction · excess · A_ij` to each
//!    neighbour `j`; rounds repeat until no node is over threshold.
//!
//! Random draws are consumed in that fixed order (one normal for the field,
//! then one per node for the shocks), so a seed fully determines a run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exposure::ExposureProfile;
use crate::operators::PropagationOperator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Thresholds {
    Uniform(f64),
    PerNode(Vec<f64>),
}

impl Thresholds {
    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        match self {
            Thresholds::Uniform(t) => *t,
            Thresholds::PerNode(v) => v[i],
        }
    }

    fn min(&self) -> f64 {
        match self {
            Thresholds::Uniform(t) => *t,
            Thresholds::PerNode(v) => v.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

/// How the avalanche size of a period is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountMode {
    /// Every toppling across all relaxation rounds.
    #[default]
    Events,
    /// Distinct nodes that toppled at least once.
    UniqueNodes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub theta: Thresholds,
    pub epsilon: f64,
    pub sigma_x: f64,
    pub redistribution_fraction: f64,
    /// Stress a node is reset to after toppling.
    pub reset_level: f64,
    /// `None` means `10·n`.
    pub max_relax_rounds: Option<usize>,
    pub count_mode: CountMode,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            delta: 0.20,
            alpha: 0.30,
            beta: 0.40,
            gamma: 0.50,
            theta: Thresholds::Uniform(1.0),
            epsilon: 1e-6,
            sigma_x: 0.20,
            redistribution_fraction: 0.5,
            reset_level: 0.0,
            max_relax_rounds: None,
            count_mode: CountMode::Events,
        }
    }
}

impl Params {
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.sigma_x > 0.0 && self.sigma_x.is_finite()) {
            return bad(format!("sigma_x must be positive, got {}", self.sigma_x));
        }
        if !(0.0..=1.0).contains(&self.redistribution_fraction) {
            return bad(format!(
                "redistribution_fraction must lie in [0, 1], got {}",
                self.redistribution_fraction
            ));
        }
        if let Thresholds::PerNode(v) = &self.theta {
            if v.len() != n {
                return bad(format!("{} thresholds for {n} nodes", v.len()));
            }
        }
        let min_theta = self.theta.min();
        if !(min_theta > 0.0 && min_theta.is_finite()) {
            return bad(format!("thresholds must be positive, got min {min_theta}"));
        }
        if !(self.reset_level >= 0.0 && self.reset_level < min_theta) {
            return bad(format!(
                "reset_level must lie in [0, min threshold {min_theta}), got {}",
                self.reset_level
            ));
        }
        if self.max_relax_rounds == Some(0) {
            return bad("max_relax_rounds must be at least 1".into());
        }
        Ok(())
    }

    pub fn relax_budget(&self, n: usize) -> usize {
        self.max_relax_rounds.unwrap_or(10 * n)
    }
}

/// External field `B_t = max(0, B̄ + ξ_t)`, `ξ_t ~ N(0, σ_B²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    pub b_bar: f64,
    pub sigma_b: f64,
}

/// Default ratio σ_B / B̄.
pub const DEFAULT_FIELD_NOISE_RATIO: f64 = 0.10;

impl FieldModel {
    /// Field with the default perturbation `σ_B = 0.10·B̄`.
    pub fn new(b_bar: f64) -> Self {
        Self::with_noise_ratio(b_bar, DEFAULT_FIELD_NOISE_RATIO)
    }

    pub fn with_noise_ratio(b_bar: f64, ratio: f64) -> Self {
        FieldModel {
            b_bar,
            sigma_b: ratio * b_bar,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b_bar >= 0.0
            && self.b_bar.is_finite()
            && self.sigma_b >= 0.0
            && self.sigma_b.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "field needs finite B_bar >= 0 and sigma_B >= 0, got ({}, {})",
                self.b_bar, self.sigma_b
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn realise(&self, z: f64) -> f64 {
        (self.b_bar + self.sigma_b * z).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionCheck {
    pub passed: bool,
    /// `δ/ρ`, infinite when `ρ = 0`.
    pub bound: f64,
    /// `δ/ρ − β`.
    pub margin: f64,
}

/// Boundedness condition `β < δ/ρ(A)` on the propagation operator.
pub fn contraction_check(params: &Params, rho: f64) -> ContractionCheck {
    if rho <= 0.0 {
        return ContractionCheck {
            passed: true,
            bound: f64::INFINITY,
            margin: f64::INFINITY,
        };
    }
    let bound = params.delta / rho;
    ContractionCheck {
        passed: params.beta < bound,
        bound,
        margin: bound - params.beta,
    }
}

/// Hall-adjusted activation threshold `θ − γH`.
#[inline]
pub fn hall_adjusted_threshold(theta: f64, gamma: f64, hall: f64) -> f64 {
    theta - gamma * hall
}

/// Activation gap `θ − γH − s̃`; the node topples iff the gap is `≤ 0`.
#[inline]
pub fn activation_gap(theta: f64, gamma: f64, hall_prev: f64, s_tilde: f64) -> f64 {
    hall_adjusted_threshold(theta, gamma, hall_prev) - s_tilde
}

/// Toppling decided on the non-Hall stress `s̃ = s − γH` against the
/// Hall-adjusted threshold.
#[inline]
pub fn topples_adjusted(stress: f64, theta: f64, gamma: f64, hall: f64) -> bool {
    stress - gamma * hall >= hall_adjusted_threshold(theta, gamma, hall)
}

/// `∂g/∂B = −γ·I/(DC+ε)`.
pub fn gap_sensitivity_field(
    gamma: f64,
    flow_share: f64,
    redundancy: f64,
    capacity: f64,
    epsilon: f64,
) -> f64 {
    -gamma * flow_share / (redundancy * capacity + epsilon)
}

/// `∂g/∂D = γ·B·I·C/(DC+ε)²`.
pub fn gap_sensitivity_redundancy(
    gamma: f64,
    field: f64,
    flow_share: f64,
    redundancy: f64,
    capacity: f64,
    epsilon: f64,
) -> f64 {
    let denom = redundancy * capacity + epsilon;
    gamma * field * flow_share * capacity / (denom * denom)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvalancheRecord {
    pub period: u64,
    /// Avalanche size under the engine's [`CountMode`].
    pub size: usize,
    /// Sorted, de-duplicated indices of nodes that toppled.
    pub toppled_nodes: Vec<usize>,
    pub relax_rounds: usize,
    pub b_realised: f64,
    /// Largest node stress after the update, before relaxation.
    pub peak_stress: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Relaxation {
    pub topplings: usize,
    pub toppled: Vec<usize>,
    pub rounds: usize,
}

/// Mutable state of one replication. Borrows the substrate read-only so
/// many engines can share one operator and exposure profile.
pub struct Engine<'a> {
    operator: &'a PropagationOperator,
    exposure: &'a ExposureProfile,
    params: &'a Params,
    sigma_d: f64,
    stress: Vec<f64>,
    period: u64,
    rng: ChaCha8Rng,
    contraction: ContractionCheck,
    propagated: Vec<f64>,
    hall: Vec<f64>,
    shocks: Vec<f64>,
    excess: Vec<f64>,
    ever_toppled: Vec<bool>,
}

impl<'a> Engine<'a> {
    pub fn new(
        operator: &'a PropagationOperator,
        exposure: &'a ExposureProfile,
        params: &'a Params,
        sigma_d: f64,
        seed: u64,
    ) -> Result<Self> {
        let n = operator.dim();
        if exposure.n() != n {
            return Err(Error::InvalidArgument(format!(
                "operator has {n} nodes but exposure profile has {}",
                exposure.n()
            )));
        }
        params.validate(n)?;
        if !(sigma_d > 0.0 && sigma_d.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma_D must be positive, got {sigma_d}"
            )));
        }
        Ok(Engine {
            operator,
            exposure,
            params,
            sigma_d,
            stress: vec![0.0; n],
            period: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            contraction: contraction_check(params, operator.spectral_radius()),
            propagated: vec![0.0; n],
            hall: vec![0.0; n],
            shocks: vec![0.0; n],
            excess: vec![0.0; n],
            ever_toppled: vec![false; n],
        })
    }

    pub fn contraction(&self) -> ContractionCheck {
        self.contraction
    }

    pub fn stress(&self) -> &[f64] {
        &self.stress
    }

    pub fn set_stress(&mut self, stress: &[f64]) -> Result<()> {
        if stress.len() != self.stress.len() || stress.iter().any(|s| !(*s >= 0.0 && s.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "stress must be n finite non-negative values".into(),
            ));
        }
        self.stress.copy_from_slice(stress);
        Ok(())
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    pub fn n(&self) -> usize {
        self.stress.len()
    }

    /// Half-normal idiosyncratic shocks `σ_x·|z_i|`, one per node.
    pub fn draw_shocks(&mut self) -> Vec<f64> {
        self.fill_shocks();
        self.shocks.clone()
    }

    fn fill_shocks(&mut self) {
        let sigma = self.params.sigma_x;
        for x in self.shocks.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *x = sigma * z.abs();
        }
    }

    /// Hall stress with redundancy rescaled to `D/σ_D`.
    pub fn effective_hall(&self, b: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        effective_hall_into(self.exposure, self.sigma_d, b, &mut out);
        out
    }

    /// Advances one period and relaxes.
    pub fn step(&mut self, field: &FieldModel) -> Result<AvalancheRecord> {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        let b = field.realise(z);
        effective_hall_into(self.exposure, self.sigma_d, b, &mut self.hall);
        self.fill_shocks();
        self.operator
            .matrix()
            .mul_transpose_vec(&self.stress, &mut self.propagated);

        let p = self.params;
        let mut peak: f64 = 0.0;
        for i in 0..self.stress.len() {
            let s = (1.0 - p.delta) * self.stress[i]
                + p.alpha * self.shocks[i]
                + p.beta * self.propagated[i]
                + p.gamma * self.hall[i];
            self.stress[i] = s.max(0.0);
            peak = peak.max(self.stress[i]);
        }

        let relax = self.relax()?;
        let record = AvalancheRecord {
            period: self.period,
            size: match p.count_mode {
                CountMode::Events => relax.topplings,
                CountMode::UniqueNodes => relax.toppled.len(),
            },
            toppled_nodes: relax.toppled,
            relax_rounds: relax.rounds,
            b_realised: b,
            peak_stress: peak,
        };
        self.period += 1;
        Ok(record)
    }

    /// Topples every over-threshold node until quiescence.
    pub fn relax(&mut self) -> Result<Relaxation> {
        let p = self.params;
        let budget = p.relax_budget(self.n());
        let matrix = self.operator.matrix();
        let mut out = Relaxation::default();
        let mut over: Vec<usize> = Vec::new();
        loop {
            over.clear();
            over.extend((0..self.stress.len()).filter(|&i| self.stress[i] >= p.theta.get(i)));
            if over.is_empty() {
                break;
            }
            if out.rounds == budget {
                self.ever_toppled.iter_mut().for_each(|f| *f = false);
                return Err(Error::RelaxBudgetExceeded {
                    period: self.period,
                    max_rounds: budget,
                });
            }
            out.rounds += 1;
            for &i in &over {
                self.excess[i] = self.stress[i] - p.reset_level;
                self.stress[i] = p.reset_level;
                if !self.ever_toppled[i] {
                    self.ever_toppled[i] = true;
                    out.toppled.push(i);
                }
            }
            for &i in &over {
                let pass = p.redistribution_fraction * self.excess[i];
                for (j, a) in matrix.row(i) {
                    self.stress[j] += pass * a;
                }
            }
            out.topplings += over.len();
        }
        for &i in &out.toppled {
            self.ever_toppled[i] = false;
        }
        out.toppled.sort_unstable();
        Ok(out)
    }
}

fn effective_hall_into(exposure: &ExposureProfile, sigma_d: f64, b: f64, out: &mut [f64]) {
    for (i, h) in out.iter_mut().enumerate() {
        *h = b * exposure.flow_share[i]
            / (exposure.redundancy[i] / sigma_d * exposure.capacity[i] + exposure.epsilon);
    }
}
