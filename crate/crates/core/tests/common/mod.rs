//! Test-side oracles. Each reimplements its quantity from scratch so it can
//! check the library rather than mirror it.
#![allow(dead_code)]

use hallsand::dynamics::Params;
use hallsand::exposure::ExposureProfile;
use hallsand::ingest::{synth_nodes, IoTable};
use hallsand::sparse::CsrMatrix;
use nalgebra::{DMatrix, Schur};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Random flow table: each off-diagonal or diagonal entry is present with
/// probability `density`; some rows are left empty and gross row use is
/// either the outflow itself or up to four times it.
pub fn random_table(n: usize, density: f64, rng: &mut impl Rng) -> IoTable {
    let mut dense = vec![vec![0.0; n]; n];
    for row in dense.iter_mut() {
        if rng.random::<f64>() < 0.1 {
            continue;
        }
        for v in row.iter_mut() {
            if rng.random::<f64>() < density {
                *v = rng.random_range(0.01..100.0);
            }
        }
    }
    let row_use = dense
        .iter()
        .map(|r| {
            let out: f64 = r.iter().sum();
            if rng.random::<f64>() < 0.2 {
                out
            } else {
                out * rng.random_range(1.0..4.0) + rng.random_range(0.0..1.0)
            }
        })
        .collect();
    IoTable::new(2014, synth_nodes(n), CsrMatrix::from_dense(&dense), row_use).unwrap()
}

pub fn dense_flows(t: &IoTable) -> Vec<Vec<f64>> {
    let n = t.n();
    (0..n)
        .map(|i| (0..n).map(|j| t.flow(i, j)).collect())
        .collect()
}

pub fn naive_leakage(t: &IoTable) -> Vec<f64> {
    dense_flows(t)
        .iter()
        .zip(t.row_use_total())
        .map(|(row, gross)| {
            let out: f64 = row.iter().sum();
            if out > 0.0 {
                (out / gross).min(1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// Leakage-adjusted operator, `ℓ_i · (z_ij / out_i)`, as a dense matrix.
pub fn naive_leak_operator(t: &IoTable) -> Vec<Vec<f64>> {
    let leak = naive_leakage(t);
    dense_flows(t)
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let out: f64 = row.iter().sum();
            row.iter()
                .map(|&z| if out > 0.0 { leak[i] * (z / out) } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Largest eigenvalue modulus from a dense real Schur decomposition, or
/// `None` if the QR sweeps fail to converge. Unbounded sweeps can spin
/// forever on some sparse patterns.
pub fn dense_spectral_radius(m: &[Vec<f64>]) -> Option<f64> {
    let n = m.len();
    if n == 0 {
        return Some(0.0);
    }
    let a = DMatrix::from_fn(n, n, |i, j| m[i][j]);
    let schur = Schur::try_new(a, f64::EPSILON, 100_000)?;
    Some(
        schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
    )
}

/// True when `A^n` has no non-zero entry, using the sparsity pattern only.
pub fn is_nilpotent(m: &[Vec<f64>]) -> bool {
    let n = m.len();
    let pattern: Vec<Vec<bool>> = m
        .iter()
        .map(|r| r.iter().map(|v| *v != 0.0).collect())
        .collect();
    let mut power = pattern.clone();
    for _ in 1..n {
        power = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).any(|k| power[i][k] && pattern[k][j]))
                    .collect()
            })
            .collect();
    }
    power.iter().flatten().all(|v| !v)
}

/// Flow share `(out + in) / (2·total)` computed by plain loops.
pub fn naive_flow_share(t: &IoTable) -> Vec<f64> {
    let z = dense_flows(t);
    let n = z.len();
    let total: f64 = z.iter().flatten().sum();
    (0..n)
        .map(|i| {
            let out: f64 = z[i].iter().sum();
            let inn: f64 = (0..n).map(|k| z[k][i]).sum();
            (out + inn) / (2.0 * total)
        })
        .collect()
}

/// Scalar-loop engine: dense operator, one node at a time, simultaneous
/// toppling rounds. Draw order matches the documented one: one field
/// normal, then one shock normal per node. Returns the per-period
/// avalanche sizes (toppling events), or `None` if relaxation ran past the
/// round budget.
pub fn naive_avalanche_sizes(
    a: &[Vec<f64>],
    flow_share: &[f64],
    exposure: &ExposureProfile,
    params: &Params,
    b_bar: f64,
    sigma_d: f64,
    seed: u64,
    periods: usize,
) -> Option<Vec<usize>> {
    let n = a.len();
    let theta = params.theta.get(0);
    let sigma_b = 0.1 * b_bar;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = vec![0.0f64; n];
    let mut sizes = Vec::with_capacity(periods);
    for _ in 0..periods {
        let z: f64 = StandardNormal.sample(&mut rng);
        let b = (b_bar + sigma_b * z).max(0.0);
        let mut h = vec![0.0; n];
        for i in 0..n {
            let d = exposure.redundancy[i] / sigma_d;
            h[i] = b * flow_share[i] / (d * exposure.capacity[i] + params.epsilon);
        }
        let mut x = vec![0.0; n];
        for xi in x.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *xi = params.sigma_x * z.abs();
        }
        let mut prop = vec![0.0; n];
        for (i, p) in prop.iter_mut().enumerate() {
            for j in 0..n {
                if s[j] != 0.0 && a[j][i] != 0.0 {
                    *p += a[j][i] * s[j];
                }
            }
        }
        for i in 0..n {
            let v = (1.0 - params.delta) * s[i]
                + params.alpha * x[i]
                + params.beta * prop[i]
                + params.gamma * h[i];
            s[i] = if v > 0.0 { v } else { 0.0 };
        }

        let mut events = 0;
        let mut rounds = 0;
        loop {
            let over: Vec<usize> = (0..n).filter(|&i| s[i] >= theta).collect();
            if over.is_empty() {
                break;
            }
            if rounds == 10 * n {
                return None;
            }
            rounds += 1;
            let mut excess = vec![0.0; n];
            for &i in &over {
                excess[i] = s[i] - params.reset_level;
                s[i] = params.reset_level;
            }
            for &i in &over {
                let pass = params.redistribution_fraction * excess[i];
                for j in 0..n {
                    if a[i][j] != 0.0 {
                        s[j] += pass * a[i][j];
                    }
                }
            }
            events += over.len();
        }
        sizes.push(events);
    }
    Some(sizes)
}

/// Exact discrete power law `P(X = k) ∝ k^{-α}`, `k ≥ 1`. Probabilities up
/// to `K` are tabulated by direct summation; beyond `K` the tail is drawn
/// from the continuous approximation with the half-integer shift.
pub struct PowerLawSampler {
    alpha: f64,
    cumulative: Vec<f64>,
    head: f64,
    tail: f64,
}

const TABLE_SIZE: usize = 1_000_000;

impl PowerLawSampler {
    pub fn new(alpha: f64) -> Self {
        let mut cumulative = Vec::with_capacity(TABLE_SIZE);
        let mut acc = 0.0;
        for k in 1..=TABLE_SIZE {
            acc += (k as f64).powf(-alpha);
            cumulative.push(acc);
        }
        let tail = (TABLE_SIZE as f64 + 0.5).powf(1.0 - alpha) / (alpha - 1.0);
        PowerLawSampler {
            alpha,
            head: acc,
            cumulative,
            tail,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u = rng.random::<f64>() * (self.head + self.tail);
        if u < self.head {
            self.cumulative.partition_point(|&c| c <= u) + 1
        } else {
            let r = ((u - self.head) / self.tail).min(1.0 - 1e-16);
            let x = (TABLE_SIZE as f64 + 0.5) * (1.0 - r).powf(-1.0 / (self.alpha - 1.0));
            ((x + 0.5).floor() as usize).max(TABLE_SIZE + 1)
        }
    }

    pub fn samples(&self, n: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }
}
