//! Propagation operators built from an input-output table, with their
//! spectral radii and the leakage profile.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::IoTable;
use crate::sparse::CsrMatrix;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    /// `z_ij / Σ_k z_ik`.
    RowShare,
    /// `ℓ_i · z_ij / Σ_k z_ik`.
    #[default]
    LeakageAdjusted,
    /// `z_ij / max_i Σ_k z_ik`.
    MaxRow,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 3] = [
        OperatorKind::RowShare,
        OperatorKind::LeakageAdjusted,
        OperatorKind::MaxRow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OperatorKind::RowShare => "row-share",
            OperatorKind::LeakageAdjusted => "leakage-adjusted",
            OperatorKind::MaxRow => "max-row",
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row-share" | "share" => Ok(OperatorKind::RowShare),
            "leakage-adjusted" | "leak" => Ok(OperatorKind::LeakageAdjusted),
            "max-row" | "max" => Ok(OperatorKind::MaxRow),
            other => Err(Error::InvalidArgument(format!(
                "unknown operator kind '{other}'"
            ))),
        }
    }
}

/// Per-node leakage `ℓ_i ∈ [0, 1]`: the share of gross row use that is
/// intermediate outflow.
#[derive(Debug, Clone, PartialEq)]
pub struct LeakageProfile {
    pub leakage: Vec<f64>,
    pub mean_leakage: f64,
}

pub fn leakage_profile(table: &IoTable) -> Result<LeakageProfile> {
    let leakage = table
        .outflows()
        .iter()
        .zip(table.row_use_total())
        .enumerate()
        .map(|(i, (&out, &gross))| {
            if out <= 0.0 {
                Ok(0.0)
            } else if gross <= 0.0 {
                Err(Error::InvalidArgument(format!(
                    "node {} has outflows {out} but zero gross use",
                    table.node_label(i)
                )))
            } else {
                Ok((out / gross).clamp(0.0, 1.0))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_leakage = leakage.iter().sum::<f64>() / leakage.len() as f64;
    Ok(LeakageProfile {
        leakage,
        mean_leakage,
    })
}

/// A normalised non-negative propagation matrix with its cached spectral
/// radius.
#[derive(Debug, Clone)]
pub struct PropagationOperator {
    pub kind: OperatorKind,
    pub year: i32,
    matrix: CsrMatrix,
    spectral_radius: f64,
}

impl PropagationOperator {
    pub fn build(table: &IoTable, kind: OperatorKind) -> Result<Self> {
        let matrix = operator_matrix(table, kind)?;
        let spectral_radius = spectral_radius(&matrix, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        Ok(PropagationOperator {
            kind,
            year: table.year,
            matrix,
            spectral_radius,
        })
    }

    /// Wraps an arbitrary non-negative matrix, e.g. a hand-built test
    /// operator.
    pub fn from_matrix(kind: OperatorKind, year: i32, matrix: CsrMatrix) -> Result<Self> {
        if matrix
            .triplets()
            .any(|(_, _, v)| !(v.is_finite() && v >= 0.0))
        {
            return Err(Error::InvalidArgument(
                "operator entries must be finite and non-negative".into(),
            ));
        }
        let spectral_radius = spectral_radius(&matrix, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        Ok(PropagationOperator {
            kind,
            year,
            matrix,
            spectral_radius,
        })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

/// The normalised matrix for `kind`, without the spectral radius.
pub fn operator_matrix(table: &IoTable, kind: OperatorKind) -> Result<CsrMatrix> {
    let out = table.outflows();
    let share = |i: usize, v: f64| if out[i] > 0.0 { v / out[i] } else { 0.0 };
    let z = table.flows();
    let m = match kind {
        OperatorKind::RowShare => {
            CsrMatrix::from_triplets(z.dim(), z.triplets().map(|(i, j, v)| (i, j, share(i, v))))
        }
        OperatorKind::LeakageAdjusted => {
            let leak = leakage_profile(table)?.leakage;
            CsrMatrix::from_triplets(
                z.dim(),
                z.triplets().map(|(i, j, v)| (i, j, leak[i] * share(i, v))),
            )
        }
        OperatorKind::MaxRow => {
            let max_out = out.iter().copied().fold(0.0, f64::max);
            if max_out > 0.0 {
                CsrMatrix::from_triplets(z.dim(), z.triplets().map(|(i, j, v)| (i, j, v / max_out)))
            } else {
                CsrMatrix::zeros(z.dim())
            }
        }
    };
    Ok(m)
}

/// Strongly connected components of the positive-entry graph, via an
/// iterative Kosaraju pass.
fn strongly_connected_components(m: &CsrMatrix) -> Vec<Vec<usize>> {
    let n = m.dim();
    let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j, _) in m.triplets() {
        rev[j].push(i);
    }

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for root in 0..n {
        if visited[root] {
            continue;
        }
        visited[root] = true;
        let mut stack: Vec<(usize, Vec<usize>)> =
            vec![(root, m.row(root).map(|(j, _)| j).collect())];
        while let Some((node, pending)) = stack.last_mut() {
            if let Some(next) = pending.pop() {
                if !visited[next] {
                    visited[next] = true;
                    let succ = m.row(next).map(|(j, _)| j).collect();
                    stack.push((next, succ));
                }
            } else {
                order.push(*node);
                stack.pop();
            }
        }
    }

    let mut comp = vec![usize::MAX; n];
    let mut components = Vec::new();
    for &root in order.iter().rev() {
        if comp[root] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = vec![root];
        comp[root] = id;
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            for &u in &rev[v] {
                if comp[u] == usize::MAX {
                    comp[u] = id;
                    members.push(u);
                    stack.push(u);
                }
            }
        }
        members.sort_unstable();
        components.push(members);
    }
    components
}

/// Perron root of an irreducible non-negative block by shifted power
/// iteration. The Collatz-Wielandt bounds `min_i (Mv)_i/v_i ≤ ρ ≤ max_i
/// (Mv)_i/v_i` bracket the root at every step; iteration stops once the
/// bracket is narrower than `tol`.
fn perron_root(block: &CsrMatrix, tol: f64, max_iter: usize) -> Result<f64> {
    let n = block.dim();
    let row_sums = block.row_sums();
    // Shifting by a positive multiple of the identity makes the block
    // primitive, so the iteration converges even for periodic blocks.
    let shift = row_sums.iter().sum::<f64>() / n as f64;
    let mut v = vec![1.0; n];
    let mut w = vec![0.0; n];
    let (mut lower, mut upper) = (f64::NAN, f64::NAN);
    for _ in 0..max_iter {
        block.mul_vec(&v, &mut w);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi += shift * vi;
        }
        lower = f64::INFINITY;
        upper = f64::NEG_INFINITY;
        for (wi, vi) in w.iter().zip(&v) {
            let r = wi / vi;
            lower = lower.min(r);
            upper = upper.max(r);
        }
        if upper - lower < tol {
            return Ok((0.5 * (lower + upper) - shift).max(0.0));
        }
        let norm = w.iter().copied().fold(0.0, f64::max);
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        lower: lower - shift,
        upper: upper - shift,
    })
}

/// Spectral radius of a non-negative square matrix.
///
/// The matrix is split into strongly connected components; components
/// without a cycle contribute zero and each irreducible block is solved by
/// [`perron_root`] starting from the all-ones vector. An all-zero matrix
/// returns 0.
pub fn spectral_radius(m: &CsrMatrix, tol: f64, max_iter: usize) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if m.is_all_zero() {
        return Ok(0.0);
    }
    let mut rho: f64 = 0.0;
    for comp in strongly_connected_components(m) {
        if comp.len() == 1 {
            rho = rho.max(m.get(comp[0], comp[0]));
            continue;
        }
        let mut local = vec![usize::MAX; m.dim()];
        for (k, &g) in comp.iter().enumerate() {
            local[g] = k;
        }
        let triplets = comp.iter().enumerate().flat_map(|(k, &g)| {
            let local = &local;
            m.row(g)
                .filter(move |(j, _)| local[*j] != usize::MAX)
                .map(move |(j, v)| (k, local[j], v))
        });
        let block = CsrMatrix::from_triplets(comp.len(), triplets.collect::<Vec<_>>());
        rho = rho.max(perron_root(&block, tol, max_iter)?);
    }
    Ok(rho)
}
