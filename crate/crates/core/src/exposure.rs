//! Node exposure: flow share, redundancy, capacity, structural resistance
//! and Hall-like transversal stress.

use crate::error::{Error, Result};
use crate::ingest::IoTable;

pub const DEFAULT_FLOOR: f64 = 0.05;
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExposureConfig {
    /// Lower bound of the min-max scaled redundancy.
    pub redundancy_floor: f64,
    /// Lower clip of capacity.
    pub capacity_floor: f64,
    /// Regularisation in the Hall denominator.
    pub epsilon: f64,
}

impl Default for ExposureConfig {
    fn default() -> Self {
        ExposureConfig {
            redundancy_floor: DEFAULT_FLOOR,
            capacity_floor: DEFAULT_FLOOR,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Structural exposure of every node, plus the Hall stress for the field
/// `field` it was last evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureProfile {
    pub flow_share: Vec<f64>,
    /// `None` for nodes without outflows.
    pub hhi_out: Vec<Option<f64>>,
    /// `None` for nodes without inflows.
    pub hhi_in: Vec<Option<f64>>,
    pub redundancy: Vec<f64>,
    pub capacity: Vec<f64>,
    pub resistance: Vec<f64>,
    pub epsilon: f64,
    pub field: f64,
    pub hall: Vec<f64>,
    pub hall_rel: Vec<f64>,
}

impl ExposureProfile {
    pub fn compute(table: &IoTable, cfg: &ExposureConfig, field: f64) -> Result<Self> {
        if !(cfg.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                cfg.epsilon
            )));
        }
        let flow_share = flow_share(table)?;
        let hhi_out = hhi(table, Direction::Out);
        let hhi_in = hhi(table, Direction::In);
        let redundancy = scale_redundancy(&hhi_out, cfg.redundancy_floor)?;
        let capacity = clip_capacity(&hhi_in, cfg.capacity_floor)?;
        let resistance = redundancy
            .iter()
            .zip(&capacity)
            .map(|(d, c)| 1.0 / (d * c + cfg.epsilon))
            .collect();
        let mut p = ExposureProfile {
            flow_share,
            hhi_out,
            hhi_in,
            redundancy,
            capacity,
            resistance,
            epsilon: cfg.epsilon,
            field: 0.0,
            hall: Vec::new(),
            hall_rel: Vec::new(),
        };
        p.set_field(field)?;
        Ok(p)
    }

    /// Re-evaluates `hall` and `hall_rel` at field intensity `b`.
    pub fn set_field(&mut self, b: f64) -> Result<()> {
        let hs = hall_stress(b, self)?;
        self.field = b;
        self.hall = hs.hall;
        self.hall_rel = hs.hall_rel;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.flow_share.len()
    }
}

/// Share of total intermediate flow passing through each node in either
/// direction, normalised by twice the total so the shares sum to one.
pub fn flow_share(table: &IoTable) -> Result<Vec<f64>> {
    let total = table.total_flow();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument(
            "flow share undefined: table has zero total flow".into(),
        ));
    }
    let out = table.outflows();
    let inn = table.inflows();
    Ok(out
        .iter()
        .zip(&inn)
        .map(|(o, i)| (o + i) / (2.0 * total))
        .collect())
}

#[derive(Clone, Copy)]
enum Direction {
    Out,
    In,
}

/// Herfindahl concentration of each node's outgoing (or incoming) flows.
fn hhi(table: &IoTable, dir: Direction) -> Vec<Option<f64>> {
    let n = table.n();
    let (totals, mut sq) = match dir {
        Direction::Out => (table.outflows(), vec![0.0; n]),
        Direction::In => (table.inflows(), vec![0.0; n]),
    };
    for (i, j, v) in table.flows().triplets() {
        let k = match dir {
            Direction::Out => i,
            Direction::In => j,
        };
        let share = v / totals[k];
        sq[k] += share * share;
    }
    sq.into_iter()
        .zip(totals)
        .map(|(h, t)| (t > 0.0).then_some(h))
        .collect()
}

fn check_floor(floor: f64, what: &str) -> Result<()> {
    if floor > 0.0 && floor < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{what} floor must lie in (0, 1), got {floor}"
        )))
    }
}

/// Raw redundancy `(1 − HHI)/HHI` min-max scaled onto `[floor, 1]`.
/// Nodes without outflows are pinned to the floor and excluded from the
/// min/max; when all raw values coincide every node maps to the floor.
fn scale_redundancy(hhi_out: &[Option<f64>], floor: f64) -> Result<Vec<f64>> {
    check_floor(floor, "redundancy")?;
    let raw: Vec<Option<f64>> = hhi_out.iter().map(|h| h.map(|h| (1.0 - h) / h)).collect();
    let (lo, hi) = raw
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
            (lo.min(r), hi.max(r))
        });
    let range = hi - lo;
    Ok(raw
        .iter()
        .map(|r| match r {
            Some(r) if range > 0.0 => floor + (1.0 - floor) * (r - lo) / range,
            _ => floor,
        })
        .collect())
}

fn clip_capacity(hhi_in: &[Option<f64>], floor: f64) -> Result<Vec<f64>> {
    check_floor(floor, "capacity")?;
    Ok(hhi_in
        .iter()
        .map(|h| match h {
            Some(h) => (1.0 - h).max(floor),
            None => floor,
        })
        .collect())
}

/// Normalised outgoing redundancy `D` of every node.
pub fn redundancy(table: &IoTable, floor: f64) -> Result<Vec<f64>> {
    scale_redundancy(&hhi(table, Direction::Out), floor)
}

/// Absorptive capacity `C = max(floor, 1 − HHI_in)`.
pub fn capacity(table: &IoTable, floor: f64) -> Result<Vec<f64>> {
    clip_capacity(&hhi(table, Direction::In), floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HallStress {
    pub hall: Vec<f64>,
    pub hall_rel: Vec<f64>,
}

/// `H_i = B·I_i / (D_i·C_i + ε)` and its normalisation `H_i / Σ_j H_j`.
pub fn hall_stress(b: f64, profile: &ExposureProfile) -> Result<HallStress> {
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "field intensity must be finite and >= 0, got {b}"
        )));
    }
    let hall: Vec<f64> = (0..profile.n())
        .map(|i| {
            hall_value(
                b,
                profile.flow_share[i],
                profile.redundancy[i],
                profile.capacity[i],
                profile.epsilon,
            )
        })
        .collect();
    let total: f64 = hall.iter().sum();
    let hall_rel = if total > 0.0 {
        hall.iter().map(|h| h / total).collect()
    } else {
        vec![0.0; hall.len()]
    };
    Ok(HallStress { hall, hall_rel })
}

#[inline]
pub fn hall_value(b: f64, flow_share: f64, redundancy: f64, capacity: f64, epsilon: f64) -> f64 {
    b * flow_share / (redundancy * capacity + epsilon)
}

/// Analytic partial derivatives of the Hall stress of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HallPartials {
    pub d_field: f64,
    pub d_flow_share: f64,
    pub d_redundancy: f64,
    pub d_capacity: f64,
    /// ∂²H/∂B∂R on the factorised form `H = B·I·R`.
    pub d_field_d_resistance: f64,
}

pub fn hall_partials(
    b: f64,
    flow_share: f64,
    redundancy: f64,
    capacity: f64,
    epsilon: f64,
) -> HallPartials {
    let denom = redundancy * capacity + epsilon;
    let r = 1.0 / denom;
    HallPartials {
        d_field: flow_share * r,
        d_flow_share: b * r,
        d_redundancy: -b * flow_share * capacity / (denom * denom),
        d_capacity: -b * flow_share * redundancy / (denom * denom),
        d_field_d_resistance: flow_share,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedNode {
    pub index: usize,
    pub flow_share: f64,
    pub resistance: f64,
    pub hall_rel: f64,
}

/// Top `k` nodes by relative Hall exposure, ties broken by ascending index.
pub fn rank_exposure(profile: &ExposureProfile, k: usize) -> Result<Vec<RankedNode>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut idx: Vec<usize> = (0..profile.n()).collect();
    idx.sort_by(|&a, &b| {
        profile.hall_rel[b]
            .total_cmp(&profile.hall_rel[a])
            .then(a.cmp(&b))
    });
    Ok(idx
        .into_iter()
        .take(k)
        .map(|i| RankedNode {
            index: i,
            flow_share: profile.flow_share[i],
            resistance: profile.resistance[i],
            hall_rel: profile.hall_rel[i],
        })
        .collect())
}
