//! CSV writers for every table the toolkit emits. Floats are written in
//! shortest round-trip form, so identical results give identical bytes.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::{
    nearest_rank, CellStats, ConvergenceRow, PeriodRecord, PhaseGrid, ScenarioOutcome,
};
use crate::exposure::{rank_exposure, ExposureConfig, ExposureProfile};
use crate::ingest::IoTable;
use crate::operators::{leakage_profile, OperatorKind, PropagationOperator};
use crate::tail::TailFit;

fn write_rows<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One year of network diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelRow {
    pub year: i32,
    pub rho_share: f64,
    pub rho_leak: f64,
    pub rho_max: f64,
    pub mean_leakage: f64,
    #[serde(rename = "mean_Hrel")]
    pub mean_hrel: f64,
    #[serde(rename = "p95_Hrel")]
    pub p95_hrel: f64,
}

pub fn panel_row(table: &IoTable, cfg: &ExposureConfig) -> Result<PanelRow> {
    let rho = |kind| PropagationOperator::build(table, kind).map(|op| op.spectral_radius());
    let exposure = ExposureProfile::compute(table, cfg, 1.0)?;
    let mut hrel = exposure.hall_rel.clone();
    hrel.sort_by(f64::total_cmp);
    Ok(PanelRow {
        year: table.year,
        rho_share: rho(OperatorKind::RowShare)?,
        rho_leak: rho(OperatorKind::LeakageAdjusted)?,
        rho_max: rho(OperatorKind::MaxRow)?,
        mean_leakage: leakage_profile(table)?.mean_leakage,
        mean_hrel: hrel.iter().sum::<f64>() / hrel.len() as f64,
        p95_hrel: nearest_rank(&hrel, 95.0),
    })
}

pub fn write_panel(path: &Path, rows: &[PanelRow]) -> Result<()> {
    write_rows(path, rows)
}

#[derive(Serialize)]
struct ExposureCsvRow<'a> {
    node: String,
    country: &'a str,
    sector: &'a str,
    #[serde(rename = "I")]
    flow_share: f64,
    #[serde(rename = "HHI_out")]
    hhi_out: Option<f64>,
    #[serde(rename = "HHI_in")]
    hhi_in: Option<f64>,
    #[serde(rename = "D")]
    redundancy: f64,
    #[serde(rename = "C")]
    capacity: f64,
    #[serde(rename = "R")]
    resistance: f64,
    #[serde(rename = "H")]
    hall: f64,
    #[serde(rename = "H_rel")]
    hall_rel: f64,
}

/// Per-node exposure; empty HHI cells mark nodes without flows in that
/// direction.
pub fn write_exposure(path: &Path, table: &IoTable, p: &ExposureProfile) -> Result<()> {
    write_rows(
        path,
        (0..p.n()).map(|i| {
            let id = table.node(i);
            ExposureCsvRow {
                node: table.node_label(i),
                country: &id.country,
                sector: &id.sector,
                flow_share: p.flow_share[i],
                hhi_out: p.hhi_out[i],
                hhi_in: p.hhi_in[i],
                redundancy: p.redundancy[i],
                capacity: p.capacity[i],
                resistance: p.resistance[i],
                hall: p.hall[i],
                hall_rel: p.hall_rel[i],
            }
        }),
    )
}

#[derive(Serialize)]
struct TopNodeRow<'a> {
    rank: usize,
    node: String,
    country: &'a str,
    sector: &'a str,
    #[serde(rename = "I")]
    flow_share: f64,
    #[serde(rename = "R")]
    resistance: f64,
    #[serde(rename = "H_rel")]
    hall_rel: f64,
}

pub fn write_top_nodes(path: &Path, table: &IoTable, p: &ExposureProfile, k: usize) -> Result<()> {
    let ranked = rank_exposure(p, k)?;
    write_rows(
        path,
        ranked.iter().enumerate().map(|(r, n)| {
            let id = table.node(n.index);
            TopNodeRow {
                rank: r + 1,
                node: table.node_label(n.index),
                country: &id.country,
                sector: &id.sector,
                flow_share: n.flow_share,
                resistance: n.resistance,
                hall_rel: n.hall_rel,
            }
        }),
    )
}

#[derive(Serialize)]
struct AvalancheRow {
    replication: usize,
    period: u64,
    #[serde(rename = "S")]
    size: usize,
    #[serde(rename = "B_realised")]
    b_realised: f64,
    relax_rounds: usize,
}

pub fn write_avalanches(path: &Path, series: &[PeriodRecord]) -> Result<()> {
    write_rows(
        path,
        series.iter().map(|r| AvalancheRow {
            replication: r.replication,
            period: r.period,
            size: r.size,
            b_realised: r.b_realised,
            relax_rounds: r.relax_rounds,
        }),
    )
}

/// Reads the `S` column of an avalanche series written by
/// [`write_avalanches`], or of any CSV with an `S` header.
pub fn read_avalanche_sizes(path: &Path) -> Result<Vec<usize>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            _ => unreachable!(),
        },
        _ => csv_err(e),
    })?;
    let headers = r.headers().map_err(csv_err)?.clone();
    let col = headers
        .iter()
        .position(|h| h == "S")
        .ok_or_else(|| Error::invalid(path, None, "missing column S"))?;
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let field = rec.get(col).unwrap_or("");
        let v = field.trim().parse::<usize>().map_err(|_| {
            Error::invalid(
                path,
                Some(k + 1),
                format!("S must be a non-negative integer, got {field:?}"),
            )
        })?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::invalid(path, None, "no avalanche records"));
    }
    Ok(out)
}

struct StatsColumns {
    mean_s: f64,
    se_mean_s: f64,
    pr_nonzero: f64,
    pr_ge5: f64,
    pr_ge10: f64,
    pr_ge20: f64,
    p50: usize,
    p95: usize,
    p99: usize,
    max: usize,
    regime: &'static str,
}

#[derive(Serialize)]
struct ScenarioRow<'a> {
    scenario: &'a str,
    #[serde(rename = "B_bar")]
    b_bar: f64,
    #[serde(rename = "sigma_D")]
    sigma_d: f64,
    #[serde(rename = "mean_S")]
    mean_s: f64,
    #[serde(rename = "se_mean_S")]
    se_mean_s: f64,
    pr_nonzero: f64,
    pr_ge5: f64,
    pr_ge10: f64,
    pr_ge20: f64,
    p50: usize,
    p95: usize,
    p99: usize,
    max: usize,
    n_obs: usize,
    regime: &'a str,
}

#[derive(Serialize)]
struct GridRow<'a> {
    #[serde(rename = "B_bar")]
    b_bar: f64,
    #[serde(rename = "sigma_D")]
    sigma_d: f64,
    #[serde(rename = "mean_S")]
    mean_s: f64,
    #[serde(rename = "se_mean_S")]
    se_mean_s: f64,
    pr_nonzero: f64,
    pr_ge5: f64,
    pr_ge10: f64,
    pr_ge20: f64,
    p50: usize,
    p95: usize,
    p99: usize,
    max: usize,
    regime: &'a str,
}

fn columns(s: &CellStats) -> StatsColumns {
    StatsColumns {
        mean_s: s.mean_s,
        se_mean_s: s.se_mean_s,
        pr_nonzero: s.pr_nonzero,
        pr_ge5: s.pr_ge[0],
        pr_ge10: s.pr_ge[1],
        pr_ge20: s.pr_ge[2],
        p50: s.p50,
        p95: s.p95,
        p99: s.p99,
        max: s.max,
        regime: s.regime.as_str(),
    }
}

pub fn write_scenarios(path: &Path, outcomes: &[ScenarioOutcome]) -> Result<()> {
    write_rows(
        path,
        outcomes.iter().map(|o| {
            let c = columns(&o.stats);
            ScenarioRow {
                scenario: &o.spec.name,
                b_bar: o.spec.b_bar,
                sigma_d: o.spec.sigma_d,
                mean_s: c.mean_s,
                se_mean_s: c.se_mean_s,
                pr_nonzero: c.pr_nonzero,
                pr_ge5: c.pr_ge5,
                pr_ge10: c.pr_ge10,
                pr_ge20: c.pr_ge20,
                p50: c.p50,
                p95: c.p95,
                p99: c.p99,
                max: c.max,
                n_obs: o.stats.n_obs,
                regime: c.regime,
            }
        }),
    )
}

pub fn write_phase_grid(path: &Path, grid: &PhaseGrid) -> Result<()> {
    write_rows(
        path,
        grid.iter().map(|(b, s, st)| {
            let c = columns(st);
            GridRow {
                b_bar: b,
                sigma_d: s,
                mean_s: c.mean_s,
                se_mean_s: c.se_mean_s,
                pr_nonzero: c.pr_nonzero,
                pr_ge5: c.pr_ge5,
                pr_ge10: c.pr_ge10,
                pr_ge20: c.pr_ge20,
                p50: c.p50,
                p95: c.p95,
                p99: c.p99,
                max: c.max,
                regime: c.regime,
            }
        }),
    )
}

#[derive(Serialize)]
struct ConvergenceCsvRow {
    #[serde(rename = "B_bar")]
    b_bar: f64,
    #[serde(rename = "sigma_D")]
    sigma_d: f64,
    #[serde(rename = "mean_S")]
    mean_s: f64,
    #[serde(rename = "se_mean_S")]
    se_mean_s: f64,
    relative_se: Option<f64>,
    se_pr_nonzero: f64,
    se_pr_ge5: f64,
    se_pr_ge10: f64,
    se_pr_ge20: f64,
    regime: &'static str,
    flagged: bool,
}

/// Per-cell Monte Carlo error diagnostics of a phase grid.
pub fn write_convergence(path: &Path, rows: &[ConvergenceRow]) -> Result<()> {
    write_rows(
        path,
        rows.iter().map(|r| ConvergenceCsvRow {
            b_bar: r.b_bar,
            sigma_d: r.sigma_d,
            mean_s: r.mean_s,
            se_mean_s: r.se_mean_s,
            relative_se: r.relative_se,
            se_pr_nonzero: r.binomial_se[0],
            se_pr_ge5: r.binomial_se[1],
            se_pr_ge10: r.binomial_se[2],
            se_pr_ge20: r.binomial_se[3],
            regime: r.regime.as_str(),
            flagged: r.flagged,
        }),
    )
}

#[derive(Serialize)]
struct TailRow<'a> {
    regime: &'a str,
    x_min: usize,
    n_tail: usize,
    alpha: Option<f64>,
    ks: Option<f64>,
    informative: bool,
}

/// One row per labelled fit.
pub fn write_tail_fits(path: &Path, fits: &[(String, TailFit)]) -> Result<()> {
    write_rows(
        path,
        fits.iter().map(|(label, f)| TailRow {
            regime: label,
            x_min: f.x_min,
            n_tail: f.n_tail,
            alpha: f.alpha,
            ks: f.ks_distance,
            informative: f.informative,
        }),
    )
}

#[derive(Serialize)]
struct CcdfRow {
    x: usize,
    prob: f64,
}

pub fn write_ccdf(path: &Path, points: &[(usize, f64)]) -> Result<()> {
    write_rows(path, points.iter().map(|&(x, prob)| CcdfRow { x, prob }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synth_substrate;

    #[test]
    fn phase_grid_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let st = CellStats::from_replications(&[vec![0, 6, 11, 25]]).unwrap();
        let grid = PhaseGrid {
            b_values: vec![0.25, 1.0],
            sigma_d_values: vec![0.5],
            cells: vec![st.clone(), st],
        };
        let p = dir.path().join("phase_grid.csv");
        write_phase_grid(&p, &grid).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "B_bar,sigma_D,mean_S,se_mean_S,pr_nonzero,pr_ge5,pr_ge10,pr_ge20,p50,p95,p99,max,regime"
        );
        assert_eq!(
            lines.next().unwrap(),
            "0.25,0.5,10.5,0.0,0.75,0.75,0.5,0.25,6,25,25,25,avalanche"
        );
        assert_eq!(lines.count(), 1);
    }

    #[test]
    fn avalanche_series_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("avalanches.csv");
        let recs = [
            PeriodRecord {
                replication: 0,
                period: 50,
                size: 3,
                b_realised: 1.25,
                relax_rounds: 2,
            },
            PeriodRecord {
                replication: 1,
                period: 50,
                size: 0,
                b_realised: 0.5,
                relax_rounds: 0,
            },
        ];
        write_avalanches(&p, &recs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("replication,period,S,B_realised,relax_rounds\n0,50,3,1.25,2\n"));
        assert_eq!(read_avalanche_sizes(&p).unwrap(), vec![3, 0]);
    }

    #[test]
    fn reading_sizes_reports_problems() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "replication,period,S\n").unwrap();
        assert!(read_avalanche_sizes(&empty)
            .unwrap_err()
            .to_string()
            .contains("no avalanche records"));
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "S\n1\n-2\n").unwrap();
        assert!(read_avalanche_sizes(&bad)
            .unwrap_err()
            .to_string()
            .contains("row 2"));
        let missing = dir.path().join("nope.csv");
        assert!(matches!(
            read_avalanche_sizes(&missing),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn tail_rows_leave_missing_alpha_blank() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tail_fits.csv");
        let fit = TailFit {
            x_min: 1,
            n_tail: 10,
            alpha: None,
            ks_distance: None,
            informative: false,
        };
        write_tail_fits(&p, &[("absorption".into(), fit)]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "regime,x_min,n_tail,alpha,ks,informative\nabsorption,1,10,,,false\n"
        );
    }

    #[test]
    fn panel_row_orders_radii() {
        let t = synth_substrate(40, 0.2, 3).unwrap();
        let row = panel_row(&t, &ExposureConfig::default()).unwrap();
        assert!(row.rho_leak <= row.rho_share + 1e-12);
        assert!((row.mean_hrel - 1.0 / 40.0).abs() < 1e-12);
        assert!(row.p95_hrel >= row.mean_hrel);
    }
}
