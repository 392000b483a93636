//! Input-output tables: long-format CSV ingestion, CSV export and seeded
//! synthetic substrates.
//!
//! `flows.csv` carries one intermediate flow per line:
//!
//! ```text
//! year,src_country,src_sector,dst_country,dst_sector,value
//! ```
//!
//! and the optional companion `row_use.csv` carries the gross row-use proxy
//! used for leakage:
//!
//! ```text
//! year,country,sector,gross_use
//! ```
//!
//! Nodes are indexed densely in lexicographic `(country, sector)` order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub const ROW_USE_FILE: &str = "row_use.csv";
pub const FLOWS_FILE: &str = "flows.csv";

/// Year stamped on synthetic substrates.
pub const SYNTH_YEAR: i32 = 2014;

/// A country-sector production unit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub country: String,
    pub sector: String,
}

impl NodeId {
    pub fn new(country: impl Into<String>, sector: impl Into<String>) -> Self {
        NodeId {
            country: country.into(),
            sector: sector.into(),
        }
    }

    /// Parses a `COUNTRY_SECTOR` label. Sector codes may themselves contain
    /// underscores; the country is everything before the first one.
    pub fn parse_label(label: &str) -> Option<Self> {
        let (c, s) = label.split_once('_')?;
        if c.is_empty() || s.is_empty() {
            return None;
        }
        Some(NodeId::new(c, s))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.country, self.sector)
    }
}

/// A year-stamped table of intermediate flows `z[i][j]` (source row to
/// destination column) plus the gross row-use proxy of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct IoTable {
    pub year: i32,
    nodes: Vec<NodeId>,
    index: HashMap<NodeId, usize>,
    flows: CsrMatrix,
    row_use_total: Vec<f64>,
}

/// Relative slack when comparing gross use against summed outflows, so
/// that a gross figure equal to the row total survives summation rounding.
const ROW_USE_SLACK: f64 = 1e-9;

fn covers(gross: f64, out: f64) -> bool {
    gross >= out * (1.0 - ROW_USE_SLACK)
}

impl IoTable {
    /// Validates and assembles a table. `nodes` must already be sorted and
    /// unique; `flows` must be non-negative and `row_use_total[i]` must cover
    /// the row's intermediate outflows.
    pub fn new(
        year: i32,
        nodes: Vec<NodeId>,
        flows: CsrMatrix,
        row_use_total: Vec<f64>,
    ) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(Error::InvalidArgument("table has no nodes".into()));
        }
        if flows.dim() != n || row_use_total.len() != n {
            return Err(Error::InvalidArgument(format!(
                "dimension mismatch: {n} nodes, {}x{} flows, {} row-use entries",
                flows.dim(),
                flows.dim(),
                row_use_total.len()
            )));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "nodes must be strictly ascending".into(),
            ));
        }
        if let Some((i, j, v)) = flows
            .triplets()
            .find(|(_, _, v)| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidArgument(format!(
                "flow {} -> {} is {v}; flows must be finite and non-negative",
                nodes[i], nodes[j]
            )));
        }
        for (i, (&u, out)) in row_use_total.iter().zip(flows.row_sums()).enumerate() {
            if !(u.is_finite() && covers(u, out)) {
                return Err(Error::InvalidArgument(format!(
                    "gross use {u} of {} is below its intermediate outflows {out}",
                    nodes[i]
                )));
            }
        }
        let index = nodes
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, id)| (id, i))
            .collect();
        Ok(IoTable {
            year,
            nodes,
            index,
            flows,
            row_use_total,
        })
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &NodeId {
        &self.nodes[i]
    }

    pub fn node_label(&self, i: usize) -> String {
        self.nodes[i].to_string()
    }

    pub fn index_of(&self, id: &NodeId) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Inverse of [`IoTable::node_label`].
    pub fn index_of_label(&self, label: &str) -> Option<usize> {
        NodeId::parse_label(label).and_then(|id| self.index_of(&id))
    }

    pub fn flows(&self) -> &CsrMatrix {
        &self.flows
    }

    pub fn flow(&self, i: usize, j: usize) -> f64 {
        self.flows.get(i, j)
    }

    pub fn row_use_total(&self) -> &[f64] {
        &self.row_use_total
    }

    /// Σ_k z_ik for every node.
    pub fn outflows(&self) -> Vec<f64> {
        self.flows.row_sums()
    }

    /// Σ_k z_ki for every node.
    pub fn inflows(&self) -> Vec<f64> {
        self.flows.col_sums()
    }

    pub fn total_flow(&self) -> f64 {
        self.flows.triplets().map(|(_, _, v)| v).sum()
    }

    /// Same table with every flow and gross-use entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let flows = CsrMatrix::from_triplets(
            self.n(),
            self.flows.triplets().map(|(i, j, v)| (i, j, v * factor)),
        );
        let row_use = self.row_use_total.iter().map(|u| u * factor).collect();
        IoTable::new(self.year, self.nodes.clone(), flows, row_use)
            .expect("scaling preserves validity")
    }
}

#[derive(Debug, Deserialize)]
struct FlowRow {
    year: i32,
    src_country: String,
    src_sector: String,
    dst_country: String,
    dst_sector: String,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RowUseRow {
    year: i32,
    country: String,
    sector: String,
    gross_use: f64,
}

struct FlowRecord {
    row: usize,
    src: NodeId,
    dst: NodeId,
    value: f64,
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads every flow record of `path`, grouped by year. Rows are validated
/// individually (negative or non-finite values are rejected with their row
/// number).
fn read_flows(path: &Path) -> Result<BTreeMap<i32, Vec<FlowRecord>>> {
    let mut rdr = open_csv(path)?;
    let mut by_year: BTreeMap<i32, Vec<FlowRecord>> = BTreeMap::new();
    for (k, rec) in rdr.deserialize::<FlowRow>().enumerate() {
        let row = k + 1;
        let r = rec.map_err(csv_err(path))?;
        if !r.value.is_finite() {
            return Err(Error::invalid(
                path,
                Some(row),
                format!("value {} is not finite", r.value),
            ));
        }
        if r.value < 0.0 {
            return Err(Error::invalid(
                path,
                Some(row),
                format!("negative flow value {}", r.value),
            ));
        }
        by_year.entry(r.year).or_default().push(FlowRecord {
            row,
            src: NodeId::new(r.src_country, r.src_sector),
            dst: NodeId::new(r.dst_country, r.dst_sector),
            value: r.value,
        });
    }
    Ok(by_year)
}

/// Gross-use entries for `year`, keyed by node, with their row numbers.
fn read_row_use(path: &Path, year: i32) -> Result<Vec<(usize, NodeId, f64)>> {
    let mut rdr = open_csv(path)?;
    let mut out = Vec::new();
    for (k, rec) in rdr.deserialize::<RowUseRow>().enumerate() {
        let row = k + 1;
        let r = rec.map_err(csv_err(path))?;
        if r.year != year {
            continue;
        }
        if !(r.gross_use.is_finite() && r.gross_use >= 0.0) {
            return Err(Error::invalid(
                path,
                Some(row),
                format!("invalid gross use {}", r.gross_use),
            ));
        }
        out.push((row, NodeId::new(r.country, r.sector), r.gross_use));
    }
    Ok(out)
}

fn assemble(
    flows_path: &Path,
    row_use_path: Option<&Path>,
    year: i32,
    records: &[FlowRecord],
) -> Result<IoTable> {
    if records.is_empty() {
        return Err(Error::invalid(
            flows_path,
            None,
            format!("no edges for year {year}"),
        ));
    }
    let node_set: BTreeSet<&NodeId> = records.iter().flat_map(|r| [&r.src, &r.dst]).collect();
    let nodes: Vec<NodeId> = node_set.into_iter().cloned().collect();
    let index: HashMap<&NodeId, usize> = nodes.iter().enumerate().map(|(i, id)| (id, i)).collect();

    let mut seen: HashMap<(usize, usize), usize> = HashMap::with_capacity(records.len());
    let mut triplets = Vec::with_capacity(records.len());
    for r in records {
        let (i, j) = (index[&r.src], index[&r.dst]);
        if let Some(first) = seen.insert((i, j), r.row) {
            return Err(Error::invalid(
                flows_path,
                Some(r.row),
                format!(
                    "duplicate flow {} -> {} in year {year} (first seen on row {first})",
                    r.src, r.dst
                ),
            ));
        }
        triplets.push((i, j, r.value));
    }
    let flows = CsrMatrix::from_triplets(nodes.len(), triplets);

    // Rows without a gross-use entry default to their own outflow (ℓ = 1).
    let mut row_use = flows.row_sums();
    if let Some(ru_path) = row_use_path {
        for (row, id, gross) in read_row_use(ru_path, year)? {
            let Some(&i) = index.get(&id) else {
                return Err(Error::invalid(
                    ru_path,
                    Some(row),
                    format!("unknown node {id}"),
                ));
            };
            if !covers(gross, row_use[i]) {
                return Err(Error::invalid(
                    ru_path,
                    Some(row),
                    format!(
                        "gross use {gross} of {id} is below its intermediate outflows {}",
                        row_use[i]
                    ),
                ));
            }
            row_use[i] = gross;
        }
    }
    IoTable::new(year, nodes, flows, row_use)
}

fn sibling_row_use(flows_path: &Path) -> Option<PathBuf> {
    let p = flows_path.with_file_name(ROW_USE_FILE);
    p.is_file().then_some(p)
}

/// Parses the table for `year` from a long-format flow file. A `row_use.csv`
/// next to the flow file, when present, supplies gross row use.
pub fn parse_io_table(path: &Path, year: i32) -> Result<IoTable> {
    let row_use = sibling_row_use(path);
    parse_io_table_with(path, row_use.as_deref(), year)
}

/// Like [`parse_io_table`] with an explicit (or no) row-use file.
pub fn parse_io_table_with(path: &Path, row_use: Option<&Path>, year: i32) -> Result<IoTable> {
    let by_year = read_flows(path)?;
    let records = by_year.get(&year).map(Vec::as_slice).unwrap_or(&[]);
    assemble(path, row_use, year, records)
}

/// Parses every year present in the flow file, ascending.
pub fn parse_io_panel(path: &Path) -> Result<Vec<IoTable>> {
    let row_use = sibling_row_use(path);
    let by_year = read_flows(path)?;
    if by_year.is_empty() {
        return Err(Error::invalid(path, None, "no edges"));
    }
    by_year
        .iter()
        .map(|(&year, recs)| assemble(path, row_use.as_deref(), year, recs))
        .collect()
}

/// Writes `flows.csv` and `row_use.csv` for `tables` into `dir`.
pub fn write_io_tables(tables: &[&IoTable], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let flows_path = dir.join(FLOWS_FILE);
    let ru_path = dir.join(ROW_USE_FILE);
    let mut fw = csv::Writer::from_path(&flows_path).map_err(csv_err(&flows_path))?;
    fw.write_record([
        "year",
        "src_country",
        "src_sector",
        "dst_country",
        "dst_sector",
        "value",
    ])
    .map_err(csv_err(&flows_path))?;
    let mut rw = csv::Writer::from_path(&ru_path).map_err(csv_err(&ru_path))?;
    for t in tables {
        for (i, j, v) in t.flows.triplets() {
            let (s, d) = (&t.nodes[i], &t.nodes[j]);
            fw.serialize((t.year, &s.country, &s.sector, &d.country, &d.sector, v))
                .map_err(csv_err(&flows_path))?;
        }
        for (id, &gross) in t.nodes.iter().zip(&t.row_use_total) {
            rw.serialize(RowUseRow {
                year: t.year,
                country: id.country.clone(),
                sector: id.sector.clone(),
                gross_use: gross,
            })
            .map_err(csv_err(&ru_path))?;
        }
    }
    fw.flush().map_err(|source| Error::Io {
        path: flows_path.clone(),
        source,
    })?;
    rw.flush().map_err(|source| Error::Io {
        path: ru_path,
        source,
    })?;
    Ok(())
}

// Layering sharpness of the synthetic network: flows run from upstream to
// downstream nodes with a logistic preference of this width.
const SYNTH_LAYER_WIDTH: f64 = 0.05;
// Leakage rises quadratically with upstreamness: ℓ ≈ SYNTH_LEAK_SCALE · u².
const SYNTH_LEAK_SCALE: f64 = 1.15;
const SYNTH_LEAK_NOISE: f64 = 0.03;

/// Node ids `CAA_S00`, `CAA_S01`, ... in ascending order, ten sectors per country
/// for small `n`.
pub fn synth_nodes(n: usize) -> Vec<NodeId> {
    let per_country = 10usize.max(n.div_ceil(26 * 26));
    let width = (per_country - 1).to_string().len().max(2);
    (0..n)
        .map(|k| {
            let (c, s) = (k / per_country, k % per_country);
            let a = (b'A' + (c / 26) as u8) as char;
            let b = (b'A' + (c % 26) as u8) as char;
            NodeId::new(format!("C{a}{b}"), format!("S{s:0width$}"))
        })
        .collect()
}

/// Seeded random production network.
///
/// Every node gets an upstreamness `u ~ U(0,1)` and a lognormal size. Edge
/// `i -> j` appears with probability `density · 2σ((u_i − u_j)/w)` (mirrored
/// for `density > 0.5`), so the expected edge density is `density` and flows
/// run mostly downstream. Leakage grows with upstreamness, giving a mean
/// leakage near 0.37 while the most-downstream nodes, which receive most
/// flows, pass little on.
pub fn synth_substrate(n: usize, density: f64, seed: u64) -> Result<IoTable> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "synthetic substrate needs n >= 2, got {n}"
        )));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "density must lie in (0, 1], got {density}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::<f64>::new(0.0, 1.0).expect("valid normal");

    let upstream: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let size: Vec<f64> = (0..n).map(|_| std_normal.sample(&mut rng).exp()).collect();

    let mut triplets = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let down = 2.0 / (1.0 + (-(upstream[i] - upstream[j]) / SYNTH_LAYER_WIDTH).exp());
            let p = if density <= 0.5 {
                density * down
            } else {
                1.0 - (1.0 - density) * (2.0 - down)
            };
            let draw: f64 = rng.random();
            let noise = std_normal.sample(&mut rng);
            if draw < p {
                triplets.push((i, j, 100.0 * size[i] * (0.5 * noise).exp()));
            }
        }
    }
    let flows = CsrMatrix::from_triplets(n, triplets);
    let out = flows.row_sums();
    let row_use = (0..n)
        .map(|i| {
            let leak = (SYNTH_LEAK_SCALE * upstream[i].powi(2)
                + SYNTH_LEAK_NOISE * std_normal.sample(&mut rng))
            .clamp(0.02, 0.98);
            if out[i] > 0.0 {
                out[i] / leak
            } else {
                100.0 * size[i]
            }
        })
        .collect();
    IoTable::new(SYNTH_YEAR, synth_nodes(n), flows, row_use)
}
