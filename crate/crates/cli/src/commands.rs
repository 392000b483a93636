use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use hallsand::dynamics::{Params, Thresholds};
use hallsand::experiments::{
    convergence_report, preset, preset_scenarios, run_phase_grid, run_scenarios, CellStats,
    PhaseGridSpec, RunOptions, ScenarioSpec, Substrate, PRESETS,
};
use hallsand::exposure::{rank_exposure, ExposureProfile};
use hallsand::ingest::{
    parse_io_panel, parse_io_table, synth_substrate, write_io_tables, IoTable, FLOWS_FILE,
};
use hallsand::operators::{leakage_profile, OperatorKind};
use hallsand::report;
use hallsand::tail::{ccdf, select_xmin, TailFit};
use serde::Serialize;

use crate::config::{RunConfig, SynthSpec, DEFAULT_OUTPUT_DIR, DEFAULT_SYNTH_DENSITY};
use crate::{Cli, Command, ParamArgs, ProtocolArgs, SubstrateArgs};

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    threads: Option<usize>,
    json: bool,
}

impl Ctx {
    fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn wrote(&self, path: &Path) {
        println!("wrote {}", path.display());
    }

    /// Writes `<stem>.json` beside the CSV when `--json` is on.
    fn mirror<T: Serialize>(&self, stem: &str, rows: &T) -> Result<()> {
        if !self.json {
            return Ok(());
        }
        let path = self.file(&format!("{stem}.json"));
        let mut text = serde_json::to_string_pretty(rows)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("{}: cannot write", path.display()))?;
        self.wrote(&path);
        Ok(())
    }

    fn run_options(&self, keep_series: bool) -> RunOptions {
        RunOptions {
            threads: self.threads,
            keep_series,
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let out = cli
        .global
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    let ctx = Ctx {
        cfg,
        out,
        threads: cli.global.threads,
        json: cli.global.json,
    };
    // Resolve inputs before touching the output directory so a bad
    // invocation leaves no trace.
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a.flows, a.year),
        Command::Synth(a) => synth(
            &ctx,
            SynthSpec {
                n: a.n,
                density: a.density,
                seed: a.seed,
            },
        ),
        Command::NetworkPanel(a) => network_panel(&ctx, &a),
        Command::Exposure(a) => exposure(&ctx, &a.substrate, a.field, a.top),
        Command::Simulate(a) => simulate(&ctx, &a),
        Command::PhaseGrid(a) => phase_grid(&ctx, &a),
        Command::TailFit(a) => tail_fit(&ctx, &a),
    }
}

fn create_out(ctx: &Ctx) -> Result<()> {
    std::fs::create_dir_all(&ctx.out)
        .with_context(|| format!("{}: cannot create output directory", ctx.out.display()))
}

enum Source {
    Flows { path: PathBuf, year: Option<i32> },
    Synth(SynthSpec),
}

fn source(args: &SubstrateArgs, cfg: &RunConfig) -> Result<Source> {
    let year = args.year.or(cfg.substrate.year);
    if let Some(path) = &args.flows {
        return Ok(Source::Flows {
            path: path.clone(),
            year,
        });
    }
    if let Some(n) = args.synth_n {
        return Ok(Source::Synth(SynthSpec {
            n,
            density: args.synth_density.unwrap_or(DEFAULT_SYNTH_DENSITY),
            seed: args.synth_seed.unwrap_or(0),
        }));
    }
    match (&cfg.substrate.flows, cfg.substrate.synth) {
        (Some(path), _) => Ok(Source::Flows {
            path: path.clone(),
            year,
        }),
        (None, Some(s)) => Ok(Source::Synth(s)),
        (None, None) => bail!(
            "no substrate: pass --flows FILE or --synth-n N, or set [substrate] in the config"
        ),
    }
}

fn read_flows(path: &Path, year: Option<i32>) -> Result<Vec<IoTable>> {
    ensure!(path.is_file(), "{}: flow file not found", path.display());
    let tables = match year {
        Some(y) => vec![parse_io_table(path, y)?],
        None => parse_io_panel(path)?,
    };
    Ok(tables)
}

fn load_tables(src: &Source) -> Result<Vec<IoTable>> {
    match src {
        Source::Flows { path, year } => read_flows(path, *year),
        Source::Synth(s) => Ok(vec![synth_substrate(s.n, s.density, s.seed)?]),
    }
}

fn load_table(src: &Source) -> Result<IoTable> {
    let mut tables = load_tables(src)?;
    if tables.len() > 1 {
        let years: Vec<i32> = tables.iter().map(|t| t.year).collect();
        bail!("flow file holds years {years:?}; pass --year");
    }
    Ok(tables.remove(0))
}

fn operator_kind(args: &SubstrateArgs, cfg: &RunConfig) -> OperatorKind {
    args.operator.map(Into::into).unwrap_or(cfg.operator_kind)
}

fn params(args: &ParamArgs, cfg: &RunConfig) -> Params {
    let mut p = cfg.params.clone();
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut p.delta, args.delta);
    set(&mut p.alpha, args.alpha);
    set(&mut p.beta, args.beta);
    set(&mut p.gamma, args.gamma);
    set(&mut p.epsilon, args.epsilon);
    set(&mut p.sigma_x, args.sigma_x);
    set(&mut p.redistribution_fraction, args.fraction);
    set(&mut p.reset_level, args.reset_level);
    if let Some(t) = args.theta {
        p.theta = Thresholds::Uniform(t);
    }
    if args.max_relax_rounds.is_some() {
        p.max_relax_rounds = args.max_relax_rounds;
    }
    if let Some(c) = args.count {
        p.count_mode = c.into();
    }
    p
}

fn apply_protocol(spec: &mut ScenarioSpec, args: &ProtocolArgs, cfg: &RunConfig) {
    if let Some(r) = args.replications {
        spec.replications = r;
    }
    if let Some(t) = args.t_burn {
        spec.t_burn = t;
    }
    if let Some(t) = args.t_stat {
        spec.t_stat = t;
    }
    if let Some(r) = args.noise_ratio {
        spec.field_noise_ratio = r;
    }
    if let Some(s) = args.seed.or(cfg.master_seed) {
        spec.master_seed = s;
    }
}

fn substrate(
    table: &IoTable,
    kind: OperatorKind,
    params: &Params,
    cfg: &RunConfig,
) -> Result<Substrate> {
    Ok(Substrate::build(table, kind, &cfg.exposure_config(params))?)
}

#[derive(Serialize)]
struct TableSummary {
    year: i32,
    nodes: usize,
    flows: usize,
    total_flow: f64,
    mean_leakage: f64,
}

fn ingest(ctx: &Ctx, flows: Option<PathBuf>, year: Option<i32>) -> Result<()> {
    let path = flows
        .or_else(|| ctx.cfg.substrate.flows.clone())
        .context("no flow file: pass one or set [substrate] flows in the config")?;
    let tables = read_flows(&path, year.or(ctx.cfg.substrate.year))?;
    let target = ctx.file(FLOWS_FILE);
    if let (Ok(a), Ok(b)) = (path.canonicalize(), target.canonicalize()) {
        ensure!(
            a != b,
            "{}: output would overwrite the input; choose another --out",
            target.display()
        );
    }
    let summary = tables
        .iter()
        .map(|t| {
            Ok(TableSummary {
                year: t.year,
                nodes: t.n(),
                flows: t.flows().nnz(),
                total_flow: t.total_flow(),
                mean_leakage: leakage_profile(t)?.mean_leakage,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for s in &summary {
        println!(
            "year {}: {} nodes, {} flows, mean leakage {:.4}",
            s.year, s.nodes, s.flows, s.mean_leakage
        );
    }
    create_out(ctx)?;
    write_io_tables(&tables.iter().collect::<Vec<_>>(), &ctx.out)?;
    ctx.wrote(&ctx.out);
    ctx.mirror("ingest_summary", &summary)
}

fn synth(ctx: &Ctx, spec: SynthSpec) -> Result<()> {
    let t = synth_substrate(spec.n, spec.density, spec.seed)?;
    create_out(ctx)?;
    write_io_tables(&[&t], &ctx.out)?;
    println!(
        "synthetic network: {} nodes, {} flows, mean leakage {:.4}",
        t.n(),
        t.flows().nnz(),
        leakage_profile(&t)?.mean_leakage
    );
    ctx.wrote(&ctx.out);
    Ok(())
}

fn network_panel(ctx: &Ctx, args: &SubstrateArgs) -> Result<()> {
    let tables = load_tables(&source(args, &ctx.cfg)?)?;
    let exp_cfg = ctx.cfg.exposure_config(&ctx.cfg.params);
    let rows = tables
        .iter()
        .map(|t| report::panel_row(t, &exp_cfg).with_context(|| format!("year {}", t.year)))
        .collect::<Result<Vec<_>>>()?;
    create_out(ctx)?;
    let path = ctx.file("panel.csv");
    report::write_panel(&path, &rows)?;
    ctx.wrote(&path);
    ctx.mirror("panel", &rows)
}

#[derive(Serialize)]
struct TopNode {
    rank: usize,
    node: String,
    country: String,
    sector: String,
    #[serde(rename = "I")]
    flow_share: f64,
    #[serde(rename = "R")]
    resistance: f64,
    #[serde(rename = "H_rel")]
    hall_rel: f64,
}

fn exposure(ctx: &Ctx, args: &SubstrateArgs, field: Option<f64>, top: Option<usize>) -> Result<()> {
    let t = load_table(&source(args, &ctx.cfg)?)?;
    let field = field.unwrap_or(ctx.cfg.exposure.field);
    let k = top.unwrap_or(ctx.cfg.exposure.top);
    let profile = ExposureProfile::compute(&t, &ctx.cfg.exposure_config(&ctx.cfg.params), field)?;
    let ranked = rank_exposure(&profile, k)?;
    create_out(ctx)?;
    let path = ctx.file("exposure.csv");
    report::write_exposure(&path, &t, &profile)?;
    ctx.wrote(&path);
    let path = ctx.file("top_nodes.csv");
    report::write_top_nodes(&path, &t, &profile, k)?;
    ctx.wrote(&path);
    let top: Vec<TopNode> = ranked
        .into_iter()
        .enumerate()
        .map(|(r, n)| {
            let id = t.node(n.index);
            TopNode {
                rank: r + 1,
                node: t.node_label(n.index),
                country: id.country.clone(),
                sector: id.sector.clone(),
                flow_share: n.flow_share,
                resistance: n.resistance,
                hall_rel: n.hall_rel,
            }
        })
        .collect();
    ctx.mirror("top_nodes", &top)
}

fn scenario_list(args: &crate::SimulateArgs, cfg: &RunConfig) -> Result<Vec<ScenarioSpec>> {
    if let (Some(b), Some(s)) = (args.b_bar, args.sigma_d) {
        return Ok(vec![ScenarioSpec::new(args.name.clone(), b, s)]);
    }
    if !args.presets.is_empty() {
        return args
            .presets
            .iter()
            .map(|name| {
                preset(name).with_context(|| {
                    let known: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
                    format!(
                        "unknown preset {name:?}; expected one of {}",
                        known.join(", ")
                    )
                })
            })
            .collect();
    }
    if !cfg.scenarios.is_empty() {
        return Ok(cfg.scenarios.clone());
    }
    Ok(preset_scenarios())
}

fn check_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for l in labels {
        ensure!(
            !l.is_empty()
                && l.chars()
                    .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)),
            "label {l:?} must be non-empty and use only letters, digits, '-', '_' or '.'"
        );
        ensure!(seen.insert(l), "label {l:?} appears twice");
    }
    Ok(())
}

#[derive(Serialize)]
struct ScenarioJson<'a> {
    scenario: &'a ScenarioSpec,
    stats: &'a CellStats,
}

fn simulate(ctx: &Ctx, args: &crate::SimulateArgs) -> Result<()> {
    let t = load_table(&source(&args.substrate, &ctx.cfg)?)?;
    let p = params(&args.params, &ctx.cfg);
    let mut specs = scenario_list(args, &ctx.cfg)?;
    for s in &mut specs {
        apply_protocol(s, &args.protocol, &ctx.cfg);
    }
    check_labels(specs.iter().map(|s| s.name.as_str()))?;
    let sub = substrate(&t, operator_kind(&args.substrate, &ctx.cfg), &p, &ctx.cfg)?;
    let outcomes = run_scenarios(&specs, &sub, &p, ctx.run_options(!args.no_series))
        .context("simulation failed")?;

    create_out(ctx)?;
    let path = ctx.file("scenarios.csv");
    report::write_scenarios(&path, &outcomes)?;
    ctx.wrote(&path);
    for o in &outcomes {
        println!(
            "{:<12} mean_S {:>9.4}  Pr(S>=5) {:.4}  {}",
            o.spec.name, o.stats.mean_s, o.stats.pr_ge[0], o.stats.regime
        );
        if let Some(series) = &o.series {
            let path = ctx.file(&format!("avalanches_{}.csv", o.spec.name));
            report::write_avalanches(&path, series)?;
            ctx.wrote(&path);
        }
    }
    let json: Vec<ScenarioJson> = outcomes
        .iter()
        .map(|o| ScenarioJson {
            scenario: &o.spec,
            stats: &o.stats,
        })
        .collect();
    ctx.mirror("scenarios", &json)
}

#[derive(Serialize)]
struct GridCellJson<'a> {
    b_bar: f64,
    sigma_d: f64,
    stats: &'a CellStats,
}

fn phase_grid(ctx: &Ctx, args: &crate::PhaseGridArgs) -> Result<()> {
    let t = load_table(&source(&args.substrate, &ctx.cfg)?)?;
    let p = params(&args.params, &ctx.cfg);
    let mut spec = ctx
        .cfg
        .grid
        .clone()
        .unwrap_or_else(PhaseGridSpec::default_grid);
    if let Some(b) = &args.b_values {
        spec.b_values = b.clone();
    }
    if let Some(s) = &args.sigma_d_values {
        spec.sigma_d_values = s.clone();
    }
    apply_protocol(&mut spec.template, &args.protocol, &ctx.cfg);
    let sub = substrate(&t, operator_kind(&args.substrate, &ctx.cfg), &p, &ctx.cfg)?;
    let grid =
        run_phase_grid(&spec, &sub, &p, ctx.run_options(false)).context("phase sweep failed")?;
    let conv = convergence_report(&grid);

    create_out(ctx)?;
    let path = ctx.file("phase_grid.csv");
    report::write_phase_grid(&path, &grid)?;
    ctx.wrote(&path);
    let path = ctx.file("convergence.csv");
    report::write_convergence(&path, &conv)?;
    ctx.wrote(&path);
    let flagged = conv.iter().filter(|r| r.flagged).count();
    println!(
        "{} cells, {flagged} above the Monte Carlo error bound",
        conv.len()
    );
    let json: Vec<GridCellJson> = grid
        .iter()
        .map(|(b_bar, sigma_d, stats)| GridCellJson {
            b_bar,
            sigma_d,
            stats,
        })
        .collect();
    ctx.mirror("phase_grid", &json)?;
    ctx.mirror("convergence", &conv)
}

fn default_label(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match stem.strip_prefix("avalanches_") {
        Some(rest) if !rest.is_empty() => rest.to_owned(),
        _ => stem,
    }
}

#[derive(Serialize)]
struct TailJson<'a> {
    label: &'a str,
    fit: &'a TailFit,
}

fn tail_fit(ctx: &Ctx, args: &crate::TailFitArgs) -> Result<()> {
    let labels: Vec<String> = if args.labels.is_empty() {
        args.inputs.iter().map(|p| default_label(p)).collect()
    } else {
        ensure!(
            args.labels.len() == args.inputs.len(),
            "{} labels given for {} inputs",
            args.labels.len(),
            args.inputs.len()
        );
        args.labels.clone()
    };
    check_labels(labels.iter().map(String::as_str))?;
    let mut cfg = ctx.cfg.tail;
    if let Some(e) = args.estimator {
        cfg.estimator = e.into();
    }
    if let Some(m) = args.min_tail {
        cfg.min_tail = m;
    }

    let mut fits = Vec::with_capacity(labels.len());
    let mut curves = Vec::new();
    for (path, label) in args.inputs.iter().zip(labels) {
        let sizes = report::read_avalanche_sizes(path)?;
        let positive: Vec<usize> = sizes.into_iter().filter(|&s| s > 0).collect();
        let fit = if positive.is_empty() {
            TailFit {
                x_min: 0,
                n_tail: 0,
                alpha: None,
                ks_distance: None,
                informative: false,
            }
        } else {
            curves.push((label.clone(), ccdf(&positive)?));
            select_xmin(&positive, &cfg)
                .with_context(|| format!("{}: tail fit failed", path.display()))?
        };
        fits.push((label, fit));
    }

    create_out(ctx)?;
    let path = ctx.file("tail_fits.csv");
    report::write_tail_fits(&path, &fits)?;
    ctx.wrote(&path);
    for (label, points) in &curves {
        let path = ctx.file(&format!("ccdf_{label}.csv"));
        report::write_ccdf(&path, points)?;
        ctx.wrote(&path);
    }
    for (label, f) in &fits {
        match f.alpha {
            Some(a) if f.informative => println!(
                "{label:<12} x_min {:>4}  n_tail {:>6}  alpha {a:.3}",
                f.x_min, f.n_tail
            ),
            _ => println!(
                "{label:<12} uninformative ({} observations in the tail)",
                f.n_tail
            ),
        }
    }
    let json: Vec<TailJson> = fits
        .iter()
        .map(|(label, fit)| TailJson { label, fit })
        .collect();
    ctx.mirror("tail_fits", &json)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_derive_from_file_names() {
        assert_eq!(
            default_label(Path::new("out/avalanches_critical.csv")),
            "critical"
        );
        assert_eq!(default_label(Path::new("series.csv")), "series");
        assert_eq!(default_label(Path::new("avalanches_.csv")), "avalanches_");
    }

    #[test]
    fn labels_must_be_unique_and_path_safe() {
        assert!(check_labels(["a", "b-2"]).is_ok());
        assert!(check_labels(["a", "a"]).is_err());
        assert!(check_labels(["../x"]).is_err());
        assert!(check_labels([""]).is_err());
    }

    #[test]
    fn flags_override_config_params() {
        let cfg: RunConfig = toml::from_str("[params]\nbeta = 0.1\ngamma = 0.9").unwrap();
        let args = ParamArgs {
            beta: Some(0.25),
            theta: Some(2.0),
            ..ParamArgs::default()
        };
        let p = params(&args, &cfg);
        assert_eq!((p.beta, p.gamma, p.delta), (0.25, 0.9, 0.20));
        assert_eq!(p.theta, Thresholds::Uniform(2.0));
    }

    #[test]
    fn seed_precedence_is_flag_then_config_then_scenario() {
        let mut cfg = RunConfig::default();
        let mut spec = ScenarioSpec {
            master_seed: 5,
            ..ScenarioSpec::new("s", 1.0, 1.0)
        };
        apply_protocol(&mut spec, &ProtocolArgs::default(), &cfg);
        assert_eq!(spec.master_seed, 5);
        cfg.master_seed = Some(6);
        apply_protocol(&mut spec, &ProtocolArgs::default(), &cfg);
        assert_eq!(spec.master_seed, 6);
        let flag = ProtocolArgs {
            seed: Some(7),
            ..ProtocolArgs::default()
        };
        apply_protocol(&mut spec, &flag, &cfg);
        assert_eq!(spec.master_seed, 7);
    }

    #[test]
    fn flag_substrate_wins_over_config() {
        let cfg: RunConfig = toml::from_str("[substrate]\nsynth = { n = 30, seed = 2 }").unwrap();
        let Source::Synth(s) = source(&SubstrateArgs::default(), &cfg).unwrap() else {
            panic!()
        };
        assert_eq!((s.n, s.seed), (30, 2));
        let args = SubstrateArgs {
            synth_n: Some(12),
            ..SubstrateArgs::default()
        };
        let Source::Synth(s) = source(&args, &cfg).unwrap() else {
            panic!()
        };
        assert_eq!((s.n, s.density, s.seed), (12, DEFAULT_SYNTH_DENSITY, 0));
        assert!(source(&SubstrateArgs::default(), &RunConfig::default()).is_err());
    }
}
