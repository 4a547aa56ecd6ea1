//! Subcommands. Each reads its inputs, writes artifacts into a run
//! directory and prints a one-line summary.

use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use undercrowd_core::aggregate::{aggregate_rides, join_covariates, AggregateRide, SegmentObservation};
use undercrowd_core::eval::{roc_report, select_degrees, split_by_rides, SplitPlan};
use undercrowd_core::glmm::{export_random_effects, marginal_effects, wald_summary, Focal, GlmmModel, Reference};
use undercrowd_core::gmerf::GmerfModel;
use undercrowd_core::ingest::{reconstruct_rides, Ride};
use undercrowd_core::ride_analysis::{distribution_report, level_curve, profile_rides, scenario_predict, SegmentModel};
use undercrowd_core::synth::{emit_signals_for, simulate, SynthScenario};
use undercrowd_core::validate::run_validation;
use undercrowd_core::{Diagnostic, Error as CoreError};

use crate::artifacts::{read_artifact, Provenance, RunDir};
use crate::config::{RunConfig, ScenarioConfig};
use crate::error::{exit, AppError, Result};
use crate::io::{self, Network};
use crate::weather;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal error
  2  invalid configuration or usage
  3  schema mismatch or malformed input
  4  missing coverage dates (weather or calendar)
  5  degenerate response (a single class)
  6  model fit did not converge
  7  file or network I/O failure

Errors are printed to stderr as one line of JSON:
  {\"error\":{\"code\":\"...\",\"exit\":N,\"message\":\"...\"}}";

#[derive(Debug, Parser)]
#[command(name = "undercrowd", version, about = "Undercrowding analysis of automatic passenger counts", after_help = EXIT_CODES)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = automatic); overrides the config.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Fail on the first malformed input row.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Output root; artifacts go to <out>/<subcommand>-<config hash>/.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Write artifacts directly into --out.
    #[arg(long, global = true)]
    pub in_place: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic network, signals, weather, calendar and truth.
    Simulate {
        /// Scenario file (JSON or TOML); the [synth] section otherwise.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Rebuild per-stop rides from raw signals.
    Ingest {
        #[arg(long)]
        signals: Option<PathBuf>,
        #[arg(long)]
        network: Option<PathBuf>,
    },
    /// Flag outliers and anomalies and filter rides.
    Validate {
        #[arg(long)]
        rides: Option<PathBuf>,
        #[arg(long)]
        network: Option<PathBuf>,
    },
    /// Pool rides per hour and label segments.
    Aggregate {
        #[arg(long)]
        clean_rides: Option<PathBuf>,
        #[arg(long)]
        weather: Option<PathBuf>,
        #[arg(long)]
        calendar: Option<PathBuf>,
    },
    /// Fit the mixed-effects logistic model on the training rides.
    FitGlmm {
        #[arg(long)]
        observations: Option<PathBuf>,
    },
    /// Fit the mixed-effects random forest on the training rides.
    FitGmerf {
        #[arg(long)]
        observations: Option<PathBuf>,
    },
    /// Choose polynomial degrees by cross-validation over training rides.
    SelectDegrees {
        #[arg(long)]
        observations: Option<PathBuf>,
    },
    /// ROC, AUC and confusion table on the test rides.
    Evaluate {
        #[arg(long)]
        observations: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Ride-level undercrowding counts and their distribution.
    RideReport {
        #[arg(long)]
        observations: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Per-segment probabilities for a hypothetical slot.
    Scenario {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Scenario file (JSON or TOML); the [scenario] section otherwise.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Ingest { .. } => "ingest",
            Command::Validate { .. } => "validate",
            Command::Aggregate { .. } => "aggregate",
            Command::FitGlmm { .. } => "fit-glmm",
            Command::FitGmerf { .. } => "fit-gmerf",
            Command::SelectDegrees { .. } => "select-degrees",
            Command::Evaluate { .. } => "evaluate",
            Command::RideReport { .. } => "ride-report",
            Command::Scenario { .. } => "scenario",
        }
    }
}

/// A fitted model artifact of either kind.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Glmm(GlmmModel),
    Gmerf(GmerfModel),
}

impl FittedModel {
    pub fn as_segment_model(&self) -> &dyn SegmentModel {
        match self {
            FittedModel::Glmm(m) => m,
            FittedModel::Gmerf(m) => m,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            FittedModel::Glmm(_) => "glmm",
            FittedModel::Gmerf(_) => "gmerf",
        }
    }

    pub fn groups(&self) -> &[u16] {
        match self {
            FittedModel::Glmm(m) => &m.fit.groups,
            FittedModel::Gmerf(m) => &m.fit.groups,
        }
    }

    pub fn pvre(&self) -> f64 {
        match self {
            FittedModel::Glmm(m) => m.fit.pvre(),
            FittedModel::Gmerf(m) => m.fit.pvre(),
        }
    }
}

fn set(slot: &mut Option<PathBuf>, flag: &Option<PathBuf>) {
    if flag.is_some() {
        slot.clone_from(flag);
    }
}

/// Loads the config and applies flag overrides.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(t) = cli.threads {
        c.threads = t;
    }
    if cli.strict {
        c.strict = true;
    }
    if cli.out.is_some() {
        c.out.clone_from(&cli.out);
    }
    let p = &mut c.paths;
    match &cli.command {
        Command::Simulate { scenario } => set(&mut p.scenario, scenario),
        Command::Ingest { signals, network } => {
            set(&mut p.signals, signals);
            set(&mut p.network, network);
        }
        Command::Validate { rides, network } => {
            set(&mut p.rides, rides);
            set(&mut p.network, network);
        }
        Command::Aggregate {
            clean_rides,
            weather,
            calendar,
        } => {
            set(&mut p.clean_rides, clean_rides);
            set(&mut p.weather, weather);
            set(&mut p.calendar, calendar);
        }
        Command::FitGlmm { observations } | Command::FitGmerf { observations } | Command::SelectDegrees { observations } => {
            set(&mut p.observations, observations)
        }
        Command::Evaluate {
            observations,
            model,
            split,
        } => {
            set(&mut p.observations, observations);
            set(&mut p.model, model);
            set(&mut p.split, split);
        }
        Command::RideReport { observations, model } => {
            set(&mut p.observations, observations);
            set(&mut p.model, model);
        }
        Command::Scenario { model, scenario } => {
            set(&mut p.model, model);
            set(&mut p.scenario, scenario);
        }
    }
    c.propagate_seed();
    c.validate()?;
    Ok(c)
}

struct Ctx {
    cfg: RunConfig,
    prov: Provenance,
    in_place: bool,
}

impl Ctx {
    fn input(&mut self, role: &str, path: &std::path::Path) -> Result<()> {
        self.prov.record_input(role, path)
    }

    fn run_dir(&self) -> Result<RunDir> {
        let out = self.cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        RunDir::create(&out, self.prov.clone(), self.in_place)
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            exit::OK
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<String> {
    let cfg = effective_config(cli)?;
    if cfg.threads > 0 {
        // Fails only when a pool already exists, as in repeated in-process
        // runs; results do not depend on the thread count.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    let prov = Provenance::new(cli.command.name(), &cfg.hash(), cfg.seed, cfg.threads);
    let mut ctx = Ctx {
        cfg,
        prov,
        in_place: cli.in_place,
    };
    match &cli.command {
        Command::Simulate { .. } => cmd_simulate(&mut ctx),
        Command::Ingest { .. } => cmd_ingest(&mut ctx),
        Command::Validate { .. } => cmd_validate(&mut ctx),
        Command::Aggregate { .. } => cmd_aggregate(&mut ctx),
        Command::FitGlmm { .. } => cmd_fit_glmm(&mut ctx),
        Command::FitGmerf { .. } => cmd_fit_gmerf(&mut ctx),
        Command::SelectDegrees { .. } => cmd_select_degrees(&mut ctx),
        Command::Evaluate { .. } => cmd_evaluate(&mut ctx),
        Command::RideReport { .. } => cmd_ride_report(&mut ctx),
        Command::Scenario { .. } => cmd_scenario(&mut ctx),
    }
}

#[derive(Serialize)]
struct SimulationTruth<'a> {
    scenario: &'a SynthScenario,
    truth: &'a undercrowd_core::synth::SynthTruth,
    faults: &'a undercrowd_core::synth::FaultLabels,
}

fn cmd_simulate(ctx: &mut Ctx) -> Result<String> {
    let mut scenario = match ctx.cfg.paths.scenario.clone() {
        Some(p) => {
            ctx.input("scenario", &p)?;
            io::read_structured::<SynthScenario>(&p)?
        }
        None => ctx.cfg.synth.clone(),
    };
    scenario.seed = ctx.cfg.seed;
    let data = simulate(&scenario)?;
    let stream = emit_signals_for(&scenario, &data)?;
    let network = Network {
        route: stream.route.clone(),
        timetable: stream.timetable.clone(),
        capacities: stream.capacities.clone(),
    };
    let mut run = ctx.run_dir()?;
    run.write_bytes("signals.csv", &io::signals_csv(&stream.signals)?)?;
    run.write_bytes("weather.csv", &io::weather_csv(&data.weather)?)?;
    run.write_bytes("calendar.csv", &io::calendar_csv(&data.calendar)?)?;
    run.write_bytes("observations_truth.csv", &io::observations_csv(&data.observations)?)?;
    let mut net = serde_json::to_vec_pretty(&network).map_err(|e| AppError::schema("network.json", e.to_string()))?;
    net.push(b'\n');
    run.write_bytes("network.json", &net)?;
    run.write_json(
        "truth.json",
        &SimulationTruth {
            scenario: &scenario,
            truth: &data.truth,
            faults: &stream.faults,
        },
    )?;
    let dir = run.finish()?;
    Ok(format!(
        "simulate: {} signals, {} aggregate rides, {} observations -> {}",
        stream.signals.len(),
        data.aggregates.len(),
        data.observations.len(),
        dir.display()
    ))
}

fn read_network(ctx: &mut Ctx) -> Result<Network> {
    let p = ctx.cfg.require(&ctx.cfg.paths.network, "network")?.to_path_buf();
    ctx.input("network", &p)?;
    io::read_json(&p)
}

fn cmd_ingest(ctx: &mut Ctx) -> Result<String> {
    let sp = ctx.cfg.require(&ctx.cfg.paths.signals, "signals")?.to_path_buf();
    ctx.input("signals", &sp)?;
    let network = read_network(ctx)?;
    let parsed = io::read_signals(&sp, &ctx.cfg.csv, ctx.cfg.strict)?;
    let rec = reconstruct_rides(&parsed.signals, &network.route, &network.capacities);
    let mut diags = parsed.diagnostics;
    diags.extend(rec.diagnostics);
    let mut run = ctx.run_dir()?;
    run.write_json("rides.json", &rec.rides)?;
    run.write_json("ingest_diagnostics.json", &diags)?;
    let dir = run.finish()?;
    Ok(format!(
        "ingest: {} signals -> {} rides, {} diagnostics -> {}",
        parsed.signals.len(),
        rec.rides.len(),
        diags.len(),
        dir.display()
    ))
}

#[derive(Serialize)]
struct RejectionRow<'a> {
    date: chrono::NaiveDate,
    route: &'a str,
    table_no: u32,
    ride_no: u32,
    direction: u8,
    reason: &'static str,
}

#[derive(Serialize)]
struct RejectionSummary {
    n_input: usize,
    n_kept: usize,
    n_rejected: usize,
    by_reason: Vec<ReasonShare>,
}

#[derive(Serialize)]
struct ReasonShare {
    reason: &'static str,
    rides: usize,
    percent: f64,
}

fn cmd_validate(ctx: &mut Ctx) -> Result<String> {
    let rp = ctx.cfg.require(&ctx.cfg.paths.rides, "rides")?.to_path_buf();
    ctx.input("rides", &rp)?;
    let network = read_network(ctx)?;
    let rides: Vec<Ride> = read_artifact(&rp)?.data;
    let out = run_validation(rides, &network.timetable, &ctx.cfg.statuses, &ctx.cfg.validation)?;
    let rep = &out.report;
    let summary = RejectionSummary {
        n_input: rep.n_input,
        n_kept: rep.n_kept,
        n_rejected: rep.rejected.len(),
        by_reason: undercrowd_core::validate::RejectionReason::ALL
            .iter()
            .map(|r| ReasonShare {
                reason: r.as_str(),
                rides: rep.by_reason.get(r).copied().unwrap_or(0),
                percent: rep.percent(*r),
            })
            .collect(),
    };
    let rows = rep.rejected.iter().flat_map(|x| {
        x.reasons.iter().map(move |r| RejectionRow {
            date: x.key.date,
            route: &x.key.route,
            table_no: x.key.table_no,
            ride_no: x.key.ride_no,
            direction: x.key.direction.code(),
            reason: r.as_str(),
        })
    });
    let mut run = ctx.run_dir()?;
    run.write_json("clean_rides.json", &out.clean)?;
    run.write_bytes(
        "rejections.csv",
        &io::to_csv_with_header(&["date", "route", "table_no", "ride_no", "direction", "reason"], rows)?,
    )?;
    run.write_json("rejection_summary.json", &summary)?;
    run.write_csv("vehicle_report.csv", &out.vehicles)?;
    run.write_json("validation_diagnostics.json", &out.diagnostics)?;
    let dir = run.finish()?;
    Ok(format!(
        "validate: kept {} of {} rides -> {}",
        rep.n_kept,
        rep.n_input,
        dir.display()
    ))
}

fn cmd_aggregate(ctx: &mut Ctx) -> Result<String> {
    let rp = ctx.cfg.require(&ctx.cfg.paths.clean_rides, "clean_rides")?.to_path_buf();
    let cp = ctx.cfg.require(&ctx.cfg.paths.calendar, "calendar")?.to_path_buf();
    ctx.input("clean_rides", &rp)?;
    ctx.input("calendar", &cp)?;
    let rides: Vec<Ride> = read_artifact(&rp)?.data;
    let Some(first) = rides.first() else {
        return Err(CoreError::InvalidInput(String::from("no rides to aggregate")).into());
    };
    let n_segments = first.n_segments();
    let start = rides.iter().map(|r| r.key.date).min().expect("non-empty");
    let end = rides.iter().map(|r| r.key.date).max().expect("non-empty");
    let calendar = io::read_calendar(&cp, ctx.cfg.calendar_anchor)?;
    let weather = match (ctx.cfg.paths.weather.clone(), ctx.cfg.weather_endpoint.clone()) {
        (Some(wp), _) => {
            ctx.input("weather", &wp)?;
            weather::load_weather_file(&wp, start, end)?
        }
        (None, Some(ep)) => weather::fetch_weather(&ep, start, end)?,
        (None, None) => {
            return Err(AppError::Config(String::from(
                "no weather source: set paths.weather, pass --weather or configure [weather_endpoint]",
            )))
        }
    };
    let aggs: Vec<AggregateRide> = aggregate_rides(&rides, n_segments)?;
    let obs = join_covariates(&aggs, &weather, &calendar, &ctx.cfg.threshold)?;
    let n_pos = obs.iter().filter(|o| o.y == 1).count();
    let mut run = ctx.run_dir()?;
    run.write_json("aggregates.json", &aggs)?;
    run.write_bytes("observations.csv", &io::observations_csv(&obs)?)?;
    let dir = run.finish()?;
    Ok(format!(
        "aggregate: {} rides -> {} aggregate rides, {} observations ({} undercrowded) -> {}",
        rides.len(),
        aggs.len(),
        obs.len(),
        n_pos,
        dir.display()
    ))
}

fn read_observations(ctx: &mut Ctx) -> Result<Vec<SegmentObservation>> {
    let p = ctx.cfg.require(&ctx.cfg.paths.observations, "observations")?.to_path_buf();
    ctx.input("observations", &p)?;
    io::read_observations(&p)
}

fn make_split(ctx: &Ctx, obs: &[SegmentObservation]) -> Result<SplitPlan> {
    Ok(split_by_rides(obs.iter().map(|o| o.ride_id), ctx.cfg.eval.fraction, ctx.cfg.seed)?)
}

fn fit_glmm_model(train: &[SegmentObservation], ctx: &Ctx) -> Result<GlmmModel> {
    Ok(GlmmModel::fit(train, &ctx.cfg.model, &ctx.cfg.glmm)?)
}

#[derive(Serialize)]
struct PredictionRow {
    ride_id: u32,
    segment: u16,
    y: u8,
    p: f64,
}

fn prediction_rows(obs: &[SegmentObservation], probs: &[f64]) -> Vec<PredictionRow> {
    obs.iter()
        .zip(probs)
        .map(|(o, p)| PredictionRow {
            ride_id: o.ride_id,
            segment: o.segment,
            y: o.y,
            p: *p,
        })
        .collect()
}

#[derive(Serialize)]
struct CurveRow<'a> {
    x: u32,
    y: f64,
    series: &'a str,
    low: f64,
    high: f64,
}

#[derive(Serialize)]
struct EffectRow {
    segment: u16,
    z: f64,
}

fn cmd_fit_glmm(ctx: &mut Ctx) -> Result<String> {
    let obs = read_observations(ctx)?;
    let split = make_split(ctx, &obs)?;
    let (train, test) = split.partition(&obs);
    let model = fit_glmm_model(&train, ctx)?;
    let (ql, qh) = ctx.cfg.eval.wald_quantiles;
    let wald = wald_summary(&model.fit, ql, qh);
    let test_p = model.predict(&test)?;

    let t = &model.transform;
    let slot_grid: Vec<u32> = (t.slot_range.min as u32..=t.slot_range.max as u32).collect();
    let week_grid: Vec<u32> = (t.week_range.min as u32..=t.week_range.max as u32).collect();
    let mut marg_diags: Vec<Diagnostic> = Vec::new();
    let mut curves = Vec::new();
    for (focal, grid, name) in [
        (Focal::TimeSlot, &slot_grid, "time_slot"),
        (Focal::Week, &week_grid, "week"),
    ] {
        let (c, d) = marginal_effects(&model, focal, grid, &Reference::default())?;
        marg_diags.extend(d);
        curves.push((name, c));
    }

    let mut run = ctx.run_dir()?;
    run.write_json("model.json", &FittedModel::Glmm(model.clone()))?;
    run.write_json("split.json", &split)?;
    run.write_csv("wald.csv", &wald)?;
    run.write_csv(
        "random_effects.csv",
        export_random_effects(&model.fit)
            .into_iter()
            .map(|(segment, z)| EffectRow { segment, z }),
    )?;
    run.write_csv("test_predictions.csv", prediction_rows(&test, &test_p))?;
    for (name, cs) in &curves {
        let rows = cs.iter().flat_map(|c| {
            c.points.iter().map(move |p| CurveRow {
                x: p.x,
                y: p.p,
                series: c.day_type.as_str(),
                low: p.p_low,
                high: p.p_high,
            })
        });
        run.write_csv(&format!("marginal_{name}.csv"), rows)?;
    }
    run.write_json("marginal_diagnostics.json", &marg_diags)?;
    let dir = run.finish()?;
    Ok(format!(
        "fit-glmm: {} training rows, {} terms, sigma_z2 {:.4}, PVRE {:.1}% -> {}",
        train.len(),
        model.fit.beta.len(),
        model.fit.sigma_z2,
        100.0 * model.fit.pvre(),
        dir.display()
    ))
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    loglik: f64,
    best_so_far: f64,
}

fn cmd_fit_gmerf(ctx: &mut Ctx) -> Result<String> {
    let obs = read_observations(ctx)?;
    let split = make_split(ctx, &obs)?;
    let (train, test) = split.partition(&obs);
    let init = fit_glmm_model(&train, ctx)?;
    let model = GmerfModel::fit(&train, &init, &ctx.cfg.gmerf)?;
    let test_p = model.predict(&test)?;
    let mut best = f64::NEG_INFINITY;
    let trace: Vec<TraceRow> = model
        .fit
        .trace
        .iter()
        .enumerate()
        .map(|(i, &ll)| {
            best = best.max(ll);
            TraceRow {
                iteration: i + 1,
                loglik: ll,
                best_so_far: best,
            }
        })
        .collect();
    let mut run = ctx.run_dir()?;
    run.write_json("model.json", &FittedModel::Gmerf(model.clone()))?;
    run.write_json("split.json", &split)?;
    run.write_csv("trace.csv", trace)?;
    run.write_csv("test_predictions.csv", prediction_rows(&test, &test_p))?;
    let dir = run.finish()?;
    Ok(format!(
        "fit-gmerf: {} training rows, {} iterations (best {}), sigma_z2 {:.4}, PVRE {:.1}% -> {}",
        train.len(),
        model.fit.trace.len(),
        model.fit.best_iteration + 1,
        model.fit.sigma_z2,
        100.0 * model.fit.pvre(),
        dir.display()
    ))
}

#[derive(Serialize)]
struct CvRow {
    x: u8,
    y: Option<f64>,
    series: &'static str,
    failed_folds: usize,
}

fn cmd_select_degrees(ctx: &mut Ctx) -> Result<String> {
    let obs = read_observations(ctx)?;
    let split = make_split(ctx, &obs)?;
    let (train, _) = split.partition(&obs);
    let sel = select_degrees(&train, &ctx.cfg.model, &ctx.cfg.eval.degrees, &ctx.cfg.glmm)?;
    let rows = sel
        .slot_curve
        .iter()
        .map(|p| CvRow {
            x: p.slot_degree,
            y: p.mse,
            series: "time_slot",
            failed_folds: p.failed_folds,
        })
        .chain(sel.week_curve.iter().map(|p| CvRow {
            x: p.week_degree,
            y: p.mse,
            series: "week",
            failed_folds: p.failed_folds,
        }));
    let mut run = ctx.run_dir()?;
    run.write_csv("cv_curves.csv", rows)?;
    run.write_json("selection.json", &sel)?;
    let dir = run.finish()?;
    Ok(format!(
        "select-degrees: slot degree {}, week degree {} -> {}",
        sel.slot_degree,
        sel.week_degree,
        dir.display()
    ))
}

fn read_model(ctx: &mut Ctx) -> Result<FittedModel> {
    let p = ctx.cfg.require(&ctx.cfg.paths.model, "model")?.to_path_buf();
    ctx.input("model", &p)?;
    Ok(read_artifact::<FittedModel>(&p)?.data)
}

#[derive(Serialize)]
struct RocRow<'a> {
    x: f64,
    y: f64,
    series: &'a str,
    threshold: f64,
}

#[derive(Serialize)]
struct ConfusionRow {
    truth: u8,
    predicted: u8,
    count: usize,
    percent: f64,
}

#[derive(Serialize)]
struct EvaluationSummary<'a> {
    model: &'a str,
    n_test_rows: usize,
    n_test_rides: usize,
    auc: f64,
    accuracy: f64,
    threshold: f64,
    pvre: f64,
    confusion: &'a undercrowd_core::eval::Confusion,
}

fn cmd_evaluate(ctx: &mut Ctx) -> Result<String> {
    let model = read_model(ctx)?;
    let obs = read_observations(ctx)?;
    let split = match ctx.cfg.paths.split.clone() {
        Some(p) => {
            ctx.input("split", &p)?;
            read_artifact::<SplitPlan>(&p)?.data
        }
        None => make_split(ctx, &obs)?,
    };
    let (_, test) = split.partition(&obs);
    let probs = model.as_segment_model().predict(&test)?;
    let labels: Vec<u8> = test.iter().map(|o| o.y).collect();
    let rep = roc_report(&probs, &labels, ctx.cfg.eval.f)?;
    let kind = model.kind();
    let c = &rep.confusion;
    let pct = c.percentages();
    let confusion_rows = [
        (1, 1, c.true_positive, pct[0][0]),
        (1, 0, c.false_negative, pct[0][1]),
        (0, 1, c.false_positive, pct[1][0]),
        (0, 0, c.true_negative, pct[1][1]),
    ]
    .map(|(truth, predicted, count, percent)| ConfusionRow {
        truth,
        predicted,
        count,
        percent,
    });
    let summary = EvaluationSummary {
        model: kind,
        n_test_rows: test.len(),
        n_test_rides: test.iter().map(|o| o.ride_id).collect::<BTreeSet<_>>().len(),
        auc: rep.auc,
        accuracy: c.accuracy,
        threshold: ctx.cfg.eval.f,
        pvre: model.pvre(),
        confusion: c,
    };
    let mut run = ctx.run_dir()?;
    run.write_csv(
        "roc.csv",
        rep.points.iter().map(|p| RocRow {
            x: p.fpr,
            y: p.tpr,
            series: kind,
            threshold: p.threshold,
        }),
    )?;
    run.write_csv("confusion.csv", confusion_rows)?;
    run.write_json("evaluation.json", &summary)?;
    let dir = run.finish()?;
    Ok(format!(
        "evaluate: {kind} AUC {:.4}, accuracy {:.1}% on {} test rows -> {}",
        rep.auc,
        100.0 * c.accuracy,
        test.len(),
        dir.display()
    ))
}

#[derive(Serialize)]
struct LevelRow {
    p: f64,
    n_p: usize,
}

#[derive(Serialize)]
struct ProfileRow {
    ride_id: u32,
    date: chrono::NaiveDate,
    time_slot: u8,
    day_type: &'static str,
    week_number: u32,
    min_probability: f64,
}

#[derive(Serialize)]
struct RideReport {
    model: &'static str,
    n_rides: usize,
    reports: Vec<undercrowd_core::ride_analysis::DistributionReport>,
    diagnostics: Vec<Diagnostic>,
}

fn cmd_ride_report(ctx: &mut Ctx) -> Result<String> {
    let model = read_model(ctx)?;
    let obs = read_observations(ctx)?;
    let n_segments = obs.iter().map(|o| usize::from(o.segment)).max().unwrap_or(0);
    let (profiles, diagnostics) = profile_rides(model.as_segment_model(), &obs, n_segments)?;
    let step = ctx.cfg.ride_report.grid_step;
    let n_steps = (1.0 / step).round() as usize;
    let grid: Vec<f64> = (0..=n_steps).map(|i| (i as f64 * step).min(1.0)).collect();
    let curve = level_curve(&profiles, &grid)?;
    let reports: Vec<_> = ctx
        .cfg
        .ride_report
        .levels
        .iter()
        .map(|p| distribution_report(&profiles, *p))
        .collect();
    let summary = reports
        .iter()
        .map(|r| format!("n_{} = {}", r.p, r.n_p))
        .collect::<Vec<_>>()
        .join(", ");
    let mut run = ctx.run_dir()?;
    run.write_csv(
        "level_curve.csv",
        curve.grid.iter().zip(&curve.counts).map(|(p, n)| LevelRow { p: *p, n_p: *n }),
    )?;
    run.write_csv(
        "ride_profiles.csv",
        profiles.iter().map(|p| ProfileRow {
            ride_id: p.ride_id,
            date: p.date,
            time_slot: p.time_slot,
            day_type: p.day_type.as_str(),
            week_number: p.week_number,
            min_probability: p.min_probability,
        }),
    )?;
    run.write_json(
        "ride_report.json",
        &RideReport {
            model: model.kind(),
            n_rides: profiles.len(),
            reports,
            diagnostics,
        },
    )?;
    let dir = run.finish()?;
    Ok(format!(
        "ride-report: {} rides, {summary} -> {}",
        profiles.len(),
        dir.display()
    ))
}

#[derive(Serialize)]
struct ScenarioRow {
    segment: u16,
    probability: f64,
}

#[derive(Serialize)]
struct ScenarioOutput<'a> {
    model: &'static str,
    scenario: &'a ScenarioConfig,
    probabilities: Vec<f64>,
    diagnostics: Vec<Diagnostic>,
}

fn cmd_scenario(ctx: &mut Ctx) -> Result<String> {
    let model = read_model(ctx)?;
    let sc: ScenarioConfig = match ctx.cfg.paths.scenario.clone() {
        Some(p) => {
            ctx.input("scenario", &p)?;
            io::read_structured(&p)?
        }
        None => ctx
            .cfg
            .scenario
            .clone()
            .ok_or_else(|| AppError::Config(String::from("no scenario: add a [scenario] section or pass --scenario")))?,
    };
    let segments: Vec<u16> = sc.segments.clone().unwrap_or_else(|| model.groups().to_vec());
    let (probs, diagnostics) = scenario_predict(model.as_segment_model(), &sc.scenario, &segments)?;
    let mut run = ctx.run_dir()?;
    run.write_csv(
        "scenario.csv",
        segments.iter().zip(&probs).map(|(s, p)| ScenarioRow {
            segment: *s,
            probability: *p,
        }),
    )?;
    let n_diag = diagnostics.len();
    run.write_json(
        "scenario.json",
        &ScenarioOutput {
            model: model.kind(),
            scenario: &sc,
            probabilities: probs.clone(),
            diagnostics,
        },
    )?;
    let dir = run.finish()?;
    let min = probs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(format!(
        "scenario: {} segments, minimum probability {:.4}, {} warnings -> {}",
        segments.len(),
        min,
        n_diag,
        dir.display()
    ))
}
