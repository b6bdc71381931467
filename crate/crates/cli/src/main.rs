//! `tiltray`: run tray-tilting studies and analyze pose logs.

mod manifest;
mod output;
mod plot;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tiltray_core::dynamics::simulate_tilt_traced;
use tiltray_core::entropy::{rice_rule_trials, VoxelGrid};
use tiltray_core::experiment::{
    aggregate_trends, generate_sequence, run_experiment_with_workers, run_trial, sequence_to_toml, study_recipes,
    trend_slope, ExperimentConfig, ExperimentError, ExperimentSpec,
};
use tiltray_core::friction::{field_to_toml, generate_field, DEFAULT_GRID_N, DEFAULT_MU0};
use tiltray_core::geometry::Tray;
use tiltray_core::shapes::{self, shape_to_toml};

use manifest::{sha256_hex, unix_now, RunManifest};
use output::fmt_f;

#[derive(Debug)]
pub enum CliError {
    /// bad config, arguments or input data
    Validation(String),
    /// too many trials failed
    Budget(String),
    /// could not write results
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Budget(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Budget(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::FailureBudget { .. } => CliError::Budget(e.to_string()),
            e => CliError::Validation(e.to_string()),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

/// Writes to `out` or, when absent, to stdout.
fn emit(out: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_file(path, contents),
        None => {
            use std::io::Write;
            match std::io::stdout().lock().write_all(contents.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io(format!("writing stdout: {e}"))),
                _ => Ok(()),
            }
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "tiltray", version, about = "Tray-tilting simulator and pose-entropy analysis")]
struct Cli {
    /// Seed: overrides the master seed for `run`, seeds `gen field` and `gen sequence`
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for `run`, output file for the other commands
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for `run` (default: all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment(s) in a config file
    Run { config: PathBuf },
    /// Per-step entropy of a pose log (columns trial, step, x, y, theta)
    Entropy {
        poses: PathBuf,
        /// Voxel grid as `alpha x beta x gamma`
        #[arg(long, default_value = "4x4x4")]
        grid: String,
        /// Tray as `width x height` in meters
        #[arg(long, default_value = "0.2x0.2")]
        tray: String,
    },
    /// Generate shape, friction field, sequence or recipe files
    #[command(subcommand)]
    Gen(GenCommand),
    /// Plot one or more trend.csv files as SVG
    Plot {
        trends: Vec<PathBuf>,
        #[arg(long, default_value = "entropy trend")]
        title: String,
    },
    /// Trials suggested by the Rice rule for a number of voxels
    Ricerule {
        /// Total voxels (or use --grid)
        voxels: Option<usize>,
        #[arg(long)]
        grid: Option<String>,
    },
    /// Per-step state of one tilt of one trial, as CSV
    Trace {
        config: PathBuf,
        #[arg(long)]
        trial: usize,
        /// 1-based tilt number
        #[arg(long)]
        tilt: usize,
        /// Variant label when the config has several
        #[arg(long)]
        variant: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
enum GenCommand {
    /// A shipped shape preset (`allen-key`, `tri-01` .. `tri-15`)
    Shape {
        #[arg(long)]
        preset: String,
    },
    /// A friction field from a noise level or explicit amplitude
    Field(FieldArgs),
    /// A random tilt sequence
    Sequence {
        #[arg(long)]
        n: usize,
    },
    /// A study recipe config, e.g. `recipe_a_desk`
    Recipe { name: String },
}

#[derive(Args, Debug)]
struct FieldArgs {
    #[arg(long, conflicts_with = "amplitude")]
    level: Option<String>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MU0)]
    mu0: f64,
    #[arg(long, default_value_t = DEFAULT_GRID_N)]
    grid_n: usize,
    #[arg(long, default_value = "0.2x0.2")]
    tray: String,
}

fn parse_dims<const N: usize>(text: &str, what: &str) -> Result<[f64; N], CliError> {
    let parts: Vec<&str> = text.split(['x', 'X']).collect();
    let bad = || CliError::Validation(format!("bad {what} `{text}`"));
    if parts.len() != N {
        return Err(bad());
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| bad())?;
    }
    Ok(out)
}

fn parse_grid(text: &str, tray: Tray) -> Result<VoxelGrid, CliError> {
    let [a, b, c] = parse_dims::<3>(text, "grid")?;
    if [a, b, c].iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
        return Err(CliError::Validation(format!("bad grid `{text}`")));
    }
    VoxelGrid::new(tray.a, tray.b, a as usize, b as usize, c as usize).map_err(|e| CliError::Validation(e.to_string()))
}

fn parse_tray(text: &str) -> Result<Tray, CliError> {
    let [a, b] = parse_dims::<2>(text, "tray")?;
    Tray::new(a, b).map_err(|e| CliError::Validation(e.to_string()))
}

/// Reads and resolves a config file; `--seed` replaces its master seed.
fn load_config(path: &Path, seed: Option<u64>) -> Result<(Vec<u8>, ExperimentSpec, Vec<ExperimentConfig>), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Validation(format!("{} is not UTF-8", path.display())))?;
    let mut spec = ExperimentSpec::parse(&text)?;
    if let Some(seed) = seed {
        spec.master_seed = seed;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let configs = spec.resolve(base)?;
    Ok((bytes, spec, configs))
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn cmd_run(cli: &Cli, config_path: &Path) -> Result<(), CliError> {
    let started = unix_now();
    let (bytes, spec, configs) = load_config(config_path, cli.seed)?;
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out_dir).map_err(|e| CliError::Io(format!("creating {}: {e}", out_dir.display())))?;
    let workers = cli.workers.unwrap_or_else(default_workers);
    let mut manifest = RunManifest {
        command: "run".into(),
        config_path: config_path.display().to_string(),
        config_sha256: sha256_hex(&bytes),
        master_seed: spec.master_seed,
        workers,
        started,
        experiments: Vec::new(),
        outputs: Vec::new(),
    };
    let result = run_configs(&configs, &out_dir, workers, &mut manifest);
    let (status, message) = match &result {
        Ok(()) => (0, None),
        Err(e) => (i32::from(e.exit_code()), Some(e.to_string())),
    };
    manifest
        .write(&out_dir, status, message.as_deref())
        .map_err(|e| CliError::Io(format!("writing manifest in {}: {e}", out_dir.display())))?;
    result
}

fn run_configs(
    configs: &[ExperimentConfig],
    out_dir: &Path,
    workers: usize,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    let nested = configs.len() > 1;
    let mut summary = String::from("label,H0_bits,final_H_bits,convergence_step,slope,unsettled_tilts,failed_trials\n");
    let mut trends = Vec::new();
    for config in configs {
        log::info!("running {} ({} trials x {} tilts)", config.label, config.trials, config.sequence.len());
        let result = run_experiment_with_workers(config, workers)?;
        let rel = |name: &str| if nested { format!("{}/{name}", config.label) } else { name.to_string() };
        for (name, text) in [
            ("trend.csv", output::trend_csv(&result.trend)),
            ("trials.csv", output::trials_csv(&result.records)),
        ] {
            write_file(&out_dir.join(rel(name)), &text)?;
            manifest.outputs.push(rel(name));
        }
        let h = &result.trend.h_bits;
        let conv = result.trend.convergence_index();
        manifest.experiments.push(json!({
            "label": config.label,
            "trials": config.trials,
            "tilts": config.sequence.len(),
            "sequence_seed": config.sequence.seed(),
            "failed_trials": result.failures.iter().map(|f| json!({"index": f.index, "message": f.message})).collect::<Vec<_>>(),
            "unsettled_tilts": result.unsettled_tilts(),
            "max_penetration_m": result.max_penetration(),
            "clamped_friction_nodes": config.field.clamped_nodes(),
            "final_H_bits": result.trend.final_bits(),
            "convergence_step": conv,
        }));
        summary.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            config.label,
            fmt_f(h[0]),
            fmt_f(result.trend.final_bits()),
            conv.map_or(String::new(), |c| c.to_string()),
            fmt_f(trend_slope(h)),
            result.unsettled_tilts(),
            result.failures.len()
        ));
        trends.push(h.clone());
    }
    if nested {
        let agg = aggregate_trends(&trends)?;
        let mut text = String::from("step,mean_H_bits,q25_H_bits,q75_H_bits\n");
        for i in 0..agg.mean.len() {
            text.push_str(&format!("{i},{},{},{}\n", fmt_f(agg.mean[i]), fmt_f(agg.q25[i]), fmt_f(agg.q75[i])));
        }
        let svg = plot::render_svg(&configs[0].label, &trends).map_err(CliError::Validation)?;
        for (name, contents) in [("summary.csv", &summary), ("aggregate.csv", &text), ("trends.svg", &svg)] {
            write_file(&out_dir.join(name), contents)?;
            manifest.outputs.push(name.to_string());
        }
    }
    Ok(())
}

fn cmd_entropy(cli: &Cli, poses: &Path, grid: &str, tray: &str) -> Result<(), CliError> {
    let tray = parse_tray(tray)?;
    let grid = parse_grid(grid, tray)?;
    let log = output::read_pose_log(poses)?;
    let trend = output::trend_from_pose_log(&log, &grid)?;
    emit(cli.out.as_deref(), &output::trend_csv(&trend))
}

fn cmd_gen(cli: &Cli, gen: &GenCommand) -> Result<(), CliError> {
    let seed = cli.seed.unwrap_or(0);
    let text = match gen {
        GenCommand::Shape { preset } => {
            shape_to_toml(&shapes::preset(preset).map_err(|e| CliError::Validation(e.to_string()))?)
        }
        GenCommand::Field(args) => {
            let tray = parse_tray(&args.tray)?;
            let amplitude = match (&args.level, args.amplitude) {
                (Some(level), None) => {
                    let level: tiltray_core::friction::NoiseLevel =
                        level.parse().map_err(|e: tiltray_core::friction::FrictionError| CliError::Validation(e.to_string()))?;
                    level.amplitude()
                }
                (None, Some(a)) => a,
                _ => return Err(CliError::Validation("give --level or --amplitude".into())),
            };
            let field = generate_field(args.mu0, amplitude, args.grid_n, seed, tray)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            field_to_toml(&field)
        }
        GenCommand::Sequence { n } => sequence_to_toml(&generate_sequence(*n, seed)?),
        GenCommand::Recipe { name } => study_recipes()
            .into_iter()
            .find(|(key, _)| key == name)
            .map(|(_, spec)| spec.to_toml())
            .ok_or_else(|| {
                let names: Vec<String> = study_recipes().into_iter().map(|(k, _)| k).collect();
                CliError::Validation(format!("unknown recipe `{name}` (one of {})", names.join(", ")))
            })?,
    };
    emit(cli.out.as_deref(), &text)
}

fn cmd_plot(cli: &Cli, trends: &[PathBuf], title: &str) -> Result<(), CliError> {
    if trends.is_empty() {
        return Err(CliError::Validation("plot needs at least one trend file".into()));
    }
    let data = trends
        .iter()
        .map(|p| output::read_trend_bits(p))
        .collect::<Result<Vec<_>, _>>()?;
    let svg = plot::render_svg(title, &data).map_err(CliError::Validation)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("trend.svg"));
    write_file(&out, &svg)
}

fn cmd_ricerule(voxels: Option<usize>, grid: Option<&str>) -> Result<(), CliError> {
    let total = match (voxels, grid) {
        (Some(v), None) if v > 0 => v,
        (None, Some(g)) => parse_grid(g, Tray::square_200mm())?.total_voxels(),
        _ => return Err(CliError::Validation("give a positive voxel count or --grid".into())),
    };
    let rule = rice_rule_trials(total);
    println!("voxels {total}: M = {} (unrounded {})", rule.trials, rule.unrounded);
    Ok(())
}

fn cmd_trace(cli: &Cli, config: &Path, trial: usize, tilt: usize, variant: Option<&str>) -> Result<(), CliError> {
    let (_, _, configs) = load_config(config, cli.seed)?;
    let config = match variant {
        Some(label) => configs
            .iter()
            .find(|c| c.label == label)
            .ok_or_else(|| CliError::Validation(format!("no variant `{label}`")))?,
        None if configs.len() == 1 => &configs[0],
        None => return Err(CliError::Validation("config has several variants; pick one with --variant".into())),
    };
    if trial >= config.trials || tilt == 0 || tilt > config.sequence.len() {
        return Err(CliError::Validation(format!(
            "trial must be below {} and tilt in 1..={}",
            config.trials,
            config.sequence.len()
        )));
    }
    let record = run_trial(config, trial)?;
    let part = config.part()?;
    let mut text = String::from("t,x,y,theta,vx,vy,omega,penetration\n");
    simulate_tilt_traced(
        &part,
        record.poses[tilt - 1],
        &config.sequence.actions()[tilt - 1],
        &config.field,
        &config.tray,
        &config.params,
        |row| {
            let s = &row.state;
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                fmt_f(row.t),
                fmt_f(s.pose.x),
                fmt_f(s.pose.y),
                fmt_f(s.pose.theta),
                fmt_f(s.vel.x),
                fmt_f(s.vel.y),
                fmt_f(s.omega),
                fmt_f(row.penetration)
            ));
        },
    )
    .map_err(|e| CliError::Validation(e.to_string()))?;
    emit(cli.out.as_deref(), &text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    let result = match &cli.command {
        Command::Run { config } => cmd_run(&cli, config),
        Command::Entropy { poses, grid, tray } => cmd_entropy(&cli, poses, grid, tray),
        Command::Gen(gen) => cmd_gen(&cli, gen),
        Command::Plot { trends, title } => cmd_plot(&cli, trends, title),
        Command::Ricerule { voxels, grid } => cmd_ricerule(*voxels, grid.as_deref()),
        Command::Trace {
            config,
            trial,
            tilt,
            variant,
        } => cmd_trace(&cli, config, *trial, *tilt, variant.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
