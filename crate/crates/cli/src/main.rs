//! Command-line front end: per-stage subcommands, end-to-end runs and sweeps
//! over a dataset of scenes, task descriptions and (fixture or HTTP) model
//! backends, with content-addressed caching of every stage artifact.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use funcseg3d::config::{BackendConfig, PipelineConfig};
use funcseg3d::functional_seg::build_point_query;
use funcseg3d::pipeline::{Engine, RunReport, SweepGrid};
use funcseg3d::scene::TaskRecord;
use funcseg3d::synth;
use funcseg3d::view_selection::SelectionConfig;

#[derive(Parser)]
#[command(
    name = "funcseg3d",
    about = "Language-driven 3D functionality segmentation over posed RGBD scenes",
    version
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Configuration file plus flag/env overrides. Flags win over the file.
#[derive(Args)]
struct Overrides {
    /// TOML or JSON configuration file.
    #[arg(long, global = true, env = "FUNCSEG3D_CONFIG")]
    config: Option<PathBuf>,

    /// Dataset root containing scenes/ and tasks.json.
    #[arg(long, global = true, env = "FUNCSEG3D_DATASET_ROOT")]
    dataset_root: Option<PathBuf>,

    /// Stage artifact cache directory.
    #[arg(long, global = true, env = "FUNCSEG3D_CACHE_DIR")]
    cache_dir: Option<PathBuf>,

    /// Replay canned responses from this fixture directory.
    #[arg(long, global = true, env = "FUNCSEG3D_FIXTURES")]
    fixtures: Option<PathBuf>,

    /// Base URL of the model services (switches to the HTTP backend).
    #[arg(long, global = true, env = "FUNCSEG3D_BASE_URL")]
    base_url: Option<String>,

    /// With the HTTP backend, record every response as a fixture here.
    #[arg(long, global = true)]
    record_fixtures: Option<PathBuf>,

    /// View budget (top-scoring views kept per task).
    #[arg(long, global = true)]
    views: Option<usize>,

    /// Heatmap threshold in [0, 1).
    #[arg(long, global = true)]
    tau: Option<f64>,

    /// Score weights as "m,d,a", e.g. "0.5,0.25,0.25" (normalized).
    #[arg(long, global = true, value_name = "M,D,A")]
    lambda: Option<String>,

    /// Worker threads for data-parallel stages.
    #[arg(long, global = true, env = "FUNCSEG3D_JOBS")]
    jobs: Option<usize>,

    /// Disable the stage cache (recompute everything).
    #[arg(long, global = true)]
    no_cache: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the bundled synthetic demo dataset, fixtures and config.
    GenFixtures {
        /// Output directory; receives dataset/, fixtures/, config.toml, grids/.
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse task descriptions into functional and contextual objects.
    Parse(TaskSelection),
    /// Rank views by contextual-object visibility and select the working set.
    Select(TaskSelection),
    /// Produce per-view functional-object masks on the selected views.
    Segment(TaskSelection),
    /// Lift 2D masks into the 3D heatmap and threshold the final mask.
    Lift {
        #[command(flatten)]
        tasks: TaskSelection,
        /// Also write the heatmap as a colored PLY next to the cache artifact.
        #[arg(long)]
        export_ply: Option<PathBuf>,
    },
    /// Run the pipeline as needed and print aggregate metrics.
    Eval(TaskSelection),
    /// Run end to end: parse, select, segment, lift, evaluate, report.
    Run {
        #[command(flatten)]
        tasks: TaskSelection,
        /// Write the full run report (JSON) here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write metrics as CSV here.
        #[arg(long)]
        metrics_csv: Option<PathBuf>,
    },
    /// Run a hyperparameter sweep from a grid file.
    Sweep {
        #[command(flatten)]
        tasks: TaskSelection,
        /// JSON grid: {"lambdas": [[m,d,a],...], "views": [...], "taus": [...]}.
        #[arg(long)]
        grid: PathBuf,
        /// Write the sweep table as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write (tau, mIoU) series per view budget as JSON here.
        #[arg(long)]
        emit_plot_data: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TaskSelection {
    /// Restrict to one scene.
    #[arg(long)]
    scene: Option<String>,

    /// Task file; defaults to <dataset_root>/tasks.json.
    #[arg(long)]
    task_file: Option<PathBuf>,
}

fn build_config(overrides: &Overrides) -> Result<PipelineConfig> {
    let mut config = match &overrides.config {
        Some(path) => PipelineConfig::from_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(root) = &overrides.dataset_root {
        config.dataset_root = root.clone();
    }
    if let Some(dir) = &overrides.cache_dir {
        config.cache_dir = dir.clone();
    }
    if let Some(dir) = &overrides.fixtures {
        config.backend = BackendConfig::Fixtures { dir: dir.clone() };
    }
    if let Some(url) = &overrides.base_url {
        let mut http = match &config.backend {
            BackendConfig::Http(http) => http.clone(),
            BackendConfig::Fixtures { .. } => Default::default(),
        };
        http.base_url = url.clone();
        config.backend = BackendConfig::Http(http);
    }
    if let Some(dir) = &overrides.record_fixtures {
        config.record_fixtures = Some(dir.clone());
    }
    if let Some(views) = overrides.views {
        config.selection.view_budget = views;
    }
    if let Some(tau) = overrides.tau {
        config.tau = tau;
    }
    if let Some(spec) = &overrides.lambda {
        let parts: Vec<f64> = spec
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("parsing --lambda {spec}"))?;
        if parts.len() != 3 {
            bail!("--lambda expects three comma-separated weights, got {spec}");
        }
        let normalized = SelectionConfig::with_weights(parts[0], parts[1], parts[2])?;
        config.selection.lambda_m = normalized.lambda_m;
        config.selection.lambda_d = normalized.lambda_d;
        config.selection.lambda_alpha = normalized.lambda_alpha;
    }
    if let Some(jobs) = overrides.jobs {
        config.jobs = Some(jobs);
    }
    if overrides.no_cache {
        config.cache_enabled = false;
    }
    config.validate()?;
    Ok(config)
}

fn load_tasks(engine: &Engine, selection: &TaskSelection) -> Result<Vec<TaskRecord>> {
    Ok(engine.load_tasks(selection.task_file.as_deref(), selection.scene.as_deref())?)
}

fn print_metrics(report: &RunReport) {
    println!("note: {}", report.protocol);
    println!(
        "tasks: {} completed, {} failed",
        report.completed, report.failed
    );
    match &report.metrics {
        Some(m) => {
            println!(
                "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
                "mAP", "AP50", "AP25", "mAR", "AR50", "AR25", "mIoU"
            );
            println!(
                "{:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
                m.map, m.ap50, m.ap25, m.mar, m.ar50, m.ar25, m.miou
            );
        }
        None => println!("no ground truth present; metrics skipped"),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenFixtures { out } => {
            let report = synth::generate(&out)?;
            println!(
                "generated {} scenes, {} views, {} tasks, {} cloud points, {} fixtures",
                report.scenes, report.views, report.tasks, report.points, report.fixtures
            );
            println!("dataset: {}", report.dataset_root.display());
            println!("fixtures: {}", report.fixture_dir.display());
            println!("config: {}", report.config_path.display());
            for grid in &report.grid_paths {
                println!("sweep grid: {}", grid.display());
            }
            println!(
                "next: funcseg3d --config {} run",
                report.config_path.display()
            );
            Ok(())
        }
        Command::Parse(selection) => {
            let engine = Engine::new(build_config(&cli.overrides)?)?;
            for task in load_tasks(&engine, &selection)? {
                let (parsed, digest) = engine.parse_stage(&task.description)?;
                println!("{}", serde_json::to_string_pretty(&parsed)?);
                log::info!("parse artifact {digest} for \"{}\"", task.description);
            }
            Ok(())
        }
        Command::Select(selection) => {
            let engine = Engine::new(build_config(&cli.overrides)?)?;
            for task in load_tasks(&engine, &selection)? {
                let scene = engine.scene(&task.scene_id)?;
                let (parsed, _) = engine.parse_stage(&task.description)?;
                let (artifact, digest) = engine.select_stage(&scene, &parsed.contextual_object)?;
                println!(
                    "task \"{}\": contextual object \"{}\", {} of {} views selected",
                    task.description,
                    parsed.contextual_object,
                    artifact.selected.len(),
                    artifact.scored.len()
                );
                println!("  selected: {}", artifact.selected.join(", "));
                println!("  artifact: {digest}");
            }
            Ok(())
        }
        Command::Segment(selection) => {
            let engine = Engine::new(build_config(&cli.overrides)?)?;
            for task in load_tasks(&engine, &selection)? {
                let scene = engine.scene(&task.scene_id)?;
                let (parsed, _) = engine.parse_stage(&task.description)?;
                let (select, select_digest) =
                    engine.select_stage(&scene, &parsed.contextual_object)?;
                let query = build_point_query(
                    &parsed.functional_object,
                    &task.description,
                    engine.config().query_without_description,
                );
                let (segment, digest) =
                    engine.segment_stage(&scene, &select, &select_digest, &query)?;
                println!(
                    "task \"{}\": {} views produced functional masks",
                    task.description,
                    segment.masks.len()
                );
                for mask in &segment.masks {
                    println!(
                        "  {}: {} px from {} prompt points",
                        mask.view_id,
                        mask.mask.area(),
                        mask.source_points.len()
                    );
                }
                println!("  artifact: {digest}");
            }
            Ok(())
        }
        Command::Lift { tasks, export_ply } => {
            let engine = Engine::new(build_config(&cli.overrides)?)?;
            for task in load_tasks(&engine, &tasks)? {
                let scene = engine.scene(&task.scene_id)?;
                let (parsed, _) = engine.parse_stage(&task.description)?;
                let (select, select_digest) =
                    engine.select_stage(&scene, &parsed.contextual_object)?;
                let query = build_point_query(
                    &parsed.functional_object,
                    &task.description,
                    engine.config().query_without_description,
                );
                let (segment, segment_digest) =
                    engine.segment_stage(&scene, &select, &select_digest, &query)?;
                let (heatmap, heatmap_digest) =
                    engine.heatmap_stage(&scene, &segment, &segment_digest)?;
                let (mask, mask_digest) = engine.mask_stage(&heatmap, &heatmap_digest)?;
                println!(
                    "task \"{}\": {} heatmap points, {} above tau {}",
                    task.description,
                    heatmap.raw_counts.len(),
                    mask.point_indices.len(),
                    mask.tau
                );
                println!("  heatmap artifact: {heatmap_digest}");
                println!("  mask artifact: {mask_digest}");
                if let Some(ply) = &export_ply {
                    let path = numbered_path(ply, &task);
                    engine.export_heatmap_ply(&scene, &heatmap, &path)?;
                    println!("  heatmap ply: {}", path.display());
                }
            }
            Ok(())
        }
        Command::Eval(selection) => {
            let engine = Engine::new(build_config(&cli.overrides)?)?;
            let tasks = load_tasks(&engine, &selection)?;
            let report = engine.run_tasks(&tasks)?;
            print_metrics(&report);
            if let Some(m) = &report.metrics {
                println!("csv:");
                println!("{}", funcseg3d::evaluation::AggregateMetrics::CSV_HEADER);
                println!("{}", m.csv_row());
            }
            Ok(())
        }
        Command::Run {
            tasks,
            report: report_path,
            metrics_csv,
        } => {
            let engine = Engine::new(build_config(&cli.overrides)?)?;
            let tasks = load_tasks(&engine, &tasks)?;
            let report = engine.run_tasks(&tasks)?;
            for task in &report.tasks {
                let status = match task.failed_stage.as_deref() {
                    None => "ok".to_string(),
                    Some(stage) => format!("FAILED at {stage}"),
                };
                println!(
                    "{} | {} | {} views | {} predicted points | {} ms | {}",
                    task.scene_id,
                    task.description,
                    task.selected_views.len(),
                    task.predicted_points,
                    task.timing_ms.get("total").copied().unwrap_or(0),
                    status
                );
            }
            print_metrics(&report);
            println!("run digest: {}", report.determinism_digest());
            if let Some(path) = report_path {
                std::fs::write(&path, serde_json::to_vec_pretty(&report)?)?;
                println!("report: {}", path.display());
            }
            if let (Some(path), Some(m)) = (metrics_csv, &report.metrics) {
                std::fs::write(
                    &path,
                    format!(
                        "{}\n{}\n",
                        funcseg3d::evaluation::AggregateMetrics::CSV_HEADER,
                        m.csv_row()
                    ),
                )?;
                println!("metrics csv: {}", path.display());
            }
            Ok(())
        }
        Command::Sweep {
            tasks,
            grid,
            out,
            emit_plot_data,
        } => {
            let engine = Engine::new(build_config(&cli.overrides)?)?;
            let tasks = load_tasks(&engine, &tasks)?;
            let grid = SweepGrid::from_file(&grid)?;
            let report = engine.sweep(&tasks, &grid)?;
            print!("{}", report.to_csv());
            if let Some(path) = out {
                std::fs::write(&path, report.to_csv())?;
                println!("sweep csv: {}", path.display());
            }
            if let Some(path) = emit_plot_data {
                std::fs::write(&path, serde_json::to_vec_pretty(&report.plot_data())?)?;
                println!("plot data: {}", path.display());
            }
            Ok(())
        }
    }
}

/// Derive a per-task output path from a base path.
fn numbered_path(base: &Path, task: &TaskRecord) -> PathBuf {
    let stem = base
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("heatmap");
    let slug: String = task
        .description
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .take(40)
        .collect();
    base.with_file_name(format!("{stem}_{}_{slug}.ply", task.scene_id))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
