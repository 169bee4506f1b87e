use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pdedisc::data::{
    grid_samples, ingest_csv, ingest_samples, linspace, read_samples_csv, sample_dataset, sensor_dataset, write_samples_csv, CollocationSet,
    DomainSpec, Generator, ManufacturedHeat, Sample, SensorLayout, SyntheticWave, TrainingData,
};
use pdedisc::discovery::{discover, load_run, load_solution, DiscoverOptions, DiscoveryProblem};
use pdedisc::network::{Checkpoint, MlpParams};
use pdedisc::recurrent::{write_predictions_csv, Measurements, RpModel};
use pdedisc::selection::{write_report, DiscoveryReport};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SourceKind, SCHEMA_VERSION};
use crate::CliError;

/// Data sets built from a config.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: TrainingData,
    pub colloc: CollocationSet,
    pub test: Vec<Sample>,
    /// Every sensor row, for sensor-based sources.
    pub sensor_rows: Option<(Vec<Sample>, SensorLayout)>,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn wave_sensors(cfg: &RunConfig, gen: &SyntheticWave) -> Result<(Vec<Sample>, SensorLayout), CliError> {
    let s = cfg.sensors();
    let dom = gen.domain();
    let xs = linspace(dom.x_range.0, dom.x_range.1, s.count);
    let rows = sensor_dataset(gen, &xs, s.readings, cfg.data.noise_sd, cfg.seed)?;
    Ok((rows, SensorLayout::from_positions(&xs, s.held_out)?))
}

/// Generates or ingests the data sets described by `cfg` (seeded by `cfg.seed`).
pub fn build_datasets(cfg: &RunConfig) -> Result<Datasets, CliError> {
    let d = &cfg.data;
    match d.kind {
        SourceKind::Heat => {
            let gen = ManufacturedHeat::new(cfg.heat())?;
            let (train, colloc) = sample_dataset(&gen.domain(), &gen, d.samples, d.noise_sd, cfg.seed)?;
            Ok(Datasets {
                train,
                colloc,
                test: grid_samples(&gen, d.test_grid[0], d.test_grid[1]),
                sensor_rows: None,
            })
        }
        SourceKind::Wave => {
            let gen = SyntheticWave::new(cfg.wave())?;
            let (rows, layout) = wave_sensors(cfg, &gen)?;
            let (train, held) = ingest_samples(&rows, &layout)?;
            Ok(Datasets {
                colloc: CollocationSet::from_training(&train),
                train,
                test: held.samples(),
                sensor_rows: Some((rows, layout)),
            })
        }
        SourceKind::Csv => {
            let src = d.csv.as_ref().ok_or_else(|| CliError::Config("missing [data.csv] table".into()))?;
            let layout = SensorLayout::load(&src.layout)?;
            let (train, held) = ingest_csv(&src.path, &layout)?;
            Ok(Datasets {
                colloc: CollocationSet::from_training(&train),
                train,
                test: held.samples(),
                sensor_rows: None,
            })
        }
    }
}

pub fn build_problem(cfg: &RunConfig) -> Result<DiscoveryProblem, CliError> {
    let data = build_datasets(cfg)?;
    Ok(DiscoveryProblem {
        train: data.train,
        colloc: data.colloc,
        test: data.test,
        library: cfg.library.clone(),
        net_u: cfg.network_u.network(cfg.seed),
        net_g: cfg.network_g.network(cfg.seed),
        train_config: pdedisc::trainer::TrainConfig {
            seed: cfg.seed,
            ..cfg.train
        },
        rp: cfg.rp,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub train_rows: usize,
    pub test_rows: usize,
    pub files: Vec<String>,
}

/// Writes `train.csv`, `test.csv` (plus `sensors.csv` and `layout.json` for
/// sensor sources) and `manifest.json` into `out`.
pub fn generate_data(cfg: &RunConfig, out: &Path) -> Result<DataManifest, CliError> {
    if cfg.data.kind == SourceKind::Csv {
        return Err(CliError::Config("a csv data source has nothing to generate".into()));
    }
    let data = build_datasets(cfg)?;
    create_dir(out)?;
    let mut files = vec!["train.csv".to_string(), "test.csv".to_string()];
    write_samples_csv(&out.join("train.csv"), &data.train.samples())?;
    write_samples_csv(&out.join("test.csv"), &data.test)?;
    if let Some((rows, layout)) = &data.sensor_rows {
        write_samples_csv(&out.join("sensors.csv"), rows)?;
        let text = serde_json::to_string_pretty(layout).map_err(|e| CliError::Data(e.to_string()))?;
        write_text(&out.join("layout.json"), &text)?;
        files.push("sensors.csv".into());
        files.push("layout.json".into());
    }
    let manifest = DataManifest {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        train_rows: data.train.len(),
        test_rows: data.test.len(),
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Data(e.to_string()))?;
    write_text(&out.join("manifest.json"), &text)?;
    Ok(manifest)
}

/// Run-level metadata stored as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub domain: DomainSpec,
    pub winner_mask: Option<u32>,
    pub winner: Option<String>,
}

fn read_run_manifest(out: &Path) -> Result<RunManifest, CliError> {
    let path = out.join("run.json");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e} (not a run directory?)", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_run_manifest(out: &Path, manifest: &RunManifest) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| CliError::Data(e.to_string()))?;
    write_text(&out.join("run.json"), &text)
}

/// Trains every combination and writes the report into `out`.
///
/// With `resume`, finished combinations found in `out` are reused; the run
/// directory must belong to the same config and seed.
pub fn run_discover(cfg: &RunConfig, out: &Path, parallel: usize, resume: bool) -> Result<DiscoveryReport, CliError> {
    if parallel == 0 {
        return Err(CliError::Config("--parallel must be >= 1".into()));
    }
    let problem = build_problem(cfg)?;
    create_dir(out)?;
    let hash = cfg.hash();
    if resume {
        if let Ok(previous) = read_run_manifest(out) {
            if previous.config_hash != hash {
                return Err(CliError::Config(format!(
                    "{} was produced by a different config (hash {}); refusing to resume",
                    out.display(),
                    previous.config_hash
                )));
            }
        }
    }
    let mut manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        config_hash: hash,
        domain: *problem.train.domain(),
        winner_mask: None,
        winner: None,
    };
    write_run_manifest(out, &manifest)?;
    let config_text = toml::to_string(cfg).map_err(|e| CliError::Config(e.to_string()))?;
    write_text(&out.join("config.toml"), &config_text)?;

    let opts = DiscoverOptions {
        parallel,
        out_dir: Some(out.to_path_buf()),
        resume,
    };
    let report = discover(&problem, &opts)?;
    write_report(out, &report)?;
    let winner = report.winner();
    manifest.winner_mask = Some(winner.mask());
    manifest.winner = Some(winner.combination.label());
    write_run_manifest(out, &manifest)?;

    if let Some(rel) = &winner.checkpoint_rp {
        let model = RpModel::load(&out.join(rel))?;
        let measurements = Measurements::from_samples(&problem.train.samples());
        let points: Vec<(f64, f64)> = problem.test.iter().map(|s| (s.x, s.t)).collect();
        let (values, provenance) = model.predict(&points, &measurements)?;
        write_predictions_csv(&out.join("winner_rp_predictions.csv"), &points, &values, &provenance)?;
    }
    Ok(report)
}

/// Rebuilds the report files of a run directory from its candidate records.
pub fn run_report(out: &Path) -> Result<DiscoveryReport, CliError> {
    let report = load_run(out)?;
    write_report(out, &report)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct PredictRequest {
    /// Explicit solution checkpoint; defaults to the run's winner.
    pub checkpoint: Option<PathBuf>,
    pub grid: (usize, usize),
    /// `x,t,u` file of extra query points (`u` ignored).
    pub points: Option<PathBuf>,
    pub snapshots: Vec<f64>,
}

impl Default for PredictRequest {
    fn default() -> Self {
        Self {
            checkpoint: None,
            grid: (100, 100),
            points: None,
            snapshots: vec![3.0, 7.0],
        }
    }
}

fn predictions_text(params: &MlpParams, points: &[(f64, f64)]) -> Result<String, CliError> {
    let mut s = String::from("x,t,u_hat\n");
    for &(x, t) in points {
        let v = params.forward(&[x, t])?;
        let _ = writeln!(s, "{x},{t},{v}");
    }
    Ok(s)
}

/// Points of a snapshot slice at time `t`.
pub fn snapshot_points(domain: &DomainSpec, nx: usize, t: f64) -> Vec<(f64, f64)> {
    linspace(domain.x_range.0, domain.x_range.1, nx)
        .into_iter()
        .map(|x| (x, t))
        .collect()
}

pub fn snapshot_file_name(t: f64) -> String {
    format!("snapshot_t{t}.csv")
}

/// Writes `predictions.csv` on the grid, one `snapshot_t<t>.csv` per
/// snapshot time and `points_predictions.csv` for extra query points.
pub fn run_predict(out: &Path, req: &PredictRequest) -> Result<Vec<PathBuf>, CliError> {
    let manifest = read_run_manifest(out)?;
    let params = match &req.checkpoint {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Data(format!("checkpoint {} does not exist", path.display())));
            }
            Checkpoint::load(path)?.into_params()?
        }
        None => {
            let report = load_run(out)?;
            load_solution(out, report.winner())?
        }
    };
    let domain = manifest.domain;
    let (nx, nt) = req.grid;
    if nx < 2 || nt < 2 {
        return Err(CliError::Config("prediction grid needs at least 2 points per axis".into()));
    }
    let mut written = Vec::new();
    let path = out.join("predictions.csv");
    write_text(&path, &predictions_text(&params, &domain.grid(nx, nt))?)?;
    written.push(path);
    for &t in &req.snapshots {
        if !(t >= domain.t_range.0 && t <= domain.t_range.1) {
            return Err(CliError::Config(format!(
                "snapshot time {t} outside [{}, {}]",
                domain.t_range.0, domain.t_range.1
            )));
        }
        let path = out.join(snapshot_file_name(t));
        write_text(&path, &predictions_text(&params, &snapshot_points(&domain, nx, t))?)?;
        written.push(path);
    }
    if let Some(p) = &req.points {
        let rows = read_samples_csv(p)?;
        let pts: Vec<(f64, f64)> = rows.iter().map(|s| (s.x, s.t)).collect();
        let path = out.join("points_predictions.csv");
        write_text(&path, &predictions_text(&params, &pts)?)?;
        written.push(path);
    }
    Ok(written)
}
