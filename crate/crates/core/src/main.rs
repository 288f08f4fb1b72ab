use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use zphase_core::consensus::ZCenter;
use zphase_core::fixtures;
use zphase_core::geometry::{compute_zphase, interval_diameter_ratio, PhaseBinning};
use zphase_core::ingest::parse_manifest;
use zphase_core::matching::{Condition, RiskParams};
use zphase_core::report::{execute_audit, render_table, AuditConfig, OutputFormat, Table, TableValue};
use zphase_core::simulator::{phase_grid, sweep, SliceModel, SspShape, SweepConfig};
use zphase_core::stats::{BootstrapConfig, ResamplingUnit};
use zphase_core::{Error, Result};

#[derive(Parser)]
#[command(name = "zphase", version, about = "Slice-phase audit of CAD nodule sensitivity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: annotations, consensus, matching, stratified sensitivity.
    Audit(AuditArgs),
    /// Z-phase, phase bin and d/D for a list of nodule centres.
    Phase(PhaseArgs),
    /// Partial-volume detection sweep over d/D and phase.
    Simulate(SimulateArgs),
    /// Write the bundled reference-cohort input fixture.
    Fixtures(FixturesArgs),
}

#[derive(Args)]
struct AuditArgs {
    /// Directory of annotation XML files.
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Detection table per condition, as CONDITION=FILE (condition 1mm, 3mm or 5mm).
    #[arg(long = "detections", value_parser = parse_detection_arg, required = true)]
    detections: Vec<(Condition, PathBuf)>,
    #[arg(long, default_value_t = 15.0)]
    cluster_radius_mm: f64,
    #[arg(long, default_value_t = 4)]
    min_readers: usize,
    #[arg(long, default_value = "centroid")]
    z_center: ZCenter,
    #[arg(long, default_value_t = 15.0)]
    match_radius_mm: f64,
    #[arg(long, default_value_t = 0.5)]
    confidence_threshold: f64,
    #[arg(long, default_value_t = 5)]
    bins: usize,
    /// Bootstrap resamples; 0 disables intervals.
    #[arg(long, default_value_t = 2000)]
    resamples: usize,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    /// Bootstrap seed; required unless --resamples 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "nodule")]
    bootstrap_unit: ResamplingUnit,
    #[arg(long, default_value_t = 0.35)]
    risk_phase_threshold: f64,
    #[arg(long, default_value_t = 1.0)]
    risk_ratio_threshold: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
}

#[derive(Args)]
struct PhaseArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// CSV with columns series_id,x_mm,y_mm,z_mm and optional diameter_mm.
    #[arg(long)]
    nodules: PathBuf,
    #[arg(long, default_value_t = 5)]
    bins: usize,
    #[arg(long, default_value_t = 0.35)]
    risk_phase_threshold: f64,
    #[arg(long, default_value_t = 1.0)]
    risk_ratio_threshold: f64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 5.0)]
    interval: f64,
    /// Slice profile width; defaults to the interval.
    #[arg(long)]
    ssp_width: Option<f64>,
    #[arg(long, default_value = "rect")]
    ssp_shape: SspShape,
    /// Detection threshold as a fraction of the plane-centred signal.
    #[arg(long, default_value_t = 0.6)]
    threshold: f64,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.25, 0.5, 0.75, 1.0, 1.2, 1.5])]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    phase_step: f64,
    #[arg(long, default_value_t = 500)]
    n_per_cell: usize,
    #[arg(long, default_value_t = 0.05)]
    noise_sd: f64,
    #[arg(long)]
    seed: u64,
    /// Bootstrap resamples per cell; 0 disables intervals.
    #[arg(long, default_value_t = 0)]
    resamples: usize,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
}

#[derive(Args)]
struct FixturesArgs {
    #[arg(long)]
    out: PathBuf,
}

fn parse_detection_arg(s: &str) -> std::result::Result<(Condition, PathBuf), String> {
    let (cond, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected CONDITION=FILE, got {s:?}"))?;
    Ok((cond.parse::<Condition>().map_err(|e| e.to_string())?, PathBuf::from(path)))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Audit(a) => audit(a),
        Command::Phase(a) => phase(a),
        Command::Simulate(a) => simulate(a),
        Command::Fixtures(a) => write_fixtures(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn audit(a: AuditArgs) -> Result<()> {
    let seed = match (a.seed, a.resamples) {
        (Some(s), _) => s,
        (None, 0) => 0,
        (None, _) => return Err(Error::Config("--seed is required when --resamples > 0".into())),
    };
    let mut detections = BTreeMap::new();
    for (c, p) in a.detections {
        if detections.insert(c, p).is_some() {
            return Err(Error::Config(format!("detections for {c} given more than once")));
        }
    }
    let mut config = AuditConfig::new(a.annotations, a.manifest, detections, a.out, seed);
    config.cluster_radius_mm = a.cluster_radius_mm;
    config.min_readers = a.min_readers;
    config.z_center = a.z_center;
    config.match_radius_mm = a.match_radius_mm;
    config.confidence_threshold = a.confidence_threshold;
    config.risk_phase_threshold = a.risk_phase_threshold;
    config.risk_ratio_threshold = a.risk_ratio_threshold;
    config.analysis.bins = a.bins;
    config.analysis.resamples = a.resamples;
    config.analysis.ci_level = a.ci_level;
    config.analysis.bootstrap_unit = a.bootstrap_unit;
    config.format = a.format;
    let (report, files) = execute_audit(&config)?;
    log::info!("{} outcomes, {} files written", report.outcomes.len(), files.len());
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

#[derive(Deserialize)]
struct NoduleRow {
    series_id: String,
    x_mm: f64,
    y_mm: f64,
    z_mm: f64,
    #[serde(default)]
    diameter_mm: Option<f64>,
}

fn phase(a: PhaseArgs) -> Result<()> {
    let manifest = parse_manifest(&read(&a.manifest)?)?;
    let binning = PhaseBinning::new(a.bins)?;
    let risk = RiskParams {
        phase_threshold: a.risk_phase_threshold,
        ratio_threshold: a.risk_ratio_threshold,
    };
    let mut reader = csv::Reader::from_path(&a.nodules).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(&a.nodules, io),
        other => Error::Config(format!("{}: {other:?}", a.nodules.display())),
    })?;
    let mut table = Table {
        name: "phase",
        columns: vec!["row", "series_id", "condition", "x_mm", "y_mm", "z_mm", "zphase", "bin_center", "ratio", "risk_flag"],
        rows: Vec::new(),
    };
    for (row_index, row) in reader.deserialize::<NoduleRow>().enumerate() {
        let n = row?;
        let mut found = false;
        for m in manifest.iter().filter(|m| m.series_id == n.series_id) {
            found = true;
            let zphase = compute_zphase(n.z_mm, &m.geometry)?;
            let ratio = match n.diameter_mm {
                Some(d) if d > 0.0 => Some(interval_diameter_ratio(m.geometry.recon_interval_mm, d)?),
                _ => None,
            };
            table.rows.push(vec![
                TableValue::Count(row_index),
                TableValue::Text(n.series_id.clone()),
                TableValue::Text(m.condition.map_or_else(|| format!("{}mm", m.geometry.recon_interval_mm), |c| c.label().into())),
                TableValue::Number(n.x_mm),
                TableValue::Number(n.y_mm),
                TableValue::Number(n.z_mm),
                TableValue::Number(zphase.value()),
                TableValue::Number(binning.bin_phase(zphase).center),
                TableValue::opt(ratio),
                TableValue::Flag(risk.is_high_risk(ratio, zphase)),
            ]);
        }
        if !found {
            return Err(Error::Config(format!("no manifest geometry for series {}", n.series_id)));
        }
    }
    output(&table, a.format, a.out.as_deref())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let slice = SliceModel::new(a.interval, a.ssp_width.unwrap_or(a.interval), a.ssp_shape)?;
    let config = SweepConfig {
        phases: phase_grid(a.phase_step)?,
        ratios: a.ratios,
        slice,
        threshold: a.threshold,
        n_per_cell: a.n_per_cell,
        noise_sd: a.noise_sd,
        seed: a.seed,
        bootstrap: (a.resamples > 0).then(|| BootstrapConfig {
            resamples: a.resamples,
            level: a.ci_level,
            ..BootstrapConfig::new(a.seed)
        }),
    };
    let cells = sweep(&config)?;
    let table = Table {
        name: "sweep",
        columns: vec![
            "ratio",
            "phase",
            "diameter_mm",
            "clean_max_fraction",
            "detected",
            "total",
            "sensitivity",
            "mc_se",
            "ci_low",
            "ci_high",
        ],
        rows: cells
            .iter()
            .map(|c| {
                vec![
                    TableValue::Number(c.ratio),
                    TableValue::Number(c.phase),
                    TableValue::Number(c.diameter_mm),
                    TableValue::Number(c.clean_max_fraction),
                    TableValue::Count(c.detected),
                    TableValue::Count(c.total),
                    TableValue::Number(c.sensitivity()),
                    TableValue::Number(c.standard_error()),
                    TableValue::opt(c.ci.map(|ci| ci.0)),
                    TableValue::opt(c.ci.map(|ci| ci.1)),
                ]
            })
            .collect(),
    };
    output(&table, a.format, a.out.as_deref())
}

fn write_fixtures(a: FixturesArgs) -> Result<()> {
    let paths = fixtures::reference_cohort_bundle()?.write_to(&a.out)?;
    let expected = a.out.join("expected_counts.json");
    std::fs::write(&expected, fixtures::expected_counts_json()?).map_err(|e| Error::io(&expected, e))?;
    println!("{}", paths.annotations_dir.display());
    println!("{}", paths.manifest.display());
    for (_, p) in paths.detections {
        println!("{}", p.display());
    }
    println!("{}", expected.display());
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn output(table: &Table, format: OutputFormat, out: Option<&Path>) -> Result<()> {
    let text = render_table(table, format)?;
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(p, text).map_err(|e| Error::io(p, e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
