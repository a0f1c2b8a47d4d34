//! `spinecycle` command-line front end.
//!
//! Exit status: 0 on success, 2 when a cycle finishes with anatomical
//! inconsistencies (report written), 1 on errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use serde::Deserialize;

use spinecycle::cycle::{run_cycle_traced, CycleConfig};
use spinecycle::graph::{build_graph, postprocess_transitional, shortest_path, GraphWeights, NodeEvidence};
use spinecycle::grid::{CompactMask, VolumeGrid, VoxelData};
use spinecycle::io::adapters::Oracles;
use spinecycle::io::manifest::write_manifest;
use spinecycle::io::{load_manifest, read_nrrd, read_stats, tables, write_nrrd, write_stats, Manifest, NrrdEncoding, OracleConfig};
use spinecycle::metrics::{evaluate, EvalVertebra, DEFAULT_MATCH_TOLERANCE_MM};
use spinecycle::model::{SpineState, VertebraLabel};
use spinecycle::phantom::{generate, local_predictions, Corruption, CorruptionKind, PhantomSpec};
use spinecycle::priors::{fit_stats, AnatomyStats};

#[derive(Parser, Debug)]
#[command(name = "spinecycle", version, about = "Vertebra localization and identification with anatomical consistency checks")]
struct Cli {
    /// TOML file with defaults (`[weights]`, `[evaluate]`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for everything random.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit anatomy priors from annotated scans.
    FitStats {
        /// Annotation table (scan_id, label, volume, centroid).
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label a column from per-vertebra probabilities with the graph only.
    Identify {
        /// Probability table, one row per vertebra, cranial first.
        #[arg(long)]
        probs: PathBuf,
        /// `default` or a TOML file of graph weights.
        #[arg(long, default_value = "default")]
        weights: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the consistency cycle described by a manifest.
    RunCycle {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Label maps (voxel value = label code) for Dice and Hausdorff.
        #[arg(long, requires = "truth_labelmap")]
        pred_labelmap: Option<PathBuf>,
        #[arg(long, requires = "pred_labelmap")]
        truth_labelmap: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic spine, its ground truth and a run manifest.
    Phantom {
        /// Comma-separated labels, cranial first (e.g. T11,T12,T13,L1).
        #[arg(long, value_delimiter = ',', required = true)]
        labels: Vec<String>,
        /// Probability of an in-group label confusion per vertebra.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// `kind` or `kind:index`; kinds: drop_mask, shift_location, blank_probability.
        #[arg(long)]
        corrupt: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    #[serde(default)]
    weights: Option<GraphWeights>,
    #[serde(default)]
    evaluate: EvalConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EvalConfig {
    tolerance_mm: f64,
    hd_percentile: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tolerance_mm: DEFAULT_MATCH_TOLERANCE_MM,
            hd_percentile: 100.0,
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .context("configuring worker threads")?;
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::FitStats { annotations, out } => {
            let scans = tables::read_annotations(&annotations)?;
            let stats = fit_stats(&scans)?;
            write_stats(&stats, &out)?;
            info!("fitted priors from {} scans", scans.len());
            Ok(0)
        }
        Command::Identify { probs, weights, out } => {
            let weights = match weights.as_str() {
                "default" => config.weights.unwrap_or_default(),
                path => {
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
                    toml::from_str(&text).with_context(|| format!("parsing {path}"))?
                }
            };
            let preds = tables::read_probabilities(&probs)?;
            let evidence: Vec<NodeEvidence> = preds.iter().map(NodeEvidence::from).collect();
            let path = shortest_path(&build_graph(&evidence, weights)?);
            let id = postprocess_transitional(&path);
            let labels: Vec<Option<VertebraLabel>> = id.labels.iter().copied().map(Some).collect();
            tables::write_labels(&out, &labels)?;
            for t in &id.transitions {
                info!("transitional configuration {:?} at position {}", t.kind, t.position);
            }
            Ok(0)
        }
        Command::RunCycle { manifest, out } => run_cycle_cmd(&manifest, &out),
        Command::Evaluate {
            pred,
            truth,
            pred_labelmap,
            truth_labelmap,
            out,
        } => {
            let load = |locs: &Path, map: Option<&Path>| -> Result<Vec<EvalVertebra>> {
                let grid = map.map(read_nrrd).transpose()?;
                let mut v = Vec::new();
                for r in tables::read_locations(locs)? {
                    let Some(label) = r.label else { continue };
                    let mask = match &grid {
                        Some(g) => {
                            let m = CompactMask::from_grid(&g.select_label(label.code() as i64)?)?;
                            (!m.is_empty()).then(|| Arc::new(m))
                        }
                        None => None,
                    };
                    v.push(EvalVertebra {
                        label,
                        location: r.location,
                        mask,
                    });
                }
                Ok(v)
            };
            let p = load(&pred, pred_labelmap.as_deref())?;
            let t = load(&truth, truth_labelmap.as_deref())?;
            let ec = &config.evaluate;
            let report = evaluate(&p, &t, ec.tolerance_mm, ec.hd_percentile)?;
            tables::write_metrics(&out, &report.rows)?;
            let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
            println!("id_rate\t{:.4}", report.id_rate);
            println!("mld_mm\t{}", opt(report.mld_mm));
            println!("dice\t{}", opt(report.mean_dice));
            println!("hausdorff_mm\t{}", opt(report.mean_hausdorff_mm));
            Ok(0)
        }
        Command::Phantom {
            labels,
            noise,
            corrupt,
            out,
        } => phantom_cmd(&labels, noise, &corrupt, cli.seed, &out),
    }
}

fn run_cycle_cmd(manifest: &Path, out: &Path) -> Result<u8> {
    let m = load_manifest(manifest)?;
    let stats = match &m.stats {
        Some(p) => read_stats(p)?,
        None => AnatomyStats::default(),
    };
    let ct = read_nrrd(&m.ct)?;
    let spine = read_nrrd(&m.spine_mask)?;
    let oracles = Oracles::from_manifest(&m, &ct)?;
    let (state, trace) = run_cycle_traced(&ct, &spine, &*oracles.segmentor, &*oracles.classifier, &stats, &m.cycle)?;
    for t in &trace {
        info!(
            "iteration {}: {} candidates, +{} records, {} total, consistent = {}",
            t.iteration, t.candidates, t.added, t.records, t.consistent
        );
    }
    write_state(&state, &ct, out)?;
    if state.report.is_empty() {
        println!("consistent after {} iteration(s)", trace.len());
        Ok(0)
    } else {
        for e in &state.report.entries {
            println!("{}\t{}", e.kind.as_str(), e.detail);
        }
        Ok(2)
    }
}

/// Locations, labels, probabilities, report and a label map under `out`.
fn write_state(state: &SpineState, ct: &VolumeGrid, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    tables::write_locations(&out.join("locations.tsv"), &state.records)?;
    tables::write_labels(&out.join("labels.tsv"), &state.labels())?;
    let probs: Vec<_> = state.records.iter().filter_map(|r| r.local.clone()).collect();
    if probs.len() == state.records.len() {
        tables::write_probabilities(&out.join("probabilities.tsv"), &probs)?;
    }
    tables::write_report(&out.join("report.tsv"), &state.report)?;
    let mut map = VolumeGrid::empty_mask(*ct.geometry());
    for r in &state.records {
        if let (Some(m), Some(l)) = (&r.mask, r.label) {
            m.paint_into(&mut map, l.code())?;
        }
    }
    write_nrrd(&map, &out.join("labelmap.nrrd"), NrrdEncoding::Gzip)?;
    Ok(())
}

fn parse_corruption(s: &str, n: usize, seed: u64) -> Result<Corruption> {
    let (kind, index) = match s.split_once(':') {
        Some((k, i)) => (k, Some(i.parse::<usize>().with_context(|| format!("bad vertebra index in `{s}`"))?)),
        None => (s, None),
    };
    let kind: CorruptionKind = kind.parse()?;
    Ok(match index {
        Some(i) => Corruption::new(kind, i),
        None => Corruption::seeded(kind, n, seed),
    })
}

fn phantom_cmd(labels: &[String], noise: f64, corrupt: &[String], seed: u64, out: &Path) -> Result<u8> {
    let labels: Vec<VertebraLabel> = labels.iter().map(|l| l.trim().parse()).collect::<Result<_, _>>()?;
    if labels.is_empty() {
        bail!("--labels must name at least one vertebra");
    }
    let spec = PhantomSpec::standard(labels, noise, seed)?;
    let n = spec.labels.len();
    let corruptions: Vec<Corruption> = corrupt.iter().map(|c| parse_corruption(c, n, seed)).collect::<Result<_>>()?;
    let mut p = generate(&spec)?;
    for c in &corruptions {
        p.corrupt(c)?;
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_nrrd(&p.ct, &out.join("ct.nrrd"), NrrdEncoding::Gzip)?;
    write_nrrd(&p.spine_mask, &out.join("spine_mask.nrrd"), NrrdEncoding::Gzip)?;
    tables::write_locations(&out.join("truth_locations.tsv"), &p.truth.records)?;
    tables::write_probabilities(&out.join("truth_probabilities.tsv"), &local_predictions(&spec))?;
    let mut map = VolumeGrid::new(*p.ct.geometry(), VoxelData::U8(vec![0; p.ct.geometry().voxel_count()]))?;
    for r in &p.truth.records {
        if let (Some(m), Some(l)) = (&r.mask, r.label) {
            m.paint_into(&mut map, l.code())?;
        }
    }
    write_nrrd(&map, &out.join("truth_labelmap.nrrd"), NrrdEncoding::Gzip)?;
    let manifest = Manifest {
        schema_version: spinecycle::io::MANIFEST_SCHEMA_VERSION,
        ct: "ct.nrrd".into(),
        spine_mask: "spine_mask.nrrd".into(),
        stats: None,
        oracle: OracleConfig::Phantom { spec, corruptions },
        cycle: CycleConfig::default(),
    };
    write_manifest(&manifest, &out.join("manifest.toml"))?;
    println!("{}", out.join("manifest.toml").display());
    Ok(0)
}
