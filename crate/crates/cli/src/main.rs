use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sherd::boundary::{extract_boundary_geometric, extract_boundary_with_index, mask_candidate_filter, BoundarySet, CameraDocument};
use sherd::config::PipelineConfig;
use sherd::contour::{extract_scan_contour, ContourDocument};
use sherd::geom::apply_transform;
use sherd::matching::{align_contours, descriptor_distance, lift_contour, match_batches, ShiftSearch};
use sherd::metrics::report_csv;
use sherd::pipeline::{self, align_and_evaluate, load_scan, scan_id, AssignmentEntry, PipelineInputs, Scan};
use sherd::ply::{self, Encoding};
use sherd::registration::bbicp_with_indices;
use sherd::synth::{generate_batch, SpecRanges};
use sherd::{NeighborIndex, PointCloud, RigidTransform};

/// Pair front and back scans of flat-lying fragments and register each pair
/// into a complete model.
#[derive(Parser)]
#[command(name = "sherd", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for synthetic generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 uses every core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Directory for output files; single-scan commands print to stdout without it.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args, Default)]
struct ConfigOverrides {
    /// Contour samples per scan.
    #[arg(long, global = true)]
    n_c: Option<usize>,
    /// How contour correspondences seed the initial pose.
    #[arg(long, global = true, value_enum)]
    shift_search: Option<ShiftSearchArg>,
    /// Alpha radius as a multiple of the median point spacing.
    #[arg(long, global = true)]
    alpha_spacing_factor: Option<f64>,
    #[arg(long, global = true)]
    alpha_min: Option<f64>,
    #[arg(long, global = true)]
    alpha_max: Option<f64>,
    /// Neighbors per boundary test.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Angular gap in radians marking a boundary point.
    #[arg(long, global = true)]
    gap_threshold: Option<f64>,
    /// Maximum pixel distance to the mask contour for boundary candidates.
    #[arg(long, global = true)]
    pixel_threshold: Option<f64>,
    /// Registration iteration limit.
    #[arg(long, global = true)]
    max_iterations: Option<usize>,
    #[arg(long, global = true)]
    convergence_tol: Option<f64>,
    /// Fixed correspondence rejection distance in mm.
    #[arg(long, global = true)]
    reject_distance: Option<f64>,
    /// Adaptive rejection distance as a multiple of the median pair distance.
    #[arg(long, global = true)]
    reject_median_factor: Option<f64>,
    #[arg(long, global = true)]
    min_correspondences: Option<usize>,
    /// Completeness threshold in mm.
    #[arg(long, global = true)]
    completeness_threshold: Option<f64>,
    /// Percentile of reconstruction distances reported as accuracy.
    #[arg(long, global = true)]
    accuracy_percentile: Option<f64>,
    /// Score reconstructions as given, without trimmed-ICP refinement.
    #[arg(long, global = true)]
    no_eval_align: bool,
    #[arg(long, global = true)]
    eval_trim_fraction: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShiftSearchArg {
    Descriptor,
    Exhaustive,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Acceptance,
    Adversarial,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic batch with ground truth.
    GenSynth {
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, value_enum, default_value = "acceptance")]
        preset: Preset,
    },
    /// Extract the outline contour and descriptor of one scan.
    ExtractContour { scan: PathBuf },
    /// Pair a directory of front scans with a directory of back scans.
    Match { front_dir: PathBuf, back_dir: PathBuf },
    /// Extract the boundary point set of one scan.
    ExtractBoundary {
        scan: PathBuf,
        /// Camera metadata; defaults to `<stem>.cameras.json` next to the scan.
        #[arg(long)]
        cameras: Option<PathBuf>,
    },
    /// Register a back scan onto a front scan.
    Register {
        front: PathBuf,
        back: PathBuf,
        /// Initial transform JSON; defaults to the contour alignment.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        front_boundary: Option<PathBuf>,
        #[arg(long)]
        back_boundary: Option<PathBuf>,
    },
    /// Score reconstructions against ground-truth models.
    Evaluate {
        /// Reconstructed model, or a directory of them.
        recon: PathBuf,
        /// Ground-truth model, or a directory with files named like the reconstructions.
        gt: PathBuf,
    },
    /// Run the full batch pipeline.
    Pipeline {
        front_dir: PathBuf,
        back_dir: PathBuf,
        /// Ground-truth models named after the front scans.
        #[arg(long)]
        gt_dir: Option<PathBuf>,
    },
}

fn resolve_config(global: &GlobalArgs) -> Result<PipelineConfig> {
    let mut c = match &global.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    let o = &global.overrides;
    macro_rules! set {
        ($field:expr, $value:expr) => {
            if let Some(v) = $value {
                $field = v;
            }
        };
    }
    set!(c.seed, global.seed);
    set!(c.jobs, global.jobs);
    set!(c.n_c, o.n_c);
    set!(
        c.shift_search,
        o.shift_search.map(|s| match s {
            ShiftSearchArg::Descriptor => ShiftSearch::Descriptor,
            ShiftSearchArg::Exhaustive => ShiftSearch::Exhaustive,
        })
    );
    set!(c.alpha.spacing_factor, o.alpha_spacing_factor);
    set!(c.alpha.min_alpha, o.alpha_min);
    set!(c.alpha.max_alpha, o.alpha_max);
    set!(c.boundary.k, o.k);
    set!(c.boundary.gap_threshold, o.gap_threshold);
    set!(c.boundary.pixel_threshold, o.pixel_threshold);
    set!(c.bbicp.max_iterations, o.max_iterations);
    set!(c.bbicp.convergence_tol, o.convergence_tol);
    if o.reject_distance.is_some() {
        c.bbicp.correspondence_reject_distance = o.reject_distance;
    }
    set!(c.bbicp.reject_median_factor, o.reject_median_factor);
    set!(c.bbicp.min_correspondences, o.min_correspondences);
    set!(c.evaluation.completeness_threshold, o.completeness_threshold);
    set!(c.evaluation.accuracy_percentile, o.accuracy_percentile);
    set!(c.evaluation.align_trim_fraction, o.eval_trim_fraction);
    if o.no_eval_align {
        c.evaluation.align = false;
    }
    c.validate()?;
    Ok(c)
}

/// Writes `text` to `<out_dir>/<name>` or, without an output directory, to stdout.
fn emit(out: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(name);
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load(path: &Path) -> Result<Scan> {
    load_scan(path).with_context(|| format!("loading {}", path.display()))
}

fn boundary_of(scan: &Scan, index: &NeighborIndex, config: &PipelineConfig) -> Result<BoundarySet> {
    let b = &config.boundary;
    let set = match &scan.views {
        Some(views) => {
            let candidates = mask_candidate_filter(&scan.cloud, views, b.pixel_threshold)?;
            extract_boundary_with_index(&scan.cloud, index, &candidates, b.k, b.gap_threshold)?
        }
        None => extract_boundary_geometric(&scan.cloud, b.k, b.gap_threshold)?,
    };
    Ok(set)
}

fn gen_synth(n: usize, preset: Preset, config: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let ranges = match preset {
        Preset::Default => SpecRanges::default(),
        Preset::Acceptance => SpecRanges::acceptance(),
        Preset::Adversarial => SpecRanges::adversarial(),
    };
    let dir = out.unwrap_or(Path::new("synth"));
    let batch = generate_batch(n, config.seed, &ranges)?;
    let manifest = pipeline::write_synthetic_batch(&batch, dir)?;
    eprintln!(
        "wrote {} fragments (seed {}) to {}",
        manifest.front.len(),
        config.seed,
        dir.display()
    );
    Ok(())
}

fn extract_contour(scan: &Path, config: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let scan = load(scan)?;
    let c = extract_scan_contour(&scan.cloud, config.n_c, &config.alpha)?;
    let doc = ContourDocument::new(&c.contour, &c.descriptor, c.alpha);
    emit(out, &format!("{}.contour.json", scan.id), &(serde_json::to_string_pretty(&doc)? + "\n"))
}

fn match_dirs(front_dir: &Path, back_dir: &Path, config: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let contours = |dir: &Path| -> Result<Vec<(String, sherd::contour::ShapeDescriptor)>> {
        pipeline::list_scans(dir)?
            .iter()
            .map(|p| {
                let cloud = ply::read(p)?;
                let c = extract_scan_contour(&cloud, config.n_c, &config.alpha)
                    .with_context(|| format!("contour of {}", p.display()))?;
                Ok((scan_id(p), c.descriptor))
            })
            .collect()
    };
    let front = contours(front_dir)?;
    let back = contours(back_dir)?;
    let fd: Vec<_> = front.iter().map(|(_, d)| d.clone()).collect();
    let bd: Vec<_> = back.iter().map(|(_, d)| d.clone()).collect();
    let a = match_batches(&fd, &bd)?;
    let entries: Vec<AssignmentEntry> = a
        .pairs
        .iter()
        .map(|p| AssignmentEntry {
            front_id: front[p.front].0.clone(),
            back_id: back[p.back].0.clone(),
            distance: p.result.distance,
            shift: p.result.best_shift,
            mirrored: p.result.mirrored,
            ambiguous: p.ambiguous,
        })
        .collect();
    for e in entries.iter().filter(|e| e.ambiguous) {
        eprintln!("warning: {} <- {} is ambiguous", e.front_id, e.back_id);
    }
    let doc = serde_json::json!({
        "assignment": entries,
        "total_cost": a.total_cost,
        "distances": a.distances,
    });
    emit(out, "match.json", &(serde_json::to_string_pretty(&doc)? + "\n"))
}

fn extract_boundary(scan: &Path, cameras: Option<&Path>, config: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let mut scan = load(scan)?;
    if let Some(path) = cameras {
        let doc = CameraDocument::parse(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?;
        scan.views = Some(doc.load_views(path.parent().unwrap_or(Path::new(".")))?);
        if let Some(vis) = doc.visibility {
            scan.cloud = scan.cloud.with_visibility(vis)?;
        }
    }
    let index = NeighborIndex::new(&scan.cloud);
    let set = boundary_of(&scan, &index, config)?;
    eprintln!("{}: {} of {} points on the boundary", scan.id, set.len(), scan.cloud.len());
    emit(out, &format!("{}.boundary.json", scan.id), &(serde_json::to_string_pretty(&set)? + "\n"))?;
    if let Some(dir) = out {
        let path = dir.join(format!("{}.boundary.ply", scan.id));
        ply::write(&path, &scan.cloud.select(set.indices()), Encoding::BinaryLittleEndian)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn register(
    front: &Path,
    back: &Path,
    init: Option<&Path>,
    boundaries: [Option<&Path>; 2],
    config: &PipelineConfig,
    out: Option<&Path>,
) -> Result<()> {
    let front = load(front)?;
    let back = load(back)?;
    let fi = NeighborIndex::new(&front.cloud);
    let bi = NeighborIndex::new(&back.cloud);
    let init: RigidTransform = match init {
        Some(path) => read_json(path)?,
        None => {
            let fc = extract_scan_contour(&front.cloud, config.n_c, &config.alpha)?;
            let bc = extract_scan_contour(&back.cloud, config.n_c, &config.alpha)?;
            let seed = descriptor_distance(&fc.descriptor, &bc.descriptor)?;
            let f3 = lift_contour(&fc.contour, &fc.plane, &front.cloud, &fi)?;
            let b3 = lift_contour(&bc.contour, &bc.plane, &back.cloud, &bi)?;
            align_contours(&f3, &b3, &seed, config.shift_search)?.transform
        }
    };
    let boundary = |path: Option<&Path>, scan: &Scan, index: &NeighborIndex| -> Result<BoundarySet> {
        match path {
            Some(p) => {
                let set: BoundarySet = read_json(p)?;
                set.check_bounds(scan.cloud.len())?;
                Ok(set)
            }
            None => boundary_of(scan, index, config),
        }
    };
    let fb = boundary(boundaries[0], &front, &fi)?;
    let bb = boundary(boundaries[1], &back, &bi)?;
    let result = bbicp_with_indices(&front.cloud, &back.cloud, &fi, &bi, &fb, &bb, &init, &config.bbicp)?;
    eprintln!(
        "{} <- {}: {} iterations, converged {}, rms {:.4} mm",
        front.id, back.id, result.iterations_run, result.converged, result.final_rms
    );
    let dir = out.unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let transform_path = dir.join(format!("{}.transform.json", front.id));
    fs::write(&transform_path, serde_json::to_string_pretty(&result.transform)? + "\n")?;
    let merged: PointCloud = front.cloud.merged(&apply_transform(&result.transform, &back.cloud));
    ply::write(dir.join(format!("{}.merged.ply", front.id)), &merged, Encoding::BinaryLittleEndian)?;
    fs::write(dir.join(format!("{}.trace.csv", front.id)), result.trace_csv())?;
    eprintln!("wrote {}", transform_path.display());
    Ok(())
}

fn evaluate(recon: &Path, gt: &Path, config: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let pairs: Vec<(String, PathBuf, PathBuf)> = if recon.is_dir() {
        if !gt.is_dir() {
            bail!("{} is a directory but {} is not", recon.display(), gt.display());
        }
        pipeline::list_scans(recon)?
            .into_iter()
            .filter_map(|r| {
                let id = scan_id(&r);
                let g = gt.join(format!("{id}.ply"));
                if g.is_file() {
                    Some((id, r, g))
                } else {
                    eprintln!("warning: no ground truth for {id}");
                    None
                }
            })
            .collect()
    } else {
        vec![(scan_id(recon), recon.to_path_buf(), gt.to_path_buf())]
    };
    if pairs.is_empty() {
        bail!("nothing to evaluate");
    }
    let rows = pairs
        .iter()
        .map(|(id, r, g)| {
            let report = align_and_evaluate(&ply::read(r)?, &ply::read(g)?, config)
                .with_context(|| format!("evaluating {id}"))?;
            Ok((id.clone(), report))
        })
        .collect::<Result<Vec<_>>>()?;
    emit(out, "metrics.csv", &report_csv(&rows))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config = resolve_config(&cli.global)?;
    let out = cli.global.out_dir.as_deref();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.jobs).build()?;
    pool.install(|| {
        match &cli.command {
            Command::GenSynth { n, preset } => gen_synth(*n, *preset, &config, out)?,
            Command::ExtractContour { scan } => extract_contour(scan, &config, out)?,
            Command::Match { front_dir, back_dir } => match_dirs(front_dir, back_dir, &config, out)?,
            Command::ExtractBoundary { scan, cameras } => extract_boundary(scan, cameras.as_deref(), &config, out)?,
            Command::Register {
                front,
                back,
                init,
                front_boundary,
                back_boundary,
            } => register(
                front,
                back,
                init.as_deref(),
                [front_boundary.as_deref(), back_boundary.as_deref()],
                &config,
                out,
            )?,
            Command::Evaluate { recon, gt } => evaluate(recon, gt, &config, out)?,
            Command::Pipeline {
                front_dir,
                back_dir,
                gt_dir,
            } => {
                let inputs = PipelineInputs {
                    front_dir: front_dir.clone(),
                    back_dir: back_dir.clone(),
                    gt_dir: gt_dir.clone(),
                };
                let dir = out.unwrap_or(Path::new("sherd-out"));
                let manifest = pipeline::run_pipeline(&inputs, &config, dir)?;
                eprint!("{}", manifest.summary());
                if manifest.failures > 0 {
                    return Ok(ExitCode::from(2));
                }
            }
        }
        Ok(ExitCode::SUCCESS)
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
