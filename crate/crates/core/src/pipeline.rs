//! Batch orchestration: contours, matching, alignment, boundary extraction,
//! registration, merging and evaluation over two directories of scans.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{extract_boundary_geometric, extract_boundary_with_index, mask_candidate_filter, BoundarySet, CameraDocument, CameraView};
use crate::config::PipelineConfig;
use crate::contour::{extract_scan_contour, ScanContour};
use crate::error::{Error, Result};
use crate::geom::{apply_transform, PointCloud, RigidTransform};
use crate::index::NeighborIndex;
use crate::matching::{align_contours, lift_contour, match_unbalanced, ContourAlignment, MatchedPair, AMBIGUITY_MARGIN};
use crate::metrics::{batch_mean, evaluate_with, report_csv, EvalReport};
use crate::ply::{self, Encoding};
use crate::registration::{bbicp_with_indices, trimmed_icp, RegistrationResult};
use crate::synth::{ground_truth_model, Batch, FragmentSpec, GroundTruth};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const METRICS_FILE: &str = "metrics.csv";
/// Camera metadata sits next to a scan as `<stem>.cameras.json`.
pub const CAMERA_SUFFIX: &str = ".cameras.json";

/// Pipeline stage a failure is attributed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Load,
    Contour,
    Alignment,
    Boundary,
    Registration,
    Write,
    Evaluation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Front,
    Back,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundarySource {
    /// Candidates pre-filtered by silhouette masks.
    Mask,
    /// Every point tested.
    Geometric,
}

/// One scan on disk, with its optional camera views.
pub struct Scan {
    pub id: String,
    pub cloud: PointCloud,
    pub views: Option<Vec<CameraView>>,
}

/// `*.ply` files in `dir`, sorted by file name.
pub fn list_scans(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_ply = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("ply"));
        if is_ply && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(paths)
}

pub fn scan_id(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

/// Reads a PLY scan and, if present, its camera metadata file.
pub fn load_scan(path: &Path) -> Result<Scan> {
    let id = scan_id(path);
    let mut cloud = ply::read(path)?;
    let camera_path = path.with_file_name(format!("{id}{CAMERA_SUFFIX}"));
    let views = if camera_path.is_file() {
        let text = fs::read_to_string(&camera_path).map_err(|e| Error::io(&camera_path, e))?;
        let doc = CameraDocument::parse(&text)?;
        let base = camera_path.parent().unwrap_or(Path::new("."));
        let views = doc.load_views(base)?;
        if let Some(vis) = doc.visibility {
            cloud = cloud.with_visibility(vis)?;
        }
        Some(views)
    } else {
        None
    };
    Ok(Scan { id, cloud, views })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanFailure {
    pub side: Side,
    pub id: String,
    pub stage: Stage,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentEntry {
    pub front_id: String,
    pub back_id: String,
    pub distance: f64,
    pub shift: usize,
    pub mirrored: bool,
    pub ambiguous: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationSummary {
    /// Maps the back scan into the front scan's frame.
    pub transform: RigidTransform,
    pub iterations: usize,
    pub converged: bool,
    pub final_rms_mm: f64,
    pub final_objective_mm2: f64,
}

impl From<&RegistrationResult> for RegistrationSummary {
    fn from(r: &RegistrationResult) -> Self {
        RegistrationSummary {
            transform: r.transform,
            iterations: r.iterations_run,
            converged: r.converged,
            final_rms_mm: r.final_rms,
            final_objective_mm2: r.objective_trace.last().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegisteredFragment {
    pub initial_alignment: ContourAlignment,
    pub boundary_source: [BoundarySource; 2],
    pub front_boundary_points: usize,
    pub back_boundary_points: usize,
    pub registration: RegistrationSummary,
    /// Merged model path relative to the output directory.
    pub merged_model: String,
    pub trace: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<EvalReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum FragmentOutcome {
    Registered(Box<RegisteredFragment>),
    Failed { stage: Stage, error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FragmentReport {
    pub front_id: String,
    pub back_id: String,
    pub outcome: FragmentOutcome,
    pub warnings: Vec<String>,
}

impl FragmentReport {
    pub fn failed(&self) -> bool {
        matches!(self.outcome, FragmentOutcome::Failed { .. })
    }
}

/// Machine-readable record of one batch run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub front_dir: String,
    pub back_dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_dir: Option<String>,
    pub config: PipelineConfig,
    pub front_scans: Vec<String>,
    pub back_scans: Vec<String>,
    pub scan_failures: Vec<ScanFailure>,
    pub assignment: Vec<AssignmentEntry>,
    /// Scans left without a partner after other scans failed.
    pub unmatched: Vec<String>,
    pub fragments: Vec<FragmentReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_metrics: Option<EvalReport>,
    pub warnings: Vec<String>,
    /// Failed scans plus failed fragments.
    pub failures: usize,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let registered = self.fragments.iter().filter(|f| !f.failed()).count();
        let _ = writeln!(s, "front scans: {}  back scans: {}", self.front_scans.len(), self.back_scans.len());
        let _ = writeln!(s, "registered: {registered}  failures: {}", self.failures);
        let _ = writeln!(s);
        for f in &self.fragments {
            match &f.outcome {
                FragmentOutcome::Registered(r) => {
                    let _ = write!(
                        s,
                        "{} <- {}: {} iterations, rms {:.4} mm",
                        f.front_id, f.back_id, r.registration.iterations, r.registration.final_rms_mm
                    );
                    if let Some(m) = &r.metrics {
                        let _ = write!(
                            s,
                            ", acc {:.3} mm, comp {:.2}%, mae {:.3} mm, sd {:.3} mm",
                            m.accuracy_mm, m.completeness_pct, m.mae_mm, m.sd_mm
                        );
                    }
                    let _ = writeln!(s);
                }
                FragmentOutcome::Failed { stage, error } => {
                    let _ = writeln!(s, "{} <- {}: FAILED at {stage:?}: {error}", f.front_id, f.back_id);
                }
            }
            for w in &f.warnings {
                let _ = writeln!(s, "    warning: {w}");
            }
        }
        for f in &self.scan_failures {
            let _ = writeln!(s, "{:?} scan {}: FAILED at {:?}: {}", f.side, f.id, f.stage, f.error);
        }
        for id in &self.unmatched {
            let _ = writeln!(s, "{id}: unmatched");
        }
        if let Some(m) = &self.batch_metrics {
            let _ = writeln!(s);
            let _ = writeln!(
                s,
                "Mean: acc {:.3} mm, comp {:.2}%, mae {:.3} mm, sd {:.3} mm",
                m.accuracy_mm, m.completeness_pct, m.mae_mm, m.sd_mm
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct PipelineInputs {
    pub front_dir: PathBuf,
    pub back_dir: PathBuf,
    /// Ground-truth models named after the front scans.
    pub gt_dir: Option<PathBuf>,
}

struct Prepared {
    scan: Scan,
    contour: ScanContour,
    index: NeighborIndex,
}

type StageResult<T> = std::result::Result<T, (Stage, Error)>;

fn at(stage: Stage) -> impl FnOnce(Error) -> (Stage, Error) {
    move |e| (stage, e)
}

fn prepare(path: &Path, config: &PipelineConfig) -> StageResult<Prepared> {
    let scan = load_scan(path).map_err(at(Stage::Load))?;
    let contour = extract_scan_contour(&scan.cloud, config.n_c, &config.alpha).map_err(at(Stage::Contour))?;
    let index = NeighborIndex::new(&scan.cloud);
    Ok(Prepared { scan, contour, index })
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs the whole batch and writes the merged models, traces, manifest and
/// summary under `out_dir`. Per-fragment failures are recorded in the
/// manifest; only unusable inputs abort the run, before anything is written.
pub fn run_pipeline(inputs: &PipelineInputs, config: &PipelineConfig, out_dir: &Path) -> Result<Manifest> {
    config.validate()?;
    let front_paths = list_scans(&inputs.front_dir)?;
    let back_paths = list_scans(&inputs.back_dir)?;
    if front_paths.is_empty() || front_paths.len() != back_paths.len() {
        return Err(Error::SizeMismatch {
            front: front_paths.len(),
            back: back_paths.len(),
        });
    }
    let pool = thread_pool(config.jobs)?;
    pool.install(|| run_batch(inputs, config, out_dir, &front_paths, &back_paths))
}

fn run_batch(
    inputs: &PipelineInputs,
    config: &PipelineConfig,
    out_dir: &Path,
    front_paths: &[PathBuf],
    back_paths: &[PathBuf],
) -> Result<Manifest> {
    let front: Vec<StageResult<Prepared>> = front_paths.par_iter().map(|p| prepare(p, config)).collect();
    let back: Vec<StageResult<Prepared>> = back_paths.par_iter().map(|p| prepare(p, config)).collect();

    let mut scan_failures = Vec::new();
    let mut collect_ok = |side: Side, paths: &[PathBuf], results: Vec<StageResult<Prepared>>| -> Vec<Prepared> {
        let mut ok = Vec::new();
        for (path, r) in paths.iter().zip(results) {
            match r {
                Ok(p) => ok.push(p),
                Err((stage, e)) => scan_failures.push(ScanFailure {
                    side,
                    id: scan_id(path),
                    stage,
                    error: e.to_string(),
                }),
            }
        }
        ok
    };
    let front = collect_ok(Side::Front, front_paths, front);
    let back = collect_ok(Side::Back, back_paths, back);

    let merged_dir = out_dir.join("merged");
    let trace_dir = out_dir.join("traces");
    for dir in [out_dir, &merged_dir, &trace_dir] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut warnings = Vec::new();
    let pairs: Vec<MatchedPair> = if front.is_empty() || back.is_empty() {
        warnings.push("no usable scans on one side; nothing was matched".to_string());
        Vec::new()
    } else {
        let fd: Vec<_> = front.iter().map(|p| p.contour.descriptor.clone()).collect();
        let bd: Vec<_> = back.iter().map(|p| p.contour.descriptor.clone()).collect();
        match_unbalanced(&fd, &bd)?.pairs
    };

    let mut paired_front = vec![false; front.len()];
    let mut paired_back = vec![false; back.len()];
    for p in &pairs {
        paired_front[p.front] = true;
        paired_back[p.back] = true;
    }
    let unmatched: Vec<String> = front
        .iter()
        .zip(&paired_front)
        .chain(back.iter().zip(&paired_back))
        .filter(|(_, &paired)| !paired)
        .map(|(p, _)| p.scan.id.clone())
        .collect();

    let assignment: Vec<AssignmentEntry> = pairs
        .iter()
        .map(|p| AssignmentEntry {
            front_id: front[p.front].scan.id.clone(),
            back_id: back[p.back].scan.id.clone(),
            distance: p.result.distance,
            shift: p.result.best_shift,
            mirrored: p.result.mirrored,
            ambiguous: p.ambiguous,
        })
        .collect();

    let fragments: Vec<FragmentReport> = pairs
        .par_iter()
        .map(|p| process_pair(&front[p.front], &back[p.back], p, config, inputs.gt_dir.as_deref(), out_dir))
        .collect();

    let rows: Vec<(String, EvalReport)> = fragments
        .iter()
        .filter_map(|f| match &f.outcome {
            FragmentOutcome::Registered(r) => r.metrics.map(|m| (f.front_id.clone(), m)),
            FragmentOutcome::Failed { .. } => None,
        })
        .collect();
    let metrics: Vec<EvalReport> = rows.iter().map(|(_, m)| *m).collect();
    let batch_metrics = batch_mean(&metrics);
    if !rows.is_empty() {
        let path = out_dir.join(METRICS_FILE);
        fs::write(&path, report_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    }

    let ambiguous = assignment.iter().filter(|a| a.ambiguous).count();
    if ambiguous > 0 {
        warnings.push(format!("{ambiguous} assignment(s) flagged as ambiguous"));
    }
    let failures = scan_failures.len() + fragments.iter().filter(|f| f.failed()).count();
    let manifest = Manifest {
        front_dir: inputs.front_dir.display().to_string(),
        back_dir: inputs.back_dir.display().to_string(),
        gt_dir: inputs.gt_dir.as_ref().map(|d| d.display().to_string()),
        config: config.clone(),
        front_scans: front_paths.iter().map(|p| scan_id(p)).collect(),
        back_scans: back_paths.iter().map(|p| scan_id(p)).collect(),
        scan_failures,
        assignment,
        unmatched,
        fragments,
        batch_metrics,
        warnings,
        failures,
    };
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()?).map_err(|e| Error::io(&path, e))?;
    let path = out_dir.join(SUMMARY_FILE);
    fs::write(&path, manifest.summary()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn process_pair(
    front: &Prepared,
    back: &Prepared,
    pair: &MatchedPair,
    config: &PipelineConfig,
    gt_dir: Option<&Path>,
    out_dir: &Path,
) -> FragmentReport {
    let mut warnings = Vec::new();
    if pair.ambiguous {
        warnings.push(format!(
            "ambiguous match: another back scan lies within {:.0}% of the assigned descriptor distance",
            AMBIGUITY_MARGIN * 100.0
        ));
    }
    let outcome = match register_pair(front, back, pair, config, gt_dir, out_dir, &mut warnings) {
        Ok(r) => FragmentOutcome::Registered(Box::new(r)),
        Err((stage, e)) => FragmentOutcome::Failed {
            stage,
            error: e.to_string(),
        },
    };
    FragmentReport {
        front_id: front.scan.id.clone(),
        back_id: back.scan.id.clone(),
        outcome,
        warnings,
    }
}

fn boundary_for(p: &Prepared, config: &PipelineConfig) -> Result<(BoundarySet, BoundarySource)> {
    let b = &config.boundary;
    match &p.scan.views {
        Some(views) => {
            let candidates = mask_candidate_filter(&p.scan.cloud, views, b.pixel_threshold)?;
            let set = extract_boundary_with_index(&p.scan.cloud, &p.index, &candidates, b.k, b.gap_threshold)?;
            Ok((set, BoundarySource::Mask))
        }
        None => Ok((
            extract_boundary_geometric(&p.scan.cloud, b.k, b.gap_threshold)?,
            BoundarySource::Geometric,
        )),
    }
}

fn register_pair(
    front: &Prepared,
    back: &Prepared,
    pair: &MatchedPair,
    config: &PipelineConfig,
    gt_dir: Option<&Path>,
    out_dir: &Path,
    warnings: &mut Vec<String>,
) -> StageResult<RegisteredFragment> {
    let f3 = lift_contour(&front.contour.contour, &front.contour.plane, &front.scan.cloud, &front.index)
        .map_err(at(Stage::Alignment))?;
    let b3 = lift_contour(&back.contour.contour, &back.contour.plane, &back.scan.cloud, &back.index)
        .map_err(at(Stage::Alignment))?;
    let initial = align_contours(&f3, &b3, &pair.result, config.shift_search).map_err(at(Stage::Alignment))?;

    let (front_boundary, front_source) = boundary_for(front, config).map_err(at(Stage::Boundary))?;
    let (back_boundary, back_source) = boundary_for(back, config).map_err(at(Stage::Boundary))?;

    let result = bbicp_with_indices(
        &front.scan.cloud,
        &back.scan.cloud,
        &front.index,
        &back.index,
        &front_boundary,
        &back_boundary,
        &initial.transform,
        &config.bbicp,
    )
    .map_err(at(Stage::Registration))?;
    if !result.converged {
        warnings.push(format!(
            "registration stopped after {} iterations without converging",
            result.iterations_run
        ));
    }

    let id = &front.scan.id;
    let merged = front.scan.cloud.merged(&apply_transform(&result.transform, &back.scan.cloud));
    let merged_rel = format!("merged/{id}.ply");
    let trace_rel = format!("traces/{id}.csv");
    ply::write(out_dir.join(&merged_rel), &merged, Encoding::BinaryLittleEndian).map_err(at(Stage::Write))?;
    let trace_path = out_dir.join(&trace_rel);
    fs::write(&trace_path, result.trace_csv()).map_err(|e| (Stage::Write, Error::io(&trace_path, e)))?;

    let metrics = match gt_dir.map(|d| d.join(format!("{id}.ply"))) {
        Some(path) if path.is_file() => {
            let gt = ply::read(&path).map_err(at(Stage::Evaluation))?;
            Some(align_and_evaluate(&merged, &gt, config).map_err(at(Stage::Evaluation))?)
        }
        Some(_) => {
            warnings.push("no ground-truth model found; not evaluated".to_string());
            None
        }
        None => None,
    };

    Ok(RegisteredFragment {
        initial_alignment: initial,
        boundary_source: [front_source, back_source],
        front_boundary_points: front_boundary.len(),
        back_boundary_points: back_boundary.len(),
        registration: RegistrationSummary::from(&result),
        merged_model: merged_rel,
        trace: trace_rel,
        metrics,
    })
}

/// Scores `recon` against `gt`, first refining it onto `gt` with trimmed ICP
/// from the identity when the configuration asks for it.
pub fn align_and_evaluate(recon: &PointCloud, gt: &PointCloud, config: &PipelineConfig) -> Result<EvalReport> {
    let eval = &config.evaluation;
    if eval.align {
        let fit = trimmed_icp(recon, gt, &RigidTransform::identity(), eval.align_trim_fraction, &config.bbicp)?;
        evaluate_with(&apply_transform(&fit.transform, recon), gt, &eval.options())
    } else {
        evaluate_with(recon, gt, &eval.options())
    }
}

/// File names and truth written for a synthetic batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub seed: u64,
    pub front: Vec<String>,
    pub back: Vec<String>,
    pub ground_truth: Vec<String>,
    pub specs: Vec<FragmentSpec>,
}

/// Truth file: which back scan belongs to which front scan, and how they align.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthDocument {
    pub pairs: Vec<TruthPair>,
    pub truth: GroundTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthPair {
    pub front_id: String,
    pub back_id: String,
    /// Maps the back scan into the front scan's frame.
    pub registration: RigidTransform,
}

pub fn front_id(i: usize) -> String {
    format!("front_{i:02}")
}

pub fn back_id(i: usize) -> String {
    format!("back_{i:02}")
}

/// Writes `front/`, `back/` and `gt/` PLY directories plus `truth.json` and
/// `batch.json` under `out_dir`. Ground-truth models are in the front frame
/// and named after their front scans.
pub fn write_synthetic_batch(batch: &Batch, out_dir: &Path) -> Result<SyntheticManifest> {
    let dirs = ["front", "back", "gt"].map(|d| out_dir.join(d));
    for d in &dirs {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let n = batch.front.len();
    let mut manifest = SyntheticManifest {
        seed: batch.truth.seed,
        front: Vec::with_capacity(n),
        back: Vec::with_capacity(n),
        ground_truth: Vec::with_capacity(n),
        specs: batch.specs.clone(),
    };
    for (i, cloud) in batch.front.iter().enumerate() {
        let rel = format!("front/{}.ply", front_id(i));
        ply::write(out_dir.join(&rel), cloud, Encoding::BinaryLittleEndian)?;
        manifest.front.push(rel);
    }
    for (j, cloud) in batch.back.iter().enumerate() {
        let rel = format!("back/{}.ply", back_id(j));
        ply::write(out_dir.join(&rel), cloud, Encoding::BinaryLittleEndian)?;
        manifest.back.push(rel);
    }
    let models: Vec<PointCloud> = batch
        .specs
        .par_iter()
        .zip(&batch.truth.fragments)
        .map(|(spec, truth)| ground_truth_model(spec, truth))
        .collect::<Result<_>>()?;
    for (i, model) in models.iter().enumerate() {
        let rel = format!("gt/{}.ply", front_id(i));
        ply::write(out_dir.join(&rel), model, Encoding::BinaryLittleEndian)?;
        manifest.ground_truth.push(rel);
    }
    let truth = TruthDocument {
        pairs: batch
            .truth
            .fragments
            .iter()
            .enumerate()
            .map(|(i, t)| TruthPair {
                front_id: front_id(i),
                back_id: back_id(batch.truth.pairing[i]),
                registration: t.registration(),
            })
            .collect(),
        truth: batch.truth.clone(),
    };
    let write_json = |name: &str, text: String| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    };
    write_json("truth.json", serde_json::to_string_pretty(&truth)?)?;
    write_json("batch.json", serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
