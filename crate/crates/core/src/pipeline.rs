//! End-to-end run: synthesis, basic-set search, reconstruction, inversion.

use std::fmt::Write as _;
use std::path::Path;

use crate::basis::{compute_s1, j_matrix, search_basic_set, BasicSet, SearchOptions};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::inversion::{deconvolve_to_atoms, recover_patterson, Deconvolution, RecoveredPatterson};
use crate::io;
use crate::lattice::{kh_matrix, KhSource};
use crate::model::{compute_patterson, synth_window, CrystalStructure, IntensitySet, Mode, Reflection};
use crate::reconstruct::{completeness_sets, extend_pattern, Extension};

/// Position tolerance when matching a recovered structure to the input.
pub const MATCH_TOL: f64 = 1e-6;

/// Everything a successful run produces.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub observed: IntensitySet,
    pub s1_size: usize,
    pub basic_set: BasicSet,
    pub extension: Extension,
    pub recovered: RecoveredPatterson,
    pub deconvolution: Deconvolution,
    /// Smallest position error of any solution against the input, modulo
    /// translation, inversion and relabelling.
    pub match_error: Option<f64>,
    pub notes: Vec<String>,
}

impl PipelineRun {
    pub fn matched(&self) -> bool {
        self.match_error.is_some_and(|e| e < MATCH_TOL)
    }
}

/// Exit code and human-readable report of [`run_pipeline`].
#[derive(Debug)]
pub struct PipelineOutcome {
    pub exit_code: i32,
    pub report: String,
    pub run: Option<PipelineRun>,
    pub error: Option<Error>,
}

pub fn exit_code_for(e: &Error) -> i32 {
    if e.is_window_too_small() {
        2
    } else {
        1
    }
}

/// Smallest box enclosing `refs`, at least `floor` on every axis.
fn enclosing_window(dim: usize, refs: impl IntoIterator<Item = Reflection>, floor: &[u32]) -> Vec<u32> {
    let mut w: Vec<u32> = floor.to_vec();
    w.resize(dim, 1);
    for h in refs {
        for (d, v) in h.indices().iter().enumerate() {
            w[d] = w[d].max(v.unsigned_abs());
        }
    }
    w
}

/// Every recorded zero must make the intensity KH matrix singular; a zero
/// that only the truncated J-matrix sees means `S1` was too small.
fn validate_zeros(i: &IntensitySet, b: &BasicSet, rel_tol: f64) -> Result<()> {
    if b.is_empty() {
        return Ok(());
    }
    let d = kh_matrix(i, &b.refs)?;
    if d.spectral_ratio() < rel_tol {
        return Err(Error::WindowTooSmall(
            "basic set is singular under the intensity KH matrix".into(),
        ));
    }
    for z in &b.zeros {
        let mut refs = b.refs.clone();
        refs.push(*z);
        let kh = kh_matrix(i, &refs)?;
        let ratio = kh.spectral_ratio();
        if ratio >= rel_tol {
            return Err(Error::WindowTooSmall(format!(
                "reflection {z} closed a row under the truncated Gram matrix (largest zero ratio {:.3e}) \
                 but not under the intensities (ratio {ratio:.3e}); enlarge the window or lower the rank tolerance",
                b.diagnostics.max_zero_ratio
            )));
        }
    }
    Ok(())
}

/// Runs every stage in memory. Charges of `truth` stand in for the known
/// chemical composition; its geometry is used only for the final report.
pub fn run(cfg: &RunConfig, truth: &CrystalStructure) -> Result<PipelineRun> {
    cfg.validate()?;
    let dim = truth.dim();
    let window = cfg.window_for(dim);
    let mut notes = Vec::new();

    let observed = synth_window(truth, &window)?;
    let s1 = compute_s1(&observed.reflections())?;
    let opts = SearchOptions {
        rel_tol: cfg.rank_rel_tol,
        ..Default::default()
    };
    let basic_set = match cfg.mode {
        Mode::Neutron => {
            if !s1.contains_s1(&Reflection::zero(dim)) {
                return Err(Error::WindowTooSmall("S1 does not contain the origin".into()));
            }
            let j = j_matrix(&observed, &s1)?;
            search_basic_set(&j as &dyn KhSource, cfg.mode, cfg.axis, dim, &opts)?
        }
        Mode::Xray => search_basic_set(&observed, cfg.mode, cfg.axis, dim, &opts)?,
    };
    validate_zeros(&observed, &basic_set, cfg.rank_rel_tol)?;

    let sets = completeness_sets(&basic_set);
    let mut needed: Vec<Reflection> = sets.union().into_iter().collect();
    for h in sets.c.iter() {
        for d in 0..dim {
            needed.push(*h + Reflection::unit(dim, d));
        }
    }
    let target = enclosing_window(dim, needed, &window);
    let extension = extend_pattern(&observed, &basic_set, &target)?;
    if !extension.gaps.is_empty() {
        notes.push(format!("extension left {} gaps", extension.gaps.len()));
    }

    let recovered = recover_patterson(&extension.intensities, &basic_set, cfg.residual_tol)?;
    if recovered.map.nbar() != basic_set.len() {
        notes.push(format!(
            "recovered {} centres from a basic set of {}",
            recovered.map.nbar(),
            basic_set.len()
        ));
    }
    // the recovered map must explain every observed intensity
    let scale = recovered.map.intensity_scale().max(1.0);
    for (h, v) in observed.iter() {
        let model: f64 = recovered
            .map
            .centres()
            .iter()
            .map(|c| c.weight * (2.0 * std::f64::consts::PI * h.dot(&c.delta)).cos())
            .sum();
        if (model - v).abs() > cfg.residual_tol * scale {
            return Err(Error::WindowTooSmall(format!(
                "recovered Patterson map misses the observed intensity at {h} by {:.3e}",
                (model - v).abs()
            )));
        }
    }

    let truth_map = compute_patterson(truth);
    if !recovered.map.approx_eq(&truth_map, MATCH_TOL, MATCH_TOL) {
        notes.push("recovered Patterson map differs from the input's".into());
    }

    let deconvolution = deconvolve_to_atoms(&recovered.map, &truth.charges(), MATCH_TOL, MATCH_TOL)?;
    if deconvolution.is_homometric(MATCH_TOL) {
        notes.push("homometric: several non-congruent structures share the Patterson map".into());
    }
    let match_error = deconvolution
        .structures
        .iter()
        .filter_map(|s| s.distance_mod_symmetry(truth, 1e-6))
        .fold(None, |acc: Option<f64>, e| Some(acc.map_or(e, |a| a.min(e))));

    Ok(PipelineRun {
        observed,
        s1_size: s1.nbar1(),
        basic_set,
        extension,
        recovered,
        deconvolution,
        match_error,
        notes,
    })
}

fn describe(cfg: &RunConfig, truth: &CrystalStructure, run: &PipelineRun) -> String {
    let mut r = String::new();
    let _ = writeln!(r, "mode {} axis {} window {:?}", cfg.mode, cfg.axis, cfg.window_for(truth.dim()));
    let _ = writeln!(r, "atoms {}", truth.len());
    let _ = writeln!(r, "observed reflections {}", run.observed.len());
    let _ = writeln!(r, "S1 size {}", run.s1_size);
    let _ = writeln!(r, "basic set size {} zeros {}", run.basic_set.len(), run.basic_set.zeros.len());
    let _ = writeln!(r, "search margins: {}", run.basic_set.diagnostics.describe(cfg.rank_rel_tol));
    let _ = writeln!(r, "extension method {:?} gaps {}", run.extension.method, run.extension.gaps.len());
    let _ = writeln!(
        r,
        "recovered centres {} fit residual {:.3e} joint diagonalization {}",
        run.recovered.map.nbar(),
        run.recovered.fit_residual,
        run.recovered.joint_diagonalization
    );
    let _ = writeln!(r, "deconvolution: {}", run.deconvolution.diagnostic);
    match run.match_error {
        Some(e) => {
            let _ = writeln!(r, "match error {e:.3e}");
        }
        None => {
            let _ = writeln!(r, "no solution matches the input structure");
        }
    }
    for n in &run.notes {
        let _ = writeln!(r, "note: {n}");
    }
    r
}

fn write_artifacts(out_dir: &Path, truth: &CrystalStructure, run: &PipelineRun, report: &str) -> Result<()> {
    io::write_string(&out_dir.join("structure.txt"), &io::format_structure(truth))?;
    io::write_string(&out_dir.join("intensities.txt"), &io::format_intensities(&run.observed))?;
    io::write_string(&out_dir.join("basis.txt"), &io::format_basic_set(&run.basic_set))?;
    io::write_string(
        &out_dir.join("reconstructed.txt"),
        &io::format_reconstruction(&run.extension.intensities, &run.extension.gaps),
    )?;
    io::write_string(&out_dir.join("patterson.txt"), &io::format_patterson(&run.recovered.map))?;
    for (k, s) in run.deconvolution.structures.iter().enumerate() {
        io::write_string(&out_dir.join(format!("solution_{}.txt", k + 1)), &io::format_structure(s))?;
    }
    io::write_string(&out_dir.join("report.txt"), report)
}

/// Reads a structure file, runs the pipeline and writes all artifacts to
/// `out_dir`. Exit code 0 on a full round trip, 2 when the window cannot
/// support a solution, 1 otherwise.
pub fn run_pipeline(cfg: &RunConfig, structure_path: &Path, out_dir: &Path) -> PipelineOutcome {
    let fail = |e: Error| PipelineOutcome {
        exit_code: exit_code_for(&e),
        report: format!("error: {e}\n"),
        run: None,
        error: Some(e),
    };
    let truth = match io::read_to_string(structure_path).and_then(|t| io::parse_structure(&t)) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let run = match run(cfg, &truth) {
        Ok(r) => r,
        Err(e) => {
            let out = fail(e);
            let _ = io::write_string(&out_dir.join("report.txt"), &out.report);
            return out;
        }
    };
    let report = describe(cfg, &truth, &run);
    if let Err(e) = write_artifacts(out_dir, &truth, &run, &report) {
        return fail(e);
    }
    let exit_code = if run.matched() { 0 } else { 1 };
    PipelineOutcome {
        exit_code,
        report,
        run: Some(run),
        error: None,
    }
}
