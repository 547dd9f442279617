use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use algphase::basis::{compute_s1, j_matrix, search_basic_set, BasicSet, SearchOptions};
use algphase::config::{parse_reals, parse_window, Axis, Mode, Precision, RunConfig};
use algphase::generate::{generate_random_structure, StructureOptions};
use algphase::inversion::{deconvolve_to_atoms, recover_patterson};
use algphase::lattice::{
    kh_det_closed_form, kh_matrix, rel_diff, rel_diff_c, shape_profile, vandermonde_det_closed_form,
    vandermonde_det_numeric, KhSource,
};
use algphase::pipeline::{exit_code_for, run_pipeline};
use algphase::reconstruct::{completeness_sets, extend_pattern};
use algphase::{io, Error, IntensitySet, Reflection, Result};

#[derive(Parser)]
#[command(name = "algphase", version, about = "Algebraic phase retrieval for point-atom crystals")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Spectral-ratio threshold for rank decisions
    #[arg(long, global = true, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "neutron")]
    mode: Mode,
    #[arg(long, global = true, default_value = "a")]
    axis: Axis,
    /// Box half-widths: H, H,K or H,K,L
    #[arg(long, global = true, default_value = "6,6")]
    window: String,
    #[arg(long, global = true, default_value = "double")]
    precision: Precision,
}

#[derive(Subcommand)]
enum Command {
    /// Random structure for test corpora
    Gen {
        #[arg(long, default_value_t = 3)]
        n_atoms: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 0.05)]
        min_separation: f64,
        /// Charge magnitude range "lo,hi"
        #[arg(long, default_value = "0.5,3")]
        charge_range: String,
        /// Snap coordinates to multiples of 1/GRID; 0 disables snapping
        #[arg(long, default_value_t = 20)]
        grid: u32,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Subtracted intensities of a structure over the window
    Synth {
        structure: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Patterson map of a structure
    Patterson {
        structure: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Basic-set search from intensities
    Basis {
        intensities: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Extends intensities over C and F to the whole window
    Reconstruct {
        #[arg(long)]
        basis: PathBuf,
        intensities: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Patterson map and atomic configurations from intensities
    Invert {
        intensities: PathBuf,
        #[arg(long)]
        basis: Option<PathBuf>,
        /// Charges "z1,z2,..."
        #[arg(long)]
        charges: String,
        #[arg(long)]
        n_atoms: Option<usize>,
        /// Fit residual allowed relative to the weight scale
        #[arg(long, default_value_t = 1e-6)]
        residual_tol: f64,
        #[arg(long, default_value = "invert-out")]
        out_dir: PathBuf,
    },
    /// Closed-form against numeric determinants for a Patterson map
    VerifyDet {
        patterson: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        det_tol: f64,
    },
    /// Synthesis, search, reconstruction and inversion of a structure file
    Pipeline {
        structure: PathBuf,
        #[arg(long, default_value = "pipeline-out")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        residual_tol: f64,
    },
}

fn config(g: &Global) -> Result<RunConfig> {
    let cfg = RunConfig {
        mode: g.mode,
        axis: g.axis,
        rank_rel_tol: g.tol,
        window: parse_window(&g.window)?,
        seed: g.seed,
        precision: g.precision,
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => io::write_string(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read(path: &Path) -> Result<String> {
    io::read_to_string(path)
}

fn search(i: &IntensitySet, cfg: &RunConfig) -> Result<BasicSet> {
    let opts = SearchOptions {
        rel_tol: cfg.rank_rel_tol,
        ..Default::default()
    };
    match cfg.mode {
        Mode::Neutron => {
            let s1 = compute_s1(&i.reflections())?;
            let j = j_matrix(i, &s1)?;
            search_basic_set(&j as &dyn KhSource, cfg.mode, cfg.axis, i.dim(), &opts)
        }
        Mode::Xray => search_basic_set(i, cfg.mode, cfg.axis, i.dim(), &opts),
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let cfg = config(&cli.global)?;
    match cli.command {
        Command::Gen {
            n_atoms,
            dim,
            min_separation,
            charge_range,
            grid,
            out,
        } => {
            let r = parse_reals(&charge_range)?;
            if r.len() != 2 {
                return Err(Error::Config("charge range needs two values".into()));
            }
            let opts = StructureOptions {
                n_atoms,
                dim,
                min_separation,
                charge_range: (r[0], r[1]),
                mode: cfg.mode,
                grid: (grid > 0).then_some(grid),
            };
            let s = generate_random_structure(cfg.seed, &opts)?;
            emit(&out, &io::format_structure(&s))?;
        }
        Command::Synth { structure, out } => {
            let s = io::parse_structure(&read(&structure)?)?;
            let i = algphase::synth_window(&s, &cfg.window_for(s.dim()))?;
            emit(&out, &io::format_intensities(&i))?;
        }
        Command::Patterson { structure, out } => {
            let s = io::parse_structure(&read(&structure)?)?;
            emit(&out, &io::format_patterson(&algphase::compute_patterson(&s)))?;
        }
        Command::Basis { intensities, out } => {
            let i = io::parse_intensities(&read(&intensities)?)?;
            let b = search(&i, &cfg)?;
            eprintln!("{}", b.diagnostics.describe(cfg.rank_rel_tol));
            emit(&out, &io::format_basic_set(&b))?;
        }
        Command::Reconstruct { basis, intensities, out } => {
            let b = io::parse_basic_set(&read(&basis)?)?;
            let i = io::parse_intensities(&read(&intensities)?)?;
            let ext = extend_pattern(&i, &b, &cfg.window_for(b.dim))?;
            if !ext.gaps.is_empty() {
                eprintln!("{} reflections unreachable", ext.gaps.len());
            }
            emit(&out, &io::format_reconstruction(&ext.intensities, &ext.gaps))?;
        }
        Command::Invert {
            intensities,
            basis,
            charges,
            n_atoms,
            residual_tol,
            out_dir,
        } => {
            let i = io::parse_intensities(&read(&intensities)?)?;
            let charges = parse_reals(&charges)?;
            if let Some(n) = n_atoms {
                if n != charges.len() {
                    return Err(Error::Config(format!("{n} atoms but {} charges", charges.len())));
                }
            }
            let b = match basis {
                Some(p) => io::parse_basic_set(&read(&p)?)?,
                None => search(&i, &cfg)?,
            };
            let dim = b.dim;
            let sets = completeness_sets(&b);
            let mut w = cfg.window_for(dim);
            for h in sets.union() {
                for (d, v) in h.indices().iter().enumerate() {
                    w[d] = w[d].max(v.unsigned_abs() + 1);
                }
            }
            let ext = extend_pattern(&i, &b, &w)?;
            let rec = recover_patterson(&ext.intensities, &b, residual_tol)?;
            io::write_string(&out_dir.join("patterson.txt"), &io::format_patterson(&rec.map))?;
            let dec = deconvolve_to_atoms(&rec.map, &charges, 1e-6, 1e-6)?;
            for (k, s) in dec.structures.iter().enumerate() {
                io::write_string(&out_dir.join(format!("solution_{}.txt", k + 1)), &io::format_structure(s))?;
            }
            println!("{} centres; {}", rec.map.nbar(), dec.diagnostic);
            if dec.structures.is_empty() {
                return Ok(1);
            }
        }
        Command::VerifyDet { patterson, det_tol } => {
            let p = io::parse_patterson(&read(&patterson)?)?;
            let shape = shape_profile(&p, cfg.axis)?;
            let closed = vandermonde_det_closed_form(&p, &shape)?;
            let numeric = vandermonde_det_numeric(&p, &shape, cfg.precision);
            let ev = rel_diff_c(closed, numeric);
            println!("det V closed form  {closed:.12e}");
            println!("det V numeric      {numeric:.12e}");
            println!("relative error     {ev:.3e}");
            let refs: Vec<Reflection> = shape.principal_refs();
            let diffs: Vec<Reflection> = refs.iter().flat_map(|a| refs.iter().map(move |b| *a - *b)).collect();
            let i = algphase::model::synth_at(&p, &diffs)?;
            let kh_closed = kh_det_closed_form(&p, cfg.axis)?;
            let kh_numeric = kh_matrix(&i, &refs)?.det();
            let ek = rel_diff(kh_closed, kh_numeric);
            println!("det KH closed form {kh_closed:.12e}");
            println!("det KH numeric     {kh_numeric:.12e}");
            println!("relative error     {ek:.3e}");
            if ev > det_tol || ek > det_tol {
                return Ok(1);
            }
        }
        Command::Pipeline {
            structure,
            out_dir,
            residual_tol,
        } => {
            let cfg = RunConfig { residual_tol, ..cfg };
            let outcome = run_pipeline(&cfg, &structure, &out_dir);
            if outcome.exit_code == 0 {
                print!("{}", outcome.report);
            } else {
                eprint!("{}", outcome.report);
            }
            return Ok(outcome.exit_code);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
