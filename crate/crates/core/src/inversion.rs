//! From intensities and a basic set back to Patterson centres, and from a
//! Patterson map to atomic configurations.
//!
//! With `D0` the KH matrix of the basic set and `D_d` the matrix of
//! `I_{k_ı - k_ℓ + e_d}`, the factorization `D0 = V† ν V` gives
//! `D0⁻¹ D_d = V⁻¹ diag(exp(i2π δ_d)) V`. The eigenvalues of that pencil
//! therefore carry the `d`-th coordinate of every centre, and the shared
//! eigenvectors tie coordinates of the same centre together.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::basis::BasicSet;
use crate::error::{Error, Result};
use crate::lattice::kh_matrix;
use crate::linalg::{self, CMatrix, RMatrix, RealSolver};
use crate::model::{
    compute_patterson, wrap_unit, Atom, Axis, Centre, CrystalStructure, IntensitySet, PattersonMap, Position,
    Reflection,
};
use crate::reconstruct::completeness_sets;

/// Largest modulus defect tolerated for a resolvent root.
pub const ROOT_MODULUS_TOL: f64 = 1e-3;
/// Eigenvalues closer than this trigger joint diagonalization.
pub const EIGEN_GAP_TOL: f64 = 1e-6;
/// Largest atom count handed to the brute-force deconvolution.
pub const MAX_DECONVOLUTION_ATOMS: usize = 6;

/// Monic polynomial `Σ α_s z^s`, `α_M = 1`, whose roots are the phase
/// factors `exp(-i2π x_r)` of the distinct projections on the scan axis.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolventPolynomial {
    pub axis: Axis,
    /// `α_0 … α_M`.
    pub coeffs: Vec<f64>,
}

impl ResolventPolynomial {
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }
}

/// Builds the resolvent from the zero that closed row 0 of the scan.
pub fn resolvent_from_zero(b: &BasicSet, i: &IntensitySet) -> Result<ResolventPolynomial> {
    let zero = b
        .zeros
        .iter()
        .find(|z| {
            b.axis
                .to_scan(z)
                .is_ok_and(|s| s[1] == 0 && s[2] == 0 && s[0] > 0)
        })
        .ok_or_else(|| Error::Inconsistent("no row-0 zero recorded".into()))?;
    let mu1 = b.axis.to_scan(zero)?[0] as usize;
    let row0: Vec<Reflection> = (0..mu1)
        .map(|s| b.axis.from_scan(b.dim, [s as i32, 0, 0]))
        .collect::<Result<_>>()?;
    for h in &row0 {
        if !b.contains(h) {
            return Err(Error::Inconsistent(format!("row 0 of the basic set lacks {h}")));
        }
    }
    let d = kh_matrix(i, &row0)?.d;
    let rhs: Vec<f64> = row0.iter().map(|k| i.require(&(*k - *zero))).collect::<Result<_>>()?;
    let beta = RealSolver::new(&d, 1e-14)?.solve(&DVector::from_vec(rhs))?;
    let mut coeffs: Vec<f64> = beta.iter().map(|v| -v).collect();
    coeffs.push(1.0);
    Ok(ResolventPolynomial { axis: b.axis, coeffs })
}

/// Roots projected onto the unit circle, sorted by argument in `[0, 2π)`.
pub fn roots_on_unit_circle(p: &ResolventPolynomial) -> Result<Vec<Complex64>> {
    if p.degree() == 0 {
        return Err(Error::EmptyInput("polynomial of degree 0"));
    }
    let roots = linalg::monic_roots(&p.coeffs[..p.degree()]);
    let mut out = Vec::with_capacity(roots.len());
    for z in roots {
        let m = z.norm();
        if (m - 1.0).abs() > ROOT_MODULUS_TOL {
            return Err(Error::NonUnimodularRoot {
                root: format!("{z}"),
                modulus: m,
            });
        }
        out.push(z / m);
    }
    out.sort_by(|a, b| arg_unit(*a).total_cmp(&arg_unit(*b)));
    Ok(out)
}

/// Argument in `[0, 2π)`.
pub fn arg_unit(z: Complex64) -> f64 {
    let a = z.arg();
    if a < 0.0 {
        a + 2.0 * PI
    } else {
        a
    }
}

/// Patterson map read off intensities, with fit diagnostics.
#[derive(Clone, Debug)]
pub struct RecoveredPatterson {
    pub map: PattersonMap,
    /// `|Im ν|` of each centre from the complex least-squares fit.
    pub residuals: Vec<f64>,
    /// Largest `|I_h - Σ ν cos(2π h·δ)|` over the complete set.
    pub fit_residual: f64,
    /// Largest `||λ| - 1|` over all pencil eigenvalues.
    pub max_modulus_error: f64,
    pub joint_diagonalization: bool,
}

fn to_complex(m: &RMatrix) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}

fn min_gap(v: &[Complex64]) -> f64 {
    let mut g = f64::INFINITY;
    for a in 0..v.len() {
        for b in a + 1..v.len() {
            g = g.min((v[a] - v[b]).norm());
        }
    }
    g
}

fn coordinate(z: Complex64) -> f64 {
    let x = wrap_unit(arg_unit(z) / (2.0 * PI));
    if 1.0 - x < 1e-12 {
        0.0
    } else {
        x
    }
}

/// Diagonal of `W⁻¹ M W`.
fn diag_in_basis(w: &CMatrix, w_inv: &CMatrix, m: &CMatrix) -> Vec<Complex64> {
    let t = w_inv * m * w;
    (0..t.nrows()).map(|j| t[(j, j)]).collect()
}

/// Recovers centres and weights from intensities over `C` and `C + e_d`.
pub fn recover_patterson(i: &IntensitySet, b: &BasicSet, residual_tol: f64) -> Result<RecoveredPatterson> {
    let dim = b.dim;
    let n = b.len();
    if n == 0 {
        return Ok(RecoveredPatterson {
            map: PattersonMap::empty(dim),
            residuals: Vec::new(),
            fit_residual: 0.0,
            max_modulus_error: 0.0,
            joint_diagonalization: false,
        });
    }
    let d0 = kh_matrix(i, &b.refs)?.d;
    let solver = RealSolver::new(&d0, 1e-14)?;
    let mut pencils: Vec<CMatrix> = Vec::with_capacity(dim);
    for axis in 0..dim {
        let e = Reflection::unit(dim, axis);
        let mut dd = RMatrix::zeros(n, n);
        for a in 0..n {
            for c in 0..n {
                dd[(a, c)] = i.require(&(b.refs[a] - b.refs[c] + e))?;
            }
        }
        let mut m = RMatrix::zeros(n, n);
        for c in 0..n {
            let col = solver.solve(&dd.column(c).into_owned())?;
            m.set_column(c, &col);
        }
        pencils.push(to_complex(&m));
    }

    let mut per_axis: Vec<(Vec<Complex64>, CMatrix)> = Vec::with_capacity(dim);
    for m in &pencils {
        per_axis.push(linalg::eigen_complex(m)?);
    }
    let distinct = per_axis.iter().all(|(l, _)| min_gap(l) > EIGEN_GAP_TOL);
    let (lambdas, joint) = if distinct {
        // greedy maximum-overlap pairing against the eigenvectors of axis 0
        let (l0, w0) = &per_axis[0];
        let mut lambdas = vec![vec![Complex64::new(0.0, 0.0); dim]; n];
        for j in 0..n {
            lambdas[j][0] = l0[j];
        }
        for d in 1..dim {
            let (ld, wd) = &per_axis[d];
            let mut overlaps: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
            for j in 0..n {
                for k in 0..n {
                    let o = (w0.column(j).adjoint() * wd.column(k))[(0, 0)].norm();
                    overlaps.push((o, j, k));
                }
            }
            overlaps.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut used_j = vec![false; n];
            let mut used_k = vec![false; n];
            for (_, j, k) in overlaps {
                if !used_j[j] && !used_k[k] {
                    used_j[j] = true;
                    used_k[k] = true;
                    lambdas[j][d] = ld[k];
                }
            }
        }
        (lambdas, false)
    } else {
        // complex weights with phases unrelated to rational grids
        const MIX: [[(f64, f64); 3]; 3] = [
            [(1.0, 0.0), (0.5, 1.0), (0.3, 2.3)],
            [(1.0, 0.0), (0.7, 2.1), (0.45, 0.4)],
            [(1.0, 0.0), (0.35, 4.0), (0.8, 5.1)],
        ];
        let mut best: Option<(f64, Vec<Complex64>, CMatrix)> = None;
        for mix in &MIX {
            let mut t = CMatrix::zeros(n, n);
            for (d, m) in pencils.iter().enumerate() {
                t += m * Complex64::from_polar(mix[d].0, mix[d].1);
            }
            let (lt, w) = linalg::eigen_complex(&t)?;
            let gap = min_gap(&lt);
            if best.as_ref().is_none_or(|b| gap > b.0) {
                best = Some((gap, lt, w));
            }
        }
        let (gap, _, w) = best.unwrap();
        if gap <= EIGEN_GAP_TOL * 1e-2 {
            return Err(Error::Inconsistent(
                "joint diagonalization cannot separate the centres".into(),
            ));
        }
        let w_inv = w
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("joint eigenvector matrix".into()))?;
        let diags: Vec<Vec<Complex64>> = pencils.iter().map(|m| diag_in_basis(&w, &w_inv, m)).collect();
        let lambdas = (0..n).map(|j| (0..dim).map(|d| diags[d][j]).collect()).collect();
        (lambdas, true)
    };

    let max_modulus_error = lambdas
        .iter()
        .flatten()
        .map(|z: &Complex64| (z.norm() - 1.0).abs())
        .fold(0.0, f64::max);
    let positions: Vec<Position> = lambdas
        .iter()
        .map(|l| Position::new(&l.iter().map(|z| coordinate(*z)).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;

    // weights: complex least squares of I_h = Σ ν exp(i2π h·δ) over C
    let fit_set: Vec<Reflection> = completeness_sets(b).c.into_iter().collect();
    let rows = fit_set.len();
    let e = CMatrix::from_fn(rows, n, |r, j| fit_set[r].phase(&positions[j]));
    let rhs = DVector::from_iterator(
        rows,
        fit_set
            .iter()
            .map(|h| i.require(h).map(|v| Complex64::new(v, 0.0)))
            .collect::<Result<Vec<_>>>()?,
    );
    let nu = e
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|m| Error::Singular(m.to_string()))?;
    let residuals: Vec<f64> = nu.iter().map(|z| z.im.abs()).collect();
    let weights: Vec<f64> = nu.iter().map(|z| z.re).collect();
    let mut fit_residual: f64 = 0.0;
    for r in 0..fit_set.len() {
        let model: f64 = (0..n).map(|j| weights[j] * e[(r, j)].re).sum();
        fit_residual = fit_residual.max((model - rhs[r].re).abs());
    }
    let scale: f64 = weights.iter().map(|w| w.abs()).sum::<f64>().max(1.0);
    if fit_residual > residual_tol * scale {
        return Err(Error::Inconsistent(format!(
            "Patterson fit residual {fit_residual:.3e} exceeds {:.3e}",
            residual_tol * scale
        )));
    }
    let centres = positions
        .into_iter()
        .zip(&weights)
        .map(|(delta, &weight)| Centre { weight, delta })
        .collect();
    let map = PattersonMap::new(dim, centres)?;
    Ok(RecoveredPatterson {
        map,
        residuals,
        fit_residual,
        max_modulus_error,
        joint_diagonalization: joint,
    })
}

/// Outcome of [`deconvolve_to_atoms`].
#[derive(Clone, Debug)]
pub struct Deconvolution {
    /// Canonicalized, duplicates removed; enantiomorphs kept.
    pub structures: Vec<CrystalStructure>,
    pub diagnostic: String,
}

impl Deconvolution {
    /// More than one solution even after identifying enantiomorphs.
    pub fn is_homometric(&self, tol: f64) -> bool {
        let mut classes: Vec<&CrystalStructure> = Vec::new();
        for s in &self.structures {
            let seen = classes
                .iter()
                .any(|c| c.distance_mod_symmetry(s, tol).is_some_and(|d| d <= tol));
            if !seen {
                classes.push(s);
            }
        }
        classes.len() > 1
    }
}

fn distinct_permutations(items: &[f64]) -> Vec<Vec<f64>> {
    let mut v = items.to_vec();
    v.sort_by(f64::total_cmp);
    let mut out = vec![v.clone()];
    // lexicographic next permutation over the sorted multiset
    loop {
        let n = v.len();
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| v[i] < v[i + 1]) else {
            break;
        };
        let j = (i + 1..n).rev().find(|&j| v[j] > v[i]).unwrap();
        v.swap(i, j);
        v[i + 1..].reverse();
        out.push(v.clone());
    }
    out
}

/// Translation-canonical form: the origin is moved to each atom in turn and
/// the lexicographically smallest sorted atom list is kept.
pub fn canonicalize(s: &CrystalStructure) -> CrystalStructure {
    let key = |atoms: &[Atom]| -> Vec<(i64, i64, i64, i64)> {
        atoms
            .iter()
            .map(|a| {
                let c = a.position.coords();
                let q = |x: f64| ((x * 1e9).round() as i64).rem_euclid(1_000_000_000);
                (q(c[0]), q(c[1]), if c.len() > 2 { q(c[2]) } else { 0 }, (a.charge * 1e9).round() as i64)
            })
            .collect()
    };
    let mut best: Option<(Vec<(i64, i64, i64, i64)>, Vec<Atom>)> = None;
    for a in s.atoms() {
        let moved = s.translated(&a.position.mirrored());
        let mut atoms = moved.atoms().to_vec();
        let snap = |x: f64| if x > 1.0 - 1e-12 { 0.0 } else { x };
        for at in &mut atoms {
            let c: Vec<f64> = at.position.coords().iter().map(|&x| snap(x)).collect();
            at.position = Position::new(&c).unwrap();
        }
        atoms.sort_by_key(|x| key(std::slice::from_ref(x)));
        let k = key(&atoms);
        if best.as_ref().is_none_or(|(bk, _)| k < *bk) {
            best = Some((k, atoms));
        }
    }
    let (_, atoms) = best.expect("structures are nonempty");
    CrystalStructure::new(s.dim(), atoms).expect("translation keeps validity")
}

/// Brute-force search for atomic configurations whose Patterson map matches
/// `p` within `pos_tol` (positions) and `weight_tol` (weights, relative to
/// the weight scale). Atom 1 sits at the origin.
pub fn deconvolve_to_atoms(p: &PattersonMap, charges: &[f64], pos_tol: f64, weight_tol: f64) -> Result<Deconvolution> {
    let n = charges.len();
    if n == 0 {
        return Err(Error::EmptyInput("charge list"));
    }
    if n > MAX_DECONVOLUTION_ATOMS {
        return Err(Error::GuardExceeded(format!(
            "{n} atoms exceed the brute-force limit of {MAX_DECONVOLUTION_ATOMS}"
        )));
    }
    if charges.iter().any(|z| !z.is_finite() || *z == 0.0) {
        return Err(Error::InvalidStructure("charges must be finite and nonzero".into()));
    }
    let dim = p.dim();
    if n == 1 {
        if p.nbar() == 0 {
            let s = CrystalStructure::new(
                dim,
                vec![Atom {
                    charge: charges[0],
                    position: Position::origin(dim),
                }],
            )?;
            return Ok(Deconvolution {
                structures: vec![s],
                diagnostic: "single atom".into(),
            });
        }
        return Ok(Deconvolution {
            structures: Vec::new(),
            diagnostic: "one atom cannot produce off-origin centres".into(),
        });
    }
    let deltas = p.positions();
    let perms = distinct_permutations(charges);
    let origin = Position::origin(dim);
    let has_centre = |d: &Position| p.find(d, pos_tol).is_some();

    let found: Vec<CrystalStructure> = (0..deltas.len())
        .into_par_iter()
        .flat_map_iter(|first| {
            let mut results = Vec::new();
            let mut chosen = vec![first];
            extend_choice(&deltas, n - 1, &mut chosen, &has_centre, &mut |set: &[usize]| {
                let mut positions = vec![origin];
                positions.extend(set.iter().map(|&j| deltas[j]));
                for perm in &perms {
                    let atoms: Vec<Atom> = positions
                        .iter()
                        .zip(perm)
                        .map(|(pos, &charge)| Atom { charge, position: *pos })
                        .collect();
                    let Ok(s) = CrystalStructure::new(dim, atoms) else { continue };
                    if compute_patterson(&s).approx_eq(p, pos_tol, weight_tol) {
                        results.push(canonicalize(&s));
                    }
                }
            });
            results
        })
        .collect();

    let mut unique: Vec<CrystalStructure> = Vec::new();
    for s in found {
        let dup = unique
            .iter()
            .any(|u| u.distance_mod_translation(&s, 1e-9).is_some_and(|d| d <= pos_tol));
        if !dup {
            unique.push(s);
        }
    }
    unique.sort_by(|a, b| {
        let ka: Vec<f64> = a.atoms().iter().flat_map(|x| x.position.coords().to_vec()).collect();
        let kb: Vec<f64> = b.atoms().iter().flat_map(|x| x.position.coords().to_vec()).collect();
        ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
    });
    let diagnostic = if unique.is_empty() {
        "no atomic configuration reproduces the Patterson map".to_string()
    } else {
        format!("{} configuration(s) up to translation", unique.len())
    };
    Ok(Deconvolution {
        structures: unique,
        diagnostic,
    })
}

/// Grows an increasing index list to `size` entries, keeping every pairwise
/// difference on a map centre.
fn extend_choice(
    deltas: &[Position],
    size: usize,
    chosen: &mut Vec<usize>,
    has_centre: &dyn Fn(&Position) -> bool,
    accept: &mut dyn FnMut(&[usize]),
) {
    if chosen.len() == size {
        accept(chosen);
        return;
    }
    let start = *chosen.last().unwrap() + 1;
    for next in start..deltas.len() {
        let ok = chosen
            .iter()
            .all(|&j| has_centre(&deltas[next].difference(&deltas[j])));
        if ok {
            chosen.push(next);
            extend_choice(deltas, size, chosen, has_centre, accept);
            chosen.pop();
        }
    }
}

/// Multiplicity of each distinct charge, for diagnostics.
pub fn charge_census(charges: &[f64]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for z in charges {
        *m.entry(format!("{z}")).or_insert(0) += 1;
    }
    m
}
