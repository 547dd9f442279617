//! Expansion coefficients and extension of the diffraction pattern from the
//! complete and complementary sets.
//!
//! Every lattice vector `|h⟩` is a real combination `Σ_j A_{h,j} |k_j⟩` of
//! the basic-set vectors. Solving the KH system once per recorded zero gives
//! the matrices of the unit shifts `|k⟩ -> |k + e_d⟩` in that basis; powers
//! of these reach any `h`, and `I_{a-b} = A_aᵀ D A_b` with `D` the KH matrix
//! of the basic set. When the shift matrices cannot be formed, extension
//! falls back to a shell-by-shell search for translated systems whose data
//! are already known.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::basis::BasicSet;
use crate::error::{Error, Result};
use crate::lattice::kh_matrix;
use crate::linalg::{RMatrix, RealSolver};
use crate::model::{box_reflections, IntensitySet, Reflection};

/// Spectral-ratio floor for the basic-set KH matrix in linear solves.
pub const SOLVE_TOL: f64 = 1e-13;

/// Coefficients of `|h⟩` against the basic-set vectors, in basic-set order.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionRow {
    pub target: Reflection,
    pub coeffs: Vec<f64>,
}

/// Factorized KH matrix of a basic set, reused for every right-hand side.
pub struct ExpansionSolver {
    pub refs: Vec<Reflection>,
    pub d: RMatrix,
    solver: RealSolver,
}

impl ExpansionSolver {
    pub fn new(b: &BasicSet, i: &IntensitySet, rel_tol: f64) -> Result<ExpansionSolver> {
        if b.is_empty() {
            return Err(Error::EmptyInput("basic set"));
        }
        let d = kh_matrix(i, &b.refs)?.d;
        let solver = RealSolver::new(&d, rel_tol)?;
        Ok(ExpansionSolver {
            refs: b.refs.clone(),
            d,
            solver,
        })
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    /// Solves `Σ_j A_j I_{k_l - k_j} = r_l`.
    pub fn solve_rhs(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let x = self.solver.solve(&DVector::from_column_slice(rhs))?;
        Ok(x.iter().copied().collect())
    }

    /// Row for `h` from `I_{k_l - h}`; basic-set members give unit rows.
    pub fn row(&self, i: &IntensitySet, h: &Reflection) -> Result<ExpansionRow> {
        let n = self.len();
        if let Some(j) = self.refs.iter().position(|k| k == h) {
            let mut coeffs = vec![0.0; n];
            coeffs[j] = 1.0;
            return Ok(ExpansionRow { target: *h, coeffs });
        }
        let rhs: Vec<f64> = self
            .refs
            .iter()
            .map(|k| i.require(&(*k - *h)))
            .collect::<Result<_>>()?;
        Ok(ExpansionRow {
            target: *h,
            coeffs: self.solve_rhs(&rhs)?,
        })
    }

    /// `Σ_l |D A - r|_l` for a solved row, the linear-solve residual.
    pub fn residual(&self, i: &IntensitySet, row: &ExpansionRow) -> Result<f64> {
        let a = DVector::from_column_slice(&row.coeffs);
        let da = &self.d * a;
        let mut worst: f64 = 0.0;
        for (l, k) in self.refs.iter().enumerate() {
            worst = worst.max((da[l] - i.require(&(*k - row.target))?).abs());
        }
        Ok(worst)
    }
}

/// Solves the KH system of `b` for target `h`.
pub fn expansion_coefficients(b: &BasicSet, i: &IntensitySet, h: &Reflection) -> Result<ExpansionRow> {
    ExpansionSolver::new(b, i, SOLVE_TOL)?.row(i, h)
}

/// `I_h = Σ_j A_{h,j} I_{k_j}`.
pub fn intensity_from_row(b: &BasicSet, i: &IntensitySet, row: &ExpansionRow) -> Result<f64> {
    let mut acc = 0.0;
    for (a, k) in row.coeffs.iter().zip(&b.refs) {
        acc += a * i.require(k)?;
    }
    Ok(acc)
}

/// Complete set `C` (basic-set differences) and complementary set `F`
/// (zero minus basic-set differences, Friedel-closed, outside `C`).
#[derive(Clone, Debug, PartialEq)]
pub struct CompletenessSets {
    pub c: BTreeSet<Reflection>,
    pub f: BTreeSet<Reflection>,
}

impl CompletenessSets {
    pub fn union(&self) -> BTreeSet<Reflection> {
        self.c.union(&self.f).copied().collect()
    }
}

pub fn completeness_sets(b: &BasicSet) -> CompletenessSets {
    let mut c = BTreeSet::new();
    for a in &b.refs {
        for k in &b.refs {
            c.insert(*a - *k);
        }
    }
    let mut f = BTreeSet::new();
    for z in &b.zeros {
        for k in &b.refs {
            for h in [*z - *k, *k - *z] {
                if !c.contains(&h) {
                    f.insert(h);
                }
            }
        }
    }
    CompletenessSets { c, f }
}

/// Result of [`extend_pattern`].
#[derive(Clone, Debug)]
pub struct Extension {
    pub intensities: IntensitySet,
    /// Window reflections that could not be reached.
    pub gaps: Vec<Reflection>,
    pub method: ExtensionMethod,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtensionMethod {
    ShiftOperators,
    ShellSearch,
}

/// Shift matrices in the basic-set basis, one per scan slot.
struct ShiftOperators {
    forward: Vec<RMatrix>,
    backward: Vec<RMatrix>,
    origin: usize,
}

fn unit(n: usize, j: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[j] = 1.0;
    v
}

impl ShiftOperators {
    fn build(b: &BasicSet, i: &IntensitySet, solver: &ExpansionSolver) -> Result<ShiftOperators> {
        let dim = b.dim;
        let n = b.len();
        let origin = b
            .index_of(&Reflection::zero(dim))
            .ok_or_else(|| Error::Inconsistent("basic set lacks the origin".into()))?;
        let scan: Vec<[i32; 3]> = b.refs.iter().map(|h| b.axis.to_scan(h)).collect::<Result<_>>()?;
        let zscan: Vec<[i32; 3]> = b.zeros.iter().map(|h| b.axis.to_scan(h)).collect::<Result<_>>()?;
        let mut zero_coeffs = Vec::with_capacity(b.zeros.len());
        for z in &b.zeros {
            zero_coeffs.push(DVector::from_vec(solver.row(i, z)?.coeffs));
        }
        let mut forward: Vec<RMatrix> = Vec::new();
        for slot in 0..dim {
            let mut t = RMatrix::zeros(n, n);
            for (col, s) in scan.iter().enumerate() {
                let mut g = *s;
                g[slot] += 1;
                let v = match scan.iter().position(|x| *x == g) {
                    Some(j) => unit(n, j),
                    None => {
                        // a zero in the same layer, either closing row g[1]
                        // at or before g[0], or closing the layer at (0, z1)
                        let pick = zscan.iter().enumerate().find(|(_, z)| {
                            z[2] == g[2] && ((z[1] == g[1] && z[0] <= g[0]) || (z[0] == 0 && z[1] <= g[1]))
                        });
                        let (zi, z) = pick.ok_or_else(|| {
                            Error::Inconsistent(format!("no recorded zero below scan index {g:?}"))
                        })?;
                        let steps = [g[0] - z[0], g[1] - z[1]];
                        if steps[1] > 0 && forward.len() < 2 {
                            return Err(Error::Inconsistent("shift order violated".into()));
                        }
                        let mut v = zero_coeffs[zi].clone();
                        for _ in 0..steps[1] {
                            v = &forward[1] * v;
                        }
                        for _ in 0..steps[0] {
                            v = &forward[0] * v;
                        }
                        v
                    }
                };
                t.set_column(col, &v);
            }
            forward.push(t);
        }
        let mut backward = Vec::with_capacity(dim);
        for t in &forward {
            if crate::linalg::spectral_ratio(t) < 1e-14 {
                return Err(Error::Singular("shift operator".into()));
            }
            backward.push(
                t.clone()
                    .try_inverse()
                    .ok_or_else(|| Error::Singular("shift operator".into()))?,
            );
        }
        Ok(ShiftOperators {
            forward,
            backward,
            origin,
        })
    }

    fn apply(&self, scan: [i32; 3], n: usize) -> DVector<f64> {
        let mut v = unit(n, self.origin);
        for (slot, &steps) in scan.iter().enumerate().take(self.forward.len()) {
            let m = if steps >= 0 { &self.forward[slot] } else { &self.backward[slot] };
            for _ in 0..steps.unsigned_abs() {
                v = m * v;
            }
        }
        v
    }
}

fn chebyshev_shells(window: &[u32]) -> Result<Vec<Reflection>> {
    let mut refs = box_reflections(window)?;
    refs.sort_by_key(|h| (h.chebyshev(), *h));
    Ok(refs)
}

/// Checks that `i0` holds every reflection of `C ∪ F`.
pub fn check_coverage(i0: &IntensitySet, b: &BasicSet) -> Result<()> {
    let sets = completeness_sets(b);
    for h in sets.union() {
        i0.require(&h)?;
    }
    Ok(())
}

/// Extends `i0` (covering `C ∪ F`) to every reflection of the box window.
/// Known entries are copied unchanged.
pub fn extend_pattern(i0: &IntensitySet, b: &BasicSet, window: &[u32]) -> Result<Extension> {
    if window.len() != b.dim || i0.dim() != b.dim {
        return Err(Error::DimensionMismatch {
            expected: b.dim,
            found: window.len(),
        });
    }
    check_coverage(i0, b)?;
    let targets = chebyshev_shells(window)?;
    if b.is_empty() {
        // all-zero pattern
        let mut out = i0.clone();
        for h in &targets {
            if !out.contains(h) {
                out.insert(*h, 0.0)?;
            }
        }
        return Ok(Extension {
            intensities: out,
            gaps: Vec::new(),
            method: ExtensionMethod::ShiftOperators,
        });
    }
    let solver = ExpansionSolver::new(b, i0, SOLVE_TOL)?;
    match ShiftOperators::build(b, i0, &solver) {
        Ok(ops) => {
            let n = b.len();
            let pending: Vec<Reflection> = targets.iter().copied().filter(|h| !i0.contains(h)).collect();
            let values: Vec<(Reflection, f64)> = pending
                .par_iter()
                .map(|h| {
                    let s = b.axis.to_scan(h).expect("dimension checked");
                    let mut a = [0; 3];
                    let mut c = [0; 3];
                    for d in 0..3 {
                        a[d] = s[d].div_euclid(2) + s[d].rem_euclid(2);
                        c[d] = a[d] - s[d];
                    }
                    let va = ops.apply(a, n);
                    let vb = ops.apply(c, n);
                    (*h, va.dot(&(&solver.d * vb)))
                })
                .collect();
            let mut out = i0.clone();
            for (h, v) in values {
                if !out.contains(&h) {
                    out.insert(h, v)?;
                }
            }
            Ok(Extension {
                intensities: out,
                gaps: Vec::new(),
                method: ExtensionMethod::ShiftOperators,
            })
        }
        Err(_) => shell_search(i0, b, &solver, &targets),
    }
}

/// Fills `h` from a translated system: for an offset `w` with every
/// `I_{k+w}` and `I_{k+w+h}` known, `I_h = Σ_j A_j I_{k_j+w+h}` where `A`
/// solves `D A = (I_{k_l+w})_l`.
fn shell_search(
    i0: &IntensitySet,
    b: &BasicSet,
    solver: &ExpansionSolver,
    targets: &[Reflection],
) -> Result<Extension> {
    let mut out = i0.clone();
    let reach = targets.iter().map(|h| h.chebyshev()).max().unwrap_or(0) * 2 + 2;
    let offsets = chebyshev_shells(&vec![reach as u32; b.dim])?;
    loop {
        let mut progress = false;
        for h in targets {
            if out.contains(h) {
                continue;
            }
            for w in &offsets {
                let known = b
                    .refs
                    .iter()
                    .all(|k| out.contains(&(*k + *w)) && out.contains(&(*k + *w + *h)));
                if !known {
                    continue;
                }
                let rhs: Vec<f64> = b.refs.iter().map(|k| out.get(&(*k + *w)).unwrap()).collect();
                let a = solver.solve_rhs(&rhs)?;
                let v: f64 = a
                    .iter()
                    .zip(&b.refs)
                    .map(|(aj, k)| aj * out.get(&(*k + *w + *h)).unwrap())
                    .sum();
                out.insert(*h, v)?;
                progress = true;
                break;
            }
        }
        if !progress {
            break;
        }
    }
    let gaps: Vec<Reflection> = targets
        .iter()
        .filter(|h| !out.contains(h))
        .map(|h| h.canonical())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    Ok(Extension {
        intensities: out,
        gaps,
        method: ExtensionMethod::ShellSearch,
    })
}

/// Outcome of [`check_consistency`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConsistencyReport {
    pub checked: usize,
    /// Pairs lacking a needed row.
    pub skipped: usize,
    /// Violation over `1 + Σ|terms|` of the relation.
    pub max_violation: f64,
    pub max_abs_violation: f64,
    pub worst_pair: Option<(Reflection, Reflection)>,
}

/// Checks `A_{h-h',l} = Σ_{j,j'} A_{h,j} A_{h',j'} A_{k_j-k_j',l}` on each
/// pair, using the supplied rows.
pub fn check_consistency(
    b: &BasicSet,
    rows: &BTreeMap<Reflection, ExpansionRow>,
    pairs: &[(Reflection, Reflection)],
) -> ConsistencyReport {
    let n = b.len();
    let mut report = ConsistencyReport::default();
    let mut diff_rows: Vec<Vec<Option<&ExpansionRow>>> = vec![vec![None; n]; n];
    for j in 0..n {
        for jp in 0..n {
            diff_rows[j][jp] = rows.get(&(b.refs[j] - b.refs[jp]));
        }
    }
    let all_diffs = diff_rows.iter().flatten().all(|r| r.is_some());
    for (h, hp) in pairs {
        let (Some(rh), Some(rhp), Some(rd)) = (rows.get(h), rows.get(hp), rows.get(&(*h - *hp))) else {
            report.skipped += 1;
            continue;
        };
        if !all_diffs {
            report.skipped += 1;
            continue;
        }
        for l in 0..n {
            let mut rhs = 0.0;
            let mut size = 1.0 + rd.coeffs[l].abs();
            for j in 0..n {
                for jp in 0..n {
                    let t = rh.coeffs[j] * rhp.coeffs[jp] * diff_rows[j][jp].unwrap().coeffs[l];
                    rhs += t;
                    size += t.abs();
                }
            }
            let abs = (rd.coeffs[l] - rhs).abs();
            let v = abs / size;
            report.max_abs_violation = report.max_abs_violation.max(abs);
            if v > report.max_violation || report.worst_pair.is_none() {
                report.max_violation = report.max_violation.max(v);
                report.worst_pair = Some((*h, *hp));
            }
        }
        report.checked += 1;
    }
    report
}

/// Rows for every target whose right-hand side is available in `i`.
pub fn solve_rows(
    solver: &ExpansionSolver,
    i: &IntensitySet,
    targets: impl IntoIterator<Item = Reflection>,
) -> BTreeMap<Reflection, ExpansionRow> {
    targets
        .into_iter()
        .filter_map(|h| solver.row(i, &h).ok().map(|r| (h, r)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::principal_basic_set_from_geometry;
    use crate::model::{subtracted_intensity, synth_at, synth_window_from_patterson, Centre, Mode, PattersonMap, Position, Axis};

    fn map(c: &[(f64, [f64; 2])]) -> PattersonMap {
        PattersonMap::new(
            2,
            c.iter()
                .map(|(w, d)| Centre {
                    weight: *w,
                    delta: Position::new(d).unwrap(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn r2(h: i32, k: i32) -> Reflection {
        Reflection::new2(h, k)
    }

    fn three_centre() -> PattersonMap {
        map(&[(1.5, [0.5, 0.0]), (0.8, [0.25, 0.3]), (0.8, [0.75, 0.7])])
    }

    #[test]
    fn unit_row_for_members() {
        let p = three_centre();
        let b = principal_basic_set_from_geometry(&p, Axis::A, Mode::Xray).unwrap();
        let i = synth_window_from_patterson(&p, &[4, 4]).unwrap();
        for (j, k) in b.refs.iter().enumerate() {
            let row = expansion_coefficients(&b, &i, k).unwrap();
            for (l, v) in row.coeffs.iter().enumerate() {
                assert_eq!(*v, if l == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn single_centre_row() {
        let p = map(&[(1.0, [0.5, 0.0])]);
        let b = principal_basic_set_from_geometry(&p, Axis::A, Mode::Xray).unwrap();
        let i = synth_window_from_patterson(&p, &[2, 2]).unwrap();
        let row = expansion_coefficients(&b, &i, &r2(1, 0)).unwrap();
        assert!((row.coeffs[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn row_reproduces_intensity_outside_c() {
        let p = three_centre();
        let b = principal_basic_set_from_geometry(&p, Axis::A, Mode::Xray).unwrap();
        let i = synth_window_from_patterson(&p, &[8, 8]).unwrap();
        let c = completeness_sets(&b).c;
        let solver = ExpansionSolver::new(&b, &i, SOLVE_TOL).unwrap();
        for h in [r2(3, 2), r2(-4, 1), r2(2, -3)] {
            assert!(!c.contains(&h));
            let row = solver.row(&i, &h).unwrap();
            assert!(solver.residual(&i, &row).unwrap() < 1e-9);
            let v = intensity_from_row(&b, &i, &row).unwrap();
            let direct = subtracted_intensity(&p, &h).unwrap();
            assert!((v - direct).abs() <= 1e-8 * p.intensity_scale());
        }
    }

    #[test]
    fn completeness_examples() {
        let p = map(&[(2.0, [0.25, 0.0]), (2.0, [0.75, 0.0])]);
        let b = principal_basic_set_from_geometry(&p, Axis::A, Mode::Xray).unwrap();
        assert_eq!(b.zeros, vec![r2(2, 0), r2(0, 1)]);
        let s = completeness_sets(&b);
        assert_eq!(s.c, [r2(0, 0), r2(1, 0), r2(-1, 0)].into_iter().collect());
        let f: BTreeSet<Reflection> =
            [r2(2, 0), r2(-2, 0), r2(0, 1), r2(0, -1), r2(-1, 1), r2(1, -1)].into_iter().collect();
        assert_eq!(s.f, f);
        let q = three_centre();
        let b3 = principal_basic_set_from_geometry(&q, Axis::A, Mode::Xray).unwrap();
        assert!(completeness_sets(&b3).c.len() <= 7);
    }

    #[test]
    fn extension_inside_c_and_f_is_identity() {
        let p = map(&[(2.0, [0.25, 0.0]), (2.0, [0.75, 0.0])]);
        let b = principal_basic_set_from_geometry(&p, Axis::A, Mode::Xray).unwrap();
        let cf = completeness_sets(&b).union();
        let i0 = synth_at(&p, &cf).unwrap();
        let ext = extend_pattern(&i0, &b, &[1, 0]).unwrap();
        for (h, v) in i0.iter() {
            assert_eq!(ext.intensities.get(&h), Some(v));
        }
    }

    #[test]
    fn extension_matches_synthesis() {
        for p in [
            map(&[(2.0, [0.25, 0.0]), (2.0, [0.75, 0.0])]),
            map(&[(1.0, [0.5, 0.5])]),
            three_centre(),
        ] {
            let b = principal_basic_set_from_geometry(&p, Axis::A, Mode::Xray).unwrap();
            let i0 = synth_at(&p, &completeness_sets(&b).union()).unwrap();
            let ext = extend_pattern(&i0, &b, &[4, 4]).unwrap();
            assert!(ext.gaps.is_empty());
            for h in box_reflections(&[4, 4]).unwrap() {
                let got = ext.intensities.get(&h).unwrap();
                let want = subtracted_intensity(&p, &h).unwrap();
                assert!((got - want).abs() <= 1e-6 * p.intensity_scale(), "{h}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn extension_missing_data() {
        let p = three_centre();
        let b = principal_basic_set_from_geometry(&p, Axis::A, Mode::Xray).unwrap();
        let i0 = synth_at(&p, &[r2(0, 0)]).unwrap();
        assert!(matches!(extend_pattern(&i0, &b, &[2, 2]), Err(Error::MissingReflection(_))));
    }

    #[test]
    fn consistency_trivial_pairs() {
        let p = three_centre();
        let b = principal_basic_set_from_geometry(&p, Axis::A, Mode::Xray).unwrap();
        let i = synth_window_from_patterson(&p, &[8, 8]).unwrap();
        let solver = ExpansionSolver::new(&b, &i, SOLVE_TOL).unwrap();
        let rows = solve_rows(&solver, &i, box_reflections(&[3, 3]).unwrap());
        let z = r2(0, 0);
        let r = check_consistency(&b, &rows, &[(z, z), (r2(2, 1), z), (r2(2, 1), r2(-1, 3))]);
        assert_eq!(r.checked, 3);
        assert!(r.max_violation < 1e-8, "{r:?}");
    }
}
