//! The structured matrix `V` of lattice vectors, Karle-Hauptman matrices and
//! their determinants, numerically and in closed product form.
//!
//! Centres are grouped by their projection on the scan axis (columns), then
//! by the second scan coordinate (rows), then by the third (nodes). A 2D map
//! is handled as a 3D one whose rows hold exactly one node. With
//! `ξ = exp(-i2π x)`, `η = exp(-i2π y)`, `ζ = exp(-i2π z)` the determinant of
//! `V` over the principal basic set is
//!
//! ```text
//! ∏_{ı<ı'} (ξ_ı' - ξ_ı)^min(P_ı, P_ı') · ∏_ı ∏_{ȷ<ȷ'} (η_ıȷ' - η_ıȷ)^min(q_ıȷ, q_ıȷ') · ∏_{ıȷ} ∏_{ℓ<ℓ'} (ζ_ıȷℓ' - ζ_ıȷℓ)
//! ```
//!
//! where `P_ı` counts the centres of column `ı` and `q_ıȷ` those of row
//! `(ı, ȷ)`. In 3D the product is exact only when the profiles are nested
//! (`p_ı` non-increasing and `q_ıȷ >= q_{ı+1}ȷ`).

use std::cmp::Ordering;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, Precision, RMatrix};
use crate::model::{circle_distance, Axis, IntensitySet, PattersonMap, Reflection, MERGE_TOL};

/// Largest number of minors [`bezout_expansion`] will enumerate.
pub const BEZOUT_LIMIT: u128 = 10_000_000;

/// `V_{ĵ,l} = exp(-i2π k_l·δ_ĵ)`.
#[derive(Clone, Debug)]
pub struct LatticeMatrix {
    pub refs: Vec<Reflection>,
    pub v: CMatrix,
}

impl LatticeMatrix {
    pub fn nbar(&self) -> usize {
        self.v.nrows()
    }

    pub fn det(&self, precision: Precision) -> Complex64 {
        linalg::det_with(&self.v, precision)
    }

    pub fn rank(&self, rel_tol: f64) -> usize {
        linalg::numerical_rank(&self.v, rel_tol)
    }
}

pub fn build_v(p: &PattersonMap, refs: &[Reflection]) -> Result<LatticeMatrix> {
    if refs.is_empty() {
        return Err(Error::EmptyInput("reflection list"));
    }
    for h in refs {
        if h.dim() != p.dim() {
            return Err(Error::DimensionMismatch {
                expected: p.dim(),
                found: h.dim(),
            });
        }
    }
    let v = CMatrix::from_fn(p.nbar(), refs.len(), |j, l| {
        refs[l].phase(&p.centres()[j].delta).conj()
    });
    Ok(LatticeMatrix {
        refs: refs.to_vec(),
        v,
    })
}

/// Builds `V` with rows in the order given by `rows` (centre indices).
pub fn build_v_ordered(p: &PattersonMap, rows: &[usize], refs: &[Reflection]) -> LatticeMatrix {
    let v = CMatrix::from_fn(rows.len(), refs.len(), |j, l| {
        refs[l].phase(&p.centres()[rows[j]].delta).conj()
    });
    LatticeMatrix {
        refs: refs.to_vec(),
        v,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KhKind {
    Intensity,
    JQuadratic,
}

/// Anything able to supply the `(a, b)` entry of a Gram-type matrix.
pub trait KhSource {
    fn kind(&self) -> KhKind;
    fn entry(&self, a: &Reflection, b: &Reflection) -> Result<f64>;
}

impl KhSource for IntensitySet {
    fn kind(&self) -> KhKind {
        KhKind::Intensity
    }

    fn entry(&self, a: &Reflection, b: &Reflection) -> Result<f64> {
        self.require(&(*a - *b))
    }
}

/// Real symmetric Gram matrix over a reflection list.
#[derive(Clone, Debug)]
pub struct KhMatrix {
    pub kind: KhKind,
    pub refs: Vec<Reflection>,
    pub d: RMatrix,
}

impl KhMatrix {
    pub fn size(&self) -> usize {
        self.refs.len()
    }

    pub fn det(&self) -> f64 {
        linalg::det_real(&self.d)
    }

    pub fn spectral_ratio(&self) -> f64 {
        linalg::spectral_ratio(&self.d)
    }
}

/// `D_{ı,ℓ} = source(h_ı, h_ℓ)`; only the upper triangle is queried so the
/// result is exactly symmetric.
pub fn kh_matrix<S: KhSource + ?Sized>(src: &S, refs: &[Reflection]) -> Result<KhMatrix> {
    let n = refs.len();
    let mut d = RMatrix::zeros(n, n);
    for i in 0..n {
        for l in i..n {
            let v = src.entry(&refs[i], &refs[l])?;
            d[(i, l)] = v;
            d[(l, i)] = v;
        }
    }
    Ok(KhMatrix {
        kind: src.kind(),
        refs: refs.to_vec(),
        d,
    })
}

/// `Re(V† diag(ν) V)`, the factorized form of the intensity KH matrix.
pub fn kh_from_factorization(p: &PattersonMap, refs: &[Reflection]) -> Result<RMatrix> {
    let v = build_v(p, refs)?.v;
    let nu = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        p.nbar(),
        p.weights().into_iter().map(|w| Complex64::new(w, 0.0)),
    ));
    let d = v.adjoint() * nu * &v;
    Ok(d.map(|z| z.re))
}

/// One row of a column: centres sharing the first two scan coordinates.
#[derive(Clone, Debug)]
pub struct ProfileRow {
    pub y: f64,
    /// Centre indices, sorted by the third scan coordinate.
    pub nodes: Vec<usize>,
}

/// Centres sharing their projection on the scan axis.
#[derive(Clone, Debug)]
pub struct ProfileColumn {
    pub x: f64,
    pub rows: Vec<ProfileRow>,
}

impl ProfileColumn {
    pub fn size(&self) -> usize {
        self.rows.iter().map(|r| r.nodes.len()).sum()
    }

    fn q_vector(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.nodes.len()).collect()
    }
}

/// Column/row/node grouping of a Patterson map along a scan axis.
#[derive(Clone, Debug)]
pub struct ShapeProfile {
    pub dim: usize,
    pub axis: Axis,
    pub columns: Vec<ProfileColumn>,
}

fn cluster(values: &[(usize, f64)]) -> Vec<(f64, Vec<usize>)> {
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for &(i, v) in values {
        match groups.iter_mut().find(|g| circle_distance(g.0, v) <= MERGE_TOL) {
            Some(g) => g.1.push(i),
            None => groups.push((v, vec![i])),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    groups
}

impl ShapeProfile {
    pub fn new(p: &PattersonMap, axis: Axis) -> Result<ShapeProfile> {
        let dim = p.dim();
        let perm = axis.permutation(dim)?;
        let c = p.centres();
        let coord = |i: usize, slot: usize| -> f64 {
            if slot < dim {
                c[i].delta.get(perm[slot])
            } else {
                0.0
            }
        };
        let all: Vec<(usize, f64)> = (0..c.len()).map(|i| (i, coord(i, 0))).collect();
        let mut columns: Vec<ProfileColumn> = cluster(&all)
            .into_iter()
            .map(|(x, members)| {
                let ys: Vec<(usize, f64)> = members.iter().map(|&i| (i, coord(i, 1))).collect();
                let mut rows: Vec<ProfileRow> = cluster(&ys)
                    .into_iter()
                    .map(|(y, mut nodes)| {
                        nodes.sort_by(|&a, &b| coord(a, 2).total_cmp(&coord(b, 2)));
                        ProfileRow { y, nodes }
                    })
                    .collect();
                // stable: equal sizes keep ascending y
                rows.sort_by(|a, b| b.nodes.len().cmp(&a.nodes.len()));
                ProfileColumn { x, rows }
            })
            .collect();
        // stable: equal shapes keep ascending x
        columns.sort_by(|a, b| match b.size().cmp(&a.size()) {
            Ordering::Equal => b.q_vector().cmp(&a.q_vector()),
            o => o,
        });
        Ok(ShapeProfile { dim, axis, columns })
    }

    pub fn nbar(&self) -> usize {
        self.columns.iter().map(|c| c.size()).sum()
    }

    /// `M`, the number of distinct projections on the scan axis.
    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    /// Column sizes `P_ı` (the heights `m_r` in 2D).
    pub fn column_sizes(&self) -> Vec<usize> {
        self.columns.iter().map(|c| c.size()).collect()
    }

    /// Row counts `p_ı` per column.
    pub fn p(&self) -> Vec<usize> {
        self.columns.iter().map(|c| c.rows.len()).collect()
    }

    /// Row sizes `q_{ı,ȷ}`.
    pub fn q(&self) -> Vec<Vec<usize>> {
        self.columns.iter().map(|c| c.q_vector()).collect()
    }

    /// Column heights `m_1 >= … >= m_M` (2D).
    pub fn m(&self) -> Vec<usize> {
        self.column_sizes()
    }

    /// Row widths `μ_s = #{r : m_r >= s}`, the conjugate partition (2D).
    pub fn mu(&self) -> Vec<usize> {
        let m = self.m();
        let top = m.first().copied().unwrap_or(0);
        (1..=top).map(|s| m.iter().filter(|&&v| v >= s).count()).collect()
    }

    /// Whether the per-column profiles are nested, the condition under which
    /// the closed product form holds. Always true in 2D.
    pub fn is_nested(&self) -> bool {
        let q = self.q();
        q.windows(2).all(|w| {
            w[1].len() <= w[0].len() && w[1].iter().zip(&w[0]).all(|(b, a)| b <= a)
        })
    }

    /// Centre indices in column, row, node order.
    pub fn node_order(&self) -> Vec<usize> {
        self.columns
            .iter()
            .flat_map(|c| c.rows.iter().flat_map(|r| r.nodes.iter().copied()))
            .collect()
    }

    /// Scan-frame indices `(h, k, l)` with `h` over columns, `k` over rows of
    /// column `h` and `l < q_{h,k}`, in that nesting order.
    pub fn scan_indices(&self) -> Vec<[i32; 3]> {
        let mut out = Vec::with_capacity(self.nbar());
        for (h, c) in self.columns.iter().enumerate() {
            for (k, r) in c.rows.iter().enumerate() {
                for l in 0..r.nodes.len() {
                    out.push([h as i32, k as i32, l as i32]);
                }
            }
        }
        out
    }

    /// The principal basic set in crystal coordinates, ordered by column,
    /// then row, then node.
    pub fn principal_refs(&self) -> Vec<Reflection> {
        self.scan_indices()
            .into_iter()
            .map(|s| self.axis.from_scan(self.dim, s).expect("axis checked at construction"))
            .collect()
    }

    /// Exponent totals of the closed form in the `ξ`, `η` and `ζ` variables.
    /// For 2D maps every row holds one node, so the `ζ` total is zero.
    pub fn closed_form_degrees(&self) -> (usize, usize, usize) {
        let sizes = self.column_sizes();
        let mut dx = 0;
        for a in 0..sizes.len() {
            for b in a + 1..sizes.len() {
                dx += sizes[a].min(sizes[b]);
            }
        }
        let mut dy = 0;
        let mut dz = 0;
        for q in self.q() {
            for a in 0..q.len() {
                for b in a + 1..q.len() {
                    dy += q[a].min(q[b]);
                }
                dz += q[a] * (q[a] - 1) / 2;
            }
        }
        (dx, dy, dz)
    }
}

pub fn shape_profile(p: &PattersonMap, axis: Axis) -> Result<ShapeProfile> {
    ShapeProfile::new(p, axis)
}

fn node(x: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * x)
}

/// Closed product form of `det V` over the principal basic set of `shape`,
/// with rows in [`ShapeProfile::node_order`] and columns in
/// [`ShapeProfile::principal_refs`] order.
pub fn vandermonde_det_closed_form(p: &PattersonMap, shape: &ShapeProfile) -> Result<Complex64> {
    if shape.nbar() != p.nbar() {
        return Err(Error::Inconsistent(format!(
            "shape holds {} centres, map has {}",
            shape.nbar(),
            p.nbar()
        )));
    }
    if !shape.is_nested() {
        return Err(Error::ClosedFormNotApplicable(
            "row profiles of the columns are not nested".into(),
        ));
    }
    let perm = shape.axis.permutation(shape.dim)?;
    let third = |i: usize| -> f64 {
        if shape.dim == 3 {
            p.centres()[i].delta.get(perm[2])
        } else {
            0.0
        }
    };
    let cols = &shape.columns;
    let mut det = Complex64::new(1.0, 0.0);
    for a in 0..cols.len() {
        for b in a + 1..cols.len() {
            let e = cols[a].size().min(cols[b].size()) as i32;
            det *= (node(cols[b].x) - node(cols[a].x)).powi(e);
        }
    }
    for c in cols {
        for a in 0..c.rows.len() {
            for b in a + 1..c.rows.len() {
                let e = c.rows[a].nodes.len().min(c.rows[b].nodes.len()) as i32;
                det *= (node(c.rows[b].y) - node(c.rows[a].y)).powi(e);
            }
        }
        for r in &c.rows {
            for a in 0..r.nodes.len() {
                for b in a + 1..r.nodes.len() {
                    det *= node(third(r.nodes[b])) - node(third(r.nodes[a]));
                }
            }
        }
    }
    Ok(det)
}

/// `det V` over the principal basic set by LU, with the same row and column
/// order as the closed form.
pub fn vandermonde_det_numeric(p: &PattersonMap, shape: &ShapeProfile, precision: Precision) -> Complex64 {
    let v = build_v_ordered(p, &shape.node_order(), &shape.principal_refs());
    v.det(precision)
}

/// `(∏ ν) |det V|²`, the determinant of the intensity KH matrix over the
/// principal basic set along `axis`.
pub fn kh_det_closed_form(p: &PattersonMap, axis: Axis) -> Result<f64> {
    if p.nbar() == 0 {
        return Err(Error::EmptyInput("Patterson map"));
    }
    let shape = shape_profile(p, axis)?;
    let v = vandermonde_det_closed_form(p, &shape)?;
    let prod: f64 = p.weights().iter().product();
    Ok(prod * v.norm_sqr())
}

/// `C(n, k)` in 128-bit arithmetic.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

/// The `rank`-th `k`-subset of `0..n` in lexicographic order.
fn unrank_combination(n: usize, k: usize, mut rank: u128) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for slot in 0..k {
        for c in start..n {
            let below = binomial(n - c - 1, k - slot - 1);
            if rank < below {
                out.push(c);
                start = c + 1;
                break;
            }
            rank -= below;
        }
    }
    out
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// `Σ_{ĵ_1<…<ĵ_m} ν_ĵ1…ν_ĵm |det V[ĵ_1..ĵ_m, :]|²` over all `m`-row minors,
/// which equals the determinant of the `m×m` KH matrix over `v.refs`.
pub fn bezout_expansion(v: &LatticeMatrix, weights: &[f64]) -> Result<f64> {
    let nbar = v.nbar();
    let m = v.v.ncols();
    if weights.len() != nbar {
        return Err(Error::DimensionMismatch {
            expected: nbar,
            found: weights.len(),
        });
    }
    if m > nbar {
        return Ok(0.0);
    }
    let total = binomial(nbar, m);
    if total > BEZOUT_LIMIT {
        return Err(Error::CombinatorialGuard {
            count: total,
            limit: BEZOUT_LIMIT,
        });
    }
    const CHUNK: u128 = 2048;
    let chunks = total.div_ceil(CHUNK);
    let partial: Vec<f64> = (0..chunks as u64)
        .into_par_iter()
        .map(|ci| {
            let start = ci as u128 * CHUNK;
            let count = CHUNK.min(total - start) as usize;
            let mut comb = unrank_combination(nbar, m, start);
            let mut terms = Vec::with_capacity(count);
            let mut minor = CMatrix::zeros(m, m);
            for t in 0..count {
                for (r, &row) in comb.iter().enumerate() {
                    for c in 0..m {
                        minor[(r, c)] = v.v[(row, c)];
                    }
                }
                let w: f64 = comb.iter().map(|&j| weights[j]).product();
                terms.push(w * linalg::det_complex(&minor).norm_sqr());
                if t + 1 < count {
                    next_combination(&mut comb, nbar);
                }
            }
            linalg::pairwise_sum(&terms)
        })
        .collect();
    Ok(linalg::pairwise_sum(&partial))
}

/// Relative difference `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// Complex analogue of [`rel_diff`].
pub fn rel_diff_c(a: Complex64, b: Complex64) -> f64 {
    let s = a.norm().max(b.norm());
    if s == 0.0 {
        0.0
    } else {
        (a - b).norm() / s
    }
}

/// Convenience for callers holding a plain real matrix.
pub fn rank_of(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    linalg::numerical_rank(m, rel_tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synth_at, Centre, Position};

    fn pos(c: &[f64]) -> Position {
        Position::new(c).unwrap()
    }

    fn map(dim: usize, c: &[(f64, &[f64])]) -> PattersonMap {
        PattersonMap::new(
            dim,
            c.iter()
                .map(|(w, d)| Centre {
                    weight: *w,
                    delta: pos(d),
                })
                .collect(),
        )
        .unwrap()
    }

    fn two_centre() -> PattersonMap {
        map(2, &[(2.0, &[0.25, 0.0]), (2.0, &[0.75, 0.0])])
    }

    #[test]
    fn v_rows_for_two_centres() {
        let v = build_v(&two_centre(), &[Reflection::new2(0, 0), Reflection::new2(1, 0)]).unwrap();
        let i = Complex64::new(0.0, 1.0);
        assert!((v.v[(0, 0)] - 1.0).norm() < 1e-15);
        assert!((v.v[(0, 1)] + i).norm() < 1e-15);
        assert!((v.v[(1, 0)] - 1.0).norm() < 1e-15);
        assert!((v.v[(1, 1)] - i).norm() < 1e-15);
        assert!(v.v.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn v_rejects_empty_refs() {
        assert!(matches!(build_v(&two_centre(), &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn kh_two_centre() {
        let p = two_centre();
        let refs = [Reflection::new2(0, 0), Reflection::new2(1, 0)];
        let i = synth_at(&p, &[Reflection::new2(0, 0), Reflection::new2(1, 0)]).unwrap();
        let kh = kh_matrix(&i, &refs).unwrap();
        assert_eq!(kh.kind, KhKind::Intensity);
        assert!((kh.d[(0, 0)] - 4.0).abs() < 1e-12);
        assert!((kh.d[(1, 1)] - 4.0).abs() < 1e-12);
        assert!(kh.d[(0, 1)].abs() < 1e-12);
        let one = kh_matrix(&i, &refs[..1]).unwrap();
        assert!((one.d[(0, 0)] - p.total_weight()).abs() < 1e-12);
    }

    #[test]
    fn kh_missing_difference() {
        let p = two_centre();
        let i = synth_at(&p, &[Reflection::new2(0, 0), Reflection::new2(1, 0)]).unwrap();
        let r = kh_matrix(&i, &[Reflection::new2(0, 0), Reflection::new2(2, 0)]);
        match r {
            Err(Error::MissingReflection(h)) => assert_eq!(h.canonical(), Reflection::new2(2, 0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn classic_vandermonde() {
        // one column, rows in y order 0, 0.5, 0.75 give η = 1, -1, -i
        let p = map(2, &[(1.0, &[0.5, 0.0]), (1.0, &[0.5, 0.75]), (1.0, &[0.5, 0.5])]);
        let s = shape_profile(&p, Axis::A).unwrap();
        assert_eq!(s.m(), vec![3]);
        let i = Complex64::new(0.0, 1.0);
        let one = Complex64::new(1.0, 0.0);
        let expect = (-one - one) * (-i - one) * (-i + one);
        let got = vandermonde_det_closed_form(&p, &s).unwrap();
        assert!((got - expect).norm() < 1e-12);
        let num = vandermonde_det_numeric(&p, &s, Precision::Double);
        assert!(rel_diff_c(got, num) < 1e-12);
    }

    #[test]
    fn two_columns_of_height_one() {
        let p = map(2, &[(1.0, &[0.1, 0.3]), (1.0, &[0.6, 0.8])]);
        let s = shape_profile(&p, Axis::A).unwrap();
        let got = vandermonde_det_closed_form(&p, &s).unwrap();
        let expect = node(0.6) - node(0.1);
        assert!((got - expect).norm() < 1e-14);
    }

    #[test]
    fn profile_example() {
        let p = map(2, &[(1.0, &[0.2, 0.1]), (1.0, &[0.2, 0.7]), (1.0, &[0.5, 0.3])]);
        let s = shape_profile(&p, Axis::A).unwrap();
        assert_eq!(s.num_columns(), 2);
        assert_eq!(s.m(), vec![2, 1]);
        assert_eq!(s.mu(), vec![2, 1]);
        assert_eq!(
            s.principal_refs(),
            vec![Reflection::new2(0, 0), Reflection::new2(0, 1), Reflection::new2(1, 0)]
        );
    }

    #[test]
    fn kh_det_single_centre() {
        let p = map(2, &[(3.0, &[0.5, 0.5])]);
        assert!((kh_det_closed_form(&p, Axis::A).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bezout_edge_cases() {
        let p = map(
            2,
            &[(2.0, &[0.1, 0.2]), (-1.0, &[0.9, 0.8]), (0.5, &[0.35, 0.6]), (1.5, &[0.65, 0.4])],
        );
        let w = p.weights();
        let v = build_v(&p, &[Reflection::new2(3, -1)]).unwrap();
        assert!((bezout_expansion(&v, &w).unwrap() - p.total_weight()).abs() < 1e-12);
        let s = shape_profile(&p, Axis::A).unwrap();
        let full = build_v(&p, &s.principal_refs()).unwrap();
        let prod: f64 = w.iter().product();
        let expect = prod * full.det(Precision::Double).norm_sqr();
        assert!(rel_diff(bezout_expansion(&full, &w).unwrap(), expect) < 1e-10);
    }

    #[test]
    fn bezout_guard() {
        let centres: Vec<(f64, Vec<f64>)> = (0..40).map(|i| (1.0, vec![i as f64 / 40.0, 0.0])).collect();
        let p = PattersonMap::new(
            2,
            centres.iter().map(|(w, d)| Centre { weight: *w, delta: pos(d) }).collect(),
        )
        .unwrap();
        let refs: Vec<Reflection> = (0..20).map(|h| Reflection::new2(h, 0)).collect();
        let v = build_v(&p, &refs).unwrap();
        assert!(matches!(
            bezout_expansion(&v, &p.weights()),
            Err(Error::CombinatorialGuard { .. })
        ));
    }

    #[test]
    fn combination_unranking() {
        let mut c = unrank_combination(6, 3, 0);
        let mut rank = 0u128;
        loop {
            assert_eq!(unrank_combination(6, 3, rank), c);
            rank += 1;
            if !next_combination(&mut c, 6) {
                break;
            }
        }
        assert_eq!(rank, binomial(6, 3));
    }

    #[test]
    fn degree_counts() {
        let p = map(
            2,
            &[
                (1.0, &[0.1, 0.1]),
                (1.0, &[0.1, 0.4]),
                (1.0, &[0.1, 0.7]),
                (1.0, &[0.5, 0.2]),
                (1.0, &[0.5, 0.6]),
                (1.0, &[0.8, 0.3]),
            ],
        );
        let s = shape_profile(&p, Axis::A).unwrap();
        let m = s.m();
        let nbar = s.nbar();
        let (dx, dy, dz) = s.closed_form_degrees();
        let p_deg: usize = m.iter().enumerate().map(|(r, &mr)| r * mr).sum();
        let q_deg = (m.iter().map(|v| v * v).sum::<usize>() - nbar) / 2;
        assert_eq!(dx, p_deg);
        assert_eq!(dy, q_deg);
        assert_eq!(dz, 0);
    }
}
