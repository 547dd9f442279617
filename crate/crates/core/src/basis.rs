//! Basic sets of reflections: from a known Patterson map (geometry) or from
//! intensities alone by the row-scan enlargement procedure.
//!
//! The scan starts from `{0}` and extends row `(k, l)` along the primary
//! axis with `(0,k,l), (1,k,l), …` until the Gram matrix of the enlarged set
//! becomes numerically singular; that candidate is recorded as a KH zero and
//! the scan moves to the next row. A row whose first candidate is already a
//! zero closes its layer, and a zero at `(0,0,l)` closes the scan. Positions
//! are in the scan frame of the chosen axis.

use std::collections::{BTreeSet, HashMap};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::lattice::{kh_matrix, shape_profile, KhKind, KhSource};
use crate::model::{Axis, IntensitySet, Mode, PattersonMap, Reflection};

/// Largest irregular observed set handed to the exact clique search.
pub const S1_SEARCH_LIMIT: usize = 4096;
/// Default spectral-ratio threshold for declaring a KH zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Observed reflections and the largest difference-closed subset `S1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedSet {
    pub observed: BTreeSet<Reflection>,
    /// Sorted ascending.
    pub s1: Vec<Reflection>,
}

impl ObservedSet {
    pub fn nbar1(&self) -> usize {
        self.s1.len()
    }

    pub fn contains_s1(&self, h: &Reflection) -> bool {
        self.s1.binary_search(h).is_ok()
    }
}

/// Half-widths when `s` is exactly a symmetric box `∏[-H_d, H_d]`.
fn as_box(s: &BTreeSet<Reflection>) -> Option<Vec<u32>> {
    let first = s.iter().next()?;
    let dim = first.dim();
    let mut hw = vec![0u32; dim];
    for h in s {
        for (d, v) in h.indices().iter().enumerate() {
            hw[d] = hw[d].max(v.unsigned_abs());
        }
    }
    let count: usize = hw.iter().map(|&v| 2 * v as usize + 1).product();
    if count != s.len() {
        return None;
    }
    let inside = s
        .iter()
        .all(|h| h.indices().iter().zip(&hw).all(|(v, w)| v.unsigned_abs() <= *w));
    inside.then_some(hw)
}

fn tie_key(c: &[Reflection]) -> (bool, i32) {
    let has_zero = c.iter().any(|h| h.is_zero());
    let cheb = c.iter().map(|h| h.chebyshev()).max().unwrap_or(0);
    (has_zero, cheb)
}

/// True when candidate `a` beats `b`: contains 0, then smaller largest
/// Chebyshev norm, then lexicographically larger sorted list.
fn better(a: &[Reflection], b: &[Reflection]) -> bool {
    let (za, ca) = tie_key(a);
    let (zb, cb) = tie_key(b);
    if za != zb {
        return za;
    }
    if ca != cb {
        return ca < cb;
    }
    a > b
}

struct CliqueSearch<'a> {
    adj: &'a [Vec<bool>],
    best_size: usize,
    best: Vec<Vec<usize>>,
}

impl CliqueSearch<'_> {
    fn run(&mut self, r: &mut Vec<usize>, p: Vec<usize>, x: Vec<usize>) {
        if p.is_empty() && x.is_empty() {
            if r.len() > self.best_size {
                self.best_size = r.len();
                self.best.clear();
            }
            if r.len() == self.best_size {
                self.best.push(r.clone());
            }
            return;
        }
        if r.len() + p.len() < self.best_size {
            return;
        }
        let pivot = p
            .iter()
            .chain(&x)
            .copied()
            .max_by_key(|&u| p.iter().filter(|&&v| self.adj[u][v]).count())
            .unwrap();
        let candidates: Vec<usize> = p.iter().copied().filter(|&v| !self.adj[pivot][v]).collect();
        let mut p = p;
        let mut x = x;
        for v in candidates {
            let np: Vec<usize> = p.iter().copied().filter(|&u| self.adj[v][u]).collect();
            let nx: Vec<usize> = x.iter().copied().filter(|&u| self.adj[v][u]).collect();
            r.push(v);
            self.run(r, np, nx);
            r.pop();
            p.retain(|&u| u != v);
            x.push(v);
        }
    }
}

/// Largest subset of `observed` whose pairwise differences are all observed.
/// Box windows `∏[-H,H]` give `∏[-⌊H/2⌋, ⌈H/2⌉]` (maximal for odd `H` as
/// well); other shapes run an exact maximum-clique search.
pub fn compute_s1(observed: &BTreeSet<Reflection>) -> Result<ObservedSet> {
    if observed.is_empty() {
        return Err(Error::EmptyInput("observed reflection set"));
    }
    let dim = observed.iter().next().unwrap().dim();
    if let Some(hw) = as_box(observed) {
        let lo: Vec<i32> = hw.iter().map(|&h| -((h / 2) as i32)).collect();
        let hi: Vec<i32> = hw.iter().map(|&h| h.div_ceil(2) as i32).collect();
        let mut s1 = Vec::new();
        let lz = if dim == 3 { (lo[2], hi[2]) } else { (0, 0) };
        for a in lo[0]..=hi[0] {
            for b in lo[1]..=hi[1] {
                for c in lz.0..=lz.1 {
                    s1.push(Reflection::from_raw(dim, [a, b, c]));
                }
            }
        }
        s1.sort();
        return Ok(ObservedSet {
            observed: observed.clone(),
            s1,
        });
    }
    if observed.len() > S1_SEARCH_LIMIT {
        return Err(Error::SearchTooLarge(observed.len()));
    }
    let nodes: Vec<Reflection> = observed.iter().copied().collect();
    let n = nodes.len();
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| i != j && observed.contains(&(nodes[i] - nodes[j]))).collect())
        .collect();
    let mut search = CliqueSearch {
        adj: &adj,
        best_size: 0,
        best: Vec::new(),
    };
    search.run(&mut Vec::new(), (0..n).collect(), Vec::new());
    let mut pick: Option<Vec<Reflection>> = None;
    for c in search.best {
        let mut refs: Vec<Reflection> = c.into_iter().map(|i| nodes[i]).collect();
        refs.sort();
        if pick.as_ref().is_none_or(|p| better(&refs, p)) {
            pick = Some(refs);
        }
    }
    Ok(ObservedSet {
        observed: observed.clone(),
        s1: pick.unwrap_or_default(),
    })
}

/// Quadratic intensity sums `J_{h,k} = Σ_{r∈S1} I_{h-r} I_{r-k}` over `S1`.
/// Entries are computed on first use and cached; each unordered pair is
/// evaluated once so the matrix is exactly symmetric.
pub struct JMatrix {
    intensities: IntensitySet,
    s1: Vec<Reflection>,
    cache: Mutex<HashMap<(Reflection, Reflection), f64>>,
}

impl JMatrix {
    pub fn s1(&self) -> &[Reflection] {
        &self.s1
    }

    fn in_s1(&self, h: &Reflection) -> bool {
        self.s1.binary_search(h).is_ok()
    }

    /// `J_{a,b}` by direct summation; both arguments must lie in `S1`.
    pub fn get(&self, a: &Reflection, b: &Reflection) -> Result<f64> {
        for h in [a, b] {
            if !self.in_s1(h) {
                return Err(Error::MissingReflection(*h));
            }
        }
        let key = if a <= b { (*a, *b) } else { (*b, *a) };
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return Ok(*v);
        }
        let mut acc = 0.0;
        for r in &self.s1 {
            acc += self.intensities.require(&(key.0 - *r))? * self.intensities.require(&(*r - key.1))?;
        }
        self.cache.lock().unwrap().insert(key, acc);
        Ok(acc)
    }

    /// The full `|S1|×|S1|` matrix, rows in `S1` order.
    pub fn matrix(&self) -> Result<crate::linalg::RMatrix> {
        Ok(kh_matrix(self, &self.s1)?.d)
    }
}

impl KhSource for JMatrix {
    fn kind(&self) -> KhKind {
        KhKind::JQuadratic
    }

    fn entry(&self, a: &Reflection, b: &Reflection) -> Result<f64> {
        self.get(a, b)
    }
}

/// J-matrix source over `S1`, checking that every needed difference is known.
pub fn j_matrix(i: &IntensitySet, s1: &ObservedSet) -> Result<JMatrix> {
    if s1.s1.is_empty() {
        return Err(Error::EmptyInput("S1"));
    }
    for a in &s1.s1 {
        for b in &s1.s1 {
            i.require(&(*a - *b))?;
        }
    }
    Ok(JMatrix {
        intensities: i.clone(),
        s1: s1.s1.clone(),
        cache: Mutex::new(HashMap::new()),
    })
}

/// Gram source with unit weights, `Σ_ĵ cos(2π h·δ_ĵ)`, whose singularity
/// coincides with the rank drop of `V` regardless of the sign of the weights.
pub struct UnitWeightGram<'a>(pub &'a PattersonMap);

impl KhSource for UnitWeightGram<'_> {
    fn kind(&self) -> KhKind {
        KhKind::Intensity
    }

    fn entry(&self, a: &Reflection, b: &Reflection) -> Result<f64> {
        let h = *a - *b;
        Ok(self
            .0
            .centres()
            .iter()
            .map(|c| (2.0 * std::f64::consts::PI * h.dot(&c.delta)).cos())
            .sum())
    }
}

/// Search tuning. The skip predicate drops candidates without testing them.
pub struct SearchOptions<'a> {
    pub rel_tol: f64,
    pub max_index: i32,
    pub skip: Option<&'a (dyn Fn(&Reflection) -> bool + Sync)>,
}

impl Default for SearchOptions<'_> {
    fn default() -> Self {
        SearchOptions {
            rel_tol: DEFAULT_RANK_TOL,
            max_index: 256,
            skip: None,
        }
    }
}

/// Margins of the rank decisions taken during a scan.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchDiagnostics {
    /// Smallest spectral ratio among accepted enlargements.
    pub min_accepted_ratio: f64,
    /// Largest spectral ratio among declared zeros.
    pub max_zero_ratio: f64,
    pub gram_evaluations: usize,
}

impl SearchDiagnostics {
    /// Human-readable margin summary against `rel_tol`.
    pub fn describe(&self, rel_tol: f64) -> String {
        format!(
            "smallest accepted ratio {:.3e}, largest zero ratio {:.3e}, tolerance {:.1e}",
            self.min_accepted_ratio, self.max_zero_ratio, rel_tol
        )
    }
}

/// Ordered basic set with the KH zeros that closed its rows.
#[derive(Clone, Debug, PartialEq)]
pub struct BasicSet {
    pub dim: usize,
    pub axis: Axis,
    pub mode: Mode,
    /// Scan order: layer, row, position along the primary axis.
    pub refs: Vec<Reflection>,
    pub zeros: Vec<Reflection>,
    pub diagnostics: SearchDiagnostics,
}

impl BasicSet {
    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn index_of(&self, h: &Reflection) -> Option<usize> {
        self.refs.iter().position(|k| k == h)
    }

    pub fn contains(&self, h: &Reflection) -> bool {
        self.refs.contains(h)
    }
}

fn scan_key(axis: Axis, h: &Reflection) -> [i32; 3] {
    let s = axis.to_scan(h).expect("dimension checked");
    [s[2], s[1], s[0]]
}

/// Row-scan enlargement driven by a Gram source. X-ray mode expects an
/// intensity source, neutron mode a J-matrix source.
pub fn search_basic_set<S: KhSource + ?Sized>(
    src: &S,
    mode: Mode,
    axis: Axis,
    dim: usize,
    opts: &SearchOptions<'_>,
) -> Result<BasicSet> {
    axis.permutation(dim)?;
    if mode == Mode::Neutron && src.kind() != KhKind::JQuadratic {
        return Err(Error::Config("neutron mode needs the J-matrix as Gram source".into()));
    }
    let mut diag = SearchDiagnostics {
        min_accepted_ratio: f64::INFINITY,
        max_zero_ratio: 0.0,
        gram_evaluations: 0,
    };
    let origin = Reflection::zero(dim);
    let mut refs: Vec<Reflection> = Vec::new();
    let mut zeros: Vec<Reflection> = Vec::new();

    let test = |refs: &mut Vec<Reflection>, cand: Reflection, diag: &mut SearchDiagnostics| -> Result<bool> {
        refs.push(cand);
        let kh = kh_matrix(src, refs).map_err(|e| match e {
            Error::MissingReflection(_) => Error::WindowExhausted {
                needed: cand,
                found: refs.len() - 1,
            },
            other => other,
        });
        let kh = match kh {
            Ok(k) => k,
            Err(e) => {
                refs.pop();
                return Err(e);
            }
        };
        diag.gram_evaluations += 1;
        let ratio = kh.spectral_ratio();
        if ratio < opts.rel_tol {
            refs.pop();
            diag.max_zero_ratio = diag.max_zero_ratio.max(ratio);
            Ok(false)
        } else {
            diag.min_accepted_ratio = diag.min_accepted_ratio.min(ratio);
            Ok(true)
        }
    };

    if !test(&mut refs, origin, &mut diag)? {
        zeros.push(origin);
    } else {
        let layers = if dim == 3 { opts.max_index } else { 0 };
        'layers: for l in 0..=layers {
            let mut k = 0;
            loop {
                let mut h = if k == 0 && l == 0 { 1 } else { 0 };
                let mut accepted_in_row = k == 0 && l == 0;
                loop {
                    if h > opts.max_index || k > opts.max_index {
                        return Err(Error::WindowExhausted {
                            needed: axis.from_scan(dim, [h, k, l])?,
                            found: refs.len(),
                        });
                    }
                    let cand = axis.from_scan(dim, [h, k, l])?;
                    if opts.skip.is_some_and(|f| f(&cand)) {
                        h += 1;
                        continue;
                    }
                    if test(&mut refs, cand, &mut diag)? {
                        accepted_in_row = true;
                        h += 1;
                    } else {
                        zeros.push(cand);
                        break;
                    }
                }
                if !accepted_in_row {
                    if k == 0 {
                        break 'layers;
                    }
                    break;
                }
                k += 1;
            }
            if dim == 2 {
                break;
            }
        }
    }
    if diag.min_accepted_ratio == f64::INFINITY {
        diag.min_accepted_ratio = 0.0;
    }
    Ok(BasicSet {
        dim,
        axis,
        mode,
        refs,
        zeros,
        diagnostics: diag,
    })
}

/// Principal basic set read off the shape profile of a known map, with the
/// zeros that a row scan would record. Non-nested 3D profiles fall back to a
/// scan driven by the unit-weight Gram matrix, i.e. by the rank of `V`.
pub fn principal_basic_set_from_geometry(p: &PattersonMap, axis: Axis, mode: Mode) -> Result<BasicSet> {
    if p.nbar() == 0 {
        return Err(Error::EmptyInput("Patterson map"));
    }
    let dim = p.dim();
    let shape = shape_profile(p, axis)?;
    if !shape.is_nested() {
        let mut b = search_basic_set(&UnitWeightGram(p), Mode::Xray, axis, dim, &SearchOptions::default())?;
        b.mode = mode;
        return Ok(b);
    }
    let mut refs = shape.principal_refs();
    refs.sort_by_key(|h| scan_key(axis, h));
    let q = shape.q();
    let width = |k: usize, l: usize| -> i32 {
        q.iter().filter(|col| col.get(k).is_some_and(|&n| n > l)).count() as i32
    };
    let mut zeros = Vec::new();
    let layers = if dim == 3 { q[0][0] } else { 1 };
    for l in 0..=layers {
        if dim == 2 && l == 1 {
            break;
        }
        let mut k = 0;
        loop {
            let w = width(k, l);
            zeros.push(axis.from_scan(dim, [w, k as i32, l as i32])?);
            if w == 0 {
                break;
            }
            k += 1;
        }
        if width(0, l) == 0 {
            break;
        }
    }
    Ok(BasicSet {
        dim,
        axis,
        mode,
        refs,
        zeros,
        diagnostics: SearchDiagnostics::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::numerical_rank;
    use crate::lattice::build_v;
    use crate::model::{box_reflections, synth_window_from_patterson, Centre, Position};

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

    fn boxset(hw: &[u32]) -> BTreeSet<Reflection> {
        box_reflections(hw).unwrap().into_iter().collect()
    }

    #[test]
    fn s1_of_boxes() {
        let s = compute_s1(&boxset(&[2, 2])).unwrap();
        assert_eq!(s.s1, box_reflections(&[1, 1]).unwrap().into_iter().collect::<BTreeSet<_>>().into_iter().collect::<Vec<_>>());
        let s = compute_s1(&boxset(&[4, 4])).unwrap();
        assert_eq!(s.nbar1(), 25);
        assert!(s.s1.iter().all(|h| h.chebyshev() <= 2));
    }

    #[test]
    fn s1_of_a_line() {
        let obs: BTreeSet<Reflection> = (-3..=3).map(|h| r2(h, 0)).collect();
        let s = compute_s1(&obs).unwrap();
        assert_eq!(s.s1, (-1..=2).map(|h| r2(h, 0)).collect::<Vec<_>>());
    }

    #[test]
    fn s1_irregular_matches_brute_force() {
        let obs: BTreeSet<Reflection> = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (2, 0), (-2, 0)]
            .iter()
            .map(|&(a, b)| r2(a, b))
            .collect();
        let s = compute_s1(&obs).unwrap();
        let all: Vec<Reflection> = obs.iter().copied().collect();
        let mut best = 0;
        for mask in 1u32..(1 << all.len()) {
            let sub: Vec<Reflection> = (0..all.len()).filter(|i| mask >> i & 1 == 1).map(|i| all[i]).collect();
            if sub.iter().all(|a| sub.iter().all(|b| a == b || obs.contains(&(*a - *b)))) {
                best = best.max(sub.len());
            }
        }
        assert_eq!(s.nbar1(), best);
        assert!(s.s1.contains(&r2(0, 0)));
        for a in &s.s1 {
            for b in &s.s1 {
                assert!(a == b || obs.contains(&(*a - *b)));
            }
        }
    }

    #[test]
    fn s1_refuses_empty() {
        assert!(matches!(compute_s1(&BTreeSet::new()), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn j_matrix_matches_double_loop() {
        let p = map(&[(2.0, [0.25, 0.0]), (2.0, [0.75, 0.0])]);
        let i = synth_window_from_patterson(&p, &[2, 2]).unwrap();
        let s1 = ObservedSet {
            observed: i.reflections(),
            s1: vec![r2(-1, 0), r2(0, 0), r2(1, 0)],
        };
        let j = j_matrix(&i, &s1).unwrap();
        let m = j.matrix().unwrap();
        for (a, ha) in s1.s1.iter().enumerate() {
            for (b, hb) in s1.s1.iter().enumerate() {
                let mut direct = 0.0;
                for r in &s1.s1 {
                    direct += i.get(&(*ha - *r)).unwrap() * i.get(&(*r - *hb)).unwrap();
                }
                assert!((m[(a, b)] - direct).abs() < 1e-12);
                assert_eq!(m[(a, b)], m[(b, a)]);
            }
            assert!(m[(a, a)] >= 0.0);
        }
    }

    fn neutron_search(p: &PattersonMap, hw: u32) -> Result<BasicSet> {
        let i = synth_window_from_patterson(p, &[hw, hw]).unwrap();
        let s1 = compute_s1(&i.reflections()).unwrap();
        let j = j_matrix(&i, &s1).unwrap();
        search_basic_set(&j, Mode::Neutron, Axis::A, 2, &SearchOptions::default())
    }

    #[test]
    fn search_two_centres() {
        let p = map(&[(2.0, [0.25, 0.0]), (2.0, [0.75, 0.0])]);
        let b = neutron_search(&p, 6).unwrap();
        assert_eq!(b.refs, vec![r2(0, 0), r2(1, 0)]);
        assert_eq!(b.zeros, vec![r2(2, 0), r2(0, 1)]);
        let i = synth_window_from_patterson(&p, &[6, 6]).unwrap();
        let x = search_basic_set(&i, Mode::Xray, Axis::A, 2, &SearchOptions::default()).unwrap();
        assert_eq!(x.refs, b.refs);
        assert_eq!(x.zeros, b.zeros);
    }

    #[test]
    fn search_single_centre() {
        let p = map(&[(1.0, [0.5, 0.5])]);
        let b = neutron_search(&p, 4).unwrap();
        assert_eq!(b.refs, vec![r2(0, 0)]);
        assert_eq!(b.zeros, vec![r2(1, 0), r2(0, 1)]);
    }

    #[test]
    fn search_same_column() {
        let p = map(&[(1.0, [0.25, 0.1]), (1.0, [0.25, 0.6]), (1.0, [0.75, 0.9]), (1.0, [0.75, 0.4])]);
        let b = neutron_search(&p, 8).unwrap();
        let g = principal_basic_set_from_geometry(&p, Axis::A, Mode::Neutron).unwrap();
        assert_eq!(b.refs, g.refs);
        assert_eq!(b.zeros, g.zeros);
        assert_eq!(b.refs, vec![r2(0, 0), r2(1, 0), r2(0, 1), r2(1, 1)]);
    }

    #[test]
    fn search_empty_pattern() {
        let p = PattersonMap::empty(2);
        let b = neutron_search(&p, 2).unwrap();
        assert!(b.refs.is_empty());
        assert_eq!(b.zeros, vec![r2(0, 0)]);
    }

    #[test]
    fn search_window_exhausted() {
        let p = map(&[(1.0, [0.1, 0.2]), (1.0, [0.9, 0.8]), (1.0, [0.3, 0.55]), (1.0, [0.7, 0.45])]);
        assert!(matches!(neutron_search(&p, 1), Err(Error::WindowExhausted { .. })));
    }

    #[test]
    fn search_rejects_wrong_source() {
        let p = map(&[(1.0, [0.5, 0.5])]);
        let i = synth_window_from_patterson(&p, &[2, 2]).unwrap();
        assert!(search_basic_set(&i, Mode::Neutron, Axis::A, 2, &SearchOptions::default()).is_err());
    }

    #[test]
    fn geometry_examples() {
        let p = map(&[(1.0, [0.2, 0.1]), (1.0, [0.2, 0.7]), (1.0, [0.5, 0.3])]);
        let b = principal_basic_set_from_geometry(&p, Axis::A, Mode::Xray).unwrap();
        assert_eq!(b.refs, vec![r2(0, 0), r2(1, 0), r2(0, 1)]);
        assert_eq!(b.zeros, vec![r2(2, 0), r2(1, 1), r2(0, 2)]);
        let q = map(&[(1.0, [0.1, 0.2]), (1.0, [0.9, 0.8]), (1.0, [0.3, 0.5]), (1.0, [0.7, 0.5])]);
        let same_x = map(&[(1.0, [0.25, 0.1]), (1.0, [0.25, 0.6])]);
        let b = principal_basic_set_from_geometry(&same_x, Axis::A, Mode::Xray).unwrap();
        assert_eq!(b.refs, vec![r2(0, 0), r2(0, 1)]);
        let b = principal_basic_set_from_geometry(&q, Axis::A, Mode::Xray).unwrap();
        assert_eq!(b.refs, (0..4).map(|h| r2(h, 0)).collect::<Vec<_>>());
        let v = build_v(&q, &b.refs).unwrap();
        assert_eq!(numerical_rank(&v.v, 1e-8), 4);
    }
}
