//! Point-atom crystals, their Patterson maps and the diffraction intensities
//! they generate (the forward model).
//!
//! Positions are fractional coordinates in `[0, 1)`. A structure with `N`
//! atoms of signed charges `Z_j` (atomic numbers for X-rays, scattering
//! lengths for neutrons) produces the observed intensity
//! `|Σ_j Z_j exp(i2π h·r_j)|²` at reflection `h`. Removing the origin peak
//! `Σ_j Z_j²` leaves the subtracted intensity, which is the Fourier transform
//! of the off-origin Patterson density: point centres at the inter-atomic
//! difference vectors `δ` weighted by `ν = Σ Z_j Z_k` over the pairs that land
//! on `δ`.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Neg, Sub};
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Two coordinates closer than this on the circle are the same point.
pub const MERGE_TOL: f64 = 1e-9;
/// Patterson weights with `|ν| <= WEIGHT_DROP_REL * max|ν|` are cancelled.
pub const WEIGHT_DROP_REL: f64 = 1e-9;
/// Largest tolerated imaginary residual of a Patterson Fourier sum, relative
/// to `max(1, Σ|ν|)`.
pub const IMAG_TOL: f64 = 1e-8;

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension(dim))
    }
}

/// Wraps a coordinate into `[0, 1)`.
pub fn wrap_unit(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Distance between two fractional coordinates on the unit circle.
pub fn circle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Integer reciprocal-lattice index `h` (2 or 3 components).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reflection {
    dim: u8,
    idx: [i32; 3],
}

impl Reflection {
    pub fn new(indices: &[i32]) -> Result<Reflection> {
        check_dim(indices.len())?;
        let mut idx = [0; 3];
        idx[..indices.len()].copy_from_slice(indices);
        Ok(Reflection {
            dim: indices.len() as u8,
            idx,
        })
    }

    pub fn new2(h: i32, k: i32) -> Reflection {
        Reflection {
            dim: 2,
            idx: [h, k, 0],
        }
    }

    pub fn new3(h: i32, k: i32, l: i32) -> Reflection {
        Reflection {
            dim: 3,
            idx: [h, k, l],
        }
    }

    pub fn zero(dim: usize) -> Reflection {
        Reflection {
            dim: dim as u8,
            idx: [0; 3],
        }
    }

    /// Unit step along crystallographic axis `axis` (0-based).
    pub fn unit(dim: usize, axis: usize) -> Reflection {
        let mut idx = [0; 3];
        idx[axis] = 1;
        Reflection {
            dim: dim as u8,
            idx,
        }
    }

    pub(crate) fn from_raw(dim: usize, idx: [i32; 3]) -> Reflection {
        Reflection {
            dim: dim as u8,
            idx,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn indices(&self) -> &[i32] {
        &self.idx[..self.dim as usize]
    }

    pub(crate) fn raw(&self) -> [i32; 3] {
        self.idx
    }

    pub fn is_zero(&self) -> bool {
        self.idx == [0; 3]
    }

    /// Largest absolute component.
    pub fn chebyshev(&self) -> i32 {
        self.idx.iter().map(|v| v.abs()).max().unwrap_or(0)
    }

    /// Representative of the Friedel pair `{h, -h}`: the lexicographically
    /// larger of the two.
    pub fn canonical(self) -> Reflection {
        let n = -self;
        if n > self {
            n
        } else {
            self
        }
    }

    /// `h·r` for a position of the same dimension.
    pub fn dot(&self, p: &Position) -> f64 {
        (0..self.dim())
            .map(|d| self.idx[d] as f64 * p.coords[d])
            .sum()
    }

    /// Phase factor `exp(i2π h·r)`.
    pub fn phase(&self, p: &Position) -> Complex64 {
        Complex64::from_polar(1.0, 2.0 * PI * self.dot(p))
    }
}

impl Neg for Reflection {
    type Output = Reflection;
    fn neg(self) -> Reflection {
        Reflection {
            dim: self.dim,
            idx: [-self.idx[0], -self.idx[1], -self.idx[2]],
        }
    }
}

impl Add for Reflection {
    type Output = Reflection;
    fn add(self, o: Reflection) -> Reflection {
        debug_assert_eq!(self.dim, o.dim);
        Reflection {
            dim: self.dim,
            idx: [
                self.idx[0] + o.idx[0],
                self.idx[1] + o.idx[1],
                self.idx[2] + o.idx[2],
            ],
        }
    }
}

impl Sub for Reflection {
    type Output = Reflection;
    fn sub(self, o: Reflection) -> Reflection {
        self + (-o)
    }
}

impl fmt::Display for Reflection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.indices().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Debug for Reflection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Fractional position in the unit cell.
#[derive(Clone, Copy, PartialEq)]
pub struct Position {
    dim: u8,
    coords: [f64; 3],
}

impl Position {
    pub fn new(coords: &[f64]) -> Result<Position> {
        check_dim(coords.len())?;
        let mut c = [0.0; 3];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Position {
            dim: coords.len() as u8,
            coords: c,
        })
    }

    pub fn origin(dim: usize) -> Position {
        Position {
            dim: dim as u8,
            coords: [0.0; 3],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim as usize]
    }

    pub fn get(&self, axis: usize) -> f64 {
        self.coords[axis]
    }

    /// Component-wise wrap into `[0, 1)`.
    pub fn wrapped(self) -> Position {
        let mut c = self.coords;
        for v in c.iter_mut().take(self.dim()) {
            *v = wrap_unit(*v);
        }
        Position {
            dim: self.dim,
            coords: c,
        }
    }

    /// `(self - other) mod 1`.
    pub fn difference(&self, other: &Position) -> Position {
        let mut c = [0.0; 3];
        for (d, v) in c.iter_mut().enumerate().take(self.dim()) {
            *v = wrap_unit(self.coords[d] - other.coords[d]);
        }
        Position {
            dim: self.dim,
            coords: c,
        }
    }

    /// `(-self) mod 1`.
    pub fn mirrored(&self) -> Position {
        Position::origin(self.dim()).difference(self)
    }

    /// Largest per-coordinate circle distance.
    pub fn distance(&self, other: &Position) -> f64 {
        (0..self.dim())
            .map(|d| circle_distance(self.coords[d], other.coords[d]))
            .fold(0.0, f64::max)
    }

    /// Smallest per-coordinate circle distance.
    pub fn min_coordinate_distance(&self, other: &Position) -> f64 {
        (0..self.dim())
            .map(|d| circle_distance(self.coords[d], other.coords[d]))
            .fold(f64::INFINITY, f64::min)
    }
}

impl fmt::Debug for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.coords()).finish()
    }
}

fn check_coordinates(p: &Position) -> std::result::Result<(), String> {
    if p.coords().iter().all(|c| c.is_finite() && (0.0..1.0).contains(c)) {
        Ok(())
    } else {
        Err(format!("coordinate out of [0,1): {p:?}"))
    }
}

/// Diffraction geometry mode: X-rays (positive charges) or neutrons (signed).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Xray,
    Neutron,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "xray" | "x-ray" => Ok(Mode::Xray),
            "neutron" => Ok(Mode::Neutron),
            _ => Err(Error::Config(format!("unknown mode '{s}'"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Xray => "xray",
            Mode::Neutron => "neutron",
        })
    }
}

/// Reciprocal axis along which rows of a basic set are laid out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    A,
    B,
    C,
}

impl Axis {
    /// Maps scan-frame slots (primary, secondary, tertiary) to crystal axes.
    pub fn permutation(self, dim: usize) -> Result<[usize; 3]> {
        match (self, dim) {
            (Axis::A, _) => Ok([0, 1, 2]),
            (Axis::B, 2) => Ok([1, 0, 2]),
            (Axis::B, 3) => Ok([1, 2, 0]),
            (Axis::C, 3) => Ok([2, 0, 1]),
            (Axis::C, 2) => Err(Error::Config("axis c requires a 3D crystal".into())),
            _ => Err(Error::UnsupportedDimension(dim)),
        }
    }

    /// Reflection in crystal coordinates from scan-frame indices.
    pub fn from_scan(self, dim: usize, scan: [i32; 3]) -> Result<Reflection> {
        let perm = self.permutation(dim)?;
        let mut idx = [0; 3];
        for slot in 0..dim {
            idx[perm[slot]] = scan[slot];
        }
        Ok(Reflection::from_raw(dim, idx))
    }

    /// Scan-frame indices of a reflection.
    pub fn to_scan(self, h: &Reflection) -> Result<[i32; 3]> {
        let perm = self.permutation(h.dim())?;
        let raw = h.raw();
        let mut s = [0; 3];
        for slot in 0..h.dim() {
            s[slot] = raw[perm[slot]];
        }
        Ok(s)
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Axis> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Axis::A),
            "b" => Ok(Axis::B),
            "c" => Ok(Axis::C),
            _ => Err(Error::Config(format!("unknown axis '{s}'"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::A => "a",
            Axis::B => "b",
            Axis::C => "c",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Atom {
    pub charge: f64,
    pub position: Position,
}

/// Point-atom configuration of one unit cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CrystalStructure {
    dim: usize,
    atoms: Vec<Atom>,
}

impl CrystalStructure {
    pub fn new(dim: usize, atoms: Vec<Atom>) -> Result<CrystalStructure> {
        check_dim(dim)?;
        if atoms.is_empty() {
            return Err(Error::InvalidStructure("no atoms".into()));
        }
        for a in &atoms {
            if a.position.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: a.position.dim(),
                });
            }
            if !a.charge.is_finite() || a.charge == 0.0 {
                return Err(Error::InvalidStructure(format!(
                    "charge must be finite and nonzero, got {}",
                    a.charge
                )));
            }
            check_coordinates(&a.position).map_err(Error::InvalidStructure)?;
        }
        for (i, a) in atoms.iter().enumerate() {
            for b in &atoms[i + 1..] {
                if a.position.distance(&b.position) <= MERGE_TOL {
                    return Err(Error::InvalidStructure(format!(
                        "atoms at coincident positions {:?}",
                        a.position
                    )));
                }
            }
        }
        Ok(CrystalStructure { dim, atoms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn charges(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.charge).collect()
    }

    /// `Σ_j Z_j²`, the origin peak removed from observed intensities.
    pub fn sum_charge_squares(&self) -> f64 {
        self.atoms.iter().map(|a| a.charge * a.charge).sum()
    }

    /// All atoms shifted by `t` (mod 1).
    pub fn translated(&self, t: &Position) -> CrystalStructure {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                charge: a.charge,
                position: a.position.difference(&t.mirrored()),
            })
            .collect();
        CrystalStructure {
            dim: self.dim,
            atoms,
        }
    }

    /// The enantiomorph `r -> -r`.
    pub fn inverted(&self) -> CrystalStructure {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                charge: a.charge,
                position: a.position.mirrored(),
            })
            .collect();
        CrystalStructure {
            dim: self.dim,
            atoms,
        }
    }

    /// Largest per-atom position error after optimal matching modulo a
    /// global translation and atom relabelling (charges must agree to
    /// `charge_tol`). `None` when no charge-consistent matching exists.
    pub fn distance_mod_translation(&self, other: &CrystalStructure, charge_tol: f64) -> Option<f64> {
        if self.dim != other.dim || self.len() != other.len() {
            return None;
        }
        let mut best: Option<f64> = None;
        let anchor = &self.atoms[0];
        for b in &other.atoms {
            if (b.charge - anchor.charge).abs() > charge_tol {
                continue;
            }
            // translation mapping anchor onto b
            let shift = b.position.difference(&anchor.position);
            let moved = self.translated(&shift);
            if let Some(err) = greedy_match(&moved.atoms, &other.atoms, charge_tol) {
                best = Some(best.map_or(err, |v: f64| v.min(err)));
            }
        }
        best
    }

    /// As [`distance_mod_translation`](Self::distance_mod_translation) but
    /// also allowing the enantiomorph.
    pub fn distance_mod_symmetry(&self, other: &CrystalStructure, charge_tol: f64) -> Option<f64> {
        let a = self.distance_mod_translation(other, charge_tol);
        let b = self.inverted().distance_mod_translation(other, charge_tol);
        match (a, b) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        }
    }
}

fn greedy_match(a: &[Atom], b: &[Atom], charge_tol: f64) -> Option<f64> {
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let mut pick: Option<(usize, f64)> = None;
        for (j, y) in b.iter().enumerate() {
            if used[j] || (x.charge - y.charge).abs() > charge_tol {
                continue;
            }
            let d = x.position.distance(&y.position);
            if pick.is_none_or(|(_, pd)| d < pd) {
                pick = Some((j, d));
            }
        }
        let (j, d) = pick?;
        used[j] = true;
        worst = worst.max(d);
    }
    Some(worst)
}

/// One Patterson scattering centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Centre {
    pub weight: f64,
    pub delta: Position,
}

/// Off-origin Patterson density: `N̄` point centres with signed weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PattersonMap {
    dim: usize,
    centres: Vec<Centre>,
}

impl PattersonMap {
    /// Validates distinctness, nonzero weights and coordinate range.
    /// Centrosymmetry is not enforced here, see
    /// [`is_centrosymmetric`](Self::is_centrosymmetric).
    pub fn new(dim: usize, centres: Vec<Centre>) -> Result<PattersonMap> {
        check_dim(dim)?;
        for c in &centres {
            if c.delta.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: c.delta.dim(),
                });
            }
            if !c.weight.is_finite() || c.weight == 0.0 {
                return Err(Error::InvalidPatterson(format!(
                    "weight must be finite and nonzero, got {}",
                    c.weight
                )));
            }
            check_coordinates(&c.delta).map_err(Error::InvalidPatterson)?;
        }
        for (i, a) in centres.iter().enumerate() {
            for b in &centres[i + 1..] {
                if a.delta.distance(&b.delta) <= MERGE_TOL {
                    return Err(Error::InvalidPatterson(format!(
                        "duplicate centre at {:?}",
                        a.delta
                    )));
                }
            }
        }
        Ok(PattersonMap { dim, centres })
    }

    pub fn empty(dim: usize) -> PattersonMap {
        PattersonMap {
            dim,
            centres: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centres(&self) -> &[Centre] {
        &self.centres
    }

    /// `N̄`, the number of centres with nonzero weight.
    pub fn nbar(&self) -> usize {
        self.centres.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.centres.iter().map(|c| c.weight).collect()
    }

    pub fn positions(&self) -> Vec<Position> {
        self.centres.iter().map(|c| c.delta).collect()
    }

    /// `I_0 = Σ ν`.
    pub fn total_weight(&self) -> f64 {
        self.centres.iter().map(|c| c.weight).sum()
    }

    /// `Σ |ν|`, an upper bound on every `|I_h|`.
    pub fn intensity_scale(&self) -> f64 {
        self.centres.iter().map(|c| c.weight.abs()).sum()
    }

    /// Index of the centre within `tol` of `p`.
    pub fn find(&self, p: &Position, tol: f64) -> Option<usize> {
        self.centres.iter().position(|c| c.delta.distance(p) <= tol)
    }

    /// Every centre `(ν, δ)` has a mirror `(ν, -δ)`.
    pub fn is_centrosymmetric(&self, tol: f64) -> bool {
        let scale = self.intensity_scale().max(1.0);
        self.centres.iter().all(|c| {
            self.find(&c.delta.mirrored(), tol)
                .is_some_and(|j| (self.centres[j].weight - c.weight).abs() <= tol * scale)
        })
    }

    /// Same centres, reordered lexicographically by position.
    pub fn sorted(mut self) -> PattersonMap {
        self.centres.sort_by(|a, b| {
            a.delta
                .coords()
                .partial_cmp(b.delta.coords())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        self
    }

    /// Same centre set, equal up to ordering, positions within `pos_tol` and
    /// weights within `weight_tol` relative to the weight scale.
    pub fn approx_eq(&self, other: &PattersonMap, pos_tol: f64, weight_tol: f64) -> bool {
        if self.dim != other.dim || self.nbar() != other.nbar() {
            return false;
        }
        let scale = self.intensity_scale().max(1e-300);
        self.centres.iter().all(|c| {
            other
                .find(&c.delta, pos_tol)
                .is_some_and(|j| (other.centres[j].weight - c.weight).abs() <= weight_tol * scale)
        })
    }
}

/// Subtracted intensities `I_h` keyed by Friedel-canonical reflection.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensitySet {
    dim: usize,
    entries: BTreeMap<Reflection, f64>,
    sum_zsq: Option<f64>,
}

impl IntensitySet {
    pub fn new(dim: usize) -> IntensitySet {
        IntensitySet {
            dim,
            entries: BTreeMap::new(),
            sum_zsq: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sum_zsq(&self) -> Option<f64> {
        self.sum_zsq
    }

    pub fn set_sum_zsq(&mut self, v: Option<f64>) {
        self.sum_zsq = v;
    }

    /// Stores `I_h` (and therefore `I_{-h}`).
    pub fn insert(&mut self, h: Reflection, value: f64) -> Result<()> {
        if h.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: h.dim(),
            });
        }
        self.entries.insert(h.canonical(), value);
        Ok(())
    }

    pub fn get(&self, h: &Reflection) -> Option<f64> {
        self.entries.get(&h.canonical()).copied()
    }

    pub fn require(&self, h: &Reflection) -> Result<f64> {
        self.get(h).ok_or(Error::MissingReflection(*h))
    }

    pub fn contains(&self, h: &Reflection) -> bool {
        self.entries.contains_key(&h.canonical())
    }

    /// Number of stored Friedel pairs.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical representatives with their intensities.
    pub fn iter(&self) -> impl Iterator<Item = (Reflection, f64)> + '_ {
        self.entries.iter().map(|(h, v)| (*h, *v))
    }

    /// The full observed set, both members of each Friedel pair.
    pub fn reflections(&self) -> BTreeSet<Reflection> {
        self.entries
            .keys()
            .flat_map(|h| [*h, -*h])
            .collect()
    }

    /// Observed (unsubtracted) intensity, when `Σ Z²` is known.
    pub fn observed(&self, h: &Reflection) -> Option<f64> {
        Some(self.get(h)? + self.sum_zsq?)
    }

    /// Copy restricted to the given reflections (missing ones are skipped).
    pub fn restricted<'a>(&self, refs: impl IntoIterator<Item = &'a Reflection>) -> IntensitySet {
        let mut out = IntensitySet::new(self.dim);
        out.sum_zsq = self.sum_zsq;
        for h in refs {
            if let Some(v) = self.get(h) {
                out.entries.insert(h.canonical(), v);
            }
        }
        out
    }
}

/// Reflections in the box `∏ [-H_d, H_d]`.
pub fn box_reflections(half_widths: &[u32]) -> Result<Vec<Reflection>> {
    check_dim(half_widths.len())?;
    let dim = half_widths.len();
    let hw: Vec<i32> = half_widths.iter().map(|&h| h as i32).collect();
    let hz = if dim == 3 { hw[2] } else { 0 };
    let mut out = Vec::new();
    for h in -hw[0]..=hw[0] {
        for k in -hw[1]..=hw[1] {
            for l in -hz..=hz {
                out.push(Reflection::from_raw(dim, [h, k, l]));
            }
        }
    }
    Ok(out)
}

fn check_same_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// `|Σ_j Z_j exp(i2π h·r_j)|²`.
pub fn observed_intensity(s: &CrystalStructure, h: &Reflection) -> Result<f64> {
    check_same_dim(s.dim(), h.dim())?;
    let f: Complex64 = s.atoms().iter().map(|a| a.charge * h.phase(&a.position)).sum();
    Ok(f.norm_sqr())
}

/// Patterson map of a structure: distinct `(r_j - r_k) mod 1` over ordered
/// pairs, weights summed over coincident pairs, cancelled centres dropped.
pub fn compute_patterson(s: &CrystalStructure) -> PattersonMap {
    let atoms = s.atoms();
    let mut centres: Vec<Centre> = Vec::new();
    for (j, a) in atoms.iter().enumerate() {
        for (k, b) in atoms.iter().enumerate() {
            if j == k {
                continue;
            }
            let delta = a.position.difference(&b.position);
            let w = a.charge * b.charge;
            match centres.iter_mut().find(|c| c.delta.distance(&delta) <= MERGE_TOL) {
                Some(c) => c.weight += w,
                None => centres.push(Centre { weight: w, delta }),
            }
        }
    }
    let max_w = centres.iter().map(|c| c.weight.abs()).fold(0.0, f64::max);
    centres.retain(|c| c.weight.abs() > WEIGHT_DROP_REL * max_w);
    PattersonMap {
        dim: s.dim(),
        centres,
    }
    .sorted()
}

/// `Re Σ ν exp(i2π h·δ)`, rejecting maps whose sum is not real.
pub fn subtracted_intensity(p: &PattersonMap, h: &Reflection) -> Result<f64> {
    check_same_dim(p.dim(), h.dim())?;
    let f: Complex64 = p
        .centres()
        .iter()
        .map(|c| c.weight * h.phase(&c.delta))
        .sum();
    let tol = IMAG_TOL * p.intensity_scale().max(1.0);
    if f.im.abs() > tol {
        return Err(Error::ImaginaryResidual {
            reflection: *h,
            residual: f.im,
        });
    }
    Ok(f.re)
}

/// Subtracted intensities of a structure over `∏ [-H_d, H_d]`, computed as
/// observed intensity minus `Σ Z²`.
pub fn synth_window(s: &CrystalStructure, half_widths: &[u32]) -> Result<IntensitySet> {
    check_same_dim(s.dim(), half_widths.len())?;
    let zsq = s.sum_charge_squares();
    let mut out = IntensitySet::new(s.dim());
    out.sum_zsq = Some(zsq);
    for h in box_reflections(half_widths)? {
        if out.contains(&h) {
            continue;
        }
        let v = observed_intensity(s, &h)? - zsq;
        out.insert(h, v)?;
    }
    Ok(out)
}

/// Subtracted intensities of a Patterson map over `∏ [-H_d, H_d]`.
pub fn synth_window_from_patterson(p: &PattersonMap, half_widths: &[u32]) -> Result<IntensitySet> {
    check_same_dim(p.dim(), half_widths.len())?;
    let mut out = IntensitySet::new(p.dim());
    for h in box_reflections(half_widths)? {
        if out.contains(&h) {
            continue;
        }
        out.insert(h, subtracted_intensity(p, &h)?)?;
    }
    Ok(out)
}

/// Subtracted intensities of a Patterson map at the given reflections.
pub fn synth_at<'a>(
    p: &PattersonMap,
    refs: impl IntoIterator<Item = &'a Reflection>,
) -> Result<IntensitySet> {
    let mut out = IntensitySet::new(p.dim());
    for h in refs {
        if !out.contains(h) {
            out.insert(*h, subtracted_intensity(p, h)?)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pos(c: &[f64]) -> Position {
        Position::new(c).unwrap()
    }

    fn structure(atoms: &[(f64, &[f64])]) -> CrystalStructure {
        let dim = atoms[0].1.len();
        CrystalStructure::new(
            dim,
            atoms
                .iter()
                .map(|(z, r)| Atom {
                    charge: *z,
                    position: pos(r),
                })
                .collect(),
        )
        .unwrap()
    }

    fn two_atom() -> CrystalStructure {
        structure(&[(1.0, &[0.0, 0.0]), (1.0, &[0.5, 0.0])])
    }

    #[test]
    fn observed_single_atom() {
        let s = structure(&[(2.5, &[0.3, 0.7])]);
        for h in box_reflections(&[2, 2]).unwrap() {
            assert!((observed_intensity(&s, &h).unwrap() - 6.25).abs() < 1e-12);
        }
    }

    #[test]
    fn observed_interference() {
        let s = two_atom();
        assert!(observed_intensity(&s, &Reflection::new2(1, 0)).unwrap().abs() < 1e-12);
        assert!((observed_intensity(&s, &Reflection::new2(2, 0)).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn observed_dimension_mismatch() {
        let s = two_atom();
        assert!(matches!(
            observed_intensity(&s, &Reflection::new3(1, 0, 0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn patterson_single_atom_is_empty() {
        let p = compute_patterson(&structure(&[(3.0, &[0.1, 0.2])]));
        assert_eq!(p.nbar(), 0);
    }

    #[test]
    fn patterson_two_atoms() {
        let p = compute_patterson(&structure(&[(1.0, &[0.0, 0.0]), (2.0, &[0.25, 0.0])]));
        assert_eq!(p.nbar(), 2);
        let a = p.find(&pos(&[0.25, 0.0]), 1e-12).unwrap();
        let b = p.find(&pos(&[0.75, 0.0]), 1e-12).unwrap();
        assert_eq!(p.centres()[a].weight, 2.0);
        assert_eq!(p.centres()[b].weight, 2.0);
        assert!(p.is_centrosymmetric(1e-9));
    }

    #[test]
    fn patterson_cancellation_drops_centre() {
        // ordered pairs landing on (0.25,0): (1,0),(2,1),(3,2),(0,3) with
        // products -1 -1 +1 +1 = 0
        let s = structure(&[
            (1.0, &[0.0, 0.0]),
            (-1.0, &[0.25, 0.0]),
            (1.0, &[0.5, 0.0]),
            (1.0, &[0.75, 0.0]),
        ]);
        let p = compute_patterson(&s);
        assert!(p.find(&pos(&[0.25, 0.0]), 1e-9).is_none());
        assert!(p.find(&pos(&[0.75, 0.0]), 1e-9).is_none());
        // (0.5,0): pairs (2,0),(3,1),(0,2),(1,3): 1 -1 1 -1 = 0 as well
        assert!(p.find(&pos(&[0.5, 0.0]), 1e-9).is_none());
        assert_eq!(p.nbar(), 0);
    }

    #[test]
    fn subtracted_examples() {
        let p = PattersonMap::new(
            2,
            vec![
                Centre { weight: 2.0, delta: pos(&[0.25, 0.0]) },
                Centre { weight: 2.0, delta: pos(&[0.75, 0.0]) },
            ],
        )
        .unwrap();
        assert!(subtracted_intensity(&p, &Reflection::new2(1, 0)).unwrap().abs() < 1e-12);
        assert!((subtracted_intensity(&p, &Reflection::new2(2, 0)).unwrap() + 4.0).abs() < 1e-12);
        let e = PattersonMap::empty(2);
        assert_eq!(subtracted_intensity(&e, &Reflection::new2(3, 1)).unwrap(), 0.0);
    }

    #[test]
    fn subtracted_rejects_corrupted_map() {
        let p = PattersonMap::new(2, vec![Centre { weight: 1.0, delta: pos(&[0.25, 0.0]) }]).unwrap();
        assert!(matches!(
            subtracted_intensity(&p, &Reflection::new2(1, 0)),
            Err(Error::ImaginaryResidual { .. })
        ));
    }

    #[test]
    fn synth_single_atom_is_zero() {
        let s = structure(&[(1.7, &[0.4, 0.9])]);
        let i = synth_window(&s, &[2, 2]).unwrap();
        assert!(i.iter().all(|(_, v)| v.abs() < 1e-12));
        assert_eq!(i.sum_zsq(), Some(1.7 * 1.7));
    }

    #[test]
    fn synth_routes_agree_and_friedel() {
        let s = two_atom();
        let direct = synth_window(&s, &[2, 1]).unwrap();
        let p = compute_patterson(&s);
        for h in box_reflections(&[2, 1]).unwrap() {
            let a = direct.get(&h).unwrap();
            let b = subtracted_intensity(&p, &h).unwrap();
            assert!((a - b).abs() < 1e-12, "{h}: {a} vs {b}");
            assert_eq!(direct.get(&h), direct.get(&-h));
        }
        // |F|² vanishes at (1,0), leaving -ΣZ²
        assert!((direct.get(&Reflection::new2(1, 0)).unwrap() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_representative() {
        let h = Reflection::new2(-1, 2);
        assert_eq!(h.canonical(), Reflection::new2(1, -2));
        assert_eq!((-h).canonical(), h.canonical());
    }

    #[test]
    fn rejects_invalid_structures() {
        let p = pos(&[0.1, 0.1]);
        assert!(CrystalStructure::new(2, vec![Atom { charge: 0.0, position: p }]).is_err());
        assert!(CrystalStructure::new(
            2,
            vec![Atom { charge: 1.0, position: p }, Atom { charge: 2.0, position: p }]
        )
        .is_err());
        assert!(Position::new(&[0.1]).is_err());
        assert!(CrystalStructure::new(2, vec![Atom { charge: 1.0, position: pos(&[1.0, 0.0]) }]).is_err());
    }

    #[test]
    fn axis_permutation_round_trip() {
        let h = Reflection::new3(1, 2, 3);
        for axis in [Axis::A, Axis::B, Axis::C] {
            let s = axis.to_scan(&h).unwrap();
            assert_eq!(axis.from_scan(3, s).unwrap(), h);
        }
        assert_eq!(Axis::B.to_scan(&Reflection::new2(4, 5)).unwrap(), [5, 4, 0]);
        assert!(Axis::C.permutation(2).is_err());
    }
}
