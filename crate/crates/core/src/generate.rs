//! Seeded random structures and Patterson maps for test corpora.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lattice::shape_profile;
use crate::model::{
    check_dim, circle_distance, compute_patterson, Atom, Axis, Centre, CrystalStructure, Mode, PattersonMap,
    Position,
};

/// Restarts allowed before giving up on a separation constraint.
pub const RETRY_CAP: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct StructureOptions {
    pub n_atoms: usize,
    pub dim: usize,
    /// Smallest per-coordinate circle distance between any two atoms.
    pub min_separation: f64,
    /// Magnitude range of the charges.
    pub charge_range: (f64, f64),
    pub mode: Mode,
    /// Snap coordinates to multiples of `1/grid`.
    pub grid: Option<u32>,
}

impl Default for StructureOptions {
    fn default() -> Self {
        StructureOptions {
            n_atoms: 3,
            dim: 2,
            min_separation: 0.05,
            charge_range: (0.5, 3.0),
            mode: Mode::Neutron,
            grid: Some(20),
        }
    }
}

fn coordinate(rng: &mut ChaCha8Rng, grid: Option<u32>) -> f64 {
    match grid {
        Some(g) => rng.gen_range(0..g) as f64 / g as f64,
        None => rng.gen_range(0.0..1.0),
    }
}

fn charge(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    loop {
        let z: f64 = rng.gen_range(range.0..=range.1);
        if z.abs() > 1e-3 {
            return z;
        }
    }
}

/// Rejection-sampled structure; bit-identical for a fixed seed. Neutron
/// mode with two or more atoms always mixes signs.
pub fn generate_random_structure(seed: u64, opts: &StructureOptions) -> Result<CrystalStructure> {
    check_dim(opts.dim)?;
    if opts.n_atoms == 0 {
        return Err(Error::Config("n_atoms must be at least 1".into()));
    }
    let (lo, hi) = opts.charge_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::Config(format!("bad charge range ({lo}, {hi})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sep_ok = |p: &Position, q: &Position| {
        p.min_coordinate_distance(q) >= opts.min_separation - 1e-12
    };
    for _ in 0..RETRY_CAP {
        let mut positions: Vec<Position> = Vec::with_capacity(opts.n_atoms);
        for _ in 0..opts.n_atoms {
            let mut placed = false;
            for _ in 0..RETRY_CAP {
                let c: Vec<f64> = (0..opts.dim).map(|_| coordinate(&mut rng, opts.grid)).collect();
                let p = Position::new(&c)?;
                if positions.iter().all(|q| sep_ok(&p, q)) {
                    positions.push(p);
                    placed = true;
                    break;
                }
            }
            if !placed {
                break;
            }
        }
        if positions.len() < opts.n_atoms {
            continue;
        }
        let mut charges: Vec<f64> = (0..opts.n_atoms).map(|_| charge(&mut rng, (lo, hi))).collect();
        if opts.mode == Mode::Neutron {
            for z in charges.iter_mut() {
                if rng.gen_bool(0.5) {
                    *z = -*z;
                }
            }
            if opts.n_atoms >= 2 && (charges.iter().all(|z| *z > 0.0) || charges.iter().all(|z| *z < 0.0)) {
                let j = rng.gen_range(0..opts.n_atoms);
                charges[j] = -charges[j];
            }
        }
        let atoms = positions
            .into_iter()
            .zip(charges)
            .map(|(position, charge)| Atom { charge, position })
            .collect();
        return CrystalStructure::new(opts.dim, atoms);
    }
    Err(Error::RetryCapExceeded(RETRY_CAP))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapOptions {
    pub dim: usize,
    /// Number of mirror pairs `±δ`.
    pub pairs: usize,
    /// Add one self-mirror centre with half-integral coordinates.
    pub self_mirror: bool,
    pub weight_range: (f64, f64),
    /// Allow negative weights.
    pub signed: bool,
    pub grid: u32,
    /// Probability of reusing an existing coordinate value, which creates
    /// columns and rows holding several centres.
    pub share: f64,
    /// Only accept maps whose profile along `axis` is nested.
    pub nested_along: Option<Axis>,
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions {
            dim: 2,
            pairs: 3,
            self_mirror: false,
            weight_range: (0.5, 3.0),
            signed: true,
            grid: 20,
            share: 0.35,
            nested_along: None,
        }
    }
}

/// Random centrosymmetric Patterson map on a grid; not necessarily the map
/// of any structure.
pub fn random_patterson_map(seed: u64, opts: &MapOptions) -> Result<PattersonMap> {
    check_dim(opts.dim)?;
    let g = opts.grid;
    if g < 4 || g % 2 == 1 {
        return Err(Error::Config("grid must be even and at least 4".into()));
    }
    let capacity = (g as usize).pow(opts.dim as u32) / 2;
    if opts.pairs + 1 > capacity {
        return Err(Error::Config("too many centres for the grid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RETRY_CAP {
        let mut pts: Vec<[u32; 3]> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        let weight = |rng: &mut ChaCha8Rng| {
            let w: f64 = rng.gen_range(opts.weight_range.0..=opts.weight_range.1);
            if opts.signed && rng.gen_bool(0.5) {
                -w
            } else {
                w
            }
        };
        if opts.self_mirror {
            let half = g / 2;
            let choices: Vec<[u32; 3]> = match opts.dim {
                2 => vec![[half, 0, 0], [0, half, 0], [half, half, 0]],
                _ => (1..8u32)
                    .map(|m| [half * (m & 1), half * (m >> 1 & 1), half * (m >> 2 & 1)])
                    .collect(),
            };
            pts.push(choices[rng.gen_range(0..choices.len())]);
            let w = weight(&mut rng);
            weights.push(w);
        }
        let mut attempts = 0;
        while pts.len() < opts.pairs * 2 + usize::from(opts.self_mirror) && attempts < 100 * RETRY_CAP {
            attempts += 1;
            let mut c = [0u32; 3];
            for d in 0..opts.dim {
                c[d] = if !pts.is_empty() && rng.gen_bool(opts.share) {
                    pts[rng.gen_range(0..pts.len())][d]
                } else {
                    rng.gen_range(0..g)
                };
            }
            let m = [(g - c[0]) % g, (g - c[1]) % g, (g - c[2]) % g];
            let m = [m[0], m[1], if opts.dim == 3 { m[2] } else { 0 }];
            if c == [0; 3] || c == m || pts.contains(&c) || pts.contains(&m) {
                continue;
            }
            let w = weight(&mut rng);
            pts.push(c);
            pts.push(m);
            weights.push(w);
            weights.push(w);
        }
        if pts.len() < opts.pairs * 2 + usize::from(opts.self_mirror) {
            continue;
        }
        let centres = pts
            .iter()
            .zip(&weights)
            .map(|(c, &w)| {
                let coords: Vec<f64> = (0..opts.dim).map(|d| c[d] as f64 / g as f64).collect();
                Ok(Centre {
                    weight: w,
                    delta: Position::new(&coords)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let map = PattersonMap::new(opts.dim, centres)?;
        if let Some(axis) = opts.nested_along {
            if !shape_profile(&map, axis)?.is_nested() {
                continue;
            }
        }
        return Ok(map.sorted());
    }
    Err(Error::RetryCapExceeded(RETRY_CAP))
}

/// Patterson map of a freshly generated structure.
pub fn random_structure_map(seed: u64, opts: &StructureOptions) -> Result<(CrystalStructure, PattersonMap)> {
    let s = generate_random_structure(seed, opts)?;
    let p = compute_patterson(&s);
    Ok((s, p))
}

/// Smallest pairwise circle distance between distinct x-projections, for
/// reporting node separation.
pub fn min_projection_gap(p: &PattersonMap, axis: usize) -> f64 {
    let mut xs: Vec<f64> = p.centres().iter().map(|c| c.delta.get(axis)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| circle_distance(*a, *b) < 1e-9);
    let mut g = f64::INFINITY;
    for a in 0..xs.len() {
        for b in a + 1..xs.len() {
            g = g.min(circle_distance(xs[a], xs[b]));
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_single_atom() {
        let opts = StructureOptions {
            n_atoms: 1,
            grid: None,
            ..Default::default()
        };
        let a = generate_random_structure(1, &opts).unwrap();
        let b = generate_random_structure(1, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn xray_charges_positive() {
        let opts = StructureOptions {
            n_atoms: 5,
            mode: Mode::Xray,
            ..Default::default()
        };
        for seed in 0..20 {
            let s = generate_random_structure(seed, &opts).unwrap();
            assert!(s.charges().iter().all(|z| *z > 0.0));
        }
    }

    #[test]
    fn separation_respected() {
        let opts = StructureOptions {
            n_atoms: 4,
            min_separation: 0.05,
            grid: None,
            ..Default::default()
        };
        for seed in 0..20 {
            let s = generate_random_structure(seed, &opts).unwrap();
            let atoms = s.atoms();
            for i in 0..atoms.len() {
                for j in i + 1..atoms.len() {
                    assert!(atoms[i].position.min_coordinate_distance(&atoms[j].position) >= 0.05 - 1e-12);
                }
            }
            let c = s.charges();
            assert!(c.iter().any(|z| *z > 0.0) && c.iter().any(|z| *z < 0.0));
            assert!(c.iter().all(|z| z.abs() > 1e-3));
        }
    }

    #[test]
    fn impossible_separation_hits_cap() {
        let opts = StructureOptions {
            n_atoms: 30,
            min_separation: 0.2,
            ..Default::default()
        };
        assert!(matches!(generate_random_structure(3, &opts), Err(Error::RetryCapExceeded(_))));
    }

    #[test]
    fn maps_are_centrosymmetric() {
        for seed in 0..20 {
            let opts = MapOptions {
                dim: 2 + (seed as usize % 2),
                pairs: 4,
                self_mirror: seed % 3 == 0,
                nested_along: Some(Axis::A),
                ..Default::default()
            };
            let p = random_patterson_map(seed, &opts).unwrap();
            assert_eq!(p.nbar(), 8 + usize::from(opts.self_mirror));
            assert!(p.is_centrosymmetric(1e-12));
        }
    }
}
