//! Plain-text codecs. Reals are written with 17 significant digits so every
//! value survives a round trip exactly. Blank lines and lines starting with
//! `#` are ignored on input.
//!
//! ```text
//! structure      D N            then N lines   Z x y [z]
//! patterson      D NBAR         then NBAR lines NU x y [z]
//! intensities    D [SUM_ZSQ]    then lines     h k [l] I
//! basic set      D N AXIS MODE  then N reflections, ZEROS, zero reflections
//! ```
//!
//! A reconstruction output is an intensity file optionally followed by a
//! `GAPS` line and the unreachable reflections.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::basis::{BasicSet, SearchDiagnostics};
use crate::error::{Error, Result};
use crate::model::{check_dim, Atom, Axis, Centre, CrystalStructure, IntensitySet, Mode, PattersonMap, Position, Reflection};

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

struct Lines<'a> {
    items: Vec<(usize, Vec<&'a str>)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Lines<'a> {
        let items = text
            .lines()
            .enumerate()
            .filter_map(|(i, l)| {
                let t = l.trim();
                (!t.is_empty() && !t.starts_with('#')).then(|| (i + 1, t.split_whitespace().collect()))
            })
            .collect();
        Lines { items, pos: 0 }
    }

    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        let last = self.items.last().map_or(1, |l| l.0);
        let item = self.items.get(self.pos).cloned().ok_or(Error::Parse {
            line: last,
            msg: format!("unexpected end of input, expected {what}"),
        })?;
        self.pos += 1;
        Ok(item)
    }

    fn peek(&self) -> Option<&(usize, Vec<&'a str>)> {
        self.items.get(self.pos)
    }

    fn finish(&self) -> Result<()> {
        match self.peek() {
            Some((line, _)) => Err(Error::Parse {
                line: *line,
                msg: "unexpected trailing content".into(),
            }),
            None => Ok(()),
        }
    }
}

fn field<T: FromStr>(line: usize, tok: &str, what: &str) -> Result<T> {
    tok.parse::<T>().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {what} '{tok}'"),
    })
}

fn expect_len(line: usize, toks: &[&str], allowed: &[usize], what: &str) -> Result<()> {
    if allowed.contains(&toks.len()) {
        Ok(())
    } else {
        Err(Error::Parse {
            line,
            msg: format!("{what}: expected {allowed:?} fields, found {}", toks.len()),
        })
    }
}

fn parse_dim(line: usize, tok: &str) -> Result<usize> {
    let d: usize = field(line, tok, "dimension")?;
    check_dim(d).map_err(|_| Error::Parse {
        line,
        msg: format!("dimension must be 2 or 3, got {d}"),
    })?;
    Ok(d)
}

fn wrap_parse<T>(line: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { .. } => e,
        other => Error::Parse {
            line,
            msg: other.to_string(),
        },
    })
}

fn parse_coords(line: usize, toks: &[&str]) -> Result<Position> {
    let coords: Vec<f64> = toks.iter().map(|v| field(line, v, "coordinate")).collect::<Result<_>>()?;
    if let Some(c) = coords.iter().find(|c| !(0.0..1.0).contains(*c)) {
        return Err(Error::Parse {
            line,
            msg: format!("coordinate {c} outside [0, 1)"),
        });
    }
    wrap_parse(line, Position::new(&coords))
}

fn parse_reflection(line: usize, toks: &[&str], dim: usize) -> Result<Reflection> {
    let idx: Vec<i32> = toks[..dim]
        .iter()
        .map(|t| field(line, t, "index"))
        .collect::<Result<_>>()?;
    Reflection::new(&idx)
}

fn write_reflection(out: &mut String, h: &Reflection) {
    let parts: Vec<String> = h.indices().iter().map(|v| v.to_string()).collect();
    out.push_str(&parts.join(" "));
}

pub fn format_structure(s: &CrystalStructure) -> String {
    let mut out = format!("{} {}\n", s.dim(), s.len());
    for a in s.atoms() {
        out.push_str(&real(a.charge));
        for c in a.position.coords() {
            out.push(' ');
            out.push_str(&real(*c));
        }
        out.push('\n');
    }
    out
}

pub fn parse_structure(text: &str) -> Result<CrystalStructure> {
    let mut lines = Lines::new(text);
    let (l0, head) = lines.next("header 'D N'")?;
    expect_len(l0, &head, &[2], "structure header")?;
    let dim = parse_dim(l0, head[0])?;
    let n: usize = field(l0, head[1], "atom count")?;
    let mut atoms = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, t) = lines.next("atom line")?;
        expect_len(ln, &t, &[dim + 1], "atom line")?;
        let charge: f64 = field(ln, t[0], "charge")?;
        atoms.push(Atom {
            charge,
            position: parse_coords(ln, &t[1..])?,
        });
    }
    lines.finish()?;
    wrap_parse(l0, CrystalStructure::new(dim, atoms))
}

pub fn format_patterson(p: &PattersonMap) -> String {
    let mut out = format!("{} {}\n", p.dim(), p.nbar());
    for c in p.centres() {
        out.push_str(&real(c.weight));
        for x in c.delta.coords() {
            out.push(' ');
            out.push_str(&real(*x));
        }
        out.push('\n');
    }
    out
}

pub fn parse_patterson(text: &str) -> Result<PattersonMap> {
    let mut lines = Lines::new(text);
    let (l0, head) = lines.next("header 'D NBAR'")?;
    expect_len(l0, &head, &[2], "Patterson header")?;
    let dim = parse_dim(l0, head[0])?;
    let n: usize = field(l0, head[1], "centre count")?;
    let mut centres = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, t) = lines.next("centre line")?;
        expect_len(ln, &t, &[dim + 1], "centre line")?;
        let weight: f64 = field(ln, t[0], "weight")?;
        centres.push(Centre {
            weight,
            delta: parse_coords(ln, &t[1..])?,
        });
    }
    lines.finish()?;
    wrap_parse(l0, PattersonMap::new(dim, centres))
}

pub fn format_intensities(i: &IntensitySet) -> String {
    let mut out = match i.sum_zsq() {
        Some(z) => format!("{} {}\n", i.dim(), real(z)),
        None => format!("{}\n", i.dim()),
    };
    for (h, v) in i.iter() {
        write_reflection(&mut out, &h);
        let _ = writeln!(out, " {}", real(v));
    }
    out
}

fn parse_intensity_lines(lines: &mut Lines<'_>) -> Result<IntensitySet> {
    let (l0, head) = lines.next("header 'D'")?;
    expect_len(l0, &head, &[1, 2], "intensity header")?;
    let dim = parse_dim(l0, head[0])?;
    let mut set = IntensitySet::new(dim);
    if head.len() == 2 {
        set.set_sum_zsq(Some(field(l0, head[1], "sum of squared charges")?));
    }
    while let Some((ln, t)) = lines.peek().cloned() {
        if t[0] == "GAPS" {
            break;
        }
        lines.pos += 1;
        expect_len(ln, &t, &[dim + 1], "intensity line")?;
        let h = parse_reflection(ln, &t, dim)?;
        let v: f64 = field(ln, t[dim], "intensity")?;
        if let Some(prev) = set.get(&h) {
            if prev != v {
                return Err(Error::Parse {
                    line: ln,
                    msg: format!("conflicting intensities for the Friedel pair of {h}"),
                });
            }
        }
        set.insert(h, v)?;
    }
    Ok(set)
}

pub fn parse_intensities(text: &str) -> Result<IntensitySet> {
    let mut lines = Lines::new(text);
    let set = parse_intensity_lines(&mut lines)?;
    lines.finish()?;
    Ok(set)
}

/// Intensity file followed by a `GAPS` section when `gaps` is nonempty.
pub fn format_reconstruction(i: &IntensitySet, gaps: &[Reflection]) -> String {
    let mut out = format_intensities(i);
    if !gaps.is_empty() {
        out.push_str("GAPS\n");
        for h in gaps {
            write_reflection(&mut out, h);
            out.push('\n');
        }
    }
    out
}

pub fn parse_reconstruction(text: &str) -> Result<(IntensitySet, Vec<Reflection>)> {
    let mut lines = Lines::new(text);
    let set = parse_intensity_lines(&mut lines)?;
    let mut gaps = Vec::new();
    if lines.peek().is_some() {
        lines.next("GAPS")?;
        while let Some((ln, t)) = lines.peek().cloned() {
            lines.pos += 1;
            expect_len(ln, &t, &[set.dim()], "gap line")?;
            gaps.push(parse_reflection(ln, &t, set.dim())?);
        }
    }
    Ok((set, gaps))
}

pub fn format_basic_set(b: &BasicSet) -> String {
    let mut out = format!("{} {} {} {}\n", b.dim, b.len(), b.axis, b.mode);
    for h in &b.refs {
        write_reflection(&mut out, h);
        out.push('\n');
    }
    out.push_str("ZEROS\n");
    for z in &b.zeros {
        write_reflection(&mut out, z);
        out.push('\n');
    }
    let d = &b.diagnostics;
    let _ = writeln!(
        out,
        "DIAGNOSTICS {} {} {}",
        real(d.min_accepted_ratio),
        real(d.max_zero_ratio),
        d.gram_evaluations
    );
    out
}

pub fn parse_basic_set(text: &str) -> Result<BasicSet> {
    let mut lines = Lines::new(text);
    let (l0, head) = lines.next("header 'D N AXIS MODE'")?;
    expect_len(l0, &head, &[4], "basic-set header")?;
    let dim = parse_dim(l0, head[0])?;
    let n: usize = field(l0, head[1], "basic-set size")?;
    let axis: Axis = wrap_parse(l0, head[2].parse())?;
    let mode: Mode = wrap_parse(l0, head[3].parse())?;
    let mut refs = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, t) = lines.next("reflection")?;
        expect_len(ln, &t, &[dim], "reflection")?;
        refs.push(parse_reflection(ln, &t, dim)?);
    }
    let (lz, t) = lines.next("ZEROS")?;
    if t != ["ZEROS"] {
        return Err(Error::Parse {
            line: lz,
            msg: "expected ZEROS".into(),
        });
    }
    let mut zeros = Vec::new();
    let mut diagnostics = SearchDiagnostics::default();
    while let Some((ln, t)) = lines.peek().cloned() {
        lines.pos += 1;
        if t[0] == "DIAGNOSTICS" {
            expect_len(ln, &t, &[4], "diagnostics")?;
            diagnostics = SearchDiagnostics {
                min_accepted_ratio: field(ln, t[1], "ratio")?,
                max_zero_ratio: field(ln, t[2], "ratio")?,
                gram_evaluations: field(ln, t[3], "count")?,
            };
            break;
        }
        expect_len(ln, &t, &[dim], "zero")?;
        zeros.push(parse_reflection(ln, &t, dim)?);
    }
    lines.finish()?;
    Ok(BasicSet {
        dim,
        axis,
        mode,
        refs,
        zeros,
        diagnostics,
    })
}

pub fn read_to_string(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

pub fn write_string(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(fs::write(path, text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn structure_strategy() -> impl Strategy<Value = CrystalStructure> {
        (2usize..=3, prop::collection::vec((0.1f64..5.0, any::<bool>(), prop::collection::vec(0.0f64..1.0, 3)), 1..6))
            .prop_filter_map("distinct positions", |(dim, atoms)| {
                let atoms: Vec<Atom> = atoms
                    .into_iter()
                    .map(|(z, neg, c)| Atom {
                        charge: if neg { -z } else { z },
                        position: Position::new(&c[..dim]).unwrap(),
                    })
                    .collect();
                CrystalStructure::new(dim, atoms).ok()
            })
    }

    proptest! {
        #[test]
        fn structure_round_trip(s in structure_strategy()) {
            let back = parse_structure(&format_structure(&s)).unwrap();
            prop_assert_eq!(back, s);
        }

        #[test]
        fn patterson_round_trip(s in structure_strategy()) {
            let p = crate::model::compute_patterson(&s);
            let back = parse_patterson(&format_patterson(&p)).unwrap();
            prop_assert_eq!(back, p);
        }

        #[test]
        fn intensity_round_trip(s in structure_strategy(), hw in 1u32..4) {
            let i = crate::model::synth_window(&s, &vec![hw; s.dim()]).unwrap();
            let back = parse_intensities(&format_intensities(&i)).unwrap();
            prop_assert_eq!(back, i);
        }
    }

    #[test]
    fn basic_set_round_trip() {
        let b = BasicSet {
            dim: 3,
            axis: Axis::C,
            mode: Mode::Neutron,
            refs: vec![Reflection::new3(0, 0, 0), Reflection::new3(0, 0, 1)],
            zeros: vec![Reflection::new3(0, 0, 2), Reflection::new3(1, 0, 0)],
            diagnostics: SearchDiagnostics {
                min_accepted_ratio: 0.125,
                max_zero_ratio: 3.3e-17,
                gram_evaluations: 4,
            },
        };
        assert_eq!(parse_basic_set(&format_basic_set(&b)).unwrap(), b);
    }

    #[test]
    fn reconstruction_round_trip() {
        let mut i = IntensitySet::new(2);
        i.insert(Reflection::new2(1, 2), -0.3).unwrap();
        let gaps = vec![Reflection::new2(5, 5)];
        let (back, g) = parse_reconstruction(&format_reconstruction(&i, &gaps)).unwrap();
        assert_eq!(back, i);
        assert_eq!(g, gaps);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(parse_structure("2 2\n1.0 0.1 0.2\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_structure("4 1\n1.0 0.1 0.2\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_structure("2 1\n1.0 0.1 abc\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_structure("2 1\n1.0 0.1 1.5\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_intensities("2\n1 0 1.0\n-1 0 2.0\n"), Err(Error::Parse { line: 3, .. })));
        let s = parse_structure("# demo\n2 1\n\n2.5 0.25 0.5\n").unwrap();
        assert_eq!(s.charges(), vec![2.5]);
    }
}
