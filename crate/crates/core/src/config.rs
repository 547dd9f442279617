//! Run configuration shared by the CLI and the pipeline.

use crate::error::{Error, Result};
use crate::model::MERGE_TOL;

pub use crate::linalg::Precision;
pub use crate::model::{Axis, Mode};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub axis: Axis,
    /// Spectral-ratio threshold for rank decisions.
    pub rank_rel_tol: f64,
    pub merge_tol: f64,
    /// Fit residual allowed when recovering the Patterson map, relative to
    /// the weight scale.
    pub residual_tol: f64,
    /// Box half-widths `H_d`.
    pub window: Vec<u32>,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Neutron,
            axis: Axis::A,
            rank_rel_tol: 1e-8,
            merge_tol: MERGE_TOL,
            residual_tol: 1e-6,
            window: vec![6, 6],
            seed: 0,
            precision: Precision::Double,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rank tolerance", self.rank_rel_tol),
            ("merge tolerance", self.merge_tol),
            ("residual tolerance", self.residual_tol),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(self.window.len() == 2 || self.window.len() == 3) {
            return Err(Error::Config(format!(
                "window needs 2 or 3 half-widths, got {}",
                self.window.len()
            )));
        }
        if self.window.contains(&0) {
            return Err(Error::Config("window half-widths must be positive".into()));
        }
        self.axis.permutation(self.window.len())?;
        Ok(())
    }

    /// The window adapted to dimension `dim`: a missing third half-width
    /// repeats the last one, a surplus one is dropped.
    pub fn window_for(&self, dim: usize) -> Vec<u32> {
        let mut w = self.window.clone();
        while w.len() < dim {
            w.push(*w.last().unwrap_or(&1));
        }
        w.truncate(dim);
        w
    }
}

/// Parses `H`, `H,K` or `H,K,L`; a single value is used for both of the
/// first two axes.
pub fn parse_window(s: &str) -> Result<Vec<u32>> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<u32>()
                .map_err(|_| Error::Config(format!("bad window component '{p}'")))
        })
        .collect::<Result<_>>()?;
    match parts.len() {
        1 => Ok(vec![parts[0], parts[0]]),
        2 | 3 => Ok(parts),
        _ => Err(Error::Config(format!("bad window '{s}'"))),
    }
}

/// Parses a comma-separated list of reals.
pub fn parse_reals(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number '{p}'")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = RunConfig::default();
        c.rank_rel_tol = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.window = vec![0, 3];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.axis = Axis::C;
        assert!(c.validate().is_err());
    }

    #[test]
    fn window_parsing() {
        assert_eq!(parse_window("4").unwrap(), vec![4, 4]);
        assert_eq!(parse_window("4,3,2").unwrap(), vec![4, 3, 2]);
        assert!(parse_window("4,x").is_err());
        assert_eq!(RunConfig::default().window_for(3), vec![6, 6, 6]);
        assert_eq!(parse_reals("1,-2.5").unwrap(), vec![1.0, -2.5]);
    }

    #[test]
    fn enum_parsing() {
        assert_eq!("neutron".parse::<Mode>().unwrap(), Mode::Neutron);
        assert_eq!("b".parse::<Axis>().unwrap(), Axis::B);
        assert_eq!("extended".parse::<Precision>().unwrap(), Precision::Extended);
        assert!("gamma".parse::<Mode>().is_err());
    }
}
