//! Discrete paths on a uniform time grid.
//!
//! A [`DiscretePath`] holds node values `x_0..x_N` at times `t_k = k T / N`.
//! It is the numerical stand-in for an absolutely continuous reference path:
//! admissibility of the continuum object is represented by finiteness of the
//! discrete derivative energy plus an exact initial-point match.

use std::io::{BufRead, Write};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::phase::PhasePoint;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    t_max: f64,
    values: Vec<DVector<f64>>,
}

impl DiscretePath {
    /// Builds a path from node values; requires at least two nodes, equal
    /// dimensions, and finite entries.
    pub fn new(t_max: f64, values: Vec<DVector<f64>>) -> Result<Self> {
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(Error::contract(
                "path horizon T must be positive and finite",
            ));
        }
        if values.len() < 2 {
            return Err(Error::contract("a path needs at least two nodes"));
        }
        let dim = values[0].len();
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::contract(
                "path values must have positive even dimension",
            ));
        }
        for (k, v) in values.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::contract(format!(
                    "node {k} has dimension {} != {dim}",
                    v.len()
                )));
            }
            if !v.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFinite {
                    what: "path node",
                    point: v.iter().copied().collect(),
                });
            }
        }
        Ok(DiscretePath { t_max, values })
    }

    /// Straight line from `x0` to `x1` on N intervals.
    pub fn straight_line(
        x0: &PhasePoint,
        x1: &PhasePoint,
        t_max: f64,
        n_steps: usize,
    ) -> Result<Self> {
        if x0.dim() != x1.dim() {
            return Err(Error::contract("endpoint dimensions differ"));
        }
        if n_steps < 1 {
            return Err(Error::contract("need at least one interval"));
        }
        let values = (0..=n_steps)
            .map(|k| {
                let s = k as f64 / n_steps as f64;
                x0.coords() * (1.0 - s) + x1.coords() * s
            })
            .collect();
        DiscretePath::new(t_max, values)
    }

    /// Constant path sitting at `x`.
    pub fn constant(x: &PhasePoint, t_max: f64, n_steps: usize) -> Result<Self> {
        DiscretePath::new(t_max, vec![x.coords().clone(); n_steps + 1])
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Number of intervals N.
    pub fn n_steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.t_max / self.n_steps() as f64
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn dof(&self) -> usize {
        self.dim() / 2
    }

    pub fn node(&self, k: usize) -> &DVector<f64> {
        &self.values[k]
    }

    pub fn nodes(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn start(&self) -> &DVector<f64> {
        &self.values[0]
    }

    pub fn end(&self) -> &DVector<f64> {
        self.values.last().unwrap()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_max * k as f64 / self.n_steps() as f64
    }

    /// Maximum over nodes of the Euclidean distance to the other path.
    pub fn sup_distance(&self, other: &DiscretePath) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "grids differ");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Discrete H^1 seminorm `sum dt |x_{k+1} - x_k|^2 / dt^2`; finiteness of
    /// this quantity is the grid-level admissibility condition.
    pub fn derivative_energy(&self) -> f64 {
        let dt = self.dt();
        self.values
            .windows(2)
            .map(|w| ((&w[1] - &w[0]) / dt).norm_squared() * dt)
            .sum()
    }

    /// Restricts to every `factor`-th node (grid coarsening).
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_steps() % factor != 0 {
            return Err(Error::contract("subsample factor must divide N"));
        }
        let values = self.values.iter().step_by(factor).cloned().collect();
        DiscretePath::new(self.t_max, values)
    }

    /// Writes `t,x1,...,x2n` rows. Floats are printed in shortest
    /// round-trip form, so rereading reproduces the path bit-exactly.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t")?;
        for i in 1..=self.dim() {
            write!(w, ",x{i}")?;
        }
        writeln!(w)?;
        for (k, v) in self.values.iter().enumerate() {
            write!(w, "{}", self.time(k))?;
            for c in v.iter() {
                write!(w, ",{c}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads a path written by [`DiscretePath::write_csv`]. The time column
    /// must form a uniform grid starting at 0.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty path file".into()))??;
        let dim = header.split(',').count().saturating_sub(1);
        if dim == 0 {
            return Err(Error::Parse("path header needs t plus coordinates".into()));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let t: f64 = fields
                .next()
                .unwrap()
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("row {}: bad time: {e}", lineno + 2)))?;
            let coords: std::result::Result<Vec<f64>, _> =
                fields.map(|f| f.trim().parse::<f64>()).collect();
            let coords =
                coords.map_err(|e| Error::Parse(format!("row {}: bad value: {e}", lineno + 2)))?;
            if coords.len() != dim {
                return Err(Error::Parse(format!(
                    "row {}: expected {dim} coordinates, got {}",
                    lineno + 2,
                    coords.len()
                )));
            }
            times.push(t);
            values.push(DVector::from_vec(coords));
        }
        if values.len() < 2 {
            return Err(Error::Parse("path file has fewer than two rows".into()));
        }
        let t_max = *times.last().unwrap();
        if times[0] != 0.0 {
            return Err(Error::Parse("path must start at t = 0".into()));
        }
        let n = values.len() - 1;
        for (k, &t) in times.iter().enumerate() {
            let expect = t_max * k as f64 / n as f64;
            if (t - expect).abs() > 1e-9 * t_max.max(1.0) {
                return Err(Error::Parse(format!(
                    "non-uniform time grid at row {}",
                    k + 2
                )));
            }
        }
        DiscretePath::new(t_max, values)
    }
}
