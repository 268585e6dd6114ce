//! Uniform cubic velocity grids carrying nonnegative distribution values.

use crate::error::{Error, Result};
use std::fmt::Write as _;

/// Cell-centred grid on `[−V_max, V_max]^N` with `M` points per axis.
/// Node `i` along an axis sits at `−V_max + (i + 1/2)·h`, `h = 2V_max/M`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDistribution {
    pub dimension: usize,
    pub m: usize,
    pub v_max: f64,
    pub values: Vec<f64>,
}

impl GridDistribution {
    pub fn zeros(dimension: usize, m: usize, v_max: f64) -> Self {
        GridDistribution {
            dimension,
            m,
            v_max,
            values: vec![0.0; m.pow(dimension as u32)],
        }
    }

    /// Samples `f` at every node.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(dimension: usize, m: usize, v_max: f64, f: F) -> Self {
        let mut g = Self::zeros(dimension, m, v_max);
        let mut v = vec![0.0; dimension];
        for i in 0..g.values.len() {
            g.node_into(i, &mut v);
            g.values[i] = f(&v);
        }
        g
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.v_max / self.m as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dimension as i32)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.v_max + (i as f64 + 0.5) * self.spacing()
    }

    /// Writes the coordinates of flat node `idx` into `out` (last axis fastest).
    pub fn node_into(&self, mut idx: usize, out: &mut [f64]) {
        for d in (0..self.dimension).rev() {
            out[d] = self.coord(idx % self.m);
            idx /= self.m;
        }
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        self.node_into(idx, &mut v);
        v
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.m.pow((self.dimension - 1 - axis) as u32)
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.m.pow(self.dimension as u32) {
            return Err(Error::InvalidRequest(
                "grid value count does not match M^N".into(),
            ));
        }
        if self.values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidRequest(
                "grid values must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Text format: a header `lbgrid 1 <N> <M> <V_max>` followed by one value per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("lbgrid 1 {} {} {:?}\n", self.dimension, self.m, self.v_max);
        for v in &self.values {
            let _ = writeln!(s, "{v:?}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::InvalidRequest(format!("grid file: {m}"));
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| bad("empty"))?
            .split_whitespace()
            .collect();
        if header.len() != 5 || header[0] != "lbgrid" || header[1] != "1" {
            return Err(bad("bad header"));
        }
        let dimension: usize = header[2].parse().map_err(|_| bad("dimension"))?;
        let m: usize = header[3].parse().map_err(|_| bad("M"))?;
        let v_max: f64 = header[4].parse().map_err(|_| bad("V_max"))?;
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|_| bad("value")))
            .collect::<Result<Vec<_>>>()?;
        let g = GridDistribution {
            dimension,
            m,
            v_max,
            values,
        };
        g.validate()?;
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_layout_and_roundtrip() {
        let g = GridDistribution::from_fn(2, 4, 1.0, |v| v[0] + 10.0 * v[1] + 20.0);
        assert_eq!(g.node(0), vec![-0.75, -0.75]);
        assert_eq!(g.node(1), vec![-0.75, -0.25]);
        assert_eq!(g.stride(0), 4);
        let back = GridDistribution::from_text(&g.to_text()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rejects_negative_values() {
        assert!(GridDistribution::from_text("lbgrid 1 1 2 1.0\n1.0\n-1.0\n").is_err());
    }
}
