//! Functions on `[0,1]^m` stored as values on a uniform grid of cell centres.
//!
//! With `ρ` points per axis every grid point carries the histogram weight
//! `τ^m = ρ^{-m}`, so L2 integrals become weighted sums over the values.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid over the unit hypercube.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    points_per_axis: usize,
}

impl GridSpec {
    pub const MAX_DIM: usize = 3;

    pub fn new(dim: usize, points_per_axis: usize) -> Result<Self> {
        if dim == 0 || dim > Self::MAX_DIM {
            return Err(Error::Input(format!(
                "grid dimension must be in 1..={}, got {dim}",
                Self::MAX_DIM
            )));
        }
        if points_per_axis == 0 {
            return Err(Error::Input("points_per_axis must be positive".into()));
        }
        Ok(GridSpec {
            dim,
            points_per_axis,
        })
    }

    /// The `[0,1]` grid with `points_per_axis` cells.
    pub fn unit_interval(points_per_axis: usize) -> Result<Self> {
        Self::new(1, points_per_axis)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    /// Total number of grid points, `ρ^m`.
    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Per-axis spacing `τ`.
    pub fn spacing(&self) -> f64 {
        1.0 / self.points_per_axis as f64
    }

    /// Quadrature weight of every point, `τ^m`.
    pub fn cell_volume(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Coordinates of point `i`. Axis 0 varies slowest.
    pub fn point(&self, i: usize) -> Vec<f64> {
        debug_assert!(i < self.len());
        let tau = self.spacing();
        let mut out = vec![0.0; self.dim];
        let mut rem = i;
        for k in (0..self.dim).rev() {
            let idx = rem % self.points_per_axis;
            rem /= self.points_per_axis;
            out[k] = (idx as f64 + 0.5) * tau;
        }
        out
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }
}

/// A function sampled on a [`GridSpec`]. Immutable; cloning shares storage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    spec: GridSpec,
    values: Arc<[f64]>,
}

impl GridFunction {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::Shape(format!(
                "grid has {} points but {} values were given",
                spec.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite value at grid point {i}")));
        }
        Ok(GridFunction {
            spec,
            values: values.into(),
        })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self::constant(spec, 0.0)
    }

    pub fn constant(spec: GridSpec, c: f64) -> Self {
        GridFunction {
            spec,
            values: vec![c; spec.len()].into(),
        }
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..spec.len()).map(|i| f(&spec.point(i))).collect();
        Self::new(spec, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub(crate) fn check_same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::Shape(format!(
                "grid functions live on different grids ({:?} vs {:?})",
                self.spec, other.spec
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> GridFunction {
        GridFunction {
            spec: self.spec,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        self.check_same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a + b)
            .collect();
        Ok(GridFunction {
            spec: self.spec,
            values,
        })
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.add(&other.scaled(-1.0))
    }

    /// L2 inner product under the histogram rule.
    pub fn inner(&self, other: &GridFunction) -> Result<f64> {
        self.check_same_grid(other)?;
        let s: f64 = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a * b)
            .sum();
        Ok(s * self.spec.cell_volume())
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(self)
    }

    /// Rescales onto the ball `‖g‖ ≤ radius` if outside it; identity inside.
    pub fn clamp_norm(&self, radius: f64) -> GridFunction {
        let norm = self.l2_norm();
        if norm > radius {
            self.scaled(radius / norm)
        } else {
            self.clone()
        }
    }

    /// Writes the function as CSV with header `x0[,x1[,x2]],value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.spec.dim).map(|k| format!("x{k}")).collect();
        header.push("value".into());
        w.write_record(&header)?;
        for (i, v) in self.values.iter().enumerate() {
            let mut row: Vec<String> = self.spec.point(i).iter().map(|c| c.to_string()).collect();
            row.push(v.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV layout produced by [`GridFunction::write_csv`]. The grid
    /// is inferred from the header and row count and the coordinates are
    /// checked against it.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let dim = header.len().saturating_sub(1);
        let expected: Vec<String> = (0..dim)
            .map(|k| format!("x{k}"))
            .chain(std::iter::once("value".to_string()))
            .collect();
        if dim == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::Parse(format!(
                "function CSV header must be x0[,x1[,x2]],value; got {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let mut row = Vec::with_capacity(dim);
            for k in 0..dim {
                row.push(parse_f64(&rec[k])?);
            }
            coords.push(row);
            values.push(parse_f64(&rec[dim])?);
        }
        let n = values.len();
        let rho = (n as f64).powf(1.0 / dim as f64).round() as usize;
        let spec = GridSpec::new(dim, rho.max(1))?;
        if spec.len() != n {
            return Err(Error::Parse(format!(
                "{n} rows do not form a {dim}-dimensional uniform grid"
            )));
        }
        for (i, c) in coords.iter().enumerate() {
            let want = spec.point(i);
            if c.iter().zip(&want).any(|(a, b)| (a - b).abs() > 1e-9) {
                return Err(Error::Parse(format!(
                    "row {i}: coordinates {c:?} do not match grid point {want:?}"
                )));
            }
        }
        GridFunction::new(spec, values)
    }
}

pub(crate) fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("not a number: `{s}`")))
}

/// `bias + Σ_j lambda[j] · basis[j]`, pointwise.
pub fn linear_combine(
    bias: &GridFunction,
    basis: &[GridFunction],
    lambda: &[f64],
) -> Result<GridFunction> {
    if basis.len() != lambda.len() {
        return Err(Error::Shape(format!(
            "{} basis functions but {} coordinates",
            basis.len(),
            lambda.len()
        )));
    }
    if lambda.iter().any(|l| !l.is_finite()) {
        return Err(Error::Input("non-finite subspace coordinate".into()));
    }
    for h in basis {
        bias.check_same_grid(h)?;
    }
    let mut values = bias.values.to_vec();
    for (h, &l) in basis.iter().zip(lambda) {
        if l == 0.0 {
            continue;
        }
        for (v, hv) in values.iter_mut().zip(h.values.iter()) {
            *v += l * hv;
        }
    }
    GridFunction::new(bias.spec, values)
}

/// Histogram approximation of `‖g − h‖²_{L2}`.
pub fn l2_dist_sq(g: &GridFunction, h: &GridFunction) -> Result<f64> {
    g.check_same_grid(h)?;
    let s: f64 = g
        .values
        .iter()
        .zip(h.values.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s * g.spec.cell_volume())
}

pub fn l2_norm(g: &GridFunction) -> f64 {
    let s: f64 = g.values.iter().map(|v| v * v).sum();
    (s * g.spec.cell_volume()).sqrt()
}

/// `(α − α′)ᵀ G (α − α′)` for coefficient vectors over the grid, with `G`
/// the scalar-kernel Gram matrix of the grid points.
pub fn rkhs_dist_sq(alpha: &[f64], alpha_prime: &[f64], gram: &DMatrix<f64>) -> Result<f64> {
    let n = alpha.len();
    if alpha_prime.len() != n || gram.nrows() != n || gram.ncols() != n {
        return Err(Error::Shape(format!(
            "coefficients of length {n} and {} against a {}x{} Gram matrix",
            alpha_prime.len(),
            gram.nrows(),
            gram.ncols()
        )));
    }
    let diff = DVector::from_iterator(n, alpha.iter().zip(alpha_prime).map(|(a, b)| a - b));
    Ok(diff.dot(&(gram * &diff)).max(0.0))
}

/// Gram matrix `H_ij = ⟨h^i, h^j⟩` of a list of grid functions.
pub fn l2_gram(basis: &[GridFunction]) -> Result<DMatrix<f64>> {
    let d = basis.len();
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = basis[i].inner(&basis[j])?;
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}
