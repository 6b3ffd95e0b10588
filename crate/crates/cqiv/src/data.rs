//! Observation tables, design matrices, and weight vectors.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative threshold below which a singular value is treated as zero.
pub const RANK_TOL: f64 = 1e-10;

/// An observation table: response `y`, endogenous regressor `d`, exogenous
/// covariate columns `w`, instrument columns `z`, and a per-row censoring
/// point `c` (the observed response is `y = max(y*, c)`).
#[derive(Debug, Clone)]
pub struct Dataset {
    y: Vec<f64>,
    d: Vec<f64>,
    w: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    c: Vec<f64>,
    w_names: Vec<String>,
    z_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        y: Vec<f64>,
        d: Vec<f64>,
        w: Vec<Vec<f64>>,
        z: Vec<Vec<f64>>,
        c: Vec<f64>,
    ) -> Result<Self> {
        let w_names = (0..w.len()).map(|j| format!("w{}", j + 1)).collect();
        let z_names = (0..z.len()).map(|j| format!("z{}", j + 1)).collect();
        Self::with_names(y, d, w, z, c, w_names, z_names)
    }

    pub fn with_names(
        y: Vec<f64>,
        d: Vec<f64>,
        w: Vec<Vec<f64>>,
        z: Vec<Vec<f64>>,
        c: Vec<f64>,
        w_names: Vec<String>,
        z_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::invalid("dataset must contain at least one observation"));
        }
        if d.len() != n || c.len() != n {
            return Err(Error::invalid("y, d, and c must have equal length"));
        }
        for (label, col) in [("y", &y), ("d", &d), ("c", &c)] {
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite(format!("column {label}")));
            }
        }
        for (cols, names, label) in [(&w, &w_names, "w"), (&z, &z_names, "z")] {
            if cols.len() != names.len() {
                return Err(Error::invalid(format!("{label} column/name count mismatch")));
            }
            for (j, col) in cols.iter().enumerate() {
                if col.len() != n {
                    return Err(Error::invalid(format!(
                        "{label} column {} has length {}, expected {n}",
                        names[j],
                        col.len()
                    )));
                }
                if col.iter().any(|v| !v.is_finite()) {
                    return Err(Error::non_finite(format!("column {}", names[j])));
                }
            }
        }
        Ok(Dataset { y, d, w, z, c, w_names, z_names })
    }

    /// Convenience constructor for a constant censoring point.
    pub fn with_constant_censoring(
        y: Vec<f64>,
        d: Vec<f64>,
        w: Vec<Vec<f64>>,
        z: Vec<Vec<f64>>,
        c: f64,
    ) -> Result<Self> {
        let n = y.len();
        Self::new(y, d, w, z, vec![c; n])
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn w_cols(&self) -> &[Vec<f64>] {
        &self.w
    }

    pub fn z_cols(&self) -> &[Vec<f64>] {
        &self.z
    }

    pub fn w_names(&self) -> &[String] {
        &self.w_names
    }

    pub fn z_names(&self) -> &[String] {
        &self.z_names
    }

    /// Fraction of censored observations, #{y_i ≤ c_i}/n.
    pub fn censored_fraction(&self) -> f64 {
        let censored = self.y.iter().zip(&self.c).filter(|(y, c)| y <= c).count();
        censored as f64 / self.n() as f64
    }

    /// Concatenated (W, Z) row, the regressor list of the first stage.
    pub fn wz_row(&self, i: usize) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.w.len() + self.z.len());
        row.extend(self.w.iter().map(|col| col[i]));
        row.extend(self.z.iter().map(|col| col[i]));
        row
    }
}

/// A labelled n×p regressor matrix with observations in rows.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    column_names: Vec<String>,
}

impl DesignMatrix {
    /// Builds a design from column vectors, validating shape and finiteness.
    pub fn from_columns(columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::invalid("design matrix needs at least one column"));
        }
        let n = columns[0].1.len();
        let p = columns.len();
        if n < p {
            return Err(Error::invalid(format!(
                "design matrix needs at least as many rows ({n}) as columns ({p})"
            )));
        }
        let mut values = DMatrix::zeros(n, p);
        let mut column_names = Vec::with_capacity(p);
        for (j, (name, col)) in columns.into_iter().enumerate() {
            if col.len() != n {
                return Err(Error::invalid(format!("column {name} has ragged length")));
            }
            let mut all_zero = true;
            for (i, v) in col.into_iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::non_finite(format!("design column {name}")));
                }
                if v != 0.0 {
                    all_zero = false;
                }
                values[(i, j)] = v;
            }
            if all_zero {
                return Err(Error::invalid(format!("design column {name} is identically zero")));
            }
            column_names.push(name);
        }
        Ok(DesignMatrix { values, column_names })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols()).map(|j| self.values[(i, j)]).collect()
    }

    /// x_i'β for one row.
    pub fn row_dot(&self, i: usize, beta: &[f64]) -> f64 {
        debug_assert_eq!(beta.len(), self.cols());
        let mut acc = 0.0;
        for (j, b) in beta.iter().enumerate() {
            acc += self.values[(i, j)] * b;
        }
        acc
    }

    /// Xβ for all rows.
    pub fn predict(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.rows()).map(|i| self.row_dot(i, beta)).collect()
    }

    /// A design containing only the given rows.
    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        let mut values = DMatrix::zeros(rows.len(), self.cols());
        for (r, &i) in rows.iter().enumerate() {
            for j in 0..self.cols() {
                values[(r, j)] = self.values[(i, j)];
            }
        }
        DesignMatrix { values, column_names: self.column_names.clone() }
    }
}

/// Nonnegative observation weights.
#[derive(Debug, Clone)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("weight vector must be nonempty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("weight vector"));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("weights must be nonnegative"));
        }
        Ok(WeightVector(values))
    }

    pub fn ones(n: usize) -> Self {
        WeightVector(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn positive_count(&self) -> usize {
        self.0.iter().filter(|&&w| w > 0.0).count()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Weights restricted to a row subset.
    pub fn select(&self, rows: &[usize]) -> WeightVector {
        WeightVector(rows.iter().map(|&i| self.0[i]).collect())
    }
}
