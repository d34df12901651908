//! Bias-free ReLU feed-forward networks.
//!
//! A network with `L` hidden layers is the map
//! `x ↦ W^L φ(W^{L-1} φ(… φ(W^0 x)))` where `φ` is the elementwise ReLU and
//! `W^l` has shape `h_{l+1} × h_l`, with `h_0 = d` and `h_{L+1}` the output
//! dimension. There are no bias terms.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    /// Entrywise ℓ1 norm, the sum of absolute entries.
    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    /// Largest row ℓ1 norm.
    pub fn inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = rhs.row(k);
                for (o, b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `out = self · x`.
    pub(crate) fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.row(r).iter().zip(x).map(|(w, v)| w * v).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape(format!(
                "vector of length {} for a {}x{} matrix",
                x.len(),
                self.rows,
                self.cols
            )));
        }
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut out);
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Architecture and ℓ1 budgets of a network class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    /// Hidden widths `h_1..h_L`.
    pub hidden: Vec<usize>,
    #[serde(default = "one")]
    pub output_dim: usize,
    /// Budget on `Σ_{l=1..L} ‖W^l‖_1`.
    pub budget_vs: f64,
    /// Budget on every row ℓ1 norm of `W^0`.
    pub budget_v0: f64,
}

fn one() -> usize {
    1
}

impl NetworkSpec {
    pub fn new(
        input_dim: usize,
        hidden: Vec<usize>,
        output_dim: usize,
        budget_vs: f64,
        budget_v0: f64,
    ) -> Result<Self> {
        let spec = NetworkSpec {
            input_dim,
            hidden,
            output_dim,
            budget_vs,
            budget_v0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::precondition("input and output dimensions must be >= 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::precondition("need at least one hidden layer, all widths >= 1"));
        }
        if !(self.budget_vs > 0.0 && self.budget_v0 > 0.0) {
            return Err(Error::precondition("l1 budgets must be positive"));
        }
        Ok(())
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    /// Full width chain `h_0, …, h_{L+1}`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }
}

/// Weight matrices `W^0..W^L` of a bias-free network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    weights: Vec<Matrix>,
}

impl NetworkParams {
    pub fn new(weights: Vec<Matrix>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::shape("a network needs at least W^0 and W^1"));
        }
        for (l, pair) in weights.windows(2).enumerate() {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::shape(format!(
                    "W^{} is {}x{} but W^{} has {} columns",
                    l,
                    pair[0].rows(),
                    pair[0].cols(),
                    l + 1,
                    pair[1].cols()
                )));
            }
        }
        if weights.iter().any(|w| w.rows() == 0 || w.cols() == 0) {
            return Err(Error::shape("empty weight matrix"));
        }
        if !weights.iter().all(Matrix::is_finite) {
            return Err(Error::precondition("weights must be finite"));
        }
        Ok(NetworkParams { weights })
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        let widths = spec.widths();
        let weights = widths
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0]))
            .collect();
        NetworkParams { weights }
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.weights.len() - 1].rows()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.weights.iter().map(Matrix::cols).collect();
        w.push(self.output_dim());
        w
    }

    pub fn matches(&self, spec: &NetworkSpec) -> bool {
        self.widths() == spec.widths()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.as_slice().len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "input of length {} for a network with d = {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut act = x.to_vec();
        let last = self.weights.len() - 1;
        for (l, w) in self.weights.iter().enumerate() {
            let mut z = vec![0.0; w.rows()];
            w.mul_vec_into(&act, &mut z);
            if l < last {
                relu_in_place(&mut z);
            }
            act = z;
        }
        Ok(act)
    }

    /// Scalar-output convenience; panics on shape mismatch.
    pub fn eval_scalar(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(self.output_dim(), 1);
        self.forward(x).expect("input dimension mismatch")[0]
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    widths: Vec<usize>,
    weights: Vec<Vec<Vec<f64>>>,
}

impl Serialize for NetworkParams {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsDoc {
            widths: self.widths(),
            weights: self.weights.iter().map(Matrix::to_rows).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NetworkParams {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = ParamsDoc::deserialize(d)?;
        let weights = doc
            .weights
            .iter()
            .map(|rows| Matrix::from_rows(rows))
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        let params = NetworkParams::new(weights).map_err(D::Error::custom)?;
        if params.widths() != doc.widths {
            return Err(D::Error::custom(format!(
                "declared widths {:?} do not match weight shapes {:?}",
                doc.widths,
                params.widths()
            )));
        }
        Ok(params)
    }
}

pub fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v.max(0.0)).collect()
}

pub(crate) fn relu_in_place(z: &mut [f64]) {
    for v in z {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Outcome of checking parameters against the sparse parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetCheck {
    pub sum_layer_l1: f64,
    pub max_row_l1_w0: f64,
    pub satisfied: bool,
}

/// Both budgets are inclusive.
pub fn check_budgets(params: &NetworkParams, spec: &NetworkSpec) -> BudgetCheck {
    let sum_layer_l1 = params.weights[1..].iter().map(Matrix::l1_norm).sum();
    let max_row_l1_w0 = params.weights[0].inf_norm();
    BudgetCheck {
        sum_layer_l1,
        max_row_l1_w0,
        satisfied: sum_layer_l1 <= spec.budget_vs && max_row_l1_w0 <= spec.budget_v0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerNorms {
    pub l1: f64,
    pub inf: f64,
}

pub fn operator_norms(params: &NetworkParams) -> Vec<LayerNorms> {
    params
        .weights
        .iter()
        .map(|w| LayerNorms {
            l1: w.l1_norm(),
            inf: w.inf_norm(),
        })
        .collect()
}
