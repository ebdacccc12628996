//! Graph convolution over the attribute graph.
//!
//! Each layer computes `H' = act(P̃ · H · Θ)`; hidden layers use ReLU and the
//! last layer is linear so the resulting classifier bank `U` (c×d) can hold
//! signed weights. `U` scores a visual feature `z` as `softmax(U z)`, and a
//! single linear map over its rows yields per-attribute gates `w ∈ (0,1)^c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid_scalar, softmax_slice, Matrix, Tape, Var, clamped_ln};
use crate::rng::{uniform_matrix, SeededRng};

/// How attribute scores are produced from classifier logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttributeHead {
    /// Softmax over all attributes with cross-entropy against the multi-hot target.
    #[default]
    Softmax,
    /// Independent sigmoid per attribute with summed binary cross-entropy.
    Sigmoid,
}

impl AttributeHead {
    pub fn code(self) -> u32 {
        match self {
            AttributeHead::Softmax => 0,
            AttributeHead::Sigmoid => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(AttributeHead::Softmax),
            1 => Some(AttributeHead::Sigmoid),
            _ => None,
        }
    }
}

impl std::str::FromStr for AttributeHead {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(AttributeHead::Softmax),
            "sigmoid" => Ok(AttributeHead::Sigmoid),
            other => Err(Error::Config(format!(
                "unknown head {other:?} (expected softmax or sigmoid)"
            ))),
        }
    }
}

impl std::fmt::Display for AttributeHead {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttributeHead::Softmax => "softmax",
            AttributeHead::Sigmoid => "sigmoid",
        })
    }
}

/// Default hidden width for a stack of `layers` layers mapping `c` nodes to
/// `d`-dimensional classifiers: every hidden layer uses `max(c, d/2)`.
pub fn default_hidden_width(c: usize, d: usize) -> usize {
    c.max(d / 2)
}

/// Layer weights `Θ⁽⁰⁾ … Θ⁽ᴸ⁻¹⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub layers: Vec<Matrix>,
}

impl GcnParams {
    /// Seeded init, each `Θ⁽ˡ⁾` uniform in `[-1/√d_l, 1/√d_l]`.
    pub fn init(dims: &[usize], rng: &mut SeededRng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Contract(format!(
                "GCN needs at least one layer, got dims {dims:?}"
            )));
        }
        let layers = dims
            .windows(2)
            .map(|w| uniform_matrix(rng, w[0], w[1], 1.0 / (w[0] as f64).sqrt()))
            .collect();
        Ok(Self { layers })
    }

    /// Dimension chain `d_0 = c, d_1, …, d_L = d` for `layers` layers with
    /// uniform hidden width.
    pub fn dims_for(c: usize, d: usize, layers: usize, hidden: usize) -> Vec<usize> {
        let mut dims = vec![c];
        for _ in 1..layers {
            dims.push(hidden);
        }
        dims.push(d);
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |m| m.cols())
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        let mut prev = input_dim;
        for theta in &self.layers {
            if theta.rows() != prev {
                return Err(Error::shape("gcn layer chain", (prev, prev), theta.shape()));
            }
            prev = theta.cols();
        }
        if self.layers.is_empty() {
            return Err(Error::Contract("GCN has no layers".into()));
        }
        Ok(())
    }
}

/// Records the propagation on `tape` and returns the final `H⁽ᴸ⁾`.
pub fn gcn_forward_tape(tape: &mut Tape, p_norm: Var, layers: &[Var], h0: Var) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::Contract("GCN has no layers".into()));
    }
    let mut h = h0;
    for (l, &theta) in layers.iter().enumerate() {
        let ph = tape.matmul(p_norm, h)?;
        let z = tape.matmul(ph, theta)?;
        h = if l + 1 < layers.len() { tape.relu(z) } else { z };
    }
    Ok(h)
}

/// `c×d` matrix whose row `i` is the classifier of attribute `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierBank(pub Matrix);

impl ClassifierBank {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn num_attributes(&self) -> usize {
        self.0.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.0.cols()
    }
}

/// Runs the GCN stack. `h0` defaults to the `c×c` identity when `None`.
pub fn gcn_forward(p_norm: &Matrix, params: &GcnParams, h0: Option<&Matrix>) -> Result<ClassifierBank> {
    let c = p_norm.rows();
    if p_norm.cols() != c {
        return Err(Error::shape("gcn_forward", p_norm.shape(), p_norm.shape()));
    }
    let h0 = h0.cloned().unwrap_or_else(|| Matrix::identity(c));
    if h0.rows() != c {
        return Err(Error::shape("gcn_forward h0", p_norm.shape(), h0.shape()));
    }
    params.validate(h0.cols())?;
    let mut tape = Tape::new();
    let p = tape.leaf(p_norm.clone());
    let h = tape.leaf(h0);
    let layers: Vec<Var> = params.layers.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = gcn_forward_tape(&mut tape, p, &layers, h)?;
    Ok(ClassifierBank(tape.value(out).clone()))
}

/// Linear map `d → 1` applied to each row of a classifier bank.
#[derive(Debug, Clone, PartialEq)]
pub struct ReweightHead {
    /// `d×1`
    pub weight: Matrix,
    /// `1×1`
    pub bias: Matrix,
}

impl ReweightHead {
    pub fn zeros(d: usize) -> Self {
        Self {
            weight: Matrix::zeros(d, 1),
            bias: Matrix::zeros(1, 1),
        }
    }

    pub fn init(d: usize, rng: &mut SeededRng) -> Self {
        Self {
            weight: uniform_matrix(rng, d, 1, 1.0 / (d as f64).sqrt()),
            bias: Matrix::zeros(1, 1),
        }
    }

    /// `w_i = sigmoid(U_i · θ + b)`.
    pub fn gates(&self, bank: &ClassifierBank) -> Result<Vec<f64>> {
        let logits = bank.matrix().matmul(&self.weight)?;
        let bias = self.bias.get(0, 0);
        Ok(logits
            .as_slice()
            .iter()
            .map(|&v| sigmoid_scalar(v + bias))
            .collect())
    }
}

/// `softmax(U z)`.
pub fn predict_attribute_scores(bank: &ClassifierBank, z: &[f64]) -> Result<Vec<f64>> {
    let logits = attribute_logits(bank, z)?;
    Ok(softmax_slice(&logits))
}

/// Attribute scores under the chosen head.
pub fn attribute_scores(bank: &ClassifierBank, z: &[f64], head: AttributeHead) -> Result<Vec<f64>> {
    let logits = attribute_logits(bank, z)?;
    Ok(match head {
        AttributeHead::Softmax => softmax_slice(&logits),
        AttributeHead::Sigmoid => logits.into_iter().map(sigmoid_scalar).collect(),
    })
}

fn attribute_logits(bank: &ClassifierBank, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != bank.feature_dim() {
        return Err(Error::shape(
            "attribute scores",
            bank.matrix().shape(),
            (z.len(), 1),
        ));
    }
    Ok(bank.matrix().matmul(&Matrix::column(z))?.into_vec())
}

/// `-Σ y_gt_i log y_i` with the log clamped at [`LOG_EPS`](crate::numerics::LOG_EPS).
pub fn attribute_loss(y: &[f64], y_gt: &[u8]) -> Result<f64> {
    if y.len() != y_gt.len() {
        return Err(Error::shape("attribute_loss", (y.len(), 1), (y_gt.len(), 1)));
    }
    Ok(y
        .iter()
        .zip(y_gt)
        .filter(|(_, &t)| t != 0)
        .map(|(&p, &t)| -(t as f64) * clamped_ln(p))
        .sum())
}

/// Gates from the (shared or separate) GCN stack followed by the head.
pub fn compute_reweights(p_norm: &Matrix, params: &GcnParams, head: &ReweightHead) -> Result<Vec<f64>> {
    let bank = gcn_forward(p_norm, params, None)?;
    head.gates(&bank)
}

/// `ŷ = w ⊙ y`.
pub fn reweight(w: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if w.len() != y.len() {
        return Err(Error::shape("reweight", (w.len(), 1), (y.len(), 1)));
    }
    Ok(w.iter().zip(y).map(|(a, b)| a * b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn identity_propagation() {
        let params = GcnParams {
            layers: vec![Matrix::identity(3)],
        };
        let u = gcn_forward(&Matrix::identity(3), &params, None).unwrap();
        assert_eq!(u.matrix(), &Matrix::identity(3));
    }

    #[test]
    fn shape_chain_errors() {
        let params = GcnParams {
            layers: vec![Matrix::zeros(3, 4), Matrix::zeros(5, 2)],
        };
        assert!(matches!(
            gcn_forward(&Matrix::identity(3), &params, None),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn init_bounds() {
        let mut rng = seeded(3);
        let dims = GcnParams::dims_for(12, 32, 2, default_hidden_width(12, 32));
        assert_eq!(dims, vec![12, 16, 32]);
        let p = GcnParams::init(&dims, &mut rng).unwrap();
        assert_eq!(p.layers[0].shape(), (12, 16));
        assert!(p.layers[0].max_abs() <= 1.0 / 12f64.sqrt());
        assert!(p.layers[1].max_abs() <= 1.0 / 16f64.sqrt());
    }

    #[test]
    fn zero_bank_scores_uniform() {
        let bank = ClassifierBank(Matrix::zeros(4, 3));
        let y = predict_attribute_scores(&bank, &[0.3, -1.0, 2.0]).unwrap();
        for v in y {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn large_first_row_concentrates() {
        let mut m = Matrix::zeros(3, 3);
        m.set(0, 0, 200.0);
        let y = predict_attribute_scores(&ClassifierBank(m), &[1.0, 0.0, 0.0]).unwrap();
        assert!(y[0] > 1.0 - 1e-12);
    }

    #[test]
    fn score_length_mismatch() {
        let bank = ClassifierBank(Matrix::zeros(4, 3));
        assert!(predict_attribute_scores(&bank, &[1.0]).is_err());
    }

    #[test]
    fn attribute_loss_cases() {
        assert_eq!(attribute_loss(&[0.2, 0.3, 0.5], &[0, 0, 0]).unwrap(), 0.0);
        let y = vec![1.0 / 6.0; 6];
        let l = attribute_loss(&y, &[1, 0, 1, 1, 0, 0]).unwrap();
        assert!((l - 3.0 * 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gates() {
        let bank = ClassifierBank(Matrix::from_fn(4, 3, |i, j| i as f64 - j as f64));
        let w = ReweightHead::zeros(3).gates(&bank).unwrap();
        assert_eq!(w, vec![0.5; 4]);
        let mut head = ReweightHead::zeros(3);
        head.bias = Matrix::filled(1, 1, 60.0);
        for g in head.gates(&bank).unwrap() {
            assert!(g > 1.0 - 1e-12 && g <= 1.0);
        }
    }

    #[test]
    fn reweight_cases() {
        assert_eq!(reweight(&[0.5, 1.0], &[0.4, 0.6]).unwrap(), vec![0.2, 0.6]);
        assert_eq!(reweight(&[1.0, 1.0], &[0.4, 0.6]).unwrap(), vec![0.4, 0.6]);
        assert_eq!(reweight(&[0.0, 0.0], &[0.4, 0.6]).unwrap(), vec![0.0, 0.0]);
        assert!(reweight(&[1.0], &[0.4, 0.6]).is_err());
    }

    #[test]
    fn head_parse() {
        assert_eq!("sigmoid".parse::<AttributeHead>().unwrap(), AttributeHead::Sigmoid);
        assert!("tanh".parse::<AttributeHead>().is_err());
    }
}
