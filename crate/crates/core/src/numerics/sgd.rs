use super::matrix::Matrix;
use crate::error::{Error, Result};

/// `param ← param − lr·grad` for each pair.
pub fn sgd_step(params: &mut [Matrix], grads: &[Matrix], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Contract(format!(
            "sgd_step: {} params but {} grads",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        p.axpy(-lr, g)?;
    }
    Ok(())
}

/// Momentum and weight decay; both off by default, which reduces to
/// [`sgd_step`] exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SgdOptions {
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Stateful SGD over a fixed list of parameter slots.
#[derive(Debug, Clone)]
pub struct Sgd {
    options: SgdOptions,
    velocity: Vec<Option<Matrix>>,
}

impl Sgd {
    pub fn new(options: SgdOptions, slots: usize) -> Self {
        Self {
            options,
            velocity: vec![None; slots],
        }
    }

    /// Updates the parameter in `slot` with learning rate `lr`.
    pub fn step(&mut self, slot: usize, param: &mut Matrix, grad: &Matrix, lr: f64) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::shape("sgd", param.shape(), grad.shape()));
        }
        let SgdOptions {
            momentum,
            weight_decay,
        } = self.options;
        if momentum == 0.0 && weight_decay == 0.0 {
            return param.axpy(-lr, grad);
        }
        let mut update = grad.clone();
        if weight_decay != 0.0 {
            update.axpy(weight_decay, param)?;
        }
        if momentum != 0.0 {
            let v = self.velocity[slot].get_or_insert_with(|| Matrix::zeros(grad.rows(), grad.cols()));
            let mut next = v.scale(momentum);
            next.axpy(1.0, &update)?;
            *v = next.clone();
            update = next;
        }
        param.axpy(-lr, &update)
    }
}
