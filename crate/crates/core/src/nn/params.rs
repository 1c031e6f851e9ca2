use crate::tensor::Tensor;

/// Trainable parameters of one layer plus their gradient buffers.
///
/// `aux` holds non-trainable statistics (batch-norm running mean and
/// variance). Gradients always have the same shape as their parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub biases: Tensor,
    pub aux: Vec<Tensor>,
    pub weight_grad: Tensor,
    pub bias_grad: Tensor,
}

impl LayerParams {
    pub fn new(weights: Tensor, biases: Tensor) -> Self {
        let weight_grad = Tensor::zeros(weights.shape());
        let bias_grad = Tensor::zeros(biases.shape());
        LayerParams {
            weights,
            biases,
            aux: Vec::new(),
            weight_grad,
            bias_grad,
        }
    }

    pub fn with_aux(mut self, aux: Vec<Tensor>) -> Self {
        self.aux = aux;
        self
    }

    pub fn zero_grad(&mut self) {
        self.weight_grad.fill(0.0);
        self.bias_grad.fill(0.0);
    }

    /// Number of trainable scalars (weights and biases, not `aux`).
    pub fn count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn grads_finite(&self) -> bool {
        self.weight_grad.all_finite() && self.bias_grad.all_finite()
    }
}
