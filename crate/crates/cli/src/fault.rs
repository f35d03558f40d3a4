use coherence_core::tensor::{CustomOp, Tensor};
use coherence_core::Result;

/// `x -> x^2` whose backward pass forgets the factor 2. Used to show that
/// the gradient check catches a broken rule.
pub struct BrokenSquare;

impl CustomOp for BrokenSquare {
    fn name(&self) -> &str {
        "broken_square"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * v).collect())
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>> {
        vec![inputs[0]
            .data()
            .iter()
            .zip(grad_out)
            .map(|(x, g)| x * g)
            .collect()]
    }
}
