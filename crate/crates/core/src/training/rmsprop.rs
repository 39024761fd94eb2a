use crate::network::{Layers, ModelParameters};
use crate::tensor::{Matrix, Real};
use crate::training::backward::Gradients;

/// Running averages of squared gradients, one per parameter element.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsPropState<T> {
    pub embedding_acc: Matrix<T>,
    pub layers_acc: Layers<T>,
    pub rho: T,
    pub epsilon: T,
    pub learning_rate: T,
}

impl<T: Real> RmsPropState<T> {
    pub fn new(params: &ModelParameters<T>, learning_rate: f64, rho: f64, epsilon: f64) -> Self {
        Self {
            embedding_acc: Matrix::zeros(params.embedding.vocab_size(), params.embedding.dim()),
            layers_acc: Layers::zeros(&params.arch),
            rho: T::from_f64_lossy(rho),
            epsilon: T::from_f64_lossy(epsilon),
            learning_rate: T::from_f64_lossy(learning_rate),
        }
    }
}

#[inline]
fn update<T: Real>(theta: &mut [T], acc: &mut [T], grad: &[T], rho: T, eps: T, lr: T) {
    let keep = T::one() - rho;
    for ((t, a), &g) in theta.iter_mut().zip(acc.iter_mut()).zip(grad) {
        *a = rho * *a + keep * g * g;
        *t -= lr * g / (a.sqrt() + eps);
    }
}

/// `acc ← ρ·acc + (1−ρ)·g²; θ ← θ − lr·g/(√acc + ε)` for every element.
/// Embedding rows without a gradient see `g = 0`: their accumulators decay
/// and their weights stay put.
pub fn rmsprop_step<T: Real>(params: &mut ModelParameters<T>, grads: &Gradients<T>, state: &mut RmsPropState<T>) {
    let (rho, eps, lr) = (state.rho, state.epsilon, state.learning_rate);
    for (((_, theta), (_, acc)), (_, g)) in params
        .layers
        .tensors_mut()
        .into_iter()
        .zip(state.layers_acc.tensors_mut())
        .zip(grads.layers.tensors())
    {
        update(theta.as_mut_slice(), acc.as_mut_slice(), g.as_slice(), rho, eps, lr);
    }

    if params.embedding.trainable {
        let d = params.embedding.dim();
        let zeros = vec![T::zero(); d];
        for row in 0..params.embedding.vocab_size() {
            let g = grads.embedding.get(&row).map_or(zeros.as_slice(), Vec::as_slice);
            update(
                params.embedding.weights.row_mut(row),
                state.embedding_acc.row_mut(row),
                g,
                rho,
                eps,
                lr,
            );
        }
    }
}
