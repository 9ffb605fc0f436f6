//! Adam with standard bias correction. Moment buffers live in the
//! network's float width; the per-element update is computed in f64 and
//! cast back, which keeps updates deterministic and checkpoint-exact.

use super::{Gradients, LayerGrad, Network, Scalar};
use crate::{Error, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// First and second moment accumulators plus the step counter. The
/// learning rate is passed per step (schedules change it mid-run).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<LayerGrad<T>>,
    pub v: Vec<LayerGrad<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &Network<T>) -> Self {
        let zeros = || Gradients::zeros_like(net).layers;
        AdamState {
            t: 0,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update: m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
    /// theta <- theta - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
    /// Non-finite gradients or parameters abort with diagnostics.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        if grads.layers.len() != net.layers.len() {
            return Err(Error::shape("gradient block count mismatch"));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (li, layer) in net.layers.iter_mut().enumerate() {
            let g = &grads.layers[li];
            if g.d_weights.len() != layer.weights.len() || g.d_bias.len() != layer.bias.len() {
                return Err(Error::shape(format!("gradient shape mismatch at conv {li}")));
            }
            update_block(
                &mut layer.weights,
                &g.d_weights,
                &mut self.m[li].d_weights,
                &mut self.v[li].d_weights,
                self.beta1,
                self.beta2,
                self.eps,
                lr,
                bc1,
                bc2,
            )
            .map_err(|e| annotate(e, li, "weights"))?;
            update_block(
                &mut layer.bias,
                &g.d_bias,
                &mut self.m[li].d_bias,
                &mut self.v[li].d_bias,
                self.beta1,
                self.beta2,
                self.eps,
                lr,
                bc1,
                bc2,
            )
            .map_err(|e| annotate(e, li, "bias"))?;
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn update_block<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    bc1: f64,
    bc2: f64,
) -> Result<()> {
    for i in 0..params.len() {
        let g = grads[i].to_f64();
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient element {i} is {g}")));
        }
        let mi = beta1 * m[i].to_f64() + (1.0 - beta1) * g;
        let vi = beta2 * v[i].to_f64() + (1.0 - beta2) * g * g;
        m[i] = T::from_f64(mi);
        v[i] = T::from_f64(vi);
        let theta = params[i].to_f64() - lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
        if !theta.is_finite() {
            return Err(Error::NonFinite(format!("parameter element {i} became {theta}")));
        }
        params[i] = T::from_f64(theta);
    }
    Ok(())
}

fn annotate(err: crate::Error, layer: usize, block: &str) -> crate::Error {
    match err {
        Error::NonFinite(msg) => Error::NonFinite(format!("conv {layer} {block}: {msg}")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;
    use crate::rng::{StreamKind, StreamRng};

    fn small_net() -> Network<f64> {
        let mut rng = StreamRng::substream(31, StreamKind::Init, 0);
        Network::init(
            Architecture {
                in_channels: 1,
                hidden_channels: 2,
                hidden_layers: 0,
                kernel_size: 3,
                leaky_slope: 0.1,
            },
            &mut rng,
        )
        .unwrap()
    }

    fn ones_grads(net: &Network<f64>) -> Gradients<f64> {
        let mut g = Gradients::zeros_like(net);
        for layer in &mut g.layers {
            layer.d_weights.iter_mut().for_each(|v| *v = 1.0);
            layer.d_bias.iter_mut().for_each(|v| *v = 1.0);
        }
        g
    }

    #[test]
    fn first_step_moves_by_lr_over_one_plus_eps() {
        // At t=1 with g=1: m-hat = 1, v-hat = 1, so the update is
        // -lr / (1 + eps) for every element.
        let mut net = small_net();
        let before = net.layers[0].weights.clone();
        let grads = ones_grads(&net);
        let mut adam = AdamState::new(&net);
        adam.step(&mut net, &grads, 1e-3).unwrap();
        let expect = 1e-3 / (1.0 + DEFAULT_EPS);
        for (after, b) in net.layers[0].weights.iter().zip(&before) {
            assert!(((b - after) - expect).abs() < 1e-12);
        }
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_gradient_from_fresh_state_changes_nothing() {
        let mut net = small_net();
        let before = net.clone();
        let grads = Gradients::zeros_like(&net);
        let mut adam = AdamState::new(&net);
        adam.step(&mut net, &grads, 1e-3).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn hundred_steps_are_bit_identical_across_runs() {
        let run = || {
            let mut net = small_net();
            let mut adam = AdamState::new(&net);
            let mut rng = StreamRng::substream(37, StreamKind::Init, 5);
            for _ in 0..100 {
                let mut grads = Gradients::zeros_like(&net);
                for layer in &mut grads.layers {
                    for v in &mut layer.d_weights {
                        *v = rng.uniform(-1.0, 1.0);
                    }
                    for v in &mut layer.d_bias {
                        *v = rng.uniform(-1.0, 1.0);
                    }
                }
                adam.step(&mut net, &grads, 1e-3).unwrap();
            }
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradients_abort() {
        let mut net = small_net();
        let mut grads = ones_grads(&net);
        grads.layers[1].d_weights[3] = f64::NAN;
        let mut adam = AdamState::new(&net);
        let err = adam.step(&mut net, &grads, 1e-3).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
        assert!(err.to_string().contains("conv 1"));
    }
}
