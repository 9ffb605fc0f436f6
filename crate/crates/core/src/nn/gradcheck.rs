//! Finite-difference reference for the hand-written gradients.
//!
//! The check never touches `backward` when producing its reference: it
//! re-evaluates the loss through `forward` at perturbed parameters, so an
//! error in the analytic path cannot hide itself. Run it in f64, where
//! central differences at h = 1e-4 resolve gradients to ~1e-8.

use super::{l2_loss, Feature, Network};
use crate::Result;

/// Worst relative disagreement and where it happened.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: String,
}

/// Treat tiny gradients as matched when their absolute difference is also
/// tiny; relative error on values near zero is meaningless.
const ABS_FLOOR: f64 = 1e-8;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < ABS_FLOOR {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn loss_of(net: &Network<f64>, input: &Feature<f64>, target: &Feature<f64>) -> Result<f64> {
    let out = net.forward(input)?;
    Ok(l2_loss(&out, target)?.0)
}

/// Compares analytic parameter gradients against central differences over
/// every weight and bias.
pub fn check_parameter_gradients(
    net: &Network<f64>,
    input: &Feature<f64>,
    target: &Feature<f64>,
    h: f64,
) -> Result<GradCheckReport> {
    let (out, cache) = net.forward_cached(input)?;
    let (_, d_out) = l2_loss(&out, target)?;
    let (grads, _) = net.backward(&cache, &d_out)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: String::new(),
    };
    let mut probe = net.clone();
    for li in 0..net.layers.len() {
        for (block_name, len) in [("weights", net.layers[li].weights.len()), ("bias", net.layers[li].bias.len())] {
            for i in 0..len {
                let read = |n: &Network<f64>| {
                    if block_name == "weights" {
                        n.layers[li].weights[i]
                    } else {
                        n.layers[li].bias[i]
                    }
                };
                let write = |n: &mut Network<f64>, v: f64| {
                    if block_name == "weights" {
                        n.layers[li].weights[i] = v;
                    } else {
                        n.layers[li].bias[i] = v;
                    }
                };
                let original = read(&probe);
                write(&mut probe, original + h);
                let plus = loss_of(&probe, input, target)?;
                write(&mut probe, original - h);
                let minus = loss_of(&probe, input, target)?;
                write(&mut probe, original);

                let numeric = (plus - minus) / (2.0 * h);
                let analytic = if block_name == "weights" {
                    grads.layers[li].d_weights[i]
                } else {
                    grads.layers[li].d_bias[i]
                };
                let err = rel_err(analytic, numeric);
                report.checked += 1;
                if err > report.max_rel_err {
                    report.max_rel_err = err;
                    report.worst = format!(
                        "conv {li} {block_name}[{i}]: analytic {analytic:.6e}, numeric {numeric:.6e}"
                    );
                }
            }
        }
    }
    Ok(report)
}

/// Same comparison for the gradient with respect to the input tensor.
pub fn check_input_gradients(
    net: &Network<f64>,
    input: &Feature<f64>,
    target: &Feature<f64>,
    h: f64,
) -> Result<GradCheckReport> {
    let (out, cache) = net.forward_cached(input)?;
    let (_, d_out) = l2_loss(&out, target)?;
    let (_, d_input) = net.backward(&cache, &d_out)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: String::new(),
    };
    let mut probe = input.clone();
    for i in 0..input.data.len() {
        let original = probe.data[i];
        probe.data[i] = original + h;
        let plus = loss_of(net, &probe, target)?;
        probe.data[i] = original - h;
        let minus = loss_of(net, &probe, target)?;
        probe.data[i] = original;

        let numeric = (plus - minus) / (2.0 * h);
        let err = rel_err(d_input.data[i], numeric);
        report.checked += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = format!(
                "input[{i}]: analytic {:.6e}, numeric {numeric:.6e}",
                d_input.data[i]
            );
        }
    }
    Ok(report)
}
