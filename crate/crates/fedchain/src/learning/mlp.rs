//! Forward pass, softmax cross-entropy, and exact backprop gradients.
//!
//! Everything operates on the flat parameter layout defined by
//! [`Architecture::layer_dims`]: for each layer, `fan_out * fan_in` row-major
//! weights followed by `fan_out` biases.

use super::{Activation, Architecture, LearningError, ParamVector, Sample};

struct Layer<'a> {
    weights: &'a [f64], // fan_out x fan_in, row-major
    biases: &'a [f64],
    fan_in: usize,
    fan_out: usize,
}

fn layers<'a>(
    params: &'a ParamVector,
    arch: &Architecture,
) -> Result<Vec<Layer<'a>>, LearningError> {
    let d = arch.param_count();
    if params.len() != d {
        return Err(LearningError::ParamLengthMismatch {
            expected: d,
            got: params.len(),
        });
    }
    let mut out = Vec::new();
    let mut off = 0;
    let flat = params.as_slice();
    for (fan_in, fan_out) in arch.layer_dims() {
        let w_len = fan_in * fan_out;
        out.push(Layer {
            weights: &flat[off..off + w_len],
            biases: &flat[off + w_len..off + w_len + fan_out],
            fan_in,
            fan_out,
        });
        off += w_len + fan_out;
    }
    Ok(out)
}

fn activate(act: Activation, z: f64) -> f64 {
    match act {
        Activation::Relu => {
            if z > 0.0 {
                z
            } else {
                0.0
            }
        }
        Activation::Tanh => z.tanh(),
    }
}

/// Derivative of the activation expressed through its output `a`.
fn activate_grad(act: Activation, a: f64) -> f64 {
    match act {
        Activation::Relu => {
            if a > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - a * a,
    }
}

/// Numerically stable `log(sum_j exp(z_j))` and the softmax probabilities.
fn softmax_into(logits: &[f64], probs: &mut [f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &z) in probs.iter_mut().zip(logits) {
        let e = (z - max).exp();
        *p = e;
        sum += e;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    max + sum.ln()
}

struct Pass {
    loss_sum: f64,
    count: usize,
    grad: Option<Vec<f64>>,
}

fn run_pass<'a, I>(
    params: &ParamVector,
    arch: &Architecture,
    samples: I,
    want_grad: bool,
) -> Result<Pass, LearningError>
where
    I: IntoIterator<Item = &'a Sample>,
{
    let layers = layers(params, arch)?;
    let n_layers = layers.len();
    let mut grad = if want_grad {
        Some(vec![0.0; params.len()])
    } else {
        None
    };
    // activations[0] is the input, activations[l+1] the output of layer l
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
    activations.push(vec![0.0; arch.input_dim]);
    for layer in &layers {
        activations.push(vec![0.0; layer.fan_out]);
    }
    let mut probs = vec![0.0; arch.num_classes];

    let mut loss_sum = 0.0;
    let mut count = 0usize;
    for sample in samples {
        if sample.features.len() != arch.input_dim {
            return Err(LearningError::FeatureDimMismatch {
                expected: arch.input_dim,
                got: sample.features.len(),
            });
        }
        if sample.label >= arch.num_classes {
            return Err(LearningError::LabelOutOfRange {
                label: sample.label,
                label_count: arch.num_classes,
            });
        }
        activations[0].copy_from_slice(&sample.features);
        for (l, layer) in layers.iter().enumerate() {
            let (input_slot, output_slot) = activations.split_at_mut(l + 1);
            let input = &input_slot[l];
            let output = &mut output_slot[0];
            let last = l == n_layers - 1;
            for o in 0..layer.fan_out {
                let row = &layer.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                let mut z = layer.biases[o];
                for (w, x) in row.iter().zip(input.iter()) {
                    z += w * x;
                }
                output[o] = if last { z } else { activate(arch.activation, z) };
            }
        }
        let logits = activations.last().unwrap();
        let logsumexp = softmax_into(logits, &mut probs);
        loss_sum += logsumexp - logits[sample.label];
        count += 1;

        if let Some(grad) = grad.as_mut() {
            // dL/dz at the output layer: softmax - onehot
            let mut delta = probs.clone();
            delta[sample.label] -= 1.0;
            let mut layer_off_end = params.len();
            for l in (0..n_layers).rev() {
                let layer = &layers[l];
                let w_len = layer.fan_in * layer.fan_out;
                let off = layer_off_end - w_len - layer.fan_out;
                let input = &activations[l];
                let (gw, gb) = grad[off..layer_off_end].split_at_mut(w_len);
                let mut next_delta = if l > 0 {
                    vec![0.0; layer.fan_in]
                } else {
                    Vec::new()
                };
                for o in 0..layer.fan_out {
                    let dz = delta[o];
                    gb[o] += dz;
                    let grow = &mut gw[o * layer.fan_in..(o + 1) * layer.fan_in];
                    let wrow = &layer.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                    for i in 0..layer.fan_in {
                        grow[i] += dz * input[i];
                    }
                    if l > 0 {
                        for i in 0..layer.fan_in {
                            next_delta[i] += dz * wrow[i];
                        }
                    }
                }
                if l > 0 {
                    // pull back through the previous layer's activation
                    for (nd, &a) in next_delta.iter_mut().zip(input.iter()) {
                        *nd *= activate_grad(arch.activation, a);
                    }
                    delta = next_delta;
                }
                layer_off_end = off;
            }
        }
    }
    if count == 0 {
        return Err(LearningError::EmptySampleSet);
    }
    Ok(Pass {
        loss_sum,
        count,
        grad,
    })
}

/// Mean softmax cross-entropy of `params` over `samples`.
pub fn loss<'a, I>(params: &ParamVector, arch: &Architecture, samples: I) -> Result<f64, LearningError>
where
    I: IntoIterator<Item = &'a Sample>,
{
    let pass = run_pass(params, arch, samples, false)?;
    Ok(pass.loss_sum / pass.count as f64)
}

/// Exact backprop gradient of [`loss`]; same length as `params`.
pub fn gradient<'a, I>(
    params: &ParamVector,
    arch: &Architecture,
    samples: I,
) -> Result<ParamVector, LearningError>
where
    I: IntoIterator<Item = &'a Sample>,
{
    Ok(loss_and_gradient(params, arch, samples)?.1)
}

/// Loss and gradient in one pass.
pub fn loss_and_gradient<'a, I>(
    params: &ParamVector,
    arch: &Architecture,
    samples: I,
) -> Result<(f64, ParamVector), LearningError>
where
    I: IntoIterator<Item = &'a Sample>,
{
    let pass = run_pass(params, arch, samples, true)?;
    let n = pass.count as f64;
    let mut grad = pass.grad.unwrap();
    for g in grad.iter_mut() {
        *g /= n;
    }
    Ok((pass.loss_sum / n, ParamVector::from_vec(grad)))
}

/// Fraction of `samples` whose argmax logit matches the label.
pub fn accuracy<'a, I>(
    params: &ParamVector,
    arch: &Architecture,
    samples: I,
) -> Result<f64, LearningError>
where
    I: IntoIterator<Item = &'a Sample>,
{
    let layers = layers(params, arch)?;
    let n_layers = layers.len();
    let mut input = vec![0.0; arch.input_dim];
    let mut hit = 0usize;
    let mut count = 0usize;
    for sample in samples {
        if sample.features.len() != arch.input_dim {
            return Err(LearningError::FeatureDimMismatch {
                expected: arch.input_dim,
                got: sample.features.len(),
            });
        }
        if sample.label >= arch.num_classes {
            return Err(LearningError::LabelOutOfRange {
                label: sample.label,
                label_count: arch.num_classes,
            });
        }
        input.clear();
        input.extend_from_slice(&sample.features);
        for (l, layer) in layers.iter().enumerate() {
            let last = l == n_layers - 1;
            let mut out = vec![0.0; layer.fan_out];
            for o in 0..layer.fan_out {
                let row = &layer.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                let mut z = layer.biases[o];
                for (w, x) in row.iter().zip(input.iter()) {
                    z += w * x;
                }
                out[o] = if last { z } else { activate(arch.activation, z) };
            }
            input = out;
        }
        let best = input
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if best == sample.label {
            hit += 1;
        }
        count += 1;
    }
    if count == 0 {
        return Err(LearningError::EmptySampleSet);
    }
    Ok(hit as f64 / count as f64)
}
