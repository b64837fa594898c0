//! Layered network engine shared by LR, MLP and MLP-2.
//!
//! Parameter layout, layer by layer: weight matrix (out x in, row-major)
//! followed by the bias vector (out).

use super::Architecture;
use crate::diffmath::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    pub fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }
}

pub(crate) fn layer_shapes(arch: &Architecture) -> Vec<LayerShape> {
    let dims = arch.layer_dims();
    let mut offset = 0;
    dims.windows(2)
        .map(|w| {
            let shape = LayerShape {
                inputs: w[0],
                outputs: w[1],
                weight_offset: offset,
                bias_offset: offset + w[0] * w[1],
            };
            offset += w[0] * w[1] + w[1];
            shape
        })
        .collect()
}

/// Activations recorded during the forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Trace<S> {
    /// Input to each layer (`inputs[0]` is x).
    pub inputs: Vec<Vec<S>>,
    /// Pre-activation output of each layer; the last entry is the logits.
    pub pre: Vec<Vec<S>>,
}

impl<S> Trace<S> {
    pub fn logits(&self) -> &[S] {
        self.pre.last().expect("network has at least one layer")
    }
}

pub(crate) fn forward<S: Scalar>(layers: &[LayerShape], theta: &[S], x: &[S]) -> Trace<S> {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut a: Vec<S> = x.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        let w = &theta[layer.weight_offset..layer.bias_offset];
        let b = &theta[layer.bias_offset..layer.bias_offset + layer.outputs];
        let z: Vec<S> = (0..layer.outputs)
            .map(|o| {
                let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                let mut acc = b[o];
                for (wi, ai) in row.iter().zip(&a) {
                    acc += *wi * *ai;
                }
                acc
            })
            .collect();
        let next = if l + 1 < layers.len() {
            z.iter().map(|&v| relu(v)).collect()
        } else {
            Vec::new()
        };
        inputs.push(std::mem::replace(&mut a, next));
        pre.push(z);
    }
    Trace { inputs, pre }
}

#[inline]
pub(crate) fn relu<S: Scalar>(v: S) -> S {
    if v.re() > 0.0 {
        v
    } else {
        S::zero()
    }
}

#[inline]
pub(crate) fn relu_active(v: f64) -> bool {
    v > 0.0
}

/// Softmax probabilities and cross-entropy in log-sum-exp form.
pub(crate) fn softmax_xent<S: Scalar>(logits: &[S], label: usize) -> (S, Vec<S>) {
    let shift = logits.iter().map(|v| v.re()).fold(f64::NEG_INFINITY, f64::max);
    let shift_s = S::from_f64(shift);
    let exps: Vec<S> = logits.iter().map(|&z| (z - shift_s).exp()).collect();
    let mut total = S::zero();
    for &e in &exps {
        total += e;
    }
    let probs: Vec<S> = exps.iter().map(|&e| e / total).collect();
    let loss = total.ln() + shift_s - logits[label];
    (loss, probs)
}

/// Back-propagates `out_grad` (d/d logits) through the network, adding
/// `scale * d/d theta` into `grad` when given. Returns d/dx.
pub(crate) fn backward<S: Scalar>(
    layers: &[LayerShape],
    theta: &[S],
    trace: &Trace<S>,
    out_grad: Vec<S>,
    mut grad: Option<&mut [S]>,
    scale: S,
) -> Vec<S> {
    let mut g = out_grad;
    for (l, layer) in layers.iter().enumerate().rev() {
        let a = &trace.inputs[l];
        if let Some(grad) = grad.as_deref_mut() {
            for o in 0..layer.outputs {
                let go = scale * g[o];
                let row = &mut grad[layer.weight_offset + o * layer.inputs..layer.weight_offset + (o + 1) * layer.inputs];
                for (gw, &ai) in row.iter_mut().zip(a) {
                    *gw += go * ai;
                }
                grad[layer.bias_offset + o] += go;
            }
        }
        let w = &theta[layer.weight_offset..layer.bias_offset];
        let mut below = vec![S::zero(); layer.inputs];
        for o in 0..layer.outputs {
            let go = g[o];
            let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
            for (bi, &wi) in below.iter_mut().zip(row) {
                *bi += wi * go;
            }
        }
        if l > 0 {
            let z_prev = &trace.pre[l - 1];
            for (bi, zi) in below.iter_mut().zip(z_prev) {
                if !relu_active(zi.re()) {
                    *bi = S::zero();
                }
            }
        }
        g = below;
    }
    g
}
