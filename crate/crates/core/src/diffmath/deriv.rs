//! Exact first and second derivatives of the mean cross-entropy loss.
//!
//! Gradients come from the layered chain rule. Hessian-vector products and
//! mixed parameter/input derivatives come from the R-operator (directional
//! derivative of the backward pass), written out by hand. The explicit
//! Hessian takes a separate route: forward-mode dual numbers pushed through
//! the generic backward pass, one column at a time.

use rayon::prelude::*;

use super::cg::LinearOperator;
use super::scalar::{Dual, Scalar};
use super::vector::{DenseMatrix, ParamVector};
use crate::error::{Error, Result};
use crate::models::network::{self, relu_active, LayerShape};
use crate::models::{Batch, ModelParams};

/// Largest parameter count [`explicit_hessian`] will materialise.
pub const EXPLICIT_HESSIAN_LIMIT: usize = 5000;

const CHUNK: usize = 128;

/// Runs `f` over fixed-size chunks in parallel and sums the partial vectors
/// in chunk order, so the result does not depend on the thread count.
fn chunked_sum<F>(n: usize, dim: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(std::ops::Range<usize>, &mut [f64]) -> Result<()> + Sync,
{
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; dim];
            f(c * CHUNK..((c + 1) * CHUNK).min(n), &mut acc)?;
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; dim];
    for part in chunks {
        total.iter_mut().zip(part).for_each(|(t, p)| *t += p);
    }
    Ok(total)
}

/// Gradient of one sample's loss, added into `grad` with weight `scale`.
fn accumulate_sample_gradient(
    layers: &[LayerShape],
    theta: &[f64],
    x: &[f64],
    y: usize,
    scale: f64,
    grad: &mut [f64],
) -> bool {
    let trace = network::forward(layers, theta, x);
    if !trace.logits().iter().all(|v| v.is_finite()) {
        return false;
    }
    let (_, mut out) = network::softmax_xent(trace.logits(), y);
    out[y] -= 1.0;
    network::backward(layers, theta, &trace, out, Some(grad), scale);
    true
}

/// Gradient of the mean cross-entropy over `batch`.
pub fn loss_gradient(model: &ModelParams, batch: &Batch<'_>) -> Result<ParamVector> {
    model.check_batch(batch)?;
    let layers = model.arch.layers();
    let scale = 1.0 / batch.len() as f64;
    let grad = chunked_sum(batch.len(), model.theta.len(), |range, acc| {
        for i in range {
            let (x, y) = batch.get(i);
            if !accumulate_sample_gradient(&layers, &model.theta, x, y, scale, acc) {
                return Err(Error::Numeric {
                    context: "loss gradient",
                    index: Some(i),
                });
            }
        }
        Ok(())
    })?;
    ParamVector::from_vec(grad).check_finite("loss gradient")
}

/// `sum_i w_i grad loss_i` over `batch`.
pub fn weighted_gradient_sum(model: &ModelParams, batch: &Batch<'_>, weights: &[f64]) -> Result<ParamVector> {
    if weights.len() != batch.len() {
        return Err(Error::config(format!(
            "{} weights for a batch of {} samples",
            weights.len(),
            batch.len()
        )));
    }
    if batch.is_empty() {
        return Ok(ParamVector::zeros(model.theta.len()));
    }
    model.check_batch(batch)?;
    let layers = model.arch.layers();
    let grad = chunked_sum(batch.len(), model.theta.len(), |range, acc| {
        for i in range {
            if weights[i] == 0.0 {
                continue;
            }
            let (x, y) = batch.get(i);
            if !accumulate_sample_gradient(&layers, &model.theta, x, y, weights[i], acc) {
                return Err(Error::Numeric {
                    context: "weighted gradient",
                    index: Some(i),
                });
            }
        }
        Ok(())
    })?;
    ParamVector::from_vec(grad).check_finite("weighted gradient")
}

/// Gradient of a single sample's loss.
pub fn sample_gradient(model: &ModelParams, x: &[f64], y: usize) -> Result<ParamVector> {
    model.check_input(x)?;
    let mut grad = vec![0.0; model.theta.len()];
    if !accumulate_sample_gradient(&model.arch.layers(), &model.theta, x, y, 1.0, &mut grad) {
        return Err(Error::numeric("sample gradient"));
    }
    ParamVector::from_vec(grad).check_finite("sample gradient")
}

/// `sum_i J_i^T c_i` where `J_i` is the Jacobian of the logits at row i and
/// `c_i` the matching cotangent.
pub fn logits_vjp(model: &ModelParams, rows: &[&[f64]], cotangents: &[Vec<f64>]) -> Result<ParamVector> {
    assert_eq!(rows.len(), cotangents.len());
    let layers = model.arch.layers();
    let grad = chunked_sum(rows.len(), model.theta.len(), |range, acc| {
        for i in range {
            let trace = network::forward(&layers, &model.theta, rows[i]);
            network::backward(&layers, &model.theta, &trace, cotangents[i].clone(), Some(acc), 1.0);
        }
        Ok(())
    })?;
    ParamVector::from_vec(grad).check_finite("logit vector-Jacobian product")
}

/// R-operator pass for one sample along direction `v`.
///
/// Adds `scale * H_i v` into `hv` (if given) and returns
/// `d/dx [v . grad_theta loss(x, y)]`.
fn r_op(
    layers: &[LayerShape],
    theta: &[f64],
    v: &[f64],
    x: &[f64],
    y: usize,
    mut hv: Option<&mut [f64]>,
    scale: f64,
) -> Vec<f64> {
    let trace = network::forward(layers, theta, x);

    // Forward directional derivatives of each layer's input and output.
    let mut r_inputs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut r_pre: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut r_a = vec![0.0; x.len()];
    for (l, layer) in layers.iter().enumerate() {
        let a = &trace.inputs[l];
        let w = &theta[layer.weight_offset..layer.bias_offset];
        let vw = &v[layer.weight_offset..layer.bias_offset];
        let vb = &v[layer.bias_offset..layer.bias_offset + layer.outputs];
        let rz: Vec<f64> = (0..layer.outputs)
            .map(|o| {
                let span = o * layer.inputs..(o + 1) * layer.inputs;
                let mut acc = vb[o];
                for ((&vwi, &wi), (&ai, &rai)) in vw[span.clone()].iter().zip(&w[span]).zip(a.iter().zip(&r_a)) {
                    acc += vwi * ai + wi * rai;
                }
                acc
            })
            .collect();
        let next = if l + 1 < layers.len() {
            rz.iter()
                .zip(&trace.pre[l])
                .map(|(&r, &z)| if relu_active(z) { r } else { 0.0 })
                .collect()
        } else {
            Vec::new()
        };
        r_inputs.push(std::mem::replace(&mut r_a, next));
        r_pre.push(rz);
    }

    // Output layer: g = p - e_y, Rg = diag(p) Rz - p (p . Rz).
    let (_, probs) = network::softmax_xent(trace.logits(), y);
    let rz_out = r_pre.last().unwrap();
    let p_dot: f64 = probs.iter().zip(rz_out).map(|(p, r)| p * r).sum();
    let mut rg: Vec<f64> = probs.iter().zip(rz_out).map(|(p, r)| p * (r - p_dot)).collect();
    let mut g = probs;
    g[y] -= 1.0;

    for (l, layer) in layers.iter().enumerate().rev() {
        let a = &trace.inputs[l];
        let ra = &r_inputs[l];
        if let Some(hv) = hv.as_deref_mut() {
            for o in 0..layer.outputs {
                let (go, rgo) = (g[o], rg[o]);
                let row = &mut hv[layer.weight_offset + o * layer.inputs..layer.weight_offset + (o + 1) * layer.inputs];
                for ((h, &ai), &rai) in row.iter_mut().zip(a).zip(ra) {
                    *h += scale * (rgo * ai + go * rai);
                }
                hv[layer.bias_offset + o] += scale * rgo;
            }
        }
        let w = &theta[layer.weight_offset..layer.bias_offset];
        let vw = &v[layer.weight_offset..layer.bias_offset];
        let mut below = vec![0.0; layer.inputs];
        let mut r_below = vec![0.0; layer.inputs];
        for o in 0..layer.outputs {
            let span = o * layer.inputs..(o + 1) * layer.inputs;
            let (go, rgo) = (g[o], rg[o]);
            for (((b, rb), &wi), &vwi) in below.iter_mut().zip(r_below.iter_mut()).zip(&w[span.clone()]).zip(&vw[span]) {
                *b += wi * go;
                *rb += vwi * go + wi * rgo;
            }
        }
        if l > 0 {
            for ((b, rb), &z) in below.iter_mut().zip(r_below.iter_mut()).zip(&trace.pre[l - 1]) {
                if !relu_active(z) {
                    *b = 0.0;
                    *rb = 0.0;
                }
            }
        }
        g = below;
        rg = r_below;
    }
    rg
}

fn check_direction(model: &ModelParams, v: &[f64]) -> Result<()> {
    if v.len() != model.theta.len() {
        return Err(Error::config(format!(
            "direction has length {} but the model has {} parameters",
            v.len(),
            model.theta.len()
        )));
    }
    Ok(())
}

/// `H v` for the Hessian of `scale * sum_i loss_i` over `batch`.
pub fn scaled_hessian_vector_product(model: &ModelParams, batch: &Batch<'_>, v: &[f64], scale: f64) -> Result<ParamVector> {
    model.check_batch(batch)?;
    check_direction(model, v)?;
    let layers = model.arch.layers();
    let hv = chunked_sum(batch.len(), v.len(), |range, acc| {
        for i in range {
            let (x, y) = batch.get(i);
            r_op(&layers, &model.theta, v, x, y, Some(acc), scale);
        }
        Ok(())
    })?;
    ParamVector::from_vec(hv).check_finite("Hessian-vector product")
}

/// `H v` for the Hessian of the mean loss over `batch`.
pub fn hessian_vector_product(model: &ModelParams, batch: &Batch<'_>, v: &[f64]) -> Result<ParamVector> {
    let scale = 1.0 / batch.len().max(1) as f64;
    scaled_hessian_vector_product(model, batch, v, scale)
}

/// `d/dx [v . grad_theta loss((x, y); theta)]`, a vector in feature space.
pub fn mixed_second_derivative(model: &ModelParams, x: &[f64], y: usize, v: &[f64]) -> Result<Vec<f64>> {
    model.check_input(x)?;
    check_direction(model, v)?;
    let out = r_op(&model.arch.layers(), &model.theta, v, x, y, None, 1.0);
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::numeric("mixed second derivative"))
    }
}

/// Dense Hessian of the mean loss, assembled column by column with dual
/// numbers through the analytic gradient.
pub fn explicit_hessian(model: &ModelParams, batch: &Batch<'_>) -> Result<DenseMatrix> {
    model.check_batch(batch)?;
    let p = model.theta.len();
    if p > EXPLICIT_HESSIAN_LIMIT {
        return Err(Error::Capacity {
            what: "explicit Hessian parameter count",
            requested: p,
            limit: EXPLICIT_HESSIAN_LIMIT,
        });
    }
    let layers = model.arch.layers();
    let scale = Dual::from_f64(1.0 / batch.len() as f64);
    let columns: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|j| {
            let theta: Vec<Dual> = model
                .theta
                .iter()
                .enumerate()
                .map(|(i, &t)| Dual::new(t, if i == j { 1.0 } else { 0.0 }))
                .collect();
            let mut grad = vec![Dual::default(); p];
            for (x, y) in batch.iter() {
                let xd: Vec<Dual> = x.iter().map(|&v| Dual::from_f64(v)).collect();
                let trace = network::forward(&layers, &theta, &xd);
                let (_, mut out) = network::softmax_xent(trace.logits(), y);
                out[y] += Dual::from_f64(-1.0);
                network::backward(&layers, &theta, &trace, out, Some(&mut grad), scale);
            }
            grad.into_iter().map(|g| g.du).collect()
        })
        .collect();
    let mut h = DenseMatrix::zeros(p, p);
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::numeric("explicit Hessian"));
            }
            h[(i, j)] = v;
        }
    }
    Ok(h)
}

/// Hessian of `scale * sum_i loss_i` over a batch as a [`LinearOperator`].
pub struct HessianOperator<'m, 'b> {
    model: &'m ModelParams,
    batch: &'b Batch<'b>,
    scale: f64,
}

impl<'m, 'b> HessianOperator<'m, 'b> {
    pub fn mean(model: &'m ModelParams, batch: &'b Batch<'b>) -> Self {
        HessianOperator {
            model,
            batch,
            scale: 1.0 / batch.len().max(1) as f64,
        }
    }

    pub fn sum(model: &'m ModelParams, batch: &'b Batch<'b>) -> Self {
        HessianOperator { model, batch, scale: 1.0 }
    }
}

impl LinearOperator for HessianOperator<'_, '_> {
    fn dim(&self) -> usize {
        self.model.theta.len()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        // Inputs were validated when the batch was built; a NaN result
        // propagates into CG, which reports it as non-convergence.
        scaled_hessian_vector_product(self.model, self.batch, v, self.scale)
            .map(ParamVector::into_vec)
            .unwrap_or_else(|_| vec![f64::NAN; v.len()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Architecture, ArchKind};

    fn lr2(theta: Vec<f64>) -> ModelParams {
        ModelParams::new(Architecture::new(ArchKind::Lr, 2, 2).unwrap(), ParamVector::from_vec(theta)).unwrap()
    }

    #[test]
    fn zero_weight_lr_bias_gradient_is_p_minus_onehot() {
        let m = lr2(vec![0.0; 6]);
        let x = [0.3, 0.8];
        let batch: Batch = [(&x[..], 1)].into_iter().collect();
        let g = loss_gradient(&m, &batch).unwrap();
        // layout: W (2x2) then b (2)
        assert!((g[4] - 0.5).abs() < 1e-15);
        assert!((g[5] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn lr_gradient_matches_closed_form() {
        let theta = vec![0.4, -0.7, 0.2, 0.9, 0.1, -0.3];
        let m = lr2(theta.clone());
        let x = [0.6, 0.25];
        let y = 0;
        let z0 = 0.4 * 0.6 - 0.7 * 0.25 + 0.1;
        let z1 = 0.2 * 0.6 + 0.9 * 0.25 - 0.3;
        let p0 = 1.0 / (1.0 + (z1 - z0).exp());
        let p1 = 1.0 - p0;
        let r = [p0 - 1.0, p1];
        let expected = [r[0] * x[0], r[0] * x[1], r[1] * x[0], r[1] * x[1], r[0], r[1]];
        let batch: Batch = [(&x[..], y)].into_iter().collect();
        let g = loss_gradient(&m, &batch).unwrap();
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn duplicated_batch_gives_same_gradient() {
        let m = lr2(vec![0.4, -0.7, 0.2, 0.9, 0.1, -0.3]);
        let rows = [[0.1, 0.2], [0.9, 0.4], [0.5, 0.5]];
        let batch: Batch = rows.iter().map(|r| &r[..]).zip([0, 1, 1]).collect();
        let doubled: Batch = batch.iter().chain(batch.iter()).collect();
        let a = loss_gradient(&m, &batch).unwrap();
        let b = loss_gradient(&m, &doubled).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_inputs_name_the_sample() {
        let m = lr2(vec![0.0; 6]);
        let rows = [[0.1, 0.2], [f64::NAN, 0.4]];
        let batch: Batch = rows.iter().map(|r| &r[..]).zip([0, 1]).collect();
        match loss_gradient(&m, &batch) {
            Err(Error::Numeric { index: Some(1), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_direction_gives_zero() {
        let m = lr2(vec![0.4, -0.7, 0.2, 0.9, 0.1, -0.3]);
        let x = [0.6, 0.25];
        let batch: Batch = [(&x[..], 0)].into_iter().collect();
        let hv = hessian_vector_product(&m, &batch, &[0.0; 6]).unwrap();
        assert!(hv.iter().all(|&v| v == 0.0));
        assert!(mixed_second_derivative(&m, &x, 0, &[0.0; 6]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lr_mixed_derivative_closed_form() {
        // For LR, grad_W = r x^T, grad_b = r with r = p - e_y. With v = (V, c):
        // v . grad = r . (V x + c); d/dx = V^T r + (dp/dx)^T (V x + c)
        // dp/dx = (diag p - p p^T) W.
        let theta = vec![0.4, -0.7, 0.2, 0.9, 0.1, -0.3];
        let v = vec![0.3, 0.1, -0.5, 0.2, 0.7, -0.4];
        let m = lr2(theta.clone());
        let x = [0.6, 0.25];
        let y = 1;
        let z = [theta[0] * x[0] + theta[1] * x[1] + theta[4], theta[2] * x[0] + theta[3] * x[1] + theta[5]];
        let e = [z[0].exp(), z[1].exp()];
        let p = [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])];
        let r = [p[0], p[1] - 1.0];
        let s = [v[0] * x[0] + v[1] * x[1] + v[4], v[2] * x[0] + v[3] * x[1] + v[5]];
        let jac = [[p[0] * (1.0 - p[0]), -p[0] * p[1]], [-p[1] * p[0], p[1] * (1.0 - p[1])]];
        let mut expected = [0.0; 2];
        for (d, out) in expected.iter_mut().enumerate() {
            *out = v[d] * r[0] + v[2 + d] * r[1];
            for k in 0..2 {
                let dpk_dxd = jac[k][0] * theta[d] + jac[k][1] * theta[2 + d];
                *out += dpk_dxd * s[k];
            }
        }
        let got = mixed_second_derivative(&m, &x, y, &v).unwrap();
        for (a, b) in got.iter().zip(expected) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn explicit_hessian_guard() {
        let arch = Architecture::new(ArchKind::Mlp2, 30, 2).unwrap();
        let m = ModelParams::zeros(arch);
        let x = vec![0.0; 30];
        let batch: Batch = [(&x[..], 0)].into_iter().collect();
        assert!(matches!(explicit_hessian(&m, &batch), Err(Error::Capacity { .. })));
    }
}
