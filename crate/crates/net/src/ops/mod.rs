//! Layer primitives with explicit backward passes.

mod conv;
mod norm;

pub use conv::{Conv3d, Deconv3d};
pub use norm::{instance_norm, instance_norm_backward, NormCache, IN_EPS};

use crate::{Real, Tensor};

/// Default probability clamp of the cross-entropy.
pub const CE_EPS: f64 = 1e-7;

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
    y
}

/// Gradient through a ReLU given its output.
pub fn relu_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    dx.data_mut().iter_mut().zip(y.data()).for_each(|(g, &o)| {
        if o <= T::zero() {
            *g = T::zero();
        }
    });
    dx
}

/// Max pooling with kernel equal to stride; returns the argmax offsets.
pub fn max_pool<T: Real>(x: &Tensor<T>, k: [usize; 3]) -> (Tensor<T>, Vec<usize>) {
    let [n, c, d, h, w] = x.dims5();
    assert!(d % k[0] == 0 && h % k[1] == 0 && w % k[2] == 0, "pool {k:?} does not divide {:?}", x.shape());
    let o = [d / k[0], h / k[1], w / k[2]];
    let mut y = Tensor::zeros(&[n, c, o[0], o[1], o[2]]);
    let mut arg = Vec::with_capacity(y.len());
    let s = d * h * w;
    for (plane, src) in x.data().chunks(s).enumerate() {
        for oz in 0..o[0] {
            for oy in 0..o[1] {
                for ox in 0..o[2] {
                    let mut best = (T::neg_infinity(), 0);
                    for z in oz * k[0]..(oz + 1) * k[0] {
                        for yy in oy * k[1]..(oy + 1) * k[1] {
                            for xx in ox * k[2]..(ox + 1) * k[2] {
                                let off = (z * h + yy) * w + xx;
                                if src[off] > best.0 {
                                    best = (src[off], off);
                                }
                            }
                        }
                    }
                    y.data_mut()[arg.len()] = best.0;
                    arg.push(plane * s + best.1);
                }
            }
        }
    }
    (y, arg)
}

pub fn max_pool_backward<T: Real>(input_shape: &[usize], argmax: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    for (&a, &g) in argmax.iter().zip(dy.data()) {
        dx.data_mut()[a] += g;
    }
    dx
}

/// Two-class softmax over the channel axis of `[n, 2, d, h, w]` logits.
pub fn softmax2<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let [n, c, ..] = logits.dims5();
    assert_eq!(c, 2, "two-class softmax");
    let s = logits.spatial();
    let mut p = Tensor::zeros(logits.shape());
    for i in 0..n {
        let (l, out) = (logits.sample(i), p.sample_mut(i));
        for v in 0..s {
            let (a, b) = (l[v], l[s + v]);
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            out[v] = ea / (ea + eb);
            out[s + v] = eb / (ea + eb);
        }
    }
    p
}

/// Mean over voxels of `w_t·(−ln max(p_t, eps))` with `t` the target class.
/// Returns the loss and its gradient with respect to the logits.
pub fn weighted_ce<T: Real>(probs: &Tensor<T>, target: &[bool], weights: (f64, f64), eps: f64) -> (f64, Tensor<T>) {
    let [n, _, ..] = probs.dims5();
    let s = probs.spatial();
    assert_eq!(target.len(), n * s, "target must cover every voxel of the batch");
    let total = (n * s) as f64;
    let mut loss = 0.0f64;
    let mut grad = Tensor::zeros(probs.shape());
    for i in 0..n {
        let (p, g) = (probs.sample(i), grad.sample_mut(i));
        for v in 0..s {
            let fg = target[i * s + v];
            let (w, pt) = if fg { (weights.1, p[s + v]) } else { (weights.0, p[v]) };
            loss += w * -pt.f64().max(eps).ln();
            let scale = w / total;
            g[v] = T::of(scale * (p[v].f64() - if fg { 0.0 } else { 1.0 }));
            g[s + v] = T::of(scale * (p[s + v].f64() - if fg { 1.0 } else { 0.0 }));
        }
    }
    (loss / total, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_closed_forms() {
        let p = Tensor::filled(&[1, 2, 1, 2, 2], 0.5f32);
        let (l, _) = weighted_ce(&p, &[false; 4], (1.0, 3.0), CE_EPS);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-7);
        let (l, _) = weighted_ce(&p, &[true; 4], (1.0, 3.0), CE_EPS);
        assert!((l - 3.0 * std::f64::consts::LN_2).abs() < 1e-7);
        let one_hot = Tensor::from_vec(&[1, 2, 1, 1, 2], vec![1.0f32, 0.0, 0.0, 1.0]).unwrap();
        let (l, _) = weighted_ce(&one_hot, &[false, true], (1.0, 3.0), CE_EPS);
        assert!(l <= -(1.0f64 - 1e-7).ln() * 3.0 + 1e-12);
    }

    #[test]
    fn softmax_sums_to_one() {
        let l = Tensor::from_vec(&[1, 2, 1, 1, 3], vec![0.0f32, 50.0, -3.0, 1.0, -50.0, 2.0]).unwrap();
        let p = softmax2(&l);
        for v in 0..3 {
            assert!((p.data()[v] + p.data()[3 + v] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn pool_routes_gradient_to_the_max() {
        let x = Tensor::from_vec(&[1, 1, 1, 2, 2], vec![1.0f32, 4.0, 3.0, 2.0]).unwrap();
        let (y, arg) = max_pool(&x, [1, 2, 2]);
        assert_eq!(y.data(), &[4.0]);
        let dx = max_pool_backward(x.shape(), &arg, &Tensor::filled(&[1, 1, 1, 1, 1], 2.0f32));
        assert_eq!(dx.data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        let x = Tensor::from_vec(&[1, 1, 1, 1, 3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        let y = relu(&x);
        let dx = relu_backward(&y, &Tensor::filled(x.shape(), 1.0f32));
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0]);
    }
}
