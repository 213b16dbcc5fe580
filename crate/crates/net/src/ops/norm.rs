use crate::{Real, Tensor};

pub const IN_EPS: f64 = 1e-5;

/// Saved statistics for the backward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T: Real = f32> {
    /// Normalized input before the affine map.
    pub xhat: Tensor<T>,
    /// `1/sqrt(var + eps)` per `(sample, channel)`.
    pub inv_std: Vec<f64>,
}

/// Instance normalization with a learnable per-channel affine map.
pub fn instance_norm<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> (Tensor<T>, NormCache<T>) {
    let [n, c, ..] = x.dims5();
    let s = x.spatial();
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(n * c);
    for (idx, (src, (dst, out))) in
        x.data().chunks(s).zip(xhat.data_mut().chunks_mut(s).zip(y.data_mut().chunks_mut(s))).enumerate()
    {
        let ch = idx % c;
        let mean = src.iter().map(|&v| v.f64()).sum::<f64>() / s as f64;
        let var = src.iter().map(|&v| (v.f64() - mean).powi(2)).sum::<f64>() / s as f64;
        let inv = 1.0 / (var + IN_EPS).sqrt();
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for ((d, o), &v) in dst.iter_mut().zip(out.iter_mut()).zip(src) {
            *d = T::of((v.f64() - mean) * inv);
            *o = g * *d + b;
        }
        inv_std.push(inv);
    }
    y.debug_check("instance_norm");
    (y, NormCache { xhat, inv_std })
}

pub fn instance_norm_backward<T: Real>(
    cache: &NormCache<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
    dgamma: &mut Tensor<T>,
    dbeta: &mut Tensor<T>,
) -> Tensor<T> {
    let [_, c, ..] = dy.dims5();
    let s = dy.spatial();
    let mut dx = Tensor::zeros(dy.shape());
    for (idx, ((g, xh), out)) in
        dy.data().chunks(s).zip(cache.xhat.data().chunks(s)).zip(dx.data_mut().chunks_mut(s)).enumerate()
    {
        let ch = idx % c;
        let gm = gamma.data()[ch].f64();
        let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
        for (&gv, &xv) in g.iter().zip(xh) {
            sum_g += gv.f64();
            sum_gx += gv.f64() * xv.f64();
        }
        dbeta.data_mut()[ch] += T::of(sum_g);
        dgamma.data_mut()[ch] += T::of(sum_gx);
        let inv = cache.inv_std[idx];
        let (mg, mgx) = (sum_g / s as f64, sum_gx / s as f64);
        for ((o, &gv), &xv) in out.iter_mut().zip(g).zip(xh) {
            *o = T::of(gm * inv * (gv.f64() - mg - xv.f64() * mgx));
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_moments() {
        let x = Tensor::from_vec(&[2, 3, 2, 3, 4], (0..144).map(|i| ((i * 37 % 17) as f32) * 0.7 + i as f32 * 0.01).collect()).unwrap();
        let (_, cache) = instance_norm(&x, &Tensor::filled(&[3], 1.0f32), &Tensor::zeros(&[3]));
        for chunk in cache.xhat.data().chunks(24) {
            let mean = chunk.iter().map(|&v| v.f64()).sum::<f64>() / 24.0;
            let var = chunk.iter().map(|&v| (v.f64() - mean).powi(2)).sum::<f64>() / 24.0;
            assert!(mean.abs() <= 1e-4);
            assert!((var - 1.0).abs() <= 1e-3);
        }
    }
}
