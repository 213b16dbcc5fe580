//! Convolution with zero "same" padding and transposed convolution whose
//! kernel equals its stride, both lowered to single-threaded GEMM.

use crate::{Real, Tensor};

/// Geometry of a 3D convolution. Weights are `[cout, cin, kd, kh, kw]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
}

impl Conv3d {
    pub fn new(cin: usize, cout: usize, kernel: [usize; 3], stride: [usize; 3]) -> Self {
        Self { cin, cout, kernel, stride }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.cout, self.cin, self.kernel[0], self.kernel[1], self.kernel[2]]
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    fn pad(&self) -> [usize; 3] {
        self.kernel.map(|k| k / 2)
    }

    /// Output spatial dims for an input of spatial dims `s`.
    pub fn out_spatial(&self, s: [usize; 3]) -> [usize; 3] {
        let p = self.pad();
        [0, 1, 2].map(|a| (s[a] + 2 * p[a] - self.kernel[a]) / self.stride[a] + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1]
    }

    /// Lowers one sample `[cin, d, h, w]` into `[cin·taps, out voxels]`.
    fn im2col<T: Real>(&self, x: &[T], s: [usize; 3], col: &mut [T]) {
        let o = self.out_spatial(s);
        let p = self.pad();
        let ovox = o[0] * o[1] * o[2];
        let [kd, kh, kw] = self.kernel;
        let mut row = 0;
        for ci in 0..self.cin {
            let xc = &x[ci * s[0] * s[1] * s[2]..];
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let dst = &mut col[row * ovox..(row + 1) * ovox];
                        row += 1;
                        let mut i = 0;
                        for oz in 0..o[0] {
                            let iz = (oz * self.stride[0] + kz) as isize - p[0] as isize;
                            for oy in 0..o[1] {
                                let iy = (oy * self.stride[1] + ky) as isize - p[1] as isize;
                                let valid_row =
                                    iz >= 0 && (iz as usize) < s[0] && iy >= 0 && (iy as usize) < s[1];
                                let base = if valid_row { (iz as usize * s[1] + iy as usize) * s[2] } else { 0 };
                                for ox in 0..o[2] {
                                    let ix = (ox * self.stride[2] + kx) as isize - p[2] as isize;
                                    dst[i] = if valid_row && ix >= 0 && (ix as usize) < s[2] {
                                        xc[base + ix as usize]
                                    } else {
                                        T::zero()
                                    };
                                    i += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Conv3d::im2col`]: scatter-adds columns back onto the input grid.
    fn col2im<T: Real>(&self, col: &[T], s: [usize; 3], dx: &mut [T]) {
        let o = self.out_spatial(s);
        let p = self.pad();
        let ovox = o[0] * o[1] * o[2];
        let [kd, kh, kw] = self.kernel;
        let mut row = 0;
        for ci in 0..self.cin {
            let xc = &mut dx[ci * s[0] * s[1] * s[2]..];
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let src = &col[row * ovox..(row + 1) * ovox];
                        row += 1;
                        let mut i = 0;
                        for oz in 0..o[0] {
                            let iz = (oz * self.stride[0] + kz) as isize - p[0] as isize;
                            for oy in 0..o[1] {
                                let iy = (oy * self.stride[1] + ky) as isize - p[1] as isize;
                                if iz < 0 || iz as usize >= s[0] || iy < 0 || iy as usize >= s[1] {
                                    i += o[2];
                                    continue;
                                }
                                let base = (iz as usize * s[1] + iy as usize) * s[2];
                                for ox in 0..o[2] {
                                    let ix = (ox * self.stride[2] + kx) as isize - p[2] as isize;
                                    if ix >= 0 && (ix as usize) < s[2] {
                                        xc[base + ix as usize] += src[i];
                                    }
                                    i += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward<T: Real>(&self, x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Tensor<T> {
        let [n, c, d, h, w] = x.dims5();
        assert_eq!(c, self.cin, "conv expects {} input channels", self.cin);
        let o = self.out_spatial([d, h, w]);
        let ovox = o[0] * o[1] * o[2];
        let rows = self.cin * self.taps();
        let mut out = Tensor::zeros(&[n, self.cout, o[0], o[1], o[2]]);
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * ovox] };
        for i in 0..n {
            let cols: &[T] = if self.is_pointwise() {
                x.sample(i)
            } else {
                self.im2col(x.sample(i), [d, h, w], &mut col);
                &col
            };
            let y = out.sample_mut(i);
            if let Some(bias) = bias {
                for (co, chunk) in y.chunks_mut(ovox).enumerate() {
                    chunk.fill(bias.data()[co]);
                }
            }
            T::gemm(self.cout, rows, ovox, weight.data(), (rows as isize, 1), cols, (ovox as isize, 1), T::one(), y);
        }
        out.debug_check("conv3d");
        out
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    pub fn backward<T: Real>(
        &self,
        x: &Tensor<T>,
        weight: &Tensor<T>,
        dy: &Tensor<T>,
        dweight: &mut Tensor<T>,
        dbias: Option<&mut Tensor<T>>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let [n, _, d, h, w] = x.dims5();
        let o = self.out_spatial([d, h, w]);
        let ovox = o[0] * o[1] * o[2];
        let rows = self.cin * self.taps();
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * ovox] };
        let mut dcol = vec![T::zero(); rows * ovox];
        let mut dbias = dbias;
        for i in 0..n {
            let g = dy.sample(i);
            if let Some(db) = dbias.as_deref_mut() {
                for (co, chunk) in g.chunks(ovox).enumerate() {
                    db.data_mut()[co] += T::of(chunk.iter().map(|&v| v.f64()).sum::<f64>());
                }
            }
            let cols: &[T] = if self.is_pointwise() {
                x.sample(i)
            } else {
                self.im2col(x.sample(i), [d, h, w], &mut col);
                &col
            };
            // dW += dY · colᵀ
            T::gemm(self.cout, ovox, rows, g, (ovox as isize, 1), cols, (1, ovox as isize), T::one(), dweight.data_mut());
            if let Some(dx) = dx.as_mut() {
                // dcol = Wᵀ · dY
                T::gemm(rows, self.cout, ovox, weight.data(), (1, rows as isize), g, (ovox as isize, 1), T::zero(), &mut dcol);
                if self.is_pointwise() {
                    dx.sample_mut(i).copy_from_slice(&dcol);
                } else {
                    self.col2im(&dcol, [d, h, w], dx.sample_mut(i));
                }
            }
        }
        dx
    }
}

/// Transposed convolution with kernel equal to stride, so output windows do
/// not overlap. Weights are `[cin, cout, sd, sh, sw]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Deconv3d {
    pub cin: usize,
    pub cout: usize,
    pub stride: [usize; 3],
}

impl Deconv3d {
    pub fn new(cin: usize, cout: usize, stride: [usize; 3]) -> Self {
        Self { cin, cout, stride }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.cin, self.cout, self.stride[0], self.stride[1], self.stride[2]]
    }

    fn taps(&self) -> usize {
        self.stride.iter().product()
    }

    /// Maps row `co·taps + k` and input voxel `i` to the output offset within one channel.
    fn scatter_index(&self, s: [usize; 3], i: usize, k: usize) -> usize {
        let [sd, sh, sw] = self.stride;
        let (z, y, x) = (i / (s[1] * s[2]), (i / s[2]) % s[1], i % s[2]);
        let (kz, ky, kx) = (k / (sh * sw), (k / sw) % sh, k % sw);
        ((z * sd + kz) * s[1] * sh + (y * sh + ky)) * s[2] * sw + x * sw + kx
    }

    pub fn forward<T: Real>(&self, x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Tensor<T> {
        let [n, c, d, h, w] = x.dims5();
        assert_eq!(c, self.cin);
        let [sd, sh, sw] = self.stride;
        let s = [d, h, w];
        let nin = d * h * w;
        let taps = self.taps();
        let rows = self.cout * taps;
        let ovox = nin * taps;
        let mut out = Tensor::zeros(&[n, self.cout, d * sd, h * sh, w * sw]);
        let mut ycol = vec![T::zero(); rows * nin];
        for i in 0..n {
            T::gemm(rows, self.cin, nin, weight.data(), (1, rows as isize), x.sample(i), (nin as isize, 1), T::zero(), &mut ycol);
            let y = out.sample_mut(i);
            for co in 0..self.cout {
                let b = bias.data()[co];
                let yc = &mut y[co * ovox..(co + 1) * ovox];
                for k in 0..taps {
                    let src = &ycol[(co * taps + k) * nin..(co * taps + k + 1) * nin];
                    for (v, &val) in src.iter().enumerate() {
                        yc[self.scatter_index(s, v, k)] = val + b;
                    }
                }
            }
        }
        out.debug_check("deconv3d");
        out
    }

    pub fn backward<T: Real>(
        &self,
        x: &Tensor<T>,
        weight: &Tensor<T>,
        dy: &Tensor<T>,
        dweight: &mut Tensor<T>,
        dbias: &mut Tensor<T>,
    ) -> Tensor<T> {
        let [n, _, d, h, w] = x.dims5();
        let s = [d, h, w];
        let nin = d * h * w;
        let taps = self.taps();
        let rows = self.cout * taps;
        let ovox = nin * taps;
        let mut dx = Tensor::zeros(x.shape());
        let mut gcol = vec![T::zero(); rows * nin];
        for i in 0..n {
            let g = dy.sample(i);
            for co in 0..self.cout {
                let gc = &g[co * ovox..(co + 1) * ovox];
                dbias.data_mut()[co] += T::of(gc.iter().map(|&v| v.f64()).sum::<f64>());
                for k in 0..taps {
                    let dst = &mut gcol[(co * taps + k) * nin..(co * taps + k + 1) * nin];
                    for (v, slot) in dst.iter_mut().enumerate() {
                        *slot = gc[self.scatter_index(s, v, k)];
                    }
                }
            }
            // dX = W · gcol ; dW += X · gcolᵀ
            T::gemm(self.cin, rows, nin, weight.data(), (rows as isize, 1), &gcol, (nin as isize, 1), T::zero(), dx.sample_mut(i));
            T::gemm(self.cin, nin, rows, x.sample(i), (nin as isize, 1), &gcol, (1, nin as isize), T::one(), dweight.data_mut());
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an oracle.
    fn naive_conv(conv: &Conv3d, x: &Tensor, wt: &Tensor, b: &Tensor) -> Tensor {
        let [n, _, d, h, w] = x.dims5();
        let o = conv.out_spatial([d, h, w]);
        let k = conv.kernel;
        let p = k.map(|k| (k / 2) as isize);
        let mut out = Tensor::zeros(&[n, conv.cout, o[0], o[1], o[2]]);
        for i in 0..n {
            for co in 0..conv.cout {
                for oz in 0..o[0] {
                    for oy in 0..o[1] {
                        for ox in 0..o[2] {
                            let mut acc = b.data()[co] as f64;
                            for ci in 0..conv.cin {
                                for kz in 0..k[0] {
                                    for ky in 0..k[1] {
                                        for kx in 0..k[2] {
                                            let iz = (oz * conv.stride[0] + kz) as isize - p[0];
                                            let iy = (oy * conv.stride[1] + ky) as isize - p[1];
                                            let ix = (ox * conv.stride[2] + kx) as isize - p[2];
                                            if iz < 0 || iy < 0 || ix < 0 {
                                                continue;
                                            }
                                            let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                            if iz >= d || iy >= h || ix >= w {
                                                continue;
                                            }
                                            let xv = x.data()[(((i * conv.cin + ci) * d + iz) * h + iy) * w + ix];
                                            let wv = wt.data()[(((co * conv.cin + ci) * k[0] + kz) * k[1] + ky) * k[2] + kx];
                                            acc += xv as f64 * wv as f64;
                                        }
                                    }
                                }
                            }
                            out.data_mut()[(((i * conv.cout + co) * o[0] + oz) * o[1] + oy) * o[2] + ox] = acc as f32;
                        }
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: &[usize], scale: f32) -> Tensor {
        let len: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|i| ((i * 7919 % 101) as f32 / 50.0 - 1.0) * scale).collect()).unwrap()
    }

    #[test]
    fn matches_naive_convolution() {
        for (kernel, stride) in [([3, 3, 3], [1, 1, 1]), ([1, 3, 3], [1, 2, 2]), ([3, 3, 3], [2, 2, 2]), ([1, 1, 1], [1, 1, 1])] {
            let conv = Conv3d::new(3, 4, kernel, stride);
            let x = ramp(&[2, 3, 4, 6, 8], 1.0);
            let w = ramp(&conv.weight_shape(), 0.3);
            let b = ramp(&[4], 0.1);
            let got = conv.forward(&x, &w, Some(&b));
            let want = naive_conv(&conv, &x, &w, &b);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b} for {kernel:?}/{stride:?}");
            }
        }
    }

    #[test]
    fn same_padding_shapes() {
        let c = Conv3d::new(1, 1, [3, 3, 3], [2, 2, 2]);
        assert_eq!(c.out_spatial([8, 8, 8]), [4, 4, 4]);
        let c = Conv3d::new(1, 1, [1, 3, 3], [1, 2, 2]);
        assert_eq!(c.out_spatial([10, 512, 160]), [10, 256, 80]);
    }

    #[test]
    fn deconv_places_each_input_in_its_own_block() {
        let dc = Deconv3d::new(1, 1, [1, 2, 2]);
        let x = Tensor::from_vec(&[1, 1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&dc.weight_shape(), vec![1.0, 10.0, 100.0, 1000.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        let y = dc.forward(&x, &w, &b);
        assert_eq!(y.shape(), &[1, 1, 1, 2, 4]);
        assert_eq!(y.data(), &[1.5, 10.5, 2.5, 20.5, 100.5, 1000.5, 200.5, 2000.5]);
    }

    #[test]
    fn backward_is_the_adjoint() {
        // <conv(x), g> = <x, conv_backward(g)> for a bias-free layer.
        let conv = Conv3d::new(2, 3, [3, 3, 3], [2, 2, 2]);
        let x = ramp(&[1, 2, 4, 4, 4], 1.0);
        let w = ramp(&conv.weight_shape(), 0.5);
        let y = conv.forward(&x, &w, None);
        let g = ramp(y.shape(), 0.7);
        let mut dw = Tensor::zeros(w.shape());
        let mut db = Tensor::zeros(&[3]);
        let dx = conv.backward(&x, &w, &g, &mut dw, Some(&mut db), true).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0));
        // The same pairing is linear in the weights.
        let rhs_w: f64 = w.data().iter().zip(dw.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs_w).abs() < 1e-3 * lhs.abs().max(1.0));

        let dc = Deconv3d::new(2, 3, [2, 2, 2]);
        let w = ramp(&dc.weight_shape(), 0.5);
        let y = dc.forward(&x, &w, &Tensor::zeros(&[3]));
        let g = ramp(y.shape(), 0.7);
        let mut dw = Tensor::zeros(w.shape());
        let dx = dc.backward(&x, &w, &g, &mut dw, &mut Tensor::zeros(&[3]));
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let rhs_w: f64 = w.data().iter().zip(dw.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0));
        assert!((lhs - rhs_w).abs() < 1e-3 * lhs.abs().max(1.0));
    }
}
