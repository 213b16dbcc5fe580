use std::fmt::Debug;

use num_traits::Float;

use crate::NetError;

/// Scalar type of the network. Training runs in `f32`; `f64` serves
/// numerical verification.
pub trait Real: Float + Default + Debug + Send + Sync + std::iter::Sum + std::ops::AddAssign + 'static {
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;

    /// `C = A·B + beta·C` on row-major buffers with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        sa: (isize, isize),
        b: &[Self],
        sb: (isize, isize),
        beta: Self,
        c: &mut [Self],
    );
}

macro_rules! real_impl {
    ($t:ty, $gemm:ident) => {
        impl Real for $t {
            fn of(v: f64) -> Self {
                v as $t
            }

            fn f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                (rsa, csa): (isize, isize),
                b: &[Self],
                (rsb, csb): (isize, isize),
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(c.len() >= m * n);
                if m > 0 && k > 0 && n > 0 {
                    let last = |rs: isize, cs: isize, r: usize, cc: usize| (r as isize - 1) * rs + (cc as isize - 1) * cs;
                    assert!((last(rsa, csa, m, k) as usize) < a.len() && (last(rsb, csb, k, n) as usize) < b.len());
                }
                // SAFETY: the asserts above bound the furthest element of each
                // strided view; all strides are non-negative.
                unsafe {
                    matrixmultiply::$gemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
                }
            }
        }
    };
}

real_impl!(f32, sgemm);
real_impl!(f64, dgemm);

/// Row-major array. Activations use the layout `[batch, channels, depth, height, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Real = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, NetError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() || shape.iter().any(|&s| s == 0) {
            return Err(NetError::Shape(format!("shape {shape:?} does not hold {} values", data.len())));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Element-wise conversion to another precision.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.f64())).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// `[n, c, d, h, w]` of an activation tensor.
    pub fn dims5(&self) -> [usize; 5] {
        assert_eq!(self.shape.len(), 5, "expected a 5-D activation, got {:?}", self.shape);
        [self.shape[0], self.shape[1], self.shape[2], self.shape[3], self.shape[4]]
    }

    /// Spatial size `d·h·w` of an activation tensor.
    pub fn spatial(&self) -> usize {
        let [_, _, d, h, w] = self.dims5();
        d * h * w
    }

    /// Channel-major slice of sample `n`.
    pub fn sample(&self, n: usize) -> &[T] {
        let per = self.len() / self.shape[0];
        &self.data[n * per..(n + 1) * per]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let per = self.len() / self.shape[0];
        &mut self.data[n * per..(n + 1) * per]
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape);
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        let [n, ca, d, h, w] = a.dims5();
        let [nb, cb, db, hb, wb] = b.dims5();
        assert_eq!((n, d, h, w), (nb, db, hb, wb), "concat spatial mismatch");
        let mut out = Vec::with_capacity(a.len() + b.len());
        for i in 0..n {
            out.extend_from_slice(a.sample(i));
            out.extend_from_slice(b.sample(i));
        }
        Tensor { shape: vec![n, ca + cb, d, h, w], data: out }
    }

    /// Inverse of [`Tensor::concat_channels`] for gradients.
    pub fn split_channels(&self, first: usize) -> (Tensor<T>, Tensor<T>) {
        let [n, c, d, h, w] = self.dims5();
        let s = d * h * w;
        let mut a = Vec::with_capacity(n * first * s);
        let mut b = Vec::with_capacity(n * (c - first) * s);
        for i in 0..n {
            let x = self.sample(i);
            a.extend_from_slice(&x[..first * s]);
            b.extend_from_slice(&x[first * s..]);
        }
        (Tensor { shape: vec![n, first, d, h, w], data: a }, Tensor { shape: vec![n, c - first, d, h, w], data: b })
    }

    pub(crate) fn debug_check(&self, what: &str) {
        debug_assert!(self.is_finite(), "non-finite values after {what}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split() {
        let a = Tensor::from_vec(&[2, 1, 1, 1, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2, 1, 1, 2], (5..13).map(|v| v as f32).collect()).unwrap();
        let c = Tensor::concat_channels(&a, &b);
        assert_eq!(c.shape(), &[2, 3, 1, 1, 2]);
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]);
        let (x, y) = c.split_channels(1);
        assert_eq!((x, y), (a, b));
    }

    #[test]
    fn shape_validation() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn gemm_agrees_across_precisions() {
        // [[1,2],[3,4]] · [[5,6],[7,8]] with B read transposed from [[5,7],[6,8]].
        let a = [1.0, 2.0, 3.0, 4.0];
        let bt = [5.0, 7.0, 6.0, 8.0];
        let mut c32 = [1.0f32; 4];
        f32::gemm(2, 2, 2, &a.map(|v: f64| v as f32), (2, 1), &bt.map(|v: f64| v as f32), (1, 2), 1.0, &mut c32);
        let mut c64 = [0.0f64; 4];
        f64::gemm(2, 2, 2, &a, (2, 1), &bt, (1, 2), 0.0, &mut c64);
        assert_eq!(c64, [19.0, 22.0, 43.0, 50.0]);
        assert_eq!(c32, [20.0, 23.0, 44.0, 51.0]);
    }
}
