//! Central finite-difference checks of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ops::{self, Conv3d, Deconv3d, CE_EPS};
use crate::{Model, Real, Tensor};

/// Relative error at or below which an entry counts as agreeing.
pub const TIGHT: f64 = 1e-3;
/// Bound every entry must meet.
pub const LOOSE: f64 = 1e-2;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Entries within [`TIGHT`].
    pub tight: usize,
    /// Entries within [`LOOSE`].
    pub loose: usize,
    pub worst: f64,
    pub worst_param: String,
}

impl GradCheckReport {
    pub fn tight_fraction(&self) -> f64 {
        self.tight as f64 / self.checked.max(1) as f64
    }

    /// At least 95% within [`TIGHT`] and everything within [`LOOSE`].
    pub fn passes(&self) -> bool {
        self.checked > 0 && self.tight_fraction() >= 0.95 && self.loose == self.checked
    }

    pub fn record(&mut self, name: &str, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        self.tight += (err <= TIGHT) as usize;
        self.loose += (err <= LOOSE) as usize;
        if err > self.worst || self.worst_param.is_empty() {
            self.worst = self.worst.max(err);
            self.worst_param = name.to_string();
        }
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.tight += other.tight;
        self.loose += other.loose;
        if other.worst > self.worst {
            self.worst = other.worst;
            self.worst_param = other.worst_param.clone();
        }
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`: relative for ordinary magnitudes,
/// absolute for gradients that are numerically zero.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Relative rounding noise assumed for a loss evaluated in `f64`.
const LOSS_NOISE: f64 = 1e-13;

/// Central difference of `f` at `x[i]`, starting from step
/// `rel_step·max(|x_i|, 0.1)`. `center` is `f(x)`. One-sided slopes that
/// disagree beyond both 0.1% and the rounding noise mean the interval
/// straddles a kink (ReLU or max-pool switch), so the step shrinks tenfold,
/// at most twice.
pub fn central_difference<T: Real>(x: &mut [T], i: usize, rel_step: f64, center: f64, mut f: impl FnMut(&[T]) -> f64) -> f64 {
    let orig = x[i];
    let mut h = rel_step * orig.f64().abs().max(0.1);
    for attempt in 0..3 {
        x[i] = orig + T::of(h);
        let (up, hi) = (f(x), x[i].f64());
        x[i] = orig - T::of(h);
        let (down, lo) = (f(x), x[i].f64());
        x[i] = orig;
        let (right, left) = ((up - center) / (hi - orig.f64()), (center - down) / (orig.f64() - lo));
        let tolerance = (1e-3 * right.abs().max(left.abs())).max(LOSS_NOISE * center.abs().max(1.0) / h);
        if attempt == 2 || (right - left).abs() <= tolerance {
            return (up - down) / (hi - lo);
        }
        h /= 10.0;
    }
    unreachable!("the last attempt returns")
}

/// Weighted cross-entropy of the model on one batch.
pub fn model_loss<T: Real>(model: &Model<T>, image: &Tensor<T>, guides: &Tensor<T>, target: &[bool], weights: (f64, f64)) -> f64 {
    let logits = model.forward(image, guides).expect("valid inputs");
    ops::weighted_ce(&ops::softmax2(&logits), target, weights, CE_EPS).0
}

/// Compares the analytic gradients of `model` (computed in `T`) with central
/// differences of the same network evaluated in `f64`, at every `stride`-th
/// entry of each parameter tensor.
#[allow(clippy::too_many_arguments)]
pub fn check_model<T: Real>(
    model: &Model<T>,
    image: &Tensor<T>,
    guides: &Tensor<T>,
    target: &[bool],
    weights: (f64, f64),
    stride: usize,
    rel_step: f64,
) -> GradCheckReport {
    let (logits, tape) = model.forward_train(image, guides).expect("valid inputs");
    let (_, dlogits) = ops::weighted_ce(&ops::softmax2(&logits), target, weights, CE_EPS);
    let mut grads = model.params().zeros_like();
    model.backward(&tape, &dlogits, &mut grads);

    let mut reference: Model<f64> = model.cast();
    let (image, guides) = (image.cast::<f64>(), guides.cast::<f64>());
    let center = model_loss(&reference, &image, &guides, target, weights);
    let mut report = GradCheckReport::default();
    for t in 0..reference.params().len() {
        let name = reference.params().names()[t].clone();
        let mut values = reference.params().get(t).data().to_vec();
        for i in (0..values.len()).step_by(stride.max(1)) {
            let numeric = central_difference(&mut values, i, rel_step, center, |v| {
                reference.params_mut().tensors_mut()[t].data_mut().copy_from_slice(v);
                model_loss(&reference, &image, &guides, target, weights)
            });
            report.record(&name, grads[t].data()[i].f64(), numeric);
        }
        reference.params_mut().tensors_mut()[t].data_mut().copy_from_slice(&values);
    }
    report
}

/// A random batch for gradient checks: image in [-1, 1], guides in [0, 1],
/// roughly 30% foreground.
pub fn random_batch<T: Real>(n: usize, dims: [usize; 3], seed: u64) -> (Tensor<T>, Tensor<T>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vox = dims.iter().product::<usize>();
    let shape = |c| [n, c, dims[0], dims[1], dims[2]];
    let image = (0..n * vox).map(|_| T::of(rng.random_range(-1.0..1.0))).collect();
    let guides = (0..2 * n * vox).map(|_| T::of(rng.random_range(0.0..1.0))).collect();
    let target = (0..n * vox).map(|_| rng.random_bool(0.3)).collect();
    (
        Tensor::from_vec(&shape(1), image).expect("sized"),
        Tensor::from_vec(&shape(2), guides).expect("sized"),
        target,
    )
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(lo..hi)).collect()).expect("sized")
}

/// Values in ±[margin, 1] so a small perturbation never crosses zero.
fn signed_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f32) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let m = rng.random_range(margin..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("sized")
}

/// `Σ r·y`; its gradient with respect to `y` is `r`.
fn pairing(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(&a, &b)| a * b).sum()
}

/// Checks one layer: `grads` are the analytic `f32` gradients of `Σ r·f(inputs)`
/// for each input, and `f` evaluates the layer in `f64`.
fn check_layer(
    name: &str,
    inputs: &[Tensor],
    r: &Tensor,
    grads: &[Tensor],
    rel_step: f64,
    f: impl Fn(&[Tensor<f64>]) -> Tensor<f64>,
) -> GradCheckReport {
    let mut inputs: Vec<Tensor<f64>> = inputs.iter().map(Tensor::cast).collect();
    let r = r.cast::<f64>();
    let center = pairing(&f(&inputs), &r);
    let mut report = GradCheckReport::default();
    for k in 0..inputs.len() {
        let mut values = inputs[k].data().to_vec();
        for i in 0..values.len() {
            let numeric = central_difference(&mut values, i, rel_step, center, |v| {
                inputs[k].data_mut().copy_from_slice(v);
                pairing(&f(&inputs), &r)
            });
            report.record(&format!("{name}[{k}]"), grads[k].data()[i] as f64, numeric);
        }
        inputs[k].data_mut().copy_from_slice(&values);
    }
    report
}

/// Checks the `f32` backward pass of every layer type against central
/// differences with step `1e-2·max(|x|, 0.1)`.
pub fn layer_checks(seed: u64) -> Vec<(String, GradCheckReport)> {
    const STEP: f64 = 1e-2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    for (kernel, stride) in [([3, 3, 3], [1, 1, 1]), ([1, 3, 3], [1, 2, 2]), ([3, 3, 3], [2, 2, 2]), ([1, 1, 1], [1, 1, 1])] {
        let conv = Conv3d::new(2, 3, kernel, stride);
        let x = random_tensor(&mut rng, &[2, 2, 4, 4, 4], -1.0, 1.0);
        let w = random_tensor(&mut rng, &conv.weight_shape(), -0.5, 0.5);
        let b = random_tensor(&mut rng, &[3], -0.5, 0.5);
        let y = conv.forward(&x, &w, Some(&b));
        let r = random_tensor(&mut rng, y.shape(), -1.0, 1.0);
        let (mut dw, mut db) = (Tensor::zeros(w.shape()), Tensor::zeros(&[3]));
        let dx = conv.backward(&x, &w, &r, &mut dw, Some(&mut db), true).expect("requested");
        let name = format!("conv k{kernel:?} s{stride:?}");
        let rep = check_layer(&name, &[x, w, b], &r, &[dx, dw, db], STEP, |t| conv.forward(&t[0], &t[1], Some(&t[2])));
        out.push((name, rep));
    }

    for stride in [[1, 2, 2], [2, 2, 2]] {
        let dc = Deconv3d::new(3, 2, stride);
        let x = random_tensor(&mut rng, &[2, 3, 2, 2, 2], -1.0, 1.0);
        let w = random_tensor(&mut rng, &dc.weight_shape(), -0.5, 0.5);
        let b = random_tensor(&mut rng, &[2], -0.5, 0.5);
        let y = dc.forward(&x, &w, &b);
        let r = random_tensor(&mut rng, y.shape(), -1.0, 1.0);
        let (mut dw, mut db) = (Tensor::zeros(w.shape()), Tensor::zeros(&[2]));
        let dx = dc.backward(&x, &w, &r, &mut dw, &mut db);
        let name = format!("transposed conv s{stride:?}");
        let rep = check_layer(&name, &[x, w, b], &r, &[dx, dw, db], STEP, |t| dc.forward(&t[0], &t[1], &t[2]));
        out.push((name, rep));
    }

    {
        let x = random_tensor(&mut rng, &[2, 3, 2, 3, 4], -2.0, 2.0);
        let gamma = random_tensor(&mut rng, &[3], 0.5, 1.5);
        let beta = random_tensor(&mut rng, &[3], -0.5, 0.5);
        let (y, cache) = ops::instance_norm(&x, &gamma, &beta);
        let r = random_tensor(&mut rng, y.shape(), -1.0, 1.0);
        let (mut dg, mut db) = (Tensor::zeros(&[3]), Tensor::zeros(&[3]));
        let dx = ops::instance_norm_backward(&cache, &gamma, &r, &mut dg, &mut db);
        let rep = check_layer("instance norm", &[x, gamma, beta], &r, &[dx, dg, db], STEP, |t| ops::instance_norm(&t[0], &t[1], &t[2]).0);
        out.push(("instance norm".into(), rep));
    }

    {
        let x = signed_away_from_zero(&mut rng, &[2, 2, 2, 3, 3], 0.05);
        let y = ops::relu(&x);
        let r = random_tensor(&mut rng, y.shape(), -1.0, 1.0);
        let dx = ops::relu_backward(&y, &r);
        let rep = check_layer("relu", &[x], &r, &[dx], STEP, |t| ops::relu(&t[0]));
        out.push(("relu".into(), rep));
    }

    {
        // Distinct values spaced well beyond the step keep each argmax fixed.
        let mut x = Tensor::zeros(&[2, 2, 2, 4, 4]);
        let len = x.len();
        let mut order: Vec<usize> = (0..len).collect();
        for i in (1..len).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for (v, &o) in x.data_mut().iter_mut().zip(&order) {
            *v = 0.5 + o as f32 / len as f32;
        }
        let (y, arg) = ops::max_pool(&x, [1, 2, 2]);
        let r = random_tensor(&mut rng, y.shape(), -1.0, 1.0);
        let dx = ops::max_pool_backward(x.shape(), &arg, &r);
        let rep = check_layer("max pool", &[x], &r, &[dx], 1e-3, |t| ops::max_pool(&t[0], [1, 2, 2]).0);
        out.push(("max pool".into(), rep));
    }

    {
        let a = random_tensor(&mut rng, &[2, 1, 2, 2, 2], -1.0, 1.0);
        let b = random_tensor(&mut rng, &[2, 3, 2, 2, 2], -1.0, 1.0);
        let y = Tensor::concat_channels(&a, &b);
        let r = random_tensor(&mut rng, y.shape(), -1.0, 1.0);
        let (da, db) = r.split_channels(1);
        let rep = check_layer("concat", &[a, b], &r, &[da, db], STEP, |t| Tensor::concat_channels(&t[0], &t[1]));
        out.push(("concat".into(), rep));
    }

    {
        let a = random_tensor(&mut rng, &[1, 2, 2, 2, 2], -1.0, 1.0);
        let b = random_tensor(&mut rng, &[1, 2, 2, 2, 2], -1.0, 1.0);
        let r = random_tensor(&mut rng, a.shape(), -1.0, 1.0);
        let rep = check_layer("add", &[a, b], &r, &[r.clone(), r.clone()], STEP, |t| {
            let mut s = t[0].clone();
            s.add_assign(&t[1]);
            s
        });
        out.push(("add".into(), rep));
    }

    {
        let logits = random_tensor(&mut rng, &[2, 2, 2, 2, 2], -3.0, 3.0);
        let target: Vec<bool> = (0..16).map(|_| rng.random_bool(0.4)).collect();
        let weights = (1.0, 3.0);
        let (_, dl) = ops::weighted_ce(&ops::softmax2(&logits), &target, weights, CE_EPS);
        let mut values = logits.cast::<f64>().into_data();
        let center = ops::weighted_ce(&ops::softmax2(&logits.cast::<f64>()), &target, weights, CE_EPS).0;
        let mut rep = GradCheckReport::default();
        for i in 0..values.len() {
            let numeric = central_difference(&mut values, i, STEP, center, |v| {
                let l = Tensor::from_vec(logits.shape(), v.to_vec()).expect("sized");
                ops::weighted_ce(&ops::softmax2(&l), &target, weights, CE_EPS).0
            });
            rep.record("softmax cross-entropy", dl.data()[i] as f64, numeric);
        }
        out.push(("softmax cross-entropy".into(), rep));
    }
    out
}
