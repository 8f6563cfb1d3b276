//! Forward/backward primitives shared by the context encoder and the slot head.
//!
//! Activations are row-major `(positions × features)` matrices. Linear layers
//! compute `x · W + b` with `W` stored as `(in × out)`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const LAYER_NORM_EPS: f64 = 1e-12;

pub fn linear(x: &ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

/// Accumulates `dW`, `db` and returns `dx`.
pub fn linear_backward(
    x: &ArrayView2<f64>,
    w: &Array2<f64>,
    dy: &Array2<f64>,
    dw: &mut Array2<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    ndarray::linalg::general_mat_mul(1.0, &x.t(), dy, 1.0, dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

pub fn layer_norm(x: &Array2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row *= *s;
    }
    let y = &xhat * gamma + beta;
    (y, LayerNormCache { xhat, inv_std })
}

pub fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LayerNormCache,
    gamma: &Array1<f64>,
    dgamma: &mut Array1<f64>,
    dbeta: &mut Array1<f64>,
) -> Array2<f64> {
    *dgamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbeta += &dy.sum_axis(Axis(0));
    let dxhat = dy * gamma;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (((mut out, g), xh), s) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows())
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        Zip::from(&mut out)
            .and(&g)
            .and(&xh)
            .for_each(|o, &gi, &xi| *o = s * (gi - mean_g - xi * mean_gx));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
}

pub fn gelu_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|d, &v| {
        let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
        *d *= 0.5 * (1.0 + t) + 0.5 * v * dt;
    });
    dx
}

/// Row softmax with masked columns forced to probability zero.
pub fn masked_softmax_rows(scores: &mut Array2<f64>, key_mask: &[bool]) {
    for mut row in scores.rows_mut() {
        let mut max = f64::NEG_INFINITY;
        for (v, &keep) in row.iter().zip(key_mask) {
            if keep && *v > max {
                max = *v;
            }
        }
        let mut sum = 0.0;
        for (v, &keep) in row.iter_mut().zip(key_mask) {
            *v = if keep { (*v - max).exp() } else { 0.0 };
            sum += *v;
        }
        if sum > 0.0 {
            row /= sum;
        }
    }
}

/// Query/key/value/output projections of a multi-head attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_q: Array2<f64>,
    pub b_q: Array1<f64>,
    pub w_k: Array2<f64>,
    pub b_k: Array1<f64>,
    pub w_v: Array2<f64>,
    pub b_v: Array1<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array1<f64>,
}

pub struct AttentionCache {
    x_q: Array2<f64>,
    x_kv: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    concat: Array2<f64>,
    key_mask: Vec<bool>,
}

impl AttentionCache {
    /// Attention weights of head `h`: `(queries × keys)`.
    pub fn probs(&self, h: usize) -> &Array2<f64> {
        &self.probs[h]
    }

    /// Concatenated per-head outputs before the output projection.
    pub fn concat(&self) -> &Array2<f64> {
        &self.concat
    }
}

impl AttentionParams {
    pub fn zeros(d: usize) -> Self {
        AttentionParams {
            w_q: Array2::zeros((d, d)),
            b_q: Array1::zeros(d),
            w_k: Array2::zeros((d, d)),
            b_k: Array1::zeros(d),
            w_v: Array2::zeros((d, d)),
            b_v: Array1::zeros(d),
            w_o: Array2::zeros((d, d)),
            b_o: Array1::zeros(d),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, ndarray::ArrayViewD<'a, f64>)) {
        f(&format!("{prefix}.w_q"), self.w_q.view().into_dyn());
        f(&format!("{prefix}.b_q"), self.b_q.view().into_dyn());
        f(&format!("{prefix}.w_k"), self.w_k.view().into_dyn());
        f(&format!("{prefix}.b_k"), self.b_k.view().into_dyn());
        f(&format!("{prefix}.w_v"), self.w_v.view().into_dyn());
        f(&format!("{prefix}.b_v"), self.b_v.view().into_dyn());
        f(&format!("{prefix}.w_o"), self.w_o.view().into_dyn());
        f(&format!("{prefix}.b_o"), self.b_o.view().into_dyn());
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ndarray::ArrayViewMutD<'_, f64>)) {
        f(&format!("{prefix}.w_q"), self.w_q.view_mut().into_dyn());
        f(&format!("{prefix}.b_q"), self.b_q.view_mut().into_dyn());
        f(&format!("{prefix}.w_k"), self.w_k.view_mut().into_dyn());
        f(&format!("{prefix}.b_k"), self.b_k.view_mut().into_dyn());
        f(&format!("{prefix}.w_v"), self.w_v.view_mut().into_dyn());
        f(&format!("{prefix}.b_v"), self.b_v.view_mut().into_dyn());
        f(&format!("{prefix}.w_o"), self.w_o.view_mut().into_dyn());
        f(&format!("{prefix}.b_o"), self.b_o.view_mut().into_dyn());
    }

    /// `MultiHead(x_q, x_kv, x_kv)`; masked keys receive zero weight.
    pub fn forward(
        &self,
        x_q: &Array2<f64>,
        x_kv: &Array2<f64>,
        key_mask: &[bool],
        n_heads: usize,
    ) -> (Array2<f64>, AttentionCache) {
        let d = self.w_q.ncols();
        let dh = d / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = linear(&x_q.view(), &self.w_q, &self.b_q);
        let k = linear(&x_kv.view(), &self.w_k, &self.b_k);
        let v = linear(&x_kv.view(), &self.w_v, &self.b_v);
        let mut concat = Array2::zeros((x_q.nrows(), d));
        let mut probs = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t());
            scores *= scale;
            masked_softmax_rows(&mut scores, key_mask);
            concat.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let out = linear(&concat.view(), &self.w_o, &self.b_o);
        let cache = AttentionCache {
            x_q: x_q.clone(),
            x_kv: x_kv.clone(),
            q,
            k,
            v,
            probs,
            concat,
            key_mask: key_mask.to_vec(),
        };
        (out, cache)
    }

    /// Returns `(d x_q, d x_kv)` and accumulates parameter gradients into `grads`.
    pub fn backward(
        &self,
        cache: &AttentionCache,
        d_out: &Array2<f64>,
        grads: &mut AttentionParams,
        need_dq_input: bool,
    ) -> (Option<Array2<f64>>, Array2<f64>) {
        let d = self.w_q.ncols();
        let n_heads = cache.probs.len();
        let dh = d / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let d_concat = linear_backward(&cache.concat.view(), &self.w_o, d_out, &mut grads.w_o, &mut grads.b_o);

        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let d_head = d_concat.slice(cols);
            let dp = d_head.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&d_head));
            let mut ds = &dp * p;
            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let total = row.sum();
                Zip::from(&mut row).and(&prow).for_each(|g, &pi| *g -= pi * total);
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        debug_assert!(cache.key_mask.len() == cache.k.nrows());

        let dx_q = if need_dq_input {
            Some(linear_backward(&cache.x_q.view(), &self.w_q, &dq, &mut grads.w_q, &mut grads.b_q))
        } else {
            ndarray::linalg::general_mat_mul(1.0, &cache.x_q.t(), &dq, 1.0, &mut grads.w_q);
            grads.b_q += &dq.sum_axis(Axis(0));
            None
        };
        let mut dx_kv = linear_backward(&cache.x_kv.view(), &self.w_k, &dk, &mut grads.w_k, &mut grads.b_k);
        dx_kv += &linear_backward(&cache.x_kv.view(), &self.w_v, &dv, &mut grads.w_v, &mut grads.b_v);
        (dx_q, dx_kv)
    }
}

/// Inverted-dropout mask: entries are `0` or `1 / (1 - rate)`.
pub fn dropout_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rate: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_fn((rows, cols), |_| if rng.random::<f64>() < rate { 0.0 } else { keep })
}

/// How a forward pass samples dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropoutMode {
    Off,
    Sample,
}

/// Dropout mode plus the seed of the pass's private RNG stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropoutPlan {
    pub mode: DropoutMode,
    pub seed: u64,
}

impl DropoutPlan {
    pub fn off() -> Self {
        DropoutPlan {
            mode: DropoutMode::Off,
            seed: 0,
        }
    }

    pub fn sample(seed: u64) -> Self {
        DropoutPlan {
            mode: DropoutMode::Sample,
            seed,
        }
    }

    pub(crate) fn rng(&self, rate: f64) -> Option<ChaCha8Rng> {
        match self.mode {
            DropoutMode::Sample if rate > 0.0 => Some(ChaCha8Rng::seed_from_u64(self.seed)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_sum_to_one_over_unmasked() {
        let mut s = array![[1.0, 2.0, 3.0], [0.5, -1.0, 100.0]];
        masked_softmax_rows(&mut s, &[true, true, false]);
        for row in s.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert_eq!(row[2], 0.0);
        }
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let x = array![[1.0, 2.0, 3.0, 4.0], [-3.0, 0.0, 0.0, 3.0]];
        let (y, _) = layer_norm(&x, &Array1::ones(4), &Array1::zeros(4));
        for row in y.rows() {
            assert!(row.sum().abs() < 1e-12);
            let var = row.mapv(|v| v * v).sum() / 4.0;
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        let x = array![[-3.0, -0.7, 0.0, 0.4, 2.5]];
        let g = gelu_backward(&x, &Array2::ones((1, 5)));
        let h = 1e-6;
        for (j, &v) in x.iter().enumerate() {
            let f = |t: f64| gelu(&array![[t]])[[0, 0]];
            let fd = (f(v + h) - f(v - h)) / (2.0 * h);
            assert!((fd - g[[0, j]]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_rate_dropout_plan_has_no_rng() {
        assert!(DropoutPlan::sample(3).rng(0.0).is_none());
        assert!(DropoutPlan::off().rng(0.5).is_none());
        assert!(DropoutPlan::sample(3).rng(0.5).is_some());
    }
}
