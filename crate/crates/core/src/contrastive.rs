//! In-batch contrastive objective over dropout-augmented pairs.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenSequence;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::nn::DropoutPlan;
use crate::seed::derive_seed;

/// Cosine similarity.
pub fn similarity(u: &Array1<f64>, v: &Array1<f64>) -> Result<f64> {
    let nu = u.dot(u).sqrt();
    let nv = v.dot(v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((u.dot(v) / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch {
    pub reps: Vec<Array1<f64>>,
    pub aug_reps: Vec<Array1<f64>>,
    pub tau: f64,
}

impl ContrastiveBatch {
    pub fn new(reps: Vec<Array1<f64>>, aug_reps: Vec<Array1<f64>>, tau: f64) -> Result<Self> {
        if reps.is_empty() || reps.len() != aug_reps.len() {
            return Err(Error::Config(format!(
                "contrastive batch needs matching non-empty views, got {} and {}",
                reps.len(),
                aug_reps.len()
            )));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {tau}")));
        }
        for v in reps.iter().chain(&aug_reps) {
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::Config("non-finite representation".into()));
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(Error::ZeroVector);
            }
        }
        Ok(ContrastiveBatch { reps, aug_reps, tau })
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }
}

struct Unit {
    dir: Array1<f64>,
    norm: f64,
}

fn unit(v: &Array1<f64>) -> Unit {
    let norm = v.dot(v).sqrt();
    Unit { dir: v / norm, norm }
}

/// Logits of anchor `m`: index 0 is the positive, then the `2M − 2` negatives
/// with their `(is_aug, k)` identities.
fn anchor_logits(reps: &[Unit], augs: &[Unit], m: usize, tau: f64) -> (Vec<f64>, Vec<(bool, usize)>) {
    let anchor = &reps[m].dir;
    let mut logits = vec![anchor.dot(&augs[m].dir) / tau];
    let mut ids = vec![(true, m)];
    for k in (0..reps.len()).filter(|&k| k != m) {
        logits.push(anchor.dot(&reps[k].dir) / tau);
        ids.push((false, k));
        logits.push(anchor.dot(&augs[k].dir) / tau);
        ids.push((true, k));
    }
    (logits, ids)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// One loss per anchor, in batch order.
pub fn per_anchor_losses(batch: &ContrastiveBatch) -> Vec<f64> {
    let reps: Vec<Unit> = batch.reps.iter().map(unit).collect();
    let augs: Vec<Unit> = batch.aug_reps.iter().map(unit).collect();
    (0..batch.len())
        .map(|m| {
            let (logits, _) = anchor_logits(&reps, &augs, m, batch.tau);
            (log_sum_exp(&logits) - logits[0]).max(0.0)
        })
        .collect()
}

/// Sum of the per-anchor losses.
pub fn contrastive_loss(batch: &ContrastiveBatch) -> f64 {
    per_anchor_losses(batch).iter().sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveGrad {
    pub loss: f64,
    pub d_reps: Vec<Array1<f64>>,
    pub d_aug_reps: Vec<Array1<f64>>,
}

/// `∂cos(u, v)/∂u` scaled by `coeff`, added to `out`.
fn add_cos_grad(out: &mut Array1<f64>, u: &Unit, v: &Unit, coeff: f64) {
    let cos = u.dir.dot(&v.dir);
    out.scaled_add(coeff / u.norm, &v.dir);
    out.scaled_add(-coeff * cos / u.norm, &u.dir);
}

/// Reduced loss and its gradient with respect to every representation.
pub fn contrastive_loss_and_grad(batch: &ContrastiveBatch, reduction: Reduction) -> ContrastiveGrad {
    let n = batch.len();
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / n as f64,
    };
    let reps: Vec<Unit> = batch.reps.iter().map(unit).collect();
    let augs: Vec<Unit> = batch.aug_reps.iter().map(unit).collect();
    let dim = batch.reps[0].len();
    let mut d_reps = vec![Array1::zeros(dim); n];
    let mut d_aug_reps = vec![Array1::zeros(dim); n];
    let mut loss = 0.0;
    for m in 0..n {
        let (logits, ids) = anchor_logits(&reps, &augs, m, batch.tau);
        let lse = log_sum_exp(&logits);
        loss += (lse - logits[0]).max(0.0);
        for (i, (&z, &(is_aug, k))) in logits.iter().zip(&ids).enumerate() {
            let p = (z - lse).exp();
            let coeff = scale * (p - if i == 0 { 1.0 } else { 0.0 }) / batch.tau;
            let other = if is_aug { &augs[k] } else { &reps[k] };
            add_cos_grad(&mut d_reps[m], &reps[m], other, coeff);
            let target = if is_aug { &mut d_aug_reps[k] } else { &mut d_reps[k] };
            add_cos_grad(target, other, &reps[m], coeff);
        }
    }
    ContrastiveGrad {
        loss: loss * scale,
        d_reps,
        d_aug_reps,
    }
}

/// Dropout seeds of the two views of instance `m`.
pub fn pair_seeds(seed: u64, m: usize) -> (u64, u64) {
    let a = derive_seed(seed, &format!("pair{m}"));
    (a, a ^ 1)
}

/// Two dropout-sampled CLS views of every input.
pub fn make_pairs(params: &EncoderParams, inputs: &[TokenSequence], seed: u64, tau: f64) -> Result<ContrastiveBatch> {
    let rate = params.config.dropout_rate;
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Config(format!("dropout rate must lie in (0, 1), got {rate}")));
    }
    let mut reps = Vec::with_capacity(inputs.len());
    let mut aug_reps = Vec::with_capacity(inputs.len());
    for (m, input) in inputs.iter().enumerate() {
        let (sa, sb) = pair_seeds(seed, m);
        let (a, _) = params.forward_ids(input.ids(), DropoutPlan::sample(sa))?;
        let (b, _) = params.forward_ids(input.ids(), DropoutPlan::sample(sb))?;
        reps.push(a.cls().to_owned());
        aug_reps.push(b.cls().to_owned());
    }
    ContrastiveBatch::new(reps, aug_reps, tau)
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::encoder::{init_encoder, EncoderConfig};
    use crate::testutil::relative_error;

    fn random_batch(seed: u64, m: usize, dim: usize, tau: f64) -> ContrastiveBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut draw = || Array1::from_shape_fn(dim, |_| n.sample(&mut rng));
        let reps = (0..m).map(|_| draw()).collect();
        let aug = (0..m).map(|_| draw()).collect();
        ContrastiveBatch::new(reps, aug, tau).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let u = array![1.0, 0.0];
        assert_eq!(similarity(&u, &u).unwrap(), 1.0);
        assert_eq!(similarity(&u, &array![0.0, 3.0]).unwrap(), 0.0);
        let s = similarity(&u, &array![1.0, 1.0]).unwrap();
        assert!((s - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(similarity(&u, &array![0.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn zero_vectors_rejected() {
        let r = ContrastiveBatch::new(vec![array![0.0, 0.0]], vec![array![1.0, 0.0]], 0.1);
        assert!(matches!(r, Err(Error::ZeroVector)));
    }

    #[test]
    fn single_pair_costs_nothing() {
        let b = ContrastiveBatch::new(vec![array![1.0, 2.0]], vec![array![-3.0, 0.5]], 0.1).unwrap();
        assert_eq!(contrastive_loss(&b), 0.0);
        let g = contrastive_loss_and_grad(&b, Reduction::Sum);
        assert_eq!(g.loss, 0.0);
        assert!(g.d_reps[0].iter().chain(g.d_aug_reps[0].iter()).all(|&x| x == 0.0));
    }

    #[test]
    fn two_pair_example() {
        // sim(h1, h1+) = 1, every other similarity 0
        let b = ContrastiveBatch::new(
            vec![array![1.0, 0.0, 0.0, 0.0], array![0.0, 1.0, 0.0, 0.0]],
            vec![array![1.0, 0.0, 0.0, 0.0], array![0.0, 0.0, 1.0, 0.0]],
            1.0,
        )
        .unwrap();
        let e = 1f64.exp();
        let losses = per_anchor_losses(&b);
        assert!((losses[0] - (-(e / (e + 2.0)).ln())).abs() < 1e-9);
        assert!((losses[0] - 0.5514).abs() < 1e-4);
    }

    #[test]
    fn sharp_temperature_drives_loss_to_zero() {
        let b = |tau| {
            ContrastiveBatch::new(
                vec![array![1.0, 0.0], array![0.0, 1.0]],
                vec![array![1.0, 0.1], array![0.1, 1.0]],
                tau,
            )
            .unwrap()
        };
        assert!(contrastive_loss(&b(0.001)) < 1e-12);
        assert!(contrastive_loss(&b(0.001)) < contrastive_loss(&b(0.1)));
    }

    #[test]
    fn mean_reduction_divides_by_batch() {
        let b = random_batch(3, 4, 5, 0.1);
        let s = contrastive_loss_and_grad(&b, Reduction::Sum);
        let m = contrastive_loss_and_grad(&b, Reduction::Mean);
        assert!((s.loss / 4.0 - m.loss).abs() < 1e-12);
        for (a, b) in s.d_reps.iter().zip(&m.d_reps) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x / 4.0 - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for &(seed, m) in &[(1u64, 2usize), (2, 3), (3, 5)] {
            let b = random_batch(seed, m, 6, 0.1);
            let g = contrastive_loss_and_grad(&b, Reduction::Sum);
            assert!((g.loss - contrastive_loss(&b)).abs() < 1e-9);
            for side in 0..2 {
                for k in 0..m {
                    for i in 0..6 {
                        let eval = |delta: f64| {
                            let mut c = b.clone();
                            let v = if side == 0 { &mut c.reps[k] } else { &mut c.aug_reps[k] };
                            v[i] += delta;
                            contrastive_loss(&c)
                        };
                        let h = 1e-6;
                        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                        let analytic = if side == 0 { g.d_reps[k][i] } else { g.d_aug_reps[k][i] };
                        assert!(relative_error(analytic, numeric) < 1e-4, "{analytic} vs {numeric}");
                    }
                }
            }
        }
    }

    fn tiny_encoder(rate: f64) -> EncoderParams {
        let mut cfg = EncoderConfig::new(16);
        cfg.d_model = 128;
        cfg.n_layers = 1;
        cfg.n_heads = 4;
        cfg.d_ff = 64;
        cfg.max_len = 8;
        cfg.dropout_rate = rate;
        init_encoder(&cfg).unwrap()
    }

    #[test]
    fn pairs_are_seeded_and_distinct() {
        let enc = tiny_encoder(0.1);
        let inputs = vec![
            TokenSequence::new(vec![0, 5, 1, 6, 1], 8).unwrap(),
            TokenSequence::new(vec![0, 7, 8, 1, 1], 8).unwrap(),
        ];
        let a = make_pairs(&enc, &inputs, 4, 0.1).unwrap();
        let b = make_pairs(&enc, &inputs, 4, 0.1).unwrap();
        assert_eq!(a, b);
        let gap: f64 = a
            .reps
            .iter()
            .zip(&a.aug_reps)
            .map(|(r, q)| (r - q).mapv(f64::abs).mean().unwrap())
            .sum::<f64>()
            / 2.0;
        assert!(gap > 0.0);
        assert!(make_pairs(&tiny_encoder(0.0), &inputs, 4, 0.1).is_err());
    }

    #[test]
    fn tiny_rate_makes_views_nearly_equal() {
        let inputs = vec![TokenSequence::new(vec![0, 5, 1, 6, 1], 8).unwrap()];
        let b = make_pairs(&tiny_encoder(1e-9), &inputs, 4, 0.1).unwrap();
        for (x, y) in b.reps[0].iter().zip(b.aug_reps[0].iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn losses_are_nonnegative_and_permutation_invariant(seed in any::<u64>(), m in 1usize..7, rot in 0usize..7) {
            let b = random_batch(seed, m, 4, 0.1);
            let losses = per_anchor_losses(&b);
            prop_assert!(losses.iter().all(|&l| l >= 0.0));
            let mut p = b.clone();
            p.reps.rotate_left(rot % m);
            p.aug_reps.rotate_left(rot % m);
            let mut permuted = per_anchor_losses(&p);
            permuted.rotate_right(rot % m);
            for (x, y) in losses.iter().zip(&permuted) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            prop_assert!((contrastive_loss(&b) - contrastive_loss(&p)).abs() < 1e-9);
        }

        #[test]
        fn closer_positive_lowers_the_loss(seed in any::<u64>(), m in 2usize..6, step in 0.05f64..0.95) {
            let b = random_batch(seed, m, 4, 0.1);
            let before = per_anchor_losses(&b)[0];
            let mut moved = b.clone();
            let target = &b.reps[0] / b.reps[0].dot(&b.reps[0]).sqrt() * b.aug_reps[0].dot(&b.aug_reps[0]).sqrt();
            moved.aug_reps[0] = &b.aug_reps[0] + &((&target - &b.aug_reps[0]) * step);
            // moving a toward r along the chord raises cos(r, a) unless already aligned
            let s0 = similarity(&b.reps[0], &b.aug_reps[0]).unwrap();
            let s1 = similarity(&moved.reps[0], &moved.aug_reps[0]).unwrap();
            prop_assume!(s1 > s0 + 1e-9);
            // hold negatives fixed: anchor 0's negatives do not involve aug_reps[0]
            let after = per_anchor_losses(&moved)[0];
            prop_assert!(after < before, "{} -> {}", before, after);
        }
    }
}
