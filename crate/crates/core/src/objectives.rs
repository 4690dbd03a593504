//! Loss functions and the policy-gradient estimator.
//!
//! The training objective is `reconstruction - lambda * sum_k S_k`, where the
//! per-head selectivity
//!
//! ```text
//! S_k = sum_a pi_k(a | f(x)) * sum_{x'} log(1/K + |f_k(x') - f_k(x)| /
//!                                        (sum_k' |f_k'(x') - f_k'(x)| + eps))
//! ```
//!
//! rewards latent unit k for owning the response to the transitions its
//! policy favors. The 1/K shift keeps the log away from zero; the small eps
//! covers the all-units-unchanged case where the ratio itself would be 0/0.
//! The policy probabilities enter as fixed weights: the value's gradient
//! flows into the encoder through both f(x) and f(x'), while the policy
//! parameters are updated only by the score-function estimator below.

use rand::Rng;

use crate::kernels;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::Result;

/// Denominator guard for the all-latents-unchanged case.
pub const RATIO_EPS: f64 = 1e-8;

/// Squared L2 reconstruction error between an image and its reconstruction.
pub fn reconstruction_error<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    xhat: NodeId,
) -> Result<NodeId> {
    let diff = tape.sub(xhat, x)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.sum_all(sq))
}

/// Squared L2 error of a two-branch reconstruction: `|x - (chat + uhat)|^2`.
pub fn dual_reconstruction_error<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    chat: NodeId,
    uhat: NodeId,
) -> Result<NodeId> {
    let sum = tape.add(chat, uhat)?;
    reconstruction_error(tape, x, sum)
}

/// Latent-space view of one base state and its sampled next states, grouped
/// by action: row `a*n + j` of `next` is the j-th sample under action `a`.
#[derive(Debug, Clone)]
pub struct SelectivityBatch<T> {
    /// Latent of the base image, length K.
    pub fx: Vec<T>,
    /// Next-state latents, `K*n` rows of length K, grouped by action.
    pub next: Vec<Vec<T>>,
    /// Per-head action probabilities, K rows of length K.
    pub probs: Vec<Vec<T>>,
    /// Samples per action.
    pub n: usize,
}

impl<T: Scalar> SelectivityBatch<T> {
    pub fn k(&self) -> usize {
        self.fx.len()
    }
}

/// Per-transition log terms for one base state: rows follow `batch.next`,
/// columns are latent units. Shared by the value path and the policy reward.
pub fn selectivity_terms<T: Scalar>(batch: &SelectivityBatch<T>) -> Vec<Vec<T>> {
    let k = batch.k();
    let shift = T::one() / T::from_f64(k as f64);
    let eps = T::from_f64(RATIO_EPS);
    batch
        .next
        .iter()
        .map(|fxp| {
            let deltas: Vec<T> = fxp.iter().zip(&batch.fx).map(|(a, b)| (*a - *b).abs()).collect();
            let denom: T = deltas.iter().cloned().sum::<T>() + eps;
            deltas.iter().map(|d| (shift + *d / denom).ln()).collect()
        })
        .collect()
}

/// Selectivity of head `k` (0-based): the policy-weighted sum of its column
/// of the log-term table.
pub fn selectivity<T: Scalar>(batch: &SelectivityBatch<T>, k: usize) -> T {
    let terms = selectivity_terms(batch);
    let mut total = T::zero();
    for (a, pa) in batch.probs[k].iter().enumerate() {
        for j in 0..batch.n {
            total += *pa * terms[a * batch.n + j][k];
        }
    }
    total
}

/// Tape nodes produced by [`selectivity_heads`]: the per-head vector that
/// feeds the loss, plus the raw `[K*n, K]` log-term table whose values are
/// the per-action rewards for the policy gradient.
#[derive(Debug, Clone, Copy)]
pub struct SelectivityNodes {
    pub heads: NodeId,
    pub terms: NodeId,
}

/// Tape version of the per-head selectivity vector for one base state.
///
/// `fx` is `[1,K]`, `fx_next` is `[K*n, K]` grouped by action, and `probs`
/// holds the (detached) per-head policy rows. The k-th entry of `heads` is
/// S_k; gradient reaches the encoder through both latent inputs.
pub fn selectivity_heads<T: Scalar>(
    tape: &mut Tape<T>,
    fx: NodeId,
    fx_next: NodeId,
    probs: &[Vec<T>],
    n: usize,
) -> Result<SelectivityNodes> {
    let k = tape.shape(fx)[1];
    let rows = tape.shape(fx_next)[0];
    if rows != k * n {
        return Err(crate::Error::shape(("rows = K*n", k * n), rows));
    }
    let base = tape.broadcast_rows(fx, rows)?;
    let delta = tape.sub(fx_next, base)?;
    let absd = tape.abs(delta);
    let denom = tape.sum_rows(absd)?;
    let denom = tape.add_scalar(denom, T::from_f64(RATIO_EPS));
    let denom = tape.row_broadcast(denom, k)?;
    let ratio = tape.div(absd, denom)?;
    let shifted = tape.add_scalar(ratio, T::one() / T::from_f64(k as f64));
    let terms = tape.log(shifted);
    // Weight matrix: entry (a*n+j, k) carries head k's probability of action a.
    let mut weights = Vec::with_capacity(rows * k);
    for a in 0..k {
        for _ in 0..n {
            for head in 0..k {
                weights.push(probs[head][a]);
            }
        }
    }
    let heads = tape.weighted_col_sum(terms, weights)?;
    Ok(SelectivityNodes { heads, terms })
}

/// Inner selectivity of one head under one action, read off a flat `[K*n, K]`
/// log-term table: `sum_j terms[action*n + j][head]`.
pub fn inner_selectivity<T: Scalar>(
    terms_flat: &[T],
    k: usize,
    head: usize,
    action: usize,
    n: usize,
) -> T {
    (0..n).map(|j| terms_flat[(action * n + j) * k + head]).sum()
}

/// Combine reconstruction and per-head selectivities: `recon - lambda * sum S_k`.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    recon: NodeId,
    selectivities: NodeId,
    lambda: T,
) -> Result<NodeId> {
    let sum = tape.sum_all(selectivities);
    let weighted = tape.scale(sum, -lambda);
    tape.add(recon, weighted)
}

/// One loss-log row.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub step: u64,
    pub recon: f64,
    pub selectivity: Vec<f64>,
    pub total: f64,
}

impl LossReport {
    pub fn csv_header(k: usize) -> String {
        let mut s = String::from("step,recon");
        for i in 1..=k {
            s.push_str(&format!(",s{i}"));
        }
        s.push_str(",total");
        s
    }

    pub fn csv_row(&self) -> String {
        let mut s = format!("{},{}", self.step, self.recon);
        for v in &self.selectivity {
            s.push_str(&format!(",{v}"));
        }
        s.push_str(&format!(",{}", self.total));
        s
    }
}

/// Per-head exponential moving average baseline for the policy gradient.
#[derive(Debug, Clone)]
pub struct ReinforceBaseline<T> {
    values: Vec<Option<T>>,
    decay: T,
}

impl<T: Scalar> ReinforceBaseline<T> {
    pub fn new(k: usize) -> Self {
        ReinforceBaseline {
            values: vec![None; k],
            decay: T::from_f64(0.99),
        }
    }

    /// Baseline to subtract for head `k` right now. Starts at the first
    /// observed reward so early updates are centered.
    pub fn current(&self, k: usize, reward: T) -> T {
        self.values[k].unwrap_or(reward)
    }

    /// Fold the used reward into the average (after use).
    pub fn update(&mut self, k: usize, reward: T) {
        let prev = self.values[k].unwrap_or(reward);
        self.values[k] = Some(self.decay * prev + (T::one() - self.decay) * reward);
    }
}

/// Score-function gradient estimate for one policy head.
///
/// Given that `action` was sampled from softmax(latent . w + b), returns the
/// gradient of `-(reward - baseline) * log pi(action)` with respect to (w, b)
/// - the descent direction that raises the head's expected reward. Callers
/// scale by lambda and batch size when folding into the total-loss gradient.
pub fn reinforce_gradient<T: Scalar>(
    latent: &[T],
    w: &Tensor<T>,
    b: &Tensor<T>,
    action: usize,
    advantage: T,
) -> (Vec<T>, Vec<T>) {
    let k = b.len();
    let logits = kernels::dense_forward(latent, w.data(), b.data(), 1, latent.len(), k);
    let probs = kernels::softmax_rows(&logits, k);
    // d(-adv * log pi(a))/d logits = -adv * (onehot(a) - pi)
    let dlogits: Vec<T> = probs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let onehot = if i == action { T::one() } else { T::zero() };
            -advantage * (onehot - *p)
        })
        .collect();
    let mut dw = vec![T::zero(); latent.len() * k];
    for (i, x) in latent.iter().enumerate() {
        for (j, d) in dlogits.iter().enumerate() {
            dw[i * k + j] = *x * *d;
        }
    }
    (dw, dlogits)
}

/// Sample an action for one head and return (action, reward), the reward
/// being the sampled action's inner selectivity from the log-term table.
pub fn sample_head_reward<T: Scalar>(
    terms_flat: &[T],
    k: usize,
    head: usize,
    probs: &[T],
    n: usize,
    rng: &mut impl Rng,
) -> (usize, T) {
    let action = crate::models::sample_action(probs, rng);
    (action, inner_selectivity(terms_flat, k, head, action, n))
}
