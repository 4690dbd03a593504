//! Model architectures.
//!
//! Every encoder is the same stack: 16@4x4 stride-2 and 16@3x3 stride-2 ReLU
//! convolutions, a 32-unit ReLU dense layer, then a tanh layer of `latent`
//! units (24x24 -> 11 -> 5 spatially). Decoders mirror it exactly and end
//! linear, so two decoded images can sum to reproduce a binary input.
//!
//! Parameter names are flat dotted paths (`enc.conv1.w`, `policy.k3.w`, ...);
//! the two-branch model prefixes its branches with `c.` and `u.`, which is
//! what makes checkpoint transfer from a single-branch model a pure rename.

use rand::Rng;

use crate::kernels;
use crate::params::{he_uniform, ParameterStore};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::Result;

pub const LATENT_K: usize = 4;
pub const CONV1_CH: usize = 16;
pub const CONV2_CH: usize = 16;
pub const FC_WIDTH: usize = 32;
pub const CONV_FLAT: usize = CONV2_CH * 5 * 5; // 400
pub const LSTM_UNITS: usize = 2;

/// Add one encoder's parameters (prefix e.g. `"enc."`) to a store.
fn insert_encoder<T: Scalar>(
    store: &mut ParameterStore<T>,
    prefix: &str,
    latent: usize,
    seed: u64,
) {
    let mut add = |name: String, shape: Vec<usize>, fan_in: usize| {
        store.insert(&name, he_uniform(seed, &name, shape, fan_in)).expect("fresh name");
    };
    add(format!("{prefix}conv1.w"), vec![CONV1_CH, 1, 4, 4], 16);
    add(format!("{prefix}conv2.w"), vec![CONV2_CH, CONV1_CH, 3, 3], CONV1_CH * 9);
    add(format!("{prefix}fc1.w"), vec![CONV_FLAT, FC_WIDTH], CONV_FLAT);
    add(format!("{prefix}fc2.w"), vec![FC_WIDTH, latent], FC_WIDTH);
    for name in ["conv1.b", "conv2.b", "fc1.b", "fc2.b"] {
        let shape = match name {
            "conv1.b" => vec![CONV1_CH],
            "conv2.b" => vec![CONV2_CH],
            "fc1.b" => vec![FC_WIDTH],
            _ => vec![latent],
        };
        store.insert(&format!("{prefix}{name}"), Tensor::zeros(shape)).expect("fresh name");
    }
}

fn insert_decoder<T: Scalar>(
    store: &mut ParameterStore<T>,
    prefix: &str,
    latent: usize,
    seed: u64,
) {
    let mut add = |name: String, shape: Vec<usize>, fan_in: usize| {
        store.insert(&name, he_uniform(seed, &name, shape, fan_in)).expect("fresh name");
    };
    add(format!("{prefix}fc1.w"), vec![latent, FC_WIDTH], latent);
    add(format!("{prefix}fc2.w"), vec![FC_WIDTH, CONV_FLAT], FC_WIDTH);
    add(format!("{prefix}deconv1.w"), vec![CONV2_CH, CONV1_CH, 3, 3], CONV2_CH * 9);
    add(format!("{prefix}deconv2.w"), vec![CONV1_CH, 1, 4, 4], CONV1_CH * 16);
    for (name, width) in [
        ("fc1.b", FC_WIDTH),
        ("fc2.b", CONV_FLAT),
        ("deconv1.b", CONV1_CH),
        ("deconv2.b", 1),
    ] {
        store
            .insert(&format!("{prefix}{name}"), Tensor::zeros(vec![width]))
            .expect("fresh name");
    }
}

fn insert_policy_heads<T: Scalar>(store: &mut ParameterStore<T>, latent: usize, k: usize, seed: u64) {
    for head in 1..=k {
        let wname = format!("policy.k{head}.w");
        store
            .insert(&wname, he_uniform(seed, &wname, vec![latent, k], latent))
            .expect("fresh name");
        store
            .insert(&format!("policy.k{head}.b"), Tensor::zeros(vec![k]))
            .expect("fresh name");
    }
}

/// Encoder forward on the tape. `x` is `[B,1,24,24]`; returns `[B,latent]`.
pub fn encode<T: Scalar>(
    tape: &mut Tape<T>,
    ids: &ParamNodes,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    let p = |n: &str| ids.get(&format!("{prefix}{n}"));
    let h = tape.conv2d(x, p("conv1.w"), p("conv1.b"), 2)?;
    let h = tape.relu(h);
    let h = tape.conv2d(h, p("conv2.w"), p("conv2.b"), 2)?;
    let h = tape.relu(h);
    let batch = tape.shape(h)[0];
    let h = tape.reshape(h, vec![batch, CONV_FLAT])?;
    let h = tape.dense(h, p("fc1.w"), p("fc1.b"))?;
    let h = tape.relu(h);
    let h = tape.dense(h, p("fc2.w"), p("fc2.b"))?;
    Ok(tape.tanh(h))
}

/// Decoder forward on the tape. `z` is `[B,latent]`; returns `[B,1,24,24]`.
pub fn decode<T: Scalar>(
    tape: &mut Tape<T>,
    ids: &ParamNodes,
    prefix: &str,
    z: NodeId,
) -> Result<NodeId> {
    let p = |n: &str| ids.get(&format!("{prefix}{n}"));
    let h = tape.dense(z, p("fc1.w"), p("fc1.b"))?;
    let h = tape.relu(h);
    let h = tape.dense(h, p("fc2.w"), p("fc2.b"))?;
    let h = tape.relu(h);
    let batch = tape.shape(h)[0];
    let h = tape.reshape(h, vec![batch, CONV2_CH, 5, 5])?;
    let h = tape.convt2d(h, p("deconv1.w"), p("deconv1.b"), 2)?;
    let h = tape.relu(h);
    tape.convt2d(h, p("deconv2.w"), p("deconv2.b"), 2)
}

/// Registered tape nodes for a store's parameters.
pub struct ParamNodes {
    map: std::collections::HashMap<String, NodeId>,
}

impl ParamNodes {
    /// Register every parameter whose name starts with one of `prefixes`
    /// (empty list registers everything).
    pub fn register<T: Scalar>(
        tape: &mut Tape<T>,
        store: &ParameterStore<T>,
        prefixes: &[&str],
    ) -> ParamNodes {
        let mut map = std::collections::HashMap::new();
        for (name, tensor) in store.iter() {
            if prefixes.is_empty() || prefixes.iter().any(|p| name.starts_with(p)) {
                map.insert(name.to_string(), tape.param(name, tensor));
            }
        }
        ParamNodes { map }
    }

    pub fn get(&self, name: &str) -> NodeId {
        *self.map.get(name).unwrap_or_else(|| panic!("parameter {name} not registered"))
    }
}

// ----- single-branch model (encoder + decoder + per-latent policies) -------

/// Autoencoder with per-latent action policies. With the selectivity weight
/// at zero it trains as a plain autoencoder; `with_policies` distinguishes
/// the two so checkpoints carry only what the variant uses.
#[derive(Debug, Clone)]
pub struct SingleModel<T> {
    pub params: ParameterStore<T>,
    pub latent: usize,
    pub with_policies: bool,
}

impl<T: Scalar> SingleModel<T> {
    /// The selectivity-trained variant: latent width = action count.
    pub fn thomas(k: usize, seed: u64) -> SingleModel<T> {
        let mut params = ParameterStore::new();
        insert_encoder(&mut params, "enc.", k, seed);
        insert_decoder(&mut params, "dec.", k, seed);
        insert_policy_heads(&mut params, k, k, seed);
        SingleModel { params, latent: k, with_policies: true }
    }

    /// Plain autoencoder with the given latent width.
    pub fn autoencoder(latent: usize, seed: u64) -> SingleModel<T> {
        let mut params = ParameterStore::new();
        insert_encoder(&mut params, "enc.", latent, seed);
        insert_decoder(&mut params, "dec.", latent, seed);
        SingleModel { params, latent, with_policies: false }
    }

    /// Value-only encoder pass over a batch of flat images.
    pub fn encode_values(&self, images: &[f32], batch: usize) -> Vec<T> {
        encoder_values(&self.params, "enc.", images, batch, self.latent)
    }

    /// Value-only decoder pass; returns flat `[batch * 576]` pixels.
    pub fn decode_values(&self, latents: &[T], batch: usize) -> Vec<T> {
        decoder_values(&self.params, "dec.", latents, batch, self.latent)
    }

    /// Per-head action probabilities for one latent vector.
    pub fn policy_probs(&self, latent: &[T]) -> Vec<Vec<T>> {
        policy_probs(&self.params, latent, self.latent)
    }
}

/// Mean action probabilities of head `k` (1-based) from a raw store.
pub fn policy_probs<T: Scalar>(params: &ParameterStore<T>, latent: &[T], k: usize) -> Vec<Vec<T>> {
    (1..=k)
        .map(|head| {
            let w = params.get(&format!("policy.k{head}.w")).expect("policy weight");
            let b = params.get(&format!("policy.k{head}.b")).expect("policy bias");
            let logits = kernels::dense_forward(latent, w.data(), b.data(), 1, latent.len(), k);
            kernels::softmax_rows(&logits, k)
        })
        .collect()
}

// ----- two-branch model -----------------------------------------------------

/// Two encoder/decoder pairs whose decoded images sum to reconstruct the
/// input. Selectivity and the policy heads apply to the `c.` branch only.
#[derive(Debug, Clone)]
pub struct DualModel<T> {
    pub params: ParameterStore<T>,
    pub latent_c: usize,
    pub latent_u: usize,
}

impl<T: Scalar> DualModel<T> {
    pub fn build(k: usize, latent_u: usize, seed: u64) -> DualModel<T> {
        let mut params = ParameterStore::new();
        insert_encoder(&mut params, "c.enc.", k, seed);
        insert_decoder(&mut params, "c.dec.", k, seed);
        insert_encoder(&mut params, "u.enc.", latent_u, seed);
        insert_decoder(&mut params, "u.dec.", latent_u, seed);
        insert_policy_heads(&mut params, k, k, seed);
        DualModel { params, latent_c: k, latent_u }
    }

    pub fn encode_c_values(&self, images: &[f32], batch: usize) -> Vec<T> {
        encoder_values(&self.params, "c.enc.", images, batch, self.latent_c)
    }

    pub fn encode_u_values(&self, images: &[f32], batch: usize) -> Vec<T> {
        encoder_values(&self.params, "u.enc.", images, batch, self.latent_u)
    }

    pub fn decode_c_values(&self, latents: &[T], batch: usize) -> Vec<T> {
        decoder_values(&self.params, "c.dec.", latents, batch, self.latent_c)
    }

    pub fn decode_u_values(&self, latents: &[T], batch: usize) -> Vec<T> {
        decoder_values(&self.params, "u.dec.", latents, batch, self.latent_u)
    }

    pub fn policy_probs(&self, latent_c: &[T]) -> Vec<Vec<T>> {
        policy_probs(&self.params, latent_c, self.latent_c)
    }
}

/// The fixed rename table from single-branch names to two-branch names.
/// Encoder/decoder parameters gain the `c.` branch prefix; policy heads keep
/// their names.
pub fn single_to_dual_name(name: &str) -> Option<String> {
    if name.starts_with("enc.") || name.starts_with("dec.") {
        Some(format!("c.{name}"))
    } else if name.starts_with("policy.") {
        Some(name.to_string())
    } else {
        None
    }
}

/// Copy a trained single-branch checkpoint into the controllable branch of a
/// two-branch model. The copy is exact; the `u.` branch keeps its fresh
/// initialization.
pub fn init_dual_from_pretrained<T: Scalar>(
    dual: &mut DualModel<T>,
    pretrained: &ParameterStore<T>,
) -> Result<()> {
    for (name, tensor) in pretrained.iter() {
        let target = single_to_dual_name(name).ok_or_else(|| {
            crate::Error::Config(format!("checkpoint tensor {name} has no mapping into the dual model"))
        })?;
        dual.params.assign(&target, tensor)?;
    }
    Ok(())
}

// ----- recurrent Q-network ---------------------------------------------------

/// Recurrent Q-network over frozen encoder features.
///
/// Dual route: controllable latent -> 2-unit LSTM, uncontrollable latent ->
/// 2-unit dense, concatenated (4) -> dense -> K Q-values. Single route:
/// latent -> 2-unit LSTM -> dense -> K.
#[derive(Debug, Clone)]
pub struct DrqNet<T> {
    pub params: ParameterStore<T>,
    pub dual_route: bool,
    pub in_c: usize,
    pub in_u: usize,
}

impl<T: Scalar> DrqNet<T> {
    pub fn build(dual_route: bool, in_c: usize, in_u: usize, seed: u64) -> DrqNet<T> {
        let mut params = ParameterStore::new();
        let h = LSTM_UNITS;
        let mut add = |name: &str, shape: Vec<usize>, fan_in: usize| {
            params.insert(name, he_uniform(seed, name, shape, fan_in)).expect("fresh name");
        };
        add("q.lstm.wx", vec![in_c, 4 * h], in_c);
        add("q.lstm.wh", vec![h, 4 * h], h);
        let concat = if dual_route { 2 * h } else { h };
        if dual_route {
            add("q.u.w", vec![in_u, h], in_u);
        }
        add("q.out.w", vec![concat, NUM_ACTIONS_Q], concat);
        params.insert("q.lstm.b", Tensor::zeros(vec![4 * h])).expect("fresh name");
        if dual_route {
            params.insert("q.u.b", Tensor::zeros(vec![h])).expect("fresh name");
        }
        params.insert("q.out.b", Tensor::zeros(vec![NUM_ACTIONS_Q])).expect("fresh name");
        DrqNet { params, dual_route, in_c, in_u }
    }

    /// Zeroed recurrent state for an episode start.
    pub fn zero_state(&self) -> (Vec<T>, Vec<T>) {
        (vec![T::zero(); LSTM_UNITS], vec![T::zero(); LSTM_UNITS])
    }

    /// Value-only step: Q-values for one time step plus the next LSTM state.
    pub fn q_values(
        &self,
        lat_c: &[T],
        lat_u: Option<&[T]>,
        state: &(Vec<T>, Vec<T>),
    ) -> (Vec<T>, (Vec<T>, Vec<T>)) {
        let p = |n: &str| self.params.get(n).expect("q param").data();
        let h = LSTM_UNITS;
        let gx = kernels::dense_forward(lat_c, p("q.lstm.wx"), p("q.lstm.b"), 1, self.in_c, 4 * h);
        let gh = kernels::matmul(&state.0, p("q.lstm.wh"), 1, h, 4 * h);
        let gates: Vec<T> = gx.iter().zip(&gh).map(|(a, b)| *a + *b).collect();
        let sig = |v: T| T::one() / (T::one() + (-v).exp());
        let mut hnew = vec![T::zero(); h];
        let mut cnew = vec![T::zero(); h];
        for u in 0..h {
            let i = sig(gates[u]);
            let f = sig(gates[h + u]);
            let g = gates[2 * h + u].tanh();
            let o = sig(gates[3 * h + u]);
            cnew[u] = f * state.1[u] + i * g;
            hnew[u] = o * cnew[u].tanh();
        }
        let features: Vec<T> = if self.dual_route {
            let u = kernels::dense_forward(
                lat_u.expect("dual route needs the uncontrollable latent"),
                p("q.u.w"),
                p("q.u.b"),
                1,
                self.in_u,
                h,
            );
            hnew.iter().chain(u.iter()).cloned().collect()
        } else {
            hnew.clone()
        };
        let q = kernels::dense_forward(
            &features,
            p("q.out.w"),
            p("q.out.b"),
            1,
            features.len(),
            NUM_ACTIONS_Q,
        );
        (q, (hnew, cnew))
    }

    /// Replay a latent sequence on a tape, producing per-step Q rows
    /// `[T_steps, K]` for the gradient pass. LSTM state starts at zero.
    pub fn unroll(
        &self,
        tape: &mut Tape<T>,
        ids: &ParamNodes,
        lat_c: &[Vec<T>],
        lat_u: Option<&[Vec<T>]>,
    ) -> Result<Vec<NodeId>> {
        let h = LSTM_UNITS;
        let mut hs = tape.constant(Tensor::zeros(vec![1, h]));
        let mut cs = tape.constant(Tensor::zeros(vec![1, h]));
        let mut q_rows = Vec::with_capacity(lat_c.len());
        for (t, lc) in lat_c.iter().enumerate() {
            let x = tape.constant(Tensor::new(vec![1, self.in_c], lc.clone()));
            let (hn, cn) = lstm_step(tape, ids, x, hs, cs)?;
            hs = hn;
            cs = cn;
            let features = if self.dual_route {
                let lu = &lat_u.expect("dual route needs latents")[t];
                let xu = tape.constant(Tensor::new(vec![1, self.in_u], lu.clone()));
                let u = tape.dense(xu, ids.get("q.u.w"), ids.get("q.u.b"))?;
                tape.concat(hs, u, vec![1, 2 * h])?
            } else {
                hs
            };
            let q = tape.dense(features, ids.get("q.out.w"), ids.get("q.out.b"))?;
            q_rows.push(q);
        }
        Ok(q_rows)
    }
}

const NUM_ACTIONS_Q: usize = crate::gridworld::NUM_ACTIONS;

/// One LSTM step from composed primitives (gate order: input, forget, cell,
/// output). Returns the new (h, c) nodes.
pub fn lstm_step<T: Scalar>(
    tape: &mut Tape<T>,
    ids: &ParamNodes,
    x: NodeId,
    h: NodeId,
    c: NodeId,
) -> Result<(NodeId, NodeId)> {
    let units = LSTM_UNITS;
    let gx = tape.dense(x, ids.get("q.lstm.wx"), ids.get("q.lstm.b"))?;
    let gh = tape.matmul(h, ids.get("q.lstm.wh"))?;
    let gates = tape.add(gx, gh)?;
    let part = |tape: &mut Tape<T>, i: usize| tape.slice(gates, i * units, units, vec![1, units]);
    let gi = part(tape, 0)?;
    let gf = part(tape, 1)?;
    let gg = part(tape, 2)?;
    let go = part(tape, 3)?;
    let i = tape.sigmoid(gi);
    let f = tape.sigmoid(gf);
    let g = tape.tanh(gg);
    let o = tape.sigmoid(go);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let cn = tape.add(fc, ig)?;
    let ct = tape.tanh(cn);
    let hn = tape.mul(o, ct)?;
    Ok((hn, cn))
}

// ----- value-only forward passes ----------------------------------------------

fn encoder_values<T: Scalar>(
    params: &ParameterStore<T>,
    prefix: &str,
    images: &[f32],
    batch: usize,
    latent: usize,
) -> Vec<T> {
    let p = |n: &str| params.get(&format!("{prefix}{n}")).expect("encoder param").data();
    let x: Vec<T> = images.iter().map(|&v| T::from_f32(v)).collect();
    let mut h = kernels::conv2d_forward(&x, p("conv1.w"), p("conv1.b"), batch, 1, 24, 24, CONV1_CH, 4, 4, 2);
    relu_inplace(&mut h);
    let mut h = kernels::conv2d_forward(&h, p("conv2.w"), p("conv2.b"), batch, CONV1_CH, 11, 11, CONV2_CH, 3, 3, 2);
    relu_inplace(&mut h);
    let mut h = kernels::dense_forward(&h, p("fc1.w"), p("fc1.b"), batch, CONV_FLAT, FC_WIDTH);
    relu_inplace(&mut h);
    let mut z = kernels::dense_forward(&h, p("fc2.w"), p("fc2.b"), batch, FC_WIDTH, latent);
    for v in &mut z {
        *v = v.tanh();
    }
    z
}

fn decoder_values<T: Scalar>(
    params: &ParameterStore<T>,
    prefix: &str,
    latents: &[T],
    batch: usize,
    latent: usize,
) -> Vec<T> {
    let p = |n: &str| params.get(&format!("{prefix}{n}")).expect("decoder param").data();
    let mut h = kernels::dense_forward(latents, p("fc1.w"), p("fc1.b"), batch, latent, FC_WIDTH);
    relu_inplace(&mut h);
    let mut h = kernels::dense_forward(&h, p("fc2.w"), p("fc2.b"), batch, FC_WIDTH, CONV_FLAT);
    relu_inplace(&mut h);
    let mut h = kernels::convt2d_forward(&h, p("deconv1.w"), p("deconv1.b"), batch, CONV2_CH, 5, 5, CONV1_CH, 3, 3, 2);
    relu_inplace(&mut h);
    kernels::convt2d_forward(&h, p("deconv2.w"), p("deconv2.b"), batch, CONV1_CH, 11, 11, 1, 4, 4, 2)
}

fn relu_inplace<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Sample an action index from a probability row.
pub fn sample_action<T: Scalar>(probs: &[T], rng: &mut impl Rng) -> usize {
    let draw = T::from_f64(rng.gen::<f64>());
    let mut acc = T::zero();
    for (i, p) in probs.iter().enumerate() {
        acc += *p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Convenience for tests: a deterministic latent-width seed check.
pub fn uncontrollable_latent_width(scenario: crate::gridworld::Scenario) -> usize {
    match scenario {
        crate::gridworld::Scenario::Situation2 => 20,
        _ => LATENT_K,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{Gridworld, Scenario};

    #[test]
    fn parameter_counts_match_closed_form() {
        // Encoder: conv1 16*1*4*4+16, conv2 16*16*3*3+16, fc1 400*32+32, fc2 32*4+4.
        let enc = 272 + 2320 + 12832 + 132;
        // Decoder: fc1 4*32+32, fc2 32*400+400, deconv1 16*16*3*3+16, deconv2 16*1*4*4+1.
        let dec = 160 + 13200 + 2320 + 257;
        let policies = 4 * (4 * 4 + 4);
        let thomas = SingleModel::<f32>::thomas(4, 0);
        assert_eq!(thomas.params.count_values(), enc + dec + policies);

        let ae = SingleModel::<f32>::autoencoder(4, 0);
        assert_eq!(ae.params.count_values(), enc + dec);

        // Situation-2 uncontrollable branch: latent 20 changes fc2/dec.fc1.
        let dual = DualModel::<f32>::build(4, 20, 0);
        let enc20 = 272 + 2320 + 12832 + (32 * 20 + 20);
        let dec20 = (20 * 32 + 32) + 13200 + 2320 + 257;
        assert_eq!(dual.params.count_values(), enc + dec + policies + enc20 + dec20);
    }

    #[test]
    fn encode_latent_is_in_tanh_range() {
        let gw = Gridworld::new(Scenario::Situation1);
        let img = gw.render(&gw.initial_state(0));
        let model = SingleModel::<f32>::thomas(4, 1);
        let z = model.encode_values(&img, 1);
        assert_eq!(z.len(), 4);
        for v in z {
            assert!(v > -1.0 && v < 1.0);
        }
    }

    #[test]
    fn decode_produces_image_shape() {
        let model = SingleModel::<f32>::thomas(4, 1);
        let img = model.decode_values(&[0.1, -0.2, 0.3, 0.0], 1);
        assert_eq!(img.len(), 576);
    }

    #[test]
    fn policy_rows_sum_to_one() {
        let model = SingleModel::<f32>::thomas(4, 2);
        let probs = model.policy_probs(&[0.5, -0.5, 0.25, 0.0]);
        assert_eq!(probs.len(), 4);
        for row in probs {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn dual_uses_configured_uncontrollable_width() {
        assert_eq!(uncontrollable_latent_width(Scenario::Situation1), 4);
        assert_eq!(uncontrollable_latent_width(Scenario::Situation2), 20);
        let dual = DualModel::<f32>::build(4, 20, 3);
        let gw = Gridworld::new(Scenario::Situation2);
        let img = gw.render(&gw.initial_state(0));
        assert_eq!(dual.encode_u_values(&img, 1).len(), 20);
        assert_eq!(dual.encode_c_values(&img, 1).len(), 4);
    }

    #[test]
    fn pretrained_copy_is_bitwise_and_leaves_u_branch_fresh() {
        let thomas = SingleModel::<f32>::thomas(4, 7);
        let mut dual = DualModel::<f32>::build(4, 4, 8);
        let fresh_u = dual.params.get("u.enc.conv1.w").unwrap().clone();
        init_dual_from_pretrained(&mut dual, &thomas.params).unwrap();
        for (name, tensor) in thomas.params.iter() {
            let mapped = single_to_dual_name(name).unwrap();
            let copied = dual.params.get(&mapped).unwrap();
            assert_eq!(copied.data(), tensor.data(), "{name} -> {mapped}");
        }
        assert_eq!(dual.params.get("u.enc.conv1.w").unwrap(), &fresh_u);
    }

    #[test]
    fn pretrained_forward_equivalence() {
        // After the copy, the controllable branch must reproduce the single
        // model's full forward pass exactly on arbitrary images.
        let thomas = SingleModel::<f32>::thomas(4, 17);
        let mut dual = DualModel::<f32>::build(4, 4, 18);
        init_dual_from_pretrained(&mut dual, &thomas.params).unwrap();
        let gw = Gridworld::new(Scenario::Situation1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        use rand::SeedableRng;
        for _ in 0..5 {
            let img = gw.render(&gw.random_state(&mut rng));
            let z1 = thomas.encode_values(&img, 1);
            let z2 = dual.encode_c_values(&img, 1);
            assert_eq!(z1, z2);
            let x1 = thomas.decode_values(&z1, 1);
            let x2 = dual.decode_c_values(&z2, 1);
            assert_eq!(x1, x2);
        }
    }

    #[test]
    fn drqn_shapes_and_state_reset() {
        let q = DrqNet::<f32>::build(true, 4, 4, 5);
        let z = q.zero_state();
        let (qv, s1) = q.q_values(&[0.1, 0.2, -0.1, 0.0], Some(&[0.5, 0.5, 0.0, -0.5]), &z);
        assert_eq!(qv.len(), 4);
        // Starting again from the zero state gives the same output regardless
        // of what a previous episode did to s1.
        let (qv2, _) = q.q_values(&[0.1, 0.2, -0.1, 0.0], Some(&[0.5, 0.5, 0.0, -0.5]), &z);
        assert_eq!(qv, qv2);
        assert_ne!(s1.0, z.0);
    }

    #[test]
    fn drqn_unroll_matches_value_path() {
        let q = DrqNet::<f64>::build(true, 4, 4, 9);
        let lat_c: Vec<Vec<f64>> = vec![vec![0.1, -0.3, 0.2, 0.05], vec![0.0, 0.4, -0.2, 0.1]];
        let lat_u: Vec<Vec<f64>> = vec![vec![0.3, 0.1, -0.1, 0.0], vec![-0.2, 0.2, 0.1, 0.4]];
        // Value path.
        let mut state = q.zero_state();
        let mut want = Vec::new();
        for t in 0..2 {
            let (qv, s) = q.q_values(&lat_c[t], Some(&lat_u[t]), &state);
            state = s;
            want.push(qv);
        }
        // Tape path.
        let mut tape = Tape::new();
        let ids = ParamNodes::register(&mut tape, &q.params, &[]);
        let rows = q.unroll(&mut tape, &ids, &lat_c, Some(&lat_u)).unwrap();
        for (row, want_row) in rows.iter().zip(&want) {
            for (a, b) in tape.value(*row).data().iter().zip(want_row) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
