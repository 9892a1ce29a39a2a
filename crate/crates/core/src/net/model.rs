use std::sync::Arc;

use super::linalg::{affine, axpy, dot, gemv_acc, gemv_t_acc, outer_acc, sigmoid, softmax};
use super::params::{GruSpec, LinearSpec, NetConfig, NetworkParameters, ParamLayout};
use crate::env::{JointState, HUMAN_OBS_DIM};
use crate::error::{Error, Result};

fn slice(p: &[f64], offset: usize, len: usize) -> &[f64] {
    &p[offset..offset + len]
}

/// Activations of one GRU step kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct GruCache {
    x: Vec<f64>,
    h: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    rh: Vec<f64>,
    out: Vec<f64>,
}

fn gru_forward(p: &[f64], s: &GruSpec, x: &[f64], h: &[f64]) -> GruCache {
    let (n_in, n_h) = (s.input, s.hidden);
    let (wi, wh) = (n_h * n_in, n_h * n_h);
    let mut z = vec![0.0; n_h];
    let mut r = vec![0.0; n_h];
    let mut cand = vec![0.0; n_h];
    affine(slice(p, s.w_z, wi), slice(p, s.b_z, n_h), x, &mut z);
    gemv_acc(slice(p, s.u_z, wh), h, &mut z);
    affine(slice(p, s.w_r, wi), slice(p, s.b_r, n_h), x, &mut r);
    gemv_acc(slice(p, s.u_r, wh), h, &mut r);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));
    r.iter_mut().for_each(|v| *v = sigmoid(*v));
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    affine(slice(p, s.w_h, wi), slice(p, s.b_h, n_h), x, &mut cand);
    gemv_acc(slice(p, s.u_h, wh), &rh, &mut cand);
    cand.iter_mut().for_each(|v| *v = v.tanh());
    let out = (0..n_h)
        .map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i])
        .collect();
    GruCache {
        x: x.to_vec(),
        h: h.to_vec(),
        z,
        r,
        cand,
        rh,
        out,
    }
}

/// Accumulates parameter gradients of one GRU step given `d_out`; returns
/// the gradient with respect to the incoming hidden state.
fn gru_backward(p: &[f64], g: &mut [f64], s: &GruSpec, c: &GruCache, d_out: &[f64]) -> Vec<f64> {
    let (n_in, n_h) = (s.input, s.hidden);
    let (wi, wh) = (n_h * n_in, n_h * n_h);
    let mut d_h: Vec<f64> = (0..n_h).map(|i| d_out[i] * (1.0 - c.z[i])).collect();
    let d_cand_pre: Vec<f64> = (0..n_h)
        .map(|i| d_out[i] * c.z[i] * (1.0 - c.cand[i] * c.cand[i]))
        .collect();
    let d_z_pre: Vec<f64> = (0..n_h)
        .map(|i| d_out[i] * (c.cand[i] - c.h[i]) * c.z[i] * (1.0 - c.z[i]))
        .collect();

    outer_acc(&mut g[s.w_h..s.w_h + wi], &d_cand_pre, &c.x);
    outer_acc(&mut g[s.u_h..s.u_h + wh], &d_cand_pre, &c.rh);
    axpy(1.0, &d_cand_pre, &mut g[s.b_h..s.b_h + n_h]);
    let mut d_rh = vec![0.0; n_h];
    gemv_t_acc(slice(p, s.u_h, wh), &d_cand_pre, &mut d_rh);
    let d_r_pre: Vec<f64> = (0..n_h)
        .map(|i| d_rh[i] * c.h[i] * c.r[i] * (1.0 - c.r[i]))
        .collect();
    for i in 0..n_h {
        d_h[i] += d_rh[i] * c.r[i];
    }

    outer_acc(&mut g[s.w_z..s.w_z + wi], &d_z_pre, &c.x);
    outer_acc(&mut g[s.u_z..s.u_z + wh], &d_z_pre, &c.h);
    axpy(1.0, &d_z_pre, &mut g[s.b_z..s.b_z + n_h]);
    gemv_t_acc(slice(p, s.u_z, wh), &d_z_pre, &mut d_h);

    outer_acc(&mut g[s.w_r..s.w_r + wi], &d_r_pre, &c.x);
    outer_acc(&mut g[s.u_r..s.u_r + wh], &d_r_pre, &c.h);
    axpy(1.0, &d_r_pre, &mut g[s.b_r..s.b_r + n_h]);
    gemv_t_acc(slice(p, s.u_r, wh), &d_r_pre, &mut d_h);
    d_h
}

/// A GRU layer with its own parameters: update gate `z`, reset gate `r`,
/// candidate `tanh(W_h x + U_h (r * h) + b_h)`, and output
/// `(1 - z) * h + z * candidate`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer {
    data: Vec<f64>,
    spec: GruSpec,
}

impl GruLayer {
    /// Matrices are row-major `hidden x input` (`W_*`) and `hidden x hidden`
    /// (`U_*`).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        input: usize,
        hidden: usize,
        w: [&[f64]; 3],
        u: [&[f64]; 3],
        b: [&[f64]; 3],
    ) -> Self {
        let mut data = Vec::new();
        let mut push = |t: &[f64], len: usize| {
            assert_eq!(t.len(), len, "GRU tensor size");
            let at = data.len();
            data.extend_from_slice(t);
            at
        };
        let (wi, wh) = (hidden * input, hidden * hidden);
        let spec = GruSpec {
            input,
            hidden,
            w_z: push(w[0], wi),
            w_r: push(w[1], wi),
            w_h: push(w[2], wi),
            u_z: push(u[0], wh),
            u_r: push(u[1], wh),
            u_h: push(u[2], wh),
            b_z: push(b[0], hidden),
            b_r: push(b[1], hidden),
            b_h: push(b[2], hidden),
        };
        GruLayer { data, spec }
    }

    /// One of the network's GRU layers, copied out.
    pub fn from_network(params: &NetworkParameters, spec: &GruSpec) -> Self {
        let (wi, wh, h) = (
            spec.hidden * spec.input,
            spec.hidden * spec.hidden,
            spec.hidden,
        );
        let d = params.data();
        GruLayer::new(
            spec.input,
            h,
            [
                slice(d, spec.w_z, wi),
                slice(d, spec.w_r, wi),
                slice(d, spec.w_h, wi),
            ],
            [
                slice(d, spec.u_z, wh),
                slice(d, spec.u_r, wh),
                slice(d, spec.u_h, wh),
            ],
            [
                slice(d, spec.b_z, h),
                slice(d, spec.b_r, h),
                slice(d, spec.b_h, h),
            ],
        )
    }

    pub fn cell(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.spec.input);
        assert_eq!(h.len(), self.spec.hidden);
        gru_forward(&self.data, &self.spec, x, h).out
    }
}

pub fn gru_cell(layer: &GruLayer, x: &[f64], h: &[f64]) -> Vec<f64> {
    layer.cell(x, h)
}

#[derive(Clone, Debug, Default)]
struct MlpCache {
    /// `acts[0]` is the input, `acts[k]` the (post-activation) output of layer `k - 1`.
    acts: Vec<Vec<f64>>,
}

fn mlp_forward(p: &[f64], layers: &[LinearSpec], relu_last: bool, input: &[f64]) -> MlpCache {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input.to_vec());
    for (k, l) in layers.iter().enumerate() {
        let mut out = vec![0.0; l.output];
        affine(&p[l.weight_range()], &p[l.bias_range()], &acts[k], &mut out);
        if k + 1 < layers.len() || relu_last {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        acts.push(out);
    }
    MlpCache { acts }
}

fn mlp_eval(p: &[f64], layers: &[LinearSpec], relu_last: bool, input: &[f64]) -> Vec<f64> {
    let mut cur = input.to_vec();
    for (k, l) in layers.iter().enumerate() {
        let mut out = vec![0.0; l.output];
        affine(&p[l.weight_range()], &p[l.bias_range()], &cur, &mut out);
        if k + 1 < layers.len() || relu_last {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        cur = out;
    }
    cur
}

/// Accumulates gradients; returns the gradient with respect to the input.
fn mlp_backward(
    p: &[f64],
    g: &mut [f64],
    layers: &[LinearSpec],
    relu_last: bool,
    c: &MlpCache,
    d_out: &[f64],
) -> Vec<f64> {
    let mut d = d_out.to_vec();
    for k in (0..layers.len()).rev() {
        let l = &layers[k];
        if k + 1 < layers.len() || relu_last {
            for (di, &a) in d.iter_mut().zip(&c.acts[k + 1]) {
                if a <= 0.0 {
                    *di = 0.0;
                }
            }
        }
        outer_acc(&mut g[l.weight_range()], &d, &c.acts[k]);
        axpy(1.0, &d, &mut g[l.bias_range()]);
        let mut d_in = vec![0.0; l.input];
        gemv_t_acc(&p[l.weight_range()], &d, &mut d_in);
        d = d_in;
    }
    d
}

const F_RELU_LAST: bool = true;
const TAU_RELU_LAST: bool = false;
const THETA_RELU_LAST: bool = true;

/// Per-human `[forward ; backward]` hidden states of the bi-directional GRU,
/// both directions starting from a zero state.
pub fn encode_humans(params: &NetworkParameters, humans: &[[f64; HUMAN_OBS_DIM]]) -> Vec<Vec<f64>> {
    let layout = params.layout();
    let (fwd, bwd) = human_scan(params.data(), layout, humans);
    fwd.iter()
        .zip(&bwd)
        .map(|(f, b)| [f.out.as_slice(), b.out.as_slice()].concat())
        .collect()
}

/// Returns per-human forward caches and per-human backward caches (indexed
/// by human, although the backward direction runs last-to-first).
fn human_scan(
    p: &[f64],
    layout: &ParamLayout,
    humans: &[[f64; HUMAN_OBS_DIM]],
) -> (Vec<GruCache>, Vec<GruCache>) {
    let h = layout.config.hidden;
    let n = humans.len();
    let mut fwd = Vec::with_capacity(n);
    let mut state = vec![0.0; h];
    for x in humans {
        let c = gru_forward(p, &layout.human_fwd, x, &state);
        state.clone_from(&c.out);
        fwd.push(c);
    }
    let mut bwd: Vec<GruCache> = vec![GruCache::default(); n];
    state = vec![0.0; h];
    for i in (0..n).rev() {
        let c = gru_forward(p, &layout.human_bwd, &humans[i], &state);
        state.clone_from(&c.out);
        bwd[i] = c;
    }
    (fwd, bwd)
}

/// One robot-GRU step. The output feature is the new hidden state, which the
/// caller carries to the next time step.
pub fn encode_robot(
    params: &NetworkParameters,
    s_r: &[f64],
    h_prev: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let out = gru_forward(params.data(), &params.layout().robot, s_r, h_prev).out;
    (out.clone(), out)
}

/// Softmax attention over pairwise features. An empty crowd pools to zero.
pub fn attention_pool(
    params: &NetworkParameters,
    robot_feature: &[f64],
    codes: &[Vec<f64>],
) -> (Vec<f64>, Vec<f64>) {
    let p = params.data();
    let layout = params.layout();
    let mut crowd = vec![0.0; layout.config.crowd_feature_dim()];
    if codes.is_empty() {
        return (crowd, Vec::new());
    }
    let mut feats = Vec::with_capacity(codes.len());
    let mut logits = Vec::with_capacity(codes.len());
    for code in codes {
        let pair = [robot_feature, code.as_slice()].concat();
        feats.push(mlp_eval(p, &layout.mlp_f, F_RELU_LAST, &pair));
        logits.push(mlp_eval(p, &layout.mlp_tau, TAU_RELU_LAST, &pair)[0]);
    }
    let weights = softmax(&logits);
    for (w, f) in weights.iter().zip(&feats) {
        axpy(*w, f, &mut crowd);
    }
    (crowd, weights)
}

/// Intermediate activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    layout: Arc<ParamLayout>,
    robot: GruCache,
    human_fwd: Vec<GruCache>,
    human_bwd: Vec<GruCache>,
    f: Vec<MlpCache>,
    tau: Vec<MlpCache>,
    /// Attention logits.
    pub logits_tau: Vec<f64>,
    /// Softmax attention weights.
    pub weights: Vec<f64>,
    /// Pooled crowd feature.
    pub crowd: Vec<f64>,
    theta: MlpCache,
    pub q: Vec<f64>,
    pub policy: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub value: f64,
    pub policy: Vec<f64>,
    pub h_next: Vec<f64>,
    pub trace: ForwardTrace,
}

fn check_finite(params: &NetworkParameters, location: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric {
            location: location.to_string(),
            snapshot: params.fingerprint(),
        })
    }
}

fn check_inputs(
    params: &NetworkParameters,
    joint: &JointState,
    humans: &[[f64; HUMAN_OBS_DIM]],
    h_prev: &[f64],
) -> Result<()> {
    check_finite(params, "robot observation", &joint.robot_features())?;
    check_finite(params, "robot memory", h_prev)?;
    humans
        .iter()
        .try_for_each(|h| check_finite(params, "human observation", h))
}

/// Full forward pass with trace. `h_prev` is the robot memory going in.
pub fn forward(
    params: &NetworkParameters,
    joint: &JointState,
    h_prev: &[f64],
) -> Result<ForwardOutput> {
    forward_with_layout(params, params.layout_arc(), joint, h_prev)
}

fn forward_with_layout(
    params: &NetworkParameters,
    layout: Arc<ParamLayout>,
    joint: &JointState,
    h_prev: &[f64],
) -> Result<ForwardOutput> {
    let p = params.data();
    let cfg = &layout.config;
    assert_eq!(h_prev.len(), cfg.hidden, "robot memory width");
    let humans = joint.human_features();
    check_inputs(params, joint, &humans, h_prev)?;
    let robot = gru_forward(p, &layout.robot, &joint.robot_features(), h_prev);
    let (human_fwd, human_bwd) = human_scan(p, &layout, &humans);

    let n = humans.len();
    let mut f = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    let mut logits_tau = Vec::with_capacity(n);
    for i in 0..n {
        let pair = [robot.out.as_slice(), &human_fwd[i].out, &human_bwd[i].out].concat();
        f.push(mlp_forward(p, &layout.mlp_f, F_RELU_LAST, &pair));
        let t = mlp_forward(p, &layout.mlp_tau, TAU_RELU_LAST, &pair);
        logits_tau.push(t.acts.last().unwrap()[0]);
        tau.push(t);
    }
    let weights = if n > 0 {
        softmax(&logits_tau)
    } else {
        Vec::new()
    };
    let mut crowd = vec![0.0; cfg.crowd_feature_dim()];
    for (w, c) in weights.iter().zip(&f) {
        axpy(*w, c.acts.last().unwrap(), &mut crowd);
    }

    let theta_in = [crowd.as_slice(), &robot.out].concat();
    let theta = mlp_forward(p, &layout.mlp_theta, THETA_RELU_LAST, &theta_in);
    let q = theta.acts.last().unwrap().clone();
    let vh = &layout.value_head;
    let value = p[vh.bias] + dot(&p[vh.weight_range()], &q);
    let ph = &layout.policy_head;
    let mut logits = vec![0.0; ph.output];
    affine(&p[ph.weight_range()], &p[ph.bias_range()], &q, &mut logits);
    let policy = softmax(&logits);
    check_finite(params, "value head", &[value])?;
    check_finite(params, "policy head", &policy)?;

    let h_next = robot.out.clone();
    Ok(ForwardOutput {
        value,
        policy: policy.clone(),
        h_next,
        trace: ForwardTrace {
            layout,
            robot,
            human_fwd,
            human_bwd,
            f,
            tau,
            logits_tau,
            weights,
            crowd,
            theta,
            q,
            policy,
        },
    })
}

/// Value estimate only, without trace or policy head.
pub fn value_only(params: &NetworkParameters, joint: &JointState, h_prev: &[f64]) -> Result<f64> {
    let p = params.data();
    let layout = params.layout();
    let humans = joint.human_features();
    check_inputs(params, joint, &humans, h_prev)?;
    let robot = gru_forward(p, &layout.robot, &joint.robot_features(), h_prev).out;
    let codes: Vec<Vec<f64>> = if humans.is_empty() {
        Vec::new()
    } else {
        let (fwd, bwd) = human_scan(p, layout, &humans);
        fwd.iter()
            .zip(&bwd)
            .map(|(a, b)| [a.out.as_slice(), &b.out].concat())
            .collect()
    };
    let (crowd, _) = attention_pool(params, &robot, &codes);
    let q = mlp_eval(
        p,
        &layout.mlp_theta,
        THETA_RELU_LAST,
        &[crowd.as_slice(), &robot].concat(),
    );
    let vh = &layout.value_head;
    let value = p[vh.bias] + dot(&p[vh.weight_range()], &q);
    check_finite(params, "value head", &[value])?;
    Ok(value)
}

/// Gradients of `d_value * V + d_policy . pi` with respect to every
/// parameter.
pub fn backward(
    params: &NetworkParameters,
    trace: &ForwardTrace,
    d_value: f64,
    d_policy: &[f64],
) -> NetworkParameters {
    let pi = &trace.policy;
    assert_eq!(d_policy.len(), pi.len());
    let mean = dot(pi, d_policy);
    let any = d_policy.iter().any(|&d| d != 0.0);
    let d_logits: Vec<f64> = pi
        .iter()
        .zip(d_policy)
        .map(|(p, d)| p * (d - mean))
        .collect();
    let mut grads = params.zeros_like();
    accumulate_gradients(
        params,
        trace,
        d_value,
        any.then_some(d_logits.as_slice()),
        &mut grads,
    );
    grads
}

/// Adds the gradients of `d_value * V + d_logits . logits` into `grads`.
/// With `d_logits = None` the policy head is not part of the graph.
pub fn accumulate_gradients(
    params: &NetworkParameters,
    trace: &ForwardTrace,
    d_value: f64,
    d_logits: Option<&[f64]>,
    grads: &mut NetworkParameters,
) {
    let layout = trace.layout.as_ref();
    let cfg: &NetConfig = &layout.config;
    let hid = cfg.hidden;
    let p = params.data();
    let g = grads.data_mut();

    let vh = &layout.value_head;
    let mut d_q = vec![0.0; vh.input];
    if d_value != 0.0 {
        axpy(d_value, &trace.q, &mut g[vh.weight_range()]);
        g[vh.bias] += d_value;
        axpy(d_value, &p[vh.weight_range()], &mut d_q);
    }
    if let Some(dl) = d_logits {
        let ph = &layout.policy_head;
        outer_acc(&mut g[ph.weight_range()], dl, &trace.q);
        axpy(1.0, dl, &mut g[ph.bias_range()]);
        gemv_t_acc(&p[ph.weight_range()], dl, &mut d_q);
    }
    if d_q.iter().all(|&v| v == 0.0) {
        return;
    }

    let d_theta_in = mlp_backward(p, g, &layout.mlp_theta, THETA_RELU_LAST, &trace.theta, &d_q);
    let crowd_dim = cfg.crowd_feature_dim();
    let d_crowd = &d_theta_in[..crowd_dim];
    let mut d_robot: Vec<f64> = d_theta_in[crowd_dim..].to_vec();

    let n = trace.weights.len();
    if n > 0 {
        // attention: c = sum_i w_i f_i, w = softmax(tau)
        let d_w: Vec<f64> = trace
            .f
            .iter()
            .map(|c| dot(d_crowd, c.acts.last().unwrap()))
            .collect();
        let s = dot(&trace.weights, &d_w);
        let mut d_codes_fwd = vec![vec![0.0; hid]; n];
        let mut d_codes_bwd = vec![vec![0.0; hid]; n];
        for i in 0..n {
            let w = trace.weights[i];
            let d_f: Vec<f64> = d_crowd.iter().map(|d| d * w).collect();
            let d_tau = w * (d_w[i] - s);
            let mut d_pair = mlp_backward(p, g, &layout.mlp_f, F_RELU_LAST, &trace.f[i], &d_f);
            let d_pair_tau = mlp_backward(
                p,
                g,
                &layout.mlp_tau,
                TAU_RELU_LAST,
                &trace.tau[i],
                &[d_tau],
            );
            axpy(1.0, &d_pair_tau, &mut d_pair);
            axpy(1.0, &d_pair[..hid], &mut d_robot);
            d_codes_fwd[i].copy_from_slice(&d_pair[hid..2 * hid]);
            d_codes_bwd[i].copy_from_slice(&d_pair[2 * hid..3 * hid]);
        }
        // forward direction: h_i depends on h_{i-1}
        let mut carry = vec![0.0; hid];
        for i in (0..n).rev() {
            let d_out: Vec<f64> = d_codes_fwd[i]
                .iter()
                .zip(&carry)
                .map(|(a, b)| a + b)
                .collect();
            carry = gru_backward(p, g, &layout.human_fwd, &trace.human_fwd[i], &d_out);
        }
        // backward direction: h_i depends on h_{i+1}
        carry = vec![0.0; hid];
        for i in 0..n {
            let d_out: Vec<f64> = d_codes_bwd[i]
                .iter()
                .zip(&carry)
                .map(|(a, b)| a + b)
                .collect();
            carry = gru_backward(p, g, &layout.human_bwd, &trace.human_bwd[i], &d_out);
        }
    }

    gru_backward(p, g, &layout.robot, &trace.robot, &d_robot);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{HumanObservation, RobotFrame, RobotObservation};
    use crate::geom::Vec2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_joint(rng: &mut ChaCha8Rng, n: usize) -> JointState {
        random_joint_scaled(rng, n, 4.0)
    }

    /// Humans within `+-extent` of the robot, goal up to `2 * extent` away.
    fn random_joint_scaled(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> JointState {
        let humans = (0..n)
            .map(|index| {
                let p = Vec2::new(
                    rng.gen_range(-extent..extent),
                    rng.gen_range(-extent..extent),
                );
                let r = rng.gen_range(0.2..0.6);
                HumanObservation {
                    p,
                    v: Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                    r,
                    d_i: p.length(),
                    r_sum: r + 0.3,
                    index,
                }
            })
            .collect();
        JointState {
            robot: RobotObservation {
                d_g: rng.gen_range(0.5..2.0 * extent),
                v_r: Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                r_r: 0.3,
                v_max: 1.0,
            },
            humans,
            frame: RobotFrame {
                origin: Vec2::ZERO,
                angle: 0.0,
            },
        }
    }

    fn random_params(cfg: NetConfig, seed: u64) -> NetworkParameters {
        let mut p = NetworkParameters::init(cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for v in p.data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
        p
    }

    #[test]
    fn zero_gru_stays_at_zero() {
        let z = [0.0; 1];
        let layer = GruLayer::new(1, 1, [&z, &z, &z], [&z, &z, &z], [&z, &z, &z]);
        assert_eq!(layer.cell(&[0.7], &[0.0]), vec![0.0]);
    }

    #[test]
    fn scalar_gru_open_update_gate() {
        // z = sigmoid(60) == 1 to double precision
        let layer = GruLayer::new(
            1,
            1,
            [&[0.0], &[0.0], &[1.0]],
            [&[0.0], &[0.0], &[0.0]],
            [&[60.0], &[0.0], &[0.0]],
        );
        let h = layer.cell(&[0.5], &[0.0]);
        assert!((h[0] - 0.5f64.tanh()).abs() < 1e-12);
        assert!((h[0] - 0.462117).abs() < 1e-6);
    }

    #[test]
    fn closed_update_gate_copies_state() {
        let layer = GruLayer::new(
            1,
            1,
            [&[0.0], &[0.3], &[2.0]],
            [&[0.0], &[0.1], &[0.5]],
            [&[-800.0], &[0.0], &[0.1]],
        );
        assert_eq!(layer.cell(&[0.9], &[0.25]), vec![0.25]);
    }

    #[test]
    fn bigru_reversal_symmetry() {
        let params = random_params(NetConfig::default(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let humans = random_joint(&mut rng, 4).human_features();
        let mut reversed = humans.clone();
        reversed.reverse();
        let a = encode_humans(&params, &humans);
        let b = encode_humans(&params, &reversed);
        assert!(encode_humans(&params, &[]).is_empty());
        // the two directions have distinct weights, so compare each direction against a
        // network with the two directions swapped
        let mut swapped = params.clone();
        for name in [
            "W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h",
        ] {
            let f = params
                .tensor(&format!("human_gru.fwd.{name}"))
                .unwrap()
                .to_vec();
            let bw = params
                .tensor(&format!("human_gru.bwd.{name}"))
                .unwrap()
                .to_vec();
            swapped
                .tensor_mut(&format!("human_gru.fwd.{name}"))
                .unwrap()
                .copy_from_slice(&bw);
            swapped
                .tensor_mut(&format!("human_gru.bwd.{name}"))
                .unwrap()
                .copy_from_slice(&f);
        }
        let c = encode_humans(&swapped, &reversed);
        for i in 0..4 {
            assert_eq!(a[i].len(), 40);
            assert_eq!(c[3 - i][..20], a[i][20..]);
            assert_eq!(c[3 - i][20..], a[i][..20]);
        }
        assert_ne!(a[0], b[3]);
    }

    #[test]
    fn attention_weights_sum_to_one() {
        let params = random_params(NetConfig::default(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s_r: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let code: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, w) = attention_pool(&params, &s_r, &[code.clone(), code.clone()]);
        assert_eq!(w, vec![0.5, 0.5]);
        let (c1, w1) = attention_pool(&params, &s_r, std::slice::from_ref(&code));
        assert_eq!(w1, vec![1.0]);
        let pair = [s_r.as_slice(), &code].concat();
        let f = mlp_eval(params.data(), &params.layout().mlp_f, F_RELU_LAST, &pair);
        assert_eq!(c1, f);
        let (c0, w0) = attention_pool(&params, &s_r, &[]);
        assert!(w0.is_empty() && c0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn value_only_matches_forward() {
        let params = random_params(NetConfig::default(), 11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [0, 1, 6] {
            let joint = random_joint(&mut rng, n);
            let h: Vec<f64> = (0..20).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let full = forward(&params, &joint, &h).unwrap();
            let v = value_only(&params, &joint, &h).unwrap();
            assert!((full.value - v).abs() < 1e-12, "n = {n}");
            assert!((full.policy.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_cotangents_give_zero_gradients() {
        let params = random_params(NetConfig::default(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let joint = random_joint(&mut rng, 3);
        let out = forward(&params, &joint, &[0.0; 20]).unwrap();
        let g = backward(&params, &out.trace, 0.0, &vec![0.0; 81]);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn value_loss_leaves_policy_head_untouched() {
        let params = random_params(NetConfig::default(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let joint = random_joint(&mut rng, 3);
        let out = forward(&params, &joint, &[0.0; 20]).unwrap();
        let g = backward(&params, &out.trace, 1.0, &vec![0.0; 81]);
        assert!(g
            .tensor("policy_head.weight")
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(g
            .tensor("policy_head.bias")
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(g.tensor("value_head.bias").unwrap()[0] == 1.0);
    }

    /// Weights uniform in `+-sqrt(6 / fan_in)`, small random biases: keeps
    /// every gate away from saturation so no gradient group drowns in
    /// finite-difference round-off.
    fn checkable_params(cfg: NetConfig, seed: u64) -> NetworkParameters {
        let mut p = NetworkParameters::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = p.layout().entries.clone();
        for e in &entries {
            let a = if e.shape.len() == 2 {
                (6.0 / e.shape[1] as f64).sqrt()
            } else {
                0.1
            };
            p.data_mut()[e.range()]
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-a..a));
        }
        p
    }

    fn objective(
        params: &NetworkParameters,
        joint: &JointState,
        h: &[f64],
        dv: f64,
        dp: &[f64],
    ) -> f64 {
        let out = forward(params, joint, h).unwrap();
        dv * out.value + dot(dp, &out.policy)
    }

    #[test]
    fn every_parameter_matches_finite_differences_on_tiny_net() {
        let cfg = NetConfig::tiny();
        for draw in 0..3u64 {
            let params = checkable_params(cfg.clone(), 100 + draw);
            let mut rng = ChaCha8Rng::seed_from_u64(200 + draw);
            let joint = random_joint_scaled(&mut rng, 3, 1.5);
            let h: Vec<f64> = (0..cfg.hidden).map(|_| rng.gen_range(-0.9..0.9)).collect();
            let dv = rng.gen_range(-1.0..1.0);
            let dp: Vec<f64> = (0..cfg.n_actions)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let out = forward(&params, &joint, &h).unwrap();
            let g = backward(&params, &out.trace, dv, &dp);
            let step = 1e-6;
            for e in &params.layout().entries {
                let mut num = Vec::new();
                let mut ana = Vec::new();
                for idx in e.range() {
                    let mut plus = params.clone();
                    plus.data_mut()[idx] += step;
                    let mut minus = params.clone();
                    minus.data_mut()[idx] -= step;
                    num.push(
                        (objective(&plus, &joint, &h, dv, &dp)
                            - objective(&minus, &joint, &h, dv, &dp))
                            / (2.0 * step),
                    );
                    ana.push(g.data()[idx]);
                }
                let diff: f64 = num
                    .iter()
                    .zip(&ana)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let scale = num
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
                    .max(ana.iter().map(|v| v * v).sum::<f64>().sqrt());
                // the last attention-logit bias has an identically zero gradient (softmax is shift invariant)
                let rel = if scale < 1e-9 { diff } else { diff / scale };
                assert!(rel < 1e-4, "draw {draw} {}: relative error {rel}", e.name);
            }
        }
    }

    #[test]
    fn robot_memory_depends_on_history() {
        let params = random_params(NetConfig::default(), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s =
            |rng: &mut ChaCha8Rng| -> Vec<f64> { random_joint(rng, 0).robot_features().to_vec() };
        let last = s(&mut rng);
        let mut h1 = vec![0.0; 20];
        let mut h2 = vec![0.0; 20];
        for _ in 0..3 {
            h1 = encode_robot(&params, &s(&mut rng), &h1).1;
            h2 = encode_robot(&params, &s(&mut rng), &h2).1;
        }
        let a = encode_robot(&params, &last, &h1).0;
        let b = encode_robot(&params, &last, &h2).0;
        assert_ne!(a, b);
        let zero = NetworkParameters::zeros(NetConfig::default());
        assert!(encode_robot(&zero, &last, &[0.0; 20])
            .0
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_input_is_reported() {
        let params = random_params(NetConfig::default(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut joint = random_joint(&mut rng, 1);
        joint.robot.d_g = f64::NAN;
        assert!(matches!(
            forward(&params, &joint, &[0.0; 20]),
            Err(Error::Numeric { .. })
        ));
    }
}
