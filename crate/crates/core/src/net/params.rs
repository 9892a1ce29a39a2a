use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{HUMAN_OBS_DIM, N_ACTIONS, ROBOT_OBS_DIM};

/// Layer sizes. Hidden-layer lists exclude the input width; `mlp_tau`
/// always ends in a scalar logit that is appended automatically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub human_dim: usize,
    pub robot_dim: usize,
    pub hidden: usize,
    pub mlp_f: Vec<usize>,
    pub mlp_tau: Vec<usize>,
    pub mlp_theta: Vec<usize>,
    pub n_actions: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            human_dim: HUMAN_OBS_DIM,
            robot_dim: ROBOT_OBS_DIM,
            hidden: 20,
            mlp_f: vec![150, 100],
            mlp_tau: vec![100, 100],
            mlp_theta: vec![150, 100, 100],
            n_actions: N_ACTIONS,
        }
    }
}

impl NetConfig {
    /// A narrow network with the same topology, for exhaustive gradient checks.
    pub fn tiny() -> Self {
        NetConfig {
            hidden: 4,
            mlp_f: vec![6, 5],
            mlp_tau: vec![5],
            mlp_theta: vec![6, 5],
            n_actions: 7,
            ..Default::default()
        }
    }

    pub fn crowd_feature_dim(&self) -> usize {
        *self.mlp_f.last().expect("mlp_f has at least one layer")
    }

    pub fn q_dim(&self) -> usize {
        *self
            .mlp_theta
            .last()
            .expect("mlp_theta has at least one layer")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of one GRU layer's tensors inside the flat buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruSpec {
    pub input: usize,
    pub hidden: usize,
    pub w_z: usize,
    pub w_r: usize,
    pub w_h: usize,
    pub u_z: usize,
    pub u_r: usize,
    pub u_h: usize,
    pub b_z: usize,
    pub b_r: usize,
    pub b_h: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearSpec {
    pub input: usize,
    pub output: usize,
    pub weight: usize,
    pub bias: usize,
}

impl LinearSpec {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight..self.weight + self.input * self.output
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias..self.bias + self.output
    }
}

/// Named tensors in canonical (lexicographic) order and typed views of them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub config: NetConfig,
    pub entries: Vec<ParamEntry>,
    pub human_fwd: GruSpec,
    pub human_bwd: GruSpec,
    pub robot: GruSpec,
    pub mlp_f: Vec<LinearSpec>,
    pub mlp_tau: Vec<LinearSpec>,
    pub mlp_theta: Vec<LinearSpec>,
    pub value_head: LinearSpec,
    pub policy_head: LinearSpec,
    pub total: usize,
}

struct Registry {
    shapes: Vec<(String, Vec<usize>)>,
}

impl Registry {
    fn add(&mut self, name: String, shape: Vec<usize>) -> String {
        self.shapes.push((name.clone(), shape));
        name
    }

    fn gru(&mut self, prefix: &str, input: usize, hidden: usize) -> [String; 9] {
        let m = |s: &mut Self, n: &str, shape: Vec<usize>| s.add(format!("{prefix}.{n}"), shape);
        [
            m(self, "W_z", vec![hidden, input]),
            m(self, "W_r", vec![hidden, input]),
            m(self, "W_h", vec![hidden, input]),
            m(self, "U_z", vec![hidden, hidden]),
            m(self, "U_r", vec![hidden, hidden]),
            m(self, "U_h", vec![hidden, hidden]),
            m(self, "b_z", vec![hidden]),
            m(self, "b_r", vec![hidden]),
            m(self, "b_h", vec![hidden]),
        ]
    }

    fn linear(
        &mut self,
        prefix: &str,
        input: usize,
        output: usize,
    ) -> (String, String, usize, usize) {
        let w = self.add(format!("{prefix}.weight"), vec![output, input]);
        let b = self.add(format!("{prefix}.bias"), vec![output]);
        (w, b, input, output)
    }

    fn mlp(
        &mut self,
        prefix: &str,
        input: usize,
        widths: &[usize],
    ) -> Vec<(String, String, usize, usize)> {
        let mut prev = input;
        widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let l = self.linear(&format!("{prefix}.{i}"), prev, w);
                prev = w;
                l
            })
            .collect()
    }
}

impl ParamLayout {
    pub fn new(config: NetConfig) -> Self {
        let h = config.hidden;
        let mut reg = Registry { shapes: Vec::new() };
        let fwd = reg.gru("human_gru.fwd", config.human_dim, h);
        let bwd = reg.gru("human_gru.bwd", config.human_dim, h);
        let robot = reg.gru("robot_gru", config.robot_dim, h);
        let pair_dim = 3 * h;
        let f = reg.mlp("mlp_f", pair_dim, &config.mlp_f);
        let mut tau_widths = config.mlp_tau.clone();
        tau_widths.push(1);
        let tau = reg.mlp("mlp_tau", pair_dim, &tau_widths);
        let theta = reg.mlp(
            "mlp_theta",
            config.crowd_feature_dim() + h,
            &config.mlp_theta,
        );
        let value = reg.linear("value_head", config.q_dim(), 1);
        let policy = reg.linear("policy_head", config.q_dim(), config.n_actions);

        let mut shapes = reg.shapes;
        shapes.sort_by(|a, b| a.0.cmp(&b.0));
        let mut offset = 0;
        let entries: Vec<ParamEntry> = shapes
            .into_iter()
            .map(|(name, shape)| {
                let e = ParamEntry {
                    name,
                    shape,
                    offset,
                };
                offset += e.len();
                e
            })
            .collect();
        let index: HashMap<&str, usize> = entries
            .iter()
            .map(|e| (e.name.as_str(), e.offset))
            .collect();
        let at = |n: &String| index[n.as_str()];
        let gru = |names: &[String; 9], input| GruSpec {
            input,
            hidden: h,
            w_z: at(&names[0]),
            w_r: at(&names[1]),
            w_h: at(&names[2]),
            u_z: at(&names[3]),
            u_r: at(&names[4]),
            u_h: at(&names[5]),
            b_z: at(&names[6]),
            b_r: at(&names[7]),
            b_h: at(&names[8]),
        };
        let lin = |(w, b, input, output): &(String, String, usize, usize)| LinearSpec {
            input: *input,
            output: *output,
            weight: at(w),
            bias: at(b),
        };
        ParamLayout {
            human_fwd: gru(&fwd, config.human_dim),
            human_bwd: gru(&bwd, config.human_dim),
            robot: gru(&robot, config.robot_dim),
            mlp_f: f.iter().map(lin).collect(),
            mlp_tau: tau.iter().map(lin).collect(),
            mlp_theta: theta.iter().map(lin).collect(),
            value_head: lin(&value),
            policy_head: lin(&policy),
            total: offset,
            entries,
            config,
        }
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// A dense tensor, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// All weights and biases of the network in one flat buffer. Gradients use
/// the same type and layout.
#[derive(Clone, Debug)]
pub struct NetworkParameters {
    layout: Arc<ParamLayout>,
    data: Vec<f64>,
}

impl PartialEq for NetworkParameters {
    fn eq(&self, other: &Self) -> bool {
        self.layout.entries == other.layout.entries && self.data == other.data
    }
}

impl NetworkParameters {
    pub fn zeros(config: NetConfig) -> Self {
        let layout = Arc::new(ParamLayout::new(config));
        let data = vec![0.0; layout.total];
        NetworkParameters { layout, data }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(config: NetConfig, seed: u64) -> Self {
        let mut p = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = p.layout.clone();
        for e in &layout.entries {
            if e.shape.len() == 2 {
                let (fan_out, fan_in) = (e.shape[0], e.shape[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in &mut p.data[e.range()] {
                    *v = rng.gen_range(-bound..bound);
                }
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        NetworkParameters {
            layout: self.layout.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub(crate) fn from_parts(layout: Arc<ParamLayout>, data: Vec<f64>) -> Self {
        assert_eq!(layout.total, data.len());
        NetworkParameters { layout, data }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub(crate) fn layout_arc(&self) -> Arc<ParamLayout> {
        self.layout.clone()
    }

    pub fn config(&self) -> &NetConfig {
        &self.layout.config
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.layout.entries.iter().map(|e| e.name.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.entry(name).map(|e| &self.data[e.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.entry(name)?.range();
        Some(&mut self.data[range])
    }

    pub fn tensors(&self) -> Vec<(String, Tensor)> {
        self.layout
            .entries
            .iter()
            .map(|e| {
                (
                    e.name.clone(),
                    Tensor {
                        shape: e.shape.clone(),
                        data: self.data[e.range()].to_vec(),
                    },
                )
            })
            .collect()
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &NetworkParameters, factor: f64) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Hash of the exact parameter bits; identifies a parameter snapshot.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for v in &self.data {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}
