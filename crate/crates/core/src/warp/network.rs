//! Dense warp network with exact forward-mode input tangents and a reverse
//! pass through both values and tangents.
//!
//! Raw inputs are ordered `[p₀, p₁, p₂, q₀, q₁, q₂, q₃, t]`. The network sees
//! `[enc(p), q, enc(t)]` and emits `[δp (3), δq (4), δs (3)]`.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoding::{encode_derivative, encode_into, encode_second_derivative, encoded_len};
use crate::error::{Error, Result};

pub const OUTPUTS: usize = 10;
pub const RAW_INPUTS: usize = 8;
pub const TIME_INPUT: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Tanh,
}

impl Activation {
    /// `(σ(z), σ'(z), σ''(z))`
    #[inline]
    fn eval(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Softplus => {
                let a = z.max(0.0) + (-z.abs()).exp().ln_1p();
                let s = crate::scene::sigmoid(z);
                (a, s, s * (1.0 - s))
            }
            Activation::Tanh => {
                let a = z.tanh();
                let d = 1.0 - a * a;
                (a, d, -2.0 * a * d)
            }
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Softplus => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Softplus),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpConfig {
    pub position_bands: usize,
    pub time_bands: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self {
            position_bands: 10,
            time_bands: 6,
            hidden_layers: 4,
            width: 64,
            activation: Activation::Softplus,
        }
    }
}

impl WarpConfig {
    pub fn input_dim(&self) -> usize {
        encoded_len(3, self.position_bands) + 4 + encoded_len(1, self.time_bands)
    }

    /// `(offset, length)` of a raw input's block inside the encoded input vector.
    fn block(&self, raw: usize) -> (usize, usize) {
        let pb = 1 + 2 * self.position_bands;
        match raw {
            0..=2 => (raw * pb, pb),
            3..=6 => (3 * pb + raw - 3, 1),
            TIME_INPUT => (3 * pb + 4, 1 + 2 * self.time_bands),
            _ => unreachable!("raw input index {raw}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layer {
    inputs: usize,
    outputs: usize,
    weights: usize,
    bias: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WarpInput {
    pub position: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub time: f64,
}

impl WarpInput {
    pub fn new(position: Vector3<f64>, rotation: Vector4<f64>, time: f64) -> Self {
        Self {
            position,
            rotation,
            time,
        }
    }

    fn raw(&self) -> [f64; RAW_INPUTS] {
        let (p, q) = (&self.position, &self.rotation);
        [p[0], p[1], p[2], q[0], q[1], q[2], q[3], self.time]
    }
}

/// Parameter offsets `(δp, δq, δs)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WarpOutput {
    pub position: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub log_scale: Vector3<f64>,
}

impl WarpOutput {
    fn from_slice(v: &[f64]) -> Self {
        Self {
            position: Vector3::new(v[0], v[1], v[2]),
            rotation: Vector4::new(v[3], v[4], v[5], v[6]),
            log_scale: Vector3::new(v[7], v[8], v[9]),
        }
    }

    pub fn to_array(&self) -> [f64; OUTPUTS] {
        let (p, q, s) = (&self.position, &self.rotation, &self.log_scale);
        [p[0], p[1], p[2], q[0], q[1], q[2], q[3], s[0], s[1], s[2]]
    }
}

/// Input Jacobians of the warp at one `(p, q, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpJacobians {
    pub output: WarpOutput,
    /// `∂(p + δp)/∂p`
    pub jp: Matrix3<f64>,
    /// `∂(q + δq)/∂q`
    pub jq: Matrix4<f64>,
    pub dpdt: Vector3<f64>,
    pub dqdt: Vector4<f64>,
}

/// Gradient with respect to the raw network inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InputGrad {
    pub position: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub time: f64,
}

/// Which input tangents a forward pass carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tangents {
    None,
    Time,
    All,
}

impl Tangents {
    fn directions(self) -> Vec<usize> {
        match self {
            Tangents::None => Vec::new(),
            Tangents::Time => vec![TIME_INPUT],
            Tangents::All => (0..RAW_INPUTS).collect(),
        }
    }
}

/// Intermediates of one forward pass, consumed by [`WarpField::backward`].
#[derive(Clone, Debug)]
pub struct WarpTape {
    raw: [f64; RAW_INPUTS],
    directions: Vec<usize>,
    encoded: Vec<f64>,
    /// Per direction: derivative of its encoding block wrt the raw input.
    seeds: Vec<Vec<f64>>,
    /// Per layer output (post-activation for hidden layers).
    values: Vec<Vec<f64>>,
    /// Per layer output tangents, `direction * outputs + o`.
    tangents: Vec<Vec<f64>>,
    /// Per hidden layer: `σ'(z)`, `σ''(z)` and pre-activation tangents.
    d1: Vec<Vec<f64>>,
    d2: Vec<Vec<f64>>,
    pre_tangents: Vec<Vec<f64>>,
}

impl WarpTape {
    pub fn output(&self) -> WarpOutput {
        WarpOutput::from_slice(self.values.last().unwrap())
    }

    pub fn directions(&self) -> &[usize] {
        &self.directions
    }

    /// Tangent of all ten outputs along raw input `raw`, if it was carried.
    pub fn tangent(&self, raw: usize) -> Option<&[f64]> {
        let k = self.directions.iter().position(|&d| d == raw)?;
        let t = self.tangents.last().unwrap();
        Some(&t[k * OUTPUTS..(k + 1) * OUTPUTS])
    }

    /// Assembles the warp Jacobians; requires a tape recorded with [`Tangents::All`].
    pub fn jacobians(&self) -> WarpJacobians {
        assert_eq!(self.directions.len(), RAW_INPUTS, "tape lacks input tangents");
        let mut jp = Matrix3::identity();
        let mut jq = Matrix4::identity();
        for j in 0..3 {
            let t = self.tangent(j).unwrap();
            for i in 0..3 {
                jp[(i, j)] += t[i];
            }
        }
        for j in 0..4 {
            let t = self.tangent(3 + j).unwrap();
            for i in 0..4 {
                jq[(i, j)] += t[3 + i];
            }
        }
        let tt = self.tangent(TIME_INPUT).unwrap();
        WarpJacobians {
            output: self.output(),
            jp,
            jq,
            dpdt: Vector3::new(tt[0], tt[1], tt[2]),
            dqdt: Vector4::new(tt[3], tt[4], tt[5], tt[6]),
        }
    }
}

/// Forward warp field `F_θ(p, q, t) → (δp, δq, δs)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpField {
    config: WarpConfig,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

impl WarpField {
    /// All-zero network (the identity warp).
    pub fn zeros(config: WarpConfig) -> Self {
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut inputs = config.input_dim();
        for l in 0..=config.hidden_layers {
            let outputs = if l == config.hidden_layers {
                OUTPUTS
            } else {
                config.width
            };
            let weights = offset;
            let bias = weights + inputs * outputs;
            offset = bias + outputs;
            layers.push(Layer {
                inputs,
                outputs,
                weights,
                bias,
            });
            inputs = outputs;
        }
        Self {
            config,
            layers,
            params: vec![0.0; offset],
        }
    }

    /// Xavier-uniform hidden layers, zero biases and a zero output layer, so the
    /// initial warp is the identity.
    pub fn new(config: WarpConfig, seed: u64) -> Self {
        let mut net = Self::zeros(config);
        net.randomize_hidden(seed);
        net
    }

    /// Every layer (including the output layer) Xavier-uniform initialized.
    pub fn random(config: WarpConfig, seed: u64) -> Self {
        let mut net = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in net.layers.clone() {
            let bound = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut net.params[layer.weights..layer.bias] {
                *w = rng.random_range(-bound..bound);
            }
            for b in &mut net.params[layer.bias..layer.bias + layer.outputs] {
                *b = rng.random_range(-0.1..0.1);
            }
        }
        net
    }

    fn randomize_hidden(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = self.layers.len() - 1;
        for layer in self.layers[..hidden].to_vec() {
            let bound = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut self.params[layer.weights..layer.bias] {
                *w = rng.random_range(-bound..bound);
            }
        }
    }

    pub(crate) fn from_parts(config: WarpConfig, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(config);
        if params.len() != net.params.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", net.params.len()),
                actual: format!("{}", params.len()),
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &WarpConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// `(weights (row-major, outputs × inputs), bias, inputs, outputs)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64], usize, usize) {
        let layer = self.layers[l];
        (
            &self.params[layer.weights..layer.bias],
            &self.params[layer.bias..layer.bias + layer.outputs],
            layer.inputs,
            layer.outputs,
        )
    }

    /// `(weights (row-major, outputs × inputs), bias)` of layer `l`.
    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let layer = self.layers[l];
        let (w, b) = self.params[layer.weights..layer.bias + layer.outputs]
            .split_at_mut(layer.bias - layer.weights);
        (w, b)
    }

    /// Column index of raw input `raw`'s identity (unencoded) entry in the first layer.
    pub fn input_column(&self, raw: usize) -> usize {
        self.config.block(raw).0
    }

    /// Zeroes every first-layer weight reading the position encoding, making
    /// the warp independent of `p`.
    pub fn mask_position_input(&mut self) {
        let first = self.layers[0];
        let span = encoded_len(3, self.config.position_bands);
        for o in 0..first.outputs {
            let row = first.weights + o * first.inputs;
            self.params[row..row + span].fill(0.0);
        }
    }

    fn encode(&self, raw: &[f64; RAW_INPUTS]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.config.input_dim());
        encode_into(&raw[0..3], self.config.position_bands, &mut x);
        x.extend_from_slice(&raw[3..7]);
        encode_into(&raw[7..8], self.config.time_bands, &mut x);
        x
    }

    fn bands_of(&self, raw: usize) -> usize {
        match raw {
            0..=2 => self.config.position_bands,
            TIME_INPUT => self.config.time_bands,
            _ => 0,
        }
    }

    pub fn forward(&self, input: &WarpInput) -> WarpOutput {
        let mut h = self.encode(&input.raw());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = &self.params[layer.weights..layer.bias];
            let b = &self.params[layer.bias..layer.bias + layer.outputs];
            let mut z: Vec<f64> = (0..layer.outputs)
                .map(|o| dot(&w[o * layer.inputs..(o + 1) * layer.inputs], &h) + b[o])
                .collect();
            if l != last {
                for v in &mut z {
                    *v = self.config.activation.eval(*v).0;
                }
            }
            h = z;
        }
        WarpOutput::from_slice(&h)
    }

    /// Forward pass recording intermediates and the requested input tangents.
    pub fn record(&self, input: &WarpInput, tangents: Tangents) -> WarpTape {
        let raw = input.raw();
        let directions = tangents.directions();
        let nd = directions.len();
        let encoded = self.encode(&raw);
        let seeds: Vec<Vec<f64>> = directions
            .iter()
            .map(|&d| {
                let mut s = Vec::new();
                if (3..=6).contains(&d) {
                    s.push(1.0);
                } else {
                    encode_derivative(raw[d], self.bands_of(d), &mut s);
                }
                s
            })
            .collect();

        let last = self.layers.len() - 1;
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut tangents_out: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut d1s = Vec::with_capacity(last);
        let mut d2s = Vec::with_capacity(last);
        let mut pre_ts = Vec::with_capacity(last);

        for (l, layer) in self.layers.iter().enumerate() {
            let (ni, no) = (layer.inputs, layer.outputs);
            let w = &self.params[layer.weights..layer.bias];
            let b = &self.params[layer.bias..layer.bias + no];
            let h: &[f64] = if l == 0 { &encoded } else { &values[l - 1] };
            let mut z: Vec<f64> = (0..no).map(|o| dot(&w[o * ni..(o + 1) * ni], h) + b[o]).collect();
            let mut zt = vec![0.0; nd * no];
            if l == 0 {
                for (k, &d) in directions.iter().enumerate() {
                    let (start, len) = self.config.block(d);
                    let seed = &seeds[k];
                    for o in 0..no {
                        zt[k * no + o] = dot(&w[o * ni + start..o * ni + start + len], seed);
                    }
                }
            } else {
                let ht = &tangents_out[l - 1];
                for k in 0..nd {
                    let hk = &ht[k * ni..(k + 1) * ni];
                    for o in 0..no {
                        zt[k * no + o] = dot(&w[o * ni..(o + 1) * ni], hk);
                    }
                }
            }
            if l != last {
                let mut d1 = vec![0.0; no];
                let mut d2 = vec![0.0; no];
                let mut at = zt.clone();
                for o in 0..no {
                    let (a, g1, g2) = self.config.activation.eval(z[o]);
                    z[o] = a;
                    d1[o] = g1;
                    d2[o] = g2;
                    for k in 0..nd {
                        at[k * no + o] *= g1;
                    }
                }
                d1s.push(d1);
                d2s.push(d2);
                pre_ts.push(zt);
                tangents_out.push(at);
            } else {
                tangents_out.push(zt);
            }
            values.push(z);
        }

        WarpTape {
            raw,
            directions,
            encoded,
            seeds,
            values,
            tangents: tangents_out,
            d1: d1s,
            d2: d2s,
            pre_tangents: pre_ts,
        }
    }

    pub fn jacobians(&self, input: &WarpInput) -> WarpJacobians {
        self.record(input, Tangents::All).jacobians()
    }

    /// Reverse pass. `output_grad` is the adjoint of the ten outputs and
    /// `tangent_grad` (empty, or `directions × 10`) the adjoint of the output
    /// tangents. Parameter gradients are accumulated into `grad`.
    pub fn backward(
        &self,
        tape: &WarpTape,
        output_grad: &[f64; OUTPUTS],
        tangent_grad: &[f64],
        grad: &mut [f64],
    ) -> InputGrad {
        assert_eq!(grad.len(), self.params.len());
        let nd = tape.directions.len();
        let with_tangents = !tangent_grad.is_empty() && tangent_grad.iter().any(|&v| v != 0.0);
        if with_tangents {
            assert_eq!(tangent_grad.len(), nd * OUTPUTS);
        }
        let last = self.layers.len() - 1;
        let mut a_bar = output_grad.to_vec();
        let mut at_bar = if with_tangents {
            tangent_grad.to_vec()
        } else {
            Vec::new()
        };
        let mut enc_bar = Vec::new();
        let mut enc_t_bar: Vec<Vec<f64>> = Vec::new();

        for l in (0..=last).rev() {
            let layer = self.layers[l];
            let (ni, no) = (layer.inputs, layer.outputs);
            let (z_bar, zt_bar) = if l != last {
                let d1 = &tape.d1[l];
                let d2 = &tape.d2[l];
                let zt = &tape.pre_tangents[l];
                let mut z_bar: Vec<f64> = (0..no).map(|o| a_bar[o] * d1[o]).collect();
                let mut zt_bar = Vec::new();
                if with_tangents {
                    zt_bar = vec![0.0; nd * no];
                    for k in 0..nd {
                        for o in 0..no {
                            let g = at_bar[k * no + o];
                            z_bar[o] += g * d2[o] * zt[k * no + o];
                            zt_bar[k * no + o] = g * d1[o];
                        }
                    }
                }
                (z_bar, zt_bar)
            } else {
                (a_bar.clone(), at_bar.clone())
            };

            let h: &[f64] = if l == 0 { &tape.encoded } else { &tape.values[l - 1] };
            {
                let gw = &mut grad[layer.weights..layer.bias + no];
                let (gw, gb) = gw.split_at_mut(layer.bias - layer.weights);
                for o in 0..no {
                    gb[o] += z_bar[o];
                    let row = &mut gw[o * ni..(o + 1) * ni];
                    let zo = z_bar[o];
                    if zo != 0.0 {
                        for (g, &x) in row.iter_mut().zip(h) {
                            *g += zo * x;
                        }
                    }
                }
                if with_tangents {
                    if l == 0 {
                        for (k, &d) in tape.directions.iter().enumerate() {
                            let (start, len) = self.config.block(d);
                            let seed = &tape.seeds[k];
                            for o in 0..no {
                                let g = zt_bar[k * no + o];
                                let row = &mut gw[o * ni + start..o * ni + start + len];
                                for (r, &s) in row.iter_mut().zip(seed) {
                                    *r += g * s;
                                }
                            }
                        }
                    } else {
                        let ht = &tape.tangents[l - 1];
                        for k in 0..nd {
                            let hk = &ht[k * ni..(k + 1) * ni];
                            for o in 0..no {
                                let g = zt_bar[k * no + o];
                                if g != 0.0 {
                                    let row = &mut gw[o * ni..(o + 1) * ni];
                                    for (r, &x) in row.iter_mut().zip(hk) {
                                        *r += g * x;
                                    }
                                }
                            }
                        }
                    }
                }
            }

            let w = &self.params[layer.weights..layer.bias];
            let mut h_bar = vec![0.0; ni];
            for o in 0..no {
                let zo = z_bar[o];
                if zo != 0.0 {
                    for (hb, &wv) in h_bar.iter_mut().zip(&w[o * ni..(o + 1) * ni]) {
                        *hb += wv * zo;
                    }
                }
            }
            if l == 0 {
                enc_bar = h_bar;
                if with_tangents {
                    for (k, &d) in tape.directions.iter().enumerate() {
                        let (start, len) = self.config.block(d);
                        let mut acc = vec![0.0; len];
                        for o in 0..no {
                            let g = zt_bar[k * no + o];
                            for (a, &wv) in acc.iter_mut().zip(&w[o * ni + start..o * ni + start + len]) {
                                *a += wv * g;
                            }
                        }
                        enc_t_bar.push(acc);
                    }
                }
            } else {
                a_bar = h_bar;
                if with_tangents {
                    let mut next = vec![0.0; nd * ni];
                    for k in 0..nd {
                        let nk = &mut next[k * ni..(k + 1) * ni];
                        for o in 0..no {
                            let g = zt_bar[k * no + o];
                            if g != 0.0 {
                                for (n, &wv) in nk.iter_mut().zip(&w[o * ni..(o + 1) * ni]) {
                                    *n += wv * g;
                                }
                            }
                        }
                    }
                    at_bar = next;
                }
            }
        }

        let mut raw_bar = [0.0; RAW_INPUTS];
        let mut scratch = Vec::new();
        for (r, rb) in raw_bar.iter_mut().enumerate() {
            let (start, len) = self.config.block(r);
            if (3..=6).contains(&r) {
                *rb = enc_bar[start];
                continue;
            }
            scratch.clear();
            encode_derivative(tape.raw[r], self.bands_of(r), &mut scratch);
            *rb = dot(&scratch, &enc_bar[start..start + len]);
        }
        if with_tangents {
            for (k, &d) in tape.directions.iter().enumerate() {
                if (3..=6).contains(&d) {
                    continue;
                }
                scratch.clear();
                encode_second_derivative(tape.raw[d], self.bands_of(d), &mut scratch);
                raw_bar[d] += dot(&scratch, &enc_t_bar[k]);
            }
        }
        InputGrad {
            position: Vector3::new(raw_bar[0], raw_bar[1], raw_bar[2]),
            rotation: Vector4::new(raw_bar[3], raw_bar[4], raw_bar[5], raw_bar[6]),
            time: raw_bar[7],
        }
    }

    /// Gradient of `⟨upstream, F_θ(input)⟩` with respect to every weight and bias.
    pub fn param_gradients(&self, input: &WarpInput, upstream: &WarpOutput) -> Vec<f64> {
        let tape = self.record(input, Tangents::None);
        let mut grad = vec![0.0; self.params.len()];
        self.backward(&tape, &upstream.to_array(), &[], &mut grad);
        grad
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
