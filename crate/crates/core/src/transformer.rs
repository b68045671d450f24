//! Latent forecaster: causal self-attention over the lookback window, cross
//! attention to a single ξ token, post-norm residual blocks.
//!
//! A batch of `m` windows is processed as one `[m·q, width]` matrix; attention
//! uses block-diagonal masks so that samples never see each other.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::nn::{Bound, LayerNorm, Linear, ParamSet};
use crate::{rng, Error, Result};

const MASKED: f64 = -1e30;
const DIVERGENCE: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub latent_dim: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub heads: usize,
    pub blocks: usize,
    pub width: usize,
    /// Hidden width of each feed-forward sublayer.
    pub ff_width: usize,
    pub param_dim: usize,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.latent_dim,
            self.lookback,
            self.horizon,
            self.heads,
            self.blocks,
            self.width,
            self.ff_width,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("transformer dimensions must be positive".into()));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Attention {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
}

impl Attention {
    fn new(params: &mut ParamSet, name: &str, width: usize, rng: &mut rng::Rng) -> Self {
        Self {
            query: Linear::new(params, &format!("{name}.q"), width, width, false, rng),
            key: Linear::new(params, &format!("{name}.k"), width, width, false, rng),
            value: Linear::new(params, &format!("{name}.v"), width, width, false, rng),
            output: Linear::new(params, &format!("{name}.o"), width, width, true, rng),
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    self_attn: Attention,
    norm1: LayerNorm,
    cross_attn: Attention,
    norm2: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
    norm3: LayerNorm,
}

#[derive(Debug)]
pub struct Transformer {
    pub config: TransformerConfig,
    pub params: ParamSet,
    input: Linear,
    xi_token: Linear,
    blocks: Vec<Block>,
    head: Linear,
    forward_calls: AtomicUsize,
}

impl Clone for Transformer {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            params: self.params.clone(),
            input: self.input.clone(),
            xi_token: self.xi_token.clone(),
            blocks: self.blocks.clone(),
            head: self.head.clone(),
            forward_calls: AtomicUsize::new(self.forward_calls()),
        }
    }
}

/// Sinusoidal position code, `[q, width]`.
pub fn positional_encoding(q: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; q * width];
    for pos in 0..q {
        for i in 0..width {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / width as f64);
            let angle = pos as f64 * freq;
            out[pos * width + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

/// Additive mask for `m` windows of length `q`: row `i` may attend to column
/// `j` iff both lie in the same window and `j ≤ i`.
fn causal_mask(m: usize, q: usize) -> Tensor {
    let n = m * q;
    let mut data = vec![MASKED; n * n];
    for s in 0..m {
        for i in 0..q {
            for j in 0..=i {
                data[(s * q + i) * n + s * q + j] = 0.0;
            }
        }
    }
    Tensor::matrix(n, n, data).expect("positive extents")
}

/// Row `i` of the `m·q` sequence may attend only to token `i / q`.
fn cross_mask(m: usize, q: usize) -> Tensor {
    let mut data = vec![MASKED; m * q * m];
    for r in 0..m * q {
        data[r * m + r / q] = 0.0;
    }
    Tensor::matrix(m * q, m, data).expect("positive extents")
}

/// `[m, m·q]` selector of the last position of every window.
fn last_selector(m: usize, q: usize) -> Tensor {
    let mut data = vec![0.0; m * m * q];
    for s in 0..m {
        data[s * m * q + s * q + q - 1] = 1.0;
    }
    Tensor::matrix(m, m * q, data).expect("positive extents")
}

/// Intermediate values exposed for inspection in tests.
pub struct Trace {
    /// Self-attention weights of the first head of every block, `[m·q, m·q]`.
    pub self_weights: Vec<Var>,
    pub cross_weights: Vec<Var>,
}

impl Transformer {
    pub fn new(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(seed);
        let mut params = ParamSet::new();
        let w = config.width;
        let input = Linear::new(&mut params, "tf.input", config.latent_dim, w, true, &mut rng);
        let xi_token = Linear::new(&mut params, "tf.xi_token", config.param_dim.max(1), w, true, &mut rng);
        let blocks = (0..config.blocks)
            .map(|b| {
                let name = format!("tf.block{b}");
                Block {
                    self_attn: Attention::new(&mut params, &format!("{name}.self"), w, &mut rng),
                    norm1: LayerNorm::new(&mut params, &format!("{name}.norm1"), w),
                    cross_attn: Attention::new(&mut params, &format!("{name}.cross"), w, &mut rng),
                    norm2: LayerNorm::new(&mut params, &format!("{name}.norm2"), w),
                    ff_in: Linear::new(&mut params, &format!("{name}.ff_in"), w, config.ff_width, true, &mut rng),
                    ff_out: Linear::new(&mut params, &format!("{name}.ff_out"), config.ff_width, w, true, &mut rng),
                    norm3: LayerNorm::new(&mut params, &format!("{name}.norm3"), w),
                }
            })
            .collect();
        let head = Linear::new(
            &mut params,
            "tf.head",
            w,
            config.horizon * config.latent_dim,
            true,
            &mut rng,
        );
        // Zero increments: an untrained forecaster is the persistence forecast.
        params.get_mut(head.weight).data_mut().fill(0.0);
        Ok(Self {
            config,
            params,
            input,
            xi_token,
            blocks,
            head,
            forward_calls: AtomicUsize::new(0),
        })
    }

    /// Number of forward passes executed so far (all entry points).
    pub fn forward_calls(&self) -> usize {
        self.forward_calls.load(Ordering::Relaxed)
    }

    fn attend(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        attn: &Attention,
        x: Var,
        context: Var,
        mask: Var,
        weights_out: &mut Vec<Var>,
    ) -> Result<Var> {
        let heads = self.config.heads;
        let dh = self.config.width / heads;
        let q = attn.query.forward(tape, bound, x)?;
        let k = attn.key.forward(tape, bound, context)?;
        let v = attn.value.forward(tape, bound, context)?;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice(q, 1, h * dh, (h + 1) * dh)?;
            let kh = tape.slice(k, 1, h * dh, (h + 1) * dh)?;
            let vh = tape.slice(v, 1, h * dh, (h + 1) * dh)?;
            let kt = tape.transpose(kh)?;
            let raw = tape.matmul(qh, kt)?;
            let scaled = tape.scale(raw, 1.0 / (dh as f64).sqrt())?;
            let masked = tape.add(scaled, mask)?;
            let weights = tape.softmax(masked)?;
            if h == 0 {
                weights_out.push(weights);
            }
            outs.push(tape.matmul(weights, vh)?);
        }
        let joined = if heads == 1 { outs[0] } else { tape.concat(&outs, 1)? };
        Ok(attn.output.forward(tape, bound, joined)?)
    }

    /// Runs the block stack; `window: [m·q, Z]`, `xi: [m, param_dim]` →
    /// `[m·q, width]`.
    pub fn encode_sequence(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        window: Var,
        xi: Var,
        trace: Option<&mut Trace>,
    ) -> Result<Var> {
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        let q = self.config.lookback;
        let shape = tape.shape(window).to_vec();
        if shape.len() != 2 || shape[1] != self.config.latent_dim || shape[0] % q != 0 {
            return Err(Error::Dimension {
                context: "transformer window",
                expected: q * self.config.latent_dim,
                got: shape.iter().product(),
            });
        }
        let m = shape[0] / q;
        let xshape = tape.shape(xi).to_vec();
        if xshape != [m, self.config.param_dim.max(1)] {
            return Err(Error::Dimension {
                context: "transformer parameter rows",
                expected: m,
                got: xshape[0],
            });
        }
        let w = self.config.width;
        let pe: Vec<f64> = positional_encoding(q, w).iter().copied().cycle().take(m * q * w).collect();
        let pe = tape.constant(Tensor::matrix(m * q, w, pe)?);
        let self_mask = tape.constant(causal_mask(m, q));
        let x_mask = tape.constant(cross_mask(m, q));
        let proj = self.input.forward(tape, bound, window)?;
        let mut x = tape.add(proj, pe)?;
        let token = self.xi_token.forward(tape, bound, xi)?;
        let mut self_weights = Vec::new();
        let mut cross_weights = Vec::new();
        for block in &self.blocks {
            let a = self.attend(tape, bound, &block.self_attn, x, x, self_mask, &mut self_weights)?;
            let r = tape.add(x, a)?;
            x = block.norm1.forward(tape, bound, r)?;
            let c = self.attend(tape, bound, &block.cross_attn, x, token, x_mask, &mut cross_weights)?;
            let r = tape.add(x, c)?;
            x = block.norm2.forward(tape, bound, r)?;
            let f = block.ff_in.forward(tape, bound, x)?;
            let f = tape.gelu(f)?;
            let f = block.ff_out.forward(tape, bound, f)?;
            let r = tape.add(x, f)?;
            x = block.norm3.forward(tape, bound, r)?;
        }
        if let Some(t) = trace {
            t.self_weights = self_weights;
            t.cross_weights = cross_weights;
        }
        Ok(x)
    }

    /// Forecast on the tape: `[m·q, Z]` windows → `[m, h·Z]`, the `h` predicted
    /// latents of each window laid out consecutively. The head predicts
    /// increments over the last latent of the window.
    pub fn forecast_on(&self, tape: &mut Tape, bound: &Bound, window: Var, xi: Var) -> Result<Var> {
        let q = self.config.lookback;
        let seq = self.encode_sequence(tape, bound, window, xi, None)?;
        let m = tape.shape(seq)[0] / q;
        let sel = tape.constant(last_selector(m, q));
        let last = tape.matmul(sel, seq)?;
        let delta = self.head.forward(tape, bound, last)?;
        let z_last = tape.matmul(sel, window)?;
        let repeated = if self.config.horizon == 1 {
            z_last
        } else {
            tape.concat(&vec![z_last; self.config.horizon], 1)?
        };
        Ok(tape.add(repeated, delta)?)
    }

    fn check_window(&self, window: &[f64]) -> Result<()> {
        let expected = self.config.lookback * self.config.latent_dim;
        if window.len() != expected {
            return Err(Error::Dimension {
                context: "transformer window",
                expected,
                got: window.len(),
            });
        }
        Ok(())
    }

    /// `h` predicted latents (row-major `[h, Z]`) after a `[q, Z]` window.
    pub fn forecast(&self, window: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        self.check_window(window)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let w = tape.constant(Tensor::matrix(self.config.lookback, self.config.latent_dim, window.to_vec())?);
        let x = tape.constant(crate::vae::xi_matrix(xi, self.config.param_dim, 1)?);
        let out = self.forecast_on(&mut tape, &bound, w, x)?;
        Ok(tape.data(out).to_vec())
    }

    /// Autoregressive rollout: each iteration forecasts from the current
    /// window, keeps the first predicted latent and slides the window by one.
    /// Returns `steps` latents, row-major.
    pub fn rollout(&self, window: &[f64], xi: &[f64], steps: usize) -> Result<Vec<f64>> {
        self.check_window(window)?;
        if steps == 0 {
            return Err(Error::InvalidInput("rollout needs at least one step".into()));
        }
        let z = self.config.latent_dim;
        let mut current = window.to_vec();
        let mut out = Vec::with_capacity(steps * z);
        for step in 0..steps {
            let pred = self.forecast(&current, xi)?;
            let next = &pred[..z];
            if next.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE) {
                return Err(Error::Divergence {
                    what: "latent rollout",
                    step,
                });
            }
            out.extend_from_slice(next);
            current.drain(..z);
            current.extend_from_slice(next);
        }
        Ok(out)
    }

    pub fn value_projections(&self) -> Vec<crate::nn::ParamId> {
        self.blocks
            .iter()
            .flat_map(|b| [b.self_attn.value.weight, b.cross_attn.value.weight])
            .collect()
    }

    /// Weights of every layer fed by ξ; zeroing them makes the output ξ-invariant.
    pub fn xi_pathway(&self) -> Vec<crate::nn::ParamId> {
        let mut ids = vec![self.xi_token.weight];
        ids.extend(self.xi_token.bias);
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(heads: usize) -> TransformerConfig {
        TransformerConfig {
            latent_dim: 3,
            lookback: 5,
            horizon: 2,
            heads,
            blocks: 2,
            width: 8,
            ff_width: 16,
            param_dim: 1,
        }
    }

    /// A fresh model whose forecast head is randomised, so forecasts depend
    /// on the whole network.
    fn perturbed(config: TransformerConfig, seed: u64) -> Transformer {
        let mut tf = Transformer::new(config, seed).unwrap();
        let mut r = rng::seeded(seed + 100);
        let w = tf.params.get_mut(tf.head.weight).data_mut();
        let noise = rng::standard_normal(&mut r, w.len());
        for (v, n) in w.iter_mut().zip(noise) {
            *v = 0.3 * n;
        }
        tf
    }

    fn window(seed: u64, q: usize) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        rng::standard_normal(&mut r, q * 3)
    }

    fn sequence(tf: &Transformer, win: &[f64], xi: f64) -> Vec<f64> {
        let mut tape = Tape::new();
        let bound = tf.params.bind(&mut tape, false);
        let q = win.len() / 3;
        let w = tape.constant(Tensor::matrix(q, 3, win.to_vec()).unwrap());
        let x = tape.constant(Tensor::matrix(1, 1, vec![xi]).unwrap());
        let out = tf.encode_sequence(&mut tape, &bound, w, x, None).unwrap();
        tape.data(out).to_vec()
    }

    #[test]
    fn causal_outputs_ignore_later_tokens() {
        let tf = Transformer::new(config(2), 1).unwrap();
        let win = window(2, 5);
        let base = sequence(&tf, &win, 0.3);
        let mut moved = win.clone();
        for v in &mut moved[3 * 3..4 * 3] {
            *v += 1.7;
        }
        let out = sequence(&tf, &moved, 0.3);
        assert_eq!(&out[..3 * 8], &base[..3 * 8]);
        assert_ne!(&out[3 * 8..4 * 8], &base[3 * 8..4 * 8]);
    }

    #[test]
    fn attention_rows_are_normalised_and_masked() {
        let tf = Transformer::new(config(2), 3).unwrap();
        let mut tape = Tape::new();
        let bound = tf.params.bind(&mut tape, false);
        let m = 2;
        let w = tape.constant(Tensor::matrix(m * 5, 3, window(4, m * 5)).unwrap());
        let x = tape.constant(Tensor::matrix(m, 1, vec![0.1, -0.6]).unwrap());
        let mut trace = Trace {
            self_weights: vec![],
            cross_weights: vec![],
        };
        tf.encode_sequence(&mut tape, &bound, w, x, Some(&mut trace)).unwrap();
        for &a in trace.self_weights.iter().chain(&trace.cross_weights) {
            let t = tape.value(a);
            let cols = t.last_dim();
            for (r, row) in t.data().chunks_exact(cols).enumerate() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                if cols == m * 5 {
                    for (c, v) in row.iter().enumerate() {
                        let visible = c / 5 == r / 5 && c <= r;
                        assert_eq!(*v > 0.0, visible);
                    }
                }
            }
        }
    }

    #[test]
    fn batched_forecast_matches_single_windows() {
        let tf = perturbed(config(2), 5);
        let (a, b) = (window(6, 5), window(7, 5));
        let mut tape = Tape::new();
        let bound = tf.params.bind(&mut tape, false);
        let both: Vec<f64> = a.iter().chain(&b).copied().collect();
        let w = tape.constant(Tensor::matrix(10, 3, both).unwrap());
        let x = tape.constant(Tensor::matrix(2, 1, vec![0.2, -0.4]).unwrap());
        let out = tf.forecast_on(&mut tape, &bound, w, x).unwrap();
        let batched = tape.data(out);
        let fa = tf.forecast(&a, &[0.2]).unwrap();
        let fb = tf.forecast(&b, &[-0.4]).unwrap();
        for (x, y) in batched.iter().zip(fa.iter().chain(&fb)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_value_projections_reduce_block_to_feed_forward() {
        let mut tf = Transformer::new(
            TransformerConfig {
                heads: 1,
                blocks: 1,
                ..config(1)
            },
            8,
        )
        .unwrap();
        for id in tf.value_projections() {
            tf.params.get_mut(id).data_mut().fill(0.0);
        }
        let win = window(9, 5);
        let out = sequence(&tf, &win, 0.5);
        // Reference: the same block with both attention sublayers removed.
        let mut tape = Tape::new();
        let bound = tf.params.bind(&mut tape, false);
        let b = &tf.blocks[0];
        let w = tape.constant(Tensor::matrix(5, 3, win).unwrap());
        let pe = tape.constant(Tensor::matrix(5, 8, positional_encoding(5, 8)).unwrap());
        let p = tf.input.forward(&mut tape, &bound, w).unwrap();
        let x = tape.add(p, pe).unwrap();
        // Output projection biases still pass through the residual path.
        let o1 = tape.add_row(x, bound[b.self_attn.output.bias.unwrap()]).unwrap();
        let x = b.norm1.forward(&mut tape, &bound, o1).unwrap();
        let o2 = tape.add_row(x, bound[b.cross_attn.output.bias.unwrap()]).unwrap();
        let x = b.norm2.forward(&mut tape, &bound, o2).unwrap();
        let f = b.ff_in.forward(&mut tape, &bound, x).unwrap();
        let f = tape.gelu(f).unwrap();
        let f = b.ff_out.forward(&mut tape, &bound, f).unwrap();
        let r = tape.add(x, f).unwrap();
        let expected = b.norm3.forward(&mut tape, &bound, r).unwrap();
        for (a, e) in out.iter().zip(tape.data(expected)) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn positional_encoding_breaks_permutation_symmetry() {
        let tf = Transformer::new(config(2), 10).unwrap();
        // Identical tokens give identical rows unless positions are encoded.
        let out = sequence(&tf, &[0.4, -0.2, 0.7].repeat(5), 0.0);
        let rows: Vec<&[f64]> = out.chunks_exact(8).collect();
        assert!(rows.windows(2).all(|p| p[0] != p[1]));
    }

    #[test]
    fn fresh_forecaster_is_persistence() {
        let tf = Transformer::new(config(2), 3).unwrap();
        let win = window(4, 5);
        assert_eq!(tf.forecast(&win, &[0.3]).unwrap(), win[12..].repeat(2));
    }

    #[test]
    fn zeroed_xi_pathway_makes_output_parameter_invariant() {
        let mut tf = Transformer::new(config(2), 12).unwrap();
        let win = window(13, 5);
        assert_ne!(sequence(&tf, &win, 0.9), sequence(&tf, &win, -0.9));
        for id in tf.xi_pathway() {
            tf.params.get_mut(id).data_mut().fill(0.0);
        }
        assert_eq!(sequence(&tf, &win, 0.9), sequence(&tf, &win, -0.9));
    }

    #[test]
    fn rollout_with_unit_horizon_matches_forecast() {
        let tf = perturbed(
            TransformerConfig {
                horizon: 1,
                ..config(2)
            },
            14,
        );
        let win = window(15, 5);
        let f = tf.forecast(&win, &[0.1]).unwrap();
        let r = tf.rollout(&win, &[0.1], 4).unwrap();
        assert_eq!(&r[..3], &f[..]);
        assert_eq!(r.len(), 12);
        assert_eq!(tf.rollout(&win, &[0.1], 4).unwrap(), r);
    }

    #[test]
    fn wrong_window_length_is_rejected() {
        let tf = Transformer::new(config(2), 16).unwrap();
        assert!(matches!(tf.forecast(&[0.0; 12], &[0.0]), Err(Error::Dimension { .. })));
        assert!(Transformer::new(
            TransformerConfig {
                width: 9,
                ..config(2)
            },
            0
        )
        .is_err());
    }

    #[test]
    fn forward_counter_tracks_calls() {
        let tf = Transformer::new(config(1), 17).unwrap();
        let before = tf.forward_calls();
        tf.rollout(&window(18, 5), &[0.0], 3).unwrap();
        assert_eq!(tf.forward_calls(), before + 3);
    }
}
