//! Parameter-conditioned variational autoencoder acting on single snapshots.
//!
//! Encoder: `[φ ∥ E_enc ξ] → GELU MLP → (μ, log σ²)`.
//! Decoder: `[z ∥ E_dec ξ] → GELU MLP → φ̂`.
//! `ξ` enters as the schema-scaled feature vector (see
//! [`ParamSchema::encode`](crate::datagen::ParamSchema::encode)).

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::nn::{Bound, Linear, ParamSet};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    pub state_dim: usize,
    pub latent_dim: usize,
    /// Encoder widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub param_dim: usize,
    /// Width of the learned ξ embedding concatenated to each input layer.
    #[serde(default = "default_param_embed")]
    pub param_embed: usize,
}

fn default_param_embed() -> usize {
    8
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.latent_dim == 0 || self.param_embed == 0 {
            return Err(Error::Config("vae dimensions must be positive".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("vae hidden widths must be positive".into()));
        }
        if self.latent_dim >= self.state_dim {
            return Err(Error::Config(format!(
                "latent_dim {} must be smaller than state_dim {}",
                self.latent_dim, self.state_dim
            )));
        }
        Ok(())
    }
}

/// Diagonal Gaussian `N(μ, diag exp(log_var))` for one snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDistribution {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentDistribution {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }
}

/// `z = μ + σ ⊙ noise`.
pub fn reparameterize(dist: &LatentDistribution, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != dist.dim() {
        return Err(Error::Dimension {
            context: "reparameterize noise",
            expected: dist.dim(),
            got: noise.len(),
        });
    }
    Ok(dist
        .mu
        .iter()
        .zip(&dist.log_var)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// KL divergence from the standard-normal prior,
/// `½ Σᵢ (σᵢ² + μᵢ² − 1 − log σᵢ²)`.
pub fn kld(dist: &LatentDistribution) -> f64 {
    0.5 * dist
        .mu
        .iter()
        .zip(&dist.log_var)
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

/// Tape version of [`kld`] for `[rows, Z]` inputs: summed over latents and
/// averaged over rows.
pub fn kld_on(tape: &mut Tape, mu: Var, log_var: Var) -> Result<Var> {
    let rows = tape.shape(mu)[0];
    let var = tape.exp(log_var)?;
    let mu2 = tape.mul(mu, mu)?;
    let a = tape.add(var, mu2)?;
    let b = tape.sub(a, log_var)?;
    let c = tape.add_scalar(b, -1.0)?;
    let s = tape.sum(c)?;
    Ok(tape.scale(s, 0.5 / rows as f64)?)
}

/// `z = μ + exp(½ log_var) ⊙ noise` on the tape.
pub fn reparameterize_on(tape: &mut Tape, mu: Var, log_var: Var, noise: Var) -> Result<Var> {
    let half = tape.scale(log_var, 0.5)?;
    let sigma = tape.exp(half)?;
    let spread = tape.mul(sigma, noise)?;
    Ok(tape.add(mu, spread)?)
}

#[derive(Debug, Clone)]
pub struct Vae {
    pub config: VaeConfig,
    pub params: ParamSet,
    enc_embed: Linear,
    encoder: Vec<Linear>,
    mu_head: Linear,
    log_var_head: Linear,
    dec_embed: Linear,
    decoder: Vec<Linear>,
    out: Linear,
}

impl Vae {
    pub fn new(config: VaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(seed);
        let mut params = ParamSet::new();
        let p = config.param_dim.max(1);
        let e = config.param_embed;
        let enc_embed = Linear::new(&mut params, "vae.enc_embed", p, e, true, &mut rng);
        let mut encoder = Vec::new();
        let mut width = config.state_dim + e;
        for (i, &h) in config.hidden.iter().enumerate() {
            encoder.push(Linear::new(&mut params, &format!("vae.enc{i}"), width, h, true, &mut rng));
            width = h;
        }
        let mu_head = Linear::new(&mut params, "vae.mu", width, config.latent_dim, true, &mut rng);
        let log_var_head =
            Linear::new(&mut params, "vae.log_var", width, config.latent_dim, true, &mut rng);
        let dec_embed = Linear::new(&mut params, "vae.dec_embed", p, e, true, &mut rng);
        let mut decoder = Vec::new();
        let mut width = config.latent_dim + e;
        for (i, &h) in config.hidden.iter().rev().enumerate() {
            decoder.push(Linear::new(&mut params, &format!("vae.dec{i}"), width, h, true, &mut rng));
            width = h;
        }
        let out = Linear::new(&mut params, "vae.out", width, config.state_dim, true, &mut rng);
        Ok(Self {
            config,
            params,
            enc_embed,
            encoder,
            mu_head,
            log_var_head,
            dec_embed,
            decoder,
            out,
        })
    }

    /// Handles to the log-variance head, e.g. for tests that pin σ.
    pub fn log_var_head(&self) -> &Linear {
        &self.log_var_head
    }

    pub fn mu_head(&self) -> &Linear {
        &self.mu_head
    }

    pub fn output_layer(&self) -> &Linear {
        &self.out
    }

    pub fn encoder_embedding(&self) -> &Linear {
        &self.enc_embed
    }

    fn mlp(tape: &mut Tape, bound: &Bound, layers: &[Linear], mut x: Var) -> Result<Var> {
        for layer in layers {
            let y = layer.forward(tape, bound, x)?;
            x = tape.gelu(y)?;
        }
        Ok(x)
    }

    fn check_cols(&self, tape: &Tape, v: Var, cols: usize, context: &'static str) -> Result<usize> {
        let shape = tape.shape(v);
        if shape.len() != 2 || shape[1] != cols {
            return Err(Error::Dimension {
                context,
                expected: cols,
                got: *shape.last().unwrap_or(&0),
            });
        }
        Ok(shape[0])
    }

    /// `phi: [rows, state_dim]`, `xi: [rows, param_dim]` → `(μ, log_var)`, each `[rows, Z]`.
    pub fn encode_on(&self, tape: &mut Tape, bound: &Bound, phi: Var, xi: Var) -> Result<(Var, Var)> {
        let rows = self.check_cols(tape, phi, self.config.state_dim, "vae encoder input")?;
        let xrows = self.check_cols(tape, xi, self.config.param_dim.max(1), "vae encoder parameters")?;
        if rows != xrows {
            return Err(Error::Dimension {
                context: "vae encoder parameter rows",
                expected: rows,
                got: xrows,
            });
        }
        let emb = self.enc_embed.forward(tape, bound, xi)?;
        let x = tape.concat(&[phi, emb], 1)?;
        let h = Self::mlp(tape, bound, &self.encoder, x)?;
        let mu = self.mu_head.forward(tape, bound, h)?;
        let log_var = self.log_var_head.forward(tape, bound, h)?;
        Ok((mu, log_var))
    }

    /// `z: [rows, Z]`, `xi: [rows, param_dim]` → `[rows, state_dim]`.
    pub fn decode_on(&self, tape: &mut Tape, bound: &Bound, z: Var, xi: Var) -> Result<Var> {
        let rows = self.check_cols(tape, z, self.config.latent_dim, "vae decoder input")?;
        let xrows = self.check_cols(tape, xi, self.config.param_dim.max(1), "vae decoder parameters")?;
        if rows != xrows {
            return Err(Error::Dimension {
                context: "vae decoder parameter rows",
                expected: rows,
                got: xrows,
            });
        }
        let emb = self.dec_embed.forward(tape, bound, xi)?;
        let x = tape.concat(&[z, emb], 1)?;
        let h = Self::mlp(tape, bound, &self.decoder, x)?;
        Ok(self.out.forward(tape, bound, h)?)
    }

    /// Repeats the scaled parameter vector once per row; an empty schema is
    /// represented by a single zero feature.
    pub fn xi_rows(&self, xi: &[f64], rows: usize) -> Result<Tensor> {
        xi_matrix(xi, self.config.param_dim, rows)
    }

    /// Encodes `rows = phi.len() / state_dim` snapshots sharing one ξ.
    pub fn encode_batch(&self, phi: &[f64], xi: &[f64]) -> Result<Vec<LatentDistribution>> {
        let n = self.config.state_dim;
        if phi.is_empty() || phi.len() % n != 0 {
            return Err(Error::Dimension {
                context: "vae encoder input",
                expected: n,
                got: phi.len(),
            });
        }
        let rows = phi.len() / n;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let phi = tape.constant(Tensor::matrix(rows, n, phi.to_vec())?);
        let xi = tape.constant(self.xi_rows(xi, rows)?);
        let (mu, lv) = self.encode_on(&mut tape, &bound, phi, xi)?;
        let z = self.config.latent_dim;
        Ok(tape
            .data(mu)
            .chunks_exact(z)
            .zip(tape.data(lv).chunks_exact(z))
            .map(|(m, l)| LatentDistribution {
                mu: m.to_vec(),
                log_var: l.to_vec(),
            })
            .collect())
    }

    pub fn encode(&self, phi: &[f64], xi: &[f64]) -> Result<LatentDistribution> {
        if phi.len() != self.config.state_dim {
            return Err(Error::Dimension {
                context: "vae encoder input",
                expected: self.config.state_dim,
                got: phi.len(),
            });
        }
        Ok(self.encode_batch(phi, xi)?.remove(0))
    }

    /// Decodes `rows = z.len() / Z` latent vectors sharing one ξ; row-major output.
    pub fn decode_batch(&self, z: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        let zd = self.config.latent_dim;
        if z.is_empty() || z.len() % zd != 0 {
            return Err(Error::Dimension {
                context: "vae decoder input",
                expected: zd,
                got: z.len(),
            });
        }
        let rows = z.len() / zd;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let zv = tape.constant(Tensor::matrix(rows, zd, z.to_vec())?);
        let xv = tape.constant(self.xi_rows(xi, rows)?);
        let out = self.decode_on(&mut tape, &bound, zv, xv)?;
        Ok(tape.data(out).to_vec())
    }

    pub fn decode(&self, z: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.config.latent_dim {
            return Err(Error::Dimension {
                context: "vae decoder input",
                expected: self.config.latent_dim,
                got: z.len(),
            });
        }
        self.decode_batch(z, xi)
    }
}

/// `[rows, max(param_dim, 1)]` matrix with `xi` on every row.
pub(crate) fn xi_matrix(xi: &[f64], param_dim: usize, rows: usize) -> Result<Tensor> {
    if xi.len() != param_dim {
        return Err(Error::Dimension {
            context: "parameter vector",
            expected: param_dim,
            got: xi.len(),
        });
    }
    let row: Vec<f64> = if param_dim == 0 { vec![0.0] } else { xi.to_vec() };
    let width = row.len();
    let data = row.iter().copied().cycle().take(rows * width).collect();
    Ok(Tensor::matrix(rows, width, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal;

    fn config() -> VaeConfig {
        VaeConfig {
            state_dim: 6,
            latent_dim: 2,
            hidden: vec![8],
            param_dim: 1,
            param_embed: 3,
        }
    }

    fn zero_layer(vae: &mut Vae, layer: &Linear) {
        vae.params.get_mut(layer.weight).data_mut().fill(0.0);
    }

    #[test]
    fn zero_weight_heads_return_their_biases() {
        let mut vae = Vae::new(config(), 1).unwrap();
        let (mu, lv) = (vae.mu_head.clone(), vae.log_var_head.clone());
        zero_layer(&mut vae, &mu);
        zero_layer(&mut vae, &lv);
        vae.params.get_mut(mu.bias.unwrap()).data_mut().copy_from_slice(&[0.3, -0.2]);
        vae.params.get_mut(lv.bias.unwrap()).data_mut().copy_from_slice(&[0.5, -1.0]);
        let d = vae.encode(&[1.0, -2.0, 0.5, 0.0, 3.0, 1.0], &[0.4]).unwrap();
        assert_eq!(d.mu, vec![0.3, -0.2]);
        assert_eq!(d.log_var, vec![0.5, -1.0]);
        let var: Vec<f64> = d.sigma().iter().map(|s| s * s).collect();
        assert!((var[0] - 0.5f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_decoder_outputs_its_bias() {
        let mut vae = Vae::new(config(), 2).unwrap();
        let out = vae.out.clone();
        zero_layer(&mut vae, &out);
        let bias = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        vae.params.get_mut(out.bias.unwrap()).data_mut().copy_from_slice(&bias);
        assert_eq!(vae.decode(&[0.7, -3.0], &[0.1]).unwrap(), bias);
    }

    #[test]
    fn encoding_is_deterministic_and_parameter_sensitive() {
        let mut vae = Vae::new(config(), 3).unwrap();
        let phi = [0.1, 0.2, 0.3, -0.4, 0.5, 0.0];
        assert_eq!(vae.encode(&phi, &[0.2]).unwrap(), vae.encode(&phi, &[0.2]).unwrap());
        let emb = vae.enc_embed.weight;
        vae.params.get_mut(emb).data_mut()[0] += 0.5;
        assert_ne!(vae.encode(&phi, &[0.2]).unwrap(), vae.encode(&phi, &[-0.7]).unwrap());
    }

    #[test]
    fn dimension_errors() {
        let vae = Vae::new(config(), 4).unwrap();
        assert!(matches!(vae.encode(&[0.0; 5], &[0.0]), Err(Error::Dimension { .. })));
        assert!(matches!(vae.decode(&[0.0; 3], &[0.0]), Err(Error::Dimension { .. })));
        assert!(matches!(vae.decode(&[0.0; 2], &[0.0, 1.0]), Err(Error::Dimension { .. })));
        let bad = VaeConfig {
            latent_dim: 6,
            ..config()
        };
        assert!(Vae::new(bad, 0).is_err());
    }

    #[test]
    fn reparameterize_limits() {
        let d = LatentDistribution {
            mu: vec![1.0, -2.0],
            log_var: vec![0.3, -40.0],
        };
        assert_eq!(reparameterize(&d, &[0.0, 0.0]).unwrap(), d.mu);
        let z = reparameterize(&d, &[0.0, 5.0]).unwrap();
        assert!((z[1] + 2.0).abs() < 1e-7);
        assert!(reparameterize(&d, &[0.0]).is_err());
    }

    #[test]
    fn reparameterized_sample_mean_converges() {
        let d = LatentDistribution {
            mu: vec![0.5, -1.5, 3.0],
            log_var: vec![0.0, 1.0, -2.0],
        };
        let n = 100_000;
        let mut r = rng::seeded(9);
        let mut sum = vec![0.0; 3];
        for _ in 0..n {
            let z = reparameterize(&d, &standard_normal(&mut r, 3)).unwrap();
            for (s, v) in sum.iter_mut().zip(z) {
                *s += v;
            }
        }
        for ((s, m), sig) in sum.iter().zip(&d.mu).zip(d.sigma()) {
            assert!((s / n as f64 - m).abs() < 3.0 * sig / (n as f64).sqrt());
        }
    }

    #[test]
    fn kld_closed_forms() {
        let prior = LatentDistribution {
            mu: vec![0.0; 4],
            log_var: vec![0.0; 4],
        };
        assert_eq!(kld(&prior), 0.0);
        let one = LatentDistribution {
            mu: vec![1.0],
            log_var: vec![0.0],
        };
        assert!((kld(&one) - 0.5).abs() < 1e-12);
        let e = LatentDistribution {
            mu: vec![0.0],
            log_var: vec![1.0],
        };
        let expected = 0.5 * (std::f64::consts::E - 2.0);
        assert!((kld(&e) - expected).abs() < 1e-12);
        assert!((kld(&e) - 0.3591).abs() < 1e-4);
    }

    #[test]
    fn kld_gradient_wrt_mu_is_mu() {
        let mu = vec![0.3, -1.2, 2.5];
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::matrix(1, 3, mu.clone()).unwrap().with_grad());
        let lv = tape.leaf(Tensor::matrix(1, 3, vec![0.1, -0.4, 0.7]).unwrap().with_grad());
        let k = kld_on(&mut tape, m, lv).unwrap();
        tape.backward(k).unwrap();
        for (g, m) in tape.grad(m).unwrap().iter().zip(&mu) {
            assert!((g - m).abs() < 1e-10);
        }
    }

    #[test]
    fn decoder_jacobian_is_bounded() {
        let vae = Vae::new(config(), 5).unwrap();
        let z0 = [0.2, -0.3];
        let base = vae.decode(&z0, &[0.0]).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut z = z0;
            z[j] += h;
            let moved = vae.decode(&z, &[0.0]).unwrap();
            let col = moved.iter().zip(&base).map(|(a, b)| ((a - b) / h).abs()).fold(0.0, f64::max);
            assert!(col.is_finite() && col < 100.0);
        }
    }

    #[test]
    fn batch_and_single_paths_agree() {
        let vae = Vae::new(config(), 6).unwrap();
        let phi: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let batch = vae.encode_batch(&phi, &[0.3]).unwrap();
        let single = vae.encode(&phi[6..], &[0.3]).unwrap();
        for (a, b) in batch[1].mu.iter().zip(&single.mu) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
