//! Reverse-mode gradients against central finite differences, primitive by
//! primitive and through the full reduced-order model loss.

use rand::Rng;
use updrom::autodiff::{Tape, Tensor, Var};
use updrom::nn::ParamSet;
use updrom::rng::seeded;
use updrom::transformer::{Transformer, TransformerConfig};
use updrom::vae::{kld_on, reparameterize_on, Vae, VaeConfig};

const H: f64 = 1e-5;

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = seeded(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn close(analytic: f64, numeric: f64, what: &str) {
    let tol = 1e-6 * numeric.abs().max(1.0);
    assert!(
        (analytic - numeric).abs() <= tol,
        "{what}: analytic {analytic:.10e} vs finite difference {numeric:.10e}"
    );
}

/// Builds `sum(w ⊙ f(inputs))` for fixed random weights `w`, so every output
/// element contributes a distinct cotangent.
fn weighted(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = tape.shape(out).to_vec();
    let w = tape.constant(random(&shape, seed, -1.0, 1.0));
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod).unwrap()
}

fn check<F>(name: &str, inputs: Vec<Tensor>, f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |inputs: &[Tensor], track: bool| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| if track { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        let out = f(&mut tape, &vars);
        let loss = weighted(&mut tape, out, 99);
        (tape, vars, loss)
    };
    let (mut tape, vars, loss) = eval(&inputs, true);
    tape.backward(loss).unwrap();
    for (i, v) in vars.iter().enumerate() {
        let grad = tape.grad(*v).expect("input reached by the loss").to_vec();
        for k in 0..inputs[i].len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[k] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[k] -= H;
            let (tp, _, lp) = eval(&plus, false);
            let (tm, _, lm) = eval(&minus, false);
            let fd = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * H);
            close(grad[k], fd, &format!("{name} input {i} element {k}"));
        }
    }
}

#[test]
fn elementwise_primitives() {
    let a = || random(&[3, 4], 1, -1.5, 1.5);
    let b = || random(&[3, 4], 2, -1.5, 1.5);
    check("add", vec![a(), b()], |t, v| t.add(v[0], v[1]).unwrap());
    check("sub", vec![a(), b()], |t, v| t.sub(v[0], v[1]).unwrap());
    check("mul", vec![a(), b()], |t, v| t.mul(v[0], v[1]).unwrap());
    check("mul by scalar", vec![a(), random(&[1], 3, 0.5, 2.0)], |t, v| t.mul(v[0], v[1]).unwrap());
    check("add_scalar", vec![a()], |t, v| t.add_scalar(v[0], 0.7).unwrap());
    check("scale", vec![a()], |t, v| t.scale(v[0], -1.3).unwrap());
    check("exp", vec![a()], |t, v| t.exp(v[0]).unwrap());
    check("log", vec![random(&[3, 4], 4, 0.2, 3.0)], |t, v| t.log(v[0]).unwrap());
    check("tanh", vec![a()], |t, v| t.tanh(v[0]).unwrap());
    check("gelu", vec![random(&[3, 4], 5, -4.0, 4.0)], |t, v| t.gelu(v[0]).unwrap());
}

#[test]
fn linear_algebra_primitives() {
    check(
        "matmul",
        vec![random(&[3, 5], 6, -1.0, 1.0), random(&[5, 2], 7, -1.0, 1.0)],
        |t, v| t.matmul(v[0], v[1]).unwrap(),
    );
    check(
        "add_row",
        vec![random(&[4, 3], 8, -1.0, 1.0), random(&[3], 9, -1.0, 1.0)],
        |t, v| t.add_row(v[0], v[1]).unwrap(),
    );
    check("transpose", vec![random(&[2, 5], 10, -1.0, 1.0)], |t, v| t.transpose(v[0]).unwrap());
    check("reshape", vec![random(&[2, 6], 11, -1.0, 1.0)], |t, v| t.reshape(v[0], vec![3, 4]).unwrap());
}

#[test]
fn normalising_primitives() {
    check("softmax", vec![random(&[4, 5], 12, -3.0, 3.0)], |t, v| t.softmax(v[0]).unwrap());
    check(
        "layer_norm affine",
        vec![
            random(&[3, 6], 13, -2.0, 2.0),
            random(&[6], 14, 0.5, 1.5),
            random(&[6], 15, -0.5, 0.5),
        ],
        |t, v| t.layer_norm(v[0], Some(v[1]), Some(v[2]), 1e-10).unwrap(),
    );
    check("layer_norm plain", vec![random(&[2, 5], 16, -2.0, 2.0)], |t, v| {
        t.layer_norm(v[0], None, None, 1e-10).unwrap()
    });
}

#[test]
fn structural_primitives() {
    check(
        "concat axis 0",
        vec![random(&[2, 3], 17, -1.0, 1.0), random(&[4, 3], 18, -1.0, 1.0)],
        |t, v| t.concat(&[v[0], v[1]], 0).unwrap(),
    );
    check(
        "concat axis 1",
        vec![random(&[3, 2], 19, -1.0, 1.0), random(&[3, 1], 20, -1.0, 1.0)],
        |t, v| t.concat(&[v[0], v[1], v[0]], 1).unwrap(),
    );
    check("slice", vec![random(&[4, 5], 21, -1.0, 1.0)], |t, v| t.slice(v[0], 1, 1, 4).unwrap());
    check("sum", vec![random(&[3, 3], 22, -1.0, 1.0)], |t, v| t.sum(v[0]).unwrap());
    check("mean", vec![random(&[3, 3], 23, -1.0, 1.0)], |t, v| t.mean(v[0]).unwrap());
    check(
        "mse",
        vec![random(&[3, 3], 24, -1.0, 1.0), random(&[3, 3], 25, -1.0, 1.0)],
        |t, v| t.mse(v[0], v[1]).unwrap(),
    );
}

struct Model {
    vae: Vae,
    tf: Transformer,
}

const N: usize = 6;
const Z: usize = 2;
const Q: usize = 3;
const HZN: usize = 2;
const M: usize = 2;

fn model() -> Model {
    let vae = Vae::new(
        VaeConfig {
            state_dim: N,
            latent_dim: Z,
            hidden: vec![5],
            param_dim: 1,
            param_embed: 3,
        },
        3,
    )
    .unwrap();
    let tf = Transformer::new(
        TransformerConfig {
            latent_dim: Z,
            lookback: Q,
            horizon: HZN,
            heads: 2,
            blocks: 1,
            width: 4,
            ff_width: 6,
            param_dim: 1,
        },
        4,
    )
    .unwrap();
    Model { vae, tf }
}

/// Reconstruction, KLD, latent and decoded terms of the joint loss over `M`
/// windows, with fixed reparameterisation noise.
fn model_loss(model: &Model, track: bool) -> (Tape, Vec<Var>, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vb = model.vae.params.bind(&mut tape, track);
    let tb = model.tf.params.bind(&mut tape, track);
    let rows = M * (Q + HZN);
    let phi = tape.constant(random(&[rows, N], 30, -1.0, 1.0));
    let xi_rows = Tensor::matrix(rows, 1, (0..rows).map(|r| if r % 2 == 0 { 0.2 } else { 0.8 }).collect()).unwrap();
    let xi_all = tape.constant(xi_rows);
    let (mu, log_var) = model.vae.encode_on(&mut tape, &vb, phi, xi_all).unwrap();
    let mu_lb = tape.slice(mu, 0, 0, M * Q).unwrap();
    let lv_lb = tape.slice(log_var, 0, 0, M * Q).unwrap();
    let mu_tg = tape.slice(mu, 0, M * Q, rows).unwrap();
    let phi_lb = tape.slice(phi, 0, 0, M * Q).unwrap();
    let phi_tg = tape.slice(phi, 0, M * Q, rows).unwrap();
    let xi_lb = tape.slice(xi_all, 0, 0, M * Q).unwrap();
    let xi_tg = tape.slice(xi_all, 0, M * Q, rows).unwrap();
    let eps = tape.constant(random(&[M * Q, Z], 31, -2.0, 2.0));
    let z = reparameterize_on(&mut tape, mu_lb, lv_lb, eps).unwrap();
    let recon = model.vae.decode_on(&mut tape, &vb, z, xi_lb).unwrap();
    let recon = tape.mse(recon, phi_lb).unwrap();
    let kld = kld_on(&mut tape, mu_lb, lv_lb).unwrap();
    let xi_m = tape.constant(Tensor::matrix(M, 1, vec![0.2, 0.8]).unwrap());
    let pred = model.tf.forecast_on(&mut tape, &tb, z, xi_m).unwrap();
    let target = tape.reshape(mu_tg, vec![M, HZN * Z]).unwrap();
    let latent = tape.mse(pred, target).unwrap();
    let pred_rows = tape.reshape(pred, vec![M * HZN, Z]).unwrap();
    let decoded = model.vae.decode_on(&mut tape, &vb, pred_rows, xi_tg).unwrap();
    let decoded = tape.mse(decoded, phi_tg).unwrap();
    let kld = tape.scale(kld, 0.1).unwrap();
    let a = tape.add(recon, kld).unwrap();
    let b = tape.add(latent, decoded).unwrap();
    let total = tape.add(a, b).unwrap();
    (tape, vb.vars().to_vec(), tb.vars().to_vec(), total)
}

fn nudge(model: &mut Model, net: usize, tensor: usize, k: usize, d: f64) {
    let ps: &mut ParamSet = if net == 0 { &mut model.vae.params } else { &mut model.tf.params };
    ps.iter_mut().nth(tensor).unwrap().1.data_mut()[k] += d;
}

#[test]
fn full_model_loss_gradient_matches_finite_differences() {
    let mut model = model();
    let (mut tape, vae_vars, tf_vars, loss) = model_loss(&model, true);
    tape.backward(loss).unwrap();
    let mut checked = 0;
    for (net, vars) in [(0, vae_vars), (1, tf_vars)] {
        for (i, v) in vars.iter().enumerate() {
            let grad = tape.grad(*v).map(<[f64]>::to_vec);
            let len = tape.value(*v).len();
            let grad = grad.unwrap_or_else(|| vec![0.0; len]);
            for (k, g) in grad.iter().enumerate() {
                nudge(&mut model, net, i, k, H);
                let up = model_loss(&model, false);
                nudge(&mut model, net, i, k, -2.0 * H);
                let down = model_loss(&model, false);
                nudge(&mut model, net, i, k, H);
                let fd = (up.0.value(up.3).item() - down.0.value(down.3).item()) / (2.0 * H);
                close(*g, fd, &format!("network {net} tensor {i} element {k}"));
                checked += 1;
            }
        }
    }
    assert!(checked > 300, "only {checked} parameters checked");
}
