//! Parameter storage and the two layer types shared by the encoder, decoder
//! and transformer.

use std::ops::Index;

use rand::Rng;

use crate::autodiff::{Adam, AdamState, Tape, Tensor, TensorError, Var};

pub const LAYER_NORM_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered, named collection of weight tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Tape handles for every parameter of a [`ParamSet`], in registration order.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalars.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape`, tracked iff `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound(
            self.tensors
                .iter()
                .map(|t| {
                    if trainable {
                        tape.param(t.clone())
                    } else {
                        tape.constant(t.clone())
                    }
                })
                .collect(),
        )
    }

    pub fn adam_state(&self) -> AdamState {
        AdamState::new(self.tensors.iter().map(Tensor::len))
    }

    /// Applies one Adam step using the gradients held by `tape` for `bound`.
    ///
    /// Parameters unreachable from the loss receive a zero gradient.
    pub fn adam_step(
        &mut self,
        tape: &Tape,
        bound: &Bound,
        adam: &Adam,
        state: &mut AdamState,
    ) -> Result<(), TensorError> {
        let zeros: Vec<Vec<f64>> = self.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        let grads: Vec<&[f64]> = bound
            .0
            .iter()
            .zip(&zeros)
            .map(|(v, z)| tape.grad(*v).unwrap_or(z))
            .collect();
        let mut params: Vec<&mut [f64]> = self.tensors.iter_mut().map(|t| t.data_mut()).collect();
        adam.step(&mut params, &grads, state)
    }

    /// Concatenation of all parameter values in registration order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<(), TensorError> {
        if flat.len() != self.num_values() {
            return Err(TensorError::DataLength {
                shape: vec![self.num_values()],
                len: flat.len(),
            });
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Fully connected layer `y = x W + b` with `W` of shape `[fan_in, fan_out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-a..a))
            .collect();
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::matrix(fan_in, fan_out, w).expect("positive extents"),
        );
        let bias = bias.then(|| params.add(format!("{name}.bias"), Tensor::zeros(vec![fan_out])));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var, TensorError> {
        let y = tape.matmul(x, bound[self.weight])?;
        match self.bias {
            Some(b) => tape.add_row(y, bound[b]),
            None => Ok(y),
        }
    }
}

/// Layer norm with learned gain and offset.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(params: &mut ParamSet, name: &str, width: usize) -> Self {
        Self {
            gamma: params.add(format!("{name}.gamma"), Tensor::filled(vec![width], 1.0)),
            beta: params.add(format!("{name}.beta"), Tensor::zeros(vec![width])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var, TensorError> {
        tape.layer_norm(
            x,
            Some(bound[self.gamma]),
            Some(bound[self.beta]),
            LAYER_NORM_EPS,
        )
    }
}
