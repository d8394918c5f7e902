use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::engine::{Init, ParameterStore, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    weight: Range<usize>,
    bias: Range<usize>,
    fan_in: usize,
    fan_out: usize,
}

/// Fully connected network `ℝ^p → ℝ^out`. With no hidden layers it is an
/// affine map. Weights are stored row-major (`[out][in]`); only the final
/// weight matrix is L2-regularized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpTrunk {
    input: usize,
    hidden: Vec<usize>,
    output: usize,
    activation: Activation,
    layers: Vec<Layer>,
}

impl MlpTrunk {
    /// Registers the layers in `store` under `prefix`. The output bias uses
    /// `output_bias`; other biases start at zero.
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
        output_bias: Init,
    ) -> Result<Self> {
        if hidden.contains(&0) || output == 0 {
            return Err(Error::Config("layer widths must be at least 1".into()));
        }
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let depth = widths.len() - 1;
        let layers = (0..depth)
            .map(|l| {
                let (fan_in, fan_out) = (widths[l], widths[l + 1]);
                let last = l + 1 == depth;
                let weight = store.add(
                    format!("{prefix}layer{l}.weight"),
                    fan_in * fan_out,
                    Init::Glorot { fan_in, fan_out },
                    last,
                );
                let bias_init = if last { output_bias.clone() } else { Init::Zeros };
                let bias = store.add(format!("{prefix}layer{l}.bias"), fan_out, bias_init, false);
                Layer {
                    weight,
                    bias,
                    fan_in,
                    fan_out,
                }
            })
            .collect();
        Ok(Self {
            input,
            hidden: hidden.to_vec(),
            output,
            activation,
            layers,
        })
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn output(&self) -> usize {
        self.output
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn is_linear(&self) -> bool {
        self.hidden.is_empty()
    }

    fn activate<S: Scalar>(&self, v: S) -> S {
        match self.activation {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.relu(),
        }
    }

    pub fn forward<S: Scalar>(&self, params: &[S], x: &[f64]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.input);
        let first = &self.layers[0];
        let mut h: Vec<S> = (0..first.fan_out)
            .map(|o| {
                let w = &params[first.weight.start + o * first.fan_in..][..first.fan_in];
                S::dot_const(w, x, params[first.bias.start + o])
            })
            .collect();
        for layer in &self.layers[1..] {
            let a: Vec<S> = h.iter().map(|&v| self.activate(v)).collect();
            h = (0..layer.fan_out)
                .map(|o| {
                    let w = &params[layer.weight.start + o * layer.fan_in..][..layer.fan_in];
                    S::dot(w, &a, params[layer.bias.start + o])
                })
                .collect();
        }
        h
    }

    /// Weights and bias of an affine trunk for output `o`.
    pub fn affine_coefficients<'a>(&self, params: &'a [f64], o: usize) -> Option<(f64, &'a [f64])> {
        if !self.is_linear() {
            return None;
        }
        let l = &self.layers[0];
        Some((params[l.bias.start + o], &params[l.weight.start + o * l.fan_in..][..l.fan_in]))
    }
}
