use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Elu => elu(x),
        }
    }

    /// Derivative expressed through the pre-activation value.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => elu_derivative(x),
        }
    }
}

/// ELU with alpha = 1.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn elu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    /// Single output unit `s`, exposed as the distribution `(s, 1 - s)`.
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Activations {
    pub hidden: Activation,
    pub output: OutputActivation,
}

/// Shape of a fully connected classifier.
///
/// `layers` lists the width of every layer after the input, the last one
/// being the output layer. A softmax head has one unit per class; a sigmoid
/// head has a single unit and always describes a binary task.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub layers: Vec<usize>,
    pub activations: Activations,
}

impl ArchSpec {
    pub fn new(input_dim: usize, layers: Vec<usize>, hidden: Activation, output: OutputActivation) -> Result<Self> {
        let arch = ArchSpec {
            input_dim,
            layers,
            activations: Activations { hidden, output },
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArch("input_dim must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidArch("at least one layer is required".into()));
        }
        if let Some(i) = self.layers.iter().position(|&m| m == 0) {
            return Err(Error::InvalidArch(format!("layer {} has zero width", i + 1)));
        }
        let last = *self.layers.last().unwrap();
        match self.activations.output {
            OutputActivation::Softmax if last < 2 => Err(Error::InvalidArch(
                "a softmax head needs at least two output units".into(),
            )),
            OutputActivation::Sigmoid if last != 1 => Err(Error::InvalidArch(format!(
                "a sigmoid head has exactly one output unit, got {last}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_classes(&self) -> usize {
        match self.activations.output {
            OutputActivation::Sigmoid => 2,
            OutputActivation::Softmax => *self.layers.last().unwrap(),
        }
    }

    /// `(fan_in, fan_out)` of every layer.
    pub fn layer_shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().copied())
            .zip(self.layers.iter().copied())
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().map(|(i, o)| i * o + o).sum()
    }

    /// Compact identifier used to check that records, meta models and targets agree.
    pub fn fingerprint(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.input_dim)?;
        for m in &self.layers {
            write!(f, "-{m}")?;
        }
        let hidden = match self.activations.hidden {
            Activation::Relu => "relu",
            Activation::Elu => "elu",
        };
        let output = match self.activations.output {
            OutputActivation::Sigmoid => "sigmoid",
            OutputActivation::Softmax => "softmax",
        };
        write!(f, "/{hidden}/{output}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mnist_binary_param_count() {
        let arch = ArchSpec::new(784, vec![128, 32, 16, 2], Activation::Relu, OutputActivation::Softmax).unwrap();
        // independent summation of (fan_in * fan_out + fan_out) per layer
        let expected = (784 * 128 + 128) + (128 * 32 + 32) + (32 * 16 + 16) + (16 * 2 + 2);
        assert_eq!(expected, 105_170);
        assert_eq!(arch.num_params(), expected);
    }

    #[test]
    fn rejects_bad_heads() {
        assert!(ArchSpec::new(3, vec![4, 1], Activation::Elu, OutputActivation::Softmax).is_err());
        assert!(ArchSpec::new(3, vec![4, 2], Activation::Elu, OutputActivation::Sigmoid).is_err());
        assert!(ArchSpec::new(3, vec![], Activation::Elu, OutputActivation::Softmax).is_err());
        assert!(ArchSpec::new(0, vec![2], Activation::Elu, OutputActivation::Softmax).is_err());
        let sig = ArchSpec::new(3, vec![4, 1], Activation::Elu, OutputActivation::Sigmoid).unwrap();
        assert_eq!(sig.num_classes(), 2);
    }

    #[test]
    fn fingerprint_is_readable() {
        let arch = ArchSpec::new(2, vec![8, 4, 2], Activation::Relu, OutputActivation::Softmax).unwrap();
        assert_eq!(arch.fingerprint(), "2-8-4-2/relu/softmax");
    }
}
