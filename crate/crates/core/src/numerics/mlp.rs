use rand::Rng;

use super::{Activation, DenseArray, Linear, Param, Parameterized};
use crate::error::Result;

/// Stack of fully connected layers, each followed by its own activation.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activations: Vec<Activation>,
}

/// Intermediate values kept for [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<DenseArray>,
    pre: Vec<DenseArray>,
}

impl Mlp {
    /// `sizes = [in, h1, …, out]`; hidden layers use `hidden`, the last uses `output`.
    pub fn new(
        name: &str,
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| Linear::new(&format!("{name}.{i}"), sizes[i], sizes[i + 1], rng))
            .collect();
        let activations = (0..n)
            .map(|i| if i + 1 == n { output } else { hidden })
            .collect();
        Self {
            layers,
            activations,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.fan_out()).unwrap_or(0)
    }

    pub fn forward(&self, x: &DenseArray) -> Result<(DenseArray, MlpCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let z = layer.forward(&h)?;
            let next = act.forward(&z);
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    pub fn predict(&self, x: &DenseArray) -> Result<DenseArray> {
        let mut h = x.clone();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            h = act.forward(&layer.forward(&h)?);
        }
        Ok(h)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &MlpCache, dout: &DenseArray) -> Result<DenseArray> {
        let mut g = dout.clone();
        for i in (0..self.layers.len()).rev() {
            let dz = self.activations[i].backward(&cache.pre[i], &g);
            g = self.layers[i].backward(&cache.inputs[i], &dz)?;
        }
        Ok(g)
    }
}

impl Parameterized for Mlp {
    fn params(&self) -> Vec<&Param> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}
