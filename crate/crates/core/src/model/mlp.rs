use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, Tensor, Var};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `[fan_in, fan_out]`
    pub weight: Tensor,
    /// `[1, fan_out]`
    pub bias: Tensor,
}

/// Fully connected net with leaky-ReLU between layers and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
}

impl Mlp {
    /// `depth` linear layers (at least one). Hidden layers get uniform
    /// He fan-in weights; the output layer starts at zero.
    pub fn new(
        input: usize,
        output: usize,
        depth: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let depth = depth.max(1);
        let mut layers = Vec::with_capacity(depth);
        let mut fan_in = input;
        for l in 0..depth {
            let last = l + 1 == depth;
            let fan_out = if last { output } else { width };
            let weight = if last {
                Tensor::zeros(&[fan_in, fan_out])
            } else {
                let bound = (6.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Tensor::matrix(fan_in, fan_out, data).expect("shape")
            };
            layers.push(Linear {
                weight,
                bias: Tensor::zeros(&[1, fan_out]),
            });
            fan_in = fan_out;
        }
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weight.cols()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        let mut leaf = |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|l| (leaf(&l.weight), leaf(&l.bias)))
                .collect(),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Sets every weight and bias to zero.
    pub fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.data_mut().fill(0.0);
        }
    }
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let z = g.matmul(h, *w)?;
            h = g.add(z, *b)?;
            if i + 1 < self.layers.len() {
                h = g.leaky_relu(h);
            }
        }
        Ok(h)
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|(w, b)| [*w, *b])
    }
}
