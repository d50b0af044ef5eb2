use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

/// Affine map `y = W x + b` with `W` stored as out x in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
    pub fn init(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self {
            weight: Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(rng)),
            bias: Array1::from_shape_simple_fn(fan_out, || dist.sample(rng)),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }

    /// Applies the map to every row of `x` (n x in) giving n x out.
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients for upstream gradient `dy` (n x out)
    /// and input `x` (n x in); returns the gradient w.r.t. `x`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(ndarray::Axis(0));
        dy.dot(&self.weight)
    }
}

/// One hidden softplus layer followed by a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

/// Every trainable tensor of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Language-specific input layers, |V_l| -> hidden.
    pub input: [Linear; 2],
    /// Shared encoder hidden layer, hidden -> hidden.
    pub shared: Linear,
    pub mu_head: Linear,
    pub logvar_head: Linear,
    /// Decoder weights W^(l), |V_l| x K.
    pub decoder: [Array2<f64>; 2],
    /// K -> M map used by the document/embedding contrast.
    pub theta_proj: Linear,
    /// Language-specific |V_l| -> D_sem topic projections.
    pub beta_proj: [Mlp; 2],
}

macro_rules! each_tensor {
    ($p:expr, $f:ident) => {{
        let Params {
            input: [i1, i2],
            shared,
            mu_head,
            logvar_head,
            decoder: [d1, d2],
            theta_proj,
            beta_proj: [b1, b2],
        } = $p;
        vec![
            ("input_l1.weight", i1.weight.$f().unwrap()),
            ("input_l1.bias", i1.bias.$f().unwrap()),
            ("input_l2.weight", i2.weight.$f().unwrap()),
            ("input_l2.bias", i2.bias.$f().unwrap()),
            ("shared.weight", shared.weight.$f().unwrap()),
            ("shared.bias", shared.bias.$f().unwrap()),
            ("mu_head.weight", mu_head.weight.$f().unwrap()),
            ("mu_head.bias", mu_head.bias.$f().unwrap()),
            ("logvar_head.weight", logvar_head.weight.$f().unwrap()),
            ("logvar_head.bias", logvar_head.bias.$f().unwrap()),
            ("decoder_l1", d1.$f().unwrap()),
            ("decoder_l2", d2.$f().unwrap()),
            ("theta_proj.weight", theta_proj.weight.$f().unwrap()),
            ("theta_proj.bias", theta_proj.bias.$f().unwrap()),
            ("beta_proj_l1.hidden.weight", b1.hidden.weight.$f().unwrap()),
            ("beta_proj_l1.hidden.bias", b1.hidden.bias.$f().unwrap()),
            ("beta_proj_l1.output.weight", b1.output.weight.$f().unwrap()),
            ("beta_proj_l1.output.bias", b1.output.bias.$f().unwrap()),
            ("beta_proj_l2.hidden.weight", b2.hidden.weight.$f().unwrap()),
            ("beta_proj_l2.hidden.bias", b2.hidden.bias.$f().unwrap()),
            ("beta_proj_l2.output.weight", b2.output.weight.$f().unwrap()),
            ("beta_proj_l2.output.bias", b2.output.bias.$f().unwrap()),
        ]
    }};
}

impl Params {
    pub(crate) fn init(
        rng: &mut impl Rng,
        vocab_sizes: [usize; 2],
        hidden: usize,
        topics: usize,
        embed_dim: usize,
        sem_dim: usize,
        decoder_std: f64,
    ) -> Self {
        let normal = Normal::new(0.0, decoder_std).expect("positive std");
        let input = [
            Linear::init(rng, vocab_sizes[0], hidden),
            Linear::init(rng, vocab_sizes[1], hidden),
        ];
        let shared = Linear::init(rng, hidden, hidden);
        let mu_head = Linear::init(rng, hidden, topics);
        let logvar_head = Linear::init(rng, hidden, topics);
        let decoder = [
            Array2::from_shape_simple_fn((vocab_sizes[0], topics), || normal.sample(rng)),
            Array2::from_shape_simple_fn((vocab_sizes[1], topics), || normal.sample(rng)),
        ];
        let theta_proj = Linear::init(rng, topics, embed_dim);
        let mut mlp = |v: usize| Mlp {
            hidden: Linear::init(rng, v, sem_dim),
            output: Linear::init(rng, sem_dim, sem_dim),
        };
        let beta_proj = [mlp(vocab_sizes[0]), mlp(vocab_sizes[1])];
        Self {
            input,
            shared,
            mu_head,
            logvar_head,
            decoder,
            theta_proj,
            beta_proj,
        }
    }

    /// A zero tensor of the same shape for every parameter.
    pub fn zeros_like(&self) -> Self {
        let z = |l: &Linear| Linear::zeros(l.fan_in(), l.fan_out());
        Self {
            input: [z(&self.input[0]), z(&self.input[1])],
            shared: z(&self.shared),
            mu_head: z(&self.mu_head),
            logvar_head: z(&self.logvar_head),
            decoder: [
                Array2::zeros(self.decoder[0].raw_dim()),
                Array2::zeros(self.decoder[1].raw_dim()),
            ],
            theta_proj: z(&self.theta_proj),
            beta_proj: [
                Mlp {
                    hidden: z(&self.beta_proj[0].hidden),
                    output: z(&self.beta_proj[0].output),
                },
                Mlp {
                    hidden: z(&self.beta_proj[1].hidden),
                    output: z(&self.beta_proj[1].output),
                },
            ],
        }
    }

    /// Named flat views of every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        each_tensor!(self, as_slice)
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        each_tensor!(self, as_slice_mut)
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }
}
