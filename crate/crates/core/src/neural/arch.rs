use serde::{Deserialize, Serialize};

use crate::autodiff::Activation;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AeVariant {
    /// One autoencoder reading `(q, p)` as two channels.
    Bichannel,
    /// Two disjoint single-channel autoencoders, one for `q` and one for `p`.
    Split,
}

/// Convolutional autoencoder layout (encoder side; the decoder mirrors it).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeArchitecture {
    pub variant: AeVariant,
    pub n_blocks: usize,
    pub dense_sizes: Vec<usize>,
    /// `2K`.
    pub latent_dim: usize,
    pub activation: Activation,
    /// `N`.
    pub input_length: usize,
}

/// Shape of one trainable tensor with its Glorot fan sizes (biases have no fans).
#[derive(Clone, Debug, PartialEq)]
pub struct TensorSpec {
    pub shape: Vec<usize>,
    pub fans: Option<(usize, usize)>,
}

impl TensorSpec {
    fn weight(shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Self {
        TensorSpec {
            shape,
            fans: Some((fan_in, fan_out)),
        }
    }

    fn bias(n: usize) -> Self {
        TensorSpec {
            shape: vec![n],
            fans: None,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn dense_specs(sizes: &[usize]) -> Vec<TensorSpec> {
    sizes
        .windows(2)
        .flat_map(|w| {
            [
                TensorSpec::weight(vec![w[0], w[1]], w[0], w[1]),
                TensorSpec::bias(w[1]),
            ]
        })
        .collect()
}

fn conv_spec(cout: usize, cin: usize, width: usize) -> [TensorSpec; 2] {
    [
        TensorSpec::weight(vec![cout, cin, width], cin * width, cout * width),
        TensorSpec::bias(cout),
    ]
}

impl AeArchitecture {
    pub fn validate(&self) -> Result<()> {
        let n = self.input_length;
        let div = 1usize.checked_shl(self.n_blocks as u32).unwrap_or(0);
        if div == 0 || n == 0 || n % div != 0 {
            return Err(Error::Architecture(format!(
                "input length {n} is not divisible by 2^{} (conv blocks)",
                self.n_blocks
            )));
        }
        if self.latent_dim == 0 || self.latent_dim % 2 != 0 {
            return Err(Error::Architecture(format!(
                "latent dimension {} must be positive and even",
                self.latent_dim
            )));
        }
        if self.dense_sizes.iter().any(|&d| d == 0) {
            return Err(Error::Architecture("dense layer of width 0".into()));
        }
        Ok(())
    }

    /// Input channels of each autoencoder half.
    pub fn channels_base(&self) -> usize {
        match self.variant {
            AeVariant::Bichannel => 2,
            AeVariant::Split => 1,
        }
    }

    /// Number of separate autoencoders (1 bichannel, 2 split).
    pub fn halves(&self) -> usize {
        match self.variant {
            AeVariant::Bichannel => 1,
            AeVariant::Split => 2,
        }
    }

    /// Latent width produced by each half.
    pub fn half_latent(&self) -> usize {
        self.latent_dim / self.halves()
    }

    /// Channels and length after the convolution stack.
    pub fn bottleneck(&self) -> (usize, usize) {
        let c = self.channels_base() << self.n_blocks;
        (c, self.input_length >> self.n_blocks)
    }

    pub fn flat_size(&self) -> usize {
        let (c, l) = self.bottleneck();
        c * l
    }

    /// `(channels, length)` after each stage of one encoder half, starting with the input.
    pub fn encoder_shapes(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(self.channels_base(), self.input_length)];
        for b in 0..self.n_blocks {
            out.push((
                self.channels_base() << (b + 1),
                self.input_length >> (b + 1),
            ));
        }
        out
    }

    /// Dense widths of one encoder half, from the flattened features to the latent.
    pub fn encoder_dense(&self) -> Vec<usize> {
        let mut s = vec![self.flat_size()];
        s.extend_from_slice(&self.dense_sizes);
        s.push(self.half_latent());
        s
    }

    pub fn encoder_specs(&self) -> Vec<TensorSpec> {
        let mut specs = Vec::new();
        let c0 = self.channels_base();
        for b in 0..self.n_blocks {
            let c = c0 << b;
            specs.extend(conv_spec(c, c, 3));
            specs.extend(conv_spec(2 * c, c, 2));
        }
        let (cf, _) = self.bottleneck();
        specs.extend(conv_spec(cf, cf, 3));
        specs.extend(dense_specs(&self.encoder_dense()));
        specs
    }

    pub fn decoder_specs(&self) -> Vec<TensorSpec> {
        let mut dense: Vec<usize> = self.encoder_dense();
        dense.reverse();
        let mut specs = dense_specs(&dense);
        let c0 = self.channels_base();
        for b in (0..self.n_blocks).rev() {
            let c = c0 << b;
            specs.extend(conv_spec(c, 2 * c, 2));
            specs.extend(conv_spec(c, c, 3));
        }
        specs
    }
}

/// Fully connected network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl MlpArchitecture {
    /// Reduced Hamiltonian: input `(ȳ, μ)`, scalar output.
    pub fn hnn(
        hidden_sizes: Vec<usize>,
        activation: Activation,
        latent_dim: usize,
        param_dim: usize,
    ) -> Self {
        MlpArchitecture {
            hidden_sizes,
            activation,
            input_dim: latent_dim + param_dim,
            output_dim: 1,
        }
    }

    /// Reduced vector field: input `(ȳ, μ)`, output of the latent dimension.
    pub fn flow(
        hidden_sizes: Vec<usize>,
        activation: Activation,
        latent_dim: usize,
        param_dim: usize,
    ) -> Self {
        MlpArchitecture {
            hidden_sizes,
            activation,
            input_dim: latent_dim + param_dim,
            output_dim: latent_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_sizes.iter().any(|&h| h == 0)
        {
            return Err(Error::Architecture(format!("degenerate MLP {:?}", self)));
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim];
        s.extend_from_slice(&self.hidden_sizes);
        s.push(self.output_dim);
        s
    }

    pub fn specs(&self) -> Vec<TensorSpec> {
        dense_specs(&self.sizes())
    }

    pub fn param_count(&self) -> usize {
        self.specs().iter().map(TensorSpec::len).sum()
    }
}
