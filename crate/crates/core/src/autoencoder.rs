//! LSTM sub-autoencoders and their stacked composition.
//!
//! A sub-autoencoder encodes with one LSTM layer followed by ReLU and decodes
//! with a second LSTM layer whose raw hidden state is the reconstruction.
//! The stack encodes through every stage in order and decodes in reverse:
//!
//! ```text
//! 50 ─enc0→ 30 ─enc1→ 15 ─enc2→ 10 ─dec2→ 15 ─dec1→ 30 ─dec0→ 50
//! ```
//!
//! Every sequence starts from a zero LSTM state.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{Error, Result};
use crate::lstm::{run_sequence, LstmLayerParams, LstmState, SequenceRun};
use crate::matrix::Matrix;

pub const MODEL_KIND: &str = "stacked_lstm_autoencoder";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Elementwise `max(0, x)`.
pub fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

fn relu_matrix(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    out.as_mut_slice().iter_mut().for_each(|x| *x = x.max(0.0));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubAutoencoder {
    /// in_dim → latent_dim
    pub encoder: LstmLayerParams,
    /// latent_dim → in_dim
    pub decoder: LstmLayerParams,
    pub relu_after_encode: bool,
}

impl SubAutoencoder {
    pub fn new(encoder: LstmLayerParams, decoder: LstmLayerParams) -> Result<Self> {
        if encoder.hidden_dim != decoder.input_dim || decoder.hidden_dim != encoder.input_dim {
            return Err(Error::Dimension {
                context: "sub-autoencoder encoder/decoder",
                expected: encoder.input_dim,
                actual: decoder.hidden_dim,
            });
        }
        Ok(Self {
            encoder,
            decoder,
            relu_after_encode: true,
        })
    }

    pub fn zeros(in_dim: usize, latent_dim: usize) -> Self {
        Self::new(
            LstmLayerParams::zeros(in_dim, latent_dim),
            LstmLayerParams::zeros(latent_dim, in_dim),
        )
        .expect("dims consistent by construction")
    }

    pub fn random(in_dim: usize, latent_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let encoder = LstmLayerParams::random(in_dim, latent_dim, rng);
        let decoder = LstmLayerParams::random(latent_dim, in_dim, rng);
        Self::new(encoder, decoder).expect("dims consistent by construction")
    }

    pub fn in_dim(&self) -> usize {
        self.encoder.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.hidden_dim
    }

    pub fn encode_sequence(&self, frames: &Matrix) -> Result<Matrix> {
        if frames.rows() == 0 {
            return Err(Error::Data("cannot encode an empty sequence".into()));
        }
        let run = run_sequence(&self.encoder, frames, LstmState::zeros(self.latent_dim()))?;
        Ok(if self.relu_after_encode {
            relu_matrix(&run.hidden)
        } else {
            run.hidden
        })
    }

    pub fn decode_sequence(&self, latents: &Matrix) -> Result<Matrix> {
        if latents.rows() == 0 {
            return Err(Error::Data("cannot decode an empty sequence".into()));
        }
        Ok(run_sequence(&self.decoder, latents, LstmState::zeros(self.in_dim()))?.hidden)
    }
}

pub fn encode_sequence(frames: &Matrix, sub: &SubAutoencoder) -> Result<Matrix> {
    sub.encode_sequence(frames)
}

pub fn decode_sequence(latents: &Matrix, sub: &SubAutoencoder) -> Result<Matrix> {
    sub.decode_sequence(latents)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Part {
    Encoder,
    Decoder,
}

/// Addresses one LSTM layer inside a stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerId {
    pub stage: usize,
    pub part: Part,
}

impl std::fmt::Display for LayerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let part = match self.part {
            Part::Encoder => "encoder",
            Part::Decoder => "decoder",
        };
        write!(f, "stage{}.{part}", self.stage)
    }
}

/// One element of a differentiable pipeline over sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Lstm(LayerId),
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedAutoencoder {
    /// `[input, latent_0, latent_1, ...]`, e.g. `[50, 30, 15, 10]`.
    pub dims: Vec<usize>,
    pub seed: u64,
    pub stages: Vec<SubAutoencoder>,
}

impl StackedAutoencoder {
    /// Seeded uniform initialization of every stage.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        validate_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = dims
            .windows(2)
            .map(|w| SubAutoencoder::random(w[0], w[1], &mut rng))
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            seed,
            stages,
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        validate_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            seed: 0,
            stages: dims
                .windows(2)
                .map(|w| SubAutoencoder::zeros(w[0], w[1]))
                .collect(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn layer(&self, id: LayerId) -> &LstmLayerParams {
        let s = &self.stages[id.stage];
        match id.part {
            Part::Encoder => &s.encoder,
            Part::Decoder => &s.decoder,
        }
    }

    pub fn layer_mut(&mut self, id: LayerId) -> &mut LstmLayerParams {
        let s = &mut self.stages[id.stage];
        match id.part {
            Part::Encoder => &mut s.encoder,
            Part::Decoder => &mut s.decoder,
        }
    }

    pub fn layer_ids(&self) -> Vec<LayerId> {
        (0..self.stages.len())
            .flat_map(|stage| {
                [Part::Encoder, Part::Decoder]
                    .into_iter()
                    .map(move |part| LayerId { stage, part })
            })
            .collect()
    }

    /// Links of sub-autoencoder `stage` on its own.
    pub fn stage_chain(&self, stage: usize) -> Vec<Link> {
        let mut links = vec![Link::Lstm(LayerId {
            stage,
            part: Part::Encoder,
        })];
        if self.stages[stage].relu_after_encode {
            links.push(Link::Relu);
        }
        links.push(Link::Lstm(LayerId {
            stage,
            part: Part::Decoder,
        }));
        links
    }

    /// Links of the full encode-then-decode stack.
    pub fn full_chain(&self) -> Vec<Link> {
        let mut links = Vec::new();
        for (stage, sub) in self.stages.iter().enumerate() {
            links.push(Link::Lstm(LayerId {
                stage,
                part: Part::Encoder,
            }));
            if sub.relu_after_encode {
                links.push(Link::Relu);
            }
        }
        for stage in (0..self.stages.len()).rev() {
            links.push(Link::Lstm(LayerId {
                stage,
                part: Part::Decoder,
            }));
        }
        links
    }

    /// Zero initial states for every LSTM link of `chain`.
    pub fn zero_states(&self, chain: &[Link]) -> Vec<LstmState> {
        chain
            .iter()
            .filter_map(|l| match l {
                Link::Lstm(id) => Some(LstmState::zeros(self.layer(*id).hidden_dim)),
                Link::Relu => None,
            })
            .collect()
    }

    /// Run `chain` over `input` starting from `states` (one per LSTM link).
    pub fn run_chain(&self, chain: &[Link], input: &Matrix, states: Vec<LstmState>) -> Result<ChainTrace> {
        let mut activations = vec![input.clone()];
        let mut runs = Vec::new();
        let mut states = states.into_iter();
        for link in chain {
            let x = activations.last().expect("seeded with input");
            let next = match link {
                Link::Lstm(id) => {
                    let init = states
                        .next()
                        .ok_or_else(|| Error::Data("missing initial state for chain".into()))?;
                    let run = run_sequence(self.layer(*id), x, init)?;
                    let h = run.hidden.clone();
                    runs.push(run);
                    h
                }
                Link::Relu => relu_matrix(x),
            };
            activations.push(next);
        }
        Ok(ChainTrace { activations, runs })
    }

    /// Reconstruction plus the post-ReLU latent of every stage.
    pub fn forward_stack(&self, frames: &Matrix) -> Result<(Matrix, Vec<Matrix>)> {
        if frames.cols() != self.input_dim() {
            return Err(Error::Dimension {
                context: "stacked autoencoder input",
                expected: self.input_dim(),
                actual: frames.cols(),
            });
        }
        if frames.rows() == 0 {
            return Err(Error::Data("cannot run an empty sequence".into()));
        }
        let mut latents = Vec::with_capacity(self.stages.len());
        let mut x = frames.clone();
        for sub in &self.stages {
            x = sub.encode_sequence(&x)?;
            latents.push(x.clone());
        }
        for sub in self.stages.iter().rev() {
            x = sub.decode_sequence(&x)?;
        }
        Ok((x, latents))
    }

    /// Output of encoder stages `0..n_stages` (post-ReLU).
    pub fn encode_through(&self, frames: &Matrix, n_stages: usize) -> Result<Matrix> {
        let mut x = frames.clone();
        for sub in &self.stages[..n_stages] {
            x = sub.encode_sequence(&x)?;
        }
        Ok(x)
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        artifact::save(path, MODEL_KIND, MODEL_FORMAT_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (model, hash): (Self, String) = artifact::load(path, MODEL_KIND, MODEL_FORMAT_VERSION)?;
        validate_dims(&model.dims)?;
        if model.stages.len() + 1 != model.dims.len() {
            return Err(Error::Artifact {
                path: path.to_path_buf(),
                message: "stage count does not match dims".into(),
            });
        }
        for (i, (sub, w)) in model.stages.iter().zip(model.dims.windows(2)).enumerate() {
            if sub.in_dim() != w[0] || sub.latent_dim() != w[1] {
                return Err(Error::Artifact {
                    path: path.to_path_buf(),
                    message: format!("stage {i} dims do not match header"),
                });
            }
        }
        Ok((model, hash))
    }
}

pub fn forward_stack(frames: &Matrix, stack: &StackedAutoencoder) -> Result<(Matrix, Vec<Matrix>)> {
    stack.forward_stack(frames)
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Config(
            "architecture needs an input dim and at least one latent dim".into(),
        ));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Config("architecture dims must be positive".into()));
    }
    Ok(())
}

/// Recorded forward pass of a chain.
#[derive(Debug, Clone)]
pub struct ChainTrace {
    /// Input of every link followed by the final output (`links + 1` entries).
    pub activations: Vec<Matrix>,
    /// One run per LSTM link, in chain order.
    pub runs: Vec<SequenceRun>,
}

impl ChainTrace {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("non-empty")
    }

    pub fn final_states(&self) -> Vec<LstmState> {
        self.runs.iter().map(|r| r.final_state.clone()).collect()
    }
}
