//! Per-window convolutional feature extractor.
//!
//! The same stack runs on every 32x32xn glimpse with no cross-window state,
//! so a `[m, 32, 32, n]` batch goes through as one set of convolutions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScanError};
use crate::tensor::{Graph, ParamId, ParamStore, Padding2d, Scalar, Tensor, Var};
use crate::windowing::{WindowSequence, GLIMPSE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Ten convolutions in five groups, 200-d output.
    Paper,
    /// Three small convolutions, 64-d output; trains on a CPU in minutes.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = ScanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(ScanError::InvalidArgument(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    /// 3x3 same-padded convolution to this many channels, then ReLU.
    Conv(usize),
    Pool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub preset: Preset,
    pub input_channels: usize,
    pub feature_dim: usize,
}

impl ExtractorConfig {
    pub fn paper(input_channels: usize) -> Self {
        ExtractorConfig {
            preset: Preset::Paper,
            input_channels,
            feature_dim: 200,
        }
    }

    pub fn desk(input_channels: usize) -> Self {
        ExtractorConfig {
            preset: Preset::Desk,
            input_channels,
            feature_dim: 64,
        }
    }

    pub fn for_preset(preset: Preset, input_channels: usize) -> Self {
        match preset {
            Preset::Paper => Self::paper(input_channels),
            Preset::Desk => Self::desk(input_channels),
        }
    }

    fn stages(&self) -> Vec<Stage> {
        use Stage::{Conv, Pool};
        match self.preset {
            Preset::Paper => vec![
                Conv(32),
                Conv(32),
                Pool,
                Conv(64),
                Conv(64),
                Pool,
                Conv(128),
                Conv(128),
                Pool,
                Conv(256),
                Conv(256),
                Pool,
                Conv(256),
                Conv(256),
            ],
            Preset::Desk => vec![Conv(16), Pool, Conv(32), Pool, Conv(32), Pool],
        }
    }

    /// Width of the flattened map fed to the output projection.
    fn flat_dim(&self) -> usize {
        let mut side = GLIMPSE;
        let mut channels = self.input_channels;
        for s in self.stages() {
            match s {
                Stage::Conv(c) => channels = c,
                Stage::Pool => side /= 2,
            }
        }
        side * side * channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.input_channels == 0 {
            return Err(ScanError::InvalidArgument(format!("bad extractor config {self:?}")));
        }
        Ok(())
    }
}

/// Trainable scalars in the configured stack.
pub fn feature_param_count(cfg: &ExtractorConfig) -> usize {
    let mut channels = cfg.input_channels;
    let mut total = 0;
    for s in cfg.stages() {
        if let Stage::Conv(c) = s {
            total += 9 * channels * c + c;
            channels = c;
        }
    }
    total + cfg.flat_dim() * cfg.feature_dim + cfg.feature_dim
}

/// Per-window feature vectors `[m, feature_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence<T> {
    pub vectors: Tensor<T>,
}

impl<T: Scalar> FeatureSequence<T> {
    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    cfg: ExtractorConfig,
    stages: Vec<Stage>,
    convs: Vec<(ParamId, ParamId)>,
    proj: (ParamId, ParamId),
}

impl FeatureExtractor {
    pub fn new<T: Scalar, R: Rng + ?Sized>(cfg: ExtractorConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let stages = cfg.stages();
        let mut convs = Vec::new();
        let mut cin = cfg.input_channels;
        for s in &stages {
            if let Stage::Conv(cout) = *s {
                let i = convs.len();
                let w = store.insert_glorot(
                    format!("extractor.conv{i}.weight"),
                    &[3, 3, cin, cout],
                    9 * cin,
                    9 * cout,
                    rng,
                )?;
                let b = store.insert_zeros(format!("extractor.conv{i}.bias"), &[cout])?;
                convs.push((w, b));
                cin = cout;
            }
        }
        let flat = cfg.flat_dim();
        let w = store.insert_glorot("extractor.proj.weight", &[cfg.feature_dim, flat], flat, cfg.feature_dim, rng)?;
        let b = store.insert_zeros("extractor.proj.bias", &[cfg.feature_dim])?;
        Ok(FeatureExtractor {
            cfg,
            stages,
            convs,
            proj: (w, b),
        })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.cfg
    }

    /// `[m, 32, 32, n]` glimpses to `[m, feature_dim]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, windows: Var) -> Result<Var> {
        let shape = g.shape(windows).to_vec();
        if shape.len() != 4 || shape[1] != GLIMPSE || shape[2] != GLIMPSE || shape[3] != self.cfg.input_channels {
            return Err(ScanError::shape(
                "extract_features",
                format!("glimpses {shape:?}, expected [m, 32, 32, {}]", self.cfg.input_channels),
            ));
        }
        let m = shape[0];
        let mut x = windows;
        let mut convs = self.convs.iter();
        for s in &self.stages {
            x = match s {
                Stage::Conv(_) => {
                    let (w, b) = convs.next().expect("one parameter pair per conv");
                    let (w, b) = (g.param(*w), g.param(*b));
                    let y = g.conv2d(x, w, b, Padding2d::Same)?;
                    g.relu(y)?
                }
                Stage::Pool => g.maxpool2(x)?,
            };
        }
        let flat = g.reshape(x, &[m, self.cfg.flat_dim()])?;
        let (w, b) = (g.param(self.proj.0), g.param(self.proj.1));
        g.linear(flat, w, b)
    }

    /// Inference helper: features for a whole window sequence.
    pub fn extract<T: Scalar>(&self, params: &ParamStore<T>, ws: &WindowSequence) -> Result<FeatureSequence<T>> {
        if ws.channels() != self.cfg.input_channels {
            return Err(ScanError::shape(
                "extract_features",
                format!("{} glimpse channels, extractor expects {}", ws.channels(), self.cfg.input_channels),
            ));
        }
        let mut g = Graph::new(params);
        let x = g.constant(ws.to_tensor())?;
        let f = self.forward(&mut g, x)?;
        Ok(FeatureSequence {
            vectors: g.value(f).clone(),
        })
    }
}
