//! Convolutional feature extractor with two taps.
//!
//! A stack of 3x3 stride-2 convolution + ReLU stages; two intermediate
//! outputs (a shallow and a deep tap) feed the line descriptor pooling.
//! Stages past the deep tap are never executed.

use ndarray::{Array3, ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::config::BackboneConfig;
use crate::error::{Error, Result};

/// One convolution stage: 3x3 kernel `(c_out, c_in, 3, 3)` and bias.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvStage {
    pub kernel: ArrayD<f64>,
    pub bias: ArrayD<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackboneParams {
    pub stages: Vec<ConvStage>,
}

impl BackboneParams {
    /// He-style initialization: kernel entries N(0, sqrt(2 / fan_in)),
    /// zero biases.
    pub fn init(cfg: &BackboneConfig, rng: &mut impl Rng) -> Self {
        let mut stages = Vec::with_capacity(cfg.channels.len());
        let mut c_in = cfg.input_channels;
        for &c_out in &cfg.channels {
            let std = (2.0 / (c_in * 9) as f64).sqrt();
            let normal = Normal::new(0.0, std).unwrap();
            let kernel = ArrayD::from_shape_simple_fn(IxDyn(&[c_out, c_in, 3, 3]), || {
                normal.sample(rng)
            });
            let bias = ArrayD::zeros(IxDyn(&[c_out]));
            stages.push(ConvStage { kernel, bias });
            c_in = c_out;
        }
        BackboneParams { stages }
    }

    pub fn param_count(&self) -> usize {
        self.stages
            .iter()
            .map(|s| s.kernel.len() + s.bias.len())
            .sum()
    }
}

/// Tape handles for the backbone parameters.
pub struct BackboneVars {
    pub stages: Vec<(Var, Var)>,
}

pub fn leaf_params(tape: &Tape, params: &BackboneParams, trainable: bool) -> BackboneVars {
    BackboneVars {
        stages: params
            .stages
            .iter()
            .map(|s| {
                (
                    tape.leaf(s.kernel.clone(), trainable),
                    tape.leaf(s.bias.clone(), trainable),
                )
            })
            .collect(),
    }
}

/// Both taps of one forward pass, still on the tape.
pub struct FeatureTaps {
    pub shallow: Var,
    pub deep: Var,
    pub shallow_stride: usize,
    pub deep_stride: usize,
}

/// Run the stage stack on a `(c, h, w)` image variable and collect the
/// two taps. Stages beyond the deep tap are skipped.
pub fn forward(
    tape: &Tape,
    vars: &BackboneVars,
    image: Var,
    cfg: &BackboneConfig,
) -> Result<FeatureTaps> {
    let in_c = tape.value(image).shape()[0];
    if in_c != cfg.input_channels {
        return Err(Error::shape(format!(
            "backbone expects {} input channels, image has {in_c}",
            cfg.input_channels
        )));
    }
    if vars.stages.len() != cfg.channels.len() {
        return Err(Error::shape(
            "backbone parameter stage count does not match config".to_string(),
        ));
    }
    let mut x = image;
    let mut shallow = None;
    let mut deep = None;
    for (i, &(kernel, bias)) in vars.stages.iter().enumerate() {
        let stage = i + 1;
        let conv = tape.conv2d(x, kernel, bias, 2);
        x = tape.relu(conv);
        if stage == cfg.shallow_tap {
            shallow = Some(x);
        }
        if stage == cfg.deep_tap {
            deep = Some(x);
            break;
        }
    }
    Ok(FeatureTaps {
        shallow: shallow.expect("validated: shallow_tap <= deep_tap <= stages"),
        deep: deep.expect("validated: deep_tap <= stages"),
        shallow_stride: cfg.shallow_stride(),
        deep_stride: cfg.deep_stride(),
    })
}

/// Evaluated feature maps for inference paths that need plain arrays.
pub struct FeatureMaps {
    pub shallow: Array3<f64>,
    pub deep: Array3<f64>,
    pub shallow_stride: usize,
    pub deep_stride: usize,
}

pub fn extract(params: &BackboneParams, image: &Array3<f64>, cfg: &BackboneConfig) -> Result<FeatureMaps> {
    let tape = Tape::new();
    let vars = leaf_params(&tape, params, false);
    let img = tape.leaf(image.clone().into_dyn(), false);
    let taps = forward(&tape, &vars, img, cfg)?;
    let to3 = |v: Var| {
        tape.value_owned(v)
            .into_dimensionality::<ndarray::Ix3>()
            .expect("taps are 3-d")
    };
    Ok(FeatureMaps {
        shallow: to3(taps.shallow),
        deep: to3(taps.deep),
        shallow_stride: taps.shallow_stride,
        deep_stride: taps.deep_stride,
    })
}
