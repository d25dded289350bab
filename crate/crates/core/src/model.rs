//! The assembled encoder–decoder segmentation model.

use hrmedseg_tensor::Tensor;

use crate::config::ModelConfig;
use crate::decoder::{decode, init_decoder, init_neck, neck};
use crate::encoder::{encode, init_encoder};
use crate::error::Result;
use crate::params::{Init, ParamStore};

/// Fixed per-pixel standardization applied to `[0,1]` images before the
/// encoder.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

pub fn preprocess(image: &Tensor) -> Result<Tensor> {
    Ok(image.add_scalar(-PIXEL_MEAN)?.mul_scalar(1.0 / PIXEL_STD)?)
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Builds and initializes every parameter from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(config.seed);
        init_encoder(&config, &mut params, &mut init)?;
        init_neck(&config, &mut params, &mut init)?;
        init_decoder(&config, &mut params, &mut init)?;
        Ok(Model { config, params })
    }

    pub fn with_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = Model::new(config.clone())?;
        for (name, t) in expected.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(crate::error::Error::Shape {
                    what: name.to_string(),
                    expected: t.shape().to_vec(),
                    found: got.shape().to_vec(),
                });
            }
        }
        Ok(Model { config, params })
    }

    /// Encoder embedding of a `[B,3,H,W]` image batch in `[0,1]`.
    pub fn encode(&self, image: &Tensor) -> Result<Tensor> {
        encode(&preprocess(image)?, &self.config, &self.params)
    }

    /// Student features for distillation: encoder followed by the neck.
    pub fn student_features(&self, image: &Tensor) -> Result<Tensor> {
        neck(&self.encode(image)?, &self.params)
    }

    /// Mask probabilities at the input resolution.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let (h, w) = (image.shape()[2], image.shape()[3]);
        self.forward_at(image, h, w)
    }

    pub fn forward_at(&self, image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
        decode(&self.encode(image)?, &self.config, &self.params, out_h, out_w)
    }

    pub fn num_params(&self) -> usize {
        self.params.num_elements()
    }

    /// Names of the parameters trained during feature distillation.
    pub fn distill_param_names(&self) -> Vec<String> {
        self.params
            .names()
            .into_iter()
            .filter(|n| n.starts_with("encoder.") || n.starts_with("neck."))
            .collect()
    }
}
