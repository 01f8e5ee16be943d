use super::config::TrainConfig;
use crate::bimamba::{BiMambaModel, FusionOutput};
use crate::error::{Error, Result};
use crate::frontend::Frontend;
use crate::layers::{join, Parameterized, SeededRng};
use crate::metrics::asoftmax_loss;
use crate::tensor::Tensor;

/// Frontend plus bidirectional backbone, built from a [`TrainConfig`].
#[derive(Debug, Clone)]
pub struct RawBMamba {
    pub config: TrainConfig,
    pub frontend: Frontend,
    pub backbone: BiMambaModel,
}

impl RawBMamba {
    /// Initialization is fully determined by `config.seed`.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(config.seed);
        let frontend = Frontend::new(&mut rng, config.frontend())?;
        let hidden = (config.mlp_hidden > 0).then_some(config.mlp_hidden);
        let mut backbone = BiMambaModel::new(
            &mut rng,
            config.mamba(),
            config.layers_per_direction,
            config.fusion,
            hidden,
            config.margin,
        );
        let head = &mut backbone.fusion.head;
        head.lambda_start = config.lambda_start;
        head.lambda_decay = config.lambda_decay;
        head.lambda_min = config.lambda_min;
        Ok(RawBMamba { config: config.clone(), frontend, backbone })
    }

    /// Batched waveforms `(B, S)`.
    pub fn forward(&self, waves: &Tensor) -> Result<FusionOutput> {
        if waves.ndim() != 2 || waves.shape()[1] != self.config.samples {
            return Err(Error::dim("model_forward", waves.shape(), &[self.config.samples]));
        }
        let maps = self.frontend.forward(waves)?;
        self.backbone.forward(&maps.sequence)
    }

    /// Margin loss at optimizer step `step`.
    pub fn loss(&self, waves: &Tensor, labels: &[usize], step: usize) -> Result<(Tensor, FusionOutput)> {
        let out = self.forward(waves)?;
        let head = &self.backbone.fusion.head;
        let loss = asoftmax_loss(head, &out.hidden, labels, head.lambda(step))?;
        Ok((loss, out))
    }

    /// Copy whose parameters do not record gradients, for scoring.
    pub fn frozen(&self) -> Self {
        let mut m = self.clone();
        m.visit_params_mut("", &mut |_, t| *t = t.detach());
        m
    }

    /// Post-update projections: unit-norm class vectors and valid bands.
    pub fn after_step(&mut self) -> Result<()> {
        self.backbone.fusion.head.renormalize();
        self.frontend.sinc.check_bands()
    }
}

impl Parameterized for RawBMamba {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.frontend.visit_params(&join(prefix, "frontend"), f);
        self.backbone.visit_params(&join(prefix, "backbone"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.frontend.visit_params_mut(&join(prefix, "frontend"), f);
        self.backbone.visit_params_mut(&join(prefix, "backbone"), f);
    }
}
