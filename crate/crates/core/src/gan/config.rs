use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::guided::FilterParams;

/// How PAN and LR features are merged at each level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    /// Fast guided filter with PAN features as the guide; no parameters.
    GuidedFilter,
    /// Channel concatenation of PAN and upsampled LR features followed by a
    /// 3x3 conv and ReLU. Only used for comparison.
    Concat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub bands: usize,
    pub k_layers: usize,
    pub width: usize,
    pub sus: usize,
    pub filter: FilterParams,
    pub use_sam: bool,
    pub use_gan: bool,
    pub fusion: Fusion,
}

impl GeneratorConfig {
    /// Four levels of 32 features, radius 2 and eps 1e-4 guided fusion.
    pub fn new(bands: usize, sus: usize) -> Self {
        Self {
            bands,
            k_layers: 4,
            width: 32,
            sus,
            filter: FilterParams {
                subsample: sus,
                ..FilterParams::default()
            },
            use_sam: true,
            use_gan: true,
            fusion: Fusion::GuidedFilter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 || self.k_layers == 0 || self.width == 0 || self.sus == 0 {
            return Err(Error::InvalidArgument(
                "bands, k_layers, width and sus must all be at least 1".into(),
            ));
        }
        self.filter.validate()?;
        if self.filter.subsample != self.sus {
            return Err(Error::InvalidArgument(format!(
                "filter subsample {} must equal sus {}",
                self.filter.subsample, self.sus
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub bands: usize,
    /// Channels of the first layer; later layers double it up to 8x.
    pub base_width: usize,
}

impl DiscriminatorConfig {
    pub fn new(bands: usize) -> Self {
        Self {
            bands,
            base_width: 32,
        }
    }

    /// `(out_channels, stride)` for the five conv layers.
    pub fn layers(&self) -> [(usize, usize); 5] {
        let b = self.base_width;
        [(b, 2), (2 * b, 2), (4 * b, 2), (8 * b, 1), (1, 1)]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Epoch after which the learning rate is multiplied by `lr_decay`.
    pub lr_decay_epoch: usize,
    pub lr_decay: f64,
    pub alpha: f64,
    /// Real-data label range for the generator target `a`.
    pub label_a: (f64, f64),
    /// Fake-data label range `b` for the discriminator.
    pub label_b: (f64, f64),
    /// Real-data label range `c` for the discriminator.
    pub label_c: (f64, f64),
    pub seed: u64,
    pub adam: AdamConfig,
    /// Channels of the first discriminator layer.
    pub disc_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch: 64,
            lr: 5e-4,
            lr_decay_epoch: 100,
            lr_decay: 0.1,
            alpha: 0.01,
            label_a: (0.9, 1.1),
            label_b: (0.0, 0.2),
            label_c: (0.9, 1.1),
            seed: 0,
            adam: AdamConfig::default(),
            disc_width: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.epochs == 0 || self.batch == 0 || self.disc_width == 0 {
            return bad("epochs, batch and disc_width must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_decay > 0.0) {
            return bad("lr and lr_decay must be positive");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be non-negative");
        }
        for (lo, hi) in [self.label_a, self.label_b, self.label_c] {
            if !(lo <= hi) {
                return bad("label ranges must satisfy lo <= hi");
            }
        }
        if !(self.label_b.0 >= 0.0 && self.label_b.1 < self.label_a.0 && self.label_b.1 < self.label_c.0) {
            return bad("fake label range must lie below the real label ranges");
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch > self.lr_decay_epoch {
            self.lr * self.lr_decay
        } else {
            self.lr
        }
    }
}
