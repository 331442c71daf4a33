//! Full network assembly: shared backbone over both views, click encoding on
//! the query branch, cross-view fusion, and the anchor-free head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cvoam;
use crate::error::{Error, Result};
use crate::gpe::{self, ClickPoint};
use crate::head::{offsets_from_raw, HeadConfig, HeadOutput};
use crate::param::ParamSet;
use crate::tensor::{Scalar, Tensor};

/// Classifier bias prior: start every cell at roughly 1% positive
/// probability so the focal loss is not swamped by negatives early on.
pub const CLS_BIAS_INIT: f64 = -4.595119850134589; // -ln((1-0.01)/0.01)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Output channels per backbone stage; each stage is a 3x3 convolution.
    pub backbone_channels: Vec<usize>,
    /// Stride per backbone stage; the product is the head's base stride.
    pub backbone_strides: Vec<usize>,
    /// Query image size (height, width).
    pub query_size: (usize, usize),
    /// Reference image size (height, width).
    pub reference_size: (usize, usize),
    pub head: HeadConfig,
    pub sigma_floor: f64,
    /// Replace cross-view fusion with a pass-through of the reference
    /// features (ablation switch).
    pub use_cvoam: bool,
    pub seed: u64,
}

impl ModelConfig {
    /// Smallest config that still exercises every module; used by the
    /// gradient-check harness.
    pub fn tiny() -> Self {
        Self {
            backbone_channels: vec![4, 8],
            backbone_strides: vec![2, 2],
            query_size: (32, 32),
            reference_size: (64, 64),
            head: HeadConfig::single_level(4),
            sigma_floor: gpe::SIGMA_FLOOR,
            use_cvoam: true,
            seed: 0,
        }
    }

    /// Desk-scale training config: small enough for CPU epochs, big enough
    /// to fit the synthetic task.
    pub fn compact() -> Self {
        Self {
            backbone_channels: vec![8, 16],
            backbone_strides: vec![2, 2],
            query_size: (32, 32),
            reference_size: (64, 64),
            head: HeadConfig::single_level(4),
            sigma_floor: gpe::SIGMA_FLOOR,
            use_cvoam: true,
            seed: 0,
        }
    }

    /// Default full-size config.
    pub fn default_full() -> Self {
        Self {
            backbone_channels: vec![16, 32, 64],
            backbone_strides: vec![2, 2, 2],
            query_size: (64, 64),
            reference_size: (128, 128),
            head: HeadConfig::single_level(8),
            sigma_floor: gpe::SIGMA_FLOOR,
            use_cvoam: true,
            seed: 0,
        }
    }

    pub fn total_stride(&self) -> usize {
        self.backbone_strides.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone_channels.is_empty()
            || self.backbone_channels.len() != self.backbone_strides.len()
        {
            return Err(Error::Config(format!(
                "backbone needs matching non-empty channel/stride lists, got {:?} / {:?}",
                self.backbone_channels, self.backbone_strides
            )));
        }
        if self.backbone_strides.iter().any(|&s| s == 0) {
            return Err(Error::Config("backbone strides must be positive".into()));
        }
        self.head.validate()?;
        let total = self.total_stride();
        if self.head.strides[0] != total {
            return Err(Error::Config(format!(
                "head base stride {} must equal the backbone total stride {total}",
                self.head.strides[0]
            )));
        }
        for pair in self.head.strides.windows(2) {
            if pair[1] != pair[0] * 2 {
                return Err(Error::Config(format!(
                    "head strides must double per level, got {:?}",
                    self.head.strides
                )));
            }
        }
        for (label, (h, w)) in [
            ("query", self.query_size),
            ("reference", self.reference_size),
        ] {
            if h == 0 || w == 0 || h % total != 0 || w % total != 0 {
                return Err(Error::Config(format!(
                    "{label} size {h}x{w} must be a positive multiple of the total stride {total}"
                )));
            }
        }
        let (rh, rw) = self.reference_size;
        for &s in &self.head.strides {
            if rh % s != 0 || rw % s != 0 {
                return Err(Error::Config(format!(
                    "reference size {rh}x{rw} must be divisible by head stride {s}"
                )));
            }
        }
        let (qh, qw) = self.query_grid();
        if !(gpe::default_sigma_init(qh, qw) > self.sigma_floor) {
            return Err(Error::Config(format!(
                "query grid {qh}x{qw} too small for sigma floor {}",
                self.sigma_floor
            )));
        }
        Ok(())
    }

    /// Query-branch feature grid (height, width).
    pub fn query_grid(&self) -> (usize, usize) {
        let s = self.total_stride();
        (self.query_size.0 / s, self.query_size.1 / s)
    }

    /// Head grid per level on the reference branch.
    pub fn reference_grids(&self) -> Vec<(usize, usize)> {
        self.head
            .strides
            .iter()
            .map(|&s| (self.reference_size.0 / s, self.reference_size.1 / s))
            .collect()
    }
}

/// Intermediate maps kept for inspection and the export-heatmap path.
pub struct ForwardTrace<T: Scalar> {
    /// Click encoding at the query feature grid.
    pub gpe: Tensor<T>,
    /// Spatial gate over the reference grid (absent in the ablation).
    pub a1: Option<Tensor<T>>,
    /// Channel gate (absent in the ablation).
    pub a2: Option<Tensor<T>>,
}

struct ConvLayer<T: Scalar> {
    weight: Tensor<T>,
    bias: Tensor<T>,
    stride: usize,
}

impl<T: Scalar> ConvLayer<T> {
    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.conv2d(&self.weight, Some(&self.bias), self.stride, 1)?)
    }
}

pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
    stages: Vec<ConvLayer<T>>,
    sigma: Tensor<T>,
    inject: Tensor<T>,
    necks: Vec<ConvLayer<T>>,
    trunk: ConvLayer<T>,
    cls: ConvLayer<T>,
    ctr: ConvLayer<T>,
    reg: ConvLayer<T>,
}

fn init_conv<T: Scalar>(
    params: &mut ParamSet<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    stride: usize,
    bias_init: f64,
) -> Result<ConvLayer<T>> {
    let fan_in = (c_in * k * k) as f64;
    let bound = 1.0 / fan_in.sqrt();
    let weight: Vec<T> = (0..c_out * c_in * k * k)
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect();
    let weight = params.register(
        &format!("{name}.weight"),
        Tensor::leaf(weight, &[c_out, c_in, k, k], true)?,
    )?;
    let bias = params.register(
        &format!("{name}.bias"),
        Tensor::leaf(vec![T::from_f64(bias_init); c_out], &[c_out], true)?,
    )?;
    Ok(ConvLayer {
        weight,
        bias,
        stride,
    })
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let mut stages = Vec::new();
        let mut c_in = 3;
        for (i, (&c_out, &stride)) in config
            .backbone_channels
            .iter()
            .zip(&config.backbone_strides)
            .enumerate()
        {
            stages.push(init_conv(
                &mut params,
                &mut rng,
                &format!("backbone.stage{i}"),
                c_out,
                c_in,
                3,
                stride,
                0.0,
            )?);
            c_in = c_out;
        }
        let c = c_in;

        let (qh, qw) = config.query_grid();
        let sigma_raw = gpe::raw_for_sigma(gpe::default_sigma_init(qh, qw), config.sigma_floor)?;
        let sigma = params.register(
            "gpe.sigma",
            Tensor::leaf(vec![T::from_f64(sigma_raw)], &[], true)?,
        )?;

        let bound = 1.0 / ((c + 1) as f64).sqrt();
        let inject_w: Vec<T> = (0..c * (c + 1))
            .map(|_| T::from_f64(rng.random_range(-bound..bound)))
            .collect();
        let inject = params.register(
            "inject.proj.weight",
            Tensor::leaf(inject_w, &[c, c + 1, 1, 1], true)?,
        )?;

        let mut necks = Vec::new();
        for level in 1..config.head.num_levels() {
            necks.push(init_conv(
                &mut params,
                &mut rng,
                &format!("neck.level{level}"),
                c,
                c,
                3,
                2,
                0.0,
            )?);
        }

        let trunk = init_conv(&mut params, &mut rng, "head.trunk", c, c, 3, 1, 0.0)?;
        let cls = init_conv(&mut params, &mut rng, "head.cls", 1, c, 3, 1, CLS_BIAS_INIT)?;
        let ctr = init_conv(&mut params, &mut rng, "head.ctr", 1, c, 3, 1, 0.0)?;
        let reg = init_conv(&mut params, &mut rng, "head.reg", 4, c, 3, 1, 0.0)?;

        Ok(Self {
            config,
            params,
            stages,
            sigma,
            inject,
            necks,
            trunk,
            cls,
            ctr,
            reg,
        })
    }

    /// Both branches run through these same layers (weight sharing).
    fn backbone(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = image.clone();
        for stage in &self.stages {
            x = stage.apply(&x)?.softplus();
        }
        Ok(x)
    }

    fn check_image(&self, label: &str, image: &Tensor<T>, size: (usize, usize)) -> Result<()> {
        if image.shape() != [3, size.0, size.1] {
            return Err(Error::Config(format!(
                "{label} image shape {:?} does not match configured {}x{}",
                image.shape(),
                size.0,
                size.1
            )));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        query: &Tensor<T>,
        click: ClickPoint,
        reference: &Tensor<T>,
    ) -> Result<Vec<HeadOutput<T>>> {
        Ok(self.forward_with_trace(query, click, reference)?.0)
    }

    pub fn forward_with_trace(
        &self,
        query: &Tensor<T>,
        click: ClickPoint,
        reference: &Tensor<T>,
    ) -> Result<(Vec<HeadOutput<T>>, ForwardTrace<T>)> {
        self.check_image("query", query, self.config.query_size)?;
        self.check_image("reference", reference, self.config.reference_size)?;

        let f_q = self.backbone(query)?;
        let (gh, gw) = (f_q.shape()[1], f_q.shape()[2]);
        let grid_click = click.to_grid(self.config.query_size, (gh, gw));
        let p_map = gpe::gpe_map(gh, gw, grid_click, &self.sigma, self.config.sigma_floor)?;
        let f_q = gpe::inject_gpe(&f_q, &p_map, &self.inject)?;

        let f_r = self.backbone(reference)?;
        let (fused, a1, a2) = if self.config.use_cvoam {
            let trace = cvoam::cvoam(&f_q, &f_r)?;
            (trace.fused, Some(trace.a1), Some(trace.a2))
        } else {
            (f_r, None, None)
        };

        let mut outputs = Vec::with_capacity(self.config.head.num_levels());
        let mut level_map = fused;
        for (level, &stride) in self.config.head.strides.iter().enumerate() {
            if level > 0 {
                level_map = self.necks[level - 1].apply(&level_map)?.softplus();
            }
            let h = self.trunk.apply(&level_map)?.softplus();
            let (gh, gw) = (h.shape()[1], h.shape()[2]);
            let cls_logits = self.cls.apply(&h)?.reshape(&[gh, gw])?;
            let ctr_logits = self.ctr.apply(&h)?.reshape(&[gh, gw])?;
            let offsets = offsets_from_raw(&self.reg.apply(&h)?, stride);
            outputs.push(HeadOutput {
                cls_logits,
                ctr_logits,
                offsets,
                stride,
            });
        }
        Ok((outputs, ForwardTrace { gpe: p_map, a1, a2 }))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.params.save(path)
    }

    pub fn load(&self, path: &std::path::Path) -> Result<()> {
        self.params.load(path)
    }
}
