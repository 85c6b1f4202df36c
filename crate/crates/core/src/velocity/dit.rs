//! Seeded toy diffusion transformer.
//!
//! Pre-norm blocks run self-attention over `[first-frame tokens ∥ prompt token
//! ∥ latent tokens]`. Conditioning enters only as extra attention tokens; the
//! time embedding is added to every token after the input projection. The
//! condition tokens are stripped before the output projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gelu, layer_norm, matmul, seeded_gaussian, Rng, Tensor};

use super::attention::multi_head_attention;
use super::tap::{AttentionTap, LayerKV, TapMode};

/// A `[frames, height, width, channels]` latent grid.
pub type LatentVideo = Tensor;

const LN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiTConfig {
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub time_dim: usize,
    pub mlp_ratio: usize,
}

impl Default for DiTConfig {
    fn default() -> Self {
        Self {
            num_layers: 8,
            model_dim: 64,
            num_heads: 4,
            frames: 4,
            height: 8,
            width: 8,
            channels: 4,
            time_dim: 32,
            mlp_ratio: 2,
        }
    }
}

impl DiTConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("model_dim", self.model_dim),
            ("num_heads", self.num_heads),
            ("frames", self.frames),
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("time_dim", self.time_dim),
            ("mlp_ratio", self.mlp_ratio),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::config(format!(
                "model_dim {} is not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(Error::config(format!(
                "time_dim must be even, got {}",
                self.time_dim
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn latent_shape(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn latent_tokens(&self) -> usize {
        self.frames * self.height * self.width
    }

    /// First-frame tokens plus the prompt token.
    pub fn condition_tokens(&self) -> usize {
        self.height * self.width + 1
    }

    pub fn total_tokens(&self) -> usize {
        self.condition_tokens() + self.latent_tokens()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub w_up: Tensor,
    pub w_down: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiTWeights {
    pub config: DiTConfig,
    pub token_in: Tensor,
    pub token_out: Tensor,
    pub time_proj: Tensor,
    pub prompt_proj: Tensor,
    pub blocks: Vec<BlockWeights>,
}

fn scaled_gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    seeded_gaussian(&[rows, cols], rng).scale(1.0 / (rows as f32).sqrt())
}

/// Draws every matrix from its own forked stream, scaled by `1/sqrt(fan_in)`.
pub fn init_weights(config: &DiTConfig, seed: u64) -> Result<DiTWeights> {
    config.validate()?;
    let mut rng = Rng::new(seed);
    let d = config.model_dim;
    let hidden = d * config.mlp_ratio;
    let token_in = scaled_gaussian(config.channels, d, &mut rng.fork());
    let token_out = scaled_gaussian(d, config.channels, &mut rng.fork());
    let time_proj = scaled_gaussian(config.time_dim, d, &mut rng.fork());
    let prompt_proj = scaled_gaussian(d, d, &mut rng.fork());
    let blocks = (0..config.num_layers)
        .map(|_| {
            let mut r = rng.fork();
            BlockWeights {
                wq: scaled_gaussian(d, d, &mut r),
                wk: scaled_gaussian(d, d, &mut r),
                wv: scaled_gaussian(d, d, &mut r),
                wo: scaled_gaussian(d, d, &mut r),
                w_up: scaled_gaussian(d, hidden, &mut r),
                w_down: scaled_gaussian(hidden, d, &mut r),
            }
        })
        .collect();
    Ok(DiTWeights {
        config: config.clone(),
        token_in,
        token_out,
        time_proj,
        prompt_proj,
        blocks,
    })
}

impl DiTWeights {
    /// All-zero weights; the resulting velocity is identically zero.
    pub fn zeros(config: &DiTConfig) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let hidden = d * config.mlp_ratio;
        let z = |r, c| Tensor::zeros(&[r, c]);
        Ok(Self {
            config: config.clone(),
            token_in: z(config.channels, d),
            token_out: z(d, config.channels),
            time_proj: z(config.time_dim, d),
            prompt_proj: z(d, d),
            blocks: (0..config.num_layers)
                .map(|_| BlockWeights {
                    wq: z(d, d),
                    wk: z(d, d),
                    wv: z(d, d),
                    wo: z(d, d),
                    w_up: z(d, hidden),
                    w_down: z(hidden, d),
                })
                .collect(),
        })
    }

    pub fn num_layers(&self) -> usize {
        self.blocks.len()
    }
}

/// Conditioning of one denoising path: the first frame and a prompt vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    /// `[height, width, channels]`.
    pub first_frame: Tensor,
    /// `[model_dim]`; all zeros is the null prompt.
    pub prompt: Tensor,
}

impl Conditioning {
    pub fn new(first_frame: Tensor, prompt: Tensor) -> Self {
        Self {
            first_frame,
            prompt,
        }
    }

    /// First frame of `video` with the null prompt.
    pub fn source(video: &LatentVideo, model_dim: usize) -> Result<Self> {
        Ok(Self::new(
            first_frame(video)?,
            Tensor::zeros(&[model_dim]),
        ))
    }

    pub fn with_prompt(&self, prompt: Tensor) -> Self {
        Self::new(self.first_frame.clone(), prompt)
    }

    /// Same first frame, null prompt.
    pub fn unconditional(&self) -> Self {
        self.with_prompt(Tensor::zeros(self.prompt.shape()))
    }

    pub fn has_null_prompt(&self) -> bool {
        self.prompt.data().iter().all(|&v| v == 0.0)
    }

    fn validate(&self, config: &DiTConfig) -> Result<()> {
        if self.first_frame.shape() != config.frame_shape() {
            return Err(Error::shape(format!(
                "first frame {:?} does not match frame shape {:?}",
                self.first_frame.shape(),
                config.frame_shape()
            )));
        }
        if self.prompt.shape() != [config.model_dim] {
            return Err(Error::shape(format!(
                "prompt {:?} does not match model dim {}",
                self.prompt.shape(),
                config.model_dim
            )));
        }
        if !self.first_frame.is_finite() || !self.prompt.is_finite() {
            return Err(Error::Domain("conditioning contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Frame 0 of a `[F, H, W, C]` video as `[H, W, C]`.
pub fn first_frame(video: &LatentVideo) -> Result<Tensor> {
    match video.shape() {
        &[f, h, w, c] if f > 0 => {
            Tensor::new(vec![h, w, c], video.data()[..h * w * c].to_vec())
        }
        s => Err(Error::shape(format!("expected a non-empty [F, H, W, C] video, got {s:?}"))),
    }
}

/// Interleaved `[sin(t f_0), cos(t f_0), sin(t f_1), ...]` with
/// `f_i = 10000^(-2i/dim)`.
pub fn time_embedding(t: f32, dim: usize) -> Result<Tensor> {
    if !dim.is_multiple_of(2) {
        return Err(Error::config(format!("time embedding dim must be even, got {dim}")));
    }
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        let arg = f64::from(t) * freq;
        out.push(arg.sin() as f32);
        out.push(arg.cos() as f32);
    }
    Ok(Tensor::vector(out))
}

/// Velocity of the latent at time `t` under `cond`, observed through `tap`.
pub fn forward_velocity(
    weights: &DiTWeights,
    latent: &LatentVideo,
    t: f32,
    cond: &Conditioning,
    tap: &mut AttentionTap<'_>,
) -> Result<Tensor> {
    let cfg = &weights.config;
    if latent.shape() != cfg.latent_shape() {
        return Err(Error::shape(format!(
            "latent {:?} does not match configured shape {:?}",
            latent.shape(),
            cfg.latent_shape()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("timestep {t} outside [0, 1]")));
    }
    cond.validate(cfg)?;
    let num_layers = weights.num_layers();
    match tap.mode {
        TapMode::Enrich(ctx) => {
            if let Some(l) = ctx.layers().find(|&l| l >= num_layers) {
                return Err(Error::shape(format!(
                    "tap context references layer {l} but the model has {num_layers}"
                )));
            }
        }
        TapMode::Probe(ctx) => {
            if let Some(l) = ctx.layers().find(|&l| l >= num_layers) {
                return Err(Error::shape(format!(
                    "tap context references layer {l} but the model has {num_layers}"
                )));
            }
            if let Some(l) = (0..num_layers).find(|&l| ctx.get(l).is_none()) {
                return Err(Error::shape(format!("probe context is missing layer {l}")));
            }
        }
        TapMode::Off | TapMode::CaptureKV => {}
    }
    tap.reset();

    let d = cfg.model_dim;
    let n_lat = cfg.latent_tokens();
    let n_cond = cfg.condition_tokens();
    let frame_tokens = matmul(
        &cond.first_frame.clone().reshape(&[cfg.height * cfg.width, cfg.channels])?,
        &weights.token_in,
    )?;
    let prompt_token = matmul(&cond.prompt.clone().reshape(&[1, d])?, &weights.prompt_proj)?;
    let latent_tokens = matmul(
        &latent.clone().reshape(&[n_lat, cfg.channels])?,
        &weights.token_in,
    )?;
    let mut x = Tensor::concat_rows(&[&frame_tokens, &prompt_token, &latent_tokens])?;

    let temb = matmul(
        &time_embedding(t, cfg.time_dim)?.reshape(&[1, cfg.time_dim])?,
        &weights.time_proj,
    )?;
    for i in 0..x.rows() {
        x.row_mut(i)
            .iter_mut()
            .zip(temb.data())
            .for_each(|(a, b)| *a += b);
    }

    for (l, block) in weights.blocks.iter().enumerate() {
        let h = layer_norm(&x, LN_EPS)?;
        let q = matmul(&h, &block.wq)?;
        let k = matmul(&h, &block.wk)?;
        let v = matmul(&h, &block.wv)?;

        let attn = match tap.mode {
            TapMode::Off | TapMode::CaptureKV => {
                multi_head_attention(&q, &k, &v, cfg.num_heads, None)?
            }
            TapMode::Enrich(ctx) => match ctx.get(l) {
                Some(kv) => {
                    tap.consumed_layers.push(l);
                    multi_head_attention(&q, &k, &v, cfg.num_heads, Some(kv))?
                }
                None => multi_head_attention(&q, &k, &v, cfg.num_heads, None)?,
            },
            TapMode::Probe(ctx) => {
                let kv = ctx.get(l).expect("probe context checked above");
                let enriched = multi_head_attention(&q, &k, &v, cfg.num_heads, Some(kv))?;
                tap.consumed_layers.push(l);
                tap.enriched_outputs.push(enriched);
                multi_head_attention(&q, &k, &v, cfg.num_heads, None)?
            }
        };
        if matches!(tap.mode, TapMode::CaptureKV) {
            tap.captured_kv.push(LayerKV { k, v });
        }

        x.add_assign(&matmul(&attn, &block.wo)?)?;
        tap.attn_outputs.push(attn);

        let hidden = matmul(&layer_norm(&x, LN_EPS)?, &block.w_up)?.map(gelu);
        x.add_assign(&matmul(&hidden, &block.w_down)?)?;
    }

    let latent_part = x.slice_rows(n_cond, n_cond + n_lat)?;
    let out = matmul(&layer_norm(&latent_part, LN_EPS)?, &weights.token_out)?;
    if !out.is_finite() {
        return Err(Error::Numeric {
            t,
            what: "transformer produced a non-finite velocity".into(),
        });
    }
    out.reshape(latent.shape())
}
