//! Guidance responsiveness: how strongly each layer's self-attention output
//! reacts when that layer alone is enriched with reconstruction context.
//!
//! `GR_l = 1 - mean cos(x_l, x_l^enriched)`, the mean running over latent
//! tokens (cosine along the channel axis) and probe items. One editing pass
//! per item yields every layer at once because only the plain activations
//! propagate between layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, seeded_gaussian, Rng, Tensor};
use crate::velocity::{forward_velocity, AttentionTap, Conditioning, DiTWeights, KvContext, LatentVideo};

#[derive(Debug, Clone)]
pub struct ProbeItem {
    pub video: LatentVideo,
    pub src_cond: Conditioning,
    pub edit_cond: Conditioning,
    /// Seed of the noise mixed into the video at the probe timestep.
    pub noise_seed: u64,
}

#[derive(Debug, Clone)]
pub struct ProbeSet {
    pub items: Vec<ProbeItem>,
    /// Timestep of the one-step probe; 1.0 is the first denoising step.
    pub probe_t: f32,
}

impl ProbeSet {
    pub fn new(items: Vec<ProbeItem>) -> Self {
        Self { items, probe_t: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrProfile {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub task_label: String,
}

impl GrProfile {
    pub fn new(raw: Vec<f64>, task_label: impl Into<String>) -> Self {
        let normalized = min_max_normalize(&raw);
        Self {
            raw,
            normalized,
            task_label: task_label.into(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.raw.len()
    }
}

/// `(x - min) / (max - min)`; all-equal (or empty) input maps to zeros.
pub fn min_max_normalize(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span.is_nan() || span <= 0.0 {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|&x| (x - lo) / span).collect()
}

/// Indices of the `k` largest scores, ties broken toward the lower index,
/// returned in ascending order.
pub fn select_vital_layers(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(Error::config(format!(
            "cannot select {k} layers out of {}",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut top: Vec<usize> = order.into_iter().take(k).collect();
    top.sort_unstable();
    Ok(top)
}

/// Running `Σ cos` and token count for one layer.
#[derive(Debug, Clone, Copy, Default)]
struct CosineSum {
    sum: f64,
    count: usize,
}

impl CosineSum {
    fn add_rows(&mut self, plain: &Tensor, enriched: &Tensor, rows: std::ops::Range<usize>) -> Result<()> {
        if plain.shape() != enriched.shape() {
            return Err(Error::shape(format!(
                "activations {:?} and {:?} differ",
                plain.shape(),
                enriched.shape()
            )));
        }
        for r in rows {
            self.sum += cosine_similarity(plain.row(r), enriched.row(r))?;
            self.count += 1;
        }
        Ok(())
    }

    fn responsiveness(&self) -> f64 {
        (1.0 - self.sum / self.count as f64).clamp(0.0, 2.0)
    }
}

/// GR of a single layer from `(plain, enriched)` activation pairs, each
/// `[tokens × channels]`, averaging the per-token cosine over every row.
pub fn layer_responsiveness(pairs: &[(&Tensor, &Tensor)]) -> Result<f64> {
    let mut acc = CosineSum::default();
    for (plain, enriched) in pairs {
        acc.add_rows(plain, enriched, 0..plain.rows())?;
    }
    if acc.count == 0 {
        return Err(Error::config("no activations to compare"));
    }
    Ok(acc.responsiveness())
}

/// Latent at the probe timestep: `(1 - t) video + t noise`.
fn probe_latent(item: &ProbeItem, t: f32) -> Tensor {
    let noise = seeded_gaussian(item.video.shape(), &mut Rng::new(item.noise_seed));
    let mut z = item.video.scale(1.0 - t);
    z.data_mut()
        .iter_mut()
        .zip(noise.data())
        .for_each(|(a, n)| *a += t * n);
    z
}

pub fn guidance_responsiveness(
    weights: &DiTWeights,
    probe: &ProbeSet,
    task_label: &str,
) -> Result<GrProfile> {
    if probe.items.is_empty() {
        return Err(Error::config("probe set is empty"));
    }
    let cfg = &weights.config;
    let num_layers = weights.num_layers();
    let latent_rows = cfg.condition_tokens()..cfg.total_tokens();
    let mut acc = vec![CosineSum::default(); num_layers];

    for item in &probe.items {
        let z = probe_latent(item, probe.probe_t);
        let mut capture = AttentionTap::capture();
        forward_velocity(weights, &z, probe.probe_t, &item.src_cond, &mut capture)?;
        let context = KvContext::from_captured(capture.captured_kv);

        let mut tap = AttentionTap::probe(&context);
        forward_velocity(weights, &z, probe.probe_t, &item.edit_cond, &mut tap)?;
        for (l, layer_acc) in acc.iter_mut().enumerate() {
            layer_acc.add_rows(
                &tap.attn_outputs[l],
                &tap.enriched_outputs[l],
                latent_rows.clone(),
            )?;
        }
    }
    let raw = acc.iter().map(CosineSum::responsiveness).collect();
    Ok(GrProfile::new(raw, task_label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use crate::velocity::{init_weights, DiTConfig};
    use proptest::prelude::*;

    fn small() -> DiTConfig {
        DiTConfig {
            num_layers: 5,
            model_dim: 16,
            num_heads: 2,
            frames: 2,
            height: 4,
            width: 4,
            channels: 3,
            time_dim: 8,
            mlp_ratio: 2,
        }
    }

    fn items(cfg: &DiTConfig, n: usize, identity: bool) -> Vec<ProbeItem> {
        (0..n as u64)
            .map(|i| {
                let mut rng = Rng::new(100 + i);
                let video = seeded_gaussian(&cfg.latent_shape(), &mut rng);
                let src_cond = Conditioning::source(&video, cfg.model_dim).unwrap();
                let edit_cond = if identity {
                    src_cond.clone()
                } else {
                    Conditioning::new(
                        seeded_gaussian(&cfg.frame_shape(), &mut rng),
                        seeded_gaussian(&[cfg.model_dim], &mut rng),
                    )
                };
                ProbeItem {
                    video,
                    src_cond,
                    edit_cond,
                    noise_seed: 900 + i,
                }
            })
            .collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(min_max_normalize(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(min_max_normalize(&[5.0, 5.0, 5.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(min_max_normalize(&[0.0, 2.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn selection_examples() {
        assert_eq!(select_vital_layers(&[0.1, 0.9, 0.5, 0.9], 2).unwrap(), vec![1, 3]);
        assert_eq!(select_vital_layers(&[0.5, 0.9, 0.5, 0.2], 2).unwrap(), vec![0, 1]);
        assert!(select_vital_layers(&[0.5, 0.9], 0).unwrap().is_empty());
        assert!(matches!(select_vital_layers(&[0.5, 0.9], 3), Err(Error::Config(_))));
    }

    #[test]
    fn synthetic_antiparallel_and_orthogonal() {
        let x = Tensor::from_rows(&[&[1.0, 2.0, -1.0], &[0.5, 0.0, 3.0]]);
        let neg = x.scale(-1.0);
        assert!((layer_responsiveness(&[(&x, &neg)]).unwrap() - 2.0).abs() < 1e-12);
        let a = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let b = Tensor::from_rows(&[&[0.0, 3.0], &[-1.0, 0.0]]);
        assert!((layer_responsiveness(&[(&a, &b)]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_probe_gives_zero() {
        let cfg = small();
        let w = init_weights(&cfg, 1).unwrap();
        let profile = guidance_responsiveness(&w, &ProbeSet::new(items(&cfg, 2, true)), "id").unwrap();
        assert_eq!(profile.num_layers(), 5);
        assert!(profile.raw.iter().all(|&g| g < 1e-6), "{:?}", profile.raw);
    }

    #[test]
    fn real_probe_is_bounded_and_deterministic() {
        let cfg = small();
        let w = init_weights(&cfg, 2).unwrap();
        let set = ProbeSet::new(items(&cfg, 3, false));
        let a = guidance_responsiveness(&w, &set, "swap").unwrap();
        let b = guidance_responsiveness(&w, &set, "swap").unwrap();
        assert_eq!(a, b);
        assert!(a.raw.iter().all(|g| (0.0..=2.0).contains(g)));
        assert!(a.raw.iter().any(|&g| g > 1e-6));
        assert!(a.normalized.iter().all(|g| (0.0..=1.0).contains(g)));
    }

    #[test]
    fn duplicate_item_leaves_profile_unchanged() {
        let cfg = small();
        let w = init_weights(&cfg, 3).unwrap();
        let mut list = items(&cfg, 2, false);
        let base = guidance_responsiveness(&w, &ProbeSet::new(list.clone()), "t").unwrap();
        list.push(list[0].clone());
        list.push(list[1].clone());
        let dup = guidance_responsiveness(&w, &ProbeSet::new(list), "t").unwrap();
        for (a, b) in base.raw.iter().zip(&dup.raw) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_probe_set_is_a_config_error() {
        let cfg = small();
        let w = init_weights(&cfg, 4).unwrap();
        assert!(matches!(
            guidance_responsiveness(&w, &ProbeSet::new(vec![]), "x"),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn selection_survives_normalization(seed in 0u64..10_000, k in 0usize..9) {
            let mut rng = Rng::new(seed);
            let raw: Vec<f64> = (0..8).map(|_| 2.0 * rng.next_f64()).collect();
            let norm = min_max_normalize(&raw);
            prop_assert_eq!(select_vital_layers(&raw, k).unwrap(), select_vital_layers(&norm, k).unwrap());
        }
    }
}
