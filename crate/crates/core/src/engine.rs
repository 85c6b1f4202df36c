//! Dual-path denoising with key/value context enrichment.
//!
//! Both paths start from the same noise anchor and advance in lockstep over
//! one schedule. At every step the reconstruction path (source first frame,
//! null prompt) records each layer's keys and values; the editing path (edited
//! first frame, target prompt) then takes the same solver step, and inside the
//! guidance window its self-attention at the vital layers attends over its own
//! keys/values concatenated with the reconstruction ones.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::solver::{cfg_velocity, integrate, step, Direction, SolverSchedule, VelocityFn};
use crate::velocity::{
    forward_velocity, AttentionTap, Conditioning, DiTWeights, KvContext, LatentVideo,
};

/// Where and when enrichment is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichmentPolicy {
    pub vital_layers: BTreeSet<usize>,
    /// Fraction of denoising steps, counted from the noisy end, with
    /// enrichment active.
    pub tau: f64,
    pub guidance_scale: f32,
}

impl Default for EnrichmentPolicy {
    fn default() -> Self {
        Self {
            vital_layers: BTreeSet::new(),
            tau: 0.5,
            guidance_scale: 3.0,
        }
    }
}

impl EnrichmentPolicy {
    pub fn new(vital_layers: impl IntoIterator<Item = usize>, tau: f64, guidance_scale: f32) -> Self {
        Self {
            vital_layers: vital_layers.into_iter().collect(),
            tau,
            guidance_scale,
        }
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if let Some(&l) = self.vital_layers.iter().find(|&&l| l >= num_layers) {
            return Err(Error::config(format!(
                "vital layer {l} does not exist in a {num_layers}-layer model"
            )));
        }
        if !self.guidance_scale.is_finite() {
            return Err(Error::config("guidance scale must be finite"));
        }
        Ok(())
    }
}

/// True iff step `i` (0-based, from the noisy end) lies in the first
/// `floor(tau * n_steps)` steps.
pub fn guidance_active(step_index: usize, n_steps: usize, tau: f64) -> bool {
    // the small offset keeps products such as 0.29 * 100 from flooring to 28
    let window = (tau * n_steps as f64 + 1e-9).floor() as usize;
    step_index < window
}

/// Reconstruction keys/values keyed by `(step, evaluation within step)`.
#[derive(Debug, Default)]
pub struct KvCache {
    entries: BTreeMap<(usize, usize), KvContext>,
}

impl KvCache {
    pub fn insert(&mut self, step: usize, eval: usize, context: KvContext) {
        self.entries.insert((step, eval), context);
    }

    /// Removes and returns an entry; a miss is an invariant violation.
    pub fn take(&mut self, step: usize, eval: usize) -> Result<KvContext> {
        self.entries.remove(&(step, eval)).ok_or_else(|| {
            Error::Invariant(format!(
                "no reconstruction keys/values cached for step {step}, evaluation {eval}"
            ))
        })
    }

    pub fn drop_step(&mut self, step: usize) {
        self.entries.retain(|&(s, _), _| s != step);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct EditSession {
    pub anchor: LatentVideo,
    pub src_cond: Conditioning,
    pub edit_cond: Conditioning,
    pub policy: EnrichmentPolicy,
    pub schedule: SolverSchedule,
}

/// Record of which cached keys/values the editing path consumed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnrichmentTrace {
    /// `(step, layer)` pairs whose reconstruction context was used.
    pub consumed: BTreeSet<(usize, usize)>,
    /// Steps at which the reconstruction path stored keys/values.
    pub captured_steps: Vec<usize>,
    /// Largest number of cache entries alive at once.
    pub peak_cache_entries: usize,
}

impl EnrichmentTrace {
    pub fn enriched_steps(&self) -> BTreeSet<usize> {
        self.consumed.iter().map(|&(s, _)| s).collect()
    }
}

#[derive(Debug, Clone)]
pub struct DualPathOutput {
    pub recon: LatentVideo,
    pub edited: LatentVideo,
    pub trace: EnrichmentTrace,
}

/// Velocity of the editing path: optional enrichment and classifier-free
/// guidance against the null prompt. With a null prompt both guidance
/// branches coincide, so the unconditional pass is skipped.
fn guided_velocity(
    weights: &DiTWeights,
    z: &Tensor,
    t: f32,
    cond: &Conditioning,
    guidance_scale: f32,
    context: Option<&KvContext>,
) -> Result<(Tensor, Vec<usize>)> {
    let new_tap = || match context {
        Some(ctx) => AttentionTap::enrich(ctx),
        None => AttentionTap::off(),
    };
    let mut tap = new_tap();
    let v_cond = forward_velocity(weights, z, t, cond, &mut tap)?;
    let consumed = std::mem::take(&mut tap.consumed_layers);
    if cond.has_null_prompt() {
        return Ok((v_cond, consumed));
    }
    let v_uncond = forward_velocity(weights, z, t, &cond.unconditional(), &mut new_tap())?;
    Ok((cfg_velocity(&v_cond, &v_uncond, guidance_scale)?, consumed))
}

/// Integrates the source video from t = 0 to t = 1 under its own first frame
/// and the null prompt.
pub fn invert_source(
    weights: &DiTWeights,
    video: &LatentVideo,
    src_cond: &Conditioning,
    schedule: &SolverSchedule,
) -> Result<LatentVideo> {
    if schedule.direction != Direction::Invert {
        return Err(Error::config("inversion needs an Invert schedule"));
    }
    if !src_cond.has_null_prompt() {
        return Err(Error::config("source conditioning must use the null prompt"));
    }
    let mut v_fn =
        |z: &Tensor, t: f32| forward_velocity(weights, z, t, src_cond, &mut AttentionTap::off());
    integrate(video, &mut v_fn, schedule)
}

/// Plain guided denoising from the anchor with no enrichment.
pub fn single_path(
    anchor: &LatentVideo,
    cond: &Conditioning,
    weights: &DiTWeights,
    schedule: &SolverSchedule,
    guidance_scale: f32,
) -> Result<LatentVideo> {
    if schedule.direction != Direction::Sample {
        return Err(Error::config("denoising needs a Sample schedule"));
    }
    let mut v_fn = |z: &Tensor, t: f32| {
        guided_velocity(weights, z, t, cond, guidance_scale, None).map(|(v, _)| v)
    };
    integrate(anchor, &mut v_fn, schedule)
}

/// Lockstep reconstruction and editing paths.
pub fn run_dual_path(session: &EditSession, weights: &DiTWeights) -> Result<DualPathOutput> {
    let EditSession {
        anchor,
        src_cond,
        edit_cond,
        policy,
        schedule,
    } = session;
    if schedule.direction != Direction::Sample {
        return Err(Error::config("dual-path denoising needs a Sample schedule"));
    }
    policy.validate(weights.num_layers())?;
    if !anchor.is_finite() {
        return Err(Error::Numeric {
            t: 1.0,
            what: "noise anchor".into(),
        });
    }

    let n_steps = schedule.num_steps();
    let mut cache = KvCache::default();
    let mut trace = EnrichmentTrace::default();
    let mut z_recon = anchor.clone();
    let mut z_edit = anchor.clone();

    for (i, (t_cur, t_next)) in schedule.steps().enumerate() {
        let mut eval = 0;
        let mut recon_fn = |z: &Tensor, t: f32| {
            let mut tap = AttentionTap::capture();
            let v = forward_velocity(weights, z, t, src_cond, &mut tap)?;
            cache.insert(i, eval, KvContext::from_captured(tap.captured_kv));
            eval += 1;
            Ok(v)
        };
        z_recon = step(schedule.order, &z_recon, &mut recon_fn, t_cur, t_next)?;
        trace.captured_steps.push(i);
        trace.peak_cache_entries = trace.peak_cache_entries.max(cache.len());

        let active = guidance_active(i, n_steps, policy.tau) && !policy.vital_layers.is_empty();
        let mut eval = 0;
        let mut consumed = BTreeSet::new();
        let mut edit_fn = |z: &Tensor, t: f32| -> Result<Tensor> {
            let context = if active {
                let mut ctx = cache.take(i, eval)?;
                if let Some(&l) = policy.vital_layers.iter().find(|&&l| ctx.get(l).is_none()) {
                    return Err(Error::Invariant(format!(
                        "reconstruction keys/values for step {i}, layer {l} are missing"
                    )));
                }
                ctx.retain(|l| policy.vital_layers.contains(&l));
                Some(ctx)
            } else {
                None
            };
            eval += 1;
            let (v, layers) =
                guided_velocity(weights, z, t, edit_cond, policy.guidance_scale, context.as_ref())?;
            consumed.extend(layers.into_iter().map(|l| (i, l)));
            Ok(v)
        };
        z_edit = step(schedule.order, &z_edit, &mut edit_fn as &mut dyn VelocityFn, t_cur, t_next)?;
        trace.consumed.extend(consumed);
        cache.drop_step(i);
    }

    Ok(DualPathOutput {
        recon: z_recon,
        edited: z_edit,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_gaussian, Rng};
    use crate::solver::{make_schedule, SolverOrder};
    use crate::velocity::{init_weights, DiTConfig};

    fn small() -> DiTConfig {
        DiTConfig {
            num_layers: 4,
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

    struct Fixture {
        weights: DiTWeights,
        video: Tensor,
        src: Conditioning,
        edit: Conditioning,
    }

    fn fixture(seed: u64) -> Fixture {
        let cfg = small();
        let weights = init_weights(&cfg, seed).unwrap();
        let mut rng = Rng::new(seed + 1);
        let video = seeded_gaussian(&cfg.latent_shape(), &mut rng);
        let src = Conditioning::source(&video, cfg.model_dim).unwrap();
        let edited_frame = seeded_gaussian(&cfg.frame_shape(), &mut rng);
        let edit = Conditioning::new(edited_frame, seeded_gaussian(&[cfg.model_dim], &mut rng));
        Fixture {
            weights,
            video,
            src,
            edit,
        }
    }

    fn session(f: &Fixture, edit: &Conditioning, policy: EnrichmentPolicy, n: usize) -> EditSession {
        EditSession {
            anchor: f.video.clone(),
            src_cond: f.src.clone(),
            edit_cond: edit.clone(),
            policy,
            schedule: make_schedule(n, Direction::Sample, SolverOrder::Rf2).unwrap(),
        }
    }

    #[test]
    fn window_examples() {
        let active: Vec<usize> = (0..50).filter(|&i| guidance_active(i, 50, 0.5)).collect();
        assert_eq!(active, (0..25).collect::<Vec<_>>());
        assert!((0..50).all(|i| !guidance_active(i, 50, 0.0)));
        assert!((0..50).all(|i| guidance_active(i, 50, 1.0)));
        assert_eq!((0..100).filter(|&i| guidance_active(i, 100, 0.29)).count(), 29);
    }

    #[test]
    fn zero_model_inversion_is_identity() {
        let cfg = small();
        let w = DiTWeights::zeros(&cfg).unwrap();
        let video = seeded_gaussian(&cfg.latent_shape(), &mut Rng::new(2));
        let src = Conditioning::source(&video, cfg.model_dim).unwrap();
        let sched = make_schedule(5, Direction::Invert, SolverOrder::Rf2).unwrap();
        let anchor = invert_source(&w, &video, &src, &sched).unwrap();
        assert!(anchor.bitwise_eq(&video));
        let back = single_path(
            &anchor,
            &src,
            &w,
            &make_schedule(5, Direction::Sample, SolverOrder::Rf2).unwrap(),
            3.0,
        )
        .unwrap();
        assert!(back.bitwise_eq(&anchor));
    }

    #[test]
    fn inversion_rejects_prompted_source_and_wrong_direction() {
        let f = fixture(3);
        let sched = make_schedule(2, Direction::Invert, SolverOrder::Euler).unwrap();
        let prompted = f.src.with_prompt(f.edit.prompt.clone());
        assert!(matches!(
            invert_source(&f.weights, &f.video, &prompted, &sched),
            Err(Error::Config(_))
        ));
        let wrong = make_schedule(2, Direction::Sample, SolverOrder::Euler).unwrap();
        assert!(matches!(
            invert_source(&f.weights, &f.video, &f.src, &wrong),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn inversion_is_deterministic() {
        let f = fixture(4);
        let sched = make_schedule(3, Direction::Invert, SolverOrder::Rf2).unwrap();
        let a = invert_source(&f.weights, &f.video, &f.src, &sched).unwrap();
        let b = invert_source(&f.weights, &f.video, &f.src, &sched).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn identity_edit_tracks_reconstruction() {
        let f = fixture(5);
        for (layers, tau) in [(vec![0, 1, 2, 3], 1.0), (vec![1, 3], 0.5), (vec![2], 0.25)] {
            let out = run_dual_path(
                &session(&f, &f.src, EnrichmentPolicy::new(layers, tau, 3.0), 8),
                &f.weights,
            )
            .unwrap();
            assert!(out.recon.max_abs_diff(&out.edited).unwrap() < 1e-4);
            assert!(!out.trace.consumed.is_empty());
        }
    }

    #[test]
    fn empty_window_and_empty_layer_set_match_single_path() {
        let f = fixture(6);
        let s = session(&f, &f.edit, EnrichmentPolicy::new([0, 2], 0.0, 3.0), 6);
        let baseline = single_path(&f.video, &f.edit, &f.weights, &s.schedule, 3.0).unwrap();
        let out = run_dual_path(&s, &f.weights).unwrap();
        assert!(out.edited.bitwise_eq(&baseline));
        assert!(out.trace.consumed.is_empty());

        let s = session(&f, &f.edit, EnrichmentPolicy::new([], 1.0, 3.0), 6);
        assert!(run_dual_path(&s, &f.weights).unwrap().edited.bitwise_eq(&baseline));
    }

    #[test]
    fn reconstruction_is_independent_of_editing() {
        let f = fixture(7);
        let s = session(&f, &f.edit, EnrichmentPolicy::new([1, 2], 0.5, 3.0), 6);
        let out = run_dual_path(&s, &f.weights).unwrap();
        let alone = single_path(&f.video, &f.src, &f.weights, &s.schedule, 3.0).unwrap();
        assert!(out.recon.bitwise_eq(&alone));
    }

    #[test]
    fn consumed_keys_match_window_and_layers() {
        let f = fixture(8);
        let s = session(&f, &f.edit, EnrichmentPolicy::new([0, 3], 0.5, 3.0), 6);
        let out = run_dual_path(&s, &f.weights).unwrap();
        let expected: BTreeSet<(usize, usize)> =
            (0..3).flat_map(|i| [(i, 0), (i, 3)]).collect();
        assert_eq!(out.trace.consumed, expected);
        assert_eq!(out.trace.captured_steps, (0..6).collect::<Vec<_>>());
        // RF2 keeps the two evaluations of a single step alive, never more
        assert_eq!(out.trace.peak_cache_entries, 2);
    }

    #[test]
    fn enrichment_changes_a_real_edit() {
        let f = fixture(9);
        let none = run_dual_path(
            &session(&f, &f.edit, EnrichmentPolicy::new([], 0.5, 3.0), 6),
            &f.weights,
        )
        .unwrap();
        let all = run_dual_path(
            &session(&f, &f.edit, EnrichmentPolicy::new(0..4, 0.5, 3.0), 6),
            &f.weights,
        )
        .unwrap();
        assert!(none.edited.sub(&all.edited).unwrap().l2_norm() > 0.0);
    }

    #[test]
    fn invalid_policy_is_rejected() {
        let f = fixture(10);
        let s = session(&f, &f.edit, EnrichmentPolicy::new([9], 0.5, 3.0), 2);
        assert!(matches!(run_dual_path(&s, &f.weights), Err(Error::Config(_))));
        let s = session(&f, &f.edit, EnrichmentPolicy::new([0], 1.5, 3.0), 2);
        assert!(matches!(run_dual_path(&s, &f.weights), Err(Error::Config(_))));
    }

    #[test]
    fn cache_miss_is_an_invariant_violation() {
        let mut cache = KvCache::default();
        cache.insert(0, 0, KvContext::new());
        assert!(cache.take(0, 0).is_ok());
        assert!(matches!(cache.take(0, 0), Err(Error::Invariant(_))));
        assert!(matches!(cache.take(3, 1), Err(Error::Invariant(_))));
    }
}
