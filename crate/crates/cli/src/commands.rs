use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use flowedit_core::engine::{invert_source, run_dual_path, EditSession, EnrichmentPolicy};
use flowedit_core::metrics::{
    convergence_order, latent_frames, rel_l2, video_psnr, video_ssim, RegionMask,
};
use flowedit_core::numerics::{seeded_gaussian, Rng, Tensor};
use flowedit_core::probe::{guidance_responsiveness, select_vital_layers, GrProfile, ProbeItem, ProbeSet};
use flowedit_core::solver::{integrate, make_schedule, Direction, SolverOrder};
use flowedit_core::velocity::{init_weights, Conditioning, DiTWeights};
use flowedit_core::workbench::{
    apply_first_frame_edit, export_pgm, gen_synthetic_video, load_tensor, save_tensor, EditSpec,
    EditTask, Rect,
};

use crate::config::{seeds, ExperimentConfig};

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn save(path: &Path, t: &Tensor) -> Result<()> {
    save_tensor(path, t).with_context(|| format!("writing {}", path.display()))
}

fn order_name(order: SolverOrder) -> &'static str {
    match order {
        SolverOrder::Euler => "euler",
        SolverOrder::Rf2 => "rf2",
    }
}

pub fn solver_bench(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let bench = &cfg.bench;
    let z0 = Tensor::vector(vec![bench.initial_value]);
    let exact = bench.field.exact(&z0, 1.0, 0.0);
    let mut csv = String::from("n,order,error,slope\n");
    let mut summary = Vec::new();
    for order in [SolverOrder::Euler, SolverOrder::Rf2] {
        let mut errors = Vec::with_capacity(bench.ns.len());
        for &n in &bench.ns {
            let mut field = bench.field;
            let approx = integrate(&z0, &mut field, &make_schedule(n, Direction::Sample, order)?)?;
            errors.push(rel_l2(&exact, &approx)?);
        }
        let slope = convergence_order(&bench.ns, &errors)?;
        for (n, e) in bench.ns.iter().zip(&errors) {
            writeln!(csv, "{n},{},{e},{slope}", order_name(order))?;
        }
        summary.push(format!("{} slope {slope:.4}", order_name(order)));
    }
    write_text(&out_dir.join("solver_bench.csv"), &csv)?;
    println!("solver-bench: {}", summary.join(", "));
    Ok(())
}

fn source_video(cfg: &ExperimentConfig, input: Option<&Path>) -> Result<Tensor> {
    match input {
        Some(p) => load_tensor(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(gen_synthetic_video(&cfg.video_spec())?),
    }
}

fn weights(cfg: &ExperimentConfig) -> Result<DiTWeights> {
    Ok(init_weights(&cfg.model, cfg.seed)?)
}

pub fn invert(cfg: &ExperimentConfig, input: Option<&Path>, out_dir: &Path) -> Result<()> {
    let w = weights(cfg)?;
    let video = source_video(cfg, input)?;
    let src = Conditioning::source(&video, cfg.model.model_dim)?;
    let schedule = make_schedule(cfg.solver.inversion_steps, Direction::Invert, cfg.solver.order)?;
    let anchor = invert_source(&w, &video, &src, &schedule)?;
    save(&out_dir.join("source.cft"), &video)?;
    save(&out_dir.join("anchor.cft"), &anchor)?;
    println!(
        "invert: {} {}-step inversion, anchor norm {:.4}",
        order_name(cfg.solver.order),
        cfg.solver.inversion_steps,
        anchor.l2_norm()
    );
    Ok(())
}

fn edit_spec(cfg: &ExperimentConfig, region: Rect, patch_seed: u64) -> EditSpec {
    EditSpec {
        task: cfg.edit.task,
        region,
        patch_level: cfg.edit.patch_level,
        background: cfg.video.background,
        patch_seed,
    }
}

fn target_prompt(cfg: &ExperimentConfig) -> Tensor {
    if cfg.edit.target_prompt {
        seeded_gaussian(
            &[cfg.model.model_dim],
            &mut Rng::new(cfg.seed.wrapping_add(seeds::PROMPT)),
        )
    } else {
        Tensor::zeros(&[cfg.model.model_dim])
    }
}

/// Synthetic probe items for the configured task: shifted copies of the
/// configured motif with the edit applied to each first frame.
pub fn build_probe_set(cfg: &ExperimentConfig) -> Result<ProbeSet> {
    let prompt = target_prompt(cfg);
    let mut items = Vec::with_capacity(cfg.probe.items);
    for i in 0..cfg.probe.items as u64 {
        let mut spec = cfg.video_spec();
        spec.seed = cfg.seed.wrapping_add(seeds::PROBE_VIDEO + i);
        let video = gen_synthetic_video(&spec)?;
        let src_cond = Conditioning::source(&video, cfg.model.model_dim)?;
        let edit = edit_spec(cfg, cfg.edit.region, cfg.seed.wrapping_add(seeds::PROBE_PATCH + i));
        let edit_cond = Conditioning::new(apply_first_frame_edit(&video, &edit)?, prompt.clone());
        items.push(ProbeItem {
            video,
            src_cond,
            edit_cond,
            noise_seed: cfg.seed.wrapping_add(seeds::PROBE_NOISE + i),
        });
    }
    Ok(ProbeSet {
        items,
        probe_t: cfg.probe.probe_t,
    })
}

fn task_label(task: EditTask) -> &'static str {
    match task {
        EditTask::Insert => "insert",
        EditTask::Swap => "swap",
        EditTask::Delete => "delete",
    }
}

fn profile_csv(profile: &GrProfile) -> Result<String> {
    let mut csv = String::from("layer_index,gr_raw,gr_normalized\n");
    for (l, (raw, norm)) in profile.raw.iter().zip(&profile.normalized).enumerate() {
        writeln!(csv, "{l},{raw},{norm}")?;
    }
    Ok(csv)
}

pub fn analyze_layers(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let w = weights(cfg)?;
    let probe = build_probe_set(cfg)?;
    let profile = guidance_responsiveness(&w, &probe, task_label(cfg.edit.task))?;
    write_text(&out_dir.join("layers.csv"), &profile_csv(&profile)?)?;
    let k = cfg.enrichment.resolved_k(w.num_layers());
    println!(
        "analyze-layers: {} layers, top-{k} = {:?}",
        profile.num_layers(),
        select_vital_layers(&profile.raw, k)?
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct Fidelity {
    psnr_db: f64,
    ssim: Option<f64>,
    rel_l2: f64,
}

#[derive(Debug, Serialize)]
struct EditReport {
    config_hash: String,
    task: &'static str,
    vital_layers: Vec<usize>,
    layer_selection: &'static str,
    tau: f64,
    guidance_scale: f32,
    inversion_steps: usize,
    sampling_steps: usize,
    order: &'static str,
    enriched_steps: Vec<usize>,
    recon_vs_source: Fidelity,
    edited_vs_source_unedited_region: Fidelity,
    recon_vs_edited_max_abs: f32,
}

fn fidelity(reference: &Tensor, other: &Tensor, mask: Option<&RegionMask>) -> Result<Fidelity> {
    let ssim = if reference.shape()[1] >= flowedit_core::metrics::SSIM_WINDOW
        && reference.shape()[2] >= flowedit_core::metrics::SSIM_WINDOW
    {
        Some(video_ssim(reference, other)?)
    } else {
        None
    };
    Ok(Fidelity {
        psnr_db: video_psnr(reference, other, mask)?,
        ssim,
        rel_l2: rel_l2(reference, other)?,
    })
}

fn dump_pgm(dir: &Path, name: &str, video: &Tensor, reference: &Tensor) -> Result<()> {
    let channels = video.shape()[3];
    for (i, frame) in latent_frames(video, reference)?.iter().enumerate() {
        let path = dir.join(format!("{name}_f{}_c{}.pgm", i / channels, i % channels));
        export_pgm(frame, &path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn edit(cfg: &ExperimentConfig, input: Option<&Path>, out_dir: &Path) -> Result<()> {
    let w = weights(cfg)?;
    let video = source_video(cfg, input)?;
    let d = cfg.model.model_dim;
    let src_cond = Conditioning::source(&video, d)?;
    let spec = edit_spec(cfg, cfg.edit.region, cfg.seed.wrapping_add(seeds::PATCH));
    let edit_cond = Conditioning::new(apply_first_frame_edit(&video, &spec)?, target_prompt(cfg));

    let (vital, selection) = match &cfg.enrichment.vital_layers {
        Some(layers) => (layers.clone(), "explicit"),
        None => {
            let profile = guidance_responsiveness(&w, &build_probe_set(cfg)?, task_label(cfg.edit.task))?;
            write_text(&out_dir.join("layers.csv"), &profile_csv(&profile)?)?;
            let k = cfg.enrichment.resolved_k(w.num_layers());
            (select_vital_layers(&profile.raw, k)?, "guidance_responsiveness")
        }
    };
    let policy = EnrichmentPolicy::new(
        vital.iter().copied(),
        cfg.enrichment.tau,
        cfg.enrichment.guidance_scale,
    );
    policy.validate(w.num_layers())?;

    let inversion = make_schedule(cfg.solver.inversion_steps, Direction::Invert, cfg.solver.order)?;
    let anchor = invert_source(&w, &video, &src_cond, &inversion)?;
    let session = EditSession {
        anchor,
        src_cond,
        edit_cond,
        policy,
        schedule: make_schedule(cfg.solver.sampling_steps, Direction::Sample, cfg.solver.order)?,
    };
    let out = run_dual_path(&session, &w)?;

    save(&out_dir.join("source.cft"), &video)?;
    save(&out_dir.join("anchor.cft"), &session.anchor)?;
    save(&out_dir.join("recon.cft"), &out.recon)?;
    save(&out_dir.join("edited.cft"), &out.edited)?;
    if cfg.pgm {
        dump_pgm(out_dir, "source", &video, &video)?;
        dump_pgm(out_dir, "recon", &out.recon, &video)?;
        dump_pgm(out_dir, "edited", &out.edited, &video)?;
    }

    let unedited = RegionMask::outside_rect(
        cfg.model.height,
        cfg.model.width,
        (cfg.edit.region.row, cfg.edit.region.col, cfg.edit.region.height, cfg.edit.region.width),
    );
    let mask = (unedited.count() > 0).then_some(&unedited);
    let enriched: BTreeSet<usize> = out.trace.enriched_steps();
    let report = EditReport {
        config_hash: cfg.hash(),
        task: task_label(cfg.edit.task),
        vital_layers: vital,
        layer_selection: selection,
        tau: cfg.enrichment.tau,
        guidance_scale: cfg.enrichment.guidance_scale,
        inversion_steps: cfg.solver.inversion_steps,
        sampling_steps: cfg.solver.sampling_steps,
        order: order_name(cfg.solver.order),
        enriched_steps: enriched.into_iter().collect(),
        recon_vs_source: fidelity(&video, &out.recon, None)?,
        edited_vs_source_unedited_region: fidelity(&video, &out.edited, mask)?,
        recon_vs_edited_max_abs: out.recon.max_abs_diff(&out.edited)?,
    };
    write_json(&out_dir.join("metrics.json"), &report)?;
    println!(
        "edit: vital layers {:?}, recon PSNR {:.2} dB, recon-vs-edited max-abs {:.3e}",
        report.vital_layers, report.recon_vs_source.psnr_db, report.recon_vs_edited_max_abs
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct PairReport {
    psnr_db: f64,
    ssim: Option<f64>,
    rel_l2: f64,
    max_abs: f32,
    masked: bool,
}

pub fn metrics(
    reference: &Path,
    candidate: &Path,
    mask: Option<&PathBuf>,
    out_dir: &Path,
) -> Result<()> {
    let a = load_tensor(reference).with_context(|| format!("reading {}", reference.display()))?;
    let b = load_tensor(candidate).with_context(|| format!("reading {}", candidate.display()))?;
    let mask = match mask {
        Some(p) => Some(RegionMask::from_tensor(
            &load_tensor(p).with_context(|| format!("reading {}", p.display()))?,
        )?),
        None => None,
    };
    let f = fidelity(&a, &b, mask.as_ref())?;
    let report = PairReport {
        psnr_db: f.psnr_db,
        ssim: f.ssim,
        rel_l2: f.rel_l2,
        max_abs: a.max_abs_diff(&b)?,
        masked: mask.is_some(),
    };
    write_json(&out_dir.join("metrics.json"), &report)?;
    println!("metrics: PSNR {:.3} dB, SSIM {:?}", report.psnr_db, report.ssim);
    Ok(())
}
