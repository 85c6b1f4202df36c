//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use flowedit_core::engine::{
    invert_source, run_dual_path, single_path, EditSession, EnrichmentPolicy,
};
use flowedit_core::metrics::{convergence_order, psnr, rel_l2, ssim, PixelFrame};
use flowedit_core::numerics::{seeded_gaussian, Rng, Tensor};
use flowedit_core::probe::{
    guidance_responsiveness, layer_responsiveness, min_max_normalize, select_vital_layers,
    ProbeItem, ProbeSet,
};
use flowedit_core::solver::{
    euler_step, integrate, make_schedule, rf2_step, Direction, SolverOrder,
};
use flowedit_core::velocity::{
    attention, enriched_attention, init_weights, AnalyticField, Conditioning, DiTConfig,
    DiTWeights,
};
use flowedit_core::workbench::{decode_tensor, encode_tensor, gen_synthetic_video, SyntheticVideoSpec};

/// Largest RF2 invert-then-sample rel_l2 accepted on the criterion 3
/// fixture. Measured 2.63e-6 on the reference run; the bound leaves headroom
/// for summation-order differences across platforms.
const RF2_ROUND_TRIP_BOUND: f64 = 1e-5;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fixture() -> (DiTWeights, Tensor, Conditioning) {
    let cfg = DiTConfig::default();
    let weights = init_weights(&cfg, 42).unwrap();
    let video = gen_synthetic_video(&SyntheticVideoSpec {
        seed: 42,
        ..SyntheticVideoSpec::default()
    })
    .unwrap();
    let cond = Conditioning::source(&video, cfg.model_dim).unwrap();
    (weights, video, cond)
}

fn c1_solver_order() -> Outcome {
    let start = Instant::now();
    let ns = [8, 16, 32, 64];
    let z0 = Tensor::vector(vec![2.0]);
    let exact = AnalyticField::LinearDecay.exact(&z0, 1.0, 0.0);
    let mut slopes = Vec::new();
    for order in [SolverOrder::Euler, SolverOrder::Rf2] {
        let errors: Vec<f64> = ns
            .iter()
            .map(|&n| {
                let s = make_schedule(n, Direction::Sample, order).unwrap();
                rel_l2(&exact, &integrate(&z0, &mut AnalyticField::LinearDecay, &s).unwrap()).unwrap()
            })
            .collect();
        slopes.push(convergence_order(&ns, &errors).unwrap());
    }
    let elapsed = start.elapsed();
    check(
        (0.8..=1.2).contains(&slopes[0])
            && (1.7..=2.3).contains(&slopes[1])
            && elapsed < Duration::from_secs(1),
        format!("euler slope {:.4}, rf2 slope {:.4}, {elapsed:.2?}", slopes[0], slopes[1]),
    )
}

fn c2_single_step() -> Outcome {
    let z = Tensor::vector(vec![2.0]);
    let field = &mut AnalyticField::LinearDecay;
    let e = euler_step(&z, field, 1.0, 0.5).unwrap().data()[0] as f64;
    let r = rf2_step(&z, field, 1.0, 0.5).unwrap().data()[0] as f64;
    let exact = 2.0 * 0.5f64.exp();
    check(
        (e - 3.0).abs() < 1e-6 && (r - 3.25).abs() < 1e-6 && (r - exact).abs() < 0.2 * (e - exact).abs(),
        format!("euler {e}, rf2 {r}, exact {exact:.6}"),
    )
}

fn round_trip(weights: &DiTWeights, video: &Tensor, cond: &Conditioning, order: SolverOrder) -> f64 {
    let inv = make_schedule(50, Direction::Invert, order).unwrap();
    let anchor = invert_source(weights, video, cond, &inv).unwrap();
    let samp = make_schedule(50, Direction::Sample, order).unwrap();
    let recon = single_path(&anchor, cond, weights, &samp, 3.0).unwrap();
    rel_l2(video, &recon).unwrap()
}

fn c3_round_trip() -> Outcome {
    let start = Instant::now();
    let (w, video, cond) = fixture();
    let euler = round_trip(&w, &video, &cond, SolverOrder::Euler);
    let rf2 = round_trip(&w, &video, &cond, SolverOrder::Rf2);
    let elapsed = start.elapsed();
    check(
        rf2 <= 0.1 * euler && rf2 <= RF2_ROUND_TRIP_BOUND && elapsed < Duration::from_secs(60),
        format!(
            "euler rel_l2 {euler:.3e}, rf2 rel_l2 {rf2:.3e} (bound {RF2_ROUND_TRIP_BOUND:.0e}), {elapsed:.1?}"
        ),
    )
}

fn c4_duplication() -> Outcome {
    let mut worst = 0.0f32;
    for seed in 0..100u64 {
        let mut rng = Rng::new(seed);
        let n = 3 + (seed as usize % 6);
        let dk = 4 + (seed as usize % 3) * 4;
        let q = seeded_gaussian(&[n, dk], &mut rng);
        let k = seeded_gaussian(&[n, dk], &mut rng);
        let v = seeded_gaussian(&[n, 5], &mut rng);
        let plain = attention(&q, &k, &v, dk).unwrap();
        let enriched = enriched_attention(&q, &k, &v, &k, &v, dk).unwrap();
        worst = worst.max(plain.max_abs_diff(&enriched).unwrap());
    }
    check(worst < 1e-5, format!("worst max-abs {worst:.3e} over 100 fixtures"))
}

fn c5_identity_edit() -> Outcome {
    let (w, video, cond) = fixture();
    let inv = make_schedule(50, Direction::Invert, SolverOrder::Rf2).unwrap();
    let session = EditSession {
        anchor: invert_source(&w, &video, &cond, &inv).unwrap(),
        src_cond: cond.clone(),
        edit_cond: cond,
        policy: EnrichmentPolicy::new([1, 3, 5, 7], 0.5, 3.0),
        schedule: make_schedule(50, Direction::Sample, SolverOrder::Rf2).unwrap(),
    };
    let out = run_dual_path(&session, &w).unwrap();
    let diff = out.recon.max_abs_diff(&out.edited).unwrap();
    check(diff < 1e-4, format!("edited vs recon max-abs {diff:.3e}"))
}

fn c6_window() -> Outcome {
    let (w, video, src) = fixture();
    let edit = src.with_prompt(seeded_gaussian(&[w.config.model_dim], &mut Rng::new(3)));
    let samp = make_schedule(50, Direction::Sample, SolverOrder::Rf2).unwrap();
    let anchor = video.axpy(1.0, &seeded_gaussian(video.shape(), &mut Rng::new(5))).unwrap();
    let mut session = EditSession {
        anchor: anchor.clone(),
        src_cond: src,
        edit_cond: edit.clone(),
        policy: EnrichmentPolicy::new([1, 3, 5, 7], 0.0, 3.0),
        schedule: samp.clone(),
    };
    let off = run_dual_path(&session, &w).unwrap();
    let plain = single_path(&anchor, &edit, &w, &samp, 3.0).unwrap();
    let bitwise = off.edited.bitwise_eq(&plain) && off.trace.consumed.is_empty();

    session.policy.tau = 0.5;
    let on = run_dual_path(&session, &w).unwrap();
    let steps: Vec<usize> = on.trace.enriched_steps().into_iter().collect();
    let window = steps == (0..25).collect::<Vec<_>>();
    check(
        bitwise && window,
        format!(
            "tau=0 bitwise {bitwise}, tau=0.5 enriched steps {}..={} ({} steps)",
            steps.first().copied().unwrap_or(0),
            steps.last().copied().unwrap_or(0),
            steps.len()
        ),
    )
}

fn c7_gr() -> Outcome {
    let cfg = DiTConfig::default();
    let w = init_weights(&cfg, 42).unwrap();
    let items = |identity: bool| -> Vec<ProbeItem> {
        (0..4u64)
            .map(|i| {
                let video = gen_synthetic_video(&SyntheticVideoSpec {
                    seed: 100 + i,
                    ..SyntheticVideoSpec::default()
                })
                .unwrap();
                let src_cond = Conditioning::source(&video, cfg.model_dim).unwrap();
                let edit_cond = if identity {
                    src_cond.clone()
                } else {
                    src_cond.with_prompt(seeded_gaussian(&[cfg.model_dim], &mut Rng::new(300 + i)))
                };
                ProbeItem { video, src_cond, edit_cond, noise_seed: 200 + i }
            })
            .collect()
    };
    let real = guidance_responsiveness(&w, &ProbeSet::new(items(false)), "insert").unwrap();
    let bounded = real.raw.iter().all(|g| (0.0..=2.0).contains(g));
    let same = guidance_responsiveness(&w, &ProbeSet::new(items(true)), "identity").unwrap();
    let noop = same.raw.iter().cloned().fold(0.0, f64::max);
    let a = Tensor::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0]]);
    let b = Tensor::from_rows(&[&[0.0, 0.0, 4.0], &[-3.0, 0.0, 1.0]]);
    let ortho = layer_responsiveness(&[(&a, &b)]).unwrap();
    check(
        bounded && noop < 1e-6 && (ortho - 1.0).abs() < 1e-6,
        format!("all GR in [0,2] {bounded}, identity max GR {noop:.3e}, orthogonal GR {ortho}"),
    )
}

fn c8_selection() -> Outcome {
    let mut agree = 0;
    for seed in 0..100u64 {
        let mut rng = Rng::new(seed);
        let n = 2 + (rng.next_u64() % 39) as usize;
        let raw: Vec<f64> = (0..n).map(|_| rng.next_f64() * 2.0).collect();
        let k = (rng.next_u64() as usize) % (n + 1);
        let norm = min_max_normalize(&raw);
        if select_vital_layers(&raw, k).unwrap() == select_vital_layers(&norm, k).unwrap() {
            agree += 1;
        }
    }
    let ties = select_vital_layers(&[0.3, 0.7, 0.7, 0.1, 0.7], 2).unwrap() == vec![1, 2]
        && select_vital_layers(&[0.5, 0.5, 0.5, 0.5], 3).unwrap() == vec![0, 1, 2];
    check(agree == 100 && ties, format!("{agree}/100 profiles agree, tie-break {ties}"))
}

fn c9_metrics() -> Outcome {
    let zero = PixelFrame::filled(8, 8, 0.0);
    let tenth = PixelFrame::filled(8, 8, 0.1);
    let p = psnr(&zero, &tenth, None).unwrap();
    let mut rng = Rng::new(9);
    let x = PixelFrame::new(16, 16, (0..256).map(|_| rng.next_f64()).collect()).unwrap();
    let s = ssim(&x, &x).unwrap();
    let ns = [8, 16, 32, 64];
    let errs: Vec<f64> = ns.iter().map(|&n| 3.0 * (n as f64).powf(-1.5)).collect();
    let order = convergence_order(&ns, &errs).unwrap();
    check(
        (p - 20.0).abs() < 1e-9 && (s - 1.0).abs() < 1e-12 && (order - 1.5).abs() < 1e-9,
        format!("psnr {p} dB, ssim(x,x) {s}, recovered exponent {order}"),
    )
}

fn cli_edit(out: &Path) -> Result<(), String> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    let status = Command::new(env!("CARGO_BIN_EXE_flowedit"))
        .arg("edit")
        .arg("--config")
        .arg(&config)
        .arg("--seed")
        .arg("42")
        .arg("--out-dir")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&status.stderr).into_owned())
    }
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn c10_reproducibility() -> Outcome {
    let t = seeded_gaussian(&[4, 8, 8, 4], &mut Rng::new(10));
    let container = decode_tensor(&encode_tensor(&t).unwrap()).unwrap().bitwise_eq(&t);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    cli_edit(&a)?;
    cli_edit(&b)?;
    let (fa, fb) = (read_dir_sorted(&a), read_dir_sorted(&b));
    let identical = !fa.is_empty() && fa == fb;
    check(
        container && identical,
        format!("container bitwise {container}, {} edit artifacts byte-identical {identical}", fa.len()),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("solver order", c1_solver_order),
        ("single-step golden values", c2_single_step),
        ("inversion round trip", c3_round_trip),
        ("enrichment duplication invariance", c4_duplication),
        ("identity edit", c5_identity_edit),
        ("enrichment window", c6_window),
        ("guidance responsiveness bounds", c7_gr),
        ("selection invariance", c8_selection),
        ("metrics correctness", c9_metrics),
        ("reproducibility", c10_reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1)
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
