//! Acceptance criteria 1-8. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 3`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use partfuse::cluster::{apply_region_push, mean_shift};
use partfuse::fusion::{aggregate_part_features, fuse_cross_level, fuse_point_features};
use partfuse::metrics::{average_precision, GtInstance, PredInstance, ShapeInstances};
use partfuse::model::{load_checkpoint, mean_offset_error};
use partfuse::{ClusterParams, FusionMode};
use partfuse_cli::{
    cmd_eval, cmd_gen_data, cmd_gradcheck, cmd_infer, cmd_train, load_split, RunConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn scratch() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn fusion_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let case = random_fusion_case(&mut rng, 3, 64, 5, 8);
        let probs: Vec<Rows> = case.probs.iter().map(|p| to_rows(p.matrix())).collect();
        let feats: Vec<Rows> = case.feats.iter().map(to_rows).collect();
        let pos = to_rows(&case.positions);
        for (p, pr) in case.probs.iter().zip(&probs) {
            for (f, fr) in case.feats.iter().zip(&feats) {
                let z = aggregate_part_features(p, f).unwrap();
                let zl = part_features_loop(pr, fr);
                worst = worst.max(max_abs_diff(&to_rows(&z), &zl));
                let fh = fuse_point_features(p, &z).unwrap();
                worst = worst.max(max_abs_diff(&to_rows(&fh), &point_features_loop(pr, &zl)));
            }
        }
        let fused = fuse_cross_level(&case.probs, &case.feats, &case.positions).unwrap();
        for (m, o) in fused.iter().zip(cross_level_loop(&probs, &feats, &pos)) {
            worst = worst.max(max_abs_diff(&to_rows(m), &o));
        }
    }
    let t = start.elapsed();
    Outcome::new(
        worst <= 1e-12 && t < Duration::from_secs(5),
        format!("100 cases, max |matrix - loop| = {worst:e}, {}", secs(t)),
    )
}

fn gradient_check(dir: &Path) -> Outcome {
    let start = Instant::now();
    let config = RunConfig {
        out_dir: dir.join("gradcheck"),
        ..RunConfig::default()
    };
    let result = cmd_gradcheck(&config);
    let t = start.elapsed();
    let outcomes = match result {
        Ok(o) => o,
        Err(e) => return Outcome::new(false, format!("{e}, {}", secs(t))),
    };
    let worst = outcomes
        .iter()
        .map(|o| o.report.max_rel_error())
        .fold(0.0, f64::max);
    let checked: usize = outcomes.iter().map(|o| o.report.entries.len()).sum();
    let leak = outcomes.iter().map(|o| o.leak).fold(0.0, f64::max);
    let passed = outcomes.iter().all(|o| o.passed()) && t < Duration::from_secs(60);
    Outcome::new(
        passed,
        format!(
            "{} modes, {checked} entries, max rel error {worst:.2e}, stop_grad leak {leak:e}, {}",
            outcomes.len(),
            secs(t)
        ),
    )
}

fn separation_scenario() -> Outcome {
    let start = Instant::now();
    let shape = blade_scissor();
    let (_, merged, ap_merged) = blade_scenario(&shape, 0.1, 0.0);
    let (pred, split, ap_split) = blade_scenario(&shape, 0.1, 0.05);
    let exact = same_partition(&pred.inst, &shape.levels[BLADE_LEVEL].inst);
    let (_, again, ap_again) = blade_scenario(&shape, 0.1, 0.05);
    let t = start.elapsed();
    let passed = merged == 1
        && ap_merged == 0.0
        && split == 2
        && ap_split == 1.0
        && exact
        && again == split
        && ap_again == ap_split
        && t < Duration::from_secs(5);
    Outcome::new(
        passed,
        format!(
            "lambda=0: {merged} blade instance(s), AP50 {ap_merged}; lambda=0.05: {split}, AP50 {ap_split}, exact partition {exact}, {}",
            secs(t)
        ),
    )
}

fn push_distance() -> Outcome {
    let params = ClusterParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draw =
        |rng: &mut ChaCha8Rng| -> [f64; 3] { std::array::from_fn(|_| rng.random_range(-1.0..1.0)) };
    let (mut pts, mut oi, mut os) = (Vec::new(), Vec::new(), Vec::new());
    while pts.len() < 10_000 {
        let (p, a, b) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let d: f64 = (0..3).map(|j| (a[j] - b[j]).powi(2)).sum::<f64>().sqrt();
        if d >= params.epsilon {
            pts.push(p);
            oi.push(a);
            os.push(b);
        }
    }
    let out = apply_region_push(&pts, &oi, &os, &params).unwrap();
    let worst = (0..pts.len())
        .map(|i| {
            let d: f64 = (0..3)
                .map(|j| (out[i][j] - (pts[i][j] + oi[i][j])).powi(2))
                .sum::<f64>()
                .sqrt();
            (d - params.lambda).abs()
        })
        .fold(0.0, f64::max);
    Outcome::new(
        worst <= 1e-12,
        format!("10000 pairs, max | |p_hat - (p + O_I)| - lambda | = {worst:e}"),
    )
}

fn metric_oracle() -> Outcome {
    let cases = micro_cases();
    let mut compared = 0usize;
    let mut mismatches = 0usize;
    for case in &cases {
        let one = std::slice::from_ref(case);
        for category in [1, 2] {
            for t in [0.25, 0.5, 0.75] {
                compared += 1;
                if average_precision(one, category, t) != ap_oracle(case, category, t) {
                    mismatches += 1;
                }
            }
        }
    }
    let worked = ShapeInstances {
        gts: vec![
            GtInstance {
                label: 1,
                points: vec![0, 1, 2, 3],
            },
            GtInstance {
                label: 1,
                points: vec![4, 5, 6, 7],
            },
        ],
        preds: vec![
            PredInstance {
                id: 0,
                label: 1,
                confidence: 0.9,
                points: vec![0, 1, 2, 3],
            },
            PredInstance {
                id: 1,
                label: 1,
                confidence: 0.8,
                points: vec![0, 1],
            },
        ],
    };
    let ap = average_precision(std::slice::from_ref(&worked), 1, 0.5);
    Outcome::new(
        mismatches == 0 && ap == Some(0.5),
        format!(
            "{} micro-cases, {compared} AP values, {mismatches} mismatches; worked example AP = {ap:?}",
            cases.len()
        ),
    )
}

/// Files compared between reruns of one trained model.
const RUN_FILES: [&str; 4] = ["model.ckpt", "train_log.tsv", "metrics.tsv", "metrics.txt"];
const SEEDS: [u64; 3] = [0, 1, 2];
const MODES: [FusionMode; 2] = [FusionMode::Cross, FusionMode::None];

struct ModelRun {
    mode: FusionMode,
    seed: u64,
    out_dir: PathBuf,
    ap50: f64,
    offset_error: f64,
    elapsed: Duration,
}

fn train_and_score(
    data_dir: &Path,
    out_dir: PathBuf,
    mode: FusionMode,
    seed: u64,
) -> Result<ModelRun, String> {
    let mut config = RunConfig {
        data_dir: data_dir.to_path_buf(),
        out_dir: out_dir.clone(),
        ..RunConfig::default()
    };
    config.model.fusion = mode;
    config.model.seed = seed;
    let start = Instant::now();
    cmd_train(&config).map_err(|e| e.to_string())?;
    cmd_infer(&config).map_err(|e| e.to_string())?;
    let report = cmd_eval(&config).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let (model, params) = load_checkpoint(config.checkpoint_path()).map_err(|e| e.to_string())?;
    let test = load_split(data_dir, "test").map_err(|e| e.to_string())?;
    let offset_error =
        mean_offset_error(&params, &model, &test.shapes).map_err(|e| e.to_string())?;
    let run = ModelRun {
        mode,
        seed,
        out_dir,
        ap50: report.mean_ap50().unwrap_or(0.0),
        offset_error,
        elapsed,
    };
    println!(
        "    {} seed {}: mean AP50 {:.4}, offset error {:.5}, {}",
        run.mode,
        run.seed,
        run.ap50,
        run.offset_error,
        secs(run.elapsed)
    );
    Ok(run)
}

fn train_all(dir: &Path, round: usize) -> Result<Vec<ModelRun>, String> {
    let data = dir.join("data");
    let mut runs = Vec::new();
    for seed in SEEDS {
        for mode in MODES {
            let out = dir
                .join(format!("round{round}"))
                .join(format!("{mode}_seed{seed}"));
            runs.push(train_and_score(&data, out, mode, seed)?);
        }
    }
    Ok(runs)
}

fn find(runs: &[ModelRun], mode: FusionMode, seed: u64) -> &ModelRun {
    runs.iter()
        .find(|r| r.mode == mode && r.seed == seed)
        .unwrap()
}

fn ordering_effect(runs: &[ModelRun]) -> Outcome {
    let mut offset_wins = 0;
    let mut ap_wins = 0;
    let mut floor = true;
    let mut fast = true;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let cross = find(runs, FusionMode::Cross, seed);
        let none = find(runs, FusionMode::None, seed);
        offset_wins += usize::from(cross.offset_error <= none.offset_error);
        ap_wins += usize::from(cross.ap50 >= none.ap50);
        floor &= cross.ap50 >= 0.5 && none.ap50 >= 0.5;
        fast &=
            cross.elapsed <= Duration::from_secs(600) && none.elapsed <= Duration::from_secs(600);
        lines.push(format!(
            "seed {seed}: offset {:.5} vs {:.5}, AP50 {:.4} vs {:.4}",
            cross.offset_error, none.offset_error, cross.ap50, none.ap50
        ));
    }
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap_or_default();
    Outcome::new(
        offset_wins == SEEDS.len() && ap_wins >= 2 && floor && fast,
        format!(
            "cross vs none; {}; offset wins {offset_wins}/3, AP50 wins {ap_wins}/3, all AP50 >= 0.5: {floor}, slowest model {}",
            lines.join("; "),
            secs(slowest)
        ),
    )
}

fn determinism(first: &[ModelRun], second: &[ModelRun]) -> Outcome {
    let mut compared = 0;
    let mut differing = Vec::new();
    for (a, b) in first.iter().zip(second) {
        for f in RUN_FILES {
            compared += 1;
            let x = fs::read(a.out_dir.join(f)).ok();
            let y = fs::read(b.out_dir.join(f)).ok();
            if x.is_none() || x != y {
                differing.push(format!("{}_seed{}/{f}", a.mode, a.seed));
            }
        }
    }
    Outcome::new(
        differing.is_empty() && first.len() == second.len(),
        if differing.is_empty() {
            format!("{compared} files byte-identical across reruns")
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn mean_shift_sanity() -> Outcome {
    let params = ClusterParams::default();
    let mut worst: f64 = 0.0;
    let mut counts = Vec::new();
    for seed in 0..20 {
        let pts = two_mode_sample(&mut ChaCha8Rng::seed_from_u64(seed), 100, 0.02);
        let ms = mean_shift(&pts, &params).unwrap();
        counts.push(ms.modes.len());
        for m in &ms.modes {
            worst = worst.max(m[0].abs().min((m[0] - 1.0).abs()));
        }
        for truth in [0.0, 1.0] {
            let near = ms
                .modes
                .iter()
                .map(|m| (m[0] - truth).abs())
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(near);
        }
    }
    let two = counts.iter().all(|&c| c == 2);
    Outcome::new(
        two && worst <= 0.02,
        format!("20 seeds, cluster counts all 2: {two}, max mode error {worst:.5}"),
    )
}

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let run = |k: usize| wanted.is_empty() || wanted.contains(&k);
    let dir = scratch();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |k: usize, name: &'static str, o: Outcome| {
        println!(
            "criterion {k}: {}  {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((k, name, o));
    };

    if run(1) {
        report(1, "fusion matrix form equals loop form", fusion_oracle());
    }
    if run(2) {
        report(2, "end-to-end gradient check", gradient_check(&dir));
    }
    if run(3) {
        report(
            3,
            "region push separates close blades",
            separation_scenario(),
        );
    }
    if run(4) {
        report(4, "push displacement equals lambda", push_distance());
    }
    if run(5) {
        report(5, "AP equals exhaustive oracle", metric_oracle());
    }
    if run(6) || run(7) {
        let data = RunConfig {
            data_dir: dir.join("data"),
            ..RunConfig::default()
        };
        let first = cmd_gen_data(&data)
            .map_err(|e| e.to_string())
            .and_then(|_| train_all(&dir, 0));
        match &first {
            Ok(runs) => report(6, "cross fusion beats no fusion", ordering_effect(runs)),
            Err(e) => report(
                6,
                "cross fusion beats no fusion",
                Outcome::new(false, e.clone()),
            ),
        }
        if run(7) {
            let outcome = match (&first, train_all(&dir, 1)) {
                (Ok(a), Ok(b)) => determinism(a, &b),
                (Err(e), _) => Outcome::new(false, e.clone()),
                (_, Err(e)) => Outcome::new(false, e),
            };
            report(7, "reruns are byte-identical", outcome);
        }
    }
    if run(8) {
        report(8, "1D mean-shift recovers two modes", mean_shift_sanity());
    }

    let failed: Vec<usize> = results
        .iter()
        .filter(|r| !r.2.passed)
        .map(|r| r.0)
        .collect();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
