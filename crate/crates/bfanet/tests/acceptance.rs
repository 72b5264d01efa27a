//! Acceptance criteria 1 to 10, one PASS/FAIL line each.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use bfanet::core::boundary::match_fraction;
use bfanet::core::config::SCALES;
use bfanet::core::data::synthetic_sample;
use bfanet::core::merge_fit::{fit_merge, stage_maps, StageMaps};
use bfanet::core::model::affm_weights;
use bfanet::core::{
    adaptive_f, canny_boundary, f_measure, gen_synthetic, gradsuite, mae, morph_boundary_oracle, pr_curve, Ablation,
    Bfanet, BinaryMask, CannyParams, FpmSubset, Graph, ModelConfig, SaliencyMap, SaliencySample, Tensor,
};
use bfanet::pipeline;
use bfanet::{Checkpoint, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for case in gradsuite::CASES {
        let r = gradsuite::run_case(case).unwrap();
        worst = worst.max(r.max_rel_error);
        if !r.passed || r.max_rel_error >= 1e-4 {
            failed.push(*case);
        }
    }
    let took = start.elapsed();
    outcome(
        failed.is_empty() && took < Duration::from_secs(120),
        format!(
            "{} cases, worst rel error {worst:.2e}, failed {failed:?}, {:.1}s",
            gradsuite::CASES.len(),
            took.as_secs_f64()
        ),
    )
}

fn shape_contract() -> Outcome {
    let mut bad = Vec::new();
    for size in [64usize, 128, 256] {
        for ablation in Ablation::ALL {
            let cfg = ModelConfig {
                input_h: size,
                input_w: size,
                base_channels: 2,
                boundary_channels: 2,
                agg_channels: 4,
                ablation,
                ..ModelConfig::default()
            };
            let model = Bfanet::new(cfg).unwrap();
            let mut g = Graph::new();
            let p = model.params().bind_frozen(&mut g).unwrap();
            let x = g.input(Tensor::zeros([1, 3, size, size])).unwrap();
            let out = model.forward(&mut g, &p, x).unwrap();
            let hw = |g: &Graph, v| {
                let s = g.shape(v);
                (s[2], s[3])
            };
            for t in 1..=SCALES {
                if hw(&g, out.aggregated[t - 1]) != (size >> t, size >> t) {
                    bad.push(format!("{size} {ablation} F^{t}"));
                }
                if let Some(b) = &out.boundary {
                    if hw(&g, b.outputs.predictions[t - 1]) != (size >> t, size >> t) {
                        bad.push(format!("{size} {ablation} B_p^{t}"));
                    }
                }
            }
            if ablation.has_boundary() != out.boundary.is_some() || out.predictions.stages.len() != SCALES {
                bad.push(format!("{size} {ablation} outputs"));
            }
            for v in out
                .predictions
                .stages
                .iter()
                .map(|s| s.1)
                .chain([out.predictions.final_map])
            {
                if g.shape(v) != [1, 1, size, size] {
                    bad.push(format!("{size} {ablation} map {:?}", g.shape(v)));
                }
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!("sizes 64/128/256 x 4 variants, mismatches {bad:?}"),
    )
}

fn oracle_pr(pred: &[bool], gt: &[bool]) -> (f64, f64) {
    let tp = pred.iter().zip(gt).filter(|(p, g)| **p && **g).count();
    let np = pred.iter().filter(|p| **p).count();
    let ng = gt.iter().filter(|g| **g).count();
    let p = if np == 0 { 1.0 } else { tp as f64 / np as f64 };
    let r = if ng == 0 { 1.0 } else { tp as f64 / ng as f64 };
    (p, r)
}

fn oracle_f(p: f64, r: f64) -> f64 {
    if 0.3 * p + r == 0.0 {
        0.0
    } else {
        1.3 * p * r / (0.3 * p + r)
    }
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut mismatches = 0usize;
    let bits = |code: u32| -> Vec<bool> { (0..9).map(|i| code >> i & 1 == 1).collect() };
    for sc in 0u32..512 {
        let sb = bits(sc);
        let s = SaliencyMap::new(3, 3, sb.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()).unwrap();
        for gc in 0u32..512 {
            let gb = bits(gc);
            let g = BinaryMask::new(3, 3, gb.iter().map(|&v| v as u8).collect()).unwrap();
            let curve = pr_curve(&s, &g).unwrap();
            for t in 0..256 {
                let pred: Vec<bool> = sb.iter().map(|&v| (if v { 255.0 } else { 0.0 }) > t as f64).collect();
                let (p, r) = oracle_pr(&pred, &gb);
                mismatches += usize::from(curve.points[t] != (p, r));
                mismatches += usize::from(f_measure(p, r, 0.3) != oracle_f(p, r));
            }
            let wrong = sb.iter().zip(&gb).filter(|(a, b)| a != b).count();
            mismatches += usize::from(mae(&s, &g).unwrap() != wrong as f64 / 9.0);
            let thr = (2.0 * sb.iter().filter(|&&v| v).count() as f64 / 9.0).min(1.0);
            let pred: Vec<bool> = sb.iter().map(|&v| v && 1.0 >= thr).collect();
            let (p, r) = oracle_pr(&pred, &gb);
            mismatches += usize::from(adaptive_f(&s, &g).unwrap() != oracle_f(p, r));
        }
    }
    let took = start.elapsed();
    outcome(
        mismatches == 0 && took < Duration::from_secs(60),
        format!("262144 pairs, {mismatches} mismatches, {:.1}s", took.as_secs_f64()),
    )
}

fn fusion_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut sum_err, mut shift_err) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(1..17);
        let a = Tensor::from_fn([1, n, 1, 1], |_| rng.random_range(-30.0..30.0));
        let b = Tensor::from_fn([1, n, 1, 1], |_| rng.random_range(-30.0..30.0));
        let k = rng.random_range(-100.0..100.0);
        let weights = |a: &Tensor, b: &Tensor| -> Vec<f64> {
            let mut g = Graph::new();
            let (fa, fb) = (g.input(a.clone()).unwrap(), g.input(b.clone()).unwrap());
            let (wf, wb) = affm_weights(&mut g, fa, fb).unwrap();
            g.value(wf).data().iter().chain(g.value(wb).data()).copied().collect()
        };
        let w = weights(&a, &b);
        let s = weights(&a.map(|v| v + k), &b.map(|v| v + k));
        sum_err = sum_err.max((w.iter().sum::<f64>() - 1.0).abs());
        for (x, y) in w.iter().zip(&s) {
            shift_err = shift_err.max((x - y).abs());
        }
    }
    outcome(
        sum_err < 1e-9 && shift_err < 1e-9,
        format!("1000 vectors, max |sum-1| {sum_err:.1e}, max shift change {shift_err:.1e}"),
    )
}

fn boundary_labels() -> Outcome {
    let (mut worst_p, mut worst_r) = (1.0f64, 1.0f64);
    for i in 0..100 {
        let s = synthetic_sample(64, 2024, i).unwrap();
        let edges = canny_boundary(&s.mask, &CannyParams::default()).unwrap();
        let oracle = morph_boundary_oracle(&s.mask);
        worst_p = worst_p.min(match_fraction(&edges, &oracle, 1));
        worst_r = worst_r.min(match_fraction(&oracle, &edges, 1));
    }
    outcome(
        worst_p >= 0.95 && worst_r >= 0.95,
        format!("100 masks, worst precision {worst_p:.4}, worst recall {worst_r:.4}"),
    )
}

const DESK_SEEDS: [u64; 3] = [0, 1, 2];

fn desk_config(ablation: Ablation, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model.base_channels = 8;
    cfg.model.boundary_channels = 8;
    cfg.model.agg_channels = 16;
    cfg.model.ablation = ablation;
    cfg.model.seed = seed;
    cfg.epochs = 50;
    cfg.train.batch_size = 8;
    cfg
}

struct DeskRun {
    ablation: Ablation,
    seed: u64,
    mae: f64,
    f_beta: f64,
    took: Duration,
    model: Bfanet,
}

fn desk_runs(train: &[SaliencySample], test: &[SaliencySample]) -> Vec<DeskRun> {
    let mut runs = Vec::new();
    for seed in DESK_SEEDS {
        for ablation in Ablation::ALL {
            let cfg = desk_config(ablation, seed);
            let dir = scratch(&format!("desk_{}_{seed}", pipeline::ablation_slug(ablation)));
            let start = Instant::now();
            let trained = pipeline::train(&cfg, train, &dir, |_| {}).unwrap();
            let took = start.elapsed();
            let report = pipeline::evaluate_model(&trained.trainer.model, &cfg.preprocess(), test).unwrap();
            eprintln!(
                "  desk {ablation} seed {seed}: mae {:.4} f_beta {:.4} ({:.0}s)",
                report.mean_mae,
                report.mean_f,
                took.as_secs_f64()
            );
            runs.push(DeskRun {
                ablation,
                seed,
                mae: report.mean_mae,
                f_beta: report.mean_f,
                took,
                model: trained.trainer.model,
            });
        }
    }
    runs
}

fn desk_training(runs: &[DeskRun]) -> Outcome {
    let r = runs
        .iter()
        .find(|r| r.ablation == Ablation::AffmPlus && r.seed == DESK_SEEDS[0])
        .unwrap();
    outcome(
        r.mae < 0.15 && r.f_beta > 0.70 && r.took < Duration::from_secs(30 * 60),
        format!(
            "affm+ seed {}: held-out mae {:.4}, adaptive f_beta {:.4}, {:.0}s",
            r.seed,
            r.mae,
            r.f_beta,
            r.took.as_secs_f64()
        ),
    )
}

fn ablation_direction(runs: &[DeskRun]) -> Outcome {
    let mean = |a: Ablation, f: fn(&DeskRun) -> f64| {
        let v: Vec<f64> = runs.iter().filter(|r| r.ablation == a).map(f).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let m = |a| mean(a, |r| r.mae);
    let f = |a| mean(a, |r| r.f_beta);
    let claims = [
        m(Ablation::AffmPlus) < m(Ablation::Baseline),
        f(Ablation::AffmPlus) > f(Ablation::Baseline),
        m(Ablation::BoundaryPlus) <= m(Ablation::BoundaryMinus),
    ];
    let table: Vec<String> = Ablation::ALL
        .iter()
        .map(|&a| format!("{a} mae {:.4} f {:.4}", m(a), f(a)))
        .collect();
    outcome(
        claims.iter().all(|&c| c),
        format!("3-seed means: {}; claims {claims:?}", table.join(", ")),
    )
}

fn masks(samples: &[SaliencySample]) -> Vec<Vec<f64>> {
    samples
        .iter()
        .map(|s| s.mask.data().iter().map(|&v| f64::from(v)).collect())
        .collect()
}

fn maps_for(model: &Bfanet, cfg: &RunConfig, samples: &[SaliencySample]) -> Vec<StageMaps> {
    let pre = cfg.preprocess();
    let mut maps = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(25) {
        let xs: Vec<Tensor> = chunk.iter().map(|s| pre.apply(&s.image).unwrap()).collect();
        let refs: Vec<&Tensor> = xs.iter().collect();
        maps.extend(stage_maps(model, &Tensor::stack(&refs).unwrap()).unwrap());
    }
    maps
}

fn fpm_subsets(runs: &[DeskRun], train: &[SaliencySample], test: &[SaliencySample]) -> Outcome {
    let run = runs
        .iter()
        .find(|r| r.ablation == Ablation::AffmPlus && r.seed == DESK_SEEDS[0])
        .unwrap();
    let cfg = desk_config(Ablation::AffmPlus, run.seed);
    let train_maps = maps_for(&run.model, &cfg, train);
    let test_maps = maps_for(&run.model, &cfg, test);
    let train_masks = masks(train);
    let mut rows = Vec::new();
    for subset in ["5", "45", "345", "2345", "12345"] {
        let subset: FpmSubset = subset.parse().unwrap();
        let fit = fit_merge(subset, &train_maps, &train_masks).unwrap();
        let mut total = 0.0;
        for (m, s) in test_maps.iter().zip(test) {
            let probs: Vec<f64> = fit.apply(m).unwrap().iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect();
            let map = SaliencyMap::new(s.mask.height(), s.mask.width(), probs).unwrap();
            total += adaptive_f(&map, &s.mask).unwrap();
        }
        rows.push((subset, total / test.len() as f64));
    }
    let inversions = rows.windows(2).filter(|w| w[1].1 < w[0].1).count();
    let table: Vec<String> = rows.iter().map(|(s, f)| format!("{{{s}}} {f:.4}")).collect();
    outcome(
        inversions <= 1,
        format!("f_beta by subset: {}; {inversions} inversion(s)", table.join(", ")),
    )
}

fn bfanet(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_bfanet")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "bfanet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn determinism() -> Outcome {
    let root = scratch("determinism");
    let data = root.join("data");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    bfanet(&[
        "gen-data",
        "--n",
        "16",
        "--size",
        "32",
        "--seed",
        "5",
        "--out",
        &s(&data),
    ]);
    let config = root.join("run.cfg");
    let mut cfg = RunConfig::default();
    cfg.model.input_h = 32;
    cfg.model.input_w = 32;
    cfg.model.base_channels = 4;
    cfg.model.boundary_channels = 4;
    cfg.model.agg_channels = 8;
    cfg.model.seed = 3;
    cfg.epochs = 3;
    cfg.checkpoint_every = 2;
    fs::write(&config, cfg.to_text()).unwrap();
    let manifest = data.join("manifest.txt");
    let mut problems = Vec::new();
    let (a, b) = (root.join("a"), root.join("b"));
    for out in [&a, &b] {
        bfanet(&[
            "train",
            "--config",
            &s(&config),
            "--manifest",
            &s(&manifest),
            "--out",
            &s(out),
        ]);
    }
    for f in ["loss.csv", "checkpoint.bfan", "checkpoint_e0002.bfan"] {
        if read(&a.join(f)) != read(&b.join(f)) {
            problems.push(format!("{f} differs between runs"));
        }
    }
    let bytes = read(&a.join("checkpoint.bfan"));
    if Checkpoint::from_bytes(&bytes).unwrap().to_bytes() != bytes {
        problems.push("checkpoint decode/encode is not byte-stable".into());
    }
    let images = data.join("images");
    let ckpt = a.join("checkpoint.bfan");
    let (p1, p2) = (root.join("pred1"), root.join("pred2"));
    bfanet(&[
        "infer",
        "--checkpoint",
        &s(&ckpt),
        "--images",
        &s(&images),
        "--out",
        &s(&p1),
    ]);
    let copy = root.join("copy.bfan");
    fs::write(&copy, &bytes).unwrap();
    bfanet(&[
        "infer",
        "--checkpoint",
        &s(&copy),
        "--images",
        &s(&images),
        "--out",
        &s(&p2),
        "--config",
        &s(&config),
    ]);
    if read(&ckpt) != bytes {
        problems.push("infer modified the checkpoint".into());
    }
    let mut compared = 0;
    for entry in fs::read_dir(&p1).unwrap() {
        let name = entry.unwrap().file_name();
        compared += 1;
        if read(&p1.join(&name)) != read(&p2.join(&name)) {
            problems.push(format!("prediction {name:?} differs"));
        }
    }
    if compared != 16 {
        problems.push(format!("expected 16 predictions, found {compared}"));
    }
    outcome(
        problems.is_empty(),
        format!("two train runs, {compared} inferred maps compared, problems {problems:?}"),
    )
}

fn collect_sources(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            collect_sources(&p, out);
        } else if p.extension().is_some_and(|e| e == "rs") {
            out.push(p);
        }
    }
}

fn benchmark_table_documented() -> Outcome {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let readme = fs::read_to_string(root.join("README.md")).unwrap_or_default();
    let values = ["0.882", "0.051"];
    let documented = values.iter().all(|v| readme.contains(v)) && readme.contains("not reproduc");
    let mut sources = Vec::new();
    for krate in ["core", "bfanet"] {
        collect_sources(&root.join("crates").join(krate).join("src"), &mut sources);
    }
    let leaked: Vec<String> = sources
        .iter()
        .filter(|p| {
            let text = fs::read_to_string(p).unwrap();
            values.iter().any(|v| text.contains(v))
        })
        .map(|p| p.display().to_string())
        .collect();
    outcome(
        documented && leaked.is_empty(),
        format!(
            "README declares benchmark values non-reproducible: {documented}; library sources using them: {leaked:?}"
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        println!(
            "criterion {n:>2}: {} ({})",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, o));
    };
    report(1, gradient_suite());
    report(2, shape_contract());
    report(3, metric_oracle());
    report(4, fusion_algebra());
    report(5, boundary_labels());
    let train = gen_synthetic(200, 64, 1).unwrap();
    let test = gen_synthetic(50, 64, 2).unwrap();
    let runs = desk_runs(&train, &test);
    report(6, desk_training(&runs));
    report(7, ablation_direction(&runs));
    report(8, fpm_subsets(&runs, &train, &test));
    report(9, determinism());
    report(10, benchmark_table_documented());
    let failed: Vec<usize> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!("{} of {} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failing: {failed:?}");
        std::process::exit(1);
    }
}
