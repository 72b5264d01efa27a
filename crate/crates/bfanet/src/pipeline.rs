//! The commands behind the CLI, usable as library calls.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use bfanet_core::metrics::{EvalReport, Evaluator};
use bfanet_core::training::plateaued;
use bfanet_core::{
    Ablation, Bfanet, BinaryMask, EpochLog, Example, Graph, Preprocess, SaliencyMap, SaliencySample, Tensor, Trainer,
};

use crate::checkpoint::Checkpoint;
use crate::dataset;
use crate::error::{Error, Result};
use crate::pnm::Image;
use crate::runconfig::RunConfig;

pub const LOSS_HEADER: &str = "epoch,lr,total,final,stage_mean,boundary_mean";

pub fn loss_row(l: &EpochLog) -> String {
    format!(
        "{},{},{},{},{},{}",
        l.epoch, l.lr, l.total, l.final_saliency, l.stage_mean, l.boundary_mean
    )
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub logs: Vec<EpochLog>,
    pub checkpoint: PathBuf,
}

/// Trains on `samples`, writing `loss.csv`, periodic `checkpoint_eNNNN.bfan`
/// files and the final `checkpoint.bfan` into `out`.
pub fn train(
    cfg: &RunConfig,
    samples: &[SaliencySample],
    out: &Path,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::config("trainer", "no training samples"));
    }
    if samples.len() < cfg.train.batch_size {
        return Err(Error::config(
            "trainer",
            format!(
                "{} training samples is fewer than batch_size {}",
                samples.len(),
                cfg.train.batch_size
            ),
        ));
    }
    mkdir(out)?;
    let pre = cfg.preprocess();
    let examples = samples
        .iter()
        .map(|s| Example::from_sample(s, &pre))
        .collect::<bfanet_core::Result<Vec<_>>>()?;
    let mut trainer = Trainer::new(Bfanet::new(cfg.model.clone())?, cfg.train)?;
    let mut csv = String::from(LOSS_HEADER);
    csv.push('\n');
    let log_path = out.join("loss.csv");
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut totals = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let log = trainer.run_epoch(&examples)?;
        on_epoch(&log);
        csv.push_str(&loss_row(&log));
        csv.push('\n');
        write(&log_path, &csv)?;
        if cfg.checkpoint_every > 0 && log.epoch % cfg.checkpoint_every == 0 {
            Checkpoint::from_trainer(&trainer, cfg).save(&out.join(format!("checkpoint_e{:04}.bfan", log.epoch)))?;
        }
        totals.push(log.total);
        logs.push(log);
        if cfg.plateau && plateaued(&totals) {
            break;
        }
    }
    write(&log_path, &csv)?;
    let checkpoint = out.join("checkpoint.bfan");
    Checkpoint::from_trainer(&trainer, cfg).save(&checkpoint)?;
    Ok(TrainOutcome {
        trainer,
        logs,
        checkpoint,
    })
}

/// Nearest resize of a `[H, W]` plane.
fn resize_plane(data: &[f64], h: usize, w: usize, th: usize, tw: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        for x in 0..tw {
            out.push(data[(y * h / th) * w + x * w / tw]);
        }
    }
    out
}

fn to_gray(p: &[f64]) -> Vec<u8> {
    p.iter().map(|v| (255.0 * v).round().clamp(0.0, 255.0) as u8).collect()
}

/// Saliency and per-scale edge probabilities for one raw `[3, H, W]` image.
pub struct Prediction {
    /// At the image's own resolution.
    pub saliency: Vec<f64>,
    pub height: usize,
    pub width: usize,
    /// `(side, probabilities)` per scale, finest first; empty for the baseline.
    pub boundary: Vec<(usize, Vec<f64>)>,
}

pub fn predict(model: &Bfanet, pre: &Preprocess, image: &Tensor) -> Result<Prediction> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let x = pre.apply(image)?;
    let x = Tensor::stack(&[&x])?;
    let mut g = Graph::new();
    let p = model.params().bind_frozen(&mut g)?;
    let input = g.input(x)?;
    let out = model.forward(&mut g, &p, input)?;
    let s = g.sigmoid(out.predictions.final_map)?;
    let saliency = resize_plane(g.value(s).data(), pre.height, pre.width, h, w);
    let mut boundary = Vec::new();
    if let Some(b) = &out.boundary {
        for &v in &b.outputs.predictions {
            let side = g.shape(v)[2];
            let pv = g.sigmoid(v)?;
            boundary.push((side, g.value(pv).data().to_vec()));
        }
    }
    Ok(Prediction {
        saliency,
        height: h,
        width: w,
        boundary,
    })
}

/// Writes `<id>.pgm` saliency maps (and `<id>_boundary<t>.pgm` edge maps when
/// asked) for every image, returning the written saliency paths in order.
pub fn infer(ckpt: &Checkpoint, images: &[(String, Image)], out: &Path, dump_boundary: bool) -> Result<Vec<PathBuf>> {
    mkdir(out)?;
    let model = ckpt.model()?;
    let pre = ckpt.config.preprocess();
    let mut written = Vec::with_capacity(images.len());
    for (id, img) in images {
        let pred = predict(&model, &pre, &img.to_tensor())?;
        let path = out.join(format!("{id}.pgm"));
        crate::pnm::write(&path, &Image::gray(pred.width, pred.height, to_gray(&pred.saliency))?)?;
        if dump_boundary {
            for (t, (side, probs)) in pred.boundary.iter().enumerate() {
                let p = out.join(format!("{id}_boundary{}.pgm", t + 1));
                crate::pnm::write(&p, &Image::gray(*side, *side, to_gray(probs))?)?;
            }
        }
        written.push(path);
    }
    Ok(written)
}

/// Scores a trained model on in-memory samples.
pub fn evaluate_model(model: &Bfanet, pre: &Preprocess, samples: &[SaliencySample]) -> Result<EvalReport> {
    let mut ev = Evaluator::new();
    for s in samples {
        let pred = predict(model, pre, &s.image)?;
        let map = SaliencyMap::new(pred.height, pred.width, pred.saliency)?;
        ev.add(s.id.clone(), &map, &s.mask)?;
    }
    Ok(ev.finish()?)
}

/// Pairs every `*.pgm` in `gt_dir` with the same file name in `pred_dir`.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<EvalReport> {
    let gts = dataset::graymaps(gt_dir)?;
    if gts.is_empty() {
        return Err(Error::data(format!("{}: no .pgm ground-truth files", gt_dir.display())));
    }
    let mut ev = Evaluator::new();
    for gt_path in gts {
        let name = gt_path.file_name().expect("listed file");
        let pred_path = pred_dir.join(name);
        if !pred_path.is_file() {
            return Err(Error::data(format!("missing prediction {}", pred_path.display())));
        }
        let gt = crate::pnm::read(&gt_path)?;
        let mask: BinaryMask = gt.to_mask().map_err(|e| e.in_file(&gt_path))?;
        let pred = crate::pnm::read(&pred_path)?;
        if pred.kind != crate::pnm::Kind::Gray {
            return Err(Error::data(format!(
                "{}: predictions must be graymaps",
                pred_path.display()
            )));
        }
        let map = SaliencyMap::from_gray(pred.height, pred.width, &pred.data)?;
        ev.add(dataset::stem(&gt_path), &map, &mask)?;
    }
    Ok(ev.finish()?)
}

/// `eval.csv`: one row per image plus a final `mean` row.
pub fn report_csv(r: &EvalReport) -> String {
    let mut s = String::from("id,f_beta,mae,max_f\n");
    for img in &r.images {
        let _ = writeln!(s, "{},{},{},{}", img.id, img.f_beta, img.mae, img.max_f);
    }
    let _ = writeln!(s, "mean,{},{},{}", r.mean_f, r.mean_mae, r.max_f);
    s
}

/// `pr_curve.csv`: 256 rows of `threshold,precision,recall`.
pub fn pr_csv(r: &EvalReport) -> String {
    let mut s = String::from("threshold,precision,recall\n");
    for (t, (p, rc)) in r.curve.points.iter().enumerate() {
        let _ = writeln!(s, "{t},{p},{rc}");
    }
    s
}

pub fn write_report(r: &EvalReport, out: &Path) -> Result<()> {
    mkdir(out)?;
    write(&out.join("eval.csv"), &report_csv(r))?;
    write(&out.join("pr_curve.csv"), &pr_csv(r))
}

pub fn ablation_slug(a: Ablation) -> &'static str {
    match a {
        Ablation::Baseline => "baseline",
        Ablation::BoundaryMinus => "boundary_minus",
        Ablation::BoundaryPlus => "boundary_plus",
        Ablation::AffmPlus => "affm_plus",
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub report: EvalReport,
}

/// Trains every variant from the same seed and scores it on `test`.
/// Rows follow the order baseline, boundary-, boundary+, affm+.
pub fn ablate(
    cfg: &RunConfig,
    train_samples: &[SaliencySample],
    test: &[SaliencySample],
    out: &Path,
    mut on_epoch: impl FnMut(Ablation, &EpochLog),
) -> Result<Vec<AblationRow>> {
    mkdir(out)?;
    let mut rows = Vec::with_capacity(4);
    for ablation in Ablation::ALL {
        let mut c = cfg.clone();
        c.model.ablation = ablation;
        let dir = out.join(ablation_slug(ablation));
        let outcome = train(&c, train_samples, &dir, |l| on_epoch(ablation, l))?;
        let report = evaluate_model(&outcome.trainer.model, &c.preprocess(), test)?;
        write_report(&report, &dir)?;
        rows.push(AblationRow { ablation, report });
    }
    write(&out.join("ablation.csv"), &ablation_csv(&rows))?;
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("setting,f_beta,mae\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.ablation, r.report.mean_f, r.report.mean_mae);
    }
    s
}
