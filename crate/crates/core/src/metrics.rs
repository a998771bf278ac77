//! Counting metrics, split evaluation, and the ablation grid.

use crate::config::{Config, Fusion};
use crate::head::Model;
use crate::seqdata::RawSequence;
use crate::tka::EmbeddingStore;
use crate::train;
use crate::{Error, Result};
use std::io::Write;

/// Per-sequence evaluation record.
#[derive(Clone, Debug)]
pub struct SeqRecord {
    pub id: String,
    pub gt: u32,
    pub pred: f64,
}

/// Split-level counting metrics.
#[derive(Clone, Debug)]
pub struct EvalReport {
    /// Mean relative count error.
    pub mae: f64,
    /// Fraction of sequences within one repetition of the truth.
    pub obo: f64,
    pub records: Vec<SeqRecord>,
}

/// Metrics over (ground truth, prediction) pairs. `round_preds` snaps the
/// predictions to whole counts before comparison.
pub fn counting_metrics(pairs: &[(u32, f64)], round_preds: bool) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("counting_metrics: no pairs".into()));
    }
    let mut rel_sum = 0.0;
    let mut within = 0usize;
    for &(gt, raw_pred) in pairs {
        if gt == 0 {
            return Err(Error::InvalidArgument(
                "counting_metrics: ground-truth count 0".into(),
            ));
        }
        let pred = if round_preds { raw_pred.round() } else { raw_pred };
        rel_sum += (gt as f64 - pred).abs() / gt as f64;
        if (gt as f64 - pred).abs() <= 1.0 {
            within += 1;
        }
    }
    Ok((rel_sum / pairs.len() as f64, within as f64 / pairs.len() as f64))
}

/// Evaluate a model on a split, optionally with retrieval augmentation.
pub fn evaluate(
    model: &Model,
    split: &[RawSequence],
    retrieval: Option<(&EmbeddingStore, usize)>,
) -> Result<EvalReport> {
    if split.is_empty() {
        return Err(Error::InvalidArgument("evaluate: empty split".into()));
    }
    let mut records = Vec::with_capacity(split.len());
    for seq in split {
        let density = model.predict(seq, retrieval)?;
        records.push(SeqRecord { id: seq.id.clone(), gt: seq.count, pred: density.count() });
    }
    let pairs: Vec<(u32, f64)> = records.iter().map(|r| (r.gt, r.pred)).collect();
    let (mae, obo) = counting_metrics(&pairs, model.cfg.round_obo)?;
    Ok(EvalReport { mae, obo, records })
}

pub fn write_report_csv(report: &EvalReport, w: &mut impl Write) -> Result<()> {
    writeln!(w, "id,gt_count,pred_count,abs_err")?;
    for r in &report.records {
        writeln!(w, "{},{},{:.6},{:.6}", r.id, r.gt, r.pred, (r.gt as f64 - r.pred).abs())?;
    }
    Ok(())
}

/// One configuration cell of the ablation grid.
#[derive(Clone, Debug)]
pub struct AblationCell {
    pub scales: Vec<usize>,
    pub topk: usize,
    pub fusion: Fusion,
    pub alpha: f64,
}

/// Factorized ablation grid; `cells` expands the full cross product.
#[derive(Clone, Debug)]
pub struct AblationGrid {
    pub scales: Vec<Vec<usize>>,
    pub topk: Vec<usize>,
    pub fusion: Vec<Fusion>,
    pub alpha: Vec<f64>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        AblationGrid {
            scales: vec![vec![4], vec![3, 4, 5], vec![2, 3, 4, 5, 6]],
            topk: vec![0, 1, 5, 10],
            fusion: vec![Fusion::Average, Fusion::Attention, Fusion::Max],
            alpha: vec![0.0, 1.0, 10.0, 20.0],
        }
    }
}

impl AblationGrid {
    pub fn cells(&self) -> Vec<AblationCell> {
        let mut out = Vec::new();
        for scales in &self.scales {
            for &topk in &self.topk {
                for &fusion in &self.fusion {
                    for &alpha in &self.alpha {
                        out.push(AblationCell {
                            scales: scales.clone(),
                            topk,
                            fusion,
                            alpha,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Train and evaluate one grid cell from scratch.
pub fn run_cell(
    base: &Config,
    cell: &AblationCell,
    train_set: &[RawSequence],
    test_set: &[RawSequence],
) -> Result<EvalReport> {
    let mut cfg = base.clone();
    cfg.scales = cell.scales.clone();
    cfg.topk = cell.topk;
    cfg.fusion = cell.fusion;
    cfg.alpha = cell.alpha;
    let mut model = Model::init(cfg.clone())?;
    train::pretrain(&mut model, train_set, cfg.steps_pretrain, cfg.lr_pretrain, cfg.seed)?;
    if cell.topk > 0 {
        let (store, _) = train::finetune(
            &mut model,
            train_set,
            cell.topk,
            cfg.steps_finetune,
            cfg.lr_finetune,
            cfg.seed,
        )?;
        evaluate(&model, test_set, Some((&store, cell.topk)))
    } else {
        evaluate(&model, test_set, None)
    }
}

/// Run every cell of the grid, streaming one CSV row per cell.
pub fn run_ablation(
    base: &Config,
    grid: &AblationGrid,
    train_set: &[RawSequence],
    test_set: &[RawSequence],
    w: &mut impl Write,
) -> Result<Vec<(AblationCell, EvalReport)>> {
    writeln!(w, "scales,topk,fusion,alpha,mae,obo")?;
    let mut out = Vec::new();
    for cell in grid.cells() {
        let report = run_cell(base, &cell, train_set, test_set)?;
        let scales: Vec<String> = cell.scales.iter().map(|s| s.to_string()).collect();
        writeln!(
            w,
            "{},{},{},{},{:.6},{:.6}",
            scales.join("|"),
            cell.topk,
            cell.fusion,
            cell.alpha,
            report.mae,
            report.obo
        )?;
        out.push((cell, report));
    }
    Ok(out)
}
