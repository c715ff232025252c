//! PSNR and the evaluation harnesses: mode comparison, inner-step and
//! inner-learning-rate ablations, and fine-tuning feasibility curves.

use std::fmt::Write as _;

use crate::exec::{map_ordered, Exec};
use crate::frame::SharedFrame;
use crate::model::{self, ModelParams};
use crate::optim::OptimizerKind;
use crate::tasks::{self, DataError, Sequence, Task};
use crate::tensor::TensorError;
use crate::trainer::{self, AdaptConfig, TrainError};

/// Reported for identical frames, and the upper bound of every PSNR value.
pub const PSNR_CAP_DB: f64 = 100.0;

/// `10·log10(1 / MSE)` on frames clamped to `[0, 1]`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &crate::Frame, b: &crate::Frame) -> Result<f64, TensorError> {
    a.tensor().expect_same_shape("psnr", b.tensor())?;
    let n = a.data().len();
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.clamp(0.0, 1.0) - y.clamp(0.0, 1.0);
            d * d
        })
        .sum::<f64>()
        / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// PSNR of the held-out middle frame `I4` predicted from `(I3, I5)` after
/// adapting on the task's wide-gap triplets.
pub fn task_psnr(params: &ModelParams, task: &Task, acfg: &AdaptConfig) -> Result<f64, TrainError> {
    let adapted = trainer::inner_adapt(params, task, acfg)?;
    let t = &task.d_test;
    let pred = model::forward(&adapted, &t.input_a, &t.input_b)?;
    Ok(psnr(&pred, &t.target)?)
}

/// Mean [`task_psnr`] over every window of a sequence.
pub fn sequence_psnr(
    params: &ModelParams,
    seq: &Sequence,
    acfg: &AdaptConfig,
) -> Result<f64, TrainError> {
    let tasks = tasks::all_tasks(std::slice::from_ref(seq))?;
    if tasks.is_empty() {
        return Err(DataError::TooShort {
            len: seq.len(),
            need: tasks::WINDOW,
        }
        .into());
    }
    let mut sum = 0.0;
    for t in &tasks {
        sum += task_psnr(params, t, acfg)?;
    }
    Ok(sum / tasks.len() as f64)
}

/// Per-sequence PSNR over a test suite, in suite order.
pub fn evaluate_suite(
    params: &ModelParams,
    suite: &[Sequence],
    acfg: &AdaptConfig,
    exec: Exec,
) -> Result<Vec<f64>, TrainError> {
    if suite.is_empty() {
        return Err(DataError::EmptyDataset.into());
    }
    map_ordered(exec, suite, |s| sequence_psnr(params, s, acfg))
        .into_iter()
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub condition: String,
    /// Sequence label, or `"mean"` for the aggregate row.
    pub sequence: String,
    pub psnr_db: f64,
}

const CSV_NOTE: &str =
    "# psnr_db is capped at 100 dB for identical frames; means include the cap\n";

/// Long-format metric table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
}

impl MetricTable {
    /// Appends one row per sequence plus a `"mean"` row.
    pub fn push_method(&mut self, method: &str, condition: &str, per_seq: &[f64]) {
        for (i, &v) in per_seq.iter().enumerate() {
            self.rows.push(MetricRow {
                method: method.into(),
                condition: condition.into(),
                sequence: format!("seq{i:04}"),
                psnr_db: v,
            });
        }
        self.rows.push(MetricRow {
            method: method.into(),
            condition: condition.into(),
            sequence: "mean".into(),
            psnr_db: mean(per_seq),
        });
    }

    pub fn mean_of(&self, method: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.sequence == "mean")
            .map(|r| r.psnr_db)
    }

    pub fn per_sequence(&self, method: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.sequence != "mean")
            .map(|r| r.psnr_db)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_NOTE);
        s.push_str("method,condition,sequence,psnr_db\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{:.6}",
                r.method, r.condition, r.sequence, r.psnr_db
            )
            .unwrap();
        }
        s
    }
}

pub const BASELINE: &str = "Baseline";
pub const RETRAINED: &str = "Re-trained";
pub const META: &str = "Meta-trained";
pub const NAIVE: &str = "Naive Fine-tune";

fn adapt_label(acfg: &AdaptConfig) -> String {
    format!("k={} alpha={:e} {}", acfg.k, acfg.alpha, acfg.optimizer)
}

/// Baseline and Re-trained evaluated as-is, Meta-trained after adaptation
/// with `acfg`.
pub fn compare_modes(
    baseline: &ModelParams,
    retrained: &ModelParams,
    meta: &ModelParams,
    suite: &[Sequence],
    acfg: &AdaptConfig,
    exec: Exec,
) -> Result<MetricTable, TrainError> {
    baseline.ensure_same_arch(retrained)?;
    baseline.ensure_same_arch(meta)?;
    if suite.is_empty() {
        return Err(DataError::EmptyDataset.into());
    }
    let none = AdaptConfig::none();
    let mut table = MetricTable::default();
    table.push_method(
        BASELINE,
        "no-adapt",
        &evaluate_suite(baseline, suite, &none, exec)?,
    );
    table.push_method(
        RETRAINED,
        "no-adapt",
        &evaluate_suite(retrained, suite, &none, exec)?,
    );
    table.push_method(
        META,
        &adapt_label(acfg),
        &evaluate_suite(meta, suite, acfg, exec)?,
    );
    Ok(table)
}

/// Mean PSNR per inner-step count for naive fine-tuning of the re-trained
/// model and for adaptation of the meta-trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct StepGrid {
    pub ks: Vec<usize>,
    pub naive: Vec<f64>,
    pub meta: Vec<f64>,
}

impl StepGrid {
    pub fn gains(&self) -> Vec<f64> {
        self.meta
            .iter()
            .zip(&self.naive)
            .map(|(m, n)| m - n)
            .collect()
    }

    /// Whether the gain never increases with `k` (over `k >= 1`).
    pub fn gain_non_increasing(&self) -> bool {
        let g: Vec<f64> = self
            .ks
            .iter()
            .zip(self.gains())
            .filter(|(k, _)| **k > 0)
            .map(|(_, g)| g)
            .collect();
        g.windows(2).all(|w| w[1] <= w[0])
    }

    /// Two-row grid plus a gain row; the gain cell is empty at `k = 0`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_NOTE);
        s.push_str("method");
        for k in &self.ks {
            write!(s, ",k={k}").unwrap();
        }
        s.push('\n');
        for (label, vals) in [(NAIVE, &self.naive), (META, &self.meta)] {
            s.push_str(label);
            for v in vals {
                write!(s, ",{v:.6}").unwrap();
            }
            s.push('\n');
        }
        s.push_str("PSNR gain");
        for (k, g) in self.ks.iter().zip(self.gains()) {
            if *k == 0 {
                s.push(',');
            } else {
                write!(s, ",{g:+.6}").unwrap();
            }
        }
        s.push('\n');
        s
    }

    pub fn monotonicity_report(&self) -> String {
        let mut s = String::new();
        for (k, g) in self.ks.iter().zip(self.gains()) {
            writeln!(s, "k={k}: gain {g:+.4} dB").unwrap();
        }
        writeln!(
            s,
            "gain is {}non-increasing in k over k >= 1",
            if self.gain_non_increasing() {
                ""
            } else {
                "not "
            }
        )
        .unwrap();
        s
    }
}

pub fn ablate_inner_steps(
    meta: &ModelParams,
    retrained: &ModelParams,
    suite: &[Sequence],
    alpha: f64,
    optimizer: OptimizerKind,
    ks: &[usize],
    exec: Exec,
) -> Result<StepGrid, TrainError> {
    meta.ensure_same_arch(retrained)?;
    let mut grid = StepGrid {
        ks: ks.to_vec(),
        naive: Vec::new(),
        meta: Vec::new(),
    };
    for &k in ks {
        let acfg = AdaptConfig {
            alpha,
            k,
            optimizer,
        };
        grid.naive
            .push(mean(&evaluate_suite(retrained, suite, &acfg, exec)?));
        grid.meta
            .push(mean(&evaluate_suite(meta, suite, &acfg, exec)?));
    }
    Ok(grid)
}

/// Mean PSNR per inner learning rate; each model is adapted with the `α` it
/// was meta-trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct RateGrid {
    pub alphas: Vec<f64>,
    pub psnr: Vec<f64>,
}

impl RateGrid {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_NOTE);
        s.push_str("learning_rate");
        for a in &self.alphas {
            write!(s, ",alpha={a:e}").unwrap();
        }
        s.push_str("\nPSNR (dB)");
        for v in &self.psnr {
            write!(s, ",{v:.6}").unwrap();
        }
        s.push('\n');
        s
    }

    /// Whether every `α > 0` cell is at least the `α = 0` cell.
    pub fn all_at_least_zero_cell(&self) -> Option<bool> {
        let zero = self.alphas.iter().position(|&a| a == 0.0)?;
        Some(
            self.alphas
                .iter()
                .zip(&self.psnr)
                .all(|(&a, &p)| a == 0.0 || p >= self.psnr[zero]),
        )
    }
}

pub fn ablate_lr(
    entries: &[(f64, &ModelParams)],
    suite: &[Sequence],
    k: usize,
    optimizer: OptimizerKind,
    exec: Exec,
) -> Result<RateGrid, TrainError> {
    if let Some((_, first)) = entries.first() {
        for (_, p) in entries {
            first.ensure_same_arch(p)?;
        }
    }
    let mut grid = RateGrid {
        alphas: Vec::new(),
        psnr: Vec::new(),
    };
    for &(alpha, params) in entries {
        let acfg = AdaptConfig {
            alpha,
            k,
            optimizer,
        };
        grid.alphas.push(alpha);
        grid.psnr
            .push(mean(&evaluate_suite(params, suite, &acfg, exec)?));
    }
    Ok(grid)
}

/// PSNR change on a held-out frame over naive fine-tuning steps.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityCurve {
    /// PSNR before any update.
    pub initial_psnr: f64,
    /// `delta_db[s]` = PSNR after `s` updates minus `initial_psnr`.
    pub delta_db: Vec<f64>,
    pub loss: Vec<f64>,
}

impl FeasibilityCurve {
    pub fn max_delta(&self) -> f64 {
        self.delta_db
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// First step whose gain reaches `threshold` dB.
    pub fn first_crossing(&self, threshold: f64) -> Option<usize> {
        self.delta_db.iter().position(|&d| d >= threshold)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,delta_psnr_db,finetune_loss\n");
        for (i, (d, l)) in self.delta_db.iter().zip(&self.loss).enumerate() {
            writeln!(s, "{i},{d:.6},{l:e}").unwrap();
        }
        s
    }
}

/// Fine-tunes on the low-frame-rate frames `0, 2, 4, 6` of a 7-frame sequence
/// and tracks the PSNR of frame 3 predicted from frames 2 and 4.
pub fn feasibility_curve(
    params: &ModelParams,
    seq: &[SharedFrame],
    lr: f64,
    steps: usize,
    optimizer: OptimizerKind,
) -> Result<FeasibilityCurve, TrainError> {
    if seq.len() < tasks::WINDOW {
        return Err(DataError::TooShort {
            len: seq.len(),
            need: tasks::WINDOW,
        }
        .into());
    }
    let low: Vec<SharedFrame> = (0..4).map(|i| seq[2 * i].clone()).collect();
    let (a, target, b) = (&seq[2], &seq[3], &seq[4]);
    let mut psnrs = Vec::with_capacity(steps + 1);
    let mut loss = Vec::with_capacity(steps + 1);
    let mut failure = None;
    trainer::finetune_with(params, &low, lr, steps, optimizer, |_, theta, l| {
        loss.push(l);
        match model::forward(theta, a, b)
            .map_err(TrainError::from)
            .and_then(|p| Ok(psnr(&p, target)?))
        {
            Ok(v) => psnrs.push(v),
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let initial_psnr = psnrs[0];
    Ok(FeasibilityCurve {
        initial_psnr,
        delta_db: psnrs.iter().map(|p| p - initial_psnr).collect(),
        loss,
    })
}
