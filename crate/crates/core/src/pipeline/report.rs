//! Report emission: deterministic CSV tables and a JSON summary. All
//! numbers are formatted by one pure function so repeated executions of the
//! same configuration produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::forecast::{HyperParams, Method};

use super::evaluate::{Aggregate, ImageBaseline, MetricSet, TestArtifacts, TestRun, WeightEval};
use super::search::{GridCell, NcpScore};

/// Fixed-width decimal for ordinary magnitudes, scientific for extremes,
/// empty for non-finite values (which only arise in optional columns).
pub fn fmt_f64(v: f64) -> String {
    if !v.is_finite() {
        return String::new();
    }
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-4..1e7).contains(&a) {
        format!("{v:.6}")
    } else {
        format!("{v:.6e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_flow_grid_csv(
    path: &Path,
    grid: &[FlowParams],
    errors: &[f64],
    best: usize,
) -> Result<()> {
    let mut out = String::new();
    out.push_str("sigma_init,sigma_sub,sigma_lk,n_layers,n_iter,e_gt,selected\n");
    for (i, (p, e)) in grid.iter().zip(errors).enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_f64(p.sigma_init),
            fmt_f64(p.sigma_sub),
            fmt_f64(p.sigma_lk),
            p.n_layers,
            p.n_iter,
            fmt_f64(*e),
            u8::from(i == best)
        )
        .unwrap();
    }
    write_text(path, &out)
}

/// Ground-truth weight series, one row per frame (1-based index).
pub fn write_weights_csv(path: &Path, weights: ArrayView2<f64>) -> Result<()> {
    let mut out = String::from("frame");
    for j in 0..weights.ncols() {
        write!(out, ",w_{}", j + 1).unwrap();
    }
    out.push('\n');
    for (k, row) in weights.outer_iter().enumerate() {
        write!(out, "{}", k + 1).unwrap();
        for v in row {
            write!(out, ",{}", fmt_f64(*v)).unwrap();
        }
        out.push('\n');
    }
    write_text(path, &out)
}

#[derive(Debug, Clone)]
pub struct GridRow {
    pub method: Method,
    pub h: usize,
    pub n_cp: usize,
    pub cell: GridCell,
    pub selected: bool,
}

pub fn write_grid_search_csv(path: &Path, rows: &[GridRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str("method,h,n_cp,eta,l,q,cv_weight_nrmse,divergent_runs,total_runs,selected\n");
    for row in rows {
        let hp = row.cell.hp;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.method.label(),
            row.h,
            row.n_cp,
            fmt_f64(hp.eta),
            hp.l,
            hp.q,
            fmt_opt(row.cell.cv_nrmse),
            row.cell.divergent_runs,
            row.cell.total_runs,
            u8::from(row.selected)
        )
        .unwrap();
    }
    write_text(path, &out)
}

#[derive(Debug, Clone)]
pub struct NcpRow {
    pub method: Method,
    pub h: usize,
    pub score: NcpScore,
    pub selected: bool,
}

pub fn write_ncp_selection_csv(path: &Path, rows: &[NcpRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str("method,h,n_cp,eta,l,q,e_pred,divergent_runs,total_runs,selected\n");
    for row in rows {
        let hp = row.score.candidate.hp;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.method.label(),
            row.h,
            row.score.candidate.n_cp,
            fmt_f64(hp.eta),
            hp.l,
            hp.q,
            fmt_opt(row.score.e_pred),
            row.score.divergent_runs,
            row.score.total_runs,
            u8::from(row.selected)
        )
        .unwrap();
    }
    write_text(path, &out)
}

#[derive(Debug, Clone)]
pub struct TestRunRow {
    pub method: Method,
    pub h: usize,
    pub n_cp: usize,
    pub hp: HyperParams,
    pub run: TestRun,
}

pub fn write_test_runs_csv(path: &Path, rows: &[TestRunRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str(
        "method,h,n_cp,eta,l,q,run,seed,weight_nrmse,image_nrmse,cross_correlation,ssim,\
         mean_dvf_error_mm,max_dvf_error_mm\n",
    );
    for row in rows {
        let m = row.run.metrics;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.method.label(),
            row.h,
            row.n_cp,
            fmt_f64(row.hp.eta),
            row.hp.l,
            row.hp.q,
            row.run.run_index,
            row.run.seed,
            fmt_f64(m.weight_nrmse),
            fmt_f64(m.image_nrmse),
            fmt_f64(m.cross_correlation),
            fmt_f64(m.ssim),
            fmt_f64(m.mean_dvf_error_mm),
            fmt_f64(m.max_dvf_error_mm)
        )
        .unwrap();
    }
    write_text(path, &out)
}

/// One aggregate table row: a method at a horizon, or a reference rule.
/// Reference rules carry image metrics only; the remaining cells stay
/// empty.
#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub label: String,
    pub h: Option<usize>,
    pub n_cp: Option<usize>,
    pub n_valid: usize,
    pub divergent_runs: usize,
    pub weight_nrmse: Option<(f64, Option<f64>)>,
    pub image_nrmse: Option<(f64, Option<f64>)>,
    pub cross_correlation: Option<(f64, Option<f64>)>,
    pub ssim: Option<(f64, Option<f64>)>,
    pub mean_dvf_error_mm: Option<(f64, Option<f64>)>,
    pub max_dvf_error_mm: Option<(f64, Option<f64>)>,
}

impl AggregateRow {
    pub fn from_method(
        method: Method,
        h: usize,
        n_cp: usize,
        aggregate: &Aggregate,
    ) -> Self {
        let mean = aggregate.mean;
        let hr = aggregate.half_range;
        let pick = |m: f64, f: fn(&MetricSet) -> f64| Some((m, hr.as_ref().map(f)));
        AggregateRow {
            label: method.label().into(),
            h: Some(h),
            n_cp: Some(n_cp),
            n_valid: aggregate.n_valid,
            divergent_runs: aggregate.divergent_runs,
            weight_nrmse: pick(mean.weight_nrmse, |m| m.weight_nrmse),
            image_nrmse: pick(mean.image_nrmse, |m| m.image_nrmse),
            cross_correlation: pick(mean.cross_correlation, |m| m.cross_correlation),
            ssim: pick(mean.ssim, |m| m.ssim),
            mean_dvf_error_mm: pick(mean.mean_dvf_error_mm, |m| m.mean_dvf_error_mm),
            max_dvf_error_mm: pick(mean.max_dvf_error_mm, |m| m.max_dvf_error_mm),
        }
    }

    pub fn from_image_baseline(label: &str, h: Option<usize>, row: &ImageBaseline) -> Self {
        AggregateRow {
            label: label.into(),
            h,
            n_cp: None,
            n_valid: 1,
            divergent_runs: 0,
            weight_nrmse: None,
            image_nrmse: Some((row.image_nrmse, None)),
            cross_correlation: Some((row.cross_correlation, None)),
            ssim: Some((row.ssim, None)),
            mean_dvf_error_mm: None,
            max_dvf_error_mm: None,
        }
    }
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str(
        "method,h,n_cp,n_valid_runs,divergent_runs,weight_nrmse,weight_nrmse_hr,image_nrmse,\
         image_nrmse_hr,cross_correlation,cross_correlation_hr,ssim,ssim_hr,mean_dvf_error_mm,\
         mean_dvf_error_mm_hr,max_dvf_error_mm,max_dvf_error_mm_hr\n",
    );
    for row in rows {
        let pair = |v: &Option<(f64, Option<f64>)>| match v {
            Some((m, hr)) => (fmt_f64(*m), fmt_opt(*hr)),
            None => (String::new(), String::new()),
        };
        let (wn, wn_hr) = pair(&row.weight_nrmse);
        let (inr, inr_hr) = pair(&row.image_nrmse);
        let (cc, cc_hr) = pair(&row.cross_correlation);
        let (ss, ss_hr) = pair(&row.ssim);
        let (md, md_hr) = pair(&row.mean_dvf_error_mm);
        let (xd, xd_hr) = pair(&row.max_dvf_error_mm);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.label,
            row.h.map(|v| v.to_string()).unwrap_or_default(),
            row.n_cp.map(|v| v.to_string()).unwrap_or_default(),
            row.n_valid,
            row.divergent_runs,
            wn,
            wn_hr,
            inr,
            inr_hr,
            cc,
            cc_hr,
            ss,
            ss_hr,
            md,
            md_hr,
            xd,
            xd_hr
        )
        .unwrap();
    }
    write_text(path, &out)
}

#[derive(Debug, Clone)]
pub struct WeightEvalRow {
    pub method: Method,
    pub h: usize,
    pub n_cp: usize,
    pub hp: HyperParams,
    pub eval: WeightEval,
}

pub fn write_weight_eval_csv(path: &Path, rows: &[WeightEvalRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str(
        "method,h,n_cp,eta,l,q,n_valid_runs,divergent_runs,test_weight_nrmse,\
         test_weight_nrmse_hr\n",
    );
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.method.label(),
            row.h,
            row.n_cp,
            fmt_f64(row.hp.eta),
            row.hp.l,
            row.hp.q,
            row.eval.n_valid,
            row.eval.divergent_runs,
            fmt_f64(row.eval.mean),
            fmt_opt(row.eval.half_range)
        )
        .unwrap();
    }
    write_text(path, &out)
}

/// Truth and prediction per test frame, from the first valid run.
pub fn write_predicted_weights_csv(path: &Path, artifacts: &TestArtifacts) -> Result<()> {
    let p = artifacts.truth_weights.ncols();
    let mut out = String::from("frame");
    for j in 0..p {
        write!(out, ",w_{}", j + 1).unwrap();
    }
    for j in 0..p {
        write!(out, ",w_pred_{}", j + 1).unwrap();
    }
    out.push('\n');
    for (i, &k) in artifacts.target_frames.iter().enumerate() {
        write!(out, "{k}").unwrap();
        for v in artifacts.truth_weights.row(i) {
            write!(out, ",{}", fmt_f64(*v)).unwrap();
        }
        for v in artifacts.predicted_weights.row(i) {
            write!(out, ",{}", fmt_f64(*v)).unwrap();
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// JSON summary of the whole experiment; everything needed to trace a
/// reported number back to its configuration.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub seed: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub flow: FlowSummary,
    pub pca: Vec<PcaSummary>,
    pub methods: Vec<MethodSummary>,
    pub weight_eval: Vec<WeightEvalSummary>,
    pub baselines: Vec<BaselineSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowSummary {
    pub params: FlowParams,
    pub e_gt: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PcaSummary {
    pub flavor: String,
    pub m_train: usize,
    pub n_cp_max: usize,
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub h: usize,
    pub n_cp: usize,
    pub eta: f64,
    pub l: usize,
    pub q: usize,
    pub cv_weight_nrmse: f64,
    pub e_pred: f64,
    pub n_valid_runs: usize,
    pub divergent_runs: usize,
    pub test_weight_nrmse: f64,
    pub test_image_nrmse: f64,
    pub test_cross_correlation: f64,
    pub test_ssim: f64,
    pub test_mean_dvf_error_mm: f64,
    pub test_max_dvf_error_mm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightEvalSummary {
    pub method: Method,
    pub h: usize,
    pub n_cp: usize,
    pub test_weight_nrmse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineSummary {
    pub label: String,
    pub h: Option<usize>,
    pub image_nrmse: f64,
    pub cross_correlation: f64,
    pub ssim: f64,
}

pub fn write_summary_json(path: &Path, summary: &ExperimentSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Config(format!("summary serialization failed: {e}")))?;
    write_text(path, &(text + "\n"))
}
