//! Experiment configuration: data source, protocol constants, search grids,
//! run counts, and the desk/paper presets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowGrid;
use crate::forecast::Method;
use crate::synth::SyntheticSpec;
use crate::warp::WarpParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic { spec: SyntheticSpec },
    Manifest { path: PathBuf },
}

/// Grid for the recurrent trainers (shared by the frozen-recurrence
/// baseline). Expanded in field order with hidden_units varying fastest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RnnGrid {
    pub etas: Vec<f64>,
    pub signal_lengths: Vec<usize>,
    pub hidden_units: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmsGrid {
    pub etas: Vec<f64>,
    pub signal_lengths: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinRegGrid {
    pub signal_lengths: Vec<usize>,
}

/// Runs per stage. RTRL carries its own lower counts (slower, but its error
/// estimates have lower variance); deterministic methods always run once.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RunCounts {
    pub n_cv: usize,
    pub n_cv_rtrl: usize,
    pub n_warp: usize,
    pub n_warp_rtrl: usize,
    pub n_test_pca: usize,
    pub n_test_pca_rtrl: usize,
}

impl RunCounts {
    fn resolve(method: Method, base: usize, rtrl: usize) -> usize {
        if !method.is_stochastic() {
            1
        } else if method == Method::Rtrl {
            rtrl
        } else {
            base
        }
    }

    /// Runs per grid cell during hyper-parameter search.
    pub fn grid_runs(&self, method: Method) -> usize {
        Self::resolve(method, self.n_cv, self.n_cv_rtrl)
    }

    /// Runs for n_cp selection and for the test image evaluation.
    pub fn warp_runs(&self, method: Method) -> usize {
        Self::resolve(method, self.n_warp, self.n_warp_rtrl)
    }

    /// Runs for the weight-forecast test evaluation at fixed n_cp.
    pub fn weight_eval_runs(&self, method: Method) -> usize {
        Self::resolve(method, self.n_test_pca, self.n_test_pca_rtrl)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_cv", self.n_cv),
            ("n_cv_rtrl", self.n_cv_rtrl),
            ("n_warp", self.n_warp),
            ("n_warp_rtrl", self.n_warp_rtrl),
            ("n_test_pca", self.n_test_pca),
            ("n_test_pca_rtrl", self.n_test_pca_rtrl),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("run count {name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataSource,
    /// Training frames for flow optimization, PCA, and online methods.
    pub m_train: usize,
    /// Training frames for linear regression (own PCA fit).
    pub m_train_linreg: usize,
    pub m_cv: usize,
    pub horizons: Vec<usize>,
    pub methods: Vec<Method>,
    /// Candidate component counts, ascending.
    pub n_cp_range: Vec<usize>,
    /// Fixed component count for the weight-forecast test evaluation.
    pub weight_eval_n_cp: usize,
    pub rnn_grid: RnnGrid,
    pub lms_grid: LmsGrid,
    pub linreg_grid: LinRegGrid,
    pub runs: RunCounts,
    pub seed: u64,
    pub flow_grid: FlowGrid,
    pub warp: WarpParams,
    /// Write the first valid run's predicted test frames as PGM files.
    pub dump_frames: bool,
}

impl ExperimentConfig {
    /// Reduced preset over a seeded synthetic two-mode sequence; the whole
    /// experiment finishes in minutes on one core.
    pub fn desk() -> Self {
        ExperimentConfig {
            name: "desk".into(),
            data: DataSource::Synthetic {
                spec: SyntheticSpec::default(),
            },
            m_train: 90,
            m_train_linreg: 160,
            m_cv: 180,
            horizons: vec![1, 3, 6],
            methods: Method::ALL.to_vec(),
            n_cp_range: vec![1, 2, 3],
            weight_eval_n_cp: 2,
            rnn_grid: RnnGrid {
                etas: vec![0.01, 0.02],
                signal_lengths: vec![6, 12],
                hidden_units: vec![10, 20],
            },
            lms_grid: LmsGrid {
                etas: vec![0.05, 0.2],
                signal_lengths: vec![6, 12],
            },
            linreg_grid: LinRegGrid {
                signal_lengths: vec![6, 12],
            },
            runs: RunCounts {
                n_cv: 10,
                n_cv_rtrl: 5,
                n_warp: 5,
                n_warp_rtrl: 3,
                n_test_pca: 5,
                n_test_pca_rtrl: 3,
            },
            seed: 42,
            flow_grid: FlowGrid {
                sigma_init: vec![0.5],
                sigma_sub: vec![0.5],
                sigma_lk: vec![2.0, 4.0],
                n_layers: vec![2, 3],
                n_iter: vec![1, 2],
            },
            warp: WarpParams::default(),
            dump_frames: true,
        }
    }

    /// Full protocol preset; expects a prepared sequence manifest.
    pub fn paper() -> Self {
        ExperimentConfig {
            name: "paper".into(),
            data: DataSource::Manifest {
                path: PathBuf::from("data/manifest.json"),
            },
            m_train: 90,
            m_train_linreg: 160,
            m_cv: 180,
            horizons: (1..=7).collect(),
            methods: Method::ALL.to_vec(),
            n_cp_range: vec![1, 2, 3, 4],
            weight_eval_n_cp: 3,
            rnn_grid: RnnGrid {
                etas: vec![0.005, 0.01, 0.015, 0.02],
                signal_lengths: vec![6, 12, 18, 24, 30],
                hidden_units: vec![10, 30, 50, 70, 90, 110],
            },
            lms_grid: LmsGrid {
                etas: vec![0.02, 0.05, 0.1, 0.2],
                signal_lengths: vec![6, 12, 18, 24, 30],
            },
            linreg_grid: LinRegGrid {
                signal_lengths: vec![6, 12, 18, 24, 30],
            },
            runs: RunCounts {
                n_cv: 250,
                n_cv_rtrl: 10,
                n_warp: 25,
                n_warp_rtrl: 5,
                n_test_pca: 250,
                n_test_pca_rtrl: 10,
            },
            seed: 42,
            flow_grid: FlowGrid {
                sigma_init: vec![0.1, 0.5, 1.0],
                sigma_sub: vec![0.1, 0.5, 1.0],
                sigma_lk: vec![1.0, 2.0, 3.0, 4.0],
                n_layers: vec![1, 2, 3],
                n_iter: vec![1, 2, 3],
            },
            warp: WarpParams::default(),
            dump_frames: false,
        }
    }

    pub fn from_profile(profile: &str) -> Result<Self> {
        match profile {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!(
                "unknown profile '{other}' (expected 'desk' or 'paper')"
            ))),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config serialization failed: {e}")))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    fn uses_rnn_family(&self) -> bool {
        self.methods.iter().any(|m| m.uses_hidden_units())
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_train < 2 || self.m_train >= self.m_cv {
            return Err(Error::Config(format!(
                "need 2 <= m_train < m_cv, got {} and {}",
                self.m_train, self.m_cv
            )));
        }
        if self.m_train_linreg < 2 || self.m_train_linreg >= self.m_cv {
            return Err(Error::Config(format!(
                "need 2 <= m_train_linreg < m_cv, got {} and {}",
                self.m_train_linreg, self.m_cv
            )));
        }
        if self.horizons.is_empty() {
            return Err(Error::Config("no horizons configured".into()));
        }
        for &h in &self.horizons {
            if !(1..=7).contains(&h) {
                return Err(Error::Config(format!("horizon {h} outside 1..=7")));
            }
        }
        if has_duplicates(&self.horizons) {
            return Err(Error::Config("duplicate horizons".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods configured".into()));
        }
        if has_duplicates(&self.methods) {
            return Err(Error::Config("duplicate methods".into()));
        }
        if self.n_cp_range.is_empty() {
            return Err(Error::Config("empty n_cp range".into()));
        }
        if self.n_cp_range[0] == 0 {
            return Err(Error::Config("n_cp must be >= 1".into()));
        }
        if !self.n_cp_range.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(
                "n_cp_range must be strictly ascending".into(),
            ));
        }
        if !self.n_cp_range.contains(&self.weight_eval_n_cp) {
            return Err(Error::Config(format!(
                "weight_eval_n_cp {} not in n_cp_range",
                self.weight_eval_n_cp
            )));
        }
        if self.uses_rnn_family() {
            validate_etas("rnn_grid", &self.rnn_grid.etas)?;
            validate_lengths("rnn_grid", &self.rnn_grid.signal_lengths)?;
            if self.rnn_grid.hidden_units.is_empty()
                || self.rnn_grid.hidden_units.contains(&0)
            {
                return Err(Error::Config(
                    "rnn_grid.hidden_units must be nonempty and positive".into(),
                ));
            }
        }
        if self.methods.contains(&Method::Lms) {
            validate_etas("lms_grid", &self.lms_grid.etas)?;
            validate_lengths("lms_grid", &self.lms_grid.signal_lengths)?;
        }
        if self.methods.contains(&Method::Linreg) {
            validate_lengths("linreg_grid", &self.linreg_grid.signal_lengths)?;
        }
        self.runs.validate()?;
        if self.flow_grid.expand().is_empty() {
            return Err(Error::Config("empty flow parameter grid".into()));
        }
        self.warp.validate()?;
        Ok(())
    }
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items
        .iter()
        .enumerate()
        .any(|(i, a)| items[..i].contains(a))
}

fn validate_etas(grid: &str, etas: &[f64]) -> Result<()> {
    if etas.is_empty() {
        return Err(Error::Config(format!("{grid}.etas is empty")));
    }
    if etas.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::Config(format!(
            "{grid}.etas must be positive and finite"
        )));
    }
    Ok(())
}

fn validate_lengths(grid: &str, lengths: &[usize]) -> Result<()> {
    if lengths.is_empty() || lengths.contains(&0) {
        return Err(Error::Config(format!(
            "{grid}.signal_lengths must be nonempty and positive"
        )));
    }
    Ok(())
}
