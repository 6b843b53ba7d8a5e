//! PCA motion model: data matrix construction, spectral fit on the Gram
//! matrix, projection of fields to weights, and reconstruction of fields
//! from weights.
//!
//! Row k of the data matrix X is the DVF at t_k flattened in interleaved
//! order u_x(x1), u_y(x1), u_x(x2), ... The fit decomposes the M x M Gram
//! matrix Y = Xc Xc^T = V Lambda^2 V^T, normalizes the sign of each
//! eigenvector by its first nonzero entry, and builds the weight matrix
//! W = V Lambda and principal-field matrix U = Xc^T V Lambda^{-1}, so that
//! W = Xc U and U^T U = I.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dvf::DisplacementField;
use crate::error::{Error, Result};
use crate::io::{read_dvf, write_dvf};
use crate::linalg::jacobi_eigh;

/// Relative squared-eigenvalue threshold below which components count as
/// numerically null.
const RANK_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct MotionDataMatrix {
    /// m_train x 2|I| flattened fields.
    pub x: Array2<f64>,
    /// Column means of `x`.
    pub mu_x: Array1<f64>,
    /// Centered matrix `x - 1 * mu_x`.
    pub xc: Array2<f64>,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone)]
pub struct MotionModel {
    /// Mean field.
    pub mu: DisplacementField,
    /// Principal fields u_j, unit-norm and mutually orthogonal.
    pub components: Vec<DisplacementField>,
    /// Singular values lambda_1 >= ... >= lambda_n_cp > 0.
    pub eigenvalues: Vec<f64>,
    /// m_train x n_cp training weights W.
    pub train_weights: Array2<f64>,
    pub n_cp: usize,
    pub m_train: usize,
}

pub fn build_data_matrix(fields: &[DisplacementField], m_train: usize) -> Result<MotionDataMatrix> {
    if m_train < 2 {
        return Err(Error::InvalidInput("m_train must be at least 2".into()));
    }
    if fields.len() < m_train {
        return Err(Error::InvalidInput(format!(
            "m_train {m_train} exceeds the {} available fields",
            fields.len()
        )));
    }
    let (h, w) = fields[0].dim();
    let cols = 2 * h * w;
    let mut x = Array2::zeros((m_train, cols));
    for (k, field) in fields[..m_train].iter().enumerate() {
        if field.dim() != (h, w) {
            return Err(Error::ShapeMismatch {
                expected: format!("{h}x{w}"),
                got: format!("{:?} (field {k})", field.dim()),
            });
        }
        let row = field.to_interleaved();
        for (j, v) in row.into_iter().enumerate() {
            x[[k, j]] = v;
        }
    }
    let mu_x = x.sum_axis(ndarray::Axis(0)) / m_train as f64;
    let xc = &x - &mu_x;
    Ok(MotionDataMatrix { x, mu_x, xc, h, w })
}

pub fn fit_motion_model(data: &MotionDataMatrix, n_cp: usize) -> Result<MotionModel> {
    let m = data.x.nrows();
    if n_cp == 0 {
        return Err(Error::InvalidInput("n_cp must be at least 1".into()));
    }
    if n_cp > m {
        return Err(Error::RankExceeded { n_cp, rank: m });
    }
    let gram = data.xc.dot(&data.xc.t());
    let (mut sq, mut vecs) = jacobi_eigh(&gram)?;
    // Round-off can push null eigenvalues slightly negative.
    sq.mapv_inplace(|v| v.max(0.0));

    let rank = sq.iter().filter(|&&v| v > RANK_REL_TOL * sq[0]).count();
    if n_cp > rank {
        return Err(Error::RankExceeded { n_cp, rank });
    }

    // Sign rule: make the first nonzero entry of each eigenvector positive.
    for j in 0..n_cp {
        let col = vecs.column(j);
        if let Some(first) = col.iter().find(|v| **v != 0.0) {
            if *first < 0.0 {
                for k in 0..m {
                    vecs[[k, j]] = -vecs[[k, j]];
                }
            }
        }
    }

    let lambdas: Vec<f64> = (0..n_cp).map(|j| sq[j].sqrt()).collect();
    let mut train_weights = Array2::zeros((m, n_cp));
    for j in 0..n_cp {
        for k in 0..m {
            train_weights[[k, j]] = vecs[[k, j]] * lambdas[j];
        }
    }

    // U = Xc^T V Lambda^{-1}, one column per kept component.
    let cols = data.xc.ncols();
    let mut components = Vec::with_capacity(n_cp);
    for j in 0..n_cp {
        let mut u = vec![0.0; cols];
        for k in 0..m {
            let coeff = vecs[[k, j]] / lambdas[j];
            if coeff == 0.0 {
                continue;
            }
            let row = data.xc.row(k);
            for (ui, xi) in u.iter_mut().zip(row.iter()) {
                *ui += coeff * xi;
            }
        }
        components.push(DisplacementField::from_interleaved(&u, data.h, data.w)?);
    }

    let mu = DisplacementField::from_interleaved(data.mu_x.as_slice().unwrap(), data.h, data.w)?;
    Ok(MotionModel {
        mu,
        components,
        eigenvalues: lambdas,
        train_weights,
        n_cp,
        m_train: m,
    })
}

/// Projects a field onto the model: w_j = <u - mu, u_j>.
pub fn project(model: &MotionModel, field: &DisplacementField) -> Result<Array1<f64>> {
    if field.dim() != model.mu.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", model.mu.dim()),
            got: format!("{:?}", field.dim()),
        });
    }
    let mut w = Array1::zeros(model.n_cp);
    for (j, comp) in model.components.iter().enumerate() {
        let mut acc = 0.0;
        for ((f, m), u) in field
            .u_x
            .iter()
            .zip(model.mu.u_x.iter())
            .zip(comp.u_x.iter())
        {
            acc += (f - m) * u;
        }
        for ((f, m), u) in field
            .u_y
            .iter()
            .zip(model.mu.u_y.iter())
            .zip(comp.u_y.iter())
        {
            acc += (f - m) * u;
        }
        w[j] = acc;
    }
    Ok(w)
}

/// Reconstructs mu + sum_j w_j u_j.
pub fn reconstruct(model: &MotionModel, weights: &[f64]) -> Result<DisplacementField> {
    if weights.len() != model.n_cp {
        return Err(Error::InvalidInput(format!(
            "expected {} weights, got {}",
            model.n_cp,
            weights.len()
        )));
    }
    let mut out = model.mu.clone();
    for (wj, comp) in weights.iter().zip(&model.components) {
        out.u_x.scaled_add(*wj, &comp.u_x);
        out.u_y.scaled_add(*wj, &comp.u_y);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct ModelSidecar {
    eigenvalues: Vec<f64>,
    n_cp: usize,
    m_train: usize,
}

/// Persists the model: mean and components as DVF1 files, eigenvalues and
/// sizes in a JSON sidecar, training weights as CSV (rows = time).
pub fn save_model(model: &MotionModel, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_dvf(&model.mu, &dir.join("mean.dvf"))?;
    for (j, comp) in model.components.iter().enumerate() {
        write_dvf(comp, &dir.join(format!("component_{j:02}.dvf")))?;
    }
    let sidecar = ModelSidecar {
        eigenvalues: model.eigenvalues.clone(),
        n_cp: model.n_cp,
        m_train: model.m_train,
    };
    let sidecar_path = dir.join("model.json");
    let f = File::create(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &sidecar)
        .map_err(|e| Error::format(&sidecar_path, e.to_string()))?;

    let weights_path = dir.join("train_weights.csv");
    let f = File::create(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    let mut wtr = BufWriter::new(f);
    let mut write_weights = || -> std::io::Result<()> {
        let header: Vec<String> = (1..=model.n_cp).map(|j| format!("w_{j}")).collect();
        writeln!(wtr, "{}", header.join(","))?;
        for k in 0..model.train_weights.nrows() {
            let row: Vec<String> = (0..model.n_cp)
                .map(|j| format!("{}", model.train_weights[[k, j]]))
                .collect();
            writeln!(wtr, "{}", row.join(","))?;
        }
        wtr.flush()
    };
    write_weights().map_err(|e| Error::io(&weights_path, e))?;
    Ok(dir.join("model.json"))
}

pub fn load_model(dir: &Path) -> Result<MotionModel> {
    let sidecar_path = dir.join("model.json");
    let f = File::open(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    let sidecar: ModelSidecar = serde_json::from_reader(BufReader::new(f))
        .map_err(|e| Error::format(&sidecar_path, e.to_string()))?;
    let mu = read_dvf(&dir.join("mean.dvf"))?;
    let mut components = Vec::with_capacity(sidecar.n_cp);
    for j in 0..sidecar.n_cp {
        components.push(read_dvf(&dir.join(format!("component_{j:02}.dvf")))?);
    }
    let weights_path = dir.join("train_weights.csv");
    let f = File::open(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&weights_path, e))?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|tok| tok.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::format(&weights_path, format!("line {}: {e}", i + 1)))?);
    }
    if rows.len() != sidecar.m_train {
        return Err(Error::format(
            &weights_path,
            format!("expected {} weight rows, found {}", sidecar.m_train, rows.len()),
        ));
    }
    let mut train_weights = Array2::zeros((rows.len(), sidecar.n_cp));
    for (k, row) in rows.iter().enumerate() {
        if row.len() != sidecar.n_cp {
            return Err(Error::format(&weights_path, "inconsistent column count"));
        }
        for (j, v) in row.iter().enumerate() {
            train_weights[[k, j]] = *v;
        }
    }
    Ok(MotionModel {
        mu,
        components,
        eigenvalues: sidecar.eigenvalues,
        train_weights,
        n_cp: sidecar.n_cp,
        m_train: sidecar.m_train,
    })
}
