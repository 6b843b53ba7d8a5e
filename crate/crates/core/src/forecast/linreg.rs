//! Offline multivariate linear regression y = W u, fit once on the
//! training pairs by least squares. Rank-deficient systems get the
//! minimum-norm solution through the pseudo-inverse of the normal matrix.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::linalg::psd_pinv;

use super::{Forecaster, Normalizer, SupervisedPair};

#[derive(Debug, Clone)]
pub struct LinRegModel {
    pub w: Array2<f64>,
}

/// Least-squares fit of W over (normalized) pairs. Minimum-norm when the
/// normal matrix U^T U is singular.
pub fn fit_linear_regression(pairs: &[SupervisedPair]) -> Result<LinRegModel> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput(
            "linear regression needs at least one pair".into(),
        ));
    }
    let n = pairs.len();
    let m1 = pairs[0].input.len();
    let p = pairs[0].target.len();
    let mut u = Array2::zeros((n, m1));
    let mut y = Array2::zeros((n, p));
    for (k, pair) in pairs.iter().enumerate() {
        if pair.input.len() != m1 || pair.target.len() != p {
            return Err(Error::ShapeMismatch {
                expected: format!("pairs of shape ({m1}, {p})"),
                got: format!("({}, {}) at pair {k}", pair.input.len(), pair.target.len()),
            });
        }
        u.row_mut(k).assign(&pair.input);
        y.row_mut(k).assign(&pair.target);
    }
    let gram = u.t().dot(&u);
    let pinv = psd_pinv(&gram, 1e-12)?;
    // W^T = (U^T U)^+ U^T Y, the Moore-Penrose least-squares solution.
    let wt = pinv.dot(&u.t()).dot(&y);
    Ok(LinRegModel { w: wt.t().to_owned() })
}

/// Frozen regression model behind the common forecaster interface.
#[derive(Debug, Clone)]
pub struct LinRegPredictor {
    model: LinRegModel,
    norm: Normalizer,
}

impl LinRegPredictor {
    /// Fits on the given training pairs (original space); normalization is
    /// applied internally with the supplied stats.
    pub fn fit(train_pairs: &[SupervisedPair], norm: Normalizer) -> Result<Self> {
        let normalized: Vec<SupervisedPair> = train_pairs
            .iter()
            .map(|p| SupervisedPair {
                input: norm.input(p.input.view()),
                target: norm.target(p.target.view()),
            })
            .collect();
        let model = fit_linear_regression(&normalized)?;
        Ok(LinRegPredictor { model, norm })
    }

    pub fn model(&self) -> &LinRegModel {
        &self.model
    }
}

impl Forecaster for LinRegPredictor {
    fn step(&mut self, input: ArrayView1<f64>, _target: ArrayView1<f64>) -> Result<Array1<f64>> {
        let u = self.norm.input(input);
        let y = self.model.w.dot(&u);
        Ok(self.norm.output(y.view()))
    }
}
