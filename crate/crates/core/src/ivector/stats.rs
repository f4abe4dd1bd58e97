//! Zeroth- and first-order Baum-Welch statistics against a UBM.

use nalgebra::DMatrix;

use crate::corpus::Frames;
use crate::error::{Error, Result};
use crate::par;

use super::ubm::GmmUbm;

#[derive(Debug, Clone, PartialEq)]
pub struct BaumWelchStats {
    /// `N_k = sum_t gamma_t(k)`
    pub zeroth: Vec<f64>,
    /// `F_k = sum_t gamma_t(k) (x_t - m_k)`, one row per component.
    pub first: DMatrix<f64>,
}

impl BaumWelchStats {
    pub fn zeros(components: usize, dim: usize) -> Self {
        BaumWelchStats {
            zeroth: vec![0.0; components],
            first: DMatrix::zeros(components, dim),
        }
    }

    pub fn components(&self) -> usize {
        self.zeroth.len()
    }

    pub fn dim(&self) -> usize {
        self.first.ncols()
    }

    pub fn total_occupancy(&self) -> f64 {
        self.zeroth.iter().sum()
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if self.zeroth.iter().chain(self.first.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Baum-Welch statistics"));
        }
        Ok(())
    }
}

pub fn accumulate_stats(ubm: &GmmUbm, frames: &Frames) -> Result<BaumWelchStats> {
    if frames.width() != ubm.dim() {
        return Err(Error::DimensionMismatch {
            expected: ubm.dim(),
            found: frames.width(),
        });
    }
    let (k, f) = (ubm.components(), ubm.dim());
    let mut stats = BaumWelchStats::zeros(k, f);
    let mut post = vec![0.0; k];
    for x in frames.rows() {
        ubm.posteriors(x, &mut post);
        for (c, &g) in post.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            stats.zeroth[c] += g;
            for d in 0..f {
                stats.first[(c, d)] += g * (x[d] - ubm.means()[(c, d)]);
            }
        }
    }
    Ok(stats)
}

/// Statistics for many utterances, in input order.
pub fn accumulate_all(ubm: &GmmUbm, utterances: &[&Frames]) -> Result<Vec<BaumWelchStats>> {
    par::map(utterances, |f| accumulate_stats(ubm, f)).into_iter().collect()
}
