//! Small dense linear-algebra and distribution helpers shared across modules.

use nalgebra::DMatrix;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation with the `n - 1` denominator.
pub fn sample_sd(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Pearson correlation; `None` when either vector is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let ma = mean(a);
    let mb = mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided normal p-value `2 Φ(-|z|)`.
pub fn two_sided_normal_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Upper tail of the χ²₁ distribution.
pub fn chi2_1_upper(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    erfc((t / 2.0).sqrt())
}

pub fn column(m: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[j * n..(j + 1) * n]
}

pub fn check_finite(x: &[f64], what: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Orthonormal basis of a column space, built by modified Gram–Schmidt.
///
/// Columns that are (numerically) inside the span of earlier columns are
/// skipped and reported in `dependent`.
pub struct OrthoBasis {
    q: Vec<Vec<f64>>,
    pub dependent: Vec<usize>,
}

impl OrthoBasis {
    pub fn from_columns<'a>(cols: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut q: Vec<Vec<f64>> = Vec::new();
        let mut dependent = Vec::new();
        for (j, col) in cols.into_iter().enumerate() {
            let norm0 = dot(col, col).sqrt();
            let mut v = col.to_vec();
            // two passes for numerical orthogonality
            for _ in 0..2 {
                for b in &q {
                    let c = dot(b, &v);
                    for (vi, bi) in v.iter_mut().zip(b) {
                        *vi -= c * bi;
                    }
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm0 == 0.0 || norm <= 1e-10 * norm0.max(1.0) {
                dependent.push(j);
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            q.push(v);
        }
        OrthoBasis { q, dependent }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self::from_columns((0..m.ncols()).map(|j| column(m, j)))
    }

    pub fn rank(&self) -> usize {
        self.q.len()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.q
    }

    /// Residual of `v` after projection onto the basis.
    pub fn residualize(&self, v: &[f64]) -> Vec<f64> {
        let mut r = v.to_vec();
        for _ in 0..2 {
            for b in &self.q {
                let c = dot(b, &r);
                for (ri, bi) in r.iter_mut().zip(b) {
                    *ri -= c * bi;
                }
            }
        }
        r
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fails with the indices of columns that are linearly dependent on earlier ones.
pub fn check_full_column_rank(m: &DMatrix<f64>) -> Result<()> {
    let basis = OrthoBasis::from_matrix(m);
    if basis.dependent.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficient {
            columns: basis.dependent,
        })
    }
}

/// Largest canonical correlation between the column spans of `a` and `b`.
///
/// Columns are centred first; an empty or constant set yields 0.
pub fn first_canonical_correlation(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let centre = |v: &Vec<f64>| {
        let m = mean(v);
        v.iter().map(|x| x - m).collect::<Vec<_>>()
    };
    let ca: Vec<Vec<f64>> = a.iter().map(centre).collect();
    let cb: Vec<Vec<f64>> = b.iter().map(centre).collect();
    let qa = OrthoBasis::from_columns(ca.iter().map(|v| v.as_slice()));
    let qb = OrthoBasis::from_columns(cb.iter().map(|v| v.as_slice()));
    if qa.rank() == 0 || qb.rank() == 0 {
        return 0.0;
    }
    let cross = DMatrix::from_fn(qa.rank(), qb.rank(), |i, j| dot(&qa.q[i], &qb.q[j]));
    let sv = cross.singular_values();
    sv.iter().cloned().fold(0.0, f64::max).min(1.0)
}
