//! Coregionalization matrices `B = W Wᵀ + diag(κ)` and the separable kernel
//! `k(s, s') · D[d, d'] · C[j, j'] · G[g, g']` built from them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::PeriodicKernel;

/// Low-rank-plus-diagonal PSD matrix over the values of one discrete level
/// (coordinates, curves or groups).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CoregRecord", into = "CoregRecord")]
pub struct CoregMatrix {
    w: DMatrix<f64>,
    kappa: DVector<f64>,
    b: DMatrix<f64>,
}

impl CoregMatrix {
    pub fn new(w: DMatrix<f64>, kappa: DVector<f64>) -> Result<Self> {
        let m = w.nrows();
        if m == 0 || w.ncols() == 0 {
            return Err(Error::Dimension("coregionalization W must be non-empty".into()));
        }
        if kappa.len() != m {
            return Err(Error::Dimension(format!(
                "W has {m} rows but kappa has {} entries",
                kappa.len()
            )));
        }
        if w.ncols() > m {
            return Err(Error::Dimension(format!(
                "rank {} exceeds level size {m}",
                w.ncols()
            )));
        }
        if let Some(k) = kappa.iter().find(|k| !(**k >= 0.0 && k.is_finite())) {
            return Err(Error::InvalidHyperparameters(format!(
                "kappa entries must be nonnegative, got {k}"
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidHyperparameters("W must be finite".into()));
        }
        let mut b = &w * w.transpose();
        for i in 0..m {
            b[(i, i)] += kappa[i];
        }
        // exact symmetry regardless of summation order
        let b = (&b + b.transpose()) * 0.5;
        Ok(Self { w, kappa, b })
    }

    /// `B = I`: independent, unit-variance levels.
    pub fn identity(m: usize) -> Self {
        Self::new(DMatrix::zeros(m, 1), DVector::from_element(m, 1.0)).expect("valid identity")
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn kappa(&self) -> &DVector<f64> {
        &self.kappa
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.b[(i, j)]
    }

    /// `B[i, j] / sqrt(B[i, i] B[j, j])`.
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.b[(i, j)] / (self.b[(i, i)] * self.b[(j, j)]).sqrt()
    }
}

#[derive(Serialize, Deserialize)]
struct CoregRecord {
    dim: usize,
    rank: usize,
    /// Row-major `dim × rank`.
    w: Vec<f64>,
    kappa: Vec<f64>,
}

impl From<CoregMatrix> for CoregRecord {
    fn from(c: CoregMatrix) -> Self {
        let (dim, rank) = c.w.shape();
        let w = (0..dim).flat_map(|i| (0..rank).map(move |j| (i, j))).map(|(i, j)| c.w[(i, j)]).collect();
        CoregRecord {
            dim,
            rank,
            w,
            kappa: c.kappa.iter().copied().collect(),
        }
    }
}

impl TryFrom<CoregRecord> for CoregMatrix {
    type Error = Error;

    fn try_from(r: CoregRecord) -> Result<Self> {
        if r.w.len() != r.dim * r.rank {
            return Err(Error::Dimension(format!(
                "W has {} entries, expected {}x{}",
                r.w.len(),
                r.dim,
                r.rank
            )));
        }
        CoregMatrix::new(
            DMatrix::from_row_slice(r.dim, r.rank, &r.w),
            DVector::from_vec(r.kappa),
        )
    }
}

/// One scalar observation site: arc parameter, coordinate, curve and group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub s: f64,
    pub coord: usize,
    pub curve: usize,
    pub group: usize,
}

impl Site {
    pub fn new(s: f64, coord: usize, curve: usize, group: usize) -> Self {
        Self { s, coord, curve, group }
    }
}

/// Separable kernel over (arc parameter, coordinate, curve, group). Absent
/// levels contribute a factor of one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLevelKernel {
    pub input: PeriodicKernel,
    #[serde(rename = "D")]
    pub coords: CoregMatrix,
    #[serde(rename = "C")]
    pub curves: Option<CoregMatrix>,
    #[serde(rename = "G")]
    pub groups: Option<CoregMatrix>,
}

impl MultiLevelKernel {
    /// Independent coordinates, no curve or group levels.
    pub fn separate(input: PeriodicKernel) -> Self {
        Self {
            input,
            coords: CoregMatrix::identity(2),
            curves: None,
            groups: None,
        }
    }

    /// Indices of absent levels are ignored: every value shares one factor.
    pub fn check_site(&self, site: &Site) -> Result<()> {
        let check = |name: &str, idx: usize, level: Option<&CoregMatrix>| match level {
            Some(m) if idx >= m.dim() => Err(Error::Dimension(format!(
                "{name} index {idx} out of range for level of size {}",
                m.dim()
            ))),
            _ => Ok(()),
        };
        check("coordinate", site.coord, Some(&self.coords))?;
        check("curve", site.curve, self.curves.as_ref())?;
        check("group", site.group, self.groups.as_ref())
    }

    /// Product of the discrete-level factors for a pair of sites.
    pub fn level_factor(&self, a: &Site, b: &Site) -> f64 {
        let mut f = self.coords.get(a.coord, b.coord);
        if let Some(c) = &self.curves {
            f *= c.get(a.curve, b.curve);
        }
        if let Some(g) = &self.groups {
            f *= g.get(a.group, b.group);
        }
        f
    }

    pub fn eval(&self, a: &Site, b: &Site) -> Result<f64> {
        self.check_site(a)?;
        self.check_site(b)?;
        Ok(self.input.eval(a.s, b.s) * self.level_factor(a, b))
    }

    /// Covariance including the constant jitter kernel `c` added to the
    /// input kernel. Sites are assumed valid.
    pub(crate) fn eval_unchecked(&self, a: &Site, b: &Site, constant: f64) -> f64 {
        (self.input.eval(a.s, b.s) + constant) * self.level_factor(a, b)
    }
}
