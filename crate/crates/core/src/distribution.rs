//! Gaussian window models, closed-form KL divergence, reference-based KL
//! profiles, and the rolling-reference Mahalanobis scorer.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::SlopeVector;

/// Diagonal loading applied before factorizing a covariance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgePolicy {
    /// `max(1e-9, 1e-6 * trace / d)`.
    #[default]
    Auto,
    Fixed(f64),
    Disabled,
}

impl RidgePolicy {
    fn epsilon(&self, cov: &DMatrix<f64>) -> f64 {
        match *self {
            RidgePolicy::Auto => {
                let d = cov.nrows() as f64;
                (1e-6 * cov.trace() / d).max(1e-9)
            }
            RidgePolicy::Fixed(e) => e,
            RidgePolicy::Disabled => 0.0,
        }
    }
}

/// Mean and unbiased covariance of a sample window, with the Cholesky
/// factor of the (possibly ridge-loaded) covariance.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    n: usize,
    ridge: f64,
    chol: Cholesky<f64, Dyn>,
    degenerate: bool,
}

/// Fits a Gaussian with the default ridge policy.
pub fn fit_gaussian<V: AsRef<[f64]>>(samples: &[V]) -> Result<GaussianModel> {
    GaussianModel::fit(samples, RidgePolicy::Auto)
}

impl GaussianModel {
    pub fn fit<V: AsRef<[f64]>>(samples: &[V], ridge: RidgePolicy) -> Result<Self> {
        Self::fit_iter(samples.iter().map(AsRef::as_ref), ridge)
    }

    pub(crate) fn fit_iter<'a>(
        samples: impl Iterator<Item = &'a [f64]> + Clone,
        ridge: RidgePolicy,
    ) -> Result<Self> {
        let n = samples.clone().count();
        if n < 2 {
            return Err(Error::InsufficientData {
                what: "Gaussian fit",
                needed: 2,
                got: n,
            });
        }
        let d = samples.clone().next().map(<[f64]>::len).unwrap_or(0);
        if d == 0 {
            return Err(Error::Schema(
                "Gaussian fit needs at least one dimension".into(),
            ));
        }
        let mut mean = DVector::zeros(d);
        for x in samples.clone() {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("Gaussian fit samples".into()));
            }
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean /= n as f64;

        let mut cov = DMatrix::zeros(d, d);
        for x in samples {
            for i in 0..d {
                let di = x[i] - mean[i];
                for j in i..d {
                    cov[(i, j)] += di * (x[j] - mean[j]);
                }
            }
        }
        cov /= (n - 1) as f64;
        for i in 0..d {
            for j in 0..i {
                cov[(i, j)] = cov[(j, i)];
            }
        }
        Self::from_moments(mean, cov, n, ridge)
    }

    /// Builds a model from a known mean and covariance.
    pub fn from_moments(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        n: usize,
        ridge: RidgePolicy,
    ) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gaussian moments".into()));
        }
        let degenerate = is_degenerate(&cov);
        let eps = ridge.epsilon(&cov);
        let mut reg = cov.clone();
        for i in 0..d {
            reg[(i, i)] += eps;
        }
        let chol = Cholesky::new(reg).ok_or_else(|| Error::Numerical {
            term: "cholesky",
            detail: format!("covariance not positive definite (ridge {eps:e})"),
        })?;
        Ok(Self {
            mean,
            cov,
            n,
            ridge: eps,
            chol,
            degenerate,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Unregularized sample covariance.
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// True when the raw covariance is singular or numerically close to it.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Lower Cholesky factor of the regularized covariance.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// ln det of the regularized covariance.
    pub fn log_det(&self) -> f64 {
        2.0 * self
            .chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>()
    }

    /// Mahalanobis distance of `x` under the regularized covariance.
    pub fn mahalanobis(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let diff = DVector::from_column_slice(x) - &self.mean;
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .ok_or_else(|| Error::Numerical {
                term: "mahalanobis",
                detail: "triangular solve failed".into(),
            })?;
        Ok(z.norm())
    }
}

fn is_degenerate(cov: &DMatrix<f64>) -> bool {
    let d = cov.nrows();
    let scale = cov.trace() / d as f64;
    if scale <= 0.0 {
        return true;
    }
    match Cholesky::new(cov.clone()) {
        None => true,
        Some(c) => c.l_dirty().diagonal().iter().any(|p| p * p < 1e-12 * scale),
    }
}

/// Closed-form `KL(g0 || g1)` between two Gaussians, computed from Cholesky
/// factors. Tiny negative results from rounding are clipped to zero.
pub fn kl_gaussian(g0: &GaussianModel, g1: &GaussianModel) -> Result<f64> {
    let d = g0.dim();
    if g1.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: g1.dim(),
        });
    }
    let l0 = g0.chol.l();
    let l1 = g1.chol.l_dirty();
    let solve = |b: &DMatrix<f64>, term: &'static str| {
        l1.solve_lower_triangular(b)
            .ok_or_else(|| Error::Numerical {
                term,
                detail: "triangular solve failed".into(),
            })
    };
    // tr(S1^-1 S0) = ||L1^-1 L0||_F^2
    let trace = solve(&l0, "trace")?.norm_squared();
    let diff = &g1.mean - &g0.mean;
    let quad = solve(
        &DMatrix::from_column_slice(d, 1, diff.as_slice()),
        "quadratic",
    )?
    .norm_squared();
    let log_ratio = g1.log_det() - g0.log_det();
    for (term, v) in [
        ("trace", trace),
        ("quadratic", quad),
        ("log-determinant", log_ratio),
    ] {
        if !v.is_finite() {
            return Err(Error::Numerical {
                term,
                detail: format!("evaluated to {v}"),
            });
        }
    }
    let kl = 0.5 * (trace - d as f64 + quad + log_ratio);
    if kl < 0.0 {
        if kl >= -1e-9 {
            return Ok(0.0);
        }
        return Err(Error::Numerical {
            term: "kl",
            detail: format!("negative divergence {kl:e}"),
        });
    }
    Ok(kl)
}

/// Argument order for the reference/local comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlOrder {
    /// `KL(reference || local)`
    #[default]
    ReferenceFirst,
    /// `KL(local || reference)`
    LocalFirst,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlProfileParams {
    pub ref_len: usize,
    pub window: usize,
    pub step: usize,
    pub order: KlOrder,
    pub ridge: RidgePolicy,
}

impl Default for KlProfileParams {
    fn default() -> Self {
        Self {
            ref_len: 1600,
            window: 1600,
            step: 1600,
            order: KlOrder::ReferenceFirst,
            ridge: RidgePolicy::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlPoint {
    /// Index of the first vector in the local window.
    pub start_index: usize,
    pub kl: f64,
}

/// KL divergence of each sliding window after the reference block against
/// a Gaussian fit on the first `ref_len` vectors.
pub fn kl_profile<V: AsRef<[f64]>>(stream: &[V], params: &KlProfileParams) -> Result<Vec<KlPoint>> {
    if params.step == 0 {
        return Err(Error::param("step", "must be positive"));
    }
    if params.window < 2 || params.ref_len < 2 {
        return Err(Error::param(
            "window",
            "reference and window need at least 2 vectors",
        ));
    }
    let needed = params.ref_len + params.window;
    if stream.len() < needed {
        return Err(Error::InsufficientData {
            what: "KL profile (ref_len + window)",
            needed,
            got: stream.len(),
        });
    }
    let reference = GaussianModel::fit(&stream[..params.ref_len], params.ridge)?;
    let mut out = Vec::new();
    let mut start = params.ref_len;
    while start + params.window <= stream.len() {
        let local = GaussianModel::fit(&stream[start..start + params.window], params.ridge)?;
        let kl = match params.order {
            KlOrder::ReferenceFirst => kl_gaussian(&reference, &local)?,
            KlOrder::LocalFirst => kl_gaussian(&local, &reference)?,
        };
        out.push(KlPoint {
            start_index: start,
            kl,
        });
        start += params.step;
    }
    Ok(out)
}

/// Mahalanobis distance of one slope vector against the rolling reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorePoint {
    pub score: f64,
    pub window_index: usize,
    pub t_seconds: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreUpdate {
    /// Fewer than d + 2 vectors buffered; the input was stored, not scored.
    Warmup,
    Scored(ScorePoint),
}

/// FIFO of recent slope vectors. Each incoming vector is scored against a
/// Gaussian fit on the buffer, then appended.
#[derive(Debug, Clone)]
pub struct RollingReference {
    capacity: usize,
    buffer: VecDeque<Vec<f64>>,
    ridge: RidgePolicy,
}

pub const DEFAULT_REFERENCE_CAPACITY: usize = 30;

impl Default for RollingReference {
    fn default() -> Self {
        Self::new(DEFAULT_REFERENCE_CAPACITY, RidgePolicy::Auto).expect("valid default")
    }
}

impl RollingReference {
    pub fn new(capacity: usize, ridge: RidgePolicy) -> Result<Self> {
        if capacity < 3 {
            return Err(Error::param("reference_capacity", "must be at least 3"));
        }
        if let RidgePolicy::Fixed(e) = ridge {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::param("ridge", "must be finite and non-negative"));
            }
        }
        Ok(Self {
            capacity,
            buffer: VecDeque::with_capacity(capacity),
            ridge,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn update(&mut self, x: &SlopeVector) -> Result<ScoreUpdate> {
        let d = x.slopes.len();
        if x.slopes.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("slope vector {}", x.window_index)));
        }
        if let Some(first) = self.buffer.front() {
            if first.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    got: d,
                });
            }
        }
        if self.capacity < d + 2 {
            return Err(Error::param(
                "reference_capacity",
                format!("{} is below d + 2 = {}", self.capacity, d + 2),
            ));
        }
        let result = if self.buffer.len() >= d + 2 {
            let model = GaussianModel::fit_iter(self.buffer.iter().map(Vec::as_slice), self.ridge)?;
            ScoreUpdate::Scored(ScorePoint {
                score: model.mahalanobis(&x.slopes)?,
                window_index: x.window_index,
                t_seconds: x.t_seconds,
                degenerate: model.is_degenerate(),
            })
        } else {
            ScoreUpdate::Warmup
        };
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(x.slopes.clone());
        Ok(result)
    }
}

/// Scores a whole slope series, skipping warm-up points.
pub fn score_series(
    slopes: &[SlopeVector],
    capacity: usize,
    ridge: RidgePolicy,
) -> Result<Vec<ScorePoint>> {
    let mut reference = RollingReference::new(capacity, ridge)?;
    let mut out = Vec::with_capacity(slopes.len());
    for s in slopes {
        if let ScoreUpdate::Scored(p) = reference.update(s)? {
            out.push(p);
        }
    }
    Ok(out)
}

pub fn write_score_csv(scores: &[ScorePoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(f);
    let res: std::io::Result<()> = (|| {
        writeln!(out, "window,t_seconds,score,degenerate")?;
        for p in scores {
            writeln!(
                out,
                "{},{:.6},{:?},{}",
                p.window_index,
                p.t_seconds,
                p.score,
                u8::from(p.degenerate)
            )?;
        }
        out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub fn load_score_csv(path: impl AsRef<Path>) -> Result<Vec<ScorePoint>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(f);
    let headers = rdr.headers()?.clone();
    let pos = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.into(),
            })
    };
    let (wc, tc, sc, dc) = (
        pos("window")?,
        pos("t_seconds")?,
        pos("score")?,
        pos("degenerate")?,
    );
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |c: usize| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::Parse {
                row: r + 1,
                column: headers[c].into(),
                value: raw.into(),
            })
        };
        out.push(ScorePoint {
            window_index: parse(wc)? as usize,
            t_seconds: parse(tc)?,
            score: parse(sc)?,
            degenerate: parse(dc)? != 0.0,
        });
    }
    Ok(out)
}

pub fn write_kl_csv(points: &[(KlPoint, f64)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(f);
    let res: std::io::Result<()> = (|| {
        writeln!(out, "window_start_index,t_seconds,kl")?;
        for (p, t) in points {
            writeln!(out, "{},{:.6},{:?}", p.start_index, t, p.kl)?;
        }
        out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}
