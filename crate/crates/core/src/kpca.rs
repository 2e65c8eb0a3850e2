//! Cosine-kernel KPCA and a logistic-regression separability score.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Cosine similarity matrix of a set of row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    k: DMatrix<f64>,
}

impl KernelMatrix {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KpcaModel {
    /// Top eigenvalues of the centered kernel, descending.
    pub eigenvalues: Vec<f64>,
    /// n x m, unit-norm eigenvectors as columns.
    pub components: DMatrix<f64>,
    pub training_norms: Vec<f64>,
}

fn row_norms<V: AsRef<[f64]>>(rows: &[V]) -> Result<Vec<f64>> {
    let d = rows.first().map_or(0, |r| r.as_ref().len());
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("row {i}")));
            }
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::Degenerate(format!("row {i} has zero norm")));
            }
            Ok(n)
        })
        .collect()
}

pub fn cosine_kernel_matrix<V: AsRef<[f64]>>(rows: &[V]) -> Result<KernelMatrix> {
    let norms = row_norms(rows)?;
    let n = rows.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        let a = rows[i].as_ref();
        for j in 0..i {
            let b = rows[j].as_ref();
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let c = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            k[(i, j)] = c;
            k[(j, i)] = c;
        }
    }
    Ok(KernelMatrix { k })
}

/// Double-centers a kernel: `K - 1K - K1 + 1K1` with `1` the matrix of 1/n.
pub fn center_kernel(k: &KernelMatrix) -> DMatrix<f64> {
    let k = &k.k;
    let n = k.nrows();
    if n == 0 {
        return k.clone();
    }
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).sum() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|j| k.column(j).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - col_means[j] + grand)
}

pub const JACOBI_MAX_SWEEPS: usize = 100;
pub const JACOBI_TOLERANCE: f64 = 1e-12;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns. Stops once the off-diagonal Frobenius norm falls below
/// `JACOBI_TOLERANCE` times the matrix norm.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    let mut a = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm();
    let off = |a: &DMatrix<f64>| {
        let mut s = 0.0;
        for j in 0..n {
            for i in 0..j {
                s += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        s.sqrt()
    };
    let mut converged = scale == 0.0 || off(&a) <= JACOBI_TOLERANCE * scale;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::Numerical {
                term: "jacobi eigensolver",
                detail: format!("no convergence after {JACOBI_MAX_SWEEPS} sweeps"),
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
        converged = off(&a) <= JACOBI_TOLERANCE * scale;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((values, vectors))
}

/// Applies the rotation zeroing `a[(p, q)]` to both sides of `a` and
/// accumulates it into `v`.
fn rotate(a: &mut DMatrix<f64>, v: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    let n = a.nrows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Fits KPCA with `m` components and returns the model and the n x m
/// projections `Y[i][c] = sqrt(lambda_c) * v_c[i]`.
pub fn kpca_fit_project<V: AsRef<[f64]>>(
    rows: &[V],
    m: usize,
) -> Result<(KpcaModel, DMatrix<f64>)> {
    if m == 0 {
        return Err(Error::param("components", "must be at least 1"));
    }
    if rows.len() < m + 1 {
        return Err(Error::InsufficientData {
            what: "kpca (n >= components + 1)",
            needed: m + 1,
            got: rows.len(),
        });
    }
    let norms = row_norms(rows)?;
    let centered = center_kernel(&cosine_kernel_matrix(rows)?);
    let (values, vectors) = symmetric_eigen(&centered)?;
    let n = rows.len();
    let mut components = DMatrix::zeros(n, m);
    let mut eigenvalues = Vec::with_capacity(m);
    for c in 0..m {
        let mut col: Vec<f64> = vectors.column(c).iter().copied().collect();
        // largest-magnitude entry positive; first index wins ties
        let pivot = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &x)| {
                if x.abs() > best.1 {
                    (i, x.abs())
                } else {
                    best
                }
            })
            .0;
        if col[pivot] < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        for (r, x) in col.into_iter().enumerate() {
            components[(r, c)] = x;
        }
        // centered kernels are PSD; tiny negatives are rounding
        eigenvalues.push(values[c].max(0.0));
    }
    let y = DMatrix::from_fn(n, m, |r, c| eigenvalues[c].sqrt() * components[(r, c)]);
    Ok((
        KpcaModel {
            eigenvalues,
            components,
            training_norms: norms,
        },
        y,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticParams {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 5000,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Separability {
    pub accuracy: f64,
    /// Bias first, then one weight per column of Y.
    pub weights: Vec<f64>,
}

pub fn separability_score(y: &DMatrix<f64>, labels: &[bool]) -> Result<Separability> {
    separability_with(y, labels, LogisticParams::default())
}

/// Logistic regression by batch gradient descent on mean log-loss plus an
/// L2 penalty on the non-bias weights. Accuracy is measured on the training
/// set with a 0.5 threshold.
pub fn separability_with(
    y: &DMatrix<f64>,
    labels: &[bool],
    params: LogisticParams,
) -> Result<Separability> {
    let (n, m) = y.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if n < 2 {
        return Err(Error::InsufficientData {
            what: "separability score",
            needed: 2,
            got: n,
        });
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::Degenerate(
            "separability needs both classes present".into(),
        ));
    }
    let nf = n as f64;
    let mut w = vec![0.0; m + 1];
    let mut grad = vec![0.0; m + 1];
    for _ in 0..params.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let z = w[0] + (0..m).map(|c| w[c + 1] * y[(i, c)]).sum::<f64>();
            let err = sigmoid(z) - f64::from(u8::from(labels[i]));
            grad[0] += err;
            for c in 0..m {
                grad[c + 1] += err * y[(i, c)];
            }
        }
        w[0] -= params.learning_rate * grad[0] / nf;
        for c in 1..=m {
            w[c] -= params.learning_rate * (grad[c] / nf + params.l2 * w[c]);
        }
    }
    let correct = (0..n)
        .filter(|&i| {
            let z = w[0] + (0..m).map(|c| w[c + 1] * y[(i, c)]).sum::<f64>();
            (z >= 0.0) == labels[i]
        })
        .count();
    Ok(Separability {
        accuracy: correct as f64 / nf,
        weights: w,
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Writes `index,pc1,..,pcm,label`.
pub fn write_projection_csv(
    y: &DMatrix<f64>,
    labels: &[bool],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(f);
    let res: std::io::Result<()> = (|| {
        write!(out, "index")?;
        for c in 0..y.ncols() {
            write!(out, ",pc{}", c + 1)?;
        }
        writeln!(out, ",label")?;
        for i in 0..y.nrows() {
            write!(out, "{i}")?;
            for c in 0..y.ncols() {
                write!(out, ",{:?}", y[(i, c)])?;
            }
            writeln!(out, ",{}", u8::from(labels[i]))?;
        }
        out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}
