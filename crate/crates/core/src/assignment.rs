//! Student's-t soft assignments, the sharpened target distribution, the KL
//! clustering objective, the consistency penalty, and their gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{DtcError, Result};

pub const DEFAULT_ALPHA: f64 = 1.0;
const ROW_SUM_TOL: f64 = 1e-9;

/// Cluster centers in embedding space plus the kernel's degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    centers: Array2<f64>,
    alpha: f64,
}

impl Prototypes {
    pub fn new(centers: Array2<f64>, alpha: f64) -> Result<Self> {
        if centers.nrows() == 0 || centers.ncols() == 0 {
            return Err(DtcError::param("prototypes need K >= 1 and dimension >= 1"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(DtcError::param(format!("alpha must be positive, got {alpha}")));
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(DtcError::Validation("prototype centers must be finite".into()));
        }
        Ok(Prototypes { centers, alpha })
    }

    pub fn k(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn centers(&self) -> ArrayView2<'_, f64> {
        self.centers.view()
    }

    pub fn centers_mut(&mut self) -> &mut Array2<f64> {
        &mut self.centers
    }
}

/// Row-stochastic N x K matrix of cluster probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix(Array2<f64>);

impl AssignmentMatrix {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (i, row) in probs.rows().into_iter().enumerate() {
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(DtcError::Validation(format!("row {i} has an entry outside [0, 1]")));
            }
            let s = row.sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(DtcError::Validation(format!("row {i} sums to {s}")));
            }
        }
        Ok(AssignmentMatrix(probs))
    }

    pub(crate) fn from_raw(probs: Array2<f64>) -> Self {
        AssignmentMatrix(probs)
    }

    pub fn probs(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn k(&self) -> usize {
        self.0.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> AssignmentMatrix {
        AssignmentMatrix(self.0.select(Axis(0), rows))
    }

    /// Row argmax, lowest index on ties.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.0
            .rows()
            .into_iter()
            .map(|row| crate::encoder::argmax(row.iter().copied()))
            .collect()
    }

    /// Total probability mass per cluster.
    pub fn cluster_mass(&self) -> Array1<f64> {
        self.0.sum_axis(Axis(0))
    }
}

fn check_dims(embeddings: ArrayView2<f64>, protos: &Prototypes) -> Result<()> {
    if embeddings.ncols() != protos.dim() {
        return Err(DtcError::param(format!(
            "embedding dimension {} does not match prototype dimension {}",
            embeddings.ncols(),
            protos.dim()
        )));
    }
    Ok(())
}

fn squared_distances(embeddings: ArrayView2<f64>, centers: ArrayView2<f64>) -> Array2<f64> {
    let mut dist = Array2::zeros((embeddings.nrows(), centers.nrows()));
    Zip::from(dist.rows_mut())
        .and(embeddings.rows())
        .for_each(|mut out, z| {
            for (o, mu) in out.iter_mut().zip(centers.rows()) {
                *o = z.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
            }
        });
    dist
}

/// p(k|i) proportional to (1 + |z_i - mu_k|^2 / alpha)^(-(alpha+1)/2).
pub fn soft_assign(embeddings: ArrayView2<f64>, protos: &Prototypes) -> Result<AssignmentMatrix> {
    check_dims(embeddings, protos)?;
    let dist = squared_distances(embeddings, protos.centers());
    Ok(kernel_probs(&dist, protos.alpha))
}

fn kernel_probs(dist: &Array2<f64>, alpha: f64) -> AssignmentMatrix {
    let exponent = -(alpha + 1.0) / 2.0;
    let mut probs = dist.mapv(|d| (1.0 + d / alpha).powf(exponent));
    for mut row in probs.rows_mut() {
        let total = row.sum();
        row /= total;
    }
    AssignmentMatrix(probs)
}

/// q(k|i) proportional to p(k|i)^2 / f_k with f_k = sum_i p(k|i).
pub fn target_distribution(p: &AssignmentMatrix) -> Result<AssignmentMatrix> {
    let freq = p.cluster_mass();
    if let Some(k) = freq.iter().position(|&f| !(f > 0.0)) {
        return Err(DtcError::DegenerateCluster(k));
    }
    let mut q = p.0.mapv(|v| v * v);
    q /= &freq;
    for (i, mut row) in q.rows_mut().into_iter().enumerate() {
        let total = row.sum();
        if !(total > 0.0) {
            return Err(DtcError::Validation(format!("row {i} has zero target mass")));
        }
        row /= total;
    }
    Ok(AssignmentMatrix(q))
}

fn check_same_shape(a: &AssignmentMatrix, b: &AssignmentMatrix) -> Result<()> {
    if a.0.dim() != b.0.dim() {
        return Err(DtcError::param(format!(
            "assignment shapes differ: {:?} vs {:?}",
            a.0.dim(),
            b.0.dim()
        )));
    }
    Ok(())
}

/// (1/N) sum_i sum_k q log(q/p); zero-q terms contribute nothing.
pub fn kl_loss(q: &AssignmentMatrix, p: &AssignmentMatrix) -> Result<f64> {
    check_same_shape(q, p)?;
    let n = q.rows().max(1) as f64;
    let mut total = 0.0;
    for (i, (qr, pr)) in q.0.rows().into_iter().zip(p.0.rows()).enumerate() {
        for (k, (&qv, &pv)) in qr.iter().zip(pr).enumerate() {
            if qv > 0.0 {
                if pv <= 0.0 {
                    return Err(DtcError::InfiniteDivergence { row: i, cluster: k });
                }
                total += qv * (qv / pv).ln();
            }
        }
    }
    Ok((total / n).max(0.0))
}

/// Gradients of the KL objective w.r.t. embeddings and centers, with `q`
/// held constant.
pub fn kl_loss_gradients(
    embeddings: ArrayView2<f64>,
    protos: &Prototypes,
    q: &AssignmentMatrix,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_dims(embeddings, protos)?;
    if q.0.dim() != (embeddings.nrows(), protos.k()) {
        return Err(DtcError::param("target shape does not match embeddings x prototypes"));
    }
    let dist = squared_distances(embeddings, protos.centers());
    let p = kernel_probs(&dist, protos.alpha);
    let n = embeddings.nrows().max(1) as f64;
    let grad_logw = (&p.0 - &q.0) / n;
    Ok(backward_log_weights(embeddings, protos, &dist, &grad_logw))
}

/// Backpropagates dL/dp through the normalized Student's-t kernel.
pub fn assignment_backward(
    embeddings: ArrayView2<f64>,
    protos: &Prototypes,
    p: &AssignmentMatrix,
    grad_p: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_dims(embeddings, protos)?;
    if grad_p.dim() != p.0.dim() || p.0.dim() != (embeddings.nrows(), protos.k()) {
        return Err(DtcError::param("gradient shape does not match assignments"));
    }
    let dist = squared_distances(embeddings, protos.centers());
    Ok(backward_log_weights(
        embeddings,
        protos,
        &dist,
        &grad_log_weights(p, grad_p),
    ))
}

/// Chain rule through row normalization: dL/dlog w_ik = p_ik (g_ik - sum_j g_ij p_ij).
pub(crate) fn grad_log_weights(p: &AssignmentMatrix, grad_p: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(p.0.dim());
    Zip::from(out.rows_mut())
        .and(p.0.rows())
        .and(grad_p.rows())
        .for_each(|mut o, pr, gr| {
            let inner: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
            for ((o, &pv), &gv) in o.iter_mut().zip(pr).zip(gr) {
                *o = pv * (gv - inner);
            }
        });
    out
}

pub(crate) fn backward_log_weights(
    embeddings: ArrayView2<f64>,
    protos: &Prototypes,
    dist: &Array2<f64>,
    grad_logw: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let alpha = protos.alpha;
    // d log w / d dist = -(alpha+1) / (2 (alpha + dist)); d dist / d z = 2 (z - mu).
    let coef = Zip::from(grad_logw)
        .and(dist)
        .map_collect(|&g, &d| -g * (alpha + 1.0) / (alpha + d));
    let centers = protos.centers();
    let mut grad_z = Array2::zeros(embeddings.dim());
    let mut grad_mu = Array2::zeros(centers.dim());
    for (i, z) in embeddings.rows().into_iter().enumerate() {
        let mut gz = grad_z.row_mut(i);
        for (k, mu) in centers.rows().into_iter().enumerate() {
            let c = coef[[i, k]];
            if c == 0.0 {
                continue;
            }
            let mut gm = grad_mu.row_mut(k);
            for j in 0..z.len() {
                let term = c * (z[j] - mu[j]);
                gz[j] += term;
                gm[j] -= term;
            }
        }
    }
    (grad_z, grad_mu)
}

/// Mean squared difference over all N*K entries, and its gradient w.r.t. `p`
/// (`p_prime` treated as constant).
pub fn consistency_loss(
    p: &AssignmentMatrix,
    p_prime: &AssignmentMatrix,
) -> Result<(f64, Array2<f64>)> {
    check_same_shape(p, p_prime)?;
    let count = (p.0.len()).max(1) as f64;
    let diff = &p.0 - &p_prime.0;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
    Ok((loss, diff * (2.0 / count)))
}
