//! Zero-loss constructors. Each hidden layer is a truncation map built from
//! a cone whose backward half swallows one class and whose forward half
//! holds everything else; the last layer maps the collapsed classes onto
//! their labels.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    check_clustered, class_stats, orthonormal_complement, orthonormal_span, sls_theta_min,
    verify_sls_certificate, LabeledDataset, SLSCertificate,
};
use crate::error::{Error, Result};
use crate::geom::{rotation_to_diagonal, w_theta, Cone};
use crate::netcore::{forward, layers_from_cumulative, truncate_with, CumulativeNet, LayerNet};
use crate::numlin::{coordinate_projection, max_abs, pinv, rank, Mat, Tolerance, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredOptions {
    /// Widths `d₀ ≥ d₁ ≥ … ≥ d_Q ≥ Q` with `d₀ = M`; `None` selects
    /// `(M, Q, …, Q)`.
    pub width_schedule: Option<Vec<usize>>,
    /// `μ_ℓ / δ`, one shared value or one per layer, each in `(2, 3)`.
    pub mu_fractions: Vec<f64>,
    pub c0: f64,
}

impl Default for ClusteredOptions {
    fn default() -> Self {
        Self { width_schedule: None, mu_fractions: vec![2.5], c0: 0.125 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlsOptions {
    /// `α` placing `θ_ℓ = θ_ℓ,min + α(π − θ_ℓ,min)`; one shared value or one
    /// per layer, each in `(0, 1)`.
    pub alphas: Vec<f64>,
}

impl Default for SlsOptions {
    fn default() -> Self {
        Self { alphas: vec![0.5] }
    }
}

fn per_layer(values: &[f64], q: usize, lo: f64, hi: f64, name: &str) -> Result<Vec<f64>> {
    let out = match values.len() {
        1 => vec![values[0]; q],
        n if n == q => values.to_vec(),
        n => {
            return Err(Error::InvalidInput(format!("{name}: expected 1 or {q} values, got {n}")));
        }
    };
    if let Some(v) = out.iter().find(|&&v| !(v > lo && v < hi)) {
        return Err(Error::Precondition(format!("{name} value {v} outside ({lo}, {hi})")));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub cone: Cone,
    pub collapsed_class: usize,
    pub weight: Mat,
    pub bias: Vector,
    /// Truncation chain image of every input point, class by class.
    pub snapshot: Mat,
    /// `collapsed[j]` after this step.
    pub collapsed: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstructionTrace {
    pub steps: Vec<TraceStep>,
}

/// SHA-256 of the little-endian bytes of the entries in column-major order.
pub fn snapshot_digest(m: &Mat) -> String {
    let mut h = Sha256::new();
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeJson {
    pub apex: Vec<f64>,
    pub axis: Vec<f64>,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStepJson {
    pub cone: ConeJson,
    pub collapsed_class: usize,
    pub snapshot_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceJson {
    pub steps: Vec<TraceStepJson>,
}

impl TraceJson {
    pub fn cones(&self) -> Result<Vec<Cone>> {
        self.steps
            .iter()
            .map(|s| {
                Cone::new(
                    Vector::from_vec(s.cone.apex.clone()),
                    Vector::from_vec(s.cone.axis.clone()),
                    s.cone.theta,
                )
            })
            .collect()
    }
}

impl From<&ConstructionTrace> for TraceJson {
    fn from(t: &ConstructionTrace) -> Self {
        Self {
            steps: t
                .steps
                .iter()
                .map(|s| TraceStepJson {
                    cone: ConeJson {
                        apex: s.cone.apex.iter().cloned().collect(),
                        axis: s.cone.axis.iter().cloned().collect(),
                        theta: s.cone.aperture,
                    },
                    collapsed_class: s.collapsed_class,
                    snapshot_digest: snapshot_digest(&s.snapshot),
                })
                .collect(),
        }
    }
}

/// `W = Π^n_m W_θ R` with `R h = u_n/|u_n|`, and `b = −W p`.
pub fn build_truncation_layer(cone: &Cone, n: usize, m: usize) -> Result<(Mat, Vector)> {
    if cone.dim() != n {
        return Err(Error::DimensionMismatch(format!("cone lives in dimension {}, expected {n}", cone.dim())));
    }
    if m == 0 || m > n || n < 2 {
        return Err(Error::InvalidInput(format!("need 1 <= m <= n and n >= 2, got n = {n}, m = {m}")));
    }
    if !(cone.aperture < PI) {
        return Err(Error::InvalidInput("a cone of aperture pi has no truncation layer".into()));
    }
    let w = coordinate_projection(n, m) * w_theta(cone.aperture, n)? * rotation_to_diagonal(&cone.axis)?;
    let b = -(&w * &cone.apex);
    Ok((w, b))
}

/// `W = Y · pinv(collapsed means)`, `b = 0`.
pub fn solve_last_layer(collapsed_means: &Mat, y: &Mat) -> Result<(Mat, Vector)> {
    let tol = Tolerance::default();
    let q = collapsed_means.ncols();
    if y.ncols() != q {
        return Err(Error::DimensionMismatch(format!("labels have {} columns, means {q}", y.ncols())));
    }
    if rank(collapsed_means, &tol)? != q {
        return Err(Error::Rank("collapsed class points are linearly dependent".into()));
    }
    let w = y * pinv(collapsed_means, &tol)?;
    let residual = (&w * collapsed_means - y).norm();
    if residual > 1e-9 * y.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::Inconsistency(format!("last layer residual {residual:.3e}")));
    }
    Ok((w, Vector::zeros(y.nrows())))
}

/// Entrywise interpolation tolerance used by both constructors.
pub fn certification_tolerance(ds: &LabeledDataset) -> f64 {
    1e-8 * ds.diameter().max(1.0)
}

fn class_ranges(ds: &LabeledDataset) -> Vec<(usize, usize)> {
    let mut start = 0;
    ds.class_sizes()
        .into_iter()
        .map(|n| {
            let r = (start, n);
            start += n;
            r
        })
        .collect()
}

fn max_col_dev(m: &Mat, target: &Vector) -> f64 {
    m.column_iter().map(|c| (c - target).amax()).fold(0.0, f64::max)
}

/// Builds the hidden cumulative layer, applies it to the snapshot and checks
/// that the collapsing class landed on `P a` while every other column moved
/// to `P x`.
#[allow(clippy::too_many_arguments)]
fn apply_step(
    w: &Mat,
    b: &Vector,
    apex: &Vector,
    snapshot: &Mat,
    ranges: &[(usize, usize)],
    class: usize,
    check_tol: f64,
    tol: &Tolerance,
) -> Result<Mat> {
    let next = truncate_with(w, b, snapshot, tol)?;
    let proj = pinv(w, tol)? * w;
    let (s, n) = ranges[class];
    let target = &proj * apex;
    let dev = max_col_dev(&next.columns(s, n).into_owned(), &target);
    if dev > check_tol {
        return Err(Error::Construction(format!(
            "class {class} did not collapse onto the apex image (deviation {dev:.3e})"
        )));
    }
    let moved = &proj * snapshot;
    for (j, &(s2, n2)) in ranges.iter().enumerate() {
        if j == class {
            continue;
        }
        let d = max_abs(&(next.columns(s2, n2) - moved.columns(s2, n2)));
        if d > check_tol {
            return Err(Error::Construction(format!(
                "class {j} left the forward cone while collapsing class {class} (deviation {d:.3e})"
            )));
        }
    }
    Ok(next)
}

fn finish(
    ds: &LabeledDataset,
    widths: Vec<usize>,
    mut weights: Vec<Mat>,
    mut biases: Vec<Vector>,
    collapsed: &Mat,
    tol: &Tolerance,
) -> Result<LayerNet> {
    let (w, b) = solve_last_layer(collapsed, &ds.labels)?;
    weights.push(w);
    biases.push(b);
    let cnet = CumulativeNet::new(widths, weights, biases, tol)?;
    let net = layers_from_cumulative(&cnet, tol)?;
    let out = forward(&net, &ds.x0())?;
    let err = max_abs(&(out - ds.y_ext()));
    let cert_tol = certification_tolerance(ds);
    if err > cert_tol {
        return Err(Error::Construction(format!(
            "interpolation residual {err:.3e} exceeds {cert_tol:.3e}"
        )));
    }
    Ok(net)
}

fn resolve_widths(opts: &ClusteredOptions, m: usize, q: usize) -> Result<Vec<usize>> {
    let widths = match &opts.width_schedule {
        None => {
            let mut w = vec![q; q + 1];
            w[0] = m;
            w
        }
        Some(w) => w.clone(),
    };
    if widths.len() != q + 1 || widths[0] != m {
        return Err(Error::InvalidInput(format!(
            "width schedule must have {} entries starting with {m}, got {widths:?}",
            q + 1
        )));
    }
    if widths.windows(2).any(|p| p[1] > p[0]) || widths.iter().any(|&d| d < q) {
        return Err(Error::InvalidInput(format!(
            "width schedule {widths:?} must be non-increasing and at least {q}"
        )));
    }
    Ok(widths)
}

/// Network of depth `Q + 1` for clustered data. Layer `ℓ` collapses class
/// `ℓ` with the cone at `x̄_ℓ + μ_ℓ f_ℓ` around `f_ℓ` of aperture `θ_*`.
/// Narrow layers act on nested subspaces that contain every class mean.
pub fn build_clustered(ds: &LabeledDataset, opts: &ClusteredOptions) -> Result<(LayerNet, ConstructionTrace)> {
    let tol = Tolerance::default();
    let report = check_clustered(ds, opts.c0)?;
    if !report.passes {
        return Err(Error::Precondition(format!(
            "data is not clustered: {}",
            report.failure_reasons.join("; ")
        )));
    }
    let q = ds.class_count();
    let m = ds.ambient_dim;
    let fracs = per_layer(&opts.mu_fractions, q, 2.0, 3.0, "mu fraction")?;
    let widths = resolve_widths(opts, m, q)?;
    let st = class_stats(ds)?;
    let min_dist = st.mean_dists.iter().cloned().fold(f64::INFINITY, f64::min);
    let theta = report.theta_star;

    let span = orthonormal_span(&Mat::from_columns(&st.means));
    let complement = orthonormal_complement(&span);

    let ranges = class_ranges(ds);
    let check_tol = 1e-9 * ds.diameter().max(1.0);
    let mut snapshot = ds.x0();
    let mut weights = Vec::with_capacity(q + 1);
    let mut biases = Vec::with_capacity(q + 1);
    let mut trace = ConstructionTrace::default();
    let mut collapsed = Mat::zeros(m, q);
    for l in 0..q {
        let d = widths[l + 1];
        let basis = if d == m {
            Mat::identity(m, m)
        } else {
            let mut rows = span.transpose();
            if d > q {
                rows = rows.insert_rows(q, d - q, 0.0);
                rows.rows_mut(q, d - q).copy_from(&complement.columns(0, d - q).transpose());
            }
            rows
        };
        let mu = if st.delta > 0.0 { fracs[l] * st.delta } else { 0.1 * min_dist };
        let apex = &st.means[l] + &st.directions[l] * mu;
        let local_axis = (&basis * &st.directions[l]).normalize();
        let local = Cone::new(&basis * &apex, local_axis, theta)?;
        let (c, _) = build_truncation_layer(&local, d, d)?;
        let w = c * &basis;
        let b = -(&w * &apex);
        snapshot = apply_step(&w, &b, &apex, &snapshot, &ranges, l, check_tol, &tol)?;
        collapsed.set_column(l, &(pinv(&w, &tol)? * &w * &apex));
        trace.steps.push(TraceStep {
            cone: Cone::new(apex, st.directions[l].clone(), theta)?,
            collapsed_class: l,
            weight: w.clone(),
            bias: b.clone(),
            snapshot: snapshot.clone(),
            collapsed: (0..q).map(|j| j <= l).collect(),
        });
        weights.push(w);
        biases.push(b);
    }
    let mut all_widths = widths;
    all_widths.push(q);
    let net = finish(ds, all_widths, weights, biases, &collapsed, &tol)?;
    Ok((net, trace))
}

/// Network of depth `Q + 1` with square hidden layers for sequentially
/// linearly separable data. Step `k` collapses the certificate's `k`-th class
/// onto `p_k` with a cone around `h_k`.
pub fn build_sls(
    ds: &LabeledDataset,
    cert: &SLSCertificate,
    opts: &SlsOptions,
) -> Result<(LayerNet, ConstructionTrace)> {
    let tol = Tolerance::default();
    verify_sls_certificate(ds, cert).map_err(|e| Error::Precondition(format!("stale certificate: {e}")))?;
    let q = ds.class_count();
    let m = ds.ambient_dim;
    if m < 2 {
        return Err(Error::InvalidInput("ambient dimension must be at least 2".into()));
    }
    let alphas = per_layer(&opts.alphas, q, 0.0, 1.0, "theta alpha")?;
    let order = cert.order().to_vec();
    let ranges = class_ranges(ds);
    let points: Vec<Vec<Vector>> = ds
        .classes
        .iter()
        .map(|c| c.column_iter().map(|x| x.into_owned()).collect())
        .collect();
    let check_tol = 1e-9 * ds.diameter().max(1.0);
    let mut snapshot = ds.x0();
    let mut weights = Vec::with_capacity(q + 1);
    let mut biases = Vec::with_capacity(q + 1);
    let mut trace = ConstructionTrace::default();
    let mut collapsed = Mat::zeros(m, q);
    let mut done = vec![false; q];
    for k in 0..q {
        let class = order[k];
        let (p, h) = (&cert.base_points[k], &cert.normals[k]);
        let behind: Vec<&Vector> = points[class].iter().collect();
        let mut ahead: Vec<&Vector> = cert.base_points[..k].iter().collect();
        for &c in &order[k + 1..] {
            ahead.extend(points[c].iter());
        }
        let theta_min = sls_theta_min(&behind, &ahead, p, h)?;
        if !(theta_min < PI) {
            return Err(Error::InfeasibleCone(format!(
                "step {k}: minimal aperture {theta_min} is not below pi"
            )));
        }
        let theta = theta_min + alphas[k] * (PI - theta_min);
        let cone = Cone::new(p.clone(), h.clone(), theta)?;
        let (w, b) = build_truncation_layer(&cone, m, m)?;
        snapshot = apply_step(&w, &b, p, &snapshot, &ranges, class, check_tol, &tol)?;
        collapsed.set_column(class, p);
        done[class] = true;
        trace.steps.push(TraceStep {
            cone,
            collapsed_class: class,
            weight: w.clone(),
            bias: b.clone(),
            snapshot: snapshot.clone(),
            collapsed: done.clone(),
        });
        weights.push(w);
        biases.push(b);
    }
    let mut widths = vec![m; q + 1];
    widths.push(q);
    let net = finish(ds, widths, weights, biases, &collapsed, &tol)?;
    Ok((net, trace))
}
