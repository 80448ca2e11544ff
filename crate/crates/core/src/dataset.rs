//! Labelled class-partitioned data, class statistics, barycentric
//! coordinates, the clustered-data check, the sequential linear
//! separability search and synthetic generators.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::min_enclosing_aperture;
use crate::numlin::{pinv, rank, Mat, Permutation, Tolerance, Vector};

/// Class `j` holds the columns of `classes[j]` (an `M × N_j` matrix) and
/// targets column `j` of `labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub ambient_dim: usize,
    pub classes: Vec<Mat>,
    pub labels: Mat,
}

impl LabeledDataset {
    pub fn new(ambient_dim: usize, classes: Vec<Mat>, labels: Mat) -> Result<Self> {
        let q = classes.len();
        if q == 0 {
            return Err(Error::InvalidInput("dataset has no classes".into()));
        }
        if ambient_dim == 0 || q > ambient_dim {
            return Err(Error::InvalidInput(format!(
                "need 1 <= Q <= M, got Q = {q}, M = {ambient_dim}"
            )));
        }
        for (j, c) in classes.iter().enumerate() {
            if c.nrows() != ambient_dim {
                return Err(Error::DimensionMismatch(format!(
                    "class {j} points have dimension {}, expected {ambient_dim}",
                    c.nrows()
                )));
            }
            if c.ncols() == 0 {
                return Err(Error::InvalidInput(format!("class {j} is empty")));
            }
            if !c.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidInput(format!("class {j} has non-finite points")));
            }
        }
        if labels.shape() != (q, q) {
            return Err(Error::DimensionMismatch(format!(
                "labels are {:?}, expected {q}x{q}",
                labels.shape()
            )));
        }
        if rank(&labels, &Tolerance::default())? != q {
            return Err(Error::Rank("label matrix must have rank Q".into()));
        }
        Ok(Self { ambient_dim, classes, labels })
    }

    /// Dataset with standard basis labels.
    pub fn with_identity_labels(ambient_dim: usize, classes: Vec<Mat>) -> Result<Self> {
        let q = classes.len();
        Self::new(ambient_dim, classes, Mat::identity(q, q))
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.ncols()).collect()
    }

    pub fn point_count(&self) -> usize {
        self.classes.iter().map(|c| c.ncols()).sum()
    }

    /// All points side by side, class by class.
    pub fn x0(&self) -> Mat {
        let mut out = Mat::zeros(self.ambient_dim, self.point_count());
        let mut col = 0;
        for c in &self.classes {
            out.columns_mut(col, c.ncols()).copy_from(c);
            col += c.ncols();
        }
        out
    }

    /// Label matrix repeated per point, aligned with [`Self::x0`].
    pub fn y_ext(&self) -> Mat {
        let q = self.class_count();
        let mut out = Mat::zeros(q, self.point_count());
        let mut col = 0;
        for (j, c) in self.classes.iter().enumerate() {
            for _ in 0..c.ncols() {
                out.set_column(col, &self.labels.column(j));
                col += 1;
            }
        }
        out
    }

    pub fn points(&self) -> impl Iterator<Item = Vector> + '_ {
        self.classes.iter().flat_map(|c| c.column_iter().map(|x| x.into_owned()))
    }

    /// Largest distance between two points.
    pub fn diameter(&self) -> f64 {
        let x = self.x0();
        let m = x.nrows();
        let data = x.as_slice();
        let n = x.ncols();
        let mut best: f64 = 0.0;
        for i in 0..n {
            let a = &data[i * m..(i + 1) * m];
            for k in (i + 1)..n {
                let b = &data[k * m..(k + 1) * m];
                let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
                best = best.max(d2);
            }
        }
        best.sqrt()
    }

    /// Applies `f` to every point, keeping labels.
    pub fn map_points(&self, f: impl Fn(&Vector) -> Vector) -> Result<Self> {
        let classes: Vec<Mat> = self
            .classes
            .iter()
            .map(|c| {
                let cols: Vec<Vector> = c.column_iter().map(|x| f(&x.into_owned())).collect();
                Mat::from_columns(&cols)
            })
            .collect();
        let dim = classes[0].nrows();
        Self::new(dim, classes, self.labels.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub means: Vec<Vector>,
    pub deviations: Vec<Mat>,
    pub delta: f64,
    pub barycenter: Vector,
    pub directions: Vec<Vector>,
    pub mean_dists: Vec<f64>,
}

pub fn class_stats(ds: &LabeledDataset) -> Result<ClassStats> {
    let q = ds.class_count();
    let means: Vec<Vector> = ds
        .classes
        .iter()
        .map(|c| c.column_sum() / c.ncols() as f64)
        .collect();
    let deviations: Vec<Mat> = ds
        .classes
        .iter()
        .zip(&means)
        .map(|(c, m)| {
            let mut d = c.clone();
            for mut col in d.column_iter_mut() {
                col -= m;
            }
            d
        })
        .collect();
    let delta = deviations
        .iter()
        .flat_map(|d| d.column_iter().map(|c| c.norm()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    let barycenter = means.iter().fold(Vector::zeros(ds.ambient_dim), |a, m| a + m) / q as f64;
    let scale = means.iter().map(|m| m.norm()).fold(1.0, f64::max);
    let mut directions = Vec::with_capacity(q);
    let mut mean_dists = Vec::with_capacity(q);
    for (j, m) in means.iter().enumerate() {
        let d = &barycenter - m;
        let n = d.norm();
        if n <= 1e-14 * scale {
            return Err(Error::DegenerateDirection(j));
        }
        directions.push(d / n);
        mean_dists.push(n);
    }
    Ok(ClassStats { means, deviations, delta, barycenter, directions, mean_dists })
}

/// Coordinates `x = Σ κ_j x̄_j + x̃` with `x̃` orthogonal to the means.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycentricFrame {
    /// Class means as columns.
    pub basis: Mat,
    /// Orthonormal basis of the complement of the span of the means.
    pub complement: Mat,
    pub complement_projector: Mat,
    basis_pinv: Mat,
}

impl BarycentricFrame {
    pub fn new(means: &[Vector]) -> Result<Self> {
        let basis = Mat::from_columns(means);
        let (m, q) = basis.shape();
        let tol = Tolerance::default();
        if rank(&basis, &tol)? != q {
            return Err(Error::Rank("class means are linearly dependent".into()));
        }
        let basis_pinv = pinv(&basis, &tol)?;
        let complement_projector = Mat::identity(m, m) - &basis * &basis_pinv;
        let span = orthonormal_span(&basis);
        let complement = orthonormal_complement(&span);
        Ok(Self { basis, complement, complement_projector, basis_pinv })
    }

    pub fn class_count(&self) -> usize {
        self.basis.ncols()
    }

    /// `(κ, coordinates of x̃)` stacked into one vector of length `M`.
    pub fn forward(&self, x: &Vector) -> Vector {
        let kappa = &self.basis_pinv * x;
        let rest = self.complement.transpose() * (x - &self.basis * &kappa);
        Vector::from_iterator(x.len(), kappa.iter().chain(rest.iter()).cloned())
    }

    pub fn backward(&self, y: &Vector) -> Vector {
        let q = self.class_count();
        let kappa = y.rows(0, q);
        let rest = y.rows(q, y.len() - q);
        &self.basis * kappa + &self.complement * rest
    }
}

/// Orthonormal basis (columns) of the column span of a full-column-rank `a`.
pub fn orthonormal_span(a: &Mat) -> Mat {
    let mut cols: Vec<Vector> = Vec::with_capacity(a.ncols());
    for c in a.column_iter() {
        let mut v = c.into_owned();
        for _ in 0..2 {
            for u in &cols {
                v -= u * u.dot(&v);
            }
        }
        cols.push(v.normalize());
    }
    if cols.is_empty() {
        return Mat::zeros(a.nrows(), 0);
    }
    Mat::from_columns(&cols)
}

/// Orthonormal basis of the orthogonal complement of the orthonormal
/// columns of `span`, completed from the standard basis in index order.
pub fn orthonormal_complement(span: &Mat) -> Mat {
    let m = span.nrows();
    let mut all: Vec<Vector> = span.column_iter().map(|c| c.into_owned()).collect();
    let k0 = all.len();
    for i in 0..m {
        if all.len() == m {
            break;
        }
        let mut v = Vector::zeros(m);
        v[i] = 1.0;
        for _ in 0..2 {
            for u in &all {
                v -= u * u.dot(&v);
            }
        }
        let n = v.norm();
        if n > 1e-6 {
            all.push(v / n);
        }
    }
    if all.len() == k0 {
        return Mat::zeros(m, 0);
    }
    Mat::from_columns(&all[k0..])
}

pub fn to_barycentric(ds: &LabeledDataset) -> Result<(LabeledDataset, BarycentricFrame)> {
    let stats_means: Vec<Vector> = ds
        .classes
        .iter()
        .map(|c| c.column_sum() / c.ncols() as f64)
        .collect();
    let frame = BarycentricFrame::new(&stats_means)?;
    let out = ds.map_points(|x| frame.forward(x))?;
    Ok((out, frame))
}

pub const REASON_RADIUS: &str = "clustered-radius";
pub const REASON_APERTURE: &str = "clustered-aperture";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub delta: f64,
    pub c0: f64,
    pub min_mean_dist: f64,
    pub theta_star_j: Vec<f64>,
    pub theta_star: f64,
    pub passes: bool,
    pub failure_reasons: Vec<String>,
}

/// Checks `δ < c₀ · min_j |x̄_j − x̄|` and that, for each class, a cone at
/// `x̄_j` around `f_j` narrower than π holds the `4δ`-balls about all other
/// means.
pub fn check_clustered(ds: &LabeledDataset, c0: f64) -> Result<ClusterReport> {
    if !(c0 > 0.0 && c0 < 0.25) {
        return Err(Error::InvalidInput(format!("c0 must lie in (0, 1/4), got {c0}")));
    }
    let st = class_stats(ds)?;
    let min_mean_dist = st.mean_dists.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut reasons = Vec::new();
    if st.delta >= c0 * min_mean_dist {
        reasons.push(format!(
            "{REASON_RADIUS}: delta {:.6e} >= c0 * min mean distance {:.6e}",
            st.delta,
            c0 * min_mean_dist
        ));
    }
    let mut theta_star_j = Vec::with_capacity(ds.class_count());
    for j in 0..ds.class_count() {
        let others: Vec<Vector> = (0..ds.class_count())
            .filter(|&i| i != j)
            .map(|i| st.means[i].clone())
            .collect();
        let t = match min_enclosing_aperture(&st.means[j], &st.directions[j], &others, 4.0 * st.delta) {
            Ok(t) => t.min(PI),
            Err(Error::BallTouchesApex { .. }) => PI,
            Err(e) => return Err(e),
        };
        theta_star_j.push(t);
    }
    let max_t = theta_star_j.iter().cloned().fold(0.0, f64::max);
    let theta_star = if max_t < PI { (max_t.max(FRAC_PI_2) + PI) / 2.0 } else { PI };
    if max_t >= PI {
        reasons.push(format!("{REASON_APERTURE}: max class aperture {max_t:.6} is not below pi"));
    }
    Ok(ClusterReport {
        delta: st.delta,
        c0,
        min_mean_dist,
        theta_star_j,
        theta_star,
        passes: reasons.is_empty(),
        failure_reasons: reasons,
    })
}

/// Witness of sequential linear separability. Step `k` handles class
/// `ordering.images()[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SLSCertificate {
    pub ordering: Permutation,
    #[serde(with = "crate::numlin::serde_vectors")]
    pub base_points: Vec<Vector>,
    pub segment_params: Vec<f64>,
    #[serde(with = "crate::numlin::serde_vectors")]
    pub normals: Vec<Vector>,
    pub margins: Vec<f64>,
    pub theta_min: Vec<f64>,
}

impl SLSCertificate {
    pub fn order(&self) -> &[usize] {
        self.ordering.images()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlsSearchOptions {
    /// Required margin; `None` means `1e-6 ×` the data diameter.
    pub min_margin: Option<f64>,
    pub t_grid: Vec<f64>,
    /// Restrict the search to these orderings, tried in the given order.
    pub orderings: Option<Vec<Vec<usize>>>,
    /// Cap on the number of separation problems solved.
    pub max_solves: usize,
}

impl Default for SlsSearchOptions {
    fn default() -> Self {
        Self {
            min_margin: None,
            t_grid: (1..20).map(|k| k as f64 * 0.05).collect(),
            orderings: None,
            max_solves: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingAttempt {
    /// Classes placed so far, ending with the one that could not be separated.
    pub prefix: Vec<usize>,
    pub best_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlsFailureReport {
    pub min_margin: f64,
    pub attempts: Vec<OrderingAttempt>,
    pub budget_exhausted: bool,
}

impl fmt::Display for SlsFailureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no ordering reaches margin {:.3e}", self.min_margin)?;
        if self.budget_exhausted {
            write!(f, " (search budget exhausted)")?;
        }
        for a in &self.attempts {
            write!(f, "; {:?} best margin {:.3e}", a.prefix, a.best_margin)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Step {
    class: usize,
    t: f64,
    p: Vector,
    h: Vector,
    margin: f64,
}

/// Maximizes `m` subject to `⟨x − p, ν⟩ + m ≤ 0` on `behind`,
/// `⟨y − p, ν⟩ − m ≥ 0` on `ahead` and `|ν_i| ≤ 1`. Returns the unit normal
/// and its geometric margin, evaluated directly.
fn separate(behind: &[&Vector], ahead: &[&Vector], p: &Vector) -> Option<(Vector, f64)> {
    let dim = p.len();
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let nu: Vec<_> = (0..dim).map(|_| lp.add_var(0.0, (-1.0, 1.0))).collect();
    let m = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
    for (pts, sign) in [(behind, 1.0), (ahead, -1.0)] {
        for x in pts.iter() {
            let d = *x - p;
            let mut expr: Vec<_> = nu.iter().enumerate().map(|(i, &v)| (v, sign * d[i])).collect();
            expr.push((m, 1.0));
            lp.add_constraint(expr.as_slice(), ComparisonOp::Le, 0.0);
        }
    }
    let outcome = lp.solve().ok()?;
    let sol = outcome.solution()?;
    let v = Vector::from_iterator(dim, nu.iter().map(|&x| sol.var_value(x)));
    let n = v.norm();
    if !(n > 0.0) {
        return None;
    }
    let h = v / n;
    Some((h.clone(), margin_of(&h, behind, ahead, p)))
}

fn margin_of(h: &Vector, behind: &[&Vector], ahead: &[&Vector], p: &Vector) -> f64 {
    let b = behind.iter().map(|x| -(*x - p).dot(h));
    let a = ahead.iter().map(|y| (*y - p).dot(h));
    b.chain(a).fold(f64::INFINITY, f64::min)
}

struct Searcher<'a> {
    ds: &'a LabeledDataset,
    stats: ClassStats,
    points: Vec<Vec<Vector>>,
    t_grid: Vec<f64>,
    min_margin: f64,
    max_solves: usize,
    solves: usize,
    attempts: Vec<OrderingAttempt>,
}

impl<'a> Searcher<'a> {
    fn candidates(&mut self, class: usize, prefix: &[Step], remaining: &[usize]) -> (Vec<Step>, f64) {
        let behind: Vec<&Vector> = self.points[class].iter().collect();
        let earlier: Vec<Vector> = prefix.iter().map(|s| s.p.clone()).collect();
        let mut ahead: Vec<&Vector> = earlier.iter().collect();
        for &r in remaining {
            if r != class {
                ahead.extend(self.points[r].iter());
            }
        }
        let mut found = Vec::new();
        let mut best = f64::NEG_INFINITY;
        for &t in &self.t_grid.clone() {
            if self.solves >= self.max_solves {
                break;
            }
            self.solves += 1;
            let p = &self.stats.barycenter * t + &self.stats.means[class] * (1.0 - t);
            if let Some((h, margin)) = separate(&behind, &ahead, &p) {
                best = best.max(margin);
                if margin >= self.min_margin {
                    found.push(Step { class, t, p, h, margin });
                }
            }
        }
        found.sort_by(|a, b| b.margin.total_cmp(&a.margin));
        let _ = self.ds;
        (found, best)
    }

    fn dfs(&mut self, prefix: &mut Vec<Step>, remaining: &[usize], forced: Option<&[usize]>) -> bool {
        if remaining.is_empty() {
            return true;
        }
        let choices: Vec<usize> = match forced {
            Some(order) => vec![order[prefix.len()]],
            None => remaining.to_vec(),
        };
        for class in choices {
            if self.solves >= self.max_solves {
                return false;
            }
            let (cands, best) = self.candidates(class, prefix, remaining);
            if cands.is_empty() {
                let mut order: Vec<usize> = prefix.iter().map(|s| s.class).collect();
                order.push(class);
                self.attempts.push(OrderingAttempt { prefix: order, best_margin: best });
                continue;
            }
            let rest: Vec<usize> = remaining.iter().cloned().filter(|&r| r != class).collect();
            for c in cands {
                prefix.push(c);
                if self.dfs(prefix, &rest, forced) {
                    return true;
                }
                prefix.pop();
                if self.solves >= self.max_solves {
                    return false;
                }
            }
        }
        false
    }
}

/// Orders classes by decreasing distance of their mean from the barycenter.
pub fn heuristic_order(stats: &ClassStats) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..stats.means.len()).collect();
    idx.sort_by(|&a, &b| stats.mean_dists[b].total_cmp(&stats.mean_dists[a]).then(a.cmp(&b)));
    idx
}

pub fn default_min_margin(ds: &LabeledDataset) -> f64 {
    1e-6 * ds.diameter().max(f64::MIN_POSITIVE)
}

/// Searches orderings, segment points and separating hyperplanes; every
/// certificate returned has been re-verified against all points.
pub fn find_sls_certificate(ds: &LabeledDataset, opts: &SlsSearchOptions) -> Result<SLSCertificate> {
    let q = ds.class_count();
    let tol = Tolerance::default();
    let means = Mat::from_columns(&class_stats(ds)?.means);
    if rank(&means, &tol)? != q {
        return Err(Error::Rank("class means are linearly dependent".into()));
    }
    if opts.t_grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::InvalidInput("segment parameters must lie in (0, 1)".into()));
    }
    let stats = class_stats(ds)?;
    let min_margin = opts.min_margin.unwrap_or_else(|| default_min_margin(ds));
    let points = ds
        .classes
        .iter()
        .map(|c| c.column_iter().map(|x| x.into_owned()).collect())
        .collect();
    let heuristic = heuristic_order(&stats);
    let mut s = Searcher {
        ds,
        stats,
        points,
        t_grid: opts.t_grid.clone(),
        min_margin,
        max_solves: opts.max_solves,
        solves: 0,
        attempts: Vec::new(),
    };
    let forced: Vec<Option<Vec<usize>>> = match &opts.orderings {
        Some(list) => {
            for o in list {
                Permutation::new(o.clone())?;
                if o.len() != q {
                    return Err(Error::InvalidInput(format!("ordering {o:?} has wrong length")));
                }
            }
            list.iter().cloned().map(Some).collect()
        }
        None => vec![None],
    };
    for f in forced {
        let mut prefix = Vec::new();
        if s.dfs(&mut prefix, &heuristic, f.as_deref()) {
            let cert = certificate_from_steps(ds, &s.stats, &prefix)?;
            verify_sls_certificate(ds, &cert)?;
            return Ok(cert);
        }
    }
    Err(Error::NotSeparable(SlsFailureReport {
        min_margin,
        attempts: s.attempts,
        budget_exhausted: s.solves >= s.max_solves,
    }))
}

/// Every ordering of the classes for which a certificate exists.
pub fn admissible_orderings(ds: &LabeledDataset, opts: &SlsSearchOptions) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    for order in all_orderings(ds.class_count()) {
        let o = SlsSearchOptions { orderings: Some(vec![order.clone()]), ..opts.clone() };
        match find_sls_certificate(ds, &o) {
            Ok(_) => out.push(order),
            Err(Error::NotSeparable(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn all_orderings(q: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; q], &mut out);
    out
}

fn step_sets<'a>(
    points: &'a [Vec<Vector>],
    order: &[usize],
    base_points: &'a [Vector],
    k: usize,
) -> (Vec<&'a Vector>, Vec<&'a Vector>) {
    let behind: Vec<&Vector> = points[order[k]].iter().collect();
    let mut ahead: Vec<&Vector> = base_points[..k].iter().collect();
    for &c in &order[k + 1..] {
        ahead.extend(points[c].iter());
    }
    (behind, ahead)
}

/// `θ_min` at step `k`: twice the widest angle of the class about `−h` or
/// of the later points and earlier base points about `+h`.
pub fn sls_theta_min(behind: &[&Vector], ahead: &[&Vector], p: &Vector, h: &Vector) -> Result<f64> {
    let b: Vec<Vector> = behind.iter().map(|x| (*x).clone()).collect();
    let a: Vec<Vector> = ahead.iter().map(|x| (*x).clone()).collect();
    let tb = min_enclosing_aperture(p, &(-h), &b, 0.0)?;
    let ta = min_enclosing_aperture(p, h, &a, 0.0)?;
    Ok(tb.max(ta))
}

fn class_points(ds: &LabeledDataset) -> Vec<Vec<Vector>> {
    ds.classes
        .iter()
        .map(|c| c.column_iter().map(|x| x.into_owned()).collect())
        .collect()
}

fn certificate_from_steps(ds: &LabeledDataset, stats: &ClassStats, steps: &[Step]) -> Result<SLSCertificate> {
    let order: Vec<usize> = steps.iter().map(|s| s.class).collect();
    let base_points: Vec<Vector> = steps.iter().map(|s| s.p.clone()).collect();
    let points = class_points(ds);
    let mut margins = Vec::new();
    let mut theta_min = Vec::new();
    for (k, s) in steps.iter().enumerate() {
        let (behind, ahead) = step_sets(&points, &order, &base_points, k);
        let m = margin_of(&s.h, &behind, &ahead, &s.p);
        margins.push(m * (1.0 - 1e-9));
        theta_min.push(sls_theta_min(&behind, &ahead, &s.p, &s.h)?);
    }
    let _ = stats;
    Ok(SLSCertificate {
        ordering: Permutation::new(order)?,
        base_points,
        segment_params: steps.iter().map(|s| s.t).collect(),
        normals: steps.iter().map(|s| s.h.clone()).collect(),
        margins,
        theta_min,
    })
}

/// Direct check of every certificate inequality on all points.
pub fn verify_sls_certificate(ds: &LabeledDataset, cert: &SLSCertificate) -> Result<()> {
    let q = ds.class_count();
    let order = cert.order();
    let lens = [cert.base_points.len(), cert.segment_params.len(), cert.normals.len(), cert.margins.len(), cert.theta_min.len()];
    if order.len() != q || lens.iter().any(|&l| l != q) {
        return Err(Error::Precondition("certificate does not match the class count".into()));
    }
    let stats = class_stats(ds)?;
    let points = class_points(ds);
    let scale = 1.0 + stats.means.iter().map(|m| m.norm()).fold(stats.barycenter.norm(), f64::max);
    for k in 0..q {
        let c = order[k];
        let t = cert.segment_params[k];
        let (p, h, margin) = (&cert.base_points[k], &cert.normals[k], cert.margins[k]);
        if p.len() != ds.ambient_dim || h.len() != ds.ambient_dim {
            return Err(Error::Precondition(format!("step {k}: wrong vector dimension")));
        }
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Precondition(format!("step {k}: segment parameter {t} outside (0, 1)")));
        }
        let expect = &stats.barycenter * t + &stats.means[c] * (1.0 - t);
        if (p - expect).norm() > 1e-12 * scale {
            return Err(Error::Precondition(format!("step {k}: base point is off its segment")));
        }
        if (h.norm() - 1.0).abs() > 1e-10 {
            return Err(Error::Precondition(format!("step {k}: normal is not a unit vector")));
        }
        if !(margin > 0.0) {
            return Err(Error::Precondition(format!("step {k}: margin {margin} is not positive")));
        }
        let (behind, ahead) = step_sets(&points, order, &cert.base_points, k);
        if let Some(x) = behind.iter().find(|x| (**x - p).dot(h) > -margin) {
            return Err(Error::Precondition(format!(
                "step {k}: class {c} point with signed distance {:.3e} > -{margin:.3e}",
                (*x - p).dot(h)
            )));
        }
        if let Some(y) = ahead.iter().find(|y| (**y - p).dot(h) < margin) {
            return Err(Error::Precondition(format!(
                "step {k}: forward point with signed distance {:.3e} < {margin:.3e}",
                (*y - p).dot(h)
            )));
        }
        let tm = sls_theta_min(&behind, &ahead, p, h)?;
        if !(tm < PI) || (tm - cert.theta_min[k]).abs() > 1e-9 {
            return Err(Error::Precondition(format!(
                "step {k}: recorded minimal aperture {} disagrees with {tm}",
                cert.theta_min[k]
            )));
        }
    }
    Ok(())
}

fn random_frame(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Mat {
    let g = Mat::from_fn(m, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    orthonormal_span(&g)
}

fn unit_ball_point(rng: &mut ChaCha8Rng, dim: usize) -> Vector {
    let dir = Vector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
    let r: f64 = rng.random::<f64>().powf(1.0 / dim as f64);
    dir * r
}

/// Clusters around the vertices of a regular simplex with edge `2D`, offset
/// from the origin so the means are linearly independent, sampled uniformly
/// in balls of radius `spread · D / 16` and recentred so each class mean is
/// exactly its vertex.
pub fn gen_clustered(
    seed: u64,
    m: usize,
    q: usize,
    points_per_class: usize,
    spread: f64,
) -> Result<LabeledDataset> {
    if q < 2 || q > m {
        return Err(Error::InvalidInput(format!("need 2 <= Q <= M, got Q = {q}, M = {m}")));
    }
    if points_per_class == 0 {
        return Err(Error::InvalidInput("points_per_class must be positive".into()));
    }
    if !(spread > 0.0 && spread < 1.0) {
        return Err(Error::InvalidInput(format!("spread must lie in (0, 1), got {spread}")));
    }
    let d = 1.0;
    let c0 = 0.125;
    let radius = spread * c0 * d / 2.0;
    for attempt in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9)));
        let frame = random_frame(&mut rng, m, q);
        let offset = Vector::from_element(q, d / (q as f64).sqrt());
        let vertices: Vec<Vector> = (0..q)
            .map(|j| {
                let mut e = Vector::from_element(q, -1.0 / q as f64);
                e[j] += 1.0;
                &frame * (e * (2f64.sqrt() * d) + &offset)
            })
            .collect();
        let classes: Vec<Mat> = vertices
            .iter()
            .map(|v| {
                let mut pts: Vec<Vector> =
                    (0..points_per_class).map(|_| unit_ball_point(&mut rng, m) * radius).collect();
                let shift = pts.iter().fold(Vector::zeros(m), |a, p| a + p) / points_per_class as f64;
                for p in pts.iter_mut() {
                    *p = &*p - &shift + v;
                }
                Mat::from_columns(&pts)
            })
            .collect();
        let ds = LabeledDataset::with_identity_labels(m, classes)?;
        if check_clustered(&ds, c0)?.passes {
            return Ok(ds);
        }
    }
    Err(Error::Generation("clustered geometry failed after retries".into()))
}

fn bar(rng: &mut ChaCha8Rng, n: usize, center: (f64, f64), half: f64, vertical: bool) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| {
            let a = rng.random_range(-half..=half);
            let w = rng.random_range(-0.05..=0.05);
            if vertical {
                (center.0 + w, center.1 + a)
            } else {
                (center.0 + a, center.1 + w)
            }
        })
        .collect()
}

fn disk(rng: &mut ChaCha8Rng, n: usize, center: (f64, f64), r: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| {
            let ang = rng.random_range(0.0..2.0 * PI);
            let rad = r * rng.random::<f64>().sqrt();
            (center.0 + rad * ang.cos(), center.1 + rad * ang.sin())
        })
        .collect()
}

/// Planar arrangement of a long vertical bar, a long horizontal bar below it
/// and a small disk nested between them, lifted into `ℝ^M` off the origin.
/// The bars must be peeled off outermost first, so for three classes exactly
/// one ordering is separable. Extra classes are small clusters placed along
/// additional orthogonal directions.
pub fn gen_sls(seed: u64, m: usize, q: usize, points_per_class: usize) -> Result<LabeledDataset> {
    if q < 2 || m < q.max(3) {
        return Err(Error::InvalidInput(format!("need Q >= 2 and M >= max(3, Q), got Q = {q}, M = {m}")));
    }
    if points_per_class == 0 {
        return Err(Error::InvalidInput("points_per_class must be positive".into()));
    }
    let opts = SlsSearchOptions::default();
    for attempt in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9)));
        let dims = 3 + q.saturating_sub(3);
        let frame = random_frame(&mut rng, m, dims);
        let lift = |x: f64, y: f64| -> Vector {
            let mut c = Vector::zeros(dims);
            c[0] = x;
            c[1] = y;
            c[2] = 3.0;
            c
        };
        let a_center = (rng.random_range(4.5..5.5), rng.random_range(2.5..3.5));
        let a_half = rng.random_range(4.5..5.5);
        let b_half = rng.random_range(3.5..4.5);
        let c_center = (rng.random_range(-0.3..0.3), rng.random_range(0.9..1.1));
        let c_radius = rng.random_range(0.15..0.3);
        let mut planar = vec![
            bar(&mut rng, points_per_class, a_center, a_half, true),
            bar(&mut rng, points_per_class, (0.0, 0.0), b_half, false),
            disk(&mut rng, points_per_class, c_center, c_radius),
        ];
        planar.truncate(q);
        let mut classes: Vec<Mat> = planar
            .iter()
            .map(|pts| {
                let cols: Vec<Vector> = pts.iter().map(|&(x, y)| &frame * lift(x, y)).collect();
                Mat::from_columns(&cols)
            })
            .collect();
        for k in 3..q {
            let cols: Vec<Vector> = (0..points_per_class)
                .map(|_| {
                    let mut c = lift(0.0, 0.0);
                    c[k] = 6.0;
                    let jitter = unit_ball_point(&mut rng, dims) * 0.2;
                    &frame * (c + jitter)
                })
                .collect();
            classes.push(Mat::from_columns(&cols));
        }
        let ds = LabeledDataset::with_identity_labels(m, classes)?;
        if check_clustered(&ds, 0.125)?.passes {
            continue;
        }
        match find_sls_certificate(&ds, &opts) {
            Ok(_) => return Ok(ds),
            Err(Error::NotSeparable(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Generation("separable geometry failed after retries".into()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Vec<f64>>,
    pub points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
    pub ambient_dim: usize,
    pub classes: Vec<ClassJson>,
}

impl DatasetJson {
    pub fn into_dataset(self) -> Result<LabeledDataset> {
        if let Some(v) = self.version {
            if v != 1 {
                return Err(Error::Version(v));
            }
        }
        let q = self.classes.len();
        let m = self.ambient_dim;
        let mut classes = Vec::with_capacity(q);
        let mut labels = Mat::identity(q, q);
        for (j, c) in self.classes.iter().enumerate() {
            if let Some(l) = &c.label {
                if l.len() != q {
                    return Err(Error::Parse(format!("classes[{j}].label has length {}, expected {q}", l.len())));
                }
                labels.set_column(j, &Vector::from_vec(l.clone()));
            }
            for (i, p) in c.points.iter().enumerate() {
                if p.len() != m {
                    return Err(Error::Parse(format!(
                        "classes[{j}].points[{i}] has length {}, expected {m}",
                        p.len()
                    )));
                }
            }
            classes.push(Mat::from_fn(m, c.points.len(), |r, k| c.points[k][r]));
        }
        LabeledDataset::new(m, classes, labels)
    }
}

impl From<&LabeledDataset> for DatasetJson {
    fn from(ds: &LabeledDataset) -> Self {
        Self {
            version: None,
            ambient_dim: ds.ambient_dim,
            classes: ds
                .classes
                .iter()
                .enumerate()
                .map(|(j, c)| ClassJson {
                    label: Some(ds.labels.column(j).iter().cloned().collect()),
                    points: c.column_iter().map(|x| x.iter().cloned().collect()).collect(),
                })
                .collect(),
        }
    }
}

pub fn dataset_from_json(s: &str) -> Result<LabeledDataset> {
    serde_json::from_str::<DatasetJson>(s)?.into_dataset()
}

pub fn dataset_to_json(ds: &LabeledDataset) -> String {
    serde_json::to_string_pretty(&DatasetJson::from(ds)).expect("dataset serializes")
}
