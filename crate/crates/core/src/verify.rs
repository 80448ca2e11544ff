//! Cost evaluation, the class-weighted variance/mean split, zero-loss
//! certificates, degeneracy probes and parameter counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::construct::{build_clustered, build_sls, certification_tolerance, ClusteredOptions, SlsOptions};
use crate::dataset::{check_clustered, find_sls_certificate, LabeledDataset, SLSCertificate, SlsSearchOptions};
use crate::error::{Error, Result};
use crate::netcore::{forward, LayerNet};
use crate::numlin::Mat;

fn outputs(net: &LayerNet, ds: &LabeledDataset) -> Result<Mat> {
    if net.input_dim() != ds.ambient_dim || net.output_dim() != ds.class_count() {
        return Err(Error::DimensionMismatch(format!(
            "network maps {} -> {}, data is {} -> {}",
            net.input_dim(),
            net.output_dim(),
            ds.ambient_dim,
            ds.class_count()
        )));
    }
    forward(net, &ds.x0())
}

/// `½ ‖X^(L) − Y^ext‖²`.
pub fn cost(net: &LayerNet, ds: &LabeledDataset) -> Result<f64> {
    let r = outputs(net, ds)? - ds.y_ext();
    Ok(0.5 * r.iter().map(|v| v * v).sum::<f64>())
}

/// `Σ_j (1/N_j) Σ_i |x_{j,i}^(L) − y_j|²`.
pub fn cost_class_weighted(net: &LayerNet, ds: &LabeledDataset) -> Result<f64> {
    let out = outputs(net, ds)?;
    let mut total = 0.0;
    let mut start = 0;
    for (j, c) in ds.classes.iter().enumerate() {
        let n = c.ncols();
        let y = ds.labels.column(j);
        let s: f64 = (0..n).map(|i| (out.column(start + i) - y).norm_squared()).sum();
        total += s / n as f64;
        start += n;
    }
    Ok(total)
}

/// `(Σ_j (1/N_j) Σ_i |Δx_{j,i}^(L)|², Σ_j |x̄_j^(L) − y_j|²)`.
pub fn cost_decomposed(net: &LayerNet, ds: &LabeledDataset) -> Result<(f64, f64)> {
    let out = outputs(net, ds)?;
    let mut variance = 0.0;
    let mut mean = 0.0;
    let mut start = 0;
    for (j, c) in ds.classes.iter().enumerate() {
        let n = c.ncols();
        let block = out.columns(start, n);
        let avg = block.column_sum() / n as f64;
        let v: f64 = block.column_iter().map(|x| (x - &avg).norm_squared()).sum();
        variance += v / n as f64;
        mean += (&avg - ds.labels.column(j)).norm_squared();
        start += n;
    }
    Ok((variance, mean))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroLossCertificate {
    pub cost: f64,
    pub variance_term: f64,
    pub mean_term: f64,
    pub passes: bool,
    pub tolerance: f64,
    /// Largest entrywise residual within each class.
    #[serde(rename = "per_class")]
    pub per_class_residuals: Vec<f64>,
    pub max_entry_residual: f64,
}

pub fn certify(net: &LayerNet, ds: &LabeledDataset, tol: f64) -> Result<ZeroLossCertificate> {
    let out = outputs(net, ds)?;
    let resid = &out - ds.y_ext();
    let mut per_class = Vec::with_capacity(ds.class_count());
    let mut start = 0;
    for c in &ds.classes {
        per_class.push(resid.columns(start, c.ncols()).amax());
        start += c.ncols();
    }
    let max_entry_residual = per_class.iter().cloned().fold(0.0, f64::max);
    let (variance_term, mean_term) = cost_decomposed(net, ds)?;
    Ok(ZeroLossCertificate {
        cost: cost(net, ds)?,
        variance_term,
        mean_term,
        passes: max_entry_residual <= tol,
        tolerance: tol,
        per_class_residuals: per_class,
        max_entry_residual,
    })
}

/// `1e-8 × max(1, diameter)`.
pub fn default_tolerance(ds: &LabeledDataset) -> f64 {
    certification_tolerance(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuilderKind {
    Clustered,
    Sls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeDraw {
    /// `μ_ℓ/δ` per layer (clustered) or `α_ℓ` per layer (separable).
    pub params: Vec<f64>,
    pub passes: bool,
    pub max_entry_residual: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub builder: BuilderKind,
    pub requested: usize,
    pub passed: usize,
    pub draws: Vec<ProbeDraw>,
}

impl ProbeReport {
    pub fn all_pass(&self) -> bool {
        self.passed == self.requested
    }
}

fn open_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    loop {
        let v = rng.random_range(lo..hi);
        if v > lo {
            return v;
        }
    }
}

/// Rebuilds the network `k` times with free parameters drawn independently
/// from their legal open intervals and certifies each result.
pub fn degeneracy_probe(ds: &LabeledDataset, builder: BuilderKind, k: usize, seed: u64) -> Result<ProbeReport> {
    let q = ds.class_count();
    let tol = default_tolerance(ds);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cert: Option<SLSCertificate> = match builder {
        BuilderKind::Clustered => {
            let r = check_clustered(ds, ClusteredOptions::default().c0)?;
            if !r.passes {
                return Err(Error::Precondition(format!(
                    "data is not clustered: {}",
                    r.failure_reasons.join("; ")
                )));
            }
            None
        }
        BuilderKind::Sls => Some(find_sls_certificate(ds, &SlsSearchOptions::default())?),
    };
    let mut draws = Vec::with_capacity(k);
    for _ in 0..k {
        let (params, built) = match builder {
            BuilderKind::Clustered => {
                let params: Vec<f64> = (0..q).map(|_| open_uniform(&mut rng, 2.0, 3.0)).collect();
                let opts = ClusteredOptions { mu_fractions: params.clone(), ..Default::default() };
                (params, build_clustered(ds, &opts))
            }
            BuilderKind::Sls => {
                let params: Vec<f64> = (0..q).map(|_| open_uniform(&mut rng, 0.0, 1.0)).collect();
                let opts = SlsOptions { alphas: params.clone() };
                (params, build_sls(ds, cert.as_ref().expect("certificate found"), &opts))
            }
        };
        let draw = match built.and_then(|(net, _)| certify(&net, ds, tol)) {
            Ok(c) => ProbeDraw {
                params,
                passes: c.passes,
                max_entry_residual: Some(c.max_entry_residual),
                error: None,
            },
            Err(e) => ProbeDraw { params, passes: false, max_entry_residual: None, error: Some(e.to_string()) },
        };
        draws.push(draw);
    }
    let passed = draws.iter().filter(|d| d.passes).count();
    Ok(ProbeReport { builder, requested: k, passed, draws })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: usize,
    pub biases: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub per_layer: Vec<LayerParams>,
    pub weights: usize,
    pub hidden_biases: usize,
    pub output_bias: usize,
    /// Every weight and bias entry.
    pub total: usize,
    pub total_excluding_output_bias: usize,
    /// `Q(M + Q²)` with `M = d₀` and `Q = d_L`.
    pub reference: usize,
}

pub fn count_params(net: &LayerNet) -> ParamCount {
    let per_layer: Vec<LayerParams> = net
        .weights
        .iter()
        .zip(&net.biases)
        .map(|(w, b)| LayerParams { weights: w.len(), biases: b.len() })
        .collect();
    let weights = per_layer.iter().map(|l| l.weights).sum();
    let output_bias = per_layer.last().map_or(0, |l| l.biases);
    let hidden_biases = per_layer.iter().map(|l| l.biases).sum::<usize>() - output_bias;
    let total = weights + hidden_biases + output_bias;
    let m = net.input_dim();
    let q = net.output_dim();
    ParamCount {
        per_layer,
        weights,
        hidden_biases,
        output_bias,
        total,
        total_excluding_output_bias: total - output_bias,
        reference: q * (m + q * q),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_clustered, gen_sls};
    use crate::numlin::Vector;

    fn random_net(rng: &mut ChaCha8Rng, widths: &[usize]) -> LayerNet {
        let ws = widths
            .windows(2)
            .map(|p| Mat::from_fn(p[1], p[0], |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let bs = widths[1..].iter().map(|&d| Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))).collect();
        LayerNet::new(widths.to_vec(), ws, bs).unwrap()
    }

    fn singletons(q: usize) -> LabeledDataset {
        let classes = (0..q)
            .map(|j| {
                let mut e = Vector::zeros(q);
                e[j] = 1.0;
                Mat::from_columns(&[e])
            })
            .collect();
        LabeledDataset::with_identity_labels(q, classes).unwrap()
    }

    #[test]
    fn cost_of_exact_and_zero_nets() {
        let ds = singletons(3);
        let id = LayerNet::new(vec![3, 3], vec![Mat::identity(3, 3)], vec![Vector::zeros(3)]).unwrap();
        assert_eq!(cost(&id, &ds).unwrap(), 0.0);
        let zero = LayerNet::new(vec![3, 3], vec![Mat::zeros(3, 3)], vec![Vector::zeros(3)]).unwrap();
        assert_eq!(cost(&zero, &ds).unwrap(), 1.5);
    }

    #[test]
    fn cost_matches_independent_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ds = gen_clustered(1, 4, 3, 7, 0.5).unwrap();
        let net = random_net(&mut rng, &[4, 5, 3]);
        let out = forward(&net, &ds.x0()).unwrap();
        let mut s = 0.0;
        let mut col = 0;
        for (j, c) in ds.classes.iter().enumerate() {
            for _ in 0..c.ncols() {
                for r in 0..3 {
                    let d = out[(r, col)] - ds.labels[(r, j)];
                    s += d * d;
                }
                col += 1;
            }
        }
        assert!((cost(&net, &ds).unwrap() - 0.5 * s).abs() < 1e-12 * s.max(1.0));
    }

    #[test]
    fn weighted_cost_equals_twice_cost_for_singletons() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ds = singletons(3);
        let net = random_net(&mut rng, &[3, 4, 3]);
        let c = cost(&net, &ds).unwrap();
        assert!((cost_class_weighted(&net, &ds).unwrap() - 2.0 * c).abs() < 1e-12);
    }

    #[test]
    fn decomposition_cases() {
        let ds = LabeledDataset::with_identity_labels(
            2,
            vec![
                Mat::from_columns(&[Vector::from_vec(vec![1.0, 0.5]), Vector::from_vec(vec![1.0, -0.5])]),
                Mat::from_columns(&[Vector::from_vec(vec![0.5, 1.0]), Vector::from_vec(vec![-0.5, 1.0])]),
            ],
        )
        .unwrap();
        let id = LayerNet::new(vec![2, 2], vec![Mat::identity(2, 2)], vec![Vector::zeros(2)]).unwrap();
        let (v, m) = cost_decomposed(&id, &ds).unwrap();
        assert!(v > 0.0 && m.abs() < 1e-15);
        let swap = Mat::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        let wrong = LayerNet::new(vec![2, 2], vec![swap], vec![Vector::from_vec(vec![0.3, 0.3])]).unwrap();
        let (v, m) = cost_decomposed(&wrong, &ds).unwrap();
        assert_eq!(v, 0.0);
        assert!(m > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let ds = gen_clustered(rng.random(), 4, 3, 5, 0.9).unwrap();
            let net = random_net(&mut rng, &[4, 4, 3]);
            let (v, m) = cost_decomposed(&net, &ds).unwrap();
            let direct = cost_class_weighted(&net, &ds).unwrap();
            assert!(((v + m) - direct).abs() <= 1e-10 * direct.max(1e-300));
        }
    }

    #[test]
    fn certify_constructed_and_permuted() {
        let ds = gen_clustered(4, 5, 3, 30, 0.5).unwrap();
        let (net, _) = build_clustered(&ds, &ClusteredOptions::default()).unwrap();
        let c = certify(&net, &ds, default_tolerance(&ds)).unwrap();
        assert!(c.passes);
        assert!(c.variance_term < 1e-9 && c.mean_term < 1e-9);
        let mut labels = ds.labels.clone();
        labels.swap_columns(0, 1);
        let permuted = LabeledDataset::new(ds.ambient_dim, ds.classes.clone(), labels).unwrap();
        let c = certify(&net, &permuted, default_tolerance(&ds)).unwrap();
        assert!(!c.passes && c.mean_term > 0.0);
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"per_class\""));
    }

    #[test]
    fn certify_label_permutation_covariant() {
        let ds = gen_clustered(6, 5, 3, 10, 0.5).unwrap();
        let (net, _) = build_clustered(&ds, &ClusteredOptions::default()).unwrap();
        let perm = [2usize, 0, 1];
        let classes: Vec<Mat> = perm.iter().map(|&j| ds.classes[j].clone()).collect();
        let labels = Mat::from_columns(&perm.iter().map(|&j| ds.labels.column(j).into_owned()).collect::<Vec<_>>());
        let moved = LabeledDataset::new(ds.ambient_dim, classes, labels).unwrap();
        let t = default_tolerance(&ds);
        assert_eq!(certify(&net, &ds, t).unwrap().passes, certify(&net, &moved, t).unwrap().passes);
    }

    #[test]
    fn probes_pass() {
        let ds = gen_clustered(8, 5, 3, 20, 0.5).unwrap();
        let r = degeneracy_probe(&ds, BuilderKind::Clustered, 20, 1).unwrap();
        assert!(r.all_pass(), "{r:?}");
        assert!(r.draws.iter().all(|d| d.params.iter().all(|&p| p > 2.0 && p < 3.0)));
        let ds = gen_sls(8, 4, 3, 20).unwrap();
        let r = degeneracy_probe(&ds, BuilderKind::Sls, 20, 1).unwrap();
        assert!(r.all_pass(), "{r:?}");
        assert!(degeneracy_probe(&ds, BuilderKind::Clustered, 1, 1).is_err());
    }

    #[test]
    fn param_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, q) = (7, 3);
        let mut widths = vec![q; q + 2];
        widths[0] = m;
        let c = count_params(&random_net(&mut rng, &widths));
        assert_eq!(c.total_excluding_output_bias, q * m + q * q * q + q * q);
        assert_eq!(c.total, q * m + q * q * q + q * q + q);
        assert_eq!(c.reference, q * (m + q * q));
        let c = count_params(&random_net(&mut rng, &[m, q]));
        assert_eq!(c.total, q * m + q);
    }
}
