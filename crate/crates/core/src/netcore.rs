//! Layerwise and cumulative network parameterizations, the ReLU forward
//! pass, the truncation map `τ_{W,b}(x) = W⁺(σ(Wx + b) − b)` and the
//! projector chain `P^(ℓ) = W^(ℓ)⁺ W^(ℓ) P^(ℓ−1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numlin::{from_rows, max_abs, pinv, rank, to_rows, Mat, Tolerance, Vector};

/// Network `x ↦ W_L σ(… σ(W_1 x + b_1) …) + b_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNet {
    pub widths: Vec<usize>,
    pub weights: Vec<Mat>,
    pub biases: Vec<Vector>,
}

/// Cumulative weights `W^(ℓ) = W_ℓ ⋯ W_1` and biases
/// `b^(ℓ) = W_ℓ b^(ℓ−1) + b_ℓ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeNet {
    pub widths: Vec<usize>,
    pub weights: Vec<Mat>,
    pub biases: Vec<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub p: Mat,
}

fn check_chain(widths: &[usize], weights: &[Mat], biases: &[Vector], cumulative: bool) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::InvalidInput("a network needs at least one layer".into()));
    }
    let l = widths.len() - 1;
    if weights.len() != l || biases.len() != l {
        return Err(Error::DimensionMismatch(format!(
            "{} widths but {} weights and {} biases",
            widths.len(),
            weights.len(),
            biases.len()
        )));
    }
    if widths.contains(&0) {
        return Err(Error::InvalidInput("widths must be positive".into()));
    }
    for k in 0..l {
        let cols = if cumulative { widths[0] } else { widths[k] };
        if weights[k].shape() != (widths[k + 1], cols) {
            return Err(Error::DimensionMismatch(format!(
                "layer {} weight is {:?}, expected {:?}",
                k + 1,
                weights[k].shape(),
                (widths[k + 1], cols)
            )));
        }
        if biases[k].len() != widths[k + 1] {
            return Err(Error::DimensionMismatch(format!("layer {} bias length", k + 1)));
        }
        if !weights[k].iter().chain(biases[k].iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!("layer {} has non-finite entries", k + 1)));
        }
    }
    Ok(())
}

impl LayerNet {
    pub fn new(widths: Vec<usize>, weights: Vec<Mat>, biases: Vec<Vector>) -> Result<Self> {
        check_chain(&widths, &weights, &biases, false)?;
        Ok(Self { widths, weights, biases })
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }
}

impl CumulativeNet {
    /// Validates shapes and that every `W^(ℓ)` is surjective.
    pub fn new(
        widths: Vec<usize>,
        weights: Vec<Mat>,
        biases: Vec<Vector>,
        tol: &Tolerance,
    ) -> Result<Self> {
        check_chain(&widths, &weights, &biases, true)?;
        let net = Self { widths, weights, biases };
        net.check_surjective(tol)?;
        Ok(net)
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn check_surjective(&self, tol: &Tolerance) -> Result<()> {
        for (k, w) in self.weights.iter().enumerate() {
            let r = rank(w, tol)?;
            if r != w.nrows() {
                return Err(Error::Rank(format!(
                    "cumulative weight {} has rank {} < {}",
                    k + 1,
                    r,
                    w.nrows()
                )));
            }
        }
        Ok(())
    }
}

fn relu(m: &Mat) -> Mat {
    m.map(|v| v.max(0.0))
}

fn affine(w: &Mat, b: &Vector, x: &Mat) -> Mat {
    let mut y = w * x;
    for mut col in y.column_iter_mut() {
        col += b;
    }
    y
}

/// Applies `L − 1` ReLU layers and a final affine layer to the columns of `x`.
pub fn forward(net: &LayerNet, x: &Mat) -> Result<Mat> {
    forward_layers(net, x).map(|mut v| v.pop().expect("at least one layer"))
}

/// Every layer output `X^(1), …, X^(L)`.
pub fn forward_layers(net: &LayerNet, x: &Mat) -> Result<Vec<Mat>> {
    if x.nrows() != net.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} rows, network expects {}",
            x.nrows(),
            net.input_dim()
        )));
    }
    let l = net.depth();
    let mut outs = Vec::with_capacity(l);
    let mut cur = x.clone();
    for k in 0..l {
        let z = affine(&net.weights[k], &net.biases[k], &cur);
        cur = if k + 1 < l { relu(&z) } else { z };
        outs.push(cur.clone());
    }
    Ok(outs)
}

/// Truncation map applied to each column of `x`.
pub fn truncate(w: &Mat, b: &Vector, x: &Mat) -> Result<Mat> {
    truncate_with(w, b, x, &Tolerance::default())
}

pub fn truncate_with(w: &Mat, b: &Vector, x: &Mat, tol: &Tolerance) -> Result<Mat> {
    let wp = pinv(w, tol)?;
    truncate_pinv(w, &wp, b, x)
}

fn truncate_pinv(w: &Mat, wp: &Mat, b: &Vector, x: &Mat) -> Result<Mat> {
    if x.nrows() != w.ncols() || b.len() != w.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "truncate: W is {:?}, b has {}, x has {} rows",
            w.shape(),
            b.len(),
            x.nrows()
        )));
    }
    let mut s = relu(&affine(w, b, x));
    for mut col in s.column_iter_mut() {
        col -= b;
    }
    Ok(wp * s)
}

pub fn cumulative_from_layers(net: &LayerNet) -> CumulativeNet {
    let mut weights: Vec<Mat> = Vec::with_capacity(net.depth());
    let mut biases: Vec<Vector> = Vec::with_capacity(net.depth());
    for k in 0..net.depth() {
        let (w, b) = match (weights.last(), biases.last()) {
            (Some(wc), Some(bc)) => (&net.weights[k] * wc, &net.weights[k] * bc + &net.biases[k]),
            _ => (net.weights[k].clone(), net.biases[k].clone()),
        };
        weights.push(w);
        biases.push(b);
    }
    CumulativeNet { widths: net.widths.clone(), weights, biases }
}

/// Inverts the cumulative recursion: `W_ℓ = W^(ℓ) W^(ℓ−1)⁺`,
/// `b_ℓ = b^(ℓ) − W_ℓ b^(ℓ−1)`, then checks the round trip.
pub fn layers_from_cumulative(cnet: &CumulativeNet, tol: &Tolerance) -> Result<LayerNet> {
    cnet.check_surjective(tol)?;
    let mut weights = Vec::with_capacity(cnet.depth());
    let mut biases = Vec::with_capacity(cnet.depth());
    for k in 0..cnet.depth() {
        if k == 0 {
            weights.push(cnet.weights[0].clone());
            biases.push(cnet.biases[0].clone());
        } else {
            let w = &cnet.weights[k] * pinv(&cnet.weights[k - 1], tol)?;
            let b = &cnet.biases[k] - &w * &cnet.biases[k - 1];
            weights.push(w);
            biases.push(b);
        }
    }
    let net = LayerNet::new(cnet.widths.clone(), weights, biases)?;
    let back = cumulative_from_layers(&net);
    for k in 0..cnet.depth() {
        let scale = 1.0 + max_abs(&cnet.weights[k]);
        let ew = max_abs(&(&back.weights[k] - &cnet.weights[k]));
        let bscale = 1.0 + cnet.biases[k].amax();
        let eb = (&back.biases[k] - &cnet.biases[k]).amax();
        if ew > tol.identity_abs_tol * scale || eb > tol.identity_abs_tol * bscale {
            return Err(Error::Inconsistency(format!(
                "layer {} round trip residual: weights {ew:.3e}, bias {eb:.3e}",
                k + 1
            )));
        }
    }
    Ok(net)
}

/// `[(X₀)^(τ,1), …, (X₀)^(τ,L−1)]`, each living in input space.
pub fn tau_chain(cnet: &CumulativeNet, x: &Mat) -> Result<Vec<Mat>> {
    tau_chain_with(cnet, x, &Tolerance::default())
}

pub fn tau_chain_with(cnet: &CumulativeNet, x: &Mat, tol: &Tolerance) -> Result<Vec<Mat>> {
    if x.nrows() != cnet.widths[0] {
        return Err(Error::DimensionMismatch(format!(
            "input has {} rows, network expects {}",
            x.nrows(),
            cnet.widths[0]
        )));
    }
    let mut out = Vec::with_capacity(cnet.depth().saturating_sub(1));
    let mut cur = x.clone();
    for k in 0..cnet.depth().saturating_sub(1) {
        cur = truncate_with(&cnet.weights[k], &cnet.biases[k], &cur, tol)?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// `W^(ℓ) X + b^(ℓ)` columnwise; the right-hand side of the chain identity.
pub fn cumulative_affine(cnet: &CumulativeNet, layer: usize, x: &Mat) -> Mat {
    affine(&cnet.weights[layer], &cnet.biases[layer], x)
}

/// Recursive projectors `P^(ℓ)`, checking `P^(ℓ) = W^(ℓ)⁺W^(ℓ)` and
/// `W^(ℓ)P^(ℓ−1) = W^(ℓ)` at every layer.
pub fn projector_chain(cnet: &CumulativeNet, tol: &Tolerance) -> Result<Vec<Projector>> {
    let d0 = cnet.widths[0];
    let mut prev = Mat::identity(d0, d0);
    let mut out = Vec::with_capacity(cnet.depth());
    for (k, w) in cnet.weights.iter().enumerate() {
        let direct = pinv(w, tol)? * w;
        let p = &direct * &prev;
        let scale = 1.0 + max_abs(w);
        let e1 = max_abs(&(&p - &direct));
        let e2 = max_abs(&(w * &prev - w)) / scale;
        if e1 > tol.identity_abs_tol || e2 > tol.identity_abs_tol {
            return Err(Error::Inconsistency(format!(
                "projector identities fail at layer {}: {e1:.3e}, {e2:.3e}",
                k + 1
            )));
        }
        out.push(Projector { p: p.clone() });
        prev = p;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetForm {
    Layerwise,
    Cumulative,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerJson {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkJson {
    pub widths: Vec<usize>,
    pub layers: Vec<LayerJson>,
    pub form: NetForm,
}

fn layers_json(weights: &[Mat], biases: &[Vector]) -> Vec<LayerJson> {
    weights
        .iter()
        .zip(biases)
        .map(|(w, b)| LayerJson { w: to_rows(w), b: b.iter().cloned().collect() })
        .collect()
}

fn parse_layers(n: &NetworkJson) -> Result<(Vec<Mat>, Vec<Vector>)> {
    let mut ws = Vec::new();
    let mut bs = Vec::new();
    for (k, l) in n.layers.iter().enumerate() {
        let w = from_rows(&l.w).map_err(|e| Error::Parse(format!("layers[{k}].W: {e}")))?;
        let expect_rows = n.widths.get(k + 1).copied().unwrap_or(0);
        let w = if l.w.is_empty() { Mat::zeros(expect_rows, 0) } else { w };
        ws.push(w);
        bs.push(Vector::from_vec(l.b.clone()));
    }
    Ok((ws, bs))
}

impl NetworkJson {
    /// Layerwise network regardless of the stored form.
    pub fn into_layer_net(&self, tol: &Tolerance) -> Result<LayerNet> {
        let (ws, bs) = parse_layers(self)?;
        match self.form {
            NetForm::Layerwise => LayerNet::new(self.widths.clone(), ws, bs),
            NetForm::Cumulative => {
                let c = CumulativeNet::new(self.widths.clone(), ws, bs, tol)?;
                layers_from_cumulative(&c, tol)
            }
        }
    }

    pub fn into_cumulative_net(&self, tol: &Tolerance) -> Result<CumulativeNet> {
        let (ws, bs) = parse_layers(self)?;
        match self.form {
            NetForm::Cumulative => CumulativeNet::new(self.widths.clone(), ws, bs, tol),
            NetForm::Layerwise => Ok(cumulative_from_layers(&LayerNet::new(self.widths.clone(), ws, bs)?)),
        }
    }
}

impl From<&LayerNet> for NetworkJson {
    fn from(n: &LayerNet) -> Self {
        Self { widths: n.widths.clone(), layers: layers_json(&n.weights, &n.biases), form: NetForm::Layerwise }
    }
}

impl From<&CumulativeNet> for NetworkJson {
    fn from(n: &CumulativeNet) -> Self {
        Self { widths: n.widths.clone(), layers: layers_json(&n.weights, &n.biases), form: NetForm::Cumulative }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numlin::Tolerance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_net(rng: &mut ChaCha8Rng, widths: &[usize]) -> LayerNet {
        let ws = widths
            .windows(2)
            .map(|p| Mat::from_fn(p[1], p[0], |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let bs = widths[1..]
            .iter()
            .map(|&d| Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        LayerNet::new(widths.to_vec(), ws, bs).unwrap()
    }

    #[test]
    fn forward_single_affine_layer() {
        let net = LayerNet::new(vec![2, 2], vec![Mat::identity(2, 2)], vec![Vector::zeros(2)]).unwrap();
        let x = Mat::from_row_slice(2, 2, &[-1.0, 3.0, 2.0, -4.0]);
        assert_eq!(forward(&net, &x).unwrap(), x);
    }

    #[test]
    fn forward_single_relu() {
        let id = Mat::identity(1, 1);
        let net = LayerNet::new(vec![1, 1, 1], vec![id.clone(), id], vec![Vector::zeros(1); 2]).unwrap();
        let x = Mat::from_row_slice(1, 2, &[-1.0, 2.0]);
        assert_eq!(forward(&net, &x).unwrap(), Mat::from_row_slice(1, 2, &[0.0, 2.0]));
    }

    #[test]
    fn forward_matches_reference_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = random_net(&mut rng, &[4, 3, 3, 2]);
        let x = Mat::from_fn(4, 6, |_, _| rng.random_range(-2.0..2.0));
        let got = forward(&net, &x).unwrap();
        for c in 0..x.ncols() {
            let mut h: Vec<f64> = x.column(c).iter().cloned().collect();
            for k in 0..3 {
                let w = &net.weights[k];
                let mut next = vec![0.0; w.nrows()];
                for i in 0..w.nrows() {
                    let mut s = net.biases[k][i];
                    for j in 0..w.ncols() {
                        s += w[(i, j)] * h[j];
                    }
                    next[i] = if k < 2 { s.max(0.0) } else { s };
                }
                h = next;
            }
            for i in 0..2 {
                assert!((got[(i, c)] - h[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = random_net(&mut rng, &[3, 2]);
        assert!(matches!(forward(&net, &Mat::zeros(2, 1)), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn truncate_identity_is_relu_and_idempotent() {
        let x = Mat::from_row_slice(2, 3, &[-1.0, 2.0, 0.5, 3.0, -0.2, 0.0]);
        let id = Mat::identity(2, 2);
        let once = truncate(&id, &Vector::zeros(2), &x).unwrap();
        assert_eq!(once, x.map(|v| v.max(0.0)));
        assert_eq!(truncate(&id, &Vector::zeros(2), &once).unwrap(), once);
    }

    #[test]
    fn cumulative_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = random_net(&mut rng, &[3, 2]);
        let c = cumulative_from_layers(&net);
        assert_eq!(c.weights, net.weights);
        assert_eq!(c.biases, net.biases);

        let bs: Vec<Vector> = (0..3).map(|k| Vector::from_element(2, k as f64 + 1.0)).collect();
        let net = LayerNet::new(vec![2; 4], vec![Mat::identity(2, 2); 3], bs).unwrap();
        let c = cumulative_from_layers(&net);
        assert_eq!(c.weights[2], Mat::identity(2, 2));
        assert_eq!(c.biases[2], Vector::from_element(2, 6.0));

        let net = random_net(&mut rng, &[5, 4, 4, 3, 2]);
        let c = cumulative_from_layers(&net);
        let naive = &net.weights[3] * (&net.weights[2] * (&net.weights[1] * &net.weights[0]));
        assert!(max_abs(&(&c.weights[3] - naive)) < 1e-12);
    }

    #[test]
    fn layers_round_trip() {
        let tol = Tolerance::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = random_net(&mut rng, &[4, 3, 2]);
        let c = cumulative_from_layers(&net);
        let back = layers_from_cumulative(&c, &tol).unwrap();
        let c2 = cumulative_from_layers(&back);
        for k in 0..2 {
            assert!(max_abs(&(&c2.weights[k] - &c.weights[k])) < 1e-9);
        }
        assert!(max_abs(&(&back.weights[1] * &c.weights[0] - &c.weights[1])) < 1e-10);

        let single = random_net(&mut rng, &[3, 2]);
        let back = layers_from_cumulative(&cumulative_from_layers(&single), &tol).unwrap();
        assert_eq!(back, single);
    }

    #[test]
    fn layers_from_rank_deficient_fails() {
        let w = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let c = CumulativeNet { widths: vec![2, 2], weights: vec![w], biases: vec![Vector::zeros(2)] };
        assert!(matches!(layers_from_cumulative(&c, &Tolerance::default()), Err(Error::Rank(_))));
    }

    #[test]
    fn layers_from_non_nested_rows_fails() {
        let w1 = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        let w2 = Mat::from_row_slice(1, 2, &[0.0, 1.0]);
        let c = CumulativeNet {
            widths: vec![2, 1, 1],
            weights: vec![w1, w2],
            biases: vec![Vector::zeros(1); 2],
        };
        assert!(matches!(
            layers_from_cumulative(&c, &Tolerance::default()),
            Err(Error::Inconsistency(_))
        ));
        assert!(projector_chain(&c, &Tolerance::default()).is_err());
    }

    #[test]
    fn tau_chain_relu_case() {
        let id = Mat::identity(2, 2);
        let c = CumulativeNet {
            widths: vec![2, 2, 2],
            weights: vec![id.clone(), id],
            biases: vec![Vector::zeros(2); 2],
        };
        let x = Mat::from_row_slice(2, 2, &[-1.0, 2.0, 0.5, -3.0]);
        let chain = tau_chain(&c, &x).unwrap();
        assert_eq!(chain.len(), 1);
        assert_eq!(chain[0], x.map(|v| v.max(0.0)));
    }

    #[test]
    fn tau_chain_reproduces_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = random_net(&mut rng, &[5, 4, 3, 3, 2]);
        let c = cumulative_from_layers(&net);
        let x = Mat::from_fn(5, 20, |_, _| rng.random_range(-2.0..2.0));
        let outs = forward_layers(&net, &x).unwrap();
        let chain = tau_chain(&c, &x).unwrap();
        for k in 0..3 {
            let rhs = cumulative_affine(&c, k, &chain[k]);
            assert!(max_abs(&(&outs[k] - rhs)) < 1e-9);
        }
        let last = cumulative_affine(&c, 3, &chain[2]);
        assert!(max_abs(&(&outs[3] - last)) < 1e-9);
    }

    #[test]
    fn projector_examples() {
        let tol = Tolerance::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sq = random_net(&mut rng, &[3, 3, 3]);
        for p in projector_chain(&cumulative_from_layers(&sq), &tol).unwrap() {
            assert!(max_abs(&(p.p - Mat::identity(3, 3))) < 1e-9);
        }
        let net = random_net(&mut rng, &[3, 2]);
        let c = cumulative_from_layers(&net);
        let ps = projector_chain(&c, &tol).unwrap();
        assert_eq!(rank(&ps[0].p, &tol).unwrap(), 2);
        assert!(max_abs(&(&ps[0].p * &ps[0].p - &ps[0].p)) < 1e-12);
        assert!(max_abs(&(&ps[0].p - ps[0].p.transpose())) < 1e-12);

        let net = random_net(&mut rng, &[6, 5, 4, 3, 2]);
        let c = cumulative_from_layers(&net);
        let ps = projector_chain(&c, &tol).unwrap();
        for (k, p) in ps.iter().enumerate() {
            let direct = pinv(&c.weights[k], &tol).unwrap() * &c.weights[k];
            assert!(max_abs(&(&p.p - direct)) < 1e-10);
        }
    }

    #[test]
    fn json_round_trip() {
        let tol = Tolerance::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = random_net(&mut rng, &[4, 3, 2]);
        let s = serde_json::to_string(&NetworkJson::from(&net)).unwrap();
        assert!(s.contains("\"form\":\"layerwise\"") && s.contains("\"W\""));
        let back: NetworkJson = serde_json::from_str(&s).unwrap();
        assert_eq!(back.into_layer_net(&tol).unwrap(), net);
        let c = cumulative_from_layers(&net);
        let s = serde_json::to_string(&NetworkJson::from(&c)).unwrap();
        let back: NetworkJson = serde_json::from_str(&s).unwrap();
        let n2 = back.into_layer_net(&tol).unwrap();
        assert!(max_abs(&(&n2.weights[1] - &net.weights[1])) < 1e-9);
    }
}
