//! Cross-modal triplet objective and projection-head training.
//!
//! Each triplet contributes four hinge terms (image→text, text→image,
//! image→image, text→text) combined as `η(I2T + T2I) + (1−η)(I2I + T2T)`.
//! Gradients are analytic, through the cosine and the linear heads; the
//! trunks stay frozen, so trunk features are computed once and cached.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{Heads, Modality};
use crate::error::{Error, Result};
use crate::miner::Triplet;
use crate::seed::{derive_seed, rng};

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!("cosine of lengths {} and {}", u.len(), v.len())));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(nu > 0.0 && nv > 0.0) {
        return Err(Error::DegenerateVector("cosine of a zero-norm vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignMode {
    /// `max(0, cos(A,N) − cos(A,P) + α)`
    #[default]
    Corrected,
    /// `max(0, cos(A,P) − cos(A,N) + α)`
    AsPrinted,
}

impl FromStr for SignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corrected" => Ok(SignMode::Corrected),
            "as-printed" => Ok(SignMode::AsPrinted),
            _ => Err(Error::Validation(format!(
                "unknown sign mode `{s}` (expected corrected or as-printed)"
            ))),
        }
    }
}

impl fmt::Display for SignMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignMode::Corrected => "corrected",
            SignMode::AsPrinted => "as-printed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub eta: f64,
    pub sign_mode: SignMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.3,
            eta: 0.5,
            sign_mode: SignMode::Corrected,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Validation(format!("alpha must be a finite value >= 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Validation(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        Ok(())
    }

    /// Hinge argument before clamping at zero.
    fn argument(&self, cos_ap: f64, cos_an: f64) -> f64 {
        match self.sign_mode {
            SignMode::Corrected => cos_an - cos_ap + self.alpha,
            SignMode::AsPrinted => cos_ap - cos_an + self.alpha,
        }
    }
}

/// Triplet hinge from precomputed cosines.
pub fn hinge(cos_ap: f64, cos_an: f64, alpha: f64, mode: SignMode) -> f64 {
    let cfg = LossConfig {
        alpha,
        eta: 0.5,
        sign_mode: mode,
    };
    cfg.argument(cos_ap, cos_an).max(0.0)
}

pub fn f_tri(a: &[f64], p: &[f64], n: &[f64], alpha: f64, mode: SignMode) -> Result<f64> {
    Ok(hinge(cosine(a, p)?, cosine(a, n)?, alpha, mode))
}

/// Projected embeddings of one triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletEmbeddings {
    pub ei_a: Vec<f64>,
    pub ei_p: Vec<f64>,
    pub ei_n: Vec<f64>,
    pub et_a: Vec<f64>,
    pub et_p: Vec<f64>,
    pub et_n: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub i2t: f64,
    pub t2i: f64,
    pub i2i: f64,
    pub t2t: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn combine(i2t: f64, t2i: f64, i2i: f64, t2t: f64, eta: f64) -> LossTerms {
        LossTerms {
            i2t,
            t2i,
            i2i,
            t2t,
            total: eta * (i2t + t2i) + (1.0 - eta) * (i2i + t2t),
        }
    }

    fn add(&mut self, o: &LossTerms) {
        self.i2t += o.i2t;
        self.t2i += o.t2i;
        self.i2i += o.i2i;
        self.t2t += o.t2t;
        self.total += o.total;
    }

    fn scale(&mut self, k: f64) {
        self.i2t *= k;
        self.t2i *= k;
        self.i2i *= k;
        self.t2t *= k;
        self.total *= k;
    }

    /// Element-wise mean, summed in slice order.
    pub fn mean(terms: &[LossTerms]) -> LossTerms {
        let mut acc = LossTerms::default();
        for t in terms {
            acc.add(t);
        }
        if !terms.is_empty() {
            acc.scale(1.0 / terms.len() as f64);
        }
        acc
    }
}

pub fn alignment_loss(t: &TripletEmbeddings, cfg: &LossConfig) -> Result<LossTerms> {
    let f = |a: &[f64], p: &[f64], n: &[f64]| f_tri(a, p, n, cfg.alpha, cfg.sign_mode);
    Ok(LossTerms::combine(
        f(&t.ei_a, &t.et_p, &t.et_n)?,
        f(&t.et_a, &t.ei_p, &t.ei_n)?,
        f(&t.ei_a, &t.ei_p, &t.ei_n)?,
        f(&t.et_a, &t.et_p, &t.et_n)?,
        cfg.eta,
    ))
}

/// Frozen trunk features of one triplet, indexed anchor, positive, negative.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletFeatures {
    pub image: [Array1<f64>; 3],
    pub text: [Array1<f64>; 3],
}

impl TripletFeatures {
    pub fn project(&self, heads: &Heads) -> TripletEmbeddings {
        let pi = |i: usize| heads.image.w.dot(&self.image[i]).to_vec();
        let pt = |i: usize| heads.text.w.dot(&self.text[i]).to_vec();
        TripletEmbeddings {
            ei_a: pi(0),
            ei_p: pi(1),
            ei_n: pi(2),
            et_a: pt(0),
            et_p: pt(1),
            et_n: pt(2),
        }
    }
}

/// Gradient with respect to both head matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub image: Array2<f64>,
    pub text: Array2<f64>,
}

impl HeadGrads {
    pub fn zeros(c: usize) -> HeadGrads {
        HeadGrads {
            image: Array2::zeros((c, c)),
            text: Array2::zeros((c, c)),
        }
    }

    pub fn get(&self, modality: Modality) -> &Array2<f64> {
        match modality {
            Modality::Image => &self.image,
            Modality::Text => &self.text,
        }
    }

    pub fn norm(&self) -> f64 {
        self.image
            .iter()
            .chain(self.text.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.image.iter().chain(self.text.iter()).all(|x| x.is_finite())
    }
}

/// Loss, gradient and smallest hinge-argument magnitude for one triplet.
struct TripletGrad {
    terms: LossTerms,
    grads: HeadGrads,
    kink_distance: f64,
}

/// d cos(u,v) / du
fn dcos_du(u: &Array1<f64>, v: &Array1<f64>) -> Result<(f64, Array1<f64>, Array1<f64>)> {
    let nu = u.dot(u).sqrt();
    let nv = v.dot(v).sqrt();
    if !(nu > 0.0 && nv > 0.0) {
        return Err(Error::DegenerateVector("projected embedding has zero norm".into()));
    }
    let c = u.dot(v) / (nu * nv);
    let du = v / (nu * nv) - u * (c / (nu * nu));
    let dv = u / (nu * nv) - v * (c / (nv * nv));
    Ok((c, du, dv))
}

fn triplet_grad(f: &TripletFeatures, heads: &Heads, cfg: &LossConfig) -> Result<TripletGrad> {
    let img: Vec<Array1<f64>> = f.image.iter().map(|g| heads.image.w.dot(g)).collect();
    let txt: Vec<Array1<f64>> = f.text.iter().map(|g| heads.text.w.dot(g)).collect();
    let c = heads.image.dim();
    // dL/dE for [img a, p, n] and [txt a, p, n]
    let mut d_img = vec![Array1::<f64>::zeros(c); 3];
    let mut d_txt = vec![Array1::<f64>::zeros(c); 3];
    let mut kink = f64::INFINITY;
    let sign = match cfg.sign_mode {
        SignMode::Corrected => 1.0,
        SignMode::AsPrinted => -1.0,
    };

    // (anchor modality, other modality, weight)
    let plan = [
        (Modality::Image, Modality::Text, cfg.eta),
        (Modality::Text, Modality::Image, cfg.eta),
        (Modality::Image, Modality::Image, 1.0 - cfg.eta),
        (Modality::Text, Modality::Text, 1.0 - cfg.eta),
    ];
    let mut values = [0.0; 4];
    for (k, &(am, om, weight)) in plan.iter().enumerate() {
        let pick = |m: Modality| match m {
            Modality::Image => &img,
            Modality::Text => &txt,
        };
        let (a, p, n) = (&pick(am)[0], &pick(om)[1], &pick(om)[2]);
        let (cos_ap, da_p, dp) = dcos_du(a, p)?;
        let (cos_an, da_n, dn) = dcos_du(a, n)?;
        let arg = cfg.argument(cos_ap, cos_an);
        kink = kink.min(arg.abs());
        values[k] = arg.max(0.0);
        if arg > 0.0 && weight != 0.0 {
            let w_an = weight * sign;
            let w_ap = -weight * sign;
            let da = da_p * w_ap + da_n * w_an;
            match am {
                Modality::Image => d_img[0] += &da,
                Modality::Text => d_txt[0] += &da,
            }
            let target = match om {
                Modality::Image => &mut d_img,
                Modality::Text => &mut d_txt,
            };
            target[1] += &(dp * w_ap);
            target[2] += &(dn * w_an);
        }
    }

    let mut grads = HeadGrads::zeros(c);
    for i in 0..3 {
        grads.image += &outer(&d_img[i], &f.image[i]);
        grads.text += &outer(&d_txt[i], &f.text[i]);
    }
    Ok(TripletGrad {
        terms: LossTerms::combine(values[0], values[1], values[2], values[3], cfg.eta),
        grads,
        kink_distance: kink,
    })
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(ndarray::Axis(1));
    let b2 = b.view().insert_axis(ndarray::Axis(0));
    a2.dot(&b2)
}

/// Mean loss and its analytic head gradient over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrad {
    pub loss: LossTerms,
    /// Per-triplet loss terms, in batch order.
    pub per_triplet: Vec<LossTerms>,
    pub grads: HeadGrads,
    /// Smallest `|hinge argument|` over every term in the batch.
    pub kink_distance: f64,
}

/// Per-triplet work runs in parallel; the reduction is in batch order.
pub fn grad_heads(batch: &[TripletFeatures], heads: &Heads, cfg: &LossConfig) -> Result<BatchGrad> {
    if batch.is_empty() {
        return Err(Error::Validation("gradient of an empty batch".into()));
    }
    let parts: Vec<TripletGrad> = batch
        .par_iter()
        .map(|f| triplet_grad(f, heads, cfg))
        .collect::<Result<_>>()?;
    let c = heads.image.dim();
    let mut grads = HeadGrads::zeros(c);
    let mut kink = f64::INFINITY;
    for p in &parts {
        grads.image += &p.grads.image;
        grads.text += &p.grads.text;
        kink = kink.min(p.kink_distance);
    }
    let k = 1.0 / batch.len() as f64;
    grads.image *= k;
    grads.text *= k;
    let per_triplet: Vec<LossTerms> = parts.iter().map(|p| p.terms).collect();
    Ok(BatchGrad {
        loss: LossTerms::mean(&per_triplet),
        per_triplet,
        grads,
        kink_distance: kink,
    })
}

/// Mean total loss over a batch, computed through the plain forward path.
pub fn batch_loss(batch: &[TripletFeatures], heads: &Heads, cfg: &LossConfig) -> Result<f64> {
    let mut sum = 0.0;
    for f in batch {
        sum += alignment_loss(&f.project(heads), cfg)?.total;
    }
    Ok(sum / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub analytic: HeadGrads,
    pub numeric: HeadGrads,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`, worst of the two heads.
    pub max_rel_error: f64,
    pub kink_distance: f64,
}

fn rel_error(a: &Array2<f64>, n: &Array2<f64>) -> f64 {
    let diff = (a - n).iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn entry(h: &mut Heads, modality: Modality, i: usize, j: usize) -> &mut f64 {
    match modality {
        Modality::Image => &mut h.image.w[[i, j]],
        Modality::Text => &mut h.text.w[[i, j]],
    }
}

/// Compares analytic gradients with central finite differences on every head entry.
pub fn check_gradients(batch: &[TripletFeatures], heads: &Heads, cfg: &LossConfig, step: f64) -> Result<GradReport> {
    let analytic = grad_heads(batch, heads, cfg)?;
    let c = heads.image.dim();
    let mut numeric = HeadGrads::zeros(c);
    let mut probe = heads.clone();
    for modality in [Modality::Image, Modality::Text] {
        for i in 0..c {
            for j in 0..c {
                let orig = *entry(&mut probe, modality, i, j);
                *entry(&mut probe, modality, i, j) = orig + step;
                let plus = batch_loss(batch, &probe, cfg)?;
                *entry(&mut probe, modality, i, j) = orig - step;
                let minus = batch_loss(batch, &probe, cfg)?;
                *entry(&mut probe, modality, i, j) = orig;
                let d = (plus - minus) / (2.0 * step);
                match modality {
                    Modality::Image => numeric.image[[i, j]] = d,
                    Modality::Text => numeric.text[[i, j]] = d,
                }
            }
        }
    }
    let max_rel_error = rel_error(&analytic.grads.image, &numeric.image).max(rel_error(&analytic.grads.text, &numeric.text));
    Ok(GradReport {
        analytic: analytic.grads,
        numeric,
        max_rel_error,
        kink_distance: analytic.kink_distance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moment estimates for both heads.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: HeadGrads,
    pub v: HeadGrads,
}

impl AdamState {
    pub fn new(c: usize) -> AdamState {
        AdamState {
            step: 0,
            m: HeadGrads::zeros(c),
            v: HeadGrads::zeros(c),
        }
    }

    pub fn update(&mut self, heads: &mut Heads, grads: &HeadGrads, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let pairs = [
            (&mut heads.image.w, &grads.image, &mut self.m.image, &mut self.v.image),
            (&mut heads.text.w, &grads.text, &mut self.m.text, &mut self.v.text),
        ];
        for (w, g, m, v) in pairs {
            ndarray::Zip::from(w).and(g).and(m).and(v).for_each(|w, &g, m, v| {
                let g = g + cfg.weight_decay * *w;
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            });
        }
    }
}

/// Cached trunk features per sample id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    rows: BTreeMap<String, (Array1<f64>, Array1<f64>)>,
}

impl FeatureTable {
    pub fn new() -> FeatureTable {
        FeatureTable::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, image: Vec<f64>, text: Vec<f64>) {
        self.rows.insert(id.into(), (Array1::from(image), Array1::from(text)));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn image(&self, id: &str) -> Result<ArrayView1<'_, f64>> {
        self.rows.get(id).map(|r| r.0.view()).ok_or_else(|| Error::UnknownId(id.into()))
    }

    pub fn text(&self, id: &str) -> Result<ArrayView1<'_, f64>> {
        self.rows.get(id).map(|r| r.1.view()).ok_or_else(|| Error::UnknownId(id.into()))
    }

    pub fn triplet(&self, t: &Triplet) -> Result<TripletFeatures> {
        let get = |id: &str| self.rows.get(id).ok_or_else(|| Error::UnknownId(id.into()));
        let (a, p, n) = (get(&t.anchor_id)?, get(&t.positive_id)?, get(&t.negative_id)?);
        Ok(TripletFeatures {
            image: [a.0.clone(), p.0.clone(), n.0.clone()],
            text: [a.1.clone(), p.1.clone(), n.1.clone()],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation("epochs and batch_size must be positive".into()));
        }
        self.loss.validate()?;
        self.adam.validate()
    }
}

/// One line of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub i2t: f64,
    pub t2i: f64,
    pub i2i: f64,
    pub t2t: f64,
}

/// Mini-batch Adam over the triplets. Batch order is reshuffled every epoch
/// from the config seed; each triplet's loss is recorded before the update of
/// its batch, and epoch means are summed in triplet order.
pub fn train(
    triplets: &[Triplet],
    features: &FeatureTable,
    heads: &mut Heads,
    opt: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(Error::Validation("no triplets to train on".into()));
    }
    let cached: Vec<TripletFeatures> = triplets.iter().map(|t| features.triplet(t)).collect::<Result<_>>()?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng(derive_seed(cfg.seed, epoch as u64)));
        let mut per = vec![LossTerms::default(); triplets.len()];
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<TripletFeatures> = chunk.iter().map(|&i| cached[i].clone()).collect();
            let g = grad_heads(&batch, heads, &cfg.loss)?;
            if !g.loss.total.is_finite() || !g.grads.is_finite() {
                return Err(Error::NonFinite { epoch, batch: b });
            }
            for (&i, terms) in chunk.iter().zip(&g.per_triplet) {
                per[i] = *terms;
            }
            opt.update(heads, &g.grads, &cfg.adam);
        }
        let m = LossTerms::mean(&per);
        curve.push(EpochLoss {
            epoch,
            total: m.total,
            i2t: m.i2t,
            t2i: m.t2i,
            i2i: m.i2i,
            t2t: m.t2t,
        });
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_features(c: usize, r: &mut impl Rng) -> TripletFeatures {
        let mut v = || Array1::from_shape_fn(c, |_| r.random::<f64>() * 2.0 - 1.0);
        TripletFeatures {
            image: [v(), v(), v()],
            text: [v(), v(), v()],
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[3.0, -1.0], &[3.0, -1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::DegenerateVector(_))));
        assert!(cosine(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge(1.0, 0.0, 0.3, SignMode::Corrected), 0.0);
        assert_eq!(hinge(0.4, 0.4, 0.3, SignMode::Corrected), 0.3);
        assert!((hinge(0.2, 0.6, 0.3, SignMode::Corrected) - 0.7).abs() < 1e-15);
        assert!((hinge(0.6, 0.2, 0.3, SignMode::AsPrinted) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn collapse_gives_two_alpha() {
        let e = vec![0.5, -1.0, 2.0];
        let t = TripletEmbeddings {
            ei_a: e.clone(),
            ei_p: e.clone(),
            ei_n: e.clone(),
            et_a: e.clone(),
            et_p: e.clone(),
            et_n: e,
        };
        let l = alignment_loss(&t, &LossConfig::default()).unwrap();
        for v in [l.i2t, l.t2i, l.i2i, l.t2t] {
            assert!((v - 0.3).abs() < 1e-12);
        }
        assert!((l.total - 0.6).abs() < 1e-12);
    }

    #[test]
    fn combine_example() {
        let l = LossTerms::combine(0.1, 0.2, 0.3, 0.4, 0.5);
        assert!((l.total - 0.5).abs() < 1e-15);
        let l = LossTerms::combine(0.1, 0.2, 0.3, 0.4, 1.0);
        assert_eq!(l.total, 0.1 + 0.2);
    }

    #[test]
    fn flat_region_gradient_is_zero() {
        // positives identical to the anchor, negatives opposite: every hinge inactive
        let a = Array1::from(vec![1.0, 0.5, -0.2, 0.3]);
        let n = -&a;
        let f = TripletFeatures {
            image: [a.clone(), a.clone(), n.clone()],
            text: [a.clone(), a.clone(), n],
        };
        let g = grad_heads(&[f], &Heads::identity(4), &LossConfig::default()).unwrap();
        assert_eq!(g.loss.total, 0.0);
        assert!(g.grads.image.iter().chain(g.grads.text.iter()).all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(5);
        let c = 8;
        let mut checked = 0;
        while checked < 10 {
            let batch: Vec<_> = (0..4).map(|_| random_features(c, &mut r)).collect();
            let mut heads = Heads::identity(c);
            heads.image.w += &Array2::from_shape_fn((c, c), |_| r.random::<f64>() * 0.5 - 0.25);
            heads.text.w += &Array2::from_shape_fn((c, c), |_| r.random::<f64>() * 0.5 - 0.25);
            let cfg = LossConfig {
                alpha: r.random::<f64>(),
                eta: r.random::<f64>(),
                sign_mode: if r.random::<bool>() { SignMode::Corrected } else { SignMode::AsPrinted },
            };
            let report = check_gradients(&batch, &heads, &cfg, 1e-4).unwrap();
            if report.kink_distance < 1e-3 {
                continue;
            }
            assert!(report.max_rel_error <= 1e-5, "rel error {}", report.max_rel_error);
            checked += 1;
        }
    }

    #[test]
    fn head_scaling_direction_has_zero_slope() {
        let mut r = rng(8);
        let batch: Vec<_> = (0..4).map(|_| random_features(8, &mut r)).collect();
        let heads = Heads::identity(8);
        let cfg = LossConfig::default();
        let g = grad_heads(&batch, &heads, &cfg).unwrap();
        let dir_image = (&g.grads.image * &heads.image.w).sum();
        let dir_text = (&g.grads.text * &heads.text.w).sum();
        assert!(dir_image.abs() < 1e-8 && dir_text.abs() < 1e-8);
    }

    fn toy_problem(n: usize, seed: u64) -> (Vec<Triplet>, FeatureTable) {
        let mut r = rng(seed);
        let mut table = FeatureTable::new();
        for i in 0..n {
            let img: Vec<f64> = (0..6).map(|_| r.random::<f64>() - 0.5).collect();
            let txt: Vec<f64> = (0..6).map(|_| r.random::<f64>() - 0.5).collect();
            table.insert(format!("s{i}"), img, txt);
        }
        let triplets = (0..n)
            .map(|i| Triplet {
                anchor_id: format!("s{i}"),
                positive_id: format!("s{}", (i + 1) % n),
                negative_id: format!("s{}", (i + 2) % n),
                score_ap: 1.0,
                score_an: 0.3,
            })
            .collect();
        (triplets, table)
    }

    #[test]
    fn zero_lr_leaves_heads_and_curve_fixed() {
        let (triplets, table) = toy_problem(10, 1);
        let mut heads = Heads::identity(6);
        let mut opt = AdamState::new(6);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            adam: AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let curve = train(&triplets, &table, &mut heads, &mut opt, &cfg).unwrap();
        assert_eq!(heads, Heads::identity(6));
        assert!(curve.iter().all(|e| e.total == curve[0].total));
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (triplets, table) = toy_problem(12, 2);
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: 4,
            adam: AdamConfig {
                lr: 0.02,
                ..Default::default()
            },
            seed: 4,
            ..Default::default()
        };
        let run = || {
            let mut heads = Heads::identity(6);
            let mut opt = AdamState::new(6);
            let curve = train(&triplets, &table, &mut heads, &mut opt, &cfg).unwrap();
            (curve, heads)
        };
        let (c1, h1) = run();
        let (c2, h2) = run();
        assert_eq!(c1, c2);
        assert_eq!(h1, h2);
        assert!(c1.last().unwrap().total < c1[0].total);
    }

    #[test]
    fn unknown_ids_are_reported() {
        let (mut triplets, table) = toy_problem(4, 3);
        triplets[0].negative_id = "ghost".into();
        let err = train(
            &triplets,
            &table,
            &mut Heads::identity(6),
            &mut AdamState::new(6),
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownId(id) if id == "ghost"));
    }

    #[test]
    fn non_finite_features_abort() {
        let (triplets, mut table) = toy_problem(4, 3);
        table.insert("s0", vec![f64::NAN; 6], vec![1.0; 6]);
        let err = train(
            &triplets,
            &table,
            &mut Heads::identity(6),
            &mut AdamState::new(6),
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { epoch: 0, .. } | Error::DegenerateVector(_)));
    }
}
