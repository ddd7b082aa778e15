//! Soft-clustering classifier `ψ(x) = softmax(w2·tanh(w1·x + b1) + b2)`
//! and its offline trainer.
//!
//! The context `x` stacks the normalized hourly temperature forecast and
//! the normalized hourly irradiance forecast. Training reconstructs those
//! same features from cluster centroids weighted by `ψ`, with entropy and
//! contrast regularizers on the weights.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Hyperparams, PricingError};
use crate::scalar::Real;
use crate::scenario::WeatherDay;

/// Clamp applied inside the entropy logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Per-feature affine normalization, fitted on the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization<T> {
    pub temp_mean: Vec<T>,
    pub temp_scale: Vec<T>,
    pub solar_mean: Vec<T>,
    pub solar_scale: Vec<T>,
}

fn mean_scale(columns: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = columns.len() as f64;
    let t = columns[0].len();
    let mut mean = vec![0.0; t];
    let mut scale = vec![0.0; t];
    for c in columns {
        for (m, v) in mean.iter_mut().zip(c) {
            *m += v / n;
        }
    }
    for c in columns {
        for i in 0..t {
            scale[i] += (c[i] - mean[i]).powi(2) / n;
        }
    }
    // Constant features (night-time irradiance) keep unit scale.
    let scale = scale.into_iter().map(|v| if v.sqrt() > 1e-9 { v.sqrt() } else { 1.0 }).collect();
    (mean, scale)
}

impl Normalization<f64> {
    pub fn fit(days: &[WeatherDay]) -> Self {
        let temps: Vec<Vec<f64>> = days.iter().map(|d| d.temperature_f.clone()).collect();
        let solar: Vec<Vec<f64>> = days.iter().map(|d| d.irradiance_w_m2.clone()).collect();
        let (temp_mean, temp_scale) = mean_scale(&temps);
        let (solar_mean, solar_scale) = mean_scale(&solar);
        Self { temp_mean, temp_scale, solar_mean, solar_scale }
    }
}

impl<T: Real> Normalization<T> {
    pub fn slots(&self) -> usize {
        self.temp_mean.len()
    }

    pub fn normalize(&self, temps: &[T], solar: &[T]) -> (Vec<T>, Vec<T>) {
        let nt = temps.iter().enumerate().map(|(i, &v)| (v - self.temp_mean[i]) / self.temp_scale[i]).collect();
        let ns = solar.iter().enumerate().map(|(i, &v)| (v - self.solar_mean[i]) / self.solar_scale[i]).collect();
        (nt, ns)
    }

    /// Normalized features and reconstruction targets for one day.
    pub fn sample(&self, temps: &[T], solar: &[T]) -> Sample<T> {
        let (y_temp, y_solar) = self.normalize(temps, solar);
        let mut x = y_temp.clone();
        x.extend_from_slice(&y_solar);
        Sample { x, y_temp, y_solar }
    }
}

impl Normalization<f64> {
    pub fn sample_day(&self, day: &WeatherDay) -> Sample<f64> {
        self.sample(&day.temperature_f, &day.irradiance_w_m2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample<T> {
    pub x: Vec<T>,
    pub y_temp: Vec<T>,
    pub y_solar: Vec<T>,
}

/// Network weights (row-major) and centroid matrices (`slots × k`,
/// row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams<T> {
    pub k: usize,
    pub hidden: usize,
    pub d_in: usize,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
    pub mu_temp: Vec<T>,
    pub mu_solar: Vec<T>,
    pub normalization: Normalization<T>,
}

/// Same block layout as [`ClassifierParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
    pub mu_temp: Vec<T>,
    pub mu_solar: Vec<T>,
}

pub const BLOCK_NAMES: [&str; 6] = ["w1", "b1", "w2", "b2", "mu_temp", "mu_solar"];

impl<T: Real> ClassifierParams<T> {
    /// All-zero weights; `ψ` is uniform.
    pub fn zeros(k: usize, hidden: usize, normalization: Normalization<T>) -> Self {
        let slots = normalization.slots();
        let d_in = 2 * slots;
        Self {
            k,
            hidden,
            d_in,
            w1: vec![T::zero(); hidden * d_in],
            b1: vec![T::zero(); hidden],
            w2: vec![T::zero(); k * hidden],
            b2: vec![T::zero(); k],
            mu_temp: vec![T::zero(); slots * k],
            mu_solar: vec![T::zero(); slots * k],
            normalization,
        }
    }

    pub fn slots(&self) -> usize {
        self.normalization.slots()
    }

    pub fn validate(&self) -> Result<(), PricingError> {
        let s = self.slots();
        let dims = [
            ("w1", self.w1.len(), self.hidden * self.d_in),
            ("b1", self.b1.len(), self.hidden),
            ("w2", self.w2.len(), self.k * self.hidden),
            ("b2", self.b2.len(), self.k),
            ("mu_temp", self.mu_temp.len(), s * self.k),
            ("mu_solar", self.mu_solar.len(), s * self.k),
            ("d_in", self.d_in, 2 * s),
        ];
        for (name, got, want) in dims {
            if got != want {
                return Err(PricingError::Dimension(format!("{name}: {got} entries, expected {want}")));
            }
        }
        let n = &self.normalization;
        let scales_ok = n.temp_scale.iter().chain(&n.solar_scale).all(|&v| v > T::zero());
        if !scales_ok || n.temp_scale.len() != s || n.solar_mean.len() != s || n.solar_scale.len() != s {
            return Err(PricingError::Dimension("normalization vectors malformed or non-positive scales".into()));
        }
        Ok(())
    }

    pub fn blocks(&self) -> [&Vec<T>; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.mu_temp, &self.mu_solar]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<T>; 6] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.mu_temp, &mut self.mu_solar]
    }

    /// Reconstruction `(μ_temp ψ, μ_solar ψ)`.
    pub fn reconstruct(&self, psi: &[T]) -> (Vec<T>, Vec<T>) {
        let k = self.k;
        let mix = |mu: &[T]| -> Vec<T> {
            mu.chunks(k).map(|row| row.iter().zip(psi).map(|(&m, &p)| m * p).sum()).collect()
        };
        (mix(&self.mu_temp), mix(&self.mu_solar))
    }
}

impl<T: Real> Gradient<T> {
    fn zeros_like(p: &ClassifierParams<T>) -> Self {
        let z = |v: &Vec<T>| vec![T::zero(); v.len()];
        Self { w1: z(&p.w1), b1: z(&p.b1), w2: z(&p.w2), b2: z(&p.b2), mu_temp: z(&p.mu_temp), mu_solar: z(&p.mu_solar) }
    }

    pub fn blocks(&self) -> [&Vec<T>; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.mu_temp, &self.mu_solar]
    }
}

struct Forward<T> {
    h: Vec<T>,
    psi: Vec<T>,
}

fn forward<T: Real>(p: &ClassifierParams<T>, x: &[T]) -> Forward<T> {
    let h: Vec<T> = (0..p.hidden)
        .map(|r| {
            let row = &p.w1[r * p.d_in..(r + 1) * p.d_in];
            (row.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>() + p.b1[r]).tanh()
        })
        .collect();
    let logits: Vec<T> = (0..p.k)
        .map(|j| p.w2[j * p.hidden..(j + 1) * p.hidden].iter().zip(&h).map(|(&w, &v)| w * v).sum::<T>() + p.b2[j])
        .collect();
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let e: Vec<T> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    Forward { h, psi: e.into_iter().map(|v| v / s).collect() }
}

/// Cluster weights for a normalized context vector.
pub fn classifier_forward<T: Real>(params: &ClassifierParams<T>, x: &[T]) -> Vec<T> {
    forward(params, x).psi
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub reconstruction: T,
    pub entropy: T,
    pub contrast: T,
    /// All contexts identical: the contrast ratio is undefined and taken as 0.
    pub contrast_degenerate: bool,
}

fn pairwise_sq_sum<T: Real>(rows: &[&[T]]) -> T {
    // Σ_ij ‖a_i - a_j‖² = 2n Σ‖a_i‖² - 2‖Σ a_i‖²
    let n = T::from_usize_lossy(rows.len());
    let d = rows.first().map_or(0, |r| r.len());
    let mut sum = vec![T::zero(); d];
    let mut sq = T::zero();
    for r in rows {
        for (s, &v) in sum.iter_mut().zip(r.iter()) {
            *s += v;
            sq += v * v;
        }
    }
    let two = T::lit(2.0);
    (two * n * sq - two * sum.iter().map(|&v| v * v).sum::<T>()).max(T::zero())
}

fn loss_impl<T: Real>(
    p: &ClassifierParams<T>,
    batch: &[Sample<T>],
    hyper: &Hyperparams,
    want_grad: bool,
) -> (LossBreakdown<T>, Option<Gradient<T>>) {
    let n = batch.len();
    let nf = T::from_usize_lossy(n);
    let k = p.k;
    let two = T::lit(2.0);
    let clamp = T::lit(LOG_CLAMP);
    let fwd: Vec<Forward<T>> = batch.iter().map(|s| forward(p, &s.x)).collect();

    let xs: Vec<&[T]> = batch.iter().map(|s| s.x.as_slice()).collect();
    let den = pairwise_sq_sum(&xs);
    let degenerate = !(den > T::zero());
    let ws: Vec<&[T]> = fwd.iter().map(|f| f.psi.as_slice()).collect();
    let contrast = if degenerate { T::zero() } else { -pairwise_sq_sum(&ws) / den };

    let mut recon = T::zero();
    let mut entropy = T::zero();
    let mut grad = want_grad.then(|| Gradient::zeros_like(p));
    let mut psi_sum = vec![T::zero(); k];
    for f in &fwd {
        for (s, &w) in psi_sum.iter_mut().zip(&f.psi) {
            *s += w;
        }
    }
    let le = T::lit(hyper.lambda_entropy);
    let lc = T::lit(hyper.lambda_contrast);

    for (s, f) in batch.iter().zip(&fwd) {
        let (yt, ys) = p.reconstruct(&f.psi);
        let rt: Vec<T> = yt.iter().zip(&s.y_temp).map(|(&a, &b)| a - b).collect();
        let rs: Vec<T> = ys.iter().zip(&s.y_solar).map(|(&a, &b)| a - b).collect();
        recon += rt.iter().chain(&rs).map(|&v| v * v).sum::<T>() / nf;
        for &w in &f.psi {
            entropy -= w * w.max(clamp).ln() / nf;
        }
        let Some(g) = grad.as_mut() else { continue };

        // dL/dψ
        let mut dpsi = vec![T::zero(); k];
        for (t, (&a, &b)) in rt.iter().zip(&rs).enumerate() {
            for j in 0..k {
                dpsi[j] += two / nf * (p.mu_temp[t * k + j] * a + p.mu_solar[t * k + j] * b);
                g.mu_temp[t * k + j] += two / nf * a * f.psi[j];
                g.mu_solar[t * k + j] += two / nf * b * f.psi[j];
            }
        }
        for j in 0..k {
            let w = f.psi[j];
            let d_ent = if w > clamp { -(w.ln() + T::one()) / nf } else { -clamp.ln() / nf };
            dpsi[j] += le * d_ent;
            if !degenerate {
                let d_num = T::lit(4.0) * (nf * w - psi_sum[j]);
                dpsi[j] += lc * (-d_num / den);
            }
        }
        // Softmax, then the two layers.
        let inner: T = dpsi.iter().zip(&f.psi).map(|(&a, &b)| a * b).sum();
        let dl: Vec<T> = (0..k).map(|j| f.psi[j] * (dpsi[j] - inner)).collect();
        let mut dh = vec![T::zero(); p.hidden];
        for j in 0..k {
            g.b2[j] += dl[j];
            for r in 0..p.hidden {
                g.w2[j * p.hidden + r] += dl[j] * f.h[r];
                dh[r] += p.w2[j * p.hidden + r] * dl[j];
            }
        }
        for r in 0..p.hidden {
            let da = dh[r] * (T::one() - f.h[r] * f.h[r]);
            g.b1[r] += da;
            let row = &mut g.w1[r * p.d_in..(r + 1) * p.d_in];
            for (gw, &xv) in row.iter_mut().zip(&s.x) {
                *gw += da * xv;
            }
        }
    }
    let total = recon + le * entropy + lc * contrast;
    (LossBreakdown { total, reconstruction: recon, entropy, contrast, contrast_degenerate: degenerate }, grad)
}

pub fn offline_loss<T: Real>(params: &ClassifierParams<T>, batch: &[Sample<T>], hyper: &Hyperparams) -> LossBreakdown<T> {
    loss_impl(params, batch, hyper, false).0
}

pub fn offline_loss_and_grad<T: Real>(
    params: &ClassifierParams<T>,
    batch: &[Sample<T>],
    hyper: &Hyperparams,
) -> (LossBreakdown<T>, Gradient<T>) {
    let (l, g) = loss_impl(params, batch, hyper, true);
    (l, g.expect("gradient requested"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    pub params: ClassifierParams<f64>,
    /// Total loss before each gradient step, plus the final loss.
    pub loss_trace: Vec<f64>,
    /// Reconstruction component at the same points.
    pub reconstruction_trace: Vec<f64>,
}

/// Seeded centroid picks: first uniform, then proportional to the squared
/// distance to the nearest pick so far.
fn seed_centroids(samples: &[Sample<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let dist = |a: &Sample<f64>, b: &Sample<f64>| a.x.iter().zip(&b.x).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
    let mut picks = vec![rng.gen_range(0..samples.len())];
    let mut nearest: Vec<f64> = samples.iter().map(|s| dist(s, &samples[picks[0]])).collect();
    while picks.len() < k {
        let next = match WeightedIndex::new(&nearest) {
            Ok(wi) => wi.sample(rng),
            // Every remaining sample coincides with a pick.
            Err(_) => rng.gen_range(0..samples.len()),
        };
        picks.push(next);
        for (d, s) in nearest.iter_mut().zip(samples) {
            *d = d.min(dist(s, &samples[next]));
        }
    }
    picks
}

/// Full-batch gradient descent on all parameter blocks.
pub fn offline_train(history: &[WeatherDay], hyper: &Hyperparams, seed: u64) -> Result<TrainedClassifier, PricingError> {
    hyper.validate()?;
    if history.len() < hyper.k {
        return Err(PricingError::Config {
            field: "train.history_days",
            reason: format!("need at least k = {} days, got {}", hyper.k, history.len()),
        });
    }
    let norm = Normalization::fit(history);
    if 2 * norm.slots() != hyper.d_in {
        return Err(PricingError::Dimension(format!(
            "d_in = {} but the weather has {} slots per day",
            hyper.d_in,
            norm.slots()
        )));
    }
    let samples: Vec<Sample<f64>> = history.iter().map(|d| norm.sample_day(d)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ClassifierParams::zeros(hyper.k, hyper.hidden, norm);
    let a = hyper.init_scale;
    for block in [&mut params.w1, &mut params.b1, &mut params.w2, &mut params.b2] {
        for v in block.iter_mut() {
            *v = if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 };
        }
    }
    let k = hyper.k;
    for (j, &i) in seed_centroids(&samples, k, &mut rng).iter().enumerate() {
        for t in 0..params.slots() {
            params.mu_temp[t * k + j] = samples[i].y_temp[t];
            params.mu_solar[t * k + j] = samples[i].y_solar[t];
        }
    }

    let mut loss_trace = Vec::with_capacity(hyper.offline_epochs + 1);
    let mut reconstruction_trace = Vec::with_capacity(hyper.offline_epochs + 1);
    let lr = hyper.gamma_offline;
    for epoch in 0..hyper.offline_epochs {
        let (loss, grad) = offline_loss_and_grad(&params, &samples, hyper);
        loss_trace.push(loss.total);
        reconstruction_trace.push(loss.reconstruction);
        if !loss.total.is_finite() || loss.total > 1e6 {
            return Err(PricingError::Divergence { epoch, loss: loss.total, trace: loss_trace });
        }
        for (p, g) in params.blocks_mut().into_iter().zip(grad.blocks()) {
            for (pv, gv) in p.iter_mut().zip(g) {
                *pv -= lr * gv;
            }
        }
    }
    let last = offline_loss(&params, &samples, hyper);
    if !last.total.is_finite() || last.total > 1e6 {
        let epoch = hyper.offline_epochs;
        return Err(PricingError::Divergence { epoch, loss: last.total, trace: loss_trace });
    }
    loss_trace.push(last.total);
    reconstruction_trace.push(last.reconstruction);
    Ok(TrainedClassifier { params, loss_trace, reconstruction_trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(slots: usize) -> Normalization<f64> {
        Normalization {
            temp_mean: vec![0.0; slots],
            temp_scale: vec![1.0; slots],
            solar_mean: vec![0.0; slots],
            solar_scale: vec![1.0; slots],
        }
    }

    #[test]
    fn zero_output_layer_is_uniform() {
        let mut p = ClassifierParams::<f64>::zeros(6, 5, norm(3));
        p.w1.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64).sin());
        let psi = classifier_forward(&p, &[1.0, -2.0, 0.5, 0.0, 3.0, 1.0]);
        for w in &psi {
            assert!((w - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_bias_dominates() {
        let mut p = ClassifierParams::<f64>::zeros(6, 5, norm(3));
        p.b2[0] = 10.0;
        let psi = classifier_forward(&p, &[0.0; 6]);
        assert!(psi[0] > 0.999);
        assert!((psi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_only_closed_form() {
        let hyper = Hyperparams { k: 2, ..Default::default() };
        let p = ClassifierParams::<f64>::zeros(2, 3, norm(2));
        // Centroids are zero and ψ uniform, so reconstruction is exact for
        // zero targets.
        let batch = vec![Sample { x: vec![0.3, 0.1, -0.2, 0.4], y_temp: vec![0.0; 2], y_solar: vec![0.0; 2] }];
        let l = offline_loss(&p, &batch, &hyper);
        assert_eq!(l.reconstruction, 0.0);
        assert_eq!(l.contrast, 0.0);
        assert!((l.entropy - 2f64.ln()).abs() < 1e-15);
        assert!((l.total - (-0.4 * 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn identical_contexts_flag_contrast() {
        let hyper = Hyperparams::default();
        let p = ClassifierParams::<f64>::zeros(6, 3, norm(2));
        let s = Sample { x: vec![1.0; 4], y_temp: vec![0.0; 2], y_solar: vec![0.0; 2] };
        let l = offline_loss(&p, &[s.clone(), s], &hyper);
        assert!(l.contrast_degenerate);
        assert_eq!(l.contrast, 0.0);
    }
}
