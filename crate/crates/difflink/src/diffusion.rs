//! Gaussian-mixture diffusion with a closed-form denoiser.
//!
//! The generative target is a mixture of per-concept Gaussian prototypes, so
//! the marginal density at every chain position is known exactly and the
//! noise prediction is the analytic score instead of a trained network. That
//! keeps the whole reverse chain verifiable: forward noising, score, noise
//! prediction, ancestral reverse steps, and shared/local split sampling are
//! all pure functions of their inputs and named random streams.

use crate::error::{Error, Result};
use crate::rng::{labels, RngStreams, Stream};
use sha2::{Digest, Sha256};

/// Largest admissible terminal signal fraction: the end of the chain must be
/// close to pure noise or initializing from N(0, I) is meaningless.
pub const ALPHA_BAR_END_MAX: f64 = 0.02;

/// Diffusion constants for a T-step chain.
///
/// `alpha_bar(0) = 1` is stored so that reverse-step variances and the
/// terminal step are uniform lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>, // length T + 1, alpha_bars[0] = 1
}

impl NoiseSchedule {
    /// Linear beta ramp from `beta_start` to `beta_end` over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::domain("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::domain(format!(
                "beta range ({beta_start}, {beta_end}) must satisfy 0 < start <= end < 1"
            )));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Self::from_betas(betas)
    }

    /// Build from an explicit beta sequence.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::domain("schedule needs at least one step"));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::domain("every beta must lie in (0, 1)"));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        let end = *alpha_bars.last().unwrap();
        if end > ALPHA_BAR_END_MAX {
            return Err(Error::domain(format!(
                "chain does not reach noise: alpha_bar_T = {end:.6} > {ALPHA_BAR_END_MAX}"
            )));
        }
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.betas.len()
    }

    /// beta_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// alpha_t for t in 1..=T.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product of alphas, defined for t in 0..=T.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Ancestral reverse-step noise scale:
    /// sigma_t^2 = beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t).
    /// sigma_1 = 0 because alpha_bar_0 = 1, so the last step is deterministic.
    pub fn sigma(&self, t: usize) -> f64 {
        let var = self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t));
        var.sqrt()
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.betas.len() as u64).to_le_bytes());
        for b in &self.betas {
            h.update(b.to_bits().to_le_bytes());
        }
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.total_steps() {
            return Err(Error::domain(format!(
                "step {t} outside chain range 1..={}",
                self.total_steps()
            )));
        }
        Ok(())
    }
}

/// Image dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub fn new(width: usize, height: usize) -> Self {
        Dims { width, height }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A flat image tensor plus its chain position.
///
/// `step = T` is pure noise, `step = 0` a finished sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub data: Vec<f64>,
    pub dims: Dims,
    pub step: usize,
}

impl Latent {
    pub fn new(data: Vec<f64>, dims: Dims, step: usize) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::dimension(format!(
                "latent has {} values for {}x{} pixels",
                data.len(),
                dims.width,
                dims.height
            )));
        }
        Ok(Latent { data, dims, step })
    }

    pub fn zeros(dims: Dims) -> Self {
        Latent {
            data: vec![0.0; dims.len()],
            dims,
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// One Gaussian prototype bound to a concept.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub concept: String,
    pub weight: f64,
    pub mean: Vec<f64>,
    pub sigma0: f64,
}

/// The generative target: a weighted mixture of concept prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    components: Vec<Component>,
    dims: Dims,
}

impl MixtureModel {
    /// Normalizes weights to sum to one; rejects inconsistent dimensions,
    /// non-positive weights and negative sigma.
    pub fn new(components: Vec<Component>, dims: Dims) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::domain("mixture needs at least one component"));
        }
        let mut total = 0.0;
        for c in &components {
            if c.mean.len() != dims.len() {
                return Err(Error::dimension(format!(
                    "component {:?} mean has {} values for {}x{} pixels",
                    c.concept,
                    c.mean.len(),
                    dims.width,
                    dims.height
                )));
            }
            if !(c.weight > 0.0) {
                return Err(Error::domain(format!(
                    "component {:?} weight must be positive",
                    c.concept
                )));
            }
            if c.sigma0 < 0.0 {
                return Err(Error::domain(format!(
                    "component {:?} sigma0 must be >= 0",
                    c.concept
                )));
            }
            total += c.weight;
        }
        let components = components
            .into_iter()
            .map(|mut c| {
                c.weight /= total;
                c
            })
            .collect();
        Ok(MixtureModel { components, dims })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn concepts(&self) -> impl Iterator<Item = &str> {
        self.components.iter().map(|c| c.concept.as_str())
    }

    pub fn has_concept(&self, concept: &str) -> bool {
        self.components.iter().any(|c| c.concept == concept)
    }

    /// The prototype image for a concept, as a finished latent.
    pub fn prototype(&self, concept: &str) -> Option<Latent> {
        self.components
            .iter()
            .find(|c| c.concept == concept)
            .map(|c| Latent {
                data: c.mean.clone(),
                dims: self.dims,
                step: 0,
            })
    }
}

/// The concepts (with weights) a sampling phase is conditioned on.
///
/// Weights are kept sorted by concept id and normalized, so equal conditions
/// have equal fingerprints regardless of construction order.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    weights: Vec<(String, f64)>,
}

impl Condition {
    pub fn uniform<I, S>(concepts: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ids: Vec<String> = concepts.into_iter().map(Into::into).collect();
        let w = 1.0 / ids.len().max(1) as f64;
        Self::weighted(ids.into_iter().map(|c| (c, w)))
    }

    pub fn weighted<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut weights: Vec<(String, f64)> =
            pairs.into_iter().map(|(c, w)| (c.into(), w)).collect();
        if weights.is_empty() {
            return Err(Error::domain("condition must enable at least one concept"));
        }
        weights.sort_by(|a, b| a.0.cmp(&b.0));
        weights.dedup_by(|a, b| {
            if a.0 == b.0 {
                b.1 += a.1;
                true
            } else {
                false
            }
        });
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        if !(total > 0.0) {
            return Err(Error::domain(
                "condition weights must sum to a positive value",
            ));
        }
        for (_, w) in weights.iter_mut() {
            *w /= total;
        }
        Ok(Condition { weights })
    }

    pub fn concepts(&self) -> impl Iterator<Item = &str> {
        self.weights.iter().map(|(c, _)| c.as_str())
    }

    pub fn weights(&self) -> &[(String, f64)] {
        &self.weights
    }

    pub fn contains(&self, concept: &str) -> bool {
        self.weights.iter().any(|(c, _)| c == concept)
    }

    /// Restrict to the concepts present in `mixture`, renormalizing.
    /// Errors if nothing survives.
    pub fn restrict_to(&self, mixture: &MixtureModel) -> Result<Condition> {
        Condition::weighted(
            self.weights
                .iter()
                .filter(|(c, _)| mixture.has_concept(c))
                .map(|(c, w)| (c.clone(), *w)),
        )
        .map_err(|_| Error::domain("condition shares no concept with the mixture".to_string()))
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        for (c, w) in &self.weights {
            h.update([c.len() as u8]);
            h.update(c.as_bytes());
            h.update(w.to_bits().to_le_bytes());
        }
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }

    fn validate_against(&self, mixture: &MixtureModel) -> Result<()> {
        for (c, _) in &self.weights {
            if !mixture.has_concept(c) {
                return Err(Error::domain(format!(
                    "condition references unknown concept {c:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Stream indices used by one sampling run. The labels are fixed; callers
/// pick indices so that independent runs get independent streams while a
/// split run and its monolithic counterpart share them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamIndices {
    pub init: u64,
    pub shared: u64,
    pub local: u64,
    pub channel: u64,
}

/// Closed-form forward noising: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
pub fn forward_diffuse(
    x0: &Latent,
    t: usize,
    eps: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Latent> {
    schedule.check_step(t)?;
    if eps.len() != x0.len() {
        return Err(Error::dimension(format!(
            "noise has {} values, latent has {}",
            eps.len(),
            x0.len()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x0
        .data
        .iter()
        .zip(eps)
        .map(|(x, e)| sa * x + sn * e)
        .collect();
    Ok(Latent {
        data,
        dims: x0.dims,
        step: t,
    })
}

fn schedule_free_checks(x: &Latent, mixture: &MixtureModel, condition: &Condition) -> Result<()> {
    if x.len() != mixture.dims().len() {
        return Err(Error::dimension(format!(
            "latent has {} values, mixture expects {}",
            x.len(),
            mixture.dims().len()
        )));
    }
    condition.validate_against(mixture)
}

struct Enabled<'a> {
    component: &'a Component,
    weight: f64,
}

fn enabled_components<'a>(mixture: &'a MixtureModel, condition: &Condition) -> Vec<Enabled<'a>> {
    let mut enabled = Vec::new();
    let mut total = 0.0;
    for c in mixture.components() {
        if let Some((_, cw)) = condition.weights().iter().find(|(id, _)| *id == c.concept) {
            let w = c.weight * cw;
            total += w;
            enabled.push(Enabled {
                component: c,
                weight: w,
            });
        }
    }
    for e in enabled.iter_mut() {
        e.weight /= total;
    }
    enabled
}

fn score_inner(x: &[f64], alpha_bar: f64, enabled: &[Enabled]) -> Result<Vec<f64>> {
    let n = x.len() as f64;
    let sa = alpha_bar.sqrt();
    // log responsibilities via log-sum-exp
    let mut logs = Vec::with_capacity(enabled.len());
    for e in enabled {
        let s2 = alpha_bar * e.component.sigma0 * e.component.sigma0 + (1.0 - alpha_bar);
        let mut sq = 0.0;
        for (xi, mi) in x.iter().zip(&e.component.mean) {
            let d = xi - sa * mi;
            sq += d * d;
        }
        logs.push(e.weight.ln() - 0.5 * n * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * sq / s2);
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut resp: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = resp.iter().sum();
    for r in resp.iter_mut() {
        *r /= total;
    }

    let mut grad = vec![0.0; x.len()];
    for (r, e) in resp.iter().zip(enabled) {
        let s2 = alpha_bar * e.component.sigma0 * e.component.sigma0 + (1.0 - alpha_bar);
        for ((g, xi), mi) in grad.iter_mut().zip(x).zip(&e.component.mean) {
            *g += r * (-(xi - sa * mi) / s2);
        }
    }
    Ok(grad)
}

/// Gradient of the log marginal density at chain position t:
/// grad log p_t(x) with p_t = sum_i w_i N(sqrt(abar_t) mu_i, s_i^2 I),
/// s_i^2 = abar_t sigma0_i^2 + (1 - abar_t). Responsibilities go through
/// log-sum-exp so sharp components stay finite.
pub fn mixture_score(
    x: &Latent,
    t: usize,
    mixture: &MixtureModel,
    condition: &Condition,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    schedule_free_checks(x, mixture, condition)?;
    let enabled = enabled_components(mixture, condition);
    score_inner(&x.data, schedule.alpha_bar(t), &enabled)
}

/// Analytic noise prediction: eps_hat = -sqrt(1 - abar_t) * score.
pub fn predict_noise(
    x: &Latent,
    t: usize,
    mixture: &MixtureModel,
    condition: &Condition,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let score = mixture_score(x, t, mixture, condition, schedule)?;
    let scale = (1.0 - schedule.alpha_bar(t)).sqrt();
    Ok(score.into_iter().map(|g| -scale * g).collect())
}

/// One ancestral reverse step from position t to t - 1:
/// x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)
///           + sigma_t z.
/// No noise is drawn when sigma_t = 0 (always the case at t = 1).
pub fn reverse_step(
    x_t: &Latent,
    t: usize,
    eps_hat: &[f64],
    schedule: &NoiseSchedule,
    stream: &mut Stream,
) -> Result<Latent> {
    if t == 0 {
        return Err(Error::domain("chain already finished (t = 0)"));
    }
    schedule.check_step(t)?;
    if eps_hat.len() != x_t.len() {
        return Err(Error::dimension(format!(
            "eps_hat has {} values, latent has {}",
            eps_hat.len(),
            x_t.len()
        )));
    }
    let beta = schedule.beta(t);
    let coeff = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let sigma = schedule.sigma(t);
    let mut data: Vec<f64> = x_t
        .data
        .iter()
        .zip(eps_hat)
        .map(|(x, e)| inv_sqrt_alpha * (x - coeff * e))
        .collect();
    if sigma > 0.0 {
        for v in data.iter_mut() {
            *v += sigma * stream.standard_normal();
        }
    }
    Ok(Latent {
        data,
        dims: x_t.dims,
        step: t - 1,
    })
}

/// Run reverse steps t = t_hi .. t_lo (inclusive, descending) under one
/// condition, drawing reverse noise from `stream`.
pub fn run_segment(
    mut x: Latent,
    t_hi: usize,
    t_lo: usize,
    mixture: &MixtureModel,
    condition: &Condition,
    schedule: &NoiseSchedule,
    stream: &mut Stream,
) -> Result<Latent> {
    for t in (t_lo..=t_hi).rev() {
        let eps_hat = predict_noise(&x, t, mixture, condition, schedule)?;
        x = reverse_step(&x, t, &eps_hat, schedule, stream)?;
    }
    Ok(x)
}

/// Draw the initial pure-noise latent from the "init" stream.
pub fn init_latent(dims: Dims, schedule: &NoiseSchedule, stream: &mut Stream) -> Latent {
    let mut data = vec![0.0; dims.len()];
    stream.fill_standard_normal(&mut data);
    Latent {
        data,
        dims,
        step: schedule.total_steps(),
    }
}

/// Full ancestral sampling run.
///
/// Reverse noise for step t comes from the "shared" stream while
/// t > T - switch_step and from the "local" stream afterwards, so a
/// monolithic run lines up bit-for-bit with a split run whose shared phase
/// has `switch_step` steps.
pub fn sample(
    schedule: &NoiseSchedule,
    mixture: &MixtureModel,
    condition: &Condition,
    dims: Dims,
    streams: &RngStreams,
    idx: StreamIndices,
    switch_step: usize,
) -> Result<Latent> {
    if switch_step > schedule.total_steps() {
        return Err(Error::domain(format!(
            "switch step {switch_step} exceeds chain length {}",
            schedule.total_steps()
        )));
    }
    let t_switch = schedule.total_steps() - switch_step;
    let mut init = streams.stream(labels::INIT, idx.init);
    let x = init_latent(dims, schedule, &mut init);
    let mut shared = streams.stream(labels::SHARED, idx.shared);
    let x = run_segment(
        x,
        schedule.total_steps(),
        t_switch + 1,
        mixture,
        condition,
        schedule,
        &mut shared,
    )?;
    let mut local = streams.stream(labels::LOCAL, idx.local);
    run_segment(x, t_switch, 1, mixture, condition, schedule, &mut local)
}

/// How a handoff travels from the shared executor to the local device.
pub trait HandoffLink {
    /// Returns the latent as received plus the number of corrupted bits.
    fn relay(&self, handoff: &Latent, stream: &mut Stream) -> Result<(Latent, u64)>;
}

/// Result of a split sampling run.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    /// The intermediate latent exactly as it left the shared executor.
    pub handoff: Latent,
    /// What the local device received (equals `handoff` without a link).
    pub received: Latent,
    /// The finished sample after the local phase.
    pub final_latent: Latent,
    /// Bits corrupted in transit (0 without a link).
    pub flipped_bits: u64,
}

/// Split sampling: `shared_steps` reverse steps under `shared_cond`, an
/// optional lossy handoff, then the remaining steps under `local_cond`.
pub fn split_sample(
    schedule: &NoiseSchedule,
    mixture: &MixtureModel,
    shared_cond: &Condition,
    local_cond: &Condition,
    shared_steps: usize,
    link: Option<&dyn HandoffLink>,
    dims: Dims,
    streams: &RngStreams,
    idx: StreamIndices,
) -> Result<SplitOutcome> {
    let t_total = schedule.total_steps();
    if shared_steps > t_total {
        return Err(Error::domain(format!(
            "shared steps {shared_steps} exceed chain length {t_total}"
        )));
    }
    let mut init = streams.stream(labels::INIT, idx.init);
    let x = init_latent(dims, schedule, &mut init);
    let mut shared = streams.stream(labels::SHARED, idx.shared);
    let handoff = run_segment(
        x,
        t_total,
        t_total - shared_steps + 1,
        mixture,
        shared_cond,
        schedule,
        &mut shared,
    )?;
    let (received, flipped_bits) = match link {
        Some(link) => {
            let mut channel = streams.stream(labels::CHANNEL, idx.channel);
            link.relay(&handoff, &mut channel)?
        }
        None => (handoff.clone(), 0),
    };
    let mut local = streams.stream(labels::LOCAL, idx.local);
    let final_latent = run_segment(
        received.clone(),
        t_total - shared_steps,
        1,
        mixture,
        local_cond,
        schedule,
        &mut local,
    )?;
    Ok(SplitOutcome {
        handoff,
        received,
        final_latent,
        flipped_bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims1() -> Dims {
        Dims::new(1, 1)
    }

    fn single_mixture(mu: Vec<f64>, sigma0: f64, dims: Dims) -> MixtureModel {
        MixtureModel::new(
            vec![Component {
                concept: "a".into(),
                weight: 1.0,
                mean: mu,
                sigma0,
            }],
            dims,
        )
        .unwrap()
    }

    #[test]
    fn single_step_schedule_rejected_when_signal_survives() {
        // alpha_bar = 0.5 > 0.02
        let err = NoiseSchedule::linear(1, 0.5, 0.5).unwrap_err();
        assert!(err.to_string().contains("does not reach noise"));
    }

    #[test]
    fn default_ramp_product_matches_direct_evaluation() {
        // direct product of (1 - beta_t) for the linear 0.1..0.6 ramp at T = 11
        let s = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        assert!((s.alpha_bar(11) - 0.006202696499999999).abs() < 1e-15);
        assert!(s.alpha_bar(11) <= ALPHA_BAR_END_MAX);
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn schedule_domain_violations() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.6).is_err());
        assert!(NoiseSchedule::linear(11, 1.2, 1.3).is_err());
        assert!(NoiseSchedule::linear(11, 0.6, 0.1).is_err());
        assert!(NoiseSchedule::linear(11, 0.0, 0.6).is_err());
    }

    #[test]
    fn alpha_bar_strictly_decreasing_and_sigma_sane() {
        let s = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        for t in 1..=11 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.sigma(t) >= 0.0);
        }
        assert_eq!(s.sigma(1), 0.0);
    }

    #[test]
    fn forward_zero_noise_and_zero_signal() {
        let s = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let dims = Dims::new(2, 2);
        let x0 = Latent::new(vec![0.2, 0.4, 0.6, 0.8], dims, 0).unwrap();
        let zeros = vec![0.0; 4];
        let xt = forward_diffuse(&x0, 5, &zeros, &s).unwrap();
        let sa = s.alpha_bar(5).sqrt();
        for (o, x) in xt.data.iter().zip(&x0.data) {
            assert!((o - sa * x).abs() < 1e-15);
        }
        let zero_latent = Latent::zeros(dims);
        let eps = vec![1.0, -1.0, 0.5, 2.0];
        let xt = forward_diffuse(&zero_latent, 5, &eps, &s).unwrap();
        let sn = (1.0 - s.alpha_bar(5)).sqrt();
        for (o, e) in xt.data.iter().zip(&eps) {
            assert!((o - sn * e).abs() < 1e-15);
        }
        assert_eq!(xt.step, 5);
    }

    #[test]
    fn forward_at_chain_end_matches_hand_values() {
        // element-wise sqrt(abar_11) x0 + sqrt(1 - abar_11) eps,
        // evaluated separately for the 0.1..0.6 ramp
        let s = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let dims = Dims::new(4, 1);
        let x0 = Latent::new(vec![0.0, 0.25, 0.5, 1.0], dims, 0).unwrap();
        let eps = vec![1.0, -0.5, 0.25, 2.0];
        let xt = forward_diffuse(&x0, 11, &eps, &s).unwrap();
        let expect = [
            0.9968938275964998,
            -0.4787576138805281,
            0.28860205673456857,
            2.072544854863887,
        ];
        for (o, e) in xt.data.iter().zip(expect) {
            assert!((o - e).abs() < 1e-12, "{o} vs {e}");
        }
    }

    #[test]
    fn forward_dimension_mismatch() {
        let s = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let x0 = Latent::zeros(Dims::new(2, 2));
        assert!(forward_diffuse(&x0, 3, &[0.0; 3], &s).is_err());
    }

    #[test]
    fn score_single_component_is_gaussian_gradient() {
        let s = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let dims = Dims::new(2, 1);
        let mix = single_mixture(vec![0.3, 0.7], 0.1, dims);
        let cond = Condition::uniform(["a"]).unwrap();
        let x = Latent::new(vec![0.5, -0.2], dims, 6).unwrap();
        let t = 6;
        let g = mixture_score(&x, t, &mix, &cond, &s).unwrap();
        let ab = s.alpha_bar(t);
        let s2 = ab * 0.01 + (1.0 - ab);
        for (i, gi) in g.iter().enumerate() {
            let expect = -(x.data[i] - ab.sqrt() * mix.components()[0].mean[i]) / s2;
            assert!((gi - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn score_symmetric_mixture_vanishes_at_origin() {
        let s = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let dims = Dims::new(2, 1);
        let mix = MixtureModel::new(
            vec![
                Component {
                    concept: "plus".into(),
                    weight: 0.5,
                    mean: vec![0.4, -0.6],
                    sigma0: 0.1,
                },
                Component {
                    concept: "minus".into(),
                    weight: 0.5,
                    mean: vec![-0.4, 0.6],
                    sigma0: 0.1,
                },
            ],
            dims,
        )
        .unwrap();
        let cond = Condition::uniform(["plus", "minus"]).unwrap();
        let x = Latent::zeros(dims);
        let g = mixture_score(&x, 4, &mix, &cond, &s).unwrap();
        for gi in g {
            assert!(gi.abs() < 1e-12);
        }
    }

    /// Central finite differences of the explicit log marginal density.
    fn fd_score(
        x: &[f64],
        t: usize,
        mix: &MixtureModel,
        cond: &Condition,
        s: &NoiseSchedule,
        h: f64,
    ) -> Vec<f64> {
        let log_p = |p: &[f64]| -> f64 {
            let ab = s.alpha_bar(t);
            let enabled = enabled_components(mix, cond);
            let n = p.len() as f64;
            let logs: Vec<f64> = enabled
                .iter()
                .map(|e| {
                    let s2 = ab * e.component.sigma0 * e.component.sigma0 + (1.0 - ab);
                    let sq: f64 = p
                        .iter()
                        .zip(&e.component.mean)
                        .map(|(xi, mi)| (xi - ab.sqrt() * mi).powi(2))
                        .sum();
                    e.weight.ln() - 0.5 * n * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * sq / s2
                })
                .collect();
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
        };
        (0..x.len())
            .map(|i| {
                let mut hi = x.to_vec();
                let mut lo = x.to_vec();
                hi[i] += h;
                lo[i] -= h;
                (log_p(&hi) - log_p(&lo)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn score_matches_finite_differences_on_asymmetric_mixture() {
        let s = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let dims = Dims::new(3, 1);
        let mix = MixtureModel::new(
            vec![
                Component {
                    concept: "a".into(),
                    weight: 0.7,
                    mean: vec![0.2, 0.9, 0.1],
                    sigma0: 0.05,
                },
                Component {
                    concept: "b".into(),
                    weight: 0.3,
                    mean: vec![0.8, 0.1, 0.5],
                    sigma0: 0.2,
                },
            ],
            dims,
        )
        .unwrap();
        let cond = Condition::uniform(["a", "b"]).unwrap();
        let x = Latent::new(vec![0.31, -0.12, 0.77], dims, 5).unwrap();
        for t in [2, 5, 9] {
            let g = mixture_score(&x, t, &mix, &cond, &s).unwrap();
            let fd = fd_score(&x.data, t, &mix, &cond, &s, 1e-6);
            for (gi, fi) in g.iter().zip(&fd) {
                let rel = (gi - fi).abs() / fi.abs().max(1e-9);
                assert!(rel < 1e-6, "t={t}: {gi} vs {fi}");
            }
        }
    }

    #[test]
    fn score_rejects_unknown_or_empty_condition() {
        let s = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let dims = dims1();
        let mix = single_mixture(vec![0.5], 0.1, dims);
        let x = Latent::zeros(dims);
        let cond = Condition::uniform(["nope"]).unwrap();
        assert!(mixture_score(&x, 3, &mix, &cond, &s).is_err());
        assert!(Condition::uniform(Vec::<String>::new()).is_err());
    }

    #[test]
    fn predict_noise_is_scaled_score() {
        let s = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let dims = Dims::new(2, 1);
        let mix = single_mixture(vec![0.3, 0.7], 0.15, dims);
        let cond = Condition::uniform(["a"]).unwrap();
        let x = Latent::new(vec![1.3, -0.4], dims, 7).unwrap();
        let t = 7;
        let eps = predict_noise(&x, t, &mix, &cond, &s).unwrap();
        let g = mixture_score(&x, t, &mix, &cond, &s).unwrap();
        let scale = (1.0 - s.alpha_bar(t)).sqrt();
        for (e, gi) in eps.iter().zip(&g) {
            assert!((e + scale * gi).abs() < 1e-15);
        }
    }

    #[test]
    fn predict_noise_zero_at_scaled_mode_of_sharp_component() {
        let s = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let dims = Dims::new(2, 1);
        let mix = single_mixture(vec![0.25, 0.5], 0.0, dims);
        let cond = Condition::uniform(["a"]).unwrap();
        let t = 4;
        let sa = s.alpha_bar(t).sqrt();
        let x = Latent::new(vec![0.25 * sa, 0.5 * sa], dims, t).unwrap();
        let eps = predict_noise(&x, t, &mix, &cond, &s).unwrap();
        for e in eps {
            assert!(e.abs() < 1e-12);
        }
    }

    #[test]
    fn reverse_step_matches_scalar_hand_evaluation() {
        // betas [0.5, 0.2, 0.9, 0.95] give abar_1 = 0.5, abar_2 = 0.4,
        // so at t = 2: sigma^2 = 0.2 * 0.5 / 0.6 = 1/6 and
        // mean = (x - 0.2/sqrt(0.6) eps) / sqrt(0.8).
        let s = NoiseSchedule::from_betas(vec![0.5, 0.2, 0.9, 0.95]).unwrap();
        assert!((s.alpha_bar(2) - 0.4).abs() < 1e-15);
        assert!((s.alpha_bar(1) - 0.5).abs() < 1e-15);
        assert!((s.sigma(2).powi(2) - 1.0 / 6.0).abs() < 1e-15);

        let streams = RngStreams::new(9);
        let z = streams.stream(labels::LOCAL, 0).standard_normal();
        let x = Latent::new(vec![1.5], dims1(), 2).unwrap();
        let mut stream = streams.stream(labels::LOCAL, 0);
        let out = reverse_step(&x, 2, &[0.3], &s, &mut stream).unwrap();
        let mean = 1.5904484427463985; // (1.5 - 0.2/sqrt(0.6) * 0.3) / sqrt(0.8)
        let expect = mean + (1.0f64 / 6.0).sqrt() * z;
        assert!((out.data[0] - expect).abs() < 1e-12);
        assert_eq!(out.step, 1);
    }

    #[test]
    fn reverse_step_at_t1_is_deterministic() {
        let s = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let streams = RngStreams::new(1);
        let x = Latent::new(vec![0.9], dims1(), 1).unwrap();
        let mut a = streams.stream(labels::LOCAL, 0);
        let mut b = streams.stream(labels::LOCAL, 99);
        let out_a = reverse_step(&x, 1, &[0.2], &s, &mut a).unwrap();
        let out_b = reverse_step(&x, 1, &[0.2], &s, &mut b).unwrap();
        assert_eq!(out_a.data, out_b.data);
        assert_eq!(out_a.step, 0);
        // and the stream was not advanced
        assert_eq!(a.next_u64(), streams.stream(labels::LOCAL, 0).next_u64());
    }

    #[test]
    fn reverse_step_errors() {
        let s = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let streams = RngStreams::new(1);
        let x = Latent::new(vec![0.9], dims1(), 1).unwrap();
        let mut st = streams.stream(labels::LOCAL, 0);
        assert!(reverse_step(&x, 0, &[0.2], &s, &mut st).is_err());
        assert!(reverse_step(&x, 2, &[0.2, 0.3], &s, &mut st).is_err());
    }

    #[test]
    fn sample_is_deterministic_per_seed() {
        let s = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let dims = Dims::new(4, 4);
        let mix = single_mixture(vec![0.5; 16], 0.1, dims);
        let cond = Condition::uniform(["a"]).unwrap();
        let streams = RngStreams::new(1234);
        let a = sample(&s, &mix, &cond, dims, &streams, StreamIndices::default(), 0).unwrap();
        let b = sample(&s, &mix, &cond, dims, &streams, StreamIndices::default(), 0).unwrap();
        assert_eq!(a, b);
        let c = sample(
            &s,
            &mix,
            &cond,
            dims,
            &RngStreams::new(1235),
            StreamIndices::default(),
            0,
        )
        .unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn sample_splits_between_symmetric_prototypes() {
        // two equal-weight components; over many seeds the nearest-prototype
        // tally should land within 4 binomial standard deviations of 100/200
        let s = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let dims = Dims::new(3, 3);
        let mu: Vec<f64> = vec![0.9, 0.1, 0.9, 0.1, 0.9, 0.1, 0.9, 0.1, 0.9];
        let neg: Vec<f64> = mu.iter().map(|v| 1.0 - v).collect();
        let mix = MixtureModel::new(
            vec![
                Component {
                    concept: "plus".into(),
                    weight: 0.5,
                    mean: mu.clone(),
                    sigma0: 0.1,
                },
                Component {
                    concept: "minus".into(),
                    weight: 0.5,
                    mean: neg.clone(),
                    sigma0: 0.1,
                },
            ],
            dims,
        )
        .unwrap();
        let cond = Condition::uniform(["plus", "minus"]).unwrap();
        let mut plus_count = 0;
        for seed in 0..200 {
            let out = sample(
                &s,
                &mix,
                &cond,
                dims,
                &RngStreams::new(seed),
                StreamIndices::default(),
                0,
            )
            .unwrap();
            let d_plus: f64 = out.data.iter().zip(&mu).map(|(a, b)| (a - b).powi(2)).sum();
            let d_minus: f64 = out
                .data
                .iter()
                .zip(&neg)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            if d_plus < d_minus {
                plus_count += 1;
            }
        }
        // mean 100, sd sqrt(200 * 0.25) ~ 7.07; 4 sd band is [71, 129]
        assert!((71..=129).contains(&plus_count), "tally {plus_count}");
    }

    #[test]
    fn split_with_no_shared_steps_equals_monolithic() {
        let s = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let dims = Dims::new(4, 4);
        let mix = single_mixture(vec![0.4; 16], 0.1, dims);
        let cond = Condition::uniform(["a"]).unwrap();
        let streams = RngStreams::new(7);
        let idx = StreamIndices::default();
        let mono = sample(&s, &mix, &cond, dims, &streams, idx, 0).unwrap();
        let split = split_sample(&s, &mix, &cond, &cond, 0, None, dims, &streams, idx).unwrap();
        assert_eq!(mono, split.final_latent);
        assert_eq!(split.handoff.step, 11);
        assert_eq!(split.flipped_bits, 0);
    }

    #[test]
    fn split_rejects_excess_shared_steps() {
        let s = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let dims = dims1();
        let mix = single_mixture(vec![0.4], 0.1, dims);
        let cond = Condition::uniform(["a"]).unwrap();
        let streams = RngStreams::new(7);
        assert!(split_sample(
            &s,
            &mix,
            &cond,
            &cond,
            12,
            None,
            dims,
            &streams,
            StreamIndices::default()
        )
        .is_err());
    }

    #[test]
    fn marginal_preservation_under_forward_diffusion() {
        // forward-diffused draws from one component keep mean sqrt(abar) mu
        // and variance abar sigma0^2 + (1 - abar); checked at n = 10^4 with
        // the sampling-noise scale s_t as the mean yardstick
        let sched = NoiseSchedule::linear(11, 0.1, 0.6).unwrap();
        let dims = Dims::new(4, 4);
        let mu = [0.35; 16];
        let sigma0 = 0.3;
        let t = 6;
        let n = 10_000;
        let streams = RngStreams::new(77);
        let mut draws = streams.stream("marginal-test", 0);
        let mut sums = [0.0; 16];
        let mut sq_sums = [0.0; 16];
        for _ in 0..n {
            let x0: Vec<f64> = mu
                .iter()
                .map(|m| m + sigma0 * draws.standard_normal())
                .collect();
            let eps: Vec<f64> = (0..16).map(|_| draws.standard_normal()).collect();
            let x0 = Latent::new(x0, dims, 0).unwrap();
            let xt = forward_diffuse(&x0, t, &eps, &sched).unwrap();
            for (i, v) in xt.data.iter().enumerate() {
                sums[i] += v;
                sq_sums[i] += v * v;
            }
        }
        let ab = sched.alpha_bar(t);
        let want_mean = ab.sqrt() * 0.35;
        let want_var = ab * sigma0 * sigma0 + (1.0 - ab);
        let st = want_var.sqrt();
        for i in 0..16 {
            let mean = sums[i] / n as f64;
            let var = sq_sums[i] / n as f64 - mean * mean;
            assert!(
                (mean - want_mean).abs() <= 0.05 * st,
                "mean[{i}] = {mean} vs {want_mean}"
            );
            assert!(
                (var - want_var).abs() <= 0.05 * want_var,
                "var[{i}] = {var} vs {want_var}"
            );
        }
    }
}
