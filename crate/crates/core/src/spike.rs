//! Loss-spike detection, second-moment decay fits, five-stage segmentation
//! and the neutral/benign/malignant/catastrophic taxonomy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::RunTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeEvent {
    pub onset_step: usize,
    pub peak_step: usize,
    /// First step after the onset back below the baseline, or the last step
    /// of the series when the loss never returns.
    pub recovery_step: usize,
    pub recovered: bool,
    /// Peak loss over the trailing-median baseline at onset.
    pub peak_ratio: f64,
    pub baseline: f64,
}

impl SpikeEvent {
    pub fn contains(&self, step: usize) -> bool {
        (self.onset_step..=self.recovery_step).contains(&step)
    }
}

fn median(buf: &mut [f64]) -> f64 {
    buf.sort_by(|a, b| a.total_cmp(b));
    let n = buf.len();
    if n % 2 == 1 {
        buf[n / 2]
    } else {
        0.5 * (buf[n / 2 - 1] + buf[n / 2])
    }
}

/// Onset: first loss above `rho` times the median of the previous `window`
/// losses. Peak: the maximum up to recovery. Recovery: first later loss
/// below that median. Scanning resumes after each recovery, so excursions
/// never overlap.
pub fn detect_spikes(losses: &[f64], rho: f64, window: usize) -> Result<Vec<SpikeEvent>> {
    if !(rho > 1.0) {
        return Err(Error::InvalidParameter(format!("rho must exceed 1, got {rho}")));
    }
    if window == 0 {
        return Err(Error::InvalidParameter("window must be >= 1".into()));
    }
    let mut events = Vec::new();
    let mut buf = Vec::with_capacity(window);
    let mut t = window;
    while t < losses.len() {
        buf.clear();
        buf.extend_from_slice(&losses[t - window..t]);
        let base = median(&mut buf);
        if losses[t] > rho * base {
            let rec = (t + 1..losses.len()).find(|&s| losses[s] < base);
            let end = rec.unwrap_or(losses.len() - 1);
            let peak = (t..=end)
                .max_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(b.cmp(&a)))
                .unwrap_or(t);
            events.push(SpikeEvent {
                onset_step: t,
                peak_step: peak,
                recovery_step: end,
                recovered: rec.is_some(),
                peak_ratio: losses[peak] / base,
                baseline: base,
            });
            t = end + 1;
        } else {
            t += 1;
        }
    }
    Ok(events)
}

/// Steps bracketing the first sustained rise of the loss, read off the
/// rolling maximum `E_t = max L[t−window+1 ..= t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRise {
    /// First step where `E_t` exceeds `factor` times its running minimum.
    pub spike_step: usize,
    /// Where `E` bottoms out before `spike_step`: the last step of descent.
    pub pre_spike_step: usize,
}

pub fn envelope_rise(losses: &[f64], window: usize, factor: f64) -> Option<EnvelopeRise> {
    if window == 0 || losses.is_empty() {
        return None;
    }
    let mut best = (f64::INFINITY, 0usize);
    for t in 0..losses.len() {
        let lo = (t + 1).saturating_sub(window);
        let e = losses[lo..=t].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if t > 0 && e > factor * best.0 {
            return Some(EnvelopeRise { spike_step: t, pre_spike_step: best.1 });
        }
        if e < best.0 {
            best = (e, t);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub start: usize,
    pub end: usize,
    /// Fitted base of `√v_t ≈ C·αᵗ`.
    pub alpha_hat: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `log √v_t` against `t` on `[start, end)`, where
/// `v` holds second-moment magnitudes (`v_t`, not `√v_t`).
pub fn fit_decay(v: &[f64], start: usize, end: usize) -> Result<DecayFit> {
    if end > v.len() || end < start + 10 {
        return Err(Error::InsufficientWindow { start: start as i64, end: end as i64, len: v.len() });
    }
    let w = &v[start..end];
    if w.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidSeries("decay fit needs strictly positive finite values".into()));
    }
    let n = w.len() as f64;
    let ys: Vec<f64> = w.iter().map(|x| 0.5 * x.ln()).collect();
    let xm = (n - 1.0) / 2.0;
    let ym = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (y - ym);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    let sst: f64 = ys.iter().map(|y| (y - ym).powi(2)).sum();
    let sse: f64 = ys
        .iter()
        .enumerate()
        .map(|(i, y)| (y - ym - slope * (i as f64 - xm)).powi(2))
        .sum();
    let r2 = if sst <= f64::EPSILON * f64::EPSILON * n * ym.abs().max(1.0) {
        1.0
    } else {
        1.0 - sse / sst
    };
    Ok(DecayFit { start, end, alpha_hat: slope.exp(), r_squared: r2 })
}

/// Series consumed by [`segment_series`], one entry per step.
#[derive(Debug, Clone, Default)]
pub struct StageInputs {
    /// Loss after each step.
    pub loss: Vec<f64>,
    /// Second-moment magnitude per step (`‖√v̂‖²`).
    pub v: Vec<f64>,
    pub lambda_max_hhat: Vec<Option<f64>>,
    pub lambda_grad_hhat: Vec<Option<f64>>,
    /// `2/η_t`.
    pub threshold: Vec<f64>,
    pub beta2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentOptions {
    pub decay_window: usize,
    pub min_r_squared: f64,
    /// Allowed relative distance of the fitted α from `√β₂`.
    pub alpha_rel_tol: f64,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        Self { decay_window: 50, min_r_squared: 0.95, alpha_rel_tol: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageVerdict {
    pub stage: u8,
    /// `None` when the stage was not reached.
    pub passed: Option<bool>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSegmentation {
    /// `t0 … t5`; `None` marks a stage that was not detected.
    pub boundaries: [Option<usize>; 6],
    pub verdicts: Vec<StageVerdict>,
    /// Fit over the mismatch window `[t2, t4)`.
    pub mismatch_fit: Option<DecayFit>,
}

impl StageSegmentation {
    pub fn t(&self, i: usize) -> Option<usize> {
        self.boundaries[i]
    }

    pub fn strictly_ordered(&self) -> bool {
        self.boundaries.windows(2).all(|w| matches!(w, [Some(a), Some(b)] if a < b))
    }

    /// Stage number of `step` within the first cycle (steps past `t5` are
    /// back in stage 1).
    pub fn stage_of(&self, step: usize) -> u8 {
        if matches!(self.boundaries[5], Some(t5) if step >= t5) {
            return 1;
        }
        1 + self.boundaries[1..5].iter().filter(|b| matches!(b, Some(t) if *t <= step)).count() as u8
    }
}

pub fn segment_series(inp: &StageInputs, opts: &SegmentOptions) -> StageSegmentation {
    let n = inp.loss.len();
    let target = inp.beta2.sqrt();
    let w = opts.decay_window.max(10);
    let above = |x: &Option<f64>, k: usize| matches!(x, Some(l) if *l > inp.threshold[k]);

    let t1 = (1..n.saturating_sub(w) + 1).find(|&s| {
        fit_decay(&inp.v, s, s + w).is_ok_and(|f| {
            f.r_squared > opts.min_r_squared
                && f.alpha_hat < 1.0
                && (f.alpha_hat - target).abs() <= opts.alpha_rel_tol * target
        })
    });
    let t2 = (0..n).find(|&k| above(&inp.lambda_max_hhat[k], k));
    let t3 = t2.and_then(|t2| (t2..n).find(|&k| above(&inp.lambda_grad_hhat[k], k)));
    let t4 = t3.and_then(|t3| (t3..n.saturating_sub(1)).find(|&k| inp.v[k + 1] > inp.v[k]));
    let t5 = t4.and_then(|t4| {
        (t4 + 1..n).find(|&k| {
            matches!(inp.lambda_max_hhat[k], Some(l) if l < inp.threshold[k]) && inp.loss[k] < inp.loss[k - 1]
        })
    });
    let boundaries = [Some(0), t1, t2, t3, t4, t5];

    let mismatch_fit = match (t2, t4) {
        (Some(a), Some(b)) => fit_decay(&inp.v, a, b).ok(),
        _ => None,
    };

    let mut verdicts = Vec::with_capacity(5);
    verdicts.push(match t1 {
        Some(t1) => StageVerdict {
            stage: 1,
            passed: Some(inp.loss[t1] < inp.loss[0]),
            detail: format!("loss {:.3e} -> {:.3e}", inp.loss[0], inp.loss[t1]),
        },
        None => absent(1),
    });
    verdicts.push(match (t1, t2) {
        (Some(a), Some(b)) if b >= a + 10 => match fit_decay(&inp.v, a, b) {
            Ok(f) => StageVerdict {
                stage: 2,
                passed: Some(f.alpha_hat < 1.0 && (f.alpha_hat - target).abs() <= opts.alpha_rel_tol * target),
                detail: format!("alpha_hat {:.5} vs sqrt(beta2) {:.5}, r2 {:.4}", f.alpha_hat, target, f.r_squared),
            },
            Err(e) => StageVerdict { stage: 2, passed: Some(false), detail: e.to_string() },
        },
        (Some(_), Some(_)) => StageVerdict { stage: 2, passed: None, detail: "window shorter than 10 steps".into() },
        _ => absent(2),
    });
    verdicts.push(match (t3, t4) {
        (Some(a), Some(b)) => {
            let peak = inp.loss[a..=b].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let before = if a > 0 { inp.loss[a - 1] } else { inp.loss[a] };
            StageVerdict {
                stage: 3,
                passed: Some(peak > before),
                detail: format!("loss rises {:.3e} -> {:.3e}", before, peak),
            }
        }
        _ => absent(3),
    });
    verdicts.push(match (t4, t5) {
        (Some(a), Some(b)) => StageVerdict {
            stage: 4,
            passed: Some(inp.v[b] > inp.v[a]),
            detail: format!("v {:.3e} -> {:.3e}", inp.v[a], inp.v[b]),
        },
        _ => absent(4),
    });
    verdicts.push(match t5 {
        Some(t5) => StageVerdict {
            stage: 5,
            passed: Some(true),
            detail: format!("stable again at step {t5}"),
        },
        None => absent(5),
    });

    StageSegmentation { boundaries, verdicts, mismatch_fit }
}

fn absent(stage: u8) -> StageVerdict {
    StageVerdict { stage, passed: None, detail: "not reached".into() }
}

/// Builds [`StageInputs`] from a run. Probe values are carried only at
/// sampled steps.
pub fn stage_inputs(trace: &RunTrace) -> StageInputs {
    let recs = &trace.records;
    StageInputs {
        loss: recs.iter().map(|r| r.loss).collect(),
        v: recs.iter().map(|r| r.vhat_norm_total.map_or(f64::NAN, |x| x * x)).collect(),
        lambda_max_hhat: recs.iter().map(|r| r.probe.as_ref().and_then(|p| p.lambda_max_hhat)).collect(),
        lambda_grad_hhat: recs.iter().map(|r| r.probe.as_ref().and_then(|p| p.lambda_grad_hhat)).collect(),
        threshold: recs.iter().map(|r| 2.0 / r.eta_t).collect(),
        beta2: trace.config.hyper.beta2,
    }
}

pub fn segment_stages(trace: &RunTrace, opts: &SegmentOptions) -> StageSegmentation {
    segment_series(&stage_inputs(trace), opts)
}

/// Writes each record's stage label.
pub fn label_stages(trace: &mut RunTrace, seg: &StageSegmentation) {
    for r in &mut trace.records {
        r.stage = Some(seg.stage_of(r.step));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpikeLabel {
    Neutral,
    Benign,
    Malignant,
    Catastrophic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyThresholds {
    /// A series has recovered once it drops below `kappa_rec` times its pre-spike level.
    pub kappa_rec: f64,
    /// Plateau margin as a fraction of the pre-spike test-loss range.
    pub margin_frac: f64,
    pub window: usize,
    /// Pre-spike test/train ratio that counts as a generalization gap.
    pub gap_ratio: f64,
}

impl Default for TaxonomyThresholds {
    fn default() -> Self {
        Self { kappa_rec: 1.5, margin_frac: 0.1, window: 200, gap_ratio: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyEvidence {
    pub pre_train_min: f64,
    pub post_train_min: f64,
    pub pre_test_min: f64,
    pub pre_test_range: f64,
    pub post_test_min: f64,
    pub post_test_last: f64,
    pub pre_gap_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeTaxonomy {
    pub label: SpikeLabel,
    pub evidence: TaxonomyEvidence,
}

fn min_of(s: &[f64]) -> f64 {
    s.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max_of(s: &[f64]) -> f64 {
    s.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn mean_of(s: &[f64]) -> f64 {
    s.iter().sum::<f64>() / s.len() as f64
}

/// Labels a spike from train and test losses over
/// `[onset − W, onset)` and `(recovery, recovery + W]`.
pub fn classify_spike(train: &[f64], test: &[f64], ev: &SpikeEvent, cfg: &TaxonomyThresholds) -> Result<SpikeTaxonomy> {
    let w = cfg.window;
    let start = ev.onset_step as i64 - w as i64;
    let end = (ev.recovery_step + w + 1) as i64;
    let len = train.len().min(test.len());
    if start < 0 || end > len as i64 || w == 0 {
        return Err(Error::InsufficientWindow { start, end, len });
    }
    let pre = ev.onset_step - w..ev.onset_step;
    let post = ev.recovery_step + 1..ev.recovery_step + w + 1;
    let evidence = TaxonomyEvidence {
        pre_train_min: min_of(&train[pre.clone()]),
        post_train_min: min_of(&train[post.clone()]),
        pre_test_min: min_of(&test[pre.clone()]),
        pre_test_range: max_of(&test[pre.clone()]) - min_of(&test[pre.clone()]),
        post_test_min: min_of(&test[post.clone()]),
        post_test_last: test[post.end - 1],
        pre_gap_ratio: mean_of(&test[pre.clone()]) / mean_of(&train[pre]),
    };
    let e = &evidence;
    let train_recovers = e.post_train_min < cfg.kappa_rec * e.pre_train_min;
    let test_recovers = e.post_test_min < cfg.kappa_rec * e.pre_test_min;
    let margin = cfg.margin_frac * e.pre_test_range;
    let label = if !train_recovers && !test_recovers {
        SpikeLabel::Catastrophic
    } else if train_recovers && e.post_test_min > e.pre_test_min + margin {
        SpikeLabel::Malignant
    } else if e.pre_gap_ratio >= cfg.gap_ratio && e.post_test_min < e.pre_test_min {
        SpikeLabel::Benign
    } else {
        SpikeLabel::Neutral
    };
    Ok(SpikeTaxonomy { label, evidence })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_loss_has_no_spikes() {
        let l: Vec<f64> = (0..300).map(|t| (-0.01 * t as f64).exp()).collect();
        assert!(detect_spikes(&l, 3.0, 50).unwrap().is_empty());
    }

    #[test]
    fn constructed_single_spike() {
        let ev = detect_spikes(&[1.0, 1.0, 1.0, 10.0, 1.0], 3.0, 3).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].onset_step, 3);
        assert_eq!(ev[0].peak_step, 3);
        assert_eq!(ev[0].recovery_step, 4);
        assert!(!ev[0].recovered, "1.0 is not below the baseline 1.0");
        assert_eq!(ev[0].peak_ratio, 10.0);
    }

    #[test]
    fn excursion_is_merged() {
        let mut l = vec![1.0; 20];
        l.extend([5.0, 50.0, 8.0, 20.0, 0.5, 0.5]);
        let ev = detect_spikes(&l, 3.0, 10).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].onset_step, ev[0].peak_step, ev[0].recovery_step), (20, 21, 24));
        assert!(ev[0].recovered);
    }

    #[test]
    fn decay_fit_exact_geometric() {
        let b2: f64 = 0.99;
        let v: Vec<f64> = (0..40).map(|t| b2.powi(t)).collect();
        let f = fit_decay(&v, 5, 35).unwrap();
        assert!((f.alpha_hat - b2.sqrt()).abs() < 1e-10);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let c = fit_decay(&[3.0; 12], 0, 12).unwrap();
        assert_eq!(c.alpha_hat, 1.0);
    }

    #[test]
    fn decay_fit_errors() {
        assert!(matches!(fit_decay(&[1.0; 9], 0, 9), Err(Error::InsufficientWindow { .. })));
        let mut v = vec![1.0; 12];
        v[3] = 0.0;
        assert!(matches!(fit_decay(&v, 0, 12), Err(Error::InvalidSeries(_))));
    }

    #[test]
    fn envelope_rise_brackets_a_jump() {
        let mut l: Vec<f64> = (0..100).map(|t| 0.9f64.powi(t)).collect();
        l.extend((0..20).map(|t| 1e-4 * 3f64.powi(t)));
        let r = envelope_rise(&l, 5, 10.0).unwrap();
        assert!(r.pre_spike_step < r.spike_step);
        assert!(r.spike_step >= 100);
    }

    fn series(pre: f64, post: f64, n: usize) -> Vec<f64> {
        let mut s = vec![pre; n];
        s.extend(vec![post; n]);
        s
    }

    #[test]
    fn taxonomy_labels() {
        let cfg = TaxonomyThresholds { window: 10, ..Default::default() };
        let ev = SpikeEvent {
            onset_step: 20,
            peak_step: 20,
            recovery_step: 20,
            recovered: true,
            peak_ratio: 10.0,
            baseline: 1.0,
        };
        let mk = |pre: f64, post: f64| {
            let mut s: Vec<f64> = (0..20).map(|t| pre * (1.0 - 0.001 * t as f64)).collect();
            s.push(10.0 * pre);
            s.extend((0..20).map(|t| post * (1.0 - 0.001 * t as f64)));
            s
        };
        // both resume declining
        let l = classify_spike(&mk(1.0, 0.9), &mk(1.2, 1.1), &ev, &cfg).unwrap();
        assert_eq!(l.label, SpikeLabel::Neutral);
        // test frozen above its pre-spike minimum while train declines
        let l = classify_spike(&mk(1.0, 0.9), &series(1.2, 1.35, 21)[..41], &ev, &cfg).unwrap();
        assert_eq!(l.label, SpikeLabel::Malignant);
        // both flat and high
        let l = classify_spike(&mk(1.0, 5.0), &mk(1.2, 6.0), &ev, &cfg).unwrap();
        assert_eq!(l.label, SpikeLabel::Catastrophic);
        // overfit before, test improves after
        let l = classify_spike(&mk(0.1, 0.09), &mk(1.0, 0.5), &ev, &cfg).unwrap();
        assert_eq!(l.label, SpikeLabel::Benign);
        // window too short
        let short = TaxonomyThresholds { window: 30, ..Default::default() };
        assert!(matches!(classify_spike(&mk(1.0, 0.9), &mk(1.0, 0.9), &ev, &short), Err(Error::InsufficientWindow { .. })));
    }
}
