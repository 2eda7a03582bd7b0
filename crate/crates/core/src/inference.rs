//! Posterior summaries of a chain: ATT, counterfactual path, inclusion
//! frequencies and mixing diagnostics.

use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{BvssError, Result};
use crate::panel::{format_sig17, PanelData};
use crate::sampler::SamplerOutput;

/// Central posterior interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// Posterior summary of the average treatment effect on the treated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttSummary {
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
    #[serde(skip)]
    pub draws: Vec<f64>,
    pub tau_mean: f64,
    pub phi_mean: f64,
    pub model_size_mean: f64,
    pub tau_ci: Interval,
    pub phi_ci: Interval,
    pub size_ci: Interval,
}

/// Quantile by linear interpolation between order statistics of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Central interval holding `level` of the posterior mass.
pub fn central_interval(values: &[f64], level: f64) -> Interval {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Interval {
        lo: quantile_sorted(&v, 0.5 * (1.0 - level)),
        hi: quantile_sorted(&v, 0.5 * (1.0 + level)),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn require_draws(out: &SamplerOutput) -> Result<()> {
    if out.draws.is_empty() {
        return Err(BvssError::Domain("sampler output holds no draws".into()));
    }
    Ok(())
}

fn plain_counterfactual(w: &[f64], data: &PanelData) -> DVector<f64> {
    &data.x_post * DVector::from_column_slice(w)
}

/// Per-draw ATT `mean(Ỹ¹ − c)` and its posterior summary. `use_rb` selects
/// the stored Rao-Blackwellized counterfactual instead of `X̃w`.
pub fn att_from_draws(out: &SamplerOutput, data: &PanelData, level: f64, use_rb: bool) -> Result<AttSummary> {
    require_draws(out)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(BvssError::Domain(format!("credible level must lie in (0, 1), got {level}")));
    }
    let n = data.n();
    let m_post = data.m_post();
    let ypost_mean = data.y_post.mean();
    let mut att = Vec::with_capacity(out.draws.len());
    for (d, rb) in out.draws.iter().zip(&out.rb_counterfactual) {
        if d.w.len() != n || rb.len() != m_post {
            return Err(BvssError::Shape("draw dimensions do not match the panel".into()));
        }
        let cf_mean = if use_rb {
            mean(rb)
        } else {
            plain_counterfactual(&d.w, data).mean()
        };
        att.push(ypost_mean - cf_mean);
    }
    if att.len() != out.draws.len() {
        return Err(BvssError::Shape("missing counterfactual draws".into()));
    }
    let taus: Vec<f64> = out.draws.iter().map(|d| d.tau).collect();
    let phis: Vec<f64> = out.draws.iter().map(|d| d.phi).collect();
    let sizes: Vec<f64> = out.draws.iter().map(|d| d.model_size() as f64).collect();
    let ci = central_interval(&att, level);
    Ok(AttSummary {
        mean: mean(&att),
        ci_lo: ci.lo,
        ci_hi: ci.hi,
        level,
        draws: att,
        tau_mean: mean(&taus),
        phi_mean: mean(&phis),
        model_size_mean: mean(&sizes),
        tau_ci: central_interval(&taus, level),
        phi_ci: central_interval(&phis, level),
        size_ci: central_interval(&sizes, level),
    })
}

/// Pointwise posterior of the synthetic series.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualPath {
    /// `M + M̃` posterior means: `Xw` before treatment, `X̃w` after.
    pub mean: Vec<f64>,
    /// Post-period 95% bands.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl CounterfactualPath {
    pub fn write_csv<W: Write>(&self, data: &PanelData, writer: W, comment: Option<&str>) -> Result<()> {
        let mut out = writer;
        if let Some(c) = comment {
            writeln!(out, "# {c}").map_err(|e| BvssError::io("<counterfactual>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "period", "observed", "counterfactual", "lo", "hi"])?;
        let m = data.m();
        for (t, label) in data.time_labels.iter().enumerate() {
            let (period, obs, lo, hi) = if t < m {
                ("pre", data.y[t], String::new(), String::new())
            } else {
                let k = t - m;
                ("post", data.y_post[k], format_sig17(self.lo[k]), format_sig17(self.hi[k]))
            };
            w.write_record([label.as_str(), period, &format_sig17(obs), &format_sig17(self.mean[t]), &lo, &hi])?;
        }
        w.flush().map_err(|e| BvssError::io("<counterfactual>", e))?;
        Ok(())
    }
}

/// Posterior mean of `Xw` and `X̃w`, with post-period 95% pointwise bands.
pub fn counterfactual_path(out: &SamplerOutput, data: &PanelData) -> Result<CounterfactualPath> {
    require_draws(out)?;
    let k = out.draws.len() as f64;
    let mut w_bar = DVector::zeros(data.n());
    for d in &out.draws {
        if d.w.len() != data.n() {
            return Err(BvssError::Shape("draw dimensions do not match the panel".into()));
        }
        w_bar += DVector::from_column_slice(&d.w);
    }
    w_bar /= k;
    let pre = &data.x * &w_bar;
    let paths: Vec<DVector<f64>> = out.draws.iter().map(|d| plain_counterfactual(&d.w, data)).collect();
    let mut mean = pre.iter().copied().collect::<Vec<_>>();
    let (mut lo, mut hi) = (Vec::new(), Vec::new());
    for t in 0..data.m_post() {
        let col: Vec<f64> = paths.iter().map(|p| p[t]).collect();
        mean.push(col.iter().sum::<f64>() / k);
        let ci = central_interval(&col, 0.95);
        lo.push(ci.lo);
        hi.push(ci.hi);
    }
    Ok(CounterfactualPath { mean, lo, hi })
}

/// Fraction of draws in which each unit is selected.
pub fn inclusion_probs(out: &SamplerOutput) -> Result<Vec<f64>> {
    require_draws(out)?;
    let n = out.draws[0].mu.len();
    let mut counts = vec![0usize; n];
    for d in &out.draws {
        for (c, &m) in counts.iter_mut().zip(&d.mu) {
            if m > 0.0 {
                *c += 1;
            }
        }
    }
    let k = out.draws.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / k).collect())
}

/// Effective sample size of one scalar chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ess {
    pub ess: f64,
    pub zero_variance: bool,
}

/// Geyer's initial positive sequence estimator.
pub fn effective_sample_size(x: &[f64]) -> Ess {
    let n = x.len();
    if n < 2 {
        return Ess {
            ess: n as f64,
            zero_variance: true,
        };
    }
    let m = mean(x);
    let centred: Vec<f64> = x.iter().map(|v| v - m).collect();
    let c0 = centred.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(c0 > 0.0) {
        return Ess {
            ess: n as f64,
            zero_variance: true,
        };
    }
    let acov = |lag: usize| -> f64 {
        centred[..n - lag].iter().zip(&centred[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64
    };
    // sum of positive consecutive-pair sums Γ_k = γ(2k) + γ(2k+1)
    let mut sum = 0.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = acov(2 * k) + acov(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        k += 1;
    }
    let tau_int = (2.0 * sum / c0 - 1.0).max(1.0 / n as f64);
    Ess {
        ess: (n as f64 / tau_int).min(n as f64 * n.ilog2().max(1) as f64),
        zero_variance: false,
    }
}

/// Mixing summary for the scalar parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub n_draws: usize,
    pub ess_tau: Ess,
    pub ess_phi: Ess,
    pub ess_model_size: Ess,
    pub acceptance_rate_tau: f64,
}

pub fn diagnostics(out: &SamplerOutput) -> Result<Diagnostics> {
    require_draws(out)?;
    let taus: Vec<f64> = out.draws.iter().map(|d| d.tau).collect();
    let phis: Vec<f64> = out.draws.iter().map(|d| d.phi).collect();
    let sizes: Vec<f64> = out.draws.iter().map(|d| d.model_size() as f64).collect();
    Ok(Diagnostics {
        n_draws: out.draws.len(),
        ess_tau: effective_sample_size(&taus),
        ess_phi: effective_sample_size(&phis),
        ess_model_size: effective_sample_size(&sizes),
        acceptance_rate_tau: out.acceptance_rate_tau,
    })
}
