use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_prefix, EventDensityEstimator};
use crate::error::{Error, Result};
use crate::info::categorical_kl_slices;
use crate::rng::{self, domain};
use crate::scm::ScmSpec;
use crate::types::{sample_index, EventId};

/// The true transition law of an SCM.
#[derive(Debug, Clone)]
pub struct ExactOracle {
    spec: Arc<ScmSpec>,
}

impl ExactOracle {
    pub fn new(spec: Arc<ScmSpec>) -> Self {
        ExactOracle { spec }
    }

    pub fn spec(&self) -> &ScmSpec {
        &self.spec
    }
}

impl EventDensityEstimator for ExactOracle {
    fn vocab_size(&self) -> usize {
        self.spec.vocab_size()
    }

    fn write_next_dist(&self, prefix: &[EventId], out: &mut [f64]) -> Result<()> {
        check_prefix(prefix, self.spec.vocab_size())?;
        self.spec.write_transition(&prefix[1..], out);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Trajectories sampled from the true process.
    pub n_histories: usize,
    /// Steps per trajectory; every step contributes one KL term.
    pub horizon: usize,
    /// Accepted relative error on the realized KL.
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { n_histories: 64, horizon: 32, rel_tol: 0.05, seed: 0 }
    }
}

/// `(1 - alpha) * P + alpha * Uniform`.
#[derive(Debug, Clone)]
pub struct PerturbedOracle {
    spec: Arc<ScmSpec>,
    alpha: f64,
    realized_eps: Option<f64>,
}

impl PerturbedOracle {
    pub fn with_alpha(spec: Arc<ScmSpec>, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("mixture weight {alpha} outside [0, 1]")));
        }
        Ok(PerturbedOracle { spec, alpha, realized_eps: None })
    }

    /// Finds `alpha` so that the mean per-step `KL(P || P_alpha)` over sampled
    /// histories matches `target_eps` within the configured relative tolerance.
    pub fn calibrate(spec: Arc<ScmSpec>, target_eps: f64, cfg: &CalibrationConfig) -> Result<Self> {
        if !(target_eps >= 0.0 && target_eps.is_finite()) {
            return Err(Error::Config(format!("target epsilon {target_eps} must be finite and nonnegative")));
        }
        if target_eps == 0.0 {
            return Ok(PerturbedOracle { spec, alpha: 0.0, realized_eps: Some(0.0) });
        }
        let dists = history_dists(&spec, cfg)?;
        let eps_at = |a: f64| mean_mixture_kl(&dists, spec.vocab_size(), a);
        let ceiling = eps_at(1.0);
        if target_eps > ceiling * (1.0 + cfg.rel_tol) {
            return Err(Error::Calibration(format!(
                "target epsilon {target_eps} exceeds KL to uniform ({ceiling:.6}) for this process"
            )));
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut alpha = 1.0;
        let mut realized = ceiling;
        for _ in 0..200 {
            if (realized - target_eps).abs() <= cfg.rel_tol * target_eps {
                break;
            }
            alpha = 0.5 * (lo + hi);
            realized = eps_at(alpha);
            if realized < target_eps {
                lo = alpha;
            } else {
                hi = alpha;
            }
        }
        if (realized - target_eps).abs() > cfg.rel_tol * target_eps {
            return Err(Error::Calibration(format!("bisection stalled at epsilon {realized} for target {target_eps}")));
        }
        Ok(PerturbedOracle { spec, alpha, realized_eps: Some(realized) })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Mean per-step KL measured during calibration.
    pub fn realized_eps(&self) -> Option<f64> {
        self.realized_eps
    }

    pub fn spec(&self) -> &ScmSpec {
        &self.spec
    }
}

impl EventDensityEstimator for PerturbedOracle {
    fn vocab_size(&self) -> usize {
        self.spec.vocab_size()
    }

    fn write_next_dist(&self, prefix: &[EventId], out: &mut [f64]) -> Result<()> {
        check_prefix(prefix, self.spec.vocab_size())?;
        self.spec.write_transition(&prefix[1..], out);
        if self.alpha > 0.0 {
            let u = self.alpha / out.len() as f64;
            for p in out.iter_mut() {
                *p = (1.0 - self.alpha) * *p + u;
            }
        }
        Ok(())
    }
}

/// True next-step distributions along sampled trajectories.
pub(crate) fn history_dists(spec: &ScmSpec, cfg: &CalibrationConfig) -> Result<Vec<Vec<f64>>> {
    if cfg.n_histories == 0 || cfg.horizon == 0 {
        return Err(Error::Config("calibration needs at least one history and one step".into()));
    }
    let n = spec.vocab_size();
    let per: Vec<Vec<Vec<f64>>> = (0..cfg.n_histories)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(cfg.seed, &[domain::CALIBRATION, i as u64]);
            let mut hist = Vec::with_capacity(cfg.horizon);
            let mut out = Vec::with_capacity(cfg.horizon);
            for _ in 0..cfg.horizon {
                let mut p = vec![0.0; n];
                spec.write_transition(&hist, &mut p);
                hist.push(sample_index(&p, rng.gen()) as EventId);
                out.push(p);
            }
            out
        })
        .collect();
    Ok(per.into_iter().flatten().collect())
}

pub(crate) fn mean_mixture_kl(dists: &[Vec<f64>], n: usize, alpha: f64) -> f64 {
    let u = alpha / n as f64;
    let mut q = vec![0.0; n];
    let mut total = 0.0;
    for p in dists {
        for (qi, &pi) in q.iter_mut().zip(p) {
            *qi = (1.0 - alpha) * pi + u;
        }
        total += categorical_kl_slices(p, &q, 0.0).expect("equal lengths");
    }
    total / dists.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::info::entropy_slice;
    use crate::scm::{generate_scm, transition_dist, ScmParams};

    fn spec() -> Arc<ScmSpec> {
        Arc::new(generate_scm(&ScmParams { vocab_size: 12, memory: 3, density: 0.3, weight_scale: 4.0, ..Default::default() }).unwrap())
    }

    #[test]
    fn exact_oracle_matches_transition() {
        let s = spec();
        let o = ExactOracle::new(s.clone());
        for i in 0..100u64 {
            let mut r = rng::stream(i, &[]);
            let len = r.gen_range(0..10);
            let hist: Vec<EventId> = (0..len).map(|_| r.gen_range(0..12)).collect();
            let mut prefix = vec![12];
            prefix.extend(&hist);
            let a = o.next_event_dist(&prefix).unwrap();
            let b = transition_dist(&s, &hist).unwrap();
            assert_eq!(a.probs(), b.probs());
        }
        let u = ExactOracle::new(Arc::new(ScmSpec::zeros(4, 1).unwrap()));
        assert!(u.next_event_dist(&[4, 1]).unwrap().probs().iter().all(|&p| p == 0.25));
    }

    #[test]
    fn zero_target_is_exact() {
        let s = spec();
        let p = PerturbedOracle::calibrate(s.clone(), 0.0, &CalibrationConfig::default()).unwrap();
        assert_eq!(p.alpha(), 0.0);
        let e = ExactOracle::new(s);
        let prefix = [12, 3, 4, 5];
        assert_eq!(p.next_event_dist(&prefix).unwrap(), e.next_event_dist(&prefix).unwrap());
    }

    #[test]
    fn full_mixture_is_kl_to_uniform() {
        let s = spec();
        let cfg = CalibrationConfig::default();
        let dists = history_dists(&s, &cfg).unwrap();
        let direct = mean_mixture_kl(&dists, 12, 1.0);
        // oracle: KL(P || U) = ln n - H(P)
        let identity = dists.iter().map(|p| 12f64.ln() - entropy_slice(p)).sum::<f64>() / dists.len() as f64;
        assert!((direct - identity).abs() < 1e-10);
    }

    #[test]
    fn realized_eps_monotone_in_alpha() {
        let s = spec();
        let dists = history_dists(&s, &CalibrationConfig::default()).unwrap();
        let v: Vec<f64> = [0.0, 0.25, 0.5, 1.0].iter().map(|&a| mean_mixture_kl(&dists, 12, a)).collect();
        assert!(v[0].abs() < 1e-12);
        assert!(v.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn calibration_hits_target() {
        let s = spec();
        let p = PerturbedOracle::calibrate(s, 0.05, &CalibrationConfig::default()).unwrap();
        let r = p.realized_eps().unwrap();
        assert!((r - 0.05).abs() <= 0.0025, "{r}");
    }

    #[test]
    fn unreachable_target_errors() {
        assert!(matches!(
            PerturbedOracle::calibrate(spec(), 50.0, &CalibrationConfig::default()),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn mixture_tv_bound() {
        let s = spec();
        let p = PerturbedOracle::with_alpha(s.clone(), 0.3).unwrap();
        let e = ExactOracle::new(s);
        for prefix in [vec![12], vec![12, 1, 2], vec![12, 5, 5, 5, 0]] {
            let a = p.next_event_dist(&prefix).unwrap();
            let b = e.next_event_dist(&prefix).unwrap();
            let maxdiff = a.probs().iter().zip(b.probs()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(maxdiff <= 0.3 + 1e-12);
        }
    }
}
