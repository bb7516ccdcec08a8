//! Comparison attacks: the external-profile heuristic, an OUT-only Gaussian
//! LiRA, and a plain loss threshold.
//!
//! All three need nothing beyond the target's answers on the external pool
//! (plus, for the loss threshold, the relevant pool) and are pure functions.

use serde::{Deserialize, Serialize};

use crate::data::Membership;
use crate::error::{Error, Result};
use crate::util::{mean, normal_sf, sample_variance};

pub const SIGMA_FLOOR: f64 = 1e-9;

/// One record as seen through one client's target model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub loss: f64,
    /// Largest class probability.
    pub confidence: f64,
}

impl Observation {
    pub fn from_probs(probs: &[f64], task_label: usize) -> Self {
        Observation {
            loss: crate::target::cross_entropy_loss(probs, task_label),
            confidence: probs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExternalProfile {
    pub mean_loss: f64,
    pub mean_confidence: f64,
}

impl ExternalProfile {
    pub fn fit(external: &[Observation]) -> Result<Self> {
        if external.is_empty() {
            return Err(Error::Insufficient("profile needs at least one external record".into()));
        }
        Ok(ExternalProfile {
            mean_loss: mean(&external.iter().map(|o| o.loss).collect::<Vec<_>>()),
            mean_confidence: mean(&external.iter().map(|o| o.confidence).collect::<Vec<_>>()),
        })
    }

    pub fn qualifies(&self, o: &Observation) -> bool {
        o.loss < self.mean_loss && o.confidence > self.mean_confidence
    }
}

/// Assigns a record to the most confident client among those where it looks
/// like a member (lower loss and higher confidence than that client's
/// external mean). `clients[j]` labels column `j`.
pub fn profile_heuristic(
    profiles: &[ExternalProfile],
    observations: &[Observation],
    clients: &[usize],
) -> Result<Membership> {
    if profiles.len() != observations.len() || clients.len() != observations.len() {
        return Err(Error::Join(format!(
            "{} profiles for {} observations over {} clients",
            profiles.len(),
            observations.len(),
            clients.len()
        )));
    }
    let mut best: Option<usize> = None;
    for (j, (p, o)) in profiles.iter().zip(observations).enumerate() {
        if p.qualifies(o) && best.is_none_or(|b| o.confidence > observations[b].confidence) {
            best = Some(j);
        }
    }
    Ok(best.map_or(Membership::NON_MEMBER, |j| Membership::client(clients[j])))
}

/// Non-member loss distribution for one client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLossModel {
    pub mu_out: f64,
    pub sigma_out: f64,
}

impl GaussianLossModel {
    /// Mean and unbiased standard deviation of external losses; the deviation
    /// is floored at [`SIGMA_FLOOR`].
    pub fn fit(external_losses: &[f64]) -> Result<Self> {
        if external_losses.is_empty() {
            return Err(Error::Insufficient("loss model needs at least one external record".into()));
        }
        let var = if external_losses.len() > 1 {
            sample_variance(external_losses)
        } else {
            0.0
        };
        Ok(GaussianLossModel {
            mu_out: mean(external_losses),
            sigma_out: var.sqrt().max(SIGMA_FLOOR),
        })
    }
}

/// `1 − Φ((loss − μ)/σ)`: probability that a non-member would have a loss at
/// least this large.
pub fn lira_score(model: &GaussianLossModel, loss: f64) -> f64 {
    normal_sf((loss - model.mu_out) / model.sigma_out)
}

/// Member iff `loss < tau`.
pub fn loss_threshold(losses: &[f64], tau: f64) -> Vec<bool> {
    losses.iter().map(|&l| l < tau).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prof(l: f64, c: f64) -> ExternalProfile {
        ExternalProfile {
            mean_loss: l,
            mean_confidence: c,
        }
    }

    fn obs(l: f64, c: f64) -> Observation {
        Observation { loss: l, confidence: c }
    }

    #[test]
    fn most_confident_qualifier_wins() {
        let p = [prof(1.0, 0.5); 3];
        let o = [obs(0.1, 0.9), obs(0.1, 0.7), obs(0.1, 0.8)];
        assert_eq!(profile_heuristic(&p, &o, &[0, 1, 2]).unwrap(), Membership::client(0));
    }

    #[test]
    fn high_loss_is_non_member() {
        let p = [prof(1.0, 0.5); 3];
        let o = [obs(2.0, 0.9); 3];
        assert_eq!(profile_heuristic(&p, &o, &[0, 1, 2]).unwrap(), Membership::NON_MEMBER);
    }

    #[test]
    fn confidence_tie_goes_low() {
        let p = [prof(1.0, 0.5); 3];
        let o = [obs(2.0, 0.9), obs(0.1, 0.8), obs(0.1, 0.8)];
        assert_eq!(profile_heuristic(&p, &o, &[0, 1, 2]).unwrap(), Membership::client(1));
    }

    #[test]
    fn missing_profile_is_error() {
        assert!(profile_heuristic(&[prof(1.0, 0.5)], &[obs(0.1, 0.9); 2], &[0, 1]).is_err());
    }

    #[test]
    fn lira_at_mean_is_half() {
        let m = GaussianLossModel { mu_out: 0.7, sigma_out: 0.2 };
        assert!((lira_score(&m, 0.7) - 0.5).abs() < 1e-15);
        assert!((lira_score(&m, 0.3) - 0.977_249_868_051_820_8).abs() < 1e-12);
    }

    #[test]
    fn constant_losses_floor_sigma() {
        let m = GaussianLossModel::fit(&[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(m.sigma_out, SIGMA_FLOOR);
        let s = lira_score(&m, 0.4);
        assert!(s > 0.5 && s <= 1.0);
    }

    #[test]
    fn unbiased_variance() {
        let m = GaussianLossModel::fit(&[1.0, 3.0]).unwrap();
        assert!((m.sigma_out - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn loss_threshold_boundaries() {
        let l = [0.0, 0.5, 2.0];
        assert_eq!(loss_threshold(&l, f64::INFINITY), vec![true; 3]);
        assert_eq!(loss_threshold(&l, 0.0), vec![false; 3]);
    }
}
