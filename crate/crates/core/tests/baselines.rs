mod common;

use common::NORMAL_CDF_TABLE;
use mia_forge::baselines::{
    lira_score, loss_threshold, profile_heuristic, ExternalProfile, GaussianLossModel, Observation,
};
use mia_forge::util::{normal_cdf, normal_sf};
use proptest::prelude::*;

#[test]
fn normal_cdf_matches_reference_table() {
    for (x, want) in NORMAL_CDF_TABLE {
        assert!((normal_cdf(x) - want).abs() < 1e-7, "x = {x}");
        assert!((normal_sf(-x) - want).abs() < 1e-7, "x = {x}");
    }
}

#[test]
fn gaussian_fit_uses_unbiased_variance() {
    let m = GaussianLossModel::fit(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!((m.mu_out - 2.5).abs() < 1e-12);
    assert!((m.sigma_out - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert!(GaussianLossModel::fit(&[]).is_err());
}

#[test]
fn constant_losses_keep_sigma_positive() {
    let m = GaussianLossModel::fit(&[0.7; 5]).unwrap();
    assert!(m.sigma_out > 0.0);
    assert!(lira_score(&m, 0.5).is_finite());
}

#[test]
fn loss_threshold_is_strict() {
    assert_eq!(loss_threshold(&[0.1, 0.5, 0.9], 0.5), vec![true, false, false]);
}

fn obs() -> impl Strategy<Value = Observation> {
    (0.0f64..3.0, 0.25f64..1.0).prop_map(|(loss, confidence)| Observation { loss, confidence })
}

proptest! {
    #[test]
    fn lira_score_decreases_with_loss(mu in 0.0f64..2.0, sigma in 0.05f64..1.0, a in 0.0f64..4.0, b in 0.0f64..4.0) {
        let m = GaussianLossModel { mu_out: mu, sigma_out: sigma };
        if a < b {
            prop_assert!(lira_score(&m, a) >= lira_score(&m, b));
        }
    }

    #[test]
    fn profile_assignment_follows_client_permutation(
        profs in prop::collection::vec((0.0f64..3.0, 0.25f64..1.0), 3),
        rows in prop::collection::vec(prop::collection::vec(obs(), 3), 1..20),
    ) {
        let profiles: Vec<ExternalProfile> = profs
            .iter()
            .map(|&(l, c)| ExternalProfile { mean_loss: l, mean_confidence: c })
            .collect();
        let perm = [2usize, 0, 1];
        let p_profiles: Vec<ExternalProfile> = perm.iter().map(|&j| profiles[j]).collect();
        for row in rows {
            let a = profile_heuristic(&profiles, &row, &[0, 1, 2]).unwrap();
            let p_row: Vec<Observation> = perm.iter().map(|&j| row[j]).collect();
            // column j of the permuted view is client perm[j]
            let b = profile_heuristic(&p_profiles, &p_row, &perm).unwrap();
            let confs: Vec<f64> = row.iter().map(|o| o.confidence).collect();
            let distinct = confs.iter().all(|c| confs.iter().filter(|d| *d == c).count() == 1);
            if distinct {
                prop_assert_eq!(a, b);
            }
        }
    }
}
