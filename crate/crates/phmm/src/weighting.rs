//! Likelihood weight schemes for series with sparse labels.
//!
//! Two schemes are provided. The per-index scheme used with the Markov chain
//! gives labelled indices weight 1 and unlabelled indices a tunable weight
//! alpha in [0, 1]; alpha = 1 recovers the ordinary joint likelihood and
//! alpha = 0 treats unlabelled observations as missing. The mixture scheme
//! balances the two groups through lambda in [0, 1]: labelled indices get
//! weight (1 - lambda) T / K and unlabelled ones lambda T / (T - K), where K
//! is the labelled count, so the weighted index count always totals T.

use log::warn;

use crate::error::{Error, Result};
use crate::markov::{
    forward_log_likelihood, mixture_log_density, weighted_emission_log_matrix, LabeledSeries,
    MixtureWeights,
};
use crate::model::ModelParams;

pub fn validate_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) || alpha.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    Ok(())
}

pub fn validate_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) || lambda.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    Ok(())
}

/// Weight of one index under the per-index scheme: 1 when labelled,
/// `alpha` when not.
pub fn alpha_weight(label: Option<usize>, alpha: f64) -> f64 {
    if label.is_some() {
        1.0
    } else {
        alpha
    }
}

/// Per-index weights for a whole series under the per-index scheme.
pub fn per_index_alpha_weights(series: &LabeledSeries, alpha: f64) -> Result<Vec<f64>> {
    validate_alpha(alpha)?;
    Ok(series.labels().iter().map(|l| alpha_weight(*l, alpha)).collect())
}

/// Group weights (labelled, unlabelled) of the mixture scheme.
///
/// With K = `n_labelled` out of T = `t_total` indices, the labelled group
/// weight is (1 - lambda) T / K and the unlabelled group weight is
/// lambda T / (T - K). Choosing lambda = (T - K) / T makes both weights one.
/// A group that does not exist must carry no weight: K = 0 requires
/// lambda = 1 and K = T requires lambda = 0; other values are degenerate.
pub fn lambda_weights(lambda: f64, t_total: usize, n_labelled: usize) -> Result<(f64, f64)> {
    validate_lambda(lambda)?;
    if t_total == 0 {
        return Err(Error::DegenerateScheme("series has no indices".into()));
    }
    if n_labelled > t_total {
        return Err(Error::ShapeMismatch(format!(
            "{n_labelled} labelled indices exceed series length {t_total}"
        )));
    }
    let t = t_total as f64;
    let k = n_labelled as f64;
    if n_labelled == 0 {
        if lambda < 1.0 {
            return Err(Error::DegenerateScheme(format!(
                "no labelled indices, so lambda must be 1, got {lambda}"
            )));
        }
        return Ok((0.0, 1.0));
    }
    if n_labelled == t_total {
        if lambda > 0.0 {
            return Err(Error::DegenerateScheme(format!(
                "every index is labelled, so lambda must be 0, got {lambda}"
            )));
        }
        return Ok((1.0, 0.0));
    }
    Ok(((1.0 - lambda) * t / k, lambda * t / (t - k)))
}

/// Per-index weights for a whole series under the mixture scheme.
pub fn per_index_lambda_weights(series: &LabeledSeries, lambda: f64) -> Result<Vec<f64>> {
    let (w_lab, w_unlab) = lambda_weights(lambda, series.len(), series.n_labelled())?;
    Ok(series
        .labels()
        .iter()
        .map(|l| if l.is_some() { w_lab } else { w_unlab })
        .collect())
}

/// Weighted log-likelihood of one series under an independent mixture with
/// the lambda scheme. Returns `Ok(-inf)` when a positively weighted index
/// has zero density.
pub fn weighted_mixture_log_likelihood(
    pi: &MixtureWeights,
    params: &ModelParams,
    series: &LabeledSeries,
    lambda: f64,
) -> Result<f64> {
    let weights = per_index_lambda_weights(series, lambda)?;
    mixture_log_density(pi, &params.emissions, &params.label_model, series, &weights)
}

/// Weighted log-likelihood of one series under the Markov chain with the
/// per-index alpha scheme. Returns `Ok(-inf)` when no state path has
/// positive weight.
pub fn phmm_weighted_log_likelihood(
    params: &ModelParams,
    series: &LabeledSeries,
    alpha: f64,
) -> Result<f64> {
    let weights = per_index_alpha_weights(series, alpha)?;
    let logb =
        weighted_emission_log_matrix(series, &params.emissions, &params.label_model, &weights)?;
    forward_log_likelihood(&params.delta, &params.gamma, &logb)
}

/// Per-series weighted log-likelihoods, in dataset order.
pub fn per_series_log_likelihoods(
    params: &ModelParams,
    dataset: &[LabeledSeries],
    alpha: f64,
) -> Result<Vec<f64>> {
    dataset.iter().map(|s| phmm_weighted_log_likelihood(params, s, alpha)).collect()
}

/// Sum of the per-series weighted log-likelihoods, in dataset order.
/// A `-inf` total is returned as-is; the offending series are reported
/// through the log.
pub fn total_log_likelihood(
    params: &ModelParams,
    dataset: &[LabeledSeries],
    alpha: f64,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Dataset("dataset has no series".into()));
    }
    let per = per_series_log_likelihoods(params, dataset, alpha)?;
    let mut total = 0.0;
    for (series, ll) in dataset.iter().zip(&per) {
        if *ll == f64::NEG_INFINITY {
            warn!(
                "series {} has zero weighted likelihood; total log-likelihood is -inf",
                series.id()
            );
        }
        total += ll;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{
        EmissionComponent, EmissionFamily, EmissionProduct, LabelModel, MissingPolicy,
        StateEmission,
    };
    use crate::markov::{InitialDistribution, TransitionMatrix};
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};

    fn two_state_params() -> ModelParams {
        let state = |mean: f64| StateEmission {
            components: vec![EmissionComponent {
                features: vec!["x".into()],
                family: EmissionFamily::Normal { mean, sd: 1.0 },
            }],
        };
        ModelParams {
            delta: InitialDistribution::new(vec![0.6, 0.4]).unwrap(),
            gamma: TransitionMatrix::new(array![[0.8, 0.2], [0.3, 0.7]]).unwrap(),
            emissions: EmissionProduct {
                states: vec![state(0.0), state(2.5)],
                missing: MissingPolicy::Skip,
            },
            label_model: LabelModel::Perfect,
        }
    }

    fn series(values: &[f64], labels: Vec<Option<usize>>) -> LabeledSeries {
        let v = Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap();
        LabeledSeries::new("s", vec!["x".into()], v, labels).unwrap()
    }

    #[test]
    fn lambda_weights_worked_examples() {
        // At lambda = (T - K) / T both groups have weight one.
        let (wl, wu) = lambda_weights(0.9, 100, 10).unwrap();
        assert_relative_eq!(wl, 1.0, max_relative = 1e-15);
        assert_relative_eq!(wu, 1.0, max_relative = 1e-15);
        // lambda = 0.5, T = 100, K = 10: labelled 5, unlabelled 5/9.
        let (wl, wu) = lambda_weights(0.5, 100, 10).unwrap();
        assert_relative_eq!(wl, 5.0, max_relative = 1e-15);
        assert_relative_eq!(wu, 5.0 / 9.0, max_relative = 1e-15);
        // Weighted index count totals T for any lambda.
        for lambda in [0.0, 0.2, 0.77, 1.0] {
            let (wl, wu) = lambda_weights(lambda, 60, 12).unwrap();
            assert_relative_eq!(wl * 12.0 + wu * 48.0, 60.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn lambda_weights_degenerate_cases() {
        assert!(matches!(lambda_weights(0.5, 10, 0), Err(Error::DegenerateScheme(_))));
        assert!(matches!(lambda_weights(0.5, 10, 10), Err(Error::DegenerateScheme(_))));
        assert_eq!(lambda_weights(1.0, 10, 0).unwrap(), (0.0, 1.0));
        assert_eq!(lambda_weights(0.0, 10, 10).unwrap(), (1.0, 0.0));
        assert!(lambda_weights(1.2, 10, 5).is_err());
        assert!(lambda_weights(-0.1, 10, 5).is_err());
        assert!(lambda_weights(0.5, 0, 0).is_err());
        assert!(lambda_weights(0.5, 3, 9).is_err());
    }

    #[test]
    fn alpha_weights_per_index() {
        let s = series(&[1.0, 2.0, 3.0], vec![Some(0), None, Some(1)]);
        assert_eq!(per_index_alpha_weights(&s, 0.25).unwrap(), vec![1.0, 0.25, 1.0]);
        assert_eq!(alpha_weight(None, 0.0), 0.0);
        assert_eq!(alpha_weight(Some(3), 0.0), 1.0);
        assert!(per_index_alpha_weights(&s, 1.5).is_err());
    }

    #[test]
    fn lambda_identity_recovers_plain_mixture_likelihood() {
        let params = two_state_params();
        let pi = MixtureWeights::new(vec![0.35, 0.65]).unwrap();
        let s = series(&[0.1, 2.2, -0.5, 1.7, 2.6], vec![None, Some(1), None, None, Some(1)]);
        let lambda_star = (5.0 - 2.0) / 5.0;
        let weighted = weighted_mixture_log_likelihood(&pi, &params, &s, lambda_star).unwrap();
        let plain =
            mixture_log_density(&pi, &params.emissions, &params.label_model, &s, &vec![1.0; 5])
                .unwrap();
        assert_relative_eq!(weighted, plain, max_relative = 1e-12);
    }

    #[test]
    fn alpha_one_is_bitwise_plain_joint() {
        let params = two_state_params();
        let s = series(&[0.1, 2.2, -0.5], vec![None, Some(1), None]);
        let weighted = phmm_weighted_log_likelihood(&params, &s, 1.0).unwrap();
        let logb = weighted_emission_log_matrix(
            &s,
            &params.emissions,
            &params.label_model,
            &[1.0, 1.0, 1.0],
        )
        .unwrap();
        let plain = forward_log_likelihood(&params.delta, &params.gamma, &logb).unwrap();
        assert_eq!(weighted.to_bits(), plain.to_bits());
    }

    #[test]
    fn alpha_zero_without_labels_gives_log_one() {
        let params = two_state_params();
        let s = series(&[0.1, 2.2, -0.5], vec![None, None, None]);
        let ll = phmm_weighted_log_likelihood(&params, &s, 0.0).unwrap();
        // Every emission factor is one, so the likelihood is the total chain
        // mass, which is exactly one.
        assert_relative_eq!(ll, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn alpha_zero_treats_unlabelled_as_missing() {
        let params = two_state_params();
        let s = series(&[0.1, 2.2, -0.5], vec![None, Some(1), None]);
        let ll = phmm_weighted_log_likelihood(&params, &s, 0.0).unwrap();
        // Hand-built emission matrix: identity rows except the labelled index.
        let mut logb = Array2::<f64>::zeros((3, 2));
        for i in 0..2 {
            let lf = params.emissions.log_density(i, &[2.2]).unwrap();
            let lg = params.label_model.label_log_mass(2, i, Some(1)).unwrap();
            logb[(1, i)] = lf + lg;
        }
        let expect = forward_log_likelihood(&params.delta, &params.gamma, &logb).unwrap();
        assert_eq!(ll.to_bits(), expect.to_bits());
    }

    #[test]
    fn total_log_likelihood_sums_in_order_and_flags_zero() {
        let params = two_state_params();
        let a = series(&[0.1, 2.2], vec![None, Some(1)]);
        let b = series(&[1.1], vec![Some(0)]);
        let total = total_log_likelihood(&params, &[a.clone(), b.clone()], 0.7).unwrap();
        let la = phmm_weighted_log_likelihood(&params, &a, 0.7).unwrap();
        let lb = phmm_weighted_log_likelihood(&params, &b, 0.7).unwrap();
        assert_eq!(total.to_bits(), (la + lb).to_bits());

        // A structurally impossible series drives the total to -inf and the
        // per-series breakdown identifies it.
        let mut impossible_params = two_state_params();
        impossible_params.gamma = TransitionMatrix::with_mask(
            array![[1.0, 0.0], [0.0, 1.0]],
            array![[false, true], [true, false]],
        )
        .unwrap();
        let conflict = series(&[0.1, 2.2], vec![Some(0), Some(1)]);
        let per = per_series_log_likelihoods(&impossible_params, &[a, conflict], 1.0).unwrap();
        assert!(per[0].is_finite());
        assert_eq!(per[1], f64::NEG_INFINITY);
        let total = total_log_likelihood(
            &impossible_params,
            &[series(&[0.1, 2.2], vec![Some(0), Some(1)])],
            1.0,
        )
        .unwrap();
        assert_eq!(total, f64::NEG_INFINITY);
        assert!(total_log_likelihood(&impossible_params, &[], 1.0).is_err());
    }
}
