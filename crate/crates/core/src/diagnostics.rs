//! Monte Carlo error estimates and the Geweke joint-distribution test.

/// Standard error of the mean of a (possibly autocorrelated) series by
/// non-overlapping batch means.
pub fn batch_means_se(x: &[f64], batches: usize) -> f64 {
    let n = x.len();
    let batches = batches.max(2).min(n.max(2));
    let size = n / batches;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| x[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

/// Standard error of the mean of independent draws.
pub fn iid_se(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// z-score comparing the mean of a test function under independent
/// marginal-conditional draws with its mean along a successive-conditional
/// chain.
pub fn geweke_z(marginal: &[f64], successive: &[f64], batches: usize) -> f64 {
    let se_m = iid_se(marginal);
    let se_s = batch_means_se(successive, batches);
    let se = (se_m * se_m + se_s * se_s).sqrt();
    let diff = mean(marginal) - mean(successive);
    if se == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / se
    }
}

/// Effective sample size from the batch-means variance.
pub fn effective_sample_size(x: &[f64], batches: usize) -> f64 {
    let se = batch_means_se(x, batches);
    let n = x.len() as f64;
    let m = mean(x);
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    if se == 0.0 {
        n
    } else {
        (var / (se * se)).min(n)
    }
}
