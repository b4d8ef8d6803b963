//! Deterministic RANSAC driver shared by the essential, PnP and homography
//! estimators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub(crate) struct RansacParams {
    pub max_iters: usize,
    /// Probability of having drawn at least one all-inlier sample, used for
    /// adaptive early exit.
    pub confidence: f64,
    pub seed: u64,
}

/// Scored hypothesis: inlier indices and the truncated quadratic loss.
pub(crate) struct Consensus<M> {
    pub model: M,
    pub inliers: Vec<usize>,
    pub cost: f64,
    pub iterations: usize,
}

fn required_iterations(inlier_ratio: f64, sample_size: usize, confidence: f64) -> usize {
    if inlier_ratio <= 0.0 {
        return usize::MAX;
    }
    let all_inlier = inlier_ratio.powi(sample_size as i32);
    if all_inlier >= 1.0 - f64::EPSILON {
        return 1;
    }
    let n = (1.0 - confidence).ln() / (1.0 - all_inlier).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// Runs hypothesise-and-verify over `n` data points.
///
/// `fit` builds a model from a minimal sample (or `None` for a degenerate
/// one); `score` returns the inliers and the MSAC loss, `Σ min(r², t²)` over
/// all points. The best model has the lowest loss, ties going to the larger
/// consensus. `seeds` are extra hypotheses scored before any sampling.
pub(crate) fn ransac<M>(
    n: usize,
    sample_size: usize,
    params: &RansacParams,
    seeds: impl IntoIterator<Item = M>,
    mut fit: impl FnMut(&[usize]) -> Option<M>,
    mut score: impl FnMut(&M) -> (Vec<usize>, f64),
) -> Option<Consensus<M>> {
    let mut best: Option<Consensus<M>> = None;
    let mut consider = |model: M, best: &mut Option<Consensus<M>>, iterations: usize| {
        let (inliers, cost) = score(&model);
        let better = match best {
            None => true,
            Some(b) => {
                cost < b.cost || (cost == b.cost && inliers.len() > b.inliers.len())
            }
        };
        if better {
            *best = Some(Consensus {
                model,
                inliers,
                cost,
                iterations,
            });
        }
    };
    for m in seeds {
        consider(m, &mut best, 0);
    }
    if n < sample_size {
        return best;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut needed = params.max_iters;
    let mut iter = 0;
    let mut sample = Vec::with_capacity(sample_size);
    while iter < needed.min(params.max_iters) {
        iter += 1;
        sample.clear();
        sample.extend(rand::seq::index::sample(&mut rng, n, sample_size));
        if let Some(model) = fit(&sample) {
            consider(model, &mut best, iter);
            if let Some(b) = &best {
                let ratio = b.inliers.len() as f64 / n as f64;
                needed = required_iterations(ratio, sample_size, params.confidence);
            }
        }
    }
    if let Some(b) = &mut best {
        b.iterations = iter;
    }
    best
}
