//! Diagonal-covariance GMM universal background model: EM training and
//! Baum-Welch sufficient statistics.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract_err, data_err, Result};
use crate::feats::FeatureMatrix;

/// Variance floor as a fraction of the global per-dimension variance.
const VARIANCE_FLOOR_FRAC: f64 = 1e-4;

const LOG_2PI: f64 = 1.837877066409345;

/// Diagonal-covariance Gaussian mixture over acoustic frames.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmUbm {
    /// Mixture weights, a C-simplex.
    pub weights: Array1<f64>,
    /// Component means, C x F.
    pub means: Array2<f64>,
    /// Diagonal variances, C x F, floored during training.
    pub variances: Array2<f64>,
}

impl GmmUbm {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn feat_dim(&self) -> usize {
        self.means.ncols()
    }

    /// Per-frame, per-component posterior responsibilities (N x C) and the
    /// total log-likelihood of the frames.
    pub fn responsibilities(&self, frames: ArrayView2<f64>) -> (Array2<f64>, f64) {
        let n = frames.nrows();
        let c = self.components();
        let f = self.feat_dim();
        let mut logp = Array2::zeros((n, c));
        for ci in 0..c {
            let mut log_det = 0.0;
            for fi in 0..f {
                log_det += self.variances[[ci, fi]].ln();
            }
            let base = self.weights[ci].ln() - 0.5 * (f as f64 * LOG_2PI + log_det);
            for ni in 0..n {
                let mut maha = 0.0;
                for fi in 0..f {
                    let d = frames[[ni, fi]] - self.means[[ci, fi]];
                    maha += d * d / self.variances[[ci, fi]];
                }
                logp[[ni, ci]] = base - 0.5 * maha;
            }
        }
        let mut total_ll = 0.0;
        for ni in 0..n {
            let row = logp.row(ni);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            total_ll += lse;
            for ci in 0..c {
                logp[[ni, ci]] = (logp[[ni, ci]] - lse).exp();
            }
        }
        (logp, total_ll)
    }
}

/// A trained UBM plus the per-iteration training log-likelihood.
#[derive(Debug, Clone)]
pub struct UbmFit {
    pub ubm: GmmUbm,
    /// Total log-likelihood at the start of each EM iteration.
    pub log_likelihood: Vec<f64>,
}

/// Train a diagonal UBM by EM from a seeded k-means initialization.
pub fn train_ubm(
    features: &[&FeatureMatrix],
    components: usize,
    iters: usize,
    seed: u64,
) -> Result<UbmFit> {
    if components == 0 {
        return data_err("UBM needs at least one component");
    }
    let total_frames: usize = features.iter().map(|f| f.num_frames()).sum();
    if total_frames < 10 * components {
        return data_err(format!(
            "need at least {} frames to train {components} components, got {total_frames}",
            10 * components
        ));
    }
    let dim = features[0].dim();
    let mut frames = Array2::zeros((total_frames, dim));
    let mut row = 0;
    for f in features {
        if f.dim() != dim {
            return contract_err("inconsistent feature dimensions across utterances");
        }
        for r in f.data.rows() {
            frames.row_mut(row).assign(&r);
            row += 1;
        }
    }
    if frames.iter().any(|v| !v.is_finite()) {
        return data_err("features contain non-finite values");
    }

    let global_mean = frames.mean_axis(Axis(0)).unwrap();
    let mut global_var = Array1::zeros(dim);
    for r in frames.rows() {
        for fi in 0..dim {
            let d = r[fi] - global_mean[fi];
            global_var[fi] += d * d;
        }
    }
    global_var /= total_frames as f64;
    let floor = global_var.mapv(|v| (v * VARIANCE_FLOOR_FRAC).max(1e-12));

    let mut ubm = kmeans_init(&frames, components, seed, &global_var, &floor);

    let mut log_likelihood = Vec::with_capacity(iters);
    for _ in 0..iters {
        let (gamma, ll) = ubm.responsibilities(frames.view());
        log_likelihood.push(ll);

        let occupancy = gamma.sum_axis(Axis(0));
        let weighted_sum = gamma.t().dot(&frames);
        let sq = frames.mapv(|v| v * v);
        let weighted_sq = gamma.t().dot(&sq);
        for ci in 0..components {
            let n_c = occupancy[ci];
            if n_c < 1e-10 {
                continue; // starved component keeps its parameters
            }
            for fi in 0..dim {
                let mean = weighted_sum[[ci, fi]] / n_c;
                let var = weighted_sq[[ci, fi]] / n_c - mean * mean;
                ubm.means[[ci, fi]] = mean;
                ubm.variances[[ci, fi]] = var.max(floor[fi]);
            }
            ubm.weights[ci] = n_c / total_frames as f64;
        }
        let wsum = ubm.weights.sum();
        ubm.weights /= wsum;
    }

    Ok(UbmFit {
        ubm,
        log_likelihood,
    })
}

fn kmeans_init(
    frames: &Array2<f64>,
    components: usize,
    seed: u64,
    global_var: &Array1<f64>,
    floor: &Array1<f64>,
) -> GmmUbm {
    let n = frames.nrows();
    let dim = frames.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, n, components.min(n));
    let mut centers = Array2::zeros((components, dim));
    for (ci, ni) in picks.into_iter().enumerate() {
        centers.row_mut(ci).assign(&frames.row(ni));
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..5 {
        for ni in 0..n {
            let mut best = (0usize, f64::INFINITY);
            for ci in 0..components {
                let mut d2 = 0.0;
                for fi in 0..dim {
                    let d = frames[[ni, fi]] - centers[[ci, fi]];
                    d2 += d * d;
                }
                if d2 < best.1 {
                    best = (ci, d2);
                }
            }
            assignment[ni] = best.0;
        }
        let mut counts = vec![0usize; components];
        let mut sums = Array2::<f64>::zeros((components, dim));
        for ni in 0..n {
            counts[assignment[ni]] += 1;
            sums.row_mut(assignment[ni]).scaled_add(1.0, &frames.row(ni));
        }
        for ci in 0..components {
            if counts[ci] > 0 {
                centers
                    .row_mut(ci)
                    .assign(&(&sums.row(ci) / counts[ci] as f64));
            }
        }
    }

    let mut counts = vec![0usize; components];
    let mut var_acc = Array2::<f64>::zeros((components, dim));
    for ni in 0..n {
        let ci = assignment[ni];
        counts[ci] += 1;
        for fi in 0..dim {
            let d = frames[[ni, fi]] - centers[[ci, fi]];
            var_acc[[ci, fi]] += d * d;
        }
    }
    let mut weights = Array1::zeros(components);
    let mut variances = Array2::zeros((components, dim));
    for ci in 0..components {
        weights[ci] = (counts[ci].max(1)) as f64;
        for fi in 0..dim {
            variances[[ci, fi]] = if counts[ci] >= 2 {
                (var_acc[[ci, fi]] / counts[ci] as f64).max(floor[fi])
            } else {
                global_var[fi].max(floor[fi])
            };
        }
    }
    let wsum = weights.sum();
    weights /= wsum;
    GmmUbm {
        weights,
        means: centers,
        variances,
    }
}

/// Zeroth- and centered first-order Baum-Welch statistics of one utterance
/// against a UBM.
#[derive(Debug, Clone, PartialEq)]
pub struct BwStats {
    /// Per-component soft frame counts, length C.
    pub n: Array1<f64>,
    /// Per-component first-order sums centered on the UBM means, C x F.
    pub f: Array2<f64>,
}

impl BwStats {
    pub fn components(&self) -> usize {
        self.n.len()
    }

    pub fn feat_dim(&self) -> usize {
        self.f.ncols()
    }

    pub fn total_frames(&self) -> f64 {
        self.n.sum()
    }
}

/// Accumulate Baum-Welch statistics: `N_c = sum_t gamma_t(c)` and
/// `F_c = sum_t gamma_t(c) (x_t - mean_c)`.
pub fn bw_stats(features: &FeatureMatrix, ubm: &GmmUbm) -> Result<BwStats> {
    if features.dim() != ubm.feat_dim() {
        return contract_err(format!(
            "feature dim {} does not match UBM dim {}",
            features.dim(),
            ubm.feat_dim()
        ));
    }
    let c = ubm.components();
    let f_dim = ubm.feat_dim();
    if features.num_frames() == 0 {
        return Ok(BwStats {
            n: Array1::zeros(c),
            f: Array2::zeros((c, f_dim)),
        });
    }
    let (gamma, _) = ubm.responsibilities(features.data.view());
    let n = gamma.sum_axis(Axis(0));
    let mut first = gamma.t().dot(&features.data);
    for ci in 0..c {
        for fi in 0..f_dim {
            first[[ci, fi]] -= n[ci] * ubm.means[[ci, fi]];
        }
    }
    Ok(BwStats { n, f: first })
}

/// Pool statistics from several utterances (used for enrollment).
pub fn pool_stats(stats: &[&BwStats]) -> Result<BwStats> {
    let first = stats
        .first()
        .ok_or_else(|| crate::error::EngineError::Data("no statistics to pool".into()))?;
    let mut n = first.n.clone();
    let mut f = first.f.clone();
    for s in &stats[1..] {
        if s.components() != first.components() || s.feat_dim() != first.feat_dim() {
            return contract_err("inconsistent statistic dimensions while pooling");
        }
        n += &s.n;
        f += &s.f;
    }
    Ok(BwStats { n, f })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn fm(data: Array2<f64>) -> FeatureMatrix {
        FeatureMatrix {
            data,
            frame_shift_ms: 10.0,
            frame_length_ms: 25.0,
        }
    }

    fn two_cluster_data(seed: u64) -> (FeatureMatrix, Array1<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 300;
        let mut data = Array2::zeros((2 * n, 2));
        let mut sum_a = Array1::zeros(2);
        let mut sum_b = Array1::zeros(2);
        for i in 0..n {
            for j in 0..2 {
                let a = 5.0 + 0.3 * (rng.random::<f64>() - 0.5);
                let b = -5.0 + 0.3 * (rng.random::<f64>() - 0.5);
                data[[i, j]] = a;
                data[[n + i, j]] = b;
                sum_a[j] += a;
                sum_b[j] += b;
            }
        }
        (fm(data), sum_a / n as f64, sum_b / n as f64)
    }

    #[test]
    fn two_separated_clusters_are_recovered() {
        let (data, mean_a, mean_b) = two_cluster_data(3);
        let fit = train_ubm(&[&data], 2, 10, 0).unwrap();
        let m0 = fit.ubm.means.row(0);
        let m1 = fit.ubm.means.row(1);
        // Match components to clusters by sign of the first coordinate.
        let (got_a, got_b) = if m0[0] > 0.0 { (m0, m1) } else { (m1, m0) };
        for j in 0..2 {
            assert!((got_a[j] - mean_a[j]).abs() < 0.1);
            assert!((got_b[j] - mean_b[j]).abs() < 0.1);
        }
    }

    #[test]
    fn single_component_matches_closed_form() {
        let data = fm(ndarray::arr2(&[
            [1.0, 2.0],
            [3.0, 8.0],
            [5.0, 2.0],
            [7.0, 4.0],
            [2.0, 9.0],
            [4.0, 1.0],
            [6.0, 7.0],
            [8.0, 3.0],
            [1.5, 5.0],
            [3.5, 6.0],
        ]));
        let fit = train_ubm(&[&data], 1, 3, 0).unwrap();
        let mean = data.data.mean_axis(Axis(0)).unwrap();
        let mut var = Array1::zeros(2);
        for r in data.data.rows() {
            for j in 0..2 {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        var /= data.num_frames() as f64;
        for j in 0..2 {
            assert_abs_diff_eq!(fit.ubm.means[[0, j]], mean[j], epsilon = 1e-9);
            assert_abs_diff_eq!(fit.ubm.variances[[0, j]], var[j], epsilon = 1e-9);
        }
        assert_abs_diff_eq!(fit.ubm.weights[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (data, _, _) = two_cluster_data(8);
        let a = train_ubm(&[&data], 4, 6, 17).unwrap();
        let b = train_ubm(&[&data], 4, 6, 17).unwrap();
        assert_eq!(a.ubm, b.ubm);
        assert_eq!(a.log_likelihood, b.log_likelihood);
    }

    #[test]
    fn log_likelihood_is_non_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = fm(Array2::from_shape_fn((400, 3), |_| rng.random::<f64>() * 4.0));
        let fit = train_ubm(&[&data], 6, 15, 2).unwrap();
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "LL decreased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn too_few_frames_is_a_data_error() {
        let data = fm(Array2::zeros((15, 2)));
        assert!(train_ubm(&[&data], 2, 3, 0).is_err());
    }

    #[test]
    fn non_finite_features_are_rejected() {
        let mut m = Array2::zeros((30, 2));
        m[[4, 1]] = f64::NAN;
        assert!(train_ubm(&[&fm(m)], 2, 3, 0).is_err());
    }

    #[test]
    fn weights_sum_to_one_and_variances_are_floored() {
        let (data, _, _) = two_cluster_data(5);
        let fit = train_ubm(&[&data], 3, 8, 1).unwrap();
        assert_abs_diff_eq!(fit.ubm.weights.sum(), 1.0, epsilon = 1e-9);
        assert!(fit.ubm.variances.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn stats_of_frame_at_component_mean_center_to_zero() {
        let ubm = GmmUbm {
            weights: ndarray::arr1(&[0.5, 0.5]),
            means: ndarray::arr2(&[[10.0, 10.0], [-10.0, -10.0]]),
            variances: Array2::ones((2, 2)),
        };
        let feats = fm(ndarray::arr2(&[[10.0, 10.0]]));
        let stats = bw_stats(&feats, &ubm).unwrap();
        assert!(stats.n[0] > 0.999);
        assert!(stats.n[1] < 1e-3);
        for v in stats.f.iter() {
            assert!(v.abs() < 1e-3, "expected near-zero first-order stats");
        }
        assert_abs_diff_eq!(stats.total_frames(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn empty_features_give_zero_stats() {
        let ubm = GmmUbm {
            weights: ndarray::arr1(&[1.0]),
            means: Array2::zeros((1, 2)),
            variances: Array2::ones((1, 2)),
        };
        let stats = bw_stats(&fm(Array2::zeros((0, 2))), &ubm).unwrap();
        assert_eq!(stats.n.sum(), 0.0);
        assert_eq!(stats.f.sum(), 0.0);
    }

    #[test]
    fn stats_match_brute_force_responsibility_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data = fm(Array2::from_shape_fn((40, 2), |_| rng.random::<f64>() * 6.0 - 3.0));
        let fit = train_ubm(&[&data], 3, 5, 3).unwrap();
        let ubm = &fit.ubm;
        let stats = bw_stats(&data, ubm).unwrap();

        // Oracle: per-frame responsibility computation in plain loops.
        let mut n_want = vec![0.0f64; 3];
        let mut f_want = vec![vec![0.0f64; 2]; 3];
        for t in 0..data.num_frames() {
            let mut lp = vec![0.0f64; 3];
            for c in 0..3 {
                let mut acc = ubm.weights[c].ln();
                for j in 0..2 {
                    let var = ubm.variances[[c, j]];
                    let d = data.data[[t, j]] - ubm.means[[c, j]];
                    acc += -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var);
                }
                lp[c] = acc;
            }
            let m = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = lp.iter().map(|&v| (v - m).exp()).sum();
            for c in 0..3 {
                let gamma = (lp[c] - m).exp() / z;
                n_want[c] += gamma;
                for j in 0..2 {
                    f_want[c][j] += gamma * (data.data[[t, j]] - ubm.means[[c, j]]);
                }
            }
        }
        for c in 0..3 {
            assert_abs_diff_eq!(stats.n[c], n_want[c], epsilon = 1e-9);
            for j in 0..2 {
                assert_abs_diff_eq!(stats.f[[c, j]], f_want[c][j], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn stats_dimension_mismatch_is_contract_error() {
        let ubm = GmmUbm {
            weights: ndarray::arr1(&[1.0]),
            means: Array2::zeros((1, 3)),
            variances: Array2::ones((1, 3)),
        };
        assert!(bw_stats(&fm(Array2::zeros((4, 2))), &ubm).is_err());
    }

    #[test]
    fn pooling_adds_counts() {
        let a = BwStats {
            n: ndarray::arr1(&[1.0, 2.0]),
            f: Array2::ones((2, 3)),
        };
        let b = BwStats {
            n: ndarray::arr1(&[0.5, 0.5]),
            f: Array2::ones((2, 3)) * 2.0,
        };
        let pooled = pool_stats(&[&a, &b]).unwrap();
        assert_eq!(pooled.n, ndarray::arr1(&[1.5, 2.5]));
        assert_eq!(pooled.f[[0, 0]], 3.0);
    }
}
