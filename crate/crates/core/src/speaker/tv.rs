//! Total-variability model: EM training of the low-rank matrix T in
//! `M = m + Tw` and posterior-mean i-vector extraction.

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gmm::{BwStats, GmmUbm};
use super::IVector;
use crate::error::{contract_err, data_err, EngineError, Result};
use crate::linalg::{cho_solve, cholesky, spd_inverse};

/// The low-rank total-variability matrix, stored as one F x d block per UBM
/// component.
#[derive(Debug, Clone, PartialEq)]
pub struct TvMatrix {
    /// (C*F) x d matrix; rows c*F..(c+1)*F form the block of component c.
    pub mat: Array2<f64>,
    pub components: usize,
    pub feat_dim: usize,
}

impl TvMatrix {
    pub fn ivector_dim(&self) -> usize {
        self.mat.ncols()
    }

    fn block(&self, c: usize) -> ndarray::ArrayView2<'_, f64> {
        self.mat
            .slice(s![c * self.feat_dim..(c + 1) * self.feat_dim, ..])
    }
}

/// A trained T matrix plus the per-iteration marginal-likelihood auxiliary.
#[derive(Debug, Clone)]
pub struct TvFit {
    pub tv: TvMatrix,
    /// T-dependent part of the marginal log-likelihood at the start of each
    /// iteration; EM makes this non-decreasing.
    pub auxiliary: Vec<f64>,
}

/// Posterior precision `L = I + sum_c N_c T_c' S_c^-1 T_c` and the
/// information vector `a = T' S^-1 F` for one utterance.
fn posterior_terms(
    stats: &BwStats,
    tv: &TvMatrix,
    precomputed: &[Array2<f64>],
    ubm: &GmmUbm,
) -> (Array2<f64>, Array1<f64>) {
    let d = tv.ivector_dim();
    let mut l = Array2::eye(d);
    let mut a = Array1::zeros(d);
    for c in 0..tv.components {
        let n_c = stats.n[c];
        if n_c != 0.0 {
            l.scaled_add(n_c, &precomputed[c]);
        }
        let block = tv.block(c);
        for fi in 0..tv.feat_dim {
            let scaled = stats.f[[c, fi]] / ubm.variances[[c, fi]];
            if scaled != 0.0 {
                for di in 0..d {
                    a[di] += block[[fi, di]] * scaled;
                }
            }
        }
    }
    (l, a)
}

/// `T_c' S_c^-1 T_c` for every component.
fn gram_blocks(tv: &TvMatrix, ubm: &GmmUbm) -> Vec<Array2<f64>> {
    let d = tv.ivector_dim();
    (0..tv.components)
        .map(|c| {
            let block = tv.block(c);
            let mut scaled = block.to_owned();
            for fi in 0..tv.feat_dim {
                let inv = 1.0 / ubm.variances[[c, fi]];
                for di in 0..d {
                    scaled[[fi, di]] *= inv;
                }
            }
            block.t().dot(&scaled)
        })
        .collect()
}

fn check_stats(stats: &BwStats, ubm: &GmmUbm) -> Result<()> {
    if stats.components() != ubm.components() || stats.feat_dim() != ubm.feat_dim() {
        return contract_err(format!(
            "statistics are {}x{} but UBM is {}x{}",
            stats.components(),
            stats.feat_dim(),
            ubm.components(),
            ubm.feat_dim()
        ));
    }
    Ok(())
}

/// Train T by EM over per-utterance statistics.
pub fn train_tv(
    stats: &[BwStats],
    ubm: &GmmUbm,
    dim: usize,
    iters: usize,
    seed: u64,
) -> Result<TvFit> {
    if dim == 0 {
        return data_err("i-vector dimension must be >= 1");
    }
    if stats.len() < dim {
        return data_err(format!(
            "need at least {dim} training utterances for a {dim}-dimensional subspace, got {}",
            stats.len()
        ));
    }
    for s in stats {
        check_stats(s, ubm)?;
    }
    let c = ubm.components();
    let f = ubm.feat_dim();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tv = TvMatrix {
        mat: Array2::from_shape_fn((c * f, dim), |_| (rng.random::<f64>() - 0.5) * 0.2),
        components: c,
        feat_dim: f,
    };

    let mut auxiliary = Vec::with_capacity(iters);
    for _ in 0..iters {
        let grams = gram_blocks(&tv, ubm);

        // E-step: posterior mean and second moment of w per utterance.
        let mut aux = 0.0;
        let mut a_acc = vec![Array2::<f64>::zeros((dim, dim)); c];
        let mut b_acc = vec![Array2::<f64>::zeros((f, dim)); c];
        for (ui, st) in stats.iter().enumerate() {
            let (l, a) = posterior_terms(st, &tv, &grams, ubm);
            let chol = cholesky(l.view()).map_err(|_| {
                EngineError::Numerical(format!(
                    "posterior precision for utterance {ui} is not positive definite"
                ))
            })?;
            let w = cho_solve(&chol, a.view());
            let logdet = 2.0 * (0..dim).map(|i| chol[[i, i]].ln()).sum::<f64>();
            aux += 0.5 * (a.dot(&w) - logdet);

            let cov = spd_inverse(l.view())?;
            let mut second = cov;
            for i in 0..dim {
                for j in 0..dim {
                    second[[i, j]] += w[i] * w[j];
                }
            }
            for ci in 0..c {
                a_acc[ci].scaled_add(st.n[ci], &second);
                for fi in 0..f {
                    let fv = st.f[[ci, fi]];
                    if fv != 0.0 {
                        for di in 0..dim {
                            b_acc[ci][[fi, di]] += fv * w[di];
                        }
                    }
                }
            }
        }
        auxiliary.push(aux);

        // M-step: per component, solve T_c A_c = B_c row by row.
        for ci in 0..c {
            let chol = cholesky(a_acc[ci].view()).map_err(|_| {
                EngineError::Numerical(format!(
                    "singular accumulator for component {ci}: insufficient occupancy across {} utterances",
                    stats.len()
                ))
            })?;
            for fi in 0..f {
                let row = cho_solve(&chol, b_acc[ci].row(fi));
                tv.mat.row_mut(ci * f + fi).assign(&row);
            }
        }
    }

    Ok(TvFit { tv, auxiliary })
}

/// Extract the i-vector `w = L^-1 T' S^-1 F` for one utterance.
pub fn extract_ivector(stats: &BwStats, tv: &TvMatrix, ubm: &GmmUbm) -> Result<IVector> {
    check_stats(stats, ubm)?;
    if tv.components != ubm.components() || tv.feat_dim != ubm.feat_dim() {
        return contract_err("total-variability matrix does not match the UBM");
    }
    if stats.n.iter().any(|v| !v.is_finite()) || stats.f.iter().any(|v| !v.is_finite()) {
        return data_err("non-finite sufficient statistics");
    }
    let grams = gram_blocks(tv, ubm);
    let (l, a) = posterior_terms(stats, tv, &grams, ubm);
    let values = crate::linalg::solve_spd(l.view(), a.view())
        .map_err(|_| EngineError::Numerical("i-vector posterior precision not invertible".into()))?;
    Ok(IVector {
        values,
        normalized: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr1;

    fn unit_ubm(c: usize, f: usize) -> GmmUbm {
        GmmUbm {
            weights: Array1::from_elem(c, 1.0 / c as f64),
            means: Array2::zeros((c, f)),
            variances: Array2::ones((c, f)),
        }
    }

    fn synth_stats(
        true_t: &Array2<f64>,
        w: f64,
        frames: &[f64],
        c: usize,
        f: usize,
    ) -> BwStats {
        // F_c = N_c * T_c * w for the noiseless one-factor model.
        let mut first = Array2::zeros((c, f));
        for ci in 0..c {
            for fi in 0..f {
                first[[ci, fi]] = frames[ci] * true_t[[ci * f + fi, 0]] * w;
            }
        }
        BwStats {
            n: Array1::from_vec(frames.to_vec()),
            f: first,
        }
    }

    #[test]
    fn one_dimensional_factor_model_is_recovered() {
        let (c, f) = (2usize, 2usize);
        let ubm = unit_ubm(c, f);
        let true_t = ndarray::arr2(&[[0.8], [-0.5], [0.3], [1.1]]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut stats = Vec::new();
        let mut ws = Vec::new();
        for _ in 0..120 {
            // Approximately standard normal latent factors.
            let w: f64 = (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0;
            let frames = [40.0 + rng.random::<f64>() * 20.0, 35.0 + rng.random::<f64>() * 20.0];
            stats.push(synth_stats(&true_t, w, &frames, c, f));
            ws.push((w, frames));
        }
        let fit = train_tv(&stats, &ubm, 1, 8, 3).unwrap();

        // Least-squares oracle with the known latent factors:
        // t_cf = sum_i F_icf w_i / sum_i N_ic w_i^2.
        let mut oracle = Array2::zeros((c * f, 1));
        for ci in 0..c {
            let denom: f64 = ws.iter().map(|(w, n)| n[ci] * w * w).sum();
            for fi in 0..f {
                let num: f64 = stats
                    .iter()
                    .zip(&ws)
                    .map(|(s, (w, _))| s.f[[ci, fi]] * w)
                    .sum();
                oracle[[ci * f + fi, 0]] = num / denom;
            }
        }
        // Sign flip allowed: align on the largest-magnitude row.
        let sign = if fit.tv.mat[[3, 0]] * oracle[[3, 0]] < 0.0 {
            -1.0
        } else {
            1.0
        };
        for r in 0..c * f {
            let got = sign * fit.tv.mat[[r, 0]];
            let want = oracle[[r, 0]];
            assert!(
                (got - want).abs() <= 0.1 * want.abs().max(0.1),
                "row {r}: got {got}, oracle {want}"
            );
        }
    }

    #[test]
    fn auxiliary_is_non_decreasing() {
        let (c, f) = (3usize, 2usize);
        let ubm = unit_ubm(c, f);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let stats: Vec<BwStats> = (0..30)
            .map(|_| BwStats {
                n: Array1::from_shape_fn(c, |_| 10.0 + rng.random::<f64>() * 30.0),
                f: Array2::from_shape_fn((c, f), |_| rng.random::<f64>() * 8.0 - 4.0),
            })
            .collect();
        let fit = train_tv(&stats, &ubm, 2, 12, 5).unwrap();
        for w in fit.auxiliary.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "auxiliary decreased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ubm = unit_ubm(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stats: Vec<BwStats> = (0..10)
            .map(|_| BwStats {
                n: arr1(&[20.0, 25.0]),
                f: Array2::from_shape_fn((2, 2), |_| rng.random::<f64>() - 0.5),
            })
            .collect();
        let a = train_tv(&stats, &ubm, 2, 4, 7).unwrap();
        let b = train_tv(&stats, &ubm, 2, 4, 7).unwrap();
        assert_eq!(a.tv, b.tv);
    }

    #[test]
    fn too_few_utterances_is_a_data_error() {
        let ubm = unit_ubm(2, 2);
        let stats = vec![BwStats {
            n: arr1(&[5.0, 5.0]),
            f: Array2::ones((2, 2)),
        }];
        assert!(train_tv(&stats, &ubm, 3, 2, 0).is_err());
    }

    #[test]
    fn zero_t_matrix_gives_zero_ivector() {
        let ubm = unit_ubm(2, 2);
        let tv = TvMatrix {
            mat: Array2::zeros((4, 3)),
            components: 2,
            feat_dim: 2,
        };
        let stats = BwStats {
            n: arr1(&[10.0, 5.0]),
            f: Array2::ones((2, 2)),
        };
        let ivec = extract_ivector(&stats, &tv, &ubm).unwrap();
        assert_eq!(ivec.values, Array1::<f64>::zeros(3));
    }

    #[test]
    fn zero_frame_stats_give_zero_ivector() {
        let ubm = unit_ubm(2, 2);
        let tv = TvMatrix {
            mat: Array2::ones((4, 2)),
            components: 2,
            feat_dim: 2,
        };
        let stats = BwStats {
            n: Array1::zeros(2),
            f: Array2::zeros((2, 2)),
        };
        let ivec = extract_ivector(&stats, &tv, &ubm).unwrap();
        assert_eq!(ivec.values, Array1::<f64>::zeros(2));
    }

    #[test]
    fn scalar_case_matches_closed_form() {
        // C = 1, F = 1, d = 1: w = t F / (sigma^2 + N t^2).
        let ubm = GmmUbm {
            weights: arr1(&[1.0]),
            means: Array2::zeros((1, 1)),
            variances: Array2::from_elem((1, 1), 2.0),
        };
        let t = 0.7;
        let tv = TvMatrix {
            mat: Array2::from_elem((1, 1), t),
            components: 1,
            feat_dim: 1,
        };
        let (n, f_stat) = (12.0, 3.4);
        let stats = BwStats {
            n: arr1(&[n]),
            f: Array2::from_elem((1, 1), f_stat),
        };
        let ivec = extract_ivector(&stats, &tv, &ubm).unwrap();
        let sigma2 = 2.0;
        let want = t * f_stat / (sigma2 + n * t * t);
        assert_abs_diff_eq!(ivec.values[0], want, epsilon = 1e-12);

        // Doubling N and F keeps the sign of w (scale consistency).
        let stats2 = BwStats {
            n: arr1(&[2.0 * n]),
            f: Array2::from_elem((1, 1), 2.0 * f_stat),
        };
        let ivec2 = extract_ivector(&stats2, &tv, &ubm).unwrap();
        assert!(ivec.values[0].signum() == ivec2.values[0].signum());
        let want2 = t * 2.0 * f_stat / (sigma2 + 2.0 * n * t * t);
        assert_abs_diff_eq!(ivec2.values[0], want2, epsilon = 1e-12);
    }

    #[test]
    fn identical_stats_give_bit_identical_ivectors() {
        let ubm = unit_ubm(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let stats: Vec<BwStats> = (0..5)
            .map(|_| BwStats {
                n: Array1::from_shape_fn(3, |_| rng.random::<f64>() * 20.0),
                f: Array2::from_shape_fn((3, 2), |_| rng.random::<f64>() - 0.5),
            })
            .collect();
        let fit = train_tv(&stats, &ubm, 2, 3, 1).unwrap();
        let a = extract_ivector(&stats[0], &fit.tv, &ubm).unwrap();
        let b = extract_ivector(&stats[0], &fit.tv, &ubm).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_stats_are_rejected() {
        let ubm = unit_ubm(1, 1);
        let tv = TvMatrix {
            mat: Array2::ones((1, 1)),
            components: 1,
            feat_dim: 1,
        };
        let stats = BwStats {
            n: arr1(&[f64::NAN]),
            f: Array2::zeros((1, 1)),
        };
        assert!(extract_ivector(&stats, &tv, &ubm).is_err());
    }
}
