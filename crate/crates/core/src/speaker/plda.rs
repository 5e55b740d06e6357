//! Two-covariance PLDA back-end plus cosine scoring and length
//! normalization.
//!
//! Generative model: an i-vector from speaker s is `x = mu + y_s + e` with
//! `y_s ~ N(0, between)` and `e ~ N(0, within)`. Scoring returns the
//! log-likelihood ratio of the same-speaker joint density against the
//! different-speaker one.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};

use super::IVector;
use crate::error::{contract_err, data_err, Result};
use crate::linalg::{spd_inverse, spd_logdet};

/// Covariance regularizer added to both matrices during training.
const PLDA_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    pub mean: Array1<f64>,
    pub between: Array2<f64>,
    pub within: Array2<f64>,
    /// Speaker-verification decision threshold calibrated at the dev-set
    /// equal-error-rate point, if calibration has run.
    pub sv_threshold: Option<f64>,
}

impl PldaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Scale an i-vector to unit Euclidean norm.
pub fn length_normalize(ivec: &IVector) -> Result<IVector> {
    let norm = ivec.norm();
    if norm == 0.0 || !norm.is_finite() {
        return data_err("cannot length-normalize a zero or non-finite vector");
    }
    Ok(IVector {
        values: &ivec.values / norm,
        normalized: true,
    })
}

/// Cosine similarity of two embeddings, in [-1, 1].
pub fn cosine_score(a: &IVector, b: &IVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return contract_err(format!("dimension mismatch: {} vs {}", a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return data_err("cannot cosine-score a zero vector");
    }
    Ok(a.values.dot(&b.values) / (na * nb))
}

/// Fit the two-covariance model: `mean` is the global mean, `between` the
/// covariance of speaker means, `within` the pooled within-speaker
/// covariance. Speakers with a single utterance contribute to the between
/// statistics only.
pub fn train_plda(ivecs: &[IVector], speakers: &[String]) -> Result<PldaModel> {
    if ivecs.len() != speakers.len() {
        return contract_err("one speaker label per i-vector required");
    }
    if ivecs.is_empty() {
        return data_err("no i-vectors to train on");
    }
    let d = ivecs[0].dim();
    if ivecs.iter().any(|v| v.dim() != d) {
        return contract_err("inconsistent i-vector dimensions");
    }

    let mut by_speaker: BTreeMap<&str, Vec<&IVector>> = BTreeMap::new();
    for (v, s) in ivecs.iter().zip(speakers) {
        by_speaker.entry(s.as_str()).or_default().push(v);
    }
    if by_speaker.len() < 2 {
        return data_err("PLDA training needs at least two speakers");
    }
    if by_speaker.values().all(|v| v.len() < 2) {
        return data_err(
            "every speaker has a single utterance; within-speaker covariance is unidentifiable",
        );
    }

    let mut mean = Array1::<f64>::zeros(d);
    for v in ivecs {
        mean += &v.values;
    }
    mean /= ivecs.len() as f64;

    let speaker_means: Vec<Array1<f64>> = by_speaker
        .values()
        .map(|utts| {
            let mut m = Array1::<f64>::zeros(d);
            for u in utts {
                m += &u.values;
            }
            m / utts.len() as f64
        })
        .collect();

    let mut between = Array2::<f64>::zeros((d, d));
    for m in &speaker_means {
        let dm = m - &mean;
        for i in 0..d {
            for j in 0..d {
                between[[i, j]] += dm[i] * dm[j];
            }
        }
    }
    between /= (by_speaker.len() - 1) as f64;

    let mut within = Array2::<f64>::zeros((d, d));
    let mut dof = 0usize;
    for (utts, m) in by_speaker.values().zip(&speaker_means) {
        if utts.len() < 2 {
            continue;
        }
        for u in utts {
            let du = &u.values - m;
            for i in 0..d {
                for j in 0..d {
                    within[[i, j]] += du[i] * du[j];
                }
            }
        }
        dof += utts.len() - 1;
    }
    within /= dof as f64;

    for i in 0..d {
        between[[i, i]] += PLDA_RIDGE;
        within[[i, i]] += PLDA_RIDGE;
    }

    Ok(PldaModel {
        mean,
        between,
        within,
        sv_threshold: None,
    })
}

/// Log-likelihood ratio that `enroll` and `test` share a speaker, symmetric
/// in its arguments.
pub fn plda_score(model: &PldaModel, enroll: &IVector, test: &IVector) -> Result<f64> {
    let d = model.dim();
    if enroll.dim() != d || test.dim() != d {
        return contract_err(format!(
            "i-vector dims {} / {} do not match model dim {d}",
            enroll.dim(),
            test.dim()
        ));
    }
    let x = &enroll.values - &model.mean;
    let y = &test.values - &model.mean;

    // Joint same-speaker covariance [[A, B], [B, A]] with A = between +
    // within; scored via its block inverse: lambda = (A - B A^-1 B)^-1.
    let a = &model.between + &model.within;
    let a_inv = spd_inverse(a.view())?;
    let schur = &a - &model.between.dot(&a_inv).dot(&model.between);
    let lambda = spd_inverse(schur.view())?;
    let gamma = a_inv.dot(&model.between).dot(&lambda);

    let q = &a_inv - &lambda;
    let quad = 0.5 * x.dot(&q.dot(&x)) + 0.5 * y.dot(&q.dot(&y)) + x.dot(&gamma.dot(&y));
    let logdet_term = 0.5 * (spd_logdet(a.view())? - spd_logdet(schur.view())?);
    Ok(quad + logdet_term)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iv(values: Vec<f64>) -> IVector {
        IVector {
            values: Array1::from_vec(values),
            normalized: false,
        }
    }

    #[test]
    fn normalize_three_four_five() {
        let out = length_normalize(&iv(vec![3.0, 4.0])).unwrap();
        assert_abs_diff_eq!(out.values[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(out.values[1], 0.8, epsilon = 1e-15);
        assert!(out.normalized);
    }

    #[test]
    fn normalize_is_idempotent() {
        let v = iv(vec![0.2, -0.7, 1.3]);
        let once = length_normalize(&v).unwrap();
        let twice = length_normalize(&once).unwrap();
        for (a, b) in once.values.iter().zip(twice.values.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(twice.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn normalize_rejects_zero() {
        assert!(length_normalize(&iv(vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn cosine_reference_points() {
        assert_abs_diff_eq!(
            cosine_score(&iv(vec![1.0, 2.0]), &iv(vec![1.0, 2.0])).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            cosine_score(&iv(vec![1.0, 0.0]), &iv(vec![0.0, 3.0])).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            cosine_score(&iv(vec![1.0, -2.0]), &iv(vec![-1.0, 2.0])).unwrap(),
            -1.0,
            epsilon = 1e-12
        );
        assert!(cosine_score(&iv(vec![0.0]), &iv(vec![1.0])).is_err());
    }

    #[test]
    fn identical_utterances_leave_only_the_ridge() {
        let ivecs = vec![
            iv(vec![1.0, 2.0]),
            iv(vec![1.0, 2.0]),
            iv(vec![-3.0, 0.5]),
            iv(vec![-3.0, 0.5]),
        ];
        let speakers = vec!["a".into(), "a".into(), "b".into(), "b".into()];
        let model = train_plda(&ivecs, &speakers).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { PLDA_RIDGE } else { 0.0 };
                assert_abs_diff_eq!(model.within[[i, j]], want, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn two_opposed_speakers_give_rank_one_between() {
        let u = [2.0, -1.0];
        let ivecs = vec![
            iv(vec![u[0], u[1]]),
            iv(vec![u[0], u[1]]),
            iv(vec![-u[0], -u[1]]),
            iv(vec![-u[0], -u[1]]),
        ];
        let speakers = vec!["p".into(), "p".into(), "q".into(), "q".into()];
        let model = train_plda(&ivecs, &speakers).unwrap();
        // between ~ c * u u^T (plus the ridge): off-diagonal ratio pins the
        // direction.
        let b = &model.between;
        assert_abs_diff_eq!(b[[0, 1]] / b[[0, 0]], u[1] / u[0], epsilon = 1e-3);
        assert_abs_diff_eq!(b[[1, 1]] / b[[0, 1]], u[1] / u[0], epsilon = 1e-3);
    }

    #[test]
    fn all_singleton_speakers_is_a_training_error() {
        let ivecs = vec![iv(vec![1.0]), iv(vec![2.0]), iv(vec![3.0])];
        let speakers = vec!["a".into(), "b".into(), "c".into()];
        assert!(train_plda(&ivecs, &speakers).is_err());
    }

    fn simulate(
        b_scale: &[f64],
        w_scale: &[f64],
        n_spk: usize,
        per_spk: usize,
        seed: u64,
    ) -> (Vec<IVector>, Vec<String>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = b_scale.len();
        let mut gauss = move |sd: f64| {
            // Box-Muller.
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            sd * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let mut ivecs = Vec::new();
        let mut speakers = Vec::new();
        for s in 0..n_spk {
            let center: Vec<f64> = b_scale.iter().map(|&sd| gauss(sd)).collect();
            for _ in 0..per_spk {
                let v: Vec<f64> = (0..d).map(|i| center[i] + gauss(w_scale[i])).collect();
                ivecs.push(iv(v));
                speakers.push(format!("s{s}"));
            }
        }
        (ivecs, speakers)
    }

    #[test]
    fn simulated_covariances_are_recovered() {
        let b_sd = [1.5, 0.8, 1.1];
        let w_sd = [0.5, 0.9, 0.4];
        let (ivecs, speakers) = simulate(&b_sd, &w_sd, 60, 200, 13);
        let model = train_plda(&ivecs, &speakers).unwrap();

        let frob = |m: &Array2<f64>, diag: &[f64]| {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { diag[i] * diag[i] } else { 0.0 };
                    num += (m[[i, j]] - want).powi(2);
                    den += want * want;
                }
            }
            (num / den).sqrt()
        };
        assert!(
            frob(&model.within, &w_sd) < 0.15,
            "within error {}",
            frob(&model.within, &w_sd)
        );
        assert!(
            frob(&model.between, &b_sd) < 0.15,
            "between error {}",
            frob(&model.between, &b_sd)
        );
    }

    fn random_model(d: usize, seed: u64) -> PldaModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mk_spd = |rng: &mut ChaCha8Rng| {
            let m = Array2::from_shape_fn((d, d), |_| rng.random::<f64>() - 0.5);
            m.t().dot(&m) + Array2::<f64>::eye(d) * 0.3
        };
        PldaModel {
            mean: Array1::from_shape_fn(d, |_| rng.random::<f64>() - 0.5),
            between: mk_spd(&mut rng),
            within: mk_spd(&mut rng),
            sv_threshold: None,
        }
    }

    #[test]
    fn score_is_symmetric() {
        let model = random_model(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let a = iv((0..4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect());
            let b = iv((0..4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect());
            let ab = plda_score(&model, &a, &b).unwrap();
            let ba = plda_score(&model, &b, &a).unwrap();
            assert_abs_diff_eq!(ab, ba, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_between_covariance_scores_constant() {
        let d = 3;
        let model = PldaModel {
            mean: Array1::zeros(d),
            between: Array2::zeros((d, d)),
            within: Array2::eye(d) * 0.7,
            sv_threshold: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = plda_score(&model, &iv(vec![0.0; d]), &iv(vec![0.0; d])).unwrap();
        for _ in 0..20 {
            let a = iv((0..d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect());
            let b = iv((0..d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect());
            let s = plda_score(&model, &a, &b).unwrap();
            assert_abs_diff_eq!(s, base, epsilon = 1e-9);
        }
    }

    // Independent oracle: assemble both joint Gaussians as dense 2d x 2d
    // covariances and evaluate their log-densities with a hand-rolled
    // Gaussian elimination (no shared linear algebra).
    fn oracle_llr(model: &PldaModel, e: &IVector, t: &IVector) -> f64 {
        let d = model.dim();
        let n = 2 * d;
        let mut same = vec![vec![0.0f64; n]; n];
        let mut diff = vec![vec![0.0f64; n]; n];
        let a = &model.between + &model.within;
        for i in 0..d {
            for j in 0..d {
                same[i][j] = a[[i, j]];
                same[d + i][d + j] = a[[i, j]];
                same[i][d + j] = model.between[[i, j]];
                same[d + i][j] = model.between[[i, j]];
                diff[i][j] = a[[i, j]];
                diff[d + i][d + j] = a[[i, j]];
            }
        }
        let mut z = vec![0.0f64; n];
        for i in 0..d {
            z[i] = e.values[i] - model.mean[i];
            z[d + i] = t.values[i] - model.mean[i];
        }
        let logpdf = |cov: &[Vec<f64>], z: &[f64]| {
            // Gaussian elimination with partial pivoting for solve + logdet.
            let n = z.len();
            let mut m: Vec<Vec<f64>> = cov.to_vec();
            let mut x = z.to_vec();
            let mut logdet = 0.0;
            for col in 0..n {
                let mut piv = col;
                for r in col + 1..n {
                    if m[r][col].abs() > m[piv][col].abs() {
                        piv = r;
                    }
                }
                m.swap(col, piv);
                x.swap(col, piv);
                if piv != col {
                    logdet += std::f64::consts::PI.ln() * 0.0; // sign tracked below
                }
                let p = m[col][col];
                logdet += p.abs().ln();
                for r in col + 1..n {
                    let f = m[r][col] / p;
                    for c2 in col..n {
                        m[r][c2] -= f * m[col][c2];
                    }
                    x[r] -= f * x[col];
                }
            }
            let mut sol = vec![0.0f64; n];
            for r in (0..n).rev() {
                let mut s = x[r];
                for c2 in r + 1..n {
                    s -= m[r][c2] * sol[c2];
                }
                sol[r] = s / m[r][r];
            }
            let quad: f64 = z.iter().zip(&sol).map(|(a, b)| a * b).sum();
            -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
        };
        logpdf(&same, &z) - logpdf(&diff, &z)
    }

    #[test]
    fn score_matches_dense_gaussian_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for seed in 0..10u64 {
            let model = random_model(3, seed + 100);
            let a = iv((0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect());
            let b = iv((0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect());
            let got = plda_score(&model, &a, &b).unwrap();
            let want = oracle_llr(&model, &a, &b);
            assert_abs_diff_eq!(got, want, epsilon = 1e-9);
        }
    }

    #[test]
    fn self_score_beats_distant_impostors() {
        let model = random_model(4, 77);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let a = iv((0..4).map(|_| rng.random::<f64>() - 0.5).collect());
            // Impostor far from a.
            let b = iv(a
                .values
                .iter()
                .map(|v| v + 10.0 + rng.random::<f64>() * 5.0)
                .collect());
            let self_score = plda_score(&model, &a, &a).unwrap();
            let cross = plda_score(&model, &a, &b).unwrap();
            assert!(self_score >= cross, "{self_score} < {cross}");
        }
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let model = random_model(3, 0);
        assert!(plda_score(&model, &iv(vec![0.0; 2]), &iv(vec![0.0; 3])).is_err());
    }
}
