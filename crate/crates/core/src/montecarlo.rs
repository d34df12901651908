//! Monte Carlo estimators over `x ~ N(0, I_d)`.
//!
//! Samples are generated in fixed shards of [`SHARD_ROWS`] rows; shard `k`
//! draws from stream `k` of the seed. Per-shard sums and centered second
//! moments are merged in shard order, so an estimate depends only on
//! `(seed, d, n)` and never on the thread count.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::kl_n_product;
use crate::error::{Error, Result};
use crate::model::{Matrix, NetworkParams};
use crate::packing::{build_f0_ensemble_with, separation_closed_form, CodebookOptions};
use crate::rng::{derive_seed, stream_rng};

pub const SHARD_ROWS: usize = 8192;

/// Tolerance on `‖w‖₂ = 1`.
pub const UNIT_TOL: f64 = 1e-12;

/// Tolerance on `|w_iᵀw_j|` for orthogonality.
pub const ORTHO_TOL: f64 = 1e-10;

/// Pass band in standard errors.
pub const SE_BAND: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard deviation over `√N`.
    pub std_error: f64,
    pub n_samples: u64,
    pub seed: u64,
}

impl McEstimate {
    /// `|mean − target| ≤ 4·std_error`.
    pub fn within(&self, target: f64) -> bool {
        (self.mean - target).abs() <= SE_BAND * self.std_error
    }

    /// Estimate of `a·X + b` for the same draws.
    pub fn affine(&self, a: f64, b: f64) -> McEstimate {
        McEstimate {
            mean: a * self.mean + b,
            std_error: a.abs() * self.std_error,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: u64,
    sum: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
    }

    // Chan et al. pairwise update.
    fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let (na, nb, n) = (self.count as f64, other.count as f64, count as f64);
        Moments {
            count,
            sum: self.sum + other.sum,
            mean: self.mean + delta * nb / n,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n,
        }
    }
}

fn shard_count(n: usize) -> usize {
    n.div_ceil(SHARD_ROWS)
}

fn fill_row(rng: &mut impl Rng, row: &mut [f64]) {
    for v in row.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// `n × d` matrix of i.i.d. standard normals, row `i` identical to the `i`-th
/// draw seen by the estimators with the same seed.
pub fn sample_standard_gaussian(d: usize, n: usize, seed: u64) -> Result<Matrix> {
    if d == 0 || n == 0 {
        return Err(Error::precondition("d and n must be positive"));
    }
    let mut out = Matrix::zeros(n, d);
    out.as_mut_slice()
        .par_chunks_mut(SHARD_ROWS * d)
        .enumerate()
        .for_each(|(k, chunk)| {
            let mut rng = stream_rng(seed, k as u64);
            for row in chunk.chunks_mut(d) {
                fill_row(&mut rng, row);
            }
        });
    Ok(out)
}

/// Sample mean of `f(x)` over `n` Gaussian draws.
pub fn estimate_expectation<F>(d: usize, n: usize, seed: u64, f: F) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if d == 0 || n == 0 {
        return Err(Error::precondition("d and n must be positive"));
    }
    let shards: Vec<Moments> = (0..shard_count(n))
        .into_par_iter()
        .map(|k| {
            let rows = SHARD_ROWS.min(n - k * SHARD_ROWS);
            let mut rng = stream_rng(seed, k as u64);
            let mut x = vec![0.0; d];
            let mut acc = Moments::default();
            for _ in 0..rows {
                fill_row(&mut rng, &mut x);
                acc.push(f(&x));
            }
            acc
        })
        .collect();
    let total = shards.into_iter().fold(Moments::default(), Moments::merge);
    let var = if total.count > 1 {
        (total.m2 / (total.count - 1) as f64).max(0.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        mean: total.sum / total.count as f64,
        std_error: (var / total.count as f64).sqrt(),
        n_samples: total.count,
        seed,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_unit(w: &[f64]) -> Result<()> {
    let norm = dot(w, w).sqrt();
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::precondition(format!("expected a unit vector, got norm {norm}")));
    }
    Ok(())
}

/// Fraction of draws with `wᵀx > 0`.
pub fn estimate_halfspace_prob(w: &[f64], n_samples: usize, seed: u64) -> Result<McEstimate> {
    if w.is_empty() || dot(w, w) == 0.0 {
        return Err(Error::precondition("w must be nonzero"));
    }
    estimate_expectation(w.len(), n_samples, seed, |x| if dot(w, x) > 0.0 { 1.0 } else { 0.0 })
}

/// Mean of `ReLU(wᵀx)²`.
pub fn estimate_relu_sq_moment(w: &[f64], n_samples: usize, seed: u64) -> Result<McEstimate> {
    check_unit(w)?;
    estimate_expectation(w.len(), n_samples, seed, |x| dot(w, x).max(0.0).powi(2))
}

/// Mean of `ReLU(w_iᵀx)·ReLU(w_jᵀx)` for orthonormal `w_i, w_j`.
pub fn estimate_relu_cross_moment(wi: &[f64], wj: &[f64], n_samples: usize, seed: u64) -> Result<McEstimate> {
    if wi.len() != wj.len() {
        return Err(Error::shape("directions of different lengths"));
    }
    check_unit(wi)?;
    check_unit(wj)?;
    let ip = dot(wi, wj);
    if ip.abs() > ORTHO_TOL {
        return Err(Error::precondition(format!("directions are not orthogonal (inner product {ip})")));
    }
    estimate_expectation(wi.len(), n_samples, seed, |x| dot(wi, x).max(0.0) * dot(wj, x).max(0.0))
}

/// Mean of `(f(x) − g(x))²`.
pub fn estimate_l2_distance_sq<F, G>(f: F, g: G, d: usize, n_samples: usize, seed: u64) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    estimate_expectation(d, n_samples, seed, |x| (f(x) - g(x)).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlCheck {
    pub mc_kl: f64,
    pub closed_kl: f64,
    pub mc_std_error: f64,
    pub ok: bool,
}

/// Compares `n/(2σ²)·‖f − g‖²` estimated by sampling against the same
/// expression at a known distance. Without `closed_dist_sq` the estimate is
/// compared with itself.
#[allow(clippy::too_many_arguments)]
pub fn verify_kl_consistency<F, G>(
    f: F,
    g: G,
    d: usize,
    closed_dist_sq: Option<f64>,
    sigma: f64,
    n: u64,
    n_samples: usize,
    seed: u64,
) -> Result<KlCheck>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    if !(sigma > 0.0) {
        return Err(Error::precondition("sigma must be positive"));
    }
    let est = estimate_l2_distance_sq(f, g, d, n_samples, seed)?;
    let factor = n as f64 / (2.0 * sigma * sigma);
    let mc = est.affine(factor, 0.0);
    let closed_kl = closed_dist_sq.map_or(mc.mean, |dist| kl_n_product(dist, sigma, n));
    Ok(KlCheck {
        mc_kl: mc.mean,
        closed_kl,
        mc_std_error: mc.std_error,
        ok: mc.within(closed_kl),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaRow {
    pub lemma: String,
    pub target: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub seed: u64,
    pub pass: bool,
}

impl LemmaRow {
    fn from_estimate(lemma: &str, target: f64, est: McEstimate) -> Self {
        LemmaRow {
            lemma: lemma.to_string(),
            target,
            estimate: est.mean,
            std_error: est.std_error,
            n_samples: est.n_samples,
            seed: est.seed,
            pass: est.within(target),
        }
    }
}

fn basis(d: usize, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[k] = 1.0;
    e
}

/// Unit vector drawn uniformly from the sphere.
pub fn random_unit(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, u64::MAX);
    let mut w = vec![0.0; d];
    loop {
        fill_row(&mut rng, &mut w);
        let norm = dot(&w, &w).sqrt();
        if norm > 1e-8 {
            w.iter_mut().for_each(|v| *v /= norm);
            return w;
        }
    }
}

/// Every Gaussian identity the bounds rely on, each with its own substream.
pub fn run_lemma_suite(n_samples: usize, seed: u64) -> Result<Vec<LemmaRow>> {
    let d = 10;
    let sub = |k: u64| derive_seed(seed, &[k]);
    let e1 = basis(d, 0);
    let e2 = basis(d, 1);
    let w = random_unit(d, sub(100));
    let mut rows = vec![
        LemmaRow::from_estimate("halfspace_e1", 0.5, estimate_halfspace_prob(&e1, n_samples, sub(1))?),
        LemmaRow::from_estimate("halfspace_random", 0.5, estimate_halfspace_prob(&w, n_samples, sub(2))?),
        LemmaRow::from_estimate("relu_sq_moment", 0.5, estimate_relu_sq_moment(&e1, n_samples, sub(3))?),
        LemmaRow::from_estimate(
            "relu_cross_moment",
            1.0 / (2.0 * PI),
            estimate_relu_cross_moment(&e1, &e2, n_samples, sub(4))?,
        ),
        LemmaRow::from_estimate(
            "relu_l2_to_zero",
            0.5,
            estimate_l2_distance_sq(|x| x[0].max(0.0), |_| 0.0, d, n_samples, sub(5))?,
        ),
    ];

    let ens = build_f0_ensemble_with(d, 1, 1.0, 1.0, &CodebookOptions { seed, ..Default::default() })?;
    let (a, b) = (ens.member(0), ens.member(1));
    let closed = separation_closed_form(a, b, &ens)?;
    let sep = estimate_l2_distance_sq(|x| ens.eval(a, x), |x| ens.eval(b, x), d, n_samples, sub(6))?;
    rows.push(LemmaRow::from_estimate("packing_separation", closed, sep));

    let (sigma, n) = (1.0, 10);
    let kl = verify_kl_consistency(
        |x| ens.eval(a, x),
        |x| ens.eval(b, x),
        d,
        Some(closed),
        sigma,
        n,
        n_samples,
        sub(7),
    )?;
    rows.push(LemmaRow {
        lemma: "kl_consistency".into(),
        target: kl.closed_kl,
        estimate: kl.mc_kl,
        std_error: kl.mc_std_error,
        n_samples: n_samples as u64,
        seed: sub(7),
        pass: kl.ok,
    });
    Ok(rows)
}

pub fn lemma_csv(rows: &[LemmaRow]) -> String {
    let mut out = String::from("lemma,target,estimate,std_error,n_samples,seed,pass\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.lemma, r.target, r.estimate, r.std_error, r.n_samples, r.seed, r.pass
        );
    }
    out
}

/// Evaluator for a scalar-output network.
pub fn network_fn(params: &NetworkParams) -> impl Fn(&[f64]) -> f64 + Sync + '_ {
    move |x| params.eval_scalar(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    const N: usize = 1_000_000;

    #[test]
    fn sampling_is_deterministic_and_matches_estimator_draws() {
        let a = sample_standard_gaussian(3, 20_000, 9).unwrap();
        let b = sample_standard_gaussian(3, 20_000, 9).unwrap();
        assert_eq!(a, b);
        let from_matrix: f64 = (0..a.rows()).map(|i| a.get(i, 2)).sum::<f64>() / a.rows() as f64;
        let est = estimate_expectation(3, 20_000, 9, |x| x[2]).unwrap();
        assert!((est.mean - from_matrix).abs() < 1e-12);
    }

    #[test]
    fn gaussian_moments() {
        let mean = estimate_expectation(1, N, 1, |x| x[0]).unwrap();
        assert!(mean.within(0.0));
        let var = estimate_expectation(1, N, 2, |x| x[0] * x[0]).unwrap();
        assert!(var.within(1.0));
    }

    #[test]
    fn halfspace() {
        let e1 = basis(5, 0);
        let est = estimate_halfspace_prob(&e1, N, 3).unwrap();
        assert!(est.within(0.5));
        assert!(est.std_error < 0.0006);
        let neg: Vec<f64> = e1.iter().map(|v| -v).collect();
        let other = estimate_halfspace_prob(&neg, N, 3).unwrap();
        assert_eq!(est.mean + other.mean, 1.0);
        let w = random_unit(5, 4);
        assert!(estimate_halfspace_prob(&w, N, 5).unwrap().within(0.5));
        assert!(estimate_halfspace_prob(&[0.0, 0.0], 10, 0).is_err());
    }

    #[test]
    fn relu_square() {
        let e1 = basis(4, 0);
        assert!(estimate_relu_sq_moment(&e1, N, 6).unwrap().within(0.5));
        let scaled = estimate_expectation(4, N, 7, |x| (2.0 * x[0]).max(0.0).powi(2)).unwrap();
        assert!(scaled.within(2.0));
        assert!(estimate_relu_sq_moment(&[2.0, 0.0], 10, 0).is_err());
    }

    #[test]
    fn relu_cross() {
        let (e1, e2) = (basis(3, 0), basis(3, 1));
        let est = estimate_relu_cross_moment(&e1, &e2, N, 8).unwrap();
        assert!(est.within(1.0 / (2.0 * PI)));
        assert!(estimate_relu_cross_moment(&e1, &e1, 10, 0).is_err());
        assert!(estimate_relu_cross_moment(&e1, &[0.0, 2.0, 0.0], 10, 0).is_err());

        // Product of the means of E[ReLU(z)] = 1/√(2π) on disjoint draws.
        let m1 = estimate_expectation(1, N, 9, |x| x[0].max(0.0)).unwrap();
        let m2 = estimate_expectation(1, N, 10, |x| x[0].max(0.0)).unwrap();
        let inv_sqrt_2pi = 1.0 / (2.0 * PI).sqrt();
        assert!(m1.within(inv_sqrt_2pi) && m2.within(inv_sqrt_2pi));
        let prod = m1.mean * m2.mean;
        let prod_se = (m1.mean * m2.std_error).hypot(m2.mean * m1.std_error);
        assert!((prod - est.mean).abs() <= SE_BAND * prod_se.hypot(est.std_error));
    }

    #[test]
    fn l2_distance() {
        let f = |x: &[f64]| x[0].max(0.0);
        let same = estimate_l2_distance_sq(f, f, 2, 1000, 1).unwrap();
        assert_eq!(same.mean, 0.0);
        assert_eq!(same.std_error, 0.0);
        assert!(estimate_l2_distance_sq(f, |_| 0.0, 2, N, 11).unwrap().within(0.5));
    }

    #[test]
    fn kl_checks() {
        let ens = build_f0_ensemble_with(10, 1, 1.0, 1.0, &CodebookOptions::default()).unwrap();
        let (a, b) = (ens.member(0), ens.member(1));
        let closed = separation_closed_form(a, b, &ens).unwrap();
        let f = |x: &[f64]| ens.eval(a, x);
        let g = |x: &[f64]| ens.eval(b, x);
        let same = verify_kl_consistency(f, f, 10, Some(0.0), 1.0, 10, 1000, 0).unwrap();
        assert!(same.ok && same.mc_kl == 0.0 && same.closed_kl == 0.0);
        let k1 = verify_kl_consistency(f, g, 10, Some(closed), 1.0, 10, N, 12).unwrap();
        assert!(k1.ok);
        assert!((k1.closed_kl - 10.0 * closed / 2.0).abs() < 1e-12);
        let k2 = verify_kl_consistency(f, g, 10, Some(closed), 2.0, 10, N, 12).unwrap();
        assert!((k2.mc_kl * 4.0 - k1.mc_kl).abs() < 1e-12 * k1.mc_kl);
        assert!((k2.closed_kl * 4.0 - k1.closed_kl).abs() < 1e-12 * k1.closed_kl);
        assert!(verify_kl_consistency(f, g, 10, None, 0.0, 10, 10, 0).is_err());
    }

    #[test]
    fn standard_error_scaling() {
        let mut ok = 0;
        for rep in 0..20u64 {
            let a = estimate_expectation(1, 10_000, rep, |x| x[0].max(0.0)).unwrap();
            let b = estimate_expectation(1, 40_000, 1000 + rep, |x| x[0].max(0.0)).unwrap();
            let ratio = b.std_error / a.std_error;
            if (0.3..=0.7).contains(&ratio) {
                ok += 1;
            }
        }
        assert_eq!(ok, 20);
    }

    #[test]
    fn estimates_independent_of_thread_count() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_expectation(3, 100_003, 42, |x| x[0] * x[1] + x[2]).unwrap())
        };
        let one = run(1);
        let many = run(4);
        assert_eq!(one.mean.to_bits(), many.mean.to_bits());
        assert_eq!(one.std_error.to_bits(), many.std_error.to_bits());
    }

    #[test]
    fn suite_passes_and_serializes() {
        let rows = run_lemma_suite(200_000, 1).unwrap();
        assert_eq!(rows.len(), 7);
        assert!(rows.iter().all(|r| r.pass), "{rows:?}");
        let csv = lemma_csv(&rows);
        assert!(csv.starts_with("lemma,target,estimate,std_error,n_samples,seed,pass\n"));
        assert_eq!(csv.lines().count(), 8);
        let small = run_lemma_suite(100, 3).unwrap();
        assert_eq!(small.len(), 7);
    }
}
