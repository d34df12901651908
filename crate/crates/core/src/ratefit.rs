//! Non-negative fits of `c + α/√n` and `c + β/n` to an error series, and the
//! R²-based verdict between them.
//!
//! Both curves are linear in `(θ₀, θ₁)`, so the constrained least-squares
//! problem is solved exactly: take the unconstrained solution if it is
//! feasible, otherwise the best of the three boundary faces.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scaling::AggregateRow;

/// R² differences at or below this are a tie.
pub const TIE_TOL: f64 = 1e-9;

/// Relative tolerance of the KKT certificate.
pub const KKT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    InvSqrtN,
    InvN,
}

impl CurveKind {
    /// Regressor `g(n)`.
    pub fn basis(self, n: f64) -> f64 {
        match self {
            CurveKind::InvSqrtN => 1.0 / n.sqrt(),
            CurveKind::InvN => 1.0 / n,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CurveKind::InvSqrtN => "inv_sqrt_n",
            CurveKind::InvN => "inv_n",
        }
    }
}

/// One observation `(n, e)` with a non-negative weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub n: f64,
    pub error: f64,
    pub weight: f64,
}

impl FitPoint {
    pub fn new(n: f64, error: f64) -> Self {
        FitPoint { n, error, weight: 1.0 }
    }
}

/// Unweighted points from per-`n` means, or weighted by count when `weighted`.
pub fn points_from_aggregate(rows: &[AggregateRow], weighted: bool) -> Vec<FitPoint> {
    rows.iter()
        .map(|r| FitPoint {
            n: r.n as f64,
            error: r.mean_error,
            weight: if weighted { r.count as f64 } else { 1.0 },
        })
        .collect()
}

fn finite_or_undefined<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("undefined")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitResult {
    pub curve: CurveKind,
    pub intercept: f64,
    pub slope: f64,
    pub mse: f64,
    /// `−∞` when the target has no variance and the fit is not exact.
    #[serde(serialize_with = "finite_or_undefined")]
    pub r_squared: f64,
    pub degenerate: bool,
}

impl FitResult {
    pub fn predict(&self, n: f64) -> f64 {
        self.intercept + self.slope * self.curve.basis(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    InvSqrtN,
    InvN,
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fits {
    pub inv_sqrt_n: FitResult,
    pub inv_n: FitResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    pub winner: Winner,
    /// `R²(inv_sqrt_n) − R²(inv_n)`.
    #[serde(serialize_with = "finite_or_undefined")]
    pub margin: f64,
    pub fits: Fits,
}

fn validate(points: &[FitPoint]) -> Result<()> {
    for p in points {
        if !(p.n >= 1.0 && p.n.is_finite()) {
            return Err(Error::precondition(format!("sample size {} is not >= 1", p.n)));
        }
        if !p.error.is_finite() {
            return Err(Error::precondition(format!("error at n = {} is not finite", p.n)));
        }
        if !(p.weight >= 0.0 && p.weight.is_finite()) {
            return Err(Error::precondition(format!("weight at n = {} is invalid", p.n)));
        }
    }
    let mut distinct: Vec<f64> = points.iter().filter(|p| p.weight > 0.0).map(|p| p.n).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Underdetermined { distinct: distinct.len() });
    }
    Ok(())
}

/// `Σ w (e − θ₀ − θ₁ g(n))²`.
pub fn objective(points: &[FitPoint], curve: CurveKind, intercept: f64, slope: f64) -> f64 {
    points
        .iter()
        .map(|p| {
            let r = p.error - intercept - slope * curve.basis(p.n);
            p.weight * r * r
        })
        .sum()
}

fn weighted_mean_error(points: &[FitPoint]) -> f64 {
    let w: f64 = points.iter().map(|p| p.weight).sum();
    points.iter().map(|p| p.weight * p.error).sum::<f64>() / w
}

/// `1 − SS_res/SS_tot`; `(value, degenerate)`.
fn r_squared_parts(points: &[FitPoint], curve: CurveKind, intercept: f64, slope: f64) -> (f64, bool) {
    let mean = weighted_mean_error(points);
    let ss_tot: f64 = points.iter().map(|p| p.weight * (p.error - mean).powi(2)).sum();
    let ss_res = objective(points, curve, intercept, slope);
    if ss_tot == 0.0 {
        let v = if ss_res == 0.0 { 1.0 } else { f64::NEG_INFINITY };
        return (v, true);
    }
    (1.0 - ss_res / ss_tot, false)
}

pub fn r_squared(points: &[FitPoint], fit: &FitResult) -> f64 {
    r_squared_parts(points, fit.curve, fit.intercept, fit.slope).0
}

/// Unweighted fit.
pub fn fit_curve(series: &[(f64, f64)], curve: CurveKind) -> Result<FitResult> {
    let points: Vec<FitPoint> = series.iter().map(|&(n, e)| FitPoint::new(n, e)).collect();
    fit_points(&points, curve)
}

pub fn fit_points(points: &[FitPoint], curve: CurveKind) -> Result<FitResult> {
    validate(points)?;
    let active: Vec<FitPoint> = points.iter().copied().filter(|p| p.weight > 0.0).collect();
    let (intercept, slope) = solve(&active, curve);
    let total_w: f64 = active.iter().map(|p| p.weight).sum();
    let mse = objective(&active, curve, intercept, slope) / total_w;
    let (r2, degenerate) = r_squared_parts(&active, curve, intercept, slope);
    Ok(FitResult {
        curve,
        intercept,
        slope,
        mse,
        r_squared: r2,
        degenerate,
    })
}

fn solve(points: &[FitPoint], curve: CurveKind) -> (f64, f64) {
    let e0 = points[0].error;
    if points.iter().all(|p| p.error == e0) {
        return (e0.max(0.0), 0.0);
    }
    let w: f64 = points.iter().map(|p| p.weight).sum();
    let xbar = points.iter().map(|p| p.weight * curve.basis(p.n)).sum::<f64>() / w;
    let ybar = weighted_mean_error(points);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut sxx0 = 0.0;
    let mut sxy0 = 0.0;
    for p in points {
        let x = curve.basis(p.n);
        sxx += p.weight * (x - xbar) * (x - xbar);
        sxy += p.weight * (x - xbar) * (p.error - ybar);
        sxx0 += p.weight * x * x;
        sxy0 += p.weight * x * p.error;
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    if intercept >= 0.0 && slope >= 0.0 {
        return (intercept, slope);
    }
    // Boundary faces: θ₀ = 0, θ₁ = 0, and the origin.
    let candidates = [(0.0, (sxy0 / sxx0).max(0.0)), (ybar.max(0.0), 0.0), (0.0, 0.0)];
    candidates
        .into_iter()
        .min_by(|a, b| objective(points, curve, a.0, a.1).total_cmp(&objective(points, curve, b.0, b.1)))
        .expect("three candidates")
}

/// Gradient of the objective at a fit and the scale it is judged against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub grad_intercept: f64,
    pub grad_slope: f64,
    pub scale: f64,
    pub holds: bool,
}

pub fn kkt_check(points: &[FitPoint], fit: &FitResult) -> KktReport {
    let mut g0 = 0.0;
    let mut g1 = 0.0;
    let mut scale = 0.0;
    for p in points {
        let x = fit.curve.basis(p.n);
        let r = p.error - fit.intercept - fit.slope * x;
        g0 -= 2.0 * p.weight * r;
        g1 -= 2.0 * p.weight * r * x;
        scale += 2.0 * p.weight * (p.error.abs() + fit.intercept.abs() + (fit.slope * x).abs()) * (1.0 + x.abs());
    }
    let tol = KKT_TOL * scale.max(f64::MIN_POSITIVE);
    let ok = |theta: f64, g: f64| if theta > 0.0 { g.abs() <= tol } else { g >= -tol };
    KktReport {
        grad_intercept: g0,
        grad_slope: g1,
        scale,
        holds: ok(fit.intercept, g0) && ok(fit.slope, g1),
    }
}

pub fn compare(points: &[FitPoint]) -> Result<Verdict> {
    let a = fit_points(points, CurveKind::InvSqrtN)?;
    let b = fit_points(points, CurveKind::InvN)?;
    let margin = if a.r_squared == b.r_squared { 0.0 } else { a.r_squared - b.r_squared };
    let winner = if (a.degenerate && b.degenerate) || margin.abs() <= TIE_TOL {
        Winner::Tie
    } else if margin > 0.0 {
        Winner::InvSqrtN
    } else {
        Winner::InvN
    };
    Ok(Verdict {
        winner,
        margin,
        fits: Fits { inv_sqrt_n: a, inv_n: b },
    })
}

pub fn compare_series(series: &[(f64, f64)]) -> Result<Verdict> {
    let points: Vec<FitPoint> = series.iter().map(|&(n, e)| FitPoint::new(n, e)).collect();
    compare(&points)
}

pub fn verdict_json(v: &Verdict) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

/// `n,observed,fitted_sqrt,fitted_inv` for every point.
pub fn plot_csv(points: &[FitPoint], v: &Verdict) -> String {
    let mut out = String::from("n,observed,fitted_sqrt,fitted_inv\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e}",
            p.n,
            p.error,
            v.fits.inv_sqrt_n.predict(p.n),
            v.fits.inv_n.predict(p.n)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_sqrt_series() {
        let s = [(100.0, 0.4), (400.0, 0.25), (2500.0, 0.16)];
        let f = fit_curve(&s, CurveKind::InvSqrtN).unwrap();
        assert!((f.intercept - 0.1).abs() < 1e-12);
        assert!((f.slope - 3.0).abs() < 1e-10);
        assert!(f.mse <= 1e-24);
        assert!((f.r_squared - 1.0).abs() <= 1e-12);
        assert!(!f.degenerate);
    }

    #[test]
    fn exact_inverse_series() {
        let s = [(1.0, 2.0), (2.0, 1.0), (4.0, 0.5)];
        let f = fit_curve(&s, CurveKind::InvN).unwrap();
        assert!(f.intercept.abs() < 1e-12 && (f.slope - 2.0).abs() < 1e-12);
        assert!(f.mse <= 1e-24);
        let g = fit_curve(&s, CurveKind::InvSqrtN).unwrap();
        assert!(g.mse > 1e-6);
        assert!(kkt_check(&points(&s), &g).holds);
    }

    fn points(s: &[(f64, f64)]) -> Vec<FitPoint> {
        s.iter().map(|&(n, e)| FitPoint::new(n, e)).collect()
    }

    #[test]
    fn constant_series() {
        let s = [(10.0, 0.3), (20.0, 0.3), (40.0, 0.3)];
        for c in [CurveKind::InvSqrtN, CurveKind::InvN] {
            let f = fit_curve(&s, c).unwrap();
            assert_eq!((f.intercept, f.slope, f.mse), (0.3, 0.0, 0.0));
            assert!(f.degenerate);
            assert_eq!(f.r_squared, 1.0);
        }
        let v = compare_series(&s).unwrap();
        assert_eq!(v.winner, Winner::Tie);
    }

    #[test]
    fn underdetermined() {
        assert!(matches!(fit_curve(&[(5.0, 1.0)], CurveKind::InvN), Err(Error::Underdetermined { distinct: 1 })));
        assert!(matches!(
            fit_curve(&[(5.0, 1.0), (5.0, 2.0)], CurveKind::InvN),
            Err(Error::Underdetermined { distinct: 1 })
        ));
        assert!(fit_curve(&[(0.5, 1.0), (5.0, 2.0)], CurveKind::InvN).is_err());
    }

    #[test]
    fn r_squared_of_mean_only_fit_is_zero() {
        let s = points(&[(1.0, 1.0), (2.0, 3.0), (3.0, 2.0)]);
        let mean_fit = FitResult {
            curve: CurveKind::InvN,
            intercept: 2.0,
            slope: 0.0,
            mse: 0.0,
            r_squared: 0.0,
            degenerate: false,
        };
        assert_eq!(r_squared(&s, &mean_fit), 0.0);
        let bad = FitResult { intercept: 10.0, ..mean_fit };
        assert!(r_squared(&s, &bad) < 0.0);
    }

    #[test]
    fn increasing_series_hits_the_boundary() {
        // Errors growing with n force a zero slope.
        let s = points(&[(10.0, 0.1), (100.0, 0.2), (1000.0, 0.3)]);
        for c in [CurveKind::InvSqrtN, CurveKind::InvN] {
            let f = fit_points(&s, c).unwrap();
            assert_eq!(f.slope, 0.0);
            assert!((f.intercept - 0.2).abs() < 1e-15);
            assert!(kkt_check(&s, &f).holds);
        }
    }

    #[test]
    fn generator_verdicts() {
        let ns = [250.0f64, 500.0, 1000.0, 2000.0, 4000.0, 8000.0];
        let sq: Vec<(f64, f64)> = ns.iter().map(|&n| (n, 0.05 + 2.0 / n.sqrt())).collect();
        let v = compare_series(&sq).unwrap();
        assert_eq!(v.winner, Winner::InvSqrtN);
        assert!(v.margin > 0.0);
        let inv: Vec<(f64, f64)> = ns.iter().map(|&n| (n, 0.05 + 40.0 / n)).collect();
        assert_eq!(compare_series(&inv).unwrap().winner, Winner::InvN);
    }

    #[test]
    fn weighting_and_duplication() {
        let s = points(&[(100.0, 0.5), (200.0, 0.3), (400.0, 0.28), (800.0, 0.2)]);
        let base = fit_points(&s, CurveKind::InvSqrtN).unwrap();
        let mut doubled = s.clone();
        doubled.extend(s.iter().copied());
        let d = fit_points(&doubled, CurveKind::InvSqrtN).unwrap();
        assert!((d.intercept - base.intercept).abs() < 1e-12);
        assert!((d.slope - base.slope).abs() < 1e-12);
        let weighted: Vec<FitPoint> = s.iter().map(|p| FitPoint { weight: 2.0, ..*p }).collect();
        let w = fit_points(&weighted, CurveKind::InvSqrtN).unwrap();
        assert!((w.slope - base.slope).abs() < 1e-12);
        let mut rev = s.clone();
        rev.reverse();
        let r = fit_points(&rev, CurveKind::InvSqrtN).unwrap();
        assert!((r.slope - base.slope).abs() < 1e-12 && (r.mse - base.mse).abs() < 1e-15);
    }

    #[test]
    fn json_report() {
        let s = points(&[(100.0, 0.4), (400.0, 0.25), (2500.0, 0.16)]);
        let v = compare(&s).unwrap();
        let j: serde_json::Value = serde_json::from_str(&verdict_json(&v).unwrap()).unwrap();
        assert_eq!(j["winner"], "inv_sqrt_n");
        assert_eq!(j["fits"]["inv_n"]["curve"], "inv_n");
        for key in ["intercept", "slope", "mse", "r_squared", "degenerate"] {
            assert!(j["fits"]["inv_sqrt_n"].get(key).is_some());
        }
        let degenerate = FitResult {
            curve: CurveKind::InvN,
            intercept: 0.0,
            slope: 0.0,
            mse: 1.0,
            r_squared: f64::NEG_INFINITY,
            degenerate: true,
        };
        assert!(serde_json::to_string(&degenerate).unwrap().contains("\"r_squared\":\"undefined\""));
        let csv = plot_csv(&s, &v);
        assert!(csv.starts_with("n,observed,fitted_sqrt,fitted_inv\n100,"));
    }

    proptest! {
        #[test]
        fn kkt_and_mse_hold(params in proptest::collection::vec((1.0f64..5000.0, -1.0f64..2.0), 2..8)) {
            let pts: Vec<FitPoint> = params.iter().map(|&(n, e)| FitPoint::new(n.round().max(1.0), e)).collect();
            prop_assume!(validate(&pts).is_ok());
            for c in [CurveKind::InvSqrtN, CurveKind::InvN] {
                let f = fit_points(&pts, c).unwrap();
                prop_assert!(f.intercept >= 0.0 && f.slope >= 0.0);
                prop_assert!(f.r_squared <= 1.0 + 1e-12);
                prop_assert!(kkt_check(&pts, &f).holds, "{:?}", kkt_check(&pts, &f));
                let direct: f64 = pts.iter().map(|p| (p.error - f.predict(p.n)).powi(2)).sum::<f64>() / pts.len() as f64;
                // Interpolating fits leave only rounding noise, hence the absolute floor.
                prop_assert!((direct - f.mse).abs() <= 1e-12 * direct + 1e-28);
            }
        }
    }
}
