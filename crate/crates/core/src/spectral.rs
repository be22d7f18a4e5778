//! Critical threshold `beta_c`, the isolated eigenvalue `lambda_0` of
//! `A + beta* Delta_0` and regime classification.
//!
//! `lambda_0` solves `beta* G_lambda(0, 0) = 1`. Since `G_lambda(0, 0)` is
//! strictly decreasing in `lambda` and bounded by `1 / lambda`, the root is
//! unique and lies in `(0, beta*]` whenever `beta* > beta_c = 1 / G_0(0, 0)`.

use serde::{Deserialize, Serialize};

use crate::walk_kernel::Variance;
use crate::{Error, Execution, OffspringLaw, Result, WalkKernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    PureWalk,
    Supercritical,
    Critical,
    SubcriticalEigen,
    SubcriticalBoundary,
    SubcriticalWeak,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::PureWalk => "pure_walk",
            Regime::Supercritical => "supercritical",
            Regime::Critical => "critical",
            Regime::SubcriticalEigen => "subcritical_eigen",
            Regime::SubcriticalBoundary => "subcritical_boundary",
            Regime::SubcriticalWeak => "subcritical_weak",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub dimension: usize,
    pub variance: Variance,
    pub transient: bool,
    pub beta_star: f64,
    pub death_rate: f64,
    pub beta_c: f64,
    pub lambda0: Option<f64>,
    pub lambda_e: Option<f64>,
    /// `beta* G_{lambda_0}(0, 0) - 1` at the returned root.
    pub residual: Option<f64>,
    pub regime: Regime,
    /// Absolute band around zero within which `lambda_E` counts as zero.
    pub critical_tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    /// `|lambda_E| <= critical_factor * max(1, lambda_0)` is critical.
    pub critical_factor: f64,
    /// `|beta* - beta_c| <= boundary_factor * beta_c` is the boundary case.
    pub boundary_factor: f64,
    /// Left end of the bisection bracket.
    pub bracket_floor: f64,
    pub max_iterations: usize,
    /// Relative tolerance of each Green's function evaluation.
    pub quadrature_rtol: f64,
    pub execution: Execution,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            critical_factor: 1e-9,
            boundary_factor: 1e-9,
            bracket_floor: 1e-12,
            max_iterations: 200,
            quadrature_rtol: 1e-10,
            execution: Execution::default(),
        }
    }
}

const RESIDUAL_TARGET: f64 = 1e-11;

/// `beta_c = 1 / G_0(0, 0)`, zero for recurrent walks.
pub fn beta_critical(kernel: &WalkKernel) -> Result<f64> {
    beta_critical_with(kernel, &SpectralOptions::default())
}

pub fn beta_critical_with(kernel: &WalkKernel, opts: &SpectralOptions) -> Result<f64> {
    if !kernel.is_transient() {
        return Ok(0.0);
    }
    let o = vec![0; kernel.dimension()];
    let g = kernel.green_with(opts.execution, 0.0, &o, &o, opts.quadrature_rtol)?;
    Ok(1.0 / g)
}

/// Root of `beta* G_lambda(0, 0) = 1`, or `None` when `beta* <= beta_c`.
pub fn lambda0(kernel: &WalkKernel, beta_star: f64) -> Result<Option<f64>> {
    Ok(lambda0_with(kernel, beta_star, &SpectralOptions::default())?.map(|(l, _)| l))
}

/// Like [`lambda0`], also returning the residual `beta* G_{lambda_0}(0,0) - 1`.
pub fn lambda0_with(
    kernel: &WalkKernel,
    beta_star: f64,
    opts: &SpectralOptions,
) -> Result<Option<(f64, f64)>> {
    if !(beta_star >= 0.0 && beta_star.is_finite()) {
        return Err(Error::InvalidLaw(format!("beta* = {beta_star} must be finite and >= 0")));
    }
    let beta_c = beta_critical_with(kernel, opts)?;
    if beta_star <= beta_c || beta_star == 0.0 {
        return Ok(None);
    }
    let o = vec![0; kernel.dimension()];
    let h = |lambda: f64| -> Result<f64> {
        Ok(beta_star * kernel.green_with(opts.execution, lambda, &o, &o, opts.quadrature_rtol)? - 1.0)
    };

    let mut lo = opts.bracket_floor.min(beta_star);
    let mut hi = beta_star;
    let h_lo = h(lo)?;
    if h_lo <= 0.0 {
        return Err(Error::BracketFailure(format!(
            "beta* G(0,0) - 1 = {h_lo:e} at lambda = {lo:e} although beta* = {beta_star} > beta_c = {beta_c}"
        )));
    }
    let h_hi = h(hi)?;
    if h_hi >= 0.0 {
        return Err(Error::BracketFailure(format!(
            "beta* G(0,0) - 1 = {h_hi:e} at lambda = beta* violates G_lambda <= 1 / lambda"
        )));
    }
    let mut best = if h_lo.abs() < h_hi.abs() { (lo, h_lo) } else { (hi, h_hi) };
    for _ in 0..opts.max_iterations {
        // geometric midpoints while the bracket spans orders of magnitude
        let mid = if hi > 4.0 * lo { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        let value = h(mid)?;
        if value.abs() < best.1.abs() {
            best = (mid, value);
        }
        if value.abs() <= RESIDUAL_TARGET {
            break;
        }
        if value > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(best))
}

/// Regime of the branching walk.
pub fn classify(kernel: &WalkKernel, law: &OffspringLaw) -> Result<RegimeReport> {
    classify_with(kernel, law, &SpectralOptions::default())
}

pub fn classify_with(
    kernel: &WalkKernel,
    law: &OffspringLaw,
    opts: &SpectralOptions,
) -> Result<RegimeReport> {
    let beta_star = law.beta_star();
    let b0 = law.death_rate();
    let beta_c = beta_critical_with(kernel, opts)?;
    let mut report = RegimeReport {
        dimension: kernel.dimension(),
        variance: kernel.variance(),
        transient: kernel.is_transient(),
        beta_star,
        death_rate: b0,
        beta_c,
        lambda0: None,
        lambda_e: None,
        residual: None,
        regime: Regime::PureWalk,
        critical_tolerance: opts.critical_factor,
    };
    if beta_star == 0.0 {
        return Ok(report);
    }
    if beta_c > 0.0 && (beta_star - beta_c).abs() <= opts.boundary_factor * beta_c {
        report.regime = Regime::SubcriticalBoundary;
        return Ok(report);
    }
    if beta_star < beta_c {
        report.regime = Regime::SubcriticalWeak;
        return Ok(report);
    }
    let (l0, residual) = lambda0_with(kernel, beta_star, opts)?
        .ok_or_else(|| Error::BracketFailure("no root above the critical threshold".into()))?;
    let lambda_e = l0 - b0;
    let tol = opts.critical_factor * l0.max(1.0);
    report.lambda0 = Some(l0);
    report.lambda_e = Some(lambda_e);
    report.residual = Some(residual);
    report.critical_tolerance = tol;
    report.regime = if lambda_e.abs() <= tol {
        Regime::Critical
    } else if lambda_e > 0.0 {
        Regime::Supercritical
    } else {
        Regime::SubcriticalEigen
    };
    Ok(report)
}

/// The death rate `b_0 = lambda_0` making the model critical.
pub fn critical_death_rate(kernel: &WalkKernel, law: &OffspringLaw) -> Result<f64> {
    lambda0(kernel, law.beta_star())?.ok_or_else(|| Error::WrongRegime {
        expected: "beta* > beta_c".into(),
        found: format!("beta* = {}", law.beta_star()),
    })
}

/// Copy of `law` with `b_0 := lambda_0`.
pub fn critical_law(kernel: &WalkKernel, law: &OffspringLaw) -> Result<OffspringLaw> {
    law.with_death_rate(critical_death_rate(kernel, law)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk_kernel::{build_kernel, KernelSpec};

    #[test]
    fn recurrent_walks_have_zero_threshold() {
        let k = build_kernel(&KernelSpec::simple_symmetric(1, 1.0)).unwrap();
        assert_eq!(beta_critical(&k).unwrap(), 0.0);
    }

    #[test]
    fn one_dimensional_root_is_closed_form() {
        // 1 / sqrt(l^2 + 2l) = 1 / beta*  =>  l = sqrt(1 + beta*^2) - 1
        let k = build_kernel(&KernelSpec::simple_symmetric(1, 1.0)).unwrap();
        for beta in [0.1, 1.0, 3.0] {
            let l = lambda0(&k, beta).unwrap().unwrap();
            let exact = (1.0f64 + beta * beta).sqrt() - 1.0;
            assert!((l - exact).abs() < 1e-9 * exact, "beta={beta}: {l} vs {exact}");
        }
    }

    #[test]
    fn pure_walk_and_critical_classification() {
        let k = build_kernel(&KernelSpec::simple_symmetric(1, 1.0)).unwrap();
        let r = classify(&k, &OffspringLaw::death_only(0.7).unwrap()).unwrap();
        assert_eq!(r.regime, Regime::PureWalk);
        assert_eq!(r.lambda0, None);
        let law = critical_law(&k, &OffspringLaw::binary(1.0, 0.0).unwrap()).unwrap();
        let r = classify(&k, &law).unwrap();
        assert_eq!(r.regime, Regime::Critical);
        assert!(r.lambda_e.unwrap().abs() <= r.critical_tolerance);
    }

    #[test]
    fn classification_flips_across_the_death_rate() {
        let k = build_kernel(&KernelSpec::simple_symmetric(1, 1.0)).unwrap();
        let base = OffspringLaw::binary(1.0, 0.0).unwrap();
        let l0 = critical_death_rate(&k, &base).unwrap();
        let at = |b0: f64| classify(&k, &base.with_death_rate(b0).unwrap()).unwrap().regime;
        assert_eq!(at(l0 - 1e-6), Regime::Supercritical);
        assert_eq!(at(l0), Regime::Critical);
        assert_eq!(at(l0 + 1e-6), Regime::SubcriticalEigen);
    }
}
