//! Predicted long-time forms `m_n ~ C t^kappa (ln t)^eta e^{rho t}` by regime,
//! a convolution oracle for the decaying regimes and fitted-versus-predicted
//! verdicts.

use serde::{Deserialize, Serialize};

use crate::moment_solver::{fit_growth, Exponent, GrowthFit, GrowthModel, MomentTrajectory, Variant};
use crate::numerics::integrate_adaptive;
use crate::{Error, Regime, RegimeReport, Result, Variance, WalkKernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentKind {
    Local,
    Total,
}

impl MomentKind {
    pub fn of(variant: &Variant) -> Result<Self> {
        match variant {
            Variant::Local { .. } => Ok(MomentKind::Local),
            Variant::Total => Ok(MomentKind::Total),
            Variant::Set { .. } => Err(Error::UnsupportedCombination(
                "set indicators have no tabulated asymptote".into(),
            )),
        }
    }
}

/// Which family of results a form comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    PureWalk,
    Supercritical,
    Critical,
    SubcriticalEigen,
    BoundaryFiniteVariance,
    WeakFiniteVariance,
    BoundaryHeavyTail,
    WeakHeavyTail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoteForm {
    pub rho: f64,
    pub kappa: f64,
    pub eta: f64,
    pub order: usize,
    pub kind: MomentKind,
    pub table: Table,
}

/// Long-time form of `m_n` for the regime in `report`.
pub fn predicted_asymptote(report: &RegimeReport, order: usize, kind: MomentKind) -> Result<AsymptoteForm> {
    if order == 0 {
        return Err(Error::UnsupportedCombination("moment order must be at least 1".into()));
    }
    let d = report.dimension as f64;
    let b0 = report.death_rate;
    let local = kind == MomentKind::Local;
    let form = |rho: f64, kappa: f64, eta: f64, table: Table| AsymptoteForm {
        rho,
        kappa,
        eta,
        order,
        kind,
        table,
    };
    let unsupported = |why: String| Err(Error::UnsupportedCombination(why));
    match report.regime {
        Regime::PureWalk => {
            let spread = match report.variance {
                Variance::Finite => d / 2.0,
                Variance::Heavy { alpha } => d / alpha,
            };
            Ok(form(-b0, if local { -spread } else { 0.0 }, 0.0, Table::PureWalk))
        }
        Regime::Supercritical => {
            let lambda_e = report.lambda_e.expect("supercritical report carries lambda_E");
            Ok(form(order as f64 * lambda_e, 0.0, 0.0, Table::Supercritical))
        }
        Regime::Critical => Ok(form(0.0, (order - 1) as f64, 0.0, Table::Critical)),
        Regime::SubcriticalEigen => {
            let lambda_e = report.lambda_e.expect("subcritical report carries lambda_E");
            Ok(form(lambda_e, 0.0, 0.0, Table::SubcriticalEigen))
        }
        Regime::SubcriticalBoundary => match report.variance {
            Variance::Finite => match report.dimension {
                0..=2 => unsupported(format!("beta* = beta_c is impossible for a recurrent walk in d = {d}")),
                3 => Ok(form(-b0, if local { -0.5 } else { 0.5 }, 0.0, Table::BoundaryFiniteVariance)),
                4 => Ok(form(-b0, if local { 0.0 } else { 1.0 }, -1.0, Table::BoundaryFiniteVariance)),
                _ => Ok(form(-b0, if local { 0.0 } else { 1.0 }, 0.0, Table::BoundaryFiniteVariance)),
            },
            Variance::Heavy { alpha } => {
                let r = d / alpha;
                let t = Table::BoundaryHeavyTail;
                if r <= 1.0 {
                    unsupported(format!("beta* = beta_c is impossible for d/alpha = {r} <= 1"))
                } else if (r - 2.0).abs() <= 1e-12 {
                    Ok(form(-b0, if local { 0.0 } else { 1.0 }, -1.0, t))
                } else if r < 2.0 {
                    Ok(form(-b0, if local { r - 2.0 } else { r - 1.0 }, 0.0, t))
                } else {
                    Ok(form(-b0, if local { 0.0 } else { 1.0 }, 0.0, t))
                }
            }
        },
        Regime::SubcriticalWeak => match report.variance {
            Variance::Finite => {
                if report.dimension <= 2 {
                    unsupported(format!("beta* < beta_c is impossible for a recurrent walk in d = {d}"))
                } else {
                    Ok(form(-b0, if local { -d / 2.0 } else { 0.0 }, 0.0, Table::WeakFiniteVariance))
                }
            }
            Variance::Heavy { alpha } => {
                let r = d / alpha;
                if r <= 1.0 {
                    unsupported(format!("beta* < beta_c is impossible for d/alpha = {r} <= 1"))
                } else {
                    Ok(form(-b0, if local { -r } else { 0.0 }, 0.0, Table::WeakHeavyTail))
                }
            }
        },
    }
}

/// Declared behaviour `c t^kappa (ln t)^eta e^{rate t}` as `t -> infinity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tail {
    pub rate: f64,
    pub kappa: f64,
    pub eta: f64,
}

impl Tail {
    pub fn new(rate: f64, kappa: f64, eta: f64) -> Self {
        Tail { rate, kappa, eta }
    }

    fn shape(&self, t: f64) -> f64 {
        let log = if self.eta == 0.0 { 1.0 } else { t.ln().powf(self.eta) };
        t.powf(self.kappa) * log * (self.rate * t).exp()
    }
}

/// A nonnegative function on `[0, inf)` with a declared tail.
pub struct TailedFunction<'a> {
    pub f: Box<dyn Fn(f64) -> f64 + Sync + 'a>,
    pub tail: Tail,
}

impl<'a> TailedFunction<'a> {
    pub fn new(f: impl Fn(f64) -> f64 + Sync + 'a, tail: Tail) -> Self {
        TailedFunction { f: Box::new(f), tail }
    }

    /// Log-linear interpolation of positive samples, continued past the last
    /// sample by the declared tail.
    pub fn sampled(times: &'a [f64], values: &'a [f64], tail: Tail) -> Result<Self> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(Error::DegenerateWindow("need at least two samples".into()));
        }
        if values.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::NonPositiveValues);
        }
        let last = times.len() - 1;
        let t_end = times[last];
        let anchor = values[last] / tail.shape(t_end);
        Ok(TailedFunction::new(
            move |t: f64| {
                if t >= t_end {
                    return anchor * tail.shape(t);
                }
                let k = times.partition_point(|&s| s <= t).clamp(1, last);
                let (t0, t1) = (times[k - 1], times[k]);
                let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                (values[k - 1].ln() * (1.0 - w) + values[k].ln() * w).exp()
            },
            tail,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convolution {
    pub times: Vec<f64>,
    /// `W(t) = int_0^t phi(t - s) chi(s) ds`.
    pub w: Vec<f64>,
    /// `W_0 = int_0^inf e^{b_0 s} chi(s) ds`.
    pub w0: f64,
    /// `W(t) / (t^kappa (ln t)^eta e^{-b_0 t})` with the exponents of `phi`.
    pub ratio: Vec<f64>,
}

const CONVOLUTION_RTOL: f64 = 1e-10;
const MAX_SEGMENTS: usize = 20_000;

/// `int_T^inf s^kappa (ln s)^eta e^{-a s} ds / (T^kappa (ln T)^eta e^{-a T})`
/// by its asymptotic expansion in `1 / (a T)`, or the algebraic tail when
/// `a = 0`.
fn tail_remainder_factor(t: f64, a: f64, kappa: f64, eta: f64) -> f64 {
    if a == 0.0 {
        // int_T^inf s^kappa ds = T^(kappa + 1) / (-kappa - 1)
        return t / (-kappa - 1.0);
    }
    let x = a * t;
    let mut term = 1.0;
    let mut sum = 1.0;
    let effective = kappa + eta / t.ln().max(1.0);
    for k in 1..12 {
        let next = term * (effective - (k - 1) as f64) / x;
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
    }
    sum / a
}

/// The convolution `W` at `times` and the constant `W_0`.
pub fn killed_convolve(
    phi: &TailedFunction<'_>,
    chi: &TailedFunction<'_>,
    b0: f64,
    times: &[f64],
) -> Result<Convolution> {
    // e^{b_0 s} chi(s) ~ s^kappa (ln s)^eta e^{(rate + b_0) s}
    let decay = -(chi.tail.rate + b0);
    let integrable = decay > 0.0
        || (decay == 0.0
            && (chi.tail.kappa < -1.0 || (chi.tail.kappa == -1.0 && chi.tail.eta < -1.0)));
    if !integrable {
        return Err(Error::TailUnbounded(format!(
            "e^(b0 s) chi(s) behaves like s^{} (ln s)^{} e^{}s",
            chi.tail.kappa, chi.tail.eta, -decay
        )));
    }
    let weighted = |s: f64| (b0 * s).exp() * (chi.f)(s);

    let horizon = if decay > 0.0 {
        (60.0 / decay).max(1.0)
    } else {
        1e6
    };
    let mut breaks = vec![0.0];
    let mut edge = 1.0;
    while edge < horizon {
        breaks.push(edge);
        edge *= 2.0;
    }
    breaks.push(horizon);
    let head = integrate_adaptive(weighted, &breaks, CONVOLUTION_RTOL, MAX_SEGMENTS);
    let at_end = weighted(horizon);
    let remainder = if decay == 0.0 && chi.tail.eta != 0.0 {
        at_end * horizon / (-chi.tail.kappa - 1.0)
    } else {
        at_end * tail_remainder_factor(horizon, decay, chi.tail.kappa, chi.tail.eta)
    };
    let w0 = head.value + remainder;

    let mut w = Vec::with_capacity(times.len());
    let mut ratio = Vec::with_capacity(times.len());
    for &t in times {
        if !(t > 0.0) {
            w.push(0.0);
            ratio.push(f64::NAN);
            continue;
        }
        let mut pieces = vec![0.0];
        let mut e = 1.0;
        while e < t {
            pieces.push(e);
            e *= 2.0;
        }
        pieces.push(t);
        let value = integrate_adaptive(|s| (phi.f)(t - s) * (chi.f)(s), &pieces, CONVOLUTION_RTOL, MAX_SEGMENTS).value;
        w.push(value);
        let scale = Tail::new(-b0, phi.tail.kappa, phi.tail.eta).shape(t);
        ratio.push(value / scale);
    }
    Ok(Convolution {
        times: times.to_vec(),
        w,
        w0,
        ratio,
    })
}

/// Acceptance bands of [`validate_regime`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative band on `rho` when the prediction is nonzero.
    pub rho_rtol: f64,
    /// Absolute band on `rho` when the prediction is zero.
    pub rho_atol: f64,
    pub kappa_atol: f64,
    pub eta_atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rho_rtol: 0.05,
            rho_atol: 1e-3,
            kappa_atol: 0.2,
            eta_atol: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub order: usize,
    pub variant: String,
    pub predicted: AsymptoteForm,
    pub fit: GrowthFit,
    pub window: (f64, f64),
    pub rho_error: f64,
    pub kappa_error: f64,
    pub eta_error: f64,
    pub pass: bool,
}

/// Fits every trajectory at `site` over `window` (default: the last decade
/// of the horizon) and compares with the predicted form.
pub fn validate_regime(
    report: &RegimeReport,
    trajectories: &[MomentTrajectory],
    site: &[i64],
    window: Option<(f64, f64)>,
    tolerances: &Tolerances,
) -> Result<Vec<Verdict>> {
    trajectories
        .iter()
        .map(|traj| {
            let kind = MomentKind::of(&traj.variant)?;
            let predicted = predicted_asymptote(report, traj.order, kind)?;
            let horizon = *traj.times.last().unwrap_or(&0.0);
            let (mut lo, hi) = window.unwrap_or((horizon / 10.0, horizon));
            if predicted.eta != 0.0 {
                lo = lo.max(10.0);
            }
            if !(lo > 0.0 && hi >= 10.0 * lo * (1.0 - 1e-12)) || hi > horizon * (1.0 + 1e-12) {
                return Err(Error::WindowTooShort(format!(
                    "[{lo}, {hi}] does not span a decade inside [0, {horizon}]"
                )));
            }
            let model = GrowthModel {
                rho: Exponent::Free,
                kappa: Exponent::Free,
                eta: if predicted.eta != 0.0 {
                    Exponent::Free
                } else {
                    Exponent::Fixed(0.0)
                },
            };
            let fit = fit_growth(traj, site, (lo, hi), model)?;
            let rho_error = fit.rho - predicted.rho;
            let kappa_error = fit.kappa - predicted.kappa;
            let eta_error = fit.eta - predicted.eta;
            let rho_ok = if predicted.rho == 0.0 {
                rho_error.abs() <= tolerances.rho_atol
            } else {
                rho_error.abs() <= tolerances.rho_rtol * predicted.rho.abs()
            };
            let pass = rho_ok
                && kappa_error.abs() <= tolerances.kappa_atol
                && eta_error.abs() <= tolerances.eta_atol;
            Ok(Verdict {
                order: traj.order,
                variant: traj.variant.label(),
                predicted,
                fit,
                window: (lo, hi),
                rho_error,
                kappa_error,
                eta_error,
                pass,
            })
        })
        .collect()
}

/// Largest relative deviation of a pure-walk trajectory from
/// `e^{-b_0 t} p(t, x, y)` (local) or `e^{-b_0 t}` (total) at `site`.
pub fn pure_walk_deviation(
    kernel: &WalkKernel,
    death_rate: f64,
    trajectory: &MomentTrajectory,
    site: &[i64],
) -> Result<f64> {
    let series = trajectory
        .series(site)
        .ok_or_else(|| Error::DegenerateWindow(format!("site {site:?} is not tracked")))?;
    let mut worst: f64 = 0.0;
    for (&t, &v) in trajectory.times.iter().zip(&series) {
        let exact = match &trajectory.variant {
            Variant::Local { site: y } => {
                kernel.transition_probability(t, site, y)? * (-death_rate * t).exp()
            }
            Variant::Total => (-death_rate * t).exp(),
            Variant::Set { .. } => {
                return Err(Error::UnsupportedCombination("set indicators".into()));
            }
        };
        if exact > 0.0 {
            worst = worst.max(((v - exact) / exact).abs());
        }
    }
    Ok(worst)
}
