//! Symmetric, spatially homogeneous jump kernels on `Z^d` and the spectral
//! quantities derived from them.
//!
//! A kernel is a map `z -> a(z) >= 0` on `Z^d \ {0}` with finite total rate
//! `q = sum a(z)`; the generator acts as `(A f)(x) = sum_y a(y - x) f(y)` with
//! `a(0) = -q`. Its Fourier symbol is
//!
//! ```text
//! phi(theta) = sum_{z != 0} a(z) (cos(theta . z) - 1)  <= 0,
//! ```
//!
//! and both the transition probabilities and the Green's functions are
//! torus integrals over `[-pi, pi]^d` of functions of `phi`:
//!
//! ```text
//! p(t, x, y)   = (2 pi)^-d  int exp(t phi(theta)) cos(theta . (y - x)) dtheta
//! G_l(x, y)    = (2 pi)^-d  int cos(theta . (y - x)) / (l - phi(theta)) dtheta
//! ```
//!
//! The integrands are smooth away from `theta = 0` but can be singular or
//! sharply peaked there, so the torus is decomposed into dyadic shells
//! around the origin (see [`SymbolGrid`]).

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_ur};

use crate::numerics::{gauss_legendre, upper_gamma};
use crate::{Error, Execution, Result};

/// Default relative tolerance of the torus quadrature.
pub const QUADRATURE_RTOL: f64 = 1e-9;
/// Default absolute tolerance of the torus quadrature (in units of the
/// normalised integral).
pub const QUADRATURE_ATOL: f64 = 1e-15;

const MAX_SHELLS: usize = 96;
const MIN_SHELLS: usize = 4;
const MAX_SUBDIVISION: usize = 256;
const MAX_SHELL_NODES: usize = 8_000_000;
/// Accuracy floor relative to the integral of `|f|`, which bounds what
/// oscillatory integrands can resolve.
const CANCELLATION: f64 = 1e-11;
const CHUNK: usize = 2048;

/// User-facing description of a jump kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// Explicit intensities on a finite symmetric set not containing `0`.
    FiniteSupport {
        dimension: usize,
        jumps: Vec<(Vec<i64>, f64)>,
    },
    /// `a(z) = C / |z|^(d + alpha)` for every `z != 0`.
    ///
    /// `cutoff` is the radius (sup-norm) up to which intensities are
    /// enumerated explicitly, e.g. by the jump sampler.
    HeavyTail {
        dimension: usize,
        alpha: f64,
        scale: TailScale,
        cutoff: usize,
    },
}

/// How the heavy-tail prefactor `C` is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailScale {
    /// Choose `C` so that the total jump rate equals the given value.
    TotalRate(f64),
    /// Use the given `C` directly.
    Coefficient(f64),
}

impl KernelSpec {
    /// Nearest-neighbour walk, `a(±e_i) = q / (2d)`.
    pub fn simple_symmetric(dimension: usize, total_rate: f64) -> Self {
        let mut jumps = Vec::with_capacity(2 * dimension);
        for i in 0..dimension {
            for sign in [1, -1] {
                let mut z = vec![0; dimension];
                z[i] = sign;
                jumps.push((z, total_rate / (2 * dimension) as f64));
            }
        }
        KernelSpec::FiniteSupport { dimension, jumps }
    }

    /// Heavy-tailed walk with total jump rate normalised to one.
    pub fn heavy_tail(dimension: usize, alpha: f64) -> Self {
        KernelSpec::HeavyTail {
            dimension,
            alpha,
            scale: TailScale::TotalRate(1.0),
            cutoff: 64,
        }
    }
}

/// Tail behaviour of the jump distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Variance {
    Finite,
    Heavy { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelVariant {
    FiniteSupport { jumps: Vec<(Vec<i64>, f64)> },
    HeavyTail { alpha: f64, scale: f64, cutoff: usize },
}

/// Validated jump kernel together with its cached quadrature grids.
#[derive(Debug, Clone)]
pub struct WalkKernel {
    dimension: usize,
    variant: KernelVariant,
    total_rate: f64,
    symbol: Arc<Symbol>,
    grids: Arc<[OnceLock<Arc<SymbolGrid>>; 9]>,
}

/// Builds and validates a kernel.
pub fn build_kernel(spec: &KernelSpec) -> Result<WalkKernel> {
    WalkKernel::new(spec)
}

impl WalkKernel {
    pub fn new(spec: &KernelSpec) -> Result<Self> {
        match spec {
            KernelSpec::FiniteSupport { dimension, jumps } => {
                Self::finite_support(*dimension, jumps)
            }
            KernelSpec::HeavyTail {
                dimension,
                alpha,
                scale,
                cutoff,
            } => Self::heavy_tail(*dimension, *alpha, *scale, *cutoff),
        }
    }

    fn finite_support(dimension: usize, jumps: &[(Vec<i64>, f64)]) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidKernel("dimension must be positive".into()));
        }
        let mut merged: Vec<(Vec<i64>, f64)> = Vec::new();
        for (z, rate) in jumps {
            if z.len() != dimension {
                return Err(Error::InvalidKernel(format!(
                    "displacement {z:?} does not have {dimension} coordinates"
                )));
            }
            if z.iter().all(|&c| c == 0) {
                return Err(Error::InvalidKernel(
                    "the zero displacement is implied by the total rate".into(),
                ));
            }
            if !rate.is_finite() {
                return Err(Error::InvalidKernel(format!("non-finite rate at {z:?}")));
            }
            if *rate < 0.0 {
                return Err(Error::NegativeIntensity {
                    z: z.clone(),
                    rate: *rate,
                });
            }
            match merged.iter_mut().find(|(w, _)| w == z) {
                Some(entry) => entry.1 += rate,
                None => merged.push((z.clone(), *rate)),
            }
        }
        merged.retain(|(_, r)| *r > 0.0);
        if merged.is_empty() {
            return Err(Error::ZeroSupport { dimension });
        }
        for (z, rate) in &merged {
            let neg: Vec<i64> = z.iter().map(|c| -c).collect();
            let back = merged
                .iter()
                .find(|(w, _)| *w == neg)
                .map(|(_, r)| *r)
                .unwrap_or(0.0);
            if (rate - back).abs() > 1e-12 * rate.abs().max(back.abs()) {
                return Err(Error::AsymmetricKernel {
                    z: z.clone(),
                    forward: *rate,
                    backward: back,
                });
            }
        }
        let support: Vec<Vec<i64>> = merged.iter().map(|(z, _)| z.clone()).collect();
        if !generates_lattice(&support, dimension) {
            return Err(Error::ZeroSupport { dimension });
        }
        merged.sort_by(|a, b| a.0.cmp(&b.0));
        let total_rate = merged.iter().map(|(_, r)| r).sum();
        let symbol = Symbol::Finite {
            jumps: merged
                .iter()
                .map(|(z, r)| (z.iter().map(|&c| c as f64).collect(), *r))
                .collect(),
        };
        Ok(Self::assemble(
            dimension,
            KernelVariant::FiniteSupport { jumps: merged },
            total_rate,
            symbol,
        ))
    }

    fn heavy_tail(dimension: usize, alpha: f64, scale: TailScale, cutoff: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidKernel("dimension must be positive".into()));
        }
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::TailDivergence { alpha });
        }
        if cutoff == 0 {
            return Err(Error::InvalidKernel("cutoff radius must be at least 1".into()));
        }
        let unit = LatticeSum::new(dimension, alpha);
        let coefficient = match scale {
            TailScale::TotalRate(q) if q > 0.0 && q.is_finite() => q / unit.total,
            TailScale::Coefficient(c) if c > 0.0 && c.is_finite() => c,
            _ => {
                return Err(Error::InvalidKernel(
                    "heavy-tail scale must be positive and finite".into(),
                ))
            }
        };
        let total_rate = coefficient * unit.total;
        Ok(Self::assemble(
            dimension,
            KernelVariant::HeavyTail {
                alpha,
                scale: coefficient,
                cutoff,
            },
            total_rate,
            Symbol::Lattice {
                scale: coefficient,
                sum: unit,
            },
        ))
    }

    fn assemble(dimension: usize, variant: KernelVariant, total_rate: f64, symbol: Symbol) -> Self {
        WalkKernel {
            dimension,
            variant,
            total_rate,
            symbol: Arc::new(symbol),
            grids: Arc::new(Default::default()),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn variant(&self) -> &KernelVariant {
        &self.variant
    }

    /// `q = -a(0)`, the total jump rate.
    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    pub fn variance(&self) -> Variance {
        match self.variant {
            KernelVariant::FiniteSupport { .. } => Variance::Finite,
            KernelVariant::HeavyTail { alpha, .. } => Variance::Heavy { alpha },
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self.variant {
            KernelVariant::HeavyTail { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    /// Jump intensity `a(z)`, with `a(0) = -q`.
    pub fn rate(&self, z: &[i64]) -> f64 {
        if z.iter().all(|&c| c == 0) {
            return -self.total_rate;
        }
        match &self.variant {
            KernelVariant::FiniteSupport { jumps } => jumps
                .iter()
                .find(|(w, _)| w.as_slice() == z)
                .map(|(_, r)| *r)
                .unwrap_or(0.0),
            KernelVariant::HeavyTail { alpha, scale, .. } => {
                let r2: f64 = z.iter().map(|&c| (c as f64) * (c as f64)).sum();
                scale * r2.powf(-0.5 * (self.dimension as f64 + alpha))
            }
        }
    }

    /// Largest sup-norm of a displacement with positive intensity, or `None`
    /// for kernels with unbounded support.
    pub fn reach(&self) -> Option<usize> {
        match &self.variant {
            KernelVariant::FiniteSupport { jumps } => Some(
                jumps
                    .iter()
                    .flat_map(|(z, _)| z.iter().map(|c| c.unsigned_abs() as usize))
                    .max()
                    .unwrap_or(0),
            ),
            KernelVariant::HeavyTail { .. } => None,
        }
    }

    /// Fourier symbol `phi(theta)`.
    pub fn symbol(&self, theta: &[f64]) -> f64 {
        self.symbol.eval(theta)
    }

    /// Recurrence/transience by the closed-form dimension criterion.
    pub fn is_transient(&self) -> bool {
        match self.variant {
            KernelVariant::FiniteSupport { .. } => self.dimension >= 3,
            KernelVariant::HeavyTail { alpha, .. } => {
                self.dimension >= 2 || (self.dimension == 1 && alpha < 1.0)
            }
        }
    }

    /// Quadrature grid with the given outer subdivision, built on first use.
    pub fn grid(&self, subdivision: usize) -> Arc<SymbolGrid> {
        let level = subdivision.max(1).next_power_of_two().trailing_zeros() as usize;
        let level = level.min(self.grids.len() - 1);
        self.grids[level]
            .get_or_init(|| {
                Arc::new(SymbolGrid::new(
                    self.dimension,
                    1 << level,
                    Arc::clone(&self.symbol),
                ))
            })
            .clone()
    }

    /// `(2 pi)^-d int f(theta, phi(theta)) dtheta`, refining the outer shells
    /// dyadically until two successive estimates agree.
    pub fn torus_integral<F>(
        &self,
        exec: Execution,
        oscillation: f64,
        rtol: f64,
        atol: f64,
        f: F,
    ) -> Result<f64>
    where
        F: Fn(&[f64], f64) -> f64 + Sync + Send,
    {
        let top = self.max_subdivision();
        let mut m = ((oscillation / 3.0).ceil() as usize).next_power_of_two();
        m = m.clamp(1, (top / 2).max(1));
        let inner = rtol / 16.0;
        let (mut coarse, _) = self.grid(m).integrate_with_magnitude(exec, inner, atol, &f)?;
        while m < top {
            m *= 2;
            let (fine, magnitude) = self.grid(m).integrate_with_magnitude(exec, inner, atol, &f)?;
            let tol = (rtol * fine.abs()).max(atol).max(CANCELLATION * magnitude);
            if (fine - coarse).abs() <= tol {
                return Ok(fine);
            }
            coarse = fine;
        }
        Err(Error::QuadratureNotConverged(format!(
            "outer refinement reached {m} subdivisions"
        )))
    }

    /// Largest outer subdivision whose first shell stays below
    /// `MAX_SHELL_NODES` nodes.
    fn max_subdivision(&self) -> usize {
        let order = SymbolGrid::order_for(self.dimension);
        let boxes = 0.5 * (3f64.powi(self.dimension as i32) - 1.0);
        let nodes = |m: usize| boxes * ((m * order) as f64).powi(self.dimension as i32);
        let mut m = 1;
        while m < MAX_SUBDIVISION && nodes(2 * m) <= MAX_SHELL_NODES as f64 {
            m *= 2;
        }
        m
    }

    /// Transition probability `p(t, x, y)` of the pure walk.
    pub fn transition_probability(&self, t: f64, x: &[i64], y: &[i64]) -> Result<f64> {
        self.transition_probability_with(Execution::default(), t, x, y)
    }

    pub fn transition_probability_with(
        &self,
        exec: Execution,
        t: f64,
        x: &[i64],
        y: &[i64],
    ) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::InvalidKernel(format!("negative time {t}")));
        }
        let z = difference(x, y);
        if t == 0.0 {
            return Ok(if z.iter().all(|&c| c == 0.0) { 1.0 } else { 0.0 });
        }
        let osc = z.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let value = self.torus_integral(exec, osc, QUADRATURE_RTOL, QUADRATURE_ATOL, |th, phi| {
            (t * phi).exp() * phase(th, &z)
        })?;
        Ok(value.clamp(0.0, 1.0))
    }

    /// Green's function `G_lambda(x, y)`; `+inf` for `lambda = 0` on a
    /// recurrent walk.
    pub fn green(&self, lambda: f64, x: &[i64], y: &[i64]) -> Result<f64> {
        self.green_with(Execution::default(), lambda, x, y, QUADRATURE_RTOL)
    }

    pub fn green_with(
        &self,
        exec: Execution,
        lambda: f64,
        x: &[i64],
        y: &[i64],
        rtol: f64,
    ) -> Result<f64> {
        if !(lambda >= 0.0) {
            return Err(Error::InvalidKernel(format!("negative Laplace rate {lambda}")));
        }
        if lambda == 0.0 && !self.is_transient() {
            return Ok(f64::INFINITY);
        }
        let z = difference(x, y);
        let osc = z.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        self.torus_integral(exec, osc, rtol, QUADRATURE_ATOL, |th, phi| {
            phase(th, &z) / (lambda - phi)
        })
    }
}

fn difference(x: &[i64], y: &[i64]) -> Vec<f64> {
    assert_eq!(x.len(), y.len(), "sites of different dimensions");
    y.iter().zip(x).map(|(a, b)| (a - b) as f64).collect()
}

fn phase(theta: &[f64], z: &[f64]) -> f64 {
    if z.iter().all(|&c| c == 0.0) {
        return 1.0;
    }
    theta.iter().zip(z).map(|(a, b)| a * b).sum::<f64>().cos()
}

/// Whether the integer vectors generate `Z^d` as a group.
fn generates_lattice(vectors: &[Vec<i64>], dimension: usize) -> bool {
    let mut rows: Vec<Vec<i64>> = vectors.to_vec();
    let mut rank = 0;
    for col in 0..dimension {
        // Euclid on column `col` over rows[rank..]
        loop {
            let pivot = (rank..rows.len())
                .filter(|&r| rows[r][col] != 0)
                .min_by_key(|&r| rows[r][col].abs());
            let Some(p) = pivot else { break };
            rows.swap(rank, p);
            let mut done = true;
            for r in rank + 1..rows.len() {
                if rows[r][col] != 0 {
                    let q = rows[r][col] / rows[rank][col];
                    for c in 0..dimension {
                        rows[r][c] -= q * rows[rank][c];
                    }
                    if rows[r][col] != 0 {
                        done = false;
                    }
                }
            }
            if done {
                break;
            }
        }
        if rank < rows.len() && rows[rank][col] != 0 {
            if rows[rank][col].abs() != 1 {
                return false;
            }
            rank += 1;
        } else {
            return false;
        }
    }
    rank == dimension
}

/// Evaluator for `phi`.
#[derive(Debug)]
enum Symbol {
    Finite { jumps: Vec<(Vec<f64>, f64)> },
    Lattice { scale: f64, sum: LatticeSum },
}

impl Symbol {
    fn eval(&self, theta: &[f64]) -> f64 {
        match self {
            Symbol::Finite { jumps } => {
                let mut acc = 0.0;
                for (z, r) in jumps {
                    let arg: f64 = theta.iter().zip(z).map(|(a, b)| a * b).sum();
                    let s = (0.5 * arg).sin();
                    acc -= 2.0 * r * s * s;
                }
                acc
            }
            Symbol::Lattice { scale, sum } => scale * sum.symbol(theta),
        }
    }
}

/// Ewald-split evaluation of the lattice sums
/// `S(theta) = sum_{z != 0} |z|^-(d + alpha) cos(theta . z)`.
///
/// With `s = d + alpha` the Mellin representation
/// `|z|^-s = pi^(s/2) / Γ(s/2) int_0^inf tau^(s/2 - 1) exp(-pi tau |z|^2) dtau`
/// is split at `tau = 1`; the `tau > 1` part is summed directly and the
/// `tau < 1` part after Poisson summation, both converging like Gaussians.
#[derive(Debug)]
struct LatticeSum {
    dimension: usize,
    alpha: f64,
    prefactor: f64,
    real: Vec<(Vec<f64>, f64)>,
    reciprocal: Vec<(Vec<f64>, f64)>,
    total: f64,
}

const EWALD_RANGE: i64 = 5;
const EWALD_EXPONENT_CUTOFF: f64 = 80.0;

impl LatticeSum {
    fn new(dimension: usize, alpha: f64) -> Self {
        let s = dimension as f64 + alpha;
        let prefactor = PI.powf(0.5 * s) / gamma(0.5 * s);
        let mut real = Vec::new();
        let mut reciprocal = Vec::new();
        for z in cube_points(dimension, EWALD_RANGE) {
            let r2: f64 = z.iter().map(|c| c * c).sum();
            if r2 == 0.0 {
                continue;
            }
            let x = PI * r2;
            if x < EWALD_EXPONENT_CUTOFF {
                real.push((z.clone(), gamma_ur(0.5 * s, x) * r2.powf(-0.5 * s)));
            }
            reciprocal.push((z, ewald_reciprocal(alpha, x)));
        }
        let mut total: f64 = real.iter().map(|(_, c)| c).sum();
        let k_sum: f64 = reciprocal.iter().map(|(_, e)| e).sum();
        total += prefactor * (k_sum + 2.0 / alpha - 2.0 / s);
        LatticeSum {
            dimension,
            alpha,
            prefactor,
            real,
            reciprocal,
            total,
        }
    }

    /// `S(theta) - S(0)`, evaluated without cancellation near `theta = 0`.
    fn symbol(&self, theta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (z, c) in &self.real {
            let arg: f64 = theta.iter().zip(z).map(|(a, b)| a * b).sum();
            let s = (0.5 * arg).sin();
            acc -= 2.0 * c * s * s;
        }
        let shift: Vec<f64> = theta.iter().map(|t| t / (2.0 * PI)).collect();
        // k = 0 term: E(x) - E(0) = (2/alpha) (expm1(-x) - x^(alpha/2) Γ(1 - alpha/2, x))
        let x0 = PI * shift.iter().map(|w| w * w).sum::<f64>();
        let mut k_acc = if x0 > 0.0 {
            (2.0 / self.alpha)
                * ((-x0).exp_m1() - x0.powf(0.5 * self.alpha) * upper_gamma(1.0 - 0.5 * self.alpha, x0))
        } else {
            0.0
        };
        for (k, e0) in &self.reciprocal {
            let x = PI
                * k.iter()
                    .zip(&shift)
                    .map(|(a, b)| (a + b) * (a + b))
                    .sum::<f64>();
            if x < EWALD_EXPONENT_CUTOFF || *e0 != 0.0 {
                k_acc += ewald_reciprocal(self.alpha, x) - e0;
            }
        }
        acc + self.prefactor * k_acc
    }

    #[allow(dead_code)]
    fn dimension(&self) -> usize {
        self.dimension
    }
}

/// `int_0^1 tau^(alpha/2 - 1) exp(-x / tau) dtau` for `x > 0`.
fn ewald_reciprocal(alpha: f64, x: f64) -> f64 {
    if x >= EWALD_EXPONENT_CUTOFF {
        return 0.0;
    }
    (2.0 / alpha) * ((-x).exp() - x.powf(0.5 * alpha) * upper_gamma(1.0 - 0.5 * alpha, x))
}

fn cube_points(dimension: usize, range: i64) -> Vec<Vec<f64>> {
    let side = (2 * range + 1) as usize;
    let count = side.pow(dimension as u32);
    (0..count)
        .map(|mut idx| {
            (0..dimension)
                .map(|_| {
                    let c = (idx % side) as i64 - range;
                    idx /= side;
                    c as f64
                })
                .collect()
        })
        .collect()
}

/// Quadrature nodes for torus integrals, graded towards `theta = 0`.
///
/// Shell `j` is the region between the cubes of half-width `pi 2^-j` and
/// `pi 2^-(j+1)`; each shell is a union of `3^d - 1` boxes, each box is cut
/// into `ceil(m 2^-j)^d` sub-boxes carrying a tensor Gauss-Legendre rule. Integrands
/// are even in `theta`, so only one box of every pair `(B, -B)` is stored and
/// its contribution doubled. Shells are generated on first use; node
/// coordinates and weights are decoded from the tensor structure and only
/// the symbol values are stored.
///
/// Summation over shells stops once the contributions decay geometrically
/// and the uncertainty of the extrapolated remainder is below tolerance; the
/// geometric tail is added to the result.
#[derive(Debug)]
pub struct SymbolGrid {
    dimension: usize,
    order: usize,
    subdivision: usize,
    symbol: Arc<Symbol>,
    shells: Vec<OnceLock<Shell>>,
}

/// Nodes of one shell.
#[derive(Debug)]
pub struct Shell {
    dimension: usize,
    axes: [Vec<(f64, f64)>; 3],
    boxes: Vec<Vec<u8>>,
    per_box: usize,
    phi: Vec<f64>,
}

impl Shell {
    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    /// Writes the coordinates of node `i` into `theta` and returns its
    /// weight (already doubled for the mirrored box).
    pub fn node(&self, i: usize, theta: &mut [f64]) -> f64 {
        let b = &self.boxes[i / self.per_box];
        let side = self.axes[0].len();
        let mut rest = i % self.per_box;
        let mut w = 2.0;
        for k in 0..self.dimension {
            let (x, wx) = self.axes[b[k] as usize][rest % side];
            rest /= side;
            theta[k] = x;
            w *= wx;
        }
        w
    }

    pub fn symbol_values(&self) -> &[f64] {
        &self.phi
    }
}

impl SymbolGrid {
    fn new(dimension: usize, subdivision: usize, symbol: Arc<Symbol>) -> Self {
        let order = Self::order_for(dimension);
        SymbolGrid {
            dimension,
            order,
            subdivision,
            symbol,
            shells: (0..MAX_SHELLS).map(|_| OnceLock::new()).collect(),
        }
    }

    fn order_for(dimension: usize) -> usize {
        match dimension {
            1 => 24,
            2 => 20,
            3 => 14,
            _ => 8,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn subdivision(&self) -> usize {
        self.subdivision
    }

    pub fn shell(&self, j: usize) -> &Shell {
        self.shells[j].get_or_init(|| self.build_shell(j))
    }

    fn build_shell(&self, j: usize) -> Shell {
        let d = self.dimension;
        let outer = PI * 0.5f64.powi(j as i32);
        let inner = 0.5 * outer;
        let parts = self.subdivision.div_ceil(1 << j.min(30));
        let (gx, gw) = gauss_legendre(self.order);

        let axis = |a: f64, b: f64| {
            let mut nodes = Vec::with_capacity(parts * self.order);
            let h = (b - a) / parts as f64;
            for p in 0..parts {
                let c = a + (p as f64 + 0.5) * h;
                for (x, w) in gx.iter().zip(&gw) {
                    nodes.push((c + 0.5 * h * x, 0.5 * h * w));
                }
            }
            nodes
        };
        let axes = [axis(-outer, -inner), axis(-inner, inner), axis(inner, outer)];

        // keep the box whose first off-centre selector is positive
        let mut boxes = Vec::new();
        for b in 0..3usize.pow(d as u32) {
            let mut sel = vec![0u8; d];
            let mut rest = b;
            for s in sel.iter_mut() {
                *s = (rest % 3) as u8;
                rest /= 3;
            }
            if sel.iter().find(|&&s| s != 1) == Some(&2) {
                boxes.push(sel);
            }
        }
        let per_box = axes[0].len().pow(d as u32);
        let mut shell = Shell {
            dimension: d,
            axes,
            boxes,
            per_box,
            phi: Vec::new(),
        };
        let mut phi = vec![0.0; shell.boxes.len() * per_box];
        let view = &shell;
        Execution::default().for_each_chunk(&mut phi, CHUNK, |c, out| {
            let mut theta = vec![0.0; d];
            for (k, o) in out.iter_mut().enumerate() {
                view.node(c * CHUNK + k, &mut theta);
                *o = self.symbol.eval(&theta);
            }
        });
        shell.phi = phi;
        shell
    }

    fn shell_sum<F>(&self, exec: Execution, j: usize, f: &F) -> (f64, f64)
    where
        F: Fn(&[f64], f64) -> f64 + Sync + Send,
    {
        let shell = self.shell(j);
        let d = self.dimension;
        let n = shell.len();
        let chunks = n.div_ceil(CHUNK);
        let exec = if n < 4 * CHUNK {
            Execution::Sequential
        } else {
            exec
        };
        let partial = exec.map_range(chunks, |c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut theta = vec![0.0; d];
            let mut acc = 0.0;
            let mut abs = 0.0;
            for i in lo..hi {
                let w = shell.node(i, &mut theta);
                let v = w * f(&theta, shell.phi[i]);
                acc += v;
                abs += v.abs();
            }
            (acc, abs)
        });
        partial
            .iter()
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y))
    }

    /// `(2 pi)^-d int f(theta, phi(theta)) dtheta` over the torus, for
    /// integrands with `f(-theta) = f(theta)`.
    pub fn integrate<F>(&self, exec: Execution, rtol: f64, atol: f64, f: &F) -> Result<f64>
    where
        F: Fn(&[f64], f64) -> f64 + Sync + Send,
    {
        self.integrate_with_magnitude(exec, rtol, atol, f).map(|(v, _)| v)
    }

    /// Like [`SymbolGrid::integrate`], also returning the integral of `|f|`,
    /// the scale against which cancellation errors are measured.
    pub fn integrate_with_magnitude<F>(
        &self,
        exec: Execution,
        rtol: f64,
        atol: f64,
        f: &F,
    ) -> Result<(f64, f64)>
    where
        F: Fn(&[f64], f64) -> f64 + Sync + Send,
    {
        let norm = (2.0 * PI).powi(self.dimension as i32);
        let mut magnitude = 0.0;
        let mut total = 0.0;
        let mut prev = [f64::NAN; 2];
        let mut calm = 0;
        for j in 0..MAX_SHELLS {
            let (s, abs) = self.shell_sum(exec, j, f);
            total += s;
            magnitude += abs;
            if j + 1 >= MIN_SHELLS {
                if s == 0.0 && prev[0] == 0.0 {
                    return Ok((total / norm, magnitude / norm));
                }
                let r = s / prev[0];
                let r_prev = prev[0] / prev[1];
                let geometric = |r: f64| r > 0.0 && r < 0.95;
                if geometric(r) && geometric(r_prev) && (r - r_prev).abs() <= 0.1 * r {
                    let tail = s * r / (1.0 - r);
                    let spread = (tail - s * r_prev / (1.0 - r_prev)).abs();
                    let tol = (rtol * total.abs())
                        .max(atol * norm)
                        .max(CANCELLATION / 16.0 * magnitude);
                    calm = if spread <= tol { calm + 1 } else { 0 };
                    if calm >= 2 {
                        return Ok(((total + tail) / norm, magnitude / norm));
                    }
                } else {
                    calm = 0;
                }
            }
            prev = [s, prev[0]];
        }
        Err(Error::QuadratureNotConverged(format!(
            "shell contributions did not decay after {MAX_SHELLS} shells"
        )))
    }
}
