//! The moment hierarchy on a truncated lattice.
//!
//! With `E = A + beta* Delta_0 - b_0 I` the moments satisfy
//!
//! ```text
//! dm_1/dt = E m_1
//! dm_n/dt = E m_n + delta_0(x) g_n(m_1(t, 0), ..., m_{n-1}(t, 0))
//! ```
//!
//! as functions of the starting site `x`, with `m_n(0, x) = delta_y(x)` for
//! local moments at `y` and `m_n(0, x) = 1` for the total population. The
//! lattice is cut to the box `|x|_inf <= L`; jumps leaving the box are
//! discarded, which is the same as killing particles outside the box.
//!
//! All orders are integrated together as one block-triangular linear system
//! with an adaptive Dormand-Prince 5(4) pair, so the source terms always see
//! the lower orders at the current stage.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::walk_kernel::KernelVariant;
use crate::{Error, Execution, OffspringLaw, Result, WalkKernel};

/// Which functional of the population the moments are taken of.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `m_n(t, x, y) = E_x mu(t, y)^n`.
    Local { site: Vec<i64> },
    /// `m_n(t, x) = E_x mu(t)^n`.
    Total,
    /// `E_x mu(t, S)^n` for a finite set of sites `S`.
    Set { sites: Vec<Vec<i64>> },
}

impl Variant {
    pub fn local_origin(dimension: usize) -> Self {
        Variant::Local {
            site: vec![0; dimension],
        }
    }

    pub fn label(&self) -> String {
        match self {
            Variant::Local { site } => format!("local({})", format_site(site)),
            Variant::Total => "total".into(),
            Variant::Set { sites } => {
                let s: Vec<String> = sites.iter().map(|x| format_site(x)).collect();
                format!("set({})", s.join(","))
            }
        }
    }
}

/// `x;y;z` formatting used in CSV headers and on the command line.
pub fn format_site(x: &[i64]) -> String {
    x.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";")
}

/// The cube `|x|_inf <= L` with row-major site indices, first coordinate
/// fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeBox {
    dimension: usize,
    radius: usize,
    side: usize,
    len: usize,
}

impl LatticeBox {
    pub fn new(dimension: usize, radius: usize) -> Self {
        let side = 2 * radius + 1;
        LatticeBox {
            dimension,
            radius,
            side,
            len: side.pow(dimension as u32),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn index(&self, x: &[i64]) -> Option<usize> {
        let r = self.radius as i64;
        let mut idx = 0;
        let mut stride = 1;
        for &c in x {
            if c.abs() > r {
                return None;
            }
            idx += (c + r) as usize * stride;
            stride *= self.side;
        }
        Some(idx)
    }

    pub fn site(&self, mut idx: usize) -> Vec<i64> {
        (0..self.dimension)
            .map(|_| {
                let c = (idx % self.side) as i64 - self.radius as i64;
                idx /= self.side;
                c
            })
            .collect()
    }

    pub fn origin(&self) -> usize {
        self.index(&vec![0; self.dimension]).expect("origin in box")
    }

    fn sup_norm(&self, idx: usize) -> usize {
        self.site(idx)
            .iter()
            .map(|c| c.unsigned_abs() as usize)
            .max()
            .unwrap_or(0)
    }
}

#[derive(Clone)]
enum Coupling {
    Stencil {
        jumps: Vec<(Vec<i64>, isize, f64)>,
    },
    Convolution(Arc<Convolver>),
}

impl std::fmt::Debug for Coupling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coupling::Stencil { jumps } => write!(f, "Stencil({} jumps)", jumps.len()),
            Coupling::Convolution(c) => write!(f, "Convolution(size {})", c.size),
        }
    }
}

/// `E = A + beta* Delta_0 - b_0 I` on a box with absorbing exterior.
#[derive(Debug, Clone)]
pub struct TruncatedOperator {
    geometry: LatticeBox,
    coupling: Coupling,
    total_rate: f64,
    beta_star: f64,
    death_rate: f64,
    execution: Execution,
}

impl TruncatedOperator {
    pub fn new(kernel: &WalkKernel, law: &OffspringLaw, radius: usize) -> Self {
        Self::with_rates(kernel, law.beta_star(), law.death_rate(), radius)
    }

    pub fn with_rates(kernel: &WalkKernel, beta_star: f64, death_rate: f64, radius: usize) -> Self {
        let geometry = LatticeBox::new(kernel.dimension(), radius);
        let coupling = match kernel.variant() {
            KernelVariant::FiniteSupport { jumps } => {
                let mut stride = 1isize;
                let mut strides = Vec::new();
                for _ in 0..geometry.dimension {
                    strides.push(stride);
                    stride *= geometry.side as isize;
                }
                Coupling::Stencil {
                    jumps: jumps
                        .iter()
                        .map(|(z, r)| {
                            let offset = z.iter().zip(&strides).map(|(c, s)| *c as isize * s).sum();
                            (z.clone(), offset, *r)
                        })
                        .collect(),
                }
            }
            KernelVariant::HeavyTail { .. } => {
                Coupling::Convolution(Arc::new(Convolver::new(kernel, &geometry)))
            }
        };
        TruncatedOperator {
            geometry,
            coupling,
            total_rate: kernel.total_rate(),
            beta_star,
            death_rate,
            execution: Execution::default(),
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn geometry(&self) -> &LatticeBox {
        &self.geometry
    }

    pub fn radius(&self) -> usize {
        self.geometry.radius
    }

    pub fn len(&self) -> usize {
        self.geometry.len
    }

    pub fn is_empty(&self) -> bool {
        self.geometry.len == 0
    }

    pub fn death_rate(&self) -> f64 {
        self.death_rate
    }

    pub fn beta_star(&self) -> f64 {
        self.beta_star
    }

    /// Upper bound on the spectral radius, `2 q + beta* + b_0`.
    pub fn spectral_bound(&self) -> f64 {
        2.0 * self.total_rate + self.beta_star + self.death_rate
    }

    fn diagonal(&self, idx: usize, origin: usize) -> f64 {
        let source = if idx == origin { self.beta_star } else { 0.0 };
        -self.total_rate + source - self.death_rate
    }

    /// Matrix entry `E(x, y)`.
    pub fn entry(&self, kernel: &WalkKernel, x: &[i64], y: &[i64]) -> f64 {
        let (Some(i), Some(_)) = (self.geometry.index(x), self.geometry.index(y)) else {
            return 0.0;
        };
        if x == y {
            return self.diagonal(i, self.geometry.origin());
        }
        let z: Vec<i64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
        kernel.rate(&z)
    }

    /// `out = E v`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let g = &self.geometry;
        assert_eq!(v.len(), g.len);
        assert_eq!(out.len(), g.len);
        let origin = g.origin();
        match &self.coupling {
            Coupling::Stencil { jumps } => {
                let r = g.radius as i64;
                let d = g.dimension;
                let side = g.side;
                let diag = -self.total_rate - self.death_rate;
                // one line along the first coordinate at a time; on each line
                // every jump acts on a contiguous range
                self.execution.for_each_chunk(out, side, |row, line| {
                    let base = row * side;
                    let mut rest = row;
                    let mut higher = [0i64; 16];
                    for c in higher.iter_mut().take(d - 1) {
                        *c = (rest % side) as i64 - r;
                        rest /= side;
                    }
                    for (k, o) in line.iter_mut().enumerate() {
                        *o = diag * v[base + k];
                    }
                    'jump: for (z, offset, rate) in jumps {
                        for (c, dz) in higher[..d - 1].iter().zip(&z[1..]) {
                            if (c + dz).abs() > r {
                                continue 'jump;
                            }
                        }
                        let shift = z[0];
                        let lo = (-shift).clamp(0, side as i64) as usize;
                        let hi = (side as i64 - shift.max(0)).max(lo as i64) as usize;
                        let src = base as isize + offset;
                        for k in lo..hi {
                            line[k] += rate * v[(src + k as isize) as usize];
                        }
                    }
                });
                out[origin] += self.beta_star * v[origin];
            }
            Coupling::Convolution(conv) => {
                conv.apply(g, v, out);
                for (i, o) in out.iter_mut().enumerate() {
                    *o += self.diagonal(i, origin) * v[i];
                }
            }
        }
    }
}

/// Circulant embedding of `v -> sum_y a(y - x) v(y)` on the box, evaluated
/// with FFTs of side `M >= 4L + 1`.
struct Convolver {
    size: usize,
    dimension: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    spectrum: Vec<Complex<f64>>,
}

impl Convolver {
    fn new(kernel: &WalkKernel, geometry: &LatticeBox) -> Self {
        let d = geometry.dimension;
        let size = (4 * geometry.radius + 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        let total = size.pow(d as u32);
        let reach = 2 * geometry.radius as i64;
        let mut data = vec![Complex::new(0.0, 0.0); total];
        let mut z = vec![0i64; d];
        for (idx, slot) in data.iter_mut().enumerate() {
            let mut rest = idx;
            let mut inside = true;
            for c in z.iter_mut() {
                let k = (rest % size) as i64;
                rest /= size;
                *c = if k <= reach {
                    k
                } else if k >= size as i64 - reach {
                    k - size as i64
                } else {
                    inside = false;
                    0
                };
            }
            if inside && z.iter().any(|&c| c != 0) {
                *slot = Complex::new(kernel.rate(&z), 0.0);
            }
        }
        let mut conv = Convolver {
            size,
            dimension: d,
            forward,
            inverse,
            spectrum: Vec::new(),
        };
        conv.transform(&mut data, true);
        let scale = 1.0 / total as f64;
        for c in data.iter_mut() {
            *c *= scale;
        }
        conv.spectrum = data;
        conv
    }

    fn transform(&self, data: &mut [Complex<f64>], forward: bool) {
        let plan = if forward { &self.forward } else { &self.inverse };
        let n = self.size;
        let mut stride = 1;
        let mut line = vec![Complex::new(0.0, 0.0); n];
        for _ in 0..self.dimension {
            if stride == 1 {
                for chunk in data.chunks_mut(n) {
                    plan.process(chunk);
                }
            } else {
                let block = stride * n;
                for outer in data.chunks_mut(block) {
                    for offset in 0..stride {
                        for (k, l) in line.iter_mut().enumerate() {
                            *l = outer[offset + k * stride];
                        }
                        plan.process(&mut line);
                        for (k, l) in line.iter().enumerate() {
                            outer[offset + k * stride] = *l;
                        }
                    }
                }
            }
            stride *= n;
        }
    }

    fn apply(&self, geometry: &LatticeBox, v: &[f64], out: &mut [f64]) {
        let d = self.dimension;
        let n = self.size;
        let total = n.pow(d as u32);
        let mut data = vec![Complex::new(0.0, 0.0); total];
        let embed = |idx: usize| {
            let mut rest = idx;
            let mut pos = 0;
            let mut stride = 1;
            for _ in 0..d {
                pos += (rest % geometry.side) * stride;
                rest /= geometry.side;
                stride *= n;
            }
            pos
        };
        for (i, &x) in v.iter().enumerate() {
            data[embed(i)] = Complex::new(x, 0.0);
        }
        self.transform(&mut data, true);
        for (a, b) in data.iter_mut().zip(&self.spectrum) {
            *a *= b;
        }
        self.transform(&mut data, false);
        for (i, o) in out.iter_mut().enumerate() {
            *o = data[embed(i)].re;
        }
    }
}

/// Settings of a hierarchy solve.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentOptions {
    pub radius: usize,
    pub max_order: usize,
    pub horizon: f64,
    pub variant: Variant,
    /// Output times besides the geometric grid.
    pub extra_times: Vec<f64>,
    pub rtol: f64,
    /// Absolute tolerance, relative to the sup norm of each moment order.
    pub atol: f64,
    /// Largest admissible ratio of boundary to peak values of `m_1`.
    pub leak_tol: f64,
    pub points_per_decade: usize,
    pub first_output: f64,
    pub max_steps: usize,
    /// Sites stored at every output time; `None` stores every site of small
    /// boxes and the origin, the unit vectors and the target sites of large
    /// ones.
    pub tracked: Option<Vec<Vec<i64>>>,
    pub execution: Execution,
}

impl MomentOptions {
    pub fn new(radius: usize, max_order: usize, horizon: f64, variant: Variant) -> Self {
        MomentOptions {
            radius,
            max_order,
            horizon,
            variant,
            extra_times: Vec::new(),
            rtol: 1e-8,
            atol: 1e-12,
            leak_tol: 1e-6,
            points_per_decade: 32,
            first_output: 1e-2,
            max_steps: 2_000_000,
            tracked: None,
            execution: Execution::default(),
        }
    }
}

const FULL_STORAGE_LIMIT: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverMetadata {
    pub radius: usize,
    /// Sites with `|x|_inf` up to this radius are unaffected by the total
    /// variant's boundary deficit.
    pub trusted_radius: usize,
    pub rtol: f64,
    pub atol: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Largest ratio of boundary to peak values of `m_1` seen.
    pub boundary_leak: f64,
}

/// `m_n` of one order at the tracked sites.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrajectory {
    pub order: usize,
    pub variant: Variant,
    pub dimension: usize,
    pub times: Vec<f64>,
    pub sites: Vec<Vec<i64>>,
    /// `values[k][s]` is the moment at `times[k]` and `sites[s]`.
    pub values: Vec<Vec<f64>>,
    /// All box values at the last output time, indexed like [`LatticeBox`].
    pub final_values: Vec<f64>,
    pub metadata: SolverMetadata,
}

impl MomentTrajectory {
    pub fn site_index(&self, x: &[i64]) -> Option<usize> {
        self.sites.iter().position(|s| s.as_slice() == x)
    }

    /// Time series at a tracked site.
    pub fn series(&self, x: &[i64]) -> Option<Vec<f64>> {
        let s = self.site_index(x)?;
        Some(self.values.iter().map(|row| row[s]).collect())
    }

    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times
            .iter()
            .position(|&u| (u - t).abs() <= 1e-12 * t.abs().max(1.0))
    }

    /// Value at an output time and tracked site.
    pub fn value(&self, t: f64, x: &[i64]) -> Option<f64> {
        Some(self.values[self.time_index(t)?][self.site_index(x)?])
    }

    pub fn geometry(&self) -> LatticeBox {
        LatticeBox::new(self.dimension, self.metadata.radius)
    }

    /// CSV with header `t,site...` and one row per output time.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for s in &self.sites {
            out.push(',');
            out.push_str(&format_site(s));
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.values) {
            out.push_str(&format!("{t:e}"));
            for v in row {
                out.push_str(&format!(",{v:e}"));
            }
            out.push('\n');
        }
        out
    }
}

fn output_times(opts: &MomentOptions) -> Vec<f64> {
    let mut times = vec![0.0];
    let t1 = opts.first_output.min(opts.horizon);
    let decades = (opts.horizon / t1).log10().max(0.0);
    let steps = (decades * opts.points_per_decade as f64).ceil() as usize;
    for k in 0..=steps {
        let t = t1 * 10f64.powf(k as f64 / opts.points_per_decade as f64);
        if t < opts.horizon * (1.0 - 1e-12) {
            times.push(t);
        }
    }
    times.push(opts.horizon);
    times.extend(opts.extra_times.iter().filter(|&&t| t > 0.0 && t <= opts.horizon));
    times.sort_by(|a, b| a.total_cmp(b));
    times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    times
}

fn initial_condition(geometry: &LatticeBox, variant: &Variant) -> Result<Vec<f64>> {
    let mut init = vec![0.0; geometry.len];
    let mut mark = |x: &[i64]| -> Result<()> {
        let idx = geometry.index(x).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "site {} lies outside the box of radius {}",
                format_site(x),
                geometry.radius
            ))
        })?;
        init[idx] = 1.0;
        Ok(())
    };
    match variant {
        Variant::Local { site } => mark(site)?,
        Variant::Set { sites } => {
            for s in sites {
                mark(s)?;
            }
        }
        Variant::Total => init.iter_mut().for_each(|v| *v = 1.0),
    }
    Ok(init)
}

fn tracked_sites(geometry: &LatticeBox, opts: &MomentOptions) -> Vec<usize> {
    let limit = match opts.variant {
        Variant::Total => geometry.radius / 2,
        _ => geometry.radius,
    };
    if let Some(sites) = &opts.tracked {
        return sites.iter().filter_map(|s| geometry.index(s)).collect();
    }
    if geometry.len <= FULL_STORAGE_LIMIT {
        return (0..geometry.len)
            .filter(|&i| geometry.sup_norm(i) <= limit)
            .collect();
    }
    let d = geometry.dimension;
    let mut sites = vec![vec![0; d]];
    for k in 0..d {
        for sign in [1, -1] {
            let mut e = vec![0; d];
            e[k] = sign;
            sites.push(e);
        }
    }
    match &opts.variant {
        Variant::Local { site } => sites.push(site.clone()),
        Variant::Set { sites: s } => sites.extend(s.iter().cloned()),
        Variant::Total => {}
    }
    let mut idx: Vec<usize> = sites
        .iter()
        .filter_map(|s| geometry.index(s))
        .filter(|&i| geometry.sup_norm(i) <= limit.max(1))
        .collect();
    idx.sort_unstable();
    idx.dedup();
    idx
}

/// Dormand-Prince 5(4) tableau. The system is autonomous, so the nodes
/// are not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Hierarchy<'a> {
    op: &'a TruncatedOperator,
    law: &'a OffspringLaw,
    orders: usize,
    blocks: usize,
    len: usize,
    origin: usize,
}

impl Hierarchy<'_> {
    fn rhs(&self, y: &[f64], out: &mut [f64]) {
        let len = self.len;
        for b in 0..self.blocks {
            self.op
                .apply(&y[b * len..(b + 1) * len], &mut out[b * len..(b + 1) * len]);
        }
        let mut lower = Vec::with_capacity(self.orders);
        for n in 2..=self.orders {
            lower.clear();
            lower.extend((0..n - 1).map(|b| y[b * len + self.origin]));
            let g = self.law.g(n, &lower).expect("arity matches by construction");
            out[(n - 1) * len + self.origin] += g;
        }
    }
}

/// Solves orders `1..=max_order` of the hierarchy.
pub fn solve_moments(
    kernel: &WalkKernel,
    law: &OffspringLaw,
    opts: &MomentOptions,
) -> Result<Vec<MomentTrajectory>> {
    if opts.max_order == 0 {
        return Err(Error::InvalidConfig("moment order must be at least 1".into()));
    }
    if !(opts.horizon > 0.0 && opts.horizon.is_finite()) {
        return Err(Error::InvalidConfig(format!("horizon {} must be positive", opts.horizon)));
    }
    let op = TruncatedOperator::new(kernel, law, opts.radius).with_execution(opts.execution);
    let geometry = op.geometry().clone();
    let len = geometry.len;
    let origin = geometry.origin();
    let init = initial_condition(&geometry, &opts.variant)?;

    // total moments carry an extra first-order block started at the origin,
    // whose boundary values measure how far mass spreads
    let leak_block = matches!(opts.variant, Variant::Total);
    let orders = opts.max_order;
    let blocks = orders + usize::from(leak_block);
    let mut y = vec![0.0; blocks * len];
    for b in 0..orders {
        y[b * len..(b + 1) * len].copy_from_slice(&init);
    }
    if leak_block {
        y[orders * len + origin] = 1.0;
    }
    let leak_offset = if leak_block { orders * len } else { 0 };
    let boundary: Vec<usize> = (0..len)
        .filter(|&i| geometry.sup_norm(i) == geometry.radius)
        .collect();

    let system = Hierarchy {
        op: &op,
        law,
        orders,
        blocks,
        len,
        origin,
    };
    let times = output_times(opts);
    let tracked = tracked_sites(&geometry, opts);
    let mut records: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(times.len()); orders];
    let record = |y: &[f64], records: &mut Vec<Vec<Vec<f64>>>| {
        for (b, rec) in records.iter_mut().enumerate() {
            rec.push(tracked.iter().map(|&i| y[b * len + i]).collect());
        }
    };
    let leak_of = |y: &[f64]| {
        let block = &y[leak_offset..leak_offset + len];
        let peak = block.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let edge = boundary.iter().fold(0.0f64, |m, &i| m.max(block[i].abs()));
        if peak > 0.0 {
            edge / peak
        } else {
            0.0
        }
    };

    let mut leak = if leak_block { 0.0 } else { leak_of(&y) };
    record(&y, &mut records);

    let exec = opts.execution;
    let n = y.len();
    let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; n]).collect();
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    system.rhs(&y, &mut k[0]);

    let mut t = 0.0;
    let mut h = (1e-3 / op.spectral_bound()).min(opts.first_output / 4.0);
    let mut err_prev: f64 = 1.0;
    let mut accepted = 0;
    let mut rejected = 0;
    let mut next = 1;
    while next < times.len() {
        if accepted + rejected >= opts.max_steps {
            return Err(Error::StiffnessFailure(format!(
                "step budget of {} exhausted at t = {t}",
                opts.max_steps
            )));
        }
        let target = times[next];
        let mut step = h;
        let clamped = t + step >= target * (1.0 - 1e-13);
        if clamped {
            step = target - t;
        }
        if step <= 1e-14 * t.max(1.0) {
            return Err(Error::StiffnessFailure(format!("step size underflow at t = {t}")));
        }
        for s in 1..7 {
            {
                let (done, _) = k.split_at(s);
                exec.fill(&mut stage, |i| {
                    let mut acc = 0.0;
                    for (j, kj) in done.iter().enumerate() {
                        acc += A[s][j] * kj[i];
                    }
                    y[i] + step * acc
                });
            }
            let (_, rest) = k.split_at_mut(s);
            system.rhs(&stage, &mut rest[0]);
        }
        // the seventh stage is evaluated at the fifth-order solution
        y_new.copy_from_slice(&stage);

        let mut err: f64 = 0.0;
        for b in 0..blocks {
            let range = b * len..(b + 1) * len;
            let scale = y[range.clone()]
                .iter()
                .chain(&y_new[range.clone()])
                .fold(0.0f64, |m, v| m.max(v.abs()));
            if scale == 0.0 {
                continue;
            }
            let floor = opts.atol * scale;
            let block_err = exec
                .map_range(len.div_ceil(4096), |c| {
                    let lo = b * len + c * 4096;
                    let hi = (lo + 4096).min((b + 1) * len);
                    let mut m: f64 = 0.0;
                    for i in lo..hi {
                        let mut e = 0.0;
                        for (j, kj) in k.iter().enumerate() {
                            e += E[j] * kj[i];
                        }
                        let tol = floor + opts.rtol * y[i].abs().max(y_new[i].abs());
                        m = m.max((step * e).abs() / tol);
                    }
                    m
                })
                .into_iter()
                .fold(0.0, f64::max);
            err = err.max(block_err);
        }
        if !err.is_finite() {
            err = f64::INFINITY;
        }

        if err <= 1.0 {
            accepted += 1;
            t = if clamped { target } else { t + step };
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::StiffnessFailure(format!("non-finite state at t = {t}")));
            }
            if clamped {
                leak = leak.max(leak_of(&y));
                record(&y, &mut records);
                next += 1;
            }
            let fac = 0.9 * err.max(1e-10).powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
            let grown = step * fac.clamp(0.2, 5.0);
            h = if clamped { h.max(grown) } else { grown };
            err_prev = err.max(1e-4);
        } else {
            rejected += 1;
            h = step * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
    }

    if leak > opts.leak_tol {
        return Err(Error::TruncationTooSmall {
            radius: opts.radius,
            leak,
            tolerance: opts.leak_tol,
        });
    }
    let trusted_radius = match opts.variant {
        Variant::Total => geometry.radius / 2,
        _ => geometry.radius,
    };
    let metadata = SolverMetadata {
        radius: opts.radius,
        trusted_radius,
        rtol: opts.rtol,
        atol: opts.atol,
        accepted_steps: accepted,
        rejected_steps: rejected,
        boundary_leak: leak,
    };
    let sites: Vec<Vec<i64>> = tracked.iter().map(|&i| geometry.site(i)).collect();
    Ok(records
        .into_iter()
        .enumerate()
        .map(|(b, values)| MomentTrajectory {
            order: b + 1,
            variant: opts.variant.clone(),
            dimension: geometry.dimension,
            times: times.clone(),
            sites: sites.clone(),
            values,
            final_values: y[b * len..(b + 1) * len].to_vec(),
            metadata: metadata.clone(),
        })
        .collect())
}

/// Outcome of [`choose_truncation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationChoice {
    pub radius: usize,
    /// Relative change of the origin value between `radius` and `2 radius`.
    pub change: f64,
}

/// Smallest radius `L = start 2^k <= max` such that doubling it changes the
/// first moment of `variant` at the origin and `horizon` by less than
/// `tolerance` relative.
#[allow(clippy::too_many_arguments)]
pub fn choose_truncation(
    kernel: &WalkKernel,
    law: &OffspringLaw,
    variant: &Variant,
    horizon: f64,
    start: usize,
    max: usize,
    tolerance: f64,
    execution: Execution,
) -> Result<TruncationChoice> {
    let d = kernel.dimension();
    let origin = vec![0; d];
    let value = |radius: usize| -> Result<f64> {
        let mut opts = MomentOptions::new(radius, 1, horizon, variant.clone());
        opts.leak_tol = f64::INFINITY;
        opts.tracked = Some(vec![origin.clone()]);
        opts.points_per_decade = 4;
        opts.execution = execution;
        let traj = solve_moments(kernel, law, &opts)?;
        Ok(*traj[0].values.last().and_then(|r| r.first()).expect("origin tracked"))
    };
    let mut radius = start.max(1);
    let mut current = value(radius)?;
    let mut change = f64::INFINITY;
    while 2 * radius <= max {
        let doubled = value(2 * radius)?;
        change = ((doubled - current) / doubled).abs();
        if change < tolerance {
            return Ok(TruncationChoice { radius, change });
        }
        radius *= 2;
        current = doubled;
    }
    Err(Error::TruncationTooSmall {
        radius,
        leak: change,
        tolerance,
    })
}

/// Whether an exponent of the growth model is fitted or held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exponent {
    Free,
    Fixed(f64),
}

/// Which of `rho`, `kappa`, `eta` in
/// `log m = log C + rho t + kappa log t + eta log log t` are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthModel {
    pub rho: Exponent,
    pub kappa: Exponent,
    pub eta: Exponent,
}

impl Default for GrowthModel {
    fn default() -> Self {
        GrowthModel {
            rho: Exponent::Free,
            kappa: Exponent::Free,
            eta: Exponent::Fixed(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub log_prefactor: f64,
    pub rho: f64,
    pub kappa: f64,
    pub eta: f64,
    /// Euclidean norm of the residuals in `log m`.
    pub residual: f64,
    pub points: usize,
}

/// Least-squares fit of `log m(t)` on a window of a tracked site.
pub fn fit_growth(
    trajectory: &MomentTrajectory,
    site: &[i64],
    window: (f64, f64),
    model: GrowthModel,
) -> Result<GrowthFit> {
    let series = trajectory
        .series(site)
        .ok_or_else(|| Error::DegenerateWindow(format!("site {site:?} is not tracked")))?;
    fit_series(&trajectory.times, &series, window, model)
}

/// [`fit_growth`] on raw samples.
pub fn fit_series(
    times: &[f64],
    values: &[f64],
    window: (f64, f64),
    model: GrowthModel,
) -> Result<GrowthFit> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::DegenerateWindow(format!("window [{lo}, {hi}]")));
    }
    if model.eta == Exponent::Free && lo <= 1.0 {
        return Err(Error::DegenerateWindow("log log t needs t > 1".into()));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= lo * (1.0 - 1e-12) && **t <= hi * (1.0 + 1e-12))
        .map(|(t, v)| (*t, *v))
        .collect();
    if pts.iter().any(|(_, v)| !(*v > 0.0)) {
        return Err(Error::NonPositiveValues);
    }
    let peak = pts.iter().fold(0.0f64, |m, (_, v)| m.max(*v));
    let pts: Vec<(f64, f64)> = pts.into_iter().filter(|(_, v)| *v >= 1e-300 * peak).collect();

    let mut columns: Vec<Box<dyn Fn(f64) -> f64>> = vec![Box::new(|_| 1.0)];
    let mut fixed: Vec<(f64, Box<dyn Fn(f64) -> f64>)> = Vec::new();
    let basis: [(Exponent, Box<dyn Fn(f64) -> f64>); 3] = [
        (model.rho, Box::new(|t| t)),
        (model.kappa, Box::new(|t: f64| t.ln())),
        (model.eta, Box::new(|t: f64| t.ln().ln())),
    ];
    let mut free = Vec::new();
    for (k, (e, f)) in basis.into_iter().enumerate() {
        match e {
            Exponent::Free => {
                free.push(k);
                columns.push(f);
            }
            Exponent::Fixed(v) => {
                if v != 0.0 {
                    fixed.push((v, f));
                }
            }
        }
    }
    if pts.len() < columns.len() + 1 {
        return Err(Error::DegenerateWindow(format!(
            "{} points for {} parameters",
            pts.len(),
            columns.len()
        )));
    }
    let a = DMatrix::from_fn(pts.len(), columns.len(), |i, j| columns[j](pts[i].0));
    let b = DVector::from_fn(pts.len(), |i, _| {
        let (t, v) = pts[i];
        v.ln() - fixed.iter().map(|(c, f)| c * f(t)).sum::<f64>()
    });
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::DegenerateWindow("collinear regressors".into()));
    }
    let x = svd
        .solve(&b, 1e-14 * smax)
        .map_err(|e| Error::DegenerateWindow(e.to_string()))?;
    let residual = (&a * &x - &b).norm();
    let mut params = [0.0; 3];
    for (k, e) in [model.rho, model.kappa, model.eta].iter().enumerate() {
        if let Exponent::Fixed(v) = e {
            params[k] = *v;
        }
    }
    for (slot, &k) in free.iter().enumerate() {
        params[k] = x[slot + 1];
    }
    Ok(GrowthFit {
        log_prefactor: x[0],
        rho: params[0],
        kappa: params[1],
        eta: params[2],
        residual,
        points: pts.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpair {
    pub value: f64,
    /// Unit vector in the box ordering of [`LatticeBox`].
    pub vector: Vec<f64>,
    /// `|E f - value f|_2`.
    pub residual: f64,
    pub iterations: usize,
    /// The estimate lies at or below `-b_0`, i.e. it tracks the edge of the
    /// continuous spectrum rather than an isolated eigenvalue.
    pub edge_estimate: bool,
}

/// Leading eigenpair of a truncated operator by power iteration on
/// `E + (2q + b_0) I`, whose entries are nonnegative.
pub fn leading_eigenpair(op: &TruncatedOperator, tolerance: f64, max_iterations: usize) -> Result<Eigenpair> {
    let n = op.len();
    let shift = op.spectral_bound() - op.beta_star();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut w = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iterations {
        op.apply(&v, &mut w);
        let value: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        residual = v
            .iter()
            .zip(&w)
            .map(|(a, b)| (b - value * a).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual < tolerance {
            return Ok(Eigenpair {
                value,
                vector: v,
                residual,
                iterations: it,
                edge_estimate: value + op.death_rate() <= 0.0,
            });
        }
        for (a, b) in w.iter_mut().zip(&v) {
            *a += shift * b;
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, b) in v.iter_mut().zip(&w) {
            *a = b / norm;
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iterations,
        residual,
    })
}
