//! Exact event-driven simulation of the particle system.
//!
//! Every particle jumps with intensity `q` and dies with intensity `b_0`;
//! particles at the origin additionally split into `n >= 2` particles with
//! intensity `b_n`, the new ones placed at the origin. Events are drawn with
//! the aggregate-rate method: the waiting time is exponential with the total
//! rate of the population and the acting particle is chosen proportionally to
//! its rate.
//!
//! Replica `r` draws from the ChaCha8 stream `(seed, r)`, so results do not
//! depend on how replicas are scheduled across threads.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::spectral::{classify_with, SpectralOptions};
use crate::walk_kernel::KernelVariant;
use crate::{Error, Execution, OffspringLaw, Regime, Result, WalkKernel};

/// Largest number of explicitly tabulated heavy-tail displacements.
const MAX_TABLE: usize = 1 << 20;

/// Samples displacements `z` with probability `a(z) / q`.
#[derive(Debug, Clone)]
pub struct JumpSampler {
    dimension: usize,
    table: WeightedAliasIndex<f64>,
    /// Flat list of tabulated displacements.
    offsets: Vec<i64>,
    tail: Option<TailSampler>,
}

/// Rejection sampler for `|z|^(-d - alpha)` restricted to `|z|_inf > radius`.
///
/// The shell index `k` is proposed from a discretised Pareto law, a point on
/// the shell from a uniformly chosen face, and both are thinned to the
/// target.
#[derive(Debug, Clone, Copy)]
struct TailSampler {
    probability: f64,
    radius: usize,
    alpha: f64,
    bound: f64,
}

impl TailSampler {
    fn new(dimension: usize, alpha: f64, radius: usize, probability: f64) -> Self {
        let d = dimension as f64;
        let k = (radius + 1) as f64;
        let faces = |k: f64| 2.0 * d * (2.0 * k + 1.0).powf(d - 1.0);
        let bound = faces(k) / k.powf(d - 1.0) * ((k + 1.0) / k).powf(1.0 + alpha);
        TailSampler {
            probability,
            radius,
            alpha,
            bound,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R, z: &mut [i64]) {
        let d = z.len() as f64;
        let a = self.alpha;
        let r1 = (self.radius + 1) as f64;
        loop {
            let u: f64 = 1.0 - rng.random::<f64>();
            let y = r1 * u.powf(-1.0 / a);
            if !(y < 9.0e15) {
                continue;
            }
            let k = y.floor();
            let proposal = (k / r1).powf(-a) - ((k + 1.0) / r1).powf(-a);
            let target = 2.0 * d * (2.0 * k + 1.0).powf(d - 1.0) * k.powf(-d - a);
            let envelope = self.bound * proposal * r1.powf(-a) / a;
            if rng.random::<f64>() * envelope > target {
                continue;
            }
            let ki = k as i64;
            let face = rng.random_range(0..z.len());
            for (j, c) in z.iter_mut().enumerate() {
                *c = if j == face {
                    if rng.random::<bool>() {
                        ki
                    } else {
                        -ki
                    }
                } else {
                    rng.random_range(-ki..=ki)
                };
            }
            let on_faces = z.iter().filter(|c| c.abs() == ki).count();
            if on_faces > 1 && rng.random::<f64>() * on_faces as f64 >= 1.0 {
                continue;
            }
            let norm2: f64 = z.iter().map(|&c| (c as f64) * (c as f64)).sum();
            if rng.random::<f64>() < (k * k / norm2).powf(0.5 * (d + a)) {
                return;
            }
        }
    }
}

impl JumpSampler {
    pub fn new(kernel: &WalkKernel) -> Result<Self> {
        let d = kernel.dimension();
        let q = kernel.total_rate();
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        let mut tail = None;
        match kernel.variant() {
            KernelVariant::FiniteSupport { jumps } => {
                for (z, r) in jumps {
                    offsets.extend_from_slice(z);
                    weights.push(r / q);
                }
            }
            KernelVariant::HeavyTail { alpha, cutoff, .. } => {
                let mut radius = *cutoff;
                while radius > 1 && (2 * radius + 1).pow(d as u32) > MAX_TABLE {
                    radius -= 1;
                }
                let side = 2 * radius + 1;
                let mut z = vec![0i64; d];
                for idx in 0..side.pow(d as u32) {
                    let mut rest = idx;
                    for c in z.iter_mut() {
                        *c = (rest % side) as i64 - radius as i64;
                        rest /= side;
                    }
                    if z.iter().all(|&c| c == 0) {
                        continue;
                    }
                    offsets.extend_from_slice(&z);
                    weights.push(kernel.rate(&z) / q);
                }
                let inner: f64 = weights.iter().sum();
                tail = Some(TailSampler::new(d, *alpha, radius, (1.0 - inner).max(0.0)));
            }
        }
        let table = WeightedAliasIndex::new(weights)
            .map_err(|e| Error::InvalidKernel(format!("jump table: {e}")))?;
        Ok(JumpSampler {
            dimension: d,
            table,
            offsets,
            tail,
        })
    }

    /// Probability of a displacement beyond the tabulated cube.
    pub fn tail_probability(&self) -> f64 {
        self.tail.map_or(0.0, |t| t.probability)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, z: &mut [i64]) {
        if let Some(tail) = &self.tail {
            if rng.random::<f64>() < tail.probability {
                tail.sample(rng, z);
                return;
            }
        }
        let i = self.table.sample(rng);
        z.copy_from_slice(&self.offsets[i * self.dimension..(i + 1) * self.dimension]);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Caps {
    pub max_population: usize,
    pub max_events: u64,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            max_population: 1_000_000,
            max_events: 100_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    PopulationCapExceeded,
    EventCapExceeded,
}

/// Population at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    /// `mu(t)`.
    pub total: u64,
    /// `mu(t, y)` for each tracked site `y`.
    pub local: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaOutcome {
    pub replica: u64,
    /// One snapshot per checkpoint reached before any truncation.
    pub snapshots: Vec<Snapshot>,
    pub events: u64,
    pub truncated: Option<Truncation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOptions {
    pub start: Vec<i64>,
    /// Increasing checkpoint times; the last one is the horizon.
    pub checkpoints: Vec<f64>,
    pub tracked: Vec<Vec<i64>>,
    pub replicas: usize,
    pub seed: u64,
    pub max_order: usize,
    pub caps: Caps,
    /// Keep every replica's totals in the summary.
    pub keep_samples: bool,
    pub execution: Execution,
}

impl SimulationOptions {
    pub fn new(dimension: usize, checkpoints: Vec<f64>, replicas: usize, seed: u64) -> Self {
        SimulationOptions {
            start: vec![0; dimension],
            checkpoints,
            tracked: vec![vec![0; dimension]],
            replicas,
            seed,
            max_order: 2,
            caps: Caps::default(),
            keep_samples: false,
            execution: Execution::default(),
        }
    }
}

/// Everything a replica needs besides its index.
#[derive(Debug, Clone)]
pub struct Simulator {
    dimension: usize,
    jump_rate: f64,
    death_rate: f64,
    branch_rate: f64,
    sampler: JumpSampler,
    offspring: Option<(WeightedAliasIndex<f64>, Vec<usize>)>,
}

impl Simulator {
    pub fn new(kernel: &WalkKernel, law: &OffspringLaw) -> Result<Self> {
        let sizes: Vec<(usize, f64)> = law.branching().filter(|(_, b)| *b > 0.0).collect();
        let offspring = if sizes.is_empty() {
            None
        } else {
            let table = WeightedAliasIndex::new(sizes.iter().map(|(_, b)| *b).collect())
                .map_err(|e| Error::InvalidLaw(format!("offspring table: {e}")))?;
            Some((table, sizes.iter().map(|(n, _)| *n).collect()))
        };
        Ok(Simulator {
            dimension: kernel.dimension(),
            jump_rate: kernel.total_rate(),
            death_rate: law.death_rate(),
            branch_rate: law.branching_rate(),
            sampler: JumpSampler::new(kernel)?,
            offspring,
        })
    }

    pub fn sampler(&self) -> &JumpSampler {
        &self.sampler
    }

    /// Runs replica `replica` of stream `seed`.
    pub fn replica(&self, opts: &SimulationOptions, replica: u64) -> ReplicaOutcome {
        let d = self.dimension;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(replica);

        let site_index: HashMap<&[i64], usize> = opts
            .tracked
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_slice(), i))
            .collect();
        let snapshot = |time: f64, positions: &[i64]| {
            let mut local = vec![0u64; opts.tracked.len()];
            for x in positions.chunks_exact(d.max(1)) {
                if let Some(&i) = site_index.get(x) {
                    local[i] += 1;
                }
            }
            Snapshot {
                time,
                total: (positions.len() / d.max(1)) as u64,
                local,
            }
        };

        let is_origin = |x: &[i64]| x.iter().all(|&c| c == 0);
        let mut positions: Vec<i64> = opts.start.clone();
        let mut at_origin = usize::from(is_origin(&opts.start));
        let per_particle = self.jump_rate + self.death_rate;
        let mut z = vec![0i64; d];
        let mut t = 0.0;
        let mut events = 0u64;
        let mut snapshots = Vec::with_capacity(opts.checkpoints.len());
        let mut next = 0;
        let mut truncated = None;

        while next < opts.checkpoints.len() {
            let n = positions.len() / d;
            let rate = n as f64 * per_particle + at_origin as f64 * self.branch_rate;
            let wait = if rate > 0.0 {
                let e: f64 = Exp1.sample(&mut rng);
                e / rate
            } else {
                f64::INFINITY
            };
            while next < opts.checkpoints.len() && t + wait > opts.checkpoints[next] {
                snapshots.push(snapshot(opts.checkpoints[next], &positions));
                next += 1;
            }
            if next == opts.checkpoints.len() {
                break;
            }
            t += wait;
            events += 1;
            if events > opts.caps.max_events {
                truncated = Some(Truncation::EventCapExceeded);
                break;
            }

            let u = rng.random::<f64>() * rate;
            let branch = at_origin as f64 * self.branch_rate;
            if u < branch {
                let (table, sizes) = self.offspring.as_ref().expect("positive branching rate");
                let k = sizes[table.sample(&mut rng)];
                for _ in 1..k {
                    positions.extend(std::iter::repeat_n(0, d));
                }
                at_origin += k - 1;
                if positions.len() / d > opts.caps.max_population {
                    truncated = Some(Truncation::PopulationCapExceeded);
                    break;
                }
                continue;
            }
            let i = (((u - branch) / per_particle) as usize).min(n - 1);
            let range = i * d..(i + 1) * d;
            let was_origin = is_origin(&positions[range.clone()]);
            if rng.random::<f64>() * per_particle < self.jump_rate {
                self.sampler.sample(&mut rng, &mut z);
                for (c, dz) in positions[range.clone()].iter_mut().zip(&z) {
                    *c += dz;
                }
                let now_origin = is_origin(&positions[range]);
                match (was_origin, now_origin) {
                    (true, false) => at_origin -= 1,
                    (false, true) => at_origin += 1,
                    _ => {}
                }
            } else {
                let last = n - 1;
                if i != last {
                    let (head, tail) = positions.split_at_mut(last * d);
                    head[i * d..(i + 1) * d].copy_from_slice(&tail[..d]);
                }
                positions.truncate(last * d);
                if was_origin {
                    at_origin -= 1;
                }
            }
        }
        ReplicaOutcome {
            replica,
            snapshots,
            events,
            truncated,
        }
    }

    /// All replicas in index order.
    pub fn run(&self, opts: &SimulationOptions) -> Vec<ReplicaOutcome> {
        opts.execution
            .map_range(opts.replicas, |r| self.replica(opts, r as u64))
    }
}

/// Runs one replica; a convenience wrapper around [`Simulator::replica`].
pub fn simulate_replica(
    kernel: &WalkKernel,
    law: &OffspringLaw,
    opts: &SimulationOptions,
    replica: u64,
) -> Result<ReplicaOutcome> {
    validate(kernel, opts)?;
    Ok(Simulator::new(kernel, law)?.replica(opts, replica))
}

fn validate(kernel: &WalkKernel, opts: &SimulationOptions) -> Result<()> {
    let d = kernel.dimension();
    if opts.start.len() != d || opts.tracked.iter().any(|s| s.len() != d) {
        return Err(Error::InvalidConfig(format!("sites must have {d} coordinates")));
    }
    if opts.checkpoints.is_empty()
        || opts.checkpoints.iter().any(|t| !(*t >= 0.0 && t.is_finite()))
        || opts.checkpoints.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::InvalidConfig(
            "checkpoints must be finite, nonnegative and increasing".into(),
        ));
    }
    if opts.caps.max_population == 0 || opts.caps.max_events == 0 {
        return Err(Error::InvalidConfig("caps must be positive".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    /// Mean and standard error of i.i.d. samples.
    pub fn of(samples: impl IntoIterator<Item = f64>) -> Self {
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for x in samples {
            n += 1.0;
            let delta = x - mean;
            mean += delta / n;
            m2 += delta * (x - mean);
        }
        let std_error = if n > 1.0 {
            (m2 / (n - 1.0) / n).sqrt()
        } else {
            f64::NAN
        };
        Estimate { mean, std_error }
    }

    /// `|mean - reference| <= k * std_error`.
    pub fn agrees_with(&self, reference: f64, k: f64) -> bool {
        (self.mean - reference).abs() <= k * self.std_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSummary {
    pub time: f64,
    /// Estimates of `E mu(t)^n` for `n = 1..=max_order`.
    pub total: Vec<Estimate>,
    /// `local[s][n - 1]` estimates `E mu(t, y_s)^n`.
    pub local: Vec<Vec<Estimate>>,
    pub extinct_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub replicas: usize,
    pub used_replicas: usize,
    pub truncated_replicas: usize,
    pub total_events: u64,
    pub tracked: Vec<Vec<i64>>,
    pub checkpoints: Vec<CheckpointSummary>,
    /// `samples[k][r]` is `mu(t_k)` of the `r`-th untruncated replica.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<Vec<u64>>>,
}

/// Replica means and standard errors of `mu^n`, skipping truncated replicas.
pub fn estimate_moments(
    outcomes: &[ReplicaOutcome],
    tracked: &[Vec<i64>],
    max_order: usize,
    keep_samples: bool,
) -> Result<SimulationSummary> {
    let used: Vec<&ReplicaOutcome> = outcomes.iter().filter(|o| o.truncated.is_none()).collect();
    if used.is_empty() {
        return Err(Error::AllReplicasTruncated);
    }
    let points = used[0].snapshots.len();
    let moments = |values: &dyn Fn(&ReplicaOutcome) -> f64| -> Vec<Estimate> {
        (1..=max_order)
            .map(|n| Estimate::of(used.iter().map(|o| values(o).powi(n as i32))))
            .collect()
    };
    let checkpoints = (0..points)
        .map(|k| CheckpointSummary {
            time: used[0].snapshots[k].time,
            total: moments(&|o| o.snapshots[k].total as f64),
            local: (0..tracked.len())
                .map(|s| moments(&|o| o.snapshots[k].local[s] as f64))
                .collect(),
            extinct_fraction: used.iter().filter(|o| o.snapshots[k].total == 0).count() as f64
                / used.len() as f64,
        })
        .collect();
    let samples = keep_samples.then(|| {
        (0..points)
            .map(|k| used.iter().map(|o| o.snapshots[k].total).collect())
            .collect()
    });
    Ok(SimulationSummary {
        replicas: outcomes.len(),
        used_replicas: used.len(),
        truncated_replicas: outcomes.len() - used.len(),
        total_events: outcomes.iter().map(|o| o.events).sum(),
        tracked: tracked.to_vec(),
        checkpoints,
        samples,
    })
}

/// Simulates `opts.replicas` replicas and summarises their moments.
pub fn simulate(kernel: &WalkKernel, law: &OffspringLaw, opts: &SimulationOptions) -> Result<SimulationSummary> {
    validate(kernel, opts)?;
    if opts.replicas < 2 {
        return Err(Error::InvalidConfig("at least two replicas are needed".into()));
    }
    let outcomes = Simulator::new(kernel, law)?.run(opts);
    estimate_moments(&outcomes, &opts.tracked, opts.max_order, opts.keep_samples)
}

/// Ratio of two sample means with its delta-method standard error.
pub fn ratio_of_means(numerator: &[f64], denominator: &[f64]) -> Estimate {
    let n = numerator.len() as f64;
    let mx = numerator.iter().sum::<f64>() / n;
    let my = denominator.iter().sum::<f64>() / n;
    let ratio = mx / my;
    let spread = Estimate::of(numerator.iter().zip(denominator).map(|(x, y)| (x - ratio * y) / my));
    Estimate {
        mean: ratio,
        std_error: spread.std_error,
    }
}

/// Difference of two ratios of means estimated on the same replicas, with
/// the standard error of the paired delta method.
pub fn ratio_difference(a: (&[f64], &[f64]), b: (&[f64], &[f64])) -> Estimate {
    let n = a.0.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (ax, ay, bx, by) = (mean(a.0), mean(a.1), mean(b.0), mean(b.1));
    let (ra, rb) = (ax / ay, bx / by);
    let spread = Estimate::of((0..a.0.len()).map(|i| {
        (a.0[i] - ra * a.1[i]) / ay - (b.0[i] - rb * b.1[i]) / by
    }));
    Estimate {
        mean: ra - rb,
        std_error: spread.std_error,
    }
}

/// Rescaled populations `mu(t) e^{-lambda_E t}` and `mu(t, y) e^{-lambda_E t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitLawSample {
    pub lambda_e: f64,
    pub times: Vec<f64>,
    pub tracked: Vec<Vec<i64>>,
    /// `total[k][r]` for checkpoint `k` and untruncated replica `r`.
    pub total: Vec<Vec<f64>>,
    /// `local[k][s][r]`.
    pub local: Vec<Vec<Vec<f64>>>,
    pub summary: Vec<LimitLawSummary>,
    pub truncated_replicas: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitLawSummary {
    pub time: f64,
    pub mean: Estimate,
    pub variance: f64,
    pub mass_at_zero: f64,
}

/// Samples the rescaled population at each checkpoint of a supercritical
/// model.
pub fn sample_limit_law(
    kernel: &WalkKernel,
    law: &OffspringLaw,
    opts: &SimulationOptions,
    spectral: &SpectralOptions,
) -> Result<LimitLawSample> {
    let report = classify_with(kernel, law, spectral)?;
    if report.regime != Regime::Supercritical {
        return Err(Error::WrongRegime {
            expected: Regime::Supercritical.name().into(),
            found: report.regime.name().into(),
        });
    }
    let lambda_e = report.lambda_e.expect("supercritical report carries lambda_E");
    validate(kernel, opts)?;
    let outcomes = Simulator::new(kernel, law)?.run(opts);
    let used: Vec<&ReplicaOutcome> = outcomes.iter().filter(|o| o.truncated.is_none()).collect();
    if used.is_empty() {
        return Err(Error::AllReplicasTruncated);
    }
    let times = opts.checkpoints.clone();
    let scale: Vec<f64> = times.iter().map(|t| (-lambda_e * t).exp()).collect();
    let total: Vec<Vec<f64>> = (0..times.len())
        .map(|k| used.iter().map(|o| o.snapshots[k].total as f64 * scale[k]).collect())
        .collect();
    let local = (0..times.len())
        .map(|k| {
            (0..opts.tracked.len())
                .map(|s| used.iter().map(|o| o.snapshots[k].local[s] as f64 * scale[k]).collect())
                .collect()
        })
        .collect();
    let summary = total
        .iter()
        .zip(&times)
        .map(|(xs, &time)| {
            let mean = Estimate::of(xs.iter().copied());
            let n = xs.len() as f64;
            LimitLawSummary {
                time,
                mean,
                variance: mean.std_error * mean.std_error * n,
                mass_at_zero: xs.iter().filter(|&&x| x == 0.0).count() as f64 / n,
            }
        })
        .collect();
    Ok(LimitLawSample {
        lambda_e,
        times,
        tracked: opts.tracked.clone(),
        total,
        local,
        summary,
        truncated_replicas: outcomes.len() - used.len(),
    })
}
