//! Training runs and (batch size × learning rate × round) grid searches.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InitSpec, Workload};
use crate::optim::{OptimizerConfig, Stepper};
use crate::rng::{derive_seed, stream, tag};

/// Relative slack on the target comparison so that an iterate landing on the
/// target up to rounding still counts.
pub const TARGET_RTOL: f64 = 1e-9;

/// A list of grid values or a rule generating one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    List(Vec<f64>),
    /// start, start + step, … ≤ stop
    Linear {
        start: f64,
        stop: f64,
        step: f64,
    },
    /// `count` points geometrically spaced from start to stop inclusive.
    Geometric {
        start: f64,
        stop: f64,
        count: usize,
    },
}

impl Axis {
    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            Axis::List(v) => v.clone(),
            Axis::Linear { start, stop, step } => {
                if !(*step > 0.0) || !(stop >= start) {
                    return Err(Error::invalid(
                        "linear axis needs step > 0 and stop >= start",
                    ));
                }
                let n = ((stop - start) / step * (1.0 + 1e-12)).floor() as usize;
                (0..=n).map(|k| start + step * k as f64).collect()
            }
            Axis::Geometric { start, stop, count } => crate::laws::log_grid(*start, *stop, *count)?,
        };
        if v.is_empty() {
            return Err(Error::invalid("empty axis"));
        }
        if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::invalid("axis values must be positive and finite"));
        }
        if v.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("axis values must be strictly increasing"));
        }
        Ok(v)
    }

    /// Values rounded to integers with duplicates dropped.
    pub fn batch_sizes(&self) -> Result<Vec<usize>> {
        let mut out: Vec<usize> = Vec::new();
        for v in self.values()? {
            let b = v.round().max(1.0) as usize;
            if out.last() != Some(&b) {
                out.push(b);
            }
        }
        Ok(out)
    }
}

/// Which cells share gradient-noise draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSharing {
    /// Every (B, lr, round) cell has its own stream.
    #[default]
    PerCell,
    /// Cells differing only in lr replay the same draws.
    AcrossLr,
    /// Every cell of a round replays the same draws.
    AcrossRound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Path of the workload file, if not given separately.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<String>,
    pub optimizer: OptimizerConfig,
    pub batch_sizes: Axis,
    pub lrs: Axis,
    pub rounds: usize,
    pub target_loss: f64,
    #[serde(default = "default_extra_steps")]
    pub extra_steps: usize,
    pub max_steps: usize,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub noise: NoiseSharing,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_extra_steps() -> usize {
    50
}

/// A grid with its axes expanded.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedGrid {
    pub batch_sizes: Vec<usize>,
    pub lrs: Vec<f64>,
    pub rounds: usize,
    pub run: RunSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub optimizer: OptimizerConfig,
    pub init: InitSpec,
    pub target_loss: f64,
    pub extra_steps: usize,
    pub max_steps: usize,
    pub noise: NoiseSharing,
}

impl GridConfig {
    pub fn resolve(&self) -> Result<ResolvedGrid> {
        if self.rounds == 0 {
            return Err(Error::invalid("rounds must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be positive"));
        }
        if !self.target_loss.is_finite() {
            return Err(Error::invalid("target_loss must be finite"));
        }
        let lrs = self.lrs.values()?;
        for lr in &lrs {
            self.optimizer.with_lr(*lr).validate()?;
        }
        Ok(ResolvedGrid {
            batch_sizes: self.batch_sizes.batch_sizes()?,
            lrs,
            rounds: self.rounds,
            run: RunSettings {
                optimizer: self.optimizer,
                init: self.init.clone(),
                target_loss: self.target_loss,
                extra_steps: self.extra_steps,
                max_steps: self.max_steps,
                noise: self.noise,
            },
        })
    }
}

impl ResolvedGrid {
    pub fn n_cells(&self) -> usize {
        self.batch_sizes.len() * self.lrs.len() * self.rounds
    }

    /// (B, lr, round) of cell `k`; B-major, then lr, then round.
    pub fn cell(&self, k: usize) -> (usize, f64, usize) {
        let per_b = self.lrs.len() * self.rounds;
        let b = self.batch_sizes[k / per_b];
        let rem = k % per_b;
        (b, self.lrs[rem / self.rounds], rem % self.rounds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub converged: bool,
    /// Steps to first reach the target.
    pub steps: Option<u64>,
    /// Loss after `extra_steps` more steps; +∞ when the run diverged.
    pub final_loss: Option<f64>,
}

impl RunRecord {
    /// E = S·B
    pub fn examples(&self) -> Option<u64> {
        self.steps.map(|s| s * self.batch_size as u64)
    }

    pub fn diverged(&self) -> bool {
        self.final_loss == Some(f64::INFINITY)
    }
}

/// Seed of round `round` under a master seed; shared by every cell of the
/// round so all cells start from the same θ₀.
pub fn round_seed(master: u64, round: usize) -> u64 {
    derive_seed(master, &[tag("round"), round as u64])
}

/// One training run. θ₀ depends only on `seed`; the gradient noise on `seed`,
/// B and (unless shared) lr.
pub fn run_training(
    workload: &dyn Workload,
    settings: &RunSettings,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<RunRecord> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut stepper = Stepper::new(settings.optimizer.with_lr(lr), workload.dim())?;
    let mut init_rng = stream(seed, &[tag("init")]);
    let mut theta = workload.initial_theta(&settings.init, settings.target_loss, &mut init_rng)?;
    let noise_path = match settings.noise {
        NoiseSharing::PerCell => vec![tag("noise"), batch_size as u64, lr.to_bits()],
        NoiseSharing::AcrossLr => vec![tag("noise"), batch_size as u64],
        NoiseSharing::AcrossRound => vec![tag("noise")],
    };
    let mut rng = stream(seed, &noise_path);
    let threshold = settings.target_loss + TARGET_RTOL * settings.target_loss.abs();

    let mut record = RunRecord {
        batch_size,
        lr,
        seed,
        converged: false,
        steps: None,
        final_loss: None,
    };
    let diverged = |mut r: RunRecord| {
        r.final_loss = Some(f64::INFINITY);
        r
    };

    let mut loss = workload.loss(&theta)?;
    let mut t: u64 = 0;
    loop {
        if !loss.is_finite() {
            return Ok(diverged(record));
        }
        if loss <= threshold {
            break;
        }
        if t >= settings.max_steps as u64 {
            return Ok(record);
        }
        let g = workload.sample_batch_gradient(&theta, batch_size, &mut rng)?;
        stepper.step(&mut theta, &g)?;
        t += 1;
        loss = workload.loss(&theta)?;
    }
    record.converged = true;
    record.steps = Some(t);
    for _ in 0..settings.extra_steps {
        let g = workload.sample_batch_gradient(&theta, batch_size, &mut rng)?;
        stepper.step(&mut theta, &g)?;
    }
    let final_loss = workload.loss(&theta)?;
    if !final_loss.is_finite() {
        return Ok(diverged(record));
    }
    record.final_loss = Some(final_loss);
    Ok(record)
}

/// A cell whose run returned an error; its record is left unconverged.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub cell: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutput {
    /// One record per cell, in cell order.
    pub records: Vec<RunRecord>,
    pub failures: Vec<CellFailure>,
}

/// Runs every cell of the grid on up to `jobs` threads. The output does not
/// depend on `jobs`.
pub fn grid_search(
    workload: &dyn Workload,
    grid: &ResolvedGrid,
    master_seed: u64,
    jobs: usize,
) -> GridOutput {
    let n = grid.n_cells();
    let run_cell = |k: usize| {
        let (b, lr, round) = grid.cell(k);
        let seed = round_seed(master_seed, round);
        run_training(workload, &grid.run, b, lr, seed).map_err(|e| {
            (
                RunRecord {
                    batch_size: b,
                    lr,
                    seed,
                    converged: false,
                    steps: None,
                    final_loss: None,
                },
                e.to_string(),
            )
        })
    };

    let jobs = jobs.clamp(1, n.max(1));
    let mut slots: Vec<Option<std::result::Result<RunRecord, (RunRecord, String)>>> = vec![None; n];
    if jobs == 1 {
        for (k, slot) in slots.iter_mut().enumerate() {
            *slot = Some(run_cell(k));
        }
    } else {
        let next = AtomicUsize::new(0);
        let done = Mutex::new(&mut slots);
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    if k >= n {
                        break;
                    }
                    let r = run_cell(k);
                    done.lock().expect("no panics while holding the lock")[k] = Some(r);
                });
            }
        });
    }

    let mut records = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for (cell, slot) in slots.into_iter().enumerate() {
        match slot.expect("every cell ran") {
            Ok(r) => records.push(r),
            Err((r, message)) => {
                records.push(r);
                failures.push(CellFailure { cell, message });
            }
        }
    }
    GridOutput { records, failures }
}

/// Records grouped by batch size, then by lr (ordered by value).
fn by_lr(records: &[RunRecord], batch_size: usize) -> BTreeMap<u64, Vec<&RunRecord>> {
    let mut m: BTreeMap<u64, Vec<&RunRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.batch_size == batch_size) {
        // positive floats order like their bit patterns
        m.entry(r.lr.to_bits()).or_default().push(r);
    }
    m
}

/// The lr with the smallest mean final loss at `batch_size`, over lrs whose
/// runs all converged; ties go to the smaller lr.
pub fn empirical_optimal_lr(records: &[RunRecord], batch_size: usize) -> Result<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for (bits, runs) in by_lr(records, batch_size) {
        if !runs
            .iter()
            .all(|r| r.converged && r.final_loss.is_some_and(f64::is_finite))
        {
            continue;
        }
        let mean = runs
            .iter()
            .map(|r| r.final_loss.unwrap_or(f64::NAN))
            .sum::<f64>()
            / runs.len() as f64;
        if best.is_none_or(|(_, m)| mean < m) {
            best = Some((f64::from_bits(bits), mean));
        }
    }
    best.ok_or_else(|| {
        Error::NotFound(format!(
            "no fully converged learning rate at batch size {batch_size}"
        ))
    })
}

/// Batch sizes present in `records`, ascending.
pub fn batch_sizes(records: &[RunRecord]) -> Vec<usize> {
    let mut b: Vec<usize> = records.iter().map(|r| r.batch_size).collect();
    b.sort_unstable();
    b.dedup();
    b
}

/// Steps and examples at the empirical optimal lr of one batch size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SePoint {
    pub batch_size: usize,
    pub lr: f64,
    /// Seed-median S.
    pub steps: f64,
    pub examples: f64,
}

impl SePoint {
    /// (1/E, 1/S)
    pub fn inverse(&self) -> (f64, f64) {
        (1.0 / self.examples, 1.0 / self.steps)
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One point per batch size that has an optimal lr; batch sizes without one
/// are skipped. Errors when no batch size qualifies.
pub fn extract_se_points(records: &[RunRecord]) -> Result<Vec<SePoint>> {
    let mut out = Vec::new();
    for b in batch_sizes(records) {
        let Ok((lr, _)) = empirical_optimal_lr(records, b) else {
            continue;
        };
        let mut s: Vec<f64> = records
            .iter()
            .filter(|r| r.batch_size == b && r.lr == lr)
            .filter_map(|r| r.steps.map(|s| s as f64))
            .collect();
        let steps = median(&mut s);
        if steps <= 0.0 {
            continue;
        }
        out.push(SePoint {
            batch_size: b,
            lr,
            steps,
            examples: steps * b as f64,
        });
    }
    if out.is_empty() {
        return Err(Error::NotFound(
            "no batch size has a converged optimal learning rate".into(),
        ));
    }
    Ok(out)
}

/// (B, optimal lr) for every batch size that has one.
pub fn optimal_lr_pairs(records: &[RunRecord]) -> Vec<(f64, f64)> {
    batch_sizes(records)
        .into_iter()
        .filter_map(|b| {
            empirical_optimal_lr(records, b)
                .ok()
                .map(|(lr, _)| (b as f64, lr))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HessianSpec, QuadraticWorkload};

    fn settings(
        optimizer: OptimizerConfig,
        init: InitSpec,
        target: f64,
        max_steps: usize,
    ) -> RunSettings {
        RunSettings {
            optimizer,
            init,
            target_loss: target,
            extra_steps: 0,
            max_steps,
            noise: NoiseSharing::PerCell,
        }
    }

    fn rec(b: usize, lr: f64, steps: Option<u64>, final_loss: Option<f64>) -> RunRecord {
        RunRecord {
            batch_size: b,
            lr,
            seed: 0,
            converged: steps.is_some(),
            steps,
            final_loss,
        }
    }

    #[test]
    fn hand_simulated_sign_run() {
        let q = QuadraticWorkload::centered(HessianSpec::identity(1), vec![0.0]).unwrap();
        let s = settings(
            OptimizerConfig::sign(0.1),
            InitSpec::Point { theta: vec![1.0] },
            0.125,
            100,
        );
        let r = run_training(&q, &s, 1, 0.1, 7).unwrap();
        assert!(r.converged);
        assert_eq!(r.steps, Some(5));
        assert_eq!(r.examples(), Some(5));
    }

    #[test]
    fn oscillating_run_does_not_converge() {
        let q = QuadraticWorkload::centered(HessianSpec::identity(1), vec![0.0]).unwrap();
        // iterates alternate between 1 and −1
        let s = settings(
            OptimizerConfig::sign(2.0),
            InitSpec::Point { theta: vec![1.0] },
            0.01,
            200,
        );
        let r = run_training(&q, &s, 4, 2.0, 1).unwrap();
        assert!(!r.converged);
        assert_eq!((r.steps, r.final_loss), (None, None));
    }

    #[test]
    fn sgd_blowup_is_marked_diverged() {
        let q = QuadraticWorkload::centered(HessianSpec::identity(2), vec![1.0, 1.0]).unwrap();
        let s = settings(
            OptimizerConfig::sgd(1e3),
            InitSpec::Aligned { loss_ratio: 10.0 },
            0.01,
            10_000,
        );
        let r = run_training(&q, &s, 1, 1e3, 1).unwrap();
        assert!(!r.converged && r.diverged());
    }

    #[test]
    fn runs_are_reproducible() {
        let q =
            QuadraticWorkload::centered(HessianSpec::uniform(1.0, 0.1, 8).unwrap(), vec![1.0; 8])
                .unwrap();
        let s = RunSettings {
            extra_steps: 20,
            ..settings(
                OptimizerConfig::sign(0.05),
                InitSpec::Gaussian { loss_ratio: 10.0 },
                0.05,
                5000,
            )
        };
        let a = run_training(&q, &s, 16, 0.05, 99).unwrap();
        let b = run_training(&q, &s, 16, 0.05, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.final_loss.unwrap().to_bits(),
            b.final_loss.unwrap().to_bits()
        );
    }

    fn small_grid(lrs: Vec<f64>) -> GridConfig {
        GridConfig {
            workload: None,
            optimizer: OptimizerConfig::sign(0.1),
            batch_sizes: Axis::List(vec![2.0, 8.0, 32.0]),
            lrs: Axis::List(lrs),
            rounds: 2,
            target_loss: 0.05,
            extra_steps: 10,
            max_steps: 2000,
            init: InitSpec::Aligned { loss_ratio: 10.0 },
            noise: NoiseSharing::PerCell,
            seed: None,
        }
    }

    #[test]
    fn grid_cardinality_order_and_parallel_determinism() {
        let q =
            QuadraticWorkload::centered(HessianSpec::uniform(1.0, 0.1, 8).unwrap(), vec![1.0; 8])
                .unwrap();
        let g = small_grid(vec![0.01, 0.02, 0.04, 0.08]).resolve().unwrap();
        let serial = grid_search(&q, &g, 3, 1);
        assert_eq!(serial.records.len(), 24);
        assert!(serial.failures.is_empty());
        assert_eq!(
            (serial.records[0].batch_size, serial.records[0].lr),
            (2, 0.01)
        );
        assert_eq!(
            (serial.records[23].batch_size, serial.records[23].lr),
            (32, 0.08)
        );
        assert_eq!(serial.records[0].seed, serial.records[2].seed);
        assert_ne!(serial.records[0].seed, serial.records[1].seed);
        let parallel = grid_search(&q, &g, 3, 4);
        assert_eq!(serial, parallel);
    }

    #[test]
    fn absurd_lr_column_never_converges() {
        let q =
            QuadraticWorkload::centered(HessianSpec::uniform(1.0, 0.1, 8).unwrap(), vec![1.0; 8])
                .unwrap();
        let mut cfg = small_grid(vec![1e3]);
        cfg.max_steps = 50;
        let out = grid_search(&q, &cfg.resolve().unwrap(), 1, 2);
        assert_eq!(out.records.len(), 6);
        assert!(out.records.iter().all(|r| !r.converged));
        assert!(empirical_optimal_lr(&out.records, 2).is_err());
        assert!(extract_se_points(&out.records).is_err());
    }

    #[test]
    fn axes() {
        let lin = Axis::Linear {
            start: 0.1,
            stop: 0.5,
            step: 0.1,
        };
        assert_eq!(lin.values().unwrap().len(), 5);
        let geo = Axis::Geometric {
            start: 4.0,
            stop: 512.0,
            count: 8,
        };
        assert_eq!(
            geo.batch_sizes().unwrap(),
            vec![4, 8, 16, 32, 64, 128, 256, 512]
        );
        let dense = Axis::Geometric {
            start: 1.0,
            stop: 4.0,
            count: 10,
        };
        assert_eq!(dense.batch_sizes().unwrap(), vec![1, 2, 3, 4]);
        assert!(Axis::List(vec![]).values().is_err());
        assert!(Axis::List(vec![2.0, 1.0]).values().is_err());
        assert!(Axis::List(vec![-1.0]).values().is_err());
        let cfg: GridConfig = serde_json::from_str(
            r#"{"optimizer":{"kind":"sign"},"batch_sizes":[4,8],"lrs":{"start":0.01,"stop":0.1,"count":4},
                "rounds":2,"target_loss":0.1,"max_steps":100}"#,
        )
        .unwrap();
        assert_eq!(cfg.extra_steps, 50);
        assert_eq!(cfg.resolve().unwrap().n_cells(), 16);
    }

    #[test]
    fn optimal_lr_selection() {
        let recs = vec![rec(4, 0.1, Some(10), Some(0.5))];
        assert_eq!(empirical_optimal_lr(&recs, 4).unwrap(), (0.1, 0.5));
        assert!(matches!(
            empirical_optimal_lr(&recs, 8),
            Err(Error::NotFound(_))
        ));

        let recs = vec![
            rec(4, 0.2, Some(10), Some(0.5)),
            rec(4, 0.1, Some(12), Some(0.5)),
            rec(4, 0.3, Some(9), Some(0.7)),
        ];
        assert_eq!(empirical_optimal_lr(&recs, 4).unwrap().0, 0.1);

        // a partly unconverged lr is not a candidate
        let recs = vec![
            rec(4, 0.1, Some(12), Some(0.6)),
            rec(4, 0.2, Some(10), Some(0.1)),
            rec(4, 0.2, None, None),
        ];
        assert_eq!(empirical_optimal_lr(&recs, 4).unwrap().0, 0.1);
    }

    #[test]
    fn se_points_from_synthetic_records() {
        let (s_min, bn) = (100.0, 50.0);
        let recs: Vec<RunRecord> = [5usize, 10, 50, 200]
            .iter()
            .map(|&b| {
                let s = (s_min * (1.0 + bn / b as f64)).round() as u64;
                rec(b, 0.1, Some(s), Some(0.01))
            })
            .collect();
        let pts = extract_se_points(&recs).unwrap();
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[0].steps, 1100.0);
        assert_eq!(pts[0].examples, 5500.0);
        let single = extract_se_points(&recs[..1]).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(median(&mut [3.0, 1.0, 2.0, 10.0]), 2.5);
    }
}
