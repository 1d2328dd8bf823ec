//! Driving martingales `Y` and the greedy time segmentation that keeps each
//! segment's activity below a threshold.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DriverError {
    #[error("invalid driver config: {0}")]
    Invalid(String),
    #[error("step {step} alone has activity {activity} > a = {a}; use more steps or a larger a")]
    StepTooActive { step: usize, activity: f64, a: f64 },
    #[error("jump size {beta} with eps_dblprime {eps} and d = {d} violates beta*eps*d <= 1 - margin ({margin})")]
    JumpTooLarge { beta: f64, eps: f64, d: usize, margin: f64 },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    #[default]
    Brownian,
    /// Compensated Poisson: jumps of size `beta` at rate `lambda`, drift `−lambda·beta`.
    Cpoisson,
    /// Brownian plus compensated Poisson on every component.
    Mixed,
}

impl DriverKind {
    pub fn has_diffusion(self) -> bool {
        matches!(self, DriverKind::Brownian | DriverKind::Mixed)
    }

    pub fn has_jumps(self) -> bool {
        matches!(self, DriverKind::Cpoisson | DriverKind::Mixed)
    }
}

fn default_steps() -> usize {
    1000
}

fn default_horizon() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverConfig {
    #[serde(default)]
    pub kind: DriverKind,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            kind: DriverKind::Brownian,
            lambda: 0.0,
            beta: 0.0,
            steps: default_steps(),
            horizon: default_horizon(),
            seed: 0,
        }
    }
}

impl DriverConfig {
    pub fn brownian(steps: usize, horizon: f64, seed: u64) -> Self {
        Self { kind: DriverKind::Brownian, steps, horizon, seed, ..Self::default() }
    }

    pub fn cpoisson(lambda: f64, beta: f64, steps: usize, horizon: f64, seed: u64) -> Self {
        Self { kind: DriverKind::Cpoisson, lambda, beta, steps, horizon, seed }
    }

    pub fn mixed(lambda: f64, beta: f64, steps: usize, horizon: f64, seed: u64) -> Self {
        Self { kind: DriverKind::Mixed, lambda, beta, steps, horizon, seed }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        if self.steps == 0 {
            return Err(DriverError::Invalid("steps must be at least 1".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(DriverError::Invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.kind.has_jumps() {
            if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
                return Err(DriverError::Invalid(format!("lambda must be >= 0, got {}", self.lambda)));
            }
            if !self.beta.is_finite() {
                return Err(DriverError::Invalid("beta must be finite".into()));
            }
        }
        Ok(())
    }

    /// Fixed jumps must satisfy `|β| ε″ d ≤ 1 − δ` so condition I holds without scaling.
    pub fn check_jump_size(&self, eps_dblprime: f64, d: usize, margin: f64) -> Result<(), DriverError> {
        if self.kind.has_jumps() && self.lambda > 0.0 && self.beta.abs() * eps_dblprime * d as f64 > 1.0 - margin {
            return Err(DriverError::JumpTooLarge { beta: self.beta, eps: eps_dblprime, d, margin });
        }
        Ok(())
    }

    /// Generator for path `index`: a ChaCha stream keyed by the seed and the index,
    /// so paths do not depend on which thread produced them.
    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// Samples path `index` of a `d`-dimensional driver.
    pub fn sample(&self, d: usize, index: u64) -> Result<DriverPath, DriverError> {
        self.validate()?;
        if d == 0 {
            return Err(DriverError::Invalid("driver dimension must be positive".into()));
        }
        let mut rng = self.rng(index);
        let n = self.steps;
        let h = self.dt();

        let mut jump_times: Vec<(f64, usize)> = Vec::new();
        if self.kind.has_jumps() && self.lambda > 0.0 {
            let exp = Exp::new(self.lambda).map_err(|e| DriverError::Invalid(e.to_string()))?;
            for e in 0..d {
                let mut t = 0.0;
                loop {
                    t += rng.sample::<f64, _>(exp);
                    if t >= self.horizon {
                        break;
                    }
                    jump_times.push((t, e));
                }
            }
            jump_times.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }

        // merge base grid with jump times; base points keep their index
        let mut times = vec![0.0];
        let mut base = vec![Some(0usize)];
        let mut jump_at: Vec<Vec<usize>> = vec![Vec::new()];
        let mut next_jump = 0;
        for k in 1..=n {
            let tk = if k == n { self.horizon } else { k as f64 * h };
            while next_jump < jump_times.len() && jump_times[next_jump].0 <= tk {
                let (tj, e) = jump_times[next_jump];
                let last = *times.last().expect("grid is never empty");
                if tj - last <= 1e-12 * self.horizon && times.len() > 1 {
                    jump_at.last_mut().expect("grid is never empty").push(e);
                } else if tk - tj <= 1e-12 * self.horizon {
                    // lands on the base point; attach below
                    break;
                } else {
                    times.push(tj);
                    base.push(None);
                    jump_at.push(vec![e]);
                }
                next_jump += 1;
            }
            times.push(tk);
            base.push(Some(k));
            let mut here = Vec::new();
            while next_jump < jump_times.len() && (tk - jump_times[next_jump].0).abs() <= 1e-12 * self.horizon {
                here.push(jump_times[next_jump].1);
                next_jump += 1;
            }
            jump_at.push(here);
        }

        let steps = times.len() - 1;
        let mut continuous = vec![0.0; steps * d];
        let mut jumps = vec![0.0; steps * d];
        let mut qv = vec![0.0; steps * d];
        let mut has_jump = vec![false; steps];
        let drift = if self.kind.has_jumps() { -self.lambda * self.beta } else { 0.0 };
        for i in 0..steps {
            let dt = times[i + 1] - times[i];
            for e in 0..d {
                let mut c = drift * dt;
                if self.kind.has_diffusion() {
                    let z: f64 = rng.sample(StandardNormal);
                    c += dt.sqrt() * z;
                    qv[i * d + e] = dt;
                }
                continuous[i * d + e] = c;
            }
            for &e in &jump_at[i + 1] {
                jumps[i * d + e] += self.beta;
                has_jump[i] = true;
            }
        }
        Ok(DriverPath { times, base, d, continuous, jumps, qv, has_jump, kind: self.kind })
    }
}

/// One realized driver path on a grid containing all jump times.
///
/// Step `i` runs from `times[i]` to `times[i + 1]`; its continuous increment
/// comes first and a jump, if any, happens at `times[i + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverPath {
    times: Vec<f64>,
    base: Vec<Option<usize>>,
    d: usize,
    continuous: Vec<f64>,
    jumps: Vec<f64>,
    qv: Vec<f64>,
    has_jump: Vec<bool>,
    kind: DriverKind,
}

impl DriverPath {
    /// Path with zero increments on a uniform grid.
    pub fn zero(d: usize, steps: usize, horizon: f64) -> Self {
        let times = (0..=steps).map(|k| if k == steps { horizon } else { k as f64 * horizon / steps as f64 }).collect();
        Self {
            times,
            base: (0..=steps).map(Some).collect(),
            d,
            continuous: vec![0.0; steps * d],
            jumps: vec![0.0; steps * d],
            qv: vec![0.0; steps * d],
            has_jump: vec![false; steps],
            kind: DriverKind::Brownian,
        }
    }

    /// Builds a path from explicit per-step increments on the given grid.
    pub fn from_increments(
        times: Vec<f64>,
        d: usize,
        continuous: Vec<f64>,
        jumps: Vec<f64>,
        qv: Vec<f64>,
        kind: DriverKind,
    ) -> Result<Self, DriverError> {
        let steps = times.len().saturating_sub(1);
        if steps == 0 || times.windows(2).any(|w| !(w[1] > w[0])) || times[0] != 0.0 {
            return Err(DriverError::Invalid("times must start at 0 and increase strictly".into()));
        }
        for (name, v) in [("continuous", &continuous), ("jumps", &jumps), ("qv", &qv)] {
            if v.len() != steps * d {
                return Err(DriverError::Invalid(format!("{name} needs {} entries, got {}", steps * d, v.len())));
            }
        }
        let has_jump = jumps.chunks_exact(d).map(|r| r.iter().any(|&j| j != 0.0)).collect();
        Ok(Self { base: (0..=steps).map(Some).collect(), times, d, continuous, jumps, qv, has_jump, kind })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> DriverKind {
        self.kind
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("grid is never empty")
    }

    pub fn continuous(&self, step: usize) -> &[f64] {
        &self.continuous[step * self.d..(step + 1) * self.d]
    }

    pub fn jump(&self, step: usize) -> Option<&[f64]> {
        self.has_jump[step].then(|| &self.jumps[step * self.d..(step + 1) * self.d])
    }

    /// Quadratic variation of the continuous part over the step, per component.
    pub fn qv(&self, step: usize) -> &[f64] {
        &self.qv[step * self.d..(step + 1) * self.d]
    }

    /// Grid indices reached right after a jump.
    pub fn jump_points(&self) -> Vec<usize> {
        (0..self.steps()).filter(|&i| self.has_jump[i]).map(|i| i + 1).collect()
    }

    pub fn jump_count(&self) -> usize {
        self.has_jump.iter().filter(|&&j| j).count()
    }

    /// `Y` at every grid time.
    pub fn values(&self) -> Vec<Vec<f64>> {
        let mut y = vec![0.0; self.d];
        let mut out = vec![y.clone()];
        for i in 0..self.steps() {
            for e in 0..self.d {
                y[e] += self.continuous[i * self.d + e] + self.jumps[i * self.d + e];
            }
            out.push(y.clone());
        }
        out
    }

    /// `Y` at the horizon.
    pub fn terminal(&self) -> Vec<f64> {
        self.values().pop().expect("grid is never empty")
    }

    /// Coarser path keeping base points whose index is a multiple of `factor`,
    /// all jump points and the horizon; increments are summed.
    pub fn coarsen(&self, factor: usize) -> Result<DriverPath, DriverError> {
        if factor == 0 {
            return Err(DriverError::Invalid("coarsening factor must be positive".into()));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let d = self.d;
        let last = self.steps();
        let keep = |i: usize| -> bool {
            i == 0 || i == last || self.has_jump[i - 1] || self.base[i].is_some_and(|k| k % factor == 0)
        };
        let mut times = vec![0.0];
        let mut base = vec![Some(0)];
        let mut continuous = Vec::new();
        let mut jumps = Vec::new();
        let mut qv = Vec::new();
        let mut has_jump = Vec::new();
        let mut acc_c = vec![0.0; d];
        let mut acc_q = vec![0.0; d];
        for i in 0..last {
            for e in 0..d {
                acc_c[e] += self.continuous[i * d + e];
                acc_q[e] += self.qv[i * d + e];
            }
            if keep(i + 1) {
                times.push(self.times[i + 1]);
                base.push(self.base[i + 1].map(|k| k / factor));
                continuous.extend_from_slice(&acc_c);
                qv.extend_from_slice(&acc_q);
                jumps.extend_from_slice(&self.jumps[i * d..(i + 1) * d]);
                has_jump.push(self.has_jump[i]);
                acc_c.iter_mut().for_each(|v| *v = 0.0);
                acc_q.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(DriverPath { times, base, d, continuous, jumps, qv, has_jump, kind: self.kind })
    }

    /// Writes `t, Y_1, …, Y_d` per grid time.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DriverError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.d).map(|e| format!("y{e}")));
        w.write_record(&header).map_err(|e| DriverError::Io(e.to_string()))?;
        for (t, y) in self.times.iter().zip(self.values()) {
            let mut row = vec![t.to_string()];
            row.extend(y.iter().map(f64::to_string));
            w.write_record(&row).map_err(|e| DriverError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| DriverError::Io(e.to_string()))
    }

    /// Greedy split of `[0, horizon]` into segments of activity at most `a`.
    ///
    /// Per component the activity of a run of continuous increments is
    /// `sqrt(Σ c²) + max |c|`; a segment closes before the step that would push
    /// any component above `a`. A jump closes the segment at its time and the
    /// next segment starts fresh, so no segment contains the jump at its right end.
    pub fn segment(&self, a: f64) -> Result<Segmentation, DriverError> {
        if !(a > 0.0) {
            return Err(DriverError::Invalid(format!("activity bound must be positive, got {a}")));
        }
        let d = self.d;
        let mut indices = vec![0];
        let mut sq = vec![0.0; d];
        let mut mx = vec![0.0f64; d];
        for i in 0..self.steps() {
            let inc = self.continuous(i);
            let single = inc.iter().map(|c| 2.0 * c.abs()).fold(0.0, f64::max);
            if single > a {
                return Err(DriverError::StepTooActive { step: i, activity: single, a });
            }
            let over = (0..d).any(|e| {
                let s = sq[e] + inc[e] * inc[e];
                s.sqrt() + mx[e].max(inc[e].abs()) > a
            });
            if over {
                indices.push(i);
                sq.iter_mut().for_each(|v| *v = 0.0);
                mx.iter_mut().for_each(|v| *v = 0.0);
            }
            for e in 0..d {
                sq[e] += inc[e] * inc[e];
                mx[e] = mx[e].max(inc[e].abs());
            }
            if self.has_jump[i] && i + 1 < self.steps() {
                indices.push(i + 1);
                sq.iter_mut().for_each(|v| *v = 0.0);
                mx.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        indices.push(self.steps());
        indices.dedup();
        let breakpoints = indices.iter().map(|&i| self.times[i]).collect();
        Ok(Segmentation { indices, breakpoints, a })
    }
}

/// Segment boundaries `0 = R_0 < … < R_q = horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    /// Grid indices of the breakpoints.
    pub indices: Vec<usize>,
    pub breakpoints: Vec<f64>,
    pub a: f64,
}

impl Segmentation {
    pub fn segments(&self) -> usize {
        self.indices.len() - 1
    }

    /// Activity of the continuous increments in `[R_s, R_{s+1})`, maximised over components.
    pub fn activity(&self, path: &DriverPath, segment: usize) -> f64 {
        let d = path.d();
        (0..d)
            .map(|e| {
                let incs: Vec<f64> =
                    (self.indices[segment]..self.indices[segment + 1]).map(|i| path.continuous(i)[e]).collect();
                incs.iter().map(|c| c * c).sum::<f64>().sqrt() + incs.iter().map(|c| c.abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn same_seed_same_path() {
        let cfg = DriverConfig::mixed(2.0, 0.3, 200, 1.0, 42);
        assert_eq!(cfg.sample(2, 7).unwrap(), cfg.sample(2, 7).unwrap());
        assert_ne!(cfg.sample(2, 7).unwrap(), cfg.sample(2, 8).unwrap());
    }

    #[test]
    fn zero_intensity_gives_zero_path() {
        let p = DriverConfig::cpoisson(0.0, 0.5, 10, 1.0, 1).sample(1, 0).unwrap();
        assert!(p.values().iter().all(|y| y[0] == 0.0));
    }

    #[test]
    fn jump_times_are_grid_points() {
        let p = DriverConfig::cpoisson(5.0, 0.2, 20, 1.0, 3).sample(2, 1).unwrap();
        assert!(p.jump_count() > 0);
        let y = p.values();
        for i in p.jump_points() {
            let jump = p.jump(i - 1).unwrap();
            let cont = p.continuous(i - 1);
            for e in 0..2 {
                assert!((y[i][e] - y[i - 1][e] - cont[e] - jump[e]).abs() < 1e-15);
            }
        }
        assert!(p.times().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn compensator_matches_horizon() {
        let p = DriverConfig::cpoisson(2.0, 0.5, 50, 2.0, 9).sample(1, 0).unwrap();
        let y = p.terminal()[0];
        let n = p.jump_count() as f64;
        assert!((y - (0.5 * n - 2.0 * 0.5 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_path_is_one_segment() {
        let s = DriverPath::zero(1, 100, 1.0).segment(0.1).unwrap();
        assert_eq!(s.breakpoints, vec![0.0, 1.0]);
    }

    #[test]
    fn jump_of_size_a_breaks_at_jump_time() {
        let times: Vec<f64> = (0..=4).map(|k| k as f64 / 4.0).collect();
        let mut jumps = vec![0.0; 4];
        jumps[1] = 0.3;
        let p = DriverPath::from_increments(times, 1, vec![0.0; 4], jumps, vec![0.0; 4], DriverKind::Cpoisson).unwrap();
        let s = p.segment(0.3).unwrap();
        assert_eq!(s.breakpoints, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn over_active_step_is_an_error() {
        let p = DriverPath::from_increments(vec![0.0, 1.0], 1, vec![0.5], vec![0.0], vec![1.0], DriverKind::Brownian)
            .unwrap();
        assert!(matches!(p.segment(0.5), Err(DriverError::StepTooActive { .. })));
    }

    #[test]
    fn brownian_segment_count_scales_like_inverse_square() {
        let cfg = DriverConfig::brownian(20_000, 4.0, 5);
        let p = cfg.sample(1, 0).unwrap();
        let n1 = p.segment(0.4).unwrap().segments() as f64;
        let n2 = p.segment(0.2).unwrap().segments() as f64;
        assert!((n2 / n1 - 4.0).abs() < 1.2, "{n1} {n2}");
    }

    #[test]
    fn jump_size_rule() {
        let cfg = DriverConfig::cpoisson(1.0, 0.5, 10, 1.0, 0);
        assert!(cfg.check_jump_size(0.2, 2, 0.1).is_ok());
        assert!(cfg.check_jump_size(1.0, 2, 0.1).is_err());
    }

    #[test]
    fn coarsening_preserves_terminal_value_and_jumps() {
        let fine = DriverConfig::mixed(3.0, 0.2, 64, 1.0, 11).sample(2, 4).unwrap();
        for f in [2, 4, 8] {
            let c = fine.coarsen(f).unwrap();
            assert_eq!(c.jump_count(), fine.jump_count());
            for (a, b) in c.terminal().iter().zip(fine.terminal()) {
                assert!((a - b).abs() < 1e-12);
            }
            let qv_f: f64 = (0..fine.steps()).map(|i| fine.qv(i)[0]).sum();
            let qv_c: f64 = (0..c.steps()).map(|i| c.qv(i)[0]).sum();
            assert!((qv_f - qv_c).abs() < 1e-12);
        }
        let c2 = fine.coarsen(2).unwrap();
        assert_eq!(c2.steps() - c2.jump_count(), 32);
    }

    proptest! {
        #[test]
        fn segmentation_covers_and_bounds(seed in 0u64..500, a in 0.3f64..1.5) {
            let p = DriverConfig::mixed(2.0, 0.3, 2000, 1.0, seed).sample(2, 0).unwrap();
            let s = p.segment(a).unwrap();
            prop_assert_eq!(s.breakpoints[0], 0.0);
            prop_assert_eq!(*s.breakpoints.last().unwrap(), 1.0);
            prop_assert!(s.indices.windows(2).all(|w| w[1] > w[0]));
            for seg in 0..s.segments() {
                prop_assert!(s.activity(&p, seg) <= a + 1e-12);
            }
            for j in p.jump_points() {
                prop_assert!(j == p.steps() || s.indices.contains(&j));
            }
        }
    }
}
