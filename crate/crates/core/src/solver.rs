//! First-order (Euler) and second-order Taylor ("RF2") integration of the
//! rectified-flow ODE `dz/dt = v(z, t)`.
//!
//! Time runs from 1 (noise) to 0 (data) when sampling and from 0 to 1 when
//! inverting; both directions use the same update formulas on a uniform grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::velocity::AnalyticField;

/// Anything that can evaluate a velocity field at `(z, t)`.
pub trait VelocityFn {
    fn eval(&mut self, z: &Tensor, t: f32) -> Result<Tensor>;
}

impl<F> VelocityFn for F
where
    F: FnMut(&Tensor, f32) -> Result<Tensor>,
{
    fn eval(&mut self, z: &Tensor, t: f32) -> Result<Tensor> {
        self(z, t)
    }
}

impl VelocityFn for AnalyticField {
    fn eval(&mut self, z: &Tensor, t: f32) -> Result<Tensor> {
        Ok(self.velocity(z, t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverOrder {
    Euler,
    Rf2,
}

impl SolverOrder {
    /// Velocity evaluations per step.
    pub fn evals_per_step(self) -> usize {
        match self {
            SolverOrder::Euler => 1,
            SolverOrder::Rf2 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// t: 1 → 0
    Sample,
    /// t: 0 → 1
    Invert,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSchedule {
    timesteps: Vec<f32>,
    pub order: SolverOrder,
    pub direction: Direction,
}

impl SolverSchedule {
    pub fn timesteps(&self) -> &[f32] {
        &self.timesteps
    }

    pub fn num_steps(&self) -> usize {
        self.timesteps.len() - 1
    }

    /// `(t_i, t_{i+1})` for every step.
    pub fn steps(&self) -> impl Iterator<Item = (f32, f32)> + '_ {
        self.timesteps.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn with_order(mut self, order: SolverOrder) -> Self {
        self.order = order;
        self
    }
}

/// Uniform grid: `t_i = 1 - i/n` when sampling, `t_i = i/n` when inverting.
pub fn make_schedule(n: usize, direction: Direction, order: SolverOrder) -> Result<SolverSchedule> {
    if n == 0 {
        return Err(Error::config("a schedule needs at least one step"));
    }
    let timesteps = (0..=n)
        .map(|i| {
            let frac = i as f64 / n as f64;
            match direction {
                Direction::Sample => (1.0 - frac) as f32,
                Direction::Invert => frac as f32,
            }
        })
        .collect();
    Ok(SolverSchedule {
        timesteps,
        order,
        direction,
    })
}

fn checked(v: Tensor, t: f32, what: &str) -> Result<Tensor> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric {
            t,
            what: what.to_string(),
        })
    }
}

fn check_interval(t_cur: f32, t_next: f32) -> Result<()> {
    if t_cur == t_next {
        return Err(Error::Domain(format!("zero-length step at t = {t_cur}")));
    }
    Ok(())
}

/// `z + (t_next - t_cur) v(z, t_cur)`; one velocity evaluation.
pub fn euler_step(z: &Tensor, v_fn: &mut dyn VelocityFn, t_cur: f32, t_next: f32) -> Result<Tensor> {
    check_interval(t_cur, t_next)?;
    let v = checked(v_fn.eval(z, t_cur)?, t_cur, "velocity")?;
    z.axpy(t_next - t_cur, &v)
}

/// Half-step forward difference for the time derivative of the velocity
/// along the trajectory:
///
/// `z_h = z + (delta/2) v(z, t)`, `v' = (v(z_h, t + delta/2) - v(z, t)) / (delta/2)`.
///
/// `v_base` is the already computed `v(z, t)`, so this costs one evaluation.
/// The probe time is clamped to `[0, 1]`; the divisor stays `delta/2`.
pub fn estimate_velocity_derivative(
    v_fn: &mut dyn VelocityFn,
    z: &Tensor,
    v_base: &Tensor,
    t: f32,
    delta: f32,
) -> Result<Tensor> {
    if delta == 0.0 {
        return Err(Error::Domain("derivative step must be non-zero".into()));
    }
    let half = delta / 2.0;
    let z_half = checked(z.axpy(half, v_base)?, t, "half-step latent")?;
    let t_half = (t + half).clamp(0.0, 1.0);
    let v_half = checked(v_fn.eval(&z_half, t_half)?, t_half, "half-step velocity")?;
    let deriv = v_half.sub(v_base)?.scale(1.0 / half);
    checked(deriv, t, "velocity derivative")
}

/// `z + Δt v + ½ Δt² v'` with `v'` from [`estimate_velocity_derivative`];
/// two velocity evaluations.
pub fn rf2_step(z: &Tensor, v_fn: &mut dyn VelocityFn, t_cur: f32, t_next: f32) -> Result<Tensor> {
    check_interval(t_cur, t_next)?;
    let dt = t_next - t_cur;
    let v = checked(v_fn.eval(z, t_cur)?, t_cur, "velocity")?;
    let deriv = estimate_velocity_derivative(v_fn, z, &v, t_cur, dt)?;
    z.axpy(dt, &v)?.axpy(0.5 * dt * dt, &deriv)
}

pub fn step(
    order: SolverOrder,
    z: &Tensor,
    v_fn: &mut dyn VelocityFn,
    t_cur: f32,
    t_next: f32,
) -> Result<Tensor> {
    match order {
        SolverOrder::Euler => euler_step(z, v_fn, t_cur, t_next),
        SolverOrder::Rf2 => rf2_step(z, v_fn, t_cur, t_next),
    }
}

/// Runs every step of `schedule` from `z0`.
pub fn integrate(z0: &Tensor, v_fn: &mut dyn VelocityFn, schedule: &SolverSchedule) -> Result<Tensor> {
    if !z0.is_finite() {
        return Err(Error::Numeric {
            t: schedule.timesteps[0],
            what: "initial latent".into(),
        });
    }
    let mut z = z0.clone();
    for (t_cur, t_next) in schedule.steps() {
        z = step(schedule.order, &z, v_fn, t_cur, t_next)?;
    }
    Ok(z)
}

/// Classifier-free guidance: `v_uncond + s (v_cond - v_uncond)`.
pub fn cfg_velocity(v_cond: &Tensor, v_uncond: &Tensor, scale: f32) -> Result<Tensor> {
    v_uncond.axpy(scale, &v_cond.sub(v_uncond)?)
}
