//! Inducing-point velocity fields and their flows.
//!
//! A [`VelocityField`] is `v_l(t, x) = sum_j C[k, j, l] U(X_j, x)` where `k`
//! is the integrator step containing `t` (coefficients are piecewise constant
//! in time, one slice per step) or always 0 for autonomous fields. Flows are
//! integrated with classical RK4 on a uniform grid of `time_steps` steps over
//! `[0, 1]`, and gradients are exact for that discrete map: the stage states
//! are taped on the forward pass and the adjoint is pushed back through every
//! stage.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::kernels::{sq_dist, KernelSpec};

/// Rows per parallel work item. Fixed so reductions do not depend on the
/// number of threads.
const ROW_CHUNK: usize = 32;

/// A velocity field the integrator can drive.
///
/// `step` is the index of the integrator step being taken (in forward time)
/// and `t` the stage time in `[0, 1]`.
pub trait Velocity: Sync {
    fn dim(&self) -> usize;
    fn time_steps(&self) -> usize;
    fn eval(&self, step: usize, t: f64, x: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    Autonomous,
    NonAutonomous,
}

impl std::str::FromStr for TimeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "autonomous" => Ok(Self::Autonomous),
            "non_autonomous" | "nonautonomous" | "non-autonomous" => Ok(Self::NonAutonomous),
            other => Err(invalid(format!("unknown time mode `{other}`"))),
        }
    }
}

/// Kernel expansion of a velocity field over fixed spatial inducing points.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    inducing: Array2<f64>,
    kernel: KernelSpec,
    coeffs: Array3<f64>,
    time_steps: usize,
    mode: TimeMode,
    mask_dim: usize,
}

impl VelocityField {
    /// The zero field, whose flow is the identity map.
    pub fn zeros(
        inducing: Array2<f64>,
        kernel: KernelSpec,
        time_steps: usize,
        mode: TimeMode,
        mask_dim: usize,
    ) -> Result<Self> {
        let slices = match mode {
            TimeMode::Autonomous => 1,
            TimeMode::NonAutonomous => time_steps,
        };
        let coeffs = Array3::zeros((slices, inducing.nrows(), inducing.ncols()));
        Self::new(inducing, kernel, coeffs, time_steps, mode, mask_dim)
    }

    pub fn new(
        inducing: Array2<f64>,
        kernel: KernelSpec,
        coeffs: Array3<f64>,
        time_steps: usize,
        mode: TimeMode,
        mask_dim: usize,
    ) -> Result<Self> {
        let (j, d) = inducing.dim();
        if j == 0 || d == 0 {
            return Err(Error::EmptyInput("velocity field needs inducing points"));
        }
        if time_steps == 0 {
            return Err(invalid("time_steps must be at least 1"));
        }
        if mask_dim >= d {
            return Err(invalid(format!("mask_dim {mask_dim} must be below the dimension {d}")));
        }
        let slices = match mode {
            TimeMode::Autonomous => 1,
            TimeMode::NonAutonomous => time_steps,
        };
        if coeffs.dim() != (slices, j, d) {
            return Err(invalid(format!(
                "coefficient tensor has shape {:?}, expected {:?}",
                coeffs.dim(),
                (slices, j, d)
            )));
        }
        if inducing.iter().chain(coeffs.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("velocity field contains non-finite values"));
        }
        if mask_dim > 0 && coeffs.slice(ndarray::s![.., .., ..mask_dim]).iter().any(|&v| v != 0.0) {
            return Err(invalid("masked coefficient slices must be identically zero"));
        }
        Ok(Self {
            inducing: inducing.as_standard_layout().into_owned(),
            kernel,
            coeffs: coeffs.as_standard_layout().into_owned(),
            time_steps,
            mode,
            mask_dim,
        })
    }

    pub fn inducing_points(&self) -> &Array2<f64> {
        &self.inducing
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn coeffs(&self) -> &Array3<f64> {
        &self.coeffs
    }

    pub fn mode(&self) -> TimeMode {
        self.mode
    }

    pub fn mask_dim(&self) -> usize {
        self.mask_dim
    }

    pub fn n_inducing(&self) -> usize {
        self.inducing.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.coeffs.len()
    }

    /// Replaces the coefficients, checking shape, finiteness and the mask.
    pub fn set_coeffs(&mut self, coeffs: Array3<f64>) -> Result<()> {
        let next = Self::new(
            self.inducing.clone(),
            self.kernel,
            coeffs,
            self.time_steps,
            self.mode,
            self.mask_dim,
        )?;
        self.coeffs = next.coeffs;
        Ok(())
    }

    /// In-place update; masked slices are re-zeroed afterwards.
    pub(crate) fn update_coeffs(&mut self, f: impl FnOnce(&mut Array3<f64>)) {
        f(&mut self.coeffs);
        if self.mask_dim > 0 {
            self.coeffs.slice_mut(ndarray::s![.., .., ..self.mask_dim]).fill(0.0);
        }
    }

    fn slice_index(&self, step: usize) -> usize {
        match self.mode {
            TimeMode::Autonomous => 0,
            TimeMode::NonAutonomous => step,
        }
    }

    /// Velocity at `x` during integrator step `step`.
    pub fn eval_velocity(&self, step: usize, x: &[f64]) -> Result<Vec<f64>> {
        if step >= self.time_steps {
            return Err(invalid(format!(
                "time step {step} out of range for {} steps",
                self.time_steps
            )));
        }
        check_dim(self.dim(), x.len())?;
        let mut out = vec![0.0; x.len()];
        self.eval_slice(self.slice_index(step), x, &mut out);
        Ok(out)
    }

    fn eval_slice(&self, slice: usize, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let m = self.mask_dim;
        out.fill(0.0);
        let c = self.coeffs.index_axis(Axis(0), slice);
        let c = c.as_slice().unwrap();
        let xs = self.inducing.as_slice().unwrap();
        for (xj, cj) in xs.chunks_exact(d).zip(c.chunks_exact(d)) {
            let u = self.kernel.from_sq_dist(sq_dist(x, xj));
            for l in m..d {
                out[l] += u * cj[l];
            }
        }
    }

    /// Vector-Jacobian product of `x -> v(slice, x)` with cotangent `w`:
    /// accumulates into the slice gradient and into `x_bar`.
    fn vjp(&self, slice: usize, x: &[f64], w: &[f64], grad_slice: &mut [f64], x_bar: &mut [f64]) {
        let d = self.dim();
        let m = self.mask_dim;
        let c = self.coeffs.index_axis(Axis(0), slice);
        let c = c.as_slice().unwrap();
        let xs = self.inducing.as_slice().unwrap();
        for ((xj, cj), gj) in xs
            .chunks_exact(d)
            .zip(c.chunks_exact(d))
            .zip(grad_slice.chunks_exact_mut(d))
        {
            let (u, s) = self.kernel.value_and_slope(sq_dist(x, xj));
            let mut a = 0.0;
            for l in m..d {
                gj[l] += u * w[l];
                a += w[l] * cj[l];
            }
            let f = a * s;
            if f != 0.0 {
                for l in 0..d {
                    x_bar[l] += f * (x[l] - xj[l]);
                }
            }
        }
    }
}

impl Velocity for VelocityField {
    fn dim(&self) -> usize {
        self.inducing.ncols()
    }

    fn time_steps(&self) -> usize {
        self.time_steps
    }

    fn eval(&self, step: usize, _t: f64, x: &[f64], out: &mut [f64]) {
        self.eval_slice(self.slice_index(step), x, out);
    }
}

/// `v(t, x) = a`.
#[derive(Debug, Clone)]
pub struct ConstantField {
    pub value: Vec<f64>,
    pub steps: usize,
}

impl Velocity for ConstantField {
    fn dim(&self) -> usize {
        self.value.len()
    }
    fn time_steps(&self) -> usize {
        self.steps
    }
    fn eval(&self, _: usize, _: f64, _: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.value);
    }
}

/// `v(t, x) = A x + b`; its Lipschitz constant is the spectral norm of `A`.
#[derive(Debug, Clone)]
pub struct AffineField {
    pub matrix: Array2<f64>,
    pub offset: Vec<f64>,
    pub steps: usize,
}

impl Velocity for AffineField {
    fn dim(&self) -> usize {
        self.offset.len()
    }
    fn time_steps(&self) -> usize {
        self.steps
    }
    fn eval(&self, _: usize, _: f64, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.matrix.rows().into_iter().zip(&self.offset)) {
            *o = b + row.iter().zip(x).map(|(a, xi)| a * xi).sum::<f64>();
        }
    }
}

/// A field given by a closure `f(t, x, out)`.
pub struct FnField<F> {
    pub dim: usize,
    pub steps: usize,
    pub f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64]) + Sync> Velocity for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn time_steps(&self) -> usize {
        self.steps
    }
    fn eval(&self, _: usize, t: f64, x: &[f64], out: &mut [f64]) {
        (self.f)(t, x, out)
    }
}

/// Integration direction. `Backward` solves `psi' = -v(1 - t, psi)`, which
/// approximates the inverse of the forward map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// States of a flow at every step boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `(time_steps + 1) x N x d`.
    pub states: Array3<f64>,
}

#[inline]
fn stage_velocity<V: Velocity + ?Sized>(field: &V, dir: Direction, step: usize, tau: f64, x: &[f64], out: &mut [f64]) {
    match dir {
        Direction::Forward => field.eval(step, tau, x, out),
        Direction::Backward => {
            field.eval(field.time_steps() - 1 - step, 1.0 - tau, x, out);
            out.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

/// Source step index of the field used during integrator step `step`.
fn field_step(dir: Direction, steps: usize, step: usize) -> usize {
    match dir {
        Direction::Forward => step,
        Direction::Backward => steps - 1 - step,
    }
}

struct Scratch {
    k: [Vec<f64>; 4],
    // Inputs of stages 2, 3, 4.
    s: [Vec<f64>; 3],
}

impl Scratch {
    fn new(d: usize) -> Self {
        Self {
            k: [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]],
            s: [vec![0.0; d], vec![0.0; d], vec![0.0; d]],
        }
    }
}

/// One RK4 step in place. If `tape` is given it receives the four stage
/// input states (`4 * d` values).
fn rk4_step<V: Velocity + ?Sized>(
    field: &V,
    dir: Direction,
    step: usize,
    h: f64,
    x: &mut [f64],
    sc: &mut Scratch,
    tape: Option<&mut [f64]>,
) {
    let d = x.len();
    let t = step as f64 * h;
    let [k1, k2, k3, k4] = &mut sc.k;
    let [s2, s3, s4] = &mut sc.s;

    stage_velocity(field, dir, step, t, x, k1);
    for l in 0..d {
        s2[l] = x[l] + 0.5 * h * k1[l];
    }
    stage_velocity(field, dir, step, t + 0.5 * h, s2, k2);
    for l in 0..d {
        s3[l] = x[l] + 0.5 * h * k2[l];
    }
    stage_velocity(field, dir, step, t + 0.5 * h, s3, k3);
    for l in 0..d {
        s4[l] = x[l] + h * k3[l];
    }
    stage_velocity(field, dir, step, t + h, s4, k4);
    if let Some(tape) = tape {
        tape[..d].copy_from_slice(x);
        tape[d..2 * d].copy_from_slice(s2);
        tape[2 * d..3 * d].copy_from_slice(s3);
        tape[3 * d..].copy_from_slice(s4);
    }
    for l in 0..d {
        x[l] += h / 6.0 * (k1[l] + 2.0 * k2[l] + 2.0 * k3[l] + k4[l]);
    }
}

/// Integrates one row. Returns the first step after which the state is not
/// finite.
fn integrate_row<V: Velocity + ?Sized>(
    field: &V,
    dir: Direction,
    x: &mut [f64],
    mut traj: Option<&mut [f64]>,
    mut tape: Option<&mut [f64]>,
) -> std::result::Result<(), usize> {
    let d = x.len();
    let steps = field.time_steps();
    let h = 1.0 / steps as f64;
    let mut sc = Scratch::new(d);
    if let Some(tr) = traj.as_deref_mut() {
        tr[..d].copy_from_slice(x);
    }
    for step in 0..steps {
        let tape_k = tape.as_deref_mut().map(|t| &mut t[step * 4 * d..(step + 1) * 4 * d]);
        rk4_step(field, dir, step, h, x, &mut sc, tape_k);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(step);
        }
        if let Some(tr) = traj.as_deref_mut() {
            tr[(step + 1) * d..(step + 2) * d].copy_from_slice(x);
        }
    }
    Ok(())
}

fn check_input<V: Velocity + ?Sized>(field: &V, x: &ArrayView2<f64>) -> Result<()> {
    if field.time_steps() == 0 {
        return Err(invalid("time_steps must be at least 1"));
    }
    check_dim(field.dim(), x.ncols())
}

fn first_failure(results: impl Iterator<Item = std::result::Result<(), usize>>) -> Result<()> {
    match results.filter_map(|r| r.err()).min() {
        Some(step) => Err(Error::NonFiniteState { step }),
        None => Ok(()),
    }
}

/// Integrates every row of `x` in the given direction.
pub fn integrate<V: Velocity + ?Sized>(
    field: &V,
    x: ArrayView2<f64>,
    dir: Direction,
    record: bool,
) -> Result<(Array2<f64>, Option<Trajectory>)> {
    check_input(field, &x)?;
    let (n, d) = x.dim();
    let steps = field.time_steps();
    let mut out = x.as_standard_layout().into_owned();
    if n == 0 {
        let traj = record.then(|| Trajectory {
            times: (0..=steps).map(|k| k as f64 / steps as f64).collect(),
            states: Array3::zeros((steps + 1, 0, d)),
        });
        return Ok((out, traj));
    }
    let tl = (steps + 1) * d;
    let mut traj_buf = if record { vec![0.0; n * tl] } else { Vec::new() };
    let results: Vec<_> = if record {
        out.as_slice_mut()
            .unwrap()
            .par_chunks_mut(d)
            .zip(traj_buf.par_chunks_mut(tl))
            .map(|(row, tr)| integrate_row(field, dir, row, Some(tr), None))
            .collect()
    } else {
        out.as_slice_mut()
            .unwrap()
            .par_chunks_mut(d)
            .map(|row| integrate_row(field, dir, row, None, None))
            .collect()
    };
    first_failure(results.into_iter())?;
    let traj = record.then(|| {
        let mut states = Array3::zeros((steps + 1, n, d));
        for i in 0..n {
            for k in 0..=steps {
                for l in 0..d {
                    states[[k, i, l]] = traj_buf[i * tl + k * d + l];
                }
            }
        }
        let times = match dir {
            Direction::Forward => (0..=steps).map(|k| k as f64 / steps as f64).collect(),
            Direction::Backward => (0..=steps).map(|k| 1.0 - k as f64 / steps as f64).collect(),
        };
        Trajectory { times, states }
    });
    Ok((out, traj))
}

/// Pushes `x0` through the time-one flow map.
pub fn flow_forward<V: Velocity + ?Sized>(
    field: &V,
    x0: ArrayView2<f64>,
    record: bool,
) -> Result<(Array2<f64>, Option<Trajectory>)> {
    integrate(field, x0, Direction::Forward, record)
}

/// Pulls `x1` back through the time-reversed flow.
pub fn flow_backward<V: Velocity + ?Sized>(field: &V, x1: ArrayView2<f64>) -> Result<Array2<f64>> {
    integrate(field, x1, Direction::Backward, false).map(|(x, _)| x)
}

/// Forward pass that keeps every RK4 stage state for a later reverse pass.
#[derive(Debug, Clone)]
pub struct FlowTape {
    direction: Direction,
    steps: usize,
    dim: usize,
    /// Row-major `N x steps x 4 x d`.
    stages: Vec<f64>,
    output: Array2<f64>,
}

impl FlowTape {
    pub fn record(field: &VelocityField, x0: ArrayView2<f64>, direction: Direction) -> Result<Self> {
        check_input(field, &x0)?;
        let (n, d) = x0.dim();
        let steps = field.time_steps();
        let per_row = steps * 4 * d;
        let mut output = x0.as_standard_layout().into_owned();
        let mut stages = vec![0.0; n * per_row];
        let results: Vec<_> = output
            .as_slice_mut()
            .unwrap()
            .par_chunks_mut(d)
            .zip(stages.par_chunks_mut(per_row.max(1)))
            .map(|(row, tape)| integrate_row(field, direction, row, None, Some(tape)))
            .collect();
        first_failure(results.into_iter())?;
        Ok(Self {
            direction,
            steps,
            dim: d,
            stages,
            output,
        })
    }

    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn into_output(self) -> Array2<f64> {
        self.output
    }

    /// Reverse pass. Returns `(dL/dC, dL/dx0)` given `dL/dx1`.
    pub fn backprop(&self, field: &VelocityField, dl_dout: ArrayView2<f64>) -> Result<(Array3<f64>, Array2<f64>)> {
        let (n, d) = self.output.dim();
        if dl_dout.dim() != (n, d) {
            return Err(invalid(format!(
                "output gradient has shape {:?}, expected {:?}",
                dl_dout.dim(),
                (n, d)
            )));
        }
        if field.time_steps() != self.steps || field.dim() != self.dim {
            return Err(invalid("tape was recorded with a different field layout"));
        }
        let steps = self.steps;
        let h = 1.0 / steps as f64;
        let per_row = steps * 4 * d;
        let coeff_shape = field.coeffs().raw_dim();
        let slice_len = field.n_inducing() * d;
        let sign = match self.direction {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        };

        let mut dl_din = dl_dout.as_standard_layout().into_owned();
        let partials: Vec<Array3<f64>> = dl_din
            .as_slice_mut()
            .unwrap()
            .par_chunks_mut(d * ROW_CHUNK)
            .zip(self.stages.par_chunks(per_row * ROW_CHUNK))
            .map(|(adj_chunk, tape_chunk)| {
                let mut grad = Array3::<f64>::zeros(coeff_shape);
                let gs = grad.as_slice_mut().unwrap();
                let mut kb = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
                let mut sb = vec![0.0; d];
                let mut w = vec![0.0; d];
                for (xb, tape) in adj_chunk.chunks_exact_mut(d).zip(tape_chunk.chunks_exact(per_row)) {
                    for step in (0..steps).rev() {
                        let slice = field.slice_index(field_step(self.direction, steps, step));
                        let gslice = &mut gs[slice * slice_len..(slice + 1) * slice_len];
                        let st = &tape[step * 4 * d..(step + 1) * 4 * d];
                        for l in 0..d {
                            kb[0][l] = h / 6.0 * xb[l];
                            kb[1][l] = h / 3.0 * xb[l];
                            kb[2][l] = h / 3.0 * xb[l];
                            kb[3][l] = h / 6.0 * xb[l];
                        }
                        // Stages 4, 3, 2, 1; stage i's input depends on k_{i-1}.
                        for stage in (0..4).rev() {
                            for l in 0..d {
                                w[l] = sign * kb[stage][l];
                            }
                            sb.fill(0.0);
                            field.vjp(slice, &st[stage * d..(stage + 1) * d], &w, gslice, &mut sb);
                            let carry = match stage {
                                3 => h,
                                2 | 1 => 0.5 * h,
                                _ => 0.0,
                            };
                            for l in 0..d {
                                xb[l] += sb[l];
                                if stage > 0 {
                                    kb[stage - 1][l] += carry * sb[l];
                                }
                            }
                        }
                    }
                }
                grad
            })
            .collect();
        let mut coeff_grad = Array3::<f64>::zeros(coeff_shape);
        for p in &partials {
            coeff_grad += p;
        }
        Ok((coeff_grad, dl_din))
    }
}

/// Result of [`flow_forward_with_grad`].
#[derive(Debug, Clone)]
pub struct FlowGradient {
    pub output: Array2<f64>,
    pub coeff_grad: Array3<f64>,
    pub input_grad: Array2<f64>,
}

/// Forward flow plus the exact reverse-mode gradients of a scalar loss whose
/// gradient with respect to the outputs is `dl_dx1`.
pub fn flow_forward_with_grad(
    field: &VelocityField,
    x0: ArrayView2<f64>,
    dl_dx1: ArrayView2<f64>,
) -> Result<FlowGradient> {
    let tape = FlowTape::record(field, x0, Direction::Forward)?;
    let (coeff_grad, input_grad) = tape.backprop(field, dl_dx1)?;
    Ok(FlowGradient {
        output: tape.into_output(),
        coeff_grad,
        input_grad,
    })
}
