//! Training objective: squared MMD of the pushed-forward reference batch plus
//! a discrete Sobolev-in-time RKHS penalty on the coefficients.
//!
//! For non-autonomous fields with slices `c_0 .. c_{K-1}` and `dt = 1/K`:
//!
//! ```text
//! P(C) = dt * sum_k sum_l ( l1 * c_kl' U c_kl + l2 * cdot_kl' U cdot_kl )
//! ```
//!
//! where `U = U(X, X)` and `cdot` uses centered differences inside and
//! first-order one-sided differences at both ends. Autonomous fields drop
//! the time sum and the derivative term: `P(C) = l1 * sum_l c_l' U c_l`.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::flow::{Direction, FlowTape, TimeMode, VelocityField};
use crate::kernels::{kernel_matrix, KernelSpec};
use crate::mmd::mmd2_with_grad;

/// Weights of the RKHS penalty. Only the products `lambda_total * lambda1`
/// and `lambda_total * lambda2` affect training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_total: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.1,
            lambda_total: 1e-4,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda_total", self.lambda_total),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// The penalty with its Gram matrix precomputed for a fixed set of inducing
/// points.
#[derive(Debug, Clone)]
pub struct RkhsPenalty {
    gram: Array2<f64>,
    cfg: PenaltyConfig,
}

impl RkhsPenalty {
    pub fn new(field: &VelocityField, cfg: PenaltyConfig) -> Result<Self> {
        cfg.validate()?;
        let x = field.inducing_points();
        let gram = kernel_matrix(field.kernel(), x.view(), x.view())?;
        Ok(Self { gram, cfg })
    }

    pub fn config(&self) -> &PenaltyConfig {
        &self.cfg
    }

    fn check(&self, field: &VelocityField) -> Result<()> {
        if field.n_inducing() != self.gram.nrows() {
            return Err(invalid("penalty was built for a different set of inducing points"));
        }
        Ok(())
    }

    /// `sum_l c_l' U c_l` for a `J x d` slice.
    fn quad(&self, c: ArrayView2<f64>) -> f64 {
        (&self.gram.dot(&c) * &c).sum()
    }

    /// Time derivatives of the coefficient slices.
    fn derivatives(c: &Array3<f64>, dt: f64) -> Array3<f64> {
        let k = c.len_of(Axis(0));
        let mut out = Array3::zeros(c.raw_dim());
        if k < 2 {
            return out;
        }
        for i in 0..k {
            let (lo, hi, w) = if i == 0 {
                (0, 1, 1.0 / dt)
            } else if i == k - 1 {
                (k - 2, k - 1, 1.0 / dt)
            } else {
                (i - 1, i + 1, 0.5 / dt)
            };
            let diff = (&c.index_axis(Axis(0), hi) - &c.index_axis(Axis(0), lo)) * w;
            out.index_axis_mut(Axis(0), i).assign(&diff);
        }
        out
    }

    pub fn value(&self, field: &VelocityField) -> Result<f64> {
        self.check(field)?;
        let c = field.coeffs();
        let l1 = self.cfg.lambda1;
        let l2 = self.cfg.lambda2;
        if field.mode() == TimeMode::Autonomous {
            return Ok(l1 * self.quad(c.index_axis(Axis(0), 0)));
        }
        let k = c.len_of(Axis(0));
        let dt = 1.0 / k as f64;
        let mut total = 0.0;
        if l1 != 0.0 {
            total += l1 * c.outer_iter().map(|ck| self.quad(ck)).sum::<f64>();
        }
        if l2 != 0.0 {
            let cd = Self::derivatives(c, dt);
            total += l2 * cd.outer_iter().map(|ck| self.quad(ck)).sum::<f64>();
        }
        Ok(dt * total)
    }

    pub fn grad(&self, field: &VelocityField) -> Result<Array3<f64>> {
        self.check(field)?;
        let c = field.coeffs();
        let l1 = self.cfg.lambda1;
        let l2 = self.cfg.lambda2;
        let mut g = Array3::zeros(c.raw_dim());
        if field.mode() == TimeMode::Autonomous {
            let gc = self.gram.dot(&c.index_axis(Axis(0), 0)) * (2.0 * l1);
            g.index_axis_mut(Axis(0), 0).assign(&gc);
            return Ok(g);
        }
        let k = c.len_of(Axis(0));
        let dt = 1.0 / k as f64;
        if l1 != 0.0 {
            for (mut gk, ck) in g.outer_iter_mut().zip(c.outer_iter()) {
                gk.scaled_add(2.0 * dt * l1, &self.gram.dot(&ck));
            }
        }
        if l2 != 0.0 && k >= 2 {
            let cd = Self::derivatives(c, dt);
            // Adjoint of the difference stencil applied to 2 dt l2 U cdot_i.
            for i in 0..k {
                let gi = self.gram.dot(&cd.index_axis(Axis(0), i)) * (2.0 * dt * l2);
                let (lo, hi, w) = if i == 0 {
                    (0, 1, 1.0 / dt)
                } else if i == k - 1 {
                    (k - 2, k - 1, 1.0 / dt)
                } else {
                    (i - 1, i + 1, 0.5 / dt)
                };
                g.index_axis_mut(Axis(0), hi).scaled_add(w, &gi);
                g.index_axis_mut(Axis(0), lo).scaled_add(-w, &gi);
            }
        }
        let m = field.mask_dim();
        if m > 0 {
            g.slice_mut(s![.., .., ..m]).fill(0.0);
        }
        Ok(g)
    }
}

/// RKHS penalty of a field (without the outer `lambda_total`).
pub fn rkhs_penalty(field: &VelocityField, cfg: &PenaltyConfig) -> Result<f64> {
    RkhsPenalty::new(field, *cfg)?.value(field)
}

/// Gradient of [`rkhs_penalty`] with respect to the coefficients.
pub fn rkhs_penalty_grad(field: &VelocityField, cfg: &PenaltyConfig) -> Result<Array3<f64>> {
    RkhsPenalty::new(field, *cfg)?.grad(field)
}

#[derive(Debug, Clone)]
pub struct ObjectiveValue {
    pub loss: f64,
    pub mmd_forward: f64,
    pub mmd_backward: Option<f64>,
    /// Penalty without `lambda_total`.
    pub penalty: f64,
    pub grad: Array3<f64>,
}

/// The full loss for one pair of minibatches.
#[derive(Debug, Clone)]
pub struct Objective {
    penalty: RkhsPenalty,
    mmd_kernel: KernelSpec,
    bidirectional: bool,
}

impl Objective {
    pub fn new(field: &VelocityField, cfg: PenaltyConfig, mmd_kernel: KernelSpec, bidirectional: bool) -> Result<Self> {
        Ok(Self {
            penalty: RkhsPenalty::new(field, cfg)?,
            mmd_kernel,
            bidirectional,
        })
    }

    pub fn penalty(&self) -> &RkhsPenalty {
        &self.penalty
    }

    pub fn evaluate(
        &self,
        field: &VelocityField,
        batch_ref: ArrayView2<f64>,
        batch_target: ArrayView2<f64>,
    ) -> Result<ObjectiveValue> {
        let lt = self.penalty.cfg.lambda_total;

        let tape = FlowTape::record(field, batch_ref, Direction::Forward)?;
        let (mmd_forward, dl_dx1) = mmd2_with_grad(&self.mmd_kernel, tape.output().view(), batch_target)?;
        let (mut grad, _) = tape.backprop(field, dl_dx1.view())?;

        let mmd_backward = if self.bidirectional {
            let tape = FlowTape::record(field, batch_target, Direction::Backward)?;
            let (m, dl) = mmd2_with_grad(&self.mmd_kernel, tape.output().view(), batch_ref)?;
            let (g, _) = tape.backprop(field, dl.view())?;
            grad += &g;
            Some(m)
        } else {
            None
        };

        let penalty = self.penalty.value(field)?;
        if lt != 0.0 {
            grad.scaled_add(lt, &self.penalty.grad(field)?);
        }
        Ok(ObjectiveValue {
            loss: mmd_forward + mmd_backward.unwrap_or(0.0) + lt * penalty,
            mmd_forward,
            mmd_backward,
            penalty,
            grad,
        })
    }
}

/// `MMD^2(T(ref), target) [+ MMD^2(T^{-1}(target), ref)] + lambda_total * P`
/// and its gradient with respect to the coefficients.
pub fn objective(
    field: &VelocityField,
    cfg: &PenaltyConfig,
    batch_ref: ArrayView2<f64>,
    batch_target: ArrayView2<f64>,
    mmd_kernel: &KernelSpec,
    bidirectional: bool,
) -> Result<(f64, Array3<f64>)> {
    let v = Objective::new(field, *cfg, *mmd_kernel, bidirectional)?.evaluate(field, batch_ref, batch_target)?;
    Ok((v.loss, v.grad))
}
