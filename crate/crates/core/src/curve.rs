//! Quadratic Bezier parameterization of a model path.
//!
//! A curve holds three parameter vectors: two frozen endpoints and one
//! trainable control point. The point at `t` is the coefficient-wise affine
//! combination `(1-t)^2 a + 2t(1-t) c + t^2 b`, so gradients taken at a path
//! point route to the control point through the factor `2t(1-t)`.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numcore::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CurveParams {
    start: ModelParams,
    control: ModelParams,
    end: ModelParams,
}

impl CurveParams {
    pub fn new(start: ModelParams, control: ModelParams, end: ModelParams) -> Result<Self> {
        if start.arch() != end.arch() || start.arch() != control.arch() {
            return Err(Error::usage("curve endpoints must share one architecture"));
        }
        Ok(CurveParams {
            start,
            control,
            end,
        })
    }

    /// Curve with the control point at the endpoint midpoint (the segment).
    pub fn from_endpoints(start: ModelParams, end: ModelParams) -> Result<Self> {
        if start.arch() != end.arch() {
            return Err(Error::usage("curve endpoints must share one architecture"));
        }
        let mid = start
            .flat()
            .zip(end.flat(), |a, b| 0.5 * (a + b))?;
        let control = start.with_flat(mid)?;
        Ok(CurveParams {
            start,
            control,
            end,
        })
    }

    pub fn start(&self) -> &ModelParams {
        &self.start
    }

    pub fn control(&self) -> &ModelParams {
        &self.control
    }

    pub fn end(&self) -> &ModelParams {
        &self.end
    }

    /// Bezier weights ((1-t)^2, 2t(1-t), t^2); they sum to 1.
    pub fn weights(t: f64) -> (f64, f64, f64) {
        let u = 1.0 - t;
        (u * u, 2.0 * t * u, t * t)
    }

    /// Model at position `t` on the path. Endpoints return bit-exact copies.
    pub fn curve_point(&self, t: f64) -> Result<ModelParams> {
        check_t(t)?;
        if t == 0.0 {
            return Ok(self.start.clone());
        }
        if t == 1.0 {
            return Ok(self.end.clone());
        }
        let (w0, w1, w2) = Self::weights(t);
        let a = self.start.flat().data();
        let c = self.control.flat().data();
        let b = self.end.flat().data();
        let data = (0..a.len())
            .map(|i| w0 * a[i] + w1 * c[i] + w2 * b[i])
            .collect();
        self.start.with_flat(Tensor::from_vec(data)?)
    }

    /// Route a gradient taken at the path point back to the control point:
    /// `2t(1-t) * grad`. Exactly zero at the endpoints.
    pub fn control_grad(&self, grad_at_point: &Tensor, t: f64) -> Result<Tensor> {
        check_t(t)?;
        if grad_at_point.len() != self.start.flat().len() {
            return Err(Error::usage(format!(
                "gradient length {} != parameter length {}",
                grad_at_point.len(),
                self.start.flat().len()
            )));
        }
        grad_at_point.scale(2.0 * t * (1.0 - t))
    }

    /// Replace the control point's parameters; endpoints stay untouched.
    pub fn set_control(&mut self, flat: Tensor) -> Result<()> {
        self.control = self.control.with_flat(flat)?;
        Ok(())
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::usage(format!("t = {t} outside [0, 1]")));
    }
    Ok(())
}
