use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2-D affine map `p' = A p + t`, stored row-major as `[[a, b, tx], [c, d, ty]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine(pub [[f64; 3]; 2]);

impl Affine {
    pub const IDENTITY: Affine = Affine([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);

    pub fn translation(tx: f64, ty: f64) -> Self {
        Affine([[1.0, 0.0, tx], [0.0, 1.0, ty]])
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Affine([[sx, 0.0, 0.0], [0.0, sy, 0.0]])
    }

    /// Counter-clockwise in image coordinates (y down), angle in radians.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Affine([[c, s, 0.0], [-s, c, 0.0]])
    }

    /// `M` applied about `(cx, cy)` instead of the origin.
    pub fn about(self, cx: f64, cy: f64) -> Self {
        Affine::translation(cx, cy).then_after(&self).then_after(&Affine::translation(-cx, -cy))
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn then_after(&self, other: &Affine) -> Affine {
        let [[a, b, tx], [c, d, ty]] = self.0;
        let [[e, f, ux], [g, h, uy]] = other.0;
        Affine([[a * e + b * g, a * f + b * h, a * ux + b * uy + tx], [c * e + d * g, c * f + d * h, c * ux + d * uy + ty]])
    }

    /// Apply `self` first, then `next`.
    pub fn then(&self, next: &Affine) -> Affine {
        next.then_after(self)
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let [[a, b, tx], [c, d, ty]] = self.0;
        [a * p[0] + b * p[1] + tx, c * p[0] + d * p[1] + ty]
    }

    pub fn apply_f32(&self, p: [f32; 2]) -> [f32; 2] {
        let q = self.apply([p[0] as f64, p[1] as f64]);
        [q[0] as f32, q[1] as f32]
    }

    pub fn inverse(&self) -> Result<Affine> {
        let [[a, b, tx], [c, d, ty]] = self.0;
        let det = a * d - b * c;
        if det.abs() < 1e-12 || !det.is_finite() {
            return Err(Error::invalid("affine_inverse", format!("singular transform (det {det})")));
        }
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Ok(Affine([[ia, ib, -(ia * tx + ib * ty)], [ic, id, -(ic * tx + id * ty)]]))
    }
}
