//! The fast guided filter as a composition of differentiable primitives.

use super::graph::{Graph, NodeId};
use crate::error::{shape_err, Result};
use crate::guided::FilterParams;
use crate::image::Interpolation;
use crate::real::Real;

impl<T: Real> Graph<T> {
    /// Differentiable [`crate::guided::fast_guided_filter`] on batched tensors.
    ///
    /// `guide_lo` and `input_lo` share spatial dims; `guide_hi` is
    /// `params.subsample` times larger. Gradients reach all three inputs.
    pub fn fgf(
        &mut self,
        guide_lo: NodeId,
        input_lo: NodeId,
        guide_hi: NodeId,
        params: &FilterParams,
    ) -> Result<NodeId> {
        params.validate()?;
        let (gl, il, gh) = (self.shape(guide_lo), self.shape(input_lo), self.shape(guide_hi));
        if (gl.n, gl.h, gl.w) != (il.n, il.h, il.w) {
            return shape_err(format!("fgf: guide_lo {gl} vs input_lo {il}"));
        }
        let s = params.subsample;
        if gh.n != gl.n || gh.c != gl.c || gh.h != gl.h * s || gh.w != gl.w * s {
            return shape_err(format!("fgf: guide_hi {gh} is not {s}x guide_lo {gl}"));
        }
        let (guide_lo, guide_hi) = match (gl.c, il.c) {
            (g, c) if g == c => (guide_lo, guide_hi),
            (1, c) => (
                self.repeat_channels(guide_lo, c)?,
                self.repeat_channels(guide_hi, c)?,
            ),
            (g, c) => return shape_err(format!("fgf: guide has {g} channels; expected 1 or {c}")),
        };
        let r = params.radius;
        let mean_i = self.box_filter(guide_lo, r);
        let mean_p = self.box_filter(input_lo, r);
        let ip = self.mul(guide_lo, input_lo)?;
        let corr = self.box_filter(ip, r);
        let ii = self.mul(guide_lo, guide_lo)?;
        let sq = self.box_filter(ii, r);
        let mi2 = self.mul(mean_i, mean_i)?;
        let var = self.sub(sq, mi2)?;
        let mimp = self.mul(mean_i, mean_p)?;
        let cov = self.sub(corr, mimp)?;
        let a = self.div_guarded(cov, var, params.eps)?;
        let ami = self.mul(a, mean_i)?;
        let b = self.sub(mean_p, ami)?;
        let mean_a = self.box_filter(a, r);
        let mean_b = self.box_filter(b, r);
        let up_a = self.resize(mean_a, Interpolation::Bilinear, gh.h, gh.w)?;
        let up_b = self.resize(mean_b, Interpolation::Bilinear, gh.h, gh.w)?;
        let scaled = self.mul(up_a, guide_hi)?;
        self.add(scaled, up_b)
    }
}
