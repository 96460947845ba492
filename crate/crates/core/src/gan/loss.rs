//! Least-squares adversarial objectives with an L1 content term.

use crate::autodiff::{Graph, NodeId};
use crate::error::Result;
use crate::real::Real;

#[derive(Clone, Copy, Debug)]
pub struct GeneratorLoss {
    pub total: NodeId,
    pub l1: NodeId,
    /// `mean((D - a)^2)` before weighting by alpha.
    pub adversarial: Option<NodeId>,
}

/// `mean|reference - candidate| + alpha * mean((d_scores - a)^2)`.
///
/// Without scores (or with `alpha = 0`) only the L1 term remains.
pub fn generator_loss<T: Real>(
    g: &mut Graph<T>,
    candidate: NodeId,
    reference: NodeId,
    d_scores: Option<NodeId>,
    alpha: f64,
    label_a: f64,
) -> Result<GeneratorLoss> {
    let diff = g.sub(reference, candidate)?;
    let abs = g.abs(diff);
    let l1 = g.mean(abs);
    let Some(d) = d_scores else {
        return Ok(GeneratorLoss {
            total: l1,
            l1,
            adversarial: None,
        });
    };
    let adv = squared_gap(g, d, label_a);
    let weighted = g.scale(adv, alpha);
    let total = g.add(l1, weighted)?;
    Ok(GeneratorLoss {
        total,
        l1,
        adversarial: Some(adv),
    })
}

/// `mean((d_fake - b)^2) + mean((d_real - c)^2)`.
pub fn discriminator_loss<T: Real>(
    g: &mut Graph<T>,
    d_fake: NodeId,
    d_real: NodeId,
    label_b: f64,
    label_c: f64,
) -> Result<NodeId> {
    let fake = squared_gap(g, d_fake, label_b);
    let real = squared_gap(g, d_real, label_c);
    g.add(fake, real)
}

fn squared_gap<T: Real>(g: &mut Graph<T>, x: NodeId, label: f64) -> NodeId {
    let shifted = g.add_scalar(x, -label);
    let sq = g.square(shifted);
    g.mean(sq)
}
