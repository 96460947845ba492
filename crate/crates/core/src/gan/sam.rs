//! Spatial attention: a per-pixel gate from pooled channel statistics.

use crate::autodiff::{Graph, NodeId};
use crate::error::Result;
use crate::real::Real;

pub const SAM_KERNEL: usize = 7;

/// `sigmoid(conv7x7([avg_c(f), max_c(f)]))`, a one-channel map in `(0, 1)`.
pub fn attention_map<T: Real>(g: &mut Graph<T>, f: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let avg = g.channel_avg(f);
    let max = g.channel_max(f);
    let pooled = g.concat_channels(&[avg, max])?;
    let logits = g.conv2d(pooled, w, Some(b), 1, SAM_KERNEL / 2)?;
    Ok(g.sigmoid(logits))
}

/// `f` gated by its attention map, broadcast over channels.
pub fn sam_forward<T: Real>(g: &mut Graph<T>, f: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let m = attention_map(g, f, w, b)?;
    g.mul_broadcast(f, m)
}
