use super::stream::{EventStream, NodeId};
use crate::error::{Error, Result};
use crate::numcore::Rng;

/// Uniform victim other than `exclude`. Sampling stays inside the victim
/// partition so negatives respect the bipartite structure.
pub fn sample_negative(exclude: NodeId, stream: &EventStream, rng: &mut Rng) -> Result<NodeId> {
    let n = stream.n_victims();
    let base = stream.n_attackers();
    if n < 2 {
        return Err(Error::Contract(format!(
            "negative sampling needs at least 2 victims, stream has {n}"
        )));
    }
    if !stream.is_victim(exclude) {
        return Ok(NodeId(base + rng.below(n)));
    }
    let k = rng.below(n - 1);
    let skip = exclude.0 - base;
    Ok(NodeId(base + if k >= skip { k + 1 } else { k }))
}

/// Up to `k` distinct victims other than `exclude`, in draw order.
pub fn sample_candidates(exclude: NodeId, stream: &EventStream, k: usize, rng: &mut Rng) -> Result<Vec<NodeId>> {
    let pool: Vec<NodeId> = stream.victims().filter(|&v| v != exclude).collect();
    if pool.is_empty() {
        return Err(Error::Contract("no candidate victims".into()));
    }
    Ok(rng
        .sample_indices(pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect())
}
