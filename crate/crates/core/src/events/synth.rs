//! Synthetic recurring-attack streams.
//!
//! Attackers and victims are split into groups; each attacker targets a few
//! victims of its own group and hits every target at near-regular intervals
//! (`period ± jitter`). The category of a pair is fixed by the group and
//! shows in the protocol and port; each victim draws its own typical flow
//! volume. Who attacks whom can therefore be learned from interaction
//! history. A fraction of attackers
//! only become active late in the stream, which supplies unseen nodes for
//! inductive evaluation.

use super::ingest::{encode_features, Protocol, FEATURE_WIDTH};
use super::stream::{EventStream, NodeId, TemporalEvent};
use crate::error::{Error, Result};
use crate::numcore::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_attackers: usize,
    pub n_victims: usize,
    pub n_groups: usize,
    pub targets_per_attacker: usize,
    /// Seconds.
    pub horizon: f64,
    pub period: f64,
    pub jitter: f64,
    pub categories: Vec<String>,
    /// Fraction of attackers whose first attack falls in `late_window`.
    pub late_fraction: f64,
    /// Start window for late attackers as fractions of the horizon.
    pub late_window: (f64, f64),
    /// Probability that an event's protocol and port are drawn at random.
    pub feature_noise: f64,
}

impl Default for SynthSpec {
    /// About 5,000 events over 4 categories.
    fn default() -> Self {
        SynthSpec {
            n_attackers: 24,
            n_victims: 24,
            n_groups: 4,
            targets_per_attacker: 3,
            horizon: 12_000.0,
            period: 150.0,
            jitter: 30.0,
            categories: vec![
                "Recon.Scanning".into(),
                "Availability.DoS".into(),
                "Anomaly.Traffic".into(),
                "Availability.DDoS".into(),
            ],
            late_fraction: 0.25,
            late_window: (0.8, 0.95),
            feature_noise: 0.1,
        }
    }
}

/// Protocol, port and mean log flow count per category, cycled.
const PROFILES: [(Protocol, u16, f64); 4] = [
    (Protocol::Tcp, 22, 8.0),
    (Protocol::Udp, 5060, 6.0),
    (Protocol::Other, 60000, 4.0),
    (Protocol::Tcp, 8080, 5.0),
];

/// Spread of the per-victim flow offsets, in log units.
const VICTIM_FLOW_SPREAD: f64 = 3.0;

pub fn synth_stream(spec: &SynthSpec, rng: &mut Rng) -> Result<EventStream> {
    if !(spec.period > 0.0) {
        return Err(Error::Config("period must be positive".into()));
    }
    if spec.n_groups == 0 || spec.categories.is_empty() {
        return Err(Error::Config("need at least one group and one category".into()));
    }
    if spec.n_victims < spec.n_groups {
        return Err(Error::Config("every group needs a victim".into()));
    }
    let k = spec.categories.len();
    let n_late = (spec.late_fraction * spec.n_attackers as f64).round() as usize;
    let late: Vec<usize> = rng.sample_indices(spec.n_attackers, n_late);

    let mut raw: Vec<(f64, usize, TemporalEvent)> = Vec::new();
    let mut seq = 0;
    for a in 0..spec.n_attackers {
        let g = a % spec.n_groups;
        let group_victims: Vec<usize> = (0..spec.n_victims).filter(|v| v % spec.n_groups == g).collect();
        let picks = rng.sample_indices(group_victims.len(), spec.targets_per_attacker);
        let start_base = if late.contains(&a) {
            Some(rng.uniform_range(spec.late_window.0, spec.late_window.1) * spec.horizon)
        } else {
            None
        };
        for p in picks {
            let v = group_victims[p];
            let category = g % k;
            let (proto, port, base_flow) = PROFILES[category % PROFILES.len()];
            let slot = (v / spec.n_groups) as f64;
            let per_group = spec.n_victims.div_ceil(spec.n_groups).max(2) as f64;
            let log_flow = base_flow + VICTIM_FLOW_SPREAD * (slot / (per_group - 1.0) - 0.5);
            let mut t = match start_base {
                Some(s) => s + rng.uniform_range(0.0, spec.period),
                None => rng.uniform_range(0.0, spec.period),
            };
            while t <= spec.horizon {
                let (proto, port) = if rng.bernoulli(spec.feature_noise) {
                    let (p, q, _) = PROFILES[rng.below(PROFILES.len())];
                    (p, q)
                } else {
                    (proto, port)
                };
                let flow = (log_flow + 0.2 * rng.normal()).exp().round().max(1.0) as u64;
                raw.push((
                    t,
                    seq,
                    TemporalEvent {
                        src: NodeId(a),
                        dst: NodeId(spec.n_attackers + v),
                        t,
                        features: encode_features(proto, port, flow),
                        category,
                    },
                ));
                seq += 1;
                let step = spec.period + rng.uniform_range(-spec.jitter, spec.jitter);
                t += step.max(spec.period * 0.01);
            }
        }
    }
    raw.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let events = raw.into_iter().map(|(_, _, e)| e).collect();
    EventStream::new(
        events,
        spec.n_attackers,
        spec.n_victims,
        FEATURE_WIDTH,
        spec.categories.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn default_is_about_five_thousand_events() {
        let s = synth_stream(&SynthSpec::default(), &mut Rng::new(0)).unwrap();
        assert!((4000..6000).contains(&s.len()), "{}", s.len());
        assert_eq!(s.n_categories(), 4);
    }

    #[test]
    fn pair_category_is_constant() {
        let spec = SynthSpec {
            categories: vec!["a".into(), "b".into()],
            ..SynthSpec::default()
        };
        let s = synth_stream(&spec, &mut Rng::new(4)).unwrap();
        let mut seen: BTreeMap<(NodeId, NodeId), usize> = BTreeMap::new();
        for e in s.events() {
            assert_eq!(*seen.entry((e.src, e.dst)).or_insert(e.category), e.category);
        }
        assert!(seen.values().any(|&c| c == 0) && seen.values().any(|&c| c == 1));
    }

    #[test]
    fn rejects_non_positive_period() {
        let spec = SynthSpec {
            period: 0.0,
            ..SynthSpec::default()
        };
        assert!(synth_stream(&spec, &mut Rng::new(0)).is_err());
    }
}
