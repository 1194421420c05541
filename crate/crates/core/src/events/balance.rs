use super::stream::{EventStream, TemporalEvent};
use crate::error::Result;
use crate::numcore::Rng;

/// Median of the non-zero class sizes; the lower middle value for an even count.
pub fn median_class_size(counts: &[usize]) -> Option<usize> {
    let mut sizes: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    if sizes.is_empty() {
        return None;
    }
    sizes.sort_unstable();
    Some(sizes[(sizes.len() - 1) / 2])
}

/// Resamples every present category to the median class size.
///
/// Larger classes are undersampled without replacement; smaller classes keep
/// all of their events plus duplicates drawn with replacement. Each class is
/// resampled on its own, timestamps are never changed, and the result is
/// stably re-sorted by time (duplicates stay adjacent to their originals).
pub fn balance_classes(stream: &EventStream, rng: &mut Rng) -> Result<EventStream> {
    let counts = stream.category_counts();
    let Some(target) = median_class_size(&counts) else {
        return Ok(stream.clone());
    };
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); counts.len()];
    for (i, e) in stream.events().iter().enumerate() {
        by_class[e.category].push(i);
    }

    let mut chosen: Vec<usize> = Vec::with_capacity(target * by_class.len());
    for members in by_class.iter().filter(|m| !m.is_empty()) {
        if members.len() > target {
            chosen.extend(rng.sample_indices(members.len(), target).into_iter().map(|k| members[k]));
        } else {
            chosen.extend(members.iter().copied());
            for _ in members.len()..target {
                chosen.push(members[rng.below(members.len())]);
            }
        }
    }
    let src = stream.events();
    chosen.sort_by(|&a, &b| src[a].t.total_cmp(&src[b].t).then(a.cmp(&b)));
    let events: Vec<TemporalEvent> = chosen.into_iter().map(|i| src[i].clone()).collect();
    stream.with_events(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::stream::NodeId;

    fn stream_with_sizes(sizes: &[usize]) -> EventStream {
        let mut events = Vec::new();
        let mut t = 0.0;
        for (c, &n) in sizes.iter().enumerate() {
            for _ in 0..n {
                events.push(TemporalEvent {
                    src: NodeId(0),
                    dst: NodeId(1),
                    t,
                    features: vec![],
                    category: c,
                });
                t += 1.0;
            }
        }
        // Interleave classes in time.
        events.sort_by(|a, b| (a.t as usize % 3).cmp(&(b.t as usize % 3)));
        for (i, e) in events.iter_mut().enumerate() {
            e.t = i as f64;
        }
        let names = (0..sizes.len()).map(|c| format!("c{c}")).collect();
        EventStream::new(events, 1, 1, 0, names).unwrap()
    }

    #[test]
    fn aligns_to_median() {
        let s = stream_with_sizes(&[10, 4, 2]);
        let b = balance_classes(&s, &mut Rng::new(1)).unwrap();
        assert_eq!(b.category_counts(), vec![4, 4, 4]);
        assert_eq!(b.len(), 12);
        assert!(super::super::stream::is_sorted_by_time(b.events()));
    }

    #[test]
    fn at_median_is_identity() {
        let s = stream_with_sizes(&[3, 3, 3]);
        let b = balance_classes(&s, &mut Rng::new(1)).unwrap();
        assert_eq!(b, s);
    }

    #[test]
    fn single_class_unchanged() {
        let s = stream_with_sizes(&[7]);
        assert_eq!(balance_classes(&s, &mut Rng::new(2)).unwrap(), s);
    }

    #[test]
    fn median_of_even_count_is_lower_middle() {
        assert_eq!(median_class_size(&[8, 2, 4, 6]), Some(4));
        assert_eq!(median_class_size(&[0, 0]), None);
    }
}
