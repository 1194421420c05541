use std::collections::BTreeSet;

use tgn_core::events::*;
use tgn_core::numcore::Rng;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/alerts_sample.csv");

fn fixture_stream() -> EventStream {
    parse_csv(FIXTURE.as_ref(), &SchemaConfig::default()).unwrap()
}

fn sorted(s: &EventStream) -> bool {
    is_sorted_by_time(s.events())
}

fn synth(seed: u64) -> EventStream {
    synth_stream(&SynthSpec::default(), &mut Rng::new(seed)).unwrap()
}

#[test]
fn sample_alerts_become_three_events_over_two_by_two_nodes() {
    let s = fixture_stream();
    assert_eq!(s.len(), 3);
    assert_eq!(s.n_attackers(), 2);
    assert_eq!(s.n_victims(), 2);
    assert_eq!(
        s.category_names(),
        &["Recon scan", "Availability Dos", "Anomaly.Traffic"]
    );
    let e = s.events();
    // 24h40m and 3d20m after the first alert.
    assert_eq!(e[0].t, 0.0);
    assert_eq!(e[1].t, 88_800.0);
    assert_eq!(e[2].t, 260_400.0);
    assert_eq!((e[1].src, e[1].dst), (e[2].src, e[2].dst));
    assert_ne!(e[0].src, e[1].src);
    assert_eq!(e[0].features, encode_features(Protocol::Tcp, 22, 17094));
    assert_eq!(e[2].features, encode_features(Protocol::Udp, 22, 39));
    assert_eq!(s.node_labels()[0], "185.192.59.136");
    assert_eq!(s.node_labels()[3], "142.252.32.63");
}

#[test]
fn header_only_csv_is_empty() {
    let csv = "detect_time,flow_count,source_ip,target_ip,port,protocol,category\n";
    let s = parse_csv_reader(csv.as_bytes(), &SchemaConfig::default()).unwrap();
    assert!(s.is_empty());
    assert_eq!(s.node_count(), 0);
}

#[test]
fn equal_timestamps_keep_file_order() {
    let csv = "detect_time,flow_count,source_ip,target_ip,port,protocol,category\n\
               2019-03-11T00:05:00+02:00,1,a,x,22,TCP,first\n\
               2019-03-11T00:00:00+02:00,1,b,y,22,TCP,early\n\
               2019-03-11T00:05:00+02:00,1,c,z,22,TCP,second\n\
               2019-03-10T23:05:00+01:00,1,d,w,22,TCP,third\n";
    let s = parse_csv_reader(csv.as_bytes(), &SchemaConfig::default()).unwrap();
    let names: Vec<&str> = s
        .events()
        .iter()
        .map(|e| s.category_names()[e.category].as_str())
        .collect();
    assert_eq!(names, ["early", "first", "second", "third"]);
}

#[test]
fn malformed_timestamp_names_its_line() {
    let csv = "detect_time,flow_count,source_ip,target_ip,port,protocol,category\n\
               2019-03-11T00:05:00+02:00,1,a,x,22,TCP,c\n\
               yesterday,1,a,x,22,TCP,c\n";
    let err = parse_csv_reader(csv.as_bytes(), &SchemaConfig::default()).unwrap_err();
    assert!(err.to_string().starts_with("line 3:"), "{err}");
}

#[test]
fn csv_round_trip_is_identity() {
    let schema = SchemaConfig::default();
    let text = std::fs::read_to_string(FIXTURE).unwrap();
    let records = read_records(text.as_bytes(), &schema).unwrap();
    let mut out = Vec::new();
    write_records(&mut out, &records, &schema).unwrap();
    assert_eq!(String::from_utf8(out.clone()).unwrap(), text);
    assert_eq!(read_records(out.as_slice(), &schema).unwrap(), records);
}

#[test]
fn canonical_file_round_trip() {
    let s = synth(4);
    let mut buf = Vec::new();
    write_stream(&mut buf, &s).unwrap();
    let back = read_stream(buf.as_slice()).unwrap();
    assert_eq!(back, s);
    let mut again = Vec::new();
    write_stream(&mut again, &back).unwrap();
    assert_eq!(buf, again);
    assert!(read_stream(&buf[..buf.len() - 3]).is_err());
    let mut bumped = buf.clone();
    bumped[8] = 9;
    assert!(read_stream(bumped.as_slice()).unwrap_err().to_string().contains("version"));
}

#[test]
fn negative_from_two_victims_is_the_other() {
    let s = fixture_stream();
    let mut rng = Rng::new(1);
    let victims: Vec<NodeId> = s.victims().collect();
    for _ in 0..100 {
        assert_eq!(sample_negative(victims[0], &s, &mut rng).unwrap(), victims[1]);
    }
}

#[test]
fn negative_needs_two_victims() {
    let csv = "detect_time,flow_count,source_ip,target_ip,port,protocol,category\n\
               2019-03-11T00:05:00+02:00,1,a,x,22,TCP,c\n";
    let s = parse_csv_reader(csv.as_bytes(), &SchemaConfig::default()).unwrap();
    let v = s.victims().next().unwrap();
    assert!(sample_negative(v, &s, &mut Rng::new(0)).is_err());
}

fn hundred_victims() -> EventStream {
    let events = vec![TemporalEvent {
        src: NodeId(0),
        dst: NodeId(1),
        t: 0.0,
        features: vec![],
        category: 0,
    }];
    EventStream::new(events, 1, 100, 0, vec!["c".into()]).unwrap()
}

#[test]
fn negatives_are_uniform_within_three_sigma() {
    let s = hundred_victims();
    let exclude = NodeId(1);
    let mut rng = Rng::new(2024);
    let draws = 100_000;
    let mut counts = vec![0usize; s.node_count()];
    for _ in 0..draws {
        counts[sample_negative(exclude, &s, &mut rng).unwrap().index()] += 1;
    }
    assert_eq!(counts[exclude.index()], 0);
    assert_eq!(counts[0], 0);
    let p = 1.0 / 99.0;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for v in s.victims().filter(|&v| v != exclude) {
        let c = counts[v.index()] as f64;
        assert!((c - mean).abs() <= 3.0 * sigma, "victim {v}: {c} vs {mean} +- {sigma}");
    }
}

#[test]
fn negatives_never_hit_the_positive() {
    let s = hundred_victims();
    let mut rng = Rng::new(5);
    for i in 0..10_000 {
        let pos = NodeId(1 + i % 100);
        assert_ne!(sample_negative(pos, &s, &mut rng).unwrap(), pos);
    }
    let c = sample_candidates(NodeId(7), &s, 50, &mut rng).unwrap();
    let set: BTreeSet<_> = c.iter().collect();
    assert_eq!(set.len(), 50);
    assert!(!set.contains(&NodeId(7)));
}

#[test]
fn split_partitions_cover_input_in_order() {
    let s = synth(11);
    let sp = temporal_split(&s);
    assert!(sp.spec.t_validation < sp.spec.t_test);
    for part in [&sp.train, &sp.validation, &sp.test] {
        assert!(sorted(part));
    }
    let mut joined = sp.train.events().to_vec();
    joined.extend_from_slice(sp.validation.events());
    joined.extend_from_slice(sp.test.events());
    assert_eq!(joined, s.events());
}

#[test]
fn one_to_hundred_splits_70_15_15() {
    let events = (1..=100)
        .map(|t| TemporalEvent {
            src: NodeId(0),
            dst: NodeId(1),
            t: f64::from(t),
            features: vec![],
            category: 0,
        })
        .collect();
    let s = EventStream::new(events, 1, 1, 0, vec!["c".into()]).unwrap();
    let sp = temporal_split(&s);
    assert_eq!((sp.spec.t_validation, sp.spec.t_test), (70.0, 85.0));
    assert_eq!((sp.train.len(), sp.validation.len(), sp.test.len()), (70, 15, 15));
}

/// 100 nodes, 20 of which first appear after the validation cut.
fn late_node_stream() -> EventStream {
    let mut events = Vec::new();
    for i in 0..80 {
        events.push(TemporalEvent {
            src: NodeId(i % 40),
            dst: NodeId(50 + i % 40),
            t: i as f64,
            features: vec![],
            category: 0,
        });
    }
    for i in 0..20 {
        let (src, dst) = if i < 10 { (40 + i, 50 + i) } else { (i - 10, 80 + i) };
        events.push(TemporalEvent {
            src: NodeId(src),
            dst: NodeId(dst),
            t: 80.0 + i as f64,
            features: vec![],
            category: 0,
        });
    }
    EventStream::new(events, 50, 50, 0, vec!["c".into()]).unwrap()
}

#[test]
fn mask_takes_ten_percent_from_late_nodes() {
    let s = late_node_stream();
    assert_eq!(s.active_nodes().len(), 100);
    for seed in 0..20 {
        let sp = split_at_percentiles(&s, 80.0, 90.0);
        let m = inductive_mask(&s, &sp, &mut Rng::new(seed), 0.1);
        assert_eq!(m.spec.new_nodes.len(), 10);
        assert!(m.spec.new_nodes.iter().all(|n| {
            let first = s.events().iter().find(|e| e.src == *n || e.dst == *n).unwrap();
            first.t > sp.spec.t_validation
        }));
    }
}

#[test]
fn masked_training_never_touches_new_nodes() {
    for seed in 0..10 {
        let s = synth(seed);
        let sp = temporal_split(&s);
        let m = inductive_mask(&s, &sp, &mut Rng::new(seed + 100), 0.1);
        assert!(!m.spec.new_nodes.is_empty());
        for e in m.train.events() {
            assert!(!m.spec.new_nodes.contains(&e.src) && !m.spec.new_nodes.contains(&e.dst));
        }
        assert!(sorted(&m.train));
        for n in &m.spec.new_nodes {
            assert!(sp.train.events().iter().all(|e| e.src != *n && e.dst != *n));
        }
    }
}

#[test]
fn balancing_keeps_times_categories_and_order() {
    let s = synth(3);
    let b = balance_classes(&s, &mut Rng::new(9)).unwrap();
    assert!(sorted(&b));
    let median = median_class_size(&s.category_counts()).unwrap();
    assert!(b.category_counts().iter().all(|&c| c == median));
    let times: BTreeSet<u64> = s.events().iter().map(|e| e.t.to_bits()).collect();
    for e in b.events() {
        assert!(times.contains(&e.t.to_bits()));
        assert!(s.events().contains(e));
    }
}

#[test]
fn zero_jitter_intervals_fill_one_bin() {
    let spec = SynthSpec {
        jitter: 0.0,
        feature_noise: 0.0,
        ..SynthSpec::default()
    };
    let s = synth_stream(&spec, &mut Rng::new(8)).unwrap();
    let st = stream_stats(&s, 20.0);
    assert_eq!(st.per_pair.counts.len(), 1);
    assert_eq!(st.per_pair.mode(), Some(140.0));
}

#[test]
fn jittered_interval_mode_is_near_period() {
    for seed in 0..5 {
        let st = stream_stats(&synth(seed), 20.0);
        let mode = st.per_pair.mode().unwrap();
        assert!((120.0..=180.0).contains(&mode), "mode {mode}");
    }
}

#[test]
fn cumulative_counts_end_at_event_count() {
    let s = synth(2);
    let st = stream_stats(&s, 30.0);
    assert!(st.cumulative.windows(2).all(|w| w[0].1 <= w[1].1 && w[0].0 < w[1].0));
    assert_eq!(st.cumulative.last().unwrap().1, s.len());
    let total: usize = st.category_counts.iter().map(|c| c.1).sum();
    assert_eq!(total, s.len());
}
