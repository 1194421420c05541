use tgn_core::aggregators::AggregatorKind;
use tgn_core::config::Config;
use tgn_core::engine::{batches, train, EarlyStopping, Engine, Mode, Mutation, Phase};
use tgn_core::events::{synth_stream, temporal_split, EventStream, NodeId, SynthSpec, TemporalEvent};
use tgn_core::numcore::Rng;
use tgn_core::persist::Container;
use tgn_core::Error;

fn small_config(kind: AggregatorKind) -> Config {
    let mut c = Config::default();
    c.aggregator = kind;
    c.d_node = 8;
    c.d_time = 6;
    c.d_message = 8;
    c.d_memory = 4;
    c.d_gru = 3;
    c.window = 5;
    c.batch_size = 4;
    c.lr = 1e-2;
    c.seed = 11;
    c
}

fn ev(src: usize, dst: usize, t: f64, category: usize) -> TemporalEvent {
    TemporalEvent {
        src: NodeId(src),
        dst: NodeId(dst),
        t,
        features: vec![t.sin(), (src + dst) as f64 * 0.1],
        category,
    }
}

/// Attackers 0..3, victims 3..7, two categories.
fn space() -> EventStream {
    EventStream::new(Vec::new(), 3, 4, 2, vec!["a".into(), "b".into()]).unwrap()
}

fn toy_stream(n: usize, seed: u64) -> EventStream {
    let mut rng = Rng::new(seed);
    let mut t = 0.0;
    let events = (0..n)
        .map(|_| {
            t += rng.uniform_range(0.0, 5.0);
            let s = rng.below(3);
            let d = 3 + rng.below(4);
            ev(s, d, t, (s + d) % 2)
        })
        .collect();
    space().with_events(events).unwrap()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn first_batch_has_nothing_to_flush() {
    let mut e = Engine::new(&small_config(AggregatorKind::Bita), &space()).unwrap();
    assert!(e.state().store.is_empty());
    let out = e.process_batch(&[ev(0, 3, 1.0, 0), ev(1, 4, 2.0, 1)], Mode::Eval, 0).unwrap();
    assert_eq!(out.positive.len(), 2);
    assert!(out.positive.iter().all(|p| (0.0..=1.0).contains(p)));
    assert_eq!(e.state().memory.state().max_abs(), 0.0, "no memory update on the first batch");
    assert_eq!(e.state().store.len(), 4);
}

#[test]
fn events_in_one_batch_share_pre_batch_memory() {
    let cfg = small_config(AggregatorKind::Mean);
    let warm = [ev(0, 3, 1.0, 0), ev(0, 4, 2.0, 1), ev(1, 3, 3.0, 0)];
    let first = ev(0, 3, 10.0, 0);
    let second = ev(0, 3, 12.0, 0);

    let mut together = Engine::new(&cfg, &space()).unwrap();
    together.process_batch(&warm, Mode::Eval, 0).unwrap();
    let both = together.process_batch(&[first.clone(), second.clone()], Mode::Eval, 0).unwrap();

    let mut alone = Engine::new(&cfg, &space()).unwrap();
    alone.process_batch(&warm, Mode::Eval, 0).unwrap();
    let only_second = alone.process_batch(&[second], Mode::Eval, 0).unwrap();

    // The first event of the batch did not touch the memory the second one sees.
    assert_eq!(both.positive[1].to_bits(), only_second.positive[0].to_bits());
    assert_eq!(bits(&both.category[1]), bits(&only_second.category[0]));
}

#[test]
fn raw_store_keeps_only_the_latest_interaction() {
    let mut e = Engine::new(&small_config(AggregatorKind::Last), &space()).unwrap();
    e.process_batch(&[ev(0, 3, 5.0, 0)], Mode::Eval, 0).unwrap();
    e.process_batch(&[ev(0, 4, 7.0, 1)], Mode::Eval, 0).unwrap();
    let slot = e.state().store.get(NodeId(0)).unwrap();
    assert_eq!((slot.t, slot.other), (7.0, NodeId(4)));
    // The t=5 message was flushed into memory at the second batch.
    assert_eq!(e.state().memory.last_update(NodeId(0)), 5.0);
    assert_eq!(e.state().store.len(), 2);
}

#[test]
fn out_of_order_batches_are_rejected() {
    let mut e = Engine::new(&small_config(AggregatorKind::Mean), &space()).unwrap();
    e.process_batch(&[ev(0, 3, 5.0, 0)], Mode::Eval, 0).unwrap();
    let err = e.process_batch(&[ev(1, 4, 4.0, 0)], Mode::Eval, 0).unwrap_err();
    assert!(matches!(err, Error::Causality(_)), "{err}");
    let err = e.process_batch(&[ev(1, 4, 9.0, 0), ev(1, 4, 8.0, 0)], Mode::Eval, 0).unwrap_err();
    assert!(matches!(err, Error::Causality(_)), "{err}");
}

#[test]
fn batch_phases_run_in_causal_order() {
    let mut e = Engine::new(&small_config(AggregatorKind::Bita), &space()).unwrap();
    e.process_batch(&[ev(0, 3, 1.0, 0)], Mode::Train, 0).unwrap();
    assert_eq!(
        e.phases(),
        [Phase::Flush, Phase::Embed, Phase::Predict, Phase::Loss, Phase::Step, Phase::Store]
    );
    e.process_batch(&[ev(0, 3, 2.0, 0)], Mode::Eval, 0).unwrap();
    assert_eq!(e.phases(), [Phase::Flush, Phase::Embed, Phase::Predict, Phase::Loss, Phase::Store]);
    e.process_batch(&[ev(0, 3, 3.0, 0)], Mode::Replay, 0).unwrap();
    assert_eq!(e.phases(), [Phase::Flush, Phase::Store]);
    e.set_mutation(Mutation::FlushBeforePredict);
    e.process_batch(&[ev(0, 3, 4.0, 0)], Mode::Eval, 0).unwrap();
    assert_eq!(e.phases()[0], Phase::Store, "the mutation stores before predicting");
}

fn embedding_oracle(e: &Engine, node: NodeId, t: f64) -> Vec<f64> {
    let p = &e.model.params;
    let omega = p.get(e.model.time.omega).data();
    let phi = p.get(e.model.time.phi).data();
    let mut x: Vec<f64> = e.state().memory.row(node).to_vec();
    let dt = t - e.state().memory.last_update(node);
    x.extend(omega.iter().zip(phi).map(|(w, f)| (w * dt + f).cos()));
    let w = p.get(e.model.embed.w);
    let b = p.get(e.model.embed.b.unwrap()).data();
    (0..w.rows())
        .map(|i| b[i] + w.row_slice(i).iter().zip(&x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

#[test]
fn embedding_matches_concat_matmul_oracle() {
    let cfg = small_config(AggregatorKind::Attention);
    let mut e = Engine::new(&cfg, &space()).unwrap();
    // Fresh node: zero memory, zero elapsed time.
    let fresh = e.compute_embedding(NodeId(5), 0.0).unwrap();
    for (a, b) in fresh.iter().zip(embedding_oracle(&e, NodeId(5), 0.0)) {
        assert!((a - b).abs() < 1e-12);
    }
    let stream = toy_stream(40, 3);
    for b in batches(stream.events(), 4) {
        e.process_batch(b, Mode::Train, 0).unwrap();
    }
    assert!(e.state().memory.state().max_abs() > 0.0);
    let t = e.state().clock + 3.5;
    for n in 0..7 {
        let got = e.compute_embedding(NodeId(n), t).unwrap();
        let want = embedding_oracle(&e, NodeId(n), t);
        assert_eq!(got.len(), cfg.d_node);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "node {n}: {a} vs {b}");
        }
    }
    // Two never-touched nodes with equal elapsed time embed identically.
    let mut f = Engine::new(&cfg, &space()).unwrap();
    assert_eq!(
        bits(&f.compute_embedding(NodeId(3), 2.0).unwrap()),
        bits(&f.compute_embedding(NodeId(4), 2.0).unwrap())
    );
    f.process_batch(&[ev(0, 3, 1.0, 0)], Mode::Eval, 0).unwrap();
    f.process_batch(&[ev(1, 4, 2.0, 0)], Mode::Eval, 0).unwrap();
    let err = f.compute_embedding(NodeId(0), 0.5).unwrap_err();
    assert!(matches!(err, Error::Causality(_)), "{err}");
}

#[test]
fn reset_restores_zero_memory_and_identical_replays() {
    let stream = toy_stream(30, 8);
    let mut e = Engine::new(&small_config(AggregatorKind::Bita), &space()).unwrap();
    let run = |e: &mut Engine| {
        e.reset_state();
        e.reseed_negatives(99);
        let mut out = Vec::new();
        for b in batches(stream.events(), 4) {
            out.extend(e.process_batch(b, Mode::Eval, 3).unwrap().positive);
        }
        out
    };
    let a = run(&mut e);
    assert!(e.state().memory.state().max_abs() > 0.0);
    e.reset_state();
    assert_eq!(e.state().memory.state().max_abs(), 0.0);
    assert!(e.state().store.is_empty());
    let b = run(&mut e);
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn every_aggregator_trains_on_a_batch() {
    let stream = toy_stream(24, 5);
    for kind in AggregatorKind::ALL {
        let mut e = Engine::new(&small_config(kind), &space()).unwrap();
        let before = e.model.params.clone();
        for b in batches(stream.events(), 6) {
            let out = e.process_batch(b, Mode::Train, 0).unwrap();
            assert!(out.loss.unwrap().total.is_finite());
        }
        let moved = |prefix: &str| {
            before
                .iter()
                .filter(|(_, name, _)| name.starts_with(prefix))
                .any(|(id, _, a)| a != e.model.params.get(id))
        };
        assert!(moved("memory."), "{kind}: memory updater untouched");
        assert!(moved("message."), "{kind}: message function untouched");
        if matches!(kind, AggregatorKind::Bita | AggregatorKind::BiGru | AggregatorKind::Attention) {
            assert!(moved("agg."), "{kind}: aggregator untouched");
        }
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_bitwise() {
    let stream = toy_stream(60, 2);
    let split = temporal_split(&stream);
    let mut cfg = small_config(AggregatorKind::Bita);
    cfg.lr = 0.0;
    cfg.epochs = 1;
    let mut e = Engine::new(&cfg, &stream).unwrap();
    let before = e.model.params.clone();
    train(&mut e, &split.train, &split.validation).unwrap();
    assert_eq!(e.model.params, before);
}

#[test]
fn patience_five_stops_after_six_evaluations() {
    let mut s = EarlyStopping::new(5);
    let mut evaluations = 0;
    for loss in (0..50).map(|i| 1.0 + i as f64) {
        evaluations += 1;
        s.observe(loss);
        if s.should_stop() {
            break;
        }
    }
    assert_eq!(evaluations, 6);
    let mut s = EarlyStopping::new(2);
    assert!(s.observe(3.0));
    assert!(!s.observe(3.0));
    assert!(s.observe(2.0));
    assert!(!s.should_stop());
}

#[test]
fn training_loss_falls_on_a_periodic_stream() {
    let stream = synth_stream(&SynthSpec::default(), &mut Rng::new(4)).unwrap();
    let split = temporal_split(&stream);
    let mut cfg = Config::default();
    cfg.epochs = 5;
    cfg.patience = 50;
    let mut e = Engine::new(&cfg, &stream).unwrap();
    let log = train(&mut e, &split.train, &split.validation).unwrap();
    let losses: Vec<f64> = log.epochs.iter().map(|l| l.train_loss).collect();
    assert_eq!(losses.len(), 5);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let stream = toy_stream(80, 21);
    let split = temporal_split(&stream);
    let mut cfg = small_config(AggregatorKind::Bita);
    cfg.epochs = 3;
    let run = || {
        let mut e = Engine::new(&cfg, &stream).unwrap();
        let log = train(&mut e, &split.train, &split.validation).unwrap();
        (e.to_container().to_bytes(), log)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la, lb);
    assert!(a == b, "checkpoints differ");
}

#[test]
fn checkpoint_round_trip_and_resume() {
    let stream = toy_stream(48, 13);
    let cfg = small_config(AggregatorKind::Bita);
    let chunks = batches(stream.events(), 6);
    let (head, tail) = chunks.split_at(4);

    let mut straight = Engine::new(&cfg, &stream).unwrap();
    for b in head {
        straight.process_batch(b, Mode::Train, 0).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    straight.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let mut resumed = Engine::load(&path).unwrap();
    assert_eq!(resumed.to_container().to_bytes(), bytes, "save -> load -> save");
    assert!(resumed.state() == straight.state());

    for b in tail {
        let x = straight.process_batch(b, Mode::Train, 2).unwrap();
        let y = resumed.process_batch(b, Mode::Train, 2).unwrap();
        assert_eq!(bits(&x.positive), bits(&y.positive));
        assert_eq!(bits(&x.negative), bits(&y.negative));
    }
    assert_eq!(straight.to_container().to_bytes(), resumed.to_container().to_bytes());
}

#[test]
fn checkpoint_rejects_mismatched_or_damaged_files() {
    let cfg = small_config(AggregatorKind::Mean);
    let e = Engine::new(&cfg, &space()).unwrap();
    let bytes = e.to_container().to_bytes();

    let bigger = EventStream::new(Vec::new(), 3, 5, 2, vec!["a".into(), "b".into()]).unwrap();
    let mut other = Engine::new(&cfg, &bigger).unwrap();
    let err = other.restore_container(&e.to_container()).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)), "{err}");

    let err = Container::read(&bytes[..bytes.len() / 2]).unwrap_err();
    assert!(err.to_string().contains("truncated"), "{err}");
    let mut bad = bytes.clone();
    bad[8..12].copy_from_slice(&2u32.to_le_bytes());
    let err = Container::read(bad.as_slice()).unwrap_err();
    assert!(err.to_string().contains("version 2"), "{err}");
}

#[test]
fn unseen_node_gets_a_valid_embedding_at_eval_time() {
    let stream = toy_stream(30, 1);
    let mut e = Engine::new(&small_config(AggregatorKind::Bita), &stream).unwrap();
    // Victim 6 never appears in this prefix.
    let prefix: Vec<TemporalEvent> = stream.events().iter().filter(|x| x.dst != NodeId(6)).cloned().collect();
    for b in batches(&prefix, 4) {
        e.process_batch(b, Mode::Eval, 0).unwrap();
    }
    assert!(e.state().memory.row(NodeId(6)).iter().all(|&x| x == 0.0));
    let t = e.state().clock + 1.0;
    let out = e.process_batch(&[ev(2, 6, t, 0)], Mode::Eval, 0).unwrap();
    assert!(out.positive[0].is_finite());
}
