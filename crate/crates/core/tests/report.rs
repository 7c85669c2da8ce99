use travista::bench::{generate_corpus, WorkloadSpec};
use travista::report::{render_report, Report};
use travista::store::{AggregateParams, Store};

fn focal_store() -> (Store, travista::bench::GroundTruth) {
    let corpus = generate_corpus(&WorkloadSpec::compose_post()).unwrap();
    let store = Store::in_memory();
    for t in corpus.traces {
        store.ingest(t).unwrap();
    }
    (store, corpus.ground_truth.unwrap())
}

#[test]
fn lone_trace_has_no_outliers() {
    let mut spec = WorkloadSpec::compose_post();
    spec.traces_per_run = 1;
    spec.anomalies.focal = None;
    let store = Store::in_memory();
    let trace = generate_corpus(&spec).unwrap().traces.remove(0);
    let id = trace.trace_id.clone();
    store.ingest(trace).unwrap();
    let (p, _) = store.snapshot().load_trace_aggregates(&id, AggregateParams::default()).unwrap();
    let r = Report::from_payload(&p);
    assert!(r.outlier_events.is_empty());
    assert!(r.outlier_edges.is_empty());
    assert_eq!(r.latency_outliers().count(), 0);
    assert!(r.ranking.iter().all(|t| t.slowdown == 1.0 && t.percentile == 1.0));
    let text = render_report(&p);
    assert!(text.contains("outlier events (frequency < 0.10): 0"));
    assert!(text.contains("outlier edges (frequency < 0.10): 0"));
}

#[test]
fn injected_anomaly_is_diagnosed() {
    let (store, truth) = focal_store();
    let (p, _) = store
        .snapshot()
        .load_trace_aggregates(&truth.trace_id, AggregateParams::default())
        .unwrap();
    let r = Report::from_payload(&p);
    assert_eq!(r.ranking[0].task_id, truth.task_id);
    assert!(r.ranking[0].beyond_peer_range);
    assert!(r.ranking[0].slowdown > 5.0);

    let rare = truth.rare_label.as_deref().unwrap();
    let flagged: Vec<_> = r.outlier_events.iter().filter(|e| e.label == rare).collect();
    assert_eq!(flagged.len(), 1);
    assert_eq!(flagged[0].task_id, truth.task_id);
    assert!(flagged[0].frequency < 0.1);
    assert!(r.outlier_events.iter().all(|e| e.label == rare));

    assert!(r
        .contention_windows
        .iter()
        .any(|w| w.task_id == truth.task_id && w.process_id == truth.process_id));
}

#[test]
fn report_values_come_from_the_payload() {
    let (store, truth) = focal_store();
    let params = AggregateParams { bins: 12, threshold: 0.5, rarity_cutoff: 0.2 };
    let (p, _) = store.snapshot().load_trace_aggregates(&truth.trace_id, params).unwrap();
    let r = Report::from_payload(&p);
    assert_eq!((r.bins, r.threshold, r.rarity_cutoff), (12, 0.5, 0.2));

    assert_eq!(r.ranking.len(), p.lanes.len());
    for t in &r.ranking {
        let lane = p.lanes.iter().position(|id| *id == t.task_id).unwrap();
        assert_eq!(t.duration_us, p.latency[lane].duration_us);
        assert_eq!(t.median_us, p.latency[lane].median_us);
        assert_eq!(Some(t.bin), p.histograms[lane].highlight_bin);
        assert_eq!(t.bins, 12);
    }
    let outliers: usize = p.event_rarities.values().filter(|r| r.outlier).count();
    assert_eq!(r.outlier_events.len(), outliers);
    for e in &r.outlier_events {
        assert_eq!(e.frequency, p.event_rarities[&e.event_id].rarity.frequency);
    }
    let edges: usize = p.edge_frequencies.values().filter(|f| f.outlier).count();
    assert_eq!(r.outlier_edges.len(), edges);
    let flagged: usize = p
        .contention
        .values()
        .map(|tl| tl.flagged_windows().len())
        .sum();
    assert_eq!(r.contention_windows.len(), flagged);
}

#[test]
fn rendering_is_deterministic() {
    let (store, truth) = focal_store();
    let snap = store.snapshot();
    let a = snap.load_trace_aggregates(&truth.trace_id, AggregateParams::default()).unwrap().0;
    let b = snap.load_trace_aggregates(&truth.trace_id, AggregateParams::default()).unwrap().0;
    assert_eq!(render_report(&a), render_report(&b));
}
