use std::collections::BTreeMap;

use travista::bench::*;
use travista::model::{validate_dag, EdgeKind, Endpoint};
use travista::store::{AggregateParams, Store};

fn small(n: usize) -> WorkloadSpec {
    let mut spec = WorkloadSpec::compose_post();
    spec.traces_per_run = n;
    spec.anomalies.focal = None;
    spec
}

#[test]
fn bundled_spec_is_valid() {
    WorkloadSpec::compose_post().validate().unwrap();
}

#[test]
fn zero_traces_gives_empty_corpus() {
    let corpus = generate_corpus(&small(0)).unwrap();
    assert!(corpus.traces.is_empty());
    assert!(corpus.ground_truth.is_none());
}

#[test]
fn generation_is_deterministic() {
    let a = generate_corpus(&small(50)).unwrap();
    let b = generate_corpus(&small(50)).unwrap();
    let bytes = |c: &Corpus| -> Vec<u8> { c.traces.iter().flat_map(|t| t.to_canonical_json()).collect() };
    assert_eq!(bytes(&a), bytes(&b));

    let mut other = small(50);
    other.seed += 1;
    assert_ne!(bytes(&a), bytes(&generate_corpus(&other).unwrap()));
}

#[test]
fn prefix_of_corpus_does_not_depend_on_length() {
    let short = generate_corpus(&small(10)).unwrap();
    let long = generate_corpus(&small(40)).unwrap();
    assert_eq!(short.traces[..], long.traces[..10]);
}

#[test]
fn generated_traces_validate() {
    let corpus = generate_corpus(&WorkloadSpec::compose_post()).unwrap();
    for t in &corpus.traces {
        let report = validate_dag(t);
        assert!(report.is_ok(), "{}: {:?}", t.trace_id, report.errors);
    }
}

#[test]
fn rare_event_rate_zero_never_emits() {
    let mut spec = small(300);
    spec.anomalies.rare_events[0].rate = 0.0;
    let label = spec.anomalies.rare_events[0].label.clone();
    let corpus = generate_corpus(&spec).unwrap();
    assert!(corpus
        .traces
        .iter()
        .flat_map(|t| &t.events)
        .all(|e| e.label != label));
}

#[test]
fn rare_event_rate_matches_injection() {
    let spec = small(2000);
    let rare = &spec.anomalies.rare_events[0];
    let corpus = generate_corpus(&spec).unwrap();
    let mut parents = 0;
    let mut with = 0;
    for t in &corpus.traces {
        for task in t.tasks.iter().filter(|k| k.task_type == rare.task_type) {
            parents += 1;
            if t.events.iter().any(|e| e.task_id == task.task_id && e.label == rare.label) {
                with += 1;
            }
        }
    }
    assert!(parents >= 2000);
    let rate = with as f64 / parents as f64;
    assert!((0.03..=0.07).contains(&rate), "rate {rate}");
}

#[test]
fn rare_edge_frequency_matches_injection() {
    let spec = small(1500);
    let rare = spec.anomalies.rare_edges[0].clone();
    let store = Store::in_memory();
    for t in generate_corpus(&spec).unwrap().traces {
        store.ingest(t).unwrap();
    }
    let f = travista::aggregation::edge_frequency(&store.snapshot(), &rare.parent, &rare.child).unwrap();
    assert!(f.parent_instance_count >= 1000);
    assert!((f.frequency - rare.rate).abs() <= 0.02, "{}", f.frequency);
}

#[test]
fn focal_anomaly_has_ground_truth() {
    let spec = WorkloadSpec::compose_post();
    let focal = spec.anomalies.focal.clone().unwrap();
    let corpus = generate_corpus(&spec).unwrap();
    let truth = corpus.ground_truth.unwrap();
    assert_eq!(truth.trace_id, trace_id_for(focal.trace_index));
    let trace = corpus.traces.iter().find(|t| t.trace_id == truth.trace_id).unwrap();
    let task = trace.task(&truth.task_id).unwrap();
    assert_eq!(task.task_type, focal.task_type);
    let median = spec.task_types[&focal.task_type].latency.median_us;
    assert_eq!(task.duration(), (median * focal.latency_multiplier) as i64);
    assert!(trace
        .events
        .iter()
        .any(|e| e.task_id == task.task_id && Some(&e.label) == focal.rare_label.as_ref()));

    let burst = focal.contention_burst.unwrap();
    assert_eq!(truth.burst_trace_ids.len(), burst.traces);
    assert_eq!(corpus.traces.len(), spec.traces_per_run + burst.traces);
    for id in &truth.burst_trace_ids {
        let b = corpus.traces.iter().find(|t| &t.trace_id == id).unwrap();
        assert_eq!(b.tasks[0].process_id, truth.process_id);
        assert!(b.tasks[0].start_ts >= task.start_ts && b.tasks[0].start_ts <= task.end_ts);
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let mut s = small(5);
    s.anomalies.rare_events[0].rate = 1.5;
    assert!(generate_corpus(&s).is_err());

    let mut s = small(5);
    s.root = "nope".into();
    assert!(s.validate().is_err());

    let mut s = small(5);
    s.task_types
        .get_mut("redis:zadd")
        .unwrap()
        .calls
        .push(CallSpec { child: "nginx:compose_post".into(), probability: 0.1 });
    assert!(s.validate().unwrap_err().0.contains("cycle"));

    let mut s = small(5);
    s.task_types.get_mut("redis:zadd").unwrap().events[0].label = "shard 12".into();
    assert!(s.validate().is_err());

    assert!(WorkloadSpec::from_json("{}").is_err());
}

#[test]
fn spec_json_round_trips() {
    let spec = WorkloadSpec::compose_post();
    let json = serde_json::to_string(&spec).unwrap();
    assert_eq!(WorkloadSpec::from_json(&json).unwrap(), spec);
}

#[test]
fn single_copy_renames_but_keeps_structure() {
    let base = generate_corpus(&small(5)).unwrap().traces;
    let copy = replicate_corpus(&base, 1, COPY_SHIFT_US);
    assert_eq!(copy.len(), base.len());
    for (a, b) in base.iter().zip(&copy) {
        assert_ne!(a.trace_id, b.trace_id);
        assert_eq!(a.tasks.len(), b.tasks.len());
        assert_eq!(a.start_ts, b.start_ts);
        for (x, y) in a.tasks.iter().zip(&b.tasks) {
            assert_ne!(x.task_id, y.task_id);
            assert_eq!((x.task_type.as_str(), x.duration()), (y.task_type.as_str(), y.duration()));
        }
        for (x, y) in a.events.iter().zip(&b.events) {
            assert_ne!(x.event_id, y.event_id);
            assert_eq!(x.label, y.label);
        }
        for (x, y) in a.edges.iter().zip(&b.edges) {
            assert_eq!(x.kind, y.kind);
        }
        assert!(validate_dag(b).is_ok());
    }
}

#[test]
fn copies_are_shifted_unless_overlapping() {
    let base = generate_corpus(&small(3)).unwrap().traces;
    let shifted = replicate_corpus(&base, 3, 700);
    assert_eq!(shifted.len(), 9);
    assert_eq!(shifted[6].start_ts - base[0].start_ts, 1400);
    let overlap = replicate_corpus(&base, 3, 0);
    assert_eq!(overlap[6].start_ts, base[0].start_ts);
    assert_eq!(overlap[6].trace_id, format!("{}.c2", base[0].trace_id));
}

#[test]
fn replication_keeps_frequencies_and_scales_counts() {
    let base = generate_corpus(&small(40)).unwrap().traces;
    let stores: Vec<Store> = [1, 3]
        .iter()
        .map(|&k| {
            let s = Store::in_memory();
            for t in replicate_corpus(&base, k, COPY_SHIFT_US) {
                s.ingest(t).unwrap();
            }
            s
        })
        .collect();
    let one = stores[0].snapshot().canonical_tables();
    let three = stores[1].snapshot().canonical_tables();
    assert_eq!(three.trace_count, 3 * one.trace_count);
    for (ty, col) in &one.types {
        assert_eq!(three.types[ty].instance_count, 3 * col.instance_count);
    }
    for (ty, labels) in &one.events {
        for (label, rows) in labels {
            let r3 = &three.events[ty][label];
            assert_eq!(r3.presence, 3 * rows.presence);
            let f1 = rows.presence as f64 / one.types[ty].instance_count as f64;
            let f3 = r3.presence as f64 / three.types[ty].instance_count as f64;
            assert_eq!(f1, f3);
        }
    }
}

#[test]
fn csv_header_is_stable() {
    let r = BenchResult::default();
    assert_eq!(r.to_csv(), "db_traces,iter,category,latency_us\n");
    assert_eq!(CSV_HEADER, "db_traces,iter,category,latency_us");
}

#[test]
fn one_iteration_gives_four_rows() {
    let store = Store::in_memory();
    for t in generate_corpus(&small(10)).unwrap().traces {
        store.ingest(t).unwrap();
    }
    let r = run_breakdown_bench(&store.snapshot(), 1, AggregateParams::default()).unwrap();
    assert_eq!(r.rows.len(), 4);
    let cats: Vec<Category> = r.rows.iter().map(|r| r.category).collect();
    assert_eq!(cats, Category::ALL);
    assert!(r.rows.iter().all(|r| r.db_traces == 10 && r.iter == 0 && r.latency_us >= 0.0));
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("10,0,raw_trace,"));
    assert!(lines[4].starts_with("10,0,contention,"));
}

#[test]
fn breakdown_on_empty_store_fails() {
    let err = run_breakdown_bench(&Store::in_memory().snapshot(), 5, AggregateParams::default());
    assert!(matches!(err, Err(BenchError::EmptyStore)));
}

#[test]
fn single_factor_matches_breakdown_shape() {
    let base = generate_corpus(&small(10)).unwrap().traces;
    let r = run_scaling_bench(&base, &[1], 3, ScalingOptions::default()).unwrap();
    assert_eq!(r.rows.len(), 12);
    assert_eq!(r.db_sizes(), [10]);
    let keys: Vec<(usize, Category)> = r.rows.iter().map(|r| (r.iter, r.category)).collect();
    let expected: Vec<(usize, Category)> =
        (0..3).flat_map(|i| Category::ALL.map(|c| (i, c))).collect();
    assert_eq!(keys, expected);
}

#[test]
fn scaling_factors_must_increase() {
    let base = generate_corpus(&small(2)).unwrap().traces;
    for bad in [&[][..], &[0][..], &[2, 2][..], &[4, 2][..]] {
        assert!(matches!(
            run_scaling_bench(&base, bad, 1, ScalingOptions::default()),
            Err(BenchError::BadFactors)
        ));
    }
}

#[test]
fn scaling_rows_are_keyed_by_store_size() {
    let base = generate_corpus(&small(6)).unwrap().traces;
    let r = run_scaling_bench(&base, &[1, 2, 4], 2, ScalingOptions::default()).unwrap();
    assert_eq!(r.db_sizes(), [6, 12, 24]);
    let mut per: BTreeMap<u64, usize> = BTreeMap::new();
    for row in &r.rows {
        *per.entry(row.db_traces).or_default() += 1;
    }
    assert!(per.values().all(|&n| n == 8));
    assert!(r.summary_table().contains("linear fit"));
}

#[test]
fn linear_fit_recovers_a_line() {
    let pts: Vec<(f64, f64)> = (1..=5).map(|x| (x as f64, 3.0 * x as f64 + 1.0)).collect();
    let fit = linear_fit(&pts).unwrap();
    assert!((fit.slope - 3.0).abs() < 1e-12);
    assert!((fit.intercept - 1.0).abs() < 1e-12);
    assert!((fit.r2 - 1.0).abs() < 1e-12);
    assert!(linear_fit(&[(1.0, 2.0)]).is_none());
    assert!(linear_fit(&[(1.0, 2.0), (1.0, 3.0)]).is_none());
}

#[test]
fn invocation_edges_follow_calls() {
    let corpus = generate_corpus(&small(20)).unwrap();
    let spec = small(20);
    for t in &corpus.traces {
        for e in t.edges.iter().filter(|e| e.kind == EdgeKind::Invocation) {
            let (Endpoint::Task(p), Endpoint::Task(c)) = (&e.source, &e.target) else {
                panic!("invocation between non-tasks");
            };
            let (p, c) = (t.task(p).unwrap(), t.task(c).unwrap());
            let declared = spec.task_types[&p.task_type].calls.iter().any(|k| k.child == c.task_type)
                || spec.anomalies.rare_edges.iter().any(|r| r.parent == p.task_type && r.child == c.task_type);
            assert!(declared, "{} -> {}", p.task_type, c.task_type);
            assert!(c.start_ts >= p.start_ts && c.end_ts <= p.end_ts);
        }
    }
}
