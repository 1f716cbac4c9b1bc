use proptest::prelude::*;
use rlbf::workload::{generate_synthetic, parse_swf, sample_sequence, SyntheticSpec};
use rlbf::{Job, Trace, TraceStats};

fn arb_trace() -> impl Strategy<Value = Trace> {
    (
        1u32..64,
        prop::collection::vec((0i64..5000, 1u32..64, 1i64..100_000, 1i64..100_000), 1..40),
    )
        .prop_map(|(cluster, raw)| {
            let mut submit = 0;
            let jobs = raw
                .into_iter()
                .enumerate()
                .map(|(id, (gap, n, a, b))| {
                    submit += gap;
                    let (actual, requested) = if a <= b { (a, b) } else { (b, a) };
                    Job::new(id, submit, n.min(cluster), requested, actual)
                })
                .collect();
            Trace {
                jobs,
                cluster_size: cluster,
                has_request_time: true,
            }
        })
}

/// Straight-line recomputation of the aggregates.
fn stats_oracle(trace: &Trace) -> (f64, f64, f64) {
    let mut gaps = 0i64;
    let mut req = 0i64;
    let mut nodes = 0u64;
    for (i, j) in trace.jobs.iter().enumerate() {
        if i > 0 {
            gaps += j.submit_time - trace.jobs[i - 1].submit_time;
        }
        req += j.requested_time;
        nodes += j.requested_nodes as u64;
    }
    let n = trace.jobs.len() as f64;
    let i_t = if trace.jobs.len() > 1 {
        gaps as f64 / (n - 1.0)
    } else {
        0.0
    };
    (i_t, req as f64 / n, nodes as f64 / n)
}

proptest! {
    #[test]
    fn swf_round_trip_keeps_every_field(trace in arb_trace()) {
        let back = parse_swf(&trace.to_swf(), None).unwrap();
        prop_assert_eq!(back.cluster_size, trace.cluster_size);
        prop_assert_eq!(back.jobs, trace.jobs);
    }

    #[test]
    fn stats_match_direct_recomputation(trace in arb_trace()) {
        let s = TraceStats::of(&trace);
        let (i_t, r_t, n_t) = stats_oracle(&trace);
        prop_assert!((s.i_t - i_t).abs() <= 1e-9 * i_t.max(1.0));
        prop_assert!((s.r_t_mean - r_t).abs() <= 1e-9 * r_t);
        prop_assert!((s.n_t_mean - n_t).abs() <= 1e-9 * n_t);
        prop_assert_eq!(s.job_count, trace.jobs.len());
    }

    #[test]
    fn samples_are_contiguous_and_rebased(trace in arb_trace(), seed in any::<u64>(), frac in 0.0f64..1.0) {
        let len = 1 + ((trace.len() - 1) as f64 * frac) as usize;
        let w = sample_sequence(&trace, len, seed).unwrap();
        prop_assert_eq!(w.len(), len);
        prop_assert_eq!(w.jobs[0].submit_time, 0);
        let start = w.jobs[0].id;
        let origin = trace.jobs[start].submit_time;
        for (k, j) in w.jobs.iter().enumerate() {
            let src = &trace.jobs[start + k];
            prop_assert_eq!(j.id, src.id);
            prop_assert_eq!(j.submit_time, src.submit_time - origin);
            prop_assert_eq!(j.requested_nodes, src.requested_nodes);
            prop_assert_eq!(j.actual_runtime, src.actual_runtime);
        }
        prop_assert_eq!(sample_sequence(&trace, len, seed).unwrap(), w);
    }
}

#[test]
fn swf_fallbacks_and_drops() {
    let text = "\
; MaxProcs: 8
1 0 5 100 4 -1 -1 -1 -1 -1 1
2 10 5 200 2 -1 -1 3 400 -1 1
3 20 5 -1 2 -1 -1 2 400 -1 1
4 30 5 50 16 -1 -1 16 60 -1 1
5 40 5 900 1 -1 -1 1 300 -1 1
";
    let t = parse_swf(text, None).unwrap();
    assert_eq!(t.cluster_size, 8);
    // job 3 has no runtime, job 4 is wider than the machine
    assert_eq!(t.len(), 3);
    // allocated processors and actual runtime stand in for missing requests
    assert_eq!(
        (t.jobs[0].requested_nodes, t.jobs[0].requested_time),
        (4, 100)
    );
    assert_eq!(
        (t.jobs[1].requested_nodes, t.jobs[1].requested_time),
        (3, 400)
    );
    // runtime beyond the request is clamped
    assert_eq!(t.jobs[2].actual_runtime, 300);
    assert_eq!(
        t.jobs.iter().map(|j| j.id).collect::<Vec<_>>(),
        vec![0, 1, 2]
    );
}

#[test]
fn malformed_field_reports_line() {
    let err = parse_swf("; header\n1 0 5 abc 4 -1 -1 4 100\n", None).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
    assert!(parse_swf("; only comments\n", None).is_err());
}

#[test]
fn synthetic_generator_tracks_its_parameters() {
    for spec in [
        SyntheticSpec::lublin_like_1(10_000),
        SyntheticSpec::lublin_like_2(10_000),
    ] {
        let t = generate_synthetic(&spec, 3).unwrap();
        let s = t.stats();
        assert_eq!(t.len(), 10_000);
        assert!(!t.has_request_time);
        assert!(
            (s.i_t - spec.mean_interarrival).abs() < 0.1 * spec.mean_interarrival,
            "{s:?}"
        );
        assert!(t.jobs.iter().all(|j| j.requested_time == j.actual_runtime));
        assert!(t.jobs.iter().all(|j| j.requested_nodes <= t.cluster_size));
        assert_eq!(generate_synthetic(&spec, 3).unwrap(), t);
    }
}
