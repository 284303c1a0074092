use std::fs;

use proptest::prelude::*;

use fspda::algorithms::{Algorithm, HyperParams};
use fspda::engine::{read_jsonl, run};
use fspda::harness::{
    analyze, parse_config, preset, run_batch, run_preset, EdgeLawKind, ExperimentConfig, HyperParamsConfig, PresetRun,
    ProblemConfig, TopologyConfig, TopologyKind,
};
use fspda::objectives::NoiseModel;
use fspda::Error;

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(
        Algorithm::FspdaSa,
        200,
        HyperParams::new(0.02, 0.005, 0.2, 1.0),
        TopologyConfig::of(TopologyKind::Ring, 4),
    );
    c.problem = ProblemConfig::quadratic(3, 2.0, 5);
    c.noise = NoiseModel::AdditiveGaussian { sigma: 0.5 };
    c.metric_period = 10;
    c
}

fn one_run(label: &str, config: ExperimentConfig) -> Vec<PresetRun> {
    vec![PresetRun {
        label: label.into(),
        config,
    }]
}

#[test]
fn single_seed_aggregate_equals_the_run() {
    let cfg = small_config();
    let res = run_batch("custom", &one_run("a", cfg.clone()), 1, None).unwrap();
    let exp = cfg.build().unwrap();
    let direct = run(&exp.run, &exp.inc, &exp.suite).unwrap().records;
    assert_eq!(res.streams[0][0], direct);
    for (a, r) in res.aggregates[0].iter().zip(&direct) {
        assert_eq!(a.t, r.t);
        assert_eq!(a.grad_norm_sq_avg.mean, r.grad_norm_sq_avg);
        assert_eq!(a.grad_norm_sq_avg.se, 0.0);
        assert_eq!(a.consensus_err.mean, r.consensus_err);
    }
}

#[test]
fn multi_seed_aggregate_is_mean_and_standard_error() {
    let res = run_batch("custom", &one_run("a", small_config()), 4, None).unwrap();
    let seeds = &res.streams[0];
    assert_eq!(seeds.len(), 4);
    assert_ne!(seeds[0], seeds[1]);
    for (i, a) in res.aggregates[0].iter().enumerate() {
        let v: Vec<f64> = seeds.iter().map(|s| s[i].consensus_err).collect();
        let m = v.iter().sum::<f64>() / 4.0;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 3.0;
        assert!((a.consensus_err.mean - m).abs() <= 1e-12 * m.abs().max(1.0));
        assert!((a.consensus_err.se - (var / 4.0).sqrt()).abs() <= 1e-12 * m.abs().max(1.0));
    }
}

#[test]
fn rate_sweep_summary_reports_loglog_slope() {
    let res = run_preset(
        "rate_sweep",
        3,
        Some(2),
        &["metric_period=20".to_string()],
        None,
    )
    .unwrap();
    let s = &res.summary;
    let xs: Vec<f64> = s.runs.iter().map(|r| (r.iterations as f64).ln()).collect();
    let ys: Vec<f64> = s.runs.iter().map(|r| r.time_avg_grad_norm_sq.mean.ln()).collect();
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = ys.iter().sum::<f64>() / 3.0;
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((s.fits["loglog_slope"] - slope).abs() < 1e-12);
    assert!(s.fits.contains_key("consensus_ratio"));
}

#[test]
fn pl_linear_summary_reports_r2() {
    let res = run_preset("pl_linear", 0, None, &["T=3000".to_string()], None).unwrap();
    let recs = &res.streams[0][0];
    let pts: Vec<(f64, f64)> = recs
        .iter()
        .map(|r| (r.t as f64, (r.suboptimality.unwrap() + r.consensus_err).ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    assert!((res.summary.fits["r2"] - r2).abs() < 1e-9);
    assert!(res.summary.fits["slope"] < 0.0);
}

#[test]
fn presets_are_reproducible_and_analyze_recomputes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = ["T=300".to_string()];
    run_preset("sparsity_sweep", 11, Some(2), &o, Some(&a)).unwrap();
    run_preset("sparsity_sweep", 11, Some(2), &o, Some(&b)).unwrap();
    let sa = fs::read_to_string(a.join("summary.json")).unwrap();
    assert_eq!(sa, fs::read_to_string(b.join("summary.json")).unwrap());

    let c = dir.path().join("c");
    run_preset("sparsity_sweep", 12, Some(2), &o, Some(&c)).unwrap();
    assert_ne!(sa, fs::read_to_string(c.join("summary.json")).unwrap());

    for label in ["s1", "s0.5", "s0.1"] {
        let sub = a.join(label);
        for f in ["seed_0000.jsonl", "seed_0001.jsonl", "aggregate.jsonl", "summary.json"] {
            assert!(sub.join(f).exists(), "{label}/{f}");
        }
        let recs = read_jsonl(&fs::read_to_string(sub.join("seed_0000.jsonl")).unwrap()).unwrap();
        assert_eq!(recs.last().unwrap().t, 300);
    }
    fs::remove_file(a.join("summary.json")).unwrap();
    let re = analyze(&a).unwrap();
    assert_eq!(serde_json::to_string_pretty(&re).unwrap(), sa);
}

#[test]
fn csv_output_is_written_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.output.csv = true;
    run_batch("custom", &one_run("r", cfg), 1, Some(dir.path())).unwrap();
    let csv = fs::read_to_string(dir.path().join("r/seed_0000.csv")).unwrap();
    assert!(csv.starts_with("t,"));
    assert_eq!(csv.lines().count(), 1 + 21);
}

#[test]
fn diverging_seed_reports_its_id() {
    let mut cfg = small_config();
    cfg.hyperparams = HyperParamsConfig::explicit(HyperParams::new(50.0, 0.005, 0.2, 1.0));
    cfg.iterations = 5000;
    match run_batch("custom", &one_run("a", cfg), 2, None) {
        Err(Error::Seed { seed, source }) => {
            assert_eq!(seed, 0);
            assert!(matches!(*source, Error::NonFinite { .. }), "{source}");
        }
        other => panic!("expected seed error, got {:?}", other.map(|r| r.summary)),
    }
}

#[test]
fn async_preset_runs_on_the_event_runtime() {
    let p = preset("async_vs_sync", 0).unwrap();
    let runs: Vec<PresetRun> = p
        .runs
        .into_iter()
        .map(|mut r| {
            r.config.iterations = 200;
            r
        })
        .collect();
    let res = run_batch(&p.name, &runs, 1, None).unwrap();
    let async_recs = &res.streams[1][0];
    assert_eq!(async_recs.last().unwrap().t, 200);
    assert_ne!(res.streams[0][0], *async_recs);
}

#[test]
fn config_files_load_and_reject() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    fs::write(
        &good,
        r#"{"algorithm": "fspda_storm", "T": 50,
            "hyperparams": {"alpha": 0.01, "eta": 0.002, "gamma": 0.1, "beta": 1, "a_x": 0.5, "a_lambda": 0.5},
            "sampler": {"edge_law": "independent_bernoulli", "params": {"p": 0.5}, "sparsity": 0.5},
            "topology": {"kind": "er", "n": 6, "p": 0.6, "seed": 2},
            "problem": {"kind": "logistic", "params": {"d": 3, "m": 20}},
            "noise": {"kind": "minibatch", "batch": 4},
            "seeds": {"graph": 1, "noise": 2, "init": 3},
            "metric_period": 5,
            "output": {"csv": true}}"#,
    )
    .unwrap();
    let cfg = fspda::harness::load_config(&good).unwrap();
    assert_eq!(cfg.sampler.edge_law, EdgeLawKind::IndependentBernoulli);

    let edges = dir.path().join("g.txt");
    fs::write(&edges, "# triangle\n3\n0 1\n1 2\n2 0\n").unwrap();
    let text = format!(
        r#"{{"algorithm": "dsgd", "topology": {{"kind": "file", "path": {:?}}}}}"#,
        edges.display().to_string()
    );
    let exp = parse_config(&text).unwrap().build().unwrap();
    assert_eq!(exp.topology.edge_count(), 3);

    let bad = [
        (r#"{"algorithm": "fspda_sa", "topology": {"kind": "ring", "n": 4}, "extra": 1}"#, "extra"),
        (r#"{"algorithm": "sgd", "topology": {"kind": "ring", "n": 4}}"#, "algorithm"),
        (
            r#"{"algorithm": "fspda_sa", "topology": {"kind": "ring", "n": 4}, "sampler": {"edge_law": "independent_bernoulli"}}"#,
            "sampler.params.p",
        ),
        (
            r#"{"algorithm": "fspda_sa", "topology": {"kind": "ring", "n": 4}, "sampler": {"edge_law": "full_graph", "sparsity": 1.5}}"#,
            "sampler.sparsity",
        ),
        (r#"{"algorithm": "fspda_sa", "topology": {"kind": "er", "n": 4}}"#, "topology.p"),
        (
            r#"{"algorithm": "fspda_storm", "topology": {"kind": "ring", "n": 4}, "hyperparams": {"a_x": 0}}"#,
            "hyperparams.a_x",
        ),
        (
            r#"{"algorithm": "fspda_sa", "topology": {"kind": "ring", "n": 4}, "hyperparams": {"preset": "nope"}}"#,
            "hyperparams.preset",
        ),
        (
            r#"{"algorithm": "fspda_storm", "topology": {"kind": "ring", "n": 4}, "async_timing": {"wake_rate": 1, "sg_mean": 1, "gossip_mean": 0.1, "timeout": 1}}"#,
            "async_timing",
        ),
    ];
    for (text, want) in bad {
        let res = parse_config(text).and_then(|c| c.build().map(|_| ()));
        match res {
            Err(Error::Config { path, .. }) => assert_eq!(path, want, "{text}"),
            other => panic!("{text}: expected config error, got {other:?}"),
        }
    }
}

fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
    (
        prop_oneof![Just(Algorithm::FspdaSa), Just(Algorithm::FspdaStorm), Just(Algorithm::Dsgd)],
        1u64..5000,
        1e-4f64..1.0,
        0.01f64..=1.0,
        prop_oneof![
            Just(TopologyKind::Ring),
            Just(TopologyKind::Complete),
            Just(TopologyKind::Star),
            Just(TopologyKind::Path)
        ],
        3usize..8,
        prop::option::of(0.1f64..5.0),
        any::<u64>(),
    )
        .prop_map(|(alg, t, alpha, s, kind, n, sigma, seed)| {
            let mut c = ExperimentConfig::new(
                alg,
                t,
                HyperParams::new(alpha, alpha / 3.0, 0.2, 1.0).with_momentum(0.5, 0.25),
                TopologyConfig::of(kind, n),
            );
            c.sampler.sparsity = s;
            c.noise = sigma.map_or(NoiseModel::EXACT, |sigma| NoiseModel::AdditiveGaussian { sigma });
            c.seeds = fspda::engine::Seeds::from_master(seed);
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trip_is_identity(cfg in arb_config()) {
        let text = serde_json::to_string(&cfg).unwrap();
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        let again = parse_config(&serde_json::to_string_pretty(&back).unwrap()).unwrap();
        prop_assert_eq!(again, back);
    }
}
