mod common;

use collapse_core::harness::{
    eval_checkpoints, write_report, CheckpointEndpoint, EndpointRef, ReportKind, RunData, RunOptions, Workspace,
};
use collapse_core::http::EndpointConfig;
use collapse_core::models::{ModelHandle, ModelState, NGramModel};
use collapse_core::Error;
use common::{dead_url, serve, small_config, small_world, Behaviour, ModelServer};

fn endpoint(model: &str, url: String) -> CheckpointEndpoint {
    CheckpointEndpoint {
        model: model.into(),
        endpoint: EndpointRef::Full(EndpointConfig {
            retries: 0,
            timeout_secs: 5,
            ..EndpointConfig::new(url)
        }),
    }
}

struct Setup {
    _dir: tempfile::TempDir,
    cfg: collapse_core::harness::ExperimentConfig,
    ws: Workspace,
}

fn setup() -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), &small_world(5));
    cfg.name = "eval".into();
    cfg.generations = 0;
    cfg.evaluation.dynamic_samples = 4;
    let ws = Workspace::load(&cfg).unwrap();
    Setup { _dir: dir, cfg, ws }
}

fn server(s: &Setup, model: ModelHandle, behaviour: Behaviour) -> String {
    serve(ModelServer {
        model,
        tokenizer: s.ws.tokenizer.clone(),
        behaviour,
    })
}

/// Unigram model: fluent-looking tokens, no knowledge of facts.
fn degraded(s: &Setup) -> ModelHandle {
    let m = NGramModel::fit(1, s.ws.tokenizer.vocab_size(), 1e-6, 0.0, &s.ws.train).unwrap();
    ModelHandle::new(ModelState::Ngram(m))
}

#[test]
fn degraded_checkpoint_is_classified_no_better() {
    let mut s = setup();
    let good = server(&s, s.ws.base_model(&s.cfg).unwrap(), Behaviour::Full);
    let bad = server(&s, degraded(&s), Behaviour::Full);
    s.cfg.endpoints.judge = Some(EndpointConfig::new(format!("{good}/judge")));
    s.cfg.endpoints.entailment = Some(EndpointConfig::new(format!("{good}/entail")));
    s.cfg.evaluation.semantic_items = 5;
    let eps = vec![
        endpoint("toy-gen0", format!("{good}/v1/completions")),
        endpoint("toy-gen1", format!("{bad}/v1/completions")),
    ];
    let out = eval_checkpoints(&eps, &s.cfg, &RunOptions::default()).unwrap();
    assert!(out.manifest.failures.is_empty(), "{:?}", out.manifest.failures);
    let run = RunData::load(&out.run_dir).unwrap();
    let reports = &run.reports[0];
    assert_eq!(reports.len(), 2 * 2);
    for r in reports {
        assert!(r.static_ppl.is_some());
        assert_eq!(r.entailment_mean, Some(0.75));
        assert_eq!(r.entailment_missing, 0);
        let j = r.judge_mean.unwrap();
        assert!((1.0..=3.0).contains(&j));
    }
    for format in ["zero_shot", "few_shot"] {
        let at = |g| reports.iter().find(|r| r.generation == g && r.format == format).unwrap();
        assert_eq!(at(0).model, "toy-gen0");
        assert!(at(0).accuracy > 0.8, "{}", at(0).accuracy);
        assert!(at(1).stage.unwrap() >= at(0).stage.unwrap());
        assert!(at(1).accuracy < at(0).accuracy);
    }
    for g in &out.manifest.series[0].generations {
        assert!(g.checkpoint.is_none());
        assert!(g.model.is_some());
    }
}

#[test]
fn single_endpoint_gives_one_report_per_cell() {
    let s = setup();
    let url = server(&s, s.ws.base_model(&s.cfg).unwrap(), Behaviour::Full);
    let out = eval_checkpoints(&[endpoint("m", format!("{url}/v1/completions"))], &s.cfg, &RunOptions::default())
        .unwrap();
    let m = &out.manifest;
    assert_eq!(m.series.len(), 1);
    assert_eq!(m.series[0].generations.len(), 1);
    assert_eq!(m.series[0].generations[0].cells.len(), s.ws.subjects.len() * s.cfg.formats.len());
    m.verify(&out.run_dir).unwrap();
}

#[test]
fn endpoint_without_logprobs_degrades_to_parsing() {
    let s = setup();
    let url = server(&s, s.ws.base_model(&s.cfg).unwrap(), Behaviour::TextOnly);
    let out = eval_checkpoints(&[endpoint("m", format!("{url}/v1/completions"))], &s.cfg, &RunOptions::default())
        .unwrap();
    assert!(out.failed());
    assert!(out.manifest.failures.iter().any(|f| f.message.contains("capability")));
    let run = RunData::load(&out.run_dir).unwrap();
    for r in &run.reports[0] {
        assert_eq!(r.static_ppl, None);
        assert_eq!(r.dynamic_ppl, None);
        assert!(r.n_items > 0);
    }
    let answers = run.answers(&run.manifest.series[0]).unwrap();
    for (_, _, _, rows) in answers {
        for a in rows {
            assert!(a.option_scores.is_none());
            assert_eq!(a.margin, None);
            assert_eq!(a.confidence, None);
        }
    }
}

#[test]
fn unreachable_checkpoint_leaves_a_flagged_gap() {
    let s = setup();
    let good = server(&s, s.ws.base_model(&s.cfg).unwrap(), Behaviour::Full);
    let down = server(&s, degraded(&s), Behaviour::Down);
    let eps = vec![
        endpoint("g0", format!("{good}/v1/completions")),
        endpoint("g1", dead_url()),
        endpoint("g2", format!("{down}/v1/completions")),
        endpoint("g3", format!("{good}/v1/completions")),
    ];
    let out = eval_checkpoints(&eps, &s.cfg, &RunOptions::default()).unwrap();
    let gens: Vec<u32> = out.manifest.series[0].generations.iter().map(|g| g.generation).collect();
    assert_eq!(gens, vec![0, 3]);
    let failed: Vec<u32> = out.manifest.failures.iter().map(|f| f.generation).collect();
    assert_eq!(failed, vec![1, 2]);

    write_report(std::slice::from_ref(&out.run_dir), ReportKind::Figures, None).unwrap();
    let fig2 = std::fs::read_to_string(out.run_dir.join("tables/fig2_accuracy.csv")).unwrap();
    let rows: Vec<&str> = fig2.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1], "1,0,NA,NA,NA,NA");
    assert_eq!(rows[2], "2,0,NA,NA,NA,NA");

    let mut cfg = s.cfg.clone();
    cfg.name = "strict".into();
    let err = eval_checkpoints(
        &eps[..2],
        &cfg,
        &RunOptions {
            strict: true,
            ..RunOptions::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Aborted(_)), "{err}");
}

#[test]
fn endpoint_list_accepts_plain_urls() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("endpoints.json");
    std::fs::write(
        &p,
        r#"[{"model": "a", "endpoint": "http://127.0.0.1:1/v1/completions"},
            {"model": "b", "endpoint": {"url": "http://127.0.0.1:2/v1/completions", "retries": 0}}]"#,
    )
    .unwrap();
    let eps = collapse_core::harness::load_endpoints(&p).unwrap();
    assert_eq!(eps[0].spec().endpoint.url, "http://127.0.0.1:1/v1/completions");
    assert_eq!(eps[1].spec().endpoint.retries, 0);
}
