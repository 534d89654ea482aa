mod common;

use collapse_core::analysis::fit_decay;
use collapse_core::harness::{
    run_experiment, sha256_hex, simulate, train_step, write_report, ReportKind, RunData, RunLock, RunManifest,
    RunOptions, Workspace,
};
use collapse_core::models::ModelHandle;
use collapse_core::Error;
use common::{small_config, small_world};

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        for k in i..=j {
            r[idx[k]] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn evaluation_only_config_persists_just_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), &small_world(1));
    cfg.generations = 0;
    cfg.alphas = vec![1.0];
    let out = run_experiment(&cfg, &RunOptions::default()).unwrap();
    let m = &out.manifest;
    assert_eq!(m.series[0].generations.len(), 1);
    let g0 = &m.series[0].generations[0];
    assert_eq!(g0.checkpoint.as_ref().unwrap().path, "checkpoints/gen_0.ckpt");
    assert!(g0.corpus.is_none());
    assert_eq!(g0.cells.len(), cfg.formats.len());
    let ckpts: Vec<_> = walk(&out.run_dir.join("checkpoints"));
    assert_eq!(ckpts, vec!["gen_0.ckpt".to_string()]);
}

fn walk(dir: &std::path::Path) -> Vec<String> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    out
}

#[test]
fn full_synthetic_training_lowers_entropy() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), &small_world(2));
    cfg.alphas = vec![1.0];
    cfg.generations = 10;
    cfg.formats.truncate(1);
    cfg.training.eta = 0.8;
    cfg.training.prompt_count = 100;
    cfg.training.prompt_len = 32;
    cfg.decoding.max_new_tokens = 32;
    cfg.evaluation.dynamic_samples = 40;
    cfg.evaluation.dynamic_len = 32;
    let ws = Workspace::load(&cfg).unwrap();
    let reports = &simulate(&cfg, &ws).unwrap()[0];
    let gens: Vec<f64> = reports.iter().map(|r| f64::from(r.generation)).collect();
    let ent: Vec<f64> = reports.iter().map(|r| r.entropy_nats.unwrap()).collect();
    let rho = spearman(&gens, &ent);
    assert!(rho < 0.0, "spearman {rho}, entropy {ent:?}");
}

#[test]
fn checkpoints_follow_their_lineage_and_match_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), &small_world(3));
    let out = run_experiment(&cfg, &RunOptions::default()).unwrap();
    assert!(!out.failed(), "{:?}", out.manifest.failures);
    let ws = Workspace::load(&cfg).unwrap();
    for (si, s) in out.manifest.series.iter().enumerate() {
        for pair in s.generations.windows(2) {
            let prev = pair[0].checkpoint.as_ref().unwrap().read_verified(&out.run_dir).unwrap();
            let prev = ModelHandle::from_json(std::str::from_utf8(&prev).unwrap()).unwrap();
            let (corpus, next) = train_step(&prev, &ws, &cfg, cfg.alphas[si], pair[1].generation).unwrap();
            assert_eq!(sha256_hex(next.to_json().unwrap().as_bytes()), pair[1].checkpoint.as_ref().unwrap().sha256);
            let records = collapse_core::corpus::io::corpus_records(&corpus);
            let mut bytes = Vec::new();
            for r in &records {
                serde_json::to_writer(&mut bytes, r).unwrap();
                bytes.push(b'\n');
            }
            assert_eq!(sha256_hex(&bytes), pair[1].corpus.as_ref().unwrap().sha256);
        }
    }
    let run = RunData::load(&out.run_dir).unwrap();
    let sim = simulate(&cfg, &ws).unwrap();
    assert_eq!(run.reports, sim);
}

#[test]
fn mitigation_figure_slopes_reproduce_fits() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), &small_world(4));
    cfg.generations = 5;
    cfg.training.eta = 0.9;
    let out = run_experiment(&cfg, &RunOptions::default()).unwrap();
    write_report(std::slice::from_ref(&out.run_dir), ReportKind::Figures, None).unwrap();
    write_report(std::slice::from_ref(&out.run_dir), ReportKind::Tables, None).unwrap();
    let fig4 = std::fs::read_to_string(out.run_dir.join("tables/fig4_mitigation.csv")).unwrap();
    let decay = std::fs::read_to_string(out.run_dir.join("tables/decay.csv")).unwrap();
    for alpha in ["0.5", "1"] {
        let rows: Vec<Vec<&str>> = fig4
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|f| f[1] == alpha)
            .collect();
        assert_eq!(rows.len(), 6);
        let pts: Vec<(f64, f64)> = rows.iter().map(|f| (f[2].parse().unwrap(), f[3].parse().unwrap())).collect();
        let fit = fit_decay(&pts).unwrap();
        let slope: f64 = rows[0][4].parse().unwrap();
        assert_eq!(fit.slope, slope);
        let recorded: f64 = decay
            .lines()
            .map(|l| l.split(',').collect::<Vec<_>>())
            .find(|f| f[0] == alpha && f[1] == "zero_shot")
            .unwrap()[2]
            .parse()
            .unwrap();
        assert_eq!(fit.slope, recorded);
    }
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let world = small_world(6);
    let mut a = small_config(&dir.path().join("a"), &world);
    let mut b = small_config(&dir.path().join("b"), &world);
    a.generations = 2;
    b.generations = 2;
    b.data = a.data.clone();
    let ra = run_experiment(&a, &RunOptions::default()).unwrap().run_dir;
    let rb = run_experiment(&b, &RunOptions::default()).unwrap().run_dir;
    let ma = RunManifest::load(&ra).unwrap();
    let mb = RunManifest::load(&rb).unwrap();
    assert_eq!(ma.tokenizer, mb.tokenizer);
    assert_eq!(ma.series, {
        let mut s = mb.series.clone();
        for (x, y) in s.iter_mut().zip(&ma.series) {
            for (gx, gy) in x.generations.iter_mut().zip(&y.generations) {
                gx.finished_at = gy.finished_at;
            }
        }
        s
    });
}

#[test]
fn degenerate_baseline_is_flagged_not_labelled() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), &small_world(7));
    cfg.generations = 1;
    cfg.alphas = vec![1.0];
    cfg.thresholds.stage_c_accuracy = 1.0;
    let out = run_experiment(&cfg, &RunOptions::default()).unwrap();
    assert!(out.failed());
    assert!(out.manifest.failures.iter().any(|f| f.message.contains("degenerate baseline")));
    let run = RunData::load(&out.run_dir).unwrap();
    for r in &run.reports[0] {
        assert_eq!(r.stage, None);
        assert!(r.note.as_deref().unwrap().contains("degenerate baseline"));
    }
    let mut strict = cfg.clone();
    strict.name = "strict".into();
    let err = run_experiment(
        &strict,
        &RunOptions {
            strict: true,
            ..RunOptions::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Aborted(_)));
}

#[test]
fn locked_or_changed_runs_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), &small_world(8));
    cfg.generations = 1;
    let rd = cfg.run_dir();
    std::fs::create_dir_all(&rd).unwrap();
    {
        let _held = RunLock::acquire(&rd).unwrap();
        let err = run_experiment(&cfg, &RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Locked(_)), "{err}");
    }
    run_experiment(&cfg, &RunOptions::default()).unwrap();
    let mut changed = cfg.clone();
    changed.training.eta = 0.1;
    let err = run_experiment(
        &changed,
        &RunOptions {
            resume: true,
            ..RunOptions::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn resume_reproduces_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let world = small_world(9);
    let full_cfg = small_config(&dir.path().join("full"), &world);
    let mut part_cfg = full_cfg.clone();
    part_cfg.output_dir = dir.path().join("part");
    let full = run_experiment(&full_cfg, &RunOptions::default()).unwrap();
    for stop in [(0, 0), (0, 2), (1, 1)] {
        let o = run_experiment(
            &part_cfg,
            &RunOptions {
                resume: true,
                stop_after: Some(stop),
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert!(o.stopped_early);
    }
    let part = run_experiment(
        &part_cfg,
        &RunOptions {
            resume: true,
            ..RunOptions::default()
        },
    )
    .unwrap();
    assert!(!part.stopped_early);
    let a = RunData::load(&full.run_dir).unwrap();
    let b = RunData::load(&part.run_dir).unwrap();
    assert_eq!(a.reports, b.reports);
    for (sa, sb) in a.manifest.series.iter().zip(&b.manifest.series) {
        for (ga, gb) in sa.generations.iter().zip(&sb.generations) {
            assert_eq!(ga.checkpoint, gb.checkpoint);
            assert_eq!(ga.corpus, gb.corpus);
            assert_eq!(ga.cells, gb.cells);
        }
    }
}
