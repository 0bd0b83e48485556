use std::path::Path;

use super::*;
use crate::cluster::adjusted_rand_index;
use crate::error::Error;
use crate::graph_encoder::AttentionMode;
use crate::neuralcore::GradCheckOptions;
use crate::training::TrainConfig;

fn fast(cfg: PipelineConfig) -> PipelineConfig {
    PipelineConfig {
        d_latent: 8,
        h: 8,
        heads: 2,
        inducing: 4,
        reduction: 4,
        stride: 20,
        train: TrainConfig {
            max_epochs: 2,
            ..TrainConfig::default()
        },
        ..cfg
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Mean within- and across-community correlation of P/P0 trajectories.
fn nav_corr_split(d: &SyntheticData) -> (f64, f64) {
    let n = d.labels.len();
    let nav: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let c = d.prices.column(i);
            c.iter().map(|p| p / c[0]).collect()
        })
        .collect();
    let (mut w, mut nw, mut a, mut na) = (0.0, 0, 0.0, 0);
    for i in 0..n {
        for j in i + 1..n {
            let r = pearson(&nav[i], &nav[j]);
            if d.labels[i] == d.labels[j] {
                w += r;
                nw += 1;
            } else {
                a += r;
                na += 1;
            }
        }
    }
    (w / nw as f64, a / na as f64)
}

#[test]
fn defaults_match_published_hyperparameters() {
    let c = PipelineConfig::default();
    assert_eq!(c.window, 89);
    assert_eq!(c.tau, 0.75);
    assert_eq!(c.delta, 0.1);
    assert_eq!(c.inducing, 16);
    assert_eq!(c.dropout, 0.1);
    assert_eq!(c.reduction, 16);
    assert_eq!((c.w_intra, c.w_inter), (0.1, 0.9));
    assert_eq!(c.train.patience, 2);
    assert_eq!(c.train.tolerance, 1e-4);
    assert_eq!(c.k_range, [2, 15]);
    assert_eq!(c.train_fraction, 0.7);
    c.validate().unwrap();
}

#[test]
fn loads_toml_and_json_with_partial_keys() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("c.toml");
    std::fs::write(&t, "window = 60\nmode = \"static\"\n[train]\nmax_epochs = 3\n").unwrap();
    let c = PipelineConfig::load(&t).unwrap();
    assert_eq!((c.window, c.mode, c.train.max_epochs), (60, AttentionMode::Static, 3));
    assert_eq!(c.tau, 0.75);

    let j = dir.path().join("c.json");
    std::fs::write(&j, r#"{"seed": 7, "k_range": [2, 6]}"#).unwrap();
    let c = PipelineConfig::load(&j).unwrap();
    assert_eq!((c.seed, c.k_range), (7, [2, 6]));
}

#[test]
fn config_rejects_unknown_keys_and_short_windows() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("c.toml");
    std::fs::write(&t, "windw = 60\n").unwrap();
    assert!(matches!(PipelineConfig::load(&t), Err(Error::Config(_))));
    std::fs::write(&t, "window = 44\n").unwrap();
    assert!(matches!(PipelineConfig::load(&t), Err(Error::Config(_))));
    let y = dir.path().join("c.yaml");
    std::fs::write(&y, "").unwrap();
    assert!(matches!(PipelineConfig::load(&y), Err(Error::Config(_))));
}

#[test]
fn synthetic_rejects_bad_specs() {
    let bad = |s: SyntheticSpec| matches!(generate_synthetic(&s), Err(Error::Config(_)));
    assert!(bad(SyntheticSpec { sizes: vec![10, 10], ..Default::default() }));
    assert!(bad(SyntheticSpec { noise_sigma: 0.0, ..Default::default() }));
    assert!(bad(SyntheticSpec { regime_switch: Some(300), ..Default::default() }));
}

#[test]
fn synthetic_is_seeded() {
    let a = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let b = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let c = generate_synthetic(&SyntheticSpec { seed: 1, ..Default::default() }).unwrap();
    assert_eq!(a.prices, b.prices);
    assert_ne!(a.prices, c.prices);
    assert_eq!(a.labels, (0..30).map(|i| i / 10).collect::<Vec<_>>());
}

#[test]
fn synthetic_default_correlation_structure() {
    let (mut w, mut a) = (0.0, 0.0);
    for seed in 0..5 {
        let (wi, ac) = nav_corr_split(&generate_synthetic(&SyntheticSpec { seed, ..Default::default() }).unwrap());
        w += wi / 5.0;
        a += ac / 5.0;
    }
    assert!(w >= 0.6, "within {w}");
    assert!(a <= 0.2, "across {a}");
}

#[test]
fn vanishing_noise_gives_unit_within_correlation() {
    let d = generate_synthetic(&SyntheticSpec { noise_sigma: 1e-9, ..Default::default() }).unwrap();
    let (w, _) = nav_corr_split(&d);
    assert!(w > 0.999, "{w}");
}

#[test]
fn regime_switch_reassigns_memberships() {
    let d = generate_synthetic(&SyntheticSpec { regime_switch: Some(150), ..Default::default() }).unwrap();
    let after = d.labels_after_switch.unwrap();
    let mut sorted = after.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, d.labels);
    assert!(adjusted_rand_index(&after, &d.labels).unwrap() < 0.5);
}

#[test]
fn split_point_keeps_both_sides() {
    assert_eq!(split_point(10, 0.7), 7);
    assert_eq!(split_point(2, 0.7), 1);
    assert_eq!(split_point(3, 0.99), 2);
    assert_eq!(split_point(1, 0.7), 1);
}

#[test]
fn shortest_window_run_completes() {
    let d = generate_synthetic(&SyntheticSpec { t_total: 160, ..Default::default() }).unwrap();
    let cfg = fast(PipelineConfig { window: 45, ..Default::default() });
    let out = run_pipeline(&cfg, &d.prices, None).unwrap();
    assert_eq!(out.report.window, 45);
    assert!(out.report.n_windows >= 2);
    assert!(out.assignments.iter().all(|a| a.labels.len() == 30));
}

#[test]
fn pipeline_rejects_misaligned_sectors() {
    let d = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let sectors = vec!["X".to_string(); 29];
    assert!(matches!(
        run_pipeline(&fast(PipelineConfig::default()), &d.prices, Some(&sectors)),
        Err(Error::Data(_))
    ));
}

#[test]
fn ablation_needs_two_modes_and_orders_rows() {
    let d = generate_synthetic(&SyntheticSpec { t_total: 200, ..Default::default() }).unwrap();
    let cfg = fast(PipelineConfig::default());
    let one = run_ablation(&cfg, &d.prices, None, &[AttentionMode::Full, AttentionMode::Full]);
    assert!(matches!(one, Err(Error::Config(_))));
    let rows = run_ablation(
        &PipelineConfig { train: TrainConfig { max_epochs: 1, ..cfg.train }, ..cfg },
        &d.prices,
        None,
        &[AttentionMode::Full, AttentionMode::Basic, AttentionMode::Static, AttentionMode::Enhanced],
    )
    .unwrap();
    let modes: Vec<_> = rows.iter().map(|r| r.mode).collect();
    assert_eq!(modes, AttentionMode::ALL.to_vec());
    assert_eq!(rows[0].delta_nav_score, Some(0.0));
    let d3 = rows[3].eval.nav_score.unwrap() - rows[0].eval.nav_score.unwrap();
    assert!((rows[3].delta_nav_score.unwrap() - d3).abs() < 1e-15);
}

#[test]
fn sweep_checks_every_length_first() {
    let d = generate_synthetic(&SyntheticSpec { t_total: 200, ..Default::default() }).unwrap();
    let cfg = fast(PipelineConfig::default());
    let t0 = std::time::Instant::now();
    assert!(matches!(run_window_sweep(&cfg, &d.prices, None, &[89, 44]), Err(Error::Config(_))));
    assert!(matches!(run_window_sweep(&cfg, &d.prices, None, &[89, 156]), Err(Error::Config(_))));
    assert!(t0.elapsed().as_secs_f64() < 0.5);
    let table = run_window_sweep(&cfg, &d.prices, None, &[89]).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.relative_range, Some(0.0));
}

#[test]
fn relative_range_examples() {
    assert_eq!(relative_range(&[1.0, 1.0]), Some(0.0));
    assert!((relative_range(&[0.9, 1.0, 1.1]).unwrap() - 0.2).abs() < 1e-12);
    assert_eq!(relative_range(&[]), None);
}

#[test]
fn outputs_and_manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = generate_synthetic(&SyntheticSpec { t_total: 200, ..Default::default() }).unwrap();
    let input = dir.path().join("prices.csv");
    crate::marketdata::write_prices(&d.prices, &input).unwrap();
    let cfg = fast(PipelineConfig { cache_graphs: true, ..Default::default() });
    let out = run_pipeline(&cfg, &d.prices, None).unwrap();
    let res = dir.path().join("res");
    let m = write_outputs(&res, &cfg, &out, &input, None).unwrap();
    for f in [ASSIGNMENTS_FILE, METRICS_FILE, WINDOWS_FILE, LOG_FILE, MANIFEST_FILE] {
        assert!(res.join(f).is_file(), "{f}");
    }
    let n_graphs = std::fs::read_dir(res.join(GRAPHS_DIR)).unwrap().count();
    assert_eq!(n_graphs, out.windows.len());

    let csv = std::fs::read_to_string(res.join(ASSIGNMENTS_FILE)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("window_start,asset_id,label"));
    assert_eq!(lines.count(), 30 * out.windows.len());

    let back = RunManifest::load(&res.join(MANIFEST_FILE)).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.version, env!("CARGO_PKG_VERSION"));
    assert_eq!(back.input_hash.len(), 64);
    back.verify_inputs().unwrap();
    std::fs::write(&input, "date,A\n").unwrap();
    assert!(matches!(back.verify_inputs(), Err(Error::Data(_))));
}

#[test]
fn output_dir_precedence() {
    std::env::set_var(OUTPUT_DIR_ENV, "/from/env");
    assert_eq!(resolve_output_dir(Some(Path::new("/flag"))), Path::new("/flag"));
    assert_eq!(resolve_output_dir(None), Path::new("/from/env"));
    std::env::remove_var(OUTPUT_DIR_ENV);
    assert_eq!(resolve_output_dir(None), Path::new(DEFAULT_OUTPUT_DIR));
}

#[test]
fn gradcheck_flags_a_corrupted_parameter() {
    let opts = GradCheckOptions {
        coords_per_param: 2,
        corrupt: Some("fusion.w_r.weight".into()),
        ..Default::default()
    };
    let s = run_gradcheck(&opts).unwrap();
    assert!(!s.pass);
    assert!(s.failing.iter().any(|f| f.ends_with("fusion.w_r.weight")), "{:?}", s.failing);
    assert!(s.reports.iter().any(|r| r.fragment == "model/dropout" && r.skipped() > 0));
}
