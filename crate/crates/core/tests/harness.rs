use std::f64::consts::PI;

use noisyact::activations::{HardSatKind, NoiseMode};
use noisyact::harness::config::ActivationKind;
use noisyact::harness::data::{gen_gaussian_mixture, gen_unique_count, DataInputs, MIXTURE_MEANS, MIXTURE_STDS};
use noisyact::harness::experiments::{build_network, datasets, evaluate_checkpoint, run_experiment, summarize_dir};
use noisyact::nn::recurrent::noisy_gates;
use noisyact::nn::{classify_sequence, dense_forward, Activation, DenseLayer, LstmCell, ParamStore, RecurrentCell};
use noisyact::nn::{RecurrentInit, SequenceClassifier};
use noisyact::{ExperimentConfig, ExperimentKind, MetricsRecord, NoisyActConfig, RngStream, Tensor};

/// Exact distribution of the number of distinct values in `length` iid
/// uniform draws from `values` symbols.
fn distinct_count_distribution(length: usize, values: usize) -> Vec<f64> {
    let v = values as f64;
    let mut dp = vec![0.0; values + 1];
    dp[0] = 1.0;
    for _ in 0..length {
        let mut next = vec![0.0; values + 1];
        for k in 0..=values {
            if dp[k] == 0.0 {
                continue;
            }
            next[k] += dp[k] * k as f64 / v;
            if k < values {
                next[k + 1] += dp[k] * (v - k as f64) / v;
            }
        }
        dp = next;
    }
    dp
}

#[test]
fn unique_count_matches_exact_distribution() {
    let n = 100_000;
    let d = gen_unique_count(11, n, 10, 6).unwrap();
    let exact = distinct_count_distribution(10, 6);
    assert!((exact.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let mut counts = vec![0usize; d.classes];
    for &t in &d.targets {
        counts[t] += 1;
    }
    for (class, &c) in counts.iter().enumerate() {
        let p = exact[class + 1];
        let phat = c as f64 / n as f64;
        assert!((phat - p).abs() <= 0.02, "class {class}: {phat} vs {p}");
    }
}

fn log_density(x: &[f64], mean: &[f64; 2], std: f64) -> f64 {
    let d2: f64 = x.iter().zip(mean).map(|(a, m)| (a - m) * (a - m)).sum();
    -d2 / (2.0 * std * std) - (x.len() as f64) * (std * (2.0 * PI).sqrt()).ln()
}

#[test]
fn mixture_bayes_accuracy_exceeds_95_percent() {
    let d = gen_gaussian_mixture(3, 40_000, 2).unwrap();
    let DataInputs::Dense(x) = &d.inputs else { unreachable!() };
    let correct = (0..d.len())
        .filter(|&i| {
            let row = x.row(i);
            let best = (0..3)
                .max_by(|&a, &b| {
                    log_density(row, &MIXTURE_MEANS[a], MIXTURE_STDS[a])
                        .total_cmp(&log_density(row, &MIXTURE_MEANS[b], MIXTURE_STDS[b]))
                })
                .unwrap();
            best == d.targets[i]
        })
        .count();
    let acc = correct as f64 / d.len() as f64;
    assert!(acc > 0.95, "Bayes accuracy {acc}");
}

#[test]
fn deterministic_paths_consume_no_randomness() {
    let cfg = NoisyActConfig::new(HardSatKind::HardTanh, NoiseMode::Nah);
    let layer = DenseLayer::new("l", 3, 4, Activation::Noisy(cfg));
    let mut store = ParamStore::new();
    layer.init(&mut store, 2.0, &mut RngStream::new(1)).unwrap();
    let mut rng = RngStream::new(2);
    let before = rng.position();
    dense_forward(&layer, &store, &Tensor::ones(&[2, 3]), &mut rng, false).unwrap();
    assert_eq!(rng.position(), before);
    dense_forward(&layer, &store, &Tensor::ones(&[2, 3]), &mut rng, true).unwrap();
    assert_ne!(rng.position(), before);

    let (g, c) = noisy_gates(&cfg);
    let model = SequenceClassifier::new(5, None, RecurrentCell::Lstm(LstmCell::new("lstm", 5, 3, g, c)), 4, 3);
    let mut store = ParamStore::new();
    model.init(&mut store, RecurrentInit::default(), 1.0, &mut RngStream::new(3)).unwrap();
    let before = rng.position();
    classify_sequence(&model, &store, &[1, 2, 3], &mut rng, false).unwrap();
    assert_eq!(rng.position(), before);
}

fn tiny(kind: ExperimentKind, dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(kind);
    cfg.seeds = vec![1, 2, 3];
    cfg.out_dir = Some(dir.to_path_buf());
    cfg.train.epochs = 3;
    cfg.data.n_train = 40;
    cfg.data.n_eval = 30;
    cfg.model.hidden = 4;
    cfg.model.head_hidden = 4;
    cfg
}

#[test]
fn experiment_outputs_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(ExperimentKind::GaussianMixture, dir.path());
    let report = run_experiment(&cfg).unwrap();
    for seed in &cfg.seeds {
        for file in ["metrics_seed", "timing_seed"] {
            assert!(dir.path().join(format!("{file}{seed}.csv")).exists());
        }
        let ckpt = dir.path().join(format!("best_seed{seed}.ckpt"));
        let stats = evaluate_checkpoint(&cfg, *seed, &ckpt).unwrap();
        let record = MetricsRecord::read_csv(&dir.path().join(format!("metrics_seed{seed}.csv"))).unwrap();
        assert_eq!(stats.nll, record.best_eval_nll().unwrap());
    }
    let (files, summary) = summarize_dir(dir.path()).unwrap();
    assert_eq!(files.len(), 3);
    assert_eq!(summary, MetricsRecord::read_csv(&dir.path().join("summary.csv")).unwrap());
    assert_eq!(summary.rows.len(), report.summary.rows.len());
    let saved = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(saved, cfg);
}

#[test]
fn invalid_config_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let mut cfg = tiny(ExperimentKind::DigitsMlp, &out);
    cfg.model.activation = ActivationKind::Relu;
    cfg.noise.mode = NoiseMode::Nah;
    assert!(run_experiment(&cfg).is_err());
    assert!(!out.exists());

    let mut cfg = tiny(ExperimentKind::GaussianMixture, &out);
    cfg.optimizer.lr = -1.0;
    assert!(run_experiment(&cfg).is_err());
    assert!(!out.exists());
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(ExperimentKind::GaussianMixture, dir.path());
    run_experiment(&cfg).unwrap();
    let mut other = cfg.clone();
    other.model.hidden = 5;
    assert!(evaluate_checkpoint(&other, 1, &dir.path().join("best_seed1.ckpt")).is_err());
}

#[test]
fn checkpoint_text_format() {
    let mut store = ParamStore::new();
    store.insert("b", Tensor::scalar(0.1)).unwrap();
    store.insert("a.weight", Tensor::matrix(1, 2, vec![1.0, -2.5]).unwrap()).unwrap();
    let text = store.to_text();
    assert_eq!(
        text,
        "# noisyact checkpoint v1\n\
         a.weight 1,2 1.0000000000000000e0 -2.5000000000000000e0\n\
         b - 1.0000000000000001e-1\n"
    );
    assert_eq!(ParamStore::from_text(&text).unwrap(), store);
    assert!(ParamStore::from_text("a 1 1.0\n").is_err());
    assert!(ParamStore::from_text("# noisyact checkpoint v1\na 2 1.0\n").is_err());
}

#[test]
fn seeds_change_data_and_init_only_through_the_seed() {
    let cfg = ExperimentConfig::preset(ExperimentKind::UniqueCount);
    let (a_train, a_eval) = datasets(&cfg, 4).unwrap();
    let (b_train, _) = datasets(&cfg, 4).unwrap();
    assert_eq!(a_train, b_train);
    assert_ne!(a_train.targets, a_eval.targets);
    let na = build_network(&cfg, &a_train, 4).unwrap();
    let nb = build_network(&cfg, &a_train, 4).unwrap();
    let nc = build_network(&cfg, &a_train, 5).unwrap();
    assert_eq!(na, nb);
    assert_ne!(na.params, nc.params);
    for (name, t) in na.params.iter() {
        if name.ends_with(".p") {
            assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn config_documents_round_trip() {
    for kind in ExperimentKind::ALL {
        let cfg = ExperimentConfig::preset(kind);
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }
    let cfg = ExperimentConfig::from_toml("experiment = \"digits-mlp\"\n[noise]\nmode = \"nanis\"\n").unwrap();
    assert_eq!(cfg.noise.mode, NoiseMode::Nanis);
    assert_eq!(cfg.data.n_eval, 297);
    assert!(ExperimentConfig::from_toml("[optimizer]\nlearning_rate = 1.0\n").is_err());
}
