use causal_icl::experiment::config::{ConstructGraph, ExperimentConfig, GraphSpec, Mode, OodKernel, PriorSpec};
use causal_icl::experiment::{evaluate_ood, run_construct, run_oracle, run_ood, run_sweep, run_train, run_verify_to, OutputHead};
use causal_icl::graph::CausalGraph;
use causal_icl::markov::{DirichletPrior, KernelPrior};
use causal_icl::reduced::{run_algorithm1, ReducedParams, TrainConfig};
use causal_icl::construct::from_reduced;
use causal_icl::rng::seeded;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

fn small(mode: Mode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 11;
    cfg.mode = mode;
    cfg.graph = GraphSpec::Chain { t: 8 };
    cfg.prior = PriorSpec::Dirichlet { alphabet: 3, alpha: 1.0 };
    cfg.train.steps = Some(40);
    cfg.train.batch = Some(64);
    cfg.train.log_every = Some(10);
    cfg.train.tau1 = Some(40);
    cfg.train.tau2 = Some(20);
    cfg
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn oracle_recovers_chain() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Mode::ReducedStaged);
    cfg.graph = GraphSpec::Chain { t: 10 };
    let r = run_oracle(&cfg, dir.path()).unwrap();
    assert!(r.exact_match);
    let json = std::fs::read_to_string(dir.path().join("recovered_graph.json")).unwrap();
    assert_eq!(CausalGraph::from_json(&json).unwrap(), CausalGraph::chain(10).unwrap());
    assert!(dir.path().join("mi.csv").exists() && dir.path().join("g.csv").exists());
}

#[test]
fn verify_dpi_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_verify_to(&ExperimentConfig::default(), "dpi", dir.path()).unwrap();
    assert!(r.all_pass());
    assert!(dir.path().join("verify.json").exists());
}

#[test]
fn trigram_construction_writes_fidelity_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Mode::ReducedStaged);
    cfg.construct.graph = ConstructGraph::Ngram { t: 12, n: 3 };
    cfg.construct.n_sequences = 50;
    let r = run_construct(&cfg, dir.path()).unwrap();
    assert_eq!(r.arity, 2);
    let csv = std::fs::read_to_string(dir.path().join("fidelity.csv")).unwrap();
    assert!(csv.starts_with("beta,mean_err,max_err,n_defined,mean_err_full,max_err_full"));
    assert_eq!(csv.lines().count(), 1 + cfg.construct.betas.len());
}

#[test]
fn every_mode_writes_its_artifacts_and_config_echo() {
    for mode in [Mode::ReducedStaged, Mode::ReducedJoint, Mode::DisentangledJoint] {
        let dir = tempfile::tempdir().unwrap();
        let (m, _) = run_train(&small(mode), dir.path()).unwrap();
        assert!(m.failure.is_none());
        for f in ["config.toml", "trajectory.csv", "metrics.json", "checkpoint.bin", "attn_softmax.pgm", "attn_raw.pgm"] {
            assert!(dir.path().join(f).exists(), "{mode:?}: {f}");
        }
        let echo = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
        assert_eq!(echo, small(mode).resolved().unwrap());
        assert_eq!(echo.mode, mode);
    }
}

#[test]
fn identical_seed_gives_identical_outputs() {
    for mode in [Mode::ReducedStaged, Mode::DisentangledJoint] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_train(&small(mode), a.path()).unwrap();
        run_train(&small(mode), b.path()).unwrap();
        for f in ["trajectory.csv", "checkpoint.bin", "attn_softmax.pgm"] {
            assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{mode:?}: {f}");
        }
    }
}

#[test]
fn ood_reads_checkpoint_next_to_its_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Mode::ReducedStaged);
    run_train(&cfg, dir.path()).unwrap();
    cfg.ood.n_sequences = 100;
    let r = run_ood(&cfg, dir.path()).unwrap();
    assert_eq!(r.n_sequences, 100);
    assert!(dir.path().join("ood.json").exists());
    cfg.ood.gamma = Some(0.9);
    cfg.ood.kernel = OodKernel::NearDeterministic { delta: 0.01 };
    assert!(run_ood(&cfg, dir.path()).is_err());
}

#[test]
fn untrained_model_equals_frequency_baseline() {
    let mut rng = seeded(3);
    let g = CausalGraph::chain(20).unwrap();
    let prior = KernelPrior::Dirichlet(DirichletPrior::new(3, 1.0).unwrap());
    let k = Arc::new(OodKernel::NearDeterministic { delta: 0.1 }.build(3, &prior, &mut rng).unwrap());
    let zero = from_reduced(&ReducedParams::zeros(3, 20));
    let r = evaluate_ood(&zero, OutputHead::Identity, &g, &k, 200, &mut rng).unwrap();
    assert!((r.model.p99 - r.baseline.p99).abs() < 1e-12);
    assert!((r.model.mean - r.baseline.mean).abs() < 1e-12);
}

#[test]
fn trained_model_estimates_an_unseen_kernel_in_context() {
    let mut rng = seeded(4);
    let g = CausalGraph::chain(40).unwrap();
    let prior = KernelPrior::Dirichlet(DirichletPrior::new(3, 1.0).unwrap());
    let run = run_algorithm1(&g, &prior, &TrainConfig::defaults(&g, 3), &mut rng).unwrap();
    let trained = from_reduced(&run.params);
    let counting = from_reduced(&ReducedParams::construction(&g, 3, 50.0, 50.0));
    let far = Arc::new(OodKernel::NearDeterministic { delta: 0.1 }.build(3, &prior, &mut rng).unwrap());
    let t = evaluate_ood(&trained, OutputHead::Identity, &g, &far, 1000, &mut seeded(5)).unwrap();
    let c = evaluate_ood(&counting, OutputHead::Identity, &g, &far, 1000, &mut seeded(5)).unwrap();
    // far better than token frequencies, and close to the exact counting estimator
    assert!(t.model.p99 < 0.6 * t.baseline.p99, "{:?}", t);
    assert!(t.model.p99 < c.model.p99 + 0.1, "trained {} vs counting {}", t.model.p99, c.model.p99);
}

#[test]
fn sweep_trains_each_graph_in_its_own_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Mode::ReducedStaged);
    cfg.sweep.n_graphs = 2;
    cfg.sweep.t = 8;
    let r = run_sweep(&cfg, dir.path()).unwrap();
    assert_eq!(r.avg_attn.len(), 2);
    for f in ["graph_00/metrics.json", "graph_01/config.toml", "sweep.csv", "positions.csv", "sweep.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let echo = ExperimentConfig::load(&dir.path().join("graph_00/config.toml")).unwrap();
    assert_eq!(echo.mode, Mode::DisentangledJoint);
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_causal-icl")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let ok = cli(&["verify", "invariants", "--out", out, "--deterministic"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("PASS"));

    assert_eq!(cli(&["verify", "no-such-suite", "--out", out]).status.code(), Some(1));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "unknown_key = 1\n").unwrap();
    assert_eq!(cli(&["train", "--config", bad.to_str().unwrap(), "--out", out]).status.code(), Some(1));

    // a uniform kernel carries no dependence, so no edge can be recovered
    let weak = dir.path().join("weak.toml");
    std::fs::write(
        &weak,
        "[graph]\nfamily = \"chain\"\nt = 6\n[prior]\nkind = \"point-mass\"\nrows = [[0.5, 0.5], [0.5, 0.5]]\n",
    )
    .unwrap();
    let r = cli(&["oracle", "--config", weak.to_str().unwrap(), "--out", out, "--seed", "1"]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stdout));
}
