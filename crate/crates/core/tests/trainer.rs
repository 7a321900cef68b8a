use prefopt::codec::derived_rng;
use prefopt::domain::{IdealPoint, Request};
use prefopt::evaluators::SyntheticSpec;
use prefopt::gp::{self, AcquisitionConfig, AcquisitionKind, FitOptions};
use prefopt::pareto;
use prefopt::scalarize::ScalarizerKind;
use prefopt::stratnet::{batch_gradient, training_step_with, StepContext, StratNet};
use prefopt::trainer::{self, continue_run, grid_requests, pool_requests, Origin, RunConfig, Trainer};
use rand::Rng;

fn small(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::new(4, SyntheticSpec::power_sum(2), seed);
    cfg.epochs = 4;
    cfg.steps_per_epoch = 50;
    cfg.n_init = 10;
    cfg.pool_size = 64;
    cfg.batch = 5;
    cfg.gp_steps = 40;
    cfg
}

fn checkpoint_json(t: &Trainer) -> String {
    serde_json::to_string(&t.checkpoint()).unwrap()
}

#[test]
fn single_epoch_run_is_initialize_plus_one_epoch() {
    let mut cfg = small(1);
    cfg.epochs = 1;
    let via_run = trainer::run(cfg.clone(), None).unwrap();
    let mut manual = Trainer::initialize(cfg).unwrap();
    manual.run_epoch().unwrap();
    assert_eq!(checkpoint_json(&via_run), checkpoint_json(&manual));
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    std::fs::create_dir_all(&b).unwrap();
    let full = trainer::run(small(3), Some(&a)).unwrap();
    let resumed = Trainer::load(&a.join("checkpoint_2.json")).unwrap();
    assert_eq!(resumed.epoch(), 2);
    let resumed = continue_run(resumed, Some(&b)).unwrap();
    assert_eq!(
        std::fs::read(a.join("metrics.csv")).unwrap(),
        std::fs::read(b.join("metrics.csv")).unwrap()
    );
    assert_eq!(checkpoint_json(&full), checkpoint_json(&resumed));
    assert_eq!(
        std::fs::read(a.join("bundle.json")).unwrap(),
        std::fs::read(b.join("bundle.json")).unwrap()
    );
}

#[test]
fn bookkeeping_over_a_full_run() {
    let cfg = small(4);
    let t = trainer::run(cfg.clone(), None).unwrap();
    let expected = (cfg.n_init + cfg.epochs * cfg.batch) as u64;
    assert_eq!(t.ledger().true_evaluations(), expected);
    assert_eq!(t.dataset().len() as u64, expected);
    let h = &t.dataset().history;
    assert_eq!(h.len(), cfg.epochs + 1);
    for (k, w) in h.windows(2).enumerate() {
        assert_eq!(w[0].epoch, k);
        assert_eq!(w[1].epoch, k + 1);
        assert_eq!(w[1].dataset_size, w[0].dataset_size + cfg.batch);
        assert!(w[1].hv_true_front >= w[0].hv_true_front);
    }
    let r = cfg.metrics_reference;
    assert_eq!(
        h.last().unwrap().hv_true_front,
        pareto::hypervolume(&t.dataset().points(), (r[0], r[1]))
    );
}

#[test]
fn appended_samples_come_from_the_epoch_pool() {
    let cfg = small(5);
    let t = trainer::run(cfg.clone(), None).unwrap();
    for s in &t.dataset().samples[cfg.n_init..] {
        let Origin::Pool { epoch, lambda1 } = s.origin else {
            panic!("non-initial sample without pool provenance");
        };
        assert!((1..=cfg.epochs).contains(&epoch));
        assert!(pool_requests(cfg.pool_size, cfg.seed, epoch)
            .iter()
            .any(|r| r.lambda1() == lambda1));
    }
}

#[test]
fn same_seed_initializations_agree() {
    let a = Trainer::initialize(small(6)).unwrap();
    let b = Trainer::initialize(small(6)).unwrap();
    assert_eq!(a.dataset().samples, b.dataset().samples);
    assert_eq!(checkpoint_json(&a), checkpoint_json(&b));
    assert_eq!(a.surrogate().params(), b.surrogate().params());
    let c = Trainer::initialize(small(7)).unwrap();
    assert_ne!(a.dataset().samples, c.dataset().samples);
}

#[test]
fn trained_bundle_orders_extreme_requests() {
    let mut cfg = small(8);
    cfg.epochs = 6;
    cfg.steps_per_epoch = 200;
    let t = trainer::run(cfg, None).unwrap();
    let before = t.ledger().true_evaluations();
    let answers = t
        .answer_requests(&[Request::new(1.0).unwrap(), Request::new(0.0).unwrap()], None)
        .unwrap();
    assert!(answers[0].f1 <= answers[1].f1);
    assert_eq!(t.ledger().true_evaluations(), before);
}

#[test]
fn ideal_point_modes() {
    let mut cfg = small(9);
    let t = Trainer::initialize(cfg.clone()).unwrap();
    assert_eq!(t.ideal().z, [-1e-3, -1e-3]);
    cfg.ideal = trainer::IdealMode::Observed;
    let t = Trainer::initialize(cfg).unwrap();
    let min_f1 = t.dataset().samples.iter().map(|s| s.f.f1).fold(f64::INFINITY, f64::min);
    assert_eq!(t.ideal().z[0], min_f1 - 1e-3);
}

fn fixture_model(seed: u64, d: usize) -> gp::SurrogateModel {
    let mut rng = derived_rng(seed, 0, 9);
    let x: Vec<Vec<f64>> = (0..12).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
    let y: Vec<f64> = x.iter().map(|p| p.iter().map(|v| v * v).sum::<f64>() / d as f64).collect();
    gp::fit(&x, &y, &FitOptions { restarts: 1, steps: 20, ..FitOptions::default() }).unwrap()
}

#[test]
fn small_steps_do_not_increase_the_batch_loss() {
    let acq = AcquisitionConfig::default();
    let ideal = IdealPoint::new(-1e-3, -1e-3);
    let mut checked = 0;
    for i in 0..200u64 {
        if checked == 50 {
            break;
        }
        let model = fixture_model(i, 3);
        let ctx = StepContext {
            model: &model,
            acquisition: &acq,
            ideal: &ideal,
            scalarizer: ScalarizerKind::Tchebycheff,
        };
        let mut net = StratNet::new(3, 16, 1e-5, i);
        let mut rng = derived_rng(i, 1, 9);
        let requests: Vec<Request> = (0..4).map(|_| Request::new(rng.random::<f64>()).unwrap()).collect();
        let near_tie = requests.iter().any(|lam| {
            let x = net.predict(lam);
            let f1 = prefopt::domain::size_objective(&x);
            let f2 = model.acquire(x.values(), &acq).0;
            (lam.lambda1() * (f1 - ideal.z[0]) - lam.lambda2() * (f2 - ideal.z[1])).abs() < 1e-4
        });
        if near_tie {
            continue;
        }
        let before = training_step_with(&mut net, &ctx, &requests).unwrap();
        let (after, _) = batch_gradient(&net, &ctx, &requests).unwrap();
        assert!(after <= before, "fixture {i}: {before} -> {after}");
        checked += 1;
    }
    assert_eq!(checked, 50);
}

#[test]
fn constant_objective_drives_sparsity_up() {
    let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 8.0, 1.0 - i as f64 / 8.0, 0.5]).collect();
    let model = gp::fit(&x, &[0.3; 8], &FitOptions::default()).unwrap();
    let acq = AcquisitionConfig::new(AcquisitionKind::Pessimistic, 0.0).unwrap();
    let ideal = IdealPoint::new(-1e-3, -1e-3);
    let ctx = StepContext {
        model: &model,
        acquisition: &acq,
        ideal: &ideal,
        scalarizer: ScalarizerKind::Tchebycheff,
    };
    let mut net = StratNet::new(3, 16, 1e-2, 1);
    let requests: Vec<Request> = [0.7, 0.8, 0.9, 1.0].iter().map(|&l| Request::new(l).unwrap()).collect();
    let sparsity = |net: &StratNet| {
        requests.iter().map(|r| net.predict(r).mean_sparsity()).sum::<f64>() / requests.len() as f64
    };
    let start = sparsity(&net);
    for _ in 0..200 {
        training_step_with(&mut net, &ctx, &requests).unwrap();
    }
    assert!(sparsity(&net) > start + 0.1, "{start} -> {}", sparsity(&net));
}

#[test]
fn sweep_grid_matches_requested_size() {
    let t = trainer::run(small(10), None).unwrap();
    let mut ledger = prefopt::evaluators::EvalLedger::new();
    let sweep = t.true_sweep(11, &mut ledger).unwrap();
    assert_eq!(sweep.len(), 11);
    assert_eq!(ledger.true_evaluations(), 11);
    assert_eq!(sweep[0].0.lambda1(), 0.0);
    assert_eq!(sweep[10].0.lambda1(), 1.0);
    assert_eq!(grid_requests(11).unwrap().len(), 11);
}
