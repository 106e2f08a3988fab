use vaxledger_core::ordering::{InstanceStatus, Role};
use vaxledger_core::scenario::{
    calibrate, evaluate, run_scenario, run_scenario_with, run_with_fixture, write_csv, CalibrationOptions, FaultEvent,
    Fixture, RunOptions, ScenarioConfig, Step, TargetRow,
};
use vaxledger_core::{BatchConfig, LinkParams, ServiceTimeProfile};

fn zero_config(step: Step, latency_ms: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(step);
    cfg.tps_levels = vec![1.0];
    cfg.duration_seconds = 1.0;
    cfg.drain_seconds = 1.0;
    cfg.preloaded_records = 10;
    cfg.service_profile = ServiceTimeProfile::zero();
    cfg.link = LinkParams {
        latency_ms,
        ..LinkParams::default()
    };
    cfg.batch = BatchConfig {
        max_message_count: 1,
        ..BatchConfig::default()
    };
    cfg
}

fn tx_ms(link: &LinkParams, size: u64) -> f64 {
    link.transmission(size).as_millis_f64()
}

#[test]
fn zero_service_verify_costs_only_transmission() {
    let cfg = zero_config(Step::Verify, 0.0);
    let p = &cfg.service_profile;
    let expected = tx_ms(&cfg.link, p.query_bytes) + tx_ms(&cfg.link, p.response_bytes);
    let level = &run_scenario(&cfg).unwrap().levels[0];
    assert_eq!(level.requests, 1);
    assert!((level.mean_ms - expected).abs() < 1e-9, "{} vs {expected}", level.mean_ms);
}

#[test]
fn zero_service_register_costs_only_transmission() {
    let cfg = zero_config(Step::Register, 0.0);
    let p = &cfg.service_profile;
    let l = &cfg.link;
    let block = p.block_header_bytes + p.block_tx_bytes;
    // client -> peer, peer -> sequencer, sequencer -> leader broker, three
    // replicas serialized on the leader's interface, the last follower's ack,
    // leader -> first sequencer, sequencer -> peer, peer -> client.
    let expected = tx_ms(l, p.request_bytes)
        + 5.0 * tx_ms(l, p.envelope_bytes)
        + tx_ms(l, p.replica_ack_bytes)
        + 2.0 * tx_ms(l, block)
        + tx_ms(l, p.ack_bytes);
    let level = &run_scenario(&cfg).unwrap().levels[0];
    assert_eq!(level.errors, 0);
    assert!((level.mean_ms - expected).abs() < 1e-9, "{} vs {expected}", level.mean_ms);

    // Each of the eight hops on the critical path adds one latency.
    let lagged = &run_scenario(&zero_config(Step::Register, 3.0)).unwrap().levels[0];
    assert!((lagged.mean_ms - expected - 8.0 * 3.0).abs() < 1e-9, "{}", lagged.mean_ms);
}

#[test]
fn calibration_recovers_its_own_output() {
    let opts = CalibrationOptions {
        duration_seconds: 10.0,
        drain_seconds: 5.0,
        preloaded_records: 1000,
        max_rounds: 12,
        min_step: 1.0 / 64.0,
        fit_bandwidth: false,
        ..CalibrationOptions::default()
    };
    let fixture = Fixture::new(opts.seed, opts.preloaded_records).unwrap();
    let batch = BatchConfig::default();
    // Each perturbation is one initial search step (1/8 of the parameter
    // range), so the truth lies on the search lattice. Off-lattice truths are
    // only recoverable to the resolution of the commit tick staircase.
    let mut truth = ServiceTimeProfile::default();
    truth.rest_overhead_ms += 30.0 / 8.0;
    truth.commit_per_tx_ms -= 29.0 / 8.0;
    truth.query_batch_interval_ms += 230.0 / 8.0;
    let rows: Vec<TargetRow> = [(Step::Register, 1.0), (Step::Register, 28.0), (Step::Verify, 1.0), (Step::Verify, 100.0)]
        .into_iter()
        .map(|(step, tps)| TargetRow {
            step,
            tps,
            response_time_ms: 1.0,
            peer_bandwidth_kb: 1.0,
            ordering_bandwidth_kb: 1.0,
        })
        .collect();
    let generated = evaluate(&rows, &truth, &batch, &opts, &fixture).unwrap();
    let targets: Vec<TargetRow> = rows
        .iter()
        .zip(&generated)
        .map(|(r, g)| TargetRow {
            response_time_ms: g.simulated_ms,
            peer_bandwidth_kb: g.simulated_peer_kb,
            ..*r
        })
        .collect();

    let fit = calibrate(&targets, &ServiceTimeProfile::default(), &batch, &opts).unwrap();
    for r in &fit.residuals {
        assert!(r.response_error < 0.01, "{:?} {} off by {:.4}", r.step, r.tps, r.response_error);
    }
}

#[test]
fn committed_matches_requests_minus_errors() {
    let mut cfg = ScenarioConfig::new(Step::Register);
    cfg.tps_levels = vec![8.0];
    cfg.duration_seconds = 10.0;
    cfg.drain_seconds = 10.0;
    cfg.preloaded_records = 50;
    let fixture = Fixture::new(cfg.seed, cfg.preloaded_records).unwrap();
    let genesis = fixture.genesis_tx_count();
    let opts = RunOptions {
        trace: false,
        keep_ledgers: true,
    };

    // Two sequencers down between 3 s and 6 s makes the cluster unavailable.
    let mut faulty = cfg.clone();
    for (at_ms, status) in [(3000.0, InstanceStatus::Down), (6000.0, InstanceStatus::Up)] {
        for index in [0, 1] {
            faulty.fault_schedule.push(FaultEvent {
                at_ms,
                role: Role::Sequencer,
                index,
                status,
            });
        }
    }

    for (c, expect_errors) in [(&cfg, false), (&faulty, true)] {
        let out = run_with_fixture(c, &fixture, &opts).unwrap();
        let m = &out.report.levels[0];
        let ledger = &out.ledgers[0].1;
        assert!(ledger.chain().verify().is_ok());
        let committed = ledger.valid_tx_count() - genesis;
        assert_eq!(committed, m.committed);
        assert_eq!(committed, m.requests - m.errors, "{m:?}");
        assert_eq!(m.accepted, committed);
        assert_eq!(m.errors > 0, expect_errors, "{m:?}");
        if expect_errors {
            assert!(m.saturated);
        }
    }
}

#[test]
fn reruns_are_byte_identical_and_seeds_matter() {
    let mut cfg = ScenarioConfig::new(Step::Register);
    cfg.tps_levels = vec![4.0, 16.0];
    cfg.duration_seconds = 5.0;
    cfg.drain_seconds = 5.0;
    cfg.preloaded_records = 30;
    let opts = RunOptions {
        trace: true,
        keep_ledgers: true,
    };
    let snapshot = |cfg: &ScenarioConfig| {
        let out = run_scenario_with(cfg, &opts).unwrap();
        let mut csv = Vec::new();
        write_csv(&out.report, &mut csv).unwrap();
        let mut ledgers = Vec::new();
        for (_, l) in &out.ledgers {
            l.export_snapshot(&mut ledgers).unwrap();
        }
        (csv, ledgers, out.traces)
    };
    let a = snapshot(&cfg);
    let b = snapshot(&cfg);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    cfg.seed += 1;
    let c = snapshot(&cfg);
    assert_ne!(a.1, c.1);
}

#[test]
fn spread_target_commits_on_every_peer() {
    let mut cfg = ScenarioConfig::new(Step::Register);
    cfg.tps_levels = vec![27.0];
    cfg.duration_seconds = 2.0;
    cfg.drain_seconds = 5.0;
    cfg.preloaded_records = 10;
    cfg.target = vaxledger_core::scenario::TargetNode::Spread;
    let m = &run_scenario(&cfg).unwrap().levels[0];
    assert_eq!(m.requests, 54);
    assert_eq!(m.errors, 0);
    assert_eq!(m.accepted, 54);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = ScenarioConfig::new(Step::Verify);
    cfg.tps_levels = vec![];
    assert!(run_scenario(&cfg).is_err());
    cfg.tps_levels = vec![-1.0];
    assert!(run_scenario(&cfg).is_err());
    cfg.tps_levels = vec![1.0];
    cfg.duration_seconds = 0.0;
    assert!(run_scenario(&cfg).is_err());
}
