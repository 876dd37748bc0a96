//! Runner-level integration: full episodes in the synthetic office, the
//! bridge protocol over a real socket, and the protocol invariants.

mod common;

use common::{office_graph, office_world};
use navsim_core::dataset::{generate_dataset, validate_dataset, InstructionEpisode, PathId};
use navsim_core::geometry::{Point2, Pose2D};
use navsim_core::gridworld::Cell;
use navsim_core::navgraph::SamplingConstraints;
use navsim_core::runner::*;
use navsim_core::subgoal::RadialGeometry;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::thread;

fn office_fixture() -> (
    navsim_core::gridworld::OccupancyGrid,
    navsim_core::navgraph::NavGraph,
    Vec<InstructionEpisode>,
) {
    let world = office_world();
    let graph = office_graph(&world);
    let episodes = generate_dataset(&graph, 4, &SamplingConstraints::default(), 11, "office")
        .expect("sampling succeeds");
    (world, graph, episodes)
}

#[test]
fn office_dataset_is_consistent() {
    let (_, graph, episodes) = office_fixture();
    let report = validate_dataset(&episodes, &graph);
    assert!(report.is_clean(), "violations: {:?}", report.violations);
}

#[test]
fn with_map_oracle_episode_succeeds() {
    let (world, graph, episodes) = office_fixture();
    let cfg = EpisodeConfig::new(Mode::WithMap, AgentKind::Oracle);
    let run = run_episode_with_map(&world, &graph, &episodes[0], 0, &cfg).unwrap();
    assert!(run.result.sr, "NE = {}", run.result.ne);
    assert!(!run.result.collision && !run.result.navigation_failure);
    // Every offered candidate is a graph neighbor of some viewpoint, and
    // carries its id.
    for rec in &run.decisions {
        for c in &rec.candidates {
            let id = c.id.as_ref().expect("with-map candidates carry ids");
            assert!(graph.contains(id));
        }
    }
}

#[test]
fn with_map_candidates_are_neighbors_of_current_viewpoint() {
    let (world, graph, episodes) = office_fixture();
    let cfg = EpisodeConfig::new(Mode::WithMap, AgentKind::Oracle);
    let run = run_episode_with_map(&world, &graph, &episodes[1], 0, &cfg).unwrap();
    // Reconstruct the robot's viewpoint at each decision from the log: it
    // is the viewpoint whose neighbors exactly match the candidate ids.
    for rec in &run.decisions {
        let ids: Vec<&String> = rec.candidates.iter().filter_map(|c| c.id.as_ref()).collect();
        assert!(!ids.is_empty());
        let host = graph
            .viewpoints()
            .iter()
            .filter(|vp| vp.included)
            .find(|vp| {
                graph
                    .neighbors(&vp.id)
                    .map(|ns| {
                        let mut a: Vec<&str> = ns.iter().map(|n| n.id.as_str()).collect();
                        let mut b: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
                        a.sort_unstable();
                        b.sort_unstable();
                        a == b
                    })
                    .unwrap_or(false)
            });
        assert!(host.is_some(), "step {} candidates match no viewpoint", rec.step);
    }
}

#[test]
fn stop_immediately_scores_zero() {
    // An immediate stop must show up as SR = 0 with zero trajectory
    // length. The random agent stops when it draws k = len, so hunt a seed
    // whose very first draw is a stop.
    let (world, graph, episodes) = office_fixture();
    let mut cfg = EpisodeConfig::new(Mode::WithMap, AgentKind::Random);
    // Hunt a seed whose very first decision is Stop.
    for seed in 0..200 {
        cfg.seed = seed;
        let run = run_episode_with_map(&world, &graph, &episodes[0], 0, &cfg).unwrap();
        if run
            .decisions
            .first()
            .map(|d| d.decision == AgentDecision::Stop)
            .unwrap_or(false)
            && run.decisions.len() == 1
        {
            assert!(run.result.tl < 1e-9);
            assert!(!run.result.sr, "goal within 3 m of start?");
            return;
        }
    }
    panic!("no seed produced an immediate stop");
}

#[test]
fn random_agent_runs_are_deterministic() {
    let (world, graph, episodes) = office_fixture();
    let mut cfg = EpisodeConfig::new(Mode::WithMap, AgentKind::Random);
    cfg.seed = 5;
    let a = run_episode_with_map(&world, &graph, &episodes[2], 2, &cfg).unwrap();
    let b = run_episode_with_map(&world, &graph, &episodes[2], 2, &cfg).unwrap();
    let da = serde_json::to_string(&a.decisions).unwrap();
    let db = serde_json::to_string(&b.decisions).unwrap();
    assert_eq!(da, db);
    assert_eq!(a.trajectory.samples(), b.trajectory.samples());
}

#[test]
fn optional_pose_tracker_logs_estimates() {
    let (world, graph, episodes) = office_fixture();
    let mut cfg = EpisodeConfig::new(Mode::WithMap, AgentKind::Oracle);
    cfg.track_pose = true;
    let run = run_episode_with_map(&world, &graph, &episodes[0], 0, &cfg).unwrap();
    let error = run.tracking_error.expect("tracker ran");
    assert!(error.is_finite());
    assert!(error < 1.0, "per-segment tracking error {error}");
    assert!(run.pose_log.iter().any(|e| e.estimate));
    assert!(run.pose_log.iter().any(|e| !e.estimate));
}

#[test]
fn no_map_oracle_episode_completes() {
    let (world, graph, episodes) = office_fixture();
    let cfg = EpisodeConfig::new(Mode::NoMap, AgentKind::Oracle);
    let run = run_episode_no_map(&world, &episodes[0], &graph, 0, &cfg).unwrap();
    // The episode produced a trajectory and none of the candidates came
    // from the graph.
    assert!(run.trajectory.samples().len() > 1);
    for rec in &run.decisions {
        assert!(rec.candidates.len() <= 5);
        for c in &rec.candidates {
            assert!(c.id.is_none(), "no-map candidates must not carry graph ids");
        }
    }
}

#[test]
fn no_map_oracle_reaches_goal_in_open_room() {
    // An open room: the predictor proposes clear 2.1 m hops everywhere, so
    // the oracle walks straight to the goal.
    let mut world = navsim_core::gridworld::OccupancyGrid::new(
        240,
        240,
        0.05,
        Pose2D::new(0.0, 0.0, 0.0),
        Cell::Free,
    );
    for i in 0..240 {
        world.set(i, 0, Cell::Occupied);
        world.set(i, 239, Cell::Occupied);
        world.set(0, i, Cell::Occupied);
        world.set(239, i, Cell::Occupied);
    }
    let vps = vec![
        navsim_core::navgraph::Viewpoint::new("start", [2.0, 6.0, 0.0]),
        navsim_core::navgraph::Viewpoint::new("mid", [6.0, 6.0, 0.0]),
        navsim_core::navgraph::Viewpoint::new("goal", [10.0, 6.0, 0.0]),
    ];
    let vis = vec![
        ("start".to_string(), "mid".to_string()),
        ("mid".to_string(), "goal".to_string()),
    ];
    let graph = navsim_core::navgraph::build_graph(vps, &vis, 5.0).unwrap();
    let episode = InstructionEpisode {
        path_id: PathId::Num(1),
        scan: "open".into(),
        path: vec!["start".into(), "mid".into(), "goal".into()],
        heading: 0.0,
        distance: 8.0,
        instructions: vec!["walk to the far side".into()],
        extra: Default::default(),
    };
    let cfg = EpisodeConfig::new(Mode::NoMap, AgentKind::Oracle);
    let run = run_episode_no_map(&world, &episode, &graph, 0, &cfg).unwrap();
    assert!(run.result.sr, "NE = {}", run.result.ne);
    assert!(!run.result.collision && !run.result.navigation_failure);
}

#[test]
fn no_map_candidates_avoid_occupied_bins() {
    use navsim_core::gridworld::{simulate_scan, ScanConfig};
    use navsim_core::subgoal::bin_scan;
    let (world, graph, episodes) = office_fixture();
    let cfg = EpisodeConfig::new(Mode::NoMap, AgentKind::Oracle);
    let run = run_episode_no_map(&world, &episodes[1], &graph, 0, &cfg).unwrap();
    // Re-simulate the scan at each decision pose and check every candidate
    // against the radial map (the runner logs decisions in pose order; the
    // first decision happens at the start pose).
    let start = graph.viewpoint(&episodes[1].path[0]).unwrap().point2();
    let pose = Pose2D::new(start.x, start.y, episodes[1].heading);
    if let Some(first) = run.decisions.first() {
        let scan = simulate_scan(&world, pose, &ScanConfig::default()).unwrap();
        let radial = bin_scan(&scan, RadialGeometry::default());
        for c in &first.candidates {
            assert_ne!(
                radial.at_polar(c.range, c.heading),
                Some(Cell::Occupied),
                "candidate in an occupied bin"
            );
        }
    }
}

#[test]
fn no_map_walled_in_start_is_navigation_failure() {
    // A tiny cell around the start: every heading blocked at 0.5 m, so the
    // predictor offers nothing and the episode ends as a navigation failure.
    let mut world = office_world();
    let start = Point2::new(4.5, 4.5);
    for (x0, y0, x1, y1) in [
        (3.9, 3.9, 5.1, 4.0),
        (3.9, 5.0, 5.1, 5.1),
        (3.9, 4.0, 4.0, 5.0),
        (5.0, 4.0, 5.1, 5.0),
    ] {
        world.fill_rect(x0, y0, x1, y1, Cell::Occupied);
    }
    let graph = office_graph(&office_world());
    let episode = InstructionEpisode {
        path_id: PathId::Num(0),
        scan: "walled".into(),
        path: vec!["vp017".into(), "vp018".into()],
        heading: 0.0,
        distance: 1.5,
        instructions: vec!["go".into()],
        extra: Default::default(),
    };
    // Place the episode start at the walled-in position by picking the
    // nearest viewpoint to it.
    let (vp, d) = graph.nearest_viewpoint(start).unwrap();
    assert!(d < 0.1, "lattice viewpoint expected at (3,3), got {}", vp.id);
    let episode = InstructionEpisode {
        path: vec![vp.id.clone(), "vp000".into()],
        ..episode
    };
    let cfg = EpisodeConfig::new(Mode::NoMap, AgentKind::Oracle);
    let run = run_episode_no_map(&world, &episode, &graph, 0, &cfg).unwrap();
    assert!(run.result.navigation_failure);
    assert!(run.decisions.iter().all(|d| d.candidates.is_empty()));
}

// ---------------------------------------------------------------------------
// Bridge protocol
// ---------------------------------------------------------------------------

/// Serve one connection: parse each request line, answer with the closure.
fn serve_once<F>(responder: F) -> String
where
    F: Fn(serde_json::Value) -> String + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut writer = stream;
        let mut line = String::new();
        loop {
            line.clear();
            match reader.read_line(&mut line) {
                Ok(0) | Err(_) => break,
                Ok(_) => {
                    let request: serde_json::Value = match serde_json::from_str(line.trim()) {
                        Ok(v) => v,
                        Err(_) => break,
                    };
                    let response = responder(request);
                    if writer.write_all(response.as_bytes()).is_err() {
                        break;
                    }
                    let _ = writer.write_all(b"\n");
                }
            }
        }
    });
    addr.to_string()
}

#[test]
fn bridge_echo_agent_consumes_candidates_in_order() {
    let endpoint = serve_once(|_req| r#"{"action":"choose","index":0}"#.to_string());
    let mut session = BridgeSession::connect(&endpoint).unwrap();
    let candidates = vec![Candidate {
        id: None,
        range: 1.0,
        heading: 0.0,
        x: 1.0,
        y: 0.0,
        confidence: 1.0,
    }];
    for step in 0..3 {
        let response = session
            .request(&BridgeRequest {
                r#type: "decision",
                episode_id: "e",
                step,
                instruction: "go",
                pose: Pose2D::new(0.0, 0.0, 0.0),
                candidates: &candidates,
                radial: None,
            })
            .unwrap();
        assert!(matches!(response, BridgeResponse::Choose { index: 0 }));
    }
}

#[test]
fn bridge_out_of_range_index_is_protocol_error() {
    let endpoint = serve_once(|_req| r#"{"action":"choose","index":7}"#.to_string());
    let (world, graph, episodes) = office_fixture();
    let mut cfg = EpisodeConfig::new(Mode::WithMap, AgentKind::Bridge { endpoint });
    cfg.max_decisions = 2;
    let err = run_episode_with_map(&world, &graph, &episodes[0], 0, &cfg).unwrap_err();
    assert!(matches!(err, RunnerError::Protocol(_)), "got {err:?}");
}

#[test]
fn bridge_malformed_response_is_protocol_error() {
    let endpoint = serve_once(|_req| "not json at all".to_string());
    let mut session = BridgeSession::connect(&endpoint).unwrap();
    let err = session
        .request(&BridgeRequest {
            r#type: "decision",
            episode_id: "e",
            step: 0,
            instruction: "",
            pose: Pose2D::new(0.0, 0.0, 0.0),
            candidates: &[],
            radial: None,
        })
        .unwrap_err();
    assert!(matches!(err, RunnerError::Protocol(_)));
}

#[test]
fn bridge_loopback_oracle_reproduces_in_process_metrics() {
    let (world, graph, episodes) = office_fixture();
    let episode = &episodes[0];

    // In-process oracle first; its decision log then drives a replay server.
    let cfg = EpisodeConfig::new(Mode::WithMap, AgentKind::Oracle);
    let reference = run_episode_with_map(&world, &graph, episode, 0, &cfg).unwrap();
    let script: Vec<String> = reference
        .decisions
        .iter()
        .map(|d| serde_json::to_string(&d.decision).unwrap())
        .collect();

    let step_counter = std::sync::atomic::AtomicUsize::new(0);
    let endpoint = serve_once(move |_req| {
        let i = step_counter.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        script[i.min(script.len() - 1)].clone()
    });
    let bridge_cfg = EpisodeConfig::new(Mode::WithMap, AgentKind::Bridge { endpoint });
    let replay = run_episode_with_map(&world, &graph, episode, 0, &bridge_cfg).unwrap();

    assert_eq!(replay.result, reference.result);
    assert_eq!(
        serde_json::to_string(&replay.decisions).unwrap(),
        serde_json::to_string(&reference.decisions).unwrap()
    );
}

#[test]
fn bridge_predictor_grid_round_trip() {
    // A predictor bridge answering with a uniform ring grid: the runner
    // must extract candidates from it.
    let geom = RadialGeometry::default();
    let ring = geom.range_bin(2.0).unwrap();
    let mut probabilities = vec![0.0; geom.len()];
    for h in 0..geom.n_heading {
        probabilities[h * geom.n_range + ring] = 0.9;
    }
    let payload = serde_json::json!({
        "action": "grid",
        "n_heading": geom.n_heading,
        "n_range": geom.n_range,
        "max_radius": geom.max_radius,
        "probabilities": probabilities,
    })
    .to_string();
    let endpoint = serve_once(move |req| {
        match req.get("type").and_then(|t| t.as_str()) {
            Some("predict") => payload.clone(),
            _ => r#"{"action":"stop"}"#.to_string(),
        }
    });

    let (world, graph, episodes) = office_fixture();
    let mut cfg = EpisodeConfig::new(Mode::NoMap, AgentKind::Oracle);
    cfg.predictor = PredictorKind::Bridge { endpoint };
    cfg.max_decisions = 3;
    let run = run_episode_no_map(&world, &episodes[0], &graph, 0, &cfg).unwrap();
    assert!(run
        .decisions
        .iter()
        .any(|d| !d.candidates.is_empty()), "bridge grid produced no candidates");
    for rec in &run.decisions {
        for c in &rec.candidates {
            assert!((c.range - 2.0).abs() < 0.5, "range {}", c.range);
        }
    }
}
