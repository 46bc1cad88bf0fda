use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use axum::http::{Method, StatusCode};
use concealer_core::bws::design::DesignConfig;
use concealer_core::bws::results::{read_results, RowKind};
use concealer_core::gengrid::{expand, GridConfig};
use concealer_expserver::client::Client;
use concealer_expserver::session::replay;
use concealer_expserver::{
    router, AppState, Experiment, JudgmentRequest, ManualClock, Payload, ServerConfig, VerbalizationRequest,
};

const POSITIVES: [&str; 5] = ["birds", "brook", "rain", "waves", "wind"];

fn experiment(audio_dir: &Path) -> Experiment {
    let grid = GridConfig::experiment(&["ventil1", "ventil2"], &POSITIVES).grid;
    let specs = expand(&grid).unwrap();
    let audio = specs
        .iter()
        .map(|s| (s.id.clone(), audio_dir.join(s.file_name())))
        .chain(POSITIVES.iter().map(|p| (p.to_string(), audio_dir.join(format!("{p}.wav")))))
        .collect();
    Experiment {
        stimuli: specs.into_iter().map(|s| s.id).collect(),
        positives: POSITIVES.iter().map(|p| p.to_string()).collect(),
        audio,
    }
}

fn open(dir: &Path, clock: Arc<ManualClock>) -> Arc<AppState> {
    AppState::open(experiment(dir), ServerConfig::new(dir), clock).unwrap()
}

fn first_last(_: &[concealer_expserver::AudioRef]) -> (usize, usize) {
    (0, 3)
}

#[tokio::test]
async fn full_session_writes_results_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(1_000_000));
    let state = open(dir.path(), clock.clone());
    let client = Client::new(router(state.clone()));

    let created = client.create().await.unwrap();
    assert_eq!(created.participant_id, 1);
    let Payload::Trial {
        trial_index,
        trial_count,
        stimuli,
    } = created.next
    else {
        panic!("expected a trial");
    };
    assert_eq!((trial_index, trial_count, stimuli.len()), (1, 41, 4));

    let mut next = Payload::Trial {
        trial_index,
        trial_count,
        stimuli,
    };
    let mut verbalized = Vec::new();
    loop {
        clock.advance(4_321);
        next = match next {
            Payload::Trial {
                trial_index, stimuli, ..
            } => {
                let req = JudgmentRequest {
                    trial_index,
                    best_id: stimuli[1].id.clone(),
                    worst_id: stimuli[2].id.clone(),
                    rt_ms: 900,
                };
                client.judge(1, &req).await.unwrap().next
            }
            Payload::Verbalization { index, count, positive } => {
                assert_eq!((index, count), (verbalized.len() + 1, 5));
                verbalized.push(positive.id.clone());
                let req = VerbalizationRequest {
                    positive_id: positive.id,
                    text: format!("guess {index}"),
                };
                client.verbalize(1, &req).await.unwrap().next
            }
            Payload::Complete => break,
        };
    }
    let mut sorted = verbalized.clone();
    sorted.sort();
    assert_eq!(sorted, POSITIVES);

    let ack = client.finish(1).await.unwrap();
    assert_eq!(ack.results_path, dir.path().join("results1.csv"));
    assert_eq!(ack.duration_s, (47 * 4_321) / 1000);

    let bytes = std::fs::read(&ack.results_path).unwrap();
    let rows = read_results(&bytes[..]).unwrap();
    let count = |k: RowKind| rows.iter().filter(|r| r.phase == k).count();
    assert_eq!(count(RowKind::Main), 35);
    assert_eq!(count(RowKind::Retest), 4);
    assert_eq!(count(RowKind::Verbalization), 5);
    assert_eq!(count(RowKind::Duration), 1);
    assert_eq!(rows.len(), 45);

    let session = replay(&state.log_path(1)).unwrap();
    for r in rows.iter().filter(|r| r.is_judgment()) {
        assert!(r.tuple().ids().iter().all(|id| session.design.contains_stimulus(id)));
        assert_ne!(r.best_id, r.worst_id);
    }
    assert_eq!(session.results_csv(), bytes);

    let again = client.finish(1).await.unwrap();
    assert_eq!(again, ack);
    assert_eq!(client.trial(1).await.unwrap_err().status, StatusCode::GONE);
}

#[tokio::test]
async fn judgment_rules() {
    let dir = tempfile::tempdir().unwrap();
    let state = open(dir.path(), Arc::new(ManualClock::new(0)));
    let client = Client::new(router(state.clone()));
    let id = client.create().await.unwrap().participant_id;
    let Payload::Trial { stimuli, .. } = client.trial(id).await.unwrap() else {
        panic!()
    };

    let same = JudgmentRequest {
        trial_index: 1,
        best_id: stimuli[0].id.clone(),
        worst_id: stimuli[0].id.clone(),
        rt_ms: 10,
    };
    assert_eq!(client.judge(id, &same).await.unwrap_err().status, StatusCode::UNPROCESSABLE_ENTITY);

    let foreign = JudgmentRequest {
        best_id: "nope".into(),
        ..same.clone()
    };
    assert_eq!(client.judge(id, &foreign).await.unwrap_err().status, StatusCode::UNPROCESSABLE_ENTITY);

    let ahead = JudgmentRequest {
        trial_index: 2,
        worst_id: stimuli[1].id.clone(),
        ..same.clone()
    };
    assert_eq!(client.judge(id, &ahead).await.unwrap_err().status, StatusCode::CONFLICT);

    let good = JudgmentRequest {
        trial_index: 1,
        ..ahead.clone()
    };
    let ack = client.judge(id, &good).await.unwrap();
    assert!(matches!(ack.next, Payload::Trial { trial_index: 2, .. }));
    let dup = client.judge(id, &good).await.unwrap();
    assert_eq!(dup, ack);

    let changed = JudgmentRequest {
        worst_id: stimuli[2].id.clone(),
        ..good.clone()
    };
    assert_eq!(client.judge(id, &changed).await.unwrap_err().status, StatusCode::CONFLICT);

    let session = replay(&state.log_path(id)).unwrap();
    assert_eq!(session.judged.len(), 1);
    assert_eq!(session.cursor, 2);

    assert_eq!(client.trial(99).await.unwrap_err().status, StatusCode::NOT_FOUND);
    let (status, _) = client.raw(Method::GET, "/session/abc/trial", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn payloads_hide_the_phase() {
    let dir = tempfile::tempdir().unwrap();
    let client = Client::new(router(open(dir.path(), Arc::new(ManualClock::new(0)))));
    let id = client.create().await.unwrap().participant_id;
    let (status, body) = client.raw(Method::GET, &format!("/session/{id}/trial"), None).await;
    assert_eq!(status, StatusCode::OK);
    let text = String::from_utf8(body.to_vec()).unwrap();
    for word in ["training", "retest", "main", "phase", "original"] {
        assert!(!text.contains(word), "{word} leaks in {text}");
    }
}

#[tokio::test]
async fn premature_finish_and_verbalization_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let client = Client::new(router(open(dir.path(), Arc::new(ManualClock::new(0)))));
    let id = client.create().await.unwrap().participant_id;
    assert_eq!(client.finish(id).await.unwrap_err().status, StatusCode::CONFLICT);
    let v = VerbalizationRequest {
        positive_id: "rain".into(),
        text: "rain".into(),
    };
    assert_eq!(client.verbalize(id, &v).await.unwrap_err().status, StatusCode::CONFLICT);

    loop {
        match client.trial(id).await.unwrap() {
            Payload::Trial {
                trial_index, stimuli, ..
            } => {
                let req = JudgmentRequest {
                    trial_index,
                    best_id: stimuli[3].id.clone(),
                    worst_id: stimuli[0].id.clone(),
                    rt_ms: 5,
                };
                client.judge(id, &req).await.unwrap();
            }
            Payload::Verbalization { positive, .. } => {
                assert_eq!(client.finish(id).await.unwrap_err().status, StatusCode::CONFLICT);
                let wrong = POSITIVES.iter().find(|p| **p != positive.id).unwrap();
                let req = VerbalizationRequest {
                    positive_id: wrong.to_string(),
                    text: "x".into(),
                };
                assert_eq!(client.verbalize(id, &req).await.unwrap_err().status, StatusCode::CONFLICT);
                let unknown = VerbalizationRequest {
                    positive_id: "hum".into(),
                    text: "x".into(),
                };
                assert_eq!(client.verbalize(id, &unknown).await.unwrap_err().status, StatusCode::UNPROCESSABLE_ENTITY);
                let req = VerbalizationRequest {
                    positive_id: positive.id,
                    text: "something".into(),
                };
                let a = client.verbalize(id, &req).await.unwrap();
                assert_eq!(client.verbalize(id, &req).await.unwrap(), a);
            }
            Payload::Complete => break,
        }
    }
    let rows = read_results(&std::fs::read(client.finish(id).await.unwrap().results_path).unwrap()[..]).unwrap();
    assert_eq!(rows.iter().filter(|r| r.phase == RowKind::Verbalization).count(), 5);
}

#[tokio::test]
async fn thirty_sessions_get_distinct_designs() {
    let dir = tempfile::tempdir().unwrap();
    let state = open(dir.path(), Arc::new(ManualClock::new(0)));
    let client = Client::new(router(state.clone()));
    for expected in 1..=30 {
        assert_eq!(client.create().await.unwrap().participant_id, expected);
    }
    let mut seen = HashSet::new();
    for id in 1..=30 {
        let s = replay(&state.log_path(id)).unwrap();
        assert_eq!(s.design.main.len(), 35);
        for t in &s.design.main {
            assert!(seen.insert(t.set_key()), "tuple shared across participants");
        }
    }
}

#[tokio::test]
async fn saturated_registry_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let stimuli: Vec<String> = (0..8).map(|i| format!("s{i}")).collect();
    let exp = Experiment {
        stimuli,
        positives: vec!["p".into()],
        audio: Default::default(),
    };
    let mut config = ServerConfig::new(dir.path());
    config.design = DesignConfig {
        retests: 0,
        training: 0,
        max_reshuffles: 20,
        training_seed: 0,
    };
    let client = Client::new(router(AppState::open(exp, config, Arc::new(ManualClock::new(0))).unwrap()));
    let mut last = None;
    for _ in 0..40 {
        if let Err(e) = client.create().await {
            last = Some(e.status);
            break;
        }
    }
    assert_eq!(last, Some(StatusCode::SERVICE_UNAVAILABLE));
}

#[tokio::test]
async fn restart_resumes_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(0));
    let state = open(dir.path(), clock.clone());
    let client = Client::new(router(state));
    let done = client.run_session(first_last).await.unwrap();
    let open_id = client.create().await.unwrap().participant_id;
    let Payload::Trial { stimuli, .. } = client.trial(open_id).await.unwrap() else {
        panic!()
    };
    let req = JudgmentRequest {
        trial_index: 1,
        best_id: stimuli[0].id.clone(),
        worst_id: stimuli[1].id.clone(),
        rt_ms: 1,
    };
    client.judge(open_id, &req).await.unwrap();
    let before = std::fs::read(&done.results_path).unwrap();
    std::fs::remove_file(&done.results_path).unwrap();
    drop(client);

    let state = open(dir.path(), clock);
    assert_eq!(state.session_ids(), vec![1, 2]);
    assert_eq!(std::fs::read(&done.results_path).unwrap(), before);
    let client = Client::new(router(state.clone()));
    assert!(matches!(client.trial(open_id).await.unwrap(), Payload::Trial { trial_index: 2, .. }));
    assert_eq!(client.create().await.unwrap().participant_id, 3);
    let keys: HashSet<_> = (1..=3)
        .flat_map(|id| replay(&state.log_path(id)).unwrap().design.main)
        .map(|t| t.set_key())
        .collect();
    assert_eq!(keys.len(), 3 * 35);
}

#[tokio::test]
async fn torn_log_tail_is_ignored() {
    let dir = tempfile::tempdir().unwrap();
    let state = open(dir.path(), Arc::new(ManualClock::new(0)));
    let client = Client::new(router(state.clone()));
    let id = client.create().await.unwrap().participant_id;
    let path = state.log_path(id);
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"event\":\"judged\",\"trial_in");
    std::fs::write(&path, text).unwrap();
    let s = replay(&path).unwrap();
    assert_eq!(s.cursor, 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_stay_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let state = open(dir.path(), Arc::new(ManualClock::new(0)));
    let client = Client::new(router(state.clone()));
    let mut tasks = Vec::new();
    for k in 0..6usize {
        let c = client.clone();
        tasks.push(tokio::spawn(async move {
            c.run_session(move |_| (k % 4, (k + 1 + k / 4) % 4)).await.unwrap()
        }));
    }
    let mut ids = Vec::new();
    for t in tasks {
        ids.push(t.await.unwrap().participant_id);
    }
    ids.sort();
    assert_eq!(ids, (1..=6).collect::<Vec<_>>());
    for id in ids {
        let s = replay(&state.log_path(id)).unwrap();
        let rows = read_results(&std::fs::read(dir.path().join(format!("results{id}.csv"))).unwrap()[..]).unwrap();
        assert_eq!(rows.len(), 45);
        assert_eq!(s.results_csv(), std::fs::read(dir.path().join(format!("results{id}.csv"))).unwrap());
        let mut patterns = HashSet::new();
        for r in rows.iter().filter(|r| r.is_judgment()) {
            assert_eq!(r.participant_id, id);
            assert!(r.tuple().ids().iter().all(|x| s.design.contains_stimulus(x)));
            patterns.insert((r.tuple().position(&r.best_id).unwrap(), r.tuple().position(&r.worst_id).unwrap()));
        }
        assert_eq!(patterns.len(), 1, "session {id} saw choices from another session");
    }
}

#[tokio::test]
async fn audio_is_served_by_id() {
    let dir = tempfile::tempdir().unwrap();
    let state = open(dir.path(), Arc::new(ManualClock::new(0)));
    let id = state.experiment().stimuli[0].clone();
    std::fs::write(state.audio_path(&id).unwrap(), b"RIFFfake").unwrap();
    let client = Client::new(router(state));
    let (status, body) = client.raw(Method::GET, &format!("/audio/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&body[..], b"RIFFfake");
    let (status, _) = client.raw(Method::GET, "/audio/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}
