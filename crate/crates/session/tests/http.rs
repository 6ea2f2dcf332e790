use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use banditlab_core::envgen::{gen_reward_group, gen_stationary_games, EnvInstance};
use banditlab_core::rng::{self, tags};
use banditlab_core::store::parse_dataset_jsonl;
use banditlab_core::{EnvRef, EnvSpec, Variant};
use banditlab_session::{router, App};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Client {
    router: Router,
    token: Option<String>,
}

impl Client {
    fn new(dir: &std::path::Path, token: Option<&str>) -> Self {
        let app = Arc::new(App::open(dir, token.map(str::to_string)).unwrap());
        Self { router: router(app, None), token: token.map(str::to_string) }
    }

    async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, String) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = &self.token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        (status, String::from_utf8(bytes.to_vec()).unwrap())
    }

    async fn json(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (s, text) = self.call(method, uri, body).await;
        (s, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    async fn create(&self, body: Value) -> String {
        let (s, v) = self.json("POST", "/sessions", Some(body)).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["session_id"].as_str().unwrap().to_string()
    }

    async fn pick(&self, id: &str, arm: i64) -> (StatusCode, Value) {
        self.json("POST", &format!("/sessions/{id}/choices"), Some(json!({ "arm": arm }))).await
    }
}

#[tokio::test]
async fn stationary_create_advertises_twenty_games() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::new(dir.path(), None);
    let (s, v) = c.json("POST", "/sessions", Some(json!({"env": "stationary2", "seed": 4}))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["games"], 20);
    assert_eq!(v["rounds_per_game"], 10);
    assert_eq!(v["arm_labels"], json!([1, 2]));
    assert!(v["description"].as_str().unwrap().contains("20 games"));
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::new(dir.path(), None);
    let (s, _) = c.json("POST", "/sessions", Some(json!({"env": "casino9"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = c.json("POST", "/sessions", Some(json!({"env": "stationary2", "group_id": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = c.call("POST", "/sessions", Some(json!({"nope": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = c.pick("missing", 1).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = c.json("GET", "/sessions/missing/state", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let id = c.create(json!({"env": "stationary2"})).await;
    for bad in [0, 3, -1] {
        let (s, _) = c.pick(&id, bad).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
    }
    let (s, _) = c.json("GET", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn restless_rewards_come_from_the_bound_group() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::new(dir.path(), None);
    let (_, v) = c.json("POST", "/sessions", Some(json!({"env": "restless4", "group_id": 2}))).await;
    assert_eq!(v["group_id"], 2);
    let id = v["session_id"].as_str().unwrap().to_string();
    let spec = EnvSpec::preset(Variant::Restless4);
    let group = gen_reward_group(&spec, 2, 2).unwrap();
    for t in 1..=300 {
        let arm = (t * 7 % 4) as i64;
        let (s, r) = c.pick(&id, arm).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(r["reward"].as_f64().unwrap(), group.rewards[arm as usize][t - 1]);
    }
    let (s, _) = c.pick(&id, 0).await;
    assert_eq!(s, StatusCode::GONE);
    let (_, st) = c.json("GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(st["status"], "complete");
    assert!(st["cursor"].is_null());
}

#[tokio::test]
async fn cursor_conflicts_and_idempotent_retries() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::new(dir.path(), None);
    let id = c.create(json!({"env": "stationary2", "seed": 1})).await;
    let uri = format!("/sessions/{id}/choices");
    let (s, _) = c.json("POST", &uri, Some(json!({"arm": 1, "game": 1, "round": 2}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let body = json!({"arm": 2, "game": 1, "round": 1, "idempotency_key": "k1"});
    let (s1, first) = c.call("POST", &uri, Some(body.clone())).await;
    let (s2, again) = c.call("POST", &uri, Some(body)).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(first, again);
    for arm in [1, 2] {
        c.pick(&id, arm).await;
    }
    let (_, st) = c.json("GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(st["cursor"], json!({"game": 1, "round": 4}));
    assert_eq!(st["history"].as_array().unwrap().len(), 3);
    assert!(!st.to_string().contains("true_means"));
}

#[tokio::test]
async fn completed_stationary_session_exports_twenty_trials() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::new(dir.path(), None);
    let id = c.create(json!({"env": "stationary2", "seed": 11})).await;
    let mut last = Value::Null;
    for i in 0..200 {
        let (s, r) = c.pick(&id, 1 + (i % 3 == 0) as i64).await;
        assert_eq!(s, StatusCode::OK);
        last = r;
    }
    assert_eq!(last["done"], true);
    let (s, text) = c.call("GET", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (d, _) = parse_dataset_jsonl(text.as_bytes()).unwrap();
    assert_eq!(d.trajectories.len(), 20);
    assert!(d.trajectories.iter().all(|t| t.subject_id == id && t.steps.len() == 10));
    assert!(banditlab_core::domain::validate_dataset(&d).is_empty());

    // Same generators as agent runs.
    let spec = EnvSpec::preset(Variant::Stationary2);
    let games = gen_stationary_games(&spec, 20, rng::derive(11, &[tags::SESSION])).unwrap();
    for (t, g) in d.trajectories.iter().zip(games) {
        assert_eq!(t.env, EnvRef::TrueMeans(g.true_means.clone()));
        let env = EnvInstance::stationary(&spec, g);
        for st in &t.steps {
            assert_eq!(st.reward, env.reward_at(st.choice, st.round).unwrap());
        }
    }
    let total: f64 = d.trajectories.iter().flat_map(|t| &t.steps).map(|s| s.reward).sum();
    assert_eq!(last["total_points"].as_f64().unwrap(), total);
}

#[tokio::test]
async fn restart_recovers_every_acknowledged_choice() {
    let dir = tempfile::tempdir().unwrap();
    let (id, before) = {
        let c = Client::new(dir.path(), None);
        let id = c.create(json!({"env": "restless4", "seed": 5})).await;
        for arm in [0, 3, 3, 1, 2] {
            c.pick(&id, arm).await;
        }
        let (_, st) = c.json("GET", &format!("/sessions/{id}/state"), None).await;
        (id, st)
    };
    let c = Client::new(dir.path(), None);
    let (_, after) = c.json("GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(before, after);
    assert_eq!(after["cursor"]["round"], 6);
    let (s, _) = c.pick(&id, 2).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn abandoned_sessions_refuse_choices() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::new(dir.path(), None);
    let id = c.create(json!({"env": "stationary2"})).await;
    for _ in 0..12 {
        c.pick(&id, 1).await;
    }
    let (s, v) = c.json("POST", &format!("/sessions/{id}/abandon"), None).await;
    assert_eq!((s, v["status"].as_str()), (StatusCode::OK, Some("abandoned")));
    let (s, _) = c.pick(&id, 1).await;
    assert_eq!(s, StatusCode::GONE);
    let (s, text) = c.call("GET", &format!("/sessions/{id}/export"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (d, _) = parse_dataset_jsonl(text.as_bytes()).unwrap();
    assert_eq!(d.trajectories.len(), 1);
}

#[tokio::test]
async fn bearer_token_is_enforced_when_configured() {
    let dir = tempfile::tempdir().unwrap();
    let open = Client { token: None, ..Client::new(dir.path(), Some("t0k")) };
    let (s, _) = open.json("POST", "/sessions", Some(json!({"env": "stationary2"}))).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let authed = Client::new(dir.path(), Some("t0k"));
    authed.create(json!({"env": "stationary2"})).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_stay_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let c = Arc::new(Client::new(dir.path(), None));
    let mut ids = Vec::new();
    for _ in 0..6 {
        ids.push(c.create(json!({"env": "restless4", "group_id": 1})).await);
    }
    let tasks: Vec<_> = ids
        .iter()
        .cloned()
        .enumerate()
        .map(|(k, id)| {
            let c = c.clone();
            tokio::spawn(async move {
                for _ in 0..40 {
                    let (s, _) = c.pick(&id, (k % 4) as i64).await;
                    assert_eq!(s, StatusCode::OK);
                }
            })
        })
        .collect();
    for t in tasks {
        t.await.unwrap();
    }
    let group = gen_reward_group(&EnvSpec::preset(Variant::Restless4), 1, 1).unwrap();
    for (k, id) in ids.iter().enumerate() {
        let (_, st) = c.json("GET", &format!("/sessions/{id}/state"), None).await;
        assert_eq!(st["cursor"]["round"], 41);
        let expected: f64 = (0..40).map(|t| group.rewards[k % 4][t]).sum();
        assert_eq!(st["total_points"].as_f64().unwrap(), expected);
    }
}
