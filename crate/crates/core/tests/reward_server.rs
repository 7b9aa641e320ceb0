use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use vknow_core::corpus::{Manifest, QAItem, TaskDimension, VideoRef};
use vknow_core::gateway::mock::ScriptedTransport;
use vknow_core::gateway::{EndpointConfig, EndpointKind, Gateway, Request as GwRequest, Response};
use vknow_core::rewards::server::{router, RewardService};
use vknow_core::rewards::{RewardScorer, RewardWeights, TrainerMetadata, VerifierConfig};

fn app() -> Router {
    let manifest = Manifest::new(vec![QAItem::new(
        "cat-1",
        VideoRef::new("cat.mp4"),
        TaskDimension::OA,
        "Which animal appears?",
        vec!["cat".into(), "dog".into()],
        0,
    )]);
    // The verifier answers correctly only when the description mentions whiskers.
    let transport = ScriptedTransport::new(|_, req, _| {
        let text = match req {
            GwRequest::Chat { .. } => req.text(),
            _ => unreachable!(),
        };
        Ok(Response::Text(if text.contains("whiskers") { "cat".into() } else { "no idea".into() }))
    });
    let verifier = VerifierConfig::with_endpoint(EndpointConfig::new("http://mock/v1", "verifier", EndpointKind::Chat));
    router(Arc::new(RewardService {
        manifest,
        scorer: RewardScorer::new(RewardWeights::new(0.5).unwrap(), verifier),
        gateway: Arc::new(Gateway::uncached(Arc::new(transport))),
        trainer: TrainerMetadata::default(),
    }))
}

async fn post(app: &Router, body: String) -> (StatusCode, Value) {
    let req = Request::post("/score").header(header::CONTENT_TYPE, "application/json").body(Body::from(body)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn completion(group: &str, item: &str, raw: &str) -> Value {
    json!({"group_id": group, "item_id": item, "completion": raw})
}

#[tokio::test]
async fn scores_a_group() {
    let app = app();
    let good = "<see>an animal with whiskers</see><think>feline</think><answer>A</answer>";
    let blind = "<see>something moves</see><think>guess</think><answer>A</answer>";
    let wrong = "<see>an animal with whiskers</see><think>hmm</think><answer>B</answer>";
    let sloppy = "It is a cat.";
    let body = json!({"completions": [
        completion("g", "cat-1", good),
        completion("g", "cat-1", blind),
        completion("g", "cat-1", wrong),
        completion("g", "cat-1", sloppy),
    ]});
    let (s, v) = post(&app, body.to_string()).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let recs = v["groups"][0]["records"].as_array().unwrap();
    let triple = |r: &Value| (r["r_f"].as_u64().unwrap(), r["r_a"].as_u64().unwrap(), r["r_v"].as_u64().unwrap());
    assert_eq!(triple(&recs[0]), (1, 1, 1));
    assert_eq!(triple(&recs[1]), (1, 1, 0));
    assert_eq!(triple(&recs[2]), (1, 0, 1));
    assert_eq!(triple(&recs[3]).0, 0);
    let totals: Vec<f64> = recs.iter().map(|r| r["total"].as_f64().unwrap()).collect();
    assert_eq!(totals[..3], [2.5, 2.0, 1.5]);
    let adv: Vec<f64> = v["groups"][0]["advantages"].as_array().unwrap().iter().map(|a| a.as_f64().unwrap()).collect();
    assert!(adv.iter().sum::<f64>().abs() < 1e-9);
    assert!(adv[0] > adv[1] && adv[1] > adv[2]);
    assert_eq!(v["trainer"]["lambda"], 0.5);
    assert_eq!(v["trainer"]["clip_epsilon"], 0.2);
}

#[tokio::test]
async fn rejects_malformed_requests() {
    let app = app();
    let (s, v) = post(&app, "{not json".into()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("invalid request body"));

    let body = json!({"completions": [completion("g", "ghost", "x"), completion("g", "ghost", "y")]});
    let (s, _) = post(&app, body.to_string()).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let body = json!({"completions": [completion("solo", "cat-1", "x")]});
    let (s, v) = post(&app, body.to_string()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("solo"));
}

#[tokio::test]
async fn healthz() {
    let resp = app().oneshot(Request::get("/healthz").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
}
