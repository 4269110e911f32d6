use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use medner::linking::MappingTable;
use medner::pipeline::PipelineConfig;
use medner::stacking::{FeatureMode, MetaNet};
use medner_cli::service::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/mapping_fixture.csv");

fn app(with_table: bool, metanet: Option<MetaNet>) -> axum::Router {
    let table = with_table.then(|| MappingTable::load_csv(FIXTURE).unwrap().0);
    let state = AppState::new(table, metanet, &PipelineConfig::default()).unwrap();
    router(Arc::new(state), None)
}

async fn call(app: axum::Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn labels_are_canonical() {
    let (status, body) = call(app(false, None), "GET", "/labels", None).await;
    assert_eq!(status, StatusCode::OK);
    let labels: Vec<&str> = body["labels"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(labels.len(), 19);
    assert_eq!(labels[0], "O");
    assert_eq!(labels[1], "B-ADE");
    assert_eq!(labels[18], "I-Strength");
    assert_eq!(body["collapsed"].as_array().unwrap().len(), 10);
}

#[tokio::test]
async fn health_reports_loaded_state() {
    let (status, body) = call(app(true, None), "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["mapping_entries"], 13);
    assert_eq!(body["metanet"], false);
}

#[tokio::test]
async fn link_paracetamol() {
    let (status, body) = call(app(true, None), "POST", "/link", Some(r#"{"term":"paracetamol"}"#)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["matched"]["entry"]["snomed_code"], "322236009");
    assert_eq!(body["matched"]["score"], 1.0);
    assert!(body["snomed_url"].as_str().unwrap().contains("322236009"));
    assert_eq!(body["url"], body["snomed_url"]);

    let (_, body) = call(app(true, None), "POST", "/link", Some(r#"{"term":"co codamol","kb":"bnf"}"#)).await;
    assert!(body["url"].as_str().unwrap().contains("co%20codamol"));
}

#[tokio::test]
async fn link_without_table_is_unavailable() {
    let (status, body) = call(app(false, None), "POST", "/link", Some(r#"{"term":"paracetamol"}"#)).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"]["kind"], "MappingUnavailable");
}

#[tokio::test]
async fn bad_link_payloads_are_client_errors() {
    for body in [r#"{"kb":"snomed"}"#, r#"{"term":"x","kb":"icd"}"#, "not json", r#"{"term":"   "}"#] {
        let (status, resp) = call(app(true, None), "POST", "/link", Some(body)).await;
        assert!(status.is_client_error(), "{body}: {status}");
        assert!(resp["error"]["kind"].is_string());
    }
}

#[tokio::test]
async fn annotate_returns_entities_with_char_offsets() {
    let text = "Patient started  Amoxicillin 500mg capsules orally tds.";
    let payload = json!({ "text": text, "strategy": "max-logit" }).to_string();
    let (status, body) = call(app(true, None), "POST", "/annotate", Some(&payload)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["words"].as_array().unwrap().len(), 7);
    let drug = body["entities"].as_array().unwrap().iter().find(|e| e["class"] == "Drug").unwrap();
    let (s, e) = (drug["char_start"].as_u64().unwrap() as usize, drug["char_end"].as_u64().unwrap() as usize);
    assert_eq!(&text[s..e], "Amoxicillin");
    assert_eq!(drug["label"], "B-Drug");
}

#[tokio::test]
async fn annotate_rejects_bad_payloads() {
    for body in [r#"{"text":""}"#, r#"{"text":"a","strategy":"median"}"#, r#"{"txt":"a"}"#, "[1,2"] {
        let (status, resp) = call(app(false, None), "POST", "/annotate", Some(body)).await;
        assert!(status.is_client_error(), "{body}: {status}");
        assert!(resp["error"]["message"].is_string());
    }
}

#[tokio::test]
async fn stacked_annotation_needs_a_metanet() {
    let payload = r#"{"text":"take paracetamol","ensemble":"stacked"}"#;
    let (status, _) = call(app(true, None), "POST", "/annotate", Some(payload)).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);

    let net = MetaNet::for_stacking(2, 8, FeatureMode::OneHot, 1);
    let (status, body) = call(app(true, Some(net)), "POST", "/annotate", Some(payload)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["labels"].as_array().unwrap().len(), 2);
    assert_eq!(body["labels"][0], "O");
}

#[tokio::test]
async fn concurrent_requests_share_state() {
    let app = app(true, None);
    let handles: Vec<_> = (0..16)
        .map(|i| {
            let app = app.clone();
            tokio::spawn(async move {
                let payload = json!({ "text": format!("dose {i} of paracetamol daily") }).to_string();
                call(app, "POST", "/annotate", Some(&payload)).await
            })
        })
        .collect();
    for h in handles {
        let (status, body) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body["entities"].as_array().unwrap().len(), 2);
    }
}
