mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use ivg::embed::{stub_image_vec, stub_text_vec, EmbedError, EmbedRecord, Embedder, HttpProvider, Provider};
use ivg::gateway::stub_image;
use serde_json::{json, Value};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn record(prompt: &str, seed: u64) -> EmbedRecord {
    EmbedRecord {
        prompt: prompt.into(),
        image: Arc::new(stub_image(prompt, seed, 0, 16, 16)),
    }
}

#[test]
fn stub_vectors_are_deterministic_unit_vectors() {
    let a = stub_text_vec("a cat on a sofa");
    assert_eq!(a, stub_text_vec("a cat on a sofa"));
    assert_eq!(a.len(), 512);
    assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    let img = stub_image("x", 1, 0, 8, 8);
    assert_eq!(stub_image_vec(&img), stub_image_vec(&img));
    assert!((stub_image_vec(&img).iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn shared_tokens_raise_stub_text_similarity() {
    // Brute force over many five-token prompts: sharing four tokens always
    // beats sharing none.
    let vocab: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    for base in 0..20 {
        let a: Vec<&str> = (0..5).map(|k| vocab[base + k].as_str()).collect();
        let mut four = a.clone();
        four[4] = vocab[(base + 30) % 40].as_str();
        let none: Vec<&str> = (0..5).map(|k| vocab[(base + 10 + k) % 40].as_str()).collect();
        let va = stub_text_vec(&a.join(", "));
        let s4 = cosine(&va, &stub_text_vec(&four.join(", ")));
        let s0 = cosine(&va, &stub_text_vec(&none.join(", ")));
        assert!(s4 > s0, "base {base}: {s4} <= {s0}");
        assert!(s4 > 0.6);
    }
}

#[tokio::test]
async fn duplicate_content_hits_the_cache() {
    let embedder = Embedder::new(Provider::Stub);
    let records = vec![record("a cat", 1), record("a cat", 1), record("a dog", 2)];
    let out = embedder.embed_records(&records, false).await.unwrap();
    assert_eq!(out.embeddings.len(), 3);
    assert_eq!(out.embeddings[0], out.embeddings[1]);
    assert!(out.degraded.is_empty());
    // Two prompts and two distinct images.
    assert_eq!(embedder.cached_len(), 4);
}

async fn provider_server(calls: Arc<AtomicUsize>) -> String {
    common::serve(Router::new().route(
        "/embed",
        post(move |Json(body): Json<Value>| {
            calls.fetch_add(1, Ordering::SeqCst);
            async move {
                let texts: Vec<Vec<f64>> = body["texts"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|t| stub_text_vec(t.as_str().unwrap()))
                    .collect();
                let images: Vec<Vec<f64>> = body["images"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|i| {
                        use base64::Engine as _;
                        let bytes = base64::engine::general_purpose::STANDARD.decode(i.as_str().unwrap()).unwrap();
                        stub_image_vec(&bytes)
                    })
                    .collect();
                Json(json!({ "text_vecs": texts, "image_vecs": images }))
            }
        }),
    ))
    .await
}

#[tokio::test]
async fn http_provider_batches_uncached_content_only() {
    let calls = Arc::new(AtomicUsize::new(0));
    let url = provider_server(calls.clone()).await;
    let embedder = Embedder::new(Provider::Http(HttpProvider::new(format!("{url}/embed"), Duration::from_secs(5))));
    let records = vec![record("a cat", 1), record("a dog", 2)];
    let out = embedder.embed_records(&records, false).await.unwrap();
    // JSON transport may cost the last bit of each component.
    assert!(cosine(&out.embeddings[0].text_vec, &stub_text_vec("a cat")) > 1.0 - 1e-12);
    assert_eq!(calls.load(Ordering::SeqCst), 1);
    embedder.embed_records(&records, false).await.unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn provider_failure_is_per_record_unless_degraded_is_allowed() {
    let url = common::serve(Router::new().route(
        "/embed",
        post(|| async { (StatusCode::INTERNAL_SERVER_ERROR, "down") }),
    ))
    .await;
    let embedder = Embedder::new(Provider::Http(HttpProvider::new(format!("{url}/embed"), Duration::from_secs(5))));
    let records = vec![record("a cat", 1), record("a dog", 2)];
    match embedder.embed_records(&records, false).await {
        Err(EmbedError::Records(failures)) => {
            assert_eq!(failures.iter().map(|f| f.0).collect::<Vec<_>>(), vec![0, 1]);
        }
        other => panic!("unexpected {other:?}"),
    }
    let out = embedder.embed_records(&records, true).await.unwrap();
    assert_eq!(out.degraded, vec![0, 1]);
    assert_eq!(out.embeddings[1].text_vec, stub_text_vec("a dog"));
    assert_eq!(embedder.cached_len(), 0);
}

#[tokio::test]
async fn wrong_dimension_vectors_are_rejected() {
    let url = common::serve(Router::new().route(
        "/embed",
        post(|| async { Json(json!({ "text_vecs": [[1.0, 0.0]], "image_vecs": [[0.0, 1.0]] })) }),
    ))
    .await;
    let embedder = Embedder::new(Provider::Http(HttpProvider::new(format!("{url}/embed"), Duration::from_secs(5))));
    let err = embedder.embed_records(&[record("a", 1)], false).await.unwrap_err();
    assert!(err.to_string().contains("512"), "{err}");
}
