#![allow(dead_code)]

use std::sync::Arc;

use ivg::embed::{Embedder, Provider};
use ivg::engine::Engine;
use ivg::gateway::stub_image;
use ivg::store::{NewStep, Snapshot, Store};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const THEMES: [&[&str]; 4] = [
    &["castle", "mountain", "sunset", "fog", "river", "pine", "cliff", "clouds"],
    &["girl", "portrait", "red", "hair", "smile", "freckles", "scarf", "window"],
    &["robot", "city", "neon", "rain", "street", "night", "reflections", "crowd"],
    &["cat", "sofa", "sunlight", "plant", "book", "cozy", "blanket", "tea"],
];
const STYLE: [&str; 8] = [
    "masterpiece", "best quality", "oil painting", "watercolor", "highly detailed", "8k", "cinematic", "soft light",
];

fn pick(rng: &mut ChaCha8Rng, n: usize) -> usize {
    (rng.next_u32() as usize) % n
}

/// Prompt history of an artist refining a few ideas: each step edits the
/// previous prompt, and every few steps a new theme starts.
pub fn synthetic_prompts(steps: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(steps);
    let mut words: Vec<String> = Vec::new();
    let mut theme = 0;
    for step in 0..steps {
        if step == 0 || pick(&mut rng, 5) == 0 {
            theme = (theme + 1 + pick(&mut rng, 3)) % THEMES.len();
            words = THEMES[theme][..4].iter().map(|s| s.to_string()).collect();
            words.push(STYLE[pick(&mut rng, STYLE.len())].to_string());
        } else {
            match pick(&mut rng, 5) {
                0 if words.len() > 3 => {
                    let i = pick(&mut rng, words.len());
                    words.remove(i);
                }
                1 => {
                    let i = pick(&mut rng, words.len());
                    let j = pick(&mut rng, words.len());
                    words.swap(i, j);
                }
                2 => {
                    let i = pick(&mut rng, words.len());
                    let w = words[i].trim_matches(|c| c == '(' || c == ')').split(':').next().unwrap().to_string();
                    let weight = [0.8, 1.2, 1.4][pick(&mut rng, 3)];
                    words[i] = format!("({w}:{weight})");
                }
                3 => words.push(STYLE[pick(&mut rng, STYLE.len())].to_string()),
                _ => words.push(THEMES[theme][pick(&mut rng, 8)].to_string()),
            }
        }
        out.push(words.join(", "));
    }
    out
}

pub fn stub_step(prompt: &str, seed: u64, n: usize, size: u32) -> NewStep {
    NewStep {
        prompt: prompt.to_owned(),
        seed,
        model: "stub".into(),
        images: (0..n).map(|i| stub_image(prompt, seed, i, size, size)).collect(),
        created_at: None,
    }
}

pub fn synthetic_session(store: &Store, steps: usize, per_step: usize, seed: u64) -> Arc<Snapshot> {
    let new_steps: Vec<NewStep> = synthetic_prompts(steps, seed)
        .iter()
        .enumerate()
        .map(|(k, p)| stub_step(p, seed + k as u64, per_step, 32))
        .collect();
    store.import_session("synthetic", &new_steps).unwrap()
}

pub fn stub_engine(store: Arc<Store>) -> Engine {
    Engine::new(store, Embedder::new(Provider::Stub), false)
}

/// Serves `router` on an ephemeral local port and returns its base URL.
pub async fn serve(router: axum::Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, router).await.unwrap();
    });
    format!("http://{addr}")
}
