use std::collections::HashMap;

use ivg::config::{Config, Mode};
use ivg::gateway::Backend;

#[test]
fn file_then_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ivg.toml");
    std::fs::write(
        &path,
        r#"
port = 9000
seed = 7

[backend]
mode = "real"
url = "http://127.0.0.1:7860"
max_batch = 4

[embed]
allow_degraded = true
"#,
    )
    .unwrap();
    let mut config = Config::from_file(&path).unwrap();
    assert_eq!(config.port, 9000);
    assert_eq!(config.seed, 7);
    assert_eq!(config.backend.mode, Mode::Real);
    assert_eq!(config.backend.max_batch, 4);
    assert_eq!(config.embed.mode, Mode::Stub);
    assert!(config.embed.allow_degraded);

    let env: HashMap<&str, &str> = [
        ("IVG_PORT", "9100"),
        ("IVG_BACKEND_MODE", "stub"),
        ("IVG_EMBED_URL", "http://127.0.0.1:9999/embed"),
        ("IVG_SEED", "11"),
    ]
    .into_iter()
    .collect();
    config.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
    assert_eq!(config.port, 9100);
    assert_eq!(config.seed, 11);
    assert_eq!(config.backend.mode, Mode::Stub);
    assert_eq!(config.backend.url.as_deref(), Some("http://127.0.0.1:7860"));
    assert_eq!(config.embed.url.as_deref(), Some("http://127.0.0.1:9999/embed"));
    assert!(matches!(config.gateway().unwrap().backend, Backend::Stub));
}

#[test]
fn bad_values_are_errors() {
    let mut config = Config::default();
    assert!(config.apply_env(|k| (k == "IVG_PORT").then(|| "lots".into())).is_err());
    assert!(config.apply_env(|k| (k == "IVG_EMBED_MODE").then(|| "magic".into())).is_err());
    config.backend.mode = Mode::Real;
    assert!(config.gateway().is_err());
    config.embed.mode = Mode::Real;
    assert!(config.embedder().is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "port = \"x\"").unwrap();
    assert!(Config::from_file(&path).is_err());
}
