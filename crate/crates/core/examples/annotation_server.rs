//! Starts the annotation service on a synthetic manifest.
//!
//!     cargo run --example annotation_server -- [bind_addr]
//!
//! Then, for example:
//!
//!     curl 'http://127.0.0.1:8080/api/tasks/next?annotator_id=me'
//!     curl -X POST http://127.0.0.1:8080/api/annotations -H 'content-type: application/json' \
//!          -d '{"utterance_id":"spk1_reg_ang_000","annotator_id":"me","hue_deg":342,"saturation":0.75,"value":0.8}'
//!     curl http://127.0.0.1:8080/api/progress

use emocolor::experiment::{self, SyntheticConfig};
use emocolor::labels;
use emocolor::service::{self, ServiceConfig};

#[tokio::main]
async fn main() -> emocolor::Result<()> {
    tracing_subscriber::fmt().with_env_filter("info").init();
    let bind = std::env::args().nth(1).unwrap_or_else(|| "127.0.0.1:8080".into());
    let dir = std::path::PathBuf::from("target/annotation_server");
    std::fs::create_dir_all(&dir).map_err(|e| emocolor::Error::Io { path: dir.clone(), source: e })?;

    let data = experiment::make_synthetic_benchmark(&SyntheticConfig { speakers: 2, utterances_per_cell: 2, ..SyntheticConfig::default() })?;
    let manifest = dir.join("manifest.csv");
    let file = std::fs::File::create(&manifest).map_err(|e| emocolor::Error::Io { path: manifest.clone(), source: e })?;
    labels::write_manifest(&data.metas, file)?;

    service::serve(ServiceConfig {
        manifest,
        audio_root: dir.clone(),
        store: dir.join("annotations.jsonl"),
        bind: bind.parse().expect("socket address"),
        ..ServiceConfig::default()
    })
    .await
}
