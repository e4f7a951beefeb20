//! Trains a short run, exports the per-episode metrics in the text
//! exposition format and serves the latest snapshot over HTTP.
//!
//! cargo run --release --example metrics_export

use std::sync::Arc;

use slicing_marl::metrics::http::{http_get, MetricsServer};
use slicing_marl::metrics::{export_text, parse_text};
use slicing_marl::orchestrator::{train, RunConfig};
use slicing_marl::{Result, Scenario, Variant};

fn main() -> Result<()> {
    let sc = Scenario::desk();
    let out = train(&sc, &RunConfig::new(Variant::MaVanilla, 2, 10, 100), |_| Ok(()))?;

    let snapshot = out.metrics.snapshot();
    let text = export_text(&snapshot, Some(9))?;
    print!("{text}");
    let (parsed, ts) = parse_text(&text)?;
    assert_eq!(parsed, snapshot);
    assert_eq!(ts, Some(9));

    let registry: Arc<_> = Arc::clone(&out.metrics);
    let server = MetricsServer::start("127.0.0.1:0", "/metrics", registry)?;
    let (status, body) = http_get(server.addr(), "/metrics")?;
    println!("\nGET http://{}/metrics -> {status}, {} bytes", server.addr(), body.len());
    Ok(())
}
