//! Loads the synthetic atlas and drives the HTTP routes in process. With
//! `--listen ADDR` it keeps serving, viewer assets included, until stopped.
//!
//! ```text
//! cargo run --example serve_atlas
//! cargo run --example serve_atlas -- --listen 127.0.0.1:8080
//! ```

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use tower::ServiceExt;

use terratile::gazetteer::Gazetteer;
use terratile::loader::{self, RunOptions};
use terratile::server::page::PageDescriptor;
use terratile::server::{router, AppState, ServerConfig};
use terratile::store::Store;
use terratile::synthetic;

const SECRET: &str = "demo secret";

async fn get(app: &axum::Router, uri: &str) -> Result<(u16, Vec<u8>), Box<dyn std::error::Error>> {
    let res = app.clone().oneshot(Request::get(uri).body(Body::empty())?).await?;
    let status = res.status().as_u16();
    Ok((status, res.into_body().collect().await?.to_bytes().to_vec()))
}

pub async fn run(listen: Option<String>) -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let manifest = synthetic::atlas_fixture(&dir.path().join("sources"))?;
    let work = dir.path().join("work");
    loader::plan(&manifest, &work, loader::DEFAULT_ROWS_PER_BAND)?;

    let gaz_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/gazetteer_bay_area.txt");
    let gaz = Gazetteer::load_file(&gaz_path)?.0;
    let store = Store::open(dir.path().join("store"))?;
    let opts = RunOptions {
        master_key: SECRET.as_bytes().to_vec(),
        ..RunOptions::default()
    };
    tokio::task::block_in_place(|| loader::run(&work, &store, Some(&gaz), &opts))?;

    let config = ServerConfig {
        store_root: dir.path().join("store"),
        tile_secret: SECRET.into(),
        loader_workdir: Some(work),
        admin_token: Some("demo".into()),
        ui_dir: Path::new(env!("CARGO_MANIFEST_DIR")).join("ui"),
        ..ServerConfig::default()
    };
    let state = AppState::new(Arc::new(store), Arc::new(gaz), config);
    let app = router(state.clone());

    let (_, body) = get(&app, "/page?theme=usgs&lat=37.963&lon=-122.539&level=tile&size=small").await?;
    let page: PageDescriptor = serde_json::from_slice(&body)?;
    println!(
        "{} page at {} ({}): {} x {} tiles",
        page.theme,
        page.center.grid,
        page.place_name.as_deref().unwrap_or("-"),
        page.cols,
        page.rows
    );
    for url in page.urls() {
        let (status, bytes) = get(&app, url).await?;
        println!("  {status} {url} {} bytes", bytes.len());
    }
    let east = page.nav.east.as_deref().ok_or("no east link")?;
    let (_, body) = get(&app, east).await?;
    let next: PageDescriptor = serde_json::from_slice(&body)?;
    let shared = next.urls().filter(|u| page.urls().any(|v| v == *u)).count();
    println!("pan east reuses {shared} of {} tiles", next.tile_count());

    let (_, body) = get(&app, "/gazetteer?state=ca&type=11").await?;
    let v: serde_json::Value = serde_json::from_slice(&body)?;
    for r in v["results"].as_array().into_iter().flatten() {
        println!("  {} -> {}", r["name"], r["links"]["usgs"]);
    }
    let (status, png) = get(&app, "/coverage/region/10/18").await?;
    println!("coverage tile: {status}, {} bytes of PNG", png.len());

    if let Some(addr) = listen {
        let listener = tokio::net::TcpListener::bind(&addr).await?;
        println!("serving on http://{}/ui/ (Ctrl-C to stop)", listener.local_addr()?);
        axum::serve(listener, app).await?;
    }
    Ok(())
}

#[tokio::main(flavor = "multi_thread")]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let listen = match (args.next().as_deref(), args.next()) {
        (Some("--listen"), Some(addr)) => Some(addr),
        (None, _) => None,
        _ => return Err("usage: serve_atlas [--listen ADDR]".into()),
    };
    run(listen).await
}
