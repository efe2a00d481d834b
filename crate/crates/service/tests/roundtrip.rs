use stmor::config::{CaseConfig, GeometryConfig};
use stmor::formats::solution_hash;
use stmor::pipeline::{build_rom_stage, eval_rom, load_package, rom_info, snapshots_stage, EvalRequest, FomRequest, Layout};
use stmor_client::{Client, ClientError};
use stmor_service::{router, AppState};
use tempfile::TempDir;

fn small_valve() -> CaseConfig {
    let mut cfg = CaseConfig::bundled("valve").unwrap();
    if let GeometryConfig::Valve(g) = &mut cfg.mesh.geometry {
        g.cells_x = [4, 4, 2];
        g.cells_y = [3, 4, 3];
    }
    cfg.mesh.time_steps = 10;
    cfg.samples.train_grid = vec![2, 2];
    cfg
}

async fn spawn(state: AppState) -> Client {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    Client::new(format!("http://{addr}"))
}

fn server_error(r: Result<impl std::fmt::Debug, ClientError>) -> (u16, String) {
    match r {
        Err(ClientError::Server { status, body }) => (status, body.code),
        other => panic!("expected a server error, got {other:?}"),
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn client_and_service_agree_with_local_calls() {
    let cfg = small_valve();
    let dir = TempDir::new().unwrap();
    let out = Layout::new(dir.path());
    let c = cfg.clone();
    let o = out.clone();
    tokio::task::spawn_blocking(move || {
        snapshots_stage(&c, 1, &o).unwrap();
        build_rom_stage(&c, 1, &o).unwrap();
    })
    .await
    .unwrap();
    let (pkg, hash) = load_package(&out.package()).unwrap();
    let client = spawn(AppState { case: Some(cfg.clone()), package: Some((pkg.clone(), hash.clone())), workers: 1 }).await;

    let health = client.health().await.unwrap();
    assert_eq!(health["status"], "ok");
    assert_eq!(health["package"], hash.as_str());

    let info = client.rom_info().await.unwrap();
    assert_eq!(serde_json::to_value(&info).unwrap(), serde_json::to_value(rom_info(&pkg, &hash)).unwrap());

    let req = EvalRequest { mu: Some(vec![1.2e-3, 0.76]), n_u: Some(3), n_p: Some(1) };
    let remote = client.eval_rom(&req).await.unwrap();
    let local = eval_rom(&pkg, req.mu.clone(), Some((3, 1))).unwrap();
    assert_eq!((remote.n_u, remote.n_p), (3, 1));
    assert_eq!(remote.solution.v, local.solution.v);
    assert_eq!(remote.solution.p, local.solution.p);

    let bad_mu = EvalRequest { mu: Some(vec![1.0, 1.0]), n_u: None, n_p: None };
    assert_eq!(server_error(client.eval_rom(&bad_mu).await), (400, "parameter".into()));
    let half = EvalRequest { mu: None, n_u: Some(3), n_p: None };
    assert_eq!(server_error(client.eval_rom(&half).await), (400, "invalid_argument".into()));

    let mu = vec![1.2e-3, 0.78];
    let fom = client.fom(&FomRequest { mu: Some(mu.clone()) }).await.unwrap();
    let local = tokio::task::spawn_blocking(move || {
        let problem = cfg.problem().unwrap();
        problem.solve(&stmor::constitutive::ParameterVector(mu), &cfg.solver).unwrap()
    })
    .await
    .unwrap();
    assert_eq!(fom.solution_hash, solution_hash(&local));
    assert_eq!(fom.iterations, local.iterations());
}

#[tokio::test]
async fn missing_parts_are_reported() {
    let client = spawn(AppState::default()).await;
    assert_eq!(client.health().await.unwrap()["package"], serde_json::Value::Null);
    assert_eq!(server_error(client.rom_info().await), (404, "not_loaded".into()));
    assert_eq!(server_error(client.fom(&FomRequest { mu: None }).await), (404, "not_loaded".into()));
    let unreachable = Client::new("http://127.0.0.1:9");
    assert!(matches!(unreachable.health().await, Err(ClientError::Transport(_))));
}
