use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tweetsense_client::{Client, ClientError};
use tweetsense_core::api::{HealthStatus, ModelId, ModelSelector, Sentiment};
use tweetsense_core::corpus::LabeledTweet;
use tweetsense_core::logreg::LogRegConfig;
use tweetsense_core::modelstore;
use tweetsense_core::pipeline::ClassicalModel;
use tweetsense_inferd::{router, serve, AppState, ModelSet};

fn tweet(text: &str, label: u8) -> LabeledTweet {
    LabeledTweet { text: text.into(), label }
}

#[tokio::test]
async fn client_talks_to_a_live_service() {
    let dir = tempfile::tempdir().unwrap();
    let data = [tweet("love it", 1), tweet("great love", 1), tweet("hate it", 0), tweet("awful hate", 0)];
    let (m, _) = ClassicalModel::fit(&data, &LogRegConfig { l2_lambda: 0.01, ..Default::default() }).unwrap();
    let prefix = dir.path().join("lr");
    modelstore::save_classical(&m, &prefix, json!({})).unwrap();
    let models = ModelSet::load(Some(&prefix), None).unwrap();

    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, stopped) = oneshot::channel::<()>();
    let server = tokio::spawn(serve(listener, router(AppState::new(models), None), async {
        let _ = stopped.await;
    }));

    let client = Client::new(format!("http://{addr}/"));
    let h = client.health().await.unwrap();
    assert_eq!(h.status, HealthStatus::Ok);
    assert_eq!(h.models_loaded, 1);

    let r = client.predict("LOVE IT!!", ModelSelector::Lr).await.unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].model, ModelId::Lr);
    assert_eq!(r[0].label, Sentiment::Positive);

    let infos = client.models().await.unwrap();
    assert_eq!(infos.len(), 1);
    assert_eq!(infos[0].vocab_size, m.vectorizer.dim());

    match client.predict("x", ModelSelector::Bilstm).await {
        Err(ClientError::Status { status, message }) => {
            assert_eq!(status.as_u16(), 400);
            assert!(message.contains("not loaded"));
        }
        other => panic!("unexpected {other:?}"),
    }

    stop.send(()).unwrap();
    server.await.unwrap().unwrap();
}
