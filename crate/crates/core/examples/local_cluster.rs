//! A master and one simulated-backend worker on localhost, driven over HTTP
//! by the connector. The first message waits in the backlog while a PE
//! starts; later ones go straight to the idle PE.

use std::time::Duration;

use streambin::connector::{Connector, Delivery};
use streambin::events::stdout_sink;
use streambin::irm::IrmConfig;
use streambin::master::service::MasterServer;
use streambin::protocol::{StreamMessage, SyntheticJob};
use streambin::worker::service::{BackendKind, WorkerOptions, WorkerServer};

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let config = IrmConfig {
        packing_interval: Duration::from_millis(500),
        predictor_interval: Duration::from_millis(500),
        container_idle_timeout: Duration::from_secs(3),
        ..IrmConfig::default()
    };
    let master = MasterServer::bind("127.0.0.1:0", config, stdout_sink()).await?;
    let addr = master.addr().to_string();

    let mut options = WorkerOptions::new("127.0.0.1:0", &addr, BackendKind::Simulated);
    options.pe_startup_delay = 500;
    let _worker = WorkerServer::bind(options, stdout_sink()).await?;

    let connector = Connector::new(&addr);
    let job = SyntheticJob {
        target_cpu: 0.3,
        duration_s: 1.0,
    };
    for i in 0..4 {
        let msg = StreamMessage::new(format!("m{i}"), "synthetic-load", "latest", job.to_payload(), 0);
        match connector.send(&msg).await {
            Ok(Delivery::P2p { worker_id }) => println!("# {} sent p2p to {worker_id}", msg.message_id),
            Ok(Delivery::Queued) => println!("# {} queued at the master", msg.message_id),
            Err(e) => println!("# {} failed: {e}", msg.message_id),
        }
        tokio::time::sleep(Duration::from_secs(3)).await;
    }
    tokio::time::sleep(Duration::from_secs(5)).await;
    Ok(())
}
