//! WebSocket front end: one fresh session per connection, driven on a
//! blocking worker and bridged to the socket through channels.

use std::sync::{mpsc, Arc};

use anyhow::Result;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use fovea_core::runtime::{serve, AcquisitionPlan, Inbound, ServeOptions, Session, Transport};
use fovea_core::scene::DynamicScene;
use futures_util::{SinkExt, StreamExt};
use tokio::sync::mpsc as async_mpsc;

pub struct ServerConfig {
    pub plan: AcquisitionPlan,
    pub scene: DynamicScene,
    pub duration: f64,
    pub start_paused: bool,
    pub pace: Option<f64>,
}

struct SocketTransport {
    inbound: mpsc::Receiver<String>,
    outbound: async_mpsc::UnboundedSender<String>,
}

impl Transport for SocketTransport {
    fn try_recv(&mut self) -> Inbound {
        match self.inbound.try_recv() {
            Ok(m) => Inbound::Message(m),
            Err(mpsc::TryRecvError::Empty) => Inbound::Empty,
            Err(mpsc::TryRecvError::Disconnected) => Inbound::Closed,
        }
    }

    fn recv(&mut self) -> Option<String> {
        self.inbound.recv().ok()
    }

    fn send(&mut self, text: String) -> bool {
        self.outbound.send(text).is_ok()
    }
}

pub fn run(config: ServerConfig, host: &str, port: u16) -> Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        println!("listening on ws://{}/ws", listener.local_addr()?);
        let app = Router::new()
            .route("/", get(|| async { "fovea gateway: connect a WebSocket to /ws\n" }))
            .route("/ws", get(upgrade))
            .with_state(Arc::new(config));
        axum::serve(listener, app).await?;
        Ok(())
    })
}

async fn upgrade(ws: WebSocketUpgrade, State(config): State<Arc<ServerConfig>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| drive(socket, config))
}

async fn drive(socket: WebSocket, config: Arc<ServerConfig>) {
    let (mut sink, mut stream) = socket.split();
    let (in_tx, in_rx) = mpsc::channel::<String>();
    let (out_tx, mut out_rx) = async_mpsc::unbounded_channel::<String>();

    let worker = tokio::task::spawn_blocking(move || {
        let mut transport = SocketTransport {
            inbound: in_rx,
            outbound: out_tx,
        };
        let options = ServeOptions {
            duration: config.duration,
            start_paused: config.start_paused,
            pace: config.pace,
        };
        match Session::new(config.plan.clone(), config.scene.clone()) {
            Ok(mut session) => {
                let _ = serve(&mut session, &mut transport, &options);
            }
            Err(e) => {
                transport.send(fovea_core::runtime::error_message(&e.to_string()));
            }
        }
    });

    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = stream.next().await {
            match msg {
                Message::Text(text) => {
                    if in_tx.send(text.to_string()).is_err() {
                        break;
                    }
                }
                Message::Close(_) => break,
                _ => {}
            }
        }
    });

    while let Some(text) = out_rx.recv().await {
        if sink.send(Message::Text(text.into())).await.is_err() {
            break;
        }
    }
    drop(out_rx);
    let _ = sink.close().await;
    reader.abort();
    let _ = worker.await;
}
