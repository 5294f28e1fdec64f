//! TCP line ingestion: sensors connect and write one JSON record per line
//! (`{"sid":"wx.tm.site1","ts":"2012-12-06T11:00:00Z","v":-1.0}`). Each line
//! is answered with `{"ok":true}` or `{"ok":false,"error":"..."}`; a bad line
//! does not close the connection.

use std::net::SocketAddr;
use std::sync::Arc;

use serde_json::json;
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;
use wtstream_core::node::Node;

/// Default listening port for line ingestion.
pub const DEFAULT_INGEST_PORT: u16 = 7070;

/// Longest accepted line; longer lines are rejected and skipped.
const MAX_LINE: usize = 64 * 1024;

/// Binds `addr` and serves connections in the background. Returns the bound
/// address (useful with port 0) and the accept-loop handle.
pub async fn spawn_tcp_ingest(addr: SocketAddr, node: Arc<Node>) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let handle = tokio::spawn(accept_loop(listener, node));
    Ok((local, handle))
}

async fn accept_loop(listener: TcpListener, node: Arc<Node>) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                tracing::debug!(%peer, "ingest connection");
                tokio::spawn(serve_connection(stream, node.clone()));
            }
            Err(e) => {
                tracing::warn!(error = %e, "ingest accept failed");
                tokio::time::sleep(std::time::Duration::from_millis(50)).await;
            }
        }
    }
}

async fn serve_connection(stream: TcpStream, node: Arc<Node>) {
    let (read, mut write) = stream.into_split();
    let mut reader = BufReader::new(read);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        match (&mut reader).take(MAX_LINE as u64 + 1).read_until(b'\n', &mut buf).await {
            Ok(0) => return,
            Ok(_) => {}
            Err(e) => {
                tracing::debug!(error = %e, "ingest connection closed");
                return;
            }
        }
        let too_long = buf.len() > MAX_LINE && !buf.ends_with(b"\n");
        if too_long {
            // discard the rest of the oversized line
            let mut sink = Vec::new();
            if reader.read_until(b'\n', &mut sink).await.is_err() {
                return;
            }
        }
        let line = buf.trim_ascii();
        if line.is_empty() {
            continue;
        }
        let reply = if too_long {
            json!({ "ok": false, "error": format!("line longer than {MAX_LINE} bytes") })
        } else {
            let line = line.to_vec();
            let node = node.clone();
            match tokio::task::spawn_blocking(move || node.ingest_line(&line)).await {
                Ok(Ok(_)) => json!({ "ok": true }),
                Ok(Err(e)) => json!({ "ok": false, "error": e.to_string() }),
                Err(e) => json!({ "ok": false, "error": format!("worker panicked: {e}") }),
            }
        };
        let mut out = reply.to_string().into_bytes();
        out.push(b'\n');
        if write.write_all(&out).await.is_err() {
            return;
        }
    }
}
