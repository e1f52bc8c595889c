//! Loopback UDP server that answers each datagram with `factor` times its
//! size, for exercising the active amplification probe.

use std::io::ErrorKind;
use std::net::{Ipv4Addr, SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::error::{FixtureError, Result};
use crate::generate::amplify;

const POLL: Duration = Duration::from_millis(50);

/// Running server; stops when dropped.
#[derive(Debug)]
pub struct AmplifierServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

/// Binds `127.0.0.1:port` (0 picks a free port) and serves in the
/// background. Each datagram is answered from its own thread; a factor of
/// zero never answers.
pub fn run_amplifier_server(factor: u64, port: u16) -> Result<AmplifierServer> {
    let socket = UdpSocket::bind((Ipv4Addr::LOCALHOST, port)).map_err(FixtureError::Amplifier)?;
    socket.set_read_timeout(Some(POLL)).map_err(FixtureError::Amplifier)?;
    let addr = socket.local_addr().map_err(FixtureError::Amplifier)?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    let worker = std::thread::spawn(move || serve(socket, factor, &flag));
    Ok(AmplifierServer { addr, stop, worker: Some(worker) })
}

fn serve(socket: UdpSocket, factor: u64, stop: &AtomicBool) {
    let mut buf = vec![0u8; 65_536];
    while !stop.load(Ordering::Relaxed) {
        let (n, peer) = match socket.recv_from(&mut buf) {
            Ok(x) => x,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => continue,
            Err(e) => {
                log::warn!("amplifier receive failed: {e}");
                continue;
            }
        };
        if factor == 0 {
            continue;
        }
        let request = buf[..n].to_vec();
        let Ok(reply_socket) = socket.try_clone() else { continue };
        std::thread::spawn(move || {
            for d in amplify(&request, factor) {
                if let Err(e) = reply_socket.send_to(&d, peer) {
                    log::warn!("amplifier reply to {peer} failed: {e}");
                    return;
                }
            }
        });
    }
}

impl AmplifierServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for AmplifierServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answers_with_factor_times_request() {
        let server = run_amplifier_server(3, 0).unwrap();
        let client = UdpSocket::bind((Ipv4Addr::LOCALHOST, 0)).unwrap();
        client.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
        client.send_to(&[9u8; 10], server.local_addr()).unwrap();
        let mut buf = [0u8; 100];
        let (n, from) = client.recv_from(&mut buf).unwrap();
        assert_eq!(n, 30);
        assert_eq!(from, server.local_addr());
    }

    #[test]
    fn port_in_use_is_an_error() {
        let server = run_amplifier_server(1, 0).unwrap();
        assert!(run_amplifier_server(1, server.local_addr().port()).is_err());
    }
}
