use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use super::{handle_request, CtlError, Request, Response, Shared};

pub struct ServerHandle {
    path: PathBuf,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    fn stop_inner(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = UnixStream::connect(&self.path);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        let _ = std::fs::remove_file(&self.path);
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_inner();
        }
    }
}

/// Binds `path` and serves line-delimited JSON frames, one thread per
/// client. A live socket at `path` is `AddressInUse`; a stale one is
/// replaced.
pub fn serve(path: &Path, shared: Arc<Shared>) -> Result<ServerHandle, CtlError> {
    if path.exists() {
        if UnixStream::connect(path).is_ok() {
            return Err(CtlError::AddressInUse(path.to_owned()));
        }
        std::fs::remove_file(path)?;
    }
    let listener = match UnixListener::bind(path) {
        Ok(l) => l,
        Err(e) if e.kind() == ErrorKind::AddrInUse => return Err(CtlError::AddressInUse(path.to_owned())),
        Err(e) => return Err(e.into()),
    };
    let stop = Arc::new(AtomicBool::new(false));
    let stop2 = stop.clone();
    let accept = thread::spawn(move || {
        for conn in listener.incoming() {
            if stop2.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let sh = shared.clone();
                    thread::spawn(move || {
                        if let Err(e) = client_loop(stream, sh) {
                            log::debug!("client closed: {e}");
                        }
                    });
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
    });
    log::info!("listening on {}", path.display());
    Ok(ServerHandle { path: path.to_owned(), stop, accept: Some(accept) })
}

fn client_loop(stream: UnixStream, shared: Arc<Shared>) -> std::io::Result<()> {
    let (out_tx, out_rx) = channel::<String>();
    let mut writer = stream.try_clone()?;
    let write_thread = thread::spawn(move || {
        for line in out_rx {
            if writer.write_all(line.as_bytes()).and_then(|_| writer.write_all(b"\n")).is_err() {
                break;
            }
        }
    });
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(&line) {
            Err(e) => Response::from_result(0, Err(CtlError::Protocol(e.to_string()))),
            Ok(req) if req.verb == "subscribe" => {
                subscribe(&shared, out_tx.clone());
                Response::from_result(req.id, Ok(serde_json::json!({ "subscribed": true })))
            }
            Ok(req) => {
                // handlers may block on approval, so each runs off the read loop
                let (sh, tx) = (shared.clone(), out_tx.clone());
                thread::spawn(move || send(&tx, &handle_request(&sh, req)));
                continue;
            }
        };
        send(&out_tx, &resp);
    }
    drop(out_tx);
    let _ = write_thread.join();
    Ok(())
}

fn send<T: serde::Serialize>(tx: &Sender<String>, v: &T) {
    if let Ok(s) = serde_json::to_string(v) {
        let _ = tx.send(s);
    }
}

fn subscribe(shared: &Shared, tx: Sender<String>) {
    let rx = shared.subscribe();
    thread::spawn(move || {
        for ev in rx {
            let Ok(s) = serde_json::to_string(&ev) else { continue };
            if tx.send(s).is_err() {
                break;
            }
        }
    });
}
