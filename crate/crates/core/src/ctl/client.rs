use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::os::unix::net::UnixStream;
use std::path::Path;
use std::time::{Duration, Instant};

use serde_json::Value;

use super::{ControlEvent, CtlError, Request, Response};

/// Blocking client for the control socket.
pub struct CtlClient {
    writer: UnixStream,
    reader: BufReader<UnixStream>,
    next_id: u64,
    events: VecDeque<ControlEvent>,
    responses: VecDeque<Response>,
}

impl CtlClient {
    pub fn connect(path: &Path) -> Result<Self, CtlError> {
        let s = UnixStream::connect(path)?;
        Ok(CtlClient { reader: BufReader::new(s.try_clone()?), writer: s, next_id: 1, events: VecDeque::new(), responses: VecDeque::new() })
    }

    /// Sends a request and returns its id without waiting.
    pub fn send(&mut self, verb: &str, args: Value) -> Result<u64, CtlError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut line = serde_json::to_string(&Request { id, verb: verb.to_owned(), args }).map_err(|e| CtlError::Protocol(e.to_string()))?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        Ok(id)
    }

    fn read_frame(&mut self, deadline: Option<Instant>) -> Result<bool, CtlError> {
        let timeout = match deadline {
            Some(d) => match d.checked_duration_since(Instant::now()) {
                Some(t) if !t.is_zero() => Some(t),
                _ => return Ok(false),
            },
            None => None,
        };
        self.reader.get_ref().set_read_timeout(timeout)?;
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => Err(CtlError::Protocol("connection closed".into())),
            Ok(_) => {
                let v: Value = serde_json::from_str(&line).map_err(|e| CtlError::Protocol(e.to_string()))?;
                if v.get("event").is_some() {
                    let ev = serde_json::from_value(v).map_err(|e| CtlError::Protocol(e.to_string()))?;
                    self.events.push_back(ev);
                } else {
                    let r = serde_json::from_value(v).map_err(|e| CtlError::Protocol(e.to_string()))?;
                    self.responses.push_back(r);
                }
                Ok(true)
            }
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    pub fn wait(&mut self, id: u64) -> Result<Response, CtlError> {
        loop {
            if let Some(pos) = self.responses.iter().position(|r| r.id == id) {
                return Ok(self.responses.remove(pos).expect("found"));
            }
            self.read_frame(None)?;
        }
    }

    /// Sends and waits. Error responses become `CtlError::Remote`.
    pub fn call(&mut self, verb: &str, args: Value) -> Result<Value, CtlError> {
        let id = self.send(verb, args)?;
        let r = self.wait(id)?;
        if r.ok {
            Ok(r.body)
        } else {
            Err(CtlError::Remote(format!("{}: {}", r.kind.unwrap_or_default(), r.error.unwrap_or_default())))
        }
    }

    pub fn subscribe(&mut self) -> Result<(), CtlError> {
        self.call("subscribe", Value::Null).map(|_| ())
    }

    pub fn next_event(&mut self, timeout: Duration) -> Result<Option<ControlEvent>, CtlError> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(ev) = self.events.pop_front() {
                return Ok(Some(ev));
            }
            if !self.read_frame(Some(deadline))? {
                return Ok(None);
            }
        }
    }
}
