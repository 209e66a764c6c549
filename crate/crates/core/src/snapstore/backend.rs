//! Versioned object stores for archives.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::BackendError;
use crate::netfabric::NodeId;
use crate::transports::StreamHandle;

pub type Version = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BackendKind {
    LocalDir,
    MockCloud,
}

/// A store of immutable, versioned objects.
///
/// Network backends name an Internet host in [`endpoint`](Self::endpoint)
/// and only accept transfers carried by a stream to that host.
pub trait StorageBackend: Send {
    fn kind(&self) -> BackendKind;

    /// Internet host the transfer must reach, if any.
    fn endpoint(&self) -> Option<&str>;

    /// Stable location string for an object, independent of version.
    fn location(&self, object: &str) -> String;

    fn put(&mut self, via: Option<&mut StreamHandle>, object: &str, bytes: &[u8]) -> Result<Version, BackendError>;

    /// Fetches `version`, or the latest when `None`.
    fn get(&mut self, via: Option<&mut StreamHandle>, object: &str, version: Option<Version>) -> Result<Vec<u8>, BackendError>;

    fn versions(&self, object: &str) -> Result<Vec<Version>, BackendError>;

    /// Every stored blob; used by audits.
    fn dump(&self) -> Result<Vec<(String, Version, Vec<u8>)>, BackendError>;

    /// Fault injection: the next put stops after writing `after` bytes.
    fn fail_next_put(&mut self, after: usize);
}

pub fn validate_object_name(name: &str) -> Result<(), BackendError> {
    let ok = !name.is_empty()
        && name.len() <= 128
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
    if ok {
        Ok(())
    } else {
        Err(BackendError::BadName(name.to_owned()))
    }
}

/// Objects stored as `<object>.<version>` files under a directory.
#[derive(Debug)]
pub struct LocalDir {
    root: PathBuf,
    fail_after: Option<usize>,
}

impl LocalDir {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io)?;
        Ok(LocalDir { root, fail_after: None })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, object: &str, v: Version) -> PathBuf {
        self.root.join(format!("{object}.{v}"))
    }
}

fn io(e: std::io::Error) -> BackendError {
    BackendError::Io(e.to_string())
}

fn parse_versioned(file: &str) -> Option<(&str, Version)> {
    let (obj, v) = file.rsplit_once('.')?;
    if v.is_empty() || !v.bytes().all(|b| b.is_ascii_digit()) || validate_object_name(obj).is_err() {
        return None;
    }
    Some((obj, v.parse().ok()?))
}

impl StorageBackend for LocalDir {
    fn kind(&self) -> BackendKind {
        BackendKind::LocalDir
    }

    fn endpoint(&self) -> Option<&str> {
        None
    }

    fn location(&self, object: &str) -> String {
        format!("file://{}/{object}", self.root.display())
    }

    fn put(&mut self, via: Option<&mut StreamHandle>, object: &str, bytes: &[u8]) -> Result<Version, BackendError> {
        validate_object_name(object)?;
        let v = self.versions(object)?.last().copied().unwrap_or(0) + 1;
        let tmp = self.root.join(format!(".{object}.{v}.partial"));
        let mut f = fs::File::create(&tmp).map_err(io)?;
        if let Some(after) = self.fail_after.take() {
            f.write_all(&bytes[..after.min(bytes.len())]).map_err(io)?;
            return Err(BackendError::Interrupted);
        }
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
        drop(f);
        fs::rename(&tmp, self.path(object, v)).map_err(io)?;
        if let Some(s) = via {
            s.transmit(bytes.len() as u64);
        }
        Ok(v)
    }

    fn get(&mut self, via: Option<&mut StreamHandle>, object: &str, version: Option<Version>) -> Result<Vec<u8>, BackendError> {
        validate_object_name(object)?;
        let v = match version {
            Some(v) => v,
            None => *self.versions(object)?.last().ok_or_else(|| BackendError::NotFound(object.to_owned()))?,
        };
        let bytes = fs::read(self.path(object, v)).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => BackendError::NotFound(format!("{object}.{v}")),
            _ => io(e),
        })?;
        if let Some(s) = via {
            s.transmit(bytes.len() as u64);
        }
        Ok(bytes)
    }

    fn versions(&self, object: &str) -> Result<Vec<Version>, BackendError> {
        let mut out = Vec::new();
        for e in fs::read_dir(&self.root).map_err(io)? {
            let name = e.map_err(io)?.file_name();
            if let Some((o, v)) = name.to_str().and_then(parse_versioned) {
                if o == object {
                    out.push(v);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    fn dump(&self) -> Result<Vec<(String, Version, Vec<u8>)>, BackendError> {
        let mut out = Vec::new();
        for e in fs::read_dir(&self.root).map_err(io)? {
            let e = e.map_err(io)?;
            let name = e.file_name();
            if let Some((o, v)) = name.to_str().and_then(parse_versioned) {
                out.push((o.to_owned(), v, fs::read(e.path()).map_err(io)?));
            }
        }
        out.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
        Ok(out)
    }

    fn fail_next_put(&mut self, after: usize) {
        self.fail_after = Some(after);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccessRecord {
    pub op: &'static str,
    pub object: String,
    pub version: Option<Version>,
    /// Source address the provider saw.
    pub source: Ipv4Addr,
}

/// In-memory cloud service with a login step and an access log.
#[derive(Debug)]
pub struct MockCloud {
    endpoint: String,
    accounts: BTreeMap<String, String>,
    session: Option<String>,
    objects: BTreeMap<(String, String), Vec<Vec<u8>>>,
    log: Vec<AccessRecord>,
    fail_after: Option<usize>,
}

impl MockCloud {
    /// `endpoint` is the Internet host name the service answers on.
    pub fn new(endpoint: impl Into<String>) -> Self {
        MockCloud {
            endpoint: endpoint.into(),
            accounts: BTreeMap::new(),
            session: None,
            objects: BTreeMap::new(),
            log: Vec::new(),
            fail_after: None,
        }
    }

    pub fn with_account(mut self, user: &str, password: &str) -> Self {
        self.accounts.insert(user.to_owned(), password.to_owned());
        self
    }

    pub fn login(&mut self, user: &str, password: &str) -> Result<(), BackendError> {
        match self.accounts.get(user) {
            Some(p) if p == password => {
                self.session = Some(user.to_owned());
                Ok(())
            }
            _ => Err(BackendError::BadCredentials),
        }
    }

    pub fn logout(&mut self) {
        self.session = None;
    }

    pub fn is_logged_in(&self) -> bool {
        self.session.is_some()
    }

    pub fn access_log(&self) -> &[AccessRecord] {
        &self.log
    }

    fn session_and_stream<'a>(
        &self,
        via: Option<&'a mut StreamHandle>,
    ) -> Result<(String, &'a mut StreamHandle), BackendError> {
        let user = self.session.clone().ok_or(BackendError::NotAuthenticated)?;
        let s = via.ok_or(BackendError::DirectConnection)?;
        if s.destination != NodeId::internet(self.endpoint.clone()) {
            return Err(BackendError::DirectConnection);
        }
        Ok((user, s))
    }
}

impl StorageBackend for MockCloud {
    fn kind(&self) -> BackendKind {
        BackendKind::MockCloud
    }

    fn endpoint(&self) -> Option<&str> {
        Some(&self.endpoint)
    }

    fn location(&self, object: &str) -> String {
        let user = self.session.as_deref().unwrap_or("");
        format!("mockcloud://{}/{user}/{object}", self.endpoint)
    }

    fn put(&mut self, via: Option<&mut StreamHandle>, object: &str, bytes: &[u8]) -> Result<Version, BackendError> {
        validate_object_name(object)?;
        let (user, s) = self.session_and_stream(via)?;
        if let Some(after) = self.fail_after.take() {
            s.transmit(after.min(bytes.len()) as u64);
            return Err(BackendError::Interrupted);
        }
        s.transmit(bytes.len() as u64);
        let versions = self.objects.entry((user, object.to_owned())).or_default();
        versions.push(bytes.to_vec());
        let v = versions.len() as Version;
        self.log.push(AccessRecord { op: "put", object: object.to_owned(), version: Some(v), source: s.observed_source });
        Ok(v)
    }

    fn get(&mut self, via: Option<&mut StreamHandle>, object: &str, version: Option<Version>) -> Result<Vec<u8>, BackendError> {
        validate_object_name(object)?;
        let (user, s) = self.session_and_stream(via)?;
        let versions = self
            .objects
            .get(&(user, object.to_owned()))
            .ok_or_else(|| BackendError::NotFound(object.to_owned()))?;
        let v = version.unwrap_or(versions.len() as Version);
        let bytes = v
            .checked_sub(1)
            .and_then(|i| versions.get(i as usize))
            .ok_or_else(|| BackendError::NotFound(format!("{object}.{v}")))?
            .clone();
        s.transmit(bytes.len() as u64);
        self.log.push(AccessRecord { op: "get", object: object.to_owned(), version: Some(v), source: s.observed_source });
        Ok(bytes)
    }

    fn versions(&self, object: &str) -> Result<Vec<Version>, BackendError> {
        let user = self.session.clone().ok_or(BackendError::NotAuthenticated)?;
        Ok(self
            .objects
            .get(&(user, object.to_owned()))
            .map_or(Vec::new(), |v| (1..=v.len() as Version).collect()))
    }

    fn dump(&self) -> Result<Vec<(String, Version, Vec<u8>)>, BackendError> {
        Ok(self
            .objects
            .iter()
            .flat_map(|((_, o), vs)| vs.iter().enumerate().map(move |(i, b)| (o.clone(), i as Version + 1, b.clone())))
            .collect())
    }

    fn fail_next_put(&mut self, after: usize) {
        self.fail_after = Some(after);
    }
}
