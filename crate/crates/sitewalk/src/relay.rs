//! The relay server: authenticates sessions, routes envelopes between the
//! client and middleware roles of a project, and stores capture bundles.

use std::collections::{HashMap, HashSet, VecDeque};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use bytes::Bytes;
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use sitewalk_core::Mission;
use tokio::io::{AsyncRead, AsyncWrite};
use tokio::net::TcpListener;
use tokio::sync::Notify;
use tracing::{debug, info, warn};

use crate::protocol::{
    self, CaptureBundle, CapturesResult, Envelope, ErrorBody, ErrorCode, Hello, HelloAck, IndexedCapture,
    InspectionRecord, MessageType, QueryCaptures, Role,
};
use crate::store::{RecordStore, StorageError};

pub const DEFAULT_OUTBOX_CAPACITY: usize = 256;
const HELLO_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TokenGrant {
    pub token: String,
    pub role: Role,
    pub project: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RelayConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub storage: PathBuf,
    #[serde(default = "default_outbox")]
    pub outbox_capacity: usize,
    #[serde(default)]
    pub tokens: Vec<TokenGrant>,
}

fn default_listen() -> String {
    "127.0.0.1:7400".into()
}

fn default_outbox() -> usize {
    DEFAULT_OUTBOX_CAPACITY
}

impl RelayConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }
}

/// Per-session outbound queue. Full queues shed MISSION_PROGRESS frames;
/// everything else is always delivered.
struct Outbox {
    state: Mutex<OutboxState>,
    notify: Notify,
    capacity: usize,
}

#[derive(Default)]
struct OutboxState {
    queue: VecDeque<(Bytes, bool)>,
    closed: bool,
}

impl Outbox {
    fn new(capacity: usize) -> Self {
        Self {
            state: Mutex::new(OutboxState::default()),
            notify: Notify::new(),
            capacity: capacity.max(1),
        }
    }

    /// Queues a frame; returns how many progress frames were shed.
    fn push(&self, frame: Bytes, droppable: bool) -> u64 {
        let mut st = self.state.lock().unwrap();
        if st.closed {
            return 0;
        }
        let mut dropped = 0;
        if st.queue.len() >= self.capacity {
            if droppable {
                return 1;
            }
            if let Some(pos) = st.queue.iter().position(|(_, d)| *d) {
                st.queue.remove(pos);
                dropped = 1;
            }
        }
        st.queue.push_back((frame, droppable));
        drop(st);
        self.notify.notify_one();
        dropped
    }

    async fn pop(&self) -> Option<Bytes> {
        loop {
            {
                let mut st = self.state.lock().unwrap();
                if let Some((frame, _)) = st.queue.pop_front() {
                    return Some(frame);
                }
                if st.closed {
                    return None;
                }
            }
            self.notify.notified().await;
        }
    }

    fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.notify.notify_one();
    }
}

#[derive(Clone)]
struct Session {
    id: u64,
    outbox: Arc<Outbox>,
}

#[derive(Default)]
struct Project {
    middleware: Option<Session>,
    clients: Vec<Session>,
}

struct Inner {
    tokens: HashMap<String, (Role, String)>,
    projects: Mutex<HashMap<String, Project>>,
    store: Mutex<RecordStore>,
    /// DRP ids of dispatched missions, to check bundles against.
    dispatched: Mutex<HashMap<(String, String), Vec<String>>>,
    outbox_capacity: usize,
    dropped_progress: AtomicU64,
    next_session: AtomicU64,
}

/// Cheap to clone; all clones share one server state.
#[derive(Clone)]
pub struct Relay {
    inner: Arc<Inner>,
}

impl Relay {
    pub fn new(config: &RelayConfig) -> Result<Self, StorageError> {
        let store = RecordStore::open(&config.storage)?;
        info!(records = store.len(), path = %config.storage.display(), "store opened");
        Ok(Self {
            inner: Arc::new(Inner {
                tokens: config
                    .tokens
                    .iter()
                    .map(|g| (g.token.clone(), (g.role, g.project.clone())))
                    .collect(),
                projects: Mutex::new(HashMap::new()),
                store: Mutex::new(store),
                dispatched: Mutex::new(HashMap::new()),
                outbox_capacity: config.outbox_capacity,
                dropped_progress: AtomicU64::new(0),
                next_session: AtomicU64::new(1),
            }),
        })
    }

    /// Progress frames shed so far because a receiver fell behind.
    pub fn dropped_progress(&self) -> u64 {
        self.inner.dropped_progress.load(Ordering::Relaxed)
    }

    pub fn middleware_online(&self, project: &str) -> bool {
        self.inner
            .projects
            .lock()
            .unwrap()
            .get(project)
            .is_some_and(|p| p.middleware.is_some())
    }

    pub fn client_count(&self, project: &str) -> usize {
        self.inner.projects.lock().unwrap().get(project).map_or(0, |p| p.clients.len())
    }

    pub fn records(&self, project: &str, date: &str) -> Vec<InspectionRecord> {
        self.inner.store.lock().unwrap().by_date(project, date)
    }

    /// Accepts connections forever.
    pub async fn serve(self, listener: TcpListener) -> std::io::Result<()> {
        loop {
            let (stream, peer) = listener.accept().await?;
            let _ = stream.set_nodelay(true);
            let relay = self.clone();
            tokio::spawn(async move {
                debug!(%peer, "connection");
                relay.handle_connection(stream).await;
            });
        }
    }

    /// Binds `addr` and serves in the background. Returns the bound address.
    pub async fn spawn(self, addr: &str) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
        let listener = TcpListener::bind(addr).await?;
        let local = listener.local_addr()?;
        let task = tokio::spawn(async move {
            if let Err(e) = self.serve(listener).await {
                warn!("relay stopped: {e}");
            }
        });
        Ok((local, task))
    }

    /// Runs one session over any byte stream.
    pub async fn handle_connection<S>(&self, io: S)
    where
        S: AsyncRead + AsyncWrite + Unpin + Send + 'static,
    {
        let mut transport = protocol::framed(io);
        let hello = match tokio::time::timeout(HELLO_TIMEOUT, protocol::recv(&mut transport)).await {
            Ok(Ok(env)) => env,
            Ok(Err(e)) => {
                debug!("handshake failed: {e}");
                return;
            }
            Err(_) => return,
        };

        let (role, project) = match self.authenticate(&hello) {
            Ok(grant) => grant,
            Err(body) => {
                let _ = protocol::send(&mut transport, &relay_error(&hello, body)).await;
                return;
            }
        };

        let id = self.inner.next_session.fetch_add(1, Ordering::Relaxed);
        let outbox = Arc::new(Outbox::new(self.inner.outbox_capacity));
        let session = Session { id, outbox: outbox.clone() };
        if let Err(body) = self.register(role, &project, session) {
            let _ = protocol::send(&mut transport, &relay_error(&hello, body)).await;
            return;
        }
        info!(session = id, %role, %project, "session opened");

        let ack = hello.reply(
            MessageType::HelloAck,
            Role::Relay,
            &HelloAck {
                session_id: format!("s{id}"),
                role,
                project_id: project.clone(),
            },
        );
        outbox.push(ack.to_bytes(), false);

        let (mut sink, mut stream) = transport.split();
        let writer = {
            let outbox = outbox.clone();
            tokio::spawn(async move {
                while let Some(frame) = outbox.pop().await {
                    if sink.send(frame).await.is_err() {
                        break;
                    }
                }
            })
        };

        let mut seen = HashSet::new();
        seen.insert(hello.message_id.clone());
        while let Some(frame) = stream.next().await {
            let Ok(frame) = frame else { break };
            let frame = frame.freeze();
            match Envelope::from_bytes(&frame) {
                Ok(env) => self.on_envelope(role, &project, &outbox, &mut seen, env, frame),
                Err(e) => {
                    let err = Envelope::new(
                        MessageType::Error,
                        Role::Relay,
                        &project,
                        &ErrorBody::new(ErrorCode::BadRequest, e.to_string()),
                    )
                    .correlated("");
                    outbox.push(err.to_bytes(), false);
                }
            }
        }

        self.unregister(role, &project, id);
        outbox.close();
        let _ = writer.await;
        info!(session = id, %role, %project, "session closed");
    }

    fn authenticate(&self, hello: &Envelope) -> Result<(Role, String), ErrorBody> {
        let unauthorized = |why: &str| ErrorBody::new(ErrorCode::Unauthorized, why);
        if hello.kind != MessageType::Hello {
            return Err(unauthorized("first message must be HELLO"));
        }
        let body: Hello = hello.body().map_err(|_| unauthorized("HELLO body needs a token"))?;
        let (role, project) = self.inner.tokens.get(&body.token).ok_or_else(|| unauthorized("unknown token"))?;
        if *role != hello.sender_role || *project != hello.project_id {
            return Err(unauthorized("token is not valid for this role and project"));
        }
        Ok((*role, project.clone()))
    }

    fn register(&self, role: Role, project: &str, session: Session) -> Result<(), ErrorBody> {
        let mut projects = self.inner.projects.lock().unwrap();
        let p = projects.entry(project.to_string()).or_default();
        match role {
            Role::Middleware if p.middleware.is_some() => Err(ErrorBody::new(
                ErrorCode::Conflict,
                format!("a middleware session for project `{project}` is already open"),
            )),
            Role::Middleware => {
                p.middleware = Some(session);
                Ok(())
            }
            Role::Client => {
                p.clients.push(session);
                Ok(())
            }
            Role::Relay => Err(ErrorBody::new(ErrorCode::Unauthorized, "reserved role")),
        }
    }

    fn unregister(&self, role: Role, project: &str, id: u64) {
        let mut projects = self.inner.projects.lock().unwrap();
        if let Some(p) = projects.get_mut(project) {
            match role {
                Role::Middleware if p.middleware.as_ref().is_some_and(|s| s.id == id) => p.middleware = None,
                _ => p.clients.retain(|s| s.id != id),
            }
        }
    }

    fn on_envelope(
        &self,
        role: Role,
        project: &str,
        own: &Outbox,
        seen: &mut HashSet<String>,
        env: Envelope,
        frame: Bytes,
    ) {
        let reject = |code: ErrorCode, msg: String| {
            own.push(relay_error(&env, ErrorBody::new(code, msg)).to_bytes(), false);
        };
        if !seen.insert(env.message_id.clone()) {
            return reject(ErrorCode::DuplicateMessageId, format!("message_id {} already used", env.message_id));
        }
        if env.project_id != project || env.sender_role != role {
            return reject(ErrorCode::Forbidden, "envelope does not match the session's role and project".into());
        }
        if env.kind == MessageType::Hello || !env.kind.allowed_from(role) {
            return reject(ErrorCode::IllegalType, format!("{} may not send {}", role, env.kind));
        }

        match env.kind {
            MessageType::RobotStateRequest | MessageType::MissionDispatch => {
                let Some(mw) = self.middleware_of(project) else {
                    return reject(ErrorCode::NoRobotOnline, format!("no middleware online for `{project}`"));
                };
                if env.kind == MessageType::MissionDispatch {
                    if let Ok(m) = Mission::from_wire(env.body.get().as_bytes()) {
                        self.inner
                            .dispatched
                            .lock()
                            .unwrap()
                            .insert((project.to_string(), m.mission_id.clone()), m.drp_ids());
                    }
                }
                mw.outbox.push(frame, false);
            }
            MessageType::QueryCaptures => {
                let reply = match env.body::<QueryCaptures>() {
                    Ok(q) => self.query(project, &q),
                    Err(e) => Err(ErrorBody::new(ErrorCode::BadRequest, e.to_string())),
                };
                let out = match reply {
                    Ok(result) => env.reply(MessageType::CapturesResult, Role::Relay, &result),
                    Err(body) => relay_error(&env, body),
                };
                own.push(out.to_bytes(), false);
            }
            MessageType::RobotState | MessageType::MissionAck | MessageType::Error => {
                self.to_clients(project, frame, false);
            }
            MessageType::MissionProgress => self.to_clients(project, frame, true),
            MessageType::CaptureBundle => self.on_bundle(project, own, &env),
            _ => unreachable!("filtered by the role/type matrix"),
        }
    }

    fn middleware_of(&self, project: &str) -> Option<Session> {
        self.inner.projects.lock().unwrap().get(project).and_then(|p| p.middleware.clone())
    }

    fn to_clients(&self, project: &str, frame: Bytes, droppable: bool) {
        let clients = self
            .inner
            .projects
            .lock()
            .unwrap()
            .get(project)
            .map(|p| p.clients.clone())
            .unwrap_or_default();
        for c in clients {
            let shed = c.outbox.push(frame.clone(), droppable);
            self.inner.dropped_progress.fetch_add(shed, Ordering::Relaxed);
        }
    }

    fn query(&self, project: &str, q: &QueryCaptures) -> Result<CapturesResult, ErrorBody> {
        let store = self.inner.store.lock().unwrap();
        if q.list_dates {
            return Ok(CapturesResult {
                records: Vec::new(),
                dates: Some(store.dates(project)),
            });
        }
        if let Some(id) = &q.capture_id {
            let records = store
                .capture(project, id)
                .map(|(r, c)| InspectionRecord {
                    project_id: r.project_id.clone(),
                    inspection_date: r.inspection_date.clone(),
                    mission_id: r.mission_id.clone(),
                    total_time: r.total_time,
                    captures: vec![c.clone()],
                })
                .into_iter()
                .collect();
            return Ok(CapturesResult { records, dates: None });
        }
        match &q.date {
            Some(date) => Ok(CapturesResult {
                records: store.by_date(project, date),
                dates: None,
            }),
            None => Err(ErrorBody::new(ErrorCode::BadRequest, "query needs a date, capture_id or list_dates")),
        }
    }

    fn on_bundle(&self, project: &str, own: &Outbox, env: &Envelope) {
        let record = env
            .body::<CaptureBundle>()
            .map_err(|e| e.to_string())
            .and_then(|b| self.bundle_record(project, b));
        let dispatch_id = env.correlation_id.clone().unwrap_or_default();
        let result = record.map_err(|m| ErrorBody::new(ErrorCode::InvalidBundle, m)).and_then(|record| {
            self.inner
                .store
                .lock()
                .unwrap()
                .upsert(record.clone())
                .map(|()| record)
                .map_err(|e| ErrorBody::new(ErrorCode::StorageError, e.to_string()))
        });
        match result {
            Ok(record) => {
                info!(%project, mission = %record.mission_id, captures = record.captures.len(), "bundle stored");
                let note = Envelope::new(
                    MessageType::CapturesResult,
                    Role::Relay,
                    project,
                    &CapturesResult { records: vec![record], dates: None },
                )
                .correlated(&dispatch_id);
                self.to_clients(project, note.to_bytes(), false);
                own.push(env.reply(MessageType::CapturesResult, Role::Relay, &CapturesResult::default()).to_bytes(), false);
            }
            Err(body) => {
                warn!(%project, "bundle rejected: {}", body.message);
                own.push(relay_error(env, body.clone()).to_bytes(), false);
                let note = Envelope::new(MessageType::Error, Role::Relay, project, &body).correlated(&dispatch_id);
                self.to_clients(project, note.to_bytes(), false);
            }
        }
    }

    fn bundle_record(&self, project: &str, b: CaptureBundle) -> Result<InspectionRecord, String> {
        if chrono::NaiveDate::parse_from_str(&b.inspection_date, "%Y-%m-%d").is_err() {
            return Err(format!("bad inspection_date `{}`", b.inspection_date));
        }
        let got: Vec<&str> = b.captures.iter().map(|c| c.drp_id.as_str()).collect();
        if got != b.drp_ids.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(format!("captures {got:?} do not match DRPs {:?}", b.drp_ids));
        }
        let key = (project.to_string(), b.mission_id.clone());
        if let Some(expected) = self.inner.dispatched.lock().unwrap().get(&key) {
            if *expected != b.drp_ids {
                return Err(format!("bundle DRPs {:?} differ from the dispatched mission {expected:?}", b.drp_ids));
            }
        }
        if let Some(c) = b.captures.iter().find(|c| c.mission_id != b.mission_id) {
            return Err(format!("capture {} belongs to mission {}", c.capture_id, c.mission_id));
        }
        Ok(InspectionRecord {
            project_id: project.to_string(),
            inspection_date: b.inspection_date,
            mission_id: b.mission_id,
            total_time: b.total_time,
            captures: b.captures.into_iter().enumerate().map(|(i, c)| IndexedCapture::new(i, c)).collect(),
        })
    }
}

fn relay_error(to: &Envelope, body: ErrorBody) -> Envelope {
    to.reply(MessageType::Error, Role::Relay, &body)
}
