//! Cloud side: evaluates training and inference on encrypted data, never holds the secret key.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use super::conn::{error_code, Conn};
use super::frame::{codes, MsgType, DEFAULT_MAX_FRAME};
use super::message::{DataRole, EpochSummary, Message, TrainRequest, UploadBatch};
use crate::ckks::serialize::{public_key_to_bytes, public_material_from_bytes};
use crate::ckks::{CkksContext, CkksParams, EvalKeys, Evaluator, ParamsHash, PublicKey, SecurityProfile};
use crate::error::{Error, Result};
use crate::linalg::{Layout, MatrixOps, PackedMatrix};
use crate::trainer::{
    checkpoint_from_bytes, checkpoint_to_bytes, encrypted_infer, init_model, Checkpoint, EncryptedBatch,
    EncryptedTrainer, EpochLog, RefreshChannel,
};

/// Fingerprint of a public key; names checkpoints and trained models.
pub type KeyId = [u8; 8];

pub fn key_id(ctx: &CkksContext, pk: &PublicKey) -> KeyId {
    let mut bytes = Vec::new();
    public_key_to_bytes(ctx, pk, &mut bytes);
    let d = Sha256::digest(&bytes);
    d[..8].try_into().unwrap()
}

pub fn key_id_hex(id: &KeyId) -> String {
    id.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    /// Accept only this profile, if set.
    pub profile: Option<SecurityProfile>,
    pub max_frame: u64,
    /// Where per-key checkpoints are written after each epoch.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            profile: None,
            max_frame: DEFAULT_MAX_FRAME,
            checkpoint_dir: None,
        }
    }
}

/// State shared by all sessions of a server.
#[derive(Default)]
pub struct Registry {
    active: Mutex<HashSet<KeyId>>,
    models: Mutex<HashMap<KeyId, PackedMatrix>>,
    contexts: Mutex<HashMap<ParamsHash, Arc<CkksContext>>>,
}

impl Registry {
    pub fn model(&self, id: &KeyId) -> Option<PackedMatrix> {
        self.models.lock().unwrap().get(id).cloned()
    }

    pub fn active_sessions(&self) -> usize {
        self.active.lock().unwrap().len()
    }

    /// One shared context per parameter set, so stored models stay usable across sessions.
    fn context(&self, params: &CkksParams) -> Result<Arc<CkksContext>> {
        let mut map = self.contexts.lock().unwrap();
        if let Some(ctx) = map.get(&params.hash()) {
            return Ok(ctx.clone());
        }
        let ctx = CkksContext::new(params.clone())?;
        map.insert(params.hash(), ctx.clone());
        Ok(ctx)
    }
}

/// Counters of one finished session.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SessionSummary {
    pub key: Option<KeyId>,
    pub messages: usize,
    pub errors: usize,
    pub steps: u64,
    pub refreshes: usize,
}

struct Keyed {
    id: KeyId,
    pk: PublicKey,
    ops: MatrixOps,
}

struct Session<'a> {
    config: &'a ServerConfig,
    registry: &'a Registry,
    keyed: Option<Keyed>,
    train: Option<Vec<EncryptedBatch>>,
    val: Vec<PackedMatrix>,
    summary: SessionSummary,
}

fn err(code: u8, detail: impl Into<String>) -> Error {
    Error::Protocol {
        code,
        detail: detail.into(),
    }
}

/// Refresh requests sent over the session's own connection.
struct WireRefresher<'c, S> {
    conn: &'c RefCell<Conn<S>>,
    next_id: u64,
    count: usize,
}

impl<S: Read + Write> RefreshChannel for WireRefresher<'_, S> {
    fn refresh(&mut self, pm: &PackedMatrix) -> Result<PackedMatrix> {
        let id = self.next_id;
        self.next_id += 1;
        let mut conn = self.conn.borrow_mut();
        let cts = pm.tiles().iter().enumerate().map(|(i, t)| (i as u32, t.clone())).collect();
        conn.send(&Message::RefreshRequest { id, cts })?;
        let reply = conn.expect().map_err(|e| Error::Refresh(e.to_string()))?;
        let Message::RefreshResponse { id: rid, cts } = reply else {
            return Err(Error::Refresh(format!("expected a refresh response, got {:?}", reply.msg_type())));
        };
        let top = conn.context().expect("keyed session").max_level();
        if rid != id || cts.len() != pm.tiles().len() {
            return Err(Error::Refresh("refresh response does not match the request".into()));
        }
        let mut tiles = Vec::with_capacity(cts.len());
        for (i, (tid, ct)) in cts.into_iter().enumerate() {
            if tid as usize != i || ct.level() != top {
                return Err(Error::Refresh("refreshed ciphertext out of order or below the top level".into()));
            }
            tiles.push(ct);
        }
        self.count += 1;
        PackedMatrix::new(pm.plan().clone(), pm.layout(), tiles)
    }
}

impl Drop for Session<'_> {
    fn drop(&mut self) {
        if let Some(k) = &self.keyed {
            self.registry.active.lock().unwrap().remove(&k.id);
        }
    }
}

impl Session<'_> {
    fn checkpoint_path(&self, id: &KeyId) -> Option<PathBuf> {
        self.config
            .checkpoint_dir
            .as_ref()
            .map(|d| d.join(format!("{}.mbtc", key_id_hex(id))))
    }

    fn on_hello<S: Read + Write>(&mut self, conn: &mut Conn<S>, params: crate::ckks::CkksParams) -> Result<()> {
        if conn.context().is_some() {
            return Err(err(codes::UNEXPECTED, "repeated hello"));
        }
        if let Some(p) = self.config.profile {
            if params.profile != p {
                return Err(err(codes::PARAMS_MISMATCH, format!("server accepts only the {} profile", p.name())));
            }
        }
        let ctx = self.registry.context(&params).map_err(|e| err(codes::BAD_PAYLOAD, e.to_string()))?;
        conn.set_context(ctx);
        conn.send(&Message::Hello { params })
    }

    fn on_keys<S: Read + Write>(&mut self, conn: &mut Conn<S>, material: &[u8]) -> Result<()> {
        if self.keyed.is_some() {
            return Err(err(codes::UNEXPECTED, "keys already provisioned"));
        }
        let ctx = conn.context().expect("decoded after hello").clone();
        let (pk, relin, rotations) = public_material_from_bytes(&ctx, material)?;
        let id = key_id(&ctx, &pk);
        if !self.registry.active.lock().unwrap().insert(id) {
            return Err(err(codes::UNEXPECTED, "another session is using this key"));
        }
        let eval = Evaluator::new(ctx, Arc::new(EvalKeys { relin, rotations }))?;
        self.keyed = Some(Keyed {
            id,
            pk,
            ops: MatrixOps::new(eval),
        });
        self.summary.key = Some(id);
        conn.send(&Message::Ack(MsgType::Keys))
    }

    fn on_upload<S: Read + Write>(&mut self, conn: &mut Conn<S>, role: DataRole, batches: Vec<UploadBatch>) -> Result<()> {
        if self.keyed.is_none() {
            return Err(err(codes::UNEXPECTED, "upload before keys"));
        }
        if batches.iter().any(|b| b.x.layout() != Layout::RowMajor) {
            return Err(err(codes::BAD_PAYLOAD, "features must be row-major"));
        }
        match role {
            DataRole::Train => {
                let mut out = Vec::with_capacity(batches.len());
                for b in batches {
                    let y = b.y.ok_or_else(|| err(codes::BAD_PAYLOAD, "training batch without labels"))?;
                    if y.rows() != b.x.rows() || y.plan().frame_cols != b.x.plan().frame_cols {
                        return Err(err(codes::BAD_PAYLOAD, "labels do not match features"));
                    }
                    out.push(EncryptedBatch { x: b.x, y });
                }
                if out.is_empty() {
                    return Err(err(codes::BAD_PAYLOAD, "empty training set"));
                }
                self.train = Some(out);
            }
            DataRole::Val => self.val = batches.into_iter().map(|b| b.x).collect(),
            DataRole::Test => {}
        }
        conn.send(&Message::Ack(MsgType::Upload))
    }

    fn on_train<S: Read + Write>(&mut self, conn: Conn<S>, req: TrainRequest) -> (Conn<S>, Result<()>) {
        let cell = RefCell::new(conn);
        let res = self.run_training(&cell, req);
        (cell.into_inner(), res)
    }

    fn run_training<S: Read + Write>(&mut self, conn: &RefCell<Conn<S>>, req: TrainRequest) -> Result<()> {
        let (Some(keyed), Some(train)) = (&self.keyed, &self.train) else {
            return Err(err(codes::UNEXPECTED, "training needs keys and a training set"));
        };
        let hp = req.hyperparams;
        hp.validate().map_err(|e| err(codes::BAD_PAYLOAD, e.to_string()))?;
        let first = &train[0];
        if first.x.cols() != hp.feature_dim || first.y.cols() != hp.class_count || first.x.plan().frame_cols != hp.frame_width() {
            return Err(err(codes::BAD_PAYLOAD, "hyperparameters do not match the uploaded data"));
        }
        let ctx = keyed.ops.context().clone();
        let path = self.checkpoint_path(&keyed.id);
        let mut log: Vec<EpochLog> = Vec::new();
        let mut state = None;
        if let (true, Some(p)) = (req.resume, &path) {
            if let Ok(bytes) = std::fs::read(p) {
                let cp = checkpoint_from_bytes(&ctx, &bytes)?;
                if cp.hyperparams != hp {
                    return Err(err(codes::BAD_PAYLOAD, "checkpoint was written with other hyperparameters"));
                }
                log = cp.log;
                state = Some(cp.state);
            }
        }
        let mut state = match state {
            Some(s) => s,
            None => init_model(&ctx, &hp, &keyed.pk, req.init_seed)?,
        };
        let trainer = EncryptedTrainer::new(keyed.ops.clone(), hp.clone())?;
        let mut refresher = WireRefresher {
            conn,
            next_id: 0,
            count: 0,
        };
        let start_step = state.step;
        let val = &self.val;
        let result = trainer.train(&mut state, train, &mut refresher, |entry, st| {
            log.push(entry.clone());
            if let Some(p) = &path {
                let cp = Checkpoint {
                    hyperparams: hp.clone(),
                    log: log.clone(),
                    state: st.clone(),
                };
                let tmp = p.with_extension("tmp");
                std::fs::write(&tmp, checkpoint_to_bytes(&ctx, &cp))?;
                std::fs::rename(&tmp, p)?;
            }
            let val_logits = val
                .iter()
                .map(|x| encrypted_infer(trainer.ops(), &st.w, x))
                .collect::<Result<Vec<_>>>()?;
            conn.borrow_mut().send(&Message::EpochReport {
                summary: EpochSummary {
                    log: entry.clone(),
                    total_epochs: hp.epochs,
                    step: st.step,
                    done: false,
                },
                val_logits,
                weights: None,
            })
        });
        self.summary.steps += state.step - start_step;
        self.summary.refreshes += refresher.count;
        result.map_err(|e| match e {
            Error::Protocol { .. } => e,
            other => err(codes::TRAINING_FAILED, other.to_string()),
        })?;
        let last = log.last().cloned().unwrap_or(EpochLog {
            epoch: 0,
            steps: 0,
            refreshes: 0,
            seconds: 0.0,
        });
        self.registry.models.lock().unwrap().insert(keyed.id, state.w.clone());
        conn.borrow_mut().send(&Message::EpochReport {
            summary: EpochSummary {
                log: last,
                total_epochs: hp.epochs,
                step: state.step,
                done: true,
            },
            val_logits: Vec::new(),
            weights: Some(state.w),
        })
    }

    fn on_infer<S: Read + Write>(&mut self, conn: &mut Conn<S>, x: Vec<PackedMatrix>) -> Result<()> {
        let keyed = self
            .keyed
            .as_ref()
            .ok_or_else(|| err(codes::UNEXPECTED, "inference before keys"))?;
        let w = self
            .registry
            .model(&keyed.id)
            .ok_or_else(|| err(codes::UNEXPECTED, "no trained model for this key"))?;
        let logits = x
            .iter()
            .map(|m| encrypted_infer(&keyed.ops, &w, m))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| err(codes::BAD_PAYLOAD, e.to_string()))?;
        conn.send(&Message::InferResponse { logits })
    }
}

/// Serves one connection until the peer closes it or the stream breaks.
pub fn handle_session<S: Read + Write>(stream: S, config: &ServerConfig, registry: &Registry) -> Result<SessionSummary> {
    let mut conn = Conn::new(stream, config.max_frame);
    let mut session = Session {
        config,
        registry,
        keyed: None,
        train: None,
        val: Vec::new(),
        summary: SessionSummary::default(),
    };
    loop {
        let msg = match conn.recv() {
            Ok(None) => return Ok(session.summary.clone()),
            Ok(Some(m)) => m,
            Err(e) => {
                // the stream is out of sync: report and close
                let _ = conn.send_error(error_code(&e), &e.to_string());
                return Err(e);
            }
        };
        session.summary.messages += 1;
        let outcome = match msg {
            Err(e) => Err(e),
            Ok(Message::Hello { params }) => session.on_hello(&mut conn, params),
            Ok(Message::Keys { material }) => session.on_keys(&mut conn, &material),
            Ok(Message::Upload { role, batches }) => session.on_upload(&mut conn, role, batches),
            Ok(Message::Train(req)) => {
                let (c, r) = session.on_train(conn, req);
                conn = c;
                r
            }
            Ok(Message::InferRequest { x }) => session.on_infer(&mut conn, x),
            Ok(Message::Error { .. }) => continue,
            Ok(other) => Err(err(codes::UNEXPECTED, format!("unexpected {:?} message", other.msg_type()))),
        };
        if let Err(e) = outcome {
            session.summary.errors += 1;
            let code = error_code(&e);
            if matches!(e, Error::Io(_)) {
                return Err(e);
            }
            let detail = match &e {
                Error::Protocol { detail, .. } => detail.clone(),
                other => other.to_string(),
            };
            conn.send_error(code, &detail)?;
            if code == codes::PARAMS_MISMATCH {
                return Ok(session.summary.clone());
            }
        }
    }
}

/// Accepts connections forever, one thread per session.
pub fn serve(listener: TcpListener, config: Arc<ServerConfig>, registry: Arc<Registry>) {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                eprintln!("accept failed: {e}");
                continue;
            }
        };
        let (config, registry) = (config.clone(), registry.clone());
        std::thread::spawn(move || {
            let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
            match handle_session(stream, &config, &registry) {
                Ok(s) => eprintln!("session {peer} closed: {} messages, {} steps", s.messages, s.steps),
                Err(e) => eprintln!("session {peer} aborted: {e}"),
            }
        });
    }
}

/// Runs [`serve`] on a background thread; returns the bound address and the shared registry.
pub fn spawn_server(addr: &str, config: ServerConfig) -> Result<(std::net::SocketAddr, Arc<Registry>)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let registry = Arc::new(Registry::default());
    let reg = registry.clone();
    std::thread::spawn(move || serve(listener, Arc::new(config), reg));
    Ok((local, registry))
}
