use std::io::{Read, Write};
use std::sync::Arc;

use super::frame::{codes, read_frame, write_frame, Incoming};
use super::message::Message;
use crate::ckks::CkksContext;
use crate::error::{Error, Result};

/// A framed message stream bound to the session's parameters once known.
pub struct Conn<S> {
    stream: S,
    max_frame: u64,
    ctx: Option<Arc<CkksContext>>,
}

impl<S: Read + Write> Conn<S> {
    pub fn new(stream: S, max_frame: u64) -> Self {
        Self {
            stream,
            max_frame,
            ctx: None,
        }
    }

    pub fn context(&self) -> Option<&Arc<CkksContext>> {
        self.ctx.as_ref()
    }

    pub fn set_context(&mut self, ctx: Arc<CkksContext>) {
        self.ctx = Some(ctx);
    }

    pub fn send(&mut self, m: &Message) -> Result<()> {
        let payload = m.encode(self.ctx.as_deref());
        write_frame(&mut self.stream, m.msg_type() as u8, &payload)
    }

    pub fn send_error(&mut self, code: u8, detail: &str) -> Result<()> {
        self.send(&Message::Error {
            code,
            detail: detail.to_string(),
        })
    }

    /// `Ok(None)` on orderly close; the inner error is a bad frame the stream survived.
    pub fn recv(&mut self) -> Result<Option<Result<Message>>> {
        match read_frame(&mut self.stream, self.max_frame)? {
            Incoming::Closed => Ok(None),
            Incoming::Corrupt(d) => Ok(Some(Err(Error::Protocol {
                code: codes::BAD_FRAME,
                detail: d,
            }))),
            Incoming::Frame(f) => Ok(Some(Message::decode(&f, self.ctx.as_deref()))),
        }
    }

    /// Next message, treating close, bad frames and error frames as failures.
    pub fn expect(&mut self) -> Result<Message> {
        match self.recv()? {
            None => Err(Error::Protocol {
                code: codes::UNEXPECTED,
                detail: "peer closed the connection".into(),
            }),
            Some(Err(e)) => Err(e),
            Some(Ok(Message::Error { code, detail })) => Err(Error::Protocol { code, detail }),
            Some(Ok(m)) => Ok(m),
        }
    }

    pub fn into_inner(self) -> S {
        self.stream
    }
}

/// Protocol error code for a failure, for error frames and exit statuses.
pub fn error_code(e: &Error) -> u8 {
    match e {
        Error::Protocol { code, .. } => *code,
        Error::ParamsHashMismatch => codes::PARAMS_MISMATCH,
        Error::Refresh(_) | Error::LevelExhausted { .. } => codes::TRAINING_FAILED,
        Error::Io(_) => codes::BAD_FRAME,
        _ => codes::BAD_PAYLOAD,
    }
}
