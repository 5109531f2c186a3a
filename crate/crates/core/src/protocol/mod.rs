//! Hospital/cloud wire protocol with interactive ciphertext refresh.

mod client;
mod conn;
pub mod frame;
mod message;
mod server;

pub use client::{
    decrypt_blocks, run_hospital_session, EncryptedDataset, EpochOutcome, Hospital, HospitalOptions, PlainSplits,
    SessionOutcome,
};
pub use conn::{error_code, Conn};
pub use frame::{codes, MsgType};
pub use message::{DataRole, EpochSummary, Message, TrainRequest, UploadBatch};
pub use server::{handle_session, key_id, key_id_hex, serve, spawn_server, KeyId, Registry, ServerConfig, SessionSummary};
