//! Leveled RNS-CKKS: encoding, keys, encryption and homomorphic evaluation.

mod context;
mod encoding;
mod evaluator;
mod keys;
mod params;
pub mod serialize;

pub use context::{CkksContext, Plaintext};
pub use evaluator::{decrypt, decrypt_values, encrypt_pk, encrypt_values, scales_match, Ciphertext, Evaluator};
pub use keys::{
    default_rotation_steps, generate_public, generate_relin, generate_rotations, generate_secret, keygen,
    EvalKeys, EvaluationKey, KeySet, PublicKey, RotationKeySet, SecretKey, SwitchingKey,
};
pub use params::{max_log_qp_128, CkksParams, ParamsHash, SecurityProfile};
