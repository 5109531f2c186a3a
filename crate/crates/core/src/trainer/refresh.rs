use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::ckks::serialize::ciphertext_bytes;
use crate::ckks::{decrypt_values, encrypt_values, Ciphertext, CkksContext, PublicKey, SecretKey};
use crate::error::Result;
use crate::linalg::PackedMatrix;

/// Source of fresh top-level encryptions of intermediate values.
pub trait RefreshChannel {
    fn refresh(&mut self, pm: &PackedMatrix) -> Result<PackedMatrix>;
}

/// Decrypts and re-encrypts each ciphertext at the top level.
///
/// Encryption randomness is derived from `seed` and the request bytes, so equal
/// requests get equal responses.
pub fn refresh_ciphertexts(
    ctx: &CkksContext,
    sk: &SecretKey,
    pk: &PublicKey,
    seed: u64,
    cts: &[Ciphertext],
) -> Result<Vec<Ciphertext>> {
    cts.iter()
        .map(|ct| {
            let digest = Sha256::new()
                .chain_update(seed.to_le_bytes())
                .chain_update(ciphertext_bytes(ctx, ct))
                .finalize();
            let mut rng = ChaCha20Rng::from_seed(digest.into());
            let values = decrypt_values(ctx, ct, sk)?;
            encrypt_values(ctx, &values, ctx.max_level(), pk, &mut rng)
        })
        .collect()
}

/// In-process key holder answering refresh requests.
pub struct LocalRefresher {
    ctx: Arc<CkksContext>,
    sk: SecretKey,
    pk: PublicKey,
    seed: u64,
    requests: usize,
}

impl LocalRefresher {
    pub fn new(ctx: Arc<CkksContext>, sk: SecretKey, pk: PublicKey, seed: u64) -> Self {
        Self {
            ctx,
            sk,
            pk,
            seed,
            requests: 0,
        }
    }

    pub fn requests(&self) -> usize {
        self.requests
    }
}

impl RefreshChannel for LocalRefresher {
    fn refresh(&mut self, pm: &PackedMatrix) -> Result<PackedMatrix> {
        self.requests += 1;
        let tiles = refresh_ciphertexts(&self.ctx, &self.sk, &self.pk, self.seed, pm.tiles())?;
        PackedMatrix::new(pm.plan().clone(), pm.layout(), tiles)
    }
}
