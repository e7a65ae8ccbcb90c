use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Every consumer of randomness draws from its own ChaCha stream, all derived
/// from the run seed. Keeping the streams separate means that, for example,
/// the query-side noise sequence is identical whether or not the key side
/// draws anything, which is what makes the gamma=0 run reproduce the plain
/// VAE bit for bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    AugQuery = 3,
    AugKey = 4,
    EpsQuery = 5,
    EpsKey = 6,
    Eval = 7,
    Synthetic = 8,
    Tsne = 9,
    Probe = 10,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Serializable snapshot of a generator's position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

pub fn snapshot(rng: &ChaCha8Rng) -> RngState {
    RngState {
        seed: rng.get_seed(),
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos(),
    }
}

pub fn restore(state: &RngState) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(state.seed);
    rng.set_stream(state.stream);
    rng.set_word_pos(state.word_pos);
    rng
}

impl RngState {
    pub const BYTES: usize = 56;

    pub fn to_bytes(&self) -> [u8; Self::BYTES] {
        let mut out = [0u8; Self::BYTES];
        out[..32].copy_from_slice(&self.seed);
        out[32..40].copy_from_slice(&self.stream.to_le_bytes());
        out[40..56].copy_from_slice(&self.word_pos.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> crate::error::Result<Self> {
        if bytes.len() != Self::BYTES {
            return Err(crate::error::Error::Checkpoint(format!(
                "rng state must be {} bytes, got {}",
                Self::BYTES,
                bytes.len()
            )));
        }
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&bytes[..32]);
        Ok(Self {
            seed,
            stream: u64::from_le_bytes(bytes[32..40].try_into().unwrap()),
            word_pos: u128::from_le_bytes(bytes[40..56].try_into().unwrap()),
        })
    }
}
