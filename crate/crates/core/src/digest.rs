//! Sender-side digest pipeline: TRN ⊕ password → SHA3-512 → rotate-and-rehash
//! extension → 17-bit blocks.
//!
//! Bit strings are MSB-first within each octet everywhere in this module.

use rand::rngs::OsRng;
use rand::TryRngCore;
use zeroize::Zeroize;

use crate::error::{Error, Result};
use crate::keccak::Sha3_512;

pub const TRN_LEN: usize = 64;
pub const PASSWORD_LEN: usize = 64;
pub const SMD_BITS: usize = 512;
pub const BLOCK_BITS: usize = 17;
pub const MAX_ROTATIONS: u16 = 64;

/// 64-octet true random number exchanged in the handshake.
pub type Trn = [u8; TRN_LEN];
/// 64-octet shared password.
pub type Password = [u8; PASSWORD_LEN];

/// Short message digest: one 512-bit SHA3-512 output.
#[derive(Clone, PartialEq, Eq)]
pub struct Digest512([u8; SMD_BITS / 8]);

impl Digest512 {
    pub fn from_bytes(bytes: [u8; SMD_BITS / 8]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; SMD_BITS / 8] {
        &self.0
    }

    pub fn bit_len(&self) -> usize {
        SMD_BITS
    }

    /// Rotates the leading 16-bit word left by one; the other 496 bits are
    /// untouched.
    fn rotate_first_word(&self) -> [u8; SMD_BITS / 8] {
        let mut out = self.0;
        let word = u16::from_be_bytes([out[0], out[1]]).rotate_left(1);
        out[..2].copy_from_slice(&word.to_be_bytes());
        out
    }
}

impl std::fmt::Debug for Digest512 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Digest512({})", hex::encode(self.0))
    }
}

impl Drop for Digest512 {
    fn drop(&mut self) {
        self.0.zeroize();
    }
}

/// Long message digest: `rotations` concatenated SMDs.
#[derive(Clone, PartialEq, Eq)]
pub struct LongDigest {
    bytes: Vec<u8>,
    rotations: u16,
}

impl LongDigest {
    /// Wraps raw digest material. `bytes.len()` must be `64 · rotations`.
    pub fn from_bytes(bytes: Vec<u8>, rotations: u16) -> Result<Self> {
        if rotations == 0 || bytes.len() != SMD_BITS / 8 * rotations as usize {
            return Err(Error::domain(format!(
                "{} octets is not a {rotations}-segment digest",
                bytes.len()
            )));
        }
        Ok(Self { bytes, rotations })
    }

    pub fn rotations(&self) -> u16 {
        self.rotations
    }

    pub fn bit_len(&self) -> usize {
        self.bytes.len() * 8
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Reads `width ≤ 32` bits starting at bit `start`, MSB-first.
    fn bits(&self, start: usize, width: usize) -> u32 {
        (start..start + width).fold(0u32, |acc, i| {
            let bit = (self.bytes[i / 8] >> (7 - i % 8)) & 1;
            (acc << 1) | bit as u32
        })
    }
}

impl std::fmt::Debug for LongDigest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LongDigest")
            .field("rotations", &self.rotations)
            .field("bits", &self.bit_len())
            .finish()
    }
}

impl Drop for LongDigest {
    fn drop(&mut self) {
        self.bytes.zeroize();
    }
}

/// One 17-bit LMD slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Block {
    /// 7-bit row address, 0..=127.
    pub row_base: u8,
    /// 3-bit current index, 0..=7.
    pub current_idx: u8,
    /// 7-bit whitening value, 0..=127.
    pub mask: u8,
}

impl Block {
    pub fn from_bits(v: u32) -> Self {
        Self {
            row_base: ((v >> 10) & 0x7F) as u8,
            current_idx: ((v >> 7) & 0x07) as u8,
            mask: (v & 0x7F) as u8,
        }
    }
}

/// SHA3-512(trn ⊕ password).
pub fn derive_smd(trn: &[u8], password: &[u8]) -> Result<Digest512> {
    if trn.len() != TRN_LEN {
        return Err(Error::domain(format!("TRN must be {TRN_LEN} octets, got {}", trn.len())));
    }
    if password.len() != PASSWORD_LEN {
        return Err(Error::domain(format!(
            "password must be {PASSWORD_LEN} octets, got {}",
            password.len()
        )));
    }
    let mut mixed = [0u8; TRN_LEN];
    for (m, (t, p)) in mixed.iter_mut().zip(trn.iter().zip(password)) {
        *m = t ^ p;
    }
    let smd = Digest512(Sha3_512::digest(&mixed));
    mixed.zeroize();
    Ok(smd)
}

/// Extends an SMD to `rotations` segments. Segment 1 is the SMD itself; each
/// later segment is SHA3-512 of the previous one with its first 16-bit word
/// rotated left by one.
pub fn extend_lmd(smd: &Digest512, rotations: u16) -> Result<LongDigest> {
    if rotations == 0 || rotations > MAX_ROTATIONS {
        return Err(Error::domain(format!(
            "rotations must be in 1..={MAX_ROTATIONS}, got {rotations}"
        )));
    }
    let mut bytes = Vec::with_capacity(SMD_BITS / 8 * rotations as usize);
    let mut segment = smd.clone();
    bytes.extend_from_slice(segment.as_bytes());
    for _ in 1..rotations {
        let mut rotated = segment.rotate_first_word();
        segment = Digest512(Sha3_512::digest(&rotated));
        rotated.zeroize();
        bytes.extend_from_slice(segment.as_bytes());
    }
    Ok(LongDigest { bytes, rotations })
}

/// Number of whole 17-bit blocks a digest of `rotations` segments holds.
pub fn block_capacity(rotations: u16) -> usize {
    SMD_BITS * rotations as usize / BLOCK_BITS
}

/// Splits the first `n_blocks · 17` bits into blocks; the remainder is
/// discarded.
pub fn parse_blocks(lmd: &LongDigest, n_blocks: usize) -> Result<Vec<Block>> {
    let needed = n_blocks * BLOCK_BITS;
    if needed > lmd.bit_len() {
        return Err(Error::Capacity {
            chars: n_blocks.div_ceil(2),
            capacity: block_capacity(lmd.rotations) / 2,
            rotations: lmd.rotations,
        });
    }
    Ok((0..n_blocks)
        .map(|i| Block::from_bits(lmd.bits(i * BLOCK_BITS, BLOCK_BITS)))
        .collect())
}

/// 64 octets from the operating system's CSPRNG.
pub fn fresh_trn() -> Result<Trn> {
    let mut trn = [0u8; TRN_LEN];
    OsRng
        .try_fill_bytes(&mut trn)
        .map_err(|e| Error::Environment(e.to_string()))?;
    Ok(trn)
}

/// Deterministic TRN for replayable experiments: SHA3-512 over a domain
/// label, the seed and a counter.
pub fn seeded_trn(seed: u64, counter: u64) -> Trn {
    let mut h = Sha3_512::new();
    h.update(b"kpuf/trn/v1");
    h.update(&seed.to_le_bytes());
    h.update(&counter.to_le_bytes());
    h.finalize()
}
