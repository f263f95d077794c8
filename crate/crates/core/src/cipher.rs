//! Keyless encryption: plaintext nibbles steer which PUF cells are read, and
//! the (whitened) readings are the ciphertext.
//!
//! Each plaintext octet contributes two nibbles, high nibble first, and each
//! nibble consumes one 17-bit block. Block `i` visits row
//! `row_base ⊕ nibble` at column `current_idx` and emits the cell's symbol
//! XOR the block's 7-bit mask. The receiver re-derives the blocks from the
//! TRN and password and searches the 16 rows of the decode group for the one
//! whose symbol matches.

use std::fmt::Write as _;

use crate::digest::{self, Block, Trn};
use crate::error::{Error, Result};
use crate::puf::{PufImage, ResponseSymbol};
use crate::scalar::Real;

/// Rotation counts tried, smallest first, when none is forced.
pub const STANDARD_ROTATIONS: [u16; 3] = [16, 32, 64];

const MAGIC: &[u8; 4] = b"KPUF";
const FORMAT_VERSION: u8 = 0x01;
const HEADER_LEN: usize = 4 + 1 + 2 + 4 + digest::TRN_LEN;

/// Maximum plaintext length, in characters, for a given rotation count.
pub fn capacity(rotations: u16) -> usize {
    digest::block_capacity(rotations) / 2
}

/// Smallest standard rotation count whose capacity holds `chars`.
pub fn select_rotations(chars: usize) -> Result<u16> {
    STANDARD_ROTATIONS
        .iter()
        .copied()
        .find(|&r| capacity(r) >= chars)
        .ok_or(Error::Capacity {
            chars,
            capacity: capacity(digest::MAX_ROTATIONS),
            rotations: digest::MAX_ROTATIONS,
        })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    pub trn: Trn,
    pub rotations: u16,
    pub symbols: Vec<u16>,
}

impl Ciphertext {
    /// Binary encoding: `KPUF`, version, R (u16 LE), count (u32 LE), TRN,
    /// then each symbol as u16 LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 2 * self.symbols.len());
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&self.rotations.to_le_bytes());
        out.extend_from_slice(&(self.symbols.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.trn);
        for s in &self.symbols {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "ciphertext is {} octets, header alone needs {HEADER_LEN}",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("missing KPUF magic".into()));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {}", bytes[4])));
        }
        let rotations = u16::from_le_bytes([bytes[5], bytes[6]]);
        let count = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        let trn: Trn = bytes[11..HEADER_LEN].try_into().unwrap();
        let body = &bytes[HEADER_LEN..];
        if body.len() != 2 * count {
            return Err(Error::Format(format!(
                "header announces {count} symbols but body holds {} octets",
                body.len()
            )));
        }
        let symbols = body
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        Ok(Self {
            trn,
            rotations,
            symbols,
        })
    }

    /// Hex dump of [`Ciphertext::to_bytes`], 32 octets per line.
    pub fn to_hex(&self) -> String {
        let bytes = self.to_bytes();
        let mut out = String::with_capacity(bytes.len() * 2 + bytes.len() / 32 + 1);
        for line in bytes.chunks(32) {
            let _ = writeln!(out, "{}", hex::encode(line));
        }
        out
    }

    /// Parses a hex dump; whitespace is ignored.
    pub fn from_hex(text: &str) -> Result<Self> {
        let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let bytes = hex::decode(compact).map_err(|e| Error::Format(format!("bad hex: {e}")))?;
        Self::from_bytes(&bytes)
    }

    /// Accepts either the binary encoding or its hex dump.
    pub fn decode_any(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(MAGIC) {
            return Self::from_bytes(bytes);
        }
        let text = std::str::from_utf8(bytes)
            .map_err(|_| Error::Format("neither binary KPUF data nor hex text".into()))?;
        Self::from_hex(text)
    }
}

fn nibbles(plaintext: &[u8]) -> impl Iterator<Item = u8> + '_ {
    plaintext.iter().flat_map(|&b| [b >> 4, b & 0x0F])
}

fn blocks_for(trn: &Trn, password: &[u8], rotations: u16, n_blocks: usize) -> Result<Vec<Block>> {
    let smd = digest::derive_smd(trn, password)?;
    let lmd = digest::extend_lmd(&smd, rotations)?;
    digest::parse_blocks(&lmd, n_blocks)
}

fn check_image<F: Real>(puf: &PufImage<F>) -> Result<()> {
    let bad = puf.validate_decodability();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "PUF image {} has {} colliding decode groups",
            puf.id(),
            bad.len()
        )))
    }
}

/// Encrypts with the smallest standard rotation count that fits.
pub fn encrypt<F: Real>(plaintext: &[u8], password: &[u8], trn: &Trn, puf: &PufImage<F>) -> Result<Ciphertext> {
    encrypt_with(plaintext, password, trn, puf, None, |_, _| {})
}

/// Encrypts with an optional forced rotation count; `visit(row, current)` is
/// called once per cell read, in block order.
pub fn encrypt_with<F: Real>(
    plaintext: &[u8],
    password: &[u8],
    trn: &Trn,
    puf: &PufImage<F>,
    rotations: Option<u16>,
    mut visit: impl FnMut(usize, usize),
) -> Result<Ciphertext> {
    let rotations = match rotations {
        Some(r) => {
            if r == 0 || r > digest::MAX_ROTATIONS {
                return Err(Error::domain(format!(
                    "rotations must be in 1..={}, got {r}",
                    digest::MAX_ROTATIONS
                )));
            }
            if plaintext.len() > capacity(r) {
                return Err(Error::Capacity {
                    chars: plaintext.len(),
                    capacity: capacity(r),
                    rotations: r,
                });
            }
            r
        }
        None => select_rotations(plaintext.len())?,
    };
    check_image(puf)?;
    let blocks = blocks_for(trn, password, rotations, 2 * plaintext.len())?;
    let mut symbols = Vec::with_capacity(blocks.len());
    for (block, nibble) in blocks.iter().zip(nibbles(plaintext)) {
        let row = (block.row_base ^ nibble) as usize;
        let current = block.current_idx as usize;
        let ResponseSymbol(raw) = puf.read_cell(row, current)?;
        visit(row, current);
        symbols.push(raw ^ block.mask as u16);
    }
    Ok(Ciphertext {
        trn: *trn,
        rotations,
        symbols,
    })
}

/// Inverts [`encrypt`] given the matched enrollment image.
pub fn decrypt<F: Real>(ct: &Ciphertext, password: &[u8], puf: &PufImage<F>) -> Result<Vec<u8>> {
    if ct.symbols.len() % 2 != 0 {
        return Err(Error::Format(format!(
            "ciphertext holds {} symbols; two per character expected",
            ct.symbols.len()
        )));
    }
    let chars = ct.symbols.len() / 2;
    if ct.rotations == 0 || ct.rotations > digest::MAX_ROTATIONS {
        return Err(Error::domain(format!("rotations {} out of range", ct.rotations)));
    }
    if chars > capacity(ct.rotations) {
        return Err(Error::Capacity {
            chars,
            capacity: capacity(ct.rotations),
            rotations: ct.rotations,
        });
    }
    let blocks = blocks_for(&ct.trn, password, ct.rotations, ct.symbols.len())?;
    let mut nibbles = Vec::with_capacity(blocks.len());
    for (i, (block, &sym)) in blocks.iter().zip(&ct.symbols).enumerate() {
        let target = ResponseSymbol(sym ^ block.mask as u16);
        let current = block.current_idx as usize;
        let mut found = None;
        let mut matches = 0;
        for d in 0u8..16 {
            let row = (block.row_base ^ d) as usize;
            if puf.read_cell(row, current)? == target {
                matches += 1;
                found = Some(d);
            }
        }
        match (matches, found) {
            (1, Some(d)) => nibbles.push(d),
            (0, _) => return Err(Error::Tamper { block: i }),
            _ => return Err(Error::Decodability { block: i, matches }),
        }
    }
    Ok(nibbles.chunks_exact(2).map(|p| (p[0] << 4) | p[1]).collect())
}
