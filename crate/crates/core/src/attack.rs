//! Frequency analysis against a monoalphabetic substitution baseline and
//! against keyless ciphertext symbols.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::cipher::{encrypt, STANDARD_ROTATIONS};
use crate::digest::seeded_trn;
use crate::error::{Error, Result};
use crate::puf::PufImage;
use crate::scalar::Real;

/// Lowercase letters followed by the space.
pub const ALPHABET: &[u8; 27] = b"abcdefghijklmnopqrstuvwxyz ";

/// Public-domain English sample text bundled with the crate.
pub const ENGLISH_SAMPLE: &str = include_str!("../data/english_sample.txt");

/// Letter frequencies of English prose in percent (Lewand's table, as
/// reproduced in most cryptography primers).
const ENGLISH_LETTERS: [f64; 26] = [
    8.167, 1.492, 2.782, 4.253, 12.702, 2.228, 2.015, 6.094, 6.966, 0.153, 0.772, 4.025, 2.406, 6.749, 7.507, 1.929,
    0.095, 5.987, 6.327, 9.056, 2.758, 0.978, 2.360, 0.150, 1.974, 0.074,
];

/// Share of spaces among letters and spaces in running English text.
pub const ENGLISH_SPACE: f64 = 0.18;

/// Lowercases ASCII letters and turns every other run of characters into a
/// single space. Leading and trailing separators are dropped.
pub fn normalize_text(text: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(text.len());
    for b in text.bytes() {
        if b.is_ascii_alphabetic() {
            out.push(b.to_ascii_lowercase());
        } else if out.last().is_some_and(|&l| l != b' ') {
            out.push(b' ');
        }
    }
    while out.last() == Some(&b' ') {
        out.pop();
    }
    out
}

/// Relative frequencies of the 26 letters, plus the proportion of spaces
/// among all symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguageProfile {
    letters: [f64; 26],
    space: f64,
}

impl LanguageProfile {
    pub fn new(letters: [f64; 26], space: f64) -> Result<Self> {
        if letters.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::domain("letter frequencies must be non-negative"));
        }
        let sum: f64 = letters.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("letter frequencies sum to {sum}, not 1")));
        }
        if !(0.0..1.0).contains(&space) {
            return Err(Error::domain("space proportion must lie in [0, 1)"));
        }
        Ok(Self { letters, space })
    }

    pub fn english() -> Self {
        let total: f64 = ENGLISH_LETTERS.iter().sum();
        Self {
            letters: ENGLISH_LETTERS.map(|p| p / total),
            space: ENGLISH_SPACE,
        }
    }

    /// Reads `letter,frequency` rows. A row for `space` sets the space
    /// proportion (default 0.18); letter weights are normalized to sum to 1.
    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut letters = [f64::NAN; 26];
        let mut space = ENGLISH_SPACE;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("letter")) {
                continue;
            }
            let (l, f) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(path, lineno, "expected letter,frequency"))?;
            let f: f64 = f
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad frequency '{}'", f.trim())))?;
            let l = l.trim().to_ascii_lowercase();
            if l == "space" || l.is_empty() {
                space = f;
                continue;
            }
            let b = l.as_bytes();
            if b.len() != 1 || !b[0].is_ascii_lowercase() {
                return Err(Error::parse(path, lineno, format!("unknown letter '{l}'")));
            }
            let slot = &mut letters[(b[0] - b'a') as usize];
            if !slot.is_nan() {
                return Err(Error::parse(path, lineno, format!("duplicate letter '{l}'")));
            }
            *slot = f;
        }
        if let Some(i) = letters.iter().position(|p| p.is_nan()) {
            return Err(Error::parse(path, 0, format!("missing letter '{}'", (b'a' + i as u8) as char)));
        }
        let total: f64 = letters.iter().sum();
        if !(total > 0.0) {
            return Err(Error::parse(path, 0, "letter frequencies sum to zero"));
        }
        Self::new(letters.map(|p| p / total), space)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?, path)
    }

    pub fn letter_frequencies(&self) -> &[f64; 26] {
        &self.letters
    }

    pub fn space_proportion(&self) -> f64 {
        self.space
    }

    /// Alphabet symbols from most to least frequent, ties in alphabet order.
    pub fn ranked(&self) -> Vec<u8> {
        let mut probs: Vec<(u8, f64)> = self
            .letters
            .iter()
            .enumerate()
            .map(|(i, &p)| (ALPHABET[i], p * (1.0 - self.space)))
            .collect();
        probs.push((b' ', self.space));
        probs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        probs.into_iter().map(|(c, _)| c).collect()
    }
}

/// Applies a seeded random permutation of the 27-symbol alphabet to
/// normalized text. Symbols outside the alphabet pass through unchanged.
pub fn mono_substitution_encrypt(plaintext: &[u8], seed: u64) -> Vec<u8> {
    let table = substitution_table(seed);
    plaintext.iter().map(|&b| table[b as usize]).collect()
}

fn substitution_table(seed: u64) -> [u8; 256] {
    let mut image = *ALPHABET;
    image.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let mut table: [u8; 256] = std::array::from_fn(|i| i as u8);
    for (&from, &to) in ALPHABET.iter().zip(&image) {
        table[from as usize] = to;
    }
    table
}

/// `Σ f(f − 1) / (N(N − 1))` over distinct symbols.
pub fn index_of_coincidence<T: Hash + Eq>(symbols: &[T]) -> Result<f64> {
    if symbols.len() < 2 {
        return Err(Error::domain("index of coincidence needs at least two symbols"));
    }
    let mut counts: HashMap<&T, u64> = HashMap::new();
    for s in symbols {
        *counts.entry(s).or_default() += 1;
    }
    let n = symbols.len() as f64;
    let pairs: f64 = counts.values().map(|&f| f as f64 * (f as f64 - 1.0)).sum();
    Ok(pairs / (n * (n - 1.0)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackReport {
    /// Symbol counts, most frequent first (ties by symbol value).
    pub histogram: Vec<(u64, u64)>,
    /// Plaintext symbol assigned to each of the most frequent cipher symbols.
    pub mapping: Vec<(u64, u8)>,
    /// Fraction of letter positions decoded correctly.
    pub recovery_rate: f64,
    pub index_of_coincidence: f64,
    pub n_symbols: usize,
}

impl AttackReport {
    pub fn distinct_symbols(&self) -> usize {
        self.histogram.len()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,symbol,count,decoded_as\n");
        for (rank, &(sym, count)) in self.histogram.iter().enumerate() {
            let decoded = self
                .mapping
                .get(rank)
                .map(|&(_, c)| if c == b' ' { "space".to_string() } else { (c as char).to_string() })
                .unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{}", rank + 1, sym, count, decoded);
        }
        s
    }

    pub fn to_text(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{title}");
        let _ = writeln!(s, "  symbols            {}", self.n_symbols);
        let _ = writeln!(s, "  distinct symbols   {}", self.distinct_symbols());
        let _ = writeln!(s, "  index of coinc.    {:.6e}", self.index_of_coincidence);
        let _ = writeln!(s, "  letter recovery    {:.4}", self.recovery_rate);
        s
    }
}

/// Rank-matches cipher symbol frequencies against the profile, decodes the
/// stream and scores letter positions against `truth`. Cipher symbols
/// ranked below the profile's alphabet size stay undecoded.
pub fn frequency_attack<T>(symbols: &[T], profile: &LanguageProfile, truth: &[u8]) -> Result<AttackReport>
where
    T: Copy + Ord + Hash + Into<u64>,
{
    if symbols.is_empty() {
        return Err(Error::domain("empty symbol stream"));
    }
    if symbols.len() != truth.len() {
        return Err(Error::domain(format!(
            "stream has {} symbols but the plaintext has {} characters",
            symbols.len(),
            truth.len()
        )));
    }
    let mut counts: HashMap<T, u64> = HashMap::new();
    for &s in symbols {
        *counts.entry(s).or_default() += 1;
    }
    let mut histogram: Vec<(T, u64)> = counts.into_iter().collect();
    histogram.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let ranked = profile.ranked();
    let decode: HashMap<T, u8> = histogram.iter().zip(&ranked).map(|(&(s, _), &c)| (s, c)).collect();

    let mut letters = 0usize;
    let mut hits = 0usize;
    for (s, &t) in symbols.iter().zip(truth) {
        if t.is_ascii_lowercase() {
            letters += 1;
            if decode.get(s) == Some(&t) {
                hits += 1;
            }
        }
    }
    if letters == 0 {
        return Err(Error::domain("plaintext contains no letters"));
    }
    Ok(AttackReport {
        mapping: histogram.iter().zip(&ranked).map(|(&(s, _), &c)| (s.into(), c)).collect(),
        histogram: histogram.iter().map(|&(s, c)| (s.into(), c)).collect(),
        recovery_rate: hits as f64 / letters as f64,
        index_of_coincidence: index_of_coincidence(symbols)?,
        n_symbols: symbols.len(),
    })
}

/// Ciphertext of a plaintext under repeated keyless encryption.
#[derive(Clone, Debug, Default)]
pub struct ProtocolStream {
    /// One unit per plaintext character: its two 16-bit symbols, high
    /// nibble's first.
    pub units: Vec<u32>,
    /// The raw 16-bit symbols in order.
    pub raw: Vec<u16>,
    /// The plaintext repeated once per encryption, aligned with `units`.
    pub truth: Vec<u8>,
}

/// Characters per encryption, the capacity at the smallest rotation count.
pub const CHUNK_CHARS: usize = 240;

/// Encrypts `plaintext` `repeats` times in 240-character chunks, each chunk
/// with its own seeded TRN.
pub fn protocol_stream<F: Real>(
    plaintext: &[u8],
    password: &[u8],
    puf: &PufImage<F>,
    repeats: usize,
    seed: u64,
) -> Result<ProtocolStream> {
    let mut out = ProtocolStream::default();
    let mut counter = 0u64;
    for _ in 0..repeats {
        for chunk in plaintext.chunks(CHUNK_CHARS) {
            counter += 1;
            let ct = encrypt(chunk, password, &seeded_trn(seed, counter), puf)?;
            debug_assert_eq!(ct.rotations, STANDARD_ROTATIONS[0]);
            out.raw.extend_from_slice(&ct.symbols);
            out.units
                .extend(ct.symbols.chunks_exact(2).map(|p| (p[0] as u32) << 16 | p[1] as u32));
        }
        out.truth.extend_from_slice(plaintext);
    }
    Ok(out)
}
