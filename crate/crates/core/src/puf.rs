//! Simulated 128×8 ReRAM PUF.
//!
//! A [`PufImage`] is the enrollment record of one memristor array: the
//! resistance of every (row, current) cell. Reads are noiseless and quantize
//! the resistance on a log scale to a 16-bit [`ResponseSymbol`].
//!
//! The cipher inverts a reading by searching the 16 rows that share the
//! upper three row-address bits (a *decode group*) at a fixed current, so an
//! image is only usable when those 16 symbols are pairwise distinct.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const ROWS: usize = 128;
pub const CURRENTS: usize = 8;
pub const CELLS: usize = ROWS * CURRENTS;
/// Rows per decode group: every row reachable by XOR-ing a nibble into the
/// low four address bits.
pub const GROUP_SIZE: usize = 16;
pub const GROUPS: usize = ROWS / GROUP_SIZE;

pub const R_MIN_OHMS: f64 = 1.0e3;
pub const R_MAX_OHMS: f64 = 1.0e6;

const MAX_REPAIR_ATTEMPTS: usize = 1000;

/// Flattened cell index `8·row + current`.
#[inline]
pub fn cell_index(row: usize, current: usize) -> usize {
    CURRENTS * row + current
}

/// Quantized resistance reading.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResponseSymbol(pub u16);

impl fmt::Display for ResponseSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `floor(65536 · (ln R − ln R_min) / (ln R_max − ln R_min))`, clamped to u16.
pub fn quantize<F: Real>(resistance: F) -> ResponseSymbol {
    let lo = F::lit(R_MIN_OHMS).ln();
    let hi = F::lit(R_MAX_OHMS).ln();
    let scaled = (F::lit(65536.0) * (resistance.ln() - lo) / (hi - lo)).floor();
    let v = scaled.max(F::zero()).min(F::lit(65535.0));
    ResponseSymbol(v.to_u16().expect("clamped to u16 range"))
}

/// Enrollment image of one PUF.
#[derive(Clone, Debug, PartialEq)]
pub struct PufImage<F> {
    resistances: Vec<F>,
    seed: u64,
    id: String,
}

/// A decode group that contains a repeated symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Violation {
    pub group: usize,
    pub current: usize,
}

impl<F: Real> PufImage<F> {
    /// Builds an image from a row-major 128×8 grid. Checks shape and
    /// positivity; decodability is checked separately.
    pub fn from_grid(resistances: Vec<F>, seed: u64, id: impl Into<String>) -> Result<Self> {
        if resistances.len() != CELLS {
            return Err(Error::domain(format!(
                "PUF image needs {CELLS} resistances, got {}",
                resistances.len()
            )));
        }
        if let Some(pos) = resistances.iter().position(|r| !(r.is_finite() && *r > F::zero())) {
            return Err(Error::domain(format!(
                "resistance at row {}, current {} is not a positive finite value",
                pos / CURRENTS,
                pos % CURRENTS
            )));
        }
        Ok(Self {
            resistances,
            seed,
            id: id.into(),
        })
    }

    /// Synthesizes an enrollment image: independent log-uniform resistances
    /// on [1 kΩ, 1 MΩ], with colliding cells resampled until every decode
    /// group is collision free.
    ///
    /// Panics if the image cannot be repaired within 1000 passes, which does
    /// not happen at 16-bit quantization.
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha20Rng| -> F {
            let u: f64 = rng.random();
            F::lit((R_MIN_OHMS.ln() + u * (R_MAX_OHMS.ln() - R_MIN_OHMS.ln())).exp())
        };
        let resistances: Vec<F> = (0..CELLS).map(|_| draw(&mut rng)).collect();
        let mut image = Self {
            resistances,
            seed,
            id: format!("puf-{seed:016x}"),
        };
        for _ in 0..MAX_REPAIR_ATTEMPTS {
            let colliding = image.colliding_cells();
            if colliding.is_empty() {
                return image;
            }
            for idx in colliding {
                image.resistances[idx] = draw(&mut rng);
            }
        }
        panic!("PUF image for seed {seed} still collides after {MAX_REPAIR_ATTEMPTS} repair passes");
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn resistances(&self) -> &[F] {
        &self.resistances
    }

    pub fn resistance(&self, row: usize, current: usize) -> F {
        self.resistances[cell_index(row, current)]
    }

    /// Noiseless read of cell (row, current).
    pub fn read_cell(&self, row: usize, current: usize) -> Result<ResponseSymbol> {
        if row >= ROWS {
            return Err(Error::domain(format!("row {row} outside 0..{}", ROWS - 1)));
        }
        if current >= CURRENTS {
            return Err(Error::domain(format!(
                "current {current} outside 0..{}",
                CURRENTS - 1
            )));
        }
        Ok(quantize(self.resistance(row, current)))
    }

    fn group_symbols(&self, group: usize, current: usize) -> impl Iterator<Item = (usize, ResponseSymbol)> + '_ {
        (group * GROUP_SIZE..(group + 1) * GROUP_SIZE).map(move |row| {
            let idx = cell_index(row, current);
            (idx, quantize(self.resistances[idx]))
        })
    }

    /// Every (group, current) pair whose 16 symbols are not pairwise distinct.
    pub fn validate_decodability(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for group in 0..GROUPS {
            for current in 0..CURRENTS {
                let mut seen = HashMap::with_capacity(GROUP_SIZE);
                let dup = self
                    .group_symbols(group, current)
                    .any(|(_, s)| seen.insert(s, ()).is_some());
                if dup {
                    out.push(Violation { group, current });
                }
            }
        }
        out
    }

    /// Cells whose symbol repeats an earlier row of the same decode group.
    fn colliding_cells(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for group in 0..GROUPS {
            for current in 0..CURRENTS {
                let mut seen = HashMap::with_capacity(GROUP_SIZE);
                for (idx, s) in self.group_symbols(group, current) {
                    if seen.insert(s, idx).is_some() {
                        out.push(idx);
                    }
                }
            }
        }
        out
    }

    /// Writes `<path>` as a 128-line CSV and `<path minus extension>.meta`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut csv = String::with_capacity(CELLS * 12);
        for row in self.resistances.chunks(CURRENTS) {
            let line: Vec<String> = row.iter().map(|r| r.to_string()).collect();
            csv.push_str(&line.join(","));
            csv.push('\n');
        }
        fs::write(path, csv)?;
        fs::write(
            meta_path(path),
            format!("seed={}\nid={}\n", self.seed, self.id),
        )?;
        Ok(())
    }

    /// Reads an image CSV plus its optional `.meta` sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut resistances = Vec::with_capacity(CELLS);
        let mut rows = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            rows += 1;
            if rows > ROWS {
                return Err(Error::parse(path, lineno + 1, format!("more than {ROWS} rows")));
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != CURRENTS {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("expected {CURRENTS} fields, found {}", fields.len()),
                ));
            }
            for f in fields {
                let v: F = f.trim().parse().map_err(|_| {
                    Error::parse(path, lineno + 1, format!("not a number: {f:?}"))
                })?;
                if !(v.is_finite() && v > F::zero()) {
                    return Err(Error::parse(
                        path,
                        lineno + 1,
                        format!("resistance must be positive and finite: {f}"),
                    ));
                }
                resistances.push(v);
            }
        }
        if rows != ROWS {
            return Err(Error::parse(path, rows, format!("expected {ROWS} rows, found {rows}")));
        }

        let (mut seed, mut id) = (0u64, path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        let meta = meta_path(path);
        if let Ok(meta_text) = fs::read_to_string(&meta) {
            for (lineno, line) in meta_text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((k, v)) = line.split_once('=') else {
                    return Err(Error::parse(&meta, lineno + 1, "expected key=value"));
                };
                match k.trim() {
                    "seed" => {
                        seed = v.trim().parse().map_err(|_| {
                            Error::parse(&meta, lineno + 1, format!("bad seed {v:?}"))
                        })?
                    }
                    "id" => id = v.trim().to_string(),
                    _ => {}
                }
            }
        }
        Self::from_grid(resistances, seed, id)
    }
}

/// Sidecar metadata path: same basename with a `.meta` extension.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}
