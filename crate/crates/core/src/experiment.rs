//! Cell-visit experiment: encrypt one fixed plaintext many times with fresh
//! TRNs and count how often each of the 1024 cells is read per run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::cipher;
use crate::digest::{self, Trn};
use crate::error::{Error, Result};
use crate::puf::{cell_index, PufImage, CELLS};
use crate::scalar::Real;

pub const VISITS_HEADER: &str = "run,cell,visits";
pub const HISTOGRAM_HEADER: &str = "visits,frequency";

/// Where per-run TRNs come from.
#[derive(Clone, Copy, Debug)]
pub enum TrnSource {
    /// `seeded_trn(master_seed, run_index)`: replayable.
    Seeded(u64),
    /// Operating-system entropy.
    Entropy,
}

impl TrnSource {
    fn trn(&self, run: usize) -> Result<Trn> {
        match *self {
            TrnSource::Seeded(seed) => Ok(digest::seeded_trn(seed, run as u64)),
            TrnSource::Entropy => digest::fresh_trn(),
        }
    }
}

/// Long-format visit counts: one record per (run, cell), zeros included.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisitTable {
    n_runs: usize,
    n_trials: u32,
    /// `counts[(run - 1) * CELLS + cell]`
    counts: Vec<u32>,
}

/// One long-format record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VisitRecord {
    /// 1-based.
    pub run: usize,
    /// `8·row + current`, 0..=1023.
    pub cell: usize,
    pub visits: u32,
}

impl VisitTable {
    /// Builds a table from a dense run-major count grid. Every run must sum
    /// to the same total, which becomes `n_trials_per_run`.
    pub fn from_counts(n_runs: usize, counts: Vec<u32>) -> Result<Self> {
        if n_runs == 0 {
            return Err(Error::domain("visit table needs at least one run"));
        }
        if counts.len() != n_runs * CELLS {
            return Err(Error::domain(format!(
                "{} counts for {n_runs} runs; expected {}",
                counts.len(),
                n_runs * CELLS
            )));
        }
        let totals: Vec<u32> = counts.chunks(CELLS).map(|r| r.iter().sum()).collect();
        let n_trials = totals[0];
        if let Some(bad) = totals.iter().position(|&t| t != n_trials) {
            return Err(Error::domain(format!(
                "run {} has {} visits but run 1 has {n_trials}",
                bad + 1,
                totals[bad]
            )));
        }
        Ok(Self {
            n_runs,
            n_trials,
            counts,
        })
    }

    pub fn n_runs(&self) -> usize {
        self.n_runs
    }

    /// Trials per run (the binomial `n`).
    pub fn n_trials_per_run(&self) -> u32 {
        self.n_trials
    }

    pub fn n_records(&self) -> usize {
        self.counts.len()
    }

    /// Count for 1-based `run` and flattened `cell`.
    pub fn count(&self, run: usize, cell: usize) -> u32 {
        self.counts[(run - 1) * CELLS + cell]
    }

    /// Dense run-major counts.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn run_counts(&self, run: usize) -> &[u32] {
        &self.counts[(run - 1) * CELLS..run * CELLS]
    }

    pub fn records(&self) -> impl Iterator<Item = VisitRecord> + '_ {
        self.counts.iter().enumerate().map(|(i, &visits)| VisitRecord {
            run: i / CELLS + 1,
            cell: i % CELLS,
            visits,
        })
    }

    /// Visits per cell summed over runs.
    pub fn pooled(&self) -> Vec<u64> {
        let mut out = vec![0u64; CELLS];
        for run in self.counts.chunks(CELLS) {
            for (o, &c) in out.iter_mut().zip(run) {
                *o += c as u64;
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.counts.len() * 10 + 64);
        let _ = writeln!(out, "# cell = 8*row + current; trials_per_run = {}", self.n_trials);
        out.push_str(VISITS_HEADER);
        out.push('\n');
        for r in self.records() {
            let _ = writeln!(out, "{},{},{}", r.run, r.cell, r.visits);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_csv(&fs::read_to_string(path)?, path)
    }

    /// Parses the visit CSV. Records may come in any order but must cover
    /// every (run, cell) pair of runs `1..=max_run` exactly once.
    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let mut header_seen = false;
        let mut entries: Vec<(usize, usize, u32, usize)> = Vec::new();
        let mut last_line = 0;
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            last_line = lineno;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                if line != VISITS_HEADER {
                    return Err(Error::parse(path, lineno, format!("expected header `{VISITS_HEADER}`")));
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::parse(path, lineno, format!("expected 3 fields, found {}", fields.len())));
            }
            let run: usize = fields[0]
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad run index {:?}", fields[0])))?;
            let cell: usize = fields[1]
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad cell index {:?}", fields[1])))?;
            let visits: u32 = fields[2]
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad visit count {:?}", fields[2])))?;
            if run == 0 {
                return Err(Error::parse(path, lineno, "run index is 1-based"));
            }
            if cell >= CELLS {
                return Err(Error::parse(path, lineno, format!("cell index {cell} outside 0..{}", CELLS - 1)));
            }
            entries.push((run, cell, visits, lineno));
        }
        if !header_seen {
            return Err(Error::parse(path, last_line.max(1), format!("missing header `{VISITS_HEADER}`")));
        }
        let n_runs = entries.iter().map(|e| e.0).max().unwrap_or(0);
        if n_runs == 0 {
            return Err(Error::parse(path, last_line, "no records"));
        }
        let mut counts = vec![u32::MAX; n_runs * CELLS];
        for &(run, cell, visits, lineno) in &entries {
            let slot = &mut counts[(run - 1) * CELLS + cell];
            if *slot != u32::MAX {
                return Err(Error::parse(path, lineno, format!("duplicate record for run {run}, cell {cell}")));
            }
            *slot = visits;
        }
        if let Some(missing) = counts.iter().position(|&c| c == u32::MAX) {
            return Err(Error::parse(
                path,
                last_line,
                format!("missing record for run {}, cell {}", missing / CELLS + 1, missing % CELLS),
            ));
        }
        Self::from_counts(n_runs, counts).map_err(|e| Error::parse(path, last_line, e.to_string()))
    }
}

/// Tally of (run, cell) records by visit count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisitHistogram {
    /// `counts[k]` = number of records with exactly `k` visits.
    pub counts: Vec<u64>,
}

impl VisitHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn max_visits(&self) -> usize {
        self.counts.iter().rposition(|&c| c > 0).unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTOGRAM_HEADER);
        out.push('\n');
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{k},{c}");
        }
        out
    }
}

pub fn histogram(table: &VisitTable) -> VisitHistogram {
    let max = table.counts.iter().copied().max().unwrap_or(0) as usize;
    let mut counts = vec![0u64; max + 1];
    for &c in &table.counts {
        counts[c as usize] += 1;
    }
    VisitHistogram { counts }
}

/// Encrypts `plaintext` once per run with that run's TRN and records which
/// cells were read. Runs are independent and execute in parallel; the
/// result is ordered by run index.
pub fn run_visit_experiment<F: Real>(
    plaintext: &[u8],
    n_runs: usize,
    password: &[u8],
    puf: &PufImage<F>,
    trns: TrnSource,
    rotations: Option<u16>,
) -> Result<VisitTable> {
    if n_runs == 0 {
        return Err(Error::domain("n_runs must be positive"));
    }
    let per_run: Vec<Vec<u32>> = (1..=n_runs)
        .into_par_iter()
        .map(|run| -> Result<Vec<u32>> {
            let trn = trns.trn(run)?;
            let mut counts = vec![0u32; CELLS];
            cipher::encrypt_with(plaintext, password, &trn, puf, rotations, |row, current| {
                counts[cell_index(row, current)] += 1;
            })?;
            Ok(counts)
        })
        .collect::<Result<_>>()?;
    VisitTable::from_counts(n_runs, per_run.concat())
}

/// Multinomial visit counts: each run spreads `n_trials` visits over the
/// cells with probability proportional to `weights`.
pub fn synthetic_visits(n_runs: usize, n_trials: u32, weights: &[f64], seed: u64) -> Result<VisitTable> {
    if weights.len() != CELLS {
        return Err(Error::domain(format!("need {CELLS} cell weights")));
    }
    let dist = WeightedIndex::new(weights).map_err(|e| Error::domain(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut counts = vec![0u32; n_runs * CELLS];
    for run in counts.chunks_mut(CELLS) {
        for _ in 0..n_trials {
            run[dist.sample(&mut rng)] += 1;
        }
    }
    VisitTable::from_counts(n_runs, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn small_table() -> VisitTable {
        let mut counts = vec![0u32; 2 * CELLS];
        counts[5] = 2;
        counts[1023] = 1;
        counts[CELLS + 7] = 3;
        VisitTable::from_counts(2, counts).unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let t = small_table();
        let csv = t.to_csv();
        assert!(csv.lines().nth(1) == Some("run,cell,visits"));
        let back = VisitTable::parse_csv(&csv, &PathBuf::from("mem")).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn out_of_range_cell_is_parse_error() {
        let text = "run,cell,visits\n1,1024,0\n";
        match VisitTable::parse_csv(text, &PathBuf::from("v.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_report_line() {
        let text = "# c\nrun,cell,visits\n1,0,x\n";
        match VisitTable::parse_csv(text, &PathBuf::from("v.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(VisitTable::parse_csv("run,cell\n", &PathBuf::from("v")).is_err());
        assert!(VisitTable::parse_csv("run,cell,visits\n1,0,1\n", &PathBuf::from("v")).is_err());
    }

    #[test]
    fn unequal_run_totals_rejected() {
        let mut counts = vec![0u32; 2 * CELLS];
        counts[0] = 1;
        assert!(VisitTable::from_counts(2, counts).is_err());
    }

    #[test]
    fn zero_histogram() {
        let t = VisitTable::from_counts(3, vec![0; 3 * CELLS]).unwrap();
        let h = histogram(&t);
        assert_eq!(h.counts, vec![3 * CELLS as u64]);
        assert_eq!(h.to_csv(), format!("visits,frequency\n0,{}\n", 3 * CELLS));
    }

    #[test]
    fn histogram_conserves_records() {
        let t = small_table();
        let h = histogram(&t);
        assert_eq!(h.total(), t.n_records() as u64);
        assert_eq!(h.counts[2], 1);
        assert_eq!(h.counts[3], 1);
        assert_eq!(h.max_visits(), 3);
    }

    #[test]
    fn experiment_is_reproducible_and_conserves_visits() {
        let puf = PufImage::<f64>::generate(5);
        let text = b"the quick brown fox jumps over the lazy dog";
        let pw = [7u8; 64];
        let a = run_visit_experiment(text, 10, &pw, &puf, TrnSource::Seeded(99), None).unwrap();
        let b = run_visit_experiment(text, 10, &pw, &puf, TrnSource::Seeded(99), None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_trials_per_run(), 2 * text.len() as u32);
        assert_eq!(a.n_records(), 10 * CELLS);
        for run in 1..=10 {
            assert_eq!(a.run_counts(run).iter().sum::<u32>(), 2 * text.len() as u32);
        }
        let c = run_visit_experiment(text, 10, &pw, &puf, TrnSource::Seeded(100), None).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn entropy_runs_conserve() {
        let puf = PufImage::<f64>::generate(5);
        let t = run_visit_experiment(b"abc", 4, &[1u8; 64], &puf, TrnSource::Entropy, None).unwrap();
        assert_eq!(t.n_trials_per_run(), 6);
    }

    #[test]
    fn synthetic_counts_sum() {
        let t = synthetic_visits(3, 480, &vec![1.0; CELLS], 1).unwrap();
        assert_eq!(t.n_trials_per_run(), 480);
        assert_eq!(t.pooled().iter().sum::<u64>(), 3 * 480);
    }
}
