//! The `kpuf` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::attack::{self, LanguageProfile};
use crate::cipher::{self, Ciphertext};
use crate::digest::{self, Trn, PASSWORD_LEN};
use crate::error::{Error, Result};
use crate::experiment::{self, TrnSource, VisitTable};
use crate::keccak::{self, Sha3_512};
use crate::puf::PufImage;
use crate::stats::{self, loo, screen, Level, McmcSettings, ModelSpec, ModelVariant};

const DEFAULT_SEED: u64 = 1;

#[derive(Parser, Debug)]
#[command(name = "kpuf", version, about = "ReRAM PUF keyless encryption and cell-visit analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a PUF image and write it as CSV (plus a .meta sidecar).
    Genpuf {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encrypt a file.
    Encrypt(CryptArgs),
    /// Decrypt a ciphertext file (binary or hex).
    Decrypt(CryptArgs),
    /// Encrypt a plaintext once per run and record cell visits.
    Experiment(ExperimentArgs),
    /// Fit a mixed model to a visit table and write the posterior summary.
    Fit(FitArgs),
    /// Fit all three model variants and compare their predictive accuracy.
    Compare(FitArgs),
    /// Screen cell effects by credible interval; writes CSV and SVG.
    Screen(FitArgs),
    /// Frequency analysis against substitution and keyless ciphertexts.
    Attack(AttackArgs),
    /// Run hash known-answer tests and oracle checks.
    Selftest,
}

#[derive(Args, Debug)]
struct CryptArgs {
    input: PathBuf,
    #[arg(long)]
    puf: PathBuf,
    #[arg(long)]
    password_file: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Replayable TRN derived from this seed (encrypt only).
    #[arg(long, conflicts_with = "entropy")]
    seed: Option<u64>,
    /// Draw the TRN from the operating system (the default when no seed).
    #[arg(long)]
    entropy: bool,
    #[arg(long)]
    rotations: Option<u16>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Plaintext file; defaults to the bundled English sample.
    plaintext: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 240)]
    chars: usize,
    #[arg(long)]
    rotations: Option<u16>,
    #[arg(long)]
    puf: Option<PathBuf>,
    #[arg(long)]
    password_file: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    entropy: bool,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Both,
    Cell,
    None,
}

impl From<ModelArg> for ModelVariant {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Both => ModelVariant::BothEffects,
            ModelArg::Cell => ModelVariant::CellOnly,
            ModelArg::None => ModelVariant::InterceptOnly,
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Visit CSV written by `experiment`.
    visits: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    model: ModelArg,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    /// Sweeps per chain; the first half is warmup.
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["80", "95"], default_value = "95")]
    level: String,
    /// Cells shown in the SVG plot.
    #[arg(long, default_value_t = 50)]
    cells: usize,
    /// Output file (`fit`, `compare`) or directory (`screen`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AttackArgs {
    /// Plaintext file; defaults to the bundled English sample.
    plaintext: Option<PathBuf>,
    /// Characters of normalized plaintext to attack (default: all of it).
    #[arg(long)]
    chars: Option<usize>,
    /// Keyless encryptions of the plaintext, each with fresh TRNs.
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long)]
    puf: Option<PathBuf>,
    #[arg(long)]
    password_file: Option<PathBuf>,
    /// Letter frequency CSV (`letter,frequency`).
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// Independent 64-bit seed for one named purpose, derived from the master
/// seed: the first eight bytes (little endian) of
/// SHA3-512(`"kpuf/seed/v1/" ‖ label ‖ seed_le`).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha3_512::new();
    h.update(b"kpuf/seed/v1/");
    h.update(label.as_bytes());
    h.update(&seed.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Reads a password file: 64 raw bytes, or 128 hex digits with optional
/// surrounding whitespace.
pub fn read_password(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    if bytes.len() == PASSWORD_LEN {
        return Ok(bytes);
    }
    let text = String::from_utf8_lossy(&bytes);
    let t = text.trim();
    if t.len() == 2 * PASSWORD_LEN {
        if let Ok(v) = hex::decode(t) {
            return Ok(v);
        }
    }
    Err(Error::Format(format!(
        "{}: password file must hold {PASSWORD_LEN} raw bytes or {} hex digits",
        path.display(),
        2 * PASSWORD_LEN
    )))
}

fn seeded_password(seed: u64) -> Vec<u8> {
    digest::seeded_trn(derive_seed(seed, "password"), 0).to_vec()
}

fn load_or_generate_puf(path: Option<&Path>, seed: u64) -> Result<PufImage<f64>> {
    match path {
        Some(p) => PufImage::load(p),
        None => Ok(PufImage::generate(derive_seed(seed, "puf"))),
    }
}

fn password_or_seeded(path: Option<&Path>, seed: u64) -> Result<Vec<u8>> {
    match path {
        Some(p) => read_password(p),
        None => Ok(seeded_password(seed)),
    }
}

/// Plaintext for experiments: the file's bytes (or the normalized bundled
/// sample) repeated to exactly `chars` characters.
fn plaintext_of_length(path: Option<&Path>, chars: usize) -> Result<Vec<u8>> {
    let source = match path {
        Some(p) => fs::read(p)?,
        None => attack::normalize_text(attack::ENGLISH_SAMPLE),
    };
    if source.is_empty() && chars > 0 {
        return Err(Error::domain("plaintext is empty"));
    }
    Ok(source.iter().copied().cycle().take(chars).collect())
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, contents.as_bytes()),
        None => {
            std::io::stdout().write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}

fn mcmc_settings(args: &FitArgs) -> Result<McmcSettings> {
    if args.iters < 2 {
        return Err(Error::domain("--iters must be at least 2"));
    }
    Ok(McmcSettings {
        chains: args.chains,
        warmup: args.iters / 2,
        draws: args.iters - args.iters / 2,
        seed: derive_seed(args.seed.unwrap_or(DEFAULT_SEED), "mcmc"),
        ..Default::default()
    })
}

fn cmd_genpuf(seed: Option<u64>, out: &Path) -> Result<()> {
    let puf = PufImage::<f64>::generate(seed.unwrap_or(DEFAULT_SEED));
    puf.save(out)?;
    eprintln!("wrote {} ({})", out.display(), puf.id());
    Ok(())
}

fn cmd_encrypt(a: &CryptArgs) -> Result<()> {
    let puf = PufImage::<f64>::load(&a.puf)?;
    let password = read_password(&a.password_file)?;
    let plaintext = fs::read(&a.input)?;
    let trn: Trn = match a.seed {
        Some(s) if !a.entropy => digest::seeded_trn(derive_seed(s, "trn"), 0),
        _ => digest::fresh_trn()?,
    };
    let ct = cipher::encrypt_with(&plaintext, &password, &trn, &puf, a.rotations, |_, _| {})?;
    write_file(&a.out, &ct.to_bytes())
}

fn cmd_decrypt(a: &CryptArgs) -> Result<()> {
    let puf = PufImage::<f64>::load(&a.puf)?;
    let password = read_password(&a.password_file)?;
    let ct = Ciphertext::decode_any(&fs::read(&a.input)?)?;
    let plaintext = cipher::decrypt(&ct, &password, &puf)?;
    write_file(&a.out, &plaintext)
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<()> {
    let seed = a.seed.unwrap_or(DEFAULT_SEED);
    let puf = load_or_generate_puf(a.puf.as_deref(), seed)?;
    let password = password_or_seeded(a.password_file.as_deref(), seed)?;
    let plaintext = plaintext_of_length(a.plaintext.as_deref(), a.chars)?;
    let trns = if a.entropy {
        TrnSource::Entropy
    } else {
        TrnSource::Seeded(derive_seed(seed, "trn"))
    };
    let table = experiment::run_visit_experiment(&plaintext, a.runs, &password, &puf, trns, a.rotations)?;
    fs::create_dir_all(&a.out)?;
    table.save(&a.out.join("visits.csv"))?;
    let hist = experiment::histogram(&table);
    write_file(&a.out.join("histogram.csv"), hist.to_csv().as_bytes())?;
    let chi = stats::chi_square_uniformity(&table)?;
    eprintln!(
        "{} runs x {} visits; max visits {}; chi-square {:.1} on {} dof, p = {:.4}{}",
        table.n_runs(),
        table.n_trials_per_run(),
        hist.max_visits(),
        chi.statistic,
        chi.dof,
        chi.p_value,
        if chi.low_expected { " (expected counts below 5)" } else { "" }
    );
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let table = VisitTable::load(&a.visits)?;
    let fit = stats::fit_glmm::<f64>(&table, &ModelSpec::new(a.model.into()), &mcmc_settings(a)?)?;
    emit(a.out.as_deref(), &screen::summary_csv(&screen::summarize(&fit)))
}

fn cmd_compare(a: &FitArgs) -> Result<()> {
    let table = VisitTable::load(&a.visits)?;
    let settings = mcmc_settings(a)?;
    let fits = ModelVariant::ALL
        .iter()
        .map(|&v| stats::fit_glmm::<f64>(&table, &ModelSpec::new(v), &settings))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = fits.iter().collect();
    let cmp = loo::compare_models(&refs)?;
    for r in &cmp.rows {
        eprintln!("{}: {} (max pareto k {:.2})", r.model, r.method.name(), r.max_k);
    }
    emit(a.out.as_deref(), &cmp.to_csv())
}

fn cmd_screen(a: &FitArgs) -> Result<()> {
    let level = Level::from_percent(a.level.parse().unwrap_or(0)).ok_or_else(|| Error::domain("level must be 80 or 95"))?;
    let table = VisitTable::load(&a.visits)?;
    let variant: ModelVariant = a.model.into();
    if !variant.has_cell() {
        return Err(Error::domain("the 'none' model has no cell effects to screen"));
    }
    let fit = stats::fit_glmm::<f64>(&table, &ModelSpec::new(variant), &mcmc_settings(a)?)?;
    let s = stats::screen_cell_effects(&fit, level)?;
    let dir = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    write_file(&dir.join("screen.csv"), s.to_csv().as_bytes())?;
    write_file(&dir.join("screen.svg"), s.to_svg(a.cells).as_bytes())?;
    eprintln!(
        "{} of {} cells flagged at {}%",
        s.n_flagged(),
        s.cells.len(),
        level.percent()
    );
    Ok(())
}

fn cmd_attack(a: &AttackArgs) -> Result<()> {
    let seed = a.seed.unwrap_or(DEFAULT_SEED);
    let profile = match &a.profile {
        Some(p) => LanguageProfile::load(p)?,
        None => LanguageProfile::english(),
    };
    let source = match &a.plaintext {
        Some(p) => String::from_utf8_lossy(&fs::read(p)?).into_owned(),
        None => attack::ENGLISH_SAMPLE.to_string(),
    };
    let text: Vec<u8> = attack::normalize_text(&source)
        .into_iter()
        .take(a.chars.unwrap_or(usize::MAX))
        .collect();
    if text.is_empty() {
        return Err(Error::domain("plaintext has no letters"));
    }
    let puf = load_or_generate_puf(a.puf.as_deref(), seed)?;
    let password = password_or_seeded(a.password_file.as_deref(), seed)?;

    let baseline_ct = attack::mono_substitution_encrypt(&text, derive_seed(seed, "substitution"));
    let baseline = attack::frequency_attack(&baseline_ct, &profile, &text)?;
    let stream = attack::protocol_stream(&text, &password, &puf, a.runs, derive_seed(seed, "attack-trn"))?;
    let protocol = attack::frequency_attack(&stream.units, &profile, &stream.truth)?;
    let raw_ic = attack::index_of_coincidence(&stream.raw)?;

    fs::create_dir_all(&a.out)?;
    write_file(&a.out.join("baseline.csv"), baseline.to_csv().as_bytes())?;
    write_file(&a.out.join("protocol.csv"), protocol.to_csv().as_bytes())?;
    let mut report = baseline.to_text("monoalphabetic substitution");
    report.push('\n');
    report.push_str(&protocol.to_text("keyless protocol (one unit per character)"));
    report.push_str(&format!("  raw 16-bit IoC     {raw_ic:.6e}\n\n"));
    report.push_str(&format!(
        "recovery gap {:.4}\n",
        baseline.recovery_rate - protocol.recovery_rate
    ));
    write_file(&a.out.join("report.txt"), report.as_bytes())?;
    print!("{report}");
    Ok(())
}

fn cmd_selftest() -> Result<()> {
    let mut failures = Vec::new();
    let bad = keccak::run_known_answers();
    for v in keccak::KNOWN_ANSWERS {
        let ok = !bad.contains(&v.name);
        println!("{} sha3-512 {}", if ok { "PASS" } else { "FAIL" }, v.name);
    }
    failures.extend(bad.iter().map(|n| n.to_string()));

    let mut check = |name: &str, ok: bool| {
        println!("{} {}", if ok { "PASS" } else { "FAIL" }, name);
        if !ok {
            failures.push(name.to_string());
        }
    };
    let caps = [16, 32, 64].map(cipher::capacity);
    check("capacity 240/481/963", caps == [240, 481, 963]);
    let p0: f64 = stats::binomial_pmf(480, 1.0 / 1024.0, 0)?;
    check("binomial pmf (480, 1/1024, 0)", (p0 - 0.625_640_702_105_690_7).abs() < 1e-12);
    let total: f64 = (0..=480).map(|k| stats::binomial_pmf(480, 1.0 / 1024.0, k)).sum::<Result<f64>>()?;
    check("binomial normalization", (total - 1.0).abs() < 1e-10);
    let puf = PufImage::<f64>::generate(derive_seed(DEFAULT_SEED, "selftest"));
    check("generated image decodable", puf.validate_decodability().is_empty());
    let pw = seeded_password(DEFAULT_SEED);
    let msg = b"selftest round trip";
    let ct = cipher::encrypt(msg, &pw, &digest::seeded_trn(7, 7), &puf)?;
    check("encrypt/decrypt round trip", cipher::decrypt(&ct, &pw, &puf)? == msg);

    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Domain(format!("self-test failures: {}", failures.join(", "))))
    }
}

fn configure_threads() -> Result<()> {
    let Some(v) = std::env::var_os("KPUF_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Environment(format!("KPUF_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Environment(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Genpuf { seed, out } => cmd_genpuf(*seed, out),
        Command::Encrypt(a) => cmd_encrypt(a),
        Command::Decrypt(a) => cmd_decrypt(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Screen(a) => cmd_screen(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Selftest => cmd_selftest(),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 on a domain error, 2 on a usage
/// error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("ERROR:usage: {first}");
            eprint!("{}", e.render());
            return 2;
        }
        Err(e) => {
            print!("{e}");
            return 0;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ERROR:{}: {e}", e.category());
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(1, "puf"), derive_seed(1, "trn"));
        assert_ne!(derive_seed(1, "puf"), derive_seed(2, "puf"));
        assert_eq!(derive_seed(1, "puf"), derive_seed(1, "puf"));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["kpuf", "frobnicate"]), 2);
        assert_eq!(run(["kpuf", "genpuf", "--bogus"]), 2);
        assert_eq!(run(["kpuf", "fit", "x.csv", "--level", "90"]), 2);
        assert_eq!(run(["kpuf", "--help"]), 0);
    }

    #[test]
    fn password_formats() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw");
        fs::write(&raw, [3u8; 64]).unwrap();
        assert_eq!(read_password(&raw).unwrap(), vec![3u8; 64]);
        let hexed = dir.path().join("hex");
        fs::write(&hexed, format!("{}\n", "ab".repeat(64))).unwrap();
        assert_eq!(read_password(&hexed).unwrap(), vec![0xab; 64]);
        let short = dir.path().join("short");
        fs::write(&short, b"hunter2").unwrap();
        assert!(matches!(read_password(&short), Err(Error::Format(_))));
    }

    #[test]
    fn plaintext_cycles() {
        let p = plaintext_of_length(None, 20_000).unwrap();
        assert_eq!(p.len(), 20_000);
        assert!(p.iter().all(|b| b.is_ascii_lowercase() || *b == b' '));
    }
}
