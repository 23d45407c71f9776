//! Command-line front end for the mildkit toolkit.
//!
//! Exit codes: 0 — all checks pass; 1 — a mathematically meaningful check
//! failed (negative margin, coverage gap, count mismatch); 2 — usage,
//! configuration, or precondition error. I/O problems are never reported
//! as 1.
//!
//! All rationals are written `p/q` (decimals are rejected). Reports are
//! JSON by default; `--format csv` emits flat
//! `alpha,epsilon,chart_id,component,n,sup,bound,margin` rows where the
//! subcommand produces sweep data. JSON reports carry a `timestamp` field
//! (unix seconds) unless `--deterministic` is given, under which output is
//! byte-identical across reruns of the same configuration.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mildkit::faadibruno::{enumerate_ps, partitions_univariate, MultiIndex};
use mildkit::hpreal::HPReal;
use mildkit::mildness::{
    check_expmild, check_umild, fit_constants, gf_check, p_alpha_cert, verify_cert, BoundReport,
    GridSpec, MildCert, PolyFamily,
};
use mildkit::parametrize::{
    nonuniformity_probe, verify_family, yomdin_family, yomdin_family_with_cert, Chart,
    FamilyParam,
};
use mildkit::ratcalc::{ratio_from_string, ratio_to_string, Alpha, ExpPoly, FnKind};
use mildkit::scalar::Scalar;
use num_rational::BigRational;
use serde_json::{json, Value};

/// Decimal digits in CLI-rendered reals (matches library reports).
const DIGITS: usize = 40;

#[derive(Parser)]
#[command(
    name = "mildkit",
    version,
    about = "Exact derivative calculus and factorial-growth certification \
             for exp-monomial functions"
)]
struct Cli {
    /// INI-style key=value file supplying defaults (flags win). Keys:
    /// alpha, nmax, grid, prec, epsilon, samples, kmax, format, output.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Suppress the timestamp field so identical configurations produce
    /// byte-identical reports.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Write the report to this path instead of standard output.
    #[arg(long, global = true, value_name = "FILE")]
    output: Option<PathBuf>,

    /// Report format (csv only where a subcommand produces sweep rows).
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Differentiate a built-in exp-monomial function exactly; or, with
    /// --faa, dump a chain-rule index enumeration.
    Derive(DeriveArgs),
    /// Sweep-verify a growth certificate for P_alpha(x) = exp(1 - x^-alpha).
    Certify(CertifyArgs),
    /// Fit growth constants (A, B) for P_alpha at a chosen exponent C.
    Fit(FitArgs),
    /// Exact checks of the weighted-derivative identity and the boundary
    /// maximum closed form.
    CheckLemmas(CheckLemmasArgs),
    /// Exact generating-function cross-check of the composition constants.
    GfCheck(GfCheckArgs),
    /// Build the three-chart parametrization of x y = eps^2 and check
    /// coverage (JSON) or certificate margins (--csv).
    Parametrize(ParametrizeArgs),
    /// Fit per-epsilon growth rates of the naive affine chart of the same
    /// curve, demonstrating their 1/eps blow-up.
    ProbeNonuniform(ProbeArgs),
    /// Time the combinatorial kernels and validate their counts.
    Bench(BenchArgs),
}

#[derive(Args)]
struct DeriveArgs {
    /// Exponent parameter, p/q > 0.
    #[arg(long)]
    alpha: Option<String>,
    /// Derivative order.
    #[arg(long, default_value_t = 1)]
    order: usize,
    /// Function to differentiate.
    #[arg(long = "fn", value_enum, default_value = "palpha")]
    func: DeriveFn,
    /// Dump the chain-rule index set for --nu against --lambda instead.
    #[arg(long, requires = "nu", requires = "lambda")]
    faa: bool,
    /// Input multi-index, comma-separated (with --faa).
    #[arg(long, value_name = "N,N,...")]
    nu: Option<String>,
    /// Intermediate multi-index, comma-separated (with --faa).
    #[arg(long, value_name = "N,N,...")]
    lambda: Option<String>,
}

#[derive(Copy, Clone, ValueEnum)]
enum DeriveFn {
    /// exp(1 - x^-alpha)
    Palpha,
    /// 1 - x^-alpha
    Ualpha,
}

#[derive(Args)]
struct CertifyArgs {
    /// Exponent parameter, p/q > 0.
    #[arg(long)]
    alpha: Option<String>,
    /// Highest derivative order to verify.
    #[arg(long)]
    nmax: Option<usize>,
    /// Grid density per axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Working precision in bits.
    #[arg(long)]
    prec: Option<u32>,
    /// Certificate to verify instead of the built-in one, as
    /// "A=p/q,B=p/q,C=p/q".
    #[arg(long, value_name = "A=..,B=..,C=..")]
    cert: Option<String>,
}

#[derive(Args)]
struct FitArgs {
    /// Exponent parameter, p/q > 0.
    #[arg(long)]
    alpha: Option<String>,
    /// Factorial exponent C to fit under (default 1/alpha).
    #[arg(long)]
    c: Option<String>,
    /// Highest derivative order used by the fit.
    #[arg(long)]
    nmax: Option<usize>,
    /// Grid density per axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Working precision in bits.
    #[arg(long)]
    prec: Option<u32>,
}

#[derive(Args)]
struct CheckLemmasArgs {
    /// Exponent parameter, p/q > 0.
    #[arg(long)]
    alpha: Option<String>,
    /// Highest order for the weighted-derivative identity.
    #[arg(long)]
    kmax: Option<usize>,
}

#[derive(Args)]
struct GfCheckArgs {
    /// Outer growth rate A_f as p/q; omit all four to run the built-in
    /// {1/2, 1, 2}^4 lattice.
    #[arg(long)]
    af: Option<String>,
    /// Outer magnitude B_f as p/q.
    #[arg(long)]
    bf: Option<String>,
    /// Inner growth rate A_g as p/q.
    #[arg(long)]
    ag: Option<String>,
    /// Inner magnitude B_g as p/q.
    #[arg(long)]
    bg: Option<String>,
    /// Highest derivative order compared.
    #[arg(long)]
    nmax: Option<usize>,
}

#[derive(Args)]
struct ParametrizeArgs {
    /// Exponent parameter, p/q >= 1.
    #[arg(long)]
    alpha: Option<String>,
    /// Curve parameters, comma-separated p/q values in (0, 1).
    #[arg(long, value_delimiter = ',')]
    epsilon: Vec<String>,
    /// Highest derivative order (fit and sweeps).
    #[arg(long)]
    nmax: Option<usize>,
    /// Grid density per axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Working precision in bits.
    #[arg(long)]
    prec: Option<u32>,
    /// Coverage samples per epsilon.
    #[arg(long)]
    samples: Option<usize>,
    /// Emit per-(epsilon, order) sup/bound/margin CSV rows (shorthand for
    /// --format csv).
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct ProbeArgs {
    /// Curve parameters, comma-separated p/q values in (0, 1); default
    /// 2^-2, 2^-4, ..., 2^-20.
    #[arg(long, value_delimiter = ',')]
    epsilon: Vec<String>,
    /// Highest derivative order used by the per-epsilon fits (the grid's
    /// smallest epsilon needs about |log2 eps| + 4 orders to exhibit the
    /// full blow-up).
    #[arg(long)]
    nmax: Option<usize>,
    /// Grid density per axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Working precision in bits.
    #[arg(long)]
    prec: Option<u32>,
}

#[derive(Args)]
struct BenchArgs {
    /// Partition-term table size.
    #[arg(long, default_value_t = 40)]
    pmax: usize,
    /// Total order of the two-variable chain-rule enumeration.
    #[arg(long, default_value_t = 12)]
    nu_order: usize,
    /// Order of the repeated symbolic differentiation.
    #[arg(long, default_value_t = 30)]
    diff_order: usize,
    /// Exponent parameter for the differentiation task, p/q > 0.
    #[arg(long)]
    alpha: Option<String>,
}

// ---------------------------------------------------------------------------
// Config resolution
// ---------------------------------------------------------------------------

const CONFIG_KEYS: &[&str] = &[
    "alpha", "nmax", "grid", "prec", "epsilon", "samples", "kmax", "format", "output",
];

struct Ctx {
    cfg: HashMap<String, String>,
    deterministic: bool,
    output: Option<PathBuf>,
    format: Format,
}

impl Ctx {
    fn new(cli: &Cli) -> anyhow::Result<Self> {
        let mut cfg = HashMap::new();
        if let Some(path) = &cli.config {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    anyhow!("config line {} is not key=value: {line:?}", lineno + 1)
                })?;
                let key = key.trim();
                if !CONFIG_KEYS.contains(&key) {
                    bail!(
                        "unknown config key {key:?} on line {} (known: {})",
                        lineno + 1,
                        CONFIG_KEYS.join(", ")
                    );
                }
                cfg.insert(key.to_string(), value.trim().to_string());
            }
        }
        let format = match &cli.format {
            Some(f) => *f,
            None => match cfg.get("format").map(String::as_str) {
                None | Some("json") => Format::Json,
                Some("csv") => Format::Csv,
                Some(other) => bail!("config format must be json or csv, got {other:?}"),
            },
        };
        let output = cli
            .output
            .clone()
            .or_else(|| cfg.get("output").map(PathBuf::from));
        Ok(Ctx { cfg, deterministic: cli.deterministic, output, format })
    }

    fn usize_opt(&self, flag: Option<usize>, key: &str) -> anyhow::Result<Option<usize>> {
        if flag.is_some() {
            return Ok(flag);
        }
        self.cfg
            .get(key)
            .map(|v| v.parse().map_err(|_| anyhow!("config {key}={v:?} is not an integer")))
            .transpose()
    }

    fn usize_or(&self, flag: Option<usize>, key: &str, default: usize) -> anyhow::Result<usize> {
        Ok(self.usize_opt(flag, key)?.unwrap_or(default))
    }

    fn prec_or(&self, flag: Option<u32>, default: u32) -> anyhow::Result<u32> {
        if let Some(p) = flag {
            return Ok(p);
        }
        match self.cfg.get("prec") {
            Some(v) => v.parse().map_err(|_| anyhow!("config prec={v:?} is not an integer")),
            None => Ok(default),
        }
    }

    fn alpha(&self, flag: &Option<String>) -> anyhow::Result<Alpha> {
        let s = flag
            .as_deref()
            .or_else(|| self.cfg.get("alpha").map(String::as_str))
            .unwrap_or("1");
        Ok(Alpha::new(ratio_from_string(s)?)?)
    }

    fn epsilons(&self, flag: &[String], default: &[BigRational]) -> anyhow::Result<Vec<BigRational>> {
        let from_cfg;
        let strings: Vec<&str> = if !flag.is_empty() {
            flag.iter().map(String::as_str).collect()
        } else if let Some(v) = self.cfg.get("epsilon") {
            from_cfg = v.clone();
            from_cfg.split(',').map(str::trim).collect()
        } else {
            return Ok(default.to_vec());
        };
        strings.iter().map(|s| Ok(ratio_from_string(s)?)).collect()
    }

    fn emit_json(&self, mut report: Value) -> anyhow::Result<()> {
        if !self.deterministic {
            if let Some(map) = report.as_object_mut() {
                map.insert("timestamp".into(), Value::from(unix_now()));
            }
        }
        self.write_out(&(serde_json::to_string_pretty(&report)? + "\n"))
    }

    fn emit_csv(&self, rows: &[CsvRow]) -> anyhow::Result<()> {
        let mut text = String::from("alpha,epsilon,chart_id,component,n,sup,bound,margin\n");
        for r in rows {
            writeln!(
                text,
                "{},{},{},{},{},{},{},{}",
                r.alpha, r.epsilon, r.chart_id, r.component, r.n, r.sup, r.bound, r.margin
            )
            .expect("string write");
        }
        self.write_out(&text)
    }

    fn write_out(&self, text: &str) -> anyhow::Result<()> {
        match &self.output {
            Some(path) => fs::write(path, text)
                .with_context(|| format!("cannot write {}", path.display())),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

struct CsvRow {
    alpha: String,
    epsilon: String,
    chart_id: String,
    component: String,
    n: String,
    sup: String,
    bound: String,
    margin: String,
}

// ---------------------------------------------------------------------------
// Entry
// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = match Ctx::new(&cli) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match dispatch(&cli.command, &ctx) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: &Command, ctx: &Ctx) -> anyhow::Result<bool> {
    match command {
        Command::Derive(args) => run_derive(args, ctx),
        Command::Certify(args) => run_certify(args, ctx),
        Command::Fit(args) => run_fit(args, ctx),
        Command::CheckLemmas(args) => run_check_lemmas(args, ctx),
        Command::GfCheck(args) => run_gf_check(args, ctx),
        Command::Parametrize(args) => run_parametrize(args, ctx),
        Command::ProbeNonuniform(args) => run_probe(args, ctx),
        Command::Bench(args) => run_bench(args, ctx),
    }
}

fn require_json(ctx: &Ctx, what: &str) -> anyhow::Result<()> {
    if ctx.format == Format::Csv {
        bail!("{what} has no CSV form; use the default JSON format");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// derive
// ---------------------------------------------------------------------------

fn run_derive(args: &DeriveArgs, ctx: &Ctx) -> anyhow::Result<bool> {
    require_json(ctx, "derive output")?;
    if args.faa {
        let nu = MultiIndex::new(parse_index_list(args.nu.as_deref().unwrap())?);
        let lambda = MultiIndex::new(parse_index_list(args.lambda.as_deref().unwrap())?);
        let tuples = enumerate_ps(&nu, &lambda);
        let report = json!({
            "nu": nu.entries(),
            "lambda": lambda.entries(),
            "tuples": tuples.iter().map(|t| json!({
                "s": t.s,
                "ks": t.ks.iter().map(|k| k.entries().to_vec()).collect::<Vec<_>>(),
                "ls": t.ls.iter().map(|l| l.entries().to_vec()).collect::<Vec<_>>(),
                "coeff": ratio_to_string(&t.coeff),
            })).collect::<Vec<_>>(),
        });
        // The enumeration dump is a fixed interchange object; no timestamp.
        ctx.write_out(&(serde_json::to_string_pretty(&report)? + "\n"))?;
        return Ok(true);
    }
    let alpha = ctx.alpha(&args.alpha)?;
    let kind = match args.func {
        DeriveFn::Palpha => FnKind::PAlpha,
        DeriveFn::Ualpha => FnKind::UAlpha,
    };
    let poly = ExpPoly::construct(kind, 1, alpha)?;
    let derivative = poly.derivative_multi(&[args.order])?;
    // The interchange object verbatim; no timestamp.
    ctx.write_out(&(derivative.to_json() + "\n"))?;
    Ok(true)
}

fn parse_index_list(s: &str) -> anyhow::Result<Vec<usize>> {
    s.split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| anyhow!("multi-index entry {part:?} is not a nonnegative integer"))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// certify / fit
// ---------------------------------------------------------------------------

fn parse_cert(s: &str) -> anyhow::Result<MildCert> {
    let mut parts = HashMap::new();
    for item in s.split(',') {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("certificate item {item:?} is not KEY=p/q"))?;
        if parts.insert(k.trim().to_uppercase(), ratio_from_string(v)?).is_some() {
            bail!("duplicate certificate key {k:?}");
        }
    }
    let mut take = |k: &str| {
        parts
            .remove(k)
            .ok_or_else(|| anyhow!("certificate is missing {k} (need A=..,B=..,C=..)"))
    };
    let (a, b, c) = (take("A")?, take("B")?, take("C")?);
    if let Some(extra) = parts.into_keys().next() {
        bail!("unknown certificate key {extra:?}");
    }
    Ok(MildCert::mild(Scalar::from_ratio(a), Scalar::from_ratio(b), c)?)
}

fn report_value(report: &BoundReport) -> anyhow::Result<Value> {
    Ok(serde_json::from_str(&report.to_json())?)
}

fn report_csv_rows(
    report: &BoundReport,
    alpha: &Alpha,
    epsilon: &str,
    chart_id: &str,
    component: usize,
    rows: &mut Vec<CsvRow>,
) {
    for order in &report.orders {
        rows.push(CsvRow {
            alpha: ratio_to_string(alpha.value()),
            epsilon: epsilon.to_string(),
            chart_id: chart_id.to_string(),
            component: component.to_string(),
            n: order.nu.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("+"),
            sup: order.sup.to_decimal_string(DIGITS),
            bound: order.bound.to_decimal_string(DIGITS),
            margin: order.margin.to_decimal_string(DIGITS),
        });
    }
}

fn run_certify(args: &CertifyArgs, ctx: &Ctx) -> anyhow::Result<bool> {
    let alpha = ctx.alpha(&args.alpha)?;
    let n_max = ctx.usize_or(args.nmax, "nmax", 15)?;
    let grid_points = ctx.usize_or(args.grid, "grid", 512)?;
    let prec = ctx.prec_or(args.prec, 256)?;
    let cert = match &args.cert {
        Some(s) => parse_cert(s)?,
        None => p_alpha_cert(&alpha)?,
    };
    let family = PolyFamily::new(ExpPoly::construct(FnKind::PAlpha, 1, alpha.clone())?);
    let grid = GridSpec::standard(grid_points, prec);
    let report = verify_cert(&family, &cert, n_max, &grid)?;
    if ctx.format == Format::Csv {
        let mut rows = Vec::new();
        report_csv_rows(&report, &alpha, "", "", 0, &mut rows);
        ctx.emit_csv(&rows)?;
    } else {
        ctx.emit_json(report_value(&report)?)?;
    }
    Ok(report.pass)
}

fn run_fit(args: &FitArgs, ctx: &Ctx) -> anyhow::Result<bool> {
    require_json(ctx, "fit output")?;
    let alpha = ctx.alpha(&args.alpha)?;
    let c = match &args.c {
        Some(s) => ratio_from_string(s)?,
        None => BigRational::from_integer(1.into()) / alpha.value(),
    };
    let n_max = ctx.usize_or(args.nmax, "nmax", 15)?;
    let grid_points = ctx.usize_or(args.grid, "grid", 512)?;
    let prec = ctx.prec_or(args.prec, 256)?;
    let family = PolyFamily::new(ExpPoly::construct(FnKind::PAlpha, 1, alpha)?);
    let grid = GridSpec::standard(grid_points, prec);
    let fit = fit_constants(&family, &c, n_max, &grid)?;
    let cert = fit.cert()?;
    let verify = verify_cert(&family, &cert, n_max, &grid)?;
    let report = json!({
        "c": ratio_to_string(&fit.c_assumed),
        "a_fitted": fit.a_fitted.to_decimal_string(DIGITS),
        "b_fitted": fit.b_fitted.to_decimal_string(DIGITS),
        "n_max": fit.n_max,
        "cert": cert.to_json_value(),
        "verify": report_value(&verify)?,
    });
    ctx.emit_json(report)?;
    Ok(verify.pass)
}

// ---------------------------------------------------------------------------
// check-lemmas / gf-check
// ---------------------------------------------------------------------------

fn run_check_lemmas(args: &CheckLemmasArgs, ctx: &Ctx) -> anyhow::Result<bool> {
    require_json(ctx, "check-lemmas output")?;
    let alpha = ctx.alpha(&args.alpha)?;
    let k_max = ctx.usize_or(args.kmax, "kmax", 30)?;

    let umild = check_umild(&alpha, k_max)?;
    let mut expmild_cases = Vec::new();
    let mut expmild_pass = true;
    let lattice = ["1/2", "1", "2", "4"].map(|s| ratio_from_string(s).expect("lattice rational"));
    for r in &lattice {
        for s in &lattice {
            let case = check_expmild(r, s, &alpha)?;
            expmild_pass &= case.pass;
            expmild_cases.push(json!({
                "r": ratio_to_string(&case.r),
                "s": ratio_to_string(&case.s),
                "closed_max": case.closed_max.to_decimal_string(DIGITS),
                "numeric_max": case.numeric_max.to_decimal_string(DIGITS),
                "argmax": case.argmax.to_decimal_string(DIGITS),
                "rel_gap": case.rel_gap.to_decimal_string(DIGITS),
                "pass": case.pass,
            }));
        }
    }
    let pass = umild.all_pass && expmild_pass;
    let report = json!({
        "alpha": ratio_to_string(alpha.value()),
        "umild": {
            "rows": umild.rows.iter().map(|row| json!({
                "k": row.k,
                "rising": ratio_to_string(&row.rising),
                "bound": ratio_to_string(&row.bound),
                "pass": row.pass,
            })).collect::<Vec<_>>(),
            "all_pass": umild.all_pass,
        },
        "expmild": expmild_cases,
        "pass": pass,
    });
    ctx.emit_json(report)?;
    Ok(pass)
}

fn run_gf_check(args: &GfCheckArgs, ctx: &Ctx) -> anyhow::Result<bool> {
    require_json(ctx, "gf-check output")?;
    let n_max = ctx.usize_or(args.nmax, "nmax", 15)?;
    let given = [&args.af, &args.bf, &args.ag, &args.bg];
    let supplied = given.iter().filter(|v| v.is_some()).count();
    if supplied != 0 && supplied != 4 {
        bail!("gf-check needs either all of --af --bf --ag --bg or none (lattice mode)");
    }
    if supplied == 4 {
        let [af, bf, ag, bg] =
            given.map(|v| ratio_from_string(v.as_deref().unwrap()));
        let (af, bf, ag, bg) = (af?, bf?, ag?, bg?);
        let report = gf_check(&af, &bf, &ag, &bg, n_max)?;
        let value = json!({
            "af": ratio_to_string(&af),
            "bf": ratio_to_string(&bf),
            "ag": ratio_to_string(&ag),
            "bg": ratio_to_string(&bg),
            "rows": report.rows.iter().map(|row| json!({
                "n": row.n,
                "composed": ratio_to_string(&row.composed),
                "closed": ratio_to_string(&row.closed),
                "equal": row.equal,
            })).collect::<Vec<_>>(),
            "all_equal": report.all_equal,
        });
        ctx.emit_json(value)?;
        return Ok(report.all_equal);
    }
    // Lattice mode: every combination from {1/2, 1, 2}^4.
    let lattice = ["1/2", "1", "2"].map(|s| ratio_from_string(s).expect("lattice rational"));
    let mut cases = Vec::new();
    let mut all = true;
    for af in &lattice {
        for bf in &lattice {
            for ag in &lattice {
                for bg in &lattice {
                    let report = gf_check(af, bf, ag, bg, n_max)?;
                    all &= report.all_equal;
                    cases.push(json!({
                        "af": ratio_to_string(af),
                        "bf": ratio_to_string(bf),
                        "ag": ratio_to_string(ag),
                        "bg": ratio_to_string(bg),
                        "all_equal": report.all_equal,
                    }));
                }
            }
        }
    }
    let value = json!({
        "n_max": n_max,
        "cases": cases,
        "all_equal": all,
    });
    ctx.emit_json(value)?;
    Ok(all)
}

// ---------------------------------------------------------------------------
// parametrize / probe-nonuniform
// ---------------------------------------------------------------------------

fn chart_grid(chart: &Chart, grid_points: usize, prec: u32) -> GridSpec {
    GridSpec::on_box(vec![chart.sweep_interval()], grid_points, prec)
}

fn run_parametrize(args: &ParametrizeArgs, ctx: &Ctx) -> anyhow::Result<bool> {
    let alpha = ctx.alpha(&args.alpha)?;
    let default_eps = [ratio_from_string("1/4").expect("rational")];
    let epsilons = ctx.epsilons(&args.epsilon, &default_eps)?;
    let n_max = ctx.usize_or(args.nmax, "nmax", 15)?;
    let grid_points = ctx.usize_or(args.grid, "grid", 512)?;
    let prec = ctx.prec_or(args.prec, 256)?;
    let samples = ctx.usize_or(args.samples, "samples", 10_000)?;
    let csv = args.csv || ctx.format == Format::Csv;

    let fit_grid = GridSpec::standard(grid_points, prec);
    let family = yomdin_family(&alpha, &epsilons, n_max, &fit_grid)?;

    if csv {
        return parametrize_csv(&family, n_max, grid_points, prec, ctx);
    }

    let mut reports = Vec::new();
    let mut pass = true;
    for (eps, trio) in family.epsilons.iter().zip(&family.charts) {
        // Per-epsilon coverage over a single-member family with the shared
        // certificate.
        let single =
            yomdin_family_with_cert(&alpha, &[eps.clone()], family.uniform_cert.clone())?;
        let coverage = verify_family(&single, samples, prec)?;
        pass &= coverage.pass;
        reports.push(json!({
            "alpha": ratio_to_string(alpha.value()),
            "epsilon": ratio_to_string(eps),
            "charts": trio.iter().map(Chart::to_json_value).collect::<Vec<_>>(),
            "cert": family.uniform_cert.to_json_value(),
            "coverage": coverage.to_json_value(),
        }));
    }
    let value = if reports.len() == 1 {
        reports.pop().unwrap()
    } else {
        json!({
            "alpha": ratio_to_string(alpha.value()),
            "reports": reports,
        })
    };
    ctx.emit_json(value)?;
    Ok(pass)
}

fn parametrize_csv(
    family: &FamilyParam,
    n_max: usize,
    grid_points: usize,
    prec: u32,
    ctx: &Ctx,
) -> anyhow::Result<bool> {
    let mut rows = Vec::new();
    let mut pass = true;
    for (eps, trio) in family.epsilons.iter().zip(&family.charts) {
        // Each distinct component expression is swept once; duplicates
        // (the swapped chart mirrors the main one, the point chart repeats
        // its constant) reuse the computed report.
        let mut computed: HashMap<String, BoundReport> = HashMap::new();
        let eps_str = ratio_to_string(eps);
        for chart in trio {
            for idx in 0..2 {
                let key = chart.components[idx].to_json();
                if !computed.contains_key(&key) {
                    let fam = chart.component_family(idx)?;
                    let grid = chart_grid(chart, grid_points, prec);
                    let report = verify_cert(&fam, &family.uniform_cert, n_max, &grid)?;
                    pass &= report.pass;
                    computed.insert(key.clone(), report);
                }
                report_csv_rows(
                    &computed[&key],
                    &family.alpha,
                    &eps_str,
                    &chart.id.to_string(),
                    idx,
                    &mut rows,
                );
            }
        }
    }
    ctx.emit_csv(&rows)?;
    Ok(pass)
}

fn run_probe(args: &ProbeArgs, ctx: &Ctx) -> anyhow::Result<bool> {
    require_json(ctx, "probe-nonuniform output")?;
    let default_eps: Vec<BigRational> = (1..=10u32)
        .map(|k| ratio_from_string(&format!("1/{}", 1u64 << (2 * k))).expect("rational"))
        .collect();
    let epsilons = ctx.epsilons(&args.epsilon, &default_eps)?;
    let n_max = ctx.usize_or(args.nmax, "nmax", 24)?;
    let grid_points = ctx.usize_or(args.grid, "grid", 512)?;
    let prec = ctx.prec_or(args.prec, 256)?;
    let grid = GridSpec::standard(grid_points, prec);
    let rows = nonuniformity_probe(&epsilons, n_max, &grid)?;

    let half = ratio_from_string("1/2").expect("rational");
    let mut pass = true;
    let mut prev: Option<(BigRational, HPReal)> = None;
    let mut monotone = true;
    let mut row_values = Vec::new();
    for row in &rows {
        let threshold = HPReal::from_ratio(&(&half / &row.epsilon), prec);
        let meets = row.a_fitted.cmp_value(&threshold) != std::cmp::Ordering::Less;
        pass &= meets;
        if let Some((prev_eps, prev_a)) = &prev {
            // A larger epsilon must not out-grow a smaller one.
            if &row.epsilon < prev_eps
                && row.a_fitted.cmp_value(prev_a) == std::cmp::Ordering::Less
            {
                monotone = false;
            }
        }
        prev = Some((row.epsilon.clone(), row.a_fitted.clone()));
        row_values.push(json!({
            "epsilon": ratio_to_string(&row.epsilon),
            "a_fitted": row.a_fitted.to_decimal_string(DIGITS),
            "n_max": row.n_max,
            "meets_half_over_eps": meets,
        }));
    }
    pass &= monotone;
    let value = json!({
        "rows": row_values,
        "monotone_in_inverse_epsilon": monotone,
        "pass": pass,
    });
    ctx.emit_json(value)?;
    Ok(pass)
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

/// `p(n)` by the pentagonal-number recurrence; oracle for the partition
/// table size.
fn partition_number(n: usize) -> u64 {
    let mut p = vec![0i128; n + 1];
    p[0] = 1;
    for i in 1..=n {
        let mut acc: i128 = 0;
        let mut k: i128 = 1;
        loop {
            let g1 = (k * (3 * k - 1) / 2) as usize;
            let g2 = (k * (3 * k + 1) / 2) as usize;
            if g1 > i && g2 > i {
                break;
            }
            let sign = if k % 2 == 1 { 1 } else { -1 };
            if g1 <= i {
                acc += sign * p[i - g1];
            }
            if g2 <= i {
                acc += sign * p[i - g2];
            }
            k += 1;
        }
        p[i] = acc;
    }
    p[n] as u64
}

fn run_bench(args: &BenchArgs, ctx: &Ctx) -> anyhow::Result<bool> {
    require_json(ctx, "bench output")?;
    let alpha = ctx.alpha(&args.alpha)?;
    let mut rows = Vec::new();
    let mut pass = true;

    // Partition table (first call in this process, so the memo is cold).
    let t0 = Instant::now();
    let terms = partitions_univariate(args.pmax)?;
    let millis = t0.elapsed().as_secs_f64() * 1e3;
    let expected = partition_number(args.pmax);
    let ok = terms.len() as u64 == expected;
    pass &= ok;
    rows.push(json!({
        "task": "partition_terms",
        "size": args.pmax,
        "count": terms.len(),
        "expected": expected,
        "millis": millis,
        "pass": ok,
    }));

    // Two-variable chain-rule index enumeration at total order nu_order,
    // summed over all intermediate orders.
    let nu = MultiIndex::new(vec![
        args.nu_order - args.nu_order / 2,
        args.nu_order / 2,
    ]);
    let t0 = Instant::now();
    let mut tuple_count = 0usize;
    for l in 1..=args.nu_order {
        tuple_count += enumerate_ps(&nu, &MultiIndex::new(vec![l])).len();
    }
    let millis = t0.elapsed().as_secs_f64() * 1e3;
    rows.push(json!({
        "task": "chain_rule_enumeration",
        "size": args.nu_order,
        "count": tuple_count,
        "expected": Value::Null,
        "millis": millis,
        "pass": true,
    }));

    // Repeated symbolic differentiation; the result stays canonical with
    // exactly one term per order.
    let poly = ExpPoly::construct(FnKind::PAlpha, 1, alpha)?;
    let t0 = Instant::now();
    let derivative = poly.derivative_multi(&[args.diff_order])?;
    let millis = t0.elapsed().as_secs_f64() * 1e3;
    let ok = derivative.terms().len() == args.diff_order;
    pass &= ok;
    rows.push(json!({
        "task": "repeated_differentiation",
        "size": args.diff_order,
        "count": derivative.terms().len(),
        "expected": args.diff_order,
        "millis": millis,
        "pass": ok,
    }));

    let value = json!({ "rows": rows, "pass": pass });
    ctx.emit_json(value)?;
    Ok(pass)
}
