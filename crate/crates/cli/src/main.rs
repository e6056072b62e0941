use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use calsig::ir::{design_ir, exante_utility, region_of};
use calsig::marginals::{check_calibration_feasible, optimal_thresholds, Convention};
use calsig::oracle::{brute_force_transport, grid_lp_optimal, scan_marginal_objective, GridSpec, GRID_MAX_N};
use calsig::signaling::{design_optimal, revenue, verify_calibration, Variant};
use calsig::transport::{check_plan_feasible, correlate_general, secmax_upper_bound};
use calsig::{sim, sweep, CalibratedSignaling, DiscreteDist, PriorBySum};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "calsig", version, about = "Calibrated signaling for second-price auctions")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Revenue-optimal calibrated signaling for a prior.
    Design {
        config: PathBuf,
        /// Bundle output path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Individually rational ε-approximation.
    DesignIr {
        config: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo auctions under a bundle.
    Simulate {
        bundle: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = sim::DEFAULT_SHARDS)]
        shards: usize,
        /// Report JSON path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-signal calibration table.
        #[arg(long)]
        calibration_csv: Option<PathBuf>,
    },
    /// Revenue comparison over Bernoulli(p) priors as CSV.
    Sweep {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p_start: f64,
        #[arg(long)]
        p_end: f64,
        #[arg(long)]
        p_steps: usize,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle checks on a prior config or a bundle.
    Verify {
        path: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize, Deserialize)]
struct Summary {
    n: usize,
    welfare: f64,
    revenue: f64,
    full_info_revenue: f64,
    t1: f64,
    t0: f64,
    t1_main_text: Option<f64>,
    t0_main_text: Option<f64>,
    region: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exante_utility: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Bundle {
    summary: Summary,
    signaling: CalibratedSignaling,
}

/// Failure caused by the user's input; mapped to exit status 2.
#[derive(Debug)]
struct InputError(anyhow::Error);

fn input<T, E: Into<anyhow::Error>>(r: Result<T, E>) -> Result<T, InputError> {
    r.map_err(|e| InputError(e.into()))
}

fn read_text(path: &Path) -> Result<String, InputError> {
    input(fs::read_to_string(path).with_context(|| format!("reading {}", path.display())))
}

fn read_prior(path: &Path) -> Result<PriorBySum, InputError> {
    let text = read_text(path)?;
    input(PriorBySum::from_json(&text).with_context(|| format!("parsing prior {}", path.display())))
}

fn read_bundle(path: &Path) -> Result<Bundle, InputError> {
    let text = read_text(path)?;
    let b: Bundle = input(serde_json::from_str(&text).with_context(|| format!("parsing bundle {}", path.display())))?;
    input(b.signaling.validate())?;
    Ok(b)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), InputError> {
    match out {
        Some(p) => input(fs::write(p, text).with_context(|| format!("writing {}", p.display()))),
        None => {
            let mut o = std::io::stdout().lock();
            input(o.write_all(text.as_bytes()).and_then(|_| o.write_all(b"\n")))
        }
    }
}

fn summarize(sig: &CalibratedSignaling, epsilon: Option<f64>) -> Summary {
    let prior = &sig.prior;
    let main = optimal_thresholds(prior, Convention::MainText).ok();
    let region = match (&sig.ir, optimal_thresholds(prior, Convention::Appendix)) {
        (Some(info), _) => info.region,
        (None, Ok(th)) => region_of(prior, &th),
        (None, Err(_)) => 1,
    };
    Summary {
        n: prior.n(),
        welfare: prior.welfare(),
        revenue: revenue(sig),
        full_info_revenue: prior.full_info_revenue(),
        t1: sig.meta.t1,
        t0: sig.meta.t0,
        t1_main_text: main.as_ref().map(|t| t.t1),
        t0_main_text: main.as_ref().map(|t| t.t0),
        region,
        epsilon,
        exante_utility: epsilon.map(|_| exante_utility(sig).per_bidder[0]),
    }
}

fn write_bundle(sig: CalibratedSignaling, epsilon: Option<f64>, out: Option<&Path>) -> Result<(), InputError> {
    let summary = summarize(&sig, epsilon);
    eprintln!(
        "n={} t1={:.6} t0={:.6} revenue={:.9} welfare={:.9} region={}",
        summary.n, summary.t1, summary.t0, summary.revenue, summary.welfare, summary.region
    );
    let text = input(serde_json::to_string_pretty(&Bundle { summary, signaling: sig }))?;
    emit(out, &text)
}

fn cmd_design(config: &Path, out: Option<&Path>) -> Result<u8, InputError> {
    let prior = read_prior(config)?;
    let sig = input(design_optimal(&prior))?;
    write_bundle(sig, None, out)?;
    Ok(0)
}

fn cmd_design_ir(config: &Path, epsilon: f64, out: Option<&Path>) -> Result<u8, InputError> {
    let prior = read_prior(config)?;
    let sig = match design_ir(&prior, epsilon) {
        Ok(s) => s,
        Err(calsig::Error::EpsilonRange { bound, max_valid }) => {
            return Err(InputError(anyhow!("epsilon {epsilon} violates {bound}; max valid epsilon: {max_valid}")));
        }
        Err(e) => return Err(InputError(e.into())),
    };
    write_bundle(sig, Some(epsilon), out)?;
    Ok(0)
}

fn cmd_simulate(
    bundle: &Path,
    samples: u64,
    seed: u64,
    shards: usize,
    out: Option<&Path>,
    cal_csv: Option<&Path>,
) -> Result<u8, InputError> {
    let b = read_bundle(bundle)?;
    let rep = input(sim::run_sharded(&b.signaling, samples, seed, shards))?;
    if let Some(path) = cal_csv {
        let mut w = input(csv::Writer::from_path(path))?;
        input(w.write_record(["value", "hits", "clicks", "rate"]))?;
        for c in &rep.calibration {
            input(w.write_record([sig12(c.value), c.hits.to_string(), c.clicks.to_string(), sig12(c.rate)]))?;
        }
        input(w.flush())?;
    }
    eprintln!("revenue {:.6} ± {:.6} (analytic {:.6})", rep.revenue_mean, rep.revenue_stderr, revenue(&b.signaling));
    emit(out, &input(serde_json::to_string_pretty(&rep))?)?;
    Ok(0)
}

/// Shortest decimal that round-trips the value rounded to 12 significant digits.
fn sig12(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    format!("{v:.11e}").parse::<f64>().map(|x| x.to_string()).unwrap_or_else(|_| v.to_string())
}

fn cmd_sweep(n: usize, p_start: f64, p_end: f64, steps: usize, epsilon: f64, out: Option<&Path>) -> Result<u8, InputError> {
    let rows = input(sweep::sweep(n, p_start, p_end, steps, epsilon))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    input(w.write_record(["p", "welfare", "rev_opt", "rev_ir", "rev_full", "t1", "t0", "region"]))?;
    for r in &rows {
        input(w.write_record([
            sig12(r.p),
            sig12(r.welfare),
            sig12(r.rev_opt),
            sig12(r.rev_ir),
            sig12(r.rev_full),
            sig12(r.t1),
            sig12(r.t0),
            r.region.to_string(),
        ]))?;
    }
    let bytes = input(w.into_inner().map_err(|e| anyhow!("{e}")))?;
    let text = input(String::from_utf8(bytes))?;
    match out {
        Some(p) => input(fs::write(p, text).with_context(|| format!("writing {}", p.display())))?,
        None => print!("{text}"),
    }
    if rows.iter().any(|r| r.rev_ir.is_nan()) {
        eprintln!("warning: epsilon {epsilon} is outside the valid range for some p; rev_ir is NaN there");
    }
    Ok(0)
}

#[derive(Serialize)]
struct Check {
    name: String,
    passed: bool,
    detail: String,
}

#[derive(Serialize)]
struct VerifyReport {
    passed: bool,
    checks: Vec<Check>,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.into(), passed, detail }
}

/// Oracle checks for a signaling; the optimality certificate applies to optimal designs only.
fn signaling_checks(sig: &CalibratedSignaling, checks: &mut Vec<Check>) {
    let prior = &sig.prior;
    let cal = verify_calibration(sig, 1e-8);
    checks.push(check("calibration", cal.passed, format!("max violation {:.3e} at {:?}", cal.max_violation, cal.worst_value)));
    if let Ok(rep) = check_calibration_feasible(prior, &sig.meta.family, 1e-8) {
        checks.push(check("marginal calibration", rep.feasible, format!("worst {:.3e}", rep.worst_violation)));
    }
    let fam = &sig.meta.family;
    let mut worst_plan = 0.0f64;
    let mut worst_gap = 0.0f64;
    let mut feasible = true;
    let mut bf_gap = 0.0f64;
    for (k, plan) in sig.plans.iter().enumerate() {
        let rep = check_plan_feasible(plan, fam.f1(k), fam.f0(k), 1e-8);
        feasible &= rep.feasible;
        worst_plan = worst_plan.max(rep.worst_deviation.max(rep.weight_error));
        if k != 1 {
            if let Ok(ub) = secmax_upper_bound(k, fam.f1(k), fam.f0(k), sig.n()) {
                worst_gap = worst_gap.max((plan.expected_secmax() - ub).abs());
            }
        }
        let small = |d: Option<&DiscreteDist>| d.map_or(true, |d| d.len() <= 8);
        if sig.n() <= 6 && small(fam.f1(k)) && small(fam.f0(k)) {
            if let Ok(bf) = brute_force_transport(k, fam.f1(k), fam.f0(k), sig.n()) {
                bf_gap = bf_gap.max(bf - plan.expected_secmax());
            }
        }
    }
    checks.push(check("plan marginals", feasible, format!("worst deviation {worst_plan:.3e}")));
    checks.push(check("coupling optimality", worst_gap <= 1e-7 && bf_gap <= 1e-7, format!("bound gap {worst_gap:.3e}, brute-force gap {bf_gap:.3e}")));
    if sig.meta.variant == Variant::Optimal && sig.n() <= GRID_MAX_N {
        let grid = GridSpec::new([sig.meta.t0, sig.meta.t1]);
        if let Ok(g) = grid.and_then(|g| grid_lp_optimal(prior, &g)) {
            let r = revenue(sig);
            checks.push(check("grid LP certificate", (g - r).abs() <= 1e-6, format!("grid LP {g:.9}, design {r:.9}")));
        }
    }
}

fn cmd_verify(path: &Path, out: Option<&Path>) -> Result<u8, InputError> {
    let text = read_text(path)?;
    let mut checks = Vec::new();
    let sig = if let Ok(b) = serde_json::from_str::<Bundle>(&text) {
        input(b.signaling.validate())?;
        b.signaling
    } else {
        let prior = input(PriorBySum::from_json(&text).with_context(|| format!("{} is neither a prior nor a bundle", path.display())))?;
        if let Ok(scan) = scan_marginal_objective(&prior, 10_000, Convention::Appendix) {
            checks.push(check(
                "marginal objective scan",
                scan.matches_closed_form,
                format!("scan x {:.9}, closed form x {:.9}", scan.x_best, scan.closed_form_x),
            ));
        }
        input(design_optimal(&prior))?
    };
    signaling_checks(&sig, &mut checks);

    // Fixed reference coupling with a known optimum of 0.88.
    let f1 = DiscreteDist::new([(1.0, 0.4), (0.8, 0.4), (0.2, 0.2)]).expect("fixed");
    let f0 = DiscreteDist::new([(0.8, 0.2), (0.2, 0.2), (0.0, 0.6)]).expect("fixed");
    let v = correlate_general(2, Some(&f1), Some(&f0), 4).map(|p| p.expected_secmax()).unwrap_or(f64::NAN);
    let bf = brute_force_transport(2, Some(&f1), Some(&f0), 4).unwrap_or(f64::NAN);
    checks.push(check("reference coupling", (v - 0.88).abs() < 1e-12 && (bf - 0.88).abs() < 1e-7, format!("coupling {v}, brute force {bf}")));

    let report = VerifyReport { passed: checks.iter().all(|c| c.passed), checks };
    for c in &report.checks {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    emit(out, &input(serde_json::to_string_pretty(&report))?)?;
    Ok(if report.passed { 0 } else { 1 })
}

fn configure_threads() -> Result<(), InputError> {
    if let Ok(v) = std::env::var("CALSIG_THREADS") {
        let n: usize = input(v.parse().with_context(|| format!("CALSIG_THREADS={v}")))?;
        input(rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8, InputError> {
    configure_threads()?;
    match cli.cmd {
        Command::Design { config, out } => cmd_design(&config, out.as_deref()),
        Command::DesignIr { config, epsilon, out } => cmd_design_ir(&config, epsilon, out.as_deref()),
        Command::Simulate { bundle, samples, seed, shards, out, calibration_csv } => {
            cmd_simulate(&bundle, samples, seed, shards, out.as_deref(), calibration_csv.as_deref())
        }
        Command::Sweep { n, p_start, p_end, p_steps, epsilon, out } => cmd_sweep(n, p_start, p_end, p_steps, epsilon, out.as_deref()),
        Command::Verify { path, out } => cmd_verify(&path, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(InputError(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::sig12;

    #[test]
    fn twelve_digits() {
        assert_eq!(sig12(0.1), "0.1");
        assert_eq!(sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(sig12(0.0), "0");
        assert_eq!(sig12(f64::NAN), "NaN");
    }
}
