use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gma_core::case::{case_hash, fixture_text, parse_case, FIXTURES};
use gma_core::format::{fmt_num, round_json};
use gma_core::indices::{compute_report, select_modes, SubsetThresholds};
use gma_core::lintf::{det_h_check, gma_sensitivity, participation_matrix, simulate, InputSignal, PortSelection};
use gma_core::network::{
    build_system, impedance_scan, load_step_injection, log_grid, system_modes, voltage_magnitude, NetworkCase,
    SystemModel,
};
use gma_core::vectorfit::{read_samples_csv, vector_fit, FitOptions};
use nalgebra::DVector;

#[derive(Parser)]
#[command(name = "gma", version, about = "Modal analysis of converter-rich power systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List system modes sorted by damping ratio.
    Modes(ModesArgs),
    /// Participation of every state in one mode.
    Participate(ParticipateArgs),
    /// Sensitivity of one mode to the inverse transfer matrix of a port selection.
    Gma(GmaArgs),
    /// Frequency scan of a 2x2 block of the whole-system impedance.
    Scan(ScanArgs),
    /// VDM for every source, node and selected mode; STG per source.
    Indices(IndicesArgs),
    /// Bus voltages after an active-load step.
    Simulate(SimulateArgs),
    /// Rational fit of frequency-response samples.
    Fit(FitArgs),
    /// List the bundled cases, or print one.
    Fixtures { name: Option<String> },
}

#[derive(Args)]
struct CaseArg {
    /// Case file, or the name of a bundled case.
    case: String,
}

#[derive(Args)]
struct ModesArgs {
    #[command(flatten)]
    case: CaseArg,
    /// Frequency window in Hz, `lo:hi`.
    #[arg(long, value_parser = parse_band)]
    band: Option<(f64, f64)>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ParticipateArgs {
    #[command(flatten)]
    case: CaseArg,
    /// Mode index as listed by `modes`.
    #[arg(long)]
    mode: usize,
    /// Keep only the largest N participants.
    #[arg(long)]
    top: Option<usize>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GmaArgs {
    #[command(flatten)]
    case: CaseArg,
    #[arg(long)]
    mode: usize,
    /// Comma-separated input labels, e.g. `bus1.Id,bus1.Iq`.
    #[arg(long, value_delimiter = ',', required_unless_present = "full_state")]
    inputs: Vec<String>,
    /// Comma-separated output labels, e.g. `bus1.Ud,bus1.Uq`.
    #[arg(long, value_delimiter = ',', required_unless_present = "full_state")]
    outputs: Vec<String>,
    /// Use every state as both input and output.
    #[arg(long, conflicts_with_all = ["inputs", "outputs"])]
    full_state: bool,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    case: CaseArg,
    /// Output bus and input bus labels, `j,i`.
    #[arg(long, value_parser = parse_pair)]
    pair: (String, String),
    #[arg(long, default_value_t = 0.1)]
    fmin: f64,
    #[arg(long, default_value_t = 1000.0)]
    fmax: f64,
    #[arg(long, default_value_t = 200)]
    points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IndicesArgs {
    #[command(flatten)]
    case: CaseArg,
    #[arg(long, default_value_t = 0.2)]
    zeta_max: f64,
    #[arg(long, default_value_t = 100.0)]
    f_max: f64,
    /// Modes with sigma below minus this value (1/s) are dropped.
    #[arg(long, default_value_t = 50.0)]
    sigma_floor: f64,
    /// Keep real modes in the subset.
    #[arg(long)]
    include_real: bool,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Leave out the generation time so reruns are byte-identical.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    case: CaseArg,
    #[arg(long)]
    step_bus: String,
    /// Extra active load in p.u.
    #[arg(long, default_value_t = 0.1)]
    magnitude: f64,
    #[arg(long, default_value_t = 0.1)]
    step_time: f64,
    #[arg(long, default_value_t = 2.0)]
    t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// CSV of `f_Hz` then Re/Im per matrix element, row-major.
    samples: PathBuf,
    #[arg(long, default_value_t = 8)]
    order: usize,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Keep unstable poles instead of flipping them.
    #[arg(long)]
    allow_unstable: bool,
    /// Fail when the RMS error exceeds this value.
    #[arg(long)]
    max_rms: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    match s.split_once(',') {
        Some((j, i)) if !j.trim().is_empty() && !i.trim().is_empty() => Ok((j.trim().into(), i.trim().into())),
        _ => Err("expected two bus labels, `j,i`".into()),
    }
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected lo:hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi}: {e}"))?;
    if !(lo >= 0.0 && hi >= lo) {
        return Err(format!("need 0 <= lo <= hi, got {lo}:{hi}"));
    }
    Ok((lo, hi))
}

/// Everything a command produces. Nothing touches the disk until the
/// computation has finished.
#[derive(Default)]
struct Output {
    stdout: String,
    files: Vec<(PathBuf, String)>,
}

impl Output {
    /// `text` goes to `path` when given, else to stdout.
    fn emit(&mut self, path: Option<&PathBuf>, text: String) {
        match path {
            Some(p) => self.files.push((p.clone(), text)),
            None => self.stdout.push_str(&text),
        }
    }

    fn commit(self) -> Result<()> {
        let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
        for (path, text) in &self.files {
            let mut tmp = path.clone().into_os_string();
            tmp.push(".partial");
            let tmp = PathBuf::from(tmp);
            if let Err(e) = fs::write(&tmp, text) {
                for (t, _) in &staged {
                    let _ = fs::remove_file(t);
                }
                return Err(e).with_context(|| format!("writing {}", path.display()));
            }
            staged.push((tmp, path.clone()));
        }
        for (tmp, path) in staged {
            fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
        }
        std::io::stdout().write_all(self.stdout.as_bytes())?;
        Ok(())
    }
}

fn load_case(arg: &str) -> Result<(NetworkCase, String)> {
    let path = Path::new(arg);
    if path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {arg}"))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let case = parse_case(&text, dir).map_err(|e| anyhow!("{arg}: {e}"))?;
        return Ok((case, text));
    }
    match fixture_text(arg) {
        Some(text) => Ok((parse_case(text, Path::new("."))?, text.to_string())),
        None => bail!("{arg}: no such file or bundled case (bundled: {})", fixture_names()),
    }
}

fn fixture_names() -> String {
    FIXTURES.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
}

fn model(arg: &CaseArg) -> Result<(SystemModel, String)> {
    let (case, text) = load_case(&arg.case)?;
    Ok((build_system(&case)?, text))
}

fn bus(m: &SystemModel, label: &str) -> Result<usize> {
    Ok(m.bus_index(label)?)
}

fn check_mode(m: &SystemModel, k: usize) -> Result<()> {
    let n = m.eigen().n();
    if k >= n {
        bail!("mode {k} out of range: the model has {n} modes (0..{})", n - 1);
    }
    Ok(())
}

fn csv_line(fields: &[String]) -> String {
    let mut s = fields.join(",");
    s.push('\n');
    s
}

fn cmd_modes(a: &ModesArgs) -> Result<Output> {
    let (m, _) = model(&a.case)?;
    let reports = system_modes(&m, a.band);
    let mut out = Output::default();
    let mut csv = String::from("k,sigma,omega,f_hz,zeta,det_ratio\n");
    let mut table = format!("{:>5}  {:>16}  {:>16}  {:>16}  {:>16}  {:>16}\n", "k", "sigma", "omega", "f_hz", "zeta", "det_ratio");
    for r in &reports {
        let md = r.mode;
        let det = r.det_ratio.map_or("pole".to_string(), fmt_num);
        let cells = [fmt_num(md.sigma()), fmt_num(md.omega()), fmt_num(md.freq_hz()), fmt_num(md.zeta), det];
        csv.push_str(&csv_line(&[&[md.index.to_string()], &cells[..]].concat()));
        table.push_str(&format!(
            "{:>5}  {:>16}  {:>16}  {:>16}  {:>16}  {:>16}\n",
            md.index, cells[0], cells[1], cells[2], cells[3], cells[4]
        ));
    }
    out.stdout = table;
    if let Some(p) = &a.csv {
        out.files.push((p.clone(), csv));
    }
    Ok(out)
}

fn cmd_participate(a: &ParticipateArgs) -> Result<Output> {
    let (m, _) = model(&a.case)?;
    check_mode(&m, a.mode)?;
    let p = participation_matrix(m.eigen());
    let labels = m.whole().state_labels();
    let mut rows: Vec<(usize, f64)> = (0..labels.len()).map(|s| (s, p[(s, a.mode)].norm())).collect();
    rows.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    if let Some(n) = a.top {
        rows.truncate(n);
    }
    let mut csv = String::from("state,magnitude,re,im\n");
    for (s, mag) in rows {
        let z = p[(s, a.mode)];
        csv.push_str(&csv_line(&[labels[s].clone(), fmt_num(mag), fmt_num(z.re), fmt_num(z.im)]));
    }
    let mut out = Output::default();
    out.emit(a.csv.as_ref(), csv);
    Ok(out)
}

fn cmd_gma(a: &GmaArgs) -> Result<Output> {
    let (m, _) = model(&a.case)?;
    check_mode(&m, a.mode)?;
    let ss = m.whole();
    let (sel, rows, cols) = if a.full_state {
        let l = ss.state_labels().to_vec();
        (PortSelection::full_state(ss), l.clone(), l)
    } else {
        let ins: Vec<&str> = a.inputs.iter().map(String::as_str).collect();
        let outs: Vec<&str> = a.outputs.iter().map(String::as_str).collect();
        (PortSelection::labels(ss, &ins, &outs)?, a.inputs.clone(), a.outputs.clone())
    };
    let s = gma_sensitivity(ss, &sel, a.mode).map_err(|e| {
        let hint = match det_h_check(ss, &sel, a.mode) {
            Ok(t) => format!("; |det H| near the mode scales with slope {:.3}, not 1", t.slope),
            Err(_) => String::new(),
        };
        anyhow!("refused: {e}{hint}")
    })?;
    let lam = m.eigen().eigenvalues()[a.mode];
    let mut csv = format!("# mode {} lambda {} {}\nrow,col,re,im,abs\n", a.mode, fmt_num(lam.re), fmt_num(lam.im));
    for (r, rl) in rows.iter().enumerate() {
        for (c, cl) in cols.iter().enumerate() {
            let z = s[(r, c)];
            csv.push_str(&csv_line(&[rl.clone(), cl.clone(), fmt_num(z.re), fmt_num(z.im), fmt_num(z.norm())]));
        }
    }
    let mut out = Output::default();
    out.emit(a.csv.as_ref(), csv);
    Ok(out)
}

fn cmd_scan(a: &ScanArgs) -> Result<Output> {
    let (m, _) = model(&a.case)?;
    if !(a.fmin > 0.0 && a.fmax >= a.fmin) || a.points == 0 {
        bail!("need 0 < fmin <= fmax and points > 0");
    }
    let j = bus(&m, &a.pair.0)?;
    let i = bus(&m, &a.pair.1)?;
    let scan = impedance_scan(&m, j, i, &log_grid(a.fmin, a.fmax, a.points))?;
    let mut csv = String::from("f_Hz");
    for e in ["dd", "dq", "qd", "qq"] {
        csv.push_str(&format!(",Z{e}_mag,Z{e}_phase_deg"));
    }
    csv.push('\n');
    for p in scan {
        let mut f = vec![fmt_num(p.f_hz)];
        for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let z = p.z[(r, c)];
            f.push(fmt_num(z.norm()));
            f.push(fmt_num(z.arg().to_degrees()));
        }
        csv.push_str(&csv_line(&f));
    }
    let mut out = Output::default();
    out.emit(a.out.as_ref(), csv);
    Ok(out)
}

fn cmd_indices(a: &IndicesArgs) -> Result<Output> {
    let (m, text) = model(&a.case)?;
    let th = SubsetThresholds {
        zeta_max: a.zeta_max,
        f_max_hz: a.f_max,
        sigma_floor: a.sigma_floor,
        include_real: a.include_real,
    };
    let subset = select_modes(&m.modes(), th)?;
    let mut report = compute_report(&m, &subset)?;
    report.case_hash = Some(case_hash(&text));
    if !a.no_timestamp {
        report.generated_at = Some(SystemTime::now().duration_since(UNIX_EPOCH)?.as_secs());
    }
    let mut out = Output::default();
    out.emit(a.json.as_ref(), report.to_json_string());
    if let Some(p) = &a.csv {
        out.files.push((p.clone(), report.to_csv()));
    }
    Ok(out)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<Output> {
    let (m, _) = model(&a.case)?;
    let j = bus(&m, &a.step_bus)?;
    let ss = m.whole();
    let u = load_step_injection(&m, j, a.magnitude);
    let tr = simulate(ss, &DVector::zeros(ss.n()), &InputSignal::Step { at: a.step_time, value: u }, a.t_end, a.dt)?;
    let mags: Vec<Vec<f64>> = (0..m.n_buses()).map(|b| voltage_magnitude(&m, &tr.y, b)).collect();
    let mut head = vec!["t".to_string()];
    for (b, label) in m.bus_labels().iter().enumerate() {
        head.push(ss.output_labels()[2 * b].clone());
        head.push(ss.output_labels()[2 * b + 1].clone());
        head.push(format!("bus{label}.Umag"));
    }
    let mut csv = csv_line(&head);
    for (k, t) in tr.t.iter().enumerate() {
        let mut row = vec![fmt_num(*t)];
        for (b, mag) in mags.iter().enumerate() {
            row.push(fmt_num(tr.y[(k, 2 * b)]));
            row.push(fmt_num(tr.y[(k, 2 * b + 1)]));
            row.push(fmt_num(mag[k]));
        }
        csv.push_str(&csv_line(&row));
    }
    let mut out = Output::default();
    out.emit(a.out.as_ref(), csv);
    Ok(out)
}

fn cmd_fit(a: &FitArgs) -> Result<Output> {
    let file = fs::File::open(&a.samples).with_context(|| format!("reading {}", a.samples.display()))?;
    let samples = read_samples_csv(file).map_err(|e| anyhow!("{}: {e}", a.samples.display()))?;
    let opts = FitOptions {
        order: a.order,
        iterations: a.iters,
        enforce_stable: !a.allow_unstable,
        rms_threshold: a.max_rms,
        ..FitOptions::default()
    };
    let fit = vector_fit(&samples, &opts)?;
    let mut text = serde_json::to_string_pretty(&round_json(serde_json::to_value(&fit)?))?;
    text.push('\n');
    let mut out = Output::default();
    out.emit(a.out.as_ref(), text);
    Ok(out)
}

fn cmd_fixtures(name: Option<&str>) -> Result<Output> {
    let mut out = Output::default();
    match name {
        None => out.stdout = FIXTURES.iter().map(|(n, _)| format!("{n}\n")).collect(),
        Some(n) => match fixture_text(n) {
            Some(t) => out.stdout = t.to_string(),
            None => bail!("no bundled case `{n}` (bundled: {})", fixture_names()),
        },
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    let out = match &cli.command {
        Command::Modes(a) => cmd_modes(a),
        Command::Participate(a) => cmd_participate(a),
        Command::Gma(a) => cmd_gma(a),
        Command::Scan(a) => cmd_scan(a),
        Command::Indices(a) => cmd_indices(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Fixtures { name } => cmd_fixtures(name.as_deref()),
    }?;
    out.commit()
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
