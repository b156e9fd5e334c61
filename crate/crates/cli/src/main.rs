//! Command-line front end: run scenes or presets under a chosen policy,
//! sweep the interferometer phase, print closed-form predictions, check
//! scene files, and tabulate shutter spacing requirements.
//!
//! Exit codes: 0 on success, 1 when a scene fails validation, timing, or
//! execution, 2 on usage errors.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use photonbox::experiments::{build, Preset, PresetParams};
use photonbox::montecarlo::{
    run_trials, screen_histogram, sweep, sweep_visibility, ExperimentResult, Outcome, RunConfig,
    ScreenHistogram, SweepPoint,
};
use photonbox::optics::{ComponentKind, ScreenParams};
use photonbox::scenedsl::{parse, serialize, validate};
use photonbox::timeline::{min_separation, schedule, validate_timing, DEFAULT_SPEED};
use photonbox::{CollapsePolicy, SceneDoc};

/// Directory used for outputs when no explicit path is given.
const OUT_DIR_VAR: &str = "PHOTONBOX_OUT";

const CSV_HEADER: &str = "phi,policy,seed,trials,outcome,count,frequency,analytic_p";

#[derive(Parser)]
#[command(
    name = "photonbox",
    version,
    about = "Single-photon interferometry simulator comparing collapse policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one Monte Carlo campaign and tabulate detections.
    Run {
        #[command(flatten)]
        scene: SceneArgs,
        /// Number of packets to send through the scene.
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        /// Seed for the reproducible per-trial random streams.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Override the screen's bin count (screen scenes only).
        #[arg(long)]
        bins: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Sweep the phase over a uniform grid and report visibility.
    Sweep {
        #[command(flatten)]
        scene: SceneArgs,
        /// Number of grid points k, at phases 2*pi*i/k.
        #[arg(long = "phi-grid", value_parser = clap::value_parser!(u32).range(1..))]
        phi_grid: u32,
        /// Number of packets per grid point.
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        /// Seed for the reproducible per-trial random streams.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Print closed-form outcome probabilities without sampling.
    Analytic {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Check a scene file: syntax, cross references, and shutter timing.
    Validate {
        /// Preset name (fig1..fig5) or path to a .scene file.
        #[arg(long)]
        scene: String,
    },
    /// Tabulate the minimum fiber length between consecutive shutters.
    Feasibility {
        /// Shutter response time in seconds (repeatable).
        #[arg(long, required = true)]
        response: Vec<f64>,
        /// Packet propagation speed in meters per second.
        #[arg(long, default_value_t = DEFAULT_SPEED)]
        speed: f64,
    },
    /// Write the five bundled preset scenes as .scene files.
    Presets {
        /// Target directory (defaults to $PHOTONBOX_OUT, then the
        /// current directory).
        #[arg(long = "out-dir")]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SceneArgs {
    /// Preset name (fig1..fig5) or path to a .scene file.
    #[arg(long)]
    scene: String,
    /// Collapse policy: pov1, pov2-strong, or pov2-weak.
    #[arg(long)]
    policy: CollapsePolicy,
    /// Phase shifter setting in radians.
    #[arg(long)]
    phi: Option<f64>,
}

#[derive(Args)]
struct OutArgs {
    /// Output file. Defaults to a named file under $PHOTONBOX_OUT when
    /// that variable is set, otherwise standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Pretty,
}

/// A failure to report: message for stderr plus the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn run(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

/// Renders a core error verbatim, quoting the offending scene line when
/// the error carries a position and the source text is at hand.
fn failure_from(error: photonbox::Error, source: Option<&str>) -> Failure {
    let mut message = format!("error: {error}");
    if let (photonbox::Error::Parse(errors), Some(text)) = (&error, source) {
        let lines: Vec<&str> = text.lines().collect();
        for e in errors {
            if let Some(line) = lines.get(e.line - 1) {
                let _ = write!(message, "\n  {} | {}", e.line, line);
            }
        }
    }
    Failure {
        code: 1,
        message,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            scene,
            trials,
            seed,
            bins,
            out,
        } => cmd_run(&scene, trials, seed, bins, &out),
        Command::Sweep {
            scene,
            phi_grid,
            trials,
            seed,
            out,
        } => cmd_sweep(&scene, phi_grid, trials, seed, &out),
        Command::Analytic { scene, out } => cmd_analytic(&scene, &out),
        Command::Validate { scene } => cmd_validate(&scene),
        Command::Feasibility { response, speed } => cmd_feasibility(&response, speed),
        Command::Presets { out_dir } => cmd_presets(out_dir),
    }
}

/// A loaded scene plus the labels used for reporting and default file
/// names.
struct LoadedScene {
    doc: SceneDoc,
    /// Preset label or file stem.
    name: String,
    /// Value for the CSV phi column: the explicit flag, else the scene's
    /// unique phase shifter setting, else zero.
    phi: f64,
    /// Set when the scene came from a preset (sweeps rebuild from it).
    preset: Option<Preset>,
}

fn load_scene(args: &SceneArgs) -> Result<LoadedScene, Failure> {
    if let Ok(preset) = Preset::from_str(&args.scene) {
        let phi = args.phi.unwrap_or(0.0);
        let params = PresetParams {
            phi,
            ..PresetParams::default()
        };
        let doc = build(preset, &params).map_err(|e| failure_from(e, None))?;
        if args.phi.is_some() {
            require_unique_shifter(&doc)?;
        }
        return Ok(LoadedScene {
            doc,
            name: preset.to_string(),
            phi,
            preset: Some(preset),
        });
    }

    let path = Path::new(&args.scene);
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::run(format!("error: cannot read {}: {e}", path.display())))?;
    let mut doc = parse(&text).map_err(|e| failure_from(e, Some(&text)))?;
    if let Some(phi) = args.phi {
        set_unique_phase(&mut doc, phi)?;
    }
    let phi = args.phi.or_else(|| unique_phase(&doc)).unwrap_or(0.0);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    Ok(LoadedScene {
        doc,
        name,
        phi,
        preset: None,
    })
}

fn phase_shifters(doc: &SceneDoc) -> Vec<usize> {
    doc.components
        .iter()
        .enumerate()
        .filter(|(_, c)| matches!(c.kind, ComponentKind::PhaseShifter { .. }))
        .map(|(i, _)| i)
        .collect()
}

fn unique_phase(doc: &SceneDoc) -> Option<f64> {
    match phase_shifters(doc).as_slice() {
        [i] => match &doc.components[*i].kind {
            ComponentKind::PhaseShifter { phi, .. } => Some(*phi),
            _ => unreachable!(),
        },
        _ => None,
    }
}

fn require_unique_shifter(doc: &SceneDoc) -> Result<usize, Failure> {
    match phase_shifters(doc).as_slice() {
        [i] => Ok(*i),
        [] => Err(Failure::run(
            "error: --phi given but the scene has no phase shifter",
        )),
        _ => Err(Failure::run(
            "error: --phi given but the scene has more than one phase shifter",
        )),
    }
}

fn set_unique_phase(doc: &mut SceneDoc, phi: f64) -> Result<(), Failure> {
    let index = require_unique_shifter(doc)?;
    if let ComponentKind::PhaseShifter { phi: slot, .. } = &mut doc.components[index].kind {
        *slot = phi;
    }
    Ok(())
}

fn screen_params(doc: &SceneDoc) -> Option<ScreenParams> {
    doc.components.iter().find_map(|c| match &c.kind {
        ComponentKind::Screen { params, .. } => Some(params.clone()),
        _ => None,
    })
}

// ---------------------------------------------------------------------
// CSV rows

struct Row {
    phi: f64,
    policy: CollapsePolicy,
    seed: u64,
    trials: u64,
    outcome: String,
    count: u64,
    frequency: f64,
    analytic_p: f64,
}

/// Full-precision decimal rendering: shortest text that parses back to
/// the same value.
fn dec(v: f64) -> String {
    format!("{v}")
}

impl Row {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            dec(self.phi),
            self.policy.label(),
            self.seed,
            self.trials,
            self.outcome,
            self.count,
            dec(self.frequency),
            dec(self.analytic_p),
        )
    }
}

/// Outcomes worth a row: every detector (even when silent, so dark ports
/// are visible as explicit zeros), plus any other outcome that actually
/// carries probability or counts.
fn result_rows(phi: f64, result: &ExperimentResult) -> Vec<Row> {
    let mut outcomes: BTreeSet<Outcome> = BTreeSet::new();
    for (outcome, p) in &result.analytic {
        if matches!(outcome, Outcome::Detector(_)) || *p > 0.0 {
            outcomes.insert(outcome.clone());
        }
    }
    for (outcome, count) in &result.counts {
        if matches!(outcome, Outcome::Detector(_)) || *count > 0 {
            outcomes.insert(outcome.clone());
        }
    }
    outcomes
        .into_iter()
        .map(|outcome| Row {
            phi,
            policy: result.policy,
            seed: result.seed,
            trials: result.trials,
            outcome: outcome.to_string(),
            count: result.count(&outcome),
            frequency: result.frequency(&outcome),
            analytic_p: result.analytic.get(&outcome).copied().unwrap_or(0.0),
        })
        .collect()
}

fn bin_label(index: usize, bins: usize) -> String {
    let width = (bins.max(2) - 1).to_string().len();
    format!("bin{index:0width$}")
}

fn histogram_rows(phi: f64, hist: &ScreenHistogram) -> Vec<Row> {
    let bins = hist.counts.len();
    let mut rows: Vec<Row> = (0..bins)
        .map(|i| Row {
            phi,
            policy: hist.policy,
            seed: hist.seed,
            trials: hist.trials,
            outcome: bin_label(i, bins),
            count: hist.counts[i],
            frequency: if hist.trials == 0 {
                0.0
            } else {
                hist.counts[i] as f64 / hist.trials as f64
            },
            analytic_p: hist.masses[i],
        })
        .collect();
    if hist.loss > 0 {
        rows.push(Row {
            phi,
            policy: hist.policy,
            seed: hist.seed,
            trials: hist.trials,
            outcome: "loss".into(),
            count: hist.loss,
            frequency: hist.loss as f64 / hist.trials as f64,
            analytic_p: 0.0,
        });
    }
    rows
}

// ---------------------------------------------------------------------
// Output plumbing

/// Where the table goes, resolved from --out and the environment.
enum Sink {
    Stdout,
    File(PathBuf),
}

fn resolve_sink(out: &OutArgs, default_name: &str) -> Sink {
    if let Some(path) = &out.out {
        return Sink::File(path.clone());
    }
    match std::env::var_os(OUT_DIR_VAR) {
        Some(dir) => Sink::File(PathBuf::from(dir).join(default_name)),
        None => Sink::Stdout,
    }
}

/// Writes the table and returns the summary channel: stdout when the
/// table went to a file, stderr when the table occupies stdout.
fn emit(sink: &Sink, body: &str) -> Result<bool, Failure> {
    match sink {
        Sink::Stdout => {
            print!("{body}");
            Ok(false)
        }
        Sink::File(path) => {
            fs::write(path, body)
                .map_err(|e| Failure::run(format!("error: cannot write {}: {e}", path.display())))?;
            println!("wrote {}", path.display());
            Ok(true)
        }
    }
}

fn summarize(to_stdout: bool, line: &str) {
    if to_stdout {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
}

fn csv_body(rows: &[Row]) -> Result<String, Failure> {
    if rows.is_empty() {
        return Err(Failure::usage("error: no results to write"));
    }
    let mut body = String::from(CSV_HEADER);
    body.push('\n');
    for row in rows {
        body.push_str(&row.to_csv());
        body.push('\n');
    }
    Ok(body)
}

fn pretty_body(header: &str, rows: &[Row]) -> Result<String, Failure> {
    if rows.is_empty() {
        return Err(Failure::usage("error: no results to write"));
    }
    let mut body = format!("{header}\n");
    let _ = writeln!(
        body,
        "{:<12} {:>10} {:>12} {:>22} {:>22}",
        "outcome", "count", "frequency", "analytic_p", "phi"
    );
    for row in rows {
        let _ = writeln!(
            body,
            "{:<12} {:>10} {:>12} {:>22} {:>22}",
            row.outcome,
            row.count,
            dec(row.frequency),
            dec(row.analytic_p),
            dec(row.phi),
        );
    }
    Ok(body)
}

fn render(out: &OutArgs, header: &str, rows: &[Row]) -> Result<String, Failure> {
    match out.format {
        Format::Csv => csv_body(rows),
        Format::Pretty => pretty_body(header, rows),
    }
}

// ---------------------------------------------------------------------
// Commands

fn cmd_run(
    scene: &SceneArgs,
    trials: u64,
    seed: u64,
    bins: Option<usize>,
    out: &OutArgs,
) -> Result<(), Failure> {
    let loaded = load_scene(scene)?;
    let cfg = RunConfig {
        trials,
        seed,
        policy: scene.policy,
    };
    let rows = match screen_params(&loaded.doc) {
        Some(mut params) => {
            if let Some(b) = bins {
                params.bins = b;
            }
            let hist = screen_histogram(&loaded.doc, &params, &cfg)
                .map_err(|e| failure_from(e, None))?;
            histogram_rows(loaded.phi, &hist)
        }
        None => {
            if bins.is_some() {
                return Err(Failure::usage(
                    "error: --bins applies only to scenes with a screen",
                ));
            }
            let result = run_trials(&loaded.doc, &cfg).map_err(|e| failure_from(e, None))?;
            result_rows(loaded.phi, &result)
        }
    };
    let header = format!(
        "scene {}  policy {}  phi {}  seed {seed}  trials {trials}",
        loaded.name,
        scene.policy.label(),
        dec(loaded.phi),
    );
    let body = render(out, &header, &rows)?;
    let sink = resolve_sink(
        out,
        &format!("run-{}-{}.csv", loaded.name, scene.policy.label()),
    );
    emit(&sink, &body)?;
    Ok(())
}

fn cmd_sweep(
    scene: &SceneArgs,
    phi_grid: u32,
    trials: u64,
    seed: u64,
    out: &OutArgs,
) -> Result<(), Failure> {
    let loaded = load_scene(scene)?;
    if phase_shifters(&loaded.doc).len() != 1 {
        return Err(Failure::run(
            "error: sweep needs a scene with exactly one phase shifter",
        ));
    }
    let phis: Vec<f64> = (0..phi_grid)
        .map(|k| 2.0 * std::f64::consts::PI * f64::from(k) / f64::from(phi_grid))
        .collect();
    let cfg = RunConfig {
        trials,
        seed,
        policy: scene.policy,
    };
    let points: Vec<SweepPoint> = match loaded.preset {
        Some(preset) => sweep(
            |phi| {
                build(
                    preset,
                    &PresetParams {
                        phi,
                        ..PresetParams::default()
                    },
                )
            },
            &phis,
            &cfg,
        ),
        None => {
            let template = loaded.doc.clone();
            sweep(
                |phi| {
                    let mut doc = template.clone();
                    if let Some(i) = phase_shifters(&doc).first().copied() {
                        if let ComponentKind::PhaseShifter { phi: slot, .. } =
                            &mut doc.components[i].kind
                        {
                            *slot = phi;
                        }
                    }
                    Ok(doc)
                },
                &phis,
                &cfg,
            )
        }
    }
    .map_err(|e| failure_from(e, None))?;

    let rows: Vec<Row> = points
        .iter()
        .flat_map(|point| result_rows(point.phi, &point.result))
        .collect();
    let header = format!(
        "scene {}  policy {}  grid {phi_grid}  seed {seed}  trials {trials}",
        loaded.name,
        scene.policy.label(),
    );
    let body = render(out, &header, &rows)?;
    let sink = resolve_sink(
        out,
        &format!("sweep-{}-{}.csv", loaded.name, scene.policy.label()),
    );
    let to_stdout = emit(&sink, &body)?;

    // Visibility summary per detector, over the swept frequencies.
    let mut detectors: BTreeSet<Outcome> = BTreeSet::new();
    for point in &points {
        for outcome in point.result.analytic.keys() {
            if matches!(outcome, Outcome::Detector(_)) {
                detectors.insert(outcome.clone());
            }
        }
    }
    for detector in detectors {
        match sweep_visibility(&points, &detector) {
            Ok(v) => summarize(to_stdout, &format!("visibility {detector} = {}", dec(v))),
            Err(e) => summarize(to_stdout, &format!("visibility {detector}: {e}")),
        }
    }
    Ok(())
}

fn cmd_analytic(scene: &SceneArgs, out: &OutArgs) -> Result<(), Failure> {
    let loaded = load_scene(scene)?;
    let cfg = RunConfig {
        trials: 0,
        seed: 0,
        policy: scene.policy,
    };
    let rows = match screen_params(&loaded.doc) {
        Some(params) => {
            let hist = screen_histogram(&loaded.doc, &params, &cfg)
                .map_err(|e| failure_from(e, None))?;
            histogram_rows(loaded.phi, &hist)
        }
        None => {
            let result = run_trials(&loaded.doc, &cfg).map_err(|e| failure_from(e, None))?;
            result_rows(loaded.phi, &result)
        }
    };
    let header = format!(
        "scene {}  policy {}  phi {}  (closed form)",
        loaded.name,
        scene.policy.label(),
        dec(loaded.phi),
    );
    let body = render(out, &header, &rows)?;
    let sink = resolve_sink(
        out,
        &format!("analytic-{}-{}.csv", loaded.name, scene.policy.label()),
    );
    emit(&sink, &body)?;
    Ok(())
}

fn cmd_validate(scene: &str) -> Result<(), Failure> {
    let (doc, label) = if let Ok(preset) = Preset::from_str(scene) {
        let doc = build(preset, &PresetParams::default()).map_err(|e| failure_from(e, None))?;
        (doc, preset.to_string())
    } else {
        let path = Path::new(scene);
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::run(format!("error: cannot read {}: {e}", path.display())))?;
        let doc = parse(&text).map_err(|e| failure_from(e, Some(&text)))?;
        (doc, path.display().to_string())
    };

    let report = validate(&doc);
    for warning in &report.warnings {
        println!("warning: {warning}");
    }
    if !report.errors.is_empty() {
        let mut message = String::new();
        for error in &report.errors {
            let _ = writeln!(message, "error: {error}");
        }
        return Err(Failure::run(message.trim_end().to_string()));
    }

    // Static checks pass; confirm the schedule clears every shutter.
    let timeline = schedule(&doc).map_err(|e| failure_from(e, None))?;
    validate_timing(&timeline).map_err(|e| failure_from(e, None))?;

    println!(
        "{label}: ok ({} regions, {} components, {} warnings)",
        doc.regions.len(),
        doc.components.len(),
        report.warnings.len()
    );
    Ok(())
}

fn cmd_feasibility(responses: &[f64], speed: f64) -> Result<(), Failure> {
    let mut body = String::from("response,speed,min_separation\n");
    for &response in responses {
        let separation = min_separation(response, speed).map_err(|e| failure_from(e, None))?;
        let _ = writeln!(body, "{},{},{}", dec(response), dec(speed), dec(separation));
    }
    print!("{body}");
    Ok(())
}

fn cmd_presets(out_dir: Option<PathBuf>) -> Result<(), Failure> {
    let dir = out_dir
        .or_else(|| std::env::var_os(OUT_DIR_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)
        .map_err(|e| Failure::run(format!("error: cannot create {}: {e}", dir.display())))?;
    for preset in Preset::ALL {
        let doc = build(preset, &PresetParams::default()).map_err(|e| failure_from(e, None))?;
        let path = dir.join(format!("{preset}.scene"));
        fs::write(&path, serialize(&doc))
            .map_err(|e| Failure::run(format!("error: cannot write {}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
