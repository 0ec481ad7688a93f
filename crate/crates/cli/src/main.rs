//! `hyperflow` command-line tool.
//!
//! Exit codes: 0 on success, 2 for unreadable or missing inputs, 3 for invalid
//! configuration (bad flags, unknown layers, impossible settings).

mod args;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use serde_json::json;

use hyperflow::eval::{bench_match, match_pair, PairMatch};
use hyperflow::feature_io::DirStackSource;
use hyperflow::layersearch::{make_pck_evaluator, search, SearchConfig};
use hyperflow::{
    assemble, evaluate_dataset, load_annotations, load_stack, planted_pair, save_stack,
    synth_stack, HpfPipeline, StackSource,
};

use args::{BenchArgs, Cli, Command, EvalArgs, Format, MatchArgs, SearchArgs, SynthArgs};

const SCHEMA_VERSION: u32 = 1;
const CONFIDENCE_MAGIC: &[u8; 4] = b"HCT1";

#[derive(Debug)]
pub enum CliError {
    /// Missing, unreadable or malformed input data.
    Input(String),
    /// Flags or settings that cannot work.
    Config(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Config(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
        }
    }
}

impl From<hyperflow::Error> for CliError {
    fn from(e: hyperflow::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

fn write_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("cannot write {}: {e}", path.display()))
}

fn emit(text: &str, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| write_error(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Input(format!("cannot write to stdout: {e}")))
        }
    }
}

fn pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json value serializes");
    s.push('\n');
    s
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hyperflow: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
    }
    match cli.command {
        Command::Match(a) => cmd_match(&a, cli.format),
        Command::Eval(a) => cmd_eval(&a, cli.format),
        Command::Search(a) => cmd_search(&a, cli.format),
        Command::Bench(a) => cmd_bench(&a, cli.format),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn write_confidence(path: &Path, m: &PairMatch) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| write_error(path, e))?;
    let mut out = BufWriter::new(file);
    let (sh, sw) = m.confidence.src_grid();
    let (th, tw) = m.confidence.tgt_grid();
    let mut write = || -> std::io::Result<()> {
        out.write_all(CONFIDENCE_MAGIC)?;
        for v in [sh, sw, th, tw] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        for v in m.confidence.values() {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()
    };
    write().map_err(|e| write_error(path, e))
}

fn cmd_match(a: &MatchArgs, format: Format) -> Result<(), CliError> {
    let layers = args::parse_layers(&a.layers)?;
    let cfg = a.rhm.config()?;
    let src = load_stack(&a.src)?;
    let tgt = load_stack(&a.tgt)?;
    let m = match_pair(&src, &tgt, &layers, &cfg, a.rhm.matcher())?;
    if let Some(path) = &a.confidence {
        write_confidence(path, &m)?;
    }
    let text = match format {
        Format::Text => m.flow.to_table(&m.src),
        Format::Json => {
            let (_, w) = m.flow.grid();
            let cells: Vec<_> = m
                .flow
                .entries()
                .iter()
                .enumerate()
                .map(|(q, e)| {
                    let s = m.src.coord_flat(q);
                    json!({
                        "i": q / w,
                        "j": q % w,
                        "source": [s.y, s.x],
                        "target": [e.target.y, e.target.x],
                        "target_index": e.target_index,
                        "confidence": e.confidence,
                    })
                })
                .collect();
            pretty(&json!({
                "schema_version": SCHEMA_VERSION,
                "source_image": src.image_id(),
                "target_image": tgt.image_id(),
                "layers": layers.ids().collect::<Vec<_>>(),
                "source_grid": [m.src.grid_height(), m.src.grid_width()],
                "target_grid": [m.tgt.grid_height(), m.tgt.grid_width()],
                "flow": cells,
            }))
        }
    };
    emit(&text, a.out.as_deref())
}

/// Stack directory with every referenced image checked up front.
fn open_stacks(
    dir: &Path,
    pairs: &[hyperflow::PairAnnotation],
) -> Result<Arc<DirStackSource>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Input(format!(
            "stack directory {} does not exist",
            dir.display()
        )));
    }
    let source = DirStackSource::new(dir);
    let ids: BTreeSet<&str> = pairs
        .iter()
        .flat_map(|p| [p.src_image.as_str(), p.tgt_image.as_str()])
        .collect();
    let missing: Vec<&str> = ids.into_iter().filter(|id| !source.contains(id)).collect();
    if !missing.is_empty() {
        return Err(CliError::Input(format!(
            "missing feature stacks for {} image(s): {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    Ok(Arc::new(source))
}

fn load_pairs(path: &Path) -> Result<Vec<hyperflow::PairAnnotation>, CliError> {
    let pairs = load_annotations(path)?;
    if pairs.is_empty() {
        return Err(CliError::Config(format!(
            "{} contains no annotated pairs",
            path.display()
        )));
    }
    Ok(pairs)
}

fn cmd_eval(a: &EvalArgs, format: Format) -> Result<(), CliError> {
    let layers = args::parse_layers(&a.layers)?;
    let rhm = a.rhm.config()?;
    let pck = a.pck.config()?;
    let pairs = load_pairs(&a.annotations)?;
    let stacks = open_stacks(&a.stack_dir, &pairs)?;
    // Surface layer problems as configuration errors instead of per-pair failures.
    let first = stacks.stack(&pairs[0].src_image)?;
    assemble(&first, &layers)?;
    let pipeline = HpfPipeline::new(stacks, layers, rhm).with_matcher(a.rhm.matcher());
    let report = evaluate_dataset(&pairs, &pipeline, &pck)?;
    let text = match format {
        Format::Text => report.to_table(),
        Format::Json => pretty(&serde_json::to_value(&report).expect("report serializes")),
    };
    emit(&text, None)
}

fn cmd_search(a: &SearchArgs, format: Format) -> Result<(), CliError> {
    let rhm = a.rhm.config()?;
    let pck = a.pck.config()?;
    let pairs = load_pairs(&a.annotations)?;
    let stacks = open_stacks(&a.stack_dir, &pairs)?;
    let first = stacks.stack(&pairs[0].src_image)?;
    let candidates: BTreeSet<u32> = match &a.candidates {
        Some(s) => args::parse_ids(s, "--candidates")?.into_iter().collect(),
        None => first.layer_ids().collect(),
    };
    let base_candidates: BTreeSet<u32> = match &a.base_candidates {
        Some(s) => args::parse_ids(s, "--base-candidates")?
            .into_iter()
            .collect(),
        None => {
            let cells = |id: u32| first.layer(id).map(|l| l.height() * l.width()).unwrap_or(0);
            let finest = candidates.iter().map(|&id| cells(id)).max().unwrap_or(0);
            candidates
                .iter()
                .copied()
                .filter(|&id| cells(id) == finest)
                .collect()
        }
    };
    if let Some(id) = candidates.iter().find(|&&id| first.layer(id).is_none()) {
        return Err(CliError::Config(format!(
            "candidate layer {id} is not present in stack {}",
            first.image_id()
        )));
    }
    let cfg = SearchConfig {
        candidates,
        base_candidates,
        beam_size: a.beam,
        max_layers: a.max_layers,
    };
    cfg.validate()?;
    let evaluator = make_pck_evaluator(pairs, stacks, rhm, pck)?;
    let outcome = search(&cfg, &evaluator)?;

    if let Some(path) = &a.plot_data {
        let mut csv = String::from("iteration,layers,score,best_score\n");
        let mut best = f64::NEG_INFINITY;
        let last = outcome.trace.iter().map(|e| e.iteration).max().unwrap_or(0);
        for it in 0..=last {
            let top = outcome
                .trace
                .iter()
                .filter(|e| e.iteration == it)
                .min_by(|x, y| {
                    y.score
                        .total_cmp(&x.score)
                        .then_with(|| x.layers.cmp(&y.layers))
                });
            if let Some(e) = top {
                best = best.max(e.score);
                let _ = writeln!(
                    csv,
                    "{it},{},{:.6},{:.6}",
                    join_ids(&e.layers, " "),
                    e.score,
                    best
                );
            }
        }
        std::fs::write(path, csv).map_err(|e| write_error(path, e))?;
    }

    let selected: Vec<u32> = outcome.layers.ids().collect();
    let text = match format {
        Format::Text => {
            let mut s = format!(
                "selected {} score {:.6}\n",
                join_ids(&selected, ","),
                outcome.score
            );
            s.push_str("# iteration layers score\n");
            for e in &outcome.trace {
                let _ = writeln!(
                    s,
                    "{} {} {:.6}",
                    e.iteration,
                    join_ids(&e.layers, ","),
                    e.score
                );
            }
            s
        }
        Format::Json => {
            let trace: Vec<_> = outcome
                .trace
                .iter()
                .map(|e| json!({"iteration": e.iteration, "layers": e.layers, "score": e.score}))
                .collect();
            pretty(&json!({
                "schema_version": SCHEMA_VERSION,
                "layers": selected,
                "score": outcome.score,
                "beam_size": cfg.beam_size,
                "max_layers": cfg.max_layers,
                "trace": trace,
            }))
        }
    };
    emit(&text, None)
}

fn join_ids(ids: &[u32], sep: &str) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(sep)
}

fn cmd_bench(a: &BenchArgs, format: Format) -> Result<(), CliError> {
    let layers = args::parse_layers(&a.layers)?;
    let cfg = a.rhm.config()?;
    if a.repeats < 3 {
        return Err(CliError::Config(format!(
            "--repeats must be at least 3, got {}",
            a.repeats
        )));
    }
    let src = assemble(&load_stack(&a.src)?, &layers)?;
    let tgt = assemble(&load_stack(&a.tgt)?, &layers)?;
    let stats = bench_match(&src, &tgt, &cfg, a.repeats)?;
    let text = match format {
        Format::Text => format!(
            "grids {}x{} vs {}x{}, dim {}, {} repeats, {} threads\nmin {:.2} ms  median {:.2} ms  mean {:.2} ms  max {:.2} ms\n",
            src.grid_height(),
            src.grid_width(),
            tgt.grid_height(),
            tgt.grid_width(),
            src.dim(),
            a.repeats,
            rayon::current_num_threads(),
            stats.min_ms,
            stats.median_ms,
            stats.mean_ms,
            stats.max_ms
        ),
        Format::Json => pretty(&json!({
            "schema_version": SCHEMA_VERSION,
            "source_grid": [src.grid_height(), src.grid_width()],
            "target_grid": [tgt.grid_height(), tgt.grid_width()],
            "dim": src.dim(),
            "repeats": a.repeats,
            "threads": rayon::current_num_threads(),
            "timing": {
                "nondeterministic": true,
                "samples_ms": stats.samples_ms,
                "min_ms": stats.min_ms,
                "median_ms": stats.median_ms,
                "mean_ms": stats.mean_ms,
                "max_ms": stats.max_ms,
            },
        })),
    };
    emit(&text, None)
}

fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let specs = args::parse_spec(&a.spec)?;
    let dims = args::parse_dims(&a.image_dims)?;
    // Anything rejected while building the stacks came from the flags.
    let config = |e: hyperflow::Error| CliError::Config(e.to_string());
    match (&a.shift, &a.out_target) {
        (Some(shift), Some(out_target)) => {
            let shift = args::parse_shift(shift)?;
            let (src, tgt) = planted_pair(a.seed, &specs, dims, shift).map_err(config)?;
            save_stack(&src, &a.out)?;
            save_stack(&tgt, out_target)?;
        }
        _ => save_stack(&synth_stack(a.seed, &specs, dims).map_err(config)?, &a.out)?,
    }
    Ok(())
}
