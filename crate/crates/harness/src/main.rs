use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rhino_core::encoder::{embed_trajectories, group_hyperedges, EncoderConfig};
use rhino_core::generator::LatentSource;
use rhino_core::graph::Mode;
use rhino_core::hypergraph::{write_affinity_csv, write_incidence_csv, Hypergraph, MultiScaleHypergraph, NodeKind, ScaleHypergraph};
use rhino_core::rhino::Variant;
use rhino_core::scenario::{Minibatch, ScenarioBatch};
use rhino_core::selection::{affinity, SelectionMode};
use rhino_harness::ablation::run_ablation;
use rhino_harness::dataset::{
    ensure_dir, load_scenario_csv, load_scenarios, read_json, save_dataset, scene_path, select, split_indices, SCENES_DIR,
};
use rhino_harness::eval::{evaluate_giraffe, evaluate_rhino, generate_k, predict_giraffe, EvalReport};
use rhino_harness::records::{ingest, write_canonical, Format};
use rhino_harness::report::{emit_report, hypergraph_svg, CONFIG_FILE};
use rhino_harness::synth::{synth_records, target_set, SynthConfig, SCENE_ID_STRIDE};
use rhino_harness::train::{self, CheckpointMeta, Stage, StepLog};
use rhino_harness::window::{window_scenarios, WindowConfig};
use rhino_harness::{HarnessError, Settings};
use rhino_kernel::{DenseArray, ParameterStore, Tape};

#[derive(Parser)]
#[command(name = "rhino", version, about = "Multi-agent trajectory forecasting with graph and hypergraph models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum LatentArg {
    Prior,
    Posterior,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Giraffe,
    Rhino,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a trajectory file and window it into scenarios.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "canonical")]
        format: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        stride: usize,
        #[arg(long, default_value_t = 6)]
        neighborhood: usize,
    },
    /// Generate a synthetic highway dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        scenes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 7)]
        vehicles: usize,
    },
    /// Train the multi-modal forecaster.
    TrainGiraffe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Train the hypergraph generator on a trained forecaster.
    TrainRhino {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        giraffe_ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Per-mode forecasts for one scenario: `agent,mode,step,x,y,prob`.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        target: Option<i64>,
    },
    /// K sampled futures for one scenario: `agent,sample,step,x,y`.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        target: Option<i64>,
        #[arg(long, value_enum, default_value = "prior")]
        latent: LatentArg,
    },
    /// Affinity, per-scale incidence and an SVG overlay for one scenario.
    InferHypergraph {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "2,3,5")]
        scales: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Embed with a trained generator's trajectory encoder instead of raw states.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value = "auto")]
        selection: String,
        #[arg(long)]
        target: Option<i64>,
    },
    /// RMSE per horizon on a dataset split.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "rhino")]
        model: ModelArg,
    },
    /// Train and evaluate generator variants on one forecaster.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        giraffe_ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "full,no_hg,no_mm,no_pdl")]
        variants: Vec<String>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Combine evaluation directories into one comparison report.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn settings_from(config: Option<&Path>) -> Result<Settings> {
    Ok(match config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    })
}

fn split_scenarios<'a>(all: &'a [ScenarioBatch], settings: &Settings, split: SplitArg) -> Vec<&'a ScenarioBatch> {
    let (train, test) = split_indices(all.len(), settings.train_fraction, settings.split_seed);
    match split {
        SplitArg::Train => select(all, &train),
        SplitArg::Test => select(all, &test),
        SplitArg::All => all.iter().collect(),
    }
}

fn progress(stage: &'static str, total: usize) -> impl FnMut(&StepLog) {
    let every = (total / 20).max(1);
    move |l: &StepLog| {
        if l.step % every == 0 || l.step + 1 == total {
            eprintln!(
                "{stage} step {:>6} lr {:.2e} loss {:.5} [{:.5} {:.5} {:.5}]",
                l.step, l.lr, l.total, l.parts[0], l.parts[1], l.parts[2]
            );
        }
    }
}

fn load_stage(path: &Path, stage: Stage) -> Result<(ParameterStore, Settings)> {
    let (store, meta) = train::load(path)?;
    if meta.stage != stage {
        bail!(HarnessError::Config(format!("{} holds a {:?} checkpoint, expected {stage:?}", path.display(), meta.stage)));
    }
    Ok((store, meta.settings))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

fn cmd_ingest(input: &Path, format: &str, out: &Path, stride: usize, neighborhood: usize) -> Result<()> {
    let format: Format = format.parse()?;
    let records = ingest(input, format)?;
    let cfg = WindowConfig {
        stride,
        neighborhood,
        ..WindowConfig::default()
    };
    let (scenarios, stats) = window_scenarios(&records, &cfg)?;
    save_dataset(out, &records, &scenarios)?;
    eprintln!(
        "{} records, {} scenarios, {} targets skipped (too short)",
        records.len(),
        stats.windows,
        stats.skipped_targets
    );
    Ok(())
}

fn cmd_synth(out: &Path, scenes: usize, seed: u64, vehicles: usize) -> Result<()> {
    let cfg = SynthConfig {
        scenes,
        seed,
        vehicles,
        ..SynthConfig::default()
    };
    let (records, targets) = synth_records(&cfg);
    let wcfg = WindowConfig {
        targets: Some(target_set(&targets)),
        stride: cfg.frames,
        ..WindowConfig::default()
    };
    let (scenarios, _) = window_scenarios(&records, &wcfg)?;
    save_dataset(out, &records, &scenarios)?;
    ensure_dir(&out.join(SCENES_DIR))?;
    for (i, &t) in targets.iter().enumerate() {
        let scene: Vec<_> = records
            .iter()
            .filter(|r| r.vehicle_id >= t && r.vehicle_id < t + SCENE_ID_STRIDE - 1)
            .copied()
            .collect();
        write_canonical(&scene_path(out, i), &scene)?;
    }
    eprintln!("{} scenes, {} scenarios written to {}", scenes, scenarios.len(), out.display());
    Ok(())
}

fn cmd_train_giraffe(data: &Path, config: Option<&Path>, out: &Path, split: SplitArg) -> Result<()> {
    let settings = settings_from(config)?;
    let all = load_scenarios(data)?;
    let scenarios = split_scenarios(&all, &settings, split);
    let store = train::train_giraffe(&settings, &scenarios, None, progress("giraffe", settings.steps))?;
    let meta = CheckpointMeta {
        stage: Stage::Giraffe,
        settings: settings.clone(),
        steps: settings.steps,
    };
    train::save(out, &store, &meta)?;
    Ok(())
}

fn cmd_train_rhino(data: &Path, giraffe_ckpt: &Path, config: Option<&Path>, out: &Path, split: SplitArg) -> Result<()> {
    let (gstore, gsettings) = load_stage(giraffe_ckpt, Stage::Giraffe)?;
    let mut settings = settings_from(config)?;
    if gsettings.giraffe() != settings.giraffe() {
        eprintln!("note: forecaster settings taken from {}", giraffe_ckpt.display());
        settings = merge_forecaster(&settings, &gsettings);
    }
    let all = load_scenarios(data)?;
    let scenarios = split_scenarios(&all, &settings, split);
    let store = train::train_rhino(&settings, &scenarios, gstore, progress("rhino", settings.steps))?;
    let meta = CheckpointMeta {
        stage: Stage::Rhino,
        settings: settings.clone(),
        steps: settings.steps,
    };
    train::save(out, &store, &meta)?;
    Ok(())
}

/// Keeps the generator settings of `s` and the forecaster shape of `g`.
fn merge_forecaster(s: &Settings, g: &Settings) -> Settings {
    Settings {
        t: g.t,
        f: g.f,
        cheb_order: g.cheb_order,
        layers: g.layers,
        slots: g.slots,
        lateral_threshold: g.lateral_threshold,
        per_mode_supervision: g.per_mode_supervision,
        train_fraction: g.train_fraction,
        split_seed: g.split_seed,
        ..s.clone()
    }
}

fn cmd_predict(ckpt: &Path, scenario: &Path, out: &Path, target: Option<i64>) -> Result<()> {
    let (mut store, meta) = train::load(ckpt)?;
    let settings = meta.settings;
    let s = load_scenario_csv(scenario, target, &window_cfg(&settings))?;
    let (modes, probs) = predict_giraffe(&mut store, &settings, &s)?;
    let mut text = String::from("agent,mode,step,x,y,prob\n");
    for i in 0..s.n_agents() {
        for m in Mode::ALL {
            for k in 0..settings.f {
                let _ = writeln!(
                    text,
                    "{},{},{},{},{},{}",
                    s.vehicle_ids[i],
                    m.name(),
                    k + 1,
                    modes.get(&[k, i, m.index(), 0]),
                    modes.get(&[k, i, m.index(), 1]),
                    probs.get(&[i, m.index()])
                );
            }
        }
    }
    write_file(out, &text)
}

fn window_cfg(settings: &Settings) -> WindowConfig {
    WindowConfig {
        history: settings.t,
        future: settings.f,
        lateral_threshold: settings.lateral_threshold,
        ..WindowConfig::default()
    }
}

fn cmd_generate(ckpt: &Path, scenario: &Path, k: usize, seed: u64, out: &Path, target: Option<i64>, latent: LatentArg) -> Result<()> {
    let (mut store, settings) = load_stage(ckpt, Stage::Rhino)?;
    let s = load_scenario_csv(scenario, target, &window_cfg(&settings))?;
    let latent = match latent {
        LatentArg::Prior => LatentSource::Prior,
        LatentArg::Posterior => LatentSource::Posterior,
    };
    let futures = generate_k(&mut store, &settings, &[&s], k, seed, latent)?;
    let y = &futures[0];
    let mut text = String::from("agent,sample,step,x,y\n");
    for i in 0..s.n_agents() {
        for sample in 0..k {
            for step in 0..settings.f {
                let _ = writeln!(
                    text,
                    "{},{},{},{},{}",
                    s.vehicle_ids[i],
                    sample,
                    step + 1,
                    y.get(&[step, i, sample, 0]) + s.origin[0],
                    y.get(&[step, i, sample, 1]) + s.origin[1]
                );
            }
        }
    }
    write_file(out, &text)
}

fn cmd_infer_hypergraph(
    scenario: &Path,
    scales: &[usize],
    out: &Path,
    ckpt: Option<&Path>,
    selection: &str,
    target: Option<i64>,
) -> Result<()> {
    let selection: SelectionMode = selection.parse()?;
    let (store, settings) = match ckpt {
        Some(p) => {
            let (store, settings) = load_stage(p, Stage::Rhino)?;
            (Some(store), settings)
        }
        None => (None, Settings::default()),
    };
    let s = load_scenario_csv(scenario, target, &window_cfg(&settings))?;
    let batch = Minibatch::new(&[&s])?;
    let states = batch.history_flat(settings.input_scale);
    let cfg = EncoderConfig {
        scales: scales.to_vec(),
        selection,
        ..settings.rhino().encoder
    };
    cfg.validate()?;
    let q = match store {
        Some(mut store) => {
            let mut tape = Tape::new();
            let x = tape.constant(states);
            let q = embed_trajectories(&mut tape, &mut store, "rhino.enc_t", &cfg, x)?;
            tape.value(q).clone()
        }
        None => states,
    };
    let aff = affinity(&q)?;
    let n = s.n_agents();
    let features = DenseArray::zeros(&[n, 0]);
    let mut ms = Vec::new();
    for (si, edges) in group_hyperedges(&aff, &cfg)?.into_iter().enumerate() {
        let group_size = if si == 0 { 2 } else { cfg.scales[si - 1].min(n) };
        ms.push(ScaleHypergraph {
            scale: si,
            group_size,
            hypergraph: Hypergraph::new(&edges, features.clone(), NodeKind::Agent, 1)?,
        });
    }
    let hg = MultiScaleHypergraph { scales: ms };
    ensure_dir(out)?;
    let create = |name: String| -> Result<std::fs::File> {
        let path = out.join(name);
        Ok(std::fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?)
    };
    write_affinity_csv(aff.values(), create("affinity.csv".into())?)?;
    for sc in &hg.scales {
        write_incidence_csv(&sc.hypergraph, create(format!("incidence_scale{}.csv", sc.scale))?)?;
    }
    write_file(&out.join("hypergraph.svg"), &hypergraph_svg(&s, &hg))
}

fn cmd_evaluate(ckpt: &Path, data: &Path, out: &Path, k: usize, seed: u64, split: SplitArg, model: ModelArg) -> Result<()> {
    let (mut store, meta) = train::load(ckpt)?;
    let settings = meta.settings;
    let all = load_scenarios(data)?;
    let scenarios = split_scenarios(&all, &settings, split);
    let report = match model {
        ModelArg::Giraffe => evaluate_giraffe(&mut store, &settings, &scenarios)?,
        ModelArg::Rhino => {
            if meta.stage != Stage::Rhino {
                bail!(HarnessError::Config("rhino evaluation needs a generator checkpoint".into()));
            }
            evaluate_rhino(&mut store, &settings, &scenarios, k, seed)?
        }
    };
    for (h, v) in report.horizons.iter().zip(&report.rmse) {
        eprintln!("RMSE@{h}: {v:.4} m");
    }
    emit_report(&[report], &settings, out)?;
    Ok(())
}

fn cmd_ablate(data: &Path, giraffe_ckpt: &Path, config: Option<&Path>, out: &Path, variants: &[String], seed: u64) -> Result<()> {
    let (gstore, gsettings) = load_stage(giraffe_ckpt, Stage::Giraffe)?;
    let settings = merge_forecaster(&settings_from(config)?, &gsettings);
    let all = load_scenarios(data)?;
    let train = split_scenarios(&all, &settings, SplitArg::Train);
    let test = split_scenarios(&all, &settings, SplitArg::Test);
    let mut reports = Vec::new();
    for v in variants {
        let variant: Variant = v.parse()?;
        let (report, _) = run_ablation(&settings, variant, &gstore, &train, &test, seed, progress("ablate", settings.steps))?;
        eprintln!("{variant}: RMSE@{} = {:.4} m", report.horizons.last().copied().unwrap_or(0), report.rmse.last().copied().unwrap_or(f64::NAN));
        reports.push(report);
    }
    emit_report(&reports, &settings, out)?;
    Ok(())
}

#[derive(serde::Deserialize)]
struct StoredReports {
    settings: Settings,
    reports: Vec<EvalReport>,
}

fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let mut reports = Vec::new();
    let mut settings = None;
    for dir in inputs {
        let stored: StoredReports = read_json(&dir.join(CONFIG_FILE))?;
        settings.get_or_insert(stored.settings);
        reports.extend(stored.reports);
    }
    let settings = settings.context("no inputs")?;
    emit_report(&reports, &settings, out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            input,
            format,
            out,
            stride,
            neighborhood,
        } => cmd_ingest(&input, &format, &out, stride, neighborhood),
        Command::Synth {
            out,
            scenes,
            seed,
            vehicles,
        } => cmd_synth(&out, scenes, seed, vehicles),
        Command::TrainGiraffe { data, config, out, split } => cmd_train_giraffe(&data, config.as_deref(), &out, split),
        Command::TrainRhino {
            data,
            giraffe_ckpt,
            config,
            out,
            split,
        } => cmd_train_rhino(&data, &giraffe_ckpt, config.as_deref(), &out, split),
        Command::Predict {
            ckpt,
            scenario,
            out,
            target,
        } => cmd_predict(&ckpt, &scenario, &out, target),
        Command::Generate {
            ckpt,
            scenario,
            k,
            seed,
            out,
            target,
            latent,
        } => cmd_generate(&ckpt, &scenario, k, seed, &out, target, latent),
        Command::InferHypergraph {
            scenario,
            scales,
            out,
            ckpt,
            selection,
            target,
        } => cmd_infer_hypergraph(&scenario, &scales, &out, ckpt.as_deref(), &selection, target),
        Command::Evaluate {
            ckpt,
            data,
            out,
            k,
            seed,
            split,
            model,
        } => cmd_evaluate(&ckpt, &data, &out, k, seed, split, model),
        Command::Ablate {
            data,
            giraffe_ckpt,
            config,
            out,
            variants,
            seed,
        } => cmd_ablate(&data, &giraffe_ckpt, config.as_deref(), &out, &variants, seed),
        Command::Report { inputs, out } => cmd_report(&inputs, &out),
    }
}

/// One JSON object on stderr: `{"error":{"kind":...,"message":...}}`.
fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<HarnessError>().map(HarnessError::kind))
        .or_else(|| err.chain().find_map(|e| e.downcast_ref::<rhino_core::CoreError>().map(|_| "model")))
        .unwrap_or("internal");
    // Library errors already print their source; only add causes not yet shown.
    let mut message = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !message.contains(&text) {
            if !message.is_empty() {
                message.push_str(": ");
            }
            message.push_str(&text);
        }
    }
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(2)
        }
    }
}
