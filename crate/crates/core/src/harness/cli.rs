//! Command-line front end. Every subcommand writes its outputs plus a
//! `run_manifest.json` into one output directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::DType;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use super::archive::{load_weights, save_weights, WeightArchive};
use super::config::{load_run_config, CisRunConfig, GenRunConfig, RunManifest};
use super::quant::{quantize_archive, QuantScheme};
use crate::cis::{fit_cis, write_cis_curve, EmbeddingModel};
use crate::conditioning::ContextIndex;
use crate::error::{invalid, Error, Result};
use crate::img::Image;
use crate::metrics::{eval_state_table, plot_trajectory, trajectory_report, Anchor};
use crate::monitor::{run_session_offline, write_trace_csv, MonitorConfig};
use crate::nets::{generator_param_count, DiscriminatorModel, GeneratorModel};
use crate::sessions::{
    load_recipe_specs, load_session, load_sessions, save_session, split_dataset, synth_session,
    CookState, CookingSession, DatasetSplit,
};
use crate::training::{train_generator, write_gen_curve, Perceptual};

#[derive(Debug, Parser)]
#[command(name = "cookcast", version = super::config::version_string(), about = "Cooked-state image synthesis, culinary similarity and progress monitoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic sessions from a recipe spec file.
    Synth(SynthArgs),
    /// Write a stratified 70:10:20 split of a session directory.
    Split(SplitArgs),
    /// Train the culinary image similarity network from a run config.
    TrainCis(ConfigArgs),
    /// Train the generator and discriminator from a run config.
    TrainGen(ConfigArgs),
    /// Generate cooked-state images from a raw image.
    Generate(GenerateArgs),
    /// Replay a session against a target image and decide when to stop.
    Monitor(MonitorArgs),
    /// State table and per-session similarity trajectories.
    Eval(EvalArgs),
    /// Re-encode an archive under a quantisation scheme.
    Quantize(QuantizeArgs),
    /// Image grid of raw | real | generated rows.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON list of recipe specs.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Sessions per recipe; session k renders with seed `spec.seed + k`.
    #[arg(long, default_value_t = 40)]
    pub sessions: u64,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = 30.0)]
    pub interval: f64,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory; receives `split.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator archive directory.
    #[arg(long)]
    pub archive: PathBuf,
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub recipe: String,
    #[arg(
        long,
        required_unless_present = "all_states",
        conflicts_with = "all_states"
    )]
    pub state: Option<String>,
    /// One image per state registered for the recipe.
    #[arg(long)]
    pub all_states: bool,
    /// Output directory; images are named `<state>.png`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    /// CIS archive directory.
    #[arg(long)]
    pub cis: PathBuf,
    /// One session directory.
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub smooth_window: usize,
    #[arg(long, default_value_t = 2)]
    pub peak_confirm: usize,
    #[arg(long, default_value_t = 0.5)]
    pub min_peak_sim: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub cis: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Restrict to the test sessions of this split file.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Anchor frame for trajectories.
    #[arg(long, default_value_t = 0)]
    pub anchor: usize,
    /// Also draw a PNG chart per trajectory.
    #[arg(long)]
    pub plots: bool,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub archive: PathBuf,
    /// Scheme file; the default policy is int8 conv/linear weights, float16 elsewhere.
    #[arg(long)]
    pub scheme: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Generator archive directory.
    #[arg(long)]
    pub generator: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Maximum number of sessions in the grid.
    #[arg(long, default_value_t = 4)]
    pub sessions: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Split(a) => split(&a),
        Command::TrainCis(a) => train_cis_cmd(&a.config),
        Command::TrainGen(a) => train_gen_cmd(&a.config),
        Command::Generate(a) => generate(&a),
        Command::Monitor(a) => monitor(&a),
        Command::Eval(a) => eval(&a),
        Command::Quantize(a) => quantize(&a),
        Command::Report(a) => report(&a),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn synth(a: &SynthArgs) -> Result<()> {
    let specs = load_recipe_specs(&a.spec)?;
    if a.sessions == 0 {
        return invalid("--sessions must be positive");
    }
    fs::create_dir_all(&a.out)?;
    let mut n = 0;
    for spec in &specs {
        for k in 0..a.sessions {
            let s = synth_session(&spec.with_seed(spec.seed + k), a.frames, a.interval)?;
            save_session(&s, &a.out)?;
            n += 1;
        }
    }
    let mut m = RunManifest::new(
        "synth",
        None,
        json!({ "spec": specs, "sessions_per_recipe": a.sessions, "frames": a.frames, "interval_s": a.interval }),
    );
    m.results.insert("sessions_written".into(), json!(n));
    m.write(&a.out)?;
    println!("wrote {n} sessions to {}", a.out.display());
    Ok(())
}

fn split(a: &SplitArgs) -> Result<()> {
    let sessions = load_sessions(&a.data)?;
    let s = split_dataset(&sessions, a.seed)?;
    fs::create_dir_all(&a.out)?;
    fs::write(
        a.out.join("split.json"),
        serde_json::to_string_pretty(&s)? + "\n",
    )?;
    let (tr, va, te) = s.sizes();
    let mut m = RunManifest::new("split", Some(a.seed), json!({ "data": path_str(&a.data) }));
    m.results.insert(
        "sizes".into(),
        json!({ "train": tr, "val": va, "test": te }),
    );
    m.write(&a.out)?;
    println!("train {tr}, val {va}, test {te}");
    Ok(())
}

fn read_split(path: &Path) -> Result<DatasetSplit> {
    serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Sessions of `part` ("train" or "test") when a split is given, else all.
fn select_sessions(
    all: &[CookingSession],
    split: Option<&Path>,
    part: &str,
) -> Result<Vec<CookingSession>> {
    let Some(p) = split else {
        return Ok(all.to_vec());
    };
    let s = read_split(p)?;
    let ids = if part == "train" { &s.train } else { &s.test };
    let chosen: Vec<CookingSession> = DatasetSplit::select(all, ids)
        .into_iter()
        .cloned()
        .collect();
    if chosen.len() != ids.len() {
        return Err(Error::Lookup(format!(
            "{} names sessions missing from the data directory",
            p.display()
        )));
    }
    Ok(chosen)
}

fn train_cis_cmd(path: &Path) -> Result<()> {
    let cfg: CisRunConfig = load_run_config(path)?;
    cfg.net.validate()?;
    let all = load_sessions(&cfg.data)?;
    let train = select_sessions(&all, cfg.split.as_deref(), "train")?;
    let refs: Vec<&CookingSession> = train.iter().collect();
    let mut model = EmbeddingModel::new(cfg.net.clone(), DType::F32, cfg.train.seed)?;
    println!("cis parameters: {}", model.store.param_count());
    let history = fit_cis(&mut model, &refs, &cfg.train, |_, log| {
        println!(
            "epoch {:>3}  loss {:.6}  lr {:.3e}",
            log.epoch, log.mean_loss, log.lr
        )
    })?;
    fs::create_dir_all(&cfg.out)?;
    save_weights(&model, &cfg.out.join("cis"))?;
    write_cis_curve(&cfg.out.join("cis_curve.csv"), &history)?;
    let mut m = RunManifest::new(
        "train-cis",
        Some(cfg.train.seed),
        serde_json::to_value(&cfg)?,
    );
    m.param_counts
        .insert("cis".into(), model.store.param_count());
    m.start_loss = history.first().map(|h| h.mean_loss);
    m.end_loss = history.last().map(|h| h.mean_loss);
    m.write(&cfg.out)?;
    Ok(())
}

/// Every annotated (recipe, cooked state) of the sessions, in sorted order.
pub fn context_index_for(sessions: &[CookingSession]) -> Result<ContextIndex> {
    let pairs: BTreeSet<(&str, CookState)> = sessions
        .iter()
        .flat_map(|s| {
            s.annotations
                .keys()
                .filter(|st| **st != CookState::Raw)
                .map(move |st| (s.recipe_id.as_str(), *st))
        })
        .collect();
    let mut idx = ContextIndex::new();
    for (r, st) in pairs {
        idx.register(r, st.as_str())?;
    }
    Ok(idx)
}

fn train_gen_cmd(path: &Path) -> Result<()> {
    let cfg: GenRunConfig = load_run_config(path)?;
    cfg.generator.validate()?;
    let all = load_sessions(&cfg.data)?;
    let train = select_sessions(&all, cfg.split.as_deref(), "train")?;
    let refs: Vec<&CookingSession> = train.iter().collect();
    let cis: EmbeddingModel = load_weights(&cfg.cis)?;
    let index = context_index_for(&train)?;
    let mut gen = GeneratorModel::new(cfg.generator.clone(), index, DType::F32, cfg.train.seed)?;
    let mut disc = DiscriminatorModel::new(
        cfg.discriminator.clone(),
        DType::F32,
        cfg.train.seed.wrapping_add(1),
    )?;
    let census = gen.store.param_count();
    let derived = generator_param_count(&cfg.generator);
    println!("generator parameters: {census} (shape-derived {derived})");
    println!("discriminator parameters: {}", disc.store.param_count());
    if census != derived {
        return Err(Error::Shape(format!(
            "generator census {census} disagrees with shape-derived count {derived}"
        )));
    }
    let perceptual = Perceptual::new(cfg.train.perceptual_impl, None)?;
    let history = train_generator(
        &refs,
        &mut gen,
        &mut disc,
        &cis,
        &perceptual,
        &cfg.train,
        |log| {
            println!(
                "epoch {:>3}  d {:.4}  g {:.4}  perc {:.4}  cis {:.4}  total {:.4}  lr {:.3e}",
                log.epoch, log.gan_d, log.gan_g, log.perc, log.cis, log.composite, log.lr
            )
        },
    )?;
    fs::create_dir_all(&cfg.out)?;
    save_weights(&gen, &cfg.out.join("generator"))?;
    save_weights(&disc, &cfg.out.join("discriminator"))?;
    write_gen_curve(&cfg.out.join("gen_curve.csv"), &history)?;
    let mut m = RunManifest::new(
        "train-gen",
        Some(cfg.train.seed),
        serde_json::to_value(&cfg)?,
    );
    m.param_counts.insert("generator".into(), census);
    m.param_counts
        .insert("discriminator".into(), disc.store.param_count());
    m.param_counts.insert("cis".into(), cis.store.param_count());
    m.start_loss = history.first().map(|h| h.composite);
    m.end_loss = history.last().map(|h| h.composite);
    m.write(&cfg.out)?;
    Ok(())
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let gen: GeneratorModel = load_weights(&a.archive)?;
    let raw = Image::load_png(&a.raw)?;
    let states: Vec<String> = match &a.state {
        Some(s) => vec![s.clone()],
        None => gen
            .index
            .states_for(&a.recipe)
            .into_iter()
            .map(String::from)
            .collect(),
    };
    if states.is_empty() {
        return Err(Error::Lookup(format!(
            "recipe {:?} has no states in this generator",
            a.recipe
        )));
    }
    fs::create_dir_all(&a.out)?;
    for st in &states {
        let img = gen.generate(&raw, &a.recipe, st)?;
        img.save_png(&a.out.join(format!("{st}.png")))?;
    }
    let mut m = RunManifest::new(
        "generate",
        None,
        json!({ "archive": path_str(&a.archive), "raw": path_str(&a.raw), "recipe": a.recipe, "states": states }),
    );
    m.param_counts
        .insert("generator".into(), gen.store.param_count());
    m.write(&a.out)?;
    println!("wrote {} image(s) to {}", states.len(), a.out.display());
    Ok(())
}

fn monitor(a: &MonitorArgs) -> Result<()> {
    let cis: EmbeddingModel = load_weights(&a.cis)?;
    let session = load_session(&a.session)?;
    let target = Image::load_png(&a.target)?;
    let cfg = MonitorConfig {
        interval_s: session.interval_s,
        smooth_window: a.smooth_window,
        peak_confirm: a.peak_confirm,
        min_peak_sim: a.min_peak_sim,
    };
    let report = run_session_offline(&cis, &session, &target, &cfg)?;
    fs::create_dir_all(&a.out)?;
    write_trace_csv(&a.out.join("trace.csv"), &report)?;
    fs::write(
        a.out.join("report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    match report.stop {
        Some((i, t)) => {
            Image::hstack(&[&target, &session.frames[i].image])?
                .save_png(&a.out.join("strip.png"))?;
            println!(
                "stop at frame {i} (t = {t} s), decided at frame {}",
                report.decided_at.unwrap_or(i)
            );
        }
        None => println!("no stop: the similarity peak was never confirmed"),
    }
    let mut m = RunManifest::new(
        "monitor",
        None,
        json!({ "cis": path_str(&a.cis), "session": path_str(&a.session), "target": path_str(&a.target), "monitor": cfg }),
    );
    m.results.insert("stop".into(), json!(report.stop));
    m.write(&a.out)?;
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let cis: EmbeddingModel = load_weights(&a.cis)?;
    let all = load_sessions(&a.data)?;
    let test = select_sessions(&all, a.split.as_deref(), "test")?;
    let refs: Vec<&CookingSession> = test.iter().collect();
    let perceptual = Perceptual::pyramid_l1();
    fs::create_dir_all(&a.out)?;
    let table = eval_state_table(&cis, &perceptual, &refs)?;
    table.write_csv(&a.out.join("state_table.csv"))?;
    let traj_dir = a.out.join("trajectories");
    fs::create_dir_all(&traj_dir)?;
    let mut wider = 0;
    for s in &refs {
        let t = trajectory_report(&cis, &perceptual, s, &Anchor::Frame(a.anchor))?;
        t.write_csv(&traj_dir.join(format!("{}.csv", s.id)))?;
        if a.plots {
            plot_trajectory(&t, &traj_dir.join(format!("{}.png", s.id)))?;
        }
        wider += usize::from(t.cis_range() > t.ssim_range());
    }
    let mut m = RunManifest::new(
        "eval",
        None,
        json!({ "cis": path_str(&a.cis), "data": path_str(&a.data), "split": a.split.as_deref().map(path_str), "anchor": a.anchor }),
    );
    m.results.insert("sessions".into(), json!(refs.len()));
    m.results
        .insert("cis_range_wider_than_ssim".into(), json!(wider));
    m.write(&a.out)?;
    println!(
        "{} sessions; CIS range wider than SSIM in {wider}",
        refs.len()
    );
    Ok(())
}

fn quantize(a: &QuantizeArgs) -> Result<()> {
    let scheme = match &a.scheme {
        Some(p) => QuantScheme::load(p)?,
        None => QuantScheme::default(),
    };
    let archive = WeightArchive::load(&a.archive)?;
    let (q, report) = quantize_archive(&archive, &scheme)?;
    q.save(&a.out)?;
    report.write_csv(&a.out.join("quant_report.csv"))?;
    fs::write(
        a.out.join("quant_report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    let mut m = RunManifest::new(
        "quantize",
        None,
        json!({ "archive": path_str(&a.archive), "scheme": scheme }),
    );
    m.results
        .insert("bytes_before".into(), json!(report.bytes_before));
    m.results
        .insert("bytes_after".into(), json!(report.bytes_after));
    m.write(&a.out)?;
    println!(
        "{} -> {} bytes ({:.2}x smaller)",
        report.bytes_before,
        report.bytes_after,
        report.reduction_factor()
    );
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let gen: GeneratorModel = load_weights(&a.generator)?;
    let all = load_sessions(&a.data)?;
    let test = select_sessions(&all, a.split.as_deref(), "test")?;
    let mut rows = Vec::new();
    for s in test.iter().take(a.sessions) {
        let raw = &s.frames[0].image;
        for st in CookState::COOKED {
            let (Some(real), Ok(_)) = (s.frame_for(st), gen.context_of(&s.recipe_id, st.as_str()))
            else {
                continue;
            };
            let fake = gen.generate(raw, &s.recipe_id, st.as_str())?;
            rows.push(Image::hstack(&[raw, &real.image, &fake])?);
        }
    }
    if rows.is_empty() {
        return invalid("no session has a state the generator knows");
    }
    fs::create_dir_all(&a.out)?;
    Image::vstack(&rows.iter().collect::<Vec<_>>())?.save_png(&a.out.join("grid.png"))?;
    let mut m = RunManifest::new(
        "report",
        None,
        json!({ "generator": path_str(&a.generator), "data": path_str(&a.data), "split": a.split.as_deref().map(path_str) }),
    );
    m.results.insert("rows".into(), json!(rows.len()));
    m.write(&a.out)?;
    println!("wrote {} rows (raw | real | generated)", rows.len());
    Ok(())
}
