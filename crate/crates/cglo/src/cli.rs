//! Command-line surface tying fixture generation, training, inversion,
//! synthesis and scene augmentation into reproducible runs.
//!
//! Every subcommand reads an optional config file, applies `key=value`
//! overrides, and writes all outputs (plus the resolved config) under its run
//! directory. Exit codes: 0 success, 1 runtime failure with a one-line
//! `error: ...` on stderr, 2 usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::generator::{forward, generator_grad_check, Patch};
use crate::io::config::{streams, RunConfig};
use crate::io::dataset::{AnnotationFile, PatchDatasetManifest, SceneAnnotation};
use crate::io::fixture::make_fixture;
use crate::io::image::{decode_image, encode_image};
use crate::seeding::derive_seed;
use crate::synthesis::{augment_scene, AugmentReport, SceneImage};
use crate::trainer::{invert, train};

#[derive(Parser)]
#[command(name = "cglo", version, about = "Conditional generative latent optimization: patch synthesis and scene augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic patch dataset and annotated scenes
    MakeFixture(CommonArgs),
    /// Train the conditional generator on a patch manifest
    Train(CommonArgs),
    /// Invert an image to a latent code under fixed weights
    Invert(CommonArgs),
    /// Regenerate a stored latent code under a chosen condition
    Synth(CommonArgs),
    /// Plant synthesized foreground patches into annotated scenes
    Augment(CommonArgs),
    /// Check generator gradients against finite differences
    Gradcheck(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file (flat key = value format)
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override the run seed
    #[arg(long)]
    seed: Option<u64>,

    /// Run directory for all outputs (default: ./run-<subcommand>)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Additional config overrides
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// Parse and execute; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let (name, args) = match &cli.command {
        Command::MakeFixture(a) => ("make-fixture", a),
        Command::Train(a) => ("train", a),
        Command::Invert(a) => ("invert", a),
        Command::Synth(a) => ("synth", a),
        Command::Augment(a) => ("augment", a),
        Command::Gradcheck(a) => ("gradcheck", a),
    };

    let mut config = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for raw in &args.overrides {
        config.apply_override(raw)?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.resolve_seeds();

    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("run-{name}")));
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let resolved = out_dir.join("config.resolved");
    std::fs::write(&resolved, config.to_flat()).map_err(|e| Error::io(&resolved, e))?;

    match cli.command {
        Command::MakeFixture(_) => cmd_make_fixture(&config, &out_dir),
        Command::Train(_) => cmd_train(&config, &out_dir),
        Command::Invert(_) => cmd_invert(&config, &out_dir),
        Command::Synth(_) => cmd_synth(&config, &out_dir),
        Command::Augment(_) => cmd_augment(&config, &out_dir),
        Command::Gradcheck(_) => cmd_gradcheck(&config, &out_dir),
    }
}

fn required(path: &Option<PathBuf>, key: &str, subcommand: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::InvalidConfig(format!("{subcommand} requires {key}")))
}

fn cmd_make_fixture(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let output = make_fixture(out_dir, &config.fixture)?;
    println!(
        "fixture: {} patches ({}x{}), {} scenes -> {}",
        config.fixture.n_patches,
        config.fixture.patch_size,
        config.fixture.patch_size,
        config.fixture.n_scenes,
        out_dir.display()
    );
    println!("manifest: {}", output.manifest_path.display());
    println!("annotations: {}", output.annotations_path.display());
    Ok(())
}

fn cmd_train(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let manifest_path = required(&config.paths.manifest, "paths.manifest", "train")?;
    let manifest = PatchDatasetManifest::load(&manifest_path)?;
    if manifest.patch_size != config.gen.output_size {
        return Err(Error::InvalidConfig(format!(
            "manifest patch_size {} != gen.output_size {}",
            manifest.patch_size, config.gen.output_size
        )));
    }
    let (patches, conditions) = manifest.load_patches(&manifest_path)?;
    let (params, table, history) = train(&patches, &conditions, &config.gen, &config.train)?;

    let ckpt_path = out_dir.join(format!("ckpt-{}", config.train.epochs));
    save_checkpoint(&params, &table, &history, &ckpt_path)?;
    let loss_path = out_dir.join("loss.csv");
    std::fs::write(&loss_path, history.to_csv()).map_err(|e| Error::io(&loss_path, e))?;

    match (history.first(), history.last()) {
        (Some(first), Some(last)) => println!(
            "trained {} epochs on {} patches: loss {first:.6} -> {last:.6}",
            config.train.epochs,
            patches.len()
        ),
        _ => println!("trained 0 epochs on {} patches", patches.len()),
    }
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

fn cmd_invert(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let ckpt_path = required(&config.paths.checkpoint, "paths.checkpoint", "invert")?;
    let image_path = required(&config.paths.image, "paths.image", "invert")?;
    let (params, _, _) = load_checkpoint(&ckpt_path)?;
    let image = Patch::from_tensor(decode_image(&image_path)?)?;
    let seed = derive_seed(config.seed, streams::INVERT);
    let (code, loss) = invert(&params, &image, config.invert_condition, &config.invert, seed)?;

    let recon = forward(&params, &code, config.invert_condition)?;
    encode_image(recon.tensor(), &out_dir.join("recon.png"))?;
    let record = serde_json::json!({
        "image": image_path.display().to_string(),
        "condition": config.invert_condition.bit(),
        "steps": config.invert.steps,
        "loss": loss,
        "code": code.values(),
    });
    let json_path = out_dir.join("inversion.json");
    std::fs::write(&json_path, format!("{record:#}\n")).map_err(|e| Error::io(&json_path, e))?;
    println!(
        "inverted {} in {} steps: loss {loss:.6}",
        image_path.display(),
        config.invert.steps
    );
    Ok(())
}

fn cmd_synth(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let ckpt_path = required(&config.paths.checkpoint, "paths.checkpoint", "synth")?;
    let (params, table, _) = load_checkpoint(&ckpt_path)?;
    let entry = table.get(config.synth_sample_id)?;
    let patch = forward(&params, &entry.code, config.synth_condition)?;
    let png_path = out_dir.join("synth.png");
    encode_image(patch.tensor(), &png_path)?;
    println!(
        "sample {} (stored condition {}) regenerated with condition {} -> {}",
        config.synth_sample_id,
        entry.condition.bit(),
        config.synth_condition.bit(),
        png_path.display()
    );
    Ok(())
}

fn cmd_augment(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let ckpt_path = required(&config.paths.checkpoint, "paths.checkpoint", "augment")?;
    let ann_path = required(&config.paths.annotations, "paths.annotations", "augment")?;
    let (params, _, _) = load_checkpoint(&ckpt_path)?;
    let annotations = AnnotationFile::load(&ann_path)?;
    let ann_dir = ann_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let scenes_dir = out_dir.join("scenes");
    std::fs::create_dir_all(&scenes_dir).map_err(|e| Error::io(&scenes_dir, e))?;

    let mut out_scenes = Vec::with_capacity(annotations.scenes.len());
    let mut csv = String::from(AugmentReport::csv_header());
    csv.push('\n');
    let mut total_placed = 0usize;

    for (index, record) in annotations.scenes.iter().enumerate() {
        let pixels = decode_image(&ann_dir.join(&record.image))?;
        let scene = SceneImage::new(pixels, record.image.clone())?;
        let mut plan = config.augment.clone();
        plan.seed = config.scene_seed(index);
        let (augmented, boxes, report) =
            augment_scene(&params, &scene, &record.boxes, &plan, &config.invert)?;

        let file_name = Path::new(&record.image)
            .file_name()
            .ok_or_else(|| Error::BadAnnotations(format!("bad image path {:?}", record.image)))?;
        encode_image(augmented.pixels(), &scenes_dir.join(file_name))?;
        out_scenes.push(SceneAnnotation {
            image: format!("scenes/{}", file_name.to_string_lossy()),
            boxes,
        });
        report.append_csv_rows(&mut csv);
        total_placed += report.placed();
        if report.rejection_limited {
            println!("warning: scene {} rejection-limited below target count", record.image);
        }
    }

    AnnotationFile { scenes: out_scenes }.save(&out_dir.join("annotations.json"))?;
    let report_path = out_dir.join("report.csv");
    std::fs::write(&report_path, csv).map_err(|e| Error::io(&report_path, e))?;
    println!(
        "augmented {} scenes with {} placements -> {}",
        annotations.scenes.len(),
        total_placed,
        out_dir.display()
    );
    Ok(())
}

fn cmd_gradcheck(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let report = generator_grad_check(
        &config.gen,
        config.gradcheck.coords,
        config.gradcheck.step,
        config.gradcheck.tol,
        derive_seed(config.seed, streams::GRADCHECK),
    )?;
    let summary = report.summary();
    println!("gradcheck: {summary}");
    let txt_path = out_dir.join("gradcheck.txt");
    std::fs::write(&txt_path, format!("{summary}\n")).map_err(|e| Error::io(&txt_path, e))?;
    if !report.passed {
        return Err(Error::GradCheckFailed(summary));
    }
    Ok(())
}
