use std::path::{Path, PathBuf};

use flashgan::data::{
    write_synthetic_dataset, DatasetManifest, FlashFalloff, ManifestPairs, PairSource, Split, SynthSceneSpec,
};
use flashgan::imagecore::{attention_map, load_image, save_attention_png, save_png};
use flashgan::metrics::{evaluate_pairs, Translator};
use flashgan::trainer::{self, RunConfig};
use flashgan::{Error, Image32, ModelBundle32};
use log::{info, warn};

use crate::args::{AttnArgs, EvalArgs, InferArgs, SynthArgs, TrainArgs};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

/// Result of one command: exit status, a one-line summary and the files written.
#[derive(Debug)]
pub struct CommandOutcome {
    pub exit_code: u8,
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
    /// Diagnostics for the error stream; non-empty whenever `exit_code != 0`.
    pub diagnostics: Vec<String>,
}

impl CommandOutcome {
    fn ok(summary: String, artifacts: Vec<PathBuf>) -> Self {
        CommandOutcome { exit_code: EXIT_OK, summary, artifacts, diagnostics: Vec::new() }
    }

    pub fn from_error(e: &Error) -> Self {
        CommandOutcome {
            exit_code: exit_code(e),
            summary: String::new(),
            artifacts: Vec::new(),
            diagnostics: vec![format!("error: {e}")],
        }
    }
}

/// Maps a library error onto the exit-code contract.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_data_error() {
        EXIT_DATA
    } else if matches!(e, Error::Config(_) | Error::InvalidAugmentation(_)) {
        EXIT_USAGE
    } else {
        EXIT_RUNTIME
    }
}

fn run_config(args: &TrainArgs) -> flashgan::Result<RunConfig> {
    let mut c = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    macro_rules! overlay {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field.clone() {
                c.$field = v;
            }
        )*};
    }
    overlay!(
        lambda,
        lr_generator,
        lr_discriminator,
        adam_beta1,
        adam_beta2,
        adam_epsilon,
        epochs,
        batch_size,
        crop,
        seed,
        ablation,
        checkpoint_every,
        allow_discriminator_lr_override,
        conditional_discriminator,
        unet_adversarial,
        width_divisor
    );
    if args.manifest.is_some() {
        c.manifest = args.manifest.clone();
    }
    if args.weights_archive.is_some() {
        c.weights_archive = args.weights_archive.clone();
    }
    if args.output_dir.is_some() {
        c.output_dir = args.output_dir.clone();
    }
    if c.output_dir.is_none() {
        c.output_dir = Some(PathBuf::from("runs").join(c.ablation.as_str().to_lowercase()));
    }
    Ok(c)
}

pub fn train(args: &TrainArgs) -> flashgan::Result<CommandOutcome> {
    let config = run_config(args)?;
    config.validate()?;
    let outcome = match &args.resume {
        Some(ckpt) => trainer::resume::<f32>(&config, ckpt)?,
        None => trainer::train::<f32>(&config)?,
    };
    let meta = &outcome.bundle.meta;
    let mut summary = format!("{} finished: epoch {}, step {}", config.ablation.label(), meta.epoch, meta.step);
    if let Some(last) = outcome.history.last() {
        let l = &last.losses;
        summary.push_str(&format!(
            "; last step reconstruction {:.5}, adversarial_d {:.5}, adversarial_g {:.5}, total {:.5}",
            l.reconstruction, l.adversarial_d, l.adversarial_g, l.total_g
        ));
    }
    let mut artifacts = outcome.checkpoints;
    artifacts.extend(outcome.log_path);
    Ok(CommandOutcome::ok(summary, artifacts))
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

/// Expands directories into their image files, sorted by name.
fn collect_inputs(inputs: &[PathBuf]) -> flashgan::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found = Vec::new();
            for entry in std::fs::read_dir(input).map_err(|e| Error::io(input, e))? {
                let path = entry.map_err(|e| Error::io(input, e))?.path();
                if path.is_file() && has_image_extension(&path) {
                    found.push(path);
                }
            }
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    Ok(files)
}

pub fn infer(args: &InferArgs) -> flashgan::Result<CommandOutcome> {
    let bundle = ModelBundle32::load(&args.checkpoint)?;
    let generator = bundle.generator;
    std::fs::create_dir_all(&args.output_dir).map_err(|e| Error::io(&args.output_dir, e))?;
    let mut artifacts = Vec::new();
    let mut diagnostics = Vec::new();
    let mut worst = EXIT_OK;
    for input in collect_inputs(&args.inputs)? {
        let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "output".into());
        let out = args.output_dir.join(format!("{stem}.png"));
        if artifacts.contains(&out) {
            warn!("{} maps to an output name already written; overwriting {}", input.display(), out.display());
        }
        let result = load_image::<f32>(&input)
            .and_then(|flash| generator.translate(&flash))
            .and_then(|img| save_png(&img, &out));
        match result {
            Ok(()) => {
                info!("{} -> {}", input.display(), out.display());
                artifacts.push(out);
            }
            Err(e) => {
                worst = worst.max(exit_code(&e));
                diagnostics.push(format!("error: {}: {e}", input.display()));
            }
        }
    }
    let summary = format!("translated {} image(s), {} failed", artifacts.len(), diagnostics.len());
    Ok(CommandOutcome { exit_code: worst, summary, artifacts, diagnostics })
}

pub fn eval(args: &EvalArgs) -> flashgan::Result<CommandOutcome> {
    let bundle = ModelBundle32::load(&args.checkpoint)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let source: &dyn PairSource<f32> = &ManifestPairs::new(manifest.split(Split::Test));
    if source.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let pairs = (0..source.len()).map(|i| (source.pair_id(i).to_string(), source.load_pair(i)));
    let report = evaluate_pairs(pairs, &bundle.generator)?;
    report.write(&args.report)?;
    print!("{}", report.table(&args.method));
    let diagnostics: Vec<String> =
        report.failures.iter().map(|(id, why)| format!("error: pair `{id}` could not be evaluated: {why}")).collect();
    let summary = format!(
        "evaluated {} pair(s): mean PSNR {:.4} dB, mean SSIM {:.4}; report {}",
        report.per_image.len(),
        report.mean_psnr,
        report.mean_ssim,
        args.report.display()
    );
    let exit_code = if diagnostics.is_empty() { EXIT_OK } else { EXIT_DATA };
    Ok(CommandOutcome { exit_code, summary, artifacts: vec![args.report.clone()], diagnostics })
}

pub fn attn(args: &AttnArgs) -> flashgan::Result<CommandOutcome> {
    let flash: Image32 = load_image(&args.flash)?;
    let ambient: Image32 = load_image(&args.ambient)?;
    let map = attention_map(&ambient, &flash)?;
    save_attention_png(&map, &args.output)?;
    let summary =
        format!("attention map {}x{} (min {:.4}) -> {}", map.width(), map.height(), map.min(), args.output.display());
    Ok(CommandOutcome::ok(summary, vec![args.output.clone()]))
}

pub fn synth(args: &SynthArgs) -> flashgan::Result<CommandOutcome> {
    let spec = SynthSceneSpec {
        seed: args.seed,
        height: args.height,
        width: args.width,
        shadow_polygons: args.shadow_polygons,
        flash_falloff: (!args.no_falloff)
            .then_some(FlashFalloff { center_gain: args.center_gain, edge_gain: args.edge_gain }),
        noise_level: args.noise_level,
    };
    if args.output_dir.join("manifest.tsv").exists() {
        info!("overwriting existing dataset in {}", args.output_dir.display());
    }
    let manifest = write_synthetic_dataset(&args.output_dir, &spec, args.count, args.test_fraction)?;
    let mut artifacts: Vec<PathBuf> =
        manifest.entries().iter().flat_map(|e| [e.flash_path.clone(), e.ambient_path.clone()]).collect();
    artifacts.push(args.output_dir.join("manifest.tsv"));
    let (train, test) = manifest.split_counts();
    let summary = format!("wrote {} pair(s) ({train} train, {test} test) to {}", args.count, args.output_dir.display());
    Ok(CommandOutcome::ok(summary, artifacts))
}
