//! Command-line front end: decode images, assemble the configuration from
//! file and flags, run the pipeline, write the outputs.

pub mod config;
pub mod imgio;

use clap::Parser;
use restyle_core::{imagecore, pipeline, Error as CoreError, PipelineConfig};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(
    name = "restyle",
    version,
    about = "Transfer the photographic style of a reference image onto an input image of the same scene"
)]
pub struct Cli {
    /// Input image (PNG or JPEG)
    #[arg(long)]
    pub input: PathBuf,

    /// Reference image carrying the target style
    #[arg(long)]
    pub reference: PathBuf,

    /// Match file: lines of `x_input y_input x_ref y_ref score`
    #[arg(long)]
    pub matches: PathBuf,

    /// Output image (PNG)
    #[arg(long)]
    pub output: PathBuf,

    /// Flat key = value configuration file; flags win over file values
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Fraction of matches kept, highest confidence first
    #[arg(long)]
    pub match_fraction: Option<f64>,

    /// Seed clustering threshold, or `auto`
    #[arg(long)]
    pub t_cluster: Option<String>,

    /// Pixel budget per partition cluster
    #[arg(long)]
    pub superpixel_area: Option<usize>,

    /// Seed for every random choice in the run
    #[arg(long)]
    pub seed: Option<u64>,

    /// Write per-stage artifacts next to the output
    #[arg(long)]
    pub emit_intermediates: bool,

    /// Last correspondence stage to run
    #[arg(long, value_parser = ["seeds", "partition", "match"])]
    pub stop_after: Option<String>,

    /// Comma list of enabled feature kinds (color,distance,texture,patch,gradient)
    #[arg(long)]
    pub features: Option<String>,

    /// Uniform rescale applied to both images and the matches before the run
    #[arg(long)]
    pub pre_scale: Option<f64>,

    #[arg(long)]
    pub patch_side: Option<usize>,

    #[arg(long)]
    pub neighbors: Option<usize>,

    #[arg(long)]
    pub stride: Option<usize>,

    #[arg(long)]
    pub epsilon_edge: Option<f64>,

    #[arg(long)]
    pub guided_radius: Option<usize>,

    #[arg(long)]
    pub guided_eps: Option<f64>,

    #[arg(long)]
    pub sigma_floor: Option<f64>,

    #[arg(long)]
    pub log_floor: Option<f64>,

    #[arg(long)]
    pub lambda_m: Option<f64>,

    #[arg(long)]
    pub lambda_t: Option<f64>,

    #[arg(long)]
    pub lambda_c: Option<f64>,

    #[arg(long)]
    pub lambda_dv: Option<f64>,

    #[arg(long)]
    pub lambda_s: Option<f64>,

    #[arg(long)]
    pub lambda_la: Option<f64>,

    #[arg(long)]
    pub lambda_lr: Option<f64>,

    #[arg(long)]
    pub n_alpha: Option<f64>,

    #[arg(long)]
    pub n_beta: Option<f64>,
}

/// Failure category; the prefix tells the user which input to fix.
#[derive(Debug)]
pub enum CliError {
    Matches(String),
    Image(String),
    Config(String),
    Pipeline(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Matches(m) => write!(f, "matches: {m}"),
            CliError::Image(m) => write!(f, "image: {m}"),
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Pipeline(m) => write!(f, "pipeline: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn build_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        config::apply_file(&mut cfg, &text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    }
    if let Some(v) = cli.match_fraction {
        cfg.match_fraction = v;
    }
    if let Some(v) = &cli.t_cluster {
        cfg.t_cluster = if v == "auto" {
            None
        } else {
            Some(v.parse::<f64>().map_err(|_| {
                CliError::Config(format!("--t-cluster expects a number or `auto`, got {v:?}"))
            })?)
        };
    }
    if let Some(v) = cli.superpixel_area {
        cfg.target_superpixel_area = v;
    }
    if let Some(v) = cli.seed {
        cfg.rng_seed = v;
    }
    if let Some(v) = &cli.stop_after {
        cfg.stop_after = config::parse_stop_after(v).map_err(|e| CliError::Config(e.to_string()))?;
    }
    if let Some(v) = &cli.features {
        cfg.toggles = config::parse_features(v).map_err(|e| CliError::Config(e.to_string()))?;
    }
    macro_rules! override_field {
        ($($flag:ident => $($path:ident).+),* $(,)?) => {
            $(if let Some(v) = cli.$flag { cfg.$($path).+ = v; })*
        };
    }
    override_field!(
        patch_side => patch_side,
        neighbors => neighbors,
        stride => stride,
        epsilon_edge => epsilon_edge,
        guided_radius => guided_radius,
        guided_eps => guided_eps,
        sigma_floor => sigma_floor,
        log_floor => log_floor,
        lambda_m => weights.lambda_m,
        lambda_t => weights.lambda_t,
        lambda_c => weights.lambda_c,
        lambda_dv => weights.lambda_dv,
        lambda_s => weights.lambda_s,
        lambda_la => weights.lambda_la,
        lambda_lr => weights.lambda_lr,
        n_alpha => weights.n_alpha,
        n_beta => weights.n_beta,
    );
    Ok(cfg)
}

fn map_pipeline_error(err: CoreError) -> CliError {
    match &err {
        CoreError::Stage { stage, source } if *stage == "load" || *stage == "filter" => {
            CliError::Matches(source.to_string())
        }
        CoreError::MatchParse { .. }
        | CoreError::MatchOutOfBounds { .. }
        | CoreError::InsufficientMatches { .. } => CliError::Matches(err.to_string()),
        CoreError::InvalidConfig(_) => CliError::Config(err.to_string()),
        _ => CliError::Pipeline(err.to_string()),
    }
}

fn stage_path(output: &Path, stage: &str, ext: &str) -> PathBuf {
    output.with_extension(format!("{stage}.{ext}"))
}

/// Runs one invocation; returns the rendered report for standard output.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let pre_scale = cli.pre_scale.unwrap_or(1.0);
    if !(pre_scale.is_finite() && pre_scale > 0.0) {
        return Err(CliError::Config(format!(
            "--pre-scale must be a positive factor, got {pre_scale}"
        )));
    }
    let cfg = build_config(cli)?;

    let input = imgio::load_image(&cli.input, pre_scale).map_err(|e| CliError::Image(format!("{e:#}")))?;
    let reference =
        imgio::load_image(&cli.reference, pre_scale).map_err(|e| CliError::Image(format!("{e:#}")))?;
    let matches_text = fs::read_to_string(&cli.matches)
        .map_err(|e| CliError::Matches(format!("cannot read {}: {e}", cli.matches.display())))?;
    let matches_text = imgio::rescale_matches(
        &matches_text,
        pre_scale,
        (input.height(), input.width()),
        (reference.height(), reference.width()),
    );

    let out = pipeline::run(
        &input,
        &reference,
        &matches_text,
        &cfg,
        cli.emit_intermediates,
    )
    .map_err(map_pipeline_error)?;

    imgio::save_png(&out.image, &cli.output).map_err(|e| CliError::Image(format!("{e:#}")))?;

    if let Some(inter) = &out.intermediates {
        let overlay = imgio::render_match_overlay(&input, &inter.matches);
        imgio::save_png(&overlay, &stage_path(&cli.output, "matches", "png"))
            .map_err(|e| CliError::Image(format!("{e:#}")))?;
        imgio::save_png(
            &imgio::render_label_map(&inter.labels_in),
            &stage_path(&cli.output, "labels_in", "png"),
        )
        .map_err(|e| CliError::Image(format!("{e:#}")))?;
        imgio::save_png(
            &imgio::render_label_map(&inter.labels_ref),
            &stage_path(&cli.output, "labels_ref", "png"),
        )
        .map_err(|e| CliError::Image(format!("{e:#}")))?;
        imgio::save_png(
            &imagecore::lab_to_rgb(&inter.pre_filter),
            &stage_path(&cli.output, "prefilter", "png"),
        )
        .map_err(|e| CliError::Image(format!("{e:#}")))?;

        let mut corr = String::new();
        for input_id in 0..inter.labels_in.superpixel_count() {
            let ref_id = inter
                .table
                .resolve(input_id)
                .expect("table resolves every input superpixel");
            corr.push_str(&format!(
                "{input_id} {ref_id} {:.6e}\n",
                inter.affinity[input_id][ref_id]
            ));
        }
        let corr_path = stage_path(&cli.output, "corr", "txt");
        fs::write(&corr_path, corr)
            .map_err(|e| CliError::Pipeline(format!("cannot write {}: {e}", corr_path.display())))?;
    }

    Ok(out.report.render())
}
