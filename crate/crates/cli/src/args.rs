use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hyperflow::eval::Matcher;
use hyperflow::{
    LayerGeometry, LayerSet, LayerSpec, OffsetNormalizer, PckConfig, PckReference, RhmConfig,
};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "hyperflow",
    version,
    about = "Hyperpixel flow: multi-layer feature matching and keypoint transfer"
)]
pub struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true, env = "HYPERFLOW_THREADS")]
    pub threads: Option<usize>,

    /// Output format for reports.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Match two feature stacks and write the dense flow.
    Match(MatchArgs),
    /// Evaluate keypoint transfer (PCK) over an annotation file.
    Eval(EvalArgs),
    /// Beam search for the best layer combination on validation pairs.
    Search(SearchArgs),
    /// Time the matching kernel on one pair of stacks.
    Bench(BenchArgs),
    /// Write deterministic synthetic feature stacks.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct RhmArgs {
    /// Exponent applied to the rectified cosine similarity.
    #[arg(long, default_value_t = 3)]
    pub exponent: u32,
    /// Offset histogram bins, `N` or `NYxNX`.
    #[arg(long, default_value = "10")]
    pub bins: String,
    /// Normalize offsets by this pixel range instead of the target image size.
    #[arg(long)]
    pub offset_range: Option<f64>,
    /// Matching kernel.
    #[arg(long, value_enum, default_value_t = MatcherArg::Rhm)]
    pub matcher: MatcherArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MatcherArg {
    Rhm,
    /// Appearance similarity only, no geometric voting.
    Nn,
}

impl RhmArgs {
    pub fn config(&self) -> Result<RhmConfig, CliError> {
        let (bins_y, bins_x) = match self.bins.split_once(['x', 'X']) {
            Some((y, x)) => (parse_count(y, "--bins")?, parse_count(x, "--bins")?),
            None => {
                let n = parse_count(&self.bins, "--bins")?;
                (n, n)
            }
        };
        let cfg = RhmConfig {
            exponent: self.exponent,
            bins_y,
            bins_x,
            normalizer: match self.offset_range {
                Some(r) => OffsetNormalizer::FixedRange(r),
                None => OffsetNormalizer::TargetImageDims,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn matcher(&self) -> Matcher {
        match self.matcher {
            MatcherArg::Rhm => Matcher::Rhm,
            MatcherArg::Nn => Matcher::NnOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct PckArgs {
    /// PCK threshold as a fraction of the reference size.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Reference size for the threshold: target image or target bounding box.
    #[arg(long = "ref", value_enum, default_value_t = RefArg::Img)]
    pub reference: RefArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RefArg {
    Img,
    Bbox,
}

impl PckArgs {
    pub fn config(&self) -> Result<PckConfig, CliError> {
        let cfg = PckConfig {
            alpha: self.alpha,
            reference: match self.reference {
                RefArg::Img => PckReference::Image,
                RefArg::Bbox => PckReference::BBox,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    pub src: PathBuf,
    pub tgt: PathBuf,
    /// Comma-separated layer ids; the smallest id is the base layer.
    #[arg(long)]
    pub layers: String,
    #[command(flatten)]
    pub rhm: RhmArgs,
    /// Write the flow here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also dump the full confidence tensor (binary, `HCT1`).
    #[arg(long)]
    pub confidence: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON-lines pair annotations.
    pub annotations: PathBuf,
    /// Directory holding `<image_id>.hfm` files.
    #[arg(long)]
    pub stack_dir: PathBuf,
    #[arg(long)]
    pub layers: String,
    #[command(flatten)]
    pub rhm: RhmArgs,
    #[command(flatten)]
    pub pck: PckArgs,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// JSON-lines validation annotations.
    pub annotations: PathBuf,
    #[arg(long)]
    pub stack_dir: PathBuf,
    /// Candidate layer ids; defaults to every layer of the first stack.
    #[arg(long)]
    pub candidates: Option<String>,
    /// Base layer candidates; defaults to the candidates with the finest grid.
    #[arg(long)]
    pub base_candidates: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub beam: usize,
    #[arg(long, default_value_t = 8)]
    pub max_layers: usize,
    /// Write per-iteration best scores as CSV for plotting.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    #[command(flatten)]
    pub rhm: RhmArgs,
    #[command(flatten)]
    pub pck: PckArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub src: PathBuf,
    pub tgt: PathBuf,
    #[arg(long)]
    pub layers: String,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[command(flatten)]
    pub rhm: RhmArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: u64,
    /// Layers as `ID:CxHxW:stride:offset:rf`, comma separated.
    #[arg(long)]
    pub spec: String,
    /// Image size `HxW` in pixels.
    #[arg(long)]
    pub image_dims: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a copy translated by `DY,DX` cells.
    #[arg(long, allow_hyphen_values = true, requires = "out_target")]
    pub shift: Option<String>,
    #[arg(long, requires = "shift")]
    pub out_target: Option<PathBuf>,
}

fn parse_count(s: &str, flag: &str) -> Result<usize, CliError> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{flag}: expected a positive integer, got '{s}'")))
}

pub fn parse_ids(s: &str, flag: &str) -> Result<Vec<u32>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| CliError::Config(format!("{flag}: '{t}' is not a layer id")))
        })
        .collect()
}

pub fn parse_layers(s: &str) -> Result<LayerSet, CliError> {
    Ok(LayerSet::from_ids(&parse_ids(s, "--layers")?)?)
}

fn parse_pair<T: std::str::FromStr>(s: &str, sep: &[char], flag: &str) -> Result<(T, T), CliError> {
    let bad = || CliError::Config(format!("{flag}: cannot parse '{s}'"));
    let (a, b) = s.split_once(sep).ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

pub fn parse_dims(s: &str) -> Result<(u32, u32), CliError> {
    parse_pair(s, &['x', 'X'], "--image-dims")
}

pub fn parse_shift(s: &str) -> Result<(i32, i32), CliError> {
    parse_pair(s, &[','], "--shift")
}

/// Parses `ID:CxHxW:stride:offset:rf[,...]`.
pub fn parse_spec(s: &str) -> Result<Vec<LayerSpec>, CliError> {
    s.split(',')
        .map(|item| {
            let bad = || CliError::Config(format!("--spec: cannot parse layer '{item}'"));
            let parts: Vec<&str> = item.trim().split(':').collect();
            let [id, shape, stride, offset, rf] = parts[..] else {
                return Err(bad());
            };
            let shape: Vec<usize> = shape
                .split(['x', 'X'])
                .map(|v| v.parse().map_err(|_| bad()))
                .collect::<Result<_, _>>()?;
            let [c, h, w] = shape[..] else {
                return Err(bad());
            };
            let num = |v: &str| v.parse::<f32>().map_err(|_| bad());
            let geometry = LayerGeometry::isotropic(num(stride)?, num(offset)?, num(rf)?);
            Ok(LayerSpec::new(
                id.parse().map_err(|_| bad())?,
                c,
                h,
                w,
                geometry,
            ))
        })
        .collect()
}
