use std::path::PathBuf;

use awmi::diffops::{BoundaryPolicy, DiffConfig, KernelNormalization};
use awmi::invariants::FeatureConfig;
use awmi::moments::DmKey;
use awmi::retrieval::Placement;
use awmi::AffineParams;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "awmi",
    version,
    about = "Affine weighted moment invariants of grayscale images"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// Gaussian scale of the derivative kernels.
    #[arg(long, global = true, default_value_t = 3.0)]
    pub sigma: f64,
    /// Odd kernel width in pixels.
    #[arg(long, global = true, default_value_t = 9)]
    pub kernel_size: usize,
    /// reflect | zero
    #[arg(long, global = true, default_value = "reflect")]
    pub boundary: BoundaryPolicy,
    /// Derivative kernel: raw | fit2 | fit4 | ...
    #[arg(long, global = true, default_value = "fit4")]
    pub kernel: KernelNormalization,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Where result files go. Subcommands that default to stdout write there
    /// only when this is set.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

impl Common {
    pub fn diff(&self) -> DiffConfig {
        DiffConfig {
            sigma: self.sigma,
            kernel_size: self.kernel_size,
            boundary: self.boundary,
            normalization: self.kernel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    Awmi,
    Ami,
    Both,
}

impl FeatureSet {
    pub fn config(self, diff: DiffConfig) -> FeatureConfig {
        match self {
            FeatureSet::Awmi => FeatureConfig::awmi(),
            FeatureSet::Ami => FeatureConfig::ami(),
            FeatureSet::Both => FeatureConfig::both(),
        }
        .with_diff(diff)
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Awmi => "awmi",
            FeatureSet::Ami => "ami",
            FeatureSet::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Blobs,
    Shape,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase", tag = "subcommand")]
pub enum Command {
    /// Invariant vector of each input image.
    Features {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = FeatureSet::Awmi)]
        features: FeatureSet,
    },
    /// Apply an affine transform and write a binary PGM.
    Warp {
        input: PathBuf,
        /// a11,a12,a21,a22,t1,t2 mapping source to output coordinates.
        #[arg(long, conflicts_with = "table4_row", allow_hyphen_values = true)]
        transform: Option<AffineParams>,
        /// Built-in transform 1..=5.
        #[arg(long)]
        table4_row: Option<usize>,
        #[arg(long, default_value = "literal")]
        placement: Placement,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Geometric, central and differential moments as JSON.
    Moments {
        input: PathBuf,
        /// Highest p+q for m_pq and u_pq.
        #[arg(long, default_value_t = 3)]
        order: u8,
        /// Differential moment p,q,m,n or p,q,m,n,r,s,t; repeatable.
        #[arg(long = "dm")]
        dm: Vec<DmKey>,
    },
    /// Compare closed forms against the brute-force oracle.
    Verify {
        /// Invariant id, comma list, or "all".
        #[arg(long, default_value = "all")]
        invariant: String,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Override the per-target tolerance.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Spread of each invariant across affine variants of base images.
    Stability {
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        /// Use this many generated blob images instead of inputs.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 512)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// "table4" or ';'-separated a11,a12,a21,a22,t1,t2 tuples.
        #[arg(long, default_value = "table4", allow_hyphen_values = true)]
        transforms: String,
        #[arg(long, default_value = "recenter")]
        placement: Placement,
        #[arg(long, value_enum, default_value_t = FeatureSet::Both)]
        features: FeatureSet,
    },
    /// Leave-one-out retrieval with precision/recall curves.
    Retrieve {
        /// Directory of class subdirectories. Without it a synthetic dataset
        /// is generated.
        #[arg(long, env = "AWMI_DATASET")]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "awmi,ami")]
        features: Vec<FeatureSet>,
        #[arg(long, default_value_t = 20)]
        classes: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "recenter")]
        placement: Placement,
    },
    /// Generate a synthetic image, or a whole retrieval dataset.
    Synth {
        #[arg(long, value_enum, default_value_t = SynthKind::Blobs)]
        kind: SynthKind,
        #[arg(long, default_value_t = 512)]
        width: usize,
        #[arg(long, default_value_t = 512)]
        height: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        count: usize,
        #[arg(long, short, required_unless_present = "dataset_dir")]
        output: Option<PathBuf>,
        /// Write `<dir>/<class>/v<k>.pgm` for the retrieval dataset.
        #[arg(long, conflicts_with = "output")]
        dataset_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        classes: usize,
    },
}
