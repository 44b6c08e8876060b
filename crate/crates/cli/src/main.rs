//! Command-line front end for the matting engine: cost accounting,
//! parameter ledgers, forward passes over PNM images, compositing,
//! matte metrics, trimap generation, and the built-in self-check suite.
//!
//! Exit codes: 0 on success, 1 for I/O or validation failures (a
//! diagnostic goes to stderr), 2 for unknown flags or subcommands.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use ocmat_core::costmodel::{
    flops_ena, flops_ena_min, flops_nonlocal, gflops, gflops_truncated, ledger, optimal_k,
    AttentionVariant,
};
use ocmat_core::formats::{load_image, load_params, save_image};
use ocmat_core::losses::composite_image;
use ocmat_core::metrics::{metric_suite, trimap_from_alpha, unknown_mask_from_trimap};
use ocmat_core::network::class_trimap;
use ocmat_core::selftest;
use ocmat_core::{config, Model, Result, Tensor};

#[derive(Parser)]
#[command(name = "ocmat", version, about = "Two-branch image matting engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttentionArg {
    /// Dense non-local attention over every pair of sites.
    Nonlocal,
    /// Grouped two-stage attention (strided subsets, then local tiles).
    Ena,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    /// The grouped-attention refinement branch (the default architecture).
    Ena,
    /// The ablation that swaps in dense non-local attention.
    Dense,
}

#[derive(Subcommand)]
enum Cmd {
    /// Count attention FLOPs for given channel/spatial extents.
    Flops {
        /// Attention flavor to account for.
        #[arg(long, value_enum)]
        attention: AttentionArg,
        /// Channel count C.
        #[arg(long)]
        c: u64,
        /// Feature height H.
        #[arg(long)]
        h: u64,
        /// Feature width W.
        #[arg(long)]
        w: u64,
        /// Group count k (grouped attention only; defaults to the optimum).
        #[arg(long)]
        k: Option<u64>,
    },
    /// Emit the per-layer parameter and FLOP ledger as CSV.
    Params {
        /// Model config file (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Which attention variant to account for.
        #[arg(long, value_enum, default_value_t = VariantArg::Ena)]
        variant: VariantArg,
    },
    /// Run the full forward pass on one image and write matte and trimap.
    Forward {
        /// Model config file (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Input image (binary PPM, extents must match the config).
        #[arg(long)]
        image: PathBuf,
        /// Output path for the predicted matte (binary PGM).
        #[arg(long)]
        out_alpha: PathBuf,
        /// Output path for the predicted trimap (PGM, 0/128/255).
        #[arg(long)]
        out_trimap: PathBuf,
        /// Parameter archive; omitted means seeded random initialization.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Overrides the config's initialization seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Blend foreground over background through a matte.
    Composite {
        /// Foreground image (PPM).
        #[arg(long)]
        fg: PathBuf,
        /// Background image (PPM, same extents).
        #[arg(long)]
        bg: PathBuf,
        /// Matte (PGM, same extents).
        #[arg(long)]
        alpha: PathBuf,
        /// Output path for the blended image.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predicted matte against ground truth.
    Metrics {
        /// Predicted matte (PGM).
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth matte (PGM, same extents).
        #[arg(long)]
        gt: PathBuf,
        /// Optional trimap (PGM); scores only its unknown band.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Derive a trimap from a ground-truth matte by dilating its
    /// fractional region.
    Trimap {
        /// Ground-truth matte (PGM).
        #[arg(long)]
        alpha: PathBuf,
        /// Output path for the trimap (PGM, 0/128/255).
        #[arg(long)]
        out: PathBuf,
        /// Dilation radius in pixels.
        #[arg(long, default_value_t = 25)]
        dilate: usize,
    },
    /// Run every built-in correctness check and report each on one line.
    Selftest,
    /// Time forward passes (informational only, not a correctness check).
    Bench {
        /// Model config file (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Number of timed passes.
        #[arg(long, default_value_t = 3)]
        runs: usize,
    },
}

fn flops_line(label: &str, flops: u128) -> String {
    format!("{}: {} FLOPs = {} GFLOPs", label, flops, gflops(flops))
}

fn cmd_flops(attention: AttentionArg, c: u64, h: u64, w: u64, k: Option<u64>) -> Result<()> {
    match attention {
        AttentionArg::Nonlocal => {
            if k.is_some() {
                return Err(ocmat_core::Error::InvalidArgument(
                    "--k applies only to --attention ena".into(),
                ));
            }
            let f = flops_nonlocal(c, h, w);
            println!("dense non-local attention at C={}, H={}, W={} ({} sites)", c, h, w, h * w);
            println!("{}", flops_line("total", f));
            let (trunc, round) = (gflops_truncated(f), gflops(f));
            if trunc != round {
                println!("note: truncation instead of rounding displays this as {} GFLOPs", trunc);
            }
        }
        AttentionArg::Ena => {
            let k = match k {
                Some(k) => k,
                None => optimal_k(h, w)?,
            };
            let parts = flops_ena(c, h, w, k)?;
            println!("grouped attention at C={}, H={}, W={}, k={} ({} sites)", c, h, w, k, h * w);
            println!("{}", flops_line("projection", parts.projection));
            if parts.interaction.is_integer() {
                println!("{}", flops_line("interaction", parts.interaction.num()));
            } else {
                println!(
                    "interaction: {} FLOPs (reported as the floor, {})",
                    parts.interaction,
                    parts.interaction.floor()
                );
            }
            println!("{}", flops_line("total", parts.total_floor()));
            let min = flops_ena_min(c, h, w)?;
            let best = optimal_k(h, w)?;
            println!(
                "best k for these extents: {} ({}{})",
                best,
                flops_line("total", min.flops),
                if min.exact { "" } else { ", rounded" }
            );
        }
    }
    Ok(())
}

fn cmd_params(config: &PathBuf, variant: VariantArg) -> Result<()> {
    let cfg = config::read_config(config)?;
    let variant = match variant {
        VariantArg::Ena => AttentionVariant::Ena,
        VariantArg::Dense => AttentionVariant::Dense,
    };
    print!("{}", ledger(&cfg, variant)?.to_csv());
    Ok(())
}

fn cmd_forward(
    config: &PathBuf,
    image: &PathBuf,
    out_alpha: &PathBuf,
    out_trimap: &PathBuf,
    weights: Option<&PathBuf>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = config::read_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let model = match weights {
        Some(path) => Model::new(cfg, load_params(path)?)?,
        None => Model::from_config(&cfg)?,
    };
    let input = load_image(image)?;
    let (alpha, logits) = model.forward(&input)?;
    save_image(out_alpha, &alpha)?;
    save_image(out_trimap, &class_trimap(&logits.t)?)?;
    println!("matte  -> {}", out_alpha.display());
    println!("trimap -> {}", out_trimap.display());
    Ok(())
}

fn cmd_composite(fg: &PathBuf, bg: &PathBuf, alpha: &PathBuf, out: &PathBuf) -> Result<()> {
    let fg = load_image(fg)?;
    let bg = load_image(bg)?;
    let alpha = load_image(alpha)?;
    save_image(out, &composite_image(&fg, &bg, &alpha)?)?;
    println!("composite -> {}", out.display());
    Ok(())
}

fn cmd_metrics(pred: &PathBuf, gt: &PathBuf, mask: Option<&PathBuf>) -> Result<()> {
    let pred = load_image(pred)?;
    let gt = load_image(gt)?;
    let mask = match mask {
        Some(path) => Some(unknown_mask_from_trimap(&load_image(path)?)?),
        None => None,
    };
    let report = metric_suite(&pred, &gt, mask.as_ref())?;
    println!("sad={}", report.sad);
    println!("mse={}", report.mse);
    println!("grad={}", report.grad);
    println!("conn={}", report.conn);
    Ok(())
}

fn cmd_trimap(alpha: &PathBuf, out: &PathBuf, dilate: usize) -> Result<()> {
    let alpha = load_image(alpha)?;
    save_image(out, &trimap_from_alpha(&alpha, dilate)?)?;
    println!("trimap -> {}", out.display());
    Ok(())
}

fn cmd_selftest() -> ExitCode {
    let checks = selftest::run_all();
    let failed = checks.iter().filter(|c| !c.passed).count();
    for check in &checks {
        println!("{}", check);
    }
    if failed > 0 {
        eprintln!("{} of {} checks failed", failed, checks.len());
        ExitCode::from(1)
    } else {
        println!("all {} checks passed", checks.len());
        ExitCode::SUCCESS
    }
}

fn cmd_bench(config: &PathBuf, runs: usize) -> Result<()> {
    let cfg = config::read_config(config)?;
    let build_start = Instant::now();
    let model = Model::from_config(&cfg)?;
    println!("model built in {:.1} ms", build_start.elapsed().as_secs_f64() * 1e3);
    let s = cfg.input_size;
    let data: Vec<f32> = (0..3 * s * s)
        .map(|i| ((i % s) + (i / s) % s) as f32 / (2 * s) as f32)
        .collect();
    let input = Tensor::new(vec![1, 3, s, s], data)?;
    for run in 1..=runs.max(1) {
        let start = Instant::now();
        model.forward(&input)?;
        println!("run {}: {:.1} ms", run, start.elapsed().as_secs_f64() * 1e3);
    }
    println!("informational only; wall-clock varies with hardware and build profile");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Flops { attention, c, h, w, k } => cmd_flops(*attention, *c, *h, *w, *k),
        Cmd::Params { config, variant } => cmd_params(config, *variant),
        Cmd::Forward { config, image, out_alpha, out_trimap, weights, seed } => {
            cmd_forward(config, image, out_alpha, out_trimap, weights.as_ref(), *seed)
        }
        Cmd::Composite { fg, bg, alpha, out } => cmd_composite(fg, bg, alpha, out),
        Cmd::Metrics { pred, gt, mask } => cmd_metrics(pred, gt, mask.as_ref()),
        Cmd::Trimap { alpha, out, dilate } => cmd_trimap(alpha, out, *dilate),
        Cmd::Selftest => return cmd_selftest(),
        Cmd::Bench { config, runs } => cmd_bench(config, *runs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(1)
        }
    }
}
