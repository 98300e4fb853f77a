//! `bodyfit colormatch {stats, apply}`.

use std::path::{Path, PathBuf};

use bodyfit::color::{compute_texture_stats, match_moments, TextureStats};
use clap::Args;
use image::ImageReader;
use serde_json::json;

use crate::context::{require_path, write_json, CliError, CliResult, Context, EXIT_OK};

fn read_rgb(path: &Path) -> CliResult<(Vec<[f64; 3]>, u32, u32)> {
    let img = ImageReader::open(path)
        .map_err(|e| CliError::input("image", format!("{}: {e}", path.display())))?
        .decode()
        .map_err(|e| CliError::input("image", format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img
        .pixels()
        .map(|p| [p.0[0] as f64, p.0[1] as f64, p.0[2] as f64])
        .collect();
    Ok((pixels, w, h))
}

/// Mask pixels with luma >= 128 select the skin region.
fn read_mask(path: &Path, w: u32, h: u32) -> CliResult<Vec<bool>> {
    let img = ImageReader::open(path)
        .map_err(|e| CliError::input("mask", format!("{}: {e}", path.display())))?
        .decode()
        .map_err(|e| CliError::input("mask", format!("{}: {e}", path.display())))?
        .to_luma8();
    if img.dimensions() != (w, h) {
        return Err(CliError::input(
            "mask",
            format!(
                "mask is {:?}, texture is {:?}",
                img.dimensions(),
                (w, h)
            ),
        ));
    }
    Ok(img.pixels().map(|p| p.0[0] >= 128).collect())
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, default_value = "texture_stats.json")]
    pub output: String,
}

pub fn stats(ctx: &Context, args: StatsArgs) -> CliResult<u8> {
    require_path(&args.image, "image")?;
    require_path(&args.mask, "mask")?;
    let echo = ctx.echo_config(
        "colormatch stats",
        json!({"image": args.image, "mask": args.mask, "output": args.output}),
    );
    let (pixels, w, h) = read_rgb(&args.image)?;
    let mask = read_mask(&args.mask, w, h)?;
    let stats = compute_texture_stats(&pixels, &mask)?;
    write_json(
        &ctx.out_path(&args.output),
        &json!({"config": echo, "stats": stats}),
    )?;
    Ok(EXIT_OK)
}

#[derive(Args)]
pub struct ApplyArgs {
    /// Body texture PNG to adjust.
    #[arg(long)]
    pub body: PathBuf,
    /// Skin mask PNG for the body texture.
    #[arg(long)]
    pub mask: PathBuf,
    /// Face stats JSON (from `colormatch stats`).
    #[arg(long)]
    pub face_stats: PathBuf,
    #[arg(long, default_value = "matched.png")]
    pub output: String,
}

pub fn apply(ctx: &Context, args: ApplyArgs) -> CliResult<u8> {
    require_path(&args.body, "body")?;
    require_path(&args.mask, "mask")?;
    require_path(&args.face_stats, "face-stats")?;
    let echo = ctx.echo_config(
        "colormatch apply",
        json!({
            "body": args.body,
            "mask": args.mask,
            "face_stats": args.face_stats,
            "output": args.output,
        }),
    );
    let (pixels, w, h) = read_rgb(&args.body)?;
    let mask = read_mask(&args.mask, w, h)?;
    let stats_file: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&args.face_stats)?)
            .map_err(|e| CliError::input("face-stats", e.to_string()))?;
    // Accept either a bare TextureStats or the `colormatch stats` output.
    let face: TextureStats = if stats_file.get("stats").is_some() {
        serde_json::from_value(stats_file["stats"].clone())
            .map_err(|e| CliError::input("face-stats", e.to_string()))?
    } else {
        serde_json::from_value(stats_file)
            .map_err(|e| CliError::input("face-stats", e.to_string()))?
    };
    let adjusted = match_moments(&pixels, &face, &mask)?;
    let mut img = image::RgbImage::new(w, h);
    for (i, p) in img.pixels_mut().enumerate() {
        for c in 0..3 {
            p.0[c] = adjusted[i][c].round().clamp(0.0, 255.0) as u8;
        }
    }
    let out = ctx.out_path(&args.output);
    img.save(&out)
        .map_err(|e| CliError::input("write", e.to_string()))?;
    let post = compute_texture_stats(&adjusted, &mask)?;
    write_json(
        &ctx.out_path("colormatch_report.json"),
        &json!({"config": echo, "target": face, "result": post, "output": out}),
    )?;
    Ok(EXIT_OK)
}
