use std::path::{Path, PathBuf};

use awmi::diffops::derivative_stack;
use awmi::invariants::{feature_vector, FeatureEntry, InvariantId};
use awmi::moments::{central_moment, geometric_moment, DmTable};
use awmi::oracle::{verify_expansion_with, VerifyReport, VerifyTarget};
use awmi::raster::{generate_synthetic, load_image, warp_affine, write_pgm, SyntheticSpec, TABLE4};
use awmi::retrieval::{
    load_dataset, placed_transform, run_retrieval, run_stability, synthetic_dataset, DatasetConfig,
    PrCurve, StabilityConfig, RECALL_LEVELS,
};
use awmi::{AffineParams, Raster};
use serde::Serialize;

use crate::args::{Cli, Command, FeatureSet, Format, SynthKind};
use crate::output::{csv_document, emit, json_document, num, write_atomic};
use crate::CliError;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.common.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    cli.common.diff().validate()?;
    match &cli.command {
        Command::Features { inputs, features } => cmd_features(cli, inputs, *features),
        Command::Warp {
            input,
            transform,
            table4_row,
            placement,
            width,
            height,
            output,
        } => {
            let params = match (transform, table4_row) {
                (Some(t), None) => *t,
                (None, Some(k)) if (1..=TABLE4.len()).contains(k) => TABLE4[k - 1],
                (None, Some(k)) => {
                    return Err(CliError::Usage(format!(
                        "--table4-row must be 1..=5, got {k}"
                    )))
                }
                _ => return Err(CliError::Usage("give --transform or --table4-row".into())),
            };
            let src = load_image(input)?;
            let placed = placed_transform(&src, &params, *placement)?;
            let out = warp_affine(
                &src,
                &placed,
                width.unwrap_or(src.width()),
                height.unwrap_or(src.height()),
            )?;
            save_pgm(&out, output)
        }
        Command::Moments { input, order, dm } => cmd_moments(cli, input, *order, dm),
        Command::Verify {
            invariant,
            trials,
            seed,
            tolerance,
        } => cmd_verify(cli, invariant, *trials, *seed, *tolerance),
        Command::Stability {
            inputs,
            synthetic,
            size,
            seed,
            transforms,
            placement,
            features,
        } => {
            let images = stability_images(inputs, *synthetic, *size, *seed)?;
            let transforms = parse_transforms(transforms)?;
            let cfg = StabilityConfig {
                features: features.config(cli.common.diff()),
                placement: *placement,
                ..StabilityConfig::default()
            };
            let report = run_stability(&images, &transforms, &cfg)?;
            let notes: Vec<String> = report.warnings().map(|w| format!("warning: {w}")).collect();
            for w in &notes {
                eprintln!("{w}");
            }
            let body = match cli.common.format {
                Format::Json => json_document(cli, &notes, &report),
                Format::Csv => {
                    let mut columns = vec!["image".to_string(), "invariant".to_string()];
                    if let Some(first) = report.images.first() {
                        columns.extend(first.variants.iter().map(|v| v.label.clone()));
                    }
                    columns.push("error_pct".into());
                    let rows: Vec<Vec<String>> = report
                        .images
                        .iter()
                        .flat_map(|img| {
                            img.invariants.iter().map(|inv| {
                                let mut row = vec![img.image.clone(), inv.id.to_string()];
                                row.extend(inv.values.iter().map(|v| num(*v)));
                                row.push(num(inv.error_pct));
                                row
                            })
                        })
                        .collect();
                    csv_document(cli, &notes, &columns, &rows)
                }
            };
            let dir = output_dir(cli);
            emit(
                Some(&dir),
                &format!("stability.{}", cli.common.format.extension()),
                &body,
            )?;
            Ok(())
        }
        Command::Retrieve {
            dataset,
            features,
            classes,
            size,
            seed,
            placement,
        } => {
            let (images, skipped) = match dataset {
                Some(root) => load_dataset(root)?,
                None => (
                    synthetic_dataset(&DatasetConfig {
                        classes: *classes,
                        size: *size,
                        seed: *seed,
                        placement: *placement,
                    })?,
                    0,
                ),
            };
            let mut notes = vec![
                "precision: 11-point interpolated (max precision at recall >= level), averaged over queries; query excluded from its own ranking".to_string(),
                format!("images: {}, skipped: {skipped}", images.len()),
            ];
            if skipped > 0 {
                eprintln!("warning: skipped {skipped} unreadable file(s)");
                notes.push(format!("warning: skipped {skipped} unreadable file(s)"));
            }
            let mut curves: Vec<PrCurve> = Vec::new();
            for set in features {
                let res = run_retrieval(&images, &set.config(cli.common.diff()), set.name())?;
                curves.push(res.curve);
            }
            let body = match cli.common.format {
                Format::Json => json_document(cli, &notes, &curves),
                Format::Csv => {
                    let columns = ["recall", "precision", "method"].map(String::from);
                    let rows: Vec<Vec<String>> = curves
                        .iter()
                        .flat_map(|c| {
                            RECALL_LEVELS.iter().map(move |&r| {
                                vec![num(Some(r)), num(c.precision_at(r)), c.method.clone()]
                            })
                        })
                        .collect();
                    csv_document(cli, &notes, &columns, &rows)
                }
            };
            let dir = output_dir(cli);
            emit(
                Some(&dir),
                &format!("pr_curve.{}", cli.common.format.extension()),
                &body,
            )?;
            Ok(())
        }
        Command::Synth {
            kind,
            width,
            height,
            seed,
            count,
            output,
            dataset_dir,
            classes,
        } => {
            if let Some(dir) = dataset_dir {
                let images = synthetic_dataset(&DatasetConfig {
                    classes: *classes,
                    size: *width,
                    seed: *seed,
                    ..DatasetConfig::default()
                })?;
                for img in &images {
                    save_pgm(&img.raster, &dir.join(format!("{}.pgm", img.id)))?;
                }
                return Ok(());
            }
            let spec = match kind {
                SynthKind::Blobs => SyntheticSpec::random_blobs(*width, *height, *count, *seed),
                SynthKind::Shape => SyntheticSpec::shape_mask(*width, *height, *seed),
            };
            let out = output.as_ref().expect("clap requires --output");
            save_pgm(&generate_synthetic(&spec)?, out)
        }
    }
}

fn output_dir(cli: &Cli) -> PathBuf {
    cli.common
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("."))
}

fn save_pgm(raster: &Raster, path: &Path) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    write_pgm(raster, &mut bytes).expect("writing to memory");
    write_atomic(path, &bytes)
}

fn cmd_features(cli: &Cli, inputs: &[PathBuf], set: FeatureSet) -> Result<(), CliError> {
    let cfg = set.config(cli.common.diff());
    #[derive(Serialize)]
    struct Row {
        image: String,
        values: Vec<FeatureEntry>,
    }
    let mut rows = Vec::with_capacity(inputs.len());
    for path in inputs {
        let raster = load_image(path)?;
        let v = feature_vector(&raster, &cfg)?;
        rows.push(Row {
            image: path.display().to_string(),
            values: v.entries,
        });
    }
    let body = match cli.common.format {
        Format::Json => json_document(cli, &[], &rows),
        Format::Csv => {
            let mut columns = vec!["image".to_string()];
            columns.extend(cfg.ids.iter().map(|id| id.to_string()));
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let mut row = vec![r.image.clone()];
                    row.extend(r.values.iter().map(|e| num(e.value)));
                    row
                })
                .collect();
            csv_document(cli, &[], &columns, &table)
        }
    };
    emit(
        cli.common.output_dir.as_deref(),
        &format!("features.{}", cli.common.format.extension()),
        &body,
    )?;
    Ok(())
}

fn cmd_moments(
    cli: &Cli,
    input: &Path,
    order: u8,
    dm: &[awmi::moments::DmKey],
) -> Result<(), CliError> {
    let raster = load_image(input)?;
    let mut m = serde_json::Map::new();
    let mut u = serde_json::Map::new();
    for total in 0..=order as u32 {
        for q in 0..=total {
            let p = total - q;
            m.insert(format!("m{p}{q}"), geometric_moment(&raster, p, q).into());
            u.insert(format!("u{p}{q}"), central_moment(&raster, p, q)?.into());
        }
    }
    let mut d = serde_json::Map::new();
    if !dm.is_empty() {
        let stack = derivative_stack(&raster, &cli.common.diff())?;
        let table = DmTable::new(&raster, &stack, dm)?;
        for key in dm {
            d.insert(key.to_string(), table.get(*key).into());
        }
    }
    let data = serde_json::json!({ "geometric": m, "central": u, "differential": d });
    let body = json_document(cli, &[], &data);
    emit(cli.common.output_dir.as_deref(), "moments.json", &body)?;
    Ok(())
}

fn verify_targets(spec: &str) -> Result<Vec<VerifyTarget>, CliError> {
    if spec.trim().eq_ignore_ascii_case("all") {
        let mut all: Vec<VerifyTarget> = InvariantId::ALL
            .iter()
            .map(|&id| VerifyTarget::Invariant(id))
            .collect();
        all.extend([1, 3, 6].map(VerifyTarget::ZeroCore));
        return Ok(all);
    }
    spec.split(',')
        .map(|s| {
            s.parse::<VerifyTarget>()
                .map_err(|e| CliError::Usage(e.to_string()))
        })
        .collect()
}

fn cmd_verify(
    cli: &Cli,
    invariant: &str,
    trials: usize,
    seed: u64,
    tolerance: Option<f64>,
) -> Result<(), CliError> {
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let targets = verify_targets(invariant)?;
    let mut reports: Vec<VerifyReport> = targets
        .iter()
        .map(|&t| verify_expansion_with(t, trials, seed, &cli.common.diff()))
        .collect::<Result<_, _>>()?;
    if let Some(tol) = tolerance {
        if !(tol >= 0.0) {
            return Err(CliError::Usage(format!(
                "--tolerance must be >= 0, got {tol}"
            )));
        }
        for r in &mut reports {
            r.tolerance = tol;
            r.passed = r.max_deviation <= tol;
        }
    }
    let body = match cli.common.format {
        Format::Json => json_document(cli, &[], &reports),
        Format::Csv => {
            let columns = [
                "target",
                "trial",
                "width",
                "height",
                "closed_form",
                "oracle",
                "deviation",
                "tolerance",
                "passed",
            ]
            .map(String::from);
            let rows: Vec<Vec<String>> = reports
                .iter()
                .flat_map(|r| {
                    r.trials.iter().enumerate().map(move |(k, t)| {
                        vec![
                            r.target.clone(),
                            k.to_string(),
                            t.width.to_string(),
                            t.height.to_string(),
                            num(Some(t.closed_form)),
                            num(Some(t.oracle)),
                            num(Some(t.deviation)),
                            num(Some(r.tolerance)),
                            (t.deviation <= r.tolerance).to_string(),
                        ]
                    })
                })
                .collect();
            csv_document(cli, &[], &columns, &rows)
        }
    };
    emit(
        cli.common.output_dir.as_deref(),
        &format!("verify.{}", cli.common.format.extension()),
        &body,
    )?;
    for r in &reports {
        eprintln!(
            "{}: max deviation {:e} (tolerance {:e}) {}",
            r.target,
            r.max_deviation,
            r.tolerance,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.target.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::VerifyFailed(failed.join(", ")))
    }
}

fn stability_images(
    inputs: &[PathBuf],
    synthetic: Option<usize>,
    size: usize,
    seed: u64,
) -> Result<Vec<(String, Raster)>, CliError> {
    match (inputs.is_empty(), synthetic) {
        (false, None) => inputs
            .iter()
            .map(|p| Ok((p.display().to_string(), load_image(p)?)))
            .collect(),
        (true, Some(n)) if n > 0 => (0..n as u64)
            .map(|k| {
                let spec = SyntheticSpec::random_blobs(size, size, 3, seed + k);
                Ok((format!("blobs{}", seed + k), generate_synthetic(&spec)?))
            })
            .collect(),
        (false, Some(_)) => Err(CliError::Usage("use either --input or --synthetic".into())),
        _ => Err(CliError::Usage(
            "give --input <image> or --synthetic <n>".into(),
        )),
    }
}

fn parse_transforms(spec: &str) -> Result<Vec<AffineParams>, CliError> {
    if spec.trim().eq_ignore_ascii_case("table4") {
        return Ok(TABLE4.to_vec());
    }
    let out: Vec<AffineParams> = spec
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.parse::<AffineParams>()
                .map_err(|e| CliError::Usage(e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err(CliError::Usage("no transforms given".into()));
    }
    Ok(out)
}
