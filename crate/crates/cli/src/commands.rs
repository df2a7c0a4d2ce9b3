use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use spgru_core::data::{
    deviation_suite, generate, generate_from, load_idx, save_dataset, write_pgm, SequenceBatch, SuiteKind,
};
use spgru_core::mc_oracle::{default_suite, OracleReport};
use spgru_core::metrics::{measure_suite, strictly_increasing, UncertaintyMetric};
use spgru_core::spgru::{unroll, CheckpointFile, NetworkParams};
use spgru_core::training::{train, TrainOutput, CHECKPOINT_FILE};
use spgru_core::MomentTensor;

use crate::config::RunConfig;
use crate::error::CliError;

pub const CONFIG_COPY: &str = "config.toml";
pub const MAPS_SIDECAR: &str = "maps.txt";
pub const ORACLE_TABLE: &str = "oracle.tsv";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Sequences described by `[data]`, drawn from IDX digits when configured.
fn training_data(cfg: &RunConfig, n: usize) -> Result<SequenceBatch, CliError> {
    let traj = cfg.data.to_config();
    match (&cfg.data.idx_images, &cfg.data.idx_labels) {
        (Some(images), Some(labels)) => {
            let keep = traj.digit.map(|d| vec![d]);
            let pool = load_idx(images, labels, keep.as_deref())?;
            Ok(generate_from(&traj, n, Some(&pool))?)
        }
        _ => Ok(generate(&traj, n)?),
    }
}

fn load_network(cfg: &RunConfig, checkpoint: &Path) -> Result<NetworkParams, CliError> {
    let file = CheckpointFile::load(checkpoint)
        .map_err(|e| CliError::Io(format!("cannot load checkpoint {}: {e}", checkpoint.display())))?;
    let frame = cfg.data.frame_size * cfg.data.frame_size;
    if file.frame_dim != frame {
        return Err(CliError::Config(format!(
            "checkpoint was trained on {} pixels per frame, [data] gives {frame}",
            file.frame_dim
        )));
    }
    Ok(file.network(&cfg.network.to_config())?)
}

pub fn cmd_train(cfg: &RunConfig, config_text: Option<&str>, out: &Path, resume: bool) -> Result<String, CliError> {
    let data = training_data(cfg, cfg.train.sequences)?;
    create_dir(out)?;
    if let Some(text) = config_text {
        write_file(&out.join(CONFIG_COPY), text)?;
    }
    let target = TrainOutput {
        dir: out.to_path_buf(),
        resume,
    };
    let outcome = train(&cfg.network.to_config(), &cfg.train.to_config(), &data, Some(&target))?;
    let last = outcome.log.last();
    Ok(format!(
        "trained {} epochs ({} steps), final loss {}, checkpoint {}",
        last.map_or(0, |r| r.epoch),
        outcome.adam.step,
        last.map_or(f64::NAN, |r| r.loss),
        out.join(CHECKPOINT_FILE).display()
    ))
}

fn deviation_table(kind: SuiteKind, rows: &[(f64, UncertaintyMetric)]) -> (String, String, bool) {
    let averages: Vec<f64> = rows.iter().map(|(_, m)| m.average).collect();
    let increasing = strictly_increasing(&averages);
    let frames = rows.first().map_or(0, |(_, m)| m.per_frame.len());
    let mut levels = format!(
        "# suite={} strictly_increasing={}\nlevel\tvalue\taverage",
        kind.name(),
        if increasing { "yes" } else { "no" }
    );
    for t in 1..=frames {
        let _ = write!(levels, "\tframe_{t}");
    }
    levels.push('\n');
    let mut sequences = String::from("level\tvalue\tsequence\taverage\n");
    for (i, (value, m)) in rows.iter().enumerate() {
        let _ = write!(levels, "{i}\t{value}\t{:.12e}", m.average);
        for f in &m.per_frame {
            let _ = write!(levels, "\t{f:.12e}");
        }
        levels.push('\n');
        for (b, s) in m.per_sequence.iter().enumerate() {
            let _ = writeln!(sequences, "{i}\t{value}\t{b}\t{s:.12e}");
        }
    }
    (levels, sequences, increasing)
}

pub fn cmd_eval_deviation(
    cfg: &RunConfig,
    checkpoint: &Path,
    suites: &[SuiteKind],
    out: &Path,
) -> Result<String, CliError> {
    let net_cfg = cfg.network.to_config();
    let net = load_network(cfg, checkpoint)?.resolve()?;
    create_dir(out)?;
    let mut report = String::new();
    for &kind in suites {
        let levels = deviation_suite(&cfg.data.to_config(), kind, cfg.eval.sequences)?;
        let rows = measure_suite(&levels, &net_cfg, &net)?;
        let (table, per_seq, increasing) = deviation_table(kind, &rows);
        write_file(&out.join(format!("deviation_{}.tsv", kind.name())), &table)?;
        write_file(&out.join(format!("deviation_{}_sequences.tsv", kind.name())), per_seq)?;
        let _ = writeln!(report, "{kind} suite:", kind = kind.name());
        for (value, m) in &rows {
            let _ = writeln!(report, "  {value:>8}  {:.6e}", m.average);
        }
        let _ = writeln!(report, "  strictly increasing: {}", if increasing { "yes" } else { "no" });
    }
    Ok(report)
}

/// Frames of one sequence for map export: the reference data, or one level
/// of a deviation suite.
fn export_sequence(cfg: &RunConfig, suite: Option<(SuiteKind, usize)>, sequence: usize) -> Result<SequenceBatch, CliError> {
    match suite {
        None => training_data(cfg, sequence + 1),
        Some((kind, level)) => {
            let mut levels = deviation_suite(&cfg.data.to_config(), kind, sequence + 1)?;
            if level >= levels.len() {
                return Err(CliError::Config(format!(
                    "level {level} out of range, suite has {} levels",
                    levels.len()
                )));
            }
            Ok(levels.swap_remove(level).batch)
        }
    }
}

pub fn cmd_export_maps(
    cfg: &RunConfig,
    checkpoint: &Path,
    suite: Option<(SuiteKind, usize)>,
    sequence: usize,
    out: &Path,
) -> Result<String, CliError> {
    let net_cfg = cfg.network.to_config();
    let net = load_network(cfg, checkpoint)?.resolve()?;
    let data = export_sequence(cfg, suite, sequence)?;
    let unrolled = unroll(&data.time_major(&[sequence]), &net_cfg, &net)?;
    let frames: Vec<MomentTensor> = unrolled
        .prediction
        .or(unrolled.reconstruction)
        .expect("every mode has a head");
    let scale = frames
        .iter()
        .flat_map(|f| f.s.data().iter().copied())
        .fold(0.0, f64::max);
    let degenerate = scale == 0.0;
    let (w, h) = (data.width, data.height);
    create_dir(out)?;
    for (t, f) in frames.iter().enumerate() {
        let n = t + 1;
        write_pgm(&out.join(format!("mean_{n:02}.pgm")), w, h, f.m.data(), 1.0)?;
        write_pgm(&out.join(format!("var_{n:02}.pgm")), w, h, f.s.data(), scale)?;
    }
    let sidecar = format!(
        "frames = {}\nwidth = {w}\nheight = {h}\nmean_scale = 1\nvariance_scale = {scale:e}\ndegenerate = {degenerate}\n",
        frames.len()
    );
    write_file(&out.join(MAPS_SIDECAR), sidecar)?;
    Ok(format!(
        "wrote {} mean and {} variance maps to {} (variance scale {scale:e}{})",
        frames.len(),
        frames.len(),
        out.display(),
        if degenerate { ", degenerate" } else { "" }
    ))
}

pub fn cmd_oracle(cfg: &RunConfig, out: Option<&Path>) -> Result<String, CliError> {
    let k = cfg.network.nmm_constants();
    let reports = default_suite(&k, cfg.oracle.samples, cfg.oracle.seed)?;
    let mut table = String::from(OracleReport::HEADER);
    table.push('\n');
    for r in &reports {
        table.push_str(&r.row());
        table.push('\n');
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join(ORACLE_TABLE), &table)?;
    }
    let failed: Vec<&OracleReport> = reports.iter().filter(|r| !r.pass).collect();
    let summary = format!("{} checks, {} failed", reports.len(), failed.len());
    if failed.is_empty() {
        Ok(format!("{table}{summary}"))
    } else {
        let names: Vec<String> = failed
            .iter()
            .map(|r| format!("{} {} {}", r.op, r.point, r.quantity))
            .collect();
        print!("{table}");
        Err(CliError::Verification(format!("{summary}: {}", names.join("; "))))
    }
}

fn write_preview(dir: &Path, name: &str, data: &SequenceBatch) -> Result<(), CliError> {
    for t in 0..data.time {
        let path = dir.join(format!("{name}_t{:02}.pgm", t + 1));
        write_pgm(&path, data.width, data.height, data.frame(0, t), 1.0)?;
    }
    Ok(())
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path, preview: bool) -> Result<String, CliError> {
    create_dir(out)?;
    let preview = preview || cfg.generate.preview;
    let preview_dir: PathBuf = out.join("preview");
    if preview {
        create_dir(&preview_dir)?;
    }
    let mut written = Vec::new();
    let train = training_data(cfg, cfg.generate.sequences)?;
    save_dataset(&train, &out.join("train.spgd"))?;
    written.push("train.spgd".to_string());
    if preview {
        write_preview(&preview_dir, "train", &train)?;
    }
    if cfg.generate.suites {
        for kind in SuiteKind::ALL {
            let levels = deviation_suite(&cfg.data.to_config(), kind, cfg.generate.sequences)?;
            for (i, level) in levels.iter().enumerate() {
                let name = format!("{}_level{i}", kind.name());
                save_dataset(&level.batch, &out.join(format!("{name}.spgd")))?;
                written.push(format!("{name}.spgd"));
                if preview {
                    write_preview(&preview_dir, &name, &level.batch)?;
                }
            }
        }
    }
    Ok(format!("wrote {} to {}", written.join(", "), out.display()))
}
