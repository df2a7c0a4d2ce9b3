use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::spgru::{init_network, loss_and_grad, CheckpointFile, NetworkConfig, NetworkParams, DEFAULT_INIT_VARIANCE};
use crate::tensor::Tensor;

use super::adam::{clip_global_norm, Adam, AdamConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.log";
const EPOCH_KEY: &str = "train/epoch";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub clip_norm: Option<f64>,
    /// Initial variance of every weight and bias.
    pub init_s: f64,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 30,
            seed: 0,
            adam: AdamConfig::default(),
            clip_norm: None,
            init_s: DEFAULT_INIT_VARIANCE,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "epochs and batch_size must be at least 1, got {} and {}",
                self.epochs, self.batch_size
            )));
        }
        if !(self.init_s > 0.0) {
            return Err(Error::Config(format!("init_s must be > 0, got {}", self.init_s)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Mean training loss over the epoch's minibatches, before their updates.
    pub loss: f64,
    /// Variance outputs clamped at zero during the epoch.
    pub clamped: usize,
    pub wall_ms: u128,
}

impl EpochRecord {
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} step={} loss={:?} clamped={} wall_ms={}",
            self.epoch, self.step, self.loss, self.clamped, self.wall_ms
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let mut rec = EpochRecord {
            epoch: 0,
            step: 0,
            loss: f64::NAN,
            clamped: 0,
            wall_ms: 0,
        };
        let bad = || Error::Config(format!("malformed metrics line `{line}`"));
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(bad)?;
            match k {
                "epoch" => rec.epoch = v.parse().map_err(|_| bad())?,
                "step" => rec.step = v.parse().map_err(|_| bad())?,
                "loss" => rec.loss = v.parse().map_err(|_| bad())?,
                "clamped" => rec.clamped = v.parse().map_err(|_| bad())?,
                "wall_ms" => rec.wall_ms = v.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
        }
        Ok(rec)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: NetworkParams,
    pub adam: Adam,
    pub log: Vec<EpochRecord>,
}

fn param_names(net: &NetworkParams) -> Vec<String> {
    net.named().into_iter().map(|(n, _)| n).collect()
}

fn checkpoint(cfg: &NetworkConfig, net: &NetworkParams, adam: &Adam, epoch: usize) -> CheckpointFile {
    let mut extra = adam.to_named(&param_names(net));
    extra.push((EPOCH_KEY.into(), Tensor::scalar(epoch as f64)));
    CheckpointFile::new(cfg, net, extra)
}

/// Minibatch order for `epoch`, drawn from its own stream of the run seed.
fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if n > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        idx.shuffle(&mut rng);
    }
    idx
}

/// Where [`train`] writes its log and checkpoints.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub dir: PathBuf,
    /// Continue from `dir/checkpoint.bin` if it exists.
    pub resume: bool,
}

fn io_context(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Trains on `data` for `cfg.epochs` epochs. Minibatches of `batch_size`
/// sequences are visited in a seeded order per epoch. With an output
/// directory, one log line is appended per epoch and checkpoints are written
/// per `checkpoint_every` and at the end.
pub fn train(
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    data: &SequenceBatch,
    out: Option<&TrainOutput>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    net_cfg.validate()?;
    if data.batch == 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    if data.time < net_cfg.required_frames() {
        return Err(Error::Config(format!(
            "sequences have {} frames, the network needs {}",
            data.time,
            net_cfg.required_frames()
        )));
    }

    let mut net = init_network(cfg.seed, net_cfg, data.frame_len(), cfg.init_s)?;
    let shapes: Vec<(usize, usize)> = net.named().iter().map(|(_, t)| t.shape()).collect();
    let mut adam = Adam::new(cfg.adam, &shapes);
    let mut log = Vec::new();
    let mut first_epoch = 1;

    if let Some(o) = out {
        fs::create_dir_all(&o.dir).map_err(|e| io_context(&o.dir, e))?;
        let ckpt = o.dir.join(CHECKPOINT_FILE);
        let metrics = o.dir.join(METRICS_FILE);
        if o.resume && ckpt.exists() {
            let file = CheckpointFile::load(&ckpt)?;
            net = file.network(net_cfg)?;
            adam = Adam::from_named(cfg.adam, &param_names(&net), &file.arrays)?;
            let done = file
                .array(EPOCH_KEY)
                .ok_or_else(|| Error::Config(format!("checkpoint is missing `{EPOCH_KEY}`")))?
                .item() as usize;
            first_epoch = done + 1;
            if metrics.exists() {
                let text = fs::read_to_string(&metrics).map_err(|e| io_context(&metrics, e))?;
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    let rec = EpochRecord::parse(line)?;
                    if rec.epoch <= done {
                        log.push(rec);
                    }
                }
            }
        }
        let text: String = log.iter().map(|r| r.to_line() + "\n").collect();
        fs::write(&metrics, text).map_err(|e| io_context(&metrics, e))?;
    }

    let batch = cfg.batch_size.min(data.batch);
    for epoch in first_epoch..=cfg.epochs {
        let started = Instant::now();
        let order = epoch_order(cfg.seed, epoch, data.batch);
        let mut loss_sum = 0.0;
        let mut clamped = 0;
        let mut batches = 0;
        for chunk in order.chunks(batch) {
            let frames = data.time_major(chunk);
            let (loss, mut grads, c) = loss_and_grad(&frames, net_cfg, &net)?;
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            adam.update(net.tensors_mut(), &grads)?;
            loss_sum += loss;
            clamped += c;
            batches += 1;
        }
        let rec = EpochRecord {
            epoch,
            step: adam.step,
            loss: loss_sum / batches as f64,
            clamped,
            wall_ms: started.elapsed().as_millis(),
        };
        if let Some(o) = out {
            let metrics = o.dir.join(METRICS_FILE);
            let mut f = fs::OpenOptions::new()
                .append(true)
                .open(&metrics)
                .map_err(|e| io_context(&metrics, e))?;
            writeln!(f, "{}", rec.to_line()).map_err(|e| io_context(&metrics, e))?;
            let periodic = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
            if periodic || epoch == cfg.epochs {
                checkpoint(net_cfg, &net, &adam, epoch).save(&o.dir.join(CHECKPOINT_FILE))?;
            }
        }
        log.push(rec);
    }
    Ok(TrainOutcome { net, adam, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, TrajectoryConfig};
    use crate::spgru::NetworkMode;
    use crate::training::evaluate_loss;

    fn tiny_data(n: usize) -> SequenceBatch {
        let cfg = TrajectoryConfig {
            frame_size: 8,
            sprite_size: 5,
            speed: 0.1,
            ..TrajectoryConfig::default()
        };
        generate(&cfg, n).unwrap()
    }

    fn tiny_net(mode: NetworkMode) -> NetworkConfig {
        NetworkConfig {
            mode,
            input_len: 4,
            output_len: 4,
            hidden: 2,
            ..NetworkConfig::default()
        }
    }

    fn epochs(n: usize) -> TrainConfig {
        TrainConfig {
            epochs: n,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn overfits_one_sequence() {
        let data = tiny_data(1);
        let out = train(&tiny_net(NetworkMode::Composite), &epochs(500), &data, None).unwrap();
        let first = out.log[0].loss;
        let best = out.log.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
        assert!(best <= 0.5 * first, "first {first} best {best}");
    }

    #[test]
    fn zero_learning_rate_keeps_loss() {
        let data = tiny_data(2);
        let mut cfg = epochs(5);
        cfg.adam.lr = 0.0;
        let out = train(&tiny_net(NetworkMode::Predictor), &cfg, &data, None).unwrap();
        for r in &out.log {
            assert!((r.loss - out.log[0].loss).abs() < 1e-12);
        }
    }

    #[test]
    fn recorded_loss_matches_plain_evaluation() {
        let data = tiny_data(3);
        let net_cfg = tiny_net(NetworkMode::Composite);
        let mut cfg = epochs(1);
        cfg.adam.lr = 0.0;
        let out = train(&net_cfg, &cfg, &data, None).unwrap();
        let plain = evaluate_loss(&data.all_time_major(), &net_cfg, &out.net.resolve().unwrap()).unwrap();
        assert!((out.log[0].loss - plain).abs() < 1e-10);
    }

    #[test]
    fn smoke_loss_non_increasing_for_most_seeds() {
        let data = tiny_data(1);
        let net_cfg = tiny_net(NetworkMode::Composite);
        let monotone = (0..10)
            .filter(|&seed| {
                let cfg = TrainConfig { seed, ..epochs(200) };
                let log = train(&net_cfg, &cfg, &data, None).unwrap().log;
                log.windows(2).all(|w| w[1].loss <= w[0].loss)
            })
            .count();
        assert!(monotone >= 9, "{monotone} of 10 seeds monotone");
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = tiny_data(3);
        let net_cfg = tiny_net(NetworkMode::Composite);
        let mut cfg = epochs(6);
        cfg.batch_size = 2;
        let full = train(&net_cfg, &cfg, &data, None).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let out = TrainOutput {
            dir: dir.path().to_path_buf(),
            resume: true,
        };
        let mut first = cfg.clone();
        first.epochs = 3;
        train(&net_cfg, &first, &data, Some(&out)).unwrap();
        let resumed = train(&net_cfg, &cfg, &data, Some(&out)).unwrap();

        assert_eq!(resumed.net, full.net);
        assert_eq!(resumed.adam, full.adam);
        let strip = |log: &[EpochRecord]| log.iter().map(|r| (r.epoch, r.step, r.loss, r.clamped)).collect::<Vec<_>>();
        assert_eq!(strip(&resumed.log), strip(&full.log));
        let text = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        let parsed: Vec<EpochRecord> = text.lines().map(|l| EpochRecord::parse(l).unwrap()).collect();
        assert_eq!(strip(&parsed), strip(&full.log));
    }

    #[test]
    fn metrics_line_round_trip() {
        let r = EpochRecord {
            epoch: 7,
            step: 21,
            loss: 0.123456789,
            clamped: 4,
            wall_ms: 15,
        };
        assert_eq!(EpochRecord::parse(&r.to_line()).unwrap(), r);
        assert!(EpochRecord::parse("epoch=x").is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let data = tiny_data(1);
        let mut cfg = epochs(1);
        cfg.batch_size = 0;
        assert!(train(&tiny_net(NetworkMode::Predictor), &cfg, &data, None).is_err());
        let mut long = tiny_net(NetworkMode::Predictor);
        long.output_len = 40;
        assert!(train(&long, &epochs(1), &data, None).is_err());
    }
}
