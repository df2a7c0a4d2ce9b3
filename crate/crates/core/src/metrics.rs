//! Summed predictive variance as an uncertainty score.

use rayon::prelude::*;

use crate::data::{SequenceBatch, SuiteLevel};
use crate::error::{Error, Result};
use crate::expfam::MomentTensor;
use crate::spgru::{unroll, NetworkConfig, ResolvedNetwork};

/// Pixel variance summed per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyMetric {
    /// Per time step, averaged over sequences.
    pub per_frame: Vec<f64>,
    /// Per sequence, averaged over time steps.
    pub per_sequence: Vec<f64>,
    /// Mean over every (sequence, frame) pair.
    pub average: f64,
}

impl UncertaintyMetric {
    /// From time-major predictions, each `batch x pixels`.
    pub fn from_predictions(frames: &[MomentTensor]) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::Config("no predicted frames".into()));
        };
        let batch = first.m.rows();
        let mut sums = vec![vec![0.0; frames.len()]; batch];
        for (t, f) in frames.iter().enumerate() {
            if f.m.rows() != batch {
                return Err(Error::Config(format!("frame {t} has {} rows, expected {batch}", f.m.rows())));
            }
            for (b, row) in sums.iter_mut().enumerate() {
                row[t] = f.s.row(b).iter().sum();
            }
        }
        Ok(Self::from_sums(&sums))
    }

    /// From `sums[sequence][frame]`.
    pub fn from_sums(sums: &[Vec<f64>]) -> Self {
        let time = sums.first().map_or(0, Vec::len);
        let per_sequence: Vec<f64> = sums.iter().map(|r| r.iter().sum::<f64>() / time as f64).collect();
        let per_frame = (0..time)
            .map(|t| sums.iter().map(|r| r[t]).sum::<f64>() / sums.len() as f64)
            .collect();
        let average = per_sequence.iter().sum::<f64>() / per_sequence.len() as f64;
        Self {
            per_frame,
            per_sequence,
            average,
        }
    }
}

/// Runs the network on `data` and scores the predictor head, or the
/// reconstruction head for autoencoder-only networks. Sequences are
/// processed in parallel, one at a time, and reassembled in order.
pub fn measure(data: &SequenceBatch, cfg: &NetworkConfig, net: &ResolvedNetwork) -> Result<UncertaintyMetric> {
    let sums: Vec<Vec<f64>> = (0..data.batch)
        .into_par_iter()
        .map(|b| {
            let out = unroll(&data.time_major(&[b]), cfg, net)?;
            let frames = out
                .prediction
                .or(out.reconstruction)
                .expect("every mode has a head");
            Ok(frames.iter().map(|f| f.s.data().iter().sum()).collect())
        })
        .collect::<Result<_>>()?;
    Ok(UncertaintyMetric::from_sums(&sums))
}

/// Metric for each level of a deviation suite, reference first.
pub fn measure_suite(
    levels: &[SuiteLevel],
    cfg: &NetworkConfig,
    net: &ResolvedNetwork,
) -> Result<Vec<(f64, UncertaintyMetric)>> {
    levels
        .iter()
        .map(|l| Ok((l.value, measure(&l.batch, cfg, net)?)))
        .collect()
}

pub fn strictly_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] > w[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, TrajectoryConfig};
    use crate::spgru::{init_network, NetworkMode};
    use crate::tensor::Tensor;

    #[test]
    fn sums_and_averages() {
        let frames = vec![
            MomentTensor::new(Tensor::zeros(2, 2), Tensor::from_vec(2, 2, vec![1.0, 2.0, 0.0, 0.5]).unwrap()).unwrap(),
            MomentTensor::new(Tensor::zeros(2, 2), Tensor::from_vec(2, 2, vec![0.0, 1.0, 4.0, 0.5]).unwrap()).unwrap(),
        ];
        let u = UncertaintyMetric::from_predictions(&frames).unwrap();
        assert_eq!(u.per_sequence, vec![2.0, 2.5]);
        assert_eq!(u.per_frame, vec![1.75, 2.75]);
        assert_eq!(u.average, 2.25);
        let frame_mean = u.per_frame.iter().sum::<f64>() / 2.0;
        assert!((frame_mean - u.average).abs() < 1e-12);
    }

    #[test]
    fn measured_batch_matches_joint_unroll() {
        let data = generate(
            &TrajectoryConfig {
                frame_size: 8,
                sprite_size: 5,
                seq_len: 6,
                random_motion: true,
                ..TrajectoryConfig::default()
            },
            3,
        )
        .unwrap();
        let cfg = NetworkConfig {
            mode: NetworkMode::Predictor,
            input_len: 3,
            output_len: 3,
            hidden: 4,
            ..NetworkConfig::default()
        };
        let net = init_network(1, &cfg, 64, 0.01).unwrap().resolve().unwrap();
        let u = measure(&data, &cfg, &net).unwrap();
        let joint = unroll(&data.all_time_major(), &cfg, &net).unwrap().prediction.unwrap();
        let v = UncertaintyMetric::from_predictions(&joint).unwrap();
        assert!(u.per_sequence.iter().zip(&v.per_sequence).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(u.average > 0.0);
        let seq_mean = u.per_sequence.iter().sum::<f64>() / 3.0;
        assert!((seq_mean - u.average).abs() < 1e-10);
    }

    #[test]
    fn monotonicity() {
        assert!(strictly_increasing(&[1.0, 2.0, 3.0]));
        assert!(!strictly_increasing(&[1.0, 1.0, 3.0]));
        assert!(!strictly_increasing(&[2.0, 1.0]));
    }
}
