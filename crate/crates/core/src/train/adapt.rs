use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Model;

const ADAPT_BATCH: usize = 256;

/// Per-channel count, mean and sum of squared deviations, merged in a fixed order.
#[derive(Clone, Debug)]
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn merge(&mut self, count: f64, mean: &[f64], m2: &[f64]) {
        let total = self.count + count;
        for c in 0..self.mean.len() {
            let delta = mean[c] - self.mean[c];
            self.mean[c] += delta * count / total;
            self.m2[c] += m2[c] + delta * delta * self.count * count / total;
        }
        self.count = total;
    }
}

/// Replaces every BN layer's running mean and variance with statistics over
/// all of `ds`, layer by layer so each layer sees already-adapted inputs.
/// Variance is unbiased, matching the training-time running estimate.
pub fn adapt_bn(model: &Model, ds: &Dataset) -> Result<Model> {
    if ds.is_empty() {
        return Err(Error::invalid("BN adaptation needs a non-empty dataset"));
    }
    let bn_layers = model.bn_layers();
    if bn_layers.is_empty() {
        return Err(Error::invalid("model has no batch-norm layers"));
    }
    let mut adapted = model.clone();
    let indices: Vec<usize> = (0..ds.len()).collect();
    for &layer in &bn_layers {
        let channels = adapted.bn_stats(layer).expect("bn layer").0.len();
        let mut acc = Moments {
            count: 0.0,
            mean: vec![0.0; channels],
            m2: vec![0.0; channels],
        };
        for chunk in indices.chunks(ADAPT_BATCH) {
            let (x, _) = adapted.forward_prefix(&ds.batch(chunk), layer)?;
            let s = x.shape();
            let per = (s.n * s.plane()) as f64;
            let mut mean = vec![0.0f64; channels];
            let mut m2 = vec![0.0f64; channels];
            for n in 0..s.n {
                for (c, m) in mean.iter_mut().enumerate() {
                    *m += x.plane(n, c).iter().map(|&v| v as f64).sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= per);
            for n in 0..s.n {
                for c in 0..channels {
                    let mu = mean[c];
                    m2[c] += x.plane(n, c).iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>();
                }
            }
            acc.merge(per, &mean, &m2);
        }
        let denom = (acc.count - 1.0).max(1.0);
        let mean: Vec<f32> = acc.mean.iter().map(|&m| m as f32).collect();
        let var: Vec<f32> = acc
            .m2
            .iter()
            .map(|&m| ((m / denom) as f32).max(f32::MIN_POSITIVE))
            .collect();
        adapted.set_bn_stats(layer, &mean, &var)?;
    }
    Ok(adapted)
}
