//! Synthetic data: x uniform on the domain box per agent per iteration,
//! y = decay(n)·(truth(x) + noise).  Draws are keyed by (seed, n, agent).

use rand::Rng;
use rand_distr::StandardNormal;
use rkfusion::agent::DataPoint;
use rkfusion::maea3::DataSource;
use rkfusion::sampling::{self, tag};
use rkfusion::spaces::{eval_feature, DomainBox};

use crate::config::{DataConfig, Noise};

#[derive(Debug, Clone)]
pub struct Generator {
    pub data: DataConfig,
    pub domain: DomainBox,
    pub seed: u64,
}

impl Generator {
    pub fn new(data: DataConfig, domain: DomainBox, seed: u64) -> Self {
        Generator { data, domain, seed }
    }

    pub fn truth(&self, x: &[f64]) -> rkfusion::Result<f64> {
        let mut acc = 0.0;
        for t in &self.data.truth {
            acc += t.weight * eval_feature(&t.feature, x)?;
        }
        Ok(acc)
    }

    pub fn point(&self, n: usize, agent: usize) -> rkfusion::Result<DataPoint> {
        let mut rng = sampling::stream(self.seed, tag::DATA, 2 * n as u64 + agent as u64 - 1);
        let x = sampling::uniform_in(&mut rng, &self.domain);
        let noise = match self.data.noise {
            Noise::None => 0.0,
            Noise::Gaussian { sigma } => sigma * rng.sample::<f64, _>(StandardNormal),
            Noise::Uniform { half_width } => half_width * (2.0 * rng.random::<f64>() - 1.0),
        };
        let y = self.data.decay.factor(n) * (self.truth(&x)? + noise);
        Ok(DataPoint { x, y })
    }

    pub fn pair(&self, n: usize) -> rkfusion::Result<[DataPoint; 2]> {
        Ok([self.point(n, 1)?, self.point(n, 2)?])
    }

    /// Pairs for n = 1..=len.
    pub fn prefix(&self, len: usize) -> rkfusion::Result<Vec<[DataPoint; 2]>> {
        (1..=len).map(|n| self.pair(n)).collect()
    }
}

impl DataSource for Generator {
    fn next_pair(&mut self, n: usize) -> Option<[DataPoint; 2]> {
        self.pair(n).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Decay, TruthTerm};
    use rkfusion::spaces::FeatureDescriptor;

    fn gen(decay: Decay, noise: Noise) -> Generator {
        let data = DataConfig { truth: vec![TruthTerm { weight: 2.0, feature: FeatureDescriptor::monomial(1) }], noise, decay };
        Generator::new(data, DomainBox::interval(0.0, 2.0), 5)
    }

    #[test]
    fn noiseless_points_follow_truth() {
        let g = gen(Decay::None, Noise::None);
        let p = g.point(3, 1).unwrap();
        assert!((0.0..=2.0).contains(&p.x[0]));
        assert_eq!(p.y, 2.0 * p.x[0]);
    }

    #[test]
    fn geometric_decay_scales_y() {
        let a = gen(Decay::None, Noise::Uniform { half_width: 0.3 }).point(4, 2).unwrap();
        let b = gen(Decay::Geometric { r: 0.5 }, Noise::Uniform { half_width: 0.3 }).point(4, 2).unwrap();
        assert_eq!(a.x, b.x);
        assert!((b.y - a.y / 16.0).abs() < 1e-15);
    }

    #[test]
    fn draws_are_keyed_not_sequential() {
        let g = gen(Decay::None, Noise::Gaussian { sigma: 1.0 });
        let late = g.point(10, 1).unwrap();
        let _ = g.prefix(9).unwrap();
        assert_eq!(g.point(10, 1).unwrap(), late);
        assert_ne!(g.point(10, 2).unwrap().x, late.x);
    }
}
