#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rkfusion::spaces::*;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent dictionary on [0, 2].
pub fn dictionary() -> Vec<FeatureDescriptor> {
    vec![
        FeatureDescriptor::monomial(0),
        FeatureDescriptor::monomial(1),
        FeatureDescriptor::monomial(2),
        FeatureDescriptor::monomial(3),
        FeatureDescriptor::gaussian(vec![1.0], 0.4),
        FeatureDescriptor::sinusoid(2.3, 0.4),
    ]
}

pub fn domain() -> DomainBox {
    DomainBox::interval(0.0, 2.0)
}

/// Two agent spaces with disjoint random feature sets, 1..=3 features each.
pub fn random_agents(r: &mut ChaCha8Rng) -> (KnowledgeSpace, KnowledgeSpace) {
    let mut d = dictionary();
    d.shuffle(r);
    let a = r.random_range(1..=3);
    let b = r.random_range(1..=3);
    let s1 = build_knowledge_space(1, d[..a].to_vec(), domain(), None).unwrap();
    let s2 = build_knowledge_space(2, d[a..a + b].to_vec(), domain(), None).unwrap();
    (s1, s2)
}

pub fn random_fusion(seed: u64, normalize: bool) -> Option<FusionSpace> {
    let mut r = rng(seed);
    let (s1, s2) = random_agents(&mut r);
    build_fusion_space(&s1, &s2, &SelectionConfig { normalize, ..Default::default() }).ok()
}

/// The fixture: {1, x} and {x²} on [0, 2].
pub fn fixture() -> FusionSpace {
    let s1 = build_knowledge_space(1, vec![FeatureDescriptor::monomial(0), FeatureDescriptor::monomial(1)], domain(), None).unwrap();
    let s2 = build_knowledge_space(2, vec![FeatureDescriptor::monomial(2)], domain(), None).unwrap();
    build_fusion_space(&s1, &s2, &SelectionConfig::default()).unwrap()
}

pub fn point(r: &mut ChaCha8Rng) -> Vec<f64> {
    vec![r.random_range(0.0..=2.0)]
}

pub fn vector(r: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0))
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.amax()
}
