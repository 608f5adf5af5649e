#![allow(dead_code)]

use locco_core::models::{ModelConfig, ModelHandle, OptimizerKind, Role};
use locco_core::toy_domain::{DomainSpec, ToyDomain, ToySplits};
use locco_core::training::{
    build_vocabulary, pretrain_denoising, pretraining_sequences, PretrainConfig,
};

pub struct Setup {
    pub domain: ToyDomain,
    pub splits: ToySplits,
    pub initial: ModelHandle,
}

/// Toy splits plus a denoising-pretrained initial checkpoint over their
/// vocabulary.
pub fn setup(spec: DomainSpec, sizes: [usize; 4], model: ModelConfig, pretrain_epochs: usize, seed: u64) -> Setup {
    let domain = ToyDomain::new(spec).unwrap();
    let splits = domain.generate(sizes[0], sizes[1], sizes[2], sizes[3]).unwrap();
    let vocab = build_vocabulary(&splits.corpus, &[&splits.validation, &splits.test]);
    let mut initial = ModelHandle::new(vocab, model, Role::Parser, seed).unwrap();
    if pretrain_epochs > 0 {
        let cfg = PretrainConfig {
            epochs: pretrain_epochs,
            seed,
            ..PretrainConfig::default()
        };
        initial = pretrain_denoising(
            initial,
            &pretraining_sequences(&splits.corpus),
            OptimizerKind::Adam,
            &cfg,
        )
        .unwrap();
    }
    Setup {
        domain,
        splits,
        initial,
    }
}

/// A handful of examples and a very small model, for pipeline mechanics.
pub fn tiny(seed: u64) -> Setup {
    let spec = DomainSpec {
        entities: 8,
        relations: 3,
        max_triples: 2,
        seed,
        ..DomainSpec::default()
    };
    let model = ModelConfig {
        embed: 8,
        hidden: 8,
        max_len: 24,
    };
    setup(spec, [6, 12, 4, 4], model, 0, seed)
}

/// Sizes and model used by the desk-scale comparison.
pub fn desk(seed: u64, spec: DomainSpec, n_test: usize) -> Setup {
    let model = ModelConfig {
        embed: 32,
        hidden: 32,
        max_len: 64,
    };
    setup(spec, [50, 500, 50, n_test], model, 20, seed)
}
