#![allow(dead_code)]

use ser_core::batch::{Batch, BatchBuilder};
use ser_core::corpus::{Domain, DomainDataset, EmbeddingTable, Split};
use ser_core::model::ModelConfig;
use ser_core::synth;

pub struct Fixture {
    pub source: DomainDataset,
    pub target: DomainDataset,
    pub table: EmbeddingTable,
}

pub fn fixture(size: usize, seed: u64) -> Fixture {
    let c = synth::generate(size, seed).unwrap();
    Fixture {
        source: DomainDataset::from_records(Domain::Source, c.source)
            .unwrap()
            .split(seed)
            .unwrap(),
        target: DomainDataset::from_records(Domain::Target, c.target)
            .unwrap()
            .split(seed + 1)
            .unwrap(),
        table: c.table,
    }
}

pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        emb_dim: synth::SYNTH_DIM,
        filters: 3,
        window: 2,
        conv_layers: 1,
        agg_words: 10,
        review_words: 6,
        disc_hidden: 4,
        reg_hidden: 4,
        latent_dim: 2,
        mine_hidden: 3,
    }
}

impl Fixture {
    pub fn builders(&self, cfg: &ModelConfig) -> [BatchBuilder<'_>; 2] {
        [
            BatchBuilder::new(&self.source, &self.table, cfg.agg_words, cfg.review_words).unwrap(),
            BatchBuilder::new(&self.target, &self.table, cfg.agg_words, cfg.review_words).unwrap(),
        ]
    }

    /// First `n` training records of each domain as training batches.
    pub fn train_batches(&self, model: &ser_core::model::SerModel, n: usize) -> (Batch, Batch) {
        let cfg = &model.config;
        let [bs, bt] = self.builders(cfg);
        let s: Vec<usize> = self.source.ids_in(Split::Train).into_iter().take(n).collect();
        let t: Vec<usize> = self.target.ids_in(Split::Train).into_iter().take(n).collect();
        (
            bs.train_batch(&s, &model.entities[0]).unwrap(),
            bt.train_batch(&t, &model.entities[1]).unwrap(),
        )
    }
}
