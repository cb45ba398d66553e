//! Assembling word-matrix batches for the model.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{DomainDataset, EmbeddingTable, Entity, TokenizedCorpus};
use crate::error::{Error, Result};
use ser_autodiff::Tensor;

/// Users and items of one domain that own a latent-factor row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityIndex {
    users: Vec<String>,
    items: Vec<String>,
    #[serde(skip)]
    user_pos: HashMap<String, usize>,
    #[serde(skip)]
    item_pos: HashMap<String, usize>,
}

impl EntityIndex {
    pub fn new(users: Vec<String>, items: Vec<String>) -> Self {
        let mut e = Self {
            users,
            items,
            user_pos: HashMap::new(),
            item_pos: HashMap::new(),
        };
        e.rebuild();
        e
    }

    /// Index over the training split of `ds`.
    pub fn from_train(ds: &DomainDataset) -> Self {
        let (u, i) = ds.train_entities();
        Self::new(u, i)
    }

    pub(crate) fn rebuild(&mut self) {
        self.user_pos = self
            .users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i))
            .collect();
        self.item_pos = self
            .items
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i))
            .collect();
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn user(&self, u: &str) -> Option<usize> {
        self.user_pos.get(u).copied()
    }

    pub fn item(&self, i: &str) -> Option<usize> {
        self.item_pos.get(i).copied()
    }
}

/// One domain's slice of a training or inference step.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[batch, agg_words, dim]`
    pub user_docs: Tensor,
    /// `[batch, agg_words, dim]`
    pub item_docs: Tensor,
    /// `[batch, review_words, dim]`; present only for training batches.
    pub reviews: Option<Tensor>,
    pub users: Vec<Option<usize>>,
    pub items: Vec<Option<usize>>,
    /// Ratings; empty for inference batches built from bare pairs.
    pub ratings: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Turns record ids or (user, item) pairs of one dataset into [`Batch`]es.
pub struct BatchBuilder<'a> {
    ds: &'a DomainDataset,
    table: &'a EmbeddingTable,
    tokens: TokenizedCorpus,
    agg_words: usize,
    review_words: usize,
}

impl<'a> BatchBuilder<'a> {
    pub fn new(
        ds: &'a DomainDataset,
        table: &'a EmbeddingTable,
        agg_words: usize,
        review_words: usize,
    ) -> Result<Self> {
        if agg_words == 0 || review_words == 0 {
            return Err(Error::InvalidArgument("document lengths must be positive".into()));
        }
        Ok(Self {
            tokens: TokenizedCorpus::new(ds, table),
            ds,
            table,
            agg_words,
            review_words,
        })
    }

    pub fn dataset(&self) -> &DomainDataset {
        self.ds
    }

    fn docs(&self, pairs: &[(&str, &str)], exclude: bool) -> Result<(Tensor, Tensor)> {
        let (n, c) = (self.agg_words, self.table.dim());
        let mut ud = vec![0.0; pairs.len() * n * c];
        let mut id = vec![0.0; pairs.len() * n * c];
        for (b, &(u, i)) in pairs.iter().enumerate() {
            let ex = exclude.then_some((u, i));
            let span = b * n * c..(b + 1) * n * c;
            self.tokens
                .fill_aggregate(self.ds, self.table, Entity::User(u), ex, n, &mut ud[span.clone()]);
            self.tokens
                .fill_aggregate(self.ds, self.table, Entity::Item(i), ex, n, &mut id[span]);
        }
        let shape = vec![pairs.len(), n, c];
        Ok((Tensor::new(shape.clone(), ud)?, Tensor::new(shape, id)?))
    }

    /// Training batch: aggregated documents leave out each sample's own
    /// review, which is supplied separately as the individual review.
    pub fn train_batch(&self, ids: &[usize], entities: &EntityIndex) -> Result<Batch> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let recs: Vec<_> = ids.iter().map(|&i| self.ds.record(i)).collect();
        let pairs: Vec<(&str, &str)> = recs
            .iter()
            .map(|r| (r.user.as_str(), r.item.as_str()))
            .collect();
        let (user_docs, item_docs) = self.docs(&pairs, true)?;
        let (m, c) = (self.review_words, self.table.dim());
        let mut rv = vec![0.0; ids.len() * m * c];
        for (b, &id) in ids.iter().enumerate() {
            self.tokens
                .fill_review(id, self.table, m, &mut rv[b * m * c..(b + 1) * m * c]);
        }
        Ok(Batch {
            user_docs,
            item_docs,
            reviews: Some(Tensor::new(vec![ids.len(), m, c], rv)?),
            users: pairs.iter().map(|(u, _)| entities.user(u)).collect(),
            items: pairs.iter().map(|(_, i)| entities.item(i)).collect(),
            ratings: recs.iter().map(|r| r.rating).collect(),
        })
    }

    /// Inference batch for held-out records: documents come from the
    /// training split only and no review text of the record itself is read.
    pub fn eval_batch(&self, ids: &[usize], entities: &EntityIndex) -> Result<Batch> {
        let pairs: Vec<(&str, &str)> = ids
            .iter()
            .map(|&i| {
                let r = self.ds.record(i);
                (r.user.as_str(), r.item.as_str())
            })
            .collect();
        let mut b = self.pair_batch(&pairs, entities)?;
        b.ratings = ids.iter().map(|&i| self.ds.record(i).rating).collect();
        Ok(b)
    }

    pub fn pair_batch(&self, pairs: &[(&str, &str)], entities: &EntityIndex) -> Result<Batch> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let (user_docs, item_docs) = self.docs(pairs, false)?;
        Ok(Batch {
            user_docs,
            item_docs,
            reviews: None,
            users: pairs.iter().map(|(u, _)| entities.user(u)).collect(),
            items: pairs.iter().map(|(_, i)| entities.item(i)).collect(),
            ratings: Vec::new(),
        })
    }
}
