//! The network: three convolutional feature extractors, a shared domain
//! discriminator, per-domain encoders, a shared regressor with per-domain
//! latent factors, and the MINE statistics network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{Batch, EntityIndex};
use crate::corpus::Domain;
use crate::error::{Error, Result};
use crate::variant::{Mask, Variant};
use ser_autodiff::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Word-vector dimension `c`.
    pub emb_dim: usize,
    /// Filters per convolution `f`.
    pub filters: usize,
    /// Convolution window `w`.
    pub window: usize,
    pub conv_layers: usize,
    /// Words kept from aggregated user/item documents.
    pub agg_words: usize,
    /// Words kept from an individual review.
    pub review_words: usize,
    pub disc_hidden: usize,
    pub reg_hidden: usize,
    pub latent_dim: usize,
    pub mine_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            emb_dim: 100,
            filters: 100,
            window: 5,
            conv_layers: 1,
            agg_words: 500,
            review_words: 100,
            disc_hidden: 64,
            reg_hidden: 64,
            latent_dim: 32,
            mine_hidden: 64,
        }
    }
}

impl ModelConfig {
    /// Width of an aggregated feature: user and item halves.
    pub fn feature_dim(&self) -> usize {
        2 * self.filters
    }

    /// Number of scalars a model with these settings holds, or `None` on
    /// overflow. Needs no allocation, so untrusted headers can be checked
    /// before a model is built.
    pub fn param_count(&self, entities: &[EntityIndex; 2]) -> Option<usize> {
        let add = |a: usize, b: usize| a.checked_add(b);
        let mul = |a: usize, b: usize| a.checked_mul(b);
        let dense = |i: usize, o: usize| add(mul(i, o)?, o);
        let (f, fd) = (self.filters, mul(self.filters, 2)?);
        let mut fe = 0usize;
        let mut inp = self.emb_dim;
        for _ in 0..self.conv_layers {
            fe = add(fe, dense(mul(self.window, inp)?, f)?)?;
            inp = f;
        }
        let mut n = mul(fe, 3)?;
        n = add(n, dense(fd, self.disc_hidden)?)?;
        n = add(n, dense(self.disc_hidden, 1)?)?;
        n = add(n, mul(dense(fd, fd)?, 4)?)?;
        n = add(n, dense(fd, self.reg_hidden)?)?;
        n = add(n, dense(self.reg_hidden, 1)?)?;
        for e in entities {
            n = add(n, mul(e.num_users().max(1), self.latent_dim)?)?;
            n = add(n, mul(e.num_items().max(1), self.latent_dim)?)?;
        }
        let mine = add(mul(dense(fd, self.mine_hidden)?, 2)?, dense(self.mine_hidden, 1)?)?;
        add(n, mul(mine, 2)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("emb_dim", self.emb_dim),
            ("filters", self.filters),
            ("window", self.window),
            ("conv_layers", self.conv_layers),
            ("agg_words", self.agg_words),
            ("review_words", self.review_words),
            ("disc_hidden", self.disc_hidden),
            ("reg_hidden", self.reg_hidden),
            ("latent_dim", self.latent_dim),
            ("mine_hidden", self.mine_hidden),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("model {name} must be positive")));
        }
        // every conv stage shortens the sequence by window - 1
        let shrink = self.conv_layers.saturating_mul(self.window - 1);
        if self.agg_words <= shrink || self.review_words <= shrink {
            return Err(Error::InvalidArgument(format!(
                "documents of {} / {} words are too short for {} conv layers of window {}",
                self.agg_words, self.review_words, self.conv_layers, self.window
            )));
        }
        Ok(())
    }
}

/// Affine map `x W + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    fn new(store: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: store.add_glorot(format!("{name}.w"), &[inp, out], inp, out, rng),
            b: store.add_zeros(format!("{name}.b"), &[out]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let h = tape.matmul(x, w)?;
        Ok(tape.add_bias(h, b)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeRole {
    SourceSpecific,
    Common,
    TargetSpecific,
}

impl FeRole {
    pub fn name(self) -> &'static str {
        match self {
            FeRole::SourceSpecific => "fe_source",
            FeRole::Common => "fe_common",
            FeRole::TargetSpecific => "fe_target",
        }
    }

    pub fn specific_for(domain: Domain) -> Self {
        match domain {
            Domain::Source => FeRole::SourceSpecific,
            Domain::Target => FeRole::TargetSpecific,
        }
    }
}

/// Text CNN: convolution stages with ReLU, then max-pool over positions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub role: FeRole,
    pub window: usize,
    /// `(filters [f, w * in], bias [f])` per stage.
    pub stages: Vec<Dense>,
}

impl FeatureExtractor {
    fn new(store: &mut ParamStore, role: FeRole, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut stages = Vec::new();
        let mut inp = cfg.emb_dim;
        for l in 0..cfg.conv_layers {
            let span = cfg.window * inp;
            let name = format!("{}.conv{l}", role.name());
            let w = store.add_glorot(
                format!("{name}.w"),
                &[cfg.filters, span],
                span,
                cfg.filters,
                rng,
            );
            let b = store.add_zeros(format!("{name}.b"), &[cfg.filters]);
            stages.push(Dense { w, b });
            inp = cfg.filters;
        }
        Self {
            role,
            window: cfg.window,
            stages,
        }
    }

    /// `[batch, words, dim] -> [batch, f]`.
    pub fn encode_doc(&self, tape: &mut Tape, store: &ParamStore, docs: Var) -> Result<Var> {
        let mut h = docs;
        for (l, st) in self.stages.iter().enumerate() {
            if l > 0 {
                h = tape.transpose(h)?;
            }
            let w = tape.param(store, st.w);
            let b = tape.param(store, st.b);
            let c = tape.conv1d(h, w, b, self.window)?;
            h = tape.relu(c)?;
        }
        Ok(tape.max_last(h)?)
    }

    /// Aggregated feature O: user and item documents, concatenated (`2f`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        user_docs: Var,
        item_docs: Var,
    ) -> Result<Var> {
        let u = self.encode_doc(tape, store, user_docs)?;
        let i = self.encode_doc(tape, store, item_docs)?;
        Ok(tape.concat_last(u, i)?)
    }

    /// Individual-review feature I: the review stands in for both the user
    /// and the item document so that I lines up with O.
    pub fn forward_individual(&self, tape: &mut Tape, store: &ParamStore, review: Var) -> Result<Var> {
        let r = self.encode_doc(tape, store, review)?;
        Ok(tape.concat_last(r, r)?)
    }
}

/// Two affine layers, hidden ReLU, sigmoid output: probability that the
/// input came from the target domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub hidden: Dense,
    pub out: Dense,
}

impl Discriminator {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        let o = self.out.forward(tape, store, h)?;
        let p = tape.sigmoid(o)?;
        let n = tape.shape(p)[0];
        Ok(tape.reshape(p, &[n])?)
    }
}

/// Two affine layers of width `2f` with ReLU between.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub first: Dense,
    pub second: Dense,
}

impl Encoder {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.first.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        self.second.forward(tape, store, h)
    }

    /// `F_enc(O_spe + O_com)`.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, o_spe: Var, o_com: Var) -> Result<Var> {
        let s = tape.add(o_spe, o_com)?;
        self.forward(tape, store, s)
    }
}

/// `I = I_spe + I_com`.
pub fn combine_individual(tape: &mut Tape, i_spe: Var, i_com: Var) -> Result<Var> {
    Ok(tape.add(i_spe, i_com)?)
}

/// MLP over a feature plus the dot product of per-domain latent factors.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub hidden: Dense,
    pub out: Dense,
    /// `[users, k]` per domain.
    pub user_factors: [ParamId; 2],
    /// `[items, k]` per domain.
    pub item_factors: [ParamId; 2],
}

impl Regressor {
    pub fn mlp(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        let o = self.out.forward(tape, store, h)?;
        let n = tape.shape(o)[0];
        Ok(tape.reshape(o, &[n])?)
    }

    /// `F_reg(x) + p_u . q_i`; unknown users or items contribute a zero
    /// latent vector.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        users: &[Option<usize>],
        items: &[Option<usize>],
        domain: Domain,
    ) -> Result<Var> {
        let m = self.mlp(tape, store, x)?;
        let p = tape.param(store, self.user_factors[domain.index()]);
        let q = tape.param(store, self.item_factors[domain.index()]);
        let pu = tape.gather_rows(p, users)?;
        let qi = tape.gather_rows(q, items)?;
        let pq = tape.mul(pu, qi)?;
        let dot = tape.sum_last(pq)?;
        Ok(tape.add(m, dot)?)
    }
}

/// Statistics network `T(x, z) = F3(relu(F1(x) + F2(z)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MineNetwork {
    pub fx: Dense,
    pub fz: Dense,
    pub out: Dense,
}

impl MineNetwork {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        x_dim: usize,
        z_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            fx: Dense::new(store, &format!("{name}.f1"), x_dim, hidden, rng),
            fz: Dense::new(store, &format!("{name}.f2"), z_dim, hidden, rng),
            out: Dense::new(store, &format!("{name}.f3"), hidden, 1, rng),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.fx, self.fz, self.out]
            .iter()
            .flat_map(|d| [d.w, d.b])
            .collect()
    }

    /// `[batch, x_dim], [batch, z_dim] -> [batch]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, z: Var) -> Result<Var> {
        let a = self.fx.forward(tape, store, x)?;
        let b = self.fz.forward(tape, store, z)?;
        let s = tape.add(a, b)?;
        let h = tape.relu(s)?;
        let o = self.out.forward(tape, store, h)?;
        let n = tape.shape(o)[0];
        Ok(tape.reshape(o, &[n])?)
    }
}

/// Nodes produced for one domain's batch.
#[derive(Debug, Clone, Default)]
pub struct DomainFeatures {
    pub o_spe: Option<Var>,
    pub o_com: Option<Var>,
    pub i_spe: Option<Var>,
    pub i_com: Option<Var>,
    /// Encoded aggregated feature fed to the regressor.
    pub o: Option<Var>,
    pub i: Option<Var>,
    pub y_o: Option<Var>,
    pub y_i: Option<Var>,
    pub d_spe: Option<Var>,
    pub d_com: Option<Var>,
}

/// How a forward pass is wired for one variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardPlan {
    pub variant: Variant,
    /// Reversal strength on the common-feature -> discriminator edge;
    /// `None` leaves the edge as a plain identity.
    pub grl_lambda: Option<f64>,
    /// Training pass: individual reviews and discriminator outputs.
    pub training: bool,
}

impl ForwardPlan {
    pub fn inference(variant: Variant) -> Self {
        Self {
            variant,
            grl_lambda: None,
            training: false,
        }
    }
}

/// All trainable state plus the wiring between modules.
/// Specific and common feature rows, one per sample.
pub type FeaturePair = (Vec<Vec<f64>>, Vec<Vec<f64>>);

#[derive(Debug, Clone)]
pub struct SerModel {
    pub config: ModelConfig,
    pub variant: Variant,
    pub store: ParamStore,
    pub extractors: [FeatureExtractor; 3],
    pub discriminator: Discriminator,
    pub encoders: [Encoder; 2],
    pub regressor: Regressor,
    pub mine: [MineNetwork; 2],
    pub entities: [EntityIndex; 2],
}

impl SerModel {
    /// Fresh model. Weights are Glorot-uniform and biases zero, except the
    /// regressor output bias which starts at `rating_mean`.
    pub fn new(
        config: ModelConfig,
        variant: Variant,
        entities: [EntityIndex; 2],
        rating_mean: f64,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let extractors = [
            FeatureExtractor::new(&mut store, FeRole::SourceSpecific, &config, &mut rng),
            FeatureExtractor::new(&mut store, FeRole::Common, &config, &mut rng),
            FeatureExtractor::new(&mut store, FeRole::TargetSpecific, &config, &mut rng),
        ];
        let fd = config.feature_dim();
        let discriminator = Discriminator {
            hidden: Dense::new(&mut store, "disc.hidden", fd, config.disc_hidden, &mut rng),
            out: Dense::new(&mut store, "disc.out", config.disc_hidden, 1, &mut rng),
        };
        let encoders = [Domain::Source, Domain::Target].map(|d| Encoder {
            first: Dense::new(&mut store, &format!("enc_{}.first", d.tag()), fd, fd, &mut rng),
            second: Dense::new(&mut store, &format!("enc_{}.second", d.tag()), fd, fd, &mut rng),
        });
        let hidden = Dense::new(&mut store, "reg.hidden", fd, config.reg_hidden, &mut rng);
        let out = Dense::new(&mut store, "reg.out", config.reg_hidden, 1, &mut rng);
        store
            .set_value(out.b, Tensor::scalar(rating_mean))
            .expect("scalar bias");
        let k = config.latent_dim;
        let mut factors = |what: &str, n: usize, d: Domain, rng: &mut ChaCha8Rng| {
            store.add_glorot(format!("latent_{}.{what}", d.tag()), &[n.max(1), k], k, k, rng)
        };
        let user_factors = [
            factors("users", entities[0].num_users(), Domain::Source, &mut rng),
            factors("users", entities[1].num_users(), Domain::Target, &mut rng),
        ];
        let item_factors = [
            factors("items", entities[0].num_items(), Domain::Source, &mut rng),
            factors("items", entities[1].num_items(), Domain::Target, &mut rng),
        ];
        let regressor = Regressor {
            hidden,
            out,
            user_factors,
            item_factors,
        };
        let mine = [Domain::Source, Domain::Target].map(|d| {
            MineNetwork::new(
                &mut store,
                &format!("mine_{}", d.tag()),
                fd,
                fd,
                config.mine_hidden,
                &mut rng,
            )
        });
        Ok(Self {
            config,
            variant,
            store,
            extractors,
            discriminator,
            encoders,
            regressor,
            mine,
            entities,
        })
    }

    pub fn extractor(&self, role: FeRole) -> &FeatureExtractor {
        match role {
            FeRole::SourceSpecific => &self.extractors[0],
            FeRole::Common => &self.extractors[1],
            FeRole::TargetSpecific => &self.extractors[2],
        }
    }

    fn fe_params(fe: &FeatureExtractor) -> Vec<ParamId> {
        fe.stages.iter().flat_map(|d| [d.w, d.b]).collect()
    }

    pub fn extractor_params(&self, role: FeRole) -> Vec<ParamId> {
        Self::fe_params(self.extractor(role))
    }

    pub fn discriminator_params(&self) -> Vec<ParamId> {
        let d = &self.discriminator;
        vec![d.hidden.w, d.hidden.b, d.out.w, d.out.b]
    }

    pub fn encoder_params(&self, domain: Domain) -> Vec<ParamId> {
        let e = &self.encoders[domain.index()];
        vec![e.first.w, e.first.b, e.second.w, e.second.b]
    }

    pub fn regressor_params(&self) -> Vec<ParamId> {
        let r = &self.regressor;
        let mut v = vec![r.hidden.w, r.hidden.b, r.out.w, r.out.b];
        v.extend(r.user_factors);
        v.extend(r.item_factors);
        v
    }

    pub fn mine_params(&self) -> Vec<ParamId> {
        self.mine.iter().flat_map(MineNetwork::params).collect()
    }

    /// Parameters the main optimiser step updates for `variant`. The MINE
    /// networks are stepped separately.
    pub fn trainable_params(&self, variant: Variant) -> Vec<ParamId> {
        let mut v = Vec::new();
        if variant.uses_text() {
            for role in [FeRole::SourceSpecific, FeRole::Common, FeRole::TargetSpecific] {
                v.extend(self.extractor_params(role));
            }
        }
        if variant.uses_discriminator() {
            v.extend(self.discriminator_params());
        }
        if variant.uses_encoder() {
            v.extend(self.encoder_params(Domain::Source));
            v.extend(self.encoder_params(Domain::Target));
        }
        v.extend(self.regressor_params());
        v.sort();
        v
    }

    /// Build one domain's features, predictions and discriminator outputs
    /// on `tape`.
    pub fn forward_domain(
        &self,
        tape: &mut Tape,
        domain: Domain,
        batch: &Batch,
        plan: &ForwardPlan,
    ) -> Result<DomainFeatures> {
        let store = &self.store;
        let variant = plan.variant;
        let n = batch.len();
        let fd = self.config.feature_dim();
        let mut out = DomainFeatures::default();

        let o_sum = if variant.uses_text() {
            let ud = tape.constant(batch.user_docs.clone())?;
            let id = tape.constant(batch.item_docs.clone())?;
            let spe_fe = self.extractor(FeRole::specific_for(domain));
            let com_fe = self.extractor(FeRole::Common);
            let o_spe = spe_fe.forward(tape, store, ud, id)?;
            let o_com = com_fe.forward(tape, store, ud, id)?;
            out.o_spe = Some(o_spe);
            out.o_com = Some(o_com);

            let zeros = tape.constant(Tensor::zeros(&[n, fd]))?;
            let (spe_part, com_part) = match variant.mask() {
                Mask::None => (o_spe, o_com),
                Mask::Specific => (zeros, o_com),
                Mask::Common => (o_spe, zeros),
            };
            if plan.training && variant.uses_encoder() {
                let reviews = batch.reviews.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("training batch has no individual reviews".into())
                })?;
                let rv = tape.constant(reviews.clone())?;
                let i_spe = spe_fe.forward_individual(tape, store, rv)?;
                let i_com = com_fe.forward_individual(tape, store, rv)?;
                out.i_spe = Some(i_spe);
                out.i_com = Some(i_com);
                let (a, b) = match variant.mask() {
                    Mask::None => (i_spe, i_com),
                    Mask::Specific => (zeros, i_com),
                    Mask::Common => (i_spe, zeros),
                };
                out.i = Some(combine_individual(tape, a, b)?);
            }
            if plan.training && variant.uses_discriminator() {
                let com_in = match plan.grl_lambda {
                    Some(l) => tape.grl(o_com, l)?,
                    None => o_com,
                };
                out.d_com = Some(self.discriminator.forward(tape, store, com_in)?);
                if variant.discriminates_specific() {
                    out.d_spe = Some(self.discriminator.forward(tape, store, o_spe)?);
                }
            }
            (spe_part, com_part)
        } else {
            let z = tape.constant(Tensor::zeros(&[n, fd]))?;
            (z, z)
        };

        let o = if variant.uses_encoder() {
            self.encoders[domain.index()].encode(tape, store, o_sum.0, o_sum.1)?
        } else {
            tape.add(o_sum.0, o_sum.1)?
        };
        out.o = Some(o);
        out.y_o = Some(
            self.regressor
                .forward(tape, store, o, &batch.users, &batch.items, domain)?,
        );
        if let Some(i) = out.i {
            out.y_i = Some(
                self.regressor
                    .forward(tape, store, i, &batch.users, &batch.items, domain)?,
            );
        }
        Ok(out)
    }

    /// Target-domain rating predictions from aggregated documents only.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let f = self.forward_domain(
            &mut tape,
            Domain::Target,
            batch,
            &ForwardPlan::inference(self.variant),
        )?;
        Ok(tape.value(f.y_o.expect("prediction")).data().to_vec())
    }

    /// Frozen aggregated features `(O_spe, O_com)` per sample.
    pub fn features(&self, domain: Domain, batch: &Batch) -> Result<FeaturePair> {
        let mut tape = Tape::new();
        let plan = ForwardPlan::inference(Variant::SerSa);
        let f = self.forward_domain(&mut tape, domain, batch, &plan)?;
        let rows = |v: Var| -> Vec<Vec<f64>> {
            let t = tape.value(v);
            let w = t.shape()[1];
            t.data().chunks(w).map(<[f64]>::to_vec).collect()
        };
        Ok((rows(f.o_spe.unwrap()), rows(f.o_com.unwrap())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            emb_dim: 3,
            filters: 4,
            window: 2,
            conv_layers: 1,
            agg_words: 6,
            review_words: 4,
            disc_hidden: 5,
            reg_hidden: 5,
            latent_dim: 2,
            mine_hidden: 3,
        }
    }

    fn entities() -> [EntityIndex; 2] {
        [
            EntityIndex::new(vec!["a".into(), "b".into()], vec!["x".into()]),
            EntityIndex::new(vec!["c".into()], vec!["y".into(), "z".into()]),
        ]
    }

    fn model() -> SerModel {
        SerModel::new(tiny_config(), Variant::SerSa, entities(), 0.0, 3).unwrap()
    }

    fn doc(t: &mut Tape, batch: usize, words: usize, dim: usize, rng: &mut ChaCha8Rng) -> Var {
        let data = (0..batch * words * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        t.constant(Tensor::new(vec![batch, words, dim], data).unwrap()).unwrap()
    }

    #[test]
    fn zero_documents_give_zero_feature() {
        let m = model();
        let mut t = Tape::new();
        let z = t.constant(Tensor::zeros(&[2, 6, 3])).unwrap();
        let o = m.extractor(FeRole::Common).forward(&mut t, &m.store, z, z).unwrap();
        assert_eq!(t.shape(o), &[2, 8]);
        assert!(t.value(o).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_filter_response_is_pooled() {
        let cfg = ModelConfig {
            emb_dim: 2,
            filters: 1,
            window: 1,
            ..tiny_config()
        };
        let mut m = SerModel::new(cfg, Variant::SerSa, entities(), 0.0, 1).unwrap();
        let fe = m.extractor(FeRole::Common).clone();
        m.store
            .set_value(fe.stages[0].w, Tensor::matrix(1, 2, vec![2.0, -1.0]).unwrap())
            .unwrap();
        let mut t = Tape::new();
        // one nonzero row [3, 1] among zeros: response 2*3 - 1 = 5
        let mut d = vec![0.0; 6 * 2];
        d[4] = 3.0;
        d[5] = 1.0;
        let x = t.constant(Tensor::new(vec![1, 6, 2], d).unwrap()).unwrap();
        let o = fe.encode_doc(&mut t, &m.store, x).unwrap();
        assert_eq!(t.value(o).data(), &[5.0]);
    }

    #[test]
    fn output_width_is_independent_of_length() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for words in [2, 3, 9] {
            let mut t = Tape::new();
            let u = doc(&mut t, 3, words, 3, &mut rng);
            let o = m.extractor(FeRole::SourceSpecific).forward(&mut t, &m.store, u, u).unwrap();
            assert_eq!(t.shape(o), &[3, 8]);
        }
    }

    #[test]
    fn individual_feature_matches_aggregate_width_and_is_pure() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let r = doc(&mut t, 2, 4, 3, &mut rng);
        let fe = m.extractor(FeRole::Common);
        let a = fe.forward_individual(&mut t, &m.store, r).unwrap();
        let b = fe.forward_individual(&mut t, &m.store, r).unwrap();
        assert_eq!(t.shape(a), &[2, 8]);
        assert_eq!(t.value(a), t.value(b));
        let z = t.constant(Tensor::zeros(&[1, 4, 3])).unwrap();
        let zi = fe.forward_individual(&mut t, &m.store, z).unwrap();
        assert!(t.value(zi).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_embedding_dim_rejected() {
        let m = model();
        let mut t = Tape::new();
        let z = t.constant(Tensor::zeros(&[1, 6, 5])).unwrap();
        assert!(m.extractor(FeRole::Common).forward(&mut t, &m.store, z, z).is_err());
    }

    #[test]
    fn zero_final_layer_gives_half() {
        let mut m = model();
        let out = m.discriminator.out;
        m.store.set_value(out.w, Tensor::zeros(&[5, 1])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut t = Tape::new();
        let data = (0..10 * 8).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let x = t.constant(Tensor::new(vec![10, 8], data).unwrap()).unwrap();
        let p = m.discriminator.forward(&mut t, &m.store, x).unwrap();
        assert!(t.value(p).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn discriminator_output_in_unit_interval() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = Tape::new();
        let data = (0..1000 * 8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x = t.constant(Tensor::new(vec![1000, 8], data).unwrap()).unwrap();
        let p = m.discriminator.forward(&mut t, &m.store, x).unwrap();
        assert!(t.value(p).data().iter().all(|&v| v > 0.0 && v < 1.0));
        let vals = t.value(p).data();
        assert!(vals.windows(2).any(|w| w[0] != w[1]));
    }

    fn set_identity(m: &mut SerModel, d: Domain) {
        let fd = m.config.feature_dim();
        let mut eye = vec![0.0; fd * fd];
        for k in 0..fd {
            eye[k * fd + k] = 1.0;
        }
        let e = m.encoders[d.index()].clone();
        for layer in [e.first, e.second] {
            m.store.set_value(layer.w, Tensor::matrix(fd, fd, eye.clone()).unwrap()).unwrap();
            m.store.set_value(layer.b, Tensor::zeros(&[fd])).unwrap();
        }
    }

    #[test]
    fn identity_encoder_reduces_to_sum() {
        let mut m = model();
        set_identity(&mut m, Domain::Target);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = Tape::new();
        let a: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..2.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..2.0)).collect();
        let va = t.constant(Tensor::matrix(1, 8, a.clone()).unwrap()).unwrap();
        let vb = t.constant(Tensor::matrix(1, 8, b.clone()).unwrap()).unwrap();
        let o = m.encoders[1].encode(&mut t, &m.store, va, vb).unwrap();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        assert_eq!(t.value(o).data(), &sum[..]);
    }

    #[test]
    fn encode_is_symmetric_in_its_arguments() {
        let m = model();
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(1, 8, (0..8).map(|v| v as f64).collect()).unwrap()).unwrap();
        let z = t.constant(Tensor::zeros(&[1, 8])).unwrap();
        let a = m.encoders[0].encode(&mut t, &m.store, x, z).unwrap();
        let b = m.encoders[0].encode(&mut t, &m.store, z, x).unwrap();
        assert_eq!(t.value(a), t.value(b));
        assert_eq!(t.shape(a), &[1, 8]);
        let short = t.constant(Tensor::zeros(&[1, 7])).unwrap();
        assert!(m.encoders[0].encode(&mut t, &m.store, x, short).is_err());
    }

    #[test]
    fn combine_individual_adds() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = t.constant(Tensor::vector(vec![3.0, 4.0])).unwrap();
        let c = combine_individual(&mut t, a, b).unwrap();
        let d = combine_individual(&mut t, b, a).unwrap();
        assert_eq!(t.value(c).data(), &[4.0, 6.0]);
        assert_eq!(t.value(c), t.value(d));
        let z = t.constant(Tensor::vector(vec![0.0, 0.0])).unwrap();
        let e = combine_individual(&mut t, a, z).unwrap();
        assert_eq!(t.value(e), t.value(a));
        let short = t.constant(Tensor::vector(vec![0.0])).unwrap();
        assert!(combine_individual(&mut t, a, short).is_err());
    }

    fn zero_mlp(m: &mut SerModel) {
        let r = m.regressor.clone();
        for d in [r.hidden, r.out] {
            let w = m.store.value(d.w).shape().to_vec();
            let b = m.store.value(d.b).shape().to_vec();
            m.store.set_value(d.w, Tensor::zeros(&w)).unwrap();
            m.store.set_value(d.b, Tensor::zeros(&b)).unwrap();
        }
    }

    #[test]
    fn regress_adds_latent_dot_product() {
        let mut m = model();
        zero_mlp(&mut m);
        let r = m.regressor.clone();
        m.store
            .set_value(r.user_factors[1], Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap())
            .unwrap();
        m.store
            .set_value(r.item_factors[1], Tensor::matrix(2, 2, vec![3.0, 4.0, 0.0, 0.0]).unwrap())
            .unwrap();
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[1, 8])).unwrap();
        let y = r
            .forward(&mut t, &m.store, x, &[Some(0)], &[Some(0)], Domain::Target)
            .unwrap();
        assert_eq!(t.value(y).data(), &[11.0]);
    }

    #[test]
    fn unseen_user_falls_back_to_mlp() {
        let m = model();
        let r = &m.regressor;
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(1, 8, vec![0.3; 8]).unwrap()).unwrap();
        let y = r
            .forward(&mut t, &m.store, x, &[None], &[Some(1)], Domain::Target)
            .unwrap();
        let mlp = r.mlp(&mut t, &m.store, x).unwrap();
        assert_eq!(t.value(y), t.value(mlp));
        assert!(t.value(y).is_finite());
    }

    #[test]
    fn mine_statistic() {
        let mut m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut t = Tape::new();
        let x = doc(&mut t, 1, 4, 2, &mut rng);
        let x = t.reshape(x, &[1, 8]).unwrap();
        let z1 = t.constant(Tensor::matrix(1, 8, vec![0.5; 8]).unwrap()).unwrap();
        let z2 = t.constant(Tensor::matrix(1, 8, vec![-0.5; 8]).unwrap()).unwrap();
        let net = m.mine[0].clone();
        let a = net.forward(&mut t, &m.store, x, z1).unwrap();
        let b = net.forward(&mut t, &m.store, x, z2).unwrap();
        assert!(t.value(a).is_finite());
        assert_ne!(t.value(a), t.value(b));
        let short = t.constant(Tensor::zeros(&[1, 3])).unwrap();
        assert!(net.forward(&mut t, &m.store, x, short).is_err());

        m.store.set_value(net.out.w, Tensor::zeros(&[3, 1])).unwrap();
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(2, 8, vec![1.0; 16]).unwrap()).unwrap();
        let o = net.forward(&mut t, &m.store, x, x).unwrap();
        assert_eq!(t.value(o).data(), &[0.0, 0.0]);
    }

    #[test]
    fn param_count_matches_store() {
        for layers in [1, 2] {
            let cfg = ModelConfig {
                conv_layers: layers,
                agg_words: 8,
                ..tiny_config()
            };
            let m = SerModel::new(cfg.clone(), Variant::SerSa, entities(), 0.0, 0).unwrap();
            assert_eq!(cfg.param_count(&m.entities), Some(m.store.numel()));
        }
        let huge = ModelConfig {
            emb_dim: usize::MAX / 2,
            ..tiny_config()
        };
        assert_eq!(huge.param_count(&entities()), None);
    }

    #[test]
    fn rejects_window_longer_than_documents() {
        let cfg = ModelConfig {
            window: 7,
            ..tiny_config()
        };
        assert!(SerModel::new(cfg, Variant::SerSa, entities(), 0.0, 0).is_err());
    }
}
