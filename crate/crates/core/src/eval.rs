//! Metrics, linear domain probes, feature export and nearest-word
//! explanations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::batch::BatchBuilder;
use crate::corpus::{Domain, EmbeddingTable, Split};
use crate::error::{Error, Result};
use crate::model::{FeRole, FeaturePair, SerModel};

/// Rows per forward pass when scoring many records.
const CHUNK: usize = 256;

pub fn mse(pred: &[f64], labels: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "mse needs equal non-empty inputs, got {} and {}",
            pred.len(),
            labels.len()
        )));
    }
    let s: f64 = pred.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok(s / pred.len() as f64)
}

/// One scored test interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub prediction: f64,
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains
        .enumerate()
        .map(|(j, g)| g / ((j + 2) as f64).log2())
        .sum()
}

/// nDCG@k of one group: rank by prediction descending, ties by item id.
pub fn ndcg_group(group: &[&Scored], k: usize) -> f64 {
    let mut by_pred: Vec<&Scored> = group.to_vec();
    by_pred.sort_by(|a, b| {
        b.prediction
            .total_cmp(&a.prediction)
            .then_with(|| a.item.cmp(&b.item))
    });
    let mut ideal: Vec<f64> = group.iter().map(|s| s.rating).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(ideal.into_iter().take(k));
    if idcg == 0.0 {
        return 1.0;
    }
    dcg(by_pred.iter().take(k).map(|s| s.rating)) / idcg
}

/// Mean nDCG@k over users with at least two scored items, plus the
/// per-user values in user order.
pub fn ndcg_at_k(scored: &[Scored], k: usize) -> Result<(f64, Vec<(String, f64)>)> {
    if k == 0 {
        return Err(Error::InvalidArgument("nDCG cutoff must be positive".into()));
    }
    let mut groups: BTreeMap<&str, Vec<&Scored>> = BTreeMap::new();
    for s in scored {
        groups.entry(s.user.as_str()).or_default().push(s);
    }
    let per_user: Vec<(String, f64)> = groups
        .into_iter()
        .filter(|(_, g)| g.len() >= 2)
        .map(|(u, g)| (u.to_string(), ndcg_group(&g, k)))
        .collect();
    if per_user.is_empty() {
        return Err(Error::InvalidArgument(
            "no user has two or more scored items".into(),
        ));
    }
    let mean = per_user.iter().map(|(_, v)| v).sum::<f64>() / per_user.len() as f64;
    Ok((mean, per_user))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub mse: f64,
    pub k: usize,
    /// `None` when no user has two scored items.
    pub ndcg: Option<f64>,
    pub per_user: Vec<(String, f64)>,
    pub samples: usize,
}

impl MetricReport {
    pub fn from_scored(scored: &[Scored], k: usize) -> Result<Self> {
        let pred: Vec<f64> = scored.iter().map(|s| s.prediction).collect();
        let y: Vec<f64> = scored.iter().map(|s| s.rating).collect();
        let mse = mse(&pred, &y)?;
        let (ndcg, per_user) = match ndcg_at_k(scored, k) {
            Ok((m, p)) => (Some(m), p),
            Err(_) if k > 0 => (None, Vec::new()),
            Err(e) => return Err(e),
        };
        Ok(Self {
            mse,
            k,
            ndcg,
            per_user,
            samples: scored.len(),
        })
    }

    /// `metric,value` lines followed by the per-user nDCG values.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let _ = writeln!(s, "mse,{}", self.mse);
        let nd = self.ndcg.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "ndcg@{},{}", self.k, nd);
        let _ = writeln!(s, "samples,{}", self.samples);
        let _ = writeln!(s, "ndcg_users,{}", self.per_user.len());
        for (u, v) in &self.per_user {
            let _ = writeln!(s, "ndcg_user:{u},{v}");
        }
        s
    }
}

/// Target predictions for records `ids`, from training-split documents only.
pub fn predict_records(model: &SerModel, builder: &BatchBuilder<'_>, ids: &[usize]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(CHUNK) {
        let b = builder.eval_batch(chunk, &model.entities[Domain::Target.index()])?;
        out.extend(model.predict(&b)?);
    }
    Ok(out)
}

pub fn score_split(model: &SerModel, builder: &BatchBuilder<'_>, split: Split) -> Result<Vec<Scored>> {
    let ds = builder.dataset();
    let ids = ds.ids_in(split);
    if ids.is_empty() {
        return Err(Error::InvalidArgument(format!("{split:?} split is empty")));
    }
    let pred = predict_records(model, builder, &ids)?;
    Ok(ids
        .iter()
        .zip(pred)
        .map(|(&id, p)| {
            let r = ds.record(id);
            Scored {
                user: r.user.clone(),
                item: r.item.clone(),
                rating: r.rating,
                prediction: p,
            }
        })
        .collect())
}

pub fn evaluate(model: &SerModel, builder: &BatchBuilder<'_>, split: Split, k: usize) -> Result<MetricReport> {
    MetricReport::from_scored(&score_split(model, builder, split)?, k)
}

/// Frozen `(O_spe, O_com)` rows of records `ids` of `domain`.
pub fn extract_features(
    model: &SerModel,
    builder: &BatchBuilder<'_>,
    domain: Domain,
    ids: &[usize],
) -> Result<FeaturePair> {
    let (mut spe, mut com) = (Vec::new(), Vec::new());
    for chunk in ids.chunks(CHUNK) {
        let b = builder.eval_batch(chunk, &model.entities[domain.index()])?;
        let (s, c) = model.features(domain, &b)?;
        spe.extend(s);
        com.extend(c);
    }
    Ok((spe, com))
}

/// Held-out accuracy of a logistic-regression probe trained on a seeded
/// 70/30 split of standardised features.
pub fn linear_probe(features: &[Vec<f64>], labels: &[u8], seed: u64) -> Result<f64> {
    let n = features.len();
    if n < 4 || labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "probe needs at least four labelled samples, got {n} features and {} labels",
            labels.len()
        )));
    }
    let d = features[0].len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (n * 7) / 10;
    let (train, test) = order.split_at(cut);

    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for &i in train {
        for (m, x) in mean.iter_mut().zip(&features[i]) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    for &i in train {
        for k in 0..d {
            sd[k] += (features[i][k] - mean[k]).powi(2);
        }
    }
    sd.iter_mut()
        .for_each(|s| *s = (*s / train.len() as f64).sqrt().max(1e-12));
    let z = |i: usize| -> Vec<f64> { (0..d).map(|k| (features[i][k] - mean[k]) / sd[k]).collect() };
    let xs: Vec<Vec<f64>> = (0..n).map(z).collect();

    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let (lr, l2) = (0.5, 1e-3);
    for _ in 0..500 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for &i in train {
            let s = ser_autodiff::sigmoid(b + dot(&w, &xs[i]));
            let e = s - labels[i] as f64;
            gb += e;
            gw.iter_mut().zip(&xs[i]).for_each(|(g, x)| *g += e * x);
        }
        let m = train.len() as f64;
        for k in 0..d {
            w[k] -= lr * (gw[k] / m + l2 * w[k]);
        }
        b -= lr * gb / m;
    }
    let correct = test
        .iter()
        .filter(|&&i| (b + dot(&w, &xs[i]) > 0.0) == (labels[i] == 1))
        .count();
    Ok(correct as f64 / test.len() as f64)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeReport {
    pub specific_acc: f64,
    pub common_acc: f64,
    pub per_domain: usize,
}

pub const MIN_PROBE_SAMPLES: usize = 50;

/// Domain-classification accuracy of linear probes on frozen specific and
/// common features of `ids` (source ids, target ids).
pub fn domain_probe(
    model: &SerModel,
    builders: [&BatchBuilder<'_>; 2],
    ids: [&[usize]; 2],
    seed: u64,
) -> Result<ProbeReport> {
    let per_domain = ids[0].len().min(ids[1].len());
    if per_domain < MIN_PROBE_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "domain probe needs at least {MIN_PROBE_SAMPLES} samples per domain, got {per_domain}"
        )));
    }
    let (mut spe, mut com, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for d in [Domain::Source, Domain::Target] {
        let take = &ids[d.index()][..per_domain];
        let (s, c) = extract_features(model, builders[d.index()], d, take)?;
        spe.extend(s);
        com.extend(c);
        labels.extend(std::iter::repeat_n(d.index() as u8, per_domain));
    }
    Ok(ProbeReport {
        specific_acc: linear_probe(&spe, &labels, seed)?,
        common_acc: linear_probe(&com, &labels, seed)?,
        per_domain,
    })
}

pub const EXPORT_TAGS: [&str; 4] = ["s_spe", "s_com", "t_com", "t_spe"];

/// Write `count` random (source record, target record) samples as four
/// rows each: a feature tag, then the `2f` feature values.
pub fn export_embeddings<W: Write>(
    model: &SerModel,
    builders: [&BatchBuilder<'_>; 2],
    count: usize,
    seed: u64,
    out: &mut W,
) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |b: &BatchBuilder<'_>| -> Result<Vec<usize>> {
        let ids = b.dataset().ids_in(Split::Train);
        if ids.is_empty() {
            return Err(Error::InvalidArgument("no training records to export".into()));
        }
        let mut v = Vec::with_capacity(count);
        while v.len() < count {
            let mut shuffled = ids.clone();
            shuffled.shuffle(&mut rng);
            v.extend(shuffled.into_iter().take(count - v.len()));
        }
        Ok(v)
    };
    let src = pick(builders[0])?;
    let tgt = pick(builders[1])?;
    let (ss, sc) = extract_features(model, builders[0], Domain::Source, &src)?;
    let (ts, tc) = extract_features(model, builders[1], Domain::Target, &tgt)?;
    let mut buf = String::new();
    for k in 0..count {
        for (tag, row) in EXPORT_TAGS.iter().zip([&ss[k], &sc[k], &tc[k], &ts[k]]) {
            buf.push_str(tag);
            for v in row {
                let _ = write!(buf, "\t{v}");
            }
            buf.push('\n');
        }
    }
    out.write_all(buf.as_bytes())
        .map_err(|e| Error::io("<embeddings>", e))?;
    Ok(4 * count)
}

/// Parse rows written by [`export_embeddings`].
pub fn read_embeddings<R: BufRead>(reader: R) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rows = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<embeddings>", e))?;
        let mut parts = line.split('\t');
        let tag = parts.next().unwrap_or_default().to_string();
        let vals = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("embedding row {}: {e}", n + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((tag, vals));
    }
    Ok(rows)
}

/// Response of every filter to a word repeated across the whole window,
/// passed through each convolution stage in turn.
fn word_signature(model: &SerModel, role: FeRole, e: &[f64]) -> Vec<f64> {
    let fe = model.extractor(role);
    let mut h = e.to_vec();
    for st in &fe.stages {
        let w = model.store.value(st.w);
        let b = model.store.value(st.b).data();
        let (f, span) = (w.shape()[0], w.shape()[1]);
        let c = h.len();
        let mut next = vec![0.0; f];
        for o in 0..f {
            let row = &w.data()[o * span..(o + 1) * span];
            let s: f64 = row.chunks(c).map(|wj| dot(wj, &h)).sum();
            next[o] = (s + b[o]).max(0.0);
        }
        h = next;
    }
    h
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    (na > 0.0 && nb > 0.0).then(|| dot(a, b) / (na * nb))
}

/// Top-`k` words per half (user, item) of a `2f` feature produced by
/// extractor `role`, ranked by cosine similarity between the half and each
/// word's filter signature. Ties go to the lexicographically smaller word.
pub fn nearest_words(
    model: &SerModel,
    role: FeRole,
    feature: &[f64],
    table: &EmbeddingTable,
    k: usize,
) -> Result<[Vec<(String, f64)>; 2]> {
    if table.is_empty() {
        return Err(Error::InvalidArgument("empty vocabulary".into()));
    }
    let f = model.config.filters;
    if feature.len() != 2 * f {
        return Err(Error::InvalidArgument(format!(
            "feature has {} values, expected {}",
            feature.len(),
            2 * f
        )));
    }
    let sigs: Vec<Vec<f64>> = (0..table.len())
        .map(|id| word_signature(model, role, table.vector_by_id(id)))
        .collect();
    let rank = |half: &[f64]| -> Vec<(String, f64)> {
        let mut scored: Vec<(String, f64)> = sigs
            .iter()
            .enumerate()
            .filter_map(|(id, s)| cosine(half, s).map(|c| (table.words()[id].clone(), c)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    };
    Ok([rank(&feature[..f]), rank(&feature[f..])])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::EntityIndex;
    use crate::model::ModelConfig;
    use crate::variant::Variant;
    use rand::Rng;
    use ser_autodiff::Tensor;

    fn s(user: &str, item: &str, rating: f64, prediction: f64) -> Scored {
        Scored {
            user: user.into(),
            item: item.into(),
            rating,
            prediction,
        }
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[4.0, 2.0], &[3.0, 3.0]).unwrap(), 1.0);
        assert_eq!(mse(&[1.5, 2.5], &[1.5, 2.5]).unwrap(), 0.0);
        assert!(mse(&[], &[]).is_err());
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ndcg_examples() {
        let g = [s("u", "a", 3.0, 0.0), s("u", "b", 1.0, 1.0)];
        let (m, _) = ndcg_at_k(&g, 2).unwrap();
        let l3 = 3f64.log2();
        assert!((m - (1.0 + 3.0 / l3) / (3.0 + 1.0 / l3)).abs() < 1e-12);
        assert!((m - 0.796708).abs() < 1e-6);

        let g = [s("u", "a", 3.0, 2.0), s("u", "b", 1.0, 1.0)];
        assert_eq!(ndcg_at_k(&g, 5).unwrap().0, 1.0);

        let g = [s("u", "a", 4.0, 0.3), s("u", "b", 4.0, 0.9), s("u", "c", 4.0, 0.1)];
        assert_eq!(ndcg_at_k(&g, 2).unwrap().0, 1.0);
    }

    #[test]
    fn ndcg_ties_break_by_item() {
        let g = [s("u", "b", 5.0, 1.0), s("u", "a", 1.0, 1.0)];
        let (m, _) = ndcg_at_k(&g, 1).unwrap();
        assert_eq!(m, 1.0 / 5.0);
    }

    #[test]
    fn ndcg_needs_a_qualifying_user() {
        let g = [s("u", "a", 3.0, 0.0), s("v", "b", 1.0, 1.0)];
        assert!(ndcg_at_k(&g, 5).is_err());
        assert!(ndcg_at_k(&g, 0).is_err());
        let r = MetricReport::from_scored(&g, 5).unwrap();
        assert_eq!(r.ndcg, None);
        assert!(r.to_csv().contains("ndcg@5,\n"));
    }

    #[test]
    fn probe_on_separable_and_identical_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<u8> = (0..200).map(|i| (i % 2) as u8).collect();
        let sep: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| vec![l as f64, rng.gen_range(-1.0..1.0)])
            .collect();
        assert_eq!(linear_probe(&sep, &labels, 1).unwrap(), 1.0);
        let same: Vec<Vec<f64>> = labels.iter().map(|_| vec![0.3, -0.2]).collect();
        let acc = linear_probe(&same, &labels, 1).unwrap();
        assert!((0.3..=0.7).contains(&acc), "{acc}");
    }

    #[test]
    fn probe_on_shuffled_labels_is_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let feats: Vec<Vec<f64>> = (0..1000)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<u8> = (0..1000).map(|_| rng.gen_range(0..2)).collect();
        let acc = linear_probe(&feats, &labels, 9).unwrap();
        assert!((0.4..=0.6).contains(&acc), "{acc}");
    }

    fn word_model() -> SerModel {
        let cfg = ModelConfig {
            emb_dim: 3,
            filters: 3,
            window: 1,
            conv_layers: 1,
            agg_words: 4,
            review_words: 4,
            disc_hidden: 2,
            reg_hidden: 2,
            latent_dim: 2,
            mine_hidden: 2,
        };
        let e = EntityIndex::new(vec!["u".into()], vec!["i".into()]);
        let mut m = SerModel::new(cfg, Variant::SerSa, [e.clone(), e], 0.0, 0).unwrap();
        let st = m.extractor(FeRole::Common).stages[0];
        let eye = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        m.store.set_value(st.w, eye).unwrap();
        m
    }

    fn table() -> EmbeddingTable {
        EmbeddingTable::from_entries(vec![
            ("good".into(), vec![1.0, 0.0, 0.0]),
            ("fine".into(), vec![2.0, 0.0, 0.0]),
            ("bad".into(), vec![0.0, 1.0, 0.0]),
            ("meh".into(), vec![0.0, 0.0, 0.0]),
            ("odd".into(), vec![0.2, 0.1, 0.9]),
        ])
        .unwrap()
    }

    #[test]
    fn nearest_words_identity_projection() {
        let m = word_model();
        let t = table();
        let feat = [0.0, 1.0, 0.0, 0.2, 0.1, 0.9];
        let [user, item] = nearest_words(&m, FeRole::Common, &feat, &t, 2).unwrap();
        assert_eq!(user[0].0, "bad");
        assert_eq!(item[0].0, "odd");
        let [all, _] = nearest_words(&m, FeRole::Common, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0], &t, 99).unwrap();
        // zero-norm "meh" is dropped; equal cosines fall back to word order
        let words: Vec<&str> = all.iter().map(|(w, _)| w.as_str()).collect();
        assert_eq!(words, ["fine", "good", "odd", "bad"]);
        assert!(nearest_words(&m, FeRole::Common, &[1.0], &t, 2).is_err());
    }
}
