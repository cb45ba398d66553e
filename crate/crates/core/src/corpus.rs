//! Review ingestion, splitting, word embeddings and document vectorisation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use ser_autodiff::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    /// Discriminator label: source 0, target 1.
    pub fn label(self) -> f64 {
        match self {
            Domain::Source => 0.0,
            Domain::Target => 1.0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            Domain::Source => "s",
            Domain::Target => "t",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// JSON keys for the four review fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMapping {
    pub user: String,
    pub item: String,
    pub rating: String,
    pub text: String,
}

impl Default for FieldMapping {
    fn default() -> Self {
        Self {
            user: "user".into(),
            item: "item".into(),
            rating: "rating".into(),
            text: "text".into(),
        }
    }
}

impl FieldMapping {
    /// Amazon 5-core review dumps.
    pub fn amazon() -> Self {
        Self {
            user: "reviewerID".into(),
            item: "asin".into(),
            rating: "overall".into(),
            text: "reviewText".into(),
        }
    }
}

impl FromStr for FieldMapping {
    type Err = Error;

    /// `amazon`, `default`, or `user=K,item=K,rating=K,text=K` overrides.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amazon" => return Ok(Self::amazon()),
            "default" | "" => return Ok(Self::default()),
            _ => {}
        }
        let mut m = Self::default();
        for part in s.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("field mapping entry `{part}` is not key=value"))
            })?;
            let slot = match k.trim() {
                "user" => &mut m.user,
                "item" => &mut m.item,
                "rating" => &mut m.rating,
                "text" => &mut m.text,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown review field `{other}`"
                    )))
                }
            };
            *slot = v.trim().to_string();
        }
        Ok(m)
    }
}

/// All records of one domain with per-user and per-item indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    domain: Domain,
    records: Vec<ReviewRecord>,
    splits: Vec<Split>,
    by_user: BTreeMap<String, Vec<usize>>,
    by_item: BTreeMap<String, Vec<usize>>,
    skipped: usize,
}

fn parse_record(line: &str, map: &FieldMapping) -> Option<ReviewRecord> {
    let v: Value = serde_json::from_str(line).ok()?;
    let obj = v.as_object()?;
    let user = obj.get(&map.user)?.as_str()?;
    let item = obj.get(&map.item)?.as_str()?;
    let rating = obj.get(&map.rating)?.as_f64()?;
    let text = obj.get(&map.text)?.as_str()?;
    if user.is_empty() || item.is_empty() || !rating.is_finite() {
        return None;
    }
    Some(ReviewRecord {
        user: user.to_string(),
        item: item.to_string(),
        rating,
        text: text.to_string(),
    })
}

impl DomainDataset {
    /// Build from records; every record starts in the training split.
    pub fn from_records(domain: Domain, records: Vec<ReviewRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Corpus(format!("{domain} dataset has no records")));
        }
        let mut by_user: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_item: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.user.is_empty() || r.item.is_empty() || !r.rating.is_finite() {
                return Err(Error::Corpus(format!("record {i} is invalid")));
            }
            by_user.entry(r.user.clone()).or_default().push(i);
            by_item.entry(r.item.clone()).or_default().push(i);
        }
        let splits = vec![Split::Train; records.len()];
        Ok(Self {
            domain,
            records,
            splits,
            by_user,
            by_item,
            skipped: 0,
        })
    }

    /// Parse JSON-lines reviews. Malformed lines are skipped and counted;
    /// more than half malformed is fatal.
    pub fn parse<R: Read>(reader: R, domain: Domain, map: &FieldMapping) -> Result<Self> {
        let mut records = Vec::new();
        let mut bad = 0usize;
        for line in BufReader::new(reader).lines() {
            let line = line.map_err(|e| Error::Corpus(format!("read error: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            match parse_record(&line, map) {
                Some(r) => records.push(r),
                None => bad += 1,
            }
        }
        let total = records.len() + bad;
        if total == 0 {
            return Err(Error::Corpus(format!("{domain} review input is empty")));
        }
        if bad * 2 > total {
            return Err(Error::Corpus(format!(
                "{bad} of {total} {domain} review lines are malformed"
            )));
        }
        let mut ds = Self::from_records(domain, records)?;
        ds.skipped = bad;
        Ok(ds)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn records(&self) -> &[ReviewRecord] {
        &self.records
    }

    pub fn record(&self, id: usize) -> &ReviewRecord {
        &self.records[id]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of malformed lines skipped while parsing.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn split_of(&self, id: usize) -> Split {
        self.splits[id]
    }

    pub fn user_records(&self, user: &str) -> &[usize] {
        self.by_user.get(user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn item_records(&self, item: &str) -> &[usize] {
        self.by_item.get(item).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn ids_in(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    /// Users and items that occur in the training split, sorted.
    pub fn train_entities(&self) -> (Vec<String>, Vec<String>) {
        let pick = |idx: &BTreeMap<String, Vec<usize>>| {
            idx.iter()
                .filter(|(_, ids)| ids.iter().any(|&i| self.splits[i] == Split::Train))
                .map(|(k, _)| k.clone())
                .collect()
        };
        (pick(&self.by_user), pick(&self.by_item))
    }

    /// Seeded 80/10/10 partition. Validation and test sizes are
    /// `floor(n / 10)`; the remainder goes to training.
    pub fn split(mut self, seed: u64) -> Result<Self> {
        let n = self.records.len();
        if n < 10 {
            return Err(Error::Corpus(format!(
                "{} dataset has {n} records; splitting needs at least 10",
                self.domain
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let held = n / 10;
        let n_train = n - 2 * held;
        for (pos, &id) in order.iter().enumerate() {
            self.splits[id] = if pos < n_train {
                Split::Train
            } else if pos < n_train + held {
                Split::Validation
            } else {
                Split::Test
            };
        }
        Ok(self)
    }

    /// Replace review texts (used to plant marker tokens in tests).
    pub fn map_texts(mut self, mut f: impl FnMut(usize, &ReviewRecord) -> String) -> Self {
        for i in 0..self.records.len() {
            let t = f(i, &self.records[i]);
            self.records[i].text = t;
        }
        self
    }
}

pub fn load_reviews(path: &Path, domain: Domain, map: &FieldMapping) -> Result<DomainDataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    DomainDataset::parse(f, domain, map)
}

/// Lowercase, turn every non-alphanumeric character into a space, split
/// on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .to_lowercase();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Pretrained word vectors. Absent words map to the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
}

impl EmbeddingTable {
    pub fn from_entries(entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut table: Option<Self> = None;
        for (line, (w, v)) in entries.into_iter().enumerate() {
            let t = table.get_or_insert_with(|| Self {
                dim: v.len(),
                words: Vec::new(),
                index: HashMap::new(),
                vectors: Vec::new(),
            });
            t.insert(line + 1, w, v)?;
        }
        table.ok_or(Error::Embedding {
            line: 0,
            msg: "no word vectors".into(),
        })
    }

    fn insert(&mut self, line: usize, word: String, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim || self.dim == 0 {
            return Err(Error::Embedding {
                line,
                msg: format!("expected {} values, found {}", self.dim, v.len()),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Embedding {
                line,
                msg: "non-finite value".into(),
            });
        }
        // First occurrence wins on duplicate words.
        if !self.index.contains_key(&word) {
            self.index.insert(word.clone(), self.words.len());
            self.words.push(word);
            self.vectors.extend(v);
        }
        Ok(())
    }

    /// Parse `word f1 ... fc` lines; the dimension comes from the first line.
    pub fn parse<R: Read>(reader: R) -> Result<Self> {
        let mut table: Option<Self> = None;
        for (n, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = n + 1;
            let line = line.map_err(|e| Error::Embedding {
                line: lineno,
                msg: e.to_string(),
            })?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let v = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Embedding {
                    line: lineno,
                    msg: format!("bad number: {e}"),
                })?;
            if table.is_none() && v.is_empty() {
                return Err(Error::Embedding {
                    line: lineno,
                    msg: "word has no vector".into(),
                });
            }
            let t = table.get_or_insert_with(|| Self {
                dim: v.len(),
                words: Vec::new(),
                index: HashMap::new(),
                vectors: Vec::new(),
            });
            t.insert(lineno, word.to_string(), v)?;
        }
        table.ok_or(Error::Embedding {
            line: 0,
            msg: "no word vectors".into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(f)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn vector_by_id(&self, id: usize) -> &[f64] {
        &self.vectors[id * self.dim..(id + 1) * self.dim]
    }

    /// Vector of `word`, or zeros when it is out of vocabulary.
    pub fn lookup(&self, word: &str) -> Vec<f64> {
        match self.id(word) {
            Some(i) => self.vector_by_id(i).to_vec(),
            None => vec![0.0; self.dim],
        }
    }

    /// SHA-256 over words and the bit patterns of their vectors.
    pub fn vocab_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for (i, w) in self.words.iter().enumerate() {
            h.update((w.len() as u64).to_le_bytes());
            h.update(w.as_bytes());
            for v in self.vector_by_id(i) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, w) in self.words.iter().enumerate() {
            s.push_str(w);
            for v in self.vector_by_id(i) {
                s.push(' ');
                s.push_str(&v.to_string());
            }
            s.push('\n');
        }
        s
    }
}

/// `n x c` word matrix; rows past `words` are zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentEmbedding {
    pub rows: usize,
    pub dim: usize,
    pub words: usize,
    pub data: Vec<f64>,
}

impl DocumentEmbedding {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows, self.dim], self.data.clone()).expect("document shape")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Entity<'a> {
    User(&'a str),
    Item(&'a str),
}

fn entity_train_records<'d>(
    ds: &'d DomainDataset,
    entity: Entity<'_>,
    exclude: Option<(&str, &str)>,
) -> impl Iterator<Item = usize> + 'd {
    let ids = match entity {
        Entity::User(u) => ds.user_records(u),
        Entity::Item(i) => ds.item_records(i),
    };
    let exclude = exclude.map(|(u, i)| (u.to_string(), i.to_string()));
    ids.iter().copied().filter(move |&id| {
        let r = &ds.records[id];
        ds.splits[id] == Split::Train
            && !matches!(&exclude, Some((u, i)) if *u == r.user && *i == r.item)
    })
}

/// All training-split reviews of one entity joined by single spaces in
/// record order, leaving out the review of the `exclude` pair.
pub fn aggregate_reviews(
    ds: &DomainDataset,
    entity: Entity<'_>,
    exclude: Option<(&str, &str)>,
) -> String {
    entity_train_records(ds, entity, exclude)
        .map(|id| ds.records[id].text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// First `n` tokens through the embedding table, zero-padded to `n` rows.
pub fn vectorize(doc: &str, table: &EmbeddingTable, n: usize) -> Result<DocumentEmbedding> {
    if n == 0 {
        return Err(Error::InvalidArgument("document length must be positive".into()));
    }
    let c = table.dim();
    let mut data = vec![0.0; n * c];
    let tokens = tokenize(doc);
    let words = tokens.len().min(n);
    for (r, tok) in tokens.iter().take(n).enumerate() {
        if let Some(id) = table.id(tok) {
            data[r * c..(r + 1) * c].copy_from_slice(table.vector_by_id(id));
        }
    }
    Ok(DocumentEmbedding {
        rows: n,
        dim: c,
        words,
        data,
    })
}

/// Token ids of every review, computed once per dataset and table. Builds
/// the same word matrices as [`aggregate_reviews`] + [`vectorize`] without
/// re-tokenising.
#[derive(Debug, Clone)]
pub struct TokenizedCorpus {
    tokens: Vec<Vec<Option<u32>>>,
}

impl TokenizedCorpus {
    pub fn new(ds: &DomainDataset, table: &EmbeddingTable) -> Self {
        let tokens = ds
            .records
            .iter()
            .map(|r| {
                tokenize(&r.text)
                    .iter()
                    .map(|t| table.id(t).map(|i| i as u32))
                    .collect()
            })
            .collect();
        Self { tokens }
    }

    /// Write the aggregated document of `entity` into `out` (`n * c`
    /// values, already zeroed).
    pub fn fill_aggregate(
        &self,
        ds: &DomainDataset,
        table: &EmbeddingTable,
        entity: Entity<'_>,
        exclude: Option<(&str, &str)>,
        n: usize,
        out: &mut [f64],
    ) {
        let mut row = 0;
        for id in entity_train_records(ds, entity, exclude) {
            if row >= n {
                break;
            }
            row = self.fill_from(id, table, row, n, out);
        }
    }

    /// Write the individual review `id` into `out`.
    pub fn fill_review(&self, id: usize, table: &EmbeddingTable, n: usize, out: &mut [f64]) {
        self.fill_from(id, table, 0, n, out);
    }

    fn fill_from(
        &self,
        id: usize,
        table: &EmbeddingTable,
        mut row: usize,
        n: usize,
        out: &mut [f64],
    ) -> usize {
        let c = table.dim();
        for tok in &self.tokens[id] {
            if row >= n {
                break;
            }
            if let Some(t) = tok {
                out[row * c..(row + 1) * c].copy_from_slice(table.vector_by_id(*t as usize));
            }
            row += 1;
        }
        row
    }
}
