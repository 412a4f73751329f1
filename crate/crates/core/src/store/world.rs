//! Synthetic Gaussian-mixture worlds.
//!
//! A world bundles the item database, the cluster centres it was drawn
//! from, a finite sub-query vocabulary (each token has a fixed text
//! embedding) and a list of broad queries, each the normalised mean of a few
//! component centres with a reference item set drawn from those components.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{load_db, save_db, Embedding, EmbeddingDb};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Variants per cluster centre in the vocabulary.
pub const VARIANTS_PER_CENTER: usize = 3;

/// Target size of a query's reference set before splitting across components.
const REFERENCE_BUDGET: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct WorldParams {
    pub seed: u64,
    pub dim: usize,
    pub clusters: usize,
    pub items_per_cluster: usize,
    pub query_count: usize,
    pub clusters_per_query: usize,
    /// Standard deviation of item offsets around their centre.
    pub cluster_spread: f64,
    /// Standard deviation of vocabulary variant offsets around their centre.
    pub variant_spread: f64,
    /// Fraction of queries held out from training (taken from the end).
    pub heldout_fraction: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 16,
            clusters: 8,
            items_per_cluster: 100,
            query_count: 48,
            clusters_per_query: 2,
            cluster_spread: 0.08,
            variant_spread: 0.15,
            heldout_fraction: 0.25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Heldout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub id: u64,
    pub embedding: Embedding,
    pub components: Vec<usize>,
    pub reference: BTreeSet<u64>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticWorld {
    pub db: EmbeddingDb,
    pub centers: Vec<Embedding>,
    /// Token id is the index; the embedding plays the role of `e_text`.
    pub vocab: Vec<Embedding>,
    /// Cluster each token was derived from.
    pub token_cluster: Vec<usize>,
    pub queries: Vec<Query>,
}

impl SyntheticWorld {
    pub fn dim(&self) -> usize {
        self.db.dim()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn train_queries(&self) -> impl Iterator<Item = &Query> {
        self.queries.iter().filter(|q| q.split == Split::Train)
    }

    pub fn heldout_queries(&self) -> impl Iterator<Item = &Query> {
        self.queries.iter().filter(|q| q.split == Split::Heldout)
    }

    pub fn query(&self, id: u64) -> Option<&Query> {
        self.queries.iter().find(|q| q.id == id)
    }

    /// Cluster whose centre is nearest to `v`.
    pub fn nearest_center(&self, v: &[f64]) -> usize {
        self.centers
            .iter()
            .enumerate()
            .map(|(i, c)| (i, super::squared_distance(c, v)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Writes the world as a directory of `R4TE` tables plus `queries.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_db(&self.db, &dir.join("db.r4te"))?;
        save_db(&table(&self.centers)?, &dir.join("centers.r4te"))?;
        save_db(&table(&self.vocab)?, &dir.join("vocab.r4te"))?;
        let qdb = EmbeddingDb::new(
            self.dim(),
            self.queries
                .iter()
                .map(|q| (q.id, q.embedding.clone()))
                .collect(),
        )?;
        save_db(&qdb, &dir.join("queries.r4te"))?;
        fs::write(dir.join("queries.csv"), self.queries_csv())?;
        Ok(())
    }

    fn queries_csv(&self) -> String {
        let mut out = String::from("query_id,split,components,reference\n");
        for q in &self.queries {
            let split = match q.split {
                Split::Train => "train",
                Split::Heldout => "heldout",
            };
            let comps: Vec<String> = q.components.iter().map(|c| c.to_string()).collect();
            let refs: Vec<String> = q.reference.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "{},{},{},{}", q.id, split, comps.join(" "), refs.join(" "));
        }
        out
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let db = load_db(&dir.join("db.r4te"))?;
        let centers = untable(&load_db(&dir.join("centers.r4te"))?);
        let vocab = untable(&load_db(&dir.join("vocab.r4te"))?);
        let qdb = load_db(&dir.join("queries.r4te"))?;
        let csv = fs::read_to_string(dir.join("queries.csv"))?;

        let mut queries = Vec::new();
        let mut offset = 0u64;
        for (lineno, line) in csv.lines().enumerate() {
            let here = offset;
            offset += line.len() as u64 + 1;
            if lineno == 0 {
                if line != "query_id,split,components,reference" {
                    return Err(Error::format(0, "queries.csv: unexpected header"));
                }
                continue;
            }
            let bad = |what: &str| Error::format(here, format!("queries.csv line {}: {what}", lineno + 1));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let id: u64 = fields[0].parse().map_err(|_| bad("bad query id"))?;
            let split = match fields[1] {
                "train" => Split::Train,
                "heldout" => Split::Heldout,
                _ => return Err(bad("bad split")),
            };
            let components = parse_list::<usize>(fields[2]).ok_or_else(|| bad("bad components"))?;
            let reference = parse_list::<u64>(fields[3])
                .ok_or_else(|| bad("bad reference"))?
                .into_iter()
                .collect();
            let embedding = Embedding::new(
                qdb.get(id).ok_or_else(|| bad("query missing from queries.r4te"))?.to_vec(),
            )?;
            queries.push(Query {
                id,
                embedding,
                components,
                reference,
                split,
            });
        }

        let token_cluster = (0..vocab.len())
            .map(|t| t / (VARIANTS_PER_CENTER + 1))
            .collect();
        let world = Self {
            db,
            centers,
            vocab,
            token_cluster,
            queries,
        };
        world.validate()?;
        Ok(world)
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.vocab.iter().chain(&self.centers).any(|e| e.dim() != d) {
            return Err(Error::shape("world tables disagree on dimension"));
        }
        if self.vocab.len() != self.centers.len() * (VARIANTS_PER_CENTER + 1) {
            return Err(Error::domain("vocabulary size does not match centre count"));
        }
        for q in &self.queries {
            if q.reference.is_empty() {
                return Err(Error::domain(format!("query {} has an empty reference set", q.id)));
            }
            if let Some(id) = q.reference.iter().find(|id| self.db.get(**id).is_none()) {
                return Err(Error::domain(format!(
                    "query {} references unknown item {id}",
                    q.id
                )));
            }
        }
        Ok(())
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
    s.split_whitespace().map(|x| x.parse().ok()).collect()
}

fn table(rows: &[Embedding]) -> Result<EmbeddingDb> {
    let dim = rows.first().map_or(1, |e| e.dim());
    EmbeddingDb::new(dim, rows.iter().cloned().enumerate().map(|(i, e)| (i as u64, e)).collect())
}

fn untable(db: &EmbeddingDb) -> Vec<Embedding> {
    db.iter()
        .map(|(_, v)| Embedding::new(v.to_vec()).expect("loaded rows are finite"))
        .collect()
}

fn random_unit(rng: &mut Rng, dim: usize) -> Result<Embedding> {
    Embedding::normalized((0..dim).map(|_| rng.normal()).collect())
}

fn jitter(rng: &mut Rng, center: &Embedding, spread: f64) -> Result<Embedding> {
    if spread == 0.0 {
        return Ok(center.clone());
    }
    Embedding::normalized(center.iter().map(|c| c + spread * rng.normal()).collect())
}

/// Draws a world. Item ids are `cluster * items_per_cluster + j`; token ids
/// are `cluster * 4 + v` with `v = 0` the centre itself.
pub fn generate_world(p: &WorldParams) -> Result<SyntheticWorld> {
    if p.clusters < 2 {
        return Err(Error::domain("need at least 2 clusters"));
    }
    if p.dim < 4 {
        return Err(Error::domain("dimension must be at least 4"));
    }
    if p.clusters_per_query < 2 || p.clusters_per_query > p.clusters {
        return Err(Error::domain(format!(
            "clusters_per_query must lie in [2, {}]",
            p.clusters
        )));
    }
    if p.items_per_cluster == 0 || p.query_count == 0 {
        return Err(Error::domain("item and query counts must be positive"));
    }
    if !(p.cluster_spread >= 0.0 && p.variant_spread >= 0.0) {
        return Err(Error::domain("spreads must be non-negative"));
    }
    if !(0.0..1.0).contains(&p.heldout_fraction) {
        return Err(Error::domain("heldout_fraction must lie in [0, 1)"));
    }

    let mut rng = Rng::new(p.seed);
    let centers = (0..p.clusters)
        .map(|_| random_unit(&mut rng, p.dim))
        .collect::<Result<Vec<_>>>()?;

    let mut items = Vec::with_capacity(p.clusters * p.items_per_cluster);
    for (c, center) in centers.iter().enumerate() {
        for j in 0..p.items_per_cluster {
            let id = (c * p.items_per_cluster + j) as u64;
            items.push((id, jitter(&mut rng, center, p.cluster_spread)?));
        }
    }
    let db = EmbeddingDb::new(p.dim, items)?;

    let mut vocab = Vec::with_capacity(p.clusters * (VARIANTS_PER_CENTER + 1));
    let mut token_cluster = Vec::with_capacity(vocab.capacity());
    for (c, center) in centers.iter().enumerate() {
        vocab.push(center.clone());
        token_cluster.push(c);
        for _ in 0..VARIANTS_PER_CENTER {
            vocab.push(jitter(&mut rng, center, p.variant_spread)?);
            token_cluster.push(c);
        }
    }

    let per_component = REFERENCE_BUDGET.div_ceil(p.clusters_per_query);
    let heldout = (p.heldout_fraction * p.query_count as f64).ceil() as usize;
    let mut queries = Vec::with_capacity(p.query_count);
    for q in 0..p.query_count {
        let mut order: Vec<usize> = (0..p.clusters).collect();
        rng.shuffle(&mut order);
        let mut components = order[..p.clusters_per_query].to_vec();
        components.sort_unstable();

        let mut mean = vec![0.0; p.dim];
        for &c in &components {
            for (m, v) in mean.iter_mut().zip(centers[c].iter()) {
                *m += v / components.len() as f64;
            }
        }
        let embedding = Embedding::normalized(mean)?;

        let mut reference = BTreeSet::new();
        for &c in &components {
            for hit in db.knn(&centers[c], per_component)? {
                reference.insert(hit.id);
            }
        }
        let split = if q + heldout >= p.query_count {
            Split::Heldout
        } else {
            Split::Train
        };
        queries.push(Query {
            id: q as u64,
            embedding,
            components,
            reference,
            split,
        });
    }

    Ok(SyntheticWorld {
        db,
        centers,
        vocab,
        token_cluster,
        queries,
    })
}
