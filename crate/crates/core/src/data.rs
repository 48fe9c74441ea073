//! Ratings, item descriptions, and the splits used to evaluate models on them.
//!
//! Items and users are densely reindexed from 0 as they are first seen.
//! The external identifiers are kept on [`Dataset`] so reports can name
//! items the way the source files do.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GRID_TOLERANCE: f64 = 1e-9;

/// Native rating range and the affine map onto the network's target range.
///
/// A `step` of zero describes a continuous scale (no grid check, no rounding).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
    pub step: f64,
    pub target_low: f64,
    pub target_high: f64,
}

impl RatingScale {
    /// Half-star scale of the HetRec MovieLens files.
    pub const MOVIELENS: RatingScale = RatingScale {
        min: 0.5,
        max: 5.0,
        step: 0.5,
        target_low: 0.0,
        target_high: 1.0,
    };

    pub fn new(min: f64, max: f64, step: f64) -> Result<Self> {
        Self::with_targets(min, max, step, 0.0, 1.0)
    }

    pub fn continuous(min: f64, max: f64) -> Result<Self> {
        Self::new(min, max, 0.0)
    }

    pub fn with_targets(min: f64, max: f64, step: f64, target_low: f64, target_high: f64) -> Result<Self> {
        let finite = [min, max, step, target_low, target_high].iter().all(|v| v.is_finite());
        if !finite || max <= min || step < 0.0 || target_high <= target_low {
            return Err(Error::Config(format!(
                "bad rating scale {min}..{max} step {step} -> {target_low}..{target_high}"
            )));
        }
        if step > 0.0 {
            let cells = (max - min) / step;
            if (cells - cells.round()).abs() > GRID_TOLERANCE {
                return Err(Error::Config(format!(
                    "step {step} does not divide the range {min}..{max}"
                )));
            }
        }
        Ok(RatingScale {
            min,
            max,
            step,
            target_low,
            target_high,
        })
    }

    pub fn is_valid(&self, rating: f64) -> bool {
        if !(rating.is_finite() && rating >= self.min && rating <= self.max) {
            return false;
        }
        if self.step == 0.0 {
            return true;
        }
        let k = (rating - self.min) / self.step;
        (k - k.round()).abs() <= GRID_TOLERANCE
    }

    pub fn validate(&self, rating: f64) -> Result<()> {
        if self.is_valid(rating) {
            Ok(())
        } else {
            Err(Error::InvalidRating {
                value: rating,
                min: self.min,
                max: self.max,
                step: self.step,
            })
        }
    }

    pub fn normalize(&self, rating: f64) -> Result<f64> {
        self.validate(rating)?;
        Ok(self.normalize_unchecked(rating))
    }

    pub(crate) fn normalize_unchecked(&self, rating: f64) -> f64 {
        self.target_low + (rating - self.min) * (self.target_high - self.target_low) / (self.max - self.min)
    }

    /// Inverse of [`normalize`](Self::normalize). Not clamped.
    pub fn denormalize(&self, value: f64) -> f64 {
        self.min + (value - self.target_low) * (self.max - self.min) / (self.target_high - self.target_low)
    }

    pub fn clamp(&self, rating: f64) -> f64 {
        rating.clamp(self.min, self.max)
    }

    /// Nearest valid rating, rounding halves up. Out-of-range values clamp.
    pub fn round_to_step(&self, rating: f64) -> f64 {
        let clamped = self.clamp(rating);
        if self.step == 0.0 {
            return clamped;
        }
        let k = ((clamped - self.min) / self.step + 0.5 + GRID_TOLERANCE).floor();
        self.clamp(self.min + k * self.step)
    }

    /// Centre of the range snapped onto the rating grid.
    pub fn midpoint(&self) -> f64 {
        self.round_to_step(0.5 * (self.min + self.max))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rating {
    pub item: u32,
    pub user: u32,
    pub value: f64,
}

/// The sparse item-by-user rating matrix, stored as triples.
#[derive(Clone, Debug)]
pub struct SparseRatings {
    triples: Vec<Rating>,
    num_items: usize,
    num_users: usize,
    scale: RatingScale,
}

impl SparseRatings {
    pub fn new(triples: Vec<Rating>, num_items: usize, num_users: usize, scale: RatingScale) -> Result<Self> {
        let mut seen = HashSet::with_capacity(triples.len());
        for t in &triples {
            if t.item as usize >= num_items {
                return Err(Error::IndexOutOfRange {
                    what: "item",
                    index: t.item as usize,
                    limit: num_items,
                });
            }
            if t.user as usize >= num_users {
                return Err(Error::IndexOutOfRange {
                    what: "user",
                    index: t.user as usize,
                    limit: num_users,
                });
            }
            scale.validate(t.value)?;
            if !seen.insert((t.item, t.user)) {
                return Err(Error::DuplicateRating {
                    item: t.item.to_string(),
                    user: t.user.to_string(),
                });
            }
        }
        Ok(SparseRatings {
            triples,
            num_items,
            num_users,
            scale,
        })
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[Rating] {
        &self.triples
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn scale(&self) -> &RatingScale {
        &self.scale
    }

    /// Triples at the given positions, in the given order, with m and n kept.
    pub fn subset(&self, positions: &[usize]) -> SparseRatings {
        SparseRatings {
            triples: positions.iter().map(|&p| self.triples[p]).collect(),
            num_items: self.num_items,
            num_users: self.num_users,
            scale: self.scale,
        }
    }

    /// Number of ratings each item received.
    pub fn item_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.num_items];
        for t in &self.triples {
            counts[t.item as usize] += 1;
        }
        counts
    }

    /// The `k` items with the most ratings, ties going to the lower index.
    pub fn most_rated(&self, k: usize) -> Vec<usize> {
        let counts = self.item_counts();
        let mut order: Vec<usize> = (0..self.num_items).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        order.truncate(k);
        order
    }

    pub fn mean_rating(&self) -> Option<f64> {
        if self.triples.is_empty() {
            None
        } else {
            Some(self.triples.iter().map(|t| t.value).sum::<f64>() / self.triples.len() as f64)
        }
    }
}

/// Given (non-latent) description vectors, one row per item.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemProfiles {
    num_items: usize,
    num_attributes: usize,
    values: Vec<f64>,
}

impl ItemProfiles {
    pub fn new(num_items: usize, num_attributes: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_items * num_attributes {
            return Err(Error::Shape(format!(
                "{} profile values for {num_items} items x {num_attributes} attributes",
                values.len()
            )));
        }
        Ok(ItemProfiles {
            num_items,
            num_attributes,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let a = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != a) {
            return Err(Error::Shape("profile rows differ in length".into()));
        }
        Self::new(rows.len(), a, rows.concat())
    }

    /// Profiles with no attributes, for latent-only models.
    pub fn empty(num_items: usize) -> Self {
        ItemProfiles {
            num_items,
            num_attributes: 0,
            values: Vec::new(),
        }
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_attributes(&self) -> usize {
        self.num_attributes
    }

    pub fn row(&self, item: usize) -> &[f64] {
        let a = self.num_attributes;
        &self.values[item * a..(item + 1) * a]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Ratings and profiles together with the external identifiers they came from.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub ratings: SparseRatings,
    pub profiles: ItemProfiles,
    pub item_ids: Vec<String>,
    pub user_ids: Vec<String>,
    pub attribute_names: Vec<String>,
}

impl Dataset {
    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_ids.iter().position(|x| x == id)
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_ids.iter().position(|x| x == id)
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attribute_names.iter().position(|x| x.eq_ignore_ascii_case(name))
    }

    /// Binary profile vector for a list of attribute names.
    pub fn profile_from_names<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<f64>> {
        let mut profile = vec![0.0; self.attribute_names.len()];
        for name in names {
            let name = name.as_ref().trim();
            let idx = self
                .attribute_index(name)
                .ok_or_else(|| Error::Config(format!("unknown attribute `{name}`")))?;
            profile[idx] = 1.0;
        }
        Ok(profile)
    }
}

#[derive(Default)]
struct DatasetBuilder {
    items: HashMap<String, u32>,
    item_ids: Vec<String>,
    users: HashMap<String, u32>,
    user_ids: Vec<String>,
    triples: Vec<Rating>,
    pairs: HashSet<(u32, u32)>,
    item_attributes: Vec<(u32, String)>,
}

impl DatasetBuilder {
    fn intern_item(&mut self, id: &str) -> u32 {
        if let Some(&i) = self.items.get(id) {
            return i;
        }
        let i = self.item_ids.len() as u32;
        self.items.insert(id.to_string(), i);
        self.item_ids.push(id.to_string());
        i
    }

    fn intern_user(&mut self, id: &str) -> u32 {
        if let Some(&u) = self.users.get(id) {
            return u;
        }
        let u = self.user_ids.len() as u32;
        self.users.insert(id.to_string(), u);
        self.user_ids.push(id.to_string());
        u
    }

    fn add_rating(&mut self, item: &str, user: &str, value: f64) -> Result<()> {
        let i = self.intern_item(item);
        let u = self.intern_user(user);
        if !self.pairs.insert((i, u)) {
            return Err(Error::DuplicateRating {
                item: item.to_string(),
                user: user.to_string(),
            });
        }
        self.triples.push(Rating {
            item: i,
            user: u,
            value,
        });
        Ok(())
    }

    fn add_attribute(&mut self, item: &str, attribute: &str) {
        let i = self.intern_item(item);
        self.item_attributes.push((i, attribute.to_string()));
    }

    fn finish(self, scale: RatingScale) -> Result<Dataset> {
        let names: BTreeSet<&str> = self.item_attributes.iter().map(|(_, a)| a.as_str()).collect();
        let attribute_names: Vec<String> = names.into_iter().map(str::to_string).collect();
        let column: HashMap<&str, usize> = attribute_names
            .iter()
            .enumerate()
            .map(|(k, n)| (n.as_str(), k))
            .collect();
        let m = self.item_ids.len();
        let a = attribute_names.len();
        let mut values = vec![0.0; m * a];
        for (item, attr) in &self.item_attributes {
            values[*item as usize * a + column[attr.as_str()]] = 1.0;
        }
        let n = self.user_ids.len();
        Ok(Dataset {
            ratings: SparseRatings::new(self.triples, m, n, scale)?,
            profiles: ItemProfiles::new(m, a, values)?,
            item_ids: self.item_ids,
            user_ids: self.user_ids,
            attribute_names,
        })
    }
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn parse_rating(path: &Path, line: usize, field: &str, scale: &RatingScale) -> Result<f64> {
    let value: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_error(path, line, format!("bad rating `{field}`")))?;
    scale
        .validate(value)
        .map_err(|e| parse_error(path, line, e.to_string()))?;
    Ok(value)
}

/// Load the HetRec 2011 MovieLens files (`user_ratedmovies.dat`, `movie_genres.dat`).
///
/// Both files are tab separated with a header row. Movies that only appear
/// in the genre file become items without ratings.
pub fn load_movielens(ratings_path: impl AsRef<Path>, genres_path: impl AsRef<Path>) -> Result<Dataset> {
    let ratings_path = ratings_path.as_ref();
    let genres_path = genres_path.as_ref();
    let scale = RatingScale::MOVIELENS;
    let mut builder = DatasetBuilder::default();

    let text = read_text(ratings_path)?;
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h,
        None => return Err(parse_error(ratings_path, 1, "missing header row")),
    };
    let columns: Vec<String> = header.split('\t').map(|c| c.trim().to_ascii_lowercase()).collect();
    let find = |name: &str| {
        columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| parse_error(ratings_path, 1, format!("header lacks column `{name}`")))
    };
    let (user_col, movie_col, rating_col) = (find("userid")?, find("movieid")?, find("rating")?);
    let width = user_col.max(movie_col).max(rating_col) + 1;

    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < width {
            return Err(parse_error(
                ratings_path,
                lineno,
                format!("expected at least {width} fields, found {}", fields.len()),
            ));
        }
        let user = fields[user_col].trim();
        let movie = fields[movie_col].trim();
        if user.is_empty() || movie.is_empty() {
            return Err(parse_error(ratings_path, lineno, "empty identifier"));
        }
        let value = parse_rating(ratings_path, lineno, fields[rating_col], &scale)?;
        builder.add_rating(movie, user, value)?;
    }

    let text = read_text(genres_path)?;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() < 2 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse_error(genres_path, lineno, "expected `movieID<TAB>genre`"));
        }
        if lineno == 1 && fields[0].eq_ignore_ascii_case("movieid") {
            continue;
        }
        builder.add_attribute(fields[0], fields[1]);
    }

    builder.finish(scale)
}

/// Load `item,user,rating` lines, plus optional `item,attribute` lines.
///
/// Blank lines and lines starting with `#` are skipped.
pub fn load_csv(ratings_path: impl AsRef<Path>, attributes_path: Option<&Path>, scale: RatingScale) -> Result<Dataset> {
    let ratings_path = ratings_path.as_ref();
    let mut builder = DatasetBuilder::default();
    let text = read_text(ratings_path)?;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse_error(ratings_path, lineno, "expected `item,user,rating`"));
        }
        let value = parse_rating(ratings_path, lineno, fields[2], &scale)?;
        builder.add_rating(fields[0], fields[1], value)?;
    }
    if let Some(path) = attributes_path {
        let text = read_text(path)?;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 2 || fields[0].is_empty() || fields[1].is_empty() {
                return Err(parse_error(path, idx + 1, "expected `item,attribute`"));
            }
            builder.add_attribute(fields[0], fields[1]);
        }
    }
    builder.finish(scale)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

/// Which role each rating position plays in an experiment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    partition: Vec<Partition>,
    fold_of: Option<Vec<usize>>,
    folds: usize,
}

impl SplitAssignment {
    fn positions(&self, which: Partition) -> Vec<usize> {
        self.partition
            .iter()
            .enumerate()
            .filter(|(_, p)| **p == which)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.partition.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partition.is_empty()
    }

    pub fn partition_of(&self, position: usize) -> Partition {
        self.partition[position]
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.positions(Partition::Test)
    }

    pub fn validation_indices(&self) -> Vec<usize> {
        self.positions(Partition::Validation)
    }

    /// Training positions, excluding validation.
    pub fn training_indices(&self) -> Vec<usize> {
        self.positions(Partition::Train)
    }

    /// Training and validation positions together.
    pub fn non_test_indices(&self) -> Vec<usize> {
        self.partition
            .iter()
            .enumerate()
            .filter(|(_, p)| **p != Partition::Test)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn fold_count(&self) -> usize {
        self.folds
    }

    pub fn fold_of(&self) -> Option<&[usize]> {
        self.fold_of.as_deref()
    }

    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        match &self.fold_of {
            Some(f) => f
                .iter()
                .enumerate()
                .filter(|(_, x)| **x == fold)
                .map(|(i, _)| i)
                .collect(),
            None => Vec::new(),
        }
    }

    /// Every position outside `fold`.
    pub fn outside_fold(&self, fold: usize) -> Vec<usize> {
        match &self.fold_of {
            Some(f) => f
                .iter()
                .enumerate()
                .filter(|(_, x)| **x != fold)
                .map(|(i, _)| i)
                .collect(),
            None => (0..self.partition.len()).collect(),
        }
    }
}

fn shuffled_positions(len: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// Random 20% test split, then 10% of the remainder as validation.
pub fn split_holdout(ratings: &SparseRatings, seed: u64) -> Result<SplitAssignment> {
    let total = ratings.len();
    if total < 10 {
        return Err(Error::EmptyInput(format!(
            "need at least 10 ratings to split, found {total}"
        )));
    }
    let n_test = total / 5;
    let n_val = (total - n_test) / 10;
    let order = shuffled_positions(total, seed);
    let mut partition = vec![Partition::Train; total];
    for &p in &order[..n_test] {
        partition[p] = Partition::Test;
    }
    for &p in &order[n_test..n_test + n_val] {
        partition[p] = Partition::Validation;
    }
    Ok(SplitAssignment {
        partition,
        fold_of: None,
        folds: 0,
    })
}

/// Random partition into `k` folds whose sizes differ by at most one.
pub fn kfold(ratings: &SparseRatings, k: usize, seed: u64) -> Result<SplitAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    let total = ratings.len();
    if total < k {
        return Err(Error::EmptyInput(format!("{total} ratings cannot fill {k} folds")));
    }
    let order = shuffled_positions(total, seed);
    let mut fold_of = vec![0; total];
    for (rank, &p) in order.iter().enumerate() {
        fold_of[p] = rank % k;
    }
    Ok(SplitAssignment {
        partition: vec![Partition::Train; total],
        fold_of: Some(fold_of),
        folds: k,
    })
}

/// Split off every rating of the given items. Both halves keep m and n.
pub fn hold_out_items(ratings: &SparseRatings, item_ids: &[usize]) -> (SparseRatings, SparseRatings) {
    let held_set: HashSet<u32> = item_ids.iter().map(|&i| i as u32).collect();
    let (held, train): (Vec<Rating>, Vec<Rating>) = ratings.triples.iter().partition(|t| held_set.contains(&t.item));
    let rebuild = |triples| SparseRatings {
        triples,
        num_items: ratings.num_items,
        num_users: ratings.num_users,
        scale: ratings.scale,
    };
    (rebuild(train), rebuild(held))
}
