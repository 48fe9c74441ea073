//! Rating predictions for items that have never been rated.
//!
//! The new item's description selects neighbouring items; each neighbour's
//! induced latent vector is paired with the new description and pushed through
//! the trained network. The answer is the mode of those predictions, each
//! counted once per rating the neighbour has received.

use serde::{Deserialize, Serialize};

use crate::data::{ItemProfiles, RatingScale, SparseRatings};
use crate::error::{Error, Result};
use crate::trainer::TrainedModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColdStartConfig {
    pub num_neighbors: usize,
    pub dist_thresh: f64,
    /// Neighbours need strictly more ratings than this.
    pub min_ratings: u32,
}

impl Default for ColdStartConfig {
    fn default() -> Self {
        ColdStartConfig {
            num_neighbors: 100,
            dist_thresh: 0.0,
            min_ratings: 50,
        }
    }
}

impl ColdStartConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_neighbors == 0 {
            return Err(Error::Config("num_neighbors must be at least 1".into()));
        }
        if self.dist_thresh.is_nan() || self.dist_thresh < 0.0 {
            return Err(Error::Config(format!(
                "dist_thresh must be >= 0, got {}",
                self.dist_thresh
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neighbor {
    pub item: usize,
    pub distance: u32,
}

/// Exact Hamming-distance search over binary item profiles, packed into bit words.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    items: usize,
    attributes: usize,
    words: usize,
    bits: Vec<u64>,
}

fn pack(profile: &[f64], out: &mut [u64]) -> Result<()> {
    out.iter_mut().for_each(|w| *w = 0);
    for (i, &v) in profile.iter().enumerate() {
        if v == 1.0 {
            out[i / 64] |= 1 << (i % 64);
        } else if v != 0.0 {
            return Err(Error::Config(format!(
                "Hamming search needs binary profiles, found {v} at attribute {i}"
            )));
        }
    }
    Ok(())
}

impl NeighborIndex {
    pub fn build(profiles: &ItemProfiles) -> Result<Self> {
        let attributes = profiles.num_attributes();
        let words = attributes.div_ceil(64);
        let mut bits = vec![0u64; words * profiles.num_items()];
        for item in 0..profiles.num_items() {
            pack(profiles.row(item), &mut bits[item * words..(item + 1) * words])?;
        }
        Ok(NeighborIndex {
            items: profiles.num_items(),
            attributes,
            words,
            bits,
        })
    }

    pub fn len(&self) -> usize {
        self.items
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `k` nearest items, closest first, ties by ascending item index.
    pub fn nearest(&self, profile: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        if profile.len() != self.attributes {
            return Err(Error::Shape(format!(
                "query of {} attributes for an index of {}",
                profile.len(),
                self.attributes
            )));
        }
        let mut query = vec![0u64; self.words];
        pack(profile, &mut query)?;
        let mut all: Vec<Neighbor> = (0..self.len())
            .map(|item| {
                let row = &self.bits[item * self.words..(item + 1) * self.words];
                let distance = row.iter().zip(&query).map(|(a, b)| (a ^ b).count_ones()).sum();
                Neighbor { item, distance }
            })
            .collect();
        let order = |a: &Neighbor, b: &Neighbor| a.distance.cmp(&b.distance).then(a.item.cmp(&b.item));
        if k < all.len() {
            all.select_nth_unstable_by(k, order);
            all.truncate(k);
        }
        all.sort_unstable_by(order);
        Ok(all)
    }
}

/// Accumulated weight per predicted rating, kept sorted by rating.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RatingHistogram {
    bins: Vec<(f64, u64)>,
}

impl RatingHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, rating: f64, weight: u64) {
        match self.bins.binary_search_by(|(r, _)| r.total_cmp(&rating)) {
            Ok(i) => self.bins[i].1 += weight,
            Err(i) => self.bins.insert(i, (rating, weight)),
        }
    }

    pub fn bins(&self) -> &[(f64, u64)] {
        &self.bins
    }

    pub fn total_weight(&self) -> u64 {
        self.bins.iter().map(|(_, w)| w).sum()
    }

    pub fn weight_of(&self, rating: f64) -> u64 {
        self.bins.iter().find(|(r, _)| *r == rating).map_or(0, |(_, w)| *w)
    }
}

/// The rating with the largest weight; on ties the lower rating.
pub fn weighted_mode(hist: &RatingHistogram) -> Result<f64> {
    let mut best: Option<(f64, u64)> = None;
    for &(rating, weight) in hist.bins() {
        if weight == 0 {
            continue;
        }
        // bins ascend, so only a strictly larger weight replaces the leader
        match best {
            Some((_, w)) if weight <= w => {}
            _ => best = Some((rating, weight)),
        }
    }
    best.map(|(r, _)| r).ok_or(Error::NoEligibleNeighbors)
}

/// A trained model, its neighbour index, and the rating counts that weight neighbours.
pub struct ColdStartPredictor<'a> {
    model: &'a TrainedModel,
    index: NeighborIndex,
    counts: Vec<u32>,
    config: ColdStartConfig,
}

impl<'a> ColdStartPredictor<'a> {
    /// `ratings` are the ratings the model was trained on.
    pub fn new(model: &'a TrainedModel, ratings: &SparseRatings, config: ColdStartConfig) -> Result<Self> {
        config.validate()?;
        if ratings.num_items() != model.num_items() {
            return Err(Error::Shape(format!(
                "{} rated items for a model of {}",
                ratings.num_items(),
                model.num_items()
            )));
        }
        Ok(ColdStartPredictor {
            model,
            index: NeighborIndex::build(model.profiles())?,
            counts: ratings.item_counts(),
            config,
        })
    }

    pub fn scale(&self) -> &RatingScale {
        self.model.scale()
    }

    /// Neighbours that pass both the rating-count and the distance filter.
    pub fn eligible_neighbors(&self, profile: &[f64]) -> Result<Vec<Neighbor>> {
        Ok(self
            .index
            .nearest(profile, self.config.num_neighbors)?
            .into_iter()
            .filter(|n| {
                self.counts[n.item] > self.config.min_ratings && f64::from(n.distance) <= self.config.dist_thresh
            })
            .collect())
    }

    pub fn histogram(&self, profile: &[f64], user: usize) -> Result<RatingHistogram> {
        let mut hist = RatingHistogram::new();
        for n in self.eligible_neighbors(profile)? {
            let raw = self
                .model
                .predict_raw(self.model.latents().row(n.item), profile, user)?;
            let rating = self.scale().round_to_step(raw);
            hist.add(rating, u64::from(self.counts[n.item]));
        }
        Ok(hist)
    }

    /// Weighted mode of the neighbour predictions, or the scale midpoint
    /// when no neighbour qualifies.
    pub fn predict(&self, profile: &[f64], user: usize) -> Result<f64> {
        match weighted_mode(&self.histogram(profile, user)?) {
            Ok(r) => Ok(r),
            Err(Error::NoEligibleNeighbors) => Ok(self.scale().midpoint()),
            Err(e) => Err(e),
        }
    }
}

pub fn new_item_prediction(
    profile: &[f64],
    user: usize,
    model: &TrainedModel,
    ratings: &SparseRatings,
    config: &ColdStartConfig,
) -> Result<f64> {
    ColdStartPredictor::new(model, ratings, config.clone())?.predict(profile, user)
}

/// Mean training rating of the items whose profile equals `profile`,
/// falling back to the global mean.
pub fn genre_mean(profile: &[f64], profiles: &ItemProfiles, ratings: &SparseRatings) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in ratings.triples() {
        if profiles.row(t.item as usize) == profile {
            sum += t.value;
            count += 1;
        }
    }
    if count > 0 {
        Some(sum / count as f64)
    } else {
        ratings.mean_rating()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Rating;
    use crate::network::{Network, Topology};
    use crate::trainer::LatentMatrix;

    fn profiles() -> ItemProfiles {
        ItemProfiles::from_rows(&[
            vec![1.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0],
        ])
        .unwrap()
    }

    #[test]
    fn nearest_neighbors_by_hamming() {
        let index = NeighborIndex::build(&profiles()).unwrap();
        let hits = index.nearest(&[1.0, 0.0, 1.0], 3).unwrap();
        assert_eq!(
            hits,
            vec![
                Neighbor { item: 0, distance: 0 },
                Neighbor { item: 2, distance: 0 },
                Neighbor { item: 3, distance: 1 }
            ]
        );
        let zeros = index.nearest(&[0.0, 0.0, 0.0], 4).unwrap();
        assert_eq!(zeros[0], Neighbor { item: 1, distance: 1 });
        assert_eq!(zeros[3], Neighbor { item: 3, distance: 3 });
        assert_eq!(index.nearest(&[0.0, 0.0, 0.0], 50).unwrap().len(), 4);
        assert!(index.nearest(&[0.0, 0.5, 0.0], 1).is_err());
        assert!(index.nearest(&[0.0], 1).is_err());
    }

    #[test]
    fn empty_index_returns_nothing() {
        let index = NeighborIndex::build(&ItemProfiles::new(0, 3, vec![]).unwrap()).unwrap();
        assert!(index.nearest(&[1.0, 0.0, 0.0], 5).unwrap().is_empty());
    }

    #[test]
    fn mode_examples() {
        let mut h = RatingHistogram::new();
        h.add(4.0, 151);
        h.add(5.0, 60);
        assert_eq!(weighted_mode(&h).unwrap(), 4.0);

        let mut tie = RatingHistogram::new();
        tie.add(4.0, 50);
        tie.add(3.0, 50);
        assert_eq!(weighted_mode(&tie).unwrap(), 3.0);

        let mut accumulated = RatingHistogram::new();
        for (count, rating) in [(100, 4.0), (60, 5.0), (51, 4.0)] {
            accumulated.add(rating, count);
        }
        assert_eq!(weighted_mode(&accumulated).unwrap(), 4.0);
        assert_eq!(accumulated.weight_of(4.0), 151);

        assert!(matches!(
            weighted_mode(&RatingHistogram::new()),
            Err(Error::NoEligibleNeighbors)
        ));
    }

    /// Item `i` has latent value `i`; the network predicts `1.5 + latent`
    /// for user 0 on the half-star scale, ignoring the description.
    fn toy_model() -> TrainedModel {
        let scale = RatingScale::MOVIELENS;
        let topology = Topology::new(1, 3, vec![], 1).unwrap();
        let mut network = Network::zeros(topology).unwrap();
        let out = &mut network.weights_mut().layers_mut()[0];
        // normalized slope: one star per latent unit is 1/4.5
        out.set_weight(0, 0, 1.0 / 4.5);
        out.set_bias(0, scale.normalize(1.5).unwrap());
        let latents = LatentMatrix::from_values(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        TrainedModel::from_parts(network, latents, profiles(), scale).unwrap()
    }

    fn counts(per_item: &[usize]) -> SparseRatings {
        let users = *per_item.iter().max().unwrap();
        let mut triples = Vec::new();
        for (item, &n) in per_item.iter().enumerate() {
            for user in 0..n {
                triples.push(Rating {
                    item: item as u32,
                    user: user as u32,
                    value: 3.0,
                });
            }
        }
        SparseRatings::new(triples, per_item.len(), users, RatingScale::MOVIELENS).unwrap()
    }

    #[test]
    fn prediction_is_weighted_mode_over_matching_items() {
        let model = toy_model();
        let ratings = counts(&[60, 200, 80, 300]);
        let cfg = ColdStartConfig::default();
        let predictor = ColdStartPredictor::new(&model, &ratings, cfg.clone()).unwrap();
        // items 0 and 2 match exactly: predictions 1.5 (x60) and 3.5 (x80)
        let hist = predictor.histogram(&[1.0, 0.0, 1.0], 0).unwrap();
        assert_eq!(hist.bins(), &[(1.5, 60), (3.5, 80)]);
        assert_eq!(predictor.predict(&[1.0, 0.0, 1.0], 0).unwrap(), 3.5);
        assert_eq!(
            new_item_prediction(&[1.0, 0.0, 1.0], 0, &model, &ratings, &cfg).unwrap(),
            3.5
        );
    }

    #[test]
    fn falls_back_to_midpoint() {
        let model = toy_model();
        let ratings = counts(&[10, 20, 50, 49]);
        let p = new_item_prediction(&[1.0, 0.0, 1.0], 0, &model, &ratings, &ColdStartConfig::default()).unwrap();
        assert_eq!(p, 3.0);
    }

    #[test]
    fn distance_threshold_is_inclusive() {
        let model = toy_model();
        let ratings = counts(&[60, 200, 80, 300]);
        let cfg = ColdStartConfig {
            dist_thresh: 1.0,
            ..ColdStartConfig::default()
        };
        let predictor = ColdStartPredictor::new(&model, &ratings, cfg).unwrap();
        let hist = predictor.histogram(&[1.0, 0.0, 1.0], 0).unwrap();
        assert_eq!(hist.total_weight(), 60 + 80 + 300);
        assert_eq!(predictor.predict(&[1.0, 0.0, 1.0], 0).unwrap(), 4.5);
    }

    #[test]
    fn genre_mean_baseline() {
        let p = profiles();
        let ratings = SparseRatings::new(
            vec![
                Rating {
                    item: 0,
                    user: 0,
                    value: 4.0,
                },
                Rating {
                    item: 2,
                    user: 0,
                    value: 3.0,
                },
                Rating {
                    item: 1,
                    user: 0,
                    value: 1.0,
                },
            ],
            4,
            1,
            RatingScale::MOVIELENS,
        )
        .unwrap();
        assert_eq!(genre_mean(&[1.0, 0.0, 1.0], &p, &ratings), Some(3.5));
        assert_eq!(genre_mean(&[0.0, 0.0, 0.0], &p, &ratings), Some(8.0 / 3.0));
    }
}
