//! The comparison models, realised as configurations of the same engine.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{ItemProfiles, SparseRatings};
use crate::error::{Error, Result};
use crate::network::Activation;
use crate::trainer::{train, TrainConfig, TrainedModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantKind {
    /// Matrix factorization as a linear network without hidden layers.
    Mf,
    /// Latent inputs only, single joint phase.
    Nlpca,
    /// Latent inputs only, three phases.
    Ubp,
    /// Latent and description inputs, single joint phase.
    Lnn,
    /// Latent and description inputs, three phases.
    Lnn3pt,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [
        VariantKind::Lnn,
        VariantKind::Lnn3pt,
        VariantKind::Mf,
        VariantKind::Nlpca,
        VariantKind::Ubp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Mf => "mf",
            VariantKind::Nlpca => "nlpca",
            VariantKind::Ubp => "ubp",
            VariantKind::Lnn => "lnn",
            VariantKind::Lnn3pt => "lnn3pt",
        }
    }

    pub fn uses_attributes(self) -> bool {
        matches!(self, VariantKind::Lnn | VariantKind::Lnn3pt)
    }

    pub fn three_phase(self) -> bool {
        matches!(self, VariantKind::Ubp | VariantKind::Lnn3pt)
    }

    pub fn allows_hidden(self) -> bool {
        self != VariantKind::Mf
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "mf" => Ok(VariantKind::Mf),
            "nlpca" => Ok(VariantKind::Nlpca),
            "ubp" => Ok(VariantKind::Ubp),
            "lnn" => Ok(VariantKind::Lnn),
            "lnn3pt" => Ok(VariantKind::Lnn3pt),
            _ => Err(Error::Config(format!(
                "unknown variant `{s}` (expected mf, nlpca, ubp, lnn or lnn3pt)"
            ))),
        }
    }
}

/// A variant with the engine configuration that realises it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub kind: VariantKind,
    pub config: TrainConfig,
}

impl ModelVariant {
    /// Profiles as this variant sees them: latent-only variants get none.
    pub fn profiles(&self, profiles: &ItemProfiles) -> ItemProfiles {
        if self.kind.uses_attributes() {
            profiles.clone()
        } else {
            ItemProfiles::empty(profiles.num_items())
        }
    }

    pub fn input_width(&self, num_attributes: usize) -> usize {
        self.config.latent + if self.kind.uses_attributes() { num_attributes } else { 0 }
    }

    pub fn train(&self, ratings: &SparseRatings, profiles: &ItemProfiles) -> Result<TrainedModel> {
        train(ratings, &self.profiles(profiles), &self.config)
    }
}

/// Apply the variant's fixed choices on top of `base`.
pub fn make_variant(kind: VariantKind, base: &TrainConfig) -> Result<ModelVariant> {
    let mut config = base.clone();
    if !kind.allows_hidden() && !config.hidden.is_empty() {
        return Err(Error::Config(format!(
            "{kind} is linear and cannot have hidden layers (got {:?})",
            config.hidden
        )));
    }
    if config.latent == 0 && !kind.uses_attributes() {
        return Err(Error::Config(format!("{kind} needs at least one latent variable")));
    }
    config.three_phase = kind.three_phase();
    if kind == VariantKind::Mf {
        config.hidden_activation = Activation::Identity;
        config.output_activation = Activation::Identity;
    }
    config.validate()?;
    Ok(ModelVariant { kind, config })
}
