use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Model variant: the full model, the mutual-information baseline, and the
/// ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "SER_SA")]
    SerSa,
    #[serde(rename = "SER_MI")]
    SerMi,
    #[serde(rename = "no_DD")]
    NoDd,
    #[serde(rename = "no_EN")]
    NoEn,
    #[serde(rename = "no_Ospe")]
    NoOspe,
    #[serde(rename = "no_Ocom")]
    NoOcom,
    /// Regressor and latent factors only; text features are zero.
    #[serde(rename = "rating_only")]
    RatingOnly,
}

/// Which aggregated feature is zeroed where specific and common parts are
/// summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mask {
    None,
    Specific,
    Common,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::SerSa,
        Variant::SerMi,
        Variant::NoDd,
        Variant::NoEn,
        Variant::NoOspe,
        Variant::NoOcom,
        Variant::RatingOnly,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::SerSa => "SER_SA",
            Variant::SerMi => "SER_MI",
            Variant::NoDd => "no_DD",
            Variant::NoEn => "no_EN",
            Variant::NoOspe => "no_Ospe",
            Variant::NoOcom => "no_Ocom",
            Variant::RatingOnly => "rating_only",
        }
    }

    pub fn uses_text(self) -> bool {
        self != Variant::RatingOnly
    }

    /// Domain discriminator on common features (through the GRL).
    pub fn uses_discriminator(self) -> bool {
        !matches!(self, Variant::NoDd | Variant::RatingOnly)
    }

    /// Discriminator also classifies specific features, without reversal.
    pub fn discriminates_specific(self) -> bool {
        self.uses_discriminator() && self != Variant::SerMi
    }

    pub fn uses_mine(self) -> bool {
        self == Variant::SerMi
    }

    /// Encoding network, individual-review path and alignment loss.
    pub fn uses_encoder(self) -> bool {
        !matches!(self, Variant::NoEn | Variant::RatingOnly)
    }

    pub fn mask(self) -> Mask {
        match self {
            Variant::NoOspe => Mask::Specific,
            Variant::NoOcom => Mask::Common,
            _ => Mask::None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let v = match norm.as_str() {
            "ser" | "ser_sa" | "sa" => Variant::SerSa,
            "ser_mi" | "mi" => Variant::SerMi,
            "no_dd" => Variant::NoDd,
            "no_en" => Variant::NoEn,
            "no_ospe" => Variant::NoOspe,
            "no_ocom" => Variant::NoOcom,
            "rating_only" | "baseline" => Variant::RatingOnly,
            _ => return Err(Error::InvalidArgument(format!("unknown variant `{s}`"))),
        };
        Ok(v)
    }
}
