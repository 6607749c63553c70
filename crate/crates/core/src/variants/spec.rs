use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden width of the MLP fitting branch.
pub const MLP_DEFAULT_HIDDEN: usize = 32;

/// Every trainable row of the ablation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantMode {
    Ours,
    OursMultitask,
    OursDualpooling,
    SamSsl,
    SamSslBilinear,
    MocoBilinear,
    MocoBaseline,
    MlpGfb,
}

impl VariantMode {
    pub const ALL: [VariantMode; 8] = [
        VariantMode::Ours,
        VariantMode::OursMultitask,
        VariantMode::OursDualpooling,
        VariantMode::SamSsl,
        VariantMode::SamSslBilinear,
        VariantMode::MocoBilinear,
        VariantMode::MocoBaseline,
        VariantMode::MlpGfb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantMode::Ours => "ours",
            VariantMode::OursMultitask => "ours-multitask",
            VariantMode::OursDualpooling => "ours-dualpooling",
            VariantMode::SamSsl => "sam-ssl",
            VariantMode::SamSslBilinear => "sam-ssl-bilinear",
            VariantMode::MocoBilinear => "moco-bilinear",
            VariantMode::MocoBaseline => "moco-baseline",
            VariantMode::MlpGfb => "mlp-gfb",
        }
    }
}

impl fmt::Display for VariantMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}`; expected one of {}",
                    VariantMode::ALL.map(VariantMode::name).join(", ")
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainInteraction {
    None,
    WeightedPool,
    BilinearPool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestAggregation {
    Gap,
    WeightedPool,
    BilinearPool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BranchKind {
    None,
    MaxOut,
    Mlp { hidden: usize },
}

/// Resolved configuration of one ablation row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub mode: VariantMode,
    /// Number of projections K in the branch.
    pub projections: usize,
    pub train_interaction: TrainInteraction,
    pub test_aggregation: TestAggregation,
    /// Test-time feature dimensionality (C or C*K).
    pub feature_dim: usize,
    /// Projector input width during training (C or C*K).
    pub train_pooled_dim: usize,
    pub branch: BranchKind,
    /// Whether the branch is trained to fit GradCAM with the KL term.
    pub fits_gradcam: bool,
}

/// Explicit overrides; any that contradict the mode's row are rejected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VariantOverrides {
    pub train_interaction: Option<TrainInteraction>,
    pub test_aggregation: Option<TestAggregation>,
    pub mlp_hidden: Option<usize>,
}

pub fn configure_variant(mode: VariantMode, projections: usize, channels: usize) -> Result<VariantSpec> {
    configure_variant_with(mode, projections, channels, VariantOverrides::default())
}

pub fn configure_variant_with(
    mode: VariantMode,
    projections: usize,
    channels: usize,
    overrides: VariantOverrides,
) -> Result<VariantSpec> {
    use TestAggregation as Te;
    use TrainInteraction as Tr;
    if projections == 0 || channels == 0 {
        return Err(Error::Config("K and C must be >= 1".into()));
    }
    let hidden = overrides.mlp_hidden.unwrap_or(MLP_DEFAULT_HIDDEN);
    if hidden == 0 {
        return Err(Error::Config("MLP hidden width must be >= 1".into()));
    }
    let (k, train, test, branch, fits) = match mode {
        VariantMode::Ours => (projections, Tr::None, Te::WeightedPool, BranchKind::MaxOut, true),
        VariantMode::OursMultitask => (projections, Tr::None, Te::Gap, BranchKind::MaxOut, true),
        VariantMode::OursDualpooling => (
            projections,
            Tr::WeightedPool,
            Te::WeightedPool,
            BranchKind::MaxOut,
            true,
        ),
        VariantMode::SamSsl => (1, Tr::None, Te::Gap, BranchKind::MaxOut, true),
        VariantMode::SamSslBilinear => (
            projections,
            Tr::BilinearPool,
            Te::BilinearPool,
            BranchKind::MaxOut,
            true,
        ),
        VariantMode::MocoBilinear => (
            projections,
            Tr::BilinearPool,
            Te::BilinearPool,
            BranchKind::MaxOut,
            false,
        ),
        VariantMode::MocoBaseline => (projections, Tr::None, Te::Gap, BranchKind::None, false),
        VariantMode::MlpGfb => (
            projections,
            Tr::None,
            Te::WeightedPool,
            BranchKind::Mlp { hidden },
            true,
        ),
    };
    if overrides.train_interaction.is_some_and(|t| t != train) {
        return Err(Error::Config(format!(
            "{mode} requires train interaction {train:?}"
        )));
    }
    if overrides.test_aggregation.is_some_and(|t| t != test) {
        return Err(Error::Config(format!("{mode} requires test aggregation {test:?}")));
    }
    if overrides.mlp_hidden.is_some() && !matches!(branch, BranchKind::Mlp { .. }) {
        return Err(Error::Config(format!("{mode} has no MLP branch")));
    }
    let dim_for = |bilinear: bool| if bilinear { channels * k } else { channels };
    let spec = VariantSpec {
        mode,
        projections: k,
        train_interaction: train,
        test_aggregation: test,
        feature_dim: dim_for(test == Te::BilinearPool),
        train_pooled_dim: dim_for(train == Tr::BilinearPool),
        branch,
        fits_gradcam: fits,
    };
    spec.validate(channels)?;
    Ok(spec)
}

impl VariantSpec {
    /// Checks the row invariants of the ablation matrix.
    pub fn validate(&self, channels: usize) -> Result<()> {
        use TestAggregation as Te;
        use TrainInteraction as Tr;
        let bad = |why: &str| Err(Error::Config(format!("{}: {why}", self.mode)));
        match self.mode {
            VariantMode::Ours
                if !(self.train_interaction == Tr::None
                    && self.test_aggregation == Te::WeightedPool
                    && self.feature_dim == channels) =>
            {
                bad("must train without interaction, pool by attention, keep dim C")
            }
            VariantMode::SamSslBilinear if self.feature_dim != channels * self.projections => {
                bad("feature dim must be C*K")
            }
            VariantMode::OursDualpooling
                if !(self.train_interaction == Tr::WeightedPool
                    && self.test_aggregation == Te::WeightedPool) =>
            {
                bad("must use weighted pooling at train and test")
            }
            VariantMode::OursMultitask if self.test_aggregation != Te::Gap => {
                bad("must use GAP at test")
            }
            _ if self.fits_gradcam && self.branch == BranchKind::None => {
                bad("cannot fit GradCAM without a branch")
            }
            _ => Ok(()),
        }
    }

    pub fn has_branch(&self) -> bool {
        self.branch != BranchKind::None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ours_row() {
        let s = configure_variant(VariantMode::Ours, 32, 2048).unwrap();
        assert_eq!(s.train_interaction, TrainInteraction::None);
        assert_eq!(s.test_aggregation, TestAggregation::WeightedPool);
        assert_eq!(s.feature_dim, 2048);
    }

    #[test]
    fn sam_ssl_row_uses_one_projection() {
        let s = configure_variant(VariantMode::SamSsl, 32, 2048).unwrap();
        assert_eq!(s.projections, 1);
        assert_eq!(s.train_interaction, TrainInteraction::None);
        assert_eq!(s.test_aggregation, TestAggregation::Gap);
        assert_eq!(s.feature_dim, 2048);
    }

    #[test]
    fn sam_ssl_bilinear_row() {
        let s = configure_variant(VariantMode::SamSslBilinear, 32, 2048).unwrap();
        assert_eq!(s.train_interaction, TrainInteraction::BilinearPool);
        assert_eq!(s.test_aggregation, TestAggregation::BilinearPool);
        assert_eq!(s.feature_dim, 65536);
    }

    #[test]
    fn baseline_has_no_branch_and_mlp_defaults_to_32() {
        assert!(!configure_variant(VariantMode::MocoBaseline, 32, 64).unwrap().has_branch());
        assert_eq!(
            configure_variant(VariantMode::MlpGfb, 32, 64).unwrap().branch,
            BranchKind::Mlp { hidden: 32 }
        );
    }

    #[test]
    fn inconsistent_overrides_are_rejected() {
        let o = VariantOverrides {
            test_aggregation: Some(TestAggregation::Gap),
            ..Default::default()
        };
        assert!(matches!(
            configure_variant_with(VariantMode::Ours, 32, 64, o),
            Err(Error::Config(_))
        ));
        let o = VariantOverrides {
            mlp_hidden: Some(8),
            ..Default::default()
        };
        assert!(configure_variant_with(VariantMode::Ours, 32, 64, o).is_err());
        assert_eq!(
            configure_variant_with(VariantMode::MlpGfb, 32, 64, o).unwrap().branch,
            BranchKind::Mlp { hidden: 8 }
        );
    }

    #[test]
    fn names_round_trip() {
        for m in VariantMode::ALL {
            assert_eq!(m.name().parse::<VariantMode>().unwrap(), m);
        }
        assert!("sam".parse::<VariantMode>().is_err());
    }
}
