//! Built-in experiment configurations.

use std::path::PathBuf;

use crate::continuous::CtTrainConfig;
use crate::discrete::{SolverKind, TrainConfig};
use crate::io::config::{DataSource, ExperimentConfig, FileSource, ModelVariant};
use crate::io::table::Preprocess;
use crate::systems::{
    FhnSpec, LorenzSpec, PermutationSpec, RotatingCenterSpec, SpiralSpeedSpec, SystemSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PresetInfo {
    pub name: &'static str,
    pub summary: &'static str,
    /// Whether the input data ships with the crate (generated on the fly).
    pub data_bundled: bool,
}

pub const PRESETS: &[PresetInfo] = &[
    PresetInfo {
        name: "fhn-regularized",
        summary: "FitzHugh-Nagumo, D = I, 2 operators, l1 budget 0.3",
        data_bundled: true,
    },
    PresetInfo {
        name: "fhn-unregularized",
        summary: "FitzHugh-Nagumo, D = I, 2 operators, least-norm coefficients",
        data_bundled: true,
    },
    PresetInfo {
        name: "lorenz-regularized",
        summary: "Lorenz, D = I, 5 operators, l1 budget 0.55",
        data_bundled: true,
    },
    PresetInfo {
        name: "lorenz-unregularized",
        summary: "Lorenz, D = I, 5 operators, least-norm coefficients",
        data_bundled: true,
    },
    PresetInfo {
        name: "spiral-speed",
        summary: "continuous model, 4 generators, spiral with switching speed",
        data_bundled: true,
    },
    PresetInfo {
        name: "rotating-center",
        summary: "continuous model, 4 generators, 3-D center with rotating axis",
        data_bundled: true,
    },
    PresetInfo {
        name: "permutation-1",
        summary: "one planted 16 x 16 scaled permutation",
        data_bundled: true,
    },
    PresetInfo {
        name: "permutation-12",
        summary: "twelve planted 16 x 16 scaled permutations, two active per step",
        data_bundled: true,
    },
    PresetInfo {
        name: "c-elegans",
        summary: "whole-brain calcium imaging, 10 operators, 10 latents",
        data_bundled: false,
    },
];

fn base(name: &str, variant: ModelVariant, operators: usize, system: SystemSpec) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        variant,
        operators,
        latent_dim: None,
        preprocess: Preprocess::None,
        seed: 0,
        phase_grid: 15,
        output: None,
        data: DataSource {
            system: Some(system),
            file: None,
        },
        train: TrainConfig::default(),
        continuous: CtTrainConfig::default(),
    }
}

/// The named preset, or `None` if no preset has that name.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let fhn = || SystemSpec::Fhn(FhnSpec::default());
    let lorenz = || SystemSpec::Lorenz(LorenzSpec::default());
    let least_norm = TrainConfig {
        solver: SolverKind::PseudoInverse,
        ..TrainConfig::default()
    };
    let cfg = match name {
        "fhn-regularized" => ExperimentConfig {
            train: TrainConfig {
                tau: 0.3,
                ..TrainConfig::default()
            },
            ..base(name, ModelVariant::DiscreteIdentity, 2, fhn())
        },
        "fhn-unregularized" => ExperimentConfig {
            train: least_norm,
            ..base(name, ModelVariant::DiscreteIdentity, 2, fhn())
        },
        "lorenz-regularized" => ExperimentConfig {
            train: TrainConfig {
                tau: 0.55,
                ..TrainConfig::default()
            },
            ..base(name, ModelVariant::DiscreteIdentity, 5, lorenz())
        },
        "lorenz-unregularized" => ExperimentConfig {
            train: least_norm,
            ..base(name, ModelVariant::DiscreteIdentity, 5, lorenz())
        },
        "spiral-speed" => ExperimentConfig {
            continuous: CtTrainConfig::speed(),
            ..base(
                name,
                ModelVariant::Continuous,
                4,
                SystemSpec::SpiralSpeed(SpiralSpeedSpec::default()),
            )
        },
        "rotating-center" => ExperimentConfig {
            continuous: CtTrainConfig::rotation(),
            ..base(
                name,
                ModelVariant::Continuous,
                4,
                SystemSpec::RotatingCenter(RotatingCenterSpec::default()),
            )
        },
        "permutation-1" => ExperimentConfig {
            train: TrainConfig {
                solver: SolverKind::Penalized,
                lambda2: 0.01,
                eta_f: 1.0,
                solver_max_iter: 200,
                max_epochs: 300,
                ..TrainConfig::default()
            },
            ..base(
                name,
                ModelVariant::DiscreteIdentity,
                1,
                SystemSpec::ScaledPermutation(PermutationSpec {
                    episodes: 40,
                    ..PermutationSpec::default()
                }),
            )
        },
        "permutation-12" => ExperimentConfig {
            train: TrainConfig {
                solver: SolverKind::Penalized,
                lambda2: 0.1,
                eta_f: 30.0,
                decay: 0.998,
                solver_max_iter: 200,
                max_epochs: 300,
                ..TrainConfig::default()
            },
            ..base(
                name,
                ModelVariant::DiscreteIdentity,
                12,
                SystemSpec::ScaledPermutation(PermutationSpec {
                    operators: 12,
                    sparsity: 2,
                    samples: 4,
                    episodes: 400,
                    ..PermutationSpec::default()
                }),
            )
        },
        "c-elegans" => ExperimentConfig {
            name: name.into(),
            variant: ModelVariant::Discrete,
            operators: 10,
            latent_dim: Some(10),
            preprocess: Preprocess::ZscorePerChannel,
            seed: 0,
            phase_grid: 15,
            output: None,
            data: DataSource {
                system: None,
                file: Some(FileSource {
                    path: PathBuf::from("data/c_elegans.csv"),
                    dt: 1.0 / 2.85,
                    has_header: true,
                }),
            },
            train: TrainConfig {
                max_epochs: 3000,
                ..TrainConfig::default()
            },
            continuous: CtTrainConfig::default(),
        },
        _ => return None,
    };
    Some(cfg)
}
