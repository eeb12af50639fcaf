//! End-user workbench: configuration, snapshot and checkpoint files, reduction drivers,
//! prediction, error reports, timing and plots.

mod checkpoint;
mod config;
mod container;
mod pipeline;
mod plot;
mod snapshot;

pub use checkpoint::{BasisRecord, Checkpoint, CheckpointManifest, ReducedModel};
pub use config::{
    default_range, test_presets, AeRecord, ExperimentConfig, Method, MlpRecord, ParamRange,
};
pub use pipeline::{
    benchmark, decode, encode_initial, evaluate, hamiltonian_drift, latent_integrator,
    linear_basis, predict, reduce, relative_errors, roll_latent, train_network, ErrorEntry,
    ErrorReport, Precision, Prediction, Reduction, TimingRow, TrainedNetwork,
};
pub use plot::{plot_report, write_history_svg, write_profiles_svg, PlotOutputs};
pub use snapshot::{
    fom_trajectory, generate, SnapshotFile, SnapshotHeader, SnapshotReader, SnapshotWriter,
};
