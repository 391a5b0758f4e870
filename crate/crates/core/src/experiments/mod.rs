//! Config-driven experiment commands behind the `fairstack` binary.

mod config;
mod run;

pub use config::{
    DatasetId, DatasetSection, ExperimentConfig, LevelSection, LossSection, Overrides, ProbeSection,
    StackSection, SweepSection, Table1Section, TrainSection, DATA_DIR_ENV,
};
pub use run::{
    create_run_dir, fit, holdout, probe_report, sweep, sweep_means, table1, transform, CellResult,
    FitOutcome, Holdout, InputFormat, RunRecord, SweepMean, SweepOutcome, SweepRow, Table1Outcome, STACKED,
    UNFAIR, VANILLA,
};
