//! Counterfactual next-state engines and database construction.

pub mod database;
pub mod kqr;
pub mod scm;

pub use database::{
    build_database, engine_samples, fit_engine, latent, ActionMode, BuildConfig, CfContext, CfDatabase, Engine,
    EngineKind,
};
pub use kqr::{kqr_counterfactual, kqr_tau, BandwidthRule, KqrConfig, KqrEngine};
pub use scm::{fit_scm, ScmConfig, ScmModel, ScmSample};
