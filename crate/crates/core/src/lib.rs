//! Landau-de Gennes Q-tensor energies, minimizers and defect diagnostics on
//! structured grids.

pub mod asymptotics;
pub mod continuation;
pub mod defects;
pub mod error;
pub mod field;
pub mod grid;
pub mod harmonic;
pub mod io;
pub mod minimizer;
pub mod optimize;
pub mod tensor;

pub use asymptotics::{AsymptoticsReport, RegionSpec};
pub use continuation::{continuation, ContinuationOutcome, ContinuationSetup, LevelSummary};
pub use defects::{locate_defects, DefectRecord};
pub use error::{Error, Result};
pub use field::{
    boundary_director, discrete_gradient, total_energy, uniaxial_fields, BoundarySpec,
    DirectorField, EnergyBreakdown, Field, Field2, Field3, FieldTensor,
};
pub use grid::{build_domain, Grid, NodeKind, Resolution, Shape};
pub use harmonic::{canonical_harmonic_2d, minimize_dirichlet, singular_set};
pub use io::{read_any, QFieldData};
pub use minimizer::{minimize_full, minimize_uniaxial, ModeRecord, RunRecord};
pub use optimize::{Method, MinimizeOptions, Mode, Termination};
pub use tensor::{
    biaxiality, bulk_energy, bulk_gradient, decompose, make_uniaxial, s_roots, MaterialParams,
    OrderTensor, QTensor2, QTensor3, SpectralDecomp,
};
