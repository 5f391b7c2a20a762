//! Three-state label extraction from radiology reports, binary relabelling,
//! multi-label splitting and ROC-based evaluation of classifier scores.

pub mod anonymize;
pub mod corpus;
pub mod extract;
pub mod model;
pub mod quality;
pub mod relabel;
pub mod scores;
pub mod split;
pub mod stats;
pub mod synth;
pub mod template;

pub use model::{BinaryLabelSheet, BinaryPolicy, LabelSheet, LabelState, ModelError, Provenance, Region, ReportDocument};
pub use template::{LabelTemplate, TemplateError, TemplateRegistry};
