//! Feature files, the split protocol, experiment class selection, and
//! synthetic data.

pub mod compose;
pub mod container;
pub mod features;
pub mod split;
pub mod synth;

pub use compose::{compose_experiment, ExperimentClasses, ExperimentKind};
pub use container::{names, Container, RawTensor};
pub use features::{write_features, ClassEntry, FeatureSet, FeatureStore, Manifest, SpeciesEntry};
pub use split::{make_splits, ClassSplit, Split, SplitSpec};
pub use synth::{synth_features, synth_store, Backbone, SynthSpec, PRETRAINED_CLASSES};
