//! Graph data model, TUDataset ingestion, density splits, synthetic shifted
//! pairs and block-diagonal batching.

mod batch;
mod graph;
mod split;
mod synth;
mod tudataset;

pub use batch::{make_batch, GraphBatch};
pub use graph::{Dataset, Domain, FeatureLayout, Graph, DEGREE_CAP};
pub use split::density_split;
pub use synth::{gen_synthetic_biased, SynthConfig, SPURIOUS_CHANNEL, SYNTH_FEATURE_DIM};
pub use tudataset::{parse_tudataset, parse_tudataset_group, write_tudataset};
