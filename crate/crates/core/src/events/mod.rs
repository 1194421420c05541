//! Alert events: ingestion, the bipartite stream model, resampling,
//! chronological splitting, negative sampling, and synthetic streams.

mod balance;
mod canonical;
mod ingest;
mod negative;
mod split;
mod stats;
mod stream;
mod synth;

pub use balance::{balance_classes, median_class_size};
pub use canonical::{load_stream, read_stream, save_stream, write_stream};
pub use ingest::{
    build_stream, encode_features, parse_csv, parse_csv_reader, read_records, write_records, AlertRecord,
    Protocol, SchemaConfig, FEATURE_WIDTH,
};
pub use negative::{sample_candidates, sample_negative};
pub use split::{inductive_mask, nearest_rank, split_at_percentiles, temporal_split, SplitSpec, TemporalSplit};
pub use stats::{stream_stats, Histogram, StreamStats, STATS_SCHEMA_VERSION};
pub use stream::{is_sorted_by_time, EventStream, NodeId, TemporalEvent};
pub use synth::{synth_stream, SynthSpec};
