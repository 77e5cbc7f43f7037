//! Datasets, non-IID client partitions and query-class selection.

mod csvio;
mod partition;
mod query;
mod synthetic;

pub use csvio::{read_dataset_csv, write_dataset_csv};
pub use partition::{
    dirichlet_proportions, partition, partition_manifest, ClientDataset, PartitionScheme, PartitionSpec,
};
pub use query::{select_query, QueryMode, QuerySpec};
pub use synthetic::{generate_synthetic, GlobalDataset, SyntheticSpec};
