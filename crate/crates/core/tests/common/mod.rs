#![allow(dead_code)]

use std::path::PathBuf;

use frailcp::data::{load_csv, ColumnSchema, Dataset, EventColumn, SubjectRecord};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn table1_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/table1.csv")
}

pub fn table1_schema() -> ColumnSchema {
    ColumnSchema {
        id: Some("ID".into()),
        time: "ST".into(),
        event: EventColumn::Censor("Censor".into()),
        cluster: "Cluster".into(),
        covariates: vec!["treatment".into()],
        followup: Some(100.0),
    }
}

pub fn table1() -> Dataset {
    load_csv(table1_path(), &table1_schema()).unwrap()
}

/// Column flags that load the Table 1 fixture through the CLI.
pub const TABLE1_FLAGS: [&str; 12] = [
    "--time",
    "ST",
    "--censor-column",
    "Censor",
    "--cluster",
    "Cluster",
    "--covariates",
    "treatment",
    "--id",
    "ID",
    "--followup",
    "100",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Clustered dataset with integer times in `1..=max_time` (so ties occur),
/// `q` covariates on a 0.1 grid in `[-1, 1]` and follow-up `max_time + 1`.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, clusters: usize, q: usize, max_time: u32) -> Dataset {
    let records = (0..n)
        .map(|i| SubjectRecord {
            id: (i + 1).to_string(),
            time: rng.gen_range(1..=max_time) as f64,
            event: rng.gen_bool(0.75),
            cluster: format!("c{}", i % clusters),
            covariates: (0..q).map(|_| rng.gen_range(-10..=10) as f64 / 10.0).collect(),
        })
        .collect();
    let names = (1..=q).map(|j| format!("x{j}")).collect();
    Dataset::from_records(records, names, Some(max_time as f64 + 1.0))
}
