#![allow(dead_code)]

use std::fs::File;
use std::path::PathBuf;

use fbst_core::{ContingencyTable, CptModel};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// The three reference slices of a model (`"m1"` or `"m2"`).
pub fn reference_tables(model: &str) -> Vec<ContingencyTable> {
    (1..=3)
        .map(|x| {
            let path = data_dir().join(format!("tables/{model}_x{x}.csv"));
            ContingencyTable::read_grid(File::open(&path).unwrap(), x.to_string()).unwrap()
        })
        .collect()
}

pub fn model(name: &str) -> CptModel {
    let text = std::fs::read_to_string(data_dir().join(format!("models/{name}.toml"))).unwrap();
    CptModel::from_toml(&text).unwrap()
}

pub fn table(rows: &[&[u64]]) -> ContingencyTable {
    let grid: Vec<Vec<u64>> = rows.iter().map(|r| r.to_vec()).collect();
    ContingencyTable::from_rows(&grid, "t").unwrap()
}
