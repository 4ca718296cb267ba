//! Dataset loading: CSV files with a TOML schema, and the synthetic sources.

use std::path::Path;

use circuitlab_core::data::{
    bundle_from_table, gen_minisprites, synth_tabular, Cell, ColumnKind, ColumnSpec, DatasetBundle, DatasetSchema, RawTable,
};
use circuitlab_core::rng::SeededRng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, DatasetConfig, DatasetSource};
use crate::error::{io_err, LabError, Result};

/// On-disk schema file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaFile {
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    pub columns: Vec<ColumnSpec>,
}

impl SchemaFile {
    pub fn schema(&self) -> DatasetSchema {
        DatasetSchema {
            columns: self.columns.clone(),
        }
    }
}

fn default_delimiter() -> char {
    ','
}

pub fn load_schema(path: &Path) -> Result<SchemaFile> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let file: SchemaFile = toml::from_str(&text).map_err(|e| LabError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    file.schema().validate()?;
    if !file.delimiter.is_ascii() {
        return Err(LabError::Parse {
            path: path.to_path_buf(),
            message: "delimiter must be a single ASCII character".into(),
        });
    }
    Ok(file)
}

/// Reads the schema's columns (by header name) from a CSV file.
pub fn read_table(path: &Path, schema: &DatasetSchema, delimiter: u8) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    read_table_from(file, schema, delimiter).map_err(|e| match e {
        LabError::Config(message) => LabError::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

pub fn read_table_from<R: std::io::Read>(reader: R, schema: &DatasetSchema, delimiter: u8) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut index = Vec::with_capacity(schema.columns.len());
    for col in &schema.columns {
        let pos = header
            .iter()
            .position(|h| h == col.name)
            .ok_or_else(|| LabError::Config(format!("column {} missing from header", col.name)))?;
        index.push(pos);
    }
    let mut table = RawTable::default();
    for record in rdr.records() {
        let record = record?;
        let row = schema
            .columns
            .iter()
            .zip(&index)
            .map(|(col, &i)| Cell::parse(record.get(i).unwrap_or(""), col.kind == ColumnKind::Continuous))
            .collect();
        table.rows.push(row);
    }
    Ok(table)
}

/// Builds the bundle for one configured dataset.
pub fn load_dataset(cfg: &DatasetConfig) -> Result<DatasetBundle> {
    let mut rng = SeededRng::new(cfg.data_seed);
    match &cfg.source {
        DatasetSource::Csv { path, schema, max_rows } => {
            let schema_file = load_schema(schema)?;
            let schema_def = schema_file.schema();
            let mut table = read_table(path, &schema_def, schema_file.delimiter as u8)?;
            let total = table.rows.len();
            if let Some(cap) = *max_rows {
                if cap < total {
                    let mut keep = rng.permutation(total);
                    keep.truncate(cap);
                    keep.sort_unstable();
                    table.rows = keep.iter().map(|&i| table.rows[i].clone()).collect();
                }
            }
            let provenance = format!(
                "csv {} ({} of {} rows) schema {}",
                path.display(),
                table.rows.len(),
                total,
                schema.display()
            );
            Ok(bundle_from_table(&cfg.name, &schema_def, &table, &provenance)?)
        }
        DatasetSource::SyntheticTabular { spec } => Ok(synth_tabular(&cfg.name, spec, &mut rng)?),
        DatasetSource::Minisprites { spec } => Ok(gen_minisprites(&cfg.name, spec, &mut rng)?),
    }
}

/// SHA-256 over the feature matrix, labels, protected attribute and partition.
pub fn bundle_hash(b: &DatasetBundle) -> String {
    let mut h = Sha256::new();
    h.update((b.x.rows() as u64).to_le_bytes());
    h.update((b.x.cols() as u64).to_le_bytes());
    for v in b.x.data() {
        h.update(v.to_le_bytes());
    }
    for bits in [&b.labels, &b.protected].into_iter().flatten() {
        h.update(bits.iter().map(|&v| v as u8).collect::<Vec<_>>());
    }
    for (name, group) in b.partition.names.iter().zip(&b.partition.groups) {
        h.update(name.as_bytes());
        for &f in group {
            h.update((f as u64).to_le_bytes());
        }
    }
    hex(&h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &str = r#"
        description = "toy"
        [[columns]]
        name = "age"
        kind = "continuous"
        group = "demo"
        [[columns]]
        name = "job"
        kind = "categorical"
        group = "work"
        [[columns]]
        name = "income"
        kind = "label"
        positive = { equals = ">50K" }
    "#;

    #[test]
    fn reads_csv_through_schema() {
        let schema: SchemaFile = toml::from_str(SCHEMA).unwrap();
        let csv = "job,age,income,unused\nclerk,30,<=50K,x\nchef, 40 ,>50K,y\n?,50,>50K,z\nclerk,60,<=50K,w\n";
        let table = read_table_from(csv.as_bytes(), &schema.schema(), b',').unwrap();
        assert_eq!(table.rows.len(), 4);
        assert_eq!(table.rows[1][0], Cell::Num(40.0));
        assert_eq!(table.rows[2][1], Cell::Missing);
        let b = bundle_from_table("toy", &schema.schema(), &table, "test").unwrap();
        assert_eq!(b.n_rows(), 3);
        assert_eq!(b.feature_names, vec!["age", "job=chef", "job=clerk"]);
        assert_eq!(b.labels, Some(vec![false, true, false]));
        assert_eq!(b.partition.sizes(), vec![1, 2]);
    }

    #[test]
    fn missing_header_column_is_an_error() {
        let schema: SchemaFile = toml::from_str(SCHEMA).unwrap();
        let csv = "job,age\nclerk,30\n";
        assert!(read_table_from(csv.as_bytes(), &schema.schema(), b',').is_err());
    }

    #[test]
    fn shipped_schemas_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas");
        let mut n = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                load_schema(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                n += 1;
            }
        }
        assert_eq!(n, 4);
    }
}
