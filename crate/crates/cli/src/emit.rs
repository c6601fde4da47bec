use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{Map, Number, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Num(f64),
    Int(i64),
    Text(String),
    Bool(bool),
    Empty,
}

impl Field {
    fn csv(&self) -> String {
        match self {
            Field::Num(x) => format!("{x:?}"),
            Field::Int(i) => i.to_string(),
            Field::Text(s) => s.clone(),
            Field::Bool(b) => b.to_string(),
            Field::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Field::Num(x) => Number::from_f64(*x).map_or(Value::Null, Value::Number),
            Field::Int(i) => Value::from(*i),
            Field::Text(s) => Value::from(s.as_str()),
            Field::Bool(b) => Value::from(*b),
            Field::Empty => Value::Null,
        }
    }
}

impl From<f64> for Field {
    fn from(x: f64) -> Self {
        Field::Num(x)
    }
}

impl From<usize> for Field {
    fn from(x: usize) -> Self {
        Field::Int(x as i64)
    }
}

impl From<u64> for Field {
    fn from(x: u64) -> Self {
        Field::Int(x as i64)
    }
}

impl From<i64> for Field {
    fn from(x: i64) -> Self {
        Field::Int(x)
    }
}

impl From<bool> for Field {
    fn from(x: bool) -> Self {
        Field::Bool(x)
    }
}

impl From<&str> for Field {
    fn from(x: &str) -> Self {
        Field::Text(x.to_string())
    }
}

impl From<String> for Field {
    fn from(x: String) -> Self {
        Field::Text(x)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Field>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Table {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Field>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv_writer();
        w.write_record(&self.columns).map_err(bell_lab::Error::from)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Field::csv)).map_err(bell_lab::Error::from)?;
        }
        w.into_inner().map_err(|e| CliError::Usage(e.to_string()))
    }

    fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.rows {
            let obj: Map<String, Value> = self
                .columns
                .iter()
                .zip(r)
                .map(|(c, f)| (c.to_string(), f.json()))
                .collect();
            out.extend(Value::Object(obj).to_string().into_bytes());
            out.push(b'\n');
        }
        out
    }
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

/// Writes output files, each prefixed by the same comment header.
pub struct Emitter {
    dir: PathBuf,
    header: String,
    format: Format,
    written: Vec<PathBuf>,
}

impl Emitter {
    pub fn new(dir: &Path, command: &str, seed: u64, config: &Value, format: Format) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::file(dir, e))?;
        let header = format!(
            "# bell-lab {}\n# command: {command}\n# seed: {seed}\n# config: {config}\n",
            env!("CARGO_PKG_VERSION")
        );
        Ok(Emitter {
            dir: dir.to_path_buf(),
            header,
            format,
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, body: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let mut bytes = self.header.clone().into_bytes();
        bytes.extend_from_slice(body);
        fs::write(&path, bytes).map_err(|e| CliError::file(&path, e))?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// A report table in the selected format.
    pub fn report(&mut self, stem: &str, table: &Table) -> Result<PathBuf, CliError> {
        let body = match self.format {
            Format::Csv => table.to_csv()?,
            Format::Jsonl => table.to_jsonl(),
        };
        self.write(&format!("{stem}.{}", self.format.extension()), &body)
    }

    /// A data file in a fixed CSV format.
    pub fn data(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> bell_lab::Result<()>,
    ) -> Result<PathBuf, CliError> {
        let mut body = Vec::new();
        fill(&mut body)?;
        self.write(name, &body)
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        self.write(name, body.as_bytes())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}
