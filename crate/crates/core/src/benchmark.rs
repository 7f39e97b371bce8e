//! Readers for the MAPF benchmark `.map` / `.scen` formats and the CSV record
//! schema used for experiment output.
//!
//! Map files start with `type`, `height`, `width` and `map` header lines followed
//! by `height` rows of `width` characters. Scenario files are an optional
//! `version` line followed by tab-separated rows:
//!
//! ```text
//! bucket  map  map_width  map_height  start_x  start_y  goal_x  goal_y  optimal_length
//! ```
//!
//! where `x` is the column and `y` the row.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{classify_cell, GridMap, Instance, Location, ModelError};
use crate::planner::bfs_distances;

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("line {line}: malformed header: {detail}")]
    MalformedHeader { line: usize, detail: String },
    #[error("line {line}: expected {expected} {what}, found {found}")]
    DimensionMismatch { line: usize, what: &'static str, expected: usize, found: usize },
    #[error("line {line}, column {column}: unknown map character {ch:?}")]
    UnknownCell { line: usize, column: usize, ch: char },
    #[error("line {line}: expected 9 fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: cannot parse {field} from {value:?}")]
    Number { line: usize, field: &'static str, value: String },
    #[error("line {line}: location {location} outside the declared {width}x{height} map")]
    EntryOutOfBounds { line: usize, location: Location, width: u32, height: u32 },
    #[error("at least one agent is required")]
    NoAgents,
    #[error("requested {requested} agents but the scenario has {available}")]
    TooManyAgents { requested: usize, available: usize },
    #[error("scenario entry {index} targets a {entry_width}x{entry_height} map, loaded map is {width}x{height}")]
    MapMismatch { index: usize, entry_width: u32, entry_height: u32, width: u32, height: u32 },
    #[error(transparent)]
    Instance(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Parses a benchmark map file.
pub fn parse_map(text: &str) -> Result<GridMap, BenchmarkError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let mut height = None;
    let mut width = None;
    let mut saw_type = false;
    let mut last_line = 0;
    loop {
        let Some((line, raw)) = lines.next() else {
            return Err(BenchmarkError::MalformedHeader { line: last_line + 1, detail: "missing `map` line".into() });
        };
        last_line = line;
        let content = raw.trim();
        if content.is_empty() {
            continue;
        }
        if content == "map" {
            break;
        }
        let mut parts = content.split_whitespace();
        let key = parts.next().unwrap_or_default();
        let value = parts.next();
        let number = |field: &'static str| -> Result<u32, BenchmarkError> {
            let v = value.ok_or_else(|| BenchmarkError::MalformedHeader { line, detail: format!("`{key}` without a value") })?;
            match v.parse::<u32>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(BenchmarkError::Number { line, field, value: v.to_string() }),
            }
        };
        match key {
            "type" => saw_type = true,
            "height" => height = Some(number("height")?),
            "width" => width = Some(number("width")?),
            other => {
                return Err(BenchmarkError::MalformedHeader { line, detail: format!("unexpected header key {other:?}") })
            }
        }
    }
    let header_end = last_line;
    let missing = |what: &str| BenchmarkError::MalformedHeader { line: header_end, detail: format!("missing `{what}` before `map`") };
    if !saw_type {
        return Err(missing("type"));
    }
    let height = height.ok_or_else(|| missing("height"))?;
    let width = width.ok_or_else(|| missing("width"))?;

    let mut passable = Vec::with_capacity(width as usize * height as usize);
    let mut rows = 0usize;
    for (line, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        if rows == height as usize {
            return Err(BenchmarkError::DimensionMismatch { line, what: "rows", expected: height as usize, found: rows + 1 });
        }
        let found = raw.chars().count();
        if found != width as usize {
            return Err(BenchmarkError::DimensionMismatch { line, what: "columns", expected: width as usize, found });
        }
        for (column, ch) in raw.chars().enumerate() {
            let cell = classify_cell(ch).ok_or(BenchmarkError::UnknownCell { line, column: column + 1, ch })?;
            passable.push(cell);
        }
        rows += 1;
    }
    if rows != height as usize {
        return Err(BenchmarkError::DimensionMismatch { line: last_line.max(header_end) + rows + 1, what: "rows", expected: height as usize, found: rows });
    }
    Ok(GridMap::new(width, height, passable)?)
}

/// Renders a map back into the benchmark format (`.` free, `@` blocked).
pub fn render_map(map: &GridMap) -> String {
    let mut out = format!("type octile\nheight {}\nwidth {}\nmap\n", map.height(), map.width());
    for row in 0..map.height() {
        for col in 0..map.width() {
            out.push(if map.is_passable(Location::new(row, col)) { '.' } else { '@' });
        }
        out.push('\n');
    }
    out
}

/// One row of a scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioEntry {
    pub bucket: u32,
    pub map_name: String,
    pub map_width: u32,
    pub map_height: u32,
    pub start: Location,
    pub goal: Location,
    pub optimal_length: f64,
}

pub fn parse_scen(text: &str) -> Result<Vec<ScenarioEntry>, BenchmarkError> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        if entries.is_empty() && raw.trim_start().starts_with("version") {
            continue;
        }
        let mut fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 9 {
            fields = raw.split_whitespace().collect();
        }
        if fields.len() != 9 {
            return Err(BenchmarkError::FieldCount { line, found: fields.len() });
        }
        fn num<T: std::str::FromStr>(line: usize, field: &'static str, v: &str) -> Result<T, BenchmarkError> {
            v.trim().parse().map_err(|_| BenchmarkError::Number { line, field, value: v.to_string() })
        }
        let entry = ScenarioEntry {
            bucket: num(line, "bucket", fields[0])?,
            map_name: fields[1].trim().to_string(),
            map_width: num(line, "map width", fields[2])?,
            map_height: num(line, "map height", fields[3])?,
            start: Location::new(num(line, "start y", fields[5])?, num(line, "start x", fields[4])?),
            goal: Location::new(num(line, "goal y", fields[7])?, num(line, "goal x", fields[6])?),
            optimal_length: num(line, "optimal length", fields[8])?,
        };
        for location in [entry.start, entry.goal] {
            if location.row >= entry.map_height || location.col >= entry.map_width {
                return Err(BenchmarkError::EntryOutOfBounds {
                    line,
                    location,
                    width: entry.map_width,
                    height: entry.map_height,
                });
            }
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Renders entries in scenario-file format, `version 1` header included.
pub fn render_scen(entries: &[ScenarioEntry]) -> String {
    let mut out = String::from("version 1\n");
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.8}\n",
            e.bucket, e.map_name, e.map_width, e.map_height, e.start.col, e.start.row, e.goal.col, e.goal.row, e.optimal_length
        ));
    }
    out
}

/// Instance made of the first `m` scenario entries.
pub fn build_instance(map: Arc<GridMap>, entries: &[ScenarioEntry], m: usize) -> Result<Instance, BenchmarkError> {
    if m == 0 {
        return Err(BenchmarkError::NoAgents);
    }
    if m > entries.len() {
        return Err(BenchmarkError::TooManyAgents { requested: m, available: entries.len() });
    }
    let selected = &entries[..m];
    for (index, e) in selected.iter().enumerate() {
        if e.map_width != map.width() || e.map_height != map.height() {
            return Err(BenchmarkError::MapMismatch {
                index,
                entry_width: e.map_width,
                entry_height: e.map_height,
                width: map.width(),
                height: map.height(),
            });
        }
    }
    let endpoints: Vec<_> = selected.iter().map(|e| (e.start, e.goal)).collect();
    Ok(Instance::new(map, &endpoints)?)
}

/// An agent whose 4-connected shortest distance disagrees with the scenario's
/// recorded optimal length.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthMismatch {
    pub agent: usize,
    pub recorded: f64,
    pub computed: Option<u32>,
}

/// Compares BFS distances with the scenario's optimal lengths. Benchmark files
/// often record octile distances, so mismatches are only logged.
pub fn check_optimal_lengths(instance: &Instance, entries: &[ScenarioEntry]) -> Vec<LengthMismatch> {
    let mut out = Vec::new();
    for (agent, entry) in instance.agents().iter().zip(entries) {
        let field = bfs_distances(instance.map(), agent.goal);
        let computed = field.get(agent.start);
        if computed.map(f64::from) != Some(entry.optimal_length.round()) {
            out.push(LengthMismatch { agent: agent.id, recorded: entry.optimal_length, computed });
        }
    }
    if !out.is_empty() {
        log::warn!(
            "{} of {} agents have a BFS distance different from the recorded optimal length (first: agent {})",
            out.len(),
            instance.num_agents(),
            out[0].agent
        );
    }
    out
}

/// One row of experiment output. Per-iteration rows carry the chosen heuristic
/// and neighborhood size; iteration 0 is the initial solution (`heuristic` =
/// `init`), summary rows use `final`, failed runs `failed` with an empty cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRecord {
    pub map: String,
    pub scenario: String,
    pub algorithm: String,
    pub m: usize,
    pub seed: u64,
    pub budget_seconds: Option<f64>,
    pub iteration: u64,
    pub elapsed_ms: f64,
    pub heuristic: String,
    pub neighborhood_size: Option<usize>,
    pub reward: Option<u64>,
    pub cost: Option<u64>,
}

impl CsvRecord {
    pub const HEADER: [&'static str; 12] = [
        "map",
        "scenario",
        "algorithm",
        "m",
        "seed",
        "budget_seconds",
        "iteration",
        "elapsed_ms",
        "heuristic",
        "neighborhood_size",
        "reward",
        "cost",
    ];
}

/// Streams records to a sink; the header is written on construction.
pub struct RecordWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(sink: W) -> Result<Self, BenchmarkError> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
        inner.write_record(CsvRecord::HEADER)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, record: &CsvRecord) -> Result<(), BenchmarkError> {
        self.inner.serialize(record)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, BenchmarkError> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| BenchmarkError::Io(e.into_error()))
    }
}

/// Writes the header followed by every record.
pub fn write_records<W: Write>(records: &[CsvRecord], sink: W) -> Result<(), BenchmarkError> {
    let mut writer = RecordWriter::new(sink)?;
    for record in records {
        writer.write(record)?;
    }
    writer.finish()?;
    Ok(())
}

pub fn read_records<R: Read>(source: R) -> Result<Vec<CsvRecord>, BenchmarkError> {
    let mut reader = csv::Reader::from_reader(source);
    let records = reader.deserialize().collect::<Result<Vec<CsvRecord>, _>>()?;
    Ok(records)
}
