//! CSV ingestion and export of panels.
//!
//! Four files describe a panel:
//!
//! | file             | header                      |
//! |------------------|-----------------------------|
//! | `cases.csv`      | `state,week,count`          |
//! | `exog.csv`       | `state,week,variable,value` |
//! | `adjacency.csv`  | `state_a,state_b`           |
//! | `population.csv` | `state,population`          |
//!
//! Lines starting with `#` are comments; the writer emits a `# schema=`
//! line first.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{ExogenousMatrix, PanelDataset, StateId, StateSeries, TimeSeries};
use crate::error::{Error, Result};

pub const CASES_SCHEMA: &str = "# schema=nowcast.cases/1";
pub const EXOG_SCHEMA: &str = "# schema=nowcast.exog/1";
pub const ADJACENCY_SCHEMA: &str = "# schema=nowcast.adjacency/1";
pub const POPULATION_SCHEMA: &str = "# schema=nowcast.population/1";

/// Locations of the four panel CSVs.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PanelFiles {
    pub cases: PathBuf,
    pub exog: PathBuf,
    pub adjacency: PathBuf,
    pub population: PathBuf,
}

impl PanelFiles {
    /// The conventional file names inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        PanelFiles {
            cases: dir.join("cases.csv"),
            exog: dir.join("exog.csv"),
            adjacency: dir.join("adjacency.csv"),
            population: dir.join("population.csv"),
        }
    }
}

struct Table {
    path: PathBuf,
    rows: Vec<(usize, csv::StringRecord)>,
}

fn read_table(path: &Path, header: &[&str]) -> Result<Table> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let found = reader.headers()?.clone();
    let found: Vec<&str> = found.iter().collect();
    if found != header {
        return Err(Error::schema(
            path,
            None,
            format!("expected header {:?}, found {:?}", header.join(","), found.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(Error::schema(
                path,
                Some(line),
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        rows.push((line, rec));
    }
    Ok(Table {
        path: path.to_path_buf(),
        rows,
    })
}

impl Table {
    fn state(&self, line: usize, field: &str) -> Result<StateId> {
        StateId::new(field).map_err(|e| Error::schema(&self.path, Some(line), e.to_string()))
    }

    fn week(&self, line: usize, field: &str) -> Result<u32> {
        match field.parse::<u32>() {
            Ok(w) if w >= 1 => Ok(w),
            _ => Err(Error::schema(
                &self.path,
                Some(line),
                format!("week {field:?} is not a positive integer"),
            )),
        }
    }

    fn real(&self, line: usize, field: &str) -> Result<f64> {
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => Err(Error::schema(
                &self.path,
                Some(line),
                format!("non-finite value {field:?}"),
            )),
            Err(_) => Err(Error::schema(
                &self.path,
                Some(line),
                format!("value {field:?} is not a number"),
            )),
        }
    }

    fn err(&self, line: Option<usize>, reason: String) -> Error {
        Error::schema(&self.path, line, reason)
    }
}

/// Reads and validates a panel from its four CSV files.
pub fn load_panel(files: &PanelFiles) -> Result<PanelDataset> {
    let cases = read_table(&files.cases, &["state", "week", "count"])?;
    let mut by_state: BTreeMap<StateId, BTreeMap<u32, (usize, f64)>> = BTreeMap::new();
    for (line, rec) in &cases.rows {
        let state = cases.state(*line, &rec[0])?;
        let week = cases.week(*line, &rec[1])?;
        let count = cases.real(*line, &rec[2])?;
        if count < 0.0 || count.fract() != 0.0 {
            return Err(cases.err(Some(*line), format!("count {:?} is not a nonnegative integer", &rec[2])));
        }
        if by_state
            .entry(state.clone())
            .or_default()
            .insert(week, (*line, count))
            .is_some()
        {
            return Err(cases.err(Some(*line), format!("duplicate entry for state {state} week {week}")));
        }
    }
    if by_state.is_empty() {
        return Err(cases.err(None, "no case rows".into()));
    }
    let n_weeks = by_state
        .values()
        .filter_map(|m| m.keys().next_back())
        .copied()
        .max()
        .unwrap_or(0) as usize;

    let mut case_series = BTreeMap::new();
    for (state, weeks) in &by_state {
        let mut values = Vec::with_capacity(n_weeks);
        for w in 1..=n_weeks as u32 {
            match weeks.get(&w) {
                Some((_, v)) => values.push(*v),
                None => {
                    return Err(cases.err(None, format!("state {state} is missing week {w}")));
                }
            }
        }
        case_series.insert(state.clone(), TimeSeries::new(state.as_str(), values)?);
    }

    let exog = read_table(&files.exog, &["state", "week", "variable", "value"])?;
    let mut exog_cols: BTreeMap<StateId, (Vec<String>, BTreeMap<String, Vec<Option<f64>>>)> = BTreeMap::new();
    for (line, rec) in &exog.rows {
        let state = exog.state(*line, &rec[0])?;
        if !case_series.contains_key(&state) {
            return Err(exog.err(Some(*line), format!("state {state} has no case series")));
        }
        let week = exog.week(*line, &rec[1])?;
        if week as usize > n_weeks {
            return Err(exog.err(
                Some(*line),
                format!("week {week} beyond the case horizon of {n_weeks} weeks"),
            ));
        }
        let variable = rec[2].to_string();
        if variable.is_empty() {
            return Err(exog.err(Some(*line), "empty variable name".into()));
        }
        let value = exog.real(*line, &rec[3])?;
        let (order, cols) = exog_cols.entry(state.clone()).or_default();
        let col = cols.entry(variable.clone()).or_insert_with(|| {
            order.push(variable.clone());
            vec![None; n_weeks]
        });
        let slot = &mut col[week as usize - 1];
        if slot.is_some() {
            return Err(exog.err(
                Some(*line),
                format!("duplicate entry for state {state} variable {variable} week {week}"),
            ));
        }
        *slot = Some(value);
    }

    let mut states = BTreeMap::new();
    for (state, cases_ts) in case_series {
        let mut matrix = ExogenousMatrix::new(n_weeks);
        if let Some((order, mut cols)) = exog_cols.remove(&state) {
            for name in order {
                let col = cols.remove(&name).expect("column recorded in order");
                let mut values = Vec::with_capacity(n_weeks);
                for (i, v) in col.into_iter().enumerate() {
                    values.push(v.ok_or_else(|| {
                        exog.err(None, format!("state {state} variable {name} is missing week {}", i + 1))
                    })?);
                }
                matrix.insert(name, values)?;
            }
        }
        states.insert(
            state,
            StateSeries {
                cases: cases_ts,
                exog: matrix,
            },
        );
    }

    let adjacency = read_table(&files.adjacency, &["state_a", "state_b"])?;
    let mut edges = Vec::new();
    for (line, rec) in &adjacency.rows {
        let a = adjacency.state(*line, &rec[0])?;
        let b = adjacency.state(*line, &rec[1])?;
        if a == b {
            return Err(adjacency.err(Some(*line), format!("self-adjacency for state {a}")));
        }
        for s in [&a, &b] {
            if !states.contains_key(s) {
                return Err(adjacency.err(Some(*line), format!("state {s} has no case series")));
            }
        }
        edges.push((a, b));
    }

    let population = read_table(&files.population, &["state", "population"])?;
    let mut pop = BTreeMap::new();
    for (line, rec) in &population.rows {
        let state = population.state(*line, &rec[0])?;
        let value = match rec[1].parse::<u64>() {
            Ok(v) if v > 0 => v,
            _ => {
                return Err(population.err(
                    Some(*line),
                    format!("population {:?} is not a positive integer", &rec[1]),
                ))
            }
        };
        if !states.contains_key(&state) {
            return Err(population.err(Some(*line), format!("state {state} has no case series")));
        }
        if pop.insert(state.clone(), value).is_some() {
            return Err(population.err(Some(*line), format!("duplicate state {state}")));
        }
    }
    if let Some(missing) = states.keys().find(|s| !pop.contains_key(*s)) {
        return Err(population.err(None, format!("missing state {missing}")));
    }

    PanelDataset::new(n_weeks, states, &edges, pop)
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes a panel as the four CSV files, in canonical order (states sorted,
/// weeks ascending, exogenous columns in matrix order).
pub fn write_panel(panel: &PanelDataset, files: &PanelFiles) -> Result<()> {
    let mut w = create(&files.cases)?;
    writeln!(w, "{CASES_SCHEMA}").map_err(io(&files.cases))?;
    writeln!(w, "state,week,count").map_err(io(&files.cases))?;
    for (id, s) in panel.states() {
        for (i, v) in s.cases.values().iter().enumerate() {
            writeln!(w, "{id},{},{v}", i + 1).map_err(io(&files.cases))?;
        }
    }
    w.flush().map_err(io(&files.cases))?;

    let mut w = create(&files.exog)?;
    writeln!(w, "{EXOG_SCHEMA}").map_err(io(&files.exog))?;
    writeln!(w, "state,week,variable,value").map_err(io(&files.exog))?;
    for (id, s) in panel.states() {
        for (name, col) in s.exog.columns() {
            for (i, v) in col.iter().enumerate() {
                writeln!(w, "{id},{},{name},{v}", i + 1).map_err(io(&files.exog))?;
            }
        }
    }
    w.flush().map_err(io(&files.exog))?;

    let mut w = create(&files.adjacency)?;
    writeln!(w, "{ADJACENCY_SCHEMA}").map_err(io(&files.adjacency))?;
    writeln!(w, "state_a,state_b").map_err(io(&files.adjacency))?;
    for (a, b) in panel.edges() {
        writeln!(w, "{a},{b}").map_err(io(&files.adjacency))?;
    }
    w.flush().map_err(io(&files.adjacency))?;

    let mut w = create(&files.population)?;
    writeln!(w, "{POPULATION_SCHEMA}").map_err(io(&files.population))?;
    writeln!(w, "state,population").map_err(io(&files.population))?;
    for id in panel.state_ids() {
        let p = panel.population(id).expect("validated panel");
        writeln!(w, "{id},{p}").map_err(io(&files.population))?;
    }
    w.flush().map_err(io(&files.population))?;
    Ok(())
}
