//! Task grids, JSON parsing, and the feasibility filter.
//!
//! Tasks arrive as the usual `{"train": [...], "test": [...]}` JSON files
//! whose grids are row-major lists of color indices 0-9. Before training, a
//! dataset is split by what a same-shape cellular automaton can even attempt:
//! any pair whose input and output shapes differ is out (`SizeMismatch`), and
//! a test input using a color never seen anywhere in the training pairs is out
//! (`ColorNovel`, reported with the offending colors). Size always wins when
//! both apply.

use crate::tensor::{Scalar, Tensor3};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

/// Number of colors in the palette; also the number of categorical state
/// channels.
pub const COLORS: usize = 10;

/// Largest accepted grid side.
pub const MAX_SIDE: usize = 128;

/// Structural problem with a single grid, before any task context is known.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GridError {
    #[error("grid is empty")]
    Empty,
    #[error("grid is {rows}x{cols}, limit is {MAX_SIDE}x{MAX_SIDE}")]
    TooLarge { rows: usize, cols: usize },
    #[error("row {row} has {got} cells, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("cell value {value} outside 0-9 at row {row}, col {col}")]
    CellOutOfRange { value: i64, row: usize, col: usize },
    #[error("cell buffer holds {got} values, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

/// Anything that can go wrong loading or validating task data.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: invalid JSON: {message}")]
    Json { file: String, message: String },
    #[error("task {id}: {context}: {source}")]
    BadGrid {
        id: String,
        /// Where in the file the grid sits, e.g. `train[2].output`.
        context: String,
        #[source]
        source: GridError,
    },
    #[error("task {id}: empty {section} pair list")]
    EmptyPairList { id: String, section: String },
    #[error("duplicate task id {id}")]
    DuplicateId { id: String },
    #[error("state tensor needs at least {COLORS} channels, got {got}")]
    TooFewChannels { got: usize },
}

/// Rectangular grid of palette indices, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    cells: Vec<u8>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Grid {}x{} [", self.rows, self.cols)?;
        for y in 0..self.rows {
            write!(f, "  ")?;
            for x in 0..self.cols {
                write!(f, "{}", self.get(y, x))?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Grid {
    /// Builds a grid from a row-major cell buffer, validating shape and the
    /// 0-9 color range.
    pub fn new(rows: usize, cols: usize, cells: Vec<u8>) -> Result<Self, GridError> {
        if rows == 0 || cols == 0 {
            return Err(GridError::Empty);
        }
        if rows > MAX_SIDE || cols > MAX_SIDE {
            return Err(GridError::TooLarge { rows, cols });
        }
        if cells.len() != rows * cols {
            return Err(GridError::LengthMismatch {
                got: cells.len(),
                expected: rows * cols,
            });
        }
        for (i, &v) in cells.iter().enumerate() {
            if v as usize >= COLORS {
                return Err(GridError::CellOutOfRange {
                    value: v as i64,
                    row: i / cols,
                    col: i % cols,
                });
            }
        }
        Ok(Grid { rows, cols, cells })
    }

    /// Builds a grid from nested rows, rejecting ragged input.
    pub fn from_rows(rows: Vec<Vec<u8>>) -> Result<Self, GridError> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(GridError::Empty);
        }
        let cols = rows[0].len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(GridError::RaggedRow {
                    row: i,
                    got: row.len(),
                    expected: cols,
                });
            }
        }
        let cells: Vec<u8> = rows.into_iter().flatten().collect();
        let n_rows = cells.len() / cols;
        Grid::new(n_rows, cols, cells)
    }

    /// Grid of a single color.
    pub fn filled(rows: usize, cols: usize, color: u8) -> Result<Self, GridError> {
        Grid::new(rows, cols, vec![color; rows * cols])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }
    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.cells.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, color: u8) {
        assert!((color as usize) < COLORS, "color {color} outside palette");
        self.cells[row * self.cols + col] = color;
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    /// Set of colors present anywhere in the grid.
    pub fn colors(&self) -> BTreeSet<u8> {
        self.cells.iter().copied().collect()
    }
}

/// One input/output example of a task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskExample {
    pub input: Grid,
    pub output: Grid,
}

/// A named task: training pairs to fit on, test pairs to judge on.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub id: String,
    pub train: Vec<TaskExample>,
    pub test: Vec<TaskExample>,
}

#[derive(Deserialize)]
struct RawPair {
    input: Vec<Vec<i64>>,
    output: Vec<Vec<i64>>,
}

#[derive(Deserialize)]
struct RawTask {
    train: Vec<RawPair>,
    test: Vec<RawPair>,
}

fn grid_from_raw(raw: &[Vec<i64>], id: &str, context: &str) -> Result<Grid, DataError> {
    let bad = |source: GridError| DataError::BadGrid {
        id: id.to_string(),
        context: context.to_string(),
        source,
    };
    if raw.is_empty() || raw[0].is_empty() {
        return Err(bad(GridError::Empty));
    }
    let cols = raw[0].len();
    for (y, row) in raw.iter().enumerate() {
        if row.len() != cols {
            return Err(bad(GridError::RaggedRow {
                row: y,
                got: row.len(),
                expected: cols,
            }));
        }
        for (x, &v) in row.iter().enumerate() {
            if !(0..COLORS as i64).contains(&v) {
                return Err(bad(GridError::CellOutOfRange {
                    value: v,
                    row: y,
                    col: x,
                }));
            }
        }
    }
    let cells: Vec<u8> = raw.iter().flatten().map(|&v| v as u8).collect();
    Grid::new(raw.len(), cols, cells).map_err(bad)
}

/// Parses one task from JSON text. `id` is reported in every error and stored
/// on the task.
pub fn parse_task(id: &str, json_text: &str) -> Result<Task, DataError> {
    let raw: RawTask = serde_json::from_str(json_text).map_err(|e| DataError::Json {
        file: id.to_string(),
        message: e.to_string(),
    })?;
    if raw.train.is_empty() {
        return Err(DataError::EmptyPairList {
            id: id.to_string(),
            section: "train".into(),
        });
    }
    if raw.test.is_empty() {
        return Err(DataError::EmptyPairList {
            id: id.to_string(),
            section: "test".into(),
        });
    }
    let convert = |pairs: &[RawPair], section: &str| -> Result<Vec<TaskExample>, DataError> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Ok(TaskExample {
                    input: grid_from_raw(&p.input, id, &format!("{section}[{i}].input"))?,
                    output: grid_from_raw(&p.output, id, &format!("{section}[{i}].output"))?,
                })
            })
            .collect()
    };
    Ok(Task {
        id: id.to_string(),
        train: convert(&raw.train, "train")?,
        test: convert(&raw.test, "test")?,
    })
}

/// Loads a task from a `.json` file; the task id is the file stem.
pub fn load_task_file(path: &Path) -> Result<Task, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    parse_task(&id, &text)
}

/// Loads every `*.json` in a directory, sorted by file name for determinism.
/// Files that fail to read or parse are returned separately rather than
/// aborting the whole load.
pub fn load_task_dir(dir: &Path) -> Result<(Vec<Task>, Vec<(PathBuf, DataError)>), DataError> {
    let entries = std::fs::read_dir(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let mut tasks = Vec::new();
    let mut failures = Vec::new();
    for path in paths {
        match load_task_file(&path) {
            Ok(task) => tasks.push(task),
            Err(err) => failures.push((path, err)),
        }
    }
    Ok((tasks, failures))
}

/// Why a task is (or is not) attemptable by a same-shape automaton.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    Feasible,
    SizeMismatch,
    ColorNovel,
}

impl fmt::Display for Feasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feasibility::Feasible => write!(f, "feasible"),
            Feasibility::SizeMismatch => write!(f, "size_mismatch"),
            Feasibility::ColorNovel => write!(f, "color_novel"),
        }
    }
}

/// Classification of one task, with the evidence behind it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeasibilityReport {
    pub status: Feasibility,
    /// Test-input colors absent from every training grid (inputs and
    /// outputs). Empty unless `status` is `ColorNovel`.
    pub novel_colors: BTreeSet<u8>,
    /// Pairs (train and test alike) whose input and output shapes differ.
    pub mismatched_pairs: usize,
}

/// Classifies one task. Shape mismatch takes precedence over color novelty,
/// and the result does not depend on pair order.
pub fn classify_feasibility(task: &Task) -> FeasibilityReport {
    let mismatched_pairs = task
        .train
        .iter()
        .chain(&task.test)
        .filter(|p| p.input.shape() != p.output.shape())
        .count();
    if mismatched_pairs > 0 {
        return FeasibilityReport {
            status: Feasibility::SizeMismatch,
            novel_colors: BTreeSet::new(),
            mismatched_pairs,
        };
    }
    let mut training_colors: BTreeSet<u8> = BTreeSet::new();
    for pair in &task.train {
        training_colors.extend(pair.input.colors());
        training_colors.extend(pair.output.colors());
    }
    let mut novel_colors = BTreeSet::new();
    for pair in &task.test {
        for color in pair.input.colors() {
            if !training_colors.contains(&color) {
                novel_colors.insert(color);
            }
        }
    }
    if novel_colors.is_empty() {
        FeasibilityReport {
            status: Feasibility::Feasible,
            novel_colors,
            mismatched_pairs: 0,
        }
    } else {
        FeasibilityReport {
            status: Feasibility::ColorNovel,
            novel_colors,
            mismatched_pairs: 0,
        }
    }
}

/// How a dataset splits across the three feasibility statuses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub feasible: usize,
    pub size_mismatch: usize,
    pub color_novel: usize,
}

impl FilterCounts {
    pub fn total(&self) -> usize {
        self.feasible + self.size_mismatch + self.color_novel
    }
}

/// One line of a feasibility report file.
#[derive(Serialize, Deserialize)]
pub struct FeasibilityRecord {
    pub id: String,
    pub status: Feasibility,
    pub novel_colors: Vec<u8>,
}

/// Splits a dataset into per-status counts and the feasible tasks, rejecting
/// duplicate ids. Every input task lands in exactly one bucket.
pub fn filter_dataset(tasks: Vec<Task>) -> Result<(FilterCounts, Vec<Task>), DataError> {
    let mut seen: HashSet<String> = HashSet::with_capacity(tasks.len());
    let mut counts = FilterCounts::default();
    let mut feasible = Vec::new();
    for task in tasks {
        if !seen.insert(task.id.clone()) {
            return Err(DataError::DuplicateId { id: task.id });
        }
        match classify_feasibility(&task).status {
            Feasibility::Feasible => {
                counts.feasible += 1;
                feasible.push(task);
            }
            Feasibility::SizeMismatch => counts.size_mismatch += 1,
            Feasibility::ColorNovel => counts.color_novel += 1,
        }
    }
    Ok((counts, feasible))
}

/// Encodes a grid as automaton state: channel `c` of the first ten is 1 where
/// the grid color is `c`, and all `total_channels - 10` hidden channels start
/// at zero.
pub fn one_hot_encode<S: Scalar>(grid: &Grid, total_channels: usize) -> Result<Tensor3<S>, DataError> {
    if total_channels < COLORS {
        return Err(DataError::TooFewChannels {
            got: total_channels,
        });
    }
    let mut state = Tensor3::zeros(total_channels, grid.rows(), grid.cols());
    let n = grid.len();
    for (i, &color) in grid.cells().iter().enumerate() {
        state.data_mut()[color as usize * n + i] = S::one();
    }
    Ok(state)
}

/// Decodes automaton state back to a grid by arg-max over the first ten
/// channels; ties go to the lowest color index.
pub fn decode_argmax<S: Scalar>(state: &Tensor3<S>) -> Grid {
    let (channels, rows, cols) = state.shape();
    assert!(
        channels >= COLORS,
        "state needs at least {COLORS} channels, got {channels}"
    );
    let n = rows * cols;
    let mut cells = vec![0u8; n];
    let mut best = state.plane(0).to_vec();
    for c in 1..COLORS {
        let plane = state.plane(c);
        for i in 0..n {
            // Strictly greater keeps the lowest index on ties.
            if plane[i] > best[i] {
                best[i] = plane[i];
                cells[i] = c as u8;
            }
        }
    }
    Grid::new(rows, cols, cells).expect("state dimensions already validated")
}
