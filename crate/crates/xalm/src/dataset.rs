//! Labeled / unlabeled data containers and the CSV interchange format.
//!
//! The CSV layout is: UTF-8, comma separated, one header row, feature columns
//! first (names matching the scenario space, in order), then one column per
//! KPI. Values are decimal-point reals; non-finite cells are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::space::ScenarioSpace;

/// The labeled training set: rows of inputs with one scalar output each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Array2<f64>,
    outputs: Array1<f64>,
}

impl LabeledDataset {
    pub fn new(inputs: Array2<f64>, outputs: Array1<f64>) -> Result<Self> {
        if inputs.nrows() != outputs.len() {
            return Err(Error::dim(
                "labeled dataset rows vs outputs",
                inputs.nrows(),
                outputs.len(),
            ));
        }
        if inputs.iter().any(|v| !v.is_finite()) || outputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("labeled dataset contains non-finite values"));
        }
        Ok(LabeledDataset { inputs, outputs })
    }

    pub fn empty(dim: usize) -> Self {
        LabeledDataset {
            inputs: Array2::zeros((0, dim)),
            outputs: Array1::zeros(0),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &Array1<f64> {
        &self.outputs
    }

    /// Appends one labeled row.
    pub fn push(&mut self, row: ArrayView1<'_, f64>, output: f64) -> Result<()> {
        if row.len() != self.dim() {
            return Err(Error::dim("labeled dataset push", self.dim(), row.len()));
        }
        if row.iter().any(|v| !v.is_finite()) || !output.is_finite() {
            return Err(Error::invalid("labeled row contains non-finite values"));
        }
        self.inputs
            .push_row(row)
            .expect("row length checked above");
        let mut outputs = std::mem::take(&mut self.outputs).into_raw_vec_and_offset().0;
        outputs.push(output);
        self.outputs = Array1::from_vec(outputs);
        Ok(())
    }
}

/// The pool of candidate inputs the active learner may query, with a mask of
/// already-acquired rows.
#[derive(Debug, Clone)]
pub struct UnlabeledPool {
    inputs: Array2<f64>,
    acquired: Vec<bool>,
}

impl UnlabeledPool {
    /// Every row must lie inside the space's practical box.
    pub fn new(inputs: Array2<f64>, space: &ScenarioSpace) -> Result<Self> {
        if inputs.ncols() != space.dim() {
            return Err(Error::dim("pool columns", space.dim(), inputs.ncols()));
        }
        for (i, row) in inputs.rows().into_iter().enumerate() {
            if !space.contains(row) {
                return Err(Error::invalid(format!(
                    "pool row {i} lies outside the practical box"
                )));
            }
        }
        let acquired = vec![false; inputs.nrows()];
        Ok(UnlabeledPool { inputs, acquired })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn row(&self, index: usize) -> ArrayView1<'_, f64> {
        self.inputs.row(index)
    }

    pub fn is_acquired(&self, index: usize) -> bool {
        self.acquired[index]
    }

    pub fn mark_acquired(&mut self, index: usize) -> Result<()> {
        if index >= self.len() {
            return Err(Error::invalid(format!("pool index {index} out of bounds")));
        }
        if self.acquired[index] {
            return Err(Error::invalid(format!("pool row {index} already acquired")));
        }
        self.acquired[index] = true;
        Ok(())
    }

    pub fn n_unacquired(&self) -> usize {
        self.acquired.iter().filter(|a| !**a).count()
    }

    pub fn unacquired_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.acquired[i]).collect()
    }

    /// Matrix of the unacquired rows plus their pool indices.
    pub fn unacquired_matrix(&self) -> (Array2<f64>, Vec<usize>) {
        let idx = self.unacquired_indices();
        let rows: Vec<_> = idx.iter().map(|&i| self.inputs.row(i)).collect();
        let mat = if rows.is_empty() {
            Array2::zeros((0, self.dim()))
        } else {
            ndarray::stack(Axis(0), &rows).expect("consistent row lengths")
        };
        (mat, idx)
    }
}

/// In-memory image of a dataset CSV: feature columns plus named KPI columns.
#[derive(Debug, Clone, PartialEq)]
pub struct KpiDataset {
    pub feature_names: Vec<String>,
    pub kpi_names: Vec<String>,
    pub inputs: Array2<f64>,
    pub outputs: Array2<f64>,
}

impl KpiDataset {
    pub fn new(
        feature_names: Vec<String>,
        kpi_names: Vec<String>,
        inputs: Array2<f64>,
        outputs: Array2<f64>,
    ) -> Result<Self> {
        if inputs.ncols() != feature_names.len() {
            return Err(Error::dim(
                "kpi dataset feature columns",
                feature_names.len(),
                inputs.ncols(),
            ));
        }
        if outputs.ncols() != kpi_names.len() {
            return Err(Error::dim(
                "kpi dataset output columns",
                kpi_names.len(),
                outputs.ncols(),
            ));
        }
        if inputs.nrows() != outputs.nrows() {
            return Err(Error::dim(
                "kpi dataset rows",
                inputs.nrows(),
                outputs.nrows(),
            ));
        }
        Ok(KpiDataset {
            feature_names,
            kpi_names,
            inputs,
            outputs,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Selects one KPI column as a labeled dataset.
    pub fn select(&self, kpi: &str) -> Result<LabeledDataset> {
        let k = self
            .kpi_names
            .iter()
            .position(|n| n == kpi)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown kpi '{}'; available: {}",
                    kpi,
                    self.kpi_names.join(", ")
                ))
            })?;
        LabeledDataset::new(self.inputs.clone(), self.outputs.column(k).to_owned())
    }
}

fn format_cell(value: f64) -> String {
    // `Display` prints the shortest decimal string that parses back to the
    // identical f64, so the round trip is lossless.
    format!("{value}")
}

/// Serializes a dataset to CSV.
pub fn save_dataset(dataset: &KpiDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    let header: Vec<&str> = dataset
        .feature_names
        .iter()
        .chain(dataset.kpi_names.iter())
        .map(String::as_str)
        .collect();
    writeln!(out, "{}", header.join(",")).expect("string write");
    for r in 0..dataset.len() {
        let mut cells = Vec::with_capacity(header.len());
        for c in 0..dataset.inputs.ncols() {
            cells.push(format_cell(dataset.inputs[[r, c]]));
        }
        for c in 0..dataset.outputs.ncols() {
            cells.push(format_cell(dataset.outputs[[r, c]]));
        }
        writeln!(out, "{}", cells.join(",")).expect("string write");
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Parses a dataset CSV. The leading header names must match the scenario
/// space's feature names in order; all remaining columns are read as KPIs.
pub fn load_dataset(path: impl AsRef<Path>, space: &ScenarioSpace) -> Result<KpiDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let (feature_names, kpi_names, rows) = parse_csv(path, &text, Some(space))?;
    let d = feature_names.len();
    let n = rows.len();
    let mut inputs = Array2::zeros((n, d));
    let mut outputs = Array2::zeros((n, kpi_names.len()));
    for (r, row) in rows.iter().enumerate() {
        for c in 0..d {
            inputs[[r, c]] = row[c];
        }
        for c in 0..kpi_names.len() {
            outputs[[r, c]] = row[d + c];
        }
    }
    KpiDataset::new(feature_names, kpi_names, inputs, outputs)
}

/// Parses a numeric CSV with a header row. When `space` is given, the leading
/// header names must match its feature names; otherwise every column is
/// treated as a feature and the KPI list is empty.
pub(crate) fn parse_csv(
    path: &Path,
    text: &str,
    space: Option<&ScenarioSpace>,
) -> Result<(Vec<String>, Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines.next().ok_or_else(|| Error::Csv {
        path: path.to_path_buf(),
        row: 1,
        column: "-".into(),
        message: "missing header row".into(),
    })?;
    let header: Vec<String> = header_line.split(',').map(|s| s.trim().to_string()).collect();
    if header.iter().any(|h| h.is_empty()) {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            row: 1,
            column: "-".into(),
            message: "empty header name".into(),
        });
    }

    let (feature_names, kpi_names) = match space {
        Some(space) => {
            let names = space.feature_names();
            if header.len() < names.len() {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    row: 1,
                    column: "-".into(),
                    message: format!(
                        "expected at least {} feature columns, found {}",
                        names.len(),
                        header.len()
                    ),
                });
            }
            for (i, name) in names.iter().enumerate() {
                if &header[i] != name {
                    return Err(Error::Csv {
                        path: path.to_path_buf(),
                        row: 1,
                        column: header[i].clone(),
                        message: format!("expected feature column '{name}'"),
                    });
                }
            }
            (names.clone(), header[names.len()..].to_vec())
        }
        None => (header.clone(), Vec::new()),
    };

    let width = header.len();
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                row: lineno + 1,
                column: "-".into(),
                message: format!("expected {width} cells, found {}", cells.len()),
            });
        }
        let mut parsed = Vec::with_capacity(width);
        for (c, cell) in cells.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| Error::Csv {
                path: path.to_path_buf(),
                row: lineno + 1,
                column: header[c].clone(),
                message: format!("cannot parse '{}' as a real number", cell.trim()),
            })?;
            if !value.is_finite() {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    row: lineno + 1,
                    column: header[c].clone(),
                    message: format!("non-finite value '{}'", cell.trim()),
                });
            }
            parsed.push(value);
        }
        rows.push(parsed);
    }
    Ok((feature_names, kpi_names, rows))
}
