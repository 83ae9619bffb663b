//! CSV and JSON files: block manifests, simulated datasets, fit reports and
//! study outputs.
//!
//! Every CSV has a header row. Numbers are written with Rust's shortest
//! round-trip formatting, so writing and reading back is exact.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::em::{fitted_dims, EmConfig, FitResult};
use crate::error::{Error, Result};
use crate::evaluate::{Quartiles, ResampleReport, SensitivityCell, StudySummary};
use crate::linalg::pearson;
use crate::model::{parameter_names, Dataset, Dimensions, Latents, Theta};
use crate::simulate::{CovariateMode, SimConfig, Simulated};

pub const MANIFEST_FILE: &str = "manifest.json";
const INTERCEPT_COLUMN: &str = "(intercept)";

/// A categorical covariate column, expanded on load into one indicator per
/// non-reference level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Categorical {
    pub column: String,
    /// Level order; the first is the reference. Defaults to order of first
    /// appearance in the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

/// Where each block lives. Relative paths are resolved against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockManifest {
    pub y: PathBuf,
    pub x: Vec<PathBuf>,
    /// Covariates of `Y`; intercept only when absent.
    #[serde(default)]
    pub t: Option<PathBuf>,
    /// Covariates of each `Xᵐ`; missing or `null` entries mean intercept only.
    #[serde(default)]
    pub t_m: Vec<Option<PathBuf>>,
    /// Require a leading constant column in every covariate block, adding
    /// one where the file does not start with it.
    #[serde(default)]
    pub intercept: bool,
    /// Categorical columns by covariate role (`"T"`, `"T1"`, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub categorical: BTreeMap<String, Vec<Categorical>>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl BlockManifest {
    /// Reads a manifest file, or `manifest.json` inside a directory.
    pub fn read(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&file).map_err(|e| load_error(&file, e))?;
        let mut manifest: BlockManifest = serde_json::from_str(&text).map_err(|e| load_error(&file, e))?;
        manifest.base_dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    fn covariate_path(&self, m: usize) -> Option<&PathBuf> {
        self.t_m.get(m).and_then(Option::as_ref)
    }
}

fn load_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Load {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Column names of every block, in file order after categorical expansion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnNames {
    pub y: Vec<String>,
    pub x: Vec<Vec<String>>,
    pub t: Vec<String>,
    pub t_m: Vec<Vec<String>>,
}

impl ColumnNames {
    /// `y1..`, `x1_1..`, `t1..`, `t1_1..`.
    pub fn generated(dims: &Dimensions) -> Self {
        let seq = |prefix: &str, k: usize| (1..=k).map(|j| format!("{prefix}{j}")).collect::<Vec<_>>();
        ColumnNames {
            y: seq("y", dims.q_y),
            x: (0..dims.p).map(|m| seq(&format!("x{}_", m + 1), dims.q_m[m])).collect(),
            t: seq("t", dims.r_t),
            t_m: (0..dims.p).map(|m| seq(&format!("t{}_", m + 1), dims.r_m[m])).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub data: Dataset,
    pub dims: Dimensions,
    pub names: ColumnNames,
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| load_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| load_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| load_error(path, e))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(load_error(path, "missing header row"));
    }
    Ok(RawTable { header, rows })
}

fn parse_cell(path: &Path, row: usize, column: &str, cell: &str) -> Result<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
        load_error(
            path,
            format!("row {}, column {column}: '{cell}' is not a finite number", row + 1),
        )
    })
}

fn read_numeric(path: &Path) -> Result<(DMatrix<f64>, Vec<String>)> {
    let table = read_table(path)?;
    let (n, q) = (table.rows.len(), table.header.len());
    let mut values = Vec::with_capacity(n * q);
    for (i, row) in table.rows.iter().enumerate() {
        for (cell, name) in row.iter().zip(&table.header) {
            values.push(parse_cell(path, i, name, cell)?);
        }
    }
    Ok((DMatrix::from_row_slice(n, q, &values), table.header))
}

/// Numeric columns as-is, categorical columns expanded to indicators, and a
/// leading intercept when requested or when a categorical needs a
/// reference level.
fn read_covariates(
    path: Option<&Path>,
    n: usize,
    categorical: &[Categorical],
    intercept: bool,
) -> Result<(DMatrix<f64>, Vec<String>)> {
    let Some(path) = path else {
        if !categorical.is_empty() {
            return Err(Error::Config(
                "categorical columns declared for a block without a file".into(),
            ));
        }
        return Ok((DMatrix::from_element(n, 1, 1.0), vec![INTERCEPT_COLUMN.into()]));
    };
    let table = read_table(path)?;
    for cat in categorical {
        if !table.header.contains(&cat.column) {
            return Err(load_error(
                path,
                format!("categorical column '{}' not found", cat.column),
            ));
        }
    }
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    for (j, name) in table.header.iter().enumerate() {
        let cells = table.rows.iter().map(|r| r[j].as_str());
        match categorical.iter().find(|c| &c.column == name) {
            None => {
                let col = cells
                    .enumerate()
                    .map(|(i, cell)| parse_cell(path, i, name, cell))
                    .collect::<Result<Vec<_>>>()?;
                columns.push(col);
                names.push(name.clone());
            }
            Some(cat) => {
                let observed: Vec<&str> = cells.collect();
                let levels = match &cat.levels {
                    Some(levels) => {
                        if let Some(bad) = observed.iter().find(|v| !levels.iter().any(|l| l == *v)) {
                            return Err(load_error(path, format!("column {name}: undeclared level '{bad}'")));
                        }
                        levels.clone()
                    }
                    None => {
                        let mut seen = HashSet::new();
                        observed
                            .iter()
                            .filter(|v| seen.insert(**v))
                            .map(|v| v.to_string())
                            .collect()
                    }
                };
                for level in levels.iter().skip(1) {
                    columns.push(observed.iter().map(|v| f64::from(u8::from(v == level))).collect());
                    names.push(format!("{name}={level}"));
                }
            }
        }
    }
    let starts_with_ones = columns.first().is_some_and(|c| c.iter().all(|&v| v == 1.0));
    if (intercept || !categorical.is_empty()) && !starts_with_ones {
        columns.insert(0, vec![1.0; table.rows.len()]);
        names.insert(0, INTERCEPT_COLUMN.into());
    }
    if columns.is_empty() {
        return Err(load_error(path, "no covariate columns"));
    }
    let rows = table.rows.len();
    Ok((DMatrix::from_fn(rows, columns.len(), |i, j| columns[j][i]), names))
}

/// Loads every block named in the manifest and validates the result.
pub fn load_dataset(manifest: &BlockManifest) -> Result<LoadedDataset> {
    if manifest.x.is_empty() {
        return Err(Error::Config("manifest lists no explanatory block".into()));
    }
    if manifest.t_m.len() > manifest.x.len() {
        return Err(Error::Config(format!(
            "manifest lists {} covariate blocks for {} explanatory blocks",
            manifest.t_m.len(),
            manifest.x.len()
        )));
    }
    let p = manifest.x.len();
    let roles: Vec<String> = std::iter::once("T".to_string())
        .chain((1..=p).map(|m| format!("T{m}")))
        .collect();
    if let Some(role) = manifest.categorical.keys().find(|k| !roles.contains(k)) {
        return Err(Error::Config(format!(
            "categorical columns declared for unknown block {role}"
        )));
    }

    let mut seen = HashSet::new();
    for (role, path) in std::iter::once(("Y".to_string(), &manifest.y))
        .chain(manifest.x.iter().enumerate().map(|(m, x)| (format!("X{}", m + 1), x)))
    {
        if !seen.insert(manifest.resolve(path)) {
            return Err(Error::Config(format!(
                "{} is assigned to more than one observed block ({role})",
                path.display()
            )));
        }
    }

    let y_path = manifest.resolve(&manifest.y);
    let (y, y_names) = read_numeric(&y_path)?;
    let n = y.nrows();
    let check_rows = |role: &str, path: &Path, rows: usize| {
        if rows != n {
            Err(Error::Shape(format!(
                "block {role} ({}) has {rows} rows but block Y ({}) has {n}",
                path.display(),
                y_path.display()
            )))
        } else {
            Ok(())
        }
    };
    let cats = |role: &str| manifest.categorical.get(role).map(Vec::as_slice).unwrap_or(&[]);

    let t_path = manifest.t.as_ref().map(|t| manifest.resolve(t));
    let (t, t_names) = read_covariates(t_path.as_deref(), n, cats("T"), manifest.intercept)?;
    if let Some(path) = &t_path {
        check_rows("T", path, t.nrows())?;
    }

    let mut x = Vec::with_capacity(p);
    let mut x_names = Vec::with_capacity(p);
    let mut t_m = Vec::with_capacity(p);
    let mut t_m_names = Vec::with_capacity(p);
    for m in 0..p {
        let path = manifest.resolve(&manifest.x[m]);
        let (block, names) = read_numeric(&path)?;
        check_rows(&format!("X{}", m + 1), &path, block.nrows())?;
        x.push(block);
        x_names.push(names);

        let role = format!("T{}", m + 1);
        let path = manifest.covariate_path(m).map(|t| manifest.resolve(t));
        let (block, names) = read_covariates(path.as_deref(), n, cats(&role), manifest.intercept)?;
        if let Some(path) = &path {
            check_rows(&role, path, block.nrows())?;
        }
        t_m.push(block);
        t_m_names.push(names);
    }

    let data = Dataset::new(y, x, t, t_m, manifest.intercept)?;
    Ok(LoadedDataset {
        dims: data.dims(),
        data,
        names: ColumnNames {
            y: y_names,
            x: x_names,
            t: t_names,
            t_m: t_m_names,
        },
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_matrix(path: &Path, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_parameters(path: &Path, theta: &Theta, dims: &Dimensions) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "value"])?;
    for (name, value) in parameter_names(dims).iter().zip(theta.flatten().iter()) {
        w.write_record([name.clone(), value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn factor_header(p: usize) -> Vec<String> {
    std::iter::once("g".to_string())
        .chain((1..=p).map(|m| format!("f{m}")))
        .collect()
}

/// Block files, `latents.csv`, `theta.csv` and a `manifest.json` that
/// [`load_dataset`] reads back into the same [`Dataset`].
pub fn write_simulated(sim: &Simulated, config: &SimConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let data = &sim.data;
    let dims = data.dims();
    let names = ColumnNames::generated(&dims);
    write_matrix(&dir.join("y.csv"), &names.y, &data.y)?;
    write_matrix(&dir.join("t.csv"), &names.t, &data.t)?;
    for m in 0..dims.p {
        write_matrix(&dir.join(format!("x{}.csv", m + 1)), &names.x[m], &data.x[m])?;
        write_matrix(&dir.join(format!("t{}.csv", m + 1)), &names.t_m[m], &data.t_m[m])?;
    }
    write_matrix(
        &dir.join("latents.csv"),
        &factor_header(dims.p),
        &sim.latents.as_matrix(),
    )?;
    write_parameters(&dir.join("theta.csv"), &sim.theta, &dims)?;
    let manifest = BlockManifest {
        y: "y.csv".into(),
        x: (1..=dims.p).map(|m| format!("x{m}.csv").into()).collect(),
        t: Some("t.csv".into()),
        t_m: (1..=dims.p).map(|m| Some(format!("t{m}.csv").into())).collect(),
        intercept: config.t_mode == CovariateMode::InterceptPlusGaussian,
        categorical: BTreeMap::new(),
        base_dir: PathBuf::new(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    write_json(
        &dir.join("simulation.json"),
        &json!({ "dims": dims, "seed": config.seed, "t_mode": config.t_mode }),
    )
}

/// Reads `latents.csv` as written by [`write_simulated`].
pub fn read_latents(path: &Path) -> Result<Latents> {
    let (m, _) = read_numeric(path)?;
    if m.ncols() < 2 {
        return Err(load_error(path, "expected columns g, f1, ..."));
    }
    Ok(Latents {
        g: m.column(0).into_owned(),
        f: (1..m.ncols()).map(|j| m.column(j).into_owned()).collect(),
    })
}

/// Reads a `name,value` parameter file back into θ.
pub fn read_parameters(path: &Path, dims: &Dimensions) -> Result<Theta> {
    let table = read_table(path)?;
    let expected = parameter_names(dims);
    if table.rows.len() != expected.len() {
        return Err(load_error(
            path,
            format!("expected {} parameters, found {}", expected.len(), table.rows.len()),
        ));
    }
    let mut values = Vec::with_capacity(expected.len());
    for (i, (row, name)) in table.rows.iter().zip(&expected).enumerate() {
        if row.first() != Some(name) {
            return Err(load_error(path, format!("row {}: expected parameter {name}", i + 1)));
        }
        values.push(parse_cell(path, i, "value", row.get(1).map_or("", String::as_str))?);
    }
    Theta::unflatten(&values, dims)
}

/// `parameters.csv`, `factors.csv`, `trace.csv`, `correlations.csv` and
/// `report.json`.
pub fn write_fit(result: &FitResult, data: &Dataset, names: &ColumnNames, config: &EmConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let dims = fitted_dims(result);
    write_parameters(&dir.join("parameters.csv"), &result.theta, &dims)?;

    let scores = result.moments.factor_scores().as_matrix();
    let mut w = csv::Writer::from_path(dir.join("factors.csv"))?;
    w.write_record(std::iter::once("unit".to_string()).chain(factor_header(dims.p)))?;
    for i in 0..scores.nrows() {
        w.write_record(std::iter::once((i + 1).to_string()).chain(scores.row(i).iter().map(|v| v.to_string())))?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("trace.csv"))?;
    w.write_record(["iteration", "relative_change", "observed_loglik"])?;
    w.write_record(["0".to_string(), String::new(), result.initial_loglik.to_string()])?;
    for t in &result.trace {
        w.write_record([
            t.iteration.to_string(),
            t.relative_change.to_string(),
            t.observed_loglik.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("correlations.csv"))?;
    w.write_record(["block", "variable", "factor", "correlation"])?;
    let blocks = std::iter::once((
        "Y".to_string(),
        &data.y,
        &names.y,
        "g".to_string(),
        &result.moments.g_tilde,
    ))
    .chain((0..dims.p).map(|m| {
        (
            format!("X{}", m + 1),
            &data.x[m],
            &names.x[m],
            format!("f{}", m + 1),
            &result.moments.f_tilde[m],
        )
    }));
    for (block, obs, cols, factor, score) in blocks {
        for (j, name) in cols.iter().enumerate() {
            let r = pearson(obs.column(j).as_slice(), score.as_slice());
            w.write_record([block.clone(), name.clone(), factor.clone(), fmt_opt(r)])?;
        }
    }
    w.flush()?;

    write_json(
        &dir.join("report.json"),
        &json!({
            "dims": dims,
            "config": config,
            "converged": result.converged,
            "iterations": result.iterations,
            "initial_loglik": result.initial_loglik,
            "final_loglik": result.final_loglik(),
            "parameter_names": parameter_names(&dims),
            "covariate_names": { "T": names.t, "T_m": names.t_m },
        }),
    )
}

fn quartile_cells(q: Option<Quartiles>) -> [String; 3] {
    match q {
        Some(q) => [q.q1.to_string(), q.median.to_string(), q.q3.to_string()],
        None => Default::default(),
    }
}

/// One row per replicate: seed, convergence, deviation, squared factor
/// correlations and tracked parameter values.
pub fn write_replicates_csv(path: &Path, summary: &StudySummary) -> Result<()> {
    let p = summary.dims.p;
    let mut w = csv::Writer::from_path(path)?;
    let header = ["replicate", "seed", "iterations", "converged", "avg_abs_rel_deviation"]
        .into_iter()
        .map(String::from)
        .chain(factor_header(p).into_iter().map(|f| format!("r2_{f}")))
        .chain(summary.tracked.iter().cloned())
        .chain(["error".to_string()]);
    w.write_record(header)?;
    for r in &summary.replicates {
        let mut row = vec![
            r.index.to_string(),
            r.seed.to_string(),
            r.iterations.map(|i| i.to_string()).unwrap_or_default(),
            r.converged.map(|c| c.to_string()).unwrap_or_default(),
            fmt_opt(r.avg_abs_rel_deviation),
        ];
        row.extend((0..=p).map(|k| fmt_opt(r.sq_correlations.get(k).copied())));
        row.extend((0..summary.tracked.len()).map(|k| fmt_opt(r.tracked.get(k).copied())));
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn study_config(sim: &SimConfig, em: &EmConfig, replicates: usize) -> serde_json::Value {
    json!({
        "seed": sim.seed,
        "t_mode": sim.t_mode,
        "replicates": replicates,
        "em": em,
    })
}

/// `replicates.csv` and `summary.json`.
pub fn write_study(summary: &StudySummary, sim: &SimConfig, em: &EmConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_replicates_csv(&dir.join("replicates.csv"), summary)?;
    write_json(
        &dir.join("summary.json"),
        &json!({ "config": study_config(sim, em, summary.replicates.len()), "summary": summary }),
    )
}

/// `cells.csv` (one row per design cell), per-cell replicate files and
/// `sensitivity.json`.
pub fn write_sensitivity(cells: &[SensitivityCell], base: &SimConfig, em: &EmConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tracked = cells.first().map(|c| c.summary.tracked.clone()).unwrap_or_default();
    let mut w = csv::Writer::from_path(dir.join("cells.csv"))?;
    let mut header: Vec<String> = [
        "axis",
        "n",
        "q",
        "replicates",
        "failures",
        "mean_iterations",
        "deviation_q1",
        "deviation_median",
        "deviation_q3",
        "r2_q1",
        "r2_median",
        "r2_q3",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    for name in &tracked {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_half_width"));
    }
    w.write_record(&header)?;
    for (k, cell) in cells.iter().enumerate() {
        let s = &cell.summary;
        let axis = serde_json::to_value(cell.axis)?
            .as_str()
            .unwrap_or_default()
            .to_string();
        let mut row = vec![
            axis.clone(),
            cell.n.to_string(),
            cell.q.to_string(),
            s.replicates.len().to_string(),
            s.failures.to_string(),
            fmt_opt(s.mean_iterations),
        ];
        row.extend(quartile_cells(s.deviation));
        row.extend(quartile_cells(s.sq_correlation));
        for name in &tracked {
            let band = s.band(name);
            row.push(fmt_opt(band.map(|b| b.mean)));
            row.push(fmt_opt(band.and_then(|b| b.half_width)));
        }
        w.write_record(row)?;
        write_replicates_csv(
            &dir.join(format!("cell{:02}_{axis}_n{}_q{}.csv", k + 1, cell.n, cell.q)),
            s,
        )?;
    }
    w.flush()?;
    let replicates = cells.first().map_or(0, |c| c.summary.replicates.len());
    write_json(
        &dir.join("sensitivity.json"),
        &json!({ "config": study_config(base, em, replicates), "cells": cells }),
    )
}

/// `samples.csv` and `resample.json`.
pub fn write_resample(report: &ResampleReport, em: &EmConfig, seed: u64, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("samples.csv"))?;
    w.write_record([
        "sample",
        "units",
        "param_mse",
        "param_corr",
        "factor_mse",
        "factor_corr",
        "error",
    ])?;
    for s in &report.samples {
        w.write_record([
            s.index.to_string(),
            s.units.len().to_string(),
            fmt_opt(s.param_mse),
            fmt_opt(s.param_corr),
            fmt_opt(s.factor_mse),
            fmt_opt(s.factor_corr),
            s.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    write_json(
        &dir.join("resample.json"),
        &json!({ "config": { "seed": seed, "em": em }, "report": report }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::simulate_dataset;

    fn write(dir: &Path, name: &str, text: &str) {
        fs::write(dir.join(name), text).unwrap();
    }

    fn manifest(dir: &Path, json: &str) -> BlockManifest {
        write(dir, MANIFEST_FILE, json);
        BlockManifest::read(dir).unwrap()
    }

    fn smoke_blocks(dir: &Path) {
        write(dir, "y.csv", "a,b\n1,2\n3,4\n5,6\n7,9\n");
        write(dir, "x1.csv", "c,d\n1,0\n0,1\n2,2\n3,1\n");
        write(dir, "x2.csv", "e,f\n1,1\n2,3\n1,4\n0,0\n");
    }

    #[test]
    fn smoke_load_with_intercept_only_covariates() {
        let dir = tempfile::tempdir().unwrap();
        smoke_blocks(dir.path());
        let m = manifest(dir.path(), r#"{"y": "y.csv", "x": ["x1.csv", "x2.csv"]}"#);
        let loaded = load_dataset(&m).unwrap();
        assert_eq!(loaded.dims, Dimensions::new(4, 2, vec![2, 2], 1, vec![1, 1]).unwrap());
        assert_eq!(loaded.data.t, DMatrix::from_element(4, 1, 1.0));
        assert_eq!(loaded.data.y[(3, 1)], 9.0);
        assert_eq!(loaded.names.x[1], vec!["e", "f"]);
    }

    #[test]
    fn five_level_categorical_gives_five_columns() {
        let dir = tempfile::tempdir().unwrap();
        smoke_blocks(dir.path());
        write(dir.path(), "t.csv", "geology\nsand\nclay\nrock\nloam\n");
        let m = manifest(
            dir.path(),
            r#"{"y": "y.csv", "x": ["x1.csv", "x2.csv"], "t": "t.csv",
                "categorical": {"T": [{"column": "geology", "levels": ["clay", "sand", "rock", "loam", "silt"]}]}}"#,
        );
        let loaded = load_dataset(&m).unwrap();
        assert_eq!(loaded.dims.r_t, 5);
        assert_eq!(loaded.names.t[0], INTERCEPT_COLUMN);
        assert_eq!(loaded.names.t[1], "geology=sand");
        assert_eq!(
            loaded.data.t.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 1.0, 0.0, 0.0, 0.0]
        );
        // reference level
        assert_eq!(
            loaded.data.t.row(1).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn categorical_levels_default_to_first_appearance() {
        let dir = tempfile::tempdir().unwrap();
        smoke_blocks(dir.path());
        write(dir.path(), "t.csv", "z,kind\n0.5,b\n1.5,a\n2.5,b\n3.5,c\n");
        let m = manifest(
            dir.path(),
            r#"{"y": "y.csv", "x": ["x1.csv", "x2.csv"], "t": "t.csv", "categorical": {"T": [{"column": "kind"}]}}"#,
        );
        let loaded = load_dataset(&m).unwrap();
        assert_eq!(loaded.names.t, vec![INTERCEPT_COLUMN, "z", "kind=a", "kind=c"]);
    }

    #[test]
    fn undeclared_level_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        smoke_blocks(dir.path());
        write(dir.path(), "t.csv", "kind\na\nb\nq\na\n");
        let m = manifest(
            dir.path(),
            r#"{"y": "y.csv", "x": ["x1.csv", "x2.csv"], "t": "t.csv",
                "categorical": {"T": [{"column": "kind", "levels": ["a", "b"]}]}}"#,
        );
        assert!(load_dataset(&m).unwrap_err().to_string().contains("undeclared level"));
    }

    #[test]
    fn row_mismatch_names_both_blocks() {
        let dir = tempfile::tempdir().unwrap();
        smoke_blocks(dir.path());
        write(dir.path(), "x2.csv", "e,f\n1,1\n2,3\n");
        let m = manifest(dir.path(), r#"{"y": "y.csv", "x": ["x1.csv", "x2.csv"]}"#);
        let msg = load_dataset(&m).unwrap_err().to_string();
        assert!(msg.contains("X2") && msg.contains("block Y"), "{msg}");
    }

    #[test]
    fn ragged_and_non_numeric_rows_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        smoke_blocks(dir.path());
        write(dir.path(), "x1.csv", "c,d\n1,0\n0\n2,2\n3,1\n");
        let m = manifest(dir.path(), r#"{"y": "y.csv", "x": ["x1.csv", "x2.csv"]}"#);
        assert!(matches!(load_dataset(&m), Err(Error::Load { .. })));

        smoke_blocks(dir.path());
        write(dir.path(), "y.csv", "a,b\n1,2\n3,x\n5,6\n7,9\n");
        let msg = load_dataset(&m).unwrap_err().to_string();
        assert!(msg.contains("'x' is not a finite number"), "{msg}");
    }

    #[test]
    fn duplicate_roles_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        smoke_blocks(dir.path());
        let m = manifest(dir.path(), r#"{"y": "y.csv", "x": ["x1.csv", "y.csv"]}"#);
        assert!(load_dataset(&m).is_err());
        write(
            dir.path(),
            MANIFEST_FILE,
            r#"{"y": "y.csv", "y": "x1.csv", "x": ["x2.csv"]}"#,
        );
        assert!(BlockManifest::read(dir.path()).is_err());
    }

    #[test]
    fn simulated_round_trip_is_exact() {
        for mode in [CovariateMode::AllGaussian, CovariateMode::InterceptPlusGaussian] {
            let dir = tempfile::tempdir().unwrap();
            let config = SimConfig {
                t_mode: mode,
                ..SimConfig::new(Dimensions::new(17, 3, vec![2, 4], 2, vec![3, 1]).unwrap(), 11)
            };
            let sim = simulate_dataset(&config).unwrap();
            write_simulated(&sim, &config, dir.path()).unwrap();
            let loaded = load_dataset(&BlockManifest::read(dir.path()).unwrap()).unwrap();
            assert_eq!(loaded.data, sim.data);
            assert_eq!(read_latents(&dir.path().join("latents.csv")).unwrap(), sim.latents);
            let theta = read_parameters(&dir.path().join("theta.csv"), &loaded.dims).unwrap();
            assert_eq!(theta, sim.theta);
        }
    }
}
