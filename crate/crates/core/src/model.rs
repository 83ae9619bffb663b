//! Domain types: block dimensions, datasets, parameters and latent values.
//!
//! The canonical flattening θ* used by the stopping rule, the study metrics
//! and every file that lists parameters is, in order:
//!
//! 1. `D` row-major (`r_T × q_Y`),
//! 2. each `Dᵐ` row-major (`r_m × q_m`), m = 1..p,
//! 3. `b` (`q_Y`),
//! 4. each `aᵐ` (`q_m`), m = 1..p,
//! 5. `c` (`p`),
//! 6. `σ²_Y`, then `σ²_1..σ²_p`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Block sizes of a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    pub n: usize,
    pub p: usize,
    pub q_y: usize,
    pub q_m: Vec<usize>,
    pub r_t: usize,
    pub r_m: Vec<usize>,
}

impl Dimensions {
    pub fn new(n: usize, q_y: usize, q_m: Vec<usize>, r_t: usize, r_m: Vec<usize>) -> Result<Self> {
        let dims = Dimensions {
            n,
            p: q_m.len(),
            q_y,
            q_m,
            r_t,
            r_m,
        };
        dims.validate()?;
        Ok(dims)
    }

    /// Same width `q` for every observed block and `r` for every covariate block.
    pub fn uniform(n: usize, p: usize, q: usize, r: usize) -> Result<Self> {
        Self::new(n, q, vec![q; p], r, vec![r; p])
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Dimensions("n must be at least 1".into()));
        }
        if self.p == 0 {
            return Err(Error::Dimensions("p must be at least 1".into()));
        }
        if self.q_m.len() != self.p || self.r_m.len() != self.p {
            return Err(Error::Dimensions(format!(
                "p = {} but {} explanatory widths and {} covariate widths were given",
                self.p,
                self.q_m.len(),
                self.r_m.len()
            )));
        }
        if self.q_y == 0 || self.r_t == 0 || self.q_m.contains(&0) || self.r_m.contains(&0) {
            return Err(Error::Dimensions("all block widths must be at least 1".into()));
        }
        Ok(())
    }

    /// Total number of observed variables, `q_Y + Σ q_m`.
    pub fn q_total(&self) -> usize {
        self.q_y + self.q_m.iter().sum::<usize>()
    }

    /// Offset of each observed block inside a stacked observation vector
    /// `(y, x¹, …, xᵖ)`; entry 0 is the `Y` block.
    pub fn block_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.p + 1);
        let mut at = 0;
        offsets.push(at);
        at += self.q_y;
        for &q in &self.q_m {
            offsets.push(at);
            at += q;
        }
        offsets
    }

    pub fn with_n(&self, n: usize) -> Self {
        Dimensions { n, ..self.clone() }
    }
}

/// How the noise covariances are parameterised, for parameter counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// `ψ = σ² I` per block; the mode every estimation routine implements.
    Isotropic,
    /// `ψ = diag(σ²_j)` per block.
    Diagonal,
}

/// Number of free scalar parameters.
pub fn count_parameters(dims: &Dimensions, mode: NoiseMode) -> usize {
    let blocks: usize = dims.q_m.iter().zip(&dims.r_m).map(|(q, r)| q * r).sum();
    let loadings = dims.q_y + dims.q_m.iter().sum::<usize>();
    let regressions = dims.q_y * dims.r_t + blocks + loadings;
    match mode {
        NoiseMode::Isotropic => dims.p + (dims.p + 1) + regressions,
        NoiseMode::Diagonal => dims.p + regressions + loadings,
    }
}

/// Observed blocks and their covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n × q_Y` dependent block.
    pub y: DMatrix<f64>,
    /// `p` explanatory blocks, `n × q_m` each.
    pub x: Vec<DMatrix<f64>>,
    /// `n × r_T` covariates of `Y`.
    pub t: DMatrix<f64>,
    /// `p` covariate blocks, `n × r_m` each.
    pub t_m: Vec<DMatrix<f64>>,
    /// When set, column 1 of every covariate matrix is the constant 1.
    pub intercept: bool,
}

impl Dataset {
    pub fn new(
        y: DMatrix<f64>,
        x: Vec<DMatrix<f64>>,
        t: DMatrix<f64>,
        t_m: Vec<DMatrix<f64>>,
        intercept: bool,
    ) -> Result<Self> {
        let data = Dataset {
            y,
            x,
            t,
            t_m,
            intercept,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.nrows();
        if self.x.is_empty() {
            return Err(Error::Dimensions("at least one explanatory block is required".into()));
        }
        if self.x.len() != self.t_m.len() {
            return Err(Error::Shape(format!(
                "{} explanatory blocks but {} covariate blocks",
                self.x.len(),
                self.t_m.len()
            )));
        }
        for (name, m) in self.named_blocks() {
            if m.nrows() != n {
                return Err(Error::Shape(format!(
                    "block {name} has {} rows but Y has {n}",
                    m.nrows()
                )));
            }
            if m.ncols() == 0 {
                return Err(Error::Shape(format!("block {name} has no columns")));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("block {name} contains non-finite values")));
            }
        }
        if self.intercept {
            let covariates = std::iter::once(("T".to_string(), &self.t))
                .chain(self.t_m.iter().enumerate().map(|(m, t)| (format!("T{}", m + 1), t)));
            for (name, t) in covariates {
                if t.column(0).iter().any(|&v| v != 1.0) {
                    return Err(Error::Data(format!(
                        "intercept requested but the first column of {name} is not constant 1"
                    )));
                }
            }
        }
        self.dims().validate()
    }

    fn named_blocks(&self) -> Vec<(String, &DMatrix<f64>)> {
        let mut out = vec![("Y".to_string(), &self.y), ("T".to_string(), &self.t)];
        for (m, (x, t)) in self.x.iter().zip(&self.t_m).enumerate() {
            out.push((format!("X{}", m + 1), x));
            out.push((format!("T{}", m + 1), t));
        }
        out
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.len()
    }

    pub fn dims(&self) -> Dimensions {
        Dimensions {
            n: self.y.nrows(),
            p: self.x.len(),
            q_y: self.y.ncols(),
            q_m: self.x.iter().map(|x| x.ncols()).collect(),
            r_t: self.t.ncols(),
            r_m: self.t_m.iter().map(|t| t.ncols()).collect(),
        }
    }

    /// Rows `units` of every block, in the given order.
    pub fn select_units(&self, units: &[usize]) -> Dataset {
        let pick = |m: &DMatrix<f64>| m.select_rows(units);
        Dataset {
            y: pick(&self.y),
            x: self.x.iter().map(pick).collect(),
            t: pick(&self.t),
            t_m: self.t_m.iter().map(pick).collect(),
            intercept: self.intercept,
        }
    }
}

/// Model parameters. Matrices are stored in the orientation of the
/// measurement equations: `D` is `r_T × q_Y`, `Dᵐ` is `r_m × q_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub d: DMatrix<f64>,
    pub d_m: Vec<DMatrix<f64>>,
    pub b: DVector<f64>,
    pub a: Vec<DVector<f64>>,
    pub c: DVector<f64>,
    pub sigma2_y: f64,
    pub sigma2_m: Vec<f64>,
}

impl Theta {
    /// All-zero coefficients and unit variances.
    pub fn zeros(dims: &Dimensions) -> Self {
        Theta {
            d: DMatrix::zeros(dims.r_t, dims.q_y),
            d_m: dims
                .r_m
                .iter()
                .zip(&dims.q_m)
                .map(|(&r, &q)| DMatrix::zeros(r, q))
                .collect(),
            b: DVector::zeros(dims.q_y),
            a: dims.q_m.iter().map(|&q| DVector::zeros(q)).collect(),
            c: DVector::zeros(dims.p),
            sigma2_y: 1.0,
            sigma2_m: vec![1.0; dims.p],
        }
    }

    pub fn p(&self) -> usize {
        self.a.len()
    }

    /// Checks every array against `dims` (the unit count is not involved).
    pub fn check_shape(&self, dims: &Dimensions) -> Result<()> {
        let p = dims.p;
        let ok = self.d.shape() == (dims.r_t, dims.q_y)
            && self.d_m.len() == p
            && self.a.len() == p
            && self.sigma2_m.len() == p
            && self.c.len() == p
            && self.b.len() == dims.q_y
            && (0..p).all(|m| self.d_m[m].shape() == (dims.r_m[m], dims.q_m[m]) && self.a[m].len() == dims.q_m[m]);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("parameters do not match the model dimensions".into()))
        }
    }

    /// Shape check plus strictly positive, finite variances.
    pub fn validate(&self, dims: &Dimensions) -> Result<()> {
        self.check_shape(dims)?;
        let variances = std::iter::once(("sigma2_Y".to_string(), self.sigma2_y)).chain(
            self.sigma2_m
                .iter()
                .enumerate()
                .map(|(m, &v)| (format!("sigma2_{}", m + 1), v)),
        );
        for (name, value) in variances {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::NonPositiveVariance { name, value });
            }
        }
        Ok(())
    }

    /// The canonical θ* vector (ordering documented at module level).
    pub fn flatten(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.len_hint());
        push_row_major(&mut out, &self.d);
        for d in &self.d_m {
            push_row_major(&mut out, d);
        }
        out.extend(self.b.iter());
        for a in &self.a {
            out.extend(a.iter());
        }
        out.extend(self.c.iter());
        out.push(self.sigma2_y);
        out.extend(&self.sigma2_m);
        DVector::from_vec(out)
    }

    fn len_hint(&self) -> usize {
        self.d.len()
            + self.d_m.iter().map(|d| d.len()).sum::<usize>()
            + self.b.len()
            + self.a.iter().map(|a| a.len()).sum::<usize>()
            + 2 * self.c.len()
            + 1
    }

    pub fn unflatten(v: &[f64], dims: &Dimensions) -> Result<Self> {
        let expected = count_parameters(dims, NoiseMode::Isotropic);
        if v.len() != expected {
            return Err(Error::Shape(format!(
                "parameter vector has length {} but the model has {expected} parameters",
                v.len()
            )));
        }
        let mut rest = v;
        let mut take = |k: usize| {
            let (head, tail) = rest.split_at(k);
            rest = tail;
            head
        };
        let d = DMatrix::from_row_slice(dims.r_t, dims.q_y, take(dims.r_t * dims.q_y));
        let d_m = (0..dims.p)
            .map(|m| DMatrix::from_row_slice(dims.r_m[m], dims.q_m[m], take(dims.r_m[m] * dims.q_m[m])))
            .collect();
        let b = DVector::from_column_slice(take(dims.q_y));
        let a = (0..dims.p)
            .map(|m| DVector::from_column_slice(take(dims.q_m[m])))
            .collect();
        let c = DVector::from_column_slice(take(dims.p));
        let sigma2_y = take(1)[0];
        let sigma2_m = take(dims.p).to_vec();
        Ok(Theta {
            d,
            d_m,
            b,
            a,
            c,
            sigma2_y,
            sigma2_m,
        })
    }

    /// Reflects factor `k` (0 = `g`, m = `fᵐ`): its loadings and every
    /// structural coefficient touching it change sign. The observed-data
    /// likelihood is unchanged.
    pub fn reflect_factor(&mut self, k: usize) {
        if k == 0 {
            self.b.neg_mut();
            self.c.neg_mut();
        } else {
            self.a[k - 1].neg_mut();
            self.c[k - 1] = -self.c[k - 1];
        }
    }

    /// Factors whose first loading is negative and must be reflected to
    /// reach the reporting convention (first loading of every factor ≥ 0).
    pub fn sign_flips(&self) -> Vec<bool> {
        std::iter::once(self.b[0] < 0.0)
            .chain(self.a.iter().map(|a| a[0] < 0.0))
            .collect()
    }
}

fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for row in m.row_iter() {
        out.extend(row.iter());
    }
}

/// Names of θ* coordinates, 1-based, in canonical order.
pub fn parameter_names(dims: &Dimensions) -> Vec<String> {
    let mut names = Vec::with_capacity(count_parameters(dims, NoiseMode::Isotropic));
    let matrix = |names: &mut Vec<String>, label: &str, rows: usize, cols: usize| {
        for r in 1..=rows {
            for j in 1..=cols {
                names.push(format!("{label}[{r},{j}]"));
            }
        }
    };
    matrix(&mut names, "D", dims.r_t, dims.q_y);
    for m in 0..dims.p {
        matrix(&mut names, &format!("D{}", m + 1), dims.r_m[m], dims.q_m[m]);
    }
    names.extend((1..=dims.q_y).map(|j| format!("b[{j}]")));
    for m in 0..dims.p {
        names.extend((1..=dims.q_m[m]).map(|j| format!("a{}[{j}]", m + 1)));
    }
    names.extend((1..=dims.p).map(|m| format!("c{m}")));
    names.push("sigma2_Y".into());
    names.extend((1..=dims.p).map(|m| format!("sigma2_{m}")));
    names
}

/// Values of the latent variables for every unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub g: DVector<f64>,
    pub f: Vec<DVector<f64>>,
}

impl Latents {
    pub fn n(&self) -> usize {
        self.g.len()
    }

    /// `(g, f¹, …, fᵖ)` as the columns of an `n × (p+1)` matrix.
    pub fn as_matrix(&self) -> DMatrix<f64> {
        let n = self.g.len();
        let mut h = DMatrix::zeros(n, self.f.len() + 1);
        h.set_column(0, &self.g);
        for (m, f) in self.f.iter().enumerate() {
            h.set_column(m + 1, f);
        }
        h
    }

    pub fn select_units(&self, units: &[usize]) -> Latents {
        Latents {
            g: self.g.select_rows(units),
            f: self.f.iter().map(|f| f.select_rows(units)).collect(),
        }
    }
}
