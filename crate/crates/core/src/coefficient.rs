//! Piecewise constant scalar diffusion coefficients on `Omega = (0,1)^d`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Error, Result};
use crate::mesh::CylinderMesh;

/// Cellwise constant field `A(x) = value * I` on a uniform grid over `Omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    grid_shape: Vec<usize>,
    values: Vec<f64>,
    alpha: f64,
    beta: f64,
}

impl CoefficientField {
    /// Builds a field from cell values, ordered with the first axis fastest.
    pub fn from_values(grid_shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if grid_shape.is_empty() || grid_shape.len() > 2 || grid_shape.contains(&0) {
            return domain(format!("invalid grid shape {grid_shape:?}"));
        }
        let n: usize = grid_shape.iter().product();
        if values.len() != n {
            return domain(format!("grid {grid_shape:?} needs {n} values, got {}", values.len()));
        }
        if let Some(bad) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return domain(format!("coefficient values must be positive and finite, got {bad}"));
        }
        let alpha = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let beta = values.iter().cloned().fold(0.0, f64::max);
        Ok(Self { grid_shape, values, alpha, beta })
    }

    pub fn dim(&self) -> usize {
        self.grid_shape.len()
    }

    pub fn grid_shape(&self) -> &[usize] {
        &self.grid_shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Essential infimum.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Essential supremum.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn is_constant(&self) -> bool {
        self.alpha == self.beta
    }

    /// Value of the cell containing `x`; points on a cell interface belong
    /// to the lower-index cell.
    pub fn sample(&self, x: &[f64]) -> Result<f64> {
        if x.len() < self.dim() {
            return domain(format!("point has {} coordinates, field is {}-dimensional", x.len(), self.dim()));
        }
        let mut index = 0;
        let mut stride = 1;
        for (k, &n) in self.grid_shape.iter().enumerate() {
            let xk = x[k];
            if !(0.0..=1.0).contains(&xk) {
                return domain(format!("point coordinate {xk} lies outside [0, 1]"));
            }
            let cell = ((xk * n as f64).ceil() as usize).saturating_sub(1).min(n - 1);
            index += cell * stride;
            stride *= n;
        }
        Ok(self.values[index])
    }

    /// Extended tensor `B(x) = diag(A(x) I_d, 1)` as a dense row-major
    /// `(d+1) x (d+1)` matrix.
    pub fn extended_tensor(&self, x: &[f64]) -> Result<Vec<f64>> {
        let a = self.sample(x)?;
        let n = self.dim() + 1;
        let mut b = vec![0.0; n * n];
        for i in 0..n {
            b[i * n + i] = if i + 1 < n { a } else { 1.0 };
        }
        Ok(b)
    }

    /// Coefficient on each element of `mesh`, sampled at element centroids.
    pub fn element_values(&self, mesh: &CylinderMesh) -> Result<Vec<f64>> {
        if mesh.dim() != self.dim() {
            return Err(Error::Structural(format!(
                "coefficient is {}-dimensional but the mesh has d = {}",
                self.dim(),
                mesh.dim()
            )));
        }
        (0..mesh.num_elements()).map(|e| self.sample(&mesh.element_centroid(e))).collect()
    }

    /// Deterministic fingerprint of the grid and values.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for &n in &self.grid_shape {
            eat(n as u64);
        }
        for &v in &self.values {
            eat(v.to_bits());
        }
        h
    }
}

pub fn constant_field(value: f64, grid_shape: Vec<usize>) -> Result<CoefficientField> {
    let n = grid_shape.iter().product();
    CoefficientField::from_values(grid_shape, vec![value; n])
}

/// Reads a raster: a header line `nx` or `nx ny` followed by positive
/// reals in row-major order (x1 fastest).
pub fn load_raster(path: &Path) -> Result<CoefficientField> {
    let text = std::fs::read_to_string(path)?;
    let err = |line: usize, msg: String| Error::Load { path: path.to_path_buf(), line, msg };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or_else(|| err(1, "empty raster file".into()))?;
    let shape: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| err(hline + 1, format!("invalid grid size `{t}`"))))
        .collect::<Result<_>>()?;
    if shape.is_empty() || shape.len() > 2 || shape.contains(&0) {
        return Err(err(hline + 1, format!("header must be `nx` or `nx ny` with positive sizes, got `{}`", header.trim())));
    }
    let expected: usize = shape.iter().product();
    let mut values = Vec::with_capacity(expected);
    for (ln, line) in lines {
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| err(ln + 1, format!("invalid number `{tok}`")))?;
            if !(v > 0.0) || !v.is_finite() {
                return Err(err(ln + 1, format!("coefficient value {v} is not positive")));
            }
            if values.len() == expected {
                return Err(err(ln + 1, format!("more than {expected} values")));
            }
            values.push(v);
        }
    }
    if values.len() != expected {
        let last = text.lines().count();
        return Err(err(last, format!("expected {expected} values, found {}", values.len())));
    }
    CoefficientField::from_values(shape, values)
}

/// I.i.d. cell values with `log10(value)` uniform on `[0, log10(contrast)]`.
pub fn log_uniform_random_field(contrast: f64, grid_shape: Vec<usize>, seed: u64) -> Result<CoefficientField> {
    if !(contrast >= 1.0) || !contrast.is_finite() {
        return domain(format!("contrast must be at least 1, got {contrast}"));
    }
    let n: usize = grid_shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = contrast.log10();
    let values = (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            10f64.powf(u * top)
        })
        .collect();
    CoefficientField::from_values(grid_shape, values)
}

/// Coefficient description as accepted on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientSpec {
    Constant(f64),
    Raster(std::path::PathBuf),
    LogRandom { contrast: f64, seed: u64 },
}

impl std::str::FromStr for CoefficientSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Domain(format!("invalid coefficient spec `{s}`"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "constant" => Ok(Self::Constant(rest.parse().map_err(|_| bad())?)),
            "raster" if !rest.is_empty() => Ok(Self::Raster(rest.into())),
            "logrand" => {
                let (c, seed) = rest.split_once(':').ok_or_else(bad)?;
                Ok(Self::LogRandom { contrast: c.parse().map_err(|_| bad())?, seed: seed.parse().map_err(|_| bad())? })
            }
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for CoefficientSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Constant(v) => write!(f, "constant:{v}"),
            Self::Raster(p) => write!(f, "raster:{}", p.display()),
            Self::LogRandom { contrast, seed } => write!(f, "logrand:{contrast}:{seed}"),
        }
    }
}

impl CoefficientSpec {
    /// Materializes the field; generated fields use `cells` cells per axis.
    pub fn build(&self, d: usize, cells: usize) -> Result<CoefficientField> {
        let field = match self {
            Self::Constant(v) => constant_field(*v, vec![1; d])?,
            Self::Raster(p) => load_raster(p)?,
            Self::LogRandom { contrast, seed } => log_uniform_random_field(*contrast, vec![cells; d], *seed)?,
        };
        if field.dim() != d {
            return Err(Error::Structural(format!("coefficient is {}-dimensional, expected d = {d}", field.dim())));
        }
        Ok(field)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write as _;

    fn raster(content: &str) -> tempfile::TempPath {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.into_temp_path()
    }

    #[test]
    fn constant_examples() {
        let f = constant_field(1.0, vec![4]).unwrap();
        assert_eq!((f.alpha(), f.beta()), (1.0, 1.0));
        let f = constant_field(3.0, vec![2, 2]).unwrap();
        assert_eq!(f.sample(&[0.3, 0.9]).unwrap(), 3.0);
        assert_eq!(f.extended_tensor(&[0.1, 0.1]).unwrap(), vec![3.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(constant_field(0.0, vec![1]).is_err());
    }

    #[test]
    fn two_cell_sampling() {
        let f = CoefficientField::from_values(vec![2], vec![1.0, 10.0]).unwrap();
        assert_eq!(f.sample(&[0.25]).unwrap(), 1.0);
        assert_eq!(f.sample(&[0.75]).unwrap(), 10.0);
        assert_eq!(f.sample(&[0.5]).unwrap(), 1.0);
        assert_eq!(f.sample(&[0.0]).unwrap(), 1.0);
        assert_eq!(f.sample(&[1.0]).unwrap(), 10.0);
        assert!(matches!(f.sample(&[1.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn raster_loading() {
        let p = raster("2 2\n1 2\n3 4\n");
        let f = load_raster(&p).unwrap();
        assert_eq!((f.alpha(), f.beta()), (1.0, 4.0));
        assert_eq!(f.sample(&[0.75, 0.25]).unwrap(), 2.0);
        assert_eq!(f.sample(&[0.25, 0.75]).unwrap(), 3.0);

        let p = raster("2 2\n1 2\n0 4\n");
        match load_raster(&p) {
            Err(Error::Load { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected load error, got {other:?}"),
        }
        let p = raster("two\n1 2\n");
        assert!(matches!(load_raster(&p), Err(Error::Load { line: 1, .. })));
        let p = raster("3\n1 2\n");
        assert!(matches!(load_raster(&p), Err(Error::Load { .. })));
        assert!(load_raster(Path::new("/nonexistent/raster.txt")).is_err());
    }

    #[test]
    fn spe10_like_range() {
        let mut content = String::from("4 3\n");
        for v in [5e-3, 0.1, 1.0, 20.0, 300.0, 2e4, 7.0, 0.02, 1e3, 4.0, 0.5, 9.0] {
            content.push_str(&format!("{v} "));
        }
        let p = raster(&content);
        let f = load_raster(&p).unwrap();
        assert!(f.alpha() >= 5e-3 && f.beta() <= 2e4);
    }

    #[test]
    fn random_field_examples() {
        let f = log_uniform_random_field(1.0, vec![8], 3).unwrap();
        assert!(f.values().iter().all(|&v| v == 1.0));
        let a = log_uniform_random_field(1e4, vec![64], 42).unwrap();
        let b = log_uniform_random_field(1e4, vec![64], 42).unwrap();
        assert_eq!(a, b);
        assert!(a.beta() / a.alpha() <= 1e4);
        assert!(a.alpha() >= 1.0 && a.beta() <= 1e4);
        assert_ne!(a, log_uniform_random_field(1e4, vec![64], 43).unwrap());
        assert!(log_uniform_random_field(0.5, vec![4], 0).is_err());
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("constant:2.5".parse::<CoefficientSpec>().unwrap(), CoefficientSpec::Constant(2.5));
        assert_eq!(
            "logrand:1e4:7".parse::<CoefficientSpec>().unwrap(),
            CoefficientSpec::LogRandom { contrast: 1e4, seed: 7 }
        );
        assert_eq!("raster:/tmp/x".parse::<CoefficientSpec>().unwrap(), CoefficientSpec::Raster("/tmp/x".into()));
        for bad in ["constant", "foo:1", "logrand:3", "constant:x"] {
            assert!(bad.parse::<CoefficientSpec>().is_err(), "{bad}");
        }
        let s = CoefficientSpec::LogRandom { contrast: 10000.0, seed: 7 };
        assert_eq!(s.to_string().parse::<CoefficientSpec>().unwrap(), s);
    }

    proptest! {
        #[test]
        fn samples_stay_in_range(seed in 0u64..1000, x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
            let f = log_uniform_random_field(1e4, vec![7, 5], seed).unwrap();
            let v = f.sample(&[x, y]).unwrap();
            prop_assert!(v >= f.alpha() && v <= f.beta());
            let b = f.extended_tensor(&[x, y]).unwrap();
            let eig = [b[0], b[4], b[8]];
            for e in eig {
                prop_assert!(e >= f.alpha().min(1.0) && e <= f.beta().max(1.0));
            }
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert_eq!(b[i * 3 + j], b[j * 3 + i]);
                }
            }
        }
    }
}
