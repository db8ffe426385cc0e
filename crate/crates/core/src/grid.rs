//! Scalar fields on uniform axis-aligned grids, with central differences and
//! the binary/CSV containers.

use std::io::{BufRead, Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SIG2GRID";
const FORMAT_VERSION: u32 = 1;
const MAX_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub shape: Vec<usize>,
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
}

impl GridSpec {
    pub fn new(shape: Vec<usize>, origin: Vec<f64>, spacing: Vec<f64>) -> Result<Self> {
        let n = shape.len();
        if n == 0 || n > MAX_DIM || origin.len() != n || spacing.len() != n {
            return Err(Error::Grid(format!(
                "inconsistent dimensions: shape {}, origin {}, spacing {}",
                n,
                origin.len(),
                spacing.len()
            )));
        }
        if let Some(s) = shape.iter().find(|&&s| s < 3) {
            return Err(Error::Grid(format!("every axis needs at least 3 nodes, got {s}")));
        }
        if spacing.iter().any(|h| !(*h > 0.0) || !h.is_finite()) || origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Grid("spacing must be positive and origin finite".into()));
        }
        Ok(Self { shape, origin, spacing })
    }

    /// Box `[lower, upper]` with spacing `h` on every axis; `h` must divide each side.
    pub fn from_box(lower: &[f64], upper: &[f64], h: f64) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Grid("box corners have different dimensions".into()));
        }
        let mut shape = Vec::with_capacity(lower.len());
        for (l, u) in lower.iter().zip(upper) {
            let cells = (u - l) / h;
            let rounded = cells.round();
            if !(rounded >= 2.0) || (cells - rounded).abs() > 1e-9 * rounded.max(1.0) {
                return Err(Error::Grid(format!("spacing {h} does not divide side [{l}, {u}]")));
            }
            shape.push(rounded as usize + 1);
        }
        Self::new(shape, lower.to_vec(), vec![h; lower.len()])
    }

    /// The cube `[lo, hi]^n` with spacing `h`.
    pub fn cube(n: usize, lo: f64, hi: f64, h: f64) -> Result<Self> {
        Self::from_box(&vec![lo; n], &vec![hi; n], h)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn upper(&self) -> Vec<f64> {
        (0..self.dim()).map(|a| self.origin[a] + (self.shape[a] - 1) as f64 * self.spacing[a]).collect()
    }

    /// Stride of axis `a` in the node-major (last axis fastest) layout.
    pub fn stride(&self, a: usize) -> usize {
        self.shape[a + 1..].iter().product()
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (i, s)| acc * s + i)
    }

    pub fn multi(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.shape[a];
            flat /= self.shape[a];
        }
        idx
    }

    pub fn coord(&self, flat: usize) -> Vec<f64> {
        self.multi(flat).iter().enumerate().map(|(a, &i)| self.origin[a] + i as f64 * self.spacing[a]).collect()
    }

    /// Distance (in nodes) from `flat` to the nearest face.
    pub fn depth(&self, flat: usize) -> usize {
        self.multi(flat).iter().zip(&self.shape).map(|(&i, &s)| i.min(s - 1 - i)).min().unwrap_or(0)
    }

    pub fn is_interior(&self, flat: usize) -> bool {
        self.depth(flat) >= 1
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&f| self.is_interior(f)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::Grid(format!("expected {} values, got {}", spec.len(), values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Grid(format!("non-finite value at node {:?}", spec.multi(i))));
        }
        Ok(Self { spec, values })
    }

    /// Samples `f` at every node (in parallel).
    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> f64 + Sync) -> Self {
        let values = (0..spec.len()).into_par_iter().map(|i| f(&spec.coord(i))).collect();
        Self { spec, values }
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Central second difference `D_ij u` at an interior node.
    pub fn second_diff(&self, flat: usize, i: usize, j: usize) -> f64 {
        let s = &self.spec;
        let u = &self.values;
        let (si, sj) = (s.stride(i), s.stride(j));
        let (hi, hj) = (s.spacing[i], s.spacing[j]);
        if i == j {
            (u[flat + si] - 2.0 * u[flat] + u[flat - si]) / (hi * hi)
        } else {
            (u[flat + si + sj] - u[flat + si - sj] - u[flat - si + sj] + u[flat - si - sj]) / (4.0 * hi * hj)
        }
    }

    pub fn hessian(&self, flat: usize) -> DMatrix<f64> {
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.second_diff(flat, i, j);
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        h
    }

    pub fn laplacian(&self, flat: usize) -> f64 {
        (0..self.dim()).map(|i| self.second_diff(flat, i, i)).sum()
    }

    /// Central first differences at an interior node.
    pub fn gradient(&self, flat: usize) -> Vec<f64> {
        let s = &self.spec;
        (0..self.dim())
            .map(|a| {
                let st = s.stride(a);
                (self.values[flat + st] - self.values[flat - st]) / (2.0 * s.spacing[a])
            })
            .collect()
    }

    /// Fourth-order first differences, one-sided near faces; needs 5 nodes per axis.
    pub fn gradient4(&self, flat: usize) -> Vec<f64> {
        let s = &self.spec;
        let idx = s.multi(flat);
        (0..self.dim())
            .map(|a| {
                let st = s.stride(a) as isize;
                let h = s.spacing[a];
                let at = |off: isize| self.values[(flat as isize + off * st) as usize];
                let (i, m) = (idx[a], s.shape[a]);
                if i >= 2 && i + 2 < m {
                    (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * h)
                } else if i == 0 {
                    (-25.0 * at(0) + 48.0 * at(1) - 36.0 * at(2) + 16.0 * at(3) - 3.0 * at(4)) / (12.0 * h)
                } else if i == 1 {
                    (-3.0 * at(-1) - 10.0 * at(0) + 18.0 * at(1) - 6.0 * at(2) + at(3)) / (12.0 * h)
                } else if i == m - 1 {
                    (25.0 * at(0) - 48.0 * at(-1) + 36.0 * at(-2) - 16.0 * at(-3) + 3.0 * at(-4)) / (12.0 * h)
                } else {
                    (3.0 * at(1) + 10.0 * at(0) - 18.0 * at(-1) + 6.0 * at(-2) - at(-3)) / (12.0 * h)
                }
            })
            .collect()
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let s = &self.spec;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(s.dim() as u32).to_le_bytes())?;
        for &n in &s.shape {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for v in s.origin.iter().chain(&s.spacing).chain(&self.values) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a grid container (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let n = read_u32(&mut r)? as usize;
        if n == 0 || n > MAX_DIM {
            return Err(Error::Format(format!("unsupported dimension {n}")));
        }
        let shape = (0..n).map(|_| read_u64(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let origin = (0..n).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let spacing = (0..n).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let spec = GridSpec::new(shape, origin, spacing)?;
        let values = (0..spec.len()).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after grid values".into()));
        }
        Self::new(spec, values)
    }

    /// One row per node: coordinates then value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim()).map(|a| format!("x{a}")).chain(["value".to_string()]).collect();
        writeln!(w, "{}", header.join(","))?;
        for (i, v) in self.values.iter().enumerate() {
            let row: Vec<String> = self.spec.coord(i).iter().chain([v]).map(|x| format!("{x:e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads the CSV layout written by [`GridField::write_csv`], inferring the grid from the coordinates.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty CSV".into()))??;
        let n = header.split(',').count().checked_sub(1).filter(|&n| n > 0).ok_or_else(|| Error::Format("CSV needs coordinate columns".into()))?;
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Format(format!("line {}: {e}", ln + 2))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != n + 1 {
                return Err(Error::Format(format!("line {}: expected {} columns", ln + 2, n + 1)));
            }
            rows.push(vals);
        }
        let mut shape = Vec::with_capacity(n);
        let mut origin = Vec::with_capacity(n);
        let mut spacing = Vec::with_capacity(n);
        for a in 0..n {
            let mut c: Vec<f64> = rows.iter().map(|r| r[a]).collect();
            c.sort_by(f64::total_cmp);
            c.dedup();
            if c.len() < 2 {
                return Err(Error::Format(format!("axis {a} has fewer than two distinct coordinates")));
            }
            shape.push(c.len());
            origin.push(c[0]);
            spacing.push((c[c.len() - 1] - c[0]) / (c.len() - 1) as f64);
        }
        let spec = GridSpec::new(shape, origin, spacing)?;
        if rows.len() != spec.len() {
            return Err(Error::Format(format!("expected {} rows, got {}", spec.len(), rows.len())));
        }
        let mut values = vec![f64::NAN; spec.len()];
        for r in &rows {
            let idx: Vec<usize> = (0..n).map(|a| ((r[a] - spec.origin[a]) / spec.spacing[a]).round() as usize).collect();
            values[spec.flat(&idx)] = r[n];
        }
        Self::new(spec, values)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quad3() -> GridField {
        let spec = GridSpec::cube(3, -1.0, 1.0, 0.25).unwrap();
        GridField::from_fn(spec, |x| x[0] * x[0] + 0.5 * x[0] * x[2] - 0.25 * x[1] * x[1] + x[2])
    }

    #[test]
    fn index_roundtrip_and_layout() {
        let spec = GridSpec::new(vec![3, 4, 5], vec![0.0; 3], vec![1.0; 3]).unwrap();
        for f in 0..spec.len() {
            assert_eq!(spec.flat(&spec.multi(f)), f);
        }
        assert_eq!(spec.multi(1), vec![0, 0, 1]);
        assert_eq!(spec.stride(0), 20);
        assert!(GridSpec::new(vec![2, 4], vec![0.0; 2], vec![1.0; 2]).is_err());
        assert!(GridSpec::from_box(&[0.0], &[1.0], 0.3).is_err());
        assert_eq!(GridSpec::from_box(&[0.0, -1.0], &[1.0, 1.0], 0.125).unwrap().shape, vec![9, 17]);
    }

    #[test]
    fn differences_exact_on_quadratics() {
        let u = quad3();
        for f in u.spec.interior_nodes() {
            let h = u.hessian(f);
            assert!((h[(0, 0)] - 2.0).abs() < 1e-12);
            assert!((h[(0, 2)] - 0.5).abs() < 1e-12);
            assert!((h[(1, 1)] + 0.5).abs() < 1e-12);
            assert!(h[(0, 1)].abs() < 1e-12);
            let x = u.spec.coord(f);
            let g = u.gradient(f);
            assert!((g[2] - (0.5 * x[0] + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn fourth_order_gradient_is_exact_on_quartics() {
        let spec = GridSpec::cube(2, 0.0, 1.0, 0.125).unwrap();
        let u = GridField::from_fn(spec, |x| x[0].powi(4) - 2.0 * x[1].powi(3) * x[0]);
        for f in 0..u.spec.len() {
            let x = u.spec.coord(f);
            let g = u.gradient4(f);
            assert!((g[0] - (4.0 * x[0].powi(3) - 2.0 * x[1].powi(3))).abs() < 1e-11, "{x:?}");
            assert!((g[1] + 6.0 * x[1] * x[1] * x[0]).abs() < 1e-11);
        }
    }

    #[test]
    fn bad_containers_rejected() {
        assert!(GridField::read_binary(&b"NOTAGRID"[..]).is_err());
        let mut buf = Vec::new();
        quad3().write_binary(&mut buf).unwrap();
        buf.push(0);
        assert!(GridField::read_binary(&buf[..]).is_err());
        assert!(GridField::new(GridSpec::cube(2, 0.0, 1.0, 0.5).unwrap(), vec![f64::NAN; 9]).is_err());
    }

    proptest! {
        #[test]
        fn binary_roundtrip_is_bit_exact(vals in proptest::collection::vec(-1e6f64..1e6, 60), o in -5.0f64..5.0) {
            let spec = GridSpec::new(vec![3, 4, 5], vec![o, 0.0, -o], vec![0.1, 0.2, 0.3]).unwrap();
            let g = GridField::new(spec, vals).unwrap();
            let mut buf = Vec::new();
            g.write_binary(&mut buf).unwrap();
            prop_assert_eq!(buf.len(), 8 + 4 + 4 + 3 * 8 + 6 * 8 + 60 * 8);
            prop_assert_eq!(GridField::read_binary(&buf[..]).unwrap(), g);
        }

        #[test]
        fn csv_roundtrip(vals in proptest::collection::vec(-1e3f64..1e3, 12)) {
            let spec = GridSpec::new(vec![3, 4], vec![-1.0, 0.5], vec![0.5, 0.25]).unwrap();
            let g = GridField::new(spec, vals).unwrap();
            let mut buf = Vec::new();
            g.write_csv(&mut buf).unwrap();
            let back = GridField::read_csv(&buf[..]).unwrap();
            prop_assert_eq!(back.values, g.values);
            for a in 0..2 {
                prop_assert!((back.spec.spacing[a] - g.spec.spacing[a]).abs() < 1e-15);
            }
        }
    }
}
