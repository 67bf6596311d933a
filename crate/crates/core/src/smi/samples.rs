use std::path::Path;

use crate::error::{Error, Result};
use crate::framework::{Database, RowSampler};
use crate::infotheory::BlackBoxMechanism;
use crate::rng::Stream;

/// `m` draws of `(X_i, Y, Z_i)` for one record index `i`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RowSamples {
    pub m: usize,
    pub kx: usize,
    pub dy: usize,
    pub dz: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl RowSamples {
    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.m * self.kx
            || self.y.len() != self.m * self.dy
            || self.z.len() != self.m * self.dz
        {
            return Err(Error::dim(format!(
                "row samples do not match m={} (x {}x{}, y {}x{}, z {}x{})",
                self.m, self.m, self.kx, self.m, self.dy, self.m, self.dz
            )));
        }
        if self
            .x
            .iter()
            .chain(&self.y)
            .chain(&self.z)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("samples must be finite"));
        }
        Ok(())
    }

    /// Keeps the draws at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> RowSamples {
        let pick = |v: &[f64], w: usize| {
            idx.iter()
                .flat_map(|&j| v[j * w..(j + 1) * w].iter().copied())
                .collect()
        };
        RowSamples {
            m: idx.len(),
            kx: self.kx,
            dy: self.dy,
            dz: self.dz,
            x: pick(&self.x, self.kx),
            y: pick(&self.y, self.dy),
            z: pick(&self.z, self.dz),
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (0..self.kx)
            .map(|j| format!("x{j}"))
            .chain((0..self.dy).map(|j| format!("y{j}")))
            .chain((0..self.dz).map(|j| format!("z{j}")))
            .collect();
        w.write_record(&header)?;
        for s in 0..self.m {
            let rec: Vec<String> = self.x[s * self.kx..(s + 1) * self.kx]
                .iter()
                .chain(&self.y[s * self.dy..(s + 1) * self.dy])
                .chain(&self.z[s * self.dz..(s + 1) * self.dz])
                .map(|v| format!("{v:e}"))
                .collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let mut kinds = Vec::with_capacity(header.len());
        let (mut kx, mut dy, mut dz) = (0, 0, 0);
        for (col, name) in header.iter().enumerate() {
            let name = name.trim();
            let (kind, counter) = match name.chars().next() {
                Some('x') => ('x', &mut kx),
                Some('y') => ('y', &mut dy),
                Some('z') => ('z', &mut dz),
                _ => {
                    return Err(Error::Parse(format!(
                        "unexpected column '{name}' at position {col}"
                    )))
                }
            };
            if name[1..] != counter.to_string() {
                return Err(Error::Parse(format!(
                    "expected column {kind}{counter}, found '{name}'"
                )));
            }
            *counter += 1;
            kinds.push(kind);
        }
        let mut out = RowSamples {
            m: 0,
            kx,
            dy,
            dz,
            x: vec![],
            y: vec![],
            z: vec![],
        };
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != kinds.len() {
                return Err(Error::Parse(format!(
                    "line {} has {} fields, expected {}",
                    out.m + 2,
                    rec.len(),
                    kinds.len()
                )));
            }
            for (field, kind) in rec.iter().zip(&kinds) {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Parse(format!("line {}: '{field}' is not a number", out.m + 2))
                })?;
                match kind {
                    'x' => out.x.push(v),
                    'y' => out.y.push(v),
                    _ => out.z.push(v),
                }
            }
            out.m += 1;
        }
        out.validate()?;
        Ok(out)
    }
}

/// Per-record sample sets for the SMI DP statistic; dims `(n, k, d, m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceSampleSet {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub m: usize,
    pub rows: Vec<RowSamples>,
}

impl SliceSampleSet {
    pub fn new(rows: Vec<RowSamples>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::invalid("sample set has no records"));
        };
        let n = rows.len();
        let (k, d, m) = (first.kx, first.dy, first.m);
        for (i, r) in rows.iter().enumerate() {
            r.validate()?;
            if r.kx != k || r.dy != d || r.m != m || r.dz != k * (n - 1) {
                return Err(Error::dim(format!(
                    "record {i} has (k={}, d={}, z={}, m={}), expected ({k}, {d}, {}, {m})",
                    r.kx,
                    r.dy,
                    r.dz,
                    r.m,
                    k * (n - 1)
                )));
            }
        }
        if k == 0 || d == 0 || m == 0 {
            return Err(Error::invalid("k, d and m must be positive"));
        }
        Ok(SliceSampleSet { n, k, d, m, rows })
    }

    /// Draws `m` databases with i.i.d. rows, runs the mechanism once on each and
    /// splits every draw into `(X_i, Y, Z_i)` for all `i`.
    pub fn generate(
        n: usize,
        rows: &dyn RowSampler,
        mechanism: &dyn BlackBoxMechanism,
        m: usize,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::invalid("n and m must be positive"));
        }
        let k = rows.dim();
        let d = mechanism.output_dim();
        let mut recs: Vec<RowSamples> = (0..n)
            .map(|_| RowSamples {
                m,
                kx: k,
                dy: d,
                dz: k * (n - 1),
                x: Vec::with_capacity(m * k),
                y: Vec::with_capacity(m * d),
                z: Vec::with_capacity(m * k * (n - 1)),
            })
            .collect();
        for s in 0..m {
            let mut rng = Stream::substream(seed, &[s as u64]);
            let data: Vec<Vec<f64>> = (0..n).map(|_| rows.sample_row(&mut rng)).collect();
            let x = Database::from_rows(&data)?;
            let y = mechanism.sample(&x, &mut rng);
            if y.len() != d {
                return Err(Error::dim(format!(
                    "mechanism returned {} values, declared {d}",
                    y.len()
                )));
            }
            for (i, rec) in recs.iter_mut().enumerate() {
                rec.x.extend_from_slice(x.row(i));
                rec.y.extend_from_slice(&y);
                for (j, row) in data.iter().enumerate() {
                    if j != i {
                        rec.z.extend_from_slice(row);
                    }
                }
            }
        }
        Self::new(recs)
    }

    /// Resamples the draws with replacement, using the same indices for every record.
    pub fn bootstrap(&self, seed: u64) -> SliceSampleSet {
        let mut rng = Stream::new(seed);
        let idx: Vec<usize> = (0..self.m).map(|_| rng.index(self.m)).collect();
        SliceSampleSet {
            rows: self.rows.iter().map(|r| r.select(&idx)).collect(),
            ..*self
        }
    }

    /// Writes `row_<i>.csv` for each record into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (i, r) in self.rows.iter().enumerate() {
            r.write_csv(std::fs::File::create(dir.join(format!("row_{i}.csv")))?)?;
        }
        Ok(())
    }

    /// Reads `row_0.csv`, `row_1.csv`, … from `dir`.
    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut rows = Vec::new();
        loop {
            let path = dir.join(format!("row_{}.csv", rows.len()));
            if !path.exists() {
                break;
            }
            rows.push(RowSamples::read_csv(std::fs::File::open(&path)?)?);
        }
        if rows.is_empty() {
            return Err(Error::invalid(format!(
                "no row_0.csv found in {}",
                dir.display()
            )));
        }
        Self::new(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framework::GaussianRows;

    #[derive(Debug)]
    struct Sum;

    impl BlackBoxMechanism for Sum {
        fn sample(&self, x: &Database, _rng: &mut Stream) -> Vec<f64> {
            vec![x.vec().iter().sum()]
        }
        fn output_dim(&self) -> usize {
            1
        }
    }

    #[test]
    fn generated_records_are_consistent() {
        let rows = GaussianRows {
            mean: vec![0.0, 1.0],
            sd: vec![1.0, 1.0],
        };
        let s = SliceSampleSet::generate(3, &rows, &Sum, 5, 9).unwrap();
        assert_eq!((s.n, s.k, s.d, s.m), (3, 2, 1, 5));
        assert_eq!(s.rows[0].dz, 4);
        // Y is shared and equals the sum of X_i and Z_i.
        for r in &s.rows {
            for j in 0..5 {
                let total: f64 = r.x[j * 2..j * 2 + 2]
                    .iter()
                    .chain(&r.z[j * 4..j * 4 + 4])
                    .sum();
                assert!((total - r.y[j]).abs() < 1e-12);
                assert_eq!(r.y[j], s.rows[0].y[j]);
            }
        }
    }

    #[test]
    fn directory_roundtrip() {
        let rows = GaussianRows {
            mean: vec![0.0],
            sd: vec![2.0],
        };
        let s = SliceSampleSet::generate(2, &rows, &Sum, 7, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.write_dir(dir.path()).unwrap();
        let back = SliceSampleSet::read_dir(dir.path()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn bad_headers_are_parse_errors() {
        let text = "x0,y1\n1,2\n";
        assert!(matches!(
            RowSamples::read_csv(text.as_bytes()),
            Err(Error::Parse(_))
        ));
        let text = "x0,q0\n1,2\n";
        assert!(matches!(
            RowSamples::read_csv(text.as_bytes()),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn inconsistent_records_are_rejected() {
        let a = RowSamples {
            m: 1,
            kx: 1,
            dy: 1,
            dz: 1,
            x: vec![0.0],
            y: vec![0.0],
            z: vec![0.0],
        };
        let b = RowSamples {
            m: 1,
            kx: 1,
            dy: 1,
            dz: 0,
            x: vec![0.0],
            y: vec![0.0],
            z: vec![],
        };
        assert!(SliceSampleSet::new(vec![a.clone(), a.clone()]).is_ok());
        assert!(SliceSampleSet::new(vec![a, b]).is_err());
    }
}
