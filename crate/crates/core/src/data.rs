//! Datasets, CSV ingestion, min-max normalization and synthetic
//! Gaussian-cluster generation.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{DpError, Result};
use crate::kmeans::{sq_dist, Centroids};
use crate::mechanisms::Rng;

/// `n` points in `d` dimensions, row-major. `r` is set once the data has been
/// normalized into `[-r, r]^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    points: Vec<f64>,
    n: usize,
    d: usize,
    r: Option<f64>,
    provenance: String,
}

impl Dataset {
    /// Raw (unnormalized) data.
    pub fn new(points: Vec<f64>, d: usize, provenance: impl Into<String>) -> Result<Self> {
        if d == 0 || points.is_empty() || points.len() % d != 0 {
            return Err(DpError::param(format!(
                "point buffer of length {} is not a non-empty multiple of d={d}",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(DpError::param("coordinates must be finite"));
        }
        Ok(Dataset {
            n: points.len() / d,
            points,
            d,
            r: None,
            provenance: provenance.into(),
        })
    }

    /// Data already inside `[-r, r]^d`.
    pub fn with_domain(points: Vec<f64>, d: usize, r: f64, provenance: impl Into<String>) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(DpError::param(format!("domain half-width must be positive, got {r}")));
        }
        let mut ds = Dataset::new(points, d, provenance)?;
        if let Some(v) = ds.points.iter().find(|v| v.abs() > r) {
            return Err(DpError::param(format!("coordinate {v} lies outside [-{r}, {r}]")));
        }
        ds.r = Some(r);
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn r(&self) -> Option<f64> {
        self.r
    }

    /// Domain half-width, or an error for unnormalized data.
    pub fn domain(&self) -> Result<f64> {
        self.r
            .ok_or_else(|| DpError::param("dataset has not been normalized to a [-r, r] domain"))
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.d)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    /// Subset of rows by index, keeping the domain.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut points = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            points.extend_from_slice(self.row(i));
        }
        Dataset {
            n: indices.len(),
            points,
            d: self.d,
            r: self.r,
            provenance: self.provenance.clone(),
        }
    }
}

fn parse_row(line: &str) -> std::result::Result<Vec<f64>, String> {
    line.split(',')
        .map(|field| {
            let field = field.trim();
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("non-numeric field `{field}`"))
        })
        .collect()
}

/// Reads comma-separated numeric rows. A first line that fails to parse is
/// treated as a header. Blank lines are ignored.
pub fn parse_csv(text: &str, source: &str, expected_d: Option<usize>) -> Result<Dataset> {
    let fmt_err = |line: usize, message: String| DpError::Format {
        path: source.to_string(),
        line,
        message,
    };
    let mut points = Vec::new();
    let mut d = expected_d;
    let mut seen_first = false;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let row = match parse_row(line) {
            Ok(row) => row,
            Err(_) if !seen_first => {
                seen_first = true;
                continue;
            }
            Err(msg) => return Err(fmt_err(lineno, msg)),
        };
        seen_first = true;
        match d {
            None => d = Some(row.len()),
            Some(expected) if expected != row.len() => {
                return Err(fmt_err(
                    lineno,
                    format!("expected {expected} columns, found {}", row.len()),
                ))
            }
            Some(_) => {}
        }
        points.extend(row);
    }
    let d = match d {
        Some(d) if !points.is_empty() => d,
        _ => return Err(fmt_err(1, "no numeric rows".into())),
    };
    Dataset::new(points, d, source)
}

pub fn load_csv(path: impl AsRef<Path>, expected_d: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DpError::io(path, e))?;
    parse_csv(&text, &path.display().to_string(), expected_d)
}

/// Rows formatted with the shortest representation that parses back to the
/// same `f64`.
pub fn to_csv(rows: std::slice::ChunksExact<'_, f64>) -> String {
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_csv(data.rows())).map_err(|e| DpError::io(path, e))
}

/// Affinely maps each column's observed `[min, max]` onto `[-r, r]`.
/// Constant columns map to 0.
pub fn normalize(raw: &Dataset, r: f64) -> Result<Dataset> {
    if !(r.is_finite() && r > 0.0) {
        return Err(DpError::param(format!("domain half-width must be positive, got {r}")));
    }
    let d = raw.d();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for row in raw.rows() {
        for i in 0..d {
            lo[i] = lo[i].min(row[i]);
            hi[i] = hi[i].max(row[i]);
        }
    }
    let mut points = raw.as_flat().to_vec();
    for row in points.chunks_exact_mut(d) {
        for i in 0..d {
            row[i] = if hi[i] > lo[i] {
                let t = (row[i] - lo[i]) / (hi[i] - lo[i]);
                (-r + 2.0 * r * t).clamp(-r, r)
            } else {
                0.0
            };
        }
    }
    Dataset::with_domain(points, d, r, raw.provenance())
}

/// Parameters for a mixture of equal-size isotropic Gaussian clusters.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub d: usize,
    pub k: usize,
    pub n: usize,
    /// Minimum distance between any two cluster centres.
    pub separation: f64,
    /// Per-dimension standard deviation; defaults to `separation / 6`.
    pub cluster_std: Option<f64>,
    pub r: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(d: usize, k: usize, n: usize, separation: f64, seed: u64) -> Self {
        SyntheticSpec {
            d,
            k,
            n,
            separation,
            cluster_std: None,
            r: 1.0,
            seed,
        }
    }

    pub fn std(&self) -> f64 {
        self.cluster_std.unwrap_or(self.separation / 6.0)
    }
}

const CENTER_REJECTION_LIMIT: usize = 10_000;

/// Cluster sizes differing by at most one, larger clusters first.
pub fn split_sizes(n: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|j| n / parts + usize::from(j < n % parts))
        .collect()
}

/// Generates the clusters and returns the data with its true centres.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Centroids)> {
    let SyntheticSpec { d, k, n, separation, r, seed, .. } = *spec;
    let std = spec.std();
    if d == 0 || k == 0 || k > n {
        return Err(DpError::param(format!("need d >= 1 and 1 <= k <= n, got d={d} k={k} n={n}")));
    }
    if !(separation > 0.0 && std > 0.0 && r > 0.0) {
        return Err(DpError::param("separation, cluster_std and r must be positive"));
    }
    let half = r - 3.0 * std;
    if half < 0.0 {
        return Err(DpError::Infeasible(format!(
            "cluster_std {std} leaves no room for centres in [-{r}, {r}]"
        )));
    }
    let mut rng = Rng::new(seed);
    let mut centers: Vec<f64> = Vec::with_capacity(k * d);
    let mut candidate = vec![0.0; d];
    for j in 0..k {
        let mut placed = false;
        for _ in 0..CENTER_REJECTION_LIMIT {
            candidate
                .iter_mut()
                .for_each(|v| *v = if half > 0.0 { rng.gen_range(-half..=half) } else { 0.0 });
            if centers
                .chunks_exact(d)
                .all(|c| sq_dist(c, &candidate) >= separation * separation)
            {
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(DpError::Infeasible(format!(
                "could not place centre {} of {k} with separation {separation} after {CENTER_REJECTION_LIMIT} attempts",
                j + 1
            )));
        }
        centers.extend_from_slice(&candidate);
    }
    let normal = Normal::new(0.0, std).map_err(|e| DpError::param(e.to_string()))?;
    let mut points = Vec::with_capacity(n * d);
    for (j, size) in split_sizes(n, k).into_iter().enumerate() {
        let center = &centers[j * d..(j + 1) * d];
        for _ in 0..size {
            points.extend(center.iter().map(|c| (c + normal.sample(&mut rng)).clamp(-r, r)));
        }
    }
    let provenance = format!("synthetic(d={d},k={k},n={n},sep={separation},std={std},seed={seed})");
    Ok((
        Dataset::with_domain(points, d, r, provenance)?,
        Centroids::from_flat(centers, d)?,
    ))
}
