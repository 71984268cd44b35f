use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An unorganized point cloud (coordinates in mm) with optional named
/// per-point attributes stored row-major (`N × D`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    attribute_names: Vec<String>,
    attributes: Vec<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        Self::with_attributes(points, Vec::new(), Vec::new())
    }

    pub fn with_attributes(points: Vec<[f64; 3]>, attribute_names: Vec<String>, attributes: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("point cloud has no points".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Argument(format!("point {i} has non-finite coordinates")));
        }
        if attributes.len() != points.len() * attribute_names.len() {
            return Err(Error::Shape(format!(
                "{} points with {} attributes need {} values, got {}",
                points.len(),
                attribute_names.len(),
                points.len() * attribute_names.len(),
                attributes.len()
            )));
        }
        Ok(PointCloud {
            points,
            attribute_names,
            attributes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn attribute_dim(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn attributes(&self, i: usize) -> &[f64] {
        let d = self.attribute_dim();
        &self.attributes[i * d..(i + 1) * d]
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }

    /// Keeps the points at `indices`, in that order, with their attributes.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let d = self.attribute_dim();
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let mut attributes = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            attributes.extend_from_slice(self.attributes(i));
        }
        Self::with_attributes(points, self.attribute_names.clone(), attributes)
    }

    /// Writes ASCII PLY: `x y z` followed by one float property per attribute.
    pub fn write_ply(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_ply_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_ply_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", self.points.len())?;
        for axis in ["x", "y", "z"] {
            writeln!(w, "property float {axis}")?;
        }
        for name in &self.attribute_names {
            writeln!(w, "property float {name}")?;
        }
        writeln!(w, "end_header")?;
        for (i, p) in self.points.iter().enumerate() {
            write!(w, "{} {} {}", p[0], p[1], p[2])?;
            for a in self.attributes(i) {
                write!(w, " {a}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_ply(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_ply_from(BufReader::new(file)).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parses ASCII PLY. The `vertex` element must carry float `x`, `y`, `z`
    /// properties; any other vertex properties become attributes. Elements
    /// after `vertex` are ignored.
    pub fn read_ply_from(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let mut next = || -> Result<String> {
            match lines.next() {
                Some(Ok(l)) => Ok(l),
                Some(Err(e)) => Err(Error::Format(e.to_string())),
                None => Err(Error::Format("unexpected end of file".into())),
            }
        };
        if next()?.trim() != "ply" {
            return Err(Error::Format("missing 'ply' magic".into()));
        }
        let mut vertex_count = None;
        let mut props: Vec<String> = Vec::new();
        let mut in_vertex = false;
        let mut elements_before_vertex = 0usize;
        loop {
            let line = next()?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                ["format", "ascii", _] => {}
                ["format", other, ..] => return Err(Error::Format(format!("unsupported PLY format '{other}'"))),
                ["comment", ..] | ["obj_info", ..] | [] => {}
                ["element", "vertex", n] => {
                    vertex_count = Some(
                        n.parse::<usize>()
                            .map_err(|e| Error::Format(format!("vertex count: {e}")))?,
                    );
                    in_vertex = true;
                }
                ["element", _, _] => {
                    if vertex_count.is_none() {
                        elements_before_vertex += 1;
                    }
                    in_vertex = false;
                }
                ["property", "list", ..] => {
                    if in_vertex {
                        return Err(Error::Format("list properties on vertices".into()));
                    }
                }
                ["property", ty, name] => {
                    if in_vertex {
                        if !matches!(
                            *ty,
                            "float"
                                | "double"
                                | "float32"
                                | "float64"
                                | "int"
                                | "uint"
                                | "short"
                                | "ushort"
                                | "char"
                                | "uchar"
                                | "int32"
                                | "uint32"
                                | "int16"
                                | "uint16"
                                | "int8"
                                | "uint8"
                        ) {
                            return Err(Error::Format(format!("unknown property type '{ty}'")));
                        }
                        props.push((*name).to_string());
                    }
                }
                ["end_header"] => break,
                _ => return Err(Error::Format(format!("unrecognized header line '{line}'"))),
            }
        }
        if elements_before_vertex > 0 {
            return Err(Error::Format("vertex element must come first".into()));
        }
        let n = vertex_count.ok_or_else(|| Error::Format("no vertex element".into()))?;
        let axis = |a: &str| {
            props
                .iter()
                .position(|p| p == a)
                .ok_or_else(|| Error::Format(format!("vertex property '{a}' missing")))
        };
        let (ix, iy, iz) = (axis("x")?, axis("y")?, axis("z")?);
        let attr_idx: Vec<usize> = (0..props.len()).filter(|i| ![ix, iy, iz].contains(i)).collect();
        let names = attr_idx.iter().map(|&i| props[i].clone()).collect();
        let mut points = Vec::with_capacity(n);
        let mut attributes = Vec::with_capacity(n * attr_idx.len());
        let mut vals = Vec::with_capacity(props.len());
        for row in 0..n {
            let line = next()?;
            vals.clear();
            for t in line.split_whitespace() {
                vals.push(
                    t.parse::<f64>()
                        .map_err(|e| Error::Format(format!("vertex {row}: {e}")))?,
                );
            }
            if vals.len() != props.len() {
                return Err(Error::Format(format!(
                    "vertex {row}: expected {} values, got {}",
                    props.len(),
                    vals.len()
                )));
            }
            points.push([vals[ix], vals[iy], vals[iz]]);
            attributes.extend(attr_idx.iter().map(|&i| vals[i]));
        }
        Self::with_attributes(points, names, attributes)
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Indices chosen by farthest-point sampling, in selection order.
///
/// The first index is drawn from `seed`; every later pick maximizes the
/// distance to the already-selected set, lowest index winning ties.
pub fn farthest_point_order(points: &[[f64; 3]], count: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    let count = count.min(n);
    if count == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let mut selected = Vec::with_capacity(count);
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = first;
    loop {
        selected.push(current);
        min_d[current] = f64::NEG_INFINITY;
        if selected.len() == count {
            break;
        }
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (j, p) in points.iter().enumerate() {
            if min_d[j] == f64::NEG_INFINITY {
                continue;
            }
            let d = dist2(p, &c);
            if d < min_d[j] {
                min_d[j] = d;
            }
            if min_d[j] > best_d {
                best_d = min_d[j];
                best = j;
            }
        }
        current = best;
    }
    selected
}

/// Downsamples by `factor`, keeping `⌈N / factor⌉` points picked by
/// farthest-point sampling. The kept points are returned in their original
/// order, so `factor = 1` is the identity.
pub fn fps_downsample(cloud: &PointCloud, factor: usize, seed: u64) -> Result<PointCloud> {
    if factor == 0 {
        return Err(Error::Argument("downsampling factor must be at least 1".into()));
    }
    if factor > cloud.len() {
        return Err(Error::Argument(format!(
            "downsampling factor {factor} exceeds the cloud size {}",
            cloud.len()
        )));
    }
    if factor == 1 {
        return Ok(cloud.clone());
    }
    let keep = cloud.len().div_ceil(factor);
    let mut idx = farthest_point_order(cloud.points(), keep, seed);
    idx.sort_unstable();
    cloud.select(&idx)
}
