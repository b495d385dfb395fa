//! Legacy ASCII VTK unstructured grids of linear tetrahedra.
//!
//! The reader accepts the subset written here: one `POINTS` block, `CELLS`
//! of four-node cells, and `SCALARS`/`VECTORS` fields in double precision.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::mesh::Point;

const VTK_TETRA: u32 = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Scalars(Vec<f64>),
    Vectors(Vec<Vector3<f64>>),
}

impl Field {
    pub fn len(&self) -> usize {
        match self {
            Field::Scalars(v) => v.len(),
            Field::Vectors(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VtkGrid {
    pub title: String,
    pub points: Vec<Point>,
    pub tets: Vec<[usize; 4]>,
    pub point_data: Vec<(String, Field)>,
    pub cell_data: Vec<(String, Field)>,
}

impl VtkGrid {
    pub fn new(title: &str, points: Vec<Point>, tets: Vec<[usize; 4]>) -> Self {
        VtkGrid {
            title: title.to_string(),
            points,
            tets,
            ..Default::default()
        }
    }

    pub fn point_field(&self, name: &str) -> Option<&Field> {
        self.point_data.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    pub fn cell_field(&self, name: &str) -> Option<&Field> {
        self.cell_data.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    pub fn point_vectors(&self, name: &str) -> Option<&[Vector3<f64>]> {
        match self.point_field(name) {
            Some(Field::Vectors(v)) => Some(v),
            _ => None,
        }
    }

    pub fn to_text(&self) -> Result<String> {
        for (name, f) in &self.point_data {
            if f.len() != self.points.len() {
                return Err(Error::Config(format!(
                    "point field {name} has {} values for {} points",
                    f.len(),
                    self.points.len()
                )));
            }
        }
        for (name, f) in &self.cell_data {
            if f.len() != self.tets.len() {
                return Err(Error::Config(format!(
                    "cell field {name} has {} values for {} cells",
                    f.len(),
                    self.tets.len()
                )));
            }
        }
        let mut s = String::new();
        let title = self.title.replace('\n', " ");
        let _ = writeln!(s, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID");
        let _ = writeln!(s, "POINTS {} double", self.points.len());
        for p in &self.points {
            let _ = writeln!(s, "{:e} {:e} {:e}", p.x, p.y, p.z);
        }
        let _ = writeln!(s, "CELLS {} {}", self.tets.len(), 5 * self.tets.len());
        for t in &self.tets {
            let _ = writeln!(s, "4 {} {} {} {}", t[0], t[1], t[2], t[3]);
        }
        let _ = writeln!(s, "CELL_TYPES {}", self.tets.len());
        for _ in &self.tets {
            let _ = writeln!(s, "{VTK_TETRA}");
        }
        write_fields(&mut s, "POINT_DATA", self.points.len(), &self.point_data);
        write_fields(&mut s, "CELL_DATA", self.tets.len(), &self.cell_data);
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = self.to_text()?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().peekable();
        let mut line_no = 0;
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut next = |what: &str| -> Result<(usize, &str)> {
            loop {
                match lines.next() {
                    Some((k, l)) if l.trim().is_empty() => line_no = k + 1,
                    Some((k, l)) => {
                        line_no = k + 1;
                        return Ok((k + 1, l.trim()));
                    }
                    None => return Err(err(line_no, format!("unexpected end of file, expected {what}"))),
                }
            }
        };
        let (k, magic) = next("header")?;
        if !magic.starts_with("# vtk DataFile") {
            return Err(err(k, "not a legacy VTK file".into()));
        }
        let (_, title) = next("title")?;
        let mut grid = VtkGrid {
            title: title.to_string(),
            ..Default::default()
        };
        let (k, fmt) = next("ASCII")?;
        if fmt != "ASCII" {
            return Err(err(k, format!("only ASCII files are supported, got '{fmt}'")));
        }
        let (k, ds) = next("DATASET")?;
        if ds != "DATASET UNSTRUCTURED_GRID" {
            return Err(err(k, format!("expected an unstructured grid, got '{ds}'")));
        }

        // Remaining input is a token stream; sections are keyed by their first word.
        let mut rest = Vec::new();
        for (k, l) in lines {
            for tok in l.split_whitespace() {
                rest.push((k + 1, tok));
            }
        }
        let mut it = rest.into_iter().peekable();
        let mut take = |what: &str| -> Result<(usize, &str)> {
            it.next().ok_or_else(|| err(0, format!("unexpected end of file, expected {what}")))
        };
        let num = |(k, t): (usize, &str)| -> Result<usize> {
            t.parse().map_err(|_| err(k, format!("expected an integer, got '{t}'")))
        };
        let float = |(k, t): (usize, &str)| -> Result<f64> {
            t.parse().map_err(|_| err(k, format!("expected a number, got '{t}'")))
        };
        let mut data_target: Option<(bool, usize)> = None;
        while let Ok((k, kw)) = take("section") {
            match kw {
                "POINTS" => {
                    let n = num(take("point count")?)?;
                    take("point type")?;
                    grid.points = (0..n)
                        .map(|_| -> Result<Point> {
                            Ok(Point::new(float(take("x")?)?, float(take("y")?)?, float(take("z")?)?))
                        })
                        .collect::<Result<_>>()?;
                }
                "CELLS" => {
                    let n = num(take("cell count")?)?;
                    take("cell list size")?;
                    grid.tets = Vec::with_capacity(n);
                    for _ in 0..n {
                        let (kk, c) = take("cell size")?;
                        if c != "4" {
                            return Err(err(kk, format!("only tetrahedra are supported, got a {c}-node cell")));
                        }
                        let mut t = [0; 4];
                        for v in &mut t {
                            *v = num(take("cell node")?)?;
                            if *v >= grid.points.len() {
                                return Err(err(kk, format!("cell node {v} out of range")));
                            }
                        }
                        grid.tets.push(t);
                    }
                }
                "CELL_TYPES" => {
                    let n = num(take("cell type count")?)?;
                    for _ in 0..n {
                        let (kk, t) = take("cell type")?;
                        if t != "10" {
                            return Err(err(kk, format!("unsupported cell type {t}")));
                        }
                    }
                }
                "POINT_DATA" | "CELL_DATA" => {
                    let n = num(take("data count")?)?;
                    data_target = Some((kw == "POINT_DATA", n));
                }
                "SCALARS" | "VECTORS" => {
                    let (is_point, n) = data_target.ok_or_else(|| err(k, format!("{kw} outside a data section")))?;
                    let name = take("field name")?.1.to_string();
                    take("field type")?;
                    let field = if kw == "SCALARS" {
                        // Optional component count, then the mandatory lookup table line.
                        let (kk, t) = take("LOOKUP_TABLE")?;
                        if t != "LOOKUP_TABLE" {
                            if t != "1" {
                                return Err(err(kk, "only single-component scalars are supported".into()));
                            }
                            take("LOOKUP_TABLE")?;
                        }
                        take("table name")?;
                        Field::Scalars((0..n).map(|_| float(take("scalar")?)).collect::<Result<_>>()?)
                    } else {
                        Field::Vectors(
                            (0..n)
                                .map(|_| -> Result<Vector3<f64>> {
                                    Ok(Vector3::new(float(take("x")?)?, float(take("y")?)?, float(take("z")?)?))
                                })
                                .collect::<Result<_>>()?,
                        )
                    };
                    if is_point {
                        grid.point_data.push((name, field));
                    } else {
                        grid.cell_data.push((name, field));
                    }
                }
                other => return Err(err(k, format!("unsupported section '{other}'"))),
            }
        }
        Ok(grid)
    }
}

fn write_fields(s: &mut String, header: &str, n: usize, fields: &[(String, Field)]) {
    if fields.is_empty() {
        return;
    }
    let _ = writeln!(s, "{header} {n}");
    for (name, f) in fields {
        match f {
            Field::Scalars(v) => {
                let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for x in v {
                    let _ = writeln!(s, "{x:e}");
                }
            }
            Field::Vectors(v) => {
                let _ = writeln!(s, "VECTORS {name} double");
                for x in v {
                    let _ = writeln!(s, "{:e} {:e} {:e}", x.x, x.y, x.z);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> VtkGrid {
        let pts = vec![
            Point::new(0.0, 0.0, 0.0),
            Point::new(1.0, 0.0, 0.0),
            Point::new(0.0, 1.0, 0.0),
            Point::new(0.0, 0.0, 1.0),
            Point::new(1.0, 1.0, 1.0),
        ];
        let mut g = VtkGrid::new("two tets", pts, vec![[0, 1, 2, 3], [1, 2, 3, 4]]);
        g.point_data.push((
            "displacement".into(),
            Field::Vectors((0..5).map(|i| Vector3::new(i as f64, 0.1, -1.0 / 3.0)).collect()),
        ));
        g.point_data.push(("density".into(), Field::Scalars(vec![0.0, 1e-300, 2.5, -7.0, 1e12])));
        g.cell_data.push(("det_f".into(), Field::Scalars(vec![1.0, 0.123456789012345])));
        g
    }

    #[test]
    fn layout() {
        let text = sample().to_text().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert_eq!(lines[3], "DATASET UNSTRUCTURED_GRID");
        assert!(lines.contains(&"CELLS 2 10"));
        assert!(lines.contains(&"CELL_TYPES 2"));
        assert!(lines.contains(&"POINT_DATA 5"));
        assert!(lines.contains(&"CELL_DATA 2"));
        assert_eq!(lines.iter().filter(|l| **l == "10").count(), 2);
    }

    #[test]
    fn exact_round_trip() {
        let g = sample();
        let back = VtkGrid::parse(&g.to_text().unwrap(), Path::new("t.vtk")).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.point_vectors("displacement").unwrap()[4].x, 4.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut g = sample();
        g.cell_data.push(("bad".into(), Field::Scalars(vec![1.0])));
        assert!(g.to_text().is_err());
    }

    #[test]
    fn malformed_input() {
        let p = Path::new("bad.vtk");
        assert!(matches!(VtkGrid::parse("hello", p), Err(Error::Parse { .. })));
        let text = sample().to_text().unwrap().replace("CELLS 2 10\n4 0", "CELLS 2 10\n3 0");
        assert!(matches!(VtkGrid::parse(&text, p), Err(Error::Parse { .. })));
        let text = sample().to_text().unwrap();
        let cut = &text[..text.len() / 2];
        assert!(VtkGrid::parse(cut, p).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let r = VtkGrid::read(Path::new("/nonexistent/dir/x.vtk"));
        assert!(matches!(r, Err(Error::Io { .. })));
    }
}
