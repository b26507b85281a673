//! CSV, JSON and SVG output. Every file is written atomically (temporary file in the
//! target directory, then rename) and starts with the provenance header it is given.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Menhir;
use crate::oracle::{CellPolygon, OracleCell, Region};
use crate::palm::{NucleiTriple, Quadruplet};
use crate::Point;

/// Output format of a command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            other => Err(Error::InvalidParameter(format!("unknown format {other:?}"))),
        }
    }
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Svg => "svg",
        })
    }
}

/// Writes `contents` to `path` through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// `# key: value` lines for a CSV header.
pub fn comment_header(entries: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        for line in v.lines() {
            let _ = writeln!(s, "# {k}: {line}");
        }
    }
    s
}

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::Io(format!("csv: {e}"))
}

/// A numeric table as CSV, after the comment header.
pub fn table_csv(header: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns).map_err(csv_error)?;
    for row in rows {
        if row.len() != columns.len() {
            return Err(Error::InvalidParameter(format!(
                "row of length {} for {} columns",
                row.len(),
                columns.len()
            )));
        }
        w.write_record(row.iter().map(|v| format!("{v:?}")))
            .map_err(csv_error)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(csv_error)?).map_err(csv_error)?;
    Ok(format!("{header}{body}"))
}

/// Serializable records as CSV (header row from the field names), after the comment header.
pub fn records_csv<T: Serialize>(header: &str, rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(csv_error)?).map_err(csv_error)?;
    Ok(format!("{header}{body}"))
}

/// One row of a cell CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub n: usize,
    pub x: f64,
    pub y: f64,
    pub neighbor_x: Option<f64>,
    pub neighbor_y: Option<f64>,
}

/// Cell vertices as CSV with columns `n,x,y,neighbor_x,neighbor_y`; the neighbor is
/// the nucleus across the edge from vertex `n` to vertex `n + 1`, empty on box edges.
pub fn cell_csv(header: &str, cell: &CellPolygon) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (n, (v, nb)) in cell.vertices.iter().zip(&cell.neighbors).enumerate() {
        w.serialize(CellRow {
            n,
            x: v[0],
            y: v[1],
            neighbor_x: nb.map(|p| p[0]),
            neighbor_y: nb.map(|p| p[1]),
        })
        .map_err(csv_error)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(csv_error)?).map_err(csv_error)?;
    Ok(format!("{header}{body}"))
}

/// Parses the output of [`cell_csv`], skipping `#` comment lines.
pub fn parse_cell_csv(text: &str) -> Result<Vec<CellRow>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(csv_error))
        .collect()
}

/// JSON form of an oracle cell with its nuclei and certification metadata.
#[derive(Clone, Debug, Serialize)]
pub struct CellExport<'a> {
    pub lambda: f64,
    pub quadruplet: &'a Quadruplet,
    pub nuclei: &'a NucleiTriple,
    pub nucleus: Point,
    pub vertices: &'a [Point],
    pub neighbors: &'a [Option<Point>],
    pub certified: bool,
    pub extensions: u32,
    pub sampled_region: &'a Region,
    pub background_points: usize,
}

impl<'a> CellExport<'a> {
    pub fn new(oc: &'a OracleCell) -> Self {
        Self {
            lambda: oc.config.lambda,
            quadruplet: &oc.config.quadruplet,
            nuclei: &oc.config.nuclei,
            nucleus: oc.cell.nucleus,
            vertices: &oc.cell.vertices,
            neighbors: &oc.cell.neighbors,
            certified: oc.cell.certified,
            extensions: oc.cell.extensions,
            sampled_region: &oc.config.region,
            background_points: oc.config.background.len(),
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(format!("json: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// SVG of a menhir in limit coordinates: left branch red, right branch blue, apex
/// marked by a disk, 5% margin around the bounding box. `comment` is embedded as an
/// XML comment.
pub fn render_menhir_svg(m: &Menhir, comment: &str) -> String {
    let pts = m
        .left
        .vertices
        .iter()
        .chain(&m.right.vertices)
        .chain(std::iter::once(&m.apex));
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for p in pts {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let margin = 0.05 * span;
    let (w, h) = (x1 - x0 + 2.0 * margin, y1 - y0 + 2.0 * margin);
    let stroke = 0.004 * span;
    // SVG's y axis points down; plot (x, -y).
    let poly = |vs: &[Point]| {
        vs.iter()
            .map(|p| format!("{},{}", p[0], -p[1]))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let mut comment = comment.to_string();
    while comment.contains("--") {
        comment = comment.replace("--", "- -");
    }
    let _ = writeln!(s, "<!-- {comment} -->");
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="600" height="{}" viewBox="{} {} {} {}">"#,
        (600.0 * h / w).round().max(1.0),
        x0 - margin,
        -y1 - margin,
        w,
        h
    );
    let _ = writeln!(s, "  <title>{}</title>", xml_escape("menhir"));
    let _ = writeln!(
        s,
        r#"  <polyline id="left" fill="none" stroke="red" stroke-width="{stroke}" points="{}"/>"#,
        poly(&m.left.vertices)
    );
    let _ = writeln!(
        s,
        r#"  <polyline id="right" fill="none" stroke="blue" stroke-width="{stroke}" points="{}"/>"#,
        poly(&m.right.vertices)
    );
    let _ = writeln!(
        s,
        r#"  <circle id="apex" cx="{}" cy="{}" r="{}" fill="black"/>"#,
        m.apex[0],
        -m.apex[1],
        3.0 * stroke
    );
    s.push_str("</svg>\n");
    s
}
