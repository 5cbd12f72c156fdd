//! Dataset and boundary ingestion, and CSV emission of results.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceSurface;
use crate::error::{Error, Result};
use crate::estimate::GridEstimate;
use crate::geometry::{AssignmentRule, AxisSign, Boundary, Point, Polyline, DEFAULT_KINK_TOLERANCE};
use crate::sample::Sample;
use crate::simulation::{McReport, Replication};

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_dataset(path: &Path) -> Result<Sample> {
    read_dataset_from(open(path)?)
}

/// Reads `y, x1, x2` by header name; other columns are ignored. Row numbers
/// in errors count data rows from 1.
pub fn read_dataset_from<R: Read>(reader: R) -> Result<Sample> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(name.to_string()))
    };
    let idx = [column("y")?, column("x1")?, column("x2")?];
    let names = ["y", "x1", "x2"];
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let mut vals = [0.0; 3];
        for (k, &c) in idx.iter().enumerate() {
            let cell = rec.get(c).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                message: format!("column `{}`: cannot parse `{cell}` as a number", names[k]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("column `{}`: non-finite value `{cell}`", names[k]),
                });
            }
            vals[k] = v;
        }
        y.push(vals[0]);
        x.push(Point::new(vals[1], vals[2]));
    }
    if y.is_empty() {
        return Err(Error::InvalidData("dataset has no rows".into()));
    }
    Sample::new(y, x)
}

/// On-disk boundary description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryFile {
    pub vertices: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinks: Option<Vec<usize>>,
    pub assignment: AssignmentFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentFile {
    Quadrant { x1_sign: AxisSign, x2_sign: AxisSign },
    Polygon(Vec<[f64; 2]>),
}

impl BoundaryFile {
    pub fn into_boundary(self) -> Result<Boundary> {
        let vertices: Vec<Point> = self.vertices.into_iter().map(Point::from).collect();
        let polyline = match self.kinks {
            Some(k) => Polyline::with_kinks(vertices, k)?,
            None => Polyline::with_detected_kinks(vertices, DEFAULT_KINK_TOLERANCE)?,
        };
        let rule = match self.assignment {
            AssignmentFile::Quadrant { x1_sign, x2_sign } => AssignmentRule::Quadrant { x1_sign, x2_sign },
            AssignmentFile::Polygon(v) => AssignmentRule::Polygon(v.into_iter().map(Point::from).collect()),
        };
        rule.validate()?;
        Ok(Boundary { polyline, rule })
    }

    pub fn from_boundary(b: &Boundary) -> Self {
        let xy = |p: &Point| [p.x1, p.x2];
        Self {
            vertices: b.polyline.vertices().iter().map(xy).collect(),
            kinks: Some(b.polyline.kinks().iter().copied().collect()),
            assignment: match &b.rule {
                AssignmentRule::Quadrant { x1_sign, x2_sign } => AssignmentFile::Quadrant {
                    x1_sign: *x1_sign,
                    x2_sign: *x2_sign,
                },
                AssignmentRule::Polygon(v) => AssignmentFile::Polygon(v.iter().map(xy).collect()),
            },
        }
    }
}

pub fn parse_boundary(json: &str) -> Result<Boundary> {
    serde_json::from_str::<BoundaryFile>(json)?.into_boundary()
}

pub fn read_boundary(path: &Path) -> Result<Boundary> {
    let mut s = String::new();
    open(path)?
        .read_to_string(&mut s)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    parse_boundary(&s)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// Six significant digits.
    #[default]
    Human,
    /// Shortest representation that reads back to the same `f64`.
    Full,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "human" => Ok(Precision::Human),
            "full" => Ok(Precision::Full),
            other => Err(Error::InvalidInput(format!("unknown precision `{other}`"))),
        }
    }
}

pub fn format_number(v: f64, precision: Precision) -> String {
    match precision {
        Precision::Full => format!("{v}"),
        Precision::Human if v.is_finite() => {
            let rounded: f64 = format!("{v:.5e}").parse().unwrap_or(v);
            format!("{rounded}")
        }
        Precision::Human => format!("{v}"),
    }
}

const REPORT_HEADER: [&str; 9] = ["point_id", "b1", "b2", "h", "bias", "sd", "rmse", "ec", "il"];

pub fn write_report<W: Write>(report: &McReport, out: W, precision: Precision) -> Result<()> {
    let f = |v: f64| format_number(v, precision);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in &report.rows {
        w.write_record([
            r.point_id.to_string(),
            f(r.b.x1),
            f(r.b.x2),
            f(r.h),
            f(r.bias),
            f(r.sd),
            f(r.rmse),
            f(r.ec),
            f(r.il),
        ])?;
    }
    let blank = String::new;
    w.write_record([
        "uniform".to_string(),
        blank(),
        blank(),
        blank(),
        blank(),
        blank(),
        blank(),
        f(report.uniform.ec),
        f(report.uniform.il),
    ])?;
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Report rows as read back from CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub point_id: usize,
    pub b1: f64,
    pub b2: f64,
    pub h: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub ec: f64,
    pub il: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
    pub uniform_ec: f64,
    pub uniform_il: f64,
}

pub fn read_report<R: Read>(reader: R) -> Result<ReportTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(REPORT_HEADER) {
        return Err(Error::Schema(REPORT_HEADER.join(",")));
    }
    let mut rows = Vec::new();
    let mut uniform = None;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|_| Error::Parse {
                row,
                message: format!("column `{}`: cannot parse `{}`", REPORT_HEADER[k], &rec[k]),
            })
        };
        if &rec[0] == "uniform" {
            uniform = Some((num(7)?, num(8)?));
            continue;
        }
        rows.push(ReportRow {
            point_id: rec[0].parse().map_err(|_| Error::Parse {
                row,
                message: format!("bad point id `{}`", &rec[0]),
            })?,
            b1: num(1)?,
            b2: num(2)?,
            h: num(3)?,
            bias: num(4)?,
            sd: num(5)?,
            rmse: num(6)?,
            ec: num(7)?,
            il: num(8)?,
        });
    }
    let (uniform_ec, uniform_il) =
        uniform.ok_or_else(|| Error::InvalidData("report has no uniform row".into()))?;
    Ok(ReportTable {
        rows,
        uniform_ec,
        uniform_il,
    })
}

/// Long-format per-replication results.
pub fn write_replications<W: Write>(reps: &[Replication], out: W, precision: Precision) -> Result<()> {
    let f = |v: f64| format_number(v, precision);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rep", "point_id", "h", "theta_hat", "se", "covered", "band_q", "band_covered"])?;
    for r in reps {
        for k in 0..r.h.len() {
            w.write_record([
                (r.index + 1).to_string(),
                (k + 1).to_string(),
                f(r.h[k]),
                f(r.theta_hat[k]),
                f(r.se[k]),
                u8::from(r.covered[k]).to_string(),
                f(r.band_quantile),
                u8::from(r.band_covered).to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_estimates<W: Write>(est: &GridEstimate, out: W, precision: Precision) -> Result<()> {
    let f = |v: f64| format_number(v, precision);
    let opt = |v: Option<f64>| v.map(f).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "point_id",
        "b1",
        "b2",
        "h",
        "n_eff_0",
        "n_eff_1",
        "theta_hat",
        "se",
        "ci_lower",
        "ci_upper",
        "band_lower",
        "band_upper",
        "error",
    ])?;
    for p in &est.points {
        let id = (p.point_id + 1).to_string();
        let (b1, b2, h) = (f(p.eval_pt.x1), f(p.eval_pt.x2), opt(p.h));
        let record = match &p.outcome {
            Ok(s) => [
                id,
                b1,
                b2,
                h,
                s.n_eff[0].to_string(),
                s.n_eff[1].to_string(),
                f(s.theta_hat),
                f(s.se),
                f(s.ci.lower),
                f(s.ci.upper),
                opt(s.band.map(|b| b.0)),
                opt(s.band.map(|b| b.1)),
                String::new(),
            ],
            Err(e) => {
                let mut r: [String; 13] = Default::default();
                r[0] = id;
                r[1] = b1;
                r[2] = b2;
                r[3] = h;
                r[12] = e.code().to_string();
                r
            }
        };
        w.write_record(&record)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `Ξ̂` as a square matrix with a leading point-id column.
pub fn write_covariance<W: Write>(surface: &CovarianceSurface, out: W, precision: Precision) -> Result<()> {
    let m = surface.len();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["point_id".to_string()];
    header.extend((1..=m).map(|k| k.to_string()));
    w.write_record(&header)?;
    for k in 0..m {
        let mut row = vec![(k + 1).to_string()];
        row.extend((0..m).map(|l| format_number(surface.xi[(k, l)], precision)));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_bias_table<W: Write>(rows: &[(f64, f64)], out: W, precision: Precision) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["s", "bias"])?;
    for &(s, b) in rows {
        w.write_record([format_number(s, precision), format_number(b, precision)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
