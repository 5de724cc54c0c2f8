use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{ProjectRecord, ProjectSet, RejectedRow};
use crate::error::{Error, Result};

/// Maps CSV header names onto record fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMapping {
    /// When absent, ids are the zero-padded data row number.
    #[serde(default)]
    pub id: Option<String>,
    pub completion_date: String,
    #[serde(default)]
    pub start_date: Option<String>,
    pub size: String,
    pub effort: String,
    pub elapsed_time: String,
    #[serde(default)]
    pub quality_rating: Option<String>,
    #[serde(default)]
    pub fp_version: Option<String>,
    #[serde(default)]
    pub web: Option<String>,
    #[serde(default)]
    pub categoricals: Vec<String>,
    /// chrono format string tried before the built-in formats.
    #[serde(default)]
    pub date_format: Option<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            id: Some("id".into()),
            completion_date: "completion_date".into(),
            start_date: Some("start_date".into()),
            size: "size".into(),
            effort: "effort".into(),
            elapsed_time: "elapsed_time".into(),
            quality_rating: None,
            fp_version: None,
            web: None,
            categoricals: Vec::new(),
            date_format: None,
        }
    }
}

// Two-digit years first: chrono would read "97" as the year 97 under %Y.
const FULL_DATE_FORMATS: &[&str] = &["%Y-%m-%d", "%Y/%m/%d", "%d-%b-%y", "%d-%b-%Y", "%d %b %Y"];
const MONTH_YEAR_FORMATS: &[&str] = &["%Y-%m-%d", "%m/%Y-%d", "%b-%Y-%d", "%b %Y-%d", "%B %Y-%d"];

/// Parses ISO-8601 dates and month/year forms; month/year resolves to the
/// first day of the month.
pub fn parse_date(raw: &str, format: Option<&str>) -> Option<NaiveDate> {
    let s = raw.trim();
    if s.is_empty() {
        return None;
    }
    if let Some(fmt) = format {
        if let Ok(d) = NaiveDate::parse_from_str(s, fmt) {
            return Some(d);
        }
    }
    for fmt in FULL_DATE_FORMATS {
        if let Ok(d) = NaiveDate::parse_from_str(s, fmt) {
            return Some(d);
        }
    }
    // Month granularity: pin the day so chrono accepts it.
    let with_day = format!("{s}-01");
    MONTH_YEAR_FORMATS
        .iter()
        .find_map(|fmt| NaiveDate::parse_from_str(&with_day, fmt).ok())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" | "web" => Some(true),
        "0" | "false" | "no" | "n" => Some(false),
        _ => None,
    }
}

struct Columns {
    id: Option<usize>,
    completion_date: usize,
    start_date: Option<usize>,
    size: usize,
    effort: usize,
    elapsed_time: usize,
    quality_rating: Option<usize>,
    fp_version: Option<usize>,
    web: Option<usize>,
    categoricals: Vec<(String, usize)>,
}

impl Columns {
    fn resolve(headers: &csv::StringRecord, m: &ColumnMapping) -> Result<Columns> {
        let find = |name: &str| headers.iter().position(|h| h.trim() == name);
        let required = |name: &str| {
            find(name).ok_or_else(|| Error::Schema(format!("required column `{name}` not in header")))
        };
        let optional = |name: &Option<String>| -> Result<Option<usize>> {
            match name {
                None => Ok(None),
                Some(n) => find(n)
                    .map(Some)
                    .ok_or_else(|| Error::Schema(format!("mapped column `{n}` not in header"))),
            }
        };
        Ok(Columns {
            id: optional(&m.id)?,
            completion_date: required(&m.completion_date)?,
            start_date: optional(&m.start_date)?,
            size: required(&m.size)?,
            effort: required(&m.effort)?,
            elapsed_time: required(&m.elapsed_time)?,
            quality_rating: optional(&m.quality_rating)?,
            fp_version: optional(&m.fp_version)?,
            web: optional(&m.web)?,
            categoricals: m
                .categoricals
                .iter()
                .map(|c| required(c).map(|i| (c.clone(), i)))
                .collect::<Result<_>>()?,
        })
    }
}

/// Loads a project CSV. Rows with a missing or unparseable required value
/// are reported in [`ProjectSet::rejected`] rather than returned as records.
pub fn load_projects(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<ProjectSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_projects(file, mapping)
}

pub fn read_projects<R: Read>(reader: R, mapping: &ColumnMapping) -> Result<ProjectSet> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::EmptyInput("no header row".into()));
    }
    let cols = Columns::resolve(&headers, mapping)?;

    let rows: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    if rows.is_empty() {
        return Err(Error::EmptyInput("no data rows".into()));
    }
    let width = rows.len().to_string().len();

    let mut records = Vec::with_capacity(rows.len());
    let mut rejected = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let line = row.position().map(|p| p.line()).unwrap_or(i as u64 + 2);
        match parse_row(row, &cols, mapping, i, width) {
            Ok(r) => records.push(r),
            Err(reason) => rejected.push(RejectedRow { line, reason }),
        }
    }

    let mut ps = ProjectSet::from_records(records);
    // Schema comes from the mapping, not from whichever row happened to parse first.
    ps.feature_schema.retain(|(_, k)| *k == super::FeatureKind::Ratio);
    for c in &mapping.categoricals {
        ps.feature_schema.push((c.clone(), super::FeatureKind::Categorical));
    }
    ps.rejected = rejected;
    Ok(ps)
}

fn parse_row(
    row: &csv::StringRecord,
    cols: &Columns,
    m: &ColumnMapping,
    index: usize,
    width: usize,
) -> std::result::Result<ProjectRecord, String> {
    let field = |i: usize| row.get(i).map(str::trim).unwrap_or("");
    let fmt = m.date_format.as_deref();
    let mut missing = BTreeSet::new();

    let number = |name: &str, i: usize| -> std::result::Result<f64, String> {
        let s = field(i);
        if s.is_empty() {
            return Err(format!("missing value for `{name}`"));
        }
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("unparseable number `{s}` for `{name}`"))
    };

    let id = match cols.id {
        Some(i) if !field(i).is_empty() => field(i).to_string(),
        Some(_) => return Err("missing id".into()),
        None => format!("{:0width$}", index + 1),
    };
    let completion_raw = field(cols.completion_date);
    if completion_raw.is_empty() {
        return Err(format!("missing value for `{}`", m.completion_date));
    }
    let completion_date = parse_date(completion_raw, fmt)
        .ok_or_else(|| format!("unparseable date `{completion_raw}` for `{}`", m.completion_date))?;
    let size = number(&m.size, cols.size)?;
    let effort = number(&m.effort, cols.effort)?;
    let elapsed_time = number(&m.elapsed_time, cols.elapsed_time)?;

    let start_date = match cols.start_date {
        None => None,
        Some(i) if field(i).is_empty() => {
            missing.insert("start_date".to_string());
            None
        }
        Some(i) => Some(
            parse_date(field(i), fmt).ok_or_else(|| format!("unparseable start date `{}`", field(i)))?,
        ),
    };
    let quality_rating = match cols.quality_rating {
        None => None,
        Some(i) if field(i).is_empty() => {
            missing.insert("quality_rating".to_string());
            None
        }
        Some(i) => Some(field(i).to_string()),
    };
    let fp_version = match cols.fp_version {
        None => None,
        Some(i) if field(i).is_empty() => {
            missing.insert("fp_version".to_string());
            None
        }
        Some(i) => Some(
            field(i)
                .parse::<f64>()
                .map_err(|_| format!("unparseable function-point version `{}`", field(i)))?,
        ),
    };
    let web = match cols.web {
        None => false,
        Some(i) if field(i).is_empty() => {
            missing.insert("web".to_string());
            false
        }
        Some(i) => parse_bool(field(i)).ok_or_else(|| format!("unparseable web flag `{}`", field(i)))?,
    };
    let mut categoricals = BTreeMap::new();
    for (name, i) in &cols.categoricals {
        let v = field(*i);
        if v.is_empty() {
            missing.insert(name.clone());
        }
        categoricals.insert(name.clone(), v.to_string());
    }

    Ok(ProjectRecord {
        id,
        start_date,
        completion_date,
        size,
        effort,
        elapsed_time,
        pdr: effort / size,
        categoricals,
        quality_rating,
        fp_version,
        web,
        missing_fields: missing,
    })
}

/// Writes records back out under the mapping's column names, optionally
/// with a trailing `window_index` column.
pub fn write_projects<W: Write>(
    ps: &ProjectSet,
    mapping: &ColumnMapping,
    window_index: Option<&[usize]>,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = vec![mapping.id.clone().unwrap_or_else(|| "id".into())];
    header.push(mapping.completion_date.clone());
    if let Some(s) = &mapping.start_date {
        header.push(s.clone());
    }
    header.extend([mapping.size.clone(), mapping.effort.clone(), mapping.elapsed_time.clone()]);
    if let Some(q) = &mapping.quality_rating {
        header.push(q.clone());
    }
    if let Some(v) = &mapping.fp_version {
        header.push(v.clone());
    }
    if let Some(v) = &mapping.web {
        header.push(v.clone());
    }
    header.extend(mapping.categoricals.iter().cloned());
    if window_index.is_some() {
        header.push("window_index".into());
    }
    w.write_record(&header)?;

    for (i, r) in ps.records.iter().enumerate() {
        let mut row = vec![r.id.clone(), r.completion_date.to_string()];
        if mapping.start_date.is_some() {
            row.push(r.start_date.map(|d| d.to_string()).unwrap_or_default());
        }
        row.extend([fmt_num(r.size), fmt_num(r.effort), fmt_num(r.elapsed_time)]);
        if mapping.quality_rating.is_some() {
            row.push(r.quality_rating.clone().unwrap_or_default());
        }
        if mapping.fp_version.is_some() {
            row.push(r.fp_version.map(fmt_num).unwrap_or_default());
        }
        if mapping.web.is_some() {
            row.push(if r.web { "yes" } else { "no" }.into());
        }
        for c in &mapping.categoricals {
            row.push(r.categoricals.get(c).cloned().unwrap_or_default());
        }
        if let Some(idx) = window_index {
            row.push(idx.get(i).map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mapping() -> ColumnMapping {
        ColumnMapping {
            categoricals: vec!["language".into()],
            ..ColumnMapping::default()
        }
    }

    const THREE_ROWS: &str = "\
id,completion_date,start_date,size,effort,elapsed_time,language
p1,1995-03-01,1994-06-01,120,2400,9,3GL
p2,1996-07-15,1995-09-01,80,1200,10,4GL
p3,1997-01,1996-02-01,200,5000,11,3GL
";

    #[test]
    fn loads_three_rows() {
        let ps = read_projects(THREE_ROWS.as_bytes(), &mapping()).unwrap();
        assert_eq!(ps.len(), 3);
        assert!(ps.rejected.is_empty());
        assert_eq!(ps.records[2].completion_date, NaiveDate::from_ymd_opt(1997, 1, 1).unwrap());
        assert!((ps.records[0].pdr - 20.0).abs() < 1e-12);
        assert_eq!(ps.records[1].categoricals["language"], "4GL");
    }

    #[test]
    fn empty_effort_is_rejected_not_dropped() {
        let csv = "\
id,completion_date,start_date,size,effort,elapsed_time,language
p1,1995-03-01,1994-06-01,120,2400,9,3GL
p2,1996-07-15,1995-09-01,80,,10,4GL
";
        let ps = read_projects(csv.as_bytes(), &mapping()).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps.rejected.len(), 1);
        assert_eq!(ps.rejected[0].line, 3);
        assert!(ps.rejected[0].reason.contains("effort"));
    }

    #[test]
    fn missing_required_column_is_schema_error() {
        let csv = "id,completion_date,size,elapsed_time\np1,1995-03-01,1,2\n";
        let err = read_projects(csv.as_bytes(), &ColumnMapping { start_date: None, ..mapping() }).unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains("effort")), "{err}");
    }

    #[test]
    fn empty_file_is_empty_input() {
        assert!(matches!(read_projects("".as_bytes(), &mapping()), Err(Error::EmptyInput(_))));
        let header_only = "id,completion_date,start_date,size,effort,elapsed_time,language\n";
        assert!(matches!(
            read_projects(header_only.as_bytes(), &mapping()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn empty_categorical_marks_missing_field() {
        let csv = "\
id,completion_date,start_date,size,effort,elapsed_time,language
p1,1995-03-01,,120,2400,9,
";
        let ps = read_projects(csv.as_bytes(), &mapping()).unwrap();
        let m = &ps.records[0].missing_fields;
        assert!(m.contains("language") && m.contains("start_date"));
    }

    #[test]
    fn date_forms() {
        let d = |y, m, dd| NaiveDate::from_ymd_opt(y, m, dd);
        assert_eq!(parse_date("2007-11-30", None), d(2007, 11, 30));
        assert_eq!(parse_date("2007-11", None), d(2007, 11, 1));
        assert_eq!(parse_date("11/2007", None), d(2007, 11, 1));
        assert_eq!(parse_date("Nov-2007", None), d(2007, 11, 1));
        assert_eq!(parse_date("30-Nov-97", None), d(1997, 11, 30));
        assert_eq!(parse_date("11/30/1997", Some("%m/%d/%Y")), d(1997, 11, 30));
        assert_eq!(parse_date("garbage", None), None);
    }

    #[test]
    fn write_then_read_preserves_records() {
        let ps = read_projects(THREE_ROWS.as_bytes(), &mapping()).unwrap();
        let mut buf = Vec::new();
        write_projects(&ps, &mapping(), None, &mut buf).unwrap();
        let back = read_projects(buf.as_slice(), &mapping()).unwrap();
        assert_eq!(back.records, ps.records);
    }
}
