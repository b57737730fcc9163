//! Parsing of machine/experiment files and schema homogenization.
//!
//! Two source shapes are supported: delimited tables with a header row, and
//! key-value records (`name = value` lines, records separated by blank
//! lines). Header and key matching is exact after trimming and case-folding.
//! New formats plug in as another [`SourceFormat`] variant feeding the same
//! [`RawRows`] structure.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Dataset, ExperimentRow, OutputSpec, ParameterKind, ParameterSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SourceFormat {
    #[default]
    DelimitedTable,
    KeyValueRecords,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Input,
    Output,
    Ignore,
}

/// The canonical parameter table every source maps into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub inputs: Vec<ParameterSpec>,
    pub outputs: Vec<OutputSpec>,
}

impl Schema {
    fn canonical_role(&self, name: &str) -> Option<(ColumnRole, usize)> {
        if let Some(i) = self.inputs.iter().position(|p| p.name == name) {
            return Some((ColumnRole::Input, i));
        }
        self.outputs
            .iter()
            .position(|o| o.name == name)
            .map(|i| (ColumnRole::Output, i))
    }

    fn find_folded(&self, key: &str) -> Option<&str> {
        self.inputs
            .iter()
            .map(|p| p.name.as_str())
            .chain(self.outputs.iter().map(|o| o.name.as_str()))
            .find(|n| fold(n) == key)
    }
}

fn default_delimiter() -> char {
    ','
}

fn default_decimal() -> char {
    '.'
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceFileDescriptor {
    /// Source tag recorded as row provenance.
    pub id: String,
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default)]
    pub format: SourceFormat,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_decimal")]
    pub decimal: char,
    /// Source header → canonical parameter name. Headers not listed here
    /// are matched against canonical names directly.
    #[serde(default)]
    pub columns: BTreeMap<String, String>,
    /// Canonical name → role. Defaults to the role implied by the schema.
    #[serde(default)]
    pub roles: BTreeMap<String, ColumnRole>,
}

impl SourceFileDescriptor {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            path: None,
            format: SourceFormat::DelimitedTable,
            delimiter: ',',
            decimal: '.',
            columns: BTreeMap::new(),
            roles: BTreeMap::new(),
        }
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.delimiter == self.decimal {
            return Err(Error::Config(format!(
                "source `{}`: delimiter and decimal separator are both `{}`",
                self.id, self.delimiter
            )));
        }
        if self.format == SourceFormat::DelimitedTable && !self.delimiter.is_ascii() {
            return Err(Error::Config(format!("source `{}`: delimiter must be ASCII", self.id)));
        }
        let mut seen = BTreeMap::new();
        for (header, canonical) in &self.columns {
            if let Some(prev) = seen.insert(canonical.as_str(), header.as_str()) {
                return Err(Error::Config(format!(
                    "source `{}`: headers `{prev}` and `{header}` both map to `{canonical}`",
                    self.id
                )));
            }
        }
        for (name, role) in &self.roles {
            match (schema.canonical_role(name), role) {
                (_, ColumnRole::Ignore) => {}
                (Some((r, _)), role) if r == *role => {}
                (Some((r, _)), role) => {
                    return Err(Error::SchemaConflict {
                        name: name.clone(),
                        detail: format!("source `{}` declares it {role:?}, schema has {r:?}", self.id),
                    })
                }
                (None, _) => {
                    return Err(Error::SchemaConflict {
                        name: name.clone(),
                        detail: format!("source `{}` maps it but the schema does not define it", self.id),
                    })
                }
            }
        }
        Ok(())
    }

    /// Resolves a source header to a canonical schema column.
    fn resolve(&self, schema: &Schema, header: &str) -> Resolved {
        let key = fold(header);
        let canonical = self
            .columns
            .iter()
            .find(|(h, _)| fold(h) == key)
            .map(|(_, c)| c.as_str())
            .or_else(|| schema.find_folded(&key));
        let Some(canonical) = canonical else {
            return Resolved::Unmapped;
        };
        if self.roles.get(canonical) == Some(&ColumnRole::Ignore) {
            return Resolved::Ignored;
        }
        match schema.canonical_role(canonical) {
            Some((ColumnRole::Input, i)) => Resolved::Input(i),
            Some((ColumnRole::Output, i)) => Resolved::Output(i),
            _ => Resolved::Unmapped,
        }
    }
}

fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Resolved {
    Input(usize),
    Output(usize),
    Ignored,
    Unmapped,
}

/// A parsed row in canonical column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub line: u64,
    pub inputs: Vec<Option<f64>>,
    pub outputs: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRows {
    pub source: String,
    pub rows: Vec<RawRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line: u64,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub source: String,
    pub rows_parsed: usize,
    pub rows_rejected: usize,
    /// Non-missing fraction of parsed rows per canonical column.
    pub fill_rate: BTreeMap<String, f64>,
    pub rejected: Vec<RejectedRow>,
    pub unmapped_columns: Vec<String>,
    pub ignored_columns: Vec<String>,
}

impl IngestReport {
    pub fn total_rows(&self) -> usize {
        self.rows_parsed + self.rejected.len()
    }
}

struct RowBuilder<'a> {
    schema: &'a Schema,
    decimal: char,
}

impl RowBuilder<'_> {
    fn empty(&self, line: u64) -> RawRow {
        RawRow {
            line,
            inputs: vec![None; self.schema.inputs.len()],
            outputs: vec![None; self.schema.outputs.len()],
        }
    }

    fn set(&self, row: &mut RawRow, target: Resolved, raw: &str) -> std::result::Result<(), String> {
        match target {
            Resolved::Input(i) => {
                row.inputs[i] = parse_input(&self.schema.inputs[i], raw, self.decimal)?;
            }
            Resolved::Output(i) => {
                row.outputs[i] = parse_number(raw, self.decimal)
                    .map_err(|_| format!("non-numeric value `{}` in `{}`", raw.trim(), self.schema.outputs[i].name))?;
            }
            Resolved::Ignored | Resolved::Unmapped => {}
        }
        Ok(())
    }
}

fn is_missing(s: &str) -> bool {
    s.is_empty() || ["na", "nan", "null", "n/a"].contains(&s.to_lowercase().as_str())
}

fn parse_number(raw: &str, decimal: char) -> std::result::Result<Option<f64>, ()> {
    let s = raw.trim();
    if is_missing(s) {
        return Ok(None);
    }
    let owned;
    let s = if decimal != '.' {
        if s.contains('.') {
            return Err(());
        }
        owned = s.replace(decimal, ".");
        owned.as_str()
    } else {
        s
    };
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(()),
    }
}

fn parse_input(spec: &ParameterSpec, raw: &str, decimal: char) -> std::result::Result<Option<f64>, String> {
    let s = raw.trim();
    match spec.kind {
        ParameterKind::Categorical => {
            if is_missing(s) {
                return Ok(None);
            }
            spec.level_index(s)
                .map(|i| Some(i as f64))
                .ok_or_else(|| format!("unknown level `{s}` for `{}`", spec.name))
        }
        kind => {
            let v = parse_number(s, decimal).map_err(|_| format!("non-numeric value `{s}` in `{}`", spec.name))?;
            if kind == ParameterKind::Integer {
                if let Some(x) = v {
                    if (x - x.round()).abs() > 1e-9 {
                        return Err(format!("non-integer value `{s}` in `{}`", spec.name));
                    }
                    return Ok(Some(x.round()));
                }
            }
            Ok(v)
        }
    }
}

/// Parses one source into canonical rows.
///
/// Rows with the wrong arity or unparseable cells are rejected and listed in
/// the report; parsing continues. Only a malformed header aborts.
pub fn parse_source(
    descriptor: &SourceFileDescriptor,
    schema: &Schema,
    bytes: &[u8],
) -> Result<(RawRows, IngestReport)> {
    descriptor.validate(schema)?;
    let builder = RowBuilder { schema, decimal: descriptor.decimal };
    let mut report = IngestReport {
        source: descriptor.id.clone(),
        rows_parsed: 0,
        rows_rejected: 0,
        fill_rate: BTreeMap::new(),
        rejected: Vec::new(),
        unmapped_columns: Vec::new(),
        ignored_columns: Vec::new(),
    };
    let rows = match descriptor.format {
        SourceFormat::DelimitedTable => parse_delimited(descriptor, &builder, bytes, &mut report)?,
        SourceFormat::KeyValueRecords => parse_key_value(descriptor, &builder, bytes, &mut report),
    };
    report.rows_parsed = rows.len();
    report.rows_rejected = report.rejected.len();
    let n = rows.len().max(1) as f64;
    for (i, p) in schema.inputs.iter().enumerate() {
        let filled = rows.iter().filter(|r| r.inputs[i].is_some()).count();
        report.fill_rate.insert(p.name.clone(), if rows.is_empty() { 0.0 } else { filled as f64 / n });
    }
    for (i, o) in schema.outputs.iter().enumerate() {
        let filled = rows.iter().filter(|r| r.outputs[i].is_some()).count();
        report.fill_rate.insert(o.name.clone(), if rows.is_empty() { 0.0 } else { filled as f64 / n });
    }
    Ok((RawRows { source: descriptor.id.clone(), rows }, report))
}

fn parse_delimited(
    descriptor: &SourceFileDescriptor,
    builder: &RowBuilder<'_>,
    bytes: &[u8],
    report: &mut IngestReport,
) -> Result<Vec<RawRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(descriptor.delimiter as u8)
        .quote(b'"')
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut records = reader.byte_records();

    let header = match records.next() {
        None => return Err(Error::Parse { offset: 0, message: "missing header row".into() }),
        Some(Err(e)) => {
            let offset = e.position().map_or(0, |p| p.byte());
            return Err(Error::Parse { offset, message: format!("unreadable header: {e}") });
        }
        Some(Ok(h)) => h,
    };
    let header_offset = header.position().map_or(0, |p| p.byte());
    let mut targets = Vec::with_capacity(header.len());
    let mut claimed: HashMap<String, usize> = HashMap::new();
    for (col, field) in header.iter().enumerate() {
        let name = std::str::from_utf8(field).map_err(|_| Error::Parse {
            offset: header_offset,
            message: format!("header column {} is not valid UTF-8", col + 1),
        })?;
        if name.trim().is_empty() {
            return Err(Error::Parse {
                offset: header_offset,
                message: format!("header column {} is empty", col + 1),
            });
        }
        let target = descriptor.resolve(builder.schema, name);
        match target {
            Resolved::Unmapped => report.unmapped_columns.push(name.trim().to_string()),
            Resolved::Ignored => report.ignored_columns.push(name.trim().to_string()),
            _ => {
                let key = format!("{target:?}");
                if let Some(prev) = claimed.insert(key, col) {
                    return Err(Error::Parse {
                        offset: header_offset,
                        message: format!("header columns {} and {} map to the same parameter", prev + 1, col + 1),
                    });
                }
            }
        }
        targets.push(target);
    }

    let mut rows = Vec::new();
    let mut last_offset = header_offset;
    for record in records {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let (line, offset) = e.position().map_or((0, 0), |p| (p.line(), p.byte()));
                report.rejected.push(RejectedRow { line, cause: format!("unreadable record: {e}") });
                if offset <= last_offset && offset != 0 {
                    break;
                }
                last_offset = offset;
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        if let Some(p) = record.position() {
            last_offset = p.byte();
        }
        if record.len() != targets.len() {
            report.rejected.push(RejectedRow {
                line,
                cause: format!("wrong arity: expected {} fields, got {}", targets.len(), record.len()),
            });
            continue;
        }
        let mut row = builder.empty(line);
        let mut fault = None;
        for (field, &target) in record.iter().zip(&targets) {
            if matches!(target, Resolved::Unmapped | Resolved::Ignored) {
                continue;
            }
            let Ok(text) = std::str::from_utf8(field) else {
                fault = Some("invalid UTF-8".to_string());
                break;
            };
            if let Err(cause) = builder.set(&mut row, target, text) {
                fault = Some(cause);
                break;
            }
        }
        match fault {
            Some(cause) => report.rejected.push(RejectedRow { line, cause }),
            None => rows.push(row),
        }
    }
    Ok(rows)
}

fn parse_key_value(
    descriptor: &SourceFileDescriptor,
    builder: &RowBuilder<'_>,
    bytes: &[u8],
    report: &mut IngestReport,
) -> Vec<RawRow> {
    let text = String::from_utf8_lossy(bytes);
    let mut rows = Vec::new();
    let mut unmapped = BTreeSet::new();
    let mut ignored = BTreeSet::new();

    // Group lines into blank-line separated records.
    let mut records: Vec<(u64, Vec<&str>)> = Vec::new();
    let mut current: Option<(u64, Vec<&str>)> = None;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('#') {
            continue;
        }
        if t.is_empty() {
            if let Some(rec) = current.take() {
                records.push(rec);
            }
            continue;
        }
        current.get_or_insert_with(|| (i as u64 + 1, Vec::new())).1.push(t);
    }
    records.extend(current);

    for (line, lines) in records {
        let mut row = builder.empty(line);
        let mut seen = BTreeSet::new();
        let mut fault = None;
        for l in lines {
            if l.contains('\u{FFFD}') {
                fault = Some("invalid UTF-8".to_string());
                break;
            }
            let Some((key, value)) = l.split_once('=') else {
                fault = Some(format!("malformed line `{l}` (expected `name = value`)"));
                break;
            };
            if !seen.insert(fold(key)) {
                fault = Some(format!("duplicate key `{}`", key.trim()));
                break;
            }
            let target = descriptor.resolve(builder.schema, key);
            match target {
                Resolved::Unmapped => {
                    unmapped.insert(key.trim().to_string());
                }
                Resolved::Ignored => {
                    ignored.insert(key.trim().to_string());
                }
                _ => {
                    if let Err(cause) = builder.set(&mut row, target, value) {
                        fault = Some(cause);
                        break;
                    }
                }
            }
        }
        match fault {
            Some(cause) => report.rejected.push(RejectedRow { line, cause }),
            None => rows.push(row),
        }
    }
    report.unmapped_columns = unmapped.into_iter().collect();
    report.ignored_columns = ignored.into_iter().collect();
    rows
}

/// Merges parsed sources into one dataset in canonical column order.
///
/// Row ids are assigned sequentially in source order; provenance is
/// `"<source id>:<line>"`. Numeric parameters declared without bounds get
/// the observed range.
pub fn homogenize(schema: &Schema, sources: &[(RawRows, SourceFileDescriptor)]) -> Result<Dataset> {
    if sources.is_empty() {
        return Err(Error::Config("homogenize needs at least one source".into()));
    }
    let mut declared: BTreeMap<&str, (ColumnRole, &str)> = BTreeMap::new();
    for (_, d) in sources {
        d.validate(schema)?;
        for (name, role) in &d.roles {
            if *role == ColumnRole::Ignore {
                continue;
            }
            if let Some((prev, src)) = declared.insert(name, (*role, &d.id)) {
                if prev != *role {
                    return Err(Error::SchemaConflict {
                        name: name.clone(),
                        detail: format!("source `{src}` maps it as {prev:?}, source `{}` as {role:?}", d.id),
                    });
                }
            }
        }
    }

    let mut dataset = Dataset::new(schema.inputs.clone(), schema.outputs.clone());
    for (raw, _) in sources {
        for r in &raw.rows {
            if r.inputs.len() != schema.inputs.len() || r.outputs.len() != schema.outputs.len() {
                return Err(Error::Schema(format!(
                    "source `{}` line {} does not match the canonical schema",
                    raw.source, r.line
                )));
            }
            dataset.rows.push(ExperimentRow {
                id: dataset.rows.len(),
                inputs: r.inputs.clone(),
                outputs: r.outputs.clone(),
                source: format!("{}:{}", raw.source, r.line),
                replicate_group: None,
            });
        }
    }
    infer_missing_bounds(&mut dataset)?;
    dataset.validate(false)?;
    Ok(dataset)
}

fn infer_missing_bounds(dataset: &mut Dataset) -> Result<()> {
    for j in 0..dataset.inputs.len() {
        if !dataset.inputs[j].is_numeric() || dataset.inputs[j].bounds.is_some() {
            continue;
        }
        let seen: Vec<f64> = dataset.rows.iter().filter_map(|r| r.inputs[j]).collect();
        let Some(lo) = seen.iter().copied().reduce(f64::min) else {
            return Err(Error::Schema(format!(
                "parameter `{}` has no bounds and no observed values",
                dataset.inputs[j].name
            )));
        };
        let hi = seen.iter().copied().fold(lo, f64::max);
        // A single observed value still needs a nonempty box.
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        dataset.inputs[j].bounds = Some([lo, hi]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema() -> Schema {
        Schema {
            inputs: vec![
                ParameterSpec::continuous("temp", 0.0, 1000.0),
                ParameterSpec::continuous("pressure", 0.0, 10.0),
                ParameterSpec::categorical("gas", ["N2", "Ar"]),
            ],
            outputs: vec![OutputSpec::new("wpe")],
        }
    }

    #[test]
    fn clean_table_parses_fully() {
        let src = "temp,pressure,gas,wpe\n500,1.5,N2,3.2\n600,2.5,Ar,3.9\n700,3.5,N2,4.1\n";
        let (rows, rep) = parse_source(&SourceFileDescriptor::new("a"), &schema(), src.as_bytes()).unwrap();
        assert_eq!((rep.rows_parsed, rep.rows_rejected), (3, 0));
        assert_eq!(rows.rows[1].inputs, vec![Some(600.0), Some(2.5), Some(1.0)]);
        assert_eq!(rep.fill_rate["wpe"], 1.0);
    }

    #[test]
    fn non_numeric_cell_rejects_only_its_row() {
        let src = "temp,pressure,gas,wpe\n500,1.5,N2,3.2\n600,abc,Ar,3.9\n700,3.5,N2,4.1\n";
        let (rows, rep) = parse_source(&SourceFileDescriptor::new("a"), &schema(), src.as_bytes()).unwrap();
        assert_eq!((rep.rows_parsed, rep.rows_rejected), (2, 1));
        assert_eq!(rep.rejected[0].line, 3);
        assert!(rep.rejected[0].cause.contains("non-numeric"));
        assert_eq!(rows.rows.len(), 2);
    }

    #[test]
    fn wrong_arity_and_missing_cells() {
        let src = "temp,pressure,gas,wpe\n500,1.5,N2\n600,,Ar,3.9\n";
        let (rows, rep) = parse_source(&SourceFileDescriptor::new("a"), &schema(), src.as_bytes()).unwrap();
        assert_eq!(rep.rejected.len(), 1);
        assert!(rep.rejected[0].cause.contains("arity"));
        assert_eq!(rows.rows[0].inputs[1], None);
        assert_eq!(rep.fill_rate["pressure"], 0.0);
        assert_eq!(rep.total_rows(), 2);
    }

    #[test]
    fn decimal_comma_encoding_matches_dot_encoding() {
        let dot = "temp,pressure,gas,wpe\n500.25,1.5,N2,3.2\n600,2.75,Ar,3.9\n";
        let comma = "temp;pressure;gas;wpe\n500,25;1,5;N2;3,2\n600;2,75;Ar;3,9\n";
        let mut d2 = SourceFileDescriptor::new("a");
        d2.delimiter = ';';
        d2.decimal = ',';
        let (a, _) = parse_source(&SourceFileDescriptor::new("a"), &schema(), dot.as_bytes()).unwrap();
        let (b, _) = parse_source(&d2, &schema(), comma.as_bytes()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn header_mapping_is_case_folded_and_unmapped_reported() {
        let src = " TEMP ,P_chamber,Gas,WPE,operator\n500,1.5,N2,3.2,bob\n";
        let mut d = SourceFileDescriptor::new("m");
        d.columns.insert("p_chamber".into(), "pressure".into());
        let (rows, rep) = parse_source(&d, &schema(), src.as_bytes()).unwrap();
        assert_eq!(rows.rows[0].inputs, vec![Some(500.0), Some(1.5), Some(0.0)]);
        assert_eq!(rep.unmapped_columns, vec!["operator".to_string()]);
    }

    #[test]
    fn malformed_header_is_a_parse_error() {
        let d = SourceFileDescriptor::new("a");
        assert!(matches!(parse_source(&d, &schema(), b""), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(
            parse_source(&d, &schema(), b"temp,,wpe\n1,2,3\n"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_source(&d, &schema(), b"temp,TEMP,wpe\n1,2,3\n"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn key_value_records() {
        let src = "# machine log\ntemp = 500\npressure = 1.5\ngas = Ar\nwpe = 3.0\n\ntemp = 510\nwpe = 3.1\n\ntemp 520\n";
        let mut d = SourceFileDescriptor::new("kv");
        d.format = SourceFormat::KeyValueRecords;
        let (rows, rep) = parse_source(&d, &schema(), src.as_bytes()).unwrap();
        assert_eq!(rep.rows_parsed, 2);
        assert_eq!(rep.rows_rejected, 1);
        assert_eq!(rows.rows[0].inputs[2], Some(1.0));
        assert_eq!(rows.rows[1].inputs[1], None);
        assert_eq!(rows.rows[1].line, 7);
    }

    #[test]
    fn delimiter_equal_to_decimal_is_rejected() {
        let mut d = SourceFileDescriptor::new("a");
        d.delimiter = ',';
        d.decimal = ',';
        assert!(parse_source(&d, &schema(), b"temp\n1\n").is_err());
    }

    fn parsed(id: &str, text: &str) -> (RawRows, SourceFileDescriptor) {
        let d = SourceFileDescriptor::new(id);
        (parse_source(&d, &schema(), text.as_bytes()).unwrap().0, d)
    }

    #[test]
    fn homogenize_single_source_passthrough() {
        let (raw, d) = parsed("a", "temp,pressure,gas,wpe\n500,1.5,N2,3.2\n600,2.5,Ar,3.9\n");
        let ds = homogenize(&schema(), &[(raw.clone(), d)]).unwrap();
        assert_eq!(ds.rows.len(), 2);
        for (r, raw) in ds.rows.iter().zip(&raw.rows) {
            assert_eq!(r.inputs, raw.inputs);
            assert_eq!(r.outputs, raw.outputs);
        }
        assert_eq!(ds.rows[1].source, "a:3");
    }

    #[test]
    fn homogenize_concatenates_and_ignores_column_order() {
        let a = parsed("a", "temp,pressure,gas,wpe\n500,1.5,N2,3.2\n");
        let b = parsed("a", "wpe,gas,temp,pressure\n3.2,N2,500,1.5\n");
        let c = parsed("c", "temp,wpe\n700,5.0\n");
        let ab = homogenize(&schema(), &[a.clone(), c.clone()]).unwrap();
        let bb = homogenize(&schema(), &[b, c]).unwrap();
        assert_eq!(ab, bb);
        assert_eq!(ab.rows.len(), 2);
        assert_eq!(ab.rows[1].inputs[1], None);
    }

    #[test]
    fn homogenize_detects_role_conflicts() {
        let (ra, mut da) = parsed("a", "temp,wpe\n1,2\n");
        let (rb, mut db) = parsed("b", "temp,wpe\n1,2\n");
        da.roles.insert("temp".into(), ColumnRole::Input);
        db.roles.insert("temp".into(), ColumnRole::Output);
        match homogenize(&schema(), &[(ra, da), (rb, db)]) {
            Err(Error::SchemaConflict { name, .. }) => assert_eq!(name, "temp"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bounds_inferred_when_undeclared() {
        let mut s = schema();
        s.inputs[0].bounds = None;
        let d = SourceFileDescriptor::new("a");
        let (raw, _) = parse_source(&d, &s, b"temp,wpe\n3,1\n9,2\n").unwrap();
        let ds = homogenize(&s, &[(raw, d)]).unwrap();
        assert_eq!(ds.inputs[0].bounds, Some([3.0, 9.0]));
    }

    proptest! {
        #[test]
        fn parsing_is_total(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
            let mut d = SourceFileDescriptor::new("fuzz");
            let _ = parse_source(&d, &schema(), &bytes);
            d.format = SourceFormat::KeyValueRecords;
            let _ = parse_source(&d, &schema(), &bytes);
        }

        #[test]
        fn parsing_text_is_total(text in "[a-z0-9,;=.\" \n]{0,300}") {
            let d = SourceFileDescriptor::new("fuzz");
            if let Ok((rows, rep)) = parse_source(&d, &schema(), text.as_bytes()) {
                prop_assert_eq!(rows.rows.len(), rep.rows_parsed);
            }
        }

        #[test]
        fn homogenize_is_associative(split in 0usize..4) {
            let srcs = vec![
                parsed("a", "temp,wpe\n1,2\n3,4\n"),
                parsed("b", "temp,pressure,wpe\n5,1,6\n"),
                parsed("c", "wpe,temp\n7,8\n"),
                parsed("d", "temp,gas,wpe\n9,Ar,10\n"),
            ];
            let all = homogenize(&schema(), &srcs).unwrap();
            let mut parts: Vec<ExperimentRow> = Vec::new();
            for chunk in [&srcs[..split], &srcs[split..]] {
                if chunk.is_empty() { continue; }
                parts.extend(homogenize(&schema(), chunk).unwrap().rows);
            }
            let strip = |rows: &[ExperimentRow]| -> Vec<(Vec<Option<f64>>, Vec<Option<f64>>, String)> {
                rows.iter().map(|r| (r.inputs.clone(), r.outputs.clone(), r.source.clone())).collect()
            };
            prop_assert_eq!(strip(&all.rows), strip(&parts));
        }
    }
}
