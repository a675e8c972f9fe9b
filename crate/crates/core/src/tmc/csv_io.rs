use std::collections::BTreeMap;

use super::{parse_timestamp, CountBin, MovementKey, RowDiagnostic, SchemaMapping, TmcDataset, TmcError};

/// Header positions of every column the schema needs.
pub(super) struct ResolvedColumns {
    id: usize,
    timestamp: usize,
    location: Option<(usize, usize)>,
    movements: Vec<(MovementKey, Option<usize>)>,
}

impl ResolvedColumns {
    pub(super) fn resolve<S: AsRef<str>>(header: &[S], schema: &SchemaMapping) -> Result<Self, TmcError> {
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h.as_ref().trim() == name)
                .ok_or_else(|| TmcError::UnresolvableColumn { column: name.to_string() })
        };
        let location = match (&schema.lon_column, &schema.lat_column) {
            (Some(lon), Some(lat)) => match (find(lon), find(lat)) {
                (Ok(a), Ok(b)) => Some((a, b)),
                _ => None,
            },
            _ => None,
        };
        let mut movements = Vec::with_capacity(36);
        for key in MovementKey::all() {
            let idx = match schema.column_for(&key) {
                Some(name) => Some(find(name)?),
                None => None,
            };
            movements.push((key, idx));
        }
        Ok(ResolvedColumns { id: find(&schema.id_column)?, timestamp: find(&schema.timestamp_column)?, location, movements })
    }

    /// Build one bin from a record; the error string becomes a row diagnostic.
    pub(super) fn read_row<'a>(
        &self,
        field: impl Fn(usize) -> Option<&'a str>,
        schema: &SchemaMapping,
    ) -> Result<(CountBin, Option<(f64, f64)>), String> {
        let get = |i: usize, what: &str| field(i).map(str::trim).ok_or_else(|| format!("missing {what} field"));
        let id = get(self.id, "id")?;
        if id.is_empty() {
            return Err("empty intersection id".into());
        }
        let raw_ts = get(self.timestamp, "timestamp")?;
        let bin_start = parse_timestamp(raw_ts, schema.timestamp_format.as_deref())
            .ok_or_else(|| format!("unparseable timestamp '{raw_ts}'"))?;

        let mut counts = BTreeMap::new();
        for (key, idx) in &self.movements {
            let value = match idx {
                Some(i) => parse_count(get(*i, "count")?).map_err(|e| format!("{key}: {e}"))?,
                None => 0,
            };
            counts.insert(*key, value);
        }

        let location = self.location.and_then(|(lon_i, lat_i)| {
            let lon = field(lon_i)?.trim().parse::<f64>().ok()?;
            let lat = field(lat_i)?.trim().parse::<f64>().ok()?;
            (lon.is_finite() && lat.is_finite()).then_some((lon, lat))
        });

        Ok((
            CountBin { intersection_id: id.to_string(), bin_start, duration_s: schema.bin_seconds, counts },
            location,
        ))
    }
}

fn parse_count(raw: &str) -> Result<u32, String> {
    if raw.is_empty() {
        return Ok(0);
    }
    if let Ok(v) = raw.parse::<i64>() {
        return if v < 0 {
            Err(format!("negative count {v}"))
        } else {
            u32::try_from(v).map_err(|_| format!("count {v} too large"))
        };
    }
    match raw.parse::<f64>() {
        Ok(v) if v < 0.0 => Err(format!("negative count {raw}")),
        Ok(v) if v.fract() == 0.0 && v <= f64::from(u32::MAX) => Ok(v as u32),
        _ => Err(format!("invalid count '{raw}'")),
    }
}

/// Collects rows into a dataset, turning bad rows into diagnostics.
pub(super) struct DatasetBuilder {
    bins: Vec<CountBin>,
    locations: BTreeMap<String, (f64, f64)>,
    diagnostics: Vec<RowDiagnostic>,
}

impl DatasetBuilder {
    pub(super) fn new() -> Self {
        DatasetBuilder { bins: Vec::new(), locations: BTreeMap::new(), diagnostics: Vec::new() }
    }

    pub(super) fn push(&mut self, row: usize, result: Result<(CountBin, Option<(f64, f64)>), String>) {
        match result {
            Ok((bin, loc)) => {
                if let Some(loc) = loc {
                    self.locations.entry(bin.intersection_id.clone()).or_insert(loc);
                }
                self.bins.push(bin);
            }
            Err(message) => self.diagnostics.push(RowDiagnostic { row, message }),
        }
    }

    pub(super) fn finish(self, schema: SchemaMapping) -> TmcDataset {
        TmcDataset::new(self.bins, schema, self.locations, self.diagnostics)
    }
}

/// Parse a header-driven, comma-separated count file.
pub fn parse_tmc_csv(text: &str, schema: &SchemaMapping) -> Result<TmcDataset, TmcError> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| TmcError::Csv(e.to_string()))?.clone();
    if header.is_empty() || header.iter().all(|h| h.trim().is_empty()) {
        return Err(TmcError::MissingHeader);
    }
    let header: Vec<String> = header.iter().map(|h| h.trim_start_matches('\u{feff}').to_string()).collect();
    let columns = ResolvedColumns::resolve(&header, schema)?;

    let mut builder = DatasetBuilder::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        match record {
            Ok(rec) => builder.push(row, columns.read_row(|idx| rec.get(idx), schema)),
            Err(e) => builder.push(row, Err(format!("unreadable record: {e}"))),
        }
    }
    Ok(builder.finish(schema.clone()))
}

/// Write bins back out in `schema`'s layout. Absent movements are omitted.
pub fn write_tmc_csv(ds: &TmcDataset, schema: &SchemaMapping) -> Result<String, TmcError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let with_location = schema.lon_column.is_some() && schema.lat_column.is_some() && !ds.locations.is_empty();
    let movement_columns: Vec<(MovementKey, &str)> =
        MovementKey::all().filter_map(|k| schema.column_for(&k).map(|c| (k, c))).collect();

    let mut header = vec![schema.id_column.as_str(), schema.timestamp_column.as_str()];
    if with_location {
        header.push(schema.lon_column.as_deref().unwrap_or_default());
        header.push(schema.lat_column.as_deref().unwrap_or_default());
    }
    header.extend(movement_columns.iter().map(|(_, c)| *c));
    writer.write_record(&header).map_err(|e| TmcError::Csv(e.to_string()))?;

    let format = schema.timestamp_format.as_deref().unwrap_or("%Y-%m-%dT%H:%M:%S");
    for bin in &ds.bins {
        let mut row = vec![bin.intersection_id.clone(), bin.bin_start.format(format).to_string()];
        if with_location {
            let (lon, lat) = ds.locations.get(&bin.intersection_id).map_or((String::new(), String::new()), |(a, b)| {
                (a.to_string(), b.to_string())
            });
            row.push(lon);
            row.push(lat);
        }
        row.extend(movement_columns.iter().map(|(k, _)| bin.count(k).to_string()));
        writer.write_record(&row).map_err(|e| TmcError::Csv(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| TmcError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| TmcError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapper::Cardinal;
    use crate::tmc::{Turn, VehicleClass};
    use proptest::prelude::*;

    fn header() -> String {
        let mut cols = vec!["intersection_id".to_string(), "bin_start".to_string()];
        cols.extend(MovementKey::all().map(|k| k.to_string()));
        cols.join(",")
    }

    fn row(id: &str, ts: &str, value: impl Fn(MovementKey) -> i64) -> String {
        let mut cols = vec![id.to_string(), ts.to_string()];
        cols.extend(MovementKey::all().map(|k| value(k).to_string()));
        cols.join(",")
    }

    #[test]
    fn header_only_is_empty_dataset() {
        let ds = parse_tmc_csv(&format!("{}\n", header()), &SchemaMapping::canonical()).unwrap();
        assert!(ds.bins.is_empty());
        assert!(ds.diagnostics.is_empty());
    }

    #[test]
    fn empty_text_has_no_header() {
        assert!(matches!(parse_tmc_csv("", &SchemaMapping::canonical()), Err(TmcError::MissingHeader)));
    }

    #[test]
    fn missing_mandatory_column() {
        let err = parse_tmc_csv("foo,bar\n1,2\n", &SchemaMapping::canonical()).unwrap_err();
        assert!(matches!(err, TmcError::UnresolvableColumn { .. }));
    }

    #[test]
    fn negative_count_becomes_diagnostic() {
        let nl_car = MovementKey::new(Cardinal::North, Turn::Left, VehicleClass::Car);
        let text = format!(
            "{}\n{}\n{}\n",
            header(),
            row("1", "2024-05-01T08:00:00", |k| if k == nl_car { -4 } else { 1 }),
            row("1", "2024-05-01T08:15:00", |_| 2),
        );
        let ds = parse_tmc_csv(&text, &SchemaMapping::canonical()).unwrap();
        assert_eq!(ds.bins.len(), 1);
        assert_eq!(ds.diagnostics.len(), 1);
        assert_eq!(ds.diagnostics[0].row, 1);
        assert!(ds.diagnostics[0].message.contains("negative"));
    }

    #[test]
    fn short_row_becomes_diagnostic() {
        let text = format!("{}\n1,2024-05-01T08:00:00,3\n", header());
        let ds = parse_tmc_csv(&text, &SchemaMapping::canonical()).unwrap();
        assert!(ds.bins.is_empty());
        assert_eq!(ds.diagnostics.len(), 1);
    }

    proptest! {
        #[test]
        fn reserialization_preserves_counts(
            counts in proptest::collection::vec(proptest::collection::vec(0u32..2000, 36), 1..6)
        ) {
            let mut lines = vec![header()];
            for (i, c) in counts.iter().enumerate() {
                let ts = format!("2024-05-01T{:02}:{:02}:00", 8 + i / 4, (i % 4) * 15);
                let keys: Vec<MovementKey> = MovementKey::all().collect();
                lines.push(row("77", &ts, |k| i64::from(c[keys.iter().position(|x| *x == k).unwrap()])));
            }
            let schema = SchemaMapping::canonical();
            let ds = parse_tmc_csv(&lines.join("\n"), &schema).unwrap();
            let again = parse_tmc_csv(&write_tmc_csv(&ds, &schema).unwrap(), &schema).unwrap();
            prop_assert_eq!(ds.bins, again.bins);
        }
    }
}
