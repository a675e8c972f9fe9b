//! City of Toronto Open Data (CKAN datastore) client.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::csv_io::{DatasetBuilder, ResolvedColumns};
use super::{SchemaMapping, TmcDataset, TmcError};
use crate::capability::HttpFetcher;

/// Endpoint settings. The resource id names the datastore table holding the
/// turning movement counts; check it against the portal when it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TorontoApiConfig {
    pub base_url: String,
    pub resource_id: String,
    pub page_size: usize,
}

impl Default for TorontoApiConfig {
    fn default() -> Self {
        TorontoApiConfig {
            base_url: "https://ckan0.cf.opendata.inter.prod-toronto.ca".into(),
            resource_id: "tmc_raw_data_2020_2029".into(),
            page_size: 1000,
        }
    }
}

impl TorontoApiConfig {
    fn page_url(&self, id_column: &str, ids: &[String], offset: usize) -> Result<String, TmcError> {
        let filters = serde_json::json!({ id_column: ids }).to_string();
        let limit = self.page_size.to_string();
        let offset = offset.to_string();
        let base = format!("{}/api/3/action/datastore_search", self.base_url.trim_end_matches('/'));
        url::Url::parse_with_params(
            &base,
            [
                ("resource_id", self.resource_id.as_str()),
                ("limit", limit.as_str()),
                ("offset", offset.as_str()),
                ("filters", filters.as_str()),
            ],
        )
        .map(String::from)
        .map_err(|e| TmcError::Transport(format!("bad base url '{}': {e}", self.base_url)))
    }
}

#[derive(Debug, Deserialize)]
struct CkanEnvelope {
    success: bool,
    #[serde(default)]
    result: Option<CkanResult>,
    #[serde(default)]
    error: Option<Value>,
}

#[derive(Debug, Deserialize)]
struct CkanResult {
    #[serde(default)]
    records: Vec<serde_json::Map<String, Value>>,
    #[serde(default)]
    total: Option<usize>,
    #[serde(default)]
    fields: Vec<CkanField>,
}

#[derive(Debug, Deserialize)]
struct CkanField {
    id: String,
}

fn cell_text(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Download all count records for `ids`, following pagination until the
/// datastore reports no more rows.
pub fn fetch_toronto_tmc(
    ids: &[String],
    http: &dyn HttpFetcher,
    config: &TorontoApiConfig,
    schema: &SchemaMapping,
) -> Result<TmcDataset, TmcError> {
    schema.validate()?;
    if config.page_size == 0 {
        return Err(TmcError::InvalidSchema("page_size must be positive".into()));
    }
    let mut builder = DatasetBuilder::new();
    let mut offset = 0usize;
    let mut row = 0usize;
    let mut columns: Option<(Vec<String>, ResolvedColumns)> = None;

    loop {
        let url = config.page_url(&schema.id_column, ids, offset)?;
        let resp = http.get(&url).map_err(|e| TmcError::Transport(e.to_string()))?;
        if !resp.is_success() {
            return Err(TmcError::HttpStatus { status: resp.status, url });
        }
        let envelope: CkanEnvelope =
            serde_json::from_slice(&resp.body).map_err(|e| TmcError::Payload(e.to_string()))?;
        if !envelope.success {
            return Err(TmcError::Payload(format!(
                "request rejected: {}",
                envelope.error.map(|e| e.to_string()).unwrap_or_default()
            )));
        }
        let result = envelope.result.ok_or_else(|| TmcError::Payload("missing result".into()))?;

        if columns.is_none() {
            let header: Vec<String> = if !result.fields.is_empty() {
                result.fields.iter().map(|f| f.id.clone()).collect()
            } else if let Some(first) = result.records.first() {
                first.keys().cloned().collect()
            } else {
                Vec::new()
            };
            if !header.is_empty() {
                let resolved = ResolvedColumns::resolve(&header, schema).map_err(|e| match e {
                    super::TmcError::UnresolvableColumn { column } => TmcError::SchemaDrift { column },
                    other => other,
                })?;
                columns = Some((header, resolved));
            }
        }

        let page_len = result.records.len();
        if let Some((header, resolved)) = &columns {
            for record in &result.records {
                row += 1;
                let cells: Vec<Option<String>> = header.iter().map(|h| record.get(h).map(cell_text)).collect();
                builder.push(row, resolved.read_row(|i| cells.get(i).and_then(|c| c.as_deref()), schema));
            }
        }

        offset += page_len;
        let exhausted = page_len == 0
            || page_len < config.page_size
            || result.total.is_some_and(|total| offset >= total);
        if exhausted {
            break;
        }
    }
    Ok(builder.finish(schema.clone()))
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;
    use crate::capability::{HttpResponse, TransportError};
    use crate::tmc::MovementKey;

    /// Serves canned bodies in order and records requested URLs.
    struct Canned {
        responses: Mutex<Vec<HttpResponse>>,
        urls: Mutex<Vec<String>>,
    }

    impl Canned {
        fn new(responses: Vec<HttpResponse>) -> Self {
            Canned { responses: Mutex::new(responses), urls: Mutex::new(Vec::new()) }
        }
    }

    impl HttpFetcher for Canned {
        fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
            self.urls.lock().unwrap().push(url.to_string());
            let mut r = self.responses.lock().unwrap();
            if r.is_empty() {
                return Err(TransportError { url: url.into(), message: "no more canned responses".into() });
            }
            Ok(r.remove(0))
        }
    }

    fn record(schema: &SchemaMapping, id: &str, start: &str, nl_car: u32) -> Value {
        let mut m = serde_json::Map::new();
        m.insert(schema.id_column.clone(), Value::from(id.parse::<i64>().unwrap()));
        m.insert(schema.timestamp_column.clone(), Value::from(start));
        m.insert("lng".into(), Value::from(-79.3832));
        m.insert("lat".into(), Value::from(43.6532));
        for key in MovementKey::all() {
            let v = if key.to_string() == "NL_car" { nl_car } else { 1 };
            m.insert(schema.column_for(&key).unwrap().to_string(), Value::from(v));
        }
        Value::Object(m)
    }

    fn page(records: Vec<Value>, total: usize) -> HttpResponse {
        let body = serde_json::json!({"success": true, "result": {"records": records, "total": total}});
        HttpResponse { status: 200, body: body.to_string().into_bytes() }
    }

    #[test]
    fn follows_pagination() {
        let schema = SchemaMapping::toronto();
        let config = TorontoApiConfig { page_size: 2, ..Default::default() };
        let http = Canned::new(vec![
            page(vec![record(&schema, "13463414", "2023-10-11T08:00:00", 150), record(&schema, "13463414", "2023-10-11T08:15:00", 3)], 3),
            page(vec![record(&schema, "13463414", "2023-10-11T08:30:00", 4)], 3),
        ]);
        let ds = fetch_toronto_tmc(&["13463414".into()], &http, &config, &schema).unwrap();
        assert_eq!(ds.bins.len(), 3);
        assert_eq!(ds.bins[0].count(&"NL_car".parse().unwrap()), 150);
        assert_eq!(ds.locations["13463414"], (-79.3832, 43.6532));
        let urls = http.urls.lock().unwrap();
        assert_eq!(urls.len(), 2);
        assert!(urls[1].contains("offset=2"));
        assert!(urls[0].contains("resource_id=tmc_raw_data_2020_2029"));
    }

    #[test]
    fn server_error_status() {
        let http = Canned::new(vec![HttpResponse { status: 500, body: b"boom".to_vec() }]);
        let err = fetch_toronto_tmc(&["1".into()], &http, &TorontoApiConfig::default(), &SchemaMapping::toronto())
            .unwrap_err();
        assert!(matches!(err, TmcError::HttpStatus { status: 500, .. }));
    }

    #[test]
    fn missing_id_column_is_schema_drift() {
        let schema = SchemaMapping::toronto();
        let mut rec = record(&schema, "1", "2023-10-11T08:00:00", 1);
        rec.as_object_mut().unwrap().remove("centreline_id");
        let http = Canned::new(vec![page(vec![rec], 1)]);
        let err = fetch_toronto_tmc(&["1".into()], &http, &TorontoApiConfig::default(), &schema).unwrap_err();
        assert!(matches!(err, TmcError::SchemaDrift { column } if column == "centreline_id"));
    }

    #[test]
    fn transport_failure() {
        let http = Canned::new(vec![]);
        let err = fetch_toronto_tmc(&["1".into()], &http, &TorontoApiConfig::default(), &SchemaMapping::toronto())
            .unwrap_err();
        assert!(matches!(err, TmcError::Transport(_)));
    }
}
