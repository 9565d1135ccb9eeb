//! Canonical JSON documents for specs, configurations and sub-configurations.
//!
//! Output is compact with object keys sorted, site lists sorted and rules in
//! canonical multiset order, so equal values serialize to identical bytes.

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use super::{Configuration, ModelError, SandpileSpec, SpecDocument, SubConfiguration};

fn parse_value(text: &str) -> Result<Value, ModelError> {
    serde_json::from_str(text).map_err(|e| ModelError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn schema(field: &str, message: impl Into<String>) -> ModelError {
    ModelError::Schema {
        field: field.to_string(),
        message: message.into(),
    }
}

fn as_object<'a>(value: &'a Value, field: &str) -> Result<&'a Map<String, Value>, ModelError> {
    value.as_object().ok_or_else(|| schema(field, "expected an object"))
}

fn as_string(value: &Value, field: &str) -> Result<String, ModelError> {
    value
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| schema(field, "expected a string"))
}

fn as_string_list(value: &Value, field: &str) -> Result<Vec<String>, ModelError> {
    value
        .as_array()
        .ok_or_else(|| schema(field, "expected an array of strings"))?
        .iter()
        .map(|v| as_string(v, field))
        .collect()
}

fn as_count(value: &Value, field: &str) -> Result<u32, ModelError> {
    value
        .as_u64()
        .and_then(|n| u32::try_from(n).ok())
        .ok_or_else(|| schema(field, format!("expected a natural number, found {value}")))
}

fn check_keys(obj: &Map<String, Value>, required: &[&str], optional: &[&str]) -> Result<(), ModelError> {
    for key in required {
        if !obj.contains_key(*key) {
            return Err(schema(key, "missing field"));
        }
    }
    for key in obj.keys() {
        if !required.contains(&key.as_str()) && !optional.contains(&key.as_str()) {
            return Err(schema(key, "unknown field"));
        }
    }
    Ok(())
}

fn height_map(value: &Value, field: &str) -> Result<BTreeMap<String, u32>, ModelError> {
    as_object(value, field)?
        .iter()
        .map(|(k, v)| Ok((k.clone(), as_count(v, &format!("{field}.{k}"))?)))
        .collect()
}

impl SpecDocument {
    /// Parses a sandpile document. Structural problems (wrong types, missing
    /// or extra keys, capacity/rules not covering exactly the listed sites)
    /// are schema errors; invariant checks are left to [`super::validate`].
    pub fn from_json(text: &str) -> Result<SpecDocument, ModelError> {
        let value = parse_value(text)?;
        let obj = as_object(&value, "document")?;
        check_keys(obj, &["name", "sites", "capacity", "rules"], &["metadata"])?;
        let name = as_string(&obj["name"], "name")?;
        let sites = as_string_list(&obj["sites"], "sites")?;
        let capacity: BTreeMap<String, u32> = as_object(&obj["capacity"], "capacity")?
            .iter()
            .map(|(k, v)| Ok((k.clone(), as_count(v, &format!("capacity.{k}"))?)))
            .collect::<Result<_, ModelError>>()?;
        let mut rules = BTreeMap::new();
        for (site, list) in as_object(&obj["rules"], "rules")? {
            let field = format!("rules.{site}");
            let list = list
                .as_array()
                .ok_or_else(|| schema(&field, "expected an array of rules"))?
                .iter()
                .map(|t| as_string_list(t, &field))
                .collect::<Result<Vec<_>, _>>()?;
            rules.insert(site.clone(), list);
        }
        let capacity_keys: Vec<&String> = capacity.keys().collect();
        let rule_keys: Vec<&String> = rules.keys().collect();
        for (field, keys) in [("capacity", capacity_keys), ("rules", rule_keys)] {
            for site in &sites {
                if !keys.contains(&site) {
                    return Err(schema(field, format!("omits site {site}")));
                }
            }
            for key in keys {
                if !sites.contains(key) {
                    return Err(schema(field, format!("names unknown site {key}")));
                }
            }
        }
        let metadata = obj.get("metadata").cloned();
        Ok(SpecDocument { name, sites, capacity, rules, metadata })
    }

    /// Canonical rendering of the document as given (sites sorted, rules
    /// sorted), without validating it.
    pub fn to_value(&self) -> Value {
        let mut sites = self.sites.clone();
        sites.sort();
        let rules: Map<String, Value> = self
            .rules
            .iter()
            .map(|(site, list)| {
                let mut list: Vec<Vec<String>> = list
                    .iter()
                    .map(|t| {
                        let mut t = t.clone();
                        t.sort();
                        t
                    })
                    .collect();
                list.sort();
                list.dedup();
                (site.clone(), serde_json::to_value(list).expect("string lists serialize"))
            })
            .collect();
        let mut obj = Map::new();
        obj.insert("name".into(), Value::String(self.name.clone()));
        obj.insert("sites".into(), serde_json::to_value(sites).expect("strings serialize"));
        obj.insert(
            "capacity".into(),
            serde_json::to_value(&self.capacity).expect("counts serialize"),
        );
        obj.insert("rules".into(), Value::Object(rules));
        if let Some(meta) = &self.metadata {
            obj.insert("metadata".into(), meta.clone());
        }
        Value::Object(obj)
    }
}

impl SandpileSpec {
    /// Parses and validates a sandpile document.
    pub fn from_json(text: &str) -> Result<SandpileSpec, ModelError> {
        SandpileSpec::from_document(SpecDocument::from_json(text)?)
    }

    pub fn to_value(&self) -> Value {
        self.to_document().to_value()
    }

    /// Canonical single-line JSON.
    pub fn to_json(&self) -> String {
        self.to_value().to_string()
    }
}

impl Configuration {
    /// Parses `{"heights": {site: n, ...}}`; every site must be present.
    pub fn from_json(spec: &SandpileSpec, text: &str) -> Result<Configuration, ModelError> {
        let value = parse_value(text)?;
        Configuration::from_value(spec, &value)
    }

    pub fn from_value(spec: &SandpileSpec, value: &Value) -> Result<Configuration, ModelError> {
        let obj = as_object(value, "document")?;
        check_keys(obj, &["heights"], &[])?;
        let map = height_map(&obj["heights"], "heights")?;
        for site in map.keys() {
            if spec.site_index(site).is_none() {
                return Err(schema("heights", format!("names unknown site {site}")));
            }
        }
        Configuration::from_map(spec, &map)
    }

    pub fn to_value(&self, spec: &SandpileSpec) -> Value {
        let mut obj = Map::new();
        obj.insert(
            "heights".into(),
            serde_json::to_value(self.to_map(spec)).expect("counts serialize"),
        );
        Value::Object(obj)
    }

    pub fn to_json(&self, spec: &SandpileSpec) -> String {
        self.to_value(spec).to_string()
    }
}

impl SubConfiguration {
    /// Parses `{"region_heights": {site: n, ...}}`.
    pub fn from_json(text: &str) -> Result<SubConfiguration, ModelError> {
        let value = parse_value(text)?;
        SubConfiguration::from_value(&value)
    }

    pub fn from_value(value: &Value) -> Result<SubConfiguration, ModelError> {
        let obj = as_object(value, "document")?;
        check_keys(obj, &["region_heights"], &[])?;
        SubConfiguration::new(height_map(&obj["region_heights"], "region_heights")?)
    }

    pub fn to_value(&self) -> Value {
        let mut obj = Map::new();
        obj.insert(
            "region_heights".into(),
            serde_json::to_value(self.heights()).expect("counts serialize"),
        );
        Value::Object(obj)
    }

    pub fn to_json(&self) -> String {
        self.to_value().to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{"name":"pair","sites":["b","a"],
        "capacity":{"a":2,"b":1},
        "rules":{"a":[["b"],[]],"b":[[]]}}"#;

    #[test]
    fn parse_error_carries_position() {
        let err = SpecDocument::from_json("{\"name\": \n  nope}").unwrap_err();
        match err {
            ModelError::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn capacity_must_cover_every_site() {
        let text = r#"{"name":"x","sites":["a","b"],"capacity":{"a":1},"rules":{"a":[[]],"b":[[]]}}"#;
        match SpecDocument::from_json(text).unwrap_err() {
            ModelError::Schema { field, message } => {
                assert_eq!(field, "capacity");
                assert!(message.contains('b'));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_and_missing_fields_are_schema_errors() {
        let text = r#"{"name":"x","sites":[],"capacity":{},"rules":{},"extra":1}"#;
        assert!(matches!(
            SpecDocument::from_json(text),
            Err(ModelError::Schema { field, .. }) if field == "extra"
        ));
        let text = r#"{"name":"x","sites":[],"rules":{}}"#;
        assert!(matches!(
            SpecDocument::from_json(text),
            Err(ModelError::Schema { field, .. }) if field == "capacity"
        ));
        let text = r#"{"name":"x","sites":["a"],"capacity":{"a":-1},"rules":{"a":[[]]}}"#;
        assert!(matches!(
            SpecDocument::from_json(text),
            Err(ModelError::Schema { field, .. }) if field == "capacity.a"
        ));
    }

    #[test]
    fn canonical_output_sorts_everything() {
        let spec = SandpileSpec::from_json(SMALL).unwrap();
        assert_eq!(
            spec.to_json(),
            r#"{"capacity":{"a":2,"b":1},"name":"pair","rules":{"a":[[],["b"]],"b":[[]]},"sites":["a","b"]}"#
        );
        assert_eq!(SandpileSpec::from_json(&spec.to_json()).unwrap(), spec);
    }

    #[test]
    fn configuration_documents() {
        let spec = SandpileSpec::from_json(SMALL).unwrap();
        let c = Configuration::from_json(&spec, r#"{"heights":{"b":0,"a":1}}"#).unwrap();
        assert_eq!(c.heights(), &[1, 0]);
        assert_eq!(c.to_json(&spec), r#"{"heights":{"a":1,"b":0}}"#);
        assert!(matches!(
            Configuration::from_json(&spec, r#"{"heights":{"a":1}}"#),
            Err(ModelError::Schema { .. })
        ));
        assert!(matches!(
            Configuration::from_json(&spec, r#"{"heights":{"a":1,"b":0,"z":0}}"#),
            Err(ModelError::Schema { .. })
        ));
    }

    #[test]
    fn sub_configuration_documents() {
        let sub = SubConfiguration::from_json(r#"{"region_heights":{"x":0,"a":1}}"#).unwrap();
        assert_eq!(sub.to_json(), r#"{"region_heights":{"a":1,"x":0}}"#);
        assert!(SubConfiguration::from_json(r#"{"region_heights":{}}"#).is_err());
    }
}
