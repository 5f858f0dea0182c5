//! JSON wire format. Coordinates travel as `"x, y"` strings and digests as
//! lowercase hex.

use std::collections::BTreeSet;

use super::{Inventory, InventoryError, ObjectEntry};

fn format_pair(x: f64, y: f64) -> String {
    format!("{x}, {y}")
}

fn parse_pair(text: &str) -> Result<(f64, f64), String> {
    let mut parts = text.split(',');
    let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(format!("expected \"x, y\", got {text:?}"));
    };
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("malformed coordinate component {:?} in {text:?}", s.trim()))
    };
    Ok((num(a)?, num(b)?))
}

pub(crate) mod coord_text {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::model::Coord;

    pub fn serialize<S: Serializer>(c: &Coord, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_pair(c.x, c.y))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Coord, D::Error> {
        let text = String::deserialize(d)?;
        let (x, y) = super::parse_pair(&text).map_err(serde::de::Error::custom)?;
        Ok(Coord::new(x, y))
    }
}

pub(crate) mod region_text {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::model::RegionCoord;

    pub fn serialize<S: Serializer>(c: &RegionCoord, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_pair(c.x, c.y))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<RegionCoord, D::Error> {
        let text = String::deserialize(d)?;
        let (x, y) = super::parse_pair(&text).map_err(serde::de::Error::custom)?;
        Ok(RegionCoord { x, y })
    }
}

fn parse_error(err: serde_path_to_error::Error<serde_json::Error>) -> InventoryError {
    let path = err.path().to_string();
    InventoryError::Parse { path, message: err.into_inner().to_string() }
}

pub fn serialize_inventory(inv: &Inventory) -> String {
    serde_json::to_string_pretty(inv).expect("inventory serialization is infallible")
}

pub fn serialize_object(obj: &ObjectEntry) -> String {
    serde_json::to_string_pretty(obj).expect("object serialization is infallible")
}

pub fn parse_inventory(text: &str) -> Result<Inventory, InventoryError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let inv: Inventory = serde_path_to_error::deserialize(de).map_err(parse_error)?;
    let mut seen = BTreeSet::new();
    for (i, obj) in inv.objects.iter().enumerate() {
        if !seen.insert(&obj.oid) {
            return Err(InventoryError::DuplicateObject { oid: obj.oid.to_string(), path: format!("Object[{i}].OID") });
        }
    }
    Ok(inv)
}

pub fn parse_object(text: &str) -> Result<ObjectEntry, InventoryError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(parse_error)
}
