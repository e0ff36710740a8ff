//! CSV and JSON artifacts.
//!
//! Coordinates are written with 17 significant digits so every file
//! round-trips exactly. Charge files use the header
//! `entity_id,class_id,kind,x0,...` with `kind` either `sample` or `proxy`;
//! point files use `x0,...`.

use std::fs;
use std::io::Write;
use std::path::Path;

use pfml_core::field::{ChargeEntity, ChargeSnapshot, EntityKind};
use pfml_core::format_sig17;
use serde::Serialize;

use crate::pipeline::RunError;

fn coord_header(dim: usize) -> String {
    (0..dim).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",")
}

fn coords(x: &[f64]) -> String {
    x.iter().map(|&v| format_sig17(v)).collect::<Vec<_>>().join(",")
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), RunError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| RunError::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifacts serialize");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn charges_csv(entities: &[ChargeEntity]) -> Vec<u8> {
    let dim = entities.first().map_or(0, |e| e.position.len());
    let mut out = Vec::new();
    writeln!(out, "entity_id,class_id,kind,{}", coord_header(dim)).unwrap();
    for e in entities {
        let kind = match e.kind {
            EntityKind::Sample => "sample",
            EntityKind::Proxy => "proxy",
        };
        writeln!(out, "{},{},{kind},{}", e.entity_id, e.class_id, coords(&e.position)).unwrap();
    }
    out
}

/// `id,label,x0,...` rows.
pub fn labeled_points_csv(points: &[Vec<f64>], labels: &[usize]) -> Vec<u8> {
    let dim = points.first().map_or(0, Vec::len);
    let mut out = Vec::new();
    writeln!(out, "id,label,{}", coord_header(dim)).unwrap();
    for (i, (p, l)) in points.iter().zip(labels).enumerate() {
        writeln!(out, "{i},{l},{}", coords(p)).unwrap();
    }
    out
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<(usize, Vec<String>)>), RunError> {
    let text = fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| RunError::input(path, 1, "missing header"))?;
    let header: Vec<String> = header.trim().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|(i, l)| (i + 1, l.trim().split(',').map(str::to_string).collect()))
        .collect();
    Ok((header, rows))
}

fn parse_coords(path: &Path, line: usize, fields: &[String]) -> Result<Vec<f64>, RunError> {
    fields
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| RunError::input(path, line, format!("bad coordinate {s:?}")))
        })
        .collect()
}

fn check_coord_header(path: &Path, cols: &[String]) -> Result<(), RunError> {
    if cols.is_empty() || cols.iter().enumerate().any(|(i, c)| *c != format!("x{i}")) {
        return Err(RunError::input(path, 1, format!("expected columns x0,x1,..., got {cols:?}")));
    }
    Ok(())
}

/// Reads a charge file. The class count is one past the largest class id and
/// every class must own the same number of proxies.
pub fn read_charges(path: &Path) -> Result<ChargeSnapshot, RunError> {
    let (header, rows) = read_rows(path)?;
    if header.len() < 4 || header[..3] != ["entity_id", "class_id", "kind"] {
        return Err(RunError::input(path, 1, format!("unexpected header {header:?}")));
    }
    check_coord_header(path, &header[3..])?;
    let dim = header.len() - 3;
    let mut entities = Vec::with_capacity(rows.len());
    for (line, fields) in rows {
        if fields.len() != header.len() {
            return Err(RunError::input(
                path,
                line,
                format!("expected {} fields, got {}", header.len(), fields.len()),
            ));
        }
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| RunError::input(path, line, format!("{s:?}: {e}")))
        };
        let kind = match fields[2].as_str() {
            "sample" => EntityKind::Sample,
            "proxy" => EntityKind::Proxy,
            other => return Err(RunError::input(path, line, format!("unknown kind {other:?}"))),
        };
        entities.push(ChargeEntity::new(
            int(&fields[0])?,
            int(&fields[1])?,
            kind,
            parse_coords(path, line, &fields[3..])?,
        ));
    }
    let num_classes = entities.iter().map(|e| e.class_id + 1).max().unwrap_or(0);
    let proxies_per_class = entities
        .iter()
        .filter(|e| e.kind == EntityKind::Proxy && e.class_id == 0)
        .count();
    ChargeSnapshot::new(dim, num_classes, proxies_per_class, entities)
        .map_err(|e| RunError::input(path, 0, e.to_string()))
}

/// Reads a point file with columns `x0,...`.
pub fn read_points(path: &Path) -> Result<Vec<Vec<f64>>, RunError> {
    let (header, rows) = read_rows(path)?;
    check_coord_header(path, &header)?;
    rows.into_iter()
        .map(|(line, fields)| {
            if fields.len() != header.len() {
                return Err(RunError::input(
                    path,
                    line,
                    format!("expected {} fields, got {}", header.len(), fields.len()),
                ));
            }
            parse_coords(path, line, &fields)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charges_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let entities = vec![
            ChargeEntity::new(0, 0, EntityKind::Sample, vec![0.1, -1.0 / 3.0]),
            ChargeEntity::new(1, 1, EntityKind::Sample, vec![1e-17, 2.5]),
            ChargeEntity::new(2, 0, EntityKind::Proxy, vec![0.7, 0.0]),
            ChargeEntity::new(3, 1, EntityKind::Proxy, vec![-0.2, 0.3]),
        ];
        write_file(&path, &charges_csv(&entities)).unwrap();
        let snap = read_charges(&path).unwrap();
        assert_eq!(snap.entities(), &entities[..]);
        assert_eq!(snap.proxies_per_class(), 1);
    }

    #[test]
    fn malformed_files_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_file(&path, b"x0,x1\n1,2\n3,oops\n").unwrap();
        let err = read_points(&path).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
        write_file(&path, b"a,b\n1,2\n").unwrap();
        assert!(read_points(&path).is_err());
    }
}
