use std::path::Path;

use super::{DatasetSchema, Fingerprint, IngestError, Partition, RadioMap};

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| IngestError::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
}

fn parse_f64(cell: &str, line: u64, column: &str) -> Result<f64, IngestError> {
    cell.trim().parse::<f64>().map_err(|_| IngestError::Parse {
        line,
        column: column.to_string(),
        value: cell.to_string(),
    })
}

fn parse_label(cell: &str, line: u64, column: &str) -> Result<i32, IngestError> {
    let err = || IngestError::Parse {
        line,
        column: column.to_string(),
        value: cell.to_string(),
    };
    let cell = cell.trim();
    if let Ok(v) = cell.parse::<i32>() {
        return Ok(v);
    }
    // Some exports write integer labels as "2.0".
    let v = cell.parse::<f64>().map_err(|_| err())?;
    if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 {
        Ok(v as i32)
    } else {
        Err(err())
    }
}

/// Reads a fingerprint CSV with a header row.
///
/// Sentinel cells are kept verbatim. Columns not named by `schema` are
/// ignored.
pub fn load_csv(
    path: &Path,
    schema: &DatasetSchema,
    partition: Partition,
) -> Result<RadioMap, IngestError> {
    let csv_err = |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(std::io::BufReader::new(file));
    let headers = reader.headers().map_err(csv_err)?.clone();

    let ap_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.trim().starts_with(&schema.ap_prefix))
        .map(|(i, _)| i)
        .collect();
    if ap_cols.is_empty() {
        return Err(IngestError::NoApColumns {
            path: path.to_path_buf(),
            prefix: schema.ap_prefix.clone(),
        });
    }
    let ap_names: Vec<String> = ap_cols.iter().map(|&i| headers[i].trim().to_string()).collect();
    let x_col = column(&headers, &schema.x, path)?;
    let y_col = column(&headers, &schema.y, path)?;
    let floor_col = column(&headers, &schema.floor, path)?;
    let building_col = schema
        .building
        .as_deref()
        .map(|b| column(&headers, b, path))
        .transpose()?;
    let id_col = schema
        .id
        .as_deref()
        .map(|c| column(&headers, c, path))
        .transpose()?;

    let mut fingerprints = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(row as u64 + 2, |p| p.line());
        let mut rssi = Vec::with_capacity(ap_cols.len());
        for (&c, name) in ap_cols.iter().zip(&ap_names) {
            let v = parse_f64(&record[c], line, name)?;
            if v != schema.sentinel && !(super::RSSI_FLOOR_DBM..=super::RSSI_CEIL_DBM).contains(&v) {
                return Err(IngestError::OutOfRange {
                    line,
                    column: name.clone(),
                    value: v,
                });
            }
            rssi.push(v);
        }
        fingerprints.push(Fingerprint {
            id: id_col.map_or_else(|| row.to_string(), |c| record[c].trim().to_string()),
            rssi,
            x: parse_f64(&record[x_col], line, &schema.x)?,
            y: parse_f64(&record[y_col], line, &schema.y)?,
            floor: parse_label(&record[floor_col], line, &schema.floor)?,
            building: match (building_col, &schema.building) {
                (Some(c), Some(name)) => parse_label(&record[c], line, name)?,
                _ => 0,
            },
            sentinel: schema.sentinel,
        });
    }
    if fingerprints.is_empty() {
        return Err(IngestError::EmptyDataset(path.to_path_buf()));
    }
    RadioMap::new(fingerprints, ap_names, schema.sentinel, partition)
}

/// Writes `map` in canonical column order: AP columns, x, y, floor, then
/// building and id when the schema names them. Floats use the shortest
/// representation that parses back to the same bits.
pub fn write_csv(map: &RadioMap, schema: &DatasetSchema, path: &Path) -> Result<(), IngestError> {
    let csv_err = |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<&str> = map.ap_names().iter().map(String::as_str).collect();
    header.extend([schema.x.as_str(), schema.y.as_str(), schema.floor.as_str()]);
    header.extend(schema.building.as_deref());
    header.extend(schema.id.as_deref());
    writer.write_record(&header).map_err(csv_err)?;

    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for fp in map.fingerprints() {
        row.clear();
        row.extend(fp.rssi.iter().map(|v| v.to_string()));
        row.push(fp.x.to_string());
        row.push(fp.y.to_string());
        row.push(fp.floor.to_string());
        if schema.building.is_some() {
            row.push(fp.building.to_string());
        }
        if schema.id.is_some() {
            row.push(fp.id.clone());
        }
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toy_schema() -> DatasetSchema {
        DatasetSchema {
            ap_prefix: "WAP".into(),
            x: "X".into(),
            y: "Y".into(),
            floor: "FLOOR".into(),
            building: Some("BUILDINGID".into()),
            id: None,
            sentinel: 100.0,
        }
    }

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_toy_file() {
        let f = write(
            "WAP001,WAP002,WAP003,X,Y,FLOOR,BUILDINGID,USERID\n\
             -40,-70,100,1.5,2.5,0,0,7\n\
             -50,-60,-90,3,4,1.0,0,7\n",
        );
        let m = load_csv(f.path(), &toy_schema(), Partition::Train).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.ap_count(), 3);
        assert_eq!(m.sentinel_count(), 1);
        assert_eq!(m.fingerprints()[0].rssi[2], 100.0);
        assert_eq!(m.fingerprints()[1].floor, 1);
        assert_eq!(m.fingerprints()[1].id, "1");
    }

    #[test]
    fn missing_column_is_named() {
        let f = write("WAP001,X,Y,BUILDINGID\n-40,1,2,0\n");
        let err = load_csv(f.path(), &toy_schema(), Partition::Train).unwrap_err();
        assert!(matches!(&err, IngestError::MissingColumn { column, .. } if column == "FLOOR"));
    }

    #[test]
    fn non_numeric_cell_reports_line() {
        let f = write("WAP001,X,Y,FLOOR,BUILDINGID\n-40,1,2,0,0\n-4x,1,2,0,0\n");
        let err = load_csv(f.path(), &toy_schema(), Partition::Train).unwrap_err();
        assert!(matches!(&err, IngestError::Parse { line: 3, column, .. } if column == "WAP001"), "{err}");
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write("WAP001,X,Y,FLOOR,BUILDINGID\n");
        assert!(matches!(
            load_csv(f.path(), &toy_schema(), Partition::Train),
            Err(IngestError::EmptyDataset(_))
        ));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_csv(Path::new("/no/such/file.csv"), &toy_schema(), Partition::Train)
            .unwrap_err();
        assert!(err.to_string().contains("/no/such/file.csv"));
    }

    #[test]
    fn no_ap_columns() {
        let f = write("AP1,X,Y,FLOOR,BUILDINGID\n-40,1,2,0,0\n");
        assert!(matches!(
            load_csv(f.path(), &toy_schema(), Partition::Train),
            Err(IngestError::NoApColumns { .. })
        ));
    }

    #[test]
    fn export_then_reload_is_identical() {
        let f = write(
            "WAP001,WAP002,X,Y,FLOOR,BUILDINGID,SAMPLE\n\
             -40.25,100,-7345.123456789,4864850.0000001,0,2,a\n\
             -104,-3,0.1,0.2,3,1,b\n",
        );
        let mut schema = toy_schema();
        schema.id = Some("SAMPLE".into());
        let m = load_csv(f.path(), &schema, Partition::Test).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(&m, &schema, out.path()).unwrap();
        let back = load_csv(out.path(), &schema, Partition::Test).unwrap();
        assert_eq!(m, back);
    }
}
