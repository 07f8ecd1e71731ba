//! Flat binary field files, CSV export and attribution provenance sidecars.
//!
//! Binary layout, little-endian throughout:
//!
//! ```text
//! magic    "GVFT"          4 bytes
//! version  u32
//! n_vars   u32, n_lat u32, n_lon u32
//! timestamp i64
//! lat_min, lat_max, lon_min, lon_max  f64
//! per variable: name length u32, UTF-8 name, mean f64, std f64
//! payload  n_vars * n_lat * n_lon f64, variable-major then row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::attribution::{AttributionMap, Provenance};
use crate::error::{Error, Result};
use crate::grid::{Climatology, FieldTensor, GridConfig, GridSpec, VariableSpec};

pub const MAGIC: &[u8; 4] = b"GVFT";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_field<W: Write>(w: &mut W, field: &FieldTensor) -> Result<()> {
    let g = field.grid();
    let (n_vars, n_lat, n_lon) = g.shape();
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for d in [n_vars, n_lat, n_lon] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&field.timestamp().to_le_bytes())?;
    let (a, b, c, d) = g.bounds();
    for x in [a, b, c, d] {
        w.write_all(&x.to_le_bytes())?;
    }
    for v in g.variables() {
        w.write_all(&(v.name.len() as u32).to_le_bytes())?;
        w.write_all(v.name.as_bytes())?;
        w.write_all(&v.mean.to_le_bytes())?;
        w.write_all(&v.std.to_le_bytes())?;
    }
    for x in field.values() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated field file: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

/// Reads a field together with the grid described by its header.
pub fn read_field<R: Read>(r: &mut R) -> Result<FieldTensor> {
    if &read_array::<4, _>(r)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let n_vars = read_u32(r)? as usize;
    let n_lat = read_u32(r)? as usize;
    let n_lon = read_u32(r)? as usize;
    let timestamp = i64::from_le_bytes(read_array(r)?);
    let (lat_min, lat_max, lon_min, lon_max) = (read_f64(r)?, read_f64(r)?, read_f64(r)?, read_f64(r)?);
    let mut variables = Vec::with_capacity(n_vars.min(1024));
    for _ in 0..n_vars {
        let len = read_u32(r)? as usize;
        if len > 4096 {
            return Err(Error::Format("variable name too long".into()));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Format(format!("truncated field file: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("variable name is not UTF-8".into()))?;
        let (mean, std) = (read_f64(r)?, read_f64(r)?);
        variables.push(VariableSpec { name, mean, std });
    }
    let grid = Arc::new(GridSpec::new(&GridConfig {
        n_lat,
        n_lon,
        lat_min,
        lat_max,
        lon_min,
        lon_max,
        variables,
    })?);
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        values.push(read_f64(r)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    FieldTensor::from_values(&grid, values, timestamp)
}

/// Reads a field and checks that it lives on `grid`; the result shares `grid`.
pub fn read_field_on<R: Read>(r: &mut R, grid: &Arc<GridSpec>) -> Result<FieldTensor> {
    let f = read_field(r)?;
    if f.grid().as_ref() != grid.as_ref() {
        return Err(Error::Format("field file was written on a different grid".into()));
    }
    let ts = f.timestamp();
    FieldTensor::from_values(grid, f.into_values(), ts)
}

pub fn save_field(path: &Path, field: &FieldTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(&mut w, field)?;
    w.flush()?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<FieldTensor> {
    read_field(&mut BufReader::new(File::open(path)?))
}

pub fn save_climatology(path: &Path, clim: &Climatology) -> Result<()> {
    save_field(path, clim.field())
}

pub fn load_climatology(path: &Path) -> Result<Climatology> {
    Climatology::new(load_field(path)?)
}

/// One row per value: `variable,lat_idx,lon_idx,lat,lon,value`.
pub fn write_field_csv<W: Write>(w: &mut W, field: &FieldTensor) -> Result<()> {
    let g = field.grid();
    writeln!(w, "variable,lat_idx,lon_idx,lat,lon,value")?;
    for (v, spec) in g.variables().iter().enumerate() {
        for i in 0..g.n_lat() {
            for j in 0..g.n_lon() {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    spec.name,
                    i,
                    j,
                    g.lat(i),
                    g.lon(j),
                    field.get(v, i, j)
                )?;
            }
        }
    }
    Ok(())
}

/// Attribution scores go to `<stem>.bin` and their provenance to `<stem>.json`.
pub fn save_attribution(dir: &Path, stem: &str, map: &AttributionMap) -> Result<()> {
    save_field(&dir.join(format!("{stem}.bin")), map.scores())?;
    let json = serde_json::to_string_pretty(map.provenance()).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
    Ok(())
}

pub fn load_attribution(dir: &Path, stem: &str) -> Result<AttributionMap> {
    let scores = load_field(&dir.join(format!("{stem}.bin")))?;
    let text = std::fs::read_to_string(dir.join(format!("{stem}.json")))?;
    let provenance: Provenance = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    AttributionMap::new(scores, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{attribute, AttributionConfig};
    use crate::grid::{make_grid, named_location, TargetSpec};
    use crate::model::make_linear_model;
    use crate::synth::synth_fields;

    fn small() -> (Arc<GridSpec>, Vec<FieldTensor>, Climatology) {
        let g = make_grid(&GridConfig::with_dims(6, 7, 3)).unwrap();
        let (f, c) = synth_fields(3, &g, 2).unwrap();
        (g, f, c)
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let (g, fields, clim) = small();
        let f = fields[1].clone().with_timestamp(-42);
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        let back = read_field(&mut buf.as_slice()).unwrap();
        assert_eq!(back.grid().as_ref(), g.as_ref());
        assert_eq!(back.timestamp(), -42);
        assert!(back
            .values()
            .iter()
            .zip(f.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clim.bin");
        save_climatology(&p, &clim).unwrap();
        let c2 = load_climatology(&p).unwrap();
        assert_eq!(c2.field().values(), clim.field().values());
    }

    #[test]
    fn payload_is_variable_major() {
        let (g, fields, _) = small();
        let mut buf = Vec::new();
        write_field(&mut buf, &fields[0]).unwrap();
        let payload = &buf[buf.len() - 8 * g.len()..];
        let at = |k: usize| f64::from_le_bytes(payload[8 * k..8 * k + 8].try_into().unwrap());
        assert_eq!(at(0), fields[0].get(0, 0, 0));
        assert_eq!(at(1), fields[0].get(0, 0, 1));
        assert_eq!(at(7), fields[0].get(0, 1, 0));
        assert_eq!(at(42), fields[0].get(1, 0, 0));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (g, fields, _) = small();
        let mut buf = Vec::new();
        write_field(&mut buf, &fields[0]).unwrap();
        assert!(read_field(&mut &buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_field(&mut bad.as_slice()).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_field(&mut long.as_slice()).is_err());
        let other = make_grid(&GridConfig::with_dims(6, 7, 2)).unwrap();
        assert!(read_field_on(&mut buf.as_slice(), &other).is_err());
        assert!(read_field_on(&mut buf.as_slice(), &g).is_ok());
    }

    #[test]
    fn csv_has_one_row_per_value() {
        let (g, fields, _) = small();
        let mut buf = Vec::new();
        write_field_csv(&mut buf, &fields[0]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), g.len() + 1);
        let row: Vec<&str> = text.lines().nth(2).unwrap().split(',').collect();
        assert_eq!(row[0], "t2m");
        assert_eq!(row[2], "1");
        assert_eq!(row[5].parse::<f64>().unwrap(), fields[0].get(0, 0, 1));
    }

    #[test]
    fn attribution_sidecar_round_trip() {
        let (g, fields, clim) = small();
        let target = TargetSpec::new(&g, "zurich", named_location("zurich").unwrap(), "t2m").unwrap();
        let model = make_linear_model(1, &g, &target).unwrap();
        let map = attribute(&model, &AttributionConfig::ig(4), &fields, 1, &clim).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_attribution(dir.path(), "ig_t1", &map).unwrap();
        let back = load_attribution(dir.path(), "ig_t1").unwrap();
        assert_eq!(back.provenance(), map.provenance());
        assert_eq!(back.scores().values(), map.scores().values());
    }
}
