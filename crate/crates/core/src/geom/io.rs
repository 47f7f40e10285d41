//! Point-cloud file I/O: binary little-endian PLY and debug CSV.
//!
//! The PLY schema is `x,y,z` as float64, optionally `nx,ny,nz` (float64) when
//! normals are present and `label` (int32) when labels are present; the header
//! declares exactly the properties written.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geom::PointCloud;

pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        cloud.len()
    )?;
    for c in ["x", "y", "z"] {
        writeln!(w, "property double {c}")?;
    }
    if cloud.normals.is_some() {
        for c in ["nx", "ny", "nz"] {
            writeln!(w, "property double {c}")?;
        }
    }
    if cloud.labels.is_some() {
        writeln!(w, "property int label")?;
    }
    writeln!(w, "end_header")?;
    for i in 0..cloud.len() {
        let p = cloud.points[i];
        for v in [p.x, p.y, p.z] {
            w.write_all(&v.to_le_bytes())?;
        }
        if let Some(ns) = &cloud.normals {
            for v in [ns[i].x, ns[i].y, ns[i].z] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        if let Some(ls) = &cloud.labels {
            w.write_all(&ls[i].to_le_bytes())?;
        }
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum PlyType {
    F32,
    F64,
    I32,
    U8,
}

impl PlyType {
    fn parse(s: &str) -> Option<PlyType> {
        match s {
            "float" | "float32" => Some(PlyType::F32),
            "double" | "float64" => Some(PlyType::F64),
            "int" | "int32" => Some(PlyType::I32),
            "uchar" | "uint8" | "char" | "int8" => Some(PlyType::U8),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            PlyType::F32 | PlyType::I32 => 4,
            PlyType::F64 => 8,
            PlyType::U8 => 1,
        }
    }

    fn read_f64(self, bytes: &[u8]) -> f64 {
        match self {
            PlyType::F32 => f32::from_le_bytes(bytes.try_into().unwrap()) as f64,
            PlyType::F64 => f64::from_le_bytes(bytes.try_into().unwrap()),
            PlyType::I32 => i32::from_le_bytes(bytes.try_into().unwrap()) as f64,
            PlyType::U8 => bytes[0] as f64,
        }
    }
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Parse {
        format: "ply",
        detail: detail.into(),
    }
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    let mut count: Option<usize> = None;
    let mut props: Vec<(String, PlyType)> = Vec::new();
    let mut saw_format = false;
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("unexpected end of header"));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["ply"] | ["comment", ..] => {}
            ["format", "binary_little_endian", _] => saw_format = true,
            ["format", other, _] => return Err(bad(format!("unsupported format {other}"))),
            ["element", "vertex", n] => {
                count = Some(n.parse().map_err(|_| bad("bad vertex count"))?)
            }
            ["element", _, _] if count.is_some() => {
                return Err(bad("elements after vertex are not supported"))
            }
            ["property", ty, name] => {
                let ty = PlyType::parse(ty).ok_or_else(|| bad(format!("bad type {ty}")))?;
                props.push((name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => return Err(bad(format!("unexpected header line `{}`", line.trim()))),
        }
    }
    if !saw_format {
        return Err(bad("missing binary_little_endian format line"));
    }
    let count = count.ok_or_else(|| bad("missing vertex element"))?;
    let stride: usize = props.iter().map(|(_, t)| t.size()).sum();
    let field = |name: &str| -> Option<(usize, PlyType)> {
        let mut offset = 0;
        for (n, t) in &props {
            if n == name {
                return Some((offset, *t));
            }
            offset += t.size();
        }
        None
    };
    let (px, py, pz) = match (field("x"), field("y"), field("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(bad("missing x/y/z properties")),
    };
    let normal_fields = match (field("nx"), field("ny"), field("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let label_field = field("label");

    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    if data.len() < stride * count {
        return Err(bad(format!(
            "payload too short: {} bytes for {} vertices of {} bytes",
            data.len(),
            count,
            stride
        )));
    }
    let mut cloud = PointCloud {
        points: Vec::with_capacity(count),
        normals: normal_fields.map(|_| Vec::with_capacity(count)),
        labels: label_field.map(|_| Vec::with_capacity(count)),
    };
    let get = |row: &[u8], (off, ty): (usize, PlyType)| ty.read_f64(&row[off..off + ty.size()]);
    for i in 0..count {
        let row = &data[i * stride..(i + 1) * stride];
        cloud
            .points
            .push(Vector3::new(get(row, px), get(row, py), get(row, pz)));
        if let (Some((a, b, c)), Some(ns)) = (normal_fields, cloud.normals.as_mut()) {
            ns.push(Vector3::new(get(row, a), get(row, b), get(row, c)));
        }
        if let (Some(f), Some(ls)) = (label_field, cloud.labels.as_mut()) {
            ls.push(get(row, f) as i32);
        }
    }
    Ok(cloud)
}

/// Debug CSV with a header row naming the columns actually present.
pub fn write_cloud_csv(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec!["x", "y", "z"];
    if cloud.normals.is_some() {
        header.extend(["nx", "ny", "nz"]);
    }
    if cloud.labels.is_some() {
        header.push("label");
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..cloud.len() {
        let p = cloud.points[i];
        write!(w, "{},{},{}", p.x, p.y, p.z)?;
        if let Some(ns) = &cloud.normals {
            write!(w, ",{},{},{}", ns[i].x, ns[i].y, ns[i].z)?;
        }
        if let Some(ls) = &cloud.labels {
            write!(w, ",{}", ls[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ply_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.ply");
        let cloud = PointCloud {
            points: vec![Vector3::new(0.1, -0.2, 0.3), Vector3::new(1.0, 2.0, 3.0)],
            normals: Some(vec![Vector3::z(), Vector3::x()]),
            labels: Some(vec![crate::geom::GROUND_LABEL, 4]),
        };
        write_ply(&cloud, &path).unwrap();
        let back = read_ply(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.points, cloud.points);
        assert_eq!(back.normals, cloud.normals);
        assert_eq!(back.labels, cloud.labels);
    }

    #[test]
    fn ply_without_attributes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bare.ply");
        let cloud = PointCloud::from_points(vec![Vector3::new(1.0, 2.0, 3.0)]);
        write_ply(&cloud, &path).unwrap();
        let back = read_ply(&path).unwrap();
        assert!(back.normals.is_none());
        assert!(back.labels.is_none());
        assert_eq!(back.points, cloud.points);
    }
}
