//! Triangle meshes with per-vertex labels, and their binary PLY form.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledMesh {
    pub vertices: Vec<[f32; 3]>,
    pub triangles: Vec<[u32; 3]>,
    /// Per-vertex attributes; empty until attributes are transferred.
    pub semantic_class: Vec<u32>,
    pub instance_id: Vec<u32>,
    pub intensity: Vec<f32>,
}

impl LabeledMesh {
    pub fn new(vertices: Vec<[f32; 3]>, triangles: Vec<[u32; 3]>) -> Self {
        LabeledMesh {
            vertices,
            triangles,
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn has_attributes(&self) -> bool {
        let n = self.vertices.len();
        self.semantic_class.len() == n && self.instance_id.len() == n && self.intensity.len() == n
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= n) {
                return Err(Error::invalid("mesh", format!("triangle {i} indexes past {n} vertices")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::invalid("mesh", format!("triangle {i} repeats a vertex")));
            }
        }
        if !self.semantic_class.is_empty() && !self.has_attributes() {
            return Err(Error::invalid("mesh", "attribute arrays do not match vertex count"));
        }
        Ok(())
    }
}

const PLY_VERTEX_BYTES: usize = 12 + 4 + 2 + 2;

/// Binary little-endian PLY with `x y z intensity semantic_class
/// instance_id` per vertex. Meshes without attributes write zeros.
pub fn encode_ply(mesh: &LabeledMesh) -> Result<Vec<u8>> {
    mesh.validate()?;
    let attrs = mesh.has_attributes();
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty float intensity\nproperty ushort semantic_class\nproperty ushort instance_id\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    let mut out = Vec::with_capacity(
        header.len() + mesh.vertices.len() * PLY_VERTEX_BYTES + mesh.triangles.len() * 13,
    );
    out.extend_from_slice(header.as_bytes());
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in v {
            out.extend_from_slice(&c.to_le_bytes());
        }
        let (inten, class, inst) = if attrs {
            (mesh.intensity[i], mesh.semantic_class[i], mesh.instance_id[i])
        } else {
            (0.0, 0, 0)
        };
        let class = u16::try_from(class).map_err(|_| Error::LabelOverflow {
            field: "semantic_class",
            value: class,
        })?;
        let inst = u16::try_from(inst).map_err(|_| Error::LabelOverflow {
            field: "instance_id",
            value: inst,
        })?;
        out.extend_from_slice(&inten.to_le_bytes());
        out.extend_from_slice(&class.to_le_bytes());
        out.extend_from_slice(&inst.to_le_bytes());
    }
    for t in &mesh.triangles {
        out.push(3);
        for i in t {
            out.extend_from_slice(&(*i as i32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_ply(mesh: &LabeledMesh, path: &Path) -> Result<()> {
    let bytes = encode_ply(mesh)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Reads meshes written by [`encode_ply`]; other property layouts are
/// rejected.
pub fn decode_ply(bytes: &[u8]) -> Result<LabeledMesh> {
    let mut reader = BufReader::new(bytes);
    let mut header = Vec::new();
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| Error::format("ply header", e.to_string()))?;
        if n == 0 {
            return Err(Error::format("ply header", "missing end_header"));
        }
        let l = line.trim_end().to_string();
        if l == "end_header" {
            break;
        }
        header.push(l);
    }
    let expected_props = [
        "property float x",
        "property float y",
        "property float z",
        "property float intensity",
        "property ushort semantic_class",
        "property ushort instance_id",
    ];
    if header.first().map(String::as_str) != Some("ply")
        || header.get(1).map(String::as_str) != Some("format binary_little_endian 1.0")
    {
        return Err(Error::format("ply header", "expected binary_little_endian PLY"));
    }
    let count = |prefix: &str| -> Result<usize> {
        header
            .iter()
            .find_map(|l| l.strip_prefix(prefix))
            .ok_or_else(|| Error::format("ply header", format!("missing '{prefix}'")))?
            .trim()
            .parse()
            .map_err(|e| Error::format("ply header", format!("{prefix}: {e}")))
    };
    let nv = count("element vertex ")?;
    let nf = count("element face ")?;
    let props: Vec<&str> = header
        .iter()
        .filter(|l| l.starts_with("property") && !l.contains("list"))
        .map(String::as_str)
        .collect();
    if props != expected_props {
        return Err(Error::format("ply header", format!("unsupported vertex layout {props:?}")));
    }
    let mut body = Vec::new();
    reader
        .read_to_end(&mut body)
        .map_err(|e| Error::format("ply body", e.to_string()))?;
    if body.len() != nv * PLY_VERTEX_BYTES + nf * 13 {
        return Err(Error::format(
            "ply body",
            format!("{} bytes for {nv} vertices and {nf} faces", body.len()),
        ));
    }
    let mut mesh = LabeledMesh {
        vertices: Vec::with_capacity(nv),
        triangles: Vec::with_capacity(nf),
        semantic_class: Vec::with_capacity(nv),
        instance_id: Vec::with_capacity(nv),
        intensity: Vec::with_capacity(nv),
    };
    let f32_at = |b: &[u8], o: usize| f32::from_le_bytes(b[o..o + 4].try_into().unwrap());
    for rec in body[..nv * PLY_VERTEX_BYTES].chunks_exact(PLY_VERTEX_BYTES) {
        mesh.vertices.push([f32_at(rec, 0), f32_at(rec, 4), f32_at(rec, 8)]);
        mesh.intensity.push(f32_at(rec, 12));
        mesh.semantic_class.push(u16::from_le_bytes([rec[16], rec[17]]) as u32);
        mesh.instance_id.push(u16::from_le_bytes([rec[18], rec[19]]) as u32);
    }
    for rec in body[nv * PLY_VERTEX_BYTES..].chunks_exact(13) {
        if rec[0] != 3 {
            return Err(Error::format("ply body", "only triangles are supported"));
        }
        let i = |o: usize| i32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
        let t = [i(1), i(5), i(9)];
        if t.iter().any(|&v| v < 0) {
            return Err(Error::format("ply body", "negative vertex index"));
        }
        mesh.triangles.push([t[0] as u32, t[1] as u32, t[2] as u32]);
    }
    mesh.validate()?;
    Ok(mesh)
}

pub fn read_ply(path: &Path) -> Result<LabeledMesh> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ply(&bytes)
}
