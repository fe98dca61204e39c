//! Text mesh format.
//!
//! ```text
//! MESH v1 <n_nodes> <n_elems>
//! x y z tagbits            (n_nodes lines)
//! i0 i1 i2 i3 region       (n_elems lines, 0-based indices, region 0 = normal, 1 = cancer)
//! ```
//!
//! Coordinates are written with Rust's shortest round-trip float formatting,
//! so `parse(write(m)) == m` bit for bit.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{Mesh, MeshError, NodeTags, Region};
use crate::Vec3;

pub fn mesh_to_text(mesh: &Mesh) -> String {
    let mut out = String::with_capacity(64 * (mesh.n_nodes() + mesh.n_elements()));
    writeln!(out, "MESH v1 {} {}", mesh.n_nodes(), mesh.n_elements()).unwrap();
    for (p, tags) in mesh.nodes.iter().zip(&mesh.node_tags) {
        writeln!(out, "{:?} {:?} {:?} {}", p.x, p.y, p.z, tags.bits()).unwrap();
    }
    for (e, r) in mesh.elements.iter().zip(&mesh.element_region) {
        writeln!(out, "{} {} {} {} {}", e[0], e[1], e[2], e[3], r.code()).unwrap();
    }
    out
}

pub fn write_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    std::fs::write(path, mesh_to_text(mesh))?;
    Ok(())
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
    parse_mesh(&std::fs::read_to_string(path)?)
}

fn field<T: FromStr>(token: Option<&str>, line: usize, what: &str) -> Result<T, MeshError> {
    let token = token.ok_or_else(|| MeshError::Parse { line, message: format!("missing {what}") })?;
    token
        .parse()
        .map_err(|_| MeshError::Parse { line, message: format!("invalid {what} `{token}`") })
}

fn expect_end<'a>(mut tokens: impl Iterator<Item = &'a str>, line: usize) -> Result<(), MeshError> {
    match tokens.next() {
        None => Ok(()),
        Some(extra) => Err(MeshError::Parse { line, message: format!("unexpected trailing token `{extra}`") }),
    }
}

pub fn parse_mesh(text: &str) -> Result<Mesh, MeshError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n_nodes, n_elems) = match lines.next() {
        Some((line, header)) if header.starts_with("MESH") => {
            let mut tokens = header.split_whitespace().skip(1);
            match tokens.next() {
                Some("v1") => {}
                other => {
                    return Err(MeshError::Parse {
                        line,
                        message: format!("unsupported version {:?}", other.unwrap_or("")),
                    })
                }
            }
            let n: usize = field(tokens.next(), line, "node count")?;
            let m: usize = field(tokens.next(), line, "element count")?;
            expect_end(tokens, line)?;
            (n, m)
        }
        _ => return Err(MeshError::MissingHeader),
    };

    let mut nodes = Vec::with_capacity(n_nodes);
    let mut node_tags = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let (line, text) = lines.next().ok_or(MeshError::Parse {
            line: nodes.len() + 2,
            message: format!("expected {n_nodes} node lines, found {}", nodes.len()),
        })?;
        let mut tokens = text.split_whitespace();
        let x: f64 = field(tokens.next(), line, "x coordinate")?;
        let y: f64 = field(tokens.next(), line, "y coordinate")?;
        let z: f64 = field(tokens.next(), line, "z coordinate")?;
        let bits: u8 = field(tokens.next(), line, "tag bits")?;
        expect_end(tokens, line)?;
        let tags = NodeTags::from_bits(bits)
            .ok_or_else(|| MeshError::Parse { line, message: format!("unknown tag bits {bits}") })?;
        nodes.push(Vec3::new(x, y, z));
        node_tags.push(tags);
    }

    let mut elements = Vec::with_capacity(n_elems);
    let mut element_region = Vec::with_capacity(n_elems);
    for e in 0..n_elems {
        let (line, text) = lines.next().ok_or(MeshError::Parse {
            line: n_nodes + e + 2,
            message: format!("expected {n_elems} element lines, found {e}"),
        })?;
        let mut tokens = text.split_whitespace();
        let mut ids = [0usize; 4];
        for (slot, id) in ids.iter_mut().enumerate() {
            *id = field(tokens.next(), line, &format!("node index {slot}"))?;
            if *id >= n_nodes {
                return Err(MeshError::Parse {
                    line,
                    message: format!("element {e} references node {id} but the mesh has {n_nodes} nodes"),
                });
            }
        }
        let code: u8 = field(tokens.next(), line, "region")?;
        expect_end(tokens, line)?;
        let region = Region::from_code(code)
            .ok_or_else(|| MeshError::Parse { line, message: format!("unknown region {code}") })?;
        elements.push(ids);
        element_region.push(region);
    }
    if let Some((line, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(MeshError::Parse { line, message: format!("unexpected content `{extra}`") });
    }
    Ok(Mesh { nodes, elements, element_region, node_tags })
}
