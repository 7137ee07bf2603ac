//! Gmsh MSH 4.1 ASCII reader and writer.
//!
//! Grains are physical groups of the top-dimensional entities named
//! `grain<i>`. Lower-dimensional elements are skipped: boundary facets are
//! classified geometrically by [`PolyMesh::new`].

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{MeshError, PolyMesh};

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    section: String,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> MeshError {
        MeshError::Parse {
            section: self.section.clone(),
            line: self.line,
            message: message.into(),
        }
    }

    fn next_raw(&mut self) -> Option<&'a str> {
        for (i, l) in self.inner.by_ref() {
            self.line = i + 1;
            let t = l.trim();
            if !t.is_empty() {
                return Some(t);
            }
        }
        None
    }

    fn next_line(&mut self) -> Result<&'a str, MeshError> {
        let l = self.next_raw().ok_or_else(|| self.err("unexpected end of file"))?;
        if l.starts_with("$End") {
            return Err(self.err(format!("section ended early at `{l}`")));
        }
        Ok(l)
    }

    fn numbers<T: std::str::FromStr>(&mut self) -> Result<Vec<T>, MeshError> {
        let l = self.next_line()?;
        l.split_whitespace()
            .map(|t| t.parse::<T>().map_err(|_| self.err(format!("bad number `{t}`"))))
            .collect()
    }

    fn fixed<T: std::str::FromStr + Copy, const N: usize>(&mut self) -> Result<[T; N], MeshError> {
        let v = self.numbers::<T>()?;
        if v.len() < N {
            return Err(self.err(format!("expected {N} values, found {}", v.len())));
        }
        Ok(std::array::from_fn(|i| v[i]))
    }

    fn end(&mut self) -> Result<(), MeshError> {
        let want = format!("$End{}", self.section);
        match self.next_raw() {
            Some(l) if l == want => Ok(()),
            Some(l) => Err(self.err(format!("expected `{want}`, found `{l}`"))),
            None => Err(self.err(format!("missing `{want}`"))),
        }
    }
}

/// Parses an MSH 4.1 ASCII payload.
pub fn load_mesh(payload: &[u8]) -> Result<PolyMesh, MeshError> {
    let text = std::str::from_utf8(payload).map_err(|e| MeshError::Parse {
        section: String::new(),
        line: 0,
        message: format!("not UTF-8: {e}"),
    })?;
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        section: String::new(),
        line: 0,
    };
    let mut names: HashMap<(usize, i64), String> = HashMap::new();
    let mut entity_phys: HashMap<(usize, i64), Vec<i64>> = HashMap::new();
    let mut node_index: HashMap<u64, usize> = HashMap::new();
    let mut nodes = Vec::new();
    // (dim, entity tag, element type, node tags)
    let mut elements: Vec<(usize, i64, u32, Vec<u64>)> = Vec::new();
    let mut seen_format = false;

    while let Some(header) = lines.next_raw() {
        let Some(name) = header.strip_prefix('$') else {
            lines.section = String::new();
            return Err(lines.err(format!("expected a section header, found `{header}`")));
        };
        if name.is_empty() || name.starts_with("End") || name.contains(char::is_whitespace) {
            lines.section = name.to_string();
            return Err(lines.err(format!("malformed section header `{header}`")));
        }
        lines.section = name.to_string();
        match name {
            "MeshFormat" => {
                let l = lines.next_line()?;
                let tok: Vec<&str> = l.split_whitespace().collect();
                if tok.len() < 3 || !tok[0].starts_with("4.1") {
                    return Err(lines.err(format!("unsupported format `{l}`, need 4.1")));
                }
                if tok[1] != "0" {
                    return Err(lines.err("binary files are not supported"));
                }
                seen_format = true;
                lines.end()?;
            }
            "PhysicalNames" => {
                let [n] = lines.fixed::<usize, 1>()?;
                for _ in 0..n {
                    let l = lines.next_line()?;
                    let mut it = l.splitn(3, char::is_whitespace);
                    let dim = it.next().and_then(|t| t.parse().ok());
                    let tag = it.next().and_then(|t| t.trim().parse().ok());
                    let label = it.next().map(|t| t.trim().trim_matches('"').to_string());
                    match (dim, tag, label) {
                        (Some(d), Some(t), Some(s)) => {
                            names.insert((d, t), s);
                        }
                        _ => return Err(lines.err(format!("bad physical name `{l}`"))),
                    }
                }
                lines.end()?;
            }
            "Entities" => {
                let counts = lines.fixed::<usize, 4>()?;
                for (dim, &count) in counts.iter().enumerate() {
                    for _ in 0..count {
                        let v = lines.numbers::<f64>()?;
                        let np_at = if dim == 0 { 4 } else { 7 };
                        let n_phys = *v.get(np_at).ok_or_else(|| lines.err("truncated entity"))? as usize;
                        if v.len() < np_at + 1 + n_phys {
                            return Err(lines.err("truncated physical tags"));
                        }
                        let phys = v[np_at + 1..np_at + 1 + n_phys].iter().map(|&x| x as i64).collect();
                        entity_phys.insert((dim, v[0] as i64), phys);
                    }
                }
                lines.end()?;
            }
            "Nodes" => {
                let [blocks, total, _, _] = lines.fixed::<usize, 4>()?;
                nodes.reserve(total);
                for _ in 0..blocks {
                    let [_, _, _, count] = lines.fixed::<i64, 4>()?;
                    let mut tags = Vec::with_capacity(count as usize);
                    for _ in 0..count {
                        let [t] = lines.fixed::<u64, 1>()?;
                        tags.push(t);
                    }
                    for t in tags {
                        let v = lines.numbers::<f64>()?;
                        if v.len() < 3 {
                            return Err(lines.err("node needs x y z"));
                        }
                        node_index.insert(t, nodes.len());
                        nodes.push([v[0], v[1], v[2]]);
                    }
                }
                if nodes.len() != total {
                    return Err(lines.err(format!("declared {total} nodes, read {}", nodes.len())));
                }
                lines.end()?;
            }
            "Elements" => {
                let [blocks, total, _, _] = lines.fixed::<usize, 4>()?;
                let mut read = 0;
                for _ in 0..blocks {
                    let [dim, tag, etype, count] = lines.fixed::<i64, 4>()?;
                    for _ in 0..count {
                        let v = lines.numbers::<u64>()?;
                        if v.len() < 2 {
                            return Err(lines.err("element without nodes"));
                        }
                        elements.push((dim as usize, tag, etype as u32, v[1..].to_vec()));
                        read += 1;
                    }
                }
                if read != total {
                    return Err(lines.err(format!("declared {total} elements, read {read}")));
                }
                lines.end()?;
            }
            _ => {
                // unknown section: skip to its end marker
                let want = format!("$End{name}");
                loop {
                    match lines.next_raw() {
                        Some(l) if l == want => break,
                        Some(_) => {}
                        None => return Err(lines.err(format!("missing `{want}`"))),
                    }
                }
            }
        }
    }
    if !seen_format {
        lines.section = "MeshFormat".into();
        return Err(lines.err("missing $MeshFormat section"));
    }

    let dim = if elements.iter().any(|e| e.2 == 4) {
        3
    } else if elements.iter().any(|e| e.2 == 2) {
        2
    } else {
        return Err(MeshError::Invalid("no triangle or tetrahedron elements".into()));
    };
    let cell_type = if dim == 3 { 4 } else { 2 };
    let mut cells = Vec::new();
    let mut tags = Vec::new();
    for (edim, etag, etype, enodes) in elements.iter().filter(|e| e.2 == cell_type) {
        let cell = enodes
            .iter()
            .map(|t| node_index.get(t).copied())
            .collect::<Option<Vec<usize>>>()
            .ok_or_else(|| MeshError::Invalid(format!("element of type {etype} references unknown node")))?;
        let grain = entity_phys.get(&(*edim, *etag)).and_then(|phys| {
            phys.iter().find_map(|p| {
                names
                    .get(&(*edim, *p))
                    .and_then(|s| s.strip_prefix("grain"))
                    .and_then(|i| i.parse::<usize>().ok())
            })
        });
        match grain {
            Some(g) => tags.push(g),
            None => return Err(MeshError::Topology { cell: cells.len() }),
        }
        cells.push(cell);
    }
    PolyMesh::new(dim, nodes, cells, tags)
}

/// Serializes a mesh as MSH 4.1 ASCII with one physical group per grain.
pub fn write_msh(mesh: &PolyMesh) -> String {
    let dim = mesh.dim;
    let ng = mesh.n_grains();
    let mut s = String::new();
    s.push_str("$MeshFormat\n4.1 0 8\n$EndMeshFormat\n");
    let _ = writeln!(s, "$PhysicalNames\n{ng}");
    for (g, label) in mesh.grain_labels.iter().enumerate() {
        let _ = writeln!(s, "{dim} {} \"grain{label}\"", g + 1);
    }
    s.push_str("$EndPhysicalNames\n$Entities\n");
    let _ = writeln!(s, "0 0 {} {}", if dim == 2 { ng } else { 0 }, if dim == 3 { ng } else { 0 });
    let (lo, hi) = mesh.bounding_box();
    for g in 0..ng {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} 1 {} 0",
            g + 1,
            lo[0],
            lo[1],
            lo[2],
            hi[0],
            hi[1],
            hi[2],
            g + 1
        );
    }
    s.push_str("$EndEntities\n");
    let nn = mesh.nodes.len();
    let _ = writeln!(s, "$Nodes\n1 {nn} 1 {nn}\n{dim} 1 0 {nn}");
    for i in 0..nn {
        let _ = writeln!(s, "{}", i + 1);
    }
    for x in &mesh.nodes {
        let _ = writeln!(s, "{} {} {}", x[0], x[1], x[2]);
    }
    s.push_str("$EndNodes\n");
    let cells = mesh.grain_cells();
    let nc = mesh.cells.len();
    let _ = writeln!(s, "$Elements\n{ng} {nc} 1 {nc}");
    let etype = if dim == 3 { 4 } else { 2 };
    let mut tag = 1;
    for (g, list) in cells.iter().enumerate() {
        let _ = writeln!(s, "{dim} {} {etype} {}", g + 1, list.len());
        for &c in list {
            let _ = write!(s, "{tag}");
            for &n in &mesh.cells[c] {
                let _ = write!(s, " {}", n + 1);
            }
            s.push('\n');
            tag += 1;
        }
    }
    s.push_str("$EndElements\n");
    s
}
