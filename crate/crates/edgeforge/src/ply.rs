//! ASCII PLY export of reconstruction results, and a reader for the
//! wireframe variant.
//!
//! Points mode writes vertex elements only (the sampled edge cloud);
//! wireframe mode writes the polyline chain vertices plus edge elements
//! linking consecutive chain points. Coordinates are `float` properties
//! printed with shortest round-trip formatting, so a conforming reader
//! recovers them bit-exactly.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::geometry::Point3;
use crate::pipeline::EdgeSetOutput;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyMode {
    Points,
    Wireframe,
}

pub fn export_ply(output: &EdgeSetOutput, path: &Path, mode: PlyMode) -> io::Result<()> {
    let mut buf = Vec::new();
    write_ply(&mut buf, output, mode)?;
    fs::write(path, buf)
}

pub fn write_ply<W: Write>(w: &mut W, output: &EdgeSetOutput, mode: PlyMode) -> io::Result<()> {
    match mode {
        PlyMode::Points => {
            let pts: Vec<Point3> = output.sampled_cloud.iter().map(|c| c.point).collect();
            write_vertices_only(w, &pts)
        }
        PlyMode::Wireframe => {
            let mut vertices = Vec::new();
            let mut edges = Vec::new();
            for pl in &output.polylines {
                let base = vertices.len();
                vertices.extend(pl.points.iter().map(|p| p.position));
                for i in 0..pl.points.len().saturating_sub(1) {
                    edges.push((base + i, base + i + 1));
                }
            }
            write_wireframe(w, &vertices, &edges)
        }
    }
}

/// Writes a bare point cloud.
pub fn write_vertices_only<W: Write>(w: &mut W, points: &[Point3]) -> io::Result<()> {
    writeln!(w, "ply\nformat ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    writeln!(w, "end_header")?;
    for p in points {
        writeln!(w, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)?;
    }
    Ok(())
}

fn write_wireframe<W: Write>(
    w: &mut W,
    vertices: &[Point3],
    edges: &[(usize, usize)],
) -> io::Result<()> {
    writeln!(w, "ply\nformat ascii 1.0")?;
    writeln!(w, "element vertex {}", vertices.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    writeln!(w, "element edge {}", edges.len())?;
    writeln!(w, "property int vertex1\nproperty int vertex2")?;
    writeln!(w, "end_header")?;
    for p in vertices {
        writeln!(w, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)?;
    }
    for &(a, b) in edges {
        writeln!(w, "{a} {b}")?;
    }
    Ok(())
}

/// Parsed wireframe PLY: vertices plus the chains reassembled from the edge
/// records (paths split at junctions, loops cut at their first vertex).
#[derive(Debug, Clone)]
pub struct WireframePly {
    pub vertices: Vec<Point3>,
    pub chains: Vec<Vec<usize>>,
}

pub fn read_wireframe_ply(path: &Path) -> io::Result<WireframePly> {
    parse_wireframe(&fs::read_to_string(path)?)
        .map_err(|msg| io::Error::new(io::ErrorKind::InvalidData, msg))
}

fn parse_wireframe(text: &str) -> Result<WireframePly, String> {
    let mut lines = text.lines();
    if lines.next() != Some("ply") {
        return Err("not a PLY file".into());
    }
    let mut nvert = 0usize;
    let mut nedge = 0usize;
    for line in lines.by_ref() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["format", "ascii", _] | ["comment", ..] | ["property", ..] => {}
            ["element", "vertex", n] => nvert = n.parse().map_err(|_| "bad vertex count")?,
            ["element", "edge", n] => nedge = n.parse().map_err(|_| "bad edge count")?,
            ["end_header"] => break,
            other => return Err(format!("unsupported header line: {other:?}")),
        }
    }

    let mut vertices = Vec::with_capacity(nvert);
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(nedge);
    for line in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if vertices.len() < nvert {
            if fields.len() < 3 {
                return Err("short vertex record".into());
            }
            let coord = |s: &str| s.parse::<f64>().map_err(|_| "bad coordinate".to_string());
            vertices.push(Point3::new(
                coord(fields[0])?,
                coord(fields[1])?,
                coord(fields[2])?,
            ));
        } else if edges.len() < nedge {
            if fields.len() < 2 {
                return Err("short edge record".into());
            }
            let idx = |s: &str| s.parse::<usize>().map_err(|_| "bad edge index".to_string());
            let (a, b) = (idx(fields[0])?, idx(fields[1])?);
            if a >= nvert || b >= nvert {
                return Err("edge index out of range".into());
            }
            edges.push((a, b));
        }
    }
    if vertices.len() != nvert || edges.len() != nedge {
        return Err(format!(
            "truncated body: {}/{nvert} vertices, {}/{nedge} edges",
            vertices.len(),
            edges.len()
        ));
    }

    // reassemble chains: walk paths from degree != 2 nodes, then leftover loops
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nvert];
    for &(a, b) in &edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    let mut used = std::collections::HashSet::new();
    let canon = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut chains = Vec::new();
    for start in 0..nvert {
        if adj[start].len() == 2 {
            continue;
        }
        for &next in &adj[start] {
            if used.contains(&canon(start, next)) {
                continue;
            }
            used.insert(canon(start, next));
            let mut chain = vec![start, next];
            let (mut prev, mut cur) = (start, next);
            while adj[cur].len() == 2 {
                let &nxt = adj[cur].iter().find(|&&m| m != prev).expect("degree 2");
                used.insert(canon(cur, nxt));
                chain.push(nxt);
                prev = cur;
                cur = nxt;
            }
            chains.push(chain);
        }
    }
    for start in 0..nvert {
        if adj[start].len() != 2 {
            continue;
        }
        let Some(&first) = adj[start].iter().find(|&&m| !used.contains(&canon(start, m))) else {
            continue;
        };
        used.insert(canon(start, first));
        let mut chain = vec![start, first];
        let (mut prev, mut cur) = (start, first);
        while cur != start {
            let &nxt = adj[cur].iter().find(|&&m| m != prev).expect("cycle");
            used.insert(canon(cur, nxt));
            chain.push(nxt);
            prev = cur;
            cur = nxt;
        }
        chains.push(chain);
    }
    Ok(WireframePly { vertices, chains })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wireframe_header_counts_match_body() {
        let vertices = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.25, -0.5),
        ];
        let mut buf = Vec::new();
        write_wireframe(&mut buf, &vertices, &[(0, 1)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("element vertex 2"));
        assert!(text.contains("element edge 1"));
        let body_lines: Vec<&str> = text
            .lines()
            .skip_while(|l| *l != "end_header")
            .skip(1)
            .collect();
        assert_eq!(body_lines.len(), 3);
    }

    #[test]
    fn round_trip_is_bit_exact_through_f32() {
        let vertices: Vec<Point3> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.137 + 0.001;
                Point3::new(t.sin() * 3.7, t.cos() / 1.3, t * 1e-3)
            })
            .collect();
        let edges: Vec<(usize, usize)> = (0..49).map(|i| (i, i + 1)).collect();
        let mut buf = Vec::new();
        write_wireframe(&mut buf, &vertices, &edges).unwrap();
        let parsed = parse_wireframe(&String::from_utf8(buf).unwrap()).unwrap();
        assert_eq!(parsed.vertices.len(), 50);
        for (orig, back) in vertices.iter().zip(&parsed.vertices) {
            assert_eq!(orig.x as f32, back.x as f32);
            assert_eq!(orig.y as f32, back.y as f32);
            assert_eq!(orig.z as f32, back.z as f32);
        }
        assert_eq!(parsed.chains.len(), 1);
        assert_eq!(parsed.chains[0].len(), 50);
    }

    #[test]
    fn chains_reassemble_from_shuffled_edges() {
        let vertices: Vec<Point3> = (0..6).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        // two chains: 0-1-2 and 3-4-5, edges out of order
        let edges = [(4usize, 5usize), (0, 1), (3, 4), (2, 1)];
        let mut buf = Vec::new();
        write_wireframe(&mut buf, &vertices, &edges).unwrap();
        let parsed = parse_wireframe(&String::from_utf8(buf).unwrap()).unwrap();
        assert_eq!(parsed.chains.len(), 2);
        let mut lens: Vec<usize> = parsed.chains.iter().map(Vec::len).collect();
        lens.sort_unstable();
        assert_eq!(lens, vec![3, 3]);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(parse_wireframe("not a ply").is_err());
        assert!(parse_wireframe("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n").is_err());
    }
}
