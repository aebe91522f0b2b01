use super::{FusionTable, LoweringError, Src};
use crate::graph::{DataflowGraph, Primitive, StreamKind};

#[derive(Clone, Copy)]
struct Resolved {
    node: usize,
    port: usize,
    kind: StreamKind,
    depth: u8,
}

fn resolve(table: &FusionTable, src: &Src, hops: usize) -> Result<Resolved, LoweringError> {
    let dangling = |var: &str, col: Option<usize>| LoweringError::DanglingReference {
        row: var.to_string(),
        column: col.map(|c| table.columns[c].name.clone()).unwrap_or_else(|| "scope".into()),
    };
    if hops > table.items.len() + table.scopes.len() + 2 {
        return Err(dangling("?", None));
    }
    match src {
        Src::Root => Ok(Resolved { node: 0, port: 0, kind: StreamKind::Ref, depth: 0 }),
        Src::Port { item, port } => {
            let it = table.items.get(*item).ok_or_else(|| dangling("?", None))?;
            Ok(Resolved { node: item + 1, port: *port, kind: it.outputs[*port], depth: it.depth })
        }
        Src::Top { var, col } => {
            let &(item, port) = table.top.get(&(var.clone(), *col)).ok_or_else(|| dangling(var, Some(*col)))?;
            resolve(table, &Src::Port { item, port }, hops + 1)
        }
        Src::Scope { scope, var } => {
            let s = table.scopes.get(&(*scope, var.clone())).ok_or_else(|| dangling(var, None))?;
            resolve(table, s, hops + 1)
        }
    }
}

/// Emits one graph node per cell item plus the output assembly: a drop cascade
/// from the innermost level outwards, then level and value writers.
pub fn generate_graph(table: &FusionTable) -> Result<DataflowGraph, LoweringError> {
    let mut g = DataflowGraph::new(&table.region);
    g.outputs.push(table.output.clone());
    let root = g.add("Root", Primitive::Root);
    let (crds, val) = emit_items(&mut g, table, "", root)?;
    assemble_output(&mut g, table, crds, val);
    Ok(g)
}

/// Builds one graph from per-lane tables of the same region. `splits` lists the
/// parallelized vars outermost first with their lane counts; `tables` are in
/// lane-major order over those splits. Lanes share the root and are merged by
/// serializers, innermost split first, just ahead of the output assembly.
pub fn generate_parallel_graph(tables: &[FusionTable], splits: &[(String, u32)]) -> Result<DataflowGraph, LoweringError> {
    let first = tables.first().ok_or(LoweringError::NoOrder)?;
    let mut g = DataflowGraph::new(&first.region);
    g.outputs.push(first.output.clone());
    let root = g.add("Root", Primitive::Root);
    let mut groups = Vec::with_capacity(tables.len());
    for (lane, t) in tables.iter().enumerate() {
        groups.push(emit_items(&mut g, t, &format!("L{lane}_"), root)?);
    }
    for (var, lanes) in splits.iter().rev() {
        let cut = first.out_vars.iter().position(|v| v == var).ok_or_else(|| LoweringError::NotParallelizable { var: var.clone() })? as u8 + 1;
        let lanes = *lanes as usize;
        let mut merged = Vec::with_capacity(groups.len() / lanes);
        for (k, chunk) in groups.chunks(lanes).enumerate() {
            let streams: Vec<Resolved> = chunk[0].0.iter().copied().chain([chunk[0].1]).collect();
            let depths = streams.iter().map(|r| r.depth).collect();
            let name = format!("Ser_{}{}", display(first, var), if groups.len() > lanes { format!(".{k}") } else { String::new() });
            let ser = g.add(name, Primitive::Serializer { lanes, depths, cut });
            let per = streams.len();
            for (lane, (crds, val)) in chunk.iter().enumerate() {
                for (s, r) in crds.iter().chain([val]).enumerate() {
                    connect(&mut g, first, *r, (ser, lane * per + s));
                }
            }
            let outs: Vec<Resolved> = streams.iter().enumerate().map(|(s, r)| Resolved { node: ser, port: s, ..*r }).collect();
            merged.push((outs[..per - 1].to_vec(), outs[per - 1]));
        }
        groups = merged;
    }
    let (crds, val) = groups.pop().expect("lanes merge into one group");
    assemble_output(&mut g, first, crds, val);
    Ok(g)
}

fn connect(g: &mut DataflowGraph, table: &FusionTable, r: Resolved, to: (usize, usize)) {
    g.connect((r.node, r.port), to, r.kind, r.depth);
    if r.kind == StreamKind::Val {
        g.channels.last_mut().expect("just pushed").block = table.block.clone();
    }
}

/// Adds the table's items under `prefix`; returns the output crds and value
/// before zero elision.
fn emit_items(g: &mut DataflowGraph, table: &FusionTable, prefix: &str, root: usize) -> Result<(Vec<Resolved>, Resolved), LoweringError> {
    let base = g.nodes.len();
    for it in &table.items {
        g.add(format!("{prefix}{}", it.name), it.prim.clone());
    }
    let global = |r: Resolved| Resolved { node: if r.node == 0 { root } else { base + r.node - 1 }, ..r };
    for (i, it) in table.items.iter().enumerate() {
        for (port, src) in it.inputs.iter().enumerate() {
            let r = global(resolve(table, src, 0)?);
            connect(g, table, r, (base + i, port));
        }
    }
    let val = global(resolve(table, table.out_val.as_ref().ok_or(LoweringError::NoOrder)?, 0)?);
    let crds = table.out_crds.iter().map(|s| resolve(table, s, 0).map(global)).collect::<Result<Vec<_>, _>>()?;
    Ok((crds, val))
}

fn assemble_output(g: &mut DataflowGraph, table: &FusionTable, mut crds: Vec<Resolved>, mut val: Resolved) {
    let out = table.region.clone();
    let n = crds.len();
    let vars: Vec<String> = table.out_vars.iter().map(|v| display(table, v)).collect();
    if n > 0 {
        let vd = g.add("ValDrop", Primitive::ValDrop);
        connect(g, table, crds[n - 1], (vd, 0));
        connect(g, table, val, (vd, 1));
        crds[n - 1] = Resolved { node: vd, port: 0, ..crds[n - 1] };
        val = Resolved { node: vd, port: 1, ..val };
        for k in (0..n - 1).rev() {
            let cd = g.add(format!("CD_{}", vars[k]), Primitive::CoordDrop { inner: n - 1 - k });
            let mut ins: Vec<Resolved> = crds[k..].to_vec();
            ins.push(val);
            for (p, r) in ins.into_iter().enumerate() {
                connect(g, table, r, (cd, p));
            }
            for (p, c) in crds[k..].iter_mut().enumerate() {
                *c = Resolved { node: cd, port: p, ..*c };
            }
            val = Resolved { node: cd, port: n - k, ..val };
        }
        for (k, c) in crds.iter().enumerate() {
            let lw = g.add(format!("LW_{out}{}", vars[k]), Primitive::LevelWriter { tensor: out.clone(), level: k });
            connect(g, table, *c, (lw, 0));
        }
    }
    let vw = g.add(format!("VW_{out}"), Primitive::ValWriter { tensor: out.clone() });
    connect(g, table, val, (vw, 0));
}

fn display(table: &FusionTable, v: &str) -> String {
    table.rows.iter().position(|r| r == v).map(|i| table.row_names[i].clone()).unwrap_or_else(|| v.to_string())
}
