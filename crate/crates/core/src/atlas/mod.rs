//! Block-partitioned collections of sheets.

mod persist;
mod transfer;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub use persist::{export_json, load_atlas, save_atlas, FORMAT_VERSION};
pub use transfer::{interblock_transfer, SheetSource, Supplemented, TransferConfig, TransferEvent, TransferReason};

use crate::error::{PlimError, Result};
use crate::grid::Grid;
use crate::system::{FineSystem, ProjectionMap};

pub type SheetId = u64;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockId(pub Vec<i64>);

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub id: BlockId,
    pub grid: Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub coarse: Vec<f64>,
    pub data: Vec<f64>,
}

/// Nodal finite-element representation of one lift map over one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sheet {
    pub id: SheetId,
    pub block: BlockId,
    pub grid: Grid,
    pub n_components: usize,
    /// `values[node * n_components + component]`.
    pub values: Vec<f64>,
    /// Imaginary parts from a complex solve, same layout as `values`.
    pub imag: Option<Vec<f64>>,
    pub anchor: Anchor,
    pub prune_mask: Vec<bool>,
    pub objective_value: f64,
    pub degenerate: bool,
}

impl Sheet {
    pub fn new(grid: Grid, n_components: usize, values: Vec<f64>, anchor: Anchor) -> Self {
        assert_eq!(values.len(), grid.n_nodes() * n_components);
        let n = grid.n_nodes();
        Sheet {
            id: 0,
            block: BlockId(Vec::new()),
            grid,
            n_components,
            values,
            imag: None,
            anchor,
            prune_mask: vec![false; n],
            objective_value: 0.0,
            degenerate: false,
        }
    }

    /// Sheet sampled from a function of the coarse point.
    pub fn from_fn<F>(grid: Grid, n_components: usize, anchor: Anchor, mut f: F) -> Self
    where
        F: FnMut(&[f64]) -> Vec<f64>,
    {
        let mut values = Vec::with_capacity(grid.n_nodes() * n_components);
        for i in 0..grid.n_nodes() {
            let v = f(&grid.node_coords(i));
            assert_eq!(v.len(), n_components);
            values.extend(v);
        }
        Sheet::new(grid, n_components, values, anchor)
    }

    pub fn node_value(&self, node: usize, comp: usize) -> f64 {
        self.values[node * self.n_components + comp]
    }

    fn defined_cell(&self, c: &[f64]) -> Result<(crate::grid::Cell, Vec<usize>)> {
        let pruned = || PlimError::Pruned {
            sheet: self.id,
            point: c.to_vec(),
        };
        if self.degenerate {
            return Err(pruned());
        }
        let cell = self.grid.locate(c).ok_or_else(pruned)?;
        let corners = self.grid.corner_nodes(&cell.element);
        if !corners.iter().any(|&n| self.prune_mask[n]) {
            return Ok((cell, corners));
        }
        // A point on an element face may still be covered by the neighbour below.
        let d = self.grid.dim();
        for k in 0..d {
            if cell.local[k] == 0.0 && cell.element[k] > 0 {
                let mut alt = cell.clone();
                alt.element[k] -= 1;
                alt.local[k] = 1.0;
                let corners = self.grid.corner_nodes(&alt.element);
                if !corners.iter().any(|&n| self.prune_mask[n]) {
                    return Ok((alt, corners));
                }
            }
        }
        Err(pruned())
    }

    pub fn is_defined_at(&self, c: &[f64]) -> bool {
        self.defined_cell(c).is_ok()
    }

    pub fn eval_into(&self, c: &[f64], out: &mut [f64]) -> Result<()> {
        let (cell, corners) = self.defined_cell(c)?;
        let mut w = vec![0.0; corners.len()];
        self.grid.shape(&cell.local, &mut w);
        let m = self.n_components;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (wi, &node) in w.iter().zip(&corners) {
            let row = &self.values[node * m..(node + 1) * m];
            for (o, v) in out.iter_mut().zip(row) {
                *o += wi * v;
            }
        }
        Ok(())
    }

    /// Multilinear interpolation of the nodal values.
    pub fn eval(&self, c: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_components];
        self.eval_into(c, &mut out)?;
        Ok(out)
    }

    /// Gradient of the interpolant, `out[comp * d + k]`.
    pub fn grad(&self, c: &[f64]) -> Result<Vec<f64>> {
        let (cell, corners) = self.defined_cell(c)?;
        let d = self.grid.dim();
        let mut dn = vec![0.0; corners.len() * d];
        self.grid.shape_grad(&cell.local, &mut dn);
        let m = self.n_components;
        let mut out = vec![0.0; m * d];
        for (ci, &node) in corners.iter().enumerate() {
            for comp in 0..m {
                let v = self.values[node * m + comp];
                for k in 0..d {
                    out[comp * d + k] += v * dn[ci * d + k];
                }
            }
        }
        Ok(out)
    }

    /// Minimal-norm change of the anchor element's corner values so the anchor holds exactly.
    pub fn enforce_anchor(&mut self) {
        let Some(cell) = self.grid.locate(&self.anchor.coarse) else {
            return;
        };
        let corners = self.grid.corner_nodes(&cell.element);
        let mut w = vec![0.0; corners.len()];
        self.grid.shape(&cell.local, &mut w);
        let w2: f64 = w.iter().map(|x| x * x).sum();
        let m = self.n_components;
        for comp in 0..m {
            let v: f64 = corners
                .iter()
                .zip(&w)
                .map(|(&n, wi)| wi * self.values[n * m + comp])
                .sum();
            let err = self.anchor.data[comp] - v;
            for (&n, wi) in corners.iter().zip(&w) {
                self.values[n * m + comp] += err * wi / w2;
            }
        }
    }

    pub fn anchor_error(&self) -> f64 {
        match self.eval(&self.anchor.coarse) {
            Ok(g) => g
                .iter()
                .zip(&self.anchor.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
            Err(_) => f64::INFINITY,
        }
    }
}

pub fn sheet_eval(sheet: &Sheet, c: &[f64]) -> Result<Vec<f64>> {
    sheet.eval(c)
}

pub fn sheet_grad(sheet: &Sheet, c: &[f64]) -> Result<Vec<f64>> {
    sheet.grad(c)
}

/// Result of a nearest-sheet search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub id: SheetId,
    pub distance: f64,
}

/// Produces new sheets on demand.
pub trait SheetSolver: Sync {
    fn solve(&self, grid: &Grid, anchor: &Anchor) -> Result<Sheet>;
}

#[derive(Debug, Clone)]
pub struct Atlas {
    pub system: String,
    pub projection: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub block_size: Vec<f64>,
    pub mesh: Vec<usize>,
    pub generation: BTreeMap<String, f64>,
    counts: Vec<i64>,
    sheets: Vec<Sheet>,
    by_block: BTreeMap<BlockId, Vec<usize>>,
    by_id: HashMap<SheetId, usize>,
    next_id: SheetId,
}

impl PartialEq for Atlas {
    fn eq(&self, other: &Self) -> bool {
        self.system == other.system
            && self.projection == other.projection
            && self.lower == other.lower
            && self.upper == other.upper
            && self.block_size == other.block_size
            && self.mesh == other.mesh
            && self.generation == other.generation
            && self.sheets == other.sheets
            && self.next_id == other.next_id
    }
}

impl Atlas {
    pub fn new(
        system: impl Into<String>,
        projection: impl Into<String>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        block_size: Vec<f64>,
        mesh: Vec<usize>,
    ) -> Result<Self> {
        let d = lower.len();
        if d == 0 || upper.len() != d || block_size.len() != d || mesh.len() != d {
            return Err(PlimError::config(
                "atlas bounds, block size and mesh must share a dimension",
            ));
        }
        let mut counts = Vec::with_capacity(d);
        for k in 0..d {
            let extent = upper[k] - lower[k];
            if !(extent > 0.0) || !(block_size[k] > 0.0) || mesh[k] < 2 {
                return Err(PlimError::config("degenerate atlas domain, block size or mesh"));
            }
            let n = (extent / block_size[k]).round();
            if n < 1.0 || (n * block_size[k] - extent).abs() > 1e-9 * extent {
                return Err(PlimError::config(format!(
                    "block size {} does not tile extent {extent}",
                    block_size[k]
                )));
            }
            counts.push(n as i64);
        }
        Ok(Atlas {
            system: system.into(),
            projection: projection.into(),
            lower,
            upper,
            block_size,
            mesh,
            generation: BTreeMap::new(),
            counts,
            sheets: Vec::new(),
            by_block: BTreeMap::new(),
            by_id: HashMap::new(),
            next_id: 1,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn block_counts(&self) -> &[i64] {
        &self.counts
    }

    pub fn n_blocks(&self) -> usize {
        self.counts.iter().product::<i64>() as usize
    }

    pub fn contains(&self, c: &[f64]) -> bool {
        c.len() == self.dim()
            && (0..self.dim()).all(|k| {
                let tol = 1e-12 * (self.upper[k] - self.lower[k]);
                c[k] >= self.lower[k] - tol && c[k] <= self.upper[k] + tol
            })
    }

    /// Containing block; shared faces go to the larger lattice index.
    pub fn block_of(&self, c: &[f64]) -> Result<BlockId> {
        if !self.contains(c) || c.iter().any(|v| !v.is_finite()) {
            return Err(PlimError::OutOfDomain { point: c.to_vec() });
        }
        let idx = (0..self.dim())
            .map(|k| {
                let q = (c[k] - self.lower[k]) / self.block_size[k];
                let r = q.round();
                let q = if (q - r).abs() < 1e-9 { r } else { q };
                (q.floor() as i64).clamp(0, self.counts[k] - 1)
            })
            .collect();
        Ok(BlockId(idx))
    }

    pub fn block(&self, id: &BlockId) -> Result<Block> {
        if id.0.len() != self.dim() || id.0.iter().zip(&self.counts).any(|(&i, &n)| i < 0 || i >= n) {
            return Err(PlimError::precondition(format!("block {:?} outside lattice", id.0)));
        }
        let lower: Vec<f64> = (0..self.dim())
            .map(|k| self.lower[k] + id.0[k] as f64 * self.block_size[k])
            .collect();
        let upper: Vec<f64> = (0..self.dim())
            .map(|k| {
                if id.0[k] + 1 == self.counts[k] {
                    self.upper[k]
                } else {
                    self.lower[k] + (id.0[k] + 1) as f64 * self.block_size[k]
                }
            })
            .collect();
        Ok(Block {
            id: id.clone(),
            grid: Grid::new(lower, upper, self.mesh.clone())?,
        })
    }

    pub fn block_ids(&self) -> Vec<BlockId> {
        let n = self.n_blocks();
        (0..n)
            .map(|mut i| {
                let mut v = Vec::with_capacity(self.dim());
                for &c in &self.counts {
                    v.push(i as i64 % c);
                    i /= c as usize;
                }
                BlockId(v)
            })
            .collect()
    }

    pub fn sheets(&self) -> &[Sheet] {
        &self.sheets
    }

    pub fn len(&self) -> usize {
        self.sheets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sheets.is_empty()
    }

    pub fn sheet(&self, id: SheetId) -> Result<&Sheet> {
        self.by_id
            .get(&id)
            .map(|&i| &self.sheets[i])
            .ok_or(PlimError::MissingSheet(id))
    }

    pub fn sheets_in(&self, block: &BlockId) -> impl Iterator<Item = &Sheet> {
        self.by_block
            .get(block)
            .into_iter()
            .flat_map(move |v| v.iter().map(move |&i| &self.sheets[i]))
    }

    pub fn block_len(&self, block: &BlockId) -> usize {
        self.by_block.get(block).map_or(0, |v| v.len())
    }

    /// Inserts a sheet solved on `block`, assigning a fresh id.
    pub fn insert(&mut self, block: &BlockId, mut sheet: Sheet) -> Result<SheetId> {
        let b = self.block(block)?;
        if sheet.grid != b.grid {
            return Err(PlimError::precondition("sheet grid does not match its block"));
        }
        sheet.id = self.next_id;
        sheet.block = block.clone();
        self.next_id += 1;
        self.push_sheet(sheet)
    }

    pub(crate) fn push_sheet(&mut self, sheet: Sheet) -> Result<SheetId> {
        if self.by_id.contains_key(&sheet.id) {
            return Err(PlimError::precondition(format!("duplicate sheet id {}", sheet.id)));
        }
        let id = sheet.id;
        self.next_id = self.next_id.max(id + 1);
        let idx = self.sheets.len();
        self.by_block.entry(sheet.block.clone()).or_default().push(idx);
        self.by_id.insert(id, idx);
        self.sheets.push(sheet);
        Ok(id)
    }

    pub(crate) fn next_id(&self) -> SheetId {
        self.next_id
    }

    pub(crate) fn set_next_id(&mut self, id: SheetId) {
        self.next_id = id;
    }

    /// Nearest sheet in `block` to the eliminated coordinates of `f`.
    ///
    /// Near-ties (within `tie_tol`) prefer the sheet whose coarse rate has the larger
    /// inner product with the projected hint, then the lower id.
    pub fn select_sheet(
        &self,
        block: &BlockId,
        proj: &ProjectionMap,
        f: &[f64],
        hint: Option<(&FineSystem, &[f64])>,
        tie_tol: f64,
        filter: &dyn Fn(&Sheet, &[f64]) -> bool,
    ) -> Result<Selection> {
        let c = proj.apply(f);
        let target = proj.eliminated_of(f);
        let mut cands: Vec<(f64, SheetId)> = Vec::new();
        let mut g = Vec::new();
        for s in self.sheets_in(block) {
            g.resize(s.n_components, 0.0);
            if s.eval_into(&c, &mut g).is_err() || !filter(s, &c) {
                continue;
            }
            let d2: f64 = g.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum();
            cands.push((d2.sqrt(), s.id));
        }
        if cands.is_empty() {
            return Err(PlimError::NoCandidate { block: block.0.clone() });
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let best = cands[0];
        let tied: Vec<(f64, SheetId)> = cands.iter().copied().take_while(|x| x.0 - best.0 < tie_tol).collect();
        if tied.len() > 1 {
            if let Some((sys, h)) = hint {
                let hc = proj.apply(h);
                let mut scored = Vec::with_capacity(tied.len());
                for &(dist, id) in &tied {
                    let s = self.sheet(id)?;
                    let rate = crate::dynamics::coarse_rhs(sys, proj, s, &c)?;
                    let ip: f64 = rate.iter().zip(&hc).map(|(a, b)| a * b).sum();
                    scored.push((ip, dist, id));
                }
                scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)));
                let (_, distance, id) = scored[0];
                return Ok(Selection { id, distance });
            }
        }
        Ok(Selection {
            id: best.1,
            distance: best.0,
        })
    }

    /// Returns a sheet within `threshold` of `f`, solving and inserting one if needed.
    pub fn ensure_sheet(
        &mut self,
        block: &BlockId,
        proj: &ProjectionMap,
        f: &[f64],
        solver: &dyn SheetSolver,
        threshold: f64,
    ) -> Result<(Selection, bool)> {
        match self.select_sheet(block, proj, f, None, 0.0, &|_, _| true) {
            Ok(sel) if sel.distance <= threshold => return Ok((sel, false)),
            Ok(_) | Err(PlimError::NoCandidate { .. }) => {}
            Err(e) => return Err(e),
        }
        let b = self.block(block)?;
        let anchor = Anchor {
            coarse: proj.apply(f),
            data: proj.eliminated_of(f),
        };
        let sheet = solver.solve(&b.grid, &anchor)?;
        let distance = sheet
            .eval(&anchor.coarse)
            .map(|g| {
                g.iter()
                    .zip(&anchor.data)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .unwrap_or(f64::INFINITY);
        let id = self.insert(block, sheet)?;
        Ok((Selection { id, distance }, true))
    }

    /// Keeps only the sheets for which `keep` returns true.
    pub fn retain(&mut self, mut keep: impl FnMut(&Sheet) -> bool) {
        let sheets = std::mem::take(&mut self.sheets);
        self.by_block.clear();
        self.by_id.clear();
        let next = self.next_id;
        for s in sheets.into_iter().filter(|s| keep(s)) {
            self.push_sheet(s).expect("ids stay unique");
        }
        self.next_id = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lorenz_atlas() -> Atlas {
        Atlas::new(
            "lorenz",
            "select:3:0,2",
            vec![-24.0, 0.0],
            vec![24.0, 48.0],
            vec![4.0, 4.0],
            vec![6, 6],
        )
        .unwrap()
    }

    fn const_sheet(grid: &Grid, k: f64) -> Sheet {
        let anchor = Anchor {
            coarse: grid.lower.clone(),
            data: vec![k],
        };
        Sheet::from_fn(grid.clone(), 1, anchor, |_| vec![k])
    }

    #[test]
    fn block_lookup_and_tie_break() {
        let a = lorenz_atlas();
        let b = a.block(&a.block_of(&[0.5, 8.2]).unwrap()).unwrap();
        assert_eq!(b.grid.lower, vec![0.0, 8.0]);
        assert_eq!(b.grid.upper, vec![4.0, 12.0]);
        assert_eq!(a.block_of(&[0.0, 8.0]).unwrap(), a.block_of(&[0.5, 8.2]).unwrap());
        assert!(matches!(a.block_of(&[25.0, 0.0]), Err(PlimError::OutOfDomain { .. })));
        assert_eq!(a.block_of(&[24.0, 48.0]).unwrap(), BlockId(vec![11, 11]));
        assert_eq!(a.n_blocks(), 144);
    }

    #[test]
    fn eval_node_and_edge_midpoint() {
        let g = Grid::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![3, 3]).unwrap();
        let anchor = Anchor {
            coarse: vec![0.0, 0.0],
            data: vec![0.0],
        };
        let s = Sheet::from_fn(g, 1, anchor, |c| vec![c[0] * c[0] + 3.0 * c[1]]);
        assert_eq!(s.eval(&[0.5, 0.5]).unwrap()[0], 0.25 + 1.5);
        let mid = s.eval(&[0.25, 0.0]).unwrap()[0];
        assert!((mid - 0.5 * (0.0 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn linear_field_gradient() {
        let g = Grid::new(vec![-1.0, 2.0], vec![3.0, 5.0], vec![6, 4]).unwrap();
        let anchor = Anchor {
            coarse: vec![-1.0, 2.0],
            data: vec![-1.0],
        };
        let s = Sheet::from_fn(g, 1, anchor, |c| vec![c[0]]);
        let gr = s.grad(&[0.3, 4.1]).unwrap();
        assert!((gr[0] - 1.0).abs() < 1e-14 && gr[1].abs() < 1e-14);
    }

    #[test]
    fn pruned_corner_blocks_evaluation() {
        let g = Grid::new(vec![0.0], vec![1.0], vec![3]).unwrap();
        let mut s = const_sheet(&g, 1.0);
        s.prune_mask[2] = true;
        assert!(s.eval(&[0.25]).is_ok());
        assert!(matches!(s.eval(&[0.75]), Err(PlimError::Pruned { .. })));
    }

    #[test]
    fn nearest_value_selection() {
        let mut a = Atlas::new("t", "select:2:0", vec![0.0], vec![1.0], vec![1.0], vec![3]).unwrap();
        let b = BlockId(vec![0]);
        let grid = a.block(&b).unwrap().grid;
        for k in [1.0, 2.5, -3.0] {
            a.insert(&b, const_sheet(&grid, k)).unwrap();
        }
        let p = ProjectionMap::selection(2, &[0]).unwrap();
        let sel = a.select_sheet(&b, &p, &[0.5, 2.2], None, 1e-9, &|_, _| true).unwrap();
        assert_eq!(a.sheet(sel.id).unwrap().values[0], 2.5);
        assert!((sel.distance - 0.3).abs() < 1e-12);
    }

    #[test]
    fn empty_block_has_no_candidate() {
        let a = Atlas::new("t", "select:2:0", vec![0.0], vec![1.0], vec![1.0], vec![3]).unwrap();
        let p = ProjectionMap::selection(2, &[0]).unwrap();
        let r = a.select_sheet(&BlockId(vec![0]), &p, &[0.5, 0.0], None, 1e-9, &|_, _| true);
        assert!(matches!(r, Err(PlimError::NoCandidate { .. })));
    }

    #[test]
    fn hint_breaks_ties() {
        let sys = FineSystem::new("osc", 2, |f, out| {
            out[0] = -f[1];
            out[1] = f[0];
        });
        let p = ProjectionMap::selection(2, &[0]).unwrap();
        let mut a = Atlas::new("osc", "select:2:0", vec![-1.0], vec![1.0], vec![2.0], vec![3]).unwrap();
        let b = BlockId(vec![0]);
        let grid = a.block(&b).unwrap().grid;
        a.insert(&b, const_sheet(&grid, 1.0)).unwrap();
        let down = a.insert(&b, const_sheet(&grid, -1.0)).unwrap();
        let f = [0.0, 0.0];
        let hint = [1.0, 0.0];
        let sel = a
            .select_sheet(&b, &p, &f, Some((&sys, &hint)), 1e-9, &|_, _| true)
            .unwrap();
        assert_eq!(sel.id, down);
        let sel = a.select_sheet(&b, &p, &f, None, 1e-9, &|_, _| true).unwrap();
        assert_eq!(sel.id, 1);
    }

    #[test]
    fn retain_preserves_ids() {
        let mut a = Atlas::new("t", "select:2:0", vec![0.0], vec![2.0], vec![1.0], vec![2]).unwrap();
        for i in 0..2 {
            let b = BlockId(vec![i]);
            let g = a.block(&b).unwrap().grid;
            a.insert(&b, const_sheet(&g, i as f64)).unwrap();
        }
        a.retain(|s| s.id == 2);
        assert_eq!(a.len(), 1);
        assert!(a.sheet(2).is_ok());
        assert_eq!(a.block_len(&BlockId(vec![0])), 0);
    }
}
