//! Lax–Friedrichs fast sweeping for `Σ_j (X_j T)² = 1` in `Ω`, `T = 0` on Γ.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charset::hamiltonian;
use crate::domain::{LevelSetDomain, NodeClass};
use crate::error::{check_dim, Error, Result};
use crate::extremal::{bang_controls, transfer_time, Control};
use crate::linalg;
use crate::poly::VectorFieldSystem;
use crate::tolerances::Tolerances;

/// Cartesian grid over a box; node `i` on axis `k` sits at `lo_k + i h_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    bbox: Vec<[f64; 2]>,
    res: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(bbox: Vec<[f64; 2]>, res: Vec<usize>) -> Result<Self> {
        check_dim(bbox.len(), res.len())?;
        if let Some(m) = res.iter().find(|&&m| m < 8) {
            return Err(Error::InvalidGrid(format!("resolution {m} below 8 nodes per axis")));
        }
        if bbox.iter().any(|[lo, hi]| !(hi > lo)) {
            return Err(Error::InvalidGrid(format!("degenerate box {bbox:?}")));
        }
        let spacing = bbox
            .iter()
            .zip(&res)
            .map(|([lo, hi], &m)| (hi - lo) / (m - 1) as f64)
            .collect();
        let mut strides = vec![1; res.len()];
        for k in 1..res.len() {
            strides[k] = strides[k - 1] * res[k - 1];
        }
        Ok(Grid {
            bbox,
            res,
            spacing,
            strides,
        })
    }

    /// `m` nodes per axis over the domain's bounding box.
    pub fn covering(dom: &LevelSetDomain, m: usize) -> Result<Self> {
        Grid::new(dom.bbox().to_vec(), vec![m; dom.dim()])
    }

    pub fn dim(&self) -> usize {
        self.res.len()
    }

    pub fn len(&self) -> usize {
        self.res.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bbox(&self) -> &[[f64; 2]] {
        &self.bbox
    }

    pub fn resolution(&self) -> &[usize] {
        &self.res
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut lin: usize) -> Vec<usize> {
        self.res
            .iter()
            .map(|&m| {
                let i = lin % m;
                lin /= m;
                i
            })
            .collect()
    }

    pub fn node(&self, lin: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.node_into(lin, &mut x);
        x
    }

    pub fn node_into(&self, mut lin: usize, out: &mut [f64]) {
        for k in 0..self.dim() {
            let i = lin % self.res[k];
            lin /= self.res[k];
            out[k] = self.bbox[k][0] + i as f64 * self.spacing[k];
        }
    }

    fn on_edge(&self, lin: usize) -> bool {
        self.multi_index(lin)
            .iter()
            .zip(&self.res)
            .any(|(&i, &m)| i == 0 || i + 1 == m)
    }

    /// Same box, and every coarse node is a fine node (`m_f − 1 = 2 (m_c − 1)`).
    pub fn is_refinement_of(&self, coarse: &Grid) -> bool {
        self.bbox == coarse.bbox
            && self.res.len() == coarse.res.len()
            && self.res.iter().zip(&coarse.res).all(|(&f, &c)| f - 1 == 2 * (c - 1))
    }

    pub fn nearest_node(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dim() {
            return None;
        }
        let mut idx = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let t = ((x[k] - self.bbox[k][0]) / self.spacing[k]).round();
            if t < 0.0 || t > (self.res[k] - 1) as f64 {
                return None;
            }
            idx.push(t as usize);
        }
        Some(self.index(&idx))
    }

    /// Linear indices of the nodes with `|y − x| ≤ r`.
    pub fn nodes_in_ball(&self, x: &[f64], r: f64) -> Vec<usize> {
        let n = self.dim();
        let mut lo = vec![0usize; n];
        let mut hi = vec![0usize; n];
        for k in 0..n {
            let a = ((x[k] - r - self.bbox[k][0]) / self.spacing[k]).ceil().max(0.0);
            let b = ((x[k] + r - self.bbox[k][0]) / self.spacing[k])
                .floor()
                .min((self.res[k] - 1) as f64);
            if b < a {
                return Vec::new();
            }
            lo[k] = a as usize;
            hi[k] = b as usize;
        }
        let mut out = Vec::new();
        let mut idx = lo.clone();
        let mut y = vec![0.0; n];
        loop {
            for k in 0..n {
                y[k] = self.bbox[k][0] + idx[k] as f64 * self.spacing[k];
            }
            if linalg::dist(&y, x) <= r {
                out.push(self.index(&idx));
            }
            let mut k = 0;
            loop {
                if k == n {
                    return out;
                }
                if idx[k] < hi[k] {
                    idx[k] += 1;
                    break;
                }
                idx[k] = lo[k];
                k += 1;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub sweeps: usize,
    pub residual: f64,
    pub converged: bool,
    pub conv_tol: f64,
    /// Per-axis viscosity `α_i`.
    pub alpha: Vec<f64>,
}

/// Metadata written next to the CSV dump of a solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveMetadata {
    pub resolution: Vec<usize>,
    pub sweeps: usize,
    pub residual: f64,
    pub converged: bool,
}

/// `T` on the grid. Exterior nodes hold `+∞` except a one-node ghost layer
/// around `Ω̄`, which carries a negative extension of the boundary data.
#[derive(Clone, Debug)]
pub struct ScalarGridField {
    grid: Grid,
    values: Vec<f64>,
    node_class: Vec<NodeClass>,
    /// `Φ ≤ 0` at the node.
    inside: Vec<bool>,
    frozen: Vec<bool>,
    stats: SolveStats,
    // X_j at updatable nodes, `slot[lin] * N * n ..`
    slot: Vec<u32>,
    cache: Vec<f64>,
    nfields: usize,
}

const NO_SLOT: u32 = u32::MAX;

/// Seeds the field for a solve: interior nodes start at a large value, band
/// nodes at short simulated transfer times to Γ (see `seed`), and exterior
/// neighbours of updatable nodes at a negative extension.
pub fn initialize(
    dom: &LevelSetDomain,
    grid: &Grid,
    sys: &VectorFieldSystem,
    tol: &Tolerances,
) -> Result<ScalarGridField> {
    check_dim(dom.dim(), grid.dim())?;
    check_dim(dom.dim(), sys.dim())?;
    let n = grid.dim();
    let nf = sys.len();
    let total = grid.len();
    if total >= NO_SLOT as usize {
        return Err(Error::InvalidGrid(format!("{total} nodes is too many")));
    }
    let band_tol = 0.5 * grid.max_spacing();
    let classes: Vec<(NodeClass, bool)> = (0..total)
        .into_par_iter()
        .map(|lin| {
            let x = grid.node(lin);
            (dom.inside(&x, band_tol), dom.phi(&x) <= 0.0)
        })
        .collect();
    let node_class: Vec<NodeClass> = classes.iter().map(|c| c.0).collect();
    let inside: Vec<bool> = classes.iter().map(|c| c.1).collect();
    if !node_class.contains(&NodeClass::BoundaryBand) {
        return Err(Error::InvalidGrid("grid too coarse: no node falls in the boundary band".into()));
    }

    // viscosity α_i = max sqrt(Σ_j X_{j,i}²) over nodes of Ω̄ and the ghost layer
    let near: Vec<usize> = (0..total)
        .filter(|&lin| inside[lin] || node_class[lin] == NodeClass::BoundaryBand)
        .collect();
    let alpha = near
        .par_iter()
        .map(|&lin| {
            let x = grid.node(lin);
            let mut buf = vec![0.0; nf * n];
            sys.eval_all_into(&x, &mut buf);
            (0..n)
                .map(|i| (0..nf).map(|j| buf[j * n + i] * buf[j * n + i]).sum::<f64>().sqrt())
                .collect::<Vec<f64>>()
        })
        .reduce(
            || vec![0.0; n],
            |a, b| a.iter().zip(&b).map(|(u, v)| u.max(*v)).collect(),
        );
    let amin = alpha.iter().cloned().filter(|&a| a > 0.0).fold(f64::INFINITY, f64::min);
    if !amin.is_finite() {
        return Err(Error::InvalidSystem("fields vanish identically near Ω̄".into()));
    }
    let init_value = 10.0 * dom.diameter() / amin.sqrt();

    let mut values = vec![f64::INFINITY; total];
    let mut frozen = vec![true; total];
    for lin in 0..total {
        if inside[lin] && node_class[lin] == NodeClass::Interior {
            values[lin] = init_value;
            frozen[lin] = false;
        }
    }
    let horizon = 10.0 * grid.max_spacing();
    let band: Vec<usize> = (0..total).filter(|&l| node_class[l] == NodeClass::BoundaryBand).collect();
    let seeds: Vec<(f64, bool)> = band
        .par_iter()
        .map(|&lin| seed(dom, sys, &grid.node(lin), horizon, tol))
        .collect();
    for (&lin, &(v, fr)) in band.iter().zip(&seeds) {
        values[lin] = v.min(init_value);
        frozen[lin] = fr;
    }
    for lin in 0..total {
        if !frozen[lin] && grid.on_edge(lin) {
            return Err(Error::InvalidGrid(format!(
                "Ω̄ reaches the grid edge at {:?}",
                grid.node(lin)
            )));
        }
    }
    // ghost layer: exterior neighbours of updatable nodes
    let mut ghosts = Vec::new();
    for lin in 0..total {
        if frozen[lin] {
            continue;
        }
        for &s in grid.strides() {
            for nb in [lin - s, lin + s] {
                if values[nb].is_infinite() {
                    ghosts.push(nb);
                }
            }
        }
    }
    ghosts.sort_unstable();
    ghosts.dedup();
    let ghost_vals: Vec<f64> = ghosts
        .par_iter()
        .map(|&lin| seed(dom, sys, &grid.node(lin), horizon, tol).0)
        .collect();
    for (&lin, &v) in ghosts.iter().zip(&ghost_vals) {
        values[lin] = v;
    }

    let mut slot = vec![NO_SLOT; total];
    let mut count = 0u32;
    for lin in 0..total {
        if !frozen[lin] {
            slot[lin] = count;
            count += 1;
        }
    }
    let mut cache = vec![0.0; count as usize * nf * n];
    cache
        .par_chunks_mut(nf * n)
        .zip(slot.par_iter().enumerate().filter(|(_, &s)| s != NO_SLOT).map(|(l, _)| l).collect::<Vec<_>>())
        .for_each(|(chunk, lin)| sys.eval_all_into(&grid.node(lin), chunk));

    Ok(ScalarGridField {
        grid: grid.clone(),
        values,
        node_class,
        inside,
        frozen,
        stats: SolveStats {
            sweeps: 0,
            residual: f64::INFINITY,
            converged: false,
            conv_tol: tol.conv_tol_rel * dom.diameter(),
            alpha,
        },
        slot,
        cache,
        nfields: nf,
    })
}

/// Value for a node near Γ and whether it is frozen.
///
/// Inside `Ω̄` the value is the transfer time of the constant control
/// `u_j = ⟨X_j(x̂), ν⟩ / sqrt(h(x̂, ν))`, which is `d / sqrt(h)` to first order,
/// and of the bang controls, whichever is least. Each is attained by an
/// admissible control so the seed never undercuts `T`. Only seeds whose
/// boundary point is clearly noncharacteristic are frozen.
///
/// Outside `Ω̄` the value is a negative extension whose magnitude never
/// exceeds the Euclidean distance.
fn seed(
    dom: &LevelSetDomain,
    sys: &VectorFieldSystem,
    x: &[f64],
    horizon: f64,
    tol: &Tolerances,
) -> (f64, bool) {
    let phi = dom.phi(x);
    let xhat = dom.project_to_boundary(x, tol).unwrap_or_else(|_| {
        let g = dom.grad(x);
        let g2: f64 = g.iter().map(|v| v * v).sum();
        x.iter().zip(&g).map(|(a, b)| a - phi / g2 * b).collect()
    });
    let d = linalg::dist(x, &xhat);
    let nu = dom.normal(&xhat).ok();
    let hv = nu.as_ref().map_or(0.0, |nu| hamiltonian(sys, &xhat, nu));
    if phi > 0.0 {
        return (-(d / hv.max(tol.ham_floor).sqrt()).min(d), true);
    }
    let dt = (tol.dt_rel * dom.diameter()).min(horizon / 20.0);
    let time = |c: &Control| transfer_time(sys, dom, x, c, dt, tol).unwrap_or(f64::INFINITY);
    let mut fb = f64::INFINITY;
    if let Some(nu) = nu.as_ref().filter(|_| hv > tol.ham_floor) {
        let u: Vec<f64> = sys.pairings(&xhat, nu).iter().map(|v| v / hv.sqrt()).collect();
        if let Ok(c) = Control::constant(u, horizon) {
            fb = time(&c);
        }
    }
    let best = bang_controls(sys.len(), horizon).iter().map(time).fold(fb, f64::min);
    (best, fb.is_finite() && hv >= tol.freeze_floor)
}

impl ScalarGridField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node_class(&self) -> &[NodeClass] {
        &self.node_class
    }

    pub fn is_inside(&self, lin: usize) -> bool {
        self.inside[lin]
    }

    pub fn is_frozen(&self, lin: usize) -> bool {
        self.frozen[lin]
    }

    pub fn stats(&self) -> &SolveStats {
        &self.stats
    }

    pub fn metadata(&self) -> SolveMetadata {
        SolveMetadata {
            resolution: self.grid.resolution().to_vec(),
            sweeps: self.stats.sweeps,
            residual: self.stats.residual,
            converged: self.stats.converged,
        }
    }

    /// Nodes of `Ω̄` (interior, or band with `Φ ≤ 0`).
    pub fn closure_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.values.len()).filter(move |&l| self.inside[l])
    }

    /// One Gauss–Seidel pass in ordering `ordering ∈ [0, 2^n)`: bit `k` set
    /// means axis `k` is traversed downwards. Returns the max node change.
    pub fn sweep(&mut self, ordering: usize) -> f64 {
        let n = self.grid.dim();
        let nf = self.nfields;
        let res = self.grid.res.clone();
        let strides = self.grid.strides.clone();
        let h = self.grid.spacing.clone();
        let w: Vec<f64> = self.stats.alpha.iter().zip(&h).map(|(a, hi)| a / hi).collect();
        let wsum: f64 = w.iter().sum();
        let mut grad = vec![0.0; n];
        let mut change: f64 = 0.0;

        // odometer over the interior index box, axis 0 fastest
        let mut idx: Vec<usize> = (0..n)
            .map(|k| if ordering >> k & 1 == 1 { res[k] - 2 } else { 1 })
            .collect();
        'outer: loop {
            let lin = self.grid.index(&idx);
            let s = self.slot[lin];
            if s != NO_SLOT {
                let xs = &self.cache[s as usize * nf * n..(s as usize + 1) * nf * n];
                let mut avg = 0.0;
                for k in 0..n {
                    let tp = self.values[lin + strides[k]];
                    let tm = self.values[lin - strides[k]];
                    grad[k] = (tp - tm) / (2.0 * h[k]);
                    avg += w[k] * 0.5 * (tp + tm);
                }
                let mut hh = 0.0;
                for j in 0..nf {
                    let xj = &xs[j * n..(j + 1) * n];
                    let pj: f64 = xj.iter().zip(&grad).map(|(a, b)| a * b).sum();
                    hh += pj * pj;
                }
                let ham = if hh < 1e-30 { 0.0 } else { hh.sqrt() };
                let t_new = (1.0 - ham + avg) / wsum;
                let old = self.values[lin];
                if t_new < old {
                    self.values[lin] = t_new;
                    change = change.max(old - t_new);
                }
            }
            let mut k = 0;
            loop {
                if k == n {
                    break 'outer;
                }
                let down = ordering >> k & 1 == 1;
                if down && idx[k] > 1 {
                    idx[k] -= 1;
                    break;
                }
                if !down && idx[k] + 2 < res[k] {
                    idx[k] += 1;
                    break;
                }
                idx[k] = if down { res[k] - 2 } else { 1 };
                k += 1;
            }
        }
        self.stats.sweeps += 1;
        self.stats.residual = change;
        change
    }

    /// Sweeps through all `2^n` orderings until the change drops below the
    /// convergence tolerance or `max_sweeps` passes have run.
    pub fn iterate(&mut self, max_sweeps: usize) -> &SolveStats {
        let orderings = 1usize << self.grid.dim();
        while self.stats.sweeps < max_sweeps {
            let r = self.sweep(self.stats.sweeps % orderings);
            if r <= self.stats.conv_tol {
                self.stats.converged = true;
                break;
            }
        }
        &self.stats
    }

    /// Multilinear interpolation. Corners at `+∞` are dropped and the
    /// weights renormalized when the heaviest corner lies in `Ω̄`; otherwise
    /// they give `None`.
    pub fn value_at(&self, x: &[f64]) -> Option<f64> {
        let n = self.grid.dim();
        if x.len() != n {
            return None;
        }
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for k in 0..n {
            let t = (x[k] - self.grid.bbox[k][0]) / self.grid.spacing[k];
            let m = self.grid.res[k];
            if t < -1e-9 || t > (m - 1) as f64 + 1e-9 {
                return None;
            }
            let i = (t.floor().max(0.0) as usize).min(m - 2);
            base[k] = i;
            frac[k] = (t - i as f64).clamp(0.0, 1.0);
        }
        let b = self.grid.index(&base);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        let mut dropped = false;
        let mut heaviest = (0.0, b);
        for corner in 0..(1usize << n) {
            let mut wgt = 1.0;
            let mut lin = b;
            for k in 0..n {
                if corner >> k & 1 == 1 {
                    wgt *= frac[k];
                    lin += self.grid.strides[k];
                } else {
                    wgt *= 1.0 - frac[k];
                }
            }
            if wgt == 0.0 {
                continue;
            }
            if wgt > heaviest.0 {
                heaviest = (wgt, lin);
            }
            let v = self.values[lin];
            if v.is_finite() {
                acc += wgt * v;
                wsum += wgt;
            } else {
                dropped = true;
            }
        }
        if dropped && !(wsum > 0.0 && self.inside[heaviest.1]) {
            return None;
        }
        Some(acc / wsum)
    }

    /// CSV `x1,…,xn,T,node_class`; `T` is `inf` outside the ghost layer.
    pub fn to_csv(&self) -> String {
        let n = self.grid.dim();
        let mut s = String::with_capacity(self.values.len() * 48);
        for k in 1..=n {
            let _ = write!(s, "x{k},");
        }
        s.push_str("T,node_class\n");
        let mut x = vec![0.0; n];
        for lin in 0..self.values.len() {
            self.grid.node_into(lin, &mut x);
            for v in &x {
                let _ = write!(s, "{v},");
            }
            let _ = writeln!(s, "{},{}", self.values[lin], self.node_class[lin].as_str());
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn write_metadata(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.metadata())?)?;
        Ok(())
    }
}

/// Initializes and sweeps to convergence. Hitting `max_sweeps` is reported
/// through `stats().converged`, not as an error.
pub fn solve(
    dom: &LevelSetDomain,
    grid: &Grid,
    sys: &VectorFieldSystem,
    tol: &Tolerances,
) -> Result<ScalarGridField> {
    let mut field = initialize(dom, grid, sys, tol)?;
    field.iterate(tol.max_sweeps);
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{domains, fields};

    fn disc() -> LevelSetDomain {
        domains::ball(&[0.0, 0.0], 1.0, 1.15)
    }

    #[test]
    fn grid_basics() {
        let g = Grid::new(vec![[0.0, 1.0], [-1.0, 1.0]], vec![11, 21]).unwrap();
        assert_eq!(g.len(), 231);
        assert_eq!(g.spacing(), &[0.1, 0.1]);
        let lin = g.index(&[3, 7]);
        assert_eq!(g.multi_index(lin), vec![3, 7]);
        let x = g.node(lin);
        assert!((x[0] - 0.3).abs() < 1e-15 && (x[1] + 0.3).abs() < 1e-15);
        assert_eq!(g.nearest_node(&[0.31, -0.29]), Some(lin));
        assert_eq!(g.nodes_in_ball(&x, 0.1 + 1e-12).len(), 5);
        assert!(Grid::new(vec![[0.0, 1.0]], vec![4]).is_err());
        let f = Grid::new(vec![[0.0, 1.0], [-1.0, 1.0]], vec![21, 41]).unwrap();
        assert!(f.is_refinement_of(&g) && !g.is_refinement_of(&f));
    }

    #[test]
    fn riemannian_seeds_are_distances() {
        let dom = disc();
        let sys = fields::riemannian(2);
        let grid = Grid::covering(&dom, 65).unwrap();
        let f = initialize(&dom, &grid, &sys, &Tolerances::default()).unwrap();
        let mut bands = 0;
        for lin in 0..grid.len() {
            if f.node_class()[lin] == NodeClass::BoundaryBand {
                let x = grid.node(lin);
                let d = 1.0 - linalg::norm(&x);
                assert!((f.values()[lin] - d).abs() < 1e-9, "{x:?}");
                bands += 1;
            }
        }
        assert!(bands > 50);
    }

    #[test]
    fn unusable_grids_are_rejected() {
        let dom = disc();
        assert!(matches!(Grid::covering(&dom, 4), Err(Error::InvalidGrid(_))));
        let sys = fields::riemannian(2);
        let away = Grid::new(vec![[5.0, 6.0], [5.0, 6.0]], vec![9, 9]).unwrap();
        assert!(matches!(
            initialize(&dom, &away, &sys, &Tolerances::default()),
            Err(Error::InvalidGrid(_))
        ));
        let tight = Grid::new(vec![[-1.0, 1.0], [-0.5, 0.5]], vec![17, 9]).unwrap();
        assert!(matches!(
            initialize(&dom, &tight, &sys, &Tolerances::default()),
            Err(Error::InvalidGrid(_))
        ));
    }

    #[test]
    fn heisenberg_pole_seed_is_a_bang_time() {
        let tol = Tolerances::default();
        let dom = domains::ball(&[0.0; 3], 1.0, 1.15);
        let sys = fields::heisenberg();
        let x = [0.0, 0.0, 0.99];
        let (v, frozen) = seed(&dom, &sys, &x, 0.4, &tol);
        assert!(!frozen);
        // bang control along x1 or x2 hits the sphere at |x1| = sqrt(1 - 0.99²)
        assert!((v - (1.0f64 - 0.99 * 0.99).sqrt()).abs() < 1e-9, "{v}");
    }

    #[test]
    fn disc_solution_is_distance_to_circle() {
        let dom = disc();
        let sys = fields::riemannian(2);
        let tol = Tolerances::default();
        let grid = Grid::covering(&dom, 129).unwrap();
        let f = solve(&dom, &grid, &sys, &tol).unwrap();
        assert!(f.stats().converged, "{:?}", f.stats());
        let h = grid.max_spacing();
        let t0 = f.value_at(&[0.0, 0.0]).unwrap();
        assert!((t0 - 1.0).abs() <= 3.0 * h, "{t0}");
        for lin in f.closure_nodes() {
            let x = grid.node(lin);
            assert!(f.values()[lin] >= 0.0);
            assert!((f.values()[lin] - (1.0 - linalg::norm(&x))).abs() <= 3.0 * h);
        }
    }

    #[test]
    fn sweeps_never_increase_values() {
        let dom = domains::ball(&[0.0; 3], 1.0, 1.15);
        let sys = fields::heisenberg();
        let grid = Grid::covering(&dom, 17).unwrap();
        let mut f = initialize(&dom, &grid, &sys, &Tolerances::default()).unwrap();
        for o in 0..24 {
            let before = f.values().to_vec();
            f.sweep(o % 8);
            assert!(f.values().iter().zip(&before).all(|(a, b)| a <= b));
        }
    }

    #[test]
    fn csv_has_header_and_one_row_per_node() {
        let dom = disc();
        let sys = fields::riemannian(2);
        let grid = Grid::covering(&dom, 9).unwrap();
        let f = initialize(&dom, &grid, &sys, &Tolerances::default()).unwrap();
        let csv = f.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("x1,x2,T,node_class"));
        assert_eq!(lines.count(), 81);
        assert!(csv.contains(",inf,exterior"));
    }
}
