//! Trajectories of `ẏ = Σ u_j X_j(y)`, transfer times to Γ, Pontryagin
//! extremals and singular arcs.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charset::hamiltonian;
use crate::domain::{BoundaryPoint, LevelSetDomain};
use crate::error::{check_dim, Error, Result};
use crate::lie::random_unit;
use crate::linalg;
use crate::poly::{lie_bracket, CompiledField, VectorFieldSystem};
use crate::tolerances::Tolerances;

/// Piecewise-constant control: `values[i]` on `[times[i], times[i+1])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Control {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl Control {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() || times.len() != values.len() + 1 {
            return Err(Error::Precondition(format!(
                "{} breakpoints for {} pieces",
                times.len(),
                values.len()
            )));
        }
        if times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("breakpoints must increase from 0".into()));
        }
        let nf = values[0].len();
        for v in &values {
            check_dim(nf, v.len())?;
            if linalg::norm(v) > 1.0 + 1e-12 {
                return Err(Error::Precondition(format!("|u| = {} exceeds 1", linalg::norm(v))));
            }
        }
        Ok(Control { times, values })
    }

    pub fn constant(u: Vec<f64>, t_max: f64) -> Result<Self> {
        Control::new(vec![0.0, t_max], vec![u])
    }

    /// Between 1 and 8 pieces with uniform breakpoints and unit directions.
    pub fn random<R: Rng>(nfields: usize, t_max: f64, rng: &mut R) -> Self {
        let pieces = rng.random_range(1..=8usize);
        let mut cuts: Vec<f64> = (1..pieces).map(|_| rng.random_range(0.0..t_max)).collect();
        cuts.sort_by(f64::total_cmp);
        let mut times = vec![0.0];
        times.extend(cuts);
        times.push(t_max);
        times.dedup();
        let values = (0..times.len() - 1).map(|_| random_unit(nfields, rng)).collect();
        Control { times, values }
    }

    pub fn t_max(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn nfields(&self) -> usize {
        self.values[0].len()
    }

    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, &[f64])> {
        self.times
            .windows(2)
            .zip(&self.values)
            .map(|(w, v)| (w[0], w[1], v.as_slice()))
    }

    pub fn value_at(&self, t: f64) -> &[f64] {
        let i = self.times[1..].partition_point(|&b| b <= t).min(self.values.len() - 1);
        &self.values[i]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `+∞` when Γ is not reached before the control's horizon.
    pub transfer_time: f64,
}

fn drift(sys: &VectorFieldSystem, y: &[f64], u: &[f64], buf: &mut [f64], out: &mut [f64]) {
    let n = y.len();
    sys.eval_all_into(y, buf);
    out.iter_mut().for_each(|v| *v = 0.0);
    for (j, uj) in u.iter().enumerate() {
        if *uj != 0.0 {
            for i in 0..n {
                out[i] += uj * buf[j * n + i];
            }
        }
    }
}

struct Rk4<'a> {
    sys: &'a VectorFieldSystem,
    buf: Vec<f64>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl<'a> Rk4<'a> {
    fn new(sys: &'a VectorFieldSystem) -> Self {
        let n = sys.dim();
        Rk4 {
            sys,
            buf: vec![0.0; n * sys.len()],
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
        }
    }

    fn step(&mut self, y: &[f64], u: &[f64], h: f64, out: &mut [f64]) {
        let n = y.len();
        drift(self.sys, y, u, &mut self.buf, &mut self.k[0]);
        for s in 1..4 {
            let c = if s == 3 { h } else { 0.5 * h };
            for i in 0..n {
                self.tmp[i] = y[i] + c * self.k[s - 1][i];
            }
            let (_, tail) = self.k.split_at_mut(s);
            drift(self.sys, &self.tmp, u, &mut self.buf, &mut tail[0]);
        }
        for i in 0..n {
            out[i] = y[i] + h / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
        }
    }
}

fn integrate(
    sys: &VectorFieldSystem,
    dom: &LevelSetDomain,
    x: &[f64],
    control: &Control,
    dt: f64,
    tol: &Tolerances,
    record: bool,
) -> Result<Trajectory> {
    check_dim(sys.dim(), x.len())?;
    check_dim(sys.len(), control.nfields())?;
    let phi0 = dom.phi(x);
    if phi0 > tol.proj_tol {
        return Err(Error::Precondition(format!("start point {x:?} lies outside Ω̄")));
    }
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x.to_vec()],
        transfer_time: f64::INFINITY,
    };
    if phi0 >= -tol.touch_tol {
        traj.transfer_time = 0.0;
        return Ok(traj);
    }
    let n = x.len();
    let mut rk = Rk4::new(sys);
    let mut y = x.to_vec();
    let mut next = vec![0.0; n];
    // last two accepted samples (t, y, Φ) inside the current piece, for touch detection
    let mut cur_phi = phi0;
    let mut t = 0.0;
    for (_, b, u) in control.pieces() {
        let mut prev: Option<(f64, Vec<f64>, f64)> = None;
        while t < b - 1e-15 {
            let h = dt.min(b - t);
            rk.step(&y, u, h, &mut next);
            let phi_next = dom.phi(&next);
            if phi_next >= 0.0 {
                let (mut lo, mut hi) = (0.0, h);
                for _ in 0..tol.bisect_iters {
                    if hi - lo <= 1e-13 {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    let mut ym = vec![0.0; n];
                    rk.step(&y, u, mid, &mut ym);
                    if dom.phi(&ym) >= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let mut yh = vec![0.0; n];
                rk.step(&y, u, hi, &mut yh);
                traj.transfer_time = t + hi;
                traj.times.push(t + hi);
                traj.states.push(yh);
                return Ok(traj);
            }
            // Γ can be touched tangentially between samples
            if let Some((tp, yp, php)) = &prev {
                if cur_phi > *php && cur_phi >= phi_next {
                    let var = (cur_phi - php).abs() + (cur_phi - phi_next).abs();
                    if cur_phi > -var {
                        let span = t + h - tp;
                        if let Some(s) = touch_search(&mut rk, dom, yp, u, span, tol) {
                            let mut ys = vec![0.0; n];
                            rk.step(yp, u, s, &mut ys);
                            traj.transfer_time = tp + s;
                            traj.times.push(tp + s);
                            traj.states.push(ys);
                            return Ok(traj);
                        }
                    }
                }
            }
            prev = Some((t, y.clone(), cur_phi));
            std::mem::swap(&mut y, &mut next);
            t += h;
            cur_phi = phi_next;
            if !dom.in_bbox(&y) {
                return Err(Error::LeftBoundingBox(y));
            }
            if record {
                traj.times.push(t);
                traj.states.push(y.clone());
            }
        }
    }
    if !record {
        traj.times.push(t);
        traj.states.push(y);
    }
    Ok(traj)
}

/// Golden-section search for the max of `Φ(y(s))`, `s ∈ [0, span]`;
/// returns the touching time if the max reaches `−touch_tol`.
fn touch_search(
    rk: &mut Rk4,
    dom: &LevelSetDomain,
    y0: &[f64],
    u: &[f64],
    span: f64,
    tol: &Tolerances,
) -> Option<f64> {
    let n = y0.len();
    let mut ys = vec![0.0; n];
    let mut f = |s: f64, rk: &mut Rk4| {
        rk.step(y0, u, s, &mut ys);
        dom.phi(&ys)
    };
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0, span);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c, rk);
    let mut fd = f(d, rk);
    for _ in 0..tol.bisect_iters.max(80) {
        if b - a < 1e-13 {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c, rk);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d, rk);
        }
    }
    let (s, v) = if fc > fd { (c, fc) } else { (d, fd) };
    (v >= -tol.touch_tol).then_some(s)
}

/// RK4 with step `dt`; the transfer time is located by bisection when Φ
/// changes sign and by a golden-section search when Φ only touches zero.
pub fn simulate(
    sys: &VectorFieldSystem,
    dom: &LevelSetDomain,
    x: &[f64],
    control: &Control,
    dt: f64,
    tol: &Tolerances,
) -> Result<Trajectory> {
    integrate(sys, dom, x, control, dt, tol, true)
}

pub fn transfer_time(
    sys: &VectorFieldSystem,
    dom: &LevelSetDomain,
    x: &[f64],
    control: &Control,
    dt: f64,
    tol: &Tolerances,
) -> Result<f64> {
    Ok(integrate(sys, dom, x, control, dt, tol, false)?.transfer_time)
}

/// The `2N` constant controls `±e_j`.
pub fn bang_controls(nfields: usize, t_max: f64) -> Vec<Control> {
    let mut out = Vec::with_capacity(2 * nfields);
    for j in 0..nfields {
        for s in [1.0, -1.0] {
            let mut u = vec![0.0; nfields];
            u[j] = s;
            out.push(Control::constant(u, t_max).expect("unit control"));
        }
    }
    out
}

/// Minimum transfer time over the bang controls and `samples` random
/// piecewise-constant controls. Every value is attained by an admissible
/// control, so the result bounds `T(x)` from above up to integration error.
#[allow(clippy::too_many_arguments)]
pub fn upper_bound_oracle(
    sys: &VectorFieldSystem,
    dom: &LevelSetDomain,
    x: &[f64],
    samples: usize,
    t_max: f64,
    dt: f64,
    seed: u64,
    tol: &Tolerances,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Precondition("samples must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut controls = bang_controls(sys.len(), t_max);
    controls.extend((0..samples).map(|_| Control::random(sys.len(), t_max, &mut rng)));
    let mut best = f64::INFINITY;
    for c in &controls {
        let tt = match transfer_time(sys, dom, x, c, dt, tol) {
            Ok(v) => v,
            Err(Error::LeftBoundingBox(_)) => continue,
            Err(e) => return Err(e),
        };
        best = best.min(tt);
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtremalArc {
    /// Forward time, `t[0] = 0`; the arc ends on Γ at the last sample.
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub h_along: Vec<f64>,
    pub endpoint: Option<BoundaryPoint>,
    pub singular: bool,
    pub transversal_residual: f64,
    pub annihilation_residual: f64,
    pub reached_characteristic: bool,
    pub left_domain: bool,
}

impl ExtremalArc {
    pub fn duration(&self) -> f64 {
        self.t.last().copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// `max |h − h(end)|` along the arc.
    pub fn h_drift(&self) -> f64 {
        let last = self.h_along.last().copied().unwrap_or(0.0);
        self.h_along.iter().fold(0.0, |m, h| f64::max(m, (h - last).abs()))
    }

    /// Time left to reach Γ from sample `k`.
    pub fn time_to_go(&self, k: usize) -> f64 {
        self.duration() - self.t[k]
    }

    /// Euclidean distance from `x` to the polyline through the states.
    pub fn distance_to(&self, x: &[f64]) -> f64 {
        if self.y.len() == 1 {
            return linalg::dist(x, &self.y[0]);
        }
        self.y
            .windows(2)
            .map(|w| segment_distance(x, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// CSV `t,y1..yn,p1..pn,u1..uN,h`.
    pub fn to_csv(&self) -> String {
        let n = self.y.first().map_or(0, Vec::len);
        let nf = self.u.first().map_or(0, Vec::len);
        let mut s = String::from("t");
        for k in 1..=n {
            let _ = write!(s, ",y{k}");
        }
        for k in 1..=n {
            let _ = write!(s, ",p{k}");
        }
        for k in 1..=nf {
            let _ = write!(s, ",u{k}");
        }
        s.push_str(",h\n");
        for i in 0..self.t.len() {
            let _ = write!(s, "{}", self.t[i]);
            for v in self.y[i].iter().chain(&self.p[i]).chain(&self.u[i]) {
                let _ = write!(s, ",{v}");
            }
            let _ = writeln!(s, ",{}", self.h_along[i]);
        }
        s
    }
}

fn segment_distance(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = b.iter().zip(a).map(|(p, q)| p - q).collect();
    let ax: Vec<f64> = x.iter().zip(a).map(|(p, q)| p - q).collect();
    let l2 = linalg::dot(&ab, &ab);
    let s = if l2 > 0.0 { (linalg::dot(&ax, &ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    let proj: Vec<f64> = a.iter().zip(&ab).map(|(p, d)| p + s * d).collect();
    linalg::dist(x, &proj)
}

/// Right-hand side of the Hamiltonian system with control `u`:
/// `ẏ = Σ u_j X_j`, `ṗ = −Σ u_j DX_jᵀ p`.
fn hamilton_rhs(sys: &VectorFieldSystem, y: &[f64], p: &[f64], u: &[f64], out: &mut [f64]) {
    let n = y.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut buf = vec![0.0; n];
    for (j, &uj) in u.iter().enumerate() {
        if uj == 0.0 {
            continue;
        }
        let xj = sys.eval_field(j, y);
        sys.jacobian_t_dot_into(j, y, p, &mut buf);
        for i in 0..n {
            out[i] += uj * xj[i];
            out[n + i] -= uj * buf[i];
        }
    }
}

fn feedback(sys: &VectorFieldSystem, y: &[f64], p: &[f64]) -> Vec<f64> {
    let pair = sys.pairings(y, p);
    let h: f64 = pair.iter().map(|v| v * v).sum::<f64>().sqrt();
    if h == 0.0 {
        return vec![0.0; pair.len()];
    }
    pair.into_iter().map(|v| v / h).collect()
}

/// One backward RK4 step (`s ↦ t = τ − s`) of size `dt` for the
/// Hamiltonian system; `control` gives `u` from the stage state.
fn backward_step<F>(sys: &VectorFieldSystem, z: &[f64], dt: f64, control: F) -> Vec<f64>
where
    F: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    let m = z.len();
    let n = m / 2;
    let rhs = |s: &[f64]| {
        let u = control(&s[..n], &s[n..]);
        let mut out = vec![0.0; m];
        hamilton_rhs(sys, &s[..n], &s[n..], &u, &mut out);
        out.iter_mut().for_each(|v| *v = -*v);
        out
    };
    let k1 = rhs(z);
    let z2: Vec<f64> = z.iter().zip(&k1).map(|(a, k)| a + 0.5 * dt * k).collect();
    let k2 = rhs(&z2);
    let z3: Vec<f64> = z.iter().zip(&k2).map(|(a, k)| a + 0.5 * dt * k).collect();
    let k3 = rhs(&z3);
    let z4: Vec<f64> = z.iter().zip(&k3).map(|(a, k)| a + dt * k).collect();
    let k4 = rhs(&z4);
    (0..m)
        .map(|i| z[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Integrates the Hamiltonian system backward from `y = z`,
/// `p = ν / sqrt(h(z, ν))` under the maximizing feedback
/// `u_j = ⟨X_j, p⟩ / sqrt(h)`. The time to go along the arc estimates `T`.
pub fn feedback_extremal(
    sys: &VectorFieldSystem,
    dom: &LevelSetDomain,
    z: &BoundaryPoint,
    duration: f64,
    dt: f64,
    tol: &Tolerances,
) -> Result<ExtremalArc> {
    check_dim(sys.dim(), z.x.len())?;
    let n = sys.dim();
    let h0 = hamiltonian(sys, &z.x, &z.normal);
    if h0 <= tol.ham_floor {
        return Err(Error::Precondition(format!(
            "boundary point {:?} is characteristic (h = {h0:e})",
            z.x
        )));
    }
    let p0: Vec<f64> = z.normal.iter().map(|v| v / h0.sqrt()).collect();
    let mut state: Vec<f64> = z.x.iter().chain(&p0).cloned().collect();
    let mut ys = vec![z.x.clone()];
    let mut ps = vec![p0.clone()];
    let mut us = vec![feedback(sys, &z.x, &p0)];
    let mut hs = vec![hamiltonian(sys, &z.x, &p0)];
    let mut reached_characteristic = false;
    let mut left_domain = false;
    let steps = (duration / dt).round().max(1.0) as usize;
    let h = duration / steps as f64;
    for k in 0..steps {
        let next = backward_step(sys, &state, h, |y, p| feedback(sys, y, p));
        let (y, p) = next.split_at(n);
        let hv = hamiltonian(sys, y, p);
        if linalg::norm(p) < tol.p_floor || hv < tol.ham_floor {
            reached_characteristic = true;
            break;
        }
        if (k > 0 && dom.phi(y) > 0.0) || !dom.in_bbox(y) {
            left_domain = true;
            break;
        }
        ys.push(y.to_vec());
        ps.push(p.to_vec());
        us.push(feedback(sys, y, p));
        hs.push(hv);
        state = next;
    }
    let m = ys.len();
    ys.reverse();
    ps.reverse();
    us.reverse();
    hs.reverse();
    let t: Vec<f64> = (0..m).map(|k| k as f64 * h).collect();
    let annihilation_residual = ys
        .iter()
        .zip(&ps)
        .flat_map(|(y, p)| sys.pairings(y, p))
        .fold(0.0, |a, v| f64::max(a, v.abs()));
    Ok(ExtremalArc {
        t,
        y: ys,
        p: ps,
        u: us,
        h_along: hs,
        endpoint: Some(z.clone()),
        singular: false,
        transversal_residual: linalg::angle(&p0, &z.normal),
        annihilation_residual,
        reached_characteristic,
        left_domain,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularReport {
    /// `max_{t,k} |⟨X_k(y), p⟩|`.
    pub annihilation: f64,
    /// Max deviation of finite-difference `ṗ` from `−Σ u_j DX_jᵀ p`.
    pub adjoint_ode: f64,
    /// Angle between `p(τ)` and `ν(y(τ))`.
    pub transversality: f64,
    /// `max_j |⟨X_j, ν⟩|` at the endpoint.
    pub endpoint_in_e: f64,
    pub singular: bool,
    pub verdict: String,
}

/// Checks the annihilation, adjoint and transversality conditions of a
/// candidate singular arc and whether it ends at a characteristic point.
pub fn verify_singular(
    sys: &VectorFieldSystem,
    dom: &LevelSetDomain,
    arc: &ExtremalArc,
    tol: &Tolerances,
) -> Result<SingularReport> {
    let m = arc.t.len();
    if m == 0 || arc.y.len() != m || arc.p.len() != m || arc.u.len() != m {
        return Err(Error::Precondition("arc samples are inconsistent".into()));
    }
    if arc.t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("arc times must increase".into()));
    }
    let n = sys.dim();
    for (y, p) in arc.y.iter().zip(&arc.p) {
        check_dim(n, y.len())?;
        check_dim(n, p.len())?;
        if linalg::norm(p) < tol.p_floor {
            return Err(Error::Precondition("adjoint vanishes along the arc".into()));
        }
    }
    let end = &arc.y[m - 1];
    let dist = dom.signed_distance_estimate(end).abs();
    if !(dist <= 1e-6 * dom.diameter()) {
        return Err(Error::Precondition(format!(
            "arc endpoint {end:?} is {dist:e} away from Γ"
        )));
    }
    let annihilation = arc
        .y
        .iter()
        .zip(&arc.p)
        .flat_map(|(y, p)| sys.pairings(y, p))
        .fold(0.0, |a, v| f64::max(a, v.abs()));

    let mut rhs = vec![0.0; 2 * n];
    let mut adjoint_ode: f64 = 0.0;
    let deriv = |k: usize| -> Option<Vec<f64>> {
        if k >= 2 && k + 2 < m {
            let dt = (arc.t[k + 2] - arc.t[k - 2]) / 4.0;
            Some(
                (0..n)
                    .map(|i| {
                        (-arc.p[k + 2][i] + 8.0 * arc.p[k + 1][i] - 8.0 * arc.p[k - 1][i] + arc.p[k - 2][i])
                            / (12.0 * dt)
                    })
                    .collect(),
            )
        } else if m < 5 && k >= 1 && k + 1 < m {
            let dt = arc.t[k + 1] - arc.t[k - 1];
            Some((0..n).map(|i| (arc.p[k + 1][i] - arc.p[k - 1][i]) / dt).collect())
        } else {
            None
        }
    };
    for k in 0..m {
        if let Some(dp) = deriv(k) {
            hamilton_rhs(sys, &arc.y[k], &arc.p[k], &arc.u[k], &mut rhs);
            for i in 0..n {
                adjoint_ode = adjoint_ode.max((dp[i] - rhs[n + i]).abs());
            }
        }
    }
    let nu = dom.normal(end)?;
    let transversality = linalg::angle(&arc.p[m - 1], &nu);
    let endpoint_in_e = dom.boundary_point(sys, end)?.char_residual;
    let pscale = arc.p.iter().map(|p| linalg::norm(p)).fold(0.0, f64::max);
    let singular = annihilation <= tol.sing_tol * pscale
        && adjoint_ode <= tol.sing_tol * pscale.max(1.0)
        && transversality <= tol.sing_tol
        && endpoint_in_e <= tol.char_tol;
    let verdict = if singular {
        "singular extremal (optimality checked to tolerance)".to_string()
    } else {
        "not singular".to_string()
    };
    Ok(SingularReport {
        annihilation,
        adjoint_ode,
        transversality,
        endpoint_in_e,
        singular,
        verdict,
    })
}

/// Compiled `[X_j, X_k]` and `[X_l, [X_j, X_k]]` for the singular
/// continuation.
struct BracketTable {
    first: Vec<Vec<CompiledField>>,
    // second[l][(j, k)] for j < k
    second: Vec<Vec<CompiledField>>,
    pairs: Vec<(usize, usize)>,
}

impl BracketTable {
    fn new(sys: &VectorFieldSystem) -> Result<Self> {
        let f = sys.fields();
        let nf = f.len();
        let mut first_exact = vec![Vec::with_capacity(nf); nf];
        for j in 0..nf {
            for k in 0..nf {
                first_exact[j].push(lie_bracket(&f[j], &f[k])?);
            }
        }
        let pairs: Vec<(usize, usize)> = (0..nf).flat_map(|j| (j + 1..nf).map(move |k| (j, k))).collect();
        let mut second = Vec::with_capacity(nf);
        for fl in f {
            let row = pairs
                .iter()
                .map(|&(j, k)| lie_bracket(fl, &first_exact[j][k]).map(|b| b.compile()))
                .collect::<Result<Vec<_>>>()?;
            second.push(row);
        }
        let first = first_exact
            .iter()
            .map(|row| row.iter().map(|b| b.compile()).collect())
            .collect();
        Ok(BracketTable { first, second, pairs })
    }

    /// `M_{kj} = ⟨[X_j, X_k](y), p⟩`, so `d/dt ⟨X_k, p⟩ = (M u)_k`.
    fn m(&self, y: &[f64], p: &[f64]) -> DMatrix<f64> {
        let nf = self.first.len();
        DMatrix::from_fn(nf, nf, |k, j| linalg::dot(&self.first[j][k].eval(y), p))
    }

    /// Rows `⟨[X_l, [X_j, X_k]](y), p⟩` indexed by `(j, k)`, columns by `l`.
    fn second_rows(&self, y: &[f64], p: &[f64]) -> DMatrix<f64> {
        let nf = self.first.len();
        DMatrix::from_fn(self.pairs.len(), nf, |r, l| linalg::dot(&self.second[l][r].eval(y), p))
    }
}

fn pfaffian(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 1.0;
    }
    if n % 2 == 1 {
        return 0.0;
    }
    let mut acc = 0.0;
    for j in 1..n {
        let keep: Vec<usize> = (1..n).filter(|&i| i != j).collect();
        let sub = DMatrix::from_fn(n - 2, n - 2, |r, c| m[(keep[r], keep[c])]);
        let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
        acc += sign * m[(0, j)] * pfaffian(&sub);
    }
    acc
}

/// Singular arcs need `M(z, ν)` to have a kernel. When `E` is sampled as a
/// curve, a sample generally misses the special points where it does, so we
/// move along `E` by Gauss–Newton on `(Φ, X_jΦ, Pf M)`.
fn refine_singular_endpoint(
    sys: &VectorFieldSystem,
    dom: &LevelSetDomain,
    table: &BracketTable,
    z: &BoundaryPoint,
    tol: &Tolerances,
) -> Option<BoundaryPoint> {
    let n = sys.dim();
    let resid = |x: &[f64]| -> Vec<f64> {
        let g = dom.grad(x);
        let mut r = vec![dom.phi(x)];
        r.extend(sys.pairings(x, &g));
        r.push(pfaffian(&table.m(x, &g)));
        r
    };
    let mut x = z.x.clone();
    let mut f = resid(&x);
    let fd = 1e-7 * dom.diameter();
    for _ in 0..100 {
        let jac = DMatrix::from_fn(f.len(), n, |_, _| 0.0);
        let mut jac = jac;
        for c in 0..n {
            let mut a = x.clone();
            let mut b = x.clone();
            a[c] += fd;
            b[c] -= fd;
            let (fa, fb) = (resid(&a), resid(&b));
            for r in 0..f.len() {
                jac[(r, c)] = (fa[r] - fb[r]) / (2.0 * fd);
            }
        }
        let svd = jac.svd(true, true);
        let smax = svd.singular_values.max();
        let rhs = nalgebra::DVector::from_column_slice(&f);
        let step = svd.solve(&rhs, 1e-14 * smax).ok()?;
        let f0: f64 = f.iter().map(|v| v * v).sum();
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a - lambda * d).collect();
            let ft = resid(&trial);
            if ft.iter().map(|v| v * v).sum::<f64>() < f0 {
                x = trial;
                f = ft;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted || lambda * step.norm() < 1e-15 {
            break;
        }
    }
    if linalg::dist(&x, &z.x) > 0.05 * dom.diameter() {
        return None;
    }
    let x = dom.project_to_boundary(&x, tol).ok()?;
    let bp = dom.boundary_point(sys, &x).ok()?;
    let smin = table.m(&x, &bp.normal).singular_values().min();
    (bp.char_residual <= tol.char_tol && smin <= tol.sing_tol).then_some(bp)
}

/// Control keeping `⟨X_k(y), p⟩ = 0` to first order: a unit minimizer of
/// `|M u|`, with second brackets breaking ties when `M` has a larger kernel.
/// Returns the control and the first-order residual `|M u|`.
fn singular_control(table: &BracketTable, y: &[f64], p: &[f64], sing_tol: f64) -> (Vec<f64>, f64) {
    let m = table.m(y, p);
    let scale = linalg::norm(p).max(1e-300);
    let sv = m.singular_values();
    let kernel = sv.iter().filter(|&&s| s <= sing_tol * scale).count();
    let target = if kernel >= 2 && !table.pairs.is_empty() {
        let r = table.second_rows(y, p);
        let mut st = DMatrix::zeros(m.nrows() + r.nrows(), m.ncols());
        st.rows_mut(0, m.nrows()).copy_from(&m);
        st.rows_mut(m.nrows(), r.nrows()).copy_from(&r);
        st
    } else {
        m.clone()
    };
    let (_, v) = linalg::smallest_right_singular(&target);
    let u: Vec<f64> = v.iter().cloned().collect();
    let res = (&m * &v).norm() / scale;
    (u, res)
}

/// Backward continuation inside `Char` from each characteristic point, in
/// both orientations of the singular control. Arcs that stay annihilating
/// and inside `Ω` for at least ten steps are returned, stored forward in time.
pub fn singular_search(
    sys: &VectorFieldSystem,
    dom: &LevelSetDomain,
    char_pts: &[BoundaryPoint],
    duration: f64,
    dt: f64,
    tol: &Tolerances,
) -> Result<Vec<ExtremalArc>> {
    let table = BracketTable::new(sys)?;
    let starts: Vec<BoundaryPoint> = char_pts
        .par_iter()
        .filter_map(|z| {
            let smin = table.m(&z.x, &z.normal).singular_values().min();
            if smin <= tol.sing_tol {
                Some(z.clone())
            } else {
                refine_singular_endpoint(sys, dom, &table, z, tol)
            }
        })
        .collect();
    let mut uniq: Vec<BoundaryPoint> = Vec::new();
    for s in starts {
        if uniq.iter().all(|o| linalg::dist(&o.x, &s.x) > tol.dedup_radius) {
            uniq.push(s);
        }
    }
    let arcs: Vec<Option<ExtremalArc>> = uniq
        .par_iter()
        .flat_map_iter(|z| [1.0, -1.0].map(|sign| (z, sign)))
        .map(|(z, sign)| continue_singular(sys, dom, &table, z, sign, duration, dt, tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(arcs.into_iter().flatten().collect())
}

#[allow(clippy::too_many_arguments)]
fn continue_singular(
    sys: &VectorFieldSystem,
    dom: &LevelSetDomain,
    table: &BracketTable,
    z: &BoundaryPoint,
    sign: f64,
    duration: f64,
    dt: f64,
    tol: &Tolerances,
) -> Result<Option<ExtremalArc>> {
    let n = sys.dim();
    let p0 = z.normal.clone();
    let (mut u, res) = singular_control(table, &z.x, &p0, tol.sing_tol);
    if res > tol.sing_tol {
        return Ok(None);
    }
    // canonical orientation, then flip by `sign`
    let lead = u.iter().cloned().fold(0.0, |a: f64, b| if a.abs() >= b.abs() { a } else { b });
    let flip = if lead < 0.0 { -sign } else { sign };
    u.iter_mut().for_each(|v| *v *= flip);

    let mut state: Vec<f64> = z.x.iter().chain(&p0).cloned().collect();
    let mut ys = vec![z.x.clone()];
    let mut ps = vec![p0.clone()];
    let mut us = vec![u.clone()];
    let steps = (duration / dt).round().max(1.0) as usize;
    let mut left_domain = false;
    for k in 0..steps {
        let uc = u.clone();
        let next = backward_step(sys, &state, dt, |_, _| uc.clone());
        let (y, p) = next.split_at(n);
        let ann = sys.pairings(y, p).iter().fold(0.0, |a: f64, v| a.max(v.abs())) / linalg::norm(p);
        if dom.phi(y) >= 0.0 || !dom.in_bbox(y) {
            if k == 0 {
                return Ok(None);
            }
            left_domain = true;
            break;
        }
        if ann > tol.sing_tol || linalg::norm(p) < tol.p_floor {
            break;
        }
        let (mut un, res) = singular_control(table, y, p, tol.sing_tol);
        if res > tol.sing_tol {
            ys.push(y.to_vec());
            ps.push(p.to_vec());
            us.push(u.clone());
            break;
        }
        if linalg::dot(&un, &u) < 0.0 {
            un.iter_mut().for_each(|v| *v = -*v);
        }
        ys.push(y.to_vec());
        ps.push(p.to_vec());
        us.push(un.clone());
        u = un;
        state = next;
    }
    if ys.len() < 11 {
        return Ok(None);
    }
    let m = ys.len();
    ys.reverse();
    ps.reverse();
    us.reverse();
    let h_along: Vec<f64> = ys.iter().zip(&ps).map(|(y, p)| hamiltonian(sys, y, p)).collect();
    let mut arc = ExtremalArc {
        t: (0..m).map(|k| k as f64 * dt).collect(),
        y: ys,
        p: ps,
        u: us,
        h_along,
        endpoint: Some(z.clone()),
        singular: false,
        transversal_residual: 0.0,
        annihilation_residual: 0.0,
        reached_characteristic: false,
        left_domain,
    };
    let rep = verify_singular(sys, dom, &arc, tol)?;
    arc.singular = rep.singular;
    arc.transversal_residual = rep.transversality;
    arc.annihilation_residual = rep.annihilation;
    Ok(arc.singular.then_some(arc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{domains, fields};

    fn exact_martinet_arc(a: f64, steps: usize) -> ExtremalArc {
        let dt = a / steps as f64;
        let t: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
        let m = t.len();
        ExtremalArc {
            y: t.iter().map(|&s| vec![0.0, s, 0.0]).collect(),
            p: vec![vec![0.0, 0.0, -1.0]; m],
            u: vec![vec![0.0, 1.0]; m],
            h_along: vec![0.0; m],
            t,
            endpoint: None,
            singular: false,
            transversal_residual: 0.0,
            annihilation_residual: 0.0,
            reached_characteristic: false,
            left_domain: false,
        }
    }

    #[test]
    fn control_rejects_large_values() {
        assert!(Control::constant(vec![1.0, 0.1], 1.0).is_err());
        assert!(Control::new(vec![0.0, 0.5, 0.4], vec![vec![1.0], vec![0.0]]).is_err());
        let c = Control::new(vec![0.0, 0.5, 1.0], vec![vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        assert_eq!(c.value_at(0.2), &[1.0, 0.0]);
        assert_eq!(c.value_at(0.7), &[0.0, -1.0]);
        assert_eq!(c.value_at(1.0), &[0.0, -1.0]);
    }

    #[test]
    fn straight_line_to_circle() {
        let dom = domains::ball(&[0.0, 0.0], 1.0, 1.15);
        let sys = fields::riemannian(2);
        let tol = Tolerances::default();
        let c = Control::constant(vec![1.0, 0.0], 3.0).unwrap();
        let tr = simulate(&sys, &dom, &[0.5, 0.0], &c, 1e-3, &tol).unwrap();
        assert!((tr.transfer_time - 0.5).abs() < 1e-10, "{}", tr.transfer_time);
        let zero = Control::constant(vec![0.0, 0.0], 2.0).unwrap();
        assert_eq!(transfer_time(&sys, &dom, &[0.5, 0.0], &zero, 1e-3, &tol).unwrap(), f64::INFINITY);
    }

    #[test]
    fn martinet_segment_touches_trap_boundary() {
        let dom = domains::martinet_trap(0.5);
        let sys = fields::martinet();
        let tol = Tolerances::default();
        let c = Control::constant(vec![0.0, 1.0], 2.0).unwrap();
        let tt = transfer_time(&sys, &dom, &[0.0, 0.0, 0.0], &c, 2.56e-3, &tol).unwrap();
        assert!((tt - 0.5).abs() < 1e-6, "{tt}");
    }

    #[test]
    fn oracle_examples() {
        let tol = Tolerances::default();
        let dom = domains::ball(&[0.0, 0.0], 1.0, 1.15);
        let sys = fields::riemannian(2);
        let ub = upper_bound_oracle(&sys, &dom, &[0.0, 0.0], 16, 3.0, 1e-3, 7, &tol).unwrap();
        assert!(ub <= 1.0 + 1e-6 && ub > 1.0 - 1e-6);
        let trap = domains::martinet_trap(0.5);
        let m = fields::martinet();
        let ub = upper_bound_oracle(&m, &trap, &[0.0, 0.4, 0.0], 16, 3.0, 2.56e-3, 7, &tol).unwrap();
        assert!(ub <= 0.1 + 1e-6, "{ub}");
    }

    #[test]
    fn exact_singular_arc_has_zero_residuals() {
        let dom = domains::martinet_trap(0.5);
        let sys = fields::martinet();
        let rep = verify_singular(&sys, &dom, &exact_martinet_arc(0.5, 200), &Tolerances::default()).unwrap();
        assert!(rep.annihilation < 1e-12 && rep.adjoint_ode < 1e-12 && rep.transversality < 1e-12);
        assert!(rep.endpoint_in_e < 1e-8);
        assert!(rep.singular);
    }

    #[test]
    fn wrong_adjoint_is_not_singular() {
        let dom = domains::martinet_trap(0.5);
        let sys = fields::martinet();
        let mut arc = exact_martinet_arc(0.5, 50);
        arc.p.iter_mut().for_each(|p| *p = vec![0.0, 1.0, 0.0]);
        let rep = verify_singular(&sys, &dom, &arc, &Tolerances::default()).unwrap();
        assert!((rep.annihilation - 1.0).abs() < 1e-12);
        assert!(!rep.singular);
    }

    #[test]
    fn endpoint_off_boundary_is_an_error() {
        let dom = domains::martinet_trap(0.5);
        let sys = fields::martinet();
        let arc = exact_martinet_arc(0.4, 50);
        assert!(verify_singular(&sys, &dom, &arc, &Tolerances::default()).is_err());
    }

    #[test]
    fn feedback_extremal_conserves_h() {
        let tol = Tolerances::default();
        let dom = domains::ball(&[0.0; 3], 1.0, 1.15);
        let sys = fields::heisenberg();
        let x = [0.6, 0.0, 0.8];
        let z = dom.boundary_point(&sys, &x).unwrap();
        let arc = feedback_extremal(&sys, &dom, &z, 0.5, 1e-3, &tol).unwrap();
        assert!(arc.h_drift() < 1e-8, "{}", arc.h_drift());
        assert!((arc.h_along[0] - 1.0).abs() < 1e-8);
        let rep = verify_singular(&sys, &dom, &arc, &tol).unwrap();
        assert!(!rep.singular);
        let pole = dom.boundary_point(&sys, &[0.0, 0.0, 1.0]).unwrap();
        assert!(feedback_extremal(&sys, &dom, &pole, 0.5, 1e-3, &tol).is_err());
    }

    #[test]
    fn riemannian_extremal_is_a_radius() {
        let tol = Tolerances::default();
        let dom = domains::ball(&[0.0, 0.0], 1.0, 1.15);
        let sys = fields::riemannian(2);
        let z = dom.boundary_point(&sys, &[1.0, 0.0]).unwrap();
        let arc = feedback_extremal(&sys, &dom, &z, 0.8, 1e-3, &tol).unwrap();
        for (k, y) in arc.y.iter().enumerate() {
            assert!(y[1].abs() < 1e-12);
            assert!((1.0 - y[0] - arc.time_to_go(k)).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_search_examples() {
        let tol = Tolerances::default();
        let h = fields::heisenberg();
        let ball = domains::ball(&[0.0; 3], 1.0, 1.15);
        let poles = ball.characteristic_points(&h, 64, &tol).unwrap();
        assert_eq!(poles.len(), 2);
        assert!(singular_search(&h, &ball, &poles, 0.5, 2e-3, &tol).unwrap().is_empty());

        let m = fields::martinet();
        let trap = domains::martinet_trap(0.5);
        let e = trap.characteristic_points(&m, 256, &tol).unwrap();
        let arcs = singular_search(&m, &trap, &e, 0.5, 2e-3, &tol).unwrap();
        assert!(!arcs.is_empty());
        let hit = arcs.iter().find(|a| a.y[0][1] < 0.5).expect("arc through (0, t, 0), t < a");
        for y in &hit.y {
            assert!(y[0].abs() < 1e-9 && y[2].abs() < 1e-9, "{y:?}");
        }
        assert!((hit.y.last().unwrap()[1] - 0.5).abs() < 1e-9);
        assert!((hit.duration() - 0.5).abs() < 1e-9);
    }
}
