//! Regularity of a computed `T`: Lipschitz quotients, Hölder exponents at
//! boundary points, one-sided second differences, and a multi-resolution
//! estimate of the set where `T` is not Lipschitz.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::LevelSetDomain;
use crate::eikonal::{Grid, ScalarGridField};
use crate::error::{check_dim, Error, Result};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Lipschitz,
    HolderOnly,
    Unresolved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    pub exponent: f64,
    pub r2: f64,
    /// `(radius, sup |T(y) − T(x0)|)` pairs used in the fit.
    pub samples: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub point: Vec<f64>,
    pub lipschitz_quotient_by_radius: Vec<(f64, f64)>,
    pub holder_fit: Option<HolderFit>,
    /// `+∞` when not measured.
    #[serde(with = "finite_or_inf")]
    pub semiconcavity_constant: f64,
    pub classification: Classification,
}

mod finite_or_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum V {
            N(f64),
            S(String),
        }
        match V::deserialize(d)? {
            V::N(x) => Ok(x),
            V::S(s) if s == "inf" => Ok(f64::INFINITY),
            V::S(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            V::S(s) => Err(serde::de::Error::custom(format!("bad number {s}"))),
        }
    }
}

/// Geometric schedule from `8h` down to `2h`, five levels.
pub fn default_radii(grid: &Grid) -> Vec<f64> {
    let h = grid.max_spacing();
    (0..5).map(|k| 8.0 * h * 0.25f64.powf(k as f64 / 4.0)).collect()
}

fn check_radii(radii: &[f64]) -> Result<()> {
    if radii.is_empty() || radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::Precondition("radii must be positive".into()));
    }
    if radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Precondition("radii must decrease strictly".into()));
    }
    Ok(())
}

/// `sup |T(y) − T(x0)| / |y − x0|` over nodes `y ∈ B_r(x0) ∩ Ω̄`, per radius.
pub fn lipschitz_quotient(t: &ScalarGridField, x0: &[f64], radii: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_dim(t.grid().dim(), x0.len())?;
    check_radii(radii)?;
    let g = t.grid();
    let rmin = radii[radii.len() - 1];
    if rmin < 2.0 * g.max_spacing() - 1e-12 {
        return Err(Error::Precondition(format!(
            "radius {rmin} is below twice the spacing {}",
            g.max_spacing()
        )));
    }
    let t0 = t
        .value_at(x0)
        .ok_or_else(|| Error::Precondition(format!("{x0:?} is not in Ω̄ on the grid")))?;
    radii
        .iter()
        .map(|&r| {
            let nodes: Vec<usize> = g.nodes_in_ball(x0, r).into_iter().filter(|&l| t.is_inside(l)).collect();
            if nodes.len() < 5 {
                return Err(Error::Precondition(format!("ball of radius {r} holds {} nodes", nodes.len())));
            }
            let q = nodes
                .iter()
                .filter_map(|&l| {
                    let y = g.node(l);
                    let d = linalg::dist(&y, x0);
                    (d > 1e-12 * r).then(|| (t.values()[l] - t0).abs() / d)
                })
                .fold(0.0, f64::max);
            Ok((r, q))
        })
        .collect()
}

/// Slope of `log sup_{|y − x0| = r, y ∈ Ω̄} |T(y) − T(x0)|` against `log r`,
/// with `T(x0) = 0` for `x0 ∈ Γ`. The sphere is sampled at quasi-uniform
/// directions plus the inward normal, and `T` is interpolated.
pub fn holder_fit(
    t: &ScalarGridField,
    dom: &LevelSetDomain,
    x0: &[f64],
    radii: &[f64],
) -> Result<HolderFit> {
    check_dim(t.grid().dim(), x0.len())?;
    check_radii(radii)?;
    let g = t.grid();
    let band = 0.5 * g.max_spacing();
    let d = dom.signed_distance_estimate(x0);
    if d.abs() > band {
        return Err(Error::Precondition(format!("{x0:?} is {d:e} away from Γ")));
    }
    let t0 = if d.abs() <= 1e-9 {
        0.0
    } else {
        t.value_at(x0).ok_or_else(|| Error::Precondition(format!("no value at {x0:?}")))?
    };
    let mut dirs = sphere_directions(g.dim(), 2000);
    if let Ok(nu) = dom.normal(x0) {
        dirs.push(nu.iter().map(|v| -v).collect());
    }
    let samples: Vec<(f64, f64)> = radii
        .iter()
        .filter_map(|&r| {
            let s = dirs
                .iter()
                .filter_map(|e| {
                    let y: Vec<f64> = x0.iter().zip(e).map(|(a, b)| a + r * b).collect();
                    if dom.phi(&y) > 0.0 {
                        return None;
                    }
                    t.value_at(&y).map(|v| (v - t0).abs())
                })
                .fold(0.0, f64::max);
            (s > 0.0 && s.is_finite()).then_some((r, s))
        })
        .collect();
    if samples.len() < 3 {
        return Err(Error::Precondition(format!("{} usable radii, need 3", samples.len())));
    }
    let (exponent, r2) = log_log_fit(&samples);
    Ok(HolderFit { exponent, r2, samples })
}

/// Roughly uniform unit vectors: a circle in 2D, a Fibonacci lattice in 3D,
/// normalized Halton points otherwise.
fn sphere_directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * k as f64;
                    vec![r * a.cos(), r * a.sin(), z]
                })
                .collect()
        }
        _ => {
            let bbox = vec![[-1.0, 1.0]; n];
            (1..)
                .map(|i| crate::domain::halton_point(i, &bbox))
                .filter_map(|v| {
                    let l = linalg::norm(&v);
                    (l > 1e-3 && l <= 1.0).then(|| v.iter().map(|x| x / l).collect())
                })
                .take(count)
                .collect()
        }
    }
}

fn log_log_fit(samples: &[(f64, f64)]) -> (f64, f64) {
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { (sxy * sxy / (sxx * syy)).min(1.0) } else { 1.0 };
    (slope, r2)
}

/// Largest `[T(x+se) − 2T(x) + T(x−se)] / s²` over nodes `x` in `region`
/// and unit directions `e` along the axes and the face diagonals.
pub fn semiconcavity_test(
    t: &ScalarGridField,
    dom: &LevelSetDomain,
    region: &[[f64; 2]],
    step: f64,
) -> Result<f64> {
    let g = t.grid();
    let n = g.dim();
    check_dim(n, region.len())?;
    if !(step > 0.0) || region.iter().any(|[lo, hi]| !(lo <= hi)) {
        return Err(Error::Precondition("bad region or step".into()));
    }
    let margin = 2.0 * step;
    let band = 0.5 * g.max_spacing();
    // the region plus its margin must stay clear of Γ and the band
    let mut corner = vec![0.0; n];
    let probe = |x: &[f64]| dom.signed_distance_estimate(x) < -(margin + band);
    for c in 0..(1usize << n) {
        for k in 0..n {
            corner[k] = region[k][c >> k & 1];
        }
        if !probe(&corner) {
            return Err(Error::Precondition(format!("region corner {corner:?} is within the margin of Γ")));
        }
    }
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        dirs.push(e);
        for l in k + 1..n {
            for s in [1.0, -1.0] {
                let mut e = vec![0.0; n];
                e[k] = std::f64::consts::FRAC_1_SQRT_2;
                e[l] = s * std::f64::consts::FRAC_1_SQRT_2;
                dirs.push(e);
            }
        }
    }
    let nodes: Vec<usize> = (0..g.len())
        .filter(|&l| {
            let x = g.node(l);
            x.iter().zip(region).all(|(v, [lo, hi])| *v >= lo - 1e-12 && *v <= hi + 1e-12)
        })
        .collect();
    if nodes.is_empty() {
        return Err(Error::Precondition("region holds no nodes".into()));
    }
    let worst = nodes
        .par_iter()
        .map(|&l| {
            let x = g.node(l);
            if dom.signed_distance_estimate(&x) >= -(margin + band) {
                return Err(Error::Precondition(format!("node {x:?} is within the margin of Γ")));
            }
            let tx = t.values()[l];
            let mut best = f64::NEG_INFINITY;
            for e in &dirs {
                let xp: Vec<f64> = x.iter().zip(e).map(|(a, b)| a + step * b).collect();
                let xm: Vec<f64> = x.iter().zip(e).map(|(a, b)| a - step * b).collect();
                let (Some(tp), Some(tm)) = (t.value_at(&xp), t.value_at(&xm)) else {
                    return Err(Error::Precondition(format!("no value near {x:?}")));
                };
                best = best.max((tp - 2.0 * tx + tm) / (step * step));
            }
            Ok(best)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(worst.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Nodes of the fine grid flagged as non-Lipschitz.
#[derive(Clone, Debug)]
pub struct SingMap {
    pub grid: Grid,
    pub mask: Vec<bool>,
    /// Radius-`2h` quotients on the coarse and fine fields at flagged nodes.
    pub growth: Vec<(usize, f64, f64)>,
}

impl SingMap {
    pub fn flagged(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(l, _)| l)
    }

    pub fn count(&self) -> usize {
        self.flagged().count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// CSV `x1..xn,flag` over the fine grid nodes in `Ω̄`.
    pub fn to_csv(&self, inside: impl Fn(usize) -> bool) -> String {
        let n = self.grid.dim();
        let mut s = String::new();
        for k in 1..=n {
            let _ = write!(s, "x{k},");
        }
        s.push_str("flag\n");
        let mut x = vec![0.0; n];
        for l in (0..self.grid.len()).filter(|&l| inside(l)) {
            self.grid.node_into(l, &mut x);
            for v in &x {
                let _ = write!(s, "{v},");
            }
            let _ = writeln!(s, "{}", u8::from(self.mask[l]));
        }
        s
    }
}

/// Pointwise quotient at a grid node over the ball of radius `r`.
fn node_quotient(t: &ScalarGridField, lin: usize, r: f64) -> f64 {
    let g = t.grid();
    let x = g.node(lin);
    let t0 = t.values()[lin];
    g.nodes_in_ball(&x, r)
        .into_iter()
        .filter(|&l| l != lin && t.is_inside(l))
        .map(|l| (t.values()[l] - t0).abs() / linalg::dist(&g.node(l), &x))
        .fold(0.0, f64::max)
}

/// Marks nodes shared by both grids, at least `margin` inside Ω, whose
/// radius-`2h` Lipschitz quotient grows by `growth_factor` or more from the
/// coarse to the fine field and also exceeds the median fine quotient by that
/// factor. A Lipschitz `T` keeps the quotient roughly fixed under refinement,
/// while a Hölder-`α` point raises it by `2^{1−α}`.
pub fn sing_map(
    coarse: &ScalarGridField,
    fine: &ScalarGridField,
    dom: &LevelSetDomain,
    growth_factor: f64,
    margin: f64,
) -> Result<SingMap> {
    let (gc, gf) = (coarse.grid(), fine.grid());
    if !gf.is_refinement_of(gc) {
        return Err(Error::Precondition("resolutions are not nested".into()));
    }
    if !(growth_factor > 1.0) {
        return Err(Error::Precondition("growth factor must exceed 1".into()));
    }
    let (rc, rf) = (2.0 * gc.max_spacing(), 2.0 * gf.max_spacing());
    let candidates: Vec<(usize, usize)> = (0..gc.len())
        .filter(|&l| coarse.is_inside(l))
        .filter_map(|l| {
            let x = gc.node(l);
            (dom.signed_distance_estimate(&x) <= -margin).then(|| (l, gf.nearest_node(&x).expect("nested grid")))
        })
        .collect();
    let quotients: Vec<(usize, f64, f64)> = candidates
        .par_iter()
        .map(|&(lc, lf)| (lf, node_quotient(coarse, lc, rc), node_quotient(fine, lf, rf)))
        .collect();
    // Under-resolved ridges also grow under refinement, but only up to the
    // bulk Lipschitz scale.
    let mut bulk: Vec<f64> = quotients.iter().map(|q| q.2).collect();
    bulk.sort_by(f64::total_cmp);
    let median = bulk.get(bulk.len() / 2).copied().unwrap_or(0.0);
    let growth: Vec<(usize, f64, f64)> = quotients
        .into_iter()
        .filter(|&(_, qc, qf)| qf >= growth_factor * qc && qf >= growth_factor * median && qf > 0.0)
        .collect();
    let mut mask = vec![false; gf.len()];
    for &(lf, _, _) in &growth {
        mask[lf] = true;
    }
    Ok(SingMap {
        grid: gf.clone(),
        mask,
        growth,
    })
}

/// Quotients at `x0` on two nested fields and the classification they
/// suggest; `holder` and `semiconcavity` are filled in by the caller when
/// they apply.
pub fn regularity_report(
    coarse: &ScalarGridField,
    fine: &ScalarGridField,
    x0: &[f64],
    growth_factor: f64,
) -> Result<RegularityReport> {
    let radii = default_radii(fine.grid());
    let q = lipschitz_quotient(fine, x0, &radii)?;
    let rc = [2.0 * coarse.grid().max_spacing()];
    let rf = [2.0 * fine.grid().max_spacing()];
    let classification = match (lipschitz_quotient(coarse, x0, &rc), lipschitz_quotient(fine, x0, &rf)) {
        (Ok(a), Ok(b)) if b[0].1 >= growth_factor * a[0].1 => Classification::HolderOnly,
        (Ok(_), Ok(_)) => Classification::Lipschitz,
        _ => Classification::Unresolved,
    };
    Ok(RegularityReport {
        point: x0.to_vec(),
        lipschitz_quotient_by_radius: q,
        holder_fit: None,
        semiconcavity_constant: f64::INFINITY,
        classification,
    })
}
