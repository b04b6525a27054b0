//! Full scenario runs: Lie hull checks, characteristic points, symplectic
//! verdicts, the eikonal solve at two nested resolutions, singular arcs and
//! regularity diagnostics, followed by the scenario's expected records.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::charset::{sample_char_points, symplectic_test, PhasePoint, SymplecticReport};
use crate::diagnostics::{
    default_radii, holder_fit, regularity_report, semiconcavity_test, sing_map, RegularityReport, SingMap,
};
use crate::domain::{BoundaryPoint, NodeClass};
use crate::eikonal::{solve, Grid, ScalarGridField, SolveMetadata};
use crate::error::{Error, Result};
use crate::extremal::{singular_search, upper_bound_oracle, ExtremalArc, SingularReport};
use crate::lie::{HormanderReport, LieHull};
use crate::linalg;
use crate::scenario::{Expectation, Scenario};

pub const OUT_ENV: &str = "SUBEIK_OUT";
const DEFAULT_OUT: &str = "subeik-out";

/// `--out` when given, else `$SUBEIK_OUT`, else `./subeik-out`.
pub fn output_root(cli: Option<&Path>) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUT),
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub grid: Option<usize>,
    pub seed: Option<u64>,
    /// Artifacts go to `out/<scenario>/`; nothing is written when `None`.
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Liealgebra,
    Domain,
    Charset,
    Eikonal,
    Extremal,
    Diagnostics,
    Artifacts,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub error: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArcSummary {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub duration: f64,
    pub samples: usize,
    pub check: SingularReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpectationResult {
    pub expectation: Expectation,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub grid: usize,
    pub seed: u64,
    pub hormander: Option<HormanderReport>,
    pub r_omega: Option<usize>,
    pub characteristic_points: Vec<BoundaryPoint>,
    pub symplectic: Vec<SymplecticReport>,
    pub singular_arcs: Vec<ArcSummary>,
    pub solver: Vec<SolveMetadata>,
    pub sing_map_nodes: Option<usize>,
    pub regularity: Vec<RegularityReport>,
    pub failures: Vec<StageFailure>,
    pub expectations: Vec<ExpectationResult>,
    pub passed: bool,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }

    /// One line per expected record plus stage failures.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "{} [{verdict}] grid {} seed {}", self.scenario, self.grid, self.seed);
        for f in &self.failures {
            let _ = writeln!(s, "  stage {:?} failed: {}", f.stage, f.error);
        }
        for e in &self.expectations {
            let tag = if e.passed { "ok  " } else { "FAIL" };
            let _ = writeln!(s, "  {tag} {}", e.detail);
        }
        s
    }
}

/// Everything a run computes, kept in memory for callers that want more than
/// the report.
pub struct RunArtifacts {
    pub report: RunReport,
    pub coarse: Option<ScalarGridField>,
    pub fine: Option<ScalarGridField>,
    pub arcs: Vec<ExtremalArc>,
    pub sing_map: Option<SingMap>,
}

fn fail(report: &mut RunReport, stage: Stage, e: Error) {
    report.failures.push(StageFailure {
        stage,
        error: e.to_string(),
    });
}

fn sample_omega(sc: &Scenario, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    use rand::Rng;
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < 1000 * count {
        tries += 1;
        let x: Vec<f64> = sc.domain.bbox().iter().map(|[lo, hi]| rng.random_range(*lo..*hi)).collect();
        if sc.domain.phi(&x) < 0.0 {
            out.push(x);
        }
    }
    out
}

/// Runs every stage, then compares each expected record once.
pub fn run(sc: &Scenario, opts: &RunOptions) -> RunArtifacts {
    let tol = &sc.tolerances;
    let m = opts.grid.unwrap_or(sc.grid);
    let seed = opts.seed.unwrap_or(sc.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = RunReport {
        scenario: sc.name.clone(),
        grid: m,
        seed,
        hormander: None,
        r_omega: None,
        characteristic_points: Vec::new(),
        symplectic: Vec::new(),
        singular_arcs: Vec::new(),
        solver: Vec::new(),
        sing_map_nodes: None,
        regularity: Vec::new(),
        failures: Vec::new(),
        expectations: Vec::new(),
        passed: false,
    };

    // liealgebra
    let sample = sample_omega(sc, 200, &mut rng);
    match LieHull::build(&sc.system, tol.max_depth)
        .map(|h| h.with_rank_tol(tol.rank_tol))
        .and_then(|h| Ok((h.hormander_check(&sample)?, h)))
    {
        Ok((rep, hull)) => {
            if rep.holds {
                report.r_omega = hull.r_omega_refined(&sample, |x| sc.domain.contains(x)).ok();
            }
            report.hormander = Some(rep);
        }
        Err(e) => fail(&mut report, Stage::Liealgebra, e),
    }

    // domain
    match sc.domain.characteristic_points(&sc.system, tol.char_seeds, tol) {
        Ok(e) => report.characteristic_points = e,
        Err(e) => fail(&mut report, Stage::Domain, e),
    }

    // charset: sampled Char points, the covectors at E, and explicit points
    let mut phase = sample_char_points(&sc.system, &sc.domain, 100, tol.rank_tol, &mut rng);
    phase.extend(
        report
            .characteristic_points
            .iter()
            .map(|z| PhasePoint::new(z.x.clone(), z.normal.clone())),
    );
    for ex in &sc.expected {
        if let Expectation::SymplecticAt { x, p, .. } = ex {
            phase.push(PhasePoint::new(x.clone(), p.clone()));
        }
    }
    for rho in &phase {
        match symplectic_test(&sc.system, rho, tol.char_tol, tol.rank_tol) {
            Ok(r) => report.symplectic.push(r),
            Err(e) => {
                fail(&mut report, Stage::Charset, e);
                break;
            }
        }
    }

    // eikonal at m and 2m − 1
    let mut coarse = None;
    let mut fine = None;
    let solved = Grid::covering(&sc.domain, m).and_then(|gc| {
        let gf = Grid::covering(&sc.domain, 2 * m - 1)?;
        let c = solve(&sc.domain, &gc, &sc.system, tol)?;
        let f = solve(&sc.domain, &gf, &sc.system, tol)?;
        Ok((c, f))
    });
    match solved {
        Ok((c, f)) => {
            report.solver = vec![c.metadata(), f.metadata()];
            coarse = Some(c);
            fine = Some(f);
        }
        Err(e) => fail(&mut report, Stage::Eikonal, e),
    }

    // extremal
    let diam = sc.domain.diameter();
    let dt = tol.dt_rel * diam;
    let mut arcs = Vec::new();
    match singular_search(&sc.system, &sc.domain, &report.characteristic_points, diam, dt, tol) {
        Ok(a) => arcs = a,
        Err(e) => fail(&mut report, Stage::Extremal, e),
    }
    for arc in &arcs {
        match crate::extremal::verify_singular(&sc.system, &sc.domain, arc, tol) {
            Ok(check) => report.singular_arcs.push(ArcSummary {
                start: arc.y[0].clone(),
                end: arc.y[arc.len() - 1].clone(),
                duration: arc.duration(),
                samples: arc.len(),
                check,
            }),
            Err(e) => fail(&mut report, Stage::Extremal, e),
        }
    }

    // diagnostics
    let mut smap = None;
    if let (Some(c), Some(f)) = (&coarse, &fine) {
        let margin = tol.sing_margin_cells * c.grid().max_spacing();
        match sing_map(c, f, &sc.domain, tol.growth_factor, margin) {
            Ok(s) => {
                report.sing_map_nodes = Some(s.count());
                smap = Some(s);
            }
            Err(e) => fail(&mut report, Stage::Diagnostics, e),
        }
        match regularity(sc, c, f, &report.characteristic_points) {
            Ok(r) => report.regularity = r,
            Err(e) => fail(&mut report, Stage::Diagnostics, e),
        }
    }

    let mut results = Vec::with_capacity(sc.expected.len());
    for ex in &sc.expected {
        let (passed, detail) = evaluate(sc, ex, &report, fine.as_ref(), &arcs, smap.as_ref(), seed);
        results.push(ExpectationResult {
            expectation: ex.clone(),
            passed,
            detail,
        });
    }
    report.expectations = results;

    if let Some(root) = &opts.out {
        if let Err(e) = write_artifacts(&root.join(&sc.name), &report, fine.as_ref(), &arcs, smap.as_ref()) {
            fail(&mut report, Stage::Artifacts, e);
        }
    }
    report.passed = report.failures.is_empty() && report.expectations.iter().all(|e| e.passed);
    if let Some(root) = &opts.out {
        let written = serde_json::to_string_pretty(&report)
            .map_err(Error::from)
            .and_then(|text| Ok(std::fs::write(root.join(&sc.name).join("report.json"), text)?));
        if let Err(e) = written {
            fail(&mut report, Stage::Artifacts, e);
            report.passed = false;
        }
    }
    RunArtifacts {
        report,
        coarse,
        fine,
        arcs,
        sing_map: smap,
    }
}

fn regularity(
    sc: &Scenario,
    c: &ScalarGridField,
    f: &ScalarGridField,
    e: &[BoundaryPoint],
) -> Result<Vec<RegularityReport>> {
    let mut out = Vec::new();
    let radii = default_radii(f.grid());
    for z in e.iter().take(4) {
        let mut r = regularity_report(c, f, &z.x, sc.tolerances.growth_factor)?;
        r.holder_fit = holder_fit(f, &sc.domain, &z.x, &radii).ok();
        out.push(r);
    }
    // the deepest interior node, with a box of second differences around it
    let g = f.grid();
    let deepest = (0..g.len())
        .filter(|&l| f.node_class()[l] == NodeClass::Interior && f.is_inside(l))
        .map(|l| (sc.domain.signed_distance_estimate(&g.node(l)), l))
        .min_by(|a, b| a.0.total_cmp(&b.0));
    if let Some((_, l)) = deepest {
        let x = g.node(l);
        let mut r = regularity_report(c, f, &x, sc.tolerances.growth_factor)?;
        let step = 2.0 * g.max_spacing();
        let region: Vec<[f64; 2]> = x.iter().map(|v| [v - 2.0 * step, v + 2.0 * step]).collect();
        if let Ok(v) = semiconcavity_test(f, &sc.domain, &region, step) {
            r.semiconcavity_constant = v;
        }
        out.push(r);
    }
    Ok(out)
}

fn interior_nodes(f: &ScalarGridField) -> Vec<usize> {
    (0..f.grid().len())
        .filter(|&l| f.is_inside(l) && f.node_class()[l] == NodeClass::Interior)
        .collect()
}

/// `(T_grid, oracle)` at `count` random interior nodes of `f`.
pub fn oracle_pairs(sc: &Scenario, f: &ScalarGridField, count: usize, seed: u64) -> Result<Vec<(Vec<f64>, f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut nodes = interior_nodes(f);
    nodes.shuffle(&mut rng);
    nodes.truncate(count);
    let diam = sc.domain.diameter();
    let tol = &sc.tolerances;
    use rayon::prelude::*;
    nodes
        .par_iter()
        .enumerate()
        .map(|(k, &l)| {
            let x = f.grid().node(l);
            let ub = upper_bound_oracle(
                &sc.system,
                &sc.domain,
                &x,
                tol.oracle_samples,
                diam,
                tol.dt_rel * diam,
                seed.wrapping_add(k as u64),
                tol,
            )?;
            Ok((x, f.values()[l], ub))
        })
        .collect()
}

fn evaluate(
    sc: &Scenario,
    ex: &Expectation,
    rep: &RunReport,
    fine: Option<&ScalarGridField>,
    arcs: &[ExtremalArc],
    smap: Option<&SingMap>,
    seed: u64,
) -> (bool, String) {
    let need_field = || fine.ok_or("no solution (eikonal stage failed)".to_string());
    let r: std::result::Result<(bool, String), String> = (|| match ex {
        Expectation::HormanderHolds { value } => {
            let h = rep.hormander.as_ref().ok_or("no Lie hull result")?;
            Ok((h.holds == *value, format!("hormander holds = {} (want {value})", h.holds)))
        }
        Expectation::ROmega { value } => {
            let r = rep.r_omega.ok_or("r_Ω unavailable")?;
            Ok((r == *value, format!("r_Ω = {r} (want {value})")))
        }
        Expectation::CharacteristicPoints { min, max } => {
            let n = rep.characteristic_points.len();
            let ok = n >= *min && max.is_none_or(|m| n <= m);
            Ok((ok, format!("{n} characteristic points (want {min}..{max:?})")))
        }
        Expectation::SymplecticAll { value } => {
            let bad = rep.symplectic.iter().filter(|r| r.symplectic != *value).count();
            Ok((
                bad == 0 && !rep.symplectic.is_empty(),
                format!("{} of {} Char points have symplectic = {value}", rep.symplectic.len() - bad, rep.symplectic.len()),
            ))
        }
        Expectation::SymplecticAt { x, p, value } => {
            let r = rep
                .symplectic
                .iter()
                .find(|r| &r.x == x && &r.p == p)
                .ok_or("phase point not tested")?;
            Ok((
                r.symplectic == *value,
                format!("symplectic at {x:?}, {p:?}: {} (rank {} of {})", r.symplectic, r.omega_rank, r.tangent_dim),
            ))
        }
        Expectation::SingularArcs { min, max } => {
            let n = arcs.len();
            let ok = n >= *min && max.is_none_or(|m| n <= m);
            Ok((ok, format!("{n} singular arcs (want {min}..{max:?})")))
        }
        Expectation::SingMapEmpty => {
            let s = smap.ok_or("no sing map")?;
            Ok((s.is_empty(), format!("sing map has {} nodes (want 0)", s.count())))
        }
        Expectation::SingMapNearPlanes { axis, values, cells } => {
            let s = smap.ok_or("no sing map")?;
            let h = s.grid.max_spacing();
            let worst = s
                .flagged()
                .map(|l| {
                    let x = s.grid.node(l);
                    values.iter().map(|v| (x[*axis] - v).abs()).fold(f64::INFINITY, f64::min) / h
                })
                .fold(0.0, f64::max);
            Ok((
                worst <= *cells,
                format!("sing map: {} nodes, farthest {worst:.2} cells from the planes (want ≤ {cells})", s.count()),
            ))
        }
        Expectation::SingMapNearArcs { cells } => {
            let s = smap.ok_or("no sing map")?;
            let h = s.grid.max_spacing();
            let worst = s
                .flagged()
                .map(|l| {
                    let x = s.grid.node(l);
                    arcs.iter().map(|a| a.distance_to(&x)).fold(f64::INFINITY, f64::min) / h
                })
                .fold(0.0, f64::max);
            Ok((
                !s.is_empty() && worst <= *cells,
                format!("sing map: {} nodes, farthest {worst:.2} cells from an arc (want nonempty, ≤ {cells})", s.count()),
            ))
        }
        Expectation::TValue { point, value, tol_cells, tol_abs } => {
            let f = need_field()?;
            let t = f.value_at(point).ok_or("no grid value at the point")?;
            let bound = tol_cells * f.grid().max_spacing() + tol_abs;
            Ok((
                (t - value).abs() <= bound,
                format!("T{point:?} = {t:.4} (want {value} ± {bound:.4})"),
            ))
        }
        Expectation::SphereDistance { center, radius, tol_cells } => {
            let f = need_field()?;
            let g = f.grid();
            let err = f
                .closure_nodes()
                .map(|l| {
                    let x = g.node(l);
                    (f.values()[l] - (radius - linalg::dist(&x, center))).abs()
                })
                .fold(0.0, f64::max);
            let h = g.max_spacing();
            Ok((
                err <= tol_cells * h,
                format!("max |T − d| = {:.3}h (want ≤ {tol_cells}h)", err / h),
            ))
        }
        Expectation::OracleSandwich { points, tol_cells } => {
            let f = need_field()?;
            let h = f.grid().max_spacing();
            let pairs = oracle_pairs(sc, f, *points, seed).map_err(|e| e.to_string())?;
            let worst = pairs.iter().map(|(_, t, ub)| t - ub).fold(f64::NEG_INFINITY, f64::max);
            Ok((
                pairs.len() == *points && worst <= tol_cells * h,
                format!("max T_grid − oracle = {:.3}h over {} nodes (want ≤ {tol_cells}h)", worst / h, pairs.len()),
            ))
        }
        Expectation::Converged => {
            let f = need_field()?;
            Ok((f.stats().converged, format!("solver converged in {} sweeps", f.stats().sweeps)))
        }
    })();
    r.unwrap_or_else(|why| (false, format!("{ex:?}: {why}")))
}

fn write_artifacts(
    dir: &Path,
    report: &RunReport,
    fine: Option<&ScalarGridField>,
    arcs: &[ExtremalArc],
    smap: Option<&SingMap>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    if let Some(f) = fine {
        f.write_csv(&dir.join("T.csv"))?;
        f.write_metadata(&dir.join("T_meta.json"))?;
        if let Some(s) = smap {
            std::fs::write(dir.join("sing_map.csv"), s.to_csv(|l| f.is_inside(l)))?;
        }
    }
    let mut e = String::new();
    if let Some(z) = report.characteristic_points.first() {
        let n = z.x.len();
        let cols: Vec<String> = (1..=n)
            .map(|k| format!("x{k}"))
            .chain((1..=n).map(|k| format!("nu{k}")))
            .chain(["residual".to_string()])
            .collect();
        let _ = writeln!(e, "{}", cols.join(","));
        for z in &report.characteristic_points {
            let row: Vec<String> = z.x.iter().chain(&z.normal).chain([&z.char_residual]).map(|v| v.to_string()).collect();
            let _ = writeln!(e, "{}", row.join(","));
        }
    }
    std::fs::write(dir.join("characteristic_points.csv"), e)?;
    for (k, a) in arcs.iter().enumerate() {
        std::fs::write(dir.join(format!("arc_{k}.csv")), a.to_csv())?;
    }
    Ok(())
}

/// Parses and validates a config file without running it.
pub fn check_config(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    let sc = Scenario::from_json(&text)?;
    Grid::covering(&sc.domain, sc.grid)?;
    LieHull::build(&sc.system, sc.tolerances.max_depth)?;
    Ok(sc)
}
