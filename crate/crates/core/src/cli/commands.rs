use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{MetaMode, RunConfig, SweepMode};
use super::manifest::{write_atomic, RunManifest};
use super::selftest;
use crate::dump;
use crate::energy::Model;
use crate::error::{Error, Result};
use crate::groundstate::{self, curve_step, minimize_with, CurvePoint, Init, MinimizeOptions, Status};
use crate::metastable::{self, LocalOptions, RHO0_CAP};
use crate::pokhozaev;
use crate::spectrum;
use crate::transition::{self, status_name, GstarResult, Probe, TransitionReport};
use crate::{Field, Grid};

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    manifest: RunManifest,
    start: Instant,
    prior_wall: f64,
}

impl Ctx {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.out.join(name), bytes)?;
        self.manifest.record(&self.out, name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, serde_json::to_string_pretty(value)?.as_bytes())
    }

    fn dump(&mut self, name: &str, field: &Field) -> Result<()> {
        let mut buf = Vec::new();
        dump::write_field(&mut buf, field)?;
        self.write(name, &buf)
    }

    fn load(&self, name: &str) -> Result<Field> {
        dump::load(self.out.join(name))
    }

    fn verdict<T: Serialize>(&mut self, key: &str, value: T) -> Result<()> {
        self.manifest.verdicts.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    fn checkpoint(&mut self) -> Result<()> {
        self.manifest.wall_time_s = self.prior_wall + self.start.elapsed().as_secs_f64();
        self.manifest.store(&self.out)
    }

    fn finish(&mut self) -> Result<()> {
        self.manifest.completed = true;
        self.manifest.progress = serde_json::Value::Null;
        self.checkpoint()
    }
}

pub(super) fn execute(name: &str, cfg: RunConfig, previous: Option<RunManifest>) -> Result<i32> {
    fs::create_dir_all(&cfg.out)?;
    let manifest = previous.unwrap_or_else(|| RunManifest::new(name, cfg.map.clone()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let mut ctx = Ctx { out: cfg.out.clone(), prior_wall: manifest.wall_time_s, manifest, cfg, start: Instant::now() };
    pool.install(|| {
        let code = match name {
            "groundstate" => groundstate(&mut ctx)?,
            "sweep" => match sweep(&mut ctx)? {
                true => 0,
                false => return Ok(0),
            },
            "gstar" => gstar(&mut ctx)?,
            "classify" => match classify(&mut ctx)? {
                true => 0,
                false => return Ok(0),
            },
            "pokhozaev" => pokhozaev_cmd(&mut ctx)?,
            "spectrum" => spectrum_cmd(&mut ctx)?,
            "metastable" => metastable_cmd(&mut ctx)?,
            "selftest" => selftest_cmd(&mut ctx)?,
            other => return Err(Error::ConfigInvalid(format!("unknown subcommand `{other}`"))),
        };
        ctx.finish()?;
        Ok(code)
    })
}

pub(super) fn resume(dir: &Path, workers: Option<usize>) -> Result<i32> {
    let manifest = RunManifest::load(dir)?;
    if manifest.completed {
        println!("run in {} is already complete", dir.display());
        return Ok(0);
    }
    manifest.verify(dir)?;
    let mut map = manifest.config.clone();
    map.remove("sweep.max_probes");
    map.remove("transition.stop_after");
    if let Some(w) = workers {
        map.insert("workers".into(), w.to_string());
    }
    let mut cfg = RunConfig::from_map(&map)?;
    cfg.out = dir.to_path_buf();
    let name = manifest.subcommand.clone();
    let mut manifest = manifest;
    manifest.config = map;
    execute(&name, cfg, Some(manifest))
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Gnuplot-style table: `# header` then whitespace-separated columns.
fn dat(header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut s = format!("# {header}\n");
    for row in rows {
        let cols: Vec<String> = row.into_iter().map(num).collect();
        s.push_str(&cols.join(" "));
        s.push('\n');
    }
    s
}

fn grid_json(grid: &Grid) -> serde_json::Value {
    json!({"dim": grid.dim(), "n": grid.n(), "L": grid.length()})
}

fn input_field(cfg: &RunConfig) -> Result<Option<Field>> {
    match &cfg.input {
        None => Ok(None),
        Some(path) => {
            let u = dump::load(path)?;
            cfg.grid.check_same(u.grid())?;
            Ok(Some(u))
        }
    }
}

fn start_options(cfg: &RunConfig) -> Result<MinimizeOptions> {
    let mut o = cfg.minimize.clone();
    if let Some(u) = input_field(cfg)? {
        o.init = Init::Provided(u);
    }
    Ok(o)
}

/// Values along the first axis through the origin.
fn profile_dat(u: &Field) -> String {
    let grid = u.grid();
    let mid = grid.n() / 2;
    let rows = (0..grid.len())
        .filter(|&i| grid.multi_index(i)[1..grid.dim()].iter().all(|&k| k == mid))
        .map(|i| vec![grid.coords(i)[0], u.values()[i]]);
    dat("x u", rows)
}

fn groundstate(ctx: &mut Ctx) -> Result<i32> {
    let c = &ctx.cfg;
    let g = c.require_g()?;
    let opts = start_options(c)?;
    let r = groundstate::minimize_mass(g, c.m, &c.potential, &c.grid, &opts)?;
    let report = json!({
        "g": g,
        "m": c.m,
        "potential": c.potential_spec,
        "grid": grid_json(&c.grid),
        "result": r.summary(),
    });
    ctx.json("groundstate.json", &report)?;
    ctx.dump("state.chqf", &r.u)?;
    ctx.write("profile.dat", profile_dat(&r.u).as_bytes())?;
    ctx.verdict("status", status_name(r.status))?;
    ctx.verdict("e", r.e_estimate())?;
    println!("g={g} status={} e={:e} lambda={:e}", status_name(r.status), r.e_estimate(), r.lambda);
    Ok(0)
}

#[derive(Default, Serialize, Deserialize)]
struct SweepProgress {
    rows: Vec<CurvePoint>,
    warm: Option<String>,
}

const SWEEP_WARM: &str = "sweep_warm.chqf";

fn sweep_csv(rows: &[CurvePoint]) -> String {
    let mut s = String::from("g,e,status,total,residual\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", num(r.g), num(r.e), status_name(r.status), num(r.total), num(r.residual));
    }
    s
}

/// Returns `false` when the run stopped early at `sweep.max_probes`.
fn sweep(ctx: &mut Ctx) -> Result<bool> {
    let g_list = ctx.cfg.g_list()?;
    groundstate::check_increasing(&g_list)?;
    let mut prog: SweepProgress =
        if ctx.manifest.progress.is_null() { SweepProgress::default() } else { serde_json::from_value(ctx.manifest.progress.clone())? };
    let model = Model::new(&ctx.cfg.potential, &ctx.cfg.grid)?;
    let limit = ctx.cfg.max_probes.unwrap_or(usize::MAX);
    let (m, opts) = (ctx.cfg.m, ctx.cfg.minimize.clone());
    match ctx.cfg.sweep_mode {
        SweepMode::Curve => {
            let mut warm = match &prog.warm {
                Some(name) => Some(ctx.load(name)?),
                None => input_field(&ctx.cfg)?,
            };
            let mut done = 0;
            while prog.rows.len() < g_list.len() && done < limit {
                let g = g_list[prog.rows.len()];
                let (point, next) = curve_step(&model, g, m, &opts, warm.as_ref())?;
                eprintln!("sweep g={g:e} e={:e} {}", point.e, status_name(point.status));
                prog.rows.push(point);
                prog.warm = match &next {
                    Some(u) => {
                        ctx.dump(SWEEP_WARM, u)?;
                        Some(SWEEP_WARM.to_string())
                    }
                    None => None,
                };
                warm = next;
                done += 1;
                ctx.manifest.progress = serde_json::to_value(&prog)?;
                ctx.checkpoint()?;
            }
        }
        SweepMode::Table => {
            let start = prog.rows.len();
            let end = g_list.len().min(start.saturating_add(limit));
            let rows: Vec<CurvePoint> = g_list[start..end]
                .par_iter()
                .map(|&g| minimize_with(&model, g, m, &opts).map(|r| CurvePoint::from_result(g, &r)))
                .collect::<Result<_>>()?;
            prog.rows.extend(rows);
            ctx.manifest.progress = serde_json::to_value(&prog)?;
            ctx.checkpoint()?;
        }
    }
    if prog.rows.len() < g_list.len() {
        println!("stopped after {} of {} probes; continue with `choquard resume {}`", prog.rows.len(), g_list.len(), ctx.out.display());
        return Ok(false);
    }
    ctx.write("sweep.csv", sweep_csv(&prog.rows).as_bytes())?;
    ctx.write("sweep.dat", dat("g e", prog.rows.iter().map(|r| vec![r.g, r.e])).as_bytes())?;
    let nonincreasing = prog.rows.windows(2).all(|w| w[1].e <= w[0].e + 1e-6);
    ctx.verdict("nonincreasing", nonincreasing)?;
    println!("sweep: {} probes, e nonincreasing: {nonincreasing}", prog.rows.len());
    Ok(true)
}

#[derive(Serialize, Deserialize)]
struct GstarRecord {
    g_star: f64,
    lo: f64,
    hi: f64,
    bracket_width: f64,
    monotone: bool,
    trace: Vec<Probe>,
    hi_state: Option<String>,
}

impl GstarRecord {
    fn of(gs: &GstarResult, hi_state: Option<String>) -> Self {
        Self { g_star: gs.g_star, lo: gs.lo, hi: gs.hi, bracket_width: gs.hi - gs.lo, monotone: gs.monotone, trace: gs.trace.clone(), hi_state }
    }

    fn restore(self, ctx: &Ctx) -> Result<GstarResult> {
        let hi_state = self.hi_state.as_deref().map(|n| ctx.load(n)).transpose()?;
        Ok(GstarResult { g_star: self.g_star, lo: self.lo, hi: self.hi, trace: self.trace, monotone: self.monotone, hi_state })
    }
}

fn trace_csv(trace: &[Probe]) -> String {
    let mut s = String::from("g,e,total,status,binding\n");
    for p in trace {
        let _ = writeln!(s, "{},{},{},{},{}", num(p.g), num(p.e), num(p.total), status_name(p.status), p.binding);
    }
    s
}

fn trace_dat(trace: &[Probe]) -> String {
    let mut rows: Vec<Vec<f64>> = trace.iter().map(|p| vec![p.g, p.e]).collect();
    rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
    dat("g e", rows)
}

fn gstar(ctx: &mut Ctx) -> Result<i32> {
    let c = &ctx.cfg;
    let gs = transition::locate_gstar(c.m, &c.potential, &c.grid, &c.transition)?;
    let state = match &gs.hi_state {
        Some(u) => {
            ctx.dump("gstar_state.chqf", u)?;
            Some("gstar_state.chqf".to_string())
        }
        None => None,
    };
    let rec = GstarRecord::of(&gs, state);
    ctx.json("gstar.json", &rec)?;
    ctx.write("gstar_trace.csv", trace_csv(&gs.trace).as_bytes())?;
    ctx.write("gstar.dat", trace_dat(&gs.trace).as_bytes())?;
    ctx.verdict("g_star", gs.g_star)?;
    ctx.verdict("bracket", (gs.lo, gs.hi))?;
    ctx.verdict("monotone", gs.monotone)?;
    println!("g* = {:e} in [{:e}, {:e}], monotone trace: {}", gs.g_star, gs.lo, gs.hi, gs.monotone);
    Ok(0)
}

const CLASSIFY_STATE: &str = "classify_hi_state.chqf";

fn write_classification(ctx: &mut Ctx, rep: &TransitionReport) -> Result<()> {
    ctx.json("classify.json", rep)?;
    ctx.write("classify_trace.csv", rep.trace_csv().as_bytes())?;
    let mut rows: Vec<Vec<f64>> = rep.evidence.sequence.iter().map(|r| vec![r.g, r.l4, r.grad_sq]).collect();
    if let Some(a) = &rep.evidence.at_gstar {
        rows.push(vec![rep.evidence.g_at_star, a.diagnostics.l4, a.diagnostics.grad_sq]);
    }
    ctx.write("classify_l4.dat", dat("g l4 grad_sq", rows).as_bytes())?;
    ctx.verdict("order", rep.order)?;
    ctx.verdict("g_star", rep.g_star)?;
    ctx.verdict("l4_ratio", rep.evidence.l4_ratio)?;
    println!("order {:?}, g* = {:e}, l4 ratio {:.4}", rep.order, rep.g_star, rep.evidence.l4_ratio);
    Ok(())
}

/// Returns `false` when stopped after the bisection stage.
fn classify(ctx: &mut Ctx) -> Result<bool> {
    let (m, p, grid, opts) = (ctx.cfg.m, ctx.cfg.potential.clone(), ctx.cfg.grid.clone(), ctx.cfg.transition.clone());
    let gs = if let Some(v) = ctx.manifest.progress.get("gstar") {
        let rec: GstarRecord = serde_json::from_value(v.clone())?;
        rec.restore(ctx)?
    } else {
        if let Some(rep) = transition::one_d_verdict(m, &p, &grid, &opts)? {
            write_classification(ctx, &rep)?;
            return Ok(true);
        }
        let gs = transition::locate_gstar(m, &p, &grid, &opts)?;
        let state = match &gs.hi_state {
            Some(u) => {
                ctx.dump(CLASSIFY_STATE, u)?;
                Some(CLASSIFY_STATE.to_string())
            }
            None => None,
        };
        ctx.manifest.progress = json!({ "gstar": GstarRecord::of(&gs, state) });
        ctx.checkpoint()?;
        gs
    };
    if ctx.cfg.stop_after_gstar {
        println!("stopped after the bisection stage (g* = {:e}); continue with `choquard resume {}`", gs.g_star, ctx.out.display());
        return Ok(false);
    }
    match transition::classify_from_gstar(m, &p, &grid, &gs, &opts) {
        Ok(rep) => {
            write_classification(ctx, &rep)?;
            Ok(true)
        }
        Err(Error::Inconclusive(report)) => {
            ctx.write("classify_inconclusive.json", report.as_bytes())?;
            ctx.checkpoint()?;
            Err(Error::Inconclusive(format!("evidence written to {}", ctx.out.join("classify_inconclusive.json").display())))
        }
        Err(e) => Err(e),
    }
}

/// The input dump, or a fresh minimizer at `run.g`.
fn subject_state(ctx: &Ctx) -> Result<(f64, Field)> {
    let c = &ctx.cfg;
    let g = c.require_g()?;
    match input_field(c)? {
        Some(u) => Ok((g, u)),
        None => {
            let r = groundstate::minimize_mass(g, c.m, &c.potential, &c.grid, &c.minimize)?;
            Ok((g, r.u))
        }
    }
}

fn pokhozaev_cmd(ctx: &mut Ctx) -> Result<i32> {
    let (g, u) = subject_state(ctx)?;
    let c = &ctx.cfg;
    let model = Model::new(&c.potential, &c.grid)?;
    let lambda = match c.lambda {
        Some(l) => l,
        None => model.lagrange_multiplier(&u, g)?,
    };
    let rep = pokhozaev::pokhozaev_residual_with(&model, &u, lambda, g)?;
    let virial = pokhozaev::virial_check(&u, g, &c.potential)?;
    let f_pairing = if c.grid.dim() == 2 { pokhozaev::two_d_F_pairing(&u, &c.potential).ok() } else { None };
    let auto = pokhozaev::autocorrelation_monotone_check(&u)?;
    let h = c.grid.spacing();
    let report = json!({
        "g": g,
        "lambda": lambda,
        "identity": rep,
        "virial": virial,
        "f_pairing": f_pairing,
        "autocorrelation_monotone": auto.monotone,
        "autocorrelation_max_violation": auto.max_violation,
    });
    ctx.json("pokhozaev.json", &report)?;
    ctx.write("autocorrelation.dat", dat("r h", auto.shells.iter().enumerate().map(|(k, v)| vec![k as f64 * h, *v])).as_bytes())?;
    ctx.verdict("relative_residual", rep.relative_residual)?;
    println!("relative residual {:e}, virial mismatch {:e}", rep.relative_residual, virial.relative);
    Ok(0)
}

#[derive(Serialize)]
struct SpectrumRow {
    g: f64,
    e: f64,
    status: Status,
    eigenvalue: f64,
    bound: f64,
    holds: bool,
    rayleigh_residual: f64,
    clr_integral: Option<f64>,
}

fn spectrum_cmd(ctx: &mut Ctx) -> Result<i32> {
    let c = ctx.cfg.clone();
    if c.g_range.is_some() {
        let mut g_seq = c.g_list()?;
        g_seq.reverse();
        let start = input_field(&c)?;
        let seq = transition::minimizer_sequence(c.m, &c.potential, &c.grid, &g_seq, start.as_ref(), &c.minimize)?;
        let mut rows = Vec::new();
        for (&g, r) in g_seq.iter().zip(&seq) {
            let op = spectrum::Schrodinger::new(&r.u, g, &c.potential)?;
            let eig = spectrum::lowest_eigenpair_of(&op, r.u.values(), c.eig_tol)?;
            let bound = r.energy.total / c.m;
            let clr = if c.grid.dim() == 3 { Some(spectrum::clr_integral(&r.u, &c.potential)?) } else { None };
            rows.push(SpectrumRow {
                g,
                e: r.e_estimate(),
                status: r.status,
                eigenvalue: eig.eigenvalue,
                bound,
                holds: eig.eigenvalue <= bound + 1e-8,
                rayleigh_residual: eig.rayleigh_residual,
                clr_integral: clr,
            });
        }
        let witness = if c.grid.dim() == 3 { Some(transition::clr_witness_of(&c.potential, &g_seq, &seq)?) } else { None };
        let mut csv = String::from("g,e,status,eigenvalue,bound,holds,clr_integral\n");
        for r in &rows {
            let clr = r.clr_integral.map(num).unwrap_or_default();
            let _ = writeln!(csv, "{},{},{},{},{},{},{}", num(r.g), num(r.e), status_name(r.status), num(r.eigenvalue), num(r.bound), r.holds, clr);
        }
        ctx.write("spectrum.csv", csv.as_bytes())?;
        ctx.write("spectrum.dat", dat("g eigenvalue e_over_m", rows.iter().map(|r| vec![r.g, r.eigenvalue, r.bound])).as_bytes())?;
        ctx.json("spectrum.json", &json!({"rows": rows, "clr_witness": witness}))?;
        let all = rows.iter().all(|r| r.holds);
        ctx.verdict("bound_holds", all)?;
        if let Some(w) = &witness {
            ctx.verdict("clr_nondegenerate", w.nondegenerate)?;
        }
        println!("eigenvalue bound holds along {} states: {all}", rows.len());
        return Ok(0);
    }
    let (g, u) = subject_state(ctx)?;
    let model = Model::new(&c.potential, &c.grid)?;
    let e = model.energy(&u, g)?.total;
    let op = spectrum::Schrodinger::new(&u, g, &c.potential)?;
    let eig = spectrum::lowest_eigenpair_of(&op, u.values(), c.eig_tol)?;
    let bound = e / c.m;
    let clr = if c.grid.dim() == 3 { Some(spectrum::clr_integral(&u, &c.potential)?) } else { None };
    let report = json!({
        "g": g,
        "energy": e,
        "eigenvalue": eig.eigenvalue,
        "rayleigh_residual": eig.rayleigh_residual,
        "iterations": eig.iterations,
        "bound": bound,
        "holds": eig.eigenvalue <= bound + 1e-8,
        "clr_integral": clr,
    });
    ctx.json("spectrum.json", &report)?;
    ctx.dump("eigenfunction.chqf", &eig.eigenfunction)?;
    ctx.verdict("eigenvalue", eig.eigenvalue)?;
    println!("lowest eigenvalue {:e}, e/m = {:e}", eig.eigenvalue, bound);
    Ok(0)
}

fn rho0_for(c: &RunConfig, g: f64) -> Result<f64> {
    match c.rho0 {
        Some(r) => Ok(r),
        None => metastable::compute_rho0(c.g_tilde.unwrap_or(g), c.m, &c.potential, &c.grid),
    }
}

fn metastable_cmd(ctx: &mut Ctx) -> Result<i32> {
    let c = ctx.cfg.clone();
    match c.meta_mode {
        MetaMode::G2 => {
            let g2 = metastable::nonexistence_threshold_g2(c.m, &c.potential)?;
            let w = metastable::w_norm_32(&c.potential)?;
            ctx.json("metastable.json", &json!({"mode": "g2", "m": c.m, "g2": g2, "w_norm_32": w}))?;
            ctx.verdict("g2", g2)?;
            println!("g2 = {g2:e}");
        }
        MetaMode::Rho0 => {
            let g = c.g_tilde.or(c.g).ok_or_else(|| Error::ConfigInvalid("key `metastable.g_tilde` or `run.g` is required".into()))?;
            let r = metastable::rho0_report(g, c.m, &c.potential, &c.grid, RHO0_CAP)?;
            ctx.json("metastable.json", &json!({"mode": "rho0", "g_tilde": g, "rho0": r}))?;
            ctx.verdict("rho0", r.rho0)?;
            println!("rho0 = {:e} at radius {:e}", r.rho0, r.radius);
        }
        MetaMode::Local => {
            let g = c.require_g()?;
            let rho0 = rho0_for(&c, g)?;
            let opts = LocalOptions { minimize: start_options(&c)?, band: c.band };
            match metastable::local_minimize(g, c.m, &c.potential, &c.grid, rho0, &opts) {
                Ok(r) => {
                    ctx.dump("local.chqf", &r.u)?;
                    ctx.json("metastable.json", &json!({"mode": "local", "g": g, "rho0": rho0, "outcome": "converged", "result": r.summary()}))?;
                    ctx.verdict("outcome", "converged")?;
                    ctx.verdict("energy", r.energy.total)?;
                    println!("local minimizer: energy {:e}, residual {:e}", r.energy.total, r.residual);
                }
                Err(Error::ConstraintHit { guard }) => {
                    ctx.json("metastable.json", &json!({"mode": "local", "g": g, "rho0": rho0, "outcome": "constraint_hit", "guard": guard}))?;
                    ctx.verdict("outcome", "constraint_hit")?;
                    println!("flow reached the constraint ||grad u||^2 = {guard:e}");
                }
                Err(e) => return Err(e),
            }
        }
        MetaMode::Saddle => {
            let g = c.require_g()?;
            let u1 = input_field(&c)?.ok_or_else(|| Error::ConfigInvalid("key `run.input` (the low-energy endpoint) is required for saddle mode".into()))?;
            let e1 = Model::new(&c.potential, &c.grid)?.energy(&u1, g)?.total;
            let rho1 = match c.rho1 {
                Some(r) => r,
                None => metastable::choose_rho1(rho0_for(&c, g)?, e1),
            };
            let s = metastable::mountain_pass(g, c.m, &c.potential, &c.grid, rho1, &u1, &c.saddle)?;
            ctx.dump("saddle.chqf", &s.u)?;
            ctx.json("metastable.json", &json!({"mode": "saddle", "g": g, "endpoint_energy": e1, "saddle": s.summary()}))?;
            ctx.write("path.csv", s.path_csv().as_bytes())?;
            ctx.write("path.dat", dat("node energy", s.path_energies.iter().enumerate().map(|(k, e)| vec![k as f64, *e])).as_bytes())?;
            ctx.write("path_history.dat", dat("sweep path_max", s.path_history.iter().enumerate().map(|(k, e)| vec![k as f64, *e])).as_bytes())?;
            ctx.verdict("c_mp", s.c_mp)?;
            ctx.verdict("barrier_ok", s.barrier_ok)?;
            println!("mountain pass c = {:e} (rho1^2/8 = {:e}), residual {:e}", s.c_mp, rho1 * rho1 / 8.0, s.residual);
        }
    }
    Ok(0)
}

fn selftest_cmd(ctx: &mut Ctx) -> Result<i32> {
    let outcomes = selftest::run_suites();
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    let green = outcomes.iter().all(|o| o.passed);
    ctx.json("selftest.json", &outcomes)?;
    ctx.verdict("green", green)?;
    Ok(if green { 0 } else { 1 })
}
