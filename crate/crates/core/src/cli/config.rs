//! Flat `key = value` configuration with one level of `[section]`s.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::groundstate::{Init, MinimizeOptions, Scheme};
use crate::metastable::SaddleOptions;
use crate::spectrum::DEFAULT_EIG_TOL;
use crate::transition::TransitionOptions;
use crate::{Grid, Potential};

/// Resolved settings as `section.key -> value`.
pub type ConfigMap = BTreeMap<String, String>;

const KEYS: &[&str] = &[
    "seed",
    "workers",
    "out",
    "grid.dim",
    "grid.n",
    "grid.L",
    "run.g",
    "run.g_range",
    "run.m",
    "run.input",
    "run.lambda",
    "minimize.max_iters",
    "minimize.dt0",
    "minimize.dt_max",
    "minimize.grad_tol",
    "minimize.vanish_tol",
    "minimize.vanish_window",
    "minimize.init",
    "minimize.scheme",
    "minimize.momentum",
    "minimize.recenter_every",
    "sweep.mode",
    "sweep.max_probes",
    "transition.e_neg_tol",
    "transition.tol_g_rel",
    "transition.bracket",
    "transition.max_expansions",
    "transition.j_range",
    "transition.trend_factor",
    "transition.rho_floor",
    "transition.g_floor",
    "transition.stop_after",
    "spectrum.eig_tol",
    "metastable.mode",
    "metastable.g_tilde",
    "metastable.rho0",
    "metastable.rho1",
    "metastable.band",
    "metastable.nodes",
    "metastable.saddle_tol",
    "metastable.max_sweeps",
    "metastable.step",
    "metastable.polish_box",
];

/// Parses configuration text. Keys before the first section header are
/// top-level; `#` and `;` start comments.
pub fn parse_config(text: &str) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    let mut section = String::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::ConfigInvalid(format!("line {}: unterminated section header", no + 1)))?
                .trim();
            if name.is_empty() || name.contains(['.', ' ']) {
                return Err(Error::ConfigInvalid(format!("line {}: bad section name `{name}`", no + 1)));
            }
            section = name.to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::ConfigInvalid(format!("line {}: expected key = value", no + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::ConfigInvalid(format!("line {}: empty key", no + 1)));
        }
        let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

/// Writes a map back in the text format.
pub fn render_config(map: &ConfigMap) -> String {
    let mut out = String::new();
    let mut section = "";
    for (k, v) in map.iter().filter(|(k, _)| !k.contains('.')) {
        out.push_str(&format!("{k} = {v}\n"));
    }
    for (k, v) in map.iter().filter(|(k, _)| k.contains('.')) {
        let (s, key) = k.split_once('.').unwrap();
        if s != section {
            out.push_str(&format!("\n[{s}]\n"));
            section = s;
        }
        out.push_str(&format!("{key} = {v}\n"));
    }
    out
}

/// Replaces every `potential.*` entry by the parts of `NAME[:k=v,...]`.
pub fn set_potential(map: &mut ConfigMap, spec: &str) -> Result<()> {
    map.retain(|k, _| !k.starts_with("potential."));
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    map.insert("potential.name".into(), name.to_string());
    if name == "table" {
        map.insert("potential.path".into(), rest.to_string());
        return Ok(());
    }
    for kv in rest.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::ConfigInvalid(format!("potential parameter `{kv}` is not key=value")))?;
        map.insert(format!("potential.{}", k.trim()), v.trim().to_string());
    }
    Ok(())
}

fn potential_spec(map: &ConfigMap) -> String {
    let name = map.get("potential.name").cloned().unwrap_or_else(|| "ion_atom".into());
    if name == "table" {
        return format!("table:{}", map.get("potential.path").cloned().unwrap_or_default());
    }
    let params: Vec<String> = map
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("potential.").filter(|p| *p != "name").map(|p| format!("{p}={v}")))
        .collect();
    if params.is_empty() {
        name
    } else {
        format!("{name}:{}", params.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepMode {
    /// Sequential, warm-started along increasing `g`.
    Curve,
    /// Independent cold starts on the worker pool.
    Table,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetaMode {
    Local,
    Saddle,
    G2,
    Rho0,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub map: ConfigMap,
    pub grid: Grid,
    pub potential_spec: String,
    pub potential: Potential,
    pub g: Option<f64>,
    pub g_range: Option<(f64, f64, usize)>,
    pub m: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
    pub input: Option<PathBuf>,
    pub lambda: Option<f64>,
    pub minimize: MinimizeOptions,
    pub sweep_mode: SweepMode,
    pub max_probes: Option<usize>,
    pub transition: TransitionOptions,
    /// Leave a classification incomplete after the bisection stage.
    pub stop_after_gstar: bool,
    pub eig_tol: f64,
    pub meta_mode: MetaMode,
    pub g_tilde: Option<f64>,
    pub rho0: Option<f64>,
    pub rho1: Option<f64>,
    pub band: f64,
    pub saddle: SaddleOptions,
}

struct Reader<'a> {
    map: &'a ConfigMap,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| Error::ConfigInvalid(format!("key `{key}`: cannot parse `{v}`"))),
        }
    }

    fn or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn pair(&self, key: &str) -> Result<Option<(f64, f64)>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        let bad = || Error::ConfigInvalid(format!("key `{key}`: expected lo:hi, got `{v}`"));
        let (a, b) = v.split_once(':').ok_or_else(bad)?;
        Ok(Some((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)))
    }
}

pub fn parse_init(v: &str) -> Result<Init> {
    let (name, arg) = v.split_once(':').unwrap_or((v, ""));
    match name {
        "gaussian" => Ok(Init::GaussianBump),
        "random" => Ok(Init::Random),
        "perturbed" => {
            let a = if arg.is_empty() { 0.2 } else { arg.parse().map_err(|_| Error::ConfigInvalid(format!("bad perturbation amplitude `{arg}`")))? };
            Ok(Init::PerturbedBump(a))
        }
        _ => Err(Error::ConfigInvalid(format!("key `minimize.init`: unknown initial state `{v}`"))),
    }
}

fn config_error(key: &str, e: Error) -> Error {
    match e {
        Error::ConfigInvalid(s) => Error::ConfigInvalid(s),
        other => Error::ConfigInvalid(format!("{key}: {other}")),
    }
}

/// Default worker count: `CHOQUARD_WORKERS` when set, else 1.
pub fn default_workers() -> Result<usize> {
    match std::env::var("CHOQUARD_WORKERS") {
        Ok(v) => v.trim().parse().ok().filter(|&w: &usize| w > 0).ok_or_else(|| Error::ConfigInvalid(format!("CHOQUARD_WORKERS: cannot parse `{v}`"))),
        Err(_) => Ok(1),
    }
}

impl RunConfig {
    /// Validates every key and builds the run settings.
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        for k in map.keys() {
            if !KEYS.contains(&k.as_str()) && !k.starts_with("potential.") {
                return Err(Error::ConfigInvalid(format!("unknown key `{k}`")));
            }
        }
        let r = Reader { map };
        let dim = r.or("grid.dim", 3usize)?;
        let n = r.or("grid.n", 64usize)?;
        let length = r.or("grid.L", 24.0f64)?;
        let grid = Grid::new(dim, n, length).map_err(|e| config_error("grid", e))?;
        let potential_spec = potential_spec(map);
        let potential = Potential::parse(&potential_spec, dim).map_err(|e| config_error("potential", e))?;

        let g: Option<f64> = r.parse("run.g")?;
        let g_range = match r.raw("run.g_range") {
            None => None,
            Some(v) => {
                let parts: Vec<&str> = v.split(':').collect();
                let bad = || Error::ConfigInvalid(format!("key `run.g_range`: expected lo:hi:steps, got `{v}`"));
                if parts.len() != 3 {
                    return Err(bad());
                }
                let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
                let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
                let steps: usize = parts[2].trim().parse().map_err(|_| bad())?;
                if !(lo > 0.0 && hi > lo && steps >= 2) {
                    return Err(bad());
                }
                Some((lo, hi, steps))
            }
        };
        let m = r.or("run.m", 1.0f64)?;
        if !(m > 0.0) {
            return Err(Error::ConfigInvalid(format!("key `run.m`: mass must be positive, got {m}")));
        }
        if let Some(g) = g {
            if !(g > 0.0) {
                return Err(Error::ConfigInvalid(format!("key `run.g`: coupling must be positive, got {g}")));
            }
        }
        let seed = r.or("seed", 0u64)?;
        let workers = match r.parse::<usize>("workers")? {
            Some(0) => return Err(Error::ConfigInvalid("key `workers`: must be positive".into())),
            Some(w) => w,
            None => default_workers()?,
        };

        let mut minimize = MinimizeOptions { seed, ..Default::default() };
        minimize.max_iters = r.or("minimize.max_iters", minimize.max_iters)?;
        minimize.dt0 = r.parse("minimize.dt0")?.or(minimize.dt0);
        minimize.dt_max = r.or("minimize.dt_max", minimize.dt_max)?;
        minimize.grad_tol = r.or("minimize.grad_tol", minimize.grad_tol)?;
        minimize.vanish_tol = r.or("minimize.vanish_tol", minimize.vanish_tol)?;
        minimize.vanish_window = r.or("minimize.vanish_window", minimize.vanish_window)?;
        minimize.momentum = r.or("minimize.momentum", minimize.momentum)?;
        minimize.recenter_every = r.or("minimize.recenter_every", minimize.recenter_every)?;
        if let Some(v) = r.raw("minimize.init") {
            minimize.init = parse_init(v)?;
        }
        if let Some(v) = r.raw("minimize.scheme") {
            minimize.scheme = match v {
                "semi_implicit" => Scheme::SemiImplicit,
                "explicit" => Scheme::Explicit,
                _ => return Err(Error::ConfigInvalid(format!("key `minimize.scheme`: unknown scheme `{v}`"))),
            };
        }
        minimize.validate().map_err(|e| config_error("minimize", e))?;

        let sweep_mode = match r.raw("sweep.mode").unwrap_or("curve") {
            "curve" => SweepMode::Curve,
            "table" => SweepMode::Table,
            v => return Err(Error::ConfigInvalid(format!("key `sweep.mode`: expected curve or table, got `{v}`"))),
        };
        let max_probes = r.parse("sweep.max_probes")?;

        let mut transition = TransitionOptions { minimize: minimize.clone(), ..Default::default() };
        transition.e_neg_tol = r.or("transition.e_neg_tol", transition.e_neg_tol)?;
        transition.tol_g_rel = r.or("transition.tol_g_rel", transition.tol_g_rel)?;
        transition.bracket = r.pair("transition.bracket")?.unwrap_or(transition.bracket);
        transition.max_expansions = r.or("transition.max_expansions", transition.max_expansions)?;
        if let Some((a, b)) = r.pair("transition.j_range")? {
            if !(a >= 0.0 && b >= a && a.fract() == 0.0 && b.fract() == 0.0) {
                return Err(Error::ConfigInvalid("key `transition.j_range`: expected integers lo:hi with lo <= hi".into()));
            }
            transition.j_range = (a as u32, b as u32);
        }
        transition.trend_factor = r.or("transition.trend_factor", transition.trend_factor)?;
        transition.rho_floor = r.or("transition.rho_floor", transition.rho_floor)?;
        transition.g_floor = r.or("transition.g_floor", transition.g_floor)?;
        if !(transition.bracket.0 > 0.0 && transition.bracket.1 > transition.bracket.0) {
            return Err(Error::ConfigInvalid("key `transition.bracket`: need 0 < lo < hi".into()));
        }

        let stop_after_gstar = match r.raw("transition.stop_after") {
            None => false,
            Some("gstar") => true,
            Some(v) => return Err(Error::ConfigInvalid(format!("key `transition.stop_after`: only `gstar` is supported, got `{v}`"))),
        };

        let meta_mode = match r.raw("metastable.mode").unwrap_or("local") {
            "local" => MetaMode::Local,
            "saddle" => MetaMode::Saddle,
            "g2" => MetaMode::G2,
            "rho0" => MetaMode::Rho0,
            v => return Err(Error::ConfigInvalid(format!("key `metastable.mode`: expected local, saddle, g2 or rho0, got `{v}`"))),
        };
        let mut saddle = SaddleOptions::default();
        saddle.nodes = r.or("metastable.nodes", saddle.nodes)?;
        saddle.saddle_tol = r.or("metastable.saddle_tol", saddle.saddle_tol)?;
        saddle.max_sweeps = r.or("metastable.max_sweeps", saddle.max_sweeps)?;
        saddle.step = r.or("metastable.step", saddle.step)?;
        match r.or("metastable.polish_box", 1usize)? {
            1 => {}
            k if k.is_power_of_two() => saddle.polish_grid = Some(Grid::new(grid.dim(), k * grid.n(), k as f64 * grid.length())?),
            k => return Err(Error::ConfigInvalid(format!("key `metastable.polish_box`: expected a power of two, got {k}"))),
        }

        Ok(Self {
            map: map.clone(),
            grid,
            potential_spec,
            potential,
            g,
            g_range,
            m,
            seed,
            out: PathBuf::from(r.raw("out").unwrap_or("choquard_out")),
            workers,
            input: r.raw("run.input").map(PathBuf::from),
            lambda: r.parse("run.lambda")?,
            minimize,
            sweep_mode,
            max_probes,
            transition,
            stop_after_gstar,
            eig_tol: r.or("spectrum.eig_tol", DEFAULT_EIG_TOL)?,
            meta_mode,
            g_tilde: r.parse("metastable.g_tilde")?,
            rho0: r.parse("metastable.rho0")?,
            rho1: r.parse("metastable.rho1")?,
            band: r.or("metastable.band", 0.0)?,
            saddle,
        })
    }

    pub fn require_g(&self) -> Result<f64> {
        self.g.ok_or_else(|| Error::ConfigInvalid("key `run.g` is required for this subcommand".into()))
    }

    pub fn require_input(&self) -> Result<&PathBuf> {
        self.input.as_ref().ok_or_else(|| Error::ConfigInvalid("key `run.input` is required for this subcommand".into()))
    }

    /// Couplings `lo, ..., hi` with `steps` equally spaced values.
    pub fn g_list(&self) -> Result<Vec<f64>> {
        let (lo, hi, steps) = self.g_range.ok_or_else(|| Error::ConfigInvalid("key `run.g_range` is required for this subcommand".into()))?;
        Ok((0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect())
    }
}
