use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;

use super::config::{load_config, Resolver};
use super::output::{kernel_csv, num, pgm_bytes, Csv, Manifest, OutputDir};
use super::{CliError, Common};
use crate::cutmetric::{
    convergence_sweep, cut_norm_exact, cut_norm_heuristic, CutMethod, SweepConfig, DEFAULT_RESTARTS,
};
use crate::error::Error;
use crate::gntk::{
    cifar_batch_paths, load_cifar10_binary, noise_sweep, path_density, synth_gaussian,
    transpose_kernel, CifarOptions, NoiseSweepConfig,
};
use crate::limitg::{block_averaged_graphon, deep_layer2_model, theoretical_graphon, GridKernel, DEFAULT_OVERSAMPLE};
use crate::matrix::Matrix;
use crate::numkit::{Activation, Rng64};
use crate::saliency::Method;
use crate::uatlab::{
    bernoulli_core_trials, chernoff_predictor, default_target, find_active_rectangle, run_uat,
    snip_core_trials, FitOptions, UatConfig,
};

type CliResult = Result<(), CliError>;

const MC_SAMPLES: usize = 1_000_000;

/// Resolved settings shared by every command.
struct Run {
    command: &'static str,
    out: OutputDir,
    seed: u64,
    config: BTreeMap<String, String>,
    hash: u64,
    start: Instant,
    timings: BTreeMap<String, f64>,
    notes: Vec<String>,
}

fn resolver(common: &Common) -> Result<(Resolver, PathBuf), CliError> {
    let mut config = match &common.config {
        Some(p) => load_config(p)?,
        None => HashMap::new(),
    };
    let out_from_config = config.remove("out-dir").map(PathBuf::from);
    let out = common
        .out_dir
        .clone()
        .or(out_from_config)
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((Resolver::new(config), out))
}

impl Run {
    fn start(command: &'static str, mut r: Resolver, out: &Path, seed: u64) -> Result<Run, CliError> {
        r.get("seed", Some(seed), seed)?;
        let (config, hash) = r.finish(command)?;
        Ok(Run {
            command,
            out: OutputDir::create(out)?,
            seed,
            config,
            hash,
            start: Instant::now(),
            timings: BTreeMap::new(),
            notes: Vec::new(),
        })
    }

    fn finish(self) -> CliResult {
        let manifest = Manifest {
            command: self.command.to_string(),
            config_hash: format!("{:016x}", self.hash),
            config: self.config,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
            wall_clock_seconds: self.start.elapsed().as_secs_f64(),
            timings: self.timings,
            notes: self.notes,
        };
        self.out.write_manifest(manifest)?;
        Ok(())
    }
}

fn seed_of(r: &mut Resolver, common: &Common) -> Result<u64, CliError> {
    r.get("seed", common.seed, 42u64)
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    common: Common,
    /// snip, grasp-mag, grasp-signed, synflow, magnitude or random
    #[arg(long)]
    method: Option<Method>,
    /// relu, tanh or sigmoid
    #[arg(long)]
    activation: Option<Activation>,
    #[arg(long)]
    rho: Option<f64>,
    /// Comma-separated ascending widths.
    #[arg(long)]
    widths: Option<String>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    /// Hidden layers (2 only with snip).
    #[arg(long)]
    depth: Option<usize>,
    /// Monte-Carlo samples for the column quantile table.
    #[arg(long)]
    mc_samples: Option<usize>,
}

#[allow(clippy::too_many_arguments)]
fn sweep_config(
    r: &mut Resolver,
    method: Option<Method>,
    activation: Option<Activation>,
    rho: Option<f64>,
    seeds: Option<usize>,
    grid: Option<usize>,
    depth: Option<usize>,
    mc: Option<usize>,
    seed: u64,
    widths: Vec<usize>,
    defaults: (usize, usize),
) -> Result<SweepConfig, CliError> {
    let cfg = SweepConfig {
        method: r.get("method", method, Method::Snip)?,
        activation: r.get("activation", activation, Activation::Tanh)?,
        rho: r.get("rho", rho, 0.2)?,
        widths,
        seeds: r.get("seeds", seeds, defaults.0)?,
        grid: r.get("grid", grid, defaults.1)?,
        seed,
        depth: r.get("depth", depth, 1usize)?,
        mc_samples: r.get("mc-samples", mc, MC_SAMPLES)?,
    };
    if !(cfg.rho > 0.0 && cfg.rho <= 1.0) {
        return Err(CliError::Usage(format!("--rho must lie in (0,1], got {}", cfg.rho)));
    }
    if cfg.depth == 0 || cfg.depth > 2 {
        return Err(CliError::Usage("--depth must be 1 or 2".into()));
    }
    if cfg.depth == 2 && cfg.method != Method::Snip {
        return Err(CliError::Usage("--depth 2 is supported for --method snip only".into()));
    }
    if cfg.seeds == 0 || cfg.grid == 0 || cfg.mc_samples == 0 {
        return Err(CliError::Usage("--seeds, --grid and --mc-samples must be >= 1".into()));
    }
    if let Some(&w) = cfg.widths.iter().find(|&&w| w < cfg.grid) {
        return Err(CliError::Usage(format!("width {w} is smaller than grid {}", cfg.grid)));
    }
    Ok(cfg)
}

fn layer_suffix(depth: usize, layer: usize) -> String {
    if depth == 1 {
        String::new()
    } else {
        format!("_layer{layer}")
    }
}

pub fn converge(a: ConvergeArgs) -> CliResult {
    let (mut r, out) = resolver(&a.common)?;
    let seed = seed_of(&mut r, &a.common)?;
    let widths: Vec<usize> = r.list("widths", a.widths, "128,256,512,1024")?;
    if widths.is_empty() {
        return Err(CliError::Usage("--widths is empty".into()));
    }
    let cfg = sweep_config(
        &mut r, a.method, a.activation, a.rho, a.seeds, a.grid, a.depth, a.mc_samples, seed,
        widths, (50, 32),
    )?;
    let mut run = Run::start("converge", r, &out, seed)?;
    let t = Instant::now();
    let result = convergence_sweep(&cfg)?;
    run.timings.insert("sweep_seconds".into(), t.elapsed().as_secs_f64());
    let mut csv = Csv::new(&["width", "layer", "distance", "upper_bound", "proxy"]);
    for row in &result.rows {
        csv.row(&[
            row.width.to_string(),
            row.layer.to_string(),
            num(row.distance),
            num(row.upper_bound),
            num(row.proxy),
        ]);
    }
    run.out.write("converge.csv", csv.into_string())?;
    for (l, w) in result.theoretical.iter().enumerate() {
        run.out.write(&format!("theoretical{}.pgm", layer_suffix(cfg.depth, l + 1)), pgm_bytes(w))?;
    }
    for (row, w) in result.rows.iter().zip(&result.empirical) {
        let name = format!("empirical_{}{}.pgm", row.width, layer_suffix(cfg.depth, row.layer));
        run.out.write(&name, pgm_bytes(w))?;
    }
    run.notes.push(
        "distance is the cut norm after sorting rows and columns by latent factors, an upper bound on the bipartite cut distance".into(),
    );
    run.finish()
}

#[derive(Debug, Args)]
pub struct GraphonArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    activation: Option<Activation>,
    #[arg(long)]
    rho: Option<f64>,
    /// Width of the empirical estimate.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    mc_samples: Option<usize>,
}

pub fn graphon(a: GraphonArgs) -> CliResult {
    let (mut r, out) = resolver(&a.common)?;
    let seed = seed_of(&mut r, &a.common)?;
    let width = r.get("width", a.width, 256usize)?;
    let cfg = sweep_config(
        &mut r, a.method, a.activation, a.rho, a.seeds, a.grid, a.depth, a.mc_samples, seed,
        vec![width], (20, 64),
    )?;
    let mut run = Run::start("graphon", r, &out, seed)?;
    let result = convergence_sweep(&cfg)?;
    let mut summary = Csv::new(&[
        "layer",
        "theoretical_mean",
        "empirical_mean",
        "distance",
        "upper_bound",
    ]);
    for (row, (emp, theo)) in result.rows.iter().zip(result.empirical.iter().zip(&result.theoretical)) {
        let sfx = layer_suffix(cfg.depth, row.layer);
        run.out.write(&format!("theoretical{sfx}.csv"), kernel_csv(theo))?;
        run.out.write(&format!("theoretical{sfx}.pgm"), pgm_bytes(theo))?;
        run.out.write(&format!("empirical{sfx}.csv"), kernel_csv(emp))?;
        run.out.write(&format!("empirical{sfx}.pgm"), pgm_bytes(emp))?;
        summary.row(&[
            row.layer.to_string(),
            num(theo.mean()),
            num(emp.mean()),
            num(row.distance),
            num(row.upper_bound),
        ]);
    }
    run.out.write("graphon_summary.csv", summary.into_string())?;
    run.finish()
}

#[derive(Debug, Args)]
pub struct PathDensityArgs {
    #[command(flatten)]
    common: Common,
    /// Kernel spec: const:<v>, snip, snip-layer2 or file:<csv>
    #[arg(long)]
    w1: Option<String>,
    #[arg(long)]
    w2: Option<String>,
    #[arg(long)]
    w3: Option<String>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    activation: Option<Activation>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    mc_samples: Option<usize>,
}

/// Read a square kernel from a CSV matrix (one grid row per line; a
/// non-numeric first line is treated as a header).
pub fn read_matrix_csv(path: &Path) -> Result<Matrix, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut offset = 0u64;
    for (n, line) in text.split('\n').enumerate() {
        let start = offset;
        offset += line.len() as u64 + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if n == 0 => continue,
            Err(e) => {
                return Err(Error::Format {
                    offset: start,
                    message: format!("{}: line {}: {e}", path.display(), n + 1),
                })
            }
        }
        if rows.len() > 1 && rows[rows.len() - 1].len() != rows[0].len() {
            return Err(Error::Format {
                offset: start,
                message: format!("{}: line {} has a different column count", path.display(), n + 1),
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::Format {
            offset: 0,
            message: format!("{}: no numeric rows", path.display()),
        });
    }
    Matrix::from_rows(&rows)
}

fn kernel_from_spec(
    spec: &str,
    g: usize,
    activation: Activation,
    rho: f64,
    mc: usize,
    rng: &mut Rng64,
) -> Result<GridKernel, CliError> {
    if let Some(v) = spec.strip_prefix("const:") {
        let v: f64 = v
            .parse()
            .map_err(|_| CliError::Usage(format!("bad constant kernel '{spec}'")))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(CliError::Usage(format!("kernel constant {v} outside [0,1]")));
        }
        return Ok(GridKernel::constant(g, v)?);
    }
    if let Some(p) = spec.strip_prefix("file:") {
        let w = GridKernel::from_matrix(&read_matrix_csv(Path::new(p))?)?;
        if w.size() != g {
            return Err(CliError::Usage(format!("{p} has grid {}, expected {g}", w.size())));
        }
        return Ok(w);
    }
    match spec {
        "snip" => Ok(theoretical_graphon(Method::Snip, activation, rho, g, mc, rng)?.0),
        "snip-layer2" => {
            let model = deep_layer2_model(activation, mc, rng)?;
            Ok(block_averaged_graphon(&model, rho, g, DEFAULT_OVERSAMPLE)?.0)
        }
        other => Err(CliError::Usage(format!("unknown kernel spec '{other}'"))),
    }
}

pub fn pathdensity(a: PathDensityArgs) -> CliResult {
    let (mut r, out) = resolver(&a.common)?;
    let seed = seed_of(&mut r, &a.common)?;
    let specs = [
        r.string("w1", a.w1, "snip"),
        r.string("w2", a.w2, "snip-layer2"),
        r.string("w3", a.w3, "const:1"),
    ];
    let g = r.get("grid", a.grid, 64usize)?;
    let activation = r.get("activation", a.activation, Activation::Tanh)?;
    let rho = r.get("rho", a.rho, 0.2)?;
    let mc = r.get("mc-samples", a.mc_samples, MC_SAMPLES)?;
    if g == 0 || !(rho > 0.0 && rho <= 1.0) {
        return Err(CliError::Usage("--grid must be >= 1 and --rho in (0,1]".into()));
    }
    let mut run = Run::start("pathdensity", r, &out, seed)?;
    let kernels = specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = Rng64::derive(seed, i as u64);
            kernel_from_spec(s, g, activation, rho, mc, &mut rng).map(|w| transpose_kernel(&w))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let p = path_density(&kernels[0], &kernels[1], &kernels[2])?;
    let mut csv = Csv::new(&["u_index", "u", "density"]);
    for (i, v) in p.iter().enumerate() {
        csv.row(&[i.to_string(), num((i as f64 + 0.5) / g as f64), num(*v)]);
    }
    run.out.write("path_density.csv", csv.into_string())?;
    run.notes
        .push("kernels are mask oriented: rows index the earlier layer, columns the later one".into());
    run.finish()
}

#[derive(Debug, Args)]
pub struct NtkArgs {
    #[command(flatten)]
    common: Common,
    /// synthetic or cifar:<file-or-directory>
    #[arg(long)]
    data: Option<String>,
    /// Samples (synthetic) or record limit (cifar).
    #[arg(long)]
    m: Option<usize>,
    /// Synthetic input dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Synthetic class separation.
    #[arg(long)]
    separation: Option<f64>,
    /// Two CIFAR class labels, e.g. 3,5.
    #[arg(long)]
    classes: Option<String>,
    /// Pool CIFAR images to 16x16 grayscale.
    #[arg(long)]
    pool: Option<bool>,
    /// Standardise CIFAR features.
    #[arg(long)]
    standardise: Option<bool>,
    /// Comma-separated subset of snip,random.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    width: Option<usize>,
    /// Comma-separated label-noise fractions.
    #[arg(long)]
    noise_grid: Option<String>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    activation: Option<Activation>,
}

pub fn ntk(a: NtkArgs) -> CliResult {
    let (mut r, out) = resolver(&a.common)?;
    let seed = seed_of(&mut r, &a.common)?;
    let data_spec = r.string("data", a.data, "synthetic");
    let m = r.get("m", a.m, 200usize)?;
    let cfg = NoiseSweepConfig {
        methods: r.list("methods", a.methods, "snip,random")?,
        activation: r.get("activation", a.activation, Activation::Relu)?,
        rho: r.get("rho", a.rho, 0.2)?,
        width: r.get("width", a.width, 1024usize)?,
        noise: r.list("noise-grid", a.noise_grid, "0,0.1,0.2,0.3,0.4,0.5")?,
        seeds: r.get("seeds", a.seeds, 5usize)?,
        seed,
    };
    if !(cfg.rho > 0.0 && cfg.rho <= 1.0) || cfg.width == 0 || cfg.methods.is_empty() {
        return Err(CliError::Usage("need --rho in (0,1], --width >= 1 and some --methods".into()));
    }
    let data = if data_spec == "synthetic" {
        let dim = r.get("dim", a.dim, 64usize)?;
        let sep = r.get("separation", a.separation, 2.0)?;
        let mut run = Run::start("ntk", r, &out, seed)?;
        let data = synth_gaussian(m, dim, sep, &mut Rng64::derive(seed, u64::MAX))?;
        run.notes.push("synthetic two-class Gaussian data".into());
        (data, run)
    } else if let Some(path) = data_spec.strip_prefix("cifar:") {
        let classes: Vec<u8> = r.list("classes", a.classes, "3,5")?;
        if classes.len() != 2 {
            return Err(CliError::Usage("--classes needs exactly two labels".into()));
        }
        let opts = CifarOptions {
            pool_gray: r.get("pool", a.pool, true)?,
            standardise: r.get("standardise", a.standardise, true)?,
        };
        let run = Run::start("ntk", r, &out, seed)?;
        let path = PathBuf::from(path);
        let paths = if path.is_dir() {
            cifar_batch_paths(&path)
        } else {
            vec![path.clone()]
        };
        if paths.is_empty() {
            return Err(Error::io(
                &path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no CIFAR-10 batch files"),
            )
            .into());
        }
        (load_cifar10_binary(&paths, (classes[0], classes[1]), m, opts)?, run)
    } else {
        return Err(CliError::Usage(format!("unknown --data '{data_spec}'")));
    };
    let (data, mut run) = data;
    let t = Instant::now();
    let (runs, summary) = noise_sweep(&data, &cfg)?;
    run.timings.insert("sweep_seconds".into(), t.elapsed().as_secs_f64());
    let mut csv = Csv::new(&["method", "noise", "seed", "complexity", "jitter"]);
    for x in &runs {
        csv.row(&[
            x.method.to_string(),
            num(x.noise),
            x.seed.to_string(),
            num(x.complexity),
            num(x.jitter),
        ]);
    }
    run.out.write("ntk_runs.csv", csv.into_string())?;
    let mut csv = Csv::new(&["method", "noise", "mean", "std"]);
    for s in &summary {
        csv.row(&[s.method.to_string(), num(s.noise), num(s.mean), num(s.std)]);
    }
    run.out.write("ntk_summary.csv", csv.into_string())?;
    run.finish()
}

#[derive(Debug, Args)]
pub struct DenseCoreArgs {
    #[command(flatten)]
    common: Common,
    /// bernoulli or snip
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Edge probability of Bernoulli masks.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Mask density for snip masks.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    activation: Option<Activation>,
    /// Edge floor defining the active rectangle (snip).
    #[arg(long)]
    p_floor: Option<f64>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    mc_samples: Option<usize>,
}

pub fn densecore(a: DenseCoreArgs) -> CliResult {
    let (mut r, out) = resolver(&a.common)?;
    let seed = seed_of(&mut r, &a.common)?;
    let source = r.string("source", a.source, "bernoulli");
    let n = r.get("n", a.n, 2000usize)?;
    let k = r.get("k", a.k, 3usize)?;
    let mut summary = Csv::new(&[
        "source",
        "n",
        "k",
        "edge_floor",
        "alpha",
        "trials",
        "expected",
        "mean_n_good",
        "success_rate",
        "chernoff_floor",
    ]);
    let (counts, mut run) = match source.as_str() {
        "bernoulli" => {
            let p = r.get("p", a.p, 0.5)?;
            let trials = r.get("trials", a.trials, 1000usize)?;
            let run = Run::start("densecore", r, &out, seed)?;
            let t = bernoulli_core_trials(n, k, p, trials, seed)?;
            summary.row(&[
                source.clone(),
                n.to_string(),
                k.to_string(),
                num(p),
                num(1.0),
                trials.to_string(),
                num(t.expected),
                num(mean_count(&t.n_good)),
                num(t.success_rate),
                num(t.chernoff_floor),
            ]);
            (t.n_good, run)
        }
        "snip" => {
            let rho = r.get("rho", a.rho, 0.2)?;
            let activation = r.get("activation", a.activation, Activation::Tanh)?;
            let p_floor = r.get("p-floor", a.p_floor, 0.5)?;
            let grid = r.get("grid", a.grid, 32usize)?;
            let mc = r.get("mc-samples", a.mc_samples, MC_SAMPLES)?;
            let trials = r.get("trials", a.trials, 20usize)?;
            let run = Run::start("densecore", r, &out, seed)?;
            let mut rng = Rng64::derive(seed, u64::MAX);
            let (w, _) = theoretical_graphon(Method::Snip, activation, rho, grid, mc, &mut rng)?;
            let rect = find_active_rectangle(&w, p_floor)?.ok_or_else(|| {
                Error::Numeric(format!("no grid cell reaches edge floor {p_floor}"))
            })?;
            let (mu, fail) = chernoff_predictor(n, rect.alpha, rect.p_star, k)?;
            let counts = snip_core_trials(n, k, rho, activation, trials, seed)?;
            let hits = counts.iter().filter(|&&c| c as f64 >= 0.5 * mu).count();
            summary.row(&[
                source.clone(),
                n.to_string(),
                k.to_string(),
                num(rect.p_star),
                num(rect.alpha),
                trials.to_string(),
                num(mu),
                num(mean_count(&counts)),
                num(hits as f64 / trials as f64),
                num(1.0 - fail),
            ]);
            (counts, run)
        }
        other => return Err(CliError::Usage(format!("unknown --source '{other}'"))),
    };
    let mut csv = Csv::new(&["trial", "n_good"]);
    for (t, c) in counts.iter().enumerate() {
        csv.row(&[t.to_string(), c.to_string()]);
    }
    run.out.write("densecore_trials.csv", csv.into_string())?;
    run.out.write("densecore_summary.csv", summary.into_string())?;
    run.notes.push(
        "success_rate counts trials with n_good >= expected/2; chernoff_floor is 1 - exp(-expected/8)".into(),
    );
    run.finish()
}

fn mean_count(c: &[usize]) -> f64 {
    c.iter().sum::<usize>() as f64 / c.len() as f64
}

#[derive(Debug, Args)]
pub struct UatArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    ntilde: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    test_points: Option<usize>,
    #[arg(long)]
    train_grid: Option<usize>,
    #[arg(long)]
    test_grid: Option<usize>,
    /// Standard deviation of random feature directions.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    ridge: Option<f64>,
}

pub fn uat(a: UatArgs) -> CliResult {
    let (mut r, out) = resolver(&a.common)?;
    let seed = seed_of(&mut r, &a.common)?;
    let d = UatConfig::default();
    let cfg = UatConfig {
        k: r.get("k", a.k, d.k)?,
        ntilde: r.get("ntilde", a.ntilde, d.ntilde)?,
        width: r.get("width", a.width, d.width)?,
        rho: r.get("rho", a.rho, d.rho)?,
        seed,
        test_points: r.get("test-points", a.test_points, d.test_points)?,
        perturbed_points: d.perturbed_points,
        fit: FitOptions {
            scale: r.get("scale", a.scale, d.fit.scale)?,
            ridge: r.get("ridge", a.ridge, d.fit.ridge)?,
            train_grid: r.get("train-grid", a.train_grid, d.fit.train_grid)?,
            test_grid: r.get("test-grid", a.test_grid, d.fit.test_grid)?,
        },
    };
    if cfg.k == 0 || cfg.ntilde == 0 || cfg.width == 0 || !(cfg.rho > 0.0 && cfg.rho <= 1.0) {
        return Err(CliError::Usage("--k, --ntilde, --width >= 1 and --rho in (0,1] required".into()));
    }
    let mut run = Run::start("uat", r, &out, seed)?;
    let report = run_uat(&cfg, &default_target)?;
    let mut csv = Csv::new(&[
        "k",
        "ntilde",
        "width",
        "rho",
        "n_good",
        "fitted_sup_error",
        "embed_max_err",
        "masked_sup_error",
    ]);
    csv.row(&[
        cfg.k.to_string(),
        cfg.ntilde.to_string(),
        cfg.width.to_string(),
        num(cfg.rho),
        report.n_good.to_string(),
        num(report.fitted_sup_error),
        num(report.embed_max_err),
        num(report.masked_sup_error),
    ]);
    run.out.write("uat.csv", csv.into_string())?;
    run.notes.push("target is sin(3 u1) cos(2 u2) on [-1,1]^2".into());
    run.finish()
}

#[derive(Debug, Args)]
pub struct CutNormArgs {
    #[command(flatten)]
    common: Common,
    /// CSV matrix (one row per line).
    #[arg(long)]
    input: Option<PathBuf>,
    /// auto, exact or heuristic
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    restarts: Option<usize>,
}

pub fn cutnorm(a: CutNormArgs) -> CliResult {
    let (mut r, out) = resolver(&a.common)?;
    let seed = seed_of(&mut r, &a.common)?;
    let input = r.string("input", a.input.map(|p| p.display().to_string()), "");
    if input.is_empty() {
        return Err(CliError::Usage("--input is required".into()));
    }
    let method = r.string("method", a.method, "auto");
    let restarts = r.get("restarts", a.restarts, DEFAULT_RESTARTS)?;
    let mut run = Run::start("cutnorm", r, &out, seed)?;
    let b = read_matrix_csv(Path::new(&input))?;
    let small = b.rows().min(b.cols()) <= crate::cutmetric::EXACT_BUDGET;
    let result = match method.as_str() {
        "exact" => cut_norm_exact(&b)?,
        "heuristic" => cut_norm_heuristic(&b, restarts, &mut Rng64::new(seed))?,
        "auto" if small => cut_norm_exact(&b)?,
        "auto" => cut_norm_heuristic(&b, restarts, &mut Rng64::new(seed))?,
        other => return Err(CliError::Usage(format!("unknown --method '{other}'"))),
    };
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(";");
    let mut csv = Csv::new(&["value", "method", "upper_bound", "rows", "cols"]);
    csv.row(&[
        num(result.value),
        match result.method {
            CutMethod::Exact => "exact".into(),
            CutMethod::Heuristic => "heuristic".into(),
        },
        num(result.upper_bound),
        join(&result.rows),
        join(&result.cols),
    ]);
    run.out.write("cutnorm.csv", csv.into_string())?;
    run.finish()
}
