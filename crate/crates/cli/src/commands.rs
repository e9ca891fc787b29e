use std::fs;
use std::path::{Path, PathBuf};

use knn_scaling::bounds::{
    berry_esseen_gap, logderiv_sup, min_quadratic_variance, ncx2_density_mass, uniform_samples,
    vote_bound_battery, RawMoments,
};
use knn_scaling::distributions::{sample, NoiseSpec};
use knn_scaling::dominance::{classify_point, DominanceOptions, SdVerdict};
use knn_scaling::experiments::{
    bound_overlay, dataset_scan, fit_fast_constant, fmt_real, plot_script, prediction_map,
    scaling_scan, tau_map_default, write_overlay, write_prediction_map, write_tau_map, KRule,
    MapGrid, OverlayParams, ScalingCurve, ScanConfig,
};
use knn_scaling::ingest::{holdout, read_idx, to_binary_dataset};
use knn_scaling::rng::derive_seed;

use crate::config::{RunConfig, MANIFEST_FILE};
use crate::CliError;

/// Writes files under a single directory, refusing any other location.
pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn new(dir: PathBuf) -> Self {
        Output { dir }
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        assert!(
            Path::new(name).file_name().is_some_and(|f| f == name),
            "output names are bare file names"
        );
        fs::create_dir_all(&self.dir).map_err(|e| CliError::Output(self.dir.clone(), e))?;
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Output(path.clone(), e))?;
        eprintln!("wrote {}", path.display());
        Ok(())
    }
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let out = Output::new(cfg.output_dir());
    match cfg.command.as_str() {
        "scan" => scan(cfg, &out)?,
        "tau-map" => tau_map(cfg, &out)?,
        "pred-map" => pred_map(cfg, &out)?,
        "diagnose" => diagnose(cfg, &out)?,
        "bounds" => bounds(cfg, &out)?,
        "gauss-check" => gauss_check(cfg, &out)?,
        "ingest-scan" => ingest_scan(cfg, &out)?,
        other => return Err(CliError::Config(format!("unknown command `{other}`"))),
    }
    out.write(MANIFEST_FILE, cfg.manifest().as_bytes())
}

fn write_curve(out: &Output, curve: &ScalingCurve, meta: &[(String, String)]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    curve.write_csv(&mut buf, meta)?;
    out.write("curve.csv", &buf)?;
    out.write("curve.gp", plot_script("curve.csv", &curve.label, "mean_excess").as_bytes())
}

fn scan(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let scan = ScanConfig {
        preset: cfg.preset()?,
        n_grid: cfg.n_grid()?,
        k_rule: cfg.k_rule()?,
        trials: cfg.get("trials")?,
        n_test: cfg.get("n_test")?,
        master_seed: cfg.get("seed")?,
        resample: cfg.resample()?,
    };
    scan.validate()?;
    eprintln!(
        "scan {}: {} sample sizes x {} trials",
        scan.preset,
        scan.n_grid.len(),
        scan.trials
    );
    let curve = scaling_scan(&scan)?;
    let meta = vec![
        ("preset".to_string(), scan.preset.to_string()),
        ("k_rule".to_string(), scan.k_rule.to_string()),
        ("seed".to_string(), scan.master_seed.to_string()),
        ("n_test".to_string(), scan.n_test.to_string()),
        ("resample".to_string(), cfg.raw("resample").to_string()),
    ];
    write_curve(out, &curve, &meta)?;

    if let Some(tau) = cfg.optional::<f64>("overlay_tau", "none")? {
        let d = scan.preset.dim();
        let c = match cfg.optional::<f64>("overlay_c", "fit")? {
            Some(c) => c,
            None => fit_fast_constant(&curve, d, tau).ok_or_else(|| {
                CliError::Config("no curve row constrains the fast-rate constant; set overlay_c".into())
            })?,
        };
        let rows = bound_overlay(&curve, &OverlayParams { d, tau, c, slow: None })?;
        let mut buf = Vec::new();
        write_overlay(&rows, &mut buf)?;
        out.write("overlay.csv", &buf)?;
    }
    Ok(())
}

fn grid(cfg: &RunConfig, dist: &knn_scaling::distributions::ProductDistribution) -> Result<MapGrid, CliError> {
    let (n0, n1): (usize, usize) = (cfg.get("n0")?, cfg.get("n1")?);
    if n0 == 0 || n1 == 0 {
        return Err(CliError::Config("n0 and n1 must be positive".into()));
    }
    Ok(MapGrid::over(dist, n0, n1))
}

fn tau_map(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let preset = cfg.preset()?;
    let dist = preset.build()?;
    let grid = grid(cfg, &dist)?;
    eprintln!("tau-map {preset}: {} cells", grid.len());
    let cells = tau_map_default(&dist, &grid, cfg.get("threshold")?, cfg.get("n_mc")?, cfg.get("seed")?)?;
    let mut buf = Vec::new();
    write_tau_map(&cells, &mut buf)?;
    out.write("tau_map.csv", &buf)
}

fn pred_map(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let preset = cfg.preset()?;
    let dist = preset.build()?;
    let n: usize = cfg.get("n")?;
    let k = cfg.optional::<usize>("k", "auto")?.unwrap_or_else(|| KRule::Affine.k_for(n));
    let grid = grid(cfg, &dist)?;
    eprintln!("pred-map {preset}: n = {n}, k = {k}, {} cells", grid.len());
    let cells = prediction_map(&dist, n, k, cfg.get("seed")?, &grid)?;
    let agree = cells.iter().filter(|c| c.agree()).count() as f64 / cells.len() as f64;
    println!("agreement = {}", fmt_real(agree));
    let mut buf = Vec::new();
    write_prediction_map(&cells, &mut buf)?;
    out.write("pred_map.csv", &buf)
}

fn diagnose(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let preset = cfg.preset()?;
    let dist = preset.build()?;
    let mut x: Vec<f64> = crate::config::parse_list(cfg.required("point")?)
        .map_err(|e| CliError::Config(format!("key `point`: {e}")))?;
    if x.len() > dist.dim() {
        return Err(CliError::Config(format!(
            "key `point`: {} coordinates given, the preset has dimension {}",
            x.len(),
            dist.dim()
        )));
    }
    x.resize(dist.dim(), 0.0);
    let opts = DominanceOptions {
        radius_grid_size: cfg.get("radius_grid")?,
        n_mc: cfg.get("n_mc")?,
        seed: cfg.get("seed")?,
    };
    let r = classify_point(&dist, &x, cfg.get("threshold")?, &opts)?;
    let (sd, violation) = match r.sd_verdict {
        SdVerdict::Holds => ("true".to_string(), String::new()),
        SdVerdict::Violated { max_violation, at_radius } => {
            ("false".to_string(), format!("{} at radius {}", fmt_real(max_violation), fmt_real(at_radius)))
        }
        SdVerdict::Untested => ("untested".to_string(), String::new()),
    };
    let point: Vec<String> = r.x.iter().map(|&v| fmt_real(v)).collect();
    let mut report = format!(
        "preset = {preset}\npoint = {}\ntheta = {}\ntau = {}\nsd_holds = {sd}\nregion = {}\n",
        point.join(","),
        r.theta,
        fmt_real(r.tau),
        r.region.label()
    );
    if !violation.is_empty() {
        report.push_str(&format!("max_violation = {violation}\n"));
    }
    print!("{report}");
    out.write("diagnose.txt", report.as_bytes())
}

fn bounds(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let preset = cfg.preset()?;
    let dist = preset.build()?;
    let seed: u64 = cfg.get("seed")?;
    let (n_points, n, k, trials): (usize, usize, usize, usize) =
        (cfg.get("points")?, cfg.get("n")?, cfg.get("k")?, cfg.get("trials")?);
    let probes = sample(&dist, n_points, derive_seed(seed, 0))?;
    eprintln!("bounds {preset}: {n_points} points x {trials} trials");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["name", "point", "s0", "s1", "theta", "n", "k", "empirical", "bound", "slack", "pass"])
        .map_err(knn_scaling::Error::from)?;
    for i in 0..n_points {
        let x = probes.row(i);
        let theta = dist.bayes_at(x)?;
        let b = vote_bound_battery(&dist, x, n, k, trials, derive_seed(seed, i as u64 + 1))?;
        let wrong = 1 - theta as usize;
        let pairs = [
            ("prop1", b.prediction[wrong], b.prop1[wrong]),
            ("remark1", b.prop1[wrong], b.remark1[wrong]),
        ];
        for (name, lhs, rhs) in pairs {
            let slack = 3.0 * lhs.combined_stderr(&rhs);
            let pass = lhs.mean <= rhs.mean + slack;
            w.write_record([
                name.to_string(),
                i.to_string(),
                fmt_real(x[0]),
                fmt_real(x[1]),
                theta.to_string(),
                n.to_string(),
                k.to_string(),
                fmt_real(lhs.mean),
                fmt_real(rhs.mean),
                fmt_real(slack),
                pass.to_string(),
            ])
            .map_err(knn_scaling::Error::from)?;
        }
    }
    out.write("bounds.csv", &finish(w)?)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, CliError> {
    w.into_inner()
        .map_err(|e| CliError::Config(format!("csv buffer: {e}")))
}

fn gauss_check(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let seed: u64 = cfg.get("seed")?;
    let samples: usize = cfg.get("samples")?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["check", "d_n", "lambda", "value", "limit", "pass"])
        .map_err(knn_scaling::Error::from)?;
    let mut row = |check: &str, d_n: String, lambda: String, value: f64, limit: Option<f64>| {
        w.write_record([
            check.to_string(),
            d_n,
            lambda,
            fmt_real(value),
            limit.map(fmt_real).unwrap_or_default(),
            limit.map(|l| (value <= l).to_string()).unwrap_or_default(),
        ])
        .map_err(knn_scaling::Error::from)
    };

    let dims: Vec<usize> = cfg.list("d_n_list")?;
    let mut scaled = Vec::new();
    for (i, &d_n) in dims.iter().enumerate() {
        eprintln!("gauss-check: normal approximation at d_n = {d_n}");
        let rep = berry_esseen_gap(&NoiseSpec::standard_normal(d_n), &vec![0.0; d_n + 2], samples, derive_seed(seed, i as u64))?;
        row("kolmogorov_gap", d_n.to_string(), "0".into(), rep.cdf_gap, None)?;
        row("density_gap", d_n.to_string(), "0".into(), rep.pdf_gap, None)?;
        scaled.push(rep.cdf_gap * (d_n as f64).sqrt());
    }
    if let (Some(max), Some(min)) = (
        scaled.iter().copied().reduce(f64::max),
        scaled.iter().copied().reduce(f64::min),
    ) {
        row("scaled_gap_ratio", String::new(), String::new(), max / min, Some(3.0))?;
    }

    for &d_n in &cfg.list::<u32>("logderiv_dims")? {
        for &lambda in &cfg.list::<f64>("lambdas")? {
            let var = 2.0 * (d_n as f64 + 2.0 * lambda);
            let sup = logderiv_sup(d_n, lambda, 0.1 * var, 2001)?;
            row("logderiv_sup", d_n.to_string(), fmt_real(lambda), sup, Some(2.0))?;
            let mass = ncx2_density_mass(d_n as f64, lambda);
            row("density_mass_error", d_n.to_string(), fmt_real(lambda), (mass - 1.0).abs(), Some(1e-8))?;
        }
    }

    let n_var: usize = cfg.get("variance_samples")?;
    for (i, m) in [0.5f64, 1.0, 2.0].into_iter().enumerate() {
        let want = 4.0 * m.powi(4) / 45.0;
        let xs = uniform_samples(m, n_var, derive_seed(seed, 1000 + i as u64));
        let q = min_quadratic_variance(&RawMoments::from_samples(&xs)?, 256)?;
        row("uniform_variance_rel_error", String::new(), fmt_real(m), (q.minimum - want).abs() / want, Some(0.02))?;
    }
    out.write("gauss.csv", &finish(w)?)
}

fn ingest_scan(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let seed: u64 = cfg.get("seed")?;
    let classes: Vec<u8> = cfg.list("classes")?;
    let [a, b] = classes[..] else {
        return Err(CliError::Config("key `classes`: expected two classes, e.g. 0,1".into()));
    };
    let n_test: usize = cfg.get("n_test")?;
    let images = read_idx(cfg.required("images")?)?;
    let labels = read_idx(cfg.required("labels")?)?;
    let all = to_binary_dataset(&images, &labels, a, b, None, seed)?;
    let (pool, test) = match (cfg.raw("test_images").trim(), cfg.raw("test_labels").trim()) {
        ("", "") => holdout(&all, n_test, derive_seed(seed, 1))?,
        ("", _) | (_, "") => {
            return Err(CliError::Config("set both test_images and test_labels, or neither".into()))
        }
        (ti, tl) => {
            let test = to_binary_dataset(&read_idx(ti)?, &read_idx(tl)?, a, b, Some(n_test), derive_seed(seed, 1))?;
            (all, test)
        }
    };
    let n_grid = cfg.n_grid()?;
    let k_rule = cfg.k_rule()?;
    let trials: usize = cfg.get("trials")?;
    eprintln!("ingest-scan {a} vs {b}: pool {}, test {}", pool.len(), test.len());
    let mut curve = dataset_scan(&pool, &test, &n_grid, k_rule, trials, seed)?;
    curve.label = format!("classes {a} vs {b}");
    let meta = vec![
        ("classes".to_string(), format!("{a},{b}")),
        ("k_rule".to_string(), k_rule.to_string()),
        ("seed".to_string(), seed.to_string()),
        ("pool".to_string(), pool.len().to_string()),
        ("n_test".to_string(), test.len().to_string()),
    ];
    write_curve(out, &curve, &meta)
}
