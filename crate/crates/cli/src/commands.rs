use std::fs;
use std::path::Path;

use anyhow::Context;
use nalgebra::DVector;

use dmgrad::diffusion_map::{auto_bandwidth, diffusion_embed};
use dmgrad::io::{angles_csv, array_json, sinogram_csv, sinogram_header_json, write_image};
use dmgrad::kernel_gradient::{mse_benchmark, MseRecord};
use dmgrad::lattice_packing::{lattice_points, pack};
use dmgrad::rng::derive_seed;
use dmgrad::tomography::{l1_normalize, partition, run_pipeline, window_embeddings, Bandwidth, TomoConfig};

use crate::config::RunConfig;

pub enum Outcome {
    Pass,
    Miss,
}

pub enum Failure {
    Usage(String),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

impl From<dmgrad::Error> for Failure {
    fn from(e: dmgrad::Error) -> Self {
        match e {
            dmgrad::Error::InvalidParameter { .. }
            | dmgrad::Error::LengthMismatch { .. }
            | dmgrad::Error::EmptyInput(_) => Failure::Usage(e.to_string()),
            other => Failure::Run(other.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

type CmdResult = Result<Outcome, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn run(cfg: &RunConfig) -> CmdResult {
    fs::create_dir_all(&cfg.out)?;
    let echo = cfg.to_toml().map_err(Failure::Run)?;
    fs::write(cfg.out.join("config.toml"), echo)?;
    match cfg.experiment.as_str() {
        "grad-bench" => grad_bench(cfg),
        "pack" => pack_cmd(cfg),
        "tomo" => tomo(cfg),
        "dmap" => dmap(cfg),
        other => Err(usage(format!("unknown experiment `{other}`"))),
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn grad_bench(cfg: &RunConfig) -> CmdResult {
    let g = &cfg.grad_bench;
    if g.t_list.is_empty() || g.t_list.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(usage("t_list must be a non-empty list of positive numbers"));
    }
    if g.m_list.is_empty() || g.m_list.iter().any(|&m| m < 2) {
        return Err(usage("m_list entries must be at least 2"));
    }
    if g.trials == 0 {
        return Err(usage("trials must be at least 1"));
    }

    let mut raw = csv::Writer::from_path(cfg.out.join("trials.csv")).context("trials.csv")?;
    let mut table = csv::Writer::from_path(cfg.out.join("table.csv")).context("table.csv")?;
    table.write_record(["t", "m", "mse_proposed", "mse_learning", "proposed_wins"]).context("table.csv")?;
    let mut wins = 0;
    let cells = g.t_list.len() * g.m_list.len();
    for &t in &g.t_list {
        for &m in &g.m_list {
            let mut prop = Vec::with_capacity(g.trials);
            let mut learn = Vec::with_capacity(g.trials);
            for trial in 0..g.trials {
                let rec: MseRecord = mse_benchmark(t, m, derive_seed(cfg.seed, trial as u64))?;
                raw.serialize(rec).context("trials.csv")?;
                prop.push(rec.mse_proposed);
                learn.push(rec.mse_learning);
            }
            let (p, l) = (median(&mut prop), median(&mut learn));
            let win = p < l;
            wins += win as usize;
            table
                .write_record([t.to_string(), m.to_string(), p.to_string(), l.to_string(), win.to_string()])
                .context("table.csv")?;
            println!(
                "t={t:<5} m={m:<4} proposed={p:.4e} learning={l:.4e} {}",
                if win { "proposed" } else { "learning" }
            );
        }
    }
    raw.flush()?;
    table.flush()?;
    let needed = (cells * 14).div_ceil(16);
    println!("proposed estimator wins {wins}/{cells} cells (threshold {needed})");
    Ok(if wins >= needed { Outcome::Pass } else { Outcome::Miss })
}

/// Best known lattice packing densities.
fn known_density(n: usize) -> f64 {
    match n {
        2 => std::f64::consts::PI / (2.0 * 3f64.sqrt()),
        3 => std::f64::consts::PI / (3.0 * 2f64.sqrt()),
        4 => 0.6168502750680849,
        _ => 0.4652576133092586,
    }
}

fn pack_cmd(cfg: &RunConfig) -> CmdResult {
    let p = &cfg.pack;
    if !(2..=5).contains(&p.n) {
        return Err(usage(format!("n must be in 2..=5, got {}", p.n)));
    }
    if p.executions == 0 {
        return Err(usage("executions must be at least 1"));
    }
    let params = p.to_pack_config().optimizer_params()?;
    let target = known_density(p.n);
    let threshold = match p.n {
        2 => Some((0.90, (p.executions * 4).div_ceil(5))),
        3 => Some((0.70, (p.executions * 3).div_ceil(5))),
        _ => None,
    };
    let minkowski = (p.n as f64).sqrt() + 1e-9;

    let mut summary = String::from("execution,best_density,known,gap,iterations,stop_reason,max_g\n");
    let mut hits = 0;
    let mut bound_ok = true;
    for exec in 0..p.executions {
        let res = pack(p.n, &params, p.sigma, derive_seed(cfg.seed, exec as u64))?;
        let dir = cfg.out.join(format!("exec_{exec}"));
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("trace.csv"), res.trace_csv())?;
        let b = res.best_basis.columns();
        let row_major: Vec<f64> = (0..p.n).flat_map(|r| (0..p.n).map(move |c| b[(r, c)])).collect();
        fs::write(dir.join("basis.json"), array_json(&row_major, &[p.n, p.n])?)?;
        write_scatter(&dir.join("scatter.csv"), &lattice_points(&res.best_basis, p.scatter_radius)?)?;

        let gap = target - res.best_density;
        let stop = format!("{:?}", res.trace.stop_reason).to_lowercase();
        summary.push_str(&format!(
            "{exec},{},{target},{gap},{},{stop},{}\n",
            res.best_density,
            res.trace.iterates.len() - 1,
            res.max_g_seen
        ));
        println!(
            "execution {exec}: density {:.6} (known {target:.6}, gap {gap:.2e}) after {} iterations",
            res.best_density,
            res.trace.iterates.len() - 1
        );
        if let Some((thr, _)) = threshold {
            hits += (res.best_density >= thr) as usize;
        }
        if res.max_g_seen > minkowski {
            bound_ok = false;
            println!("execution {exec}: shortest vector {} exceeds sqrt(n)", res.max_g_seen);
        }
    }
    fs::write(cfg.out.join("summary.csv"), summary)?;
    let mut pass = bound_ok;
    if let Some((thr, needed)) = threshold {
        println!("{hits}/{} executions reached density {thr} (need {needed})", p.executions);
        pass &= hits >= needed;
    }
    Ok(if pass { Outcome::Pass } else { Outcome::Miss })
}

fn write_scatter(path: &Path, points: &[DVector<f64>]) -> Result<(), Failure> {
    let dim = points.first().map_or(0, |p| p.len());
    let mut out = (0..dim).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for p in points {
        out.push_str(&p.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn tomo(cfg: &RunConfig) -> CmdResult {
    let t = &cfg.tomo;
    if t.etas.is_empty() || t.etas.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(usage("etas must be a non-empty list of non-negative numbers"));
    }
    let mut errors = String::from(
        "eta,error_with_signs,error_without_signs,error_exact_angles,sign_match,clamped,reflected,embeddings\n",
    );
    let mut pass = true;
    for (i, &eta) in t.etas.iter().enumerate() {
        let tc = TomoConfig {
            n: t.n,
            k: t.k,
            l: Some(if t.l == 0 { t.n } else { t.l }),
            s: t.s,
            m: t.m,
            eta,
            reflect_tol: t.reflect_tol,
            bandwidth: if t.bandwidth > 0.0 {
                Bandwidth::Fixed(t.bandwidth)
            } else {
                Bandwidth::MedianTimes(t.bandwidth_factor)
            },
        };
        let rep = run_pipeline(&tc, cfg.seed)?;
        if i == 0 {
            write_image(&cfg.out, "phantom", &rep.phantom)?;
        }
        let dir = cfg.out.join(format!("eta_{i}"));
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("sinogram.csv"), sinogram_csv(&rep.sinogram))?;
        fs::write(dir.join("sinogram.json"), sinogram_header_json(&rep.sinogram)?)?;
        fs::write(dir.join("angles.csv"), angles_csv(&rep.estimate))?;
        write_image(&dir, "recon_signed", &rep.recon_signed)?;
        write_image(&dir, "recon_unsigned", &rep.recon_unsigned)?;
        if t.emit_embeddings {
            let emb_dir = dir.join("embeddings");
            fs::create_dir_all(&emb_dir)?;
            let normalized = l1_normalize(&rep.sinogram)?;
            let plan = partition(t.k, t.s)?;
            let bw = tc.bandwidth;
            for w in window_embeddings(&normalized, &rep.estimate.order, &plan, bw)? {
                let mut out = String::from("row,x,y\n");
                for (r, c) in w.rows.iter().zip(&w.coords) {
                    out.push_str(&format!("{r},{},{}\n", c.x, c.y));
                }
                fs::write(emb_dir.join(format!("window_{}.csv", w.window)), out)?;
            }
        }
        errors.push_str(&format!(
            "{eta},{},{},{},{},{},{},{}\n",
            rep.error_signed,
            rep.error_unsigned,
            rep.error_exact,
            rep.sign_match,
            rep.estimate.clamped,
            rep.estimate.reflected,
            rep.estimate.embeddings
        ));
        println!(
            "eta={eta}: error with signs {:.4}, without {:.4}, exact angles {:.4}, sign match {:.3}",
            rep.error_signed, rep.error_unsigned, rep.error_exact, rep.sign_match
        );
        pass &= rep.error_signed < rep.error_unsigned;
    }
    fs::write(cfg.out.join("errors.csv"), errors)?;
    Ok(if pass { Outcome::Pass } else { Outcome::Miss })
}

fn read_points(path: &Path) -> Result<Vec<DVector<f64>>, Failure> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut points = Vec::new();
    let mut dim = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(_) => return Err(usage(format!("{}: line {line}: non-numeric field", path.display()))),
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(usage(format!("{}: line {line}: non-finite value", path.display())));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(usage(format!(
                    "{}: line {line}: expected {d} columns, found {}",
                    path.display(),
                    values.len()
                )))
            }
            _ => {}
        }
        points.push(DVector::from_vec(values));
    }
    Ok(points)
}

fn dmap(cfg: &RunConfig) -> CmdResult {
    let d = &cfg.dmap;
    let input = d.input.as_ref().ok_or_else(|| usage("dmap needs --input"))?;
    let points = read_points(input)?;
    if points.len() < 2 {
        return Err(usage("need at least two points"));
    }
    if d.dim == 0 || d.dim >= points.len() {
        return Err(usage(format!("embedding dimension must be in 1..{}, got {}", points.len(), d.dim)));
    }
    let bandwidth = if d.bandwidth > 0.0 { d.bandwidth } else { auto_bandwidth(&points)? };
    let emb = diffusion_embed(&points, d.dim, d.time, Some(bandwidth))?;
    let mut out = (1..=d.dim).map(|i| format!("psi{i}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for i in 0..emb.len() {
        out.push_str(&emb.point(i).iter().map(f64::to_string).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    fs::write(cfg.out.join("embedding.csv"), out)?;
    let meta = serde_json::json!({
        "eigenvalues": emb.eigenvalues,
        "trivial_eigenvalue": emb.trivial_eigenvalue,
        "diffusion_time": emb.diffusion_time,
        "bandwidth": bandwidth,
    });
    fs::write(
        cfg.out.join("eigenvalues.json"),
        serde_json::to_string_pretty(&meta).map_err(|e| Failure::Run(e.into()))?,
    )?;
    println!("embedded {} points into {} dimensions", emb.len(), d.dim);
    Ok(Outcome::Pass)
}
