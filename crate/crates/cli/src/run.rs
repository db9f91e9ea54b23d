use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use percept::cluster::{elbow_select, kmeans, wall_purity, KMeansParams};
use percept::config::Settings;
use percept::dataset::{
    filter_by_yaw, format_sig9, normalize_sensors, occupancy_grid, read_log, read_log_from,
    GridSpec, LogRecord, SENSOR_COUNT,
};
use percept::explore::{
    config_digest, resume, run_exploration, seeded_rng, Checkpoint, CheckpointStore, CsvSink,
    FileCheckpointStore,
};
use percept::geometry::{sample_region_centers, SensorPlane};
use percept::neighbors::locality_ratio;
use percept::sim::World;
use percept::stats::{grid_std, rolling_grid_std, sensor_correlation};
use percept::transform::{distortion_metrics, map_to_sensor_space, ProbeKind, ProbeSet};
use serde_json::{json, Value};

use crate::args::{Cli, Command, Shared, Switch, YawArgs};
use crate::output::{cell, write_atomic, Manifest};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<percept::Error> for Failure {
    fn from(e: percept::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Prefix a runtime error with the file it concerns.
fn at<T, E: std::fmt::Display>(path: &Path, r: Result<T, E>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Settings from the config file with command-line overrides applied.
fn settings(shared: &Shared) -> Result<Settings, Failure> {
    let mut s = match &shared.config {
        Some(p) => at(p, Settings::load(p))?,
        None => Settings::default(),
    };
    if let Some(seed) = shared.seed {
        s.seed = Some(seed);
    }
    Ok(s)
}

fn require_seed(s: &Settings, command: &str) -> Result<u64, Failure> {
    s.seed.ok_or_else(|| {
        usage(format!(
            "`{command}` is stochastic and needs --seed (or `seed` in the config)"
        ))
    })
}

fn require_yaw(yaw: &YawArgs, command: &str) -> Result<(f64, f64), Failure> {
    yaw.filter()
        .ok_or_else(|| usage(format!("`{command}` needs --yaw")))
}

pub fn dispatch(cli: Cli) -> Outcome {
    let s = settings(&cli.shared)?;
    match &cli.command {
        Command::Simulate {
            n_actions,
            noise,
            checkpoint,
            resume,
        } => simulate(
            &cli.shared,
            s,
            *n_actions,
            *noise,
            checkpoint.as_deref(),
            *resume,
        ),
        other => analyse(&cli.shared, s, other),
    }
}

fn simulate(
    shared: &Shared,
    mut s: Settings,
    n_actions: Option<u64>,
    noise: Option<Switch>,
    checkpoint: Option<&Path>,
    resuming: bool,
) -> Outcome {
    if let Some(n) = n_actions {
        s.n_actions = n;
    }
    if let Some(sw) = noise {
        s.noise = sw == Switch::On;
    }
    let seed = require_seed(&s, "simulate")?;
    let mut log = match (&shared.log, &shared.out) {
        (Some(a), Some(b)) if a != b => {
            return Err(usage("give the log path once, via --log or --out"))
        }
        (Some(p), _) | (None, Some(p)) => p.clone(),
        (None, None) => return Err(usage("`simulate` needs --out <log.csv>")),
    };
    if log.is_dir() {
        log.push("log.csv");
    }
    if let Some(parent) = log.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let world = s.world()?;
    let config = s.explore();
    config.validate(&world)?;
    let digest = config_digest(&config, &world);

    let mut manifest = Manifest::new("simulate", digest);
    record_settings(&mut manifest, &s);
    manifest.param("seed", seed);
    manifest.param("resume", resuming);

    let mut store = checkpoint.map(FileCheckpointStore::new);
    let store_ref = store.as_mut().map(|s| s as &mut dyn CheckpointStore);
    let summary = if resuming {
        let ckpt_path = checkpoint.expect("clap enforces --checkpoint with --resume");
        let ckpt = at(ckpt_path, Checkpoint::load(ckpt_path))?;
        manifest.input(ckpt_path);
        manifest.input(&log);
        let kept = truncate_log(&log, ckpt.actions_completed)?;
        let file = at(&log, fs::OpenOptions::new().append(true).open(&log))?;
        let mut sink = CsvSink::append_to(BufWriter::new(file));
        resume(&ckpt, &config, &world, kept, &mut sink, store_ref)?
    } else {
        let file = at(&log, fs::File::create(&log))?;
        let mut sink = CsvSink::create(BufWriter::new(file))?;
        let summary = run_exploration(&config, &world, &mut sink, store_ref)?;
        sink.into_inner().flush()?;
        summary
    };
    manifest.output(&log);
    if let Some(p) = checkpoint {
        manifest.output(p);
    }
    manifest.param("actions_completed", summary.actions_completed);
    manifest.param("stuck_count", summary.stuck_count);
    manifest.finish(&log.with_extension("manifest.json"))?;
    Ok(())
}

/// Cut the log back to the header plus its first `keep` records, dropping
/// anything written after the checkpoint (including a torn last line).
fn truncate_log(path: &Path, keep: u64) -> Result<u64, Failure> {
    let text = at(path, fs::read_to_string(path))?;
    let mut lines = text.lines();
    let mut kept = String::with_capacity(text.len());
    let head = lines.next().unwrap_or("");
    kept.push_str(head);
    kept.push('\n');
    let body: Vec<&str> = lines.take(keep as usize).collect();
    if (body.len() as u64) < keep {
        return Err(percept::Error::CorruptCheckpoint(format!(
            "checkpoint covers {keep} actions but the log holds only {}",
            body.len()
        ))
        .into());
    }
    for l in body {
        kept.push_str(l);
        kept.push('\n');
    }
    read_log_from(kept.as_bytes())?;
    if kept != text {
        write_atomic(path, kept.as_bytes())?;
    }
    Ok(keep)
}

fn record_settings(m: &mut Manifest, s: &Settings) {
    for line in s.render().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            m.param(k, v);
        }
    }
}

struct Ctx {
    records: Vec<LogRecord>,
    out: PathBuf,
    settings: Settings,
    world: World,
    manifest: Manifest,
    name: &'static str,
}

impl Ctx {
    fn path(&self, suffix: &str) -> PathBuf {
        self.out
            .join(format!("{}_{suffix}", self.name.replace('-', "_")))
    }

    fn write(&mut self, suffix: &str, text: &str) -> Outcome {
        let p = self.path(suffix);
        self.manifest.write(&p, text)?;
        Ok(())
    }

    fn write_json(&mut self, suffix: &str, value: &Value) -> Outcome {
        let p = self.path(suffix);
        self.manifest.write_json(&p, value)?;
        Ok(())
    }

    fn finish(self) -> Outcome {
        let p = self.path("manifest.json");
        self.manifest.finish(&p)?;
        Ok(())
    }

    fn yawed(&self, yaw: &YawArgs) -> Result<Vec<LogRecord>, Failure> {
        Ok(match yaw.filter() {
            Some((c, t)) => filter_by_yaw(&self.records, c, t)?,
            None => self.records.clone(),
        })
    }
}

fn analyse(shared: &Shared, s: Settings, command: &Command) -> Outcome {
    let name = command.name();
    let log = shared
        .log
        .clone()
        .ok_or_else(|| usage(format!("`{name}` needs --log <path>")))?;
    let out = shared.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let world = s.world()?;
    let digest = config_digest(&s.explore(), &world);
    let mut manifest = Manifest::new(name, digest);
    manifest.input(&log);
    if let Some(c) = &shared.config {
        manifest.input(c);
    }
    if let Some(seed) = s.seed {
        manifest.param("seed", seed);
    }
    // Check stochastic commands before touching the disk.
    if matches!(
        command,
        Command::Knn { .. } | Command::Cluster { .. } | Command::Elbow { .. }
    ) || matches!(command, Command::Hull { region_x: None, .. })
    {
        require_seed(&s, name)?;
    }
    let probe = match command {
        Command::Transform { line, grid, .. } => {
            Some(parse_probe(line.as_deref(), grid.as_deref())?)
        }
        _ => None,
    };
    let records = at(&log, read_log(&log))?.into_records();
    fs::create_dir_all(&out)?;
    let mut ctx = Ctx {
        records,
        out,
        settings: s,
        world,
        manifest,
        name,
    };
    match command {
        Command::Simulate { .. } => unreachable!("handled by dispatch"),
        Command::PathDensity { resolution } => path_density(&mut ctx, *resolution)?,
        Command::Knn { k, anchors } => knn(&mut ctx, *k, *anchors)?,
        Command::Std {
            sensor,
            resolution,
            rolling,
            window,
        } => std_map(&mut ctx, *sensor, *resolution, rolling.then_some(*window))?,
        Command::Corr { yaw } => corr(&mut ctx, yaw)?,
        Command::Hull {
            region_x,
            region_y,
            regions,
            radius,
            yaw,
        } => {
            let centre = region_x.zip(*region_y);
            hull(&mut ctx, centre, *regions, *radius, yaw)?
        }
        Command::Cluster { k, restarts, yaw } => cluster(&mut ctx, *k, *restarts, yaw)?,
        Command::Elbow {
            k_max,
            restarts,
            yaw,
        } => elbow(&mut ctx, *k_max, *restarts, yaw)?,
        Command::Transform { k, yaw, .. } => {
            let (kind, p0, p1) = probe.expect("parsed above");
            transform(&mut ctx, kind, p0, p1, *k, yaw)?
        }
    }
    ctx.finish()
}

type ProbeSpec = (ProbeKind, [f64; 2], [f64; 2]);

fn parse_probe(line: Option<&str>, grid: Option<&str>) -> Result<ProbeSpec, Failure> {
    let (text, counts) = match (line, grid) {
        (Some(t), None) => (t, 1),
        (None, Some(t)) => (t, 2),
        _ => return Err(usage("give exactly one of --line or --grid")),
    };
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 4 + counts {
        return Err(usage(format!(
            "expected {} comma-separated values in {text:?}",
            4 + counts
        )));
    }
    let mut c = [0.0; 4];
    for (slot, p) in c.iter_mut().zip(&parts) {
        *slot = p
            .parse()
            .map_err(|_| usage(format!("bad coordinate {p:?}")))?;
    }
    let mut n = [0usize; 2];
    for (slot, p) in n.iter_mut().zip(&parts[4..]) {
        *slot = p
            .parse()
            .map_err(|_| usage(format!("bad point count {p:?}")))?;
    }
    let kind = if counts == 1 {
        ProbeKind::Line { n: n[0] }
    } else {
        ProbeKind::Grid { nx: n[0], ny: n[1] }
    };
    Ok((kind, [c[0], c[1]], [c[2], c[3]]))
}

fn grid_for(ctx: &mut Ctx, resolution: Option<usize>) -> Result<GridSpec, Failure> {
    let res = resolution.unwrap_or(ctx.settings.resolution);
    ctx.manifest.param("resolution", res);
    Ok(GridSpec::for_arena(&ctx.world.arena, res)?)
}

fn path_density(ctx: &mut Ctx, resolution: Option<usize>) -> Outcome {
    let grid = grid_for(ctx, resolution)?;
    let counts = occupancy_grid(&ctx.records, &grid)?;
    let n = grid.resolution();
    let mut csv = String::from("row,col,x,y,count\n");
    for row in 0..n {
        for col in 0..n {
            let c = grid.cell_center(row, col);
            writeln!(
                csv,
                "{row},{col},{},{},{}",
                format_sig9(c[0]),
                format_sig9(c[1]),
                counts[row * n + col]
            )
            .unwrap();
        }
    }
    ctx.write("grid.csv", &csv)
}

fn knn(ctx: &mut Ctx, k: usize, anchors: usize) -> Outcome {
    let seed = require_seed(&ctx.settings, "knn")?;
    ctx.manifest.param("k", k);
    ctx.manifest.param("anchors", anchors);
    let report = locality_ratio(&ctx.records, k, anchors, &mut seeded_rng(seed))?;
    let first = ctx.records.iter().map(|r| r.index).min().unwrap_or(0);
    let at = |i: u64| &ctx.records[(i - first) as usize];
    let mut csv =
        String::from("anchor_index,anchor_x,anchor_y,neighbor_index,neighbor_x,neighbor_y\n");
    let mut per_anchor = Vec::with_capacity(report.anchors.len());
    for ((&a, nbrs), mean) in report
        .anchors
        .iter()
        .zip(&report.neighbors)
        .zip(&report.anchor_means)
    {
        let ar = at(a);
        for &n in nbrs {
            let nr = at(n);
            writeln!(
                csv,
                "{a},{},{},{n},{},{}",
                format_sig9(ar.x1),
                format_sig9(ar.y1),
                format_sig9(nr.x1),
                format_sig9(nr.y1)
            )
            .unwrap();
        }
        per_anchor.push(json!({ "index": a, "mean_distance": mean, "neighbors": nbrs }));
    }
    let json = json!({
        "k": k,
        "n_anchors": anchors,
        "ratio": report.ratio,
        "baseline": report.baseline,
        "anchors": per_anchor,
    });
    ctx.write_json("report.json", &json)?;
    ctx.write("pairs.csv", &csv)
}

fn std_map(
    ctx: &mut Ctx,
    sensor: usize,
    resolution: Option<usize>,
    window: Option<usize>,
) -> Outcome {
    let grid = grid_for(ctx, resolution)?;
    ctx.manifest.param("sensor", sensor);
    let map = match window {
        Some(w) => {
            ctx.manifest.param("window", w);
            rolling_grid_std(&ctx.records, sensor, &grid, w)?
        }
        None => grid_std(&ctx.records, sensor, &grid)?,
    };
    ctx.manifest.param("rolling", window.is_some());
    let n = grid.resolution();
    let mut csv = String::from("row,col,value,count\n");
    for row in 0..n {
        for col in 0..n {
            let i = row * n + col;
            writeln!(csv, "{row},{col},{},{}", cell(map.values[i]), map.counts[i]).unwrap();
        }
    }
    ctx.write("grid.csv", &csv)
}

fn corr(ctx: &mut Ctx, yaw: &YawArgs) -> Outcome {
    if let Some((c, t)) = yaw.filter() {
        ctx.manifest.param("yaw", c);
        ctx.manifest.param("yaw_tol", t);
    }
    let m = sensor_correlation(&ctx.records, yaw.filter())?;
    let names: Vec<String> = (0..SENSOR_COUNT).map(|i| format!("ds_{i:02}")).collect();
    let mut csv = names.join(",");
    csv.push('\n');
    for row in &m.values {
        let cells: Vec<String> = row.iter().map(|v| cell(*v)).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    let summary = json!({
        "n_samples": m.n_samples,
        "mean_adjacent": m.mean_at_offset(1),
        "mean_offset_8": m.mean_at_offset(8),
        "mean_abs_off_diagonal": m.mean_abs_off_diagonal(),
    });
    ctx.write("matrix.csv", &csv)?;
    ctx.write_json("summary.json", &summary)
}

fn hull(
    ctx: &mut Ctx,
    centre: Option<(f64, f64)>,
    regions: usize,
    radius: f64,
    yaw: &YawArgs,
) -> Outcome {
    let filter = require_yaw(yaw, "hull")?;
    ctx.manifest.param("yaw", filter.0);
    ctx.manifest.param("yaw_tol", filter.1);
    ctx.manifest.param("radius", radius);
    let centers = match centre {
        Some((x, y)) => vec![[x, y]],
        None => {
            let seed = require_seed(&ctx.settings, "hull")?;
            ctx.manifest.param("regions", regions);
            sample_region_centers(&ctx.world.arena, radius, regions, &mut seeded_rng(seed))?
        }
    };
    let plane = SensorPlane::new(&ctx.records, filter)?;
    let results = plane.correspondences(&centers, radius);

    let mut phys = String::from("region,vertex,record_index,x,y\n");
    let mut sens = String::from("region,vertex,record_index,u,v\n");
    let mut verdicts = Vec::with_capacity(results.len());
    let (mut evaluated, mut preserved) = (0usize, 0usize);
    for (r, (res, c)) in results.into_iter().zip(&centers).enumerate() {
        match res {
            Ok(h) => {
                evaluated += 1;
                preserved += h.winding_preserved as usize;
                for (v, ((p, q), idx)) in h
                    .physical
                    .vertices
                    .iter()
                    .zip(&h.sensor_points)
                    .zip(&h.record_indices)
                    .enumerate()
                {
                    writeln!(
                        phys,
                        "{r},{v},{idx},{},{}",
                        format_sig9(p[0]),
                        format_sig9(p[1])
                    )
                    .unwrap();
                    writeln!(
                        sens,
                        "{r},{v},{idx},{},{}",
                        format_sig9(q[0]),
                        format_sig9(q[1])
                    )
                    .unwrap();
                }
                verdicts.push(json!({
                    "region": r,
                    "center": c,
                    "n_vertices": h.physical.vertices.len(),
                    "physical_signed_area": h.physical_signed_area,
                    "sensor_signed_area": h.sensor_signed_area,
                    "winding_preserved": h.winding_preserved,
                }));
            }
            Err(e) => verdicts.push(json!({ "region": r, "center": c, "error": e.to_string() })),
        }
    }
    let summary = json!({
        "regions": verdicts,
        "evaluated": evaluated,
        "preserved": preserved,
        "preserved_fraction": (evaluated > 0).then(|| preserved as f64 / evaluated as f64),
    });
    ctx.write("physical.csv", &phys)?;
    ctx.write("sensor.csv", &sens)?;
    ctx.write_json("verdict.json", &summary)
}

fn kmeans_params(ctx: &mut Ctx, restarts: usize, yaw: &YawArgs) -> Result<KMeansParams, Failure> {
    let seed = require_seed(&ctx.settings, ctx.name)?;
    ctx.manifest.param("restarts", restarts);
    if let Some((c, t)) = yaw.filter() {
        ctx.manifest.param("yaw", c);
        ctx.manifest.param("yaw_tol", t);
    }
    Ok(KMeansParams {
        restarts,
        ..KMeansParams::with_seed(seed)
    })
}

fn cluster(ctx: &mut Ctx, k: usize, restarts: usize, yaw: &YawArgs) -> Outcome {
    let params = kmeans_params(ctx, restarts, yaw)?;
    ctx.manifest.param("k", k);
    let subset = ctx.yawed(yaw)?;
    let matrix = normalize_sensors(&subset)?.matrix;
    let model = kmeans(&matrix, k, &params)?;
    let purity = wall_purity(&model.assignments, &subset, &ctx.world.arena)?;
    let mut csv = String::from("index,x1,y1,cluster\n");
    for (r, c) in subset.iter().zip(&model.assignments) {
        writeln!(
            csv,
            "{},{},{},{c}",
            r.index,
            format_sig9(r.x1),
            format_sig9(r.y1)
        )
        .unwrap();
    }
    let summary = json!({
        "k": k,
        "n_records": subset.len(),
        "inertia": model.inertia,
        "iterations": model.iterations,
        "sizes": model.cluster_sizes(),
        "wall_purity": purity,
    });
    ctx.write("assignments.csv", &csv)?;
    ctx.write_json("summary.json", &summary)
}

fn elbow(ctx: &mut Ctx, k_max: usize, restarts: usize, yaw: &YawArgs) -> Outcome {
    let params = kmeans_params(ctx, restarts, yaw)?;
    ctx.manifest.param("k_max", k_max);
    let subset = ctx.yawed(yaw)?;
    let matrix = normalize_sensors(&subset)?.matrix;
    let ks: Vec<usize> = (1..=k_max).collect();
    let curve = elbow_select(&matrix, &ks, &params)?;
    let mut csv = String::from("k,inertia\n");
    for (k, i) in curve.ks.iter().zip(&curve.inertias) {
        writeln!(csv, "{k},{}", format_sig9(*i)).unwrap();
    }
    ctx.write("curve.csv", &csv)?;
    ctx.write_json(
        "selection.json",
        &json!({ "selected_k": curve.selected, "n_records": subset.len() }),
    )
}

fn transform(
    ctx: &mut Ctx,
    kind: ProbeKind,
    p0: [f64; 2],
    p1: [f64; 2],
    k: usize,
    yaw: &YawArgs,
) -> Outcome {
    let filter = require_yaw(yaw, "transform")?;
    ctx.manifest.param("yaw", filter.0);
    ctx.manifest.param("yaw_tol", filter.1);
    ctx.manifest.param("k", k);
    ctx.manifest.param("from", json!(p0));
    ctx.manifest.param("to", json!(p1));
    let arena = &ctx.world.arena;
    let probe = match kind {
        ProbeKind::Line { n } => {
            ctx.manifest.param("n", n);
            ProbeSet::line(p0, p1, n, arena)?
        }
        ProbeKind::Grid { nx, ny } => {
            ctx.manifest.param("nx", nx);
            ctx.manifest.param("ny", ny);
            ProbeSet::grid(p0, p1, nx, ny, arena)?
        }
    };
    let mapped = map_to_sensor_space(&probe, &ctx.records, filter, k)?;
    let metrics = distortion_metrics(&mapped)?;
    let mut csv = String::from("px,py,plane_u,plane_v,coverage\n");
    for ((p, q), c) in probe.points.iter().zip(&mapped.plane).zip(&mapped.coverage) {
        writeln!(
            csv,
            "{},{},{},{},{c}",
            format_sig9(p[0]),
            format_sig9(p[1]),
            format_sig9(q[0]),
            format_sig9(q[1])
        )
        .unwrap();
    }
    let summary = json!({
        "straightness": metrics.straightness,
        "non_uniformity": metrics.non_uniformity,
        "insufficient_points": mapped.insufficient.iter().filter(|b| **b).count(),
    });
    ctx.write("points.csv", &csv)?;
    ctx.write_json("metrics.json", &summary)
}
