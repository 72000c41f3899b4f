use std::path::{Path, PathBuf};
use std::time::Instant;

use ballwise::domain::{
    enumerate_family_with_limit, AdjustmentFamily, ComponentGrid, ComponentKind, ProductDomain, RadiusCap,
};
use ballwise::evalsim::{run_scenario_on, MeshSource, ScenarioConfig};
use ballwise::mesh::{build_icosphere, load_mesh, parse_edge_lengths, write_off, DistanceMatrix, TriangulatedManifold};
use ballwise::permute::{adjust, run_test, PermutationPlan, TestOutcome, RNG_ALGORITHM};
use serde::Serialize;

use crate::config::{load_json, ComponentConfig, LoadedConfig, RunConfig};
use crate::io::{read_signals, sha256_hex, write_atomic};
use crate::CliError;

/// Overrides shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub threads: usize,
}

impl Common {
    fn output_path(&self, base_dir: &Path, path: &Path) -> PathBuf {
        if path.is_absolute() {
            return path.to_path_buf();
        }
        self.out_dir.as_deref().unwrap_or(base_dir).join(path)
    }
}

#[derive(Debug, Serialize)]
struct Versions {
    ballwise: &'static str,
    ballwise_cli: &'static str,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    permutations: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    radius_caps: Vec<RadiusCap>,
    #[serde(skip_serializing_if = "Option::is_none")]
    family_size: Option<usize>,
    rng_algorithm: &'static str,
    versions: Versions,
    threads: usize,
    outputs: Vec<PathBuf>,
    wall_time_seconds: f64,
}

impl Manifest {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            config_sha256: None,
            seed: None,
            permutations: None,
            radius_caps: Vec::new(),
            family_size: None,
            rng_algorithm: RNG_ALGORITHM,
            versions: Versions {
                ballwise: ballwise::VERSION,
                ballwise_cli: env!("CARGO_PKG_VERSION"),
            },
            threads: rayon::current_num_threads(),
            outputs: Vec::new(),
            wall_time_seconds: 0.0,
        }
    }

    fn write(mut self, path: &Path, started: Instant) -> Result<(), CliError> {
        self.wall_time_seconds = started.elapsed().as_secs_f64();
        write_atomic(path, |w| {
            serde_json::to_writer_pretty(&mut *w, &self)?;
            writeln!(w)
        })
    }
}

fn sidecar_manifest(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn csv_error(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

pub fn cmd_tessellate(order: usize, radius: f64, out: &Path, common: &Common) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    if order == 0 {
        return Err(CliError::Usage("icosphere order must be at least 1".into()));
    }
    let mesh = build_icosphere(order, radius).map_err(|e| CliError::Usage(e.to_string()))?;
    let path = common.output_path(Path::new("."), out);
    write_atomic(&path, |w| write_off(&mesh, w).map_err(std::io::Error::other))?;
    let mut manifest = Manifest::new("tessellate");
    manifest.config_sha256 = Some(sha256_hex(format!("order={order} radius={radius}").as_bytes()));
    manifest.outputs.push(path.clone());
    manifest.write(&sidecar_manifest(&path), started)?;
    log::info!("wrote {} vertices to {}", mesh.n_vertices(), path.display());
    Ok(path)
}

fn load_mesh_with_lengths(mesh: &Path, edge_lengths: Option<&Path>) -> Result<TriangulatedManifold, CliError> {
    let mut m = load_mesh(mesh).map_err(CliError::input)?;
    if let Some(lengths) = edge_lengths {
        let text = std::fs::read_to_string(lengths)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", lengths.display())))?;
        let overrides =
            parse_edge_lengths(&text).map_err(|e| CliError::Input(format!("{}: {e}", lengths.display())))?;
        m.apply_edge_lengths(overrides).map_err(CliError::input)?;
    }
    Ok(m)
}

pub fn cmd_distances(
    mesh: &Path,
    edge_lengths: Option<&Path>,
    out: &Path,
    common: &Common,
) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    let mut m = load_mesh_with_lengths(mesh, edge_lengths)?;
    m.compute_distances()?;
    let path = common.output_path(Path::new("."), out);
    let distances = m.distances()?;
    write_atomic(&path, |w| distances.write_binary(w))?;
    let mut manifest = Manifest::new("distances");
    let mut fingerprint = std::fs::read(mesh).map_err(CliError::input)?;
    if let Some(lengths) = edge_lengths {
        fingerprint.extend(std::fs::read(lengths).map_err(CliError::input)?);
    }
    manifest.config_sha256 = Some(sha256_hex(&fingerprint));
    manifest.outputs.push(path.clone());
    manifest.write(&sidecar_manifest(&path), started)?;
    Ok(path)
}

/// Builds the product domain and its adjustment family from a run config.
pub fn build_domain(cfg: &LoadedConfig<RunConfig>) -> Result<(ProductDomain, AdjustmentFamily), CliError> {
    let mut grids = Vec::new();
    for component in &cfg.config.domain.components {
        let cap = component.radius_cap().value();
        let grid = match component {
            ComponentConfig::Mesh {
                path,
                icosphere,
                edge_lengths,
                distances,
                ..
            } => {
                let mut mesh = match (path, icosphere) {
                    (Some(p), None) => {
                        load_mesh_with_lengths(&cfg.resolve(p), edge_lengths.as_ref().map(|e| cfg.resolve(e)).as_deref())?
                    }
                    (None, Some(ico)) => build_icosphere(ico.order, ico.radius).map_err(CliError::input)?,
                    _ => return Err(CliError::Input("mesh needs exactly one of `path` and `icosphere`".into())),
                };
                if path.is_none() && edge_lengths.is_some() {
                    return Err(CliError::Input("edge_lengths applies to OFF meshes only".into()));
                }
                mesh.compute_weights().map_err(CliError::input)?;
                match distances {
                    Some(cache) => {
                        let d = DistanceMatrix::load(&cfg.resolve(cache)).map_err(CliError::input)?;
                        mesh.set_distances(d).map_err(CliError::input)?;
                    }
                    None => mesh.compute_distances()?,
                }
                ComponentGrid::from_mesh(&mesh, cap).map_err(CliError::input)?
            }
            ComponentConfig::Circle {
                points, circumference, ..
            } => ComponentGrid::circle(*points, *circumference, cap).map_err(CliError::input)?,
            ComponentConfig::Interval { points, start, end, .. } => {
                ComponentGrid::interval(*points, *start, *end, cap).map_err(CliError::input)?
            }
        };
        grids.push(grid);
    }
    let domain = ProductDomain::new(grids).map_err(CliError::input)?;
    let family = enumerate_family_with_limit(&domain, cfg.config.domain.membership_limit).map_err(CliError::input)?;
    Ok((domain, family))
}

fn coordinate_headers(domain: &ProductDomain) -> Vec<String> {
    let mut header = Vec::new();
    for (l, grid) in domain.components().iter().enumerate() {
        match grid.kind() {
            ComponentKind::Mesh => {
                header.push(format!("c{l}_vertex"));
                if !grid.coordinates(0).is_empty() {
                    header.extend(["x", "y", "z"].iter().map(|a| format!("c{l}_{a}")));
                }
            }
            ComponentKind::Circle { .. } | ComponentKind::Interval { .. } => {
                header.push(format!("c{l}_index"));
                header.push(format!("c{l}_t"));
            }
        }
    }
    header
}

fn coordinate_cells(domain: &ProductDomain, point: usize) -> Vec<String> {
    let mut cells = Vec::new();
    for (grid, part) in domain.components().iter().zip(domain.parts(point)) {
        cells.push(part.to_string());
        cells.extend(grid.coordinates(part).iter().map(f64::to_string));
    }
    cells
}

fn write_points(
    path: &Path,
    domain: &ProductDomain,
    t_obs: &[f64],
    pointwise: &[f64],
    adjusted: &[f64],
) -> Result<(), CliError> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["point".to_string()];
        header.extend(coordinate_headers(domain));
        header.extend(["t_obs", "p", "p_adj"].map(String::from));
        out.write_record(&header).map_err(csv_error)?;
        for g in 0..domain.len() {
            let mut row = vec![g.to_string()];
            row.extend(coordinate_cells(domain, g));
            row.extend([t_obs[g], pointwise[g], adjusted[g]].iter().map(f64::to_string));
            out.write_record(&row).map_err(csv_error)?;
        }
        out.flush()
    })
}

fn write_balls(path: &Path, domain: &ProductDomain, family: &AdjustmentFamily, out: &TestOutcome) -> Result<(), CliError> {
    write_atomic(path, |w| {
        let mut csv_out = csv::Writer::from_writer(w);
        let mut header = vec!["ball".to_string()];
        for l in 0..domain.components().len() {
            header.extend(["center", "radius", "min_radius"].iter().map(|c| format!("c{l}_{c}")));
        }
        header.extend(["t_obs", "p"].map(String::from));
        csv_out.write_record(&header).map_err(csv_error)?;
        for i in 0..family.len() {
            let mut row = vec![i.to_string()];
            for ball in family.component_balls(i) {
                row.push(ball.center.to_string());
                row.push(ball.radius.to_string());
                row.push(ball.min_radius.to_string());
            }
            row.push(out.observed_balls[i].to_string());
            row.push(out.pvalues.ballwise[i].to_string());
            csv_out.write_record(&row).map_err(csv_error)?;
        }
        csv_out.flush()
    })
}

#[derive(Debug, Clone)]
pub struct TestSummary {
    pub points: PathBuf,
    pub balls: Option<PathBuf>,
    pub manifest: PathBuf,
    pub family_size: usize,
    pub rejected: usize,
}

pub fn cmd_test(config_path: &Path, common: &Common) -> Result<TestSummary, CliError> {
    let started = Instant::now();
    let cfg: LoadedConfig<RunConfig> = load_json(config_path)?;
    cfg.config.validate()?;
    let (domain, family) = build_domain(&cfg)?;
    let run = &cfg.config;
    let data_path = cfg.resolve(&run.data.path);
    let signals = read_signals(&data_path, run.data.resolved_format(), domain.len())?;
    let design = run.model.design.build(signals.n_obs())?;
    let hypothesis = run.model.hypothesis.build(design.n_coefficients())?;
    let seed = common.seed.unwrap_or(run.inference.seed);
    let plan = PermutationPlan::new(run.inference.permutations, seed, run.inference.scheme, &design, &hypothesis)
        .map_err(CliError::input)?;
    log::info!(
        "testing {} points, {} balls, B = {}",
        domain.len(),
        family.len(),
        plan.count()
    );

    let outcome = run_test(&signals, &design, &hypothesis, &domain, &family, &plan)?;

    let points = common.output_path(&cfg.base_dir, &run.output.points);
    let p = &outcome.pvalues;
    write_points(&points, &domain, outcome.observed.values(), &p.pointwise, &p.adjusted)?;
    let balls = match &run.output.balls {
        Some(b) => {
            let path = common.output_path(&cfg.base_dir, b);
            write_balls(&path, &domain, &family, &outcome)?;
            Some(path)
        }
        None => None,
    };
    let manifest_path = common.output_path(&cfg.base_dir, &run.output.manifest);
    let mut manifest = Manifest::new("test");
    manifest.config_sha256 = Some(sha256_hex(&cfg.bytes));
    manifest.seed = Some(seed);
    manifest.permutations = Some(plan.count());
    manifest.radius_caps = run.domain.components.iter().map(ComponentConfig::radius_cap).collect();
    manifest.family_size = Some(family.len());
    manifest.outputs.push(points.clone());
    manifest.outputs.extend(balls.clone());
    manifest.write(&manifest_path, started)?;
    Ok(TestSummary {
        points,
        balls,
        manifest: manifest_path,
        family_size: family.len(),
        rejected: p.adjusted.iter().filter(|&&v| v <= run.inference.alpha).count(),
    })
}

fn read_table(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>), CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let header = reader.headers().map_err(CliError::input)?.clone();
    let rows = reader
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok((header, rows))
}

fn numeric_column(path: &Path, header: &csv::StringRecord, rows: &[csv::StringRecord], name: &str) -> Result<Vec<f64>, CliError> {
    let c = header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Input(format!("{} has no `{name}` column", path.display())))?;
    rows.iter()
        .enumerate()
        .map(|(r, row)| {
            row.get(c)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| CliError::Input(format!("{}: bad `{name}` on row {}", path.display(), r + 2)))
        })
        .collect()
}

/// Re-adjusts the ball p-values of a previous `test` run under smaller caps.
pub fn cmd_adjust(
    config_path: &Path,
    caps: &[RadiusCap],
    out: Option<&Path>,
    common: &Common,
) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    let cfg: LoadedConfig<RunConfig> = load_json(config_path)?;
    cfg.config.validate()?;
    let run = &cfg.config;
    let original: Vec<RadiusCap> = run.domain.components.iter().map(ComponentConfig::radius_cap).collect();
    if caps.len() != original.len() {
        return Err(CliError::Usage(format!(
            "{} caps given for {} components",
            caps.len(),
            original.len()
        )));
    }
    if let Some(l) = (0..caps.len()).find(|&l| caps[l].value() > original[l].value()) {
        return Err(CliError::Usage(format!(
            "cap {} for component {l} exceeds the tested cap {}; rerun `test` instead",
            caps[l], original[l]
        )));
    }
    let balls_rel = run
        .output
        .balls
        .as_ref()
        .ok_or_else(|| CliError::Input("adjust needs output.balls from the test run".into()))?;
    let balls_path = common.output_path(&cfg.base_dir, balls_rel);
    let points_path = common.output_path(&cfg.base_dir, &run.output.points);
    let (domain, family) = build_domain(&cfg)?;

    let (ball_header, ball_rows) = read_table(&balls_path)?;
    if ball_rows.len() != family.len() {
        return Err(CliError::Input(format!(
            "{} has {} balls, the configured family has {}",
            balls_path.display(),
            ball_rows.len(),
            family.len()
        )));
    }
    let ballwise = numeric_column(&balls_path, &ball_header, &ball_rows, "p")?;
    let (point_header, point_rows) = read_table(&points_path)?;
    if point_rows.len() != domain.len() {
        return Err(CliError::Input(format!(
            "{} has {} points, the domain has {}",
            points_path.display(),
            point_rows.len(),
            domain.len()
        )));
    }
    let t_obs = numeric_column(&points_path, &point_header, &point_rows, "t_obs")?;
    let pointwise = numeric_column(&points_path, &point_header, &point_rows, "p")?;

    let cap_values: Vec<f64> = caps.iter().map(|c| c.value()).collect();
    let mask = family.admissible_under(&cap_values)?;
    let adjusted = adjust(&domain, &family, &ballwise, Some(&mask))?;

    let path = common.output_path(&cfg.base_dir, out.unwrap_or(Path::new("adjusted.csv")));
    write_points(&path, &domain, &t_obs, &pointwise, &adjusted)?;
    let mut manifest = Manifest::new("adjust");
    manifest.config_sha256 = Some(sha256_hex(&cfg.bytes));
    manifest.radius_caps = caps.to_vec();
    manifest.family_size = Some(mask.iter().filter(|&&m| m).count());
    manifest.outputs.push(path.clone());
    manifest.write(&sidecar_manifest(&path), started)?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationRow {
    pub scenario: String,
    pub sensitivity: Option<f64>,
    pub fwer: f64,
    pub false_positive_rate: f64,
    pub false_discovery_rate: f64,
}

pub fn cmd_simulate(config_path: &Path, out: Option<&Path>, common: &Common) -> Result<(PathBuf, Vec<SimulationRow>), CliError> {
    let started = Instant::now();
    let cfg: LoadedConfig<Vec<ScenarioConfig>> = load_json(config_path)?;
    if cfg.config.is_empty() {
        return Err(CliError::Input("the sweep lists no scenarios".into()));
    }
    let mut scenarios = cfg.config.clone();
    for s in &mut scenarios {
        if let Some(seed) = common.seed {
            s.seed = seed;
        }
        if let MeshSource::Off(p) = &mut s.mesh {
            *p = cfg.resolve(p);
        }
        s.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }

    let mut rows = Vec::new();
    let mut cached: Option<(MeshSource, TriangulatedManifold)> = None;
    for s in &scenarios {
        if cached.as_ref().is_none_or(|(src, _)| *src != s.mesh) {
            let mut mesh = s.mesh.build().map_err(CliError::input)?;
            mesh.compute_weights().map_err(CliError::input)?;
            mesh.compute_distances()?;
            cached = Some((s.mesh.clone(), mesh));
        }
        let mesh = &cached.as_ref().unwrap().1;
        log::info!("scenario {}: {} replicates", s.id, s.replicates);
        let outcome = run_scenario_on(s, mesh)?;
        rows.push(SimulationRow {
            scenario: s.id.clone(),
            sensitivity: outcome.rates.sensitivity,
            fwer: outcome.rates.fwer,
            false_positive_rate: outcome.rates.false_positive_rate,
            false_discovery_rate: outcome.rates.false_discovery_rate,
        });
    }

    let path = common.output_path(&cfg.base_dir, out.unwrap_or(Path::new("simulation.csv")));
    write_atomic(&path, |w| {
        let mut csv_out = csv::Writer::from_writer(w);
        for row in &rows {
            csv_out.serialize(row).map_err(csv_error)?;
        }
        csv_out.flush()
    })?;
    let mut manifest = Manifest::new("simulate");
    manifest.config_sha256 = Some(sha256_hex(&cfg.bytes));
    manifest.seed = common.seed;
    manifest.outputs.push(path.clone());
    manifest.write(&sidecar_manifest(&path), started)?;
    Ok((path, rows))
}
