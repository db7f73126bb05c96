//! Batch driver behind the `ppkit` binary.
//!
//! A run is one JSON [`RunConfig`] plus a subcommand. Relative paths in the
//! config resolve against the config file's directory. Every output is a
//! deterministic function of the config bytes and the seed.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::covar::{
    aggregate, coordinate_layers, deduplicate, design_matrix, filter_events, interaction_layer, jitter, load_cities,
    load_events, nearest_city_layer, raster_layer, refine_to, standardize, CovariateStack, DesignMatrix, EventTable,
    SpecificityFilter,
};
use crate::error::{Error, Result};
use crate::fit::{
    fit_bivariate, fitted_cross_k, fit_univariate, intensity_ratio_map, posterior_correlation_curves, McmOptions,
    McmcConfig, ModelKind, PosteriorSamples, PriorSpec,
};
use crate::geom::{GridSpec, PointPattern, Projection, Window};
use crate::grf::{ExpCovParams, Sign};
use crate::kernel::{default_bandwidth, kernel_intensity, IntensityField};
use crate::raster::AsciiGrid;
use crate::ripley::{
    cross_k_inhom, cross_poisson_envelope, csr_test, default_radii, k_inhom, pattern_intensity, poisson_envelope, CsrTest, EnvelopeIntensity,
    KKind, KResult,
};
use crate::sim::{mean_intensity, Covariance, LgcpModel, LgcpSimulator};
use crate::svg::{grid_map, panel, point_panel, LinePlot};

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum WindowSpec {
    /// `[x0, y0, x1, y1]` in planar km.
    Rectangle([f64; 4]),
    /// GeoJSON polygon(s). With `project` the coordinates are lon/lat and are
    /// projected about the window centroid.
    Geojson {
        path: PathBuf,
        #[serde(default = "yes")]
        project: bool,
    },
}

/// Either `nx` and `ny` cells over the window's bounding box, or square
/// cells of side `cell`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSettings {
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub cell: Option<f64>,
}

impl GridSettings {
    fn build(&self, window: &Window) -> Result<GridSpec> {
        let g = match (self.nx, self.ny, self.cell) {
            (Some(nx), Some(ny), None) => GridSpec::covering(window, nx, ny)?,
            (None, None, Some(c)) => GridSpec::covering_square(window, c)?,
            _ => return Err(Error::Config("grid: give either `nx` and `ny`, or `cell`".into())),
        };
        Ok(g.with_window_mask(window))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuplicatePolicy {
    /// Fail on repeated locations.
    Reject,
    /// Keep the first event at each location.
    #[default]
    Drop,
    /// Gaussian displacement with this sd (degrees when projected).
    Jitter { sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventsSpec {
    pub path: PathBuf,
    /// One or two groups; empty means every event as a single process.
    #[serde(default)]
    pub groups: Vec<String>,
    #[serde(default)]
    pub specificity: Option<SpecificityFilter>,
    #[serde(default)]
    pub duplicates: DuplicatePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterSpec {
    pub name: String,
    pub path: PathBuf,
    /// Apply `log(1 + x)` before standardising.
    #[serde(default)]
    pub population: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateSpec {
    #[serde(default)]
    pub rasters: Vec<RasterSpec>,
    /// Adds `lon` and `lat` layers.
    #[serde(default)]
    pub coordinates: bool,
    /// City list (`name,lon,lat`) for the `mdis` distance layer.
    #[serde(default)]
    pub cities: Option<PathBuf>,
    #[serde(default)]
    pub interaction: Option<[String; 2]>,
    /// Aggregate every layer to this coarser grid and broadcast it back.
    #[serde(default)]
    pub coarse: Option<GridSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KSettings {
    pub n_sim: usize,
    pub n_radii: usize,
    pub r_max: Option<f64>,
    pub level: f64,
    pub intensity: EnvelopeIntensity,
    pub bandwidth: Option<f64>,
}

impl Default for KSettings {
    fn default() -> Self {
        KSettings {
            n_sim: 99,
            n_radii: 64,
            r_max: None,
            level: 0.95,
            intensity: EnvelopeIntensity::Kernel,
            bandwidth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    /// One coefficient vector per process, intercept first.
    pub beta: Vec<Vec<f64>>,
    pub covariance: Covariance,
    /// Univariate covariance settings drawn side by side in `panel.svg`,
    /// each with the first process's coefficients.
    #[serde(default)]
    pub lattice: Vec<ExpCovParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Long,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    #[serde(default)]
    pub preset: Preset,
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub thin: Option<usize>,
    #[serde(default)]
    pub n_samples: Option<usize>,
    /// Required for two groups.
    #[serde(default)]
    pub sign: Option<Sign>,
    #[serde(default)]
    pub prior: Option<PriorSpec>,
    #[serde(default)]
    pub torus_expansion: Option<usize>,
    #[serde(default)]
    pub mcm: Option<McmOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    /// Posterior in the denominator of the ratio map.
    pub posterior: PathBuf,
    /// Covariates of that fit; defaults to the run's covariates.
    #[serde(default)]
    pub covariates: Option<CovariateSpec>,
}

fn default_report_sims() -> usize {
    200
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSpec {
    pub posterior: PathBuf,
    #[serde(default = "default_report_sims")]
    pub n_sim: usize,
    /// Largest distance of the correlation curves; defaults to three times
    /// the largest posterior-median range.
    #[serde(default)]
    pub max_distance: Option<f64>,
    #[serde(default)]
    pub compare: Option<CompareSpec>,
    /// 1-based process used for the ratio map.
    #[serde(default = "one")]
    pub process: usize,
    /// Fitted cross-K against the run's events (bivariate posteriors only).
    #[serde(default = "yes")]
    pub cross_k: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub window: WindowSpec,
    pub grid: GridSettings,
    #[serde(default)]
    pub events: Option<EventsSpec>,
    #[serde(default)]
    pub covariates: CovariateSpec,
    #[serde(default)]
    pub k: KSettings,
    #[serde(default)]
    pub simulate: Option<SimulateSpec>,
    #[serde(default)]
    pub fit: Option<FitSpec>,
    #[serde(default)]
    pub report: Option<ReportSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Diagnose,
    Simulate,
    Fit,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Diagnose => "diagnose",
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Report => "report",
        }
    }
}

/// Files written by a command, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutput {
    pub command: Command,
    pub out: PathBuf,
    pub files: Vec<String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config line {}: {e}", e.line())))
    }

    /// Checks that every referenced input exists and the command's section
    /// is present.
    pub fn validate(&self, base: &Path, cmd: Command) -> Result<()> {
        let must_exist = |p: &Path, what: &str| -> Result<()> {
            let full = base.join(p);
            if full.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} `{}` does not exist", full.display())))
            }
        };
        if let WindowSpec::Geojson { path, .. } = &self.window {
            must_exist(path, "window file")?;
        }
        if let Some(ev) = &self.events {
            must_exist(&ev.path, "events file")?;
            if ev.groups.len() > 2 {
                return Err(Error::Config("events.groups takes at most two groups".into()));
            }
        }
        let covs = std::iter::once(&self.covariates)
            .chain(self.report.as_ref().and_then(|r| r.compare.as_ref()).and_then(|c| c.covariates.as_ref()));
        for c in covs {
            for r in &c.rasters {
                must_exist(&r.path, "raster")?;
            }
            if let Some(p) = &c.cities {
                must_exist(p, "city list")?;
            }
        }
        if !(self.k.level > 0.0 && self.k.level < 1.0) {
            return Err(Error::Config("k.level must be in (0, 1)".into()));
        }
        match cmd {
            Command::Diagnose | Command::Fit if self.events.is_none() => {
                return Err(Error::Config(format!("`{}` needs an `events` section", cmd.name())));
            }
            Command::Simulate if self.simulate.is_none() => {
                return Err(Error::Config("`simulate` needs a `simulate` section".into()));
            }
            Command::Report => {
                let r = self
                    .report
                    .as_ref()
                    .ok_or_else(|| Error::Config("`report` needs a `report` section".into()))?;
                must_exist(&r.posterior, "posterior")?;
                if let Some(c) = &r.compare {
                    must_exist(&c.posterior, "comparison posterior")?;
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Independent seed for sub-task `tag` of a run.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag + 1);
    rng.next_u64()
}

struct Ctx {
    base: PathBuf,
    out: PathBuf,
    seed: u64,
    files: Vec<String>,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(v)?;
        text.push('\n');
        self.write(name, &text)
    }

    fn write_grid(&mut self, name: &str, grid: &GridSpec, values: &[f64]) -> Result<()> {
        self.write(name, &AsciiGrid::from_grid_values(grid, values).to_text())
    }
}

struct Setting {
    window: Arc<Window>,
    projection: Option<Projection>,
    grid: GridSpec,
}

fn load_setting(cfg: &RunConfig, ctx: &Ctx) -> Result<Setting> {
    let (window, projection) = match &cfg.window {
        WindowSpec::Rectangle([x0, y0, x1, y1]) => (Window::rectangle(*x0, *y0, *x1, *y1)?, None),
        WindowSpec::Geojson { path, project } => {
            let p = ctx.path(path);
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let polys = Window::polygons_from_geojson(&text)?;
            if *project {
                let pr = Projection::centered_on(&polys)?;
                (Window::from_polygons(pr.project_polygons(&polys))?, Some(pr))
            } else {
                (Window::from_polygons(polys)?, None)
            }
        }
    };
    let grid = cfg.grid.build(&window)?;
    Ok(Setting {
        window: Arc::new(window),
        projection,
        grid,
    })
}

struct Groups {
    names: Vec<String>,
    patterns: Vec<PointPattern>,
    notes: Vec<String>,
}

fn load_groups(spec: &EventsSpec, set: &Setting, ctx: &Ctx) -> Result<Groups> {
    let loaded = load_events(ctx.path(&spec.path), &set.window, set.projection.as_ref())?;
    let mut notes = Vec::new();
    if loaded.dropped > 0 {
        notes.push(format!("{} events outside the window were dropped", loaded.dropped));
    }
    let names: Vec<Option<String>> = if spec.groups.is_empty() {
        vec![None]
    } else {
        spec.groups.iter().cloned().map(Some).collect()
    };
    let mut patterns = Vec::new();
    for (j, g) in names.iter().enumerate() {
        let table = filter_events(&loaded.table, g.as_deref(), spec.specificity);
        let label = g.clone().unwrap_or_else(|| "all".into());
        if table.len() < 2 {
            return Err(Error::Config(format!("group `{label}` has {} events after filtering; need at least 2", table.len())));
        }
        let pp = table.to_pattern(set.window.clone(), set.projection.as_ref())?;
        let pp = match &spec.duplicates {
            DuplicatePolicy::Reject => pp.into_simple()?,
            DuplicatePolicy::Drop => {
                let (pp, removed) = deduplicate(&pp);
                if removed > 0 {
                    notes.push(format!("group `{label}`: {removed} duplicate locations dropped"));
                }
                pp
            }
            DuplicatePolicy::Jitter { sd } => jitter(&pp, *sd, sub_seed(ctx.seed, 100 + j as u64), set.projection.as_ref())?,
        };
        patterns.push(pp);
    }
    Ok(Groups {
        names: names.into_iter().map(|g| g.unwrap_or_else(|| "all".into())).collect(),
        patterns,
        notes,
    })
}

fn build_stack(spec: &CovariateSpec, set: &Setting, ctx: &Ctx) -> Result<CovariateStack> {
    let grid = &set.grid;
    let mut stack = CovariateStack::new(grid.clone());
    for r in &spec.rasters {
        stack = stack.with_layer(raster_layer(ctx.path(&r.path), &r.name, grid, set.projection.as_ref(), r.population)?)?;
    }
    if spec.coordinates {
        let (lon, lat) = coordinate_layers(grid);
        stack = stack.with_layer(lon)?.with_layer(lat)?;
    }
    if let Some(p) = &spec.cities {
        let cities: Vec<_> = load_cities(ctx.path(p), set.projection.as_ref())?.into_iter().map(|c| c.1).collect();
        stack = stack.with_layer(nearest_city_layer(grid, &cities)?)?;
    }
    if let Some(coarse) = &spec.coarse {
        let cg = coarse.build(&set.window)?;
        stack = refine_to(&aggregate(&stack, &cg)?, grid)?;
    }
    stack = standardize(&stack)?;
    if let Some([a, b]) = &spec.interaction {
        stack = standardize(&interaction_layer(&stack, a, b)?)?;
    }
    Ok(stack)
}

fn radii_for(k: &KSettings, window: &Window) -> Vec<f64> {
    match k.r_max {
        Some(r) => (0..k.n_radii.max(2)).map(|i| r * i as f64 / (k.n_radii.max(2) - 1) as f64).collect(),
        None => default_radii(window, k.n_radii),
    }
}

fn kernel_field(pp: &PointPattern, k: &KSettings, grid: &GridSpec) -> Result<IntensityField> {
    let h = match k.bandwidth {
        Some(h) => h,
        None => default_bandwidth(pp)?,
    };
    kernel_intensity(pp, h, grid)
}

fn verdict(test: &CsrTest, res: &KResult, alpha: f64, cross: bool) -> &'static str {
    if !test.rejects(alpha) {
        return if cross { "independence not rejected" } else { "fail to reject CSR" };
    }
    if !cross {
        return "reject CSR";
    }
    let above = res.above().iter().filter(|b| **b).count();
    let below = res.below().iter().filter(|b| **b).count();
    if below > above {
        "repulsion"
    } else {
        "attraction"
    }
}

fn k_report(name: &str, n: &[usize], res: &KResult, test: &CsrTest, v: &str) -> serde_json::Value {
    json!({
        "name": name,
        "n": n,
        "statistic": test.statistic,
        "p_value": test.p_value,
        "n_sim": test.n_sim,
        "radii_above": res.above().iter().filter(|b| **b).count(),
        "radii_below": res.below().iter().filter(|b| **b).count(),
        "verdict": v,
    })
}

fn cmd_diagnose(cfg: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let set = load_setting(cfg, ctx)?;
    let groups = load_groups(cfg.events.as_ref().expect("validated"), &set, ctx)?;
    let k = &cfg.k;
    let radii = radii_for(k, &set.window);
    let alpha = 1.0 - k.level;
    let mut fields = Vec::new();
    let mut reports = Vec::new();
    for (j, (name, pp)) in groups.names.iter().zip(&groups.patterns).enumerate() {
        let field = match k.intensity {
            EnvelopeIntensity::Homogeneous => IntensityField::constant(set.grid.clone(), pp.len() as f64 / set.window.area())?,
            _ => kernel_field(pp, k, &set.grid)?,
        };
        let lam = pattern_intensity(pp, &field, k.intensity)?
            .ok_or_else(|| Error::Degenerate(format!("group `{name}` has too few points for K")))?;
        let khat = k_inhom(pp, &lam, &radii)?;
        let env = poisson_envelope(&field, &set.window, k.n_sim, &radii, k.level, sub_seed(ctx.seed, j as u64), k.intensity)?;
        let test = csr_test(&khat, &env.curves, &radii)?;
        let res = KResult::new(KKind::Univariate, khat, &env)?;
        let v = verdict(&test, &res, alpha, false);
        ctx.write(&format!("k_{name}.csv"), &res.to_csv())?;
        ctx.write(&format!("k_{name}.svg"), &res.to_svg(&format!("Inhomogeneous K: {name}")))?;
        ctx.write_grid(&format!("intensity_{name}.asc"), &set.grid, &field.values)?;
        reports.push(k_report(name, &[pp.len()], &res, &test, v));
        fields.push((field, lam));
    }
    let mut cross = serde_json::Value::Null;
    if groups.patterns.len() == 2 {
        let (p1, p2) = (&groups.patterns[0], &groups.patterns[1]);
        let khat = cross_k_inhom(p1, p2, &fields[0].1, &fields[1].1, &radii)?;
        let env = cross_poisson_envelope(
            &fields[0].0,
            &fields[1].0,
            &set.window,
            k.n_sim,
            &radii,
            k.level,
            sub_seed(ctx.seed, 10),
            k.intensity,
        )?;
        let test = csr_test(&khat, &env.curves, &radii)?;
        let res = KResult::new(KKind::Cross, khat, &env)?;
        let v = verdict(&test, &res, alpha, true);
        ctx.write("cross_k.csv", &res.to_csv())?;
        ctx.write(
            "cross_k.svg",
            &res.to_svg(&format!("Inhomogeneous cross-K: {} / {}", groups.names[0], groups.names[1])),
        )?;
        cross = k_report("cross", &[p1.len(), p2.len()], &res, &test, v);
        if v == "repulsion" {
            cross["suggested_sign"] = json!("-1");
        } else if v == "attraction" {
            cross["suggested_sign"] = json!("+1");
        }
    }
    ctx.write_json(
        "diagnose.json",
        &json!({ "level": k.level, "groups": reports, "cross": cross, "notes": groups.notes }),
    )
}

fn cmd_simulate(cfg: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let set = load_setting(cfg, ctx)?;
    let spec = cfg.simulate.as_ref().expect("validated");
    let stack = build_stack(&cfg.covariates, &set, ctx)?;
    let design = design_matrix(&stack);
    let model = LgcpModel {
        design: design.clone(),
        beta: spec.beta.clone(),
        covariance: spec.covariance,
        window: set.window.clone(),
    };
    model.validate()?;
    let draw = LgcpSimulator::new(&model)?.sample(sub_seed(ctx.seed, 0))?;
    let mut table = EventTable::default();
    for (j, pp) in draw.patterns.iter().enumerate() {
        table.rows.extend(EventTable::from_pattern(pp, set.projection.as_ref(), &(j + 1).to_string()).rows);
    }
    for (i, r) in table.rows.iter_mut().enumerate() {
        r.id = (i + 1).to_string();
    }
    let mut csv = String::from("id,lon,lat,group,specificity\n");
    for r in &table.rows {
        csv.push_str(&format!("{},{},{},{},{}\n", r.id, r.lon, r.lat, r.group, r.specificity));
    }
    ctx.write("events.csv", &csv)?;
    let field_names: Vec<String> = match spec.covariance {
        Covariance::Univariate(_) => vec!["field.asc".into()],
        Covariance::Bivariate(_) => vec!["field_1.asc".into(), "field_2.asc".into(), "field_W.asc".into()],
    };
    for (name, f) in field_names.iter().zip(&draw.fields) {
        ctx.write_grid(name, &set.grid, &f.values)?;
    }
    for (j, f) in draw.intensities.iter().enumerate() {
        let name = if draw.intensities.len() == 1 { "intensity.asc".to_string() } else { format!("intensity_{}.asc", j + 1) };
        ctx.write_grid(&name, &set.grid, &f.values)?;
    }
    let expected: Vec<f64> = mean_intensity(&model)?.iter().map(IntensityField::integral).collect();
    let mut lattice = Vec::new();
    if !spec.lattice.is_empty() {
        let mut pats = Vec::new();
        for (i, p) in spec.lattice.iter().enumerate() {
            let m = LgcpModel::univariate(design.clone(), spec.beta[0].clone(), *p, set.window.clone())?;
            let d = LgcpSimulator::new(&m)?.sample(sub_seed(ctx.seed, 1000 + i as u64))?;
            lattice.push(json!({ "sigma": p.sigma, "phi": p.phi, "n": d.patterns[0].len() }));
            pats.push((format!("sigma = {}, phi = {}", p.sigma, p.phi), d.patterns[0].clone()));
        }
        let refs: Vec<(&str, &PointPattern)> = pats.iter().map(|(t, p)| (t.as_str(), p)).collect();
        ctx.write("panel.svg", &point_panel(&refs, 2))?;
    }
    ctx.write_json(
        "simulate.json",
        &json!({
            "counts": draw.patterns.iter().map(PointPattern::len).collect::<Vec<_>>(),
            "expected_counts": expected,
            "lattice": lattice,
        }),
    )
}

fn mcmc_config(spec: &FitSpec, seed: u64, bivariate: bool) -> McmcConfig {
    let mut c = match (spec.preset, bivariate) {
        (Preset::Desk, _) => McmcConfig::desk(seed),
        (Preset::Long, false) => McmcConfig::long_univariate(seed),
        (Preset::Long, true) => McmcConfig::long_bivariate(seed),
    };
    if let Some(v) = spec.burn_in {
        c.burn_in = v;
    }
    if let Some(v) = spec.thin {
        c.thin = v;
    }
    if let Some(v) = spec.n_samples {
        c.n_samples = v;
    }
    if let Some(p) = &spec.prior {
        c.prior = p.clone();
    }
    if let Some(v) = spec.torus_expansion {
        c.torus_expansion = v;
    }
    if let Some(m) = &spec.mcm {
        c.mcm = m.clone();
    }
    c
}

fn trace_svg(post: &PosteriorSamples) -> String {
    let x: Vec<f64> = (0..post.n_draws()).map(|d| d as f64).collect();
    let mut plots = Vec::new();
    for (k, c) in post.components.iter().enumerate() {
        let s: Vec<f64> = post.sigma.iter().map(|d| d[k]).collect();
        let p: Vec<f64> = post.phi.iter().map(|d| d[k]).collect();
        plots.push(LinePlot::new(&format!("sigma ({c})"), "draw", "sigma").line("sigma", &x, &s, "black", false));
        plots.push(LinePlot::new(&format!("phi ({c})"), "draw", "phi").line("phi", &x, &p, "black", false));
    }
    panel(&plots, 2)
}

fn cmd_fit(cfg: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let set = load_setting(cfg, ctx)?;
    let groups = load_groups(cfg.events.as_ref().expect("validated"), &set, ctx)?;
    let stack = build_stack(&cfg.covariates, &set, ctx)?;
    let spec = cfg.fit.clone().unwrap_or_default();
    let bivariate = groups.patterns.len() == 2;
    let mcmc = mcmc_config(&spec, sub_seed(ctx.seed, 0), bivariate);
    let mut post = if bivariate {
        let sign = spec
            .sign
            .ok_or_else(|| Error::Config("fit.sign (\"+1\" or \"-1\") is required for two groups".into()))?;
        fit_bivariate(&groups.patterns[0], &groups.patterns[1], &stack, sign, &mcmc)?
    } else {
        fit_univariate(&groups.patterns[0], &stack, &mcmc)?
    };
    post.warnings.splice(0..0, groups.notes.iter().cloned());
    ctx.write("posterior.csv", &post.to_csv())?;
    ctx.write("posterior.json", &serde_json::to_string(&post)?)?;
    let mut summary = serde_json::to_value(post.summary())?;
    summary["groups"] = json!(groups.names);
    summary["mcmc"] = serde_json::to_value(&mcmc)?;
    ctx.write_json("summary.json", &summary)?;
    for (k, c) in post.components.iter().enumerate() {
        ctx.write_grid(&format!("field_mean_{c}.asc"), &set.grid, &post.field_mean[k])?;
        ctx.write_grid(&format!("field_sd_{c}.asc"), &set.grid, &post.field_sd[k])?;
    }
    ctx.write("trace.svg", &trace_svg(&post))
}

fn read_posterior(path: &Path) -> Result<PosteriorSamples> {
    PosteriorSamples::read_json(path)
}

fn design_for(post: &PosteriorSamples, spec: &CovariateSpec, set: &Setting, ctx: &Ctx) -> Result<DesignMatrix> {
    let design = design_matrix(&build_stack(spec, set, ctx)?);
    if !post.grid.same_as(&design.grid) {
        return Err(Error::GridMismatch("posterior grid differs from the configured grid".into()));
    }
    if design.names != post.covariates {
        return Err(Error::Config(format!(
            "posterior covariates {:?} do not match the configured covariates {:?}",
            post.covariates, design.names
        )));
    }
    Ok(design)
}

fn cmd_report(cfg: &RunConfig, ctx: &mut Ctx) -> Result<()> {
    let set = load_setting(cfg, ctx)?;
    let spec = cfg.report.as_ref().expect("validated");
    let post = read_posterior(&ctx.path(&spec.posterior))?;
    let design = design_for(&post, &cfg.covariates, &set, ctx)?;
    let max_phi = (0..post.components.len())
        .map(|k| {
            let mut v: Vec<f64> = post.phi.iter().map(|d| d[k]).collect();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        })
        .fold(0.0, f64::max);
    let hmax = spec.max_distance.unwrap_or(3.0 * max_phi);
    let distances: Vec<f64> = (0..101).map(|i| hmax * i as f64 / 100.0).collect();
    let curves = posterior_correlation_curves(&post, &distances)?;
    ctx.write("correlation.csv", &curves.to_csv())?;
    let plots: Vec<LinePlot> = curves
        .curves
        .iter()
        .map(|c| {
            LinePlot::new(&format!("Correlation of log-intensity ({})", c.name), "distance", "correlation")
                .band(&distances, &c.lower, &c.upper, "#9e9e9e")
                .line("posterior median", &distances, &c.median, "black", false)
        })
        .collect();
    ctx.write("correlation.svg", &panel(&plots, plots.len().min(3)))?;
    let mut summary = json!({ "n_draws": post.n_draws(), "max_distance": hmax });
    if let Some(cmp) = &spec.compare {
        let other = read_posterior(&ctx.path(&cmp.posterior))?;
        let other_design = design_for(&other, cmp.covariates.as_ref().unwrap_or(&cfg.covariates), &set, ctx)?;
        if spec.process == 0 {
            return Err(Error::Config("report.process is 1-based".into()));
        }
        let map = intensity_ratio_map(&post, &design, &other, &other_design, spec.process - 1, spec.n_sim, sub_seed(ctx.seed, 0))?;
        ctx.write_grid("ratio_median.asc", &set.grid, &map.median)?;
        ctx.write_grid("ratio_flags.asc", &set.grid, &map.flag_codes())?;
        ctx.write("ratio.svg", &grid_map(&set.grid, &map.median, Some(&map.flags), "Median intensity ratio", true))?;
        summary["ratio"] = json!({ "n_sim": map.n_sim, "cells_plus": map.n_plus(), "cells_cross": map.n_cross() });
    }
    if spec.cross_k && matches!(post.model, ModelKind::Bivariate { .. }) {
        if let Some(ev) = &cfg.events {
            let groups = load_groups(ev, &set, ctx)?;
            if groups.patterns.len() == 2 {
                let radii = radii_for(&cfg.k, &set.window);
                let res = fitted_cross_k(
                    &post,
                    &design,
                    &groups.patterns[0],
                    &groups.patterns[1],
                    spec.n_sim.max(2),
                    &radii,
                    cfg.k.level,
                    sub_seed(ctx.seed, 1),
                )?;
                ctx.write("fitted_cross_k.csv", &res.to_csv())?;
                ctx.write("fitted_cross_k.svg", &res.to_svg("Cross-K against the fitted model"))?;
                let inside = res.above().iter().zip(res.below()).filter(|(a, b)| !**a && !*b).count();
                summary["fitted_cross_k"] = json!({ "radii": res.radii.len(), "radii_inside": inside });
            }
        }
    }
    ctx.write_json("report.json", &summary)
}

/// Runs `cmd` with the config at `config_path`. `seed` and `out` override
/// the config's values; relative `out` from the command line is taken
/// relative to the working directory.
pub fn run(cmd: Command, config_path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<RunOutput> {
    let text = std::fs::read_to_string(config_path).map_err(|e| Error::io(config_path, e))?;
    let cfg = RunConfig::parse(&text)?;
    let base = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.validate(&base, cmd)?;
    let seed = seed
        .or(cfg.seed)
        .ok_or_else(|| Error::Config("a seed is required: set `seed` in the config or pass --seed".into()))?;
    let out = match (out, &cfg.out) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => base.join(o),
        (None, None) => base.join(format!("ppkit-{}", cmd.name())),
    };
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut ctx = Ctx {
        base,
        out: out.clone(),
        seed,
        files: Vec::new(),
    };
    ctx.write("config.json", &text)?;
    ctx.write_json("run.json", &json!({ "command": cmd, "seed": seed }))?;
    match cmd {
        Command::Diagnose => cmd_diagnose(&cfg, &mut ctx)?,
        Command::Simulate => cmd_simulate(&cfg, &mut ctx)?,
        Command::Fit => cmd_fit(&cfg, &mut ctx)?,
        Command::Report => cmd_report(&cfg, &mut ctx)?,
    }
    Ok(RunOutput {
        command: cmd,
        out,
        files: ctx.files,
    })
}

/// Machine-readable error document written to stderr by the binary.
pub fn error_json(e: &Error) -> String {
    json!({ "error": { "kind": e.kind(), "message": e.to_string() } }).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let cfg = RunConfig::parse(r#"{"window": {"rectangle": [0, 0, 10, 10]}, "grid": {"nx": 8, "ny": 8}}"#).unwrap();
        assert_eq!(cfg.k, KSettings::default());
        assert!(cfg.events.is_none());
        assert!(cfg.validate(Path::new("."), Command::Simulate).is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let e = RunConfig::parse(r#"{"window": {"rectangle": [0, 0, 1, 1]}, "grid": {"nx": 2, "ny": 2}, "sede": 3}"#).unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("sede")));
    }

    #[test]
    fn missing_inputs_are_named() {
        let cfg = RunConfig::parse(
            r#"{"window": {"rectangle": [0, 0, 1, 1]}, "grid": {"cell": 0.5}, "events": {"path": "nope.csv"}}"#,
        )
        .unwrap();
        let e = cfg.validate(Path::new("/nonexistent"), Command::Diagnose).unwrap_err();
        assert!(e.to_string().contains("nope.csv"));
    }

    #[test]
    fn grid_settings_are_exclusive() {
        let w = Window::rectangle(0.0, 0.0, 4.0, 4.0).unwrap();
        assert!(GridSettings { nx: Some(4), ny: Some(4), cell: Some(1.0) }.build(&w).is_err());
        assert_eq!(GridSettings { cell: Some(1.0), ..Default::default() }.build(&w).unwrap().nx, 4);
    }

    #[test]
    fn sub_seeds_differ() {
        assert_ne!(sub_seed(1, 0), sub_seed(1, 1));
        assert_eq!(sub_seed(7, 3), sub_seed(7, 3));
    }

    #[test]
    fn fit_overrides_apply() {
        let spec = FitSpec {
            preset: Preset::Long,
            thin: Some(7),
            ..Default::default()
        };
        let c = mcmc_config(&spec, 1, true);
        assert_eq!((c.burn_in, c.thin), (1_000_000, 7));
    }
}
