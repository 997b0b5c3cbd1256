//! The four experiment pipelines and their output files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;
use serde_json::json;

use crate::branch::{check_envelopes, fit_branch_scalings, BranchSolver, EnvelopeRates, EnvelopeReport};
use crate::config::RunConfig;
use crate::dynamics::{
    clean_window, evolve_nls, extract_asymptotics, BranchPath, EvolverConfig, LinearizedFlow, NlsProblem,
};
use crate::error::{Error, Result};
use crate::grid::{RadialField, RadialGrid};
use crate::hamiltonian::{build_spectral, project_continuous, tune_well_depth, Potential, SpectralData};
use crate::modulation::Modulator;
use crate::nonlinearity::{check_h2, H2Report, NonlinearitySpec};
use crate::probes::{
    fit_decay_exponent, growth_trend, jss_probe, omega_decay_probe, predicted_for, wave_operator_probe, CaseLabel,
    DecayModel, Evolution, JssConfig, OmegaProbeConfig, ProbeKind, ProbeReport, TimeAxis, WaveOperatorConfig,
};
use crate::sampling::{random_smooth_field, substream};
use crate::snapshot::Snapshot;

/// Grid, potential and spectral data shared by the pipelines.
pub struct Context {
    pub config: RunConfig,
    pub grid: Arc<RadialGrid>,
    pub potential: Potential,
    pub spectral: SpectralData,
    pub spec: NonlinearitySpec,
    pub manifest: String,
}

impl Context {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let grid = RadialGrid::new(config.grid.n, config.grid.radius)?;
        let depth = match config.potential.depth {
            Some(d) => d,
            None => tune_well_depth(config.potential.shape, &grid)?.depth,
        };
        let potential = Potential::new(config.potential.shape, depth);
        let spectral = build_spectral(&potential.sample(&grid), &grid)?;
        let nl = config.nonlinearity;
        let spec = NonlinearitySpec::new(nl.alpha1, nl.alpha2, nl.lambda1, nl.lambda2)?;
        let manifest = config.manifest_hash();
        Ok(Context { config, grid, potential, spectral, spec, manifest })
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.out
    }
}

/// One pass/fail invariant of a pipeline.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check { name: name.into(), passed, detail }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Outcome {
    pub pipeline: String,
    pub files: Vec<PathBuf>,
    pub checks: Vec<Check>,
}

impl Outcome {
    fn new(pipeline: &str) -> Self {
        Outcome { pipeline: pipeline.into(), ..Default::default() }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        if !passed {
            log::warn!("{}: check {name} failed: {detail}", self.pipeline);
        }
        self.checks.push(Check::new(name, passed, detail));
    }
}

fn fmt(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e6).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn write_csv(path: &Path, manifest: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "# manifest_sha256={manifest}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(|e| Error::Config(format!("csv: {e}")))?;
    for row in rows {
        w.write_record(row.iter().map(|v| fmt(*v))).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, manifest: &str, body: serde_json::Value) -> Result<()> {
    let mut doc = json!({ "manifest_sha256": manifest });
    if let (Some(d), serde_json::Value::Object(b)) = (doc.as_object_mut(), body) {
        d.extend(b);
    }
    fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Write the resolved configuration and its hash.
pub fn write_manifest(ctx: &Context) -> Result<PathBuf> {
    prepare_dir(ctx.out_dir())?;
    let path = ctx.out_dir().join("manifest.json");
    let config: serde_json::Value = serde_json::from_str(&ctx.config.canonical_json())?;
    write_json(
        &path,
        &ctx.manifest,
        json!({ "seed": ctx.config.seed, "tuned_depth": ctx.potential.depth, "ground_energy": ctx.spectral.ground_energy(), "config": config }),
    )?;
    Ok(path)
}

/// E - E_0 ~ lambda1 |a|^{1+alpha1} integral psi_0^{3+alpha1}.
pub fn leading_energy_coefficient(spectral: &SpectralData, spec: &NonlinearitySpec) -> f64 {
    let vals: Vec<f64> =
        spectral.ground_state().point_values().iter().map(|z| z.norm().powf(3.0 + spec.alpha1)).collect();
    spec.lambda1 * spectral.grid().integrate(&vals)
}

pub fn run_branch(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.config.branch;
    let dir = ctx.out_dir();
    prepare_dir(dir)?;
    let mut out = Outcome::new("branch");
    let solver = BranchSolver::new(&ctx.spectral, ctx.spec);
    let profiles = solver.sample(cfg.a_min, cfg.a_max, cfg.count)?;
    let measure = 4.0 * std::f64::consts::PI * ctx.grid.dr();
    let rows: Vec<Vec<f64>> = profiles
        .iter()
        .map(|p| {
            let h = (p.h.iter().map(|x| x * x).sum::<f64>() * measure).sqrt();
            vec![p.rho, p.energy, p.energy_shift, h, p.d_energy, p.residual, p.contraction, p.iterations as f64]
        })
        .collect();
    let csv_path = dir.join("branch.csv");
    write_csv(
        &csv_path,
        &ctx.manifest,
        &["a", "energy", "energy_shift", "h_l2", "d_energy", "residual", "contraction", "iterations"],
        &rows,
    )?;
    out.files.push(csv_path);

    let scalings = fit_branch_scalings(&profiles, &ctx.spec, measure)?;
    let coefficient = leading_energy_coefficient(&ctx.spectral, &ctx.spec);
    let first = &profiles[0];
    let measured = first.energy_shift / first.rho.powf(1.0 + ctx.spec.alpha1);
    let rel = (measured - coefficient).abs() / coefficient.abs();
    let worst_residual = profiles.iter().map(|p| p.residual).fold(0.0, f64::max);
    let validity = solver.validity_radius(cfg.a_max, 1.5, 30);

    out.check("residual", worst_residual <= 1e-8, format!("max residual {}", fmt(worst_residual)));
    let de = (scalings.energy_exponent - scalings.expected_energy_exponent).abs();
    out.check(
        "energy_exponent",
        de <= 0.1,
        format!("{} vs {}", scalings.energy_exponent, scalings.expected_energy_exponent),
    );
    let dh = (scalings.correction_exponent - scalings.expected_correction_exponent).abs();
    out.check(
        "correction_exponent",
        dh <= 0.15,
        format!("{} vs {}", scalings.correction_exponent, scalings.expected_correction_exponent),
    );
    out.check("leading_coefficient", rel <= 0.05, format!("{measured} vs quadrature {coefficient}"));

    let json_path = dir.join("scalings.json");
    write_json(
        &json_path,
        &ctx.manifest,
        json!({
            "scalings": scalings,
            "ground_energy": ctx.spectral.ground_energy(),
            "leading_coefficient": { "amplitude": first.rho, "measured": measured, "quadrature": coefficient, "relative_error": rel },
            "validity_radius": validity,
            "checks": out.checks,
        }),
    )?;
    out.files.push(json_path);
    Ok(out)
}

/// Initial data psi_E(a) + eps v with v a seeded P_c-projected field.
pub fn evolve_initial_data(ctx: &Context, solver: &BranchSolver<'_>) -> Result<RadialField> {
    let e = &ctx.config.evolve;
    let point = solver.solve_point(Complex64::new(e.amplitude, 0.0), None)?;
    let mut u0 = point.psi;
    if e.perturbation > 0.0 {
        let mut rng = substream(ctx.config.seed, "evolve");
        let v = project_continuous(&random_smooth_field(&ctx.grid, &mut rng), &ctx.spectral);
        u0.axpy(Complex64::new(e.perturbation / v.norm(), 0.0), &v);
    }
    Ok(u0)
}

pub fn run_evolve(ctx: &Context) -> Result<Outcome> {
    let e = &ctx.config.evolve;
    let dir = ctx.out_dir();
    prepare_dir(dir)?;
    let mut out = Outcome::new("evolve");
    let solver = BranchSolver::new(&ctx.spectral, ctx.spec);
    let u0 = evolve_initial_data(ctx, &solver)?;
    let modulator = Modulator::new(BranchSolver::new(&ctx.spectral, ctx.spec));
    let problem = NlsProblem { grid: &ctx.grid, potential: ctx.spectral.potential(), spec: ctx.spec };
    let config = EvolverConfig {
        dt: e.dt,
        t_final: e.t_final,
        absorber: e.absorber,
        record_stride: e.record_stride,
        decompose_each_record: e.decompose,
        snapshot_times: e.snapshot_times.clone(),
    };
    let mut rec = evolve_nls(&u0, &problem, &config, e.decompose.then_some(&modulator))?;
    let window = e.window.unwrap_or_else(|| clean_window(&rec, ctx.grid.radius()));
    let asymptotics = if e.decompose {
        extract_asymptotics(&mut rec, window).map_err(|err| err.to_string())
    } else {
        Err("decomposition off".into())
    };
    if rec.theta.is_empty() {
        rec.theta = vec![f64::NAN; rec.times.len()];
    }

    let rows: Vec<Vec<f64>> = (0..rec.times.len())
        .map(|k| {
            vec![
                rec.times[k],
                rec.a[k].re,
                rec.a[k].im,
                rec.energy[k],
                rec.eta_l2[k],
                rec.eta_p1[k],
                rec.eta_p2[k],
                rec.beta[k][0],
                rec.beta[k][1],
                rec.theta[k],
                rec.mass[k],
                rec.hamiltonian[k],
            ]
        })
        .collect();
    let csv_path = dir.join("trajectory.csv");
    write_csv(
        &csv_path,
        &ctx.manifest,
        &[
            "t",
            "re_a",
            "im_a",
            "energy",
            "eta_l2",
            "eta_p1",
            "eta_p2",
            "beta1",
            "beta2",
            "theta",
            "mass",
            "hamiltonian",
        ],
        &rows,
    )?;
    out.files.push(csv_path);

    if !rec.snapshots.is_empty() {
        let snap_dir = dir.join("snapshots");
        prepare_dir(&snap_dir)?;
        for (t, field) in &rec.snapshots {
            let stem = format!("t{t:09.3}");
            Snapshot::new(field, *t, &ctx.manifest).write(&snap_dir, &stem)?;
        }
        out.files.push(snap_dir);
    }

    let mass0 = rec.mass[0];
    let mass_drift = rec.mass.iter().map(|m| (m / mass0 - 1.0).abs()).fold(0.0, f64::max);
    if !e.absorber.is_on() {
        out.check("mass_conservation", mass_drift <= 1e-8, format!("max relative drift {}", fmt(mass_drift)));
    }
    let predicted = predicted_for(&ctx.spec);
    let mut fits = serde_json::Map::new();
    if e.decompose {
        let worst_pairing = rec.pairing_max.iter().copied().filter(|x| x.is_finite()).fold(0.0, f64::max);
        out.check("orthogonality", worst_pairing <= 1e-8, format!("max pairing {}", fmt(worst_pairing)));
        out.check("decomposition_gaps", rec.gaps.is_empty(), format!("{} gaps", rec.gaps.len()));
        if e.perturbation == 0.0 {
            let worst = rec.eta_l2.iter().copied().fold(0.0, f64::max);
            out.check("invariant_orbit", worst <= 1e-6, format!("max ||eta||_2 {}", fmt(worst)));
        } else {
            let model = if predicted.log_correction { DecayModel::PowerLog } else { DecayModel::Power };
            let f1 = fit_decay_exponent(&rec.times, &rec.eta_p1, window, DecayModel::Power, TimeAxis::OnePlusT)
                .map(|f| f.with_prediction(predicted.exp_p1, predicted.case));
            let f2 = fit_decay_exponent(&rec.times, &rec.eta_p2, window, model, TimeAxis::OnePlusT)
                .map(|f| f.with_prediction(predicted.exp_p2, predicted.case));
            let l2_trend = growth_trend(&rec.times, &rec.eta_l2, window);
            let tol = if predicted.case == CaseLabel::III { 0.2 } else { 0.15 };
            match &f2 {
                Ok(f) => out.check(
                    "p2_exponent",
                    f.accepted && (f.exponent - predicted.exp_p2).abs() <= tol,
                    format!("measured {} (r2 {}) vs predicted {}", f.exponent, f.r_squared, predicted.exp_p2),
                ),
                Err(err) => out.check("p2_exponent", false, err.to_string()),
            }
            fits.insert("p1".into(), serde_json::to_value(f1.map_err(|e| e.to_string()))?);
            fits.insert("p2".into(), serde_json::to_value(f2.map_err(|e| e.to_string()))?);
            fits.insert("eta_l2_trend".into(), json!(l2_trend));
        }
        if let Ok(a) = &asymptotics {
            out.check("energy_settling", a.energy_settling, format!("E_inf = {}", a.e_inf));
        }
    }
    let json_path = dir.join("decay_fits.json");
    write_json(
        &json_path,
        &ctx.manifest,
        json!({
            "window": window,
            "predicted": predicted,
            "fits": fits,
            "asymptotics": serde_json::to_value(&asymptotics)?,
            "gaps": rec.gaps.iter().map(|&k| rec.times[k]).collect::<Vec<f64>>(),
            "mass_drift": mass_drift,
            "checks": out.checks,
        }),
    )?;
    out.files.push(json_path);
    Ok(out)
}

fn probe_times(cfg: &crate::config::ProbeSection) -> Vec<f64> {
    let steps = (cfg.t_final / cfg.spacing).round() as usize;
    (1..=steps).map(|k| k as f64 * cfg.spacing).collect()
}

pub fn run_linprobe(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.config.probes;
    let dir = ctx.out_dir();
    prepare_dir(dir)?;
    let mut out = Outcome::new("linprobe");
    let solver = BranchSolver::new(&ctx.spectral, ctx.spec);
    let off = BranchSolver::new(&ctx.spectral, NonlinearitySpec::zero());
    let point = solver.solve_point(Complex64::new(cfg.amplitude, 0.0), None)?;
    let path = BranchPath::Rotating { a0: point.a, energy: point.energy };
    let times = probe_times(cfg);

    let mut reports: Vec<(String, ProbeReport)> = Vec::new();
    for (k, kind) in cfg.kinds.iter().enumerate() {
        let absorber = if kind.target_decay().is_some() { cfg.absorber } else { crate::dynamics::Absorber::Off };
        let probe_cfg = OmegaProbeConfig {
            kind: *kind,
            samples: cfg.samples,
            start: 0.0,
            times: times.clone(),
            window: cfg.window,
        };
        let label = format!("probe-{k}");
        let flow = LinearizedFlow::new(&ctx.spectral, &solver, path.clone(), cfg.dt)?.with_absorber(absorber);
        let mut rng = substream(ctx.config.seed, &label);
        let report = omega_decay_probe(&Evolution::Linearized(&flow), &ctx.spectral, &probe_cfg, &mut rng)?;
        check_probe(&mut out, kind, &report, "");
        if cfg.control {
            let control_flow =
                LinearizedFlow::new(&ctx.spectral, &off, BranchPath::Frozen(Complex64::new(0.0, 0.0)), cfg.dt)?
                    .with_absorber(absorber);
            let mut rng = substream(ctx.config.seed, &label);
            let control =
                omega_decay_probe(&Evolution::Linearized(&control_flow), &ctx.spectral, &probe_cfg, &mut rng)?;
            let bare = if absorber.is_on() {
                Evolution::BareAbsorbed { spectral: &ctx.spectral, absorber, dt: cfg.dt }
            } else {
                Evolution::Bare(&ctx.spectral)
            };
            let mut rng = substream(ctx.config.seed, &label);
            let bare_report = omega_decay_probe(&bare, &ctx.spectral, &probe_cfg, &mut rng)?;
            let agree = match (&control.fit, &bare_report.fit) {
                (Some(a), Some(b)) => (a.exponent - b.exponent).abs() <= 0.02 * b.exponent.abs(),
                _ => control.constants.iter().zip(&bare_report.constants).all(|(a, b)| (a - b).abs() <= 0.02 * b.abs()),
            };
            out.check(&format!("{}_control", kind.name()), agree, "g-off flow against exp(-iHt)".into());
            reports.push((format!("{}_control", kind.name()), control));
        }
        reports.push((kind.name().to_string(), report));
    }

    let mut header = vec!["t".to_string()];
    header.extend(reports.iter().map(|(n, _)| n.clone()));
    let rows: Vec<Vec<f64>> = (0..times.len())
        .map(|i| std::iter::once(times[i]).chain(reports.iter().map(|(_, r)| r.constants[i])).collect())
        .collect();
    let csv_path = dir.join("omega_decay.csv");
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&csv_path, &ctx.manifest, &header_refs, &rows)?;
    out.files.push(csv_path);

    let json_path = dir.join("probe_report.json");
    let reports_json: serde_json::Map<String, serde_json::Value> =
        reports.iter().map(|(n, r)| Ok((n.clone(), serde_json::to_value(r)?))).collect::<Result<_>>()?;
    write_json(
        &json_path,
        &ctx.manifest,
        json!({ "amplitude": cfg.amplitude, "energy": point.energy, "reports": reports_json, "checks": out.checks }),
    )?;
    out.files.push(json_path);
    Ok(out)
}

fn check_probe(out: &mut Outcome, kind: &ProbeKind, report: &ProbeReport, suffix: &str) {
    let name = format!("{}{suffix}", kind.name());
    match (kind.target_decay(), &report.fit, report.trend) {
        (Some((target, _)), Some(fit), _) => {
            let tol = match kind {
                ProbeKind::Weighted { .. } => 0.2,
                _ => 0.15,
            };
            out.check(
                &name,
                fit.accepted && (fit.exponent - target).abs() <= tol,
                format!("exponent {} (r2 {}) vs {target}", fit.exponent, fit.r_squared),
            );
        }
        (None, _, Some(slope)) => out.check(&name, slope.abs() < 0.1, format!("log-log trend {slope}")),
        _ => out.check(&name, false, "no fit".into()),
    }
}

pub fn run_appendix(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.config.probes;
    let dir = ctx.out_dir();
    prepare_dir(dir)?;
    let mut out = Outcome::new("appendix");
    let solver = BranchSolver::new(&ctx.spectral, ctx.spec);
    let point = solver.solve_point(Complex64::new(cfg.amplitude, 0.0), None)?;
    let multiplier: Vec<f64> = point.psi.point_values().iter().map(|z| ctx.spec.d1(z.norm())).collect();

    let mut rng = substream(ctx.config.seed, "jss");
    let jss_cfg = JssConfig {
        t_max: cfg.jss_t_max,
        exponents: cfg.jss_exponents.clone(),
        samples: cfg.jss_samples,
        ..Default::default()
    };
    let jss = jss_probe(&multiplier, &ctx.spectral, &jss_cfg, &mut rng)?;
    out.check("jss", jss.passed(), format!("{} violations", jss.violations));
    let mut rng = substream(ctx.config.seed, "wave");
    let wave_cfg = WaveOperatorConfig {
        t_max: cfg.jss_t_max,
        p: cfg.wave_exponent,
        samples: cfg.wave_samples,
        ..Default::default()
    };
    let wave = wave_operator_probe(&ctx.spectral, &wave_cfg, &mut rng)?;
    out.check("wave_operator", wave.passed(), format!("{} violations", wave.violations));
    let json_path = dir.join("jss_report.json");
    write_json(&json_path, &ctx.manifest, json!({ "jss": jss, "wave_operator": wave }))?;
    out.files.push(json_path);

    let rates = EnvelopeRates { upper: cfg.envelope_rate, ..Default::default() };
    let envelope: EnvelopeReport = check_envelopes(&point.profile, &ctx.spectral, &ctx.potential, &ctx.spec, &rates);
    out.check("envelopes", envelope.holds(), format!("upper margin {}", envelope.upper.min_margin));
    let json_path = dir.join("envelope_report.json");
    write_json(&json_path, &ctx.manifest, json!({ "rates": rates, "report": envelope }))?;
    out.files.push(json_path);

    let mut h2: Vec<(String, H2Report)> = Vec::new();
    let profile_field = RadialField::from_real(&ctx.grid, &point.profile.psi)?;
    h2.push(("configured".into(), check_h2(&profile_field, &ctx.spec)?));
    for &alpha in &cfg.h2_alphas {
        let spec = NonlinearitySpec::single(alpha, ctx.spec.lambda1)?;
        let s = BranchSolver::new(&ctx.spectral, spec);
        let p = s.solve_profile(cfg.amplitude, None)?;
        let field = RadialField::from_real(&ctx.grid, &p.psi)?;
        h2.push((format!("alpha1={alpha}"), check_h2(&field, &spec)?));
    }
    for (name, r) in &h2 {
        out.check(&format!("h2_{name}"), r.finite, format!("derivative tail {:?}", r.derivative.tail_exponent));
    }
    let json_path = dir.join("h2_report.json");
    let h2_json: serde_json::Map<String, serde_json::Value> =
        h2.iter().map(|(n, r)| Ok((n.clone(), serde_json::to_value(r)?))).collect::<Result<_>>()?;
    write_json(
        &json_path,
        &ctx.manifest,
        json!({ "amplitude": cfg.amplitude, "reports": h2_json, "checks": out.checks }),
    )?;
    out.files.push(json_path);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pipeline {
    Branch,
    Evolve,
    Linprobe,
    Appendix,
    All,
}

/// Run the selected pipeline(s) and write the manifest.
pub fn run(ctx: &Context, which: Pipeline) -> Result<Vec<Outcome>> {
    write_manifest(ctx)?;
    let mut outcomes = Vec::new();
    if matches!(which, Pipeline::Branch | Pipeline::All) {
        outcomes.push(run_branch(ctx)?);
    }
    if matches!(which, Pipeline::Evolve | Pipeline::All) {
        outcomes.push(run_evolve(ctx)?);
    }
    if matches!(which, Pipeline::Linprobe | Pipeline::All) {
        outcomes.push(run_linprobe(ctx)?);
    }
    if matches!(which, Pipeline::Appendix | Pipeline::All) {
        outcomes.push(run_appendix(ctx)?);
    }
    Ok(outcomes)
}
