//! Pipeline stages and analyses. Seeds run one after another in list order;
//! the parallelism lives inside the core estimators, so outputs do not
//! depend on the thread count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use chrono::Utc;
use difflab_core::appendix::{hellinger_diffraction_bound, slln_trace, truncated_slln_trace, HellingerBoundTrace};
use difflab_core::io::{self, fmt_f64};
use difflab_core::perturb::{characteristic_function, stationary_cp_field, FieldSampler};
use difflab_core::recover::{recover_spectrum, structure_factor_with, verify_structure_relation, Membership};
use difflab_core::special::ball_volume;
use difflab_core::spectral::{
    autocorrelation, boundary_escape_fraction, fourier_sum, gamma_xi_lambda_indexed, mu_lambda_weights, strungaru_statistic,
    PairIndex,
};
use difflab_core::stats::mean_estimate;
use difflab_core::{
    Correlation, Distribution, FrequencySet, GaussianBump, GeneratorSpec, PerturbationModel, PerturbedPointSet, PointCap,
    PointSet, SpectralEstimate,
};
use num_complex::Complex64;

use crate::config::{Analysis, ExperimentConfig};
use crate::manifest::{Check, RunManifest, SeedStatus};
use crate::plot;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Perturb,
    Spectrum,
    Recover,
    Verify,
    Appendix,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Perturb => "perturb",
            Stage::Spectrum => "spectrum",
            Stage::Recover => "recover",
            Stage::Verify => "verify",
            Stage::Appendix => "appendix",
        }
    }

    /// Analyses the stage executes: `spectrum` and `recover` run their own
    /// analysis whatever the config lists, the others filter the list.
    fn analyses(self, configured: &[Analysis]) -> Vec<Analysis> {
        match self {
            Stage::Generate | Stage::Perturb => Vec::new(),
            Stage::Spectrum => vec![Analysis::Spectrum],
            Stage::Recover => vec![Analysis::Recover],
            Stage::Verify => configured.to_vec(),
            Stage::Appendix => configured.iter().copied().filter(|a| a.is_appendix()).collect(),
        }
    }
}

/// Accumulates outputs, per-seed errors and checks.
struct Run<'a> {
    cfg: &'a ExperimentConfig,
    dir: PathBuf,
    outputs: BTreeMap<String, Vec<PathBuf>>,
    seeds: BTreeMap<u64, Vec<String>>,
    checks: Vec<Check>,
    checking: bool,
}

impl Run<'_> {
    fn file(&mut self, analysis: &str, name: String) -> PathBuf {
        self.outputs.entry(analysis.to_string()).or_default().push(PathBuf::from(&name));
        self.dir.join(name)
    }

    fn fail_seed(&mut self, seed: u64, analysis: &str, err: anyhow::Error) {
        self.seeds.entry(seed).or_default().push(format!("{analysis}: {err:#}"));
    }

    fn check(&mut self, analysis: Analysis, passed: bool, detail: String) {
        if self.checking {
            self.checks.push(Check { analysis: analysis.as_str().into(), passed, detail });
        }
    }
}

fn write_table(path: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(io::create(path)?);
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn lambda_header(dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("lambda_{i}")).collect()
}

fn fmt_all(xs: &[f64]) -> Vec<String> {
    xs.iter().map(|x| fmt_f64(*x)).collect()
}

/// Deterministic base point set shared by every seed.
fn base_points(cfg: &ExperimentConfig) -> anyhow::Result<PointSet> {
    Ok(cfg.generator.generate(cfg.generation_radius(), PointCap(cfg.params.point_cap))?)
}

/// One realization of the configured field.
fn realize(
    cfg: &ExperimentConfig,
    base: &PointSet,
    sampler: Option<&FieldSampler>,
    seed: u64,
) -> anyhow::Result<PerturbedPointSet> {
    let model = cfg.model.with_seed(seed);
    if let Correlation::StationaryCp { scheme, correlation_length } = &model.correlation {
        return Ok(stationary_cp_field(scheme, &model.dist, *correlation_length, seed, cfg.generation_radius(), None)?);
    }
    let sampler = sampler.ok_or_else(|| anyhow!("no field sampler for this model"))?;
    Ok(PerturbedPointSet::new(base.clone(), sampler.sample(seed)?, model)?)
}

/// Amplitudes `A(lambda)` the measurements are compared with: configured
/// values, then analytic ones, then direct summation over the unperturbed
/// set at the largest radius.
fn reference(cfg: &ExperimentConfig, freqs: &FrequencySet, base: &PointSet) -> anyhow::Result<Vec<Complex64>> {
    if let Some(r) = cfg.explicit_reference() {
        if r.len() != freqs.len() {
            bail!("params.reference: {} values for {} frequencies", r.len(), freqs.len());
        }
        return Ok(r);
    }
    if let Some(r) = freqs.reference() {
        return Ok(r.to_vec());
    }
    if let (GeneratorSpec::IntegerLattice { .. } | GeneratorSpec::Lattice { .. }, Some(lattice)) =
        (&cfg.generator, cfg.generator.lattice())
    {
        // Bragg amplitude of a lattice: its density on the dual lattice, zero elsewhere.
        let basis = lattice.basis();
        return Ok(freqs
            .iter()
            .map(|l| {
                let on_dual = basis.iter().all(|b| {
                    let t: f64 = b.iter().zip(l).map(|(x, y)| x * y).sum();
                    (t - t.round()).abs() < 1e-9
                });
                Complex64::new(if on_dual { lattice.density() } else { 0.0 }, 0.0)
            })
            .collect());
    }
    Ok(fourier_sum(base, freqs, cfg.max_radius())?.into_iter().map(|e| e.value).collect())
}

fn phi(model: &PerturbationModel, lambda: &[f64]) -> Complex64 {
    characteristic_function(model, lambda).value
}

/// Runs one stage of the pipeline on `cfg`, writing outputs and the manifest
/// to `cfg.output_dir`.
pub fn run(cfg: &ExperimentConfig, stage: Stage) -> anyhow::Result<RunManifest> {
    let started = Utc::now();
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut run =
        Run { cfg, dir, outputs: BTreeMap::new(), seeds: BTreeMap::new(), checks: Vec::new(), checking: stage == Stage::Verify };
    let selected = stage.analyses(&cfg.analyses);
    if stage == Stage::Appendix && selected.is_empty() {
        bail!("analyses: the appendix stage needs hellinger or slln");
    }
    let seeds = cfg.effective_seeds();
    for &s in &seeds {
        run.seeds.entry(s).or_default();
    }

    let needs_points = matches!(stage, Stage::Generate | Stage::Perturb) || selected.iter().any(|a| *a != Analysis::Slln);
    let base = if needs_points { Some(base_points(cfg)?) } else { None };
    if stage == Stage::Generate {
        let base = base.as_ref().expect("generated");
        let path = run.file("generate", "points.csv".into());
        io::write_pointset(base, &path)?;
        run.outputs.get_mut("generate").expect("just added").push(PathBuf::from("points.json"));
    }
    let sampler = match (&base, &cfg.model.correlation) {
        (Some(_), Correlation::StationaryCp { .. }) | (None, _) => None,
        (Some(b), _) if stage != Stage::Generate => Some(FieldSampler::new(b, &cfg.model)?),
        _ => None,
    };
    if stage == Stage::Perturb {
        let base = base.as_ref().expect("generated");
        for &s in &seeds {
            let result = realize(cfg, base, sampler.as_ref(), s).and_then(|pps| {
                let base_path = run.dir.join(format!("base_seed{s}.csv"));
                let disp_path = run.dir.join(format!("displacements_seed{s}.csv"));
                io::write_perturbed(&pps, &base_path, &disp_path)?;
                Ok(())
            });
            match result {
                Ok(()) => {
                    for stem in ["base", "displacements"] {
                        for ext in ["csv", "json"] {
                            let name = format!("{stem}_seed{s}.{ext}");
                            if run.dir.join(&name).exists() {
                                run.file("perturb", name);
                            }
                        }
                    }
                }
                Err(e) => run.fail_seed(s, "perturb", e),
            }
        }
    }

    for a in &selected {
        let base = base.as_ref();
        match a {
            Analysis::Spectrum => spectrum(&mut run, base.expect("points"), sampler.as_ref(), &seeds)?,
            Analysis::Recover => recover(&mut run, base.expect("points"), sampler.as_ref(), &seeds)?,
            Analysis::Gamma => gamma(&mut run, base.expect("points"), sampler.as_ref(), &seeds)?,
            Analysis::Escape => escape(&mut run, base.expect("points"), sampler.as_ref(), &seeds)?,
            Analysis::Strungaru => strungaru(&mut run, base.expect("points"), sampler.as_ref(), &seeds)?,
            Analysis::Structure => structure(&mut run, base.expect("points"), &seeds)?,
            Analysis::Hellinger => hellinger(&mut run, base.expect("points"), sampler.as_ref(), &seeds)?,
            Analysis::Slln => slln(&mut run, &seeds)?,
        }
    }
    if cfg.plot {
        plot_outputs(&mut run)?;
    }

    let manifest = RunManifest {
        command: stage.as_str().into(),
        config_hash: cfg.hash(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        started,
        finished: Utc::now(),
        config: serde_json::to_value(cfg)?,
        outputs: run.outputs,
        seeds: run.seeds.into_iter().map(|(seed, errors)| SeedStatus { seed, ok: errors.is_empty(), errors }).collect(),
        checks: run.checks,
    };
    manifest.write(&run.dir)?;
    Ok(manifest)
}

fn frequencies(cfg: &ExperimentConfig) -> anyhow::Result<FrequencySet> {
    cfg.frequency_set()?.ok_or_else(|| anyhow!("frequencies: not configured"))
}

fn spectrum(run: &mut Run, base: &PointSet, sampler: Option<&FieldSampler>, seeds: &[u64]) -> anyhow::Result<()> {
    let cfg = run.cfg;
    let freqs = frequencies(cfg)?;
    let amp = reference(cfg, &freqs, base)?;
    let targets: Vec<Complex64> = freqs.iter().zip(&amp).map(|(l, a)| phi(&cfg.model, l) * a).collect();
    let dim = freqs.dim();
    let (mut worst, mut monotone, mut done) = (0.0f64, true, 0);
    for &s in seeds {
        let result = realize(cfg, base, sampler, s).and_then(|pps| {
            let mut all: Vec<SpectralEstimate> = Vec::new();
            for &r in &cfg.r_schedule {
                all.extend(fourier_sum(&pps, &freqs, r)?);
            }
            Ok(all)
        });
        let all = match result {
            Ok(a) => a,
            Err(e) => {
                run.fail_seed(s, "spectrum", e);
                continue;
            }
        };
        let path = run.file("spectrum", format!("spectrum_seed{s}.csv"));
        io::write_spectrum_csv(io::create(&path)?, dim, &all)?;
        let mut rows = Vec::new();
        let mut devs = vec![Vec::new(); freqs.len()];
        for (i, e) in all.iter().enumerate() {
            let j = i % freqs.len();
            let d = (e.value - targets[j]).norm();
            devs[j].push(d);
            let mut row = vec![fmt_f64(e.radius)];
            row.extend(fmt_all(&e.frequency));
            row.push(fmt_f64(d));
            rows.push(row);
        }
        let mut header = vec!["radius".to_string()];
        header.extend(lambda_header(dim));
        header.push("deviation".into());
        let path = run.file("spectrum", format!("deviation_seed{s}.csv"));
        write_table(&path, header, rows)?;
        for d in &devs {
            worst = worst.max(*d.last().expect("nonempty schedule"));
            monotone &= d.windows(2).all(|w| w[1] < w[0]);
        }
        done += 1;
    }
    let tol = &cfg.tolerances;
    let passed = done > 0 && worst <= tol.spectrum_abs && (monotone || !tol.require_decreasing);
    run.check(
        Analysis::Spectrum,
        passed,
        format!(
            "max |M_R - phi A| at R={} is {worst:.3e} (<= {}); deviation decreasing over the schedule: {monotone}{}",
            cfg.max_radius(),
            tol.spectrum_abs,
            if tol.require_decreasing { "" } else { " (not required)" }
        ),
    );
    Ok(())
}

fn recover(run: &mut Run, base: &PointSet, sampler: Option<&FieldSampler>, seeds: &[u64]) -> anyhow::Result<()> {
    let cfg = run.cfg;
    let freqs = frequencies(cfg)?;
    let amp = reference(cfg, &freqs, base)?;
    let dim = freqs.dim();
    let (mut worst, mut cloaked, mut done) = (0.0f64, 0, 0);
    for &s in seeds {
        let result = realize(cfg, base, sampler, s).and_then(|pps| {
            let measured = fourier_sum(&pps, &freqs, cfg.max_radius())?;
            Ok(recover_spectrum(&measured, pps.model(), cfg.cloak_threshold)?.with_reference(&amp)?)
        });
        let rep = match result {
            Ok(r) => r,
            Err(e) => {
                run.fail_seed(s, "recover", e);
                continue;
            }
        };
        let mut header = lambda_header(dim);
        header.extend(
            [
                "measured_re",
                "measured_im",
                "phi_re",
                "phi_im",
                "recovered_re",
                "recovered_im",
                "reference_re",
                "reference_im",
                "cloaked",
            ]
            .map(String::from),
        );
        let rows = rep
            .records
            .iter()
            .map(|r| {
                let mut row = fmt_all(&r.frequency);
                let rec = r.recovered.map_or(["".to_string(), "".to_string()], |v| [fmt_f64(v.re), fmt_f64(v.im)]);
                let reference = r.reference.unwrap_or_default();
                row.extend([fmt_f64(r.measured.re), fmt_f64(r.measured.im), fmt_f64(r.phi.re), fmt_f64(r.phi.im)]);
                row.extend(rec);
                row.extend([fmt_f64(reference.re), fmt_f64(reference.im), r.cloaked.to_string()]);
                row
            })
            .collect();
        let path = run.file("recover", format!("recovered_seed{s}.csv"));
        write_table(&path, header, rows)?;
        for r in &rep.records {
            match (r.recovered, r.reference) {
                (Some(v), Some(a)) => {
                    let scale = if a.norm() > 0.0 { a.norm() } else { 1.0 };
                    worst = worst.max((v - a).norm() / scale);
                }
                _ => cloaked += 1,
            }
        }
        done += 1;
    }
    let tol = cfg.tolerances.recover_relative;
    run.check(
        Analysis::Recover,
        done > 0 && worst <= tol,
        format!("max |M/phi - A| / |A| = {worst:.3e} (<= {tol}); {cloaked} cloaked entries at tau = {}", cfg.cloak_threshold),
    );
    Ok(())
}

/// `#(X cap B_R) / Vol(B_R)` unless the generator states the density.
fn density(base: &PointSet, radius: f64) -> f64 {
    base.claimed_density.unwrap_or_else(|| {
        base.points().filter(|p| difflab_core::geometry::norm(p) <= radius).count() as f64 / ball_volume(base.dim(), radius)
    })
}

fn gamma(run: &mut Run, base: &PointSet, sampler: Option<&FieldSampler>, seeds: &[u64]) -> anyhow::Result<()> {
    let cfg = run.cfg;
    let lambda = cfg.lambda()?;
    let radius = cfg.max_radius();
    let restricted = base.restrict(radius);
    let index = PairIndex::new(base.dim(), restricted.coords(), cfg.params.lag_radius, radius)?;
    let vol = ball_volume(base.dim(), radius);
    let target = (1.0 - phi(&cfg.model, &lambda).norm_sqr()) * density(base, radius);
    let tol = &cfg.tolerances;
    let (mut zero_ok, mut lags_ok, mut done, mut worst_zero, mut worst_ratio) = (0, 0, 0, 0.0f64, 0.0f64);
    for &s in seeds {
        let result = realize(cfg, base, sampler, s).and_then(|pps| Ok(gamma_xi_lambda_indexed(&pps, &lambda, &index)?));
        let ac = match result {
            Ok(a) => a,
            Err(e) => {
                run.fail_seed(s, "gamma", e);
                continue;
            }
        };
        let path = run.file("gamma", format!("gamma_seed{s}.csv"));
        io::write_autocorr_csv(io::create(&path)?, &ac)?;
        let rel = (ac.zero_lag().coefficient.re - target).abs() / target;
        let ratio = ac
            .nonzero_lags()
            .map(|l| l.coefficient.norm() / (tol.gamma_lag_factor * (l.pair_count as f64).sqrt() / vol))
            .fold(0.0, f64::max);
        worst_zero = worst_zero.max(rel);
        worst_ratio = worst_ratio.max(ratio);
        zero_ok += usize::from(rel <= tol.gamma_zero_relative);
        lags_ok += usize::from(ratio < 1.0);
        done += 1;
    }
    let need = (tol.gamma_seed_fraction * done as f64).ceil() as usize;
    run.check(
        Analysis::Gamma,
        done > 0 && zero_ok == done && lags_ok >= need,
        format!(
            "k=0 within {} of (1-|phi|^2) dens in {zero_ok}/{done} seeds (worst {worst_zero:.2e}); nonzero lags below {} sqrt(pairs)/Vol in {lags_ok}/{done} (need {need}; worst ratio {worst_ratio:.2})",
            tol.gamma_zero_relative, tol.gamma_lag_factor
        ),
    );
    Ok(())
}

fn escape(run: &mut Run, base: &PointSet, sampler: Option<&FieldSampler>, seeds: &[u64]) -> anyhow::Result<()> {
    let cfg = run.cfg;
    let tol = cfg.tolerances.escape_max;
    let (mut worst, mut monotone, mut done) = (0.0f64, true, 0);
    for &s in seeds {
        let result = realize(cfg, base, sampler, s).and_then(|pps| {
            cfg.r_schedule.iter().map(|&r| Ok(boundary_escape_fraction(&pps, r)?)).collect::<anyhow::Result<Vec<_>>>()
        });
        let rows = match result {
            Ok(r) => r,
            Err(e) => {
                run.fail_seed(s, "escape", e);
                continue;
            }
        };
        let path = run.file("escape", format!("escape_seed{s}.csv"));
        write_table(
            &path,
            ["radius", "out_fraction", "in_fraction", "out_count", "in_count"].map(String::from).to_vec(),
            rows.iter()
                .zip(&cfg.r_schedule)
                .map(|(e, r)| {
                    vec![
                        fmt_f64(*r),
                        fmt_f64(e.out_fraction),
                        fmt_f64(e.in_fraction),
                        e.out_count.to_string(),
                        e.in_count.to_string(),
                    ]
                })
                .collect(),
        )?;
        let last = rows.last().expect("nonempty schedule");
        worst = worst.max(last.out_fraction).max(last.in_fraction);
        monotone &= rows.windows(2).all(|w| w[1].out_fraction < w[0].out_fraction && w[1].in_fraction < w[0].in_fraction);
        done += 1;
    }
    run.check(
        Analysis::Escape,
        done > 0 && worst <= tol && monotone,
        format!(
            "escape fractions at R={} at most {worst:.2e} (<= {tol}); decreasing over the schedule: {monotone}",
            cfg.max_radius()
        ),
    );
    Ok(())
}

fn strungaru(run: &mut Run, base: &PointSet, sampler: Option<&FieldSampler>, seeds: &[u64]) -> anyhow::Result<()> {
    let cfg = run.cfg;
    let lambda = cfg.lambda()?;
    let (k, radius) = (cfg.params.lag_radius, cfg.max_radius());
    let tol = &cfg.tolerances;
    let (mut worst, mut weakest_control, mut done) = (0.0f64, f64::INFINITY, 0);
    for &s in seeds {
        let result = realize(cfg, base, sampler, s).and_then(|pps| {
            let (mu_x, mu_xi) = mu_lambda_weights(&pps, &lambda)?;
            let ac_xi = autocorrelation(&mu_xi, k, radius)?;
            let ac_x = autocorrelation(&mu_x, k, radius)?;
            Ok([
                (strungaru_statistic(&ac_xi), ac_xi.zero_lag().coefficient.norm()),
                (strungaru_statistic(&ac_x), ac_x.zero_lag().coefficient.norm()),
            ])
        });
        let stats = match result {
            Ok(v) => v,
            Err(e) => {
                run.fail_seed(s, "strungaru", e);
                continue;
            }
        };
        let path = run.file("strungaru", format!("strungaru_seed{s}.csv"));
        write_table(
            &path,
            ["weights", "statistic", "zero_lag", "ratio"].map(String::from).to_vec(),
            ["perturbed", "unperturbed"]
                .iter()
                .zip(&stats)
                .map(|(name, (st, c0))| vec![name.to_string(), fmt_f64(*st), fmt_f64(*c0), fmt_f64(st / c0)])
                .collect(),
        )?;
        worst = worst.max(stats[0].0 / stats[0].1);
        weakest_control = weakest_control.min(stats[1].0 / stats[1].1);
        done += 1;
    }
    run.check(
        Analysis::Strungaru,
        done > 0 && worst <= tol.strungaru_ratio && weakest_control >= tol.strungaru_control,
        format!(
            "perturbed statistic / c(0) at most {worst:.2e} (<= {}); unperturbed control at least {weakest_control:.3} (>= {})",
            tol.strungaru_ratio, tol.strungaru_control
        ),
    );
    Ok(())
}

fn structure(run: &mut Run, base: &PointSet, seeds: &[u64]) -> anyhow::Result<()> {
    let cfg = run.cfg;
    let freqs = frequencies(cfg)?;
    let amp = reference(cfg, &freqs, base)?;
    let model = cfg.model.with_seed(seeds[0]);
    let dirac = PerturbationModel::iid(Distribution::Dirac0 { dim: model.dim() }, seeds[0]);
    let (n, radius, cap) = (cfg.params.realizations, cfg.max_radius(), PointCap(cfg.params.point_cap));
    let result = (|| -> anyhow::Result<_> {
        let s_base = structure_factor_with(&cfg.generator, &dirac, &freqs, radius, n, Membership::Unperturbed, cap)?;
        let s_pert = structure_factor_with(&cfg.generator, &model, &freqs, radius, n, Membership::Unperturbed, cap)?;
        let t = verify_structure_relation(&s_base, &s_pert, &model)?;
        Ok((s_base, s_pert, t))
    })();
    let (s_base, s_pert, t) = match result {
        Ok(v) => v,
        Err(e) => {
            run.fail_seed(seeds[0], "structure", e);
            return Ok(());
        }
    };
    let dim = freqs.dim();
    for (name, est) in [("structure_factor_base.csv", &s_base), ("structure_factor.csv", &s_pert)] {
        let path = run.file("structure", name.into());
        io::write_structure_factor_csv(io::create(&path)?, dim, est)?;
    }
    let mut header = lambda_header(dim);
    header.extend(["S_base", "S_pert", "phi_sq", "residual", "combined_se", "relative"].map(String::from));
    let rows = t
        .rows
        .iter()
        .map(|r| {
            let mut row = fmt_all(&r.frequency);
            row.extend(fmt_all(&[r.s_base, r.s_pert, r.phi_sq, r.residual, r.combined_se, r.relative]));
            row
        })
        .collect();
    let path = run.file("structure", "structure_relation.csv".into());
    write_table(&path, header, rows)?;

    let tol = &cfg.tolerances;
    let (mut off_res, mut off_se, mut off_n, mut bragg_worst, mut bragg_n) = (0.0, 0.0, 0usize, 0.0f64, 0usize);
    for (r, a) in t.rows.iter().zip(&amp) {
        if a.norm() > 0.0 {
            bragg_worst = bragg_worst.max(r.relative);
            bragg_n += 1;
        } else {
            off_res += r.residual.abs();
            off_se += r.combined_se;
            off_n += 1;
        }
    }
    let off_ok = off_n == 0 || off_res <= tol.structure_se * off_se;
    let bragg_ok = bragg_worst <= tol.structure_bragg_relative;
    run.check(
        Analysis::Structure,
        off_ok && bragg_ok,
        format!(
            "off-Bragg ({off_n} freqs, {n} realizations): mean |residual| {:.3e} vs {} x mean combined SE = {:.3e}; Bragg ({bragg_n} freqs) worst relative residual {bragg_worst:.2e} (<= {})",
            off_res / off_n.max(1) as f64,
            tol.structure_se,
            tol.structure_se * off_se / off_n.max(1) as f64,
            tol.structure_bragg_relative
        ),
    );
    Ok(())
}

fn hellinger(run: &mut Run, base: &PointSet, sampler: Option<&FieldSampler>, seeds: &[u64]) -> anyhow::Result<()> {
    let cfg = run.cfg;
    let lambda = cfg.lambda()?;
    let bump = GaussianBump { center: vec![0.0; base.dim()], width: cfg.params.bump_width, amplitude: 1.0 };
    let mut traces: Vec<HellingerBoundTrace> = Vec::new();
    for &s in seeds {
        let result = realize(cfg, base, sampler, s)
            .and_then(|pps| Ok(hellinger_diffraction_bound(&pps, &lambda, &bump, &cfg.r_schedule)?));
        let t = match result {
            Ok(t) => t,
            Err(e) => {
                run.fail_seed(s, "hellinger", e);
                continue;
            }
        };
        let path = run.file("hellinger", format!("hellinger_seed{s}.csv"));
        write_table(
            &path,
            ["radius", "lhs", "rhs", "cells"].map(String::from).to_vec(),
            t.rows.iter().map(|r| vec![fmt_f64(r.radius), fmt_f64(r.lhs), fmt_f64(r.rhs), r.cells.to_string()]).collect(),
        )?;
        traces.push(t);
    }
    let rhs: Vec<f64> = traces.iter().map(|t| t.rhs_limit).collect();
    let se = if rhs.len() > 1 { mean_estimate(&rhs).std_error } else { 0.0 };
    let k = cfg.tolerances.hellinger_se;
    let held = traces.iter().filter(|t| t.tail_max_lhs <= t.rhs_limit + k * se).count();
    run.check(
        Analysis::Hellinger,
        !traces.is_empty() && held == traces.len(),
        format!("lhs tail max <= rhs + {k} SE (SE {se:.1e}) in {held}/{} seeds", traces.len()),
    );
    Ok(())
}

fn slln(run: &mut Run, seeds: &[u64]) -> anyhow::Result<()> {
    let cfg = run.cfg;
    let spec = cfg.params.sequence.as_ref().ok_or_else(|| anyhow!("params.sequence: not configured"))?;
    let (n, truncated) = (cfg.params.sequence_length, cfg.params.truncated);
    let target = if truncated { spec.marginal.mean() } else { 0.0 };
    let mut worst = 0.0f64;
    let mut done = 0;
    for &s in seeds {
        let result = if truncated { truncated_slln_trace(spec, n, s) } else { slln_trace(spec, n, s) };
        let trace = match result {
            Ok(t) => t,
            Err(e) => {
                run.fail_seed(s, "slln", e.into());
                continue;
            }
        };
        let path = run.file("slln", format!("slln_seed{s}.csv"));
        io::write_trace_csv(io::create(&path)?, &trace)?;
        worst = worst.max((trace.last().expect("nonempty trace").value - target).abs());
        done += 1;
    }
    let tol = cfg.tolerances.slln_max;
    run.check(
        Analysis::Slln,
        done > 0 && worst <= tol,
        format!(
            "{} average at n={n} within {worst:.2e} of {target} (<= {tol})",
            if truncated { "truncated" } else { "centered" }
        ),
    );
    Ok(())
}

/// SVGs next to every plottable output.
fn plot_outputs(run: &mut Run) -> anyhow::Result<()> {
    let files: Vec<PathBuf> = run.outputs.values().flatten().cloned().collect();
    for rel in files {
        if let Some(svg) = plot_file(&run.dir.join(&rel))? {
            let name = svg.strip_prefix(&run.dir).unwrap_or(&svg).to_path_buf();
            run.outputs.entry("plot".into()).or_default().push(name);
        }
    }
    Ok(())
}

/// Renders a CSV produced by a run; `None` for file kinds without a plot.
pub fn plot_file(csv_path: &Path) -> anyhow::Result<Option<PathBuf>> {
    if csv_path.extension().and_then(|e| e.to_str()) != Some("csv") {
        return Ok(None);
    }
    let mut rdr = csv::Reader::from_path(csv_path).with_context(|| format!("reading {}", csv_path.display()))?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let records: Vec<csv::StringRecord> = rdr.records().collect::<Result<_, _>>()?;
    let col = |name: &str| header.iter().position(|h| h == name);
    let num = |r: &csv::StringRecord, i: usize| -> f64 { r.get(i).and_then(|v| v.trim().parse().ok()).unwrap_or(f64::NAN) };
    let dims = header.iter().filter(|h| h.starts_with("lambda_")).count();
    let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("plot").to_string();
    let svg = csv_path.with_extension("svg");
    // Abscissa of a frequency row: lambda itself in one dimension, |lambda| otherwise.
    let abscissa = |r: &csv::StringRecord| -> f64 {
        let l: Vec<f64> = (0..dims).map(|i| num(r, i)).collect();
        if dims == 1 {
            l[0]
        } else {
            l.iter().map(|x| x * x).sum::<f64>().sqrt()
        }
    };
    let x_desc = if dims == 1 { "lambda" } else { "|lambda|" };
    if let (Some(re), Some(im), Some(rad), true) = (col("re"), col("im"), col("R"), header.iter().any(|h| h == "kind")) {
        let r_max = records.iter().map(|r| num(r, rad)).fold(f64::NEG_INFINITY, f64::max);
        let stems: Vec<(f64, f64)> =
            records.iter().filter(|r| num(r, rad) == r_max).map(|r| (abscissa(r), num(r, re).hypot(num(r, im)))).collect();
        plot::stem_plot(&svg, &stem, x_desc, &stems)?;
        return Ok(Some(svg));
    }
    if let (Some(sf), Some(_)) = (col("S"), col("stderr")) {
        let stems: Vec<(f64, f64)> = records.iter().map(|r| (abscissa(r), num(r, sf))).collect();
        plot::stem_plot(&svg, &stem, x_desc, &stems)?;
        return Ok(Some(svg));
    }
    if let (Some(re), Some(im)) = (col("recovered_re"), col("recovered_im")) {
        // Cloaked rows have empty recovered cells and drop out.
        let stems: Vec<(f64, f64)> =
            records.iter().map(|r| (abscissa(r), num(r, re).hypot(num(r, im)))).filter(|s| s.1.is_finite()).collect();
        plot::stem_plot(&svg, &stem, x_desc, &stems)?;
        return Ok(Some(svg));
    }
    if let (Some(rad), Some(dev)) = (col("radius"), col("deviation")) {
        let mut by_freq: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for r in &records {
            let key = (0..dims).map(|i| format!("{:.4}", num(r, rad + 1 + i))).collect::<Vec<_>>().join(", ");
            by_freq.entry(key).or_default().push((num(r, rad), num(r, dev)));
        }
        let series: Vec<plot::Series> =
            by_freq.into_iter().take(6).map(|(k, points)| plot::Series { label: format!("lambda = ({k})"), points }).collect();
        plot::line_plot(&svg, &stem, "R", "|M_R - phi A|", &series)?;
        return Ok(Some(svg));
    }
    if let (Some(n), Some(v), 2) = (col("n"), col("value"), header.len()) {
        let points = records.iter().map(|r| (num(r, n).log10(), num(r, v))).collect();
        plot::line_plot(&svg, &stem, "log10 n", "average", &[plot::Series { label: String::new(), points }])?;
        return Ok(Some(svg));
    }
    if let (Some(rad), Some(l), Some(r)) = (col("radius"), col("lhs"), col("rhs")) {
        let side = |i: usize| records.iter().map(|rec| (num(rec, rad), num(rec, i))).collect();
        let series =
            [plot::Series { label: "lhs".into(), points: side(l) }, plot::Series { label: "rhs".into(), points: side(r) }];
        plot::line_plot(&svg, &stem, "R", "value", &series)?;
        return Ok(Some(svg));
    }
    Ok(None)
}
