//! Executes a [`RunConfig`] and writes per-job reports plus a manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{JobKind, JobSpec, Resolver, RunConfig};
use crate::density::{run_density, DensityJob};
use crate::disintegration::{
    bin_summaries, conditional_vs_surface, disintegrate, support_check, verify_disintegration,
};
use crate::error::{Error, Result};
use crate::functional::FunctionalOracle;
use crate::gauss_model::{build_model, GaussianModel};
use crate::report::{
    bins_csv, density_csv, hausdorff_csv, integrals_csv, residuals_csv, to_json, write_atomic,
};
use crate::selftest::{run_selftest, selftest_csv, SelftestReport};
use crate::surface::{
    hausdorff_compare, ibp_residual, perimeter_identity_check, surface_report,
    SurfaceMeasureHandle, SurfaceReportOptions,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAULT: i32 = 1;
pub const EXIT_SELFTEST_FAILED: i32 = 2;

#[derive(Debug, Clone, Serialize)]
pub struct JobRecord {
    pub name: String,
    pub kind: &'static str,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub files: Vec<String>,
    /// Selftest verdict; `None` for other jobs.
    pub passed: Option<bool>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_sha256: String,
    pub model: String,
    pub threads: usize,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub output_dir: String,
    pub jobs: Vec<JobRecord>,
    pub exit_code: i32,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub manifest: Manifest,
    /// One console line per selftest criterion.
    pub selftest_lines: Vec<String>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

struct Writer<'a> {
    dir: &'a Path,
    config: &'a RunConfig,
    files: Vec<String>,
}

impl Writer<'_> {
    fn csv(&mut self, file: String, body: impl FnOnce() -> String) -> Result<()> {
        if self.config.formats.csv {
            write_atomic(&self.dir.join(&file), body().as_bytes())?;
            self.files.push(file);
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, file: String, value: &T) -> Result<()> {
        if self.config.formats.json {
            write_atomic(&self.dir.join(&file), to_json(value)?.as_bytes())?;
            self.files.push(file);
        }
        Ok(())
    }
}

struct Context<'a> {
    model: &'a GaussianModel,
    resolver: Resolver<'a>,
}

impl Context<'_> {
    fn resolve(&self, reference: &str) -> Result<FunctionalOracle> {
        self.resolver
            .resolve(reference)
            .map_err(|e| Error::Config(vec![e]))
    }

    fn g(&self, job: &JobSpec) -> Result<FunctionalOracle> {
        let g = job
            .g
            .as_deref()
            .ok_or_else(|| Error::Argument("job has no `g`".into()))?;
        self.resolve(g)
    }

    fn phis(&self, job: &JobSpec) -> Result<Vec<FunctionalOracle>> {
        job.phis.iter().map(|p| self.resolve(p)).collect()
    }

    fn handle(&self, job: &JobSpec, g: &FunctionalOracle, r: f64) -> SurfaceMeasureHandle {
        let mut h = SurfaceMeasureHandle::new(self.model.clone(), g.clone(), r)
            .with_samples(job.n, job.seed)
            .with_estimator(job.estimator)
            .with_form(job.form);
        if let Some(e) = job.epsilon {
            h = h.with_epsilon(e);
        }
        h
    }

    fn grid(job: &JobSpec) -> Vec<f64> {
        job.r_grid.as_ref().map(|g| g.values()).unwrap_or_default()
    }
}

fn run_job(ctx: &Context, job: &JobSpec, out: &mut Writer) -> Result<Option<SelftestReport>> {
    let name = &job.name;
    match job.kind {
        JobKind::Density => {
            let g = ctx.g(job)?;
            let phi = ctx.resolve(&job.phis[0])?;
            let mut dj = DensityJob::new(
                ctx.model.clone(),
                g.clone(),
                phi.clone(),
                Context::grid(job),
            )
            .with_samples(job.n, job.seed)
            .with_estimator(job.estimator)
            .with_form(job.form);
            if let Some(e) = job.epsilon {
                dj = dj.with_epsilon(e);
            }
            let curves = run_density(&dj)?;
            out.csv(format!("{name}.csv"), || density_csv(&curves))?;
            out.json(
                format!("{name}.json"),
                &json!({
                    "job": name,
                    "kind": "density",
                    "model": ctx.model.label(),
                    "g": g.describe(),
                    "phi": phi.describe(),
                    "form": job.form,
                    "curves": curves,
                }),
            )?;
        }
        JobKind::Surface => {
            let g = ctx.g(job)?;
            let phis = ctx.phis(job)?;
            let opts = SurfaceReportOptions {
                ibp_indices: job.k.clone(),
                traces: job.traces,
                hausdorff: false,
            };
            let reports = Context::grid(job)
                .into_iter()
                .map(|r| surface_report(&ctx.handle(job, &g, r), &phis, &opts))
                .collect::<Result<Vec<_>>>()?;
            let residuals: Vec<_> = reports.iter().flat_map(|r| r.residuals.clone()).collect();
            let integrals: Vec<_> = reports
                .iter()
                .flat_map(|r| std::iter::once(r.total_mass.clone()).chain(r.integrals.clone()))
                .collect();
            out.csv(format!("{name}.csv"), || residuals_csv(&residuals))?;
            out.csv(format!("{name}_integrals.csv"), || {
                integrals_csv(&integrals)
            })?;
            out.json(format!("{name}.json"), &reports)?;
        }
        JobKind::Ibp => {
            let g = ctx.g(job)?;
            let phis = ctx.phis(job)?;
            let mut residuals = Vec::new();
            let mut perimeter = Vec::new();
            for r in Context::grid(job) {
                let h = ctx.handle(job, &g, r);
                for phi in &phis {
                    for &k in &job.k {
                        residuals.push(ibp_residual(&h, phi, k)?);
                        perimeter.push(perimeter_identity_check(&h, phi, k)?);
                    }
                }
            }
            out.csv(format!("{name}.csv"), || residuals_csv(&residuals))?;
            out.json(
                format!("{name}.json"),
                &json!({ "job": name, "kind": "ibp", "g": g.describe(), "residuals": residuals, "perimeter": perimeter }),
            )?;
        }
        JobKind::Disintegrate => {
            let g = ctx.g(job)?;
            let phis = ctx.phis(job)?;
            let d = disintegrate(&g, ctx.model, job.n, job.seed, job.bins, job.binning)?;
            let bins = bin_summaries(&d, ctx.model, &phis)?;
            let towers = phis
                .iter()
                .map(|p| verify_disintegration(&d, ctx.model, p))
                .collect::<Result<Vec<_>>>()?;
            let mut conditionals = Vec::new();
            for r in Context::grid(job) {
                let h = ctx.handle(job, &g, r);
                for p in &phis {
                    conditionals.push(conditional_vs_surface(&d, ctx.model, &h, p)?);
                }
            }
            let names: Vec<String> = phis.iter().map(|p| p.describe()).collect();
            out.csv(format!("{name}.csv"), || bins_csv(&bins, &names))?;
            out.json(
                format!("{name}.json"),
                &json!({
                    "job": name,
                    "kind": "disintegrate",
                    "g": g.describe(),
                    "n": d.n,
                    "seed": d.seed,
                    "binning": d.binning,
                    "edges": d.edges,
                    "weights": d.weights,
                    "empty": d.empty,
                    "tower": towers,
                    "support": support_check(&d, 0.0),
                    "conditional_vs_surface": conditionals,
                }),
            )?;
        }
        JobKind::Hausdorff => {
            let g = ctx.g(job)?;
            let phis = ctx.phis(job)?;
            let mut rows = Vec::new();
            for r in Context::grid(job) {
                let h = ctx.handle(job, &g, r);
                for p in &phis {
                    rows.push(hausdorff_compare(&h, p)?);
                }
            }
            out.csv(format!("{name}.csv"), || hausdorff_csv(&rows))?;
            out.json(format!("{name}.json"), &rows)?;
        }
        JobKind::Selftest => {
            let report = run_selftest(&job.criteria)?;
            out.csv(format!("{name}.csv"), || selftest_csv(&report))?;
            out.json(format!("{name}.json"), &report)?;
            return Ok(Some(report));
        }
    }
    Ok(None)
}

/// Run every job in order. Faults abort the run; selftest failures only
/// set the exit code.
pub fn run(config: &RunConfig, config_text: &str) -> Result<RunOutcome> {
    let started_unix = unix_now();
    let model = build_model(&config.model)?;
    let dir = PathBuf::from(&config.output_dir);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let ctx = Context {
        model: &model,
        resolver: Resolver::new(&model, &config.functionals),
    };
    let mut records = Vec::new();
    let mut lines = Vec::new();
    let mut exit_code = EXIT_OK;
    for job in &config.jobs {
        let start = Instant::now();
        let mut out = Writer {
            dir: &dir,
            config,
            files: Vec::new(),
        };
        let report = run_job(&ctx, job, &mut out).map_err(|e| e.in_job(&job.name))?;
        let passed = report.as_ref().map(|r| r.passed);
        if let Some(r) = &report {
            lines.extend(r.lines());
            if !r.passed {
                exit_code = EXIT_SELFTEST_FAILED;
            }
        }
        let sampled = job.kind != JobKind::Selftest;
        records.push(JobRecord {
            name: job.name.clone(),
            kind: job.kind.as_str(),
            n: sampled.then_some(job.n),
            seed: sampled.then_some(job.seed),
            files: out.files,
            passed,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let manifest = Manifest {
        tool: "glset",
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: sha256_hex(config_text.as_bytes()),
        model: model.label().to_string(),
        threads: rayon::current_num_threads(),
        started_unix,
        finished_unix: unix_now(),
        output_dir: config.output_dir.clone(),
        jobs: records,
        exit_code,
    };
    write_atomic(&dir.join("manifest.json"), to_json(&manifest)?.as_bytes())?;
    Ok(RunOutcome {
        exit_code,
        manifest,
        selftest_lines: lines,
    })
}
