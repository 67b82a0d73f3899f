//! Command execution, result files and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gmclab::estimator::{
    grid_scan_detailed, hill_tail_index, verify_girsanov, verify_scaling, GirsanovCheck,
    GirsanovFunctional, MomentSetup, ScalingCheck, ScanConfig, ScanResult, TailIndexEstimate,
};
use gmclab::geometry::{parse_rat, tiles, RatRect};
use gmclab::kahane::{self, phi_prime_identity, verify_inequality, KahaneReport, PhiPrime};
use gmclab::lattice::cache::CovarianceCache;
use gmclab::lattice::{sample_map, RepairReport};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{CommandKind, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::phase::emit_phase_diagram;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_JSON: &str = "results.json";
pub const PHASE_CSV: &str = "phase_diagram.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub artifact_version: String,
    pub timestamp: String,
    pub seed: u64,
    pub worker_threads: usize,
    /// Wall-clock seconds per stage. Timings appear nowhere else.
    pub stage_seconds: BTreeMap<String, f64>,
    pub repair_reports: Vec<RepairReport>,
    pub files: Vec<FileDigest>,
    pub passed: bool,
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read manifest {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("manifest: {e}")))
    }

    /// Recomputes every digest from the files next to the manifest.
    pub fn verify_digests(&self, dir: &Path) -> CliResult<bool> {
        for f in &self.files {
            if sha256_hex(&fs::read(dir.join(&f.name))?) != f.sha256 {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub passed: bool,
    pub output_dir: PathBuf,
    pub manifest: RunManifest,
}

/// What a command produces before anything is written.
struct Output {
    json: serde_json::Value,
    csv: String,
    extra: Vec<(&'static str, String)>,
    passed: bool,
    repair_reports: Vec<RepairReport>,
}

fn csv_table(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

/// Validates, runs and writes `manifest.json`, `results.csv` and `results.json`.
pub fn run(config: &ExperimentConfig) -> CliResult<RunOutcome> {
    config.validate()?;
    let start = Instant::now();
    let out = match config.command {
        CommandKind::ScanMoments => scan_moments(config)?,
        CommandKind::VerifyScaling => scaling(config)?,
        CommandKind::VerifyGirsanov => girsanov(config)?,
        CommandKind::VerifyKahane => kahane_cmd(config)?,
        CommandKind::Tile => tile(config)?,
        CommandKind::TailIndex => tail_index(config)?,
    };
    let compute = start.elapsed().as_secs_f64();

    let write_start = Instant::now();
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut json_text = serde_json::to_string_pretty(&out.json)?;
    json_text.push('\n');
    let mut contents: Vec<(&str, String)> = vec![(RESULTS_CSV, out.csv), (RESULTS_JSON, json_text)];
    contents.extend(out.extra);
    for (name, body) in &contents {
        fs::write(dir.join(name), body)?;
        files.push(FileDigest {
            name: (*name).to_string(),
            sha256: sha256_hex(body.as_bytes()),
        });
    }
    let mut stage_seconds = BTreeMap::new();
    stage_seconds.insert("compute".to_string(), compute);
    stage_seconds.insert("write".to_string(), write_start.elapsed().as_secs_f64());

    let manifest = RunManifest {
        config: config.clone(),
        artifact_version: ARTIFACT_VERSION.to_string(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        seed: config.seed,
        worker_threads: gmclab::parallel::worker_count(),
        stage_seconds,
        repair_reports: out.repair_reports,
        files,
        passed: out.passed,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(RunOutcome {
        passed: out.passed,
        output_dir: dir.clone(),
        manifest,
    })
}

#[derive(Debug, Clone)]
pub struct RerunOutcome {
    pub outcome: RunOutcome,
    /// Files whose digest differs from the original manifest.
    pub mismatched: Vec<String>,
}

impl RerunOutcome {
    pub fn reproduced(&self) -> bool {
        self.mismatched.is_empty()
    }
}

/// Reruns the configuration of a manifest and compares result digests.
pub fn rerun(manifest_path: &Path, output_dir: Option<PathBuf>) -> CliResult<RerunOutcome> {
    let original = RunManifest::load(manifest_path)?;
    let mut config = original.config.clone();
    config.output_dir = output_dir.unwrap_or_else(|| {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("rerun")
    });
    let outcome = run(&config)?;
    let mismatched = original
        .files
        .iter()
        .filter(|f| !outcome.manifest.files.iter().any(|g| g == *f))
        .map(|f| f.name.clone())
        .collect();
    Ok(RerunOutcome {
        outcome,
        mismatched,
    })
}

fn cache(config: &ExperimentConfig) -> Option<CovarianceCache> {
    config.cache_dir.as_ref().map(CovarianceCache::new)
}

fn scan_moments(config: &ExperimentConfig) -> CliResult<Output> {
    let spec = config.kernel_spec()?;
    let opts = config.assembly_options();
    let cache = cache(config);
    let cfg = ScanConfig {
        spec: &spec,
        opts: &opts,
        cache: cache.as_ref(),
        seed: config.seed,
        n_samples: config.n_samples,
        thresholds: config.thresholds,
    };
    let base = config.query(config.resolutions[0])?;
    let (results, reports) = grid_scan_detailed(&base, &config.grid(), &config.resolutions, &cfg)?;
    let csv = csv_table(
        ScanResult::CSV_HEADER,
        results.iter().flat_map(ScanResult::csv_rows),
    );
    let mut extra = Vec::new();
    let json = if config.is_phase_scan() {
        let diagram = emit_phase_diagram(
            config.gamma_param()?,
            &config.p_grid,
            &config.q_grid,
            &results,
        )?;
        extra.push((PHASE_CSV, diagram.csv()));
        json!({ "command": config.command.name(), "scans": results, "phase_diagram": diagram })
    } else {
        json!({ "command": config.command.name(), "scans": results })
    };
    Ok(Output {
        json,
        csv,
        extra,
        passed: true,
        repair_reports: reports,
    })
}

fn scaling(config: &ExperimentConfig) -> CliResult<Output> {
    let spec = config.kernel_spec()?;
    let opts = config.assembly_options();
    let cache = cache(config);
    let query = config.query(config.n_cells)?;
    let check: ScalingCheck = verify_scaling(
        &query,
        config.scale_factor()?,
        &spec,
        &opts,
        cache.as_ref(),
        config.seed,
        config.n_samples,
    )?;
    let passed = check.z_score.abs() < config.z_threshold;
    let csv = csv_table(
        "r,exponent,ratio,predicted,log_ratio_se,z_score,passed",
        [format!(
            "{},{},{},{},{},{},{}",
            check.r,
            check.exponent,
            check.ratio,
            check.predicted,
            check.log_ratio_se,
            check.z_score,
            passed
        )],
    );
    let json = json!({
        "command": config.command.name(),
        "localized": query.localization.is_some(),
        "outside_validated_regime": query.outside_validated_regime(),
        "check": check,
        "passed": passed,
    });
    Ok(Output {
        json,
        csv,
        extra: vec![],
        passed,
        repair_reports: check.repair_reports.clone(),
    })
}

pub fn functional_label(f: &GirsanovFunctional) -> String {
    match f {
        GirsanovFunctional::One => "one".into(),
        GirsanovFunctional::BoundaryMass => "boundary-mass".into(),
        GirsanovFunctional::BulkMass => "bulk-mass".into(),
        GirsanovFunctional::Quotient { p, q } => format!("quotient({p};{q})"),
    }
}

fn girsanov(config: &ExperimentConfig) -> CliResult<Output> {
    let spec = config.kernel_spec()?;
    let opts = config.assembly_options();
    let cache = cache(config);
    let setup = MomentSetup::new(&config.query(config.n_cells)?, &spec, &opts, cache.as_ref())?;
    let checks = config
        .functionals
        .iter()
        .enumerate()
        .map(|(i, f)| {
            verify_girsanov(
                &setup,
                *f,
                config.seed.wrapping_add(i as u64),
                config.n_samples,
            )
        })
        .collect::<Result<Vec<GirsanovCheck>, _>>()?;
    let ok: Vec<bool> = checks
        .iter()
        .map(|c| c.z_score.abs() < config.z_threshold)
        .collect();
    let csv = csv_table(
        "functional,lhs,rhs,lhs_se,rhs_se,paired_diff,paired_se,z_score,n_samples,n_excluded,passed",
        checks.iter().zip(&ok).map(|(c, ok)| {
            format!(
                "{},{},{},{},{},{},{},{},{},{},{}",
                functional_label(&c.functional),
                c.lhs,
                c.rhs,
                c.lhs_se,
                c.rhs_se,
                c.paired_diff,
                c.paired_se,
                c.z_score,
                c.n_samples,
                c.n_excluded,
                ok
            )
        }),
    );
    let passed = ok.iter().all(|&b| b);
    let json = json!({ "command": config.command.name(), "checks": checks, "passed": passed });
    Ok(Output {
        json,
        csv,
        extra: vec![],
        passed,
        repair_reports: vec![*setup.model.repair_report()],
    })
}

/// Interpolation points for the derivative identity.
const PHI_PRIME_POINTS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
const PHI_PRIME_TOL: f64 = 1e-6;

fn kahane_cmd(config: &ExperimentConfig) -> CliResult<Output> {
    let inst = kahane::preset(&config.preset)
        .ok_or_else(|| CliError::Config(format!("unknown preset {}", config.preset)))?;
    let report: KahaneReport =
        verify_inequality(&inst.cov_a, &inst.cov_b, &inst.functional, inst.method)?;
    let derivs = PHI_PRIME_POINTS
        .iter()
        .map(|&t| phi_prime_identity(&inst.cov_a, &inst.cov_b, &inst.functional, t, inst.method))
        .collect::<Result<Vec<PhiPrime>, _>>()?;
    let identity_ok = derivs
        .iter()
        .all(|d| match (d.identity_se, d.finite_difference_se) {
            (Some(a), Some(b)) => d.discrepancy() < 3.0 * (a * a + b * b).sqrt(),
            _ => d.discrepancy() < PHI_PRIME_TOL,
        });
    let passed = report.applicable && report.inequality_holds && identity_ok;
    let csv = csv_table(
        "preset,method,lhs,rhs,applicable,inequality_holds,identity_ok",
        [format!(
            "{},{},{},{},{},{},{}",
            config.preset,
            report.method,
            report.lhs,
            report.rhs,
            report.applicable,
            report.inequality_holds,
            identity_ok
        )],
    );
    let phi_prime: Vec<_> = PHI_PRIME_POINTS
        .iter()
        .zip(&derivs)
        .map(|(t, d)| json!({ "t": t, "result": d }))
        .collect();
    let json = json!({
        "command": config.command.name(),
        "preset": config.preset,
        "report": report,
        "phi_prime": phi_prime,
        "passed": passed,
    });
    Ok(Output {
        json,
        csv,
        extra: vec![],
        passed,
        repair_reports: vec![],
    })
}

fn rect_row(label: &str, level: String, part: usize, r: &RatRect) -> String {
    format!(
        "{label},{level},{part},{},{},{},{},{}",
        r.x0,
        r.x1,
        r.y0,
        r.y1,
        r.area()
    )
}

fn tile(config: &ExperimentConfig) -> CliResult<Output> {
    let r = parse_rat(&config.tile_r)?;
    let set = tiles(config.tile_kind, r, config.levels)?;
    let report = set.verify_partition();
    let mut rows = Vec::new();
    for (i, t) in set.tiles.iter().enumerate() {
        for (j, part) in t.parts.iter().enumerate() {
            rows.push(rect_row(&i.to_string(), t.level.to_string(), j, part));
        }
    }
    rows.push(rect_row("remainder", String::new(), 0, &set.remainder));
    let csv = csv_table("tile,level,part,x0,x1,y0,y1,area", rows);
    let tile_list: Vec<_> = set
        .tiles
        .iter()
        .map(|t| json!({ "level": t.level, "parts": t.parts, "area": t.area().to_string() }))
        .collect();
    let passed = report.is_partition();
    let json = json!({
        "command": config.command.name(),
        "kind": set.kind,
        "r": config.tile_r,
        "levels": set.levels,
        "base": set.base,
        "anchor": set.anchor.to_string(),
        "tiles": tile_list,
        "remainder": { "rect": set.remainder, "area": set.remainder.area().to_string() },
        "partition": report,
        "passed": passed,
    });
    Ok(Output {
        json,
        csv,
        extra: vec![],
        passed,
        repair_reports: vec![],
    })
}

fn tail_index(config: &ExperimentConfig) -> CliResult<Output> {
    let spec = config.kernel_spec()?;
    let opts = config.assembly_options();
    let cache = cache(config);
    let setup = MomentSetup::new(&config.query(config.n_cells)?, &spec, &opts, cache.as_ref())?;
    let masses = sample_map(&setup.model, config.seed, 0, config.n_samples, |s| {
        setup.masses(&s.values).0
    });
    let k = config.hill_k.unwrap_or(config.n_samples / 100);
    let est: TailIndexEstimate = hill_tail_index(&masses, k)?;
    let reference = 2.0 / (config.gamma * config.gamma);
    let csv = csv_table(
        &format!("{},reference_alpha", TailIndexEstimate::CSV_HEADER),
        [format!("{},{}", est.csv_row(), reference)],
    );
    let json = json!({
        "command": config.command.name(),
        "statistic": "bulk-mass",
        "estimate": est,
        "reference_alpha": reference,
        "gated": false,
    });
    Ok(Output {
        json,
        csv,
        extra: vec![],
        passed: true,
        repair_reports: vec![*setup.model.repair_report()],
    })
}
