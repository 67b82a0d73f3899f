//! Experiment configuration: one JSON document, with command-line overrides.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use gmclab::estimator::{GirsanovFunctional, MomentQuery, ScanThresholds, MOM_BLOCKS};
use gmclab::geometry::{parse_rat, rat_to_f64, TileKind};
use gmclab::gmc::GammaParam;
use gmclab::kahane;
use gmclab::lattice::{AssemblyOptions, DEFAULT_DIAG_CONSTANT};
use gmclab::{Correction, Interval, KernelSpec, Rect};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    ScanMoments,
    VerifyScaling,
    VerifyGirsanov,
    VerifyKahane,
    Tile,
    TailIndex,
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::ScanMoments => "scan-moments",
            CommandKind::VerifyScaling => "verify-scaling",
            CommandKind::VerifyGirsanov => "verify-girsanov",
            CommandKind::VerifyKahane => "verify-kahane",
            CommandKind::Tile => "tile",
            CommandKind::TailIndex => "tail-index",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum KernelChoice {
    /// `-ln(|z - w| |z - conj w|)`.
    ExactScaling,
    /// Exact kernel plus the bounded `cos(dx) exp(-|z - conj w|^2)` correction.
    CosGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    pub gamma: f64,
    pub p: f64,
    pub q: f64,
    /// Bulk region `Q`.
    pub region: Rect,
    /// Boundary interval `I`; the projection of `Q` when absent.
    pub interval: Option<Interval>,
    pub localization: Option<f64>,
    /// Resolution for single-resolution commands.
    pub n_cells: usize,
    /// Resolutions of a scan, dyadically spaced.
    pub resolutions: Vec<usize>,
    pub n_samples: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub kernel: KernelChoice,
    pub diag_constant: f64,
    /// Scaling factor for `verify-scaling`, a dyadic rational such as `"1/2"`.
    pub scale: String,
    /// With `q_grid`, turns `scan-moments` into a phase-diagram scan.
    pub p_grid: Vec<f64>,
    pub q_grid: Vec<f64>,
    pub thresholds: ScanThresholds,
    pub functionals: Vec<GirsanovFunctional>,
    pub z_threshold: f64,
    pub preset: String,
    pub tile_kind: TileKind,
    /// Exact side parameter of the tiled cube, e.g. `"3/4"`.
    pub tile_r: String,
    pub levels: u32,
    /// Order statistics for the Hill estimator; `n_samples / 100` when absent.
    pub hill_k: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: CommandKind::ScanMoments,
            gamma: 1.0,
            p: 1.0,
            q: 0.0,
            region: Rect {
                x0: -0.5,
                x1: 0.5,
                y0: 0.0,
                y1: 1.0,
            },
            interval: None,
            localization: None,
            n_cells: 32,
            resolutions: vec![16, 32, 64],
            n_samples: 10_000,
            seed: 0,
            output_dir: PathBuf::from("out"),
            cache_dir: None,
            kernel: KernelChoice::ExactScaling,
            diag_constant: DEFAULT_DIAG_CONSTANT,
            scale: "1/2".into(),
            p_grid: Vec::new(),
            q_grid: Vec::new(),
            thresholds: ScanThresholds::default(),
            functionals: vec![
                GirsanovFunctional::One,
                GirsanovFunctional::BoundaryMass,
                GirsanovFunctional::BulkMass,
            ],
            z_threshold: 3.0,
            preset: "monomial-2d".into(),
            tile_kind: TileKind::Whitney,
            tile_r: "1".into(),
            levels: 3,
            hill_k: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> CliResult<Self> {
        serde_json::from_str(s).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn gamma_param(&self) -> CliResult<GammaParam> {
        GammaParam::new(self.gamma).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn interval(&self) -> Interval {
        self.interval.unwrap_or_else(|| self.region.projection())
    }

    pub fn query(&self, n_cells: usize) -> CliResult<MomentQuery> {
        Ok(MomentQuery {
            gamma: self.gamma_param()?,
            p: self.p,
            q: self.q,
            region: self.region,
            interval: self.interval(),
            localization: self.localization,
            n_cells,
            background: true,
        })
    }

    /// Kernel whose domain covers the region and the interval.
    pub fn kernel_spec(&self) -> CliResult<KernelSpec> {
        let iv = self.interval();
        let radius = [
            self.region.x0.abs(),
            self.region.x1.abs(),
            self.region.y1 / 2.0,
            iv.a.abs(),
            iv.b.abs(),
        ]
        .into_iter()
        .fold(gmclab::kernels::DEFAULT_DOMAIN_RADIUS, f64::max);
        let spec = match self.kernel {
            KernelChoice::ExactScaling => KernelSpec::exact_scaling(),
            KernelChoice::CosGaussian => KernelSpec::general(Correction::CosGaussian),
        };
        spec.with_domain_radius(radius)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn assembly_options(&self) -> AssemblyOptions {
        AssemblyOptions::with_diag_constant(self.diag_constant)
    }

    pub fn scale_factor(&self) -> CliResult<f64> {
        let r = parse_rat(&self.scale).map_err(|e| CliError::Config(format!("scale: {e}")))?;
        Ok(rat_to_f64(&r))
    }

    /// `(p, q)` points of a scan, `p` outermost.
    pub fn grid(&self) -> Vec<(f64, f64)> {
        if self.p_grid.is_empty() || self.q_grid.is_empty() {
            return vec![(self.p, self.q)];
        }
        self.p_grid
            .iter()
            .flat_map(|&p| self.q_grid.iter().map(move |&q| (p, q)))
            .collect()
    }

    pub fn is_phase_scan(&self) -> bool {
        !self.p_grid.is_empty() && !self.q_grid.is_empty()
    }

    /// Checks module preconditions before any sampling.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.gamma_param()?;
        self.region
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let iv = self.interval();
        if !(iv.a < iv.b) {
            return bad(format!("empty interval [{}, {}]", iv.a, iv.b));
        }
        if !(self.diag_constant > 0.0 && self.diag_constant.is_finite()) {
            return bad(format!(
                "diag_constant must be positive, got {}",
                self.diag_constant
            ));
        }
        if self
            .p_grid
            .iter()
            .chain(&self.q_grid)
            .chain([&self.p, &self.q])
            .any(|v| !v.is_finite())
        {
            return bad("exponents must be finite".into());
        }
        if !(self.z_threshold > 0.0) {
            return bad(format!(
                "z_threshold must be positive, got {}",
                self.z_threshold
            ));
        }
        let sampling = !matches!(self.command, CommandKind::VerifyKahane | CommandKind::Tile);
        if sampling && self.n_samples < 2 * MOM_BLOCKS {
            return bad(format!(
                "n_samples must be at least {}, got {}",
                2 * MOM_BLOCKS,
                self.n_samples
            ));
        }
        if sampling && self.n_cells == 0 {
            return bad("n_cells must be positive".into());
        }
        match self.command {
            CommandKind::ScanMoments => {
                let r = &self.resolutions;
                if r.len() < 3 || r[0] == 0 || r.windows(2).any(|w| w[1] != 2 * w[0]) {
                    return bad(format!(
                        "resolutions {r:?} must be at least 3 dyadically spaced values"
                    ));
                }
                if self.p_grid.is_empty() != self.q_grid.is_empty() {
                    return bad("p_grid and q_grid must be given together".into());
                }
                if !(self.thresholds.stable > 0.0
                    && self.thresholds.diverging >= self.thresholds.stable)
                {
                    return bad(format!("invalid slope thresholds {:?}", self.thresholds));
                }
            }
            CommandKind::VerifyScaling => {
                if self.kernel != KernelChoice::ExactScaling {
                    return bad("verify-scaling needs the exact-scaling kernel".into());
                }
                let r = self.scale_factor()?;
                if !(r > 0.0 && r < 1.0) || (r * (1u64 << 40) as f64).fract() != 0.0 {
                    return bad(format!(
                        "scale {} is not a dyadic rational in (0, 1)",
                        self.scale
                    ));
                }
            }
            CommandKind::VerifyGirsanov => {
                if self.localization.is_some() {
                    return bad("verify-girsanov uses unlocalized masses".into());
                }
                if self.functionals.is_empty() {
                    return bad("no functionals to check".into());
                }
            }
            CommandKind::VerifyKahane => {
                if kahane::preset(&self.preset).is_none() {
                    return bad(format!(
                        "unknown preset {:?}; known: {:?}",
                        self.preset,
                        kahane::PRESETS
                    ));
                }
            }
            CommandKind::Tile => {
                let r = parse_rat(&self.tile_r)
                    .map_err(|e| CliError::Config(format!("tile r: {e}")))?;
                if r <= num_zero() {
                    return bad(format!("tile r must be positive, got {}", self.tile_r));
                }
                let min_levels = u32::from(self.tile_kind != TileKind::Whitney);
                if self.levels < min_levels || self.levels > 40 {
                    return bad(format!(
                        "levels must lie in [{min_levels}, 40], got {}",
                        self.levels
                    ));
                }
            }
            CommandKind::TailIndex => {
                let k = self.hill_k.unwrap_or(self.n_samples / 100);
                if k < 4 || k > self.n_samples / 10 {
                    return bad(format!("hill_k {k} must lie in [4, n_samples / 10]"));
                }
            }
        }
        Ok(())
    }
}

fn num_zero() -> gmclab::geometry::Rat {
    gmclab::geometry::Rat::from_integer(0)
}

fn parse_tile_kind(s: &str) -> Result<TileKind, String> {
    s.parse().map_err(|e: gmclab::Error| e.to_string())
}

/// Flags that override fields of the JSON config.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
    /// Localization point `v` on the boundary.
    #[arg(long)]
    pub v: Option<f64>,
    #[arg(long)]
    pub n_cells: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub resolutions: Option<Vec<usize>>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelChoice>,
    #[arg(long)]
    pub diag_constant: Option<f64>,
    /// Scaling factor for verify-scaling, side parameter for tile.
    #[arg(long)]
    pub r: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub p_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub q_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub stable_slope: Option<f64>,
    #[arg(long)]
    pub diverging_slope: Option<f64>,
    #[arg(long)]
    pub z_threshold: Option<f64>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_parser = parse_tile_kind)]
    pub kind: Option<TileKind>,
    #[arg(long)]
    pub levels: Option<u32>,
    /// Order statistics used by the Hill estimator.
    #[arg(long)]
    pub k: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, c: &mut ExperimentConfig) {
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = &self.$flag { c.$field = v.clone(); })*
            };
        }
        set!(gamma => gamma, p => p, q => q, n_cells => n_cells, resolutions => resolutions,
             n_samples => n_samples, seed => seed, output_dir => output_dir, kernel => kernel,
             diag_constant => diag_constant, p_grid => p_grid, q_grid => q_grid,
             z_threshold => z_threshold, preset => preset, kind => tile_kind, levels => levels);
        if let Some(v) = self.v {
            c.localization = Some(v);
        }
        if let Some(d) = &self.cache_dir {
            c.cache_dir = Some(d.clone());
        }
        if let Some(k) = self.k {
            c.hill_k = Some(k);
        }
        if let Some(s) = self.stable_slope {
            c.thresholds.stable = s;
        }
        if let Some(d) = self.diverging_slope {
            c.thresholds.diverging = d;
        }
        if let Some(r) = &self.r {
            match c.command {
                CommandKind::Tile => c.tile_r = r.clone(),
                _ => c.scale = r.clone(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for command in [
            CommandKind::ScanMoments,
            CommandKind::VerifyScaling,
            CommandKind::VerifyGirsanov,
            CommandKind::VerifyKahane,
            CommandKind::Tile,
            CommandKind::TailIndex,
        ] {
            let c = ExperimentConfig {
                command,
                ..Default::default()
            };
            c.validate()
                .unwrap_or_else(|e| panic!("{}: {e}", command.name()));
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"gamma": 1.0, "gama": 2}"#).is_err());
        let c = ExperimentConfig::from_json(r#"{"command": "tile", "tile_r": "3/4"}"#).unwrap();
        assert_eq!(c.command, CommandKind::Tile);
        assert_eq!(c.tile_r, "3/4");
        assert_eq!(c.n_samples, 10_000);
    }

    #[test]
    fn validation_failures() {
        let bad = [
            ExperimentConfig {
                gamma: 2.0,
                ..Default::default()
            },
            ExperimentConfig {
                resolutions: vec![16, 32],
                ..Default::default()
            },
            ExperimentConfig {
                resolutions: vec![16, 24, 32],
                ..Default::default()
            },
            ExperimentConfig {
                command: CommandKind::VerifyScaling,
                scale: "1/3".into(),
                ..Default::default()
            },
            ExperimentConfig {
                command: CommandKind::VerifyScaling,
                kernel: KernelChoice::CosGaussian,
                ..Default::default()
            },
            ExperimentConfig {
                command: CommandKind::VerifyKahane,
                preset: "nope".into(),
                ..Default::default()
            },
            ExperimentConfig {
                command: CommandKind::Tile,
                tile_r: "-1".into(),
                ..Default::default()
            },
            ExperimentConfig {
                command: CommandKind::Tile,
                tile_kind: TileKind::Gamma,
                levels: 0,
                ..Default::default()
            },
            ExperimentConfig {
                command: CommandKind::TailIndex,
                hill_k: Some(5000),
                ..Default::default()
            },
            ExperimentConfig {
                n_samples: 10,
                ..Default::default()
            },
            ExperimentConfig {
                p_grid: vec![0.5],
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(CliError::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn overrides_take_precedence() {
        let mut c = ExperimentConfig {
            command: CommandKind::Tile,
            ..Default::default()
        };
        let o = Overrides {
            gamma: Some(1.5),
            r: Some("3/4".into()),
            resolutions: Some(vec![8, 16, 32]),
            stable_slope: Some(0.1),
            ..Default::default()
        };
        o.apply(&mut c);
        assert_eq!(c.gamma, 1.5);
        assert_eq!(c.tile_r, "3/4");
        assert_eq!(c.scale, "1/2");
        assert_eq!(c.resolutions, vec![8, 16, 32]);
        assert_eq!(c.thresholds.stable, 0.1);
    }

    #[test]
    fn kernel_domain_covers_region() {
        let c = ExperimentConfig {
            region: Rect {
                x0: 0.0,
                x1: 1.0,
                y0: 0.0,
                y1: 1.0,
            },
            ..Default::default()
        };
        assert_eq!(c.kernel_spec().unwrap().domain_radius(), 1.0);
        assert_eq!(
            ExperimentConfig::default()
                .kernel_spec()
                .unwrap()
                .domain_radius(),
            0.5
        );
    }
}
