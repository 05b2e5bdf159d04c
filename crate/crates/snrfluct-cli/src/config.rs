//! Scenario configuration: a TOML file with one section per pipeline stage,
//! mapped onto library inputs.
//!
//! All validation failures surface as `Error::InvalidInput` so the driver
//! can report them under the config-error exit code.

use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use serde::Deserialize;

use snrfluct::equilibrium::SolverSettings;
use snrfluct::profiles::{sample_rayleigh_taps, PowerClass, PowerClassTable};
use snrfluct::report::read_profile_csv;
use snrfluct::{EntryLaw, Error, Result, VarianceProfile};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scenario: ScenarioSection,
    power_table: Option<PowerTableSection>,
    #[serde(default)]
    solver: SolverSection,
    #[serde(default)]
    simulate: SimulateSection,
    report: Option<ReportSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSection {
    model: String,
    n: usize,
    k: usize,
    rho: f64,
    #[serde(default = "default_law")]
    law: String,
    #[serde(default)]
    seed: u64,
    taps: Option<usize>,
    profile_csv: Option<String>,
    d: Option<Vec<f64>>,
    dtilde: Option<Vec<f64>>,
    d_fill: Option<f64>,
    dtilde_fill: Option<f64>,
    surface: Option<Vec<f64>>,
}

fn default_law() -> String {
    "qpsk".to_string()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerTableSection {
    base: f64,
    multipliers: Vec<f64>,
    proportions: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSection {
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default = "default_max_iter")]
    max_iter: usize,
    #[serde(default)]
    damping: f64,
}

fn default_tol() -> f64 {
    1e-12
}

fn default_max_iter() -> usize {
    10_000
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
            damping: 0.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateSection {
    #[serde(default = "default_trials")]
    trials: usize,
    #[serde(default)]
    workers: usize,
}

fn default_trials() -> usize {
    10_000
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            trials: default_trials(),
            workers: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportSection {
    sweep: Vec<usize>,
}

/// Transmission model selecting how the variance profile is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    GeneralGrid,
    Separable,
    CdmaFlat,
    MccdmaUplink,
    MccdmaDownlink,
    ContinuousProfile,
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general-grid" => Ok(Model::GeneralGrid),
            "separable" => Ok(Model::Separable),
            "cdma-flat" => Ok(Model::CdmaFlat),
            "mccdma-uplink" => Ok(Model::MccdmaUplink),
            "mccdma-downlink" => Ok(Model::MccdmaDownlink),
            "continuous-profile" => Ok(Model::ContinuousProfile),
            other => Err(Error::InvalidInput(format!(
                "unknown model '{other}', expected one of general-grid, separable, \
                 cdma-flat, mccdma-uplink, mccdma-downlink, continuous-profile"
            ))),
        }
    }
}

/// A fully validated scenario; every command is a pure function of this
/// plus the output directory.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: Model,
    pub n: usize,
    pub k: usize,
    pub rho: f64,
    pub law: EntryLaw,
    pub seed: u64,
    pub trials: usize,
    pub workers: usize,
    pub solver: SolverSettings,
    pub sweep: Option<Vec<usize>>,
    taps: usize,
    power_table: Option<PowerClassTable>,
    profile_csv: Option<PathBuf>,
    d: Option<Vec<f64>>,
    dtilde: Option<Vec<f64>>,
    d_fill: Option<f64>,
    dtilde_fill: Option<f64>,
    surface: Option<(f64, f64, f64)>,
}

impl Scenario {
    /// Reads, parses, and validates a config file. `seed_override` comes
    /// from the command line and wins over the config value.
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidInput(format!("cannot read config {}: {e}", path.display()))
        })?;
        let file: ConfigFile = toml::from_str(&text).map_err(|e| {
            Error::InvalidInput(format!("config parse error in {}:\n{e}", path.display()))
        })?;
        let s = &file.scenario;
        let model = Model::from_str(&s.model)?;
        if s.n == 0 || s.k == 0 {
            return Err(Error::InvalidInput(format!(
                "scenario dimensions n={}, k={} must be positive",
                s.n, s.k
            )));
        }
        if !s.rho.is_finite() || s.rho <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "scenario rho is {}, must be finite and strictly positive",
                s.rho
            )));
        }
        let law = EntryLaw::from_str(&s.law)?;
        if file.simulate.trials == 0 {
            return Err(Error::InvalidInput("simulate trials must be positive".into()));
        }
        let power_table = match &file.power_table {
            Some(p) => Some(p.to_table()?),
            None => None,
        };
        let needs_powers = matches!(
            model,
            Model::CdmaFlat | Model::MccdmaUplink | Model::MccdmaDownlink
        );
        if needs_powers && power_table.is_none() {
            return Err(Error::InvalidInput(format!(
                "model '{}' requires a [power_table] section",
                s.model
            )));
        }
        let multipath = matches!(model, Model::MccdmaUplink | Model::MccdmaDownlink);
        if multipath && s.taps.is_none() {
            return Err(Error::InvalidInput(format!(
                "model '{}' requires scenario taps (the channel length L)",
                s.model
            )));
        }
        let surface = match (model, &s.surface) {
            (Model::ContinuousProfile, Some(v)) if v.len() == 3 => {
                let (a, b, c) = (v[0], v[1], v[2]);
                // Affine surfaces attain their minimum over the unit square
                // at a corner; all four must be nonnegative.
                for corner in [a, a + b, a + c, a + b + c] {
                    if !corner.is_finite() || corner < 0.0 {
                        return Err(Error::InvalidInput(format!(
                            "surface {a} + {b} x + {c} y is negative on the unit square"
                        )));
                    }
                }
                Some((a, b, c))
            }
            (Model::ContinuousProfile, Some(v)) => {
                return Err(Error::InvalidInput(format!(
                    "surface must have exactly 3 coefficients [a, b, c], got {}",
                    v.len()
                )));
            }
            (Model::ContinuousProfile, None) => {
                return Err(Error::InvalidInput(
                    "model 'continuous-profile' requires scenario surface = [a, b, c]".into(),
                ));
            }
            _ => None,
        };
        if model == Model::GeneralGrid && s.profile_csv.is_none() {
            return Err(Error::InvalidInput(
                "model 'general-grid' requires scenario profile_csv".into(),
            ));
        }
        if model == Model::Separable {
            match (&s.d, s.d_fill) {
                (None, None) => {
                    return Err(Error::InvalidInput(
                        "model 'separable' requires scenario d or d_fill".into(),
                    ))
                }
                (Some(_), Some(_)) => {
                    return Err(Error::InvalidInput(
                        "scenario d and d_fill are mutually exclusive".into(),
                    ))
                }
                _ => {}
            }
            match (&s.dtilde, s.dtilde_fill) {
                (None, None) => {
                    return Err(Error::InvalidInput(
                        "model 'separable' requires scenario dtilde or dtilde_fill".into(),
                    ))
                }
                (Some(_), Some(_)) => {
                    return Err(Error::InvalidInput(
                        "scenario dtilde and dtilde_fill are mutually exclusive".into(),
                    ))
                }
                _ => {}
            }
        }
        // Relative profile paths anchor at the config file, not the working
        // directory.
        let profile_csv = s.profile_csv.as_ref().map(|raw| {
            let p = PathBuf::from(raw);
            if p.is_absolute() {
                p
            } else {
                path.parent().unwrap_or(Path::new(".")).join(p)
            }
        });
        Ok(Scenario {
            model,
            n: s.n,
            k: s.k,
            rho: s.rho,
            law,
            seed: seed_override.unwrap_or(s.seed),
            trials: file.simulate.trials,
            workers: file.simulate.workers,
            solver: SolverSettings {
                tol: file.solver.tol,
                max_iter: file.solver.max_iter,
                damping: file.solver.damping,
            },
            sweep: file.report.map(|r| r.sweep),
            taps: s.taps.unwrap_or(0),
            power_table,
            profile_csv,
            d: s.d.clone(),
            dtilde: s.dtilde.clone(),
            d_fill: s.d_fill,
            dtilde_fill: s.dtilde_fill,
            surface,
        })
    }

    fn powers(&self, k: usize) -> Result<Vec<f64>> {
        self.power_table
            .as_ref()
            .expect("models without a power table never call this")
            .expand(k)
    }

    /// Builds the variance profile at the requested size. Sweeps call this
    /// with scaled dimensions; the channel draw follows the campaign seed.
    pub fn build_profile(&self, n: usize, k: usize, seed: u64) -> Result<VarianceProfile> {
        match self.model {
            Model::GeneralGrid => {
                let path = self.profile_csv.as_ref().unwrap();
                let file = std::fs::File::open(path).map_err(|e| {
                    Error::InvalidInput(format!(
                        "cannot read profile CSV {}: {e}",
                        path.display()
                    ))
                })?;
                let grid = read_profile_csv(BufReader::new(file))?;
                if grid.nrows() != n || grid.ncols() != k + 1 {
                    return Err(Error::InvalidInput(format!(
                        "profile CSV {} is {}x{}, scenario expects {}x{}",
                        path.display(),
                        grid.nrows(),
                        grid.ncols(),
                        n,
                        k + 1
                    )));
                }
                VarianceProfile::general(grid)
            }
            Model::Separable => {
                let d = expand_factor(&self.d, self.d_fill, n, "d")?;
                let dtilde = expand_factor(&self.dtilde, self.dtilde_fill, k + 1, "dtilde")?;
                VarianceProfile::separable(d, dtilde)
            }
            Model::CdmaFlat => {
                let powers = self.powers(k)?;
                let load = k as f64 / n as f64;
                VarianceProfile::separable(
                    DVector::from_element(n, 1.0),
                    DVector::from_iterator(k + 1, powers.iter().map(|p| load * p)),
                )
            }
            Model::MccdmaUplink => {
                let channels = sample_rayleigh_taps(self.taps, k + 1, n, seed)?;
                VarianceProfile::mccdma_uplink(&channels, &self.powers(k)?)
            }
            Model::MccdmaDownlink => {
                // One physical channel shared by all users; powers become
                // the user-side factor.
                let channel = sample_rayleigh_taps(self.taps, 1, n, seed)?.remove(0);
                let load = k as f64 / n as f64;
                let d = DVector::from_iterator(
                    n,
                    channel.freq_response().iter().map(|h| load * h.norm_sqr()),
                );
                VarianceProfile::separable(d, DVector::from_vec(self.powers(k)?))
            }
            Model::ContinuousProfile => {
                let (a, b, c) = self.surface.unwrap();
                VarianceProfile::from_surface(|x, y| a + b * x + c * y, n, k)
            }
        }
    }
}

impl PowerTableSection {
    fn to_table(&self) -> Result<PowerClassTable> {
        if self.multipliers.len() != self.proportions.len() {
            return Err(Error::InvalidInput(format!(
                "power_table has {} multipliers but {} proportions",
                self.multipliers.len(),
                self.proportions.len()
            )));
        }
        let classes = self
            .multipliers
            .iter()
            .zip(&self.proportions)
            .map(|(&multiplier, &proportion)| PowerClass {
                multiplier,
                proportion,
            })
            .collect();
        PowerClassTable::new(self.base, classes)
    }
}

fn expand_factor(
    explicit: &Option<Vec<f64>>,
    fill: Option<f64>,
    len: usize,
    name: &str,
) -> Result<DVector<f64>> {
    match (explicit, fill) {
        (Some(v), _) => {
            if v.len() != len {
                return Err(Error::InvalidInput(format!(
                    "scenario {name} has {} entries, expected {len}",
                    v.len()
                )));
            }
            Ok(DVector::from_vec(v.clone()))
        }
        (None, Some(f)) => Ok(DVector::from_element(len, f)),
        (None, None) => unreachable!("validated at load"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("scenario.toml");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn loads_separable_fill_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "[scenario]\nmodel = \"separable\"\nn = 4\nk = 3\nrho = 1.0\n\
             d_fill = 1.0\ndtilde_fill = 1.0\n",
        );
        let sc = Scenario::load(&path, None).unwrap();
        assert_eq!(sc.trials, 10_000);
        assert_eq!(sc.law, EntryLaw::Qpsk);
        let profile = sc.build_profile(sc.n, sc.k, sc.seed).unwrap();
        assert_eq!(profile.receive_dim(), 4);
        assert_eq!(profile.interferers(), 3);
        assert!(profile.separable_factors().is_some());
    }

    #[test]
    fn seed_override_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "[scenario]\nmodel = \"separable\"\nn = 4\nk = 3\nrho = 1.0\nseed = 5\n\
             d_fill = 1.0\ndtilde_fill = 1.0\n",
        );
        assert_eq!(Scenario::load(&path, None).unwrap().seed, 5);
        assert_eq!(Scenario::load(&path, Some(9)).unwrap().seed, 9);
    }

    #[test]
    fn negative_rho_is_rejected_at_parse_stage() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "[scenario]\nmodel = \"separable\"\nn = 4\nk = 3\nrho = -1.0\n\
             d_fill = 1.0\ndtilde_fill = 1.0\n",
        );
        let err = Scenario::load(&path, None).unwrap_err();
        assert!(err.to_string().contains("rho"), "{err}");
    }

    #[test]
    fn unknown_keys_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "[scenario]\nmodel = \"separable\"\nn = 4\nk = 3\nrho = 1.0\n\
             d_fill = 1.0\ndtilde_fill = 1.0\ntypo_field = 2\n",
        );
        let err = Scenario::load(&path, None).unwrap_err();
        assert!(err.to_string().contains("typo_field"), "{err}");
    }

    #[test]
    fn model_specific_requirements_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let uplink_no_table = write_config(
            dir.path(),
            "[scenario]\nmodel = \"mccdma-uplink\"\nn = 8\nk = 4\nrho = 1.0\ntaps = 5\n",
        );
        let err = Scenario::load(&uplink_no_table, None).unwrap_err();
        assert!(err.to_string().contains("power_table"), "{err}");

        let uplink_no_taps = write_config(
            dir.path(),
            "[scenario]\nmodel = \"mccdma-uplink\"\nn = 8\nk = 4\nrho = 1.0\n\
             [power_table]\nbase = 1.0\nmultipliers = [1.0]\nproportions = [1.0]\n",
        );
        let err = Scenario::load(&uplink_no_taps, None).unwrap_err();
        assert!(err.to_string().contains("taps"), "{err}");

        let surface_negative = write_config(
            dir.path(),
            "[scenario]\nmodel = \"continuous-profile\"\nn = 8\nk = 4\nrho = 1.0\n\
             surface = [0.1, -1.0, 0.2]\n",
        );
        let err = Scenario::load(&surface_negative, None).unwrap_err();
        assert!(err.to_string().contains("negative"), "{err}");
    }

    #[test]
    fn profile_csv_resolves_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("grid.csv"), "1.0,0.5\n2.0,0.25\n").unwrap();
        let path = write_config(
            dir.path(),
            "[scenario]\nmodel = \"general-grid\"\nn = 2\nk = 1\nrho = 1.0\n\
             profile_csv = \"grid.csv\"\n",
        );
        let sc = Scenario::load(&path, None).unwrap();
        let profile = sc.build_profile(2, 1, 0).unwrap();
        assert_eq!(profile.sigma2()[(1, 0)], 2.0);
        // A size mismatch between config dims and the CSV is an input error.
        assert!(sc.build_profile(3, 1, 0).is_err());
    }

    #[test]
    fn downlink_profile_is_separable_with_power_user_factor() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "[scenario]\nmodel = \"mccdma-downlink\"\nn = 8\nk = 4\nrho = 1.0\ntaps = 3\n\
             [power_table]\nbase = 2.0\nmultipliers = [1.0, 3.0]\nproportions = [0.5, 0.5]\n",
        );
        let sc = Scenario::load(&path, None).unwrap();
        let profile = sc.build_profile(8, 4, 1).unwrap();
        let factors = profile.separable_factors().unwrap();
        assert_eq!(factors.dtilde[0], 2.0);
        assert_eq!(factors.dtilde.len(), 5);
        // d carries the load-scaled channel gain, so it varies across rows.
        assert!(factors.d.iter().any(|&x| (x - factors.d[0]).abs() > 1e-12));
    }

    #[test]
    fn cdma_flat_matches_load_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "[scenario]\nmodel = \"cdma-flat\"\nn = 16\nk = 8\nrho = 1.0\n\
             [power_table]\nbase = 1.0\nmultipliers = [1.0, 2.0]\nproportions = [0.5, 0.5]\n",
        );
        let sc = Scenario::load(&path, None).unwrap();
        let profile = sc.build_profile(16, 8, 0).unwrap();
        let factors = profile.separable_factors().unwrap();
        assert!(factors.d.iter().all(|&x| x == 1.0));
        // K/N = 1/2, base power 1 for the user of interest.
        assert_eq!(factors.dtilde[0], 0.5);
    }
}
