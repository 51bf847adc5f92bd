//! Command and parameter registry shared by the command line, the HTTP
//! service and the configuration parser.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::io::config::{ParamKind, ParamValue, RunConfig};

#[derive(Debug)]
pub struct ParamSpec {
    pub name: &'static str,
    pub kind: ParamKind,
    /// Default in configuration syntax; empty means unset.
    pub default: &'static str,
    pub help: &'static str,
}

#[derive(Debug)]
pub struct CommandSpec {
    pub name: &'static str,
    pub help: &'static str,
    pub params: &'static [ParamSpec],
}

impl CommandSpec {
    pub fn param(&self, name: &str) -> Option<&'static ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Description plus one line per parameter.
    pub fn usage(&self) -> String {
        let mut s = format!("st {} <file> [options]\n\n{}\n", self.name, self.help);
        if self.params.is_empty() {
            s.push_str("\nNo configuration parameters.\n");
        } else {
            s.push_str(&format!("\nParameters (config section [{}]):\n", self.name));
            for p in self.params {
                let d = if p.default.is_empty() { "unset".to_string() } else { p.default.to_string() };
                s.push_str(&format!("  {:<22} {:<10} default {:<14} {}\n", p.name, p.kind.to_string(), d, p.help));
            }
        }
        s
    }
}

macro_rules! p {
    ($name:literal, $kind:ident, $default:literal, $help:literal) => {
        ParamSpec { name: $name, kind: ParamKind::$kind, default: $default, help: $help }
    };
}

macro_rules! with_defocus {
    ($($rest:expr),* $(,)?) => {
        &[
            p!("z1", Float, "", "focus-to-sample distance for both axes, m (overrides the stored defocus)"),
            p!("z1_ss", Float, "", "slow-scan focus-to-sample distance, m"),
            p!("z1_fs", Float, "", "fast-scan focus-to-sample distance, m"),
            $($rest),*
        ]
    };
}

const Z1_SEARCH: [ParamSpec; 5] = [
    p!("z1_min", Float, "1e-4", "smallest candidate focus-to-sample distance, m"),
    p!("z1_max", Float, "1e-2", "largest candidate focus-to-sample distance, m"),
    p!("z1_steps", Int, "50", "number of candidates per axis"),
    p!("astigmatic", Bool, "False", "search ss and fs distances independently"),
    p!("update_defocus", Bool, "True", "store the best candidate as the working defocus"),
];

pub static COMMANDS: &[CommandSpec] = &[
    CommandSpec {
        name: "simulate",
        help: "Render a synthetic scan from the forward model and write it, with its ground truth, to a new CXI file or fixture directory.",
        params: &[
            p!("format", Text, "cxi", "cxi or fixture"),
            p!("shape", Ints, "128, 128", "detector shape ss, fs"),
            p!("wavelength", Float, "1e-10", "m"),
            p!("distance", Float, "1.0", "sample-to-detector distance, m"),
            p!("z1_ss", Float, "1e-3", "slow-scan focus-to-sample distance, m"),
            p!("z1_fs", Float, "1e-3", "fast-scan focus-to-sample distance, m"),
            p!("x_pixel_size", Float, "55e-6", "m"),
            p!("y_pixel_size", Float, "55e-6", "m"),
            p!("zernike_noll", Ints, "", "Noll indices of injected aberrations"),
            p!("zernike_coefficients", Floats, "", "aberration coefficients, rad"),
            p!("texture", Text, "blobs", "blobs, spokes or hologram"),
            p!("texture_sigma", Float, "2.0", "feature size in reference pixels"),
            p!("texture_contrast", Float, "0.3", "relative contrast (phase amplitude for holograms)"),
            p!("spokes", Int, "36", "spoke count for the spokes texture"),
            p!("positions", Text, "raster", "raster or spiral"),
            p!("scan_rows", Int, "5", "raster rows"),
            p!("scan_cols", Int, "5", "raster columns"),
            p!("scan_points", Int, "25", "spiral points"),
            p!("step", Float, "8.0", "scan step in reference pixels"),
            p!("whitefield", Text, "flat", "flat or gaussian"),
            p!("counts", Float, "1000", "peak white-field counts per pixel"),
            p!("whitefield_width", Float, "0.4", "gaussian width as a fraction of the detector"),
            p!("poisson_noise", Bool, "False", "draw Poisson counts"),
        ],
    },
    CommandSpec {
        name: "make_mask",
        help: "Flag pixels whose time series deviates from their neighbourhood (dead, hot or unstable pixels).",
        params: &[
            p!("kappa", Float, "10", "threshold on the robust deviation score"),
            p!("floor", Float, "1", "counts added to the neighbourhood spread"),
        ],
    },
    CommandSpec {
        name: "make_whitefield",
        help: "Estimate the white-field as the per-pixel median over the good frames.",
        params: &[],
    },
    CommandSpec {
        name: "guess_roi",
        help: "Choose the detector rectangle that holds most of the white-field signal.",
        params: &[p!("fraction", Float, "0.95", "share of the signal kept along each axis")],
    },
    CommandSpec {
        name: "generate_pixel_map",
        help: "Initialise the pixel map (ideal defocus) and the pixel translations for a focus-to-sample distance.",
        params: with_defocus![],
    },
    CommandSpec {
        name: "fit_thon_rings",
        help: "Estimate the focus-to-sample distance from the Fresnel fringes in the power spectrum of the frames.",
        params: &Z1_SEARCH,
    },
    CommandSpec {
        name: "fit_defocus_registration",
        help: "Estimate the focus-to-sample distance as the one giving the sharpest reference image.",
        params: &Z1_SEARCH,
    },
    CommandSpec {
        name: "make_reference",
        help: "Merge the frames into the reference image using the current pixel map and translations.",
        params: with_defocus![],
    },
    CommandSpec {
        name: "update_pixel_map",
        help: "Grid-search each pixel's mapping against the current reference image.",
        params: with_defocus![
            p!("sigma", Float, "5", "Gaussian regularisation width, detector pixels (0 disables)"),
            p!("integrate", Bool, "True", "project the map onto gradient fields"),
            p!("quadratic_refinement", Bool, "True", "paraboloid fit around the best grid point"),
            p!("window", Ints, "4, 4", "search half-widths ss, fs in reference pixels"),
            p!("subpixel_step", Float, "0", "fractional search step (0 uses whole pixels)"),
        ],
    },
    CommandSpec {
        name: "update_translations",
        help: "Refine each frame's translation against the current reference image.",
        params: with_defocus![p!("window", Ints, "1, 1", "search half-widths ss, fs in reference pixels")],
    },
    CommandSpec {
        name: "calc_error",
        help: "Evaluate the normalised error per pixel, per frame, in the reference plane and in total.",
        params: with_defocus![],
    },
    CommandSpec {
        name: "run",
        help: "Alternate reference, pixel-map and translation updates until the total error stops decreasing.",
        params: with_defocus![
            p!("max_iters", Int, "10", "iteration limit"),
            p!("tol", Float, "1e-3", "relative error decrease that counts as converged"),
            p!("sigma", Floats, "5, 3, 1", "regularisation width per iteration (last repeats)"),
            p!("window", Ints, "4, 2, 2", "pixel-map search half-width per iteration (last repeats)"),
            p!("update_translations", Bools, "False, True, True", "refine translations per iteration (last repeats)"),
            p!("translation_window", Ints, "1", "translation search half-width"),
            p!("integrate", Bool, "True", "project the map onto gradient fields"),
            p!("quadratic_refinement", Bool, "True", "paraboloid fit around the best grid point"),
        ],
    },
    CommandSpec {
        name: "calculate_phase",
        help: "Integrate the phase gradient implied by the pixel map.",
        params: with_defocus![],
    },
    CommandSpec {
        name: "zernike",
        help: "Fit Zernike polynomials to the phase over the pupil.",
        params: with_defocus![
            p!("max_noll", Int, "15", "highest Noll index fitted"),
        ],
    },
    CommandSpec {
        name: "focus_profile",
        help: "Propagate the recovered wavefront to planes around the focus.",
        params: with_defocus![
            p!("z_min", Float, "-1e-4", "first plane relative to the focus, m"),
            p!("z_max", Float, "1e-4", "last plane relative to the focus, m"),
            p!("nz", Int, "21", "number of planes"),
        ],
    },
    CommandSpec {
        name: "calculate_sample_thickness",
        help: "Single-material thickness from the reference image (transport-of-intensity filter).",
        params: with_defocus![
            p!("delta", Float, "", "refractive-index decrement"),
            p!("mu", Float, "", "linear attenuation coefficient, 1/m"),
            p!("propagation_distance", Float, "", "effective distance, m (default: effective defocus)"),
        ],
    },
    CommandSpec {
        name: "split_half_recon",
        help: "Update the pixel map from two random halves of the data and report the spread of the difference.",
        params: with_defocus![
            p!("sigma", Float, "0", "Gaussian regularisation width, detector pixels"),
            p!("integrate", Bool, "False", "project the maps onto gradient fields"),
            p!("quadratic_refinement", Bool, "True", "paraboloid fit around the best grid point"),
            p!("window", Ints, "2, 2", "search half-widths ss, fs in reference pixels"),
        ],
    },
    CommandSpec {
        name: "serve",
        help: "Serve the inspector HTTP API and user interface for one scan file.",
        params: &[
            p!("port", Int, "8008", "TCP port"),
            p!("static_dir", Text, "", "directory with the built user interface"),
        ],
    },
];

pub fn find_command(name: &str) -> Option<&'static CommandSpec> {
    COMMANDS.iter().find(|c| c.name == name)
}

/// Registry lookup for the configuration parser. Keys in the global section
/// are typed when every command that accepts them agrees, and kept as text
/// otherwise to be typed per command. `Err` marks an unknown section.
#[allow(clippy::result_unit_err)]
pub fn param_kind(section: &str, key: &str) -> std::result::Result<Option<ParamKind>, ()> {
    if section.is_empty() {
        let mut kinds = COMMANDS.iter().filter_map(|c| c.param(key)).map(|p| p.kind);
        return Ok(kinds.next().map(|k| if kinds.all(|o| o == k) { k } else { ParamKind::Text }));
    }
    let cmd = find_command(section).ok_or(())?;
    Ok(cmd.param(key).map(|p| p.kind))
}

/// Resolved parameters of one command: defaults, then configuration, then overrides.
#[derive(Debug, Clone)]
pub struct Params {
    pub command: &'static CommandSpec,
    values: BTreeMap<&'static str, ParamValue>,
}

impl Params {
    pub fn defaults(command: &'static CommandSpec) -> Self {
        Self::resolve(command, None, &BTreeMap::new()).expect("registry defaults parse")
    }

    pub fn resolve(
        command: &'static CommandSpec,
        config: Option<&RunConfig>,
        overrides: &BTreeMap<String, String>,
    ) -> Result<Self> {
        if let Some(k) = overrides.keys().find(|k| command.param(k).is_none()) {
            return Err(Error::Usage(format!("{} does not accept parameter {k}", command.name)));
        }
        let mut values = BTreeMap::new();
        for p in command.params {
            let bad = |v: &dyn std::fmt::Display| Error::Usage(format!("{}: cannot parse \"{v}\" as {}", p.name, p.kind));
            let value = if let Some(raw) = overrides.get(p.name) {
                Some(ParamValue::parse(p.kind, raw).ok_or_else(|| bad(raw))?)
            } else if let Some(v) = config.and_then(|c| c.get(command.name, p.name)) {
                match v {
                    ParamValue::Text(raw) if p.kind != ParamKind::Text => {
                        Some(ParamValue::parse(p.kind, raw).ok_or_else(|| bad(raw))?)
                    }
                    // Registry-typed values; numbers given as ints are widened.
                    ParamValue::Int(i) if p.kind == ParamKind::Float => Some(ParamValue::Float(*i as f64)),
                    v => Some(ParamValue::parse(p.kind, &v.to_string()).ok_or_else(|| bad(v))?),
                }
            } else if !p.default.is_empty() {
                Some(ParamValue::parse(p.kind, p.default).expect("registry default parses"))
            } else {
                None
            };
            if let Some(v) = value {
                values.insert(p.name, v);
            }
        }
        Ok(Self { command, values })
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        debug_assert!(self.command.param(name).is_some(), "{name} is not a parameter of {}", self.command.name);
        self.values.get(name)
    }

    fn missing(&self, name: &str) -> Error {
        Error::Usage(format!("{} needs parameter {name}", self.command.name))
    }

    pub fn opt_f64(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(ParamValue::as_f64)
    }

    pub fn f64(&self, name: &str) -> Result<f64> {
        self.opt_f64(name).ok_or_else(|| self.missing(name))
    }

    pub fn usize(&self, name: &str) -> Result<usize> {
        match self.get(name) {
            Some(ParamValue::Int(v)) if *v >= 0 => Ok(*v as usize),
            Some(v) => Err(Error::Usage(format!("{name} = {v} must be a non-negative integer"))),
            None => Err(self.missing(name)),
        }
    }

    pub fn bool(&self, name: &str) -> Result<bool> {
        match self.get(name) {
            Some(ParamValue::Bool(v)) => Ok(*v),
            _ => Err(self.missing(name)),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name) {
            Some(ParamValue::Text(v)) => Ok(v),
            _ => Err(self.missing(name)),
        }
    }

    pub fn f64s(&self, name: &str) -> Vec<f64> {
        self.get(name).and_then(ParamValue::as_f64s).unwrap_or_default()
    }

    pub fn usizes(&self, name: &str) -> Result<Vec<usize>> {
        let v = self.get(name).and_then(ParamValue::as_i64s).unwrap_or_default();
        v.into_iter()
            .map(|x| usize::try_from(x).map_err(|_| Error::Usage(format!("{name} entries must be >= 0"))))
            .collect()
    }

    pub fn bools(&self, name: &str) -> Vec<bool> {
        self.get(name).and_then(ParamValue::as_bools).unwrap_or_default()
    }
}
