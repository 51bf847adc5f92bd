//! Named processing steps that read a scan file, run one operation and
//! store its outputs back into the file's output group.

mod commands;

pub use commands::{find_command, param_kind, CommandSpec, ParamSpec, Params, COMMANDS};

use std::fmt;
use std::path::PathBuf;

use ndarray::{Array1, Array2, ArrayD, Ix2, Ix3};

use crate::analysis::{
    calculate_phase, calculate_sample_thickness, focus_profile, split_half_recon, zernike_fit, Phase, ThicknessParams,
    ZRange,
};
use crate::defocus::{fit_defocus_registration, fit_thon_rings, Z1Grid};
use crate::error::{Error, Result};
use crate::geometry::{generate_pixel_map, make_geometry, translations_to_pixels};
use crate::io::{self, CxiPaths, Value};
use crate::model::{Geometry, PixelMap, PixelMask, PixelTranslations, ReferenceImage, Roi, ScanData, Whitefield};
use crate::preprocess::{guess_roi, make_mask, make_whitefield, MaskOptions};
use crate::recon::{
    calc_error, make_reference, run_main_loop, update_pixel_map, update_translations, IterationOptions, LoopOptions,
    LoopProgress, ReconInput, SearchWindow, UpdateOptions,
};
use crate::sim::{simulate_scan, Positions, SimSpec, Texture, WhitefieldModel};

/// Where a step reads and writes.
#[derive(Debug, Clone)]
pub struct Context {
    pub path: PathBuf,
    pub paths: CxiPaths,
    /// Overrides the stored region of interest.
    pub roi: Option<Roi>,
    pub seed: u64,
}

impl Context {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into(), paths: CxiPaths::default(), roi: None, seed: 0 }
    }

    fn group(&self) -> &str {
        &self.paths.output_group
    }

    fn dataset(&self, name: &str) -> String {
        format!("{}/{name}", self.group())
    }

    fn read(&self, name: &str) -> Result<Option<ArrayD<f64>>> {
        io::read_f64_dataset(&self.path, &self.dataset(name))
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Progress {
    /// Fraction of the step completed.
    Fraction(f64),
    Iteration(LoopProgress),
}

#[derive(Debug, Clone, Default)]
pub struct Summary {
    pub command: String,
    pub total_error: Option<f64>,
    /// Full dataset paths (or file paths) written.
    pub outputs: Vec<String>,
    /// Total error per iteration, for `run`.
    pub history: Vec<f64>,
    pub notes: Vec<String>,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.command)?;
        if let Some(e) = self.total_error {
            write!(f, " total error {e:.6e};")?;
        }
        for n in &self.notes {
            write!(f, " {n};")?;
        }
        write!(f, " wrote {}", self.outputs.join(", "))
    }
}

struct Outputs<'a> {
    ctx: &'a Context,
    values: Vec<(&'static str, Value)>,
}

impl<'a> Outputs<'a> {
    fn new(ctx: &'a Context) -> Self {
        Self { ctx, values: Vec::new() }
    }

    fn add(&mut self, name: &'static str, v: impl Into<Value>) -> &mut Self {
        self.values.push((name, v.into()));
        self
    }

    fn write(self, summary: &mut Summary) -> Result<()> {
        let refs: Vec<(&str, Value)> = self.values.into_iter().collect();
        io::write_results(&self.ctx.path, self.ctx.group(), &refs)?;
        summary.outputs.extend(refs.iter().map(|(n, _)| self.ctx.dataset(n)));
        Ok(())
    }
}

/// Scan plus the stored preprocessing products.
struct Workspace {
    scan: ScanData,
    mask: PixelMask,
    whitefield: Whitefield,
    roi: Roi,
}

fn array<D: ndarray::Dimension>(a: ArrayD<f64>, what: &str, shape: &[usize]) -> Result<ndarray::Array<f64, D>> {
    if a.shape() != shape {
        return Err(Error::shape(what, shape, a.shape()));
    }
    Ok(a.into_dimensionality().expect("shape checked"))
}

impl Workspace {
    fn load(ctx: &Context) -> Result<Self> {
        let scan = io::load_scan(&ctx.path, &ctx.paths, None)?;
        let shape = scan.frame_shape();
        let mask = match io::read_f64_dataset(&ctx.path, &ctx.paths.mask)? {
            Some(m) => PixelMask { mask: array::<Ix2>(m, &ctx.paths.mask, &[shape.0, shape.1])?.mapv(|v| v != 0.0) },
            None => PixelMask::all_good(shape),
        };
        let whitefield = match io::read_f64_dataset(&ctx.path, &ctx.paths.whitefield)? {
            Some(w) => Whitefield { w: array::<Ix2>(w, &ctx.paths.whitefield, &[shape.0, shape.1])? },
            None => {
                log::info!("no stored white-field, using the median of the good frames");
                make_whitefield(&scan, Some(&mask))?
            }
        };
        let roi = match (ctx.roi, ctx.read("roi")?) {
            (Some(r), _) => r,
            (None, Some(r)) => {
                let r: Vec<usize> = r.iter().map(|&v| v.max(0.0) as usize).collect();
                if r.len() != 4 {
                    return Err(Error::shape(&ctx.dataset("roi"), [4], [r.len()]));
                }
                Roi::new(r[0], r[1], r[2], r[3], shape)?
            }
            (None, None) => Roi::full(shape),
        };
        Ok(Self { scan, mask, whitefield, roi })
    }

    fn input(&self, geom: &Geometry) -> Result<ReconInput<'_>> {
        Ok(ReconInput::new(&self.scan, &self.whitefield, &self.mask, &self.roi)?.with_sampling(geom.du, geom.dv))
    }
}

/// Defocus from the parameters, else the stored `defocus` dataset.
fn defocus(ctx: &Context, params: &Params) -> Result<(f64, f64)> {
    let z1 = params.opt_f64("z1");
    let ss = params.opt_f64("z1_ss").or(z1);
    let fs = params.opt_f64("z1_fs").or(z1);
    let stored = ctx.read("defocus")?;
    let stored = |k: usize| stored.as_ref().and_then(|d| d.iter().nth(k).or_else(|| d.iter().next()).copied());
    match (ss.or_else(|| stored(0)), fs.or_else(|| stored(1))) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::Usage(format!(
            "no defocus: set z1 (or z1_ss and z1_fs) or run fit_thon_rings, fit_defocus_registration or generate_pixel_map to store {}",
            ctx.dataset("defocus")
        ))),
    }
}

fn load_pixel_map(ctx: &Context, shape: (usize, usize)) -> Result<PixelMap> {
    match ctx.read("pixel_map")? {
        Some(u) => Ok(PixelMap { u: array::<Ix3>(u, "pixel_map", &[2, shape.0, shape.1])? }),
        None => Ok(generate_pixel_map(shape)),
    }
}

fn load_translations(ctx: &Context, scan: &ScanData, geom: &Geometry) -> Result<PixelTranslations> {
    match ctx.read("pixel_translations")? {
        Some(t) => PixelTranslations::from_array(&array::<Ix2>(t, "pixel_translations", &[scan.n_frames(), 2])?),
        None => Ok(translations_to_pixels(scan, geom)),
    }
}

fn load_reference(ctx: &Context) -> Result<Option<ReferenceImage>> {
    let parts = ["reference_image", "reference_weights", "reference_valid", "reference_origin", "reference_sampling"]
        .map(|n| ctx.read(n));
    let [Ok(Some(i_ref)), Ok(Some(wsum)), Ok(Some(valid)), Ok(Some(origin)), Ok(Some(sampling))] = parts else {
        return Ok(None);
    };
    let shape = i_ref.shape().to_vec();
    if shape.len() != 2 || origin.len() != 2 || sampling.len() != 2 {
        return Ok(None);
    }
    let o: Vec<f64> = origin.iter().copied().collect();
    let d: Vec<f64> = sampling.iter().copied().collect();
    Ok(Some(ReferenceImage {
        i_ref: array::<Ix2>(i_ref, "reference_image", &shape)?,
        wsum: array::<Ix2>(wsum, "reference_weights", &shape)?,
        valid: array::<Ix2>(valid, "reference_valid", &shape)?.mapv(|v| v != 0.0),
        origin: (o[0], o[1]),
        du: d[0],
        dv: d[1],
    }))
}

fn add_reference(out: &mut Outputs, r: &ReferenceImage) {
    out.add("reference_image", r.i_ref.clone())
        .add("reference_weights", r.wsum.clone())
        .add("reference_valid", r.valid.clone())
        .add("reference_origin", vec![r.origin.0, r.origin.1])
        .add("reference_sampling", vec![r.du, r.dv]);
}

fn add_errors(out: &mut Outputs, input: &ReconInput, m: &crate::model::ErrorMetrics) {
    let frames: Vec<f64> = input.good_frames.iter().map(|&n| m.per_frame[n]).collect();
    let index: Array1<i64> = input.good_frames.iter().map(|&n| n as i64).collect();
    out.add("error_total", m.total)
        .add("error_frame", frames)
        .add("error_frame_index", index)
        .add("error_pixel", m.per_pixel.clone())
        .add("error_reference", m.reference_plane.clone());
}

/// State shared by the reconstruction steps.
struct Recon {
    ws: Workspace,
    geom: Geometry,
    u: PixelMap,
    t: PixelTranslations,
}

impl Recon {
    /// Stored pixel map and translations are in reference pixels of the
    /// stored defocus, so they are only reused while the defocus is unchanged.
    fn load(ctx: &Context, params: &Params) -> Result<Self> {
        let ws = Workspace::load(ctx)?;
        let (z1_ss, z1_fs) = defocus(ctx, params)?;
        let geom = make_geometry(z1_ss, z1_fs, &ws.scan)?;
        let stored = ctx.read("defocus")?.map(|d| d.iter().copied().collect::<Vec<f64>>());
        let shape = ws.scan.frame_shape();
        let (u, t) = if stored.as_deref().is_none_or(|d| d == [z1_ss, z1_fs]) {
            (load_pixel_map(ctx, shape)?, load_translations(ctx, &ws.scan, &geom)?)
        } else {
            log::warn!("defocus differs from the stored one, starting from the ideal pixel map");
            (generate_pixel_map(shape), translations_to_pixels(&ws.scan, &geom))
        };
        Ok(Self { ws, geom, u, t })
    }

    /// Stored reference when it matches the current sampling, else a fresh one.
    fn reference(&self, ctx: &Context, input: &ReconInput) -> Result<ReferenceImage> {
        match load_reference(ctx)? {
            Some(r) if r.du == input.du && r.dv == input.dv => Ok(r),
            _ => make_reference(input, &self.u, &self.t),
        }
    }
}

fn window(v: &[usize], what: &str) -> Result<SearchWindow> {
    match *v {
        [h] => Ok(SearchWindow::square(h)),
        [a, b] => Ok(SearchWindow::new(a, b)),
        _ => Err(Error::Usage(format!("{what} needs one or two half-widths"))),
    }
}

fn z1_grid(params: &Params) -> Result<Z1Grid> {
    Z1Grid::linspace(params.f64("z1_min")?, params.f64("z1_max")?, params.usize("z1_steps")?, params.bool("astigmatic")?)
}

fn phase_of(recon: &Recon, input: &ReconInput) -> Result<Phase> {
    let s = &recon.ws.scan;
    calculate_phase(&recon.u, &recon.geom, s.wavelength, s.x_pixel_size, s.y_pixel_size, &input.mask)
}

/// Per-iteration schedule from list-valued parameters; the last entry repeats.
fn schedule(params: &Params) -> Result<LoopOptions> {
    let sigma = params.f64s("sigma");
    let win = params.usizes("window")?;
    let tr = params.bools("update_translations");
    let tw = window(&params.usizes("translation_window")?, "translation_window")?;
    let n = sigma.len().max(win.len()).max(tr.len()).max(1);
    let pick = |k: usize, len: usize| k.min(len.saturating_sub(1));
    if sigma.is_empty() || win.is_empty() || tr.is_empty() {
        return Err(Error::Usage("sigma, window and update_translations need at least one entry".into()));
    }
    let update = |s: f64| UpdateOptions {
        quadratic_refinement: params.bool("quadratic_refinement").unwrap_or(true),
        integrate: params.bool("integrate").unwrap_or(true),
        sigma: s,
    };
    let schedule = (0..n)
        .map(|k| IterationOptions {
            window: SearchWindow::square(win[pick(k, win.len())]),
            update: update(sigma[pick(k, sigma.len())]),
            update_translations: tr[pick(k, tr.len())],
            translation_window: tw,
        })
        .collect();
    Ok(LoopOptions { schedule, max_iters: params.usize("max_iters")?, tol: params.f64("tol")? })
}

fn sim_spec(params: &Params, seed: u64) -> Result<SimSpec> {
    let shape = params.usizes("shape")?;
    let [ss, fs] = shape[..] else {
        return Err(Error::Usage("shape needs two entries".into()));
    };
    let noll = params.usizes("zernike_noll")?;
    let coeffs = params.f64s("zernike_coefficients");
    if noll.len() != coeffs.len() {
        return Err(Error::Usage("zernike_noll and zernike_coefficients differ in length".into()));
    }
    let sigma = params.f64("texture_sigma")?;
    let contrast = params.f64("texture_contrast")?;
    let texture = match params.text("texture")? {
        "blobs" => Texture::Blobs { sigma, contrast },
        "spokes" => Texture::Spokes { count: params.usize("spokes")?, contrast },
        "hologram" => Texture::Hologram { sigma, amplitude: contrast },
        t => return Err(Error::Usage(format!("unknown texture {t}"))),
    };
    let step = params.f64("step")?;
    let positions = match params.text("positions")? {
        "raster" => Positions::Raster { rows: params.usize("scan_rows")?, cols: params.usize("scan_cols")?, step },
        "spiral" => Positions::Spiral { count: params.usize("scan_points")?, step },
        p => return Err(Error::Usage(format!("unknown positions {p}"))),
    };
    let counts = params.f64("counts")?;
    let whitefield = match params.text("whitefield")? {
        "flat" => WhitefieldModel::Flat { counts },
        "gaussian" => {
            let w = params.f64("whitefield_width")?;
            WhitefieldModel::Gaussian { peak: counts, width_ss: w, width_fs: w }
        }
        w => return Err(Error::Usage(format!("unknown whitefield {w}"))),
    };
    Ok(SimSpec {
        shape: (ss, fs),
        wavelength: params.f64("wavelength")?,
        distance: params.f64("distance")?,
        z1_ss: params.f64("z1_ss")?,
        z1_fs: params.f64("z1_fs")?,
        x_pixel_size: params.f64("x_pixel_size")?,
        y_pixel_size: params.f64("y_pixel_size")?,
        zernike: noll.into_iter().zip(coeffs).collect(),
        whitefield,
        texture,
        positions,
        poisson_noise: params.bool("poisson_noise")?,
        seed,
    })
}

fn simulate(ctx: &Context, params: &Params, summary: &mut Summary) -> Result<()> {
    let sim = simulate_scan(&sim_spec(params, ctx.seed)?)?;
    summary.notes.push(format!("peak displacement {:.3} px", sim.peak_displacement));
    match params.text("format")? {
        "fixture" => {
            io::save_fixture(&sim.scan, &ctx.path)?;
            summary.outputs.push(ctx.path.display().to_string());
            return Ok(());
        }
        "cxi" => {}
        f => return Err(Error::Usage(format!("unknown format {f}"))),
    }
    io::save_scan(&ctx.path, &sim.scan, &ctx.paths)?;
    summary.outputs.push(ctx.path.display().to_string());
    let t = &sim.truth;
    let group = format!("{}/ground_truth", ctx.group());
    let values: Vec<(&str, Value)> = vec![
        ("pixel_map", t.pixel_map.u.clone().into()),
        ("phase", t.phase.clone().into()),
        ("reference_image", t.reference.i_ref.clone().into()),
        ("reference_origin", vec![t.reference.origin.0, t.reference.origin.1].into()),
        ("pixel_translations", t.translations.to_array().into()),
        ("whitefield", t.whitefield.w.clone().into()),
        ("defocus", vec![t.geometry.z1_ss, t.geometry.z1_fs].into()),
        ("zernike_noll", Array1::from_iter(t.zernike_coeffs.iter().map(|c| c.0 as i64)).into()),
        ("zernike_coefficients", t.zernike_coeffs.iter().map(|c| c.1).collect::<Vec<f64>>().into()),
    ];
    io::write_results(&ctx.path, &group, &values)?;
    summary.outputs.push(group);
    Ok(())
}

/// Runs `command` against the file in `ctx`.
pub fn execute(ctx: &Context, params: &Params, progress: &mut dyn FnMut(Progress)) -> Result<Summary> {
    let command = params.command.name;
    let mut summary = Summary { command: command.to_string(), ..Summary::default() };
    let mut out = Outputs::new(ctx);
    progress(Progress::Fraction(0.0));
    match command {
        "simulate" => {
            simulate(ctx, params, &mut summary)?;
            progress(Progress::Fraction(1.0));
            return Ok(summary);
        }
        "serve" => return Err(Error::Usage("serve is not a processing step".into())),
        "make_mask" => {
            let scan = io::load_scan(&ctx.path, &ctx.paths, None)?;
            let m = make_mask(&scan, MaskOptions { kappa: params.f64("kappa")?, floor: params.f64("floor")? });
            summary.notes.push(format!("{} bad pixels", m.mask.len() - m.count_good()));
            out.add("mask", m.mask);
        }
        "make_whitefield" => {
            let ws = Workspace::load(ctx)?;
            out.add("whitefield", make_whitefield(&ws.scan, Some(&ws.mask))?.w);
        }
        "guess_roi" => {
            let ws = Workspace::load(ctx)?;
            let r = guess_roi(&ws.whitefield, params.f64("fraction")?)?;
            let v: Array1<i64> = [r.ss_min, r.ss_max, r.fs_min, r.fs_max].iter().map(|&x| x as i64).collect();
            summary.notes.push(format!("roi {}..{}, {}..{}", r.ss_min, r.ss_max, r.fs_min, r.fs_max));
            out.add("roi", v);
        }
        "generate_pixel_map" => {
            let scan = io::load_scan(&ctx.path, &ctx.paths, None)?;
            let (z1_ss, z1_fs) = defocus(ctx, params)?;
            let geom = make_geometry(z1_ss, z1_fs, &scan)?;
            out.add("pixel_map", generate_pixel_map(scan.frame_shape()).u)
                .add("pixel_translations", translations_to_pixels(&scan, &geom).to_array())
                .add("defocus", vec![z1_ss, z1_fs]);
        }
        "fit_thon_rings" => {
            let ws = Workspace::load(ctx)?;
            let mask = ws.mask.within(&ws.roi);
            let fit = fit_thon_rings(&ws.scan, &ws.whitefield.w, &mask, &z1_grid(params)?)?;
            summary.notes.push(format!("z1 {:.4e}, {:.4e} m, score {:.3}", fit.z1_ss, fit.z1_fs, fit.score));
            if !fit.reliable {
                summary.notes.push("fit unreliable".into());
            }
            let cands = z1_grid(params)?.candidates();
            out.add("thon_z1", vec![fit.z1_ss, fit.z1_fs])
                .add("thon_score", fit.score)
                .add("thon_reliable", Array1::from(vec![fit.reliable]))
                .add("thon_scores", fit.scores)
                .add("thon_candidates", pairs(&cands))
                .add("thon_power_spectrum", fit.power_spectrum);
            if params.bool("update_defocus")? {
                out.add("defocus", vec![fit.z1_ss, fit.z1_fs]);
            }
        }
        "fit_defocus_registration" => {
            let ws = Workspace::load(ctx)?;
            // Candidate geometries only rescale the sampling; any valid one opens the input.
            let geom = make_geometry(1.0, 1.0, &ws.scan)?;
            let input = ws.input(&geom)?;
            let u = generate_pixel_map(ws.scan.frame_shape());
            let fit = fit_defocus_registration(&input, &u, &z1_grid(params)?)?;
            summary.notes.push(format!("z1 {:.4e}, {:.4e} m", fit.z1_ss, fit.z1_fs));
            out.add("registration_z1", vec![fit.z1_ss, fit.z1_fs])
                .add("registration_contrast", fit.contrast)
                .add("registration_candidates", pairs(&fit.candidates));
            if params.bool("update_defocus")? {
                out.add("defocus", vec![fit.z1_ss, fit.z1_fs]);
            }
        }
        "make_reference" => {
            let r = Recon::load(ctx, params)?;
            let input = r.ws.input(&r.geom)?;
            let reference = make_reference(&input, &r.u, &r.t)?;
            summary.notes.push(format!("{:.1}% of the reference grid valid", 100.0 * reference.valid_fraction()));
            add_reference(&mut out, &reference);
        }
        "update_pixel_map" => {
            let r = Recon::load(ctx, params)?;
            let input = r.ws.input(&r.geom)?;
            let reference = r.reference(ctx, &input)?;
            let mut w = window(&params.usizes("window")?, "window")?;
            let step = params.f64("subpixel_step")?;
            if step > 0.0 {
                w = w.with_subpixel_grid(step)?;
            }
            let opts = UpdateOptions {
                quadratic_refinement: params.bool("quadratic_refinement")?,
                integrate: params.bool("integrate")?,
                sigma: params.f64("sigma")?,
            };
            let up = update_pixel_map(&input, &reference, &r.u, &r.t, &w, &opts)?;
            summary.total_error = Some(up.error.sum());
            out.add("pixel_map", up.pixel_map.u).add("pixel_map_error", up.error);
        }
        "update_translations" => {
            let r = Recon::load(ctx, params)?;
            let input = r.ws.input(&r.geom)?;
            let reference = r.reference(ctx, &input)?;
            let w = window(&params.usizes("window")?, "window")?;
            let t = update_translations(&input, &reference, &r.u, &r.t, &w)?;
            out.add("pixel_translations", t.to_array());
        }
        "calc_error" => {
            let r = Recon::load(ctx, params)?;
            let input = r.ws.input(&r.geom)?;
            let reference = r.reference(ctx, &input)?;
            let m = calc_error(&input, &reference, &r.u, &r.t)?;
            summary.total_error = Some(m.total);
            add_errors(&mut out, &input, &m);
        }
        "run" => {
            let r = Recon::load(ctx, params)?;
            let input = r.ws.input(&r.geom)?;
            let opts = schedule(params)?;
            let res = run_main_loop(&input, &r.u, &r.t, &opts, |p| progress(Progress::Iteration(*p)))?;
            summary.total_error = Some(res.metrics.total);
            summary.history = res.history.clone();
            summary.notes.push(format!(
                "{} iterations{}",
                res.iterations,
                if res.converged { ", converged" } else { "" }
            ));
            out.add("pixel_map", res.pixel_map.u.clone())
                .add("pixel_translations", res.translations.to_array())
                .add("defocus", vec![r.geom.z1_ss, r.geom.z1_fs])
                .add("error_history", res.history.clone());
            add_reference(&mut out, &res.reference);
            add_errors(&mut out, &input, &res.metrics);
        }
        "calculate_phase" => {
            let r = Recon::load(ctx, params)?;
            let input = r.ws.input(&r.geom)?;
            let phase = phase_of(&r, &input)?;
            if !phase.converged {
                summary.notes.push("integration did not converge".into());
            }
            summary.notes.push(format!("gradient residual {:.3e} rad/px", phase.gradient_residual_rms));
            out.add("phase", phase.phi).add("phase_mask", phase.mask);
        }
        "zernike" => {
            let r = Recon::load(ctx, params)?;
            let input = r.ws.input(&r.geom)?;
            let phase = phase_of(&r, &input)?;
            let fit = zernike_fit(&phase.phi, &phase.mask, params.usize("max_noll")?, None)?;
            summary.notes.push(format!("residual {:.3e} rad", fit.residual_rms));
            out.add("zernike_noll", Array1::from_iter(fit.coefficients.iter().map(|c| c.0 as i64)))
                .add("zernike_coefficients", fit.coefficients.iter().map(|c| c.1).collect::<Vec<f64>>())
                .add("zernike_raw_coefficients", fit.raw_coefficients.iter().map(|c| c.1).collect::<Vec<f64>>())
                .add("zernike_residual_rms", fit.residual_rms);
        }
        "focus_profile" => {
            let r = Recon::load(ctx, params)?;
            let input = r.ws.input(&r.geom)?;
            let phase = phase_of(&r, &input)?;
            let s = &r.ws.scan;
            let z = ZRange { z_min: params.f64("z_min")?, z_max: params.f64("z_max")?, nz: params.usize("nz")? };
            let wf = Whitefield { w: r.ws.whitefield.w.clone() * input.mask.mapv(|m| if m { 1.0 } else { 0.0 }) };
            let vol = focus_profile(&phase, &wf, &r.geom, s.wavelength, s.x_pixel_size, s.y_pixel_size, z)?;
            out.add("focus_profile", vol.intensities)
                .add("focus_z", vol.z_values)
                .add("focus_pixel_size", vec![vol.pixel_size.0, vol.pixel_size.1])
                .add("focus_slice_power", vol.slice_power);
        }
        "calculate_sample_thickness" => {
            let r = Recon::load(ctx, params)?;
            let input = r.ws.input(&r.geom)?;
            let reference = r.reference(ctx, &input)?;
            let distance =
                params.opt_f64("propagation_distance").unwrap_or(0.5 * (r.geom.zbar_ss + r.geom.zbar_fs));
            let p = ThicknessParams::for_reference(&reference, params.f64("delta")?, params.f64("mu")?, distance);
            let t = calculate_sample_thickness(&reference, &p)?;
            if t.clipped > 0 {
                summary.notes.push(format!("{} cells clipped", t.clipped));
            }
            out.add("thickness", t.thickness).add("thickness_valid", t.valid);
        }
        "split_half_recon" => {
            let r = Recon::load(ctx, params)?;
            let input = r.ws.input(&r.geom)?;
            let reference = r.reference(ctx, &input)?;
            let w = window(&params.usizes("window")?, "window")?;
            let opts = UpdateOptions {
                quadratic_refinement: params.bool("quadratic_refinement")?,
                integrate: params.bool("integrate")?,
                sigma: params.f64("sigma")?,
            };
            let sh = split_half_recon(&input, &reference, &r.u, &r.t, &w, &opts, ctx.seed)?;
            summary.notes.push(format!("sigma {:.4} px", sh.sigma));
            let edges = Array2::from_shape_fn((2, sh.histogram[0].edges.len()), |(c, k)| sh.histogram[c].edges[k]);
            let counts =
                Array2::from_shape_fn((2, sh.histogram[0].counts.len()), |(c, k)| sh.histogram[c].counts[k] as i64);
            out.add("split_half_sigma", vec![sh.sigma_components[0], sh.sigma_components[1], sh.sigma])
                .add("split_half_histogram_edges", edges)
                .add("split_half_histogram_counts", counts)
                .add("split_half_compared", sh.compared);
        }
        other => return Err(Error::Usage(format!("unknown command {other}"))),
    }
    out.write(&mut summary)?;
    progress(Progress::Fraction(1.0));
    Ok(summary)
}

fn pairs(c: &[(f64, f64)]) -> Array2<f64> {
    Array2::from_shape_fn((c.len(), 2), |(k, a)| if a == 0 { c[k].0 } else { c[k].1 })
}
