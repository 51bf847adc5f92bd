use crate::error::{Error, Result};
use crate::model::{ErrorMetrics, PixelMap, PixelTranslations, ReferenceImage};

use super::metrics::calc_error;
use super::pixel_map::{update_pixel_map, SearchWindow, UpdateOptions};
use super::reference::make_reference;
use super::translations::update_translations;
use super::ReconInput;

/// Settings for one pass of the main loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationOptions {
    pub window: SearchWindow,
    pub update: UpdateOptions,
    pub update_translations: bool,
    pub translation_window: SearchWindow,
}

/// Coarse-to-fine schedule: sigma 5, 3, then 1 detector pixel; window +-4
/// then +-2; translations refined from the second iteration on. The last
/// entry repeats for later iterations.
pub fn default_schedule() -> Vec<IterationOptions> {
    let it = |sigma: f64, half: usize, translations: bool| IterationOptions {
        window: SearchWindow::square(half),
        update: UpdateOptions { quadratic_refinement: true, integrate: true, sigma },
        update_translations: translations,
        translation_window: SearchWindow::square(1),
    };
    vec![it(5.0, 4, false), it(3.0, 2, true), it(1.0, 2, true)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOptions {
    pub schedule: Vec<IterationOptions>,
    pub max_iters: usize,
    /// Stop when the relative decrease of the total error between two
    /// iterations with identical settings falls below this.
    pub tol: f64,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self { schedule: default_schedule(), max_iters: 10, tol: 1e-3 }
    }
}

impl LoopOptions {
    pub fn iteration(&self, k: usize) -> &IterationOptions {
        &self.schedule[k.min(self.schedule.len() - 1)]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LoopProgress {
    /// Completed iterations (0 for the initial state).
    pub iteration: usize,
    pub max_iters: usize,
    pub total_error: f64,
}

#[derive(Debug, Clone)]
pub struct LoopResult {
    pub pixel_map: PixelMap,
    pub reference: ReferenceImage,
    pub translations: PixelTranslations,
    /// Total error of the initial state followed by one entry per iteration.
    pub history: Vec<f64>,
    pub metrics: ErrorMetrics,
    pub iterations: usize,
    pub converged: bool,
}

/// Alternates reference formation, pixel-map update, translation update and
/// error evaluation. Every history entry is the error of the state's own
/// reference, which is then reused by the next iteration's updates.
pub fn run_main_loop(
    input: &ReconInput,
    u: &PixelMap,
    t: &PixelTranslations,
    opts: &LoopOptions,
    mut progress: impl FnMut(&LoopProgress),
) -> Result<LoopResult> {
    if opts.schedule.is_empty() {
        return Err(Error::invalid("iteration schedule is empty"));
    }
    if !(opts.tol >= 0.0) {
        return Err(Error::invalid("tol must be >= 0"));
    }
    let mut u = u.clone();
    let mut t = t.clone();
    let mut reference = make_reference(input, &u, &t)?;
    let mut metrics = calc_error(input, &reference, &u, &t)?;
    let mut history = vec![metrics.total];
    progress(&LoopProgress { iteration: 0, max_iters: opts.max_iters, total_error: metrics.total });

    let mut converged = false;
    let mut iterations = 0;
    for k in 0..opts.max_iters {
        let it = opts.iteration(k);
        u = update_pixel_map(input, &reference, &u, &t, &it.window, &it.update)?.pixel_map;
        if it.update_translations {
            t = update_translations(input, &reference, &u, &t, &it.translation_window)?;
        }
        reference = make_reference(input, &u, &t)?;
        metrics = calc_error(input, &reference, &u, &t)?;
        if !metrics.total.is_finite() {
            return Err(Error::Numerical(format!("total error is not finite after iteration {}", k + 1)));
        }
        let previous = *history.last().expect("history starts non-empty");
        history.push(metrics.total);
        iterations = k + 1;
        log::info!("iteration {iterations}: total error {:.6e}", metrics.total);
        progress(&LoopProgress { iteration: iterations, max_iters: opts.max_iters, total_error: metrics.total });
        if k > 0 && opts.iteration(k - 1) == it {
            let decrease = if previous > 0.0 { (previous - metrics.total) / previous } else { 0.0 };
            if decrease < opts.tol {
                converged = true;
                break;
            }
        }
    }
    Ok(LoopResult { pixel_map: u, reference, translations: t, history, metrics, iterations, converged })
}
