use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{nll_and_gradient, sequence_nll, GruError, GruNetwork};

/// Largest hidden width the checker accepts.
const MAX_CHECK_HIDDEN: usize = 32;
/// Denominator floor for the relative error of near-zero gradients. With
/// eps = 1e-5 the central difference of an O(1) loss carries ~1e-10 of
/// roundoff, so smaller gradients are compared in absolute terms.
pub const REL_FLOOR: f64 = 2e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    /// Coordinates per block; smaller blocks are checked exhaustively.
    pub num_coords: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            num_coords: 200,
            epsilon: 1e-5,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares backpropagated gradients against central differences.
pub fn gradient_check(
    net: &GruNetwork<f64>,
    inputs: &[Vec<f64>],
    targets: &[usize],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, GruError> {
    let (_, analytic) = nll_and_gradient(net, inputs, targets)?;
    check_gradient_against(net, inputs, targets, &analytic, opts)
}

/// Like [`gradient_check`] but for an externally supplied gradient.
pub fn check_gradient_against(
    net: &GruNetwork<f64>,
    inputs: &[Vec<f64>],
    targets: &[usize],
    analytic: &GruNetwork<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, GruError> {
    if let Some(&h) = net.dims.hidden.iter().find(|&&h| h > MAX_CHECK_HIDDEN) {
        return Err(GruError::TooLargeForCheck(h));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let names: Vec<String> = net.blocks().into_iter().map(|(n, _)| n).collect();
    let analytic_blocks: Vec<Vec<f64>> = analytic
        .blocks()
        .into_iter()
        .map(|(_, b)| b.to_vec())
        .collect();
    let mut probe = net.clone();
    let mut blocks = Vec::with_capacity(names.len());

    for (b, name) in names.into_iter().enumerate() {
        let len = analytic_blocks[b].len();
        let coords: Vec<usize> = if len <= opts.num_coords {
            (0..len).collect()
        } else {
            index::sample(&mut rng, len, opts.num_coords).into_vec()
        };
        let mut report = BlockReport {
            name,
            checked: coords.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for c in coords {
            let original = probe.blocks_mut()[b][c];
            probe.blocks_mut()[b][c] = original + opts.epsilon;
            let plus = sequence_nll(&probe, inputs, targets)?;
            probe.blocks_mut()[b][c] = original - opts.epsilon;
            let minus = sequence_nll(&probe, inputs, targets)?;
            probe.blocks_mut()[b][c] = original;
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let a = analytic_blocks[b][c];
            let err = relative_error(a, numeric);
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst_index = c;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        blocks.push(report);
    }
    let max_rel_error = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    let passed = blocks
        .iter()
        .all(|b| b.max_rel_error < opts.tolerance || opts.tolerance.is_infinite());
    Ok(GradCheckReport {
        blocks,
        max_rel_error,
        passed,
    })
}
