use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Matrix, Tape, Tensor};
use crate::error::{Error, Result};

/// Added to every squared row norm in [`pair_norm`].
pub const PAIR_NORM_EPS: f64 = 1e-5;

/// Centre the rows of `x` on their mean, then scale every row to unit
/// length, with [`PAIR_NORM_EPS`] inside the norm. Rows that differ from
/// the mean only by rounding error map to (near) zero instead of noise.
pub fn pair_norm(tape: &mut Tape, x: Tensor) -> Result<Tensor> {
    let mean = tape.col_mean(x)?;
    let centered = tape.sub(x, mean)?;
    let pad = tape.constant(Matrix::from_elem((x.rows(), 1), PAIR_NORM_EPS.sqrt()));
    let padded = tape.concat_cols(&[centered, pad])?;
    let norms = tape.row_l2_norm(padded)?;
    tape.div(centered, norms)
}

/// Column-wise max and mean over the nodes of both types, `1 x 2W`.
pub fn readout(tape: &mut Tape, x_f: Tensor, x_d: Tensor) -> Result<Tensor> {
    let all = tape.concat_rows(&[x_f, x_d])?;
    let max = tape.col_max(all)?;
    let mean = tape.col_mean(all)?;
    tape.concat_cols(&[max, mean])
}

/// Inverted dropout with a mask drawn from `seed`.
pub fn dropout(tape: &mut Tape, x: Tensor, rate: f64, seed: u64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if rate == 0.0 {
        return Ok(x);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 - rate;
    let mask = Matrix::from_shape_fn(x.shape(), |_| {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    });
    let mask = tape.constant(mask);
    tape.mul(x, mask)
}

/// `x W + b`.
pub fn linear(tape: &mut Tape, x: Tensor, w: Tensor, b: Tensor) -> Result<Tensor> {
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}
