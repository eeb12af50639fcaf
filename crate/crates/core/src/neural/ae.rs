use super::arch::AeArchitecture;
use crate::autodiff::{Tape, Var};
use crate::error::Result;

fn dense(tape: &mut Tape, w: &[Var], x: Var, act: crate::autodiff::Activation) -> Result<Var> {
    let z = tape.matmul(x, w[0])?;
    let z = tape.add_row_bias(z, w[1])?;
    Ok(tape.activation(z, act))
}

fn conv(tape: &mut Tape, w: &[Var], x: Var, stride: usize) -> Result<Var> {
    let z = tape.conv1d_periodic(x, w[0], stride)?;
    tape.add_channel_bias(z, w[1])
}

/// One encoder half: `x` of shape `(B, c0·N)` to a latent of shape `(B, half_latent)`.
pub(crate) fn encode_half(
    tape: &mut Tape,
    arch: &AeArchitecture,
    w: &[Var],
    x: Var,
) -> Result<Var> {
    let act = arch.activation;
    let batch = tape.shape(x)[0];
    let mut h = tape.reshape(x, &[batch, arch.channels_base(), arch.input_length])?;
    let mut i = 0;
    for _ in 0..arch.n_blocks {
        h = conv(tape, &w[i..i + 2], h, 1)?;
        h = tape.activation(h, act);
        h = conv(tape, &w[i + 2..i + 4], h, 2)?;
        i += 4;
    }
    h = conv(tape, &w[i..i + 2], h, 1)?;
    h = tape.activation(h, act);
    i += 2;
    let mut h = tape.reshape(h, &[batch, arch.flat_size()])?;
    let layers = arch.encoder_dense().len() - 1;
    for l in 0..layers {
        let a = if l + 1 == layers {
            crate::autodiff::Activation::None
        } else {
            act
        };
        h = dense(tape, &w[i..i + 2], h, a)?;
        i += 2;
    }
    Ok(h)
}

/// One decoder half: latent `(B, half_latent)` to `(B, c0·N)`.
pub(crate) fn decode_half(
    tape: &mut Tape,
    arch: &AeArchitecture,
    w: &[Var],
    z: Var,
) -> Result<Var> {
    let act = arch.activation;
    let batch = tape.shape(z)[0];
    let mut h = z;
    let layers = arch.encoder_dense().len() - 1;
    let mut i = 0;
    for _ in 0..layers {
        h = dense(tape, &w[i..i + 2], h, act)?;
        i += 2;
    }
    let (cf, lf) = arch.bottleneck();
    h = tape.reshape(h, &[batch, cf, lf])?;
    for b in (0..arch.n_blocks).rev() {
        h = tape.upsample2_smooth(h, w[i])?;
        h = tape.add_channel_bias(h, w[i + 1])?;
        h = tape.activation(h, act);
        h = conv(tape, &w[i + 2..i + 4], h, 1)?;
        if b != 0 {
            h = tape.activation(h, act);
        }
        i += 4;
    }
    tape.reshape(h, &[batch, arch.channels_base() * arch.input_length])
}

/// Full encoder: standardized states `(B, 2N)` laid out `(q, p)` to latents `(B, 2K)`.
pub(crate) fn encode(
    tape: &mut Tape,
    arch: &AeArchitecture,
    halves: &[Vec<Var>],
    x: Var,
) -> Result<Var> {
    if halves.len() == 1 {
        return encode_half(tape, arch, &halves[0], x);
    }
    let n = arch.input_length;
    let q = tape.slice_cols(x, 0, n)?;
    let p = tape.slice_cols(x, n, n)?;
    let zq = encode_half(tape, arch, &halves[0], q)?;
    let zp = encode_half(tape, arch, &halves[1], p)?;
    tape.concat_cols(&[zq, zp])
}

/// Full decoder: latents `(B, 2K)` to states `(B, 2N)`.
pub(crate) fn decode(
    tape: &mut Tape,
    arch: &AeArchitecture,
    halves: &[Vec<Var>],
    z: Var,
) -> Result<Var> {
    if halves.len() == 1 {
        return decode_half(tape, arch, &halves[0], z);
    }
    let k = arch.half_latent();
    let zq = tape.slice_cols(z, 0, k)?;
    let zp = tape.slice_cols(z, k, k)?;
    let q = decode_half(tape, arch, &halves[0], zq)?;
    let p = decode_half(tape, arch, &halves[1], zp)?;
    tape.concat_cols(&[q, p])
}
