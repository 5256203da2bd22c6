//! Spectral ops: orthonormal 2-D DCT-II per channel, center rotation of a
//! spectrum, the Self-Mix transform, high-frequency corner noise, and
//! low/high band reconstruction.
//!
//! Normalization is orthonormal (per-axis scale `√(1/N)` for the DC row,
//! `√(2/N)` otherwise), so `idct2` is the exact transpose of `dct2`, Parseval
//! holds, and round-trips are identities to ~1e-12. Transform outputs are
//! deliberately not clipped to `[0,1]`: mixed images are gradient probes, and
//! clipping would break the linearity these ops are tested against.

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::tensor::Tensor;

/// Per-channel DCT-II coefficients of an `[H, W, C]` image; same shape as
/// the source image by construction.
#[derive(Debug, Clone)]
pub struct Spectrum {
    coeffs: Tensor,
}

impl Spectrum {
    /// Wrap a raw `[H, W, C]` coefficient tensor.
    pub fn new(coeffs: Tensor) -> Result<Spectrum> {
        if coeffs.shape().len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "spectrum",
                detail: format!("need [H, W, C], got {:?}", coeffs.shape()),
            });
        }
        Ok(Spectrum { coeffs })
    }

    pub fn coeffs(&self) -> &Tensor {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut Tensor {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Tensor {
        self.coeffs
    }

    pub fn shape(&self) -> &[usize] {
        self.coeffs.shape()
    }
}

/// Row-major `n×n` orthonormal DCT-II basis:
/// `basis[k*n + i] = s(k) · cos(π(2i+1)k / (2n))`.
fn dct_basis(n: usize) -> Vec<f64> {
    let mut basis = vec![0.0; n * n];
    let norm0 = (1.0 / n as f64).sqrt();
    let norm = (2.0 / n as f64).sqrt();
    for k in 0..n {
        let s = if k == 0 { norm0 } else { norm };
        for i in 0..n {
            basis[k * n + i] =
                s * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    basis
}

/// One separable pass along the row (W) axis: `out[y,k,·] = Σ_x B[k,x]·src[y,x,·]`,
/// or with `transpose` the adjoint `out[y,n,·] = Σ_k B[k,n]·src[y,k,·]`.
fn pass_w(src: &[f64], h: usize, w: usize, c: usize, basis: &[f64], transpose: bool) -> Vec<f64> {
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for k in 0..w {
            let obase = (y * w + k) * c;
            for x in 0..w {
                let b = if transpose {
                    basis[x * w + k]
                } else {
                    basis[k * w + x]
                };
                if b == 0.0 {
                    continue;
                }
                let sbase = (y * w + x) * c;
                for ch in 0..c {
                    out[obase + ch] += b * src[sbase + ch];
                }
            }
        }
    }
    out
}

/// One separable pass along the column (H) axis, same convention as `pass_w`.
fn pass_h(src: &[f64], h: usize, w: usize, c: usize, basis: &[f64], transpose: bool) -> Vec<f64> {
    let mut out = vec![0.0; h * w * c];
    let row = w * c;
    for k in 0..h {
        let orow = k * row;
        for y in 0..h {
            let b = if transpose {
                basis[y * h + k]
            } else {
                basis[k * h + y]
            };
            if b == 0.0 {
                continue;
            }
            let srow = y * row;
            for i in 0..row {
                out[orow + i] += b * src[srow + i];
            }
        }
    }
    out
}

fn check_image(op: &'static str, image: &Tensor) -> Result<(usize, usize, usize)> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("need [H, W, C], got {s:?}"),
        });
    }
    Ok((s[0], s[1], s[2]))
}

/// Orthonormal 2-D DCT-II, applied independently per channel (rows, then
/// columns).
pub fn dct2(image: &Tensor) -> Result<Spectrum> {
    let (h, w, c) = check_image("dct2", image)?;
    let bw = dct_basis(w);
    let bh = dct_basis(h);
    let tmp = pass_w(image.data(), h, w, c, &bw, false);
    let out = pass_h(&tmp, h, w, c, &bh, false);
    Spectrum::new(Tensor::new(&[h, w, c], out))
}

/// Exact inverse of [`dct2`]; output values may leave `[0,1]`, no clipping.
pub fn idct2(spec: &Spectrum) -> Tensor {
    let s = spec.shape();
    let (h, w, c) = (s[0], s[1], s[2]);
    let bw = dct_basis(w);
    let bh = dct_basis(h);
    let tmp = pass_h(spec.coeffs.data(), h, w, c, &bh, true);
    let out = pass_w(&tmp, h, w, c, &bw, true);
    Tensor::new(&[h, w, c], out)
}

/// Rotate each channel of a spectrum by `beta` radians about the geometric
/// center `((H−1)/2, (W−1)/2)`. Destination cells sample the source through
/// bilinear interpolation; samples outside the grid contribute zero.
pub fn rotate_spectrum(spec: &Spectrum, beta: f64) -> Result<Spectrum> {
    if !beta.is_finite() || beta.abs() > std::f64::consts::PI {
        return Err(Error::InvalidArgument(format!(
            "rotation angle {beta} outside [-pi, pi]"
        )));
    }
    let s = spec.shape();
    let (h, w, c) = (s[0], s[1], s[2]);
    let src = spec.coeffs.data();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = beta.sin_cos();
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        let dy = y as f64 - cy;
        for x in 0..w {
            let dx = x as f64 - cx;
            // Inverse mapping: where in the source does this cell come from.
            let sy = cy + cos * dy + sin * dx;
            let sx = cx - sin * dy + cos * dx;
            let y0 = sy.floor();
            let x0 = sx.floor();
            let wy = sy - y0;
            let wx = sx - x0;
            let obase = (y * w + x) * c;
            for (dy2, dx2, wgt) in [
                (0.0, 0.0, (1.0 - wy) * (1.0 - wx)),
                (0.0, 1.0, (1.0 - wy) * wx),
                (1.0, 0.0, wy * (1.0 - wx)),
                (1.0, 1.0, wy * wx),
            ] {
                if wgt == 0.0 {
                    continue;
                }
                let yy = y0 + dy2;
                let xx = x0 + dx2;
                if yy < 0.0 || yy >= h as f64 || xx < 0.0 || xx >= w as f64 {
                    continue;
                }
                let sbase = (yy as usize * w + xx as usize) * c;
                for ch in 0..c {
                    out[obase + ch] += wgt * src[sbase + ch];
                }
            }
        }
    }
    Spectrum::new(Tensor::new(&[h, w, c], out))
}

/// Self-Mix: `idct2(dct2(x) + mu · rotate(dct2(x), beta))`.
///
/// `mu = 0` short-circuits to an exact copy of the input, so degenerate
/// configurations stay bitwise stable instead of picking up round-trip noise.
pub fn self_mix(image: &Tensor, mu: f64, beta: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::InvalidArgument(format!(
            "mixing strength {mu} outside [0, 1]"
        )));
    }
    check_image("self_mix", image)?;
    if mu == 0.0 {
        return Ok(image.clone());
    }
    let spec = dct2(image)?;
    let rotated = rotate_spectrum(&spec, beta)?;
    let mixed = spec
        .coeffs()
        .zip_map(rotated.coeffs(), |s, r| s + mu * r);
    Ok(idct2(&Spectrum::new(mixed)?))
}

fn check_tau(tau: usize, h: usize, w: usize) -> Result<()> {
    if tau < 1 || tau > h.min(w) {
        return Err(Error::InvalidArgument(format!(
            "corner size {tau} outside [1, {}]",
            h.min(w)
        )));
    }
    Ok(())
}

/// Add i.i.d. Gaussian(0, sigma²) noise to the `tau×tau` lower-right corner
/// of a spectrum (rows ≥ H−tau and cols ≥ W−tau, all channels), in place.
/// Every coefficient outside that corner keeps its exact bits.
pub fn hf_corner_noise_spectrum(
    spec: &mut Spectrum,
    tau: usize,
    sigma: f64,
    rng: &mut RandomStream,
) -> Result<()> {
    let s = spec.shape();
    let (h, w, c) = (s[0], s[1], s[2]);
    check_tau(tau, h, w)?;
    let data = spec.coeffs_mut().data_mut();
    for y in (h - tau)..h {
        for x in (w - tau)..w {
            let base = (y * w + x) * c;
            for ch in 0..c {
                data[base + ch] += rng.gaussian(0.0, sigma);
            }
        }
    }
    Ok(())
}

/// Image-level corner noise: `idct2(dct2(x) + corner noise)`.
pub fn hf_corner_noise(
    image: &Tensor,
    tau: usize,
    sigma: f64,
    rng: &mut RandomStream,
) -> Result<Tensor> {
    let mut spec = dct2(image)?;
    hf_corner_noise_spectrum(&mut spec, tau, sigma, rng)?;
    Ok(idct2(&spec))
}

/// Default noise scale for [`hf_corner_noise`]: a tenth of the mean absolute
/// coefficient inside the corner region.
pub fn corner_sigma_default(spec: &Spectrum, tau: usize) -> Result<f64> {
    let s = spec.shape();
    let (h, w, c) = (s[0], s[1], s[2]);
    check_tau(tau, h, w)?;
    let data = spec.coeffs().data();
    let mut total = 0.0;
    for y in (h - tau)..h {
        for x in (w - tau)..w {
            let base = (y * w + x) * c;
            for ch in 0..c {
                total += data[base + ch].abs();
            }
        }
    }
    Ok(0.1 * total / (tau * tau * c) as f64)
}

/// Which side of the `tau` split a band reconstruction keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    /// Upper-left `tau×tau` square of the spectrum (rows < tau and cols < tau).
    Low,
    /// Everything outside that square.
    High,
}

/// Reconstruct an image from one frequency band only: zero the other band's
/// coefficients and invert. The two bands partition the spectrum, so
/// low + high equals the original image (within transform tolerance).
pub fn band_reconstruct(image: &Tensor, tau: usize, band: Band) -> Result<Tensor> {
    let (h, w, c) = check_image("band_reconstruct", image)?;
    if tau > h.min(w) {
        return Err(Error::InvalidArgument(format!(
            "band split {tau} exceeds min extent {}",
            h.min(w)
        )));
    }
    let mut spec = dct2(image)?;
    let data = spec.coeffs_mut().data_mut();
    for y in 0..h {
        for x in 0..w {
            let in_low = y < tau && x < tau;
            let keep = match band {
                Band::Low => in_low,
                Band::High => !in_low,
            };
            if !keep {
                let base = (y * w + x) * c;
                for v in &mut data[base..base + c] {
                    *v = 0.0;
                }
            }
        }
    }
    Ok(idct2(&spec))
}
