use super::{Acc, Tensor3};
use crate::error::{Error, Result};

/// Borrowed `[out_channels, in_channels, height, width]` convolution weights.
#[derive(Debug, Clone, Copy)]
pub struct KernelView<'a> {
    pub out_channels: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    data: &'a [f32],
}

impl<'a> KernelView<'a> {
    pub fn new(shape: [usize; 4], data: &'a [f32]) -> Result<Self> {
        let [out_channels, in_channels, height, width] = shape;
        if shape.contains(&0) {
            return Err(Error::config(format!(
                "kernel shape {shape:?} has a zero dimension"
            )));
        }
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::config(format!(
                "kernel shape {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self {
            out_channels,
            in_channels,
            height,
            width,
            data,
        })
    }
}

/// Output positions `o` in `0..out` whose tap `o * stride + k - padding`
/// lands inside `0..input`.
#[inline]
fn valid_taps(k: usize, padding: usize, stride: usize, input: usize, out: usize) -> (usize, usize) {
    let lo = if padding > k {
        (padding - k).div_ceil(stride)
    } else {
        0
    };
    if input + padding < k + 1 {
        return (0, 0);
    }
    let hi = ((input - 1 + padding - k) / stride + 1).min(out);
    (lo.min(hi), hi)
}

/// 2-D cross-correlation with zero padding (no kernel flip).
#[allow(clippy::unnecessary_cast)]
pub fn conv2d(
    input: &Tensor3,
    kernel: KernelView<'_>,
    bias: &[f32],
    stride: usize,
    padding: usize,
) -> Result<Tensor3> {
    let (in_c, in_h, in_w) = input.dims();
    if stride == 0 {
        return Err(Error::config("convolution stride must be at least 1"));
    }
    if in_c != kernel.in_channels {
        return Err(Error::config(format!(
            "input has {in_c} channels, kernel expects {}",
            kernel.in_channels
        )));
    }
    if bias.len() != kernel.out_channels {
        return Err(Error::config(format!(
            "bias has {} entries, kernel has {} output channels",
            bias.len(),
            kernel.out_channels
        )));
    }
    if kernel.height > in_h + 2 * padding || kernel.width > in_w + 2 * padding {
        return Err(Error::config(format!(
            "kernel {}x{} larger than padded input {}x{}",
            kernel.height,
            kernel.width,
            in_h + 2 * padding,
            in_w + 2 * padding
        )));
    }

    let out_h = (in_h + 2 * padding - kernel.height) / stride + 1;
    let out_w = (in_w + 2 * padding - kernel.width) / stride + 1;
    let plane = out_h * out_w;
    let taps = in_c * kernel.height * kernel.width;

    // Unrolled input patches: row (ic, ky, kx) holds the input value each
    // output position reads through that tap, zero where it falls in padding.
    let mut cols: Vec<Acc> = vec![0.0; taps * plane];
    for ic in 0..in_c {
        let src = input.channel(ic);
        for ky in 0..kernel.height {
            let (oy0, oy1) = valid_taps(ky, padding, stride, in_h, out_h);
            for kx in 0..kernel.width {
                let (ox0, ox1) = valid_taps(kx, padding, stride, in_w, out_w);
                let row = (ic * kernel.height + ky) * kernel.width + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in oy0..oy1 {
                    let iy = oy * stride + ky - padding;
                    let src_row = &src[iy * in_w..(iy + 1) * in_w];
                    for ox in ox0..ox1 {
                        dst[oy * out_w + ox] = src_row[ox * stride + kx - padding] as Acc;
                    }
                }
            }
        }
    }

    let weights: Vec<Acc> = kernel.data.iter().map(|&w| w as Acc).collect();
    let mut acc: Vec<Acc> = vec![0.0; kernel.out_channels * plane];
    for (out, w) in acc.chunks_mut(4 * plane).zip(weights.chunks(4 * taps)) {
        accumulate_rows(out, w, &cols, plane, taps);
    }

    let data = acc
        .chunks_exact(plane)
        .zip(bias)
        .flat_map(|(out, &b)| out.iter().map(move |&v| (v + b as Acc) as f32))
        .collect();
    Ok(Tensor3::from_parts(kernel.out_channels, out_h, out_w, data))
}

/// `out[r] += sum_t weights[r][t] * cols[t]` for up to four output rows,
/// summing taps in order.
fn accumulate_rows(out: &mut [Acc], weights: &[Acc], cols: &[Acc], plane: usize, taps: usize) {
    if let ([o0, o1, o2, o3], [w0, w1, w2, w3]) = (
        &mut out.chunks_exact_mut(plane).collect::<Vec<_>>()[..],
        &weights.chunks_exact(taps).collect::<Vec<_>>()[..],
    ) {
        let (o0, o1, o2, o3) = (
            &mut o0[..plane],
            &mut o1[..plane],
            &mut o2[..plane],
            &mut o3[..plane],
        );
        for (t, col) in cols.chunks_exact(plane).enumerate() {
            let (a, b, c, d) = (w0[t], w1[t], w2[t], w3[t]);
            let col = &col[..plane];
            for p in 0..plane {
                let x = col[p];
                o0[p] += a * x;
                o1[p] += b * x;
                o2[p] += c * x;
                o3[p] += d * x;
            }
        }
        return;
    }
    for (o, w) in out.chunks_exact_mut(plane).zip(weights.chunks_exact(taps)) {
        for (col, &a) in cols.chunks_exact(plane).zip(w) {
            for (d, &x) in o.iter_mut().zip(col) {
                *d += a * x;
            }
        }
    }
}

pub fn relu(input: &Tensor3) -> Tensor3 {
    let (c, h, w) = input.dims();
    let data = input.as_slice().iter().map(|&v| v.max(0.0)).collect();
    Tensor3::from_parts(c, h, w, data)
}

/// Max pooling over `size × size` windows without padding.
pub fn maxpool2d(input: &Tensor3, size: usize, stride: usize) -> Result<Tensor3> {
    let (c, in_h, in_w) = input.dims();
    if size == 0 || stride == 0 {
        return Err(Error::config("pool size and stride must be at least 1"));
    }
    if size > in_h || size > in_w {
        return Err(Error::config(format!(
            "pool window {size}x{size} larger than input {in_h}x{in_w}"
        )));
    }
    let out_h = (in_h - size) / stride + 1;
    let out_w = (in_w - size) / stride + 1;
    let mut data = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let src = input.channel(ch);
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut m = f32::NEG_INFINITY;
                for ky in 0..size {
                    let row = (oy * stride + ky) * in_w + ox * stride;
                    for &v in &src[row..row + size] {
                        m = m.max(v);
                    }
                }
                data.push(m);
            }
        }
    }
    Ok(Tensor3::from_parts(c, out_h, out_w, data))
}

/// Source index and blend weight of the far neighbour for output index `d`,
/// using half-pixel centres clamped to the input.
#[inline]
fn sample_coord(d: usize, scale: f32, input: usize) -> (usize, usize, f32) {
    let s = ((d as f32 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f32);
    let i0 = s as usize;
    let i1 = (i0 + 1).min(input - 1);
    (i0, i1, s - i0 as f32)
}

/// Bilinear resampling with half-pixel centres (`align_corners = false`).
pub fn bilinear_resize(input: &Tensor3, out_h: usize, out_w: usize) -> Result<Tensor3> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Input(format!(
            "resize target {out_h}x{out_w} must be positive"
        )));
    }
    let (c, in_h, in_w) = input.dims();
    let sy = in_h as f32 / out_h as f32;
    let sx = in_w as f32 / out_w as f32;
    let rows: Vec<_> = (0..out_h).map(|d| sample_coord(d, sy, in_h)).collect();
    let cols: Vec<_> = (0..out_w).map(|d| sample_coord(d, sx, in_w)).collect();

    let mut data = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let src = input.channel(ch);
        for &(y0, y1, fy) in &rows {
            let r0 = &src[y0 * in_w..(y0 + 1) * in_w];
            let r1 = &src[y1 * in_w..(y1 + 1) * in_w];
            for &(x0, x1, fx) in &cols {
                let top = (1.0 - fx) * r0[x0] + fx * r0[x1];
                let bottom = (1.0 - fx) * r1[x0] + fx * r1[x1];
                data.push((1.0 - fy) * top + fy * bottom);
            }
        }
    }
    Ok(Tensor3::from_parts(c, out_h, out_w, data))
}
