//! im2col convolution kernels shared by the tape's forward and backward passes.

use super::float::{gemm, MatRef};
use super::Float;
use crate::error::{Error, Result};

/// Border handling for "same"-style convolutions; the pad width is `k / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Mirror without repeating the edge pixel. Single-pixel extents replicate.
    Reflect,
    Zero,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: Padding,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        let (batch, cin, h, w) = match *input {
            [b, c, h, w] => (b, c, h, w),
            _ => return Err(Error::shape("conv2d", format!("input must be [B,Cin,H,W], got {input:?}"))),
        };
        let (cout, wcin, kh, kw) = match *weight {
            [o, i, kh, kw] => (o, i, kh, kw),
            _ => return Err(Error::shape("conv2d", format!("weight must be [Cout,Cin,kh,kw], got {weight:?}"))),
        };
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input channels (dim 1) = {cin} but weight expects Cin = {wcin}"),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        let (ph, pw) = (kh / 2, kw / 2);
        if padding == Padding::Reflect && ((h > 1 && ph >= h) || (w > 1 && pw >= w)) {
            return Err(Error::shape(
                "conv2d",
                format!("reflect padding {ph}x{pw} needs input extents above it, got height {h} width {w}"),
            ));
        }
        if kh > h + 2 * ph {
            return Err(Error::shape("conv2d", format!("kernel height {kh} exceeds padded height {}", h + 2 * ph)));
        }
        if kw > w + 2 * pw {
            return Err(Error::shape("conv2d", format!("kernel width {kw} exceeds padded width {}", w + 2 * pw)));
        }
        let ho = (h + 2 * ph - kh) / stride + 1;
        let wo = (w + 2 * pw - kw) / stride + 1;
        Ok(ConvGeometry { batch, cin, h, w, cout, kh, kw, stride, padding, ho, wo })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    /// Source index for each (kernel offset, output position) along one axis.
    fn axis_table(&self, extent: usize, k: usize, out: usize) -> Vec<Option<usize>> {
        let pad = (k / 2) as isize;
        let n = extent as isize;
        let mut table = Vec::with_capacity(k * out);
        for ki in 0..k as isize {
            for o in 0..out as isize {
                let src = o * self.stride as isize + ki - pad;
                let idx = if (0..n).contains(&src) {
                    Some(src as usize)
                } else {
                    match self.padding {
                        Padding::Zero => None,
                        Padding::Reflect if n == 1 => Some(0),
                        Padding::Reflect => {
                            let r = if src < 0 { -src } else { 2 * (n - 1) - src };
                            Some(r as usize)
                        }
                    }
                };
                table.push(idx);
            }
        }
        table
    }

    fn tables(&self) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
        (self.axis_table(self.h, self.kh, self.ho), self.axis_table(self.w, self.kw, self.wo))
    }
}

fn im2col<T: Float>(g: &ConvGeometry, x: &[T], rows: &[Option<usize>], cols: &[Option<usize>], out: &mut [T]) {
    let hw_out = g.ho * g.wo;
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * hw_out;
                let dst = &mut out[row..row + hw_out];
                for oy in 0..g.ho {
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    match rows[ki * g.ho + oy] {
                        None => line.fill(T::zero()),
                        Some(sy) => {
                            let src = &plane[sy * g.w..(sy + 1) * g.w];
                            let ctab = &cols[kj * g.wo..(kj + 1) * g.wo];
                            for (d, s) in line.iter_mut().zip(ctab) {
                                *d = match s {
                                    Some(sx) => src[*sx],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Float>(g: &ConvGeometry, dcols: &[T], rows: &[Option<usize>], cols: &[Option<usize>], dx: &mut [T]) {
    let hw_out = g.ho * g.wo;
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * hw_out;
                let src = &dcols[row..row + hw_out];
                for oy in 0..g.ho {
                    let Some(sy) = rows[ki * g.ho + oy] else { continue };
                    let line = &src[oy * g.wo..(oy + 1) * g.wo];
                    let ctab = &cols[kj * g.wo..(kj + 1) * g.wo];
                    let dst = &mut plane[sy * g.w..(sy + 1) * g.w];
                    for (v, s) in line.iter().zip(ctab) {
                        if let Some(sx) = s {
                            dst[*sx] = dst[*sx] + *v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Float>(g: &ConvGeometry, x: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let hw_out = g.ho * g.wo;
    let k = g.k();
    let mut out = vec![T::zero(); g.batch * g.cout * hw_out];
    let (rows, cols) = g.tables();
    let mut buf = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * hw_out] };
    let wmat = MatRef::new(weight, g.cout, k);
    for b in 0..g.batch {
        let xb = &x[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w];
        let ob = &mut out[b * g.cout * hw_out..(b + 1) * g.cout * hw_out];
        if let Some(bias) = bias {
            for (o, &bv) in bias.iter().enumerate() {
                ob[o * hw_out..(o + 1) * hw_out].fill(bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        let colmat = if g.is_pointwise() {
            MatRef::new(xb, k, hw_out)
        } else {
            im2col(g, xb, &rows, &cols, &mut buf);
            MatRef::new(&buf, k, hw_out)
        };
        gemm(wmat, colmat, beta, ob);
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Float>(
    g: &ConvGeometry,
    x: &[T],
    weight: &[T],
    dout: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (need_dx, need_dw, need_db) = need;
    let hw_out = g.ho * g.wo;
    let k = g.k();
    let (rows, cols) = g.tables();
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_dw.then(|| vec![T::zero(); weight.len()]);
    let mut db = need_db.then(|| vec![T::zero(); g.cout]);
    let mut buf = vec![T::zero(); if g.is_pointwise() { 0 } else { k * hw_out }];
    let mut dcols = vec![T::zero(); if need_dx { k * hw_out } else { 0 }];
    let wmat = MatRef::new(weight, g.cout, k);
    for b in 0..g.batch {
        let xb = &x[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w];
        let gb = &dout[b * g.cout * hw_out..(b + 1) * g.cout * hw_out];
        let gmat = MatRef::new(gb, g.cout, hw_out);
        if let Some(db) = db.as_mut() {
            for (o, acc) in db.iter_mut().enumerate() {
                *acc = *acc + gb[o * hw_out..(o + 1) * hw_out].iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let colmat = if g.is_pointwise() {
                MatRef::new(xb, k, hw_out)
            } else {
                im2col(g, xb, &rows, &cols, &mut buf);
                MatRef::new(&buf, k, hw_out)
            };
            gemm(gmat, colmat.t(), T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w];
            if g.is_pointwise() {
                gemm(wmat.t(), gmat, T::one(), dxb);
            } else {
                gemm(wmat.t(), gmat, T::zero(), &mut dcols);
                col2im(g, &dcols, &rows, &cols, dxb);
            }
        }
    }
    ConvGrads { dx, dw, db }
}
