use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use super::{fill_normal, join, Parameterized};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output `t` sees inputs `t - (k-1)d ..= t`.
    Causal,
    /// Symmetric zero padding; output `t` sees `t - (k-1)d/2 ..= t + (k-1)d/2`.
    Same,
}

/// Dilated 1-D convolution over `(channels, time)` signals. Output length
/// always equals input length.
#[derive(Clone, Debug)]
pub struct Conv1d {
    /// `(kernel, out_channels, in_channels)`
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
    pub dilation: usize,
    pub padding: Padding,
}

impl Conv1d {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        padding: Padding,
    ) -> Self {
        assert!(kernel >= 1 && dilation >= 1);
        Self {
            weight: Array3::zeros((kernel, out_channels, in_channels)),
            bias: Array1::zeros(out_channels),
            dilation,
            padding,
        }
    }

    /// Zero bias, weights drawn from `N(0, gain^2 / fan_in)`.
    pub fn randomized(mut self, gain: f64, rng: &mut impl Rng) -> Self {
        let fan_in = (self.kernel() * self.in_channels()) as f64;
        fill_normal(
            self.weight.as_slice_mut().expect("contiguous"),
            gain / fan_in.sqrt(),
            rng,
        );
        self
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().0
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().2
    }

    fn left_pad(&self) -> usize {
        let span = (self.kernel() - 1) * self.dilation;
        match self.padding {
            Padding::Causal => span,
            Padding::Same => span / 2,
        }
    }

    /// For tap `j`, the output range `[lo, hi)` whose input index `t + off`
    /// stays inside `[0, len)`, and that offset.
    fn tap(&self, j: usize, len: usize) -> Option<(usize, usize, isize)> {
        let off = (j * self.dilation) as isize - self.left_pad() as isize;
        let lo = (-off).max(0) as usize;
        let hi = (len as isize - off.max(0)).max(0) as usize;
        (lo < hi).then_some((lo, hi, off))
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let len = x.ncols();
        debug_assert_eq!(x.nrows(), self.in_channels());
        let mut y = Array2::zeros((self.out_channels(), len));
        y += &self.bias.view().insert_axis(Axis(1));
        for j in 0..self.kernel() {
            if let Some((lo, hi, off)) = self.tap(j, len) {
                let src = x.slice(s![
                    ..,
                    (lo as isize + off) as usize..(hi as isize + off) as usize
                ]);
                let mut dst = y.slice_mut(s![.., lo..hi]);
                general_mat_mul(
                    1.0,
                    &self.weight.index_axis(Axis(0), j),
                    &src,
                    1.0,
                    &mut dst,
                );
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` (when given) and returns
    /// the gradient with respect to `x`.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        grad: Option<&mut Conv1d>,
    ) -> Array2<f64> {
        let len = x.ncols();
        let mut dx = Array2::zeros((self.in_channels(), len));
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.bias += &dy.sum_axis(Axis(1));
        }
        for j in 0..self.kernel() {
            let Some((lo, hi, off)) = self.tap(j, len) else {
                continue;
            };
            let (ilo, ihi) = ((lo as isize + off) as usize, (hi as isize + off) as usize);
            let dy_j = dy.slice(s![.., lo..hi]);
            if let Some(g) = grad.as_deref_mut() {
                let mut gw = g.weight.index_axis_mut(Axis(0), j);
                general_mat_mul(1.0, &dy_j, &x.slice(s![.., ilo..ihi]).t(), 1.0, &mut gw);
            }
            let mut dst = dx.slice_mut(s![.., ilo..ihi]);
            general_mat_mul(
                1.0,
                &self.weight.index_axis(Axis(0), j).t(),
                &dy_j,
                1.0,
                &mut dst,
            );
        }
        dx
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(
            &join(prefix, "weight"),
            self.weight.as_slice().expect("contiguous"),
        );
        f(
            &join(prefix, "bias"),
            self.bias.as_slice().expect("contiguous"),
        );
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(
            &join(prefix, "weight"),
            self.weight.as_slice_mut().expect("contiguous"),
        );
        f(
            &join(prefix, "bias"),
            self.bias.as_slice_mut().expect("contiguous"),
        );
    }
}

impl Parameterized for Conv1d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.visit(prefix, f)
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.visit_mut(prefix, f)
    }
}

/// Transposed convolution with stride `s` and kernel `2s`. The input is
/// edge-padded by one frame on each side and the result cropped so that `F`
/// input frames map to exactly `F * s` outputs, every output receiving two
/// kernel taps.
#[derive(Clone, Debug)]
pub struct ConvTranspose1d {
    /// `(kernel, out_channels, in_channels)`
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
    pub stride: usize,
}

impl ConvTranspose1d {
    pub fn zeros(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        assert!(stride >= 1);
        Self {
            weight: Array3::zeros((2 * stride, out_channels, in_channels)),
            bias: Array1::zeros(out_channels),
            stride,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().2
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().1
    }

    /// Sets each diagonal kernel to the linear-interpolation triangle, whose
    /// overlapping taps sum to one. Off-diagonal weights are left untouched.
    pub fn add_interpolation_diagonal(&mut self) {
        let s = self.stride as f64;
        let channels = self.in_channels().min(self.out_channels());
        for k in 0..self.kernel() {
            let w = 1.0 - (k as f64 + 0.5 - s).abs() / s;
            for c in 0..channels {
                self.weight[[k, c, c]] += w;
            }
        }
    }

    /// Output index for padded input frame `f` (0 = left pad) and tap `k`.
    fn target(&self, f: usize, k: usize) -> isize {
        let s = self.stride;
        (f * s + k) as isize - (s + s / 2) as isize
    }

    fn padded(x: ArrayView2<f64>) -> Array2<f64> {
        let frames = x.ncols();
        let mut p = Array2::zeros((x.nrows(), frames + 2));
        p.slice_mut(s![.., 1..frames + 1]).assign(&x);
        p.column_mut(0).assign(&x.column(0));
        p.column_mut(frames + 1).assign(&x.column(frames - 1));
        p
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let frames = x.ncols();
        let out_len = frames * self.stride;
        let xp = Self::padded(x);
        let mut y = Array2::zeros((self.out_channels(), out_len));
        y += &self.bias.view().insert_axis(Axis(1));
        for k in 0..self.kernel() {
            let z = self.weight.index_axis(Axis(0), k).dot(&xp);
            for f in 0..frames + 2 {
                let t = self.target(f, k);
                if t >= 0 && (t as usize) < out_len {
                    let mut col = y.column_mut(t as usize);
                    col += &z.column(f);
                }
            }
        }
        y
    }

    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        grad: Option<&mut ConvTranspose1d>,
    ) -> Array2<f64> {
        let frames = x.ncols();
        let out_len = frames * self.stride;
        let xp = Self::padded(x);
        let mut dxp = Array2::<f64>::zeros(xp.dim());
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.bias += &dy.sum_axis(Axis(1));
        }
        let mut dz = Array2::<f64>::zeros((self.out_channels(), frames + 2));
        for k in 0..self.kernel() {
            dz.fill(0.0);
            for f in 0..frames + 2 {
                let t = self.target(f, k);
                if t >= 0 && (t as usize) < out_len {
                    dz.column_mut(f).assign(&dy.column(t as usize));
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                let mut gw = g.weight.index_axis_mut(Axis(0), k);
                general_mat_mul(1.0, &dz, &xp.t(), 1.0, &mut gw);
            }
            general_mat_mul(
                1.0,
                &self.weight.index_axis(Axis(0), k).t(),
                &dz,
                1.0,
                &mut dxp,
            );
        }
        let mut dx = dxp.slice(s![.., 1..frames + 1]).to_owned();
        {
            let mut first = dx.column_mut(0);
            first += &dxp.column(0);
        }
        let mut last = dx.column_mut(frames - 1);
        last += &dxp.column(frames + 1);
        dx
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(
            &join(prefix, "weight"),
            self.weight.as_slice().expect("contiguous"),
        );
        f(
            &join(prefix, "bias"),
            self.bias.as_slice().expect("contiguous"),
        );
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(
            &join(prefix, "weight"),
            self.weight.as_slice_mut().expect("contiguous"),
        );
        f(
            &join(prefix, "bias"),
            self.bias.as_slice_mut().expect("contiguous"),
        );
    }
}
