//! Batched MLP passes. The geometry network is evaluated on stacked rows
//! `[values; ∂/∂x; ∂/∂y; ∂/∂z]` so one matrix product per layer carries both
//! the activations and their spatial tangents.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use super::{Encoding, NeuralField, Slot};
use crate::scalar::{Real, V3};

impl Slot {
    fn w<'a, T>(&self, p: &'a [T]) -> ArrayView2<'a, T> {
        ArrayView2::from_shape((self.out, self.inp), &p[self.w..self.w + self.out * self.inp])
            .expect("slot shape")
    }

    fn b<'a, T>(&self, p: &'a [T]) -> ArrayView1<'a, T> {
        ArrayView1::from(&p[self.b..self.b + self.out])
    }

    fn dw<'a, T>(&self, g: &'a mut [T]) -> ArrayViewMut2<'a, T> {
        ArrayViewMut2::from_shape((self.out, self.inp), &mut g[self.w..self.w + self.out * self.inp])
            .expect("slot shape")
    }

    fn db<'a, T>(&self, g: &'a mut [T]) -> ArrayViewMut1<'a, T> {
        ArrayViewMut1::from(&mut g[self.b..self.b + self.out])
    }
}

pub struct GeometryOutput<T> {
    pub sdf: Vec<T>,
    /// Empty unless tangents were requested.
    pub grad: Vec<V3<T>>,
    /// `n × feature_dim`.
    pub feature: Array2<T>,
}

pub struct GeometryTape<T> {
    n: usize,
    tangents: bool,
    /// Input of every linear layer, `blocks·n × inp`.
    inputs: Vec<Array2<T>>,
    /// Pre-activation of every hidden layer, `blocks·n × out`.
    pre: Vec<Array2<T>>,
}

impl<T: Real> GeometryTape<T> {
    /// Input rows of the output layer, `[values; ∂x; ∂y; ∂z]` when tangents
    /// were requested.
    pub(crate) fn last_input(&self) -> &Array2<T> {
        self.inputs.last().expect("at least one layer")
    }
}

pub struct ColorTape<T> {
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
    rgb: Array2<T>,
    normal_col: usize,
    feature_col: usize,
}

/// `c = a · bᵀ`
fn abt<T: Real>(a: &ArrayView2<T>, b: &ArrayView2<T>) -> Array2<T> {
    let mut c = Array2::zeros((a.nrows(), b.nrows()));
    general_mat_mul(T::one(), a, &b.t(), T::zero(), &mut c);
    c
}

/// Gradient of a linear layer: `dW += dZᵀ X`.
fn add_atb<T: Real>(dz: &ArrayView2<T>, x: &ArrayView2<T>, dw: &mut ArrayViewMut2<T>) {
    general_mat_mul(T::one(), &dz.t(), x, T::one(), dw);
}

fn add_colsum<T: Real>(dz: &ArrayView2<T>, db: &mut ArrayViewMut1<T>) {
    for row in dz.rows() {
        db.zip_mut_with(&row, |a, &b| *a += b);
    }
}

fn encode_points<T: Real>(enc: &Encoding, points: &[V3<T>], tangents: bool) -> Array2<T> {
    let n = points.len();
    let blocks = if tangents { 4 } else { 1 };
    let dim = enc.dim();
    let mut x0 = Array2::zeros((blocks * n, dim));
    {
        let data = x0.as_slice_mut().expect("standard layout");
        for (i, p) in points.iter().enumerate() {
            enc.encode(*p, &mut data[i * dim..(i + 1) * dim]);
            if tangents {
                for c in 0..3 {
                    let row = (c + 1) * n + i;
                    enc.encode_tangent(*p, c, &mut data[row * dim..(row + 1) * dim]);
                }
            }
        }
    }
    x0
}

/// `ln(1 + e)` for `e ∈ [0, 1]`; a short series where `1 + e` would round.
#[inline]
fn ln_1p_unit<T: Real>(e: T) -> T {
    if e < T::lit(1e-3) {
        e * (T::one() - e * (T::lit(0.5) - e * (T::lit(1.0 / 3.0) - T::lit(0.25) * e)))
    } else {
        (T::one() + e).ln()
    }
}

/// Derivative of softplus with sharpness β, from `e = exp(−β|z|)`.
#[inline]
fn slope_from_exp<T: Real>(bz: T, e: T) -> T {
    if bz >= T::zero() {
        T::one() / (T::one() + e)
    } else {
        e / (T::one() + e)
    }
}

/// `|βz|` beyond which `exp(−β|z|)` is below half an ulp of one, so softplus
/// equals its linear or zero branch to working precision.
#[inline]
fn saturation<T: Real>() -> T {
    -(T::epsilon() * T::lit(0.5)).ln()
}

/// Softplus with sharpness β and its first derivative, sharing one `exp`.
#[inline]
fn softplus_and_slope<T: Real>(z: T, beta: T) -> (T, T) {
    let bz = beta * z;
    if bz.abs() > saturation::<T>() {
        return if bz > T::zero() { (z, T::one()) } else { (T::zero(), T::zero()) };
    }
    let e = (-bz.abs()).exp();
    let sp = (bz.max(T::zero()) + ln_1p_unit(e)) / beta;
    (sp, slope_from_exp(bz, e))
}

#[inline]
fn softplus_slope<T: Real>(z: T, beta: T) -> T {
    let bz = beta * z;
    if bz.abs() > saturation::<T>() {
        return if bz > T::zero() { T::one() } else { T::zero() };
    }
    slope_from_exp(bz, (-bz.abs()).exp())
}

pub(super) fn geometry_forward<T: Real>(
    field: &NeuralField<T>,
    points: &[V3<T>],
    tangents: bool,
    keep_tape: bool,
) -> (GeometryOutput<T>, Option<GeometryTape<T>>) {
    let cfg = &field.config;
    let layout = &field.layout;
    let params = &field.params;
    let n = points.len();
    let blocks = if tangents { 4 } else { 1 };
    let enc = Encoding::new(cfg.pos_octaves);
    let x0 = encode_points(&enc, points, tangents);
    let beta = T::lit(cfg.softplus_beta);
    let inv_sqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let last = layout.geo.len() - 1;

    let mut inputs = Vec::new();
    let mut pre = Vec::new();
    let mut cur = x0.clone();
    let mut output = None;
    for (l, slot) in layout.geo.iter().enumerate() {
        let input = if cfg.geo_skips.contains(&l) {
            let mut cat = ndarray::concatenate(Axis(1), &[cur.view(), x0.view()]).expect("rows");
            cat.mapv_inplace(|v| v * inv_sqrt2);
            cat
        } else {
            cur
        };
        let w = slot.w(params);
        let b = slot.b(params);
        if l == last {
            let xv = input.slice(s![0..n, ..]);
            let mut out = abt(&xv, &w);
            out += &b;
            let sdf = out.column(0).to_vec();
            let feature = out.slice(s![.., 1..]).to_owned();
            let mut grad = Vec::new();
            if tangents {
                let w0 = w.row(0);
                let gx = input.slice(s![n..2 * n, ..]).dot(&w0);
                let gy = input.slice(s![2 * n..3 * n, ..]).dot(&w0);
                let gz = input.slice(s![3 * n..4 * n, ..]).dot(&w0);
                grad = (0..n).map(|i| [gx[i], gy[i], gz[i]]).collect();
            }
            output = Some(GeometryOutput { sdf, grad, feature });
            if keep_tape {
                inputs.push(input);
            }
            break;
        }
        let mut z = abt(&input.view(), &w);
        z.slice_mut(s![0..n, ..]).zip_mut_with(&b.broadcast((n, slot.out)).expect("bias"), |a, &bb| {
            *a += bb
        });
        let mut h = Array2::<T>::zeros((blocks * n, slot.out));
        {
            let zs = z.as_slice().expect("standard layout");
            let hs = h.as_slice_mut().expect("standard layout");
            let block = n * slot.out;
            for idx in 0..block {
                let (sp, s1) = softplus_and_slope(zs[idx], beta);
                hs[idx] = sp;
                for c in 1..blocks {
                    let j = c * block + idx;
                    hs[j] = s1 * zs[j];
                }
            }
        }
        if keep_tape {
            inputs.push(input);
            pre.push(z);
        }
        cur = h;
    }
    let tape = keep_tape.then_some(GeometryTape {
        n,
        tangents,
        inputs,
        pre,
    });
    (output.expect("geometry network has an output layer"), tape)
}

pub(super) fn geometry_backward<T: Real>(
    field: &NeuralField<T>,
    tape: &GeometryTape<T>,
    d_sdf: &[T],
    d_grad: &[V3<T>],
    d_feature: Option<&Array2<T>>,
    grads: &mut [T],
) {
    let cfg = &field.config;
    let layout = &field.layout;
    let params = &field.params;
    let n = tape.n;
    let tangents = tape.tangents && !d_grad.is_empty();
    let blocks = if tape.tangents { 4 } else { 1 };
    let beta = T::lit(cfg.softplus_beta);
    let inv_sqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let last = layout.geo.len() - 1;
    let geo_in = layout.geo_in;

    // Output layer.
    let slot = layout.geo[last];
    let x_last = &tape.inputs[last];
    let mut d_out = Array2::<T>::zeros((n, slot.out));
    for i in 0..n {
        d_out[(i, 0)] = d_sdf[i];
    }
    if let Some(df) = d_feature {
        d_out.slice_mut(s![.., 1..]).assign(df);
    }
    let w_last = slot.w(params);
    {
        let xv = x_last.slice(s![0..n, ..]);
        add_atb(&d_out.view(), &xv, &mut slot.dw(grads));
        add_colsum(&d_out.view(), &mut slot.db(grads));
    }
    let mut dx = Array2::<T>::zeros((blocks * n, slot.inp));
    general_mat_mul(T::one(), &d_out, &w_last, T::zero(), &mut dx.slice_mut(s![0..n, ..]));
    if tangents {
        let w0 = w_last.row(0);
        let mut dw = slot.dw(grads);
        let mut dw0 = dw.row_mut(0);
        for c in 0..3 {
            let dg: Array1<T> = d_grad.iter().map(|g| g[c]).collect();
            let xt = x_last.slice(s![(c + 1) * n..(c + 2) * n, ..]);
            let contrib = xt.t().dot(&dg);
            dw0 += &contrib;
            let mut block = dx.slice_mut(s![(c + 1) * n..(c + 2) * n, ..]);
            for (i, mut row) in block.rows_mut().into_iter().enumerate() {
                let g = dg[i];
                row.zip_mut_with(&w0, |a, &w| *a = g * w);
            }
        }
    }

    // Hidden layers, last to first.
    for l in (0..last).rev() {
        let slot = layout.geo[l];
        let z = &tape.pre[l];
        // Adjoint of this layer's activation h_l from the next layer's input.
        let mut dz = if cfg.geo_skips.contains(&(l + 1)) {
            let mut part = dx.slice(s![.., 0..slot.out]).to_owned();
            part.mapv_inplace(|v| v * inv_sqrt2);
            part
        } else {
            dx
        };
        debug_assert_eq!(dz.ncols(), slot.out);
        debug_assert!(dz.ncols() + geo_in >= slot.out);
        {
            let zs = z.as_slice().expect("standard layout");
            let ds = dz.as_slice_mut().expect("standard layout");
            let block = n * slot.out;
            for idx in 0..block {
                let s1 = softplus_slope(zs[idx], beta);
                let mut acc = s1 * ds[idx];
                if tangents {
                    let s2 = beta * s1 * (T::one() - s1);
                    for c in 1..4 {
                        let j = c * block + idx;
                        acc += s2 * ds[j] * zs[j];
                        ds[j] = s1 * ds[j];
                    }
                } else {
                    for c in 1..blocks {
                        ds[c * block + idx] = s1 * ds[c * block + idx];
                    }
                }
                ds[idx] = acc;
            }
        }
        let x_in = &tape.inputs[l];
        add_atb(&dz.view(), &x_in.view(), &mut slot.dw(grads));
        add_colsum(&dz.slice(s![0..n, ..]), &mut slot.db(grads));
        if l > 0 {
            let w = slot.w(params);
            let mut next = Array2::<T>::zeros((blocks * n, slot.inp));
            general_mat_mul(T::one(), &dz, &w, T::zero(), &mut next);
            dx = next;
        } else {
            break;
        }
    }
}

pub(super) fn color_forward<T: Real>(
    field: &NeuralField<T>,
    points: &[V3<T>],
    dirs: &[V3<T>],
    normals: &[V3<T>],
    features: &Array2<T>,
) -> (Vec<V3<T>>, ColorTape<T>) {
    let cfg = &field.config;
    let layout = &field.layout;
    let params = &field.params;
    let n = points.len();
    let enc = Encoding::new(cfg.dir_octaves);
    let dir_dim = layout.dir_dim;
    let normal_col = 3 + dir_dim;
    let feature_col = normal_col + 3;
    let mut u = Array2::<T>::zeros((n, layout.color_in));
    {
        let width = layout.color_in;
        let data = u.as_slice_mut().expect("standard layout");
        for i in 0..n {
            let row = &mut data[i * width..(i + 1) * width];
            row[..3].copy_from_slice(&points[i]);
            enc.encode(dirs[i], &mut row[3..3 + dir_dim]);
            row[normal_col..normal_col + 3].copy_from_slice(&normals[i]);
        }
    }
    u.slice_mut(s![.., feature_col..]).assign(features);

    let last = layout.color.len() - 1;
    let mut inputs = Vec::with_capacity(layout.color.len());
    let mut pre = Vec::with_capacity(last);
    let mut cur = u;
    for (l, slot) in layout.color.iter().enumerate() {
        let mut z = abt(&cur.view(), &slot.w(params));
        z += &slot.b(params);
        inputs.push(cur);
        if l == last {
            z.mapv_inplace(crate::scalar::logistic);
            let rgb = (0..n).map(|i| [z[(i, 0)], z[(i, 1)], z[(i, 2)]]).collect();
            let tape = ColorTape {
                inputs,
                pre,
                rgb: z,
                normal_col,
                feature_col,
            };
            return (rgb, tape);
        }
        let h = z.mapv(|v| v.max(T::zero()));
        pre.push(z);
        cur = h;
    }
    unreachable!("color network has an output layer")
}

pub(super) fn color_backward<T: Real>(
    field: &NeuralField<T>,
    tape: &ColorTape<T>,
    d_rgb: &[V3<T>],
    grads: &mut [T],
) -> (Vec<V3<T>>, Array2<T>) {
    let layout = &field.layout;
    let params = &field.params;
    let n = d_rgb.len();
    let last = layout.color.len() - 1;
    let mut dz = Array2::<T>::zeros((n, 3));
    for i in 0..n {
        for c in 0..3 {
            let y = tape.rgb[(i, c)];
            dz[(i, c)] = d_rgb[i][c] * y * (T::one() - y);
        }
    }
    let mut l = last;
    loop {
        let slot = layout.color[l];
        add_atb(&dz.view(), &tape.inputs[l].view(), &mut slot.dw(grads));
        add_colsum(&dz.view(), &mut slot.db(grads));
        let mut dx = Array2::<T>::zeros((n, slot.inp));
        general_mat_mul(T::one(), &dz, &slot.w(params), T::zero(), &mut dx);
        if l == 0 {
            let d_normals = (0..n)
                .map(|i| {
                    [
                        dx[(i, tape.normal_col)],
                        dx[(i, tape.normal_col + 1)],
                        dx[(i, tape.normal_col + 2)],
                    ]
                })
                .collect();
            let d_feat = dx.slice(s![.., tape.feature_col..]).to_owned();
            return (d_normals, d_feat);
        }
        l -= 1;
        dx.zip_mut_with(&tape.pre[l], |d, &z| {
            if z <= T::zero() {
                *d = T::zero();
            }
        });
        dz = dx;
    }
}
