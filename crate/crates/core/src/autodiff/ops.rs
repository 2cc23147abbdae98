//! Differentiable primitives recorded on a [`Tape`].
//!
//! Conventions: matrices are row-major `(rows, cols)`, feature maps are
//! `(channels, height, width)`, scalars are 0-d arrays. Ops panic on shape
//! mismatch (caller contracts are validated at module boundaries, not here).

use ndarray::{Array1, Array2, Array3, ArrayD, ArrayViewD, Axis, Ix1, Ix2, Ix3, IxDyn};

use super::{Tape, Var};

fn as2(a: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("expected 2-d")
}

fn as1(a: &ArrayD<f64>) -> ndarray::ArrayView1<'_, f64> {
    a.view().into_dimensionality::<Ix1>().expect("expected 1-d")
}

fn as3(a: &ArrayD<f64>) -> ndarray::ArrayView3<'_, f64> {
    a.view().into_dimensionality::<Ix3>().expect("expected 3-d")
}

fn scalar0(v: f64) -> ArrayD<f64> {
    ArrayD::from_elem(IxDyn(&[]), v)
}

impl Tape {
    // ── elementwise ──────────────────────────────────────────────────────

    pub fn add(&self, a: Var, b: Var) -> Var {
        let v = self.value_owned(a) + &*self.value(b);
        self.record(
            v,
            vec![a, b],
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let v = self.value_owned(a) - &*self.value(b);
        self.record(
            v,
            vec![a, b],
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(-ctx.grad.clone())]),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let v = self.value_owned(a) * &*self.value(b);
        self.record(
            v,
            vec![a, b],
            Box::new(|ctx| {
                vec![
                    Some(ctx.grad * ctx.inputs[1]),
                    Some(ctx.grad * ctx.inputs[0]),
                ]
            }),
        )
    }

    pub fn neg(&self, a: Var) -> Var {
        let v = -self.value_owned(a);
        self.record(v, vec![a], Box::new(|ctx| vec![Some(-ctx.grad.clone())]))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let v = self.value_owned(a) * c;
        self.record(
            v,
            vec![a],
            Box::new(move |ctx| vec![Some(ctx.grad * c)]),
        )
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let v = self.value_owned(a) + c;
        self.record(v, vec![a], Box::new(|ctx| vec![Some(ctx.grad.clone())]))
    }

    /// Multiply by a fixed mask (selection, zeroing). The mask is not a
    /// tape value; gradients flow through the retained entries only.
    pub fn mul_mask(&self, a: Var, mask: ArrayD<f64>) -> Var {
        let v = self.value_owned(a) * &mask;
        self.record(
            v,
            vec![a],
            Box::new(move |ctx| vec![Some(ctx.grad * &mask)]),
        )
    }

    pub fn relu(&self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.record(
            v,
            vec![a],
            Box::new(|ctx| {
                let mut g = ctx.grad.clone();
                g.zip_mut_with(ctx.inputs[0], |g, &x| {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                });
                vec![Some(g)]
            }),
        )
    }

    pub fn tanh(&self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.record(
            v,
            vec![a],
            Box::new(|ctx| {
                let mut g = ctx.grad.clone();
                g.zip_mut_with(ctx.out, |g, &y| *g *= 1.0 - y * y);
                vec![Some(g)]
            }),
        )
    }

    pub fn exp(&self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.record(
            v,
            vec![a],
            Box::new(|ctx| {
                let mut g = ctx.grad.clone();
                g.zip_mut_with(ctx.out, |g, &y| *g *= y);
                vec![Some(g)]
            }),
        )
    }

    pub fn cos(&self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::cos);
        self.record(
            v,
            vec![a],
            Box::new(|ctx| {
                let mut g = ctx.grad.clone();
                g.zip_mut_with(ctx.inputs[0], |g, &x| *g *= -x.sin());
                vec![Some(g)]
            }),
        )
    }

    /// `acos` of the input clamped to `[-1+eps, 1-eps]`. Outside the clamp
    /// range the derivative is zero.
    pub fn acos_clamped(&self, a: Var, eps: f64) -> Var {
        let lo = -1.0 + eps;
        let hi = 1.0 - eps;
        let v = self.value(a).mapv(|x| x.clamp(lo, hi).acos());
        self.record(
            v,
            vec![a],
            Box::new(move |ctx| {
                let mut g = ctx.grad.clone();
                g.zip_mut_with(ctx.inputs[0], |g, &x| {
                    if x > lo && x < hi {
                        *g *= -1.0 / (1.0 - x * x).sqrt();
                    } else {
                        *g = 0.0;
                    }
                });
                vec![Some(g)]
            }),
        )
    }

    /// `ln(max(x, eps))`; zero gradient where the clamp is active.
    pub fn ln_clamped(&self, a: Var, eps: f64) -> Var {
        let v = self.value(a).mapv(|x| x.max(eps).ln());
        self.record(
            v,
            vec![a],
            Box::new(move |ctx| {
                let mut g = ctx.grad.clone();
                g.zip_mut_with(ctx.inputs[0], |g, &x| {
                    if x > eps {
                        *g /= x;
                    } else {
                        *g = 0.0;
                    }
                });
                vec![Some(g)]
            }),
        )
    }

    // ── reductions ───────────────────────────────────────────────────────

    pub fn sum_all(&self, a: Var) -> Var {
        let v = scalar0(self.value(a).sum());
        self.record(
            v,
            vec![a],
            Box::new(|ctx| {
                let g = ctx.grad.iter().next().copied().unwrap_or(0.0);
                vec![Some(ArrayD::from_elem(ctx.inputs[0].raw_dim(), g))]
            }),
        )
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Row-wise log-sum-exp of a matrix: `(n, m) -> (n)`.
    pub fn logsumexp_rows(&self, a: Var) -> Var {
        let v = {
            let av = self.value(a);
            let m = as2(&av);
            Array1::from_iter(m.outer_iter().map(|row| logsumexp(row.iter().copied())))
                .into_dyn()
        };
        self.record(
            v,
            vec![a],
            Box::new(|ctx| {
                let x = as2(ctx.inputs[0]);
                let lse = as1(ctx.out);
                let g = as1(ctx.grad);
                let mut out = Array2::<f64>::zeros(x.raw_dim());
                for i in 0..x.nrows() {
                    for j in 0..x.ncols() {
                        out[[i, j]] = g[i] * (x[[i, j]] - lse[i]).exp();
                    }
                }
                vec![Some(out.into_dyn())]
            }),
        )
    }

    /// Column-wise log-sum-exp of a matrix: `(n, m) -> (m)`.
    pub fn logsumexp_cols(&self, a: Var) -> Var {
        let v = {
            let av = self.value(a);
            let m = as2(&av);
            Array1::from_iter(
                m.axis_iter(Axis(1))
                    .map(|col| logsumexp(col.iter().copied())),
            )
            .into_dyn()
        };
        self.record(
            v,
            vec![a],
            Box::new(|ctx| {
                let x = as2(ctx.inputs[0]);
                let lse = as1(ctx.out);
                let g = as1(ctx.grad);
                let mut out = Array2::<f64>::zeros(x.raw_dim());
                for i in 0..x.nrows() {
                    for j in 0..x.ncols() {
                        out[[i, j]] = g[j] * (x[[i, j]] - lse[j]).exp();
                    }
                }
                vec![Some(out.into_dyn())]
            }),
        )
    }

    // ── broadcasting ─────────────────────────────────────────────────────

    /// Add a per-row offset: `y[i, j] = x[i, j] + v[i]`.
    pub fn add_col(&self, x: Var, v: Var) -> Var {
        let out = {
            let xv = self.value(x);
            let vv = self.value(v);
            let m = as2(&xv);
            let o = as1(&vv);
            debug_assert_eq!(m.nrows(), o.len());
            let mut y = m.to_owned();
            for (mut row, &b) in y.outer_iter_mut().zip(o.iter()) {
                row += b;
            }
            y.into_dyn()
        };
        self.record(
            out,
            vec![x, v],
            Box::new(|ctx| {
                let g = as2(ctx.grad);
                let dv = g.sum_axis(Axis(1));
                vec![Some(ctx.grad.clone()), Some(dv.into_dyn())]
            }),
        )
    }

    /// Add a per-column offset: `y[i, j] = x[i, j] + v[j]`.
    pub fn add_row(&self, x: Var, v: Var) -> Var {
        let out = {
            let xv = self.value(x);
            let vv = self.value(v);
            let m = as2(&xv);
            let o = as1(&vv);
            debug_assert_eq!(m.ncols(), o.len());
            let mut y = m.to_owned();
            for mut row in y.outer_iter_mut() {
                row += &o;
            }
            y.into_dyn()
        };
        self.record(
            out,
            vec![x, v],
            Box::new(|ctx| {
                let g = as2(ctx.grad);
                let dv = g.sum_axis(Axis(0));
                vec![Some(ctx.grad.clone()), Some(dv.into_dyn())]
            }),
        )
    }

    // ── linear algebra ───────────────────────────────────────────────────

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let v = {
            let av = self.value(a);
            let bv = self.value(b);
            as2(&av).dot(&as2(&bv)).into_dyn()
        };
        self.record(
            v,
            vec![a, b],
            Box::new(|ctx| {
                let g = as2(ctx.grad);
                let a = as2(ctx.inputs[0]);
                let b = as2(ctx.inputs[1]);
                let da = if ctx.needs[0] {
                    Some(g.dot(&b.t()).into_dyn())
                } else {
                    None
                };
                let db = if ctx.needs[1] {
                    Some(a.t().dot(&g).into_dyn())
                } else {
                    None
                };
                vec![da, db]
            }),
        )
    }

    pub fn transpose(&self, a: Var) -> Var {
        let v = as2(&self.value(a)).t().to_owned().into_dyn();
        self.record(
            v,
            vec![a],
            Box::new(|ctx| vec![Some(as2(ctx.grad).t().to_owned().into_dyn())]),
        )
    }

    // ── structural ───────────────────────────────────────────────────────

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let v = self
            .value_owned(a)
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: incompatible size");
        self.record(
            v,
            vec![a],
            Box::new(|ctx| {
                let orig = ctx.inputs[0].raw_dim();
                vec![Some(
                    ctx.grad
                        .clone()
                        .into_shape_with_order(orig)
                        .expect("reshape backward"),
                )]
            }),
        )
    }

    pub fn concat_cols(&self, a: Var, b: Var) -> Var {
        let v = {
            let av = self.value(a);
            let bv = self.value(b);
            ndarray::concatenate(Axis(1), &[as2(&av), as2(&bv)])
                .expect("concat_cols")
                .into_dyn()
        };
        self.record(
            v,
            vec![a, b],
            Box::new(|ctx| {
                let split = ctx.inputs[0].shape()[1];
                let g = as2(ctx.grad);
                let da = g.slice(ndarray::s![.., ..split]).to_owned();
                let db = g.slice(ndarray::s![.., split..]).to_owned();
                vec![Some(da.into_dyn()), Some(db.into_dyn())]
            }),
        )
    }

    pub fn concat_rows(&self, a: Var, b: Var) -> Var {
        let v = {
            let av = self.value(a);
            let bv = self.value(b);
            ndarray::concatenate(Axis(0), &[as2(&av), as2(&bv)])
                .expect("concat_rows")
                .into_dyn()
        };
        self.record(
            v,
            vec![a, b],
            Box::new(|ctx| {
                let split = ctx.inputs[0].shape()[0];
                let g = as2(ctx.grad);
                let da = g.slice(ndarray::s![..split, ..]).to_owned();
                let db = g.slice(ndarray::s![split.., ..]).to_owned();
                vec![Some(da.into_dyn()), Some(db.into_dyn())]
            }),
        )
    }

    /// Stack 1-d variables of equal length into a `(k, d)` matrix.
    pub fn stack_rows(&self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows: empty input");
        let d = self.value(rows[0]).len();
        let mut m = Array2::<f64>::zeros((rows.len(), d));
        for (i, &r) in rows.iter().enumerate() {
            let rv = self.value(r);
            m.row_mut(i).assign(&as1(&rv));
        }
        self.record(
            m.into_dyn(),
            rows.to_vec(),
            Box::new(|ctx| {
                let g = as2(ctx.grad);
                (0..g.nrows())
                    .map(|i| Some(g.row(i).to_owned().into_dyn()))
                    .collect()
            }),
        )
    }

    pub fn slice_rows(&self, a: Var, start: usize, end: usize) -> Var {
        let v = as2(&self.value(a))
            .slice(ndarray::s![start..end, ..])
            .to_owned()
            .into_dyn();
        self.record(
            v,
            vec![a],
            Box::new(move |ctx| {
                let mut da = Array2::<f64>::zeros((
                    ctx.inputs[0].shape()[0],
                    ctx.inputs[0].shape()[1],
                ));
                da.slice_mut(ndarray::s![start..end, ..])
                    .assign(&as2(ctx.grad));
                vec![Some(da.into_dyn())]
            }),
        )
    }

    /// Select rows by index (duplicates allowed); backward scatter-adds.
    pub fn gather_rows(&self, a: Var, indices: &[usize]) -> Var {
        let idx = indices.to_vec();
        let v = {
            let av = self.value(a);
            let m = as2(&av);
            let mut out = Array2::<f64>::zeros((idx.len(), m.ncols()));
            for (r, &i) in idx.iter().enumerate() {
                out.row_mut(r).assign(&m.row(i));
            }
            out.into_dyn()
        };
        self.record(
            v,
            vec![a],
            Box::new(move |ctx| {
                let g = as2(ctx.grad);
                let mut da = Array2::<f64>::zeros((
                    ctx.inputs[0].shape()[0],
                    ctx.inputs[0].shape()[1],
                ));
                for (r, &i) in idx.iter().enumerate() {
                    let mut row = da.row_mut(i);
                    row += &g.row(r);
                }
                vec![Some(da.into_dyn())]
            }),
        )
    }

    /// Gather individual matrix entries into a vector.
    pub fn gather_entries(&self, a: Var, coords: &[(usize, usize)]) -> Var {
        let cs = coords.to_vec();
        let v = {
            let av = self.value(a);
            let m = as2(&av);
            Array1::from_iter(cs.iter().map(|&(i, j)| m[[i, j]])).into_dyn()
        };
        self.record(
            v,
            vec![a],
            Box::new(move |ctx| {
                let g = as1(ctx.grad);
                let mut da = Array2::<f64>::zeros((
                    ctx.inputs[0].shape()[0],
                    ctx.inputs[0].shape()[1],
                ));
                for (k, &(i, j)) in cs.iter().enumerate() {
                    da[[i, j]] += g[k];
                }
                vec![Some(da.into_dyn())]
            }),
        )
    }

    // ── geometry / pooling ───────────────────────────────────────────────

    /// Normalize each row to unit Euclidean norm; rows with norm below
    /// `eps` are scaled by `1/eps` instead.
    pub fn l2_normalize_rows(&self, a: Var, eps: f64) -> Var {
        let v = {
            let av = self.value(a);
            let m = as2(&av);
            let mut out = m.to_owned();
            for mut row in out.outer_iter_mut() {
                let n = row.dot(&row).sqrt().max(eps);
                row /= n;
            }
            out.into_dyn()
        };
        self.record(
            v,
            vec![a],
            Box::new(move |ctx| {
                let x = as2(ctx.inputs[0]);
                let y = as2(ctx.out);
                let g = as2(ctx.grad);
                let mut da = Array2::<f64>::zeros(x.raw_dim());
                for i in 0..x.nrows() {
                    let xr = x.row(i);
                    let n = xr.dot(&xr).sqrt();
                    if n > eps {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot = yr.dot(&gr);
                        for j in 0..x.ncols() {
                            da[[i, j]] = (gr[j] - yr[j] * dot) / n;
                        }
                    } else {
                        for j in 0..x.ncols() {
                            da[[i, j]] = g[[i, j]] / eps;
                        }
                    }
                }
                vec![Some(da.into_dyn())]
            }),
        )
    }

    /// Sample a `(c, h, w)` map at `points` (x, y) with bilinear
    /// interpolation and border clamp. Output is `(c, points.len())`.
    /// Differentiable in the map only; sample locations are data.
    pub fn bilinear_sample(&self, map: Var, points: &[(f64, f64)]) -> Var {
        let taps: Vec<SampleTap> = {
            let mv = self.value(map);
            let m = as3(&mv);
            let (_, h, w) = m.dim();
            points
                .iter()
                .map(|&(x, y)| SampleTap::new(x, y, h, w))
                .collect()
        };
        let v = {
            let mv = self.value(map);
            let m = as3(&mv);
            let c = m.dim().0;
            let mut out = Array2::<f64>::zeros((c, taps.len()));
            for (s, t) in taps.iter().enumerate() {
                for ch in 0..c {
                    out[[ch, s]] = t.w00 * m[[ch, t.y0, t.x0]]
                        + t.w01 * m[[ch, t.y0, t.x1]]
                        + t.w10 * m[[ch, t.y1, t.x0]]
                        + t.w11 * m[[ch, t.y1, t.x1]];
                }
            }
            out.into_dyn()
        };
        self.record(
            v,
            vec![map],
            Box::new(move |ctx| {
                let g = as2(ctx.grad);
                let dim = ctx.inputs[0].raw_dim();
                let mut dm = ArrayD::<f64>::zeros(dim);
                let mut dmv = dm.view_mut().into_dimensionality::<Ix3>().unwrap();
                let c = dmv.dim().0;
                for (s, t) in taps.iter().enumerate() {
                    for ch in 0..c {
                        let gv = g[[ch, s]];
                        dmv[[ch, t.y0, t.x0]] += t.w00 * gv;
                        dmv[[ch, t.y0, t.x1]] += t.w01 * gv;
                        dmv[[ch, t.y1, t.x0]] += t.w10 * gv;
                        dmv[[ch, t.y1, t.x1]] += t.w11 * gv;
                    }
                }
                vec![Some(dm)]
            }),
        )
    }

    /// Contract the last axis of a `(c, m, n)` tensor with a fixed weight
    /// vector of length `n`, yielding `(c, m)`.
    pub fn contract_last3(&self, x: Var, w: &Array1<f64>) -> Var {
        let wv = w.clone();
        let v = {
            let xv = self.value(x);
            let t = as3(&xv);
            let (c, m, n) = t.dim();
            debug_assert_eq!(n, wv.len());
            let mut out = Array2::<f64>::zeros((c, m));
            for ci in 0..c {
                for mi in 0..m {
                    let mut acc = 0.0;
                    for ni in 0..n {
                        acc += t[[ci, mi, ni]] * wv[ni];
                    }
                    out[[ci, mi]] = acc;
                }
            }
            out.into_dyn()
        };
        self.record(
            v,
            vec![x],
            Box::new(move |ctx| {
                let g = as2(ctx.grad);
                let dim = ctx.inputs[0].raw_dim();
                let mut dx = ArrayD::<f64>::zeros(dim);
                let mut dxv = dx.view_mut().into_dimensionality::<Ix3>().unwrap();
                let (c, m, n) = dxv.dim();
                for ci in 0..c {
                    for mi in 0..m {
                        let gv = g[[ci, mi]];
                        for ni in 0..n {
                            dxv[[ci, mi, ni]] += gv * wv[ni];
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Max-pool contiguous column groups of a `(c, m)` matrix into
    /// `(c, groups.len())`. Ties route the gradient to the first maximum.
    pub fn group_max(&self, x: Var, groups: &[(usize, usize)]) -> Var {
        let gs = groups.to_vec();
        let (v, argmax) = {
            let xv = self.value(x);
            let m = as2(&xv);
            let c = m.nrows();
            let mut out = Array2::<f64>::zeros((c, gs.len()));
            let mut arg = vec![0usize; c * gs.len()];
            for (gi, &(s, e)) in gs.iter().enumerate() {
                debug_assert!(s < e, "group_max: empty group");
                for ci in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_j = s;
                    for j in s..e {
                        if m[[ci, j]] > best {
                            best = m[[ci, j]];
                            best_j = j;
                        }
                    }
                    out[[ci, gi]] = best;
                    arg[ci * gs.len() + gi] = best_j;
                }
            }
            (out.into_dyn(), arg)
        };
        let n_groups = gs.len();
        self.record(
            v,
            vec![x],
            Box::new(move |ctx| {
                let g = as2(ctx.grad);
                let mut dx = Array2::<f64>::zeros((
                    ctx.inputs[0].shape()[0],
                    ctx.inputs[0].shape()[1],
                ));
                for ci in 0..dx.nrows() {
                    for gi in 0..n_groups {
                        dx[[ci, argmax[ci * n_groups + gi]]] += g[[ci, gi]];
                    }
                }
                vec![Some(dx.into_dyn())]
            }),
        )
    }

    /// Mean over the second axis of a `(c, k)` matrix, yielding `(c)`.
    pub fn mean_axis1(&self, x: Var) -> Var {
        let v = {
            let xv = self.value(x);
            let m = as2(&xv);
            m.mean_axis(Axis(1)).expect("mean_axis1: empty").into_dyn()
        };
        self.record(
            v,
            vec![x],
            Box::new(|ctx| {
                let g = as1(ctx.grad);
                let (c, k) = (ctx.inputs[0].shape()[0], ctx.inputs[0].shape()[1]);
                let mut dx = Array2::<f64>::zeros((c, k));
                for ci in 0..c {
                    let gv = g[ci] / k as f64;
                    for j in 0..k {
                        dx[[ci, j]] = gv;
                    }
                }
                vec![Some(dx.into_dyn())]
            }),
        )
    }

    // ── convolution ──────────────────────────────────────────────────────

    /// 2-d convolution with "same" (ceil) padding.
    ///
    /// `x` is `(c_in, h, w)`, `kernel` is `(c_out, c_in, kh, kw)`, `bias`
    /// is `(c_out)`. Output is `(c_out, ceil(h/stride), ceil(w/stride))`.
    pub fn conv2d(&self, x: Var, kernel: Var, bias: Var, stride: usize) -> Var {
        let (patches, out_h, out_w, geom) = {
            let xv = self.value(x);
            let kv = self.value(kernel);
            let xm = as3(&xv);
            let kshape = kv.shape();
            let (kh, kw) = (kshape[2], kshape[3]);
            let (_, h, w) = xm.dim();
            let out_h = h.div_ceil(stride);
            let out_w = w.div_ceil(stride);
            let geom = ConvGeom::new(h, w, kh, kw, stride, out_h, out_w);
            let patches = im2col(&xm, &geom);
            (patches, out_h, out_w, geom)
        };
        let v = {
            let kv = self.value(kernel);
            let bv = self.value(bias);
            let ks = kv.shape();
            let c_out = ks[0];
            let km = as_kernel_matrix(&kv); // (c_in*kh*kw, c_out)
            let y2 = patches.dot(&km); // (oh*ow, c_out)
            let b = as1(&bv);
            let mut out = Array3::<f64>::zeros((c_out, out_h, out_w));
            for p in 0..out_h * out_w {
                let (oy, ox) = (p / out_w, p % out_w);
                for c in 0..c_out {
                    out[[c, oy, ox]] = y2[[p, c]] + b[c];
                }
            }
            out.into_dyn()
        };
        self.record(
            v,
            vec![x, kernel, bias],
            Box::new(move |ctx| {
                let g = as3(ctx.grad);
                let (c_out, oh, ow) = g.dim();
                let mut g2 = Array2::<f64>::zeros((oh * ow, c_out));
                for c in 0..c_out {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            g2[[oy * ow + ox, c]] = g[[c, oy, ox]];
                        }
                    }
                }
                let db = if ctx.needs[2] {
                    Some(g2.sum_axis(Axis(0)).into_dyn())
                } else {
                    None
                };
                let dk = if ctx.needs[1] {
                    let dkm = patches.t().dot(&g2); // (c_in*kh*kw, c_out)
                    let ks = ctx.inputs[1].shape();
                    let mut dk = ArrayD::<f64>::zeros(ctx.inputs[1].raw_dim());
                    {
                        let mut dkv = dk
                            .view_mut()
                            .into_dimensionality::<ndarray::Ix4>()
                            .unwrap();
                        for co in 0..ks[0] {
                            for ci in 0..ks[1] {
                                for ky in 0..ks[2] {
                                    for kx in 0..ks[3] {
                                        let row = (ci * ks[2] + ky) * ks[3] + kx;
                                        dkv[[co, ci, ky, kx]] = dkm[[row, co]];
                                    }
                                }
                            }
                        }
                    }
                    Some(dk)
                } else {
                    None
                };
                let dx = if ctx.needs[0] {
                    let kv = ctx.inputs[1];
                    let km = as_kernel_matrix(kv);
                    let dpatches = g2.dot(&km.t()); // (oh*ow, c_in*kh*kw)
                    let mut dx = ArrayD::<f64>::zeros(ctx.inputs[0].raw_dim());
                    {
                        let mut dxv =
                            dx.view_mut().into_dimensionality::<Ix3>().unwrap();
                        col2im_accumulate(&mut dxv, &dpatches, &geom);
                    }
                    Some(dx)
                } else {
                    None
                };
                vec![dx, dk, db]
            }),
        )
    }
}

struct SampleTap {
    y0: usize,
    x0: usize,
    y1: usize,
    x1: usize,
    w00: f64,
    w01: f64,
    w10: f64,
    w11: f64,
}

impl SampleTap {
    fn new(x: f64, y: f64, h: usize, w: usize) -> Self {
        let xc = x.clamp(0.0, (w - 1) as f64);
        let yc = y.clamp(0.0, (h - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        SampleTap {
            y0,
            x0,
            y1,
            x1,
            w00: (1.0 - fy) * (1.0 - fx),
            w01: (1.0 - fy) * fx,
            w10: fy * (1.0 - fx),
            w11: fy * fx,
        }
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

impl ConvGeom {
    fn new(h: usize, w: usize, kh: usize, kw: usize, stride: usize, out_h: usize, out_w: usize) -> Self {
        let total_h = ((out_h - 1) * stride + kh).saturating_sub(h);
        let total_w = ((out_w - 1) * stride + kw).saturating_sub(w);
        ConvGeom {
            h,
            w,
            kh,
            kw,
            stride,
            out_h,
            out_w,
            pad_top: total_h / 2,
            pad_left: total_w / 2,
        }
    }
}

/// Lay out receptive fields as rows: `(out_h*out_w, c_in*kh*kw)`.
fn im2col(x: &ndarray::ArrayView3<'_, f64>, g: &ConvGeom) -> Array2<f64> {
    let (c_in, _, _) = x.dim();
    let cols = c_in * g.kh * g.kw;
    let mut p = Array2::<f64>::zeros((g.out_h * g.out_w, cols));
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = oy * g.out_w + ox;
            let base_y = (oy * g.stride) as isize - g.pad_top as isize;
            let base_x = (ox * g.stride) as isize - g.pad_left as isize;
            for ci in 0..c_in {
                for ky in 0..g.kh {
                    let iy = base_y + ky as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = base_x + kx as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        p[[row, (ci * g.kh + ky) * g.kw + kx]] =
                            x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    p
}

fn col2im_accumulate(
    dx: &mut ndarray::ArrayViewMut3<'_, f64>,
    dpatches: &Array2<f64>,
    g: &ConvGeom,
) {
    let c_in = dx.dim().0;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = oy * g.out_w + ox;
            let base_y = (oy * g.stride) as isize - g.pad_top as isize;
            let base_x = (ox * g.stride) as isize - g.pad_left as isize;
            for ci in 0..c_in {
                for ky in 0..g.kh {
                    let iy = base_y + ky as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = base_x + kx as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        dx[[ci, iy as usize, ix as usize]] +=
                            dpatches[[row, (ci * g.kh + ky) * g.kw + kx]];
                    }
                }
            }
        }
    }
}

/// Reshape a `(c_out, c_in, kh, kw)` kernel into `(c_in*kh*kw, c_out)`.
fn as_kernel_matrix(k: &ArrayD<f64>) -> Array2<f64> {
    let ks = k.shape();
    let (c_out, c_in, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
    let kv = k.view().into_dimensionality::<ndarray::Ix4>().unwrap();
    let mut m = Array2::<f64>::zeros((c_in * kh * kw, c_out));
    for co in 0..c_out {
        for ci in 0..c_in {
            for ky in 0..kh {
                for kx in 0..kw {
                    m[[(ci * kh + ky) * kw + kx, co]] = kv[[co, ci, ky, kx]];
                }
            }
        }
    }
    m
}

fn logsumexp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + it.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Reject non-finite values early; used at module boundaries.
pub fn all_finite(a: &ArrayViewD<'_, f64>) -> bool {
    a.iter().all(|x| x.is_finite())
}
