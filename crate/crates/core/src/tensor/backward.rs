use super::kernels;
use super::tape::{gelu_grad, Op, Tape, Var};
use super::Scalar;
use crate::error::{Error, Result};

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize) -> &mut [T] {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Scalar> Tape<T> {
    /// Reverse sweep from a scalar loss. Each recorded op is visited once, in
    /// reverse order; gradients of values used several times add up. Every
    /// node reached that requires a gradient gets its `grad` buffer filled.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            match g {
                Some(g) if node.value.requires_grad() => node.value.set_grad(g),
                _ => node.value.clear_grad(),
            }
        }
        for node in self.nodes.iter_mut().skip(n) {
            node.value.clear_grad();
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let wants = |v: Var| self.nodes[v.0].value.requires_grad();
        let len = |v: Var| self.nodes[v.0].value.numel();
        let val = |v: Var| self.nodes[v.0].value.data();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, nn) = (sa[0], sa[1], sb[1]);
                if wants(*a) {
                    let da = accumulate(&mut grads[a.0], m * k);
                    kernels::matmul_nt_acc(g, val(*b), da, m, nn, k);
                }
                if wants(*b) {
                    let db = accumulate(&mut grads[b.0], k * nn);
                    kernels::matmul_tn_acc(val(*a), g, db, m, k, nn);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, m, k, nn) = (sa[0], sa[1], sa[2], sb[2]);
                for s in 0..bs {
                    let gs = &g[s * m * nn..(s + 1) * m * nn];
                    if wants(*a) {
                        let da = accumulate(&mut grads[a.0], bs * m * k);
                        kernels::matmul_nt_acc(
                            gs,
                            &val(*b)[s * k * nn..(s + 1) * k * nn],
                            &mut da[s * m * k..(s + 1) * m * k],
                            m,
                            nn,
                            k,
                        );
                    }
                    if wants(*b) {
                        let db = accumulate(&mut grads[b.0], bs * k * nn);
                        kernels::matmul_tn_acc(
                            &val(*a)[s * m * k..(s + 1) * m * k],
                            gs,
                            &mut db[s * k * nn..(s + 1) * k * nn],
                            m,
                            k,
                            nn,
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        let d = accumulate(&mut grads[v.0], g.len());
                        d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    let d = accumulate(&mut grads[a.0], g.len());
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                }
                if wants(*b) {
                    let d = accumulate(&mut grads[b.0], g.len());
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g);
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if wants(v) {
                        let o = val(other);
                        let d = accumulate(&mut grads[v.0], g.len());
                        for ((d, &g), &o) in d.iter_mut().zip(g).zip(o) {
                            *d += g * o;
                        }
                    }
                }
            }
            Op::Scale(x, c) => {
                if wants(*x) {
                    let d = accumulate(&mut grads[x.0], g.len());
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *c);
                }
            }
            Op::BiasAdd { x, bias, inner } => {
                if wants(*x) {
                    let d = accumulate(&mut grads[x.0], g.len());
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                }
                if wants(*bias) {
                    let nb = len(*bias);
                    let mut acc = vec![0.0f64; nb];
                    for (idx, &gv) in g.iter().enumerate() {
                        acc[(idx / inner) % nb] += gv.as_f64();
                    }
                    let d = accumulate(&mut grads[bias.0], nb);
                    d.iter_mut().zip(acc).for_each(|(d, a)| *d += T::of(a));
                }
            }
            Op::ScaleShift {
                x,
                gamma,
                beta,
                inner,
            } => {
                let nc = len(*gamma);
                let gam = val(*gamma);
                let xs = val(*x);
                if wants(*x) {
                    let d = accumulate(&mut grads[x.0], g.len());
                    for (idx, (d, &gv)) in d.iter_mut().zip(g).enumerate() {
                        *d += gv * gam[(idx / inner) % nc];
                    }
                }
                if wants(*gamma) || wants(*beta) {
                    let mut dg = vec![0.0f64; nc];
                    let mut db = vec![0.0f64; nc];
                    for (idx, (&gv, &xv)) in g.iter().zip(xs).enumerate() {
                        let c = (idx / inner) % nc;
                        dg[c] += gv.as_f64() * xv.as_f64();
                        db[c] += gv.as_f64();
                    }
                    if wants(*gamma) {
                        let d = accumulate(&mut grads[gamma.0], nc);
                        d.iter_mut().zip(dg).for_each(|(d, a)| *d += T::of(a));
                    }
                    if wants(*beta) {
                        let d = accumulate(&mut grads[beta.0], nc);
                        d.iter_mut().zip(db).for_each(|(d, a)| *d += T::of(a));
                    }
                }
            }
            Op::Relu(x) => {
                if wants(*x) {
                    let xs = val(*x);
                    let d = accumulate(&mut grads[x.0], g.len());
                    for ((d, &gv), &xv) in d.iter_mut().zip(g).zip(xs) {
                        if xv > T::zero() {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if wants(*x) {
                    let xs = val(*x);
                    let d = accumulate(&mut grads[x.0], g.len());
                    for ((d, &gv), &xv) in d.iter_mut().zip(g).zip(xs) {
                        *d += gv * gelu_grad(xv);
                    }
                }
            }
            Op::Log(x) => {
                if wants(*x) {
                    let xs = val(*x);
                    let d = accumulate(&mut grads[x.0], g.len());
                    for ((d, &gv), &xv) in d.iter_mut().zip(g).zip(xs) {
                        *d += gv / xv;
                    }
                }
            }
            Op::Softmax {
                x,
                outer,
                dim,
                inner,
            } => {
                if wants(*x) {
                    let d = accumulate(&mut grads[x.0], g.len());
                    for o in 0..*outer {
                        for q in 0..*inner {
                            let at = |k: usize| (o * dim + k) * inner + q;
                            let dot: f64 = (0..*dim)
                                .map(|k| g[at(k)].as_f64() * out[at(k)].as_f64())
                                .sum();
                            for k in 0..*dim {
                                let y = out[at(k)].as_f64();
                                d[at(k)] += T::of(y * (g[at(k)].as_f64() - dot));
                            }
                        }
                    }
                }
            }
            Op::Normalize { x, group, inv_std } => {
                if wants(*x) {
                    let d = accumulate(&mut grads[x.0], g.len());
                    let gs = *group;
                    for (c, &inv) in inv_std.iter().enumerate() {
                        let range = c * gs..(c + 1) * gs;
                        let (gc, yc) = (&g[range.clone()], &out[range.clone()]);
                        let mean_g = gc.iter().map(|v| v.as_f64()).sum::<f64>() / gs as f64;
                        let mean_gy = gc
                            .iter()
                            .zip(yc)
                            .map(|(a, b)| a.as_f64() * b.as_f64())
                            .sum::<f64>()
                            / gs as f64;
                        let inv = inv.as_f64();
                        for ((dv, &gv), &yv) in d[range].iter_mut().zip(gc).zip(yc) {
                            *dv += T::of(inv * (gv.as_f64() - mean_g - yv.as_f64() * mean_gy));
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if wants(*x) {
                    let d = accumulate(&mut grads[x.0], g.len());
                    for ((d, &gv), &m) in d.iter_mut().zip(g).zip(mask) {
                        *d += gv * m;
                    }
                }
            }
            Op::Concat {
                a,
                b,
                outer,
                a_block,
                b_block,
            } => {
                let row = a_block + b_block;
                if wants(*a) {
                    let d = accumulate(&mut grads[a.0], outer * a_block);
                    for o in 0..*outer {
                        for (dv, &gv) in d[o * a_block..(o + 1) * a_block]
                            .iter_mut()
                            .zip(&g[o * row..o * row + a_block])
                        {
                            *dv += gv;
                        }
                    }
                }
                if wants(*b) {
                    let d = accumulate(&mut grads[b.0], outer * b_block);
                    for o in 0..*outer {
                        for (dv, &gv) in d[o * b_block..(o + 1) * b_block]
                            .iter_mut()
                            .zip(&g[o * row + a_block..(o + 1) * row])
                        {
                            *dv += gv;
                        }
                    }
                }
            }
            Op::Slice {
                x,
                outer,
                src_block,
                start,
                len: width,
            } => {
                if wants(*x) {
                    let d = accumulate(&mut grads[x.0], outer * src_block);
                    for o in 0..*outer {
                        let base = o * src_block + start;
                        for (dv, &gv) in d[base..base + width]
                            .iter_mut()
                            .zip(&g[o * width..(o + 1) * width])
                        {
                            *dv += gv;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if wants(*x) {
                    let d = accumulate(&mut grads[x.0], g.len());
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                }
            }
            Op::Permute { x, perm } => {
                if wants(*x) {
                    let out_shape = node.value.shape();
                    let (back, _) =
                        kernels::permute(g, out_shape, &kernels::inverse_permutation(perm));
                    let d = accumulate(&mut grads[x.0], g.len());
                    d.iter_mut().zip(back).for_each(|(d, g)| *d += g);
                }
            }
            Op::GatherRows { x, idx, width } => {
                if wants(*x) {
                    let d = accumulate(&mut grads[x.0], len(*x));
                    for (r, &src) in idx.iter().enumerate() {
                        for (dv, &gv) in d[src * width..(src + 1) * width]
                            .iter_mut()
                            .zip(&g[r * width..(r + 1) * width])
                        {
                            *dv += gv;
                        }
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                geom,
                batch,
                c_out,
                cols,
            } => {
                let (patch, plane) = (geom.patch(), geom.out_plane());
                let in_size = geom.c_in * geom.h * geom.w;
                if wants(*w) {
                    let dw = accumulate(&mut grads[w.0], c_out * patch);
                    for s in 0..*batch {
                        kernels::matmul_nt_acc(
                            &g[s * c_out * plane..(s + 1) * c_out * plane],
                            &cols[s * patch * plane..(s + 1) * patch * plane],
                            dw,
                            *c_out,
                            plane,
                            patch,
                        );
                    }
                }
                if wants(*x) {
                    let wv = val(*w);
                    let mut dcols = vec![T::zero(); patch * plane];
                    let dx = accumulate(&mut grads[x.0], batch * in_size);
                    for s in 0..*batch {
                        dcols.iter_mut().for_each(|v| *v = T::zero());
                        kernels::matmul_tn_acc(
                            wv,
                            &g[s * c_out * plane..(s + 1) * c_out * plane],
                            &mut dcols,
                            *c_out,
                            patch,
                            plane,
                        );
                        kernels::col2im_acc(
                            &dcols,
                            geom,
                            &mut dx[s * in_size..(s + 1) * in_size],
                        );
                    }
                }
            }
            Op::GlobalAvgPool { x, plane } => {
                if wants(*x) {
                    let scale = T::of(1.0 / *plane as f64);
                    let d = accumulate(&mut grads[x.0], g.len() * plane);
                    for (c, &gv) in g.iter().enumerate() {
                        d[c * plane..(c + 1) * plane]
                            .iter_mut()
                            .for_each(|v| *v += gv * scale);
                    }
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    let d = accumulate(&mut grads[x.0], len(*x));
                    d.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Mean(x) => {
                if wants(*x) {
                    let nx = len(*x);
                    let gv = g[0] / T::of(nx as f64);
                    let d = accumulate(&mut grads[x.0], nx);
                    d.iter_mut().for_each(|v| *v += gv);
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if wants(*logits) {
                    let c = probs.len() / labels.len();
                    let scale = g[0].as_f64() / labels.len() as f64;
                    let d = accumulate(&mut grads[logits.0], probs.len());
                    for (b, &label) in labels.iter().enumerate() {
                        for k in 0..c {
                            let onehot = if k == label { 1.0 } else { 0.0 };
                            d[b * c + k] += T::of((probs[b * c + k].as_f64() - onehot) * scale);
                        }
                    }
                }
            }
        }
    }
}
