//! Complex, quaternion and biquaternion arithmetic over coefficient blocks.
//!
//! A biquaternion of width `d` is stored flat as `8d` reals: four complex
//! coefficients on the bases `(1, i, j, k)`, each laid out as `d` real parts
//! followed by `d` imaginary parts:
//!
//! ```text
//! [c0.re | c0.im | c1.re | c1.im | c2.re | c2.im | c3.re | c3.im]
//! ```
//!
//! The slice kernels (`*_into`, [`hamilton_backward`]) operate on that flat
//! layout directly and are what the model calls in its inner loops. The owned
//! [`ComplexBlock`] / [`Biquat`] types wrap the same kernels with shape checks.

use crate::error::{Error, Result};
use crate::real::Real;

/// Real and imaginary parts of `d` independent complex numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexBlock<T> {
    pub re: Vec<T>,
    pub im: Vec<T>,
}

impl<T: Real> ComplexBlock<T> {
    pub fn new(re: Vec<T>, im: Vec<T>) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::dim("complex block parts", re.len(), im.len()));
        }
        if re.is_empty() {
            return Err(Error::Invalid("complex block must have d >= 1".into()));
        }
        Ok(Self { re, im })
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            re: vec![T::zero(); d],
            im: vec![T::zero(); d],
        }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }
}

/// Element-wise complex product `(a.re b.re - a.im b.im, a.re b.im + a.im b.re)`.
pub fn complex_mul<T: Real>(a: &ComplexBlock<T>, b: &ComplexBlock<T>) -> Result<ComplexBlock<T>> {
    if a.len() != b.len() {
        return Err(Error::dim("complex_mul operand length", a.len(), b.len()));
    }
    let mut out = ComplexBlock::zeros(a.len());
    complex_mul_acc(
        T::one(),
        &a.re,
        &a.im,
        &b.re,
        &b.im,
        &mut out.re,
        &mut out.im,
    );
    Ok(out)
}

/// `out += sign * (a ⊛ b)` over split real/imaginary slices.
#[inline]
fn complex_mul_acc<T: Real>(
    sign: T,
    a_re: &[T],
    a_im: &[T],
    b_re: &[T],
    b_im: &[T],
    out_re: &mut [T],
    out_im: &mut [T],
) {
    for n in 0..a_re.len() {
        let (ar, ai, br, bi) = (a_re[n], a_im[n], b_re[n], b_im[n]);
        out_re[n] += sign * (ar * br - ai * bi);
        out_im[n] += sign * (ar * bi + ai * br);
    }
}

/// `out += sign * (g ⊛ conj(b))`, the adjoint of right-multiplication by `b`.
#[inline]
fn complex_mul_conj_acc<T: Real>(
    sign: T,
    g_re: &[T],
    g_im: &[T],
    b_re: &[T],
    b_im: &[T],
    out_re: &mut [T],
    out_im: &mut [T],
) {
    for n in 0..g_re.len() {
        let (gr, gi, br, bi) = (g_re[n], g_im[n], b_re[n], b_im[n]);
        out_re[n] += sign * (gr * br + gi * bi);
        out_im[n] += sign * (gi * br - gr * bi);
    }
}

/// Multiplication table of the quaternion bases `(1, i, j, k)`:
/// `u_a * u_b = Σ_c H[a][b][c] u_c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructureConstants {
    table: [[[i8; 4]; 4]; 4],
}

impl StructureConstants {
    /// Builds the table from the basis rules `i² = j² = k² = -1`,
    /// `ij = k`, `jk = i`, `ki = j` and their anti-commuted forms.
    pub const fn quaternion() -> Self {
        // (sign, result basis) for u_a * u_b, indexed [a][b]; 0 = 1, 1 = i, 2 = j, 3 = k.
        const RULES: [[(i8, usize); 4]; 4] = [
            [(1, 0), (1, 1), (1, 2), (1, 3)],
            [(1, 1), (-1, 0), (1, 3), (-1, 2)],
            [(1, 2), (-1, 3), (-1, 0), (1, 1)],
            [(1, 3), (1, 2), (-1, 1), (-1, 0)],
        ];
        let mut table = [[[0i8; 4]; 4]; 4];
        let mut a = 0;
        while a < 4 {
            let mut b = 0;
            while b < 4 {
                let (sign, c) = RULES[a][b];
                table[a][b][c] = sign;
                b += 1;
            }
            a += 1;
        }
        Self { table }
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> i8 {
        self.table[a][b][c]
    }

    /// Overwrites one entry. Exists so self-check suites can verify that a
    /// corrupted table is detected.
    pub fn set(&mut self, a: usize, b: usize, c: usize, value: i8) {
        self.table[a][b][c] = value;
    }

    pub fn nonzero_count(&self) -> usize {
        self.table
            .iter()
            .flatten()
            .flatten()
            .filter(|&&v| v != 0)
            .count()
    }

    /// Nonzero entries as `(a, b, c, sign)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize, i8)> + '_ {
        (0..4).flat_map(move |a| {
            (0..4).flat_map(move |b| {
                (0..4).filter_map(move |c| {
                    let v = self.table[a][b][c];
                    (v != 0).then_some((a, b, c, v))
                })
            })
        })
    }
}

impl Default for StructureConstants {
    fn default() -> Self {
        Self::quaternion()
    }
}

pub const QUATERNION: StructureConstants = StructureConstants::quaternion();

/// Borrowed real / imaginary halves of coefficient `c` in a flat `8d` slice.
#[inline]
fn coeff<T>(x: &[T], c: usize, d: usize) -> (&[T], &[T]) {
    let base = 2 * c * d;
    (&x[base..base + d], &x[base + d..base + 2 * d])
}

#[inline]
fn coeff_mut<T>(x: &mut [T], c: usize, d: usize) -> (&mut [T], &mut [T]) {
    let base = 2 * c * d;
    let (re, im) = x[base..base + 2 * d].split_at_mut(d);
    (re, im)
}

/// `out = a ⊗ b` on flat `8d` slices, driven by the structure-constant table.
pub fn hamilton_into<T: Real>(sc: &StructureConstants, a: &[T], b: &[T], out: &mut [T], d: usize) {
    debug_assert!(a.len() == 8 * d && b.len() == 8 * d && out.len() == 8 * d);
    out.fill(T::zero());
    for (ia, ib, ic, sign) in sc.entries() {
        let (a_re, a_im) = coeff(a, ia, d);
        let (b_re, b_im) = coeff(b, ib, d);
        let (o_re, o_im) = coeff_mut(out, ic, d);
        complex_mul_acc(T::lit(sign as f64), a_re, a_im, b_re, b_im, o_re, o_im);
    }
}

/// Accumulates the gradients of `out = a ⊗ b` into `grad_a` and `grad_b`
/// given `grad_out`.
pub fn hamilton_backward<T: Real>(
    sc: &StructureConstants,
    a: &[T],
    b: &[T],
    grad_out: &[T],
    grad_a: &mut [T],
    grad_b: &mut [T],
    d: usize,
) {
    for (ia, ib, ic, sign) in sc.entries() {
        let s = T::lit(sign as f64);
        let (g_re, g_im) = coeff(grad_out, ic, d);
        let (b_re, b_im) = coeff(b, ib, d);
        let (ga_re, ga_im) = coeff_mut(grad_a, ia, d);
        complex_mul_conj_acc(s, g_re, g_im, b_re, b_im, ga_re, ga_im);
        let (a_re, a_im) = coeff(a, ia, d);
        let (gb_re, gb_im) = coeff_mut(grad_b, ib, d);
        complex_mul_conj_acc(s, g_re, g_im, a_re, a_im, gb_re, gb_im);
    }
}

/// The Hamilton product written out coefficient by coefficient, with every
/// real multiply replaced by a complex one. Independent of
/// [`StructureConstants`]; used for differential testing.
pub fn hamilton_unrolled_into<T: Real>(a: &[T], b: &[T], out: &mut [T], d: usize) {
    out.fill(T::zero());
    let one = T::one();
    let neg = -T::one();
    // (sign, a-coefficient, b-coefficient) per output coefficient.
    let rows: [[(T, usize, usize); 4]; 4] = [
        [(one, 0, 0), (neg, 1, 1), (neg, 2, 2), (neg, 3, 3)],
        [(one, 0, 1), (one, 1, 0), (one, 2, 3), (neg, 3, 2)],
        [(one, 0, 2), (neg, 1, 3), (one, 2, 0), (one, 3, 1)],
        [(one, 0, 3), (one, 1, 2), (neg, 2, 1), (one, 3, 0)],
    ];
    for (c, terms) in rows.iter().enumerate() {
        for &(s, ia, ib) in terms {
            let (a_re, a_im) = coeff(a, ia, d);
            let (b_re, b_im) = coeff(b, ib, d);
            let (o_re, o_im) = coeff_mut(out, c, d);
            complex_mul_acc(s, a_re, a_im, b_re, b_im, o_re, o_im);
        }
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Element-wise complex product on split halves of a `2d` block, accumulated
/// into `out`.
pub fn complex_block_mul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T]) {
    let d = a.len() / 2;
    let (a_re, a_im) = a.split_at(d);
    let (b_re, b_im) = b.split_at(d);
    let (o_re, o_im) = out.split_at_mut(d);
    complex_mul_acc(T::one(), a_re, a_im, b_re, b_im, o_re, o_im);
}

/// A biquaternion with `d`-wide complex coefficients, owned and flat.
#[derive(Debug, Clone, PartialEq)]
pub struct Biquat<T> {
    d: usize,
    flat: Vec<T>,
}

impl<T: Real> Biquat<T> {
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            flat: vec![T::zero(); 8 * d],
        }
    }

    /// Real unit: ones in the real part of the `1` coefficient.
    pub fn identity(d: usize) -> Self {
        let mut q = Self::zeros(d);
        q.flat[..d].fill(T::one());
        q
    }

    pub fn from_flat(flat: Vec<T>) -> Result<Self> {
        if flat.is_empty() || flat.len() % 8 != 0 {
            return Err(Error::Invalid(format!(
                "flat biquaternion length {} is not a positive multiple of 8",
                flat.len()
            )));
        }
        Ok(Self {
            d: flat.len() / 8,
            flat,
        })
    }

    pub fn from_coeffs(coeffs: [ComplexBlock<T>; 4]) -> Result<Self> {
        let d = coeffs[0].len();
        let mut flat = Vec::with_capacity(8 * d);
        for c in &coeffs {
            if c.len() != d {
                return Err(Error::dim("biquaternion coefficient width", d, c.len()));
            }
            flat.extend_from_slice(&c.re);
            flat.extend_from_slice(&c.im);
        }
        Self::from_flat(flat)
    }

    /// Real quaternion per slice: all imaginary complex parts zero.
    pub fn from_real_parts(parts: [&[T]; 4]) -> Result<Self> {
        let d = parts[0].len();
        let coeffs = parts.map(|p| ComplexBlock {
            re: p.to_vec(),
            im: vec![T::zero(); p.len()],
        });
        if coeffs.iter().any(|c| c.len() != d) {
            return Err(Error::Invalid("real parts of unequal width".into()));
        }
        Self::from_coeffs(coeffs)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn as_flat(&self) -> &[T] {
        &self.flat
    }

    pub fn into_flat(self) -> Vec<T> {
        self.flat
    }

    pub fn coeff(&self, c: usize) -> ComplexBlock<T> {
        let (re, im) = coeff(&self.flat, c, self.d);
        ComplexBlock {
            re: re.to_vec(),
            im: im.to_vec(),
        }
    }

    pub fn coeffs(&self) -> [ComplexBlock<T>; 4] {
        [self.coeff(0), self.coeff(1), self.coeff(2), self.coeff(3)]
    }

    pub fn neg(&self) -> Self {
        Self {
            d: self.d,
            flat: self.flat.iter().map(|&x| -x).collect(),
        }
    }

    fn check(&self, other: &Self, what: &str) -> Result<()> {
        if self.d != other.d {
            return Err(Error::dim(what, self.d, other.d));
        }
        Ok(())
    }
}

pub fn biquat_add<T: Real>(a: &Biquat<T>, b: &Biquat<T>) -> Result<Biquat<T>> {
    a.check(b, "biquat_add width")?;
    Ok(Biquat {
        d: a.d,
        flat: a.flat.iter().zip(&b.flat).map(|(&x, &y)| x + y).collect(),
    })
}

pub fn hamilton_product<T: Real>(a: &Biquat<T>, b: &Biquat<T>) -> Result<Biquat<T>> {
    hamilton_product_with(&QUATERNION, a, b)
}

pub fn hamilton_product_with<T: Real>(
    sc: &StructureConstants,
    a: &Biquat<T>,
    b: &Biquat<T>,
) -> Result<Biquat<T>> {
    a.check(b, "hamilton_product width")?;
    let mut out = Biquat::zeros(a.d);
    hamilton_into(sc, &a.flat, &b.flat, &mut out.flat, a.d);
    Ok(out)
}

pub fn hamilton_product_unrolled<T: Real>(a: &Biquat<T>, b: &Biquat<T>) -> Result<Biquat<T>> {
    a.check(b, "hamilton_product width")?;
    let mut out = Biquat::zeros(a.d);
    hamilton_unrolled_into(&a.flat, &b.flat, &mut out.flat, a.d);
    Ok(out)
}

/// Per-slice squared norm `Σ_c |coeff_c[n]|²` for each of the `d` positions.
pub fn slice_norms_sq<T: Real>(q: &Biquat<T>) -> Vec<T> {
    let d = q.d;
    (0..d)
        .map(|n| {
            (0..4)
                .map(|c| {
                    let (re, im) = coeff(&q.flat, c, d);
                    re[n] * re[n] + im[n] * im[n]
                })
                .sum()
        })
        .collect()
}

/// Score `⟨(h ⊕ T) ⊗ R, t⟩` evaluated as the sixteen pairwise terms
/// `±⟨A_m ⊛ R_k, t_c⟩`, one per nonzero entry of the multiplication table,
/// each written out with its own sign. Shares no code with the Hamilton
/// product kernels; exists to cross-check them.
pub fn score_expansion_oracle<T: Real>(
    head: &Biquat<T>,
    trans: &Biquat<T>,
    rot: &Biquat<T>,
    tail: &Biquat<T>,
) -> Result<T> {
    head.check(trans, "oracle translation width")?;
    head.check(rot, "oracle rotation width")?;
    head.check(tail, "oracle tail width")?;
    let d = head.d;
    let a: Vec<ComplexBlock<T>> = (0..4)
        .map(|c| {
            let h = head.coeff(c);
            let t = trans.coeff(c);
            ComplexBlock {
                re: h.re.iter().zip(&t.re).map(|(&x, &y)| x + y).collect(),
                im: h.im.iter().zip(&t.im).map(|(&x, &y)| x + y).collect(),
            }
        })
        .collect();
    let r = rot.coeffs();
    let t = tail.coeffs();

    // ⟨A_m ⊛ R_k, t_c⟩ summed over the d complex slots, real and imaginary parts.
    let term = |m: usize, k: usize, c: usize| -> T {
        (0..d).fold(T::zero(), |acc, n| {
            let re = a[m].re[n] * r[k].re[n] - a[m].im[n] * r[k].im[n];
            let im = a[m].re[n] * r[k].im[n] + a[m].im[n] * r[k].re[n];
            acc + re * t[c].re[n] + im * t[c].im[n]
        })
    };

    let score =
        // paired with the tail's `1` coefficient
        term(0, 0, 0) - term(1, 1, 0) - term(2, 2, 0) - term(3, 3, 0)
        // paired with the tail's `i` coefficient
        + term(0, 1, 1) + term(1, 0, 1) + term(2, 3, 1) - term(3, 2, 1)
        // paired with the tail's `j` coefficient
        + term(0, 2, 2) - term(1, 3, 2) + term(2, 0, 2) + term(3, 1, 2)
        // paired with the tail's `k` coefficient
        + term(0, 3, 3) + term(1, 2, 3) - term(2, 1, 3) + term(3, 0, 3);
    Ok(score)
}

/// Composed score `⟨(h ⊕ T) ⊗ R, t⟩` through the table-driven kernel.
pub fn score_composed<T: Real>(
    sc: &StructureConstants,
    head: &Biquat<T>,
    trans: &Biquat<T>,
    rot: &Biquat<T>,
    tail: &Biquat<T>,
) -> Result<T> {
    let q = hamilton_product_with(sc, &biquat_add(head, trans)?, rot)?;
    q.check(tail, "score tail width")?;
    Ok(dot(q.as_flat(), tail.as_flat()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real_quat(vals: [f64; 4]) -> Biquat<f64> {
        Biquat::from_real_parts([&[vals[0]], &[vals[1]], &[vals[2]], &[vals[3]]]).unwrap()
    }

    fn real_parts(q: &Biquat<f64>) -> [f64; 4] {
        [0, 1, 2, 3].map(|c| q.coeff(c).re[0])
    }

    #[test]
    fn complex_mul_examples() {
        let one = ComplexBlock::new(vec![1.0], vec![0.0]).unwrap();
        let x = ComplexBlock::new(vec![0.3], vec![-1.7]).unwrap();
        assert_eq!(complex_mul(&one, &x).unwrap(), x);

        let unit = ComplexBlock::new(vec![0.0], vec![1.0]).unwrap();
        let sq = complex_mul(&unit, &unit).unwrap();
        assert_eq!((sq.re[0], sq.im[0]), (-1.0, 0.0));

        let a = ComplexBlock::new(vec![2.0], vec![3.0]).unwrap();
        let b = ComplexBlock::new(vec![4.0], vec![5.0]).unwrap();
        let p = complex_mul(&a, &b).unwrap();
        assert_eq!((p.re[0], p.im[0]), (-7.0, 22.0));
    }

    #[test]
    fn complex_mul_rejects_length_mismatch() {
        let a = ComplexBlock::<f64>::zeros(2);
        let b = ComplexBlock::<f64>::zeros(3);
        assert!(matches!(complex_mul(&a, &b), Err(Error::Dimension { .. })));
        assert!(ComplexBlock::new(vec![1.0f64], vec![]).is_err());
    }

    #[test]
    fn hamilton_examples() {
        let q = real_quat([0.5, -1.0, 2.0, 3.5]);
        let one = Biquat::identity(1);
        assert_eq!(hamilton_product(&one, &q).unwrap(), q);

        let i = real_quat([0.0, 1.0, 0.0, 0.0]);
        let j = real_quat([0.0, 0.0, 1.0, 0.0]);
        assert_eq!(real_parts(&hamilton_product(&i, &j).unwrap()), [0.0, 0.0, 0.0, 1.0]);

        let p = hamilton_product(&real_quat([1.0, 2.0, 3.0, 4.0]), &real_quat([5.0, 6.0, 7.0, 8.0]))
            .unwrap();
        assert_eq!(real_parts(&p), [-60.0, 12.0, 30.0, 24.0]);
    }

    #[test]
    fn structure_constants_match_basis_rules() {
        let sc = StructureConstants::quaternion();
        assert_eq!(sc.nonzero_count(), 16);
        // every product of two bases is exactly one signed basis
        for a in 0..4 {
            for b in 0..4 {
                let nz: Vec<_> = (0..4).filter(|&c| sc.get(a, b, c) != 0).collect();
                assert_eq!(nz.len(), 1);
            }
        }
        assert_eq!(sc.get(1, 1, 0), -1);
        assert_eq!(sc.get(1, 2, 3), 1);
        assert_eq!(sc.get(2, 1, 3), -1);
        assert_eq!(sc.get(2, 3, 1), 1);
        assert_eq!(sc.get(3, 2, 1), -1);
        assert_eq!(sc.get(3, 1, 2), 1);
        assert_eq!(sc.get(1, 3, 2), -1);
    }

    #[test]
    fn add_examples() {
        let q = Biquat::from_flat((0..16).map(|x| x as f64 * 0.25 - 1.0).collect()).unwrap();
        assert_eq!(biquat_add(&q, &Biquat::zeros(2)).unwrap(), q);
        assert_eq!(biquat_add(&q, &q.neg()).unwrap(), Biquat::zeros(2));
        assert!(biquat_add(&q, &Biquat::zeros(3)).is_err());
    }

    #[test]
    fn oracle_identity_transform_is_plain_dot() {
        let h = Biquat::from_flat((0..16).map(|x| (x as f64).sin()).collect()).unwrap();
        let t = Biquat::from_flat((0..16).map(|x| (x as f64 * 0.7).cos()).collect()).unwrap();
        let s = score_expansion_oracle(&h, &Biquat::zeros(2), &Biquat::identity(2), &t).unwrap();
        assert!((s - dot(h.as_flat(), t.as_flat())).abs() < 1e-12);
    }

    #[test]
    fn flat_layout_round_trip() {
        let flat: Vec<f64> = (0..24).map(|x| x as f64).collect();
        let q = Biquat::from_flat(flat.clone()).unwrap();
        assert_eq!(q.coeff(1).re, vec![6.0, 7.0, 8.0]);
        assert_eq!(q.coeff(1).im, vec![9.0, 10.0, 11.0]);
        let back = Biquat::from_coeffs(q.coeffs()).unwrap();
        assert_eq!(back.into_flat(), flat);
        assert!(Biquat::<f64>::from_flat(vec![0.0; 7]).is_err());
    }
}
