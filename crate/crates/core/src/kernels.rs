//! Integer-accumulating kernels over packed ternary weights.
//!
//! The inner loop never multiplies: a `+1` trit adds the activation code, a
//! `-1` subtracts it and a `0` skips. Only the per-output epilogue
//! `acc · β · γ / 127` touches floating point. Work is split over output
//! rows only, so every output element has one writer and results do not
//! depend on the [`KernelPlan`].

use std::ops::{Add, Sub};
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quant::{
    dequantize_weights, quantize_activations_absmax, PackedTernaryMatrix, QuantizedTokens,
    DECODE_LUT, QMAX,
};
use crate::tensor::{matmul_t, Tensor};

/// Largest reduction length for which an i32 accumulator cannot overflow
/// (`|q| ≤ 127`, so `|acc| < 127·2²⁴ < 2³¹`).
pub const MAX_REDUCTION: usize = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Decode {
    /// Shift and mask each 2-bit code.
    ShiftMask,
    /// Look up all four trits of a byte in a 256-entry table.
    #[default]
    ByteLut,
}

/// How a kernel call is scheduled. Never changes the result.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelPlan {
    /// Output rows per work item.
    pub block_rows: usize,
    pub decode: Decode,
    /// `1` runs on the caller, `0` uses the rayon pool, `n > 1` uses exactly
    /// `n` scoped threads.
    pub threads: usize,
}

impl Default for KernelPlan {
    fn default() -> Self {
        Self {
            block_rows: 64,
            decode: Decode::ByteLut,
            threads: 0,
        }
    }
}

impl KernelPlan {
    pub fn serial() -> Self {
        Self {
            threads: 1,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.block_rows == 0 {
            return Err(Error::Config("kernel block size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Accumulator for the add/sub/skip inner loop. Implemented by `i32` for
/// real work and by [`instrument::Counted`] to audit the loop.
pub trait Accumulator: Copy + Add<Output = Self> + Sub<Output = Self> {
    fn zero() -> Self;
    fn from_code(q: i8) -> Self;
    fn skip(self) -> Self {
        self
    }
    fn into_i32(self) -> i32;
}

impl Accumulator for i32 {
    #[inline(always)]
    fn zero() -> Self {
        0
    }
    #[inline(always)]
    fn from_code(q: i8) -> Self {
        q as i32
    }
    #[inline(always)]
    fn into_i32(self) -> i32 {
        self
    }
}

#[inline(always)]
fn step<A: Accumulator>(acc: A, trit: i8, q: i8) -> A {
    match trit {
        1 => acc + A::from_code(q),
        -1 => acc - A::from_code(q),
        _ => acc.skip(),
    }
}

/// Ternary dot product of one packed row with `q`.
#[inline]
pub fn row_dot<A: Accumulator>(row: &[u8], q: &[i8], decode: Decode) -> A {
    let k = q.len();
    let full = k / 4;
    let mut acc = A::zero();
    match decode {
        Decode::ByteLut => {
            for (b, qs) in row[..full].iter().zip(q.chunks_exact(4)) {
                let t = &DECODE_LUT[*b as usize];
                acc = step(acc, t[0], qs[0]);
                acc = step(acc, t[1], qs[1]);
                acc = step(acc, t[2], qs[2]);
                acc = step(acc, t[3], qs[3]);
            }
            if full * 4 < k {
                let t = &DECODE_LUT[row[full] as usize];
                for (j, &qv) in q[full * 4..].iter().enumerate() {
                    acc = step(acc, t[j], qv);
                }
            }
        }
        Decode::ShiftMask => {
            for (kk, &qv) in q.iter().enumerate() {
                let code = (row[kk >> 2] >> ((kk & 3) << 1)) & 0b11;
                // 0b01 → +1, 0b10 → -1, 0b00 → 0
                let trit = (code & 1) as i8 - (code >> 1) as i8;
                acc = step(acc, trit, qv);
            }
        }
    }
    acc
}

#[inline(always)]
fn epilogue(acc: i32, beta: f32, gamma: f32) -> f32 {
    acc as f32 * (beta * gamma) / QMAX as f32
}

/// `y[o] = (Σ_k q[k]·T[o,k]) · β · γ / 127`.
pub fn ternary_matvec(
    p: &PackedTernaryMatrix,
    q: &[i8],
    gamma: f32,
    plan: &KernelPlan,
) -> Result<Tensor> {
    let tokens = QuantizedTokens::new(1, q.len(), q.to_vec(), vec![gamma])?;
    if q.len() != p.cols() {
        return Err(Error::Shape(format!(
            "matvec: weight has {} columns, activation has {}",
            p.cols(),
            q.len()
        )));
    }
    let y = ternary_matmul(p, &tokens, plan)?;
    y.reshape(&[p.rows()])
}

/// Row `i` of the result is `ternary_matvec(p, Q.row(i), γ_i)`.
pub fn ternary_matmul(
    p: &PackedTernaryMatrix,
    x: &QuantizedTokens,
    plan: &KernelPlan,
) -> Result<Tensor> {
    ternary_matmul_with::<i32>(p, x, plan)
}

fn ternary_matmul_with<A: Accumulator + Send>(
    p: &PackedTernaryMatrix,
    x: &QuantizedTokens,
    plan: &KernelPlan,
) -> Result<Tensor> {
    plan.validate()?;
    let (o_dim, k) = (p.rows(), p.cols());
    if x.cols() != k {
        return Err(Error::Shape(format!(
            "ternary matmul: weight is {o_dim}x{k}, activations have {} columns",
            x.cols()
        )));
    }
    if k > MAX_REDUCTION {
        return Err(Error::Capacity(format!(
            "reduction length {k} exceeds the i32 accumulator bound {MAX_REDUCTION}"
        )));
    }
    let m = x.rows();
    let beta = p.scale();
    // Output is produced transposed ([O, m]) so each output row block is one
    // contiguous, exclusively owned slice.
    let mut out_t = vec![0.0f32; o_dim * m];
    if m > 0 && o_dim > 0 {
        let block = plan.block_rows;
        let work = |(bi, chunk): (usize, &mut [f32])| {
            let o0 = bi * block;
            for (r, dst) in chunk.chunks_mut(m).enumerate() {
                let row = p.packed_row(o0 + r);
                for (i, d) in dst.iter_mut().enumerate() {
                    let acc: A = row_dot(row, x.row(i), plan.decode);
                    *d = epilogue(acc.into_i32(), beta, x.scale(i));
                }
            }
        };
        let chunks = out_t.chunks_mut(block * m).enumerate();
        match plan.threads {
            1 => chunks.for_each(work),
            0 => out_t.par_chunks_mut(block * m).enumerate().for_each(work),
            n => {
                let mut items: Vec<_> = chunks.collect();
                let per = items.len().div_ceil(n);
                std::thread::scope(|s| {
                    while !items.is_empty() {
                        let take = per.min(items.len());
                        let batch: Vec<_> = items.drain(..take).collect();
                        s.spawn(move || batch.into_iter().for_each(work));
                    }
                });
            }
        }
    }
    let mut out = vec![0.0f32; m * o_dim];
    for o in 0..o_dim {
        for i in 0..m {
            out[i * o_dim + o] = out_t[o * m + i];
        }
    }
    Tensor::new(vec![m, o_dim], out)
}

/// Absmax-quantize `x` per token, then run the integer kernel. No bias.
pub fn bitlinear_forward(w: &PackedTernaryMatrix, x: &Tensor, plan: &KernelPlan) -> Result<Tensor> {
    let q = quantize_activations_absmax(x)?;
    ternary_matmul(w, &q, plan)
}

/// Oracle for [`bitlinear_forward`]: the same `q`, `γ`, `β`, `T`, but both
/// sides dequantized to f32 and multiplied densely.
pub fn dense_reference_forward(w: &PackedTernaryMatrix, x: &Tensor) -> Result<Tensor> {
    let q = quantize_activations_absmax(x)?;
    if q.cols() != w.cols() {
        return Err(Error::Shape(format!(
            "dense reference: weight is {}x{}, activations have {} columns",
            w.rows(),
            w.cols(),
            q.cols()
        )));
    }
    matmul_t(&q.dequantize(), &dequantize_weights(w))
}

/// Operation counting for the accumulation loop.
pub mod instrument {
    use std::cell::Cell;
    use std::ops::{Add, Mul, Sub};

    use super::*;

    thread_local! {
        static COUNTS: Cell<OpCounts> = const { Cell::new(OpCounts { adds: 0, subs: 0, skips: 0, muls: 0 }) };
    }

    #[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
    pub struct OpCounts {
        pub adds: u64,
        pub subs: u64,
        pub skips: u64,
        pub muls: u64,
    }

    fn bump(f: impl FnOnce(&mut OpCounts)) {
        COUNTS.with(|c| {
            let mut v = c.get();
            f(&mut v);
            c.set(v);
        });
    }

    /// i32 that tallies every arithmetic operation applied to it.
    #[derive(Clone, Copy, Debug)]
    pub struct Counted(pub i32);

    impl Add for Counted {
        type Output = Counted;
        fn add(self, rhs: Self) -> Self {
            bump(|c| c.adds += 1);
            Counted(self.0 + rhs.0)
        }
    }

    #[allow(clippy::suspicious_arithmetic_impl)]
    impl Sub for Counted {
        type Output = Counted;
        fn sub(self, rhs: Self) -> Self {
            bump(|c| c.subs += 1);
            Counted(self.0 - rhs.0)
        }
    }

    #[allow(clippy::suspicious_arithmetic_impl)]
    impl Mul for Counted {
        type Output = Counted;
        fn mul(self, rhs: Self) -> Self {
            bump(|c| c.muls += 1);
            Counted(self.0 * rhs.0)
        }
    }

    impl Accumulator for Counted {
        fn zero() -> Self {
            Counted(0)
        }
        fn from_code(q: i8) -> Self {
            Counted(q as i32)
        }
        fn skip(self) -> Self {
            bump(|c| c.skips += 1);
            self
        }
        fn into_i32(self) -> i32 {
            self.0
        }
    }

    /// Runs the kernel serially with a counting accumulator and returns the
    /// output together with the operation tally.
    pub fn counted_matmul(
        p: &PackedTernaryMatrix,
        x: &QuantizedTokens,
        decode: Decode,
    ) -> Result<(Tensor, OpCounts)> {
        COUNTS.with(|c| c.set(OpCounts::default()));
        let plan = KernelPlan {
            decode,
            threads: 1,
            ..KernelPlan::default()
        };
        let y = ternary_matmul_with::<Counted>(p, x, &plan)?;
        Ok((y, COUNTS.with(|c| c.get())))
    }
}

/// Throughput of one kernel measurement.
#[derive(Clone, Copy, Debug)]
pub struct Throughput {
    pub seconds_per_iter: f64,
    /// Weight elements × tokens processed per second.
    pub elements_per_sec: f64,
    /// Weight + activation bytes read per second.
    pub bytes_per_sec: f64,
}

fn throughput(elems: usize, bytes: usize, iters: usize, secs: f64) -> Throughput {
    let per = secs / iters.max(1) as f64;
    Throughput {
        seconds_per_iter: per,
        elements_per_sec: elems as f64 / per,
        bytes_per_sec: bytes as f64 / per,
    }
}

/// Times `iters` calls of [`bitlinear_forward`].
pub fn bench_bitlinear(
    w: &PackedTernaryMatrix,
    x: &Tensor,
    iters: usize,
    plan: &KernelPlan,
) -> Result<Throughput> {
    let m = x.dims2()?.0;
    let start = Instant::now();
    for _ in 0..iters {
        std::hint::black_box(bitlinear_forward(w, x, plan)?);
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(throughput(
        w.rows() * w.cols() * m,
        w.bytes().len() + m * w.cols(),
        iters,
        secs,
    ))
}

/// Times `iters` calls of [`dense_reference_forward`].
pub fn bench_dense_reference(
    w: &PackedTernaryMatrix,
    x: &Tensor,
    iters: usize,
) -> Result<Throughput> {
    let m = x.dims2()?.0;
    let start = Instant::now();
    for _ in 0..iters {
        std::hint::black_box(dense_reference_forward(w, x)?);
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(throughput(
        w.rows() * w.cols() * m,
        4 * (w.rows() * w.cols() + m * w.cols()),
        iters,
        secs,
    ))
}
