//! Built-in kernels.
//!
//! Straight-line kernels wrap their body in a repeat loop whose counter sits
//! in its own block, so the hot region spans two guest blocks and is never
//! unrolled; the body's shape reaches the vectorizer unchanged.

use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::guest::{parse_program, GuestError, GuestProgram};

/// Executions of a straight-line body; well above the superblock threshold.
const REPEATS: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Kernel {
    pub id: String,
    pub description: String,
    pub source: String,
}

impl Kernel {
    pub fn program(&self) -> Result<GuestProgram, GuestError> {
        parse_program(&self.id, &self.source)
    }
}

fn kernel(id: impl Into<String>, description: impl Into<String>, source: String) -> Kernel {
    Kernel { id: id.into(), description: description.into(), source }
}

/// Fills `count` elements of `dtype` starting at `base` with distinct values.
fn init_array(out: &mut String, base: usize, dtype: &str, count: usize, seed: f64) {
    let width = if dtype == "f64" { 8 } else { 4 };
    for i in 0..count {
        let v = seed + 0.25 * i as f64;
        writeln!(out, "init {} {dtype} {v:?}", base + width * i).unwrap();
    }
}

/// Wraps a straight-line `body` in the repeat loop.
fn repeated(arena: usize, inits: &str, setup: &str, body: &str) -> String {
    format!(
        "arena {arena}\n{inits}{setup}MOV.i32 r9, 0\nbody:\n{body}next:\nADD.i32 r9, r9, 1\nCMP.i32 r9, {REPEATS}\nBR lt, body\nHALT\n"
    )
}

/// Six independent single-precision adds over adjacent elements.
pub fn fig7() -> Kernel {
    let mut inits = String::new();
    init_array(&mut inits, 0, "f32", 6, 1.0);
    init_array(&mut inits, 64, "f32", 6, 10.0);
    let mut body = String::new();
    for i in 0..6 {
        let o = 4 * i;
        writeln!(body, "LD.f32 f{}, [r0+{}]", i, o).unwrap();
        writeln!(body, "LD.f32 f{}, [r0+{}]", i + 8, 64 + o).unwrap();
        writeln!(body, "ADD.f32 f{}, f{}, f{}", i + 16, i, i + 8).unwrap();
        writeln!(body, "ST.f32 [r0+{}], f{}", 128 + o, i + 16).unwrap();
    }
    kernel("fig7", "six independent f32 adds over adjacent elements", repeated(256, &inits, "", &body))
}

/// Four scalar results with distinct producers feeding one vector add.
pub fn fig8() -> Kernel {
    let setup = "MOV.f32 f10, 1.5\nMOV.f32 f11, 2.5\nMOV.f32 f12, 3.5\nMOV.f32 f13, 4.5\n";
    let mut inits = String::new();
    init_array(&mut inits, 0, "f32", 4, 0.5);
    let body = "MUL.f32 f0, f10, f11
ADD.f32 f1, f11, f12
SUB.f32 f2, f12, f13
DIV.f32 f3, f13, f10
LD.f32 f4, [r0+0]
LD.f32 f5, [r0+4]
LD.f32 f6, [r0+8]
LD.f32 f7, [r0+12]
ADD.f32 f20, f0, f4
ADD.f32 f21, f1, f5
ADD.f32 f22, f2, f6
ADD.f32 f23, f3, f7
ST.f32 [r0+64], f20
ST.f32 [r0+68], f21
ST.f32 [r0+72], f22
ST.f32 [r0+76], f23
";
    kernel("fig8", "four distinct scalar producers packed into one vector consumer", repeated(128, &inits, setup, body))
}

/// `y[i] = a * x[i] + y[i]` with an inner loop of `trip` iterations.
pub fn saxpy(dtype: &str, trip: usize) -> Kernel {
    let width = if dtype == "f64" { 8 } else { 4 };
    let bytes = trip * width;
    let y = bytes.next_multiple_of(64).max(64);
    let reps = (8192 / trip).max(64);
    let mut src = format!("arena {}\n", 2 * y);
    init_array(&mut src, 0, dtype, trip, 1.0);
    init_array(&mut src, y, dtype, trip, -3.0);
    write!(
        src,
        "MOV.{dtype} f0, 0.5
MOV.i32 r9, 0
outer:
MOV.i32 r1, 0
inner:
LD.{dtype} f1, [r1+0]
LD.{dtype} f2, [r1+{y}]
MUL.{dtype} f3, f1, f0
ADD.{dtype} f4, f3, f2
ST.{dtype} [r1+{y}], f4
ADD.i32 r1, r1, {width}
CMP.i32 r1, {bytes}
BR lt, inner
ADD.i32 r9, r9, 1
CMP.i32 r9, {reps}
BR lt, outer
HALT
"
    )
    .unwrap();
    kernel(format!("saxpy-{dtype}-t{trip}"), format!("{dtype} saxpy, inner trip count {trip}"), src)
}

/// `z[i] = x[2i] + x[2i+1]` over 16 elements.
pub fn interleaved() -> Kernel {
    let mut src = String::from("arena 256\n");
    init_array(&mut src, 0, "f32", 32, 1.0);
    src.push_str(
        "MOV.i32 r9, 0
outer:
MOV.i32 r1, 0
MOV.i32 r2, 0
inner:
LD.f32 f1, [r1+0]
LD.f32 f2, [r1+4]
ADD.f32 f3, f1, f2
ST.f32 [r2+128], f3
ADD.i32 r1, r1, 8
ADD.i32 r2, r2, 4
CMP.i32 r2, 64
BR lt, inner
ADD.i32 r9, r9, 1
CMP.i32 r9, 512
BR lt, outer
HALT
",
    );
    kernel("interleaved", "stride-2 loads reduced pairwise", src)
}

/// `n` register-resident values gathered into one vector operand.
pub fn scatter(n: usize) -> Kernel {
    let mut inits = String::new();
    init_array(&mut inits, 0, "f32", n, 2.0);
    let mut setup = String::new();
    for i in 0..n {
        writeln!(setup, "MOV.f32 f{}, {:?}", i, 0.5 + i as f64).unwrap();
    }
    let mut body = String::new();
    for i in 0..n {
        writeln!(body, "LD.f32 f{}, [r0+{}]", 16 + i, 4 * i).unwrap();
    }
    for i in 0..n {
        // Destination registers reuse the load registers once consumed.
        writeln!(body, "ADD.f32 f{}, f{}, f{}", 16 + i, 16 + i, i).unwrap();
    }
    for i in 0..n {
        writeln!(body, "ST.f32 [r0+{}], f{}", 128 + 4 * i, 16 + i).unwrap();
    }
    kernel(format!("scatter-{n}"), format!("gather of {n} register-resident f32 values"), repeated(256, &inits, &setup, &body))
}

/// Loop with a branch that flips direction midway, so asserts built from the
/// early profile start failing.
pub fn branchy() -> Kernel {
    let mut src = String::from("arena 256\n");
    init_array(&mut src, 0, "f32", 8, 1.0);
    src.push_str(
        "MOV.i32 r9, 0
top:
LD.f32 f1, [r0+0]
LD.f32 f2, [r0+4]
CMP.i32 r9, 1500
BR lt, hot
cold:
SUB.f32 f3, f1, f2
ST.f32 [r0+64], f3
JMP join
hot:
ADD.f32 f3, f1, f2
ST.f32 [r0+64], f3
join:
ADD.i32 r9, r9, 1
CMP.i32 r9, 3000
BR lt, top
HALT
",
    );
    kernel("branchy", "biased branch whose bias reverses midway", src)
}

/// Pointer loop whose source and destination come from memory and overlap.
pub fn alias() -> Kernel {
    let mut src = String::from("arena 512\ninit 256 i32 0\ninit 260 i32 8\n");
    init_array(&mut src, 0, "f32", 24, 1.0);
    src.push_str(
        "MOV.i32 r9, 0
outer:
LD.i32 r1, [r0+256]
LD.i32 r2, [r0+260]
MOV.i32 r3, 0
inner:
LD.f32 f1, [r1+0]
MUL.f32 f2, f1, 0.5
ST.f32 [r2+0], f2
ADD.i32 r1, r1, 4
ADD.i32 r2, r2, 4
ADD.i32 r3, r3, 1
CMP.i32 r3, 16
BR lt, inner
ADD.i32 r9, r9, 1
CMP.i32 r9, 256
BR lt, outer
HALT
",
    );
    kernel("alias", "may-alias pointer loop with overlapping source and destination", src)
}

/// Alternating 4-, 2- and 3-wide groups, so consecutive vector instructions
/// rarely share a lane count.
pub fn alt() -> Kernel {
    let mut inits = String::new();
    init_array(&mut inits, 0, "f32", 16, 1.0);
    let mut body = String::new();
    let mut reg = 0;
    for (g, width) in [4usize, 2, 3, 4, 2, 3].into_iter().enumerate() {
        let base = 64 * g;
        for i in 0..width {
            writeln!(body, "LD.f32 f{}, [r0+{}]", reg, 4 * (4 * (g % 4) + i)).unwrap();
            writeln!(body, "MUL.f32 f{}, f{}, {:?}", reg + 1, reg, 1.0 + g as f64).unwrap();
            writeln!(body, "ST.f32 [r0+{}], f{}", 256 + base + 4 * i, reg + 1).unwrap();
            reg = (reg + 2) % 32;
        }
    }
    kernel("alt", "vector groups of alternating width", repeated(768, &inits, "", &body))
}

/// Single-to-double conversions feeding double-precision arithmetic.
pub fn cvt() -> Kernel {
    let mut inits = String::new();
    init_array(&mut inits, 0, "f32", 4, 1.0);
    let mut body = String::new();
    for i in 0..4 {
        writeln!(body, "LD.f32 f{}, [r0+{}]", i, 4 * i).unwrap();
        writeln!(body, "CVT.f64 f{}, f{}", i + 8, i).unwrap();
        writeln!(body, "MUL.f64 f{}, f{}, 3.0", i + 16, i + 8).unwrap();
        writeln!(body, "ST.f64 [r0+{}], f{}", 64 + 8 * i, i + 16).unwrap();
    }
    kernel("cvt", "f32 to f64 conversions feeding f64 arithmetic", repeated(128, &inits, "", &body))
}

/// Random straight-line FP kernel over three arrays.
pub fn random(seed: u64) -> Kernel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dtype = if rng.gen_bool(0.5) { "f32" } else { "f64" };
    let width = if dtype == "f64" { 8 } else { 4 };
    let elems = 16;
    let mut inits = String::new();
    init_array(&mut inits, 0, dtype, elems, 1.0 + rng.gen_range(0..8) as f64);
    init_array(&mut inits, 256, dtype, elems, 0.5 + rng.gen_range(0..8) as f64);
    let ops = ["ADD", "SUB", "MUL", "DIV"];
    let count = rng.gen_range(2..=12);
    let start = rng.gen_range(0..4);
    let mut body = String::new();
    for k in 0..count {
        let adjacent = rng.gen_bool(0.7);
        let a = if adjacent { start + k } else { rng.gen_range(0..elems) };
        let b = if adjacent { start + k } else { rng.gen_range(0..elems) };
        let op = ops[rng.gen_range(0..ops.len())];
        let (ra, rb, rd) = (k % 10, 10 + k % 10, 20 + k % 10);
        writeln!(body, "LD.{dtype} f{ra}, [r0+{}]", width * (a % elems)).unwrap();
        if rng.gen_bool(0.5) {
            writeln!(body, "LD.{dtype} f{rb}, [r0+{}]", 256 + width * (b % elems)).unwrap();
            writeln!(body, "{op}.{dtype} f{rd}, f{ra}, f{rb}").unwrap();
        } else {
            writeln!(body, "{op}.{dtype} f{rd}, f{ra}, 1.25").unwrap();
        }
        writeln!(body, "ST.{dtype} [r0+{}], f{rd}", 512 + width * (start + k)).unwrap();
    }
    kernel(format!("random-{seed}"), format!("random {dtype} kernel from seed {seed}"), repeated(1024, &inits, "", &body))
}

/// The built-in kernel set; `seed` selects the random kernel included.
pub fn corpus(seed: u64) -> Vec<Kernel> {
    let mut out = vec![fig7(), fig8()];
    for dtype in ["f32", "f64"] {
        for trip in [2, 4, 16, 64] {
            out.push(saxpy(dtype, trip));
        }
    }
    out.push(interleaved());
    out.extend([4, 8, 16].map(scatter));
    out.extend([branchy(), alias(), alt(), cvt(), random(seed)]);
    out
}

/// Looks up a kernel by id; `random-<seed>` builds a random kernel.
pub fn find(id: &str, seed: u64) -> Option<Kernel> {
    if let Some(s) = id.strip_prefix("random-") {
        return s.parse().ok().map(random);
    }
    if id == "random" {
        return Some(random(seed));
    }
    if let Some(n) = id.strip_prefix("scatter").map(|n| n.trim_start_matches('-')).and_then(|n| n.parse::<usize>().ok()) {
        return (1..=16).contains(&n).then(|| scatter(n));
    }
    corpus(seed).into_iter().find(|k| k.id == id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guest::run_oracle;

    #[test]
    fn every_kernel_parses_and_halts() {
        for k in corpus(7) {
            let p = k.program().unwrap_or_else(|e| panic!("{}: {e}", k.id));
            run_oracle(&p).unwrap_or_else(|e| panic!("{}: {e}", k.id));
        }
    }

    #[test]
    fn ids_are_unique_and_findable() {
        let ks = corpus(1);
        for k in &ks {
            assert_eq!(find(&k.id, 1).as_ref(), Some(k));
            assert_eq!(ks.iter().filter(|o| o.id == k.id).count(), 1);
        }
        assert_eq!(find("scatter2", 0).unwrap().id, "scatter-2");
        assert_eq!(find("scatter-16", 0).unwrap().id, "scatter-16");
        assert!(find("nope", 0).is_none());
    }

    #[test]
    fn random_kernels_are_reproducible() {
        assert_eq!(random(42), random(42));
    }
}
