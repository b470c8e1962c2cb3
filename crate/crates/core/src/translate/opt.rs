use std::collections::{HashMap, HashSet};

use crate::guest::{canonical, convert, ArithOp, DataType, Flags};
use crate::ir::{IrInst, IrOp, MemRef, Operand, SbExit, Superblock, ValueId};
use crate::scalar::{apply_bits, apply_i32};

/// Largest address displacement the optimizer folds into a memory operand.
/// Arenas are far smaller, so a folded access that would have wrapped in the
/// 32-bit base register still lands outside the arena and faults.
const MAX_FOLDED_OFFSET: i64 = 1 << 28;

fn fold_arith(dtype: DataType, op: ArithOp, a: u64, b: u64) -> Option<u64> {
    match dtype {
        DataType::F32 => apply_bits::<f32>(op, a, b).ok(),
        DataType::F64 => apply_bits::<f64>(op, a, b).ok(),
        DataType::I32 => apply_i32(op, a as i64, b as i64).ok().map(|v| canonical(DataType::I32, v as u64)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum CseKey {
    Pure(String, DataType, Vec<Operand>),
    Load(DataType, Operand, i64),
}

fn pure_key(ins: &IrInst) -> Option<CseKey> {
    let tag = match ins.op {
        IrOp::Arith(op) => op.mnemonic().to_string(),
        IrOp::Cvt => "CVT".into(),
        IrOp::Cmp => "CMP".into(),
        _ => return None,
    };
    Some(CseKey::Pure(tag, ins.dtype, ins.srcs.clone()))
}

fn resolve(subst: &HashMap<ValueId, Operand>, o: Operand) -> Operand {
    match o {
        Operand::Val(v) => subst.get(&v).copied().unwrap_or(o),
        _ => o,
    }
}

fn imm_i32(bits: u64) -> i64 {
    bits as i64 as i32 as i64
}

/// Whether `MOV.dtype` of `src` can be replaced by `src` itself.
fn exact_copy(sb: &Superblock, dtype: DataType, src: Operand) -> bool {
    match (dtype, src) {
        (_, Operand::Imm(_)) => true,
        (DataType::F32, Operand::Val(v)) => sb.value(v).dtype == Some(DataType::F32),
        (_, Operand::Val(_)) => true,
        (_, Operand::Reg(_)) => false,
    }
}

/// One forward pass of constant folding, constant and copy propagation,
/// integer add reassociation, address folding and CSE, followed by one
/// backward dead-code pass.
pub fn classic_optimize(mut sb: Superblock) -> Superblock {
    assert!(sb.ssa, "classic_optimize expects SSA form");
    let mut subst: HashMap<ValueId, Operand> = HashMap::new();
    // value → (root, displacement) for values defined as root + constant.
    let mut int_add: HashMap<ValueId, (ValueId, i64)> = HashMap::new();
    let mut cse: HashMap<CseKey, ValueId> = HashMap::new();
    let mut out: Vec<IrInst> = Vec::with_capacity(sb.instrs.len());
    let instrs = std::mem::take(&mut sb.instrs);

    for mut ins in instrs {
        for o in ins.operands_mut() {
            *o = resolve(&subst, *o);
        }
        if let Some(m) = ins.mem.as_mut() {
            fold_address(m, &int_add);
        }
        let dst = ins.dst_value();
        match ins.op.clone() {
            IrOp::Arith(op) => {
                let (a, b) = (ins.srcs[0], ins.srcs[1]);
                if let (Operand::Imm(x), Operand::Imm(y)) = (a, b) {
                    if let Some(r) = fold_arith(ins.dtype, op, x, y) {
                        ins.op = IrOp::Mov;
                        ins.srcs = vec![Operand::Imm(r)];
                        subst.insert(dst.unwrap(), Operand::Imm(r));
                        out.push(ins);
                        continue;
                    }
                }
                if ins.dtype == DataType::I32 {
                    if let Some((root, disp)) = add_form(op, a, b) {
                        let (root, disp) = match int_add.get(&root) {
                            Some(&(r, d)) => (r, imm_i32(disp.wrapping_add(d) as u64)),
                            None => (root, disp),
                        };
                        let v = dst.unwrap();
                        if disp == 0 {
                            ins.op = IrOp::Mov;
                            ins.srcs = vec![Operand::Val(root)];
                            subst.insert(v, Operand::Val(root));
                            out.push(ins);
                            continue;
                        }
                        ins.op = IrOp::Arith(ArithOp::Add);
                        ins.srcs = vec![Operand::Val(root), Operand::Imm(disp as u64)];
                        int_add.insert(v, (root, disp));
                    }
                }
            }
            IrOp::Mov => {
                let src = ins.srcs[0];
                if exact_copy(&sb, ins.dtype, src) {
                    subst.insert(dst.unwrap(), src);
                }
                out.push(ins);
                continue;
            }
            IrOp::Cvt => {
                if let Operand::Imm(x) = ins.srcs[0] {
                    let r = convert(ins.dtype, x);
                    ins.op = IrOp::Mov;
                    ins.srcs = vec![Operand::Imm(r)];
                    subst.insert(dst.unwrap(), Operand::Imm(r));
                    out.push(ins);
                    continue;
                }
            }
            IrOp::Cmp => {
                if let (Operand::Imm(x), Operand::Imm(y)) = (ins.srcs[0], ins.srcs[1]) {
                    let f = Flags::compare_bits(ins.dtype, x, y).encode() as u64;
                    ins.op = IrOp::Mov;
                    ins.dtype = DataType::I32;
                    ins.srcs = vec![Operand::Imm(f)];
                    subst.insert(dst.unwrap(), Operand::Imm(f));
                    out.push(ins);
                    continue;
                }
            }
            IrOp::Assert { cond, expect } => {
                if let Operand::Imm(f) = ins.srcs[0] {
                    if cond.holds(Flags::decode(f as i64)) == expect {
                        continue;
                    }
                }
            }
            IrOp::SideExit { cond, when, .. } => {
                if let Operand::Imm(f) = ins.srcs[0] {
                    if cond.holds(Flags::decode(f as i64)) != when {
                        continue;
                    }
                }
            }
            IrOp::St => {
                cse.retain(|k, _| !matches!(k, CseKey::Load(..)));
            }
            IrOp::Ld => {
                let m = ins.mem.unwrap();
                let key = CseKey::Load(ins.dtype, m.base, m.offset);
                if let Some(&prev) = cse.get(&key) {
                    subst.insert(dst.unwrap(), Operand::Val(prev));
                    continue;
                }
                cse.insert(key, dst.unwrap());
            }
        }
        if let (Some(key), Some(v)) = (pure_key(&ins), dst) {
            if let Some(&prev) = cse.get(&key) {
                subst.insert(v, Operand::Val(prev));
                continue;
            }
            cse.insert(key, v);
        }
        out.push(ins);
    }

    for o in sb.live_out.values_mut() {
        *o = resolve(&subst, *o);
    }
    if let SbExit::Branch { flags, .. } = &mut sb.exit {
        *flags = resolve(&subst, *flags);
    }
    sb.instrs = out;
    dead_code_elimination(&mut sb);
    sb
}

/// `a + c` / `c + a` / `a - c` over a value and an immediate.
fn add_form(op: ArithOp, a: Operand, b: Operand) -> Option<(ValueId, i64)> {
    match (op, a, b) {
        (ArithOp::Add, Operand::Val(v), Operand::Imm(c)) | (ArithOp::Add, Operand::Imm(c), Operand::Val(v)) => {
            Some((v, imm_i32(c)))
        }
        (ArithOp::Sub, Operand::Val(v), Operand::Imm(c)) => Some((v, imm_i32(imm_i32(c).wrapping_neg() as u64))),
        _ => None,
    }
}

fn fold_address(m: &mut MemRef, int_add: &HashMap<ValueId, (ValueId, i64)>) {
    if let Operand::Val(b) = m.base {
        if let Some(&(root, disp)) = int_add.get(&b) {
            let off = m.offset + disp;
            if off.abs() < MAX_FOLDED_OFFSET && disp.abs() < MAX_FOLDED_OFFSET {
                m.base = Operand::Val(root);
                m.offset = off;
            }
        }
    }
}

/// Removes side-effect-free instructions whose results are never read.
pub(crate) fn dead_code_elimination(sb: &mut Superblock) {
    let mut live: HashSet<ValueId> = sb.live_out.values().filter_map(|o| o.value()).collect();
    if let SbExit::Branch { flags: Operand::Val(v), .. } = sb.exit {
        live.insert(v);
    }
    let mut keep = vec![false; sb.instrs.len()];
    for (i, ins) in sb.instrs.iter().enumerate().rev() {
        let needed = ins.op.has_side_effect() || ins.dst_value().is_some_and(|v| live.contains(&v));
        if needed {
            keep[i] = true;
            live.extend(ins.operands().filter_map(|o| o.value()));
        }
    }
    let mut it = keep.into_iter();
    sb.instrs.retain(|_| it.next().unwrap());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guest::{parse_program, run_oracle, GuestReg};
    use crate::translate::{build_superblock, to_ssa, unroll_loop, BuildOptions, Thresholds};

    fn optimized(src: &str) -> Superblock {
        let p = parse_program("t", src).unwrap();
        let (_, prof) = run_oracle(&p).unwrap();
        let sb = build_superblock(&prof, &p, 0, 0, &Thresholds::default(), BuildOptions::default());
        classic_optimize(to_ssa(sb))
    }

    #[test]
    fn folds_constant_add() {
        let sb = optimized("arena 8\nADD.f32 f1, 2.0, 3.0\nHALT\n");
        assert!(sb.instrs.is_empty());
        assert_eq!(sb.live_out[&GuestReg::Fp(1)], Operand::Imm(5.0f32.to_bits() as u64));
    }

    #[test]
    fn cse_merges_identical_loads() {
        let sb = optimized("arena 16\nLD.f32 f1, [r0+0]\nLD.f32 f2, [r0+0]\nADD.f32 f3, f1, f2\nHALT\n");
        assert_eq!(sb.instrs.iter().filter(|i| i.op == IrOp::Ld).count(), 1);
        let add = sb.instrs.iter().find(|i| matches!(i.op, IrOp::Arith(_))).unwrap();
        assert_eq!(add.srcs[0], add.srcs[1]);
    }

    #[test]
    fn store_blocks_load_cse() {
        let sb = optimized("arena 16\nLD.f32 f1, [r0+0]\nST.f32 [r1+0], f5\nLD.f32 f2, [r0+0]\nHALT\n");
        assert_eq!(sb.instrs.iter().filter(|i| i.op == IrOp::Ld).count(), 2);
    }

    #[test]
    fn dead_value_is_removed() {
        let sb = optimized("arena 8\nMUL.f32 f1, f2, f3\nMOV.f32 f1, 1.0\nHALT\n");
        assert!(sb.instrs.is_empty());
        assert_eq!(sb.live_out[&GuestReg::Fp(1)], Operand::Imm(1.0f32.to_bits() as u64));
    }

    #[test]
    fn f32_move_of_unknown_image_is_kept() {
        let sb = optimized("arena 8\nMOV.f32 f1, f2\nHALT\n");
        assert_eq!(sb.instrs.len(), 1);
        let sb = optimized("arena 8\nMOV.f64 f1, f2\nHALT\n");
        assert!(sb.instrs.is_empty());
    }

    #[test]
    fn unrolled_induction_chain_collapses() {
        let src = "arena 256
MOV.i32 r1, 0
loop:
LD.f32 f1, [r1+0]
ADD.f32 f1, f1, 1.0
ST.f32 [r1+0], f1
ADD.i32 r1, r1, 4
CMP.i32 r1, 64
BR lt, loop
HALT
";
        let p = parse_program("t", src).unwrap();
        let (_, prof) = run_oracle(&p).unwrap();
        let sb = build_superblock(&prof, &p, p.labels["loop"], 0, &Thresholds::default(), BuildOptions::default());
        let sb = classic_optimize(to_ssa(unroll_loop(sb, &prof, 128, 256)));
        let bases: HashSet<Operand> = sb.instrs.iter().filter_map(|i| i.mem.map(|m| m.base)).collect();
        assert_eq!(bases.len(), 1);
        let offsets: Vec<i64> = sb.instrs.iter().filter(|i| i.op == IrOp::Ld).map(|i| i.mem.unwrap().offset).collect();
        assert_eq!(offsets, vec![0, 4, 8, 12]);
        let int_adds = sb.instrs.iter().filter(|i| matches!(i.op, IrOp::Arith(_)) && i.dtype == DataType::I32).count();
        assert_eq!(int_adds, 4);
    }
}
