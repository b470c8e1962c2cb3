use std::collections::{BTreeMap, HashMap};

use crate::guest::{DataType, GuestReg};
use crate::ir::{Dest, IrOp, Operand, SbExit, Superblock, ValueClass, ValueId, ValueInfo};

fn dtype_of_def(op: &IrOp, dtype: DataType) -> Option<DataType> {
    match op {
        IrOp::Cmp => None,
        _ => Some(dtype),
    }
}

/// Renames every register definition to a fresh value. Registers read before
/// being written become live-in values; the last definition of each register
/// is recorded in `live_out`, and every side exit receives the register
/// snapshot it must write back.
pub fn to_ssa(mut sb: Superblock) -> Superblock {
    if sb.ssa {
        return sb;
    }
    let mut current: HashMap<GuestReg, Operand> = HashMap::new();
    let mut written: BTreeMap<GuestReg, Operand> = BTreeMap::new();
    let mut values: Vec<ValueInfo> = Vec::new();

    for ins in sb.instrs.iter_mut() {
        for o in ins.srcs.iter_mut().chain(ins.mem.as_mut().map(|m| &mut m.base)) {
            if let Operand::Reg(r) = *o {
                *o = read(r, &mut current, &mut values);
            }
        }
        if let IrOp::SideExit { writeback, .. } = &mut ins.op {
            *writeback = written.iter().map(|(r, o)| (*r, *o)).collect();
        }
        if let Some(Dest::Reg(r)) = ins.dst {
            values.push(ValueInfo { class: ValueClass::of(r), dtype: dtype_of_def(&ins.op, ins.dtype), live_in: None });
            let v = ValueId(values.len() as u32 - 1);
            ins.dst = Some(Dest::Val(v));
            current.insert(r, Operand::Val(v));
            written.insert(r, Operand::Val(v));
        }
    }
    if let SbExit::Branch { flags: Operand::Reg(r), pc, cond, taken, not_taken } = sb.exit {
        let flags = read(r, &mut current, &mut values);
        sb.exit = SbExit::Branch { pc, cond, flags, taken, not_taken };
    }
    sb.values = values;
    sb.live_out = written;
    sb.ssa = true;
    sb
}

fn read(reg: GuestReg, current: &mut HashMap<GuestReg, Operand>, values: &mut Vec<ValueInfo>) -> Operand {
    *current.entry(reg).or_insert_with(|| {
        values.push(ValueInfo { class: ValueClass::of(reg), dtype: live_in_dtype(reg), live_in: Some(reg) });
        Operand::Val(ValueId(values.len() as u32 - 1))
    })
}

/// Integer registers always hold canonical i32 images; FP live-ins have an
/// unknown image type.
fn live_in_dtype(reg: GuestReg) -> Option<DataType> {
    match reg {
        GuestReg::Int(_) => Some(DataType::I32),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guest::{parse_program, run_oracle};
    use crate::translate::{build_superblock, unroll_loop, BuildOptions, Thresholds};
    use std::collections::HashSet;

    fn sb(src: &str) -> Superblock {
        let p = parse_program("t", src).unwrap();
        let (_, prof) = run_oracle(&p).unwrap();
        build_superblock(&prof, &p, 0, 0, &Thresholds::default(), BuildOptions::default())
    }

    fn defs(sb: &Superblock) -> Vec<ValueId> {
        sb.instrs.iter().filter_map(|i| i.dst_value()).collect()
    }

    #[test]
    fn redefinition_gets_new_value() {
        let s = to_ssa(sb("arena 8\nADD.f32 f1, f2, f3\nADD.f32 f1, f1, f1\nHALT\n"));
        let d = defs(&s);
        assert_eq!(d.len(), 2);
        assert_ne!(d[0], d[1]);
        assert_eq!(s.instrs[1].srcs, vec![Operand::Val(d[0]), Operand::Val(d[0])]);
        assert_eq!(s.live_out[&GuestReg::Fp(1)], Operand::Val(d[1]));
    }

    #[test]
    fn straight_line_keeps_shape() {
        let before = sb("arena 8\nADD.f32 f1, f2, f3\nMUL.f32 f4, f5, f6\nHALT\n");
        let after = to_ssa(before.clone());
        assert_eq!(after.instrs.len(), before.instrs.len());
        for (a, b) in after.instrs.iter().zip(&before.instrs) {
            assert_eq!(a.op, b.op);
        }
        assert_eq!(after.values.iter().filter(|v| v.live_in.is_some()).count(), 4);
    }

    #[test]
    fn unrolled_copies_have_distinct_defs() {
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
        let s = build_superblock(&prof, &p, p.labels["loop"], 0, &Thresholds::default(), BuildOptions::default());
        let s = to_ssa(unroll_loop(s, &prof, 128, 256));
        let d = defs(&s);
        let unique: HashSet<_> = d.iter().collect();
        assert_eq!(unique.len(), d.len());
        assert_eq!(d.len(), 4 * 4);
    }

    #[test]
    fn side_exit_snapshots_written_registers() {
        let src = "arena 8
MOV.i32 r9, 0
top:
MOV.f32 f1, 1.0
CMP.i32 r9, 1000
BR lt, next
JMP out
next:
ADD.i32 r9, r9, 1
CMP.i32 r9, 10
BR lt, top
out:
HALT
";
        let p = parse_program("t", src).unwrap();
        let (_, prof) = run_oracle(&p).unwrap();
        let s = build_superblock(&prof, &p, p.labels["top"], 0, &Thresholds::default(), BuildOptions { multi_exit: true, speculation: true });
        let s = to_ssa(s);
        let exit = s.instrs.iter().find(|i| matches!(i.op, IrOp::SideExit { .. })).unwrap();
        let IrOp::SideExit { writeback, .. } = &exit.op else { unreachable!() };
        let regs: Vec<GuestReg> = writeback.iter().map(|(r, _)| *r).collect();
        assert_eq!(regs, vec![GuestReg::Fp(1), GuestReg::Flags]);
    }
}
