use super::ddg::{AliasKind, DepGraph, SymAddr};
use crate::guest::DataType;
use crate::ir::{IrOp, Operand, Superblock};

/// Store forwarding and redundant load elimination. A load whose address
/// exactly matches an earlier store or load, with no possibly aliasing store
/// in between, becomes a copy of the known value. Memory is untouched.
pub fn eliminate_redundant_mem(mut sb: Superblock, ddg: &DepGraph) -> Superblock {
    assert_eq!(ddg.n, sb.instrs.len(), "dependence graph does not match the superblock");
    let mut known: Vec<(SymAddr, DataType, Operand)> = Vec::new();
    for (i, ins) in sb.instrs.iter_mut().enumerate() {
        let Some(addr) = ddg.addrs[i] else {
            if ins.op == IrOp::St {
                known.clear();
            }
            continue;
        };
        match ins.op {
            IrOp::St => {
                known.retain(|(a, _, _)| a.alias(&addr) == AliasKind::No);
                known.push((addr, ins.dtype, ins.srcs[0]));
            }
            IrOp::Ld => {
                let hit = known.iter().find(|(a, d, _)| *a == addr && *d == ins.dtype).map(|k| k.2);
                match hit {
                    Some(v) => {
                        ins.op = IrOp::Mov;
                        ins.mem = None;
                        ins.srcs = vec![v];
                    }
                    None => {
                        if let Some(v) = ins.dst_value() {
                            known.push((addr, ins.dtype, Operand::Val(v)));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    sb
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guest::{parse_program, run_oracle};
    use crate::translate::{build_ddg, build_superblock, classic_optimize, to_ssa, BuildOptions, Thresholds};

    fn run(body: &str) -> Superblock {
        let src = format!("arena 256\n{body}HALT\n");
        let p = parse_program("t", &src).unwrap();
        let (_, prof) = run_oracle(&p).unwrap();
        let sb = build_superblock(&prof, &p, 0, 0, &Thresholds::default(), BuildOptions::default());
        let sb = classic_optimize(to_ssa(sb));
        let g = build_ddg(&sb);
        eliminate_redundant_mem(sb, &g)
    }

    fn loads(sb: &Superblock) -> usize {
        sb.instrs.iter().filter(|i| i.op == IrOp::Ld).count()
    }

    #[test]
    fn store_forwards_to_load() {
        let sb = run("ST.f32 [r1+0], f2\nLD.f32 f3, [r1+0]\n");
        assert_eq!(loads(&sb), 0);
        let mov = sb.instrs.iter().find(|i| i.op == IrOp::Mov).unwrap();
        assert_eq!(Some(mov.srcs[0]), sb.instrs[0].srcs.first().copied());
    }

    #[test]
    fn repeated_load_becomes_copy() {
        let sb = run("LD.f32 f3, [r1+0]\nMOV.f32 f9, 1.0\nST.f32 [r1+8], f9\nLD.f32 f4, [r1+0]\n");
        assert_eq!(loads(&sb), 1);
    }

    #[test]
    fn may_alias_store_blocks_elimination() {
        let sb = run("LD.f32 f3, [r1+0]\nST.f32 [r2+0], f5\nLD.f32 f4, [r1+0]\n");
        assert_eq!(loads(&sb), 2);
    }

    #[test]
    fn dtype_mismatch_is_not_forwarded() {
        let sb = run("ST.i32 [r1+0], r5\nLD.f32 f3, [r1+0]\n");
        assert_eq!(loads(&sb), 1);
    }
}
