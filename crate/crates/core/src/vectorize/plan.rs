use std::collections::BTreeMap;

use super::{Pack, PackOp, VectorizationConfig};
use crate::guest::DataType;
use crate::ir::{IrOp, Operand, Superblock, ValueId};
use crate::translate::DepGraph;

/// Where the lanes of one operand slot of a pack come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OperandSource {
    /// Lane `i` is lane `i` of another pack's result.
    Direct(usize),
    /// The same immediate in every lane.
    Const(u64),
    /// The same value in every lane.
    Splat(ValueId),
    /// A Pack pseudo-op collecting scattered values.
    Gather(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GatherLowering {
    /// Chain of two-source shuffles, one per input after the first.
    Shuffle,
    /// Two-element PACK instructions.
    Pack,
    /// Producers write their lane directly; no instruction is emitted.
    SelectiveWrite,
}

/// Pack pseudo-op: input `i` lands in lane `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Gather {
    pub inputs: Vec<ValueId>,
    pub dtype: DataType,
    pub lowering: GatherLowering,
}

/// Unpack pseudo-op: lanes of a pack read by scalar instructions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Unpack {
    pub pack: usize,
    pub lanes: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorPlan {
    pub packs: Vec<Pack>,
    /// Per pack, one source per operand slot.
    pub operands: Vec<Vec<OperandSource>>,
    pub gathers: Vec<Gather>,
    pub unpacks: Vec<Unpack>,
}

impl VectorPlan {
    /// Pack and lane of every packed instruction.
    pub fn lane_map(&self, n: usize) -> Vec<Option<(usize, usize)>> {
        let mut map = vec![None; n];
        for (p, pack) in self.packs.iter().enumerate() {
            for (lane, &m) in pack.members.iter().enumerate() {
                map[m] = Some((p, lane));
            }
        }
        map
    }

    pub fn listing(&self, sb: &Superblock) -> String {
        let mut out = String::new();
        for (p, pack) in self.packs.iter().enumerate() {
            out.push_str(&format!("  pack {p}: {:?}.{} k={} members={:?}", pack.op, pack.dtype, pack.mask(), pack.members));
            for (slot, src) in self.operands[p].iter().enumerate() {
                out.push_str(&format!(" s{slot}={src:?}"));
            }
            out.push('\n');
        }
        for (g, gather) in self.gathers.iter().enumerate() {
            out.push_str(&format!("  gather {g}: {:?} {:?}\n", gather.lowering, gather.inputs));
        }
        for u in &self.unpacks {
            out.push_str(&format!("  unpack pack {} lanes {:?}\n", u.pack, u.lanes));
        }
        if out.is_empty() {
            out.push_str(&format!("  no packs ({} instructions)\n", sb.instrs.len()));
        }
        out
    }
}

fn slot_count(op: PackOp) -> usize {
    match op {
        PackOp::Load => 0,
        PackOp::Store => 1,
        PackOp::Arith(_) => 2,
    }
}

/// Classifies every operand slot of every pack, creating a Pack pseudo-op
/// for slots fed by unvectorized or misaligned producers and an Unpack for
/// packs whose results are read by scalar instructions. Identical gathers
/// are shared.
pub fn emit_pack_unpack(sb: &Superblock, packs: &[Pack], ddg: &DepGraph) -> VectorPlan {
    assert_eq!(ddg.n, sb.instrs.len(), "dependence graph does not match the superblock");
    let defs = sb.def_map();
    let lanes = {
        let mut plan = VectorPlan { packs: packs.to_vec(), ..VectorPlan::default() };
        let map = plan.lane_map(sb.instrs.len());
        plan.packs.clear();
        map
    };
    let mut gathers: Vec<Gather> = Vec::new();
    let mut gather_ids: BTreeMap<Vec<ValueId>, usize> = BTreeMap::new();
    let mut operands = Vec::with_capacity(packs.len());
    for pack in packs {
        let mut slots = Vec::new();
        for slot in 0..slot_count(pack.op) {
            let ops: Vec<Operand> = pack.members.iter().map(|&m| sb.instrs[m].srcs[slot]).collect();
            let src = match ops[0] {
                Operand::Imm(x) => OperandSource::Const(x),
                Operand::Reg(_) => panic!("operand slot outside SSA form"),
                Operand::Val(v0) => {
                    let vals: Vec<ValueId> = ops.iter().map(|o| o.value().expect("mixed operand slot")).collect();
                    let aligned = vals.iter().enumerate().map(|(i, v)| defs.get(v).and_then(|&d| lanes[d]).map(|(p, l)| (p, l, i))).collect::<Option<Vec<_>>>();
                    match aligned {
                        Some(a) if a.iter().all(|&(p, l, i)| p == a[0].0 && l == i) => OperandSource::Direct(a[0].0),
                        _ if vals.iter().all(|&v| v == v0) => OperandSource::Splat(v0),
                        _ => {
                            let id = *gather_ids.entry(vals.clone()).or_insert_with(|| {
                                gathers.push(Gather { inputs: vals, dtype: pack.dtype, lowering: GatherLowering::Shuffle });
                                gathers.len() - 1
                            });
                            OperandSource::Gather(id)
                        }
                    }
                }
            };
            slots.push(src);
        }
        operands.push(slots);
    }
    let mut unpacks = Vec::new();
    for (p, pack) in packs.iter().enumerate() {
        let mut needed = Vec::new();
        for (lane, &m) in pack.members.iter().enumerate() {
            let Some(v) = sb.instrs[m].dst_value() else { continue };
            let scalar_use = sb.instrs.iter().enumerate().any(|(i, ins)| lanes[i].is_none() && ins.used_values().any(|u| u == v));
            if scalar_use {
                needed.push(lane);
            }
        }
        if !needed.is_empty() {
            unpacks.push(Unpack { pack: p, lanes: needed });
        }
    }
    VectorPlan { packs: packs.to_vec(), operands, gathers, unpacks }
}

/// Chooses how each Pack pseudo-op is lowered. Without selective writing
/// every gather is a shuffle chain. With it, a gather whose inputs are
/// distinct scalar instructions each read only by that gather is removed and
/// its producers write their lanes directly; other gathers use PACK.
pub fn apply_swr(sb: &Superblock, mut plan: VectorPlan, cfg: VectorizationConfig) -> VectorPlan {
    let defs = sb.def_map();
    let lanes = plan.lane_map(sb.instrs.len());
    let uses = sb.use_counts();
    let mut refs: BTreeMap<usize, usize> = BTreeMap::new();
    for slots in &plan.operands {
        for s in slots {
            if let OperandSource::Gather(g) = s {
                *refs.entry(*g).or_default() += 1;
            }
        }
    }
    for (g, gather) in plan.gathers.iter_mut().enumerate() {
        if !cfg.swr_enabled {
            gather.lowering = GatherLowering::Shuffle;
            continue;
        }
        let mut distinct = gather.inputs.clone();
        distinct.sort();
        distinct.dedup();
        let single = refs.get(&g) == Some(&1)
            && distinct.len() == gather.inputs.len()
            && gather.inputs.iter().all(|v| {
                defs.get(v).is_some_and(|&d| {
                    let ins = &sb.instrs[d];
                    lanes[d].is_none()
                        && ins.dtype == gather.dtype
                        && matches!(ins.op, IrOp::Ld | IrOp::Arith(_) | IrOp::Mov | IrOp::Cvt)
                        && uses.get(v) == Some(&1)
                })
            });
        gather.lowering = if single { GatherLowering::SelectiveWrite } else { GatherLowering::Pack };
    }
    plan
}
