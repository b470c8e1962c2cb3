use std::collections::{BTreeMap, HashMap, VecDeque};

use thiserror::Error;

use crate::guest::{ArithOp, DataType};
use crate::host::{HostInst, HostOp, Reg, NUM_TEMPS, NUM_VREGS};
use crate::translate::{list_schedule, ScheduleError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegAllocError {
    #[error("more than {NUM_VREGS} vector registers live at host instruction {at}")]
    VectorPressure { at: usize },
    #[error("more than {NUM_TEMPS} integer temporaries live at host instruction {at}")]
    TempPressure { at: usize },
}

/// Nominal result latency used to prioritize host instructions.
pub(crate) fn nominal_latency(op: &HostOp) -> u32 {
    let arith = |op: ArithOp, dtype: DataType| match (dtype, op) {
        (DataType::I32, ArithOp::Add | ArithOp::Sub) => 1,
        (DataType::I32, ArithOp::Mul) => 3,
        (DataType::I32, ArithOp::Div) => 10,
        (_, ArithOp::Add | ArithOp::Sub) => 2,
        (_, ArithOp::Mul) => 4,
        (_, ArithOp::Div) => 20,
    };
    match op {
        HostOp::VArith { op, dtype, .. } | HostOp::SArith { op, dtype, .. } => arith(*op, *dtype),
        HostOp::Mov { dtype, .. } | HostOp::Cvt { dtype, .. } | HostOp::Cmp { dtype, .. } if dtype.is_float() => 2,
        HostOp::Shuf { .. } | HostOp::Pack { .. } | HostOp::Bcast { .. } | HostOp::Extract { .. } => 2,
        _ => 1,
    }
}

#[derive(Default)]
struct RegState {
    last_full: Option<usize>,
    partials: Vec<usize>,
    readers: Vec<usize>,
}

/// Ordering constraints among host instructions in emission order.
///
/// Register dependences treat lane writes and PACK as partial: partial
/// writes to one register are mutually unordered, and a reader waits for the
/// last full write and every partial write since. The tail writebacks follow
/// every side exit and the final instruction (the region exit) follows
/// everything. `extra` carries memory and side-exit ordering.
pub fn host_dependences(instrs: &[HostInst], extra: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = extra.to_vec();
    let mut regs: HashMap<Reg, RegState> = HashMap::new();
    let mut exits = Vec::new();
    for (i, ins) in instrs.iter().enumerate() {
        for r in ins.op.reads() {
            let st = regs.entry(r).or_default();
            edges.extend(st.last_full.iter().chain(&st.partials).map(|&w| (w, i)));
            st.readers.push(i);
        }
        for (r, partial) in ins.op.writes() {
            let st = regs.entry(r).or_default();
            edges.extend(st.last_full.iter().chain(&st.readers).map(|&p| (p, i)));
            if partial {
                st.partials.push(i);
            } else {
                edges.extend(st.partials.iter().map(|&p| (p, i)));
                *st = RegState { last_full: Some(i), ..RegState::default() };
            }
        }
        match ins.op {
            HostOp::ExitIf { .. } => exits.push(i),
            HostOp::WriteBack(_) => edges.extend(exits.iter().map(|&e| (e, i))),
            _ => {}
        }
    }
    if let Some(last) = instrs.len().checked_sub(1) {
        edges.extend((0..last).map(|i| (i, last)));
    }
    edges.retain(|&(a, b)| a != b);
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// List-schedules host instructions and returns the new order as original
/// indices.
pub fn schedule_host(instrs: &[HostInst], extra: &[(usize, usize)]) -> Result<Vec<usize>, ScheduleError> {
    let edges = host_dependences(instrs, extra);
    let latency: Vec<u32> = instrs.iter().map(|i| nominal_latency(&i.op)).collect();
    list_schedule(instrs.len(), &edges, &latency)
}

fn registers_of(op: &HostOp) -> Vec<Reg> {
    let mut out = Vec::new();
    op.clone().map_regs(|r| {
        out.push(r);
        r
    });
    out
}

/// Linear-scan allocation of virtual `T` and `V` registers in program order.
/// A register is live from its first to its last mention; registers freed at
/// an instruction are reused only by later instructions.
pub fn allocate_registers(instrs: &mut [HostInst]) -> Result<(), RegAllocError> {
    let mut span: BTreeMap<Reg, (usize, usize)> = BTreeMap::new();
    for (i, ins) in instrs.iter().enumerate() {
        for r in registers_of(&ins.op) {
            if matches!(r, Reg::T(_) | Reg::V(_)) {
                span.entry(r).and_modify(|s| s.1 = i).or_insert((i, i));
            }
        }
    }
    let mut starts: Vec<Vec<Reg>> = vec![Vec::new(); instrs.len()];
    let mut ends: Vec<Vec<Reg>> = vec![Vec::new(); instrs.len()];
    for (&r, &(a, b)) in &span {
        starts[a].push(r);
        ends[b].push(r);
    }
    let mut free_v: VecDeque<u32> = (0..NUM_VREGS as u32).collect();
    let mut free_t: VecDeque<u32> = (0..NUM_TEMPS as u32).collect();
    let mut map: HashMap<Reg, Reg> = HashMap::new();
    for i in 0..instrs.len() {
        for &r in &starts[i] {
            let phys = match r {
                Reg::V(_) => Reg::V(free_v.pop_front().ok_or(RegAllocError::VectorPressure { at: i })?),
                _ => Reg::T(free_t.pop_front().ok_or(RegAllocError::TempPressure { at: i })?),
            };
            map.insert(r, phys);
        }
        instrs[i].op.map_regs(|r| map.get(&r).copied().unwrap_or(r));
        for r in &ends[i] {
            match map[r] {
                Reg::V(n) => free_v.push_back(n),
                Reg::T(n) => free_t.push_back(n),
                _ => unreachable!("only temporaries are allocated"),
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::host::{Dst, Src};

    fn inst(op: HostOp) -> HostInst {
        HostInst::new(op, 0)
    }

    fn lane_add(lane: u8) -> HostInst {
        inst(HostOp::SArith {
            op: ArithOp::Add,
            dtype: DataType::F32,
            dst: Dst::Lane(Reg::V(9), lane),
            a: Src::Reg(Reg::F(lane)),
            b: Src::Imm(0),
        })
    }

    #[test]
    fn lane_writes_do_not_serialize() {
        let prog = vec![
            lane_add(0),
            lane_add(1),
            inst(HostOp::VArith { op: ArithOp::Mul, dtype: DataType::F32, dst: Reg::V(10), a: Src::Reg(Reg::V(9)), b: Src::Imm(0), mask: 2 }),
            inst(HostOp::Halt { pc: 0 }),
        ];
        let deps = host_dependences(&prog, &[]);
        assert!(!deps.contains(&(0, 1)));
        assert!(deps.contains(&(0, 2)) && deps.contains(&(1, 2)));
    }

    #[test]
    fn writeback_waits_for_readers_and_exits() {
        let prog = vec![
            inst(HostOp::Mov { dtype: DataType::I32, dst: Dst::Reg(Reg::T(0)), src: Src::Reg(Reg::R(1)) }),
            inst(HostOp::ExitIf { cond: crate::guest::Cond::Eq, when: true, flags: Src::Reg(Reg::T(0)), target: 3, writeback: vec![] }),
            inst(HostOp::WriteBack(crate::host::WriteBack { reg: crate::guest::GuestReg::Int(1), dtype: DataType::I32, src: Src::Imm(4) })),
            inst(HostOp::Halt { pc: 0 }),
        ];
        let order = schedule_host(&prog, &[]).unwrap();
        assert_eq!(order, vec![0, 1, 2, 3]);
    }

    #[test]
    fn registers_are_reused_after_death() {
        let mut prog: Vec<HostInst> = (0..200u32)
            .map(|k| inst(HostOp::Mov { dtype: DataType::F32, dst: Dst::Reg(Reg::V(k)), src: Src::Imm(0) }))
            .collect();
        allocate_registers(&mut prog).unwrap();
        assert!(prog.iter().all(|i| matches!(i.op, HostOp::Mov { dst: Dst::Reg(Reg::V(n)), .. } if (n as usize) < NUM_VREGS)));
    }

    #[test]
    fn pressure_is_reported() {
        let mut prog: Vec<HostInst> = (0..130u32)
            .map(|k| inst(HostOp::Mov { dtype: DataType::F32, dst: Dst::Reg(Reg::V(k)), src: Src::Imm(0) }))
            .collect();
        prog.push(inst(HostOp::Extract { dtype: DataType::F32, src: Reg::V(0), outs: vec![] }));
        let uses: Vec<HostInst> = (1..130u32)
            .map(|k| inst(HostOp::Mov { dtype: DataType::F32, dst: Dst::Reg(Reg::V(500)), src: Src::Reg(Reg::V(k)) }))
            .collect();
        prog.extend(uses);
        assert!(matches!(allocate_registers(&mut prog), Err(RegAllocError::VectorPressure { .. })));
    }
}
