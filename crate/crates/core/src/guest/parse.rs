//! Kernel text format.
//!
//! ```text
//! arena 64
//! init 0 f32 1.5
//! loop:
//!   LD.f32 f1, [r1+0]
//!   ADD.f32 f2, f1, 2.0
//!   ST.f32 [r1+16], f2
//!   ADD.i32 r1, r1, 4
//!   CMP.i32 r1, 16
//!   BR lt, loop
//!   HALT
//! ```

use std::collections::{BTreeMap, BTreeSet};

use super::{
    ArithOp, Cond, DataType, GuestError, GuestInstruction, GuestOperand, GuestProgram, GuestReg, MemOperand, Opcode,
    GUEST_REGS,
};

/// Parses and validates a kernel.
pub fn parse_program(name: &str, text: &str) -> Result<GuestProgram, GuestError> {
    let mut arena: Option<usize> = None;
    let mut inits: Vec<(usize, usize, DataType, u64)> = Vec::new();
    let mut instructions = Vec::new();
    let mut lines = Vec::new();
    let mut pending: Vec<(usize, String)> = Vec::new();
    let mut labels = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let mut line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        // Leading `label:` definitions.
        while let Some(colon) = line.find(':') {
            let head = line[..colon].trim();
            if head.is_empty() || !head.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                break;
            }
            if labels.insert(head.to_string(), instructions.len()).is_some() {
                return Err(syntax(line_no, format!("duplicate label `{head}`")));
            }
            line = line[colon + 1..].trim();
        }
        if line.is_empty() {
            continue;
        }
        let mut words = line.split_whitespace();
        let head = words.next().unwrap();
        match head {
            "arena" => {
                if arena.is_some() {
                    return Err(syntax(line_no, "duplicate `arena` header".into()));
                }
                let v = words.next().ok_or_else(|| syntax(line_no, "arena size missing".into()))?;
                arena = Some(parse_usize(line_no, v)?);
                continue;
            }
            "init" => {
                let parts: Vec<&str> = words.collect();
                if parts.len() != 3 {
                    return Err(syntax(line_no, "expected `init <addr> <dtype> <value>`".into()));
                }
                let addr = parse_usize(line_no, parts[0])?;
                let dtype = DataType::from_suffix(parts[1])
                    .ok_or_else(|| syntax(line_no, format!("unknown data type `{}`", parts[1])))?;
                let bits = parse_imm(line_no, dtype, parts[2])?;
                inits.push((line_no, addr, dtype, bits));
                continue;
            }
            _ => {}
        }
        if arena.is_none() {
            return Err(syntax(line_no, "`arena <bytes>` header must precede instructions".into()));
        }
        let rest = line[head.len()..].trim();
        let (ins, label) = parse_instruction(line_no, head, rest)?;
        if let Some(l) = label {
            pending.push((instructions.len(), l));
        }
        instructions.push(ins.classify());
        lines.push(line_no);
    }

    let arena = arena.ok_or_else(|| GuestError::Invalid("missing `arena` header".into()))?;
    for (i, label) in pending {
        let target = *labels
            .get(&label)
            .ok_or_else(|| GuestError::UndefinedLabel { line: lines[i], label: label.clone() })?;
        if target >= instructions.len() {
            return Err(GuestError::Invalid(format!("label `{label}` does not name an instruction")));
        }
        instructions[i].br_target = Some(target);
    }

    let mut memory = vec![0u8; arena];
    for (line, addr, dtype, bits) in inits {
        let bytes = dtype.width_bytes();
        if addr + bytes > arena {
            return Err(syntax(line, format!("init at {addr} lies outside the {arena}-byte arena")));
        }
        memory[addr..addr + bytes].copy_from_slice(&bits.to_le_bytes()[..bytes]);
    }

    validate(&instructions)?;
    Ok(GuestProgram::assemble(name.to_string(), instructions, labels, arena, memory))
}

fn validate(instrs: &[GuestInstruction]) -> Result<(), GuestError> {
    if instrs.is_empty() {
        return Err(GuestError::Invalid("program has no instructions".into()));
    }
    let n = instrs.len();
    let mut seen = BTreeSet::new();
    let mut work = vec![0usize];
    let mut halts = 0;
    while let Some(pc) = work.pop() {
        if !seen.insert(pc) {
            continue;
        }
        let ins = &instrs[pc];
        let mut succ = Vec::new();
        match ins.opcode {
            Opcode::Halt => halts += 1,
            Opcode::Jmp => succ.push(ins.br_target.unwrap()),
            Opcode::Br => {
                succ.push(ins.br_target.unwrap());
                succ.push(pc + 1);
            }
            _ => succ.push(pc + 1),
        }
        for s in succ {
            if s >= n {
                return Err(GuestError::Invalid(format!("control falls off the end after instruction {pc}")));
            }
            work.push(s);
        }
    }
    if halts != 1 {
        return Err(GuestError::Invalid(format!("expected exactly one reachable HALT, found {halts}")));
    }
    Ok(())
}

fn syntax(line: usize, msg: String) -> GuestError {
    GuestError::Syntax { line, msg }
}

fn parse_usize(line: usize, s: &str) -> Result<usize, GuestError> {
    s.parse().map_err(|_| syntax(line, format!("expected a non-negative integer, got `{s}`")))
}

fn parse_imm(line: usize, dtype: DataType, s: &str) -> Result<u64, GuestError> {
    match dtype {
        DataType::I32 => s
            .parse::<i32>()
            .map(|v| v as i64 as u64)
            .map_err(|_| syntax(line, format!("bad i32 immediate `{s}`"))),
        DataType::F32 => {
            let v: f32 = s.parse().map_err(|_| syntax(line, format!("bad f32 immediate `{s}`")))?;
            if v.is_nan() {
                return Err(syntax(line, "NaN values are not accepted".into()));
            }
            Ok(v.to_bits() as u64)
        }
        DataType::F64 => {
            let v: f64 = s.parse().map_err(|_| syntax(line, format!("bad f64 immediate `{s}`")))?;
            if v.is_nan() {
                return Err(syntax(line, "NaN values are not accepted".into()));
            }
            Ok(v.to_bits())
        }
    }
}

fn parse_reg(line: usize, s: &str) -> Result<Option<GuestReg>, GuestError> {
    let (class, num) = match s.split_at_checked(1) {
        Some(p) => p,
        None => return Ok(None),
    };
    if !matches!(class, "r" | "f") || num.is_empty() || !num.chars().all(|c| c.is_ascii_digit()) {
        return Ok(None);
    }
    let n: usize = num.parse().map_err(|_| syntax(line, format!("bad register `{s}`")))?;
    if n >= GUEST_REGS {
        return Err(GuestError::RegisterOutOfRange { line, reg: s.to_string() });
    }
    Ok(Some(if class == "r" { GuestReg::Int(n as u8) } else { GuestReg::Fp(n as u8) }))
}

fn reg_matches(dtype: DataType, reg: GuestReg) -> bool {
    matches!((dtype.is_float(), reg), (true, GuestReg::Fp(_)) | (false, GuestReg::Int(_)))
}

fn expect_reg(line: usize, dtype: DataType, s: &str) -> Result<GuestReg, GuestError> {
    match parse_reg(line, s)? {
        Some(r) if reg_matches(dtype, r) => Ok(r),
        Some(r) => Err(syntax(line, format!("register {r} does not hold {dtype} values"))),
        None => Err(syntax(line, format!("expected a register, got `{s}`"))),
    }
}

fn parse_src(line: usize, dtype: DataType, s: &str) -> Result<GuestOperand, GuestError> {
    match parse_reg(line, s)? {
        Some(r) if reg_matches(dtype, r) => Ok(GuestOperand::Reg(r)),
        Some(r) => Err(syntax(line, format!("register {r} does not hold {dtype} values"))),
        None => parse_imm(line, dtype, s).map(GuestOperand::Imm),
    }
}

fn parse_mem(line: usize, s: &str) -> Result<MemOperand, GuestError> {
    let inner = s
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| syntax(line, format!("expected `[rB+off]`, got `{s}`")))?
        .trim();
    let split = inner.find(['+', '-']);
    let (base, offset) = match split {
        Some(p) => {
            let off: i64 = inner[p..]
                .replace(' ', "")
                .trim_start_matches('+')
                .parse()
                .map_err(|_| syntax(line, format!("bad offset in `{s}`")))?;
            (inner[..p].trim(), off)
        }
        None => (inner, 0),
    };
    match parse_reg(line, base)? {
        Some(GuestReg::Int(b)) => Ok(MemOperand { base: b, offset }),
        _ => Err(syntax(line, format!("memory base must be an integer register in `{s}`"))),
    }
}

fn operands(rest: &str) -> Vec<&str> {
    if rest.is_empty() {
        return Vec::new();
    }
    rest.split(',').map(str::trim).collect()
}

fn parse_instruction(line: usize, head: &str, rest: &str) -> Result<(GuestInstruction, Option<String>), GuestError> {
    let (mnemonic, suffix) = match head.split_once('.') {
        Some((m, s)) => (m, Some(s)),
        None => (head, None),
    };
    let ops = operands(rest);
    let want = |n: usize| -> Result<(), GuestError> {
        if ops.len() != n {
            Err(syntax(line, format!("`{mnemonic}` takes {n} operand(s), got {}", ops.len())))
        } else {
            Ok(())
        }
    };
    match mnemonic {
        "HALT" => {
            want(0)?;
            return Ok((GuestInstruction::new(Opcode::Halt, DataType::I32), None));
        }
        "JMP" => {
            want(1)?;
            return Ok((GuestInstruction::new(Opcode::Jmp, DataType::I32), Some(ops[0].to_string())));
        }
        "BR" => {
            want(2)?;
            let cond = Cond::from_name(ops[0]).ok_or_else(|| syntax(line, format!("unknown condition `{}`", ops[0])))?;
            let mut ins = GuestInstruction::new(Opcode::Br, DataType::I32);
            ins.cond = Some(cond);
            ins.srcs.push(GuestOperand::Reg(GuestReg::Flags));
            return Ok((ins, Some(ops[1].to_string())));
        }
        _ => {}
    }
    let suffix = suffix.ok_or_else(|| syntax(line, format!("`{mnemonic}` needs a `.dtype` suffix")))?;
    let dtype = DataType::from_suffix(suffix).ok_or_else(|| syntax(line, format!("unknown data type `{suffix}`")))?;
    let opcode = match mnemonic {
        "LD" => Opcode::Ld,
        "ST" => Opcode::St,
        "ADD" => Opcode::Arith(ArithOp::Add),
        "SUB" => Opcode::Arith(ArithOp::Sub),
        "MUL" => Opcode::Arith(ArithOp::Mul),
        "DIV" => Opcode::Arith(ArithOp::Div),
        "MOV" => Opcode::Mov,
        "CVT" => Opcode::Cvt,
        "CMP" => Opcode::Cmp,
        _ => return Err(syntax(line, format!("unknown opcode `{mnemonic}`"))),
    };
    let mut ins = GuestInstruction::new(opcode, dtype);
    match opcode {
        Opcode::Ld => {
            want(2)?;
            ins.dst = Some(expect_reg(line, dtype, ops[0])?);
            ins.mem = Some(parse_mem(line, ops[1])?);
        }
        Opcode::St => {
            want(2)?;
            ins.mem = Some(parse_mem(line, ops[0])?);
            ins.srcs.push(parse_src(line, dtype, ops[1])?);
        }
        Opcode::Arith(_) => {
            want(3)?;
            ins.dst = Some(expect_reg(line, dtype, ops[0])?);
            ins.srcs.push(parse_src(line, dtype, ops[1])?);
            ins.srcs.push(parse_src(line, dtype, ops[2])?);
        }
        Opcode::Mov => {
            want(2)?;
            ins.dst = Some(expect_reg(line, dtype, ops[0])?);
            ins.srcs.push(parse_src(line, dtype, ops[1])?);
        }
        Opcode::Cvt => {
            want(2)?;
            let from = match dtype {
                DataType::F32 => DataType::F64,
                DataType::F64 => DataType::F32,
                DataType::I32 => return Err(syntax(line, "CVT converts between f32 and f64 only".into())),
            };
            ins.dst = Some(expect_reg(line, dtype, ops[0])?);
            ins.srcs.push(GuestOperand::Reg(expect_reg(line, from, ops[1])?));
        }
        Opcode::Cmp => {
            want(2)?;
            ins.dst = Some(GuestReg::Flags);
            ins.srcs.push(parse_src(line, dtype, ops[0])?);
            ins.srcs.push(parse_src(line, dtype, ops[1])?);
        }
        _ => unreachable!(),
    }
    Ok((ins, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "arena 32\n";

    #[test]
    fn add_maps_directly() {
        let p = parse_program("t", &format!("{HEADER}ADD.f32 f1, f2, f3\nHALT\n")).unwrap();
        let ins = &p.instructions[0];
        assert_eq!(ins.opcode, Opcode::Arith(ArithOp::Add));
        assert_eq!(ins.dtype, DataType::F32);
        assert_eq!(ins.dst, Some(GuestReg::Fp(1)));
        assert_eq!(ins.srcs, vec![GuestOperand::Reg(GuestReg::Fp(2)), GuestOperand::Reg(GuestReg::Fp(3))]);
        assert!(ins.fp);
    }

    #[test]
    fn undefined_label_is_reported() {
        let err = parse_program("t", &format!("{HEADER}CMP.i32 r1, 0\nBR lt, nowhere\nHALT\n")).unwrap_err();
        assert_eq!(err, GuestError::UndefinedLabel { line: 3, label: "nowhere".into() });
    }

    #[test]
    fn register_bounds_are_checked() {
        let err = parse_program("t", &format!("{HEADER}MOV.f32 f32, 1.0\nHALT\n")).unwrap_err();
        assert!(matches!(err, GuestError::RegisterOutOfRange { line: 2, .. }));
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = parse_program("t", &format!("{HEADER}\n# c\nFROB.f32 f1\nHALT\n")).unwrap_err();
        assert!(matches!(err, GuestError::Syntax { line: 4, .. }));
    }

    #[test]
    fn nan_initializers_are_rejected() {
        assert!(parse_program("t", "arena 8\ninit 0 f32 NaN\nHALT\n").is_err());
        assert!(parse_program("t", "arena 8\nMOV.f64 f1, nan\nHALT\n").is_err());
    }

    #[test]
    fn memory_operands_and_inits() {
        let p = parse_program(
            "t",
            "arena 16\ninit 8 f64 2.5\nLD.f64 f1, [r2+8]\nST.f64 [r2 - 8], f1\nLD.i32 r3, [r4]\nHALT\n",
        )
        .unwrap();
        assert_eq!(p.instructions[0].mem, Some(MemOperand { base: 2, offset: 8 }));
        assert_eq!(p.instructions[1].mem, Some(MemOperand { base: 2, offset: -8 }));
        assert_eq!(p.instructions[2].mem, Some(MemOperand { base: 4, offset: 0 }));
        assert!(!p.instructions[2].fp);
        assert_eq!(f64::from_le_bytes(p.initial_memory[8..16].try_into().unwrap()), 2.5);
    }

    #[test]
    fn requires_exactly_one_reachable_halt() {
        assert!(parse_program("t", "arena 4\nMOV.i32 r1, 1\n").is_err());
        assert!(parse_program("t", "arena 4\nJMP a\nHALT\na:\nHALT\n").is_ok());
        assert!(parse_program("t", "arena 4\nCMP.i32 r1, 0\nBR eq, a\nHALT\na:\nHALT\n").is_err());
    }

    #[test]
    fn blocks_split_at_labels_and_branches() {
        let p = parse_program(
            "t",
            "arena 4\nMOV.i32 r1, 0\nloop:\nADD.i32 r1, r1, 1\nCMP.i32 r1, 4\nBR lt, loop\nmid:\nMOV.i32 r2, 1\nHALT\n",
        )
        .unwrap();
        let starts: Vec<usize> = p.blocks().iter().map(|b| b.start).collect();
        assert_eq!(starts, vec![0, 1, 4]);
        assert_eq!(p.block_at(3).start, 1);
    }

    #[test]
    fn cvt_checks_source_type() {
        let p = parse_program("t", "arena 4\nCVT.f64 f1, f2\nHALT\n").unwrap();
        assert_eq!(p.instructions[0].srcs, vec![GuestOperand::Reg(GuestReg::Fp(2))]);
        assert!(parse_program("t", "arena 4\nCVT.i32 r1, f2\nHALT\n").is_err());
    }
}
