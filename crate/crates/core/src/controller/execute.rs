//! The sequential command FSM.

use crate::controller::isa::Program;
use crate::datapath::{run_layer, CycleReport};
use crate::error::{Error, Result};
use crate::kernels::KernelSet;
use crate::pearray::HwConfig;
use crate::qtensor::QTensor;

/// One executed command and the cycle window it occupied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandTrace {
    pub index: usize,
    pub start_cycle: u64,
    pub end_cycle: u64,
    pub report: CycleReport,
}

/// Runs every command in order and keeps each intermediate output.
pub fn execute_traced(
    program: &Program,
    weights: &[KernelSet],
    input: &QTensor,
    cfg: &HwConfig,
) -> Result<(Vec<QTensor>, Vec<CommandTrace>)> {
    let mut outputs: Vec<QTensor> = Vec::with_capacity(program.commands.len());
    let mut trace: Vec<CommandTrace> = Vec::with_capacity(program.commands.len());
    let mut clock = 0;
    for (i, cmd) in program.commands.iter().enumerate() {
        let run = || -> Result<(QTensor, CycleReport)> {
            if i > 0 && program.commands[i - 1].if_bank == cmd.if_bank {
                return Err(Error::BankConflict(format!(
                    "consecutive commands both read IF bank {}",
                    cmd.if_bank
                )));
            }
            let ks = match cmd.weight_slot {
                Some(s) => Some(weights.get(s).ok_or_else(|| {
                    Error::InvalidArgument(format!("weight slot {s} not loaded ({} present)", weights.len()))
                })?),
                None => None,
            };
            let prev = outputs.last().unwrap_or(input);
            run_layer(cmd, prev, ks, cfg)
        };
        let (out, report) = run().map_err(|e| e.at_command(i))?;
        trace.push(CommandTrace {
            index: i,
            start_cycle: clock,
            end_cycle: clock + report.total_cycles,
            report,
        });
        clock += report.total_cycles;
        outputs.push(out);
    }
    Ok((outputs, trace))
}

/// Runs the program; returns the final tensor and the summed report.
pub fn execute(program: &Program, weights: &[KernelSet], input: &QTensor, cfg: &HwConfig) -> Result<(QTensor, CycleReport)> {
    let (mut outputs, trace) = execute_traced(program, weights, input, cfg)?;
    let mut total = CycleReport::default();
    for t in &trace {
        total += t.report;
    }
    Ok((outputs.pop().unwrap_or_else(|| input.clone()), total))
}
