//! C toolchain driver: writes the emitted source, invokes the system C
//! compiler, and runs the produced executable, parsing its output into
//! the same shape the interpreter returns.
//!
//! Environment knobs: `TANDEM_CC` overrides the compiler binary and
//! `TANDEM_CFLAGS` appends extra flags after the defaults. The defaults
//! pin the floating-point behavior the generated code relies on:
//! wrapping signed integer arithmetic and no contraction of multiply-add
//! sequences.

use crate::emit::{emit_c, EmitConfig};
use crate::error::{BackendError, Result};
use crate::interp::{RunOutput, Trace};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;
use tandem_ir::types::IrGraph;

/// C compiler invocation settings.
#[derive(Clone, Debug)]
pub struct Toolchain {
    pub cc: String,
    pub cflags: Vec<String>,
}

impl Default for Toolchain {
    fn default() -> Self {
        let cc = std::env::var("TANDEM_CC").unwrap_or_else(|_| "gcc".to_string());
        let mut cflags: Vec<String> = ["-O2", "-fwrapv", "-ffp-contract=off", "-std=c11"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        if let Ok(extra) = std::env::var("TANDEM_CFLAGS") {
            cflags.extend(extra.split_whitespace().map(|s| s.to_string()));
        }
        Toolchain { cc, cflags }
    }
}

/// A compiled pipeline: the executable plus the directory that owns it.
/// Dropping the value removes the build directory.
pub struct CompiledProgram {
    _dir: tempfile::TempDir,
    pub exe: PathBuf,
    pub source: String,
}

impl CompiledProgram {
    pub fn run(&self, args: &[i64]) -> Result<RunOutput> {
        run_compiled(&self.exe, args)
    }
}

/// Writes `src` into `dir` and compiles it there; returns the executable
/// path.
pub fn compile_c(src: &str, dir: &Path, tc: &Toolchain, blas: bool) -> Result<PathBuf> {
    let c_path = dir.join("prog.c");
    let exe = dir.join("prog");
    std::fs::write(&c_path, src)?;
    let mut cmd = Command::new(&tc.cc);
    cmd.args(&tc.cflags)
        .arg("-pthread")
        .arg("-o")
        .arg(&exe)
        .arg(&c_path)
        .arg("-lm");
    if blas {
        cmd.arg("-lopenblas");
    }
    let out = cmd
        .output()
        .map_err(|e| BackendError::Cc(format!("cannot run {}: {}", tc.cc, e)))?;
    if !out.status.success() {
        return Err(BackendError::Cc(format!(
            "{} failed:\n{}",
            tc.cc,
            String::from_utf8_lossy(&out.stderr)
        )));
    }
    Ok(exe)
}

/// Emits and compiles a staged graph into a fresh build directory.
pub fn build(g: &IrGraph, cfg: &EmitConfig) -> Result<CompiledProgram> {
    let source = emit_c(g, cfg)?;
    let dir = tempfile::Builder::new()
        .prefix("tandem-cc")
        .tempdir()
        .map_err(|e| BackendError::Io(e.to_string()))?;
    let exe = compile_c(&source, dir.path(), &Toolchain::default(), cfg.blas)?;
    Ok(CompiledProgram {
        _dir: dir,
        exe,
        source,
    })
}

/// Runs a compiled pipeline and parses its streams: stdout carries result
/// rows; stderr carries `#counter <name> <n>` and `#phase <name> <secs>`
/// trace lines (anything else on stderr is diagnostic text).
pub fn run_compiled(exe: &Path, args: &[i64]) -> Result<RunOutput> {
    let t0 = Instant::now();
    let out = Command::new(exe)
        .args(args.iter().map(|a| a.to_string()))
        .output()
        .map_err(|e| BackendError::Exec(format!("cannot run {}: {}", exe.display(), e)))?;
    let wall = t0.elapsed().as_secs_f64();

    let stderr = String::from_utf8_lossy(&out.stderr);
    let mut trace = Trace::default();
    let mut diagnostics: Vec<&str> = Vec::new();
    for line in stderr.lines() {
        if let Some(rest) = line.strip_prefix("#counter ") {
            if let Some((name, val)) = rest.rsplit_once(' ') {
                if let Ok(v) = val.parse::<u64>() {
                    *trace.counters.entry(name.to_string()).or_insert(0) += v;
                    continue;
                }
            }
        }
        if let Some(rest) = line.strip_prefix("#phase ") {
            if let Some((name, val)) = rest.rsplit_once(' ') {
                if let Ok(v) = val.parse::<f64>() {
                    trace.phases.push((name.to_string(), v));
                    continue;
                }
            }
        }
        if !line.is_empty() {
            diagnostics.push(line);
        }
    }

    if !out.status.success() {
        let detail = if diagnostics.is_empty() {
            format!("exit status {:?}", out.status.code())
        } else {
            diagnostics.join("; ")
        };
        let detail = detail
            .strip_prefix("error: ")
            .map(|s| s.to_string())
            .unwrap_or(detail);
        return Err(BackendError::Exec(detail));
    }

    let stdout = String::from_utf8_lossy(&out.stdout);
    let rows = stdout.lines().map(|l| l.to_string()).collect();
    Ok(RunOutput {
        rows,
        trace,
        probes: Vec::new(),
        wall,
    })
}
