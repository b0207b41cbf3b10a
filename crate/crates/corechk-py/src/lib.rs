//! Python bindings: parse/typecheck, evaluate, compile, run the compiled
//! target, and drive the metatheory suites from Python.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use corechk::compile::compile_program;
use corechk::corec::{eval_corec, parse_corec_program, print_corec_program};
use corechk::machine::{eval, FaultPolicy};
use corechk::parse::parse_program;
use corechk::print::{print_expr, print_program, print_word};
use corechk::propcheck::{run_property, GenConfig, Property, SuiteParams};
use corechk::typecheck::validate_program;

fn parse_checked(text: &str) -> PyResult<corechk::syntax::Program> {
    let prog = parse_program(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    validate_program(&prog).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(prog)
}

/// Typechecks a program and returns the main expression's type.
#[pyfunction]
fn typecheck(text: &str) -> PyResult<String> {
    let prog = parse_program(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let ty = validate_program(&prog).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(print_word(&ty))
}

/// Evaluates a program; returns (outcome, steps taken).
#[pyfunction]
#[pyo3(signature = (text, fuel=65536, crash_rate=0.0, fault_seed=0))]
fn run(text: &str, fuel: u64, crash_rate: f64, fault_seed: u64) -> PyResult<(String, usize)> {
    let prog = parse_checked(text)?;
    let out = eval(&prog, fuel, &FaultPolicy::new(crash_rate, fault_seed));
    Ok((out.result.describe(), out.steps.len()))
}

/// Evaluates a program and returns the step trace as
/// `(mode, rule, redex)` triples.
#[pyfunction]
#[pyo3(signature = (text, fuel=65536, crash_rate=0.0, fault_seed=0))]
fn trace(
    text: &str,
    fuel: u64,
    crash_rate: f64,
    fault_seed: u64,
) -> PyResult<Vec<(String, String, String)>> {
    let prog = parse_checked(text)?;
    let out = eval(&prog, fuel, &FaultPolicy::new(crash_rate, fault_seed));
    Ok(out
        .steps
        .iter()
        .map(|s| {
            (
                s.mode.to_string(),
                s.kind.name().to_string(),
                print_expr(&s.redex),
            )
        })
        .collect())
}

/// Compiles a program to its textual target form.
#[pyfunction]
fn compile(text: &str) -> PyResult<String> {
    let prog = parse_program(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let target = compile_program(&prog).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(print_corec_program(&target))
}

/// Runs a compiled target program; returns the outcome.
#[pyfunction]
#[pyo3(signature = (text, fuel=65536))]
fn run_compiled(text: &str, fuel: u64) -> PyResult<String> {
    let prog = parse_corec_program(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(eval_corec(&prog, fuel).result.describe())
}

/// Generates the indexed well-typed program of a seeded corpus.
#[pyfunction]
#[pyo3(signature = (seed=0, index=0, max_depth=8, unchecked_blocks=false))]
fn generate(seed: u64, index: u64, max_depth: u32, unchecked_blocks: bool) -> PyResult<String> {
    let cfg = GenConfig { seed, max_depth, unchecked_blocks, ..GenConfig::default() };
    Ok(print_program(&corechk::propcheck::gen_well_typed(&cfg, index)))
}

/// Runs the metatheory suites; returns the JSON report text.
#[pyfunction]
#[pyo3(signature = (check="all", count=100, max_depth=8, seed=0, fuel=128, crash_rate=0.5, join_budget=256))]
#[allow(clippy::too_many_arguments)]
fn fuzz(
    check: &str,
    count: u64,
    max_depth: u32,
    seed: u64,
    fuel: u64,
    crash_rate: f64,
    join_budget: u64,
) -> PyResult<String> {
    let props = Property::parse(check)
        .ok_or_else(|| PyValueError::new_err(format!("unknown check '{check}'")))?;
    let cfg = GenConfig { seed, max_depth, count, fault_rate: crash_rate, ..GenConfig::default() };
    let params = SuiteParams { fuel, join_budget };
    let reports: Vec<_> = props.into_iter().map(|p| run_property(p, &cfg, &params)).collect();
    serde_json::to_string_pretty(&reports).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn corechk_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(typecheck, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(trace, m)?)?;
    m.add_function(wrap_pyfunction!(compile, m)?)?;
    m.add_function(wrap_pyfunction!(run_compiled, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(fuzz, m)?)?;
    Ok(())
}
