//! Workbench for a checked-C core calculus with checked, tainted and
//! unchecked pointers over a two-region heap: parser and printer, type
//! checker, small-step interpreter, compiler to an untyped region-tagged
//! target, target interpreter, and a randomized metatheory harness.

pub mod compile;
pub mod corec;
pub mod lattice;
pub mod machine;
pub mod parse;
pub mod print;
pub mod propcheck;
pub mod store;
pub mod syntax;
pub mod typecheck;
