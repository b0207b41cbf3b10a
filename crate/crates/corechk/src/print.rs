//! Canonical textual form of programs, expressions and types. The parser in
//! [`crate::parse`] accepts exactly this format, so `parse(print(p)) == p`.

use std::fmt::Write;

use crate::syntax::*;

pub fn print_bound(b: &Bound) -> String {
    match b {
        Bound::Lit(n) => n.to_string(),
        Bound::Off(x, n) => format!("(+ {x} {n})"),
    }
}

pub fn print_word(tau: &WordType) -> String {
    match tau {
        WordType::Int => "int".to_string(),
        WordType::Ptr(omega, m) => format!("(ptr {} {m})", print_object(omega)),
    }
}

pub fn print_object(omega: &ObjectType) -> String {
    match omega {
        ObjectType::Word(tau) => print_word(tau),
        ObjectType::Array { nt, bounds, elem } => {
            let kappa = if *nt { "nt " } else { "" };
            format!(
                "(array {}({} {}) {})",
                kappa,
                print_bound(&bounds.lo),
                print_bound(&bounds.hi),
                print_word(elem)
            )
        }
        ObjectType::Fun { binders, params, ret } => {
            let bs = binders.join(" ");
            let ps = params.iter().map(print_word).collect::<Vec<_>>().join(" ");
            format!("(fun ({bs}) ({ps}) {})", print_word(ret))
        }
    }
}

pub fn print_value(v: &Value) -> String {
    format!("(lit {} {})", v.n, print_word(&v.ty))
}

pub fn print_expr(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e);
    s
}

fn write_expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Lit(v) => {
            let _ = write!(out, "{}", print_value(v));
        }
        Expr::Var(x) => {
            let _ = write!(out, "(var {x})");
        }
        Expr::Add(a, b) => {
            out.push_str("(add ");
            write_expr(out, a);
            out.push(' ');
            write_expr(out, b);
            out.push(')');
        }
        Expr::Cast(t, e) => {
            let _ = write!(out, "(cast {} ", print_word(t));
            write_expr(out, e);
            out.push(')');
        }
        Expr::DynCast(t, e) => {
            let _ = write!(out, "(dyncast {} ", print_word(t));
            write_expr(out, e);
            out.push(')');
        }
        Expr::Ret(x, saved, e) => {
            let s = match saved {
                Some(v) => print_value(v),
                None => "none".to_string(),
            };
            let _ = write!(out, "(ret {x} {s} ");
            write_expr(out, e);
            out.push(')');
        }
        Expr::Strlen(x) => {
            let _ = write!(out, "(strlen {x})");
        }
        Expr::Malloc(m, omega) => {
            let _ = write!(out, "(malloc {m} {})", print_object(omega));
        }
        Expr::Deref(e) => {
            out.push_str("(deref ");
            write_expr(out, e);
            out.push(')');
        }
        Expr::Assign(a, b) => {
            out.push_str("(assign ");
            write_expr(out, a);
            out.push(' ');
            write_expr(out, b);
            out.push(')');
        }
        Expr::Let(x, a, b) => {
            let _ = write!(out, "(let {x} ");
            write_expr(out, a);
            out.push(' ');
            write_expr(out, b);
            out.push(')');
        }
        Expr::If(g, t, f) => {
            out.push_str("(if ");
            write_expr(out, g);
            out.push(' ');
            write_expr(out, t);
            out.push(' ');
            write_expr(out, f);
            out.push(')');
        }
        Expr::Call(callee, args) => {
            out.push_str("(call ");
            write_expr(out, callee);
            for a in args {
                out.push(' ');
                write_expr(out, a);
            }
            out.push(')');
        }
        Expr::Unchecked(xs, e) => {
            let _ = write!(out, "(unchecked ({}) ", xs.join(" "));
            write_expr(out, e);
            out.push(')');
        }
        Expr::Checked(xs, e) => {
            let _ = write!(out, "(checked ({}) ", xs.join(" "));
            write_expr(out, e);
            out.push(')');
        }
    }
}

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for ((region, addr), def) in &p.funs {
        let params = def
            .params
            .iter()
            .map(|(x, t)| format!("({x} {})", print_word(t)))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            out,
            "(fundef (addr {addr}) (region {region}) (mode {}) (ret {}) (params {params}) (body {}))",
            def.mode,
            print_word(&def.ret),
            print_expr(&def.body),
        );
    }
    if !p.heap_init.is_empty() {
        out.push_str("(heap");
        for region in [Region::C, Region::U] {
            let cells: Vec<_> = p
                .heap_init
                .iter()
                .filter(|((r, _), _)| *r == region)
                .collect();
            if cells.is_empty() {
                continue;
            }
            let _ = write!(out, " ({region}");
            for ((_, addr), v) in cells {
                let _ = write!(out, " ({addr} {})", print_value(v));
            }
            out.push(')');
        }
        out.push_str(")\n");
    }
    let _ = writeln!(out, "(main {})", print_expr(&p.main));
    out
}
