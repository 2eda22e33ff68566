#![allow(dead_code)]

use gomea_sr::dataio::DataMatrix;
use gomea_sr::template::{Genotype, OpKind, OperatorSet, Protection, Symbol, Template};
use rand::Rng;

/// Straightforward recursive interpreter for one data row.
pub fn reference_eval(t: &Template, ops: &OperatorSet, prot: Protection, g: &Genotype, row: &[f64]) -> f64 {
    fn go(t: &Template, ops: &OperatorSet, prot: Protection, g: &Genotype, row: &[f64], i: usize) -> f64 {
        match g.symbols[i] {
            Symbol::Feature(f) => row[f as usize],
            Symbol::Constant => g.constants[i],
            Symbol::Op(id) => {
                let first = t.arity() * i + 1;
                let a = go(t, ops, prot, g, row, first);
                let kind = ops.get(id).unwrap();
                if kind.arity() == 1 {
                    return match kind {
                        OpKind::Sin => a.sin(),
                        OpKind::Cos => a.cos(),
                        OpKind::Exp => a.exp().min(1e300),
                        OpKind::Log => (a.abs() + 1e-6).ln(),
                        OpKind::Sqrt => a.abs().sqrt(),
                        OpKind::Square => a * a,
                        _ => unreachable!(),
                    };
                }
                let b = go(t, ops, prot, g, row, first + 1);
                match kind {
                    OpKind::Add => a + b,
                    OpKind::Sub => a - b,
                    OpKind::Mul => a * b,
                    OpKind::Div => match prot {
                        Protection::Conventional if b.abs() > 1e-6 => a / b,
                        Protection::Conventional => 1.0,
                        Protection::AnalyticQuotient => a / (1.0 + b * b).sqrt(),
                    },
                    _ => unreachable!(),
                }
            }
        }
    }
    go(t, ops, prot, g, row, 0)
}

pub fn random_terminal(rng: &mut impl Rng, features: usize) -> (Symbol, f64) {
    if rng.random_bool(0.3) {
        (Symbol::Constant, rng.random_range(-5.0..5.0))
    } else {
        (Symbol::Feature(rng.random_range(0..features) as u16), 0.0)
    }
}

pub fn random_symbol(rng: &mut impl Rng, t: &Template, ops: &OperatorSet, features: usize, i: usize) -> (Symbol, f64) {
    if !t.is_leaf(i) && rng.random_bool(0.5) {
        (Symbol::Op(rng.random_range(0..ops.len()) as u8), 0.0)
    } else {
        random_terminal(rng, features)
    }
}

pub fn random_genotype(rng: &mut impl Rng, t: &Template, ops: &OperatorSet, features: usize) -> Genotype {
    let n = t.node_count();
    let mut g = Genotype::filled(n, Symbol::Constant);
    for i in 0..n {
        let (s, c) = random_symbol(rng, t, ops, features, i);
        g.symbols[i] = s;
        g.constants[i] = c;
    }
    g
}

pub fn random_data(rng: &mut impl Rng, rows: usize, features: usize) -> DataMatrix {
    let rows: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..features).map(|_| rng.random_range(-4.0..4.0)).collect())
        .collect();
    DataMatrix::from_rows(&rows).unwrap()
}

/// Equal up to relative error `tol`, with NaN matching NaN and equal
/// infinities matching.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    if a.is_nan() || b.is_nan() {
        return a.is_nan() && b.is_nan();
    }
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs())
}
