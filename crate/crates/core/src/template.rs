//! Fixed tree templates, genotypes and their interpretation.
//!
//! A genotype is a fixed-length string of symbols laid over a full n-ary
//! tree. Positions are numbered breadth-first: the root is 0 and the
//! children of node `i` are `arity*i + 1 ..= arity*i + arity`. Only the
//! positions reachable from the root through operator arguments are
//! *active*; everything else is an intron and never influences the output.

use std::fmt::{self, Write as _};
use std::ops::Range;

use thiserror::Error;

use crate::dataio::DataMatrix;

/// Largest template accepted by [`Template::new`].
pub const DEFAULT_NODE_CAP: usize = 1 << 15;

/// Divisors with magnitude at or below this are protected.
pub const DIV_GUARD: f64 = 1e-6;
/// Offset added inside the protected logarithm.
pub const LOG_GUARD: f64 = 1e-6;
/// Saturation bound for `exp`.
pub const EXP_LIMIT: f64 = 1e300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("template height must be at least 1, got {0}")]
    InvalidHeight(usize),
    #[error("template arity must be at least 1, got {0}")]
    InvalidArity(usize),
    #[error("template of height {height} and arity {arity} exceeds the cap of {cap} nodes")]
    TooLarge {
        height: usize,
        arity: usize,
        cap: usize,
    },
    #[error("operator set needs arity {needed} but the template only has {available}")]
    ArityTooSmall { needed: usize, available: usize },
    #[error("genotype has {got} positions, template has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("operator at position {position} needs child {child}, which is outside the template")]
    MissingChild { position: usize, child: usize },
    #[error("position {position} holds unknown operator id {op}")]
    UnknownOperator { position: usize, op: u8 },
    #[error("position {position} uses feature x{feature} but the data has {available} features")]
    FeatureOutOfRange {
        position: usize,
        feature: usize,
        available: usize,
    },
}

/// The primitive functions available to internal nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Square,
}

impl OpKind {
    pub fn arity(self) -> usize {
        match self {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "+",
            OpKind::Sub => "-",
            OpKind::Mul => "*",
            OpKind::Div => "/",
            OpKind::Sin => "sin",
            OpKind::Cos => "cos",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Sqrt => "sqrt",
            OpKind::Square => "sqr",
        }
    }

    #[inline]
    pub fn apply_unary(self, x: f64, protection: Protection) -> f64 {
        let _ = protection;
        match self {
            OpKind::Sin => x.sin(),
            OpKind::Cos => x.cos(),
            OpKind::Exp => x.exp().clamp(-EXP_LIMIT, EXP_LIMIT),
            OpKind::Log => (x.abs() + LOG_GUARD).ln(),
            OpKind::Sqrt => x.abs().sqrt(),
            OpKind::Square => x * x,
            _ => unreachable!("{} is not unary", self.name()),
        }
    }

    #[inline]
    pub fn apply_binary(self, a: f64, b: f64, protection: Protection) -> f64 {
        match self {
            OpKind::Add => a + b,
            OpKind::Sub => a - b,
            OpKind::Mul => a * b,
            OpKind::Div => protection.divide(a, b),
            _ => unreachable!("{} is not binary", self.name()),
        }
    }
}

/// How division behaves near zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Protection {
    /// `a / b` when `|b| > 1e-6`, otherwise `1.0`.
    #[default]
    Conventional,
    /// `a / sqrt(1 + b^2)`, smooth everywhere.
    AnalyticQuotient,
}

impl Protection {
    #[inline]
    pub fn divide(self, a: f64, b: f64) -> f64 {
        match self {
            Protection::Conventional => {
                if b.abs() > DIV_GUARD {
                    a / b
                } else {
                    1.0
                }
            }
            Protection::AnalyticQuotient => a / (1.0 + b * b).sqrt(),
        }
    }
}

/// Operators addressed by dense ids `0..len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperatorSet {
    ops: Vec<OpKind>,
}

impl OperatorSet {
    /// `{+, -, *, /, sin}`.
    pub fn base() -> Self {
        use OpKind::*;
        Self::new(vec![Add, Sub, Mul, Div, Sin])
    }

    /// The base set plus `{cos, exp, log, sqrt, square}`.
    pub fn extended() -> Self {
        use OpKind::*;
        Self::new(vec![Add, Sub, Mul, Div, Sin, Cos, Exp, Log, Sqrt, Square])
    }

    pub fn new(ops: Vec<OpKind>) -> Self {
        assert!(!ops.is_empty(), "operator set must not be empty");
        assert!(ops.len() <= u8::MAX as usize, "too many operators");
        Self { ops }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn get(&self, id: u8) -> Option<OpKind> {
        self.ops.get(id as usize).copied()
    }

    pub fn id_of(&self, kind: OpKind) -> Option<u8> {
        self.ops.iter().position(|&k| k == kind).map(|i| i as u8)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u8, OpKind)> + '_ {
        self.ops.iter().enumerate().map(|(i, &k)| (i as u8, k))
    }

    pub fn max_arity(&self) -> usize {
        self.ops.iter().map(|k| k.arity()).max().unwrap_or(0)
    }
}

/// A full tree of fixed height and branching factor.
///
/// `height` counts edges: a height-2 binary template has 7 nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    height: usize,
    arity: usize,
    depth: Vec<u32>,
}

impl Template {
    pub fn new(height: usize, arity: usize) -> Result<Self, TemplateError> {
        Self::with_cap(height, arity, DEFAULT_NODE_CAP)
    }

    pub fn with_cap(height: usize, arity: usize, cap: usize) -> Result<Self, TemplateError> {
        if height < 1 {
            return Err(TemplateError::InvalidHeight(height));
        }
        if arity < 1 {
            return Err(TemplateError::InvalidArity(arity));
        }
        let too_large = TemplateError::TooLarge { height, arity, cap };
        let mut count = 0usize;
        let mut level = 1usize;
        for d in 0..=height {
            count = count.checked_add(level).ok_or_else(|| too_large.clone())?;
            if count > cap {
                return Err(too_large);
            }
            if d < height {
                level = level.checked_mul(arity).ok_or_else(|| too_large.clone())?;
            }
        }
        let mut depth = Vec::with_capacity(count);
        let mut level = 1usize;
        for d in 0..=height {
            depth.extend(std::iter::repeat_n(d as u32, level));
            level *= arity;
        }
        debug_assert_eq!(depth.len(), count);
        Ok(Self {
            height,
            arity,
            depth,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn node_count(&self) -> usize {
        self.depth.len()
    }

    pub fn depth(&self, i: usize) -> usize {
        self.depth[i] as usize
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.depth(i) == self.height
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        (i > 0).then(|| (i - 1) / self.arity)
    }

    /// Position of `i` among its siblings, 0 for the leftmost child.
    pub fn child_ordinal(&self, i: usize) -> usize {
        debug_assert!(i > 0);
        (i - 1) % self.arity
    }

    pub fn children(&self, i: usize) -> Range<usize> {
        if self.is_leaf(i) {
            0..0
        } else {
            let first = self.arity * i + 1;
            first..first + self.arity
        }
    }

    /// Nearest common ancestor of `i` and `j` (either may be the ancestor).
    pub fn common_ancestor(&self, mut i: usize, mut j: usize) -> usize {
        while i != j {
            if i > j {
                i = (i - 1) / self.arity;
            } else {
                j = (j - 1) / self.arity;
            }
        }
        i
    }

    /// Number of edges on the path between `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> usize {
        let lca = self.common_ancestor(i, j);
        self.depth(i) + self.depth(j) - 2 * self.depth(lca)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    Op(u8),
    Feature(u16),
    /// The value lives in the genotype's constant slot at the same position.
    Constant,
}

impl Symbol {
    pub fn is_op(self) -> bool {
        matches!(self, Symbol::Op(_))
    }
}

/// One candidate solution: a symbol and a constant slot per template node.
#[derive(Debug, Clone, PartialEq)]
pub struct Genotype {
    pub symbols: Vec<Symbol>,
    pub constants: Vec<f64>,
}

impl Genotype {
    pub fn new(symbols: Vec<Symbol>, constants: Vec<f64>) -> Self {
        assert_eq!(symbols.len(), constants.len());
        Self { symbols, constants }
    }

    /// A genotype whose every slot is `symbol` with zeroed constants.
    pub fn filled(len: usize, symbol: Symbol) -> Self {
        Self::new(vec![symbol; len], vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Copies symbols and constants at `positions` from `donor`.
    pub fn copy_from(&mut self, donor: &Genotype, positions: &[usize]) {
        for &p in positions {
            self.symbols[p] = donor.symbols[p];
            self.constants[p] = donor.constants[p];
        }
    }

    /// Whether position `p` carries the same gene in both genotypes.
    /// Constant slots only matter where the symbol is a constant.
    #[inline]
    pub fn same_gene(&self, other: &Genotype, p: usize) -> bool {
        self.symbols[p] == other.symbols[p]
            && (self.symbols[p] != Symbol::Constant
                || self.constants[p].to_bits() == other.constants[p].to_bits())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActivityMask(Vec<bool>);

impl ActivityMask {
    pub fn is_active(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&a| a).count()
    }
}

/// Canonical encoding of the active part of a genotype.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Signature(Vec<u64>);

impl Signature {
    pub fn as_words(&self) -> &[u64] {
        &self.0
    }
}

/// Template, operators and protection policy: everything needed to
/// interpret a genotype.
#[derive(Debug, Clone)]
pub struct Representation {
    pub template: Template,
    pub ops: OperatorSet,
    pub protection: Protection,
}

impl Representation {
    pub fn new(template: Template, ops: OperatorSet) -> Result<Self, TemplateError> {
        if ops.max_arity() > template.arity() {
            return Err(TemplateError::ArityTooSmall {
                needed: ops.max_arity(),
                available: template.arity(),
            });
        }
        Ok(Self {
            template,
            ops,
            protection: Protection::default(),
        })
    }

    pub fn with_protection(mut self, protection: Protection) -> Self {
        self.protection = protection;
        self
    }

    pub fn len(&self) -> usize {
        self.template.node_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn op_arity(&self, position: usize, id: u8) -> Result<usize, TemplateError> {
        self.ops
            .get(id)
            .map(OpKind::arity)
            .ok_or(TemplateError::UnknownOperator { position, op: id })
    }

    fn check_len(&self, g: &Genotype) -> Result<(), TemplateError> {
        if g.len() != self.len() {
            return Err(TemplateError::LengthMismatch {
                expected: self.len(),
                got: g.len(),
            });
        }
        Ok(())
    }

    /// Marks the positions that take part in the expression.
    pub fn activity(&self, g: &Genotype) -> Result<ActivityMask, TemplateError> {
        self.check_len(g)?;
        let t = &self.template;
        let mut active = vec![false; t.node_count()];
        active[0] = true;
        for i in 1..t.node_count() {
            let p = (i - 1) / t.arity();
            if !active[p] {
                continue;
            }
            if let Symbol::Op(id) = g.symbols[p] {
                active[i] = t.child_ordinal(i) < self.op_arity(p, id)?;
            }
        }
        Ok(ActivityMask(active))
    }

    pub fn signature(&self, g: &Genotype) -> Result<Signature, TemplateError> {
        let mask = self.activity(g)?;
        Ok(self.signature_with(g, &mask))
    }

    pub fn signature_with(&self, g: &Genotype, mask: &ActivityMask) -> Signature {
        let mut words = Vec::with_capacity(2 * mask.count());
        for (i, _) in mask.0.iter().enumerate().filter(|(_, &a)| a) {
            words.push(i as u64);
            match g.symbols[i] {
                Symbol::Op(id) => words.push((1 << 32) | id as u64),
                Symbol::Feature(f) => words.push((2 << 32) | f as u64),
                Symbol::Constant => {
                    words.push(3 << 32);
                    words.push(g.constants[i].to_bits());
                }
            }
        }
        Signature(words)
    }

    /// Predictions of `g` for every row of `data`.
    pub fn evaluate(&self, g: &Genotype, data: &DataMatrix) -> Result<Vec<f64>, TemplateError> {
        let mut scratch = Vec::new();
        self.evaluate_with(g, data, &mut scratch)
    }

    /// Like [`evaluate`](Self::evaluate) but reuses `scratch` for the
    /// per-node buffers.
    pub fn evaluate_with(
        &self,
        g: &Genotype,
        data: &DataMatrix,
        scratch: &mut Vec<f64>,
    ) -> Result<Vec<f64>, TemplateError> {
        let mask = self.activity(g)?;
        self.evaluate_masked(g, &mask, data, scratch)
    }

    pub fn evaluate_masked(
        &self,
        g: &Genotype,
        mask: &ActivityMask,
        data: &DataMatrix,
        scratch: &mut Vec<f64>,
    ) -> Result<Vec<f64>, TemplateError> {
        let t = &self.template;
        let n = data.rows();
        let active: Vec<usize> = (0..t.node_count()).filter(|&i| mask.is_active(i)).collect();
        let mut slot = vec![usize::MAX; t.node_count()];
        for (s, &i) in active.iter().enumerate() {
            slot[i] = s;
        }
        scratch.clear();
        scratch.resize(active.len() * n, 0.0);

        // Children have larger indices than their parent and therefore
        // larger slots, so walking backwards fills arguments first.
        for (s, &i) in active.iter().enumerate().rev() {
            let (head, tail) = scratch.split_at_mut((s + 1) * n);
            let out = &mut head[s * n..];
            match g.symbols[i] {
                Symbol::Feature(f) => {
                    let f = f as usize;
                    if f >= data.features() {
                        return Err(TemplateError::FeatureOutOfRange {
                            position: i,
                            feature: f,
                            available: data.features(),
                        });
                    }
                    out.copy_from_slice(data.column(f));
                }
                Symbol::Constant => out.fill(g.constants[i]),
                Symbol::Op(id) => {
                    let kind = self
                        .ops
                        .get(id)
                        .ok_or(TemplateError::UnknownOperator { position: i, op: id })?;
                    let first = t.arity() * i + 1;
                    let arg = |k: usize| -> Result<&[f64], TemplateError> {
                        let c = first + k;
                        if c >= t.node_count() || slot[c] == usize::MAX {
                            return Err(TemplateError::MissingChild { position: i, child: c });
                        }
                        let off = (slot[c] - s - 1) * n;
                        Ok(&tail[off..off + n])
                    };
                    let p = self.protection;
                    if kind.arity() == 1 {
                        let a = arg(0)?;
                        for (o, &x) in out.iter_mut().zip(a) {
                            *o = kind.apply_unary(x, p);
                        }
                    } else {
                        let (a, b) = (arg(0)?, arg(1)?);
                        match kind {
                            OpKind::Add => out.iter_mut().zip(a.iter().zip(b)).for_each(|(o, (&x, &y))| *o = x + y),
                            OpKind::Sub => out.iter_mut().zip(a.iter().zip(b)).for_each(|(o, (&x, &y))| *o = x - y),
                            OpKind::Mul => out.iter_mut().zip(a.iter().zip(b)).for_each(|(o, (&x, &y))| *o = x * y),
                            _ => out
                                .iter_mut()
                                .zip(a.iter().zip(b))
                                .for_each(|(o, (&x, &y))| *o = kind.apply_binary(x, y, p)),
                        }
                    }
                }
            }
        }
        Ok(scratch[..n].to_vec())
    }

    /// Parenthesised infix form of the active expression.
    pub fn to_infix(&self, g: &Genotype) -> String {
        let mut s = String::new();
        self.write_infix(g, 0, &mut s).expect("writing to a String cannot fail");
        s
    }

    fn write_infix(&self, g: &Genotype, i: usize, out: &mut String) -> fmt::Result {
        match g.symbols[i] {
            Symbol::Feature(f) => write!(out, "x{f}"),
            Symbol::Constant => write!(out, "{}", g.constants[i]),
            Symbol::Op(id) => {
                let Some(kind) = self.ops.get(id) else {
                    return write!(out, "?op{id}");
                };
                let first = self.template.arity() * i + 1;
                if first >= self.len() {
                    return write!(out, "{}(?)", kind.name());
                }
                if kind.arity() == 2 {
                    out.push('(');
                    self.write_infix(g, first, out)?;
                    write!(out, " {} ", kind.name())?;
                    self.write_infix(g, first + 1, out)?;
                    out.push(')');
                } else {
                    write!(out, "{}(", kind.name())?;
                    self.write_infix(g, first, out)?;
                    out.push(')');
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(height: usize) -> Representation {
        Representation::new(Template::new(height, 2).unwrap(), OperatorSet::extended()).unwrap()
    }

    fn op(r: &Representation, k: OpKind) -> Symbol {
        Symbol::Op(r.ops.id_of(k).unwrap())
    }

    /// `sin(x0) + sqrt(x1)` on a height-2 template.
    fn fig1(r: &Representation, c4: f64, c6: f64) -> Genotype {
        let s = vec![
            op(r, OpKind::Add),
            op(r, OpKind::Sin),
            op(r, OpKind::Sqrt),
            Symbol::Feature(0),
            Symbol::Constant,
            Symbol::Feature(1),
            Symbol::Constant,
        ];
        let mut c = vec![0.0; 7];
        c[4] = c4;
        c[6] = c6;
        Genotype::new(s, c)
    }

    #[test]
    fn template_shapes() {
        let t = Template::new(2, 2).unwrap();
        assert_eq!(t.node_count(), 7);
        assert_eq!(t.children(0), 1..3);
        assert_eq!(t.parent(6), Some(2));
        assert_eq!(t.parent(0), None);
        assert!(t.children(3).is_empty());
        assert_eq!(Template::new(1, 2).unwrap().node_count(), 3);
        assert_eq!(Template::new(6, 2).unwrap().node_count(), 127);
        assert_eq!(Template::new(4, 2).unwrap().node_count(), 31);
        assert_eq!(Template::new(3, 1).unwrap().node_count(), 4);
        assert_eq!(Template::new(2, 3).unwrap().node_count(), 13);
        assert_eq!(Template::new(2, 3).unwrap().children(1), 4..7);
    }

    #[test]
    fn template_rejects_bad_sizes() {
        assert_eq!(Template::new(0, 2), Err(TemplateError::InvalidHeight(0)));
        assert_eq!(Template::new(3, 0), Err(TemplateError::InvalidArity(0)));
        assert!(matches!(Template::new(15, 2), Err(TemplateError::TooLarge { .. })));
        assert!(Template::new(14, 2).is_ok());
        assert!(matches!(Template::new(200, 3), Err(TemplateError::TooLarge { .. })));
        assert!(matches!(Template::with_cap(3, 2, 14), Err(TemplateError::TooLarge { .. })));
    }

    #[test]
    fn binary_node_count_formula() {
        for h in 1..=12 {
            assert_eq!(Template::new(h, 2).unwrap().node_count(), (1 << (h + 1)) - 1);
        }
    }

    #[test]
    fn distances() {
        let t = Template::new(2, 2).unwrap();
        assert_eq!(t.distance(0, 2), 1);
        assert_eq!(t.distance(3, 4), 2);
        assert_eq!(t.distance(3, 6), 4);
        assert_eq!(t.distance(5, 5), 0);
        assert_eq!(t.common_ancestor(3, 1), 1);
    }

    #[test]
    fn fig1_activity_and_value() {
        let r = binary(2);
        let g = fig1(&r, 7.0, -3.0);
        let mask = r.activity(&g).unwrap();
        assert_eq!(mask.as_slice(), &[true, true, true, true, false, true, false]);
        let data = DataMatrix::from_rows(&[vec![0.0, 4.0], vec![1.0, 9.0]]).unwrap();
        let y = r.evaluate(&g, &data).unwrap();
        assert_eq!(y[0], 2.0);
        assert_eq!(y[1], 1f64.sin() + 3.0);
        assert_eq!(r.to_infix(&g), "(sin(x0) + sqrt(x1))");
    }

    #[test]
    fn terminal_root_only_root_active() {
        let r = binary(3);
        let mut g = Genotype::filled(r.len(), op(&r, OpKind::Add));
        for i in 0..r.len() {
            if r.template.is_leaf(i) {
                g.symbols[i] = Symbol::Feature(0);
            }
        }
        assert_eq!(r.activity(&g).unwrap().count(), r.len());
        g.symbols[0] = Symbol::Feature(2);
        let mask = r.activity(&g).unwrap();
        assert_eq!(mask.count(), 1);
        assert!(mask.is_active(0));
        assert_eq!(r.to_infix(&g), "x2");
    }

    #[test]
    fn constant_root() {
        let r = binary(2);
        let mut g = Genotype::filled(r.len(), Symbol::Feature(0));
        g.symbols[0] = Symbol::Constant;
        g.constants[0] = 3.5;
        let data = DataMatrix::from_rows(&[vec![1.0], vec![2.0], vec![-5.0]]).unwrap();
        assert_eq!(r.evaluate(&g, &data).unwrap(), vec![3.5; 3]);
        g.constants[0] = 1.25;
        assert_eq!(r.to_infix(&g), "1.25");
    }

    #[test]
    fn protected_division_by_zero() {
        assert_eq!(Protection::Conventional.divide(1.0, 0.0), 1.0);
        assert_eq!(Protection::Conventional.divide(1.0, 1e-6), 1.0);
        assert_eq!(Protection::Conventional.divide(3.0, 2.0), 1.5);
        assert_eq!(Protection::AnalyticQuotient.divide(1.0, 0.0), 1.0);
        assert_eq!(Protection::AnalyticQuotient.divide(3.0, 0.0), 3.0);

        let r = binary(1);
        let g = Genotype::new(
            vec![op(&r, OpKind::Div), Symbol::Constant, Symbol::Constant],
            vec![0.0, 1.0, 0.0],
        );
        let data = DataMatrix::from_rows(&[vec![0.0]]).unwrap();
        assert_eq!(r.evaluate(&g, &data).unwrap(), vec![1.0]);
    }

    #[test]
    fn protected_unaries() {
        let p = Protection::Conventional;
        assert_eq!(OpKind::Log.apply_unary(0.0, p), LOG_GUARD.ln());
        assert_eq!(OpKind::Log.apply_unary(-1.0, p), (1.0 + LOG_GUARD).ln());
        assert_eq!(OpKind::Sqrt.apply_unary(-4.0, p), 2.0);
        assert_eq!(OpKind::Exp.apply_unary(1e6, p), EXP_LIMIT);
        assert_eq!(OpKind::Square.apply_unary(-3.0, p), 9.0);
    }

    #[test]
    fn signatures_ignore_introns() {
        let r = binary(2);
        let a = fig1(&r, 1.0, 2.0);
        let b = fig1(&r, 100.0, -2.0);
        assert_eq!(r.signature(&a).unwrap(), r.signature(&b).unwrap());

        let mut c = a.clone();
        c.symbols[5] = Symbol::Feature(0);
        assert_ne!(r.signature(&a).unwrap(), r.signature(&c).unwrap());

        let mut d = a.clone();
        d.symbols[3] = Symbol::Constant;
        d.constants[3] = 0.5;
        let mut e = d.clone();
        e.constants[3] = 0.25;
        assert_ne!(r.signature(&d).unwrap(), r.signature(&e).unwrap());
    }

    #[test]
    fn malformed_genotypes() {
        let r = binary(1);
        let mut g = Genotype::filled(3, op(&r, OpKind::Add));
        let data = DataMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(
            r.evaluate(&g, &data),
            Err(TemplateError::MissingChild { position: 2, child: 5 })
        ));
        g.symbols[1] = Symbol::Feature(3);
        g.symbols[2] = Symbol::Feature(0);
        assert!(matches!(
            r.evaluate(&g, &data),
            Err(TemplateError::FeatureOutOfRange { feature: 3, .. })
        ));
        assert!(matches!(
            r.activity(&Genotype::filled(5, Symbol::Constant)),
            Err(TemplateError::LengthMismatch { expected: 3, got: 5 })
        ));
        g.symbols[0] = Symbol::Op(42);
        assert!(matches!(r.activity(&g), Err(TemplateError::UnknownOperator { op: 42, .. })));
    }

    #[test]
    fn operator_sets() {
        let base = OperatorSet::base();
        let names: Vec<_> = base.iter().map(|(_, k)| k.name()).collect();
        assert_eq!(names, ["+", "-", "*", "/", "sin"]);
        let arities: Vec<_> = base.iter().map(|(_, k)| k.arity()).collect();
        assert_eq!(arities, [2, 2, 2, 2, 1]);
        let ext = OperatorSet::extended();
        assert_eq!(ext.len(), 10);
        assert!(ext.iter().skip(5).all(|(_, k)| k.arity() == 1));
        assert_eq!(ext.max_arity(), 2);
        assert!(Representation::new(Template::new(3, 1).unwrap(), base).is_err());
    }
}
