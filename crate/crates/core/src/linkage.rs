//! Linkage learning: pairwise similarity measures between genotype
//! positions and the linkage-tree family of subsets built from them.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::template::{ActivityMask, Genotype, Symbol, Template};

/// Number of bins used to discretize constants.
pub const CONSTANT_BINS: usize = 25;
/// Lower clamp applied to both terms of the adjusted-MI ratio.
pub const ADJUSTED_MI_CLAMP: f64 = 1e-12;
/// Similarities are compared after rounding to this many decimals.
pub const TIE_DECIMALS: i32 = 12;
/// Token standing for an intron in the masked view.
pub const MASK_TOKEN: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinkageError {
    #[error("masked MI cannot be bias-adjusted: positions inactive in the whole initial population have zero MI")]
    MaskedAdjusted,
    #[error("only MI can be bias-adjusted, not {0}")]
    NotAdjustable(MeasureKind),
    #[error("adjusted MI needs a baseline captured from the initial population")]
    MissingBaseline,
    #[error("unknown linkage measure '{0}'")]
    UnknownMeasure(String),
    #[error("population is empty")]
    EmptyPopulation,
}

/// Symmetric `n x n` matrix of pairwise linkage strengths.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; n * n],
        }
    }

    /// Builds a matrix from `f(i, j)` evaluated for `i <= j` and mirrored.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n + j] = v;
        self.values[j * self.n + i] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Entries above the diagonal in row-major order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * self.n.saturating_sub(1) / 2);
        for i in 0..self.n {
            for j in i + 1..self.n {
                out.push(self.get(i, j));
            }
        }
        out
    }

    /// Element-wise mean; `None` when `mats` is empty or sizes differ.
    pub fn mean<'a>(mats: impl IntoIterator<Item = &'a SimilarityMatrix>) -> Option<Self> {
        let mut iter = mats.into_iter();
        let first = iter.next()?;
        let mut acc = first.values.clone();
        let mut count = 1usize;
        for m in iter {
            if m.n != first.n {
                return None;
            }
            acc.iter_mut().zip(&m.values).for_each(|(a, v)| *a += v);
            count += 1;
        }
        acc.iter_mut().for_each(|a| *a /= count as f64);
        Some(Self {
            n: first.n,
            values: acc,
        })
    }

    /// Writes the matrix as CSV: a header `node,0,1,..` then one row per
    /// variable prefixed with its index.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        write!(w, "node")?;
        for j in 0..self.n {
            write!(w, ",{j}")?;
        }
        writeln!(w)?;
        for i in 0..self.n {
            write!(w, "{i}")?;
            for j in 0..self.n {
                write!(w, ",{}", self.get(i, j))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}

/// Family of subsets used as crossover masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fos {
    subsets: Vec<Vec<usize>>,
}

impl Fos {
    pub fn new(subsets: Vec<Vec<usize>>) -> Self {
        Self { subsets }
    }

    /// One singleton per variable.
    pub fn univariate(n: usize) -> Self {
        Self::new((0..n).map(|i| vec![i]).collect())
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.subsets.iter().map(Vec::as_slice)
    }

    /// Every pair of subsets is either disjoint or nested.
    pub fn is_laminar(&self) -> bool {
        let sets: Vec<std::collections::BTreeSet<usize>> =
            self.subsets.iter().map(|s| s.iter().copied().collect()).collect();
        sets.iter().enumerate().all(|(a, sa)| {
            sets[a + 1..].iter().all(|sb| {
                sa.is_disjoint(sb) || sa.is_subset(sb) || sb.is_subset(sa)
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BinningMode {
    #[default]
    EqualWidth,
    EqualFrequency,
}

/// How constants are mapped to discrete tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BinningRule {
    pub bins: usize,
    pub mode: BinningMode,
}

impl Default for BinningRule {
    fn default() -> Self {
        Self {
            bins: CONSTANT_BINS,
            mode: BinningMode::EqualWidth,
        }
    }
}

/// Bin edges fitted on the constants of one population.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedBins {
    bins: usize,
    lo: f64,
    hi: f64,
    edges: Vec<f64>,
    mode: BinningMode,
}

impl BinningRule {
    pub fn fit(&self, constants: &[f64]) -> FittedBins {
        let bins = self.bins.max(1);
        let lo = constants.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = constants.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let edges = match self.mode {
            BinningMode::EqualWidth => Vec::new(),
            BinningMode::EqualFrequency => {
                let mut sorted = constants.to_vec();
                sorted.sort_by(f64::total_cmp);
                (1..bins)
                    .filter_map(|k| sorted.get(k * sorted.len() / bins).copied())
                    .collect()
            }
        };
        FittedBins {
            bins,
            lo,
            hi,
            edges,
            mode: self.mode,
        }
    }
}

impl FittedBins {
    pub fn bin(&self, c: f64) -> u32 {
        match self.mode {
            BinningMode::EqualWidth => {
                if !(self.hi > self.lo) {
                    return 0;
                }
                let b = ((c - self.lo) / (self.hi - self.lo) * self.bins as f64).floor();
                b.clamp(0.0, (self.bins - 1) as f64) as u32
            }
            BinningMode::EqualFrequency => self.edges.partition_point(|&e| e <= c) as u32,
        }
    }
}

/// The population as an `N x L` table of discrete tokens (column-major).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscretePopulationView {
    rows: usize,
    cols: usize,
    tokens: Vec<u32>,
}

impl DiscretePopulationView {
    pub fn from_columns(columns: Vec<Vec<u32>>) -> Self {
        let rows = columns.first().map_or(0, Vec::len);
        assert!(columns.iter().all(|c| c.len() == rows), "ragged columns");
        Self {
            rows,
            cols: columns.len(),
            tokens: columns.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, i: usize) -> &[u32] {
        &self.tokens[i * self.rows..(i + 1) * self.rows]
    }
}

fn symbol_token(sym: Symbol, constant: f64, bins: &FittedBins) -> u32 {
    match sym {
        Symbol::Op(id) => (1 << 24) | id as u32,
        Symbol::Feature(f) => (2 << 24) | f as u32,
        Symbol::Constant => (3 << 24) | bins.bin(constant),
    }
}

/// Tokenizes a population. With `masks`, inactive positions become
/// [`MASK_TOKEN`].
pub fn discretize(
    pop: &[Genotype],
    rule: &BinningRule,
    masks: Option<&[ActivityMask]>,
) -> DiscretePopulationView {
    let cols = pop.first().map_or(0, Genotype::len);
    let constants: Vec<f64> = pop
        .iter()
        .flat_map(|g| {
            g.symbols
                .iter()
                .zip(&g.constants)
                .filter(|(s, _)| **s == Symbol::Constant)
                .map(|(_, &c)| c)
        })
        .collect();
    let bins = rule.fit(&constants);
    let columns = (0..cols)
        .map(|i| {
            pop.iter()
                .enumerate()
                .map(|(r, g)| match masks {
                    Some(m) if !m[r].is_active(i) => MASK_TOKEN,
                    _ => symbol_token(g.symbols[i], g.constants[i], &bins),
                })
                .collect()
        })
        .collect();
    DiscretePopulationView::from_columns(columns)
}

/// Column recoded to dense ids `0..k`.
struct DenseColumn {
    ids: Vec<u32>,
    k: usize,
}

fn densify(col: &[u32]) -> DenseColumn {
    let mut uniq = col.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let ids = col
        .iter()
        .map(|t| uniq.binary_search(t).expect("token present") as u32)
        .collect();
    DenseColumn { ids, k: uniq.len() }
}

fn entropy_of_counts(counts: &[u32], n: usize) -> f64 {
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn column_entropy(c: &DenseColumn) -> f64 {
    let mut counts = vec![0u32; c.k];
    c.ids.iter().for_each(|&t| counts[t as usize] += 1);
    entropy_of_counts(&counts, c.ids.len())
}

fn joint_entropy_dense(a: &DenseColumn, b: &DenseColumn, counts: &mut Vec<u32>) -> f64 {
    counts.clear();
    counts.resize(a.k * b.k, 0);
    for (&x, &y) in a.ids.iter().zip(&b.ids) {
        counts[x as usize * b.k + y as usize] += 1;
    }
    entropy_of_counts(counts, a.ids.len())
}

/// Shannon entropy in bits of column `i`.
pub fn entropy(view: &DiscretePopulationView, i: usize) -> f64 {
    column_entropy(&densify(view.column(i)))
}

/// Joint entropy in bits of columns `i` and `j`.
pub fn joint_entropy(view: &DiscretePopulationView, i: usize, j: usize) -> f64 {
    joint_entropy_dense(&densify(view.column(i)), &densify(view.column(j)), &mut Vec::new())
}

/// `H(i) + H(j) - H(i, j)`, clamped at zero.
pub fn mutual_information(view: &DiscretePopulationView, i: usize, j: usize) -> f64 {
    let (a, b) = (densify(view.column(i)), densify(view.column(j)));
    let mi = column_entropy(&a) + column_entropy(&b) - joint_entropy_dense(&a, &b, &mut Vec::new());
    mi.max(0.0)
}

/// Pairwise MI of all columns with a zero diagonal.
pub fn mi_matrix(view: &DiscretePopulationView) -> SimilarityMatrix {
    let cols: Vec<DenseColumn> = (0..view.cols()).map(|i| densify(view.column(i))).collect();
    let h: Vec<f64> = cols.iter().map(column_entropy).collect();
    let mut counts = Vec::new();
    let mut m = SimilarityMatrix::zeros(view.cols());
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            let mi = h[i] + h[j] - joint_entropy_dense(&cols[i], &cols[j], &mut counts);
            m.set(i, j, mi.max(0.0));
        }
    }
    m
}

pub fn measure_mi(pop: &[Genotype], rule: &BinningRule) -> SimilarityMatrix {
    mi_matrix(&discretize(pop, rule, None))
}

/// MI computed with introns replaced by a shared mask token.
pub fn measure_mi_masked(pop: &[Genotype], rule: &BinningRule, masks: &[ActivityMask]) -> SimilarityMatrix {
    mi_matrix(&discretize(pop, rule, Some(masks)))
}

/// MI divided element-wise by the MI of the initial population; both terms
/// are clamped below by [`ADJUSTED_MI_CLAMP`].
pub fn measure_mi_adjusted(
    pop: &[Genotype],
    rule: &BinningRule,
    baseline: &SimilarityMatrix,
) -> SimilarityMatrix {
    adjust(&measure_mi(pop, rule), baseline)
}

pub fn adjust(mi: &SimilarityMatrix, baseline: &SimilarityMatrix) -> SimilarityMatrix {
    assert_eq!(mi.len(), baseline.len(), "baseline size mismatch");
    SimilarityMatrix::from_fn(mi.len(), |i, j| {
        if i == j {
            0.0
        } else {
            mi.get(i, j).max(ADJUSTED_MI_CLAMP) / baseline.get(i, j).max(ADJUSTED_MI_CLAMP)
        }
    })
}

/// Similarity from template path length: `1 - d(i,j) / (1 + max d)`.
pub fn measure_node_proximity(t: &Template) -> SimilarityMatrix {
    let n = t.node_count();
    let max_d = 2 * t.height();
    let denom = (1 + max_d) as f64;
    // Written as (denom - d) / denom so that the entries are correctly
    // rounded quotients of small integers.
    SimilarityMatrix::from_fn(n, |i, j| (1 + max_d - t.distance(i, j)) as f64 / denom)
}

/// Number of template subfunctions (a node plus its subtree) holding both
/// positions, i.e. the depth of their common ancestor plus one.
pub fn measure_subfunction_count(t: &Template) -> SimilarityMatrix {
    SimilarityMatrix::from_fn(t.node_count(), |i, j| (t.depth(t.common_ancestor(i, j)) + 1) as f64)
}

/// Independent `U(0, 1)` entries above the diagonal, mirrored.
pub fn measure_random(n: usize, rng: &mut impl Rng) -> SimilarityMatrix {
    SimilarityMatrix::from_fn(n, |i, j| if i == j { 0.0 } else { rng.random::<f64>() })
}

fn tie_key(v: f64) -> f64 {
    (v * 10f64.powi(TIE_DECIMALS)).round()
}

/// UPGMA linkage tree with uniformly random tie-breaking.
pub fn build_linkage_tree(s: &SimilarityMatrix, rng: &mut impl Rng) -> Fos {
    build_linkage_tree_with(s, &mut |n| rng.random_range(0..n))
}

/// UPGMA linkage tree where `choose(k)` picks one of `k` tied merges.
///
/// The result lists the singletons first, then every merged cluster in
/// merge order; the final cluster holding all variables is left out.
pub fn build_linkage_tree_with(s: &SimilarityMatrix, choose: &mut dyn FnMut(usize) -> usize) -> Fos {
    let n = s.len();
    let mut subsets: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    if n < 2 {
        return Fos::new(subsets);
    }
    let mut members: Vec<Vec<usize>> = subsets.clone();
    let mut sim: Vec<f64> = s.values().to_vec();
    let mut alive: Vec<usize> = (0..n).collect();
    let mut ties: Vec<(usize, usize)> = Vec::new();

    while alive.len() > 1 {
        let mut best = f64::NEG_INFINITY;
        ties.clear();
        for (ai, &a) in alive.iter().enumerate() {
            for &b in &alive[ai + 1..] {
                let key = tie_key(sim[a * n + b]);
                if key > best {
                    best = key;
                    ties.clear();
                }
                if key == best {
                    ties.push((a, b));
                }
            }
        }
        let pick = if ties.len() == 1 { 0 } else { choose(ties.len()) };
        let (a, b) = ties[pick];
        let (na, nb) = (members[a].len() as f64, members[b].len() as f64);
        for &k in &alive {
            if k != a && k != b {
                let v = (na * sim[a * n + k] + nb * sim[b * n + k]) / (na + nb);
                sim[a * n + k] = v;
                sim[k * n + a] = v;
            }
        }
        let taken = std::mem::take(&mut members[b]);
        members[a].extend(taken);
        members[a].sort_unstable();
        alive.retain(|&k| k != b);
        if alive.len() > 1 {
            subsets.push(members[a].clone());
        }
    }
    Fos::new(subsets)
}

/// The similarity measures the engine can learn linkage with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeasureKind {
    Random,
    Univariate,
    Mi,
    MiAdjusted,
    MiMasked,
    Node,
    NodeStatic,
    SubfunctionCount,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 8] = [
        MeasureKind::Random,
        MeasureKind::Univariate,
        MeasureKind::Mi,
        MeasureKind::MiAdjusted,
        MeasureKind::MiMasked,
        MeasureKind::Node,
        MeasureKind::NodeStatic,
        MeasureKind::SubfunctionCount,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MeasureKind::Random => "random",
            MeasureKind::Univariate => "univariate",
            MeasureKind::Mi => "mi",
            MeasureKind::MiAdjusted => "mi_adjusted",
            MeasureKind::MiMasked => "mi_masked",
            MeasureKind::Node => "node",
            MeasureKind::NodeStatic => "node_static",
            MeasureKind::SubfunctionCount => "subfunction_count",
        }
    }

    /// Applies an "adjusted" request to a base measure.
    pub fn with_adjustment(self, adjusted: bool) -> Result<Self, LinkageError> {
        match (self, adjusted) {
            (k, false) => Ok(k),
            (MeasureKind::Mi | MeasureKind::MiAdjusted, true) => Ok(MeasureKind::MiAdjusted),
            (MeasureKind::MiMasked, true) => Err(LinkageError::MaskedAdjusted),
            (k, true) => Err(LinkageError::NotAdjustable(k)),
        }
    }

    /// Whether the measure reads the population (as opposed to the template).
    pub fn uses_population(self) -> bool {
        matches!(self, MeasureKind::Mi | MeasureKind::MiAdjusted | MeasureKind::MiMasked)
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MeasureKind {
    type Err = LinkageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let alias = match norm.as_str() {
            "node_proximity" => "node",
            "node_proximity_static" | "static_node" => "node_static",
            "subfunction" | "cs" | "common_subfunction_count" => "subfunction_count",
            "mi_adj" => "mi_adjusted",
            other => other,
        };
        MeasureKind::ALL
            .into_iter()
            .find(|k| k.name() == alias)
            .ok_or_else(|| LinkageError::UnknownMeasure(s.to_string()))
    }
}

/// Output of one linkage-learning step.
#[derive(Debug, Clone)]
pub struct LearnedLinkage {
    pub fos: Arc<Fos>,
    /// `None` for the univariate model, which has no similarity matrix.
    pub similarity: Option<Arc<SimilarityMatrix>>,
}

/// Per-population linkage state: the configured measure plus whatever it
/// caches between generations.
#[derive(Debug, Clone)]
pub struct LinkageModel {
    kind: MeasureKind,
    rule: BinningRule,
    baseline: Option<SimilarityMatrix>,
    template_matrix: Option<Arc<SimilarityMatrix>>,
    static_fos: Option<Arc<Fos>>,
}

impl LinkageModel {
    pub fn new(kind: MeasureKind, rule: BinningRule) -> Self {
        Self {
            kind,
            rule,
            baseline: None,
            template_matrix: None,
            static_fos: None,
        }
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn baseline(&self) -> Option<&SimilarityMatrix> {
        self.baseline.as_ref()
    }

    /// Uses `baseline` instead of capturing one on the first call.
    pub fn set_baseline(&mut self, baseline: SimilarityMatrix) {
        self.baseline = Some(baseline);
    }

    fn template_matrix(&mut self, t: &Template) -> Arc<SimilarityMatrix> {
        let kind = self.kind;
        self.template_matrix
            .get_or_insert_with(|| {
                Arc::new(match kind {
                    MeasureKind::SubfunctionCount => measure_subfunction_count(t),
                    _ => measure_node_proximity(t),
                })
            })
            .clone()
    }

    /// Learns a FOS for the current population. The first call on an
    /// adjusted-MI model records the baseline, so it must happen right after
    /// initialization.
    pub fn learn(
        &mut self,
        pop: &[Genotype],
        masks: &[ActivityMask],
        t: &Template,
        rng: &mut impl Rng,
    ) -> Result<LearnedLinkage, LinkageError> {
        let n = t.node_count();
        let similarity = match self.kind {
            MeasureKind::Univariate => {
                return Ok(LearnedLinkage {
                    fos: self
                        .static_fos
                        .get_or_insert_with(|| Arc::new(Fos::univariate(n)))
                        .clone(),
                    similarity: None,
                })
            }
            MeasureKind::NodeStatic => {
                let matrix = self.template_matrix(t);
                if self.static_fos.is_none() {
                    self.static_fos = Some(Arc::new(build_linkage_tree(&matrix, rng)));
                }
                return Ok(LearnedLinkage {
                    fos: self.static_fos.clone().expect("just built"),
                    similarity: Some(matrix),
                });
            }
            MeasureKind::Node | MeasureKind::SubfunctionCount => self.template_matrix(t),
            MeasureKind::Random => Arc::new(measure_random(n, rng)),
            MeasureKind::Mi => {
                if pop.is_empty() {
                    return Err(LinkageError::EmptyPopulation);
                }
                Arc::new(measure_mi(pop, &self.rule))
            }
            MeasureKind::MiMasked => {
                if pop.is_empty() {
                    return Err(LinkageError::EmptyPopulation);
                }
                Arc::new(measure_mi_masked(pop, &self.rule, masks))
            }
            MeasureKind::MiAdjusted => {
                if pop.is_empty() {
                    return Err(LinkageError::EmptyPopulation);
                }
                let mi = measure_mi(pop, &self.rule);
                let baseline = self.baseline.get_or_insert_with(|| mi.clone());
                Arc::new(adjust(&mi, baseline))
            }
        };
        let fos = Arc::new(build_linkage_tree(&similarity, rng));
        Ok(LearnedLinkage {
            fos,
            similarity: Some(similarity),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use crate::template::{OperatorSet, Representation};

    fn view(cols: &[&[u32]]) -> DiscretePopulationView {
        DiscretePopulationView::from_columns(cols.iter().map(|c| c.to_vec()).collect())
    }

    #[test]
    fn entropy_examples() {
        let v = view(&[&[7, 7, 7, 7], &[1, 1, 2, 2], &[1, 2, 3, 4]]);
        assert_eq!(entropy(&v, 0), 0.0);
        assert_eq!(entropy(&v, 1), 1.0);
        assert_eq!(entropy(&v, 2), 2.0);
    }

    #[test]
    fn mi_examples() {
        let v = view(&[&[1, 1, 2, 2], &[1, 1, 2, 2], &[1, 2, 1, 2]]);
        assert_eq!(mutual_information(&v, 0, 1), entropy(&v, 0));
        // Full product design: independent.
        assert_eq!(mutual_information(&v, 0, 2), 0.0);
        let m = mi_matrix(&v);
        assert!(m.is_symmetric());
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(0, 1), 1.0);
    }

    #[test]
    fn binning() {
        let constants: Vec<f64> = (0..250).map(|i| i as f64 / 10.0).collect();
        let bins = BinningRule::default().fit(&constants);
        assert_eq!(bins.bin(24.9), 24);
        assert_eq!(bins.bin(0.0), 0);
        assert_eq!(bins.bin(0.99), 0);
        assert_eq!(bins.bin(1.0), 1);
        let eq = BinningRule {
            bins: 25,
            mode: BinningMode::EqualFrequency,
        }
        .fit(&constants);
        assert_eq!(eq.bin(0.0), 0);
        assert_eq!(eq.bin(24.9), 24);
        let ids: std::collections::BTreeSet<u32> = constants.iter().map(|&c| eq.bin(c)).collect();
        assert_eq!(ids.len(), 25);
        let flat = BinningRule::default().fit(&[3.0, 3.0]);
        assert_eq!(flat.bin(3.0), 0);
    }

    #[test]
    fn discretize_masks_introns() {
        let repr = Representation::new(Template::new(2, 2).unwrap(), OperatorSet::extended()).unwrap();
        let op = |name: &str| Symbol::Op(repr.ops.iter().find(|(_, k)| k.name() == name).unwrap().0);
        let g = Genotype::new(
            vec![op("+"), op("sin"), op("sqrt"), Symbol::Feature(0), Symbol::Constant, Symbol::Feature(1), Symbol::Constant],
            vec![0.0, 0.0, 0.0, 0.0, 1.5, 0.0, 2.5],
        );
        let masks = vec![repr.activity(&g).unwrap()];
        let masked = discretize(std::slice::from_ref(&g), &BinningRule::default(), Some(&masks));
        let plain = discretize(std::slice::from_ref(&g), &BinningRule::default(), None);
        for i in 0..7 {
            let is_mask = masked.column(i)[0] == MASK_TOKEN;
            assert_eq!(is_mask, i == 4 || i == 6, "position {i}");
            assert_ne!(plain.column(i)[0], MASK_TOKEN);
        }
    }

    #[test]
    fn node_proximity_height_two() {
        let m = measure_node_proximity(&Template::new(2, 2).unwrap());
        assert_eq!(m.get(0, 2), 0.8);
        assert_eq!(m.get(0, 1), 0.8);
        assert_eq!(m.get(3, 4), 0.6);
        assert_eq!(m.get(3, 6), 0.2);
        assert_eq!(m.get(1, 3), 0.8);
        assert_eq!(m.get(0, 3), 0.6);
        assert_eq!(m.get(1, 5), 0.4);
        assert!(m.is_symmetric());
    }

    #[test]
    fn subfunction_counts() {
        let m = measure_subfunction_count(&Template::new(2, 2).unwrap());
        assert_eq!(m.get(3, 4), 2.0);
        assert_eq!(m.get(3, 6), 1.0);
        assert_eq!(m.get(1, 3), 2.0);
        assert_eq!(m.get(0, 5), 1.0);
        assert_eq!(m.get(4, 4), 3.0);
    }

    #[test]
    fn random_matrix() {
        let mut rng = rng_from(1);
        let a = measure_random(10, &mut rng);
        let b = measure_random(10, &mut rng);
        assert!(a.is_symmetric());
        assert!(a.values().iter().all(|v| (0.0..1.0).contains(v)));
        assert_ne!(a, b);
    }

    #[test]
    fn forced_merge_tree() {
        let mut s = SimilarityMatrix::zeros(3);
        s.set(0, 1, 0.9);
        s.set(0, 2, 0.1);
        s.set(1, 2, 0.1);
        let fos = build_linkage_tree(&s, &mut rng_from(0));
        assert_eq!(fos.subsets(), &[vec![0], vec![1], vec![2], vec![0, 1]]);
        let two = build_linkage_tree(&SimilarityMatrix::zeros(2), &mut rng_from(0));
        assert_eq!(two.subsets(), &[vec![0], vec![1]]);
        assert_eq!(build_linkage_tree(&SimilarityMatrix::zeros(1), &mut rng_from(0)).len(), 1);
    }

    #[test]
    fn upgma_uses_average_similarity() {
        // {0,1} merge first; then avg({0,1},2) = (0.5+0.1)/2 = 0.3 beats
        // S(2,3) = 0.2 only if the average is used.
        let mut s = SimilarityMatrix::zeros(4);
        s.set(0, 1, 0.9);
        s.set(0, 2, 0.5);
        s.set(1, 2, 0.1);
        s.set(2, 3, 0.2);
        let fos = build_linkage_tree(&s, &mut rng_from(0));
        assert_eq!(fos.subsets()[4], vec![0, 1]);
        assert_eq!(fos.subsets()[5], vec![0, 1, 2]);
        assert_eq!(fos.len(), 6);
    }

    #[test]
    fn adjusted_examples() {
        let mut base = SimilarityMatrix::zeros(3);
        base.set(0, 1, 0.25);
        base.set(0, 2, 0.0);
        base.set(1, 2, 0.125);
        let same = adjust(&base, &base);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(same.get(i, j), if i == j { 0.0 } else { 1.0 });
            }
        }
        let mut later = SimilarityMatrix::zeros(3);
        later.set(0, 1, 0.5);
        later.set(0, 2, 0.3);
        later.set(1, 2, 0.25);
        let a = adjust(&later, &base);
        assert_eq!(a.get(0, 1), 2.0);
        assert_eq!(a.get(1, 2), 2.0);
        assert!(a.get(0, 2).is_finite() && a.get(0, 2) > 1e10);
    }

    #[test]
    fn measure_names_round_trip() {
        for k in MeasureKind::ALL {
            assert_eq!(k.name().parse::<MeasureKind>().unwrap(), k);
        }
        assert_eq!("MI-masked".parse::<MeasureKind>().unwrap(), MeasureKind::MiMasked);
        assert!("bogus".parse::<MeasureKind>().is_err());
        assert_eq!(MeasureKind::MiMasked.with_adjustment(true), Err(LinkageError::MaskedAdjusted));
        assert_eq!(MeasureKind::Mi.with_adjustment(true), Ok(MeasureKind::MiAdjusted));
        assert!(MeasureKind::Node.with_adjustment(true).is_err());
    }

    #[test]
    fn model_caching() {
        let t = Template::new(2, 2).unwrap();
        let mut rng = rng_from(5);
        let mut uni = LinkageModel::new(MeasureKind::Univariate, BinningRule::default());
        let l = uni.learn(&[], &[], &t, &mut rng).unwrap();
        assert_eq!(l.fos.len(), 7);
        assert!(l.similarity.is_none());

        let mut stat = LinkageModel::new(MeasureKind::NodeStatic, BinningRule::default());
        let a = stat.learn(&[], &[], &t, &mut rng).unwrap();
        let b = stat.learn(&[], &[], &t, &mut rng).unwrap();
        assert!(Arc::ptr_eq(&a.fos, &b.fos));

        let mut node = LinkageModel::new(MeasureKind::Node, BinningRule::default());
        let fos: Vec<Fos> = (0..20)
            .map(|_| (*node.learn(&[], &[], &t, &mut rng).unwrap().fos).clone())
            .collect();
        assert!(fos.iter().any(|f| f != &fos[0]));

        let mut mi = LinkageModel::new(MeasureKind::Mi, BinningRule::default());
        assert_eq!(mi.learn(&[], &[], &t, &mut rng).unwrap_err(), LinkageError::EmptyPopulation);
    }
}
