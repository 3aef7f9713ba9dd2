use std::fmt;

use serde::{Deserialize, Serialize};

use super::CoverageError;

/// Which end of a factor's range is the less demanding one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Monotonicity {
    SafeLow,
    SafeHigh,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    /// `edges` are the interior cut points; bins are `[lo, hi)` with the last bin closed.
    Continuous {
        min: f64,
        max: f64,
        edges: Vec<f64>,
    },
    Categorical {
        modes: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorDomain {
    pub name: String,
    pub kind: FactorKind,
    #[serde(default)]
    pub monotonicity: Monotonicity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Real(f64),
    Mode(String),
}

impl Value {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            Value::Real(x) => Some(*x),
            Value::Mode(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Real(x) => write!(f, "{x}"),
            Value::Mode(m) => f.write_str(m),
        }
    }
}

impl FactorDomain {
    pub fn continuous(name: &str, min: f64, max: f64, edges: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            kind: FactorKind::Continuous { min, max, edges },
            monotonicity: Monotonicity::None,
        }
    }

    /// Continuous factor split into `bins` equal-width bins.
    pub fn uniform(name: &str, min: f64, max: f64, bins: usize) -> Self {
        let w = (max - min) / bins as f64;
        let edges = (1..bins).map(|i| min + w * i as f64).collect();
        Self::continuous(name, min, max, edges)
    }

    pub fn categorical(name: &str, modes: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: FactorKind::Categorical {
                modes: modes.iter().map(|m| m.to_string()).collect(),
            },
            monotonicity: Monotonicity::None,
        }
    }

    pub fn with_monotonicity(mut self, m: Monotonicity) -> Self {
        self.monotonicity = m;
        self
    }

    pub fn validate(&self) -> Result<(), CoverageError> {
        match &self.kind {
            FactorKind::Continuous { min, max, edges } => {
                if !(min.is_finite() && max.is_finite() && min < max) {
                    return Err(CoverageError::Domain(format!(
                        "{}: need finite min < max, got [{min}, {max}]",
                        self.name
                    )));
                }
                let mut prev = *min;
                for &e in edges {
                    if !(e > prev && e < *max) {
                        return Err(CoverageError::Domain(format!(
                            "{}: bin edges must be strictly increasing inside ({min}, {max})",
                            self.name
                        )));
                    }
                    prev = e;
                }
            }
            FactorKind::Categorical { modes } => {
                if modes.is_empty() {
                    return Err(CoverageError::Domain(format!("{}: no modes", self.name)));
                }
                for (i, m) in modes.iter().enumerate() {
                    if modes[..i].contains(m) {
                        return Err(CoverageError::Domain(format!("{}: duplicate mode `{m}`", self.name)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        match &self.kind {
            FactorKind::Continuous { edges, .. } => edges.len() + 1,
            FactorKind::Categorical { modes } => modes.len(),
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, FactorKind::Continuous { .. })
    }

    /// All bin boundaries, including both ends of the range.
    pub fn boundaries(&self) -> Vec<f64> {
        match &self.kind {
            FactorKind::Continuous { min, max, edges } => {
                let mut b = vec![*min];
                b.extend(edges);
                b.push(*max);
                b
            }
            FactorKind::Categorical { .. } => Vec::new(),
        }
    }

    /// `[lo, hi]` of bin `level`.
    pub fn bin(&self, level: usize) -> Option<(f64, f64)> {
        let b = self.boundaries();
        (level + 1 < b.len()).then(|| (b[level], b[level + 1]))
    }

    /// The abstraction α_j: value → level index.
    pub fn level_of(&self, value: &Value) -> Result<usize, CoverageError> {
        match (&self.kind, value) {
            (FactorKind::Continuous { min, max, edges }, Value::Real(x)) => {
                if !(x >= min && x <= max) {
                    return Err(CoverageError::Domain(format!(
                        "{}: {x} outside [{min}, {max}]",
                        self.name
                    )));
                }
                Ok(edges.partition_point(|e| e <= x))
            }
            (FactorKind::Categorical { modes }, Value::Mode(m)) => modes
                .iter()
                .position(|x| x == m)
                .ok_or_else(|| CoverageError::Domain(format!("{}: unknown mode `{m}`", self.name))),
            _ => Err(CoverageError::Domain(format!(
                "{}: value `{value}` has the wrong kind",
                self.name
            ))),
        }
    }

    /// Orders levels from least to most demanding.
    pub fn demand_rank(&self, level: usize) -> usize {
        match self.monotonicity {
            Monotonicity::SafeHigh => self.levels() - 1 - level,
            _ => level,
        }
    }

    /// A value inside bin `level` at relative position `frac` in [0, 1).
    pub fn value_in(&self, level: usize, frac: f64) -> Value {
        match &self.kind {
            FactorKind::Continuous { .. } => {
                let (lo, hi) = self.bin(level).expect("level in range");
                Value::Real(lo + (hi - lo) * frac)
            }
            FactorKind::Categorical { modes } => Value::Mode(modes[level].clone()),
        }
    }

    pub fn midpoint(&self) -> Value {
        match &self.kind {
            FactorKind::Continuous { min, max, .. } => Value::Real(0.5 * (min + max)),
            FactorKind::Categorical { modes } => Value::Mode(modes[modes.len() / 2].clone()),
        }
    }
}

/// A point of the abstract lattice: one level per factor.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell(pub Vec<usize>);

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|l| l.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// Per-factor abstraction maps and the cell lattice they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractionMap {
    domains: Vec<FactorDomain>,
}

impl AbstractionMap {
    pub fn new(domains: Vec<FactorDomain>) -> Result<Self, CoverageError> {
        if domains.is_empty() {
            return Err(CoverageError::EmptyDomain);
        }
        for (i, d) in domains.iter().enumerate() {
            d.validate()?;
            if domains[..i].iter().any(|o| o.name == d.name) {
                return Err(CoverageError::Domain(format!("duplicate factor `{}`", d.name)));
            }
        }
        Ok(Self { domains })
    }

    pub fn domains(&self) -> &[FactorDomain] {
        &self.domains
    }

    pub fn factor_index(&self, name: &str) -> Option<usize> {
        self.domains.iter().position(|d| d.name == name)
    }

    pub fn levels(&self) -> Vec<usize> {
        self.domains.iter().map(FactorDomain::levels).collect()
    }

    pub fn cell_count(&self) -> usize {
        self.levels().iter().product()
    }

    pub fn cell_of(&self, point: &[Value]) -> Result<Cell, CoverageError> {
        if point.len() != self.domains.len() {
            return Err(CoverageError::Domain(format!(
                "point has {} values for {} factors",
                point.len(),
                self.domains.len()
            )));
        }
        self.domains
            .iter()
            .zip(point)
            .map(|(d, v)| d.level_of(v))
            .collect::<Result<_, _>>()
            .map(Cell)
    }

    /// All cells in lexicographic order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let levels = self.levels();
        let total: usize = levels.iter().product();
        (0..total).map(move |mut code| {
            let mut idx = vec![0; levels.len()];
            for j in (0..levels.len()).rev() {
                idx[j] = code % levels[j];
                code /= levels[j];
            }
            Cell(idx)
        })
    }

    pub fn representative(&self, cell: &Cell) -> Vec<Value> {
        self.domains
            .iter()
            .zip(&cell.0)
            .map(|(d, &l)| d.value_in(l, 0.5))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn levels_and_bins() {
        let d = FactorDomain::uniform("v", 30.0, 72.0, 6);
        assert_eq!(d.levels(), 6);
        assert_eq!(d.level_of(&Value::Real(30.0)).unwrap(), 0);
        assert_eq!(d.level_of(&Value::Real(37.0)).unwrap(), 1);
        assert_eq!(d.level_of(&Value::Real(72.0)).unwrap(), 5);
        assert!(d.level_of(&Value::Real(72.5)).is_err());
        assert!(d.level_of(&Value::Mode("x".into())).is_err());
    }

    #[test]
    fn validation() {
        assert!(FactorDomain::continuous("a", 0.0, 1.0, vec![0.5, 0.4])
            .validate()
            .is_err());
        assert!(FactorDomain::continuous("a", 1.0, 1.0, vec![]).validate().is_err());
        assert!(FactorDomain::categorical("m", &[]).validate().is_err());
        assert!(AbstractionMap::new(vec![]).is_err());
    }

    #[test]
    fn demand_rank_follows_tag() {
        let mu = FactorDomain::uniform("mu", 0.1, 1.0, 3).with_monotonicity(Monotonicity::SafeHigh);
        assert_eq!(mu.demand_rank(0), 2);
        assert_eq!(mu.demand_rank(2), 0);
    }

    #[test]
    fn cells_enumerate_lattice() {
        let a = AbstractionMap::new(vec![
            FactorDomain::uniform("x", 0.0, 1.0, 2),
            FactorDomain::categorical("m", &["dry", "wet", "ice"]),
        ])
        .unwrap();
        let cells: Vec<_> = a.cells().collect();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[1], Cell(vec![0, 1]));
        for c in &cells {
            assert_eq!(&a.cell_of(&a.representative(c)).unwrap(), c);
        }
    }

    proptest! {
        #[test]
        fn abstraction_is_monotone(x in 0.0f64..10.0, y in 0.0f64..10.0, bins in 1usize..12) {
            let d = FactorDomain::uniform("x", 0.0, 10.0, bins);
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(d.level_of(&Value::Real(lo)).unwrap() <= d.level_of(&Value::Real(hi)).unwrap());
        }
    }
}
