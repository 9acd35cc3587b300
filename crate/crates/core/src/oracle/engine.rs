//! Clause database with two-watched-literal unit propagation, a decision
//! trail with levels, and a chronological-backtracking complete search.

use crate::logic::{Clause, Lit, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Value {
    True,
    False,
    Unset,
}

fn value_of(values: &[Value], lit: Lit) -> Option<bool> {
    match values[lit.var().index()] {
        Value::Unset => None,
        Value::True => Some(lit.is_positive()),
        Value::False => Some(!lit.is_positive()),
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Engine {
    clauses: Vec<Clause>,
    watches: Vec<Vec<usize>>,
    values: Vec<Value>,
    phase: Vec<bool>,
    trail: Vec<Lit>,
    levels: Vec<usize>,
    qhead: usize,
    root_conflict: bool,
}

impl Engine {
    pub(crate) fn new(num_vars: usize, clauses: &[Clause]) -> Self {
        let mut engine = Self {
            clauses: Vec::new(),
            watches: vec![Vec::new(); 2 * num_vars],
            values: vec![Value::Unset; num_vars],
            phase: vec![false; num_vars],
            trail: Vec::new(),
            levels: Vec::new(),
            qhead: 0,
            root_conflict: false,
        };
        let mut units = Vec::new();
        for clause in clauses {
            let mut c = clause.clone();
            c.sort();
            c.dedup();
            if c.windows(2).any(|w| w[0] == !w[1]) {
                continue; // tautology
            }
            match c.len() {
                0 => engine.root_conflict = true,
                1 => units.push(c[0]),
                _ => {
                    let id = engine.clauses.len();
                    engine.watches[c[0].code()].push(id);
                    engine.watches[c[1].code()].push(id);
                    engine.clauses.push(c);
                }
            }
        }
        for u in units {
            if !engine.assume(u) {
                engine.root_conflict = true;
                break;
            }
        }
        engine
    }

    pub(crate) fn num_vars(&self) -> usize {
        self.values.len()
    }

    pub(crate) fn is_root_conflict(&self) -> bool {
        self.root_conflict
    }

    pub(crate) fn value(&self, lit: Lit) -> Option<bool> {
        value_of(&self.values, lit)
    }

    pub(crate) fn is_false(&self, lit: Lit) -> bool {
        self.value(lit) == Some(false)
    }

    /// Preferred polarity when the search decides `var`.
    pub(crate) fn set_phase(&mut self, var: Var, positive: bool) {
        self.phase[var.index()] = positive;
    }

    pub(crate) fn level(&self) -> usize {
        self.levels.len()
    }

    pub(crate) fn push_level(&mut self) {
        self.levels.push(self.trail.len());
    }

    pub(crate) fn backtrack_to(&mut self, level: usize) {
        if level >= self.levels.len() {
            return;
        }
        let keep = self.levels[level];
        for lit in self.trail.drain(keep..) {
            self.values[lit.var().index()] = Value::Unset;
        }
        self.levels.truncate(level);
        self.qhead = self.qhead.min(keep);
    }

    /// Asserts `lit` at the current level and propagates. Returns false on
    /// conflict; the caller is expected to backtrack.
    pub(crate) fn assume(&mut self, lit: Lit) -> bool {
        match self.value(lit) {
            Some(true) => true,
            Some(false) => false,
            None => {
                self.enqueue(lit);
                self.propagate()
            }
        }
    }

    fn enqueue(&mut self, lit: Lit) {
        self.values[lit.var().index()] = if lit.is_positive() {
            Value::True
        } else {
            Value::False
        };
        self.trail.push(lit);
    }

    fn propagate(&mut self) -> bool {
        while self.qhead < self.trail.len() {
            let falsified = !self.trail[self.qhead];
            self.qhead += 1;
            let mut watchers = std::mem::take(&mut self.watches[falsified.code()]);
            let mut i = 0;
            let mut conflict = false;
            while i < watchers.len() {
                let id = watchers[i];
                let clause = &mut self.clauses[id];
                if clause[0] == falsified {
                    clause.swap(0, 1);
                }
                let other = clause[0];
                if value_of(&self.values, other) == Some(true) {
                    i += 1;
                    continue;
                }
                let replacement =
                    (2..clause.len()).find(|&k| value_of(&self.values, clause[k]) != Some(false));
                if let Some(k) = replacement {
                    clause.swap(1, k);
                    self.watches[clause[1].code()].push(id);
                    watchers.swap_remove(i);
                    continue;
                }
                if value_of(&self.values, other) == Some(false) {
                    conflict = true;
                    break;
                }
                self.enqueue(other);
                i += 1;
            }
            self.watches[falsified.code()].append(&mut watchers);
            if conflict {
                return false;
            }
        }
        true
    }

    /// Complete search for an extension of the current assignment. On success the
    /// full model is returned; the assignment is restored either way.
    pub(crate) fn complete(&mut self) -> Option<Vec<bool>> {
        if self.root_conflict {
            return None;
        }
        let base = self.level();
        let mut decisions: Vec<(Var, bool)> = Vec::new();
        let mut cursor = 0usize;
        let result = 'search: loop {
            while cursor < self.num_vars() && self.values[cursor] != Value::Unset {
                cursor += 1;
            }
            if cursor == self.num_vars() {
                break 'search Some(self.model());
            }
            let var = Var(cursor as u32);
            let first = self.phase[cursor];
            self.push_level();
            decisions.push((var, false));
            if self.assume(var.lit(first)) {
                continue;
            }
            // conflict: flip the most recent unflipped decision
            loop {
                let Some((var, flipped)) = decisions.pop() else {
                    break 'search None;
                };
                self.backtrack_to(base + decisions.len());
                cursor = 0;
                if !flipped {
                    self.push_level();
                    decisions.push((var, true));
                    if self.assume(var.lit(!self.phase[var.index()])) {
                        continue 'search;
                    }
                }
            }
        };
        self.backtrack_to(base);
        result
    }

    fn model(&self) -> Vec<bool> {
        self.values.iter().map(|v| *v == Value::True).collect()
    }

    /// Satisfiability of the clause set under `assumptions`; restores state afterwards.
    pub(crate) fn solve_under(&mut self, assumptions: &[Lit]) -> Option<Vec<bool>> {
        let base = self.level();
        self.push_level();
        let ok = assumptions.iter().all(|&a| self.assume(a));
        let result = if ok { self.complete() } else { None };
        self.backtrack_to(base);
        result
    }
}
