//! Weighted CART on a real-valued target with a squared-error criterion.
//!
//! For 0/1 targets the weighted squared error of a node equals half its
//! weighted Gini impurity, so the same builder yields Gini classification
//! trees and the regression trees used by gradient boosting.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Index of the leaf reached by `row`.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { .. } => return at,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match &self.nodes[self.leaf_index(row)] {
            Node::Leaf { value } => *value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn set_leaf(&mut self, idx: usize, v: f64) {
        self.nodes[idx] = Node::Leaf { value: v };
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
            }
        }
        walk(self, 0)
    }
}

struct Builder<'a, L: Fn(&[usize]) -> f64> {
    x: ArrayView2<'a, f64>,
    target: &'a [f64],
    w: &'a [f64],
    params: CartParams,
    leaf_value: L,
    nodes: Vec<Node>,
}

struct Best {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Grows a tree over `rows`. Ties in split quality go to the lowest feature
/// index, then the lowest threshold. Impure nodes are split even when the
/// best split has zero gain, so an unbounded tree separates every pair of
/// distinct rows with different targets.
pub fn build<L: Fn(&[usize]) -> f64>(
    x: ArrayView2<'_, f64>,
    target: &[f64],
    w: &[f64],
    rows: &[usize],
    params: CartParams,
    leaf_value: L,
) -> Tree {
    let mut b = Builder {
        x,
        target,
        w,
        params,
        leaf_value,
        nodes: Vec::new(),
    };
    let mut rows = rows.to_vec();
    b.grow(&mut rows, 0);
    Tree { nodes: b.nodes }
}

impl<L: Fn(&[usize]) -> f64> Builder<'_, L> {
    fn grow(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let can_split = self.params.max_depth.is_none_or(|m| depth < m)
            && rows.len() >= 2 * self.params.min_leaf.max(1)
            && !self.pure(rows);
        let best = if can_split { self.best_split(rows) } else { None };
        match best {
            None => {
                let v = (self.leaf_value)(rows);
                self.nodes[id] = Node::Leaf { value: v };
            }
            Some(best) => {
                let (f, t) = (best.feature, best.threshold);
                let x = self.x;
                let mut left: Vec<usize> = rows.iter().copied().filter(|&r| x[[r, f]] <= t).collect();
                let mut right: Vec<usize> = rows.iter().copied().filter(|&r| x[[r, f]] > t).collect();
                let l = self.grow(&mut left, depth + 1);
                let r = self.grow(&mut right, depth + 1);
                self.nodes[id] = Node::Split {
                    feature: f,
                    threshold: t,
                    left: l,
                    right: r,
                };
            }
        }
        id
    }

    fn pure(&self, rows: &[usize]) -> bool {
        let mut first = None;
        for &r in rows {
            if self.w[r] <= 0.0 {
                continue;
            }
            match first {
                None => first = Some(self.target[r]),
                Some(v) if v != self.target[r] => return false,
                _ => {}
            }
        }
        true
    }

    fn best_split(&self, rows: &[usize]) -> Option<Best> {
        let n = rows.len();
        let (mut tw, mut twt, mut twt2) = (0.0, 0.0, 0.0);
        for &r in rows {
            let (w, t) = (self.w[r], self.target[r]);
            tw += w;
            twt += w * t;
            twt2 += w * t * t;
        }
        let parent = twt2 - twt * twt / tw;
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<Best> = None;
        let mut order: Vec<usize> = rows.to_vec();
        for f in 0..self.x.ncols() {
            order.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]).then(a.cmp(&b)));
            let (mut lw, mut lwt, mut lwt2) = (0.0, 0.0, 0.0);
            for i in 0..n - 1 {
                let r = order[i];
                let (w, t) = (self.w[r], self.target[r]);
                lw += w;
                lwt += w * t;
                lwt2 += w * t * t;
                let a = self.x[[r, f]];
                let b = self.x[[order[i + 1], f]];
                if a == b || i + 1 < min_leaf || n - i - 1 < min_leaf {
                    continue;
                }
                let rw = tw - lw;
                if lw <= 0.0 || rw <= 0.0 {
                    continue;
                }
                let rwt = twt - lwt;
                let rwt2 = twt2 - lwt2;
                let child = (lwt2 - lwt * lwt / lw) + (rwt2 - rwt * rwt / rw);
                let gain = parent - child;
                if best.as_ref().is_none_or(|bst| gain > bst.gain) {
                    let mut thr = 0.5 * (a + b);
                    if thr >= b {
                        thr = a;
                    }
                    best = Some(Best {
                        feature: f,
                        threshold: thr,
                        gain,
                    });
                }
            }
        }
        best
    }
}
