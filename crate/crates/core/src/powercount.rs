//! Scale-labelled trees and their power-counting weights.
//!
//! Trees are compressed: the root r sits at the lowest scale h of the window, its
//! single child v0 opens the cluster, every other non-endpoint vertex branches
//! (s_v >= 2), and endpoints sit at scale 0 with four external legs.
//! Weights are pure exponent bookkeeping: prod gamma^{-(h_v - h_v') (D(P_v) + z_v)}.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Largest admissible scale window.
pub const MAX_WINDOW: usize = 12;
/// Legs carried by an endpoint.
pub const ENDPOINT_LEGS: u32 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeVertex {
    pub scale: i32,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// |P_v|; unused on the root.
    pub legs: u32,
    pub endpoint: bool,
}

/// Rooted scale-labelled tree; vertex 0 is the root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeShape {
    pub vertices: Vec<TreeVertex>,
}

/// D(P) = |P|/2 - 2.
pub fn scaling_dimension(legs: u32) -> i32 {
    legs as i32 / 2 - 2
}

impl TreeShape {
    pub fn root_scale(&self) -> i32 {
        self.vertices[0].scale
    }

    pub fn n_endpoints(&self) -> usize {
        self.vertices.iter().filter(|v| v.endpoint).count()
    }

    /// s_v, the number of children.
    pub fn branching(&self, v: usize) -> usize {
        self.vertices[v].children.len()
    }

    /// n^e_v, endpoints following v.
    pub fn endpoints_below(&self, v: usize) -> usize {
        let vx = &self.vertices[v];
        if vx.endpoint {
            1
        } else {
            vx.children.iter().map(|&c| self.endpoints_below(c)).sum()
        }
    }

    /// Non-root, non-endpoint vertices.
    pub fn inner(&self) -> impl Iterator<Item = usize> + '_ {
        (1..self.vertices.len()).filter(|&v| !self.vertices[v].endpoint)
    }

    /// Checks scale ordering, leg parity and subadditivity, endpoint data and links.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.vertices.is_empty() {
            return Err("empty tree".into());
        }
        let root = &self.vertices[0];
        if root.parent.is_some() || root.endpoint || root.children.len() != 1 {
            return Err("root must have exactly one child and no parent".into());
        }
        let top = self.vertices.iter().filter(|v| v.endpoint).map(|v| v.scale).max().unwrap_or(0);
        for (i, v) in self.vertices.iter().enumerate() {
            for &c in &v.children {
                if self.vertices[c].parent != Some(i) {
                    return Err(format!("broken link {i} -> {c}"));
                }
                if self.vertices[c].scale <= v.scale {
                    return Err(format!("scale not increasing along {i} -> {c}"));
                }
            }
            if i == 0 {
                continue;
            }
            if v.endpoint {
                if !v.children.is_empty() || v.legs != ENDPOINT_LEGS || v.scale != top {
                    return Err(format!("endpoint {i} must be a leaf at scale {top} with {ENDPOINT_LEGS} legs"));
                }
                continue;
            }
            if v.children.is_empty() {
                return Err(format!("inner vertex {i} has no children"));
            }
            let below: u32 = v.children.iter().map(|&c| self.vertices[c].legs).sum();
            if v.legs < 2 || v.legs % 2 != 0 || v.legs > below {
                return Err(format!("vertex {i}: |P| = {} violates parity or subadditivity (children carry {below})", v.legs));
            }
        }
        Ok(())
    }
}

/// prod over inner v of gamma^{-(h_v - h_v') D(P_v)}.
pub fn naive_weight(tree: &TreeShape, gamma: f64) -> f64 {
    weight_with(tree, gamma, |_| 0.0)
}

/// z_v = 1 + theta for two legs, theta for four legs, 0 otherwise.
pub fn renormalization_gain(legs: u32, theta: f64) -> f64 {
    match legs {
        2 => 1.0 + theta,
        4 => theta,
        _ => 0.0,
    }
}

/// prod over inner v of gamma^{-(h_v - h_v') (D(P_v) + z_v)}.
pub fn renormalized_weight(tree: &TreeShape, gamma: f64, theta: f64) -> f64 {
    weight_with(tree, gamma, |legs| renormalization_gain(legs, theta))
}

fn weight_with(tree: &TreeShape, gamma: f64, z: impl Fn(u32) -> f64) -> f64 {
    let e: f64 = tree
        .inner()
        .map(|v| {
            let vx = &tree.vertices[v];
            let gap = (vx.scale - tree.vertices[vx.parent.unwrap()].scale) as f64;
            gap * (scaling_dimension(vx.legs) as f64 + z(vx.legs))
        })
        .sum();
    gamma.powf(-e)
}

/// Both sides of sum_v h_v (s_v - 1) = h (n - 1) + sum_v (h_v - h_v') (n^e_v - 1),
/// sums over the inner vertices, h the root scale.
pub fn telescoping_sides(tree: &TreeShape) -> (i64, i64) {
    let n = tree.n_endpoints() as i64;
    let h = tree.root_scale() as i64;
    let mut lhs = 0;
    let mut rhs = h * (n - 1);
    for v in tree.inner() {
        let vx = &tree.vertices[v];
        let hv = vx.scale as i64;
        lhs += hv * (tree.branching(v) as i64 - 1);
        rhs += (hv - tree.vertices[vx.parent.unwrap()].scale as i64) * (tree.endpoints_below(v) as i64 - 1);
    }
    (lhs, rhs)
}

/// Which |P_v| the enumeration admits on inner vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LegRule {
    /// Every even value in [2, sum of children].
    All,
    /// Only this value (where admissible).
    Fixed(u32),
}

/// Unordered shape: None is an endpoint, Some(children) an inner vertex.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Shape(Option<Vec<Shape>>);

fn shapes(n: usize) -> Vec<Shape> {
    if n == 1 {
        return vec![Shape(None)];
    }
    let mut out = Vec::new();
    let mut parts = Vec::new();
    partitions(n, n - 1, &mut parts, &mut out);
    out
}

/// Multisets of >= 2 child shapes with sizes summing to n (sizes non-increasing, shapes canonical).
fn partitions(rest: usize, max: usize, parts: &mut Vec<usize>, out: &mut Vec<Shape>) {
    if rest == 0 {
        if parts.len() >= 2 {
            let mut acc: Vec<Vec<Shape>> = vec![Vec::new()];
            let mut i = 0;
            while i < parts.len() {
                let mut j = i;
                while j < parts.len() && parts[j] == parts[i] {
                    j += 1;
                }
                let options = shapes(parts[i]);
                let combos = multichoose(options.len(), j - i);
                let mut next = Vec::new();
                for a in &acc {
                    for c in &combos {
                        let mut b = a.clone();
                        b.extend(c.iter().map(|&k| options[k].clone()));
                        next.push(b);
                    }
                }
                acc = next;
                i = j;
            }
            out.extend(acc.into_iter().map(|c| Shape(Some(c))));
        }
        return;
    }
    for p in (1..=max.min(rest)).rev() {
        parts.push(p);
        partitions(rest - p, p, parts, out);
        parts.pop();
    }
}

/// Non-decreasing index sequences of length k over 0..m.
fn multichoose(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(m: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            go(m, k, i, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(m, k, 0, &mut Vec::new(), &mut out);
    out
}

/// A labelled subtree in local indices (0 is its top vertex).
type Labelled = Vec<TreeVertex>;

fn label(shape: &Shape, parent_scale: i32, rule: LegRule) -> Vec<Labelled> {
    match &shape.0 {
        None => vec![vec![TreeVertex { scale: 0, parent: None, children: vec![], legs: ENDPOINT_LEGS, endpoint: true }]],
        Some(children) => {
            let mut out = Vec::new();
            for s in parent_scale + 1..0 {
                // Children choices, with identical shapes taken as multisets.
                let mut acc: Vec<Vec<Labelled>> = vec![Vec::new()];
                let mut i = 0;
                while i < children.len() {
                    let mut j = i;
                    while j < children.len() && children[j] == children[i] {
                        j += 1;
                    }
                    let opts = label(&children[i], s, rule);
                    let combos = multichoose(opts.len(), j - i);
                    let mut next = Vec::new();
                    for a in &acc {
                        for c in &combos {
                            let mut b = a.clone();
                            b.extend(c.iter().map(|&k| opts[k].clone()));
                            next.push(b);
                        }
                    }
                    acc = next;
                    i = j;
                }
                for kids in acc {
                    let below: u32 = kids.iter().map(|k| k[0].legs).sum();
                    let legs: Vec<u32> = match rule {
                        LegRule::All => (1..=below / 2).map(|p| 2 * p).collect(),
                        LegRule::Fixed(p) => {
                            if p >= 2 && p % 2 == 0 && p <= below {
                                vec![p]
                            } else {
                                vec![]
                            }
                        }
                    };
                    for p in legs {
                        out.push(join(s, p, &kids));
                    }
                }
            }
            out
        }
    }
}

fn join(scale: i32, legs: u32, kids: &[Labelled]) -> Labelled {
    let mut v = vec![TreeVertex { scale, parent: None, children: vec![], legs, endpoint: false }];
    for k in kids {
        let off = v.len();
        v[0].children.push(off);
        for (i, x) in k.iter().enumerate() {
            let mut x = x.clone();
            x.parent = Some(if i == 0 { 0 } else { x.parent.unwrap() + off });
            x.children = x.children.iter().map(|c| c + off).collect();
            v.push(x);
        }
    }
    v
}

fn check_window(n: usize, h: i32) -> Result<()> {
    let size = (-h).max(0) as usize;
    if size > MAX_WINDOW {
        return Err(Error::WindowTooLarge { size, max: MAX_WINDOW });
    }
    if n == 0 || n > 5 {
        return Err(Error::InvalidConfig(format!("endpoint count n = {n} must lie in 1..=5")));
    }
    if h >= 0 {
        return Err(Error::InvalidConfig(format!("window lower end h = {h} must be negative")));
    }
    Ok(())
}

/// Calls `f` on every compressed tree with n endpoints in the window [h, 0]; returns the count.
pub fn for_each_tree(n: usize, h: i32, rule: LegRule, mut f: impl FnMut(&TreeShape)) -> Result<usize> {
    check_window(n, h)?;
    let mut count = 0;
    for shape in shapes(n) {
        // v0 is an inner vertex even when n = 1.
        let top = match &shape.0 {
            None => Shape(Some(vec![Shape(None)])),
            Some(_) => shape.clone(),
        };
        for sub in label(&top, h, rule) {
            let tree = TreeShape { vertices: join_root(h, sub) };
            f(&tree);
            count += 1;
        }
    }
    Ok(count)
}

fn join_root(h: i32, sub: Labelled) -> Vec<TreeVertex> {
    let mut v = join(h, 0, &[sub]);
    v[0].legs = 0;
    v
}

/// All compressed trees with n <= 5 endpoints in the window [h, 0], |h| <= 12.
pub fn enumerate_trees(n: usize, h: i32) -> Result<Vec<TreeShape>> {
    let mut out = Vec::new();
    for_each_tree(n, h, LegRule::All, |t| out.push(t.clone()))?;
    Ok(out)
}

/// Partial sum at one window depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub depth: usize,
    pub naive_sum: f64,
    pub renormalized_sum: f64,
}

/// Sums of naive and renormalized weights over trees with n endpoints and every inner
/// |P_v| equal to `legs`, for window depths 1..=max_depth.
pub fn summability_scan(n: usize, legs: u32, theta: f64, gamma: f64, max_depth: usize) -> Result<Vec<ScanRow>> {
    (1..=max_depth)
        .map(|depth| {
            let (mut a, mut b) = (0.0, 0.0);
            for_each_tree(n, -(depth as i32), LegRule::Fixed(legs), |t| {
                a += naive_weight(t, gamma);
                b += renormalized_weight(t, gamma, theta);
            })?;
            Ok(ScanRow { depth, naive_sum: a, renormalized_sum: b })
        })
        .collect()
}

/// CSV: depth, class, naive_sum, renormalized_sum.
pub fn write_scan_csv<W: Write>(mut w: W, class: u32, rows: &[ScanRow]) -> std::io::Result<()> {
    writeln!(w, "depth,class,naive_sum,renormalized_sum")?;
    for r in rows {
        writeln!(w, "{},{},{:.17e},{:.17e}", r.depth, class, r.naive_sum, r.renormalized_sum)?;
    }
    Ok(())
}
