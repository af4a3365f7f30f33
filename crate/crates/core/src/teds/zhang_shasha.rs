//! Zhang–Shasha tree edit distance for ordered labeled trees.

/// An ordered tree stored as an arena. Node 0 is the root when the tree is
/// non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedTree<L> {
    labels: Vec<L>,
    children: Vec<Vec<usize>>,
}

impl<L> Default for OrderedTree<L> {
    fn default() -> Self {
        Self {
            labels: Vec::new(),
            children: Vec::new(),
        }
    }
}

impl<L> OrderedTree<L> {
    /// A tree with a single root node.
    pub fn new(root: L) -> Self {
        Self {
            labels: vec![root],
            children: vec![Vec::new()],
        }
    }

    /// The empty tree (no nodes).
    pub fn empty() -> Self {
        Self::default()
    }

    /// Appends a child under `parent` and returns its id.
    pub fn add_child(&mut self, parent: usize, label: L) -> usize {
        let id = self.labels.len();
        self.labels.push(label);
        self.children.push(Vec::new());
        self.children[parent].push(id);
        id
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, node: usize) -> &L {
        &self.labels[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    /// Postorder node list paired with each node's leftmost-leaf position
    /// (both as postorder indices).
    fn postorder(&self) -> (Vec<usize>, Vec<usize>) {
        let mut order = Vec::with_capacity(self.len());
        let mut leftmost = Vec::with_capacity(self.len());
        if self.is_empty() {
            return (order, leftmost);
        }
        // (node, next child index, leftmost postorder index of subtree)
        let mut stack: Vec<(usize, usize, Option<usize>)> = vec![(0, 0, None)];
        while let Some(top) = stack.last_mut() {
            let (node, next, _) = *top;
            if next < self.children[node].len() {
                top.1 += 1;
                stack.push((self.children[node][next], 0, None));
            } else {
                let (_, _, lm) = stack.pop().expect("non-empty stack");
                let post = order.len();
                let lm = lm.unwrap_or(post);
                order.push(node);
                leftmost.push(lm);
                if let Some(parent) = stack.last_mut() {
                    if parent.2.is_none() {
                        parent.2 = Some(lm);
                    }
                }
            }
        }
        (order, leftmost)
    }
}

/// Edit operation costs.
pub trait EditCosts<L> {
    fn insert(&self, label: &L) -> f64;
    fn delete(&self, label: &L) -> f64;
    fn rename(&self, from: &L, to: &L) -> f64;
}

/// Minimal total cost of node insertions, deletions and relabelings that
/// turn `a` into `b`.
pub fn edit_distance<L, C: EditCosts<L>>(a: &OrderedTree<L>, b: &OrderedTree<L>, costs: &C) -> f64 {
    let (order_a, lml_a) = a.postorder();
    let (order_b, lml_b) = b.postorder();
    let (n, m) = (order_a.len(), order_b.len());
    if n == 0 {
        return order_b.iter().map(|&v| costs.insert(b.label(v))).sum();
    }
    if m == 0 {
        return order_a.iter().map(|&v| costs.delete(a.label(v))).sum();
    }

    let del: Vec<f64> = order_a.iter().map(|&v| costs.delete(a.label(v))).collect();
    let ins: Vec<f64> = order_b.iter().map(|&v| costs.insert(b.label(v))).collect();

    let keyroots_a = keyroots(&lml_a);
    let keyroots_b = keyroots(&lml_b);

    let mut treedist = vec![0.0f64; n * m];
    let mut fd = vec![0.0f64; (n + 1) * (m + 1)];
    let width = m + 1;

    for &i in &keyroots_a {
        for &j in &keyroots_b {
            let (li, lj) = (lml_a[i], lml_b[j]);
            let rows = i - li + 2;
            let cols = j - lj + 2;
            fd[0] = 0.0;
            for x in 1..rows {
                fd[x * width] = fd[(x - 1) * width] + del[li + x - 1];
            }
            for y in 1..cols {
                fd[y] = fd[y - 1] + ins[lj + y - 1];
            }
            for x in 1..rows {
                let node_a = li + x - 1;
                for y in 1..cols {
                    let node_b = lj + y - 1;
                    let delete = fd[(x - 1) * width + y] + del[node_a];
                    let insert = fd[x * width + y - 1] + ins[node_b];
                    let value = if lml_a[node_a] == li && lml_b[node_b] == lj {
                        let rename = fd[(x - 1) * width + y - 1]
                            + costs.rename(a.label(order_a[node_a]), b.label(order_b[node_b]));
                        let v = delete.min(insert).min(rename);
                        treedist[node_a * m + node_b] = v;
                        v
                    } else {
                        let px = lml_a[node_a] - li;
                        let py = lml_b[node_b] - lj;
                        let subtree = fd[px * width + py] + treedist[node_a * m + node_b];
                        delete.min(insert).min(subtree)
                    };
                    fd[x * width + y] = value;
                }
            }
        }
    }
    treedist[(n - 1) * m + (m - 1)]
}

/// Nodes that have a left sibling, plus the root: for each distinct leftmost
/// leaf, the highest node with that leftmost leaf.
fn keyroots(lml: &[usize]) -> Vec<usize> {
    let mut seen = vec![None; lml.len()];
    for (node, &l) in lml.iter().enumerate() {
        seen[l] = Some(node);
    }
    let mut roots: Vec<usize> = seen.into_iter().flatten().collect();
    roots.sort_unstable();
    roots
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Unit;
    impl EditCosts<char> for Unit {
        fn insert(&self, _: &char) -> f64 {
            1.0
        }
        fn delete(&self, _: &char) -> f64 {
            1.0
        }
        fn rename(&self, a: &char, b: &char) -> f64 {
            if a == b {
                0.0
            } else {
                1.0
            }
        }
    }

    // The textbook Zhang-Shasha example: f(d(a c(b)) e) vs f(c(d(a b)) e)
    fn classic() -> (OrderedTree<char>, OrderedTree<char>) {
        let mut t1 = OrderedTree::new('f');
        let d = t1.add_child(0, 'd');
        t1.add_child(0, 'e');
        t1.add_child(d, 'a');
        let c = t1.add_child(d, 'c');
        t1.add_child(c, 'b');

        let mut t2 = OrderedTree::new('f');
        let c = t2.add_child(0, 'c');
        t2.add_child(0, 'e');
        let d = t2.add_child(c, 'd');
        t2.add_child(d, 'a');
        t2.add_child(d, 'b');
        (t1, t2)
    }

    #[test]
    fn classic_pair_has_distance_two() {
        let (a, b) = classic();
        assert_eq!(edit_distance(&a, &b, &Unit), 2.0);
        assert_eq!(edit_distance(&b, &a, &Unit), 2.0);
    }

    #[test]
    fn identical_and_empty() {
        let (a, _) = classic();
        assert_eq!(edit_distance(&a, &a, &Unit), 0.0);
        assert_eq!(edit_distance(&a, &OrderedTree::empty(), &Unit), 6.0);
        assert_eq!(edit_distance(&OrderedTree::empty(), &a, &Unit), 6.0);
    }

    #[test]
    fn postorder_leftmost_leaves() {
        let (a, _) = classic();
        let (order, lml) = a.postorder();
        // postorder: a b c d e f
        let labels: String = order.iter().map(|&i| *a.label(i)).collect();
        assert_eq!(labels, "abcdef");
        assert_eq!(lml, vec![0, 1, 1, 0, 4, 0]);
        assert_eq!(keyroots(&lml), vec![2, 4, 5]);
    }
}
