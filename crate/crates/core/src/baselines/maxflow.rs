use std::collections::VecDeque;

/// Dinic max-flow on a directed graph with f64 capacities.
#[derive(Clone, Debug, Default)]
pub struct FlowGraph {
    head: Vec<usize>,
    // Edge list; edge `e ^ 1` is the reverse of `e`.
    to: Vec<usize>,
    cap: Vec<f64>,
    next: Vec<usize>,
}

const NIL: usize = usize::MAX;

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        Self { head: vec![NIL; nodes], ..Default::default() }
    }

    pub fn nodes(&self) -> usize {
        self.head.len()
    }

    fn push_edge(&mut self, from: usize, to: usize, cap: f64) {
        self.to.push(to);
        self.cap.push(cap);
        self.next.push(self.head[from]);
        self.head[from] = self.to.len() - 1;
    }

    /// Adds `a → b` with capacity `ab` and `b → a` with capacity `ba`.
    pub fn add_edge(&mut self, a: usize, b: usize, ab: f64, ba: f64) {
        self.push_edge(a, b, ab);
        self.push_edge(b, a, ba);
    }

    fn levels(&self, s: usize) -> Vec<usize> {
        let mut level = vec![NIL; self.nodes()];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            let mut e = self.head[u];
            while e != NIL {
                let v = self.to[e];
                if self.cap[e] > 0.0 && level[v] == NIL {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
                e = self.next[e];
            }
        }
        level
    }

    // Iterative blocking-flow search along the level graph.
    fn augment(&mut self, s: usize, t: usize, level: &[usize], iter: &mut [usize]) -> f64 {
        let mut path: Vec<usize> = Vec::new();
        let mut u = s;
        loop {
            if u == t {
                let f = path.iter().map(|&e| self.cap[e]).fold(f64::INFINITY, f64::min);
                for &e in &path {
                    self.cap[e] -= f;
                    self.cap[e ^ 1] += f;
                }
                return f;
            }
            let mut advanced = false;
            while iter[u] != NIL {
                let e = iter[u];
                let v = self.to[e];
                if self.cap[e] > 0.0 && level[v] == level[u] + 1 {
                    path.push(e);
                    u = v;
                    advanced = true;
                    break;
                }
                iter[u] = self.next[e];
            }
            if !advanced {
                if u == s {
                    return 0.0;
                }
                // Dead end: retreat and skip the edge that led here.
                let e = path.pop().expect("non-source node has an incoming path edge");
                u = self.to[e ^ 1];
                iter[u] = self.next[iter[u]];
            }
        }
    }

    /// Runs to completion and returns the total flow.
    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        loop {
            let level = self.levels(s);
            if level[t] == NIL {
                return total;
            }
            let mut iter = self.head.clone();
            loop {
                let f = self.augment(s, t, &level, &mut iter);
                if f <= 0.0 {
                    break;
                }
                total += f;
            }
        }
    }

    /// Nodes reachable from `s` in the residual graph (the source side of a minimum cut).
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        self.levels(s).into_iter().map(|l| l != NIL).collect()
    }
}
