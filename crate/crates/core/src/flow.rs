//! Maximum flow on small real-capacity networks (Dinic's algorithm), used
//! for the transport feasibility checks behind the Prohorov-type distances.

use std::collections::VecDeque;

/// Residual capacities at or below this are treated as saturated.
const EPS: f64 = 1e-15;

struct Edge {
    to: usize,
    cap: f64,
}

pub(crate) struct FlowNetwork {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
    level: Vec<i64>,
    next: Vec<usize>,
}

impl FlowNetwork {
    pub(crate) fn new(nodes: usize) -> Self {
        Self { edges: Vec::new(), adj: vec![Vec::new(); nodes], level: vec![0; nodes], next: vec![0; nodes] }
    }

    pub(crate) fn add_edge(&mut self, from: usize, to: usize, cap: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge { to: from, cap: 0.0 });
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.iter_mut().for_each(|l| *l = -1);
        self.level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &e in &self.adj[v] {
                let to = self.edges[e].to;
                if self.edges[e].cap > EPS && self.level[to] < 0 {
                    self.level[to] = self.level[v] + 1;
                    queue.push_back(to);
                }
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, v: usize, t: usize, pushed: f64) -> f64 {
        if v == t {
            return pushed;
        }
        while self.next[v] < self.adj[v].len() {
            let e = self.adj[v][self.next[v]];
            let to = self.edges[e].to;
            if self.edges[e].cap > EPS && self.level[to] == self.level[v] + 1 {
                let got = self.dfs(to, t, pushed.min(self.edges[e].cap));
                if got > 0.0 {
                    self.edges[e].cap -= got;
                    self.edges[e ^ 1].cap += got;
                    return got;
                }
            }
            self.next[v] += 1;
        }
        0.0
    }

    pub(crate) fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        while self.bfs(s, t) {
            self.next.iter_mut().for_each(|x| *x = 0);
            loop {
                let f = self.dfs(s, t, f64::INFINITY);
                if f <= 0.0 {
                    break;
                }
                total += f;
            }
        }
        total
    }
}

/// Largest mass a coupling of `p` and `q` can put on the pairs `(i, j)` with
/// `allowed(i, j)`.
pub(crate) fn max_coupled_mass(p: &[f64], q: &[f64], allowed: impl Fn(usize, usize) -> bool) -> f64 {
    let (m, k) = (p.len(), q.len());
    let (s, t) = (m + k, m + k + 1);
    let mut net = FlowNetwork::new(m + k + 2);
    for (i, &w) in p.iter().enumerate() {
        if w > 0.0 {
            net.add_edge(s, i, w);
        }
    }
    for (j, &w) in q.iter().enumerate() {
        if w > 0.0 {
            net.add_edge(m + j, t, w);
        }
    }
    for i in 0..m {
        for j in 0..k {
            if p[i] > 0.0 && q[j] > 0.0 && allowed(i, j) {
                net.add_edge(i, m + j, f64::INFINITY);
            }
        }
    }
    net.max_flow(s, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_networks() {
        let mut net = FlowNetwork::new(4);
        net.add_edge(0, 1, 3.0);
        net.add_edge(0, 2, 2.0);
        net.add_edge(1, 2, 1.0);
        net.add_edge(1, 3, 2.0);
        net.add_edge(2, 3, 3.0);
        assert_eq!(net.max_flow(0, 3), 5.0);
        let p = [0.5, 0.5];
        let q = [1.0, 0.0];
        assert_eq!(max_coupled_mass(&p, &q, |i, j| i == j), 0.5);
        assert_eq!(max_coupled_mass(&p, &q, |_, _| true), 1.0);
    }
}
