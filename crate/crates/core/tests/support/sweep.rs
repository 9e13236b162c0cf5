//! Backward/forward sweep load flow, written independently of the Newton
//! solver to serve as an oracle on radial feeders.

#[derive(Clone, Copy, Debug)]
struct C(f64, f64);

impl C {
    fn add(self, o: C) -> C {
        C(self.0 + o.0, self.1 + o.1)
    }
    fn sub(self, o: C) -> C {
        C(self.0 - o.0, self.1 - o.1)
    }
    fn mul(self, o: C) -> C {
        C(self.0 * o.0 - self.1 * o.1, self.0 * o.1 + self.1 * o.0)
    }
    fn div(self, o: C) -> C {
        let d = o.0 * o.0 + o.1 * o.1;
        C((self.0 * o.0 + self.1 * o.1) / d, (self.1 * o.0 - self.0 * o.1) / d)
    }
    fn conj(self) -> C {
        C(self.0, -self.1)
    }
    fn abs(self) -> f64 {
        self.0.hypot(self.1)
    }
}

/// Radial sweep. `branches` are `(a, b, r, x)` in p.u. with arbitrary
/// orientation; `p`, `q` are consumption per bus (slack entry ignored).
/// Returns bus voltages as `(re, im)` pairs.
pub fn sweep_voltages(
    n: usize,
    slack: usize,
    v_slack: f64,
    branches: &[(usize, usize, f64, f64)],
    p: &[f64],
    q: &[f64],
) -> Vec<(f64, f64)> {
    let mut adj = vec![Vec::new(); n];
    for (k, &(a, b, _, _)) in branches.iter().enumerate() {
        adj[a].push((b, k));
        adj[b].push((a, k));
    }
    // depth-first ordering from the slack bus
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![slack];
    let mut visited = vec![false; n];
    visited[slack] = true;
    while let Some(u) = stack.pop() {
        order.push(u);
        for &(w, k) in &adj[u] {
            if !visited[w] {
                visited[w] = true;
                parent[w] = Some((u, k));
                stack.push(w);
            }
        }
    }
    let mut v = vec![C(v_slack, 0.0); n];
    for _ in 0..1000 {
        let mut inj: Vec<C> = (0..n)
            .map(|i| {
                if i == slack {
                    C(0.0, 0.0)
                } else {
                    C(p[i], q[i]).div(v[i]).conj()
                }
            })
            .collect();
        // backward: accumulate currents toward the root
        let mut branch_i = vec![C(0.0, 0.0); branches.len()];
        for &u in order.iter().rev() {
            if let Some((par, k)) = parent[u] {
                branch_i[k] = inj[u];
                inj[par] = inj[par].add(inj[u]);
            }
        }
        let mut delta: f64 = 0.0;
        for &u in &order {
            if let Some((par, k)) = parent[u] {
                let (_, _, r, x) = branches[k];
                let nv = v[par].sub(C(r, x).mul(branch_i[k]));
                delta = delta.max(nv.sub(v[u]).abs());
                v[u] = nv;
            }
        }
        if delta < 1e-14 {
            break;
        }
    }
    v.into_iter().map(|c| (c.0, c.1)).collect()
}

/// Fixed-point iteration `V₂ = V₁ − z · conj(S / V₂)` for a two-bus feeder.
pub fn two_bus_fixed_point(v1: f64, r: f64, x: f64, p: f64, q: f64) -> f64 {
    let z = C(r, x);
    let s = C(p, q);
    let mut v2 = C(v1, 0.0);
    for _ in 0..10_000 {
        let next = C(v1, 0.0).sub(z.mul(s.div(v2).conj()));
        if next.sub(v2).abs() < 1e-15 {
            v2 = next;
            break;
        }
        v2 = next;
    }
    v2.abs()
}
