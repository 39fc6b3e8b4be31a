//! Transportation simplex (network simplex on the complete bipartite graph).
//!
//! The basis is a spanning tree of `m + n - 1` cells over row and column
//! nodes. Each pivot computes node potentials on the tree, picks the most
//! negative reduced cost, and pushes flow around the unique cycle it closes.
//! Degenerate stalls fall back to Bland's rule.

#[derive(Debug, Clone)]
pub(crate) struct Plan {
    pub cost: f64,
    pub iterations: usize,
    #[allow(dead_code)]
    pub flow: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum SimplexError {
    IterationLimit(usize),
    BrokenBasis,
}

const DEGENERATE_STALL: usize = 50;

/// Minimizes `sum cost[i*n+j] * x[i][j]` with row sums `supply` and column
/// sums `demand`. Demand is rescaled to the supply total first.
pub(crate) fn solve(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<Plan, SimplexError> {
    let m = supply.len();
    let n = demand.len();
    debug_assert_eq!(cost.len(), m * n);

    let total_supply: f64 = supply.iter().sum();
    let total_demand: f64 = demand.iter().sum();
    let demand: Vec<f64> = demand
        .iter()
        .map(|d| d * total_supply / total_demand)
        .collect();

    let mut flow = vec![0.0; m * n];
    let mut basic = vec![false; m * n];
    northwest_corner(supply, &demand, &mut flow, &mut basic);

    let scale = cost.iter().fold(1.0f64, |acc, c| acc.max(c.abs()));
    let tol = 1e-12 * scale;
    let limit = 50 * m * n + 1000;

    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut stalled = 0usize;
    let mut iterations = 0usize;
    loop {
        potentials(m, n, cost, &basic, &mut u, &mut v)?;

        let bland = stalled >= DEGENERATE_STALL;
        let mut entering: Option<(usize, f64)> = None;
        'scan: for i in 0..m {
            for j in 0..n {
                let cell = i * n + j;
                if basic[cell] {
                    continue;
                }
                let reduced = cost[cell] - u[i] - v[j];
                if reduced < -tol {
                    match entering {
                        Some((_, best)) if best <= reduced => {}
                        _ => entering = Some((cell, reduced)),
                    }
                    if bland {
                        break 'scan;
                    }
                }
            }
        }
        let Some((enter, _)) = entering else { break };

        if iterations >= limit {
            return Err(SimplexError::IterationLimit(iterations));
        }
        iterations += 1;

        let path =
            tree_path(m, n, &basic, enter / n, enter % n).ok_or(SimplexError::BrokenBasis)?;
        // Path cells run from the entering row to the entering column; the
        // last one shares the entering column and therefore loses flow.
        let len = path.len();
        let mut leave: Option<usize> = None;
        let mut theta = f64::INFINITY;
        for (k, &cell) in path.iter().enumerate() {
            if (len - 1 - k) % 2 == 0
                && (flow[cell] < theta || (flow[cell] == theta && leave.map_or(true, |l| cell < l)))
            {
                theta = flow[cell];
                leave = Some(cell);
            }
        }
        let leave = leave.ok_or(SimplexError::BrokenBasis)?;
        let theta = theta.max(0.0);

        flow[enter] += theta;
        for (k, &cell) in path.iter().enumerate() {
            if (len - 1 - k) % 2 == 0 {
                flow[cell] = (flow[cell] - theta).max(0.0);
            } else {
                flow[cell] += theta;
            }
        }
        flow[leave] = 0.0;
        basic[leave] = false;
        basic[enter] = true;

        if theta == 0.0 {
            stalled += 1;
        } else {
            stalled = 0;
        }
    }

    let cost_value = flow.iter().zip(cost).map(|(x, c)| x * c).sum::<f64>();
    Ok(Plan {
        cost: cost_value.max(0.0),
        iterations,
        flow,
    })
}

fn northwest_corner(supply: &[f64], demand: &[f64], flow: &mut [f64], basic: &mut [bool]) {
    let m = supply.len();
    let n = demand.len();
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let x = s[i].min(d[j]).max(0.0);
        let cell = i * n + j;
        flow[cell] = x;
        basic[cell] = true;
        let row_done = s[i] <= d[j];
        s[i] -= x;
        d[j] -= x;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if i == m - 1 {
            j += 1;
        } else if j == n - 1 || row_done {
            i += 1;
        } else {
            j += 1;
        }
    }
}

/// Solves `u_i + v_j = c_ij` on basic cells with `u_0 = 0`.
fn potentials(
    m: usize,
    n: usize,
    cost: &[f64],
    basic: &[bool],
    u: &mut [f64],
    v: &mut [f64],
) -> Result<(), SimplexError> {
    let mut row_set = vec![false; m];
    let mut col_set = vec![false; n];
    row_set[0] = true;
    u[0] = 0.0;
    let mut stack = vec![(true, 0usize)];
    let mut visited = 1;
    while let Some((is_row, k)) = stack.pop() {
        if is_row {
            for j in 0..n {
                if basic[k * n + j] && !col_set[j] {
                    v[j] = cost[k * n + j] - u[k];
                    col_set[j] = true;
                    visited += 1;
                    stack.push((false, j));
                }
            }
        } else {
            for i in 0..m {
                if basic[i * n + k] && !row_set[i] {
                    u[i] = cost[i * n + k] - v[k];
                    row_set[i] = true;
                    visited += 1;
                    stack.push((true, i));
                }
            }
        }
    }
    if visited == m + n {
        Ok(())
    } else {
        Err(SimplexError::BrokenBasis)
    }
}

/// Basic cells on the tree path from row `start` to column `target`.
fn tree_path(
    m: usize,
    n: usize,
    basic: &[bool],
    start: usize,
    target: usize,
) -> Option<Vec<usize>> {
    // nodes: rows 0..m, columns m..m+n; parent stores (node, cell)
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; m + n];
    let mut seen = vec![false; m + n];
    seen[start] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    let goal = m + target;
    while let Some(node) = queue.pop_front() {
        if node == goal {
            break;
        }
        if node < m {
            for j in 0..n {
                let cell = node * n + j;
                if basic[cell] && !seen[m + j] {
                    seen[m + j] = true;
                    parent[m + j] = Some((node, cell));
                    queue.push_back(m + j);
                }
            }
        } else {
            let j = node - m;
            for i in 0..m {
                let cell = i * n + j;
                if basic[cell] && !seen[i] {
                    seen[i] = true;
                    parent[i] = Some((node, cell));
                    queue.push_back(i);
                }
            }
        }
    }
    if !seen[goal] {
        return None;
    }
    let mut cells = Vec::new();
    let mut node = goal;
    while node != start {
        let (prev, cell) = parent[node]?;
        cells.push(cell);
        node = prev;
    }
    cells.reverse();
    Some(cells)
}
