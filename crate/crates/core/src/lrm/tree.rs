//! Exhaustive probability trees for small discretized models.
//!
//! Prices on the tree are discounted. Every node stores the conditional
//! probability of being reached from its parent.

use crate::error::{ArsvError, Result};
use crate::kernels::{mmm_factor, StepCumulants};
use crate::model::{latent_cumulant, InnovationLaw, ModelParams, ShockLaws};

use super::OptionSpec;

pub const MAX_TREE_HORIZON: usize = 4;
pub const MAX_TREE_SUPPORT: usize = 5;
const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub parent: Option<usize>,
    pub depth: usize,
    /// Conditional probability given the parent.
    pub prob: f64,
    /// Discounted price.
    pub price: f64,
    pub children: Vec<usize>,
    /// Discounted claim value, set on leaves.
    pub payoff: Option<f64>,
    /// Latent log-variance, on trees built from the model.
    pub log_variance: Option<f64>,
    /// Centered return and parent cumulants of the step into this node.
    pub step: Option<(f64, StepCumulants)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbTree {
    pub nodes: Vec<TreeNode>,
    /// Risk-free log-return per step.
    pub rate: f64,
}

impl ProbTree {
    pub fn new(root_price: f64, rate: f64) -> Self {
        ProbTree {
            nodes: vec![TreeNode {
                parent: None,
                depth: 0,
                prob: 1.0,
                price: root_price,
                children: Vec::new(),
                payoff: None,
                log_variance: None,
                step: None,
            }],
            rate,
        }
    }

    pub fn add_child(&mut self, parent: usize, prob: f64, price: f64) -> usize {
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(TreeNode {
            parent: Some(parent),
            depth,
            prob,
            price,
            children: Vec::new(),
            payoff: None,
            log_variance: None,
            step: None,
        });
        self.nodes[parent].children.push(id);
        id
    }

    pub fn set_payoff(&mut self, node: usize, discounted_value: f64) {
        self.nodes[node].payoff = Some(discounted_value);
    }

    pub fn horizon(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].children.is_empty())
    }

    /// Unconditional probability of reaching a node.
    pub fn path_probability(&self, mut node: usize) -> f64 {
        let mut p = 1.0;
        while let Some(parent) = self.nodes[node].parent {
            p *= self.nodes[node].prob;
            node = parent;
        }
        p
    }

    /// Checks probabilities, leaf depths and payoffs.
    pub fn validate(&self) -> Result<()> {
        let horizon = self.horizon();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.children.is_empty() {
                if n.depth != horizon {
                    return Err(ArsvError::InvalidInput(format!(
                        "leaf {i} at depth {} but horizon is {horizon}",
                        n.depth
                    )));
                }
                if n.payoff.is_none() {
                    return Err(ArsvError::InvalidInput(format!("leaf {i} has no payoff")));
                }
            } else {
                let total: f64 = n.children.iter().map(|&c| self.nodes[c].prob).sum();
                if (total - 1.0).abs() > PROB_TOL {
                    return Err(ArsvError::InvalidInput(format!(
                        "children of node {i} carry mass {total}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Full enumeration of a discretized model from `(s0, b0)` over
    /// `horizon` steps. Each step branches over every pair of return and
    /// volatility shocks.
    pub fn arsv(params: &ModelParams, laws: &ShockLaws, s0: f64, b0: f64, horizon: usize) -> Result<Self> {
        params.validate()?;
        let (eps, w) = match (&laws.eps, &laws.w) {
            (InnovationLaw::Discrete(e), InnovationLaw::Discrete(w)) => (e, w),
            _ => {
                return Err(ArsvError::Unsupported(
                    "trees need discrete return and volatility shocks".into(),
                ))
            }
        };
        if horizon == 0 || horizon > MAX_TREE_HORIZON {
            return Err(ArsvError::Unsupported(format!(
                "tree horizon must be in 1..={MAX_TREE_HORIZON}, got {horizon}"
            )));
        }
        if eps.len() > MAX_TREE_SUPPORT || w.len() > MAX_TREE_SUPPORT {
            return Err(ArsvError::Unsupported(format!(
                "shock supports must have at most {MAX_TREE_SUPPORT} points"
            )));
        }
        let mut tree = ProbTree::new(s0, params.r);
        tree.nodes[0].log_variance = Some(b0);
        let mut frontier = vec![0];
        for _ in 0..horizon {
            let mut next = Vec::with_capacity(frontier.len() * eps.len() * w.len());
            for &node in &frontier {
                let b = tree.nodes[node].log_variance.expect("model tree node");
                let price = tree.nodes[node].price;
                let cum = StepCumulants {
                    sigma_hat: (0.5 * params.predict_log_variance(b)).exp(),
                    k1: latent_cumulant(params, laws, b, 1.0),
                    k2: latent_cumulant(params, laws, b, 2.0),
                };
                for (&wz, &pw) in w.points().iter().zip(w.probs()) {
                    let b_next = params.predict_log_variance(b) + params.sigma_w * wz;
                    let sigma = (0.5 * b_next).exp();
                    for (&e, &pe) in eps.points().iter().zip(eps.probs()) {
                        let x = sigma * e;
                        let c = tree.add_child(node, pe * pw, price * x.exp());
                        tree.nodes[c].log_variance = Some(b_next);
                        tree.nodes[c].step = Some((x, cum));
                        next.push(c);
                    }
                }
            }
            frontier = next;
        }
        Ok(tree)
    }

    /// Set leaf payoffs to the discounted value of a call.
    pub fn apply_call(&mut self, option: &OptionSpec) -> Result<()> {
        let horizon = self.horizon();
        if option.maturity != horizon {
            return Err(ArsvError::InvalidInput(format!(
                "option maturity {} does not match tree horizon {horizon}",
                option.maturity
            )));
        }
        let grow = (self.rate * horizon as f64).exp();
        let leaves: Vec<usize> = self.leaves().collect();
        for leaf in leaves {
            let s_t = self.nodes[leaf].price * grow;
            self.nodes[leaf].payoff = Some(option.payoff(s_t) / grow);
        }
        Ok(())
    }
}

/// Discounted value at every node and the hedge ratio chosen at every
/// internal node (`None` on leaves).
#[derive(Debug, Clone, PartialEq)]
pub struct TreeLrm {
    pub value: Vec<f64>,
    pub ratio: Vec<Option<f64>>,
}

/// Conditional mean and variance of the price increment out of `node`
/// under the node-wise probabilities `probs`.
fn increment_moments(tree: &ProbTree, probs: &[f64], node: usize) -> Result<(f64, f64)> {
    let n = &tree.nodes[node];
    let mean: f64 = n
        .children
        .iter()
        .map(|&c| probs[c] * (tree.nodes[c].price - n.price))
        .sum();
    let var: f64 = n
        .children
        .iter()
        .map(|&c| probs[c] * (tree.nodes[c].price - n.price - mean).powi(2))
        .sum();
    if !(var > 0.0) {
        return Err(ArsvError::DegenerateDenominator {
            denom: var,
            threshold: 0.0,
        });
    }
    Ok((mean, var))
}

/// Backward LRM recursion under node-wise probabilities `probs`:
/// `xi = cov(V', dS) / var(dS)` and `V = E[V'] - xi E[dS]`.
pub fn lrm_backward(tree: &ProbTree, probs: &[f64]) -> Result<TreeLrm> {
    tree.validate()?;
    let mut value = vec![0.0; tree.nodes.len()];
    let mut ratio = vec![None; tree.nodes.len()];
    let mut order: Vec<usize> = (0..tree.nodes.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(tree.nodes[i].depth));
    for i in order {
        let n = &tree.nodes[i];
        if n.children.is_empty() {
            value[i] = n.payoff.expect("validated");
            continue;
        }
        let (m, var) = increment_moments(tree, probs, i)?;
        let ev: f64 = n.children.iter().map(|&c| probs[c] * value[c]).sum();
        let cov: f64 = n
            .children
            .iter()
            .map(|&c| probs[c] * (value[c] - ev) * (tree.nodes[c].price - n.price - m))
            .sum();
        let xi = cov / var;
        value[i] = ev - xi * m;
        ratio[i] = Some(xi);
    }
    Ok(TreeLrm { value, ratio })
}

fn physical_probs(tree: &ProbTree) -> Vec<f64> {
    tree.nodes.iter().map(|n| n.prob).collect()
}

/// LRM under the physical measure.
pub fn physical_lrm(tree: &ProbTree) -> Result<TreeLrm> {
    lrm_backward(tree, &physical_probs(tree))
}

/// Node-wise probabilities of the minimal (signed) martingale measure,
/// `q = p (1 + lambda (dS - E dS))` with `lambda = -E dS / var dS`.
pub fn minimal_martingale_probs(tree: &ProbTree) -> Result<Vec<f64>> {
    let p = physical_probs(tree);
    let mut q = p.clone();
    for i in 0..tree.nodes.len() {
        let n = &tree.nodes[i];
        if n.children.is_empty() {
            continue;
        }
        let (m, var) = increment_moments(tree, &p, i)?;
        let lambda = -m / var;
        for &c in &n.children {
            q[c] = p[c] * (1.0 + lambda * (tree.nodes[c].price - n.price - m));
        }
    }
    Ok(q)
}

/// Node-wise probabilities obtained from the closed-form minimal martingale
/// factor with the cumulants stored on each step.
pub fn kernel_probs(tree: &ProbTree) -> Result<Vec<f64>> {
    let mut q = physical_probs(tree);
    for (i, n) in tree.nodes.iter().enumerate().skip(1) {
        let (x, cum) = n.step.ok_or_else(|| {
            ArsvError::InvalidInput(format!("node {i} carries no model step"))
        })?;
        q[i] *= mmm_factor(x, &cum)?;
    }
    Ok(q)
}

/// Physical-measure LRM for a call on a model tree.
pub fn lrm_quote_physical(option: &OptionSpec, tree: &ProbTree) -> Result<TreeLrm> {
    let mut t = tree.clone();
    t.apply_call(option)?;
    physical_lrm(&t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HedgeRelationEntry {
    pub node: usize,
    pub depth: usize,
    pub ratio_q: f64,
    pub ratio_p: f64,
    /// `E^Q[L dS] / var^Q(dS)` over the children of the node.
    pub correction: f64,
    pub discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HedgeRelationReport {
    pub entries: Vec<HedgeRelationEntry>,
    pub max_discrepancy: f64,
    /// Largest node-wise gap between physical and minimal-measure values.
    pub max_value_gap: f64,
    /// Global risk `L` at every node.
    pub global_risk: Vec<f64>,
}

/// Compares the minimal-measure hedge with the physical hedge plus the
/// global-risk correction at every internal node. Leaf payoffs must be set.
pub fn hedge_relation_check(tree: &ProbTree) -> Result<HedgeRelationReport> {
    let phys = physical_lrm(tree)?;
    let q = minimal_martingale_probs(tree)?;
    let mart = lrm_backward(tree, &q)?;
    let v0 = phys.value[0];

    // gains and global risk top-down: L = V - V_0 - G
    let mut gains = vec![0.0; tree.nodes.len()];
    let mut risk = vec![0.0; tree.nodes.len()];
    let mut order: Vec<usize> = (0..tree.nodes.len()).collect();
    order.sort_by_key(|&i| tree.nodes[i].depth);
    for &i in &order {
        if let Some(parent) = tree.nodes[i].parent {
            let xi = phys.ratio[parent].expect("internal node");
            gains[i] = gains[parent] + xi * (tree.nodes[i].price - tree.nodes[parent].price);
        }
        risk[i] = phys.value[i] - v0 - gains[i];
    }

    let mut entries = Vec::new();
    for &i in &order {
        let n = &tree.nodes[i];
        if n.children.is_empty() {
            continue;
        }
        let (m, var) = increment_moments(tree, &q, i)?;
        let cross: f64 = n
            .children
            .iter()
            .map(|&c| q[c] * risk[c] * (tree.nodes[c].price - n.price - m))
            .sum();
        let correction = cross / var;
        let ratio_q = mart.ratio[i].expect("internal node");
        let ratio_p = phys.ratio[i].expect("internal node");
        entries.push(HedgeRelationEntry {
            node: i,
            depth: n.depth,
            ratio_q,
            ratio_p,
            correction,
            discrepancy: (ratio_q - ratio_p - correction).abs(),
        });
    }
    let max_discrepancy = entries.iter().map(|e| e.discrepancy).fold(0.0, f64::max);
    let max_value_gap = phys
        .value
        .iter()
        .zip(&mart.value)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(HedgeRelationReport {
        entries,
        max_discrepancy,
        max_value_gap,
        global_risk: risk,
    })
}
