//! Random finite markets with explicit martingale measures, for property tests.
//!
//! Each internal node moves the basket prices `b` along a few directions
//! `±η(e_a − e_c)` between active currencies, and may add a devaluation child
//! (some active `b_k` drops to zero and its mass spreads over the other actives)
//! with a compensating child `b − t·δ` and its mirror `b + t·δ`. Each kernel
//! (a `±` pair, devaluation with compensation, compensation with mirror) has mean
//! `b`, so any positive mixture of kernels is a one-step martingale measure for `S̄`.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::exchange::BasketPrices;
use crate::tree::{ClaimVector, MarketTree, MeasureFamily, TreeMeasure, TreeSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomTreeConfig {
    pub d: usize,
    pub depth: usize,
    /// Probability that a node gets a devaluation pair.
    pub devaluation_prob: f64,
    /// Upper bound on the number of `±` pairs per node.
    pub max_pairs: usize,
}

impl RandomTreeConfig {
    pub fn new(d: usize, depth: usize) -> Self {
        Self { d, depth, devaluation_prob: 0.5, max_pairs: 2 }
    }
}

/// Children grouped into zero-mean kernels: `(child position, weight)` lists.
type Kernels = Vec<Vec<(usize, f64)>>;

#[derive(Debug, Clone)]
pub struct RandomMarket {
    pub tree: MarketTree<f64>,
    /// Per tree node; empty for leaves.
    kernels: Vec<Kernels>,
}

fn basket_matrix(b: &[f64]) -> Vec<Vec<f64>> {
    BasketPrices::new(b.iter().map(|x| x.clamp(0.0, 1.0)).collect())
        .expect("generated basket prices are valid")
        .recover_rates()
        .resolve_at_par()
        .to_grid()
}

struct Proto {
    id: String,
    parent: Option<usize>,
    basket: Vec<f64>,
    /// Kernels in terms of indices into the child list.
    kernels: Kernels,
    children: Vec<usize>,
}

fn children_of<R: Rng + ?Sized>(rng: &mut R, b: &[f64], cfg: &RandomTreeConfig) -> (Vec<Vec<f64>>, Kernels) {
    let mut active: Vec<usize> = (0..b.len()).filter(|&i| b[i] > 0.0).collect();
    if active.len() < 2 {
        return (vec![b.to_vec(), b.to_vec()], vec![vec![(0, 0.5), (1, 0.5)]]);
    }
    active.shuffle(rng);
    let min_b = active.iter().map(|&i| b[i]).fold(f64::INFINITY, f64::min);
    let n_pairs = rng.random_range(1..=cfg.max_pairs.max(1).min(active.len() - 1));
    let mut kids = Vec::new();
    let mut kernels = Vec::new();
    for l in 0..n_pairs {
        let (a, c) = (active[l], active[l + 1]);
        let eta = min_b * rng.random_range(0.1..0.9);
        let mut up = b.to_vec();
        let mut down = b.to_vec();
        up[a] += eta;
        up[c] -= eta;
        down[a] -= eta;
        down[c] += eta;
        kernels.push(vec![(kids.len(), 0.5), (kids.len() + 1, 0.5)]);
        kids.push(up);
        kids.push(down);
    }
    if rng.random_bool(cfg.devaluation_prob) {
        let k = active[rng.random_range(0..active.len())];
        let others: Vec<usize> = active.iter().copied().filter(|&j| j != k).collect();
        let shares: Vec<f64> = others.iter().map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = shares.iter().sum();
        let mut delta = vec![0.0; b.len()];
        delta[k] = -b[k];
        for (j, s) in others.iter().zip(&shares) {
            delta[*j] = b[k] * s / total;
        }
        let mut dev = b.to_vec();
        dev[k] = 0.0;
        for &j in &others {
            dev[j] += delta[j];
        }
        // b − t·δ stays positive for t < min_j b_j/δ_j over the gaining currencies
        let t_max = others.iter().map(|&j| b[j] / delta[j]).fold(f64::INFINITY, f64::min);
        let t = t_max.min(1.0) * rng.random_range(0.2..0.8);
        debug_assert!(t < 1.0);
        let comp: Vec<f64> = b.iter().zip(&delta).map(|(x, dx)| x - t * dx).collect();
        // b + t·δ, so that (comp, mirror) lets Q_k avoid the devaluation
        let mirror: Vec<f64> = b.iter().zip(&delta).map(|(x, dx)| x + t * dx).collect();
        let base = kids.len();
        kernels.push(vec![(base, t / (1.0 + t)), (base + 1, 1.0 / (1.0 + t))]);
        kernels.push(vec![(base + 1, 0.5), (base + 2, 0.5)]);
        kids.push(dev);
        kids.push(comp);
        kids.push(mirror);
    }
    (kids, kernels)
}

/// Samples a market with `cfg.d` currencies and leaves at `cfg.depth`.
pub fn random_market<R: Rng + ?Sized>(rng: &mut R, cfg: &RandomTreeConfig) -> RandomMarket {
    let d = cfg.d.max(1);
    let raw: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
    let total: f64 = raw.iter().sum();
    let root: Vec<f64> = raw.iter().map(|x| x / total).collect();

    let mut protos =
        vec![Proto { id: "root".into(), parent: None, basket: root, kernels: Vec::new(), children: Vec::new() }];
    let mut frontier = vec![0];
    for _ in 0..cfg.depth {
        let mut next = Vec::new();
        for &n in &frontier {
            let b = protos[n].basket.clone();
            let (kids, kernels) = children_of(rng, &b, cfg);
            let base = protos.len();
            for (c, kb) in kids.into_iter().enumerate() {
                let id = format!("{}.{}", protos[n].id, c);
                protos.push(Proto { id, parent: Some(n), basket: kb, kernels: Vec::new(), children: Vec::new() });
                protos[n].children.push(base + c);
                next.push(base + c);
            }
            protos[n].kernels = kernels;
        }
        frontier = next;
    }

    let mut spec = TreeSpec::new(basket_matrix(&protos[0].basket));
    for p in &protos[1..] {
        let parent = &protos[p.parent.expect("non-root")].id;
        spec.child(p.id.clone(), parent, basket_matrix(&p.basket));
    }
    spec.depth = cfg.depth;
    let tree = MarketTree::new(&spec).expect("generated tree is valid");
    let mut kernels = vec![Vec::new(); tree.len()];
    for p in &protos {
        let n = tree.find(&p.id).expect("node exists");
        kernels[n] = p
            .kernels
            .iter()
            .map(|k| {
                k.iter()
                    .map(|&(c, w)| {
                        let m = tree.find(&protos[p.children[c]].id).expect("child exists");
                        let pos = tree.children(n).iter().position(|&x| x == m).expect("child of n");
                        (pos, w)
                    })
                    .collect()
            })
            .collect();
    }
    RandomMarket { tree, kernels }
}

impl RandomMarket {
    /// Leaf weights from one-step transition probabilities `step(n)[child position]`.
    fn from_steps(&self, mut step: impl FnMut(usize) -> Vec<f64>) -> TreeMeasure<f64> {
        let t = &self.tree;
        let mut node = vec![0.0; t.len()];
        node[t.root()] = 1.0;
        for n in 0..t.len() {
            if t.is_leaf(n) {
                continue;
            }
            let s = step(n);
            for (&m, p) in t.children(n).iter().zip(s) {
                node[m] = node[n] * p;
            }
        }
        let w = t.leaves().iter().map(|&l| node[l]).collect();
        TreeMeasure::normalized(t, w).expect("positive total mass")
    }

    /// A random positive mixture of the kernels at `n` that avoid the children in `skip`.
    fn random_step<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, skip: impl Fn(usize) -> bool) -> Vec<f64> {
        let mut p = vec![0.0; self.tree.children(n).len()];
        let kernels: Vec<&Vec<(usize, f64)>> =
            self.kernels[n].iter().filter(|k| !k.iter().any(|&(c, _)| skip(c))).collect();
        let mix: Vec<f64> = kernels.iter().map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = mix.iter().sum();
        for (k, a) in kernels.iter().zip(&mix) {
            for &(c, w) in k.iter() {
                p[c] += a / total * w;
            }
        }
        p
    }

    /// A measure under which `S̄` is a martingale, charging every leaf.
    pub fn basket_martingale<R: Rng + ?Sized>(&self, rng: &mut R) -> TreeMeasure<f64> {
        self.from_steps(|n| self.random_step(rng, n, |_| false))
    }

    /// `Q_i` with `S_i` a `Q_i`-martingale, built from its own basket-martingale steps
    /// via `Q_i(m | n) = q(m | n)·S̄_i(m)/S̄_i(n)`, where `q` avoids the devaluation of `i`. Different currencies use independent
    /// steps, so the family is not consistent in general.
    pub fn martingale_family<R: Rng + ?Sized>(&self, rng: &mut R) -> MeasureFamily<f64> {
        let t = &self.tree;
        let measures = (0..t.d())
            .map(|i| {
                self.from_steps(|n| {
                    let bn = t.basket(n).get(i);
                    let kids = t.children(n);
                    // currency i cannot devalue under Q_i
                    let q = self.random_step(rng, n, |c| bn > 0.0 && t.basket(kids[c]).get(i) == 0.0);
                    t.children(n)
                        .iter()
                        .zip(q)
                        .map(|(&m, p)| if bn > 0.0 { p * t.basket(m).get(i) / bn } else { p })
                        .collect()
                })
            })
            .collect();
        MeasureFamily::new(t, measures).expect("one measure per currency")
    }

    /// Claim with a random positive basket payoff.
    pub fn random_claim<R: Rng + ?Sized>(&self, rng: &mut R) -> ClaimVector<f64> {
        let payoff: Vec<f64> = (0..self.tree.n_leaves()).map(|_| rng.random_range(0.0..2.0)).collect();
        ClaimVector::from_basket_payoff(&self.tree, &payoff).expect("finite payoff")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{check_consistency, disaggregate, ValuationMeasure};
    use crate::tree::{is_martingale, is_supermartingale};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_measures_have_the_advertised_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 0..40 {
            let cfg = RandomTreeConfig::new(1 + k % 4, 1 + k % 3);
            let m = random_market(&mut rng, &cfg);
            assert!(m.tree.validate().ok);
            let q = m.basket_martingale(&mut rng);
            let qbar = ValuationMeasure::new(&m.tree, q).unwrap();
            let fam = disaggregate(&m.tree, &qbar).unwrap();
            assert!(check_consistency(&m.tree, &fam).ok);
            let mf = m.martingale_family(&mut rng);
            for i in 0..cfg.d {
                let r = is_martingale(&m.tree, mf.get(i), i);
                assert!(r.ok, "{k} {i} {r:?}");
                assert!(is_supermartingale(&m.tree, fam.get(i), i).ok);
            }
        }
    }
}
