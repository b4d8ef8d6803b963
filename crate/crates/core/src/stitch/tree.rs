use std::collections::BTreeMap;

use crate::Real;

use super::Homography;

/// Result of matching images `a < b`: `homography` maps points of `a` onto `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseAlignment<T: Real> {
    pub a: usize,
    pub b: usize,
    pub homography: Homography<T>,
    pub inliers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeEdge {
    pub a: usize,
    pub b: usize,
    pub inliers: usize,
}

/// Spanning tree of one connected component of the match graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentTree<T: Real> {
    pub reference: usize,
    /// Image ids in the component, ascending.
    pub nodes: Vec<usize>,
    pub edges: Vec<TreeEdge>,
    /// Per image, the transform into the reference image's frame.
    pub transforms: BTreeMap<usize, Homography<T>>,
}

struct DisjointSets(Vec<usize>);

impl DisjointSets {
    fn find(&mut self, i: usize) -> usize {
        let mut r = i;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut i = i;
        while self.0[i] != r {
            let next = self.0[i];
            self.0[i] = r;
            i = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.0[hi] = lo;
        true
    }
}

/// Builds one alignment tree per connected component of images `0..n`.
///
/// Pairs with fewer than `min_inliers` inliers are dropped. Each component
/// gets a maximum spanning tree by inlier count (ties to the lower id pair),
/// its reference is the image with the largest total inlier count over the
/// kept edges (ties to the lower id), and transforms are chained along tree
/// paths. Trees come out ordered by their smallest image id.
pub fn build_alignment_trees<T: Real>(
    n: usize,
    pairs: &[PairwiseAlignment<T>],
    min_inliers: usize,
) -> Vec<AlignmentTree<T>> {
    let mut kept: Vec<&PairwiseAlignment<T>> = pairs
        .iter()
        .filter(|p| p.inliers >= min_inliers && p.a != p.b && p.a < n && p.b < n)
        .collect();
    kept.sort_by(|x, y| {
        y.inliers
            .cmp(&x.inliers)
            .then((x.a.min(x.b), x.a.max(x.b)).cmp(&(y.a.min(y.b), y.a.max(y.b))))
    });

    let mut components = DisjointSets((0..n).collect());
    let mut tree_edges: Vec<&PairwiseAlignment<T>> = Vec::new();
    let mut incident = vec![0usize; n];
    for p in &kept {
        incident[p.a] += p.inliers;
        incident[p.b] += p.inliers;
        if components.union(p.a, p.b) {
            tree_edges.push(p);
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        groups.entry(components.find(i)).or_default().push(i);
    }
    let mut trees: Vec<AlignmentTree<T>> = groups
        .into_values()
        .map(|nodes| {
            let reference = *nodes
                .iter()
                .max_by(|&&x, &&y| incident[x].cmp(&incident[y]).then(y.cmp(&x)))
                .unwrap();
            let edges: Vec<&PairwiseAlignment<T>> = tree_edges
                .iter()
                .copied()
                .filter(|e| nodes.binary_search(&e.a).is_ok())
                .collect();
            let mut transforms = BTreeMap::new();
            transforms.insert(reference, Homography::identity());
            let mut frontier = vec![reference];
            while let Some(p) = frontier.pop() {
                let tp = transforms[&p];
                for e in &edges {
                    let (child, t) = if e.b == p && !transforms.contains_key(&e.a) {
                        // a → b → reference
                        (e.a, tp.compose(&e.homography))
                    } else if e.a == p && !transforms.contains_key(&e.b) {
                        (e.b, tp.compose(&e.homography.inverse()))
                    } else {
                        continue;
                    };
                    transforms.insert(child, t);
                    frontier.push(child);
                }
            }
            let mut edges: Vec<TreeEdge> = edges
                .iter()
                .map(|e| TreeEdge {
                    a: e.a,
                    b: e.b,
                    inliers: e.inliers,
                })
                .collect();
            edges.sort_by_key(|e| (e.a, e.b));
            AlignmentTree {
                reference,
                nodes,
                edges,
                transforms,
            }
        })
        .collect();
    trees.sort_by_key(|t| t.nodes[0]);
    trees
}
