"""Branch probability annotation and feature access statistics.

Each inner node's training routing counts give the probability of stepping
to its left or right child; multiplying those probabilities along a node's
unique root path gives the absolute probability of visiting the node at
all. Feature access distributions count how often a feature is read on one
root-to-leaf traversal, computed by exact enumeration of all paths, and the
suitability score of a feature is the count-weighted sum of those
probabilities, i.e. the expected number of reads per traversal.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import Ensemble, Tree, depth


@dataclass(frozen=True, slots=True)
class ProbAnnotation:
    """prob[i]: probability of reaching node i from its parent (root: 1.0).
    absprob[i]: probability of reaching node i from the root."""

    prob: tuple[float, ...]
    absprob: tuple[float, ...]


@dataclass(frozen=True, slots=True)
class FeatureAccessDistribution:
    """p[i][j]: probability that feature i is read exactly j times per traversal."""

    p: dict[int, dict[int, float]]
    num_features: int

    def of(self, feature: int, count: int) -> float:
        return self.p.get(feature, {}).get(count, 0.0)


@dataclass(frozen=True, slots=True)
class SuitabilityScores:
    scores: dict[int, float]

    def of(self, feature: int) -> float:
        return self.scores.get(feature, 0.0)

    def ranked(self) -> list[int]:
        """Feature indices by descending score, ties toward the smaller index."""
        return sorted(self.scores, key=lambda i: (-self.scores[i], i))


def annotate(tree: Tree) -> ProbAnnotation:
    """Per-edge and per-node access probabilities from training branch counts.

    An inner node whose counts sum to zero (never reached in training) falls
    back to a 50/50 split so the product stays defined.
    """
    n = len(tree.nodes)
    prob = [1.0] * n
    absprob = [0.0] * n
    absprob[0] = 1.0
    stack = [0]
    while stack:
        node = tree.nodes[stack.pop()]
        if node.is_leaf:
            continue
        total = node.left_count + node.right_count
        if total > 0:
            p_left = node.left_count / total
            p_right = node.right_count / total
        else:
            p_left = p_right = 0.5
        prob[node.left_child] = p_left
        prob[node.right_child] = p_right
        absprob[node.left_child] = absprob[node.id] * p_left
        absprob[node.right_child] = absprob[node.id] * p_right
        stack.append(node.left_child)
        stack.append(node.right_child)
    return ProbAnnotation(prob=tuple(prob), absprob=tuple(absprob))


def feature_distribution(tree: Tree, ann: ProbAnnotation) -> FeatureAccessDistribution:
    """Exact per-feature read-count distribution over all root-to-leaf paths.

    Each leaf contributes its absprob to p[feature, reads-along-its-path];
    visiting an inner node counts as one read of its feature. Features a
    path never reads contribute to that feature's j=0 mass, so every
    feature's distribution sums to 1.
    """
    num_features = _num_features(tree)
    acc: dict[int, dict[int, float]] = {i: {} for i in range(num_features)}
    reads = [0] * num_features

    def walk(node_id: int):
        node = tree.nodes[node_id]
        if node.is_leaf:
            w = ann.absprob[node_id]
            for i in range(num_features):
                j = reads[i]
                if j > 0:
                    acc[i][j] = acc[i].get(j, 0.0) + w
            return
        reads[node.feature_index] += 1
        walk(node.left_child)
        walk(node.right_child)
        reads[node.feature_index] -= 1

    walk(0)
    for i in range(num_features):
        acc[i][0] = max(0.0, 1.0 - sum(acc[i].values()))
    return FeatureAccessDistribution(p=acc, num_features=num_features)


def suitability(dist: FeatureAccessDistribution, max_depth: int) -> SuitabilityScores:
    """Expected reads per traversal: sum over j of p[i,j] * j for j in 1..max_depth."""
    scores = {}
    for i, by_count in dist.p.items():
        scores[i] = sum(p * j for j, p in by_count.items() if 1 <= j <= max_depth)
    return SuitabilityScores(scores=scores)


def tree_suitability(tree: Tree, ann: ProbAnnotation | None = None) -> SuitabilityScores:
    ann = ann or annotate(tree)
    return suitability(feature_distribution(tree, ann), depth(tree))


def ensemble_suitability(ensemble: Ensemble) -> SuitabilityScores:
    """Per-feature scores summed over all trees: the expected total reads of a
    feature while one input passes through the whole ensemble. Drives static
    feature pinning, which holds registers across every tree."""
    totals = {i: 0.0 for i in range(ensemble.num_features)}
    for tree in ensemble.trees:
        for i, s in tree_suitability(tree).scores.items():
            totals[i] = totals.get(i, 0.0) + s
    return SuitabilityScores(scores=totals)


def _num_features(tree: Tree) -> int:
    used = [n.feature_index for n in tree.nodes if not n.is_leaf]
    return (max(used) + 1) if used else 0


def profile_document(ensemble: Ensemble) -> dict:
    """JSON-ready profile: per-tree node probabilities plus suitability scores."""
    trees_out = []
    per_tree_scores = []
    for tree in ensemble.trees:
        ann = annotate(tree)
        trees_out.append(
            {
                str(n.id): {"prob": ann.prob[n.id], "absprob": ann.absprob[n.id]}
                for n in tree.nodes
            }
        )
        scores = tree_suitability(tree, ann)
        per_tree_scores.append({str(i): scores.of(i) for i in range(ensemble.num_features)})
    totals = ensemble_suitability(ensemble)
    return {
        "trees": trees_out,
        "suitability": {str(i): totals.of(i) for i in range(ensemble.num_features)},
        "per_tree_suitability": per_tree_scores,
    }
