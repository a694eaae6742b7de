#ifndef MMFV_TESTS_TREE_REFERENCE_HPP
#define MMFV_TESTS_TREE_REFERENCE_HPP

#include <memory>
#include <set>
#include <vector>

#include "mmfv/ensemble.hpp"

namespace mmfv::test {

// Exhaustive reference: every (feature, midpoint) candidate is scored by
// recounting all rows, compared as exact fractions.
struct RefNode {
    int feature = -1;
    double threshold = 0;
    std::unique_ptr<RefNode> left, right;
    ClassCounts counts{};
};

using Rows = std::vector<std::size_t>;

inline std::unique_ptr<RefNode> ref_build(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                                   const Rows& rows, int depth, int max_depth) {
    auto node = std::make_unique<RefNode>();
    for (auto r : rows) ++node->counts[static_cast<std::size_t>(y[r])];
    int classes = 0;
    for (auto c : node->counts) classes += c > 0;
    if (classes <= 1 || depth >= max_depth) return node;

    auto sq = [](const ClassCounts& c) {
        long long s = 0;
        for (auto v : c) s += static_cast<long long>(v * v);
        return s;
    };
    // score = S_L/n_L + S_R/n_R as num/den; parent score S/n
    long long best_num = sq(node->counts), best_den = static_cast<long long>(rows.size());
    int best_f = -1;
    double best_t = 0;
    for (std::size_t f = 0; f < x[0].size(); ++f) {
        std::set<double> values;
        for (auto r : rows) values.insert(x[r][f]);
        std::vector<double> sorted(values.begin(), values.end());
        for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
            const double t = (sorted[i] + sorted[i + 1]) / 2;
            ClassCounts l{}, rr{};
            for (auto r : rows) ++(x[r][f] <= t ? l : rr)[static_cast<std::size_t>(y[r])];
            long long nl = 0, nr = 0;
            for (auto v : l) nl += static_cast<long long>(v);
            for (auto v : rr) nr += static_cast<long long>(v);
            const long long num = sq(l) * nr + sq(rr) * nl, den = nl * nr;
            if (num * best_den > best_num * den) {
                best_num = num;
                best_den = den;
                best_f = static_cast<int>(f);
                best_t = t;
            }
        }
    }
    if (best_f < 0) return node;
    node->feature = best_f;
    node->threshold = best_t;
    Rows lr, rr;
    for (auto r : rows) (x[r][static_cast<std::size_t>(best_f)] <= best_t ? lr : rr).push_back(r);
    node->left = ref_build(x, y, lr, depth + 1, max_depth);
    node->right = ref_build(x, y, rr, depth + 1, max_depth);
    return node;
}

inline bool same_tree(const RefNode& ref, const DecisionTree& tree, int id) {
    const TreeNode& n = tree.nodes.at(static_cast<std::size_t>(id));
    if (ref.counts != n.counts || ref.feature != n.feature) return false;
    if (ref.feature < 0) return true;
    return ref.threshold == n.threshold && same_tree(*ref.left, tree, n.left) && same_tree(*ref.right, tree, n.right);
}

inline Label5 ref_leaf_label(const RefNode& n) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n.counts.size(); ++c)
        if (n.counts[c] > n.counts[best]) best = c;
    return kAllLabel5[best];
}

inline Label5 ref_predict(const RefNode& n, const std::vector<double>& x) {
    if (n.feature < 0) return ref_leaf_label(n);
    return ref_predict(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? *n.left : *n.right, x);
}

} // namespace mmfv::test

#endif
