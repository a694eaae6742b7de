#ifndef MMFV_ENSEMBLE_HPP
#define MMFV_ENSEMBLE_HPP

// Engineered features (lengths, text entailment, image cosine, image-source
// domains) feeding a depth-bounded CART tree for 5-way prediction.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmfv/corpus.hpp"
#include "mmfv/error.hpp"
#include "mmfv/text_entailment.hpp"
#include "mmfv/text_prep.hpp"

namespace mmfv {

/// dot(u, v) / (|u| |v|); 0 when either norm is 0.
inline double cosine_similarity(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v) {
    require_shape(u.size() == v.size(), "cosine_similarity: length mismatch (" + std::to_string(u.size()) + " vs " +
                                            std::to_string(v.size()) + ")");
    const double nu = u.norm(), nv = v.norm();
    if (nu == 0.0 || nv == 0.0) return 0.0;
    return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

/// Sorted vocabulary of image-source domains seen in a training split.
class DomainEncoder {
public:
    DomainEncoder() = default;
    explicit DomainEncoder(std::vector<std::string> domains) : domains_(std::move(domains)) {
        std::sort(domains_.begin(), domains_.end());
        domains_.erase(std::unique(domains_.begin(), domains_.end()), domains_.end());
        domains_.erase(std::remove(domains_.begin(), domains_.end(), std::string()), domains_.end());
    }

    static DomainEncoder fit(const Dataset& train) {
        std::vector<std::string> all;
        for (const auto& p : train.pairs) {
            all.push_back(extract_domain(p.claim_image_url));
            all.push_back(extract_domain(p.doc_image_url));
        }
        return DomainEncoder(std::move(all));
    }

    std::size_t size() const { return domains_.size(); }
    const std::vector<std::string>& domains() const { return domains_; }

    /// Position of `domain` in the vocabulary, or -1.
    long index(const std::string& domain) const {
        auto it = std::lower_bound(domains_.begin(), domains_.end(), domain);
        if (domain.empty() || it == domains_.end() || *it != domain) return -1;
        return static_cast<long>(it - domains_.begin());
    }

    /// One-hot over the vocabulary; all zeros for empty or unseen domains.
    std::vector<std::uint8_t> encode_domain(const std::string& domain) const {
        std::vector<std::uint8_t> bits(domains_.size(), 0);
        if (long i = index(domain); i >= 0) bits[static_cast<std::size_t>(i)] = 1;
        return bits;
    }

    std::vector<std::uint8_t> encode_url(const std::string& url) const { return encode_domain(extract_domain(url)); }

private:
    std::vector<std::string> domains_;
};

struct FeatureRecord {
    std::int64_t len_claim_text = 0;
    std::int64_t len_claim_ocr = 0;
    std::int64_t len_doc_text = 0;
    std::int64_t len_doc_ocr = 0;
    int entail_code = 0;
    double entail_prob = 0.0;
    double image_cosine = 0.0;
    std::vector<std::uint8_t> claim_domain;
    std::vector<std::uint8_t> doc_domain;

    /// Numeric vector for the tree: the 7 scalars, then (optionally) the
    /// claim and document one-hot bits.
    std::vector<double> to_vector(bool with_domains = true) const {
        std::vector<double> x{static_cast<double>(len_claim_text),
                              static_cast<double>(len_claim_ocr),
                              static_cast<double>(len_doc_text),
                              static_cast<double>(len_doc_ocr),
                              static_cast<double>(entail_code),
                              entail_prob,
                              image_cosine};
        if (with_domains) {
            for (auto b : claim_domain) x.push_back(b);
            for (auto b : doc_domain) x.push_back(b);
        }
        return x;
    }
};

inline constexpr std::array<const char*, 7> kScalarFeatureNames = {
    "len_claim_text", "len_claim_ocr", "len_doc_text", "len_doc_ocr", "entail_code", "entail_prob", "image_cosine"};

inline std::vector<std::string> feature_names(const DomainEncoder& enc, bool with_domains = true) {
    std::vector<std::string> names(kScalarFeatureNames.begin(), kScalarFeatureNames.end());
    if (with_domains) {
        for (const auto& d : enc.domains()) names.push_back("claim_domain=" + d);
        for (const auto& d : enc.domains()) names.push_back("doc_domain=" + d);
    }
    return names;
}

inline FeatureRecord make_feature_record(const ClaimDocumentPair& pair, const EntailmentPrediction& entail,
                                         const ImageFeatureStore& store, const DomainEncoder& enc) {
    FeatureRecord r;
    r.len_claim_text = static_cast<std::int64_t>(tokenize(pair.claim_text).size());
    r.len_claim_ocr = static_cast<std::int64_t>(tokenize(pair.claim_ocr).size());
    r.len_doc_text = static_cast<std::int64_t>(tokenize(pair.doc_text).size());
    r.len_doc_ocr = static_cast<std::int64_t>(tokenize(pair.doc_ocr).size());
    r.entail_code = entailment_code(entail.label);
    r.entail_prob = entail.probabilities[static_cast<std::size_t>(index_of(entail.label))];
    r.image_cosine = cosine_similarity(store.vector(pair.claim_image_id), store.vector(pair.doc_image_id));
    r.claim_domain = enc.encode_url(pair.claim_image_url);
    r.doc_domain = enc.encode_url(pair.doc_image_url);
    return r;
}

inline FeatureRecord extract_features(const ClaimDocumentPair& pair, const EntailmentPredictor& predictor,
                                      const ImageFeatureStore& store, const DomainEncoder& enc) {
    return make_feature_record(pair, predictor.predict(pair), store, enc);
}

inline std::vector<FeatureRecord> extract_features_all(const Dataset& ds, const EntailmentPredictor& predictor,
                                                       const ImageFeatureStore& store, const DomainEncoder& enc) {
    const auto preds = predictor.predict_all(ds);
    std::vector<FeatureRecord> out;
    out.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(make_feature_record(ds.pairs[i], preds[i], store, enc));
    return out;
}

/// One row per pair: pair_id, the 7 scalar columns, then every one-hot bit.
inline void write_feature_csv(std::ostream& out, const Dataset& ds, const std::vector<FeatureRecord>& records,
                              const DomainEncoder& enc) {
    require_shape(ds.size() == records.size(), "write_feature_csv: dataset/record count mismatch");
    auto quote = [](const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
        return q + "\"";
    };
    out << "pair_id";
    for (const auto& n : feature_names(enc, true)) out << ',' << quote(n);
    out << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& r = records[i];
        out << quote(ds.pairs[i].id) << ',' << r.len_claim_text << ',' << r.len_claim_ocr << ',' << r.len_doc_text
            << ',' << r.len_doc_ocr << ',' << r.entail_code << ',' << kv::to_string(r.entail_prob) << ','
            << kv::to_string(r.image_cosine);
        for (auto b : r.claim_domain) out << ',' << int(b);
        for (auto b : r.doc_domain) out << ',' << int(b);
        out << '\n';
    }
}

// --------------------------------------------------------------------------
// CART

using ClassCounts = std::array<std::size_t, kNumLabel5>;

/// 1 - sum p_c^2; 0 for an empty node.
inline double gini(const ClassCounts& counts) {
    const std::size_t n = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    if (n == 0) return 0.0;
    double s = 0.0;
    for (auto c : counts) {
        const double p = static_cast<double>(c) / static_cast<double>(n);
        s += p * p;
    }
    return 1.0 - s;
}

/// Majority class; ties go to the lowest Label5 index.
inline Label5 majority(const ClassCounts& counts) {
    return kAllLabel5[static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin())];
}

/// Split point between two consecutive distinct sorted values. Routing is
/// x <= threshold to the left, so the threshold must stay below `hi` even
/// when rounding pulls the midpoint onto it.
inline double midpoint_threshold(double lo, double hi) {
    const double t = lo + (hi - lo) / 2.0;
    return t < hi ? t : lo;
}

struct TreeNode {
    int feature = -1;  // -1 for a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int depth = 0;
    ClassCounts counts{};
    double impurity = 0.0;
    Label5 prediction = Label5::SupportMultimodal;

    bool is_leaf() const { return feature < 0; }
};

struct TreePrediction {
    Label5 label = Label5::SupportMultimodal;
    std::array<double, kNumLabel5> distribution{};
};

struct DecisionTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root
    std::size_t n_features = 0;
    int max_depth = 8;

    int depth() const {
        int d = 0;
        for (const auto& n : nodes) d = std::max(d, n.depth);
        return d;
    }

    const TreeNode& leaf_for(const std::vector<double>& x) const {
        require_shape(x.size() == n_features, "tree_predict: expected " + std::to_string(n_features) +
                                                  " features, got " + std::to_string(x.size()));
        const TreeNode* n = &nodes.at(0);
        while (!n->is_leaf()) n = &nodes[static_cast<std::size_t>(x[static_cast<std::size_t>(n->feature)] <= n->threshold ? n->left : n->right)];
        return *n;
    }

    TreePrediction predict(const std::vector<double>& x) const {
        const TreeNode& leaf = leaf_for(x);
        TreePrediction p;
        p.label = leaf.prediction;
        const double total = static_cast<double>(std::accumulate(leaf.counts.begin(), leaf.counts.end(), std::size_t{0}));
        for (std::size_t c = 0; c < leaf.counts.size(); ++c) p.distribution[c] = static_cast<double>(leaf.counts[c]) / total;
        return p;
    }

    friend bool operator==(const DecisionTree& a, const DecisionTree& b) {
        if (a.nodes.size() != b.nodes.size() || a.n_features != b.n_features) return false;
        for (std::size_t i = 0; i < a.nodes.size(); ++i) {
            const auto &x = a.nodes[i], &y = b.nodes[i];
            if (x.feature != y.feature || x.left != y.left || x.right != y.right || x.counts != y.counts ||
                x.prediction != y.prediction || (!x.is_leaf() && x.threshold != y.threshold))
                return false;
        }
        return true;
    }
};

namespace detail {

using Wide = __int128;

inline Wide sum_squares(const ClassCounts& c) {
    Wide s = 0;
    for (auto v : c) s += static_cast<Wide>(v) * static_cast<Wide>(v);
    return s;
}

/// Weighted child impurity is n - (S_L/n_L + S_R/n_R) with S = sum of squared
/// class counts, so the best split maximises S_L/n_L + S_R/n_R. Kept as an
/// exact fraction to make tie-breaking independent of rounding.
struct SplitScore {
    Wide num = 0;  // S_L * n_R + S_R * n_L
    Wide den = 1;  // n_L * n_R

    bool better_than(const SplitScore& o) const { return num * o.den > o.num * den; }
};

inline SplitScore split_score(const ClassCounts& left, const ClassCounts& right) {
    const Wide nl = std::accumulate(left.begin(), left.end(), std::size_t{0});
    const Wide nr = std::accumulate(right.begin(), right.end(), std::size_t{0});
    return {sum_squares(left) * nr + sum_squares(right) * nl, nl * nr};
}

struct TreeBuilder {
    const std::vector<std::vector<double>>& x;
    const std::vector<int>& y;
    int max_depth;
    DecisionTree tree;

    int build(const std::vector<std::size_t>& rows, int depth) {
        TreeNode node;
        node.depth = depth;
        for (auto r : rows) ++node.counts[static_cast<std::size_t>(y[r])];
        node.impurity = gini(node.counts);
        node.prediction = majority(node.counts);
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(node);

        const bool pure = std::count_if(node.counts.begin(), node.counts.end(), [](auto c) { return c > 0; }) <= 1;
        if (pure || depth >= max_depth) return id;

        const Wide n = static_cast<Wide>(rows.size());
        // a split must beat the parent: S_L/n_L + S_R/n_R > S/n
        bool found = false;
        int best_feature = -1;
        double best_threshold = 0.0;
        SplitScore best{sum_squares(node.counts), n};
        std::vector<std::size_t> order = rows;
        for (std::size_t f = 0; f < tree.n_features; ++f) {
            std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a][f] < x[b][f]; });
            ClassCounts left{}, right = node.counts;
            for (std::size_t i = 0; i + 1 < order.size(); ++i) {
                const auto r = order[i];
                ++left[static_cast<std::size_t>(y[r])];
                --right[static_cast<std::size_t>(y[r])];
                const double lo = x[r][f], hi = x[order[i + 1]][f];
                if (!(lo < hi)) continue;
                const SplitScore s = split_score(left, right);
                if (s.better_than(best)) {
                    best = s;
                    best_feature = static_cast<int>(f);
                    best_threshold = midpoint_threshold(lo, hi);
                    found = true;
                }
            }
        }
        if (!found) return id;

        std::vector<std::size_t> lrows, rrows;
        for (auto r : rows) (x[r][static_cast<std::size_t>(best_feature)] <= best_threshold ? lrows : rrows).push_back(r);
        tree.nodes[static_cast<std::size_t>(id)].feature = best_feature;
        tree.nodes[static_cast<std::size_t>(id)].threshold = best_threshold;
        const int l = build(lrows, depth + 1);
        const int r = build(rrows, depth + 1);
        tree.nodes[static_cast<std::size_t>(id)].left = l;
        tree.nodes[static_cast<std::size_t>(id)].right = r;
        return id;
    }
};

} // namespace detail

/// CART with gini impurity. Candidate thresholds are midpoints between
/// consecutive distinct values; the split with the largest impurity decrease
/// wins, ties going to the lowest feature index and then the lowest
/// threshold. Nodes stop splitting when pure, at `max_depth`, or when no
/// split decreases impurity. Nodes are stored in depth-first pre-order.
inline DecisionTree tree_train(const std::vector<std::vector<double>>& x, const std::vector<Label5>& labels,
                               int max_depth = 8) {
    if (x.empty()) throw DataError("tree_train: no training samples");
    if (x.size() != labels.size()) throw ShapeError("tree_train: feature/label count mismatch");
    if (max_depth < 0) throw ConfigError("tree_train: max_depth must be >= 0");
    const std::size_t f = x.front().size();
    for (const auto& row : x) {
        if (row.size() != f) throw ShapeError("tree_train: ragged feature rows");
        for (double v : row)
            if (!std::isfinite(v)) throw DataError("tree_train: non-finite feature value");
    }
    std::vector<int> y;
    for (auto l : labels) y.push_back(index_of(l));
    detail::TreeBuilder b{x, y, max_depth, {}};
    b.tree.n_features = f;
    b.tree.max_depth = max_depth;
    std::vector<std::size_t> rows(x.size());
    std::iota(rows.begin(), rows.end(), 0);
    b.build(rows, 0);
    return b.tree;
}

inline TreePrediction tree_predict(const DecisionTree& tree, const std::vector<double>& x) { return tree.predict(x); }

inline nlohmann::json tree_to_json(const DecisionTree& tree) {
    nlohmann::json nodes = nlohmann::json::array();
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        const auto& n = tree.nodes[i];
        nlohmann::json j{{"id", i},
                         {"depth", n.depth},
                         {"counts", n.counts},
                         {"gini", n.impurity},
                         {"prediction", std::string(label_name(n.prediction))}};
        if (n.is_leaf()) {
            j["leaf"] = true;
        } else {
            j["leaf"] = false;
            j["feature"] = n.feature;
            j["threshold"] = n.threshold;
            j["left"] = n.left;
            j["right"] = n.right;
        }
        nodes.push_back(std::move(j));
    }
    return {{"n_features", tree.n_features}, {"max_depth", tree.max_depth}, {"nodes", nodes}};
}

inline DecisionTree tree_from_json(const nlohmann::json& j) {
    DecisionTree t;
    try {
        t.n_features = j.at("n_features").get<std::size_t>();
        t.max_depth = j.at("max_depth").get<int>();
        for (const auto& nj : j.at("nodes")) {
            TreeNode n;
            n.depth = nj.at("depth").get<int>();
            n.counts = nj.at("counts").get<ClassCounts>();
            n.impurity = nj.at("gini").get<double>();
            auto label = parse_label5(nj.at("prediction").get<std::string>());
            if (!label) throw DataError("tree: unknown label in node");
            n.prediction = *label;
            if (!nj.at("leaf").get<bool>()) {
                n.feature = nj.at("feature").get<int>();
                n.threshold = nj.at("threshold").get<double>();
                n.left = nj.at("left").get<int>();
                n.right = nj.at("right").get<int>();
            }
            t.nodes.push_back(n);
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("tree: ") + e.what());
    }
    const auto n = static_cast<int>(t.nodes.size());
    if (n == 0) throw DataError("tree: no nodes");
    for (const auto& node : t.nodes)
        if (!node.is_leaf() && (node.left <= 0 || node.left >= n || node.right <= 0 || node.right >= n ||
                                node.feature >= static_cast<int>(t.n_features)))
            throw DataError("tree: node references out of range");
    return t;
}

// --------------------------------------------------------------------------
// Fitted ensemble: domain vocabulary + tree

struct EnsembleModel {
    DomainEncoder encoder;
    bool use_domains = true;
    DecisionTree tree;

    TreePrediction predict(const FeatureRecord& r) const { return tree.predict(r.to_vector(use_domains)); }
};

inline EnsembleModel ensemble_train(const std::vector<FeatureRecord>& records, const std::vector<Label5>& labels,
                                    const DomainEncoder& encoder, bool use_domains = true, int max_depth = 8) {
    std::vector<std::vector<double>> x;
    x.reserve(records.size());
    for (const auto& r : records) x.push_back(r.to_vector(use_domains));
    return {encoder, use_domains, tree_train(x, labels, max_depth)};
}

inline std::vector<Label5> dataset_labels(const Dataset& ds) {
    std::vector<Label5> out;
    for (const auto& p : ds.pairs) {
        if (!p.label) throw DataError("pair '" + p.id + "' has no label");
        out.push_back(*p.label);
    }
    return out;
}

inline nlohmann::json ensemble_to_json(const EnsembleModel& m) {
    return {{"kind", "ensemble5"},
            {"format_version", 1},
            {"use_domains", m.use_domains},
            {"domains", m.encoder.domains()},
            {"feature_names", feature_names(m.encoder, m.use_domains)},
            {"tree", tree_to_json(m.tree)}};
}

inline EnsembleModel ensemble_from_json(const nlohmann::json& j) {
    EnsembleModel m;
    try {
        m.use_domains = j.at("use_domains").get<bool>();
        m.encoder = DomainEncoder(j.at("domains").get<std::vector<std::string>>());
        m.tree = tree_from_json(j.at("tree"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("ensemble model: ") + e.what());
    }
    if (m.tree.n_features != feature_names(m.encoder, m.use_domains).size())
        throw DataError("ensemble model: tree width does not match its domain vocabulary");
    return m;
}

inline void save_ensemble(const EnsembleModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write ensemble model '" + path + "'");
    out << ensemble_to_json(m).dump(1) << '\n';
}

inline EnsembleModel load_ensemble(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open ensemble model '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception&) {
        throw CheckpointKindError("'" + path + "' is not an ensemble5 model");
    }
    const std::string kind = j.value("kind", std::string("unknown"));
    if (kind != "ensemble5")
        throw CheckpointKindError("'" + path + "' holds a " + kind + " model, expected ensemble5");
    return ensemble_from_json(j);
}

} // namespace mmfv

#endif
