#ifndef MMFV_ANALYSIS_HPP
#define MMFV_ANALYSIS_HPP

// Dataset-bias statistics and hypothesis-only probes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmfv/corpus.hpp"
#include "mmfv/ensemble.hpp"
#include "mmfv/kv.hpp"
#include "mmfv/metrics.hpp"
#include "mmfv/nn/activations.hpp"
#include "mmfv/nn/dense.hpp"
#include "mmfv/nn/gru.hpp"
#include "mmfv/nn/optim.hpp"
#include "mmfv/text_prep.hpp"

namespace mmfv {

struct DistStats {
    double min = 0, max = 0, mean = 0, median = 0;
    std::size_t count = 0;
};

/// Median of an even-sized sample is the mean of the two middle values.
inline DistStats dist_stats(std::vector<double> values) {
    if (values.empty()) throw DataError("dist_stats: no values");
    std::sort(values.begin(), values.end());
    DistStats s;
    s.count = values.size();
    s.min = values.front();
    s.max = values.back();
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    const std::size_t mid = values.size() / 2;
    s.median = values.size() % 2 ? values[mid] : (values[mid - 1] + values[mid]) / 2.0;
    // a rounded mean can step just outside [min, max] for constant samples
    s.mean = std::clamp(s.mean, s.min, s.max);
    return s;
}

/// |unique(q) ∩ unique(d)| / |unique(q)|; 0 when the claim has no tokens.
inline double word_overlap_ratio(const std::string& q_text, const std::string& d_text) {
    const auto q_tok = tokenize(q_text);
    const std::set<std::string> q(q_tok.begin(), q_tok.end());
    if (q.empty()) return 0.0;
    const auto d_tok = tokenize(d_text);
    const std::set<std::string> d(d_tok.begin(), d_tok.end());
    std::size_t shared = 0;
    for (const auto& t : q) shared += d.count(t);
    return static_cast<double>(shared) / static_cast<double>(q.size());
}

using PairQuantity = std::function<double(const ClaimDocumentPair&)>;

/// Stats of `quantity` per gold class; classes without samples are absent.
inline std::map<Label5, DistStats> per_class_stats(const Dataset& ds, const PairQuantity& quantity) {
    std::map<Label5, std::vector<double>> values;
    for (const auto& p : ds.pairs) {
        if (!p.label) throw DataError("per_class_stats: pair '" + p.id + "' has no label");
        values[*p.label].push_back(quantity(p));
    }
    std::map<Label5, DistStats> out;
    for (auto& [label, v] : values) out[label] = dist_stats(std::move(v));
    return out;
}

namespace quantity {

inline PairQuantity word_overlap() {
    return [](const ClaimDocumentPair& p) { return word_overlap_ratio(p.claim_text, p.doc_text); };
}

inline PairQuantity image_cosine(const ImageFeatureStore& store) {
    return [&store](const ClaimDocumentPair& p) {
        return cosine_similarity(store.vector(p.claim_image_id), store.vector(p.doc_image_id));
    };
}

inline PairQuantity token_count(std::string ClaimDocumentPair::*field) {
    return [field](const ClaimDocumentPair& p) { return static_cast<double>(tokenize(p.*field).size()); };
}

} // namespace quantity

/// domain -> per-class counts, claim-side and document-side tables kept
/// separately; pairs without a usable domain are counted under "".
struct DomainDistribution {
    std::map<std::string, ClassCounts> claim;
    std::map<std::string, ClassCounts> doc;
};

inline DomainDistribution domain_label_distribution(const Dataset& ds) {
    DomainDistribution out;
    for (const auto& p : ds.pairs) {
        if (!p.label) throw DataError("domain_label_distribution: pair '" + p.id + "' has no label");
        const auto c = static_cast<std::size_t>(index_of(*p.label));
        ++out.claim[extract_domain(p.claim_image_url)][c];
        ++out.doc[extract_domain(p.doc_image_url)][c];
    }
    return out;
}

inline void write_domain_csv(std::ostream& out, const DomainDistribution& dist) {
    out << "side,domain";
    for (auto l : kAllLabel5) out << ',' << label_name(l);
    out << ",total\n";
    for (const auto* side : {&dist.claim, &dist.doc})
        for (const auto& [domain, counts] : *side) {
            out << (side == &dist.claim ? "claim" : "doc") << ',' << domain;
            std::size_t total = 0;
            for (auto c : counts) {
                out << ',' << c;
                total += c;
            }
            out << ',' << total << '\n';
        }
}

inline nlohmann::json stats_json(const std::map<Label5, DistStats>& stats) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [label, s] : stats)
        j[std::string(label_name(label))] = {
            {"min", s.min}, {"max", s.max}, {"mean", s.mean}, {"median", s.median}, {"count", s.count}};
    return j;
}

/// Overlap, lengths and (when features are given) image-cosine tables.
inline nlohmann::json analysis_report(const Dataset& ds, const ImageFeatureStore* store = nullptr) {
    nlohmann::json j;
    j["schema_version"] = kMetricsSchemaVersion;
    j["n"] = ds.size();
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [label, n] : class_counts(ds)) counts[std::string(label_name(label))] = n;
    j["class_counts"] = counts;
    j["word_overlap"] = stats_json(per_class_stats(ds, quantity::word_overlap()));
    j["claim_text_length"] = stats_json(per_class_stats(ds, quantity::token_count(&ClaimDocumentPair::claim_text)));
    j["doc_text_length"] = stats_json(per_class_stats(ds, quantity::token_count(&ClaimDocumentPair::doc_text)));
    j["claim_ocr_length"] = stats_json(per_class_stats(ds, quantity::token_count(&ClaimDocumentPair::claim_ocr)));
    j["doc_ocr_length"] = stats_json(per_class_stats(ds, quantity::token_count(&ClaimDocumentPair::doc_ocr)));
    if (store) j["image_cosine"] = stats_json(per_class_stats(ds, quantity::image_cosine(*store)));
    return j;
}

// --------------------------------------------------------------------------
// Hypothesis-only probe: claim text (and optionally claim image) only.

enum class ProbeMode { TextOnly, TextPlusImage };

struct ProbeConfig {
    Index embed_dim = 50;
    Index gru_units = 300;
    Index claim_len = 100;
    Index image_dim = 2048;
    Index proj_dim = 512;
    Index hidden = 300;
    Index classes = 5;
    Index batch_size = 32;
    Index epochs = 10;
    double learning_rate = 1e-3;

    void validate() const {
        for (Index v : {embed_dim, gru_units, claim_len, image_dim, proj_dim, hidden, classes, batch_size, epochs})
            if (v <= 0) throw ConfigError("probe config values must be positive");
        if (learning_rate <= 0) throw ConfigError("probe learning rate must be positive");
    }

    void read(kv::Reader& r) {
        r.read("embed_dim", embed_dim);
        r.read("gru_units", gru_units);
        r.read("claim_len", claim_len);
        r.read("image_dim", image_dim);
        r.read("proj_dim", proj_dim);
        r.read("hidden", hidden);
        r.read("classes", classes);
        r.read("batch_size", batch_size);
        r.read("epochs", epochs);
        r.read("learning_rate", learning_rate);
    }
};

struct ProbeModel {
    ProbeConfig config;
    ProbeMode mode = ProbeMode::TextOnly;
    Matrix projection;  // frozen, image mode only
    nn::GruParams gru;
    nn::DenseParams hidden;
    nn::DenseParams output;

    ProbeModel(const ProbeConfig& cfg, ProbeMode m)
        : config(cfg),
          mode(m),
          gru(cfg.embed_dim, cfg.gru_units),
          hidden(cfg.gru_units + (m == ProbeMode::TextPlusImage ? cfg.proj_dim : 0), cfg.hidden),
          output(cfg.hidden, cfg.classes) {
        if (m == ProbeMode::TextPlusImage) projection = Matrix::Zero(cfg.image_dim, cfg.proj_dim);
    }

    void init(nn::Rng& rng) {
        if (mode == ProbeMode::TextPlusImage) nn::he_uniform(projection, config.image_dim, rng);
        gru.init(rng);
        hidden.init(rng);
        output.init(rng);
    }

    nn::ParamList params() {
        nn::ParamList out;
        if (mode == ProbeMode::TextPlusImage) out.push_back(nn::param_ref("image_projection", projection, false));
        gru.collect(out, "gru");
        hidden.collect(out, "hidden");
        output.collect(out, "output");
        return out;
    }
};

/// Claim tokens embedded and left-padded to `len` (head-truncated), so the
/// GRU's final state directly follows the last real token.
inline Matrix left_padded_embedding(const std::string& text, const EmbeddingTable& table, Index len) {
    const auto tokens = tokenize(text);
    const Index used = used_length(tokens, len);
    Matrix m = Matrix::Zero(len, table.dim());
    for (Index i = 0; i < used; ++i) m.row(len - used + i) = table.row(table.vocabulary().index(tokens[i]));
    return m;
}

struct ProbeBatch {
    std::vector<Matrix> text;
    Matrix image;  // [B x l] raw claim-image features, image mode only
};

inline ProbeBatch probe_batch(const Dataset& ds, const std::vector<std::size_t>& rows, const EmbeddingTable& table,
                              const ImageFeatureStore* store, const ProbeModel& m) {
    ProbeBatch b;
    if (m.mode == ProbeMode::TextPlusImage) b.image.resize(static_cast<Index>(rows.size()), m.config.image_dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& p = ds.pairs[rows[i]];
        b.text.push_back(left_padded_embedding(p.claim_text, table, m.config.claim_len));
        if (m.mode == ProbeMode::TextPlusImage && store) {
            const auto v = store->vector(p.claim_image_id);
            require_shape(v.size() == m.config.image_dim, "probe: image feature length mismatch");
            b.image.row(static_cast<Index>(i)) = v.transpose();
        }
    }
    return b;
}

struct ProbeActivations {
    nn::GruTrace trace;
    std::vector<Matrix> ctx;
    Matrix features, hidden, probs;
};

inline ProbeActivations probe_forward(const ProbeModel& m, const ProbeBatch& b, bool keep_trace) {
    ProbeActivations a;
    a.ctx = nn::gru_forward_batch(b.text, m.gru, keep_trace ? &a.trace : nullptr);
    const auto B = static_cast<Index>(b.text.size());
    const Index u = m.config.gru_units;
    a.features.resize(B, m.hidden.in_dim());
    for (Index i = 0; i < B; ++i) a.features.row(i).head(u) = a.ctx[static_cast<std::size_t>(i)].bottomRows(1);
    if (m.mode == ProbeMode::TextPlusImage) a.features.rightCols(m.config.proj_dim) = b.image * m.projection;
    a.hidden = nn::dense_forward(a.features, m.hidden, nn::Activation::Relu);
    a.probs = nn::softmax_rows(nn::dense_forward(a.hidden, m.output, nn::Activation::None));
    return a;
}

struct ProbeResult {
    double accuracy = 0;
    double weighted_f1 = 0;
    std::vector<double> train_loss;  // per epoch
};

/// Trains for a fixed number of epochs with Adam and reports validation
/// accuracy / weighted F1 after the last epoch.
inline ProbeResult probe_train_eval(const Dataset& train, const Dataset& val, ProbeMode mode,
                                    const EmbeddingTable& table, const ImageFeatureStore* store,
                                    const ProbeConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (train.empty() || val.empty()) throw DataError("probe: empty dataset");
    if (table.dim() != cfg.embed_dim) throw ConfigError("probe: embedding dimension does not match embed_dim");
    if (mode == ProbeMode::TextPlusImage && !store) throw DataError("probe: text+image mode needs image features");
    std::vector<int> y_train, y_val;
    for (const auto* ds : {&train, &val})
        for (const auto& p : ds->pairs) {
            if (!p.label) throw DataError("probe: pair '" + p.id + "' has no label");
            (ds == &train ? y_train : y_val).push_back(index_of(*p.label));
        }

    ProbeModel model(cfg, mode);
    nn::Rng rng(seed);
    model.init(rng);
    ProbeModel grads = model;
    nn::zero(grads.params());
    nn::OptimizerState opt(cfg.learning_rate, 0.0);
    nn::Rng shuffle_rng(seed ^ 0x9E3779B97F4A7C15ULL);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    const auto bs = static_cast<std::size_t>(cfg.batch_size);

    ProbeResult result;
    for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss = 0;
        for (std::size_t s = 0; s < order.size(); s += bs) {
            std::vector<std::size_t> rows(order.begin() + static_cast<long>(s),
                                          order.begin() + static_cast<long>(std::min(order.size(), s + bs)));
            const ProbeBatch b = probe_batch(train, rows, table, store, model);
            const ProbeActivations a = probe_forward(model, b, true);
            const auto B = static_cast<Index>(rows.size());
            Matrix d_logits(B, cfg.classes);
            for (Index i = 0; i < B; ++i) {
                const int t = y_train[rows[static_cast<std::size_t>(i)]];
                loss += nn::cross_entropy(a.probs.row(i).transpose(), t);
                d_logits.row(i) = nn::softmax_cross_entropy_grad(a.probs.row(i).transpose(), t).transpose() /
                                  static_cast<double>(B);
            }
            auto grad_list = grads.params();
            nn::zero(grad_list);
            const Matrix d_hidden =
                nn::dense_backward(a.hidden, a.probs, nn::Activation::None, d_logits, model.output, grads.output);
            const Matrix d_features =
                nn::dense_backward(a.features, a.hidden, nn::Activation::Relu, d_hidden, model.hidden, grads.hidden);
            std::vector<Matrix> d_ctx;
            for (Index i = 0; i < B; ++i) {
                Matrix d = Matrix::Zero(cfg.claim_len, cfg.gru_units);
                d.bottomRows(1) = d_features.row(i).head(cfg.gru_units);
                d_ctx.push_back(std::move(d));
            }
            nn::gru_backward_batch(a.trace, model.gru, d_ctx, grads.gru);
            nn::adam_step(model.params(), grad_list, opt);
        }
        result.train_loss.push_back(loss / static_cast<double>(train.size()));
    }

    std::vector<int> preds;
    std::vector<std::size_t> all(val.size());
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t s = 0; s < all.size(); s += bs) {
        std::vector<std::size_t> rows(all.begin() + static_cast<long>(s),
                                      all.begin() + static_cast<long>(std::min(all.size(), s + bs)));
        const ProbeActivations a = probe_forward(model, probe_batch(val, rows, table, store, model), false);
        for (Index i = 0; i < a.probs.rows(); ++i) preds.push_back(argmax_lowest(a.probs.row(i), cfg.classes));
    }
    result.accuracy = accuracy(y_val, preds);
    result.weighted_f1 = weighted_f1(y_val, preds, static_cast<int>(cfg.classes));
    return result;
}

} // namespace mmfv

#endif
