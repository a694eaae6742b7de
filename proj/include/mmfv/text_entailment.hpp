#ifndef MMFV_TEXT_ENTAILMENT_HPP
#define MMFV_TEXT_ENTAILMENT_HPP

// Extended MatchPyramid for 3-way text entailment:
//   embed -> self-attention -> GRU (one per side) -> interaction matrix
//   -> [conv 3x3 + ReLU + max-pool] x L -> flatten -> MLP + ReLU -> softmax
// plus the predictor interface the ensemble consumes.

#include <algorithm>
#include <array>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "mmfv/corpus.hpp"
#include "mmfv/kv.hpp"
#include "mmfv/metrics.hpp"
#include "mmfv/nn/activations.hpp"
#include "mmfv/nn/attention.hpp"
#include "mmfv/nn/checkpoint.hpp"
#include "mmfv/nn/conv.hpp"
#include "mmfv/nn/dense.hpp"
#include "mmfv/nn/gru.hpp"
#include "mmfv/nn/optim.hpp"
#include "mmfv/text_prep.hpp"

namespace mmfv {

using nn::Index;
using nn::Matrix;
using nn::Vector;

/// Raised when a checkpoint of one model kind is handed to another.
class CheckpointKindError : public DataError {
public:
    using DataError::DataError;
};

// --------------------------------------------------------------------------
// Shared text-matching pipeline (also used by the multimodal network).

/// Geometry of the convolution pyramid over the interaction matrix.
struct PyramidShape {
    Index claim_len = 100;
    Index doc_len = 1000;
    Index kernel = 3;
    std::vector<Index> channels{16, 32};
    Index pool_h = 5;
    Index pool_w = 10;

    /// (height, width) of the last pooled feature map.
    std::pair<Index, Index> output_hw() const {
        Index h = claim_len, w = doc_len;
        for (std::size_t i = 0; i < channels.size(); ++i) {
            if (h < kernel || w < kernel)
                throw ConfigError("conv layer " + std::to_string(i + 1) + " input " + std::to_string(h) + "x" +
                                  std::to_string(w) + " is smaller than the kernel");
            h = (h - kernel + 1) / pool_h;
            w = (w - kernel + 1) / pool_w;
        }
        if (h < 1 || w < 1) throw ConfigError("pooling collapses the feature map to zero size");
        return {h, w};
    }

    Index flattened_dim() const {
        auto [h, w] = output_hw();
        return h * w * channels.back();
    }
};

/// Entry (i, k) is dot(q_ctx row i, d_ctx row k).
inline Matrix interaction_matrix(const Eigen::Ref<const Matrix>& q_ctx, const Eigen::Ref<const Matrix>& d_ctx) {
    require_shape(q_ctx.cols() == d_ctx.cols(), "interaction_matrix: context widths differ");
    return q_ctx * d_ctx.transpose();
}

/// Tokenize, embed to a fixed length and self-attend one text field.
inline Matrix attended_text(const std::string& text, const EmbeddingTable& table, Index max_len) {
    const auto tokens = tokenize(text);
    const Index used = used_length(tokens, max_len);
    Matrix rows(used, table.dim());
    for (Index i = 0; i < used; ++i) rows.row(i) = table.row(table.vocabulary().index(tokens[i]));
    return nn::self_attention_padded(rows, max_len);
}

struct TextInputs {
    Matrix claim;  // [claim_len x j]
    Matrix doc;    // [doc_len x j]
};

/// Model-facing text is claim_text / doc_text; OCR fields are not mixed in.
inline TextInputs prepare_text_inputs(const ClaimDocumentPair& pair, const EmbeddingTable& table, Index claim_len,
                                      Index doc_len) {
    return {attended_text(pair.claim_text, table, claim_len), attended_text(pair.doc_text, table, doc_len)};
}

struct PyramidLayerTrace {
    nn::FeatureMap input;
    std::vector<Index> argmax;
    nn::FeatureMap pooled;
};

struct PyramidTrace {
    std::vector<PyramidLayerTrace> layers;
};

/// Interaction matrix -> [conv + ReLU + max-pool] per layer -> flattened
/// features in [h][w][c] order.
inline Vector pyramid_forward(const Matrix& q_ctx, const Matrix& d_ctx, const std::vector<nn::Conv2dParams>& convs,
                              Index pool_h, Index pool_w, PyramidTrace* trace = nullptr) {
    nn::FeatureMap x;
    {
        Matrix m = interaction_matrix(q_ctx, d_ctx);
        x = nn::FeatureMap(q_ctx.rows(), d_ctx.rows(), Matrix(Eigen::Map<const Matrix>(m.data(), m.size(), 1)));
    }
    if (trace) trace->layers.assign(convs.size(), {});
    for (std::size_t l = 0; l < convs.size(); ++l) {
        std::vector<Index>* argmax = trace ? &trace->layers[l].argmax : nullptr;
        nn::FeatureMap pooled = nn::conv_relu_pool(x, convs[l], pool_h, pool_w, argmax);
        if (trace) {
            trace->layers[l].input = std::move(x);
            trace->layers[l].pooled = pooled;
        }
        x = std::move(pooled);
    }
    return Eigen::Map<const Vector>(x.data.data(), x.data.size());
}

/// Backprop from d(flattened features) into the conv gradients and both
/// context-matrix gradients (accumulated).
inline void pyramid_backward(const PyramidTrace& trace, const Matrix& q_ctx, const Matrix& d_ctx,
                             const std::vector<nn::Conv2dParams>& convs, const Vector& d_features,
                             std::vector<nn::Conv2dParams>& conv_grads, Matrix& d_q_ctx, Matrix& d_d_ctx) {
    const auto& last = trace.layers.back().pooled;
    nn::FeatureMap grad(last.height, last.width,
                        Matrix(Eigen::Map<const Matrix>(d_features.data(), last.height * last.width,
                                                        last.channels())));
    for (std::size_t l = convs.size(); l-- > 0;) {
        const auto& t = trace.layers[l];
        grad = nn::conv_relu_pool_backward(t.input, convs[l], t.argmax, t.pooled, grad, conv_grads[l], true);
    }
    const Eigen::Map<const Matrix> d_inter(grad.data.data(), q_ctx.rows(), d_ctx.rows());
    d_q_ctx.noalias() += d_inter * d_ctx;
    d_d_ctx.noalias() += d_inter.transpose() * q_ctx;
}

/// Row-batched MLP: ReLU on every layer but the last.
struct MlpTrace {
    std::vector<Matrix> activations;  // input followed by each layer output
};

inline Matrix mlp_forward(const std::vector<nn::DenseParams>& layers, const Matrix& x, MlpTrace* trace = nullptr) {
    Matrix h = x;
    if (trace) trace->activations = {x};
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto act = i + 1 < layers.size() ? nn::Activation::Relu : nn::Activation::None;
        h = nn::dense_forward(h, layers[i], act);
        if (trace) trace->activations.push_back(h);
    }
    return h;
}

inline Matrix mlp_backward(const std::vector<nn::DenseParams>& layers, const MlpTrace& trace, const Matrix& d_out,
                           std::vector<nn::DenseParams>& grads) {
    Matrix d = d_out;
    for (std::size_t i = layers.size(); i-- > 0;) {
        const auto act = i + 1 < layers.size() ? nn::Activation::Relu : nn::Activation::None;
        d = nn::dense_backward(trace.activations[i], trace.activations[i + 1], act, d, layers[i], grads[i]);
    }
    return d;
}

// --------------------------------------------------------------------------
// Model

struct MatchPyramidConfig {
    Index embed_dim = 50;
    Index gru_units = 50;
    Index claim_len = 100;
    Index doc_len = 1000;
    Index kernel = 3;
    std::vector<Index> channels{16, 32};
    Index pool_h = 5;
    Index pool_w = 10;
    std::vector<Index> mlp_hidden{128, 64};
    Index classes = 3;
    // training
    Index batch_size = 32;
    Index max_epochs = 40;
    Index patience = 5;
    double learning_rate = 1e-3;
    double weight_decay = 0.0;

    PyramidShape pyramid() const { return {claim_len, doc_len, kernel, channels, pool_h, pool_w}; }

    void validate() const {
        for (Index v : {embed_dim, gru_units, claim_len, doc_len, kernel, pool_h, pool_w, classes, batch_size})
            if (v <= 0) throw ConfigError("MatchPyramid config values must be positive");
        if (channels.empty()) throw ConfigError("MatchPyramid needs at least one conv layer");
        for (Index c : channels)
            if (c <= 0) throw ConfigError("conv channels must be positive");
        for (Index h : mlp_hidden)
            if (h <= 0) throw ConfigError("MLP hidden sizes must be positive");
        if (learning_rate <= 0 || weight_decay < 0) throw ConfigError("bad learning rate / weight decay");
        pyramid().output_hw();
    }

    void read(kv::Reader& r) {
        r.read("embed_dim", embed_dim);
        r.read("gru_units", gru_units);
        r.read("claim_len", claim_len);
        r.read("doc_len", doc_len);
        r.read("kernel", kernel);
        r.read("channels", channels);
        r.read("pool_h", pool_h);
        r.read("pool_w", pool_w);
        r.read("mlp_hidden", mlp_hidden);
        r.read("classes", classes);
        r.read("batch_size", batch_size);
        r.read("max_epochs", max_epochs);
        r.read("patience", patience);
        r.read("learning_rate", learning_rate);
        r.read("weight_decay", weight_decay);
    }

    kv::Map to_kv() const {
        return {{"embed_dim", kv::to_string(embed_dim)},   {"gru_units", kv::to_string(gru_units)},
                {"claim_len", kv::to_string(claim_len)},   {"doc_len", kv::to_string(doc_len)},
                {"kernel", kv::to_string(kernel)},         {"channels", kv::join(channels)},
                {"pool_h", kv::to_string(pool_h)},         {"pool_w", kv::to_string(pool_w)},
                {"mlp_hidden", kv::join(mlp_hidden)},      {"classes", kv::to_string(classes)},
                {"batch_size", kv::to_string(batch_size)}, {"max_epochs", kv::to_string(max_epochs)},
                {"patience", kv::to_string(patience)},     {"learning_rate", kv::to_string(learning_rate)},
                {"weight_decay", kv::to_string(weight_decay)}};
    }
};

struct MatchPyramidModel {
    MatchPyramidConfig config;
    nn::GruParams claim_gru;
    nn::GruParams doc_gru;
    std::vector<nn::Conv2dParams> convs;
    std::vector<nn::DenseParams> mlp;  // hidden layers then the output layer

    MatchPyramidModel() = default;

    explicit MatchPyramidModel(const MatchPyramidConfig& cfg)
        : config(cfg),
          claim_gru(cfg.embed_dim, cfg.gru_units),
          doc_gru(cfg.embed_dim, cfg.gru_units) {
        cfg.validate();
        Index in_ch = 1;
        for (Index c : cfg.channels) {
            convs.emplace_back(cfg.kernel, in_ch, c);
            in_ch = c;
        }
        Index width = flattened_dim();
        for (Index h : cfg.mlp_hidden) {
            mlp.emplace_back(width, h);
            width = h;
        }
        mlp.emplace_back(width, cfg.classes);
    }

    /// f: length of the flattened pyramid output.
    Index flattened_dim() const { return config.pyramid().flattened_dim(); }

    /// Both GRUs start from the same weights, so a word shared by claim and
    /// document lights up the interaction matrix before any training.
    void init(nn::Rng& rng) {
        claim_gru.init(rng);
        doc_gru = claim_gru;
        for (auto& c : convs) c.init(rng);
        for (auto& d : mlp) d.init(rng);
    }

    nn::ParamList params() {
        nn::ParamList out;
        claim_gru.collect(out, "claim_gru");
        doc_gru.collect(out, "doc_gru");
        for (std::size_t i = 0; i < convs.size(); ++i) convs[i].collect(out, "conv" + std::to_string(i));
        for (std::size_t i = 0; i < mlp.size(); ++i) mlp[i].collect(out, "mlp" + std::to_string(i));
        return out;
    }

    MatchPyramidModel zeros_like() const {
        MatchPyramidModel z = *this;
        nn::zero(z.params());
        return z;
    }
};

inline MatchPyramidModel make_matchpyramid(const MatchPyramidConfig& cfg, std::uint64_t seed) {
    MatchPyramidModel m(cfg);
    nn::Rng rng(seed);
    m.init(rng);
    return m;
}

/// Class probabilities (support, refute, insufficient) for prepared inputs.
inline std::vector<Vector> mp_forward_batch(const MatchPyramidModel& model, const std::vector<TextInputs>& batch) {
    std::vector<Matrix> claims, docs;
    for (const auto& in : batch) {
        claims.push_back(in.claim);
        docs.push_back(in.doc);
    }
    const auto q_ctx = nn::gru_forward_batch(claims, model.claim_gru);
    const auto d_ctx = nn::gru_forward_batch(docs, model.doc_gru);
    Matrix features(static_cast<Index>(batch.size()), model.flattened_dim());
    for (std::size_t b = 0; b < batch.size(); ++b)
        features.row(static_cast<Index>(b)) =
            pyramid_forward(q_ctx[b], d_ctx[b], model.convs, model.config.pool_h, model.config.pool_w).transpose();
    const Matrix probs = nn::softmax_rows(mlp_forward(model.mlp, features));
    std::vector<Vector> out;
    for (Index b = 0; b < probs.rows(); ++b) out.push_back(probs.row(b).transpose());
    return out;
}

inline Vector mp_forward(const ClaimDocumentPair& pair, const MatchPyramidModel& model, const EmbeddingTable& table) {
    require_shape(table.dim() == model.config.embed_dim, "embedding dimension does not match the model");
    return mp_forward_batch(model, {prepare_text_inputs(pair, table, model.config.claim_len, model.config.doc_len)})
        .front();
}

/// Adds weight * d(loss)/d(params) for a batch into `grads`; returns the summed
/// cross-entropy of the batch.
inline double mp_accumulate_gradients(const MatchPyramidModel& model, const std::vector<TextInputs>& batch,
                                      const std::vector<int>& targets, double weight, MatchPyramidModel& grads) {
    std::vector<Matrix> claims, docs;
    for (const auto& in : batch) {
        claims.push_back(in.claim);
        docs.push_back(in.doc);
    }
    nn::GruTrace q_trace, d_trace;
    const auto q_ctx = nn::gru_forward_batch(claims, model.claim_gru, &q_trace);
    const auto d_ctx = nn::gru_forward_batch(docs, model.doc_gru, &d_trace);
    std::vector<Matrix> d_q(batch.size()), d_d(batch.size());
    double loss = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        PyramidTrace trace;
        const Vector z = pyramid_forward(q_ctx[b], d_ctx[b], model.convs, model.config.pool_h,
                                         model.config.pool_w, &trace);
        MlpTrace mlp_trace;
        const Matrix logits = mlp_forward(model.mlp, z.transpose(), &mlp_trace);
        const Vector p = nn::softmax(logits.row(0).transpose());
        loss += nn::cross_entropy(p, targets[b]);
        const Matrix d_logits = (nn::softmax_cross_entropy_grad(p, targets[b]) * weight).transpose();
        const Vector d_z = mlp_backward(model.mlp, mlp_trace, d_logits, grads.mlp).row(0).transpose();
        d_q[b] = Matrix::Zero(q_ctx[b].rows(), q_ctx[b].cols());
        d_d[b] = Matrix::Zero(d_ctx[b].rows(), d_ctx[b].cols());
        pyramid_backward(trace, q_ctx[b], d_ctx[b], model.convs, d_z, grads.convs, d_q[b], d_d[b]);
    }
    nn::gru_backward_batch(q_trace, model.claim_gru, d_q, grads.claim_gru);
    nn::gru_backward_batch(d_trace, model.doc_gru, d_d, grads.doc_gru);
    return loss;
}

// --------------------------------------------------------------------------
// Predictions

struct EntailmentPrediction {
    Label3 label = Label3::Support;
    std::array<double, kNumLabel3> probabilities{};  // support, refute, insufficient
};

/// Code used in the ensemble features: insufficient 0, support 1, refute 2.
inline constexpr int entailment_code(Label3 l) {
    switch (l) {
    case Label3::Insufficient: return 0;
    case Label3::Support: return 1;
    case Label3::Refute: return 2;
    }
    return 0;
}

/// Lowest index wins among exact ties.
template <class Probs>
inline int argmax_lowest(const Probs& p, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (p[i] > p[best]) best = i;
    return best;
}

inline EntailmentPrediction prediction_from_probabilities(const Vector& p) {
    require_shape(p.size() == kNumLabel3, "entailment prediction needs 3 probabilities");
    EntailmentPrediction out;
    for (int i = 0; i < kNumLabel3; ++i) out.probabilities[i] = p[i];
    out.label = kAllLabel3[argmax_lowest(p, kNumLabel3)];
    return out;
}

inline EntailmentPrediction mp_predict(const ClaimDocumentPair& pair, const MatchPyramidModel& model,
                                       const EmbeddingTable& table) {
    return prediction_from_probabilities(mp_forward(pair, model, table));
}

/// Anything that produces 3-way entailment predictions for pairs.
class EntailmentPredictor {
public:
    virtual ~EntailmentPredictor() = default;
    virtual EntailmentPrediction predict(const ClaimDocumentPair& pair) const = 0;

    virtual std::vector<EntailmentPrediction> predict_all(const Dataset& ds) const {
        std::vector<EntailmentPrediction> out;
        out.reserve(ds.size());
        for (const auto& p : ds.pairs) out.push_back(predict(p));
        return out;
    }
};

class MatchPyramidPredictor final : public EntailmentPredictor {
public:
    MatchPyramidPredictor(const MatchPyramidModel& model, const EmbeddingTable& table) : model_(model), table_(table) {}

    EntailmentPrediction predict(const ClaimDocumentPair& pair) const override {
        return mp_predict(pair, model_, table_);
    }

    std::vector<EntailmentPrediction> predict_all(const Dataset& ds) const override {
        std::vector<EntailmentPrediction> out;
        out.reserve(ds.size());
        const auto chunk = static_cast<std::size_t>(model_.config.batch_size);
        for (std::size_t start = 0; start < ds.size(); start += chunk) {
            std::vector<TextInputs> batch;
            for (std::size_t i = start; i < std::min(ds.size(), start + chunk); ++i)
                batch.push_back(
                    prepare_text_inputs(ds.pairs[i], table_, model_.config.claim_len, model_.config.doc_len));
            for (const auto& p : mp_forward_batch(model_, batch)) out.push_back(prediction_from_probabilities(p));
        }
        return out;
    }

private:
    const MatchPyramidModel& model_;
    const EmbeddingTable& table_;
};

inline nlohmann::json prediction_json(const std::string& pair_id, std::string_view label,
                                      const std::vector<double>& probabilities) {
    return {{"pair_id", pair_id}, {"label", std::string(label)}, {"probabilities", probabilities}};
}

/// Predictions produced elsewhere (e.g. a fine-tuned transformer), read from
/// JSONL lines {"pair_id", "label", "probabilities": [support, refute, insufficient]}.
class ExternalPredictions final : public EntailmentPredictor {
public:
    void add(const std::string& pair_id, const EntailmentPrediction& p) { by_id_[pair_id] = p; }

    EntailmentPrediction predict(const ClaimDocumentPair& pair) const override {
        auto it = by_id_.find(pair.id);
        if (it == by_id_.end()) throw DataError("no external prediction for pair '" + pair.id + "'");
        return it->second;
    }

    std::size_t size() const { return by_id_.size(); }

    static ExternalPredictions parse(std::istream& in) {
        ExternalPredictions out;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (detail::trim(line).empty()) continue;
            try {
                const auto j = nlohmann::json::parse(line);
                const auto id = j.at("pair_id").get<std::string>();
                const auto label = parse_label3(j.at("label").get<std::string>());
                if (!label) throw DataError("unknown 3-way label");
                const auto probs = j.at("probabilities").get<std::vector<double>>();
                if (probs.size() != kNumLabel3) throw DataError("expected 3 probabilities");
                double sum = 0;
                for (double v : probs) {
                    if (!(v >= 0.0)) throw DataError("negative probability");
                    sum += v;
                }
                if (std::abs(sum - 1.0) > 1e-6) throw DataError("probabilities do not sum to 1");
                EntailmentPrediction p;
                std::copy(probs.begin(), probs.end(), p.probabilities.begin());
                if (p.probabilities[index_of(*label)] < *std::max_element(probs.begin(), probs.end()))
                    throw DataError("label is not the most probable class");
                p.label = *label;
                if (!out.by_id_.emplace(id, p).second) throw DataError("duplicate pair_id '" + id + "'");
            } catch (const nlohmann::json::exception& e) {
                throw DataError("line " + std::to_string(line_no) + ": " + e.what());
            } catch (const DataError& e) {
                throw DataError("line " + std::to_string(line_no) + ": " + e.what());
            }
        }
        return out;
    }

    static ExternalPredictions load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open predictions '" + path + "'");
        try {
            return parse(in);
        } catch (const DataError& e) {
            throw DataError(path + ": " + e.what());
        }
    }

private:
    std::unordered_map<std::string, EntailmentPrediction> by_id_;
};

// --------------------------------------------------------------------------
// Training

struct EpochLog {
    Index epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    double val_accuracy = 0;
    double val_weighted_f1 = 0;
};

inline std::string training_log_csv(const std::vector<EpochLog>& log) {
    std::string out = "epoch,train_loss,val_loss,val_acc,val_weighted_f1\n";
    for (const auto& e : log)
        out += std::to_string(e.epoch) + "," + kv::to_string(e.train_loss) + "," + kv::to_string(e.val_loss) + "," +
               kv::to_string(e.val_accuracy) + "," + kv::to_string(e.val_weighted_f1) + "\n";
    return out;
}

struct MatchPyramidTrainResult {
    MatchPyramidModel model;
    std::vector<EpochLog> log;
    Index best_epoch = 0;
};

struct Evaluation {
    double loss = 0;
    double accuracy = 0;
    double weighted_f1 = 0;
    std::vector<int> golds, preds;
};

inline std::vector<int> label3_targets(const Dataset& ds) {
    std::vector<int> out;
    for (const auto& p : ds.pairs) {
        if (!p.label) throw DataError("pair '" + p.id + "' has no label");
        out.push_back(index_of(map_5way_to_3way(*p.label)));
    }
    return out;
}

inline Evaluation mp_evaluate(const MatchPyramidModel& model, const Dataset& ds, const EmbeddingTable& table) {
    Evaluation ev;
    ev.golds = label3_targets(ds);
    const auto preds = MatchPyramidPredictor(model, table).predict_all(ds);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        ev.loss -= std::log(std::max(preds[i].probabilities[ev.golds[i]], std::numeric_limits<double>::min()));
        ev.preds.push_back(index_of(preds[i].label));
    }
    ev.loss /= static_cast<double>(ds.size());
    ev.accuracy = accuracy(ev.golds, ev.preds);
    ev.weighted_f1 = weighted_f1(ev.golds, ev.preds, kNumLabel3);
    return ev;
}

/// Adam on mean cross-entropy; keeps the parameters with the best validation
/// weighted F1 and stops after `patience` epochs without improvement.
inline MatchPyramidTrainResult mp_train(const Dataset& train, const Dataset& val, const EmbeddingTable& table,
                                        const MatchPyramidConfig& config, std::uint64_t seed,
                                        const std::function<void(const EpochLog&)>& on_epoch = {}) {
    if (train.empty()) throw DataError("mp_train: empty training set");
    if (val.empty()) throw DataError("mp_train: empty validation set");
    if (table.dim() != config.embed_dim)
        throw ConfigError("embedding dimension " + std::to_string(table.dim()) + " != embed_dim " +
                          std::to_string(config.embed_dim));
    const auto targets = label3_targets(train);
    label3_targets(val);

    MatchPyramidTrainResult result{make_matchpyramid(config, seed), {}, 0};
    MatchPyramidModel model = result.model;
    MatchPyramidModel grads = model.zeros_like();
    nn::OptimizerState opt(config.learning_rate, config.weight_decay);
    nn::Rng shuffle_rng(seed ^ 0x9E3779B97F4A7C15ULL);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    double best_f1 = -1.0;
    Index since_best = 0;
    for (Index epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<TextInputs> batch;
            std::vector<int> batch_targets;
            for (std::size_t i = start; i < stop; ++i) {
                batch.push_back(prepare_text_inputs(train.pairs[order[i]], table, config.claim_len, config.doc_len));
                batch_targets.push_back(targets[order[i]]);
            }
            auto grad_list = grads.params();
            nn::zero(grad_list);
            loss_sum += mp_accumulate_gradients(model, batch, batch_targets, 1.0 / static_cast<double>(batch.size()),
                                                grads);
            nn::adam_step(model.params(), grad_list, opt);
        }
        const Evaluation ev = mp_evaluate(model, val, table);
        EpochLog entry{epoch, loss_sum / static_cast<double>(train.size()), ev.loss, ev.accuracy, ev.weighted_f1};
        result.log.push_back(entry);
        if (on_epoch) on_epoch(entry);
        if (ev.weighted_f1 > best_f1) {
            best_f1 = ev.weighted_f1;
            result.model = model;
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    return result;
}

// --------------------------------------------------------------------------
// Checkpoints

inline void save_matchpyramid(MatchPyramidModel& model, const std::string& path) {
    nn::save_checkpoint(path, {{"kind", "text3"}, {"config", nn::encode_config(model.config.to_kv())}},
                        model.params());
}

inline void check_kind(const nn::Checkpoint& ck, const std::string& expected, const std::string& path) {
    auto it = ck.meta.find("kind");
    const std::string kind = it == ck.meta.end() ? "unknown" : it->second;
    if (kind != expected)
        throw CheckpointKindError("checkpoint '" + path + "' holds a " + kind + " model, expected " + expected);
}

inline MatchPyramidModel load_matchpyramid(const std::string& path) {
    const auto ck = nn::load_checkpoint(path);
    check_kind(ck, "text3", path);
    MatchPyramidConfig cfg;
    kv::Reader reader(nn::decode_config(ck.meta.at("config")));
    cfg.read(reader);
    MatchPyramidModel model(cfg);
    nn::assign(ck, model.params());
    return model;
}

} // namespace mmfv

#endif
