#ifndef MMFV_MULTIMODAL_HPP
#define MMFV_MULTIMODAL_HPP

// 5-way multimodal entailment network.
//
//   A  text match:  MatchPyramid features Z            -> dense 256 + ReLU + dropout
//   B  fusion:      [V', E', q_cross, d_cross]          -> dense 256 + ReLU + dropout
//   C  hypothesis:  [claim GRU final state, unit(q_i)]  -> dense 256 + ReLU + dropout
//   concat(A, B, C) -> batch norm -> dropout -> dense 5 -> softmax
//
// q_i, d_i are image features pushed through a frozen l x 512 projection.
// V' and E' are V and E standardized with frozen training-set statistics.
// q_cross / d_cross attend from the (aligned) document image to the claim /
// document GRU context sequences.

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mmfv/corpus.hpp"
#include "mmfv/kv.hpp"
#include "mmfv/metrics.hpp"
#include "mmfv/nn/activations.hpp"
#include "mmfv/nn/attention.hpp"
#include "mmfv/nn/batchnorm.hpp"
#include "mmfv/nn/checkpoint.hpp"
#include "mmfv/nn/dense.hpp"
#include "mmfv/nn/gru.hpp"
#include "mmfv/nn/optim.hpp"
#include "mmfv/text_entailment.hpp"
#include "mmfv/text_prep.hpp"

namespace mmfv {

struct MultimodalConfig {
    Index image_dim = 2048;
    Index proj_dim = 512;
    Index embed_dim = 50;
    Index gru_units = 50;
    Index claim_len = 100;
    Index doc_len = 1000;
    Index kernel = 3;
    std::vector<Index> channels{16, 32};
    Index pool_h = 5;
    Index pool_w = 10;
    Index hidden = 256;
    Index classes = 5;
    bool use_q_merge = true;
    bool use_q_cross = true;
    bool use_d_cross = true;
    // training
    Index batch_size = 32;
    Index max_epochs = 80;
    Index patience = 5;
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;
    double dropout = 0.2;
    Index lr_patience = 3;
    double lr_factor = 0.5;

    PyramidShape pyramid() const { return {claim_len, doc_len, kernel, channels, pool_h, pool_w}; }

    void validate() const {
        for (Index v : {image_dim, proj_dim, embed_dim, gru_units, claim_len, doc_len, kernel, pool_h, pool_w, hidden,
                        classes, batch_size, lr_patience})
            if (v <= 0) throw ConfigError("multimodal config values must be positive");
        if (channels.empty()) throw ConfigError("multimodal model needs at least one conv layer");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
        if (learning_rate <= 0 || weight_decay < 0) throw ConfigError("bad learning rate / weight decay");
        if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw ConfigError("lr_factor must be in (0, 1)");
        pyramid().output_hw();
    }

    void read(kv::Reader& r) {
        r.read("image_dim", image_dim);
        r.read("proj_dim", proj_dim);
        r.read("embed_dim", embed_dim);
        r.read("gru_units", gru_units);
        r.read("claim_len", claim_len);
        r.read("doc_len", doc_len);
        r.read("kernel", kernel);
        r.read("channels", channels);
        r.read("pool_h", pool_h);
        r.read("pool_w", pool_w);
        r.read("hidden", hidden);
        r.read("classes", classes);
        r.read("use_q_merge", use_q_merge);
        r.read("use_q_cross", use_q_cross);
        r.read("use_d_cross", use_d_cross);
        r.read("batch_size", batch_size);
        r.read("max_epochs", max_epochs);
        r.read("patience", patience);
        r.read("learning_rate", learning_rate);
        r.read("weight_decay", weight_decay);
        r.read("dropout", dropout);
        r.read("lr_patience", lr_patience);
        r.read("lr_factor", lr_factor);
    }

    kv::Map to_kv() const {
        return {{"image_dim", kv::to_string(image_dim)},
                {"proj_dim", kv::to_string(proj_dim)},
                {"embed_dim", kv::to_string(embed_dim)},
                {"gru_units", kv::to_string(gru_units)},
                {"claim_len", kv::to_string(claim_len)},
                {"doc_len", kv::to_string(doc_len)},
                {"kernel", kv::to_string(kernel)},
                {"channels", kv::join(channels)},
                {"pool_h", kv::to_string(pool_h)},
                {"pool_w", kv::to_string(pool_w)},
                {"hidden", kv::to_string(hidden)},
                {"classes", kv::to_string(classes)},
                {"use_q_merge", kv::to_string(use_q_merge)},
                {"use_q_cross", kv::to_string(use_q_cross)},
                {"use_d_cross", kv::to_string(use_d_cross)},
                {"batch_size", kv::to_string(batch_size)},
                {"max_epochs", kv::to_string(max_epochs)},
                {"patience", kv::to_string(patience)},
                {"learning_rate", kv::to_string(learning_rate)},
                {"weight_decay", kv::to_string(weight_decay)},
                {"dropout", kv::to_string(dropout)},
                {"lr_patience", kv::to_string(lr_patience)},
                {"lr_factor", kv::to_string(lr_factor)}};
    }
};

struct MultimodalModel {
    MultimodalConfig config;
    Matrix projection;  // [l x 512], frozen
    Matrix visual_scaling = identity_scaling();  // rows: shift, scale; cols: V, E; frozen
    nn::GruParams claim_gru;
    nn::GruParams doc_gru;
    std::vector<nn::Conv2dParams> convs;
    nn::DenseParams align_q;  // 512 -> o, query for q_cross
    nn::DenseParams align_d;  // 512 -> o, query for d_cross
    nn::DenseParams text_mlp;
    nn::DenseParams fusion_mlp;
    nn::DenseParams hyp_mlp;
    nn::BatchNormParams norm;
    nn::DenseParams output;

    MultimodalModel() = default;

    static Matrix identity_scaling() { return (Matrix(2, 2) << 0.0, 0.0, 1.0, 1.0).finished(); }

    explicit MultimodalModel(const MultimodalConfig& cfg)
        : config(cfg),
          projection(Matrix::Zero(cfg.image_dim, cfg.proj_dim)),
          claim_gru(cfg.embed_dim, cfg.gru_units),
          doc_gru(cfg.embed_dim, cfg.gru_units) {
        cfg.validate();
        Index in_ch = 1;
        for (Index c : cfg.channels) {
            convs.emplace_back(cfg.kernel, in_ch, c);
            in_ch = c;
        }
        if (cfg.use_q_cross) align_q = nn::DenseParams(cfg.proj_dim, cfg.gru_units);
        if (cfg.use_d_cross) align_d = nn::DenseParams(cfg.proj_dim, cfg.gru_units);
        text_mlp = nn::DenseParams(cfg.pyramid().flattened_dim(), cfg.hidden);
        fusion_mlp = nn::DenseParams(fusion_dim(), cfg.hidden);
        if (cfg.use_q_merge) hyp_mlp = nn::DenseParams(cfg.gru_units + cfg.proj_dim, cfg.hidden);
        norm = nn::BatchNormParams(merged_dim());
        output = nn::DenseParams(merged_dim(), cfg.classes);
    }

    /// Width of [V, E, q_cross?, d_cross?].
    Index fusion_dim() const {
        return 2 + (config.use_q_cross ? config.gru_units : 0) + (config.use_d_cross ? config.gru_units : 0);
    }

    Index branches() const { return config.use_q_merge ? 3 : 2; }
    Index merged_dim() const { return branches() * config.hidden; }

    void init(nn::Rng& rng) {
        nn::he_uniform(projection, config.image_dim, rng);
        claim_gru.init(rng);
        doc_gru = claim_gru;  // shared starting point, as in MatchPyramidModel
        for (auto& c : convs) c.init(rng);
        if (config.use_q_cross) align_q.init(rng);
        if (config.use_d_cross) align_d.init(rng);
        text_mlp.init(rng);
        fusion_mlp.init(rng);
        if (config.use_q_merge) hyp_mlp.init(rng);
        output.init(rng);
    }

    nn::ParamList params() {
        nn::ParamList out;
        out.push_back(nn::param_ref("image_projection", projection, false));
        out.push_back(nn::param_ref("visual_scaling", visual_scaling, false));
        claim_gru.collect(out, "claim_gru");
        doc_gru.collect(out, "doc_gru");
        for (std::size_t i = 0; i < convs.size(); ++i) convs[i].collect(out, "conv" + std::to_string(i));
        if (config.use_q_cross) align_q.collect(out, "align_q");
        if (config.use_d_cross) align_d.collect(out, "align_d");
        text_mlp.collect(out, "text_mlp");
        fusion_mlp.collect(out, "fusion_mlp");
        if (config.use_q_merge) hyp_mlp.collect(out, "hyp_mlp");
        norm.collect(out, "batch_norm");
        output.collect(out, "output");
        return out;
    }

    MultimodalModel zeros_like() const {
        MultimodalModel z = *this;
        nn::zero(z.params());
        return z;
    }
};

inline MultimodalModel make_multimodal(const MultimodalConfig& cfg, std::uint64_t seed) {
    MultimodalModel m(cfg);
    nn::Rng rng(seed);
    m.init(rng);
    return m;
}

// --------------------------------------------------------------------------
// Building blocks

inline Vector project_image(const Eigen::Ref<const Vector>& feature, const MultimodalModel& model) {
    require_shape(feature.size() == model.projection.rows(),
                  "project_image: feature length " + std::to_string(feature.size()) + " != " +
                      std::to_string(model.projection.rows()));
    return model.projection.transpose() * feature;
}

struct VisualMatch {
    double V = 0.0;  // cosine, 0 when either vector is zero
    double E = 1.0;  // 1 / (1 + |q - d|)
};

inline VisualMatch visual_match(const Eigen::Ref<const Vector>& q, const Eigen::Ref<const Vector>& d) {
    require_shape(q.size() == d.size(), "visual_match: length mismatch");
    VisualMatch m;
    const double nq = q.norm(), nd = d.norm();
    m.V = (nq > 0 && nd > 0) ? std::clamp(q.dot(d) / (nq * nd), -1.0, 1.0) : 0.0;
    m.E = 1.0 / (1.0 + (q - d).norm());
    return m;
}

inline Vector unit_or_zero(const Eigen::Ref<const Vector>& v) {
    const double n = v.norm();
    return n > 0 ? Vector(v / n) : Vector::Zero(v.size());
}

/// The aligned image vector is the single query; the text context rows are
/// keys and values.
inline Vector cross_modal_attend(const Eigen::Ref<const Vector>& image_vec, const Matrix& text_ctx,
                                 const nn::DenseParams& align, nn::AttentionCache* cache = nullptr) {
    require_shape(image_vec.size() == align.in_dim(), "cross_modal_attend: image vector width mismatch");
    require_shape(text_ctx.cols() == align.out_dim(), "cross_modal_attend: text context width mismatch");
    const Matrix query = nn::dense_forward(image_vec.transpose(), align, nn::Activation::None);
    return nn::sdp_attention(query, text_ctx, text_ctx, cache).row(0).transpose();
}

struct MultimodalInputs {
    TextInputs text;
    Vector q_image;  // raw stored features [l]
    Vector d_image;
};

inline MultimodalInputs prepare_multimodal_inputs(const ClaimDocumentPair& pair, const EmbeddingTable& table,
                                                  const ImageFeatureStore& store, const MultimodalConfig& cfg) {
    if (static_cast<Index>(store.dim()) != cfg.image_dim)
        throw DataError("feature store dimension " + std::to_string(store.dim()) + " != image_dim " +
                        std::to_string(cfg.image_dim));
    return {prepare_text_inputs(pair, table, cfg.claim_len, cfg.doc_len), store.vector(pair.claim_image_id),
            store.vector(pair.doc_image_id)};
}

// --------------------------------------------------------------------------
// Batched forward / backward

/// Per-batch intermediate values shared by inference and training.
struct MultimodalFront {
    std::vector<Matrix> q_ctx, d_ctx;
    nn::GruTrace q_trace, d_trace;
    Matrix q_proj, d_proj;  // [B x 512]
    Matrix text_in;         // [B x f]
    Matrix fusion_in;       // [B x fusion_dim]
    Matrix hyp_in;          // [B x (o + 512)]
    std::vector<nn::AttentionCache> q_att, d_att;
    std::vector<PyramidTrace> pyramids;
    std::vector<VisualMatch> visual;
};

inline MultimodalFront mm_front(const MultimodalModel& model, const std::vector<MultimodalInputs>& batch,
                                bool keep_traces) {
    const auto& cfg = model.config;
    const auto B = static_cast<Index>(batch.size());
    const Index o = cfg.gru_units;
    MultimodalFront f;
    std::vector<Matrix> claims, docs;
    Matrix q_raw(B, cfg.image_dim), d_raw(B, cfg.image_dim);
    for (Index b = 0; b < B; ++b) {
        const auto& in = batch[static_cast<std::size_t>(b)];
        claims.push_back(in.text.claim);
        docs.push_back(in.text.doc);
        require_shape(in.q_image.size() == cfg.image_dim && in.d_image.size() == cfg.image_dim,
                      "multimodal: image feature length mismatch");
        q_raw.row(b) = in.q_image.transpose();
        d_raw.row(b) = in.d_image.transpose();
    }
    f.q_ctx = nn::gru_forward_batch(claims, model.claim_gru, keep_traces ? &f.q_trace : nullptr);
    f.d_ctx = nn::gru_forward_batch(docs, model.doc_gru, keep_traces ? &f.d_trace : nullptr);
    f.q_proj = q_raw * model.projection;
    f.d_proj = d_raw * model.projection;

    f.text_in.resize(B, model.text_mlp.in_dim());
    f.fusion_in.resize(B, model.fusion_dim());
    if (cfg.use_q_merge) f.hyp_in.resize(B, o + cfg.proj_dim);
    f.q_att.resize(batch.size());
    f.d_att.resize(batch.size());
    if (keep_traces) f.pyramids.resize(batch.size());
    for (Index b = 0; b < B; ++b) {
        const auto i = static_cast<std::size_t>(b);
        f.text_in.row(b) = pyramid_forward(f.q_ctx[i], f.d_ctx[i], model.convs, cfg.pool_h, cfg.pool_w,
                                           keep_traces ? &f.pyramids[i] : nullptr)
                               .transpose();
        const Vector qi = f.q_proj.row(b).transpose();
        const Vector di = f.d_proj.row(b).transpose();
        const VisualMatch vm = visual_match(qi, di);
        f.visual.push_back(vm);
        f.fusion_in(b, 0) = (vm.V - model.visual_scaling(0, 0)) * model.visual_scaling(1, 0);
        f.fusion_in(b, 1) = (vm.E - model.visual_scaling(0, 1)) * model.visual_scaling(1, 1);
        Index col = 2;
        if (cfg.use_q_cross) {
            f.fusion_in.row(b).segment(col, o) =
                cross_modal_attend(di, f.q_ctx[i], model.align_q, keep_traces ? &f.q_att[i] : nullptr).transpose();
            col += o;
        }
        if (cfg.use_d_cross)
            f.fusion_in.row(b).segment(col, o) =
                cross_modal_attend(di, f.d_ctx[i], model.align_d, keep_traces ? &f.d_att[i] : nullptr).transpose();
        if (cfg.use_q_merge) {
            f.hyp_in.row(b).head(o) = f.q_ctx[i].row(cfg.claim_len - 1);
            f.hyp_in.row(b).tail(cfg.proj_dim) = unit_or_zero(qi).transpose();
        }
    }
    return f;
}

/// Head activations for one batch.
struct MultimodalHead {
    Matrix text_h, fusion_h, hyp_h;  // post-ReLU branch outputs
    Matrix text_mask, fusion_mask, hyp_mask, out_mask;
    Matrix merged;  // concat of masked branch outputs
    Matrix normed;
    nn::BatchNormCache bn_cache;
    Matrix dropped;
    Matrix probs;
};

/// With `train_norm` (the model's own batch-norm block) the head uses batch
/// statistics, advances the running averages and draws dropout from `rng`.
/// Without it: running statistics and no dropout.
inline MultimodalHead mm_head(const MultimodalModel& model, const MultimodalFront& f, nn::BatchNormParams* train_norm,
                              nn::Rng* rng) {
    const bool train_mode = train_norm != nullptr;
    const auto& cfg = model.config;
    const Index B = f.text_in.rows();
    const Index H = cfg.hidden;
    MultimodalHead h;
    auto mask = [&](Index rows, Index cols) {
        if (train_mode && rng) return nn::dropout_mask(rows, cols, cfg.dropout, *rng);
        return Matrix(Matrix::Ones(rows, cols));
    };
    h.text_h = nn::dense_forward(f.text_in, model.text_mlp, nn::Activation::Relu);
    h.fusion_h = nn::dense_forward(f.fusion_in, model.fusion_mlp, nn::Activation::Relu);
    h.text_mask = mask(B, H);
    h.fusion_mask = mask(B, H);
    h.merged.resize(B, model.merged_dim());
    h.merged.leftCols(H) = h.text_h.cwiseProduct(h.text_mask);
    h.merged.middleCols(H, H) = h.fusion_h.cwiseProduct(h.fusion_mask);
    if (cfg.use_q_merge) {
        h.hyp_h = nn::dense_forward(f.hyp_in, model.hyp_mlp, nn::Activation::Relu);
        h.hyp_mask = mask(B, H);
        h.merged.rightCols(H) = h.hyp_h.cwiseProduct(h.hyp_mask);
    }
    h.normed = train_mode ? nn::batchnorm_train(h.merged, *train_norm, h.bn_cache)
                          : nn::batchnorm_infer(h.merged, model.norm);
    h.out_mask = mask(B, model.merged_dim());
    h.dropped = h.normed.cwiseProduct(h.out_mask);
    h.probs = nn::softmax_rows(nn::dense_forward(h.dropped, model.output, nn::Activation::None));
    return h;
}

inline std::vector<Vector> mm_forward_batch(const MultimodalModel& model, const std::vector<MultimodalInputs>& batch) {
    const MultimodalFront f = mm_front(model, batch, false);
    const MultimodalHead h = mm_head(model, f, nullptr, nullptr);
    std::vector<Vector> out;
    for (Index b = 0; b < h.probs.rows(); ++b) out.push_back(h.probs.row(b).transpose());
    return out;
}

inline Vector mm_forward(const ClaimDocumentPair& pair, const MultimodalModel& model, const EmbeddingTable& table,
                         const ImageFeatureStore& store) {
    require_shape(table.dim() == model.config.embed_dim, "embedding dimension does not match the model");
    return mm_forward_batch(model, {prepare_multimodal_inputs(pair, table, store, model.config)}).front();
}

/// Adds weight * d(loss)/d(params) into `grads` and returns the summed
/// cross-entropy. In train mode the batch-norm running averages of `model`
/// advance.
inline double mm_accumulate_gradients(MultimodalModel& model, const std::vector<MultimodalInputs>& batch,
                                      const std::vector<int>& targets, double weight, MultimodalModel& grads,
                                      bool train_mode, nn::Rng* rng) {
    const auto& cfg = model.config;
    const Index B = static_cast<Index>(batch.size());
    const Index H = cfg.hidden;
    const Index o = cfg.gru_units;
    require_shape(static_cast<Index>(targets.size()) == B, "mm gradients: target count mismatch");
    const MultimodalFront f = mm_front(model, batch, true);
    const MultimodalHead h = mm_head(model, f, train_mode ? &model.norm : nullptr, rng);

    double loss = 0.0;
    Matrix d_logits(B, cfg.classes);
    for (Index b = 0; b < B; ++b) {
        const int t = targets[static_cast<std::size_t>(b)];
        loss += nn::cross_entropy(h.probs.row(b).transpose(), t);
        d_logits.row(b) = nn::softmax_cross_entropy_grad(h.probs.row(b).transpose(), t).transpose() * weight;
    }
    const Matrix d_normed =
        nn::dense_backward(h.dropped, h.probs, nn::Activation::None, d_logits, model.output, grads.output)
            .cwiseProduct(h.out_mask);
    const Matrix d_merged = train_mode ? nn::batchnorm_train_backward(h.bn_cache, model.norm, d_normed, grads.norm)
                                 : nn::batchnorm_infer_backward(h.merged, model.norm, d_normed, grads.norm);

    const Matrix d_text_in =
        nn::dense_backward(f.text_in, h.text_h, nn::Activation::Relu,
                           d_merged.leftCols(H).cwiseProduct(h.text_mask), model.text_mlp, grads.text_mlp);
    const Matrix d_fusion_in =
        nn::dense_backward(f.fusion_in, h.fusion_h, nn::Activation::Relu,
                           d_merged.middleCols(H, H).cwiseProduct(h.fusion_mask), model.fusion_mlp, grads.fusion_mlp);
    Matrix d_hyp_in;
    if (cfg.use_q_merge)
        d_hyp_in = nn::dense_backward(f.hyp_in, h.hyp_h, nn::Activation::Relu,
                                      d_merged.rightCols(H).cwiseProduct(h.hyp_mask), model.hyp_mlp, grads.hyp_mlp);

    std::vector<Matrix> d_q(batch.size()), d_d(batch.size());
    for (Index b = 0; b < B; ++b) {
        const auto i = static_cast<std::size_t>(b);
        d_q[i] = Matrix::Zero(f.q_ctx[i].rows(), o);
        d_d[i] = Matrix::Zero(f.d_ctx[i].rows(), o);
        pyramid_backward(f.pyramids[i], f.q_ctx[i], f.d_ctx[i], model.convs, d_text_in.row(b).transpose(), grads.convs,
                         d_q[i], d_d[i]);
        const Matrix di = f.d_proj.row(b);
        Index col = 2;
        if (cfg.use_q_cross) {
            const auto g = nn::sdp_attention_backward(f.q_att[i], d_fusion_in.row(b).segment(col, o));
            d_q[i] += g.key + g.value;
            nn::dense_backward(di, f.q_att[i].query, nn::Activation::None, g.query, model.align_q, grads.align_q);
            col += o;
        }
        if (cfg.use_d_cross) {
            const auto g = nn::sdp_attention_backward(f.d_att[i], d_fusion_in.row(b).segment(col, o));
            d_d[i] += g.key + g.value;
            nn::dense_backward(di, f.d_att[i].query, nn::Activation::None, g.query, model.align_d, grads.align_d);
        }
        if (cfg.use_q_merge) d_q[i].row(cfg.claim_len - 1) += d_hyp_in.row(b).head(o);
    }
    nn::gru_backward_batch(f.q_trace, model.claim_gru, d_q, grads.claim_gru);
    nn::gru_backward_batch(f.d_trace, model.doc_gru, d_d, grads.doc_gru);
    return loss;
}

// --------------------------------------------------------------------------
// Prediction, training, checkpoints

struct MultimodalPrediction {
    Label5 label = Label5::SupportMultimodal;
    std::array<double, kNumLabel5> probabilities{};
};

inline MultimodalPrediction multimodal_prediction(const Vector& p) {
    require_shape(p.size() == kNumLabel5, "multimodal prediction needs 5 probabilities");
    MultimodalPrediction out;
    for (int i = 0; i < kNumLabel5; ++i) out.probabilities[i] = p[i];
    out.label = kAllLabel5[argmax_lowest(p, kNumLabel5)];
    return out;
}

inline MultimodalPrediction mm_predict(const ClaimDocumentPair& pair, const MultimodalModel& model,
                                       const EmbeddingTable& table, const ImageFeatureStore& store) {
    return multimodal_prediction(mm_forward(pair, model, table, store));
}

inline std::vector<MultimodalPrediction> mm_predict_all(const MultimodalModel& model, const Dataset& ds,
                                                        const EmbeddingTable& table, const ImageFeatureStore& store) {
    require_shape(table.dim() == model.config.embed_dim, "embedding dimension does not match the model");
    std::vector<MultimodalPrediction> out;
    out.reserve(ds.size());
    const auto chunk = static_cast<std::size_t>(model.config.batch_size);
    for (std::size_t start = 0; start < ds.size(); start += chunk) {
        std::vector<MultimodalInputs> batch;
        for (std::size_t i = start; i < std::min(ds.size(), start + chunk); ++i)
            batch.push_back(prepare_multimodal_inputs(ds.pairs[i], table, store, model.config));
        for (const auto& p : mm_forward_batch(model, batch)) out.push_back(multimodal_prediction(p));
    }
    return out;
}

inline std::vector<int> label5_targets(const Dataset& ds) {
    std::vector<int> out;
    for (const auto& p : ds.pairs) {
        if (!p.label) throw DataError("pair '" + p.id + "' has no label");
        out.push_back(index_of(*p.label));
    }
    return out;
}

inline Evaluation mm_evaluate(const MultimodalModel& model, const Dataset& ds, const EmbeddingTable& table,
                              const ImageFeatureStore& store) {
    Evaluation ev;
    ev.golds = label5_targets(ds);
    const auto preds = mm_predict_all(model, ds, table, store);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        ev.loss -= std::log(std::max(preds[i].probabilities[ev.golds[i]], std::numeric_limits<double>::min()));
        ev.preds.push_back(index_of(preds[i].label));
    }
    ev.loss /= static_cast<double>(ds.size());
    ev.accuracy = accuracy(ev.golds, ev.preds);
    ev.weighted_f1 = weighted_f1(ev.golds, ev.preds, kNumLabel5);
    return ev;
}

/// Sets the V / E standardization from the pairs of `ds`, using the model's
/// projection. A constant feature keeps scale 1.
inline void fit_visual_scaling(MultimodalModel& model, const Dataset& ds, const ImageFeatureStore& store) {
    if (ds.empty()) throw DataError("fit_visual_scaling: empty dataset");
    Matrix ve(static_cast<Index>(ds.size()), 2);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& p = ds.pairs[i];
        const auto vm = visual_match(project_image(store.vector(p.claim_image_id), model),
                                     project_image(store.vector(p.doc_image_id), model));
        ve(static_cast<Index>(i), 0) = vm.V;
        ve(static_cast<Index>(i), 1) = vm.E;
    }
    Matrix s = MultimodalModel::identity_scaling();
    for (Index c = 0; c < 2; ++c) {
        const double mean = ve.col(c).mean();
        const double sd = std::sqrt((ve.col(c).array() - mean).square().mean());
        s(0, c) = mean;
        if (sd > 1e-12) s(1, c) = 1.0 / sd;
    }
    model.visual_scaling = s;
}

struct MultimodalTrainResult {
    MultimodalModel model;
    std::vector<EpochLog> log;
    Index best_epoch = 0;
};

/// Adam with decoupled weight decay on mean cross-entropy, after fitting the
/// visual scaling on `train`. Keeps the
/// parameters with the best validation accuracy, stops after `patience`
/// epochs without improvement and halves the learning rate when validation
/// loss plateaus.
inline MultimodalTrainResult mm_train(const Dataset& train, const Dataset& val, const EmbeddingTable& table,
                                      const ImageFeatureStore& store, const MultimodalConfig& config,
                                      std::uint64_t seed, const std::function<void(const EpochLog&)>& on_epoch = {}) {
    if (train.empty()) throw DataError("mm_train: empty training set");
    if (val.empty()) throw DataError("mm_train: empty validation set");
    if (table.dim() != config.embed_dim)
        throw ConfigError("embedding dimension " + std::to_string(table.dim()) + " != embed_dim " +
                          std::to_string(config.embed_dim));
    const auto targets = label5_targets(train);
    label5_targets(val);
    for (const auto* ds : {&train, &val})
        for (const auto& p : ds->pairs)
            for (const auto* id : {&p.claim_image_id, &p.doc_image_id})
                if (!store.contains(*id)) throw DataError("missing image feature for image_id '" + *id + "'");

    MultimodalTrainResult result{make_multimodal(config, seed), {}, 0};
    fit_visual_scaling(result.model, train, store);
    MultimodalModel model = result.model;
    MultimodalModel grads = model.zeros_like();
    nn::OptimizerState opt(config.learning_rate, config.weight_decay);
    nn::PlateauScheduler scheduler(config.lr_patience, config.lr_factor);
    nn::Rng shuffle_rng(seed ^ 0x9E3779B97F4A7C15ULL);
    nn::Rng dropout_rng(seed ^ 0xD1B54A32D192ED03ULL);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    // batch boundaries; a trailing single sample joins the previous batch so
    // batch statistics always see at least two rows
    std::vector<std::size_t> bounds;
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(config.batch_size)) bounds.push_back(s);
    if (bounds.size() > 1 && order.size() - bounds.back() < 2) bounds.pop_back();
    bounds.push_back(order.size());

    double best_acc = -1.0;
    Index since_best = 0;
    for (Index epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        for (std::size_t k = 0; k + 1 < bounds.size(); ++k) {
            std::vector<MultimodalInputs> batch;
            std::vector<int> batch_targets;
            for (std::size_t i = bounds[k]; i < bounds[k + 1]; ++i) {
                batch.push_back(prepare_multimodal_inputs(train.pairs[order[i]], table, store, config));
                batch_targets.push_back(targets[order[i]]);
            }
            auto grad_list = grads.params();
            nn::zero(grad_list);
            loss_sum += mm_accumulate_gradients(model, batch, batch_targets,
                                                1.0 / static_cast<double>(batch.size()), grads, true, &dropout_rng);
            nn::adam_step(model.params(), grad_list, opt);
        }
        const Evaluation ev = mm_evaluate(model, val, table, store);
        EpochLog entry{epoch, loss_sum / static_cast<double>(train.size()), ev.loss, ev.accuracy, ev.weighted_f1};
        result.log.push_back(entry);
        if (on_epoch) on_epoch(entry);
        scheduler.observe(ev.loss, opt);
        if (ev.accuracy > best_acc) {
            best_acc = ev.accuracy;
            result.model = model;
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    return result;
}

inline void save_multimodal(MultimodalModel& model, const std::string& path) {
    nn::save_checkpoint(path, {{"kind", "multimodal5"}, {"config", nn::encode_config(model.config.to_kv())}},
                        model.params());
}

inline MultimodalModel load_multimodal(const std::string& path) {
    const auto ck = nn::load_checkpoint(path);
    check_kind(ck, "multimodal5", path);
    MultimodalConfig cfg;
    kv::Reader reader(nn::decode_config(ck.meta.at("config")));
    cfg.read(reader);
    MultimodalModel model(cfg);
    nn::assign(ck, model.params());
    return model;
}

} // namespace mmfv

#endif
