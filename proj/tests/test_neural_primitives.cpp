#include <gtest/gtest.h>

#include "mmfv/multimodal.hpp"
#include "mmfv/nn/attention.hpp"
#include "mmfv/nn/batchnorm.hpp"
#include "mmfv/nn/conv.hpp"
#include "mmfv/nn/dense.hpp"
#include "mmfv/nn/grad_check.hpp"
#include "mmfv/nn/gru.hpp"
#include "mmfv/nn/optim.hpp"
#include "mmfv/text_entailment.hpp"
#include "test_util.hpp"

using namespace mmfv;
using nn::Index;
using nn::Matrix;
using nn::Vector;
using test::random_matrix;
using test::random_vector;

namespace {

constexpr double kTol = 1e-3;

double weighted_sum(const Matrix& y, const Matrix& r) { return (y.array() * r.array()).sum(); }

} // namespace

TEST(DenseGrad, ReluAndLinear) {
    nn::Rng rng(1);
    for (auto act : {nn::Activation::None, nn::Activation::Relu}) {
        nn::DenseParams p(5, 4);
        p.init(rng);
        p.bias = random_vector(4, rng, 0.1);
        Matrix x = random_matrix(3, 5, rng);
        const Matrix r = random_matrix(3, 4, rng);
        nn::DenseParams g(5, 4);
        Matrix gx_param = Matrix::Zero(3, 5);
        const Matrix y = nn::dense_forward(x, p, act);
        const Matrix dx = nn::dense_backward(x, y, act, r, p, g);
        gx_param = dx;

        nn::ParamList params, grads;
        p.collect(params, "d");
        g.collect(grads, "d");
        params.push_back(nn::param_ref("x", x));
        grads.push_back(nn::param_ref("x", gx_param));
        auto loss = [&] { return weighted_sum(nn::dense_forward(x, p, act), r); };
        const auto res = nn::grad_check(loss, params, grads, 1e-6, 1000, 3);
        EXPECT_LT(res.max_relative_error, kTol) << res.worst_param;
    }
}

TEST(GruGrad, BatchedParamsAndInputs) {
    nn::Rng rng(2);
    nn::GruParams p(4, 3);
    p.init(rng);
    p.bias = random_vector(9, rng, 0.2);
    std::vector<Matrix> xs{random_matrix(6, 4, rng), random_matrix(6, 4, rng), random_matrix(6, 4, rng)};
    std::vector<Matrix> rs{random_matrix(6, 3, rng), random_matrix(6, 3, rng), random_matrix(6, 3, rng)};

    nn::GruTrace trace;
    nn::gru_forward_batch(xs, p, &trace);
    nn::GruParams g(4, 3);
    std::vector<Matrix> dxs;
    nn::gru_backward_batch(trace, p, rs, g, &dxs);
    ASSERT_EQ(dxs.size(), 3u);

    nn::ParamList params, grads;
    p.collect(params, "gru");
    g.collect(grads, "gru");
    for (std::size_t b = 0; b < xs.size(); ++b) {
        params.push_back(nn::param_ref("x" + std::to_string(b), xs[b]));
        grads.push_back(nn::param_ref("x" + std::to_string(b), dxs[b]));
    }
    auto loss = [&] {
        const auto ctx = nn::gru_forward_batch(xs, p);
        double l = 0;
        for (std::size_t b = 0; b < ctx.size(); ++b) l += weighted_sum(ctx[b], rs[b]);
        return l;
    };
    const auto res = nn::grad_check(loss, params, grads, 1e-6, 10000, 4);
    EXPECT_LT(res.max_relative_error, kTol) << res.worst_param;
}

TEST(GruForward, IsCausalAndMatchesSingleSequence) {
    nn::Rng rng(3);
    nn::GruParams p(3, 4);
    p.init(rng);
    Matrix x = random_matrix(7, 3, rng);
    const auto base = nn::gru_forward(x, p);
    EXPECT_TRUE(base.final_state.isApprox(base.context.row(6).transpose()));
    Matrix x2 = x;
    x2.row(4) += Vector::Ones(3).transpose();
    const auto pert = nn::gru_forward(x2, p);
    EXPECT_EQ(base.context.topRows(4), pert.context.topRows(4));
    EXPECT_GT((base.context.row(4) - pert.context.row(4)).norm(), 0.0);

    const auto batch = nn::gru_forward_batch({x, x2}, p);
    EXPECT_TRUE(batch[0].isApprox(base.context, 1e-14));
    EXPECT_TRUE(batch[1].isApprox(pert.context, 1e-14));
}

TEST(ConvGrad, ValidConvolutionAndPooling) {
    nn::Rng rng(4);
    nn::Conv2dParams p(3, 2, 3);
    p.init(rng);
    p.bias = random_vector(3, rng, 0.1);
    nn::FeatureMap x(7, 9, random_matrix(63, 2, rng));
    const Matrix r = random_matrix(5 * 7, 3, rng);

    Matrix patches;
    const nn::FeatureMap y = nn::conv2d_valid(x, p, &patches);
    ASSERT_EQ(y.height, 5);
    ASSERT_EQ(y.width, 7);
    nn::Conv2dParams g(3, 2, 3);
    const nn::FeatureMap dx = nn::conv2d_valid_backward(7, 9, patches, p, nn::FeatureMap(5, 7, r), g);
    nn::FeatureMap dx_copy = dx;

    nn::ParamList params, grads;
    p.collect(params, "conv");
    g.collect(grads, "conv");
    params.push_back(nn::param_ref("x", x.data));
    grads.push_back(nn::param_ref("x", dx_copy.data));
    auto loss = [&] { return weighted_sum(nn::conv2d_valid(x, p).data, r); };
    const auto res = nn::grad_check(loss, params, grads, 1e-6, 10000, 5);
    EXPECT_LT(res.max_relative_error, kTol) << res.worst_param;

    // pooling: gradient flows to the window maxima only
    std::vector<Index> argmax;
    const nn::FeatureMap pooled = nn::maxpool2d(x, 2, 3, &argmax);
    ASSERT_EQ(pooled.height, 3);
    ASSERT_EQ(pooled.width, 3);
    const Matrix rp = random_matrix(9, 2, rng);
    nn::FeatureMap dpool = nn::maxpool2d_backward(7, 9, argmax, nn::FeatureMap(3, 3, rp));
    nn::ParamList xp{nn::param_ref("x", x.data)}, gp{nn::param_ref("x", dpool.data)};
    auto pool_loss = [&] { return weighted_sum(nn::maxpool2d(x, 2, 3).data, rp); };
    const auto pres = nn::grad_check(pool_loss, xp, gp, 1e-6, 10000, 6);
    EXPECT_LT(pres.max_relative_error, kTol) << pres.worst_param;
}

TEST(ConvFused, MatchesGenericOpsForwardAndBackward) {
    nn::Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::uniform_int_distribution<Index> dim(4, 14), pool(1, 4), ch(1, 3);
        const Index h = dim(rng), w = dim(rng), cin = ch(rng), cout = ch(rng), ph = pool(rng), pw = pool(rng);
        if ((h - 2) / ph < 1 || (w - 2) / pw < 1) continue;
        nn::Conv2dParams p(3, cin, cout);
        p.init(rng);
        p.bias = random_vector(cout, rng, 0.3);
        nn::FeatureMap x(h, w, random_matrix(h * w, cin, rng));

        Matrix patches;
        nn::FeatureMap conv = nn::conv2d_valid(x, p, &patches);
        nn::FeatureMap act(conv.height, conv.width, nn::relu(conv.data));
        std::vector<Index> ref_argmax, argmax;
        const nn::FeatureMap ref = nn::maxpool2d(act, ph, pw, &ref_argmax);
        const nn::FeatureMap fused = nn::conv_relu_pool(x, p, ph, pw, &argmax);
        ASSERT_EQ(fused.height, ref.height);
        ASSERT_EQ(fused.width, ref.width);
        EXPECT_LT((fused.data - ref.data).cwiseAbs().maxCoeff(), 1e-12);

        const Matrix d = random_matrix(ref.height * ref.width, cout, rng);
        nn::FeatureMap d_act = nn::maxpool2d_backward(act.height, act.width, ref_argmax, nn::FeatureMap(ref.height, ref.width, d));
        nn::FeatureMap d_conv(conv.height, conv.width, nn::relu_backward(act.data, d_act.data));
        nn::Conv2dParams g_ref(3, cin, cout), g_fused(3, cin, cout);
        const nn::FeatureMap dx_ref = nn::conv2d_valid_backward(h, w, patches, p, d_conv, g_ref);
        const nn::FeatureMap dx_fused =
            nn::conv_relu_pool_backward(x, p, argmax, fused, nn::FeatureMap(ref.height, ref.width, d), g_fused);
        EXPECT_LT((dx_ref.data - dx_fused.data).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((g_ref.weight - g_fused.weight).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((g_ref.bias - g_fused.bias).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(AttentionGrad, QueryKeyValue) {
    nn::Rng rng(6);
    Matrix q = random_matrix(3, 4, rng), k = random_matrix(5, 4, rng), v = random_matrix(5, 2, rng);
    const Matrix r = random_matrix(3, 2, rng);
    nn::AttentionCache cache;
    nn::sdp_attention(q, k, v, &cache);
    auto g = nn::sdp_attention_backward(cache, r);
    nn::ParamList params{nn::param_ref("q", q), nn::param_ref("k", k), nn::param_ref("v", v)};
    nn::ParamList grads{nn::param_ref("q", g.query), nn::param_ref("k", g.key), nn::param_ref("v", g.value)};
    auto loss = [&] { return weighted_sum(nn::sdp_attention(q, k, v), r); };
    const auto res = nn::grad_check(loss, params, grads, 1e-6, 1000, 7);
    EXPECT_LT(res.max_relative_error, kTol) << res.worst_param;
}

TEST(AttentionGrad, AlignedImageQueryOverTextContext) {
    nn::Rng rng(7);
    nn::DenseParams align(6, 4);
    align.init(rng);
    align.bias = random_vector(4, rng, 0.1);
    Vector image = random_vector(6, rng);
    Matrix ctx = random_matrix(5, 4, rng);
    const Vector r = random_vector(4, rng);

    nn::AttentionCache cache;
    const Matrix query = nn::dense_forward(image.transpose(), align, nn::Activation::None);
    cross_modal_attend(image, ctx, align, &cache);
    const auto ag = nn::sdp_attention_backward(cache, r.transpose());
    nn::DenseParams g(6, 4);
    Matrix d_image_row = nn::dense_backward(image.transpose(), query, nn::Activation::None, ag.query, align, g);
    Matrix d_ctx = ag.key + ag.value;

    Matrix image_m = image.transpose();
    nn::ParamList params, grads;
    align.collect(params, "align");
    g.collect(grads, "align");
    params.push_back(nn::param_ref("image", image_m));
    grads.push_back(nn::param_ref("image", d_image_row));
    params.push_back(nn::param_ref("ctx", ctx));
    grads.push_back(nn::param_ref("ctx", d_ctx));
    auto loss = [&] { return cross_modal_attend(image_m.row(0).transpose(), ctx, align).dot(r); };
    const auto res = nn::grad_check(loss, params, grads, 1e-6, 1000, 8);
    EXPECT_LT(res.max_relative_error, kTol) << res.worst_param;
}

TEST(Attention, PaddedSelfAttentionEqualsExplicitPadding) {
    nn::Rng rng(8);
    for (Index used : {0, 1, 3, 7}) {
        const Matrix rows = random_matrix(used, 5, rng);
        Matrix padded = Matrix::Zero(9, 5);
        padded.topRows(used) = rows;
        const Matrix fast = nn::self_attention_padded(rows, 9);
        if (used == 0) {
            EXPECT_EQ(fast, Matrix::Zero(9, 5));
            continue;
        }
        EXPECT_LT((fast - nn::self_attention(padded)).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(BatchNormGrad, TrainAndInferenceModes) {
    nn::Rng rng(9);
    nn::BatchNormParams p(3);
    p.gamma = random_vector(3, rng);
    p.beta = random_vector(3, rng);
    Matrix x = random_matrix(5, 3, rng);
    const Matrix r = random_matrix(5, 3, rng);

    nn::BatchNormCache cache;
    nn::BatchNormParams work = p;
    nn::batchnorm_train(x, work, cache);
    nn::BatchNormParams g(3);
    g.gamma.setZero();
    g.beta.setZero();
    Matrix dx = nn::batchnorm_train_backward(cache, p, r, g);
    nn::ParamList params{nn::param_ref("gamma", p.gamma), nn::param_ref("beta", p.beta), nn::param_ref("x", x)};
    nn::ParamList grads{nn::param_ref("gamma", g.gamma), nn::param_ref("beta", g.beta), nn::param_ref("x", dx)};
    auto loss = [&] {
        nn::BatchNormParams scratch = p;
        nn::BatchNormCache c;
        return weighted_sum(nn::batchnorm_train(x, scratch, c), r);
    };
    auto res = nn::grad_check(loss, params, grads, 1e-6, 1000, 10);
    EXPECT_LT(res.max_relative_error, kTol) << res.worst_param;

    p.running_mean = random_vector(3, rng);
    p.running_var = random_vector(3, rng).cwiseAbs().array() + 0.5;
    nn::BatchNormParams gi(3);
    gi.gamma.setZero();
    gi.beta.setZero();
    Matrix dxi = nn::batchnorm_infer_backward(x, p, r, gi);
    nn::ParamList grads_i{nn::param_ref("gamma", gi.gamma), nn::param_ref("beta", gi.beta), nn::param_ref("x", dxi)};
    auto loss_i = [&] { return weighted_sum(nn::batchnorm_infer(x, p), r); };
    res = nn::grad_check(loss_i, params, grads_i, 1e-6, 1000, 11);
    EXPECT_LT(res.max_relative_error, kTol) << res.worst_param;
}

TEST(BatchNorm, RunningStatisticsFollowMomentum) {
    nn::Rng rng(10);
    nn::BatchNormParams p(2);
    const Matrix x = random_matrix(6, 2, rng);
    nn::BatchNormCache cache;
    const Matrix y = nn::batchnorm_train(x, p, cache);
    const Vector mean = x.colwise().mean().transpose();
    Vector var(2);
    for (Index c = 0; c < 2; ++c) var[c] = (x.col(c).array() - mean[c]).square().mean();
    EXPECT_TRUE(p.running_mean.isApprox(0.1 * mean, 1e-12));
    EXPECT_TRUE(p.running_var.isApprox(Vector::Constant(2, 0.9) + 0.1 * var, 1e-12));
    EXPECT_LT(y.colwise().mean().cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MatchPyramidGrad, ToyModelEndToEnd) {
    MatchPyramidConfig cfg;
    cfg.embed_dim = 6;
    cfg.gru_units = 5;
    cfg.claim_len = 10;
    cfg.doc_len = 20;
    cfg.channels = {2, 2};
    cfg.pool_h = 2;
    cfg.pool_w = 2;
    cfg.mlp_hidden = {7, 4};
    auto model = make_matchpyramid(cfg, 3);
    nn::Rng rng(11);
    std::vector<TextInputs> batch;
    const std::vector<int> targets{0, 2, 1};
    for (int b = 0; b < 3; ++b) batch.push_back({random_matrix(10, 6, rng), random_matrix(20, 6, rng)});
    auto grads = model.zeros_like();
    mp_accumulate_gradients(model, batch, targets, 1.0, grads);
    auto loss = [&] {
        const auto probs = mp_forward_batch(model, batch);
        double l = 0;
        for (int b = 0; b < 3; ++b) l += nn::cross_entropy(probs[b], targets[b]);
        return l;
    };
    const auto res = nn::grad_check(loss, model.params(), grads.params(), 1e-6, 400, 1);
    EXPECT_LT(res.max_relative_error, kTol) << res.worst_param;
}

TEST(MultimodalGrad, ToyModelEndToEnd) {
    nn::Rng rng(12);
    for (bool q_merge : {true, false}) {
        MultimodalConfig cfg;
        cfg.image_dim = 12;
        cfg.proj_dim = 8;
        cfg.embed_dim = 6;
        cfg.gru_units = 5;
        cfg.claim_len = 10;
        cfg.doc_len = 20;
        cfg.channels = {2, 2};
        cfg.pool_h = 2;
        cfg.pool_w = 2;
        cfg.hidden = 7;
        cfg.use_q_merge = q_merge;
        auto model = make_multimodal(cfg, 3);
        model.norm.running_mean.setConstant(0.1);
        model.norm.running_var.setConstant(1.7);
        model.norm.gamma.setConstant(1.3);
        std::vector<MultimodalInputs> batch;
        const std::vector<int> targets{0, 2, 4, 1};
        for (int b = 0; b < 4; ++b)
            batch.push_back({{random_matrix(10, 6, rng), random_matrix(20, 6, rng)}, random_vector(12, rng),
                             random_vector(12, rng)});
        auto grads = model.zeros_like();
        mm_accumulate_gradients(model, batch, targets, 1.0, grads, false, nullptr);
        auto loss = [&] {
            const auto probs = mm_forward_batch(model, batch);
            double l = 0;
            for (int b = 0; b < 4; ++b) l += nn::cross_entropy(probs[b], targets[b]);
            return l;
        };
        const auto res = nn::grad_check(loss, model.params(), grads.params(), 1e-6, 400, 2);
        EXPECT_LT(res.max_relative_error, kTol) << res.worst_param << " q_merge=" << q_merge;
    }
}

TEST(MultimodalGrad, TrainingModeBatchStatistics) {
    nn::Rng rng(13);
    MultimodalConfig cfg;
    cfg.image_dim = 10;
    cfg.proj_dim = 6;
    cfg.embed_dim = 4;
    cfg.gru_units = 3;
    cfg.claim_len = 8;
    cfg.doc_len = 12;
    cfg.channels = {2};
    cfg.pool_h = 2;
    cfg.pool_w = 2;
    cfg.hidden = 5;
    cfg.dropout = 0.0;
    auto model = make_multimodal(cfg, 4);
    std::vector<MultimodalInputs> batch;
    const std::vector<int> targets{3, 0, 1};
    for (int b = 0; b < 3; ++b)
        batch.push_back({{random_matrix(8, 4, rng), random_matrix(12, 4, rng)}, random_vector(10, rng),
                         random_vector(10, rng)});
    auto grads = model.zeros_like();
    nn::Rng drop(1);
    mm_accumulate_gradients(model, batch, targets, 1.0, grads, true, &drop);
    auto loss = [&] {
        MultimodalModel scratch = model;
        const auto front = mm_front(scratch, batch, false);
        nn::Rng r(1);
        const auto head = mm_head(scratch, front, &scratch.norm, &r);
        double l = 0;
        for (int b = 0; b < 3; ++b) l += nn::cross_entropy(head.probs.row(b).transpose(), targets[b]);
        return l;
    };
    const auto res = nn::grad_check(loss, model.params(), grads.params(), 1e-6, 300, 3);
    EXPECT_LT(res.max_relative_error, kTol) << res.worst_param;
}

TEST(Adam, SingleStepMatchesClosedForm) {
    Matrix w(1, 3);
    w << 1.0, -2.0, 0.5;
    Matrix g(1, 3);
    g << 0.3, -0.1, 0.0;
    nn::ParamList params{nn::param_ref("w", w)}, grads{nn::param_ref("w", g)};
    nn::OptimizerState opt(0.01, 0.1);
    nn::adam_step(params, grads, opt);
    // first step: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
    const double decay = 1.0 - 0.01 * 0.1;
    EXPECT_NEAR(w(0, 0), 1.0 * decay - 0.01 * 0.3 / (0.3 + 1e-8), 1e-12);
    EXPECT_NEAR(w(0, 1), -2.0 * decay + 0.01 * 0.1 / (0.1 + 1e-8), 1e-12);
    EXPECT_NEAR(w(0, 2), 0.5 * decay, 1e-12);
}

TEST(Softmax, CrossEntropyGradient) {
    nn::Rng rng(14);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix z = random_matrix(1, 5, rng, 2.0);
        const int t = trial % 5;
        const Vector p = nn::softmax(z.row(0).transpose());
        EXPECT_NEAR(p.sum(), 1.0, 1e-12);
        Matrix grad = nn::softmax_cross_entropy_grad(p, t).transpose();
        nn::ParamList params{nn::param_ref("z", z)}, grads{nn::param_ref("z", grad)};
        auto loss = [&] { return nn::cross_entropy(nn::softmax(z.row(0).transpose()), t); };
        EXPECT_LT(nn::grad_check(loss, params, grads, 1e-6, 10, 1).max_relative_error, kTol);
    }
}
