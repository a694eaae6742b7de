#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "mmfv/ensemble.hpp"
#include "mmfv/metrics.hpp"
#include "mmfv/multimodal.hpp"
#include "mmfv/nn/attention.hpp"
#include "test_util.hpp"

using namespace mmfv;
using nn::Index;
using nn::Matrix;
using nn::Vector;
using test::random_matrix;
using test::random_vector;

namespace {

// Textbook loops, no Eigen expressions.
Matrix brute_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
    const Index a = q.rows(), b = k.rows(), d = q.cols();
    Matrix out = Matrix::Zero(a, v.cols());
    for (Index i = 0; i < a; ++i) {
        std::vector<double> s(static_cast<std::size_t>(b));
        double mx = -1e300;
        for (Index j = 0; j < b; ++j) {
            double dot = 0;
            for (Index t = 0; t < d; ++t) dot += q(i, t) * k(j, t);
            s[j] = dot / std::sqrt(static_cast<double>(d));
            mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (auto& x : s) z += (x = std::exp(x - mx));
        for (Index j = 0; j < b; ++j)
            for (Index c = 0; c < v.cols(); ++c) out(i, c) += s[j] / z * v(j, c);
    }
    return out;
}

double brute_norm(const Vector& x) {
    double s = 0;
    for (Index i = 0; i < x.size(); ++i) s += x[i] * x[i];
    return std::sqrt(s);
}

double brute_cosine(const Vector& x, const Vector& y) {
    double dot = 0;
    for (Index i = 0; i < x.size(); ++i) dot += x[i] * y[i];
    return dot / (brute_norm(x) * brute_norm(y));
}

double brute_weighted_f1(const std::vector<int>& gold, const std::vector<int>& pred, int n) {
    double total = 0;
    for (int c = 0; c < n; ++c) {
        int tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < gold.size(); ++i) {
            if (pred[i] == c && gold[i] == c) ++tp;
            if (pred[i] == c && gold[i] != c) ++fp;
            if (pred[i] != c && gold[i] == c) ++fn;
        }
        const double f1 = tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
        total += f1 * (tp + fn);
    }
    return total / static_cast<double>(gold.size());
}

} // namespace

TEST(SdpAttention, MatchesBruteForce) {
    nn::Rng rng(101);
    std::uniform_int_distribution<Index> size(1, 6);
    for (int trial = 0; trial < 25; ++trial) {
        const Index a = size(rng), b = size(rng), d = size(rng), dv = size(rng);
        const Matrix q = random_matrix(a, d, rng), k = random_matrix(b, d, rng), v = random_matrix(b, dv, rng);
        const Matrix got = nn::sdp_attention(q, k, v);
        EXPECT_LT((got - brute_attention(q, k, v)).cwiseAbs().maxCoeff(), 1e-9);
        const Matrix w = nn::attention_weights(q, k);
        for (Index i = 0; i < a; ++i) EXPECT_NEAR(w.row(i).sum(), 1.0, 1e-12);
    }
}

TEST(SdpAttention, ClosedForms) {
    // identical keys: uniform weights, output = mean of values
    Matrix k = Matrix::Ones(4, 3);
    Matrix v(4, 2);
    v << 1, 2, 3, 4, 5, 6, 7, 8;
    const Matrix out = nn::sdp_attention(Matrix::Constant(1, 3, 0.7), k, v);
    EXPECT_NEAR(out(0, 0), 4.0, 1e-12);
    EXPECT_NEAR(out(0, 1), 5.0, 1e-12);
    // a single key returns its value
    const Matrix one = nn::sdp_attention(Matrix::Constant(2, 3, -1.0), k.topRows(1), v.topRows(1));
    EXPECT_NEAR(one(1, 1), 2.0, 1e-12);
    EXPECT_THROW(nn::sdp_attention(Matrix::Ones(1, 3), Matrix::Ones(2, 2), Matrix::Ones(2, 2)), ShapeError);
}

TEST(VisualMatch, MatchesHandFormulas) {
    nn::Rng rng(102);
    std::uniform_int_distribution<Index> size(1, 12);
    for (int trial = 0; trial < 25; ++trial) {
        const Index n = size(rng);
        const Vector q = random_vector(n, rng), d = random_vector(n, rng);
        const VisualMatch m = visual_match(q, d);
        EXPECT_NEAR(m.V, brute_cosine(q, d), 1e-9);
        EXPECT_NEAR(m.E, 1.0 / (1.0 + brute_norm(q - d)), 1e-9);
    }
}

TEST(VisualMatch, ClosedForms) {
    nn::Rng rng(103);
    for (int trial = 0; trial < 20; ++trial) {
        const Vector q = random_vector(7, rng);
        const VisualMatch same = visual_match(q, q);
        EXPECT_NEAR(same.V, 1.0, 1e-12);
        EXPECT_DOUBLE_EQ(same.E, 1.0);
        // unit distance
        Vector step = random_vector(7, rng);
        step /= step.norm();
        EXPECT_NEAR(visual_match(q, q + step).E, 0.5, 1e-12);
        EXPECT_NEAR(visual_match(q, -q).V, -1.0, 1e-12);
        EXPECT_NEAR(visual_match(q, 3.5 * q).V, 1.0, 1e-12);
    }
    EXPECT_EQ(visual_match(Vector::Zero(3), Vector::Ones(3)).V, 0.0);
}

TEST(CosineSimilarity, MatchesHandFormula) {
    nn::Rng rng(104);
    for (int trial = 0; trial < 25; ++trial) {
        const Vector a = random_vector(9, rng), b = random_vector(9, rng);
        EXPECT_NEAR(cosine_similarity(a, b), brute_cosine(a, b), 1e-9);
        EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-12);
        Vector orth = b - (b.dot(a) / a.dot(a)) * a;
        EXPECT_NEAR(cosine_similarity(a, orth), 0.0, 1e-9);
    }
    EXPECT_EQ(cosine_similarity(Vector::Zero(4), Vector::Ones(4)), 0.0);
    EXPECT_THROW(cosine_similarity(Vector::Ones(3), Vector::Ones(4)), ShapeError);
}

TEST(Gini, MatchesHandFormula) {
    nn::Rng rng(105);
    std::uniform_int_distribution<std::size_t> count(0, 12);
    for (int trial = 0; trial < 30; ++trial) {
        ClassCounts c{};
        double n = 0;
        for (auto& x : c) n += static_cast<double>(x = count(rng));
        double expect = 0;
        if (n > 0) {
            double sq = 0;
            for (auto x : c) sq += (x / n) * (x / n);
            expect = 1.0 - sq;
        }
        EXPECT_NEAR(gini(c), expect, 1e-12);
    }
    EXPECT_DOUBLE_EQ(gini(ClassCounts{4, 0, 0, 0, 0}), 0.0);
    EXPECT_NEAR(gini(ClassCounts{1, 1, 1, 1, 1}), 0.8, 1e-12);
    EXPECT_NEAR(gini(ClassCounts{3, 3, 0, 0, 0}), 0.5, 1e-12);
}

TEST(WeightedF1, MatchesBruteForce) {
    nn::Rng rng(106);
    for (int trial = 0; trial < 30; ++trial) {
        const int n_classes = 2 + trial % 4;
        std::uniform_int_distribution<int> label(0, n_classes - 1);
        std::uniform_int_distribution<int> len(1, 40);
        std::vector<int> gold(static_cast<std::size_t>(len(rng))), pred(gold.size());
        for (std::size_t i = 0; i < gold.size(); ++i) {
            gold[i] = label(rng);
            pred[i] = rng() % 3 == 0 ? gold[i] : label(rng);
        }
        EXPECT_NEAR(weighted_f1(gold, pred, n_classes), brute_weighted_f1(gold, pred, n_classes), 1e-12);
    }
}

TEST(WeightedF1, HandChecked) {
    // gold: A A B B B C, pred: A B B B C C
    // A: P=1 R=.5 F=2/3; B: P=2/3 R=2/3 F=2/3; C: P=.5 R=1 F=2/3
    const std::vector<int> gold{0, 0, 1, 1, 1, 2}, pred{0, 1, 1, 1, 2, 2};
    EXPECT_NEAR(weighted_f1(gold, pred, 3), 2.0 / 3.0, 1e-12);
    EXPECT_DOUBLE_EQ(weighted_f1(gold, gold, 3), 1.0);
    const auto cm = confusion_matrix(gold, pred, 3);
    EXPECT_EQ(cm[0][1], 1u);
    EXPECT_EQ(cm[1][2], 1u);
    EXPECT_THROW(weighted_f1({0, 1}, {0}, 2), std::invalid_argument);
    EXPECT_THROW(weighted_f1({0, 3}, {0, 1}, 2), std::invalid_argument);
}

TEST(MetricsJson, SchemaFields) {
    const auto j = metrics_json({0, 1, 1}, {0, 1, 0}, {"a", "b"});
    EXPECT_EQ(j["schema_version"], kMetricsSchemaVersion);
    EXPECT_NEAR(j["accuracy"].get<double>(), 2.0 / 3.0, 1e-12);
    EXPECT_EQ(j["confusion_matrix"][1][0], 1);
    EXPECT_EQ(j["per_class"]["b"]["support"], 2);
    EXPECT_NEAR(j["per_class"]["a"]["precision"].get<double>(), 0.5, 1e-12);
}
