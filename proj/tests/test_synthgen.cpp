#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "mmfv/analysis.hpp"
#include "mmfv/synthgen.hpp"
#include "test_util.hpp"

using namespace mmfv;

namespace {

GenConfig small(long n = 20) {
    GenConfig c;
    c.n_per_class = n;
    c.image_dim = 32;
    return c;
}

std::string serialize(const GeneratedCorpus& c) {
    std::ostringstream s;
    write_dataset(s, c.dataset);
    write_feature_store(s, c.features);
    return s.str();
}

bool is_label(const ClaimDocumentPair& p, std::initializer_list<Label5> ls) {
    for (auto l : ls)
        if (p.label == l) return true;
    return false;
}

} // namespace

TEST(Synthgen, DeterministicPerSeedAndSplit) {
    const auto a = generate_dataset(small(), "train");
    const auto b = generate_dataset(small(), "train");
    EXPECT_EQ(serialize(a), serialize(b));
    EXPECT_NE(serialize(a), serialize(generate_dataset(small(), "val")));
    auto other = small();
    other.seed = 2;
    EXPECT_NE(serialize(a), serialize(generate_dataset(other, "train")));
    EXPECT_EQ(a.dataset.pairs.front().id.rfind("train-", 0), 0u);
}

TEST(Synthgen, BalancedCountsAndResolvableImages) {
    const auto c = generate_dataset(small(12));
    for (const auto& [l, n] : class_counts(c.dataset)) EXPECT_EQ(n, 12u) << label_name(l);
    std::set<std::string> ids;
    for (const auto& p : c.dataset.pairs) {
        EXPECT_TRUE(c.features.contains(p.claim_image_id));
        EXPECT_TRUE(c.features.contains(p.doc_image_id));
        EXPECT_TRUE(ids.insert(p.id).second);
        EXPECT_NEAR(c.features.vector(p.doc_image_id).norm(), 1.0, 1e-5);
    }
    const auto three = generate_3way_dataset(small(11));
    const auto counts = class_counts(three.dataset);
    EXPECT_EQ(counts.at(Label5::Refute), 11u);
    EXPECT_EQ(counts.at(Label5::SupportMultimodal) + counts.at(Label5::SupportText), 11u);
    EXPECT_EQ(counts.at(Label5::InsufficientMultimodal) + counts.at(Label5::InsufficientText), 11u);
}

TEST(Synthgen, MarkersOnlyInRefuteDocuments) {
    const auto cfg = small(30);
    const auto c = generate_dataset(cfg);
    for (const auto& p : c.dataset.pairs) {
        bool has = false;
        for (const auto& m : cfg.markers) has = has || p.doc_text.find(m) != std::string::npos;
        EXPECT_EQ(has, p.label == Label5::Refute) << p.id;
    }
    const auto free = generate_dataset([] {
        auto g = GenConfig::signal_free();
        g.n_per_class = 10;
        g.image_dim = 8;
        return g;
    }());
    for (const auto& p : free.dataset.pairs)
        for (const auto& t : tokenize(p.doc_text)) EXPECT_EQ(t[0], 'w');
}

TEST(Synthgen, EvidenceSpanRepeatedForSupportAndRefute) {
    auto cfg = small(20);
    cfg.evidence_repeats = 3;
    const auto c = generate_dataset(cfg);
    for (const auto& p : c.dataset.pairs) {
        if (!is_label(p, {Label5::SupportMultimodal, Label5::SupportText, Label5::Refute})) continue;
        const auto q = tokenize(p.claim_text);
        const auto d = tokenize(p.doc_text);
        std::set<std::string> qs(q.begin(), q.end());
        // longest run of consecutive claim tokens in the document, each
        // following its predecessor in claim order
        std::size_t k = 0;
        for (const auto& t : d) k += qs.count(t);
        if (k == 0) continue;
        EXPECT_EQ(k % 3, 0u) << p.id;
        const std::size_t span = k / 3;
        std::size_t found = 0;
        for (std::size_t i = 0; i + span <= d.size(); ++i) {
            auto it = std::find(q.begin(), q.end(), d[i]);
            if (it == q.end() || static_cast<std::size_t>(q.end() - it) < span) continue;
            if (std::equal(d.begin() + static_cast<long>(i), d.begin() + static_cast<long>(i + span), it)) {
                ++found;
                i += span - 1;
            }
        }
        EXPECT_EQ(found, 3u) << p.id;
    }
}

TEST(Synthgen, ConfigKvRoundTrip) {
    GenConfig c;
    c.n_per_class = 7;
    c.evidence_repeats = 5;
    c.markers = {"nope nope", "bad claim"};
    c.overlap_mean[2] = 0.5;
    GenConfig back;
    kv::Reader r(c.to_kv());
    back.read(r);
    r.reject_unknown();
    EXPECT_EQ(back.to_kv(), c.to_kv());

    kv::Map bad{{"overlap_mean", "0.1,0.2"}};
    kv::Reader br(bad);
    EXPECT_THROW(back.read(br), ConfigError);
    GenConfig v;
    v.evidence_repeats = 0;
    EXPECT_THROW(v.validate(), ConfigError);
    v = GenConfig{};
    v.markers = {"w12 is here"};
    EXPECT_THROW(v.validate(), ConfigError);
    v = GenConfig{};
    v.claim_home[0] = 99;
    EXPECT_THROW(v.validate(), ConfigError);
}

TEST(Synthgen, ExpectedCosineMatchesMonteCarlo) {
    nn::Rng rng(77);
    const long dim = 2048;
    for (double eps : {0.3, 0.8, 1.0}) {
        const double jitter = 0.3;
        std::uniform_real_distribution<double> f(1 - jitter, 1 + jitter);
        std::normal_distribution<double> n01;
        double sum = 0;
        const int trials = 400;
        for (int t = 0; t < trials; ++t) {
            Eigen::VectorXd q(dim), e(dim);
            for (auto& x : q) x = n01(rng);
            for (auto& x : e) x = n01(rng);
            q /= q.norm();
            const Eigen::VectorXd d = q + eps * f(rng) * e / std::sqrt(static_cast<double>(dim));
            sum += q.dot(d) / d.norm();
        }
        EXPECT_NEAR(expected_image_cosine(eps, jitter), sum / trials, 0.01) << eps;
    }
    EXPECT_NEAR(expected_image_cosine(eps_for_cosine(0.75, 0.3), 0.3), 0.75, 1e-9);
    EXPECT_DOUBLE_EQ(expected_image_cosine(1.0, 0.0), 1.0 / std::sqrt(2.0));
    EXPECT_THROW(eps_for_cosine(0.0, 0.3), ConfigError);
}

TEST(Synthgen, EmbeddingsCoverVocabularyAndMarkers) {
    auto cfg = small();
    cfg.vocab_size = 300;
    const auto t = generate_embeddings(cfg);
    EXPECT_TRUE(t.vocabulary().contains("w0"));
    EXPECT_TRUE(t.vocabulary().contains("w299"));
    EXPECT_TRUE(t.vocabulary().contains("fake"));
    EXPECT_EQ(t.dim(), 50);
    const auto t2 = generate_embeddings(cfg);
    EXPECT_EQ(t.lookup("w17"), t2.lookup("w17"));
    cfg.seed = 99;
    EXPECT_EQ(generate_embeddings(cfg).lookup("w17"), t.lookup("w17"));
}

// Planted statistics are recovered from a generated corpus.
TEST(Synthgen, StatisticsRoundTrip) {
    auto cfg = small(300);
    cfg.image_dim = 256;
    const auto c = generate_dataset(cfg);
    const auto overlap = per_class_stats(c.dataset, quantity::word_overlap());
    for (int k = 0; k < kNumLabel5; ++k)
        EXPECT_NEAR(overlap.at(kAllLabel5[k]).mean, cfg.overlap_mean[k], 0.05) << k;
    const auto cosine = per_class_stats(c.dataset, quantity::image_cosine(c.features));
    for (int k = 0; k < kNumLabel5; ++k)
        EXPECT_NEAR(cosine.at(kAllLabel5[k]).mean, kImageCosineTargets[k], 0.05) << k;
    const auto dist = domain_label_distribution(c.dataset);
    for (const auto& [domain, counts] : dist.claim) {
        const auto expect = expected_domain_label_ratio(cfg, domain, true);
        double total = 0;
        for (auto n : counts) total += static_cast<double>(n);
        if (total < 100) continue;
        for (int k = 0; k < kNumLabel5; ++k) EXPECT_NEAR(counts[k] / total, expect[k], 0.1) << domain;
    }
}
