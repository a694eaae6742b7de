#ifndef MMFV_SYNTHGEN_HPP
#define MMFV_SYNTHGEN_HPP

// Seeded synthetic corpus with planted, measurable correlations:
//   - claim/document word overlap per class (exact, by copying claim tokens)
//   - support/refute documents carry the copied tokens as a contiguous span
//     in claim order, repeated `evidence_repeats` times; insufficient
//     documents scatter them once
//   - refute documents end with a verdict phrase
//   - document image = normalize(claim image + eps * noise), eps per class
//   - class-dependent text / OCR lengths and image-source domains
// Claims and documents use tokens "w0".."w{V-1}"; verdict phrases use plain
// English words, so they never count towards overlap.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "mmfv/corpus.hpp"
#include "mmfv/kv.hpp"
#include "mmfv/nn/core.hpp"
#include "mmfv/text_prep.hpp"

namespace mmfv {

template <class T>
using PerClass = std::array<T, kNumLabel5>;

/// E[1 / sqrt(1 + (eps f)^2)] for f ~ U(1 - jitter, 1 + jitter): the mean
/// cosine between a unit vector and its normalised noisy copy when the noise
/// is isotropic with norm eps f (high-dimensional limit).
inline double expected_image_cosine(double eps, double jitter) {
    if (jitter == 0.0) return 1.0 / std::sqrt(1.0 + eps * eps);
    const int n = 400;  // Simpson panels
    const double a = 1.0 - jitter, b = 1.0 + jitter, h = (b - a) / n;
    double sum = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double f = a + i * h;
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        sum += w / std::sqrt(1.0 + eps * eps * f * f);
    }
    return sum * h / 3.0 / (b - a);
}

/// Noise level whose expected cosine is `mean_cosine` (bisection).
inline double eps_for_cosine(double mean_cosine, double jitter) {
    if (!(mean_cosine > 0.0 && mean_cosine <= 1.0)) throw ConfigError("target cosine must be in (0, 1]");
    double lo = 0.0, hi = 100.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = (lo + hi) / 2.0;
        (expected_image_cosine(mid, jitter) > mean_cosine ? lo : hi) = mid;
    }
    return (lo + hi) / 2.0;
}

inline constexpr double kDefaultEpsJitter = 0.3;

/// Train-split mean image cosine per class, in Label5 order.
inline constexpr std::array<double, kNumLabel5> kImageCosineTargets{0.864, 0.704, 0.835, 0.703, 0.82};

inline std::array<double, kNumLabel5> calibrated_image_eps(const std::array<double, kNumLabel5>& targets,
                                                           double jitter) {
    std::array<double, kNumLabel5> eps{};
    for (int c = 0; c < kNumLabel5; ++c) eps[c] = eps_for_cosine(targets[c], jitter);
    return eps;
}

struct GenConfig {
    long n_per_class = 100;
    std::uint64_t seed = 1;
    std::uint64_t embedding_seed = 1234;
    long vocab_size = 5000;
    long embed_dim = 50;
    double embed_sigma = 1.0;
    long image_dim = 2048;

    // order: Support_Multimodal, Support_Text, Insufficient_Multimodal, Insufficient_Text, Refute
    PerClass<double> overlap_mean{0.299, 0.316, 0.221, 0.238, 0.406};
    PerClass<double> overlap_std{0.08, 0.08, 0.08, 0.08, 0.08};
    // defaults put the expected image cosine at kImageCosineTargets
    PerClass<double> image_eps = calibrated_image_eps(kImageCosineTargets, kDefaultEpsJitter);
    double eps_jitter = kDefaultEpsJitter;  // per-sample eps factor ~ U(1 - jitter, 1 + jitter)
    bool contiguous_evidence = true;
    long evidence_repeats = 6;

    PerClass<long> claim_len_min{10, 10, 10, 10, 4};
    PerClass<long> claim_len_max{30, 30, 30, 30, 12};
    PerClass<long> doc_len_min{80, 80, 80, 80, 20};
    PerClass<long> doc_len_max{300, 300, 300, 300, 60};
    PerClass<long> claim_ocr_min{0, 0, 0, 0, 15};
    PerClass<long> claim_ocr_max{20, 20, 20, 20, 60};
    PerClass<long> doc_ocr_min{0, 0, 0, 0, 0};
    PerClass<long> doc_ocr_max{25, 25, 25, 25, 10};

    std::vector<std::string> markers{"the claim is false", "this is fake news", "fact check false",
                                     "this image is manipulated"};

    std::vector<std::string> domains{"snopes.com",  "politifact.com", "twitter.com", "cnn.com",
                                     "foxnews.com", "nytimes.com",    "bbc.co.uk",   "reuters.com",
                                     "facebook.com", "instagram.com", "youtube.com", "thehindu.com"};
    // index into `domains` of each class's preferred domain, claim and document side
    PerClass<long> claim_home{0, 1, 3, 4, 2};
    PerClass<long> doc_home{5, 6, 7, 11, 8};
    // probability of drawing the preferred domain; otherwise uniform over all
    PerClass<double> home_weight{0.4, 0.4, 0.4, 0.4, 0.6};

    void validate() const {
        if (n_per_class < 1) throw ConfigError("n_per_class must be >= 1");
        if (evidence_repeats < 1) throw ConfigError("evidence_repeats must be >= 1");
        if (vocab_size < 200) throw ConfigError("vocab_size must be >= 200");
        if (embed_dim < 1 || image_dim < 1) throw ConfigError("dimensions must be positive");
        if (!(embed_sigma > 0)) throw ConfigError("embed_sigma must be positive");
        if (!(eps_jitter >= 0 && eps_jitter < 1)) throw ConfigError("eps_jitter must be in [0, 1)");
        if (domains.empty()) throw ConfigError("domains must not be empty");
        for (int c = 0; c < kNumLabel5; ++c) {
            if (!(overlap_mean[c] >= 0 && overlap_mean[c] <= 1)) throw ConfigError("overlap_mean must be in [0, 1]");
            if (!(overlap_std[c] >= 0)) throw ConfigError("overlap_std must be >= 0");
            if (!(image_eps[c] >= 0)) throw ConfigError("image_eps must be >= 0");
            if (!(home_weight[c] >= 0 && home_weight[c] <= 1)) throw ConfigError("home_weight must be in [0, 1]");
            if (claim_len_min[c] < 1 || claim_len_max[c] < claim_len_min[c])
                throw ConfigError("claim length range invalid");
            if (claim_len_max[c] > vocab_size / 4) throw ConfigError("claims too long for the vocabulary");
            if (doc_len_min[c] < 1 || doc_len_max[c] < doc_len_min[c]) throw ConfigError("doc length range invalid");
            if (claim_ocr_min[c] < 0 || claim_ocr_max[c] < claim_ocr_min[c] || doc_ocr_min[c] < 0 ||
                doc_ocr_max[c] < doc_ocr_min[c])
                throw ConfigError("OCR length range invalid");
            for (long h : {claim_home[c], doc_home[c]})
                if (h < 0 || h >= static_cast<long>(domains.size())) throw ConfigError("home domain index out of range");
        }
        for (const auto& m : markers) {
            if (tokenize(m).empty()) throw ConfigError("empty marker phrase");
            for (const auto& t : tokenize(m))
                if (t.size() > 1 && t[0] == 'w' && std::all_of(t.begin() + 1, t.end(), [](unsigned char ch) { return std::isdigit(ch) != 0; }))
                    throw ConfigError("marker token '" + t + "' collides with the generated vocabulary");
        }
    }

    void read(kv::Reader& r) {
        r.read("n_per_class", n_per_class);
        r.read("seed", seed);
        r.read("embedding_seed", embedding_seed);
        r.read("vocab_size", vocab_size);
        r.read("embed_dim", embed_dim);
        r.read("embed_sigma", embed_sigma);
        r.read("image_dim", image_dim);
        read_array(r, "overlap_mean", overlap_mean);
        read_array(r, "overlap_std", overlap_std);
        read_array(r, "image_eps", image_eps);
        r.read("eps_jitter", eps_jitter);
        r.read("contiguous_evidence", contiguous_evidence);
        r.read("evidence_repeats", evidence_repeats);
        read_array(r, "claim_len_min", claim_len_min);
        read_array(r, "claim_len_max", claim_len_max);
        read_array(r, "doc_len_min", doc_len_min);
        read_array(r, "doc_len_max", doc_len_max);
        read_array(r, "claim_ocr_min", claim_ocr_min);
        read_array(r, "claim_ocr_max", claim_ocr_max);
        read_array(r, "doc_ocr_min", doc_ocr_min);
        read_array(r, "doc_ocr_max", doc_ocr_max);
        std::string s = join_list(markers, '|');
        r.read("markers", s);
        markers = split_list(s, '|');
        s = join_list(domains, ',');
        r.read("domains", s);
        domains = split_list(s, ',');
        read_array(r, "claim_home", claim_home);
        read_array(r, "doc_home", doc_home);
        read_array(r, "home_weight", home_weight);
    }

    kv::Map to_kv() const {
        return {{"n_per_class", kv::to_string(n_per_class)},
                {"seed", std::to_string(seed)},
                {"embedding_seed", std::to_string(embedding_seed)},
                {"vocab_size", kv::to_string(vocab_size)},
                {"embed_dim", kv::to_string(embed_dim)},
                {"embed_sigma", kv::to_string(embed_sigma)},
                {"image_dim", kv::to_string(image_dim)},
                {"overlap_mean", join_array(overlap_mean)},
                {"overlap_std", join_array(overlap_std)},
                {"image_eps", join_array(image_eps)},
                {"eps_jitter", kv::to_string(eps_jitter)},
                {"contiguous_evidence", kv::to_string(contiguous_evidence)},
                {"evidence_repeats", kv::to_string(evidence_repeats)},
                {"claim_len_min", join_array(claim_len_min)},
                {"claim_len_max", join_array(claim_len_max)},
                {"doc_len_min", join_array(doc_len_min)},
                {"doc_len_max", join_array(doc_len_max)},
                {"claim_ocr_min", join_array(claim_ocr_min)},
                {"claim_ocr_max", join_array(claim_ocr_max)},
                {"doc_ocr_min", join_array(doc_ocr_min)},
                {"doc_ocr_max", join_array(doc_ocr_max)},
                {"markers", join_list(markers, '|')},
                {"domains", join_list(domains, ',')},
                {"claim_home", join_array(claim_home)},
                {"doc_home", join_array(doc_home)},
                {"home_weight", join_array(home_weight)}};
    }

    /// Every planted correlation switched off: equal overlap targets,
    /// scattered evidence, no verdict phrases, one noise level, equal
    /// lengths and uniform domains.
    static GenConfig signal_free() {
        GenConfig c;
        c.overlap_mean.fill(0.3);
        c.image_eps.fill(1.0);
        c.contiguous_evidence = false;
        c.claim_len_min.fill(8);
        c.claim_len_max.fill(30);
        c.doc_len_min.fill(60);
        c.doc_len_max.fill(300);
        c.claim_ocr_min.fill(0);
        c.claim_ocr_max.fill(20);
        c.doc_ocr_min.fill(0);
        c.doc_ocr_max.fill(25);
        c.markers.clear();
        c.home_weight.fill(0.0);
        return c;
    }

private:
    template <class T>
    static std::string join_array(const PerClass<T>& a) {
        return kv::join(std::vector<T>(a.begin(), a.end()));
    }

    template <class T>
    static void read_array(kv::Reader& r, const std::string& key, PerClass<T>& a) {
        std::vector<T> v(a.begin(), a.end());
        r.read(key, v);
        if (v.size() != a.size())
            throw ConfigError("config key '" + key + "': expected " + std::to_string(a.size()) + " values");
        std::copy(v.begin(), v.end(), a.begin());
    }

    static std::string join_list(const std::vector<std::string>& v, char sep) {
        std::string out;
        for (std::size_t i = 0; i < v.size(); ++i) out += (i ? std::string(1, sep) : "") + v[i];
        return out;
    }

    static std::vector<std::string> split_list(const std::string& s, char sep) {
        std::vector<std::string> out;
        for (auto& item : kv::split(s, sep))
            if (!item.empty()) out.push_back(item);
        return out;
    }
};

struct GeneratedCorpus {
    Dataset dataset;
    ImageFeatureStore features;
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline nn::Rng split_rng(std::uint64_t seed, const std::string& split) {
    const std::uint64_t h = fnv1a(split);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    return nn::Rng(seq);
}

inline std::string vocab_token(long i) { return "w" + std::to_string(i); }

class PairGenerator {
public:
    PairGenerator(const GenConfig& cfg, nn::Rng& rng) : cfg_(cfg), rng_(rng) {}

    ClaimDocumentPair make(Label5 label, const std::string& id, ImageFeatureStore& store) {
        const auto c = static_cast<std::size_t>(index_of(label));
        ClaimDocumentPair p;
        p.id = id;
        p.label = label;

        // claim: distinct vocabulary tokens
        const long claim_len = uniform_int(cfg_.claim_len_min[c], cfg_.claim_len_max[c]);
        std::vector<long> claim;
        std::unordered_set<long> in_claim;
        std::uniform_int_distribution<long> vocab(0, cfg_.vocab_size - 1);
        while (static_cast<long>(claim.size()) < claim_len) {
            const long t = vocab(rng_);
            if (in_claim.insert(t).second) claim.push_back(t);
        }

        // document: filler tokens never in the claim, plus k copied claim tokens
        std::normal_distribution<double> overlap(cfg_.overlap_mean[c], cfg_.overlap_std[c]);
        const double target = std::clamp(overlap(rng_), 0.0, 1.0);
        const long k = std::lround(target * static_cast<double>(claim_len));
        long doc_len = std::max(uniform_int(cfg_.doc_len_min[c], cfg_.doc_len_max[c]), k + 1);
        std::vector<long> doc;
        for (long i = 0; i < doc_len - k; ++i) doc.push_back(filler(vocab, in_claim));
        std::vector<long> evidence;
        const bool contiguous = cfg_.contiguous_evidence && label != Label5::InsufficientMultimodal &&
                                label != Label5::InsufficientText;
        if (contiguous) {
            const long start = uniform_int(0, claim_len - k);
            evidence.assign(claim.begin() + start, claim.begin() + start + k);
            // inserting at descending filler positions keeps earlier copies intact
            std::vector<long> at;
            for (long r = 0; r < cfg_.evidence_repeats; ++r) at.push_back(uniform_int(0, static_cast<long>(doc.size())));
            std::sort(at.rbegin(), at.rend());
            for (long a : at) doc.insert(doc.begin() + a, evidence.begin(), evidence.end());
        } else {
            std::vector<long> picked = claim;
            std::shuffle(picked.begin(), picked.end(), rng_);
            picked.resize(static_cast<std::size_t>(k));
            for (long t : picked) {
                const long at = uniform_int(0, static_cast<long>(doc.size()));
                doc.insert(doc.begin() + at, t);
            }
        }
        p.claim_text = words(claim);
        p.doc_text = words(doc);
        if (label == Label5::Refute && !cfg_.markers.empty()) {
            std::uniform_int_distribution<std::size_t> pick(0, cfg_.markers.size() - 1);
            p.doc_text += " " + cfg_.markers[pick(rng_)];
        }

        p.claim_ocr = random_words(uniform_int(cfg_.claim_ocr_min[c], cfg_.claim_ocr_max[c]), vocab);
        p.doc_ocr = random_words(uniform_int(cfg_.doc_ocr_min[c], cfg_.doc_ocr_max[c]), vocab);

        p.claim_image_id = id + "_q";
        p.doc_image_id = id + "_d";
        p.claim_image_url = "https://" + domain(cfg_.claim_home[c], cfg_.home_weight[c]) + "/images/" + id + "_q.jpg";
        p.doc_image_url = "https://" + domain(cfg_.doc_home[c], cfg_.home_weight[c]) + "/images/" + id + "_d.jpg";

        const Eigen::VectorXd q = unit_gaussian();
        std::uniform_real_distribution<double> jitter(1.0 - cfg_.eps_jitter, 1.0 + cfg_.eps_jitter);
        const double eps = cfg_.image_eps[c] * jitter(rng_);
        Eigen::VectorXd d = q + eps * gaussian() / std::sqrt(static_cast<double>(cfg_.image_dim));
        const double n = d.norm();
        if (n > 0) d /= n;
        store.insert(p.claim_image_id, to_floats(q));
        store.insert(p.doc_image_id, to_floats(d));
        return p;
    }

private:
    long uniform_int(long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(rng_); }

    long filler(std::uniform_int_distribution<long>& vocab, const std::unordered_set<long>& exclude) {
        long t;
        do t = vocab(rng_);
        while (exclude.count(t));
        return t;
    }

    static std::string words(const std::vector<long>& ids) {
        std::string s;
        for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? " " : "") + vocab_token(ids[i]);
        return s;
    }

    std::string random_words(long n, std::uniform_int_distribution<long>& vocab) {
        std::vector<long> ids;
        for (long i = 0; i < n; ++i) ids.push_back(vocab(rng_));
        return words(ids);
    }

    std::string domain(long home, double weight) {
        std::bernoulli_distribution at_home(weight);
        if (at_home(rng_)) return cfg_.domains[static_cast<std::size_t>(home)];
        std::uniform_int_distribution<std::size_t> any(0, cfg_.domains.size() - 1);
        return cfg_.domains[any(rng_)];
    }

    Eigen::VectorXd gaussian() {
        std::normal_distribution<double> n01;
        Eigen::VectorXd v(cfg_.image_dim);
        for (auto& x : v) x = n01(rng_);
        return v;
    }

    Eigen::VectorXd unit_gaussian() {
        Eigen::VectorXd v = gaussian();
        return v / v.norm();
    }

    static std::vector<float> to_floats(const Eigen::VectorXd& v) {
        std::vector<float> out(static_cast<std::size_t>(v.size()));
        for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
        return out;
    }

    const GenConfig& cfg_;
    nn::Rng& rng_;
};

inline GeneratedCorpus generate_with_counts(const GenConfig& cfg, const PerClass<long>& counts,
                                            const std::string& split) {
    cfg.validate();
    nn::Rng rng = split_rng(cfg.seed, split);
    GeneratedCorpus out{{{}, split}, ImageFeatureStore(static_cast<std::size_t>(cfg.image_dim))};
    std::vector<Label5> labels;
    for (int c = 0; c < kNumLabel5; ++c) labels.insert(labels.end(), static_cast<std::size_t>(counts[c]), kAllLabel5[c]);
    std::shuffle(labels.begin(), labels.end(), rng);
    PairGenerator gen(cfg, rng);
    const int width = std::max<int>(6, static_cast<int>(std::to_string(labels.size()).size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        std::string num = std::to_string(i + 1);
        num.insert(0, static_cast<std::size_t>(std::max(0, width - static_cast<int>(num.size()))), '0');
        out.dataset.pairs.push_back(gen.make(labels[i], split + "-" + num, out.features));
    }
    return out;
}

} // namespace detail

/// Balanced 5-way corpus: n_per_class pairs of every label, shuffled. `split`
/// names the id prefix and selects an independent random stream.
inline GeneratedCorpus generate_dataset(const GenConfig& cfg, const std::string& split = "train") {
    PerClass<long> counts;
    counts.fill(cfg.n_per_class);
    return detail::generate_with_counts(cfg, counts, split);
}

/// Balanced in 3-way terms: n_per_class refute pairs and n_per_class pairs
/// each of support and insufficient (split evenly between the multimodal and
/// text variants). Labels stay 5-way; models map them to 3-way.
inline GeneratedCorpus generate_3way_dataset(const GenConfig& cfg, const std::string& split = "train") {
    const long n = cfg.n_per_class;
    const PerClass<long> counts{n / 2, n - n / 2, n / 2, n - n / 2, n};
    return detail::generate_with_counts(cfg, counts, split);
}

/// Word vectors for the generated vocabulary and the verdict-phrase words,
/// drawn from N(0, sigma^2) with the embedding seed (shared by every split).
inline EmbeddingTable generate_embeddings(const GenConfig& cfg) {
    cfg.validate();
    nn::Rng rng(cfg.embedding_seed);
    std::normal_distribution<double> n01(0.0, cfg.embed_sigma);
    EmbeddingTable table(cfg.embed_dim);
    Eigen::RowVectorXd v(cfg.embed_dim);
    auto add = [&](const std::string& token) {
        if (table.vocabulary().contains(token)) return;
        for (auto& x : v) x = n01(rng);
        table.insert(token, v);
    };
    for (long i = 0; i < cfg.vocab_size; ++i) add(detail::vocab_token(i));
    for (const auto& m : cfg.markers)
        for (const auto& t : tokenize(m)) add(t);
    return table;
}

/// Expected P(label | domain) under the generator's domain sampling, for the
/// claim side (`claim_side`) or the document side; equal class sizes assumed.
inline PerClass<double> expected_domain_label_ratio(const GenConfig& cfg, const std::string& domain, bool claim_side) {
    const auto D = static_cast<double>(cfg.domains.size());
    PerClass<double> p{};
    double total = 0;
    for (int c = 0; c < kNumLabel5; ++c) {
        const long home = claim_side ? cfg.claim_home[c] : cfg.doc_home[c];
        const double w = cfg.home_weight[c];
        double prob = 0;
        for (std::size_t i = 0; i < cfg.domains.size(); ++i)
            if (cfg.domains[i] == domain) prob += (1.0 - w) / D + (static_cast<long>(i) == home ? w : 0.0);
        p[c] = prob;
        total += prob;
    }
    for (auto& v : p) v = total > 0 ? v / total : 0.0;
    return p;
}

} // namespace mmfv

#endif
