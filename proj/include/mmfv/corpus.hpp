#ifndef MMFV_CORPUS_HPP
#define MMFV_CORPUS_HPP

// Data model for claim/document pairs, JSONL dataset I/O, the image feature
// store file, label mappings and URL-domain extraction.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "mmfv/error.hpp"

namespace mmfv {

enum class Label5 : int {
    SupportMultimodal = 0,
    SupportText = 1,
    InsufficientMultimodal = 2,
    InsufficientText = 3,
    Refute = 4,
};

enum class Label3 : int {
    Support = 0,
    Refute = 1,
    Insufficient = 2,
};

inline constexpr int kNumLabel5 = 5;
inline constexpr int kNumLabel3 = 3;

inline constexpr std::array<Label5, kNumLabel5> kAllLabel5 = {
    Label5::SupportMultimodal, Label5::SupportText, Label5::InsufficientMultimodal,
    Label5::InsufficientText, Label5::Refute};

inline constexpr std::array<Label3, kNumLabel3> kAllLabel3 = {Label3::Support, Label3::Refute,
                                                              Label3::Insufficient};

inline std::string_view label_name(Label5 label) {
    switch (label) {
    case Label5::SupportMultimodal: return "Support_Multimodal";
    case Label5::SupportText: return "Support_Text";
    case Label5::InsufficientMultimodal: return "Insufficient_Multimodal";
    case Label5::InsufficientText: return "Insufficient_Text";
    case Label5::Refute: return "Refute";
    }
    return "";
}

inline std::string_view label_name(Label3 label) {
    switch (label) {
    case Label3::Support: return "support";
    case Label3::Refute: return "refute";
    case Label3::Insufficient: return "insufficient";
    }
    return "";
}

inline std::optional<Label5> parse_label5(std::string_view s) {
    for (Label5 l : kAllLabel5)
        if (label_name(l) == s) return l;
    return std::nullopt;
}

inline std::optional<Label3> parse_label3(std::string_view s) {
    for (Label3 l : kAllLabel3)
        if (label_name(l) == s) return l;
    return std::nullopt;
}

inline constexpr int index_of(Label5 l) { return static_cast<int>(l); }
inline constexpr int index_of(Label3 l) { return static_cast<int>(l); }

inline constexpr Label3 map_5way_to_3way(Label5 label) {
    switch (label) {
    case Label5::SupportMultimodal:
    case Label5::SupportText: return Label3::Support;
    case Label5::InsufficientMultimodal:
    case Label5::InsufficientText: return Label3::Insufficient;
    case Label5::Refute: return Label3::Refute;
    }
    return Label3::Refute;
}

struct ClaimDocumentPair {
    std::string id;
    std::string claim_text;
    std::string claim_ocr;
    std::string claim_image_id;
    std::string claim_image_url;
    std::string doc_text;
    std::string doc_ocr;
    std::string doc_image_id;
    std::string doc_image_url;
    std::optional<Label5> label;

    friend bool operator==(const ClaimDocumentPair&, const ClaimDocumentPair&) = default;
};

struct Dataset {
    std::vector<ClaimDocumentPair> pairs;
    std::string split_name;

    std::size_t size() const { return pairs.size(); }
    bool empty() const { return pairs.empty(); }
    auto begin() const { return pairs.begin(); }
    auto end() const { return pairs.end(); }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::string optional_string(const nlohmann::json& obj, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return {};
    if (!it->is_string()) throw DataError(std::string("field '") + key + "' is not a string");
    return it->get<std::string>();
}

} // namespace detail

inline nlohmann::json to_json(const ClaimDocumentPair& p) {
    nlohmann::json j = nlohmann::json::object();
    j["id"] = p.id;
    j["claim_text"] = p.claim_text;
    j["claim_ocr"] = p.claim_ocr;
    j["claim_image_id"] = p.claim_image_id;
    j["claim_image_url"] = p.claim_image_url;
    j["doc_text"] = p.doc_text;
    j["doc_ocr"] = p.doc_ocr;
    j["doc_image_id"] = p.doc_image_id;
    j["doc_image_url"] = p.doc_image_url;
    if (p.label) j["label"] = std::string(label_name(*p.label));
    return j;
}

inline ClaimDocumentPair pair_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw DataError("expected a JSON object");
    ClaimDocumentPair p;
    p.id = detail::optional_string(j, "id");
    p.claim_text = detail::optional_string(j, "claim_text");
    p.claim_ocr = detail::optional_string(j, "claim_ocr");
    p.claim_image_id = detail::optional_string(j, "claim_image_id");
    p.claim_image_url = detail::optional_string(j, "claim_image_url");
    p.doc_text = detail::optional_string(j, "doc_text");
    p.doc_ocr = detail::optional_string(j, "doc_ocr");
    p.doc_image_id = detail::optional_string(j, "doc_image_id");
    p.doc_image_url = detail::optional_string(j, "doc_image_url");
    if (p.id.empty()) throw DataError("missing or empty 'id'");
    if (detail::trim(p.claim_text).empty()) throw DataError("missing or empty 'claim_text'");
    if (detail::trim(p.doc_text).empty()) throw DataError("missing or empty 'doc_text'");
    const std::string label = detail::optional_string(j, "label");
    if (!label.empty()) {
        p.label = parse_label5(label);
        if (!p.label) throw DataError("unknown label '" + label + "'");
    }
    return p;
}

/// Parses one-object-per-line JSONL. Blank lines are skipped; line numbers in
/// errors are 1-based physical lines.
inline Dataset parse_dataset(std::istream& in, std::string split_name = {}) {
    Dataset ds;
    ds.split_name = std::move(split_name);
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        ClaimDocumentPair p;
        try {
            p = pair_from_json(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!seen.insert(p.id).second) throw DataError("duplicate id '" + p.id + "'");
        ds.pairs.push_back(std::move(p));
    }
    return ds;
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset '" + path + "'");
    try {
        return parse_dataset(in, path);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

inline void write_dataset(std::ostream& out, const Dataset& ds) {
    for (const auto& p : ds.pairs) out << to_json(p).dump() << '\n';
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write dataset '" + path + "'");
    write_dataset(out, ds);
    if (!out) throw DataError("write failed for '" + path + "'");
}

/// Label5 → count. Every pair must be labeled.
inline std::map<Label5, std::size_t> class_counts(const Dataset& ds) {
    std::map<Label5, std::size_t> counts;
    for (Label5 l : kAllLabel5) counts[l] = 0;
    for (const auto& p : ds.pairs) {
        if (!p.label) throw DataError("pair '" + p.id + "' has no label");
        ++counts[*p.label];
    }
    return counts;
}

/// Lowercase host of `url` with any leading "www." removed, or "" when the
/// URL is empty or cannot be parsed.
inline std::string extract_domain(std::string_view url) {
    std::string_view s = detail::trim(url);
    if (s.empty()) return {};
    if (auto pos = s.find("://"); pos != std::string_view::npos) {
        std::string_view scheme = s.substr(0, pos);
        if (scheme.empty() || !std::all_of(scheme.begin(), scheme.end(), [](char c) {
                return std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '-' ||
                       c == '.';
            }))
            return {};
        s.remove_prefix(pos + 3);
    } else if (s.starts_with("//")) {
        s.remove_prefix(2);
    }
    s = s.substr(0, std::min(s.find_first_of("/?#"), s.size()));
    if (auto at = s.rfind('@'); at != std::string_view::npos) s.remove_prefix(at + 1);
    if (auto colon = s.find(':'); colon != std::string_view::npos) {
        std::string_view port = s.substr(colon + 1);
        if (!std::all_of(port.begin(), port.end(),
                         [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
            return {};
        s = s.substr(0, colon);
    }
    std::string host;
    host.reserve(s.size());
    for (char c : s) {
        const auto uc = static_cast<unsigned char>(c);
        if (!(std::isalnum(uc) || c == '-' || c == '.' || c == '_')) return {};
        host.push_back(static_cast<char>(std::tolower(uc)));
    }
    while (host.starts_with("www.")) host.erase(0, 4);
    while (!host.empty() && host.back() == '.') host.pop_back();
    if (host.empty() || host.front() == '.' || host.find("..") != std::string::npos) return {};
    return host;
}

/// image_id → feature vector; all vectors share one length.
class ImageFeatureStore {
public:
    explicit ImageFeatureStore(std::size_t dim = 2048) : dim_(dim) {
        if (dim == 0) throw DataError("image feature dimension must be positive");
    }

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return features_.size(); }
    bool contains(const std::string& id) const { return features_.count(id) != 0; }

    void insert(const std::string& id, std::vector<float> values) {
        if (values.size() != dim_)
            throw DataError("image '" + id + "' has " + std::to_string(values.size()) +
                            " values, expected " + std::to_string(dim_));
        for (float v : values)
            if (!std::isfinite(v)) throw DataError("image '" + id + "' has a non-finite value");
        if (!features_.emplace(id, std::move(values)).second)
            throw DataError("duplicate image id '" + id + "'");
        order_.push_back(id);
    }

    const std::vector<float>& raw(const std::string& id) const {
        auto it = features_.find(id);
        if (it == features_.end()) throw DataError("missing image feature for image_id '" + id + "'");
        return it->second;
    }

    Eigen::VectorXd vector(const std::string& id) const {
        const auto& r = raw(id);
        Eigen::VectorXd v(static_cast<Eigen::Index>(r.size()));
        for (std::size_t i = 0; i < r.size(); ++i) v[static_cast<Eigen::Index>(i)] = r[i];
        return v;
    }

    /// Ids in insertion order.
    const std::vector<std::string>& ids() const { return order_; }

private:
    std::size_t dim_;
    std::unordered_map<std::string, std::vector<float>> features_;
    std::vector<std::string> order_;
};

inline ImageFeatureStore parse_feature_store(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("feature store is empty");
    std::string_view header = detail::trim(line);
    if (!header.starts_with("l=")) throw DataError("line 1: expected header 'l=<int>'");
    std::size_t dim = 0;
    auto [ptr, ec] = std::from_chars(header.data() + 2, header.data() + header.size(), dim);
    if (ec != std::errc() || ptr != header.data() + header.size() || dim == 0)
        throw DataError("line 1: bad dimension in header");
    ImageFeatureStore store(dim);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0)
            throw DataError("line " + std::to_string(line_no) + ": expected '<image_id>\\t<values>'");
        std::vector<float> values;
        values.reserve(dim);
        const char* p = line.data() + tab + 1;
        const char* end = line.data() + line.size();
        while (p < end) {
            while (p < end && (*p == ' ' || *p == '\r')) ++p;
            if (p == end) break;
            float v = 0;
            auto res = std::from_chars(p, end, v);
            if (res.ec != std::errc())
                throw DataError("line " + std::to_string(line_no) + ": bad float");
            values.push_back(v);
            p = res.ptr;
        }
        try {
            store.insert(line.substr(0, tab), std::move(values));
        } catch (const DataError& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return store;
}

inline ImageFeatureStore load_feature_store(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open feature store '" + path + "'");
    try {
        return parse_feature_store(in);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

inline void write_feature_store(std::ostream& out, const ImageFeatureStore& store) {
    out << "l=" << store.dim() << '\n';
    char buf[64];
    for (const auto& id : store.ids()) {
        out << id << '\t';
        const auto& values = store.raw(id);
        for (std::size_t i = 0; i < values.size(); ++i) {
            // 9 significant digits round-trip every float exactly
            auto res = std::to_chars(buf, buf + sizeof buf, values[i], std::chars_format::general, 9);
            if (i) out << ' ';
            out.write(buf, res.ptr - buf);
        }
        out << '\n';
    }
}

inline void save_feature_store(const ImageFeatureStore& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write feature store '" + path + "'");
    write_feature_store(out, store);
    if (!out) throw DataError("write failed for '" + path + "'");
}

/// Loads a dataset and, when given, the feature store it references. Every
/// non-empty image id must resolve.
inline std::pair<Dataset, std::optional<ImageFeatureStore>> load_dataset(
    const std::string& path, const std::optional<std::string>& feature_store_path) {
    Dataset ds = load_dataset(path);
    std::optional<ImageFeatureStore> store;
    if (feature_store_path) {
        store = load_feature_store(*feature_store_path);
        for (const auto& p : ds.pairs)
            for (const auto* id : {&p.claim_image_id, &p.doc_image_id})
                if (!id->empty() && !store->contains(*id))
                    throw DataError("missing image feature for image_id '" + *id + "'");
    }
    return {std::move(ds), std::move(store)};
}

} // namespace mmfv

#endif
