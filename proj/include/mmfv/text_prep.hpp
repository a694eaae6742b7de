#ifndef MMFV_TEXT_PREP_HPP
#define MMFV_TEXT_PREP_HPP

#include <cctype>
#include <charconv>
#include <optional>
#include <fstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "mmfv/error.hpp"

namespace mmfv {

/// Lowercases ASCII letters, turns ASCII punctuation and whitespace into
/// separators and splits. Bytes >= 0x80 are kept as word characters so UTF-8
/// words survive intact.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c >= 0x80 || std::isalnum(c)) {
            current.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

/// Token → index map. Index 0 is padding, index 1 is the unknown token.
class Vocabulary {
public:
    static constexpr Eigen::Index kPad = 0;
    static constexpr Eigen::Index kUnknown = 1;

    Vocabulary() : tokens_{"<pad>", "<unk>"} {
        index_.emplace("<pad>", kPad);
        index_.emplace("<unk>", kUnknown);
    }

    /// Returns the index of `token`, adding it if absent.
    Eigen::Index add(const std::string& token) {
        auto [it, inserted] = index_.emplace(token, static_cast<Eigen::Index>(tokens_.size()));
        if (inserted) tokens_.push_back(token);
        return it->second;
    }

    Eigen::Index index(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? kUnknown : it->second;
    }

    bool contains(const std::string& token) const { return index_.count(token) != 0; }
    const std::string& token(Eigen::Index i) const { return tokens_.at(static_cast<std::size_t>(i)); }
    Eigen::Index size() const { return static_cast<Eigen::Index>(tokens_.size()); }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, Eigen::Index> index_;
};

using EmbeddingMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Fixed word vectors. Padding and unknown rows are zero.
class EmbeddingTable {
public:
    explicit EmbeddingTable(Eigen::Index dim = 50) : dim_(dim), data_(static_cast<std::size_t>(2 * dim), 0.0) {
        if (dim <= 0) throw DataError("embedding dimension must be positive");
    }

    Eigen::Index dim() const { return dim_; }
    const Vocabulary& vocabulary() const { return vocab_; }
    /// Number of real tokens (excludes padding and unknown).
    Eigen::Index token_count() const { return vocab_.size() - 2; }

    void insert(const std::string& token, const Eigen::Ref<const Eigen::RowVectorXd>& v) {
        if (v.size() != dim_) throw DataError("embedding for '" + token + "' has wrong length");
        if (vocab_.contains(token)) return;
        vocab_.add(token);
        data_.insert(data_.end(), v.data(), v.data() + dim_);
    }

    /// Vector for `token`; the zero vector when absent.
    Eigen::RowVectorXd lookup(const std::string& token) const { return row(vocab_.index(token)); }

    Eigen::Map<const Eigen::RowVectorXd> row(Eigen::Index index) const {
        return Eigen::Map<const Eigen::RowVectorXd>(data_.data() + index * dim_, dim_);
    }

private:
    Eigen::Index dim_;
    Vocabulary vocab_;
    std::vector<double> data_;
};

/// Reads "<token> <f1> ... <fj>" lines; j is taken from the first line.
inline EmbeddingTable parse_embedding_table(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    std::vector<double> values;
    std::optional<EmbeddingTable> table;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto sp = line.find(' ');
        if (sp == std::string::npos || sp == 0)
            throw DataError("line " + std::to_string(line_no) + ": expected '<token> <floats>'");
        values.clear();
        const char* p = line.data() + sp;
        const char* end = line.data() + line.size();
        while (p < end) {
            while (p < end && *p == ' ') ++p;
            if (p == end) break;
            double v = 0;
            auto res = std::from_chars(p, end, v);
            if (res.ec != std::errc()) throw DataError("line " + std::to_string(line_no) + ": bad float");
            values.push_back(v);
            p = res.ptr;
        }
        if (!table) {
            if (values.empty()) throw DataError("line " + std::to_string(line_no) + ": no values");
            table.emplace(static_cast<Eigen::Index>(values.size()));
        }
        if (static_cast<Eigen::Index>(values.size()) != table->dim())
            throw DataError("line " + std::to_string(line_no) + ": expected " +
                            std::to_string(table->dim()) + " values, got " +
                            std::to_string(values.size()));
        table->insert(line.substr(0, sp),
                      Eigen::Map<const Eigen::RowVectorXd>(values.data(), table->dim()));
    }
    if (!table) throw DataError("embedding file is empty");
    return std::move(*table);
}

inline EmbeddingTable load_embedding_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open embedding file '" + path + "'");
    try {
        return parse_embedding_table(in);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

inline void save_embedding_table(const EmbeddingTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write embedding file '" + path + "'");
    char buf[64];
    for (Eigen::Index i = 2; i < table.vocabulary().size(); ++i) {
        out << table.vocabulary().token(i);
        for (Eigen::Index k = 0; k < table.dim(); ++k) {
            auto res = std::to_chars(buf, buf + sizeof buf, table.row(i)[k]);
            out << ' ';
            out.write(buf, res.ptr - buf);
        }
        out << '\n';
    }
    if (!out) throw DataError("write failed for '" + path + "'");
}

/// [max_len x j] matrix: leading rows are token vectors in order, the rest
/// is zero padding. Longer inputs keep their head.
inline EmbeddingMatrix embed_sequence(const std::vector<std::string>& tokens, const EmbeddingTable& table,
                                      Eigen::Index max_len) {
    if (max_len <= 0) throw ShapeError("embed_sequence: max_len must be positive");
    EmbeddingMatrix out = EmbeddingMatrix::Zero(max_len, table.dim());
    const auto n = std::min<Eigen::Index>(max_len, static_cast<Eigen::Index>(tokens.size()));
    for (Eigen::Index i = 0; i < n; ++i) out.row(i) = table.row(table.vocabulary().index(tokens[i]));
    return out;
}

/// Number of leading rows of embed_sequence() that come from tokens.
inline Eigen::Index used_length(const std::vector<std::string>& tokens, Eigen::Index max_len) {
    return std::min<Eigen::Index>(max_len, static_cast<Eigen::Index>(tokens.size()));
}

} // namespace mmfv

#endif
