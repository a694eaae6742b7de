#ifndef MMFV_METRICS_HPP
#define MMFV_METRICS_HPP

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmfv/error.hpp"

namespace mmfv {

struct ClassScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;  // gold count
};

/// rows = gold class, cols = predicted class.
using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

inline void check_label_lists(const std::vector<int>& golds, const std::vector<int>& preds, int n_classes) {
    if (golds.size() != preds.size())
        throw std::invalid_argument("metrics: " + std::to_string(golds.size()) + " golds vs " +
                                    std::to_string(preds.size()) + " predictions");
    if (golds.empty()) throw std::invalid_argument("metrics: empty label lists");
    for (const auto* list : {&golds, &preds})
        for (int v : *list)
            if (v < 0 || v >= n_classes) throw std::invalid_argument("metrics: label index out of range");
}

inline ConfusionMatrix confusion_matrix(const std::vector<int>& golds, const std::vector<int>& preds, int n_classes) {
    check_label_lists(golds, preds, n_classes);
    ConfusionMatrix cm(static_cast<std::size_t>(n_classes), std::vector<std::size_t>(n_classes, 0));
    for (std::size_t i = 0; i < golds.size(); ++i) ++cm[golds[i]][preds[i]];
    return cm;
}

/// Per-class precision/recall/F1; any undefined ratio is 0.
inline std::vector<ClassScores> per_class_prf(const std::vector<int>& golds, const std::vector<int>& preds,
                                              int n_classes) {
    const auto cm = confusion_matrix(golds, preds, n_classes);
    std::vector<ClassScores> out(static_cast<std::size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) {
        std::size_t tp = cm[c][c], gold = 0, predicted = 0;
        for (int k = 0; k < n_classes; ++k) {
            gold += cm[c][k];
            predicted += cm[k][c];
        }
        auto& s = out[c];
        s.support = gold;
        s.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
        s.recall = gold ? static_cast<double>(tp) / static_cast<double>(gold) : 0.0;
        s.f1 = (s.precision + s.recall) > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    }
    return out;
}

/// Per-class F1 averaged with gold-support weights.
inline double weighted_f1(const std::vector<int>& golds, const std::vector<int>& preds, int n_classes) {
    const auto scores = per_class_prf(golds, preds, n_classes);
    double acc = 0.0;
    for (const auto& s : scores) acc += s.f1 * static_cast<double>(s.support);
    return acc / static_cast<double>(golds.size());
}

inline double accuracy(const std::vector<int>& golds, const std::vector<int>& preds) {
    if (golds.size() != preds.size() || golds.empty()) throw std::invalid_argument("accuracy: bad label lists");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) hit += golds[i] == preds[i];
    return static_cast<double>(hit) / static_cast<double>(golds.size());
}

inline constexpr int kMetricsSchemaVersion = 1;

/// Metrics document written by every train/evaluate command.
inline nlohmann::json metrics_json(const std::vector<int>& golds, const std::vector<int>& preds,
                                   const std::vector<std::string>& label_names) {
    const int n = static_cast<int>(label_names.size());
    const auto scores = per_class_prf(golds, preds, n);
    nlohmann::json j;
    j["schema_version"] = kMetricsSchemaVersion;
    j["labels"] = label_names;
    j["n"] = golds.size();
    j["accuracy"] = accuracy(golds, preds);
    double wp = 0, wr = 0, wf = 0;
    nlohmann::json per_class = nlohmann::json::object();
    for (int c = 0; c < n; ++c) {
        const auto& s = scores[c];
        const double w = static_cast<double>(s.support) / static_cast<double>(golds.size());
        wp += w * s.precision;
        wr += w * s.recall;
        wf += w * s.f1;
        per_class[label_names[c]] = {
            {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
    }
    j["weighted_precision"] = wp;
    j["weighted_recall"] = wr;
    j["weighted_f1"] = wf;
    j["per_class"] = per_class;
    j["confusion_matrix"] = confusion_matrix(golds, preds, n);
    return j;
}

} // namespace mmfv

#endif
