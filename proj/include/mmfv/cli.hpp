#ifndef MMFV_CLI_HPP
#define MMFV_CLI_HPP

// Command-line front end: generate / analyze / train-text / train-multimodal /
// train-ensemble / evaluate / predict. Each run writes its resolved config,
// metrics and a run.json (seed + input checksums) into its output directory.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mmfv/analysis.hpp"
#include "mmfv/corpus.hpp"
#include "mmfv/ensemble.hpp"
#include "mmfv/kv.hpp"
#include "mmfv/metrics.hpp"
#include "mmfv/multimodal.hpp"
#include "mmfv/synthgen.hpp"
#include "mmfv/text_entailment.hpp"

namespace mmfv::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Bad flags, unknown config keys and invalid config values.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
inline std::string file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::uint64_t h = 1469598103934665603ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline void require_file(const std::string& path) {
    if (!fs::is_regular_file(path)) throw DataError("no such file: '" + path + "'");
}

/// Config file (optional) plus --set key=value overrides, then typed reads.
struct ConfigSource {
    std::string file;
    std::vector<std::string> overrides;

    kv::Map load() const {
        kv::Map m;
        if (!file.empty()) {
            std::ifstream in(file);
            if (!in) throw DataError("cannot open config '" + file + "'");
            m = kv::parse(in, file);
        }
        for (const auto& o : overrides) {
            const auto eq = o.find('=');
            if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + o + "'");
            m[std::string(detail::trim(o.substr(0, eq)))] = std::string(detail::trim(o.substr(eq + 1)));
        }
        return m;
    }
};

/// Records inputs and produces run.json.
class RunRecord {
public:
    RunRecord(std::string command, std::uint64_t seed) : command_(std::move(command)), seed_(seed) {}

    void input(const std::string& role, const std::string& path) {
        inputs_[role] = {{"path", path}, {"fnv1a64", file_checksum(path)}};
    }

    void write(const fs::path& dir, const std::vector<std::string>& outputs) const {
        nlohmann::json j;
        j["command"] = command_;
        j["seed"] = seed_;
        j["inputs"] = inputs_;
        nlohmann::json outs = nlohmann::json::object();
        for (const auto& o : outputs) outs[o] = file_checksum((dir / o).string());
        j["outputs"] = outs;
        write_json(dir / "run.json", j);
    }

private:
    std::string command_;
    std::uint64_t seed_;
    nlohmann::json inputs_ = nlohmann::json::object();
};

inline std::string sibling(const std::string& path, const std::string& name) {
    return (fs::path(path).parent_path() / name).string();
}

inline EmbeddingTable load_embeddings_for(const std::string& explicit_path, const std::string& data_path,
                                          RunRecord& rec) {
    const std::string path = explicit_path.empty() ? sibling(data_path, "embeddings.txt") : explicit_path;
    require_file(path);
    rec.input("embeddings", path);
    return load_embedding_table(path);
}

inline ImageFeatureStore load_features_for(const std::string& explicit_path, const std::string& data_path,
                                           RunRecord& rec) {
    const std::string path = explicit_path.empty() ? sibling(data_path, "features.tsv") : explicit_path;
    require_file(path);
    rec.input("features", path);
    return load_feature_store(path);
}

inline Dataset load_input(const std::string& role, const std::string& path, RunRecord& rec,
                          const ImageFeatureStore* store = nullptr) {
    require_file(path);
    rec.input(role, path);
    Dataset ds = load_dataset(path);
    if (store)
        for (const auto& p : ds.pairs)
            for (const auto* id : {&p.claim_image_id, &p.doc_image_id})
                if (!store->contains(*id)) throw DataError("missing image feature for image_id '" + *id + "'");
    return ds;
}

inline std::vector<std::string> label3_names() {
    std::vector<std::string> out;
    for (auto l : kAllLabel3) out.emplace_back(label_name(l));
    return out;
}

inline std::vector<std::string> label5_names() {
    std::vector<std::string> out;
    for (auto l : kAllLabel5) out.emplace_back(label_name(l));
    return out;
}

inline void write_training_log(const fs::path& path, const std::vector<EpochLog>& log) {
    write_text(path, training_log_csv(log));
}

inline void print_epoch(const char* what, const EpochLog& e) {
    std::cerr << what << " epoch " << e.epoch << ": train_loss " << e.train_loss << " val_loss " << e.val_loss
              << " val_acc " << e.val_accuracy << " val_f1 " << e.val_weighted_f1 << '\n';
}

// --------------------------------------------------------------------------
// Subcommands

struct GenerateArgs {
    ConfigSource config;
    std::string out = "data";
    std::optional<std::uint64_t> seed;
};

inline int cmd_generate(const GenerateArgs& a) {
    kv::Map m = a.config.load();
    GenConfig cfg;
    long val_per_class = -1;
    bool three_way = false;
    kv::Reader r(m);
    cfg.read(r);
    r.read("val_per_class", val_per_class);
    r.read("three_way", three_way);
    r.reject_unknown();
    if (a.seed) cfg.seed = *a.seed;
    if (val_per_class < 0) val_per_class = std::max(1L, cfg.n_per_class / 4);
    if (val_per_class < 1) throw ConfigError("val_per_class must be >= 1");
    cfg.validate();

    const fs::path dir(a.out);
    fs::create_directories(dir);
    auto make = [&](const GenConfig& c, const std::string& split) {
        return three_way ? generate_3way_dataset(c, split) : generate_dataset(c, split);
    };
    GenConfig vc = cfg;
    vc.n_per_class = val_per_class;
    const auto train = make(cfg, "train");
    const auto val = make(vc, "val");
    ImageFeatureStore store(static_cast<std::size_t>(cfg.image_dim));
    for (const auto* part : {&train.features, &val.features})
        for (const auto& id : part->ids()) store.insert(id, part->raw(id));

    save_dataset(train.dataset, (dir / "train.jsonl").string());
    save_dataset(val.dataset, (dir / "val.jsonl").string());
    save_feature_store(store, (dir / "features.tsv").string());
    save_embedding_table(generate_embeddings(cfg), (dir / "embeddings.txt").string());
    kv::Map resolved = cfg.to_kv();
    resolved["val_per_class"] = kv::to_string(val_per_class);
    resolved["three_way"] = kv::to_string(three_way);
    write_text(dir / "resolved.cfg", kv::format(resolved));
    RunRecord rec("generate", cfg.seed);
    if (!a.config.file.empty()) rec.input("config", a.config.file);
    rec.write(dir, {"train.jsonl", "val.jsonl", "features.tsv", "embeddings.txt", "resolved.cfg"});
    std::cout << "wrote " << train.dataset.size() << " train / " << val.dataset.size() << " val pairs to "
              << dir.string() << '\n';
    return kExitOk;
}

struct AnalyzeArgs {
    ConfigSource config;
    std::string data;
    std::string val;
    std::string features;
    std::string embeddings;
    std::string out = "runs/analyze";
    std::optional<std::uint64_t> seed;
};

inline int cmd_analyze(const AnalyzeArgs& a) {
    kv::Map m = a.config.load();
    ProbeConfig pc;
    std::uint64_t seed = 1;
    kv::Reader r(m);
    pc.read(r);
    r.read("seed", seed);
    r.reject_unknown();
    if (a.seed) seed = *a.seed;
    pc.validate();

    RunRecord rec("analyze", seed);
    std::optional<ImageFeatureStore> store;
    if (!a.features.empty()) store = load_features_for(a.features, a.data, rec);
    const Dataset ds = load_input("data", a.data, rec, store ? &*store : nullptr);

    const fs::path dir(a.out);
    fs::create_directories(dir);
    nlohmann::json report = analysis_report(ds, store ? &*store : nullptr);
    {
        std::ostringstream csv;
        write_domain_csv(csv, domain_label_distribution(ds));
        write_text(dir / "domains.csv", csv.str());
    }
    if (!a.val.empty()) {
        const Dataset val = load_input("val", a.val, rec, store ? &*store : nullptr);
        const EmbeddingTable table = load_embeddings_for(a.embeddings, a.data, rec);
        if (store) pc.image_dim = static_cast<Index>(store->dim());
        nlohmann::json probes;
        const auto text = probe_train_eval(ds, val, ProbeMode::TextOnly, table, nullptr, pc, seed);
        probes["text"] = {{"accuracy", text.accuracy}, {"weighted_f1", text.weighted_f1}};
        if (store) {
            const auto ti = probe_train_eval(ds, val, ProbeMode::TextPlusImage, table, &*store, pc, seed);
            probes["text_image"] = {{"accuracy", ti.accuracy}, {"weighted_f1", ti.weighted_f1}};
        }
        probes["chance"] = 1.0 / static_cast<double>(pc.classes);
        report["hypothesis_only"] = probes;
    }
    write_json(dir / "analysis.json", report);
    kv::Map resolved;
    if (!a.val.empty()) {
        resolved = {{"embed_dim", kv::to_string(pc.embed_dim)}, {"gru_units", kv::to_string(pc.gru_units)},
                    {"claim_len", kv::to_string(pc.claim_len)}, {"image_dim", kv::to_string(pc.image_dim)},
                    {"proj_dim", kv::to_string(pc.proj_dim)},   {"hidden", kv::to_string(pc.hidden)},
                    {"classes", kv::to_string(pc.classes)},     {"batch_size", kv::to_string(pc.batch_size)},
                    {"epochs", kv::to_string(pc.epochs)},       {"learning_rate", kv::to_string(pc.learning_rate)}};
    }
    resolved["seed"] = std::to_string(seed);
    write_text(dir / "resolved.cfg", kv::format(resolved));
    rec.write(dir, {"analysis.json", "domains.csv", "resolved.cfg"});
    std::cout << report.dump(2) << '\n';
    return kExitOk;
}

struct TrainArgs {
    ConfigSource config;
    std::string train;
    std::string val;
    std::string embeddings;
    std::string features;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

inline int cmd_train_text(const TrainArgs& a) {
    kv::Map m = a.config.load();
    MatchPyramidConfig cfg;
    std::uint64_t seed = 1;
    kv::Reader r(m);
    cfg.read(r);
    r.read("seed", seed);
    r.reject_unknown();
    if (a.seed) seed = *a.seed;
    cfg.validate();

    RunRecord rec("train-text", seed);
    const Dataset train = load_input("train", a.train, rec);
    const Dataset val = load_input("val", a.val, rec);
    const EmbeddingTable table = load_embeddings_for(a.embeddings, a.train, rec);

    const fs::path dir(a.out.empty() ? "runs/train-text" : a.out);
    fs::create_directories(dir);
    auto res = mp_train(train, val, table, cfg, seed, [&](const EpochLog& e) {
        if (!a.quiet) print_epoch("train-text", e);
    });
    const Evaluation ev = mp_evaluate(res.model, val, table);
    nlohmann::json metrics = metrics_json(ev.golds, ev.preds, label3_names());
    metrics["model"] = "text3";
    metrics["best_epoch"] = res.best_epoch;
    metrics["val_loss"] = ev.loss;

    save_matchpyramid(res.model, (dir / "model.ckpt").string());
    write_json(dir / "metrics.json", metrics);
    write_training_log(dir / "training_log.csv", res.log);
    kv::Map resolved = cfg.to_kv();
    resolved["seed"] = std::to_string(seed);
    write_text(dir / "resolved.cfg", kv::format(resolved));
    rec.write(dir, {"model.ckpt", "metrics.json", "training_log.csv", "resolved.cfg"});
    std::cout << "val weighted F1 " << metrics["weighted_f1"].get<double>() << " (best epoch " << res.best_epoch
              << ")\n";
    return kExitOk;
}

inline int cmd_train_multimodal(const TrainArgs& a) {
    kv::Map m = a.config.load();
    MultimodalConfig cfg;
    std::uint64_t seed = 1;
    kv::Reader r(m);
    cfg.read(r);
    r.read("seed", seed);
    r.reject_unknown();
    if (a.seed) seed = *a.seed;

    RunRecord rec("train-multimodal", seed);
    const ImageFeatureStore store = load_features_for(a.features, a.train, rec);
    if (m.find("image_dim") == m.end()) cfg.image_dim = static_cast<Index>(store.dim());
    cfg.validate();
    const Dataset train = load_input("train", a.train, rec, &store);
    const Dataset val = load_input("val", a.val, rec, &store);
    const EmbeddingTable table = load_embeddings_for(a.embeddings, a.train, rec);

    const fs::path dir(a.out.empty() ? "runs/train-multimodal" : a.out);
    fs::create_directories(dir);
    auto res = mm_train(train, val, table, store, cfg, seed, [&](const EpochLog& e) {
        if (!a.quiet) print_epoch("train-multimodal", e);
    });
    const Evaluation ev = mm_evaluate(res.model, val, table, store);
    nlohmann::json metrics = metrics_json(ev.golds, ev.preds, label5_names());
    metrics["model"] = "multimodal5";
    metrics["best_epoch"] = res.best_epoch;
    metrics["val_loss"] = ev.loss;

    save_multimodal(res.model, (dir / "model.ckpt").string());
    write_json(dir / "metrics.json", metrics);
    write_training_log(dir / "training_log.csv", res.log);
    kv::Map resolved = cfg.to_kv();
    resolved["seed"] = std::to_string(seed);
    write_text(dir / "resolved.cfg", kv::format(resolved));
    rec.write(dir, {"model.ckpt", "metrics.json", "training_log.csv", "resolved.cfg"});
    std::cout << "val weighted F1 " << metrics["weighted_f1"].get<double>() << " (best epoch " << res.best_epoch
              << ")\n";
    return kExitOk;
}

/// Where the ensemble's 3-way predictions come from: an in-repo MatchPyramid
/// checkpoint or precomputed JSONL files.
struct TextSource {
    std::string model;
    std::string embeddings;
};

inline std::unique_ptr<EntailmentPredictor> make_text_predictor(const TextSource& src, const std::string& preds_path,
                                                                const std::string& data_path, RunRecord& rec,
                                                                const std::string& role,
                                                                std::unique_ptr<MatchPyramidModel>& model_holder,
                                                                std::unique_ptr<EmbeddingTable>& table_holder) {
    if (!preds_path.empty()) {
        require_file(preds_path);
        rec.input(role + "_preds", preds_path);
        return std::make_unique<ExternalPredictions>(ExternalPredictions::load(preds_path));
    }
    if (src.model.empty()) throw UsageError("need --text-model or precomputed 3-way predictions");
    if (!model_holder) {
        require_file(src.model);
        rec.input("text_model", src.model);
        model_holder = std::make_unique<MatchPyramidModel>(load_matchpyramid(src.model));
        table_holder = std::make_unique<EmbeddingTable>(load_embeddings_for(src.embeddings, data_path, rec));
    }
    return std::make_unique<MatchPyramidPredictor>(*model_holder, *table_holder);
}

struct TrainEnsembleArgs {
    ConfigSource config;
    std::string train;
    std::string val;
    std::string features;
    TextSource text;
    std::string train_preds;
    std::string val_preds;
    std::string out;
    std::optional<std::uint64_t> seed;
};

inline int cmd_train_ensemble(const TrainEnsembleArgs& a) {
    kv::Map m = a.config.load();
    int max_depth = 8;
    bool use_domains = true;
    std::uint64_t seed = 1;
    kv::Reader r(m);
    r.read("max_depth", max_depth);
    r.read("use_domains", use_domains);
    r.read("seed", seed);
    r.reject_unknown();
    if (a.seed) seed = *a.seed;
    if (max_depth < 0) throw ConfigError("max_depth must be >= 0");

    RunRecord rec("train-ensemble", seed);
    const ImageFeatureStore store = load_features_for(a.features, a.train, rec);
    const Dataset train = load_input("train", a.train, rec, &store);
    const Dataset val = load_input("val", a.val, rec, &store);
    std::unique_ptr<MatchPyramidModel> mp;
    std::unique_ptr<EmbeddingTable> table;
    const auto train_pred = make_text_predictor(a.text, a.train_preds, a.train, rec, "train", mp, table);
    const auto val_pred = make_text_predictor(a.text, a.val_preds, a.train, rec, "val", mp, table);

    const DomainEncoder enc = DomainEncoder::fit(train);
    const auto train_records = extract_features_all(train, *train_pred, store, enc);
    const auto val_records = extract_features_all(val, *val_pred, store, enc);
    const EnsembleModel model = ensemble_train(train_records, dataset_labels(train), enc, use_domains, max_depth);

    std::vector<int> golds, preds;
    for (std::size_t i = 0; i < val.size(); ++i) {
        golds.push_back(index_of(*val.pairs[i].label));
        preds.push_back(index_of(model.predict(val_records[i]).label));
    }
    nlohmann::json metrics = metrics_json(golds, preds, label5_names());
    metrics["model"] = "ensemble5";
    metrics["tree_depth"] = model.tree.depth();
    metrics["tree_nodes"] = model.tree.nodes.size();

    const fs::path dir(a.out.empty() ? "runs/train-ensemble" : a.out);
    fs::create_directories(dir);
    save_ensemble(model, (dir / "model.json").string());
    write_json(dir / "metrics.json", metrics);
    write_text(dir / "resolved.cfg", kv::format({{"max_depth", kv::to_string(max_depth)},
                                                 {"use_domains", kv::to_string(use_domains)},
                                                 {"seed", std::to_string(seed)}}));
    rec.write(dir, {"model.json", "metrics.json", "resolved.cfg"});
    std::cout << "val weighted F1 " << metrics["weighted_f1"].get<double>() << '\n';
    return kExitOk;
}

struct EvaluateArgs {
    std::string preds;
    std::string gold;
    std::string out;
};

/// Scores a prediction JSONL against a labelled dataset. Predictions in the
/// 3-way label space are scored against the gold labels mapped to 3-way.
inline nlohmann::json evaluate_predictions(const Dataset& gold, std::istream& preds_in) {
    std::unordered_map<std::string, std::string> by_id;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(preds_in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            const auto id = j.at("pair_id").get<std::string>();
            if (!by_id.emplace(id, j.at("label").get<std::string>()).second)
                throw DataError("duplicate pair_id '" + id + "'");
        } catch (const nlohmann::json::exception& e) {
            throw DataError("predictions line " + std::to_string(line_no) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError("predictions line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (by_id.empty()) throw DataError("no predictions");
    const bool five = parse_label5(by_id.begin()->second).has_value();
    std::vector<int> golds, preds;
    for (const auto& p : gold.pairs) {
        if (!p.label) throw DataError("gold pair '" + p.id + "' has no label");
        auto it = by_id.find(p.id);
        if (it == by_id.end()) throw DataError("no prediction for pair '" + p.id + "'");
        if (five) {
            const auto l = parse_label5(it->second);
            if (!l) throw DataError("pair '" + p.id + "': '" + it->second + "' is not a 5-way label");
            golds.push_back(index_of(*p.label));
            preds.push_back(index_of(*l));
        } else {
            const auto l = parse_label3(it->second);
            if (!l) throw DataError("pair '" + p.id + "': unknown label '" + it->second + "'");
            golds.push_back(index_of(map_5way_to_3way(*p.label)));
            preds.push_back(index_of(*l));
        }
    }
    if (by_id.size() != gold.size()) throw DataError("predictions cover pairs that are not in the gold file");
    return metrics_json(golds, preds, five ? label5_names() : label3_names());
}

inline int cmd_evaluate(const EvaluateArgs& a) {
    require_file(a.gold);
    require_file(a.preds);
    const Dataset gold = load_dataset(a.gold);
    std::ifstream in(a.preds);
    if (!in) throw DataError("cannot open '" + a.preds + "'");
    const nlohmann::json metrics = evaluate_predictions(gold, in);
    if (!a.out.empty()) {
        if (const auto parent = fs::path(a.out).parent_path(); !parent.empty()) fs::create_directories(parent);
        write_json(a.out, metrics);
    }
    std::cout << metrics.dump(2) << '\n';
    return kExitOk;
}

struct PredictArgs {
    std::string kind;
    std::string model;
    std::string data;
    std::string out;
    std::string embeddings;
    std::string features;
    TextSource text;
    std::string text_preds;
    std::string dump_features;
};

inline nlohmann::json feature_record_json(const FeatureRecord& r) {
    return {{"len_claim_text", r.len_claim_text}, {"len_claim_ocr", r.len_claim_ocr},
            {"len_doc_text", r.len_doc_text},     {"len_doc_ocr", r.len_doc_ocr},
            {"entail_code", r.entail_code},       {"entail_prob", r.entail_prob},
            {"image_cosine", r.image_cosine},     {"claim_domain", r.claim_domain},
            {"doc_domain", r.doc_domain}};
}

inline int cmd_predict(const PredictArgs& a) {
    if (!a.dump_features.empty() && a.kind != "ensemble5")
        throw UsageError("--dump-features only applies to --kind ensemble5");
    require_file(a.model);
    RunRecord rec("predict", 0);
    std::vector<std::string> lines;
    auto emit = [&](const nlohmann::json& j) { lines.push_back(j.dump()); };

    if (a.kind == "text3") {
        const MatchPyramidModel model = load_matchpyramid(a.model);
        const Dataset ds = load_input("data", a.data, rec);
        const EmbeddingTable table = load_embeddings_for(a.embeddings, a.data, rec);
        const auto preds = MatchPyramidPredictor(model, table).predict_all(ds);
        for (std::size_t i = 0; i < ds.size(); ++i)
            emit(prediction_json(ds.pairs[i].id, label_name(preds[i].label),
                                 {preds[i].probabilities.begin(), preds[i].probabilities.end()}));
    } else if (a.kind == "multimodal5") {
        const MultimodalModel model = load_multimodal(a.model);
        const ImageFeatureStore store = load_features_for(a.features, a.data, rec);
        const Dataset ds = load_input("data", a.data, rec, &store);
        const EmbeddingTable table = load_embeddings_for(a.embeddings, a.data, rec);
        const auto preds = mm_predict_all(model, ds, table, store);
        for (std::size_t i = 0; i < ds.size(); ++i)
            emit(prediction_json(ds.pairs[i].id, label_name(preds[i].label),
                                 {preds[i].probabilities.begin(), preds[i].probabilities.end()}));
    } else if (a.kind == "ensemble5") {
        const EnsembleModel model = load_ensemble(a.model);
        const ImageFeatureStore store = load_features_for(a.features, a.data, rec);
        const Dataset ds = load_input("data", a.data, rec, &store);
        std::unique_ptr<MatchPyramidModel> mp;
        std::unique_ptr<EmbeddingTable> table;
        TextSource src = a.text;
        if (src.embeddings.empty()) src.embeddings = a.embeddings;
        const auto predictor = make_text_predictor(src, a.text_preds, a.data, rec, "data", mp, table);
        const auto records = extract_features_all(ds, *predictor, store, model.encoder);
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const TreePrediction p = model.predict(records[i]);
            nlohmann::json j = prediction_json(ds.pairs[i].id, label_name(p.label),
                                               {p.distribution.begin(), p.distribution.end()});
            if (!a.dump_features.empty()) j["features"] = feature_record_json(records[i]);
            emit(j);
        }
        if (!a.dump_features.empty()) {
            std::ostringstream csv;
            write_feature_csv(csv, ds, records, model.encoder);
            write_text(a.dump_features, csv.str());
        }
    } else {
        throw UsageError("--kind must be text3, multimodal5 or ensemble5");
    }

    std::string text;
    for (const auto& l : lines) text += l + "\n";
    if (const auto parent = fs::path(a.out).parent_path(); !parent.empty()) fs::create_directories(parent);
    write_text(a.out, text);
    std::cout << "wrote " << lines.size() << " predictions to " << a.out << '\n';
    return kExitOk;
}

// --------------------------------------------------------------------------

inline void add_config_options(CLI::App* app, ConfigSource& c) {
    app->add_option("--config", c.file, "Flat key = value config file");
    app->add_option("--set", c.overrides, "Override a config key (key=value); repeatable");
}

/// Parses argv and runs one subcommand. Exit codes: 0 success, 1 runtime or
/// data error, 2 usage error.
inline int run(int argc, const char* const* argv, std::ostream& err = std::cerr) {
    CLI::App app{"Multimodal fact verification toolkit"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Write a synthetic corpus with planted correlations");
    add_config_options(g, gen.config);
    g->add_option("--out", gen.out, "Output directory");
    g->add_option("--seed", gen.seed, "Generator seed");

    AnalyzeArgs an;
    auto* z = app.add_subcommand("analyze", "Per-class statistics, domain skew and hypothesis-only probes");
    add_config_options(z, an.config);
    z->add_option("--data", an.data, "Dataset JSONL")->required();
    z->add_option("--val", an.val, "Validation JSONL; enables the hypothesis-only probes");
    z->add_option("--features", an.features, "Image feature store");
    z->add_option("--embeddings", an.embeddings, "Embedding table (default: next to --data)");
    z->add_option("--out", an.out, "Output directory");
    z->add_option("--seed", an.seed, "Probe seed");

    TrainArgs tt;
    auto* t = app.add_subcommand("train-text", "Train the 3-way MatchPyramid entailment model");
    add_config_options(t, tt.config);
    t->add_option("--train", tt.train)->required();
    t->add_option("--val", tt.val)->required();
    t->add_option("--embeddings", tt.embeddings, "Embedding table (default: next to --train)");
    t->add_option("--out", tt.out, "Run directory");
    t->add_option("--seed", tt.seed);
    t->add_flag("--quiet", tt.quiet, "No per-epoch log on stderr");

    TrainArgs tm;
    auto* mm = app.add_subcommand("train-multimodal", "Train the 5-way multimodal network");
    add_config_options(mm, tm.config);
    mm->add_option("--train", tm.train)->required();
    mm->add_option("--val", tm.val)->required();
    mm->add_option("--features", tm.features, "Image feature store (default: next to --train)");
    mm->add_option("--embeddings", tm.embeddings, "Embedding table (default: next to --train)");
    mm->add_option("--out", tm.out, "Run directory");
    mm->add_option("--seed", tm.seed);
    mm->add_flag("--quiet", tm.quiet, "No per-epoch log on stderr");

    TrainEnsembleArgs te;
    auto* e = app.add_subcommand("train-ensemble", "Fit the decision-tree ensemble");
    add_config_options(e, te.config);
    e->add_option("--train", te.train)->required();
    e->add_option("--val", te.val)->required();
    e->add_option("--features", te.features, "Image feature store (default: next to --train)");
    e->add_option("--text-model", te.text.model, "MatchPyramid checkpoint used as the 3-way predictor");
    e->add_option("--embeddings", te.text.embeddings, "Embedding table for --text-model");
    e->add_option("--train-preds", te.train_preds, "Precomputed 3-way predictions for --train");
    e->add_option("--val-preds", te.val_preds, "Precomputed 3-way predictions for --val");
    e->add_option("--out", te.out, "Run directory");
    e->add_option("--seed", te.seed);

    EvaluateArgs ev;
    auto* v = app.add_subcommand("evaluate", "Score a prediction JSONL against gold labels");
    v->add_option("--preds", ev.preds)->required();
    v->add_option("--gold", ev.gold)->required();
    v->add_option("--out", ev.out, "Also write the metrics JSON here");

    PredictArgs pr;
    auto* p = app.add_subcommand("predict", "Run a trained model over a dataset");
    p->add_option("--kind", pr.kind, "text3 | multimodal5 | ensemble5")
        ->required()
        ->check(CLI::IsMember({"text3", "multimodal5", "ensemble5"}));
    p->add_option("--model", pr.model, "Checkpoint")->required();
    p->add_option("--data", pr.data, "Dataset JSONL")->required();
    p->add_option("--out", pr.out, "Prediction JSONL")->required();
    p->add_option("--embeddings", pr.embeddings, "Embedding table (default: next to --data)");
    p->add_option("--features", pr.features, "Image feature store (default: next to --data)");
    p->add_option("--text-model", pr.text.model, "MatchPyramid checkpoint (ensemble5)");
    p->add_option("--text-preds", pr.text_preds, "Precomputed 3-way predictions (ensemble5)");
    p->add_option("--dump-features", pr.dump_features, "Write the ensemble feature CSV here (ensemble5)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& ex) {
        err << "error: " << ex.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (g->parsed()) return cmd_generate(gen);
        if (z->parsed()) return cmd_analyze(an);
        if (t->parsed()) return cmd_train_text(tt);
        if (mm->parsed()) return cmd_train_multimodal(tm);
        if (e->parsed()) return cmd_train_ensemble(te);
        if (v->parsed()) return cmd_evaluate(ev);
        if (p->parsed()) return cmd_predict(pr);
    } catch (const UsageError& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitUsage;
    } catch (const ConfigError& ex) {
        err << "config error: " << ex.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}

} // namespace mmfv::cli

#endif
