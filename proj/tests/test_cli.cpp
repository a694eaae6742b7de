#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include <sys/wait.h>

#include "json.hpp"
#include "mmfv/cli.hpp"
#include "test_util.hpp"

using namespace mmfv;
using test::read_file;
using test::write_file;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

Result run_cli(const std::string& args, const test::TempDir& dir) {
    const std::string log = dir.file("cli_output.txt");
    const std::string cmd = std::string("\"") + MMFV_CLI_PATH + "\" " + args + " > \"" + log + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file(log);
    return r;
}

const char* kGenSet = "--set n_per_class=8 --set image_dim=16 --set vocab_size=300 --set embed_dim=8";
const char* kTextSet =
    "--set embed_dim=8 --set gru_units=4 --set claim_len=12 --set doc_len=40 --set channels=2,3 --set pool_h=2 "
    "--set pool_w=2 --set mlp_hidden=6 --set max_epochs=2 --set batch_size=8";
const char* kMmSet =
    "--set embed_dim=8 --set gru_units=4 --set claim_len=12 --set doc_len=40 --set channels=2,3 --set pool_h=2 "
    "--set pool_w=2 --set hidden=6 --set proj_dim=4 --set max_epochs=2 --set batch_size=8";

class CliFlow : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new test::TempDir("cli");
        const auto r = run_cli("generate --out " + dir_->file("data") + " " + kGenSet, *dir_);
        ASSERT_EQ(r.code, 0) << r.out;
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }
    static std::string data(const std::string& f) { return dir_->file("data/" + f); }
    static test::TempDir* dir_;
};

test::TempDir* CliFlow::dir_ = nullptr;

} // namespace

TEST(Cli, UsageErrorsExitTwo) {
    test::TempDir dir("cli_usage");
    EXPECT_EQ(run_cli("", dir).code, 2);
    EXPECT_EQ(run_cli("frobnicate", dir).code, 2);
    EXPECT_EQ(run_cli("evaluate --preds x.jsonl", dir).code, 2);
    EXPECT_EQ(run_cli("predict --kind text5 --model m --data d --out o", dir).code, 2);
    EXPECT_EQ(run_cli("generate --out " + dir.file("g") + " --set no_such_key=1", dir).code, 2);
    EXPECT_EQ(run_cli("generate --out " + dir.file("g") + " --set n_per_class=abc", dir).code, 2);
    EXPECT_EQ(run_cli("generate --out " + dir.file("g") + " --set novalue", dir).code, 2);
    EXPECT_EQ(run_cli("--help", dir).code, 0);
    EXPECT_NE(run_cli("--help", dir).out.find("train-multimodal"), std::string::npos);
}

TEST(Cli, RuntimeErrorsExitOne) {
    test::TempDir dir("cli_rt");
    EXPECT_EQ(run_cli("evaluate --preds " + dir.file("none.jsonl") + " --gold " + dir.file("none2.jsonl"), dir).code, 1);
    write_file(dir.file("bad.jsonl"), "{not json\n");
    const auto r = run_cli("analyze --data " + dir.file("bad.jsonl") + " --out " + dir.file("a"), dir);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("line 1"), std::string::npos) << r.out;
}

TEST_F(CliFlow, GenerateWritesEverythingAndIsDeterministic) {
    for (const char* f : {"train.jsonl", "val.jsonl", "features.tsv", "embeddings.txt", "resolved.cfg", "run.json"})
        EXPECT_TRUE(std::filesystem::exists(data(f))) << f;
    EXPECT_EQ(load_dataset(data("train.jsonl")).size(), 40u);
    EXPECT_EQ(load_dataset(data("val.jsonl")).size(), 10u);
    const auto r = run_cli("generate --out " + dir_->file("again") + " " + kGenSet, *dir_);
    ASSERT_EQ(r.code, 0) << r.out;
    for (const char* f : {"train.jsonl", "val.jsonl", "features.tsv", "embeddings.txt", "resolved.cfg"})
        EXPECT_EQ(read_file(data(f)), read_file(dir_->file(std::string("again/") + f))) << f;
    const auto run = nlohmann::json::parse(read_file(data("run.json")));
    EXPECT_EQ(run["command"], "generate");
    EXPECT_EQ(run["outputs"]["train.jsonl"], cli::file_checksum(data("train.jsonl")));

    // resolved.cfg reproduces the corpus on its own
    const auto r2 = run_cli("generate --out " + dir_->file("from_cfg") + " --config " + data("resolved.cfg"), *dir_);
    ASSERT_EQ(r2.code, 0) << r2.out;
    EXPECT_EQ(read_file(data("train.jsonl")), read_file(dir_->file("from_cfg/train.jsonl")));
}

TEST_F(CliFlow, AnalyzeWritesReport) {
    const auto r = run_cli("analyze --data " + data("train.jsonl") + " --features " + data("features.tsv") + " --out " +
                           dir_->file("an"),
                       *dir_);
    ASSERT_EQ(r.code, 0) << r.out;
    const auto j = nlohmann::json::parse(read_file(dir_->file("an/analysis.json")));
    EXPECT_EQ(j["n"], 40);
    EXPECT_TRUE(j.contains("image_cosine"));
    EXPECT_NE(read_file(dir_->file("an/domains.csv")).find("side,domain"), std::string::npos);
}

TEST_F(CliFlow, TrainTextPredictEvaluate) {
    const std::string base = "train-text --quiet --train " + data("train.jsonl") + " --val " + data("val.jsonl") + " " +
                             kTextSet + " --out ";
    auto r = run_cli(base + dir_->file("t1"), *dir_);
    ASSERT_EQ(r.code, 0) << r.out;
    r = run_cli(base + dir_->file("t2"), *dir_);
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(read_file(dir_->file("t1/model.ckpt")), read_file(dir_->file("t2/model.ckpt")));
    EXPECT_EQ(read_file(dir_->file("t1/metrics.json")), read_file(dir_->file("t2/metrics.json")));
    const auto metrics = nlohmann::json::parse(read_file(dir_->file("t1/metrics.json")));
    EXPECT_EQ(metrics["model"], "text3");

    r = run_cli("predict --kind text3 --model " + dir_->file("t1/model.ckpt") + " --data " + data("val.jsonl") +
                " --out " + dir_->file("t1/preds.jsonl"),
            *dir_);
    ASSERT_EQ(r.code, 0) << r.out;
    const std::string preds = read_file(dir_->file("t1/preds.jsonl"));
    EXPECT_EQ(std::count(preds.begin(), preds.end(), '\n'), 10);

    r = run_cli("evaluate --preds " + dir_->file("t1/preds.jsonl") + " --gold " + data("val.jsonl") + " --out " +
                dir_->file("t1/eval.json"),
            *dir_);
    ASSERT_EQ(r.code, 0) << r.out;
    const auto ev = nlohmann::json::parse(read_file(dir_->file("t1/eval.json")));
    EXPECT_DOUBLE_EQ(ev["weighted_f1"].get<double>(), metrics["weighted_f1"].get<double>());

    // wrong checkpoint kind is a runtime error
    r = run_cli("predict --kind multimodal5 --model " + dir_->file("t1/model.ckpt") + " --data " + data("val.jsonl") +
                " --out " + dir_->file("t1/x.jsonl"),
            *dir_);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("expected multimodal5"), std::string::npos) << r.out;
}

TEST_F(CliFlow, EvaluateMatchesHandComputedScores) {
    const Dataset gold = load_dataset(data("val.jsonl"));
    std::ostringstream preds;
    std::vector<int> g, p;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const Label5 truth = *gold.pairs[i].label;
        const Label5 guess = i % 3 == 0 ? Label5::Refute : truth;
        preds << "{\"pair_id\":\"" << gold.pairs[i].id << "\",\"label\":\"" << label_name(guess) << "\"}\n";
        g.push_back(index_of(truth));
        p.push_back(index_of(guess));
    }
    std::istringstream in(preds.str());
    const auto j = cli::evaluate_predictions(gold, in);
    EXPECT_NEAR(j["weighted_f1"].get<double>(), weighted_f1(g, p, 5), 1e-12);
    EXPECT_EQ(j["per_class"].size(), 5u);

    std::istringstream missing("{\"pair_id\":\"nope\",\"label\":\"Refute\"}\n");
    EXPECT_THROW(cli::evaluate_predictions(gold, missing), DataError);
}

TEST_F(CliFlow, MultimodalAndEnsemblePipeline) {
    auto r = run_cli("train-multimodal --quiet --train " + data("train.jsonl") + " --val " + data("val.jsonl") + " " +
                     kMmSet + " --out " + dir_->file("mm"),
                 *dir_);
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(nlohmann::json::parse(read_file(dir_->file("mm/metrics.json")))["model"], "multimodal5");
    r = run_cli("predict --kind multimodal5 --model " + dir_->file("mm/model.ckpt") + " --data " + data("val.jsonl") +
                " --out " + dir_->file("mm/preds.jsonl"),
            *dir_);
    ASSERT_EQ(r.code, 0) << r.out;

    r = run_cli("train-text --quiet --train " + data("train.jsonl") + " --val " + data("val.jsonl") + " " + kTextSet +
                " --out " + dir_->file("tx"),
            *dir_);
    ASSERT_EQ(r.code, 0) << r.out;
    r = run_cli("train-ensemble --train " + data("train.jsonl") + " --val " + data("val.jsonl") + " --text-model " +
                dir_->file("tx/model.ckpt") + " --embeddings " + data("embeddings.txt") + " --out " +
                dir_->file("ens"),
            *dir_);
    ASSERT_EQ(r.code, 0) << r.out;
    r = run_cli("predict --kind ensemble5 --model " + dir_->file("ens/model.json") + " --data " + data("val.jsonl") +
                " --text-model " + dir_->file("tx/model.ckpt") + " --out " + dir_->file("ens/preds.jsonl") +
                " --dump-features " + dir_->file("ens/features.csv"),
            *dir_);
    ASSERT_EQ(r.code, 0) << r.out;
    std::istringstream lines(read_file(dir_->file("ens/preds.jsonl")));
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(j["features"].contains("image_cosine"));
        EXPECT_TRUE(parse_label5(j["label"].get<std::string>()).has_value());
        ++n;
    }
    EXPECT_EQ(n, 10);
    const std::string csv = read_file(dir_->file("ens/features.csv"));
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 11);

    r = run_cli("predict --kind text3 --model " + dir_->file("tx/model.ckpt") + " --data " + data("val.jsonl") +
                " --out " + dir_->file("ens/x.jsonl") + " --dump-features " + dir_->file("ens/f.csv"),
            *dir_);
    EXPECT_EQ(r.code, 2);
    r = run_cli("train-ensemble --train " + data("train.jsonl") + " --val " + data("val.jsonl") + " --out " +
                dir_->file("ens2"),
            *dir_);
    EXPECT_EQ(r.code, 2);
}

TEST_F(CliFlow, MissingImageIdIsReported) {
    Dataset ds = load_dataset(data("val.jsonl"));
    ds.pairs[0].doc_image_id = "ghost_image";
    save_dataset(ds, dir_->file("ghost.jsonl"));
    const auto r = run_cli("analyze --data " + dir_->file("ghost.jsonl") + " --features " + data("features.tsv") +
                           " --out " + dir_->file("ghost_an"),
                       *dir_);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("ghost_image"), std::string::npos) << r.out;
}
