#include <gtest/gtest.h>

#include <sstream>

#include "mmfv/text_entailment.hpp"
#include "test_util.hpp"

using namespace mmfv;
using nn::Matrix;

namespace {

MatchPyramidConfig small_config() {
    MatchPyramidConfig c;
    c.embed_dim = 4;
    c.gru_units = 5;
    c.claim_len = 12;
    c.doc_len = 24;
    c.channels = {2, 3};
    c.pool_h = 2;
    c.pool_w = 2;
    c.mlp_hidden = {6};
    c.batch_size = 4;
    c.max_epochs = 3;
    c.learning_rate = 1e-2;
    return c;
}

EmbeddingTable small_table() {
    EmbeddingTable t(4);
    nn::Rng rng(5);
    for (const char* w : {"alpha", "beta", "gamma", "delta", "eps", "zeta"})
        t.insert(w, test::random_matrix(1, 4, rng));
    return t;
}

ClaimDocumentPair make_pair(const std::string& id, const std::string& claim, const std::string& doc, Label5 l) {
    ClaimDocumentPair p;
    p.id = id;
    p.claim_text = claim;
    p.doc_text = doc;
    p.label = l;
    return p;
}

} // namespace

TEST(PyramidShape, OutputGeometry) {
    MatchPyramidConfig def;
    // (100-2)/5=19, (19-2)/5=3 ; (1000-2)/10=99, (99-2)/10=9
    EXPECT_EQ(def.pyramid().output_hw(), std::make_pair(nn::Index{3}, nn::Index{9}));
    EXPECT_EQ(def.pyramid().flattened_dim(), 3 * 9 * 32);
    EXPECT_EQ(small_config().pyramid().flattened_dim(), 1 * 4 * 3);
    auto bad = small_config();
    bad.claim_len = 6;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = small_config();
    bad.channels.clear();
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Interaction, IsPairwiseDotProducts) {
    nn::Rng rng(8);
    const Matrix q = test::random_matrix(3, 4, rng), d = test::random_matrix(5, 4, rng);
    const Matrix m = interaction_matrix(q, d);
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 5; ++k) {
            double dot = 0;
            for (int t = 0; t < 4; ++t) dot += q(i, t) * d(k, t);
            EXPECT_NEAR(m(i, k), dot, 1e-12);
        }
    EXPECT_THROW(interaction_matrix(q, test::random_matrix(5, 3, rng)), ShapeError);
}

TEST(MatchPyramid, SharedGruStart) {
    auto m = make_matchpyramid(small_config(), 3);
    EXPECT_EQ(m.claim_gru.input_kernel, m.doc_gru.input_kernel);
    EXPECT_EQ(m.claim_gru.recurrent_kernel, m.doc_gru.recurrent_kernel);
}

TEST(MatchPyramid, ForwardGivesDistributionAndIgnoresOcr) {
    const auto table = small_table();
    const auto model = make_matchpyramid(small_config(), 9);
    auto pair = make_pair("p", "alpha beta", "gamma alpha delta beta", Label5::Refute);
    const auto p = mp_forward(pair, model, table);
    ASSERT_EQ(p.size(), 3);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_GT(p.minCoeff(), 0.0);
    pair.claim_ocr = "zeta zeta";
    pair.doc_ocr = "eps";
    EXPECT_EQ(mp_forward(pair, model, table), p);
    const auto pred = mp_predict(pair, model, table);
    EXPECT_EQ(pred.label, kAllLabel3[argmax_lowest(p, 3)]);
}

TEST(MatchPyramid, BatchedPredictorMatchesSingle) {
    const auto table = small_table();
    const auto model = make_matchpyramid(small_config(), 10);
    Dataset ds;
    for (int i = 0; i < 9; ++i)
        ds.pairs.push_back(make_pair("p" + std::to_string(i), i % 2 ? "alpha gamma" : "beta",
                                     std::string(i % 3 ? "delta " : "eps ") + "alpha zeta", Label5::Refute));
    const auto all = MatchPyramidPredictor(model, table).predict_all(ds);
    ASSERT_EQ(all.size(), ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto one = mp_predict(ds.pairs[i], model, table);
        EXPECT_EQ(one.label, all[i].label);
        for (int c = 0; c < 3; ++c) EXPECT_NEAR(one.probabilities[c], all[i].probabilities[c], 1e-12);
    }
}

TEST(MatchPyramid, TrainingReducesLossOnTinySet) {
    const auto table = small_table();
    Dataset train;
    const char* claims[] = {"alpha beta", "gamma delta", "eps zeta"};
    const char* docs[] = {"alpha beta gamma", "zeta eps", "delta"};
    const Label5 labels[] = {Label5::SupportText, Label5::Refute, Label5::InsufficientText};
    for (int i = 0; i < 12; ++i)
        train.pairs.push_back(make_pair("t" + std::to_string(i), claims[i % 3], docs[i % 3], labels[i % 3]));
    auto cfg = small_config();
    cfg.max_epochs = 15;
    cfg.patience = 100;
    const auto res = mp_train(train, train, table, cfg, 1);
    ASSERT_EQ(res.log.size(), 15u);
    EXPECT_LT(res.log.back().train_loss, res.log.front().train_loss);
    EXPECT_GE(res.best_epoch, 1);
    const auto ev = mp_evaluate(res.model, train, table);
    EXPECT_DOUBLE_EQ(ev.weighted_f1, res.log[static_cast<std::size_t>(res.best_epoch - 1)].val_weighted_f1);

    const auto again = mp_train(train, train, table, cfg, 1);
    EXPECT_EQ(again.log.back().train_loss, res.log.back().train_loss);

    const std::string csv = training_log_csv(res.log);
    EXPECT_EQ(csv.rfind("epoch,train_loss,val_loss,val_acc,val_weighted_f1\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 16);
}

TEST(MatchPyramid, TrainingInputChecks) {
    const auto table = small_table();
    Dataset one;
    one.pairs.push_back(make_pair("a", "alpha", "beta", Label5::Refute));
    EXPECT_THROW(mp_train({}, one, table, small_config(), 1), DataError);
    EXPECT_THROW(mp_train(one, {}, table, small_config(), 1), DataError);
    auto cfg = small_config();
    cfg.embed_dim = 7;
    EXPECT_THROW(mp_train(one, one, table, cfg, 1), ConfigError);
    Dataset unlabeled = one;
    unlabeled.pairs[0].label.reset();
    EXPECT_THROW(mp_train(unlabeled, one, table, small_config(), 1), DataError);
}

TEST(MatchPyramid, CheckpointRoundTrip) {
    test::TempDir dir("mp");
    auto model = make_matchpyramid(small_config(), 4);
    save_matchpyramid(model, dir.file("m.ckpt"));
    const auto back = load_matchpyramid(dir.file("m.ckpt"));
    EXPECT_EQ(back.config.to_kv(), model.config.to_kv());
    const auto table = small_table();
    const auto pair = make_pair("x", "alpha gamma", "beta alpha eps", Label5::Refute);
    EXPECT_EQ(mp_forward(pair, back, table), mp_forward(pair, model, table));

    auto copy = back;
    save_matchpyramid(copy, dir.file("m2.ckpt"));
    EXPECT_EQ(test::read_file(dir.file("m.ckpt")), test::read_file(dir.file("m2.ckpt")));

    nn::save_checkpoint(dir.file("other.ckpt"), {{"kind", "multimodal5"}}, model.params());
    EXPECT_THROW(load_matchpyramid(dir.file("other.ckpt")), CheckpointKindError);
    test::write_file(dir.file("junk.ckpt"), "not a checkpoint");
    EXPECT_THROW(load_matchpyramid(dir.file("junk.ckpt")), DataError);
    const std::string bytes = test::read_file(dir.file("m.ckpt"));
    test::write_file(dir.file("cut.ckpt"), bytes.substr(0, bytes.size() / 2));
    EXPECT_THROW(load_matchpyramid(dir.file("cut.ckpt")), DataError);
}

TEST(Entailment, CodesAndTies) {
    EXPECT_EQ(entailment_code(Label3::Insufficient), 0);
    EXPECT_EQ(entailment_code(Label3::Support), 1);
    EXPECT_EQ(entailment_code(Label3::Refute), 2);
    nn::Vector p(3);
    p << 0.4, 0.4, 0.2;
    EXPECT_EQ(prediction_from_probabilities(p).label, Label3::Support);
    p << 0.2, 0.4, 0.4;
    EXPECT_EQ(prediction_from_probabilities(p).label, Label3::Refute);
    EXPECT_THROW(prediction_from_probabilities(nn::Vector::Ones(5)), ShapeError);
}

TEST(ExternalPredictions, ParseAndValidate) {
    std::istringstream ok(
        "{\"pair_id\":\"a\",\"label\":\"refute\",\"probabilities\":[0.1,0.7,0.2]}\n\n"
        "{\"pair_id\":\"b\",\"label\":\"support\",\"probabilities\":[0.5,0.5,0.0]}\n");
    const auto ext = ExternalPredictions::parse(ok);
    EXPECT_EQ(ext.size(), 2u);
    ClaimDocumentPair a;
    a.id = "a";
    EXPECT_EQ(ext.predict(a).label, Label3::Refute);
    EXPECT_DOUBLE_EQ(ext.predict(a).probabilities[1], 0.7);
    a.id = "zzz";
    EXPECT_THROW(ext.predict(a), DataError);

    auto fails = [](const std::string& line) {
        std::istringstream in(line);
        EXPECT_THROW(ExternalPredictions::parse(in), DataError) << line;
    };
    fails("{\"pair_id\":\"a\",\"label\":\"Refute\",\"probabilities\":[0.1,0.7,0.2]}");
    fails("{\"pair_id\":\"a\",\"label\":\"refute\",\"probabilities\":[0.3,0.7]}");
    fails("{\"pair_id\":\"a\",\"label\":\"refute\",\"probabilities\":[0.1,0.7,0.3]}");
    fails("{\"pair_id\":\"a\",\"label\":\"refute\",\"probabilities\":[-0.1,0.9,0.2]}");
    fails("{\"pair_id\":\"a\",\"label\":\"support\",\"probabilities\":[0.1,0.7,0.2]}");
    fails("{\"label\":\"refute\",\"probabilities\":[0.1,0.7,0.2]}");
    fails("{\"pair_id\":\"a\",\"label\":\"refute\",\"probabilities\":[0.1,0.7,0.2]}\n"
          "{\"pair_id\":\"a\",\"label\":\"refute\",\"probabilities\":[0.1,0.7,0.2]}");
    fails("garbage");
}
