#include <doctest.h>

#include <set>

#include "engage/relevance.hpp"
#include "engage/text.hpp"
#include "../support/synthetic.hpp"

using namespace engage;
using engage::testing::SyntheticWorld;
using engage::testing::TempDir;

namespace {

std::vector<QueryResponsePair> numbered(std::initializer_list<const char*> responses) {
    std::vector<QueryResponsePair> out;
    for (const char* r : responses) out.push_back({std::to_string(out.size()), "q" + std::to_string(out.size()), r, {}, {}, {}});
    return out;
}

struct LexicalFixture {
    TempDir dir;
    SyntheticWorld world{16, 21};
    std::shared_ptr<StaticEmbeddingBackend> backend;
    std::vector<QueryResponsePair> train, valid, test;

    LexicalFixture() {
        world.add_plain_words("x", 300);
        backend = world.backend(dir / "vectors.txt");
        train = engage::testing::copy_pairs("x", 300, 2000, 1, "t");
        valid = engage::testing::copy_pairs("x", 300, 300, 2, "v");
        test = engage::testing::copy_pairs("x", 300, 500, 3, "e");
    }
};

RelevanceConfig lexical_config(RelevanceVariant variant) {
    RelevanceConfig cfg;
    cfg.variant = variant;
    cfg.train.learning_rate = 3e-3;
    cfg.train.epochs = 60;
    cfg.train.patience = 10;
    cfg.train.weighted_loss = false;
    cfg.train.seed = 1;
    cfg.negatives.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("negatives never reuse the positive response") {
    auto pairs = numbered({"a", " a ", "b", "a", "c", "b\n"});
    NegativeSamplingSpec spec{3, 9};
    auto idx = sample_negative_indices(pairs, spec);
    REQUIRE(idx.size() == pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        CHECK(idx[i].size() == 3);
        for (auto j : idx[i]) {
            CHECK(j != i);
            CHECK(trim(pairs[j].response) != trim(pairs[i].response));
        }
    }
    auto expanded = generate_negatives(pairs, spec);
    CHECK(expanded.size() == pairs.size() * 4);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& pos = expanded[i * 4];
        CHECK(*pos.label == 1);
        CHECK(pos.response == pairs[i].response);
        for (int k = 1; k <= 3; ++k) {
            const auto& neg = expanded[i * 4 + k];
            CHECK(*neg.label == 0);
            CHECK(neg.query == pos.query);
            CHECK(trim(neg.response) != trim(pos.response));
            CHECK(neg.pair_id == pos.pair_id + "#neg" + std::to_string(k - 1));
        }
    }
    CHECK(generate_negatives(pairs, spec)[5].response == expanded[5].response);
}

TEST_CASE("negative sampling property over random pools") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        std::uniform_int_distribution<int> size(2, 30), vocab(2, 5);
        const int n = size(rng), v = vocab(rng);
        std::vector<QueryResponsePair> pairs(n);
        std::uniform_int_distribution<int> word(0, v - 1);
        for (int i = 0; i < n; ++i) pairs[i] = {std::to_string(i), "q", "r" + std::to_string(word(rng)), {}, {}, {}};
        pairs[0].response = "unique";
        for (const auto& p : generate_negatives(pairs, {2, static_cast<std::uint64_t>(trial)}))
            if (*p.label == 0) CHECK(p.response != pairs[std::stoul(p.pair_id.substr(0, p.pair_id.find('#')))].response);
    }
}

TEST_CASE("negative sampling rejects degenerate pools") {
    CHECK_THROWS_AS(sample_negative_indices(numbered({"a", "a "}), {1, 0}), ValidationError);
    CHECK_THROWS_AS(sample_negative_indices(numbered({"a", "b"}), {0, 0}), ValidationError);
}

TEST_CASE("margin ranking loss is the mean hinge") {
    Eigen::VectorXf pos(3), neg(3);
    pos << 0.9f, 0.6f, 0.2f;
    neg << 0.1f, 0.5f, 0.6f;
    CHECK(margin_ranking_loss(pos, neg, 0.5) == doctest::Approx((0.0 + 0.4 + 0.9) / 3).epsilon(1e-6));
    pos << 1.0f, 1.0f, 1.0f;
    neg << 0.5f, 0.2f, 0.0f;
    CHECK(margin_ranking_loss(pos, neg, 0.5) == 0.0);
    CHECK_THROWS_AS(margin_ranking_loss(pos, Eigen::VectorXf(2), 0.5), ValidationError);
}

TEST_CASE("scores of both variants stay in [0, 1] on random inputs") {
    for (auto variant : {RelevanceVariant::ranking, RelevanceVariant::cross_entropy}) {
        auto model = make_relevance_model(variant, 8, Pooling::mean, {}, 3);
        Eigen::MatrixXf x = 50.0f * Eigen::MatrixXf::Random(16, 1000);
        Eigen::VectorXf s = predict_relevance(model, x);
        CHECK(s.size() == 1000);
        CHECK(s.minCoeff() >= 0.0f);
        CHECK(s.maxCoeff() <= 1.0f);
        CHECK((predict_relevance(model, x).array() == s.array()).all());
    }
}

TEST_CASE("ranking variant learns lexical overlap") {
    LexicalFixture f;
    PairFeaturizer feat(f.backend, Pooling::mean);
    auto trained = train_relevance(f.train, f.valid, lexical_config(RelevanceVariant::ranking), feat);
    CHECK(trained.model.network.output_width() == 1);
    NegativeSamplingSpec held_out{1, 77};
    const double acc = ranking_accuracy(trained.model, feat, f.test, held_out);
    CHECK(acc >= 0.95);

    auto negatives = generate_negatives(f.test, held_out);
    double pos = 0, neg = 0;
    for (const auto& p : negatives)
        (*p.label ? pos : neg) += predict_relevance(trained.model, feat, p.query, p.response);
    const double n = static_cast<double>(f.test.size());
    CHECK(pos / n - neg / n >= trained.model.margin / 2);
}

TEST_CASE("cross-entropy variant separates true from re-matched pairs") {
    LexicalFixture f;
    PairFeaturizer feat(f.backend, Pooling::mean);
    auto trained = train_relevance(f.train, f.valid, lexical_config(RelevanceVariant::cross_entropy), feat);
    auto labelled = generate_negatives(f.test, {1, 77});
    Eigen::MatrixXf x = feat.matrix(labelled);
    Eigen::VectorXf s = predict_relevance(trained.model, x);
    Eigen::VectorXi y(static_cast<Eigen::Index>(labelled.size()));
    for (std::size_t i = 0; i < labelled.size(); ++i) y(static_cast<Eigen::Index>(i)) = *labelled[i].label;
    CHECK(roc_auc(y, s) > 0.8);
    CHECK(ranking_accuracy(trained.model, feat, f.test, {1, 77}) >= 0.9);
}

TEST_CASE("relevance checkpoints round trip and scoring is deterministic") {
    TempDir dir;
    LexicalFixture f;
    PairFeaturizer feat(f.backend, Pooling::max);
    auto cfg = lexical_config(RelevanceVariant::ranking);
    cfg.train.epochs = 2;
    std::span<const QueryResponsePair> small(f.train.data(), 100);
    auto model = train_relevance(small, {}, cfg, feat).model;
    save(dir / "r.ckpt", model);
    auto back = load_relevance(dir / "r.ckpt");
    CHECK(back.variant == RelevanceVariant::ranking);
    CHECK(back.margin == model.margin);
    CHECK(back.pooling == Pooling::max);
    CHECK(back.trained_on == model.trained_on);
    CHECK(back.network.parameters() == model.network.parameters());
    const auto& p = f.test[0];
    CHECK(predict_relevance(back, feat, p.query, p.response) == predict_relevance(model, feat, p.query, p.response));
    CHECK_THROWS_AS(predict_relevance(model, feat, "", p.response), ValidationError);
    CHECK(parse_relevance_variant("ranking") == RelevanceVariant::ranking);
    CHECK_THROWS_AS(parse_relevance_variant("cosine"), ValidationError);
}
