#include <doctest.h>

#include <random>

#include "engage/birnn.hpp"
#include "engage/engagement.hpp"
#include "engage/svm.hpp"
#include "../support/synthetic.hpp"

using namespace engage;
using engage::testing::SyntheticWorld;
using engage::testing::TempDir;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar GRU recurrence with one input and one hidden unit.
double scalar_gru(const Gru<double>& g, const std::vector<double>& xs) {
    double h = 0;
    for (double x : xs) {
        const double r = sigmoid(g.w_input(0, 0) * x + g.b_input(0) + g.w_hidden(0, 0) * h + g.b_hidden(0));
        const double z = sigmoid(g.w_input(1, 0) * x + g.b_input(1) + g.w_hidden(1, 0) * h + g.b_hidden(1));
        const double n = std::tanh(g.w_input(2, 0) * x + g.b_input(2) + r * (g.w_hidden(2, 0) * h + g.b_hidden(2)));
        h = (1 - z) * n + z * h;
    }
    return h;
}

std::vector<PairSequences<double>> random_sequences(int count, int width, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    std::uniform_int_distribution<int> len(1, 5);
    std::vector<PairSequences<double>> out(count);
    for (auto& p : out) {
        p.query = Eigen::MatrixXd::NullaryExpr(width, len(rng), [&] { return g(rng); });
        p.response = Eigen::MatrixXd::NullaryExpr(width, len(rng), [&] { return g(rng); });
    }
    return out;
}

}  // namespace

TEST_CASE("svm features: n-grams stay within each utterance") {
    auto f = featurize_svm("a b", "b c");
    CHECK(f.ngram_counts.at("a") == 1);
    CHECK(f.ngram_counts.at("b") == 2);
    CHECK(f.ngram_counts.at("c") == 1);
    CHECK(f.ngram_counts.at("a b") == 1);
    CHECK(f.ngram_counts.at("b c") == 1);
    CHECK(f.ngram_counts.count("b b") == 0);
    CHECK(f.ngram_counts.size() == 5);
    CHECK(f.response_length == 2);
    CHECK(f.distinct_words == 2);

    auto g = featurize_svm("Hi!", "Good good day");
    CHECK(g.response_length == 3);
    CHECK(g.distinct_words == 2);
    CHECK(g.ngram_counts.at("good good") == 1);
    CHECK(g.ngram_counts.at("hi") == 1);

    CHECK(serialize(f) == serialize(featurize_svm("a  b", "B c")));
    CHECK(serialize(f).find("a b\t1\n") != std::string::npos);
}

TEST_CASE("svm separates a toy corpus and is symmetric under label flips") {
    std::vector<SvmFeatureVector> x;
    std::vector<int> y;
    for (int i = 0; i < 20; ++i) {
        x.push_back(featurize_svm("hello there", i % 2 ? "great fun story" : "no"));
        x.push_back(featurize_svm("what now", i % 2 ? "fun story indeed" : "ok no"));
        y.push_back(i % 2);
        y.push_back(i % 2);
    }
    SvmConfig cfg;
    cfg.c = 1.0;
    auto model = train_svm(x, y, cfg);
    int correct = 0;
    for (std::size_t i = 0; i < x.size(); ++i) correct += model.predict(x[i]) == y[i];
    CHECK(correct == static_cast<int>(x.size()));

    std::vector<int> flipped;
    for (int v : y) flipped.push_back(1 - v);
    auto mirror = train_svm(x, flipped, cfg);
    for (const auto& f : x) CHECK(mirror.decision(f) == doctest::Approx(-model.decision(f)).epsilon(1e-6));

    Eigen::VectorXd d = decision_values(model, x);
    CHECK(d(1) == doctest::Approx(model.decision(x[1])));
}

TEST_CASE("svm: duplicating examples equals doubling their weights") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> w(0, 9);
    std::vector<SvmFeatureVector> x;
    std::vector<int> y;
    for (int i = 0; i < 60; ++i) {
        const int label = i % 3 == 0;
        std::string r = label ? "yes " : "";
        for (int k = 0; k < 3; ++k) r += "w" + std::to_string(w(rng)) + " ";
        x.push_back(featurize_svm("q", r));
        y.push_back(label);
    }
    SvmConfig cfg;
    cfg.tolerance = 1e-8;
    cfg.max_iterations = 20000;
    auto dup_x = x;
    auto dup_y = y;
    dup_x.insert(dup_x.end(), x.begin(), x.end());
    dup_y.insert(dup_y.end(), y.begin(), y.end());
    auto a = train_svm(dup_x, dup_y, cfg);
    std::vector<double> twos(x.size(), 2.0);
    auto b = train_svm(x, y, cfg, twos);
    CHECK(a.class_weights.positive == doctest::Approx(b.class_weights.positive));
    for (const auto& f : x) CHECK(a.decision(f) == doctest::Approx(b.decision(f)).epsilon(1e-4));
}

TEST_CASE("svm drops rare n-grams and round trips through JSON") {
    std::vector<SvmFeatureVector> x = {featurize_svm("q", "common rare"), featurize_svm("q", "common"),
                                       featurize_svm("q", "other")};
    std::vector<int> y = {1, 1, 0};
    auto model = train_svm(x, y, {});
    CHECK(model.weights.count("common") == 1);
    CHECK(model.weights.count("rare") == 0);
    CHECK(model.weights.count(kResponseLengthFeature) == 1);
    auto back = svm_from_json_text(to_json_text(model));
    CHECK(back.weights == model.weights);
    CHECK(back.bias == model.bias);
    CHECK(to_json_text(back) == to_json_text(model));
    TempDir dir;
    save(dir / "svm.json", model);
    CHECK(load_svm(dir / "svm.json").decision(x[0]) == model.decision(x[0]));
    CHECK_THROWS_AS(svm_from_json_text("{\"kind\": \"mlp\"}"), LoadError);
    std::vector<int> one_class = {1, 1, 1};
    CHECK_THROWS_AS(train_svm(x, one_class, {}), ValidationError);
}

TEST_CASE("gru recurrence matches a scalar reference") {
    std::mt19937_64 rng(8);
    Gru<double> g(1, 1, rng);
    Eigen::MatrixXd in(1, 4);
    in << 0.5, -1.0, 2.0, 0.1;
    CHECK(g.run(in)(0) == doctest::Approx(scalar_gru(g, {0.5, -1.0, 2.0, 0.1})).epsilon(1e-12));
    BiGru<double> bi(1, 1, rng);
    auto enc = bi.encode(in);
    CHECK(enc(0) == doctest::Approx(scalar_gru(bi.forward, {0.5, -1.0, 2.0, 0.1})).epsilon(1e-12));
    CHECK(enc(1) == doctest::Approx(scalar_gru(bi.backward, {0.1, 2.0, -1.0, 0.5})).epsilon(1e-12));
}

TEST_CASE("bidirectional network gradient matches finite differences") {
    std::mt19937_64 rng(2);
    BiRnn<double> net(3, 4, 5, 7);
    auto batch = random_sequences(4, 3, rng);
    std::vector<int> labels = {0, 1, 1, 0};
    std::vector<double> weights = {1.0, 2.0, 2.0, 1.0};
    Eigen::MatrixXd mask = Eigen::MatrixXd::Constant(16, 4, 2.0);
    mask(3, 1) = 0;
    mask(10, 2) = 0;
    const std::vector<const Eigen::MatrixXd*> masks = {nullptr, &mask};
    for (const Eigen::MatrixXd* m : masks) {
        Eigen::VectorXd grad;
        net.loss_and_gradient(batch, labels, weights, m, grad);
        Eigen::VectorXd p = net.parameters();
        REQUIRE(grad.size() == p.size());
        double worst = 0;
        const double h = 1e-6;
        Eigen::VectorXd scratch;
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            Eigen::VectorXd plus = p, minus = p;
            plus(i) += h;
            minus(i) -= h;
            net.set_parameters(plus);
            const double lp = net.loss_and_gradient(batch, labels, weights, m, scratch);
            net.set_parameters(minus);
            const double lm = net.loss_and_gradient(batch, labels, weights, m, scratch);
            worst = std::max(worst, std::abs((lp - lm) / (2 * h) - grad(i)));
        }
        net.set_parameters(p);
        CHECK(worst < 1e-7);
    }
}

TEST_CASE("bidirectional network learns a separable corpus and is deterministic") {
    TempDir dir;
    SyntheticWorld world(8, 13);
    engage::testing::DomainSpec domain{"a", 0};
    domain.positive_rate = 0.4;
    world.add_domain(domain);
    auto backend = world.backend(dir / "v.txt");
    auto train = world.sample(domain, 300, 1, "t");
    auto valid = world.sample(domain, 100, 2, "v");
    auto test = world.sample(domain, 200, 3, "e");
    BiRnnConfig cfg;
    cfg.hidden = 8;
    cfg.head_hidden = 8;
    cfg.dropout = 0.2;
    cfg.train.learning_rate = 1e-2;
    cfg.train.epochs = 15;
    cfg.train.seed = 3;
    auto trained = train_birnn(train, valid, cfg, *backend);
    Eigen::VectorXf p = predict_birnn(trained.model, *backend, test);
    Eigen::VectorXi y = labels_of(test);
    CHECK(balanced_accuracy(y, threshold_labels<float>(p)) >= 0.9);
    CHECK(p.minCoeff() >= 0.0f);
    CHECK(p.maxCoeff() <= 1.0f);

    auto again = train_birnn(train, valid, cfg, *backend);
    CHECK(again.model.network.parameters() == trained.model.network.parameters());

    save(dir / "b.ckpt", trained.model);
    auto back = load_birnn(dir / "b.ckpt");
    CHECK(back.network.parameters() == trained.model.network.parameters());
    CHECK(back.dropout == cfg.dropout);
    CHECK(back.trained_on == trained.model.trained_on);
    CHECK(predict_birnn(back, *backend, test[0].query, test[0].response) == doctest::Approx(p(0)).epsilon(1e-5));
}
