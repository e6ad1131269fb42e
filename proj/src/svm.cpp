#include "engage/svm.hpp"

#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "engage/text.hpp"

namespace engage {

using nlohmann::json;

namespace {

void count_ngrams(const std::vector<std::string>& tokens, std::map<std::string, int>& counts) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        ++counts[tokens[i]];
        if (i + 1 < tokens.size()) ++counts[tokens[i] + " " + tokens[i + 1]];
    }
}

}  // namespace

SvmFeatureVector featurize_svm(std::string_view query, std::string_view response) {
    SvmFeatureVector f;
    const auto q = word_tokens(query, true);
    const auto r = word_tokens(response, true);
    count_ngrams(q, f.ngram_counts);
    count_ngrams(r, f.ngram_counts);
    f.response_length = static_cast<int>(r.size());
    f.distinct_words = static_cast<int>(std::set<std::string>(r.begin(), r.end()).size());
    return f;
}

SvmFeatureVector featurize_svm(const QueryResponsePair& pair) { return featurize_svm(pair.query, pair.response); }

std::string serialize(const SvmFeatureVector& f) {
    std::ostringstream out;
    for (const auto& [name, count] : f.ngram_counts) out << name << '\t' << count << '\n';
    out << kResponseLengthFeature << '\t' << f.response_length << '\n';
    out << kDistinctWordsFeature << '\t' << f.distinct_words << '\n';
    return out.str();
}

double SvmModel::decision(const SvmFeatureVector& f) const {
    double s = bias;
    for (const auto& [name, count] : f.ngram_counts) {
        auto it = weights.find(name);
        if (it != weights.end()) s += it->second * count;
    }
    if (auto it = weights.find(kResponseLengthFeature); it != weights.end()) s += it->second * f.response_length;
    if (auto it = weights.find(kDistinctWordsFeature); it != weights.end()) s += it->second * f.distinct_words;
    return s;
}

int SvmModel::predict(const SvmFeatureVector& f) const { return decision(f) > 0 ? 1 : 0; }

SvmModel train_svm(std::span<const SvmFeatureVector> features, std::span<const int> labels, const SvmConfig& cfg,
                   std::span<const double> example_weights) {
    const std::size_t n = features.size();
    if (labels.size() != n) throw ValidationError("train_svm: labels and features differ in length");
    if (!example_weights.empty() && example_weights.size() != n)
        throw ValidationError("train_svm: example weights and features differ in length");
    if (!(cfg.c > 0)) throw ValidationError("train_svm: C must be positive");

    double mass[2] = {0, 0};
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw ValidationError("train_svm: labels must be 0 or 1");
        const double ew = example_weights.empty() ? 1.0 : example_weights[i];
        if (!(ew > 0)) throw ValidationError("train_svm: example weights must be positive");
        mass[labels[i]] += ew;
    }
    if (mass[0] == 0 || mass[1] == 0) throw ValidationError("train_svm: both classes must be present");

    SvmModel model;
    model.c = cfg.c;
    if (cfg.class_weighted) {
        const double total = mass[0] + mass[1];
        model.class_weights = {total / (2 * mass[0]), total / (2 * mass[1])};
    }

    // Vocabulary: n-grams with enough total occurrences, plus the two counts.
    std::map<std::string, double> totals;
    for (std::size_t i = 0; i < n; ++i) {
        const double ew = example_weights.empty() ? 1.0 : example_weights[i];
        for (const auto& [name, count] : features[i].ngram_counts) totals[name] += ew * count;
    }
    std::vector<std::string> names;
    for (const auto& [name, total] : totals)
        if (total >= cfg.min_count) names.push_back(name);
    names.push_back(kResponseLengthFeature);
    names.push_back(kDistinctWordsFeature);
    std::sort(names.begin(), names.end());
    std::unordered_map<std::string, int> index;
    for (std::size_t k = 0; k < names.size(); ++k) index[names[k]] = static_cast<int>(k);
    const int bias_index = static_cast<int>(names.size());

    std::vector<Eigen::Triplet<double>> triplets;
    for (std::size_t i = 0; i < n; ++i) {
        const int col = static_cast<int>(i);
        for (const auto& [name, count] : features[i].ngram_counts)
            if (auto it = index.find(name); it != index.end()) triplets.emplace_back(it->second, col, count);
        triplets.emplace_back(index.at(kResponseLengthFeature), col, features[i].response_length);
        triplets.emplace_back(index.at(kDistinctWordsFeature), col, features[i].distinct_words);
        triplets.emplace_back(bias_index, col, 1.0);
    }
    Eigen::SparseMatrix<double> x(bias_index + 1, static_cast<Eigen::Index>(n));
    x.setFromTriplets(triplets.begin(), triplets.end());
    x.makeCompressed();

    Eigen::VectorXd y(n), upper(n), diag(n), alpha = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        y(k) = labels[i] == 1 ? 1.0 : -1.0;
        const double cw = labels[i] == 1 ? model.class_weights.positive : model.class_weights.negative;
        upper(k) = cfg.c * cw * (example_weights.empty() ? 1.0 : example_weights[i]);
        diag(k) = x.col(k).squaredNorm();
    }
    Eigen::VectorXd w = Eigen::VectorXd::Zero(x.rows());

    std::mt19937_64 rng(cfg.seed);
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), Eigen::Index(0));
    int iter = 0;
    for (; iter < cfg.max_iterations; ++iter) {
        std::shuffle(order.begin(), order.end(), rng);
        double pg_max = -std::numeric_limits<double>::infinity();
        double pg_min = std::numeric_limits<double>::infinity();
        for (Eigen::Index i : order) {
            double dot = 0;
            for (Eigen::SparseMatrix<double>::InnerIterator it(x, i); it; ++it) dot += w(it.row()) * it.value();
            const double g = y(i) * dot - 1.0;
            double pg = g;
            if (alpha(i) == 0) pg = std::min(g, 0.0);
            else if (alpha(i) == upper(i)) pg = std::max(g, 0.0);
            pg_max = std::max(pg_max, pg);
            pg_min = std::min(pg_min, pg);
            if (pg == 0) continue;
            const double updated = std::clamp(alpha(i) - g / diag(i), 0.0, upper(i));
            const double delta = (updated - alpha(i)) * y(i);
            alpha(i) = updated;
            for (Eigen::SparseMatrix<double>::InnerIterator it(x, i); it; ++it) w(it.row()) += delta * it.value();
        }
        if (pg_max - pg_min < cfg.tolerance) {
            ++iter;
            break;
        }
    }
    model.iterations = iter;
    for (std::size_t k = 0; k < names.size(); ++k) model.weights[names[k]] = w(static_cast<Eigen::Index>(k));
    model.bias = w(bias_index);
    return model;
}

Eigen::VectorXd decision_values(const SvmModel& model, std::span<const SvmFeatureVector> features) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(features.size()));
    for (std::size_t i = 0; i < features.size(); ++i) out(static_cast<Eigen::Index>(i)) = model.decision(features[i]);
    return out;
}

std::string to_json_text(const SvmModel& model) {
    json j;
    j["kind"] = "svm";
    j["format_version"] = 1;
    j["c"] = model.c;
    j["class_weights"] = {{"negative", model.class_weights.negative}, {"positive", model.class_weights.positive}};
    j["bias"] = model.bias;
    j["iterations"] = model.iterations;
    j["weights"] = model.weights;
    return j.dump(2) + "\n";
}

SvmModel svm_from_json_text(std::string_view text) {
    try {
        const json j = json::parse(text);
        if (j.value("kind", std::string()) != "svm") throw LoadError("file is not an SVM model");
        SvmModel model;
        model.c = j.at("c").get<double>();
        model.class_weights = {j.at("class_weights").at("negative").get<double>(),
                               j.at("class_weights").at("positive").get<double>()};
        model.bias = j.at("bias").get<double>();
        model.iterations = j.value("iterations", 0);
        model.weights = j.at("weights").get<std::map<std::string, double>>();
        return model;
    } catch (const json::exception& e) {
        throw LoadError(std::string("SVM model: ") + e.what());
    }
}

void save(const std::filesystem::path& path, const SvmModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write " + path.string());
    out << to_json_text(model);
}

SvmModel load_svm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return svm_from_json_text(text.str());
}

}  // namespace engage
