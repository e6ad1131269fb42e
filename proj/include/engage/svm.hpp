#pragma once

#include <Eigen/SparseCore>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "engage/classifier.hpp"
#include "engage/corpus.hpp"

namespace engage {

/// Hand-crafted pair features. N-grams never cross the query/response boundary.
struct SvmFeatureVector {
    std::map<std::string, int> ngram_counts;
    int response_length = 0;
    int distinct_words = 0;
};

inline constexpr const char* kResponseLengthFeature = "#response_length";
inline constexpr const char* kDistinctWordsFeature = "#distinct_words";

/// Unigram and bigram counts over lowercased query and response tokens, plus
/// response length and distinct response words.
SvmFeatureVector featurize_svm(std::string_view query, std::string_view response);
SvmFeatureVector featurize_svm(const QueryResponsePair& pair);

/// Canonical text form: one "feature<TAB>count" line per entry in sorted order.
std::string serialize(const SvmFeatureVector& f);

struct SvmConfig {
    double c = 0.1;
    bool class_weighted = true;
    /// N-grams whose weighted count across the training set is below this are dropped.
    int min_count = 2;
    /// Stop once the projected-gradient spread falls below this.
    double tolerance = 1e-4;
    int max_iterations = 2000;
    std::uint64_t seed = 0;
};

struct SvmModel {
    /// Sorted by feature name.
    std::map<std::string, double> weights;
    double bias = 0;
    ClassWeights class_weights;
    double c = 0.1;
    int iterations = 0;

    double decision(const SvmFeatureVector& f) const;
    /// 1 when the decision value is positive.
    int predict(const SvmFeatureVector& f) const;
};

/// Linear soft-margin SVM trained in the dual by coordinate descent. The bias
/// is learned as the weight of a constant feature. `example_weights` scale
/// each example's box constraint.
SvmModel train_svm(std::span<const SvmFeatureVector> features, std::span<const int> labels, const SvmConfig& cfg,
                   std::span<const double> example_weights = {});

Eigen::VectorXd decision_values(const SvmModel& model, std::span<const SvmFeatureVector> features);

void save(const std::filesystem::path& path, const SvmModel& model);
SvmModel load_svm(const std::filesystem::path& path);
std::string to_json_text(const SvmModel& model);
SvmModel svm_from_json_text(std::string_view text);

}  // namespace engage
