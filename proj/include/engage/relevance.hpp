#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "engage/checkpoint.hpp"
#include "engage/classifier.hpp"
#include "engage/corpus.hpp"
#include "engage/embedding.hpp"

namespace engage {

// Unreferenced relevance scoring: how well a response fits its query, learned
// from true pairs against randomly re-matched ones.

enum class RelevanceVariant {
    /// Scalar score trained with a margin ranking loss, squashed by a logistic unit.
    ranking,
    /// Binary classifier over true vs re-matched pairs.
    cross_entropy,
};

std::string to_string(RelevanceVariant v);
RelevanceVariant parse_relevance_variant(std::string_view name);

struct NegativeSamplingSpec {
    int ratio = 1;
    std::uint64_t seed = 0;
};

/// For each pair, indices of the pairs whose responses serve as its negatives.
/// A negative response never equals the positive one (after trimming).
std::vector<std::vector<std::size_t>> sample_negative_indices(std::span<const QueryResponsePair> pairs,
                                                              const NegativeSamplingSpec& spec);

/// Each input pair labelled 1, followed by `ratio` re-matched copies labelled 0.
std::vector<QueryResponsePair> generate_negatives(std::span<const QueryResponsePair> pairs,
                                                  const NegativeSamplingSpec& spec);

struct RelevanceConfig {
    RelevanceVariant variant = RelevanceVariant::cross_entropy;
    TrainConfig train;
    NegativeSamplingSpec negatives;
    double margin = 0.5;
};

struct RelevanceModel {
    RelevanceVariant variant = RelevanceVariant::cross_entropy;
    Mlp<float> network;
    Pooling pooling = Pooling::mean;
    EmbeddingBackendSpec backend;
    double margin = 0.5;
    std::uint64_t seed = 0;
    std::string training_fingerprint;
    std::set<std::string> trained_on;
};

RelevanceModel make_relevance_model(RelevanceVariant variant, int embedding_dimension, Pooling pooling,
                                    EmbeddingBackendSpec backend, std::uint64_t seed);

struct RelevanceTraining {
    RelevanceModel model;
    FitReport report;
};

/// Trains on true pairs (labels are ignored). With a validation pool the
/// checkpoint with the best validation score is kept.
RelevanceTraining train_relevance(std::span<const QueryResponsePair> train, std::span<const QueryResponsePair> valid,
                                  const RelevanceConfig& cfg, PairFeaturizer& featurizer);

/// Mean of max(0, margin - s(q, r+) + s(q, r-)) over aligned score vectors.
double margin_ranking_loss(const Eigen::Ref<const Eigen::VectorXf>& positive,
                           const Eigen::Ref<const Eigen::VectorXf>& negative, double margin);

/// Scores in [0, 1] for each feature column.
Eigen::VectorXf predict_relevance(const RelevanceModel& model, const Eigen::Ref<const Eigen::MatrixXf>& features);
double predict_relevance(const RelevanceModel& model, PairFeaturizer& featurizer, std::string_view query,
                         std::string_view response);

/// Fraction of (pair, negative) combinations with s(q, r+) > s(q, r-).
double ranking_accuracy(const RelevanceModel& model, PairFeaturizer& featurizer,
                        std::span<const QueryResponsePair> pairs, const NegativeSamplingSpec& spec);

Checkpoint to_checkpoint(const RelevanceModel& model);
RelevanceModel relevance_from_checkpoint(const Checkpoint& ckpt);
void save(const std::filesystem::path& path, const RelevanceModel& model);
RelevanceModel load_relevance(const std::filesystem::path& path);

}  // namespace engage
