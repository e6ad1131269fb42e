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

/// Utterance-level engagement classifier: [pooled query ; pooled response]
/// -> 64 -> 32 -> 8 -> 2-way softmax. The score is P(engaging).
struct EngagementModel {
    Mlp<float> network;
    Pooling pooling = Pooling::mean;
    EmbeddingBackendSpec backend;
    std::uint64_t seed = 0;
    std::string training_fingerprint;
    /// pair_key() of every training and fine-tuning pair (leakage guard).
    std::set<std::string> trained_on;

    int embedding_dimension() const { return static_cast<int>(network.input_width() / 2); }
};

EngagementModel make_engagement_model(int embedding_dimension, Pooling pooling, EmbeddingBackendSpec backend,
                                      std::uint64_t seed, Activation hidden = Activation::tanh);

struct EngagementTraining {
    EngagementModel model;
    FitReport report;
};

/// Labels must be present on every pair.
Eigen::VectorXi labels_of(std::span<const QueryResponsePair> pairs);

/// Digest of the sorted pair keys plus the configuration.
std::string training_fingerprint(std::span<const QueryResponsePair> pairs, const TrainConfig& cfg,
                                 const std::string& extra = {});

EngagementTraining train_engagement(std::span<const QueryResponsePair> train,
                                    std::span<const QueryResponsePair> valid, const TrainConfig& cfg,
                                    PairFeaturizer& featurizer);

/// Continues optimisation of every layer from the source weights. Throws
/// LeakageError when a fine-tuning pair is in `evaluation_keys`. An empty
/// fine-tuning set returns the model unchanged.
EngagementTraining finetune(const EngagementModel& source, std::span<const QueryResponsePair> small_pairs,
                            std::span<const QueryResponsePair> valid, const TrainConfig& cfg,
                            PairFeaturizer& featurizer, const std::set<std::string>& evaluation_keys = {});

double predict_engagement(const EngagementModel& model, PairFeaturizer& featurizer, std::string_view query,
                          std::string_view response);

/// P(engaging) for each feature column.
Eigen::VectorXf predict_engagement(const EngagementModel& model, const Eigen::Ref<const Eigen::MatrixXf>& features);

ClassifierScores evaluate_classifier(const EngagementModel& model, PairFeaturizer& featurizer,
                                     std::span<const QueryResponsePair> pairs);

/// Every evaluation pair must be absent from `trained_on`.
void check_no_overlap(const std::set<std::string>& trained_on, std::span<const QueryResponsePair> pairs,
                      const std::string& what);

Checkpoint to_checkpoint(const EngagementModel& model);
EngagementModel engagement_from_checkpoint(const Checkpoint& ckpt);

void save(const std::filesystem::path& path, const EngagementModel& model);
EngagementModel load_engagement(const std::filesystem::path& path);

}  // namespace engage
