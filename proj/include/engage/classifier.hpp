#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <vector>

#include "engage/embedding.hpp"
#include "engage/mlp.hpp"
#include "engage/stats.hpp"

namespace engage {

/// Hidden widths of the pair classifiers.
inline const std::vector<int> kHiddenWidths = {64, 32, 8};

enum class Optimizer { adam, sgd };

struct ClassWeights {
    double negative = 1.0;
    double positive = 1.0;
};

/// Inverse-frequency weights w_c = N / (2 N_c).
ClassWeights compute_class_weights(std::span<const int> labels);
ClassWeights compute_class_weights(std::size_t negatives, std::size_t positives);

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 50;
    int batch_size = 32;
    /// Computed from the training labels when absent.
    std::optional<ClassWeights> class_weights;
    bool weighted_loss = true;
    /// Epochs without validation improvement before stopping.
    int patience = 5;
    std::uint64_t seed = 0;
    Optimizer optimizer = Optimizer::adam;

    /// 1e-3 for mean pooling, 1e-2 for max pooling.
    static TrainConfig for_pooling(Pooling pooling);
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0;
    /// Balanced accuracy for classifiers, ranking accuracy for ranking scorers.
    std::optional<double> valid_metric;
};

struct FitReport {
    std::vector<EpochRecord> history;
    /// 0 means the initial weights were kept.
    int best_epoch = 0;
    std::optional<double> best_valid_metric;
    ClassWeights weights;
};

struct ClassifierScores {
    double balanced_accuracy = 0;
    double roc_auc = 0;
};

/// Probability of class 1 for each column of `features`.
template <typename Scalar>
VectorX<Scalar> positive_probability(const Mlp<Scalar>& net, const Eigen::Ref<const MatrixX<Scalar>>& features) {
    return softmax_columns(net.logits(features)).row(1).transpose();
}

template <typename Scalar>
Eigen::VectorXi threshold_labels(const Eigen::Ref<const VectorX<Scalar>>& probability) {
    return (probability.array() >= Scalar(0.5)).template cast<int>();
}

template <typename Scalar>
ClassifierScores score_classifier(const Mlp<Scalar>& net, const Eigen::Ref<const MatrixX<Scalar>>& features,
                                  const Eigen::Ref<const Eigen::VectorXi>& labels) {
    const VectorX<Scalar> p = positive_probability(net, features);
    return {balanced_accuracy(labels, threshold_labels<Scalar>(p)), roc_auc(labels, p)};
}

/// Mini-batch training with class-weighted cross entropy. With validation data
/// the weights with the best validation balanced accuracy are kept and
/// training stops after `patience` epochs without improvement.
template <typename Scalar>
FitReport fit_classifier(Mlp<Scalar>& net, const Eigen::Ref<const MatrixX<Scalar>>& features,
                         const Eigen::Ref<const Eigen::VectorXi>& labels, const TrainConfig& cfg,
                         const MatrixX<Scalar>* valid_features = nullptr,
                         const Eigen::VectorXi* valid_labels = nullptr) {
    const Eigen::Index n = features.cols();
    if (n == 0) throw ValidationError("training set is empty");
    if (labels.size() != n) throw ValidationError("labels and features differ in length");
    if (cfg.epochs < 0 || cfg.batch_size <= 0 || !(cfg.learning_rate > 0))
        throw ValidationError("invalid training configuration");

    FitReport report;
    std::vector<int> y(labels.data(), labels.data() + n);
    if (cfg.class_weights) report.weights = *cfg.class_weights;
    else if (cfg.weighted_loss) report.weights = compute_class_weights(y);
    std::vector<Scalar> w(n);
    for (Eigen::Index i = 0; i < n; ++i)
        w[i] = static_cast<Scalar>(y[i] == 1 ? report.weights.positive : report.weights.negative);

    const bool validate = valid_features != nullptr && valid_labels != nullptr && valid_features->cols() > 0;
    auto valid_score = [&] { return score_classifier<Scalar>(net, *valid_features, *valid_labels).balanced_accuracy; };
    auto full_loss = [&] {
        return static_cast<double>(weighted_cross_entropy<Scalar>(net.logits(features), y, w));
    };

    VectorX<Scalar> params = net.parameters();
    VectorX<Scalar> best = params;
    double best_score = -1;
    if (validate) {
        best_score = valid_score();
        report.best_valid_metric = best_score;
    }
    report.history.push_back({0, full_loss(), report.best_valid_metric});

    Adam<Scalar> adam(cfg.learning_rate);
    Sgd<Scalar> sgd(cfg.learning_rate);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), Eigen::Index(0));

    int since_best = 0;
    typename Mlp<Scalar>::Tape tape;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
            const Eigen::Index len = std::min<Eigen::Index>(cfg.batch_size, n - start);
            MatrixX<Scalar> batch(features.rows(), len);
            std::vector<int> by(len);
            std::vector<Scalar> bw(len);
            for (Eigen::Index k = 0; k < len; ++k) {
                const auto idx = order[start + k];
                batch.col(k) = features.col(idx);
                by[k] = y[idx];
                bw[k] = w[idx];
            }
            MatrixX<Scalar> logits = net.forward(batch, tape);
            MatrixX<Scalar> grad_logits;
            const Scalar loss = weighted_cross_entropy<Scalar>(logits, by, bw, &grad_logits);
            if (!std::isfinite(static_cast<double>(loss))) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << ", batch starting at " << start
                    << " (learning rate " << cfg.learning_rate << ")";
                throw TrainingError(msg.str());
            }
            VectorX<Scalar> grad = VectorX<Scalar>::Zero(net.parameter_count());
            net.backward(tape, grad_logits, grad);
            if (cfg.optimizer == Optimizer::adam) adam.step(params, grad);
            else sgd.step(params, grad);
            net.set_parameters(params);
        }
        EpochRecord record{epoch, full_loss(), std::nullopt};
        if (!std::isfinite(record.train_loss))
            throw TrainingError("non-finite training loss after epoch " + std::to_string(epoch));
        if (validate) {
            const double score = valid_score();
            record.valid_metric = score;
            if (score > best_score) {
                best_score = score;
                best = params;
                report.best_epoch = epoch;
                report.best_valid_metric = score;
                since_best = 0;
            } else if (++since_best >= cfg.patience) {
                report.history.push_back(record);
                break;
            }
        } else {
            best = params;
            report.best_epoch = epoch;
        }
        report.history.push_back(record);
    }
    net.set_parameters(best);
    return report;
}

}  // namespace engage
