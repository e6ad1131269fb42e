#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "engage/corpus.hpp"
#include "engage/error.hpp"

namespace engage {

enum class Aggregation { min, max, mean };

std::string to_string(Aggregation a);

template <typename Derived>
typename Derived::Scalar aggregate(const Eigen::DenseBase<Derived>& scores, Aggregation method) {
    if (scores.size() == 0) throw ValidationError("aggregate: empty score list");
    switch (method) {
        case Aggregation::min: return scores.minCoeff();
        case Aggregation::max: return scores.maxCoeff();
        case Aggregation::mean: break;
    }
    return std::clamp(scores.mean(), scores.minCoeff(), scores.maxCoeff());
}

/// Mean of a relevance and an engagement score, both in [0, 1].
double combine(double relevance, double engagement);

/// Half-up rounding to `digits` decimals, tolerant of binary representation
/// error (0.935 -> 0.94).
double round_half_up(double x, int digits = 2);

struct Correlation {
    double coefficient = 0;
    double p_value = 1;
};

/// Two-sided p-value of a t statistic.
double t_two_sided_p(double t, double degrees_of_freedom);
/// Two-sided p-value of a standard normal statistic, in (0, 1].
double normal_two_sided_p(double z);
/// p-value for a correlation coefficient via t = r sqrt((n-2)/(1-r^2)).
double correlation_p_value(double r, std::size_t n);

namespace detail {

template <typename DX, typename DY>
void check_paired(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y, const char* what) {
    if (x.size() != y.size()) throw ValidationError(std::string(what) + ": length mismatch");
    if (x.size() < 3) throw ValidationError(std::string(what) + ": need at least 3 observations");
}

}  // namespace detail

/// Sample Pearson correlation with a t-distribution p-value (n - 2 dof).
template <typename DX, typename DY>
Correlation pearson(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
    detail::check_paired(x, y, "pearson");
    const Eigen::ArrayXd dx = x.template cast<double>().array() - x.template cast<double>().mean();
    const Eigen::ArrayXd dy = y.template cast<double>().array() - y.template cast<double>().mean();
    const double sxx = dx.square().sum();
    const double syy = dy.square().sum();
    if (sxx <= 0 || syy <= 0) throw ValidationError("pearson: zero variance");
    const double r = std::clamp((dx * dy).sum() / std::sqrt(sxx * syy), -1.0, 1.0);
    return {r, correlation_p_value(r, static_cast<std::size_t>(x.size()))};
}

/// 1-based ranks; tied values share the average of their positions.
template <typename Derived>
Eigen::VectorXd midranks(const Eigen::MatrixBase<Derived>& x) {
    const auto n = x.size();
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), Eigen::Index(0));
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return x(a) < x(b); });
    Eigen::VectorXd ranks(n);
    for (Eigen::Index i = 0; i < n;) {
        Eigen::Index j = i;
        while (j + 1 < n && !(x(order[i]) < x(order[j + 1]))) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (Eigen::Index k = i; k <= j; ++k) ranks(order[k]) = avg;
        i = j + 1;
    }
    return ranks;
}

/// Pearson over mid-ranks; p-value from the same t approximation.
template <typename DX, typename DY>
Correlation spearman(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
    detail::check_paired(x, y, "spearman");
    return pearson(midranks(x), midranks(y));
}

/// Mean of per-class recalls; labels and predictions are 0/1.
double balanced_accuracy(const Eigen::Ref<const Eigen::VectorXi>& labels,
                         const Eigen::Ref<const Eigen::VectorXi>& predictions);

/// Probability that a random positive outscores a random negative, ties count
/// one half.
template <typename Derived>
double roc_auc(const Eigen::Ref<const Eigen::VectorXi>& labels, const Eigen::MatrixBase<Derived>& scores) {
    if (labels.size() != scores.size()) throw ValidationError("roc_auc: length mismatch");
    const Eigen::VectorXd ranks = midranks(scores.template cast<double>());
    double positive_rank_sum = 0;
    double n_pos = 0, n_neg = 0;
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
        if (labels(i) == 1) {
            positive_rank_sum += ranks(i);
            ++n_pos;
        } else if (labels(i) == 0) {
            ++n_neg;
        } else {
            throw ValidationError("roc_auc: labels must be 0 or 1");
        }
    }
    if (n_pos == 0 || n_neg == 0) throw ValidationError("roc_auc: undefined with a single class");
    return (positive_rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

/// Unweighted categorical Cohen's kappa between two raters on shared items.
double cohen_kappa(const Eigen::Ref<const Eigen::VectorXi>& a, const Eigen::Ref<const Eigen::VectorXi>& b);

struct AgreementReport {
    double mean_pairwise_kappa = 0;
    double mean_pairwise_pearson = 0;
    std::size_t annotators = 0;
    std::size_t items = 0;
    /// Annotator pairs contributing to each mean (kappa or Pearson may be
    /// undefined for a pair whose shared ratings are constant).
    std::size_t kappa_pairs = 0;
    std::size_t pearson_pairs = 0;
};

/// Averages kappa and Pearson over every annotator pair sharing >= 2 items.
AgreementReport mean_pairwise_agreement(std::span<const AnnotationRecord> records);

enum class DependentCorrelationMethod {
    /// Pooled correlation is the arithmetic mean of r_jk and r_jh.
    steiger1980,
    /// Pooled correlation is the back-transformed mean Fisher z.
    hittner2003,
};

std::string to_string(DependentCorrelationMethod m);
DependentCorrelationMethod parse_dependent_method(std::string_view name);

struct ZTest {
    double z = 0;
    double p_value = 1;
};

/// Compares r_jk and r_jh, two correlations sharing variable j, given the
/// correlation r_kh between the other two variables and the sample size.
ZTest dependent_correlation_test(double r_jk, double r_jh, double r_kh, std::size_t n,
                                 DependentCorrelationMethod method = DependentCorrelationMethod::hittner2003);

struct ScoredPair {
    std::string pair_id;
    std::string query;
    std::string response;
    std::optional<double> relevance;
    std::optional<double> engagement;
    std::optional<double> combined;
    std::optional<double> human;
};

enum class MetricColumn { relevance, engagement, combined, human };

std::string to_string(MetricColumn m);
MetricColumn parse_metric(std::string_view name);
std::optional<double> column_value(const ScoredPair& p, MetricColumn m);

struct CorrelationReport {
    std::string metric;
    double pearson_r = 0;
    double pearson_p = 1;
    double spearman_rho = 0;
    double spearman_p = 1;
    std::size_t n = 0;
};

/// Pearson and Spearman of one metric column against the human column.
CorrelationReport build_report(std::span<const ScoredPair> scored, MetricColumn metric);

/// Dependent-correlation test of metric `a` against metric `b`, both compared
/// with the human column.
ZTest compare_metrics(std::span<const ScoredPair> scored, MetricColumn a, MetricColumn b,
                      DependentCorrelationMethod method = DependentCorrelationMethod::hittner2003);

}  // namespace engage
