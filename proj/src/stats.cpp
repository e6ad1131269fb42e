#include "engage/stats.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <limits>
#include <map>
#include <set>

namespace engage {

std::string to_string(Aggregation a) {
    switch (a) {
        case Aggregation::min: return "min";
        case Aggregation::max: return "max";
        case Aggregation::mean: return "mean";
    }
    return "mean";
}

double combine(double relevance, double engagement) {
    auto check = [](double v, const char* what) {
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(std::string("combine: ") + what + " outside [0, 1]");
    };
    check(relevance, "relevance");
    check(engagement, "engagement");
    return 0.5 * (relevance + engagement);
}

double round_half_up(double x, int digits) {
    const double scale = std::pow(10.0, digits);
    const double scaled = x * scale;
    // Values within a few ulps of the .5 boundary are treated as on it.
    const double nudge = 1e-9 * std::max(1.0, std::abs(scaled));
    return std::floor(scaled + 0.5 + nudge) / scale;
}

double t_two_sided_p(double t, double degrees_of_freedom) {
    if (!std::isfinite(t)) return 0.0;
    boost::math::students_t dist(degrees_of_freedom);
    return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

double normal_two_sided_p(double z) {
    const double p = std::erfc(std::abs(z) / std::sqrt(2.0));
    return std::clamp(p, std::numeric_limits<double>::denorm_min(), 1.0);
}

double correlation_p_value(double r, std::size_t n) {
    if (n < 3) throw ValidationError("correlation p-value needs n >= 3");
    if (std::abs(r) >= 1.0) return 0.0;
    const double dof = static_cast<double>(n) - 2.0;
    return t_two_sided_p(r * std::sqrt(dof / (1.0 - r * r)), dof);
}

double balanced_accuracy(const Eigen::Ref<const Eigen::VectorXi>& labels,
                         const Eigen::Ref<const Eigen::VectorXi>& predictions) {
    if (labels.size() != predictions.size()) throw ValidationError("balanced_accuracy: length mismatch");
    double hits[2] = {0, 0};
    double totals[2] = {0, 0};
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
        const int y = labels(i);
        if (y != 0 && y != 1) throw ValidationError("balanced_accuracy: labels must be 0 or 1");
        totals[y] += 1;
        if (predictions(i) == y) hits[y] += 1;
    }
    if (totals[0] == 0 || totals[1] == 0) throw ValidationError("balanced_accuracy: both classes must be present");
    return 0.5 * (hits[0] / totals[0] + hits[1] / totals[1]);
}

double cohen_kappa(const Eigen::Ref<const Eigen::VectorXi>& a, const Eigen::Ref<const Eigen::VectorXi>& b) {
    if (a.size() != b.size()) throw ValidationError("cohen_kappa: length mismatch");
    if (a.size() == 0) throw ValidationError("cohen_kappa: no shared items");
    const double n = static_cast<double>(a.size());
    std::map<int, std::pair<double, double>> marginals;
    double agree = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        marginals[a(i)].first += 1;
        marginals[b(i)].second += 1;
        if (a(i) == b(i)) agree += 1;
    }
    const double p_o = agree / n;
    double p_e = 0;
    for (const auto& [category, counts] : marginals) p_e += (counts.first / n) * (counts.second / n);
    if (p_e >= 1.0) throw ValidationError("cohen_kappa: undefined when expected agreement is 1");
    return (p_o - p_e) / (1.0 - p_e);
}

AgreementReport mean_pairwise_agreement(std::span<const AnnotationRecord> records) {
    std::map<std::string, std::map<std::string, int>> by_annotator;
    std::set<std::string> items;
    for (const auto& r : records) {
        by_annotator[r.annotator_id][r.pair_id] = r.rating;
        items.insert(r.pair_id);
    }
    AgreementReport report;
    report.annotators = by_annotator.size();
    report.items = items.size();
    double kappa_sum = 0, pearson_sum = 0;
    for (auto a = by_annotator.begin(); a != by_annotator.end(); ++a) {
        for (auto b = std::next(a); b != by_annotator.end(); ++b) {
            std::vector<int> ra, rb;
            for (const auto& [item, rating] : a->second) {
                auto it = b->second.find(item);
                if (it == b->second.end()) continue;
                ra.push_back(rating);
                rb.push_back(it->second);
            }
            if (ra.size() < 2) continue;
            const Eigen::Map<const Eigen::VectorXi> va(ra.data(), static_cast<Eigen::Index>(ra.size()));
            const Eigen::Map<const Eigen::VectorXi> vb(rb.data(), static_cast<Eigen::Index>(rb.size()));
            try {
                kappa_sum += cohen_kappa(va, vb);
                ++report.kappa_pairs;
            } catch (const ValidationError&) {
            }
            // Pearson needs three points and variation on both sides.
            if (ra.size() >= 3) {
                try {
                    pearson_sum += pearson(va.cast<double>(), vb.cast<double>()).coefficient;
                    ++report.pearson_pairs;
                } catch (const ValidationError&) {
                }
            }
        }
    }
    if (report.kappa_pairs == 0) throw ValidationError("mean_pairwise_agreement: no annotator pair shares >= 2 items");
    report.mean_pairwise_kappa = kappa_sum / static_cast<double>(report.kappa_pairs);
    report.mean_pairwise_pearson =
        report.pearson_pairs ? pearson_sum / static_cast<double>(report.pearson_pairs) : std::nan("");
    return report;
}

std::string to_string(DependentCorrelationMethod m) {
    return m == DependentCorrelationMethod::steiger1980 ? "steiger1980" : "hittner2003";
}

DependentCorrelationMethod parse_dependent_method(std::string_view name) {
    if (name == "steiger1980") return DependentCorrelationMethod::steiger1980;
    if (name == "hittner2003") return DependentCorrelationMethod::hittner2003;
    throw ValidationError("unknown dependent-correlation method '" + std::string(name) + "'");
}

ZTest dependent_correlation_test(double r_jk, double r_jh, double r_kh, std::size_t n,
                                 DependentCorrelationMethod method) {
    for (double r : {r_jk, r_jh, r_kh})
        if (!(std::abs(r) < 1.0)) throw ValidationError("dependent_correlation_test: correlations must lie in (-1, 1)");
    if (n < 4) throw ValidationError("dependent_correlation_test: need n >= 4");
    const double z_jk = std::atanh(r_jk);
    const double z_jh = std::atanh(r_jh);
    const double r_mean = method == DependentCorrelationMethod::steiger1980 ? 0.5 * (r_jk + r_jh)
                                                                            : std::tanh(0.5 * (z_jk + z_jh));
    const double r2 = r_mean * r_mean;
    // Asymptotic covariance of the two Fisher z values, scaled by (n - 3).
    const double psi = r_kh * (1 - 2 * r2) - 0.5 * r2 * (1 - 2 * r2 - r_kh * r_kh);
    const double c = psi / ((1 - r2) * (1 - r2));
    if (!(c < 1.0)) throw ValidationError("dependent_correlation_test: degenerate covariance");
    ZTest out;
    out.z = (z_jk - z_jh) * std::sqrt(static_cast<double>(n) - 3.0) / std::sqrt(2.0 - 2.0 * c);
    out.p_value = normal_two_sided_p(out.z);
    return out;
}

std::string to_string(MetricColumn m) {
    switch (m) {
        case MetricColumn::relevance: return "relevance";
        case MetricColumn::engagement: return "engagement";
        case MetricColumn::combined: return "combined";
        case MetricColumn::human: return "human";
    }
    return "human";
}

MetricColumn parse_metric(std::string_view name) {
    if (name == "relevance") return MetricColumn::relevance;
    if (name == "engagement") return MetricColumn::engagement;
    if (name == "combined") return MetricColumn::combined;
    if (name == "human") return MetricColumn::human;
    throw ValidationError("unknown metric column '" + std::string(name) + "'");
}

std::optional<double> column_value(const ScoredPair& p, MetricColumn m) {
    switch (m) {
        case MetricColumn::relevance: return p.relevance;
        case MetricColumn::engagement: return p.engagement;
        case MetricColumn::combined: return p.combined;
        case MetricColumn::human: return p.human;
    }
    return std::nullopt;
}

namespace {

std::pair<Eigen::VectorXd, Eigen::VectorXd> metric_and_human(std::span<const ScoredPair> scored, MetricColumn metric) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(scored.size()));
    Eigen::VectorXd y(x.size());
    for (std::size_t i = 0; i < scored.size(); ++i) {
        auto m = column_value(scored[i], metric);
        if (!m) throw ValidationError("pair '" + scored[i].pair_id + "' has no " + to_string(metric) + " score");
        if (!scored[i].human) throw ValidationError("pair '" + scored[i].pair_id + "' has no human score");
        x(static_cast<Eigen::Index>(i)) = *m;
        y(static_cast<Eigen::Index>(i)) = *scored[i].human;
    }
    return {x, y};
}

}  // namespace

CorrelationReport build_report(std::span<const ScoredPair> scored, MetricColumn metric) {
    if (scored.size() < 3) throw ValidationError("build_report: need at least 3 scored pairs");
    auto [x, human] = metric_and_human(scored, metric);
    CorrelationReport report;
    report.metric = to_string(metric);
    report.n = scored.size();
    auto p = pearson(x, human);
    auto s = spearman(x, human);
    report.pearson_r = p.coefficient;
    report.pearson_p = p.p_value;
    report.spearman_rho = s.coefficient;
    report.spearman_p = s.p_value;
    return report;
}

ZTest compare_metrics(std::span<const ScoredPair> scored, MetricColumn a, MetricColumn b,
                      DependentCorrelationMethod method) {
    if (scored.size() < 4) throw ValidationError("compare_metrics: need at least 4 scored pairs");
    auto [xa, human] = metric_and_human(scored, a);
    auto [xb, human_b] = metric_and_human(scored, b);
    const double r_ja = pearson(xa, human).coefficient;
    const double r_jb = pearson(xb, human).coefficient;
    const double r_ab = pearson(xa, xb).coefficient;
    return dependent_correlation_test(r_ja, r_jb, r_ab, scored.size(), method);
}

}  // namespace engage
