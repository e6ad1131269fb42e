#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "engage/stats.hpp"

namespace engage {

/// Shortest decimal text that reads back to the same double.
std::string format_number(double v);

// Scored pairs CSV: pair_id,query,response,relevance,engagement,combined,human.
// Absent scores are empty fields.
void write_scored_pairs(std::ostream& out, std::span<const ScoredPair> pairs);
void write_scored_pairs(const std::filesystem::path& path, std::span<const ScoredPair> pairs);
std::vector<ScoredPair> read_scored_pairs(std::istream& in);
std::vector<ScoredPair> read_scored_pairs(const std::filesystem::path& path);

// Report CSV: metric,pearson_r,pearson_p,spearman_rho,spearman_p,n.
void write_report_csv(std::ostream& out, std::span<const CorrelationReport> reports);

/// One utterance rating inside a rated conversation.
struct AggregationRecord {
    std::string conversation_id;
    double conversation_score = 0;
    double utterance_score = 0;
};

/// CSV with columns conversation_id,conversation_score,utterance_score.
std::vector<AggregationRecord> read_aggregation_csv(const std::filesystem::path& path);

struct AggregationStudyRow {
    Aggregation method = Aggregation::mean;
    Correlation pearson;
};

struct AggregationStudy {
    std::vector<std::string> conversations;
    Eigen::VectorXd conversation_scores;
    /// Columns: min, max, mean of each conversation's utterance scores.
    Eigen::MatrixXd aggregated;
    std::vector<AggregationStudyRow> rows;
};

/// Correlates each aggregate of utterance scores with the conversation score.
AggregationStudy run_aggregation_study(std::span<const AggregationRecord> records);

struct ScatterOptions {
    std::string title;
    std::string x_label = "human";
    std::string y_label = "metric";
    double x_min = 0, x_max = 1;
    double y_min = 0, y_max = 1;
    bool trend_line = true;
};

struct LineFit {
    double slope = 0;
    double intercept = 0;
};

/// Ordinary least squares fit of y on x.
LineFit least_squares(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y);

/// Scatter plot as a standalone SVG document.
std::string scatter_svg(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                        const ScatterOptions& options);

}  // namespace engage
