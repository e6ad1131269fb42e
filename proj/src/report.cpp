#include "engage/report.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "engage/csv.hpp"

namespace engage {

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

std::string optional_field(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

std::optional<double> parse_optional(const std::string& text, const std::string& what, std::size_t line) {
    if (text.empty()) return std::nullopt;
    double v = 0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
        throw ParseError("line " + std::to_string(line) + ": " + what + " '" + text + "' is not a number");
    return v;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open " + path.string());
    return in;
}

}  // namespace

void write_scored_pairs(std::ostream& out, std::span<const ScoredPair> pairs) {
    csv::write_record(out, {"pair_id", "query", "response", "relevance", "engagement", "combined", "human"});
    for (const auto& p : pairs)
        csv::write_record(out, {p.pair_id, p.query, p.response, optional_field(p.relevance),
                                optional_field(p.engagement), optional_field(p.combined), optional_field(p.human)});
}

void write_scored_pairs(const std::filesystem::path& path, std::span<const ScoredPair> pairs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write " + path.string());
    write_scored_pairs(out, pairs);
}

std::vector<ScoredPair> read_scored_pairs(std::istream& in) {
    auto header = csv::read_record(in);
    if (!header) throw ParseError("scored pairs: missing header");
    const std::size_t id = csv::column(*header, "pair_id");
    const std::size_t q = csv::column(*header, "query");
    const std::size_t r = csv::column(*header, "response");
    std::map<std::string, std::size_t> optional_columns;
    for (const char* name : {"relevance", "engagement", "combined", "human"})
        for (std::size_t k = 0; k < header->size(); ++k)
            if ((*header)[k] == name) optional_columns[name] = k;

    std::vector<ScoredPair> out;
    std::size_t line = 1;
    while (auto rec = csv::read_record(in)) {
        ++line;
        if (rec->size() == 1 && (*rec)[0].empty()) continue;
        if (rec->size() != header->size())
            throw ParseError("scored pairs line " + std::to_string(line) + ": expected " +
                             std::to_string(header->size()) + " fields, found " + std::to_string(rec->size()));
        ScoredPair p;
        p.pair_id = (*rec)[id];
        p.query = (*rec)[q];
        p.response = (*rec)[r];
        auto get = [&](const char* name) -> std::optional<double> {
            auto it = optional_columns.find(name);
            return it == optional_columns.end() ? std::nullopt : parse_optional((*rec)[it->second], name, line);
        };
        p.relevance = get("relevance");
        p.engagement = get("engagement");
        p.combined = get("combined");
        p.human = get("human");
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<ScoredPair> read_scored_pairs(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_scored_pairs(in);
}

void write_report_csv(std::ostream& out, std::span<const CorrelationReport> reports) {
    csv::write_record(out, {"metric", "pearson_r", "pearson_p", "spearman_rho", "spearman_p", "n"});
    for (const auto& r : reports)
        csv::write_record(out, {r.metric, format_number(r.pearson_r), format_number(r.pearson_p),
                                format_number(r.spearman_rho), format_number(r.spearman_p), std::to_string(r.n)});
}

std::vector<AggregationRecord> read_aggregation_csv(const std::filesystem::path& path) {
    auto in = open_input(path);
    auto header = csv::read_record(in);
    if (!header) throw ParseError(path.string() + ": missing header");
    const std::size_t c = csv::column(*header, "conversation_id");
    const std::size_t cs = csv::column(*header, "conversation_score");
    const std::size_t us = csv::column(*header, "utterance_score");
    std::vector<AggregationRecord> out;
    std::size_t line = 1;
    while (auto rec = csv::read_record(in)) {
        ++line;
        if (rec->size() == 1 && (*rec)[0].empty()) continue;
        if (rec->size() != header->size())
            throw ParseError(path.string() + " line " + std::to_string(line) + ": wrong field count");
        auto conv = parse_optional((*rec)[cs], "conversation_score", line);
        auto utt = parse_optional((*rec)[us], "utterance_score", line);
        if (!conv || !utt) throw ParseError(path.string() + " line " + std::to_string(line) + ": missing score");
        out.push_back({(*rec)[c], *conv, *utt});
    }
    return out;
}

AggregationStudy run_aggregation_study(std::span<const AggregationRecord> records) {
    std::map<std::string, std::pair<double, std::vector<double>>> by_conversation;
    for (const auto& r : records) {
        auto [it, inserted] = by_conversation.try_emplace(r.conversation_id, r.conversation_score, std::vector<double>{});
        if (!inserted && it->second.first != r.conversation_score)
            throw ValidationError("conversation '" + r.conversation_id + "' has inconsistent conversation scores");
        it->second.second.push_back(r.utterance_score);
    }
    if (by_conversation.size() < 3) throw ValidationError("aggregation study needs at least 3 conversations");

    AggregationStudy study;
    const auto n = static_cast<Eigen::Index>(by_conversation.size());
    study.conversation_scores.resize(n);
    study.aggregated.resize(n, 3);
    Eigen::Index i = 0;
    for (const auto& [id, entry] : by_conversation) {
        study.conversations.push_back(id);
        study.conversation_scores(i) = entry.first;
        const Eigen::Map<const Eigen::VectorXd> scores(entry.second.data(),
                                                       static_cast<Eigen::Index>(entry.second.size()));
        study.aggregated(i, 0) = aggregate(scores, Aggregation::min);
        study.aggregated(i, 1) = aggregate(scores, Aggregation::max);
        study.aggregated(i, 2) = aggregate(scores, Aggregation::mean);
        ++i;
    }
    const Aggregation methods[] = {Aggregation::min, Aggregation::max, Aggregation::mean};
    for (int k = 0; k < 3; ++k)
        study.rows.push_back({methods[k], pearson(study.aggregated.col(k), study.conversation_scores)});
    return study;
}

LineFit least_squares(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ValidationError("least_squares: need at least 2 paired points");
    const Eigen::ArrayXd dx = x.array() - x.mean();
    const double sxx = dx.square().sum();
    if (sxx <= 0) throw ValidationError("least_squares: x has zero variance");
    LineFit fit;
    fit.slope = (dx * (y.array() - y.mean())).sum() / sxx;
    fit.intercept = y.mean() - fit.slope * x.mean();
    return fit;
}

namespace {

std::string fixed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string escape_xml(std::string_view text) {
    std::string out;
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::string scatter_svg(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                        const ScatterOptions& o) {
    if (x.size() != y.size()) throw ValidationError("scatter_svg: x and y differ in length");
    if (!(o.x_max > o.x_min) || !(o.y_max > o.y_min)) throw ValidationError("scatter_svg: empty axis range");
    constexpr double width = 480, height = 480, left = 60, right = 20, top = 40, bottom = 60;
    const double plot_w = width - left - right, plot_h = height - top - bottom;
    auto px = [&](double v) { return left + (v - o.x_min) / (o.x_max - o.x_min) * plot_w; };
    auto py = [&](double v) { return top + plot_h - (v - o.y_min) / (o.y_max - o.y_min) * plot_h; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!o.title.empty())
        svg << "<text x=\"" << fixed(width / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
            << escape_xml(o.title) << "</text>\n";
    svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << plot_w << "\" height=\"" << plot_h
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    constexpr int ticks = 5;
    for (int k = 0; k <= ticks; ++k) {
        const double xv = o.x_min + (o.x_max - o.x_min) * k / ticks;
        const double yv = o.y_min + (o.y_max - o.y_min) * k / ticks;
        svg << "<line x1=\"" << fixed(px(xv)) << "\" y1=\"" << fixed(top + plot_h) << "\" x2=\"" << fixed(px(xv))
            << "\" y2=\"" << fixed(top + plot_h + 5) << "\" stroke=\"black\"/>"
            << "<text x=\"" << fixed(px(xv)) << "\" y=\"" << fixed(top + plot_h + 18)
            << "\" text-anchor=\"middle\">" << format_number(xv) << "</text>\n";
        svg << "<line x1=\"" << fixed(left - 5) << "\" y1=\"" << fixed(py(yv)) << "\" x2=\"" << fixed(left)
            << "\" y2=\"" << fixed(py(yv)) << "\" stroke=\"black\"/>"
            << "<text x=\"" << fixed(left - 8) << "\" y=\"" << fixed(py(yv) + 4) << "\" text-anchor=\"end\">"
            << format_number(yv) << "</text>\n";
    }
    svg << "<text x=\"" << fixed(left + plot_w / 2) << "\" y=\"" << fixed(height - 15)
        << "\" text-anchor=\"middle\">" << escape_xml(o.x_label) << "</text>\n";
    svg << "<text x=\"15\" y=\"" << fixed(top + plot_h / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
        << fixed(top + plot_h / 2) << ")\">" << escape_xml(o.y_label) << "</text>\n";
    svg << "<g fill=\"steelblue\" fill-opacity=\"0.6\">\n";
    for (Eigen::Index i = 0; i < x.size(); ++i)
        svg << "<circle cx=\"" << fixed(px(x(i))) << "\" cy=\"" << fixed(py(y(i))) << "\" r=\"3\"/>\n";
    svg << "</g>\n";
    if (o.trend_line && x.size() >= 2 && (x.array() != x(0)).any()) {
        const LineFit fit = least_squares(x, y);
        // Clip the fitted line to the plot box.
        double x0 = o.x_min, x1 = o.x_max;
        if (fit.slope != 0) {
            const double xa = (o.y_min - fit.intercept) / fit.slope;
            const double xb = (o.y_max - fit.intercept) / fit.slope;
            x0 = std::max(x0, std::min(xa, xb));
            x1 = std::min(x1, std::max(xa, xb));
        }
        if (x1 > x0)
            svg << "<line class=\"trend\" x1=\"" << fixed(px(x0)) << "\" y1=\"" << fixed(py(fit.slope * x0 + fit.intercept))
                << "\" x2=\"" << fixed(px(x1)) << "\" y2=\"" << fixed(py(fit.slope * x1 + fit.intercept))
                << "\" stroke=\"crimson\" stroke-width=\"2\"/>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace engage
