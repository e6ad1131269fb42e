#include <doctest.h>

#include <fstream>
#include <sstream>

#include "engage/error.hpp"
#include "engage/report.hpp"
#include "../support/synthetic.hpp"

using namespace engage;
using engage::testing::TempDir;

TEST_CASE("numbers print in their shortest round-trip form") {
    CHECK(format_number(0.5) == "0.5");
    CHECK(format_number(0.1) == "0.1");
    CHECK(format_number(1.0) == "1");
    CHECK(format_number(std::nan("")) == "nan");
    const double third = 1.0 / 3.0;
    CHECK(std::stod(format_number(third)) == third);
}

TEST_CASE("scored pairs round trip with absent columns") {
    std::vector<ScoredPair> pairs(2);
    pairs[0] = {"a:0", "hi, \"you\"", "multi\nline", 0.25, 0.75, 0.5, 0.8};
    pairs[1] = {"a:1", "q", "r", std::nullopt, 0.1, std::nullopt, std::nullopt};
    std::ostringstream out;
    write_scored_pairs(out, pairs);
    CHECK(out.str().rfind("pair_id,query,response,relevance,engagement,combined,human\n", 0) == 0);
    std::istringstream in(out.str());
    auto back = read_scored_pairs(in);
    REQUIRE(back.size() == 2);
    CHECK(back[0].query == pairs[0].query);
    CHECK(back[0].response == pairs[0].response);
    CHECK(*back[0].combined == 0.5);
    CHECK(*back[0].human == 0.8);
    CHECK_FALSE(back[1].relevance);
    CHECK(*back[1].engagement == 0.1);
    CHECK_FALSE(back[1].human);

    std::ostringstream again;
    write_scored_pairs(again, back);
    CHECK(again.str() == out.str());
}

TEST_CASE("scored pairs: optional columns are found by name") {
    std::istringstream in("pair_id,query,response,human,engagement\np,q,r,0.5,0.25\n");
    auto back = read_scored_pairs(in);
    REQUIRE(back.size() == 1);
    CHECK(*back[0].engagement == 0.25);
    CHECK(*back[0].human == 0.5);
    CHECK_FALSE(back[0].relevance);

    std::istringstream bad("pair_id,query,response,human\np,q,r,abc\n");
    CHECK_THROWS_AS(read_scored_pairs(bad), ParseError);
    std::istringstream short_row("pair_id,query,response,human\np,q\n");
    CHECK_THROWS_AS(read_scored_pairs(short_row), ParseError);
    std::istringstream empty("");
    CHECK_THROWS_AS(read_scored_pairs(empty), ParseError);
    CHECK_THROWS_AS(read_scored_pairs(std::filesystem::path("/nonexistent.csv")), LoadError);
}

TEST_CASE("report csv layout") {
    std::vector<CorrelationReport> reports = {{"combined", 0.5, 0.01, 0.25, 0.02, 600}};
    std::ostringstream out;
    write_report_csv(out, reports);
    CHECK(out.str() == "metric,pearson_r,pearson_p,spearman_rho,spearman_p,n\ncombined,0.5,0.01,0.25,0.02,600\n");
}

TEST_CASE("aggregation study") {
    TempDir dir;
    {
        std::ofstream out(dir / "agg.csv");
        out << "conversation_id,conversation_score,utterance_score\n"
            << "c1,1,0.5\nc1,1,1.5\n"
            << "c2,3,2\nc2,3,4\nc2,3,3\n"
            << "c3,5,4.5\nc3,5,5\n"
            << "c4,2,1\nc4,2,4\n";
    }
    auto recs = read_aggregation_csv(dir / "agg.csv");
    CHECK(recs.size() == 9);
    auto study = run_aggregation_study(recs);
    REQUIRE(study.conversations.size() == 4);
    REQUIRE(study.rows.size() == 3);
    CHECK(study.aggregated.cols() == 3);
    for (Eigen::Index i = 0; i < study.aggregated.rows(); ++i) {
        CHECK(study.aggregated(i, 0) <= study.aggregated(i, 2));
        CHECK(study.aggregated(i, 2) <= study.aggregated(i, 1));
    }
    for (const auto& row : study.rows) {
        const int col = row.method == Aggregation::min ? 0 : row.method == Aggregation::max ? 1 : 2;
        CHECK(row.pearson.coefficient ==
              doctest::Approx(pearson(study.aggregated.col(col), study.conversation_scores).coefficient));
    }

    std::vector<AggregationRecord> inconsistent = {{"c", 1, 1}, {"c", 2, 1}, {"d", 1, 1}, {"e", 1, 1}};
    CHECK_THROWS_AS(run_aggregation_study(inconsistent), ValidationError);
    std::vector<AggregationRecord> few = {{"c", 1, 1}, {"d", 2, 1}};
    CHECK_THROWS_AS(run_aggregation_study(few), ValidationError);
}

TEST_CASE("least squares and scatter plots") {
    Eigen::VectorXd x(4), y(4);
    x << 0, 1, 2, 3;
    y << 1, 3, 5, 7;
    auto fit = least_squares(x, y);
    CHECK(fit.slope == doctest::Approx(2));
    CHECK(fit.intercept == doctest::Approx(1));
    CHECK_THROWS_AS(least_squares(Eigen::VectorXd::Ones(3), y.head(3)), ValidationError);

    ScatterOptions opt;
    opt.title = "a < b & c";
    opt.x_max = 5;
    opt.y_max = 5;
    auto svg = scatter_svg(x, y, opt);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(svg.find("a &lt; b &amp; c") != std::string::npos);
    std::size_t circles = 0;
    for (auto pos = svg.find("<circle"); pos != std::string::npos; pos = svg.find("<circle", pos + 1)) ++circles;
    CHECK(circles == 4);
    CHECK(svg.find("class=\"trend\"") != std::string::npos);
    opt.trend_line = false;
    CHECK(scatter_svg(x, y, opt).find("class=\"trend\"") == std::string::npos);
    CHECK(scatter_svg(x, y, opt) == scatter_svg(x, y, opt));
    opt.x_max = 0;
    CHECK_THROWS_AS(scatter_svg(x, y, opt), ValidationError);
}
