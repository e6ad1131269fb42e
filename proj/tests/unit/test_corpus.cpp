#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "engage/corpus.hpp"
#include "engage/error.hpp"
#include "../support/synthetic.hpp"

using namespace engage;

namespace {

const char* kConvai = R"({"dialogId": "d1", "users": [{"id": "h", "userType": "Human"}, {"id": "b", "userType": "Bot"}], "thread": [{"userId": "h", "text": "hi"}, {"userId": "b", "text": "hello there"}, {"userId": "h", "text": "  "}, {"userId": "h", "text": "how are you"}], "evaluation": [{"userId": "b", "engagement": 1}, {"userId": "h", "engagement": 4}]}
{"dialogId": "d2", "users": [{"id": "x", "userType": "Human"}, {"id": "y", "userType": "Human"}], "thread": [{"userId": "x", "text": "a"}, {"userId": "y", "text": "b"}], "evaluation": [{"userId": "x", "engagement": 2}, {"userId": "y", "engagement": 3}]}
{"dialogId": "d3", "users": [], "thread": [{"text": "unrated"}, {"text": "dialogue"}], "evaluation": []}
)";

}  // namespace

TEST_CASE("convai parsing picks the human rating and averages human-human ratings") {
    std::istringstream in(kConvai);
    auto convs = parse_convai(in);
    REQUIRE(convs.size() == 3);
    CHECK(convs[0].id == "d1");
    CHECK(convs[0].source == DialogueSource::human_bot);
    CHECK(convs[0].engagement_score == doctest::Approx(4.0));
    CHECK(convs[1].source == DialogueSource::human_human);
    CHECK(convs[1].engagement_score == doctest::Approx(2.5));
    CHECK_FALSE(convs[2].engagement_score.has_value());
}

TEST_CASE("convai array dumps parse like line-delimited ones") {
    std::istringstream lines(kConvai);
    auto a = parse_convai(lines);
    std::string text = kConvai;
    std::string array = "[";
    std::istringstream split(text);
    std::string line;
    bool first = true;
    while (std::getline(split, line)) {
        if (line.empty()) continue;
        array += (first ? "" : ",") + line;
        first = false;
    }
    array += "]";
    std::istringstream arr(array);
    auto b = parse_convai(arr);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].engagement_score == b[i].engagement_score);
}

TEST_CASE("convai errors name the record") {
    std::istringstream bad(R"({"dialogId": "broken", "thread": 3})");
    try {
        parse_convai(bad);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("broken") != std::string::npos);
    }
    std::istringstream range(R"({"dialogId": "r", "thread": [], "evaluation": [{"engagement": 7}]})");
    CHECK_THROWS_AS(parse_convai(range), ValidationError);
    std::istringstream junk("{not json");
    CHECK_THROWS_AS(parse_convai(junk), ParseError);
    CHECK_THROWS_AS(parse_convai(std::filesystem::path("/nonexistent/convai.json")), LoadError);
}

TEST_CASE("pairing is a sliding window over non-blank turns") {
    Conversation c;
    c.id = "c";
    c.engagement_score = 3.0;
    for (const char* t : {"a", " ", "b", "c"}) c.utterances.push_back({t, Speaker::unknown, c.utterances.size()});
    auto pairs = pair_adjacent_turns(c);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0].query == "a");
    CHECK(pairs[0].response == "b");
    CHECK(pairs[1].query == "b");
    CHECK(pairs[1].response == "c");
    CHECK(pairs[1].pair_id == "c:1");
    CHECK(*pairs[1].origin_conversation == "c");
    CHECK(*pairs[0].raw_score == 3.0);

    Conversation single;
    single.utterances.push_back({"only", Speaker::unknown, 0});
    CHECK(pair_adjacent_turns(single).empty());
}

TEST_CASE("propagation skips unscored conversations") {
    std::istringstream in(kConvai);
    auto convs = parse_convai(in);
    auto r = propagate_scores(convs);
    CHECK(r.skipped == 1);
    CHECK(r.pairs.size() == 3);
    for (const auto& p : r.pairs) CHECK(p.raw_score.has_value());
}

TEST_CASE("binarize threshold") {
    CHECK(binarize(0) == 0);
    CHECK(binarize(2) == 0);
    CHECK(binarize(2.5) == 1);
    CHECK(binarize(5) == 1);
    CHECK_THROWS_AS(binarize(-0.1), ValidationError);
    CHECK_THROWS_AS(binarize(5.1), ValidationError);
}

TEST_CASE("binarized totals of a histogram") {
    ScoreHistogram h = {1, 2, 3, 4, 5, 6};
    auto t = binarized_totals(h);
    CHECK(t[0] == 6);
    CHECK(t[1] == 15);
}

TEST_CASE("splits are disjoint, complete, sized by ratio and seeded") {
    std::vector<QueryResponsePair> pairs(101);
    for (std::size_t i = 0; i < pairs.size(); ++i) pairs[i].pair_id = std::to_string(i);
    auto s = make_splits(pairs, {}, 7);
    CHECK(s.train.size() == 61);
    CHECK(s.valid.size() == 20);
    CHECK(s.test.size() == 20);
    std::set<std::string> ids;
    for (auto* part : {&s.train, &s.valid, &s.test})
        for (const auto& p : *part) ids.insert(p.pair_id);
    CHECK(ids.size() == 101);
    auto again = make_splits(pairs, {}, 7);
    for (std::size_t i = 0; i < s.train.size(); ++i) CHECK(s.train[i].pair_id == again.train[i].pair_id);
    auto other = make_splits(pairs, {}, 8);
    bool differs = false;
    for (std::size_t i = 0; i < s.train.size(); ++i) differs |= s.train[i].pair_id != other.train[i].pair_id;
    CHECK(differs);
    CHECK_THROWS_AS(make_splits(std::vector<QueryResponsePair>(2), {}, 0), ValidationError);
    CHECK_THROWS_AS(make_splits(pairs, {0.5, 0.5, 0.5}, 0), ValidationError);
}

TEST_CASE("daily dialog: blank-line and __eou__ layouts") {
    std::istringstream in("hello\nhi there\nbye\n\nsecond one\nreply\n");
    auto pairs = parse_dailydialog(in, "dd");
    REQUIRE(pairs.size() == 3);
    CHECK(pairs[0].pair_id == "dd:0:0");
    CHECK(pairs[2].pair_id == "dd:1:0");
    CHECK(pairs[2].response == "reply");
    CHECK_FALSE(pairs[0].raw_score.has_value());

    std::istringstream eou("Say , Jim . __eou__ Sure . __eou__ Great ! __eou__\nA . __eou__ B . __eou__\n");
    auto p2 = parse_dailydialog(eou, "dd");
    REQUIRE(p2.size() == 3);
    CHECK(p2[0].query == "Say , Jim .");
    CHECK(p2[1].response == "Great !");
    CHECK(p2[2].pair_id == "dd:1:0");
}

TEST_CASE("histograms bin by rounded score") {
    std::vector<QueryResponsePair> pairs(4);
    pairs[0].raw_score = 0;
    pairs[1].raw_score = 2.5;
    pairs[2].raw_score = 4.4;
    auto h = pair_histogram(pairs);
    CHECK(h == ScoreHistogram{1, 0, 0, 1, 1, 0});
}

TEST_CASE("pairs JSONL round trip and validation") {
    std::vector<QueryResponsePair> pairs(2);
    pairs[0] = {"a:0", "q \"quoted\"", "r\nline", 4.0, 1, std::string("a")};
    pairs[1] = {"b:0", "q2", "r2", std::nullopt, std::nullopt, std::nullopt};
    std::ostringstream out;
    write_pairs_jsonl(out, pairs);
    std::istringstream in(out.str());
    auto back = read_pairs_jsonl(in);
    REQUIRE(back.size() == 2);
    CHECK(back[0].query == pairs[0].query);
    CHECK(back[0].response == pairs[0].response);
    CHECK(*back[0].label == 1);
    CHECK(*back[0].origin_conversation == "a");
    CHECK_FALSE(back[1].label.has_value());

    std::istringstream bad_label(R"({"pair_id": "x", "query": "q", "response": "r", "label": 3})");
    CHECK_THROWS_AS(read_pairs_jsonl(bad_label), ValidationError);
    std::istringstream mismatch(R"({"pair_id": "x", "query": "q", "response": "r", "raw_score": 5, "label": 0})");
    CHECK_THROWS_AS(read_pairs_jsonl(mismatch), ValidationError);
    std::istringstream missing(R"({"pair_id": "x", "query": "q"})");
    CHECK_THROWS_AS(read_pairs_jsonl(missing), ParseError);
}

TEST_CASE("annotations: parsing, aggregation and normalisation") {
    std::istringstream in("pair_id,annotator_id,rating\np1,a,4\np1,b,5\np2,a,1\n");
    auto recs = read_annotations_csv(in);
    REQUIRE(recs.size() == 3);
    auto means = aggregate_annotations(recs);
    CHECK(means["p1"] == doctest::Approx(4.5));
    CHECK(mean_rating(recs, "p2") == doctest::Approx(1.0));
    CHECK_THROWS_AS(mean_rating(recs, "p3"), ValidationError);
    CHECK(normalize_rating(4.5, 1, 5) == doctest::Approx(0.875));
    CHECK(normalize_rating(0, 0, 5) == 0.0);
    CHECK_THROWS_AS(normalize_rating(6, 0, 5), ValidationError);

    std::istringstream bad("pair_id,annotator_id,rating\np1,a,9\n");
    CHECK_THROWS_AS(read_annotations_csv(bad), ValidationError);
    std::istringstream nonint("pair_id,annotator_id,rating\np1,a,x\n");
    CHECK_THROWS_AS(read_annotations_csv(nonint), ParseError);
}
