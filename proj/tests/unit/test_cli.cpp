#include <doctest.h>

#include <fstream>
#include <sstream>

#include "engage/cli.hpp"
#include "engage/engagement.hpp"
#include "engage/report.hpp"
#include "../support/synthetic.hpp"

using namespace engage;
using engage::testing::SyntheticWorld;
using engage::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result engage_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "engage");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

void write_pairs(const fs::path& p, const std::vector<QueryResponsePair>& pairs) {
    std::ofstream out(p, std::ios::binary);
    write_pairs_jsonl(out, pairs);
}

const char* kConvai =
    R"({"dialogId": "d1", "users": [{"id": "h", "userType": "Human"}, {"id": "b", "userType": "Bot"}], "thread": [{"userId": "h", "text": "hi"}, {"userId": "b", "text": "hello"}, {"userId": "h", "text": "how are you"}], "evaluation": [{"userId": "h", "engagement": 4}]}
{"dialogId": "d2", "users": [{"id": "h", "userType": "Human"}, {"id": "b", "userType": "Bot"}], "thread": [{"userId": "h", "text": "yo"}, {"userId": "b", "text": "bye"}], "evaluation": [{"userId": "h", "engagement": 1}]}
{"dialogId": "d3", "thread": [{"text": "no"}, {"text": "rating"}], "evaluation": []}
)";

// A trained static-vector workspace shared by the pipeline tests.
struct Workspace {
    TempDir dir;
    SyntheticWorld world{12, 5};
    engage::testing::DomainSpec domain{"a", 0};
    fs::path vectors, train, valid, test;

    Workspace() {
        domain.positive_rate = 0.4;
        world.add_domain(domain);
        vectors = dir / "vectors.txt";
        world.backend(vectors);
        train = dir / "train.jsonl";
        valid = dir / "valid.jsonl";
        test = dir / "test.jsonl";
        write_pairs(train, world.sample(domain, 300, 1, "t"));
        write_pairs(valid, world.sample(domain, 80, 2, "v"));
        write_pairs(test, world.sample(domain, 60, 3, "e"));
    }

    std::vector<std::string> static_flags() const {
        return {"--backend", "static", "--vectors", vectors.string(), "--epochs", "8", "--seed", "3"};
    }

    Result train_model(const std::string& kind, const fs::path& out, std::vector<std::string> extra = {}) const {
        std::vector<std::string> args = {"train", kind, "--train", train.string(), "--valid", valid.string(), "--out",
                                         out.string()};
        for (const auto& f : static_flags()) args.push_back(f);
        args.insert(args.end(), extra.begin(), extra.end());
        return engage_cli(args);
    }
};

}  // namespace

TEST_CASE("usage errors exit 64 and help exits 0") {
    CHECK(engage_cli({}).code == cli::kExitUsage);
    CHECK(engage_cli({"frobnicate"}).code == cli::kExitUsage);
    CHECK(engage_cli({"ingest", "x.json", "--format", "reddit", "--out", "y"}).code == cli::kExitUsage);
    CHECK(engage_cli({"ingest", "x.json", "--format", "convai", "--out", "y", "--pooling", "median"}).code ==
          cli::kExitUsage);
    auto help = engage_cli({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("ingest") != std::string::npos);
    auto sub_help = engage_cli({"train", "--help"});
    CHECK(sub_help.code == 0);
    CHECK(sub_help.out.find("--train") != std::string::npos);
}

TEST_CASE("ingest prints score histograms and writes pairs, splits and run metadata") {
    TempDir dir;
    write_text(dir / "convai.json", kConvai);
    const auto out = (dir / "pairs.jsonl").string();
    auto r = engage_cli({"ingest", (dir / "convai.json").string(), "--format", "convai", "--out", out, "--split"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("score\t0\t1\t2\t3\t4\t5\n") != std::string::npos);
    CHECK(r.out.find("conversations\t0\t1\t0\t0\t1\t0\n") != std::string::npos);
    CHECK(r.out.find("pairs\t0\t1\t0\t0\t2\t0\n") != std::string::npos);
    CHECK(r.out.find("labels\t1\t2\n") != std::string::npos);
    CHECK(r.out.find("skipped_conversations\t1\n") != std::string::npos);
    CHECK(read_pairs_jsonl(fs::path(out)).size() == 3);
    std::size_t total = 0;
    for (const char* part : {"train", "valid", "test"})
        total += read_pairs_jsonl(dir / (std::string("pairs.") + part + ".jsonl")).size();
    CHECK(total == 3);

    auto config = nlohmann::json::parse(slurp(out + ".config.json"));
    CHECK(config["seed"] == 0);
    CHECK(config["pooling"] == "mean");
    auto manifest = nlohmann::json::parse(slurp(out + ".manifest.json"));
    CHECK(manifest["command"] == "ingest");
    CHECK(manifest["inputs"][0]["sha256"].get<std::string>().size() == 64);
    CHECK(manifest["outputs"].size() == 4);

    const auto first = slurp(out);
    REQUIRE(engage_cli({"ingest", (dir / "convai.json").string(), "--format", "convai", "--out", out, "--split"}).code == 0);
    CHECK(slurp(out) == first);
}

TEST_CASE("ingest edge cases") {
    TempDir dir;
    write_text(dir / "empty.json", "");
    auto r = engage_cli({"ingest", (dir / "empty.json").string(), "--format", "convai", "--out", (dir / "p.jsonl").string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("labels\t0\t0\n") != std::string::npos);

    auto missing = engage_cli({"ingest", (dir / "nope.json").string(), "--format", "convai", "--out", (dir / "p.jsonl").string()});
    CHECK(missing.code == cli::kExitInput);
    CHECK_FALSE(missing.err.empty());

    write_text(dir / "bad.json", "{\"dialogId\": 1, \"thread\": 5}\n");
    CHECK(engage_cli({"ingest", (dir / "bad.json").string(), "--format", "convai", "--out", (dir / "p.jsonl").string()}).code ==
          cli::kExitInput);

    write_text(dir / "dd.txt", "hi\nhello\nbye\n\nsecond\nreply\n");
    auto dd = engage_cli({"ingest", (dir / "dd.txt").string(), "--format", "dailydialog", "--out", (dir / "dd.jsonl").string()});
    CHECK(dd.code == 0);
    CHECK(dd.out.find("pairs\t3\n") != std::string::npos);
}

TEST_CASE("configuration files and flags") {
    TempDir dir;
    write_text(dir / "convai.json", kConvai);
    const auto corpus = (dir / "convai.json").string();
    const auto out = (dir / "p.jsonl").string();
    write_text(dir / "cfg.json", R"({"seed": 9, "pooling": "max"})");
    REQUIRE(engage_cli({"ingest", corpus, "--format", "convai", "--out", out, "--config", (dir / "cfg.json").string(),
                        "--seed", "11"}).code == 0);
    auto config = nlohmann::json::parse(slurp(out + ".config.json"));
    CHECK(config["seed"] == 11);
    CHECK(config["pooling"] == "max");

    write_text(dir / "unknown.json", R"({"seeed": 9})");
    CHECK(engage_cli({"ingest", corpus, "--format", "convai", "--out", out, "--config", (dir / "unknown.json").string()}).code ==
          cli::kExitInput);
    write_text(dir / "typed.json", R"({"seed": "nine"})");
    CHECK(engage_cli({"ingest", corpus, "--format", "convai", "--out", out, "--config", (dir / "typed.json").string()}).code ==
          cli::kExitInput);
    CHECK(engage_cli({"ingest", corpus, "--format", "convai", "--out", out, "--seed", "x"}).code == cli::kExitInput);

    auto defaults = cli::default_config();
    CHECK_THROWS_AS(cli::merge_config(defaults, nlohmann::json::array()), ValidationError);
    CHECK(cli::merge_config(defaults, {{"learning_rate", 0.5}})["learning_rate"] == 0.5);
}

TEST_CASE("train, score and evaluate end to end") {
    Workspace w;
    const auto eng = w.dir / "eng.ckpt";
    const auto rel = w.dir / "rel.ckpt";
    auto t = w.train_model("engagement", eng);
    REQUIRE_MESSAGE(t.code == 0, t.err);
    CHECK(t.out.find("best epoch") != std::string::npos);
    auto cfg = nlohmann::json::parse(slurp(eng.string() + ".config.json"));
    CHECK(cfg["learning_rate"] == 1e-3);
    REQUIRE(w.train_model("relevance", rel, {"--relevance-variant", "ranking"}).code == 0);

    const auto scored = w.dir / "scored.csv";
    auto s = engage_cli({"score", "--pairs", w.test.string(), "--engagement", eng.string(), "--relevance", rel.string(),
                         "--out", scored.string(), "--vectors", w.vectors.string(), "--jobs", "3"});
    REQUIRE_MESSAGE(s.code == 0, s.err);
    auto rows = read_scored_pairs(scored);
    REQUIRE(rows.size() == 60);
    for (const auto& row : rows) {
        CHECK(*row.combined == doctest::Approx((*row.relevance + *row.engagement) / 2));
        CHECK((*row.human == 0.0 || *row.human == 0.8));
    }

    const auto report = w.dir / "report.csv";
    auto e = engage_cli({"evaluate", "--scored", scored.string(), "--out", report.string(), "--checkpoint", eng.string(),
                         "--checkpoint", rel.string()});
    REQUIRE_MESSAGE(e.code == 0, e.err);
    CHECK(slurp(report).rfind("metric,pearson_r,pearson_p,spearman_rho,spearman_p,n\nrelevance,", 0) == 0);
    auto sig = nlohmann::json::parse(slurp(report.string() + ".significance.json"));
    CHECK(sig["method"] == "hittner2003");
    CHECK(sig["p_value"].get<double>() > 0);

    // A metric column equal to the human column correlates perfectly.
    for (auto& row : rows) row.human = row.engagement;
    write_scored_pairs(w.dir / "same.csv", rows);
    REQUIRE(engage_cli({"evaluate", "--scored", (w.dir / "same.csv").string(), "--out", report.string()}).code == 0);
    std::istringstream lines(slurp(report));
    std::string line;
    bool found = false;
    while (std::getline(lines, line))
        if (line.rfind("engagement,", 0) == 0) {
            found = true;
            CHECK(line.rfind("engagement,1,0,1,0,60", 0) == 0);
        }
    CHECK(found);

    auto plot = engage_cli({"plot", "--scored", scored.string(), "--metric", "engagement", "--out", (w.dir / "p.svg").string()});
    CHECK(plot.code == 0);
    CHECK(slurp(w.dir / "p.svg").find("<svg") == 0);
}

TEST_CASE("leakage guards exit 3") {
    Workspace w;
    const auto eng = w.dir / "eng.ckpt";
    REQUIRE(w.train_model("engagement", eng).code == 0);
    auto leak = engage_cli({"score", "--pairs", w.train.string(), "--engagement", eng.string(), "--out",
                            (w.dir / "s.csv").string(), "--vectors", w.vectors.string()});
    CHECK(leak.code == cli::kExitLeakage);
    CHECK(leak.err.find("leakage") != std::string::npos);

    auto train_pairs = read_pairs_jsonl(w.train);
    std::vector<ScoredPair> scored;
    for (std::size_t i = 0; i < 5; ++i)
        scored.push_back({train_pairs[i].pair_id, train_pairs[i].query, train_pairs[i].response, 0.5, 0.1 * i, 0.2, 0.1 * i});
    write_scored_pairs(w.dir / "leaky.csv", scored);
    CHECK(engage_cli({"evaluate", "--scored", (w.dir / "leaky.csv").string(), "--out", (w.dir / "r.csv").string(),
                      "--checkpoint", eng.string()}).code == cli::kExitLeakage);

    auto ft = engage_cli({"finetune", "--checkpoint", eng.string(), "--train", w.test.string(), "--exclude",
                          w.test.string(), "--out", (w.dir / "ft.ckpt").string(), "--vectors", w.vectors.string()});
    CHECK(ft.code == cli::kExitLeakage);
    auto ok = engage_cli({"finetune", "--checkpoint", eng.string(), "--train", w.valid.string(), "--exclude",
                          w.test.string(), "--out", (w.dir / "ft.ckpt").string(), "--vectors", w.vectors.string(),
                          "--epochs", "2"});
    CHECK_MESSAGE(ok.code == 0, ok.err);
    CHECK(load_engagement(w.dir / "ft.ckpt").trained_on.size() > load_engagement(eng).trained_on.size());
}

TEST_CASE("missing inputs exit 2") {
    Workspace w;
    CHECK(engage_cli({"score", "--pairs", w.test.string(), "--engagement", (w.dir / "nope.ckpt").string(), "--out",
                      (w.dir / "s.csv").string()}).code == cli::kExitInput);
    CHECK(engage_cli({"train", "engagement", "--train", (w.dir / "nope.jsonl").string(), "--out",
                      (w.dir / "m.ckpt").string()}).code == cli::kExitInput);
    CHECK(engage_cli({"train", "engagement", "--train", w.train.string(), "--out", (w.dir / "m.ckpt").string(),
                      "--backend", "static"}).code == cli::kExitInput);
    CHECK(engage_cli({"train", "birnn", "--train", w.train.string(), "--out", (w.dir / "m.ckpt").string()}).code ==
          cli::kExitInput);
    CHECK(engage_cli({"score", "--pairs", w.test.string(), "--out", (w.dir / "s.csv").string()}).code == cli::kExitInput);
}

TEST_CASE("reruns with the same seed are byte-identical") {
    Workspace w;
    for (const char* kind : {"engagement", "svm", "birnn"}) {
        const auto a = w.dir / (std::string(kind) + "-a.ckpt");
        const auto b = w.dir / (std::string(kind) + "-b.ckpt");
        std::vector<std::string> extra;
        if (std::string(kind) == "birnn") extra = {"--birnn-hidden", "4", "--birnn-head-hidden", "4"};
        auto ra = w.train_model(kind, a, extra);
        REQUIRE_MESSAGE(ra.code == 0, ra.err);
        REQUIRE(w.train_model(kind, b, extra).code == 0);
        CHECK(slurp(a) == slurp(b));
        CHECK(slurp(a.string() + ".config.json") == slurp(b.string() + ".config.json"));
    }
}

TEST_CASE("agreement, aggregation and aggregation plots") {
    TempDir dir;
    write_text(dir / "ann.csv", "pair_id,annotator_id,rating\np1,a,1\np2,a,2\np3,a,3\np1,b,1\np2,b,2\np3,b,3\n");
    auto a = engage_cli({"agreement", "--annotations", (dir / "ann.csv").string(), "--out", (dir / "agree.json").string()});
    REQUIRE(a.code == 0);
    CHECK(a.out.find("mean_pairwise_kappa 1.0000") != std::string::npos);
    CHECK(nlohmann::json::parse(slurp(dir / "agree.json"))["mean_pairwise_kappa"] == 1.0);

    write_text(dir / "agg.csv",
               "conversation_id,conversation_score,utterance_score\nc1,1,1\nc1,1,2\nc2,3,3\nc2,3,2\nc3,5,4\nc3,5,5\n");
    auto g = engage_cli({"aggregation", "--input", (dir / "agg.csv").string(), "--out", (dir / "agg.out.csv").string()});
    REQUIRE(g.code == 0);
    CHECK(slurp(dir / "agg.out.csv").rfind("method,pearson_r,pearson_p,n\n", 0) == 0);
    auto p = engage_cli({"plot", "--aggregation", (dir / "agg.csv").string(), "--out", (dir / "agg.svg").string()});
    REQUIRE(p.code == 0);
    const auto svg = slurp(dir / "agg.svg");
    CHECK(svg.find(">5<") != std::string::npos);
    CHECK(svg.find("class=\"trend\"") != std::string::npos);
    CHECK(engage_cli({"plot", "--out", (dir / "x.svg").string()}).code == cli::kExitInput);
}
