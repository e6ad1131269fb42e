#include "engage/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "engage/birnn.hpp"
#include "engage/corpus.hpp"
#include "engage/csv.hpp"
#include "engage/engagement.hpp"
#include "engage/relevance.hpp"
#include "engage/report.hpp"
#include "engage/stats.hpp"
#include "engage/svm.hpp"
#include "engage/text.hpp"

namespace engage::cli {

namespace fs = std::filesystem;
using nlohmann::json;

json default_config() {
    return {
        {"seed", 0},
        {"jobs", 1},
        {"backend", "contextual"},
        {"pooling", "mean"},
        {"vectors", ""},
        {"static_dimension", 0},
        {"contextual_model", "bert-base-uncased"},
        {"contextual_dimension", kContextualDimension},
        {"contextual_command", ""},
        {"learning_rate", nullptr},
        {"epochs", 50},
        {"batch_size", 32},
        {"patience", 5},
        {"optimizer", "adam"},
        {"weighted_loss", true},
        {"train_ratio", 0.6},
        {"valid_ratio", 0.2},
        {"test_ratio", 0.2},
        {"relevance_variant", "cross_entropy"},
        {"negative_ratio", 1},
        {"margin", 0.5},
        {"svm_c", 0.1},
        {"svm_min_count", 2},
        {"birnn_hidden", 128},
        {"birnn_head_hidden", 64},
        {"birnn_dropout", 0.8},
        {"birnn_learning_rate", 1e-5},
        {"dependent_method", "hittner2003"},
        {"rating_min", 1.0},
        {"rating_max", 5.0},
    };
}

namespace {

bool compatible(const json& slot, const json& value) {
    if (slot.is_null()) return value.is_null() || value.is_number();
    if (slot.is_boolean()) return value.is_boolean();
    if (slot.is_number_integer()) return value.is_number_integer();
    if (slot.is_number()) return value.is_number();
    if (slot.is_string()) return value.is_string();
    return false;
}

}  // namespace

json merge_config(json base, const json& file) {
    if (!file.is_object()) throw ValidationError("config file must hold a JSON object");
    for (const auto& [key, value] : file.items()) {
        if (!base.contains(key)) throw ValidationError("unknown config key '" + key + "'");
        if (!compatible(base[key], value)) throw ValidationError("config key '" + key + "' has the wrong type");
        base[key] = value;
    }
    return base;
}

namespace {

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string file_sha256(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return sha256_hex(text.str());
}

fs::path sibling(const fs::path& out, const std::string& suffix) { return fs::path(out.string() + suffix); }

/// Per-invocation state: resolved config and the input/output manifest.
class Run {
public:
    Run(std::string command, json config, std::ostream& out) : command_(std::move(command)), config_(std::move(config)), out_(out) {}

    const json& config() const { return config_; }
    json& config() { return config_; }
    std::ostream& out() { return out_; }

    void input(const fs::path& path) { inputs_.push_back({{"path", path.string()}, {"sha256", file_sha256(path)}}); }

    /// Writes `<out>.config.json` and `<out>.manifest.json`.
    void finish(const fs::path& out, const std::vector<fs::path>& outputs) {
        std::ofstream cfg(sibling(out, ".config.json"), std::ios::binary);
        cfg << config_.dump(2) << '\n';
        json produced = json::array();
        for (const auto& p : outputs) produced.push_back({{"path", p.string()}, {"sha256", file_sha256(p)}});
        std::ofstream manifest(sibling(out, ".manifest.json"), std::ios::binary);
        manifest << json{{"command", command_}, {"inputs", inputs_}, {"outputs", produced}}.dump(2) << '\n';
        if (!cfg || !manifest) throw LoadError("cannot write run metadata next to " + out.string());
    }

private:
    std::string command_;
    json config_;
    std::ostream& out_;
    json inputs_ = json::array();
};

Pooling pooling_of(const json& c) { return parse_pooling(c["pooling"].get<std::string>()); }

/// Resolves the learning rate in place so the written config shows the value used.
TrainConfig train_config(json& c, Pooling pooling) {
    TrainConfig tc = TrainConfig::for_pooling(pooling);
    if (c["learning_rate"].is_null()) c["learning_rate"] = tc.learning_rate;
    tc.learning_rate = c["learning_rate"].get<double>();
    tc.epochs = c["epochs"].get<int>();
    tc.batch_size = c["batch_size"].get<int>();
    tc.patience = c["patience"].get<int>();
    tc.seed = c["seed"].get<std::uint64_t>();
    tc.weighted_loss = c["weighted_loss"].get<bool>();
    const auto opt = c["optimizer"].get<std::string>();
    if (opt != "adam" && opt != "sgd") throw ValidationError("unknown optimizer '" + opt + "'");
    tc.optimizer = opt == "adam" ? Optimizer::adam : Optimizer::sgd;
    return tc;
}

EmbeddingBackendSpec backend_spec(const json& c) {
    EmbeddingBackendSpec spec;
    spec.kind = parse_backend_kind(c["backend"].get<std::string>());
    if (spec.kind == BackendKind::static_vectors) {
        spec.model_identifier = c["vectors"].get<std::string>();
        if (spec.model_identifier.empty()) throw ValidationError("the static backend needs --vectors");
        spec.dimension = c["static_dimension"].get<int>();
    } else {
        spec.model_identifier = c["contextual_model"].get<std::string>();
        spec.dimension = c["contextual_dimension"].get<int>();
    }
    return spec;
}

/// Backend recorded in a checkpoint; --vectors relocates a static vector file.
std::shared_ptr<const EmbeddingBackend> backend_for(EmbeddingBackendSpec spec, const json& c) {
    if (spec.kind == BackendKind::static_vectors && !c["vectors"].get<std::string>().empty())
        spec.model_identifier = c["vectors"].get<std::string>();
    return make_backend(std::move(spec), c["contextual_command"].get<std::string>());
}

std::vector<QueryResponsePair> read_pairs(Run& run, const fs::path& path) {
    run.input(path);
    return read_pairs_jsonl(path);
}

void print_history(std::ostream& out, const FitReport& report) {
    for (const auto& r : report.history) {
        out << "epoch " << r.epoch << " loss " << fixed4(r.train_loss);
        if (r.valid_metric) out << " valid " << fixed4(*r.valid_metric);
        out << '\n';
    }
    out << "best epoch " << report.best_epoch;
    if (report.best_valid_metric) out << " valid " << fixed4(*report.best_valid_metric);
    out << '\n';
}

void print_histogram(std::ostream& out, const std::string& label, const ScoreHistogram& h) {
    out << label;
    for (auto v : h) out << '\t' << v;
    out << '\n';
}

void write_pairs_file(const fs::path& path, std::span<const QueryResponsePair> pairs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write " + path.string());
    write_pairs_jsonl(out, pairs);
}

std::set<std::string> keys_of(std::span<const QueryResponsePair> pairs) {
    std::set<std::string> keys;
    for (const auto& p : pairs) keys.insert(pair_key(p.query, p.response));
    return keys;
}

// ---------------------------------------------------------------------------

struct IngestArgs {
    std::string corpus, format, out;
    bool split = false;
};

void cmd_ingest(Run& run, const IngestArgs& a) {
    run.input(a.corpus);
    std::vector<QueryResponsePair> pairs;
    auto& out = run.out();
    out << "score\t0\t1\t2\t3\t4\t5\n";
    if (a.format == "convai") {
        const auto convs = parse_convai(fs::path(a.corpus));
        auto result = propagate_scores(convs);
        pairs = std::move(result.pairs);
        assign_labels(pairs);
        print_histogram(out, "conversations", conversation_histogram(convs));
        print_histogram(out, "pairs", pair_histogram(pairs));
        const auto totals = binarized_totals(pair_histogram(pairs));
        out << "labels\t" << totals[0] << '\t' << totals[1] << '\n';
        out << "skipped_conversations\t" << result.skipped << '\n';
    } else {
        pairs = parse_dailydialog(fs::path(a.corpus));
        out << "pairs\t" << pairs.size() << '\n';
    }
    std::vector<fs::path> outputs{a.out};
    write_pairs_file(a.out, pairs);
    if (a.split) {
        const auto& c = run.config();
        const SplitRatios ratios{c["train_ratio"].get<double>(), c["valid_ratio"].get<double>(),
                                 c["test_ratio"].get<double>()};
        const auto split = make_splits(pairs, ratios, c["seed"].get<std::uint64_t>());
        const fs::path base(a.out);
        for (auto [name, part] : {std::pair{"train", &split.train}, std::pair{"valid", &split.valid},
                                  std::pair{"test", &split.test}}) {
            fs::path p = base.parent_path() / (base.stem().string() + "." + name + base.extension().string());
            write_pairs_file(p, *part);
            outputs.push_back(p);
            out << name << '\t' << part->size() << '\n';
        }
    }
    run.finish(a.out, outputs);
}

struct TrainArgs {
    std::string kind, train, valid, out;
};

void cmd_train(Run& run, const TrainArgs& a) {
    auto& c = run.config();
    auto& out = run.out();
    const auto train = read_pairs(run, a.train);
    std::vector<QueryResponsePair> valid;
    if (!a.valid.empty()) valid = read_pairs(run, a.valid);
    const auto jobs = static_cast<unsigned>(std::max(1, c["jobs"].get<int>()));

    if (a.kind == "engagement" || a.kind == "relevance") {
        const Pooling pooling = pooling_of(c);
        PairFeaturizer featurizer(make_backend(backend_spec(c), c["contextual_command"].get<std::string>()), pooling);
        featurizer.matrix(train, jobs);
        featurizer.matrix(valid, jobs);
        TrainConfig tc = train_config(c, pooling);
        if (a.kind == "engagement") {
            auto result = train_engagement(train, valid, tc, featurizer);
            print_history(out, result.report);
            save(fs::path(a.out), result.model);
        } else {
            RelevanceConfig rc;
            rc.variant = parse_relevance_variant(c["relevance_variant"].get<std::string>());
            rc.train = tc;
            rc.train.weighted_loss = false;
            rc.negatives = {c["negative_ratio"].get<int>(), c["seed"].get<std::uint64_t>()};
            rc.margin = c["margin"].get<double>();
            auto result = train_relevance(train, valid, rc, featurizer);
            print_history(out, result.report);
            save(fs::path(a.out), result.model);
        }
    } else if (a.kind == "svm") {
        SvmConfig sc;
        sc.c = c["svm_c"].get<double>();
        sc.min_count = c["svm_min_count"].get<int>();
        sc.seed = c["seed"].get<std::uint64_t>();
        std::vector<SvmFeatureVector> features;
        for (const auto& p : train) features.push_back(featurize_svm(p));
        const Eigen::VectorXi y = labels_of(train);
        const auto model = train_svm(features, std::span<const int>(y.data(), y.size()), sc);
        Eigen::VectorXi predicted(y.size());
        for (Eigen::Index i = 0; i < y.size(); ++i) predicted(i) = model.predict(features[i]);
        out << "train balanced_accuracy " << fixed4(balanced_accuracy(y, predicted)) << '\n';
        if (!valid.empty()) {
            const Eigen::VectorXi yv = labels_of(valid);
            Eigen::VectorXi pv(yv.size());
            for (Eigen::Index i = 0; i < yv.size(); ++i) pv(i) = model.predict(featurize_svm(valid[i]));
            out << "valid balanced_accuracy " << fixed4(balanced_accuracy(yv, pv)) << '\n';
        }
        out << "iterations " << model.iterations << '\n';
        save(fs::path(a.out), model);
    } else {
        auto spec = backend_spec(c);
        if (spec.kind != BackendKind::static_vectors) throw ValidationError("birnn needs --backend static");
        auto backend = make_backend(spec);
        BiRnnConfig bc;
        bc.hidden = c["birnn_hidden"].get<int>();
        bc.head_hidden = c["birnn_head_hidden"].get<int>();
        bc.dropout = c["birnn_dropout"].get<double>();
        bc.train = train_config(c, Pooling::mean);
        bc.train.learning_rate = c["birnn_learning_rate"].get<double>();
        auto result = train_birnn(train, valid, bc, *backend);
        print_history(out, result.report);
        save(fs::path(a.out), result.model);
    }
    run.finish(a.out, {a.out});
}

struct FinetuneArgs {
    std::string checkpoint, train, valid, out;
    std::vector<std::string> exclude;
};

void cmd_finetune(Run& run, const FinetuneArgs& a) {
    auto& c = run.config();
    run.input(a.checkpoint);
    const auto source = load_engagement(a.checkpoint);
    const auto small = read_pairs(run, a.train);
    std::vector<QueryResponsePair> valid;
    if (!a.valid.empty()) valid = read_pairs(run, a.valid);
    std::set<std::string> evaluation_keys;
    for (const auto& path : a.exclude) {
        const auto held_out = read_pairs(run, path);
        evaluation_keys.merge(keys_of(held_out));
    }
    c["pooling"] = to_string(source.pooling);
    c["backend"] = to_string(source.backend.kind);
    PairFeaturizer featurizer(backend_for(source.backend, c), source.pooling);
    const TrainConfig tc = train_config(c, source.pooling);
    auto result = finetune(source, small, valid, tc, featurizer, evaluation_keys);
    print_history(run.out(), result.report);
    save(fs::path(a.out), result.model);
    run.finish(a.out, {a.out});
}

std::map<std::string, double> human_scores(Run& run, const std::string& annotations) {
    run.input(annotations);
    const auto records = read_annotations_csv(fs::path(annotations));
    const double lo = run.config()["rating_min"].get<double>();
    const double hi = run.config()["rating_max"].get<double>();
    auto means = aggregate_annotations(records);
    for (auto& [id, v] : means) v = normalize_rating(v, lo, hi);
    return means;
}

struct ScoreArgs {
    std::string pairs, engagement, relevance, human, out;
};

void cmd_score(Run& run, const ScoreArgs& a) {
    auto& c = run.config();
    if (a.engagement.empty() && a.relevance.empty())
        throw ValidationError("score needs --engagement and/or --relevance");
    const auto pairs = read_pairs(run, a.pairs);
    const auto jobs = static_cast<unsigned>(std::max(1, c["jobs"].get<int>()));
    std::vector<ScoredPair> scored(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        scored[i].pair_id = pairs[i].pair_id;
        scored[i].query = pairs[i].query;
        scored[i].response = pairs[i].response;
        if (pairs[i].raw_score) scored[i].human = normalize_rating(*pairs[i].raw_score, kMinEngagement, kMaxEngagement);
    }
    if (!a.engagement.empty()) {
        run.input(a.engagement);
        const auto model = load_engagement(a.engagement);
        check_no_overlap(model.trained_on, pairs, "engagement model");
        PairFeaturizer featurizer(backend_for(model.backend, c), model.pooling);
        const Eigen::VectorXf p = predict_engagement(model, featurizer.matrix(pairs, jobs));
        for (std::size_t i = 0; i < pairs.size(); ++i) scored[i].engagement = p(static_cast<Eigen::Index>(i));
    }
    if (!a.relevance.empty()) {
        run.input(a.relevance);
        const auto model = load_relevance(a.relevance);
        check_no_overlap(model.trained_on, pairs, "relevance model");
        PairFeaturizer featurizer(backend_for(model.backend, c), model.pooling);
        const Eigen::VectorXf p = predict_relevance(model, featurizer.matrix(pairs, jobs));
        for (std::size_t i = 0; i < pairs.size(); ++i) scored[i].relevance = p(static_cast<Eigen::Index>(i));
    }
    for (auto& s : scored)
        if (s.relevance && s.engagement) s.combined = combine(*s.relevance, *s.engagement);
    if (!a.human.empty()) {
        const auto human = human_scores(run, a.human);
        for (auto& s : scored)
            if (auto it = human.find(s.pair_id); it != human.end()) s.human = it->second;
    }
    write_scored_pairs(fs::path(a.out), scored);
    run.out() << "scored " << scored.size() << " pairs\n";
    run.finish(a.out, {a.out});
}

struct EvaluateArgs {
    std::string scored, human, out;
    std::vector<std::string> checkpoints;
};

void cmd_evaluate(Run& run, const EvaluateArgs& a) {
    auto& out = run.out();
    run.input(a.scored);
    auto scored = read_scored_pairs(fs::path(a.scored));
    if (!a.human.empty()) {
        const auto human = human_scores(run, a.human);
        for (auto& s : scored) {
            auto it = human.find(s.pair_id);
            if (it == human.end()) throw ValidationError("no human annotation for pair '" + s.pair_id + "'");
            s.human = it->second;
        }
    }
    for (const auto& path : a.checkpoints) {
        run.input(path);
        const auto header = read_checkpoint(fs::path(path)).header;
        const auto trained_on = header.value("trained_on", std::set<std::string>{});
        for (const auto& s : scored)
            if (trained_on.count(pair_key(s.query, s.response)))
                throw LeakageError("evaluate: pair '" + s.pair_id + "' was used to train " + path);
    }

    std::vector<CorrelationReport> reports;
    std::vector<MetricColumn> present;
    for (MetricColumn m : {MetricColumn::relevance, MetricColumn::engagement, MetricColumn::combined}) {
        const bool all = !scored.empty() && std::all_of(scored.begin(), scored.end(),
                                                        [&](const ScoredPair& s) { return column_value(s, m).has_value(); });
        if (!all) continue;
        present.push_back(m);
        reports.push_back(build_report(scored, m));
    }
    if (reports.empty()) throw ValidationError("evaluate: no metric column is filled on every pair");
    {
        std::ofstream csv(a.out, std::ios::binary);
        if (!csv) throw LoadError("cannot write " + a.out);
        write_report_csv(csv, reports);
    }
    for (const auto& r : reports)
        out << r.metric << " pearson " << fixed4(r.pearson_r) << " (p " << format_number(r.pearson_p) << ") spearman "
            << fixed4(r.spearman_rho) << " (p " << format_number(r.spearman_p) << ") n " << r.n << '\n';

    std::vector<fs::path> outputs{a.out};
    auto has = [&](MetricColumn m) { return std::find(present.begin(), present.end(), m) != present.end(); };
    if (has(MetricColumn::combined) && has(MetricColumn::relevance)) {
        const auto method = parse_dependent_method(run.config()["dependent_method"].get<std::string>());
        const ZTest t = compare_metrics(scored, MetricColumn::combined, MetricColumn::relevance, method);
        const fs::path sig = sibling(a.out, ".significance.json");
        std::ofstream js(sig, std::ios::binary);
        js << json{{"metric_a", "combined"},
                   {"metric_b", "relevance"},
                   {"method", to_string(method)},
                   {"n", scored.size()},
                   {"z", t.z},
                   {"p_value", t.p_value}}
                  .dump(2)
           << '\n';
        js.close();
        outputs.push_back(sig);
        out << "combined vs relevance (" << to_string(method) << "): z " << fixed4(t.z) << " p "
            << format_number(t.p_value) << '\n';
    }
    run.finish(a.out, outputs);
}

struct AgreementArgs {
    std::string annotations, out;
};

void cmd_agreement(Run& run, const AgreementArgs& a) {
    run.input(a.annotations);
    const auto records = read_annotations_csv(fs::path(a.annotations));
    const auto r = mean_pairwise_agreement(records);
    run.out() << "annotators " << r.annotators << " items " << r.items << '\n'
              << "mean_pairwise_kappa " << fixed4(r.mean_pairwise_kappa) << " over " << r.kappa_pairs << " pairs\n"
              << "mean_pairwise_pearson " << fixed4(r.mean_pairwise_pearson) << " over " << r.pearson_pairs
              << " pairs\n";
    if (!a.out.empty()) {
        std::ofstream js(a.out, std::ios::binary);
        js << json{{"annotators", r.annotators},
                   {"items", r.items},
                   {"mean_pairwise_kappa", r.mean_pairwise_kappa},
                   {"kappa_pairs", r.kappa_pairs},
                   {"mean_pairwise_pearson", std::isnan(r.mean_pairwise_pearson) ? json(nullptr)
                                                                                  : json(r.mean_pairwise_pearson)},
                   {"pearson_pairs", r.pearson_pairs}}
                  .dump(2)
           << '\n';
        js.close();
        run.finish(a.out, {a.out});
    }
}

struct PlotArgs {
    std::string scored, aggregation, metric = "combined", out;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot write " + path.string());
    f << text;
}

void cmd_plot(Run& run, const PlotArgs& a) {
    if (a.scored.empty() == a.aggregation.empty()) throw ValidationError("plot needs exactly one of --scored or --aggregation");
    if (!a.scored.empty()) {
        run.input(a.scored);
        const auto scored = read_scored_pairs(fs::path(a.scored));
        const MetricColumn metric = parse_metric(a.metric);
        Eigen::VectorXd x(static_cast<Eigen::Index>(scored.size())), y(x.size());
        for (std::size_t i = 0; i < scored.size(); ++i) {
            const auto m = column_value(scored[i], metric);
            if (!m || !scored[i].human)
                throw ValidationError("pair '" + scored[i].pair_id + "' lacks human or " + a.metric + " score");
            x(static_cast<Eigen::Index>(i)) = *scored[i].human;
            y(static_cast<Eigen::Index>(i)) = *m;
        }
        ScatterOptions o;
        o.title = a.metric + " vs human";
        o.y_label = a.metric;
        write_text(a.out, scatter_svg(x, y, o));
    } else {
        run.input(a.aggregation);
        const auto study = run_aggregation_study(read_aggregation_csv(a.aggregation));
        ScatterOptions o;
        o.title = "mean utterance score vs conversation score";
        o.x_label = "conversation score";
        o.y_label = "mean utterance score";
        o.x_max = o.y_max = 5;
        write_text(a.out, scatter_svg(study.conversation_scores, study.aggregated.col(2), o));
    }
    run.out() << "wrote " << a.out << '\n';
    run.finish(a.out, {a.out});
}

struct AggregationArgs {
    std::string input, out;
};

void cmd_aggregation(Run& run, const AggregationArgs& a) {
    run.input(a.input);
    const auto study = run_aggregation_study(read_aggregation_csv(a.input));
    std::ostringstream csv_text;
    csv::write_record(csv_text, {"method", "pearson_r", "pearson_p", "n"});
    for (const auto& row : study.rows) {
        csv::write_record(csv_text, {to_string(row.method), format_number(row.pearson.coefficient),
                                     format_number(row.pearson.p_value), std::to_string(study.conversations.size())});
        run.out() << to_string(row.method) << " pearson " << fixed4(row.pearson.coefficient) << " (p "
                  << format_number(row.pearson.p_value) << ")\n";
    }
    if (!a.out.empty()) {
        write_text(a.out, csv_text.str());
        run.finish(a.out, {a.out});
    }
}

// ---------------------------------------------------------------------------

const std::map<std::string, std::vector<std::string>> kChoices = {
    {"backend", {"contextual", "static"}},
    {"pooling", {"mean", "max"}},
    {"optimizer", {"adam", "sgd"}},
    {"relevance_variant", {"ranking", "cross_entropy"}},
    {"dependent_method", {"steiger1980", "hittner2003"}},
};

/// Every config key is also a flag (underscores become dashes).
struct ConfigFlags {
    std::string config_path;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;

    void attach(CLI::App* sub, const json& defaults) {
        sub->add_option("--config", config_path, "JSON file of configuration values");
        for (const auto& [key, value] : defaults.items()) {
            std::string flag = "--" + key;
            std::replace(flag.begin(), flag.end(), '_', '-');
            auto* opt = sub->add_option(flag, values[key]);
            if (auto it = kChoices.find(key); it != kChoices.end()) opt->check(CLI::IsMember(it->second));
            options[key] = opt;
        }
    }

    json resolve(const json& defaults) const {
        json c = defaults;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw LoadError("cannot open config " + config_path);
            json file;
            try {
                file = json::parse(in);
            } catch (const json::exception& e) {
                throw ParseError("config " + config_path + ": " + e.what());
            }
            c = merge_config(c, file);
        }
        for (const auto& [key, opt] : options) {
            if (opt->count() == 0) continue;
            const std::string& text = values.at(key);
            const json& slot = defaults[key];
            try {
                std::size_t used = 0;
                if (slot.is_boolean()) {
                    if (text != "true" && text != "false") throw std::invalid_argument(text);
                    c[key] = text == "true";
                    continue;
                } else if (slot.is_number_integer()) {
                    c[key] = std::stoll(text, &used);
                } else if (slot.is_number() || slot.is_null()) {
                    c[key] = std::stod(text, &used);
                } else {
                    c[key] = text;
                    continue;
                }
                if (used != text.size()) throw std::invalid_argument(text);
            } catch (const std::logic_error&) {
                throw ValidationError("--" + key + ": cannot parse '" + text + "'");
            }
        }
        return c;
    }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dialogue response evaluation with relevance and predicted engagement", "engage"};
    app.require_subcommand(1);
    const json defaults = default_config();
    std::map<std::string, ConfigFlags> flags;
    auto sub = [&](const std::string& name, const std::string& help) {
        auto* s = app.add_subcommand(name, help);
        flags[name].attach(s, defaults);
        return s;
    };

    IngestArgs ingest;
    auto* s_ingest = sub("ingest", "Parse a corpus into query/response pairs");
    s_ingest->add_option("corpus", ingest.corpus, "Corpus file")->required();
    s_ingest->add_option("--format", ingest.format)->required()->check(CLI::IsMember({"convai", "dailydialog"}));
    s_ingest->add_option("--out", ingest.out, "Pairs JSONL")->required();
    s_ingest->add_flag("--split", ingest.split, "Also write seeded train/valid/test files");

    TrainArgs train;
    auto* s_train = sub("train", "Train a scorer");
    s_train->add_option("kind", train.kind)->required()->check(CLI::IsMember({"engagement", "relevance", "svm", "birnn"}));
    s_train->add_option("--train", train.train, "Training pairs JSONL")->required();
    s_train->add_option("--valid", train.valid, "Validation pairs JSONL");
    s_train->add_option("--out", train.out, "Checkpoint path")->required();

    FinetuneArgs ft;
    auto* s_ft = sub("finetune", "Continue training an engagement model on a small labelled set");
    s_ft->add_option("--checkpoint", ft.checkpoint)->required();
    s_ft->add_option("--train", ft.train)->required();
    s_ft->add_option("--valid", ft.valid);
    s_ft->add_option("--exclude", ft.exclude, "Evaluation pairs that must not be trained on");
    s_ft->add_option("--out", ft.out)->required();

    ScoreArgs score;
    auto* s_score = sub("score", "Score pairs with relevance and engagement models");
    s_score->add_option("--pairs", score.pairs)->required();
    s_score->add_option("--engagement", score.engagement);
    s_score->add_option("--relevance", score.relevance);
    s_score->add_option("--human", score.human, "Annotation CSV for the human column");
    s_score->add_option("--out", score.out, "Scored pairs CSV")->required();

    EvaluateArgs eval;
    auto* s_eval = sub("evaluate", "Correlate metric columns with human scores");
    s_eval->add_option("--scored", eval.scored)->required();
    s_eval->add_option("--human", eval.human, "Annotation CSV replacing the human column");
    s_eval->add_option("--checkpoint", eval.checkpoints, "Checkpoints whose training pairs must not be evaluated");
    s_eval->add_option("--out", eval.out, "Report CSV")->required();

    AgreementArgs agree;
    auto* s_agree = sub("agreement", "Inter-annotator agreement");
    s_agree->add_option("--annotations", agree.annotations)->required();
    s_agree->add_option("--out", agree.out, "Report JSON");

    PlotArgs plot;
    auto* s_plot = sub("plot", "Scatter plot as SVG");
    auto* o_scored = s_plot->add_option("--scored", plot.scored);
    auto* o_agg = s_plot->add_option("--aggregation", plot.aggregation, "conversation_id,conversation_score,utterance_score CSV");
    o_scored->excludes(o_agg);
    s_plot->add_option("--metric", plot.metric)->check(CLI::IsMember({"relevance", "engagement", "combined"}));
    s_plot->add_option("--out", plot.out)->required();

    AggregationArgs agg;
    auto* s_agg = sub("aggregation", "Correlate aggregated utterance scores with conversation scores");
    s_agg->add_option("--input", agg.input)->required();
    s_agg->add_option("--out", agg.out, "Report CSV");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) reversed.pop_back();
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return kExitOk;
        }
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        CLI::App* chosen = app.get_subcommands().front();
        const std::string name = chosen->get_name();
        Run r(name, flags[name].resolve(defaults), out);
        if (name == "ingest") cmd_ingest(r, ingest);
        else if (name == "train") cmd_train(r, train);
        else if (name == "finetune") cmd_finetune(r, ft);
        else if (name == "score") cmd_score(r, score);
        else if (name == "evaluate") cmd_evaluate(r, eval);
        else if (name == "agreement") cmd_agreement(r, agree);
        else if (name == "plot") cmd_plot(r, plot);
        else cmd_aggregation(r, agg);
        return kExitOk;
    } catch (const LeakageError& e) {
        err << "leakage: " << e.what() << '\n';
        return kExitLeakage;
    } catch (const TrainingError& e) {
        err << "training failed: " << e.what() << '\n';
        return kExitFailure;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

}  // namespace engage::cli
