#include "engage/engagement.hpp"

#include <algorithm>
#include <sstream>

#include "engage/text.hpp"

namespace engage {

namespace {

std::vector<int> layer_widths(int dimension) {
    std::vector<int> widths = {2 * dimension};
    widths.insert(widths.end(), kHiddenWidths.begin(), kHiddenWidths.end());
    widths.push_back(2);
    return widths;
}

void record_keys(std::set<std::string>& keys, std::span<const QueryResponsePair> pairs) {
    for (const auto& p : pairs) keys.insert(pair_key(p.query, p.response));
}

}  // namespace

EngagementModel make_engagement_model(int embedding_dimension, Pooling pooling, EmbeddingBackendSpec backend,
                                      std::uint64_t seed, Activation hidden) {
    if (embedding_dimension <= 0) throw ValidationError("embedding dimension must be positive");
    EngagementModel model;
    model.network = Mlp<float>(layer_widths(embedding_dimension), seed, hidden);
    model.pooling = pooling;
    model.backend = std::move(backend);
    model.seed = seed;
    return model;
}

Eigen::VectorXi labels_of(std::span<const QueryResponsePair> pairs) {
    Eigen::VectorXi y(static_cast<Eigen::Index>(pairs.size()));
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (!pairs[i].label) throw ValidationError("pair '" + pairs[i].pair_id + "' has no label");
        y(static_cast<Eigen::Index>(i)) = *pairs[i].label;
    }
    return y;
}

std::string training_fingerprint(std::span<const QueryResponsePair> pairs, const TrainConfig& cfg,
                                 const std::string& extra) {
    std::vector<std::string> keys;
    for (const auto& p : pairs) keys.push_back(pair_key(p.query, p.response) + (p.label ? std::to_string(*p.label) : ""));
    std::sort(keys.begin(), keys.end());
    std::ostringstream text;
    for (const auto& k : keys) text << k << '\n';
    text << "lr=" << cfg.learning_rate << " epochs=" << cfg.epochs << " batch=" << cfg.batch_size
         << " patience=" << cfg.patience << " seed=" << cfg.seed << " weighted=" << cfg.weighted_loss
         << " optimizer=" << (cfg.optimizer == Optimizer::adam ? "adam" : "sgd") << ' ' << extra;
    return sha256_hex(text.str());
}

EngagementTraining train_engagement(std::span<const QueryResponsePair> train,
                                    std::span<const QueryResponsePair> valid, const TrainConfig& cfg,
                                    PairFeaturizer& featurizer) {
    if (train.empty()) throw ValidationError("train_engagement: empty training set");
    EngagementTraining out;
    out.model = make_engagement_model(featurizer.dimension(), featurizer.pooling(), featurizer.backend().spec(),
                                      cfg.seed);
    const Eigen::MatrixXf x = featurizer.matrix(train);
    const Eigen::VectorXi y = labels_of(train);
    if (valid.empty()) {
        out.report = fit_classifier<float>(out.model.network, x, y, cfg);
    } else {
        const Eigen::MatrixXf xv = featurizer.matrix(valid);
        const Eigen::VectorXi yv = labels_of(valid);
        out.report = fit_classifier<float>(out.model.network, x, y, cfg, &xv, &yv);
    }
    out.model.training_fingerprint = training_fingerprint(train, cfg, "engagement");
    record_keys(out.model.trained_on, train);
    return out;
}

void check_no_overlap(const std::set<std::string>& trained_on, std::span<const QueryResponsePair> pairs,
                      const std::string& what) {
    for (const auto& p : pairs)
        if (trained_on.count(pair_key(p.query, p.response)))
            throw LeakageError(what + ": pair '" + p.pair_id + "' was used for training");
}

EngagementTraining finetune(const EngagementModel& source, std::span<const QueryResponsePair> small_pairs,
                            std::span<const QueryResponsePair> valid, const TrainConfig& cfg,
                            PairFeaturizer& featurizer, const std::set<std::string>& evaluation_keys) {
    EngagementTraining out{source, {}};
    if (small_pairs.empty()) return out;
    for (const auto& p : small_pairs)
        if (evaluation_keys.count(pair_key(p.query, p.response)))
            throw LeakageError("finetune: pair '" + p.pair_id + "' belongs to a registered evaluation set");
    if (featurizer.dimension() != source.embedding_dimension())
        throw ValidationError("finetune: backend dimension differs from the source model");

    const Eigen::MatrixXf x = featurizer.matrix(small_pairs);
    const Eigen::VectorXi y = labels_of(small_pairs);
    if (valid.empty()) {
        out.report = fit_classifier<float>(out.model.network, x, y, cfg);
    } else {
        const Eigen::MatrixXf xv = featurizer.matrix(valid);
        const Eigen::VectorXi yv = labels_of(valid);
        out.report = fit_classifier<float>(out.model.network, x, y, cfg, &xv, &yv);
    }
    out.model.training_fingerprint =
        training_fingerprint(small_pairs, cfg, "finetune-of:" + source.training_fingerprint);
    record_keys(out.model.trained_on, small_pairs);
    return out;
}

Eigen::VectorXf predict_engagement(const EngagementModel& model, const Eigen::Ref<const Eigen::MatrixXf>& features) {
    return positive_probability<float>(model.network, features);
}

double predict_engagement(const EngagementModel& model, PairFeaturizer& featurizer, std::string_view query,
                          std::string_view response) {
    if (is_blank(query) || is_blank(response)) throw ValidationError("predict_engagement: empty text");
    const Eigen::VectorXf x = featurizer.features(query, response);
    return predict_engagement(model, x)(0);
}

ClassifierScores evaluate_classifier(const EngagementModel& model, PairFeaturizer& featurizer,
                                     std::span<const QueryResponsePair> pairs) {
    const Eigen::MatrixXf x = featurizer.matrix(pairs);
    return score_classifier<float>(model.network, x, labels_of(pairs));
}

Checkpoint to_checkpoint(const EngagementModel& model) {
    Checkpoint ckpt;
    ckpt.header = {{"kind", "engagement"},
                   {"format_version", 1},
                   {"layer_widths", model.network.widths()},
                   {"activation", to_string(model.network.activation())},
                   {"pooling", to_string(model.pooling)},
                   {"backend", to_json(model.backend)},
                   {"seed", model.seed},
                   {"training_fingerprint", model.training_fingerprint},
                   {"trained_on", model.trained_on}};
    append_mlp(ckpt, "mlp", model.network);
    return ckpt;
}

EngagementModel engagement_from_checkpoint(const Checkpoint& ckpt) {
    const auto& h = ckpt.header;
    if (h.value("kind", std::string()) != "engagement") throw LoadError("checkpoint is not an engagement model");
    try {
        EngagementModel model;
        auto widths = h.at("layer_widths").get<std::vector<int>>();
        model.network = extract_mlp(ckpt, "mlp", widths, parse_activation(h.at("activation").get<std::string>()));
        model.pooling = parse_pooling(h.at("pooling").get<std::string>());
        model.backend = backend_from_json(h.at("backend"));
        model.seed = h.at("seed").get<std::uint64_t>();
        model.training_fingerprint = h.at("training_fingerprint").get<std::string>();
        model.trained_on = h.at("trained_on").get<std::set<std::string>>();
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("engagement checkpoint header: ") + e.what());
    }
}

void save(const std::filesystem::path& path, const EngagementModel& model) { write_checkpoint(path, to_checkpoint(model)); }

EngagementModel load_engagement(const std::filesystem::path& path) {
    return engagement_from_checkpoint(read_checkpoint(path));
}

}  // namespace engage
