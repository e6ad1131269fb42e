#include "engage/relevance.hpp"

#include <random>
#include <sstream>

#include "engage/engagement.hpp"
#include "engage/text.hpp"

namespace engage {

std::string to_string(RelevanceVariant v) { return v == RelevanceVariant::ranking ? "ranking" : "cross_entropy"; }

RelevanceVariant parse_relevance_variant(std::string_view name) {
    if (name == "ranking") return RelevanceVariant::ranking;
    if (name == "cross_entropy") return RelevanceVariant::cross_entropy;
    throw ValidationError("unknown relevance variant '" + std::string(name) + "'");
}

std::vector<std::vector<std::size_t>> sample_negative_indices(std::span<const QueryResponsePair> pairs,
                                                              const NegativeSamplingSpec& spec) {
    if (spec.ratio <= 0) throw ValidationError("negative sampling ratio must be positive");
    std::vector<std::string_view> responses;
    std::set<std::string_view> distinct;
    for (const auto& p : pairs) {
        responses.push_back(trim(p.response));
        distinct.insert(responses.back());
    }
    if (distinct.size() < 2) throw ValidationError("negative sampling needs at least 2 distinct responses");

    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
    std::vector<std::vector<std::size_t>> out(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        for (int k = 0; k < spec.ratio; ++k) {
            std::size_t j = i;
            int attempts = 0;
            do {
                j = pick(rng);
            } while ((j == i || responses[j] == responses[i]) && ++attempts < 10000);
            if (j == i || responses[j] == responses[i]) {
                // Pathological pool: fall back to the first usable response.
                for (j = 0; j < pairs.size() && responses[j] == responses[i]; ++j) {
                }
            }
            out[i].push_back(j);
        }
    }
    return out;
}

std::vector<QueryResponsePair> generate_negatives(std::span<const QueryResponsePair> pairs,
                                                  const NegativeSamplingSpec& spec) {
    const auto negatives = sample_negative_indices(pairs, spec);
    std::vector<QueryResponsePair> out;
    out.reserve(pairs.size() * (1 + spec.ratio));
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        QueryResponsePair pos = pairs[i];
        pos.label = 1;
        pos.raw_score.reset();
        out.push_back(pos);
        for (std::size_t k = 0; k < negatives[i].size(); ++k) {
            QueryResponsePair neg = pos;
            neg.pair_id = pairs[i].pair_id + "#neg" + std::to_string(k);
            neg.response = pairs[negatives[i][k]].response;
            neg.label = 0;
            out.push_back(std::move(neg));
        }
    }
    return out;
}

RelevanceModel make_relevance_model(RelevanceVariant variant, int embedding_dimension, Pooling pooling,
                                    EmbeddingBackendSpec backend, std::uint64_t seed) {
    std::vector<int> widths = {2 * embedding_dimension};
    widths.insert(widths.end(), kHiddenWidths.begin(), kHiddenWidths.end());
    widths.push_back(variant == RelevanceVariant::ranking ? 1 : 2);
    RelevanceModel model;
    model.variant = variant;
    model.network = Mlp<float>(widths, seed);
    model.pooling = pooling;
    model.backend = std::move(backend);
    model.seed = seed;
    return model;
}

double margin_ranking_loss(const Eigen::Ref<const Eigen::VectorXf>& positive,
                           const Eigen::Ref<const Eigen::VectorXf>& negative, double margin) {
    if (positive.size() != negative.size() || positive.size() == 0)
        throw ValidationError("margin_ranking_loss: need aligned, non-empty score vectors");
    const Eigen::ArrayXd gap = margin - positive.cast<double>().array() + negative.cast<double>().array();
    return gap.max(0.0).mean();
}

Eigen::VectorXf predict_relevance(const RelevanceModel& model, const Eigen::Ref<const Eigen::MatrixXf>& features) {
    if (model.variant == RelevanceVariant::cross_entropy) return positive_probability<float>(model.network, features);
    Eigen::RowVectorXf logits = model.network.logits(features).row(0);
    return logits.transpose().unaryExpr([](float v) { return logistic(v); });
}

double predict_relevance(const RelevanceModel& model, PairFeaturizer& featurizer, std::string_view query,
                         std::string_view response) {
    if (is_blank(query) || is_blank(response)) throw ValidationError("predict_relevance: empty text");
    const Eigen::VectorXf x = featurizer.features(query, response);
    return predict_relevance(model, x)(0);
}

namespace {

struct Triples {
    Eigen::MatrixXf positive;
    Eigen::MatrixXf negative;
};

Triples build_triples(std::span<const QueryResponsePair> pairs, const NegativeSamplingSpec& spec,
                      PairFeaturizer& featurizer) {
    const auto negatives = sample_negative_indices(pairs, spec);
    const Eigen::Index count = static_cast<Eigen::Index>(pairs.size()) * spec.ratio;
    Triples t{Eigen::MatrixXf(2 * featurizer.dimension(), count), Eigen::MatrixXf(2 * featurizer.dimension(), count)};
    Eigen::Index c = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const Eigen::VectorXf pos = featurizer.features(pairs[i].query, pairs[i].response);
        for (std::size_t j : negatives[i]) {
            t.positive.col(c) = pos;
            t.negative.col(c) = featurizer.features(pairs[i].query, pairs[j].response);
            ++c;
        }
    }
    return t;
}

double triple_accuracy(const RelevanceModel& model, const Triples& t) {
    const Eigen::VectorXf sp = predict_relevance(model, t.positive);
    const Eigen::VectorXf sn = predict_relevance(model, t.negative);
    return (sp.array() > sn.array()).cast<double>().mean();
}

FitReport fit_ranking(RelevanceModel& model, const Triples& train, const Triples* valid, const RelevanceConfig& cfg) {
    const auto& tc = cfg.train;
    const Eigen::Index n = train.positive.cols();
    if (n == 0) throw ValidationError("train_relevance: empty training set");
    if (tc.epochs < 0 || tc.batch_size <= 0 || !(tc.learning_rate > 0))
        throw ValidationError("invalid training configuration");
    auto& net = model.network;
    auto full_loss = [&] {
        return margin_ranking_loss(predict_relevance(model, train.positive), predict_relevance(model, train.negative),
                                   cfg.margin);
    };

    FitReport report;
    Eigen::VectorXf params = net.parameters();
    Eigen::VectorXf best = params;
    double best_score = -1;
    if (valid) {
        best_score = triple_accuracy(model, *valid);
        report.best_valid_metric = best_score;
    }
    report.history.push_back({0, full_loss(), report.best_valid_metric});

    Adam<float> adam(tc.learning_rate);
    Sgd<float> sgd(tc.learning_rate);
    std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), Eigen::Index(0));
    Mlp<float>::Tape tape;
    int since_best = 0;
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (Eigen::Index start = 0; start < n; start += tc.batch_size) {
            const Eigen::Index len = std::min<Eigen::Index>(tc.batch_size, n - start);
            // Positives in the first `len` columns, their negatives after.
            Eigen::MatrixXf batch(train.positive.rows(), 2 * len);
            for (Eigen::Index k = 0; k < len; ++k) {
                batch.col(k) = train.positive.col(order[start + k]);
                batch.col(len + k) = train.negative.col(order[start + k]);
            }
            const Eigen::MatrixXf logits = net.forward(batch, tape);
            Eigen::MatrixXf grad_logits = Eigen::MatrixXf::Zero(1, 2 * len);
            for (Eigen::Index k = 0; k < len; ++k) {
                const float sp = logistic(logits(0, k));
                const float sn = logistic(logits(0, len + k));
                if (!std::isfinite(sp) || !std::isfinite(sn)) {
                    std::ostringstream msg;
                    msg << "non-finite score at epoch " << epoch << " (learning rate " << tc.learning_rate << ")";
                    throw TrainingError(msg.str());
                }
                if (cfg.margin - sp + sn > 0) {
                    grad_logits(0, k) = -sp * (1 - sp) / static_cast<float>(len);
                    grad_logits(0, len + k) = sn * (1 - sn) / static_cast<float>(len);
                }
            }
            Eigen::VectorXf grad = Eigen::VectorXf::Zero(net.parameter_count());
            net.backward(tape, grad_logits, grad);
            if (tc.optimizer == Optimizer::adam) adam.step(params, grad);
            else sgd.step(params, grad);
            net.set_parameters(params);
        }
        EpochRecord record{epoch, full_loss(), std::nullopt};
        if (!std::isfinite(record.train_loss))
            throw TrainingError("non-finite ranking loss after epoch " + std::to_string(epoch));
        if (valid) {
            const double score = triple_accuracy(model, *valid);
            record.valid_metric = score;
            if (score > best_score) {
                best_score = score;
                best = params;
                report.best_epoch = epoch;
                report.best_valid_metric = score;
                since_best = 0;
            } else if (++since_best >= tc.patience) {
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

}  // namespace

RelevanceTraining train_relevance(std::span<const QueryResponsePair> train, std::span<const QueryResponsePair> valid,
                                  const RelevanceConfig& cfg, PairFeaturizer& featurizer) {
    if (train.empty()) throw ValidationError("train_relevance: empty training set");
    RelevanceTraining out;
    out.model = make_relevance_model(cfg.variant, featurizer.dimension(), featurizer.pooling(),
                                     featurizer.backend().spec(), cfg.train.seed);
    out.model.margin = cfg.margin;
    NegativeSamplingSpec valid_spec = cfg.negatives;
    valid_spec.seed = cfg.negatives.seed + 1;

    if (cfg.variant == RelevanceVariant::ranking) {
        const Triples t = build_triples(train, cfg.negatives, featurizer);
        if (valid.size() >= 2) {
            const Triples v = build_triples(valid, valid_spec, featurizer);
            out.report = fit_ranking(out.model, t, &v, cfg);
        } else {
            out.report = fit_ranking(out.model, t, nullptr, cfg);
        }
    } else {
        const auto labelled = generate_negatives(train, cfg.negatives);
        const Eigen::MatrixXf x = featurizer.matrix(labelled);
        const Eigen::VectorXi y = labels_of(labelled);
        if (valid.size() >= 2) {
            const auto valid_labelled = generate_negatives(valid, valid_spec);
            const Eigen::MatrixXf xv = featurizer.matrix(valid_labelled);
            const Eigen::VectorXi yv = labels_of(valid_labelled);
            out.report = fit_classifier<float>(out.model.network, x, y, cfg.train, &xv, &yv);
        } else {
            out.report = fit_classifier<float>(out.model.network, x, y, cfg.train);
        }
    }
    std::ostringstream extra;
    extra << "relevance variant=" << to_string(cfg.variant) << " ratio=" << cfg.negatives.ratio
          << " nseed=" << cfg.negatives.seed << " margin=" << cfg.margin;
    out.model.training_fingerprint = training_fingerprint(train, cfg.train, extra.str());
    for (const auto& p : train) out.model.trained_on.insert(pair_key(p.query, p.response));
    return out;
}

double ranking_accuracy(const RelevanceModel& model, PairFeaturizer& featurizer,
                        std::span<const QueryResponsePair> pairs, const NegativeSamplingSpec& spec) {
    return triple_accuracy(model, build_triples(pairs, spec, featurizer));
}

Checkpoint to_checkpoint(const RelevanceModel& model) {
    Checkpoint ckpt;
    ckpt.header = {{"kind", "relevance"},
                   {"format_version", 1},
                   {"variant", to_string(model.variant)},
                   {"layer_widths", model.network.widths()},
                   {"activation", to_string(model.network.activation())},
                   {"pooling", to_string(model.pooling)},
                   {"backend", to_json(model.backend)},
                   {"margin", model.margin},
                   {"seed", model.seed},
                   {"training_fingerprint", model.training_fingerprint},
                   {"trained_on", model.trained_on}};
    append_mlp(ckpt, "mlp", model.network);
    return ckpt;
}

RelevanceModel relevance_from_checkpoint(const Checkpoint& ckpt) {
    const auto& h = ckpt.header;
    if (h.value("kind", std::string()) != "relevance") throw LoadError("checkpoint is not a relevance model");
    try {
        RelevanceModel model;
        model.variant = parse_relevance_variant(h.at("variant").get<std::string>());
        model.network = extract_mlp(ckpt, "mlp", h.at("layer_widths").get<std::vector<int>>(),
                                    parse_activation(h.at("activation").get<std::string>()));
        model.pooling = parse_pooling(h.at("pooling").get<std::string>());
        model.backend = backend_from_json(h.at("backend"));
        model.margin = h.at("margin").get<double>();
        model.seed = h.at("seed").get<std::uint64_t>();
        model.training_fingerprint = h.at("training_fingerprint").get<std::string>();
        model.trained_on = h.at("trained_on").get<std::set<std::string>>();
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("relevance checkpoint header: ") + e.what());
    }
}

void save(const std::filesystem::path& path, const RelevanceModel& model) { write_checkpoint(path, to_checkpoint(model)); }

RelevanceModel load_relevance(const std::filesystem::path& path) { return relevance_from_checkpoint(read_checkpoint(path)); }

}  // namespace engage
