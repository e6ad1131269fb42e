#include "engage/birnn.hpp"

#include <numeric>
#include <sstream>

#include "engage/engagement.hpp"
#include "engage/text.hpp"

namespace engage {

PairSequences<float> sequences_of(const EmbeddingBackend& backend, std::string_view query, std::string_view response) {
    return {backend.embed(query).vectors.transpose(), backend.embed(response).vectors.transpose()};
}

namespace {

std::vector<PairSequences<float>> sequences_of(const EmbeddingBackend& backend,
                                               std::span<const QueryResponsePair> pairs) {
    std::vector<PairSequences<float>> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(sequences_of(backend, p.query, p.response));
    return out;
}

double validation_score(const BiRnn<float>& net, std::span<const PairSequences<float>> seqs,
                        const Eigen::VectorXi& labels) {
    const Eigen::VectorXf p = net.predict(seqs);
    return balanced_accuracy(labels, threshold_labels<float>(p));
}

}  // namespace

BiRnnTraining train_birnn(std::span<const QueryResponsePair> train, std::span<const QueryResponsePair> valid,
                          const BiRnnConfig& cfg, const EmbeddingBackend& backend) {
    const auto& tc = cfg.train;
    if (train.empty()) throw ValidationError("train_birnn: empty training set");
    if (tc.epochs < 0 || tc.batch_size <= 0 || !(tc.learning_rate > 0))
        throw ValidationError("invalid training configuration");
    if (!(cfg.dropout >= 0 && cfg.dropout < 1)) throw ValidationError("dropout must lie in [0, 1)");
    if (cfg.hidden <= 0 || cfg.head_hidden <= 0) throw ValidationError("BiRNN widths must be positive");

    BiRnnTraining out;
    auto& model = out.model;
    model.network = BiRnn<float>(backend.dimension(), cfg.hidden, cfg.head_hidden, tc.seed);
    model.head_hidden = cfg.head_hidden;
    model.dropout = cfg.dropout;
    model.backend = backend.spec();
    model.seed = tc.seed;
    auto& net = model.network;

    const Eigen::VectorXi labels = labels_of(train);
    const std::vector<int> y(labels.data(), labels.data() + labels.size());
    FitReport& report = out.report;
    if (tc.class_weights) report.weights = *tc.class_weights;
    else if (tc.weighted_loss) report.weights = compute_class_weights(y);
    std::vector<float> w(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        w[i] = static_cast<float>(y[i] == 1 ? report.weights.positive : report.weights.negative);

    const auto seqs = sequences_of(backend, train);
    const auto valid_seqs = sequences_of(backend, valid);
    const Eigen::VectorXi valid_labels = valid.empty() ? Eigen::VectorXi() : labels_of(valid);
    const bool validate = !valid.empty();
    auto full_loss = [&] {
        Eigen::MatrixXf logits(2, static_cast<Eigen::Index>(seqs.size()));
        for (std::size_t i = 0; i < seqs.size(); ++i)
            logits.col(static_cast<Eigen::Index>(i)) = net.head().logits(net.encode(seqs[i]));
        return static_cast<double>(weighted_cross_entropy<float>(logits, y, w));
    };

    Eigen::VectorXf params = net.parameters();
    Eigen::VectorXf best = params;
    double best_score = -1;
    if (validate) {
        best_score = validation_score(net, valid_seqs, valid_labels);
        report.best_valid_metric = best_score;
    }
    report.history.push_back({0, full_loss(), report.best_valid_metric});

    Adam<float> adam(tc.learning_rate);
    Sgd<float> sgd(tc.learning_rate);
    std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
    std::bernoulli_distribution keep(1.0 - cfg.dropout);
    const float scale = static_cast<float>(1.0 / (1.0 - cfg.dropout));
    std::vector<std::size_t> order(seqs.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    int since_best = 0;
    const Eigen::Index width = 4 * net.hidden();
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
            const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(tc.batch_size), order.size() - start);
            std::vector<PairSequences<float>> batch;
            std::vector<int> by;
            std::vector<float> bw;
            for (std::size_t k = 0; k < len; ++k) {
                batch.push_back(seqs[order[start + k]]);
                by.push_back(y[order[start + k]]);
                bw.push_back(w[order[start + k]]);
            }
            Eigen::MatrixXf mask(width, static_cast<Eigen::Index>(len));
            for (Eigen::Index j = 0; j < mask.cols(); ++j)
                for (Eigen::Index i = 0; i < width; ++i) mask(i, j) = keep(rng) ? scale : 0.0f;
            Eigen::VectorXf grad;
            const float loss = net.loss_and_gradient(batch, by, bw, &mask, grad);
            if (!std::isfinite(loss)) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << " (learning rate " << tc.learning_rate << ")";
                throw TrainingError(msg.str());
            }
            if (tc.optimizer == Optimizer::adam) adam.step(params, grad);
            else sgd.step(params, grad);
            net.set_parameters(params);
        }
        EpochRecord record{epoch, full_loss(), std::nullopt};
        if (!std::isfinite(record.train_loss))
            throw TrainingError("non-finite training loss after epoch " + std::to_string(epoch));
        if (validate) {
            const double score = validation_score(net, valid_seqs, valid_labels);
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

    std::ostringstream extra;
    extra << "birnn hidden=" << cfg.hidden << " head=" << cfg.head_hidden << " dropout=" << cfg.dropout;
    model.training_fingerprint = training_fingerprint(train, tc, extra.str());
    for (const auto& p : train) model.trained_on.insert(pair_key(p.query, p.response));
    return out;
}

double predict_birnn(const BiRnnModel& model, const EmbeddingBackend& backend, std::string_view query,
                     std::string_view response) {
    if (is_blank(query) || is_blank(response)) throw ValidationError("predict_birnn: empty text");
    if (backend.dimension() != model.network.input_width())
        throw ValidationError("predict_birnn: backend dimension differs from the model");
    const PairSequences<float> seq = sequences_of(backend, query, response);
    return model.network.predict(std::span(&seq, 1))(0);
}

Eigen::VectorXf predict_birnn(const BiRnnModel& model, const EmbeddingBackend& backend,
                              std::span<const QueryResponsePair> pairs) {
    if (backend.dimension() != model.network.input_width())
        throw ValidationError("predict_birnn: backend dimension differs from the model");
    return model.network.predict(sequences_of(backend, pairs));
}

namespace {

const char* const kTensorNames[] = {"w_input", "w_hidden", "b_input", "b_hidden"};

void append_encoder(Checkpoint& ckpt, const std::string& prefix, BiGru<float> enc) {
    for (auto [dir, gru] : {std::pair{"forward", &enc.forward}, std::pair{"backward", &enc.backward}}) {
        int k = 0;
        gru->for_each_tensor([&](auto& t) {
            ckpt.tensors.push_back({prefix + "." + dir + "." + kTensorNames[k++],
                                    Eigen::Map<const Eigen::MatrixXf>(t.data(), t.rows(), t.cols())});
        });
    }
}

void extract_encoder(const Checkpoint& ckpt, const std::string& prefix, BiGru<float>& enc) {
    for (auto [dir, gru] : {std::pair{"forward", &enc.forward}, std::pair{"backward", &enc.backward}}) {
        int k = 0;
        gru->for_each_tensor([&](auto& t) {
            const auto& src = ckpt.tensor(prefix + "." + dir + "." + kTensorNames[k++]).values;
            if (src.rows() != t.rows() || src.cols() != t.cols()) throw LoadError("BiRNN tensor shape mismatch in " + prefix);
            t = src;
        });
    }
}

}  // namespace

Checkpoint to_checkpoint(const BiRnnModel& model) {
    Checkpoint ckpt;
    ckpt.header = {{"kind", "birnn"},
                   {"format_version", 1},
                   {"input_width", model.network.input_width()},
                   {"hidden", model.network.hidden()},
                   {"head_hidden", model.head_hidden},
                   {"dropout", model.dropout},
                   {"backend", to_json(model.backend)},
                   {"seed", model.seed},
                   {"training_fingerprint", model.training_fingerprint},
                   {"trained_on", model.trained_on}};
    append_encoder(ckpt, "query", model.network.query_encoder());
    append_encoder(ckpt, "response", model.network.response_encoder());
    append_mlp(ckpt, "head", model.network.head());
    return ckpt;
}

BiRnnModel birnn_from_checkpoint(const Checkpoint& ckpt) {
    const auto& h = ckpt.header;
    if (h.value("kind", std::string()) != "birnn") throw LoadError("checkpoint is not a BiRNN model");
    try {
        BiRnnModel model;
        const int hidden = h.at("hidden").get<int>();
        model.head_hidden = h.at("head_hidden").get<int>();
        model.dropout = h.at("dropout").get<double>();
        model.backend = backend_from_json(h.at("backend"));
        model.seed = h.at("seed").get<std::uint64_t>();
        model.training_fingerprint = h.at("training_fingerprint").get<std::string>();
        model.trained_on = h.at("trained_on").get<std::set<std::string>>();
        model.network = BiRnn<float>(h.at("input_width").get<int>(), hidden, model.head_hidden, 0);
        extract_encoder(ckpt, "query", model.network.query_encoder());
        extract_encoder(ckpt, "response", model.network.response_encoder());
        model.network.head() = extract_mlp(ckpt, "head", {4 * hidden, model.head_hidden, 2}, Activation::tanh);
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("BiRNN checkpoint header: ") + e.what());
    }
}

void save(const std::filesystem::path& path, const BiRnnModel& model) { write_checkpoint(path, to_checkpoint(model)); }

BiRnnModel load_birnn(const std::filesystem::path& path) { return birnn_from_checkpoint(read_checkpoint(path)); }

}  // namespace engage
