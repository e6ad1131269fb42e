#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "engage/checkpoint.hpp"
#include "engage/classifier.hpp"
#include "engage/corpus.hpp"
#include "engage/embedding.hpp"
#include "engage/mlp.hpp"

namespace engage {

/// Gated recurrent unit. Gate rows are ordered reset, update, candidate; the
/// candidate's recurrent term is gated after its bias is added.
template <typename Scalar>
struct Gru {
    using Matrix = MatrixX<Scalar>;
    using Vector = VectorX<Scalar>;

    Matrix w_input;   // 3H x D
    Matrix w_hidden;  // 3H x H
    Vector b_input;   // 3H
    Vector b_hidden;  // 3H

    struct Step {
        Vector h_prev, r, z, n, hn;
    };

    Gru() = default;
    Gru(int input_width, int hidden, std::mt19937_64& rng)
        : w_input(fan_in_uniform<Scalar>(3 * hidden, input_width, hidden, rng)),
          w_hidden(fan_in_uniform<Scalar>(3 * hidden, hidden, hidden, rng)),
          b_input(fan_in_uniform<Scalar>(3 * hidden, 1, hidden, rng)),
          b_hidden(fan_in_uniform<Scalar>(3 * hidden, 1, hidden, rng)) {}

    static Gru zeros_like(const Gru& other) {
        Gru g;
        g.w_input = Matrix::Zero(other.w_input.rows(), other.w_input.cols());
        g.w_hidden = Matrix::Zero(other.w_hidden.rows(), other.w_hidden.cols());
        g.b_input = Vector::Zero(other.b_input.size());
        g.b_hidden = Vector::Zero(other.b_hidden.size());
        return g;
    }

    Eigen::Index hidden() const { return w_hidden.cols(); }
    Eigen::Index input_width() const { return w_input.cols(); }

    /// Runs over the columns of `inputs` from a zero state; returns the final state.
    Vector run(const Matrix& inputs, std::vector<Step>* steps = nullptr) const {
        const Eigen::Index h = hidden();
        Vector state = Vector::Zero(h);
        if (steps) steps->clear();
        if (inputs.cols() == 0) return state;
        const Matrix gx = (w_input * inputs).colwise() + b_input;
        for (Eigen::Index t = 0; t < inputs.cols(); ++t) {
            const Vector gh = w_hidden * state + b_hidden;
            Step s;
            s.r = sigmoid(gx.col(t).head(h) + gh.head(h));
            s.z = sigmoid(gx.col(t).segment(h, h) + gh.segment(h, h));
            s.hn = gh.tail(h);
            s.n = (gx.col(t).tail(h).array() + s.r.array() * s.hn.array()).tanh().matrix();
            Vector next = ((Scalar(1) - s.z.array()) * s.n.array() + s.z.array() * state.array()).matrix();
            if (steps) {
                s.h_prev = std::move(state);
                steps->push_back(std::move(s));
            }
            state = std::move(next);
        }
        return state;
    }

    /// Backpropagates dLoss/dFinalState through a recorded run into `grad`.
    void backward(const Matrix& inputs, const std::vector<Step>& steps, Vector dh, Gru& grad) const {
        const Eigen::Index h = hidden();
        if (steps.empty()) return;
        Matrix dgx(3 * h, inputs.cols());
        for (Eigen::Index t = inputs.cols(); t-- > 0;) {
            const Step& s = steps[static_cast<std::size_t>(t)];
            const auto one = Scalar(1);
            const Vector dn = (dh.array() * (one - s.z.array())).matrix();
            const Vector dz = (dh.array() * (s.h_prev.array() - s.n.array())).matrix();
            const Vector dan = (dn.array() * (one - s.n.array().square())).matrix();
            const Vector dar = (dan.array() * s.hn.array() * s.r.array() * (one - s.r.array())).matrix();
            const Vector daz = (dz.array() * s.z.array() * (one - s.z.array())).matrix();
            dgx.col(t) << dar, daz, dan;
            Vector dgh(3 * h);
            dgh << dar, daz, (dan.array() * s.r.array()).matrix();
            grad.w_hidden.noalias() += dgh * s.h_prev.transpose();
            grad.b_hidden += dgh;
            dh = (dh.array() * s.z.array()).matrix() + w_hidden.transpose() * dgh;
        }
        grad.w_input.noalias() += dgx * inputs.transpose();
        grad.b_input += dgx.rowwise().sum();
    }

    template <typename F>
    void for_each_tensor(F&& f) {
        f(w_input);
        f(w_hidden);
        f(b_input);
        f(b_hidden);
    }

private:
    template <typename Derived>
    static Vector sigmoid(const Eigen::MatrixBase<Derived>& x) {
        return x.unaryExpr([](Scalar v) { return logistic(v); });
    }
};

/// Forward and backward GRUs; the encoding is both final states stacked.
template <typename Scalar>
struct BiGru {
    using Matrix = MatrixX<Scalar>;
    using Vector = VectorX<Scalar>;

    Gru<Scalar> forward, backward;

    struct Tape {
        Matrix reversed;
        std::vector<typename Gru<Scalar>::Step> fwd, bwd;
    };

    BiGru() = default;
    BiGru(int input_width, int hidden, std::mt19937_64& rng)
        : forward(input_width, hidden, rng), backward(input_width, hidden, rng) {}

    Eigen::Index hidden() const { return forward.hidden(); }

    Vector encode(const Matrix& inputs, Tape* tape = nullptr) const {
        Vector out(2 * hidden());
        Matrix reversed = inputs.rowwise().reverse();
        out.head(hidden()) = forward.run(inputs, tape ? &tape->fwd : nullptr);
        out.tail(hidden()) = backward.run(reversed, tape ? &tape->bwd : nullptr);
        if (tape) tape->reversed = std::move(reversed);
        return out;
    }

    void backprop(const Matrix& inputs, const Tape& tape, const Vector& grad_out, BiGru& grad) const {
        forward.backward(inputs, tape.fwd, grad_out.head(hidden()), grad.forward);
        backward.backward(tape.reversed, tape.bwd, grad_out.tail(hidden()), grad.backward);
    }

    template <typename F>
    void for_each_tensor(F&& f) {
        forward.for_each_tensor(f);
        backward.for_each_tensor(f);
    }
};

/// Token matrices (one column per token) for one query/response exchange.
template <typename Scalar>
struct PairSequences {
    MatrixX<Scalar> query;
    MatrixX<Scalar> response;
};

/// Separate bidirectional encoders for query and response feeding a one
/// hidden layer tanh classifier. Dropout is applied to the joined encodings
/// during training only.
template <typename Scalar>
class BiRnn {
public:
    using Matrix = MatrixX<Scalar>;
    using Vector = VectorX<Scalar>;

    BiRnn() = default;
    BiRnn(int input_width, int hidden, int head_hidden, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        query_ = BiGru<Scalar>(input_width, hidden, rng);
        response_ = BiGru<Scalar>(input_width, hidden, rng);
        head_ = Mlp<Scalar>({4 * hidden, head_hidden, 2}, rng(), Activation::tanh);
    }

    Eigen::Index input_width() const { return query_.forward.input_width(); }
    Eigen::Index hidden() const { return query_.hidden(); }
    BiGru<Scalar>& query_encoder() { return query_; }
    BiGru<Scalar>& response_encoder() { return response_; }
    const BiGru<Scalar>& query_encoder() const { return query_; }
    const BiGru<Scalar>& response_encoder() const { return response_; }
    Mlp<Scalar>& head() { return head_; }
    const Mlp<Scalar>& head() const { return head_; }

    Vector encode(const PairSequences<Scalar>& pair) const {
        Vector out(4 * hidden());
        out << query_.encode(pair.query), response_.encode(pair.response);
        return out;
    }

    /// Probability of class 1 per pair, without dropout.
    Vector predict(std::span<const PairSequences<Scalar>> pairs) const {
        if (pairs.empty()) return Vector();
        Matrix enc(4 * hidden(), static_cast<Eigen::Index>(pairs.size()));
        for (std::size_t i = 0; i < pairs.size(); ++i) enc.col(static_cast<Eigen::Index>(i)) = encode(pairs[i]);
        return softmax_columns(head_.logits(enc)).row(1).transpose();
    }

    /// Weighted cross entropy of a batch and its gradient (flat, see
    /// parameters()). `mask`, when given, multiplies the joined encodings.
    Scalar loss_and_gradient(std::span<const PairSequences<Scalar>> batch, std::span<const int> labels,
                             std::span<const Scalar> weights, const Matrix* mask, Vector& grad) const {
        const auto b = static_cast<Eigen::Index>(batch.size());
        std::vector<typename BiGru<Scalar>::Tape> q_tapes(batch.size()), r_tapes(batch.size());
        Matrix enc(4 * hidden(), b);
        for (Eigen::Index i = 0; i < b; ++i) {
            const auto& p = batch[static_cast<std::size_t>(i)];
            enc.col(i) << query_.encode(p.query, &q_tapes[static_cast<std::size_t>(i)]),
                response_.encode(p.response, &r_tapes[static_cast<std::size_t>(i)]);
        }
        if (mask) enc.array() *= mask->array();
        typename Mlp<Scalar>::Tape tape;
        const Matrix logits = head_.forward(enc, tape);
        Matrix grad_logits;
        const Scalar loss = weighted_cross_entropy<Scalar>(logits, labels, weights, &grad_logits);

        Vector head_grad = Vector::Zero(head_.parameter_count());
        Matrix grad_enc = head_.backward(tape, grad_logits, head_grad);
        if (mask) grad_enc.array() *= mask->array();

        BiRnn zero = zeros_like();
        for (Eigen::Index i = 0; i < b; ++i) {
            const auto& p = batch[static_cast<std::size_t>(i)];
            const Vector g = grad_enc.col(i);
            query_.backprop(p.query, q_tapes[static_cast<std::size_t>(i)], g.head(2 * hidden()), zero.query_);
            response_.backprop(p.response, r_tapes[static_cast<std::size_t>(i)], g.tail(2 * hidden()),
                               zero.response_);
        }
        grad.resize(parameter_count());
        const Eigen::Index enc_count = parameter_count() - head_.parameter_count();
        zero.flatten_encoders(grad.head(enc_count));
        grad.tail(head_.parameter_count()) = head_grad;
        return loss;
    }

    Eigen::Index parameter_count() const {
        Eigen::Index n = head_.parameter_count();
        const_cast<BiRnn*>(this)->for_each_encoder_tensor([&](auto& t) { n += t.size(); });
        return n;
    }

    /// Encoder tensors (query then response; forward then backward direction;
    /// w_input, w_hidden, b_input, b_hidden, column-major), then the head.
    Vector parameters() const {
        Vector flat(parameter_count());
        const Eigen::Index enc_count = flat.size() - head_.parameter_count();
        const_cast<BiRnn*>(this)->flatten_encoders(flat.head(enc_count));
        flat.tail(head_.parameter_count()) = head_.parameters();
        return flat;
    }

    void set_parameters(const Eigen::Ref<const Vector>& flat) {
        if (flat.size() != parameter_count()) throw ValidationError("BiRnn::set_parameters: size mismatch");
        Eigen::Index offset = 0;
        for_each_encoder_tensor([&](auto& t) {
            t.reshaped() = flat.segment(offset, t.size());
            offset += t.size();
        });
        head_.set_parameters(flat.tail(head_.parameter_count()));
    }

    template <typename F>
    void for_each_encoder_tensor(F&& f) {
        query_.for_each_tensor(f);
        response_.for_each_tensor(f);
    }

    template <typename Other>
    BiRnn<Other> cast() const {
        BiRnn<Other> out;
        auto copy = [](const BiGru<Scalar>& from, BiGru<Other>& to) {
            for (auto [src, dst] : {std::pair{&from.forward, &to.forward}, std::pair{&from.backward, &to.backward}}) {
                dst->w_input = src->w_input.template cast<Other>();
                dst->w_hidden = src->w_hidden.template cast<Other>();
                dst->b_input = src->b_input.template cast<Other>();
                dst->b_hidden = src->b_hidden.template cast<Other>();
            }
        };
        copy(query_, out.query_encoder());
        copy(response_, out.response_encoder());
        out.head() = head_.template cast<Other>();
        return out;
    }

private:
    BiRnn zeros_like() const {
        BiRnn z;
        z.query_.forward = Gru<Scalar>::zeros_like(query_.forward);
        z.query_.backward = Gru<Scalar>::zeros_like(query_.backward);
        z.response_.forward = Gru<Scalar>::zeros_like(response_.forward);
        z.response_.backward = Gru<Scalar>::zeros_like(response_.backward);
        return z;
    }

    template <typename Out>
    void flatten_encoders(Out&& out) {
        Eigen::Index offset = 0;
        for_each_encoder_tensor([&](auto& t) {
            out.segment(offset, t.size()) = t.reshaped();
            offset += t.size();
        });
    }

    BiGru<Scalar> query_, response_;
    Mlp<Scalar> head_;
};

struct BiRnnConfig {
    int hidden = 128;
    int head_hidden = 64;
    /// Probability of zeroing each joined-encoding unit during training.
    double dropout = 0.8;
    TrainConfig train = [] {
        TrainConfig t;
        t.learning_rate = 1e-5;
        return t;
    }();
};

struct BiRnnModel {
    BiRnn<float> network;
    int head_hidden = 64;
    double dropout = 0.8;
    EmbeddingBackendSpec backend;
    std::uint64_t seed = 0;
    std::string training_fingerprint;
    std::set<std::string> trained_on;
};

/// Token vectors of both utterances, one column per token.
PairSequences<float> sequences_of(const EmbeddingBackend& backend, std::string_view query, std::string_view response);

struct BiRnnTraining {
    BiRnnModel model;
    FitReport report;
};

BiRnnTraining train_birnn(std::span<const QueryResponsePair> train, std::span<const QueryResponsePair> valid,
                          const BiRnnConfig& cfg, const EmbeddingBackend& backend);

double predict_birnn(const BiRnnModel& model, const EmbeddingBackend& backend, std::string_view query,
                     std::string_view response);
Eigen::VectorXf predict_birnn(const BiRnnModel& model, const EmbeddingBackend& backend,
                              std::span<const QueryResponsePair> pairs);

Checkpoint to_checkpoint(const BiRnnModel& model);
BiRnnModel birnn_from_checkpoint(const Checkpoint& ckpt);
void save(const std::filesystem::path& path, const BiRnnModel& model);
BiRnnModel load_birnn(const std::filesystem::path& path);

}  // namespace engage
