#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "engage/error.hpp"

namespace engage {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class Activation { tanh, relu };

std::string to_string(Activation a);
Activation parse_activation(std::string_view name);

/// Column-wise softmax; each column of `logits` is one sample.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_columns(const Eigen::MatrixBase<Derived>& logits) {
    using Scalar = typename Derived::Scalar;
    MatrixX<Scalar> shifted = logits.rowwise() - logits.colwise().maxCoeff();
    MatrixX<Scalar> e = shifted.array().exp();
    return e.array().rowwise() / e.colwise().sum().array();
}

template <typename Scalar>
Scalar logistic(Scalar x) {
    return x >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-x)) : std::exp(x) / (Scalar(1) + std::exp(x));
}

/// Symmetric uniform fan-in initialisation: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename Scalar>
MatrixX<Scalar> fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    MatrixX<Scalar> m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(dist(rng));
    return m;
}

/// Fully connected network. Inputs are columns; hidden layers share one
/// activation and the last layer emits raw logits.
template <typename Scalar>
class Mlp {
public:
    using Matrix = MatrixX<Scalar>;
    using Vector = VectorX<Scalar>;

    struct Layer {
        Matrix weights;  // out x in
        Vector bias;
    };

    /// Per-layer activations kept for the backward pass; front() is the input.
    struct Tape {
        std::vector<Matrix> activations;
    };

    Mlp() = default;

    Mlp(std::vector<int> widths, std::uint64_t seed, Activation hidden = Activation::tanh)
        : widths_(std::move(widths)), activation_(hidden) {
        if (widths_.size() < 2) throw ValidationError("Mlp needs at least input and output widths");
        for (int w : widths_)
            if (w <= 0) throw ValidationError("Mlp widths must be positive");
        std::mt19937_64 rng(seed);
        for (std::size_t k = 0; k + 1 < widths_.size(); ++k) {
            Layer layer;
            layer.weights = fan_in_uniform<Scalar>(widths_[k + 1], widths_[k], widths_[k], rng);
            layer.bias = fan_in_uniform<Scalar>(widths_[k + 1], 1, widths_[k], rng);
            layers_.push_back(std::move(layer));
        }
    }

    const std::vector<int>& widths() const { return widths_; }
    Activation activation() const { return activation_; }
    Eigen::Index input_width() const { return widths_.front(); }
    Eigen::Index output_width() const { return widths_.back(); }
    std::vector<Layer>& layers() { return layers_; }
    const std::vector<Layer>& layers() const { return layers_; }

    Matrix forward(const Eigen::Ref<const Matrix>& inputs, Tape& tape) const {
        check_input(inputs);
        tape.activations.clear();
        tape.activations.push_back(inputs);
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            Matrix z = (layers_[k].weights * tape.activations.back()).colwise() + layers_[k].bias;
            if (k + 1 < layers_.size()) activate(z);
            tape.activations.push_back(std::move(z));
        }
        return tape.activations.back();
    }

    Matrix logits(const Eigen::Ref<const Matrix>& inputs) const {
        Tape tape;
        return forward(inputs, tape);
    }

    Matrix probabilities(const Eigen::Ref<const Matrix>& inputs) const { return softmax_columns(logits(inputs)); }

    /// Backpropagates dLoss/dLogits through the recorded tape. Adds parameter
    /// gradients (flattened, see parameters()) into `grad` and returns
    /// dLoss/dInputs.
    Matrix backward(const Tape& tape, Matrix grad_out, Vector& grad) const {
        if (grad.size() != parameter_count()) grad = Vector::Zero(parameter_count());
        Eigen::Index offset = parameter_count();
        for (std::size_t k = layers_.size(); k-- > 0;) {
            const auto& layer = layers_[k];
            if (k + 1 < layers_.size()) grad_out.array() *= derivative(tape.activations[k + 1]).array();
            offset -= layer.bias.size();
            grad.segment(offset, layer.bias.size()) += grad_out.rowwise().sum();
            offset -= layer.weights.size();
            Eigen::Map<Matrix> gw(grad.data() + offset, layer.weights.rows(), layer.weights.cols());
            gw += grad_out * tape.activations[k].transpose();
            grad_out = layer.weights.transpose() * grad_out;
        }
        return grad_out;
    }

    Eigen::Index parameter_count() const {
        Eigen::Index n = 0;
        for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
        return n;
    }

    /// Layer by layer: weights (column-major) then bias.
    Vector parameters() const {
        Vector flat(parameter_count());
        Eigen::Index offset = 0;
        for (const auto& l : layers_) {
            flat.segment(offset, l.weights.size()) = l.weights.reshaped();
            offset += l.weights.size();
            flat.segment(offset, l.bias.size()) = l.bias;
            offset += l.bias.size();
        }
        return flat;
    }

    void set_parameters(const Eigen::Ref<const Vector>& flat) {
        if (flat.size() != parameter_count()) throw ValidationError("Mlp::set_parameters: size mismatch");
        Eigen::Index offset = 0;
        for (auto& l : layers_) {
            l.weights.reshaped() = flat.segment(offset, l.weights.size());
            offset += l.weights.size();
            l.bias = flat.segment(offset, l.bias.size());
            offset += l.bias.size();
        }
    }

    template <typename Other>
    Mlp<Other> cast() const {
        Mlp<Other> out;
        out.assign(widths_, activation_);
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            out.layers()[k].weights = layers_[k].weights.template cast<Other>();
            out.layers()[k].bias = layers_[k].bias.template cast<Other>();
        }
        return out;
    }

    /// Zero-filled network of the given shape.
    void assign(std::vector<int> widths, Activation hidden) {
        widths_ = std::move(widths);
        activation_ = hidden;
        layers_.clear();
        for (std::size_t k = 0; k + 1 < widths_.size(); ++k)
            layers_.push_back({Matrix::Zero(widths_[k + 1], widths_[k]), Vector::Zero(widths_[k + 1])});
    }

private:
    void check_input(const Eigen::Ref<const Matrix>& inputs) const {
        if (layers_.empty()) throw ValidationError("Mlp used before initialisation");
        if (inputs.rows() != input_width())
            throw ValidationError("Mlp input width " + std::to_string(inputs.rows()) + ", expected " +
                                  std::to_string(input_width()));
    }

    void activate(Matrix& z) const {
        if (activation_ == Activation::tanh) z = z.array().tanh();
        else z = z.cwiseMax(Scalar(0));
    }

    Matrix derivative(const Matrix& activated) const {
        if (activation_ == Activation::tanh) return (Scalar(1) - activated.array().square()).matrix();
        return (activated.array() > Scalar(0)).template cast<Scalar>().matrix();
    }

    std::vector<int> widths_;
    Activation activation_ = Activation::tanh;
    std::vector<Layer> layers_;
};

/// sum_i w_i * -log softmax(logits_i)[y_i] / sum_i w_i. When `grad` is given it
/// receives dLoss/dLogits.
template <typename Scalar>
Scalar weighted_cross_entropy(const MatrixX<Scalar>& logits, std::span<const int> labels,
                              std::span<const Scalar> weights, MatrixX<Scalar>* grad = nullptr) {
    const auto n = logits.cols();
    if (static_cast<Eigen::Index>(labels.size()) != n || static_cast<Eigen::Index>(weights.size()) != n)
        throw ValidationError("weighted_cross_entropy: size mismatch");
    MatrixX<Scalar> probs = softmax_columns(logits);
    Scalar total_weight = 0;
    Scalar loss = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const Scalar p = std::max(probs(labels[i], i), std::numeric_limits<Scalar>::min());
        loss -= weights[i] * std::log(p);
        total_weight += weights[i];
    }
    if (total_weight <= 0) throw ValidationError("weighted_cross_entropy: weights sum to zero");
    if (grad) {
        *grad = probs;
        for (Eigen::Index i = 0; i < n; ++i) {
            (*grad)(labels[i], i) -= Scalar(1);
            grad->col(i) *= weights[i] / total_weight;
        }
    }
    return loss / total_weight;
}

/// Adaptive-moment gradient descent over a flat parameter vector.
template <typename Scalar>
class Adam {
public:
    explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
        : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

    void step(VectorX<Scalar>& params, const VectorX<Scalar>& grad) {
        if (m_.size() != params.size()) {
            m_ = VectorX<Scalar>::Zero(params.size());
            v_ = VectorX<Scalar>::Zero(params.size());
        }
        ++t_;
        m_ = Scalar(beta1_) * m_ + Scalar(1 - beta1_) * grad;
        v_ = Scalar(beta2_) * v_ + Scalar(1 - beta2_) * grad.cwiseAbs2();
        const Scalar c1 = Scalar(1 - std::pow(beta1_, t_));
        const Scalar c2 = Scalar(1 - std::pow(beta2_, t_));
        params.array() -= Scalar(lr_) * (m_.array() / c1) / ((v_.array() / c2).sqrt() + Scalar(eps_));
    }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    VectorX<Scalar> m_, v_;
};

template <typename Scalar>
class Sgd {
public:
    explicit Sgd(double learning_rate) : lr_(learning_rate) {}
    void step(VectorX<Scalar>& params, const VectorX<Scalar>& grad) { params -= Scalar(lr_) * grad; }

private:
    double lr_;
};

}  // namespace engage
