#include "engage/classifier.hpp"

namespace engage {

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation parse_activation(std::string_view name) {
    if (name == "tanh") return Activation::tanh;
    if (name == "relu") return Activation::relu;
    throw ValidationError("unknown activation '" + std::string(name) + "'");
}

ClassWeights compute_class_weights(std::size_t negatives, std::size_t positives) {
    if (negatives == 0 || positives == 0)
        throw ValidationError("compute_class_weights: both classes must be present");
    const double total = static_cast<double>(negatives + positives);
    return {total / (2.0 * static_cast<double>(negatives)), total / (2.0 * static_cast<double>(positives))};
}

ClassWeights compute_class_weights(std::span<const int> labels) {
    std::size_t counts[2] = {0, 0};
    for (int y : labels) {
        if (y != 0 && y != 1) throw ValidationError("compute_class_weights: labels must be 0 or 1");
        ++counts[y];
    }
    return compute_class_weights(counts[0], counts[1]);
}

TrainConfig TrainConfig::for_pooling(Pooling pooling) {
    TrainConfig cfg;
    cfg.learning_rate = pooling == Pooling::mean ? 1e-3 : 1e-2;
    return cfg;
}

}  // namespace engage
