#include "engage/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "engage/error.hpp"

namespace engage {

namespace {

constexpr char kMagic[8] = {'E', 'N', 'G', 'A', 'G', 'E', '0', '1'};

}  // namespace

const NamedTensor& Checkpoint::tensor(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw LoadError("checkpoint has no tensor '" + name + "'");
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    nlohmann::json header = ckpt.header;
    header["tensors"] = nlohmann::json::array();
    for (const auto& t : ckpt.tensors)
        header["tensors"].push_back({{"name", t.name}, {"rows", t.values.rows()}, {"cols", t.values.cols()}});
    const std::string text = header.dump();
    const auto len = static_cast<std::uint32_t>(text.size());
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : ckpt.tensors)
        out.write(reinterpret_cast<const char*>(t.values.data()),
                  static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    if (!out) throw LoadError("checkpoint write failed");
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write checkpoint '" + path.string() + "'");
    write_checkpoint(out, ckpt);
}

Checkpoint read_checkpoint(std::istream& in) {
    char magic[8];
    std::uint32_t len = 0;
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw LoadError("not a checkpoint archive (bad magic)");
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string text(len, '\0');
    in.read(text.data(), len);
    if (!in) throw LoadError("truncated checkpoint header");
    Checkpoint ckpt;
    try {
        ckpt.header = nlohmann::json::parse(text);
        for (const auto& t : ckpt.header.at("tensors")) {
            NamedTensor tensor;
            tensor.name = t.at("name").get<std::string>();
            tensor.values.resize(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
            in.read(reinterpret_cast<char*>(tensor.values.data()),
                    static_cast<std::streamsize>(tensor.values.size() * sizeof(float)));
            if (!in) throw LoadError("truncated checkpoint tensor '" + tensor.name + "'");
            ckpt.tensors.push_back(std::move(tensor));
        }
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("malformed checkpoint header: ") + e.what());
    }
    return ckpt;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("checkpoint '" + path.string() + "' not found");
    return read_checkpoint(in);
}

nlohmann::json to_json(const EmbeddingBackendSpec& spec) {
    return {{"kind", to_string(spec.kind)},
            {"dimension", spec.dimension},
            {"model_identifier", spec.model_identifier},
            {"id", spec.id()}};
}

EmbeddingBackendSpec backend_from_json(const nlohmann::json& j) {
    EmbeddingBackendSpec spec;
    spec.kind = parse_backend_kind(j.at("kind").get<std::string>());
    spec.dimension = j.at("dimension").get<int>();
    spec.model_identifier = j.at("model_identifier").get<std::string>();
    return spec;
}

void append_mlp(Checkpoint& ckpt, const std::string& prefix, const Mlp<float>& net) {
    for (std::size_t k = 0; k < net.layers().size(); ++k) {
        const auto& layer = net.layers()[k];
        ckpt.tensors.push_back({prefix + "." + std::to_string(k) + ".weight", layer.weights});
        ckpt.tensors.push_back({prefix + "." + std::to_string(k) + ".bias", layer.bias});
    }
}

Mlp<float> extract_mlp(const Checkpoint& ckpt, const std::string& prefix, const std::vector<int>& widths,
                       Activation activation) {
    Mlp<float> net;
    net.assign(widths, activation);
    for (std::size_t k = 0; k < net.layers().size(); ++k) {
        auto& layer = net.layers()[k];
        const auto& w = ckpt.tensor(prefix + "." + std::to_string(k) + ".weight").values;
        const auto& b = ckpt.tensor(prefix + "." + std::to_string(k) + ".bias").values;
        if (w.rows() != layer.weights.rows() || w.cols() != layer.weights.cols() || b.size() != layer.bias.size())
            throw LoadError("checkpoint tensor shapes disagree with declared widths for '" + prefix + "'");
        layer.weights = w;
        layer.bias = b.reshaped();
    }
    return net;
}

}  // namespace engage
