#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "engage/embedding.hpp"
#include "engage/mlp.hpp"

namespace engage {

struct NamedTensor {
    std::string name;
    Eigen::MatrixXf values;
};

/// Archive layout:
///   8 bytes  magic "ENGAGE01"
///   uint32   header length (little-endian)
///   header   UTF-8 JSON; "tensors" lists {name, rows, cols} in payload order
///   payload  float32 little-endian, each tensor column-major
struct Checkpoint {
    nlohmann::json header;
    std::vector<NamedTensor> tensors;

    const NamedTensor& tensor(const std::string& name) const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
Checkpoint read_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const EmbeddingBackendSpec& spec);
EmbeddingBackendSpec backend_from_json(const nlohmann::json& j);

/// Appends the layers of `net` as "<prefix>.<k>.weight" / "<prefix>.<k>.bias".
void append_mlp(Checkpoint& ckpt, const std::string& prefix, const Mlp<float>& net);
Mlp<float> extract_mlp(const Checkpoint& ckpt, const std::string& prefix, const std::vector<int>& widths,
                       Activation activation);

}  // namespace engage
