#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "engage/corpus.hpp"
#include "engage/error.hpp"

namespace engage {

enum class BackendKind { contextual, static_vectors };
enum class Pooling { mean, max };

inline constexpr int kContextualDimension = 768;
inline constexpr int kStaticDimension = 300;

std::string to_string(Pooling pooling);
std::string to_string(BackendKind kind);
Pooling parse_pooling(std::string_view name);
BackendKind parse_backend_kind(std::string_view name);

struct EmbeddingBackendSpec {
    BackendKind kind = BackendKind::static_vectors;
    int dimension = kStaticDimension;
    /// Model name (contextual) or vector file path (static).
    std::string model_identifier;
    std::filesystem::path cache_dir;

    /// Directory-safe identifier, e.g. "contextual-bert-base-uncased".
    std::string id() const;
};

/// One row per token.
struct TokenEmbeddingSequence {
    std::vector<std::string> tokens;
    Eigen::MatrixXf vectors;

    Eigen::Index size() const { return vectors.rows(); }
    Eigen::Index dimension() const { return vectors.cols(); }
};

struct UtteranceVector {
    Eigen::VectorXf values;
    Pooling pooling = Pooling::mean;
};

/// Column-wise mean or max over the rows of a token matrix.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> pool_rows(const Eigen::MatrixBase<Derived>& rows,
                                                                     Pooling pooling) {
    if (rows.rows() == 0) throw ValidationError("pool: empty token sequence");
    if (pooling == Pooling::mean) return rows.colwise().mean().transpose();
    return rows.colwise().maxCoeff().transpose();
}

UtteranceVector pool(const TokenEmbeddingSequence& seq, Pooling pooling);

/// Read-only after construction; embed() may be called concurrently.
class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual const EmbeddingBackendSpec& spec() const = 0;
    virtual TokenEmbeddingSequence embed(std::string_view text) const = 0;

    int dimension() const { return spec().dimension; }
};

/// Word-vector lookup table (word2vec text or binary format). Tokens missing
/// from the table embed as zero vectors.
class StaticEmbeddingBackend final : public EmbeddingBackend {
public:
    StaticEmbeddingBackend(EmbeddingBackendSpec spec, std::vector<std::string> words, Eigen::MatrixXf table);

    /// `.bin` files are read as binary word2vec; anything else as text. When
    /// `expected_dimension` is positive the file must match it.
    static std::shared_ptr<StaticEmbeddingBackend> load(const std::filesystem::path& path,
                                                        int expected_dimension = 0);

    const EmbeddingBackendSpec& spec() const override { return spec_; }
    TokenEmbeddingSequence embed(std::string_view text) const override;

    bool contains(const std::string& word) const { return index_.count(word) != 0; }
    std::size_t vocabulary_size() const { return index_.size(); }

private:
    EmbeddingBackendSpec spec_;
    std::unordered_map<std::string, Eigen::Index> index_;
    Eigen::MatrixXf table_;
};

/// Writes a word2vec text file; used to build small vocabularies.
void write_word2vec_text(const std::filesystem::path& path, std::span<const std::string> words,
                         const Eigen::MatrixXf& table);

// <root>/<backend-id>/<sha256(text)>.vec: int32 token count, int32 dimension,
// then token-major little-endian float32 values.
void write_vec_file(const std::filesystem::path& path, const Eigen::MatrixXf& vectors);
Eigen::MatrixXf read_vec_file(const std::filesystem::path& path);

class EmbeddingCache {
public:
    EmbeddingCache(std::filesystem::path root, std::string backend_id);

    std::filesystem::path path_for(std::string_view text) const;
    std::optional<TokenEmbeddingSequence> load(std::string_view text) const;
    /// Write-to-temporary then rename, so readers never observe partial files.
    void store(std::string_view text, const TokenEmbeddingSequence& seq) const;

private:
    std::filesystem::path dir_;
};

/// Contextual embeddings produced by an external provider program, invoked as
/// `<command> <model> <text-file> <output.vec>`; see tools/contextual_embed.py.
class ExternalCommandBackend final : public EmbeddingBackend {
public:
    ExternalCommandBackend(EmbeddingBackendSpec spec, std::string command);

    const EmbeddingBackendSpec& spec() const override { return spec_; }
    TokenEmbeddingSequence embed(std::string_view text) const override;

private:
    EmbeddingBackendSpec spec_;
    std::string command_;
    mutable std::mutex mutex_;
};

/// Consults the on-disk cache before delegating to the wrapped backend.
class CachedEmbeddingBackend final : public EmbeddingBackend {
public:
    explicit CachedEmbeddingBackend(std::shared_ptr<const EmbeddingBackend> inner);

    const EmbeddingBackendSpec& spec() const override { return inner_->spec(); }
    TokenEmbeddingSequence embed(std::string_view text) const override;

private:
    std::shared_ptr<const EmbeddingBackend> inner_;
    EmbeddingCache cache_;
};

/// Default cache root: $ENGAGE_CACHE_DIR, else ./.engage_cache.
std::filesystem::path default_cache_dir();

/// Builds the backend named by `spec`. Static: `model_identifier` is the vector
/// file. Contextual: cache lookups, falling back to `provider_command` (or
/// $ENGAGE_CONTEXTUAL_CMD); a miss with no provider raises LoadError.
std::shared_ptr<const EmbeddingBackend> make_backend(EmbeddingBackendSpec spec,
                                                     std::string provider_command = {});

/// Memoised pooled utterance vectors and query/response feature columns.
class PairFeaturizer {
public:
    PairFeaturizer(std::shared_ptr<const EmbeddingBackend> backend, Pooling pooling);

    Eigen::VectorXf utterance(std::string_view text);
    /// [q ; r], width 2d.
    Eigen::VectorXf features(std::string_view query, std::string_view response);
    /// One column per pair. `jobs` > 1 embeds on worker threads.
    Eigen::MatrixXf matrix(std::span<const QueryResponsePair> pairs, unsigned jobs = 1);

    const EmbeddingBackend& backend() const { return *backend_; }
    Pooling pooling() const { return pooling_; }
    int dimension() const { return backend_->dimension(); }

private:
    std::shared_ptr<const EmbeddingBackend> backend_;
    Pooling pooling_;
    std::mutex mutex_;
    std::unordered_map<std::string, Eigen::VectorXf> memo_;
};

/// Concatenation [q ; r].
Eigen::VectorXf build_features(const UtteranceVector& q, const UtteranceVector& r);

}  // namespace engage
