#include "engage/embedding.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "engage/text.hpp"

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace engage {

namespace fs = std::filesystem;

std::string to_string(Pooling pooling) { return pooling == Pooling::mean ? "mean" : "max"; }

std::string to_string(BackendKind kind) { return kind == BackendKind::contextual ? "contextual" : "static"; }

Pooling parse_pooling(std::string_view name) {
    if (name == "mean") return Pooling::mean;
    if (name == "max") return Pooling::max;
    throw ValidationError("unknown pooling '" + std::string(name) + "' (expected mean or max)");
}

BackendKind parse_backend_kind(std::string_view name) {
    if (name == "contextual") return BackendKind::contextual;
    if (name == "static") return BackendKind::static_vectors;
    throw ValidationError("unknown backend '" + std::string(name) + "' (expected contextual or static)");
}

std::string EmbeddingBackendSpec::id() const {
    std::string model = model_identifier;
    if (kind == BackendKind::static_vectors) model = fs::path(model_identifier).stem().string();
    std::string out = to_string(kind) + "-";
    for (char c : model) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_');
    return out + "-" + std::to_string(dimension);
}

UtteranceVector pool(const TokenEmbeddingSequence& seq, Pooling pooling) {
    return {pool_rows(seq.vectors, pooling), pooling};
}

Eigen::VectorXf build_features(const UtteranceVector& q, const UtteranceVector& r) {
    if (q.values.size() != r.values.size())
        throw ValidationError("build_features: query and response dimensions differ (" +
                              std::to_string(q.values.size()) + " vs " + std::to_string(r.values.size()) + ")");
    Eigen::VectorXf out(q.values.size() + r.values.size());
    out << q.values, r.values;
    return out;
}

// ---------------------------------------------------------------------------
// Static word vectors

StaticEmbeddingBackend::StaticEmbeddingBackend(EmbeddingBackendSpec spec, std::vector<std::string> words,
                                               Eigen::MatrixXf table)
    : spec_(std::move(spec)), table_(std::move(table)) {
    if (static_cast<Eigen::Index>(words.size()) != table_.rows())
        throw ValidationError("static backend: word count does not match table rows");
    if (spec_.dimension != table_.cols())
        throw LoadError("static backend: declared dimension " + std::to_string(spec_.dimension) +
                        " but vectors have " + std::to_string(table_.cols()));
    for (Eigen::Index i = 0; i < table_.rows(); ++i) index_.emplace(words[i], i);
}

std::shared_ptr<StaticEmbeddingBackend> StaticEmbeddingBackend::load(const fs::path& path, int expected_dimension) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw LoadError("static vectors '" + path.string() +
                        "' not found; point --vectors at a word2vec file (e.g. GoogleNews-vectors-negative300.bin)");
    std::vector<std::string> words;
    std::vector<float> values;
    long dim = -1;

    if (path.extension() == ".bin") {
        long count = 0;
        in >> count >> dim;
        in.get();
        if (!in || count < 0 || dim <= 0) throw LoadError("static vectors '" + path.string() + "': bad header");
        words.reserve(count);
        values.resize(static_cast<std::size_t>(count) * dim);
        for (long i = 0; i < count; ++i) {
            std::string word;
            char c;
            while (in.get(c) && c != ' ')
                if (c != '\n') word.push_back(c);
            in.read(reinterpret_cast<char*>(values.data() + i * dim), dim * sizeof(float));
            if (!in) throw LoadError("static vectors '" + path.string() + "': truncated at entry " + std::to_string(i));
            words.push_back(std::move(word));
        }
    } else {
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (is_blank(line)) continue;
            std::istringstream fields(line);
            std::string word;
            fields >> word;
            std::vector<float> row;
            float v;
            while (fields >> v) row.push_back(v);
            if (lineno == 1 && row.size() == 1 && word.find_first_not_of("0123456789") == std::string::npos)
                continue;  // "<count> <dim>" header
            if (dim < 0) dim = static_cast<long>(row.size());
            if (static_cast<long>(row.size()) != dim || dim == 0)
                throw LoadError("static vectors '" + path.string() + "': line " + std::to_string(lineno) +
                                " has " + std::to_string(row.size()) + " values, expected " + std::to_string(dim));
            words.push_back(std::move(word));
            values.insert(values.end(), row.begin(), row.end());
        }
        if (dim < 0) throw LoadError("static vectors '" + path.string() + "': empty file");
    }
    if (expected_dimension > 0 && dim != expected_dimension)
        throw LoadError("static vectors '" + path.string() + "' have dimension " + std::to_string(dim) +
                        ", expected " + std::to_string(expected_dimension));

    Eigen::MatrixXf table = Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        values.data(), static_cast<Eigen::Index>(words.size()), dim);
    EmbeddingBackendSpec spec;
    spec.kind = BackendKind::static_vectors;
    spec.dimension = static_cast<int>(dim);
    spec.model_identifier = path.string();
    return std::make_shared<StaticEmbeddingBackend>(std::move(spec), std::move(words), std::move(table));
}

TokenEmbeddingSequence StaticEmbeddingBackend::embed(std::string_view text) const {
    if (is_blank(text)) throw ValidationError("embed: empty text");
    TokenEmbeddingSequence seq;
    seq.tokens = word_tokens(text, false);
    if (seq.tokens.empty()) seq.tokens.push_back("<unk>");  // punctuation only
    seq.vectors = Eigen::MatrixXf::Zero(static_cast<Eigen::Index>(seq.tokens.size()), spec_.dimension);
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
        auto it = index_.find(seq.tokens[i]);
        if (it == index_.end()) it = index_.find(to_lower(seq.tokens[i]));
        if (it != index_.end()) seq.vectors.row(static_cast<Eigen::Index>(i)) = table_.row(it->second);
    }
    return seq;
}

void write_word2vec_text(const fs::path& path, std::span<const std::string> words, const Eigen::MatrixXf& table) {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write '" + path.string() + "'");
    out.precision(9);
    out << words.size() << ' ' << table.cols() << '\n';
    for (std::size_t i = 0; i < words.size(); ++i) {
        out << words[i];
        for (Eigen::Index j = 0; j < table.cols(); ++j) out << ' ' << table(static_cast<Eigen::Index>(i), j);
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Cache files

void write_vec_file(const fs::path& path, const Eigen::MatrixXf& vectors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write '" + path.string() + "'");
    std::int32_t header[2] = {static_cast<std::int32_t>(vectors.rows()), static_cast<std::int32_t>(vectors.cols())};
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = vectors;
    out.write(reinterpret_cast<const char*>(rows.data()), static_cast<std::streamsize>(rows.size() * sizeof(float)));
    if (!out) throw LoadError("short write to '" + path.string() + "'");
}

Eigen::MatrixXf read_vec_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open '" + path.string() + "'");
    std::int32_t header[2] = {0, 0};
    in.read(reinterpret_cast<char*>(header), sizeof header);
    if (!in || header[0] <= 0 || header[1] <= 0) throw LoadError("'" + path.string() + "': bad vec header");
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(header[0], header[1]);
    in.read(reinterpret_cast<char*>(rows.data()), static_cast<std::streamsize>(rows.size() * sizeof(float)));
    if (!in) throw LoadError("'" + path.string() + "': truncated vec payload");
    return rows;
}

EmbeddingCache::EmbeddingCache(fs::path root, std::string backend_id) : dir_(std::move(root) / backend_id) {}

fs::path EmbeddingCache::path_for(std::string_view text) const { return dir_ / (sha256_hex(trim(text)) + ".vec"); }

std::optional<TokenEmbeddingSequence> EmbeddingCache::load(std::string_view text) const {
    auto path = path_for(text);
    std::error_code ec;
    if (!fs::exists(path, ec)) return std::nullopt;
    TokenEmbeddingSequence seq;
    seq.vectors = read_vec_file(path);
    // Token strings are not stored; positions stand in for them.
    for (Eigen::Index i = 0; i < seq.vectors.rows(); ++i) seq.tokens.push_back("<" + std::to_string(i) + ">");
    return seq;
}

void EmbeddingCache::store(std::string_view text, const TokenEmbeddingSequence& seq) const {
    fs::create_directories(dir_);
    auto final_path = path_for(text);
    std::ostringstream tmp_name;
    tmp_name << final_path.filename().string() << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id())
             << '.' << std::random_device{}();
    auto tmp = dir_ / tmp_name.str();
    write_vec_file(tmp, seq.vectors);
    fs::rename(tmp, final_path);
}

// ---------------------------------------------------------------------------
// Contextual provider

ExternalCommandBackend::ExternalCommandBackend(EmbeddingBackendSpec spec, std::string command)
    : spec_(std::move(spec)), command_(std::move(command)) {}

namespace {

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out.push_back(c);
    }
    return out + "'";
}

}  // namespace

TokenEmbeddingSequence ExternalCommandBackend::embed(std::string_view text) const {
    if (is_blank(text)) throw ValidationError("embed: empty text");
    if (command_.empty())
        throw LoadError("contextual embeddings for this text are not cached under '" + spec_.cache_dir.string() + "/" +
                        spec_.id() +
                        "' and no provider is configured; set ENGAGE_CONTEXTUAL_CMD (for example "
                        "'python3 tools/contextual_embed.py') or pre-populate the cache");
    std::lock_guard lock(mutex_);
    auto scratch = fs::temp_directory_path() / ("engage-embed-" + sha256_hex(text).substr(0, 16));
    fs::create_directories(scratch);
    auto input = scratch / "text.txt";
    auto output = scratch / "out.vec";
    {
        std::ofstream out(input, std::ios::binary);
        out << text;
    }
    std::string cmd = command_ + " " + shell_quote(spec_.model_identifier) + " " + shell_quote(input.string()) + " " +
                      shell_quote(output.string());
    int status = std::system(cmd.c_str());
    if (status != 0 || !fs::exists(output)) {
        fs::remove_all(scratch);
        throw LoadError("contextual provider failed (status " + std::to_string(status) + "): " + cmd +
                        "; check that the model weights for '" + spec_.model_identifier + "' are available");
    }
    TokenEmbeddingSequence seq;
    seq.vectors = read_vec_file(output);
    fs::remove_all(scratch);
    if (seq.vectors.cols() != spec_.dimension)
        throw LoadError("contextual provider returned dimension " + std::to_string(seq.vectors.cols()) +
                        ", expected " + std::to_string(spec_.dimension));
    for (Eigen::Index i = 0; i < seq.vectors.rows(); ++i) seq.tokens.push_back("<" + std::to_string(i) + ">");
    return seq;
}

CachedEmbeddingBackend::CachedEmbeddingBackend(std::shared_ptr<const EmbeddingBackend> inner)
    : inner_(std::move(inner)), cache_(inner_->spec().cache_dir, inner_->spec().id()) {}

TokenEmbeddingSequence CachedEmbeddingBackend::embed(std::string_view text) const {
    if (is_blank(text)) throw ValidationError("embed: empty text");
    if (auto hit = cache_.load(text)) {
        if (hit->dimension() != spec().dimension) throw LoadError("cache entry has wrong dimension: " + cache_.path_for(text).string());
        return *hit;
    }
    auto seq = inner_->embed(trim(text));
    cache_.store(text, seq);
    return seq;
}

fs::path default_cache_dir() {
    if (const char* env = std::getenv("ENGAGE_CACHE_DIR"); env && *env) return env;
    return ".engage_cache";
}

std::shared_ptr<const EmbeddingBackend> make_backend(EmbeddingBackendSpec spec, std::string provider_command) {
    if (spec.cache_dir.empty()) spec.cache_dir = default_cache_dir();
    if (spec.kind == BackendKind::static_vectors) {
        auto backend = StaticEmbeddingBackend::load(spec.model_identifier, spec.dimension);
        return backend;
    }
    if (spec.dimension <= 0) spec.dimension = kContextualDimension;
    if (spec.model_identifier.empty()) spec.model_identifier = "bert-base-uncased";
    if (provider_command.empty())
        if (const char* env = std::getenv("ENGAGE_CONTEXTUAL_CMD"); env) provider_command = env;
    auto provider = std::make_shared<ExternalCommandBackend>(spec, std::move(provider_command));
    return std::make_shared<CachedEmbeddingBackend>(std::move(provider));
}

// ---------------------------------------------------------------------------

PairFeaturizer::PairFeaturizer(std::shared_ptr<const EmbeddingBackend> backend, Pooling pooling)
    : backend_(std::move(backend)), pooling_(pooling) {}

Eigen::VectorXf PairFeaturizer::utterance(std::string_view text) {
    std::string key(trim(text));
    {
        std::lock_guard lock(mutex_);
        if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    }
    Eigen::VectorXf v = pool(backend_->embed(key), pooling_).values;
    std::lock_guard lock(mutex_);
    memo_.emplace(key, v);
    return v;
}

Eigen::VectorXf PairFeaturizer::features(std::string_view query, std::string_view response) {
    return build_features({utterance(query), pooling_}, {utterance(response), pooling_});
}

Eigen::MatrixXf PairFeaturizer::matrix(std::span<const QueryResponsePair> pairs, unsigned jobs) {
    const auto n = static_cast<Eigen::Index>(pairs.size());
    Eigen::MatrixXf out(2 * dimension(), n);
    auto work = [&](Eigen::Index begin, Eigen::Index step) {
        for (Eigen::Index i = begin; i < n; i += step) out.col(i) = features(pairs[i].query, pairs[i].response);
    };
    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<Eigen::Index>(n, 1))));
    if (jobs == 1) {
        work(0, 1);
        return out;
    }
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(jobs);
    for (unsigned j = 0; j < jobs; ++j)
        workers.emplace_back([&, j] {
            try {
                work(j, jobs);
            } catch (...) {
                errors[j] = std::current_exception();
            }
        });
    for (auto& w : workers) w.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

}  // namespace engage
