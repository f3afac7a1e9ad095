#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "trafficrag/embedding.hpp"

namespace trafficrag {

struct IndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr std::size_t kDefaultTopK = 5;
constexpr double kCosineEpsilon = 1e-8;

// Epsilon-stabilized cosine: (a.b) / (|a| * |b| + 1e-8).
// Dot product and norms accumulate in index order so the expression is
// bitwise symmetric in its arguments.
inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim())
        throw IndexError("cosine_similarity: dimension mismatch " + std::to_string(a.dim()) +
                         " vs " + std::to_string(b.dim()));
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb) + kCosineEpsilon);
}

struct ScoredChunk {
    std::uint64_t chunk_id;
    double score;
    bool operator==(const ScoredChunk&) const = default;
};

struct RetrievalResult {
    std::vector<ScoredChunk> ranked;  // score descending, ties by ascending chunk_id
};

class VectorDatabase {
public:
    VectorDatabase() = default;
    explicit VectorDatabase(std::size_t dim) : dim_(dim) {}

    static VectorDatabase build(std::vector<std::pair<std::uint64_t, EmbeddingVector>> entries) {
        VectorDatabase db;
        for (auto& [id, vec] : entries) db.add(id, std::move(vec));
        return db;
    }

    void add(std::uint64_t chunk_id, EmbeddingVector vec) {
        vec.validate();
        if (entries_.empty() && dim_ == 0) dim_ = vec.dim();
        if (vec.dim() != dim_)
            throw IndexError("vector dim " + std::to_string(vec.dim()) +
                             " does not match index dim " + std::to_string(dim_));
        for (const auto& e : entries_)
            if (e.first == chunk_id)
                throw IndexError("duplicate chunk_id " + std::to_string(chunk_id) + " in index");
        entries_.emplace_back(chunk_id, std::move(vec));
    }

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return entries_.size(); }
    const std::vector<std::pair<std::uint64_t, EmbeddingVector>>& entries() const {
        return entries_;
    }

    bool operator==(const VectorDatabase&) const = default;

private:
    std::size_t dim_ = 0;
    std::vector<std::pair<std::uint64_t, EmbeddingVector>> entries_;
};

// Exhaustive flat search: score every entry, full sort, truncate to k.
inline RetrievalResult top_k(const VectorDatabase& db, const EmbeddingVector& query,
                             std::size_t k = kDefaultTopK) {
    if (k < 1) throw IndexError("top_k: k must be >= 1");
    if (db.size() == 0) return {};
    if (query.dim() != db.dim())
        throw IndexError("top_k: query dim " + std::to_string(query.dim()) +
                         " does not match index dim " + std::to_string(db.dim()));
    RetrievalResult result;
    result.ranked.reserve(db.size());
    for (const auto& [id, vec] : db.entries())
        result.ranked.push_back({id, cosine_similarity(query, vec)});
    std::sort(result.ranked.begin(), result.ranked.end(),
              [](const ScoredChunk& a, const ScoredChunk& b) {
                  if (a.score != b.score) return a.score > b.score;
                  return a.chunk_id < b.chunk_id;
              });
    if (result.ranked.size() > k) result.ranked.resize(k);
    return result;
}

// ---------------------------------------------------------------------------
// Binary index file: magic "TRAG", u16 version, u32 dim, u64 count,
// then count * [u64 chunk_id, dim * f64]. Little-endian, no compression.
// ---------------------------------------------------------------------------

namespace index_io_detail {

template <typename T>
void write_le(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.write(buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const char* what) {
    char buf[sizeof(T)];
    in.read(buf, sizeof(T));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(T)))
        throw IndexError(std::string("index file truncated while reading ") + what);
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

}  // namespace index_io_detail

constexpr char kIndexMagic[4] = {'T', 'R', 'A', 'G'};
constexpr std::uint16_t kIndexVersion = 1;

inline void save_index(const VectorDatabase& db, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IndexError("cannot open index file for writing: " + path);
    out.write(kIndexMagic, 4);
    index_io_detail::write_le<std::uint16_t>(out, kIndexVersion);
    index_io_detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(db.dim()));
    index_io_detail::write_le<std::uint64_t>(out, db.size());
    for (const auto& [id, vec] : db.entries()) {
        index_io_detail::write_le<std::uint64_t>(out, id);
        for (double v : vec.values) index_io_detail::write_le<double>(out, v);
    }
    if (!out) throw IndexError("write failure on index file: " + path);
}

inline VectorDatabase load_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IndexError("cannot open index file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kIndexMagic, 4) != 0)
        throw IndexError("bad index magic in " + path);
    const auto version = index_io_detail::read_le<std::uint16_t>(in, "version");
    if (version != kIndexVersion)
        throw IndexError("unsupported index version " + std::to_string(version));
    const auto dim = index_io_detail::read_le<std::uint32_t>(in, "dim");
    const auto count = index_io_detail::read_le<std::uint64_t>(in, "count");
    VectorDatabase db(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto id = index_io_detail::read_le<std::uint64_t>(in, "chunk_id");
        EmbeddingVector vec;
        vec.values.resize(dim);
        for (std::uint32_t d = 0; d < dim; ++d)
            vec.values[d] = index_io_detail::read_le<double>(in, "vector element");
        db.add(id, std::move(vec));
    }
    // trailing bytes mean the header count disagrees with the payload
    char extra;
    in.read(&extra, 1);
    if (in.gcount() != 0) throw IndexError("index file has trailing bytes: " + path);
    return db;
}

}  // namespace trafficrag
