#include "lat/embedding_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "lat/error.hpp"

namespace lat {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw TruncatedFileError("embedding file ends inside " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

float get_f32(std::istream& is, const std::string& what) {
    const std::uint32_t bits = get_u32(is, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

void write_embeddings(const std::string& path, const std::vector<LabeledEmbedding>& records,
                      std::size_t dim) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(kEmbeddingMagic, 8);
    put_u32(os, kEmbeddingVersion);
    put_u32(os, 0);  // reserved
    put_u32(os, static_cast<std::uint32_t>(dim));
    put_u32(os, static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        if (r.vec.size() != dim) {
            throw ShapeError("write_embeddings: record of dim " + std::to_string(r.vec.size()) +
                             " in a file of dim " + std::to_string(dim));
        }
        put_u32(os, static_cast<std::uint32_t>(r.person_id));
        put_u32(os, static_cast<std::uint32_t>(r.camera_id));
        for (float v : r.vec) put_f32(os, v);
    }
    if (!os) throw IoError("short write to " + path);
}

std::vector<LabeledEmbedding> read_embeddings(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kEmbeddingMagic, 8) != 0) {
        throw VersionError(path + ": not an embedding file (bad magic)");
    }
    const std::uint32_t version = get_u32(is, "header");
    if (version != kEmbeddingVersion) {
        throw VersionError(path + ": embedding format version " + std::to_string(version) +
                           ", expected " + std::to_string(kEmbeddingVersion));
    }
    (void)get_u32(is, "header");  // reserved
    const std::uint32_t dim = get_u32(is, "header");
    const std::uint32_t count = get_u32(is, "header");
    std::vector<LabeledEmbedding> records;
    records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        LabeledEmbedding r;
        r.person_id = static_cast<int>(get_u32(is, "record " + std::to_string(i)));
        r.camera_id = static_cast<int>(get_u32(is, "record " + std::to_string(i)));
        r.vec.resize(dim);
        for (std::uint32_t d = 0; d < dim; ++d) {
            r.vec[d] = get_f32(is, "record " + std::to_string(i));
        }
        records.push_back(std::move(r));
    }
    return records;
}

void write_embeddings_jsonl(const std::string& path,
                            const std::vector<LabeledEmbedding>& records) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    for (const auto& r : records) {
        nlohmann::json j;
        j["person_id"] = r.person_id;
        j["camera_id"] = r.camera_id;
        j["vector"] = r.vec;
        os << j.dump() << "\n";
    }
    if (!os) throw IoError("short write to " + path);
}

}  // namespace lat
