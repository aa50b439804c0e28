#pragma once

#include <string>
#include <vector>

#include "lat/retrieval.hpp"

namespace lat {

// Binary embedding container:
//   bytes 0..7   magic "LATEMBED"
//   bytes 8..11  u32 version (currently 1)
//   bytes 12..15 u32 reserved (0)
//   u32 E (embedding dimension), u32 count
//   count records of: u32 person_id, u32 camera_id, E little-endian f32
// An empty set is a valid header-only file with count 0.
inline constexpr char kEmbeddingMagic[8] = {'L', 'A', 'T', 'E', 'M', 'B', 'E', 'D'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

void write_embeddings(const std::string& path, const std::vector<LabeledEmbedding>& records,
                      std::size_t dim);
std::vector<LabeledEmbedding> read_embeddings(const std::string& path);

// Plain-text mirror for debugging: one JSON object per line.
void write_embeddings_jsonl(const std::string& path,
                            const std::vector<LabeledEmbedding>& records);

}  // namespace lat
