#pragma once

#include <cstddef>
#include <vector>

#include "lat/error.hpp"

namespace lat {

// A retrieval feature with its identity and camera labels.
struct LabeledEmbedding {
    std::vector<float> vec;
    int person_id = 0;
    int camera_id = 0;
};

// Immutable matrix of gallery embeddings with parallel label arrays.
class GalleryIndex {
public:
    GalleryIndex() = default;
    explicit GalleryIndex(std::size_t dim) : dim_(dim) {}

    void add(const LabeledEmbedding& e);
    void add(std::vector<float> vec, int person_id, int camera_id);

    std::size_t size() const { return person_ids_.size(); }
    std::size_t dim() const { return dim_; }
    const float* row(std::size_t i) const { return data_.data() + i * dim_; }
    int person_id(std::size_t i) const { return person_ids_[i]; }
    int camera_id(std::size_t i) const { return camera_ids_[i]; }

private:
    std::size_t dim_ = 0;
    std::vector<float> data_;
    std::vector<int> person_ids_;
    std::vector<int> camera_ids_;
};

// Options for the evaluation protocol. The same-camera rule removes
// gallery entries sharing both identity and camera with the query before
// ranking (standard for real data; synthetic sets may turn it off).
struct EvalOptions {
    bool exclude_same_camera = true;
    std::size_t cmc_depth = 10;  // K
};

struct EvalReport {
    std::vector<double> cmc;  // cmc[k-1] = fraction with first match at rank <= k
    double mean_ap = 0.0;
    std::vector<double> per_query_ap;
    std::size_t evaluated_queries = 0;
    std::size_t skipped_queries = 0;  // no relevant gallery entry after exclusion
};

// Gallery indices ordered by ascending Euclidean distance to the query
// (float64 accumulation; ties broken by ascending gallery index). Entries
// matching the query's person AND camera are excluded first.
std::vector<std::size_t> rank(const LabeledEmbedding& query, const GalleryIndex& index,
                              bool exclude_same_camera = true);

// cmc[k-1] = fraction of queries whose first correct match has rank <= k.
// first_match_ranks are 1-based; 0 means "no correct match in the ranking".
std::vector<double> cmc(const std::vector<std::size_t>& first_match_ranks, std::size_t depth);

// AP = (1/R) * sum over relevant positions p of precision@p.
double average_precision(const std::vector<bool>& relevance);

// Full protocol: rank every query, skip queries with no valid match, and
// aggregate CMC and mean AP.
EvalReport evaluate(const std::vector<LabeledEmbedding>& queries, const GalleryIndex& index,
                    const EvalOptions& opt = {});

}  // namespace lat
