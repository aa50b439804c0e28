#include "lat/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace lat {

void GalleryIndex::add(const LabeledEmbedding& e) { add(e.vec, e.person_id, e.camera_id); }

void GalleryIndex::add(std::vector<float> vec, int person_id, int camera_id) {
    if (dim_ == 0) dim_ = vec.size();
    if (vec.size() != dim_) {
        throw ShapeError("GalleryIndex::add: embedding of dim " + std::to_string(vec.size()) +
                         " into index of dim " + std::to_string(dim_));
    }
    data_.insert(data_.end(), vec.begin(), vec.end());
    person_ids_.push_back(person_id);
    camera_ids_.push_back(camera_id);
}

std::vector<std::size_t> rank(const LabeledEmbedding& query, const GalleryIndex& index,
                              bool exclude_same_camera) {
    if (query.vec.size() != index.dim()) {
        throw ShapeError("rank: query dim " + std::to_string(query.vec.size()) +
                         " vs gallery dim " + std::to_string(index.dim()));
    }
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(index.size());
    for (std::size_t g = 0; g < index.size(); ++g) {
        if (exclude_same_camera && index.person_id(g) == query.person_id &&
            index.camera_id(g) == query.camera_id) {
            continue;
        }
        const float* row = index.row(g);
        double d2 = 0.0;
        for (std::size_t i = 0; i < index.dim(); ++i) {
            const double diff = static_cast<double>(query.vec[i]) - static_cast<double>(row[i]);
            d2 += diff * diff;
        }
        scored.emplace_back(d2, g);
    }
    if (scored.empty()) {
        throw NoValidGalleryError("rank: no gallery entries left for query (person " +
                                  std::to_string(query.person_id) + ", camera " +
                                  std::to_string(query.camera_id) + ")");
    }
    std::sort(scored.begin(), scored.end());
    std::vector<std::size_t> order;
    order.reserve(scored.size());
    for (const auto& [d, g] : scored) order.push_back(g);
    return order;
}

std::vector<double> cmc(const std::vector<std::size_t>& first_match_ranks, std::size_t depth) {
    if (depth < 1) throw Error("cmc: depth must be >= 1");
    std::vector<double> curve(depth, 0.0);
    if (first_match_ranks.empty()) return curve;
    for (std::size_t r : first_match_ranks) {
        if (r == 0) continue;  // no match anywhere: contributes 0 at every k
        for (std::size_t k = r; k <= depth; ++k) curve[k - 1] += 1.0;
    }
    for (auto& v : curve) v /= static_cast<double>(first_match_ranks.size());
    return curve;
}

double average_precision(const std::vector<bool>& relevance) {
    std::size_t total_relevant = 0;
    for (bool r : relevance) total_relevant += r ? 1 : 0;
    if (total_relevant == 0) {
        throw Error("average_precision: no relevant entries in ranking");
    }
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t p = 0; p < relevance.size(); ++p) {
        if (relevance[p]) {
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(p + 1);
        }
    }
    return ap / static_cast<double>(total_relevant);
}

EvalReport evaluate(const std::vector<LabeledEmbedding>& queries, const GalleryIndex& index,
                    const EvalOptions& opt) {
    EvalReport report;
    std::vector<std::size_t> first_ranks;
    for (const auto& q : queries) {
        const auto order = rank(q, index, opt.exclude_same_camera);
        std::vector<bool> relevance(order.size());
        std::size_t first = 0;
        bool any = false;
        for (std::size_t p = 0; p < order.size(); ++p) {
            relevance[p] = index.person_id(order[p]) == q.person_id;
            if (relevance[p] && !any) {
                first = p + 1;
                any = true;
            }
        }
        if (!any) {
            ++report.skipped_queries;  // identity absent from the gallery
            continue;
        }
        first_ranks.push_back(first);
        report.per_query_ap.push_back(average_precision(relevance));
        ++report.evaluated_queries;
    }
    report.cmc = cmc(first_ranks, opt.cmc_depth);
    double sum_ap = 0.0;
    for (double ap : report.per_query_ap) sum_ap += ap;
    report.mean_ap =
        report.per_query_ap.empty() ? 0.0 : sum_ap / static_cast<double>(report.per_query_ap.size());
    return report;
}

}  // namespace lat
